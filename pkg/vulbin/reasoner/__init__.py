#  Copyright (c) 2024. VulBin Authors
"""
Reasoner
--------

Classifies enhanced functions against CWE categories. Every question names one target CWE plus distractors, shows
worked examples from the knowledge documents and the summaries of already analyzed callees, and demands a yes or no
answer per CWE reasoned through functionality, root cause and impact.

.. toctree::
   :hidden:
   :maxdepth: 1

   vulbin.reasoner.knowledge
   vulbin.reasoner.prompt
   vulbin.reasoner.classifier
   vulbin.reasoner.report

"""

__all__ = []
