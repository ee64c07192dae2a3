#  Copyright (c) 2024. VulBin Authors
"""
Objects used by this Library
----------------------------

.. toctree::
   :hidden:
   :maxdepth: 1

   vulbin.object.base
   vulbin.object.binary
   vulbin.object.analysis
   vulbin.object.evaluation

.. autosummary::

   vulbin.object.base
   vulbin.object.binary
   vulbin.object.analysis
   vulbin.object.evaluation

"""

__all__ = []
