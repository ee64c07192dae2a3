#  Copyright (c) 2024. VulBin Authors
"""
Memory
------

The analysis queue and the archival store. The queue hands out every function of a binary exactly once, callees before
callers. The store keeps the summary of every analyzed function and packs the summaries relevant for the next function
into a token budget.

.. code-block:: python

    store = ArchivalStore('out/archive.sqlite')
    queue = VulBinQueue(store, max_retries=2)
    queue.enqueue_all(graph)
    entry = await queue.next()
    context = store.fetch_context(entry.function_id, budget_tokens=2048)

.. toctree::
   :hidden:
   :maxdepth: 1

   vulbin.memory.store
   vulbin.memory.queue

"""
from vulbin.memory.store import ArchivalStore
from vulbin.memory.queue import VulBinQueue

__all__ = ['ArchivalStore', 'VulBinQueue']
