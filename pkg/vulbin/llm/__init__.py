#  Copyright (c) 2024. VulBin Authors
"""
Model Client
------------

Provider agnostic access to chat completion models with token accounting, retries, rate limiting and record/replay.

All stages share one :const:`~vulbin.llm.client.LlmClient`. Which backend answers is pure configuration:

.. list-table::
   :header-rows: 1

   * - Backend
     - Description
   * - :const:`~vulbin.llm.http.HttpApiBackend`
     - Any chat completion HTTP endpoint, credential taken from an environment variable.
   * - :const:`~vulbin.llm.mock.MockBackend`
     - Deterministic rule table, the default. Used by all tests.
   * - :const:`~vulbin.llm.replay.ReplayBackend`
     - Replies recorded by an earlier run with :code:`llm.record_path` set.

Token Counting
==============

Budgets are measured with :const:`~vulbin.llm.base.count_tokens()`, one token for every started 4 bytes of UTF-8.
This is vendor independent and errs on the conservative side for common tokenizers.

.. toctree::
   :hidden:
   :maxdepth: 1

   vulbin.llm.base
   vulbin.llm.client
   vulbin.llm.http
   vulbin.llm.mock
   vulbin.llm.replay

"""
from vulbin.llm.base import count_tokens, request_hash
from vulbin.llm.client import LlmClient, create_llm_backend

__all__ = ['count_tokens', 'request_hash', 'LlmClient', 'create_llm_backend']
