#  Copyright (c) 2024. VulBin Authors
"""
Run Log
-------

Structured JSON-lines log of one run, written to :code:`<output_dir>/run.log`.

Every record becomes one object with the keys :code:`ts`, :code:`level`, :code:`logger` and :code:`msg` plus the
:code:`extra` fields :code:`stage`, :code:`elapsed_s`, :code:`function_id` and :code:`artifact` when present.

.. code-block:: python

    handler = install_run_log('out')
    with stage_timer('decompile', artifact=artifact.short_hash):
        functions, graph = await decompile(artifact, cfg.decompiler)
    remove_run_log(handler)

*******************
Class Documentation
*******************
"""
import json
import logging
import os
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Optional

__all__ = ['EXTRA_FIELDS', 'JsonLinesFormatter', 'install_run_log', 'remove_run_log', 'stage_timer']

EXTRA_FIELDS = ('stage', 'elapsed_s', 'function_id', 'artifact')
"""record attributes copied into the log object when set"""


class JsonLinesFormatter(logging.Formatter):
    """Formats a record as one JSON object without trailing newline"""

    def format(self, record: logging.LogRecord) -> str:
        data = {
            'ts': datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'msg': record.getMessage(),
        }
        for field in EXTRA_FIELDS:
            val = getattr(record, field, None)
            if val is not None:
                data[field] = val
        if record.exc_info:
            data['exc'] = self.formatException(record.exc_info)
        return json.dumps(data, ensure_ascii=False)


def install_run_log(output_dir: str, level: int = logging.DEBUG) -> logging.Handler:
    """Attaches a JSON-lines file handler for :code:`<output_dir>/run.log` to the :code:`vulbin` logger

    :param output_dir: the run output directory, created if missing
    :param level: minimum level written to the file |default| :code:`logging.DEBUG`
    """
    os.makedirs(output_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(output_dir, 'run.log'), mode='a', encoding='utf-8')
    handler.setLevel(level)
    handler.setFormatter(JsonLinesFormatter())
    root = logging.getLogger('vulbin')
    root.addHandler(handler)
    if root.level == logging.NOTSET or root.level > level:
        root.setLevel(level)
    return handler


def remove_run_log(handler: logging.Handler):
    logging.getLogger('vulbin').removeHandler(handler)
    handler.close()


@contextmanager
def stage_timer(stage: str, logger: Optional[logging.Logger] = None, **extra):
    """Logs the wall clock duration of the enclosed block as :code:`elapsed_s`

    :param stage: name of the pipeline stage
    :param logger: logger to use |default| :code:`vulbin.pipeline`
    """
    logger = logger if logger is not None else logging.getLogger('vulbin.pipeline')
    start = time.perf_counter()
    status = 'failed'
    try:
        yield
        status = 'done'
    finally:
        elapsed = round(time.perf_counter() - start, 6)
        logger.info(f'stage {stage} {status} in {elapsed:.3f}s', extra={'stage': stage, 'elapsed_s': elapsed, **extra})
