#  Copyright (c) 2024. VulBin Authors
"""
Configuration
-------------

A run is configured by one JSON file. Every field has a default, the defaults select the fixture decompiler and the
mock model backend. The fixture decompiler needs :code:`decompiler.fixture_dir`, an installed decompiler is selected
with kind :code:`external_tool` and a command template.

.. code-block:: json

    {
        "decompiler": {"kind": "external_tool",
                       "command_template": "analyzeHeadless /tmp/proj p -import {input_path} -postScript Export.java {output_dir}",
                       "timeout_seconds": 900},
        "llm": {"backend": "http_api", "endpoint_url": "https://llm.example/v1/chat/completions",
                "model_tag": "gpt-4o", "api_key_env": "VULBIN_API_KEY"},
        "memory": {"summary_token_cap": 256, "strict_order": true},
        "reasoner": {"target_cwes": ["CWE-78", "CWE-134"], "k_distractors": 2},
        "output_dir": "out",
        "seed": 7
    }

Relative paths are resolved against the directory of the configuration file.
Command line flags :code:`--output`, :code:`--workers` and :code:`--seed` override the file.

*******************
Class Documentation
*******************
"""
import json
import os
from typing import Optional, List

from vulbin.helper import DEFAULT_TARGET_CWES, DEFAULT_DISTRACTOR_POOL, DECOMPILER_ENV_VAR, CWE_ID_PATTERN, canonical_json, sha256_hex
from vulbin.object.base import VulBinObject
from vulbin.type import DecompilerKind, LlmBackendKind, ConfigError

__all__ = ['DEFAULT_KB_DIR', 'DecompilerBackendConfig', 'LlmConfig', 'MemoryConfig', 'ReasonerConfig', 'RunConfig', 'load_config',
           'config_fingerprint']

DEFAULT_KB_DIR: str = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'kb')
"""Knowledge documents shipped with the package"""


class DecompilerBackendConfig(VulBinObject):
    kind: DecompilerKind = DecompilerKind.FIXTURE
    command_template: Optional[str] = None
    """external tool only, receives :code:`{input_path}` and :code:`{output_dir}`"""
    fixture_dir: Optional[str] = None
    """fixture only, directory with recorded decompiler output"""
    timeout_seconds: int = 600

    def effective_command(self) -> Optional[str]:
        """the command template, :const:`~vulbin.helper.DECOMPILER_ENV_VAR` takes precedence if set"""
        return os.environ.get(DECOMPILER_ENV_VAR) or self.command_template

    def validate(self):
        if self.timeout_seconds <= 0:
            raise ConfigError('decompiler.timeout_seconds has to be positive')
        if self.kind == DecompilerKind.EXTERNAL_TOOL:
            if self.fixture_dir is not None:
                raise ConfigError('decompiler.fixture_dir is only valid for kind fixture')
            if self.effective_command() is None:
                raise ConfigError(f'decompiler.command_template (or {DECOMPILER_ENV_VAR}) is required for kind external_tool')
        else:
            if self.command_template is not None:
                raise ConfigError('decompiler.command_template is only valid for kind external_tool')
            if self.fixture_dir is None:
                raise ConfigError('decompiler.fixture_dir is required for kind fixture')


class LlmConfig(VulBinObject):
    backend: LlmBackendKind = LlmBackendKind.MOCK
    endpoint_url: Optional[str] = None
    """chat completion endpoint, http_api only"""
    model_tag: str = 'mock-rules-v1'
    max_context_tokens: int = 16384
    max_reply_tokens: int = 1024
    """tokens reserved for the reply of every request"""
    temperature: float = 0.0
    max_retries: int = 3
    requests_per_minute: int = 60
    api_key_env: str = 'VULBIN_API_KEY'
    """name of the environment variable holding the credential, the credential itself is never stored"""
    request_timeout_seconds: int = 120
    record_path: Optional[str] = None
    """if set, every request hash and reply is appended to this JSON-lines file"""
    replay_path: Optional[str] = None
    """recorded session used by the replay backend"""

    def validate(self):
        if self.max_context_tokens <= 0 or self.max_reply_tokens <= 0:
            raise ConfigError('llm token limits have to be positive')
        if self.max_reply_tokens >= self.max_context_tokens:
            raise ConfigError('llm.max_reply_tokens has to be smaller than llm.max_context_tokens')
        if self.temperature < 0:
            raise ConfigError('llm.temperature must not be negative')
        if self.max_retries < 0:
            raise ConfigError('llm.max_retries must not be negative')
        if self.requests_per_minute <= 0:
            raise ConfigError('llm.requests_per_minute has to be positive')
        if self.backend == LlmBackendKind.HTTP_API and not self.endpoint_url:
            raise ConfigError('llm.endpoint_url is required for backend http_api')
        if self.backend == LlmBackendKind.REPLAY and not self.replay_path:
            raise ConfigError('llm.replay_path is required for backend replay')


class MemoryConfig(VulBinObject):
    store_path: Optional[str] = None
    """defaults to :code:`<output_dir>/archive.sqlite`"""
    summary_token_cap: int = 256
    max_retries: int = 2
    strict_order: bool = True
    """a function only becomes eligible once all its callees are terminal"""
    include_callers: bool = False
    """also offer caller summaries as context"""
    context_budget_tokens: int = 2048

    def validate(self):
        if self.summary_token_cap <= 0:
            raise ConfigError('memory.summary_token_cap has to be positive')
        if self.max_retries < 0:
            raise ConfigError('memory.max_retries must not be negative')
        if self.context_budget_tokens <= 0:
            raise ConfigError('memory.context_budget_tokens has to be positive')


class ReasonerConfig(VulBinObject):
    target_cwes: List[str] = list(DEFAULT_TARGET_CWES)
    k_distractors: int = 2
    distractor_pool: List[str] = list(DEFAULT_DISTRACTOR_POOL)
    kb_dir: str = DEFAULT_KB_DIR

    def validate(self):
        if len(self.target_cwes) == 0:
            raise ConfigError('reasoner.target_cwes must not be empty')
        for cwe in list(self.target_cwes) + list(self.distractor_pool):
            if not CWE_ID_PATTERN.match(cwe):
                raise ConfigError(f'invalid CWE id "{cwe}"')
        if self.k_distractors < 0:
            raise ConfigError('reasoner.k_distractors must not be negative')


class RunConfig(VulBinObject):
    decompiler: DecompilerBackendConfig
    llm: LlmConfig
    memory: MemoryConfig
    reasoner: ReasonerConfig
    output_dir: str = 'vulbin-out'
    seed: int = 0
    workers: int = 4

    def __init__(self, **kwargs):
        super(RunConfig, self).__init__(**kwargs)
        for name, cls in (('decompiler', DecompilerBackendConfig), ('llm', LlmConfig), ('memory', MemoryConfig),
                          ('reasoner', ReasonerConfig)):
            if getattr(self, name, None) is None:
                setattr(self, name, cls())

    @property
    def store_path(self) -> str:
        if self.memory.store_path is not None:
            return self.memory.store_path
        return os.path.join(self.output_dir, 'archive.sqlite')

    def validate(self):
        """
        :raises ~vulbin.type.ConfigError: if any value is out of range or inconsistent
        """
        self.decompiler.validate()
        self.llm.validate()
        self.memory.validate()
        self.reasoner.validate()
        if self.workers < 1:
            raise ConfigError('workers has to be at least 1')
        if self.seed < 0:
            raise ConfigError('seed has to be an unsigned integer')


_PATH_FIELDS = (('decompiler', 'fixture_dir'), ('memory', 'store_path'), ('reasoner', 'kb_dir'),
                ('llm', 'record_path'), ('llm', 'replay_path'))


def load_config(path: Optional[str] = None,
                output_dir: Optional[str] = None,
                workers: Optional[int] = None,
                seed: Optional[int] = None,
                validate: bool = True) -> RunConfig:
    """Loads a run configuration, applies flag overrides and validates the result.

    :param path: JSON configuration file, None uses all defaults |default| :code:`None`
    :param output_dir: overrides :code:`output_dir` |default| :code:`None`
    :param workers: overrides :code:`workers` |default| :code:`None`
    :param seed: overrides :code:`seed` |default| :code:`None`
    :param validate: run :const:`~vulbin.config.RunConfig.validate()` |default| :code:`True`
    :raises ~vulbin.type.ConfigError: if the file is missing, not valid JSON or contains invalid values
    """
    data = {}
    base_dir = os.getcwd()
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f'config file {path} does not exist')
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigError(f'could not read config file {path}: {e}') from e
        if not isinstance(data, dict):
            raise ConfigError(f'config file {path} has to contain a JSON object')
        base_dir = os.path.dirname(os.path.abspath(path))
    try:
        cfg = RunConfig(**data)
    except (TypeError, ValueError, AttributeError) as e:
        raise ConfigError(f'invalid configuration: {e}') from e
    for section, field in _PATH_FIELDS:
        obj = getattr(cfg, section)
        val = getattr(obj, field, None)
        if val is not None and section + '.' + field in _flatten_keys(data):
            setattr(obj, field, os.path.join(base_dir, val))
    if 'output_dir' in data:
        cfg.output_dir = os.path.join(base_dir, cfg.output_dir)
    if output_dir is not None:
        cfg.output_dir = output_dir
    if workers is not None:
        cfg.workers = workers
    if seed is not None:
        cfg.seed = seed
    if validate:
        cfg.validate()
    return cfg


def _flatten_keys(data: dict) -> List[str]:
    keys = []
    for k, v in data.items():
        if isinstance(v, dict):
            keys.extend(f'{k}.{k2}' for k2 in v.keys())
        keys.append(k)
    return keys


def config_fingerprint(cfg: RunConfig) -> str:
    """SHA-256 over the settings that influence analysis results.

    Paths, the worker count and credential names are left out, so moving a run or changing its parallelism keeps the
    fingerprint."""
    data = {
        'decompiler': {'kind': cfg.decompiler.kind.value, 'timeout_seconds': cfg.decompiler.timeout_seconds},
        'llm': {'backend': cfg.llm.backend.value, 'model_tag': cfg.llm.model_tag, 'max_context_tokens': cfg.llm.max_context_tokens,
                'max_reply_tokens': cfg.llm.max_reply_tokens, 'temperature': cfg.llm.temperature, 'max_retries': cfg.llm.max_retries},
        'memory': {'summary_token_cap': cfg.memory.summary_token_cap, 'max_retries': cfg.memory.max_retries,
                   'strict_order': cfg.memory.strict_order, 'include_callers': cfg.memory.include_callers,
                   'context_budget_tokens': cfg.memory.context_budget_tokens},
        'reasoner': {'target_cwes': list(cfg.reasoner.target_cwes), 'k_distractors': cfg.reasoner.k_distractors,
                     'distractor_pool': list(cfg.reasoner.distractor_pool)},
        'seed': cfg.seed,
    }
    return sha256_hex(canonical_json(data))
