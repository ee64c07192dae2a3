#  Copyright (c) 2024. VulBin Authors
import json
import os

import pytest

from vulbin.config import DEFAULT_KB_DIR, RunConfig, DecompilerBackendConfig, LlmConfig, MemoryConfig
from vulbin.llm.client import LlmClient
from vulbin.reasoner.knowledge import load_knowledge_base
from tests.util import SAMPLE_DIR, build_elf


@pytest.fixture(scope='session')
def kb():
    return load_knowledge_base(DEFAULT_KB_DIR)


@pytest.fixture
def mock_client():
    return LlmClient(LlmConfig())


@pytest.fixture
def sample_dir():
    return SAMPLE_DIR


@pytest.fixture
def sample_binary(tmp_path):
    """an unstripped ELF named :code:`sample`, the fixture decompiler resolves it to the golden sample directory"""
    return build_elf(str(tmp_path / 'sample'))


@pytest.fixture
def fixture_root(tmp_path):
    """fixture decompiler root holding a copy of the golden sample as :code:`sample/`"""
    root = tmp_path / 'decompiled'
    root.mkdir()
    target = root / 'sample'
    target.mkdir()
    for name in os.listdir(SAMPLE_DIR):
        with open(os.path.join(SAMPLE_DIR, name), 'rb') as src:
            (target / name).write_bytes(src.read())
    return str(root)


@pytest.fixture
def make_config(tmp_path, fixture_root):
    def factory(output: str = 'out', **kwargs) -> RunConfig:
        cfg = RunConfig(decompiler=DecompilerBackendConfig(kind='fixture', fixture_dir=kwargs.pop('fixture_dir', fixture_root)),
                        llm=LlmConfig(**kwargs.pop('llm', {})),
                        memory=MemoryConfig(**kwargs.pop('memory', {})),
                        output_dir=str(tmp_path / output),
                        **kwargs)
        cfg.validate()
        return cfg
    return factory


@pytest.fixture
def config_file(tmp_path, fixture_root):
    """JSON configuration selecting the fixture decompiler and the mock backend"""
    path = tmp_path / 'vulbin.json'
    path.write_text(json.dumps({'decompiler': {'kind': 'fixture', 'fixture_dir': fixture_root},
                                'llm': {'backend': 'mock'},
                                'seed': 3}), encoding='utf-8')
    return str(path)
