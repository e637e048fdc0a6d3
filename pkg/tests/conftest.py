import numpy as np
import pytest

from c2lab import datagen
from c2lab.datagen import FlowScript, Seg


def simple_script(**kwargs) -> FlowScript:
    """Handshake + one small exchange + FIN close, overridable per test."""
    defaults = dict(
        client=("10.0.0.2", 40001),
        server=("203.0.113.5", 443),
        segments=[
            Seg("c2s", 300, 5_000, push=True),
            Seg("s2c", 0, 2_000),
            Seg("s2c", 500, 3_000, push=True),
            Seg("c2s", 0, 4_000),
        ],
    )
    defaults.update(kwargs)
    return FlowScript(**defaults)


@pytest.fixture
def script():
    return simple_script()


@pytest.fixture(scope="session")
def small_corpus():
    cfg = datagen.PcapCorpusConfig(n_benign=8, n_malicious=8, seed=3)
    scripts = datagen.random_flow_scripts(cfg)
    return scripts, datagen.gen_pcap(scripts)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
