import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("lab", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")

from lslolab.data import CorpusSpec, generate_corpus  # noqa: E402
from lslolab.lslo import LanguageSpec  # noqa: E402
from lslolab.model import ModelConfig, build_model  # noqa: E402

TINY_LANGS = (
    LanguageSpec("h1", "High", 200),
    LanguageSpec("m1", "Medium", 60),
    LanguageSpec("v1", "VeryLow", 5),
)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_corpus(CorpusSpec(languages=TINY_LANGS, num_sets=30, base_vocab=6, min_len=2, max_len=4), seed=3)


@pytest.fixture
def tiny_model(tiny_corpus):
    cfg = ModelConfig(num_layers=1, d_model=8, num_heads=2, d_ffn=12, vocab_size=tiny_corpus.vocab_size, max_len=7)
    return build_model(cfg, seed=1)


MICRO_CONFIG = {
    "seed": 0,
    "out": "unused",
    "corpus": {
        "num_sets": 40,
        "base_vocab": 8,
        "min_len": 2,
        "max_len": 4,
        "noise": 0.1,
        "languages": [
            {"code": "h1", "resource_type": "High", "corpus_size": 100},
            {"code": "h2", "resource_type": "High", "corpus_size": 100},
            {"code": "v1", "resource_type": "VeryLow", "corpus_size": 2},
        ],
    },
    "model": {"num_layers": 1, "d_model": 8, "num_heads": 2, "d_ffn": 12},
    "phases": {
        "seed_pretrain": {"epochs": 2, "total_pairs": 60},
        "weight_learn": {"epochs": 1, "pairs_per_direction": 3},
        "ft_all": {"epochs": 2, "learning_rate": 0.001, "pairs_per_direction": 3},
        "lslo_finetune": {
            "epochs": 4,
            "learning_rate": 0.01,
            "pairs_per_direction": 3,
            "rank_policy": "2;2;8",
            "index_strategy": "wl",
            "gps": {"P": 0.9, "E": 1, "k": 2, "T": 4},
            "prune_scope": ["High"],
        },
        "estimate_layerwise": {"epochs": 4, "pairs_per_direction": 3, "gps": {"P": 0.7, "E": 1, "k": 2, "T": 4}},
        "estimate_langspec": {"epochs": 4, "pairs_per_direction": 3, "gps": {"P": 0.7, "E": 1, "k": 2, "T": 4}},
    },
    "evaluate": {"beam": 1, "max_per_direction": 4},
}


@pytest.fixture
def micro_config(tmp_path):
    import copy

    import yaml

    def write(**overrides):
        doc = copy.deepcopy(MICRO_CONFIG)
        doc.update(overrides)
        path = tmp_path / "micro.yaml"
        path.write_text(yaml.safe_dump(doc))
        return path

    return write


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            ok, detail = results[n]
            terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
