import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lslolab.errors import ConfigError, DegenerateInputError
from lslolab.estimation import (
    SCORE_COLUMNS,
    check_uniform_rank,
    importance_score,
    language_specific_estimate,
    layerwise_cross_language_estimate,
    pearson_correlation,
    resource_correlation,
)
from lslolab.lslo import LanguageSpec, build_adapter_stack
from lslolab.model import ModelConfig
from lslolab.pruning import GradualPruner, PruneSchedule, make_plan
from oracles import oracle_importance, oracle_pearson, oracle_permutation_pvalue

CFG = ModelConfig(num_layers=2, d_model=8, num_heads=2, d_ffn=12, vocab_size=20, max_len=8)
LANGS = [LanguageSpec("h", "High", 1000), LanguageSpec("m", "Medium", 100), LanguageSpec("v", "VeryLow", 10)]


def test_score_examples():
    assert importance_score(64, 40, 0.5) == 8.0
    assert importance_score(64, 24, 0.5) == -8.0
    assert importance_score(64, 32, 0.5) == 0.0
    with pytest.raises(ValueError):
        importance_score(4, 5, 0.5)


@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.floats(0, 1))
def test_score_is_linear_and_matches_oracle(t1, p1, t2, p2, ratio):
    p1, p2 = min(p1, t1), min(p2, t2)
    a = importance_score(t1, p1, ratio)
    assert a == oracle_importance(t1, p1, ratio)
    joint = importance_score(t1 + t2, p1 + p2, ratio)
    assert a + importance_score(t2, p2, ratio) == pytest.approx(joint, abs=1e-9)


def _finished_pruner(grouping, seed=0, policy=None):
    stack = build_adapter_stack(CFG, LANGS, policy, seed=seed)
    rng = np.random.default_rng(seed)
    for _, _, f in stack.items():
        f.B.data[...] = rng.normal(size=f.B.shape)
    sched = PruneSchedule(0.7, 2, 8, 12)
    pruner = GradualPruner(stack, sched, make_plan(stack, grouping))
    for e in range(1, 13):
        pruner.on_epoch_start(e)
    return pruner


@pytest.mark.parametrize("grouping", ["layerwise_cross_language", "language_specific_global"])
def test_group_conservation(grouping):
    pruner = _finished_pruner(grouping)
    est = layerwise_cross_language_estimate if grouping.startswith("layer") else language_specific_estimate
    table = est(pruner)
    sums = table.group_sums()
    assert len(sums) == len(pruner.plan)
    for g, s in sums.items():
        assert -1.0 < s <= 0.0
        rows = [r for r in table.rows if r.group_id == g]
        assert math.fsum(r.score for r in rows) == pytest.approx(s, abs=1e-9)
    for r in table.rows:
        assert r.score == oracle_importance(r.total, r.pruned, r.ratio)


def test_layerwise_rows_and_csv():
    table = layerwise_cross_language_estimate(_finished_pruner("layerwise_cross_language"))
    n_sites = 2 * (5 + 8)
    assert len(table.rows) == len(LANGS) * n_sites
    lines = table.to_csv("seed=0").splitlines()
    assert lines[0] == "# seed=0" and lines[1] == ",".join(SCORE_COLUMNS)
    assert table.heatmap_csv().splitlines()[0] == "language,kind,mean_score"
    assert set(table.language_means()) == {"h", "m", "v"}


def test_estimators_check_grouping_and_rank():
    with pytest.raises(ConfigError):
        layerwise_cross_language_estimate(_finished_pruner("language_specific_global"))
    with pytest.raises(ConfigError):
        check_uniform_rank(build_adapter_stack(CFG, LANGS, "2;2;8", seed=0))


def test_single_site_single_language_score_is_small():
    stack = build_adapter_stack(CFG, LANGS[:1], seed=0, sites=[next(iter(build_adapter_stack(CFG, LANGS[:1]).sites()))])
    for _, _, f in stack.items():
        f.B.data[...] = np.arange(f.B.size).reshape(f.B.shape) + 1.0
    pruner = GradualPruner(stack, PruneSchedule(0.7, 2, 8, 12), make_plan(stack, "language_specific_global"))
    for e in range(1, 13):
        pruner.on_epoch_start(e)
    (row,) = language_specific_estimate(pruner).rows
    assert -1.0 < row.score <= 0.0


def test_pearson_examples():
    xs = np.arange(1.0, 13.0)
    r, p = pearson_correlation(xs, 2 * xs + 1)
    assert r == 1.0 and p == pytest.approx(1 / 10001)
    r, _ = pearson_correlation(xs, -xs)
    assert r == -1.0
    r, _ = pearson_correlation([1, 2, 3, 4], [2, 1, 4, 3])
    assert abs(r - 0.6) <= 1e-12


def test_pearson_degenerate():
    with pytest.raises(DegenerateInputError):
        pearson_correlation([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateInputError):
        pearson_correlation([1, 2], [1, 2])


@given(
    st.lists(st.floats(-100, 100), min_size=3, max_size=30).filter(lambda v: max(v) - min(v) > 1e-3),
    st.integers(0, 10**6),
)
def test_pearson_matches_oracle(xs, seed):
    ys = np.random.default_rng(seed).normal(size=len(xs))
    r, p = pearson_correlation(xs, ys, permutations=200, seed=seed)
    assert abs(r - oracle_pearson(xs, ys.tolist())) <= 1e-9
    assert 0.0 < p <= 1.0


@given(st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_invariance(scale, shift):
    xs = np.array([0.3, 1.7, 2.2, 4.9, 5.5, 8.1])
    ys = np.array([1.0, 0.2, 2.5, 2.4, 4.8, 3.9])
    r0, p0 = pearson_correlation(xs, ys)
    r1, p1 = pearson_correlation(xs * scale + shift, ys)
    assert abs(r0 - r1) <= 1e-12
    assert abs(p0 - p1) <= 0.02


def test_permutation_pvalue_close_to_exact():
    xs, ys = [1, 2, 3, 4, 5, 6], [2, 1, 4, 3, 6, 5]
    _, p = pearson_correlation(xs, ys)
    assert abs(p - oracle_permutation_pvalue(xs, ys)) < 0.01


def test_resource_correlation_uses_log_size():
    pruner = _finished_pruner("layerwise_cross_language")
    table = layerwise_cross_language_estimate(pruner)
    r, p = resource_correlation(table, {l.code: l.corpus_size for l in LANGS})
    means = table.language_means()
    xs = [math.log10(1000), math.log10(100), math.log10(10)]
    assert abs(r - oracle_pearson(xs, [means["h"], means["m"], means["v"]])) <= 1e-9
