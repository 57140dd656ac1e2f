import copy
import math

import numpy as np
import pytest

from lslolab import numcore as nc
from lslolab.data import build_dataset, heldout_pairs
from lslolab.errors import ConfigError
from lslolab.pruning import PruneSchedule
from lslolab.trainer import (
    Adam,
    RunConfig,
    TrainingError,
    batch_loss,
    beam_decode,
    evaluate,
    greedy_decode,
    make_batches,
    method_label,
    run_phase,
    steps_per_epoch,
    train,
    translate,
)


def _pairs(corpus, n=4, dirs=None):
    return build_dataset(corpus, directions=dirs, pairs_per_direction=n, seed=0)


def test_zero_lr_leaves_weights_bitwise(tiny_model, tiny_corpus):
    before = tiny_model.state_bytes()
    cfg = RunConfig(phase="ft_all", epochs=2, learning_rate=0.0, batch_size=3)
    train(cfg, tiny_model, None, _pairs(tiny_corpus), tiny_corpus)
    assert tiny_model.state_bytes() == before


def test_adam_skips_params_without_grad():
    a = nc.Tensor(np.ones(3), requires_grad=True)
    b = nc.Tensor(np.ones(3), requires_grad=True)
    opt = Adam([a, b], lr=0.1)
    a.grad = np.ones(3)
    opt.step()
    assert np.all(a.data < 1) and np.all(b.data == 1)
    assert opt.t == [1, 0]


def test_single_pair_memorized(tiny_model, tiny_corpus):
    pair = _pairs(tiny_corpus, n=1, dirs=[("h1", "m1")])
    cfg = RunConfig(phase="ft_all", epochs=60, learning_rate=0.01, batch_size=1)
    log = train(cfg, tiny_model, None, pair, tiny_corpus)
    assert log.epochs[-1]["train_loss"] < log.epochs[0]["train_loss"] * 0.1
    assert evaluate(tiny_model, None, tiny_corpus, pair)[("h1", "m1")] == 100.0


def test_untrained_model_scores_low(tiny_model, tiny_corpus):
    scores = evaluate(tiny_model, None, tiny_corpus, heldout_pairs(tiny_corpus))
    assert np.mean(list(scores.values())) < 50


def test_step_count_and_batches(tiny_corpus):
    pairs = _pairs(tiny_corpus, n=5)
    assert steps_per_epoch(pairs, 2) == 6 * 3
    batches = make_batches(pairs, 2, np.random.default_rng(0))
    assert len(batches) == 18
    assert all(len({(p.src_lang, p.tgt_lang) for p in b}) == 1 for b in batches)
    assert sorted(map(id, sum(batches, []))) == sorted(map(id, pairs))


def test_optimizer_steps_recorded(tiny_model, tiny_corpus):
    pairs = _pairs(tiny_corpus, n=5)
    cfg = RunConfig(phase="ft_all", epochs=3, learning_rate=1e-3, batch_size=2)
    log = train(cfg, tiny_model, None, pairs, tiny_corpus)
    assert log.optimizer_steps == 3 * 18
    assert [r["steps"] for r in log.epochs] == [18, 18, 18]


def test_adapter_phase_freezes_base(tiny_model, tiny_corpus):
    before = tiny_model.state_bytes()
    cfg = RunConfig(phase="lslo_finetune", epochs=2, learning_rate=1e-2, pairs_per_direction=4)
    res = run_phase(cfg, tiny_model, tiny_corpus)
    assert tiny_model.state_bytes() == before
    assert res.runlog.header["trainable_elements"] == res.stack.trainable_count()
    assert any(np.any(f.B.data != 0) for _, _, f in res.stack.items())


def test_routing_isolation(tiny_model, tiny_corpus):
    # only h1->m1 data: encoder adapters of m1/v1 and decoder adapters of h1/v1 never move
    pairs = _pairs(tiny_corpus, n=4, dirs=[("h1", "m1")])
    cfg = RunConfig(phase="lslo_finetune", epochs=2, learning_rate=1e-2)
    res = run_phase(cfg, tiny_model, tiny_corpus, dataset=pairs)
    for site, code, f in res.stack.items():
        used = code == ("h1" if site.side == "encoder" else "m1")
        assert bool(np.any(f.B.data != 0)) == used, (site.key, code)


def test_ft_all_rejects_missing_stack(tiny_model, tiny_corpus):
    with pytest.raises(ConfigError):
        train(RunConfig(phase="lslo_finetune", epochs=1), tiny_model, None, _pairs(tiny_corpus), tiny_corpus)
    with pytest.raises(ConfigError):
        train(RunConfig(phase="ft_all", epochs=1), tiny_model, None, [], tiny_corpus)


def test_nan_surfaces_as_training_error(tiny_model, tiny_corpus):
    tiny_model.params[sorted(tiny_model.params)[0]].data[...] = np.nan
    with pytest.raises(TrainingError, match="epoch 1 step 1"):
        train(RunConfig(phase="ft_all", epochs=1), tiny_model, None, _pairs(tiny_corpus), tiny_corpus)


def test_beam_one_is_greedy(tiny_model, tiny_corpus):
    pairs = heldout_pairs(tiny_corpus)[:10]
    beams = [beam_decode(tiny_model, None, tiny_corpus, p, width=1) for p in pairs]
    assert beams == translate(tiny_model, None, tiny_corpus, pairs, beam=1)
    with pytest.raises(ValueError):
        greedy_decode(tiny_model, None, tiny_corpus, pairs)
    assert len(translate(tiny_model, None, tiny_corpus, pairs, beam=3)) == 10


def test_runlog_deterministic(tiny_corpus, tiny_model):
    cfg = RunConfig(
        phase="lslo_finetune", epochs=3, learning_rate=1e-2, pairs_per_direction=4,
        schedule=PruneSchedule(0.5, 1, 1, 3), eval_every=1,
    )
    a = run_phase(cfg, copy.deepcopy(tiny_model), tiny_corpus)
    b = run_phase(cfg, copy.deepcopy(tiny_model), tiny_corpus)
    assert a.runlog.to_jsonl() == b.runlog.to_jsonl()
    assert a.stack.mask_bytes() == b.stack.mask_bytes()
    assert "bleu" in a.runlog.epochs[0] and "prune" in a.runlog.epochs[1]


def test_weight_learning_trace(tiny_model, tiny_corpus):
    cfg = RunConfig(phase="weight_learn", epochs=2, learning_rate=1e-2, pairs_per_direction=3)
    res = run_phase(cfg, tiny_model, tiny_corpus)
    for rec in res.runlog.epochs:
        for _, _, ws, wt in rec["wl_weights"]:
            assert ws >= 0 and wt >= 0 and math.isclose(ws + wt, 1.0, abs_tol=1e-12)


def test_batch_loss_finite(tiny_model, tiny_corpus):
    loss = batch_loss(tiny_model, None, tiny_corpus, _pairs(tiny_corpus, n=2, dirs=[("v1", "h1")]))
    assert np.isfinite(loss.item()) and loss.item() > 0


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(phase="nope")
    with pytest.raises(ConfigError):
        RunConfig(phase="lslo_finetune", epochs=10, schedule=PruneSchedule(0.5))
    with pytest.raises(ConfigError):
        RunConfig(phase="ft_all", beam=0)


def test_method_labels():
    assert method_label(RunConfig(phase="ft_all")) == "Ft-all"
    assert method_label(RunConfig(phase="seed_pretrain")) == "Pre-trained"
    cfg = RunConfig(phase="lslo_finetune", rank_policy="2;2;8", index_strategy="given", schedule=PruneSchedule(0.9))
    assert method_label(cfg) == "2;2;8+WL+GPS(0.9)"
    assert method_label(RunConfig(phase="lslo_finetune", placement="only_fc")) == "8+SRC [only_fc]"


def test_content_hash_tracks_fields():
    a = RunConfig(phase="ft_all")
    assert a.content_hash() == RunConfig(phase="ft_all").content_hash()
    assert a.content_hash() != RunConfig(phase="ft_all", seed=1).content_hash()
