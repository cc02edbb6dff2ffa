import math

import numpy as np
import pytest

from srdd import autograd as ag
from srdd.autograd import Tensor
from srdd.data import DegradationSpec, ImageDataset
from srdd.train import (NumericError, TrainConfig, l1_loss, load_config, load_state, lr_at, new_state,
                        parameter_digest, save_state, train, train_step)


# ------------------------------------------------------------------ schedule

def test_full_scale_schedule():
    cfg = TrainConfig(total_iters=400_000)
    assert lr_at(cfg, "main", 0) == 2e-4 and lr_at(cfg, "gen", 0) == 5e-3
    assert lr_at(cfg, "main", 250_000) == pytest.approx(1e-4)
    assert lr_at(cfg, "main", 199_999) == pytest.approx(2e-4)
    assert lr_at(cfg, "main", 399_999) == pytest.approx(2e-4 / 16)
    assert lr_at(cfg, "gen", 50_000) == pytest.approx(2.5e-3)
    assert lr_at(cfg, "gen", 359_999) == pytest.approx(5e-3 / 32)
    assert lr_at(cfg, "gen", 360_000) == 0.0
    assert cfg.freeze_iter == 360_000 and cfg.shuffle_cutoff == 1_000
    assert [cfg.event_iter(r) for r in cfg.milestones_main] == [200_000, 300_000, 350_000, 375_000]
    assert [cfg.event_iter(r) for r in cfg.milestones_gen] == [50_000, 100_000, 200_000, 300_000, 350_000]


def _simulate(cfg, group):
    """Step through the run, halving when a milestone is reached."""
    base = cfg.lr_main if group == "main" else cfg.lr_gen
    ratios = cfg.milestones_main if group == "main" else cfg.milestones_gen
    events = {cfg.event_iter(r) for r in ratios}
    lr, out = base, []
    for it in range(cfg.total_iters):
        if it in events:
            lr *= 0.5
        out.append(0.0 if group == "gen" and it >= cfg.freeze_iter else lr)
    return out


@pytest.mark.parametrize("total", [2000, 20_000, 1234])
def test_closed_form_matches_simulation_and_ratios(total):
    cfg = TrainConfig(total_iters=total)
    for group in ("main", "gen"):
        sim = _simulate(cfg, group)
        assert all(lr_at(cfg, group, it) == sim[it] for it in range(total))
    big = TrainConfig(total_iters=400_000)
    for ratio in (0.3, 0.6, 0.8, 0.89, 0.95):
        it_small, it_big = int(ratio * total), int(ratio * 400_000)
        assert lr_at(cfg, "main", it_small) == lr_at(big, "main", it_big)
        assert lr_at(cfg, "gen", it_small) == lr_at(big, "gen", it_big)


def test_gen_milestones_precede_freeze_under_scaling():
    for total in (100, 2000, 400_000):
        cfg = TrainConfig(total_iters=total)
        assert cfg.event_iter(cfg.milestones_gen[-1]) <= cfg.freeze_iter


@pytest.mark.parametrize("bad", [(0.5, 0.5), (0.0, 0.5), (0.6, 0.4), (0.5, 1.0)])
def test_milestones_validated(bad):
    with pytest.raises(ValueError):
        TrainConfig(milestones_main=bad)


def test_lr_at_unknown_group():
    with pytest.raises(ValueError):
        lr_at(TrainConfig(), "other", 0)


def test_l1_loss_values():
    gt = Tensor(np.random.default_rng(0).random((2, 3, 4, 4)).astype(np.float32))
    assert l1_loss(gt, gt).item() == 0
    assert l1_loss(Tensor(gt.data + 0.5), gt).item() == pytest.approx(0.5)


# -------------------------------------------------------------------- config

def test_load_config_flattens_tables(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('total_iters = 100\nbatch_size = 4\n[degradation]\nkernel = "area"\nscale = 8\n'
                 '[ablation]\ncompensation = false\n')
    cfg = load_config(p, {"seed": 9})
    assert (cfg.total_iters, cfg.batch_size, cfg.kernel, cfg.scale, cfg.compensation, cfg.seed) == \
        (100, 4, "area", 8, False, 9)


def test_load_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("learning_rate = 1\n")
    with pytest.raises(ValueError, match="learning_rate"):
        load_config(p)


def test_config_dict_roundtrip():
    cfg = TrainConfig(total_iters=77, milestones_main=(0.2, 0.4), seed=5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# ------------------------------------------------------------------- training

def _dataset(cfg):
    return ImageDataset(cfg.train_dir, DegradationSpec(cfg.kernel, cfg.scale))


def test_parameter_groups_partition(tiny_config):
    m = new_state(tiny_config).model
    gen, main = m.generator_parameters(), m.main_parameters()
    assert not set(gen) & set(main)
    assert set(gen) | set(main) == {k for k, _ in m.named_parameters()}
    assert all(k.startswith("generator.") for k in gen)


def test_seed_fixed_run_is_bitwise_reproducible(tiny_config):
    ds = _dataset(tiny_config)
    a = train(tiny_config, ds)
    b = train(tiny_config, ds)
    assert a.loss_history == b.loss_history
    assert parameter_digest(a.model) == parameter_digest(b.model)
    assert a.model.dictionary.atoms.tobytes() == b.model.dictionary.atoms.tobytes()


def test_resume_equals_uninterrupted(tiny_config, tmp_path):
    ds = _dataset(tiny_config)
    full = train(tiny_config, ds)
    # stop inside the shuffle-free, pre-freeze stretch and once after the freeze
    for k in (5, tiny_config.freeze_iter + 1):
        part = train(tiny_config, ds, stop_at=k)
        save_state(part, tmp_path / f"s{k}.srdd")
        resumed = train(tiny_config, ds, state=load_state(tmp_path / f"s{k}.srdd"))
        assert resumed.iteration == full.iteration
        assert parameter_digest(resumed.model) == parameter_digest(full.model)
        assert resumed.loss_history == full.loss_history[k:]


def test_generator_frozen_after_freeze_iter(tiny_config):
    ds = _dataset(tiny_config)
    state = train(tiny_config, ds, stop_at=tiny_config.freeze_iter)
    assert not state.model.frozen
    train_step(state, ds)
    assert state.model.frozen
    digest = parameter_digest(state.model, "generator.")
    main_digest = parameter_digest(state.model)
    train_step(state, ds)
    assert parameter_digest(state.model, "generator.") == digest
    assert parameter_digest(state.model) != main_digest


def test_frozen_model_grad_store_has_no_generator_entries(tiny_config):
    ds = _dataset(tiny_config)
    state = new_state(tiny_config)
    state.model.freeze_dictionary()
    from srdd.data import sample_batch
    lr, hr = sample_batch(ds, 2, 8, np.random.default_rng(0))
    atoms, code = state.model.dictionary_tensors()
    loss = l1_loss(state.model(Tensor(lr), atoms, code).output, Tensor(hr))
    store = ag.backward(loss, dict(state.model.named_parameters()))
    assert not any(k.startswith("generator.") for k in store)
    assert any(k.startswith("encoder.") and np.abs(v).sum() > 0 for k, v in store.items())


def test_generator_gets_gradients_before_freeze(tiny_config):
    ds = _dataset(tiny_config)
    state = new_state(tiny_config)
    from srdd.data import sample_batch
    lr, hr = sample_batch(ds, 2, 8, np.random.default_rng(0))
    atoms, code = state.model.dictionary_tensors()
    loss = l1_loss(state.model(Tensor(lr), atoms, code).output, Tensor(hr))
    store = ag.backward(loss, dict(state.model.named_parameters()))
    assert np.abs(store["generator.emit.weight"]).sum() > 0


def test_log_and_checkpoints_written(tiny_config, tmp_path):
    from dataclasses import replace
    cfg = replace(tiny_config, checkpoint_every=6)
    train(cfg, _dataset(cfg), ImageDataset(cfg.val_dir, DegradationSpec()), out_dir=tmp_path / "o")
    lines = (tmp_path / "o" / "train.log").read_text().splitlines()
    assert len(lines) == cfg.total_iters
    fields = [ln.split() for ln in lines]
    assert all(len(f) == 5 for f in fields)
    assert [int(f[0]) for f in fields] == list(range(cfg.total_iters))
    vals = [f[4] for f in fields]
    assert vals[5] != "-" and vals[11] != "-" and vals[0] == "-"
    assert float(fields[-1][3]) == 0.0  # generator lr after the freeze
    names = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert names == ["ckpt_0000006.srdd", "ckpt_0000012.srdd", "final.srdd", "train.log"]


def test_loss_finite_for_first_iterations(tiny_config):
    from dataclasses import replace
    state = train(replace(tiny_config, total_iters=100), _dataset(tiny_config), stop_at=30)
    assert all(math.isfinite(v) for v in state.loss_history)


def test_batch_norm_off_trains(tiny_config):
    from dataclasses import replace
    state = train(replace(tiny_config, batch_norm=False), _dataset(tiny_config))
    assert all(math.isfinite(v) for v in state.loss_history)


def test_non_finite_loss_raises_with_diagnostics(tiny_config):
    ds = _dataset(tiny_config)
    state = new_state(tiny_config)
    state.model.predictor.head.bias.data[0] = np.nan
    with pytest.raises(NumericError, match="iteration 0.*lr_main.*grad_norm"):
        train_step(state, ds)


def test_empty_dataset_rejected(tiny_config):
    class Empty:
        def __len__(self):
            return 0
    with pytest.raises(ValueError):
        train(tiny_config, Empty())
