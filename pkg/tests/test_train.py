import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcast.accounting import (
    count_parameters,
    encoder_param_count,
    estimate_flops,
    mlp_param_count,
    model_param_count,
)
from trajcast.autodiff import MlpSpec, ModelParams
from trajcast.checkpoint import Checkpoint, blob_path, load_checkpoint, quantize, save_checkpoint
from trajcast.config import TrainConfig, from_mapping, load_config, parse_config_text
from trajcast.encoder import EncoderConfig
from trajcast.errors import ConfigError, ContractError, DataError, DimensionError, NumericError
from trajcast.model import ModelConfig, TrajectoryModel
from trajcast.optim import OptimizerState, adamw_step, cosine_lr
from trajcast.train import (
    Dataset,
    evaluate,
    evaluate_model,
    prepare_dataset,
    split_validation,
    train,
    window_seed,
)

SMALL = dict(d_spatial=8, d_temporal=8, d_social=8, d_scene=8, d_latent=4, mlp_hidden=16,
             rw_steps=4, n_heads=2, d_ffn=16, d_z=4, d_future=8, d_ytilde=8, t_obs=4, t_pred=6)


def tiny_config(mode="deterministic", **kw):
    base = dict(epochs=2, synth_kind="constant_velocity", synth_n=4, synth_agents=2,
                grid=2, val_fraction=0.25, k_eval=3, k_train=2)
    base.update(kw)
    return TrainConfig(model=ModelConfig(mode=mode, **SMALL), **base)


# --- optimizer and schedule ---------------------------------------------------

def test_adamw_single_step_examples():
    p = {"w": np.array([1.0])}
    adamw_step(p, {"w": np.array([1.0])}, OptimizerState.for_params(p))
    assert abs(p["w"][0] - (1 - 1e-3 * 5e-4 - 1e-3 / (1 + 1e-8))) < 1e-12
    assert abs(p["w"][0] - 0.9989995) < 1e-9
    p = {"w": np.array([0.0])}
    adamw_step(p, {"w": np.array([-2.0])}, OptimizerState.for_params(p, weight_decay=0.0))
    assert p["w"][0] == pytest.approx(2e-3 / (2 + 1e-8), abs=1e-15)


def test_adamw_zero_gradient_and_quadratic_convergence():
    p = {"w": np.array([0.7, -2.0])}
    adamw_step(p, {"w": np.zeros(2)}, OptimizerState.for_params(p, weight_decay=0.0))
    np.testing.assert_array_equal(p["w"], [0.7, -2.0])
    p = {"t": np.array([1.0])}
    state = OptimizerState.for_params(p, lr=1e-2)
    adamw_step(p, {"t": 2 * p["t"]}, state)
    assert p["t"][0] ** 2 < 1.0
    for _ in range(999):
        adamw_step(p, {"t": 2 * p["t"]}, state)
    assert abs(p["t"][0]) < 1e-3


def reference_adamw(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, wd=5e-4):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps) - lr * wd * theta
    return theta


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_adamw_matches_scalar_reference(theta, grads):
    p = {"w": np.array([theta])}
    st_ = OptimizerState.for_params(p)
    for g in grads:
        adamw_step(p, {"w": np.array([g])}, st_)
    assert p["w"][0] == pytest.approx(reference_adamw(theta, grads), abs=1e-12)


def test_adamw_rejects_nan_and_shape_mismatch():
    p = {"w": np.ones(2)}
    with pytest.raises(NumericError, match="'w'"):
        adamw_step(p, {"w": np.array([1.0, np.nan])}, OptimizerState.for_params(p))
    with pytest.raises(ContractError):
        adamw_step(p, {"w": np.ones(3)}, OptimizerState.for_params(p))


def test_cosine_lr_identities():
    assert cosine_lr(0, 100, 1e-3, 1e-5) == 1e-3
    assert abs(cosine_lr(100, 100, 1e-3, 1e-5) - 1e-5) < 1e-12
    assert abs(cosine_lr(50, 100, 1e-3, 1e-5) - (1e-3 + 1e-5) / 2) < 1e-12
    assert cosine_lr(3, 0, 1e-3, 1e-5) == 1e-3
    with pytest.raises(ContractError):
        cosine_lr(101, 100, 1e-3, 1e-5)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 500), st.data())
def test_cosine_lr_is_monotone_and_bounded(total, data):
    t = data.draw(st.integers(0, total - 1))
    a, b = cosine_lr(t, total, 1e-3, 1e-5), cosine_lr(t + 1, total, 1e-3, 1e-5)
    assert 1e-5 - 1e-18 <= b <= a <= 1e-3


# --- configuration ---------------------------------------------------------------

def test_config_text_round_trip():
    cfg = tiny_config(lr_max=2e-3, augment=True)
    back = from_mapping(parse_config_text(cfg.to_text()))
    assert back == cfg


def test_config_parse_errors():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match=":2"):
        parse_config_text("a = 1\nnonsense\n")
    with pytest.raises(ConfigError):
        from_mapping({"no_such_key": "1"})
    with pytest.raises(ConfigError):
        from_mapping({"epochs": "many"})
    with pytest.raises(ConfigError):
        TrainConfig(lr_min=1.0, lr_max=0.1)
    with pytest.raises(ConfigError):
        TrainConfig(penalty="parabolic", penalty_alpha=1.0, penalty_beta=2.0)
    with pytest.raises(ConfigError):
        TrainConfig(train_sample_from="both")


def test_load_config_overrides_and_relative_paths(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# training\nepochs = 7\nseed = 3\nmode = det\ndata = scenes/m.txt\n")
    cfg = load_config(p, seed=9, mode="stoch", epochs=None)
    assert cfg.epochs == 7 and cfg.seed == 9 and cfg.mode == "stochastic"
    assert cfg.data == str(tmp_path / "scenes/m.txt")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


# --- checkpoints -----------------------------------------------------------------

def sample_checkpoint(dtype="<f4"):
    rng = np.random.default_rng(0)
    arrays = {"a.w": quantize(rng.normal(size=(3, 2)), dtype), "b": quantize(rng.normal(size=4), dtype),
              "s": quantize(np.array(1.5), dtype)}
    return Checkpoint({"epochs": "3", "seed": "0"}, arrays, {"step": 5}, {"val.ade": 0.1},
                      ["epoch 1"], dtype)


@pytest.mark.parametrize("dtype", ["<f4", "<f8"])
def test_checkpoint_round_trip(tmp_path, dtype):
    ck = sample_checkpoint(dtype)
    path = save_checkpoint(ck, tmp_path / "m.ckpt")
    back = load_checkpoint(path)
    assert back.config == ck.config and back.log == ck.log and back.dtype == dtype
    assert back.metrics["val.ade"] == 0.1 and back.state["step"] == "5"
    for name, a in ck.arrays.items():
        assert back.arrays[name].shape == a.shape
        assert np.array_equal(back.arrays[name], a)
    assert path.read_text().startswith("trajcast-checkpoint\nversion = 1\n")
    assert blob_path(path).stat().st_size == sum(a.size for a in ck.arrays.values()) * int(dtype[-1])


def test_checkpoint_corruption_is_a_data_error(tmp_path):
    path = save_checkpoint(sample_checkpoint(), tmp_path / "m.ckpt")
    blob = blob_path(path)
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(DataError):
        load_checkpoint(path)
    path.write_text(path.read_text().replace("version = 1", "version = 99"))
    with pytest.raises(DataError):
        load_checkpoint(path)
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "nothing.ckpt")


def test_quantize_is_float32_rounding():
    x = np.array([1 / 3, 1e-40, 2.0])
    q = quantize(x, "<f4")
    assert q.dtype == np.float64 and np.array_equal(q, x.astype(np.float32).astype(np.float64))


# --- parameter accounting ------------------------------------------------------------

def test_accounting_examples():
    assert mlp_param_count([4, 8]) == 40
    assert mlp_param_count([4, 8, 1]) == 49
    assert encoder_param_count(EncoderConfig(64, 4, 128)) == 33472
    p = ModelParams()
    p.init_mlp("m", MlpSpec.hidden(5, 7, 3), np.random.default_rng(0))
    assert count_parameters(p) == mlp_param_count([5, 7, 3])


@pytest.mark.parametrize("mode", ["deterministic", "stochastic"])
@pytest.mark.parametrize("extra", [{}, {"generator_condition": False}, {"coord_dim": 4}])
def test_model_count_matches_instantiated(mode, extra):
    cfg = ModelConfig(mode=mode, **{**SMALL, **extra})
    assert count_parameters(TrajectoryModel(cfg)) == model_param_count(cfg)


def test_flops_grow_with_agents_and_samples():
    m = TrajectoryModel(ModelConfig(mode="stochastic", **SMALL))
    f1 = estimate_flops(m, (1, 4))
    assert 0 < f1 < estimate_flops(m, (3, 4)) < estimate_flops(m, (3, 4), k=20)


# --- data preparation and training -------------------------------------------------------

def test_split_validation_takes_trailing_windows():
    items = list(range(10))
    train_, val = split_validation(items, 0.25)
    assert train_ == list(range(7)) and val == [7, 8, 9]
    assert split_validation(items, 0.0) == (items, [])


def test_prepare_synthetic_dataset():
    ds = prepare_dataset(tiny_config())
    assert len(ds.train) == 3 and len(ds.val) == 1 and len(ds.test) == 4
    assert all(w.scene_latents.shape == (4, 4) for w in ds.train + ds.val + ds.test)
    with pytest.raises(ConfigError):
        prepare_dataset(tiny_config(grid=3))


def test_window_seed_depends_on_start_frame():
    ds = prepare_dataset(tiny_config())
    seeds = {window_seed(0, w) for w in ds.test}
    assert len(seeds) == len(ds.test)


def test_zero_epochs_returns_initial_model():
    cfg = tiny_config(epochs=0)
    res = train(cfg, prepare_dataset(cfg))
    assert res.log == [] and res.best_epoch == 0
    assert "val.ade" in res.checkpoint.metrics


@pytest.mark.parametrize("mode", ["deterministic", "stochastic"])
def test_training_is_byte_reproducible(tmp_path, mode):
    out = []
    for run in ("a", "b"):
        cfg = tiny_config(mode, out=str(tmp_path / run), augment=True, accumulate=2)
        train(cfg, prepare_dataset(cfg))
        ck = tmp_path / run / "model.ckpt"
        out.append((ck.read_bytes(), blob_path(ck).read_bytes()))
    assert out[0] == out[1]


def test_training_reduces_loss_and_writes_artifacts(tmp_path):
    cfg = tiny_config(epochs=6, out=str(tmp_path), lr_max=3e-3)
    res = train(cfg, prepare_dataset(cfg))
    assert res.log[-1]["loss"] < res.log[0]["loss"]
    assert (tmp_path / "train_log.txt").read_text().count("\n") == 6
    assert (tmp_path / "val_metrics.txt").read_text().startswith("ade ")


def test_stored_metrics_reproduce_after_reload(tmp_path):
    for mode in ("deterministic", "stochastic"):
        cfg = tiny_config(mode, out=str(tmp_path / mode))
        ds = prepare_dataset(cfg)
        res = train(cfg, ds)
        again = evaluate(tmp_path / mode / "model.ckpt", ds.val)
        for k, v in again.values().items():
            assert float(res.checkpoint.metrics[f"val.{k}"]) == v


def test_nan_loss_aborts_with_last_good_checkpoint(tmp_path, monkeypatch):
    cfg = tiny_config(epochs=3, out=str(tmp_path))
    ds = prepare_dataset(cfg)
    real = TrajectoryModel.objective
    calls = []

    def poisoned(self, *args, **kw):
        calls.append(1)
        loss = real(self, *args, **kw)
        return loss * math.nan if len(calls) > len(ds.train) else loss

    monkeypatch.setattr(TrajectoryModel, "objective", poisoned)
    with pytest.raises(NumericError, match="epoch 1") as err:
        train(cfg, ds)
    ck = err.value.checkpoint
    assert ck.state["aborted"] == "true" and len(ck.log) == 1
    saved = load_checkpoint(tmp_path / "last_good.ckpt")
    for name, a in ck.arrays.items():
        assert np.array_equal(saved.arrays[name], a)


def test_training_input_validation():
    cfg = tiny_config()
    ds = prepare_dataset(cfg)
    with pytest.raises(DataError):
        train(cfg, Dataset([], ds.val, ds.test))
    with pytest.raises(DataError):
        train(cfg, Dataset([replace(ds.train[0], scene_latents=None)], [], []))
    with pytest.raises(ConfigError):
        train(tiny_config(), Dataset([replace(w, obs=np.tile(w.obs, 2), future=np.tile(w.future, 2))
                                      for w in ds.train], [], []))


def test_evaluate_model_contracts():
    cfg = tiny_config()
    ds = prepare_dataset(cfg)
    model = TrajectoryModel(cfg.model, seed=0)
    with pytest.raises(ContractError):
        evaluate_model(model, ds.test, 5)
    r = evaluate_model(model, ds.test, 1)
    assert r.n_samples_evaluated == 8 and r.min_ade_k == r.ade
    box = TrajectoryModel(ModelConfig(mode="deterministic", coord_dim=4, **SMALL), seed=0)
    with pytest.raises(DimensionError):
        evaluate_model(box, ds.test, 1)


def test_training_can_sample_from_prior():
    logs = {}
    for src in ("posterior", "prior"):
        cfg = tiny_config("stochastic", epochs=1, train_sample_from=src)
        logs[src] = train(cfg, prepare_dataset(cfg)).log[0]["loss"]
    assert np.isfinite(logs["prior"]) and logs["prior"] != logs["posterior"]
