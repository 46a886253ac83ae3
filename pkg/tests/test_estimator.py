import numpy as np
import pytest
import torch

from slicebridge.estimator import (OracleEstimator, TrainableEstimator,
                                   TrainingConfig, gradient_check,
                                   load_checkpoint, make_training_example,
                                   objective_value, predict_with_sourcecond,
                                   save_checkpoint, train)
from slicebridge.phantom import PhantomConfig, generate_pair
from slicebridge.schedule import ScheduleParams, build_schedule
from slicebridge.style_key import compute_style_key
from slicebridge.volume import extract_subvolume


@pytest.fixture(scope="module")
def table():
    return build_schedule(ScheduleParams(T=1000, s=1.0))


@pytest.fixture(scope="module")
def pair():
    return generate_pair(PhantomConfig(size=(12, 12, 12), seed=21))


@pytest.fixture(scope="module")
def key(pair):
    return compute_style_key(pair[1])


def stacks(pair, i, N=1):
    source, target = pair
    return (extract_subvolume(target, i, N).data.astype(np.float64),
            extract_subvolume(source, i, N).data.astype(np.float64))


# ---------------------------------------------------------------------------
# oracle


def test_oracle_t0_zero(table, pair, key):
    oracle = OracleEstimator.for_pair(table, pair[1])
    x0, _ = stacks(pair, 4)
    out = oracle.predict(x0, key, 0, center_index=4)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_oracle_tT_bridge_end(table, pair, key):
    oracle = OracleEstimator.for_pair(table, pair[1])
    x0, y = stacks(pair, 4)
    out = oracle.predict(y, key, 1000, center_index=4)
    np.testing.assert_allclose(out, y - x0, atol=1e-12)


def test_oracle_forward_identity(table, pair, key):
    # x_t built by the forward bridge with known noise: the oracle output
    # minus the drift term recovers sqrt(delta_t) * eps
    oracle = OracleEstimator.for_pair(table, pair[1])
    rng = np.random.default_rng(5)
    x0, y = stacks(pair, 6)
    for t in (17, 250, 499, 830):
        eps = rng.standard_normal(x0.shape)
        m_t, d_t = table.m[t], table.delta[t]
        x_t = (1 - m_t) * x0 + m_t * y + np.sqrt(d_t) * eps
        out = oracle.predict(x_t, key, t, center_index=6)
        np.testing.assert_allclose(out - m_t * (y - x0), np.sqrt(d_t) * eps,
                                   atol=1e-6)


def test_oracle_unknown_volume_id(table, pair):
    oracle = OracleEstimator(table)
    oracle.register("a", pair[1])
    with pytest.raises(LookupError):
        oracle.select("nope")
    oracle.select("a")


def test_oracle_is_objective_minimizer(table, pair, key):
    oracle = OracleEstimator.for_pair(table, pair[1])
    rng = np.random.default_rng(6)
    examples, centers = [], []
    for _ in range(20):
        i = int(rng.integers(0, pair[1].Z))
        examples.append(make_training_example(pair, key, table, rng, i=i))
        centers.append(i)
    assert objective_value(oracle, examples, table,
                           center_indices=centers) <= 1e-10


# ---------------------------------------------------------------------------
# training examples


def test_example_forced_t_T(table, pair, key):
    rng = np.random.default_rng(7)
    ex = make_training_example(pair, key, table, rng, i=3, t=1000)
    x0, y = stacks(pair, 3)
    np.testing.assert_allclose(ex.xt_stack, y, atol=1e-6)
    np.testing.assert_allclose(ex.target_stack, y - x0, atol=1e-6)


def test_example_noiseless_bridge_point(table, pair, key):
    rng = np.random.default_rng(8)
    t = 400
    x0, y = stacks(pair, 5)
    ex = make_training_example(pair, key, table, rng, i=5, t=t,
                               eps=np.zeros_like(x0))
    m_t = table.m[t]
    np.testing.assert_allclose(ex.xt_stack, (1 - m_t) * x0 + m_t * y, atol=1e-6)
    np.testing.assert_allclose(ex.target_stack, m_t * (y - x0), atol=1e-6)


def test_example_monte_carlo_moments(table, pair, key):
    rng = np.random.default_rng(9)
    t = 500
    n = 10_000
    x0, y = stacks(pair, 5)
    m_t = table.m[t]
    vals = np.empty(n)
    resid = np.empty(n)
    for k in range(n):
        ex = make_training_example(pair, key, table, rng, i=5, t=t)
        vals[k] = ex.xt_stack.mean()
        resid[k] = (ex.xt_stack.astype(np.float64)
                    - (1 - m_t) * x0 - m_t * y)[0, 0, 0]
    mean_true = (1 - m_t) * x0.mean() + m_t * y.mean()
    assert abs(vals.mean() - mean_true) / abs(mean_true) < 0.02
    assert abs(resid.var() - table.delta[t]) / table.delta[t] < 0.02


# ---------------------------------------------------------------------------
# trainable estimator


def test_parameter_budget():
    est = TrainableEstimator()
    assert est.parameter_count() < 5_000_000


def test_zero_init_output_and_shape(table, pair, key):
    est = TrainableEstimator(seed=1)
    x0, y = stacks(pair, 4)
    out = predict_with_sourcecond(est, x0, y, key, 10)
    assert out.shape == x0.shape
    assert np.all(out == 0.0)  # zero-initialized final layer


def test_eval_mode_deterministic(table, pair, key):
    est = TrainableEstimator(seed=2)
    _randomize_head(est)
    x0, y = stacks(pair, 4)
    a = predict_with_sourcecond(est, x0, y, key, 300)
    b = predict_with_sourcecond(est, x0, y, key, 300)
    np.testing.assert_array_equal(a, b)


def test_shape_mismatch_rejected(table, pair, key):
    est = TrainableEstimator(seed=2)
    x0, y = stacks(pair, 4)
    with pytest.raises(ValueError):
        predict_with_sourcecond(est, x0, y[:2], key, 10)


def _randomize_head(est, scale=0.05, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in est.net.final.parameters():
            p.copy_(torch.randn(p.shape, generator=g) * scale)


def test_gradient_check(table, pair, key):
    est = TrainableEstimator(seed=3)
    _randomize_head(est)  # zero head would make most gradients vanish
    rng = np.random.default_rng(10)
    ex = make_training_example(pair, key, table, rng)
    assert gradient_check(est, ex, n_params=10) < 1e-4


def test_zero_iterations_noop(table, pair, key, tmp_path):
    est = TrainableEstimator(seed=4)
    before = {k: v.clone() for k, v in est.net.state_dict().items()}
    losses = train(est, [(pair[0], pair[1], key)], table,
                   TrainingConfig(iterations=0, seed=0))
    assert losses == []
    after = est.net.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)


def test_training_reduces_loss(table, pair, key):
    est = TrainableEstimator(seed=5)
    losses = train(est, [(pair[0], pair[1], key)], table,
                   TrainingConfig(iterations=120, batch_size=8, lr=1e-3, seed=0))
    assert np.mean(losses[-20:]) < 0.5 * np.mean(losses[:20])


def test_training_reproducible(table, pair, key):
    runs = []
    for _ in range(2):
        est = TrainableEstimator(seed=6)
        losses = train(est, [(pair[0], pair[1], key)], table,
                       TrainingConfig(iterations=10, batch_size=4, seed=1))
        runs.append((losses, est.net.state_dict()))
    assert runs[0][0] == runs[1][0]
    assert all(torch.equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


def test_weighted_loss_option(table, pair, key):
    est = TrainableEstimator(seed=7)
    losses = train(est, [(pair[0], pair[1], key)], table,
                   TrainingConfig(iterations=5, batch_size=4, seed=2,
                                  weighted_loss=True))
    assert len(losses) == 5
    assert all(np.isfinite(losses))


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_identical(table, pair, key, tmp_path):
    est = TrainableEstimator(seed=8)
    _randomize_head(est)
    path = tmp_path / "model.bvck"
    save_checkpoint(est, path, meta={"note": "test"})
    est2, meta = load_checkpoint(path)
    assert meta == {"note": "test"}
    x0, y = stacks(pair, 4)
    a = predict_with_sourcecond(est, x0, y, key, 123)
    b = predict_with_sourcecond(est2, x0, y, key, 123)
    np.testing.assert_array_equal(a, b)


def test_checkpoint_header(tmp_path):
    est = TrainableEstimator(seed=9)
    path = tmp_path / "m.bvck"
    save_checkpoint(est, path)
    assert path.read_bytes()[:4] == b"BVCK"


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.bvck"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    from slicebridge.estimator import CheckpointFormatError
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_preserves_no_style_arch(tmp_path):
    est = TrainableEstimator(use_style=False, seed=10)
    path = tmp_path / "ns.bvck"
    save_checkpoint(est, path)
    est2, _ = load_checkpoint(path)
    assert est2.use_style is False
