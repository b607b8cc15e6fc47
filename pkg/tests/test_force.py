import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import correlate

from compoundeye.force import (
    PARAM_ORDER,
    ForceDataset,
    ForceNet,
    LinearOracle,
    TrainingError,
    WeightFileError,
    eval_rmse,
    grad_check,
    load_dataset,
    load_weights,
    mse_loss,
    param_shapes,
    save_dataset,
    save_weights,
    train,
    write_loss_csv,
)
from compoundeye.synthgen import force_dataset


@pytest.fixture(scope="module")
def small_data():
    grids, forces = force_dataset(400, seed=2, grid_noise=0.1)
    return ForceDataset.split(grids, forces, 0.7, seed=0)


# --- architecture and forward ----------------------------------------------------------------

def test_param_shapes():
    s = param_shapes()
    assert s["w1"] == (16, 2, 3, 3) and s["w2"] == (32, 16, 3, 3)
    assert s["w3"] == (32 * 36, 64) and s["w4"] == (64, 32) and s["w5"] == (32, 16) and s["w6"] == (16, 3)
    assert list(s) == list(PARAM_ORDER)


def test_zero_net_outputs_zero(rng):
    net = ForceNet.zeros()
    assert np.array_equal(net.predict(rng.normal(size=(5, 6, 6, 2))), np.zeros((5, 3)))


def test_hand_built_network():
    """One passthrough channel summed by the FC stack: Fx = scale * sum(relu(dx)), Fz = bias."""
    net = ForceNet.zeros(input_scale=0.1)
    p = net.params
    p["w1"][0, 0, 1, 1] = 1.0
    p["w2"][0, 0, 1, 1] = 1.0
    p["w3"][:36, 0] = 1.0
    p["w4"][0, 0] = 1.0
    p["w5"][0, 0] = 1.0
    p["w6"][0, 0] = 1.0
    p["b6"][2] = 0.5
    grid = np.ones((6, 6, 2))
    assert np.allclose(net.predict(grid), [[3.6, 0.0, 0.5]], atol=1e-12)
    grid[..., 0] = -1.0  # negative passthrough is clipped by the ReLU
    assert np.allclose(net.predict(grid), [[0.0, 0.0, 0.5]], atol=1e-12)


def test_first_conv_matches_correlation(rng):
    """Layer-1 pre-activation equals zero-padded 2D correlation summed over input channels."""
    net = ForceNet.init(3)
    grid = rng.normal(size=(6, 6, 2))
    x = ForceNet.as_input(grid) * net.input_scale
    _, cache = net.forward(ForceNet.as_input(grid), keep=True)
    z = cache[0][2][0]  # (36, 16)
    w, b = net.params["w1"], net.params["b1"]
    for c in range(16):
        ref = sum(correlate(x[0, ci], w[c, ci], mode="constant", cval=0.0) for ci in range(2)) + b[c]
        assert np.allclose(z[:, c].reshape(6, 6), ref, atol=1e-12)


def test_final_layer_scaling(rng):
    net = ForceNet.init(1)
    g = rng.normal(size=(4, 6, 6, 2))
    base = net.predict(g)
    scaled = net.copy()
    scaled.params["w6"] *= 3.0
    scaled.params["b6"] *= 3.0
    assert np.allclose(scaled.predict(g), 3.0 * base, rtol=1e-12, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.5, 4.0))
def test_forward_piecewise_linear_positive_homogeneous(seed, c):
    """With zero biases the ReLU network is positively homogeneous: f(c x) = c f(x)."""
    net = ForceNet.init(seed)
    g = np.random.default_rng(seed).normal(size=(2, 6, 6, 2))
    assert np.allclose(net.predict(c * g), c * net.predict(g), rtol=1e-10, atol=1e-12)


def test_forward_deterministic(rng):
    net = ForceNet.init(5)
    g = rng.normal(size=(3, 6, 6, 2))
    assert np.array_equal(net.predict(g), net.predict(g))


def test_non_finite_input_rejected():
    g = np.zeros((6, 6, 2))
    g[2, 2, 0] = np.nan
    with pytest.raises(ValueError):
        ForceNet.init(0).predict(g)
    with pytest.raises(ValueError):
        ForceNet.init(0).predict(np.zeros((5, 5, 2)))


# --- gradients -------------------------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1])
def test_grad_check_random_net(seed):
    rng = np.random.default_rng(seed)
    net = ForceNet.init(seed)
    assert grad_check(net, rng.normal(size=(4, 6, 6, 2)), rng.normal(size=(4, 3)), 1e-5, seed=seed) <= 1e-6


def test_grad_check_zero_net_zero_input():
    assert grad_check(ForceNet.zeros(), np.zeros((6, 6, 2)), np.zeros(3), 1e-5, n_params=50) == 0.0


def test_grad_check_epsilon_range():
    with pytest.raises(ValueError):
        grad_check(ForceNet.zeros(), np.zeros((6, 6, 2)), np.zeros(3), 1e-2)


def test_loss_gradient_directional(rng):
    """Directional derivative of the loss along a random direction matches the gradient dot product."""
    net = ForceNet.init(7)
    x = ForceNet.as_input(rng.normal(size=(6, 6, 6, 2)))
    y = rng.normal(size=(6, 3))
    _, g = mse_loss(net, x, y)
    d = {k: rng.normal(size=v.shape) for k, v in net.params.items()}
    eps = 1e-6
    up, dn = net.copy(), net.copy()
    for k in PARAM_ORDER:
        up.params[k] += eps * d[k]
        dn.params[k] -= eps * d[k]
    num = (mse_loss(up, x, y, False)[0] - mse_loss(dn, x, y, False)[0]) / (2 * eps)
    ana = sum(float(np.sum(g[k] * d[k])) for k in PARAM_ORDER)
    assert num == pytest.approx(ana, rel=1e-5)


# --- dataset and training --------------------------------------------------------------------

def test_split_disjoint_exhaustive_reproducible():
    g, f = np.zeros((100, 6, 6, 2)), np.zeros((100, 3))
    a = ForceDataset.split(g, f, 0.7, seed=3)
    b = ForceDataset.split(g, f, 0.7, seed=3)
    assert len(a.train_idx) == 70 and len(a.test_idx) == 30
    assert not set(a.train_idx) & set(a.test_idx)
    assert sorted(np.concatenate([a.train_idx, a.test_idx])) == list(range(100))
    assert np.array_equal(a.train_idx, b.train_idx)
    with pytest.raises(ValueError):
        ForceDataset.split(g, f[:5])


def test_one_epoch_reduces_loss(small_data):
    res = train(ForceNet.init(0), small_data, lr=1e-3, batch=32, epochs=1)
    assert res.train_loss[1] < res.train_loss[0]
    assert len(res.val_loss) == 2


def test_training_deterministic(small_data):
    a = train(ForceNet.init(0), small_data, lr=0.01, epochs=2, seed=4)
    b = train(ForceNet.init(0), small_data, lr=0.01, epochs=2, seed=4)
    for k in PARAM_ORDER:
        assert np.array_equal(a.net.params[k], b.net.params[k])
    assert a.train_loss == b.train_loss


def test_lr_zero_leaves_weights_bit_identical(small_data):
    net = ForceNet.init(0)
    res = train(net, small_data, lr=0.0, epochs=2)
    for k in PARAM_ORDER:
        assert np.array_equal(res.net.params[k], net.params[k])


def test_training_does_not_mutate_input_net(small_data):
    net = ForceNet.init(0)
    before = {k: v.copy() for k, v in net.params.items()}
    train(net, small_data, lr=0.01, epochs=1)
    assert all(np.array_equal(before[k], net.params[k]) for k in PARAM_ORDER)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(small_data):
    with pytest.raises(TrainingError):
        train(ForceNet.init(0), small_data, lr=1e6, epochs=3)


def test_empty_training_split():
    ds = ForceDataset(np.zeros((4, 6, 6, 2)), np.zeros((4, 3)), np.array([], int), np.arange(4))
    with pytest.raises(TrainingError):
        train(ForceNet.init(0), ds)


def test_weight_decay_shrinks_weights(small_data):
    a = train(ForceNet.init(0), small_data, lr=0.01, epochs=2)
    b = train(ForceNet.init(0), small_data, lr=0.01, epochs=2, weight_decay=0.5)
    assert np.linalg.norm(b.net.params["w3"]) < np.linalg.norm(a.net.params["w3"])


def test_trained_net_zero_grid_baseline(trained_force):
    _, res, _ = trained_force
    f = res.net.predict(np.zeros((6, 6, 2)))[0]
    assert np.linalg.norm(f) <= 0.05


# --- evaluation ------------------------------------------------------------------------------

def test_rmse_perfect_predictor(small_data):
    g, f = small_data.test()
    assert np.array_equal(eval_rmse(lambda _: f, g, f), np.zeros(3))


def test_rmse_zero_predictor_is_label_rms(small_data):
    """Zero prediction gives sqrt(var + mean^2) per axis (the std when labels are centred)."""
    g, f = small_data.test()
    r = eval_rmse(lambda x: np.zeros((len(x), 3)), g, f)
    assert np.allclose(r, np.sqrt(f.std(axis=0) ** 2 + f.mean(axis=0) ** 2), rtol=1e-12)
    c = f - f.mean(axis=0)
    assert np.allclose(eval_rmse(lambda x: np.zeros((len(x), 3)), g, c), c.std(axis=0), rtol=1e-12)


def test_linear_oracle_exact_on_linear_data(rng):
    g = rng.normal(size=(200, 6, 6, 2))
    coef = rng.normal(size=(73, 3))
    y = g.reshape(200, -1) @ coef[:-1] + coef[-1]
    oracle = LinearOracle.fit(g, y)
    assert np.allclose(oracle.coef, coef, atol=1e-9)
    assert np.allclose(eval_rmse(oracle.predict, g, y), 0.0, atol=1e-9)


# --- files -----------------------------------------------------------------------------------

def test_weights_round_trip(tmp_path):
    net = ForceNet.init(11, input_scale=0.25)
    save_weights(net, tmp_path / "w.bin")
    back = load_weights(tmp_path / "w.bin")
    assert back.input_scale == 0.25 and back.seed == 11
    for k in PARAM_ORDER:
        assert np.array_equal(back.params[k], net.params[k])


def test_weights_bad_files(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nope")
    with pytest.raises(WeightFileError):
        load_weights(tmp_path / "x.bin")
    save_weights(ForceNet.init(0), tmp_path / "w.bin")
    data = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-8])
    with pytest.raises(WeightFileError):
        load_weights(tmp_path / "t.bin")


def test_dataset_round_trip(tmp_path):
    g, f = force_dataset(5, seed=1)
    save_dataset(tmp_path / "ds", g, f)
    g2, f2 = load_dataset(tmp_path / "ds")
    assert np.array_equal(f2, f)
    assert np.array_equal(g2, g.astype(np.float32).astype(np.float64))
    assert (tmp_path / "ds" / "labels.csv").read_text().splitlines()[0] == "index,fx,fy,fz"


def test_loss_csv(tmp_path, small_data):
    res = train(ForceNet.init(0), small_data, lr=1e-3, epochs=2)
    write_loss_csv(res, tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 4
