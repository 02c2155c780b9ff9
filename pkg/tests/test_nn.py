import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivnn.errors import DimensionMismatch, LengthMismatch
from ivnn.nn import (MlpParams, MlpShape, flatten, forward, forward_signal, forward_windows, init_params,
                     jacobian_windows, load_params, param_jacobian, save_params, unflatten)
from ivnn.signals import Signal, delay_matrix, derivative_basis_matrix

TS = 1e-3
FULL = MlpShape((3, 10, 10, 1), "tanh", derivative_basis_matrix(TS, [0.25, 0.5, 1.0]))


def random_params(shape, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return unflatten(scale * rng.standard_normal(shape.n_phi), shape)


def test_n_phi_full_architecture():
    assert FULL.n_phi == 10 * 3 + 10 + 10 * 10 + 10 + 1 * 10 + 1 == 161


def test_canonical_ordering():
    shape = MlpShape((2, 3, 1))
    phi = unflatten(np.arange(shape.n_phi, dtype=float), shape)
    assert phi.weights[0].tolist() == [[0, 1], [2, 3], [4, 5]]
    assert phi.biases[0].tolist() == [6, 7, 8]
    assert phi.weights[1].tolist() == [[9, 10, 11]] and phi.biases[1].tolist() == [12]
    # row 3, column 1 of W0 in 1-based terms
    assert FULL.weight_index(0, 2, 0) == 6
    with pytest.raises(IndexError):
        FULL.weight_index(0, 10, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_flatten_unflatten_identity(seed):
    v = np.random.default_rng(seed).standard_normal(FULL.n_phi)
    assert np.array_equal(flatten(unflatten(v, FULL)), v)
    phi = init_params(FULL, seed)
    back = unflatten(flatten(phi), FULL)
    for a, b in zip(phi.weights + phi.biases, back.weights + back.biases):
        assert np.array_equal(a, b)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        unflatten(np.zeros(5), FULL)
    with pytest.raises(DimensionMismatch):
        MlpParams(FULL, (np.zeros((3, 3)),), (np.zeros(3),))


def test_zero_network_and_output_bias():
    z = unflatten(np.zeros(FULL.n_phi), FULL)
    assert forward(z, [0.3, -2.0, 5.0]) == 0.0
    v = np.zeros(FULL.n_phi)
    v[-1] = 1.7
    assert forward(unflatten(v, FULL), [9.0, 1.0, -4.0]) == 1.7
    assert np.all(forward_signal(z, Signal(np.ones(20), TS)).values == 0)
    with pytest.raises(DimensionMismatch):
        forward(z, [1.0, 2.0])


def test_forward_matches_straight_line_code():
    phi = random_params(FULL, 4)
    T = FULL.basis
    W0, W1, W2 = phi.weights
    b0, b1, b2 = phi.biases
    x = T @ np.array([1.0, 0.0, 0.0])
    h0 = [np.tanh(sum(W0[i, j] * x[j] for j in range(3)) + b0[i]) for i in range(10)]
    h1 = [np.tanh(sum(W1[i, j] * h0[j] for j in range(10)) + b1[i]) for i in range(10)]
    out = sum(W2[0, j] * h1[j] for j in range(10)) + b2[0]
    assert forward(phi, [1.0, 0.0, 0.0]) == pytest.approx(out, rel=1e-13)


def test_sigmoid_activation():
    shape = MlpShape((3, 4, 1), "sigmoid")
    phi = random_params(shape, 1)
    W0, W1 = phi.weights
    x = np.array([0.2, -0.1, 0.4])
    h = 1 / (1 + np.exp(-(W0 @ x + phi.biases[0])))
    assert forward(phi, x) == pytest.approx(float((W1 @ h + phi.biases[1])[0]), rel=1e-13)


def test_constant_signal_gives_constant_output_after_delay():
    phi = random_params(FULL, 2, 0.3)
    out = forward_signal(phi, Signal(np.full(30, 0.1), TS)).values
    assert np.allclose(out[2:], out[2], rtol=0, atol=1e-12)


def test_forward_signal_is_causal():
    phi = random_params(FULL, 5, 0.3)
    s = np.random.default_rng(0).standard_normal(40) * 1e-3
    base = forward_signal(phi, Signal(s, TS)).values
    s2 = s.copy()
    s2[25] += 1e-3
    pert = forward_signal(phi, Signal(s2, TS)).values
    assert np.array_equal(base[:25], pert[:25])
    assert not np.array_equal(base[25:28], pert[25:28])


def test_affine_layer_jacobian():
    shape = MlpShape((3, 1), basis=derivative_basis_matrix(TS))
    phi = random_params(shape, 3)
    s = Signal(np.random.default_rng(1).standard_normal(15), TS)
    J = param_jacobian(phi, s)
    X = delay_matrix(s, 2) @ shape.basis.T
    assert np.array_equal(J, np.hstack([X, np.ones((15, 1))]))


def fd_jacobian(phi, windows, h=1e-6):
    theta = flatten(phi)
    J = np.empty((windows.shape[0], theta.size))
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        J[:, i] = (forward_windows(unflatten(theta + e, phi.shape), windows)
                   - forward_windows(unflatten(theta - e, phi.shape), windows)) / (2 * h)
    return J


@pytest.mark.parametrize("seed", range(10))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    phi = random_params(FULL, 100 + seed, 0.5)
    s = Signal(np.cumsum(rng.standard_normal(30)) * 1e-4, TS)
    windows = delay_matrix(s, 2)
    out, J = jacobian_windows(phi, windows)
    assert np.array_equal(out, forward_windows(phi, windows))
    Jfd = fd_jacobian(phi, windows)
    rel = np.linalg.norm(J - Jfd, axis=1) / np.maximum(np.linalg.norm(Jfd, axis=1), 1e-12)
    assert rel.max() < 1e-6


def test_duplicate_neurons_have_identical_columns():
    shape = MlpShape((3, 4, 1))
    phi = random_params(shape, 8)
    W0 = np.array(phi.weights[0])
    b0 = np.array(phi.biases[0])
    W1 = np.array(phi.weights[1])
    W0[1], b0[1], W1[0, 1] = W0[0], b0[0], W1[0, 0]
    phi = MlpParams(shape, (W0, W1), (b0, phi.biases[1]))
    _, J = jacobian_windows(phi, np.random.default_rng(2).standard_normal((12, 3)))
    w0, b0s, _ = next(shape.layer_slices())
    cols = np.arange(w0.start, w0.stop).reshape(4, 3)
    assert np.array_equal(J[:, cols[0]], J[:, cols[1]])
    assert np.array_equal(J[:, b0s.start], J[:, b0s.start + 1])


def test_tanh_odd_symmetry():
    shape = MlpShape((3, 6, 1))
    rng = np.random.default_rng(6)
    W0, W1 = rng.standard_normal((6, 3)), rng.standard_normal((1, 6))
    zero = (np.zeros(6), np.zeros(1))
    phi = MlpParams(shape, (W0, W1), zero)
    x = rng.standard_normal(3)
    assert forward(phi, -x) == pytest.approx(-forward(phi, x), rel=1e-14)
    flipped = MlpParams(shape, (-W0, -W1), zero)
    assert forward(flipped, x) == pytest.approx(forward(phi, x), rel=1e-14)


def test_init_params():
    a, b = init_params(FULL, 3), init_params(FULL, 3)
    assert np.array_equal(flatten(a), flatten(b))
    assert all(np.all(bias == 0) for bias in a.biases)
    big = init_params(MlpShape((1000, 1000, 1)), 0)
    assert np.std(big.weights[0]) == pytest.approx(1000 ** -0.5, rel=0.2)


def test_parameter_file_round_trip(tmp_path):
    phi = random_params(FULL, 9)
    save_params(phi, tmp_path / "p.json", {"note": "x"})
    back = load_params(tmp_path / "p.json")
    assert np.array_equal(flatten(back), flatten(phi))
    assert np.array_equal(back.basis, phi.basis)
    assert back.shape.sizes == FULL.sizes and back.shape.activation == "tanh"
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_params(tmp_path / "bad.json")
