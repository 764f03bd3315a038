import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from evanslab.eigen import adjoint_matrix, system_matrix
from evanslab.errors import IllConditionedFrame
from evanslab.resolvent import (GridSweep, Resolvent, adjoint_kernel, assemble_resolvent, batched_expm,
                                dual_basis, high_freq_bound_fit, kernel_from_duals, kernel_grid,
                                low_freq_bound_fit, residual_check, residual_convergence, write_kernel_csv)
from oracles import constant_layer_kernel, constant_layer_kernel_x


def test_constant_layer_closed_form(const_layer):
    lam = 1.0
    res = Resolvent(const_layer, lam)
    xs = np.array([0.0, 0.4, 1.0, 2.5, 6.0])
    for y in (0.7, 2.0):
        blocks, sides = res.blocks(xs, y)
        G = blocks[:, 0, 0]
        Gx = blocks[:, 1, 0]
        assert np.allclose(G, constant_layer_kernel(1.0, 1.0, lam, xs, y), rtol=1e-8, atol=1e-12)
        assert np.allclose(Gx, constant_layer_kernel_x(1.0, 1.0, lam, xs, y), rtol=1e-8, atol=1e-12)
        assert set(sides) == {"x>y", "x<y"}


def test_boundary_value_is_zero(burgers):
    _, _, c = burgers
    s = assemble_resolvent(c, 0.8 + 0.5j, 0.0, 1.3)
    assert np.all(np.abs(s.G) < 1e-13)
    assert s.side == "x<y"


def test_duality_with_adjoint_kernel(burgers, rng):
    _, _, c = burgers
    lam = 0.9 + 0.6j
    res = Resolvent(c, lam)
    for _ in range(5):
        x, y = rng.uniform(0.1, 6.0, 2)
        G = res.kernel([x], y)[0]
        H = adjoint_kernel(c, lam, [y], x)[0]
        assert np.allclose(G, H.T, rtol=1e-6, atol=1e-12 * abs(G).max())


def test_duality_coupled(coupled, rng):
    _, _, c = coupled
    lam = 1.2 - 0.4j
    res = Resolvent(c, lam)
    for _ in range(3):
        x, y = rng.uniform(0.1, 5.0, 2)
        G = res.kernel([x], y)[0]
        H = adjoint_kernel(c, lam, [y], x)[0]
        assert np.linalg.norm(G - H.T) <= 1e-6 * np.linalg.norm(G)


def test_residual_constant_layer(const_layer):
    rep = residual_check(Resolvent(const_layer, 1.0), 2.0, np.linspace(0.0, 8.0, 41))
    assert rep["jump"] < 1e-8 and rep["boundary"] == 0.0
    assert rep["ode"] < 1e-5


def test_residual_burgers_converges(burgers):
    _, _, c = burgers
    res = Resolvent(c, 1.0)
    conv = residual_convergence(res, 2.0, np.linspace(0.0, 8.0, 33))
    assert conv["ode"][-1] < 1e-6
    assert min(conv["orders"]) > 1.9
    rep = conv["reports"][-1]
    assert rep["jump"] < 1e-6 and rep["boundary"] < 1e-12


def test_kernel_independent_of_complement(coupled):
    _, _, c = coupled
    lam = 0.7 + 0.9j
    res = Resolvent(c, lam)
    ys = np.array([0.5, 1.5, 3.0])
    db_o = dual_basis(c, lam, ys, complement="orth", resolvent=res)
    db_e = dual_basis(c, lam, ys, complement="eigen", resolvent=res)
    for j, y in enumerate(ys):
        for x in (0.2, 1.0, 2.2, 4.0):
            ref = res.blocks([x], y)[0][0]
            for db in (db_o, db_e):
                K = kernel_from_duals(db, res, x, j)
                assert np.linalg.norm(K - ref) <= 1e-6 * np.linalg.norm(ref)


def _pairing(c, lam, xs):
    """Z S W along W' = A W and Z' = Z A~, with the size |Z||S||W| at each x."""
    N = 2 * c.n
    W0 = np.eye(N, dtype=complex)[:, :c.n]
    Z0 = np.eye(N, dtype=complex)[c.n:, :]
    if c.constant:
        A = system_matrix(c, lam, 0.0)
        At = adjoint_matrix(c, lam, 0.0)
        Ws = [expm(A * x) @ W0 for x in xs]
        Zs = [Z0 @ expm(At * x) for x in xs]
    else:
        def rhs(x, y):
            W = y[:N * c.n].reshape(N, c.n)
            Z = y[N * c.n:].reshape(c.n, N)
            return np.concatenate([(system_matrix(c, lam, x) @ W).ravel(),
                                   (Z @ adjoint_matrix(c, lam, x)).ravel()])

        y0 = np.concatenate([W0.ravel(), Z0.ravel()])
        sol = solve_ivp(rhs, (xs[0], xs[-1]), y0, t_eval=xs, rtol=1e-13, atol=1e-15, method="DOP853")
        Ws = [sol.y[:N * c.n, k].reshape(N, c.n) for k in range(len(xs))]
        Zs = [sol.y[N * c.n:, k].reshape(c.n, N) for k in range(len(xs))]
    P, scale = [], []
    for x, W, Z in zip(xs, Ws, Zs):
        S = c.coupling(np.asarray(x))
        P.append(Z @ S @ W)
        scale.append(np.linalg.norm(Z) * np.linalg.norm(S) * np.linalg.norm(W))
    return np.array(P), np.array(scale)


@pytest.mark.parametrize("name, tol", [("const_layer", 1e-12), ("burgers", 1e-8)])
def test_pairing_constancy(name, tol, request):
    fx = request.getfixturevalue(name)
    c = fx if name == "const_layer" else fx[2]
    xs = np.linspace(0.0, 3.0, 10)
    P, scale = _pairing(c, 0.6 + 0.8j, xs)
    drift = np.abs(P - P[0]).max(axis=(1, 2)) / scale
    assert drift.max() < tol


def test_dual_rows_pair_to_identity(burgers):
    _, _, c = burgers
    db = dual_basis(c, 1.0 + 1.0j, np.linspace(0.2, 4.0, 6))
    F = np.concatenate([db.Phi0, db.Psi0], axis=2)
    assert np.allclose(db.dual0 @ db.S @ F, np.eye(2 * c.n), atol=1e-10)
    assert db.off_diagonal_defect() < 1e-10


def test_ill_conditioned_frame(const_layer):
    with pytest.raises(IllConditionedFrame):
        dual_basis(const_layer, -0.25 + 1e-12, [0.5], complement="eigen", cond_limit=1e5)
    dual_basis(const_layer, 1.0, [0.5], complement="eigen", cond_limit=1e5)


def test_low_freq_bound_constant_layer(const_layer):
    lams = 1e-2 * np.exp(1j * np.linspace(-np.pi / 2, np.pi / 2, 7))
    xs = np.linspace(0.0, 25.0, 51)
    fit = low_freq_bound_fit(const_layer, lams, xs, ys=[0.0, 2.0, 5.0])
    assert fit["C"] < 10
    assert np.all(np.isfinite(fit["ratios"]))


def test_low_freq_slow_mode_dominates(const_layer):
    # real lam -> 0: the kernel far right of y is the slow exponential up to a factor 3
    lam, y = 1e-3, 1.0
    x = np.array([5.0, 10.0, 20.0])
    G = np.abs(Resolvent(const_layer, lam).kernel(x, y)[:, 0, 0])
    slow = np.abs(np.exp(-lam * (x - y)))
    assert np.all(G / slow < 3) and np.all(G / slow > 1 / 3)


def test_high_freq_bound_constant_layer(const_layer):
    xs = np.linspace(0.0, 3.0, 61)
    fit = high_freq_bound_fit(const_layer, [100.0], xs, ys=[1.0])
    assert fit["C"] < 5 and fit["c"] < 5


def test_high_freq_derivative_scaling(const_layer):
    lam = 100.0
    res = Resolvent(const_layer, lam)
    y = 1.0
    blk, _ = res.blocks([y + 0.1, y], y)
    ratio = abs(blk[0, 1, 0]) / abs(blk[0, 0, 0])
    assert 0.25 < ratio / np.sqrt(lam) < 4
    diag = abs(blk[1, 0, 0]) / lam ** -0.5
    assert 0.25 < diag < 4


def test_batched_expm_matches_scipy(rng):
    for N in (2, 4):
        A = rng.normal(size=(30, N, N)) * 3 + 1j * rng.normal(size=(30, N, N))
        ref = np.array([expm(a) for a in A])
        assert np.allclose(batched_expm(A), ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())
    small = 1e-5 * rng.normal(size=(5, 2, 2))
    assert np.allclose(batched_expm(small), np.array([expm(a) for a in small]), rtol=1e-13)


def test_kernel_grid_constant_layer(const_layer):
    lams = np.array([1.0, 2.0 + 3.0j])
    dx, n_x = 0.1, 41
    out = kernel_grid(const_layer, lams, dx, n_x, [5, 12])
    xs = np.arange(n_x) * dx
    for i, lam in enumerate(lams):
        for j, jy in enumerate([5, 12]):
            ref = constant_layer_kernel(1.0, 1.0, lam, xs, jy * dx)
            assert np.allclose(out[i, j, :, 0, 0], ref, rtol=1e-9, atol=1e-12)


def test_kernel_grid_matches_ode_path(burgers):
    _, _, c = burgers
    lam = 1.0 + 0.5j
    dx, n_x = 0.05, 81
    out = kernel_grid(c, [lam], dx, n_x, [20])[0, 0]
    ref, _ = Resolvent(c, lam).blocks(np.arange(n_x) * dx, 20 * dx)
    assert np.max(np.abs(out - ref)) < 1e-6 * np.abs(ref).max()


@pytest.mark.parametrize("column", ["G", "Gy"])
def test_sweep_apply_equals_block_sum(burgers, rng, column):
    _, _, c = burgers
    dx, n_x, n_y = 0.1, 30, 25
    sweep = GridSweep(c, [0.5, 1.0 + 2.0j], dx, (n_x - 1) * dx)
    v = rng.normal(size=(n_y, 1))
    cols = slice(0, 1) if column == "G" else slice(1, 2)
    ref = sum(sweep.blocks_at(j, n_x)[:, :, :, cols] @ v[j] for j in range(n_y))
    got = sweep.apply(v, n_x, column=column)
    assert np.allclose(got, ref, rtol=1e-10, atol=1e-12)


def test_kernel_csv(tmp_path, const_layer):
    res = Resolvent(const_layer, 1.0)
    xs = np.array([0.0, 1.0])
    blocks = [res.blocks(xs, 0.5)[0]]
    path = tmp_path / "k.csv"
    write_kernel_csv(path, 1.0 + 0j, xs, [0.5], blocks, meta={"model": "c"})
    lines = path.read_text().splitlines()
    assert lines[1].split(",")[:6] == ["re_lambda", "im_lambda", "x", "y", "re_G_11", "im_G_11"]
    assert len(lines) == 4
