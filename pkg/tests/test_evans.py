import numpy as np
import pytest

from evanslab.eigen import limit_matrix
from evanslab.evans import (EvansSample, evans_eval, evans_on_grid, integrate_decaying, kato_transport,
                            stable_frame, wedge, write_evans_csv)
from oracles import scalar_roots


def test_constant_layer_D_is_minus_one(const_layer):
    for lam in [0.5, 1.0 + 2.0j, 3.0 - 1.0j]:
        s = evans_eval(const_layer, lam)
        assert abs(s.D + 1.0) < 1e-9


def test_decaying_basis_at_zero_constant_layer(const_layer):
    lam = 0.7 + 0.4j
    mm, _ = scalar_roots(1.0, 1.0, lam)
    basis = integrate_decaying(const_layer, lam, method="rescaled_direct", x_eval=[0.0, 5.0, 30.0])
    v = basis.at_zero()[:, 0]
    assert np.allclose(v, [1.0, mm], atol=1e-8)


def test_stable_frame_is_graph_normalized(coupled):
    _, _, c = coupled
    frame, sigma = stable_frame(c, 0.8 + 0.3j)
    n = c.n
    assert np.allclose(frame[:n], np.eye(n))
    A = limit_matrix(c, 0.8 + 0.3j)
    # columns span an invariant subspace
    resid = A @ frame - frame @ np.linalg.lstsq(frame, A @ frame, rcond=None)[0]
    assert np.linalg.norm(resid) < 1e-10
    assert sigma.real < 0


def test_conjugate_symmetry(burgers):
    _, _, c = burgers
    lam = 0.6 + 1.7j
    d1 = evans_eval(c, lam).D
    d2 = evans_eval(c, np.conj(lam)).D
    assert abs(d1 - np.conj(d2)) < 1e-8 * max(1.0, abs(d1))


def test_exterior_matches_direct_coupled(coupled):
    _, _, c = coupled
    de = evans_eval(c, 1.0, method="exterior_product").D
    dd = evans_eval(c, 1.0, method="rescaled_direct").D
    assert abs(de - dd) <= 1e-5 * abs(de)


def test_tolerance_halving_stable(burgers):
    _, _, c = burgers
    lam = 2.0 + 1.0j
    d1 = evans_eval(c, lam, rtol=1e-8).D
    d2 = evans_eval(c, lam, rtol=5e-9).D
    assert abs(d1 - d2) < 1e-6 * abs(d1)


def test_grid_matches_pointwise(burgers):
    _, _, c = burgers
    lams = np.array([0.3, 1.0 + 1.0j, 2.0 - 0.5j])
    grid = evans_on_grid(c, lams)
    for s, lam in zip(grid, lams):
        assert s.ok
        assert abs(s.D - evans_eval(c, lam).D) < 1e-7 * abs(s.D)


def test_kato_constant_path_is_identity(coupled):
    _, _, c = coupled
    V0, _ = stable_frame(c, 1.0)
    out = kato_transport(c, [1.0, 1.0, 1.0], V0=V0)
    for V in out:
        assert np.allclose(V, V0, atol=1e-12)


def test_kato_spans_stable_space(coupled):
    _, _, c = coupled
    path = np.linspace(1.0, 1.0 + 2.0j, 9)
    out = kato_transport(c, path)
    n = c.n
    for lam, V in zip(path, out):
        G, _ = stable_frame(c, lam)
        # same subspace: V is G times an invertible n x n factor
        assert np.allclose(V @ np.linalg.inv(V[:n]), G, atol=1e-6)


def test_kato_loop_returns(burgers):
    _, _, c = burgers
    theta = np.linspace(0, 2 * np.pi, 41)
    path = 2.0 + 0.5 * np.exp(1j * theta)
    out = kato_transport(c, path, max_dP=0.01)
    assert np.allclose(out[-1], out[0], atol=1e-4)


def test_kato_and_graph_D_differ_by_wedge_factor(coupled):
    _, _, c = coupled
    path = np.linspace(1.0, 1.5 + 1.0j, 5)
    graph = evans_on_grid(c, path)
    kato = evans_on_grid(c, path, init="kato")
    frames = kato_transport(c, path)
    for g, k, V in zip(graph, kato, frames):
        factor = np.linalg.det(V[:c.n])
        assert abs(k.D - factor * g.D) < 1e-6 * abs(k.D)


def test_wedge_of_identity_columns():
    V = np.eye(4)[:, :2]
    w = wedge(V)
    assert w[0] == 1 and np.count_nonzero(w) == 1


def test_csv_records_failures(tmp_path, const_layer):
    good = evans_eval(const_layer, 1.0)
    bad = EvansSample(lam=2.0 + 0j, D=complex(np.nan), sigma=np.nan, ok=False, error="SplittingFailure: x")
    path = tmp_path / "d.csv"
    write_evans_csv([good, bad], path, meta={"model": "const"})
    lines = path.read_text().splitlines()
    assert lines[0] == "# model=const"
    assert lines[1].startswith("re_lambda")
    assert "FAIL" in lines[3] and "FAIL" not in lines[2]
    assert float(lines[2].split(",")[2]) == pytest.approx(-1.0, abs=1e-9)
