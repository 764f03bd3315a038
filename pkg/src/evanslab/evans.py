"""Evans function of the Dirichlet boundary-layer problem.

The manifold of solutions decaying at +infinity is integrated from L_init down to
x = 0, either on the n-th exterior power (compound-matrix method, analytic in lambda)
or column-wise with QR renormalization. D(lambda) = det(Phi0(0), Phi+(0)) with Phi0
spanned by e_{n+1}, ..., e_{2n}.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .eigen import LinearizedCoefficients, limit_matrix
from .errors import EvansLabError, SplittingFailure, StiffnessFailure

DEFAULT_RTOL = 1e-10
BATCH = 64


# ---------------------------------------------------------------- exterior algebra

@lru_cache(maxsize=None)
def wedge_indices(N: int, k: int):
    return tuple(itertools.combinations(range(N), k))


@lru_cache(maxsize=None)
def compound_tensor(N: int, k: int) -> np.ndarray:
    """T with C(M) = einsum('IJij,ij->IJ', T, M), the derivation induced on the k-th power."""
    idx = wedge_indices(N, k)
    pos = {I: p for p, I in enumerate(idx)}
    T = np.zeros((len(idx), len(idx), N, N))
    for q, J in enumerate(idx):
        for m, j in enumerate(J):
            for i in range(N):
                if i != j and i in J:
                    continue
                new = list(J)
                new[m] = i
                order = np.argsort(new)
                sign = _perm_sign(order)
                T[pos[tuple(sorted(new))], q, i, j] += sign
    return T


def _perm_sign(order) -> int:
    order = list(order)
    sign = 1
    for i in range(len(order)):
        while order[i] != i:
            j = order[i]
            order[i], order[j] = order[j], order[i]
            sign = -sign
    return sign


def compound(M: np.ndarray, k: int) -> np.ndarray:
    N = M.shape[-1]
    return np.einsum("IJij,...ij->...IJ", compound_tensor(N, k), M)


def wedge(V: np.ndarray) -> np.ndarray:
    """Plucker coordinates of the columns of V (N x k)."""
    N, k = V.shape
    return np.array([np.linalg.det(V[list(I), :]) for I in wedge_indices(N, k)])


# ---------------------------------------------------------------- initial frames

def stable_frame(coeffs: LinearizedCoefficients, lam: complex):
    """Graph-normalized basis of the stable space of the limiting matrix and the sum of its rates.

    The n eigenvalues of smallest real part form the stable group; the basis is scaled
    so its upper n x n block is the identity, which makes it analytic in lambda.
    """
    n = coeffs.n
    lam = complex(lam)
    # at lam = 0 slow eigenvalues collide; the graph basis is continuous there, so
    # evaluate it a hair to the right
    lam_eff = lam if abs(lam) > 1e-9 else 1e-9
    mu, V = np.linalg.eig(limit_matrix(coeffs, lam_eff))
    order = np.argsort(mu.real)
    gap = mu.real[order[n]] - mu.real[order[n - 1]]
    if gap <= 0:
        raise SplittingFailure(f"lam={lam}: stable group not separated")
    s = order[:n]
    Vs = V[:, s]
    top = Vs[:n, :]
    if np.linalg.cond(top) > 1e10:
        raise SplittingFailure(f"lam={lam}: stable space is not a graph over the w-coordinates")
    frame = Vs @ np.linalg.inv(top)
    sigma = complex(np.sum(mu[s]))
    return frame, sigma


def stable_projector(coeffs: LinearizedCoefficients, lam: complex) -> np.ndarray:
    n = coeffs.n
    mu, V = np.linalg.eig(limit_matrix(coeffs, lam))
    order = np.argsort(mu.real)
    Vinv = np.linalg.inv(V)
    s = order[:n]
    return V[:, s] @ Vinv[s, :]


def kato_transport(coeffs: LinearizedCoefficients, path: Sequence[complex], V0: Optional[np.ndarray] = None,
                   max_dP: float = 0.05, max_depth: int = 30):
    """Analytically continue a basis of the stable space along a polygonal lambda-path.

    Each segment is stepped with the implicit-midpoint (Cayley) discretization of
    V' = [P', P] V, subdivided until the projector change per step is at most max_dP.
    Returns the list of bases at the path nodes.
    """
    path = [complex(p) for p in path]
    P = stable_projector(coeffs, path[0])
    if V0 is None:
        V0, _ = stable_frame(coeffs, path[0])
    V = np.array(V0, dtype=complex)
    N = V.shape[0]
    I = np.eye(N)
    out = [V.copy()]
    for a, b in zip(path[:-1], path[1:]):
        stack = [(a, b, P, stable_projector(coeffs, b), 0)]
        while stack:
            l0, l1, P0, P1, depth = stack.pop()
            if np.linalg.norm(P1 - P0, 2) > max_dP and depth < max_depth:
                lm = 0.5 * (l0 + l1)
                Pm = stable_projector(coeffs, lm)
                stack.append((lm, l1, Pm, P1, depth + 1))
                stack.append((l0, lm, P0, Pm, depth + 1))
                continue
            Pmid = stable_projector(coeffs, 0.5 * (l0 + l1))
            K = (P1 - P0) @ Pmid - Pmid @ (P1 - P0)
            V = np.linalg.solve(I - 0.5 * K, (I + 0.5 * K) @ V)
            V = P1 @ V
            P = P1
        defect = np.linalg.norm(P @ P - P, 2)
        if defect > 1e-9:
            raise SplittingFailure(f"projector defect {defect:.2e} along the path")
        out.append(V.copy())
    return out


# ---------------------------------------------------------------- samples

@dataclass
class DecayingBasis:
    lam: complex
    L_init: float
    x: np.ndarray               # sample points, decreasing from L_init to 0
    values: np.ndarray          # exterior: (len(x), C(2n, n)); direct: (len(x), 2n, n)
    sigma: complex              # growth rate removed, exp(-sigma (x - L_init)) factor
    method: str
    log_scale: complex = 0.0    # accumulated log det of renormalizations (direct only)

    def at_zero(self):
        return self.values[-1]


@dataclass
class EvansSample:
    lam: complex
    D: complex
    sigma: complex
    ok: bool = True
    error: str = ""
    diagnostics: dict = field(default_factory=dict)


def default_L_init(coeffs: LinearizedCoefficients) -> float:
    if coeffs.constant:
        return coeffs.X_max
    return coeffs.X_max + 5.0 / coeffs.theta


def _dirichlet_sign(n: int) -> int:
    return -1 if n % 2 else 1


def integrate_decaying(coeffs: LinearizedCoefficients, lam: complex, L_init: Optional[float] = None,
                       method: str = "exterior_product", rtol: float = DEFAULT_RTOL,
                       x_eval=None, frame=None) -> DecayingBasis:
    """Integrate the decaying manifold from L_init down to 0."""
    L = default_L_init(coeffs) if L_init is None else float(L_init)
    if frame is None:
        frame, sigma = stable_frame(coeffs, lam)
    else:
        sigma = complex(np.trace(np.linalg.pinv(frame) @ limit_matrix(coeffs, lam) @ frame))
    x_eval = np.array([L, 0.0]) if x_eval is None else np.sort(np.asarray(x_eval, dtype=float))[::-1]
    if method == "exterior_product":
        vals, diag = _integrate_exterior(coeffs, np.array([lam]), [wedge(frame)], np.array([sigma]), L, rtol, x_eval)
        return DecayingBasis(lam=complex(lam), L_init=L, x=x_eval, values=vals[:, :, 0], sigma=sigma,
                             method=method)
    if method == "rescaled_direct":
        vals, logscale = _integrate_direct(coeffs, complex(lam), frame, sigma, L, rtol, x_eval)
        return DecayingBasis(lam=complex(lam), L_init=L, x=x_eval, values=vals, sigma=sigma,
                             method=method, log_scale=logscale)
    raise ValueError(f"unknown method {method!r}")


def _integrate_exterior(coeffs, lams, y0s, sigmas, L, rtol, x_eval):
    n = coeffs.n
    N = 2 * n
    T = compound_tensor(N, n)
    d = T.shape[0]
    K = lams.size
    Y0 = np.stack(y0s, axis=1).astype(complex)  # (d, K)

    def rhs(x, y):
        M0, M1 = coeffs.system_parts(np.array(x))
        C0 = np.einsum("IJij,ij->IJ", T, M0)
        C1 = np.einsum("IJij,ij->IJ", T, M1)
        Y = y.reshape(d, K)
        return (C0 @ Y + (C1 @ Y) * lams - Y * sigmas).ravel()

    if coeffs.constant:
        # the initial Plucker vector is an exact eigenvector; nothing to integrate
        vals = np.broadcast_to(Y0, (x_eval.size, d, K)).copy()
        return vals, {"nfev": 0, "nsteps": 0}
    sol = solve_ivp(rhs, (L, 0.0), Y0.ravel(), method="DOP853", rtol=rtol, atol=rtol * 1e-3,
                    t_eval=x_eval)
    if sol.status != 0:
        raise StiffnessFailure(sol.message)
    steps = np.abs(np.diff(sol.t)) if sol.t.size > 1 else np.array([0.0])
    vals = sol.y.T.reshape(x_eval.size, d, K)
    return vals, {"nfev": sol.nfev, "nsteps": int(sol.t.size), "min_step": float(steps.min())}


def _integrate_direct(coeffs, lam, frame, sigma, L, rtol, x_eval, chunk=1.0):
    n = coeffs.n
    N = 2 * n
    shift = sigma / n

    def rhs(x, y):
        M0, M1 = coeffs.system_parts(np.array(x))
        Y = y.reshape(N, n)
        return ((M0 + lam * M1) @ Y - shift * Y).ravel()

    # breakpoints: every output point plus a renormalization grid
    marks = np.unique(np.concatenate([x_eval, np.arange(0.0, L, chunk), [L, 0.0]]))[::-1]
    Q, R = np.linalg.qr(frame)
    logscale = np.log(complex(np.linalg.det(R)))
    found = {}
    for a, b in zip(marks[:-1], marks[1:]):
        if a in x_eval:
            found[a] = (Q.copy(), logscale)
        if coeffs.constant:
            continue
        sol = solve_ivp(rhs, (a, b), Q.ravel().astype(complex), method="DOP853", rtol=rtol, atol=rtol * 1e-3)
        if sol.status != 0:
            raise StiffnessFailure(sol.message)
        Q, R = np.linalg.qr(sol.y[:, -1].reshape(N, n))
        logscale += np.log(complex(np.linalg.det(R)))
    found[marks[-1]] = (Q.copy(), logscale)
    out = np.array([found[x][0] * np.exp(found[x][1] / n) for x in x_eval])
    return out, logscale


def _D_from_wedge(y, n):
    # coordinate for rows (0..n-1) is the first entry of the lexicographic list
    return _dirichlet_sign(n) * y[0]


def evans_eval(coeffs: LinearizedCoefficients, lam: complex, L_init: Optional[float] = None,
               method: str = "exterior_product", rtol: float = DEFAULT_RTOL) -> EvansSample:
    """D(lambda) = det(Phi0(0), Phi+(0)) with the graph-normalized initial frame."""
    n = coeffs.n
    basis = integrate_decaying(coeffs, lam, L_init=L_init, method=method, rtol=rtol)
    if method == "exterior_product":
        D = _D_from_wedge(basis.at_zero(), n)
    else:
        D = _dirichlet_sign(n) * np.linalg.det(basis.at_zero()[:n, :])
    return EvansSample(lam=complex(lam), D=complex(D), sigma=basis.sigma,
                       diagnostics={"L_init": basis.L_init, "method": method})


def evans_on_grid(coeffs: LinearizedCoefficients, lams, L_init: Optional[float] = None,
                  rtol: float = DEFAULT_RTOL, init: str = "graph", batch: int = BATCH,
                  d_hook: Optional[Callable] = None) -> list:
    """Evans samples at many lambda with one normalization convention.

    ``init='graph'`` uses the graph-normalized frame at each lambda (already a single
    analytic convention); ``init='kato'`` transports the frame along the list order.
    Per-sample failures are recorded on the sample rather than raised.
    """
    lams = np.asarray(lams, dtype=complex).ravel()
    n = coeffs.n
    L = default_L_init(coeffs) if L_init is None else float(L_init)
    samples: list = [None] * lams.size
    frames = [None] * lams.size
    sigmas = np.zeros(lams.size, dtype=complex)
    if init == "kato" and lams.size:
        transported = kato_transport(coeffs, lams)
        for i, V in enumerate(transported):
            frames[i] = V
            sigmas[i] = complex(np.trace(np.linalg.pinv(V) @ limit_matrix(coeffs, lams[i]) @ V))
    else:
        for i, lam in enumerate(lams):
            try:
                frames[i], sigmas[i] = stable_frame(coeffs, lam)
            except EvansLabError as exc:
                samples[i] = EvansSample(lam=complex(lam), D=complex(np.nan, np.nan), sigma=np.nan,
                                         ok=False, error=f"{type(exc).__name__}: {exc}")
    good = [i for i in range(lams.size) if samples[i] is None]
    for start in range(0, len(good), batch):
        idx = good[start:start + batch]
        y0s = [wedge(frames[i]) for i in idx]
        try:
            vals, diag = _integrate_exterior(coeffs, lams[idx], y0s, sigmas[idx], L, rtol, np.array([L, 0.0]))
        except EvansLabError as exc:
            for i in idx:
                samples[i] = EvansSample(lam=complex(lams[i]), D=complex(np.nan, np.nan), sigma=sigmas[i],
                                         ok=False, error=f"{type(exc).__name__}: {exc}")
            continue
        for col, i in enumerate(idx):
            D = _D_from_wedge(vals[-1, :, col], n)
            if d_hook is not None:
                D = D * d_hook(lams[i])
            samples[i] = EvansSample(lam=complex(lams[i]), D=complex(D), sigma=sigmas[i],
                                     diagnostics={"L_init": L, **diag})
    return samples


def evans_values(coeffs: LinearizedCoefficients, lams, **kw) -> np.ndarray:
    """D at each lambda as an array (nan where a sample failed)."""
    return np.array([s.D for s in evans_on_grid(coeffs, lams, **kw)])


def write_evans_csv(samples, path, meta: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        fh.write("re_lambda,im_lambda,re_D,im_D,abs_D,arg_D,normalizer\n")
        for s in samples:
            lam = s.lam
            if not s.ok:
                fh.write(f"{lam.real:.17g},{lam.imag:.17g},FAIL,FAIL,FAIL,FAIL,{s.error}\n")
                continue
            fh.write(f"{lam.real:.17g},{lam.imag:.17g},{s.D.real:.17g},{s.D.imag:.17g},"
                     f"{abs(s.D):.17g},{np.angle(s.D):.17g},{complex(s.sigma)!s}\n")
