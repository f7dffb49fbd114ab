"""Sum-of-exponentials compression of the history kernel omega_{1-alpha}.

omega_{1-alpha}(t) = (1/(Gamma(1-alpha)Gamma(alpha))) int_0^inf s^(alpha-1) e^(-t s) ds
is discretized by a single Gauss-Jacobi rule on [0, 1/(2T)] (the weight
absorbs s^(alpha-1), and e^(-ts) is un-resolved there) plus fixed-order
Gauss-Legendre rules on dyadic panels up to the cutoff-determined top
frequency.  Every constructed approximation is re-verified on a dense
log-spaced grid before use, so the construction internals are not
load-bearing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as _gamma
from scipy.special import roots_jacobi, roots_legendre

from .mesh import TimeMesh

_VERIFY_SAMPLES = 10_000


class SoeConstructionError(RuntimeError):
    """Verification of a constructed approximation failed."""

    def __init__(self, message: str, measured_error: float):
        super().__init__(message)
        self.measured_error = measured_error


@dataclass(frozen=True)
class SoeApprox:
    """Positive nodes/weights with |omega_{1-alpha}(t) - sum nu_l e^(-s_l t)| <= eps on [dt_cutoff, T]."""

    alpha: float
    eps: float
    dt_cutoff: float
    horizon: float
    nodes: np.ndarray
    weights: np.ndarray
    measured_max_error: float

    @property
    def n_terms(self) -> int:
        return self.nodes.size

    def certificate(self) -> dict:
        return {
            "alpha": self.alpha,
            "eps": self.eps,
            "dt_cutoff": self.dt_cutoff,
            "T": self.horizon,
            "Nq": self.n_terms,
            "measured_max_error": self.measured_max_error,
        }


def kernel_eval(soe: SoeApprox, t):
    """Sum_l nu_l e^(-s_l t), vectorized over t."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.exp(-np.outer(t, soe.nodes)) @ soe.weights
    return out if out.size > 1 else float(out[0])


def _top_frequency(alpha: float, eps: float, dt: float) -> float:
    # smallest S with S^(alpha-1) e^(-S dt)/(dt * Gamma(1-a)Gamma(a)) <= eps/20
    gg = _gamma(1 - alpha) * _gamma(alpha)
    s = 10.0 / dt
    for _ in range(4):
        s = (math.log(20.0 / (eps * dt * gg)) + (alpha - 1.0) * math.log(s)) / dt
    return s


def build_soe(alpha: float, eps: float, dt_cutoff: float, horizon: float) -> SoeApprox:
    """Construct and verify a sum-of-exponentials approximation.

    Raises SoeConstructionError (carrying the measured error) if the dense
    verification grid finds a deviation above eps.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not 0 < dt_cutoff < horizon:
        raise ValueError("need 0 < dt_cutoff < horizon")

    base_order = int(np.clip(math.ceil(-math.log10(eps)) - 1, 6, 12))
    last_err: SoeConstructionError | None = None
    for order in range(base_order, base_order + 4):
        try:
            return _build_verified(alpha, eps, dt_cutoff, horizon, order)
        except SoeConstructionError as exc:
            last_err = exc
    raise last_err


def _build_verified(
    alpha: float, eps: float, dt_cutoff: float, horizon: float, order: int
) -> SoeApprox:
    norm = 1.0 / (_gamma(1 - alpha) * _gamma(alpha))

    # merged low-frequency segment [0, s0]: Gauss-Jacobi with weight s^(alpha-1)
    s0 = 0.5 / horizon
    xj, wj = roots_jacobi(order, 0.0, alpha - 1.0)
    nodes = [s0 * (xj + 1.0) / 2.0]
    weights = [norm * (s0 / 2.0) ** alpha * wj]

    # dyadic Gauss-Legendre panels [s0 2^m, s0 2^(m+1)] up to the top frequency
    xl, wl = roots_legendre(order)
    s_top = _top_frequency(alpha, eps, dt_cutoff)
    lo = s0
    while lo < s_top:
        hi = 2.0 * lo
        mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
        sn = mid + half * xl
        panel_w = norm * half * wl * sn ** (alpha - 1.0)
        # drop panels that cannot contribute eps/20 anywhere on [dt_cutoff, T]
        if float(panel_w @ np.exp(-sn * dt_cutoff)) > eps / 20.0:
            nodes.append(sn)
            weights.append(panel_w)
        lo = hi

    s = np.concatenate(nodes)
    nu = np.concatenate(weights)

    tgrid = np.geomspace(dt_cutoff, horizon, _VERIFY_SAMPLES)
    approx = np.exp(-np.outer(tgrid, s)) @ nu
    exact = tgrid ** (-alpha) / _gamma(1 - alpha)
    err = float(np.max(np.abs(approx - exact)))
    if err > eps:
        raise SoeConstructionError(
            f"verification failed: measured max error {err:.3e} > eps {eps:.3e}", err
        )
    return SoeApprox(
        alpha=alpha,
        eps=eps,
        dt_cutoff=dt_cutoff,
        horizon=horizon,
        nodes=s,
        weights=nu,
        measured_max_error=err,
    )


def default_dt_cutoff(mesh: TimeMesh) -> float:
    """Smallest history gap min_k (t_{k-theta} - t_{k-1}) of a mesh."""
    return float(np.min(mesh.offsets - mesh.nodes[:-1]))


def build_soe_for_mesh(mesh: TimeMesh, alpha: float, eps: float) -> SoeApprox:
    return build_soe(alpha, eps, default_dt_cutoff(mesh), mesh.horizon)


def _hexp(delta: np.ndarray) -> np.ndarray:
    """[(d/2)(1+e^-d) - (1-e^-d)]/d^2 = d/12 - d^2/24 + d^3/80 - ...

    The direct form cancels to O(d^3); series below d = 0.1.
    """
    delta = np.asarray(delta, dtype=float)
    out = np.empty_like(delta)
    small = delta < 0.1
    if np.any(small):
        d = delta[small]
        acc = np.zeros_like(d)
        sign, fact, dpow = 1.0, 6.0, d.copy()  # j = 3 term: d/12
        for j in range(3, 20):
            if j > 3:
                sign = -sign
                fact *= j
                dpow = dpow * d
            acc = acc + sign * (j - 2) / (2.0 * fact) * dpow
        out[small] = acc
    if np.any(~small):
        d = delta[~small]
        out[~small] = ((d / 2.0) * (1.0 + np.exp(-d)) + np.expm1(-d)) / (d * d)
    return out


def fast_coeffs(mesh: TimeMesh, soe: SoeApprox, n: int):
    """(c^{(n,l)}, d^{(n,l)}, decay_l) arrays over l for history cell 1 <= n <= K-1.

    c is the exponential cell mean, d the first-moment weight, and decay the
    factor e^(-s_l (theta tau_n + (1-theta) tau_{n+1})) advancing V(t_{n-1})
    to V(t_n).
    """
    if not 1 <= n <= mesh.levels - 1:
        raise IndexError(f"history cell n={n} out of range 1..{mesh.levels - 1}")
    tau_n = mesh.steps[n - 1]
    tau_np1 = mesh.steps[n]
    s = soe.nodes
    # reference point of V(t_n) is t_{n+1-theta}
    gap = (1 - mesh.theta) * tau_np1  # t_{n+1-theta} - t_n
    e0 = np.exp(-s * gap)
    delta = s * tau_n
    with np.errstate(invalid="ignore"):
        c = np.where(delta < 1e-12, e0, e0 * (-np.expm1(-delta)) / np.where(delta == 0, 1.0, delta))
    d = (2.0 * tau_n / (tau_n + tau_np1)) * e0 * _hexp(delta)
    decay = np.exp(-s * (mesh.theta * tau_n + (1 - mesh.theta) * tau_np1))
    return c, d, decay


def fast_coeff_c(mesh: TimeMesh, soe: SoeApprox, n: int, l: int) -> float:
    return float(fast_coeffs(mesh, soe, n)[0][l])


def fast_coeff_d(mesh: TimeMesh, soe: SoeApprox, n: int, l: int) -> float:
    return float(fast_coeffs(mesh, soe, n)[1][l])


def local_coeffs(mesh: TimeMesh, alpha: float) -> np.ndarray:
    """a^{(0,k)} = omega_{2-alpha}((1-theta) tau_k)/tau_k for k = 1..K."""
    tau = mesh.steps
    return ((1 - mesh.theta) * tau) ** (1 - alpha) / (_gamma(2 - alpha) * tau)


@dataclass(frozen=True)
class FastCoeffTable:
    """Precomputed per-cell SOE coefficients for a (mesh, soe) pair.

    Row n-1 of c/d/decay holds the cell-n arrays; a0[k-1] is the local
    Alikhanov weight of level k.
    """

    c: np.ndarray
    d: np.ndarray
    decay: np.ndarray
    a0: np.ndarray


def fast_coeff_table(mesh: TimeMesh, soe: SoeApprox) -> FastCoeffTable:
    K = mesh.levels
    nq = soe.n_terms
    c = np.zeros((max(K - 1, 0), nq))
    d = np.zeros_like(c)
    decay = np.zeros_like(c)
    for n in range(1, K):
        c[n - 1], d[n - 1], decay[n - 1] = fast_coeffs(mesh, soe, n)
    return FastCoeffTable(c=c, d=d, decay=decay, a0=local_coeffs(mesh, soe.alpha))


@dataclass(frozen=True)
class HistoryState:
    """Recursive history variables V^l(t_level) per exponential node.

    values has shape (Nq,) or (Nq, N) for N spatial points; level -1 marks
    the empty pre-initial state, level 0 the all-zero state at t_0.
    """

    values: np.ndarray
    level: int


def initial_history(soe: SoeApprox, n_points: int | None = None) -> HistoryState:
    shape = (soe.n_terms,) if n_points is None else (soe.n_terms, n_points)
    return HistoryState(values=np.zeros(shape), level=0)


def history_update(
    state: HistoryState,
    inc_n,
    inc_np1,
    mesh: TimeMesh,
    soe: SoeApprox,
    n: int,
) -> HistoryState:
    """Advance V(t_{n-1}) -> V(t_n) using increments of cells n and n+1.

    V^l(t_n) = e^(-s_l (theta tau_n + (1-theta) tau_{n+1})) V^l(t_{n-1})
             + c^{(n,l)} inc_n + d^{(n,l)} (rho_n inc_{n+1} - inc_n).
    """
    if state.level != n - 1:
        raise RuntimeError(f"history state is at level {state.level}, expected {n - 1}")
    c, d, decay = fast_coeffs(mesh, soe, n)
    rho_n = mesh.ratios[n - 1]
    inc_n = np.asarray(inc_n, dtype=float)
    inc_np1 = np.asarray(inc_np1, dtype=float)
    if state.values.ndim == 2:
        c, d, decay = c[:, None], d[:, None], decay[:, None]
        inc_n, inc_np1 = inc_n[None, :], inc_np1[None, :]
    new = decay * state.values + c * inc_n + d * (rho_n * inc_np1 - inc_n)
    return HistoryState(values=new, level=n)


def fast_caputo_apply(values: np.ndarray, state: HistoryState, a0_k: float, soe: SoeApprox):
    """a^{(0,k)} (v^k - v^{k-1}) + sum_l nu_l V^l(t_{k-1}) at level k = len(values)-1."""
    values = np.asarray(values, dtype=float)
    k = values.shape[0] - 1
    if state.level != k - 1:
        raise RuntimeError(f"history state is at level {state.level}, expected {k - 1}")
    local = a0_k * (values[k] - values[k - 1])
    hist = soe.weights @ state.values
    out = local + hist
    return float(out) if np.ndim(out) == 0 else out


def fast_series(mesh: TimeMesh, soe: SoeApprox, values: np.ndarray) -> np.ndarray:
    """Accelerated scheme at every offset level 1..K (the direct scheme's fast twin)."""
    values = np.asarray(values, dtype=float)
    K = mesh.levels
    a0 = local_coeffs(mesh, soe.alpha)
    state = initial_history(soe, None if values.ndim == 1 else values.shape[1])
    out = []
    inc = np.diff(values, axis=0)
    for k in range(1, K + 1):
        out.append(fast_caputo_apply(values[: k + 1], state, a0[k - 1], soe))
        if k < K:
            state = history_update(state, inc[k - 1], inc[k], mesh, soe, k)
    return np.array(out)
