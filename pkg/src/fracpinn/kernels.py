"""Closed-form Alikhanov (L2-1-sigma) kernels on nonuniform meshes.

Coefficients come from exact antiderivatives of the weakly singular kernel
omega_{1-alpha}; far-history differences are evaluated through power-series
forms because the direct antiderivative differences lose ~(tau/B)^2 relative
digits to cancellation.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as _gamma

from .mesh import TimeMesh

_SERIES_SWITCH = 0.5
_SERIES_MAX_TERMS = 80


def omega(beta: float, s):
    """Power kernel s^(beta-1)/Gamma(beta) for s > 0, beta > 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("omega requires s > 0")
    if beta <= 0:
        raise ValueError("omega requires beta > 0")
    out = s ** (beta - 1.0) / _gamma(beta)
    return float(out) if out.ndim == 0 else out


def _pow_diff(base, r, expo):
    """(base*(1+r))^expo - base^expo, stable for small r."""
    return np.asarray(base, dtype=float) ** expo * np.expm1(expo * np.log1p(r))


def _moment_series(r, alpha):
    """h(r) = [(1+r)^(2-a)-1]/(2-a) - (r/2)[(1+r)^(1-a)+1] via its power series.

    h(r) = Sum_{m>=3} P_m (2-m)/(2*m!) r^m with P_m = prod_{i=0}^{m-2}(1-a-i);
    the direct form cancels to O(r^3) and is unusable for small r.
    """
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    p = 1.0 - alpha  # P_2
    rm = r * r
    fact = 2.0
    for m in range(2, _SERIES_MAX_TERMS):
        if m > 2:
            p *= 1.0 - alpha - (m - 2)
            rm = rm * r
            fact *= m
        term = p * (2.0 - m) / (2.0 * fact) * rm
        out = out + term
        if m >= 4 and np.all(np.abs(term) <= 1e-18 * np.maximum(np.abs(out), 1e-300)):
            break
    return out


def _h_of_r(r, alpha):
    """First-moment bracket of coeff_b over cell length / history gap ratio r."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)
    small = np.abs(r) <= _SERIES_SWITCH
    if np.any(small):
        out[small] = _moment_series(r[small], alpha)
    if np.any(~small):
        rr = r[~small]
        out[~small] = (np.power(1 + rr, 2 - alpha) - 1) / (2 - alpha) - (rr / 2) * (
            np.power(1 + rr, 1 - alpha) + 1
        )
    return out


@dataclass(frozen=True)
class KernelSet:
    """Discrete convolution kernels of one level k.

    Arrays are indexed by the history distance j = k - n:
    a[j] = a^{(j,k)} for j = 0..k-1, d[j] = D^{(j,k)} likewise, and
    b[j] = b^{(j,k)} for j = 1..k-1 (b[0] is unused and kept 0).
    """

    level: int
    a: np.ndarray
    b: np.ndarray
    d: np.ndarray


def coeff_a(mesh: TimeMesh, alpha: float, k: int, n: int) -> float:
    """a^{(k-n,k)} = (1/tau_n) * int over cell n of omega_{1-alpha}(t_{k-theta}-s) ds."""
    _check_indices(mesh, k, n, upper=k)
    tau_n = mesh.steps[n - 1]
    if n == k:
        return float(omega(2 - alpha, (1 - mesh.theta) * tau_n) / tau_n)
    base = mesh.offset(k) - mesh.nodes[n]
    diff = _pow_diff(base, tau_n / base, 1 - alpha) / _gamma(2 - alpha)
    return float(diff / tau_n)


def coeff_b(mesh: TimeMesh, alpha: float, k: int, n: int) -> float:
    """b^{(k-n,k)}: first-moment weight of the quadratic history interpolant."""
    _check_indices(mesh, k, n, upper=k - 1)
    tau_n = mesh.steps[n - 1]
    tau_np1 = mesh.steps[n]
    base = mesh.offset(k) - mesh.nodes[n]
    bracket = base ** (2 - alpha) * _h_of_r(tau_n / base, alpha)[0] / _gamma(2 - alpha)
    return float(2.0 * bracket / (tau_n * (tau_n + tau_np1)))


def _check_indices(mesh: TimeMesh, k: int, n: int, upper: int) -> None:
    if not 1 <= k <= mesh.levels:
        raise IndexError(f"level k={k} out of range 1..{mesh.levels}")
    if not 1 <= n <= upper:
        raise IndexError(f"index n={n} out of range 1..{upper} at level {k}")


def _level_coeffs(mesh: TimeMesh, alpha: float, k: int):
    """Vectorized a^{(k-n,k)} (n=1..k) and b^{(k-n,k)} (n=1..k-1) for one level."""
    t = mesh.nodes
    tau = mesh.steps
    a = np.empty(k)
    b = np.zeros(k)
    a[0] = omega(2 - alpha, (1 - mesh.theta) * tau[k - 1]) / tau[k - 1]
    if k > 1:
        u = mesh.offset(k)
        n = np.arange(1, k)
        base = u - t[n]
        r = tau[n - 1] / base
        a[k - n] = _pow_diff(base, r, 1 - alpha) / (_gamma(2 - alpha) * tau[n - 1])
        bracket = base ** (2 - alpha) * _h_of_r(r, alpha) / _gamma(2 - alpha)
        b[k - n] = 2.0 * bracket / (tau[n - 1] * (tau[n - 1] + tau[n]))
    return a, b


def assemble_D(mesh: TimeMesh, alpha: float, k: int) -> KernelSet:
    """Discrete kernels D^{(k-n,k)} combining a and b weights."""
    a, b = _level_coeffs(mesh, alpha, k)
    d = np.empty(k)
    if k == 1:
        d[0] = a[0]
        return KernelSet(level=k, a=a, b=b, d=d)
    rho = mesh.ratios  # rho[m-1] = tau_m / tau_{m+1}
    d[k - 1] = a[k - 1] - b[k - 1]  # n = 1
    d[0] = a[0] + rho[k - 2] * b[1]  # n = k
    if k > 2:
        n = np.arange(2, k)
        j = k - n
        d[j] = a[j] + rho[n - 2] * b[j + 1] - b[j]
    return KernelSet(level=k, a=a, b=b, d=d)


def build_kernels(mesh: TimeMesh, alpha: float) -> list[KernelSet]:
    """Kernel sets for every level 1..K."""
    return [assemble_D(mesh, alpha, k) for k in range(1, mesh.levels + 1)]


class KernelCache:
    """Per-(mesh, alpha) kernel cache; single writer, atomic replacement."""

    def __init__(self):
        self._store: dict = {}
        self._lock = threading.Lock()

    def get(self, mesh: TimeMesh, alpha: float) -> list[KernelSet]:
        key = (mesh, alpha)
        hit = self._store.get(key)
        if hit is not None:
            return hit
        built = build_kernels(mesh, alpha)
        with self._lock:
            self._store = {**self._store, key: built}
        return built


_default_cache = KernelCache()


def cached_kernels(mesh: TimeMesh, alpha: float) -> list[KernelSet]:
    return _default_cache.get(mesh, alpha)


def complementary_C(kernel_sets: list[KernelSet]) -> np.ndarray:
    """Complementary kernels C^{(j,k)}, j = 0..k-1, for k = len(kernel_sets).

    Backward recursion from C^{(0,k)} = 1/D^{(0,k)}; inverts the discrete
    convolution in the sense sum_{i=n..k} C^{(k-i,k)} D^{(i-n,i)} = 1.
    """
    k = len(kernel_sets)
    d0 = np.array([ks.d[0] for ks in kernel_sets])
    assert np.all(d0 > 0), "leading kernels D^{(0,n)} must stay positive"
    # delta[i-1, j] = D^{(j,i)} - D^{(j+1,i)}; rows padded with zeros
    delta = np.zeros((k, k))
    for i in range(2, k + 1):
        di = kernel_sets[i - 1].d
        delta[i - 1, : i - 1] = di[:-1] - di[1:]
    c = np.empty(k)
    c[0] = 1.0 / d0[k - 1]
    for n in range(k - 1, 0, -1):
        # sum_{i=n+1..k} (D^{(i-n-1,i)} - D^{(i-n,i)}) C^{(k-i,k)}: a diagonal of delta
        diag = np.diagonal(delta, offset=-n)[: k - n]
        c[k - n] = np.dot(diag, c[k - n - 1 :: -1]) / d0[n - 1]
    return c


def caputo_direct_apply(values: np.ndarray, kernels: KernelSet):
    """Sum_{n=1..k} D^{(k-n,k)} (v^n - v^{n-1}) at the offset t_{k-theta}.

    values holds v^0..v^k along axis 0; extra axes are carried through.
    """
    values = np.asarray(values, dtype=float)
    k = kernels.level
    if values.shape[0] != k + 1:
        raise ValueError(f"need {k + 1} node values for level {k}, got {values.shape[0]}")
    inc = np.diff(values, axis=0)  # inc[n-1] = v^n - v^{n-1}
    weights = kernels.d[::-1]  # weight of inc[n-1] is D^{(k-n,k)}
    out = np.tensordot(weights, inc, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def direct_series(mesh: TimeMesh, alpha: float, values: np.ndarray) -> np.ndarray:
    """Direct scheme applied at every offset level 1..K."""
    sets = cached_kernels(mesh, alpha)
    return np.array(
        [caputo_direct_apply(values[: k + 1], sets[k - 1]) for k in range(1, mesh.levels + 1)]
    )


# --- kernel bound predicates ------------------------------------------------
# Used by the property tests and the kernel-check command.  The history-cell
# bounds pair cell n with the kernel evaluated at the level-k node, which is
# the index pairing that keeps every kernel argument positive.


def lemma_a_sides(mesh: TimeMesh, alpha: float, kernels: KernelSet):
    """((upper_bound, D0), (kernel_diffs, cell_bounds)) for property (a).

    The difference bound compares D^{(k-n-1,k)} - D^{(k-n,k)} against 4/11 of
    the adjacent difference of the cell means a^{(k-n-1,k)} - a^{(k-n,k)} --
    the same integral means the upper bound is phrased in.
    """
    k = kernels.level
    tau_k = mesh.steps[k - 1]
    bound0 = (24.0 / (11.0 * tau_k)) * omega(2 - alpha, tau_k)
    if k < 2:
        return (bound0, kernels.d[0]), (np.empty(0), np.empty(0))
    n = np.arange(1, k)
    diffs = kernels.d[k - n - 1] - kernels.d[k - n]
    cell = kernels.a[k - n - 1] - kernels.a[k - n]
    return (bound0, kernels.d[0]), (diffs, (4.0 / 11.0) * cell)


def lemma_b_sides(mesh: TimeMesh, alpha: float, kernels: KernelSet):
    """(lower, upper) of the monotonicity sandwich 0 <= lower < upper, n = 1..k-1.

    lower = (1 + rho_n) b^{(k-n,k)}, upper = D^{(k-n-1,k)} - D^{(k-n,k)}.
    For far history lower/upper tends to 1/6, so the sandwich is strict.
    """
    k = kernels.level
    if k < 2:
        return np.empty(0), np.empty(0)
    n = np.arange(1, k)
    rho_n = mesh.ratios[n - 1]
    lower = (1 + rho_n) * kernels.b[k - n]
    upper = kernels.d[k - n - 1] - kernels.d[k - n]
    return lower, upper


def lemma_c_sides(mesh: TimeMesh, kernels: KernelSet):
    """(D^{(1,k)}, ((1-2 theta)/(1-theta)) D^{(0,k)}); property (c) wants lhs < rhs."""
    if kernels.level < 2:
        raise ValueError("property (c) applies for k >= 2")
    frac = (1 - 2 * mesh.theta) / (1 - mesh.theta)
    return float(kernels.d[1]), float(frac * kernels.d[0])


def _margin(lhs, rhs):
    """Normalized margin of lhs >= rhs (nonnegative iff it holds exactly)."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-300)
    return (lhs - rhs) / scale


def check_kernel_properties(mesh: TimeMesh, alpha: float, slack: float = 1e-12) -> dict:
    """Worst normalized margins of every kernel predicate over all levels.

    A margin >= -slack counts as holding; 'ok' aggregates all predicates.
    """
    sets = cached_kernels(mesh, alpha)
    worst = {
        "a_upper": np.inf,
        "a_diff": np.inf,
        "b_lower": np.inf,
        "b_upper": np.inf,
        "c": np.inf,
        "positivity": np.inf,
    }
    for ks in sets:
        (bound0, d0), (diffs, cells) = lemma_a_sides(mesh, alpha, ks)
        worst["a_upper"] = min(worst["a_upper"], float(_margin(bound0, d0)))
        worst["positivity"] = min(worst["positivity"], float(np.min(ks.d) / abs(ks.d[0])))
        if ks.level >= 2:
            worst["a_diff"] = min(worst["a_diff"], float(np.min(_margin(diffs, cells))))
            lower, upper = lemma_b_sides(mesh, alpha, ks)
            scale = np.maximum(np.abs(upper), np.abs(ks.d[0]))
            worst["b_lower"] = min(worst["b_lower"], float(np.min(lower / scale)))
            worst["b_upper"] = min(worst["b_upper"], float(np.min(_margin(upper, lower))))
            lhs, rhs = lemma_c_sides(mesh, ks)
            worst["c"] = min(worst["c"], float(_margin(rhs, lhs)))
    worst["ok"] = bool(all(v >= -slack for key, v in worst.items() if key != "ok"))
    return worst
