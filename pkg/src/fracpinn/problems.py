"""Benchmark problem definitions: operators, manufactured solutions, sources.

Each problem couples a nonlinear spatial operator N[v; params] with a
manufactured exact solution whose temporal factor is a monomial combination,
so the Caputo derivative of the exact solution is closed-form and every
source term can be checked for consistency at construction time.

Operators are written against a jet interface (value/dx/dxx attributes), so
the same code runs on tape tensors during training and on numpy arrays in
the consistency checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gamma as _gamma


@dataclass(frozen=True)
class CaputoMonomial:
    """Closed-form Caputo oracle for t^mu: derivative Gamma(mu+1)/Gamma(mu+1-alpha) t^(mu-alpha)."""

    exponent: float
    alpha: float

    def value(self, t):
        return np.asarray(t, dtype=float) ** self.exponent

    def derivative(self, t):
        mu, al = self.exponent, self.alpha
        t = np.asarray(t, dtype=float)
        return _gamma(mu + 1) / _gamma(mu + 1 - al) * t ** (mu - al)


@dataclass
class NumpyJet:
    """Plain-array stand-in for network jets, used by consistency checks."""

    value: np.ndarray
    dx: list
    dxx: list


@dataclass
class ProblemSpec:
    """A benchmark instance: operator, data, exact solution and constraint mode."""

    name: str
    dim: int
    box: tuple
    alpha: float
    horizon: float
    mode: str  # "hard" or "soft"
    params: dict
    operator: Callable  # (jet, params) -> residual operator term N[v; params]
    source: Callable  # g(X, t)
    ic: Callable  # phi(X)
    bc: Callable  # phi_b(X, t)
    exact: Callable | None = None
    exact_caputo: Callable | None = None
    exact_jet: Callable | None = None  # NumpyJet of the exact solution
    lift: Callable | None = None  # NumpyJet of the time-independent initial state
    time_power: float = 1.0  # exponent of the hard-constraint time factor
    terminal: Callable | None = None  # psi(X) at t = horizon
    unknowns: tuple = ()
    true_params: dict = field(default_factory=dict)

    def residual_consistency(self, n_points: int = 100, seed: int = 2024) -> float:
        """Max |Caputo[v] + N[v] - g| of the exact solution at random points."""
        if self.exact is None:
            raise ValueError(f"problem {self.name} has no exact solution")
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        x = lo[:, None] + (hi - lo)[:, None] * rng.uniform(0.05, 0.95, size=(self.dim, n_points))
        t = rng.uniform(0.05, 1.0, size=n_points) * self.horizon
        res = self.exact_caputo(x, t) + self.operator(self.exact_jet(x, t), self.params)
        return float(np.max(np.abs(res - self.source(x, t))))


def _check_consistency(problem: ProblemSpec) -> ProblemSpec:
    worst = problem.residual_consistency()
    if worst > 1e-10:
        raise AssertionError(
            f"manufactured source of {problem.name} is inconsistent: residual {worst:.3e}"
        )
    return problem


def _sines(x):
    prod = np.sin(np.pi * x[0])
    for row in x[1:]:
        prod = prod * np.sin(np.pi * row)
    return prod


def ntfsde(dim: int, alpha: float, lambda1: float = 1.0, lambda2: float = 1.0) -> ProblemSpec:
    """Nonlinear subdiffusion: Caputo_t v + l1 (v^3 - v) - l2 Lap(v) = g.

    Exact solution t^(2+alpha) * prod_i sin(pi x_i) on the unit box with
    homogeneous initial and boundary data.
    """
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3")
    cap = _gamma(3 + alpha) / 2.0

    def exact(x, t):
        return np.asarray(t, dtype=float) ** (2 + alpha) * _sines(x)

    def exact_caputo(x, t):
        return cap * np.asarray(t, dtype=float) ** 2 * _sines(x)

    def exact_jet(x, t):
        tfac = np.asarray(t, dtype=float) ** (2 + alpha)
        val = tfac * _sines(x)
        dx, dxx = [], []
        for i in range(dim):
            others = tfac * np.prod(
                [np.sin(np.pi * x[j]) for j in range(dim) if j != i], axis=0
            ) if dim > 1 else tfac
            dx.append(np.pi * np.cos(np.pi * x[i]) * others)
            dxx.append(-np.pi**2 * val)
        return NumpyJet(val, dx, dxx)

    def operator(jet, params):
        v = jet.value
        lap = jet.dxx[0]
        for extra in jet.dxx[1:]:
            lap = lap + extra
        return params["lambda1"] * (v * v * v - v) - params["lambda2"] * lap

    def source(x, t):
        v = exact(x, t)
        return exact_caputo(x, t) + lambda1 * (v**3 - v) + lambda2 * dim * np.pi**2 * v

    zero = lambda x, t=None: np.zeros(np.shape(x[0] * (1 if t is None else t)))
    return _check_consistency(
        ProblemSpec(
            name=f"ntfsde{dim}d",
            dim=dim,
            box=((0.0, 1.0),) * dim,
            alpha=alpha,
            horizon=1.0,
            mode="hard",
            params={"lambda1": lambda1, "lambda2": lambda2},
            operator=operator,
            source=source,
            ic=lambda x: np.zeros(x.shape[1]),
            bc=zero,
            exact=exact,
            exact_caputo=exact_caputo,
            exact_jet=exact_jet,
        )
    )


def burgers(p: float, alpha: float, lambda1: float = 1.0, lambda2: float = 1.0) -> ProblemSpec:
    """Generalized viscous Burgers: Caputo_t v + l1 v^p v_x - l2 v_xx = g.

    Exact solution (1 + omega_{1+alpha}(t)) sin(pi x): its Caputo derivative
    is sin(pi x) and the first derivative blows up like t^(alpha-1) at 0.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    ga = _gamma(1 + alpha)

    def tfac(t):
        return 1.0 + np.asarray(t, dtype=float) ** alpha / ga

    def exact(x, t):
        return tfac(t) * np.sin(np.pi * x[0])

    def exact_caputo(x, t):
        return np.sin(np.pi * x[0]) * np.ones(np.shape(np.asarray(t) * x[0]))

    def exact_jet(x, t):
        f = tfac(t)
        val = f * np.sin(np.pi * x[0])
        return NumpyJet(
            val, [np.pi * f * np.cos(np.pi * x[0])], [-np.pi**2 * val]
        )

    def operator(jet, params):
        v = jet.value
        return params["lambda1"] * v**p * jet.dx[0] - params["lambda2"] * jet.dxx[0]

    def source(x, t):
        j = exact_jet(x, t)
        return exact_caputo(x, t) + lambda1 * j.value**p * j.dx[0] - lambda2 * j.dxx[0]

    def lift(x):
        sx = np.sin(np.pi * x[0])
        return NumpyJet(sx, [np.pi * np.cos(np.pi * x[0])], [-np.pi**2 * sx])

    return _check_consistency(
        ProblemSpec(
            name="burgers",
            dim=1,
            box=((0.0, 1.0),),
            alpha=alpha,
            horizon=1.0,
            mode="hard",
            params={"lambda1": lambda1, "lambda2": lambda2, "p": p},
            operator=operator,
            source=source,
            ic=lambda x: np.sin(np.pi * x[0]),
            bc=lambda x, t: np.zeros(np.shape(x[0] * t)),
            exact=exact,
            exact_caputo=exact_caputo,
            exact_jet=exact_jet,
            lift=lift,
            # the deviation from the initial state grows like t^alpha, so the
            # time factor matches it; a plain factor t would force the raw
            # network toward t^(alpha-1) blow-up on graded meshes
            time_power=alpha,
        )
    )


def fisher_nagumo_reference(dim: int, rho: float, phi_angle: float):
    """Integer-order Fisher-Nagumo profile used for TFFN initial/boundary data."""
    speed = (2 * rho - 1) / np.sqrt(2.0)

    def ref(x, t):
        t = np.asarray(t, dtype=float)
        if dim == 1:
            arg = (x[0] - t * speed) / np.sqrt(8.0)
        else:
            arg = (x[0] * np.sin(phi_angle) + x[1] * np.cos(phi_angle)) / np.sqrt(8.0) - t * speed
        return 0.5 + 0.5 * np.tanh(arg)

    return ref


def tffn(dim: int, alpha: float, rho_reaction: float = 1.0, phi_angle: float = np.pi / 2) -> ProblemSpec:
    """Time-fractional Fisher-Nagumo with no source and no exact solution.

    Caputo_t v + adv . grad v + v(v-1)(rho - v) = 0, with initial/boundary
    targets taken from the integer-order profile; soft-constraint mode.
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    ref = fisher_nagumo_reference(dim, rho_reaction, phi_angle)

    def operator(jet, params):
        v = jet.value
        advect = jet.dx[0]
        for extra in jet.dx[1:]:
            advect = advect + extra
        return advect + v * (v - 1.0) * (params["rho"] - v)

    return ProblemSpec(
        name=f"tffn{dim}d",
        dim=dim,
        box=((0.0, 1.0),) * dim,
        alpha=alpha,
        horizon=1.0,
        mode="soft",
        params={"rho": rho_reaction, "phi": phi_angle},
        operator=operator,
        source=lambda x, t: np.zeros(np.shape(x[0] * t)),
        ic=lambda x: ref(x, 0.0),
        bc=ref,
        exact=None,
    )


def tfrd_inverse(
    alpha_true: float = 0.8, lambda1_true: float = 1.0, lambda2_true: float = 1.0
) -> ProblemSpec:
    """2D reaction-diffusion inverse problem: recover (alpha, lambda1, lambda2).

    Caputo_t v + l1 Lap(v) + l2 (v^3 - v) = g with the smooth manufactured
    solution of the 2D subdiffusion benchmark; terminal observations are
    noise-free samples of the exact solution at t = T.
    """
    base = ntfsde(2, alpha_true)
    exact, exact_caputo, exact_jet = base.exact, base.exact_caputo, base.exact_jet

    def operator(jet, params):
        v = jet.value
        lap = jet.dxx[0] + jet.dxx[1]
        return params["lambda1"] * lap + params["lambda2"] * (v * v * v - v)

    def source(x, t):
        j = exact_jet(x, t)
        lap = j.dxx[0] + j.dxx[1]
        return exact_caputo(x, t) + lambda1_true * lap + lambda2_true * (j.value**3 - j.value)

    return _check_consistency(
        ProblemSpec(
            name="tfrd-inv",
            dim=2,
            box=((0.0, 1.0), (0.0, 1.0)),
            alpha=alpha_true,
            horizon=1.0,
            mode="hard",
            params={"lambda1": lambda1_true, "lambda2": lambda2_true},
            operator=operator,
            source=source,
            ic=lambda x: np.zeros(x.shape[1]),
            bc=lambda x, t: np.zeros(np.shape(x[0] * t)),
            exact=exact,
            exact_caputo=exact_caputo,
            exact_jet=exact_jet,
            terminal=lambda x: exact(x, 1.0),
            unknowns=("alpha", "lambda1", "lambda2"),
            true_params={"alpha": alpha_true, "lambda1": lambda1_true, "lambda2": lambda2_true},
        )
    )


def tfac_inverse(
    alpha_true: float = 0.5,
    eps_true: float = np.sqrt(2.0) / (4 * np.pi),
    psi_true: float = 1.0,
    singular: bool = False,
) -> ProblemSpec:
    """2D Allen-Cahn inverse problem: recover (alpha, eps, mobility).

    Caputo_t v = psi (eps^2 Lap(v) - (v^3 - v)) + g.  The default uses the
    smooth manufactured solution; singular=True switches the temporal factor
    to 1 + omega_{1+alpha}(t) (weak initial singularity, soft mode since the
    initial data is then nonhomogeneous).
    """
    al = alpha_true
    ga = _gamma(1 + al)

    if singular:
        tfac_f = lambda t: 1.0 + np.asarray(t, dtype=float) ** al / ga
        cap_f = lambda t: np.ones_like(np.asarray(t, dtype=float))
    else:
        tfac_f = lambda t: np.asarray(t, dtype=float) ** (2 + al)
        cap_f = lambda t: _gamma(3 + al) / 2.0 * np.asarray(t, dtype=float) ** 2

    def exact(x, t):
        return tfac_f(t) * np.sin(np.pi * x[0]) * np.sin(np.pi * x[1])

    def exact_caputo(x, t):
        return cap_f(t) * np.sin(np.pi * x[0]) * np.sin(np.pi * x[1])

    def exact_jet(x, t):
        f = tfac_f(t)
        sx, sy = np.sin(np.pi * x[0]), np.sin(np.pi * x[1])
        val = f * sx * sy
        return NumpyJet(
            val,
            [np.pi * f * np.cos(np.pi * x[0]) * sy, np.pi * f * sx * np.cos(np.pi * x[1])],
            [-np.pi**2 * val, -np.pi**2 * val],
        )

    def operator(jet, params):
        v = jet.value
        lap = jet.dxx[0] + jet.dxx[1]
        eps2 = params["eps"] * params["eps"]
        return params["mobility"] * ((v * v * v - v) - eps2 * lap)

    def source(x, t):
        j = exact_jet(x, t)
        lap = j.dxx[0] + j.dxx[1]
        return exact_caputo(x, t) + psi_true * ((j.value**3 - j.value) - eps_true**2 * lap)

    return _check_consistency(
        ProblemSpec(
            name="tfac-inv",
            dim=2,
            box=((0.0, 1.0), (0.0, 1.0)),
            alpha=al,
            horizon=1.0,
            mode="soft" if singular else "hard",
            params={"eps": eps_true, "mobility": psi_true},
            operator=operator,
            source=source,
            ic=lambda x: exact(x, 0.0),
            bc=lambda x, t: exact(x, t) * 0.0 if not singular else exact(x, t),
            exact=exact,
            exact_caputo=exact_caputo,
            exact_jet=exact_jet,
            terminal=lambda x: exact(x, 1.0),
            unknowns=("alpha", "eps", "mobility"),
            true_params={"alpha": al, "eps": eps_true, "mobility": psi_true},
        )
    )


REGISTRY: dict[str, Callable[..., ProblemSpec]] = {
    "ntfsde1d": lambda alpha=0.5, **kw: ntfsde(1, alpha, **kw),
    "ntfsde2d": lambda alpha=0.5, **kw: ntfsde(2, alpha, **kw),
    "ntfsde3d": lambda alpha=0.5, **kw: ntfsde(3, alpha, **kw),
    "burgers": lambda alpha=0.5, p=2.0, **kw: burgers(p, alpha, **kw),
    "tffn1d": lambda alpha=0.5, **kw: tffn(1, alpha, **kw),
    "tffn2d": lambda alpha=0.5, **kw: tffn(2, alpha, **kw),
    "tfrd-inv": lambda alpha=0.8, **kw: tfrd_inverse(alpha_true=alpha, **kw),
    "tfac-inv": lambda alpha=0.5, **kw: tfac_inverse(alpha_true=alpha, **kw),
}


def make_problem(name: str, **kwargs) -> ProblemSpec:
    if name not in REGISTRY:
        raise KeyError(f"unknown problem '{name}'; choose from {sorted(REGISTRY)}")
    return REGISTRY[name](**kwargs)
