"""Error norms, temporal convergence studies, and self-contained reports."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import default_collocation
from .kernels import cached_kernels, complementary_C, direct_series, omega
from .mesh import MeshSpec, TimeMesh, build_graded_mesh
from .network import Network
from .optimize import TrainConfig, TrainResult, _set_flat_params, train_marching, train_stagewise
from .problems import ProblemSpec
from .soe import SoeApprox, build_soe, default_dt_cutoff, fast_series
from .constraints import trial_eval


def error_inf(predicted: np.ndarray, exact: np.ndarray) -> float:
    """Maximum absolute pointwise difference over a shared evaluation grid."""
    predicted = np.asarray(predicted, dtype=float)
    exact = np.asarray(exact, dtype=float)
    if predicted.shape != exact.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {exact.shape}")
    return float(np.max(np.abs(predicted - exact)))


def error_l2(predicted: np.ndarray, exact: np.ndarray) -> float:
    """Relative discrete 2-norm ||p - e|| / ||e||."""
    predicted = np.asarray(predicted, dtype=float)
    exact = np.asarray(exact, dtype=float)
    if predicted.shape != exact.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {exact.shape}")
    denom = float(np.linalg.norm(exact))
    if denom == 0.0:
        raise ValueError("exact field vanishes identically on the grid")
    return float(np.linalg.norm(predicted - exact) / denom)


def eval_grid(box, per_axis: int = 101) -> np.ndarray:
    """Lattice of per_axis^dim points covering the closed box, shape (dim, M)."""
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=0)


def rates_from_errors(errors) -> list[float]:
    """log2(E(K)/E(2K)) along a doubling ladder."""
    errors = list(errors)
    return [float(np.log2(errors[i] / errors[i + 1])) for i in range(len(errors) - 1)]


def resolve_gamma(expr, alpha: float) -> float:
    """Grading from '1', '2/alpha', '(3-alpha)/alpha' or a plain number."""
    if isinstance(expr, (int, float)):
        return float(expr)
    text = str(expr).strip().lower().replace(" ", "")
    if text in ("2/alpha", "2/a"):
        return 2.0 / alpha
    if text in ("(3-alpha)/alpha", "(3-a)/a"):
        return (3.0 - alpha) / alpha
    return float(text)


@dataclass
class Report:
    """Emitted results of a run; re-running the echoed config reproduces it."""

    problem: str
    method: str
    config: dict
    levels: list
    e_inf: list
    e_2: list
    rates_inf: list = field(default_factory=list)
    rates_2: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict)
    soe_certificates: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.e_inf and not self.rates_inf:
            self.rates_inf = rates_from_errors(self.e_inf)
        if self.e_2 and not self.rates_2:
            self.rates_2 = rates_from_errors(self.e_2)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Flat (field, index, value) rows; %.17g numbers, LF line endings."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["field", "index", "value"])

        def emit(name, value):
            if isinstance(value, dict):
                for key in sorted(value):
                    emit(f"{name}.{key}", value[key])
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    emit(f"{name}[{i}]", item)
            elif isinstance(value, float):
                writer.writerow([name, "", f"{value:.17g}"])
            else:
                writer.writerow([name, "", value])

        for name, value in sorted(self.__dict__.items()):
            emit(name, value)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Report":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        data: dict = {}
        for name, _, value in rows:
            _assign(data, name, value)
        for key in ("levels",):
            if key in data:
                data[key] = [int(v) for v in data[key]]
        for key in ("e_inf", "e_2", "rates_inf", "rates_2", "timings"):
            if key in data:
                data[key] = [float(v) for v in data[key]]
            else:
                data[key] = []
        for key, cast in (("seed", int),):
            data[key] = cast(data.get(key, 0))
        for key in ("config", "estimates"):
            data.setdefault(key, {})
        data.setdefault("soe_certificates", [])
        return cls(**data)


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _assign(data: dict, name: str, value: str):
    value = _parse_scalar(value)
    parts = name.split(".")
    target = data
    for part in parts[:-1]:
        key, idx = _split_index(part)
        if idx is None:
            target = target.setdefault(key, {})
        else:
            lst = target.setdefault(key, [])
            while len(lst) <= idx:
                lst.append({})
            target = lst[idx]
    key, idx = _split_index(parts[-1])
    if idx is None:
        target[key] = value
    else:
        lst = target.setdefault(key, [])
        while len(lst) <= idx:
            lst.append(None)
        lst[idx] = value


def _split_index(part: str):
    if part.endswith("]") and "[" in part:
        key, num = part[:-1].split("[")
        return key, int(num)
    return part, None


def scheme_consistency_errors(
    problem: ProblemSpec, mesh: TimeMesh, soe: SoeApprox | None
) -> tuple[float, float]:
    """(weighted, pointwise-max) consistency error of the scheme on the exact solution.

    The weighted measure convolves per-level errors with the complementary
    kernels -- the quantity the convergence theory bounds and the one that
    tracks solution error; the pointwise maximum saturates for singular
    solutions and is reported for reference only.
    """
    if problem.exact is None:
        raise ValueError(f"problem {problem.name} has no exact solution")
    pts = default_collocation(problem, mesh, n_interior_axis=4, seed=1).points
    series = np.stack([problem.exact(pts, t) for t in mesh.nodes])
    if soe is None:
        got = direct_series(mesh, problem.alpha, series)
    else:
        got = fast_series(mesh, soe, series)
    exact = np.stack([problem.exact_caputo(pts, mesh.offset(k)) for k in range(1, mesh.levels + 1)])
    per_level = np.max(np.abs(got - exact), axis=1)
    weights = complementary_C(cached_kernels(mesh, problem.alpha))
    return float(weights[::-1] @ per_level), float(np.max(per_level))


def feasible_soe_eps(requested: float, dt_cutoff: float, alpha: float) -> float:
    """Clamp an SOE tolerance to the f64 roundoff floor at the given cutoff."""
    floor = float(omega(1 - alpha, dt_cutoff)) * 5e-13
    return max(requested, floor)


def marching_errors(
    problem: ProblemSpec,
    mesh: TimeMesh,
    soe: SoeApprox,
    config: TrainConfig,
    grid_per_axis: int = 101,
):
    """Train the marching solver and measure E_inf/E_2 on the evaluation grid."""
    result = train_marching(problem, mesh, soe, config)
    grid = eval_grid(problem.box, grid_per_axis)
    e_inf = 0.0
    net = result.trial.net
    saved = result.state.param_snapshots
    for k in range(1, mesh.levels + 1):
        _set_flat_params(net, saved[k])
        pred = trial_eval(result.trial, grid, float(mesh.nodes[k]), problem.dim).value.value
        exact = problem.exact(grid, mesh.nodes[k])
        e_inf = max(e_inf, error_inf(pred, exact))
    e_2 = error_l2(pred, exact)  # final level
    return e_inf, e_2, result


def stagewise_errors(
    problem: ProblemSpec,
    mesh: TimeMesh,
    soe: SoeApprox,
    config: TrainConfig,
    grid_per_axis: int = 101,
    inverse: bool = False,
):
    """Train stage-wise (forward or inverse) and measure grid errors."""
    from .optimize import train_inverse

    if inverse:
        result = train_inverse(problem, mesh, config)
    else:
        result = train_stagewise(problem, mesh, soe, config)
    grid = eval_grid(problem.box, grid_per_axis)
    e_inf = 0.0
    reference = problem.exact
    for k in range(1, mesh.levels + 1):
        t_off = float(mesh.offset(k))
        pred = trial_eval(result.trial, grid, t_off, problem.dim).value.value
        if reference is not None:
            e_inf = max(e_inf, error_inf(pred, reference(grid, t_off)))
    if reference is not None:
        e_2 = error_l2(pred, reference(grid, float(mesh.offset(mesh.levels))))
    else:
        e_inf, e_2 = float("nan"), float("nan")
    return e_inf, e_2, result


def convergence_study(
    problem: ProblemSpec,
    method: str,
    k_list,
    gamma,
    config: TrainConfig | None = None,
    grid_per_axis: int = 101,
) -> Report:
    """Run one method across a doubling K ladder and report errors and rates.

    Methods: 'direct-scheme' and 'fast-scheme' apply the discretization to
    the exact solution's time series (no training); 'marching' and
    'stagewise' train networks.
    """
    k_list = [int(k) for k in k_list]
    for a, b in zip(k_list[:-1], k_list[1:]):
        if b != 2 * a:
            raise ValueError(f"K list must double strictly: {k_list}")
    config = config or TrainConfig()
    gamma_val = resolve_gamma(gamma, problem.alpha)
    e_inf, e_2, certs, timings = [], [], [], []
    estimates: dict = {}
    for K in k_list:
        mesh = build_graded_mesh(MeshSpec(problem.horizon, K, gamma_val, problem.alpha))
        started = time.perf_counter()
        soe = None
        if method != "direct-scheme":
            eps = feasible_soe_eps(config.eps_soe, default_dt_cutoff(mesh), problem.alpha)
            soe = build_soe(problem.alpha, eps, default_dt_cutoff(mesh), mesh.horizon)
            certs.append(soe.certificate())
        if method in ("direct-scheme", "fast-scheme"):
            weighted, pointwise = scheme_consistency_errors(problem, mesh, soe)
            e_inf.append(weighted)
            e_2.append(pointwise)
        elif method == "marching":
            ei, e2, _ = marching_errors(problem, mesh, soe, config, grid_per_axis)
            e_inf.append(ei)
            e_2.append(e2)
        elif method == "stagewise":
            ei, e2, result = stagewise_errors(problem, mesh, soe, config, grid_per_axis)
            e_inf.append(ei)
            e_2.append(e2)
            estimates = result.estimates
        else:
            raise ValueError(f"unknown method '{method}'")
        timings.append(time.perf_counter() - started)
    return Report(
        problem=problem.name,
        method=method,
        config={"gamma": gamma_val, "eps_soe": config.eps_soe, "m_step": config.m_step,
                "m_stage": config.m_stage, "lr": config.lr, "widths": list(config.widths or ()),
                "activation": config.activation, "scale_n": config.scale_n,
                "eps_tol": config.eps_tol, "alpha": problem.alpha},
        levels=k_list,
        e_inf=e_inf,
        e_2=e_2,
        estimates=estimates,
        soe_certificates=certs,
        timings=timings,
        seed=config.seed,
    )
