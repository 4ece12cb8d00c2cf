"""Experiment orchestration: one function per subcommand, each filling an ExperimentReport."""

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from bilab.cauchy import (
    cauchy_data,
    cauchy_norm,
    navier_to_neumann,
    random_linear_solution,
    stability_probe,
)
from bilab.config import ExperimentConfig, load_config
from bilab.errors import BilabError, NotInRangeError
from bilab.export import ExportParams, save_field, write_report, write_table
from bilab.grid import (
    DomainGrid,
    ScalarField,
    boundary_mode,
    c2_norm,
    inner_product,
    jet,
    laplacian,
    normal_derivative,
)
from bilab.linear import (
    AssembledOperator,
    NavierData,
    assemble,
    interior_residual,
    linear_navier_to_neumann,
    solve_linear,
    solve_navier,
)
from bilab.logging import configure_module_logger
from bilab.nonlinearity import (
    Nonlinearity,
    derivative_bound_check,
    derivative_consistency,
    make_nonlinearity,
    remainder_R,
    remainder_difference_expansion,
    taylor_identity_check,
)
from bilab.recovery import (
    assemble_identity_system,
    gauge_pair,
    generate_solution_pairs,
    phi_independence_check,
    reachable_sweep,
    recover_coefficient_difference,
)
from bilab.runge import (
    Subdomain,
    approximate_local_solution,
    build_basis,
    local_residual,
    point_control,
    point_source_solution,
)
from bilab.second_map import (
    ClampedSpace,
    apply_L_clamped,
    clamped_bump,
    distance_to_Z,
    dT_identity_check,
    inverse_on_Z,
    project_Z,
    second_solution_map_T,
)
from bilab.solution_map import (
    FixedPointConfig,
    NewtonConfig,
    converse_v,
    directional_derivative_S,
    fixed_point_Phi,
    linearize,
    nonlinear_residual,
    quadratic_smallness,
    solution_map_S,
    solve_nonlinear,
    tangency_check,
)

logger = configure_module_logger(__name__)

# named seed streams, combined with the configured seed as default_rng([seed, stream])
STREAMS = {
    "round_trip": 1,
    "gram": 2,
    "coincident": 3,
    "project": 4,
    "recover": 5,
    "directions": 6,
    "appendix": 7,
    "point_control": 8,
}

COMPARISONS: Dict[str, Callable[[float, float], bool]] = {
    "<=": lambda value, tolerance: value <= tolerance,
    "<": lambda value, tolerance: value < tolerance,
    ">=": lambda value, tolerance: value >= tolerance,
    ">": lambda value, tolerance: value > tolerance,
}


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    comparison: str
    passed: bool
    runtime: Optional[float] = None


@dataclass
class ExperimentReport:
    subcommand: str
    config: dict
    checks: List[Check] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)
    data: dict = field(default_factory=dict)
    error: Optional[str] = None
    runtime: Optional[float] = None
    _clock: float = field(default_factory=time.perf_counter, repr=False)

    def check(self, name: str, value: float, tolerance: float, comparison: str = "<=") -> bool:
        if any(c.name == name for c in self.checks):
            raise ValueError(f"Check '{name}' recorded twice")
        value = float(value)
        passed = bool(np.isfinite(value) and COMPARISONS[comparison](value, tolerance))
        now = time.perf_counter()
        self.checks.append(
            Check(name, value, float(tolerance), comparison, passed, runtime=now - self._clock)
        )
        self._clock = now
        status = "PASS" if passed else "FAIL"
        logger.info(f"[{status}] {name}: {value:.6g} {comparison} {tolerance:.3g}")
        return passed

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    def to_dict(self, include_runtimes: bool = False) -> dict:
        checks = []
        for c in self.checks:
            entry = {
                "name": c.name,
                "value": c.value,
                "tolerance": c.tolerance,
                "comparison": c.comparison,
                "passed": c.passed,
            }
            if include_runtimes:
                entry["runtime"] = c.runtime
            checks.append(entry)
        report = {
            "subcommand": self.subcommand,
            "config": self.config,
            "checks": checks,
            "artifacts": sorted(self.artifacts),
            "data": self.data,
            "error": self.error,
            "passed": self.passed,
        }
        if include_runtimes:
            report["runtime"] = self.runtime
        return report


@dataclass
class Scenario:
    """Grid, Q1 with its base solution and the iteration controls of one config."""

    cfg: ExperimentConfig
    grid: DomainGrid
    Q1: Nonlinearity
    w1: ScalarField
    fp: FixedPointConfig
    newton: NewtonConfig

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Scenario":
        grid = DomainGrid(cfg.n, cfg.n)
        Q1 = make_nonlinearity(cfg.q1_kind, cfg.q1_params, cfg.q1_gamma)
        fp = FixedPointConfig(
            tol=cfg.fp_tol,
            max_iter=cfg.fp_max_iter,
            delta_cap=cfg.delta_cap,
            quad_nodes=cfg.quad_nodes,
            base_tol=cfg.base_tol,
        )
        newton = NewtonConfig(tol=cfg.newton_tol, max_iter=cfg.newton_max_iter)
        w1 = base_solution(grid, Q1, cfg, newton)
        return cls(cfg=cfg, grid=grid, Q1=Q1, w1=w1, fp=fp, newton=newton)

    def rng(self, stream: str) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, STREAMS[stream]])

    def bump(self) -> ScalarField:
        return clamped_bump(self.grid, self.cfg.gauge_amplitude, radius=self.cfg.gauge_radius)


def _mode_data(grid: DomainGrid, coefficients: Sequence[float]) -> np.ndarray:
    return sum(
        (c * boundary_mode(grid, k) for k, c in enumerate(coefficients)),
        np.zeros(grid.n_boundary),
    )


def base_solution(
    grid: DomainGrid, Q: Nonlinearity, cfg: ExperimentConfig, newton: NewtonConfig
) -> ScalarField:
    if cfg.base == "zero":
        return ScalarField.zeros(grid)
    bc = NavierData.from_arrays(grid, _mode_data(grid, cfg.base_f0), _mode_data(grid, cfg.base_f1))
    logger.info("Computing base solution by Newton iteration")
    return solve_nonlinear(Q, ScalarField.zeros(grid), bc, cfg=newton)


def fixed_direction(op: AssembledOperator, norm: float) -> ScalarField:
    """Deterministic solution of L v = 0 scaled to the given c2 norm."""
    grid = op.grid
    bc = NavierData.from_arrays(
        grid,
        boundary_mode(grid, 1) + 0.5 * boundary_mode(grid, 2),
        0.5 * boundary_mode(grid, 3),
    )
    v = solve_linear(op, ScalarField.zeros(grid), bc)
    return v * (norm / c2_norm(v))


def scaled_random(op: AssembledOperator, rng: np.random.Generator, norm: float) -> ScalarField:
    v = random_linear_solution(op, rng, 5, np.inf)
    return v * (norm / c2_norm(v))


def _ratio(a: float, b: float) -> float:
    if b == 0.0:
        return 0.0 if a == 0.0 else float("inf")
    return a / b


def _spread(ratios: Sequence[float]) -> float:
    """max(ratios) / ratios[0]; all-zero sequences count as flat."""
    return _ratio(max(ratios), ratios[0]) if ratios[0] or max(ratios) else 0.0


def _check_second_order(report: ExperimentReport, prefix: str, errors: Sequence[float]) -> None:
    """Error ratio in [3.5, 4.5] when eps halves, or exactness when errors vanish."""
    if max(errors) <= 1e-13:
        report.check(f"{prefix}_max_error", max(errors), 1e-12)
        return
    ratio = _ratio(errors[0], errors[1])
    report.check(f"{prefix}_ratio_min", ratio, 3.5, ">=")
    report.check(f"{prefix}_ratio_max", ratio, 4.5, "<=")


def run_forward(s: Scenario, params: ExportParams, report: ExperimentReport) -> None:
    rows = []
    residuals = []
    last = None
    for n in s.cfg.forward_grids:
        grid = DomainGrid(n, n)
        op = assemble(grid)
        exact = ScalarField.from_function(grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        F = 4.0 * np.pi**4 * exact
        u, _ = solve_navier(op, F, NavierData.zeros(grid))
        residuals.append(interior_residual(op, u, F))
        rows.append({"n": n, "h": grid.hx, "error": (u - exact).sup()})
        last = u
    for previous, row in zip(rows, rows[1:]):
        row["order"] = np.log(previous["error"] / row["error"]) / np.log(previous["h"] / row["h"])
    rows[0]["order"] = float("nan")
    report.data["convergence"] = rows
    report.check("forward_min_order", min(r["order"] for r in rows[1:]), 1.9, ">=")
    report.check("forward_max_residual", max(residuals), 1e-9)

    power = make_nonlinearity("power", (3.0,))
    exact = ScalarField.from_function(
        s.grid, lambda x, y: 0.1 * np.sin(np.pi * x) * np.sin(np.pi * y)
    )
    F = ScalarField(s.grid, 4.0 * np.pi**4 * exact.values + exact.values**3)
    u = solve_nonlinear(power, F, NavierData.zeros(s.grid), cfg=s.newton)
    report.check("newton_manufactured_rel_error", (u - exact).sup() / 0.1, 0.02)

    write_table(rows, params.path("forward_convergence.csv"))
    save_field(last, params.path("forward_u.csv"))
    report.artifacts += ["forward_convergence.csv", "forward_u.csv"]


def run_fixpoint(s: Scenario, params: ExportParams, report: ExperimentReport) -> None:
    cfg, Q, w = s.cfg, s.Q1, s.w1
    op = linearize(Q, w)
    v = fixed_direction(op, cfg.v_norm)

    history: List[float] = []
    r, iterations = fixed_point_Phi(Q, w, v, s.fp, op, history)
    u = w + v + r
    report.check("fixpoint_iterations", iterations, 15)
    report.check("solution_residual", nonlinear_residual(Q, u), 1e-8)

    quadratic = quadratic_smallness(Q, w, v, cfg.scales, s.fp, op)
    report.data["quadratic_smallness"] = dataclasses.asdict(quadratic)
    report.check("quadratic_smallness_spread", _spread(quadratic.ratios), 2.0)
    report.check("quadratic_max_iterations", max(quadratic.iterations), 15)

    h = fixed_direction(op, cfg.v_norm / max(cfg.eps))
    tangency = tangency_check(Q, w, h, cfg.eps, s.fp, op)
    report.data["tangency"] = {"eps": tangency.eps, "errors": tangency.errors}
    _check_second_order(report, "tangency", tangency.errors)

    rng = s.rng("round_trip")
    worst = 0.0
    for _ in range(cfg.round_trips):
        v_k = random_linear_solution(op, rng, 5, cfg.v_norm)
        back = converse_v(Q, w, solution_map_S(Q, w, v_k, s.fp, op), s.fp, op)
        worst = max(worst, (back - v_k).sup())
    report.check("round_trip_error", worst, 1e-8)

    rng = s.rng("gram")
    directions = [scaled_random(op, rng, cfg.v_norm) for _ in range(2)]
    base = 0.5 * v
    derivatives = [
        directional_derivative_S(Q, w, base, d, 1e-3, s.fp, op) for d in directions
    ]
    gram = np.array([[inner_product(a, b) for b in derivatives] for a in derivatives])
    scale = np.sqrt(np.outer(np.diag(gram), np.diag(gram)))
    report.check("derivative_gram_min_sv", np.linalg.svd(gram / scale, compute_uv=False)[-1], 1e-6, ">=")

    write_table(
        [{"iteration": k + 1, "step": step} for k, step in enumerate(history)],
        params.path("fixpoint_iterations.csv"),
    )
    for name, f in (("fixpoint_v.csv", v), ("fixpoint_r.csv", r), ("fixpoint_u.csv", u)):
        save_field(f, params.path(name))
        report.artifacts.append(name)
    report.artifacts.append("fixpoint_iterations.csv")


def run_cauchy_probe(s: Scenario, params: ExportParams, report: ExperimentReport) -> None:
    cfg = s.cfg
    probes = [stability_probe(s.Q1, s.w1, cfg.pairs, seed, s.fp) for seed in (cfg.seed, cfg.seed_2)]
    report.data["probes"] = [p.to_dict() for p in probes]
    first, second = (p.max_ratio for p in probes)
    report.check("max_ratio", max(first, second), np.inf, "<")
    agreement = abs(first - second) / max(first, second)
    report.data["seed_agreement"] = agreement
    report.check("seed_agreement", agreement, cfg.ratio_agreement)

    op = linearize(s.Q1, s.w1)
    v = random_linear_solution(op, s.rng("coincident"), 5, 0.5 * cfg.v_norm)
    u1 = solution_map_S(s.Q1, s.w1, v, s.fp, op)
    u2 = solution_map_S(s.Q1, s.w1, converse_v(s.Q1, s.w1, u1, s.fp, op), s.fp, op)
    report.data["coincident_cauchy_mismatch"] = cauchy_norm(cauchy_data(u1) - cauchy_data(u2))
    report.check("coincident_interior_difference", (u1 - u2).sup(), 1e-8)

    du_n, dlap_n = navier_to_neumann(s.Q1, s.w1, NavierData.of(u1), s.fp, op)
    mismatch = max(
        (du_n - normal_derivative(u1)).sup(),
        (dlap_n - normal_derivative(laplacian(u1))).sup(),
    )
    report.check("navier_to_neumann_consistency", mismatch, 1e-8)

    lin_n, lin_lap_n = linear_navier_to_neumann(op, NavierData.of(v))
    mismatch = max(
        (lin_n - normal_derivative(v)).sup(),
        (lin_lap_n - normal_derivative(laplacian(v))).sup(),
    )
    report.check("linear_navier_to_neumann_consistency", mismatch, 1e-8)

    write_table(
        [
            {"seed": p.seed, "pair": k, "ratio": ratio}
            for p in probes
            for k, ratio in enumerate(p.ratios)
        ],
        params.path("cauchy_ratios.csv"),
    )
    report.artifacts.append("cauchy_ratios.csv")


def run_project(s: Scenario, params: ExportParams, report: ExperimentReport) -> None:
    op = linearize(s.Q1, s.w1)
    grid = s.grid
    space = ClampedSpace(grid)
    rng = s.rng("project")

    idempotence = 0.0
    orthogonality = 0.0
    for _ in range(s.cfg.project_fields):
        u = ScalarField(grid, rng.standard_normal(grid.shape))
        Pu, _ = project_Z(op, u)
        PPu, _ = project_Z(op, Pu)
        idempotence = max(idempotence, _ratio((PPu - Pu).sup(), Pu.sup()))
        z = apply_L_clamped(op, space.embed(rng.standard_normal(space.dimension)))
        gap = u - Pu
        cosine = abs(inner_product(gap, z)) / np.sqrt(inner_product(gap, gap) * inner_product(z, z))
        orthogonality = max(orthogonality, cosine)
    report.check("projection_idempotence", idempotence, 1e-8)
    report.check("projection_orthogonality", orthogonality, 1e-8)

    y0 = s.bump()
    y = inverse_on_Z(op, apply_L_clamped(op, y0))
    report.check("inverse_round_trip", (y - y0).sup() / y0.sup(), 1e-8)

    try:
        inverse_on_Z(op, ScalarField(grid, rng.standard_normal(grid.shape)))
        rejected = 0.0
    except NotInRangeError:
        rejected = 1.0
    report.check("rejects_field_outside_Z", rejected, 1.0, ">=")

    partial = ScalarField.zeros(grid)
    for k in range(30):
        partial = partial + 0.5**k * space.embed(rng.standard_normal(space.dimension))
    distance, _ = distance_to_Z(op, apply_L_clamped(op, partial))
    report.check("geometric_limit_distance", distance, 1e-8)

    save_field(y, params.path("project_y.csv"))
    report.artifacts.append("project_y.csv")


def run_second_map(s: Scenario, params: ExportParams, report: ExperimentReport) -> None:
    cfg, Q1, w1 = s.cfg, s.Q1, s.w1
    op1 = linearize(Q1, w1)
    v = fixed_direction(op1, cfg.v_norm)
    u1 = solution_map_S(Q1, w1, v, s.fp, op1)

    same = second_solution_map_T(Q1, Q1, w1, w1, v, s.fp, op1, op1)
    report.data["same"] = same.to_dict()
    report.check("same_defect", same.cauchy_defect, 1e-10)
    report.check("same_r_sup", same.r.sup(), 1e-12)

    phi = s.bump()
    Q2, w2 = gauge_pair(Q1, w1, phi)
    op2 = linearize(Q2, w2)
    gauge = second_solution_map_T(Q1, Q2, w1, w2, v, s.fp, op1, op2)
    report.data["gauge"] = gauge.to_dict()
    report.check("gauge_defect", gauge.cauchy_defect, 1e-6)
    report.check("gauge_shift_error", (gauge.u2 - u1 - phi).sup(), 1e-6)
    report.check("gauge_q2_residual", gauge.residual, 1e-6)

    h = fixed_direction(op1, cfg.v_norm / max(cfg.eps))
    errors = [dT_identity_check(Q1, Q2, w1, w2, h, eps, s.fp) for eps in cfg.eps]
    report.data["dT_errors"] = errors
    _check_second_order(report, "dT", errors)

    rng = s.rng("directions")
    v_list = [ScalarField.zeros(s.grid)] + [
        random_linear_solution(op1, rng, 5, cfg.v_norm) for _ in range(cfg.directions)
    ]
    report.check("phi_independence", phi_independence_check(Q1, Q2, w1, w2, v_list, s.fp), 1e-6)

    if cfg.q2_mode == "explicit":
        Q2e = make_nonlinearity(cfg.q2_kind, cfg.q2_params, cfg.q2_gamma)
        try:
            explicit = second_solution_map_T(Q1, Q2e, w1, w1, v, s.fp, op1)
            report.data["explicit"] = explicit.to_dict()
        except BilabError as e:
            report.data["explicit"] = {"error": f"{type(e).__name__}: {e}"}

    save_field(gauge.u2, params.path("second_map_u2.csv"))
    report.artifacts.append("second_map_u2.csv")


def perturbed_operator(op1: AssembledOperator, cfg: ExperimentConfig) -> AssembledOperator:
    grid = op1.grid
    if cfg.perturbation == "v_shift":
        return assemble(grid, op1.A, op1.X, op1.V + ScalarField.constant(grid, cfg.perturbation_size))
    if cfg.perturbation == "a_bump":
        bump = ScalarField.from_function(
            grid, lambda x, y: np.exp(-20.0 * ((x - 0.5) ** 2 + (y - 0.5) ** 2))
        )
        return assemble(grid, op1.A + cfg.perturbation_size * bump, op1.X, op1.V)
    return op1


def _relative_l2(estimate: ScalarField, truth: ScalarField) -> float:
    gap = estimate - truth
    return _ratio(np.sqrt(inner_product(gap, gap)), np.sqrt(inner_product(truth, truth)))


def run_recover(s: Scenario, params: ExportParams, report: ExperimentReport) -> None:
    cfg = s.cfg
    K = cfg.basis_k
    op1 = linearize(s.Q1, s.w1)
    op2 = perturbed_operator(op1, cfg)

    homogeneous = generate_solution_pairs(op1, op1, 4 * K, cfg.seed)
    homogeneous_system = assemble_identity_system(homogeneous, K)
    rows = homogeneous_system.row_residuals(np.zeros(homogeneous_system.n_unknowns))
    report.check("homogeneous_row_residual", float(np.max(rows)), 1e-10)
    zero = recover_coefficient_difference(homogeneous_system, cfg.ls_reg)
    report.check(
        "homogeneous_recovered_sup", max(zero.a.sup(), zero.b.sup(), zero.c.sup()), 1e-6
    )

    pairs = generate_solution_pairs(op1, op2, cfg.recover_pairs, cfg.seed + STREAMS["recover"])
    truth_a = op1.A - op2.A
    truth_c = op1.V - op2.V

    def error_of(result) -> float:
        if cfg.perturbation == "a_bump":
            return _relative_l2(result.a, truth_a)
        if cfg.perturbation == "v_shift":
            return _relative_l2(result.c, truth_c)
        return max(result.a.sup(), result.b.sup(), result.c.sup())

    sizes = {n for n in (25, 50, 100, 200) if 3 * K <= n < cfg.recover_pairs}
    sizes = sorted(sizes | {cfg.recover_pairs})
    errors = []
    for n in sizes:
        result = recover_coefficient_difference(assemble_identity_system(pairs[:n], K), cfg.ls_reg)
        errors.append(error_of(result))
    report.data["recovery"] = result.to_dict()
    report.data["error_by_pairs"] = dict(zip(sizes, errors))

    tolerance = {"a_bump": 0.15, "v_shift": 0.10, "none": 1e-6}[cfg.perturbation]
    report.check("recovery_error", errors[-1], tolerance)
    growth = max((b - a for a, b in zip(errors, errors[1:])), default=0.0)
    report.check("recovery_error_growth", growth, 0.05 * max(errors[0], 1e-12))

    for name, f in (("recover_a.csv", result.a), ("recover_c.csv", result.c)):
        save_field(f, params.path(name))
        report.artifacts.append(name)
    for axis, name in enumerate(("recover_bx.csv", "recover_by.csv")):
        save_field(result.b.component(axis), params.path(name))
        report.artifacts.append(name)


def run_runge(s: Scenario, params: ExportParams, report: ExperimentReport) -> None:
    cfg = s.cfg
    op = linearize(s.Q1, s.w1)
    full = build_basis(op, max(max(cfg.runge_k), 16))
    report.check(
        "basis_max_residual", max(interior_residual(op, u) for u in full.members), 1e-9
    )
    singular = full.boundary_singular_values()
    report.check("basis_boundary_min_sv", singular[-1], 1e-10, ">")

    omega1 = Subdomain.centered(s.grid, cfg.subdomain_diameter)
    u_local = point_source_solution(op, omega1, tuple(cfg.runge_source))
    report.data["local_residual"] = local_residual(op, u_local, omega1)
    rows = []
    for K in sorted(cfg.runge_k):
        approximation = approximate_local_solution(full.truncated(K), u_local, omega1, cfg.runge_reg)
        rows.append({"K": K, "error": approximation.error, "condition": approximation.condition})
    report.data["runge"] = rows
    report.check("runge_error_decrease", rows[-1]["error"] / rows[0]["error"], 1.0, "<")
    report.check("runge_final_error", rows[-1]["error"], 1e-3, "<")

    value, gx, gy, lap = cfg.control_targets
    control = point_control(full, tuple(cfg.control_point), (value, (gx, gy), lap), cfg.ls_reg)
    i, j = s.grid.node(*cfg.control_point)
    miss = np.abs(jet(control)[:, i, j] - np.array(cfg.control_targets))
    report.check("point_control_miss", float(np.max(miss)), 1e-6)
    report.check("point_control_residual", interior_residual(op, control), 1e-9)

    rng = s.rng("point_control")
    margin = 3.0 * s.grid.hx
    failures = 0
    for _ in range(20):
        x0 = tuple(rng.uniform(margin, 1.0 - margin, size=2))
        try:
            point_control(full, x0, reg=cfg.ls_reg)
        except BilabError:
            failures += 1
    report.check("point_control_rank_failures", failures, 0)

    write_table(rows, params.path("runge_errors.csv"))
    save_field(control, params.path("runge_control.csv"))
    report.artifacts += ["runge_errors.csv", "runge_control.csv"]


def run_sweep(s: Scenario, params: ExportParams, report: ExperimentReport) -> None:
    cfg, Q1, w = s.cfg, s.Q1, s.w1
    op = linearize(Q1, w)
    basis = build_basis(op, cfg.sweep_basis_k)
    points = [tuple(p) for p in cfg.sweep_points]

    phi = s.bump()
    Q2, _ = gauge_pair(Q1, w, phi)
    scenarios = {
        "same": (Q1, ScalarField.zeros(s.grid), 1e-6),
        "gauge": (Q2, phi, 1e-5),
    }
    for name, (Q2_s, phi_s, tolerance) in scenarios.items():
        result = reachable_sweep(
            Q1, Q2_s, phi_s, w, points, cfg.sweep_fractions, basis, s.fp, op, cfg.ls_reg
        )
        report.data[f"{name}_epsilon"] = result.epsilon
        report.data[f"{name}_skipped"] = [list(x) + [reason] for x, reason in result.skipped]
        report.check(f"{name}_max_residual", result.max_residual, tolerance)
        report.check(f"{name}_max_root_error", result.max_root_error, 1e-8)
        report.check(f"{name}_records", len(result.records), 1, ">=")
        write_table(result.rows(), params.path(f"sweep_{name}.csv"))
        report.artifacts.append(f"sweep_{name}.csv")


APPENDIX_KINDS = (
    ("zero", ()),
    ("power", (3.0,)),
    ("power", (4.0,)),
    ("sine", ()),
    ("zq", ()),
    ("pquad", ()),
    ("linear", (1.0, 0.5, -0.5, 2.0)),
)


def run_verify_appendix(s: Scenario, params: ExportParams, report: ExperimentReport) -> None:
    Q, w = s.Q1, s.w1
    quad = s.cfg.quad_nodes
    op = assemble(s.grid)
    rng = s.rng("appendix")

    def small(size: float) -> ScalarField:
        return scaled_random(op, rng, size)

    report.check("taylor_residual", taylor_identity_check(Q, w, small(0.05), quad).sup(), 1e-8)

    worst = 0.0
    for _ in range(5):
        direct, expanded = remainder_difference_expansion(
            Q, w, small(0.05), small(0.05), small(0.05), quad
        )
        worst = max(worst, (direct - expanded).sup())
    report.check("expansion_difference", worst, 1e-7)

    bounds = derivative_bound_check(Q, small(0.5))
    report.data["derivative_bounds"] = dataclasses.asdict(bounds)
    report.check("derivative_bound_ratio", bounds.max_ratio, 1.0 + 1e-12)

    consistency = {
        f"{kind}{list(p)}": derivative_consistency(make_nonlinearity(kind, p), seed=s.cfg.seed)
        for kind, p in APPENDIX_KINDS
    }
    report.data["derivative_consistency"] = consistency
    report.check("derivative_consistency", max(consistency.values()), 1e-6)

    h = small(0.1)
    ratios = [
        _ratio(c2_norm(remainder_R(Q, w, scale * h, quad)), c2_norm(scale * h) ** 2)
        for scale in (1.0, 0.5, 0.25)
    ]
    report.data["remainder_ratios"] = ratios
    report.check("remainder_smallness_spread", _spread(ratios), 2.0)

    lipschitz = []
    for delta in (0.1, 0.05, 0.025):
        v, r1, r2 = small(delta), small(delta), small(delta)
        difference = remainder_R(Q, w, v + r1, quad) - remainder_R(Q, w, v + r2, quad)
        lipschitz.append(_ratio(difference.sup(), c2_norm(r1 - r2)))
    report.data["lipschitz_constants"] = lipschitz
    report.check("lipschitz_decay", _ratio(lipschitz[-1], lipschitz[0]), 1.0, "<=")


EXPERIMENTS: Dict[str, Callable[[Scenario, ExportParams, ExperimentReport], None]] = {
    "forward": run_forward,
    "fixpoint": run_fixpoint,
    "cauchy-probe": run_cauchy_probe,
    "project": run_project,
    "second-map": run_second_map,
    "recover": run_recover,
    "runge": run_runge,
    "sweep": run_sweep,
    "verify-appendix": run_verify_appendix,
}


def run(
    subcommand: str,
    config_path: Optional[Path] = None,
    out: Optional[Path] = None,
    seed: Optional[int] = None,
) -> ExperimentReport:
    """Run one experiment and write its JSON report.

    Configuration errors propagate as ConfigError; numerical failures are recorded in
    the report, which is written in every case.
    """
    if subcommand not in EXPERIMENTS:
        raise ValueError(f"Unknown subcommand: {subcommand}")
    cfg = load_config(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    params = ExportParams(output_dir=Path(out) if out else Path("bilab-out"))
    report = ExperimentReport(subcommand=subcommand, config=cfg.to_dict())

    logger.info(f"Running experiment '{subcommand}' on a {cfg.n}x{cfg.n} grid")
    start = time.perf_counter()
    try:
        EXPERIMENTS[subcommand](Scenario.from_config(cfg), params, report)
    except (BilabError, np.linalg.LinAlgError) as e:
        logger.error(f"Experiment '{subcommand}' failed: {e}")
        report.error = f"{type(e).__name__}: {e}"
    report.runtime = time.perf_counter() - start

    name = f"report_{subcommand}.json"
    write_report(report.to_dict(include_runtimes=cfg.report_runtimes), params.path(name))
    status = "passed" if report.passed else "failed"
    logger.info(f"Experiment '{subcommand}' {status} ({len(report.checks)} checks)")
    return report
