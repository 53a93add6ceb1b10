"""Convergence experiments over method x nu x df x level grids."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import MethodConfig, assemble, dof_count, method_config
from .errors import InsufficientData, QuadipError, SpecError
from .mesh import DistortionSpec, QuadMesh, from_arrays, mesh_size
from .model import make_problem
from .postprocess import (
    DiscreteField,
    NodalStressField,
    SurrogateReference,
    convergence_rates,
    displacement_error,
    jump_seminorm,
    recover_stress,
    stress_error,
)
from .solver import DEFAULT_TOLERANCE, solve

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "method", "theta", "edge_ngp", "k_mu", "k_lambda", "nu", "df", "seed", "level", "h",
    "ndofs", "disp_h1", "disp_l2", "stress_l2", "rate_h1", "rate_stress", "residual",
    "wall_ms", "status",
)

CACHE_ENV = "QUADIP_CACHE_DIR"


@dataclass
class ExperimentSpec:
    problem: str
    methods: list[MethodConfig]
    nus: list[float]
    dfs: list[float]
    levels: list[int]
    seed: int = 0
    tolerance: float = DEFAULT_TOLERANCE
    output_dir: str | None = None
    surrogate_offset: int = 2
    move_boundary: bool = False
    problem_options: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.methods:
            raise SpecError("method list is empty")
        if not self.nus:
            raise SpecError("nu list is empty")
        if not self.dfs:
            raise SpecError("df list is empty")
        if not self.levels:
            raise SpecError("level range is empty")
        if any(not 0.0 < nu < 0.5 for nu in self.nus):
            raise SpecError("every nu must lie in (0, 0.5)")
        if any(not 0.0 <= df < 1.0 for df in self.dfs):
            raise SpecError("every df must lie in [0, 1)")
        if any(lv < 0 for lv in self.levels):
            raise SpecError("levels must be non-negative")
        if len(set(self.levels)) != len(self.levels):
            raise SpecError("levels must be distinct")


@dataclass
class ConvergenceRecord:
    method: str
    theta: int | None
    edge_ngp: int | None
    k_mu: float | None
    k_lambda: float | None
    nu: float
    df: float
    seed: int
    level: int
    h: float = math.nan
    ndofs: int = 0
    disp_h1: float = math.nan
    disp_l2: float = math.nan
    stress_l2: float = math.nan
    rate_h1: float | None = None
    rate_stress: float | None = None
    residual: float = math.nan
    wall_ms: float | None = None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# ------------------------------------------------------------- spec parsing


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _levels(text: str) -> list[int]:
    out: list[int] = []
    for tok in text.replace(",", " ").split():
        if "-" in tok:
            lo, hi = tok.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(tok))
    return out


def parse_spec(text: str) -> ExperimentSpec:
    """Read an experiment file (INI syntax, see README for the grammar)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError(f"cannot parse experiment file: {exc}") from exc
    if "experiment" not in cp:
        raise SpecError("missing [experiment] section")
    ex = cp["experiment"]
    try:
        penalties = {}
        if "penalties" in cp:
            for name, value in cp["penalties"].items():
                vals = _floats(value)
                if len(vals) != 2:
                    raise SpecError(f"penalty override for {name} needs 'k_mu, k_lambda'")
                penalties[name.upper()] = vals
        methods = []
        for name in ex.get("methods", "").replace(",", " ").split():
            km, kl = penalties.get(name.upper(), (None, None))
            methods.append(method_config(name, km, kl))
        spec = ExperimentSpec(
            problem=ex.get("problem", "").strip(),
            methods=methods,
            nus=_floats(ex.get("nu", "")),
            dfs=_floats(ex.get("df", "0.0")),
            levels=_levels(ex.get("levels", "")),
            seed=int(ex.get("seed", "0")),
            tolerance=float(ex.get("tolerance", str(DEFAULT_TOLERANCE))),
            output_dir=ex.get("output"),
            surrogate_offset=int(ex.get("surrogate_offset", "2")),
            move_boundary=ex.getboolean("move_boundary", fallback=False),
            problem_options=dict(cp["problem"]) if "problem" in cp else {},
        )
    except (ValueError, QuadipError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc)) from exc
    if not spec.problem:
        raise SpecError("no problem named")
    spec.validate()
    return spec


def load_spec(path) -> ExperimentSpec:
    return parse_spec(Path(path).read_text())


# ---------------------------------------------------------------- meshes


def level_seed(base: int, level: int) -> int:
    """Distortion seed for one refinement level, derived from the base seed."""
    return int(np.random.SeedSequence([int(base), int(level)]).generate_state(1, np.uint64)[0])


def build_mesh(problem_name: str, level: int, df: float, seed: int, move_boundary: bool = False,
               options: dict | None = None) -> QuadMesh:
    problem = make_problem(problem_name, 0.3, **(options or {}))
    dist = DistortionSpec(df, level_seed(seed, level), move_boundary) if df > 0.0 else None
    return problem.build_mesh(level, dist)


# ---------------------------------------------------------------- solving


@dataclass
class CaseResult:
    mesh: QuadMesh
    field: DiscreteField
    stress: NodalStressField
    residual: float
    ndofs: int


def solve_case(problem, mesh: QuadMesh, config: MethodConfig, tolerance: float = DEFAULT_TOLERANCE) -> CaseResult:
    system = assemble(mesh, problem, config)
    report = solve(system, tolerance)
    u_h = DiscreteField.from_solution(mesh, np.asarray(report.solution, dtype=float), system.dofmap)
    sig = recover_stress(mesh, problem.material, u_h)
    return CaseResult(mesh, u_h, sig, report.relative_residual, system.n_dofs)


def _cache_key(spec: ExperimentSpec, nu: float, df: float, level: int) -> str:
    payload = {"problem": spec.problem, "nu": nu, "df": df, "seed": spec.seed, "level": level,
               "move_boundary": spec.move_boundary, "options": spec.problem_options,
               "method": "NIPG", "version": 1}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]


def surrogate_reference(spec: ExperimentSpec, nu: float, df: float,
                        cache_dir: str | os.PathLike | None = None) -> SurrogateReference:
    """Fine-mesh new-NIPG solution used where no exact solution exists."""
    level = max(spec.levels) + spec.surrogate_offset
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"surrogate-{_cache_key(spec, nu, df, level)}.npz"
    if path is not None and path.exists():
        data = np.load(path)
        mesh = from_arrays(data["vertices"], data["cells"])
        return SurrogateReference(DiscreteField(mesh, data["coeffs"]), NodalStressField(mesh, data["stress"]))

    log.info("computing surrogate reference for nu=%g df=%g at level %d", nu, df, level)
    problem = make_problem(spec.problem, nu, **spec.problem_options)
    mesh = build_mesh(spec.problem, level, df, spec.seed, spec.move_boundary, spec.problem_options)
    res = solve_case(problem, mesh, method_config("NIPG"), spec.tolerance)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, vertices=mesh.vertices, cells=mesh.cells, coeffs=res.field.coeffs,
                 stress=res.stress.values)
    return SurrogateReference(res.field, res.stress)


def _method_key(config: MethodConfig) -> tuple:
    if config.is_ip:
        return (config.method_id, config.k_mu, config.k_lambda)
    return (config.method_id, None, None)


def _run_group(spec: ExperimentSpec, df: float, level: int, references: dict,
               timing: bool) -> list[ConvergenceRecord]:
    """All (method, nu) rows sharing one mesh."""
    rows = []
    mesh = None
    mesh_error = None
    try:
        mesh = build_mesh(spec.problem, level, df, spec.seed, spec.move_boundary, spec.problem_options)
    except QuadipError as exc:
        mesh_error = type(exc).__name__
    seed = level_seed(spec.seed, level) if df > 0.0 else spec.seed
    for config in spec.methods:
        for nu in spec.nus:
            rec = ConvergenceRecord(
                method=config.method_id,
                theta=config.theta if config.is_ip else None,
                edge_ngp=config.edge_ngp if config.is_ip else None,
                k_mu=config.k_mu if config.is_ip else None,
                k_lambda=config.k_lambda if config.is_ip else None,
                nu=nu, df=df, seed=seed, level=level,
            )
            rows.append(rec)
            if mesh is None:
                rec.status = mesh_error
                continue
            start = time.perf_counter()
            try:
                problem = make_problem(spec.problem, nu, **spec.problem_options)
                res = solve_case(problem, mesh, config, spec.tolerance)
                exact = problem if problem.has_exact else references[(nu, df)]
                rec.h = mesh_size(mesh)
                rec.ndofs = dof_count(mesh, config)
                rec.disp_h1, rec.disp_l2 = displacement_error(mesh, res.field, exact)
                rec.stress_l2 = stress_error(mesh, problem.material, res.stress, exact)
                rec.residual = res.residual
                log.info("%s nu=%g df=%g level=%d h1=%.4e stress=%.4e jump=%.4e",
                         rec.method, nu, df, level, rec.disp_h1, rec.stress_l2, jump_seminorm(res.field))
            except QuadipError as exc:
                rec.status = type(exc).__name__
                log.warning("%s nu=%g df=%g level=%d failed: %s", rec.method, nu, df, level, exc)
            if timing:
                rec.wall_ms = 1000.0 * (time.perf_counter() - start)
    return rows


def _fill_rates(records: list[ConvergenceRecord]) -> None:
    groups: dict[tuple, list[ConvergenceRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.k_mu, r.k_lambda, r.nu, r.df), []).append(r)
    for rows in groups.values():
        rows.sort(key=lambda r: r.level)
        for prev, cur in zip(rows, rows[1:]):
            if not (prev.ok and cur.ok):
                continue
            try:
                cur.rate_h1 = convergence_rates([(prev.h, prev.disp_h1), (cur.h, cur.disp_h1)])[0]
                cur.rate_stress = convergence_rates([(prev.h, prev.stress_l2), (cur.h, cur.stress_l2)])[0]
            except (QuadipError, ValueError):
                pass


def run_experiment(spec: ExperimentSpec, cache_dir=None, jobs: int = 1,
                   timing: bool = False) -> list[ConvergenceRecord]:
    """Run the full grid and return rows ordered by (method, nu, df, level).

    Meshes are built once per (df, level).  With ``timing=False`` the
    ``wall_ms`` column stays empty so repeated runs give identical bytes.
    """
    spec.validate()
    if cache_dir is None:
        cache_dir = os.environ.get(CACHE_ENV)
    references = {}
    probe = make_problem(spec.problem, spec.nus[0], **spec.problem_options)
    if not probe.has_exact:
        for nu in spec.nus:
            for df in spec.dfs:
                references[(nu, df)] = surrogate_reference(spec, nu, df, cache_dir)

    tasks = [(df, level) for df in spec.dfs for level in sorted(spec.levels)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_group, spec, df, lv, references, timing) for df, lv in tasks]
            chunks = [f.result() for f in futures]
    else:
        chunks = [_run_group(spec, df, lv, references, timing) for df, lv in tasks]

    method_rank = {}
    for i, m in enumerate(spec.methods):
        method_rank.setdefault(_method_key(m), i)
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (method_rank[(r.method, r.k_mu, r.k_lambda)],
                                spec.nus.index(r.nu), spec.dfs.index(r.df), r.level))
    _fill_rates(records)
    return records


# ------------------------------------------------------------------- output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def records_to_csv(records: list[ConvergenceRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def _parse_cell(column: str, text: str):
    if text == "":
        return None if column not in ("h", "disp_h1", "disp_l2", "stress_l2", "residual") else math.nan
    if column in ("method", "status"):
        return text
    if column in ("theta", "edge_ngp", "seed", "level", "ndofs"):
        return int(text)
    return float(text)


def read_records(text: str) -> list[ConvergenceRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise SpecError("CSV header does not match the convergence table schema")
    return [ConvergenceRecord(**{c: _parse_cell(c, row[c]) for c in CSV_COLUMNS}) for row in reader]


def write_csv(records: list[ConvergenceRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(records_to_csv(records))
    return path


def rate_table(records: list[ConvergenceRecord], key: str = "disp_h1") -> list[dict]:
    """Recompute consecutive-level rates per (method, nu, df) group."""
    groups: dict[tuple, list[ConvergenceRecord]] = {}
    for r in records:
        if r.ok:
            groups.setdefault((r.method, r.nu, r.df), []).append(r)
    out = []
    for (method, nu, df), rows in groups.items():
        rows.sort(key=lambda r: r.level)
        rates = convergence_rates(rows, key) if len(rows) > 1 else []
        for i, r in enumerate(rows):
            out.append({"method": method, "nu": nu, "df": df, "level": r.level, "h": r.h,
                        key: getattr(r, key), "rate": rates[i - 1] if i else None})
    return out


def compare_uniformity(records: list[ConvergenceRecord], method: str, df: float,
                       key: str = "disp_h1") -> dict[int, float]:
    """Per level, the largest over the smallest error across the nu sweep."""
    by_level: dict[int, dict[float, float]] = {}
    for r in records:
        if r.method == method and r.df == df and r.ok:
            by_level.setdefault(r.level, {})[r.nu] = getattr(r, key)
    out = {}
    for level, errs in sorted(by_level.items()):
        if len(errs) < 2:
            continue
        vals = list(errs.values())
        out[level] = max(vals) / min(vals)
    if not out:
        raise InsufficientData(f"need records for at least two nu values ({method}, df={df})")
    return out
