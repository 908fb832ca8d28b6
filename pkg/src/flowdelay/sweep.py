"""Parameter sweeps, validation runs and their file outputs."""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import math
import os
import platform
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from . import __version__
from .exceptions import ConvergenceError, OutputError
from .model import (
    ConstantMode,
    ModelParams,
    SeriesOptions,
    expected_delay,
    expected_delay_closed,
    expected_delay_direct,
)
from .simulator import Estimator, SimConfig, estimate_expected_delay
from .specfun import EI_ONE, EULER_GAMMA

__all__ = [
    "Mode",
    "AreaGrid",
    "CapacityGrid",
    "SweepSpec",
    "SpecError",
    "OutputRow",
    "CSV_HEADER",
    "VALIDATION_B_GRID",
    "VALIDATION_C_GRID",
    "VALIDATION_MC_POINTS",
    "spec_from_mapping",
    "validate_spec",
    "run_eval",
    "run_sweep_area",
    "run_sweep_matched_capacity",
    "run_simulate",
    "run_validate",
    "run",
    "rows_to_csv",
    "rows_from_csv",
    "emit_outputs",
]


DEFAULT_SIM_SLOTS = 100_000


class Mode(str, enum.Enum):
    EVAL = "eval"
    SWEEP_AREA = "sweep_area"
    SWEEP_MATCHED_CAPACITY = "sweep_matched_capacity"
    SIMULATE = "simulate"
    VALIDATE = "validate"


class SpecError(ValueError):
    """Invalid sweep definition; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class AreaGrid:
    min: float = 1e3
    max: float = 1e6
    points: int = 60
    spacing: str = "log"

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.min, self.max, self.points)
        return np.linspace(self.min, self.max, self.points)


@dataclass(frozen=True)
class CapacityGrid:
    min: int = 1
    max: int = 100
    step: int = 1

    def values(self) -> list[int]:
        return list(range(self.min, self.max + 1, self.step))


@dataclass(frozen=True)
class SweepSpec:
    """Everything a CLI run needs; field names double as the config-file schema."""

    mode: Mode = Mode.EVAL
    lambda_u: float = 1e-3
    d_ctrl: float = 1.0
    area: float = 1e4
    capacities: tuple[int, ...] = (10, 50, 100)
    area_grid: AreaGrid = field(default_factory=AreaGrid)
    capacity_grid: CapacityGrid = field(default_factory=CapacityGrid)
    sim: SimConfig | None = None
    tolerance: SeriesOptions = field(default_factory=SeriesOptions)
    constant_mode: ConstantMode = ConstantMode.CORRECTED

    def to_dict(self) -> dict[str, Any]:
        def plain(obj):
            if isinstance(obj, enum.Enum):
                return obj.value
            if dataclasses.is_dataclass(obj):
                return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, (list, tuple)):
                return [plain(v) for v in obj]
            return obj

        return plain(self)


def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise SpecError(name, f"must be a positive finite number, got {value!r}")


def validate_spec(spec: SweepSpec) -> SweepSpec:
    """Raise :class:`SpecError` naming the first invalid field."""
    _positive("lambda_u", spec.lambda_u)
    _positive("area", spec.area)
    if not (math.isfinite(spec.d_ctrl) and spec.d_ctrl >= 0):
        raise SpecError("d_ctrl", f"must be nonnegative, got {spec.d_ctrl!r}")
    if not spec.capacities:
        raise SpecError("capacities", "must not be empty")
    for c in spec.capacities:
        if not isinstance(c, int) or isinstance(c, bool) or c < 0:
            raise SpecError("capacities", f"entries must be nonnegative integers, got {c!r}")
    g = spec.area_grid
    _positive("area_grid.min", g.min)
    _positive("area_grid.max", g.max)
    if not g.min < g.max:
        raise SpecError("area_grid", f"min must be < max, got {g.min!r} >= {g.max!r}")
    if not isinstance(g.points, int) or g.points < 2:
        raise SpecError("area_grid.points", f"must be an integer >= 2, got {g.points!r}")
    if g.spacing not in ("log", "linear"):
        raise SpecError("area_grid.spacing", f"must be 'log' or 'linear', got {g.spacing!r}")
    cg = spec.capacity_grid
    if not all(isinstance(v, int) for v in (cg.min, cg.max, cg.step)):
        raise SpecError("capacity_grid", "min, max and step must be integers")
    if cg.min < 0:
        raise SpecError("capacity_grid.min", f"must be >= 0, got {cg.min}")
    if not cg.min < cg.max:
        raise SpecError("capacity_grid", f"min must be < max, got {cg.min} >= {cg.max}")
    if cg.step < 1:
        raise SpecError("capacity_grid.step", f"must be >= 1, got {cg.step}")
    return spec


_SECTIONS = {
    "area_grid": AreaGrid,
    "capacity_grid": CapacityGrid,
    "sim": SimConfig,
    "tolerance": SeriesOptions,
}


def spec_from_mapping(data: Mapping[str, Any], base: SweepSpec | None = None) -> SweepSpec:
    """Build a spec from a config mapping, overlaying ``base``.

    Nested sections (``area_grid``, ``capacity_grid``, ``sim``,
    ``tolerance``) may be partial; missing keys keep the base values.
    """
    base = base or SweepSpec()
    known = {f.name for f in dataclasses.fields(SweepSpec)}
    updates: dict[str, Any] = {}
    for key, value in data.items():
        if key not in known:
            raise SpecError(key, "unknown field")
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(value, Mapping):
                raise SpecError(key, "must be an object")
            sub_known = {f.name for f in dataclasses.fields(cls)}
            for sub in value:
                if sub not in sub_known:
                    raise SpecError(f"{key}.{sub}", "unknown field")
            current = getattr(base, key)
            if current is not None:
                merged = dataclasses.asdict(current)
            else:
                merged = {"slots": DEFAULT_SIM_SLOTS} if cls is SimConfig else {}
            merged.update(value)
            try:
                updates[key] = cls(**merged)
            except (TypeError, ValueError) as exc:
                raise SpecError(key, str(exc)) from None
        elif key == "capacities":
            if isinstance(value, (str, bytes)) or not isinstance(value, Iterable):
                raise SpecError(key, "must be a list of integers")
            updates[key] = tuple(value)
        elif key == "mode":
            try:
                updates[key] = Mode(str(value).replace("-", "_"))
            except ValueError:
                raise SpecError(key, f"unknown mode {value!r}") from None
        elif key == "constant_mode":
            try:
                updates[key] = ConstantMode(str(value).replace("-", "_"))
            except ValueError:
                raise SpecError(key, f"unknown constant mode {value!r}") from None
        else:
            updates[key] = value
    return validate_spec(dataclasses.replace(base, **updates))


@dataclass(frozen=True)
class OutputRow:
    lambda_u: float
    area_m2: float
    b: float
    capacity: int
    normalized_delay: float
    absolute_delay: float
    method: str
    error_bound: float
    mc_mean: float | None = None
    mc_stderr: float | None = None


CSV_HEADER = tuple(f.name for f in dataclasses.fields(OutputRow))


def _evaluate(lambda_u, area, capacity, spec):
    params = ModelParams(lambda_u, area, capacity, spec.d_ctrl)
    try:
        if spec.constant_mode is ConstantMode.PAPER_LITERAL:
            res = expected_delay_closed(params, ConstantMode.PAPER_LITERAL, fallback=True, opts=spec.tolerance)
        else:
            res = expected_delay(params, spec.tolerance)
    except ConvergenceError as exc:
        raise ConvergenceError(f"b={params.load!r}, C={capacity}: {exc}") from exc
    return params, res


def _row(params, res, mc=None):
    return OutputRow(
        lambda_u=params.lambda_u,
        area_m2=params.area,
        b=params.load,
        capacity=params.capacity,
        normalized_delay=res.normalized,
        absolute_delay=res.absolute,
        method=res.method.value,
        error_bound=res.error_bound,
        mc_mean=None if mc is None else mc.mean,
        mc_stderr=None if mc is None else mc.std_error,
    )


def _sorted(rows):
    return sorted(rows, key=lambda r: (r.capacity, r.area_m2))


def run_eval(spec: SweepSpec) -> list[OutputRow]:
    """One row per capacity at ``spec.area``."""
    validate_spec(spec)
    return _sorted(_row(*_evaluate(spec.lambda_u, spec.area, c, spec)) for c in spec.capacities)


def run_sweep_area(spec: SweepSpec) -> list[OutputRow]:
    """Delay versus cell area, one curve per capacity."""
    validate_spec(spec)
    areas = [float(a) for a in spec.area_grid.values()]
    rows = [_row(*_evaluate(spec.lambda_u, a, c, spec)) for c in spec.capacities for a in areas]
    return _sorted(rows)


def run_sweep_matched_capacity(spec: SweepSpec) -> list[OutputRow]:
    """Delay versus capacity with the area chosen so that ``b = C``."""
    validate_spec(spec)
    rows = []
    for c in spec.capacity_grid.values():
        if c == 0:
            raise SpecError("capacity_grid.min", "matched load b = C needs C >= 1")
        rows.append(_row(*_evaluate(spec.lambda_u, c / spec.lambda_u, c, spec)))
    return _sorted(rows)


def _sim_config(spec):
    return spec.sim if spec.sim is not None else SimConfig(slots=DEFAULT_SIM_SLOTS)


def run_simulate(spec: SweepSpec) -> list[OutputRow]:
    """Analytic value and Monte Carlo estimate per capacity at ``spec.area``."""
    validate_spec(spec)
    cfg = _sim_config(spec)
    rows = []
    for c in spec.capacities:
        params, res = _evaluate(spec.lambda_u, spec.area, c, spec)
        rows.append(_row(params, res, estimate_expected_delay(params, cfg)))
    return _sorted(rows)


VALIDATION_B_GRID = (0.01, 0.1, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0)
VALIDATION_C_GRID = (0, 1, 2, 5, 10, 50, 100, 200)
VALIDATION_MC_POINTS = (
    (0.5, 0), (1.0, 1), (2.0, 1), (5.0, 2), (5.0, 5),
    (10.0, 5), (10.0, 10), (20.0, 15), (50.0, 40), (100.0, 80),
)
CLOSED_TOLERANCE = 1e-9
MC_Z_LIMIT = 4.0
# deviations are measured against max(|direct|, 1e-3): at the 1e-9
# threshold this is an absolute floor of 1e-12 for tiny delays
_DEVIATION_FLOOR = 1e-3


def closed_vs_direct(b: float, capacity: int, opts: SeriesOptions = SeriesOptions()) -> dict[str, Any]:
    params = ModelParams.from_load(b, capacity)
    try:
        direct = expected_delay_direct(params, opts)
        closed = expected_delay_closed(params, fallback=True, opts=opts)
    except ConvergenceError as exc:
        raise ConvergenceError(f"b={b!r}, C={capacity}: {exc}") from exc
    dev = abs(closed.normalized - direct.normalized) / max(abs(direct.normalized), _DEVIATION_FLOOR)
    return {
        "b": b,
        "capacity": capacity,
        "direct": direct.normalized,
        "closed": closed.normalized,
        "closed_method": closed.method.value,
        "rel_deviation": dev,
    }


def literal_vs_corrected(b: float, capacity: int, opts: SeriesOptions = SeriesOptions()) -> dict[str, Any]:
    params = ModelParams.from_load(b, capacity)
    corrected = expected_delay_closed(params, fallback=True, opts=opts).normalized
    literal = expected_delay_closed(params, ConstantMode.PAPER_LITERAL, fallback=True, opts=opts).normalized
    return {
        "b": b,
        "capacity": capacity,
        "corrected": corrected,
        "paper_literal": literal,
        "difference": literal - corrected,
        "predicted_difference": capacity * (EI_ONE + 1.0 - EULER_GAMMA) * math.exp(-b),
        "out_of_range": not 0.0 <= literal <= 1.0,
    }


def run_validate(spec: SweepSpec) -> tuple[list[OutputRow], dict[str, Any]]:
    """Cross-check closed form, direct series and Monte Carlo.

    Returns the Monte Carlo rows and a report whose ``passed`` flag is
    false when the closed form deviates by more than 1e-9 or any Monte
    Carlo mean lies more than 4 standard errors from the analytic value.
    """
    validate_spec(spec)
    opts = spec.tolerance
    cfg = _sim_config(spec)

    grid = [closed_vs_direct(b, c, opts) for b in VALIDATION_B_GRID for c in VALIDATION_C_GRID]
    max_dev = max(p["rel_deviation"] for p in grid)

    mc_points, rows = [], []
    for b, c in VALIDATION_MC_POINTS:
        params = ModelParams(spec.lambda_u, b / spec.lambda_u, c, spec.d_ctrl)
        analytic = expected_delay(params, opts)
        est = estimate_expected_delay(params, cfg)
        z = abs(est.mean - analytic.normalized) / est.std_error if est.std_error > 0 else (
            0.0 if est.mean == analytic.normalized else math.inf
        )
        mc_points.append({
            "b": b, "capacity": c, "analytic": analytic.normalized,
            "mc_mean": est.mean, "mc_stderr": est.std_error, "z": z,
        })
        rows.append(_row(params, analytic, est))
    max_z = max(p["z"] for p in mc_points)

    literal = [literal_vs_corrected(b, c, opts) for b in VALIDATION_B_GRID for c in VALIDATION_C_GRID]
    highlight = literal_vs_corrected(1.0, 10, opts)

    closed_ok = max_dev <= CLOSED_TOLERANCE
    mc_ok = max_z <= MC_Z_LIMIT
    report = {
        "seed": int(cfg.seed),
        "slots": int(cfg.slots),
        "estimator": Estimator(cfg.estimator).value,
        "closed_vs_direct": {
            "threshold": CLOSED_TOLERANCE,
            "max_rel_deviation": max_dev,
            "passed": closed_ok,
            "points": grid,
        },
        "monte_carlo": {
            "threshold_z": MC_Z_LIMIT,
            "max_abs_z": max_z,
            "passed": mc_ok,
            "points": mc_points,
        },
        "paper_literal": {
            "max_abs_residual": max(abs(p["difference"] - p["predicted_difference"]) for p in literal),
            "highlight": highlight,
            "points": literal,
        },
        "passed": closed_ok and mc_ok,
    }
    return _sorted(rows), report


def run(spec: SweepSpec) -> tuple[list[OutputRow], dict[str, Any] | None]:
    """Dispatch on ``spec.mode``."""
    if spec.mode is Mode.VALIDATE:
        return run_validate(spec)
    runner = {
        Mode.EVAL: run_eval,
        Mode.SWEEP_AREA: run_sweep_area,
        Mode.SWEEP_MATCHED_CAPACITY: run_sweep_matched_capacity,
        Mode.SIMULATE: run_simulate,
    }[spec.mode]
    return runner(spec), None


# -- output files -----------------------------------------------------------

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def rows_to_csv(rows: Iterable[OutputRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_fmt(getattr(row, name)) for name in CSV_HEADER])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[OutputRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames!r}")
    out = []
    for rec in reader:
        out.append(OutputRow(
            lambda_u=float(rec["lambda_u"]),
            area_m2=float(rec["area_m2"]),
            b=float(rec["b"]),
            capacity=int(rec["capacity"]),
            normalized_delay=float(rec["normalized_delay"]),
            absolute_delay=float(rec["absolute_delay"]),
            method=rec["method"],
            error_bound=float(rec["error_bound"]),
            mc_mean=float(rec["mc_mean"]) if rec["mc_mean"] else None,
            mc_stderr=float(rec["mc_stderr"]) if rec["mc_stderr"] else None,
        ))
    return out


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise OutputError(path, exc.strerror or exc) from exc


def _plot_svg(rows, mode):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "flowdelay", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.4))
        if mode is Mode.SWEEP_AREA:
            for c in sorted({r.capacity for r in rows}):
                pts = [r for r in rows if r.capacity == c]
                (line,) = ax.plot([r.area_m2 for r in pts], [r.normalized_delay for r in pts], label=f"C = {c}")
                line.set_gid(f"curve-C{c}")
            ax.set_xscale("log")
            ax.set_xlabel("Cell area A (m$^2$)")
            ax.legend()
        else:
            (line,) = ax.plot([r.capacity for r in rows], [r.normalized_delay for r in rows], marker=".")
            line.set_gid("curve-matched")
            ax.set_xlabel("Flow table capacity C (= expected users)")
        ax.set_ylabel("Expected delay / $d_{ctrl}$")
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def emit_outputs(
    rows: list[OutputRow],
    report: dict[str, Any] | None,
    destination: str | os.PathLike,
    spec: SweepSpec,
    *,
    plot: bool = True,
) -> list[Path]:
    """Write CSV, optional SVG plot, optional report and a run manifest.

    Files are named after the mode (``sweep_area.csv`` ...).  Each file is
    written to a temporary sibling and renamed, so a failure never leaves
    a truncated output behind.
    """
    dest = Path(destination)
    stem = spec.mode.value
    written: list[Path] = []

    csv_path = dest / f"{stem}.csv"
    _atomic_write(csv_path, rows_to_csv(_sorted(rows)).encode())
    written.append(csv_path)

    if report is not None:
        report_path = dest / f"{stem}_report.json"
        _atomic_write(report_path, (json.dumps(report, indent=2, sort_keys=True) + "\n").encode())
        written.append(report_path)

    if plot and spec.mode in (Mode.SWEEP_AREA, Mode.SWEEP_MATCHED_CAPACITY) and rows:
        svg_path = dest / f"{stem}.svg"
        _atomic_write(svg_path, _plot_svg(rows, spec.mode))
        written.append(svg_path)

    manifest = {
        "package": "flowdelay",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": None if spec.sim is None else int(spec.sim.seed),
        "spec": spec.to_dict(),
        "rows": len(rows),
        "outputs": [p.name for p in written],
    }
    manifest_path = dest / f"{stem}_manifest.json"
    _atomic_write(manifest_path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    written.append(manifest_path)
    return written
