"""
treesic CLI - tables and curves for tree random access with MPR and SIC.

Every subcommand prints CSV (default) or JSON on stdout; status lines and
log records go to stderr.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, TypeAdapter, ValidationError

from arrivals import gated_bounds, sensitivity_curve, windowed_bounds, windowed_bounds_no_sic
from asymptotics import asymptotic_cri, asymptotic_model, asymptotic_no_sic, asymptotic_throughput
from bounds import TABLE_ANCHORS, compute_bounds, default_anchor
from cri import (
    METHOD_CHOICES,
    CriMethod,
    ProtocolConfig,
    conditional_throughput,
    cri_table,
    expected_cri,
)
from errors import InputValidationError, NumericalError
from sim import monte_carlo, simulate_cri_trace, simulate_gated, simulate_windowed

# Load environment variables
load_dotenv()

# Configuration
LOG_LEVEL = os.getenv("TREESIC_LOG_LEVEL", "WARNING")

TABLE_KS = tuple(TABLE_ANCHORS)
FIGURE_N_MAX = 1000
DARY_FACTORS = (2, 3, 4, 5, 6, 7, 8)
DARY_N_GRID = (10, 20, 50, 100, 200, 500, 1000)
SENSITIVITY_KS = (1, 8, 32)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

logger = logging.getLogger(__name__)


class ReproduceTarget(str, Enum):
    TABLE1 = "table1"
    TABLE2 = "table2"
    TABLE3 = "table3"
    FIG_CRI = "fig-cri"
    FIG_THROUGHPUT = "fig-throughput"
    FIG_AMPLITUDE = "fig-amplitude"
    FIG_SENSITIVITY = "fig-sensitivity"
    FIG_DARY_MST = "fig-dary-mst"
    FIG_DARY_THROUGHPUT = "fig-dary-throughput"


# ============== Pydantic Models ==============

class CriRow(BaseModel):
    """Expected CRI length and conditional throughput for one n."""
    n: int
    K: int
    p: float
    sic: bool
    method: str
    L_n: float
    T_n: float


class AsymRow(BaseModel):
    n: int
    K: int
    L_n: float
    T_n: float
    L_n_no_sic: float
    T_n_no_sic: float


class AmplitudeRow(BaseModel):
    K: int
    amplitude: float
    phase: float


class BoundsRow(BaseModel):
    """Linear bound coefficients and the throughput bounds they induce."""
    K: int
    m: int
    n_eval: int
    alpha: float
    beta: float
    A: float
    B: float


class StabilityRow(BaseModel):
    K: int
    access: str
    lambda_S: float
    lambda_U: float
    lambda_S_norm: float
    lambda_U_norm: float
    argmax_z: Optional[float] = None


class SensitivityRow(BaseModel):
    z: float
    F: float
    F_no_sic: float


class SimulateRow(BaseModel):
    """Monte Carlo summary of one (n, K, d) configuration."""
    n: int
    K: int
    d: int
    p: float
    sic: bool
    trials: int
    seed: int
    mean_slots: float
    std_dev: float
    ci95: float
    throughput: float


class SlotRow(BaseModel):
    index: Optional[int] = None
    kind: str
    count: Optional[int] = None
    depth: int


class WindowedSimRow(BaseModel):
    K: int
    lambda_: float
    delta: float
    windows: int
    seed: int
    mean_cri: float
    mean_users: float
    mean_wait: float
    drift: float
    final_backlog: float


class GatedSimRow(BaseModel):
    K: int
    lambda_: float
    cris: int
    seed: int
    mean_cri: float
    mean_users: float
    max_users: int
    diverged: bool


class Table2Row(BaseModel):
    K: int
    lambda_S_norm: float
    lambda_U_norm: float


class Table3Row(BaseModel):
    K: int
    lambda_S_norm: float
    lambda_U_norm: float
    lambda_S_norm_no_sic: float


class FigCriRow(BaseModel):
    n: int
    K: int
    L_n: float
    L_n_asymptotic: float


class FigThroughputRow(BaseModel):
    n: int
    K: int
    T_n: float
    T_n_asymptotic: float
    T_n_no_sic: float


class FigSensitivityRow(BaseModel):
    K: int
    z: float
    F: float
    F_no_sic: float


class DaryRow(BaseModel):
    d: int
    K: int
    n: int
    trials: int
    mean_slots: float
    throughput: float
    ci95: float


# ============== Output ==============

def _column(name: str) -> str:
    # `lambda` is a keyword; models carry it as `lambda_`.
    return name.rstrip("_")


def _cell(value, float_format: str) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, float_format)
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def render(rows: Sequence[BaseModel], fmt: str, model: type[BaseModel], float_format: str = ".6g") -> str:
    """CSV with a fixed header, or a JSON list of the full-precision rows."""
    if fmt == "json":
        data = TypeAdapter(list[model]).dump_python(list(rows), mode="json")
        payload = [{_column(k): v for k, v in row.items()} for row in data]
        return json.dumps(payload, indent=2) + "\n"
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    fields = list(model.model_fields)
    writer.writerow([_column(f) for f in fields])
    for row in rows:
        writer.writerow([_cell(getattr(row, f), float_format) for f in fields])
    return buffer.getvalue()


def status(message: str) -> None:
    print(message, file=sys.stderr)


# ============== Subcommands ==============

def cmd_cri(args) -> tuple[list[BaseModel], type[BaseModel]]:
    method = args.method
    if method == "auto" and args.p != 0.5:
        method = "recursive"
    rows = []
    if method == "recursive":
        table = cri_table(args.n_max, args.K, args.p, sic=not args.no_sic)
        kind = CriMethod.RECURSIVE if not args.no_sic else CriMethod.NO_SIC_RECURSIVE
        values = [(n, table[n], kind) for n in range(args.n_max + 1)]
    else:
        values = []
        for n in range(args.n_max + 1):
            result = expected_cri(n, args.K, args.p, sic=not args.no_sic, method=method)
            values.append((n, result.value, result.method))
    for n, value, kind in values:
        rows.append(
            CriRow(
                n=n,
                K=args.K,
                p=args.p,
                sic=not args.no_sic,
                method=kind.value,
                L_n=value,
                T_n=conditional_throughput(n, args.K, value),
            )
        )
    return rows, CriRow


def cmd_asym(args):
    rows = []
    for n in args.n:
        length_star, throughput_star = asymptotic_no_sic(n, args.K)
        rows.append(
            AsymRow(
                n=n,
                K=args.K,
                L_n=asymptotic_cri(n, args.K),
                T_n=asymptotic_throughput(n, args.K),
                L_n_no_sic=length_star,
                T_n_no_sic=throughput_star,
            )
        )
    return rows, AsymRow


def cmd_amplitude(args):
    rows = []
    for K in range(1, args.K_max + 1):
        model = asymptotic_model(K)
        rows.append(AmplitudeRow(K=K, amplitude=model.amplitude, phase=model.phase))
    return rows, AmplitudeRow


def _bounds_row(K: int, m: Optional[int], n_eval: Optional[int], sic: bool = True) -> BoundsRow:
    anchor_m, anchor_n = default_anchor(K)
    m = anchor_m if m is None else m
    if n_eval is None:
        n_eval = anchor_n if m == anchor_m else 2 * m
    result = compute_bounds(m, K, n_eval, sic)
    return BoundsRow(
        K=K, m=m, n_eval=n_eval, alpha=result.alpha_m, beta=result.beta_m, A=result.A_m, B=result.B_m
    )


def cmd_bounds(args):
    return [_bounds_row(K, args.m, args.n_eval, not args.no_sic) for K in args.K], BoundsRow


def _stability_row(report) -> StabilityRow:
    return StabilityRow(
        K=report.K,
        access=report.access.value,
        lambda_S=report.lambda_S,
        lambda_U=report.lambda_U,
        lambda_S_norm=report.lambda_S_norm,
        lambda_U_norm=report.lambda_U_norm,
        argmax_z=report.argmax_z,
    )


def cmd_gated(args):
    return [_stability_row(gated_bounds(K)) for K in args.K], StabilityRow


def cmd_windowed(args):
    compute = windowed_bounds_no_sic if args.no_sic else windowed_bounds
    return [_stability_row(compute(K, args.m)) for K in args.K], StabilityRow


def cmd_sensitivity(args):
    if args.z_step <= 0 or args.z_max <= 0:
        raise InputValidationError("--z-max and --z-step must be positive")
    grid = np.arange(args.z_step, args.z_max + args.z_step / 2, args.z_step)
    points = sensitivity_curve(args.K, args.m, grid)
    return [SensitivityRow(z=pt.z, F=pt.F, F_no_sic=pt.F_no_sic) for pt in points], SensitivityRow


def _config(args) -> ProtocolConfig:
    if args.p is not None and args.d != 2:
        raise InputValidationError("--p applies to binary splitting only (--d 2)")
    probs = None if args.p is None else [args.p, 1.0 - args.p]
    return ProtocolConfig(K=args.K, d=args.d, split_probs=probs, sic=not args.no_sic)


def cmd_simulate(args):
    config = _config(args)
    if args.trace:
        _, events = simulate_cri_trace(config, args.n, args.seed)
        rows = [SlotRow(index=e.index, kind=e.kind.value, count=e.count, depth=e.depth) for e in events]
        return rows, SlotRow
    stats = monte_carlo(config, args.n, args.trials, args.seed)
    row = SimulateRow(
        n=args.n,
        K=config.K,
        d=config.d,
        p=config.p,
        sic=config.sic,
        trials=stats.trials,
        seed=args.seed,
        mean_slots=stats.mean_slots,
        std_dev=stats.std_dev,
        ci95=stats.ci95_half_width,
        throughput=stats.throughput,
    )
    return [row], SimulateRow


def cmd_simulate_windowed(args):
    config = ProtocolConfig(K=args.K, sic=not args.no_sic)
    summary = simulate_windowed(config, args.lam, args.delta, args.windows, args.seed)
    row = WindowedSimRow(
        K=args.K,
        lambda_=args.lam,
        delta=args.delta,
        windows=summary.windows,
        seed=args.seed,
        mean_cri=summary.mean_cri,
        mean_users=summary.mean_users,
        mean_wait=summary.mean_wait,
        drift=summary.drift,
        final_backlog=summary.final_backlog,
    )
    return [row], WindowedSimRow


def cmd_simulate_gated(args):
    config = ProtocolConfig(K=args.K, sic=not args.no_sic)
    summary = simulate_gated(config, args.lam, args.cris, args.seed)
    row = GatedSimRow(
        K=args.K,
        lambda_=args.lam,
        cris=summary.cris,
        seed=args.seed,
        mean_cri=summary.mean_cri,
        mean_users=summary.mean_users,
        max_users=summary.max_users,
        diverged=summary.diverged,
    )
    return [row], GatedSimRow


# ============== Reproduce ==============

# x column and y columns of each figure's gnuplot companion script.
FIGURE_AXES = {
    ReproduceTarget.FIG_CRI: ("n", ["L_n", "L_n_asymptotic"]),
    ReproduceTarget.FIG_THROUGHPUT: ("n", ["T_n", "T_n_asymptotic", "T_n_no_sic"]),
    ReproduceTarget.FIG_AMPLITUDE: ("K", ["amplitude"]),
    ReproduceTarget.FIG_SENSITIVITY: ("z", ["F", "F_no_sic"]),
    ReproduceTarget.FIG_DARY_MST: ("d", ["throughput"]),
    ReproduceTarget.FIG_DARY_THROUGHPUT: ("n", ["throughput"]),
}


def _table1(trials: int):
    return [_bounds_row(K, None, None) for K in TABLE_KS], BoundsRow


def _table2(trials: int):
    rows = []
    for K in TABLE_KS:
        report = gated_bounds(K)
        rows.append(Table2Row(K=K, lambda_S_norm=report.lambda_S_norm, lambda_U_norm=report.lambda_U_norm))
    return rows, Table2Row


def _table3(trials: int):
    rows = []
    for K in TABLE_KS:
        report = windowed_bounds(K)
        plain = windowed_bounds_no_sic(K)
        rows.append(
            Table3Row(
                K=K,
                lambda_S_norm=report.lambda_S_norm,
                lambda_U_norm=report.lambda_U_norm,
                lambda_S_norm_no_sic=plain.lambda_S_norm,
            )
        )
    return rows, Table3Row


def _fig_cri(trials: int):
    rows = []
    for K in TABLE_KS:
        for n in range(1, FIGURE_N_MAX + 1):
            rows.append(FigCriRow(n=n, K=K, L_n=expected_cri(n, K).value, L_n_asymptotic=asymptotic_cri(n, K)))
    return rows, FigCriRow


def _fig_throughput(trials: int):
    rows = []
    for K in TABLE_KS:
        for n in range(1, FIGURE_N_MAX + 1):
            length = expected_cri(n, K).value
            plain = expected_cri(n, K, sic=False).value
            rows.append(
                FigThroughputRow(
                    n=n,
                    K=K,
                    T_n=conditional_throughput(n, K, length),
                    T_n_asymptotic=asymptotic_throughput(n, K),
                    T_n_no_sic=conditional_throughput(n, K, plain),
                )
            )
    return rows, FigThroughputRow


def _fig_amplitude(trials: int):
    rows = []
    for K in range(1, 65):
        model = asymptotic_model(K)
        rows.append(AmplitudeRow(K=K, amplitude=model.amplitude, phase=model.phase))
    return rows, AmplitudeRow


def _fig_sensitivity(trials: int):
    rows = []
    for K in SENSITIVITY_KS:
        m, _ = default_anchor(K)
        grid = np.arange(0.5, m + 0.25, 0.5)
        for pt in sensitivity_curve(K, m, grid):
            rows.append(FigSensitivityRow(K=K, z=pt.z, F=pt.F, F_no_sic=pt.F_no_sic))
    return rows, FigSensitivityRow


def _dary_row(d: int, n: int, trials: int, seed: int) -> DaryRow:
    stats = monte_carlo(ProtocolConfig(K=1, d=d), n, trials, seed)
    return DaryRow(
        d=d, K=1, n=n, trials=trials, mean_slots=stats.mean_slots,
        throughput=stats.throughput, ci95=stats.ci95_half_width,
    )


def _fig_dary_mst(trials: int):
    return [_dary_row(d, FIGURE_N_MAX, trials, seed=d) for d in DARY_FACTORS], DaryRow


def _fig_dary_throughput(trials: int):
    rows = [_dary_row(d, n, trials, seed=1000 * d + n) for d in (2, 3, 8) for n in DARY_N_GRID]
    return rows, DaryRow


REPRODUCERS = {
    ReproduceTarget.TABLE1: _table1,
    ReproduceTarget.TABLE2: _table2,
    ReproduceTarget.TABLE3: _table3,
    ReproduceTarget.FIG_CRI: _fig_cri,
    ReproduceTarget.FIG_THROUGHPUT: _fig_throughput,
    ReproduceTarget.FIG_AMPLITUDE: _fig_amplitude,
    ReproduceTarget.FIG_SENSITIVITY: _fig_sensitivity,
    ReproduceTarget.FIG_DARY_MST: _fig_dary_mst,
    ReproduceTarget.FIG_DARY_THROUGHPUT: _fig_dary_throughput,
}

TABLE_TARGETS = (ReproduceTarget.TABLE1, ReproduceTarget.TABLE2, ReproduceTarget.TABLE3)


def gnuplot_script(target: ReproduceTarget, data_file: str) -> str:
    x, ys = FIGURE_AXES[target]
    plots = ", \\\n     ".join(f'"{data_file}" using "{x}":"{y}" with linespoints title "{y}"' for y in ys)
    return (
        'set datafile separator ","\n'
        f'set xlabel "{x}"\n'
        f'set output "{target.value}.png"\n'
        "set terminal pngcairo size 900,600\n"
        f"plot {plots}\n"
    )


def cmd_reproduce(args) -> int:
    targets = list(ReproduceTarget) if args.target == "all" else [ReproduceTarget(args.target)]
    if args.out_dir is None and (len(targets) > 1 or args.gnuplot):
        raise InputValidationError("--out-dir is required for --target all and --gnuplot")

    for target in targets:
        rows, model = REPRODUCERS[target](args.trials)
        float_format = ".4f" if target in TABLE_TARGETS else ".6g"
        text = render(rows, args.format, model, float_format)
        if args.out_dir is None:
            sys.stdout.write(text)
            continue
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        data_file = f"{target.value}.{args.format}"
        (out_dir / data_file).write_text(text, encoding="utf-8")
        status(f"✅ {target.value}: {len(rows)} rows -> {out_dir / data_file}")
        if args.gnuplot and target in FIGURE_AXES:
            if args.format != "csv":
                status(f"⚠️ {target.value}: gnuplot script needs --format csv, skipped")
            else:
                (out_dir / f"{target.value}.gp").write_text(gnuplot_script(target, data_file), encoding="utf-8")
    return EXIT_OK


# ============== Parser ==============

class UsageError(Exception):
    pass


class TreesicArgumentParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors instead of exiting with code 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"split probability must lie in (0, 1), got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = TreesicArgumentParser(
        prog="treesic",
        description="Exact, asymptotic and simulated performance of tree random access with K-MPR and SIC",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    python cli.py cri --K 1 --n-max 10
    python cli.py bounds --K 32
    python cli.py simulate --K 1 --d 3 --n 1000 --trials 10000 --seed 42
    python cli.py reproduce --target all --out-dir results/ --gnuplot

TREESIC_THREADS caps Monte Carlo worker processes (0 or unset: all cores).
        """,
    )
    common = TreesicArgumentParser(add_help=False)
    common.add_argument("--format", choices=["csv", "json"], default="csv", help="Output format (default: csv)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=TreesicArgumentParser)

    p = sub.add_parser("cri", parents=[common], help="Expected CRI length L_n and throughput T_n for n = 0..n_max")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--n-max", type=int, required=True)
    p.add_argument("--p", type=_probability, default=0.5)
    p.add_argument("--no-sic", action="store_true")
    p.add_argument("--method", choices=METHOD_CHOICES, default="auto")
    p.set_defaults(handler=cmd_cri)

    p = sub.add_parser("asym", parents=[common], help="Asymptotic L_n and T_n with and without SIC")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.set_defaults(handler=cmd_asym)

    p = sub.add_parser("amplitude", parents=[common], help="Oscillation amplitude 2K|B(K,1)| and phase for K = 1..K_max")
    p.add_argument("--K-max", dest="K_max", type=int, default=64)
    p.set_defaults(handler=cmd_amplitude)

    p = sub.add_parser("bounds", parents=[common], help="Linear bounds alpha_m, beta_m on L_n")
    p.add_argument("--K", type=int, nargs="+", default=list(TABLE_KS))
    p.add_argument("--m", type=int)
    p.add_argument("--n-eval", type=int)
    p.add_argument("--no-sic", action="store_true")
    p.set_defaults(handler=cmd_bounds)

    p = sub.add_parser("gated", parents=[common], help="Gated-access stability bounds")
    p.add_argument("--K", type=int, nargs="+", default=list(TABLE_KS))
    p.set_defaults(handler=cmd_gated)

    p = sub.add_parser("windowed", parents=[common], help="Windowed-access stability bounds")
    p.add_argument("--K", type=int, nargs="+", default=list(TABLE_KS))
    p.add_argument("--m", type=int)
    p.add_argument("--no-sic", action="store_true")
    p.set_defaults(handler=cmd_windowed)

    p = sub.add_parser("sensitivity", parents=[common], help="Windowed stability bound as a function of the window load")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--z-max", type=float, required=True)
    p.add_argument("--z-step", type=float, default=0.25)
    p.set_defaults(handler=cmd_sensitivity)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo CRI length (or one slot trace with --trace)")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=_probability)
    p.add_argument("--no-sic", action="store_true")
    p.add_argument("--trace", action="store_true")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("simulate-windowed", parents=[common], help="Windowed-access queue dynamics")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--windows", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-sic", action="store_true")
    p.set_defaults(handler=cmd_simulate_windowed)

    p = sub.add_parser("simulate-gated", parents=[common], help="Gated-access CRI dynamics")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--cris", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-sic", action="store_true")
    p.set_defaults(handler=cmd_simulate_gated)

    p = sub.add_parser("reproduce", parents=[common], help="Reproduce a table or figure data set")
    p.add_argument("--target", choices=[t.value for t in ReproduceTarget] + ["all"], required=True)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--trials", type=int, default=1000, help="Monte Carlo trials for the simulation figures")
    p.add_argument("--gnuplot", action="store_true", help="Write <target>.gp next to each figure CSV")
    p.set_defaults(handler=cmd_reproduce)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run one subcommand and return the process exit code."""
    logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.WARNING), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        status(f"❌ {exc}")
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        if args.handler is cmd_reproduce:
            return cmd_reproduce(args)
        rows, model = args.handler(args)
    except NumericalError as exc:
        status(f"❌ numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (InputValidationError, ValidationError) as exc:
        status(f"❌ invalid input: {exc}")
        return EXIT_USAGE

    sys.stdout.write(render(rows, args.format, model))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
