"""Command-line front end (``tbregsim``).

Every option can also be set through an environment variable named
``TBREGSIM_<DEST>``, e.g. ``TBREGSIM_JOBS=4`` or ``TBREGSIM_OUT=runs``;
explicit command-line values win.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from . import fitting
from .analysis import BracketError, SensitivityError, max_beatable_tumor, sensitivity_scan, stability_report
from .homeostasis import LITERATURE, bundled_parameters, derive_parameters, high_tumor_state, zero_tumor_state
from .model import PARAM_NAMES, STATE_NAMES, DomainError, format_parameters, load_parameters
from .scenarios import ScenarioError, list_presets, load_scenario, summary_text
from .solver import IntegrationError
from .staging import cells_to_diameter, cells_to_volume, classify_stage, diameter_to_cells, stage_label
from .svgplot import line_plot_svg

ENV_PREFIX = "TBREGSIM_"
FORM_ALIASES = {"power": "power", "rational": "rational-hill", "rational-hill": "rational-hill",
                "mm": "michaelis-menten", "michaelis-menten": "michaelis-menten"}
BATCH_SERIES = ("T", "B", "B_T")

# errors reported as a one-line message and exit status 1
USER_ERRORS = (ValueError, KeyError, OSError, DomainError, IntegrationError, fitting.FitError,
               ScenarioError, BracketError, SensitivityError)


def _default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - not on Linux
        return os.cpu_count() or 1


def _assignment(text: str):
    name, sep, value = text.partition("=")
    if not sep or not name.strip():
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number in {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--params", help="parameter file (name = value lines); default: bundled set")
    g.add_argument("--out", help="output directory")
    g.add_argument("--jobs", type=_positive_int, default=_default_jobs(), help="worker threads (default: all CPUs)")
    g.add_argument("--seed", type=int, default=0, help="seed for multistart fits")

    scen = argparse.ArgumentParser(add_help=False)
    s = scen.add_argument_group("scenario options")
    s.add_argument("--base", choices=("E0", "E1"), help="homeostasis state used for the initial condition")
    s.add_argument("--set", dest="ic", action="append", type=_assignment, default=[], metavar="NAME=VALUE",
                   help="override one initial component, e.g. --set T=9.5e6")
    s.add_argument("--param", action="append", type=_assignment, default=[], metavar="NAME=VALUE",
                   help="override one parameter, e.g. --param c=19")
    s.add_argument("--schedule", help="none, case1..case5, or a schedule CSV file")
    s.add_argument("--t-start", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--rtol", type=float)
    s.add_argument("--atol", type=float)
    s.add_argument("--sample-interval", type=float)

    parser = argparse.ArgumentParser(prog="tbregsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--list-presets", action="store_true", help="list bundled scenario presets and exit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common, scen], help="integrate one scenario")
    p.add_argument("scenario", nargs="?", default="paper-4.1-hightumor", help="preset name or scenario JSON")
    p.add_argument("--svg", action="store_true", help="also write trajectory.svg")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("batch", parents=[common, scen], help="run several scenarios and combine T, B, B_T")
    p.add_argument("scenarios", nargs="+", metavar="[LABEL=]SCENARIO")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("fit", parents=[common], help="fit growth or assay data")
    p.add_argument("kind", choices=("growth", "lysis", "nk-apoptosis"))
    p.add_argument("data", help="CSV file (t_days,cells | t_days,volume_mm3 | ratio,lysis_percent)")
    p.add_argument("--model", choices=("logistic", "gompertz"), default="logistic", help="growth model")
    p.add_argument("--fixed-p0", action="store_true", help="fix the growth curve start to the first datum")
    p.add_argument("--form", choices=sorted(FORM_ALIASES), help="trophic form (default: rational for lysis, "
                                                                 "power for nk-apoptosis)")
    p.add_argument("--all-forms", action="store_true", help="fit all three trophic forms and compare")
    p.add_argument("--cell-line", choices=sorted(fitting.CELL_LINES), default="MDA-MB-231")
    p.add_argument("--normalization", choices=("attributable", "total"), default="attributable")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("stability", parents=[common], help="zero-tumor equilibrium and its eigenvalues")
    p.add_argument("--param", action="append", type=_assignment, default=[], metavar="NAME=VALUE")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("sensitivity", parents=[common, scen], help="+/- perturbation scan of T(t_end)")
    p.add_argument("scenario", nargs="?", default="paper-4.3-sensitivity")
    p.add_argument("--perturbation", type=float, default=0.01)
    p.add_argument("--only", nargs="+", metavar="PARAM", help="restrict the scan to these parameters")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("threshold", parents=[common, scen], help="largest initial tumor that is beaten")
    p.add_argument("scenario", nargs="?", default="paper-4.1-hightumor")
    p.add_argument("--resolution", type=float, default=1e4, help="bracket width in cells")
    p.add_argument("--bracket", nargs=2, type=float, default=(1e4, 1e11), metavar=("LO", "HI"))
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("stage", parents=[common], help="T stage of a tumor size")
    size = p.add_mutually_exclusive_group(required=True)
    size.add_argument("--cells", type=float)
    size.add_argument("--diameter-mm", type=float)
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("derive-params", parents=[common], help="back-solve parameters from homeostasis states")
    p.add_argument("--derived-only", action="store_true", help="print only the homeostasis-derived values")
    p.set_defaults(func=cmd_derive_params)

    for action_parser in [parser] + list(sub.choices.values()):
        _apply_env_defaults(action_parser)
    return parser


def _apply_env_defaults(parser: argparse.ArgumentParser) -> None:
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        raw = os.environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = raw.strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(action, argparse._AppendAction):
            conv = action.type or str
            action.default = [conv(item) for item in raw.split()]
        elif action.nargs not in (None, "?"):
            conv = action.type or str
            action.default = [conv(item) for item in raw.split()]
        else:
            # argparse runs string defaults through ``type`` and ``choices`` later
            action.default = raw
        action.required = False


# -- helpers -----------------------------------------------------------------

def _scenario(args, ref=None):
    spec = load_scenario(ref or args.scenario)
    changes = {}
    if args.base:
        changes["base"] = args.base
    if args.ic:
        changes["ic_overrides"] = {**spec.ic_overrides, **dict(args.ic)}
    if args.param:
        changes["param_overrides"] = {**spec.param_overrides, **dict(args.param)}
    if args.params:
        changes["params_path"] = args.params
    if args.schedule is not None:
        changes["schedule"] = None if args.schedule == "none" else args.schedule
    if args.t_start is not None or args.t_end is not None:
        t0 = spec.t_span[0] if args.t_start is None else args.t_start
        t1 = spec.t_span[1] if args.t_end is None else args.t_end
        changes["t_span"] = (t0, t1)
    solver = dict(spec.solver)
    for key in ("rtol", "atol", "sample_interval"):
        if getattr(args, key) is not None:
            solver[key] = getattr(args, key)
    changes["solver"] = solver
    return spec.with_overrides(**changes)


def _out_dir(args, default=".") -> Path:
    return Path(args.out or default)


def _trajectory_svg(traj, title: str) -> str:
    return line_plot_svg(traj.times, {n: traj.component(n) for n in STATE_NAMES[:7]}, title)


def _write_run(directory: Path, spec, traj, svg: bool) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    traj.to_csv(directory / "trajectory.csv")
    (directory / "summary.txt").write_text(summary_text(spec, traj))
    if svg:
        (directory / "trajectory.svg").write_text(_trajectory_svg(traj, spec.name))


def _zero_start(spec):
    if spec.t_span[0] != 0:
        raise ScenarioError(f"{spec.name}: this command needs t_start = 0")
    return float(spec.t_span[1])


# -- commands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = _scenario(args)
    traj = spec.run()
    _write_run(_out_dir(args), spec, traj, args.svg)
    print(summary_text(spec, traj), end="")
    return 0


def cmd_batch(args) -> int:
    items = []
    for item in args.scenarios:
        label, sep, ref = item.partition("=")
        if not sep:
            label, ref = item, item
            label = Path(ref).stem if ref.endswith(".json") else ref
        items.append((label, ref))
    labels = [lab for lab, _ in items]
    dupes = sorted({lab for lab in labels if labels.count(lab) > 1})
    if dupes:
        raise ScenarioError(f"duplicate case label(s): {', '.join(dupes)}")
    bad = [lab for lab in labels if not lab or "/" in lab or lab in (".", "..")]
    if bad:
        raise ScenarioError(f"invalid case label(s): {bad}")
    specs = [(lab, _scenario(args, ref)) for lab, ref in items]  # validates every entry before running
    out = _out_dir(args)

    def run(entry):
        label, spec = entry
        try:
            return label, spec, spec.run(), None
        except USER_ERRORS as exc:
            return label, spec, None, exc

    if args.jobs > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run, specs))
    else:
        results = [run(e) for e in specs]

    failed = 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["case", "t", "series", "value"])
    for label, spec, traj, exc in results:
        if exc is not None:
            failed += 1
            print(f"tbregsim: scenario {label!r} failed: {exc}", file=sys.stderr)
            continue
        _write_run(out / label, spec, traj, args.svg)
        for name in BATCH_SERIES:
            col = traj.component(name)
            for t, v in zip(traj.times, col):
                writer.writerow([label, repr(float(t)), name, repr(float(v))])
        final = traj.final
        print(f"{label}: T({float(traj.times[-1]):g}) = {final.T!r}  B = {final.B!r}  B_T = {final.B_T!r}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "combined.csv").write_text(buf.getvalue())
    if args.svg:
        ok = [(lab, tr) for lab, _, tr, e in results if e is None]
        if ok:
            series = {f"{lab} T": (tr.times, tr.component("T")) for lab, tr in ok}
            (out / "combined_T.svg").write_text(line_plot_svg(ok[0][1].times, series, "tumor cells"))
    return 1 if failed else 0


def _fit_one(args, form, x, y):
    if args.kind == "lysis":
        config = fitting.AssayConfig.tumor_assay(args.cell_line)
        return fitting.fit_lysis_curve(x, y, config, form=form, seed=args.seed, jobs=args.jobs)
    config = fitting.AssayConfig.nk_assay(normalization=args.normalization)
    return fitting.fit_nk_apoptosis_curve(x, y, config, form=form, seed=args.seed, jobs=args.jobs)


def cmd_fit(args) -> int:
    path = Path(args.data)
    if not path.is_file():
        raise FileNotFoundError(f"data file {path} not found")
    out = _out_dir(args)
    if args.kind == "growth":
        t, cells = fitting.load_growth_csv(path)
        res = fitting.fit_growth_model(t, cells, args.model, fit_p0=not args.fixed_p0,
                                       seed=args.seed, jobs=args.jobs)
        res.write(out, f"growth_{args.model}", "t_days")
        print(res.report(), end="")
        return 0

    x, y = fitting.load_lysis_csv(path)
    default = "rational-hill" if args.kind == "lysis" else "power"
    forms = fitting.FORMS if args.all_forms else (FORM_ALIASES[args.form or default],)
    rows, failed = [], 0
    for form in forms:
        try:
            res = _fit_one(args, form, x, y)
        except fitting.FitError as exc:
            failed += 1
            print(f"{form}: not converged ({exc})", file=sys.stderr)
            rows.append((form, None))
            continue
        res.write(out, f"{args.kind}_{form}", "ratio")
        rows.append((form, res))
        if not args.all_forms:
            print(res.report(), end="")
    if args.all_forms:
        table = _comparison_table(rows)
        (out / f"{args.kind}_comparison.csv").write_text(table)
        print(table, end="")
    return 1 if failed else 0


def _comparison_table(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["form", "magnitude", "exponent", "half_saturation", "rss", "degenerate"])
    for form, res in rows:
        if res is None:
            w.writerow([form, "", "", "", "", "not converged"])
            continue
        coeffs = [repr(float(v)) for v in res.parameters] + [""] * (3 - len(res.parameters))
        w.writerow([form, *coeffs, repr(res.rss), str(res.degenerate).lower()])
    return buf.getvalue()


def cmd_stability(args) -> int:
    params = load_parameters(args.params) if args.params else bundled_parameters()
    if args.param:
        params = params.replace(**dict(args.param))
    text = stability_report(params).summary()
    print(text, end="")
    if args.out:
        _out_dir(args).mkdir(parents=True, exist_ok=True)
        (_out_dir(args) / "stability.txt").write_text(text)
    return 0


def cmd_sensitivity(args) -> int:
    spec = _scenario(args)
    horizon = _zero_start(spec)
    rep = sensitivity_scan(spec.parameters(), spec.initial_state(), horizon, args.perturbation,
                           spec.dose_schedule(), names=args.only, config=spec.solver_config(), jobs=args.jobs)
    text = rep.to_csv()
    print(f"# baseline T({horizon:g}) = {rep.baseline!r}", file=sys.stderr)
    print(text, end="")
    if args.out:
        _out_dir(args).mkdir(parents=True, exist_ok=True)
        (_out_dir(args) / "sensitivity.csv").write_text(text)
    return 0


def cmd_threshold(args) -> int:
    spec = _scenario(args)
    horizon = _zero_start(spec)
    res = max_beatable_tumor(spec.parameters(), spec.initial_state(), spec.dose_schedule(), horizon,
                             args.resolution, tuple(args.bracket), spec.solver_config(), args.jobs)
    text = res.summary() + f"stage: {stage_label(res.threshold)}\n"
    print(text, end="")
    if args.out:
        _out_dir(args).mkdir(parents=True, exist_ok=True)
        (_out_dir(args) / "threshold.txt").write_text(text)
    return 0


def cmd_stage(args) -> int:
    cells = diameter_to_cells(args.diameter_mm) if args.cells is None else args.cells
    cat = classify_stage(cells)
    hi = "inf" if cat.hi == float("inf") else repr(cat.hi)
    print(f"cells = {cells!r}\n"
          f"diameter_mm = {cells_to_diameter(cells)!r}\n"
          f"volume_mm3 = {cells_to_volume(cells)!r}\n"
          f"stage = {stage_label(cells)}\n"
          f"range_cells = [{cat.lo!r}, {hi})")
    return 0


def cmd_derive_params(args) -> int:
    literature = dict(LITERATURE)
    if args.params:
        literature.update(load_parameters(args.params, partial=True))
    derived = derive_parameters(zero_tumor_state(), high_tumor_state(), literature)
    values = derived if args.derived_only else {**literature, **derived}
    missing = [n for n in PARAM_NAMES if n not in values] if not args.derived_only else []
    if missing:
        raise KeyError(f"literature set lacks {', '.join(missing)}")
    text = format_parameters(values)
    print(text, end="")
    if args.out:
        _out_dir(args).mkdir(parents=True, exist_ok=True)
        (_out_dir(args) / "derived.params").write_text(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list_presets:
        for name, desc in list_presets():
            print(f"{name:<32} {desc}")
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"tbregsim: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
