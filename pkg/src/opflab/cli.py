"""Command-line entry point: ``opflab <command> [flags]``.

Configuration
-------------
``--config FILE`` reads a JSON object. Top-level keys set defaults for every
command; a key named after a command (e.g. ``"gen-data"``) holds an object
of defaults for that command only. Keys are flag names with dashes or
underscores (``"max_epochs"`` or ``"max-epochs"``). Flags given on the
command line override the file.

Outputs go below ``--out`` (default: ``$OPFLAB_OUT`` or ``./opflab-out``)::

    case/<name>.json                         parsed case
    data/<dataset>/                          samples.jsonl, manifest.json, case.json, summary.csv
    models/<dataset>/<task>/<arch>/rK.*      checkpoints and per-epoch history CSV
    results/<dataset>/<task>/<arch>.json     per-repeat test metrics
    eval/, feastest/, warmstart/, bench/     per-sample and summary CSV files
    locality/<case>/                         aggregate CSV, histogram CSV, plot data
    reports/                                 one CSV and Markdown table per (task, mode)
    manifests/<command>-<hash>.json          resolved configuration for re-runs

Every run writes a manifest; ``opflab --replay MANIFEST`` re-executes it.
Failures exit nonzero and print one JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("opflab")

OUT_ENV = "OPFLAB_OUT"
TASK_ALIASES = {"reg": "regression", "regression": "regression", "clf": "classification",
                "classification": "classification"}


class CLIError(RuntimeError):
    kind = "error"


class MissingArtifact(CLIError):
    kind = "missing_artifact"


class ConfigError(CLIError):
    kind = "config"


# -- helpers ---------------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _arch_dir(arch: str) -> str:
    return arch.replace(":", "-")


def _task(value: str) -> str:
    try:
        return TASK_ALIASES[value]
    except KeyError:
        raise ConfigError(f"unknown task {value!r}; use reg or clf") from None


def _dataset_dir(args) -> Path:
    p = Path(args.data)
    if not p.is_absolute() and not p.exists():
        p = Path(args.out) / "data" / args.data
    if not (p / "manifest.json").exists():
        raise MissingArtifact(f"no dataset at {p}; run gen-data first")
    return p


def _load_dataset(args):
    from .grid import from_json
    from .sampling import load

    path = _dataset_dir(args)
    case_file = path / "case.json"
    if not case_file.exists():
        raise MissingArtifact(f"{case_file} is missing; regenerate the dataset")
    case = from_json(case_file.read_text(encoding="utf-8"))
    return path, case, load(path, case=case)


def _model_dir(args, dataset_path: Path, arch: str) -> Path:
    return Path(args.out) / "models" / dataset_path.name / args.task / _arch_dir(arch)


def _load_model(args, dataset_path, case, arch, repeat=0):
    from .models import GridNet

    path = _model_dir(args, dataset_path, arch) / f"r{repeat}"
    if not path.with_name(path.name + ".json").exists():
        raise MissingArtifact(f"no trained {arch} checkpoint at {path}.json; run train first")
    return GridNet.load(path, case)


def _history_csv(history, path):
    from .pipelines import write_csv

    write_csv(["epoch", "train_loss", "val_loss"],
              [(h["epoch"], h["train_loss"], h["val_loss"]) for h in history], path)


# -- commands --------------------------------------------------------------------------------

def cmd_parse_case(args):
    from .grid import load_case, to_json

    case = load_case(args.case)
    out = Path(args.out) / "case" / f"{case.name}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_json(case) + "\n", encoding="utf-8")
    summary = {"name": case.name, "n_bus": case.n_bus, "n_gen": case.n_gen, "n_load": case.n_load,
               "n_branch": case.n_branch, "base_mva": case.base_mva}
    print(json.dumps(summary, sort_keys=True))
    return {"case": str(out)}


def cmd_gen_data(args):
    from .grid import load_case, to_json
    from .sampling import generate, save, split, write_summary_csv

    case = load_case(args.case)
    name = args.name or f"{case.name}_{args.mode}_{args.n}_s{args.seed}"
    ds = split(generate(case, args.n, args.mode, seed=args.seed, workers=args.workers), seed=args.seed)
    path = save(ds, Path(args.out) / "data" / name)
    (path / "case.json").write_text(to_json(case) + "\n", encoding="utf-8")
    write_summary_csv(ds, path / "summary.csv")
    print(f"{name}: {len(ds)} samples, rejected {ds.rejected}")
    return {"dataset": str(path)}


def _repeat_seed(seed, r):
    from .sampling import derive_seed

    return derive_seed(seed, 100 + r)


def cmd_train(args):
    from .pipelines import (
        TrainConfig,
        baseline_mse,
        evaluate_classification,
        evaluate_regression,
        summarize,
        train,
    )

    path, case, ds = _load_dataset(args)
    cfg = TrainConfig(batch=args.batch, patience=args.patience, max_epochs=args.max_epochs,
                      learning_rate=args.lr, seed=args.seed, repeats=args.repeats, task=args.task)
    target = "y" if args.task == "regression" else "active"
    xt, yt = ds.arrays("train", target)
    xs, ys = ds.arrays("test", target)
    rs = ds.removed("test")
    written = []
    for arch in args.arch:
        values, extra, seconds = [], [], 0.0
        mdir = _model_dir(args, path, arch)
        for r in range(args.repeats):
            model = train(case, arch, ds, cfg, seed=_repeat_seed(args.seed, r), k_edge=args.k_edge)
            seconds += model.fit_seconds_
            model.save(mdir / f"r{r}")
            _history_csv(model.history_, mdir / f"r{r}_history.csv")
            if args.task == "regression":
                values.append(evaluate_regression(model, xs, ys, rs))
                extra.append({"baseline_mse": baseline_mse(model, yt, ys)})
            else:
                m = evaluate_classification(model, xs, ys, rs)
                values.append(m["bce"])
                extra.append(m)
            log.info("%s repeat %d: %.6g", arch, r, values[-1])
        st = summarize(values) if len(values) > 1 else None
        res = {
            "dataset": path.name, "case_id": ds.case_id, "mode": ds.mode, "task": args.task, "arch": arch,
            "metric": "mse" if args.task == "regression" else "bce", "values": values, "extra": extra,
            "mean": float(np.mean(values)), "ci_half": None if st is None else st.half_width,
            "n_params": model.n_params_, "config": cfg.to_dict(), "k_edge": args.k_edge,
        }
        out = Path(args.out) / "results" / path.name / args.task / f"{_arch_dir(arch)}.json"
        _write_json(out, res)
        written.append(str(out))
        ci = "" if st is None else f" ± {st.half_width:.4g}"
        print(f"{arch}: {res['metric']} {res['mean']:.4g}{ci} over {args.repeats} repeats ({seconds:.1f} s)")
    return {"results": written}


def cmd_eval(args):
    from .pipelines import evaluate_classification, evaluate_regression, write_csv

    path, case, ds = _load_dataset(args)
    target = "y" if args.task == "regression" else "active"
    xs, ys = ds.arrays("test", target)
    rs = ds.removed("test")
    rows = []
    for arch in args.arch:
        mdir = _model_dir(args, path, arch)
        reps = sorted(mdir.glob("r*.json"), key=lambda p: int(p.stem[1:]))
        if not reps:
            raise MissingArtifact(f"no trained {arch} checkpoints in {mdir}; run train first")
        for p in reps:
            model = _load_model(args, path, case, arch, int(p.stem[1:]))
            if args.task == "regression":
                rows.append([arch, p.stem, evaluate_regression(model, xs, ys, rs), "", ""])
            else:
                m = evaluate_classification(model, xs, ys, rs)
                rows.append([arch, p.stem, m["bce"], m["precision"], m["recall"]])
    header = ["arch", "repeat", "mse" if args.task == "regression" else "bce", "precision", "recall"]
    out = Path(args.out) / "eval" / path.name / f"{args.task}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    print(write_csv(header, rows, out), end="")
    return {"eval": str(out)}


def _test_indices(ds, limit):
    idx = ds.split["test"]
    return idx if limit is None else idx[:limit]


def cmd_feastest(args):
    from .opf import solve
    from .pipelines import feasibility_test, write_csv
    from .sampling import sample_problem

    path, case, ds = _load_dataset(args)
    nontriv = ds.nontrivial
    idx = _test_indices(ds, args.limit)
    samples = [ds.samples[i] for i in idx]
    if args.predictor == "model":
        args.task = "classification"
        model = _load_model(args, path, case, args.arch[0], args.repeat)
        x = np.array([s.x for s in samples])
        labels = model.predict(x, [s.removed_branch for s in samples]) >= 0.5
    rng = np.random.default_rng(args.seed)
    rows = []
    for k, (i, s) in enumerate(zip(idx, samples)):
        truth = set(np.flatnonzero(s.active)) - ds.trivial_always_on
        if args.predictor == "model":
            pred = set(nontriv[labels[k]].tolist())
        elif args.predictor == "true":
            pred = truth
        elif args.predictor == "empty":
            pred = set()
        else:  # corrupted truth: flip a fraction of the non-trivial labels
            flip = rng.random(len(nontriv)) < args.corrupt
            pred = {int(j) for j, f in zip(nontriv, flip) if (j in truth) != f}
        p = sample_problem(case, s)
        full = solve(p)
        res = feasibility_test(p, pred, ds.trivial_always_on)
        rel = abs(res.solution.objective - full.objective) / abs(full.objective)
        rows.append([i, res.iterations, sum(len(a) for a in res.added), res.solution.objective,
                     full.objective, rel, res.solver_iterations, full.iterations])
    header = ["sample", "rounds", "added", "objective", "full_objective", "rel_error",
              "solver_iterations", "full_iterations"]
    out = Path(args.out) / "feastest" / path.name / f"{args.predictor}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(header, rows, out)
    worst = max((r[5] for r in rows), default=0.0)
    print(f"{len(rows)} samples, mean rounds {np.mean([r[1] for r in rows]):.2f}, worst rel error {worst:.2e}")
    return {"feastest": str(out)}


def cmd_warmstart(args):
    from .pipelines import warm_start_eval, write_csv
    from .sampling import sample_problem

    path, case, ds = _load_dataset(args)
    idx = _test_indices(ds, args.limit)
    samples = [ds.samples[i] for i in idx]
    args.task = "regression"
    if args.predictor == "model":
        model = _load_model(args, path, case, args.arch[0], args.repeat)
        preds = model.predict(np.array([s.x for s in samples]), [s.removed_branch for s in samples])
    else:
        rng = np.random.default_rng(args.seed)
        preds = [s.y_star * (1.0 + args.noise * rng.standard_normal(s.y_star.shape)) for s in samples]
    rows = []
    for i, s, t in zip(idx, samples, preds):
        r = warm_start_eval(sample_problem(case, s), t)
        rows.append([i, r.iterations_warm, r.iterations_flat, r.speedup, r.n_clipped, r.warm.status])
    header = ["sample", "iterations_warm", "iterations_flat", "speedup", "clipped", "warm_status"]
    out = Path(args.out) / "warmstart" / path.name / f"{args.predictor}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(header, rows, out)
    frac = np.mean([r[1] <= r[2] for r in rows]) if rows else 0.0
    print(f"{len(rows)} samples, warm <= flat iterations on {frac:.0%}")
    return {"warmstart": str(out)}


def cmd_bench(args):
    from .pipelines import inference_benchmark, mean_solve_time, write_csv
    from .sampling import sample_problem

    path, case, ds = _load_dataset(args)
    idx = _test_indices(ds, args.solves)
    problems = [sample_problem(case, ds.samples[i]) for i in idx]
    solve_s = mean_solve_time(problems)
    models = {a: _load_model(args, path, case, a, args.repeat) for a in args.arch}
    xs, _ = ds.arrays("test")
    rows = inference_benchmark(models, xs, args.n, solve_s, removed=ds.removed("test"))
    header = ["model", "n", "seconds", "seconds_per_1000", "solve_seconds_per_sample", "speedup"]
    out = Path(args.out) / "bench" / path.name / f"{args.task}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    print(write_csv(header, rows, out), end="")
    return {"bench": str(out)}


def cmd_locality(args):
    from .grid import load_case
    from .locality import aggregate, distance_histogram, sensitivity_run, write_aggregate_csv, write_plot_data
    from .pipelines import write_csv

    case = load_case(args.case)
    run = sensitivity_run(case, args.n_configs, seed=args.seed, step=args.step, workers=args.workers)
    rows = aggregate(run.records)
    out = Path(args.out) / "locality" / case.name
    out.mkdir(parents=True, exist_ok=True)
    write_aggregate_csv(rows, out / "aggregate.csv")
    write_plot_data(rows, out)
    hist = distance_histogram(case)
    write_csv(["distance", "count"], sorted(hist.items()), out / "histogram.csv")
    _write_json(out / "missing.json", {"missing": run.missing, "skipped_loads": run.skipped})
    print(f"{len(run.records)} records, {len(run.missing)} failed perturbations")
    return {"locality": str(out)}


def cmd_report(args):
    from .pipelines import RunStats, stats_table, write_csv, write_markdown

    root = Path(args.out) / "results"
    files = sorted(root.glob("*/*/*.json"))
    if not files:
        raise MissingArtifact(f"no results under {root}; run train first")
    tables = {}
    for f in files:
        r = json.loads(f.read_text(encoding="utf-8"))
        key = (r["task"], r["mode"])
        hw = r["ci_half"] if r["ci_half"] is not None else float("nan")
        tables.setdefault(key, {}).setdefault(r["case_id"], {})[r["arch"]] = RunStats(
            tuple(r["values"]), r["mean"], hw)
    out = Path(args.out) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (task, mode), results in sorted(tables.items()):
        header, rows = stats_table(results)
        stem = out / f"{task}_{mode}"
        write_csv(header, rows, stem.with_suffix(".csv"))
        write_markdown(header, rows, stem.with_suffix(".md"))
        written.append(str(stem.with_suffix(".csv")))
        print(f"{stem.with_suffix('.csv')}: {len(rows)} cases x {len(header) - 1} models")
    return {"reports": written}


COMMANDS = {
    "parse-case": cmd_parse_case,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "feastest": cmd_feastest,
    "warmstart": cmd_warmstart,
    "bench": cmd_bench,
    "locality": cmd_locality,
    "report": cmd_report,
}


# -- parser ---------------------------------------------------------------------------------------

# (flag, type, default, help); a default of REQUIRED must come from flags or the config file
REQUIRED = object()

_COMMON = [
    ("--out", str, None, "output directory (default: $OPFLAB_OUT or ./opflab-out)"),
    ("--seed", int, 0, "root seed; every random stream derives from it"),
    ("--workers", int, None, "worker processes (default: number of CPUs)"),
]
_DATA = ("--data", str, REQUIRED, "dataset directory or name under OUT/data")
_ARCH = ("--arch", str, ["FCNN:global-1"], "architecture FAMILY:VARIANT, repeatable (e.g. GCN:global-3)")
_TASK = ("--task", str, "reg", "reg (Pg/Vm regression) or clf (binding-constraint classification)")
_REPEAT = ("--repeat", int, 0, "which trained repeat to load")
_LIMIT = ("--limit", int, None, "use only the first N test samples (default: all)")

_FLAGS = {
    "parse-case": [("--case", str, REQUIRED, "MATPOWER .m file, case JSON, or builtin name (case5..case118)")],
    "gen-data": [
        ("--case", str, REQUIRED, "MATPOWER .m file, case JSON, or builtin name"),
        ("--n", int, 1000, "number of labelled samples"),
        ("--mode", str, "fixed", "fixed (load re-scaling) or contingency (plus one line removed)"),
        ("--name", str, None, "dataset name (default: CASE_MODE_N_sSEED)"),
    ],
    "train": [
        _DATA, _ARCH, _TASK,
        ("--k-edge", float, 0.0, "edge-weight exponent k in |Z|^-k, Z in per-unit (0 = binary adjacency)"),
        ("--repeats", int, 3, "independent training runs"),
        ("--max-epochs", int, 500, "epoch cap [epochs]"),
        ("--patience", int, 20, "early-stopping patience [epochs]"),
        ("--batch", int, 100, "mini-batch size [samples]"),
        ("--lr", float, 1e-4, "Adam learning rate"),
    ],
    "eval": [_DATA, _ARCH, _TASK],
    "feastest": [
        _DATA, _ARCH, _REPEAT, _LIMIT,
        ("--predictor", str, "model", "model (trained classifier), true, empty, or corrupt"),
        ("--corrupt", float, 0.2, "fraction of non-trivial labels flipped with --predictor corrupt [0-1]"),
    ],
    "warmstart": [
        _DATA, _ARCH, _REPEAT, _LIMIT,
        ("--predictor", str, "model", "model (trained regressor) or noise (target plus noise)"),
        ("--noise", float, 0.01, "Gaussian noise std with --predictor noise [fraction of each value]"),
    ],
    "bench": [
        _DATA, _ARCH, _TASK, _REPEAT,
        ("--n", int, 1000, "samples per timed batch"),
        ("--solves", int, 20, "test problems used to time the full solve"),
    ],
    "locality": [
        ("--case", str, REQUIRED, "MATPOWER .m file, case JSON, or builtin name"),
        ("--n-configs", int, 100, "load configurations"),
        ("--step", float, 0.01, "Pd perturbation [fraction of the load]"),
    ],
    "report": [],
}


_HELP = {
    "parse-case": "parse a case file and write its JSON form",
    "gen-data": "sample load profiles, solve them and store a labelled dataset",
    "train": "train models with early stopping and record test metrics",
    "eval": "re-evaluate trained checkpoints on the test split",
    "feastest": "run the iterative feasibility test with predicted binding sets",
    "warmstart": "compare warm-started and flat-start solver iterations",
    "bench": "time batched inference against full solves",
    "locality": "measure load sensitivities by hop distance",
    "report": "collect results into CSV and Markdown tables",
}


def _fmt_default(d):
    if d is REQUIRED:
        return "required"
    if d is None:
        return None
    return " ".join(d) if isinstance(d, list) else str(d)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # unknown flags and bad values become error records, not usage dumps
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="opflab", description="ML-assisted AC-OPF experiments.")
    p.add_argument("--version", action="version", version=f"opflab {__version__}")
    p.add_argument("--config", help="JSON config file (flags override its values)")
    p.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a run manifest")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    for name, flags in _FLAGS.items():
        sp = sub.add_parser(name, help=_HELP[name])
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
        for flag, typ, default, text in _COMMON + flags:
            shown = _fmt_default(default)
            kw = {"default": argparse.SUPPRESS, "help": text if shown is None else f"{text} [default: {shown}]"}
            if isinstance(default, list):
                kw["action"] = "append"
            sp.add_argument(flag, type=typ, **kw)
    return p


def _defaults(command):
    return {f[0][2:].replace("-", "_"): f[2] for f in _COMMON + _FLAGS[command]}


def _from_config(path, command) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    known = set(_defaults(command))
    out = {}
    layers = [{k: v for k, v in raw.items() if k not in COMMANDS}, raw.get(command, {})]
    for layer in layers:
        for k, v in layer.items():
            key = k.replace("-", "_")
            if key not in known:
                # keys for other commands are fine at top level
                if layer is layers[0] and any(key in _defaults(c) for c in COMMANDS):
                    continue
                raise ConfigError(f"unknown config key {k!r} for {command}")
            out[key] = v
    return out


def resolve(argv) -> tuple[str, dict]:
    """Parse flags and merge defaults, config file and flags into one settings dict."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.replay:
        manifest = json.loads(Path(ns.replay).read_text(encoding="utf-8"))
        return manifest["command"], dict(manifest["settings"]), ns.verbose
    if not ns.command:
        parser.print_help()
        raise ConfigError("no command given")
    settings = _defaults(ns.command)
    if ns.config:
        settings.update(_from_config(ns.config, ns.command))
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "replay", "verbose")}
    settings.update(given)
    if settings["out"] is None:
        settings["out"] = os.environ.get(OUT_ENV, "opflab-out")
    if settings["workers"] is None:
        settings["workers"] = os.cpu_count() or 1
    missing = [k for k, v in settings.items() if v is REQUIRED]
    if missing:
        raise ConfigError(f"{ns.command}: missing required setting(s) {', '.join('--' + m.replace('_', '-') for m in missing)}")
    if "arch" in settings and isinstance(settings["arch"], str):
        settings["arch"] = [settings["arch"]]
    if "task" in settings:
        settings["task"] = _task(settings["task"])
    _validate(ns.command, settings)
    return ns.command, settings, ns.verbose


def _validate(command, s):
    from .models import ArchSpec

    if "arch" in s:
        for a in s["arch"]:
            try:
                ArchSpec.parse(a, s.get("task", "regression"))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
    if s.get("mode") not in (None, "fixed", "contingency"):
        raise ConfigError(f"--mode must be fixed or contingency, got {s['mode']!r}")
    for key in ("n", "repeats", "max_epochs", "patience", "batch", "n_configs", "workers", "solves"):
        if key in s and s[key] is not None and s[key] < 1:
            raise ConfigError(f"--{key.replace('_', '-')} must be at least 1")
    if command == "feastest" and s["predictor"] not in ("model", "true", "empty", "corrupt"):
        raise ConfigError(f"unknown predictor {s['predictor']!r}")
    if command == "warmstart" and s["predictor"] not in ("model", "noise"):
        raise ConfigError(f"unknown predictor {s['predictor']!r}")
    if "case" in s:
        from .grid import BUILTIN_CASES

        if s["case"] not in BUILTIN_CASES and not Path(s["case"]).exists():
            raise ConfigError(f"case {s['case']!r} is neither a builtin name nor an existing file")


def _manifest(command, settings) -> dict:
    # workers never changes results, so it stays out of the hash
    key = {k: v for k, v in settings.items() if k != "workers"}
    digest = hashlib.sha256(_canonical({"command": command, "settings": key}).encode()).hexdigest()
    return {"command": command, "settings": settings, "config_hash": digest, "version": __version__,
            "seed": settings.get("seed"), "numpy": np.__version__}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    command = next((a for a in argv if a in COMMANDS), None)
    try:
        command, settings, verbose = resolve(argv)
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args = argparse.Namespace(**settings)
        t0 = time.perf_counter()
        outputs = COMMANDS[command](args)
        manifest = _manifest(command, settings)
        manifest["outputs"] = outputs
        path = Path(settings["out"]) / "manifests" / f"{command}-{manifest['config_hash'][:12]}.json"
        _write_json(path, manifest)
        log.info("%s finished in %.1f s; manifest %s", command, time.perf_counter() - t0, path)
        return 0
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error record
        kind = getattr(exc, "kind", type(exc).__name__)
        record = {"error": kind, "type": type(exc).__name__, "message": str(exc), "command": command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
