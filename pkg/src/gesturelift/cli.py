"""``gesturelift`` command line: data generation, training, evaluation, export.

Exit codes: 0 success, 1 internal failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from gesturelift import harness
from gesturelift.config import config_hash, load_config, merge, parse_overrides
from gesturelift.dataset import SPLITS, SynthConfig, WindowBatch, read_dataset, synth_generate, write_dataset
from gesturelift.errors import ParseError, StructuralError
from gesturelift.export import FORMATS, export_sequence
from gesturelift.metrics import BC_SIGMA, DIVERSITY_N
from gesturelift.plotting import plot_metric_bars, plot_training_curve

log = logging.getLogger("gesturelift")

DEFAULTS = {"seed": 0, "dim": 3, "sigma": BC_SIGMA, "div_n": DIVERSITY_N, "clips": 200, "duration": 20.0}
TRAINABLE = ("diffusion", "recurrent", "lifter", "encoder")


class UsageError(Exception):
    pass


def _file_digest(path) -> str:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _resolve(args, keys) -> dict:
    file_values = load_config(args.config) if args.config else {}
    flags = {k: getattr(args, k, None) for k in keys}
    cfg = merge({k: v for k, v in DEFAULTS.items() if k in keys}, merge(file_values, flags))
    # hyperparameters come from "hp.<name> = value" lines and --set flags
    hp = {k[3:]: v for k, v in file_values.items() if k.startswith("hp.")}
    hp.update(parse_overrides(getattr(args, "set", None)))
    return {k: cfg.get(k) for k in keys} | {"hp": hp}


def _write_rows(path, rows):
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


# --- commands --------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _resolve(args, ["out", "seed", "clips", "duration"])
    _require(cfg, "out")
    if int(cfg["clips"]) < 1:
        raise UsageError("clip count must be at least 1")
    synth = SynthConfig(n_clips=int(cfg["clips"]), duration=float(cfg["duration"]),
                        **{k: v for k, v in cfg["hp"].items() if k in SynthConfig.__dataclass_fields__})
    ds = synth_generate(synth, seed=int(cfg["seed"]))
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    write_dataset(cfg["out"], ds)
    counts = {name: len(ds.split_windows(name)) for name in SPLITS}
    print(f"wrote {cfg['out']}: {len(ds.clips)} clips, " +
          ", ".join(f"{k} {v} windows" for k, v in counts.items()))
    return 0


def cmd_train(args):
    cfg = _resolve(args, ["model", "dim", "dataset", "seed", "out"])
    _require(cfg, "model", "dataset", "out")
    kind, dim, seed = cfg["model"], int(cfg["dim"]), int(cfg["seed"])
    if kind not in TRAINABLE:
        raise UsageError(f"--model must be one of {', '.join(TRAINABLE)}")
    if dim not in (2, 3):
        raise UsageError("--dim must be 2 or 3")
    _file_digest(cfg["dataset"])
    ds = read_dataset(cfg["dataset"])
    hp = cfg["hp"]

    def progress(row):
        log.info("%s", row)

    if kind == "diffusion":
        from gesturelift.diffusion import train_diffusion
        model, report = train_diffusion(ds, dim, hp, seed, progress)
    elif kind == "recurrent":
        from gesturelift.recurrent import train_recurrent
        model, report = train_recurrent(ds, dim, hp, seed, progress)
    elif kind == "lifter":
        if dim != 3:
            raise UsageError("the lifter maps 2D to 3D; train it with --dim 3")
        from gesturelift.lifter import train_lifter
        model, report = train_lifter(ds, hp, seed, progress)
    else:
        from gesturelift.encoder import train_feature_autoencoder
        model, report = train_feature_autoencoder(ds, dim, hp, seed, progress)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    curve = out.with_suffix(".curve.csv")
    _write_rows(curve, report)
    plot_training_curve(report, out.with_suffix(".curve.png"), f"{kind} ({dim}D) seed {seed}")
    print(f"wrote {out} and {curve}")
    for row in report[-2:]:
        print("  " + ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return 0


def _evaluate(args, dim):
    other = 5 - dim
    keys = ["dataset", f"gen{dim}d", f"gen{other}d", "encoder", "seed", "guidance_w", "sigma", "div_n",
            "out", "model"]
    if dim == 3:
        keys.append("lifter")
    cfg = _resolve(args, keys)
    _require(cfg, *[k for k in keys if k not in ("guidance_w", "model")])
    inputs = {k: _file_digest(cfg[k]) for k in keys if k in ("dataset", "gen3d", "gen2d", "encoder", "lifter")}
    kinds = cfg["model"] or harness.GENERATOR_KINDS
    if cfg["model"] and cfg["model"] not in harness.GENERATOR_KINDS:
        raise UsageError("--model must be diffusion or recurrent")
    direct = harness.load_model(cfg[f"gen{dim}d"], kinds, dim)
    other_gen = harness.load_model(cfg[f"gen{other}d"], kinds, other)
    encoder = harness.load_model(cfg["encoder"], "encoder", dim)
    ds = read_dataset(cfg["dataset"])
    params = harness.EvalParams(seed=int(cfg["seed"]), guidance_w=cfg["guidance_w"],
                                sigma=float(cfg["sigma"]), div_n=int(cfg["div_n"]))
    if dim == 3:
        lifter = harness.load_model(cfg["lifter"], "lifter")
        result = harness.evaluate_3d(ds, direct, other_gen, lifter, encoder, params)
    else:
        result = harness.evaluate_2d(ds, direct, other_gen, encoder, params)

    chash = config_hash({k: v for k, v in cfg.items() if k not in ("out",) + tuple(inputs)} | {"inputs": inputs})
    run_id = f"eval{dim}d-{chash}"
    rows = harness.report_rows(result, run_id, params.seed)
    w_used = {m.kind: (params.guidance_w if params.guidance_w is not None else m.hp.get("guidance_w"))
              for m in (direct, other_gen) if m.kind == "diffusion"}
    header = {
        "run id": run_id,
        "config hash": chash,
        "seeds": f"sampling {params.seed}, split {ds.split_seed}, diversity {params.seed}",
        "metric parameters": f"BC sigma={params.sigma}, diversity N={params.div_n} "
                             f"(capped at half the sample count), repeats={params.div_repeats}, "
                             "kinematic beat threshold=mean+1 std of angular velocity",
        "guidance w": w_used.get("diffusion", "n/a"),
        "inputs": ", ".join(f"{k}={v}" for k, v in inputs.items()),
    }
    stamp = None if args.no_timestamp else datetime.now(timezone.utc).isoformat(timespec="seconds")
    title = f"{dim}D evaluation on the test split"
    table = harness.report_table(result, title, header, stamp)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / f"eval_{dim}d.csv").write_text(harness.report_csv(rows))
    (out / f"eval_{dim}d.txt").write_text(table)
    plot_metric_bars(rows, out / f"eval_{dim}d.png", title)
    print(table, end="")
    return 0


def cmd_evaluate_3d(args):
    return _evaluate(args, 3)


def cmd_evaluate_2d(args):
    return _evaluate(args, 2)


def cmd_export(args):
    cfg = _resolve(args, ["dataset", "bundle", "clip", "window", "seed", "guidance_w", "out", "format"])
    _require(cfg, "dataset", "out")
    fmt = cfg["format"] or "csv"
    if fmt not in FORMATS:
        raise UsageError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    _file_digest(cfg["dataset"])
    ds = read_dataset(cfg["dataset"])
    if cfg["bundle"]:
        model = harness.load_model(cfg["bundle"], harness.GENERATOR_KINDS)
        test = ds.batch("test", model.dim)
        i = int(cfg["window"] or 0)
        if not 0 <= i < len(test):
            raise UsageError(f"window {i} is outside the {len(test)}-window test split")
        one = WindowBatch(test.dirs[i:i + 1], test.features[i:i + 1], test.audio_beats[i:i + 1],
                                  test.windows[i:i + 1], test.fps)
        seq = harness.generate_for(model, one, int(cfg["seed"] or 0), cfg["guidance_w"])[0]
    else:
        c = int(cfg["clip"] or 0)
        if not 0 <= c < len(ds.clips):
            raise UsageError(f"clip {c} does not exist ({len(ds.clips)} clips)")
        seq = ds.clips[c].motion
    text = export_sequence(seq, fmt)
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg["out"]).write_text(text)
    print(f"wrote {cfg['out']} ({len(seq)} frames, {fmt})")
    return 0


def cmd_selftest(args):
    from gesturelift.selftest import run_selftest

    results = run_selftest()
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if all(ok for _, ok in results) else 1


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gesturelift", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *extra):
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        for name in extra:
            if name == "dataset":
                sp.add_argument("--dataset", help="GSTR dataset file")
            elif name == "dim":
                sp.add_argument("--dim", type=int, choices=(2, 3))
            elif name == "set":
                sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                                help="hyperparameter override (repeatable)")
            elif name == "metrics":
                sp.add_argument("--guidance-w", type=float)
                sp.add_argument("--sigma", type=float, help=f"BC kernel width (default {BC_SIGMA})")
                sp.add_argument("--div-n", type=int, help=f"diversity subset size (default {DIVERSITY_N})")
                sp.add_argument("--model", choices=harness.GENERATOR_KINDS,
                                help="require both generators to be of this kind")
                sp.add_argument("--no-timestamp", action="store_true")
        return sp

    sp = common(sub.add_parser("gen-data", help="synthesize a dataset"), "set")
    sp.add_argument("--clips", type=int)
    sp.add_argument("--duration", type=float)
    sp.set_defaults(func=cmd_gen_data)

    sp = common(sub.add_parser("train", help="train a model bundle"), "dataset", "dim", "set")
    sp.add_argument("--model", choices=TRAINABLE)
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("evaluate-3d", help="direct 3D vs lifted 2D generation"), "dataset", "metrics")
    sp.add_argument("--gen3d")
    sp.add_argument("--gen2d")
    sp.add_argument("--lifter")
    sp.add_argument("--encoder", help="3D feature encoder bundle")
    sp.set_defaults(func=cmd_evaluate_3d)

    sp = common(sub.add_parser("evaluate-2d", help="direct 2D vs projected 3D generation"), "dataset", "metrics")
    sp.add_argument("--gen2d")
    sp.add_argument("--gen3d")
    sp.add_argument("--encoder", help="2D feature encoder bundle")
    sp.set_defaults(func=cmd_evaluate_2d)

    sp = common(sub.add_parser("export", help="write joint positions as CSV or JSON"), "dataset")
    sp.add_argument("--format", choices=FORMATS)
    sp.add_argument("--clip", type=int, help="export ground-truth motion of this clip")
    sp.add_argument("--bundle", help="generator bundle; exports a sample for --window of the test split")
    sp.add_argument("--window", type=int)
    sp.add_argument("--guidance-w", type=float)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("selftest", help="metric oracles and gradient checks")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gesturelift: error: {exc}", file=sys.stderr)
        return 2
    except (StructuralError, ParseError, FileNotFoundError) as exc:
        print(f"gesturelift: error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # noqa: BLE001
        log.exception("internal failure")
        return 1


if __name__ == "__main__":
    sys.exit(main())
