"""Command line entry point: ``gca <command> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 runtime or
numeric failure (including a failed verification suite).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics as M
from .chains import dump_chain, run_sampling_chain, spawn_rngs
from .config import PRESETS, RunConfig, resolve
from .data import FAMILIES, Dataset, center_cell, default_dataset, load_manifest, make_partial, save_manifest
from .errors import ConfigError, GCAError, ParseError
from .grid import State, load_shape, save_shape
from .kernel import load_checkpoint
from .trainer import run_dir_name, train
from .verify import SUITES

log = logging.getLogger("gca")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _config(args, **extra) -> RunConfig:
    over = {k: getattr(args, k, None) for k in ("grid", "count", "gap", "radius", "metric", "w", "T", "k",
                                               "t_hat", "buffer_size", "batch_size", "t_max", "lr",
                                               "decay_every", "steps", "checkpoint_every", "mode", "seed",
                                               "conv_radius", "conv_metric", "first_radius",
                                               "global_context", "centroid_features")}
    fams = getattr(args, "family", None)
    if fams:
        over["families"] = [f for item in fams for f in item.split(",") if f]
    over.update(extra)
    return resolve(getattr(args, "preset", None), getattr(args, "config", None), over)


def _dataset(args, cfg: RunConfig) -> Dataset:
    if getattr(args, "data", None):
        path = Path(args.data)
        if not path.exists():
            raise ConfigError(f"dataset not found: {path}")
        ds = load_manifest(path)
        if ds.resolution != cfg.grid and args.grid is not None:
            raise ConfigError(f"--grid {cfg.grid} disagrees with dataset resolution {ds.resolution}")
        return ds
    return default_dataset(list(cfg.families), cfg.count, cfg.grid, cfg.resolved_seed(), gap=cfg.gap)


# -- commands -----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    ds = default_dataset(list(cfg.families), cfg.count, cfg.grid, cfg.resolved_seed(), gap=cfg.gap)
    out = Path(args.out)
    save_manifest(ds, out)
    cfg.write(out)
    print(f"wrote {len(ds)} shapes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    tc = cfg.train_config()
    run = Path(args.out) / run_dir_name(tc)
    if args.resume and not Path(args.resume).is_file():
        raise ConfigError(f"checkpoint not found: {args.resume}")
    run.mkdir(parents=True, exist_ok=True)
    cfg.write(run)
    t0 = time.perf_counter()
    _, report = train(ds.records, tc, run_dir=run, resume=args.resume, progress_every=args.log_every)
    # wall time goes to the log only so reruns stay byte-identical
    log.info("trained %d steps in %.1fs", report.steps, time.perf_counter() - t0)
    print(run)
    return EXIT_OK


def _load_model(args):
    ck = load_checkpoint(args.ckpt)
    D = (ck.extra or {}).get("resolution")
    return ck, D


def cmd_sample(args) -> int:
    ck, D = _load_model(args)
    cfg = _config(args, radius=ck.spec.radius, metric=ck.spec.metric)
    D = args.grid or D or cfg.grid
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    seed_cell = State.from_cells([center_cell(D)], D)
    summary = []
    (out / "samples").mkdir(exist_ok=True)
    for i, rng in enumerate(spawn_rngs(cfg.resolved_seed(), args.n_chains)):
        chain = run_sampling_chain(ck.params, seed_cell, cfg.T, ck.spec, rng)
        dump_chain(chain, out / f"chain_{i:03d}", {"resolution": D, "index": i})
        if len(chain.final):
            save_shape(chain.final, out / "samples" / f"sample_{i:03d}.txt")
        summary.append({"index": i, "occupied": len(chain.final), "failed": chain.failed,
                        "final_churn": None if chain.failed else chain.final_churn()})
    _write_json(out / "summary.json", summary)
    print(f"wrote {args.n_chains} chains to {out}")
    return EXIT_OK


def cmd_complete(args) -> int:
    ck, D = _load_model(args)
    cfg = _config(args, radius=ck.spec.radius, metric=ck.spec.metric)
    partials, truths = [], []
    for p in args.partial or []:
        partials.append(load_shape(p))
        truths.append(None)
    if args.data:
        ds = load_manifest(args.data)
        rng = np.random.Generator(np.random.PCG64(cfg.resolved_seed()))
        for i in range(args.partials):
            rec = ds.records[i % len(ds)]
            partials.append(make_partial(rec, rng))
            truths.append(rec.state)
    if not partials:
        raise ConfigError("give --partial files or --data with --partials")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    streams = spawn_rngs(cfg.resolved_seed() + 1, len(partials))
    for g, (partial, truth) in enumerate(zip(partials, truths)):
        gdir = out / f"group_{g:03d}"
        gdir.mkdir(exist_ok=True)
        save_shape(partial, gdir / "partial.txt")
        if truth is not None:
            save_shape(truth, gdir / "truth.txt")
        rngs = [np.random.Generator(np.random.PCG64(s)) for s in
                np.random.SeedSequence(int(streams[g].integers(2**63))).spawn(cfg.k)]
        for j, rng in enumerate(rngs):
            chain = run_sampling_chain(ck.params, partial, cfg.T, ck.spec, rng)
            dump_chain(chain, gdir / "chains" / f"chain_{j:03d}", {"resolution": partial.resolution})
            if len(chain.final):
                save_shape(chain.final, gdir / f"completion_{j:03d}.txt")
    print(f"wrote {len(partials)} groups to {out}")
    return EXIT_OK


def _shape_files(path: Path) -> list:
    if (path / "samples").is_dir():
        path = path / "samples"
    if (path / "manifest.json").is_file():
        return load_manifest(path).states
    files = sorted(p for p in path.glob("*.txt"))
    if not files:
        raise ParseError("no shape files found", path)
    return [load_shape(p) for p in files]


def _points(states, center, args, rng):
    return [M.voxels_to_points(s, center=center, sample_k=args.points,
                               rng=rng if args.points else None).points for s in states]


def cmd_eval(args) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed or 0))
    gen_dir = Path(args.gen)
    if not gen_dir.is_dir():
        raise ConfigError(f"not a directory: {gen_dir}")
    if args.mode == "generation":
        if not args.ref:
            raise ConfigError("--ref is required in generation mode")
        gen = _points(_shape_files(gen_dir), True, args, rng)
        ref = _points(_shape_files(Path(args.ref)), True, args, rng)
        doc = {"mode": "generation", "n_gen": len(gen), "n_ref": len(ref),
               "mmd": M.mmd(gen, ref), "cov": M.cov(gen, ref), "one_nna": M.one_nna(gen, ref)}
    else:
        groups = sorted(p for p in gen_dir.glob("group_*") if p.is_dir())
        if not groups:
            raise ParseError("completion mode expects group_*/ directories", gen_dir)
        partials, comps, truths = [], [], []
        for g in groups:
            partials.append(load_shape(g / "partial.txt"))
            comps.append([load_shape(p) for p in sorted(g.glob("completion_*.txt"))])
            if (g / "truth.txt").is_file():
                truths.append(load_shape(g / "truth.txt"))
        ref_states = _shape_files(Path(args.ref)) if args.ref else truths
        if not ref_states:
            raise ConfigError("completion MMD needs --ref or truth.txt files")
        P = _points(partials, False, args, rng)
        C = [_points(c, False, args, rng) for c in comps]
        R = _points(ref_states, False, args, rng)
        flat = [c for group in C for c in group]
        doc = {"mode": "completion", "groups": len(groups), "k": [len(c) for c in C],
               "mmd": M.mmd(flat, R) if flat else None,
               "tmd": M.tmd(C), "tmd_per_partial": M.tmd_per_partial(C),
               "uhd": M.uhd_mean(P, C)}
    text = json.dumps(doc, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    kw = {"seed": args.seed or 0}
    if args.trials:
        kw["n_cases" if args.suite in ("oracle", "metrics-oracle", "collapse") else "n_states"] = args.trials
    result = SUITES[args.suite](**kw)
    print(result.line())
    return EXIT_OK if result.passed else EXIT_RUNTIME


def cmd_stats(args) -> int:
    path = Path(args.chain)
    doc_path = path / "chain.json" if path.is_dir() else path
    try:
        doc = json.loads(doc_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("chain.json not found", doc_path) from None
    D = args.grid or doc.get("resolution")
    if not D:
        raise ConfigError("grid size unknown; pass --grid")
    vol = float(D) ** 3
    rows = [{"t": t, "occupied_frac": st["occupied"] / vol, "neighborhood_frac": st["neighborhood"] / vol}
            for t, st in enumerate(doc["stats"])]
    print(json.dumps(rows, indent=1))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def _common(p, train_opts=False):
    p.add_argument("--config", help="JSON config file (flat keys)")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, help="defaults to $GCA_SEED, then 0")
    p.add_argument("--grid", type=int)
    if train_opts:
        p.add_argument("--family", action="append", help=f"one of {', '.join(FAMILIES)}; repeat or comma-join")
        p.add_argument("--count", type=int)
        p.add_argument("--gap", type=int)
        p.add_argument("--radius", type=int)
        p.add_argument("--metric", choices=["L1", "Linf"])
        p.add_argument("--w", type=float)
        p.add_argument("--t-hat", dest="t_hat", type=int)
        p.add_argument("--buffer-size", dest="buffer_size", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--t-max", dest="t_max", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--decay-every", dest="decay_every", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
        p.add_argument("--mode", choices=["generation", "completion"])
        p.add_argument("--conv-radius", dest="conv_radius", type=int)
        p.add_argument("--conv-metric", dest="conv_metric", choices=["L1", "Linf"])
        p.add_argument("--first-radius", dest="first_radius", type=int,
                       help="L1 radius of a wider first conv layer")
        p.add_argument("--global-context", dest="global_context", action="store_true", default=None,
                       help="feed state-mean features into the last conv layer")
        p.add_argument("--centroid-features", dest="centroid_features", action="store_true", default=None,
                       help="give every cell its offset from the state's centroid as input")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gca", description="Sparse voxel cellular-automaton shape generator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic shape dataset")
    _common(p, train_opts=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="buffered infusion training")
    _common(p, train_opts=True)
    p.add_argument("--data", help="dataset directory (default: generate from config)")
    p.add_argument("--out", default="runs", help="parent directory of run directories")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", dest="log_every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="run sampling chains from a single seed cell")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--count", dest="n_chains", type=int, default=4)
    p.add_argument("--T", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("complete", help="complete partial shapes")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--partial", nargs="*", help="partial shape files")
    p.add_argument("--data", help="dataset to draw partials from")
    p.add_argument("--partials", type=int, default=8, help="partials drawn from --data")
    p.add_argument("--k", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_complete)

    p = sub.add_parser("eval", help="point-set metrics")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref")
    p.add_argument("--mode", choices=["generation", "completion"], default="generation")
    p.add_argument("--points", type=int, help="resample every shape to this many points")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run a self-check suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("stats", help="search-space statistics of a dumped chain")
    p.add_argument("chain", help="chain directory or chain.json")
    p.add_argument("--grid", type=int)
    p.set_defaults(fn=cmd_stats)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except GCAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, ValueError) else EXIT_RUNTIME
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
