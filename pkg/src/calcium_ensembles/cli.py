"""Command-line entry point.

Exit codes: 0 success, 2 missing or malformed input, 3 numerical failure
inside the sampler, 64 usage error (including unknown subcommands).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baseline import run_two_stage
from .hyperparams import ConfigError, RunOptions, default_config_yaml, load_config
from .ingest import (
    ArenaTrack, Region, TraceFormatError, WindowSpec, load_locations, load_track, load_traces,
    load_windows, save_windows, segment_windows,
)
from .metrics import adjusted_rand_index, spike_error_rates
from .sampler import ChainOutput, GibbsSampler, SamplerError
from .summaries import (
    arena_bounds, cross_window_coclustering, make_grid, num_clusters_summary,
    read_partition_csv, similarity_matrix, spatial_complexity_map, spatial_firing_map,
    vi_point_estimate, write_complexity_csv, write_complexity_points_csv,
    write_firing_maps_csv, write_histogram_csv, write_matrix_csv, write_partition_csv,
)
from .synthetic import SyntheticConfig, generate_dataset, load_replicate, save_replicate

EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command, args, inputs, extra=None):
    """Record everything needed to repeat the command; no timestamps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    text = json.dumps(manifest, indent=2, sort_keys=True, default=str)
    (out_dir / "manifest.json").write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(p)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    _require(args.config)
    mapping = {}
    if args.config:
        text = Path(args.config).read_text()
        mapping = yaml.safe_load(text) or {}
    config = SyntheticConfig.from_mapping(mapping)
    out = Path(args.out)
    seeds = np.random.SeedSequence(args.seed).spawn(args.replicates)
    for r, ss in enumerate(seeds):
        traces, locations, truth = generate_dataset(config, np.random.default_rng(ss))
        save_replicate(out / f"rep_{r:03d}", traces, locations, truth, config)
    write_manifest(out, "simulate", args, [args.config])
    return 0


def _parse_arena(text):
    try:
        cx, cy, r = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--arena expects cx,cy,r, got {text!r}") from None
    return (cx, cy), r


def cmd_segment(args):
    _require(args.track, args.traces)
    n_frames = load_traces(args.traces).n_frames if args.traces else None
    positions = load_track(args.track, n_frames)
    center, radius = _parse_arena(args.arena)
    all_windows, kept = segment_windows(ArenaTrack(positions, center, radius), args.min_len)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_windows(kept, out)
    save_windows(all_windows, out.with_name(out.stem + "_all" + out.suffix))
    write_manifest(out.parent, "segment", args, [args.track, args.traces])
    return 0


def _parse_window(text, n_frames):
    try:
        start, end = (int(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--window expects start:end, got {text!r}") from None
    if not 0 <= start < end <= n_frames:
        raise UsageError(f"window {text} outside 0:{n_frames}")
    return WindowSpec(start, end, Region.CENTER)


def _run_options(base: RunOptions, args):
    changes = {k: getattr(args, k) for k in ("iters", "burnin", "thin")
               if getattr(args, k) is not None}
    if args.store_draws:
        changes["store_draws"] = True
    return RunOptions(**{**base.__dict__, **changes})


def _fit_one(values, locations, hyper, run, seed, gp_update, window, out_dir):
    sampler = GibbsSampler(values, locations, hyper, seed=seed, n_jobs=run.n_jobs,
                           gp_update=gp_update)
    chain = sampler.run(run.iters, run.burnin, run.thin, store_draws=run.store_draws)
    chain.meta["window"] = [window.start, window.end, window.region.value]
    chain.save(out_dir)
    return chain


def cmd_fit(args):
    _require(args.traces, args.locations, args.config, args.windows)
    traces = load_traces(args.traces)
    locations = None
    if args.locations:
        locations, ids = load_locations(args.locations)
        if len(locations) != traces.n_neurons:
            raise TraceFormatError(
                f"{len(locations)} locations for {traces.n_neurons} neurons")
    configs = load_config(args.config)
    if args.windows:
        windows = load_windows(args.windows)
    elif args.window:
        windows = [_parse_window(args.window, traces.n_frames)]
    else:
        windows = [WindowSpec(0, traces.n_frames, Region.CENTER)]
    out = Path(args.out)
    jobs = []
    for ci, cfg in enumerate(configs):
        run = _run_options(cfg.run, args)
        cdir = out if len(configs) == 1 else out / f"config_{ci:02d}"
        for wi, w in enumerate(windows):
            wdir = cdir if len(windows) == 1 else cdir / f"window_{wi:03d}"
            jobs.append((traces.values[:, w.frames], locations, cfg.hyper, run, args.seed,
                         args.gp_update, w, wdir))
    if args.jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(args.jobs) as pool:
            list(pool.map(lambda j: _fit_one(*j), jobs))
    else:
        for j in jobs:
            _fit_one(*j)
    write_manifest(out, "fit", args, [args.traces, args.locations, args.config, args.windows],
                   {"configs": [c.to_dict() for c in configs]})
    return 0


def cmd_baseline(args):
    _require(args.traces)
    traces = load_traces(args.traces)
    spikes, labels, dec, clusterer = run_two_stage(
        traces.values, range(args.k_min, args.k_max + 1), args.replications,
        random_state=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "spikes.csv", spikes, delimiter=",", fmt="%d",
               header=",".join(f"t{t}" for t in range(spikes.shape[1])), comments="")
    write_partition_csv(labels + 1, out / "partition.csv", list(traces.neuron_ids))
    with open(out / "deconvolution.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "gamma", "lambda", "lambda_fallback"])
        for i, g, lam, fb in zip(traces.neuron_ids, dec.gammas_, dec.lambdas_, dec.fallback_):
            w.writerow([i, f"{g:.10g}", f"{lam:.10g}", int(fb)])
    with open(out / "silhouettes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "silhouette"])
        for k, s in sorted(clusterer.silhouettes_.items()):
            w.writerow([k, f"{s:.10g}"])
    write_manifest(out, "baseline", args, [args.traces])
    return 0


def _chain_dirs(path):
    path = Path(path)
    if (path / "chain.npz").exists():
        return [path]
    dirs = sorted(p.parent for p in path.glob("*/chain.npz"))
    if not dirs:
        raise FileNotFoundError(f"no chain found under {path}")
    return dirs


def cmd_summarize(args):
    dirs = _chain_dirs(args.chain)
    _require(args.track)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chains = [ChainOutput.load(d) for d in dirs]
    points, counts = [], []
    for d, chain in zip(dirs, chains):
        sub = out if len(dirs) == 1 else out / d.name
        sub.mkdir(parents=True, exist_ok=True)
        labels = vi_point_estimate(chain.partitions, restarts=args.salso_restarts,
                                   rng=chain.meta.get("seed", 0))
        points.append(labels)
        write_partition_csv(labels, sub / "partition.csv")
        write_matrix_csv(similarity_matrix(chain.partitions).probs, sub / "similarity.csv")
        np.savetxt(sub / "spike_probs.csv", chain.spike_probs, delimiter=",", fmt="%.10g")
        counts.append(num_clusters_summary(chain.partitions))
    write_histogram_csv(counts, out / "cluster_counts.csv", [d.name for d in dirs])
    extra = {"variance_convention": "population"}
    if len(points) > 1:
        co, frac = cross_window_coclustering(points)
        write_matrix_csv(co, out / "cross_window_coclustering.csv")
        extra["fraction_pairs_above_half"] = frac
    if args.track:
        center, radius = _parse_arena(args.arena)
        windows = [WindowSpec(*c.meta["window"][:2], Region(c.meta["window"][2])) for c in chains]
        track = load_track(args.track)
        grid = make_grid(arena_bounds(center, radius), args.grid)
        maps = spatial_firing_map(windows, [c.spike_probs for c in chains], track, grid)
        write_firing_maps_csv(maps, out / "firing_maps.csv")
        bandwidth = args.bandwidth if args.bandwidth else radius / 10.0
        cmaps = spatial_complexity_map([(c.mode, c.variance) for c in counts], track, windows,
                                       bandwidth, grid)
        write_complexity_csv(cmaps, out / "complexity_grid.csv")
        write_complexity_points_csv(cmaps, out / "complexity_points.csv")
    write_manifest(out, "summarize", args, [d / "chain.npz" for d in dirs] + [args.track], extra)
    return 0


def _replicate_pairs(truth, chain, baseline):
    truth = Path(truth)
    if (truth / "traces.csv").exists():
        return [(truth.name, truth, Path(chain) if chain else None,
                 Path(baseline) if baseline else None)]
    pairs = []
    for rep in sorted(p.parent for p in truth.glob("*/traces.csv")):
        pairs.append((rep.name, rep, Path(chain) / rep.name if chain else None,
                      Path(baseline) / rep.name if baseline else None))
    if not pairs:
        raise FileNotFoundError(f"no replicate found under {truth}")
    return pairs


def cmd_evaluate(args):
    _require(args.truth, args.chain, args.baseline)
    rows = []
    for name, tdir, cdir, bdir in _replicate_pairs(args.truth, args.chain, args.baseline):
        _, _, truth = load_replicate(tdir)
        if cdir is not None:
            chain = ChainOutput.load(cdir)
            labels = vi_point_estimate(chain.partitions, restarts=args.salso_restarts,
                                       rng=chain.meta.get("seed", 0))
            errs = spike_error_rates(truth.s_true, chain.spike_probs > 0.5)
            rows.append([name, "joint", *errs, adjusted_rand_index(labels, truth.zeta_true)])
        if bdir is not None:
            spikes = np.loadtxt(bdir / "spikes.csv", delimiter=",", skiprows=1, ndmin=2)
            _, labels = read_partition_csv(bdir / "partition.csv")
            errs = spike_error_rates(truth.s_true, spikes)
            rows.append([name, "two_stage", *errs, adjusted_rand_index(labels, truth.zeta_true)])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "method", "fn_rate", "fp_rate", "misclassification", "ari"])
        for r in rows:
            w.writerow(r[:2] + [f"{v:.10g}" for v in r[2:]])
    return 0


def cmd_config(args):
    if args.validate:
        _require(args.validate)
        configs = load_config(args.validate)
        print(yaml.safe_dump([c.to_dict() for c in configs], sort_keys=False), end="")
        return 0
    print(default_config_yaml(), end="")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="calcium-ensembles",
                description="Joint spike deconvolution and ensemble clustering of calcium traces.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate synthetic replicates")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("segment", help="split a track into Center/OuterRing windows")
    s.add_argument("--track", required=True)
    s.add_argument("--traces")
    s.add_argument("--arena", required=True, help="cx,cy,r")
    s.add_argument("--min-len", type=int, default=45)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("fit", help="run the Gibbs sampler")
    s.add_argument("--traces", required=True)
    s.add_argument("--locations")
    s.add_argument("--window", help="start:end frame range")
    s.add_argument("--windows", help="windows CSV; one chain per window")
    s.add_argument("--config")
    s.add_argument("--iters", type=int)
    s.add_argument("--burnin", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--store-draws", action="store_true")
    s.add_argument("--gp-update", choices=["joint", "sequential"], default="joint")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("baseline", help="two-stage l0 + consensus k-means")
    s.add_argument("--traces", required=True)
    s.add_argument("--k-min", type=int, default=2)
    s.add_argument("--k-max", type=int, default=10)
    s.add_argument("--replications", type=int, default=200)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("summarize", help="posterior summaries of stored chains")
    s.add_argument("--chain", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--salso-restarts", type=int, default=16)
    s.add_argument("--track")
    s.add_argument("--arena", default="0,0,1")
    s.add_argument("--grid", type=int, default=50)
    s.add_argument("--bandwidth", type=float)
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("evaluate", help="spike error rates and ARI against ground truth")
    s.add_argument("--truth", required=True)
    s.add_argument("--chain")
    s.add_argument("--baseline")
    s.add_argument("--salso-restarts", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("config", help="print or validate configuration")
    s.add_argument("--print-defaults", action="store_true")
    s.add_argument("--validate")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: missing input {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, TraceFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SamplerError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
