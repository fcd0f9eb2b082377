"""Command-line front end.

Subcommands write their results under ``--out`` together with a
``manifest.json`` that is sufficient to reproduce every output byte for
byte (``hesskit replay``). Layer and block indices are 1-based here.

Exit codes: 2 invalid arguments, 3 dense-Hessian cap exceeded, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import DENSE_CAP, CapExceededError, NonFiniteError, ScalarFunction, ops
from .batching import AccumulationPlan, PlanError, accumulate_hessian, batch_sweep, hvp_operator
from .hessian import (
    ProbeDistribution,
    TruthSlice,
    exact_block,
    fd_step_sweep,
    hutchinson_diag_matvec,
    log_grid,
)
from .model import (
    LAYER_KINDS,
    AllLayers,
    ConfigError,
    CorpusError,
    IndexMap,
    ModelConfig,
    OneKindAllBlocks,
    SingleBlock,
    SingleLayer,
    SubsetError,
    TokenBatch,
    init_params,
    load_config,
    load_corpus,
    restricted_loss,
    sample_corpus,
    spec_to_dict,
    synthetic_corpus,
)
from .outputs import (
    read_manifest,
    sha256,
    write_manifest,
    write_matrix_csv,
    write_pgm,
    write_table_csv,
)

EXIT_USAGE, EXIT_CAP, EXIT_NUMERIC = 2, 3, 4

# options that never influence output bytes
_VOLATILE = ("out", "threads", "config", "corpus", "command", "func")


class UsageError(ValueError):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _int_list(text):
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _common(p: argparse.ArgumentParser, batch_default: int | None = 4):
    g = p.add_argument_group("model and data")
    g.add_argument("--config", help="model config file (key=value lines)")
    g.add_argument("--model-seed", type=int, help="override the config's initialization seed")
    g.add_argument("--corpus", help="token-id file: one sample per line")
    g.add_argument("--synthetic", choices=("uniform", "model"), default="uniform",
                   help="synthetic corpus when --corpus is absent (default: uniform)")
    g.add_argument("--seed", type=int, default=0, help="data seed (default: 0)")
    if batch_default is not None:
        g.add_argument("--batch", type=_positive_int, default=batch_default,
                       help=f"samples in the batch (default: {batch_default})")
    g.add_argument("--micro-batch", type=_positive_int, default=None,
                   help="samples per accumulation chunk (default: whole batch)")
    o = p.add_argument_group("output")
    o.add_argument("--out", required=True, help="output directory")
    o.add_argument("--header", action="store_true", help="write header rows/labels in CSV files")
    o.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: $HESSKIT_THREADS or CPU count)")


def _subset_flags(p: argparse.ArgumentParser, subset="single-layer", t=25):
    g = p.add_argument_group("parameter subset")
    g.add_argument("--subset", choices=("single-layer", "block", "kind-all-blocks", "all-layers"),
                   default=subset)
    g.add_argument("--layer", type=int, default=1, help="global layer index, 1-based")
    g.add_argument("--block", type=int, default=1, help="block index, 1-based")
    g.add_argument("--kind", choices=LAYER_KINDS, default="q_proj")
    g.add_argument("--t", type=_positive_int, default=t, help="leading entries taken per layer")
    g.add_argument("--max-dim", type=_positive_int, default=DENSE_CAP,
                   help=f"refuse dense Hessians above this dimension (default: {DENSE_CAP})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hesskit", description="Exact and stochastic Hessians of a toy transformer's loss.")
    parser.add_argument("--version", action="version", version=f"hesskit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exact", help="exact Hessian block for a parameter subset")
    _subset_flags(p)
    _common(p)

    p = sub.add_parser("diag", help="Hutchinson estimate of a whole layer's Hessian diagonal")
    p.add_argument("--layer", type=int, default=1, help="global layer index, 1-based")
    p.add_argument("--K", type=_positive_int, default=100, help="number of probes")
    p.add_argument("--dist", choices=[d.value for d in ProbeDistribution], default="rademacher")
    p.add_argument("--probe-seed", type=int, default=None, help="probe seed (default: --seed)")
    p.add_argument("--truth-rows", type=_int_list, default=None,
                   help="1-based rows of the layer whose exact diagonal is tracked, e.g. 1 or 1,3")
    _common(p)

    p = sub.add_parser("fd-compare", help="finite-difference vs exact Hessian over a step grid")
    _subset_flags(p, t=8)
    p.add_argument("--h-min", type=_positive_float, default=1e-8)
    p.add_argument("--h-max", type=_positive_float, default=1e-1)
    p.add_argument("--h-steps", type=_positive_int, default=8)
    p.add_argument("--quadratic", action="store_true",
                   help="use a random quadratic of dimension --t instead of the model loss")
    _common(p)

    p = sub.add_parser("batch-sweep", help="convergence of the mean Hessian with batch size")
    _subset_flags(p)
    p.add_argument("--b-list", type=_int_list, default=[1, 2, 4, 8, 16, 32, 64],
                   help="ascending batch sizes; the last is the reference")
    _common(p, batch_default=None)

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="directory for the re-run outputs")
    p.add_argument("--threads", type=_positive_int, default=None)
    return parser


# resolution ----------------------------------------------------------------

def resolve_config(args) -> ModelConfig:
    config = load_config(args.config) if args.config else ModelConfig()
    if getattr(args, "model_seed", None) is not None:
        config = ModelConfig.from_dict({**config.to_dict(), "seed": args.model_seed})
    return config


def resolve_spec(opts: dict, config: ModelConfig):
    subset, t = opts["subset"], opts["t"]
    if subset == "single-layer":
        if not 1 <= opts["layer"] <= config.n_layers:
            raise UsageError(f"--layer must be in [1, {config.n_layers}]")
        return SingleLayer(opts["layer"] - 1, t)
    if subset == "block":
        if not 1 <= opts["block"] <= config.blocks:
            raise UsageError(f"--block must be in [1, {config.blocks}]")
        return SingleBlock(opts["block"] - 1, t)
    if subset == "kind-all-blocks":
        return OneKindAllBlocks(opts["kind"], t)
    return AllLayers(t)


def _needed_samples(opts: dict) -> int:
    if opts["command"] == "batch-sweep":
        return max(opts["b_list"])
    return opts["batch"]


def resolve_tokens(args, opts: dict, params) -> TokenBatch:
    n = _needed_samples(opts)
    if args.corpus:
        corpus = load_corpus(args.corpus, params.config.seq_len)
        if corpus.size < n:
            raise UsageError(f"corpus has {corpus.size} samples, {n} needed")
        return corpus.rows(slice(0, n))
    if opts["synthetic"] == "model":
        return sample_corpus(params, n, opts["seed"])
    return synthetic_corpus(params.config, n, opts["seed"])


def _plan(opts: dict, threads) -> AccumulationPlan:
    b = _needed_samples(opts)
    return AccumulationPlan(opts.get("micro_batch") or b, threads=threads)


# commands -----------------------------------------------------------------
# each returns ({output name: path}, extra manifest fields)

def cmd_exact(opts, params, X, out: Path, threads):
    spec = resolve_spec(opts, params.config)
    index_map = IndexMap.for_spec(spec, params.config)
    if len(index_map) > opts["max_dim"]:
        raise CapExceededError(f"subset dimension {len(index_map)} exceeds --max-dim {opts['max_dim']}")
    block = accumulate_hessian(spec, params, X, _plan(opts, threads), cap=opts["max_dim"],
                               threads=threads)
    labels = index_map.labels(params.config) if opts["header"] else None
    csv = write_matrix_csv(out / "hessian.csv", block.H, labels, labels)
    scale = write_pgm(out / "hessian.pgm", block.H)
    extra = {"subset": spec_to_dict(spec), "dimension": len(index_map),
             "heatmap_scale": scale, "reduction": "sum",
             "max_asymmetry": block.asymmetry()}
    return {"hessian.csv": csv, "hessian.pgm": out / "hessian.pgm"}, extra


def _exact_diag_entries(op, coords: np.ndarray, m: int, chunk: int = 64) -> np.ndarray:
    values = np.empty(len(coords))
    for a in range(0, len(coords), chunk):
        cols = coords[a:a + chunk]
        E = np.zeros((len(cols), m))
        E[np.arange(len(cols)), cols] = 1.0
        values[a:a + chunk] = op(E)[np.arange(len(cols)), cols]
    return values


def cmd_diag(opts, params, X, out: Path, threads):
    cfg = params.config
    if not 1 <= opts["layer"] <= cfg.n_layers:
        raise UsageError(f"--layer must be in [1, {cfg.n_layers}]")
    l = opts["layer"] - 1
    d_in, d_out = cfg.layer_shape(l)
    spec = SingleLayer(l, d_in * d_out)
    op = hvp_operator(spec, params, X, _plan(opts, threads))
    truth = None
    if opts["truth_rows"]:
        rows = opts["truth_rows"]
        if any(not 1 <= r <= d_in for r in rows):
            raise UsageError(f"--truth-rows entries must be in [1, {d_in}]")
        coords = np.concatenate([np.arange((r - 1) * d_out, r * d_out) for r in rows])
        truth = TruthSlice(coords, _exact_diag_entries(op, coords, d_in * d_out))
    seed = opts["probe_seed"] if opts["probe_seed"] is not None else opts["seed"]
    est = hutchinson_diag_matvec(op, d_in * d_out, opts["K"], opts["dist"], seed, truth,
                                 threads=threads)
    D = est.running_mean.reshape(d_in, d_out)
    header = opts["header"]
    outputs = {
        "diag.csv": write_matrix_csv(
            out / "diag.csv", D,
            [f"row{i + 1}" for i in range(d_in)] if header else None,
            [f"col{j + 1}" for j in range(d_out)] if header else None),
    }
    scale = write_pgm(out / "diag.pgm", D)
    outputs["diag.pgm"] = out / "diag.pgm"
    cols = ["k", "rel_l2_diff"] + (["partial_rel_l2_loss"] if truth is not None else [])
    outputs["history.csv"] = write_table_csv(out / "history.csv", est.history(),
                                             cols if header else None)
    extra = {"subset": spec_to_dict(spec), "probe_seed": seed, "heatmap_scale": scale}
    if truth is not None:
        T = truth.values.reshape(len(opts["truth_rows"]), d_out)
        outputs["truth_diag.csv"] = write_matrix_csv(out / "truth_diag.csv", T)
    return outputs, extra


def _quadratic(m: int, seed: int):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((m, m))
    A = (G + G.T) / 2.0
    f = ScalarFunction(lambda u: ops.mul(ops.sum(ops.mul(ops.matmul(ops.reshape(u, (1, m)), A), u)), 0.5),
                       m, "quadratic")
    # at the origin every perturbed value is O(h^2), so roundoff stays relative
    return f, A, np.zeros(m)


def cmd_fd_compare(opts, params, X, out: Path, threads):
    if opts["h_min"] > opts["h_max"]:
        raise UsageError("--h-min must not exceed --h-max")
    extra = {}
    if opts["quadratic"]:
        f, A, u0 = _quadratic(opts["t"], opts["seed"])
        reference = A
        extra["mode"] = "quadratic"
    else:
        spec = resolve_spec(opts, params.config)
        f, index_map = restricted_loss(params, spec, X)
        if f.dimension > opts["max_dim"]:
            raise CapExceededError(f"subset dimension {f.dimension} exceeds --max-dim {opts['max_dim']}")
        u0 = index_map.gather(params)
        reference = exact_block(f, u0, index_map, cap=opts["max_dim"], threads=threads).H
        extra.update(mode="model", subset=spec_to_dict(spec))
    grid = log_grid(opts["h_min"], opts["h_max"], opts["h_steps"])
    rows = fd_step_sweep(f, u0, reference, grid)
    csv = write_table_csv(out / "fd_errors.csv", rows,
                          ["h", "rel_frobenius_error"] if opts["header"] else None)
    best = min(rows, key=lambda r: r[1])
    extra.update(best_h=best[0], best_error=best[1])
    return {"fd_errors.csv": csv}, extra


def cmd_batch_sweep(opts, params, X, out: Path, threads):
    spec = resolve_spec(opts, params.config)
    plan = AccumulationPlan(opts.get("micro_batch") or 1, threads=threads)
    rows = batch_sweep(spec, params, X, opts["b_list"], plan, cap=opts["max_dim"], threads=threads)
    csv = write_table_csv(out / "batch_sweep.csv",
                          [(r.b, r.rel_loss, r.rel_diff) for r in rows],
                          ["b", "rel_l2_loss", "rel_l2_diff"] if opts["header"] else None)
    return {"batch_sweep.csv": csv}, {"subset": spec_to_dict(spec)}


COMMANDS = {
    "exact": cmd_exact,
    "diag": cmd_diag,
    "fd-compare": cmd_fd_compare,
    "batch-sweep": cmd_batch_sweep,
}


def execute(opts: dict, config: ModelConfig, tokens: TokenBatch, out: Path,
            threads=None, argv=None) -> dict:
    """Run one subcommand from fully resolved inputs and write its manifest."""
    start = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    params = init_params(config)
    tokens.validate(config)
    outputs, extra = COMMANDS[opts["command"]](opts, params, tokens, out, threads)
    manifest = {
        "tool": "hesskit",
        "version": __version__,
        "command": opts["command"],
        "argv": list(argv) if argv is not None else None,
        "options": opts,
        "config": config.to_dict(),
        "seeds": {"model": config.seed, "data": opts.get("seed"),
                  "probes": extra.get("probe_seed")},
        "tokens": tokens.tokens.tolist(),
        "outputs": {name: {"path": str(Path(p).name), "sha256": sha256(p)}
                    for name, p in outputs.items()},
        "wall_clock_seconds": time.perf_counter() - start,
        **{k: v for k, v in extra.items() if k != "probe_seed"},
    }
    write_manifest(out / "manifest.json", manifest)
    return manifest


def replay(manifest_path, out: Path, threads=None) -> tuple[dict, list[str]]:
    """Re-execute a manifest; returns the new manifest and names of outputs that differ."""
    old = read_manifest(manifest_path)
    config = ModelConfig.from_dict(old["config"])
    tokens = TokenBatch(np.array(old["tokens"], dtype=np.int64))
    new = execute(dict(old["options"]), config, tokens, out, threads,
                  argv=["replay", str(manifest_path)])
    mismatched = [name for name, entry in old["outputs"].items()
                  if new["outputs"].get(name, {}).get("sha256") != entry["sha256"]]
    return new, mismatched


def _fail(code: int, message: str) -> int:
    print(f"hesskit: error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            new, mismatched = replay(args.manifest, Path(args.out), args.threads)
            if mismatched:
                print(f"outputs differ: {', '.join(mismatched)}")
                return 1
            print(f"reproduced {len(new['outputs'])} output(s) byte-identically in {args.out}")
            return 0
        config = resolve_config(args)
        opts = {k: v for k, v in vars(args).items() if k not in _VOLATILE}
        opts["command"] = args.command
        params = init_params(config)
        tokens = resolve_tokens(args, opts, params)
        manifest = execute(opts, config, tokens, Path(args.out), args.threads, argv)
    except (UsageError, ConfigError, CorpusError, SubsetError, PlanError, OSError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    except CapExceededError as exc:
        return _fail(EXIT_CAP, str(exc))
    except (NonFiniteError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, f"numerical failure: {exc}")
    for name, entry in manifest["outputs"].items():
        print(Path(args.out) / entry["path"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
