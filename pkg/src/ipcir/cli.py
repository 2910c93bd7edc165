"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 protocol error. Diagnostics go to stderr and name the module that failed.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from .errors import ConfigError, IpcirError
from .fusion import AGG_MEAN, AGG_PER_PROXY, FusionWeights
from .metrics import EvalConfig
from .simengine import DEFAULT_BLOCK, NORM_MINMAX, NORM_NONE

_AGG = {"mean": AGG_MEAN, "per-proxy": AGG_PER_PROXY}
_NORM = {"minmax": NORM_MINMAX, "none": NORM_NONE}


def _parse_weights(text: str) -> FusionWeights:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--weights expects wq,ws,wp, got {text!r}")
    try:
        wq, ws, wp = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--weights values must be numbers, got {text!r}") from None
    return FusionWeights(w_q=wq, w_s=ws, w_p=wp)


def _parse_ks(text: str, name: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"{name} expects a comma list of integers, got {text!r}") from None


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"--grid expects a comma list of floats, got {text!r}") from None


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--manifest", required=True, help="dataset manifest (JSON)")
    sub.add_argument("--lambda", dest="lam", type=float, default=0.5,
                     help="balance parameter in [0,1] (1 = text-only)")
    sub.add_argument("--weights", default="1,1,1", help="fusion weights wq,ws,wp")
    sub.add_argument("--agg", choices=sorted(_AGG), default="mean",
                     help="proxy aggregation mode")
    sub.add_argument("--norm", choices=sorted(_NORM), default="minmax",
                     help="score normalization before balancing")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--threads", type=int, default=None,
                     help="scoring threads (default: IPCIR_THREADS or cpu count)")
    sub.add_argument("--block", type=int, default=DEFAULT_BLOCK,
                     help="gallery rows per scoring tile")
    sub.add_argument("--seed", type=int, default=None, help="echoed into reports")
    sub.add_argument("--recall-ks", default=None, help="comma list, e.g. 1,5,10,50")
    sub.add_argument("--map-ks", default=None, help="comma list, e.g. 5,10,25,50")
    sub.add_argument("--subset-ks", default=None, help="comma list, e.g. 1,2,3")
    sub.add_argument("--no-figures", action="store_true",
                     help="skip rendering figures next to CSV outputs")


def _run_config(args):
    from .pipeline import RunConfig

    eval_kwargs = {}
    if args.recall_ks:
        eval_kwargs["recall_ks"] = _parse_ks(args.recall_ks, "--recall-ks")
    if args.map_ks:
        eval_kwargs["map_ks"] = _parse_ks(args.map_ks, "--map-ks")
    if args.subset_ks:
        eval_kwargs["subset_ks"] = _parse_ks(args.subset_ks, "--subset-ks")
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise ConfigError(f"manifest does not exist: {manifest}")
    return RunConfig(
        manifest=manifest,
        lam=args.lam,
        weights=_parse_weights(args.weights),
        aggregation=_AGG[args.agg],
        normalization=_NORM[args.norm],
        eval_config=EvalConfig(**eval_kwargs),
        out_dir=Path(args.out),
        threads=args.threads,
        block=args.block,
        seed=args.seed,
        figures=not args.no_figures,
    )


def _print_report(report) -> None:
    for family, k, value in report.rows():
        print(f"{family}@{k}: {100.0 * value:.2f}")


def cmd_ingest(args) -> int:
    from .embed_store import load_manifest, resolve_manifest

    resolved = resolve_manifest(load_manifest(Path(args.manifest)))
    manifest = resolved.manifest
    print(f"dataset: {manifest.name}")
    print(f"protocol: {manifest.metric_protocol.value}")
    print(f"dim: {resolved.dim}")
    for role in sorted(resolved.sets, key=int):
        eset = resolved.sets[role]
        print(f"set {role}: {eset.count} embeddings")
    print(f"queries: {len(manifest.queries)}")
    if resolved.baseline is not None:
        print(f"baseline table: {resolved.baseline.shape[0]} rows")
    return 0


def cmd_validate_layouts(args) -> int:
    from .layout import scan_layout_dir

    directory = Path(args.directory)
    if not directory.is_dir():
        raise ConfigError(f"not a directory: {directory}")
    lines = []
    for filename, violation in scan_layout_dir(directory):
        where = "-" if violation.instance is None else str(violation.instance)
        lines.append(f"{filename}\t{where}\t{violation.rule}\t{violation.detail}")
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(f"{len(lines)} violation(s) found", file=sys.stderr)
    return 3 if lines else 0


def cmd_gen_synth(args) -> int:
    from .synth import SynthSpec, generate

    spec = SynthSpec(
        dim=args.dim,
        gallery_size=args.gallery,
        num_queries=args.queries,
        edit_strength=args.edit,
        proxy_noise=args.noise,
        proxies_per_query=args.proxies,
        seed=args.seed,
        hard_negative_fraction=args.hard_negatives,
    )
    manifest_path = generate(spec, Path(args.out))
    print(manifest_path)
    return 0


def cmd_retrieve(args) -> int:
    from .pipeline import run_retrieve

    report = run_retrieve(_run_config(args), write_rankings=True)
    _print_report(report)
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import run_retrieve

    report = run_retrieve(_run_config(args), write_rankings=False)
    _print_report(report)
    return 0


def cmd_sweep_lambda(args) -> int:
    from .pipeline import run_sweep_lambda

    grid = _parse_grid(args.grid)
    rows = run_sweep_lambda(_run_config(args), grid)
    print(f"{len(rows)} sweep rows written")
    return 0


def cmd_sweep_proxies(args) -> int:
    from .pipeline import run_sweep_proxies

    rows = run_sweep_proxies(_run_config(args), args.max_proxies)
    print(f"{len(rows)} sweep rows written")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipcir",
        description="Proxy-fusion retrieval over precomputed embeddings:"
        " scoring, balancing, ranking, metrics, and sweeps.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("ingest", help="load and validate a dataset manifest")
    sub.add_argument("--manifest", required=True)
    sub.set_defaults(func=cmd_ingest)

    sub = subs.add_parser("validate-layouts", help="schema-check a directory of layout files")
    sub.add_argument("directory")
    sub.add_argument("--out", default=None, help="write the report here instead of stdout")
    sub.set_defaults(func=cmd_validate_layouts)

    sub = subs.add_parser("gen-synth", help="generate a synthetic benchmark")
    sub.add_argument("--out", required=True)
    sub.add_argument("--dim", type=int, default=64)
    sub.add_argument("--gallery", type=int, default=1000)
    sub.add_argument("--queries", type=int, default=50)
    sub.add_argument("--edit", type=float, default=0.7)
    sub.add_argument("--noise", type=float, default=0.4)
    sub.add_argument("--proxies", type=int, default=5)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--hard-negatives", type=float, default=0.0,
                     help="fraction of distractors planted as hard negatives")
    sub.set_defaults(func=cmd_gen_synth)

    sub = subs.add_parser("retrieve", help="run retrieval; write rankings and report")
    _add_run_flags(sub)
    sub.set_defaults(func=cmd_retrieve)

    sub = subs.add_parser("evaluate", help="run retrieval; write the report only")
    _add_run_flags(sub)
    sub.set_defaults(func=cmd_evaluate)

    sub = subs.add_parser("sweep-lambda", help="evaluate a grid of balance parameters")
    _add_run_flags(sub)
    sub.add_argument("--grid", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1",
                     help="comma list of lambda values, sorted ascending")
    sub.set_defaults(func=cmd_sweep_lambda)

    sub = subs.add_parser("sweep-proxies", help="evaluate proxy-count prefixes 1..N")
    _add_run_flags(sub)
    sub.add_argument("--max-proxies", type=int, required=True)
    sub.set_defaults(func=cmd_sweep_proxies)

    return parser


def _failing_module(exc: BaseException) -> str:
    module = "ipcir"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("ipcir."):
            module = name.removeprefix("ipcir.")
    return module


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IpcirError as exc:
        print(f"error[{_failing_module(exc)}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
