"""Command-line entry point: ``v2v <subcommand>``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import bench as B
from .dit import DitConfig, MicroDiT, sample
from .errors import V2VError
from .pipeline import PipelineConfig, build_bundle, derive_seed, fit_length, layer_sweep, run_pipeline, token_sweep
from .raster import read_png, write_png
from .vlm import MicroVLM, VlmConfig

DEFAULT_BUDGETS = (50, 100, 150, 200, 300)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- configuration ------------------------------------------------------------

def load_run_config(args) -> dict:
    """File values first, then flag overrides; returns the merged RunConfig dict."""
    cfg = {"pipeline": {}, "dit": {}, "vlm": {}, "judge": {}, "bench": {}}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        for k, v in data.items():
            if isinstance(v, dict):
                cfg.setdefault(k, {}).update(v)
            else:
                cfg[k] = v
    p, d = cfg["pipeline"], cfg["dit"]
    for flag, key in (("mode", "mode"), ("tokens", "tokens"), ("cond_length", "cond_length"),
                      ("template", "template"), ("system", "system_text")):
        if getattr(args, flag, None) is not None:
            p[key] = getattr(args, flag)
    if getattr(args, "layer", None) is not None:
        p["layer"] = None if args.layer == "last" else int(args.layer)
    for flag, key in (("steps", "steps"), ("cfg", "guidance"), ("seed", "seed")):
        if getattr(args, flag, None) is not None:
            d[key] = getattr(args, flag)
    d.setdefault("seed", cfg.get("seed", 42))
    return cfg


def pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(dit=DitConfig(**cfg["dit"]), vlm=VlmConfig(**cfg["vlm"]), **cfg["pipeline"])


def load_models(args, pc: PipelineConfig) -> tuple[MicroVLM, MicroDiT]:
    vlm = MicroVLM.load(args.vlm) if getattr(args, "vlm", None) else MicroVLM(pc.vlm)
    if getattr(args, "dit", None):
        dit = MicroDiT.load(args.dit)
    else:
        dit = MicroDiT(replace(pc.dit, steps=pc.dit.steps))
    return vlm, dit


def _sampling(pc: PipelineConfig, dit: MicroDiT) -> PipelineConfig:
    """Checkpoint architecture, requested sampling settings."""
    d = replace(dit.config, steps=pc.dit.steps, guidance=pc.dit.guidance, seed=pc.dit.seed)
    return replace(pc, dit=d)


def _write_run(out: Path, img, trace, run_cfg) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_png(img, out / "output.png")
    doc = trace.to_dict() | {"run_config": run_cfg}
    (out / "trace.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return {"output": str(out / "output.png"), "trace": str(out / "trace.json"), "bundle_length": trace.bundle_length,
            "output_hash": trace.output_hash, "warnings": trace.warnings}


def _plan(args, cfg, pc, **extra) -> dict:
    return {"command": args.command, "config": cfg, "pipeline": pc.to_dict(), **extra}


# -- subcommands --------------------------------------------------------------

def cmd_render(args) -> int:
    from .pages import SpecValidationError, load_page_spec, validate_spec, write_page

    spec = load_page_spec(args.spec)
    problems = validate_spec(spec)
    if problems:
        raise SpecValidationError(problems)
    if args.dry_run:
        _emit({"command": "render", "spec": args.spec, "out": args.out, "width": spec.width, "height": spec.height})
        return 0
    png, boxes = write_page(spec, args.out)
    _emit({"png": str(png), "boxes": str(boxes)})
    return 0


def _warn(pc: PipelineConfig, args) -> None:
    if pc.mode == "image-hs-only" and getattr(args, "tokens", None) is not None:
        print(f"warning: --tokens {args.tokens} is ignored in image-hs-only mode", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = load_run_config(args)
    pc = pipeline_config(cfg)
    _warn(pc, args)
    if args.dry_run:
        _emit(_plan(args, cfg, pc, page=args.page, out=args.out))
        return 0
    vlm, dit = load_models(args, pc)
    pc = _sampling(pc, dit)
    img, trace = run_pipeline(read_png(args.page), pc, vlm, dit)
    _emit(_write_run(Path(args.out), img, trace, cfg))
    return 0


def cmd_sweep_tokens(args) -> int:
    cfg = load_run_config(args)
    cfg["pipeline"]["mode"] = "full-final"
    pc = pipeline_config(cfg)
    budgets = args.budgets or list(DEFAULT_BUDGETS)
    if args.dry_run:
        _emit(_plan(args, cfg, pc, budgets=budgets, out=args.out))
        return 0
    vlm, dit = load_models(args, pc)
    pc = _sampling(pc, dit)
    runs = token_sweep(read_png(args.page), pc, budgets, vlm, dit)
    _emit([_write_run(Path(args.out) / f"tokens_{n}", img, tr, cfg | {"tokens": n})
           for n, (img, tr) in zip(budgets, runs)])
    return 0


def _resolve_layers(spec: str, total: int) -> list[int]:
    out = []
    for part in spec.split(","):
        part = part.strip()
        if part.startswith("last"):
            off = part[4:]
            out.append(total - (int(off[1:]) if off.startswith("-") else 0))
        else:
            out.append(int(part))
    return out


def cmd_sweep_layers(args) -> int:
    cfg = load_run_config(args)
    pc = pipeline_config(cfg)
    layers = _resolve_layers(args.layers, pc.vlm.layers)
    if args.dry_run:
        _emit(_plan(args, cfg, pc, layers=layers, out=args.out))
        return 0
    vlm, dit = load_models(args, pc)
    pc = _sampling(pc, dit)
    runs = layer_sweep(read_png(args.page), pc, layers, vlm, dit)
    _emit([_write_run(Path(args.out) / f"layer_{lay}", img, tr, cfg | {"layer": lay})
           for lay, (img, tr) in zip(layers, runs)])
    return 0


def cmd_probe_routing(args) -> int:
    from .probe import dump_records, load_records, routing_shares

    if args.records:
        records = load_records(args.records)
    else:
        if not args.page:
            raise UsageError("probe-routing needs --page or --records")
        cfg = load_run_config(args)
        pc = pipeline_config(cfg)
        if args.dry_run:
            _emit(_plan(args, cfg, pc, page=args.page, blocks=args.blocks))
            return 0
        vlm, dit = load_models(args, pc)
        pc = _sampling(pc, dit)
        bundle = build_bundle(read_png(args.page), pc, vlm)[0]
        if pc.cond_length is not None:
            bundle = fit_length(bundle, pc.cond_length, pc.fit_policy)
        rec = dit.attention_hook(args.blocks)
        sample(dit, bundle, pc.dit.steps, pc.dit.guidance, pc.dit.seed)
        records = list(rec.records)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            dump_records(records, Path(args.out) / "attention.v2vt")
    report = routing_shares(records)
    print(report.to_table(), file=sys.stderr)
    if args.out and not args.dry_run:
        (Path(args.out) / "routing.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    _emit(report.to_dict())
    return 0


def cmd_diagnose_retrieval(args) -> int:
    from .diagnostics import DEFAULT_WORDS, retrieval_diagnostics
    from .probe import retrieval_table

    cfg = load_run_config(args)
    vcfg = VlmConfig(**cfg["vlm"])
    words = args.words.split(",") if args.words else list(DEFAULT_WORDS)
    layer = None if args.layer in (None, "last") else int(args.layer)
    if args.dry_run:
        _emit({"command": args.command, "words": words, "layer": layer, "vlm": asdict(vcfg)})
        return 0
    vlm = MicroVLM.load(args.vlm) if args.vlm else MicroVLM(vcfg)
    labels, reports, align = retrieval_diagnostics(vlm, words, layer)
    print(retrieval_table(reports, labels), file=sys.stderr)
    doc = {"reports": {lab: r.to_dict() for lab, r in zip(labels, reports)},
           "layer_alignment": {str(k): v for k, v in align.items()},
           "alignment_definition": "mean cosine of mean-pooled image and phrase states"}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    _emit(doc)
    return 0


def cmd_train_toy(args) -> int:
    from .toy import ToyConfig, evaluate_colors, heldout_colors, train_toy

    cfg = load_run_config(args)
    tc = ToyConfig(train_steps=args.train_steps, seed=args.train_seed, vlm=VlmConfig(**cfg["vlm"]),
                   guidance=args.eval_cfg)
    if args.dry_run:
        _emit({"command": args.command, "toy": asdict(tc), "out": args.out})
        return 0
    result = train_toy(tc, log=lambda s, l: print(f"step {s} loss {l:.4f}", file=sys.stderr))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.dit.save(out / "dit.v2vt")
    matches = evaluate_colors(result.dit, result.vlm, heldout_colors(tc), tc)
    first, last = result.trailing_means()
    doc = {"checkpoint": str(out / "dit.v2vt"), "loss_first100": first, "loss_last100": last,
           "heldout": [m.to_dict() for m in matches], "matched_within_30": sum(m.distance <= 30 for m in matches),
           "toy": asdict(tc)}
    (out / "toy_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    _emit(doc)
    return 0


# -- bench --------------------------------------------------------------------

def cmd_bench_build(args) -> int:
    spec = B.load_bench_spec(args.spec) if args.spec else B.shipped_bench_spec()
    spec.validate()
    if args.dry_run:
        _emit({"command": "bench build", "prompts": len(spec.prompts), "out": args.out})
        return 0
    manifest = B.build_bench(spec, args.out)
    _emit({"pages": len(manifest), "manifest": str(Path(args.out) / "manifest.jsonl")})
    return 0


def cmd_bench_run(args) -> int:
    cfg = load_run_config(args)
    pc = pipeline_config(cfg)
    if args.dry_run:
        _emit(_plan(args, cfg, pc, bench=args.bench, samples=args.samples, workers=args.workers))
        return 0
    vlm, dit = load_models(args, pc)
    pc = _sampling(pc, dit)
    base = pc.dit.seed

    def generate(page, prompt_id, k):
        seeded = replace(pc, dit=replace(pc.dit, seed=derive_seed(base, prompt_id, k)))
        return run_pipeline(page, seeded, vlm, dit)[0]

    rows = B.run_bench(args.bench, generate, args.samples, args.workers)
    _emit({"samples": len(rows), "index": str(Path(args.bench) / "samples.jsonl")})
    return 0


def cmd_bench_score(args) -> int:
    from .judge import JudgeEndpoint, score_samples

    root = Path(args.bench)
    spec = B.load_bench_spec(root / "bench_spec.json")
    lookup = B.prompt_lookup(spec)
    rows = B.read_jsonl(root / "samples.jsonl")
    endpoint = None
    if args.judge == "remote":
        cfg = load_run_config(args)
        if "url" not in cfg["judge"] or "model" not in cfg["judge"]:
            raise UsageError("remote judging needs judge.url and judge.model in --config")
        endpoint = JudgeEndpoint.from_dict(cfg["judge"])
    if args.dry_run:
        _emit({"command": "bench score", "judge": args.judge, "samples": len(rows)})
        return 0
    items = [(lookup[r["id"]], r["sample"], read_png(root / r["output"])) for r in rows]
    records = score_samples(items, args.judge, endpoint)
    out = Path(args.records) if args.records else root / "records.jsonl"
    B.write_records(out, records)
    _emit({"records": len(records), "path": str(out)})
    return 0


def cmd_bench_report(args) -> int:
    root = Path(args.bench)
    spec = B.load_bench_spec(root / "bench_spec.json")
    records = B.read_records(args.records or root / "records.jsonl")
    report = B.aggregate(records, spec)
    print(report.to_table(), file=sys.stderr)
    if not args.dry_run:
        (root / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    _emit(report.to_dict())
    return 0


# -- parser -------------------------------------------------------------------

def _pipeline_flags(p):
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--mode", choices=("image-hs-only", "full-final"))
    p.add_argument("--tokens", type=int, help="reasoning budget N")
    p.add_argument("--layer", help="encoder layer index or 'last'")
    p.add_argument("--steps", type=int, help="denoising steps")
    p.add_argument("--cfg", type=float, help="guidance scale")
    p.add_argument("--seed", type=int, help="sampling seed (default 42)")
    p.add_argument("--cond-length", type=int, dest="cond_length", help="fit bundles to this length")
    p.add_argument("--template")
    p.add_argument("--system")
    p.add_argument("--vlm", help="encoder checkpoint")
    p.add_argument("--dit", help="generator checkpoint")


def build_parser() -> Parser:
    ap = Parser(prog="v2v", description="Visual-page conditioning toolkit.")
    ap.add_argument("--dry-run", action="store_true", help="validate and print the plan without writing files")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("render", help="render a page spec to PNG plus a boxes sidecar")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("run", help="run the full conditioning route on one page")
    p.add_argument("--page", required=True)
    p.add_argument("--out", required=True)
    _pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-tokens", help="full-final runs over several reasoning budgets")
    p.add_argument("--page", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budgets", type=_ints, help="comma-separated, default 50,100,150,200,300")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_sweep_tokens)

    p = sub.add_parser("sweep-layers", help="one run per extraction layer")
    p.add_argument("--page", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", default="last,last-1", help="e.g. 'last,last-1' or '1,2,3'")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_sweep_layers)

    p = sub.add_parser("probe-routing", help="measure generator attention routing over the bundle")
    p.add_argument("--page")
    p.add_argument("--records", help="existing attention dump instead of a fresh run")
    p.add_argument("--blocks", type=_ints, help="DiT blocks to instrument (default all)")
    p.add_argument("--out")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_probe_routing)

    p = sub.add_parser("diagnose-retrieval", help="token-max retrieval, controls and layer alignment")
    p.add_argument("--words", help="comma-separated phrases")
    p.add_argument("--layer", default="last")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--vlm")
    p.set_defaults(func=cmd_diagnose_retrieval)

    p = sub.add_parser("train-toy", help="train the generator on the color-card task")
    p.add_argument("--out", required=True)
    p.add_argument("--train-steps", type=int, default=2000, dest="train_steps")
    p.add_argument("--train-seed", type=int, default=0, dest="train_seed")
    p.add_argument("--eval-cfg", type=float, default=1.0, dest="eval_cfg")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train_toy)

    bench = sub.add_parser("bench", help="benchmark lifecycle")
    bsub = bench.add_subparsers(dest="bench_command", required=True, parser_class=Parser)
    p = bsub.add_parser("build")
    p.add_argument("--spec", help="bench spec JSON (default: shipped spec)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_build)
    p = bsub.add_parser("run")
    p.add_argument("--bench", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--workers", type=int, default=1)
    _pipeline_flags(p)
    p.set_defaults(func=cmd_bench_run)
    p = bsub.add_parser("score")
    p.add_argument("--bench", required=True)
    p.add_argument("--judge", choices=("stub", "remote"), default="stub")
    p.add_argument("--records")
    p.add_argument("--config")
    p.set_defaults(func=cmd_bench_score)
    p = bsub.add_parser("report")
    p.add_argument("--bench", required=True)
    p.add_argument("--records")
    p.set_defaults(func=cmd_bench_report)
    for parser in [*sub.choices.values(), *bsub.choices.values()]:
        parser.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS,
                            help="validate and print the plan without writing files")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "command", None) == "bench":
            args.command = f"bench {args.bench_command}"
        return args.func(args)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (V2VError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
