"""Command-line entry point: ``filmseg <subcommand> [options]``.

Exit codes: 0 success, 1 usage, 2 config, 3 runtime, 4 acceptance failure (repro).
On any nonzero exit a machine-readable ``error.json`` is written to the output
directory (or printed to stderr when there is none).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, resolve_config
from .evalkit.report import emit_report, loads_reports

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3, 4
SUBCOMMANDS = ("gen-data", "pretrain", "train", "eval", "hybrid-eval", "ablate", "report", "repro")

log = logging.getLogger("filmseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text: str) -> str:
    t = text.strip().lower()
    if t not in ("true", "false", "1", "0", "yes", "no"):
        raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")
    return "true" if t in ("true", "1", "yes") else "false"


def _common(p: argparse.ArgumentParser, selectors: bool = True) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. decoder.D=128 (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (run.seed)")
    p.add_argument("--out", help="output directory (run.out)")
    p.add_argument("-v", "--verbose", action="store_true")
    if selectors:
        p.add_argument("--variant", help="fusion variant (decoder.variant)")
        p.add_argument("--taps", help="tap set K, comma separated (encoder.taps)")
        p.add_argument("--D", dest="D", help="decoder width (decoder.D)")
        p.add_argument("--backend-size", help="encoder preset: base or large")
        p.add_argument("--text-provenance", help="joint or disjoint text tower")
        p.add_argument("--freeze-encoder", type=_bool, help="true (default) or false for full finetune")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="filmseg", description="Hierarchical-FiLM referring segmentation lab.")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate and persist a dataset")
    _common(p, selectors=False)

    p = sub.add_parser("pretrain", help="contrastively pretrain and freeze the dual encoder")
    _common(p)

    p = sub.add_parser("train", help="train a decoder variant (or the full-finetune baseline)")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--encoder", required=True, help="encoder checkpoint from pretrain")

    for name, text in (("eval", "score a trained decoder"), ("hybrid-eval", "score detector and hybrid")):
        p = sub.add_parser(name, help=text)
        _common(p, selectors=False)
        p.add_argument("--data", required=True)
        p.add_argument("--encoder", required=True)
        p.add_argument("--run", required=True, help="training output directory")

    p = sub.add_parser("ablate", help="sweep one ablation axis on one dataset")
    _common(p)
    p.add_argument("--axis", required=True, choices=pipeline.ABLATION_AXES)
    p.add_argument("--values", default="", help="axis values; taps use ';' between sets")
    p.add_argument("--encoder", help="reuse a pretrained encoder checkpoint")

    p = sub.add_parser("report", help="merge report.json files into one set of tables")
    _common(p, selectors=False)
    p.add_argument("inputs", nargs="+", help="report.json files")

    p = sub.add_parser("repro", help="run the full acceptance pipeline")
    _common(p)
    p.add_argument("--encoder", help="reuse a pretrained encoder checkpoint")
    return parser


def _overrides(args) -> list[str]:
    over = list(args.set)
    if args.seed is not None:
        over.append(f"run.seed={args.seed}")
        if args.subcommand == "repro" and not any(o.split("=", 1)[0].strip() == "run.seeds" for o in over):
            over.append(f"run.seeds={args.seed},{args.seed + 1},{args.seed + 2}")
    if args.out is not None:
        over.append(f"run.out={args.out}")
    for attr, key in (("variant", "decoder.variant"), ("taps", "encoder.taps"), ("D", "decoder.D"),
                      ("backend_size", "encoder.backend_size"), ("text_provenance", "pretrain.text_provenance"),
                      ("freeze_encoder", "train.freeze_encoder")):
        value = getattr(args, attr, None)
        if value is not None:
            over.append(f"{key}={value}")
    return over


def _write_json(path: Path, record: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")


def _run(args, cfg) -> int:
    out = cfg.out
    cmd = args.subcommand
    if cmd == "gen-data":
        split = pipeline.generate_data(cfg, out)
        cfg.write_snapshot(out)
        print(f"dataset {split.dataset_hash()[:12]} written to {out}")
    elif cmd == "pretrain":
        w = pipeline.pretrain_encoder(cfg, out)
        print(f"encoder {w.fingerprint[:12]} written to {out / 'encoder.safetensors'}")
    elif cmd == "train":
        split = pipeline.load_split(args.data)
        encoder = pipeline.load_frozen_encoder(args.encoder)
        o = pipeline.train_model(cfg, encoder, split, out, cfg.seed)
        kind = "full-finetune" if not o.report.freeze_encoder else "frozen-encoder"
        print(f"{o.report.variant} ({kind}): final val IoU {o.report.val_iou[-1]:.4f}, "
              f"trainable fraction {o.report.parameters['decoder_trainable'] / o.report.parameters['total']:.4f}")
    elif cmd in ("eval", "hybrid-eval"):
        split = pipeline.load_split(args.data)
        shared = pipeline.load_frozen_encoder(args.encoder)
        encoder, decoder = pipeline.load_trained(args.run, shared)
        tag = Path(args.run).name
        if cmd == "eval":
            reports = [pipeline.evaluate_decoder(cfg, encoder, decoder, split, tag, cfg.seed,
                                                 pipeline.fitted_dataset_hash(args.run))]
        else:
            reports = pipeline.evaluate_detector_and_hybrid(cfg, encoder, decoder, split, cfg.seed, tag)
        emit_report(reports, out)
        cfg.write_snapshot(out)
        for r in reports:
            print(f"{r.identity.tag}: " + ", ".join(f"{k} {v.mean_iou:.4f}" for k, v in sorted(r.splits.items())))
    elif cmd == "ablate":
        reports = pipeline.ablate(cfg, args.axis, args.values, args.encoder)
        for r in reports:
            print(f"{r.identity.tag}: test_unseen {r.splits['test_unseen'].mean_iou:.4f}")
    elif cmd == "report":
        reports = []
        for path in args.inputs:
            reports += loads_reports(Path(path).read_text())
        emit_report(reports, out)
        print(f"{len(reports)} reports merged into {out}")
    elif cmd == "repro":
        checks, _ = pipeline.repro(cfg, args.encoder)
        for name, c in checks.items():
            print(f"{'PASS' if c['pass'] else 'FAIL'} {name}: {c['description']}")
        if not all(c["pass"] for c in checks.values()):
            failed = [k for k, c in checks.items() if not c["pass"]]
            _write_json(out / "error.json", {"error": "acceptance-failure", "failed": failed, "subcommand": cmd})
            return EXIT_ACCEPTANCE
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise UsageError(f"missing subcommand; choose from {', '.join(SUBCOMMANDS)}")
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    try:
        cfg = resolve_config(args.config, _overrides(args))
    except ConfigError as exc:
        record = {"error": "config", "message": str(exc), "keys": exc.keys, "subcommand": args.subcommand}
        target = Path(args.out) if args.out else None
        if target is not None:
            _write_json(target / "error.json", record)
        print(json.dumps(record), file=sys.stderr)
        return EXIT_CONFIG

    try:
        return _run(args, cfg)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        record = {"error": getattr(exc, "code", type(exc).__name__), "message": str(exc),
                  "subcommand": args.subcommand}
        _write_json(cfg.out / "error.json", record)
        print(json.dumps(record), file=sys.stderr)
        log.debug("runtime failure", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
