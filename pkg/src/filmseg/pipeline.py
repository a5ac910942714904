"""End-to-end orchestration behind the command line.

Directory layout produced by :func:`repro`::

    <out>/resolved_config.txt
    <out>/encoder/encoder.safetensors          shared pretrained (frozen) encoder
    <out>/seed-<s>/data/                       dataset for that seed
    <out>/seed-<s>/<variant>/                  decoder.safetensors, train_report.json
    <out>/seed-<s>/reports/                    metric records, tables, plot data
    <out>/acceptance.json, acceptance.tsv      trend checks across seeds

Every run directory carries a ``manifest.json`` binding its files to
(config hash, dataset hash, seed).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .dualenc.checkpoint import load_encoder, save_encoder
from .dualenc.model import EncoderConfig, EncoderWeights, freeze
from .dualenc.pretrain import contrastive_pretrain, make_corpus, make_pairs
from .evalkit.evaluate import MetricsReport, evaluate
from .evalkit.report import emit_report
from .evalkit.sa import run_trial, trial_sa
from .hifidecoder.checkpoint import decoder_metadata, load_decoder
from .predictors import DecoderPredictor, DetectorPredictor, HybridPredictor
from .scenegen.dataset import DatasetSplit, build_dataset, derive_seed
from .scenegen.grammar import vocabulary
from .scenegen.storage import load_dataset, persist_dataset
from .trainloop.train import (
    FeatureCache,
    TrainReport,
    decoder_config_for,
    init_decoder,
    train_decoder,
    train_full_finetune,
)

log = logging.getLogger(__name__)

TIMING_SUFFIX = ".timing.json"
FULL_FINETUNE = "full_finetune"
ABLATION_AXES = ("fusion_variant", "taps", "D", "backend_size", "text_provenance", "freeze_encoder")


class AcceptanceFailure(RuntimeError):
    code = "acceptance-failure"


# -- provenance --
def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, config_hash: str, dataset_hash: str, seed: int) -> Path:
    """Hash every file below ``directory`` (timing files excluded) with its provenance triple."""
    root = Path(directory)
    files = {
        p.relative_to(root).as_posix(): file_digest(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "manifest.json" and not p.name.endswith(TIMING_SUFFIX)
    }
    record = {"config_hash": config_hash, "dataset_hash": dataset_hash, "seed": seed, "files": files}
    path = root / "manifest.json"
    path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    return path


# -- stages --
def encoder_config(cfg: RunConfig) -> EncoderConfig:
    return EncoderConfig.preset(
        cfg["encoder.backend_size"], vocabulary(), taps=cfg["encoder.taps"],
        text_pooling=cfg["encoder.text_pooling"], image_size=cfg["data.image_size"],
    )


def pretrain_encoder(cfg: RunConfig, out_dir=None) -> EncoderWeights:
    """Contrastive pretraining on a fresh corpus, then freeze; seeded by ``pretrain.seed``."""
    pc = cfg.pretrain_config()
    kw = dict(single_object_fraction=pc.single_object_fraction, max_objects=pc.max_objects,
              attribute_dropout=pc.attribute_dropout, image_size=cfg["data.image_size"])
    corpus = make_corpus(pc.n_pairs, pc.seed, twin_fraction=pc.twin_fraction, **kw)
    heldout = make_pairs(32, derive_seed(pc.seed, 1), **kw)
    weights = freeze(contrastive_pretrain(corpus, encoder_config(cfg), pc.seed, pc, heldout))
    if out_dir is not None:
        out = Path(out_dir)
        save_encoder(weights, out / "encoder.safetensors")
        cfg.write_snapshot(out)
        write_manifest(out, cfg.config_hash(["encoder", "pretrain", "data"]), "", pc.seed)
    return weights


def generate_data(cfg: RunConfig, out_dir, seed: int | None = None) -> DatasetSplit:
    seed = cfg.seed if seed is None else seed
    split = build_dataset(cfg.dataset_config(seed))
    persist_dataset(split, Path(out_dir))
    return split


@dataclass
class TrainOutcome:
    report: TrainReport
    encoder: EncoderWeights
    decoder: object
    directory: Path


def train_model(cfg: RunConfig, encoder: EncoderWeights, split: DatasetSplit, out_dir, seed: int,
                variant: str | None = None, freeze_encoder: bool | None = None,
                cache: FeatureCache | None = None, **decoder_over) -> TrainOutcome:
    """Train one decoder variant (frozen) or the full-finetune baseline."""
    variant = variant or cfg["decoder.variant"]
    freeze_encoder = cfg["train.freeze_encoder"] if freeze_encoder is None else freeze_encoder
    tc = cfg.train_config(seed, variant=variant, freeze_encoder=freeze_encoder)
    dec_cfg = decoder_config_for(encoder, **cfg.decoder_kwargs(variant=variant, **decoder_over))
    decoder = init_decoder(dec_cfg, seed)
    out = Path(out_dir)
    ds_hash = split.dataset_hash()
    if freeze_encoder:
        decoder, report = train_decoder(encoder, decoder, split.train, tc, out, ds_hash, cache)
        trained_encoder = encoder
    else:
        # finetuning mutates the encoder in place; work on a private copy
        private = load_encoder(Path(encoder_path_of(encoder)))
        (trained_encoder, decoder), report = train_full_finetune(private, decoder, split.train, tc, out, ds_hash)
    cfg.write_snapshot(out)
    write_manifest(out, cfg.config_hash(), ds_hash, seed)
    return TrainOutcome(report, trained_encoder, decoder, out)


_ENCODER_PATHS: dict[str, str] = {}


def remember_encoder_path(weights: EncoderWeights, path) -> EncoderWeights:
    _ENCODER_PATHS[weights.fingerprint] = str(path)
    return weights


def encoder_path_of(weights: EncoderWeights) -> str:
    try:
        return _ENCODER_PATHS[weights.fingerprint]
    except KeyError:
        raise ValueError("full finetune needs an encoder loaded from a checkpoint file") from None


def load_frozen_encoder(path) -> EncoderWeights:
    return remember_encoder_path(freeze(load_encoder(path)), path)


def load_trained(directory, shared_encoder: EncoderWeights) -> tuple[EncoderWeights, object]:
    """Decoder from a run directory, with its own finetuned encoder when one was saved."""
    directory = Path(directory)
    enc_path = directory / "encoder.safetensors"
    encoder = load_frozen_encoder(enc_path) if enc_path.exists() else shared_encoder
    decoder = load_decoder(directory / "decoder.safetensors", encoder.fingerprint)
    return encoder, decoder


# -- evaluation --
def eval_splits(split: DatasetSplit, names=("test_seen", "test_unseen")) -> dict:
    return {n: split.split(n) for n in names}


def evaluate_decoder(cfg: RunConfig, encoder, decoder, split: DatasetSplit, tag: str, seed: int,
                     fitted_on: str = "") -> MetricsReport:
    """``fitted_on`` is the training dataset hash; a mismatch with ``split`` is an error."""
    pred = DecoderPredictor(encoder, decoder, tag, fitted_on, seed)
    return evaluate(pred, eval_splits(split), cfg.metrics_config(), split.dataset_hash())


def fitted_dataset_hash(run_dir) -> str:
    return decoder_metadata(Path(run_dir) / "decoder.safetensors")["extra"].get("dataset_hash", "")


def evaluate_detector_and_hybrid(cfg: RunConfig, encoder, decoder, split: DatasetSplit, seed: int,
                                 decoder_tag: str = "hierarchical_film") -> list[MetricsReport]:
    det = DetectorPredictor(cfg.detector_config(), seed)
    dec = DecoderPredictor(encoder, decoder, decoder_tag, "", seed)
    hyb = HybridPredictor(dec, det, f"hybrid+{decoder_tag}")
    mc, ds_hash, splits = cfg.metrics_config(), split.dataset_hash(), eval_splits(split)
    reports = [evaluate(det, splits, mc, ds_hash), evaluate(hyb, splits, mc, ds_hash)]
    fallbacks = sum(1 for i in hyb.choices.values() if i < 0)
    reports[1].notes.append(f"decoder-mask fallbacks: {fallbacks} of {len(hyb.choices)}")
    return reports


def sa_summary(cfg: RunConfig, encoder, decoder, split: DatasetSplit, seed: int, n_trials: int = 50) -> dict:
    """MRQ escalation trials on test_unseen scenes (correct = IoU >= eval.correct_iou)."""
    dec = DecoderPredictor(encoder, decoder, "sa", "", seed)
    scores = []
    for s in split.test_unseen[:n_trials]:
        try:
            trial = run_trial(s.scene, s.query.target_id, dec.segment_fn(s.image), cfg["eval.correct_iou"])
        except ValueError:  # indistinguishable twins have no MRQ
            continue
        scores.append(trial_sa(trial))
    mean = math.fsum(scores) / len(scores) if scores else float("nan")
    return {"split": "test_unseen", "n_trials": len(scores), "sa": mean, "correct_iou": cfg["eval.correct_iou"]}


# -- repro --
@dataclass
class SeedResult:
    seed: int
    reports: dict[str, MetricsReport] = field(default_factory=dict)
    train: dict[str, TrainReport] = field(default_factory=dict)


def run_seed(cfg: RunConfig, encoder: EncoderWeights, seed: int, out_dir) -> SeedResult:
    out = Path(out_dir)
    split = generate_data(cfg, out / "data", seed)
    cache = FeatureCache(encoder, split.train)
    result = SeedResult(seed)
    trained = {}
    for variant in ("hierarchical_film", "cross_attention"):
        o = train_model(cfg, encoder, split, out / variant, seed, variant, True, cache)
        result.train[variant] = o.report
        trained[variant] = (o.encoder, o.decoder)
    o = train_model(cfg, encoder, split, out / FULL_FINETUNE, seed, "hierarchical_film", False)
    result.train[FULL_FINETUNE] = o.report
    trained[FULL_FINETUNE] = (o.encoder, o.decoder)

    for tag, (enc, dec) in trained.items():
        result.reports[tag] = evaluate_decoder(cfg, enc, dec, split, tag, seed, split.dataset_hash())
    det, hyb = evaluate_detector_and_hybrid(cfg, *trained["hierarchical_film"], split, seed)
    result.reports["detector"], result.reports["hybrid"] = det, hyb
    result.reports["hierarchical_film"].sa = sa_summary(cfg, *trained["hierarchical_film"], split, seed)
    emit_report(list(result.reports.values()), out / "reports")
    cfg.write_snapshot(out)
    write_manifest(out, cfg.config_hash(), split.dataset_hash(), seed)
    return result


def _unseen(r: MetricsReport):
    return r.splits["test_unseen"]


def acceptance_checks(results: list[SeedResult]) -> dict:
    """Trend criteria across seeds; each entry has per-seed values and a pass flag."""
    need = 2 if len(results) >= 3 else len(results)
    checks = {}

    def majority(name, per_seed, description):
        ok = sum(bool(v["pass"]) for v in per_seed)
        checks[name] = {"description": description, "per_seed": per_seed,
                        "passed_seeds": ok, "pass": ok >= need}

    seen = [{"seed": r.seed, "test_seen_iou": r.reports["hierarchical_film"].splits["test_seen"].mean_iou}
            for r in results]
    for v in seen:
        v["pass"] = v["test_seen_iou"] >= 0.75
    checks["closed_vocabulary"] = {
        "description": "hierarchical_film test_seen mean IoU >= 0.75 (every seed)",
        "per_seed": seen, "pass": all(v["pass"] for v in seen),
    }

    majority("generalization_gap", [
        {"seed": r.seed, "frozen": _unseen(r.reports["hierarchical_film"]).mean_iou,
         "full_finetune": _unseen(r.reports[FULL_FINETUNE]).mean_iou,
         "pass": _unseen(r.reports["hierarchical_film"]).mean_iou > _unseen(r.reports[FULL_FINETUNE]).mean_iou}
        for r in results], "frozen test_unseen IoU > full-finetune test_unseen IoU")

    majority("fusion_ordering", [
        {"seed": r.seed, "hierarchical_film": _unseen(r.reports["hierarchical_film"]).mean_iou,
         "cross_attention": _unseen(r.reports["cross_attention"]).mean_iou,
         "pass": _unseen(r.reports["hierarchical_film"]).mean_iou >= _unseen(r.reports["cross_attention"]).mean_iou}
        for r in results], "hierarchical_film test_unseen IoU >= cross_attention")

    det = []
    for r in results:
        b = _unseen(r.reports["detector"]).bucket_iou
        det.append({"seed": r.seed, "A1": b[1], "A4": b[4], "pass": 100 * (b[1] - b[4]) >= 10})
    majority("detector_degradation", det, "detector test_unseen A=4 at least 10 points below A=1")

    hyb = []
    for r in results:
        h, d, m = (_unseen(r.reports[k]) for k in ("hybrid", "detector", "hierarchical_film"))
        overall = 100 * h.mean_iou >= 100 * max(d.mean_iou, m.mean_iou) - 1
        high = all(h.bucket_iou[a] > d.bucket_iou[a] for a in (3, 4))
        hyb.append({"seed": r.seed, "hybrid": h.mean_iou, "detector": d.mean_iou, "decoder": m.mean_iou,
                    "hybrid_A3": h.bucket_iou[3], "hybrid_A4": h.bucket_iou[4],
                    "detector_A3": d.bucket_iou[3], "detector_A4": d.bucket_iou[4],
                    "overall_ok": overall, "high_attribute_ok": high, "pass": overall and high})
    majority("hybrid_gain", hyb, "hybrid >= max(detector, decoder) - 1 point and > detector on A=3 and A=4")

    frac = [{"seed": r.seed, "variant": k, "trainable_fraction": t.parameters["decoder_trainable"] / t.parameters["total"]}
            for r in results for k, t in r.train.items() if k != FULL_FINETUNE]
    for v in frac:
        v["pass"] = v["trainable_fraction"] < 0.15
    checks["parameter_economy"] = {
        "description": "decoder trainable parameters < 15% of encoder + decoder",
        "per_seed": frac, "pass": all(v["pass"] for v in frac),
    }
    return checks


def write_acceptance(checks: dict, out_dir) -> Path:
    out = Path(out_dir)
    (out / "acceptance.json").write_text(json.dumps(checks, indent=1, sort_keys=True) + "\n")
    rows = ["check\tpass\tdescription"]
    rows += [f"{k}\t{'PASS' if v['pass'] else 'FAIL'}\t{v['description']}" for k, v in checks.items()]
    (out / "acceptance.tsv").write_text("\n".join(rows) + "\n")
    return out / "acceptance.json"


def obtain_encoder(cfg: RunConfig, out_dir, encoder_path=None) -> EncoderWeights:
    if encoder_path is not None:
        return load_frozen_encoder(encoder_path)
    target = Path(out_dir) / "encoder"
    pretrain_encoder(cfg, target)
    return load_frozen_encoder(target / "encoder.safetensors")


def repro(cfg: RunConfig, encoder_path=None) -> tuple[dict, list[SeedResult]]:
    """Full acceptance pipeline: pretrain once, then data, training and evaluation per seed."""
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_snapshot(out)
    encoder = obtain_encoder(cfg, out, encoder_path)
    results = []
    for seed in cfg["run.seeds"]:
        log.info("repro: seed %d", seed)
        results.append(run_seed(cfg, encoder, seed, out / f"seed-{seed}"))
    checks = acceptance_checks(results)
    write_acceptance(checks, out)
    return checks, results


# -- ablation --
def ablation_points(axis: str, values: str) -> list[dict]:
    """Map an axis name to a list of (label, overrides) points."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {', '.join(ABLATION_AXES)}")
    defaults = {
        "fusion_variant": "hierarchical_film,single_film,cross_attention",
        "taps": "1-3-5-7-9;3-5-7-9;5-7-9;7-9",
        "D": "64,128",
        "backend_size": "base,large",
        "text_provenance": "joint,disjoint",
        "freeze_encoder": "true,false",
    }
    raw = values or defaults[axis]
    items = [v.strip() for v in raw.split(";" if axis == "taps" else ",") if v.strip()]
    points = []
    for item in items:
        if axis == "taps":
            taps = tuple(int(t) for t in item.replace("-", " ").replace(",", " ").split())
            points.append({"label": "K=" + "-".join(map(str, taps)), "decoder": {"taps": taps}})
        elif axis == "fusion_variant":
            points.append({"label": item, "train": {"variant": item}})
        elif axis == "D":
            points.append({"label": f"D={int(item)}", "decoder": {"width": int(item)}})
        elif axis == "backend_size":
            points.append({"label": item, "encoder": {"encoder.backend_size": item}})
        elif axis == "text_provenance":
            points.append({"label": item, "encoder": {"pretrain.text_provenance": item}})
        else:
            flag = item.lower() in ("true", "1", "yes")
            points.append({"label": "frozen" if flag else FULL_FINETUNE, "train": {"freeze_encoder": flag}})
    return points


def ablate(cfg: RunConfig, axis: str, values: str = "", encoder_path=None) -> list[MetricsReport]:
    """Sweep one axis on a single dataset; one report per point plus a comparison table."""
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_snapshot(out)
    seed = cfg.seed
    split = generate_data(cfg, out / "data", seed)
    points = ablation_points(axis, values)
    shared = None
    reports = []
    for point in points:
        pdir = out / point["label"]
        if "encoder" in point:
            over = {k.replace(".", "__"): v for k, v in point["encoder"].items()}
            pcfg = cfg.with_values(**over)
            encoder = obtain_encoder(pcfg, pdir, None)
        else:
            if shared is None:
                shared = obtain_encoder(cfg, out, encoder_path)
            encoder = shared
        train_kw = dict(point.get("train", {}))
        o = train_model(cfg, encoder, split, pdir, seed, train_kw.get("variant"), train_kw.get("freeze_encoder"),
                        **point.get("decoder", {}))
        rep = evaluate_decoder(cfg, o.encoder, o.decoder, split, point["label"], seed, split.dataset_hash())
        rep.notes.append(f"ablation axis {axis}; trainable fraction "
                         f"{o.report.parameters['decoder_trainable'] / o.report.parameters['total']:.4f}")
        emit_report(rep, pdir / "report")
        reports.append(rep)
    emit_report(reports, out / "comparison")
    write_manifest(out, cfg.config_hash(), split.dataset_hash(), seed)
    return reports


def load_split(data_dir) -> DatasetSplit:
    return load_dataset(Path(data_dir))

