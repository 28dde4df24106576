"""Ablation suite: the structural comparison rows on synthetic scenes.

Every row is evaluated on identical scene bundles and seeds:

* baseline   — raw oracle argmax labels, scored directly on pixels and
               carried to points along the correspondences; no training.
* wo_cns     — mask-refined oracle labels, likewise untrained.
* wo_refine  — full training but labels are never mask-refined.
* wo_ct      — stage-2 sources restricted to each network's own modality
               (no cross-training).
* wo_sct     — no stage 2 at all (oracle labels only, no switching).
* wo_clip    — oracle-derived sources disabled in stage 2 (self-training
               only), the co-corruption configuration.
* wo_latent  — no latent alignment loss.
* full       — the complete method.

Reports are deterministic: identical suite configs produce byte-identical
CSV and text output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CnsError, ConfigError
from .evaluation import confusion, coverage, label_error_rate, miou
from .nncore import ModelConfig, config_hash
from .pseudolabel import derive_clip_labels
from .scenesynth import (PIXEL_DESC_DIM, POINT_DESC_DIM, ClipNoiseConfig,
                         MaskFragConfig, Scene, SceneConfig, generate_scene,
                         render_view, standard_oracle_outputs)
from .training import TrainConfig, predict_pixel_labels, predict_point_labels, train

logger = logging.getLogger(__name__)

ROW_ORDER = ("baseline", "wo_cns", "wo_refine", "wo_ct", "wo_sct",
             "wo_clip", "wo_latent", "full")


@dataclass(frozen=True)
class SuiteConfig:
    """One ablation campaign: scene, oracles, training, seeds, rows."""

    scene: SceneConfig = field(default_factory=SceneConfig)
    clip_noise: ClipNoiseConfig = field(default_factory=ClipNoiseConfig)
    frag: MaskFragConfig = field(default_factory=MaskFragConfig)
    feat_dim: int = 32
    feat_sigma: float = 0.1
    embed_dim: int = 64
    anchor_dim: int = 16
    hidden: Tuple[int, ...] = (64,)
    latent_dim: int = 48
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: Tuple[int, ...] = (0, 1, 2)
    rows: Tuple[str, ...] = ROW_ORDER

    def validate(self):
        self.scene.validate()
        self.clip_noise.validate()
        self.frag.validate()
        self.train.validate()
        if not self.seeds:
            raise ConfigError("need at least one seed")
        for row in self.rows:
            if row not in ROW_ORDER:
                raise ConfigError(f"unknown ablation row {row!r}")


def standard_suite(**overrides) -> SuiteConfig:
    """The default noisy campaign (eps=0.4, block=4, splits=3, jitter=1).

    The campaign warms up for a single epoch before co-training so that
    stage-2 label-source dynamics — not the warm-up — decide where each
    configuration lands.  A long warm-up would let the self-training-only
    row coast on near-converged predictions and mask the co-corruption
    failure mode this suite is built to expose.
    """
    cfg = SuiteConfig(train=TrainConfig(stage1_epochs=1))
    return replace(cfg, **overrides)


def sanity_suite(**overrides) -> SuiteConfig:
    """Noiseless degenerate campaign: eps=0 and exact mask boundaries.

    With perfect labels there is nothing for stage 2 to repair, so every
    row should land within one mIoU point of every other.  The default
    ten-epoch warm-up applies.
    """
    cfg = SuiteConfig(clip_noise=ClipNoiseConfig(eps=0.0, block=4),
                      frag=MaskFragConfig(splits_per_object=3,
                                          boundary_jitter_px=0))
    return replace(cfg, **overrides)


def row_train_config(row: str, base: TrainConfig) -> Optional[TrainConfig]:
    """Training configuration of a row; None for the untrained rows."""
    if row in ("baseline", "wo_cns"):
        return None
    if row == "wo_refine":
        return replace(base, refine_labels=False)
    if row == "wo_ct":
        return replace(base,
                       switch_probs_2d=(0.5, 0.0, 0.5, 0.0),
                       switch_probs_3d=(0.0, 0.5, 0.0, 0.5))
    if row == "wo_sct":
        return replace(base, stage1_epochs=base.total_epochs)
    if row == "wo_clip":
        return replace(base, switch_probs=(0.0, 0.0, 0.5, 0.5),
                       switch_probs_2d=None, switch_probs_3d=None)
    if row == "wo_latent":
        return replace(base, latent_loss_weight=0.0)
    if row == "full":
        return base
    raise ConfigError(f"unknown ablation row {row!r}")


@dataclass
class AblationReport:
    """Per-(row, seed) scores plus per-row medians."""

    rows: List[dict]
    medians: Dict[str, dict]
    suite_hash: str
    row_hashes: Dict[str, str]


def _score_label_row(scene: Scene, pixel_maps, point_map, gt_pixel, gt_point) -> dict:
    num_classes = scene.num_classes
    pred_pixel = np.stack([lm.labels for lm in pixel_maps])
    cm2 = confusion(pred_pixel, gt_pixel, num_classes)
    per2, miou2 = miou(cm2)
    cm3 = confusion(point_map.labels, gt_point, num_classes)
    per3, miou3 = miou(cm3)
    return {
        "miou2d": miou2, "miou3d": miou3,
        "per_class2d": per2, "per_class3d": per3,
        "err2d": label_error_rate(pred_pixel, gt_pixel),
        "err3d": label_error_rate(point_map.labels, gt_point),
        "coverage3d": coverage(point_map.labels),
    }


def _score_trained_row(scene: Scene, state) -> dict:
    num_classes = scene.num_classes
    pred_pixel = predict_pixel_labels(state)
    pred_point = predict_point_labels(state)
    gt_pixel = state.data["gt_pixel"]
    gt_point = state.data["gt_point"]
    per2, miou2 = miou(confusion(pred_pixel, gt_pixel, num_classes))
    per3, miou3 = miou(confusion(pred_point, gt_point, num_classes))
    return {
        "miou2d": miou2, "miou3d": miou3,
        "per_class2d": per2, "per_class3d": per3,
        "err2d": label_error_rate(pred_pixel, gt_pixel),
        "err3d": label_error_rate(pred_point, gt_point),
        "coverage3d": 1.0,
    }


def run_ablation(suite: SuiteConfig, scenes: Optional[dict] = None) -> AblationReport:
    """Evaluate every requested row on every seed's scene.

    `scenes` may carry pre-generated {seed: (scene, oracles)} pairs (the
    CLI uses this to run on an on-disk bundle); missing seeds are
    generated from the suite config.  Row failures are recorded in that
    row's entry without aborting the remaining rows.
    """
    suite.validate()
    rows_out: List[dict] = []
    row_hashes: Dict[str, str] = {}
    per_row: Dict[str, Dict[str, List[float]]] = {
        row: {"miou2d": [], "miou3d": []} for row in suite.rows}
    for seed in suite.seeds:
        if scenes is not None and seed in scenes:
            scene, oracles = scenes[seed]
        else:
            scene = generate_scene(suite.scene, seed)
            oracles = standard_oracle_outputs(
                scene, suite.clip_noise, suite.frag, suite.feat_dim,
                suite.feat_sigma, suite.embed_dim)
        corr = scene.correspondences()
        gt_pixel = np.stack([render_view(scene, k, corr).label
                             for k in range(len(scene.cameras))])
        gt_point = scene.cloud.gt_labels
        labels = derive_clip_labels(corr, oracles["scores"], oracles["masks"],
                                    len(scene.cloud), suite.train.refine3d_mode,
                                    suite.train.multiview)
        for row in suite.rows:
            entry = {"row": row, "seed": seed}
            try:
                cfg = row_train_config(row, replace(suite.train, seed=seed))
                if cfg is None:
                    key = "raw" if row == "baseline" else "refined"
                    scored = _score_label_row(
                        scene, labels[f"pixel_{key}"], labels[f"point_{key}"],
                        gt_pixel, gt_point)
                    row_hashes.setdefault(row, config_hash((row, suite.clip_noise,
                                                            suite.frag)))
                else:
                    model_cfg = ModelConfig(
                        input2d_dim=PIXEL_DESC_DIM, input3d_dim=POINT_DESC_DIM,
                        hidden=suite.hidden, latent_dim=suite.latent_dim,
                        embed_dim=suite.embed_dim, anchor_dim=suite.anchor_dim,
                        sam_dim=suite.feat_dim)
                    state = train(scene, oracles, cfg, model_cfg)
                    scored = _score_trained_row(scene, state)
                    row_hashes.setdefault(row, config_hash(replace(cfg, seed=0)))
                entry.update(scored)
                per_row[row]["miou2d"].append(scored["miou2d"])
                per_row[row]["miou3d"].append(scored["miou3d"])
            except CnsError as exc:
                logger.error("row %s seed %d failed: %s", row, seed, exc)
                entry["error"] = str(exc)
            rows_out.append(entry)
    medians = {}
    for row in suite.rows:
        vals2 = [v for v in per_row[row]["miou2d"] if v is not None]
        vals3 = [v for v in per_row[row]["miou3d"] if v is not None]
        medians[row] = {
            "miou2d": float(np.median(vals2)) if vals2 else None,
            "miou3d": float(np.median(vals3)) if vals3 else None,
        }
    return AblationReport(rows_out, medians, config_hash(suite), row_hashes)


def _fmt(value) -> str:
    if value is None:
        return "absent"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_csv(report: AblationReport, path):
    """One CSV row per configuration per seed, canonical order."""
    columns = ("row", "seed", "miou2d", "miou3d", "err2d", "err3d",
               "coverage3d", "config_hash", "error")
    lines = [",".join(columns)]
    ordered = sorted(report.rows,
                     key=lambda r: (ROW_ORDER.index(r["row"]), r["seed"]))
    for entry in ordered:
        cells = []
        for col in columns:
            if col == "config_hash":
                cells.append(report.row_hashes.get(entry["row"], ""))
            else:
                cells.append(_fmt(entry.get(col, "")))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report_text(report: AblationReport, path):
    """Human-readable summary: per-row medians plus the suite hash."""
    lines = [f"ablation suite {report.suite_hash}", ""]
    lines.append(f"{'row':<12} {'miou2d':>10} {'miou3d':>10}")
    for row in ROW_ORDER:
        if row not in report.medians:
            continue
        med = report.medians[row]
        lines.append(f"{row:<12} {_fmt_median(med['miou2d']):>10} "
                     f"{_fmt_median(med['miou3d']):>10}")
    errors = [e for e in report.rows if "error" in e]
    if errors:
        lines.append("")
        for entry in errors:
            lines.append(f"FAILED {entry['row']} seed {entry['seed']}: {entry['error']}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt_median(value) -> str:
    return "absent" if value is None else f"{value:.4f}"
