"""The two-stage co-training schedule with random label-source switching.

Stage 1 warms both networks up on mask-refined oracle labels plus the
latent alignment loss.  Stage 2 keeps the same parameters (the stages
are seamless) and, per mini-batch and per network independently, draws
the supervision source from {clip2d, clip3d, self2d, self3d}: the
mask-refined oracle labels of either modality or either network's own
mask-refined predictions, carried across modalities through the
correspondence set.  Self-labels are recomputed once per epoch.

Every random choice flows from TrainConfig.seed through dedicated
generator streams, so (scene, config, seed) fully determines batch
order, source draws, and the final parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ValidationError
from .evaluation import confusion, miou
from .nncore import (GradientTape, ModelBundle, ModelConfig, ce_loss,
                     class_logits, cosine_align_loss, make_bundle,
                     mlp_backward, mlp_forward, sgd_step)
from .pseudolabel import (IGNORE, POINTS, PIXELS, LabelMap,
                          REFINE3D_REPROJECT, REFINE3D_TRANSFER_MASKS,
                          derive_clip_labels, refine_by_masks,
                          refine_points_by_view_masks,
                          reproject_refine_points, transfer_labels,
                          transfer_masks)
from .scenesynth import (Scene, pixel_descriptors, point_descriptors,
                         render_view)
from .seeding import TAG_SHUFFLE, TAG_SOURCE, derive_rng

SOURCES = ("clip2d", "clip3d", "self2d", "self3d")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the two-stage schedule."""

    stage1_epochs: int = 10
    total_epochs: int = 30
    lr: float = 0.1
    batch_pixels: int = 256
    batch_points: int = 256
    switch_probs: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    switch_probs_2d: Optional[Tuple[float, float, float, float]] = None
    switch_probs_3d: Optional[Tuple[float, float, float, float]] = None
    switch_per_element: bool = False
    latent_loss_weight: float = 1.0
    latent_in_stage1: bool = True
    refine_labels: bool = True
    refine3d_mode: str = REFINE3D_TRANSFER_MASKS
    multiview: str = "first-camera"
    descriptor_noise: float = 0.02
    seed: int = 0
    precision: str = "float64"

    def probs_for(self, net: int) -> np.ndarray:
        """Effective source probabilities for network 0 (2D) or 1 (3D)."""
        override = self.switch_probs_2d if net == 0 else self.switch_probs_3d
        probs = np.asarray(self.switch_probs if override is None else override,
                           dtype=np.float64)
        return probs / probs.sum()

    def validate(self):
        if not 0 <= self.stage1_epochs <= self.total_epochs:
            raise ValidationError("need 0 <= stage1_epochs <= total_epochs")
        if self.lr <= 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if min(self.batch_pixels, self.batch_points) < 1:
            raise ValidationError("batch sizes must be >= 1")
        for name, probs in (("switch_probs", self.switch_probs),
                            ("switch_probs_2d", self.switch_probs_2d),
                            ("switch_probs_3d", self.switch_probs_3d)):
            if probs is None:
                continue
            arr = np.asarray(probs, dtype=np.float64)
            if arr.shape != (4,) or (arr < 0).any():
                raise ValidationError(f"{name} must be 4 non-negative values")
            if abs(arr.sum() - 1.0) >= 1e-9:
                raise ValidationError(f"{name} must sum to 1, got {arr.sum()!r}")
        if self.refine3d_mode not in (REFINE3D_TRANSFER_MASKS, REFINE3D_REPROJECT):
            raise ValidationError(f"unknown refine3d_mode {self.refine3d_mode!r}")
        if self.latent_loss_weight < 0:
            raise ValidationError("latent_loss_weight must be >= 0")
        if self.precision != "float64":
            raise ValidationError("only the float64 precision mode is implemented")


@dataclass
class TrainState:
    """Mutable state threaded through the stages."""

    bundle: ModelBundle
    config: TrainConfig
    scene: Scene
    data: Dict[str, np.ndarray]
    clip_pixel: np.ndarray  # (V, H, W) refined oracle labels
    clip_point: np.ndarray  # (N,) refined oracle labels
    clip2d_as_points: np.ndarray  # (N,) 2D oracle labels carried to points
    shuffle_rng: np.random.Generator
    source_rng: np.random.Generator
    epoch: int = 0
    self_pixel: Optional[np.ndarray] = None  # (V, H, W) refined self-labels
    self_point: Optional[np.ndarray] = None  # (N,)
    self2d_as_points: Optional[np.ndarray] = None
    history: List[dict] = field(default_factory=list)
    source_counts: np.ndarray = field(
        default_factory=lambda: np.zeros((2, 4), dtype=np.int64))
    source_draws: np.ndarray = field(
        default_factory=lambda: np.zeros(2, dtype=np.int64))

    def source_frequencies(self) -> np.ndarray:
        """Empirical (network, source) draw frequencies."""
        totals = np.maximum(self.source_draws, 1).astype(np.float64)
        return self.source_counts / totals[:, None]


def init_state(scene: Scene, oracles: dict, config: TrainConfig,
               model_config: Optional[ModelConfig] = None) -> TrainState:
    """Precompute descriptors, oracle labels, and anchors; build the model."""
    config.validate()
    corr = scene.correspondences()
    if corr.count == 0:
        raise ValidationError("scene has no pixel-point correspondences to train on")
    num_points = len(scene.cloud)
    views = len(scene.cameras)

    desc2d = np.stack([pixel_descriptors(scene, k, config.descriptor_noise)
                       for k in range(views)])
    desc3d = point_descriptors(scene, config.descriptor_noise)
    anchors = np.stack([fm.features for fm in oracles["features"]])
    masks = oracles["masks"]
    embeddings = oracles["embeddings"]
    if embeddings.num_classes != scene.num_classes:
        raise ValidationError(
            f"embedding table has {embeddings.num_classes} classes, "
            f"scene has {scene.num_classes}")

    if model_config is None:
        model_config = ModelConfig(input2d_dim=desc2d.shape[-1],
                                   input3d_dim=desc3d.shape[-1],
                                   embed_dim=embeddings.dim,
                                   sam_dim=anchors.shape[-1])
    if model_config.input2d_dim != desc2d.shape[-1] or \
            model_config.input3d_dim != desc3d.shape[-1]:
        raise ValidationError("model input dims do not match descriptor dims")
    if model_config.sam_dim != anchors.shape[-1]:
        raise ValidationError(
            f"model sam_dim {model_config.sam_dim} != oracle feature dim "
            f"{anchors.shape[-1]}")
    bundle = make_bundle(model_config, embeddings, config.seed)

    labels = derive_clip_labels(corr, oracles["scores"], masks, num_points,
                                config.refine3d_mode, config.multiview)
    pixel_key = "pixel_refined" if config.refine_labels else "pixel_raw"
    point_key = "point_refined" if config.refine_labels else "point_raw"
    clip_pixel = np.stack([lm.labels for lm in labels[pixel_key]])
    clip_point = labels[point_key].labels
    clip2d_as_points = transfer_labels(corr, labels[pixel_key], num_points,
                                       config.multiview).labels

    gt_pixel = np.stack([render_view(scene, k, corr).label for k in range(views)])
    point_masks = transfer_masks(corr, masks, num_points)

    data = {
        "desc2d": desc2d, "desc3d": desc3d, "anchors": anchors,
        "ent_cam": corr.camera_index, "ent_v": corr.v, "ent_u": corr.u,
        "ent_point": corr.point_index,
        "gt_pixel": gt_pixel, "gt_point": scene.cloud.gt_labels,
        "num_points": num_points, "masks": masks, "point_masks": point_masks,
        "corr": corr,
    }
    return TrainState(
        bundle=bundle, config=config, scene=scene, data=data,
        clip_pixel=clip_pixel, clip_point=clip_point,
        clip2d_as_points=clip2d_as_points,
        shuffle_rng=derive_rng(config.seed, TAG_SHUFFLE),
        source_rng=derive_rng(config.seed, TAG_SOURCE))


# ---------------------------------------------------------------------------
# prediction and self-labels

_CHUNK = 8192


def predict_labels_2d(bundle: ModelBundle, desc: np.ndarray) -> np.ndarray:
    """Argmax semantic-head prediction for (V, H, W, D) pixel descriptors."""
    views, h, w, dim = desc.shape
    flat = desc.reshape(-1, dim)
    out = np.empty(len(flat), dtype=np.int32)
    for lo in range(0, len(flat), _CHUNK):
        rows = flat[lo:lo + _CHUNK].astype(np.float64)
        feats, _ = mlp_forward(bundle.enc2d, rows)
        logits = class_logits(bundle, feats, "s2d")
        out[lo:lo + _CHUNK] = np.argmax(logits, axis=1)
    return out.reshape(views, h, w)


def predict_labels_3d(bundle: ModelBundle, desc: np.ndarray) -> np.ndarray:
    """Argmax semantic-head prediction for (N, D) point descriptors."""
    out = np.empty(len(desc), dtype=np.int32)
    for lo in range(0, len(desc), _CHUNK):
        rows = desc[lo:lo + _CHUNK].astype(np.float64)
        feats, _ = mlp_forward(bundle.enc3d, rows)
        logits = class_logits(bundle, feats, "s3d")
        out[lo:lo + _CHUNK] = np.argmax(logits, axis=1)
    return out


def predict_pixel_labels(state: TrainState) -> np.ndarray:
    """Argmax semantic-head prediction for every pixel of every view."""
    return predict_labels_2d(state.bundle, state.data["desc2d"])


def predict_point_labels(state: TrainState) -> np.ndarray:
    """Argmax semantic-head prediction for every point."""
    return predict_labels_3d(state.bundle, state.data["desc3d"])


def compute_self_labels(state: TrainState) -> Tuple[np.ndarray, np.ndarray]:
    """Mask-refined self-predictions of both networks.

    Returns (pixel stack (V, H, W), point labels (N,)) and caches them on
    the state together with the pixel labels carried onto points.
    """
    masks = state.data["masks"]
    corr = state.data["corr"]
    raw_pixel = predict_pixel_labels(state)
    pixel_views = [LabelMap(raw_pixel[k], PIXELS, "net2d") for k in range(len(masks))]
    if state.config.refine_labels:
        pixel_views = [refine_by_masks(lm, masks[k].mask_ids)
                       for k, lm in enumerate(pixel_views)]
    self_pixel = np.stack([lm.labels for lm in pixel_views])

    raw_point = LabelMap(predict_point_labels(state), POINTS, "net3d")
    if not state.config.refine_labels:
        self_point = raw_point.labels
    elif state.config.refine3d_mode == REFINE3D_TRANSFER_MASKS:
        self_point = refine_points_by_view_masks(
            raw_point, state.data["point_masks"]).labels
    else:
        self_point = reproject_refine_points(
            corr, raw_point, masks, state.config.multiview).labels

    state.self_pixel = self_pixel
    state.self_point = self_point
    state.self2d_as_points = transfer_labels(
        corr, pixel_views, state.data["num_points"], state.config.multiview).labels
    return self_pixel, self_point


# ---------------------------------------------------------------------------
# one training epoch


def _entry_rows(state: TrainState, stack: np.ndarray, ents: np.ndarray) -> np.ndarray:
    data = state.data
    return stack[data["ent_cam"][ents], data["ent_v"][ents], data["ent_u"][ents]]


def _source_labels_2d(state: TrainState, source: int, ents: np.ndarray) -> np.ndarray:
    """Supervision for the 2D network at the given correspondence entries."""
    if source == 0:
        return _entry_rows(state, state.clip_pixel, ents)
    if source == 1:
        return state.clip_point[state.data["ent_point"][ents]]
    if source == 2:
        return _entry_rows(state, state.self_pixel, ents)
    return state.self_point[state.data["ent_point"][ents]]


def _source_labels_3d(state: TrainState, source: int) -> np.ndarray:
    """Supervision for the 3D network over all points."""
    if source == 0:
        return state.clip2d_as_points
    if source == 1:
        return state.clip_point
    if source == 2:
        return state.self2d_as_points
    return state.self_point


def _accumulate_mlp(tape: GradientTape, name: str, d_w, d_b):
    for i, (gw, gb) in enumerate(zip(d_w, d_b)):
        for key, grad in ((f"{name}.w{i}", gw), (f"{name}.b{i}", gb)):
            if key in tape.grads:
                tape.grads[key] = tape.grads[key] + grad
            else:
                tape.grads[key] = grad


def _draw_sources(state: TrainState, count2d: int,
                  count3d: int) -> Tuple[np.ndarray, np.ndarray]:
    """One source draw per network (or per element when configured)."""
    per_element = state.config.switch_per_element
    draw2d = state.source_rng.choice(4, size=count2d if per_element else 1,
                                     p=state.config.probs_for(0))
    draw3d = state.source_rng.choice(4, size=count3d if per_element else 1,
                                     p=state.config.probs_for(1))
    for net, draws in enumerate((draw2d, draw3d)):
        state.source_counts[net] += np.bincount(draws, minlength=4)
        state.source_draws[net] += len(draws)
    return draw2d, draw3d


def _run_epoch(state: TrainState, stage: int) -> dict:
    cfg = state.config
    data = state.data
    bundle = state.bundle
    n_ent = len(data["ent_cam"])
    num_points = data["num_points"]
    order = state.shuffle_rng.permutation(n_ent)
    point_order = state.shuffle_rng.permutation(num_points)
    steps = math.ceil(n_ent / cfg.batch_pixels)
    use_latent = cfg.latent_loss_weight > 0 and (stage == 2 or cfg.latent_in_stage1)
    sums = {"l_ce2d": 0.0, "l_ce3d": 0.0, "l_latent": 0.0}
    cursor = 0
    for t in range(steps):
        ents = order[t * cfg.batch_pixels:(t + 1) * cfg.batch_pixels]
        pts = point_order[(cursor + np.arange(cfg.batch_points)) % num_points]
        cursor = (cursor + cfg.batch_points) % num_points

        if stage == 1:
            lab2 = _entry_rows(state, state.clip_pixel, ents)
            lab3 = state.clip_point[pts]
        else:
            draw2d, draw3d = _draw_sources(state, len(ents), len(pts))
            if cfg.switch_per_element:
                cand2 = np.stack([_source_labels_2d(state, s, ents) for s in range(4)])
                lab2 = cand2[draw2d, np.arange(len(ents))]
                cand3 = np.stack([_source_labels_3d(state, s)[pts] for s in range(4)])
                lab3 = cand3[draw3d, np.arange(len(pts))]
            else:
                lab2 = _source_labels_2d(state, int(draw2d[0]), ents)
                lab3 = _source_labels_3d(state, int(draw3d[0]))[pts]

        x_in = data["desc2d"][data["ent_cam"][ents], data["ent_v"][ents],
                              data["ent_u"][ents]].astype(np.float64)
        x_feats, cache2 = mlp_forward(bundle.enc2d, x_in)
        p_in = data["desc3d"][pts].astype(np.float64)
        p_feats, cache3a = mlp_forward(bundle.enc3d, p_in)

        l2, t2 = ce_loss(bundle, x_feats, "s2d", lab2)
        l3, t3 = ce_loss(bundle, p_feats, "s3d", lab3)
        tape = GradientTape().accumulate(t2).accumulate(t3)
        d_x = t2.d_inputs["features"]
        d_p_ce = t3.d_inputs["features"]
        l_latent = 0.0
        if use_latent:
            pair_in = data["desc3d"][data["ent_point"][ents]].astype(np.float64)
            pair_feats, cache3b = mlp_forward(bundle.enc3d, pair_in)
            anchor_rows = _entry_rows(state, data["anchors"], ents).astype(np.float64)
            l_latent, t_lat = cosine_align_loss(bundle, x_feats, pair_feats,
                                                anchor_rows)
            tape.accumulate(t_lat, cfg.latent_loss_weight)
            d_x = d_x + cfg.latent_loss_weight * t_lat.d_inputs["x_feats"]
            d_w, d_b, _ = mlp_backward(bundle.enc3d, cache3b,
                                       cfg.latent_loss_weight * t_lat.d_inputs["p_feats"])
            _accumulate_mlp(tape, "enc3d", d_w, d_b)
        d_w, d_b, _ = mlp_backward(bundle.enc2d, cache2, d_x)
        _accumulate_mlp(tape, "enc2d", d_w, d_b)
        d_w, d_b, _ = mlp_backward(bundle.enc3d, cache3a, d_p_ce)
        _accumulate_mlp(tape, "enc3d", d_w, d_b)
        sgd_step(bundle, tape, cfg.lr)
        sums["l_ce2d"] += l2
        sums["l_ce3d"] += l3
        sums["l_latent"] += l_latent
    return {key: value / steps for key, value in sums.items()}


def _epoch_metrics(state: TrainState) -> dict:
    num_classes = state.scene.num_classes
    pred_pix = predict_pixel_labels(state)
    pred_pts = predict_point_labels(state)
    _, miou2d = miou(confusion(pred_pix, state.data["gt_pixel"], num_classes))
    _, miou3d = miou(confusion(pred_pts, state.data["gt_point"], num_classes))
    return {"miou2d": miou2d, "miou3d": miou3d}


# ---------------------------------------------------------------------------
# stages


def run_stage1(state: TrainState) -> TrainState:
    """Warm-up epochs on the mask-refined oracle labels."""
    cfg = state.config
    while state.epoch < cfg.stage1_epochs:
        losses = _run_epoch(state, stage=1)
        row = {"epoch": state.epoch, "stage": 1, **losses, **_epoch_metrics(state)}
        state.history.append(row)
        state.epoch += 1
    return state


def run_stage2(state: TrainState) -> TrainState:
    """Source-switched co-training epochs; self-labels refresh per epoch."""
    cfg = state.config
    if state.epoch < cfg.stage1_epochs:
        raise ValidationError("stage 2 requires stage 1 to be complete")
    while state.epoch < cfg.total_epochs:
        compute_self_labels(state)
        losses = _run_epoch(state, stage=2)
        row = {"epoch": state.epoch, "stage": 2, **losses, **_epoch_metrics(state)}
        state.history.append(row)
        state.epoch += 1
    return state


def train(scene: Scene, oracles: dict, config: TrainConfig,
          model_config: Optional[ModelConfig] = None) -> TrainState:
    """Run both stages seamlessly and return the final state."""
    state = init_state(scene, oracles, config, model_config)
    run_stage1(state)
    run_stage2(state)
    return state


METRIC_COLUMNS = ("epoch", "stage", "l_ce2d", "l_ce3d", "l_latent",
                  "miou2d", "miou3d")


def write_metrics_csv(history: List[dict], path):
    """One deterministic CSV row per epoch."""
    lines = [",".join(METRIC_COLUMNS)]
    for row in history:
        cells = []
        for col in METRIC_COLUMNS:
            value = row.get(col)
            if isinstance(value, float):
                cells.append(repr(value))
            elif value is None:
                cells.append("absent")
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
