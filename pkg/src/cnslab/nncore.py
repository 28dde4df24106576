"""Small numpy encoders, the training losses, SGD, and gradient checks.

The 2D and 3D backbones are plain MLPs (ReLU hidden layers, linear
output) over hand-built descriptors.  On top of the shared latent space
sit four trainable linear heads — semantic heads mapping into the class
embedding space and feature heads mapping into the anchor space — plus a
frozen bias-free anchor projection and the frozen class embedding table.

All arithmetic is float64; gradients are written by hand and verified
against central finite differences (grad_check).  GradientTape carries
parameter gradients keyed by declaration-order parameter names, plus
gradients with respect to the loss inputs so a caller can continue
backpropagation through the encoders.
"""

from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import NumericalError, ValidationError
from .pseudolabel import IGNORE, LabelMap
from .scenesynth import ClassEmbeddingTable
from .seeding import TAG_MODEL, derive_rng

_NORM_EPS = 1e-12


# ---------------------------------------------------------------------------
# model containers


@dataclass
class Mlp:
    """Fully connected net: ReLU on hidden layers, linear output."""

    weights: List[np.ndarray]  # each (fan_in, fan_out)
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("need matching, non-empty weight/bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValidationError(f"layer {i} shapes incompatible: {w.shape}, {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValidationError(f"layer {i} fan-in does not match layer {i-1} fan-out")

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


def init_mlp(widths: Sequence[int], rng) -> Mlp:
    """He-initialized MLP with the given layer widths."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def mlp_forward(mlp: Mlp, x: np.ndarray) -> Tuple[np.ndarray, list]:
    """Forward pass returning (output, cache-for-backward)."""
    x = np.asarray(x, dtype=np.float64)
    cache = [x]
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        cache.append(h)
    return h, cache


def mlp_backward(mlp: Mlp, cache: list, d_out: np.ndarray
                 ) -> Tuple[List[np.ndarray], List[np.ndarray], np.ndarray]:
    """Backward pass: (weight grads, bias grads, gradient w.r.t. input)."""
    d_w = [None] * len(mlp.weights)
    d_b = [None] * len(mlp.biases)
    grad = np.asarray(d_out, dtype=np.float64)
    last = len(mlp.weights) - 1
    for i in range(last, -1, -1):
        if i < last:
            grad = grad * (cache[i + 1] > 0)
        d_w[i] = cache[i].T @ grad
        d_b[i] = grad.sum(axis=0)
        grad = grad @ mlp.weights[i].T
    return d_w, d_b, grad


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions of the co-trained model pair."""

    input2d_dim: int
    input3d_dim: int
    hidden: Tuple[int, ...] = (64,)
    latent_dim: int = 64  # shared encoder output width
    embed_dim: int = 512  # class embedding space
    anchor_dim: int = 64  # frozen anchor space
    sam_dim: int = 32  # oracle feature dimension entering the anchor head
    temperature: float = 1.0
    train_anchor_head: bool = False

    def validate(self):
        if min(self.input2d_dim, self.input3d_dim, self.latent_dim,
               self.embed_dim, self.anchor_dim, self.sam_dim) < 1:
            raise ValidationError("all model dimensions must be >= 1")
        if self.temperature <= 0:
            raise ValidationError("temperature must be > 0")


@dataclass
class ModelBundle:
    """The trainable encoder/head pair plus the frozen components."""

    enc2d: Mlp
    enc3d: Mlp
    head_s2d: Dict[str, np.ndarray]  # {"w": (D_h, D_e), "b": (D_e,)}
    head_s3d: Dict[str, np.ndarray]
    head_f2d: Dict[str, np.ndarray]  # {"w": (D_h, K_f), "b": (K_f,)}
    head_f3d: Dict[str, np.ndarray]
    anchor_head: np.ndarray  # (D_s, K_f), bias-free, frozen by default
    embeddings: ClassEmbeddingTable  # frozen
    config: ModelConfig
    seed: int

    def head(self, name: str) -> Dict[str, np.ndarray]:
        try:
            return {"s2d": self.head_s2d, "s3d": self.head_s3d,
                    "f2d": self.head_f2d, "f3d": self.head_f3d}[name]
        except KeyError:
            raise ValidationError(f"unknown head {name!r}") from None


_HEAD_NAMES = ("head_s2d", "head_s3d", "head_f2d", "head_f3d")


def make_bundle(config: ModelConfig, embeddings: ClassEmbeddingTable,
                seed: int) -> ModelBundle:
    """Seeded construction; the anchor head is drawn once and then frozen."""
    config.validate()
    if embeddings.dim != config.embed_dim:
        raise ValidationError(
            f"embedding table dim {embeddings.dim} != config embed_dim {config.embed_dim}")
    rng = derive_rng(seed, TAG_MODEL)
    widths2d = [config.input2d_dim, *config.hidden, config.latent_dim]
    widths3d = [config.input3d_dim, *config.hidden, config.latent_dim]
    enc2d = init_mlp(widths2d, rng)
    enc3d = init_mlp(widths3d, rng)

    def linear(fan_in, fan_out):
        return {"w": rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in),
                "b": np.zeros(fan_out)}

    head_s2d = linear(config.latent_dim, config.embed_dim)
    head_s3d = linear(config.latent_dim, config.embed_dim)
    head_f2d = linear(config.latent_dim, config.anchor_dim)
    head_f3d = linear(config.latent_dim, config.anchor_dim)
    anchor = rng.standard_normal((config.sam_dim, config.anchor_dim))
    anchor *= np.sqrt(1.0 / config.sam_dim)
    if not config.train_anchor_head:
        anchor.setflags(write=False)
    return ModelBundle(enc2d, enc3d, head_s2d, head_s3d, head_f2d, head_f3d,
                       anchor, embeddings, config, int(seed))


def trainable_params(bundle: ModelBundle) -> Dict[str, np.ndarray]:
    """Declaration-ordered name -> array view of every trainable parameter."""
    params: Dict[str, np.ndarray] = {}
    for enc_name in ("enc2d", "enc3d"):
        mlp = getattr(bundle, enc_name)
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            params[f"{enc_name}.w{i}"] = w
            params[f"{enc_name}.b{i}"] = b
    for head_name in _HEAD_NAMES:
        head = getattr(bundle, head_name)
        params[f"{head_name}.w"] = head["w"]
        params[f"{head_name}.b"] = head["b"]
    if bundle.config.train_anchor_head:
        params["anchor_head.w"] = bundle.anchor_head
    return params


@dataclass
class GradientTape:
    """Parameter gradients plus gradients w.r.t. the loss inputs."""

    grads: Dict[str, np.ndarray] = field(default_factory=dict)
    d_inputs: Dict[str, np.ndarray] = field(default_factory=dict)
    aux: Dict[str, float] = field(default_factory=dict)

    def accumulate(self, other: "GradientTape", scale: float = 1.0):
        for name, g in other.grads.items():
            if name in self.grads:
                self.grads[name] = self.grads[name] + scale * g
            else:
                self.grads[name] = scale * g
        return self


def forward_2d(bundle: ModelBundle, pixel_descriptors: np.ndarray) -> np.ndarray:
    """Encode pixel descriptors into latent features."""
    out, _ = mlp_forward(bundle.enc2d, pixel_descriptors)
    return out


def forward_3d(bundle: ModelBundle, point_descriptors: np.ndarray) -> np.ndarray:
    """Encode point descriptors into latent features."""
    out, _ = mlp_forward(bundle.enc3d, point_descriptors)
    return out


# ---------------------------------------------------------------------------
# losses


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Numerically stable row softmax."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def class_logits(bundle: ModelBundle, features: np.ndarray, head: str) -> np.ndarray:
    """Semantic-head logits: head(feature) dotted with every class embedding."""
    h = bundle.head(head)
    z = np.asarray(features, dtype=np.float64) @ h["w"] + h["b"]
    return (z @ bundle.embeddings.vectors.T) / bundle.config.temperature


def ce_loss(bundle: ModelBundle, features: np.ndarray, head: str,
            target_labels: Union[LabelMap, np.ndarray], ignore: int = IGNORE
            ) -> Tuple[float, GradientTape]:
    """Cross-entropy of semantic-head predictions against target labels.

    Scores are dot products of the head output with each class embedding,
    divided by the temperature.  IGNORE targets are skipped; an all-IGNORE
    batch yields zero loss and zero gradients.  The tape carries head
    gradients and d_inputs["features"] for continuing into the encoder.
    """
    if head not in ("s2d", "s3d"):
        raise ValidationError(f"ce_loss expects a semantic head, got {head!r}")
    targets = target_labels.labels if isinstance(target_labels, LabelMap) else target_labels
    targets = np.asarray(targets).ravel()
    features = np.asarray(features, dtype=np.float64)
    if len(targets) != len(features):
        raise ValidationError(f"{len(features)} features vs {len(targets)} targets")
    valid = targets != ignore
    head_name = f"head_{head}"
    tape = GradientTape()
    tape.d_inputs["features"] = np.zeros_like(features)
    if not valid.any():
        h = bundle.head(head)
        tape.grads[f"{head_name}.w"] = np.zeros_like(h["w"])
        tape.grads[f"{head_name}.b"] = np.zeros_like(h["b"])
        return 0.0, tape
    feats = features[valid]
    labels = targets[valid].astype(np.int64)
    num_classes = bundle.embeddings.num_classes
    if labels.max() >= num_classes or labels.min() < 0:
        raise ValidationError("target labels outside [0, num_classes)")
    h = bundle.head(head)
    z = feats @ h["w"] + h["b"]
    logits = (z @ bundle.embeddings.vectors.T) / bundle.config.temperature
    probs = softmax_rows(logits)
    n = len(labels)
    loss = float(-np.log(np.maximum(probs[np.arange(n), labels], 1e-300)).mean())
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    d_z = (d_logits @ bundle.embeddings.vectors) / bundle.config.temperature
    tape.grads[f"{head_name}.w"] = feats.T @ d_z
    tape.grads[f"{head_name}.b"] = d_z.sum(axis=0)
    d_feats = d_z @ h["w"].T
    d_full = np.zeros_like(features)
    d_full[valid] = d_feats
    tape.d_inputs["features"] = d_full
    return loss, tape


def _safe_unit(vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-normalize; rows with ~zero norm become zero vectors (flagged)."""
    norms = np.linalg.norm(vectors, axis=1)
    degenerate = norms < _NORM_EPS
    safe = np.where(degenerate, 1.0, norms)
    return vectors / safe[:, None], norms, degenerate


def cosine_align_loss(bundle: ModelBundle, x_feats: np.ndarray,
                      p_feats: np.ndarray, anchor_feats: np.ndarray
                      ) -> Tuple[float, GradientTape]:
    """Pull both feature heads toward the frozen anchor embedding.

    Per pair i the loss is (1 - cos(F2d(x_i), a_i)) + (1 - cos(F3d(p_i), a_i)),
    averaged over pairs, with a_i the normalized anchor projection of the
    oracle feature s_i.  No gradient flows into the anchor head or the
    oracle features unless train_anchor_head is set.  Zero-norm head
    outputs contribute cosine 0 with zero gradient and are counted in
    aux["zero_norm_count"].
    """
    x_feats = np.asarray(x_feats, dtype=np.float64)
    p_feats = np.asarray(p_feats, dtype=np.float64)
    anchor_feats = np.asarray(anchor_feats, dtype=np.float64)
    if not (len(x_feats) == len(p_feats) == len(anchor_feats)):
        raise ValidationError("cosine_align_loss needs equally many x, p, s rows")
    tape = GradientTape()
    n = len(x_feats)
    if n == 0:
        tape.aux["zero_norm_count"] = 0
        tape.d_inputs["x_feats"] = np.zeros_like(x_feats)
        tape.d_inputs["p_feats"] = np.zeros_like(p_feats)
        return 0.0, tape

    a_raw = anchor_feats @ bundle.anchor_head
    a_unit, a_norms, a_degen = _safe_unit(a_raw)

    total = 0.0
    zero_count = int(a_degen.sum())
    d_a_unit = np.zeros_like(a_unit)

    def side(feats, head):
        nonlocal total, zero_count
        out = feats @ head["w"] + head["b"]
        unit, norms, degen = _safe_unit(out)
        cos = np.einsum("ij,ij->i", unit, a_unit)
        cos = np.where(degen | a_degen, 0.0, cos)
        zero_count += int(degen.sum())
        total += float(np.sum(1.0 - cos))
        # d(cos)/d(out) = (a_unit - cos * unit) / norm; zero for degenerate rows.
        live = ~(degen | a_degen)
        d_out = np.zeros_like(out)
        d_out[live] = -(a_unit[live] - cos[live, None] * unit[live]) / norms[live, None] / n
        # d(cos)/d(a_unit) = unit (before anchor normalization chain).
        d_a_unit[live] += -unit[live] / n
        d_w = feats.T @ d_out
        d_b = d_out.sum(axis=0)
        d_feats = d_out @ head["w"].T
        return d_w, d_b, d_feats

    d_w2, d_b2, d_x = side(x_feats, bundle.head_f2d)
    d_w3, d_b3, d_p = side(p_feats, bundle.head_f3d)
    loss = total / n
    tape.grads["head_f2d.w"] = d_w2
    tape.grads["head_f2d.b"] = d_b2
    tape.grads["head_f3d.w"] = d_w3
    tape.grads["head_f3d.b"] = d_b3
    tape.d_inputs["x_feats"] = d_x
    tape.d_inputs["p_feats"] = d_p
    tape.aux["zero_norm_count"] = zero_count
    if bundle.config.train_anchor_head:
        live = ~a_degen
        d_a_raw = np.zeros_like(a_raw)
        cos_a = np.einsum("ij,ij->i", d_a_unit, a_unit)
        d_a_raw[live] = (d_a_unit[live] - cos_a[live, None] * a_unit[live]) \
            / a_norms[live, None]
        tape.grads["anchor_head.w"] = anchor_feats.T @ d_a_raw
    return loss, tape


def _chain_into_encoder(bundle: ModelBundle, enc_name: str, cache,
                        d_feats: np.ndarray, tape: GradientTape):
    enc = getattr(bundle, enc_name)
    d_w, d_b, _ = mlp_backward(enc, cache, d_feats)
    for i, (dw, db) in enumerate(zip(d_w, d_b)):
        tape.grads[f"{enc_name}.w{i}"] = dw
        tape.grads[f"{enc_name}.b{i}"] = db


def ce_loss_end_to_end(bundle: ModelBundle, inputs: np.ndarray, head: str,
                       target_labels) -> Tuple[float, GradientTape]:
    """Cross-entropy from raw descriptors, encoder gradients included.

    `head` selects the network: "s2d" runs enc2d, "s3d" runs enc3d.
    """
    enc_name = {"s2d": "enc2d", "s3d": "enc3d"}.get(head)
    if enc_name is None:
        raise ValidationError(f"expected head 's2d' or 's3d', got {head!r}")
    feats, cache = mlp_forward(getattr(bundle, enc_name),
                               np.asarray(inputs, dtype=np.float64))
    loss, tape = ce_loss(bundle, feats, head, target_labels)
    _chain_into_encoder(bundle, enc_name, cache, tape.d_inputs["features"], tape)
    return loss, tape


def align_loss_end_to_end(bundle: ModelBundle, x2d: np.ndarray,
                          x3d: np.ndarray, anchor_feats: np.ndarray
                          ) -> Tuple[float, GradientTape]:
    """Cosine alignment from raw descriptors, both encoders' gradients included."""
    feats2d, cache2d = mlp_forward(bundle.enc2d, np.asarray(x2d, dtype=np.float64))
    feats3d, cache3d = mlp_forward(bundle.enc3d, np.asarray(x3d, dtype=np.float64))
    loss, tape = cosine_align_loss(bundle, feats2d, feats3d, anchor_feats)
    _chain_into_encoder(bundle, "enc2d", cache2d, tape.d_inputs["x_feats"], tape)
    _chain_into_encoder(bundle, "enc3d", cache3d, tape.d_inputs["p_feats"], tape)
    return loss, tape


def sgd_step(bundle: ModelBundle, tape: GradientTape, lr: float) -> ModelBundle:
    """In-place SGD update of every trainable parameter present on the tape."""
    if lr <= 0:
        raise ValidationError(f"learning rate must be > 0, got {lr}")
    params = trainable_params(bundle)
    for name, grad in tape.grads.items():
        if name not in params:
            raise ValidationError(f"tape gradient for unknown parameter {name!r}")
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for {name}; step aborted")
        if grad.shape != params[name].shape:
            raise ValidationError(f"gradient shape mismatch for {name}")
    for name, grad in tape.grads.items():
        params[name] -= lr * grad
    return bundle


def grad_check(loss_op: Callable[[ModelBundle], Tuple[float, GradientTape]],
               bundle: ModelBundle, eps: float = 1e-5,
               param_names: Optional[Sequence[str]] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every element of every parameter named on the analytic tape
    (or of `param_names` if given).  Relative error per element is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    _, tape = loss_op(bundle)
    params = trainable_params(bundle)
    names = list(param_names) if param_names is not None else sorted(tape.grads)
    worst = 0.0
    for name in names:
        if name not in params:
            raise ValidationError(f"unknown parameter {name!r}")
        arr = params[name]
        analytic = tape.grads.get(name, np.zeros_like(arr))
        flat = arr.reshape(-1)
        flat_analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi, _ = loss_op(bundle)
            flat[j] = orig - eps
            lo, _ = loss_op(bundle)
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = flat_analytic[j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = "CNSCKPT v1"


def config_hash(obj) -> str:
    """Short stable hash of a dataclass-ish config repr."""
    return hashlib.sha256(repr(obj).encode()).hexdigest()[:16]


def save_checkpoint(bundle: ModelBundle, path, extra: Optional[dict] = None):
    """Write a versioned checkpoint: text header + float32 LE payload.

    The payload holds every trainable parameter in declaration order,
    then the frozen anchor head and class embedding table.
    """
    cfg = bundle.config
    lines = [_CKPT_MAGIC]
    lines.append(f"input2d_dim={cfg.input2d_dim}")
    lines.append(f"input3d_dim={cfg.input3d_dim}")
    lines.append("hidden=" + ",".join(str(h) for h in cfg.hidden))
    lines.append(f"latent_dim={cfg.latent_dim}")
    lines.append(f"embed_dim={cfg.embed_dim}")
    lines.append(f"anchor_dim={cfg.anchor_dim}")
    lines.append(f"sam_dim={cfg.sam_dim}")
    lines.append(f"temperature={cfg.temperature!r}")
    lines.append(f"train_anchor_head={int(cfg.train_anchor_head)}")
    lines.append(f"num_classes={bundle.embeddings.num_classes}")
    lines.append(f"seed={bundle.seed}")
    lines.append(f"config_hash={config_hash(cfg)}")
    for key, value in sorted((extra or {}).items()):
        lines.append(f"x_{key}={value}")
    lines.append("END")
    header = "\n".join(lines) + "\n"
    payload = io.BytesIO()
    arrays = list(trainable_params(bundle).items())
    if not cfg.train_anchor_head:
        arrays.append(("anchor_head", bundle.anchor_head))
    arrays.append(("embeddings", bundle.embeddings.vectors))
    for _, arr in arrays:
        payload.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header.encode())
        fh.write(payload.getvalue())
    os.replace(tmp, str(path))


def load_checkpoint(path) -> Tuple[ModelBundle, dict]:
    """Read a checkpoint back into a ModelBundle (embeddings renormalized)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"END\n")
    if not blob.startswith(_CKPT_MAGIC.encode()) or end < 0:
        raise ValidationError(f"{path}: not a {_CKPT_MAGIC} checkpoint")
    meta = {}
    for line in blob[:end].decode().splitlines()[1:]:
        if line and "=" in line:
            key, value = line.split("=", 1)
            meta[key] = value
    hidden = tuple(int(h) for h in meta["hidden"].split(",") if h)
    cfg = ModelConfig(
        input2d_dim=int(meta["input2d_dim"]), input3d_dim=int(meta["input3d_dim"]),
        hidden=hidden, latent_dim=int(meta["latent_dim"]),
        embed_dim=int(meta["embed_dim"]), anchor_dim=int(meta["anchor_dim"]),
        sam_dim=int(meta["sam_dim"]), temperature=float(meta["temperature"]),
        train_anchor_head=bool(int(meta["train_anchor_head"])))
    num_classes = int(meta["num_classes"])
    payload = blob[end + 4:]
    offset = 0

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        return arr.astype(np.float64).reshape(shape)

    # Rebuild in the exact declaration order used by save_checkpoint.
    widths2d = [cfg.input2d_dim, *cfg.hidden, cfg.latent_dim]
    widths3d = [cfg.input3d_dim, *cfg.hidden, cfg.latent_dim]
    enc2d_w = []
    enc2d_b = []
    for a, b in zip(widths2d[:-1], widths2d[1:]):
        enc2d_w.append(take((a, b)))
        enc2d_b.append(take((b,)))
    enc3d_w = []
    enc3d_b = []
    for a, b in zip(widths3d[:-1], widths3d[1:]):
        enc3d_w.append(take((a, b)))
        enc3d_b.append(take((b,)))

    def linear(fan_in, fan_out):
        return {"w": take((fan_in, fan_out)), "b": take((fan_out,))}

    head_s2d = linear(cfg.latent_dim, cfg.embed_dim)
    head_s3d = linear(cfg.latent_dim, cfg.embed_dim)
    head_f2d = linear(cfg.latent_dim, cfg.anchor_dim)
    head_f3d = linear(cfg.latent_dim, cfg.anchor_dim)
    anchor = take((cfg.sam_dim, cfg.anchor_dim))
    emb = take((num_classes, cfg.embed_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    if offset != len(payload):
        raise ValidationError(
            f"{path}: payload has {len(payload)} bytes, consumed {offset}")
    if not cfg.train_anchor_head:
        anchor.setflags(write=False)
    bundle = ModelBundle(Mlp(enc2d_w, enc2d_b), Mlp(enc3d_w, enc3d_b),
                         head_s2d, head_s3d, head_f2d, head_f3d, anchor,
                         ClassEmbeddingTable(emb), cfg, int(meta["seed"]))
    return bundle, meta
