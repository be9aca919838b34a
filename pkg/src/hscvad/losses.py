"""Loss terms with analytic gradients.

The single-anchor functions (``loss_*``) are the reference forms; training
uses the vectorized ``*_batch`` variants, which assume unit-norm latents and
return gradients with respect to those latents.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPositiveSet, ShapeError
from .model import STREAMS, HscModel, MemoryBank
from .nn import l2_normalize, l2_normalize_backward, logsumexp, mlp2_apply, mlp2_backward, softmax


def loss_reconstruction(obj_feat, recon) -> tuple[float, np.ndarray]:
    obj = np.asarray(obj_feat, dtype=np.float64)
    rec = np.asarray(recon, dtype=np.float64)
    if obj.shape != rec.shape:
        raise ShapeError(f"shape mismatch {obj.shape} vs {rec.shape}")
    diff = rec - obj
    return float(diff @ diff), 2.0 * diff


def _infonce(anchor, rows, positive, domain, tau):
    """``-sum_{j in pos} log softmax_{k in domain}(cos(a, r_k) / tau)_j``."""
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    if not domain.any():
        raise EmptyPositiveSet("empty denominator set")
    if not positive.any():
        raise EmptyPositiveSet("no positive entries")
    a_hat, cache = l2_normalize(anchor)
    r_hat, _ = l2_normalize(rows)
    z = (r_hat[domain] @ a_hat) / tau
    pos = positive[domain]
    n_pos = pos.sum()
    loss = n_pos * logsumexp(z) - z[pos].sum()
    dz = n_pos * softmax(z) - pos
    da_hat = r_hat[domain].T @ dz / tau
    return float(loss), l2_normalize_backward(cache, da_hat)


def loss_scene_contrast(anchor_latent, bank: MemoryBank, scene_label: int, tau: float = 0.5):
    """Scene-level InfoNCE: positives share the anchor's pseudo scene label,
    the denominator runs over every bank entry. Bank rows are constants."""
    positive = bank.scene_labels == scene_label
    domain = np.ones(len(bank), dtype=bool)
    return _infonce(anchor_latent, bank.rows, positive, domain, tau)


def loss_object_contrast(anchor_latent, bank: MemoryBank, scene_label: int, class_label: int, tau: float = 0.5):
    """Object-level InfoNCE restricted to the anchor's scene class; positives
    also share its object/action class."""
    domain = bank.scene_labels == scene_label
    positive = domain & (bank.class_labels == class_label)
    return _infonce(anchor_latent, bank.rows, positive, domain, tau)


def loss_linear_classification(logits, scene_label: int) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= scene_label < logits.shape[-1]:
        raise ValueError(f"label {scene_label} out of range for {logits.shape[-1]} classes")
    p = softmax(logits)
    loss = logsumexp(logits) - logits[scene_label]
    grad = p.copy()
    grad[scene_label] -= 1.0
    return float(loss), grad


def cross_entropy_batch(logits, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-row softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    rows = np.arange(len(labels))
    loss = logsumexp(logits, axis=1) - logits[rows, labels]
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return loss, grad


def infonce_batch(latents, rows, positive, domain, tau):
    """Vectorized InfoNCE for unit-norm anchors against unit-norm rows.

    ``positive`` and ``domain`` are boolean ``(B, N)`` masks. Rows with an
    empty positive set get zero loss/gradient and are flagged in ``valid``.
    """
    z = (latents @ rows.T) / tau
    zd = np.where(domain, z, -np.inf)
    m = np.max(zd, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(domain, np.exp(zd - m), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    n_pos = positive.sum(axis=1)
    valid = (n_pos > 0) & (denom[:, 0] > 0)
    safe_denom = np.where(denom > 0, denom, 1.0)
    lse = np.log(safe_denom[:, 0]) + m[:, 0]
    loss = n_pos * lse - np.where(positive, z, 0.0).sum(axis=1)
    dz = n_pos[:, None] * e / safe_denom - positive
    dz[~valid] = 0.0
    loss = np.where(valid, loss, 0.0)
    return loss, (dz @ rows) / tau, valid


@dataclass
class StreamBatch:
    """Rows of one stream participating in a batch."""

    inputs: np.ndarray  # encoder inputs [scene, object]
    targets: np.ndarray  # object features to reconstruct
    scene: np.ndarray
    cls: np.ndarray
    slots: np.ndarray  # memory-bank slots of these rows

    def __len__(self):
        return len(self.inputs)


@dataclass
class LossSwitches:
    scene_contrast: bool = True
    object_contrast: bool = True
    linear_classification: bool = True
    reconstruction: bool = True
    exclude_self: bool = False


@dataclass
class CombinedLoss:
    total: float
    terms: dict  # "app.scn" etc. -> batch-mean value
    grads: dict  # named parameter -> gradient
    latents: dict  # stream -> (B_s, D_E) latents used for memory updates
    skipped: dict = field(default_factory=dict)


def stream_loss(model: HscModel, stream: str, batch: StreamBatch, bank: MemoryBank, tau: float, switches: LossSwitches, denom: int):
    """Sum of the enabled terms for one stream, divided by ``denom``.

    Returns (loss, terms, grads, latents, skipped).
    """
    enc = model.encoders[stream]
    dec = model.decoders[stream]
    lam = model.classifiers[stream]
    z, enc_cache = mlp2_apply(enc, batch.inputs)
    a, norm_cache = l2_normalize(z)
    d_a = np.zeros_like(a)
    terms, skipped = {}, {}
    grads = {}

    if switches.reconstruction:
        recon, dec_cache = mlp2_apply(dec, a)
        diff = recon - batch.targets
        terms["rec"] = float(np.sum(diff * diff)) / denom
        da_dec, g_dec = mlp2_backward(dec, dec_cache, 2.0 * diff / denom)
        d_a += da_dec
        for k, v in g_dec.arrays().items():
            grads[f"dec.{stream}.{k}"] = v
    else:
        terms["rec"] = 0.0

    if switches.linear_classification:
        logits = a @ lam.T
        ce, dlog = cross_entropy_batch(logits, batch.scene)
        terms["lc"] = float(ce.sum()) / denom
        dlog /= denom
        grads[f"lc.{stream}"] = dlog.T @ a
        d_a += dlog @ lam
    else:
        terms["lc"] = 0.0

    rows = bank.rows
    same_scene = batch.scene[:, None] == bank.scene_labels[None, :]
    if switches.exclude_self:
        not_self = batch.slots[:, None] != np.arange(len(bank))[None, :]
    else:
        not_self = np.ones_like(same_scene)
    if switches.scene_contrast:
        everything = np.ones_like(same_scene)
        loss, da, valid = infonce_batch(a, rows, same_scene & not_self, everything, tau)
        terms["scn"] = float(loss.sum()) / denom
        skipped["scn"] = int((~valid).sum())
        d_a += da / denom
    else:
        terms["scn"] = 0.0
    if switches.object_contrast:
        same_cls = same_scene & (batch.cls[:, None] == bank.class_labels[None, :])
        loss, da, valid = infonce_batch(a, rows, same_cls & not_self, same_scene, tau)
        terms["obj"] = float(loss.sum()) / denom
        skipped["obj"] = int((~valid).sum())
        d_a += da / denom
    else:
        terms["obj"] = 0.0

    dz = l2_normalize_backward(norm_cache, d_a)
    _, g_enc = mlp2_backward(enc, enc_cache, dz)
    for k, v in g_enc.arrays().items():
        grads[f"enc.{stream}.{k}"] = v
    return sum(terms.values()), terms, grads, a, skipped


def combined_loss(model: HscModel, batches: dict, banks: dict, tau: float, switches: LossSwitches | None = None, batch_size: int | None = None) -> CombinedLoss:
    """Total objective ``L_app + L_mot`` averaged over the batch samples.

    ``batches`` maps stream to a ``StreamBatch`` (the motion batch holds only
    the samples that have motion features). Gradients are returned for every
    stream parameter; disabled terms contribute zeros.
    """
    switches = switches or LossSwitches()
    if batch_size is None:
        batch_size = len(batches["app"])
    total, terms, latents, skipped = 0.0, {}, {}, {}
    grads = {k: np.zeros_like(v) for k, v in model.named_arrays().items() if not k.startswith("bin.")}
    for s in STREAMS:
        b = batches.get(s)
        if b is None or len(b) == 0:
            continue
        loss, t, g, a, sk = stream_loss(model, s, b, banks[s], tau, switches, batch_size)
        total += loss
        terms.update({f"{s}.{k}": v for k, v in t.items()})
        skipped.update({f"{s}.{k}": v for k, v in sk.items()})
        for k, v in g.items():
            grads[k] += v
        latents[s] = a
    return CombinedLoss(total, terms, grads, latents, skipped)
