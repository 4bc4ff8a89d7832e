"""Loss terms: reconstruction, the four independence terms, and the
composite autoencoder / discriminator objectives.

All functions take and return autodiff Nodes so gradients flow to whichever
side of the adversarial game is being updated.  Degenerate batches (zero
variance or zero norm) raise instead of clamping, so silent degenerate
training is impossible.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DegenerateBatchError, ShapeMismatchError

VARIANCE_FLOOR = 1e-12
NORM_FLOOR = 1e-12

IND_KINDS = ("domain-confusion", "regression", "contrastive", "scale-invariant")
RECON_KINDS = ("l1", "mse")


@dataclass(frozen=True)
class ObjectiveConfig:
    recon_kind: str = "l1"
    ind_kind: str = "regression"
    lam: float = 0.0

    def __post_init__(self):
        if self.recon_kind not in RECON_KINDS:
            raise ConfigError(f"unknown reconstruction kind {self.recon_kind!r}")
        if self.ind_kind not in IND_KINDS:
            raise ConfigError(f"unknown independence kind {self.ind_kind!r}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")


def _check_same_shape(what, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeMismatchError(
            f"{what}: shapes {a.value.shape} and {b.value.shape} differ")


def recon_l1(xhat, x):
    """Mean absolute difference over all entries."""
    _check_same_shape("recon_l1", xhat, x)
    return ad.mean(ad.abs_(ad.sub(xhat, x)))


def recon_mse(xhat, x):
    """Mean squared difference over all entries."""
    _check_same_shape("recon_mse", xhat, x)
    return ad.mean(ad.square(ad.sub(xhat, x)))


def ind_domain_confusion(disc_logits, labels):
    """Mean softmax cross-entropy of class logits against integer labels."""
    logits = disc_logits.value.data
    if logits.ndim != 2:
        raise ShapeMismatchError(
            f"domain confusion: logits must be (batch, classes), got "
            f"{logits.shape}")
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeMismatchError(
            f"domain confusion: labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ConfigError(
            f"domain confusion: label out of range [0, {k})")
    onehot = np.zeros((b, k))
    onehot[np.arange(b), labels] = 1.0
    lse = ad.sum_(ad.logsumexp(disc_logits))
    picked = ad.sum_(ad.mul(disc_logits, ad.constant(onehot)))
    return ad.scalar_mul(ad.sub(lse, picked), 1.0 / b)


def squared_correlation(a, b):
    """Squared batch Pearson correlation of two equal-length vectors.

    Raises DegenerateBatchError when either sample variance falls below the
    floor; a correlation against a constant is undefined, not zero.
    """
    av = a.value.data.ravel()
    bv = b.value.data.ravel()
    if av.shape != bv.shape:
        raise ShapeMismatchError(
            f"squared_correlation: lengths {av.size} and {bv.size} differ")
    n = av.size
    if n < 2:
        raise ShapeMismatchError("squared_correlation: need at least 2 samples")
    for name, vec in (("first", av), ("second", bv)):
        if vec.var() <= VARIANCE_FLOOR:
            raise DegenerateBatchError(
                f"degenerate batch: {name} argument has variance below "
                f"{VARIANCE_FLOOR}")
    ac = ad.sub(a, ad.mean(a))
    bc = ad.sub(b, ad.mean(b))
    cov = ad.sum_(ad.mul(ac, bc))
    den = ad.sqrt(ad.mul(ad.sum_(ad.square(ac)), ad.sum_(ad.square(bc))))
    return ad.square(ad.div(cov, den))


def ind_regression(disc_out, t):
    """Negated squared correlation between discriminator output and condition.

    Multi-column numeric conditions average the per-column r²; both arguments
    must then carry the same number of columns.
    """
    dv = disc_out.value.data
    tv = t.value.data
    if dv.ndim <= 1 or dv.shape[1] == 1:
        if tv.ndim > 1 and tv.shape[1:] != (1,):
            raise ShapeMismatchError(
                f"regression: scalar prediction vs condition {tv.shape}")
        return ad.scalar_mul(squared_correlation(disc_out, t), -1.0)
    if tv.shape != dv.shape:
        raise ShapeMismatchError(
            f"regression: prediction {dv.shape} vs condition {tv.shape}")
    cols = dv.shape[1]
    parts = []
    for j in range(cols):
        idx = (slice(None), slice(j, j + 1))
        parts.append(squared_correlation(
            ad.slice_(disc_out, idx), ad.slice_(t, idx)))
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return ad.scalar_mul(total, -1.0 / cols)


def ind_contrastive(disc_logit, labels):
    """Mean binary cross-entropy of sigmoid(logit) against true/fake labels."""
    logits = disc_logit.value.data.ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if logits.shape != labels.shape:
        raise ShapeMismatchError(
            f"contrastive: {logits.size} logits vs {labels.size} labels")
    if labels.min() == labels.max():
        raise DegenerateBatchError(
            "contrastive: batch contains only one class of tuple")
    # bce = softplus(z) - l*z, summed and averaged (stable in both tails)
    z = disc_logit
    lz = ad.mul(z, ad.constant(labels.reshape(disc_logit.value.shape)))
    per = ad.sub(ad.softplus(z), lz)
    return ad.mean(per)


def ind_scale_invariant(code, ht):
    """Frobenius distance of the absolute-value, Frobenius-normalized arrays."""
    _check_same_shape("scale-invariant independence", code, ht)
    for name, node in (("first", code), ("second", ht)):
        if np.sqrt((node.value.data ** 2).sum()) <= NORM_FLOOR:
            raise DegenerateBatchError(
                f"degenerate batch: {name} argument has Frobenius norm below "
                f"{NORM_FLOOR}")
    na = ad.div(ad.abs_(code), ad.frobenius_norm(code))
    nb = ad.div(ad.abs_(ht), ad.frobenius_norm(ht))
    return ad.frobenius_norm(ad.sub(na, nb))


def loss_ae(recon, ind, lam):
    """Autoencoder objective: reconstruction minus lambda times independence."""
    if lam < 0:
        raise ConfigError(f"lambda must be nonnegative, got {lam}")
    if lam == 0:
        return recon
    return ad.sub(recon, ad.scalar_mul(ind, lam))


def loss_disc(ind):
    """Discriminator objective: the independence term itself."""
    return ind
