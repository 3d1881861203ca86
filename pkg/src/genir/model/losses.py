"""Training losses: cross-entropy plus the two consistency regularizers.

Both consistency variants compare two stochastic forward passes of the same
batch.  The KL variant penalizes divergence between the two step-wise output
distributions; the softmax variant is contrastive on decoder states: each
pass-1 state should match its own pass-2 state and not any other state in
the batch.  Either one can destabilize training into NaNs, which is why the
train step treats a non-finite loss as a detectable condition instead of a
crash (see optim.train_step).

Every *_grad function returns gradients that exactly differentiate the value
computed here; the finite-difference tests hold them to <1e-4 relative error.
"""

from __future__ import annotations

import numpy as np

from genir.errors import ConfigError

KL_EPS = 1e-9


def _log_softmax(z):
    m = z.max(-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(-1, keepdims=True))


def cross_entropy(logits, targets, mask) -> float:
    """Mean negative log-likelihood over unmasked target positions."""
    loss, _ = cross_entropy_grad(logits, targets, mask, want_grad=False)
    return loss


def cross_entropy_grad(logits, targets, mask, want_grad=True):
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != targets.shape or targets.shape != logits.shape[:-1]:
        raise ConfigError("cross_entropy shape mismatch")
    n = int(mask.sum())
    if n == 0:
        raise ConfigError("cross_entropy over an entirely masked batch")
    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float(-(picked * mask).sum() / n)
    if not want_grad:
        return loss, None
    dlogits = np.exp(logp)
    np.put_along_axis(
        dlogits,
        targets[..., None],
        np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0,
        axis=-1,
    )
    dlogits *= mask[..., None] / n
    return loss, dlogits


def consistency_loss_kl(p1, p2, eps: float = KL_EPS) -> float:
    """Symmetric KL between two distribution arrays (..., V), averaged over
    the leading axes.  Probabilities are floored by eps inside the logs."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise ConfigError("distribution shapes differ")
    l1 = np.log(p1 + eps)
    l2 = np.log(p2 + eps)
    kl12 = (p1 * (l1 - l2)).sum(-1)
    kl21 = (p2 * (l2 - l1)).sum(-1)
    return float(np.mean(0.5 * (kl12 + kl21)))


def kl_consistency_grad(z1, z2, mask, eps: float = KL_EPS):
    """Symmetric KL between softmax(z1) and softmax(z2) on unmasked positions.

    Returns (value, dz1, dz2).  The value matches
    consistency_loss_kl(softmax(z1), softmax(z2)) restricted to the mask.
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ConfigError("consistency over an entirely masked batch")
    p1 = np.exp(_log_softmax(z1))
    p2 = np.exp(_log_softmax(z2))
    l1 = np.log(p1 + eps)
    l2 = np.log(p2 + eps)
    per_pos = 0.5 * ((p1 * (l1 - l2)).sum(-1) + (p2 * (l2 - l1)).sum(-1))
    value = float((per_pos * mask).sum() / n)

    # d(value)/d(p1) then through the softmax jacobian; same for p2
    g1 = 0.5 * ((l1 - l2) + p1 / (p1 + eps) - p2 / (p1 + eps))
    g2 = 0.5 * ((l2 - l1) + p2 / (p2 + eps) - p1 / (p2 + eps))
    dz1 = p1 * (g1 - (g1 * p1).sum(-1, keepdims=True))
    dz2 = p2 * (g2 - (g2 * p2).sum(-1, keepdims=True))
    scale = mask[..., None] / n
    return value, dz1 * scale, dz2 * scale


def consistency_loss_softmax(h1, h2, mask=None) -> float:
    """Contrastive agreement between two passes' decoder states.

    For each position, the pass-1 state of an example must have higher inner
    product with its own pass-2 state than with every other state (either
    pass) of the batch at that position.
    """
    value, _, _ = softmax_consistency_grad(h1, h2, mask, want_grad=False)
    return value


def softmax_consistency_grad(h1, h2, mask=None, want_grad=True):
    h1 = np.asarray(h1)
    h2 = np.asarray(h2)
    if h1.shape != h2.shape or h1.ndim != 3:
        raise ConfigError("expected matching (batch, length, d) state arrays")
    B, L, d = h1.shape
    if mask is None:
        mask = np.ones((B, L), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    dh1 = np.zeros_like(h1) if want_grad else None
    dh2 = np.zeros_like(h2) if want_grad else None
    total = 0.0
    count = 0
    for l in range(L):
        valid = np.flatnonzero(mask[:, l])
        if valid.size == 0:
            continue
        C = np.concatenate([h1[valid, l], h2[valid, l]], axis=0)  # (2m, d)
        m = valid.size
        S = C @ C.T
        np.fill_diagonal(S, -np.inf)  # a state is never its own negative
        logZ = S.max(-1, keepdims=True)
        P = np.exp(S - logZ)
        Z = P.sum(-1, keepdims=True)
        logp = S - (logZ + np.log(Z))
        anchors = np.arange(m)
        total += float(-logp[anchors, anchors + m].sum())
        count += m
        if want_grad:
            dS = np.zeros_like(S)
            prob = P / Z
            prob[~np.isfinite(S)] = 0.0
            dS[anchors] = prob[anchors]
            dS[anchors, anchors + m] -= 1.0
            dC = (dS + dS.T) @ C
            dh1[valid, l] += dC[:m]
            dh2[valid, l] += dC[m:]
    if count == 0:
        raise ConfigError("consistency over an entirely masked batch")
    value = total / count
    if want_grad:
        dh1 /= count
        dh2 /= count
    return value, dh1, dh2
