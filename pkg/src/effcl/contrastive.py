"""Projection head and the paired contrastive objective.

Pooled sequence embeddings pass through a two-layer rectified projection
head; the contrastive loss is a normalized temperature-scaled
cross-entropy over the 2N projected embeddings of a batch, where the
positive pair for each instance sits adjacent to it (indices 2i and
2i+1, 0-based).  The loss is the sum over all 2N anchor terms, each one
a softmax over cosine similarities to every other instance in the batch
(only the anchor itself is excluded from the denominator).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError


@dataclass
class ProjectionHead:
    """z = W2 @ relu(W1 @ e), no biases."""

    w1: np.ndarray  # (proj_hidden, dim)
    w2: np.ndarray  # (proj_out, proj_hidden)

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator,
               proj_hidden: int | None = None, proj_out: int | None = None,
               init_std: float = 0.02) -> "ProjectionHead":
        proj_hidden = dim if proj_hidden is None else proj_hidden
        proj_out = dim if proj_out is None else proj_out
        return cls(
            w1=rng.normal(0.0, init_std, size=(proj_hidden, dim)),
            w2=rng.normal(0.0, init_std, size=(proj_out, proj_hidden)),
        )

    def __call__(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=np.float64)
        if e.shape[-1] != self.w1.shape[1]:
            raise ValueError(
                f"embedding dim {e.shape[-1]} does not match head input {self.w1.shape[1]}"
            )
        return np.maximum(e @ self.w1.T, 0.0) @ self.w2.T


def project(e, head: ProjectionHead) -> np.ndarray:
    """Apply the projection head to one embedding or a batch of them."""
    return head(e)


def project_backward(e, head: ProjectionHead, dz):
    """Gradients of the projection for a batch: returns (de, dw1, dw2)."""
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    dz = np.atleast_2d(np.asarray(dz, dtype=np.float64))
    pre = e @ head.w1.T
    hid = np.maximum(pre, 0.0)
    dw2 = dz.T @ hid
    dhid = dz @ head.w2
    dpre = dhid * (pre > 0.0)
    dw1 = dpre.T @ e
    de = dpre @ head.w1
    return de, dw1, dw2


def cosine_sim(z_i, z_j) -> float:
    """Cosine similarity, clamped to [-1, 1] against round-off."""
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    ni = np.linalg.norm(z_i)
    nj = np.linalg.norm(z_j)
    if ni == 0.0 or nj == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(z_i @ z_j / (ni * nj), -1.0, 1.0))


@dataclass(frozen=True)
class ContrastiveBatch:
    """2N projected embeddings with positives adjacent, plus temperature."""

    z: np.ndarray  # (2N, proj_out)
    temperature: float

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.float64))
        if self.z.ndim != 2 or self.z.shape[0] % 2 != 0 or self.z.shape[0] < 2:
            raise ValueError(f"z must be (2N, dim) with N >= 1, got {self.z.shape}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def _similarity_matrix(z):
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("contrastive batch contains a zero embedding")
    zhat = z / norms[:, None]
    sim = np.clip(zhat @ zhat.T, -1.0, 1.0)
    return sim, zhat, norms


def _loss_from_sim(sim, temperature):
    """Sum of per-anchor losses given the full similarity matrix."""
    n2 = sim.shape[0]
    logits = sim / temperature
    total = 0.0
    for i in range(n2):
        partner = i + 1 if i % 2 == 0 else i - 1
        row = np.delete(logits[i], i)
        m = row.max()
        lse = m + np.log(np.exp(row - m).sum())
        total += lse - logits[i, partner]
    return float(total)


def nt_xent_loss(batch: ContrastiveBatch) -> float:
    """Contrastive loss summed over all 2N anchors of the batch."""
    sim, _, _ = _similarity_matrix(batch.z)
    loss = _loss_from_sim(sim, batch.temperature)
    if not np.isfinite(loss):
        raise NumericalError(f"contrastive loss is not finite: {loss}")
    return loss


def nt_xent_loss_and_grad(z: np.ndarray, temperature: float):
    """Loss plus its gradient with respect to the raw (unnormalized) z."""
    z = np.asarray(z, dtype=np.float64)
    sim, zhat, norms = _similarity_matrix(z)
    n2 = z.shape[0]
    logits = sim / temperature
    dsim = np.zeros_like(sim)
    total = 0.0
    for i in range(n2):
        partner = i + 1 if i % 2 == 0 else i - 1
        mask = np.ones(n2, dtype=bool)
        mask[i] = False
        row = logits[i][mask]
        m = row.max()
        e = np.exp(row - m)
        denom = e.sum()
        total += m + np.log(denom) - logits[i, partner]
        probs = np.zeros(n2)
        probs[mask] = e / denom
        probs[partner] -= 1.0
        dsim[i] += probs / temperature
    if not np.isfinite(total):
        raise NumericalError(f"contrastive loss is not finite: {total}")
    # sim = zhat @ zhat.T with the diagonal unused (dsim diagonal is 0)
    dzhat = (dsim + dsim.T) @ zhat
    inner = (dzhat * zhat).sum(axis=1, keepdims=True)
    dz = (dzhat - zhat * inner) / norms[:, None]
    return float(total), dz


@dataclass(frozen=True)
class LossReport:
    mlm: float
    contrastive: float
    total: float


def combined_loss(mlm: float, contrastive: float) -> LossReport:
    """Unweighted sum of the two objectives."""
    if not (np.isfinite(mlm) and np.isfinite(contrastive)):
        raise NumericalError(
            f"non-finite loss component: mlm={mlm}, contrastive={contrastive}"
        )
    return LossReport(mlm=float(mlm), contrastive=float(contrastive),
                      total=float(mlm) + float(contrastive))
