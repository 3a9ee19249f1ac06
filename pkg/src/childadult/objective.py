"""NT-Xent contrastive loss over anchor/positive embeddings, with a loop oracle."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import mpmath
import numpy as np
import torch

DEFAULT_TEMPERATURE = 0.1


@dataclass
class ContrastiveEmbeddings:
    anchors: torch.Tensor
    positives: torch.Tensor
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        self.anchors = torch.as_tensor(self.anchors)
        self.positives = torch.as_tensor(self.positives)
        if self.anchors.ndim != 2 or self.anchors.shape != self.positives.shape:
            raise ValueError(
                f"anchors and positives must both be (B, d); got {tuple(self.anchors.shape)} "
                f"and {tuple(self.positives.shape)}"
            )
        b, d = self.anchors.shape
        if b < 1 or d < 2:
            raise ValueError(f"need B >= 1 and d >= 2, got B={b}, d={d}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def batch_size(self) -> int:
        return self.anchors.shape[0]


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _unit_rows(x: torch.Tensor, name: str) -> torch.Tensor:
    norms = x.norm(dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError(f"{name} contains a zero-norm embedding")
    return x / norms


def ntxent_loss(e: ContrastiveEmbeddings) -> torch.Tensor:
    """Mean NT-Xent loss with anchors as queries.

    For anchor i the denominator runs over the other anchors (k != i) and all
    positives including its own; the log-sum-exp keeps small temperatures
    from overflowing. Differentiable w.r.t. both inputs.
    """
    a, p = e.anchors, e.positives
    if not (torch.isfinite(a).all() and torch.isfinite(p).all()):
        raise ValueError("embeddings must be finite")
    b = e.batch_size
    if b == 1:
        warnings.warn("NT-Xent with B=1 has no negatives; the loss is identically 0", RuntimeWarning, stacklevel=2)
    a = _unit_rows(a, "anchors")
    p = _unit_rows(p, "positives")
    sim_aa = (a @ a.T).clamp(-1.0, 1.0) / e.temperature
    sim_ap = (a @ p.T).clamp(-1.0, 1.0) / e.temperature
    self_mask = torch.eye(b, dtype=torch.bool, device=a.device)
    sim_aa = sim_aa.masked_fill(self_mask, float("-inf"))
    lse = torch.logsumexp(torch.cat([sim_aa, sim_ap], dim=1), dim=1)
    return (lse - sim_ap.diagonal()).mean()


def ntxent_oracle(e: ContrastiveEmbeddings, dps: int = 40) -> float:
    """Same quantity as :func:`ntxent_loss` by explicit loops in ``dps``-digit arithmetic."""
    a = e.anchors.detach().cpu().double().numpy()
    p = e.positives.detach().cpu().double().numpy()
    if not (np.isfinite(a).all() and np.isfinite(p).all()):
        raise ValueError("embeddings must be finite")
    b, d = a.shape
    with mpmath.workdps(dps):
        A = [[mpmath.mpf(float(v)) for v in row] for row in a]
        P = [[mpmath.mpf(float(v)) for v in row] for row in p]
        tau = mpmath.mpf(e.temperature)

        def norm(u):
            n = mpmath.sqrt(mpmath.fsum(x * x for x in u))
            if n == 0:
                raise ValueError("zero-norm embedding")
            return n

        def sim(u, nu, v, nv):
            return mpmath.fsum(x * y for x, y in zip(u, v)) / (nu * nv)

        na = [norm(u) for u in A]
        np_ = [norm(u) for u in P]
        total = mpmath.mpf(0)
        for i in range(b):
            num = mpmath.exp(sim(A[i], na[i], P[i], np_[i]) / tau)
            den = mpmath.mpf(0)
            for k in range(b):
                if k != i:
                    den += mpmath.exp(sim(A[i], na[i], A[k], na[k]) / tau)
            for k in range(b):
                den += mpmath.exp(sim(A[i], na[i], P[k], np_[k]) / tau)
            total += -mpmath.log(num / den)
        return float(total / b)
