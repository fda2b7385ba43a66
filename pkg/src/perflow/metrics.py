"""Reconstruction accuracy and physics-violation metrics."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .projections import divergence


def rel_error(x_hat: np.ndarray, x: np.ndarray, p: int = 2) -> float:
    """``||x_hat - x||_p / ||x||_p`` over all entries."""
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    den = np.linalg.norm(x.ravel(), ord=p)
    if den == 0:
        raise ValueError("relative error undefined for a zero-norm reference")
    return float(np.linalg.norm((x_hat - x).ravel(), ord=p) / den)


def phys_err_bc(s_hat: np.ndarray, indicator: np.ndarray) -> float:
    """Mean squared magnitude on the boundary set, averaged over any leading batch axes."""
    ind = np.asarray(indicator, dtype=bool)
    if not ind.any():
        raise ValueError("empty boundary set")
    s_hat = np.asarray(s_hat, dtype=float)
    return float(np.mean(s_hat[..., ind] ** 2))


def phys_err_mass(u_hat: np.ndarray, m_ref: float = 0.0, length: float = 1.0) -> float:
    """Mean over snapshots of the squared deviation of ``int u dx`` from ``m_ref``.

    ``u_hat`` has shape ``(..., N_t, N_x)`` on a periodic grid; the integral is
    the rectangle rule ``h * sum`` with ``h = length / N_x``.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    h = length / u_hat.shape[-1]
    mass = h * u_hat.sum(axis=-1)
    return float(np.mean((mass - m_ref) ** 2))


def phys_err_div(vel: np.ndarray, kind: str = "spectral", length: float = 1.0) -> float:
    """Mean squared divergence of interleaved ``(u, v)`` pairs over all points and frames."""
    vel = np.asarray(vel, dtype=float)
    if vel.ndim < 3 or vel.shape[-3] % 2:
        raise ValueError("phys_err_div needs (..., 2F, H, W) velocity pairs")
    return float(np.mean(divergence(vel, kind, length) ** 2))


@dataclass
class EvalReport:
    kind: str
    rel_l2: float
    rel_l1: float
    phys_err: float
    phys_variant: str
    components: dict = field(default_factory=dict)  # name -> {"rel_l2", "rel_l1"}
    n_samples: int = 1
    wall_time: float = 0.0
    norm: str = "global"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def header():
        return ["kind", "n_samples", "rel_l2", "rel_l1", "phys_variant", "phys_err", "wall_time"]

    def row(self):
        return [self.kind, self.n_samples, f"{self.rel_l2:.10g}", f"{self.rel_l1:.10g}",
                self.phys_variant, f"{self.phys_err:.10g}", f"{self.wall_time:.4f}"]


def component_errors(x_hat, x, components: dict) -> dict:
    """Per-component relative errors for one sample ``(C, H, W)``.

    ``components`` maps a name to the channel indices forming that component.
    """
    out = {}
    for name, chans in components.items():
        idx = list(chans)
        out[name] = {"rel_l2": rel_error(x_hat[idx], x[idx], 2), "rel_l1": rel_error(x_hat[idx], x[idx], 1)}
    return out


def evaluate(problem, x_hat: np.ndarray, x: np.ndarray) -> EvalReport:
    """Evaluate a batch ``(B, C, H, W)`` (or one sample) against ground truth.

    Relative errors are computed per sample and component, averaged over
    components, then over samples.
    """
    start = time.perf_counter()
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    if x.ndim == 3:
        x_hat, x = x_hat[None], x[None]
    per_sample = [component_errors(a, b, problem.components) for a, b in zip(x_hat, x)]
    comps = {
        name: {m: float(np.mean([s[name][m] for s in per_sample])) for m in ("rel_l2", "rel_l1")}
        for name in problem.components
    }
    rel_l2 = float(np.mean([c["rel_l2"] for c in comps.values()]))
    rel_l1 = float(np.mean([c["rel_l1"] for c in comps.values()]))
    phys = problem.phys_err(x_hat)
    extra = {}
    if problem.kind == "darcy":
        a_bin = np.where(x_hat[:, 0] >= 7.5, 12.0, 3.0)
        extra["rel_l2_a_binarized"] = float(np.mean([rel_error(p, q) for p, q in zip(a_bin, x[:, 0])]))
    return EvalReport(problem.kind, rel_l2, rel_l1, phys, problem.phys_variant, comps,
                      n_samples=len(x), wall_time=time.perf_counter() - start, extra=extra)
