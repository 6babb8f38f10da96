"""Finite-difference Hessian-vector products and per-step entanglement metrics.

Given consecutive batches A then B with the optimizer step in between, the
gradient of B observed at the post-step point theta' relates to its value at
the pre-step point by a first-order expansion

    g_B(theta) ~= g_B(theta') + eta * H_B g_A

so ``e = eta * H_B g_A`` is the part of B's gradient that exists only because
A came first, and ``c = g_B_obs + e`` is the reconstructed ordering-free part.
Everything here works on flat float64 arrays and a ``grad_fn(theta) -> grad``
callable, which lets the quadratic oracle and the real model share the code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import metrics as M
from .params import ParamLayout

GradFn = Callable[[np.ndarray], np.ndarray]
BURST_LENGTH = 10


class DegenerateInput(ValueError):
    pass


def hvp_fd(grad_fn: GradFn, theta: np.ndarray, v: np.ndarray, eps_scale: float = 1e-4,
           g0: np.ndarray | None = None, central: bool = False) -> np.ndarray:
    """H(theta) v by differencing gradients with step eps = eps_scale / ||v||.

    The forward form reuses ``g0 = grad_fn(theta)`` when supplied. The central
    form costs one more gradient and is meant for oracle checks.
    """
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nv = M.norm(v)
    if nv == 0.0:
        raise DegenerateInput("Hessian-vector product needs a nonzero direction")
    eps = eps_scale / nv
    plus = np.asarray(grad_fn(theta + eps * v), dtype=np.float64)
    if central:
        minus = np.asarray(grad_fn(theta - eps * v), dtype=np.float64)
        return (plus - minus) / (2 * eps)
    base = np.asarray(grad_fn(theta), dtype=np.float64) if g0 is None else np.asarray(g0, dtype=np.float64)
    return (plus - base) / eps


@dataclass
class EntanglementStep:
    e: np.ndarray
    c: np.ndarray
    g_obs: np.ndarray
    hv: np.ndarray
    probe: np.ndarray
    lr: float
    metrics: dict = field(default_factory=dict)


def entanglement_step(grad_fn: GradFn, g_A: np.ndarray, theta_after: np.ndarray, lr: float,
                      layout: ParamLayout | None = None, prev_e: np.ndarray | None = None,
                      displacement: np.ndarray | None = None, eps_scale: float = 1e-4,
                      theta_ref: np.ndarray | None = None) -> EntanglementStep:
    """Probe batch B (via ``grad_fn``) at the post-step point.

    By default ``e = lr * H_B g_A``. With ``displacement`` (theta' - theta) the
    alternative ``e = -H_B displacement`` is used and the curvature scalars are
    taken along the displacement.
    """
    g_A = np.asarray(g_A, dtype=np.float64)
    theta_after = np.asarray(theta_after, dtype=np.float64)
    g_obs = np.asarray(grad_fn(theta_after), dtype=np.float64)
    if displacement is None:
        probe = g_A
        hv = hvp_fd(grad_fn, theta_after, probe, eps_scale, g0=g_obs)
        e = lr * hv
    else:
        probe = np.asarray(displacement, dtype=np.float64)
        hv = hvp_fd(grad_fn, theta_after, probe, eps_scale, g0=g_obs)
        e = -hv
    c = g_obs + e

    obs_n, e_n, c_n, probe_n = M.norm(g_obs), M.norm(e), M.norm(c), M.norm(probe)
    hv_n = M.norm(hv)
    amp = M.ratio(hv_n, probe_n)
    out = {
        "observed_grad_norm": obs_n,
        "entanglement_norm": e_n,
        "content_norm": c_n,
        "entanglement_energy_ratio": M.ratio(e_n ** 2, obs_n ** 2),
        "entanglement_content_cossim": M.cosine(e, c),
        "rayleigh_quotient": M.ratio(float(np.dot(probe, hv)), probe_n ** 2),
        "amplification_ratio": amp,
        "edge_of_stability": None if amp is None else amp * 2 * lr,
        "entanglement_coherence": None if prev_e is None else M.cosine(e, prev_e),
    }
    if theta_ref is not None:
        delta = np.asarray(theta_ref, dtype=np.float64) - theta_after
        out["entanglement_cossim_to_solution"] = M.cosine(-e, delta)
        out["content_cossim_to_solution"] = M.cosine(-c, delta)
    if layout is not None:
        for name, s in layout.slices():
            en, cn, on = M.norm(e[s]), M.norm(c[s]), M.norm(g_obs[s])
            out[f"entanglement_norm/{name}"] = en
            out[f"content_norm/{name}"] = cn
            out[f"entanglement_energy_ratio/{name}"] = M.ratio(en ** 2, on ** 2)
            if theta_ref is not None:
                out[f"entanglement_cossim_to_solution/{name}"] = M.cosine(-e[s], delta[s])
                out[f"content_cossim_to_solution/{name}"] = M.cosine(-c[s], delta[s])
    return EntanglementStep(e=e, c=c, g_obs=g_obs, hv=hv, probe=probe, lr=lr, metrics=out)


def burst_length(n_batches: int, requested: int = BURST_LENGTH) -> int:
    """Probed steps available in an epoch: each needs a following batch."""
    return max(0, min(requested, n_batches - 1))


def summarize_burst(steps: list[EntanglementStep]) -> dict:
    """Mean of every scalar metric over the burst (undefined entries skipped)."""
    if not steps:
        return {"burst_steps": 0}
    keys = list(steps[0].metrics)
    out = {"burst_steps": len(steps)}
    for k in keys:
        out[k] = M.mean_defined(s.metrics.get(k) for s in steps)
    return out


class QuadraticLoss:
    """L(theta) = 1/2 theta^T A theta (+ b^T theta); used as an exact oracle."""

    def __init__(self, A, b=None):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = np.zeros(len(self.A)) if b is None else np.asarray(b, dtype=np.float64)

    def loss(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return 0.5 * theta @ self.A @ theta + self.b @ theta

    def grad(self, theta):
        return self.A @ np.asarray(theta, dtype=np.float64) + self.b


def sgd_step(theta, grad, lr):
    """Plain gradient step, for oracle checks of the first-order expansion."""
    return np.asarray(theta, dtype=np.float64) - lr * np.asarray(grad, dtype=np.float64)
