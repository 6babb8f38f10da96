"""Split an epoch's mean gradient into order-independent and order-specific parts.

The content direction is the normalized mean of K epochs trained from the
same starting point under independent shuffles. The actual epoch gradient is
projected onto it; the orthogonal residual is the ordering component.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .params import ParamLayout


class DegenerateInput(ValueError):
    pass


@dataclass
class Decomposition:
    g_actual: np.ndarray
    g_content: np.ndarray
    g_ordering: np.ndarray
    cf_mean: np.ndarray
    ordering_fraction: float
    ordering_alignment: float
    per_layer: dict = field(default_factory=dict)
    layout: ParamLayout | None = None

    def energy_residual(self) -> float:
        """Relative error of ||g||^2 = ||content||^2 + ||ordering||^2."""
        a = float(np.dot(self.g_actual, self.g_actual))
        parts = float(np.dot(self.g_content, self.g_content) + np.dot(self.g_ordering, self.g_ordering))
        return abs(a - parts) / a

    def metrics(self, theta_prev=None, theta_ref=None) -> dict:
        out = {
            "actual_grad_norm": M.norm(self.g_actual),
            "counterfactual_mean_norm": M.norm(self.cf_mean),
            "content_component_norm": M.norm(self.g_content),
            "ordering_component_norm": M.norm(self.g_ordering),
            "ordering_fraction": self.ordering_fraction,
            "ordering_alignment": self.ordering_alignment,
        }
        out.update(self.per_layer)
        if theta_ref is not None:
            delta = np.asarray(theta_ref, dtype=np.float64) - np.asarray(theta_prev, dtype=np.float64)
            for name, vec in (("content", self.g_content), ("ordering", self.g_ordering), ("cf", self.cf_mean)):
                out[f"{name}_grad_cossim_to_solution"] = M.cosine(-vec, delta)
            if self.layout is not None:
                for lname, s in self.layout.slices():
                    for name, vec in (("content", self.g_content), ("ordering", self.g_ordering),
                                      ("cf", self.cf_mean)):
                        out[f"{name}_grad_cossim_to_solution/{lname}"] = M.cosine(-vec[s], delta[s])
        return out


def decompose(g_actual, shuffled_means, layout: ParamLayout | None = None) -> Decomposition:
    if len(shuffled_means) < 2:
        raise DegenerateInput(f"need K >= 2 shuffled epoch gradients, got {len(shuffled_means)}")
    g = np.asarray(g_actual, dtype=np.float64).ravel()
    cf = np.mean([np.asarray(s, dtype=np.float64).ravel() for s in shuffled_means], axis=0)
    g_norm, cf_norm = M.norm(g), M.norm(cf)
    if g_norm == 0.0:
        raise DegenerateInput("actual epoch gradient is zero")
    if cf_norm == 0.0:
        raise DegenerateInput("mean shuffled gradient is zero")
    u = cf / cf_norm
    content = np.dot(u, g) * u
    ordering = g - content
    frac = float(np.dot(ordering, ordering) / (g_norm * g_norm))
    align = float(np.clip(np.dot(g, u) / g_norm, -1.0, 1.0))
    per_layer: dict = {}
    if layout is not None:
        for name, s in layout.slices():
            gl = g[s]
            e = float(np.dot(gl, gl))
            per_layer[f"content_component_norm/{name}"] = M.norm(content[s])
            per_layer[f"ordering_component_norm/{name}"] = M.norm(ordering[s])
            per_layer[f"ordering_fraction/{name}"] = M.ratio(float(np.dot(ordering[s], ordering[s])), e)
            per_layer[f"ordering_alignment/{name}"] = M.cosine(gl, cf[s])
    return Decomposition(g, content, ordering, cf, frac, align, per_layer, layout)


@dataclass
class KValidationReport:
    k: int
    full_norm: float
    subset_norms: list[float]
    subset_cosines: list[float]
    norm_gap: float
    min_cosine: float
    strictly_monotone: bool

    def passes(self, gap_tol: float = 0.05, cos_tol: float = 0.95) -> bool:
        return self.norm_gap < gap_tol and self.min_cosine > cos_tol and self.strictly_monotone

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "full_norm": self.full_norm,
            "subset_norms": list(self.subset_norms),
            "subset_cosines": list(self.subset_cosines),
            "norm_gap": self.norm_gap,
            "min_cosine": self.min_cosine,
            "strictly_monotone": self.strictly_monotone,
        }


def validate_k(shuffled_means) -> KValidationReport:
    """Leave-one-out comparison of K-subset means against the (K+1)-mean.

    ``shuffled_means`` holds K+1 shuffled epoch gradients. The norm of a mean
    of noisy vectors shrinks as more are averaged, so a small relative gap
    means K already resolves the content direction.
    """
    vecs = [np.asarray(s, dtype=np.float64).ravel() for s in shuffled_means]
    n = len(vecs)
    if n < 4:
        raise DegenerateInput(f"K-validation needs K >= 3, i.e. at least 4 shuffled epochs, got {n}")
    full = np.mean(vecs, axis=0)
    full_norm = M.norm(full)
    if full_norm == 0.0:
        raise DegenerateInput("mean shuffled gradient is zero")
    norms, cosines = [], []
    for i in range(n):
        sub = np.mean([v for j, v in enumerate(vecs) if j != i], axis=0)
        norms.append(M.norm(sub))
        c = M.cosine(sub, full)
        cosines.append(-1.0 if c is None else c)
    gap = (float(np.mean(norms)) - full_norm) / full_norm
    return KValidationReport(
        k=n - 1,
        full_norm=full_norm,
        subset_norms=norms,
        subset_cosines=cosines,
        norm_gap=gap,
        min_cosine=float(min(cosines)),
        strictly_monotone=all(full_norm < s for s in norms),
    )
