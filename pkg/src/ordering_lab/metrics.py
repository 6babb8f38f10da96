"""Gradient, weight, path and optimizer metrics over flat parameter vectors.

All arithmetic is done in float64. Quantities that are undefined for the
given input (cosine with a zero vector, ratio over a zero norm) come back as
``None`` so sinks write an explicit null rather than a misleading zero.
"""

from __future__ import annotations

import math

import numpy as np

from .params import ParamLayout

LAGS = (1, 2, 5, 10, 20, 50)
EFFICIENCY_WINDOWS = (2, 5, 10, 20, 50)


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).ravel()


def norm(x) -> float:
    x = _f64(x)
    return float(math.sqrt(np.dot(x, x)))


def cosine(u, v) -> float | None:
    u, v = _f64(u), _f64(v)
    nu, nv = math.sqrt(np.dot(u, u)), math.sqrt(np.dot(v, v))
    if nu == 0.0 or nv == 0.0:
        return None
    return float(min(1.0, max(-1.0, np.dot(u, v) / (nu * nv))))


def ratio(num: float, den: float) -> float | None:
    return None if den == 0.0 else float(num / den)


def mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def per_layer_norms(vec, layout: ParamLayout) -> dict[str, float]:
    vec = _f64(vec)
    return {name: norm(vec[s]) for name, s in layout.slices()}


def grad_norm_metrics(grad, layout: ParamLayout) -> dict:
    g = _f64(grad)
    out = {
        "total_norm": norm(g),
        "max_component": float(np.abs(g).max()) if g.size else 0.0,
        "mean_component": float(np.abs(g).mean()) if g.size else 0.0,
    }
    for name, value in per_layer_norms(g, layout).items():
        out[f"norm_{name}"] = value
    return out


def consecutive_cossim(g_t, g_prev) -> dict:
    c = cosine(g_t, g_prev)
    return {"cos_sim": c, "angle_degrees": None if c is None else math.degrees(math.acos(c))}


def singular_values(w: np.ndarray) -> np.ndarray:
    """Singular values (descending) from the eigenvalues of the smaller Gram matrix."""
    w = np.asarray(w, dtype=np.float64)
    gram = w.T @ w if w.shape[0] >= w.shape[1] else w @ w.T
    ev = np.linalg.eigvalsh(gram)
    return np.sqrt(np.clip(ev, 0.0, None))[::-1]


def effective_rank_ratio(sv: np.ndarray) -> float | None:
    """(sum s)^2 / sum s^2."""
    s2 = float(np.dot(sv, sv))
    return None if s2 == 0.0 else float(sv.sum() ** 2 / s2)


def weight_tracking(params, grad, layout: ParamLayout) -> dict:
    p, g = _f64(params), _f64(grad)
    out: dict = {}
    norms, tops, ranks, aligns = [], [], [], []
    for (name, s), shape in zip(layout.slices(), layout.shapes):
        w = p[s]
        wn = norm(w)
        norms.append(wn)
        out[f"weight_norm/{name}"] = wn
        if len(shape) == 2:
            sv = singular_values(w.reshape(shape))
            out[f"top_sv/{name}"] = float(sv[0])
            out[f"effective_rank/{name}"] = effective_rank_ratio(sv)
            tops.append(float(sv[0]))
            ranks.append(out[f"effective_rank/{name}"])
        a = cosine(g[s], w)
        out[f"grad_weight_align/{name}"] = a
        aligns.append(a)
    out["total_weight_norm"] = norm(p)
    out["mean_weight_norm"] = float(np.mean(norms))
    out["mean_top_sv"] = float(np.mean(tops)) if tops else None
    out["max_top_sv"] = float(np.max(tops)) if tops else None
    out["mean_effective_rank"] = mean_defined(ranks)
    out["mean_grad_weight_align"] = mean_defined(aligns)
    return out


def parameter_delta(theta_new, theta_old) -> dict:
    new, old = _f64(theta_new), _f64(theta_old)
    absolute = norm(new - old)
    return {"relative_delta": ratio(absolute, norm(old)), "absolute_delta": absolute, "param_norm": norm(new)}


def path_metrics(trajectory) -> dict:
    """Path length, net displacement and their ratio over a parameter trajectory."""
    pts = [_f64(t) for t in trajectory]
    if not pts:
        raise ValueError("path metrics need at least one parameter vector")
    length = sum(norm(b - a) for a, b in zip(pts, pts[1:]))
    net = norm(pts[-1] - pts[0])
    return {"path_length": length, "net_displacement": net, "path_efficiency": ratio(net, length)}


class PathTracker:
    """Running form of :func:`path_metrics`; holds only theta_0 and the last point."""

    def __init__(self, theta0):
        self.theta0 = _f64(theta0).copy()
        self.prev = self.theta0.copy()
        self.length = 0.0

    def update(self, theta) -> dict:
        t = _f64(theta)
        self.length += norm(t - self.prev)
        self.prev = t.copy()
        net = norm(t - self.theta0)
        return {"path_length": self.length, "net_displacement": net, "path_efficiency": ratio(net, self.length)}

    def state_dict(self) -> dict:
        return {"theta0": self.theta0, "prev": self.prev, "length": self.length}

    @classmethod
    def from_state(cls, state: dict) -> PathTracker:
        obj = cls.__new__(cls)
        obj.theta0 = np.asarray(state["theta0"], dtype=np.float64)
        obj.prev = np.asarray(state["prev"], dtype=np.float64)
        obj.length = float(state["length"])
        return obj


class GradientWindow:
    """Ring buffer of the last ``capacity`` per-batch gradients (stored as f32)."""

    def __init__(self, size: int, capacity: int = 50):
        self.capacity = capacity
        self.buf = np.zeros((capacity, size), dtype=np.float32)
        self.steps = np.full(capacity, -1, dtype=np.int64)
        self.count = 0
        self.head = 0

    def push(self, step: int, grad) -> None:
        self.buf[self.head] = grad
        self.steps[self.head] = step
        self.head = (self.head + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def __len__(self) -> int:
        return self.count

    def ordered(self) -> tuple[np.ndarray, np.ndarray]:
        """(steps, gradients) oldest first."""
        idx = (self.head - self.count + np.arange(self.count)) % self.capacity
        return self.steps[idx], self.buf[idx]

    def state_dict(self) -> dict:
        steps, grads = self.ordered()
        return {"capacity": self.capacity, "steps": steps, "grads": grads}

    @classmethod
    def from_state(cls, state: dict, size: int) -> GradientWindow:
        w = cls(size, int(state["capacity"]))
        for s, g in zip(np.asarray(state["steps"]), np.asarray(state["grads"]).reshape(-1, size)):
            w.push(int(s), g)
        return w


def batch_dynamics(window: GradientWindow | np.ndarray) -> dict:
    """Lag cosines, accumulation efficiencies and SV-entropy rank of a gradient window.

    Everything is derived from the float64 Gram matrix of the window, oldest
    row first. Lags and windows longer than the history are omitted.
    """
    grads = window.ordered()[1] if isinstance(window, GradientWindow) else np.asarray(window)
    n = len(grads)
    if n == 0:
        return {}
    x = grads.astype(np.float64)
    gram = x @ x.T
    norms = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    out: dict = {}
    lag_values = []
    for lag in LAGS:
        if n <= lag:
            continue
        cos = []
        for i in range(lag, n):
            den = norms[i] * norms[i - lag]
            if den > 0:
                cos.append(float(np.clip(gram[i, i - lag] / den, -1.0, 1.0)))
        val = float(np.mean(cos)) if cos else None
        out[f"lag_{lag}"] = val
        lag_values.append(val)
    out["autocorrelation_mean"] = mean_defined(lag_values)
    for w in EFFICIENCY_WINDOWS:
        if n < w:
            continue
        sub = gram[n - w:, n - w:]
        total = float(norms[n - w:].sum())
        out[f"efficiency_{w}"] = ratio(math.sqrt(max(float(sub.sum()), 0.0)), total)
    ev = np.clip(np.linalg.eigvalsh(gram), 0.0, None)
    tot = float(ev.sum())
    if tot > 0:
        pk = ev[ev > 0] / tot
        out["effective_rank"] = float(math.exp(-np.sum(pk * np.log(pk))))
        out["top1_variance"] = float(ev.max() / tot)
    else:
        out["effective_rank"] = None
        out["top1_variance"] = None
    return out


def projection_to_solution(vector, theta, theta_ref, layout: ParamLayout, descent: bool = True,
                           prefix: str = "grad") -> dict:
    """Cosine of ``-vector`` (or ``vector``) with ``theta_ref - theta``, whole-model and per layer."""
    v = _f64(vector)
    if descent:
        v = -v
    delta = _f64(theta_ref) - _f64(theta)
    out = {f"overall_{prefix}_cossim_to_solution": cosine(v, delta)}
    layer_vals = []
    for name, s in layout.slices():
        c = cosine(v[s], delta[s])
        out[f"{prefix}_cossim_to_solution/{name}"] = c
        layer_vals.append(c)
    out[f"mean_layer_{prefix}_cossim_to_solution"] = mean_defined(layer_vals)
    return out


def adam_introspect(m, v_hat, grad, update, lr: float, eps: float, theta=None, theta_ref=None) -> dict:
    """Tier-1 optimizer metrics, plus Tier-2 solution cosines when a reference is given.

    ``update`` must exclude the decoupled weight-decay term.
    """
    g, u = _f64(grad), _f64(update)
    un = norm(u)
    gn = norm(g)
    if un > 0 and gn > 0:
        proj = (np.dot(u, g) / (gn * gn)) * g
        deflection = norm(u - proj) / un
    else:
        deflection = None
    eta = lr / (np.sqrt(_f64(v_hat)) + eps)
    mean_eta = float(eta.mean())
    out = {
        "momentum_grad_cossim": cosine(m, g),
        "amplification_ratio": ratio(un, lr * gn),
        "update_deflection": deflection,
        "effective_lr_cv": ratio(float(eta.std()), mean_eta),
    }
    if theta_ref is not None:
        delta = _f64(theta_ref) - _f64(theta)
        uc = cosine(u, delta)
        # the descent direction is -g
        gc = cosine(-g, delta)
        out["momentum_solution_cossim"] = cosine(-_f64(m), delta)
        out["update_solution_cossim"] = uc
        out["grad_solution_cossim"] = gc
        out["optimizer_solution_amplification"] = None if uc is None or gc is None else uc - gc
    return out
