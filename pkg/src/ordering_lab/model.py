"""Pre-LayerNorm transformer encoder over operand pairs, with exact backprop.

The architecture is closed (two tokens, mean pooling, linear decoder), so the
backward pass is written out by hand rather than going through an autodiff
framework. Linear weights are stored as ``(in, out)`` so activations are
right-multiplied.

Layer ``i`` computes::

    x = x + drop(attn(ln1(x)))          # dropout also on attention probs
    x = x + drop(W2 drop(relu(W1 ln2(x))))

and the head is ``decoder(mean(x over the two positions))``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rngmod
from .params import ParameterVector, ParamLayout

LN_EPS = 1e-5
INIT_SCHEME = "fan_in_uniform/v1"
DTYPES = {"f32": np.float32, "f64": np.float64}


class NumericFailure(FloatingPointError):
    """Non-finite loss or update; ``layer`` names where it first appeared."""

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message if layer is None else f"{message} (first non-finite at {layer})")
        self.layer = layer


@dataclass(frozen=True)
class ModelConfig:
    p: int
    d_model: int = 128
    n_heads: int = 4
    d_ff: int | None = None
    n_layers: int = 1
    dropout: float = 0.1
    precision: str = "f32"

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def validate(self) -> list[str]:
        errors = []
        if self.p < 2:
            errors.append(f"model.p must be >= 2, got {self.p}")
        if self.d_model <= 0 or self.n_heads <= 0 or self.d_model % self.n_heads:
            errors.append(f"model.d_model ({self.d_model}) must be a positive multiple of n_heads ({self.n_heads})")
        if self.ff_dim <= 0:
            errors.append(f"model.d_ff must be positive, got {self.ff_dim}")
        if self.n_layers < 1:
            errors.append(f"model.n_layers must be >= 1, got {self.n_layers}")
        if not 0.0 <= self.dropout < 1.0:
            errors.append(f"model.dropout must lie in [0, 1), got {self.dropout}")
        if self.precision not in DTYPES:
            errors.append(f"model.precision must be one of {sorted(DTYPES)}, got {self.precision!r}")
        return errors

    def to_dict(self) -> dict:
        return asdict(self)


def build_layout(cfg: ModelConfig) -> ParamLayout:
    d, f, p = cfg.d_model, cfg.ff_dim, cfg.p
    pairs: list[tuple[str, tuple[int, ...]]] = [
        ("token_embedding", (p, d)),
        ("positional_embedding", (2, d)),
    ]
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        pairs += [
            (pre + "norm1.weight", (d,)),
            (pre + "norm1.bias", (d,)),
            (pre + "self_attn.in_proj_weight", (d, 3 * d)),
            (pre + "self_attn.in_proj_bias", (3 * d,)),
            (pre + "self_attn.out_proj.weight", (d, d)),
            (pre + "self_attn.out_proj.bias", (d,)),
            (pre + "norm2.weight", (d,)),
            (pre + "norm2.bias", (d,)),
            (pre + "linear1.weight", (d, f)),
            (pre + "linear1.bias", (f,)),
            (pre + "linear2.weight", (f, d)),
            (pre + "linear2.bias", (d,)),
        ]
    pairs += [("decoder.weight", (d, p)), ("decoder.bias", (p,))]
    return ParamLayout.from_pairs(pairs)


def init_params(cfg: ModelConfig, init_seed: int) -> ParameterVector:
    """Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Embeddings are linear maps from one-hot inputs (fan_in = 1). LayerNorm
    gains start at one; LayerNorm and attention biases at zero; feedforward
    and decoder biases use their layer's fan-in bound.
    """
    layout = build_layout(cfg)
    params = ParameterVector(layout, dtype=cfg.dtype)
    gen = rngmod.stream(init_seed, "init")
    for name, view in params.segments():
        if name.endswith("norm1.weight") or name.endswith("norm2.weight"):
            view[...] = 1.0
            continue
        if "norm" in name or ("self_attn" in name and name.endswith("bias")):
            continue
        if name in ("token_embedding", "positional_embedding"):
            fan_in = 1
        elif name.endswith("weight"):
            fan_in = view.shape[0]
        else:
            weight = name[: -len("bias")] + "weight"
            fan_in = layout.shapes[layout.index(weight)][0]
        bound = 1.0 / np.sqrt(fan_in)
        view[...] = gen.uniform(-bound, bound, size=view.shape)
    return params


def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, xhat, rstd


def _layernorm_back(du, xhat, rstd, g):
    dxhat = du * g
    return rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))


class Transformer:
    """Stateless forward/backward for one :class:`ModelConfig`."""

    def __init__(self, cfg: ModelConfig):
        errors = cfg.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self.cfg = cfg
        self.layout = build_layout(cfg)
        self.head_dim = cfg.d_model // cfg.n_heads
        self.scale = 1.0 / np.sqrt(self.head_dim)

    def init(self, seed: int) -> ParameterVector:
        return init_params(self.cfg, seed)

    # -- forward ---------------------------------------------------------

    def _masks(self, gen, n, dtype):
        r = self.cfg.dropout
        if gen is None or r == 0.0:
            return None
        keep = dtype.type(1.0 / (1.0 - r))
        d, f, H = self.cfg.d_model, self.cfg.ff_dim, self.cfg.n_heads
        out = []
        for _ in range(self.cfg.n_layers):
            layer = []
            for shape in ((n, H, 2, 2), (n, 2, d), (n, 2, f), (n, 2, d)):
                layer.append((gen.random(shape, dtype=np.float32) >= r).astype(dtype) * keep)
            out.append(layer)
        return out

    def _run(self, params: ParameterVector, a, b, gen, keep_cache: bool):
        cfg, H, dh = self.cfg, self.cfg.n_heads, self.head_dim
        d = cfg.d_model
        P = params.layout.views(params.flat)
        dtype = params.flat.dtype
        n = len(a)
        masks = self._masks(gen, n, dtype)
        x = np.empty((n, 2, d), dtype=dtype)
        x[:, 0] = P["token_embedding"][a]
        x[:, 1] = P["token_embedding"][b]
        x += P["positional_embedding"]
        caches = []
        for i in range(cfg.n_layers):
            pre = f"layers.{i}."
            mk = masks[i] if masks else None
            u, xhat1, rstd1 = _layernorm(x, P[pre + "norm1.weight"], P[pre + "norm1.bias"])
            qkv = u.reshape(-1, d) @ P[pre + "self_attn.in_proj_weight"] + P[pre + "self_attn.in_proj_bias"]
            qkv = qkv.reshape(n, 2, 3, H, dh).transpose(2, 0, 3, 1, 4)  # (3, n, H, 2, dh)
            q, k, v = qkv[0], qkv[1], qkv[2]
            s = (q @ k.transpose(0, 1, 3, 2)) * dtype.type(self.scale)
            s -= s.max(-1, keepdims=True)
            att = np.exp(s)
            att /= att.sum(-1, keepdims=True)
            att_d = att * mk[0] if mk else att
            o = (att_d @ v).transpose(0, 2, 1, 3).reshape(-1, d)
            z = (o @ P[pre + "self_attn.out_proj.weight"] + P[pre + "self_attn.out_proj.bias"]).reshape(n, 2, d)
            x1 = x + (z * mk[1] if mk else z)
            w, xhat2, rstd2 = _layernorm(x1, P[pre + "norm2.weight"], P[pre + "norm2.bias"])
            f1 = w.reshape(-1, d) @ P[pre + "linear1.weight"] + P[pre + "linear1.bias"]
            r = np.maximum(f1, 0)
            r_d = r * mk[2].reshape(r.shape) if mk else r
            f2 = (r_d @ P[pre + "linear2.weight"] + P[pre + "linear2.bias"]).reshape(n, 2, d)
            x2 = x1 + (f2 * mk[3] if mk else f2)
            if keep_cache:
                caches.append(dict(u=u, xhat1=xhat1, rstd1=rstd1, q=q, k=k, v=v, att=att, att_d=att_d, o=o,
                                   w=w, xhat2=xhat2, rstd2=rstd2, f1=f1, r_d=r_d, masks=mk, x=x, x1=x1))
            x = x2
        pooled = x.mean(1)
        logits = pooled @ P["decoder.weight"] + P["decoder.bias"]
        return logits, pooled, caches

    def forward(self, params: ParameterVector, a, b, gen: np.random.Generator | None = None) -> np.ndarray:
        """Logits of shape (n, p). ``gen`` given means train mode (dropout)."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        self._check_range(a, b)
        return self._run(params, a, b, gen, keep_cache=False)[0]

    def _check_range(self, a, b):
        p = self.cfg.p
        if a.size and (a.min() < 0 or a.max() >= p or b.min() < 0 or b.max() >= p):
            raise ValueError(f"operands must lie in [0, {p})")

    # -- loss and gradient ----------------------------------------------

    def loss_and_grad(self, params: ParameterVector, a, b, y, gen: np.random.Generator | None = None,
                      grad_out: np.ndarray | None = None) -> tuple[float, ParameterVector]:
        """Mean cross-entropy and its exact gradient.

        With ``gen`` the dropout masks are sampled from it once and shared by
        forward and backward, so the gradient is that of the sampled loss.
        """
        cfg, H, dh = self.cfg, self.cfg.n_heads, self.head_dim
        d = cfg.d_model
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        self._check_range(a, b)
        n = len(a)
        if n == 0:
            raise ValueError("empty batch")
        dtype = params.flat.dtype
        logits, pooled, caches = self._run(params, a, b, gen, keep_cache=True)

        shifted = logits - logits.max(1, keepdims=True)
        expd = np.exp(shifted)
        sumexp = expd.sum(1, keepdims=True)
        logp_y = shifted[np.arange(n), y] - np.log(sumexp[:, 0])
        loss = float(-logp_y.astype(np.float64).mean())
        if not np.isfinite(loss):
            raise NumericFailure("non-finite loss", self._locate_nonfinite(params, caches, logits))

        grad = ParameterVector(params.layout, grad_out if grad_out is not None else np.zeros(params.layout.size, dtype))
        G = grad.layout.views(grad.flat)
        P = params.layout.views(params.flat)

        dlogits = expd / sumexp
        dlogits[np.arange(n), y] -= 1.0
        dlogits *= dtype.type(1.0 / n)
        np.matmul(pooled.T, dlogits, out=G["decoder.weight"])
        G["decoder.bias"][...] = dlogits.sum(0)
        dpooled = dlogits @ P["decoder.weight"].T
        dx = np.empty((n, 2, d), dtype=dtype)
        dx[:, 0] = dpooled
        dx[:, 1] = dpooled
        dx *= dtype.type(0.5)

        for i in reversed(range(cfg.n_layers)):
            pre = f"layers.{i}."
            c = caches[i]
            mk = c["masks"]
            # feedforward block
            df2 = (dx * mk[3] if mk else dx).reshape(-1, d)
            np.matmul(c["r_d"].T, df2, out=G[pre + "linear2.weight"])
            G[pre + "linear2.bias"][...] = df2.sum(0)
            dr = df2 @ P[pre + "linear2.weight"].T
            if mk:
                dr *= mk[2].reshape(dr.shape)
            dr *= c["f1"] > 0
            w2 = c["w"].reshape(-1, d)
            np.matmul(w2.T, dr, out=G[pre + "linear1.weight"])
            G[pre + "linear1.bias"][...] = dr.sum(0)
            dw = (dr @ P[pre + "linear1.weight"].T).reshape(n, 2, d)
            G[pre + "norm2.weight"][...] = (dw * c["xhat2"]).sum((0, 1))
            G[pre + "norm2.bias"][...] = dw.sum((0, 1))
            dx1 = dx + _layernorm_back(dw, c["xhat2"], c["rstd2"], P[pre + "norm2.weight"])
            # attention block
            dz = (dx1 * mk[1] if mk else dx1).reshape(-1, d)
            np.matmul(c["o"].T, dz, out=G[pre + "self_attn.out_proj.weight"])
            G[pre + "self_attn.out_proj.bias"][...] = dz.sum(0)
            do = (dz @ P[pre + "self_attn.out_proj.weight"].T).reshape(n, 2, H, dh).transpose(0, 2, 1, 3)
            datt_d = do @ c["v"].transpose(0, 1, 3, 2)
            dv = c["att_d"].transpose(0, 1, 3, 2) @ do
            datt = datt_d * mk[0] if mk else datt_d
            att = c["att"]
            ds = att * (datt - (datt * att).sum(-1, keepdims=True))
            ds *= dtype.type(self.scale)
            dq = ds @ c["k"]
            dk = ds.transpose(0, 1, 3, 2) @ c["q"]
            dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(-1, 3 * d)
            u2 = c["u"].reshape(-1, d)
            np.matmul(u2.T, dqkv, out=G[pre + "self_attn.in_proj_weight"])
            G[pre + "self_attn.in_proj_bias"][...] = dqkv.sum(0)
            du = (dqkv @ P[pre + "self_attn.in_proj_weight"].T).reshape(n, 2, d)
            G[pre + "norm1.weight"][...] = (du * c["xhat1"]).sum((0, 1))
            G[pre + "norm1.bias"][...] = du.sum((0, 1))
            dx = dx1 + _layernorm_back(du, c["xhat1"], c["rstd1"], P[pre + "norm1.weight"])

        G["positional_embedding"][...] = dx.sum(0)
        demb = G["token_embedding"]
        demb[...] = 0
        np.add.at(demb, a, dx[:, 0])
        np.add.at(demb, b, dx[:, 1])
        return loss, grad

    def _locate_nonfinite(self, params, caches, logits) -> str:
        for name, view in params.segments():
            if not np.all(np.isfinite(view)):
                return name
        for i, c in enumerate(caches):
            for key in ("u", "att", "o", "w", "f1"):
                if not np.all(np.isfinite(c[key])):
                    return f"layers.{i}.{key}"
        return "decoder"

    # -- evaluation ------------------------------------------------------

    def predict(self, params: ParameterVector, a, b, chunk: int = 4096) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        out = np.empty(len(a), dtype=np.int64)
        for s in range(0, len(a), chunk):
            # argmax returns the first maximal index: ties go to the lowest class
            out[s:s + chunk] = self.forward(params, a[s:s + chunk], b[s:s + chunk]).argmax(1)
        return out

    def accuracy(self, params: ParameterVector, a, b, y) -> float:
        if len(a) == 0:
            raise ValueError("accuracy of an empty example list is undefined")
        return float(np.mean(self.predict(params, a, b) == np.asarray(y)))


def forward(params: ParameterVector, cfg: ModelConfig, a, b, gen=None) -> np.ndarray:
    return Transformer(cfg).forward(params, a, b, gen)


def loss_and_grad(params: ParameterVector, cfg: ModelConfig, a, b, y, gen=None):
    return Transformer(cfg).loss_and_grad(params, a, b, y, gen)


def accuracy(params: ParameterVector, cfg: ModelConfig, a, b, y) -> float:
    return Transformer(cfg).accuracy(params, a, b, y)
