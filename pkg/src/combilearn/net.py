"""Fully connected networks with hand-written backprop, ADAM and checkpoints."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

CHECKPOINT_FORMAT = "combilearn-checkpoint"
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple  # input, hidden..., output
    dropout: float = 0.0
    output: str = "identity"  # or "tanh"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"bad layer widths {self.widths}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.output not in ("identity", "tanh"):
            raise ValueError(f"unknown output activation {self.output!r}")


class MLP:
    """ReLU network ``widths[0] -> ... -> widths[-1]``.

    Dropout (inverted scaling) follows every hidden activation in train
    mode. ``forward`` returns ``(output, cache)``; ``backward`` consumes the
    cache and returns ``(param_grads, input_grad)``.
    """

    def __init__(self, spec: MlpSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        self.params: list[np.ndarray] = []
        self.version = 0
        rng = rng if rng is not None else np.random.default_rng(0)
        w = spec.widths
        for i in range(len(w) - 1):
            fan_in = w[i]
            hidden = i < len(w) - 2
            bound = np.sqrt(6.0 / fan_in) if hidden else np.sqrt(1.0 / fan_in)
            self.params.append(rng.uniform(-bound, bound, (w[i], w[i + 1])))
            self.params.append(np.zeros(w[i + 1]))

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.spec.widths[0]:
            raise ValueError(f"expected input of shape (n, {self.spec.widths[0]}), got {x.shape}")
        drop = self.spec.dropout if train else 0.0
        if drop > 0.0 and rng is None:
            raise ValueError("train-mode dropout needs an rng")
        acts, pre, masks = [x], [], []
        h = x
        last = self.n_layers - 1
        for i in range(self.n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            pre.append(z)
            if i < last:
                h = np.maximum(z, 0.0)
                if drop > 0.0:
                    m = (rng.random(h.shape) >= drop) / (1.0 - drop)
                    h = h * m
                    masks.append(m)
                else:
                    masks.append(None)
            else:
                h = np.tanh(z) if self.spec.output == "tanh" else z
            acts.append(h)
        return h, {"acts": acts, "pre": pre, "masks": masks, "version": self.version}

    def predict(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, d_out):
        if cache.get("version") != self.version:
            raise StaleCacheError("cache was produced before the last parameter update")
        acts, pre, masks = cache["acts"], cache["pre"], cache["masks"]
        g = np.asarray(d_out, dtype=float)
        if self.spec.output == "tanh":
            g = g * (1.0 - acts[-1] ** 2)
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        for i in range(self.n_layers - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
            if i > 0:
                if masks[i - 1] is not None:
                    g = g * masks[i - 1]
                g = g * (pre[i - 1] > 0.0)
        return grads, g

    def bump(self) -> None:
        """Mark parameters as changed (invalidates outstanding caches)."""
        self.version += 1

    def copy_from(self, other: "MLP", tau: float = 1.0) -> None:
        """Polyak update ``p <- tau * other + (1 - tau) * p``."""
        for p, q in zip(self.params, other.params):
            if tau == 1.0:
                p[...] = q
            else:
                p *= 1.0 - tau
                p += tau * q
        self.bump()

    def get_state(self) -> dict:
        return {f"p{i}": p.copy() for i, p in enumerate(self.params)}

    def set_state(self, state: dict) -> None:
        for i, p in enumerate(self.params):
            src = np.asarray(state[f"p{i}"])
            if src.shape != p.shape:
                raise ValueError(f"parameter {i}: shape {src.shape} != {p.shape}")
            p[...] = src
        self.bump()


# ---------------------------------------------------------------------------
# ADAM

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.5
    decay_steps: int = 20_000
    lr_floor: float = 1e-5

    @classmethod
    def like(cls, params, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)

    def current_lr(self) -> float:
        """Multiplicative step decay every ``decay_steps`` updates, floored."""
        return max(self.lr_floor, self.lr * self.decay ** (self.t // self.decay_steps))

    def get_state(self) -> dict:
        out = {f"m{i}": m for i, m in enumerate(self.m)}
        out.update({f"v{i}": v for i, v in enumerate(self.v)})
        return out

    def hyper(self) -> dict:
        return {k: getattr(self, k) for k in ("t", "lr", "beta1", "beta2", "eps", "decay",
                                               "decay_steps", "lr_floor")}


def adam_step(state: AdamState, params: list, grads: list):
    """In-place ADAM update with bias correction. Returns ``(params, state)``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    lr = state.current_lr()
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# feature normalisation

class Normalizer(TransformerMixin, BaseEstimator):
    """Per-feature standardisation with an epsilon floor on the scale."""

    def __init__(self, eps: float = 1e-8):
        self.eps = eps

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), self.eps)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X)
        return (X - self.mean_) / self.scale_


def fit_normalizer(X) -> Normalizer:
    return Normalizer().fit(X)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, kind: str, nets: dict, meta: dict | None = None,
                    normalizer: Normalizer | None = None, optimizers: dict | None = None) -> None:
    """Write a self-describing ``.npz`` container."""
    arrays = {}
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": kind,
              "nets": {}, "optimizers": {}, "meta": meta or {}}
    for name, net in nets.items():
        header["nets"][name] = {"widths": list(net.spec.widths), "dropout": net.spec.dropout,
                                "output": net.spec.output}
        for k, v in net.get_state().items():
            arrays[f"net/{name}/{k}"] = v
    for name, opt in (optimizers or {}).items():
        header["optimizers"][name] = opt.hyper()
        for k, v in opt.get_state().items():
            arrays[f"opt/{name}/{k}"] = v
    if normalizer is not None:
        check_is_fitted(normalizer, "mean_")
        arrays["norm/mean"] = normalizer.mean_
        arrays["norm/scale"] = normalizer.scale_
        header["normalizer_eps"] = normalizer.eps
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


@dataclass
class Checkpoint:
    kind: str
    nets: dict
    meta: dict
    normalizer: Normalizer | None = None
    optimizers: dict = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {header.get('version')} "
                             f"!= supported {CHECKPOINT_VERSION}")
        nets = {}
        for name, spec in header["nets"].items():
            net = MLP(MlpSpec(tuple(spec["widths"]), spec["dropout"], spec["output"]))
            net.set_state({k.split("/")[-1]: data[k] for k in data.files
                           if k.startswith(f"net/{name}/")})
            nets[name] = net
        opts = {}
        for name, hyper in header["optimizers"].items():
            n = sum(1 for k in data.files if k.startswith(f"opt/{name}/m"))
            opts[name] = AdamState(m=[data[f"opt/{name}/m{i}"].copy() for i in range(n)],
                                   v=[data[f"opt/{name}/v{i}"].copy() for i in range(n)], **hyper)
        norm = None
        if "norm/mean" in data.files:
            norm = Normalizer(eps=header.get("normalizer_eps", 1e-8))
            norm.mean_ = data["norm/mean"].copy()
            norm.scale_ = data["norm/scale"].copy()
    return Checkpoint(header["kind"], nets, header["meta"], norm, opts)
