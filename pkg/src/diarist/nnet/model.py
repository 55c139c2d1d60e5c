"""Recurrent sequence models for frame labeling and chunk embedding.

One architecture serves both uses: stacked bidirectional recurrent
layers (lstm, gru or plain tanh cells), then either a per-frame softmax
head over K classes (no pooling) or mean+std temporal pooling followed
by feed-forward layers and a unit-normalized embedding head.

Parameters live in a single flat float64 vector; named views slice into
it so the optimizer can update the flat vector in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CELL_GATES = {"lstm": 4, "gru": 3, "tanh": 1}


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    recurrent_layers: int = 1
    recurrent_units: int = 32
    cell: str = "lstm"
    pooling: str = "none"
    ff_layers: tuple[int, ...] = (32,)
    output_dim: int = 2

    def __post_init__(self):
        if self.cell not in CELL_GATES:
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.pooling not in ("none", "stats"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.recurrent_layers < 1:
            raise ValueError("need at least one recurrent layer")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        object.__setattr__(self, "ff_layers", tuple(self.ff_layers))

    @property
    def head(self) -> str:
        """'softmax' (frame classification) or 'embedding' (pooled)."""
        return "embedding" if self.pooling == "stats" else "softmax"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ff_layers"] = list(self.ff_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        d["ff_layers"] = tuple(d.get("ff_layers", ()))
        return cls(**d)

    def param_layout(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (name, shape) pairs defining the flat vector layout."""
        gates = CELL_GATES[self.cell]
        h = self.recurrent_units
        layout: list[tuple[str, tuple[int, ...]]] = []
        dim = self.input_dim
        for layer in range(self.recurrent_layers):
            for direction in ("fw", "bw"):
                prefix = f"rnn{layer}.{direction}"
                layout.append((f"{prefix}.W", (dim, gates * h)))
                layout.append((f"{prefix}.U", (h, gates * h)))
                layout.append((f"{prefix}.b", (gates * h,)))
            dim = 2 * h
        if self.pooling == "stats":
            dim = 2 * dim
        for i, width in enumerate(self.ff_layers):
            layout.append((f"ff{i}.W", (dim, width)))
            layout.append((f"ff{i}.b", (width,)))
            dim = width
        layout.append(("out.W", (dim, self.output_dim)))
        layout.append(("out.b", (self.output_dim,)))
        return layout

    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.param_layout())


def init_params(arch: ArchSpec, seed: int = 0) -> np.ndarray:
    """Glorot-uniform weights, zero biases, forget-gate bias 1 for lstm."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(arch.n_params())
    offset = 0
    h = arch.recurrent_units
    for name, shape in arch.param_layout():
        size = int(np.prod(shape))
        view = flat[offset : offset + size]
        if name.endswith(".b"):
            if arch.cell == "lstm" and name.startswith("rnn"):
                view.reshape(shape)[h : 2 * h] = 1.0
        else:
            fan_in, fan_out = shape[0], shape[1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            view[:] = rng.uniform(-bound, bound, size)
        offset += size
    return flat


class SequenceModel:
    """Architecture + flat parameter vector, with named parameter views."""

    def __init__(self, arch: ArchSpec, params: np.ndarray | None = None,
                 meta: dict | None = None, seed: int = 0):
        self.arch = arch
        if params is None:
            params = init_params(arch, seed)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (arch.n_params(),):
            raise ValueError(
                f"parameter vector has {params.shape}, arch needs ({arch.n_params()},)"
            )
        if not np.all(np.isfinite(params)):
            raise ValueError("non-finite parameters")
        self.params = params
        self.meta = dict(meta or {})
        self._views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in arch.param_layout():
            size = int(np.prod(shape))
            self._views[name] = self.params[offset : offset + size].reshape(shape)
            offset += size

    def view(self, name: str) -> np.ndarray:
        return self._views[name]

    def parameter_tensors(self) -> dict[str, Tensor]:
        """Leaf tensors wrapping the parameter views (shared memory)."""
        return {name: Tensor(v, requires_grad=True) for name, v in self._views.items()}

    def copy(self) -> "SequenceModel":
        return SequenceModel(self.arch, self.params.copy(), dict(self.meta))

    # -- forward -----------------------------------------------------------

    def _recurrent(self, x: Tensor, p: dict[str, Tensor]) -> Tensor:
        arch = self.arch
        h_units = arch.recurrent_units
        gates = CELL_GATES[arch.cell]
        batch, n_frames, _ = x.shape
        for layer in range(arch.recurrent_layers):
            dim = x.shape[-1]
            outputs = []
            for direction in ("fw", "bw"):
                prefix = f"rnn{layer}.{direction}"
                w, u, b = p[f"{prefix}.W"], p[f"{prefix}.U"], p[f"{prefix}.b"]
                flat = ad.reshape(x, (batch * n_frames, dim))
                z = ad.reshape(flat @ w + b, (batch, n_frames, gates * h_units))
                h = Tensor(np.zeros((batch, h_units)))
                c = Tensor(np.zeros((batch, h_units)))
                steps = range(n_frames)
                if direction == "bw":
                    steps = reversed(steps)
                hidden = []
                for t in steps:
                    z_t = ad.take(z, (slice(None), t))
                    if arch.cell == "lstm":
                        gate = z_t + h @ u
                        i = ad.sigmoid(ad.take(gate, (slice(None), slice(0, h_units))))
                        f = ad.sigmoid(
                            ad.take(gate, (slice(None), slice(h_units, 2 * h_units)))
                        )
                        g = ad.tanh(
                            ad.take(gate, (slice(None), slice(2 * h_units, 3 * h_units)))
                        )
                        o = ad.sigmoid(
                            ad.take(gate, (slice(None), slice(3 * h_units, 4 * h_units)))
                        )
                        c = f * c + i * g
                        h = o * ad.tanh(c)
                    elif arch.cell == "gru":
                        hu = h @ u
                        r = ad.sigmoid(
                            ad.take(z_t, (slice(None), slice(0, h_units)))
                            + ad.take(hu, (slice(None), slice(0, h_units)))
                        )
                        zz = ad.sigmoid(
                            ad.take(z_t, (slice(None), slice(h_units, 2 * h_units)))
                            + ad.take(hu, (slice(None), slice(h_units, 2 * h_units)))
                        )
                        n = ad.tanh(
                            ad.take(z_t, (slice(None), slice(2 * h_units, 3 * h_units)))
                            + r
                            * ad.take(hu, (slice(None), slice(2 * h_units, 3 * h_units)))
                        )
                        h = (1.0 - zz) * n + zz * h
                    else:
                        h = ad.tanh(z_t + h @ u)
                    hidden.append(h)
                if direction == "bw":
                    hidden.reverse()
                outputs.append(ad.stack(hidden, axis=1))
            x = ad.concat(outputs, axis=-1)
        return x

    def forward_tensor(self, x: Tensor, p: dict[str, Tensor]) -> Tensor:
        """Scores tensor: [B, T, K] row-softmax or [B, E] unit rows."""
        if x.ndim != 3:
            raise ValueError(f"expected [B, T, D] input, got shape {x.shape}")
        if x.shape[-1] != self.arch.input_dim:
            raise ValueError(
                f"input dimension {x.shape[-1]} != arch input_dim {self.arch.input_dim}"
            )
        z = self._recurrent(x, p)
        if self.arch.pooling == "stats":
            mu = ad.tmean(z, axis=1, keepdims=True)
            var = ad.tmean((z - mu) ** 2, axis=1)
            z = ad.concat([ad.reshape(mu, (x.shape[0], z.shape[-1])), ad.sqrt(var)],
                          axis=-1)
        for i in range(len(self.arch.ff_layers)):
            z = ad.tanh(z @ p[f"ff{i}.W"] + p[f"ff{i}.b"])
        logits = z @ p["out.W"] + p["out.b"]
        if self.arch.head == "softmax":
            return ad.softmax(logits, axis=-1)
        norm = ad.sqrt(ad.tsum(logits**2, axis=-1, keepdims=True))
        return logits / (norm + 1e-12)

    def logits_tensor(self, x: Tensor, p: dict[str, Tensor]) -> Tensor:
        """Pre-softmax logits (softmax head only), for cross-entropy training."""
        z = self._recurrent(x, p)
        for i in range(len(self.arch.ff_layers)):
            z = ad.tanh(z @ p[f"ff{i}.W"] + p[f"ff{i}.b"])
        return z @ p["out.W"] + p["out.b"]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Inference forward; accepts [T, D] or [B, T, D]."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        with ad.no_grad():
            out = self.forward_tensor(Tensor(x), self.parameter_tensors()).value
        return out[0] if squeeze else out

    def hidden(self, x: np.ndarray) -> np.ndarray:
        """Output of the recurrent stack, [B, T, 2H]; for diagnostics."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        with ad.no_grad():
            return self._recurrent(Tensor(x), self.parameter_tensors()).value

    def grad_vector(self, p: dict[str, Tensor]) -> np.ndarray:
        """Flatten .grad of the named tensors in layout order (zeros if unset)."""
        chunks = []
        for name, shape in self.arch.param_layout():
            g = p[name].grad
            chunks.append(
                np.zeros(int(np.prod(shape))) if g is None else g.ravel()
            )
        return np.concatenate(chunks)
