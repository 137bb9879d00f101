"""Feed-forward tanh networks: parameter store, Adam, checkpoints.

The same parameter vector backs two execution routes: a graph route that
builds the network as scalar nodes (needed wherever derivatives of
derivatives are taken symbolically) and the vectorized numpy route in
:mod:`potflow.backprop`.  tanh is the only activation: the induced
velocity fields must be smooth.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph

MAGIC = b"PFC1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Structured parse failure; carries the byte offset of the problem."""

    def __init__(self, msg: str, offset: int | None = None):
        super().__init__(msg if offset is None else f"{msg} (at byte {offset})")
        self.offset = offset


class OptimizerError(RuntimeError):
    """Raised when an update step is rejected (non-finite gradient)."""


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden_layers: int
    hidden_width: int
    out_dim: int = 1

    def __post_init__(self):
        for name in ("in_dim", "hidden_width", "out_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        # zero hidden layers is a plain affine map (exact-oracle networks)
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be >= 0")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer, input to output."""
        dims = [self.in_dim] + [self.hidden_width] * self.hidden_layers + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in self.layer_dims)


class ParamStore:
    """Flat float64 parameter vector with (layer, row, col) views.

    Layout per affine layer: the weight matrix row-major, then the bias.
    Views returned by :meth:`weight` / :meth:`bias` alias the flat vector,
    so in-place optimizer updates are visible everywhere.
    """

    def __init__(self, spec: MlpSpec, theta: np.ndarray | None = None):
        self.spec = spec
        if theta is None:
            theta = np.zeros(spec.n_params)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (spec.n_params,):
            raise ValueError(f"theta must have shape ({spec.n_params},)")
        self.theta = theta
        self._offsets = []
        off = 0
        for fi, fo in spec.layer_dims:
            self._offsets.append((off, off + fi * fo, off + (fi + 1) * fo))
            off = self._offsets[-1][2]

    @property
    def n_layers(self) -> int:
        return len(self._offsets)

    def weight(self, layer: int) -> np.ndarray:
        w0, w1, _ = self._offsets[layer]
        fi, fo = self.spec.layer_dims[layer]
        return self.theta[w0:w1].reshape(fi, fo)

    def bias(self, layer: int) -> np.ndarray:
        _, w1, b1 = self._offsets[layer]
        return self.theta[w1:b1]

    def copy(self) -> "ParamStore":
        return ParamStore(self.spec, self.theta.copy())


def init(spec: MlpSpec, seed: int) -> ParamStore:
    """Glorot-uniform weights, zero biases, deterministic under seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    store = ParamStore(spec)
    for l, (fi, fo) in enumerate(spec.layer_dims):
        bound = np.sqrt(6.0 / (fi + fo))
        store.weight(l)[:] = rng.uniform(-bound, bound, size=(fi, fo))
        store.bias(l)[:] = 0.0
    return store


# -- graph route --------------------------------------------------------------


def register_params(g: Graph, store: ParamStore) -> list[int]:
    """Create one leaf variable per parameter; ids align with the flat vector."""
    return [g.var() for _ in range(store.theta.size)]


def param_bindings(theta_ids: list[int], store: ParamStore) -> dict[int, float]:
    return {i: v for i, v in zip(theta_ids, store.theta)}


def forward(spec: MlpSpec, theta_ids: list[int], g: Graph,
            input_ids: list[int]) -> list[int]:
    """Build the network as graph nodes over input and parameter leaves."""
    if len(input_ids) != spec.in_dim:
        raise ValueError(f"expected {spec.in_dim} inputs, got {len(input_ids)}")
    store = ParamStore(spec)  # offsets only
    acts = list(input_ids)
    n_layers = store.n_layers
    for l, (fi, fo) in enumerate(spec.layer_dims):
        w0, w1, b1 = store._offsets[l]
        out_nodes = []
        for j in range(fo):
            s = theta_ids[w1 + j]  # bias
            for i in range(fi):
                s = g.add(s, g.mul(theta_ids[w0 + i * fo + j], acts[i]))
            out_nodes.append(s if l == n_layers - 1 else g.tanh(s))
        acts = out_nodes
    return acts


# -- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-5
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-5, beta1: float = 0.5,
              beta2: float = 0.9, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0, lr=lr,
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(store: ParamStore, grad: np.ndarray,
              state: AdamState) -> tuple[ParamStore, AdamState]:
    """Bias-corrected Adam update, in place on ``store`` and ``state``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != store.theta.shape:
        raise ValueError("gradient length mismatch")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise OptimizerError(
            f"non-finite gradient at step {state.t + 1} (first bad index {bad})")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    store.theta -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return store, state


# -- binary container ----------------------------------------------------------
#
# Layout (little-endian):
#   magic "PFC1" | u32 version | u16 kind-len | kind utf8
#   | u32 header-len | header json utf8
#   | u32 array-count | per array: u16 name-len | name | u64 byte-len | float64 data


def _write_container(path, kind: str, header: dict,
                     arrays: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    kb = kind.encode()
    buf.write(struct.pack("<H", len(kb)))
    buf.write(kb)
    hb = json.dumps(header, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(hb)))
    buf.write(hb)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        nb = name.encode()
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<Q", len(data)))
        buf.write(data)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _read_exact(f, n: int, what: str):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated file while reading {what}", f.tell())
    return data


def _read_container(path, expect_kind: str | None = None):
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported container version {version}, expected {FORMAT_VERSION}", 4)
        (klen,) = struct.unpack("<H", _read_exact(f, 2, "kind length"))
        kind = _read_exact(f, klen, "kind").decode()
        if expect_kind is not None and kind != expect_kind:
            raise CheckpointError(f"container kind {kind!r}, expected {expect_kind!r}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        try:
            header = json.loads(_read_exact(f, hlen, "header").decode())
        except json.JSONDecodeError as e:
            raise CheckpointError(f"malformed header json: {e}", f.tell()) from e
        (count,) = struct.unpack("<I", _read_exact(f, 4, "array count"))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2, "array name length"))
            name = _read_exact(f, nlen, "array name").decode()
            (blen,) = struct.unpack("<Q", _read_exact(f, 8, "array byte length"))
            if blen % 8:
                raise CheckpointError(f"array {name!r} byte length not float64-aligned",
                                      f.tell())
            arrays[name] = np.frombuffer(_read_exact(f, blen, f"array {name!r}"),
                                         dtype="<f8").copy()
        return kind, header, arrays


def save_checkpoint(store: ParamStore, state: AdamState, path) -> None:
    header = {
        "spec": {"in_dim": store.spec.in_dim, "hidden_layers": store.spec.hidden_layers,
                 "hidden_width": store.spec.hidden_width, "out_dim": store.spec.out_dim},
        "adam": {"t": state.t, "lr": state.lr, "beta1": state.beta1,
                 "beta2": state.beta2, "eps": state.eps},
    }
    _write_container(path, "mlp-checkpoint", header,
                     {"theta": store.theta, "m": state.m, "v": state.v})


def load_checkpoint(path) -> tuple[ParamStore, AdamState]:
    _, header, arrays = _read_container(path, expect_kind="mlp-checkpoint")
    spec = MlpSpec(**header["spec"])
    for name in ("theta", "m", "v"):
        if name not in arrays:
            raise CheckpointError(f"missing array {name!r}")
        if arrays[name].size != spec.n_params:
            raise CheckpointError(
                f"array {name!r} has {arrays[name].size} entries, "
                f"spec implies {spec.n_params}")
    store = ParamStore(spec, arrays["theta"])
    a = header["adam"]
    state = AdamState(m=arrays["m"], v=arrays["v"], t=int(a["t"]), lr=a["lr"],
                      beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
    return store, state
