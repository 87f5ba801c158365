"""Residual-MLP function approximator with per-task heads.

Parameters live in a flat float32 vector with an explicit layout; all
arithmetic runs in float64 and results are rounded back to float32 only
when parameters are stored or published. The architecture is a torso
(input layer, residual blocks, embedding layer) shared by all heads, plus
a two-layer MLP head per task:

    h   = relu(W_in x + b_in)
    h  <- h + W2 relu(W1 h + b1) + b2          (per residual block)
    e   = relu(W_e h + b_e)                    (embedding, shared)
    y_k = W_o,k relu(W_h,k e + b_h,k) + b_o,k  (head k)

A residual block with zero weights is the identity on h, and the
embedding is independent of the head index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConfigurationError, FormatError, NumericError, ShapeError, UsageError

NETWORK_MAGIC = b"CHEFP1"
CONTAINER_MAGIC = b"CHEFC1"


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    torso_width: int
    residual_blocks: int
    embedding_dim: int
    head_hidden: int
    head_output_dim: int
    num_heads: int

    def validate(self) -> "NetworkSpec":
        for name in ("input_dim", "torso_width", "residual_blocks",
                     "embedding_dim", "head_hidden", "head_output_dim",
                     "num_heads"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigurationError(f"NetworkSpec.{name} must be >= 1, got {v}")
        return self

    @property
    def num_params(self) -> int:
        i, w, r, e, h, o, k = self.as_tuple()
        return w * i + w + r * (2 * w * w + 2 * w) + e * w + e + k * (h * e + h + o * h + o)

    def as_tuple(self) -> tuple[int, int, int, int, int, int, int]:
        return (self.input_dim, self.torso_width, self.residual_blocks,
                self.embedding_dim, self.head_hidden, self.head_output_dim,
                self.num_heads)


def small_spec(input_dim: int, head_output_dim: int, num_heads: int,
               head_hidden: int = 32) -> NetworkSpec:
    """SMALL preset: torso width 64, 2 residual blocks, embedding 32."""
    return NetworkSpec(input_dim, 64, 2, 32, head_hidden, head_output_dim,
                       num_heads).validate()


def large_spec(input_dim: int, head_output_dim: int, num_heads: int,
               head_hidden: int = 64) -> NetworkSpec:
    """LARGE preset: torso width 256, 3 residual blocks, embedding 128."""
    return NetworkSpec(input_dim, 256, 3, 128, head_hidden, head_output_dim,
                       num_heads).validate()


PRESETS = {"SMALL": small_spec, "LARGE": large_spec}


def layout_for(spec: NetworkSpec) -> tuple[tuple[str, int, tuple[int, ...]], ...]:
    """Ordered (name, offset, shape) covering the flat vector exactly."""
    i, w, r, e, h, o, k = spec.as_tuple()
    entries: list[tuple[str, int, tuple[int, ...]]] = []
    off = 0

    def add(name, shape):
        nonlocal off
        entries.append((name, off, shape))
        off += int(np.prod(shape))

    add("torso.in.w", (w, i))
    add("torso.in.b", (w,))
    for blk in range(r):
        add(f"torso.block{blk}.w1", (w, w))
        add(f"torso.block{blk}.b1", (w,))
        add(f"torso.block{blk}.w2", (w, w))
        add(f"torso.block{blk}.b2", (w,))
    add("torso.embed.w", (e, w))
    add("torso.embed.b", (e,))
    for head in range(k):
        add(f"head{head}.hid.w", (h, e))
        add(f"head{head}.hid.b", (h,))
        add(f"head{head}.out.w", (o, h))
        add(f"head{head}.out.b", (o,))
    assert off == spec.num_params
    return tuple(entries)


@dataclass
class ParameterVector:
    values: np.ndarray  # float32, flat
    layout: tuple[tuple[str, int, tuple[int, ...]], ...]

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def view(self, name: str) -> np.ndarray:
        for n, off, shape in self.layout:
            if n == name:
                return self.values[off:off + int(np.prod(shape))].reshape(shape)
        raise UsageError(f"no parameter named {name!r}")

    def values64(self) -> np.ndarray:
        return self.values.astype(np.float64)


def init_params(seed: int, spec: NetworkSpec) -> ParameterVector:
    """Fan-in-scaled uniform weights, zero biases; deterministic in seed."""
    spec.validate()
    rng = np.random.default_rng(seed)
    values = np.zeros(spec.num_params, dtype=np.float32)
    layout = layout_for(spec)
    for name, off, shape in layout:
        if name.endswith(".b"):
            continue
        fan_in = shape[1]
        bound = 1.0 / np.sqrt(fan_in)
        block = rng.uniform(-bound, bound, size=shape)
        values[off:off + block.size] = block.reshape(-1).astype(np.float32)
    return ParameterVector(values, layout)


def init_adam(spec: NetworkSpec, learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> "AdamState":
    n = spec.num_params
    return AdamState(np.zeros(n, dtype=np.float32), np.zeros(n, dtype=np.float32),
                     0, learning_rate, beta1, beta2, epsilon)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float


@dataclass
class NetCache:
    """Activation record from a forward pass, sufficient for backward."""
    spec: NetworkSpec
    head: int | None           # None for multi-head forward
    values64: np.ndarray       # parameter snapshot, float64
    x: np.ndarray              # [B, I]
    t1_pre: np.ndarray         # [B, W]
    h_ins: list[np.ndarray]    # per block, [B, W]
    m_pres: list[np.ndarray]   # per block, [B, W]
    h_final: np.ndarray        # [B, W]
    e_pre: np.ndarray          # [B, E]
    u_pres: list[np.ndarray]   # one entry per evaluated head, [B, H]
    single: bool               # caller passed a 1-D input

    @property
    def embedding(self) -> np.ndarray:
        return np.maximum(self.e_pre, 0.0)


def _slices(values64: np.ndarray, spec: NetworkSpec):
    out = {}
    for name, off, shape in layout_for(spec):
        out[name] = values64[off:off + int(np.prod(shape))].reshape(shape)
    return out


def _torso(p, spec, X):
    t1_pre = X @ p["torso.in.w"].T + p["torso.in.b"]
    h = np.maximum(t1_pre, 0.0)
    h_ins, m_pres = [], []
    for blk in range(spec.residual_blocks):
        h_ins.append(h)
        m_pre = h @ p[f"torso.block{blk}.w1"].T + p[f"torso.block{blk}.b1"]
        m_pres.append(m_pre)
        h = h + np.maximum(m_pre, 0.0) @ p[f"torso.block{blk}.w2"].T + p[f"torso.block{blk}.b2"]
    e_pre = h @ p["torso.embed.w"].T + p["torso.embed.b"]
    return t1_pre, h_ins, m_pres, h, e_pre


def _head(p, head, e):
    u_pre = e @ p[f"head{head}.hid.w"].T + p[f"head{head}.hid.b"]
    y = np.maximum(u_pre, 0.0) @ p[f"head{head}.out.w"].T + p[f"head{head}.out.b"]
    return u_pre, y


def _check_input(spec: NetworkSpec, input_):
    X = np.asarray(input_, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(
            f"input shape {np.asarray(input_).shape} incompatible with input_dim {spec.input_dim}")
    return X, single


def forward(params: ParameterVector, spec: NetworkSpec, input_, head: int):
    """Evaluate head `head`; returns (output, cache). Accepts [I] or [B, I]."""
    if not 0 <= head < spec.num_heads:
        raise ShapeError(f"head {head} out of range for num_heads {spec.num_heads}")
    X, single = _check_input(spec, input_)
    v64 = params.values64()
    p = _slices(v64, spec)
    t1_pre, h_ins, m_pres, h_final, e_pre = _torso(p, spec, X)
    u_pre, y = _head(p, head, np.maximum(e_pre, 0.0))
    cache = NetCache(spec, head, v64, X, t1_pre, h_ins, m_pres, h_final,
                     e_pre, [u_pre], single)
    return (y[0] if single else y), cache


def forward_multi(params: ParameterVector, spec: NetworkSpec, input_):
    """Evaluate every head on a shared torso pass; returns ([B, K, O], cache)."""
    X, single = _check_input(spec, input_)
    v64 = params.values64()
    p = _slices(v64, spec)
    t1_pre, h_ins, m_pres, h_final, e_pre = _torso(p, spec, X)
    e = np.maximum(e_pre, 0.0)
    u_pres, ys = [], []
    for head in range(spec.num_heads):
        u_pre, y = _head(p, head, e)
        u_pres.append(u_pre)
        ys.append(y)
    out = np.stack(ys, axis=1)
    cache = NetCache(spec, None, v64, X, t1_pre, h_ins, m_pres, h_final,
                     e_pre, u_pres, single)
    return (out[0] if single else out), cache


def forward_nocache(values64: np.ndarray, spec: NetworkSpec, x: np.ndarray,
                    head: int) -> np.ndarray:
    """Single-observation fast path used by rollouts (backend kernel)."""
    i, w, r, e, h, o, k = spec.as_tuple()
    return backend.forward_single(values64, i, w, r, e, h, o, k, head,
                                  np.ascontiguousarray(x, dtype=np.float64))


def backward(cache: NetCache, grad_output) -> np.ndarray:
    """Gradient of sum_b grad_output[b] . output[b] w.r.t. every parameter.

    Returns a flat float64 array shaped like the parameter vector; heads
    that were not evaluated receive zero gradient.
    """
    spec = cache.spec
    dY = np.asarray(grad_output, dtype=np.float64)
    if cache.single:
        dY = dY[None, ...]
    B = cache.x.shape[0]
    if cache.head is not None:
        if dY.shape != (B, spec.head_output_dim):
            raise UsageError(
                f"grad_output shape {np.asarray(grad_output).shape} does not match "
                f"cache batch {B} x head_output_dim {spec.head_output_dim}")
        per_head = {cache.head: dY}
    else:
        if dY.shape != (B, spec.num_heads, spec.head_output_dim):
            raise UsageError(
                f"grad_output shape {np.asarray(grad_output).shape} does not match "
                f"multi-head cache [{B}, {spec.num_heads}, {spec.head_output_dim}]")
        per_head = {k: dY[:, k, :] for k in range(spec.num_heads)}

    p = _slices(cache.values64, spec)
    grad = np.zeros(spec.num_params, dtype=np.float64)
    g = _slices(grad, spec)

    e = np.maximum(cache.e_pre, 0.0)
    de = np.zeros_like(e)
    for idx, (head, dy) in enumerate(sorted(per_head.items())):
        u_pre = cache.u_pres[idx if cache.head is None else 0]
        u = np.maximum(u_pre, 0.0)
        g[f"head{head}.out.w"][:] = dy.T @ u
        g[f"head{head}.out.b"][:] = dy.sum(axis=0)
        du_pre = (dy @ p[f"head{head}.out.w"]) * (u_pre > 0.0)
        g[f"head{head}.hid.w"][:] = du_pre.T @ e
        g[f"head{head}.hid.b"][:] = du_pre.sum(axis=0)
        de += du_pre @ p[f"head{head}.hid.w"]

    de_pre = de * (cache.e_pre > 0.0)
    g["torso.embed.w"][:] = de_pre.T @ cache.h_final
    g["torso.embed.b"][:] = de_pre.sum(axis=0)
    dh = de_pre @ p["torso.embed.w"]

    for blk in reversed(range(spec.residual_blocks)):
        m_pre = cache.m_pres[blk]
        m = np.maximum(m_pre, 0.0)
        h_in = cache.h_ins[blk]
        g[f"torso.block{blk}.w2"][:] = dh.T @ m
        g[f"torso.block{blk}.b2"][:] = dh.sum(axis=0)
        dm_pre = (dh @ p[f"torso.block{blk}.w2"]) * (m_pre > 0.0)
        g[f"torso.block{blk}.w1"][:] = dm_pre.T @ h_in
        g[f"torso.block{blk}.b1"][:] = dm_pre.sum(axis=0)
        dh = dh + dm_pre @ p[f"torso.block{blk}.w1"]

    dt1_pre = dh * (cache.t1_pre > 0.0)
    g["torso.in.w"][:] = dt1_pre.T @ cache.x
    g["torso.in.b"][:] = dt1_pre.sum(axis=0)
    return grad


def adam_update(params: ParameterVector, grads, state: AdamState):
    """Bias-corrected Adam step; pure (returns new params and state)."""
    g = np.asarray(grads, dtype=np.float64).reshape(-1)
    if g.shape != params.values.shape:
        raise ShapeError(f"gradient length {g.shape[0]} != parameter length "
                         f"{params.values.shape[0]}")
    bad = ~np.isfinite(g)
    if bad.any():
        idx = int(np.argmax(bad))
        name = "?"
        for n, off, shape in params.layout:
            if off <= idx < off + int(np.prod(shape)):
                name = n
                break
        raise NumericError(f"non-finite gradient in {name} (flat index {idx})")
    t = state.step_count + 1
    m = state.first_moment.astype(np.float64) * state.beta1 + (1.0 - state.beta1) * g
    v = state.second_moment.astype(np.float64) * state.beta2 + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_values = params.values.astype(np.float64) - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_params = ParameterVector(new_values.astype(np.float32), params.layout)
    new_state = AdamState(m.astype(np.float32), v.astype(np.float32), t,
                          state.learning_rate, state.beta1, state.beta2,
                          state.epsilon)
    return new_params, new_state


@dataclass
class FiniteDiffReport:
    passed: bool
    max_rel_err: float
    worst_param: str
    worst_index: int
    tolerance: float
    checked: int

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"finite-diff {status}: max rel err {self.max_rel_err:.3e} "
                f"at {self.worst_param}[{self.worst_index}] "
                f"(tolerance {self.tolerance:.1e}, {self.checked} params)")


def finite_diff_check(params: ParameterVector, spec: NetworkSpec, input_,
                      head: int, tolerance: float = 1e-3,
                      step: float = 1e-4) -> FiniteDiffReport:
    """Compare backward() against central differences, coordinate by coordinate.

    The probe loss is grad_output . output for a fixed pseudo-random
    grad_output. Central differences divide by the actually-realized
    float32 step, which keeps the comparison meaningful at float32
    parameter precision.
    """
    if spec.num_params > 10_000:
        raise UsageError(f"finite_diff_check is brute force; {spec.num_params} "
                         "parameters exceed the 10^4 limit")
    X, single = _check_input(spec, input_)
    rng = np.random.default_rng(123457)
    gout = rng.standard_normal((X.shape[0], spec.head_output_dim))

    def loss_of(values32: np.ndarray) -> float:
        pv = ParameterVector(values32, params.layout)
        y, _ = forward(pv, spec, X, head)
        return float(np.sum(gout * y))

    y, cache = forward(params, spec, X, head)
    analytic = backward(cache, gout)

    base = params.values.copy()
    numeric = np.zeros_like(analytic)
    for i in range(base.size):
        orig = base[i]
        base[i] = np.float32(orig + step)
        hi_v = np.float64(base[i])
        l_hi = loss_of(base)
        base[i] = np.float32(orig - step)
        lo_v = np.float64(base[i])
        l_lo = loss_of(base)
        base[i] = orig
        denom = hi_v - lo_v
        numeric[i] = (l_hi - l_lo) / denom if denom != 0.0 else 0.0

    scale = max(1e-6, 1e-6 * float(np.max(np.abs(analytic))))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    name = "?"
    local = worst
    for n, off, shape in params.layout:
        if off <= worst < off + int(np.prod(shape)):
            name, local = n, worst - off
            break
    max_rel = float(rel[worst])
    return FiniteDiffReport(max_rel <= tolerance, max_rel, name, local,
                            tolerance, base.size)


# ---------------------------------------------------------------------------
# Checkpoint formats
# ---------------------------------------------------------------------------

def network_bytes(spec: NetworkSpec, params: ParameterVector) -> bytes:
    if params.values.size != spec.num_params:
        raise ConfigurationError("parameter vector does not match spec")
    head = NETWORK_MAGIC + struct.pack("<7I", *spec.as_tuple())
    head += struct.pack("<Q", spec.num_params)
    return head + params.values.astype("<f4").tobytes()


def parse_network_bytes(data: bytes, offset: int = 0):
    if data[offset:offset + 6] != NETWORK_MAGIC:
        raise FormatError(f"bad network magic at byte {offset}")
    offset += 6
    need = 28 + 8
    if len(data) < offset + need:
        raise FormatError(f"truncated network header at byte {len(data)}")
    spec = NetworkSpec(*struct.unpack_from("<7I", data, offset)).validate()
    offset += 28
    (count,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    if count != spec.num_params:
        raise FormatError(f"parameter count {count} does not match spec "
                          f"({spec.num_params}) at byte {offset}")
    end = offset + 4 * count
    if len(data) < end:
        raise FormatError(f"truncated parameter payload at byte {len(data)}")
    values = np.frombuffer(data[offset:end], dtype="<f4").astype(np.float32)
    return spec, ParameterVector(values, layout_for(spec)), end


def save_network(path, spec: NetworkSpec, params: ParameterVector) -> None:
    with open(path, "wb") as f:
        f.write(network_bytes(spec, params))


def load_network(path):
    with open(path, "rb") as f:
        data = f.read()
    spec, params, end = parse_network_bytes(data)
    if end != len(data):
        raise FormatError(f"trailing bytes after parameter payload at byte {end}")
    return spec, params


def save_container(path, sections: list[tuple[str, bytes]]) -> None:
    """Multi-section checkpoint container (learner state, scheduler, ...)."""
    out = [CONTAINER_MAGIC, struct.pack("<I", len(sections))]
    for name, payload in sections:
        enc = name.encode("utf-8")
        out.append(struct.pack("<H", len(enc)))
        out.append(enc)
        out.append(struct.pack("<Q", len(payload)))
        out.append(payload)
    with open(path, "wb") as f:
        f.write(b"".join(out))


def load_container(path) -> dict[str, bytes]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:6] != CONTAINER_MAGIC:
        raise FormatError("bad container magic at byte 0")
    (count,) = struct.unpack_from("<I", data, 6)
    off = 10
    sections: dict[str, bytes] = {}
    for _ in range(count):
        if len(data) < off + 2:
            raise FormatError(f"truncated section name length at byte {off}")
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        if len(data) < off + 8:
            raise FormatError(f"truncated section size at byte {off}")
        (size,) = struct.unpack_from("<Q", data, off)
        off += 8
        if len(data) < off + size:
            raise FormatError(f"truncated section payload at byte {len(data)}")
        sections[name] = data[off:off + size]
        off += size
    return sections
