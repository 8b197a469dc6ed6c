"""Differentiable building blocks: GRU cells, bidirectional encoding, embedding
tables with pretrained-vector loading, the Adam optimizer, gradient clipping,
finite-difference gradient verification, and exact checkpoint IO.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor
from .errors import ParseError, ShapeMismatch

# -- initialization --------------------------------------------------------------


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out))."""
    r = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-r, r, size=(rows, cols))


def glorot_vec(rng: np.random.Generator, n: int) -> np.ndarray:
    r = math.sqrt(6.0 / (n + 1))
    return rng.uniform(-r, r, size=n)


# -- GRU -------------------------------------------------------------------------


class GruCell:
    """Gated recurrent unit with the convention
    h = (1 - z) * h_prev + z * h_tilde.

    The recurrence step is a single fused tape node with a hand-written
    backward pass (the finite-difference tests hold it to rel. error 1e-5);
    composing it from primitives costs an order of magnitude more tape
    bookkeeping in the sequence loops.
    """

    GATES = ("z", "r", "h")

    def __init__(self, name: str, input_size: int, hidden_size: int, rng):
        self.name = name
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.W = {g: Param(f"{name}.W_{g}", glorot(rng, input_size, hidden_size)) for g in self.GATES}
        self.U = {g: Param(f"{name}.U_{g}", glorot(rng, hidden_size, hidden_size)) for g in self.GATES}
        self.b = {g: Param(f"{name}.b_{g}", np.zeros(hidden_size)) for g in self.GATES}

    def params(self) -> list[Param]:
        out = []
        for g in self.GATES:
            out.extend([self.W[g], self.U[g], self.b[g]])
        return out

    def leaves(self) -> dict:
        """One leaf tensor per parameter, shared across the steps of a sequence."""
        leaves = {}
        for g in self.GATES:
            leaves[f"W_{g}"] = self.W[g].tensor()
            leaves[f"U_{g}"] = self.U[g].tensor()
            leaves[f"b_{g}"] = self.b[g].tensor()
        return leaves

    def _check(self, x, h):
        if x is not None and x.shape != (self.input_size,):
            raise ShapeMismatch(f"{self.name}: input shape {x.shape}, expected ({self.input_size},)")
        if h.shape != (self.hidden_size,):
            raise ShapeMismatch(f"{self.name}: hidden shape {h.shape}, expected ({self.hidden_size},)")

    def step(self, x: Tensor | None, h_prev: Tensor, pre=None, leaves=None) -> Tensor:
        """One recurrence step.

        `pre` optionally carries (XZ, XR, XH, t): whole-sequence input
        projections plus the row index, avoiding per-step input matmuls.
        """
        self._check(x, h_prev)
        lv = leaves if leaves is not None else self.leaves()
        Uz, Ur, Uh = lv["U_z"].value, lv["U_r"].value, lv["U_h"].value
        hv = h_prev.value
        if pre is None:
            xv = x.value
            xz = xv @ lv["W_z"].value
            xr = xv @ lv["W_r"].value
            xh = xv @ lv["W_h"].value
            data_parents = (x,)
        else:
            XZ, XR, XH, t = pre
            xz, xr, xh = XZ.value[t], XR.value[t], XH.value[t]
            data_parents = (XZ, XR, XH)

        z = 1.0 / (1.0 + np.exp(-(xz + hv @ Uz + lv["b_z"].value)))
        r = 1.0 / (1.0 + np.exp(-(xr + hv @ Ur + lv["b_r"].value)))
        rh = r * hv
        c = np.tanh(xh + rh @ Uh + lv["b_h"].value)
        out = Tensor((1.0 - z) * hv + z * c, (h_prev,) + data_parents + tuple(lv.values()))

        def bwd(g):
            dz = g * (c - hv)
            dc = g * z
            dxh = dc * (1.0 - c * c)
            d_rh = Uh @ dxh
            dxr = (d_rh * hv) * r * (1.0 - r)
            dxz = dz * z * (1.0 - z)
            dh = g * (1.0 - z) + d_rh * r + Ur @ dxr + Uz @ dxz
            h_prev.accum(dh)
            lv["U_h"].accum(np.outer(rh, dxh))
            lv["U_r"].accum(np.outer(hv, dxr))
            lv["U_z"].accum(np.outer(hv, dxz))
            lv["b_h"].accum(dxh)
            lv["b_r"].accum(dxr)
            lv["b_z"].accum(dxz)
            if pre is None:
                lv["W_z"].accum(np.outer(xv, dxz))
                lv["W_r"].accum(np.outer(xv, dxr))
                lv["W_h"].accum(np.outer(xv, dxh))
                x.accum(lv["W_z"].value @ dxz + lv["W_r"].value @ dxr + lv["W_h"].value @ dxh)
            else:
                for proj, d in ((XZ, dxz), (XR, dxr), (XH, dxh)):
                    if proj.grad is None:
                        proj.grad = np.zeros_like(proj.value)
                    proj.grad[t] += d

        out.bwd = bwd
        return out

    def input_projections(self, X: Tensor, leaves=None):
        """Project a whole (T, D) input sequence through the W matrices at once."""
        lv = leaves if leaves is not None else self.leaves()
        return tuple(ad.matmul(X, lv[f"W_{g}"]) for g in self.GATES)


def gru_step(cell: GruCell, x: Tensor, h_prev: Tensor) -> Tensor:
    return cell.step(x, h_prev)


def encode_bidirectional(cell_fwd: GruCell, cell_bwd: GruCell, inputs: Tensor) -> Tensor:
    """Run both directions over a (T, D) sequence; row t is [fwd_t | bwd_t]."""
    if inputs.ndim != 2:
        raise ShapeMismatch(f"expected (T, D) inputs, got {inputs.shape}")
    T = inputs.shape[0]
    if T < 1:
        raise ShapeMismatch("sequence must have at least one element")

    def run(cell, order):
        leaves = cell.leaves()
        XZ, XR, XH = cell.input_projections(inputs, leaves)
        h = ad.constant(np.zeros(cell.hidden_size))
        states = [None] * T
        for t in order:
            h = cell.step(None, h, pre=(XZ, XR, XH, t), leaves=leaves)
            states[t] = h
        return states

    fwd = run(cell_fwd, range(T))
    bwd = run(cell_bwd, range(T - 1, -1, -1))
    return ad.stack_rows([ad.concat([fwd[t], bwd[t]]) for t in range(T)])


# -- embeddings --------------------------------------------------------------


def _token_seed(token: str) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")


class EmbeddingTable:
    """token -> row mapping over a (V, dim) matrix of vectors."""

    def __init__(self, vocabulary, vectors: np.ndarray, oov_count: int = 0):
        self.tokens = tuple(vocabulary)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        if vectors.shape[0] != len(self.tokens):
            raise ShapeMismatch("one vector row per vocabulary token required")
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self.oov_count = oov_count

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def random(cls, vocabulary, rng, dim: int = 100) -> "EmbeddingTable":
        vocab = tuple(vocabulary)
        return cls(vocab, glorot(rng, len(vocab), dim))


def load_pretrained(path, vocabulary, dim: int = 100) -> EmbeddingTable:
    """Load `token f1 ... f<dim>` lines; out-of-vocabulary tokens get
    deterministic hash-seeded vectors scaled to the mean loaded norm."""
    vocab = tuple(vocabulary)
    file_vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            token, floats = parts[0], parts[1:]
            if len(floats) != dim:
                raise ParseError(
                    f"expected {dim} floats after token, got {len(floats)}",
                    line=lineno,
                    source=path,
                )
            try:
                vec = np.array([float(f) for f in floats], dtype=np.float64)
            except ValueError:
                raise ParseError("bad float literal", line=lineno, source=path) from None
            file_vectors[token] = vec

    loaded = [file_vectors[t] for t in vocab if t in file_vectors]
    target_norm = float(np.mean([np.linalg.norm(v) for v in loaded])) if loaded else 1.0
    vectors = np.zeros((len(vocab), dim))
    oov = 0
    for i, tok in enumerate(vocab):
        if tok in file_vectors:
            vectors[i] = file_vectors[tok]
        else:
            oov += 1
            r = np.random.default_rng(_token_seed(tok))
            v = r.standard_normal(dim)
            vectors[i] = v * (target_norm / np.linalg.norm(v))
    return EmbeddingTable(vocab, vectors, oov_count=oov)


# -- optimization -------------------------------------------------------------


class Adam:
    """Adam with bias correction; state is keyed by parameter name."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad**2
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def adam_step(params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, state: Adam | None = None) -> Adam:
    """One Adam update; pass the returned state back in to continue."""
    if state is None:
        state = Adam(params, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
    state.step()
    return state


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((p.grad**2).sum()) for p in params))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for p in params:
            p.grad *= factor
    return total


# -- gradient verification -----------------------------------------------------


def finite_difference_errors(
    loss_fn,
    params,
    rng: np.random.Generator | None = None,
    max_coords_per_param: int | None = None,
    step: float = 1e-6,
    abs_floor: float = 1e-7,
):
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must rebuild the forward pass from the current parameter values and
    return a scalar Tensor. Returns a flat array of relative errors
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over the checked
    coordinates. Differences below `abs_floor` count as exact agreement: they
    sit at the roundoff floor of the central difference itself, which for a
    loss of magnitude f is about eps * f / (2 * step).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {p.name: p.grad.copy() for p in params}

    errors = []
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.shape[0]
        if max_coords_per_param is None or n <= max_coords_per_param:
            coords = range(n)
        else:
            if rng is None:
                raise ValueError("sampling coordinates requires an rng")
            coords = sorted(int(i) for i in rng.choice(n, size=max_coords_per_param, replace=False))
        a_flat = analytic[p.name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            f_plus = float(loss_fn().value)
            flat[c] = orig - step
            f_minus = float(loss_fn().value)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = a_flat[c]
            diff = abs(a - numeric)
            if diff < abs_floor:
                errors.append(0.0)
            else:
                errors.append(diff / max(abs(a), abs(numeric), 1e-8))
    return np.array(errors)


def check_gradients(loss_fn, params, rel_tol=1e-5, **kwargs) -> float:
    """Assert-style wrapper: returns the max relative error, raising if above tol."""
    errs = finite_difference_errors(loss_fn, params, **kwargs)
    worst = float(errs.max()) if errs.size else 0.0
    if worst >= rel_tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e}")
    return worst


# -- checkpoint IO ---------------------------------------------------------------
#
# Text manifest (meta lines, vocab lines, tensor names + shapes) terminated by
# "end", followed by the raw little-endian float64 payloads in listing order.


def save_tensors(path, named: dict[str, np.ndarray], meta: dict[str, str] | None = None, vocab=()):
    lines = ["navckpt 1"]
    for key in sorted(meta or {}):
        value = str((meta or {})[key])
        if "\n" in value:
            raise ValueError("meta values may not contain newlines")
        lines.append(f"meta {key} {value}")
    for tok in vocab:
        lines.append(f"vocab {tok}")
    names = sorted(named)
    for name in names:
        arr = np.asarray(named[name])
        dims = " ".join(str(d) for d in arr.shape) if arr.ndim else "0"
        lines.append(f"tensor {name} {dims}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for name in names:
            fh.write(np.ascontiguousarray(named[name], dtype="<f8").tobytes())


def load_tensors(path):
    """Returns (meta dict, vocab list, name -> float64 array dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = b"\nend\n"
    cut = blob.find(sep)
    if cut < 0:
        raise ParseError("missing 'end' marker", source=path)
    header = blob[:cut].decode("utf-8").splitlines()
    payload = blob[cut + len(sep) :]
    if not header or header[0] != "navckpt 1":
        raise ParseError("not a navckpt file", source=path)
    meta: dict[str, str] = {}
    vocab: list[str] = []
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for lineno, line in enumerate(header[1:], start=2):
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "vocab":
            vocab.append(rest)
        elif kind == "tensor":
            parts = rest.split()
            name = parts[0]
            dims = tuple(int(d) for d in parts[1:])
            if dims == (0,):
                dims = ()
            shapes.append((name, dims))
        else:
            raise ParseError(f"unrecognized header line {line!r}", line=lineno, source=path)
    named = {}
    offset = 0
    for name, dims in shapes:
        count = int(np.prod(dims)) if dims else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise ParseError(f"truncated payload at tensor {name}", source=path)
        named[name] = np.frombuffer(payload[offset : offset + nbytes], dtype="<f8").reshape(dims).copy()
        offset += nbytes
    if offset != len(payload):
        raise ParseError("trailing bytes after last tensor", source=path)
    return meta, vocab, named
