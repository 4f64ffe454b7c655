"""Extended forward pass of a sigmoid perceptron and its hand-taped adjoint.

Besides plain values, every layer carries a family of *slots*: the values
of the derivative operators

    { 1, d/dx_j, d^2/dx_j^2 }  x  { 1, d^m/dxi^m, d^m/dzeta^m }   m = 1..s

applied to each neuron at each grid point, where xi and zeta are the two
probe directions attached to the point.  Slots whose operators differ only
by the coordinate axis j or by the probe lane are stored together in one
array per *class* (a, b) with a the coordinate order and b the direction
order; an array of class (a, b) has shape (Ja, Db, width, N) with Ja = n
for a >= 1 (else 1) and Db = 2 for b >= 1 (else 1).  Classes that are
identically zero (mixed classes at the input layer) are stored as None.

Affine layers act on each class by plain matrix multiplication.  The
sigmoid is pushed through with the chain rule for the mixed derivative
d^{a+b} sigma(u) / dx_j^a dt^b, summed over multiset partitions of the
operator multiset {x^a, t^b}: every partition contributes
sigma^(k)(u) * prod_blocks (block slot), k the number of blocks, weighted
by the number of set partitions collapsing onto it.  The same tables
drive the reverse pass, which is written by hand (no autodiff): the
adjoint of each partition term feeds sigma^(k+1) into the pre-activation
cotangent and the product rule into the incoming slot cotangents.

Derivatives of the sigmoid are evaluated as integer polynomials in
sigma itself (P_1 = s - s^2, P_{k+1} = P_k' * (s - s^2)).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

_FACT = [math.factorial(m) for m in range(10)]

MAX_COORD_ORDER = 2
MAX_DIR_ORDER = 4


# ---------------------------------------------------------------------------
# slot labels and classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlotLabel:
    """One derivative operator: d^a/dx_axis^a composed with d^b/dlane^b."""

    coord_order: int
    axis: int | None
    dir_order: int
    lane: str | None  # "xi" | "zeta" | None

    def __post_init__(self):
        if (self.coord_order == 0) != (self.axis is None):
            raise ValueError("axis must be given exactly when coord_order >= 1")
        if (self.dir_order == 0) != (self.lane is None):
            raise ValueError("lane must be given exactly when dir_order >= 1")
        if self.lane not in (None, "xi", "zeta"):
            raise ValueError(f"unknown lane {self.lane!r}")


def enumerate_slots(n, s):
    """All slot labels for dimension n and highest direction order s."""
    if not 2 <= n <= 5:
        raise ValueError(f"dimension {n} outside supported range 2..5")
    if not 2 <= s <= MAX_DIR_ORDER:
        raise ValueError(f"direction order {s} outside supported range 2..4")
    coord_part = [(0, None)] + [(a, j) for a in (1, 2) for j in range(n)]
    dir_part = [(0, None)] + [(b, lane) for b in range(1, s + 1) for lane in ("xi", "zeta")]
    return [
        SlotLabel(a, j, b, lane)
        for a, j in coord_part
        for b, lane in dir_part
    ]


def slot_classes(n, s):
    """Class keys (coord order, direction order) in deterministic order."""
    return [(a, b) for a in range(MAX_COORD_ORDER + 1) for b in range(s + 1)]


# ---------------------------------------------------------------------------
# multiset partitions for the activation chain rule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionTerm:
    """One multiset partition of {x^a, t^b} with its set-partition count."""

    mult: int
    order: int  # number of blocks = order of the sigma derivative
    blocks: tuple  # ((a', b'), count) pairs, distinct block classes


def _set_partitions(k):
    """All set partitions of range(k) (restricted-growth enumeration)."""
    if k == 0:
        yield []
        return
    for part in _set_partitions(k - 1):
        item = k - 1
        yield part + [[item]]
        for i in range(len(part)):
            yield part[:i] + [part[i] + [item]] + part[i + 1 :]


@lru_cache(maxsize=None)
def partition_table(a, b):
    """Partition terms for the multiset with a coordinate and b direction items.

    The multiplicities count labeled set partitions, so they sum to the
    Bell number B(a+b).
    """
    counts: dict[tuple, int] = {}
    for part in _set_partitions(a + b):
        blocks = []
        for block in part:
            ca = sum(1 for i in block if i < a)
            blocks.append((ca, len(block) - ca))
        key = tuple(sorted(blocks))
        counts[key] = counts.get(key, 0) + 1
    terms = []
    for key in sorted(counts):
        grouped: dict[tuple, int] = {}
        for cls in key:
            grouped[cls] = grouped.get(cls, 0) + 1
        terms.append(
            PartitionTerm(counts[key], len(key), tuple(sorted(grouped.items())))
        )
    return tuple(terms)


# ---------------------------------------------------------------------------
# sigmoid derivatives as polynomials in sigma
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _sigma_poly(order):
    """Coefficients (by power of sigma) of the order-th sigmoid derivative."""
    if order == 0:
        return (0.0, 1.0)
    prev = _sigma_poly(order - 1)
    dp = [i * prev[i] for i in range(1, len(prev))]
    out = [0.0] * (len(dp) + 2)
    for i, c in enumerate(dp):
        out[i + 1] += c
        out[i + 2] -= c
    return tuple(out)


def sigma_derivatives(u, max_order):
    """[sigma(u), sigma'(u), ..., sigma^(max_order)(u)] evaluated stably."""
    sig = expit(u)
    tables = [sig]
    for k in range(1, max_order + 1):
        coeffs = _sigma_poly(k)
        acc = np.full_like(sig, coeffs[-1])
        for c in coeffs[-2::-1]:
            acc = acc * sig + c
        tables.append(acc)
    return tables


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

@dataclass
class WeightSet:
    """Affine parameters per layer: weights[l] is (w_out, w_in)."""

    weights: list
    biases: list

    @property
    def topology(self):
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def n_params(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self):
        return WeightSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype):
        return WeightSet(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
        )


def init_weights(topology, seed, dtype=np.float64):
    """Uniform init: weights U(-2/sqrt(fan_in), ..), thresholds U(-0.1, 0.1)."""
    if len(topology) < 2:
        raise ValueError("topology needs at least input and output layers")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for w_in, w_out in zip(topology[:-1], topology[1:]):
        span = 2.0 / math.sqrt(w_in)
        weights.append(rng.uniform(-span, span, size=(w_out, w_in)).astype(dtype))
        biases.append(rng.uniform(-0.1, 0.1, size=w_out).astype(dtype))
    return WeightSet(weights, biases)


def weight_lines(ws):
    """Header plus one line per value, bit-exact on reparse."""
    bits = 32 if ws.dtype == np.float32 else 64
    fmt = (lambda v: np.format_float_scientific(v, unique=True)) if bits == 32 else (
        lambda v: repr(float(v))
    )
    lines = [f"layers: {','.join(str(w) for w in ws.topology)}; precision: {bits}"]
    for w, b in zip(ws.weights, ws.biases):
        lines.extend(fmt(v) for v in w.ravel())
        lines.extend(fmt(v) for v in b.ravel())
    return lines


def parse_weight_lines(lines):
    header, values = lines[0], lines[1:]
    m = re.fullmatch(r"layers:\s*([\d,\s]+);\s*precision:\s*(32|64)\s*", header)
    if not m:
        raise ValueError(f"bad weights header: {header!r}")
    topology = tuple(int(t) for t in m.group(1).split(","))
    dtype = np.float32 if m.group(2) == "32" else np.float64
    values = np.array([float(v) for v in values if v.strip()], dtype=dtype)
    weights, biases = [], []
    pos = 0
    for w_in, w_out in zip(topology[:-1], topology[1:]):
        weights.append(values[pos : pos + w_out * w_in].reshape(w_out, w_in).copy())
        pos += w_out * w_in
        biases.append(values[pos : pos + w_out].copy())
        pos += w_out
    if pos != values.size:
        raise ValueError("weights file length does not match its topology header")
    return WeightSet(weights, biases)


def save_weights(path, ws):
    """Plain-text dump, one value per line, bit-exact on reload."""
    with open(path, "w") as fh:
        fh.write("\n".join(weight_lines(ws)) + "\n")


def load_weights(path):
    with open(path) as fh:
        return parse_weight_lines(fh.read().splitlines())


# ---------------------------------------------------------------------------
# slot batches
# ---------------------------------------------------------------------------

class SlotBatch:
    """Slot tables of one layer: dict (a, b) -> array (Ja, Db, width, N) | None."""

    def __init__(self, n, order, tables, width, n_points):
        self.n = n
        self.order = order
        self.tables = tables
        self.width = width
        self.n_points = n_points

    def table(self, a, b):
        t = self.tables[(a, b)]
        if t is None:
            ja = self.n if a >= 1 else 1
            db = 2 if b >= 1 else 1
            return np.zeros((ja, db, self.width, self.n_points))
        return t

    def slot(self, label):
        """One (width, N) slot selected by its label."""
        t = self.table(label.coord_order, label.dir_order)
        j = label.axis if label.coord_order >= 1 else 0
        d = 0 if label.lane in (None, "xi") else 1
        return t[j, d]

    def as_matrix(self, s=None):
        """All slots stacked in enumerate_slots order, shape (n_slots, width, N)."""
        labels = enumerate_slots(self.n, self.order if s is None else s)
        return np.stack([self.slot(lb) for lb in labels])


def init_input_slots(points, xi, zeta, order, dtype=np.float64):
    """Slot tables of the input layer (width = n coordinates)."""
    points = np.asarray(points, dtype=dtype)
    n, n_pts = points.shape
    tables = {}
    tables[(0, 0)] = points[None, None]
    eye = np.zeros((n, 1, n, n_pts), dtype=dtype)
    for j in range(n):
        eye[j, 0, j] = 1.0
    tables[(1, 0)] = eye
    tables[(2, 0)] = None
    dirs = np.stack([np.asarray(xi, dtype=dtype), np.asarray(zeta, dtype=dtype)])
    tables[(0, 1)] = dirs[None]  # (1, 2, n, N)
    for b in range(2, order + 1):
        tables[(0, b)] = None
    for a in (1, 2):
        for b in range(1, order + 1):
            tables[(a, b)] = None
    return SlotBatch(n, order, tables, n, n_pts)


def affine_propagate(batch, w, b):
    """Push all slot tables through x -> Wx (+ threshold on the value slot)."""
    out = {}
    for cls in sorted(batch.tables):
        t = batch.tables[cls]
        out[cls] = None if t is None else np.matmul(w, t)
    out[(0, 0)] = out[(0, 0)] + b[:, None]
    return SlotBatch(batch.n, batch.order, out, w.shape[0], batch.n_points)


class _PowerCache:
    """Per-layer cache of elementwise block powers Z[cls]**count."""

    def __init__(self, tables):
        self.tables = tables
        self.cache = {}

    def get(self, cls, count):
        if count == 1:
            return self.tables[cls]
        key = (cls, count)
        if key not in self.cache:
            base = self.tables[cls]
            self.cache[key] = base * base if count == 2 else self.get(cls, count - 1) * base
        return self.cache[key]


def _block_product(powers, blocks):
    """Product of Z[cls]**count over blocks; None if any factor is zero."""
    prod = None
    for cls, count in blocks:
        if powers.tables[cls] is None:
            return None, True
        f = powers.get(cls, count)
        prod = f if prod is None else prod * f
    return prod, False


def activation_propagate(batch, with_tape=False, extra_sigma=0):
    """Apply the sigmoid to all slots via the partition chain rule."""
    u = batch.tables[(0, 0)][0, 0]
    max_k = MAX_COORD_ORDER + batch.order
    sig = sigma_derivatives(u, max_k + extra_sigma)
    powers = _PowerCache(batch.tables)
    out = {}
    for cls in sorted(batch.tables):
        a, b = cls
        ja = batch.n if a >= 1 else 1
        db = 2 if b >= 1 else 1
        acc = None
        for term in partition_table(a, b):
            prod, skipped = _block_product(powers, term.blocks)
            if skipped:
                continue
            contrib = term.mult * sig[term.order]
            if prod is not None:
                contrib = contrib * prod
            acc = contrib if acc is None else acc + contrib
        if acc is None:
            out[cls] = None
        else:
            # classes other than (0, 0) always broadcast to full (ja, db)
            out[cls] = np.broadcast_to(acc, (ja, db) + u.shape)
    result = SlotBatch(batch.n, batch.order, out, batch.width, batch.n_points)
    if with_tape:
        return result, sig
    return result


def forward(points, xi, zeta, weights, order, dtype=None):
    """Slot tables of the output layer for a whole batch of points."""
    dtype = dtype or weights.dtype
    batch = init_input_slots(points, xi, zeta, order, dtype)
    last = len(weights.weights) - 1
    for l, (w, b) in enumerate(zip(weights.weights, weights.biases)):
        batch = affine_propagate(batch, w, b)
        if l < last:
            batch = activation_propagate(batch)
    return batch


def evaluate_plain(points, weights, chunk_size=None):
    """Network output values only (no slots), chunked over points."""
    points = np.asarray(points, dtype=weights.dtype)
    n_pts = points.shape[1]
    if chunk_size is None or chunk_size >= n_pts:
        chunk_size = n_pts
    out = np.empty(n_pts, dtype=weights.dtype)
    last = len(weights.weights) - 1
    for c0 in range(0, n_pts, chunk_size):
        a = points[:, c0 : c0 + chunk_size]
        for l, (w, b) in enumerate(zip(weights.weights, weights.biases)):
            a = w @ a + b[:, None]
            if l < last:
                a = expit(a)
        out[c0 : c0 + chunk_size] = a[0]
    return out


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _reduce_like(arr, ja, db):
    """Sum broadcast axes of a (Ja_out, Db_out, w, N) cotangent down to (ja, db, w, N)."""
    if arr.shape[0] != ja:
        arr = arr.sum(axis=0, keepdims=True)
    if arr.shape[1] != db:
        arr = arr.sum(axis=1, keepdims=True)
    return arr


def _activation_backward(cot_out, batch, sig):
    """Adjoint of activation_propagate; returns cotangent tables for Z."""
    u = batch.tables[(0, 0)][0, 0]
    powers = _PowerCache(batch.tables)
    cot = {cls: None for cls in batch.tables}
    ubar = np.zeros_like(u)

    def add(cls, arr):
        ja, db = (batch.n if cls[0] >= 1 else 1), (2 if cls[1] >= 1 else 1)
        arr = _reduce_like(arr, ja, db)
        if cot[cls] is None:
            cot[cls] = np.zeros((ja, db) + u.shape, dtype=u.dtype)
        cot[cls] += arr

    for cls in sorted(batch.tables):
        upstream = cot_out.get(cls)
        if upstream is None:
            continue
        for term in partition_table(*cls):
            prod, skipped = _block_product(powers, term.blocks)
            if skipped:
                continue
            # derivative of sigma^(k)(u) w.r.t. u
            du = upstream * (term.mult * sig[term.order + 1])
            if prod is not None:
                du = du * prod
            ubar += du.sum(axis=(0, 1))
            # product rule over the blocks
            for i, (bcls, count) in enumerate(term.blocks):
                arr = upstream * (term.mult * count) * sig[term.order]
                for j, (ocls, ocount) in enumerate(term.blocks):
                    e = ocount - (1 if j == i else 0)
                    if e:
                        arr = arr * powers.get(ocls, e)
                add(bcls, arr)

    if cot[(0, 0)] is None:
        cot[(0, 0)] = np.zeros((1, 1) + u.shape, dtype=u.dtype)
    cot[(0, 0)][0, 0] += ubar
    return cot


def _affine_backward(cot_out, in_batch, w, grad_w, grad_b):
    """Adjoint of affine_propagate; accumulates parameter gradients in place."""
    cot_in = {}
    for cls in sorted(in_batch.tables):
        up = cot_out.get(cls)
        if up is None:
            cot_in[cls] = None
            continue
        t = in_batch.tables[cls]
        if t is not None:
            grad_w += np.einsum("abop,abip->oi", up, t, optimize=True)
        # a zero input table only occurs at the input layer, whose own
        # cotangent is discarded, so that branch can stay empty
        cot_in[cls] = np.matmul(w.T, up) if t is not None else None
    up00 = cot_out.get((0, 0))
    if up00 is not None:
        grad_b += up00[0, 0].sum(axis=1)
    return cot_in


def _forward_tape(points, xi, zeta, weights, order, dtype):
    batch = init_input_slots(points, xi, zeta, order, dtype)
    tape = [batch]
    sigs = []
    last = len(weights.weights) - 1
    for l, (w, b) in enumerate(zip(weights.weights, weights.biases)):
        batch = affine_propagate(batch, w, b)
        if l < last:
            tape.append(batch)
            batch, sig = activation_propagate(batch, with_tape=True, extra_sigma=1)
            sigs.append(sig)
            tape.append(batch)
    return batch, tape, sigs


def cost_gradient(points, xi, zeta, weights, order, cost, chunk_size=None):
    """Cost value, auxiliary breakdown, and exact parameter gradients.

    ``cost`` must provide ``evaluate(out_batch, cols, need_seed) ->
    (partial_sums, seed_tables)`` with seeds already scaled as
    d(cost)/d(slot), and ``finalize(total_sums) -> (value, aux)``.
    """
    points = np.asarray(points)
    n_pts = points.shape[1]
    if chunk_size is None or chunk_size >= n_pts:
        chunk_size = n_pts
    dtype = weights.dtype
    grad = WeightSet(
        [np.zeros_like(w) for w in weights.weights],
        [np.zeros_like(b) for b in weights.biases],
    )
    sums = None
    for c0 in range(0, n_pts, chunk_size):
        cols = slice(c0, min(c0 + chunk_size, n_pts))
        out, tape, sigs = _forward_tape(
            points[:, cols], xi[:, cols], zeta[:, cols], weights, order, dtype
        )
        part, cot = cost.evaluate(out, cols)
        sums = part if sums is None else sums + part
        for l in range(len(weights.weights) - 1, -1, -1):
            in_batch = tape[2 * l]
            cot = _affine_backward(cot, in_batch, weights.weights[l], grad.weights[l], grad.biases[l])
            if l > 0:
                pre = tape[2 * l - 1]
                cot = _activation_backward(cot, pre, sigs[l - 1])
    value, aux = cost.finalize(sums)
    return value, aux, grad


def cost_value(points, xi, zeta, weights, order, cost, chunk_size=None):
    """Cost value only (forward pass, no tape)."""
    points = np.asarray(points)
    n_pts = points.shape[1]
    if chunk_size is None or chunk_size >= n_pts:
        chunk_size = n_pts
    sums = None
    for c0 in range(0, n_pts, chunk_size):
        cols = slice(c0, min(c0 + chunk_size, n_pts))
        out = forward(points[:, cols], xi[:, cols], zeta[:, cols], weights, order)
        part, _ = cost.evaluate(out, cols, need_seed=False)
        sums = part if sums is None else sums + part
    return cost.finalize(sums)
