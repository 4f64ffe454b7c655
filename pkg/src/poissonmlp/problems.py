"""Boundary value problems, residual jets, training cost, and validation.

The equations are Poisson problems on the unit ball with zero boundary
values: linear Delta u = g and nonlinear Delta u + u^2 = h, with sources
manufactured from analytic solutions u_a = prefactor * (1 - r^2) * inner.
Substituting u = v * (1 - r^2) makes the boundary condition automatic and
turns the equations into

    (1 - r^2) Delta v - 4 sum_j x_j v_xj - 2n v            = g   (linear)
    (1 - r^2) Delta v - 4 sum_j x_j v_xj - 2n v + phi^2 v^2 = h  (nonlinear)

with phi = 1 - r^2.  The network learns v.  The residual V of the
substituted equation - and its directional derivatives up to order s
along the probe directions xi and zeta - are assembled from the network's
output slots with truncated jet arithmetic; the training cost is

    e_s = mean V^2 + sum_{m=1..s} mean(V_xi^(m)^2 + V_zeta^(m)^2).

Everything that differentiates closed forms (sources, exact slots,
validation values) goes through the expression registry in ``jets``, so
each analytic solution is written down exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry, jets, slotnet
from .jets import Jet, jcos, jsin

PREFACTORS = {2: (10, 17), 3: (3, 5), 4: (7, 9), 5: (7, 9)}

KINDS = ("linear", "nonlinear")
VARIANTS = ("default", "cubic_x3")


@dataclass(frozen=True)
class ProblemSpec:
    """One boundary value problem: equation kind, dimension, inner variant."""

    kind: str
    n: int
    variant: str = "default"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.n not in PREFACTORS:
            raise ValueError(f"dimension {self.n} outside supported range 2..5")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "cubic_x3" and self.n < 3:
            raise ValueError("variant cubic_x3 replaces x3^2 and needs n >= 3")

    @property
    def prefactor(self):
        num, den = PREFACTORS[self.n]
        return num / den

    @property
    def solution_name(self):
        return f"u-{self.n}d-{self.variant}"

    @property
    def reduced_name(self):
        return f"v-{self.n}d-{self.variant}"


def _register_solutions():
    """Register u_a and v_a = u_a/(1-r^2) for every dimension and variant."""

    def make_inner(n, variant):
        def inner(*x):
            if n == 2:
                third = x[0] * x[0]
            elif variant == "cubic_x3":
                third = x[2] * x[2] * x[2] * 0.5
            else:
                third = x[2] * x[2]
            tail = {
                2: lambda: x[1] * jcos(x[0]),
                3: lambda: x[1] * jcos(x[0]),
                4: lambda: x[3] * jcos(x[3]),
                5: lambda: x[3] * jcos(x[4]),
            }[n]()
            return x[0] + jsin(x[1]) + third + tail

        return inner

    for n, (num, den) in PREFACTORS.items():
        pref = num / den
        for variant in VARIANTS:
            if variant == "cubic_x3" and n < 3:
                continue
            inner = make_inner(n, variant)

            def reduced(*x, _inner=inner, _pref=pref):
                return _pref * _inner(*x)

            def solution(*x, _inner=inner, _pref=pref, _n=n):
                rsq = x[0] * x[0]
                for j in range(1, _n):
                    rsq = rsq + x[j] * x[j]
                return (1 - rsq) * (_pref * _inner(*x))

            jets.register_expression(f"v-{n}d-{variant}", reduced, n)
            jets.register_expression(f"u-{n}d-{variant}", solution, n)


_register_solutions()


def analytic_solution(spec, points):
    """u_a at points (n, N)."""
    return jets.eval_expression(spec.solution_name, points)


def reduced_solution(spec, points):
    """v_a = prefactor * inner at points (n, N)."""
    return jets.eval_expression(spec.reduced_name, points)


def source_values(spec, points):
    """Source g = Delta u_a (plus u_a^2 when nonlinear) at points (n, N)."""
    points = np.asarray(points, dtype=float)
    zero = np.zeros_like(points)
    total = 0.0
    for j in range(spec.n):
        bj = jets.eval_expression_jet(spec.solution_name, points, j, zero, 2, 0)
        total = total + bj.derivative(2, 0)
    if spec.kind == "nonlinear":
        ua = analytic_solution(spec, points)
        total = total + ua * ua
    return total


def source_jets(spec, points, direction, order=4):
    """Jet of the source along x + t*direction (normalized coefficients)."""
    points = np.asarray(points, dtype=float)
    direction = np.asarray(direction, dtype=float)
    acc = 0.0
    u_jet = None
    for j in range(spec.n):
        bj = jets.eval_expression_jet(spec.solution_name, points, j, direction, 2, order)
        acc = acc + 2.0 * bj.c[2]  # d^2u/ds^2 as a normalized jet in t
        if u_jet is None:
            u_jet = Jet(bj.c[0].copy())
    if spec.kind == "nonlinear":
        acc = acc + (u_jet * u_jet).c
    return Jet(acc)


def exact_output_slots(spec, points, directions, order):
    """Output slot tables of the exact reduced solution v_a."""
    points = np.asarray(points, dtype=float)
    n, n_pts = points.shape
    tables = {}
    for a in range(3):
        for b in range(order + 1):
            ja, db = (n if a else 1), (2 if b else 1)
            tables[(a, b)] = np.zeros((ja, db, 1, n_pts))
    for lane, d in enumerate((directions.xi, directions.zeta)):
        for j in range(n):
            bj = jets.eval_expression_jet(spec.reduced_name, points, j, d, 2, order)
            for a in range(3):
                for b in range(order + 1):
                    ja = j if a else 0
                    db = lane if b else 0
                    tables[(a, b)][ja, db, 0, :] = bj.derivative(a, b)
    return slotnet.SlotBatch(n, order, tables, 1, n_pts)


# ---------------------------------------------------------------------------
# residual jets and cost
# ---------------------------------------------------------------------------

@dataclass
class ResidualJets:
    """Raw residual derivatives: row m of xi/zeta is d^m V/d xi^m (d zeta^m)."""

    xi: np.ndarray  # (s + 1, N)
    zeta: np.ndarray

    @property
    def order(self):
        return self.xi.shape[0] - 1


@dataclass
class CostBreakdown:
    """The cost e_s and its per-order terms V_0 .. V_s."""

    value: float
    terms: list
    rms_v0: float
    n_points: int


def cost_from_jets(rj):
    """CostBreakdown of already-assembled residual jets (order = s)."""
    s = rj.order
    n_pts = rj.xi.shape[1]
    terms = [float(np.mean(rj.xi[0] ** 2))]
    for m in range(1, s + 1):
        terms.append(float(np.mean(rj.xi[m] ** 2 + rj.zeta[m] ** 2)))
    value = float(sum(terms))
    return CostBreakdown(value, terms, math.sqrt(terms[0]), n_pts)


def _conv(a, b, s):
    """Truncated convolution of normalized jet rows, out[m] = sum a_i b_{m-i}."""
    out = np.zeros_like(b if b.shape[0] >= a.shape[0] else a)
    for m in range(s + 1):
        acc = 0.0
        for i in range(m + 1):
            acc = acc + a[i] * b[m - i]
        out[m] = acc
    return out


def _corr(a, g, s):
    """Adjoint of _conv in its second argument: out[i] = sum_k a_k g_{i+k}."""
    out = np.zeros_like(g)
    for i in range(s + 1):
        acc = 0.0
        for k in range(s + 1 - i):
            acc = acc + a[k] * g[i + k]
        out[i] = acc
    return out


class ResidualCost:
    """Training cost functional e_s with its slot-space adjoint.

    Per-point constants (coordinate jets, boundary-factor jets, source
    jets) are precomputed for the whole grid in both probe lanes and
    sliced per chunk; ``refresh_directions`` rebuilds them after
    renormalization.
    """

    def __init__(self, spec, points, directions, order, dtype=np.float64):
        if not 2 <= order <= 4:
            raise ValueError(f"cost order {order} outside supported range 2..4")
        self.spec = spec
        self.order = order
        self.points = np.asarray(points, dtype=float)
        self.n = self.points.shape[0]
        self.n_points = self.points.shape[1]
        self.dtype = dtype
        self._fact = np.array([math.factorial(m) for m in range(order + 1)])
        self.refresh_directions(directions)

    def refresh_directions(self, directions):
        s, n, n_pts = self.order, self.n, self.n_points
        self._xjet, self._phi, self._phi2, self._src = [], [], [], []
        for d in (directions.xi, directions.zeta):
            d = np.asarray(d, dtype=float)
            xjet = np.zeros((n, s + 1, n_pts))
            xjet[:, 0] = self.points
            xjet[:, 1] = d
            phi = -sum(_conv(xjet[j], xjet[j], s) for j in range(n))
            phi[0] += 1.0
            self._xjet.append(xjet.astype(self.dtype))
            self._phi.append(phi.astype(self.dtype))
            if self.spec.kind == "nonlinear":
                self._phi2.append(_conv(phi, phi, s).astype(self.dtype))
            src = source_jets(self.spec, self.points, d, s).c
            self._src.append(src.astype(self.dtype))

    # -- assembly ------------------------------------------------------

    def _gather(self, tables, lane, fact):
        """Normalized jets of v, v_xj, Delta v from raw slot tables."""
        s, n = self.order, self.n
        shape = tables[(0, 0)].shape[3]
        v = np.empty((s + 1, shape), dtype=self.dtype)
        vx = np.empty((n, s + 1, shape), dtype=self.dtype)
        lap = np.empty((s + 1, shape), dtype=self.dtype)
        for m in range(s + 1):
            lidx = lane if m else 0
            v[m] = tables[(0, m)][0, lidx, 0] / fact[m]
            vx[:, m] = tables[(1, m)][:, lidx, 0] / fact[m]
            lap[m] = tables[(2, m)][:, lidx, 0].sum(axis=0) / fact[m]
        return v, vx, lap

    def _lane_residual(self, tables, lane, cols):
        s, n = self.order, self.n
        fact = self._fact
        v, vx, lap = self._gather(tables, lane, fact)
        phi = self._phi[lane][:, cols]
        xjet = self._xjet[lane][:, :, cols]
        res = _conv(phi, lap, s) - (2.0 * n) * v - self._src[lane][:, cols]
        for j in range(n):
            res -= 4.0 * _conv(xjet[j], vx[j], s)
        if self.spec.kind == "nonlinear":
            res += _conv(self._phi2[lane][:, cols], _conv(v, v, s), s)
        return res, (v, vx, lap)

    def residual_jets(self, out_batch, cols=None):
        """Raw residual derivatives for both lanes (ResidualJets)."""
        if out_batch.order < self.order:
            raise ValueError(
                f"slot set carries direction order {out_batch.order}, "
                f"cost needs {self.order}"
            )
        cols = slice(0, self.n_points) if cols is None else cols
        fact = self._fact[:, None]
        res_xi, _ = self._lane_residual(out_batch.tables, 0, cols)
        res_zeta, _ = self._lane_residual(out_batch.tables, 1, cols)
        return ResidualJets(res_xi * fact, res_zeta * fact)

    # -- cost functional protocol ---------------------------------------

    def evaluate(self, out_batch, cols, need_seed=True):
        """Partial sums of squared raw residual rows, and cost seeds."""
        if out_batch.order < self.order:
            raise ValueError(
                f"slot set carries direction order {out_batch.order}, "
                f"cost needs {self.order}"
            )
        s, n = self.order, self.n
        fact = self._fact
        tables = out_batch.tables
        sums = np.zeros(s + 1)
        seed = {}
        for lane in (0, 1):
            res, (v, vx, lap) = self._lane_residual(tables, lane, cols)
            raw = res * fact[:, None]
            start = 0 if lane == 0 else 1  # order 0 is lane-independent
            for m in range(start, s + 1):
                sums[m] += (raw[m].astype(np.float64) ** 2).sum()
            if not need_seed:
                continue
            gbar = (2.0 / self.n_points) * raw * fact[:, None]
            if lane == 1:
                gbar[0] = 0.0
            gbar = gbar.astype(self.dtype)
            phi = self._phi[lane][:, cols]
            xjet = self._xjet[lane][:, :, cols]
            lap_bar = _corr(phi, gbar, s)
            v_bar = -(2.0 * n) * gbar
            if self.spec.kind == "nonlinear":
                w_bar = _corr(self._phi2[lane][:, cols], gbar, s)
                v_bar += 2.0 * _corr(v, w_bar, s)
            for m in range(s + 1):
                lidx = lane if m else 0
                t0 = seed.setdefault(
                    (0, m), np.zeros_like(np.asarray(tables[(0, m)]))
                )
                t0[0, lidx, 0] += v_bar[m] / fact[m]
                t2 = seed.setdefault(
                    (2, m), np.zeros_like(np.asarray(tables[(2, m)]))
                )
                t2[:, lidx, 0] += lap_bar[m] / fact[m]
                t1 = seed.setdefault(
                    (1, m), np.zeros_like(np.asarray(tables[(1, m)]))
                )
                for j in range(n):
                    vxj_bar = -4.0 * _corr(xjet[j], gbar, s)
                    t1[j, lidx, 0] += vxj_bar[m] / fact[m]
        return sums, seed

    def finalize(self, sums):
        terms = [float(t) / self.n_points for t in sums]
        value = float(sum(terms))
        return value, CostBreakdown(value, terms, math.sqrt(terms[0]), self.n_points)


def residual_order0(spec, weights, points):
    """Plain residual V at arbitrary points (no probe directions involved)."""
    points = np.asarray(points, dtype=float)
    dirs = geometry.DirectionField(np.zeros_like(points), np.zeros_like(points))
    cost = ResidualCost(spec, points, dirs, 2, dtype=weights.dtype)
    out = slotnet.forward(points, dirs.xi, dirs.zeta, weights, 2)
    return cost.residual_jets(out).xi[0]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationResult:
    eps_max: float
    eps_median: float
    n_test: int
    seed: int


def validate(spec, weights, n_test, seed, chunk_size=500_000):
    """Max and median |u - u_a| over uniform random points in the ball."""
    eps = np.empty(n_test)
    done = 0
    pts_all = geometry.ball_sample(spec.n, n_test, seed)
    for c0 in range(0, n_test, chunk_size):
        pts = pts_all[:, c0 : c0 + chunk_size]
        v = slotnet.evaluate_plain(pts, weights).astype(float)
        u = v * (1.0 - (pts ** 2).sum(axis=0))
        ua = analytic_solution(spec, pts)
        eps[c0 : c0 + pts.shape[1]] = np.abs(u - ua)
        done += pts.shape[1]
    assert done == n_test
    return ValidationResult(float(eps.max()), float(np.median(eps)), n_test, seed)
