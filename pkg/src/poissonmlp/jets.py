"""Truncated Taylor jets along one or two perturbation directions.

A ``Jet`` carries the value and the first few derivatives of a quantity
along a single straight line x + t*d; a ``BiJet`` carries the mixed
derivatives along two lines x + s*a + t*d (a coordinate axis and a probe
direction, say).  Coefficients are stored *normalized*: entry m holds the
m-th derivative divided by m!, so that multiplication of jets is a plain
truncated convolution of coefficient arrays.  Raw derivatives are
recovered with ``derivative``.

Coefficients may be scalars or numpy arrays of a common shape, so a whole
batch of points is differentiated in one jet.  Elementary functions
(sin, cos, exp, reciprocal) follow the standard power-series recurrences;
the two-direction versions are obtained by composing the univariate
derivative jets with the nilpotent remainder.

Closed-form expressions (analytic solutions, source terms) register here
by name and are evaluated either on plain arrays or as jets, which gives
every derivative used elsewhere a single authoritative formula.
"""

from __future__ import annotations

import math

import numpy as np

JET_ORDER = 4

_FACTORIAL = np.array([math.factorial(m) for m in range(12)], dtype=float)


class SingularJetError(ZeroDivisionError):
    """Division by a jet whose value part vanishes somewhere."""


def _as_batch(value, shape):
    out = np.asarray(value, dtype=float)
    if shape and out.shape != shape:
        out = np.broadcast_to(out, shape).copy()
    return out


class Jet:
    """Truncated Taylor series of one variable, normalized coefficients.

    ``c`` has shape (order+1,) + batch_shape; ``c[m]`` is the m-th
    derivative divided by m!.
    """

    __slots__ = ("c",)

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)
        if self.c.ndim < 1:
            raise ValueError("jet needs a leading coefficient axis")

    # -- constructors -------------------------------------------------

    @classmethod
    def constant(cls, value, order=JET_ORDER):
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape)
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, value, slope, order=JET_ORDER):
        """Jet of the scalar t -> value + slope*t."""
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape)
        c[0] = value
        if order >= 1:
            c[1] = _as_batch(slope, value.shape)
        return cls(c)

    # -- views --------------------------------------------------------

    @property
    def order(self):
        return self.c.shape[0] - 1

    @property
    def value(self):
        return self.c[0]

    def derivative(self, m):
        """Raw m-th derivative (coefficient times m!)."""
        return self.c[m] * _FACTORIAL[m]

    def truncated(self, order):
        if order > self.order:
            raise ValueError("cannot extend a jet by truncation")
        return Jet(self.c[: order + 1].copy())

    # -- ring operations ----------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ValueError("jet order mismatch")
            return other
        return Jet.constant(np.broadcast_to(other, self.c.shape[1:]), self.order)

    def __add__(self, other):
        other = self._coerce(other)
        return Jet(self.c + other.c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, other):
        other = self._coerce(other)
        return Jet(self.c - other.c)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * np.asarray(other, dtype=float))
        if other.order != self.order:
            raise ValueError("jet order mismatch")
        p = self.order
        out = np.zeros(np.broadcast_shapes(self.c.shape, other.c.shape))
        for m in range(p + 1):
            acc = 0.0
            for i in range(m + 1):
                acc = acc + self.c[i] * other.c[m - i]
            out[m] = acc
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)):
            raise TypeError("jet powers must be integers")
        if k < 0:
            return self.reciprocal() ** (-k)
        out = Jet.constant(np.ones(self.c.shape[1:]), self.order)
        for _ in range(int(k)):
            out = out * self
        return out

    # -- elementary functions -------------------------------------------

    def reciprocal(self):
        a = self.c
        if np.any(a[0] == 0.0):
            raise SingularJetError("reciprocal of a jet with zero value part")
        r = np.zeros_like(a)
        inv0 = 1.0 / a[0]
        r[0] = inv0
        for m in range(1, self.order + 1):
            acc = 0.0
            for k in range(1, m + 1):
                acc = acc + a[k] * r[m - k]
            r[m] = -inv0 * acc
        return Jet(r)

    def _sin_cos(self):
        a = self.c
        s = np.zeros_like(a)
        co = np.zeros_like(a)
        s[0] = np.sin(a[0])
        co[0] = np.cos(a[0])
        for m in range(1, self.order + 1):
            accs = 0.0
            accc = 0.0
            for k in range(1, m + 1):
                accs = accs + k * a[k] * co[m - k]
                accc = accc + k * a[k] * s[m - k]
            s[m] = accs / m
            co[m] = -accc / m
        return Jet(s), Jet(co)

    def sin(self):
        return self._sin_cos()[0]

    def cos(self):
        return self._sin_cos()[1]

    def exp(self):
        a = self.c
        e = np.zeros_like(a)
        e[0] = np.exp(a[0])
        for m in range(1, self.order + 1):
            acc = 0.0
            for k in range(1, m + 1):
                acc = acc + k * a[k] * e[m - k]
            e[m] = acc / m
        return Jet(e)


class BiJet:
    """Taylor series truncated in two directions with normalized coefficients.

    ``c`` has shape (P+1, Q+1) + batch_shape; ``c[p, q]`` holds the mixed
    derivative of order p along the first direction and q along the second,
    divided by p! * q!.
    """

    __slots__ = ("c",)

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)
        if self.c.ndim < 2:
            raise ValueError("bijet needs two leading coefficient axes")

    @classmethod
    def constant(cls, value, orders=(2, JET_ORDER)):
        value = np.asarray(value, dtype=float)
        c = np.zeros((orders[0] + 1, orders[1] + 1) + value.shape)
        c[0, 0] = value
        return cls(c)

    @classmethod
    def coordinate(cls, value, slope_a, slope_d, orders=(2, JET_ORDER)):
        """Jet of (s, t) -> value + slope_a*s + slope_d*t."""
        value = np.asarray(value, dtype=float)
        c = np.zeros((orders[0] + 1, orders[1] + 1) + value.shape)
        c[0, 0] = value
        if orders[0] >= 1:
            c[1, 0] = _as_batch(slope_a, value.shape)
        if orders[1] >= 1:
            c[0, 1] = _as_batch(slope_d, value.shape)
        return cls(c)

    @property
    def orders(self):
        return (self.c.shape[0] - 1, self.c.shape[1] - 1)

    @property
    def value(self):
        return self.c[0, 0]

    def derivative(self, p, q):
        """Raw mixed derivative d^{p+q} / ds^p dt^q."""
        return self.c[p, q] * (_FACTORIAL[p] * _FACTORIAL[q])

    def _coerce(self, other):
        if isinstance(other, BiJet):
            if other.orders != self.orders:
                raise ValueError("bijet order mismatch")
            return other
        return BiJet.constant(np.broadcast_to(other, self.c.shape[2:]), self.orders)

    def __add__(self, other):
        other = self._coerce(other)
        return BiJet(self.c + other.c)

    __radd__ = __add__

    def __neg__(self):
        return BiJet(-self.c)

    def __sub__(self, other):
        other = self._coerce(other)
        return BiJet(self.c - other.c)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if not isinstance(other, BiJet):
            return BiJet(self.c * np.asarray(other, dtype=float))
        if other.orders != self.orders:
            raise ValueError("bijet order mismatch")
        return BiJet(_bimul(self.c, other.c, *self.orders))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, BiJet):
            return BiJet(self.c / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)):
            raise TypeError("jet powers must be integers")
        if k < 0:
            return self.reciprocal() ** (-k)
        out = BiJet.constant(np.ones(self.c.shape[2:]), self.orders)
        for _ in range(int(k)):
            out = out * self
        return out

    # -- composition with univariate functions ---------------------------

    def _value_jet(self):
        """The q-row at p = 0, as a univariate jet in the second variable."""
        return Jet(self.c[0].copy())

    def _compose(self, derivative_jets):
        """Evaluate f(self) given jets of f, f', f'', ... at the p=0 row.

        Writes self = A0 + B with B nilpotent in the first variable and
        expands f(A0 + B) = sum_k f^(k)(A0)/k! * B^k truncated at order P.
        """
        P, Q = self.orders
        B = self.c.copy()
        B[0] = 0.0
        shape = np.broadcast_shapes(self.c.shape, (P + 1, Q + 1) + derivative_jets[0].c.shape[1:])
        out = np.zeros(shape)
        out[0] = derivative_jets[0].c
        power = None  # B^k, built incrementally
        for k in range(1, P + 1):
            power = B if power is None else _bimul(power, B, P, Q)
            fk = derivative_jets[k].c / _FACTORIAL[k]
            for p in range(k, P + 1):
                for q in range(Q + 1):
                    acc = out[p, q].copy()
                    for j in range(q + 1):
                        acc = acc + fk[j] * power[p, q - j]
                    out[p, q] = acc
        return BiJet(out)

    def reciprocal(self):
        a0 = self._value_jet()
        r = a0.reciprocal()
        P = self.orders[0]
        derivs = [r]
        sign = 1.0
        power = r
        for k in range(1, P + 1):
            sign = -sign
            power = power * r
            derivs.append(power * (sign * _FACTORIAL[k]))
        return self._compose(derivs)

    def sin(self):
        return self._sin_cos()[0]

    def cos(self):
        return self._sin_cos()[1]

    def _sin_cos(self):
        a0 = self._value_jet()
        s, co = a0._sin_cos()
        cycle = [s, co, -s, -co]
        P = self.orders[0]
        sin_derivs = [cycle[k % 4] for k in range(P + 1)]
        cos_derivs = [cycle[(k + 1) % 4] for k in range(P + 1)]
        return self._compose(sin_derivs), self._compose(cos_derivs)

    def exp(self):
        e = self._value_jet().exp()
        return self._compose([e] * (self.orders[0] + 1))


def _bimul(a, b, P, Q):
    """Truncated 2-D convolution of raw coefficient arrays."""
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    for p in range(P + 1):
        for q in range(Q + 1):
            acc = 0.0
            for i in range(p + 1):
                for j in range(q + 1):
                    acc = acc + a[i, j] * b[p - i, q - j]
            out[p, q] = acc
    return out


# -- generic wrappers usable on jets and plain arrays ---------------------

def jsin(x):
    return x.sin() if isinstance(x, (Jet, BiJet)) else np.sin(x)


def jcos(x):
    return x.cos() if isinstance(x, (Jet, BiJet)) else np.cos(x)


def jexp(x):
    return x.exp() if isinstance(x, (Jet, BiJet)) else np.exp(x)


# -- expression registry ---------------------------------------------------

class UnknownExpressionError(KeyError):
    """Requested expression was never registered."""


_REGISTRY: dict[str, tuple] = {}


def register_expression(name, fn, dim):
    """Register a closed-form expression of ``dim`` coordinates.

    ``fn`` receives one object per coordinate (plain array, Jet or BiJet,
    all interchangeable through jsin/jcos/jexp and arithmetic operators)
    and must return the same kind of object.
    """
    _REGISTRY[name] = (fn, dim)


def expression_dim(name):
    if name not in _REGISTRY:
        raise UnknownExpressionError(name)
    return _REGISTRY[name][1]


def eval_expression(name, points):
    """Plain values of a registered expression at points of shape (n, N)."""
    if name not in _REGISTRY:
        raise UnknownExpressionError(name)
    fn, dim = _REGISTRY[name]
    points = np.asarray(points, dtype=float)
    if points.shape[0] != dim:
        raise ValueError(f"{name} expects {dim} coordinates, got {points.shape[0]}")
    out = fn(*(points[j] for j in range(dim)))
    return np.asarray(out, dtype=float)


def eval_expression_dirjet(name, points, direction, order=JET_ORDER):
    """Jet of a registered expression along x + t*direction."""
    if name not in _REGISTRY:
        raise UnknownExpressionError(name)
    fn, dim = _REGISTRY[name]
    points = np.asarray(points, dtype=float)
    direction = np.asarray(direction, dtype=float)
    coords = [Jet.variable(points[j], direction[j], order) for j in range(dim)]
    out = fn(*coords)
    if not isinstance(out, Jet):
        out = Jet.constant(np.broadcast_to(out, points.shape[1:]), order)
    return out


def eval_expression_jet(name, points, axis, direction, coord_order=2, dir_order=JET_ORDER):
    """BiJet of a registered expression along x + s*e_axis + t*direction."""
    if name not in _REGISTRY:
        raise UnknownExpressionError(name)
    fn, dim = _REGISTRY[name]
    points = np.asarray(points, dtype=float)
    direction = np.asarray(direction, dtype=float)
    orders = (coord_order, dir_order)
    coords = [
        BiJet.coordinate(points[j], 1.0 if j == axis else 0.0, direction[j], orders)
        for j in range(dim)
    ]
    out = fn(*coords)
    if not isinstance(out, BiJet):
        out = BiJet.constant(np.broadcast_to(out, points.shape[1:]), orders)
    return out
