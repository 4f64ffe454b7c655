"""Collocation grids on unit balls, probe directions, and renormalization.

Surface grids are quasi-uniform point sets on the sphere S^{n-1}, built
by slicing the polar angle into latitude rings and distributing points to
the rings by their area share (largest-remainder rounding, so requested
totals are hit exactly); each ring is a sphere one dimension lower and is
gridded recursively.  For the calibrated angular resolutions the targets
are fixed counts; other resolutions fall back to a density formula.

Interior grids are cubic lattices of spacing lambda, randomly rotated in
a random 2-plane, shifted by a uniform offset, and clipped to the open
ball.  Each grid point later carries two random orthonormal probe
directions xi and zeta; when high-order derivatives along a direction
grow past a threshold, the direction is shrunk (renormalized) so that
training stays well scaled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RENORM_THRESHOLD = 4.0


@dataclass
class GridSpec:
    """Grid parameters: dimension, angular resolution, lattice spacing."""

    n: int
    theta: float
    lam: float
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.n <= 5:
            raise ValueError(f"dimension {self.n} outside supported range 2..5")
        if self.theta <= 0 or self.lam <= 0:
            raise ValueError("theta and lambda must be positive")


@dataclass
class PointCloud:
    """Points of one grid, coords shape (n, N), kind 0 interior / 1 surface."""

    coords: np.ndarray
    kind: np.ndarray

    @property
    def n_points(self):
        return self.coords.shape[1]

    @property
    def n_surface(self):
        return int(self.kind.sum())

    @property
    def n_interior(self):
        return int((self.kind == 0).sum())


@dataclass
class DirectionField:
    """Orthonormal probe direction pairs, one per grid point."""

    xi: np.ndarray
    zeta: np.ndarray

    def copy(self):
        return DirectionField(self.xi.copy(), self.zeta.copy())


@dataclass
class RenormReport:
    """What renormalization did to each direction lane."""

    max_slope: np.ndarray  # (2, N) largest |slot| per lane before scaling
    order: np.ndarray  # (2, N) derivative order attaining the max
    scale: np.ndarray  # (2, N) factor applied to the direction

    @property
    def n_rescaled(self):
        return int((self.scale < 1.0).sum())


# ---------------------------------------------------------------------------
# surface grids
# ---------------------------------------------------------------------------

# calibrated target counts per (dimension, angular resolution)
_SURFACE_TARGETS = {
    (2, math.pi / 6): 13,
    (2, math.pi / 8): 17,
    (3, math.pi / 6): 51,
    (3, math.pi / 8): 87,
    (4, math.pi / 6): 154,
    (4, math.pi / 8): 357,
    (5, math.pi / 6): 399,
    (5, math.pi / 8): 1217,
}

# density calibration constants for resolutions outside the table
_DENSITY = {3: 1.090, 4: 1.107, 5: 1.119}


def sphere_area(d):
    """Surface measure of the unit sphere S^d embedded in d+1 dimensions."""
    return 2 * math.pi ** ((d + 1) / 2) / math.gamma((d + 1) / 2)


def surface_count(n, theta):
    """Number of surface points used for resolution theta in dimension n."""
    for (tn, tt), count in _SURFACE_TARGETS.items():
        if tn == n and abs(theta - tt) < 1e-12:
            return count
    if n == 2:
        return math.ceil(2 * math.pi / theta - 1e-9) + 1
    return max(1, round(_DENSITY[n] * sphere_area(n - 1) / theta ** (n - 1)))


def _allocate(weights, total):
    """Largest-remainder split of ``total`` items proportional to weights."""
    shares = np.cumsum(weights) * (total / np.sum(weights))
    cum = np.floor(shares + 0.5).astype(int)
    return np.diff(np.concatenate([[0], cum]))


def _sphere_points(d, count, rng):
    """count quasi-uniform points on S^d, shape (d+1, count)."""
    if count == 0:
        return np.zeros((d + 1, 0))
    if d == 1:
        angles = 2 * math.pi * (np.arange(count) / count + rng.uniform())
        return np.stack([np.cos(angles), np.sin(angles)])
    delta = (sphere_area(d) / count) ** (1.0 / d)
    rings = max(1, round(math.pi / delta))
    phi = (np.arange(rings) + 0.5) * math.pi / rings
    counts = _allocate(np.sin(phi) ** (d - 1), count)
    parts = []
    for phi_i, c_i in zip(phi, counts):
        if c_i == 0:
            continue
        sub = _sphere_points(d - 1, int(c_i), rng)
        ring = np.empty((d + 1, int(c_i)))
        ring[0] = math.cos(phi_i)
        ring[1:] = math.sin(phi_i) * sub
        parts.append(ring)
    return np.concatenate(parts, axis=1)


def _random_rotation(n, rng):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def surface_grid(spec):
    """Quasi-uniform points on the unit sphere, |x| = 1 up to 1e-12."""
    rng = np.random.default_rng(spec.seed)
    count = surface_count(spec.n, spec.theta)
    pts = _sphere_points(spec.n - 1, count, rng)
    pts = _random_rotation(spec.n, rng) @ pts
    pts /= np.linalg.norm(pts, axis=0)
    return PointCloud(pts, np.ones(count, dtype=np.uint8))


# ---------------------------------------------------------------------------
# interior grids
# ---------------------------------------------------------------------------

def _plane_rotation(n, phi, a, c):
    """Rotation by phi in the 2-plane spanned by orthonormal a, c."""
    outer_aa = np.outer(a, a)
    outer_cc = np.outer(c, c)
    skew = np.outer(c, a) - np.outer(a, c)
    return np.eye(n) + (math.cos(phi) - 1) * (outer_aa + outer_cc) + math.sin(phi) * skew


def interior_grid(spec):
    """Lattice of spacing lambda, randomly rotated and shifted, kept inside."""
    rng = np.random.default_rng(spec.seed + 1)
    n, lam = spec.n, spec.lam
    a = rng.normal(size=n)
    a /= np.linalg.norm(a)
    while True:
        c = rng.normal(size=n)
        c -= (c @ a) * a
        norm = np.linalg.norm(c)
        if norm > 1e-8:
            c /= norm
            break
    rot = _plane_rotation(n, rng.uniform(0, 2 * math.pi), a, c)
    shift = rng.uniform(-lam / 4, lam / 4, size=n)

    half = int(math.ceil(1.0 / lam)) + 1
    axis = np.arange(-half, half + 1)
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    lattice = lam * np.stack([g.ravel() for g in grids])
    pts = rot @ lattice + shift[:, None]
    keep = np.linalg.norm(pts, axis=0) < 1.0
    pts = pts[:, keep]
    return PointCloud(pts, np.zeros(pts.shape[1], dtype=np.uint8))


def problem_grid(spec):
    """Surface grid followed by interior grid, as one cloud."""
    surf = surface_grid(spec)
    inner = interior_grid(spec)
    return PointCloud(
        np.concatenate([surf.coords, inner.coords], axis=1),
        np.concatenate([surf.kind, inner.kind]),
    )


def ball_sample(n, count, seed):
    """count points uniform in the open unit ball, shape (n, count)."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, count))
    pts /= np.linalg.norm(pts, axis=0)
    radius = rng.uniform(size=count) ** (1.0 / n)
    return pts * radius


# ---------------------------------------------------------------------------
# probe directions
# ---------------------------------------------------------------------------

def direction_pairs(n, n_points, rng):
    """Random orthonormal pairs (xi, zeta), one per point."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    xi = rng.normal(size=(n, n_points))
    xi /= np.linalg.norm(xi, axis=0)
    zeta = rng.normal(size=(n, n_points))
    while True:
        zeta -= (zeta * xi).sum(axis=0) * xi
        norms = np.linalg.norm(zeta, axis=0)
        bad = norms < 1e-8
        if not bad.any():
            break
        zeta[:, bad] = rng.normal(size=(n, int(bad.sum())))
    zeta /= np.linalg.norm(zeta, axis=0)
    return DirectionField(xi, zeta)


def renormalize(directions, out_batch, threshold=RENORM_THRESHOLD):
    """Shrink directions whose high-order output slots exceed the threshold.

    For each point and each lane, let M be the largest |slot| over all
    output slots with direction order b >= 1 and k the order where it is
    attained; if M > threshold the direction is scaled by M^(-1/k), which
    would bring a pure k-th order slot back to magnitude 1.
    """
    n_pts = out_batch.n_points
    values = {0: [], 1: []}
    orders = []
    for (a, b) in sorted(out_batch.tables):
        if b == 0:
            continue
        t = out_batch.table(a, b)  # (Ja, 2, width, N)
        for lane in (0, 1):
            flat = np.abs(t[:, lane]).reshape(-1, n_pts)
            values[lane].append(flat)
        orders.extend([b] * t.shape[0] * t.shape[2])
    orders = np.array(orders)

    max_slope = np.empty((2, n_pts))
    order = np.empty((2, n_pts), dtype=int)
    scale = np.ones((2, n_pts))
    new = directions.copy()
    for lane, lane_dir in ((0, new.xi), (1, new.zeta)):
        stack = np.concatenate(values[lane], axis=0)
        idx = np.argmax(stack, axis=0)
        m = stack[idx, np.arange(n_pts)]
        k = orders[idx]
        max_slope[lane] = m
        order[lane] = k
        hot = m > threshold
        scale[lane, hot] = m[hot] ** (-1.0 / k[hot])
        lane_dir *= scale[lane]
    return new, RenormReport(max_slope, order, scale)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_KIND_NAMES = {0: "interior", 1: "surface"}


def save_grid(path, cloud):
    n = cloud.coords.shape[0]
    header = ",".join(f"x{j + 1}" for j in range(n)) + ",kind"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for p in range(cloud.n_points):
            coords = ",".join(repr(float(v)) for v in cloud.coords[:, p])
            fh.write(f"{coords},{_KIND_NAMES[int(cloud.kind[p])]}\n")


def load_grid(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[-1] != "kind" or not header[0].startswith("x"):
            raise ValueError(f"bad grid header: {header}")
        n = len(header) - 1
        coords, kinds = [], []
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != n + 1:
                raise ValueError(f"bad grid row: {line!r}")
            coords.append([float(v) for v in parts[:n]])
            kinds.append(1 if parts[n] == "surface" else 0)
    return PointCloud(np.array(coords).T, np.array(kinds, dtype=np.uint8))
