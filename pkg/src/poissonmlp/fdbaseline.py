"""Second-order finite-difference baseline and its grid-size cost model.

The (2n+1)-point stencil carries a leading discretization error
eps = (h^2/12) sum_j d^4 u/dx_j^4; solving the discretized problem instead
of the exact one shifts the solution by Psi with Delta Psi = eps and
Psi = 0 on the boundary, giving max|u - u~| of about |eps|/(2n).  A disc
solver with Shortley-Weller boundary arms verifies this bound, and the
cost model turns a target error into grid sizes and projected solve times
for dimensions 2 through 5.
"""
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import jets, problems

BALL_VOLUME = {
    n: math.pi ** (n / 2) / math.gamma(n / 2 + 1) for n in range(2, 6)
}
SPHERE_AREA = {n: 2 * math.pi ** (n / 2) / math.gamma(n / 2) for n in range(2, 6)}


# ---------------------------------------------------------------------------
# stencil error estimates
# ---------------------------------------------------------------------------

@dataclass
class StencilEstimate:
    """Leading stencil error eps(x) = (h^2/12) sum_j d^4 u/dx_j^4."""

    h: float
    eps: np.ndarray  # per requested point
    max_abs: float
    leading: float  # |eps| / h^2 at the ball center

    @property
    def center_estimate(self):
        return self.leading * self.h**2


def _fourth_derivative_sum(name, n, points):
    zero = np.zeros_like(points)
    total = 0.0
    for j in range(n):
        bj = jets.eval_expression_jet(name, points, j, zero, 4, 0)
        total = total + bj.derivative(4, 0)
    return total


def stencil_error(spec, h, points):
    """Per-point leading stencil error of the analytic solution."""
    points = np.asarray(points, dtype=float)
    eps = h**2 / 12.0 * _fourth_derivative_sum(spec.solution_name, spec.n, points)
    center = _fourth_derivative_sum(
        spec.solution_name, spec.n, np.zeros((spec.n, 1))
    )[0]
    return StencilEstimate(h, eps, float(np.max(np.abs(eps))), abs(center) / 12.0)


def first_order_term(spec, h, points):
    """Magnitude scale of the substituted equation's first-derivative error.

    The terms 4 x_j dv/dx_j discretize with leading error
    x_j (4 h^2/6) d^3 v/dx_j^3; this returns (4 h^2/6) max_j |d^3 v_a/dx_j^3|
    over the given points.
    """
    points = np.asarray(points, dtype=float)
    zero = np.zeros_like(points)
    worst = 0.0
    for j in range(spec.n):
        bj = jets.eval_expression_jet(spec.reduced_name, points, j, zero, 3, 0)
        worst = max(worst, float(np.max(np.abs(bj.derivative(3, 0)))))
    return 4.0 * h**2 / 6.0 * worst


def psi_bound(n, eps_const):
    """max|u - u~| estimate |eps|/(2n) from the Psi equation."""
    return abs(eps_const) / (2 * n)


# ---------------------------------------------------------------------------
# disc solver (Shortley-Weller arms at the circular boundary)
# ---------------------------------------------------------------------------

@dataclass
class FDSolution:
    """Solution values on the interior lattice nodes of the unit disc."""

    coords: np.ndarray  # (2, N)
    values: np.ndarray  # (N,)
    h: float
    boundary: str
    residual: float

    def max_error(self, reference):
        """Max |values - reference(coords)| for a callable reference."""
        return float(np.max(np.abs(self.values - reference(self.coords))))


def _arm(x, y, dx, dy, h):
    """Distance from (x, y) to the unit circle along the axis (dx, dy)."""
    b = x * dx + y * dy
    c = x * x + y * y - 1.0
    return min(h, -b + math.sqrt(b * b - c))


def solve_poisson_disc(source_fn, h, rtol=1e-12, maxiter=20_000):
    """Solve Delta u = source on the unit disc, u = 0 on the circle.

    Five-point stencil on the lattice {(i h, j h): r < 1} with
    Shortley-Weller shortened arms where a neighbor falls outside; the
    sparse system is solved iteratively to residual <= rtol * ||source||.
    """
    if h > 1 / 8:
        raise ValueError(f"spacing {h} too coarse; need h <= 1/8")
    k = int(math.floor(1.0 / h)) + 1
    idx = np.arange(-k, k + 1)
    node_id = -np.ones((idx.size, idx.size), dtype=int)
    coords = []
    for a, i in enumerate(idx):
        for b, j in enumerate(idx):
            x, y = i * h, j * h
            if x * x + y * y < 1.0:
                node_id[a, b] = len(coords)
                coords.append((x, y))
    coords = np.array(coords).T
    n_nodes = coords.shape[1]

    rows, cols, vals = [], [], []
    for a, i in enumerate(idx):
        for b, j in enumerate(idx):
            me = node_id[a, b]
            if me < 0:
                continue
            x, y = i * h, j * h
            diag = 0.0
            for da, db, dx, dy in ((1, 0, 1, 0), (-1, 0, -1, 0), (0, 1, 0, 1), (0, -1, 0, -1)):
                arm = _arm(x, y, dx, dy, h)
                other = _arm(x, y, -dx, -dy, h)
                coef = 2.0 / (arm * (arm + other))
                diag -= 2.0 / (arm * other) / 2.0  # half per side, both sides visit
                neighbor = node_id[a + da, b + db]
                if arm == h and neighbor >= 0:
                    rows.append(me)
                    cols.append(neighbor)
                    vals.append(coef)
                # else: the arm ends on the circle where u = 0
            rows.append(me)
            cols.append(me)
            vals.append(diag)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))
    rhs = np.asarray(source_fn(coords), dtype=float)

    ilu = spla.spilu(matrix.tocsc(), drop_tol=1e-8, fill_factor=30)
    precond = spla.LinearOperator(matrix.shape, ilu.solve)
    try:
        sol, info = spla.bicgstab(matrix, rhs, rtol=rtol / 10, atol=0.0, maxiter=maxiter, M=precond)
    except TypeError:  # older scipy spells the tolerance "tol"
        sol, info = spla.bicgstab(matrix, rhs, tol=rtol / 10, atol=0.0, maxiter=maxiter, M=precond)
    residual = float(np.linalg.norm(matrix @ sol - rhs))
    bound = rtol * float(np.linalg.norm(rhs))
    if info != 0 or residual > bound:
        raise RuntimeError(
            f"disc solve did not reach residual {bound:.3e}; "
            f"final residual {residual:.3e} (info {info})"
        )
    return FDSolution(coords, sol, h, "shortley-weller", residual)


def fd_solve_disc(spec, h):
    """Solve the 2D linear problem Delta u = g on the disc by stencil."""
    if spec.n != 2 or spec.kind != "linear":
        raise ValueError("the disc solver covers the 2D linear problem only")
    return solve_poisson_disc(lambda pts: problems.source_values(spec, pts), h)


def convergence_study(spec, hs):
    """(h, max error vs analytic) pairs for a sequence of spacings."""
    rows = []
    for h in hs:
        sol = fd_solve_disc(spec, h)
        rows.append((h, sol.max_error(lambda p: problems.analytic_solution(spec, p))))
    return rows


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------

@dataclass
class CostModelReport:
    """Grid sizes and projected times for a target error delta."""

    delta: float
    eps_const: float
    h_exact: float
    h: float
    interior: dict  # n -> point count
    surface: dict
    seconds: dict

    def lines(self):
        out = [
            f"delta: {self.delta!r}",
            f"eps_const: {self.eps_const!r}",
            f"h_exact: {self.h_exact!r}",
            f"h: {self.h!r}",
        ]
        for n in sorted(self.interior):
            out.append(
                f"n={n}: interior {self.interior[n]:.4e}, surface "
                f"{self.surface[n]:.4e}, seconds {self.seconds[n]:.4e}"
            )
        return out


def _round_one_significant(x):
    exp = math.floor(math.log10(abs(x)))
    return round(x, -exp)


def cost_model(delta, hardware_ratio=18.0, reference=(0.34, 1_000_000), eps_const=1.6):
    """Grid spacing, point counts, and projected solve times per dimension.

    The spacing follows from max|u - u~| ~ eps/(2n) <= delta with
    eps ~ eps_const * h^2 for the 5D target problem, rounded to one
    significant figure (the model quotes round numbers); counts use the
    unit-ball volume and sphere area at that shared spacing, and times
    scale a reference solve (seconds, unknowns) by the hardware ratio.
    """
    if delta <= 0:
        raise ValueError("target error delta must be positive")
    h_exact = math.sqrt(2 * 5 * delta / eps_const)
    h = _round_one_significant(h_exact)
    ref_seconds, ref_unknowns = reference
    interior, surface, seconds = {}, {}, {}
    for n in range(2, 6):
        interior[n] = BALL_VOLUME[n] / h**n
        surface[n] = SPHERE_AREA[n] / h ** (n - 1)
        seconds[n] = ref_seconds / hardware_ratio * interior[n] / ref_unknowns
    return CostModelReport(delta, eps_const, h_exact, h, interior, surface, seconds)
