"""Problem definitions, sources, residual assembly, cost, validation.

Sources are checked against the printed closed-form g/h for the 2D case
(typed here verbatim) and against directional finite differences; the
analytic solutions against values frozen from a 30-digit evaluation.
"""
import math

import numpy as np
import pytest

from poissonmlp import geometry, problems, slotnet
from poissonmlp.geometry import DirectionField
from poissonmlp.problems import (
    CostBreakdown,
    ProblemSpec,
    ResidualCost,
    ResidualJets,
    analytic_solution,
    cost_from_jets,
    exact_output_slots,
    reduced_solution,
    residual_order0,
    source_jets,
    source_values,
    validate,
)

ALL_SPECS = [
    ProblemSpec(kind, n) for kind in ("linear", "nonlinear") for n in (2, 3, 4, 5)
]

# u_a at fixed points, frozen from a 30-digit evaluation (mpmath)
FROZEN_VALUES = [
    (ProblemSpec("linear", 2), (0.5, 0.5), 0.49065200574982039951),
    (ProblemSpec("linear", 3), (0.5, 0.25, 0.3), 0.37886265650217112494),
    (ProblemSpec("linear", 4), (0.5, 0.25, 0.3, -0.2), 0.2781141096650762933),
    (ProblemSpec("linear", 5), (0.5, 0.25, 0.3, -0.2, 0.1), 0.27185333123970581977),
    (
        ProblemSpec("linear", 5, "cubic_x3"),
        (0.5, 0.25, 0.3, -0.2, 0.1),
        0.23927708123970581977,
    ),
]


def printed_g_2d(x1, x2):
    """The closed-form 2D linear source, typed from its printed expression."""
    return (
        -10 / 17 * (-(x1**2) - x2**2 + 1) * np.sin(x2)
        - 40 / 17 * x1 * (2 * x1 - x2 * np.sin(x1) + 1)
        + 10 / 17 * (-(x1**2) - x2**2 + 1) * (2 - x2 * np.cos(x1))
        - 40 / 17 * x2 * (np.cos(x1) + np.cos(x2))
        - 40 / 17 * (x1**2 + x1 + np.sin(x2) + x2 * np.cos(x1))
    )


def printed_h_2d(x1, x2):
    return printed_g_2d(x1, x2) + 100 / 289 * (-(x1**2) - x2**2 + 1) ** 2 * (
        x1**2 + x1 + np.sin(x2) + x2 * np.cos(x1)
    ) ** 2


def test_problem_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec("quadratic", 2)
    with pytest.raises(ValueError):
        ProblemSpec("linear", 6)
    with pytest.raises(ValueError):
        ProblemSpec("linear", 2, "cubic_x3")  # needs x3
    with pytest.raises(ValueError):
        ProblemSpec("linear", 3, "quartic")
    assert ProblemSpec("linear", 2).prefactor == pytest.approx(10 / 17)
    assert ProblemSpec("nonlinear", 5).prefactor == pytest.approx(7 / 9)


def test_analytic_solution_frozen_values():
    for spec, pt, want in FROZEN_VALUES:
        got = analytic_solution(spec, np.array(pt)[:, None])[0]
        assert got == pytest.approx(want, rel=1e-14), spec


def test_analytic_solution_boundary_and_origin():
    for spec in ALL_SPECS:
        origin = np.zeros((spec.n, 1))
        assert analytic_solution(spec, origin)[0] == 0.0
        rng = np.random.default_rng(3)
        on_sphere = rng.normal(size=(spec.n, 8))
        on_sphere /= np.linalg.norm(on_sphere, axis=0)
        assert np.max(np.abs(analytic_solution(spec, on_sphere))) < 1e-14


def test_reduced_solution_relates_to_full():
    spec = ProblemSpec("nonlinear", 4)
    pts = geometry.ball_sample(4, 50, seed=8)
    u = analytic_solution(spec, pts)
    v = reduced_solution(spec, pts)
    assert np.allclose(u, v * (1 - (pts**2).sum(axis=0)), rtol=1e-13)


def test_source_matches_printed_2d_formulas():
    pts = geometry.ball_sample(2, 200, seed=5)
    g = source_values(ProblemSpec("linear", 2), pts)
    h = source_values(ProblemSpec("nonlinear", 2), pts)
    assert np.allclose(g, printed_g_2d(pts[0], pts[1]), rtol=1e-12)
    assert np.allclose(h, printed_h_2d(pts[0], pts[1]), rtol=1e-12)
    # printed value at the origin
    g0 = source_values(ProblemSpec("linear", 2), np.zeros((2, 1)))[0]
    assert g0 == pytest.approx(20 / 17, rel=1e-14)


def test_nonlinear_source_is_g_plus_ua_squared():
    for n in (2, 3, 4, 5):
        pts = geometry.ball_sample(n, 40, seed=n)
        g = source_values(ProblemSpec("linear", n), pts)
        h = source_values(ProblemSpec("nonlinear", n), pts)
        ua = analytic_solution(ProblemSpec("linear", n), pts)
        assert np.allclose(h - g, ua**2, rtol=1e-12, atol=1e-15)


def test_source_jets_zero_direction():
    spec = ProblemSpec("nonlinear", 3)
    pts = geometry.ball_sample(3, 20, seed=1)
    jet = source_jets(spec, pts, np.zeros_like(pts))
    assert np.allclose(jet.c[0], source_values(spec, pts), rtol=1e-12)
    assert np.max(np.abs(jet.c[1:])) == 0.0


def test_source_jets_match_directional_differences():
    spec = ProblemSpec("linear", 2)
    pts = geometry.ball_sample(2, 30, seed=2) * 0.8
    d = geometry.direction_pairs(2, 30, rng=4).xi
    jet = source_jets(spec, pts, d)
    tau = 1e-4
    up = printed_g_2d(*(pts + tau * d))
    down = printed_g_2d(*(pts - tau * d))
    mid = printed_g_2d(*pts)
    fd1 = (up - down) / (2 * tau)
    fd2 = (up - 2 * mid + down) / tau**2
    assert np.allclose(jet.derivative(1), fd1, rtol=1e-5, atol=1e-7)
    assert np.allclose(jet.derivative(2), fd2, rtol=1e-4, atol=1e-6)


def _annihilation_rms(spec, n_pts=100, order=4, seed=0):
    pts = geometry.ball_sample(spec.n, n_pts, seed=seed)
    dirs = geometry.direction_pairs(spec.n, n_pts, rng=seed + 1)
    cost = ResidualCost(spec, pts, dirs, order)
    out = exact_output_slots(spec, pts, dirs, order)
    rj = cost.residual_jets(out)
    return math.sqrt(float(np.mean(rj.xi**2 + rj.zeta**2)))


def test_exact_solution_annihilates_residual():
    specs = ALL_SPECS + [ProblemSpec("linear", 5, "cubic_x3")]
    for spec in specs:
        assert _annihilation_rms(spec) < 1e-10, spec


def test_zero_network_residual_is_minus_source():
    spec = ProblemSpec("linear", 3)
    pts = geometry.ball_sample(3, 25, seed=9)
    dirs = geometry.direction_pairs(3, 25, rng=10)
    ws = slotnet.WeightSet(
        [np.zeros((4, 3)), np.zeros((1, 4))], [np.zeros(4), np.zeros(1)]
    )
    out = slotnet.forward(pts, dirs.xi, dirs.zeta, ws, 4)
    # v is a constant sigma(0)-combination = 0 here, so V = -g, V_xi = -g_xi
    cost = ResidualCost(spec, pts, dirs, 4)
    rj = cost.residual_jets(out)
    g = source_jets(spec, pts, dirs.xi)
    assert np.allclose(rj.xi[0], -g.derivative(0), rtol=1e-12)
    assert np.allclose(rj.xi[1], -g.derivative(1), rtol=1e-12, atol=1e-13)


def test_residual_jets_lane_zero_coefficients_agree():
    spec = ProblemSpec("nonlinear", 2)
    pts = geometry.ball_sample(2, 15, seed=12)
    dirs = geometry.direction_pairs(2, 15, rng=13)
    ws = slotnet.init_weights((2, 6, 1), seed=3)
    out = slotnet.forward(pts, dirs.xi, dirs.zeta, ws, 3)
    cost = ResidualCost(spec, pts, dirs, 3)
    rj = cost.residual_jets(out)
    assert np.array_equal(rj.xi[0], rj.zeta[0])


def test_residual_jet_matches_residual_at_shifted_points():
    # first directional derivative vs FD of the order-0 residual field
    spec = ProblemSpec("nonlinear", 2)
    pts = geometry.ball_sample(2, 20, seed=21) * 0.9
    dirs = geometry.direction_pairs(2, 20, rng=22)
    ws = slotnet.init_weights((2, 8, 8, 1), seed=5)
    out = slotnet.forward(pts, dirs.xi, dirs.zeta, ws, 2)
    rj = ResidualCost(spec, pts, dirs, 2).residual_jets(out)
    tau = 1e-4
    up = residual_order0(spec, ws, pts + tau * dirs.xi)
    down = residual_order0(spec, ws, pts - tau * dirs.xi)
    fd = (up - down) / (2 * tau)
    assert np.allclose(rj.xi[1], fd, rtol=1e-5)


def test_cost_from_hand_set_jets():
    # single point: V = 1, V_xi = 2, V_zeta = 0, rest 0, s = 2 -> e2 = 5
    xi = np.array([[1.0], [2.0], [0.0]])
    zeta = np.array([[1.0], [0.0], [0.0]])
    bd = cost_from_jets(ResidualJets(xi, zeta))
    assert bd.value == pytest.approx(5.0)
    assert bd.terms == pytest.approx([1.0, 4.0, 0.0])
    assert bd.rms_v0 == pytest.approx(1.0)


def test_cost_invariant_under_duplication():
    xi = np.array([[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]])
    zeta = xi * 0.5
    zeta[0] = xi[0]
    bd1 = cost_from_jets(ResidualJets(xi, zeta))
    bd2 = cost_from_jets(ResidualJets(np.tile(xi, 2), np.tile(zeta, 2)))
    assert bd1.value == pytest.approx(bd2.value, rel=1e-14)


def test_exact_slots_give_zero_cost():
    spec = ProblemSpec("linear", 2)
    pts = geometry.ball_sample(2, 30, seed=14)
    dirs = geometry.direction_pairs(2, 30, rng=15)
    cost = ResidualCost(spec, pts, dirs, 4)
    out = exact_output_slots(spec, pts, dirs, 4)
    sums, _ = cost.evaluate(out, slice(0, 30), need_seed=False)
    value, bd = cost.finalize(sums)
    assert value < 1e-20
    assert bd.rms_v0 < 1e-10


def test_residual_cost_gradient_matches_finite_differences():
    # the real training cost through the taped reverse pass
    spec = ProblemSpec("nonlinear", 2)
    pts = geometry.ball_sample(2, 7, seed=30)
    dirs = geometry.direction_pairs(2, 7, rng=31)
    ws = slotnet.init_weights((2, 7, 6, 1), seed=32)
    for s in (2, 4):
        cost = ResidualCost(spec, pts, dirs, s)
        _, _, grad = slotnet.cost_gradient(pts, dirs.xi, dirs.zeta, ws, s, cost)
        rng = np.random.default_rng(33)
        h = 1e-6
        worst = 0.0
        for _ in range(12):
            l = int(rng.integers(len(ws.weights)))
            i = int(rng.integers(ws.weights[l].shape[0]))
            j = int(rng.integers(ws.weights[l].shape[1]))
            orig = ws.weights[l][i, j]
            ws.weights[l][i, j] = orig + h
            up, _ = slotnet.cost_value(pts, dirs.xi, dirs.zeta, ws, s, cost)
            ws.weights[l][i, j] = orig - h
            down, _ = slotnet.cost_value(pts, dirs.xi, dirs.zeta, ws, s, cost)
            ws.weights[l][i, j] = orig
            fd = (up - down) / (2 * h)
            rel = abs(grad.weights[l][i, j] - fd) / max(abs(fd), 1e-8)
            worst = max(worst, rel)
        assert worst < 1e-5, s


def test_order_mismatch_raises():
    spec = ProblemSpec("linear", 2)
    pts = geometry.ball_sample(2, 5, seed=1)
    dirs = geometry.direction_pairs(2, 5, rng=2)
    ws = slotnet.init_weights((2, 4, 1), seed=0)
    out = slotnet.forward(pts, dirs.xi, dirs.zeta, ws, 2)
    cost = ResidualCost(spec, pts, dirs, 4)
    with pytest.raises(ValueError):
        cost.residual_jets(out)
    with pytest.raises(ValueError):
        ResidualCost(spec, pts, dirs, 5)


def test_validate_matches_direct_computation():
    spec = ProblemSpec("linear", 2)
    ws = slotnet.init_weights((2, 10, 1), seed=6)
    res = validate(spec, ws, n_test=500, seed=7, chunk_size=128)
    pts = geometry.ball_sample(2, 500, seed=7)
    v = slotnet.evaluate_plain(pts, ws)
    u = v * (1 - (pts**2).sum(axis=0))
    eps = np.abs(u - analytic_solution(spec, pts))
    assert res.eps_max == pytest.approx(float(eps.max()), rel=1e-12)
    assert res.eps_median == pytest.approx(float(np.median(eps)), rel=1e-12)
    assert res.n_test == 500
