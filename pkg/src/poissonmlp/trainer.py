"""Sign-based adaptive training (RProp family) with phase schedules.

Training runs in phases of decreasing derivative order s = 4, 3, 2; each
phase is a list of epoch intervals with their own renormalization cadence
r_int and optional step reset at the interval end.  Steps are adapted per
parameter without backtracking: on a gradient sign flip the step shrinks
and that parameter skips one update (its stored gradient is zeroed).
"""
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import geometry, problems, slotnet
from .slotnet import WeightSet


class TrainingAbort(RuntimeError):
    """Non-finite gradient or cost; training cannot continue."""

    def __init__(self, message, epoch=None, state=None):
        super().__init__(message)
        self.epoch = epoch
        self.state = state

    def __str__(self):
        base = super().__str__()
        return base if self.epoch is None else f"epoch {self.epoch}: {base}"


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class RPropConfig:
    """Step adaptation factors, initial step, and the weight clamp."""

    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 2e-4
    clamp: float = 20.0

    def __post_init__(self):
        if not self.eta_plus > 1 > self.eta_minus > 0:
            raise ValueError("need eta_plus > 1 > eta_minus > 0")
        if self.delta0 <= 0:
            raise ValueError("delta0 must be positive")


@dataclass
class RPropState:
    """Per-parameter steps and the previous gradient, mirroring a WeightSet."""

    steps_w: list
    steps_b: list
    prev_w: list
    prev_b: list

    @classmethod
    def fresh(cls, ws, delta0):
        return cls(
            [np.full_like(w, delta0) for w in ws.weights],
            [np.full_like(b, delta0) for b in ws.biases],
            [np.zeros_like(w) for w in ws.weights],
            [np.zeros_like(b) for b in ws.biases],
        )

    def reset_steps(self, delta0):
        for arr in self.steps_w + self.steps_b:
            arr[...] = delta0


def _rprop_update(w, g, step, prev, config):
    s = g * prev
    np.multiply(step, config.eta_plus, where=s > 0, out=step)
    flip = s < 0
    np.multiply(step, config.eta_minus, where=flip, out=step)
    g = np.where(flip, 0.0, g)
    w -= np.sign(g) * step
    np.clip(w, -config.clamp, config.clamp, out=w)
    prev[...] = g


def rprop_step(state, gradient, ws, config):
    """One in-place step on every parameter; steps grow on sign agreement,
    shrink on a flip (which also skips that parameter's update)."""
    arrays = list(
        zip(ws.weights + ws.biases,
            gradient.weights + gradient.biases,
            state.steps_w + state.steps_b,
            state.prev_w + state.prev_b)
    )
    names = [f"weights[{l}]" for l in range(len(ws.weights))] + [
        f"thresholds[{l}]" for l in range(len(ws.biases))
    ]
    for name, (w, g, step, prev) in zip(names, arrays):
        bad = ~np.isfinite(g)
        if bad.any():
            idx = int(np.argmax(bad))
            raise TrainingAbort(f"non-finite gradient in {name} at flat index {idx}")
        _rprop_update(w, g, step, prev, config)
    return state, ws


# ---------------------------------------------------------------------------
# schedules and logs
# ---------------------------------------------------------------------------

@dataclass
class Interval:
    """A stretch of epochs with one renormalization cadence."""

    epochs: int
    r_int: int
    reset_at_end: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.r_int < 1:
            raise ValueError("interval needs epochs >= 0 and r_int >= 1")


@dataclass
class PhaseConfig:
    """Cost order, initial step, and the interval list of one phase."""

    order: int
    delta0: float
    intervals: list

    def __post_init__(self):
        if not 2 <= self.order <= 4:
            raise ValueError(f"phase order {self.order} outside 2..4")
        self.intervals = [
            i if isinstance(i, Interval) else Interval(*i) for i in self.intervals
        ]

    @property
    def epochs(self):
        return sum(i.epochs for i in self.intervals)


LOG_COLUMNS = ("epoch", "phase", "interval", "cost", "rms_v0", "seconds")


@dataclass
class TrainingLog:
    """Per-epoch monitor rows: epoch,phase,interval,cost,rms_v0,seconds."""

    rows: list = field(default_factory=list)

    def append(self, epoch, phase, interval, cost, rms_v0, seconds):
        if self.rows and epoch <= self.rows[-1][0]:
            raise ValueError("epoch numbering must increase")
        self.rows.append((epoch, phase, interval, cost, rms_v0, seconds))

    def column(self, name):
        return np.array([r[LOG_COLUMNS.index(name)] for r in self.rows])

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(LOG_COLUMNS) + "\n")
            for e, p, i, c, r, t in self.rows:
                fh.write(f"{e},{p},{i},{c!r},{r!r},{t:.3f}\n")


def load_training_log(path):
    log = TrainingLog()
    with open(path) as fh:
        header = fh.readline().strip()
        if header != ",".join(LOG_COLUMNS):
            raise ValueError(f"bad training log header: {header!r}")
        for line in fh:
            e, p, i, c, r, t = line.strip().split(",")
            log.append(int(e), int(p), int(i), float(c), float(r), float(t))
    return log


# ---------------------------------------------------------------------------
# phase and experiment loops
# ---------------------------------------------------------------------------

def _output_slots(points, xi, zeta, ws, order, chunk_size):
    """Forward pass returning only the output slot batch, chunked."""
    n_pts = points.shape[1]
    if chunk_size is None or chunk_size >= n_pts:
        return slotnet.forward(points, xi, zeta, ws, order)
    parts = []
    for c0 in range(0, n_pts, chunk_size):
        cols = slice(c0, min(c0 + chunk_size, n_pts))
        parts.append(slotnet.forward(points[:, cols], xi[:, cols], zeta[:, cols], ws, order))
    tables = {
        key: np.concatenate([p.tables[key] for p in parts], axis=-1)
        for key in parts[0].tables
    }
    return slotnet.SlotBatch(parts[0].n, order, tables, 1, n_pts)


def run_phase(
    phase,
    problem,
    points,
    directions,
    ws,
    *,
    log=None,
    phase_index=0,
    start_epoch=0,
    chunk_size=None,
    record_time=True,
    progress=None,
):
    """Run one phase in place; returns (directions, log).

    Fresh optimizer state starts at the phase's delta0.  Within each
    interval, directions are renormalized at epochs r_int, 2 r_int, ...
    (counted inside the interval) before that epoch's gradient step, via a
    dedicated forward pass; steps reset to delta0 after flagged intervals.
    """
    log = TrainingLog() if log is None else log
    points = getattr(points, "coords", points)
    cost = problems.ResidualCost(problem, points, directions, phase.order, dtype=ws.dtype)
    config = RPropConfig(delta0=phase.delta0)
    state = RPropState.fresh(ws, phase.delta0)
    epoch = start_epoch
    for i_idx, interval in enumerate(phase.intervals):
        for e in range(1, interval.epochs + 1):
            tick = time.perf_counter()
            if e % interval.r_int == 0:
                out = _output_slots(points, directions.xi, directions.zeta, ws, phase.order, chunk_size)
                directions, _ = geometry.renormalize(directions, out)
                cost.refresh_directions(directions)
            value, bd, grad = slotnet.cost_gradient(
                points, directions.xi, directions.zeta, ws, phase.order, cost, chunk_size
            )
            epoch += 1
            if not math.isfinite(value):
                raise TrainingAbort(f"non-finite cost {value}", epoch, state)
            try:
                rprop_step(state, grad, ws, config)
            except TrainingAbort as exc:
                exc.epoch, exc.state = epoch, state
                raise
            seconds = time.perf_counter() - tick if record_time else 0.0
            log.append(epoch, phase_index, i_idx, value, bd.rms_v0, seconds)
            if progress is not None:
                progress(epoch, phase_index, value, bd.rms_v0)
        if interval.reset_at_end:
            state.reset_steps(phase.delta0)
    return directions, log


@dataclass
class ExperimentResult:
    weights: WeightSet
    log: TrainingLog
    validation: object
    directions: object


def save_checkpoint(path, ws, state):
    """Weights followed by a steps block in the same layout."""
    lines = slotnet.weight_lines(ws)
    lines.append("steps:")
    lines.extend(slotnet.weight_lines(WeightSet(state.steps_w, state.steps_b))[1:])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Returns (weights, state); the state's previous gradients are zero."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    cut = lines.index("steps:")
    ws = slotnet.parse_weight_lines(lines[:cut])
    steps = slotnet.parse_weight_lines([lines[0]] + lines[cut + 1 :])
    state = RPropState.fresh(ws, 1.0)
    state.steps_w, state.steps_b = steps.weights, steps.biases
    return ws, state


def run_experiment(cfg, out_dir=None, progress=None):
    """Build grid/directions/network from a run config, train all phases,
    validate, and persist artifacts; returns an ExperimentResult.

    On a training abort the last safe weights (the step that produced the
    bad gradient is never applied) are saved as ``checkpoint.txt`` along
    with the log so far, and the abort is re-raised.
    """
    problem = problems.ProblemSpec(cfg.kind, cfg.dimension, cfg.variant)
    dtype = np.float32 if cfg.precision == 32 else np.float64
    grid = geometry.problem_grid(
        geometry.GridSpec(cfg.dimension, cfg.theta, cfg.lam, cfg.grid_seed)
    )
    points = grid.coords
    directions = geometry.direction_pairs(cfg.dimension, grid.n_points, cfg.direction_seed)
    ws = slotnet.init_weights(cfg.topology, cfg.weight_seed, dtype)
    log = TrainingLog()
    epoch = 0

    def persist(validation=None):
        if out_dir is None:
            return
        slotnet.save_weights(f"{out_dir}/weights.txt", ws)
        log.save(f"{out_dir}/training_log.csv")
        save_grid_path = f"{out_dir}/grid.csv"
        geometry.save_grid(save_grid_path, grid)
        if validation is not None:
            with open(f"{out_dir}/validation.txt", "w") as fh:
                fh.write(
                    f"eps_max: {validation.eps_max!r}\n"
                    f"eps_median: {validation.eps_median!r}\n"
                    f"n_test: {validation.n_test}\nseed: {validation.seed}\n"
                )

    try:
        for p_idx, phase in enumerate(cfg.phases):
            directions, _ = run_phase(
                phase,
                problem,
                points,
                directions,
                ws,
                log=log,
                phase_index=p_idx,
                start_epoch=epoch,
                chunk_size=cfg.chunk_size,
                record_time=not cfg.reproducible,
                progress=progress,
            )
            epoch = log.rows[-1][0] if log.rows else epoch
    except TrainingAbort as exc:
        persist()
        if out_dir is not None and exc.state is not None:
            save_checkpoint(f"{out_dir}/checkpoint.txt", ws, exc.state)
        raise
    validation = problems.validate(
        problem, ws, cfg.test_count, cfg.validation_seed, chunk_size=cfg.test_chunk_size
    )
    persist(validation)
    return ExperimentResult(ws, log, validation, directions)
