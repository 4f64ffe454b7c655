"""Run configurations: a flat key = value text format and built-in presets.

The format is one ``key = value`` pair per line plus one ``phase = ...``
line per training phase, e.g.::

    kind = linear
    dimension = 2
    topology = 2,96,96,96,96,96,96,1
    theta = pi/6
    lam = 0.3333333333333333
    phase = order=4 delta0=0.0002 intervals=1000:200:reset,1000:200

Interval syntax is ``epochs:r_int`` with an optional ``:reset`` suffix for
a step reset at the interval's end.
"""
import math
from dataclasses import dataclass, replace

from .trainer import Interval, PhaseConfig

VALID_KINDS = ("linear", "nonlinear")


@dataclass
class RunConfig:
    """Everything one experiment needs, with validated fields."""

    kind: str
    dimension: int
    topology: tuple
    theta: float
    lam: float
    phases: list
    variant: str = "default"
    weight_seed: int = 0
    grid_seed: int = 0
    direction_seed: int = 0
    validation_seed: int = 0
    precision: int = 64
    test_count: int = 4000
    reproducible: bool = False
    chunk_size: int = 1024
    test_chunk_size: int = 500_000
    out: str = None

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"kind must be one of {VALID_KINDS}, got {self.kind!r}")
        if not 2 <= self.dimension <= 5:
            raise ValueError(f"dimension {self.dimension} outside 2..5")
        self.topology = tuple(int(w) for w in self.topology)
        if self.topology[0] != self.dimension:
            raise ValueError(
                f"topology input width {self.topology[0]} != dimension {self.dimension}"
            )
        if self.topology[-1] != 1:
            raise ValueError("topology must end with a single output")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")
        if self.theta <= 0 or self.lam <= 0:
            raise ValueError("theta and lam must be positive")
        if self.test_count <= 0:
            raise ValueError("test_count must be positive")
        if not self.phases:
            raise ValueError("at least one phase is required")
        self.phases = [
            p if isinstance(p, PhaseConfig) else PhaseConfig(**p) for p in self.phases
        ]

    def copy(self, **overrides):
        return replace(self, **overrides)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def _format_interval(it):
    base = f"{it.epochs}:{it.r_int}"
    return base + ":reset" if it.reset_at_end else base


def _parse_interval(text):
    parts = text.split(":")
    if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] != "reset"):
        raise ValueError(f"bad interval {text!r}; expected epochs:r_int[:reset]")
    return Interval(int(parts[0]), int(parts[1]), len(parts) == 3)


def _format_phase(phase):
    intervals = ",".join(_format_interval(i) for i in phase.intervals)
    return f"order={phase.order} delta0={phase.delta0!r} intervals={intervals}"


def _parse_phase(text):
    fields = {}
    for token in text.split():
        key, _, value = token.partition("=")
        if not value:
            raise ValueError(f"bad phase token {token!r}")
        fields[key] = value
    missing = {"order", "delta0", "intervals"} - set(fields)
    if missing:
        raise ValueError(f"phase line missing {sorted(missing)}")
    return PhaseConfig(
        int(fields["order"]),
        float(fields["delta0"]),
        [_parse_interval(t) for t in fields["intervals"].split(",")],
    )


def _parse_angle(text):
    if text.startswith("pi/"):
        return math.pi / float(text[3:])
    return float(text)


def serialize_config(cfg):
    lines = [
        f"kind = {cfg.kind}",
        f"dimension = {cfg.dimension}",
        f"variant = {cfg.variant}",
        f"topology = {','.join(str(w) for w in cfg.topology)}",
        f"theta = {cfg.theta!r}",
        f"lam = {cfg.lam!r}",
        f"weight_seed = {cfg.weight_seed}",
        f"grid_seed = {cfg.grid_seed}",
        f"direction_seed = {cfg.direction_seed}",
        f"validation_seed = {cfg.validation_seed}",
        f"precision = {cfg.precision}",
        f"test_count = {cfg.test_count}",
        f"reproducible = {'true' if cfg.reproducible else 'false'}",
        f"chunk_size = {cfg.chunk_size}",
        f"test_chunk_size = {cfg.test_chunk_size}",
    ]
    if cfg.out is not None:
        lines.append(f"out = {cfg.out}")
    lines.extend(f"phase = {_format_phase(p)}" for p in cfg.phases)
    return "\n".join(lines) + "\n"


_INT_KEYS = {
    "dimension",
    "weight_seed",
    "grid_seed",
    "direction_seed",
    "validation_seed",
    "precision",
    "test_count",
    "chunk_size",
    "test_chunk_size",
}


def parse_config(text):
    fields = {"phases": []}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = key.strip(), value.strip()
        if key == "phase":
            fields["phases"].append(_parse_phase(value))
        elif key in ("theta", "lam"):
            fields[key] = _parse_angle(value)
        elif key in _INT_KEYS:
            fields[key] = int(value)
        elif key == "topology":
            fields[key] = tuple(int(w) for w in value.split(","))
        elif key == "reproducible":
            if value not in ("true", "false"):
                raise ValueError(f"line {lineno}: reproducible must be true/false")
            fields[key] = value == "true"
        elif key in ("kind", "variant", "out"):
            fields[key] = value
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    try:
        return RunConfig(**fields)
    except TypeError as exc:
        raise ValueError(f"incomplete config: {exc}") from None


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(path, cfg):
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))


# ---------------------------------------------------------------------------
# built-in experiment presets
# ---------------------------------------------------------------------------

_TOPOLOGY = {
    2: (2,) + (96,) * 6 + (1,),
    3: (3,) + (96,) * 6 + (1,),
    4: (4,) + (148,) * 6 + (1,),
    5: (5,) + (160,) * 6 + (1,),
}
_TEST_COUNT = {2: 4000, 3: 35_000, 4: 500_000, 5: 5_000_000}

# grid seeds pinned so the (seed-dependent) interior counts give the
# documented preset totals: 40, 64, 159, 343, 520, 1594, 1605, 6543
_GRID_SEED = {
    "2d-linear": 0,
    "2d-nonlinear": 2,
    "3d-linear": 6,
    "3d-nonlinear": 43,
    "4d-linear": 769,
    "4d-nonlinear": 2407,
    "5d-linear": 488,
    "5d-linear-cubic": 488,
    "5d-nonlinear": 2911,
}


def _linear_phases():
    return [
        PhaseConfig(4, 2e-4, [Interval(1000, 200, True), Interval(1000, 200)]),
        PhaseConfig(3, 2e-5, [Interval(2000, 200)]),
        PhaseConfig(2, 2e-5, [Interval(2000, 200)]),
    ]


def _nonlinear_phases():
    return [
        PhaseConfig(
            4,
            2e-4,
            [
                Interval(160, 15, True),
                Interval(340, 50, True),
                Interval(500, 50, True),
                Interval(1000, 50, True),
                Interval(1000, 100),
            ],
        ),
        PhaseConfig(3, 2e-5, [Interval(2000, 200)]),
        PhaseConfig(2, 2e-5, [Interval(2000, 200)]),
    ]


def _cubic_phases():
    # the cubic variant tightens early renormalization and extends phase 1
    return [
        PhaseConfig(4, 2e-4, [Interval(1000, 20, True), Interval(1500, 200)]),
        PhaseConfig(3, 2e-5, [Interval(2000, 200)]),
        PhaseConfig(2, 2e-5, [Interval(2000, 200)]),
    ]


def preset(name):
    """A fresh RunConfig for one of the built-in experiment presets."""
    if name not in _GRID_SEED:
        raise KeyError(f"unknown preset {name!r}; see preset_names()")
    dim = int(name[0])
    kind = "nonlinear" if "nonlinear" in name else "linear"
    variant = "cubic_x3" if name.endswith("cubic") else "default"
    if variant == "cubic_x3":
        phases = _cubic_phases()
    elif kind == "linear":
        phases = _linear_phases()
    else:
        phases = _nonlinear_phases()
    return RunConfig(
        kind=kind,
        dimension=dim,
        variant=variant,
        topology=_TOPOLOGY[dim],
        theta=math.pi / 6 if kind == "linear" else math.pi / 8,
        lam=1 / 3 if kind == "linear" else 1 / 4,
        phases=phases,
        grid_seed=_GRID_SEED[name],
        precision=64 if dim == 2 else 32,
        test_count=_TEST_COUNT[dim],
    )


def preset_names():
    return sorted(_GRID_SEED)
