"""Small deterministic datasets shared by tests and experiment scripts."""

from __future__ import annotations

from .data import GeneratorConfig, TrajectoryNetwork, generate_synthetic
from .tensor import Rng

# Four noise-free vessels weaving +-45 degrees around a southward course at a
# constant 30 s reporting interval. Every target is a deterministic function
# of the window, so a model with enough capacity can drive the error to ~0.
WEAVING_FLEET = GeneratorConfig(
    n_vessels=4,
    max_messages=150,
    dt_sigma=0.0,
    turn_noise=0.0,
    speed_noise=0.0,
    weave_amplitude=45.0,
    weave_period_jitter=0.0,
    heading_range=(178.0, 182.0),
    region=(40.0, 41.0, -60.0, -59.0),
)


def weaving_fleet(seed: int = 2021) -> TrajectoryNetwork:
    return generate_synthetic(WEAVING_FLEET, Rng(seed))
