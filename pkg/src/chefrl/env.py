"""Deterministic 2D multi-task stacking environment.

A point gripper moves in the unit square, grasps the red block, and stacks
it on the blue block while a green block sits in the way as a distractor.
Physics are instantaneous-support toy dynamics: no momentum, no continuous
gravity, and the only contact interaction is the gripper pushing the blue
block along the floor.

Contact force is a leaky accumulator fed by the overlap that remains when
a pushed blue block is jammed against a wall or the green block. Sustained
pressing therefore ramps the force up to the termination limit while brief
nudges decay away, and the accumulated value is observable only through
the haptic channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, InputError

NUM_TASKS = 6
TASK_NAMES = ("open", "reach_grasp", "lift", "place", "stack", "stack_leave")
MAIN_TASK = 5  # stack-leave

RED_HALF = 0.04
GREEN_HALF = 0.06
BLUE_HALF = {1: 0.10, 2: 0.05, 3: 0.08, 4: 0.12, 5: 0.06}

GRASP_RADIUS = 0.05
GRASP_APERTURE = 0.3
SNAP_HEIGHT = 0.1
K_PUSH = 10.0
FORCE_DECAY = 0.8
REASON_CODES = {"none": 0, "horizon": 1, "force": 2}
REASON_NAMES = {v: k for k, v in REASON_CODES.items()}


def tol_x(variant: int) -> float:
    """Lateral stacking tolerance: 0.8 x blue half-width."""
    return 0.8 * BLUE_HALF[variant]


@dataclass(frozen=True)
class EnvConfig:
    variant: int = 1
    horizon_steps: int = 200
    dt: float = 0.05
    max_speed: float = 0.5
    force_limit: float = 1.0
    leave_distance: float = 0.2
    include_haptics: bool = True

    def validate(self) -> "EnvConfig":
        if self.variant not in BLUE_HALF:
            raise ConfigurationError(f"variant must be 1..5, got {self.variant}")
        if self.horizon_steps < 1:
            raise ConfigurationError("horizon_steps must be >= 1")
        return self

    @property
    def obs_dim(self) -> int:
        return 11 if self.include_haptics else 10


ACTION_DIM = 3
FULL_OBS_DIM = 11      # layout with the haptic channel
HAPTIC_INDEX = 10


@dataclass(frozen=True)
class WorldState:
    gripper_x: float
    gripper_y: float
    aperture: float
    red_x: float
    red_y: float
    blue_x: float
    blue_y: float
    green_x: float
    green_y: float
    held: bool
    contact_force: float
    step_index: int


def _dist(ax, ay, bx, by):
    return math.hypot(ax - bx, ay - by)


def blue_top(config: EnvConfig) -> float:
    return 2.0 * BLUE_HALF[config.variant]


def reset(config: EnvConfig, seed: int) -> WorldState:
    """Collision-free floor placement, deterministic in (config, seed).

    Variant 2 starts the blue block touching a side wall (picked by seed);
    other variants keep it clear of the walls.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    half = BLUE_HALF[config.variant]
    if config.variant == 2:
        bx = half if rng.integers(0, 2) == 0 else 1.0 - half
    else:
        bx = float(rng.uniform(half + 0.12, 1.0 - half - 0.12))
    red_clear = half + RED_HALF + 0.03
    while True:
        rx = float(rng.uniform(RED_HALF + 0.02, 1.0 - RED_HALF - 0.02))
        if abs(rx - bx) >= red_clear:
            break
    gb_clear = half + GREEN_HALF + 0.06
    gr_clear = RED_HALF + GREEN_HALF + 0.03
    while True:
        gx = float(rng.uniform(GREEN_HALF + 0.02, 1.0 - GREEN_HALF - 0.02))
        if abs(gx - bx) >= gb_clear and abs(gx - rx) >= gr_clear:
            break
    grip_x = float(rng.uniform(0.05, 0.95))
    grip_y = float(rng.uniform(0.25, 0.90))
    return WorldState(grip_x, grip_y, 1.0, rx, RED_HALF, bx, half,
                      gx, GREEN_HALF, False, 0.0, 0)


def _on_blue(state: WorldState, config: EnvConfig) -> bool:
    return (not state.held
            and abs(state.red_y - (blue_top(config) + RED_HALF)) <= 1e-9
            and abs(state.red_x - state.blue_x) <= tol_x(config.variant))


def step(state: WorldState, action, config: EnvConfig):
    """Advance one control step.

    Returns (next_state, rewards[6], terminated, termination_reason).
    """
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (ACTION_DIM,):
        raise InputError(f"action must have shape ({ACTION_DIM},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("non-finite action component")
    v = np.clip(a, -1.0, 1.0)

    move = config.max_speed * config.dt
    gx = min(max(state.gripper_x + v[0] * move, 0.0), 1.0)
    gy = min(max(state.gripper_y + v[1] * move, 0.0), 1.0)
    ap = min(max(state.aperture + v[2] * config.dt, 0.0), 1.0)

    was_on_blue = _on_blue(state, config)
    held = state.held
    red_x, red_y = state.red_x, state.red_y
    released = False
    if held:
        if ap < GRASP_APERTURE:
            red_x, red_y = gx, gy
        else:
            held = False
            released = True
    elif ap < GRASP_APERTURE and _dist(gx, gy, red_x, red_y) <= GRASP_RADIUS:
        held = True
        red_x, red_y = gx, gy

    # Gripper (or a held red block, same point) pushing the blue block.
    half = BLUE_HALF[config.variant]
    bx = state.blue_x
    top = blue_top(config)
    overlap = 0.0
    pen = half - abs(gx - bx)
    if pen > 0.0 and gy < top:
        d = 1.0 if bx >= gx else -1.0
        target = bx + d * pen
        lo, hi = half, 1.0 - half
        gap = half + GREEN_HALF
        if state.green_x > bx:
            hi = min(hi, state.green_x - gap)
        else:
            lo = max(lo, state.green_x + gap)
        new_bx = min(max(target, lo), hi)
        overlap = abs(target - new_bx)
        bx = new_bx
    force = FORCE_DECAY * state.contact_force + K_PUSH * overlap
    if force < 1e-9:
        force = 0.0

    if was_on_blue:
        red_x = red_x + (bx - state.blue_x)
        red_y = top + RED_HALF
    if released:
        if abs(red_x - bx) <= tol_x(config.variant) and 0.0 <= red_y - top <= SNAP_HEIGHT:
            red_x, red_y = bx, top + RED_HALF  # settle centered on blue
        else:
            red_y = RED_HALF  # drop to floor

    step_index = state.step_index + 1
    next_state = WorldState(gx, gy, ap, red_x, red_y, bx, state.blue_y,
                            state.green_x, state.green_y, held, force,
                            step_index)
    if force > config.force_limit:
        terminated, reason = True, "force"
    elif step_index >= config.horizon_steps:
        terminated, reason = True, "horizon"
    else:
        terminated, reason = False, "none"
    return next_state, reward_vector(next_state, config), terminated, reason


def reward_vector(state: WorldState, config: EnvConfig) -> np.ndarray:
    """Six task rewards in [0,1]: open, reach-grasp, lift, place, stack, stack-leave."""
    top = blue_top(config)
    d_grip_red = _dist(state.gripper_x, state.gripper_y, state.red_x, state.red_y)
    open_r = state.aperture
    reach = 0.5 * (1.0 - math.tanh(d_grip_red / 0.25)) + (0.5 if state.held else 0.0)
    lift = min(max((state.red_y - RED_HALF) / 0.26, 0.0), 1.0)
    d_place = _dist(state.red_x, state.red_y, state.blue_x, top + RED_HALF)
    place = 1.0 - math.tanh(d_place / 0.1)
    stack = 1.0 if _on_blue(state, config) else 0.0
    leave = stack if d_grip_red >= config.leave_distance else 0.0
    return np.array([open_r, reach, lift, place, stack, leave], dtype=np.float64)


def observe(state: WorldState, config: EnvConfig) -> np.ndarray:
    base = [state.gripper_x, state.gripper_y, state.aperture,
            state.red_x, state.red_y, 1.0 if state.held else 0.0,
            state.blue_x, state.blue_y, state.green_x, state.green_y]
    if config.include_haptics:
        base.append(state.contact_force)
    return np.array(base, dtype=np.float32)


def success(episode) -> bool:
    """True iff the final step's stack-leave reward equals 1."""
    steps = episode.steps
    if not steps:
        raise InputError("empty episode")
    return float(steps[-1].rewards[MAIN_TASK]) == 1.0


class PlanarStacker:
    """Single-owner convenience wrapper around the pure functions."""

    def __init__(self, config: EnvConfig):
        self.config = config.validate()
        self.state: WorldState | None = None

    def reset(self, seed: int) -> WorldState:
        self.state = reset(self.config, seed)
        return self.state

    def step(self, action):
        out = step(self.state, action, self.config)
        self.state = out[0]
        return out

    def observe(self) -> np.ndarray:
        return observe(self.state, self.config)
