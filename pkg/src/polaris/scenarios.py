"""Synthetic test routes: scene layouts and the drives recorded along them."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2
from .simulator import (FenceSpec, MotionPhase, Scene, SceneSpec, TrajectorySample, TrajectorySpec, WallSpec,
                        generate_scene, generate_trajectory)


@dataclass(frozen=True)
class Drive:
    index: int
    trajectory: tuple[TrajectorySample, ...]
    noise_seed: int

    @property
    def name(self) -> str:
        return f"drive{self.index}"


@dataclass(frozen=True)
class Route:
    name: str
    scene: Scene
    length: float
    corridor: tuple[float, float]  # x-extent of the landmark-sparse section


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag]))


def _wall_run(x0, x1, y, piece=40.0, gap=3.0, **kw) -> list[WallSpec]:
    """Straight wall along y broken into pieces so line landmarks have ends."""
    out, x = [], x0
    while x < x1:
        e = min(x + piece, x1)
        if e - x > 2.0:
            out.append(WallSpec((x, y), (e, y), **kw))
        x = e + gap
    return out


def _poles(rng, x0, x1, y_band, spacing=(8.0, 16.0)) -> list[tuple[float, float]]:
    out = []
    for side in (1.0, -1.0):
        x = x0 + rng.uniform(0, spacing[0])
        while x < x1:
            out.append((float(x), float(side * rng.uniform(*y_band))))
            x += rng.uniform(*spacing)
    return out


def mixed_route(seed: int, length: float = 500.0) -> Route:
    """Walls along the whole road; poles and clutter except in a central corridor."""
    rng = _rng(seed, 0x31)
    c0, c1 = 0.4 * length, 0.6 * length
    walls = _wall_run(-10.0, length + 10.0, 9.0) + _wall_run(-10.0, length + 10.0, -9.0)
    poles = [p for p in _poles(rng, -5.0, length + 5.0, (5.5, 7.5)) if not c0 - 5 <= p[0] <= c1 + 5]
    scene = generate_scene(seed, SceneSpec(walls=tuple(walls), poles=tuple(poles)))
    clutter = []
    for k, (a, b) in enumerate(((-10.0, c0 - 10.0), (c1 + 10.0, length + 10.0))):
        if b - a <= 0:
            continue
        n = int(0.01 * (b - a) * 20)
        for side in (1.0, -1.0):
            clutter.append(generate_scene(seed * 7 + 2 * k + (side > 0), SceneSpec(
                clutter_count=n, clutter_area=(a, 10.5, b, 20.0) if side > 0 else (a, -20.0, b, -10.5))))
    return Route("mixed", Scene.merge([scene] + clutter), length, (c0, c1))


def _reflectors(rng, x0, x1, amplitude, spacing=(6.0, 12.0), y_band=(5.5, 7.5)):
    """Roadside reflectors of mixed scattering types.

    Most are odd-bounce, a quarter pure dihedrals at random orientation and
    the rest mixtures, so each channel subset sees a different share of them.
    """
    out = []
    for x, y in _poles(rng, x0, x1, y_band, spacing):
        u = rng.random()
        th = float(rng.uniform(-math.pi / 2, math.pi / 2))
        if u < 0.6:
            out.append((x, y, amplitude, 0.0, 0.0))
        elif u < 0.85:
            out.append((x, y, 0.0, amplitude, th))
        else:
            out.append((x, y, 0.5 * amplitude, amplitude, th))
    return out


def ablation_route(seed: int, length: float = 150.0) -> Route:
    """Odd-bounce walls along the road, strong odd-bounce poles first, then a
    sparse corridor whose only longitudinal cues are weak reflectors of mixed
    scattering types.
    """
    rng = _rng(seed, 0x32)
    c0, c1 = 0.4 * length, length + 10.0
    walls = _wall_run(-10.0, length + 10.0, 10.0) + _wall_run(-10.0, length + 10.0, -10.0)
    poles = _poles(rng, -5.0, c0 - 5.0, (5.5, 7.5))
    refl = _reflectors(rng, c0, c1, 0.3)
    scene = generate_scene(seed, SceneSpec(walls=tuple(walls), poles=tuple(poles), reflectors=tuple(refl)))
    return Route("ablation", scene, length, (c0, c1))


def fence_route(seed: int, length: float = 60.0) -> Route:
    """A single post fence beside the road with surrounding clutter."""
    spec = SceneSpec(fences=(FenceSpec((0.0, 6.0), (length, 6.0), post_spacing=3.0),),
                     clutter_count=80, clutter_area=(0.0, -15.0, length, 15.0))
    return Route("fence", generate_scene(seed, spec), length, (0.0, 0.0))


def make_route(name: str, seed: int, length: float = 0.0) -> Route:
    builders = {"mixed": (mixed_route, 500.0), "ablation": (ablation_route, 150.0), "fence": (fence_route, 60.0)}
    if name not in builders:
        raise ValueError(f"unknown scenario {name!r}")
    fn, default = builders[name]
    return fn(seed, length if length > 0 else default)


def weave_phases(rng, duration: float, accel: float = 0.3) -> tuple[MotionPhase, ...]:
    """S-shaped lane weaves that return heading and lateral offset to zero."""
    phases, total = [], 0.0
    while total < duration:
        d = float(rng.uniform(4.0, 8.0))
        w = float(rng.uniform(0.004, 0.01)) * (1 if rng.random() < 0.5 else -1)
        a = float(rng.uniform(-accel, accel))
        phases += [MotionPhase(d / 2, a, w), MotionPhase(d, 0.0, -w), MotionPhase(d / 2, -a, w)]
        total += 2 * d
    return tuple(phases)


LANE_OFFSETS = (-1.5, 0.0, 1.5, 0.75, -0.75, 0.4)


def make_drive(route: Route, index: int, seed: int, speed: float = 10.0, rate: float = 10.0,
               start_x: float = -5.0) -> Drive:
    """One pass along the route in lane ``index``; deterministic in (seed, index)."""
    rng = _rng(seed, 0x100 + index)
    duration = math.floor((route.length - start_x - 5.0) / speed * rate) / rate
    lane = LANE_OFFSETS[index % len(LANE_OFFSETS)]
    spec = TrajectorySpec(duration=duration, rate=rate, v0=speed, start=Pose2(start_x, lane, 0.0),
                          phases=weave_phases(rng, duration), v_min=0.6 * speed, v_max=1.4 * speed)
    traj = generate_trajectory(seed * 131 + index, spec)
    noise_seed = int(np.random.SeedSequence([int(seed), index, 0xD81]).generate_state(1)[0])
    return Drive(index, tuple(traj), noise_seed)
