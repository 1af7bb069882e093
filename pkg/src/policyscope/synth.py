"""Pendulum rollouts with scripted control and synthetic neurons of known structure.

The pendulum follows the classic-control conventions: ``theta = 0`` is
upright, torque and speed are clipped, and the angle is wrapped to
``(-pi, pi]`` after every step.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import TrajectoryDataset, make_dataset, with_responses

STATE_NAMES = ("theta", "theta_dot")
CONTROLLERS = ("energy_pd", "random", "zero")


@dataclass(frozen=True)
class PendulumParams:
    g: float = 10.0
    m: float = 1.0
    l: float = 1.0
    dt: float = 0.05
    torque_limit: float = 2.0
    speed_limit: float = 8.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v!r}")


@dataclass(frozen=True)
class SwingUpGains:
    """Energy pumping far from upright, PD capture near it."""

    k_energy: float = 1.0
    kp: float = 10.0
    kd: float = 2.0
    capture_angle: float = 0.5


def wrap_angle(x):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - x, 2.0 * np.pi)


def step(theta: float, theta_dot: float, u: float, p: PendulumParams) -> tuple[float, float]:
    u = min(max(u, -p.torque_limit), p.torque_limit)
    acc = 3.0 * p.g / (2.0 * p.l) * math.sin(theta) + 3.0 / (p.m * p.l * p.l) * u
    theta_dot = min(max(theta_dot + acc * p.dt, -p.speed_limit), p.speed_limit)
    theta = float(wrap_angle(theta + theta_dot * p.dt))
    return theta, theta_dot


def energy(theta: float, theta_dot: float, p: PendulumParams) -> float:
    """Mechanical energy of the uniform rod, zero at the hanging rest position."""
    inertia = p.m * p.l * p.l / 3.0
    return 0.5 * inertia * theta_dot**2 + p.m * p.g * p.l / 2.0 * (math.cos(theta) + 1.0)


def energy_pd(theta: float, theta_dot: float, p: PendulumParams, gains: SwingUpGains = SwingUpGains()) -> float:
    if abs(theta) < gains.capture_angle:
        return -gains.kp * theta - gains.kd * theta_dot
    target = p.m * p.g * p.l  # upright at rest
    gap = target - energy(theta, theta_dot, p)
    direction = 1.0 if theta_dot >= 0.0 else -1.0
    return gains.k_energy * gap * direction


def _initial_states(rng: np.random.Generator, episodes: int) -> np.ndarray:
    return np.column_stack([rng.uniform(-np.pi, np.pi, episodes), rng.uniform(-1.0, 1.0, episodes)])


def rollout(
    theta0: float,
    theta_dot0: float,
    horizon: int,
    controller: str = "energy_pd",
    params: PendulumParams = PendulumParams(),
    rng: np.random.Generator | None = None,
    gains: SwingUpGains = SwingUpGains(),
) -> tuple[np.ndarray, np.ndarray]:
    """States (horizon x 2) visited from the initial state and the torques applied."""
    if controller not in CONTROLLERS:
        raise ValueError(f"controller must be one of {CONTROLLERS}, got {controller!r}")
    states = np.empty((horizon, 2))
    actions = np.empty((horizon, 1))
    th, thd = float(wrap_angle(theta0)), float(theta_dot0)
    for t in range(horizon):
        states[t] = th, thd
        if controller == "energy_pd":
            u = energy_pd(th, thd, params, gains)
        elif controller == "random":
            u = float(rng.uniform(-params.torque_limit, params.torque_limit))
        else:
            u = 0.0
        u = min(max(u, -params.torque_limit), params.torque_limit)
        actions[t, 0] = u
        th, thd = step(th, thd, u, params)
    return states, actions


def generate_pendulum(
    params: PendulumParams = PendulumParams(),
    controller: str = "energy_pd",
    episodes: int = 1,
    horizon: int = 200,
    seed: int = 0,
    initial_state: tuple[float, float] | None = None,
    gains: SwingUpGains = SwingUpGains(),
) -> TrajectoryDataset:
    """Closed-loop pendulum rollouts with the state recorded as a single "neuron".

    Episode ``k`` draws its initial state and random torques from a
    generator seeded with ``(seed, k)``.  With ``initial_state`` every
    episode starts there instead.  The placeholder response column is
    replaced by :func:`attach_neurons`.
    """
    if episodes < 1 or horizon < 1:
        raise ValueError("episodes and horizon must be >= 1")
    eps = []
    for k in range(episodes):
        rng = np.random.default_rng([seed, k])
        start = _initial_states(rng, 1)[0] if initial_state is None else initial_state
        states, actions = rollout(start[0], start[1], horizon, controller, params, rng, gains)
        eps.append((states, np.zeros((horizon, 1)), actions))
    return make_dataset(eps, STATE_NAMES, ("placeholder",))


# --------------------------------------------------------------------------
# synthetic neurons
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NeuronSpec:
    """A response function of (theta, theta_dot) drawn from a small catalogue.

    ``kind`` is one of ``sign_split`` (args: dim, threshold),
    ``quadrant_code``, ``affine_mix`` (args: w_theta, w_theta_dot, bias),
    ``constant`` (args: value) and ``noisy`` (args: sigma; wraps ``base``).
    """

    name: str
    kind: str
    args: tuple = ()
    base: "NeuronSpec | None" = None

    def response(self, states: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        th, thd = states[:, 0], states[:, 1]
        if self.kind == "sign_split":
            dim, c = self.args
            return (states[:, int(dim)] > c).astype(np.float64)
        if self.kind == "quadrant_code":
            return 2.0 * (th > 0) + (thd > 0)
        if self.kind == "affine_mix":
            w0, w1, b = self.args
            return w0 * th + w1 * thd + b
        if self.kind == "constant":
            return np.full(len(states), float(self.args[0]))
        if self.kind == "noisy":
            if rng is None:
                raise ValueError("noisy neurons need a random generator")
            return self.base.response(states, rng) + rng.normal(0.0, self.args[0], len(states))
        raise ValueError(f"unknown neuron kind {self.kind!r}")


def sign_split(dim: int, c: float = 0.0, name: str | None = None) -> NeuronSpec:
    return NeuronSpec(name or f"sign_{STATE_NAMES[dim]}", "sign_split", (dim, c))


def quadrant_code(name: str = "quadrant") -> NeuronSpec:
    return NeuronSpec(name, "quadrant_code")


def affine_mix(w_theta: float, w_theta_dot: float, bias: float = 0.0, name: str | None = None) -> NeuronSpec:
    return NeuronSpec(name or f"mix({w_theta:g},{w_theta_dot:g},{bias:g})", "affine_mix", (w_theta, w_theta_dot, bias))


def constant(value: float = 0.0, name: str = "constant") -> NeuronSpec:
    return NeuronSpec(name, "constant", (value,))


def noisy(base: NeuronSpec, sigma: float, name: str | None = None) -> NeuronSpec:
    return NeuronSpec(name or f"{base.name}~{sigma:g}", "noisy", (sigma,), base)


_NAMED: dict[str, Callable[[], NeuronSpec]] = {
    "theta": lambda: affine_mix(1.0, 0.0, name="theta"),
    "theta_dot": lambda: affine_mix(0.0, 1.0, name="theta_dot"),
    "theta+theta_dot": lambda: affine_mix(1.0, 1.0, name="theta+theta_dot"),
    "theta-theta_dot": lambda: affine_mix(1.0, -1.0, name="theta-theta_dot"),
    "quadrant": quadrant_code,
    "sign_theta": lambda: sign_split(0),
    "sign_theta_dot": lambda: sign_split(1),
    "constant": constant,
}


def parse_neuron(token: str) -> NeuronSpec:
    """Parse a CLI neuron token such as ``quadrant``, ``theta~0.1`` or ``sign_theta_dot``."""
    m = re.fullmatch(r"(?P<base>[^~]+)(?:~(?P<sigma>[0-9.eE+-]+))?", token.strip())
    if not m or m["base"] not in _NAMED:
        raise ValueError(f"unknown neuron {token!r}; choose from {sorted(_NAMED)} (optionally with ~sigma)")
    spec = _NAMED[m["base"]]()
    if m["sigma"] is not None:
        spec = noisy(spec, float(m["sigma"]), name=token.strip())
    return spec


def attach_neurons(ds: TrajectoryDataset, specs: Sequence[NeuronSpec], seed: int = 0) -> TrajectoryDataset:
    """Replace the responses with the given synthetic neurons (states untouched)."""
    if not specs:
        raise ValueError("need at least one neuron spec")
    rng = np.random.default_rng(seed)
    responses = [np.column_stack([s.response(ep.states, rng) for s in specs]) for ep in ds.episodes]
    return with_responses(ds, responses, [s.name for s in specs])
