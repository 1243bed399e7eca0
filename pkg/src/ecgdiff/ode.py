"""Dynamical single-lead ECG simulator.

A trajectory rotates around a unit-radius limit cycle in the (x, y) plane;
each revolution is one cardiac cycle.  Five Gaussian event terms anchored
at fixed angles pull the third coordinate z up or down as the phase sweeps
past them, producing the P, Q, R, S and T deflections.  z also relaxes
toward a slowly oscillating baseline level, which models respiratory
baseline wander.  The emitted ECG is z(t) sampled at a fixed rate.

Drug effects are expressed as configurable perturbations of the wave
parameters (angle, amplitude, width) and of the angular velocity, scaled
by a piecewise-linear time profile so the same regimen can be evaluated
at different post-dose time points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

WAVE_NAMES = ("P", "Q", "R", "S", "T")

# Reference morphology: angles (rad), amplitudes, angular widths (rad).
DEFAULT_THETA = (-math.pi / 3.0, -math.pi / 12.0, 0.0, math.pi / 12.0, math.pi / 2.0)
DEFAULT_AMPLITUDE = (1.2, -5.0, 30.0, -7.5, 0.75)
DEFAULT_WIDTH = (0.25, 0.1, 0.1, 0.1, 0.4)


def wrap_angle(angle: float) -> float:
    """Map an angle to the representative range (-pi, pi].

    A signed wrap is required: the Gaussian event terms must see symmetric
    phase differences on both sides of each wave angle, otherwise the
    deflections become one-sided.
    """
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


@dataclass(frozen=True)
class WaveParams:
    """Angles, amplitudes and widths of the five wave events.

    Tuples are ordered P, Q, R, S, T.  Widths must be positive; angles are
    stored wrapped to (-pi, pi].
    """

    theta: tuple[float, ...] = DEFAULT_THETA
    amplitude: tuple[float, ...] = DEFAULT_AMPLITUDE
    width: tuple[float, ...] = DEFAULT_WIDTH

    def __post_init__(self):
        for name in ("theta", "amplitude", "width"):
            values = getattr(self, name)
            if len(values) != 5:
                raise ValueError(f"{name} must have 5 entries (P,Q,R,S,T), got {len(values)}")
            if not all(math.isfinite(v) for v in values):
                raise ValueError(f"non-finite value in {name}: {values}")
        if any(b <= 0.0 for b in self.width):
            raise ValueError(f"wave widths must be positive, got {self.width}")
        object.__setattr__(self, "theta", tuple(wrap_angle(t) for t in self.theta))
        object.__setattr__(self, "amplitude", tuple(float(a) for a in self.amplitude))
        object.__setattr__(self, "width", tuple(float(b) for b in self.width))

    def wave(self, name: str) -> tuple[float, float, float]:
        i = WAVE_NAMES.index(name)
        return self.theta[i], self.amplitude[i], self.width[i]


@dataclass(frozen=True)
class SimConfig:
    """Integration and environment settings for one simulation run."""

    omega: float = 2.0 * math.pi      # angular velocity, rad/s (2*pi = 60 bpm)
    f2: float = 0.25                  # respiratory frequency, Hz
    baseline_amp: float = 0.15        # baseline wander amplitude A, mV
    fs: float = 1000.0                # sampling frequency, Hz
    duration_s: float = 10.0
    initial_state: tuple[float, float, float] = (-1.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.omega > 0.0 and math.isfinite(self.omega)):
            raise ValueError(f"omega must be positive and finite, got {self.omega}")
        if not (self.fs > 0.0 and math.isfinite(self.fs)):
            raise ValueError(f"fs must be positive and finite, got {self.fs}")
        if not (self.duration_s > 0.0 and math.isfinite(self.duration_s)):
            raise ValueError(f"duration_s must be positive and finite, got {self.duration_s}")
        if self.baseline_amp < 0.0 or not math.isfinite(self.baseline_amp):
            raise ValueError(f"baseline amplitude must be >= 0, got {self.baseline_amp}")
        if not all(math.isfinite(v) for v in self.initial_state):
            raise ValueError(f"initial state must be finite, got {self.initial_state}")

    @property
    def bpm(self) -> float:
        return self.omega * 60.0 / (2.0 * math.pi)

    @staticmethod
    def from_bpm(bpm: float, **kwargs) -> "SimConfig":
        return SimConfig(omega=2.0 * math.pi * bpm / 60.0, **kwargs)


@dataclass
class OdeState:
    """One point of the (x, y, z) trajectory at time t (seconds)."""

    x: float
    y: float
    z: float
    t: float = 0.0


@dataclass
class EcgSignal:
    """Uniformly sampled single-lead voltage series.

    meta is a provenance tag: "simulated", "generated" or "ingested".
    """

    samples: np.ndarray
    fs: float
    lead_label: str = "II"
    meta: str = "simulated"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.fs <= 0:
            raise ValueError(f"fs must be positive, got {self.fs}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.fs

    def times_ms(self) -> np.ndarray:
        return np.arange(len(self.samples)) * (1000.0 / self.fs)


def baseline(t: float, amp: float, f2: float) -> float:
    """Baseline wander level at time t: amp * sin(2*pi*f2*t)."""
    return amp * math.sin(2.0 * math.pi * f2 * t)


def derivatives(state: OdeState, params: WaveParams, config: SimConfig) -> tuple[float, float, float]:
    """Right-hand side of the three coupled equations.

    The radial gain alpha = 1 - sqrt(x^2 + y^2) attracts trajectories to the
    unit circle; dz is the sum of the five Gaussian event terms plus the
    relaxation toward the (possibly oscillating) baseline level.
    """
    x, y, z = state.x, state.y, state.z
    alpha = 1.0 - math.hypot(x, y)
    omega = config.omega
    dx = alpha * x - omega * y
    dy = alpha * y + omega * x
    theta = math.atan2(y, x)
    acc = 0.0
    for theta_i, a_i, b_i in zip(params.theta, params.amplitude, params.width):
        dtheta = wrap_angle(theta - theta_i)
        acc += a_i * dtheta * math.exp(-(dtheta * dtheta) / (2.0 * b_i * b_i))
    z0 = baseline(state.t, config.baseline_amp, config.f2)
    dz = -acc - (z - z0)
    return dx, dy, dz


def euler_step(state: OdeState, dt: float, params: WaveParams, config: SimConfig) -> OdeState:
    """Advance the state by one forward-Euler step of size dt."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    dx, dy, dz = derivatives(state, params, config)
    return OdeState(
        x=state.x + dt * dx,
        y=state.y + dt * dy,
        z=state.z + dt * dz,
        t=state.t + dt,
    )


def simulate(
    params: WaveParams,
    config: SimConfig,
    keep_trajectory: bool = False,
) -> tuple[list[OdeState] | None, EcgSignal]:
    """Integrate the system with forward Euler at dt = 1/fs.

    Emits round(duration_s * fs) samples of z, the first taken at t = 0
    before any step.  The trajectory (including the final state) is
    retained only on request.
    """
    n = round(config.duration_s * config.fs)
    dt = 1.0 / config.fs
    x0, y0, z0 = config.initial_state

    # Hot loop in plain floats: ~30 flops/step, so 10 s at 1 kHz stays well
    # under the 1 s runtime budget without vectorization tricks.
    theta_i = params.theta
    a_i = params.amplitude
    inv2b2 = tuple(1.0 / (2.0 * b * b) for b in params.width)
    omega = config.omega
    amp, f2 = config.baseline_amp, config.f2
    two_pi_f2 = 2.0 * math.pi * f2
    exp, hypot, atan2, sin = math.exp, math.hypot, math.atan2, math.sin
    pi, two_pi = math.pi, 2.0 * math.pi

    x, y, z, t = x0, y0, z0, 0.0
    samples = np.empty(n, dtype=np.float64)
    trajectory: list[OdeState] | None = [] if keep_trajectory else None
    for l in range(n):
        samples[l] = z
        if trajectory is not None:
            trajectory.append(OdeState(x, y, z, t))
        alpha = 1.0 - hypot(x, y)
        theta = atan2(y, x)
        acc = 0.0
        for k in range(5):
            d = pi - (pi - (theta - theta_i[k])) % two_pi
            acc += a_i[k] * d * exp(-(d * d) * inv2b2[k])
        zb = amp * sin(two_pi_f2 * t)
        dx = alpha * x - omega * y
        dy = alpha * y + omega * x
        dz = -acc - (z - zb)
        x += dt * dx
        y += dt * dy
        z += dt * dz
        t += dt
    if trajectory is not None:
        trajectory.append(OdeState(x, y, z, t))
    signal = EcgSignal(samples=samples, fs=config.fs, meta="simulated")
    return trajectory, signal


# --------------------------------------------------------------------------
# Drug-effect perturbations


@dataclass(frozen=True)
class ParamDelta:
    """Additive/multiplicative change of a single scalar parameter.

    At effect magnitude m the perturbed value is
    base * (1 + m * (mul - 1)) + m * add, which reduces to the identity at
    m = 0 and to the full (mul, add) change at m = 1.
    """

    add: float = 0.0
    mul: float = 1.0

    def apply(self, base: float, magnitude: float) -> float:
        return base * (1.0 + magnitude * (self.mul - 1.0)) + magnitude * self.add


@dataclass(frozen=True)
class DrugEffectSpec:
    """Parameter perturbations of one treatment regimen.

    wave_deltas maps wave name -> {"theta" | "amplitude" | "width" -> ParamDelta}.
    profile holds (hours, magnitude) breakpoints of a piecewise-linear
    effect-over-time curve; outside the breakpoints the edge values hold.
    """

    regimen_id: str
    wave_deltas: dict = field(default_factory=dict)
    omega_delta: ParamDelta = ParamDelta()
    profile: tuple[tuple[float, float], ...] = ((0.0, 1.0),)

    def __post_init__(self):
        for wave in self.wave_deltas:
            if wave not in WAVE_NAMES:
                raise ValueError(f"unknown wave '{wave}' in regimen '{self.regimen_id}'")
        hours = [h for h, _ in self.profile]
        if sorted(hours) != hours:
            raise ValueError(f"profile breakpoints must be sorted by time: {self.profile}")

    def magnitude(self, time_point_h: float) -> float:
        hours = np.array([h for h, _ in self.profile])
        mags = np.array([m for _, m in self.profile])
        return float(np.interp(time_point_h, hours, mags))


def apply_drug_effect(
    params: WaveParams,
    config: SimConfig,
    spec: DrugEffectSpec,
    time_point_h: float,
) -> tuple[WaveParams, SimConfig]:
    """Perturb wave parameters and angular velocity per the regimen spec.

    The perturbation magnitude is spec.profile evaluated at time_point_h;
    magnitude 0 returns the inputs unchanged.  Raises if the perturbed
    parameters violate the wave-parameter invariants.
    """
    if time_point_h < 0:
        raise ValueError(f"time_point_h must be >= 0, got {time_point_h}")
    m = spec.magnitude(time_point_h)
    if m == 0.0:
        return params, config

    theta = list(params.theta)
    amplitude = list(params.amplitude)
    width = list(params.width)
    for wave, deltas in spec.wave_deltas.items():
        i = WAVE_NAMES.index(wave)
        if "theta" in deltas:
            theta[i] = deltas["theta"].apply(theta[i], m)
        if "amplitude" in deltas:
            amplitude[i] = deltas["amplitude"].apply(amplitude[i], m)
        if "width" in deltas:
            width[i] = deltas["width"].apply(width[i], m)
    new_params = WaveParams(theta=tuple(theta), amplitude=tuple(amplitude), width=tuple(width))
    new_omega = spec.omega_delta.apply(config.omega, m)
    new_config = replace(config, omega=new_omega)
    return new_params, new_config


def _delta_from_dict(d: dict) -> ParamDelta:
    return ParamDelta(add=float(d.get("add", 0.0)), mul=float(d.get("mul", 1.0)))


def load_drug_config(path) -> dict[str, DrugEffectSpec]:
    """Load regimen -> DrugEffectSpec from a JSON key-value tree.

    Expected layout::

        {"regimens": {
            "<regimen id>": {
                "waves":   {"T": {"theta": {"add": 0.4}, "width": {"mul": 1.5}}},
                "omega":   {"mul": 1.0},
                "profile": [[0.0, 0.0], [0.5, 1.0], [8.0, 1.0]]
            }}}
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    specs: dict[str, DrugEffectSpec] = {}
    for regimen, entry in raw["regimens"].items():
        wave_deltas = {
            wave: {fname: _delta_from_dict(fdelta) for fname, fdelta in fields.items()}
            for wave, fields in entry.get("waves", {}).items()
        }
        omega_delta = _delta_from_dict(entry.get("omega", {}))
        profile = tuple((float(h), float(v)) for h, v in entry.get("profile", [[0.0, 1.0]]))
        specs[regimen] = DrugEffectSpec(
            regimen_id=regimen,
            wave_deltas=wave_deltas,
            omega_delta=omega_delta,
            profile=profile,
        )
    return specs
