"""Respiratory events, particle batch sampling, masks, and symbol mapping.

Breathing ticks deterministically, speaking follows a two-state Markov chain,
and coughs/sneezes are per-step Bernoulli trials whose intensity depends on
the infection state. Each event releases a batch of particles whose diameters
and speeds come from parametric or empirical distributions; batches map to
variable-concentration symbols by particle-count level.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, InvalidInputError
from .transport import JetField, Particle, ParticleState


class RespiratoryEventKind(Enum):
    BREATH = "breath"
    SPEECH_FRAME = "speech"
    COUGH = "cough"
    SNEEZE = "sneeze"


class SpeakingState(Enum):
    SILENT = "silent"
    TALKING = "talking"


@dataclass(frozen=True)
class SpeakingMarkov:
    """Two-state speaking chain; each row of the transition matrix sums to 1."""

    p_silence_to_talk: float
    p_talk_to_silence: float
    state: SpeakingState = SpeakingState.SILENT
    step: float = 1.0  # s

    def __post_init__(self):
        for name in ("p_silence_to_talk", "p_talk_to_silence"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(name, f"probability {v} outside [0, 1]")
        if self.step <= 0:
            raise ConfigError("step", "must be > 0")


def speaking_transition(m, rng):
    """Advance the speaking chain by one draw."""
    u = rng.random()
    if m.state is SpeakingState.SILENT:
        new = SpeakingState.TALKING if u < m.p_silence_to_talk else SpeakingState.SILENT
    else:
        new = SpeakingState.SILENT if u < m.p_talk_to_silence else SpeakingState.TALKING
    return replace(m, state=new)


@dataclass
class EmpiricalCdf:
    """Step CDF over a sorted support; inverse sampling on (0, 1]."""

    values: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.cdf = np.asarray(self.cdf, dtype=float)
        if self.values.size == 0:
            raise ConfigError("values", "empirical CDF needs at least one point")
        if np.any(np.diff(self.values) < 0):
            raise ConfigError("values", "support must be sorted non-decreasing")
        if np.any(np.diff(self.cdf) < 0) or not math.isclose(self.cdf[-1], 1.0):
            raise ConfigError("cdf", "cumulative column must be non-decreasing and end at 1")

    @classmethod
    def from_weighted(cls, values, weights):
        values = np.asarray(values, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if values.size == 0:
            raise ConfigError("values", "empty sample")
        order = np.argsort(values, kind="stable")
        w = weights[order]
        total = w.sum()
        if not total > 0:
            raise ConfigError("weights", "total weight must be > 0")
        return cls(values[order], np.cumsum(w) / total)

    @classmethod
    def from_sample(cls, values):
        values = np.asarray(values, dtype=float)
        return cls.from_weighted(values, np.ones_like(values))

    def sample(self, rng, n=None):
        u = rng.random() if n is None else rng.random(n)
        idx = np.searchsorted(self.cdf, u, side="left")
        idx = np.minimum(idx, self.values.size - 1)
        return float(self.values[idx]) if n is None else self.values[idx]


def empirical_cdf_from_distances(distances, h0, g=9.81):
    """Speed CDF from observed travel distances via a frictionless throw.

    Each distance d maps to the launch speed v = d*sqrt(g/(2*h0)) that would
    reach it from height h0.
    """
    distances = np.asarray(distances, dtype=float)
    if distances.size == 0:
        raise ConfigError("distances", "empty distance sample")
    if h0 <= 0 or g <= 0:
        raise ConfigError("h0", "h0 and g must be > 0")
    if np.any(distances < 0):
        raise ConfigError("distances", "distances must be >= 0")
    return EmpiricalCdf.from_sample(distances * math.sqrt(g / (2.0 * h0)))


def sample_from_cdf(c, rng):
    """One inverse-transform draw."""
    return c.sample(rng)


@dataclass
class LogNormalSource:
    """Parametric log-normal diameter distribution (parameters of log d)."""

    mu: float
    sigma: float

    def sample(self, rng, n):
        return rng.lognormal(self.mu, self.sigma, n)


@dataclass
class BimodalSpeedSource:
    """Cloud/droplet speed split.

    Particles at or above diameter_split are always droplet mode; smaller
    particles go cloud mode with probability mode_fraction.
    """

    cloud_speed: float = 8.0
    droplet_speed: float = 5.0
    mode_fraction: float = 0.5
    diameter_split: float = 100e-6

    def sample(self, rng, n, diameters):
        cloud = (diameters < self.diameter_split) & (rng.random(n) < self.mode_fraction)
        return np.where(cloud, self.cloud_speed, self.droplet_speed)


@dataclass
class CdfSpeedSource:
    """Speeds drawn from an empirical CDF, independent of diameter."""

    cdf: EmpiricalCdf

    def sample(self, rng, n, diameters):
        return self.cdf.sample(rng, n)


@dataclass
class CdfDiameterSource:
    cdf: EmpiricalCdf

    def sample(self, rng, n):
        return self.cdf.sample(rng, n)


@dataclass
class EmissionProfile:
    diameter_source: object
    speed_source: object
    opening_angle_std_deg: float = 6.25
    particles_per_event: dict = field(default_factory=lambda: {
        RespiratoryEventKind.BREATH: 50,
        RespiratoryEventKind.SPEECH_FRAME: 200,
        RespiratoryEventKind.COUGH: 5000,
        RespiratoryEventKind.SNEEZE: 15000,
    })
    min_diameter_cutoff: float = 0.0
    jet_speed: float = 2.0     # sustained speed of the jet accompanying a batch
    mass_density: float = 997.0
    jet: JetField = None

    def __post_init__(self):
        if self.opening_angle_std_deg <= 0:
            raise ConfigError("opening_angle_std_deg", "must be > 0")
        if self.min_diameter_cutoff < 0:
            raise ConfigError("min_diameter_cutoff", "must be >= 0")
        if any(v < 0 for v in self.particles_per_event.values()):
            raise ConfigError("particles_per_event", "counts must be >= 0")


@dataclass
class EventProcessState:
    """Per-agent stochastic event processes, advanced step by step."""

    breath_rate_per_min: float = 14.0
    markov: SpeakingMarkov = None
    p_cough: float = 0.0
    p_sneeze: float = 0.0
    event_step: float = 0.1   # s, Bernoulli trial spacing
    time: float = 0.0
    _breath_ticks: int = 0
    _trial_ticks: int = 0
    _speech_ticks: int = 0

    def __post_init__(self):
        for name in ("p_cough", "p_sneeze"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(name, f"probability {v} outside [0, 1]")
        if self.breath_rate_per_min < 0:
            raise ConfigError("breath_rate_per_min", "must be >= 0")
        if self.event_step <= 0:
            raise ConfigError("event_step", "must be > 0")

    @property
    def active(self):
        return (self.breath_rate_per_min > 0 or self.markov is not None
                or self.p_cough > 0 or self.p_sneeze > 0)


def next_events(state, dt, rng):
    """Advance an agent's event processes by dt and return (t, kind) events.

    Breaths tick deterministically at the configured rate; one Markov
    transition fires per speech step and emits a speech frame while talking;
    coughs and sneezes are independent Bernoulli trials per event step.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be > 0")
    t_end = state.time + dt
    events = []

    if state.breath_rate_per_min > 0:
        period = 60.0 / state.breath_rate_per_min
        # k-th breath at k*period; tolerate float accumulation at the boundary
        k = state._breath_ticks + 1
        while k * period <= t_end + 1e-9:
            events.append((k * period, RespiratoryEventKind.BREATH))
            k += 1
        state._breath_ticks = k - 1

    if state.markov is not None:
        step = state.markov.step
        k = state._speech_ticks + 1
        while k * step <= t_end + 1e-9:
            state.markov = speaking_transition(state.markov, rng)
            if state.markov.state is SpeakingState.TALKING:
                events.append((k * step, RespiratoryEventKind.SPEECH_FRAME))
            k += 1
        state._speech_ticks = k - 1

    if state.p_cough > 0 or state.p_sneeze > 0:
        step = state.event_step
        k0 = state._trial_ticks
        k1 = k0
        while (k1 + 1) * step <= t_end + 1e-9:
            k1 += 1
        n = k1 - k0
        if n > 0:
            if state.p_cough > 0:
                hits = np.flatnonzero(rng.random(n) < state.p_cough)
                events.extend(((k0 + 1 + j) * step, RespiratoryEventKind.COUGH)
                              for j in hits)
            if state.p_sneeze > 0:
                hits = np.flatnonzero(rng.random(n) < state.p_sneeze)
                events.extend(((k0 + 1 + j) * step, RespiratoryEventKind.SNEEZE)
                              for j in hits)
        state._trial_ticks = k1

    state.time = t_end
    events.sort(key=lambda e: e[0])
    return events


@dataclass
class EmissionBatch:
    particles: list
    jet: JetField
    cutoff_redraws: int = 0   # draws discarded below min_diameter_cutoff


def _perpendicular_basis(axis):
    helper = Z_UP if abs(axis[2]) < 0.9 else X_UP
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


Z_UP = np.array([0.0, 0.0, 1.0])
X_UP = np.array([1.0, 0.0, 0.0])


def sample_emission(kind, profile, origin, axis, rng, t=0.0, id_start=0):
    """Sample one event's particle batch and its accompanying jet.

    Diameters below the cutoff are discarded and redrawn (keeping the batch
    size fixed); directions perturb the facing axis by two normal angles.
    """
    origin = np.asarray(origin, dtype=float)
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    n = int(profile.particles_per_event.get(kind, 0))
    jet_proto = profile.jet if profile.jet is not None else JetField()
    jet = replace(jet_proto, origin=origin.copy(), axis=axis.copy(),
                  exit_speed=profile.jet_speed)
    if n == 0:
        return EmissionBatch([], jet, 0)

    diam = profile.diameter_source.sample(rng, n)
    redraws = 0
    if profile.min_diameter_cutoff > 0:
        while True:
            low = diam < profile.min_diameter_cutoff
            bad = int(low.sum())
            if bad == 0:
                break
            redraws += bad
            diam[low] = profile.diameter_source.sample(rng, bad)

    speeds = profile.speed_source.sample(rng, n, diam)
    std = math.radians(profile.opening_angle_std_deg)
    alpha = rng.normal(0.0, std, n)
    beta = rng.normal(0.0, std, n)
    e1, e2 = _perpendicular_basis(axis)
    dirs = (axis[None, :] + np.tan(alpha)[:, None] * e1[None, :]
            + np.tan(beta)[:, None] * e2[None, :])
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    vel = speeds[:, None] * dirs

    particles = [
        Particle(id=id_start + i, position=origin.copy(), velocity=vel[i],
                 diameter=float(diam[i]), mass_density=profile.mass_density,
                 emitted_at=t)
        for i in range(n)
    ]
    return EmissionBatch(particles, jet, redraws)


def tag_infectious(particles, c_v, emitter_infected, rng):
    """Mark particles infectious by Poisson virion loading of their volume."""
    if c_v < 0:
        raise InvalidInputError("c_v must be >= 0")
    if not emitter_infected or c_v == 0.0 or not particles:
        for p in particles:
            p.infectious = False
        return particles
    d = np.array([p.diameter for p in particles])
    prob = 1.0 - np.exp(-c_v * math.pi / 6.0 * d**3)
    hits = rng.random(len(particles)) < prob
    for p, h in zip(particles, hits):
        p.infectious = bool(h)
    return particles


def apply_mask(batch, jet, efficiency, rng, jet_attenuation=0.9):
    """Filter a batch through a mask.

    Each particle is independently blocked with probability `efficiency`;
    the jet exit speed is cut by the attenuation fraction.
    """
    if not 0.0 <= efficiency <= 1.0:
        raise InvalidInputError("mask efficiency must be in [0, 1]")
    if batch:
        blocked = rng.random(len(batch)) < efficiency
        for p, b in zip(batch, blocked):
            if b:
                p.state = ParticleState.BLOCKED
    jet_out = replace(jet, exit_speed=jet.exit_speed * (1.0 - jet_attenuation))
    return batch, jet_out


@dataclass(frozen=True)
class MovcskSymbol:
    event_kind: RespiratoryEventKind
    concentration_level: int
    particle_count: int
    infectious_count: int
    timestamp: float

    def __post_init__(self):
        if self.infectious_count > self.particle_count:
            raise InvalidInputError("infectious_count exceeds particle_count")


def to_symbols(events, level_thresholds):
    """Map emission events to concentration-shift symbols by count level.

    `events` is an iterable of (t, kind, particle_count, infectious_count);
    the level is the index of the threshold bin containing the count.
    """
    thresholds = list(level_thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise InvalidInputError("level thresholds must be strictly increasing")
    out = []
    for t, kind, count, infectious in events:
        level = int(np.searchsorted(thresholds, count, side="right"))
        out.append(MovcskSymbol(kind, level, count, infectious, t))
    return out
