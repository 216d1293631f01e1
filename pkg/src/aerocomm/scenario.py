"""Multiuser simulation engine.

Agents move along waypoint trajectories, emit particle batches through
stochastic respiratory events, and absorb airborne particles through effective
apertures. A fixed global loop couples agent motion, emission, transport
substeps, absorption tests, and dose accounting; every emitted particle ends
in exactly one terminal category and the run is reproducible from its seed
regardless of thread count.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import rng as streams
from .emission import (RespiratoryEventKind, apply_mask, next_events,
                       sample_emission, tag_infectious, to_symbols)
from .errors import ConfigError, ConservationError
from .transport import ParticleState, advance_swarm

_CHUNK = 1024  # particles per work unit; fixed so thread count cannot alter results
_NORMAL_BLOCK = 16  # (3,) eddy-kick rows buffered per particle stream


class ApertureKind(Enum):
    FACE = "face"
    HAND = "hand"


@dataclass
class Aperture:
    kind: ApertureKind
    offset: np.ndarray
    radius: float = 0.1
    gain: float = 1.0

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float)
        if self.radius <= 0:
            raise ConfigError("aperture.radius", "must be > 0")
        if not 0.0 <= self.gain <= 1.0:
            raise ConfigError("aperture.gain", "must be in [0, 1]")


@dataclass
class Agent:
    id: int
    infected: bool = False
    waypoints: list = field(default_factory=lambda: [(0.0, np.zeros(3))])
    facing: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    apertures: list = field(default_factory=list)
    detection_threshold: int = 100
    virion_concentration: float = 1e12   # virions per m^3 of droplet liquid
    mask_enabled: bool = False
    mask_efficiency: float = 0.8
    mask_jet_attenuation: float = 0.9
    events: object = None                # EventProcessState or None
    scheduled: list = field(default_factory=list)  # [(t, RespiratoryEventKind)]
    dose: int = 0
    became_infected: bool = False

    def __post_init__(self):
        self.waypoints = [(float(t), np.asarray(p, dtype=float))
                          for t, p in self.waypoints]
        times = [t for t, _ in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError(f"agents[{self.id}].waypoints",
                              "waypoint times must be strictly increasing")
        facing = np.asarray(self.facing, dtype=float)
        self.facing = facing / np.linalg.norm(facing)
        if self.detection_threshold <= 0:
            raise ConfigError(f"agents[{self.id}].detection_threshold", "must be > 0")
        self.became_infected = bool(self.infected)


def receiver_position(a, t):
    """Piecewise-linear waypoint interpolation, clamped at the endpoints."""
    wps = a.waypoints
    if t <= wps[0][0]:
        return wps[0][1].copy()
    if t >= wps[-1][0]:
        return wps[-1][1].copy()
    for (t0, p0), (t1, p1) in zip(wps, wps[1:]):
        if t0 <= t <= t1:
            f = (t - t0) / (t1 - t0)
            return p0 + f * (p1 - p0)
    return wps[-1][1].copy()


def segment_sphere_entry(x0, x1, center, radius):
    """Earliest parameter s in [0, 1] where segment x0->x1 enters the sphere.

    Returns None when the segment stays outside.
    """
    d = x1 - x0
    f = x0 - center
    c = f @ f - radius * radius
    if c <= 0.0:
        return 0.0  # starts inside
    a = d @ d
    b = f @ d
    if a == 0.0:
        return None
    disc = b * b - a * c
    if disc < 0.0:
        return None
    s = (-b - math.sqrt(disc)) / a
    if 0.0 <= s <= 1.0:
        return s
    return None


def absorb_check(x0, x1, center, radius, gain, rng):
    """Geometric aperture test plus the gain-weighted absorption draw."""
    s = segment_sphere_entry(np.asarray(x0, float), np.asarray(x1, float),
                             np.asarray(center, float), radius)
    if s is None:
        return False
    return bool(rng.random() < gain)


def accumulate_dose(receiver, infectious):
    """Count one absorbed particle toward the receiver's dose."""
    if infectious:
        receiver.dose += 1
    return receiver


def infection_decision(receiver):
    """Hard energy-detection threshold; once infected, stays infected."""
    if receiver.dose >= receiver.detection_threshold:
        receiver.became_infected = True
    return receiver.became_infected


@dataclass
class DepositionRecord:
    particle_id: int
    x: float
    y: float
    t: float
    diameter: float
    infectious: bool
    emit_origin: np.ndarray


@dataclass
class AbsorptionRecord:
    receiver_id: int
    aperture_kind: ApertureKind
    t: float
    particle_id: int
    diameter: float
    infectious: bool
    emit_origin: np.ndarray
    x: float = 0.0              # absorption point, for range metrics
    y: float = 0.0


@dataclass
class EventLedger:
    event_id: int
    agent_id: int
    kind: RespiratoryEventKind
    t: float
    emitted: int
    blocked: int
    deposited: int = 0
    absorbed: int = 0
    airborne_end: int = 0
    cutoff_redraws: int = 0
    infectious_emitted: int = 0


@dataclass
class SimulationResult:
    depositions: list
    absorptions: list
    blocked_count: int
    airborne_at_end: int
    dose_traces: dict
    infections: dict
    symbols: list
    events: list
    seed: int
    duration: float


def ledger_check(result):
    """Assert emitted = deposited + absorbed + blocked + airborne, exactly.

    Checked per emission event and in total; returns the count report.
    """
    report = {"events": [], "total": {}}
    tot = dict(emitted=0, deposited=0, absorbed=0, blocked=0, airborne=0)
    for ev in result.events:
        balance = ev.deposited + ev.absorbed + ev.blocked + ev.airborne_end
        if balance != ev.emitted:
            raise ConservationError(
                f"event {ev.event_id}: emitted {ev.emitted} != "
                f"deposited {ev.deposited} + absorbed {ev.absorbed} + "
                f"blocked {ev.blocked} + airborne {ev.airborne_end}")
        report["events"].append({
            "event_id": ev.event_id, "emitted": ev.emitted,
            "deposited": ev.deposited, "absorbed": ev.absorbed,
            "blocked": ev.blocked, "airborne": ev.airborne_end})
        tot["emitted"] += ev.emitted
        tot["deposited"] += ev.deposited
        tot["absorbed"] += ev.absorbed
        tot["blocked"] += ev.blocked
        tot["airborne"] += ev.airborne_end
    if len(result.depositions) != tot["deposited"]:
        raise ConservationError("deposition record count mismatch")
    if len(result.absorptions) != tot["absorbed"]:
        raise ConservationError("absorption record count mismatch")
    if result.blocked_count != tot["blocked"]:
        raise ConservationError("blocked count mismatch")
    if result.airborne_at_end != tot["airborne"]:
        raise ConservationError("airborne count mismatch")
    report["total"] = tot
    return report


class _Group:
    """Array-of-particles state for one emission event."""

    def __init__(self, ledger, particles, jet, seed):
        self.ledger = ledger
        self.jet = jet
        n = len(particles)
        self.ids = np.array([p.id for p in particles], dtype=np.int64)
        self.pos = np.array([p.position for p in particles]) if n else np.zeros((0, 3))
        self.vel = np.array([p.velocity for p in particles]) if n else np.zeros((0, 3))
        self.diam = np.array([p.diameter for p in particles])
        self.diam0 = self.diam.copy()
        self.rho = np.array([p.mass_density for p in particles])
        self.infectious = np.array([p.infectious for p in particles], dtype=bool)
        self.active = np.ones(n, dtype=bool)
        self.dt_next = np.full(n, np.inf)
        self.gens = [streams.particle_stream(seed, int(i)) for i in self.ids]
        self._nbuf = [None] * n   # per-particle blocks of standard normals
        self._npos = [0] * n
        self.emit_origin = jet.origin.copy()
        self.emit_time = ledger.t
        self.emitter_id = ledger.agent_id

    def draw_normals(self, local_idx, offset):
        """One (3,) standard-normal row per index from each particle's stream.

        Draws are buffered in blocks per particle; consumption order within a
        particle's stream depends only on that particle's own step history.
        """
        out = np.empty((len(local_idx), 3))
        for row, j in enumerate(local_idx):
            i = offset + int(j)
            buf = self._nbuf[i]
            pos = self._npos[i]
            if buf is None or pos >= len(buf):
                buf = self.gens[i].standard_normal((_NORMAL_BLOCK, 3))
                self._nbuf[i] = buf
                pos = 0
            out[row] = buf[pos]
            self._npos[i] = pos + 1
        return out


def _thread_count():
    raw = os.environ.get("AEROCOMM_THREADS", "0")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError("AEROCOMM_THREADS", f"not an integer: {raw!r}") from exc
    if n <= 0:
        n = os.cpu_count() or 1
    return n


class Engine:
    def __init__(self, config):
        self.config = config
        self.env = config.environment
        self.profile = config.emission_profile
        self.agents = sorted(config.agents, key=lambda a: a.id)
        self.run_cfg = config.run
        if self.run_cfg.seed is None:
            raise ConfigError("run.seed", "an explicit seed is required to run")
        self.seed = self.run_cfg.seed
        self.groups = []
        self.depositions = []
        self.absorptions = []
        self.event_entries = []
        self.symbol_events = []
        self.blocked = 0
        self.dose_traces = {a.id: [] for a in self.agents}
        self._next_particle_id = 0
        self._next_event_id = 0
        self._event_counters = {a.id: 0 for a in self.agents}
        self._agent_streams = {a.id: streams.agent_event_stream(self.seed, a.id)
                               for a in self.agents}

    # -- emission ----------------------------------------------------------

    def _emit(self, agent, kind, t_ev):
        counter = self._event_counters[agent.id]
        self._event_counters[agent.id] = counter + 1
        rng_e = streams.emission_stream(self.seed, agent.id, counter)
        origin = receiver_position(agent, t_ev)
        batch = sample_emission(kind, self.profile, origin, agent.facing,
                                rng_e, t=t_ev, id_start=self._next_particle_id)
        self._next_particle_id += len(batch.particles)
        tag_infectious(batch.particles, agent.virion_concentration,
                       agent.infected, rng_e)
        jet = batch.jet
        if agent.mask_enabled:
            _, jet = apply_mask(batch.particles, jet, agent.mask_efficiency,
                                rng_e, agent.mask_jet_attenuation)
        blocked = sum(p.state is ParticleState.BLOCKED for p in batch.particles)
        airborne = [p for p in batch.particles if p.state is ParticleState.AIRBORNE]
        ledger = EventLedger(
            event_id=self._next_event_id, agent_id=agent.id, kind=kind,
            t=t_ev, emitted=len(batch.particles), blocked=blocked,
            cutoff_redraws=batch.cutoff_redraws,
            infectious_emitted=sum(p.infectious for p in batch.particles))
        self._next_event_id += 1
        self.blocked += blocked
        self.event_entries.append(ledger)
        self.symbol_events.append((t_ev, kind, ledger.emitted,
                                   ledger.infectious_emitted))
        if airborne:
            self.groups.append(_Group(ledger, airborne, jet, self.seed))

    def _collect_events(self, t0, t1):
        out = []
        for agent in self.agents:
            for t_ev, kind in agent.scheduled:
                if t0 < t_ev <= t1 or (t0 == 0.0 and t_ev == 0.0):
                    out.append((t_ev, agent.id, agent, kind))
            if agent.events is not None and agent.events.active:
                evs = next_events(agent.events, t1 - t0,
                                  self._agent_streams[agent.id])
                out.extend((t_ev, agent.id, agent, kind) for t_ev, kind in evs)
        out.sort(key=lambda e: (e[0], e[1]))
        return out

    # -- transport ---------------------------------------------------------

    def _advance_group(self, group, t0, t1, pool):
        dt_max = min(self.run_cfg.dt_max, t1 - t0)
        n = group.pos.shape[0]
        group.dt_next = np.minimum(group.dt_next, dt_max)

        def work(a, b):
            start = max(t0, group.emit_time)
            return advance_swarm(
                group.pos[a:b], group.vel[a:b], group.diam[a:b],
                group.rho[a:b], group.diam0[a:b], group.dt_next[a:b],
                group.active[a:b], lambda idx: group.draw_normals(idx, a),
                group.ids[a:b], self.env, group.jet, start, t1 - start,
                self.run_cfg.tol, dt_max, self.run_cfg.dt_min)

        bounds = [(a, min(a + _CHUNK, n)) for a in range(0, n, _CHUNK)]
        if pool is None or len(bounds) <= 1:
            results = [work(a, b) for a, b in bounds]
        else:
            results = list(pool.map(lambda ab: work(*ab), bounds))
        for (a, _), deps in zip(bounds, results):
            for local_idx, t_land, landing in deps:
                i = a + local_idx
                self.depositions.append(DepositionRecord(
                    particle_id=int(group.ids[i]), x=float(landing[0]),
                    y=float(landing[1]), t=float(t_land),
                    diameter=float(group.diam[i]),
                    infectious=bool(group.infectious[i]),
                    emit_origin=group.emit_origin))
                group.ledger.deposited += 1

    # -- absorption --------------------------------------------------------

    def _absorption(self, group, prev_pos, t1):
        # an agent never absorbs its own freshly emitted batch
        receivers = [a for a in self.agents
                     if a.apertures and a.id != group.emitter_id]
        if not receivers:
            return
        for i in np.flatnonzero(group.active):
            x0 = prev_pos[i]
            x1 = group.pos[i]
            absorbed = False
            for receiver in receivers:
                base = receiver_position(receiver, t1)
                for ap in receiver.apertures:
                    if ap.gain == 0.0:
                        continue  # transparent: no draw, stream untouched
                    s = segment_sphere_entry(x0, x1, base + ap.offset, ap.radius)
                    if s is None:
                        continue
                    if group.gens[i].random() < ap.gain:
                        entry = x0 + s * (x1 - x0)
                        group.pos[i] = entry
                        group.active[i] = False
                        group.ledger.absorbed += 1
                        infectious = bool(group.infectious[i])
                        self.absorptions.append(AbsorptionRecord(
                            receiver_id=receiver.id, aperture_kind=ap.kind,
                            t=t1, particle_id=int(group.ids[i]),
                            diameter=float(group.diam[i]),
                            infectious=infectious,
                            emit_origin=group.emit_origin,
                            x=float(entry[0]), y=float(entry[1])))
                        accumulate_dose(receiver, infectious)
                        if infectious:
                            self.dose_traces[receiver.id].append((t1, receiver.dose))
                        infection_decision(receiver)
                        absorbed = True
                        break
                if absorbed:
                    break

    def _any_near_receiver(self, group, t1):
        # geometric prefilter: skip the per-particle pass when no aperture can
        # be reached this step (bound = aperture radius + max step travel)
        max_speed = 0.0
        if group.active.any():
            max_speed = float(np.max(np.linalg.norm(group.vel[group.active], axis=1)))
        travel = (max_speed + group.jet.exit_speed) * self.run_cfg.dt_global + 0.5
        for receiver in self.agents:
            if not receiver.apertures:
                continue
            base = receiver_position(receiver, t1)
            for ap in receiver.apertures:
                center = base + ap.offset
                d = np.linalg.norm(group.pos[group.active] - center, axis=1)
                if d.size and np.min(d) <= ap.radius + travel:
                    return True
        return False

    # -- main loop ---------------------------------------------------------

    def run(self):
        dt = self.run_cfg.dt_global
        duration = self.run_cfg.duration
        threads = _thread_count()
        pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
        has_receivers = any(a.apertures for a in self.agents)
        try:
            t = 0.0
            step = 0
            n_steps = max(0, int(round(duration / dt)))
            while step < n_steps:
                airborne = any(g.active.any() for g in self.groups)
                pending = any(
                    (a.events is not None and a.events.active)
                    or any(t_ev > t for t_ev, _ in a.scheduled)
                    or (step == 0 and any(t_ev == 0.0 for t_ev, _ in a.scheduled))
                    for a in self.agents)
                if not airborne and not pending:
                    break
                t1 = (step + 1) * dt
                for t_ev, _, agent, kind in self._collect_events(t, t1):
                    self._emit(agent, kind, t_ev)
                for group in self.groups:
                    if not group.active.any() or group.emit_time > t1:
                        continue
                    prev = group.pos.copy() if has_receivers else None
                    self._advance_group(group, t, t1, pool)
                    if has_receivers and group.active.any() \
                            and self._any_near_receiver(group, t1):
                        self._absorption(group, prev, t1)
                t = t1
                step += 1
        finally:
            if pool is not None:
                pool.shutdown()

        for group in self.groups:
            group.ledger.airborne_end = int(group.active.sum())
        thresholds = self.config.symbol_level_thresholds
        symbols = to_symbols(
            [(t_ev, kind, n, inf) for t_ev, kind, n, inf in self.symbol_events],
            thresholds)
        result = SimulationResult(
            depositions=sorted(self.depositions,
                               key=lambda r: (r.t, r.particle_id)),
            absorptions=sorted(self.absorptions,
                               key=lambda r: (r.t, r.particle_id)),
            blocked_count=self.blocked,
            airborne_at_end=sum(g.ledger.airborne_end for g in self.groups),
            dose_traces=self.dose_traces,
            infections={a.id: a.became_infected for a in self.agents},
            symbols=symbols,
            events=self.event_entries,
            seed=self.seed,
            duration=duration)
        ledger_check(result)
        return result


def run(config):
    """Run a configured simulation end to end."""
    return Engine(config).run()
