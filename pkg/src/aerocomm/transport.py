"""Particle forces and adaptive time integration.

Particles feel gravity, buoyancy, and drag against the local air velocity of
an exhaled jet; turbulent mixing is modeled as a random-walk displacement and
droplet shrinkage as d-squared-law evaporation. Trajectories are advanced with
an embedded Cash-Karp 4(5) pair under per-step position-error control. The
same vectorized stepper serves both the single-particle API and the engine's
particle swarms.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidInputError, StiffnessError

Z_HAT = np.array([0.0, 0.0, 1.0])


class ParticleState(Enum):
    AIRBORNE = "airborne"
    DEPOSITED = "deposited"
    ABSORBED = "absorbed"
    BLOCKED = "blocked"


@dataclass
class Particle:
    """One airborne droplet/aerosol."""

    id: int
    position: np.ndarray
    velocity: np.ndarray
    diameter: float
    mass_density: float = 997.0
    infectious: bool = False
    emitted_at: float = 0.0
    state: ParticleState = ParticleState.AIRBORNE

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)

    @property
    def volume(self):
        return math.pi / 6.0 * self.diameter**3

    @property
    def mass(self):
        return self.mass_density * self.volume


@dataclass
class Environment:
    """Ambient air properties and transport-model switches."""

    air_density: float = 1.2041        # kg/m^3
    air_viscosity: float = 18.13e-6    # N s/m^2
    gravity: float = 9.81              # m/s^2
    t_min_c: float = 20.0              # ambient air temperature
    t_max_c: float = 36.0              # oral cavity temperature
    eddy_diffusivity_scale: float = 0.1
    mixing_length: float = 0.05        # m
    evaporation_enabled: bool = False
    k_evap: float = 1e-9               # m^2/s, d-squared-law constant
    residue_fraction: float = 0.3      # of initial diameter

    def __post_init__(self):
        if not (self.air_density > 0 and self.air_viscosity > 0 and self.gravity > 0):
            raise InvalidInputError("air_density, air_viscosity, gravity must be > 0")
        if self.t_max_c < self.t_min_c:
            raise InvalidInputError("t_max_c must be >= t_min_c")


@dataclass
class JetField:
    """Steady self-similar round jet expelled from the mouth.

    Centerline speed decays as u0 * min(1, K*D0/s) with axial distance s, the
    radial profile is Gaussian with sigma = s*tan(half_angle), and the local
    flow direction tilts upward by buoyant_rise_rate per meter of travel.
    """

    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    exit_speed: float = 0.0            # m/s
    mouth_diameter: float = 0.04       # m
    half_angle_deg: float = 60.0
    decay_constant: float = 6.0
    buoyant_rise_rate: float = 0.05    # per m of travel

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if not n > 0:
            raise InvalidInputError("jet axis must be a nonzero vector")
        self.axis = axis / n
        if self.exit_speed < 0:
            raise InvalidInputError("jet exit_speed must be >= 0")
        if not 0.0 < self.half_angle_deg < 90.0:
            raise InvalidInputError("jet half_angle_deg must be in (0, 90)")


@dataclass
class ForceVector:
    components: np.ndarray


def _schiller_naumann(reynolds):
    # Stokes multiplier, valid up to Re = 1000; clamped above.
    return 1.0 + 0.15 * np.minimum(reynolds, 1000.0) ** 0.687


def drag_force(p, air_velocity, env):
    """Drag on a particle moving relative to the local air.

    Stokes drag with the Schiller-Naumann correction; the force opposes the
    relative velocity v_rel = particle velocity - air velocity.
    """
    air_velocity = np.asarray(air_velocity, dtype=float)
    if p.diameter <= 0:
        raise InvalidInputError("particle diameter must be > 0")
    if not (np.all(np.isfinite(p.velocity)) and np.all(np.isfinite(air_velocity))):
        raise InvalidInputError("non-finite velocity input to drag_force")
    v_rel = p.velocity - air_velocity
    speed = float(np.linalg.norm(v_rel))
    if speed == 0.0:
        return ForceVector(np.zeros(3))
    re = env.air_density * speed * p.diameter / env.air_viscosity
    coeff = 3.0 * math.pi * env.air_viscosity * p.diameter * _schiller_naumann(re)
    return ForceVector(-coeff * v_rel)


def jet_velocity(jet, x, t=0.0):
    """Air velocity of the jet at point(s) x; zero outside the jet cone.

    Accepts a single 3-vector or an (N, 3) array and returns the same shape.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    out = np.zeros_like(pts)
    if jet is not None and jet.exit_speed > 0:
        rel = pts - jet.origin
        s = rel @ jet.axis
        r_vec = rel - s[:, None] * jet.axis
        r_sq = np.einsum("ij,ij->i", r_vec, r_vec)
        tan_half = math.tan(math.radians(jet.half_angle_deg))
        cone_sq = (s * tan_half) ** 2
        inside = (s > 0) & (r_sq <= cone_sq)
        if np.any(inside):
            si = s[inside]
            core = jet.decay_constant * jet.mouth_diameter
            u_c = jet.exit_speed * np.minimum(1.0, core / si)
            speed = u_c * np.exp(-0.5 * r_sq[inside] / cone_sq[inside])
            # direction = unit(axis + rise*z_hat), folded in analytically
            rise = jet.buoyant_rise_rate * si
            scale = speed / np.sqrt(1.0 + (2.0 * jet.axis[2]) * rise
                                    + rise * rise)
            out[inside] = scale[:, None] * jet.axis
            out[inside, 2] += scale * rise
    return out[0] if single else out


def net_force(p, env, jet, t=0.0):
    """Gravity + particle buoyancy + drag against the local jet air."""
    if p.state is not ParticleState.AIRBORNE:
        raise InvalidInputError("net_force requires an airborne particle")
    air = jet_velocity(jet, p.position, t)
    weight = -p.mass * env.gravity * Z_HAT
    buoyancy = env.air_density * p.volume * env.gravity * Z_HAT
    return ForceVector(weight + buoyancy + drag_force(p, air, env).components)


def eddy_displacement(rng, local_air_speed, env, dt):
    """Random-walk displacement from turbulent mixing over one step.

    Per-axis std is sqrt(2*D_e*dt) with D_e = scale * |u_air| * L_mix; still
    air produces no eddies.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be > 0")
    if env.eddy_diffusivity_scale == 0.0 or local_air_speed == 0.0:
        return np.zeros(3)
    d_e = env.eddy_diffusivity_scale * local_air_speed * env.mixing_length
    return rng.normal(0.0, math.sqrt(2.0 * d_e * dt), 3)


def evaporate(p, env, dt, initial_diameter=None):
    """Shrink the droplet by the d-squared law, clamped at the residue size.

    `initial_diameter` anchors the residue clamp; defaults to the current
    diameter (callers tracking a lifetime should pass the emitted diameter).
    """
    if not env.evaporation_enabled or p.state is not ParticleState.AIRBORNE:
        return p
    d0 = p.diameter if initial_diameter is None else initial_diameter
    residue = env.residue_fraction * d0
    d_new = math.sqrt(max(p.diameter**2 - env.k_evap * dt, residue**2))
    return replace(p, diameter=min(p.diameter, d_new))


def max_throw_distance(v, h0, g=9.81):
    """Horizontal range of a frictionless throw from height h0 at speed v."""
    if g <= 0:
        raise InvalidInputError("g must be > 0")
    if v < 0 or h0 < 0:
        raise InvalidInputError("v and h0 must be >= 0")
    return v * math.sqrt(2.0 * h0 / g)


# --- embedded Cash-Karp 4(5) pair -----------------------------------------

_CK_C = np.array([0.0, 1 / 5, 3 / 10, 3 / 5, 1.0, 7 / 8])
_CK_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([3 / 10, -9 / 10, 6 / 5]),
    np.array([-11 / 54, 5 / 2, -70 / 27, 35 / 27]),
    np.array([1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096]),
]
_CK_B5 = np.array([37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771])
_CK_B4 = np.array([2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4])
_CK_E = _CK_B5 - _CK_B4


def _accelerations(pos, vel, diam, rho_p, env, jet, t):
    """Per-particle acceleration (N, 3) from gravity, buoyancy, and drag."""
    air = jet_velocity(jet, pos, t)
    v_rel = vel - air
    speed = np.linalg.norm(v_rel, axis=1)
    re = env.air_density * speed * diam / env.air_viscosity
    # 3*pi*mu*d*phi / m  ==  18*mu*phi / (rho_p*d^2), the inverse relaxation time
    inv_tau = 18.0 * env.air_viscosity * _schiller_naumann(re) / (rho_p * diam**2)
    g_eff = env.gravity * (env.air_density / rho_p - 1.0)
    return -inv_tau[:, None] * v_rel + g_eff[:, None] * Z_HAT


def _rk_attempt(pos, vel, diam, rho_p, env, jet, t, dt):
    """One trial Cash-Karp step of per-particle size dt (N,).

    Returns (pos5, vel5, err) where err is the max absolute position-error
    component per particle.
    """
    dtc = dt[:, None]
    kp = [vel]
    kv = [_accelerations(pos, vel, diam, rho_p, env, jet, t)]
    for i in range(1, 6):
        a = _CK_A[i]
        dp = sum(a[j] * kp[j] for j in range(i))
        dv = sum(a[j] * kv[j] for j in range(i))
        pi = pos + dtc * dp
        vi = vel + dtc * dv
        kp.append(vi)
        kv.append(_accelerations(pi, vi, diam, rho_p, env, jet, t + _CK_C[i] * dt))
    pos5 = pos + dtc * sum(_CK_B5[j] * kp[j] for j in range(6))
    vel5 = vel + dtc * sum(_CK_B5[j] * kv[j] for j in range(6))
    err_pos = dtc * sum(_CK_E[j] * kp[j] for j in range(6))
    # the velocity error (times dt, to make it a position scale) is included
    # so that stiff light-particle steps outside the stability region are
    # rejected instead of settling on a spurious velocity
    err_vel = dtc * dtc * sum(_CK_E[j] * kv[j] for j in range(6))
    err = np.maximum(np.max(np.abs(err_pos), axis=1),
                     np.max(np.abs(err_vel), axis=1))
    return pos5, vel5, err


_SAFETY = 0.9
_MIN_SHRINK = 0.2
_MAX_GROW = 5.0


def _next_dt(dt, err, tol, dt_max):
    with np.errstate(divide="ignore"):
        factor = np.where(err > 0, _SAFETY * (tol / np.maximum(err, 1e-300)) ** 0.2, _MAX_GROW)
    return np.minimum(dt * np.clip(factor, _MIN_SHRINK, _MAX_GROW), dt_max)


def _refine_crossing(pos, vel, diam, rho_p, env, jet, t, dt_hit):
    """Landing time within an accepted step whose endpoint went below z = 0.

    Re-takes single deterministic RK steps of trial size from the step start
    and root-finds the z = 0 crossing.
    """
    p1 = pos[None, :]
    v1 = vel[None, :]
    d1 = np.array([diam])
    r1 = np.array([rho_p])

    def z_at(h):
        if h <= 0.0:
            return pos[2]
        p5, _, _ = _rk_attempt(p1, v1, d1, r1, env, jet, t, np.array([h]))
        return p5[0, 2]

    if pos[2] <= 0.0:
        return 0.0, pos.copy()
    t_c = brentq(z_at, 0.0, dt_hit, xtol=1e-13, rtol=8.9e-16)
    p5, _, _ = _rk_attempt(p1, v1, d1, r1, env, jet, t, np.array([t_c]))
    landing = p5[0].copy()
    landing[2] = 0.0
    return t_c, landing


def advance_swarm(pos, vel, diam, rho_p, diam0, dt_next, active, draw_normals,
                  ids, env, jet, t0, window, tol, dt_max, dt_min=1e-7):
    """Advance all active particles through a time window, in place.

    Arrays are per-particle and modified in place; `draw_normals(indices)`
    returns one row of three standard normals per index, each taken from that
    particle's own stream in order (eddy kicks). `ids` holds the global
    particle ids used in stiffness errors. Returns a list of
    (index, landing_time, position) deposition events; deposited indices are
    cleared from `active`.
    """
    n = pos.shape[0]
    t_local = np.zeros(n)
    depositions = []
    eddy_on = env.eddy_diffusivity_scale > 0.0
    evap_on = env.evaporation_enabled
    while True:
        run = np.flatnonzero(active & (t_local < window - 1e-15))
        if run.size == 0:
            break
        dt = np.minimum(dt_next[run], np.minimum(window - t_local[run], dt_max))
        pos5, vel5, err = _rk_attempt(
            pos[run], vel[run], diam[run], rho_p[run], env, jet,
            t0 + t_local[run], dt)
        ok = err <= tol
        dt_next[run] = _next_dt(dt, err, tol, dt_max)
        if not np.all(ok):
            bad = run[~ok & (dt_next[run] < dt_min)]
            if bad.size:
                i = bad[0]
                raise StiffnessError(ids[i], diam[i], dt_min)
            if not np.any(ok):
                continue
        acc = run[ok]
        new_pos = pos5[ok]
        new_vel = vel5[ok]
        dt_acc = dt[ok]

        crossed = new_pos[:, 2] <= 0.0
        for k in np.flatnonzero(crossed):
            i = acc[k]
            t_c, landing = _refine_crossing(
                pos[i], vel[i], diam[i], rho_p[i], env, jet,
                t0 + t_local[i], dt_acc[k])
            if evap_on:
                residue = env.residue_fraction * diam0[i]
                diam[i] = math.sqrt(max(diam[i] ** 2 - env.k_evap * t_c, residue**2))
            pos[i] = landing
            vel[i] = new_vel[k]
            active[i] = False
            depositions.append((i, t0 + t_local[i] + t_c, landing))

        keep = np.flatnonzero(~crossed)
        if keep.size:
            kp = new_pos[keep]
            if eddy_on:
                air = jet_velocity(jet, kp)
                speed_sq = np.einsum("ij,ij->i", air, air)
                moving = np.flatnonzero(speed_sq > 0.0)
                if moving.size:
                    std = np.sqrt(2.0 * env.eddy_diffusivity_scale
                                  * env.mixing_length
                                  * np.sqrt(speed_sq[moving])
                                  * dt_acc[keep[moving]])
                    kicks = std[:, None] * draw_normals(acc[keep[moving]])
                    z_before = kp[moving, 2].copy()
                    kp[moving] += kicks
                    for j in np.flatnonzero(kp[moving, 2] <= 0.0):
                        m = moving[j]
                        i = acc[keep[m]]
                        # instantaneous kick below the floor: land along it
                        frac = z_before[j] / (z_before[j] - kp[m, 2])
                        landing = kp[m] + (frac - 1.0) * kicks[j]
                        landing[2] = 0.0
                        pos[i] = landing
                        vel[i] = new_vel[keep[m]]
                        active[i] = False
                        depositions.append(
                            (i, t0 + t_local[i] + dt_acc[keep[m]], landing))
                        t_local[i] += dt_acc[keep[m]]
            idx = acc[keep]
            live = active[idx]
            pos[idx[live]] = kp[live]
            vel[idx[live]] = new_vel[keep][live]
            if evap_on:
                residue = env.residue_fraction * diam0[idx[live]]
                diam[idx[live]] = np.sqrt(np.maximum(
                    diam[idx[live]] ** 2 - env.k_evap * dt_acc[keep][live],
                    residue**2))
            t_local[idx[live]] += dt_acc[keep][live]
    return depositions


def step_adaptive(p, env, jet, t, dt_max, tol, rng, dt_min=1e-7,
                  initial_diameter=None):
    """Take one accepted adaptive step for a single particle.

    Returns (updated particle, dt_used). Eddy displacement is added after the
    deterministic substep and evaporation applied if enabled; a trajectory
    crossing z = 0 deposits the particle at the resolved crossing point.
    """
    if p.state is not ParticleState.AIRBORNE:
        raise InvalidInputError("step_adaptive requires an airborne particle")
    if dt_max <= 0 or tol <= 0:
        raise InvalidInputError("dt_max and tol must be > 0")
    d0 = p.diameter if initial_diameter is None else initial_diameter
    pos = np.array([p.position])
    vel = np.array([p.velocity])
    diam = np.array([p.diameter])
    rho = np.array([p.mass_density])
    dt = dt_max
    while True:
        pos5, vel5, err = _rk_attempt(pos, vel, diam, rho, env, jet, t, np.array([dt]))
        if err[0] <= tol:
            break
        dt = float(_next_dt(np.array([dt]), err, tol, dt_max)[0])
        if dt < dt_min:
            raise StiffnessError(p.id, p.diameter, dt_min)

    new_pos = pos5[0]
    new_vel = vel5[0]
    if new_pos[2] <= 0.0:
        t_c, landing = _refine_crossing(
            p.position, p.velocity, p.diameter, p.mass_density, env, jet, t, dt)
        out = evaporate(p, env, max(t_c, 1e-300), d0)
        out = replace(out, position=landing, velocity=new_vel,
                      state=ParticleState.DEPOSITED)
        return out, t_c

    speed = float(np.linalg.norm(jet_velocity(jet, new_pos, t + dt)))
    kick = eddy_displacement(rng, speed, env, dt)
    if new_pos[2] + kick[2] <= 0.0:
        frac = new_pos[2] / (new_pos[2] - (new_pos[2] + kick[2]))
        landing = new_pos + frac * kick
        landing[2] = 0.0
        return (replace(evaporate(p, env, dt, d0), position=landing,
                        velocity=new_vel, state=ParticleState.DEPOSITED), dt)
    out = replace(p, position=new_pos + kick, velocity=new_vel)
    return evaporate(out, env, dt, d0), dt
