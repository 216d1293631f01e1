"""Reductions of simulation results: heat maps, histograms, summary metrics."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class HeatmapGrid:
    origin: np.ndarray          # (x, y) of cell (0, 0)'s lower-left corner
    cell: float
    counts: np.ndarray          # (nx, ny) integer counts
    out_of_extent: int = 0


def deposition_heatmap(records, origin=(-1.5, 0.0), cell=0.1, extent=(3.0, 6.0)):
    """Bin floor depositions into a regular grid.

    `extent` is the grid's physical size in meters from `origin`; records
    outside it are tallied in `out_of_extent` so the total is preserved.
    """
    if cell <= 0:
        raise InvalidInputError("cell must be > 0")
    origin = np.asarray(origin, dtype=float)
    nx = int(round(extent[0] / cell))
    ny = int(round(extent[1] / cell))
    counts = np.zeros((nx, ny), dtype=np.int64)
    outside = 0
    for r in records:
        ix = math.floor((r.x - origin[0]) / cell)
        iy = math.floor((r.y - origin[1]) / cell)
        if 0 <= ix < nx and 0 <= iy < ny:
            counts[ix, iy] += 1
        else:
            outside += 1
    return HeatmapGrid(origin=origin, cell=cell, counts=counts,
                       out_of_extent=outside)


def histogram(values, edges):
    """Left-closed binning with explicit under/overflow counts."""
    edges = np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) <= 0):
        raise InvalidInputError("edges must be strictly increasing")
    values = np.asarray(values, dtype=float)
    counts = np.zeros(edges.size - 1, dtype=np.int64)
    underflow = int(np.sum(values < edges[0]))
    overflow = int(np.sum(values >= edges[-1]))
    inside = values[(values >= edges[0]) & (values < edges[-1])]
    idx = np.searchsorted(edges, inside, side="right") - 1
    for i in idx:
        counts[i] += 1
    return counts, underflow, overflow


@dataclass
class MetricsSummary:
    infection_range: float
    max_particle_range: float
    dose_totals: dict
    infected_ids: list
    band_fractions: dict        # "[a, b)" label -> fraction of deposits
    blocked_fraction: float
    deposited: int = 0
    absorbed: int = 0
    blocked: int = 0
    airborne_at_end: int = 0
    emitted: int = 0
    bands: tuple = field(default_factory=tuple)


def _radial(records):
    return np.array([
        math.hypot(r.x - r.emit_origin[0], r.y - r.emit_origin[1])
        for r in records
    ])


def summary_metrics(result, bands=(0.5, 2.0, 5.0)):
    """Communication-metric summary of a finished run.

    Ranges are radial distances measured from the emitting agent's position
    at emission time; band fractions partition the floor deposits.
    """
    dep_r = _radial(result.depositions)
    abs_r = _radial(result.absorptions)
    all_r = np.concatenate([dep_r, abs_r])
    dep_inf = np.array([r.infectious for r in result.depositions], dtype=bool)
    abs_inf = np.array([r.infectious for r in result.absorptions], dtype=bool)
    inf_r = np.concatenate([dep_r[dep_inf], abs_r[abs_inf]])

    emitted = sum(ev.emitted for ev in result.events)
    blocked = result.blocked_count
    summary = MetricsSummary(
        infection_range=float(inf_r.max()) if inf_r.size else 0.0,
        max_particle_range=float(all_r.max()) if all_r.size else 0.0,
        dose_totals={aid: trace[-1][1] if trace else 0
                     for aid, trace in result.dose_traces.items()},
        infected_ids=sorted(aid for aid, inf in result.infections.items() if inf),
        band_fractions={},
        blocked_fraction=blocked / emitted if emitted else 0.0,
        deposited=len(result.depositions),
        absorbed=len(result.absorptions),
        blocked=blocked,
        airborne_at_end=result.airborne_at_end,
        emitted=emitted,
        bands=tuple(bands))
    edges = [0.0, *bands, math.inf]
    n_dep = dep_r.size
    for a, b in zip(edges, edges[1:]):
        label = f"[{a:g}, {b:g})"
        frac = float(np.mean((dep_r >= a) & (dep_r < b))) if n_dep else 0.0
        summary.band_fractions[label] = frac
    return summary
