"""Result serialization: CSV record files, heat map, and summary JSON.

All floats are written with 9 significant digits; for a fixed result the
bundle is byte-stable.
"""

import json
import os
from dataclasses import dataclass

from .analysis import deposition_heatmap, summary_metrics
from .errors import AerocommError
from .scenario import ledger_check


def fmt(x):
    """Canonical 9-significant-digit float formatting."""
    return format(float(x), ".9g")


@dataclass
class OutputBundle:
    deposition_csv: str
    absorption_csv: str
    heatmap_csv: str
    summary_json: str
    symbols_csv: str
    ledger_json: str

    def paths(self):
        return [self.deposition_csv, self.absorption_csv, self.heatmap_csv,
                self.summary_json, self.symbols_csv, self.ledger_json]


def _write(path, text):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise AerocommError(f"cannot write {path}: {exc}") from exc


def write_outputs(result, out_dir, analysis=None):
    """Write the full output bundle for a finished run."""
    from .config import AnalysisSettings
    if analysis is None:
        analysis = AnalysisSettings()
    os.makedirs(out_dir, exist_ok=True)

    lines = ["particle_id,x_m,y_m,t_s,diameter_m,infectious"]
    for r in result.depositions:
        lines.append(f"{r.particle_id},{fmt(r.x)},{fmt(r.y)},{fmt(r.t)},"
                     f"{fmt(r.diameter)},{int(r.infectious)}")
    dep_path = os.path.join(out_dir, "deposition.csv")
    _write(dep_path, "\n".join(lines) + "\n")

    lines = ["receiver_id,aperture_kind,t_s,particle_id,diameter_m,infectious"]
    for r in result.absorptions:
        lines.append(f"{r.receiver_id},{r.aperture_kind.value},{fmt(r.t)},"
                     f"{r.particle_id},{fmt(r.diameter)},{int(r.infectious)}")
    abs_path = os.path.join(out_dir, "absorption.csv")
    _write(abs_path, "\n".join(lines) + "\n")

    grid = deposition_heatmap(result.depositions,
                              origin=analysis.heatmap_origin,
                              cell=analysis.heatmap_cell,
                              extent=analysis.heatmap_extent)
    lines = [f"origin,{fmt(grid.origin[0])},{fmt(grid.origin[1])}",
             f"cell,{fmt(grid.cell)}"]
    for row in grid.counts:
        lines.append(",".join(str(int(c)) for c in row))
    hm_path = os.path.join(out_dir, "heatmap.csv")
    _write(hm_path, "\n".join(lines) + "\n")

    lines = ["event_id,t_s,event_kind,level,particle_count,infectious_count"]
    for i, s in enumerate(result.symbols):
        lines.append(f"{i},{fmt(s.timestamp)},{s.event_kind.value},"
                     f"{s.concentration_level},{s.particle_count},"
                     f"{s.infectious_count}")
    sym_path = os.path.join(out_dir, "symbols.csv")
    _write(sym_path, "\n".join(lines) + "\n")

    ledger = ledger_check(result)
    led_path = os.path.join(out_dir, "ledger.json")
    _write(led_path, _json_dumps(ledger) + "\n")

    metrics = summary_metrics(result, bands=analysis.radial_bands)
    summary = {
        "seed": result.seed,
        "duration_s": result.duration,
        "metrics": {
            "infection_range_m": metrics.infection_range,
            "max_particle_range_m": metrics.max_particle_range,
            "dose_totals": {str(k): v for k, v in metrics.dose_totals.items()},
            "infected_receiver_ids": metrics.infected_ids,
            "band_fractions": metrics.band_fractions,
            "blocked_fraction": metrics.blocked_fraction,
            "heatmap_out_of_extent": grid.out_of_extent,
        },
        "ledger": ledger["total"],
    }
    sum_path = os.path.join(out_dir, "summary.json")
    _write(sum_path, _json_dumps(summary) + "\n")

    return OutputBundle(dep_path, abs_path, hm_path, sum_path, sym_path,
                        led_path)


def _round_floats(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _json_dumps(obj):
    return json.dumps(_round_floats(obj), sort_keys=True, indent=2)
