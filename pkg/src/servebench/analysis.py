"""Analysis stage: roofline model, heat grids, recommender, leaderboard, CDF data.

Everything is a pure function of the record set and emits plot-ready CSV
rather than rendered figures. Achieved FLOP/s uses device busy time, not wall
time, so open-loop idle gaps do not deflate roofline points.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .digest import LatencyDigest
from .errors import AnalysisError
from .hardware import HardwareProfile
from .modelgen import ModelDescriptor
from .records import PerfRecord


def roofline_attainable(hardware: HardwareProfile, intensity: float,
                        precision: str = "fp32") -> float:
    """Attainable FLOP/s at a given operational intensity: min(P, B*I)."""
    if intensity <= 0:
        raise ValueError("intensity must be > 0")
    return min(hardware.peak_flops(precision), hardware.mem_bandwidth * intensity)


def classify_bound(hardware: HardwareProfile, intensity: float,
                   precision: str = "fp32") -> str:
    """Memory-bound below the ridge point P/B, compute-bound at or above it."""
    return "memory" if intensity < hardware.ridge_point(precision) else "compute"


@dataclass
class RooflinePoint:
    label: str
    intensity: float     # FLOP/byte
    achieved: float      # FLOP/s, from device busy time
    bound: str           # memory | compute
    job_id: str
    valid: bool = True   # False when the point exceeds the hardware roofline


def roofline_points(records: list[PerfRecord],
                    tolerance: float = 1e-6) -> tuple[list[RooflinePoint], list[str]]:
    """One point per record: I(b) from the logged descriptor, achieved FLOP/s
    from useful work over device busy time.

    Records without a model descriptor or busy-time measurement are skipped
    with a warning. Points above min(P, B*I) by more than the tolerance are
    flagged invalid (a measurement cannot beat the hardware)."""
    points: list[RooflinePoint] = []
    warnings: list[str] = []
    for rec in records:
        env = rec.env_log or {}
        if not env.get("model"):
            warnings.append(f"{rec.job_id}: no model descriptor logged; skipped")
            continue
        if rec.busy_ps <= 0 or rec.ok_count == 0:
            warnings.append(f"{rec.job_id}: no device busy time measured; skipped")
            continue
        desc = ModelDescriptor.from_doc(env["model"])
        job = env.get("job") or {}
        batch = ((job.get("backend") or {}).get("batching") or {}).get("batch_size", 1)
        hardware = HardwareProfile.from_doc(env["hardware"]) if env.get("hardware") else None
        precision = (job.get("backend") or {}).get("numeric_precision", "fp32")

        intensity = desc.operational_intensity(batch)
        achieved = desc.flops_per_sample * rec.ok_count / (rec.busy_ps / 1e12)

        bound = "memory"
        valid = True
        if hardware is not None:
            sim = (job.get("backend") or {}).get("sim") or {}
            e_c = sim.get("compute_efficiency", 1.0)
            e_m = sim.get("mem_efficiency", 1.0)
            effective_ridge = (e_c * hardware.peak_flops(precision)) / (e_m * hardware.mem_bandwidth)
            bound = "memory" if intensity < effective_ridge else "compute"
            cap = roofline_attainable(hardware, intensity, precision)
            if achieved > cap * (1.0 + tolerance):
                valid = False
                warnings.append(
                    f"{rec.job_id}: achieved {achieved:.3e} FLOP/s exceeds roofline "
                    f"{cap:.3e}; invalid measurement")
        points.append(RooflinePoint(
            label=f"{desc.model_id}@b{batch}", intensity=intensity,
            achieved=achieved, bound=bound, job_id=rec.job_id, valid=valid))
    return points, warnings


def _dotted_get(doc: dict, path: str):
    cur = doc
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def metric_value(record: PerfRecord, metric: str) -> float | None:
    """Scalar metric of a record; None when the record cannot provide it."""
    if metric == "throughput":
        return record.throughput
    if metric == "error_rate":
        return record.error_rate
    if metric == "cold_start":
        return record.cold_start_s
    if metric == "utilization":
        return record.mean_utilization()
    if metric in ("mean_latency", "p50", "p95", "p99"):
        digest = record.digests.get("e2e")
        if digest is None or digest.count == 0:
            return None
        if metric == "mean_latency":
            return digest.mean
        return digest.percentile(float(metric[1:]) / 100.0)
    if metric in ("energy_per_req", "co2_per_req"):
        if not record.costs:
            return None
        return record.costs.get(f"{metric}_j" if metric == "energy_per_req" else f"{metric}_g")
    if metric == "cost_per_req":
        offers = (record.costs or {}).get("cloud")
        if not offers:
            return None
        return min(o["usd_per_req"] for o in offers)
    raise AnalysisError(f"unknown metric {metric!r}")


HIGHER_IS_BETTER = {"throughput": True, "utilization": True}
HEATMAP_METRICS = ("utilization", "p99", "throughput", "cost_per_req")


@dataclass
class HeatGrid:
    axis1_name: str
    axis1_values: list
    axis2_name: str
    axis2_values: list
    metric: str
    matrix: list[list[float]]  # row-major: matrix[i][j] = (axis1[i], axis2[j])

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([f"{self.axis1_name}\\{self.axis2_name}", *self.axis2_values])
            for v1, row in zip(self.axis1_values, self.matrix):
                writer.writerow([v1, *row])


def build_heatgrid(records: list[PerfRecord], axis1: str, axis2: str,
                   metric: str) -> HeatGrid:
    """Grid a sweep's records by two job-spec paths (e.g. model.generate.num_layers,
    backend.batching.batch_size). The sweep must cover the full product of the
    observed axis values; holes are an error naming the missing cells."""
    if metric not in HEATMAP_METRICS:
        raise AnalysisError(f"unknown heatmap metric {metric!r} (one of {HEATMAP_METRICS})")
    cells: dict[tuple, float] = {}
    for rec in records:
        job = (rec.env_log or {}).get("job") or {}
        v1 = _dotted_get(job, axis1)
        v2 = _dotted_get(job, axis2)
        if v1 is None or v2 is None:
            continue
        if (v1, v2) in cells:
            raise AnalysisError(f"duplicate sweep cell ({axis1}={v1}, {axis2}={v2})")
        value = metric_value(rec, metric)
        cells[(v1, v2)] = math.nan if value is None else value
    if not cells:
        raise AnalysisError(f"no records carry both {axis1!r} and {axis2!r}")
    axis1_values = sorted({k[0] for k in cells})
    axis2_values = sorted({k[1] for k in cells})
    missing = [(v1, v2) for v1 in axis1_values for v2 in axis2_values
               if (v1, v2) not in cells]
    if missing:
        pretty = ", ".join(f"({axis1}={v1}, {axis2}={v2})" for v1, v2 in missing)
        raise AnalysisError(f"incomplete sweep; missing cells: {pretty}")
    matrix = [[cells[(v1, v2)] for v2 in axis2_values] for v1 in axis1_values]
    return HeatGrid(axis1, axis1_values, axis2, axis2_values, metric, matrix)


def recommend(records: list[PerfRecord], latency_p99: float,
              rank_by: str = "cost_per_req") -> tuple[list[PerfRecord], PerfRecord | None]:
    """Top-3 records meeting the p99 SLO, ranked by the metric (lower is
    better unless the metric says otherwise). Returns (selected, nearest_miss)
    where nearest_miss is the smallest-p99 record when nothing qualifies."""
    measured = [(rec, metric_value(rec, "p99")) for rec in records]
    measured = [(rec, p99) for rec, p99 in measured if p99 is not None]
    if not measured:
        return [], None
    qualifying = [(rec, p99) for rec, p99 in measured if p99 <= latency_p99]
    if not qualifying:
        nearest = min(measured, key=lambda rp: rp[1])[0]
        return [], nearest

    higher_better = HIGHER_IS_BETTER.get(rank_by, False)

    def sort_key(rp):
        rec, p99 = rp
        value = metric_value(rec, rank_by)
        if value is None:
            primary = math.inf
        else:
            primary = -value if higher_better else value
        return (primary, p99, rec.job_id)

    ranked = sorted(qualifying, key=sort_key)
    return [rec for rec, _ in ranked[:3]], None


GROUP_KEYS = {
    "hardware": lambda rec: ((rec.env_log.get("hardware") or {}).get("id")
                             if rec.env_log else None),
    "model_family": lambda rec: ((rec.env_log.get("model") or {}).get("family")
                                 if rec.env_log else None),
    "backend": lambda rec: rec.env_log.get("backend_kind") if rec.env_log else None,
}


def leaderboard(records: list[PerfRecord], group_by: str,
                sort_metric: str) -> list[dict]:
    """Best record per group, sorted by the metric (descending for
    higher-is-better metrics, ascending otherwise)."""
    if group_by not in GROUP_KEYS:
        raise AnalysisError(f"unknown group_by {group_by!r} (one of {sorted(GROUP_KEYS)})")
    higher_better = HIGHER_IS_BETTER.get(sort_metric, False)
    key_fn = GROUP_KEYS[group_by]
    best: dict[str, tuple[float, PerfRecord]] = {}
    for rec in records:
        group = key_fn(rec)
        if group is None:
            continue
        value = metric_value(rec, sort_metric)
        if value is None:
            continue
        cur = best.get(group)
        better = cur is None or (value > cur[0] if higher_better else value < cur[0])
        if better:
            best[group] = (value, rec)
    rows = [{"group": g, sort_metric: v, "job_id": rec.job_id, "job_name": rec.job_name}
            for g, (v, rec) in best.items()]
    rows.sort(key=lambda r: r[sort_metric], reverse=higher_better)
    return rows


def speedup_table(records: list[PerfRecord], baseline_job_id: str) -> list[dict]:
    """Mean-latency speedups against a designated baseline record:
    speedup = baseline_latency / record_latency."""
    by_id = {rec.job_id: rec for rec in records}
    if baseline_job_id not in by_id:
        raise AnalysisError(f"baseline record {baseline_job_id!r} not in the record set")
    base = metric_value(by_id[baseline_job_id], "mean_latency")
    if base is None:
        raise AnalysisError("baseline record has no latency samples")
    rows = []
    for rec in records:
        lat = metric_value(rec, "mean_latency")
        if lat is None or lat <= 0:
            continue
        rows.append({"job_id": rec.job_id, "job_name": rec.job_name,
                     "mean_latency": lat, "speedup": base / lat})
    rows.sort(key=lambda r: r["speedup"], reverse=True)
    return rows


def emit_cdf(digest: LatencyDigest, path: str | Path):
    """Empirical CDF as CSV: one (latency_s, cumulative_fraction) row per sample."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["latency_s", "cum_fraction"])
        for value, fraction in digest.cdf_rows():
            writer.writerow([repr(value), repr(fraction)])


def emit_roofline_csv(hardware: HardwareProfile, points: list[RooflinePoint],
                      path: str | Path, precision: str = "fp32",
                      curve_points: int = 64):
    """Attainable curve plus measured points, plot-ready."""
    ridge = hardware.ridge_point(precision)
    lo = min([p.intensity for p in points] + [ridge / 64]) / 2
    hi = max([p.intensity for p in points] + [ridge * 64]) * 2
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "label", "intensity", "flops_per_s", "bound", "valid"])
        for k in range(curve_points + 1):
            i = lo * (hi / lo) ** (k / curve_points)
            writer.writerow(["roofline", hardware.id, repr(i),
                             repr(roofline_attainable(hardware, i, precision)), "", ""])
        for p in points:
            writer.writerow(["point", p.label, repr(p.intensity), repr(p.achieved),
                             p.bound, p.valid])


def emit_bar_csv(rows: list[dict], path: str | Path):
    if not rows:
        raise AnalysisError("no rows to emit")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
