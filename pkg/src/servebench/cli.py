"""Single entry point for every workflow: cluster roles, local runs, model
generation, scheduler studies, and analysis queries.

Exit codes: 0 success, 1 user error, 2 internal error. Every reporting
subcommand takes --format json for scripting; config precedence is flags over
spec file over bundled defaults, and the effective config always lands in the
run's environment log.
"""

from __future__ import annotations

import copy
import json
import math
import os
import sys
import traceback
from pathlib import Path

import click
import yaml

from . import analysis
from .cluster import Follower, Leader
from .cluster import protocol
from .cluster.protocol import ProtocolError, message
from .digest import to_ps
from .errors import ServebenchError
from .harness import replay_record, run_from_spec
from .hardware import load_hardware_catalog
from .jobspec import parse_job_doc
from .modelgen import GeneratorParams, generate_model
from .perfdb import PerfDB
from .repository import ModelRepository
from .scheduler import compare_policies, generate_jobs, parse_trace, write_trace
from .workload import export_schedule, gen_arrivals

ENV_LEADER = "SERVEBENCH_LEADER"


def _leader_option():
    return click.option("--leader", "leader_addr", default=lambda: os.environ.get(ENV_LEADER),
                        required=False, help=f"leader HOST:PORT (default ${ENV_LEADER})")


def _format_option(fn):
    return click.option("--format", "fmt", type=click.Choice(["human", "json"]),
                        default="human", help="output format")(fn)


def _perfdb_option(fn):
    return click.option("--perfdb", "perfdb_root", default="perfdb",
                        show_default=True, help="performance store directory")(fn)


def _require_leader(leader_addr):
    if not leader_addr:
        raise click.UsageError(f"--leader required (or set ${ENV_LEADER})")
    return leader_addr


def _emit(doc, fmt: str, human_fn):
    if fmt == "json":
        click.echo(json.dumps(doc, indent=2, sort_keys=True, default=str))
    else:
        human_fn(doc)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="log progress to stderr")
def cli(verbose):
    """Benchmark harness for model-inference serving."""
    import logging
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


@cli.group()
def leader():
    """Run or talk to the cluster leader."""


@leader.command("serve")
@click.option("--bind", default="127.0.0.1:7070", show_default=True)
@click.option("--policy", default="qa+sjf", show_default=True,
              type=click.Choice(["rr+fcfs", "rr+sjf", "qa+sjf", "qa+fcfs"]))
@click.option("--heartbeat-interval", default=2.0, show_default=True)
@click.option("--scheduling-interval", default=1.0, show_default=True)
@_perfdb_option
def leader_serve(bind, policy, heartbeat_interval, scheduling_interval, perfdb_root):
    """Accept submissions and dispatch them to followers."""
    node = Leader(bind, policy=policy, perfdb_root=perfdb_root,
                  heartbeat_interval=heartbeat_interval,
                  scheduling_interval=scheduling_interval)
    click.echo(f"leader serving on {node.address} (policy {policy}, perfdb {perfdb_root})")
    node.serve_forever()


@cli.group()
def follower():
    """Run a follower worker."""


@follower.command("serve")
@_leader_option()
@click.option("--worker-id", default=None, help="defaults to host-pid")
@click.option("--catalog", "catalog_path", default=None, help="hardware catalog file")
@click.option("--repo", "repo_root", default=None, help="model repository root")
def follower_serve(leader_addr, worker_id, catalog_path, repo_root):
    """Execute dispatched jobs one at a time, reporting status and results."""
    leader_addr = _require_leader(leader_addr)
    import platform
    worker_id = worker_id or f"{platform.node()}-{os.getpid()}"
    catalog = load_hardware_catalog(catalog_path) if catalog_path else None
    node = Follower(leader_addr, worker_id, catalog=catalog, repo_root=repo_root)
    click.echo(f"follower {worker_id} serving against {leader_addr}")
    node.serve_forever()


@cli.command()
@click.argument("spec_file", type=click.Path(exists=True))
@_leader_option()
def submit(spec_file, leader_addr):
    """Submit a job spec to the leader; prints the job id."""
    leader_addr = _require_leader(leader_addr)
    doc = yaml.safe_load(Path(spec_file).read_text())
    parse_job_doc(doc)  # fail fast with a precise message before going remote
    reply = protocol.request(leader_addr, message(protocol.SUBMIT, spec=doc))
    click.echo(reply["job_id"])


@cli.command()
@click.argument("job_id")
@_leader_option()
@_format_option
def status(job_id, leader_addr, fmt):
    """Show a submitted job's lifecycle state."""
    leader_addr = _require_leader(leader_addr)
    reply = protocol.request(leader_addr, message(protocol.QUERY, job_id=job_id))
    doc = reply["status"]

    def human(d):
        click.echo(f"{d['job_id']}: {d['state']}"
                   + (f" on {d['worker_id']}" if d.get("worker_id") else "")
                   + (f" ({d['reason']})" if d.get("reason") else ""))

    _emit(doc, fmt, human)


def _print_summary(record_doc):
    pcts = record_doc.get("percentiles", {})
    click.echo(f"job        {record_doc['job_name']} ({record_doc['job_id']})")
    click.echo(f"requests   {record_doc['ok_count']} ok / {record_doc['failed_count']} failed"
               f" of {record_doc['scheduled_count']} scheduled")
    click.echo(f"throughput {record_doc['throughput']:.2f} req/s"
               f"   error rate {record_doc['error_rate']:.3f}"
               f"   cold start {record_doc['cold_start_s']:.3f} s")
    if pcts:
        pretty = "  ".join(f"{k}={v * 1e3:.3f}ms" for k, v in sorted(pcts.items()))
        click.echo(f"latency    {pretty}")
    costs = record_doc.get("costs")
    if costs:
        line = (f"energy/req {costs['energy_per_req_j']:.4g} J"
                f"   co2/req {costs['co2_per_req_g']:.4g} g")
        for offer in costs.get("cloud", []):
            line += (f"   {offer['provider_label']}/{offer['instance_label']}"
                     f" {offer['usd_per_req']:.3g} USD/req")
        click.echo(line)


@cli.command("run-local")
@click.argument("spec_file", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="override the job seed")
@click.option("--catalog", "catalog_path", default=None, help="hardware catalog file")
@click.option("--repo", "repo_root", default=None, help="model repository root")
@click.option("--dump-arrivals", type=click.Path(), default=None,
              help="export the arrival schedule (one offset per line)")
@_perfdb_option
@_format_option
def run_local(spec_file, seed, catalog_path, repo_root, dump_arrivals, perfdb_root, fmt):
    """Run one job in-process (no cluster) and store its record."""
    doc = yaml.safe_load(Path(spec_file).read_text())
    if seed is not None:
        doc["seed"] = seed
        if isinstance(doc.get("workload"), dict):
            doc["workload"].pop("seed", None)
    catalog = load_hardware_catalog(catalog_path) if catalog_path else None
    spec = parse_job_doc(doc, catalog)
    if dump_arrivals and spec.workload.pattern != "closed_loop":
        export_schedule(gen_arrivals(spec.workload), dump_arrivals)
    record = run_from_spec(spec, catalog=catalog, repo_root=repo_root)
    PerfDB(perfdb_root).append(record)
    _emit(record.to_doc(), fmt, _print_summary)


@cli.command()
@click.option("--block", type=click.Choice(["fc", "cnn", "rnn", "transformer"]), required=True)
@click.option("--layers", type=int, required=True)
@click.option("--width", type=int, required=True)
@click.option("--seq-len", type=int, default=None)
@click.option("--input-dims", default=None, help="e.g. 1024 or 64x16x16")
@click.option("--precision-bytes", type=click.Choice(["2", "4"]), default="4")
@click.option("--register", "do_register", is_flag=True, help="store in the model repository")
@click.option("--repo", "repo_root", default="models", show_default=True)
@_format_option
def modelgen(block, layers, width, seq_len, input_dims, precision_bytes, do_register,
             repo_root, fmt):
    """Generate an analytic model descriptor from stacked blocks."""
    dims = tuple(int(d) for d in input_dims.split("x")) if input_dims else ()
    params = GeneratorParams(block=block, num_layers=layers, width=width,
                             seq_len=seq_len, input_dims=dims,
                             precision_bytes=int(precision_bytes))
    desc = generate_model(params)
    if do_register:
        ModelRepository(repo_root).register(desc)

    def human(doc):
        click.echo(f"{doc['model_id']}: {doc['flops_per_sample']:.4g} FLOP/sample, "
                   f"{doc['weight_bytes']:.4g} weight B, "
                   f"{doc['activation_bytes_per_sample']:.4g} activation B/sample")

    _emit(desc.to_doc(), fmt, human)


def _set_path(doc: dict, path: str, value):
    parts = path.split(".")
    cur = doc
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value


@cli.command()
@click.argument("spec_file", type=click.Path(exists=True))
@click.option("--axis", "axes", multiple=True, required=True,
              help="job-doc path and values, e.g. backend.batching.batch_size=1,2,4")
@click.option("--catalog", "catalog_path", default=None)
@click.option("--repo", "repo_root", default=None)
@_perfdb_option
@_format_option
def sweep(spec_file, axes, catalog_path, repo_root, perfdb_root, fmt):
    """Run a base job across a grid of spec overrides (row-major axis order)."""
    base_doc = yaml.safe_load(Path(spec_file).read_text())
    catalog = load_hardware_catalog(catalog_path) if catalog_path else None
    parsed_axes = []
    for ax in axes:
        path, _, raw = ax.partition("=")
        if not raw:
            raise click.UsageError(f"--axis needs PATH=v1,v2,...; got {ax!r}")
        values = [yaml.safe_load(v) for v in raw.split(",")]
        parsed_axes.append((path, values))

    import itertools
    db = PerfDB(perfdb_root)
    results = []
    for combo in itertools.product(*(vals for _, vals in parsed_axes)):
        doc = copy.deepcopy(base_doc)
        suffix = []
        for (path, _), value in zip(parsed_axes, combo):
            _set_path(doc, path, value)
            suffix.append(f"{path.rsplit('.', 1)[-1]}{value}")
        doc["job_name"] = f"{base_doc.get('job_name', 'sweep')}-{'-'.join(suffix)}"
        spec = parse_job_doc(doc, catalog)
        record = run_from_spec(spec, catalog=catalog, repo_root=repo_root)
        db.append(record)
        results.append({"job_id": record.job_id, "job_name": record.job_name,
                        **{p: v for (p, _), v in zip(parsed_axes, combo)}})

    def human(rows):
        for r in rows:
            click.echo(f"{r['job_id']}  {r['job_name']}")

    _emit(results, fmt, human)


@cli.command("sched-sim")
@click.argument("trace_file", required=False, type=click.Path(exists=True))
@click.option("--random", "random_spec", nargs=3, default=None,
              metavar="N K DIST", help="random trace: jobs, workers, exp:MEAN|pareto:ALPHA")
@click.option("--arrivals", default=None, metavar="poisson:RATE",
              help="submission process for --random (default: all at t=0)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", "workers_override", type=int, default=None,
              help="worker count when simulating a trace file")
@click.option("--policy", "policies", multiple=True,
              type=click.Choice(["rr+fcfs", "rr+sjf", "qa+sjf", "qa+fcfs"]),
              help="policies to compare (default: rr+fcfs rr+sjf qa+sjf)")
@click.option("--cdf-out", type=click.Path(), default=None,
              help="directory for per-policy JCT CDF csv files")
@click.option("--save-trace", type=click.Path(), default=None,
              help="write the simulated trace for reuse")
@_format_option
def sched_sim(trace_file, random_spec, arrivals, seed, workers_override, policies,
              cdf_out, save_trace, fmt):
    """Compare scheduling policies on one trace; speedups are vs rr+fcfs."""
    if (trace_file is None) == (random_spec is None):
        raise click.UsageError("give a TRACE_FILE or --random N K DIST (not both)")
    if trace_file is not None:
        jobs = parse_trace(trace_file)
        num_workers = workers_override or 4
    else:
        n, k, dist = random_spec
        rate = None
        if arrivals:
            kind, _, val = arrivals.partition(":")
            if kind != "poisson" or not val:
                raise click.UsageError(f"--arrivals must be poisson:RATE, got {arrivals!r}")
            rate = float(val)
        jobs = generate_jobs(int(n), dist, rate, seed)
        num_workers = int(k)
    if save_trace:
        write_trace(jobs, save_trace)

    chosen = list(policies) or ["rr+fcfs", "rr+sjf", "qa+sjf"]
    if "rr+fcfs" not in chosen:
        chosen.insert(0, "rr+fcfs")
    results = compare_policies(jobs, num_workers, chosen)
    baseline = results["rr+fcfs"].mean_jct

    report = {
        "num_jobs": len(jobs),
        "num_workers": num_workers,
        "policies": {
            name: {"mean_jct": r.mean_jct, "total_jct": r.total_jct,
                   "speedup_vs_rr_fcfs": baseline / r.mean_jct if r.mean_jct else math.inf}
            for name, r in results.items()
        },
    }
    if cdf_out:
        outdir = Path(cdf_out)
        outdir.mkdir(parents=True, exist_ok=True)
        from .digest import LatencyDigest
        for name, r in results.items():
            digest = LatencyDigest()
            digest.extend(to_ps(j.jct) for j in r.jobs)
            path = outdir / f"jct-cdf-{name.replace('+', '-')}.csv"
            analysis.emit_cdf(digest, path)
        report["cdf_dir"] = str(outdir)

    def human(doc):
        click.echo(f"{doc['num_jobs']} jobs on {doc['num_workers']} workers")
        for name, row in doc["policies"].items():
            click.echo(f"  {name:<8} mean JCT {row['mean_jct']:10.3f} s"
                       f"   speedup vs rr+fcfs {row['speedup_vs_rr_fcfs']:.3f}x")

    _emit(report, fmt, human)


@cli.command()
@click.option("--model-family", default=None)
@click.option("--hardware", "hardware_id", default=None)
@click.option("--backend", "backend_kind", default=None)
@click.option("--since", default=None, help="ISO timestamp lower bound")
@_perfdb_option
@_format_option
def query(model_family, hardware_id, backend_kind, since, perfdb_root, fmt):
    """List stored records with key metrics."""
    db = PerfDB(perfdb_root)
    rows = []
    for record in db.records(model_family=model_family, hardware_id=hardware_id,
                             backend_kind=backend_kind, since=since):
        rows.append({
            "job_id": record.job_id,
            "job_name": record.job_name,
            "throughput": record.throughput,
            "error_rate": record.error_rate,
            "p99": record.percentiles.get("p99"),
            "hardware": (record.env_log.get("hardware") or {}).get("id"),
            "model_family": (record.env_log.get("model") or {}).get("family"),
            "backend": record.env_log.get("backend_kind"),
        })

    def human(items):
        if not items:
            click.echo("no records")
            return
        for r in items:
            p99 = f"{r['p99'] * 1e3:.2f}ms" if r["p99"] is not None else "-"
            click.echo(f"{r['job_id']:<40} {r['job_name']:<28} "
                       f"thr {r['throughput']:9.2f}/s  p99 {p99:>10}  "
                       f"{r['hardware'] or '-'}/{r['backend']}")

    _emit(rows, fmt, human)


@cli.command()
@click.option("--hardware", "hardware_id", required=True)
@click.option("--catalog", "catalog_path", default=None)
@click.option("-o", "--out", "out_path", default=None, help="CSV output path")
@_perfdb_option
@_format_option
def roofline(hardware_id, catalog_path, out_path, perfdb_root, fmt):
    """Roofline points for stored runs on one hardware profile."""
    catalog = load_hardware_catalog(catalog_path)
    profile = {p.id: p for p in catalog}.get(hardware_id)
    if profile is None:
        raise ServebenchError(f"unknown hardware id {hardware_id!r}")
    db = PerfDB(perfdb_root)
    records = db.records(hardware_id=hardware_id)
    points, warnings = analysis.roofline_points(records)
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    if out_path:
        analysis.emit_roofline_csv(profile, points, out_path)
    doc = {
        "hardware": hardware_id,
        "ridge_point": profile.ridge_point(),
        "points": [{"label": p.label, "intensity": p.intensity, "achieved": p.achieved,
                    "bound": p.bound, "valid": p.valid, "job_id": p.job_id}
                   for p in points],
    }

    def human(d):
        click.echo(f"{d['hardware']} ridge point {d['ridge_point']:.3f} FLOP/byte")
        for p in d["points"]:
            flag = "" if p["valid"] else "  INVALID(above roofline)"
            click.echo(f"  {p['label']:<28} I={p['intensity']:10.3f}  "
                       f"{p['achieved']:.4g} FLOP/s  {p['bound']}{flag}")

    _emit(doc, fmt, human)


@cli.command()
@click.option("--axis1", required=True, help="job-doc path, e.g. backend.batching.batch_size")
@click.option("--axis2", required=True, help="job-doc path, e.g. model.generate.num_layers")
@click.option("--metric", type=click.Choice(list(analysis.HEATMAP_METRICS)), default="p99")
@click.option("-o", "--out", "out_path", default=None, help="CSV output path")
@_perfdb_option
@_format_option
def heatmap(axis1, axis2, metric, out_path, perfdb_root, fmt):
    """Grid a finished sweep into heat-map CSV data."""
    db = PerfDB(perfdb_root)
    grid = analysis.build_heatgrid(db.records(), axis1, axis2, metric)
    if out_path:
        grid.write_csv(out_path)
    doc = {"axis1": grid.axis1_name, "axis1_values": grid.axis1_values,
           "axis2": grid.axis2_name, "axis2_values": grid.axis2_values,
           "metric": grid.metric, "matrix": grid.matrix}

    def human(d):
        click.echo(f"{d['metric']} over {d['axis1']} x {d['axis2']}")
        header = "".join(f"{v!s:>14}" for v in d["axis2_values"])
        click.echo(f"{'':>14}{header}")
        for v1, row in zip(d["axis1_values"], d["matrix"]):
            cells = "".join(f"{c:14.5g}" for c in row)
            click.echo(f"{v1!s:>14}{cells}")

    _emit(doc, fmt, human)


@cli.command()
@click.option("--latency-p99", type=float, required=True, help="SLO bound in seconds")
@click.option("--rank-by", default="cost_per_req", show_default=True)
@_perfdb_option
@_format_option
def recommend(latency_p99, rank_by, perfdb_root, fmt):
    """Top-3 stored configurations meeting a p99 SLO."""
    db = PerfDB(perfdb_root)
    selected, nearest = analysis.recommend(db.records(), latency_p99, rank_by)
    doc = {
        "slo_latency_p99": latency_p99,
        "rank_by": rank_by,
        "selected": [{"job_id": r.job_id, "job_name": r.job_name,
                      "p99": analysis.metric_value(r, "p99"),
                      rank_by: analysis.metric_value(r, rank_by),
                      "env_log": r.env_log}
                     for r in selected],
        "nearest_miss": None if nearest is None else {
            "job_id": nearest.job_id, "p99": analysis.metric_value(nearest, "p99")},
    }

    def human(d):
        if d["selected"]:
            for i, r in enumerate(d["selected"], 1):
                click.echo(f"{i}. {r['job_id']}  p99={r['p99'] * 1e3:.2f}ms  "
                           f"{rank_by}={r[rank_by]}")
        else:
            click.echo("no configuration meets the SLO")
            if d["nearest_miss"]:
                nm = d["nearest_miss"]
                click.echo(f"nearest miss: {nm['job_id']} at p99={nm['p99'] * 1e3:.2f}ms")

    _emit(doc, fmt, human)


@cli.command()
@click.option("--group-by", type=click.Choice(sorted(analysis.GROUP_KEYS)), default="hardware")
@click.option("--sort", "sort_metric", default="throughput", show_default=True)
@click.option("-o", "--out", "out_path", default=None, help="CSV output path")
@click.option("--cdf-out", type=click.Path(), default=None,
              help="directory for per-group e2e latency CDFs")
@click.option("--speedup-baseline", default=None, metavar="JOB_ID",
              help="also emit mean-latency speedups vs this record")
@_perfdb_option
@_format_option
def leaderboard(group_by, sort_metric, out_path, cdf_out, speedup_baseline,
                perfdb_root, fmt):
    """Best stored result per group, ranked by a metric."""
    db = PerfDB(perfdb_root)
    records = db.records()
    rows = analysis.leaderboard(records, group_by, sort_metric)
    if out_path:
        analysis.emit_bar_csv(rows, out_path)
    if cdf_out:
        outdir = Path(cdf_out)
        outdir.mkdir(parents=True, exist_ok=True)
        by_id = {r.job_id: r for r in records}
        for row in rows:
            digest = by_id[row["job_id"]].digests.get("e2e")
            if digest and digest.count:
                analysis.emit_cdf(digest, outdir / f"cdf-{row['group']}.csv")
    speedups = None
    if speedup_baseline:
        speedups = analysis.speedup_table(records, speedup_baseline)
        if out_path:
            analysis.emit_bar_csv(speedups, Path(out_path).with_suffix(".speedup.csv"))

    def human(doc):
        items = doc["rows"] if isinstance(doc, dict) else doc
        if not items:
            click.echo("no records")
            return
        for i, r in enumerate(items, 1):
            click.echo(f"{i}. {r['group']:<16} {sort_metric}={r[sort_metric]:.6g}  "
                       f"({r['job_id']})")
        if isinstance(doc, dict) and doc.get("speedups"):
            click.echo(f"speedups vs {speedup_baseline}:")
            for r in doc["speedups"]:
                click.echo(f"  {r['job_id']:<40} {r['speedup']:.3f}x")

    _emit({"rows": rows, "speedups": speedups} if speedups is not None else rows,
          fmt, human)


@cli.command()
@click.argument("target")
@click.option("--store", is_flag=True, help="also store the replayed record")
@_perfdb_option
@_format_option
def replay(target, store, perfdb_root, fmt):
    """Re-execute a sim-backend record from its environment log and verify
    that the digests reproduce bit-for-bit. TARGET is a job id or record path."""
    db = PerfDB(perfdb_root)
    if Path(target).is_file():
        from .records import PerfRecord
        original = PerfRecord.from_doc(json.loads(Path(target).read_text()))
    else:
        original = db.get(target)
    fresh = replay_record(original)
    match = fresh.content_hash() == original.content_hash()
    if store and match:
        db.append(fresh)
    doc = {"job_id": original.job_id, "replay_job_id": fresh.job_id,
           "original_hash": original.content_hash(),
           "replay_hash": fresh.content_hash(), "match": match}

    def human(d):
        verdict = "reproduced bit-for-bit" if d["match"] else "MISMATCH"
        click.echo(f"{d['job_id']}: {verdict}")

    _emit(doc, fmt, human)
    if not match:
        raise ServebenchError("replay digests differ from the stored record")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except ProtocolError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except ServebenchError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except BrokenPipeError:
        return 0
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
