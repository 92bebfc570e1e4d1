"""Command implementations behind the CLI.

Each command writes its artifacts into a run directory named
<output_dir>/<command>-<digest12>, then a manifest.json describing the
config, code version, seed, wall time and artifact hashes. A runtime
failure leaves the partial outputs plus a FAILED marker.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import shutil
import time

import numpy as np

from . import __version__
from .analysis import (bins_csv, gradient_bins, holder_exponent, In_monitor, uniqueness_sweep)
from .grid import Field
from .heat_kernel import (verify_algebra_bound, verify_cross_integral, verify_deriv_bound,
                          verify_difference_pointwise, verify_outside_tail,
                          verify_weighted_integral)
from .snapshot_io import encode_snapshot, read_snapshot, snapshot_csv
from .solver import SolveConfig, SolverError, initial_field, paired_solve, solve
from .yw import gamma_seq, make_mollifier, phi_props_check

MANIFEST_VERSION = 1


def _suite_A_1(res):
    return [verify_algebra_bound(1.0, 2.0, [1.0, 10.0, 100.0], n_r=3)]


def _suite_L4_2(res):
    return [verify_deriv_bound(np.geomspace(1e-3, 1.0, 7), np.linspace(-2, 2, 81), q=1)]


def _suite_L4_3(res):
    d0 = 0.5
    ts = d0 ** 2 * np.geomspace(1e-8, 1e-6, 5)
    return [verify_cross_integral(ts, ts, 0.0, d0, 0.5, resolution=res, fit="t")]


def _suite_L4_4(res):
    return [verify_weighted_integral([0.01, 0.1, 1.0], 1.0, 0.5, 0.5, 1.0, 0.5,
                                     resolution=res)]


def _suite_L4_5(res):
    return [verify_outside_tail([0.0, 0.0], [0.1, 0.2], [0.2, 0.3], 0.0, 0.05, 0.25, 0.5, 2.0,
                                0.5, 0.5, resolution=res)]


def _suite_A(res):
    out = verify_difference_pointwise(0.1, 0.2, np.linspace(-1, 1, 21), 0.05)
    return [out[k] for k in ("A_2a", "A_2b", "A_3")]


KERNEL_SUITES = {"A_1": _suite_A_1, "L4_2": _suite_L4_2, "L4_3": _suite_L4_3,
                 "L4_4": _suite_L4_4, "L4_5": _suite_L4_5, "A_2": _suite_A}


class RunContext:
    """Run directory bookkeeping: artifacts, manifest and FAILED marker."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.dir = cfg.run_dir()
        self.artifacts = {}
        self.t0 = time.perf_counter()

    def open(self):
        if os.path.isdir(self.dir):
            shutil.rmtree(self.dir)
        os.makedirs(self.dir)

    def write(self, name: str, data):
        blob = data.encode() if isinstance(data, str) else bytes(data)
        with open(os.path.join(self.dir, name), "wb") as fh:
            fh.write(blob)
        self.artifacts[name] = hashlib.sha256(blob).hexdigest()

    def manifest(self, status: str, extra: dict | None = None) -> dict:
        cfg = self.cfg
        conf = {"command": cfg.command, "master_seed": cfg.master_seed,
                "output_dir": cfg.output_dir, **cfg.parameters}
        doc = {"manifest_version": MANIFEST_VERSION, "command": cfg.command,
               "config_digest": cfg.digest(), "code_version": __version__,
               "seed": cfg.master_seed, "wall_time_s": time.perf_counter() - self.t0,
               "status": status, "config": conf,
               "artifacts": dict(sorted(self.artifacts.items()))}
        if extra:
            doc.update(extra)
        with open(os.path.join(self.dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return doc

    def fail(self, exc: BaseException):
        with open(os.path.join(self.dir, "FAILED"), "w", encoding="utf-8") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        self.manifest("failed", {"error": str(exc)})


def _diag_csv(times, **cols) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *cols])
    for i, t in enumerate(times):
        w.writerow([repr(float(t)), *(repr(float(c[i])) for c in cols.values())])
    return buf.getvalue()


def _write_run(ctx, res, prefix=""):
    d = res.diagnostics
    ctx.write(f"{prefix}diagnostics.csv", _diag_csv(d["times"], sup_norm=d["sup_norm"],
                                                    mean=d["mean"]))
    for k, (t, f) in enumerate(res.snapshots):
        ctx.write(f"{prefix}snap_{k:05d}.bin", encode_snapshot(f, t))
        if f.grid.q == 1:
            ctx.write(f"{prefix}snap_{k:05d}.csv", snapshot_csv(f, t))
    ctx.write(f"{prefix}provenance.json", json.dumps(res.provenance, sort_keys=True,
                                                     default=str, indent=2) + "\n")


def cmd_simulate(ctx, cfg, jobs):
    sc: SolveConfig = cfg.built["solve"]
    try:
        res = solve(sc)
    except SolverError as exc:
        if exc.partial is not None:
            _write_run(ctx, exc.partial)
        raise
    _write_run(ctx, res)
    return {"steps_completed": res.provenance["steps_completed"]}


def cmd_paired(ctx, cfg, jobs):
    sc: SolveConfig = cfg.built["solve"]
    sec = cfg.parameters.get("paired", {}) or {}
    ic1 = sec.get("ic1", sc.ic)
    if "ic2" in sec:
        ic2 = sec["ic2"]
    else:
        base = initial_field(sc.grid, ic1)
        ic2 = Field(sc.grid, base.values + float(sec.get("perturbation", 1e-12)))
    try:
        pr = paired_solve(sc, ic1, ic2)
    except SolverError as exc:
        if exc.partial is not None:
            a, b = exc.partial
            _write_run(ctx, a, "first_")
            _write_run(ctx, b, "second_")
        raise
    ctx.write("pair_diff.csv", _diag_csv(pr.times, d=pr.d))
    _write_run(ctx, pr.first, "first_")
    _write_run(ctx, pr.second, "second_")
    return {"d_final": float(pr.d[-1]), "noise_draws": pr.noise_draws}


def cmd_sweep(ctx, cfg, jobs):
    sec = cfg.parameters["sweep"]
    table = uniqueness_sweep(sec["alphas"], sec["gammas"], int(sec.get("replicas", 10)),
                             cfg.built["solve"], float(sec.get("perturbation", 1e-12)),
                             float(sec.get("threshold", 1e-6)), cfg.master_seed, jobs)
    ctx.write("phase_table.csv", table.to_csv())
    return {"cells": len(table.rows)}


def cmd_verify_kernels(ctx, cfg, jobs):
    sec = cfg.parameters.get("kernels", {}) or {}
    res = int(sec.get("resolution", 16))
    parts = []
    summary = {}
    for name in sec.get("checks", list(KERNEL_SUITES)):
        for rep in KERNEL_SUITES[name](res):
            parts.append(rep.to_csv(header=not parts))
            summary[rep.lemma_id] = {"empirical_constant": rep.empirical_constant,
                                     "scaling_slope": rep.scaling_slope}
    ctx.write("kernel_reports.csv", "".join(parts))
    ctx.write("kernel_summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return {}


YW_COLUMNS = ["n", "mass", "cap_max", "dphi_max", "gap_sup", "d2phi_scaled_max", "phi0",
              "even_err", "kappa", "a_prev", "mass_ok", "cap_ok", "dphi_ok", "gap_ok",
              "d2phi_ok", "ok"]


def cmd_verify_yw(ctx, cfg, jobs):
    sec = cfg.parameters.get("yw", {}) or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(YW_COLUMNS)
    all_ok = True
    for n in sec.get("n", [1, 2, 3, 4, 5, 6]):
        r = phi_props_check(make_mollifier(n, int(sec.get("quad_resolution", 1024))))
        all_ok &= bool(r["ok"])
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in YW_COLUMNS])
    ctx.write("mollifier_checks.csv", buf.getvalue())
    eg = cfg.built.get("eps")
    if eg is not None:
        gs = gamma_seq(eg.gamma, eg.alpha)
        ctx.write("gamma_seq.csv", "m,gamma_m\n" + "".join(
            f"{m},{v!r}\n" for m, v in enumerate(gs.values)))
        ctx.write("eps_grid.csv", "i,beta_i,lambda_i\n" + "".join(
            f"{i},{b!r},{l!r}\n" for i, (b, l) in enumerate(zip(eg.betas.tolist(),
                                                                   eg.lambdas.tolist()))))
    return {"all_ok": all_ok}


def _load_history(path):
    """Snapshots of a simulate run, or of the first member of a paired run."""
    files = os.listdir(path)
    prefix = "snap_" if any(f.startswith("snap_") for f in files) else "first_snap_"
    names = sorted(f for f in files if f.startswith(prefix) and f.endswith(".bin"))
    if not names:
        raise SolverError(f"no snapshots (*.bin) in {path}", None)
    return [read_snapshot(os.path.join(path, f)) for f in names]


def cmd_analyze(ctx, cfg, jobs):
    sec = cfg.parameters["analyze"]
    hist = _load_history(sec["input"])
    t_last, u = hist[-1]
    g = u.grid
    out = {}
    lo, hi = sec.get("lags", [2 * g.h, g.L / 8])
    steps = np.unique(np.rint(np.geomspace(float(lo), float(hi), 8) / g.h).astype(int))
    a, err = holder_exponent(u, steps * g.h)
    out["holder_exponent"] = a
    out["holder_stderr"] = err
    eg = cfg.built.get("eps")
    if eg is not None:
        n = int(sec.get("n", 2))
        bins = gradient_bins(hist, t_last, n, eg, sec.get("K0"))
        ctx.write("bins.csv", bins_csv(bins))
        if "monitor_n" in sec:
            mn = int(sec["monitor_n"])
            out["In_monitor"] = In_monitor(hist, t_last, mn, eg.gamma, eg.alpha)
    ctx.write("analysis.json", json.dumps(out, sort_keys=True, indent=2) + "\n")
    return out


COMMAND_FUNCS = {"simulate": cmd_simulate, "paired": cmd_paired, "sweep": cmd_sweep,
                 "verify_kernels": cmd_verify_kernels, "verify_yw": cmd_verify_yw,
                 "analyze": cmd_analyze}


def run(cfg, jobs: int = 1) -> int:
    """Execute a validated config. Returns 0 on success, 2 on runtime failure."""
    ctx = RunContext(cfg)
    ctx.open()
    try:
        extra = COMMAND_FUNCS[cfg.command](ctx, cfg, jobs)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        ctx.fail(exc)
        return 2
    ctx.manifest("ok", {"summary": extra} if extra else None)
    return 0

