"""Full verification run: constants, densities, distances and verifiers, written to flat files."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import hardy
from .config import RunConfig
from .constants import ConstantsEstimate, degeneracy_sweep, estimate_constants
from .hardy import _jsonable
from .pipeline import TheoremSettings, Workspace, bipolar_study, flat_study, multipolar_study, \
    riemannian_study

log = logging.getLogger(__name__)

CSV_COLUMNS = ("inequality_id", "lhs", "rhs", "margin", "tolerance", "pass")
FUNK_POINTWISE_RADIUS = 0.9


@dataclass
class ConstantsStage:
    """Constants for the theorems (``theorem``) and for the pointwise suite (``pointwise``)."""

    theorem: ConstantsEstimate
    pointwise: ConstantsEstimate
    sweep: list = field(default_factory=list)
    sweep_radii: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"theorem": self.theorem.to_dict(), "pointwise": self.pointwise.to_dict()}
        if self.sweep:
            d["sweep"] = [{"radius": r, **e.to_dict()} for r, e in zip(self.sweep_radii, self.sweep)]
        return _jsonable(d)


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    timings: dict
    constants: dict
    reports: list
    verdict: str
    counts: dict

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return _jsonable({
            "config": self.config, "config_hash": self.config_hash, "timings": self.timings,
            "constants": self.constants, "reports": self.reports, "verdict": self.verdict,
            "counts": self.counts,
        })


def run_constants(cfg: RunConfig) -> ConstantsStage:
    d = cfg.data
    c = d["constants"]
    S = cfg.structure()
    kw = dict(domain_samples=c["domain_samples"], direction_samples=c["direction_samples"],
              seed=cfg.seed, refine=c["refine"], threads=d["threads"])
    if S.family == "funk":
        radii = sorted(c["sweep_radii"])
        sweep = degeneracy_sweep(S, radii, **kw)
        pw_radius = d["pointwise"]["radius"] or FUNK_POINTWISE_RADIUS
        pw = estimate_constants(S, radius=pw_radius, **kw)
        return ConstantsStage(sweep[-1], pw, sweep, radii)
    est = estimate_constants(S, radius=c["radius"], **kw)
    pw_radius = d["pointwise"]["radius"]
    pw = est if pw_radius in (None, c["radius"]) else estimate_constants(S, radius=pw_radius, **kw)
    return ConstantsStage(est, pw)


def _verdict(reports) -> str:
    return "pass" if all(r.passed for r in reports if r.gating) else "fail"


def _wanted(which, stage):
    return which == "all" or which == stage


def verify(cfg: RunConfig, which: str | None = None) -> tuple[list, ConstantsStage, dict]:
    """Run the selected stages; returns (list of (stage, report)), constants and timings."""
    d = cfg.data
    which = which or d["which"]
    S = cfg.structure()
    timings = {}
    t0 = time.perf_counter()
    const = run_constants(cfg)
    timings["constants"] = time.perf_counter() - t0
    tol = d["tolerances"]
    tf = d["test_function"]
    poles = cfg.poles()
    ws = Workspace(S, d["threads"], d["density"]["mc_samples"], cfg.seed)
    out = []

    def stage(name, fn):
        t = time.perf_counter()
        reps = fn()
        timings[name] = time.perf_counter() - t
        out.extend((name, r) for r in reps)

    if _wanted(which, "pointwise"):
        pwr = d["pointwise"]["radius"]
        if S.family == "funk" and pwr is None:
            pwr = FUNK_POINTWISE_RADIUS
        stage("pointwise", lambda: hardy.pointwise_suite(
            S, const.pointwise, d["pointwise"]["samples"], cfg.seed, d["pointwise"]["tolerance"],
            d["constants"]["bracket"], pwr))

    settings = None
    if _wanted(which, "multipolar") or _wanted(which, "bipolar"):
        settings = TheoremSettings(
            cfg.grid(), cfg.grid(d["grid"]["coarse_nodes"]), cfg.test_function(),
            eps_cells=tuple(tf["ladder"]), base_cells=tf["eps_cells"], bracket=d["constants"]["bracket"],
            eps_variation=tol["eps_variation"], square_agreement=tol["square_agreement"],
            richardson_order=tol["richardson_order"])
    if _wanted(which, "multipolar"):
        stage("multipolar", lambda: [multipolar_study(ws, poles, settings, const.theorem)])
    if _wanted(which, "bipolar"):
        if len(poles) >= 2:
            stage("bipolar", lambda: bipolar_study(ws, poles[:2], settings, const.theorem,
                                                   required_fraction=tol["nodewise_fraction"]))
        else:
            log.warning("bipolar stage skipped: fewer than two poles")
    if _wanted(which, "riemannian") and S.is_riemannian:
        grids = [cfg.grid(n) for n in d["grid"]["reduction_nodes"]]
        stage("riemannian", lambda: riemannian_study(
            ws, poles, grids, cfg.test_function(), tf["eps_cells"], tol["reduction_gap"],
            min_order=tol["div_order"]))
    if _wanted(which, "flat") and S.family == "euclidean":
        stage("flat", lambda: flat_study(cfg.grid(), poles, cfg.test_function(), tf["eps_cells"]))
    for k, v in ws.timings.items():
        timings[f"workspace.{k}"] = v
    return out, const, timings


def _csv_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(float(v))


def write_outputs(cfg: RunConfig, staged, const: ConstantsStage, timings: dict, out_dir) -> RunManifest:
    out_dir = Path(out_dir)
    (out_dir / "reports").mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    cdict = const.to_dict()
    paths = []
    rows = []
    for i, (stage, rep) in enumerate(staged):
        rec = rep.to_dict()
        rec["stage"] = stage
        rec["config_hash"] = h
        rec["constants"] = cdict["pointwise" if stage == "pointwise" else "theorem"]
        p = out_dir / "reports" / f"{i:02d}_{stage}_{rep.inequality_id}.json"
        p.write_text(json.dumps(rec, indent=2, sort_keys=True))
        paths.append(str(p.relative_to(out_dir)))
        rows.append([rep.inequality_id, _csv_value(rep.lhs), _csv_value(rep.rhs), _csv_value(rep.margin),
                     _csv_value(rep.tolerance), _csv_value(rep.passed)])
    with open(out_dir / "margins.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)
    reports = [r for _, r in staged]
    counts = {
        "total": len(reports),
        "gating": sum(r.gating for r in reports),
        "failed": sum((not r.passed) and r.gating for r in reports),
        "not_applicable": sum(r.status == hardy.NOT_APPLICABLE for r in reports),
        "exploratory": sum(r.status == hardy.EXPLORATORY for r in reports),
    }
    manifest = RunManifest(cfg.to_dict(), h, timings, cdict,
                           [{"path": p, "inequality_id": r.inequality_id, "status": r.status,
                             "passed": r.passed} for p, r in zip(paths, reports)],
                           _verdict(reports), counts)
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    return manifest


def cmd_verify(cfg: RunConfig, which: str | None = None, out_dir=None) -> RunManifest:
    staged, const, timings = verify(cfg, which)
    return write_outputs(cfg, staged, const, timings, out_dir or cfg.data["out"])


def cmd_constants(cfg: RunConfig, out_dir=None) -> tuple[ConstantsStage, Path]:
    t = time.perf_counter()
    const = run_constants(cfg)
    out_dir = Path(out_dir or cfg.data["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rec = {"config": cfg.to_dict(), "config_hash": cfg.hash(), "structure": cfg.structure().describe(),
           "constants": const.to_dict(), "timings": {"constants": time.perf_counter() - t}}
    path = out_dir / "constants.json"
    path.write_text(json.dumps(_jsonable(rec), indent=2, sort_keys=True))
    return const, path


def margins_table(manifest_dir) -> list[dict]:
    """Read back margins.csv as a list of dicts with float values."""
    with open(Path(manifest_dir) / "margins.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("lhs", "rhs", "margin", "tolerance"):
            r[k] = float(r[k])
        r["pass"] = r["pass"] == "true"
    return rows

