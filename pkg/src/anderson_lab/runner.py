"""Run orchestration: trials -> ``trials.jsonl``, reducers -> ``summary.json``,
plot data -> ``*.csv``, bookkeeping -> ``manifest.json``."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from functools import partial
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, jsonio
from .config import ExperimentConfig
from .ensemble import binomial_estimate, iter_trials, monotone_within_intervals
from .errors import AndersonLabError
from .experiments import (
    CountTrialSpec,
    LevelTrialSpec,
    RepulsionTrialSpec,
    ThinTrialSpec,
    _check_ensemble,
    ambient_side,
    count_trial,
    level_trial,
    repulsion_trial,
    spacing_statistics,
    summarize_counts,
    summarize_repulsion,
    summarize_thin,
    thin_trial,
)
from .lattice import BoxSpec, PotentialSpec, assemble_hamiltonian, make_block, sample_potential
from .regularity import MsaTrialSpec, check_regular, energy_grid, msa_trial, summarize_msa
from .spectral import eigendecompose

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
TRIALS = "trials.jsonl"
SUMMARY = "summary.json"


# experiments whose output is a frequency; these refuse tiny ensembles unless forced
STATISTICAL = ("wegner", "minami", "regularity", "msa", "thin", "repulsion")


def centered_block(d: int, L: int) -> BoxSpec:
    """Box of exactly L sites per axis whose middle site is the origin (even L: lower middle)."""
    return make_block(d, -((L - 1) // 2), L)


def free_spectrum(d: int, L: int) -> np.ndarray:
    one = 2.0 * np.cos(np.arange(1, L + 1) * np.pi / (L + 1))
    total = np.zeros(1)
    for _ in range(d):
        total = (total[:, None] + one[None, :]).ravel()
    return np.sort(total)


# -- per-trial functions that only exist at the runner level ---------------


@dataclass(frozen=True)
class SpectrumTrialSpec:
    spec: PotentialSpec
    box: BoxSpec


def spectrum_trial(params: SpectrumTrialSpec, trial: int, seed: int) -> dict:
    v = sample_potential(params.spec, seed, params.box)
    sd = eigendecompose(assemble_hamiltonian(params.box, v, params.spec.coupling))
    out = {
        "n_eigenvalues": sd.size,
        "max_residual": sd.max_residual(),
        "gram_deviation": sd.gram_deviation(),
        "spectral_radius": sd.spectral_radius,
        "min_gap": sd.min_gap,
    }
    if params.spec.coupling == 0.0:
        ref = free_spectrum(params.box.dimension, params.box.side)
        out["analytic_deviation"] = float(np.max(np.abs(sd.eigenvalues - ref)))
    return out


@dataclass(frozen=True)
class RegularityTrialSpec:
    spec: PotentialSpec
    box: BoxSpec
    energy: float
    gammas: tuple[float, ...]
    tau: float


def regularity_trial(params: RegularityTrialSpec, trial: int, seed: int) -> dict:
    v = sample_potential(params.spec, seed, params.box)
    H = assemble_hamiltonian(params.box, v, params.spec.coupling)
    verdicts = [check_regular(H, params.energy, g, tau=params.tau) for g in params.gammas]
    # dense-inverse cross-check of the factorised boundary values
    A = H.toarray() - params.energy * np.eye(H.size)
    w = np.linalg.eigvalsh(H.toarray())
    hit = np.min(np.abs(w - params.energy)) <= params.tau * max(1.0, np.max(np.abs(w)))
    if hit:
        dense = [False] * len(params.gammas)
    else:
        G = np.linalg.inv(A)
        m = float(np.max(np.abs(G[params.box.center_index, params.box.boundary_index])))
        dense = [m <= math.exp(-g * params.box.side / 2.0) for g in params.gammas]
    return {
        "max_boundary": verdicts[0].max_boundary,
        "spectrum_hit": verdicts[0].reason == "spectrum-hit",
        "regular": [vd.regular for vd in verdicts],
        "dense_regular": [bool(x) for x in dense],
    }


def _msa_all_scales(params: tuple[tuple[int, MsaTrialSpec], ...], trial: int, seed: int) -> dict:
    return {str(k): msa_trial(p_, trial, seed) for k, p_ in params}


# -- experiment table -------------------------------------------------------


@dataclass
class Plan:
    trial_fn: Callable[[int, int], dict]
    summarize: Callable[[list[dict]], dict]
    plots: Callable[[list[dict], dict], dict[str, tuple[list[str], list[list]]]] = field(
        default=lambda payloads, summary: {}
    )


def _window_plot(summary: dict):
    rows = [[r["params"]["J"][0], r["params"]["J"][1], r["p_hat"], r["wilson_95"][0], r["wilson_95"][1], r["bound"]]
            for r in summary["results"]["windows"]]
    return {"windows.csv": (["J_low", "J_high", "p_hat", "wilson_low", "wilson_high", "bound"], rows)}


def _scale_plot(summary: dict):
    rows = [
        [r["params"]["k"], r["params"]["L_k"], r["p_hat"], r["wilson_95"][0], r["wilson_95"][1], r["bound"]]
        for r in summary["results"]["scales"]
    ]
    return {"scales.csv": (["k", "L_k", "p_hat", "wilson_low", "wilson_high", "bound"], rows)}


def _violations(rows: list[dict]) -> bool:
    return any(r["bound"] <= 1.0 and not r["bound_satisfied"] for r in rows)


def plan_for(cfg: ExperimentConfig) -> Plan:
    spec = cfg.potential
    kind = cfg.experiment

    if kind == "spectrum":
        box = centered_block(cfg.d, cfg.L)
        params = SpectrumTrialSpec(spec, box)

        def summarize(pl):
            res = {
                "n_eigenvalues": box.size,
                "max_residual": max(p["max_residual"] for p in pl),
                "max_gram_deviation": max(p["gram_deviation"] for p in pl),
                "max_spectral_radius": max(p["spectral_radius"] for p in pl),
                "min_gap": min(p["min_gap"] for p in pl),
            }
            res["certificates_ok"] = all(
                p["max_residual"] < 1e-10 * max(1.0, p["spectral_radius"]) and p["gram_deviation"] < 1e-10
                for p in pl
            )
            if "analytic_deviation" in pl[0]:
                res["max_analytic_deviation"] = max(p["analytic_deviation"] for p in pl)
            return {"results": res, "bound_violation": False}

        return Plan(partial(spectrum_trial, params), summarize)

    if kind in ("wegner", "minami"):
        box = centered_block(cfg.d, cfg.L)
        windows = cfg.windows()
        params = CountTrialSpec(spec, box, tuple(windows))

        def summarize(pl):
            rows = [s.as_dict() for s in summarize_counts(kind, pl, box, spec, windows, cfg.se_slack)]
            res = {"windows": rows, "volume": box.size, "rho_sup": spec.density_sup,
                   "rho_sup_scaled": spec.effective_density_sup}
            if kind == "minami":
                res["dyadic_ratios"] = _dyadic_ratios(rows)
            return {"results": res, "bound_violation": _violations(rows)}

        return Plan(partial(count_trial, params), summarize, lambda pl, s: _window_plot(s))

    if kind == "regularity":
        box = centered_block(cfg.d, cfg.L)
        params = RegularityTrialSpec(spec, box, cfg.target_energy(), tuple(cfg.gammas), cfg.tau_spec)

        def summarize(pl):
            per = []
            for i, g in enumerate(cfg.gammas):
                est = binomial_estimate(sum(p["regular"][i] for p in pl), len(pl))
                per.append(
                    {
                        "gamma": g,
                        "threshold": math.exp(-g * box.side / 2.0),
                        "hits": est.hits,
                        "frequency": est.probability,
                        "wilson_95": [est.wilson_low, est.wilson_high],
                        "dense_agreement": sum(p["regular"][i] == p["dense_regular"][i] for p in pl),
                    }
                )
            order = sorted(per, key=lambda r: r["gamma"])
            res = {
                "energy": cfg.target_energy(),
                "L": box.side,
                "rates": per,
                "spectrum_hits": sum(p["spectrum_hit"] for p in pl),
                "monotone_in_gamma": all(a["frequency"] >= b["frequency"] for a, b in zip(order, order[1:])),
                "oracle_agrees_every_trial": all(r["dense_agreement"] == len(pl) for r in per),
            }
            return {"results": res, "bound_violation": False}

        return Plan(partial(regularity_trial, params), summarize)

    if kind == "msa":
        sched = cfg.schedule
        grid = [cfg.energy] if cfg.energy is not None else list(energy_grid(cfg.host_interval(), cfg.energy_grid))
        plist = []
        for k in cfg.ks:
            L = sched.lengths[k]
            x = (0,) * cfg.d
            y = (L + 1,) + (0,) * (cfg.d - 1)
            plist.append((k, MsaTrialSpec(spec, cfg.d, L, x, y, tuple(float(e) for e in grid), cfg.gamma, cfg.tau_spec)))

        def summarize(pl):
            ests = []
            rows = []
            for k, ps in plist:
                m = summarize_msa(ps, k, [p[str(k)] for p in pl], sched.p)
                ests.append(m.estimate)
                e = m.estimate
                rows.append(
                    {
                        "params": {"k": k, "L_k": m.L},
                        "hits": e.hits,
                        "trials": e.trials,
                        "p_hat": e.probability,
                        "wilson_95": [e.wilson_low, e.wilson_high],
                        "bound": m.target,
                        "target_formula": "1 - L_k^(-2p)",
                    }
                )
            res = {
                "scales": rows,
                "energies": len(grid),
                "gamma": cfg.gamma,
                "p": sched.p,
                "non_decreasing_in_k": monotone_within_intervals(ests, "non-decreasing"),
            }
            return {"results": res, "bound_violation": False}

        return Plan(partial(_msa_all_scales, tuple(plist)), summarize, lambda pl, s: _scale_plot(s))

    if kind == "thin":
        sched = cfg.schedule
        side = cfg.ambient or ambient_side(sched, cfg.ks)
        params = ThinTrialSpec(spec, cfg.d, side, sched.lengths, tuple(cfg.ks), cfg.target_energy(), cfg.tau_center)

        def summarize(pl):
            r = summarize_thin(params, pl, sched, gamma_prime=cfg.gamma_prime, C1=cfg.C1, C2=cfg.C2,
                               se_slack=cfg.se_slack)
            rows = [s.as_dict() for s in r.summaries]
            res = {
                "scales": rows,
                "ambient": side,
                "non_increasing_in_k": monotone_within_intervals([s.estimate for s in r.summaries], "non-increasing"),
                "tail_checks": [dict(asdict(t), fraction=t.fraction) for t in r.tails],
            }
            return {"results": res, "bound_violation": _violations(rows)}

        return Plan(partial(thin_trial, params), summarize, lambda pl, s: _scale_plot(s))

    if kind == "repulsion":
        sched = cfg.schedule
        side = cfg.ambient or ambient_side(sched, cfg.ks)
        params = RepulsionTrialSpec(spec, cfg.d, side, sched.lengths, tuple(cfg.ks), cfg.host_interval(),
                                    cfg.tau_center)

        def summarize(pl):
            r = summarize_repulsion(params, pl, cfg.se_slack)
            rows = [s.as_dict() for s in r.summaries]
            res = {
                "scales": rows,
                "ambient": side,
                "I": list(params.host),
                "non_increasing_in_k": monotone_within_intervals([s.estimate for s in r.summaries], "non-increasing"),
                "pairs": int(r.gaps.size),
            }
            if r.gaps.size:
                res["median_center_distance"] = r.median_distance
                res["small_gap_median_center_distance"] = r.small_gap_median_distance(0.1)
                res["small_gap_pairs_not_closer"] = res["small_gap_median_center_distance"] >= r.median_distance
                # pairs closer than |Lambda_ambient|^-2 in energy
                tiny = r.gaps < float(side) ** (-2 * cfg.d)
                res["tiny_gap_pairs"] = int(tiny.sum())
                res["tiny_gap_min_center_distance"] = int(r.distances[tiny].min()) if tiny.any() else None
            return {"results": res, "bound_violation": _violations(rows)}

        def plots(pl, summary):
            out = _scale_plot(summary)
            rows = [[g, dist] for p in pl for g, dist in zip(p["gaps"], p["distances"])]
            out["scatter.csv"] = (["gap", "center_distance"], rows)
            return out

        return Plan(partial(repulsion_trial, params), summarize, plots)

    if kind == "spacing":
        box = centered_block(cfg.d, cfg.L)
        host = cfg.host_interval()
        params = LevelTrialSpec(spec, box, host, cfg.gap_threshold)

        def _stats(pl):
            return spacing_statistics([np.asarray(p["levels"]) for p in pl], host, window=cfg.spacing_window,
                                      bins=cfg.spacing_bins, min_spacings=cfg.min_spacings)

        def summarize(pl):
            st = _stats(pl)
            res = {
                "I": list(host),
                "spacings": st.n,
                "ml_rate": st.rate,
                "ks_distance_exp1": st.ks_distance,
                "histogram": {"edges": st.bin_edges.tolist(), "counts": st.counts.tolist()},
            }
            return {"results": res, "bound_violation": False}

        def plots(pl, summary):
            h = summary["results"]["histogram"]
            e = h["edges"]
            rows = [[e[i], e[i + 1], c] for i, c in enumerate(h["counts"])]
            return {"histogram.csv": (["bin_left", "bin_right", "count"], rows)}

        return Plan(partial(level_trial, params), summarize, plots)

    if kind == "simplicity":
        box = centered_block(cfg.d, cfg.L)
        params = LevelTrialSpec(spec, box, None, cfg.gap_threshold)

        def summarize(pl):
            res = {
                "min_gap": min(p["min_gap"] for p in pl),
                "gaps_below_threshold": sum(p["n_below"] for p in pl),
                "gaps_total": len(pl) * max(box.size - 1, 0),
                "threshold": cfg.gap_threshold,
                "trials_with_degeneracy": sum(1 for p in pl if p["n_below"] > 0),
            }
            return {"results": res, "bound_violation": False}

        return Plan(partial(level_trial, params), summarize)

    raise ValueError(f"unknown experiment {kind!r}")


def _dyadic_ratios(rows: list[dict], min_hits: int = 100) -> list[dict]:
    by_width = {round(r["params"]["width"], 15): r for r in rows}
    out = []
    for w, r in sorted(by_width.items(), reverse=True):
        half = by_width.get(round(w / 2, 15))
        if half is None:
            continue
        ok = r["hits"] >= min_hits and half["hits"] >= min_hits
        out.append(
            {
                "width": w,
                "half_width": w / 2,
                "hits": [r["hits"], half["hits"]],
                "ratio": half["p_hat"] / r["p_hat"] if r["p_hat"] > 0 else None,
                "applicable": ok,
            }
        )
    return out


# -- run ------------------------------------------------------------------


@dataclass
class RunManifest:
    config_hash: str
    artifact_version: str
    experiment: str
    started: str
    finished: str | None = None
    trials_planned: int = 0
    trials_completed: int = 0
    complete: bool = False
    incomplete: bool = True
    summaries: list[str] = field(default_factory=list)
    files: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    error: str | None = None
    bound_violation: bool = False
    exit_code: int = 0


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def build_summary(cfg: ExperimentConfig, payloads: list[dict]) -> dict:
    if not payloads:
        raise AndersonLabError("no trials")
    body = plan_for(cfg).summarize(payloads)
    return {
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash(),
        "config": cfg.result_dict(),
        "trials": len(payloads),
        "artifact_version": __version__,
        **body,
    }


def output_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out or f"runs/{cfg.experiment}")


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Execute every trial, then write summary, plot data and the manifest.

    The manifest is written once, in the ``finally`` block, so an aborted run
    still leaves a parseable manifest flagged ``incomplete``.
    """
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    manifest = RunManifest(
        config_hash=h,
        artifact_version=__version__,
        experiment=cfg.experiment,
        started=_now(),
        trials_planned=cfg.trials,
        config=cfg.model_dump(mode="json"),
    )
    if cfg.experiment in STATISTICAL:
        _check_ensemble(cfg.trials, cfg.force)
    plan = plan_for(cfg)
    payloads: list[dict] = []
    try:
        with open(out / TRIALS, "w", encoding="utf-8") as fh:
            for i, seed, payload in iter_trials(plan.trial_fn, cfg.trials, cfg.seed, workers=cfg.workers):
                fh.write(jsonio.dumps({"config_hash": h, "trial": i, "seed": seed, "payload": payload}) + "\n")
                fh.flush()
                payloads.append(payload)
                manifest.trials_completed = i + 1
        manifest.files.append(TRIALS)
        summary = build_summary(cfg, payloads)
        jsonio.write_json(out / SUMMARY, summary)
        manifest.summaries.append(SUMMARY)
        manifest.files.append(SUMMARY)
        manifest.files.extend(_write_plots(out, plan.plots(payloads, summary)))
        manifest.bound_violation = bool(summary.get("bound_violation"))
        if manifest.bound_violation:
            log.warning("empirical frequency exceeds an informative bound")
            if cfg.bound_violation == "fail":
                manifest.exit_code = 4
        manifest.complete = True
        manifest.incomplete = False
    except BaseException as exc:
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.exit_code = 3
        raise
    finally:
        manifest.finished = _now()
        jsonio.write_json(out / MANIFEST, asdict(manifest))
    return manifest


def _write_plots(out: Path, plots: dict) -> list[str]:
    names = []
    for name, (header, rows) in plots.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([jsonio.dumps(x) if isinstance(x, float) else x for x in row])
        (out / name).write_text(buf.getvalue(), encoding="utf-8")
        names.append(name)
    return names


def load_run(out: str | Path) -> tuple[dict, ExperimentConfig, list[dict]]:
    from .config import parse_config

    out = Path(out)
    manifest = jsonio.read_json(out / MANIFEST)
    cfg = parse_config(manifest["config"])
    payloads = []
    path = out / TRIALS
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = jsonio.loads(line)
                if rec["config_hash"] != manifest["config_hash"]:
                    raise AndersonLabError(f"trial {rec['trial']} belongs to another config")
                payloads.append(rec["payload"])
    return manifest, cfg, payloads


def verify_run(out: str | Path) -> dict:
    """Re-aggregate ``trials.jsonl`` and compare with ``summary.json``."""
    out = Path(out)
    manifest, cfg, payloads = load_run(out)
    recomputed = build_summary(cfg, payloads)
    stored = jsonio.read_json(out / SUMMARY) if (out / SUMMARY).exists() else None
    same = stored is not None and jsonio.dumps(stored) == jsonio.dumps(jsonio.loads(jsonio.dumps(recomputed)))
    return {
        "trials_on_disk": len(payloads),
        "trials_in_manifest": manifest["trials_completed"],
        "summary_matches": same,
        "ok": same and len(payloads) == manifest["trials_completed"],
    }


def emit_report(out: str | Path, fmt: str = "markdown") -> list[Path]:
    """Summary table plus plot-ready CSV files rebuilt from persisted trials."""
    out = Path(out)
    manifest, cfg, payloads = load_run(out)
    if manifest.get("trials_completed", 0) == 0 or not payloads:
        raise AndersonLabError("no trials")
    missing = [f for f in manifest.get("files", []) if not (out / f).exists()]
    if not (out / TRIALS).exists():
        missing.append(TRIALS)
    partial_run = bool(missing) or not manifest.get("complete", False)
    summary = build_summary(cfg, payloads)
    written = [out / n for n in _write_plots(out, plan_for(cfg).plots(payloads, summary))]
    text = _render(manifest, summary, missing, partial_run, fmt)
    name = "report.md" if fmt == "markdown" else "report.txt"
    (out / name).write_text(text, encoding="utf-8")
    return [out / name, *written]


def _render(manifest: dict, summary: dict, missing: list[str], partial_run: bool, fmt: str) -> str:
    lines = []
    title = f"{summary['experiment']} run {summary['config_hash'][:12]}"
    lines.append(f"# {title}" if fmt == "markdown" else title)
    lines.append("")
    if partial_run:
        lines.append("PARTIAL REPORT" + (f": missing {', '.join(missing)}" if missing else ": run incomplete"))
        lines.append("")
    lines.append(f"trials: {summary['trials']}  seed: {summary['config']['seed']}")
    lines.append("")
    res = summary["results"]
    table = res.get("windows") or res.get("scales")
    if table:
        head = ["row", "hits", "p_hat", "wilson_low", "wilson_high", "bound", "ok"]
        body = []
        for i, r in enumerate(table):
            label = r["params"].get("k", r["params"].get("J", i))
            ok = r.get("bound_satisfied", "")
            body.append([str(label), str(r["hits"]), f"{r['p_hat']:.6g}", f"{r['wilson_95'][0]:.6g}",
                         f"{r['wilson_95'][1]:.6g}", f"{r['bound']:.6g}", str(ok)])
        lines.extend(_table(head, body, fmt))
        lines.append("")
    for key, val in res.items():
        if key in ("windows", "scales", "histogram"):
            continue
        lines.append(f"- {key}: {val}")
    return "\n".join(lines) + "\n"


def _table(head: list[str], body: list[list[str]], fmt: str) -> list[str]:
    if fmt == "markdown":
        rows = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        rows += ["| " + " | ".join(r) + " |" for r in body]
        return rows
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    return ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in [head, *body]]
