"""Batch experiment runner and verification CLI.

Verbs: ``run`` (replications -> traces + aggregated metric CSVs + manifest),
``verify`` (re-derives every applicable property/bound check and prints one
verdict per line), ``oracle`` (dump equilibria / optimum / smoothness for
each epoch's stage game), ``schema`` (config key reference).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import __version__, dynamics, metrics
from .configio import SCHEMA_TEXT, ExperimentSpec, Variant, load_config
from .env import ConfigError, Environment
from .game import GameConfig, GameTrace, run_game, write_trace, read_trace
from .oracle import SmallGame, find_pure_nash, smoothness_constants, social_optimum, stage_games

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3


def default_out_root() -> Path:
    return Path(os.environ.get("FOGBANDIT_OUT", "fogbandit-out"))


# ---------------------------------------------------------------------------
# replication fan-out
# ---------------------------------------------------------------------------


def _run_one(args: tuple) -> dict:
    """Worker: one replication -> per-run metric arrays (small, picklable)."""
    config_dict, run_id, want_pota, want_regret = args
    config = GameConfig.from_dict(config_dict)
    trace = run_game(config, run_id)
    out: dict = {"run_id": run_id}
    out["cost"] = metrics.social_cost_series(trace)[1:]
    if want_pota:
        games = stage_games(config, run_id)
        out["pota"] = metrics.pota_series(trace, games)[1:]
    if want_regret:
        out["regret"] = np.stack(
            [metrics.regret_series(trace, n).normalized[1:] for n in range(config.num_agents)]
        )
    return out


def run_batch(
    config: GameConfig,
    run_ids,
    workers: int = 1,
    want_pota: bool = False,
    want_regret: bool = False,
) -> list[dict]:
    """Run replications (in parallel when workers > 1), ordered by run id."""
    args = [(config.to_dict(), r, want_pota, want_regret) for r in run_ids]
    if workers > 1 and len(args) > 1:
        with Pool(processes=workers) as pool:
            results = pool.map(_run_one, args, chunksize=1)
    else:
        results = [_run_one(a) for a in args]
    return sorted(results, key=lambda d: d["run_id"])


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_series_csv(path: Path, rows: np.ndarray) -> None:
    """rows: [T] x series stack -> round,mean,std,ci_lo,ci_hi."""
    mean = rows.mean(axis=0)
    std = rows.std(axis=0, ddof=1) if rows.shape[0] > 1 else np.zeros(rows.shape[1])
    half = 1.96 * std / math.sqrt(rows.shape[0])
    with open(path, "w") as fh:
        fh.write("round,mean,std,ci_lo,ci_hi\n")
        for t in range(rows.shape[1]):
            fh.write(
                f"{t + 1},{_fmt(mean[t])},{_fmt(std[t])},"
                f"{_fmt(mean[t] - half[t])},{_fmt(mean[t] + half[t])}\n"
            )


def run_experiment(spec: ExperimentSpec, out_root: Path | None = None, workers: int | None = None) -> int:
    """Run all replications of all variants; write traces, CSVs, manifest."""
    out_root = out_root or default_out_root()
    workers = workers or spec.workers
    out_dir = out_root / spec.name
    out_dir.mkdir(parents=True, exist_ok=True)
    want_pota = "pota" in spec.metrics
    want_regret = "regret" in spec.metrics

    manifest: dict = {
        "experiment": spec.name,
        "artifact_version": __version__,
        "run_ids": list(spec.run_ids),
        "trace_policy": spec.trace_policy,
        "metrics": list(spec.metrics),
        "variants": {},
        "files": [],
    }
    summary: dict = {}
    for variant in spec.variants:
        config = spec.game_for(variant)
        vdir = out_dir / variant.name
        vdir.mkdir(parents=True, exist_ok=True)
        results = run_batch(config, spec.run_ids, workers, want_pota, want_regret)

        if spec.trace_policy != "none":
            keep = spec.run_ids if spec.trace_policy == "all" else spec.run_ids[:1]
            tdir = vdir / "traces"
            tdir.mkdir(exist_ok=True)
            for rid in keep:
                trace = run_game(config, rid)
                tpath = tdir / f"run_{rid:04d}.trace"
                write_trace(trace, tpath)
                manifest["files"].append(str(tpath.relative_to(out_dir)))

        cost = np.stack([r["cost"] for r in results])
        _write_series_csv(vdir / "cost.csv", cost)
        manifest["files"].append(f"{variant.name}/cost.csv")
        var_summary = {
            "final_cost_mean": float(cost[:, -1].mean()),
            "final_cost_std": float(cost[:, -1].std(ddof=1)) if cost.shape[0] > 1 else 0.0,
        }
        if want_pota:
            pota = np.stack([r["pota"] for r in results])
            _write_series_csv(vdir / "pota.csv", pota)
            manifest["files"].append(f"{variant.name}/pota.csv")
            var_summary["final_pota_mean"] = float(np.nanmean(pota[:, -1]))
            var_summary["final_pota_std"] = (
                float(np.nanstd(pota[:, -1], ddof=1)) if pota.shape[0] > 1 else 0.0
            )
        if want_regret:
            regret = np.stack([r["regret"] for r in results])  # [R, N, T]
            for n in range(config.num_agents):
                _write_series_csv(vdir / f"regret_agent{n}.csv", regret[:, n, :])
                manifest["files"].append(f"{variant.name}/regret_agent{n}.csv")
            var_summary["final_regret_mean"] = [
                float(regret[:, n, -1].mean()) for n in range(config.num_agents)
            ]
        manifest["variants"][variant.name] = {"config_sha256": config.digest()}
        summary[variant.name] = var_summary

    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    manifest["files"].append("summary.json")
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {out_dir} ({len(manifest['files'])} files)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


class _Verdicts:
    def __init__(self):
        self.failed = False

    def emit(self, status: str, name: str, detail: str) -> None:
        if status == "FAIL":
            self.failed = True
        print(f"{status:5s} {name}: {detail}")


def _sigma_band(values: np.ndarray) -> float:
    if values.shape[0] < 2:
        return 0.0
    return 3.0 * values.std(axis=0, ddof=1).max() / math.sqrt(values.shape[0])


def verify(spec: ExperimentSpec, out_root: Path | None = None, workers: int | None = None) -> int:
    """Re-derive every applicable check against the stored experiment."""
    out_root = out_root or default_out_root()
    out_dir = out_root / spec.name
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        print(f"missing outputs: {manifest_path} not found (run the experiment first)")
        return EXIT_RUNTIME
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    v = _Verdicts()
    workers = workers or spec.workers

    # stored trace files parse and replay byte-identically
    ok = True
    for rel in manifest["files"]:
        if not rel.endswith(".trace"):
            continue
        path = out_dir / rel
        try:
            stored = read_trace(path)
        except Exception as exc:
            v.emit("FAIL", "trace-integrity", f"{path}: {exc}")
            ok = False
            continue
        fresh = run_game(stored.config, stored.run_id)
        buf_path = path.with_suffix(".replay")
        write_trace(fresh, buf_path)
        same = buf_path.read_bytes() == path.read_bytes()
        buf_path.unlink()
        if not same:
            v.emit("FAIL", "determinism", f"replay of {path} differs from stored bytes")
            ok = False
    if ok:
        v.emit("PASS", "determinism", "stored traces replay byte-identically")

    variant = spec.variants[0]
    config = spec.game_for(variant)
    sample = list(spec.run_ids[: min(len(spec.run_ids), 25)])
    traces = [run_game(config, rid) for rid in sample]
    try:
        games = stage_games(config, sample[0])
    except ValueError as exc:
        games = None
        v.emit("SKIP", "stage-games", f"not enumerable: {exc}")

    if games:
        # replicator integration reaches a rest point with equal support costs
        field = dynamics.MeanCostField(games[-1][1])
        prof, converged = dynamics.integrate_to_rest(
            dynamics.MixedProfile.uniform(games[-1][1]), field,
            [1.0] * config.num_agents, tol=1e-5,
        )
        if converged:
            costs = field.expected_costs(prof)
            gap = max(
                float((c[p > 0.1].max() - c[p > 0.1].min())) if (p > 0.1).sum() else 0.0
                for p, c in zip(prof.vectors, costs)
            )
            v.emit("PASS", "replicator-rest", f"converged; support cost spread {gap:.2e}")
        else:
            v.emit("NOTE", "replicator-rest", "no rest point within step budget (legal)")

        report = dynamics.check_contraction(games[-1][1], zeta_max=2.0)
        if report.condition_holds and report.empirical_factor >= 1.0:
            v.emit("FAIL", "contraction", f"factor {report.empirical_factor:.3f} >= 1")
        else:
            v.emit(
                "PASS",
                "contraction",
                f"analytic {report.analytic_bound:.3f} (holds={report.condition_holds}), "
                f"empirical {report.empirical_factor:.3f}",
            )

        if spec.xi_window:
            try:
                certified = 0
                worst = -math.inf
                for tr in traces:
                    cert = metrics.xi_certificate(tr, spec.xi_window, games[-1][1])
                    certified += cert.certified
                    worst = max(worst, cert.max_gap - cert.xi_bound)
            except ValueError as exc:
                v.emit("SKIP", "xi-equilibrium", str(exc))
            else:
                if certified == len(traces):
                    v.emit("PASS", "xi-equilibrium", f"certified on {certified}/{len(traces)} seeds")
                else:
                    v.emit(
                        "NOTE", "xi-equilibrium",
                        f"not certified on {len(traces) - certified}/{len(traces)} seeds "
                        f"(worst excess {worst:.3g})",
                    )

        dom, gap = metrics.strict_gap(config, 0)
        if dom < 0:
            v.emit("SKIP", "convergence-rate", "no strict-gap dominant arm in config")
        elif config.learners[0].feedback != "full":
            v.emit(
                "SKIP", "convergence-rate",
                "bound presumes per-round score gaps >= the cost gap, which only "
                "full feedback guarantees; IX estimates void it beyond early rounds",
            )
        else:
            arms = games[0][1].candidate_sets[0]
            pos = arms.index(dom)
            probs = np.stack([dynamics.discrete_probability_path(t)[1:, 0, pos] for t in traces])
            rep = metrics.convergence_rate_check(traces[0], 0)
            band = _sigma_band(probs)
            bad = int((probs.mean(axis=0) < rep.bounds - band - 1e-12).sum())
            if bad:
                v.emit("FAIL", "convergence-rate", f"{bad} rounds below the bound (3-sigma)")
            else:
                v.emit("PASS", "convergence-rate", "seed-mean prob >= bound at every round")

        violations = 0
        vacuous = 0
        for tr in traces:
            for check in metrics.pota_bound_check(tr, games):
                if check.vacuous:
                    vacuous += 1
                elif not check.holds:
                    violations += 1
        if violations:
            v.emit("FAIL", "pota-bound", f"{violations} per-epoch violations across seeds")
        elif vacuous:
            v.emit("NOTE", "pota-bound", f"holds where feasible; {vacuous} vacuous epochs")
        else:
            v.emit("PASS", "pota-bound", f"holds on every epoch of {len(traces)} seeds")

        if len(config.candidates.epochs) == 1 and games:
            dev = dynamics.tracking_error(traces[0], dynamics.MeanCostField(games[0][1]))
            v.emit("NOTE", "ode-tracking", f"sup deviation {float(np.nanmax(dev)):.3f} (reported, no bound)")

    schedules = [(lp.schedule_a, len(config.candidates.epochs[0][1][n]))
                 for n, lp in enumerate(config.learners)]
    # divergence needs room beyond short experiment horizons
    act_h = min(max(config.horizon, 100_000), 1_000_000)
    rep = metrics.async_condition_check(schedules, act_h)
    if rep.all_hold():
        v.emit("PASS", "async-rates", f"rate conditions hold to horizon {act_h}")
    else:
        v.emit("FAIL", "async-rates", "a partial-sum condition failed")

    return EXIT_VERIFY if v.failed else EXIT_OK


def oracle_dump(spec: ExperimentSpec, out_root: Path | None = None) -> int:
    """Print and persist NE / optimum / smoothness for each epoch's game."""
    config = spec.game_for(spec.variants[0])
    games = stage_games(config, spec.run_ids[0])
    payload = []
    for (lo, hi), game in games:
        nes = find_pure_nash(game)
        opt, c_star = social_optimum(game)
        smooth = smoothness_constants(game)
        entry = {
            "segment": [lo, hi],
            "pure_nash": [list(j) for j in nes],
            "optimum": list(opt),
            "optimum_cost": c_star,
            "smoothness": {
                "feasible": smooth.feasible,
                "lambda": smooth.lam,
                "mu": smooth.mu,
                "rho": smooth.rho,
            },
        }
        payload.append(entry)
        poa = max((game.social_cost(j) / c_star for j in nes), default=float("nan"))
        print(
            f"[{lo},{hi}] NE={len(nes)} C*={c_star:.6g} PoA(worst NE)={poa:.4g} "
            f"rho={smooth.rho:.4g} (lambda={smooth.lam:.3g}, mu={smooth.mu:.3g})"
        )
    out_root = out_root or default_out_root()
    out_dir = out_root / spec.name
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "oracle.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def bundled_config(name: str) -> Path:
    return Path(__file__).parent / "configs" / f"{name}.yaml"


def _resolve_config(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    bundled = bundled_config(arg)
    if bundled.exists():
        return bundled
    raise ConfigError(f"config {arg!r} not found (no file, no bundled config)")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fogbandit",
        description="Decentralized task-offloading game simulator and verifier",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for verb in ("run", "verify", "oracle"):
        sp = sub.add_parser(verb)
        sp.add_argument("config", help="config file path or bundled config name")
        sp.add_argument("--seeds", type=int, default=None, help="override replication count")
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--out", type=Path, default=None, help="output root directory")
        sp.add_argument("--strict", action="store_true", help="reject unknown config keys")
    sub.add_parser("schema")
    args = parser.parse_args(argv)

    if args.command == "schema":
        print(SCHEMA_TEXT)
        return EXIT_OK

    try:
        spec = load_config(_resolve_config(args.config), strict=args.strict)
        if args.seeds is not None:
            spec = dataclasses.replace(spec, run_ids=tuple(range(args.seeds)))
            spec.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            return run_experiment(spec, args.out, args.workers)
        if args.command == "verify":
            return verify(spec, args.out, args.workers)
        return oracle_dump(spec, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures carry context from below
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
