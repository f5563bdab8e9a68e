"""Command-line interface: simulate, fit, predict, diagnose, segment, summarize.

Configuration comes from an optional JSON file; command-line flags
override config keys. Every run writes a metadata file with the package
version, seed, a hash of the merged effective config, and timings, so
identical (config, seed) pairs are auditable. CSV outputs are
byte-reproducible for identical config hash + seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np
import pandas as pd

from . import __version__
from .data import load_dataset, ols_fit, save_dataset, standardize_covariates
from .diagnostics import compute_dic, compute_waic, effective_sample_size, mcse
from .errors import HiercarError, InputError, RankDeficientError
from .gibbs import McmcSettings, run_chain
from .graph import load_adjacency
from .model import Hyperparameters, log_likelihood
from .predict import posterior_predictive_draws, summarize_predictive
from .rng import SeededRng
from .segment import (
    LEVELS,
    accumulate_coclustering,
    extract_partition,
    per_draw_partitions,
    unit_mean_draws,
)
from .simulate import builtin_scenario, generate, synthetic_skeleton
from .store import load_run, save_run
from .summary import coefficient_table, spatial_effect_summary, unit_ranking

SCALAR_BLOCKS = (
    "beta0",
    "alpha_kappa",
    "beta_kappa",
    "sigma2_beta0",
    "tau2_phi",
    "sigma2_E",
    "sigma2_M",
    "sigma2_D",
    "lambda2_E",
    "lambda2_M",
    "lambda2_D",
)


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError("config file not found", path=path) from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config parse failure: {exc}", path=path) from None


def _merge_config(config: dict, overrides: dict) -> dict:
    merged = dict(config)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _write_command_meta(out_dir, command: str, payload: dict):
    """Write run_meta.json; never clobber another command's metadata."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "run_meta.json")
    if os.path.exists(path):
        try:
            with open(path, encoding="utf-8") as fh:
                existing = json.load(fh)
        except (OSError, json.JSONDecodeError):
            existing = None
        if existing and existing.get("command") not in (None, command):
            path = os.path.join(out_dir, f"run_meta_{command}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _base_meta(command: str, config: dict, seed, started: float) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "config_hash": _config_hash(config),
        "elapsed_seconds": time.perf_counter() - started,
    }


# -- simulate ------------------------------------------------------------------


def _parse_skeleton(spec: str):
    if spec.startswith("synthetic:"):
        parts = spec[len("synthetic:") :].split(",")
        if len(parts) != 3:
            raise InputError("synthetic skeleton needs m,d,students-per-municipality")
        m, d, npm = (int(p) for p in parts)
        return synthetic_skeleton(m, d, npm)
    from .simulate import skeleton_from_dataset

    ds = load_dataset(
        os.path.join(spec, "students.csv"),
        os.path.join(spec, "municipalities.csv"),
        os.path.join(spec, "departments.csv"),
    )
    graph = load_adjacency(os.path.join(spec, "adjacency.csv"), ds)
    return skeleton_from_dataset(ds, graph)


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    config = _merge_config(
        _load_config(args.config),
        {
            "scenario": args.scenario,
            "skeleton": args.skeleton,
            "seed": args.seed,
            "kappa2": args.kappa2,
            "tau2_phi": args.tau2_phi,
        },
    )
    config.setdefault("seed", 42)
    scenario = builtin_scenario(int(config["scenario"]))
    if "kappa2" in config and config["kappa2"] is not None:
        scenario.kappa2 = float(config["kappa2"])
    if "tau2_phi" in config and config["tau2_phi"] is not None:
        scenario.tau2_phi = float(config["tau2_phi"])
    skeleton = _parse_skeleton(config["skeleton"])
    rng = SeededRng(int(config["seed"]))
    ds, truth = generate(scenario, skeleton, rng)

    os.makedirs(args.out, exist_ok=True)
    save_dataset(ds, args.out)
    edges = pd.DataFrame(
        {
            "municipality_id_a": [ds.municipality_ids[a] for a, b in skeleton.edges],
            "municipality_id_b": [ds.municipality_ids[b] for a, b in skeleton.edges],
        }
    )
    edges.to_csv(os.path.join(args.out, "adjacency.csv"), index=False)
    with open(os.path.join(args.out, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")

    meta = _base_meta("simulate", config, int(config["seed"]), started)
    meta["n_students"] = ds.n_students
    meta["n_municipalities"] = ds.n_municipalities
    meta["n_departments"] = ds.n_departments
    _write_command_meta(args.out, "simulate", meta)
    print(
        f"simulated scenario {config['scenario']}: n={ds.n_students}, "
        f"m={ds.n_municipalities}, d={ds.n_departments} -> {args.out}"
    )
    return 0


# -- fit -----------------------------------------------------------------------


def cmd_fit(args) -> int:
    started = time.perf_counter()
    config = _merge_config(
        _load_config(args.config),
        {
            "variant": args.variant,
            "iterations": args.iterations,
            "burn_fraction": args.burn_fraction,
            "thin": args.thin,
            "seed": args.seed,
            "threads": args.threads,
        },
    )
    config.setdefault("variant", "baseline")
    config.setdefault("standardize", True)
    config.setdefault("ols_centering", True)
    variant = config["variant"]

    ds = load_dataset(args.students, args.municipalities, args.departments)
    graph = load_adjacency(args.adjacency, ds)

    record = None
    if config["standardize"]:
        ds, record = standardize_covariates(ds)

    hyper_payload = dict(config.get("hyperparameters", {}))
    ols_centered = False
    if variant == "baseline" and config["ols_centering"] and "mu_E" not in hyper_payload:
        from .model import ols_prior_means

        mu_beta0, mu_E, mu_M, mu_D, ols_centered = ols_prior_means(ds)
        hyper_payload.setdefault("mu_beta0", mu_beta0)
        hyper_payload["mu_E"] = mu_E
        hyper_payload["mu_M"] = mu_M
        hyper_payload["mu_D"] = mu_D
    hyper = Hyperparameters.from_dict(hyper_payload)

    settings = McmcSettings(
        iterations=int(config.get("iterations", McmcSettings.iterations)),
        burn_fraction=float(config.get("burn_fraction", McmcSettings.burn_fraction)),
        thin=int(config.get("thin", McmcSettings.thin)),
        seed=int(config.get("seed", McmcSettings.seed)),
        mh_step_size=float(config.get("mh_step_size", McmcSettings.mh_step_size)),
        adapt_window=int(config.get("adapt_window", McmcSettings.adapt_window)),
        debug_residual_check=bool(config.get("debug_residual_check", False)),
    )

    def progress(done, total):
        print(f"  sweep {done}/{total}", file=sys.stderr)

    output = run_chain(
        ds,
        graph,
        variant,
        hyper,
        settings,
        spill_dir=os.path.join(args.out, "draws"),
        progress=progress if args.verbose else None,
    )

    lp = output.mean_post_burnin_loglik
    loglik_at_mean = log_likelihood(output.mean_state(ds), ds)
    lp_, p_dic, dic = compute_dic(lp, loglik_at_mean)
    lppd, p_waic, waic = compute_waic(output.waic_accumulator)

    # effective config (without large arrays) for the audit trail
    echo_config = {k: v for k, v in config.items() if k != "hyperparameters"}
    echo_config["hyperparameters"] = {
        k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in hyper_payload.items()
    }
    meta = _base_meta("fit", echo_config, settings.seed, started)
    meta.update(
        {
            "ols_centering_used": bool(ols_centered),
            "standardization": record.to_dict() if record is not None else None,
            "criteria": {
                "lp": lp_,
                "p_dic": p_dic,
                "dic": dic,
                "lppd": lppd,
                "p_waic": p_waic,
                "waic": waic,
            },
        }
    )
    save_run(args.out, output, ds, meta)
    print(
        f"fit {variant}: {settings.iterations} sweeps, {output.meta['n_stored']} stored draws, "
        f"MH acceptance {output.mh_acceptance_rate:.3f}, DIC {dic:.1f}, WAIC {waic:.1f}"
    )
    return 0


# -- predict --------------------------------------------------------------------


def cmd_predict(args) -> int:
    started = time.perf_counter()
    run = load_run(args.draws)
    frame = pd.read_csv(args.students, dtype=str, keep_default_na=False)
    for col in ("student_id", "municipality_id"):
        if col not in frame.columns:
            raise InputError(f"missing column {col!r}", path=args.students, column=col)

    mun_index = {label: j for j, label in enumerate(run.inputs.municipality_ids)}
    municipality = np.empty(len(frame), dtype=int)
    for pos, label in enumerate(frame["municipality_id"]):
        if label not in mun_index:
            raise InputError(
                f"student references municipality {label!r} unknown to the training run",
                path=args.students,
                row=pos + 2,
            )
        municipality[pos] = mun_index[label]

    names = run.meta["student_covariate_names"]
    x = np.empty((len(frame), len(names)))
    for i, name in enumerate(names):
        if name not in frame.columns:
            raise InputError(f"missing covariate column {name!r}", path=args.students, column=name)
        x[:, i] = pd.to_numeric(frame[name], errors="raise").to_numpy(dtype=float)

    draw_matrix = posterior_predictive_draws(
        run.draws,
        x,
        municipality,
        run.inputs.municipal_covariates,
        run.inputs.departmental_covariates,
        run.inputs.municipality_to_department,
        count=args.count,
        seed=args.seed,
    )
    point, sd = summarize_predictive(draw_matrix)
    out_frame = pd.DataFrame(
        {
            "student_id": frame["student_id"],
            "point_prediction": point,
            "predictive_sd": sd,
        }
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    out_frame.to_csv(args.out, index=False)

    config = {"draws": args.draws, "count": args.count, "seed": args.seed}
    meta = _base_meta("predict", config, args.seed, started)
    meta["n_students"] = int(len(frame))
    _write_command_meta(out_dir, "predict", meta)
    print(f"predicted {len(frame)} students -> {args.out}")
    return 0


# -- diagnose ---------------------------------------------------------------------


def cmd_diagnose(args) -> int:
    started = time.perf_counter()
    run = load_run(args.draws)
    per_block = {}
    for block in SCALAR_BLOCKS:
        if block in run.draws:
            trace = np.asarray(run.draws[block], dtype=float).ravel()
            per_block[block] = {
                "ess": effective_sample_size(trace),
                "mcse": mcse(trace),
                "mean": float(trace.mean()),
            }
    burn_in = int(run.meta.get("burn_in", 0))
    loglik_post = run.loglik_trace[burn_in:]
    report = {
        "variant": run.variant,
        "mh_acceptance_rate": run.meta.get("mh_acceptance_rate"),
        "loglik_ess": effective_sample_size(loglik_post),
        "scalar_blocks": per_block,
    }
    report.update(run.meta.get("criteria", {}))

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    meta = _base_meta("diagnose", {"draws": args.draws}, run.meta.get("seed"), started)
    _write_command_meta(out_dir, "diagnose", meta)
    print(f"diagnostics -> {args.out}")
    return 0


# -- segment ----------------------------------------------------------------------


def cmd_segment(args) -> int:
    started = time.perf_counter()
    run = load_run(args.draws)
    level = {"spatial": "spatial_effect"}.get(args.level, args.level)
    values, labels = unit_mean_draws(run.draws, run.inputs, level)
    partitions, ks, indices = per_draw_partitions(
        values,
        k_max=args.k_max,
        seed=args.seed,
        stride=args.stride,
        threads=args.threads,
    )
    matrix = accumulate_coclustering(partitions, labels)
    point_labels, chosen_k = extract_partition(matrix, k_max=args.k_max, seed=args.seed)

    os.makedirs(args.out, exist_ok=True)
    frame = pd.DataFrame(matrix.matrix, columns=labels)
    frame.insert(0, "unit", labels)
    frame.to_csv(os.path.join(args.out, "cocluster.csv"), index=False)
    pd.DataFrame({"unit": labels, "cluster": point_labels}).to_csv(
        os.path.join(args.out, "partition.csv"), index=False
    )
    k_values, k_counts = np.unique(ks, return_counts=True)
    segment_meta = {
        "level": level,
        "stride": args.stride,
        "draws_used": len(indices),
        "k_distribution": {int(k): int(c) for k, c in zip(k_values, k_counts)},
        "chosen_k": int(chosen_k),
    }
    with open(os.path.join(args.out, "segment_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(segment_meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    config = {
        "draws": args.draws,
        "level": level,
        "stride": args.stride,
        "k_max": args.k_max,
        "seed": args.seed,
    }
    meta = _base_meta("segment", config, args.seed, started)
    _write_command_meta(args.out, "segment", meta)
    print(f"segmented {len(labels)} units at level {level}: chose k={chosen_k} -> {args.out}")
    return 0


# -- summarize ---------------------------------------------------------------------


def cmd_summarize(args) -> int:
    started = time.perf_counter()
    run = load_run(args.draws)
    os.makedirs(args.out, exist_ok=True)

    tables = {
        "coef_student.csv": ("beta_E", run.meta["student_covariate_names"]),
        "coef_municipal.csv": ("beta_M", run.meta["municipal_covariate_names"]),
        "coef_departmental.csv": ("beta_D", run.meta["departmental_covariate_names"]),
    }
    for filename, (block, names) in tables.items():
        if block in run.draws and len(names):
            table = coefficient_table(np.asarray(run.draws[block]), names)
            table.to_csv(os.path.join(args.out, filename), index=False)

    for level, filename in (
        ("department", "ranking_department.csv"),
        ("municipality", "ranking_municipality.csv"),
    ):
        values, labels = unit_mean_draws(run.draws, run.inputs, level)
        ranking = unit_ranking(values, labels, reference=args.reference)
        ranking.to_csv(os.path.join(args.out, filename), index=False)

    phi = spatial_effect_summary(np.asarray(run.draws["phi"]), run.inputs.municipality_ids)
    phi.to_csv(os.path.join(args.out, "phi_means.csv"), index=False)

    config = {"draws": args.draws, "reference": args.reference}
    meta = _base_meta("summarize", config, run.meta.get("seed"), started)
    _write_command_meta(args.out, "summarize", meta)
    print(f"summaries -> {args.out}")
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiercar",
        description="Hierarchical Bayesian regression with CAR spatial effects",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset from a scenario")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--skeleton", required=True, help="synthetic:m,d,npm or a dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--kappa2", type=float, default=None)
    p.add_argument("--tau2-phi", dest="tau2_phi", type=float, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler")
    p.add_argument("--students", required=True)
    p.add_argument("--municipalities", required=True)
    p.add_argument("--departments", required=True)
    p.add_argument("--adjacency", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--variant", choices=("baseline", "ridge", "lasso"), default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--burn-fraction", dest="burn_fraction", type=float, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior predictive point predictions")
    p.add_argument("--draws", required=True, help="fit output directory")
    p.add_argument("--students", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="convergence diagnostics and criteria")
    p.add_argument("--draws", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("segment", help="co-clustering territorial segmentation")
    p.add_argument("--draws", required=True)
    p.add_argument(
        "--level", choices=("department", "municipality", "spatial", "spatial_effect"),
        default="department",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--k-max", dest="k_max", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("summarize", help="coefficient tables, rankings, spatial means")
    p.add_argument("--draws", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reference", type=float, default=250.0)
    p.set_defaults(func=cmd_summarize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HiercarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
