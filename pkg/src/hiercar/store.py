"""Run directory layout: draws, traces, metadata, and training-side inputs.

Layout written by `fit`:

    out/
      draws/<block>.csv      one file per stored block, one row per draw
      loglik_trace.csv       iteration, loglik (every sweep)
      training_inputs.npz    standardized covariates and unit aggregates
      run_meta.json          seed, variant, labels, criteria, timings

Downstream commands (predict, diagnose, segment, summarize) operate on
this directory alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import HierarchicalDataset, StandardizationRecord
from .errors import InputError
from .gibbs import VECTOR_BLOCKS, ChainOutput


@dataclass
class TrainingInputs:
    """Training-side arrays needed to score or segment without the raw data."""

    municipal_covariates: np.ndarray      # (m, p_M), fitted scale
    departmental_covariates: np.ndarray   # (d, p_D), fitted scale
    municipality_to_department: np.ndarray
    mun_x_means: np.ndarray               # (m, p_E) per-municipality student covariate means
    n_per_mun: np.ndarray
    municipality_ids: list
    department_ids: list


def training_inputs_from_dataset(ds: HierarchicalDataset) -> TrainingInputs:
    m = ds.n_municipalities
    counts = ds.students_per_municipality.astype(float)
    x_sums = np.zeros((m, ds.p_student))
    if ds.p_student:
        np.add.at(x_sums, ds.student_to_municipality, ds.student_covariates)
    return TrainingInputs(
        municipal_covariates=np.asarray(ds.municipal_covariates),
        departmental_covariates=np.asarray(ds.departmental_covariates),
        municipality_to_department=np.asarray(ds.municipality_to_department),
        mun_x_means=x_sums / counts[:, None] if ds.p_student else x_sums,
        n_per_mun=counts,
        municipality_ids=list(ds.municipality_ids),
        department_ids=list(ds.department_ids),
    )


@dataclass
class RunArtifacts:
    """Everything a downstream command needs from a finished fit."""

    draws: dict
    loglik_trace: np.ndarray
    meta: dict
    inputs: TrainingInputs

    @property
    def variant(self) -> str:
        return self.meta["variant"]

    @property
    def standardization(self) -> StandardizationRecord | None:
        payload = self.meta.get("standardization")
        return StandardizationRecord.from_dict(payload) if payload else None


def _draw_columns(block: str, meta: dict):
    names = {
        "beta_E": meta.get("student_covariate_names"),
        "tau2_E": meta.get("student_covariate_names"),
        "beta_M": meta.get("municipal_covariate_names"),
        "tau2_M": meta.get("municipal_covariate_names"),
        "beta_D": meta.get("departmental_covariate_names"),
        "tau2_D": meta.get("departmental_covariate_names"),
        "phi": meta.get("municipality_ids"),
        "kappa2_mun": meta.get("municipality_ids"),
        "kappa2_dep": meta.get("department_ids"),
    }.get(block)
    return names if names else [block]


def save_run(
    out_dir,
    output: ChainOutput,
    ds: HierarchicalDataset,
    meta: dict,
) -> None:
    """Write the run directory. ``ds`` is the dataset the chain was fit on."""
    draws_dir = os.path.join(out_dir, "draws")
    os.makedirs(draws_dir, exist_ok=True)

    full_meta = dict(output.meta)
    full_meta.update(meta)
    full_meta.setdefault("student_covariate_names", list(ds.student_covariate_names))
    full_meta.setdefault("municipal_covariate_names", list(ds.municipal_covariate_names))
    full_meta.setdefault("departmental_covariate_names", list(ds.departmental_covariate_names))
    full_meta.setdefault("municipality_ids", list(ds.municipality_ids))
    full_meta.setdefault("department_ids", list(ds.department_ids))

    for block, values in output.draws.items():
        arr = np.asarray(values)
        if arr.ndim == 1:
            arr = arr[:, None]
        frame = pd.DataFrame(arr, columns=_draw_columns(block, full_meta))
        frame.to_csv(os.path.join(draws_dir, f"{block}.csv"), index=False)

    trace = pd.DataFrame(
        {
            "iteration": np.arange(output.loglik_trace.shape[0]),
            "loglik": output.loglik_trace,
        }
    )
    trace.to_csv(os.path.join(out_dir, "loglik_trace.csv"), index=False)

    inputs = training_inputs_from_dataset(ds)
    np.savez(
        os.path.join(out_dir, "training_inputs.npz"),
        municipal_covariates=inputs.municipal_covariates,
        departmental_covariates=inputs.departmental_covariates,
        municipality_to_department=inputs.municipality_to_department,
        mun_x_means=inputs.mun_x_means,
        n_per_mun=inputs.n_per_mun,
    )

    with open(os.path.join(out_dir, "run_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(full_meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_run(run_dir) -> RunArtifacts:
    meta_path = os.path.join(run_dir, "run_meta.json")
    if not os.path.exists(meta_path):
        raise InputError("not a run directory (run_meta.json missing)", path=run_dir)
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)

    draws_dir = os.path.join(run_dir, "draws")
    draws = {}
    for name in sorted(os.listdir(draws_dir)):
        if not name.endswith(".csv"):
            continue
        block = name[:-4]
        frame = pd.read_csv(os.path.join(draws_dir, name))
        values = frame.to_numpy(dtype=float)
        if block not in VECTOR_BLOCKS and values.shape[1] == 1:
            values = values[:, 0]
        draws[block] = values

    trace = pd.read_csv(os.path.join(run_dir, "loglik_trace.csv"))["loglik"].to_numpy(dtype=float)

    with np.load(os.path.join(run_dir, "training_inputs.npz")) as payload:
        inputs = TrainingInputs(
            municipal_covariates=payload["municipal_covariates"],
            departmental_covariates=payload["departmental_covariates"],
            municipality_to_department=payload["municipality_to_department"].astype(int),
            mun_x_means=payload["mun_x_means"],
            n_per_mun=payload["n_per_mun"],
            municipality_ids=list(meta["municipality_ids"]),
            department_ids=list(meta["department_ids"]),
        )
    return RunArtifacts(draws=draws, loglik_trace=trace, meta=meta, inputs=inputs)


def artifacts_from_chain(
    output: ChainOutput, ds: HierarchicalDataset, meta: dict | None = None
) -> RunArtifacts:
    """In-memory RunArtifacts, bypassing the filesystem (tests, pipelines)."""
    full_meta = dict(output.meta)
    if meta:
        full_meta.update(meta)
    full_meta.setdefault("student_covariate_names", list(ds.student_covariate_names))
    full_meta.setdefault("municipal_covariate_names", list(ds.municipal_covariate_names))
    full_meta.setdefault("departmental_covariate_names", list(ds.departmental_covariate_names))
    full_meta.setdefault("municipality_ids", list(ds.municipality_ids))
    full_meta.setdefault("department_ids", list(ds.department_ids))
    return RunArtifacts(
        draws={k: np.asarray(v) for k, v in output.draws.items()},
        loglik_trace=output.loglik_trace,
        meta=full_meta,
        inputs=training_inputs_from_dataset(ds),
    )
