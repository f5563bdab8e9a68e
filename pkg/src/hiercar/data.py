"""Dataset ingestion, nesting structure, standardization, and OLS.

Input files are three CSVs (students, municipalities, departments) with
arbitrary string ids; the loader builds dense 0-based index maps and
keeps the label vocabularies so draws can be re-attached to names.
Categorical student covariates arrive pre-encoded as 0/1 columns; the
loader does no factor encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import (
    CellParseError,
    DanglingKeyError,
    EmptyUnitError,
    InputError,
    MissingColumnError,
    RankDeficientError,
    ZeroVarianceError,
)


@dataclass(frozen=True)
class HierarchicalDataset:
    """Scores and covariates with student < municipality < department nesting.

    Index sequences are dense 0-based integers; municipality j belongs to
    department municipality_to_department[j]. Immutable after construction
    and safe to share across concurrent readers.
    """

    scores: np.ndarray                  # (n,)
    student_covariates: np.ndarray      # (n, p_E)
    municipal_covariates: np.ndarray    # (m, p_M)
    departmental_covariates: np.ndarray # (d, p_D)
    student_to_municipality: np.ndarray # (n,) int
    municipality_to_department: np.ndarray  # (m,) int
    student_ids: list
    municipality_ids: list
    department_ids: list
    student_covariate_names: list
    municipal_covariate_names: list
    departmental_covariate_names: list
    municipality_index: dict = field(repr=False)
    department_index: dict = field(repr=False)

    def __post_init__(self):
        for name in (
            "scores",
            "student_covariates",
            "municipal_covariates",
            "departmental_covariates",
            "student_to_municipality",
            "municipality_to_department",
        ):
            arr = getattr(self, name)
            arr.setflags(write=False)
        _validate_dataset(self)

    # -- sizes -------------------------------------------------------------

    @property
    def n_students(self) -> int:
        return self.scores.shape[0]

    @property
    def n_municipalities(self) -> int:
        return self.municipal_covariates.shape[0]

    @property
    def n_departments(self) -> int:
        return self.departmental_covariates.shape[0]

    @property
    def p_student(self) -> int:
        return self.student_covariates.shape[1]

    @property
    def p_municipal(self) -> int:
        return self.municipal_covariates.shape[1]

    @property
    def p_departmental(self) -> int:
        return self.departmental_covariates.shape[1]

    @property
    def students_per_municipality(self) -> np.ndarray:
        """n_{j,k}: student count per municipality."""
        return np.bincount(self.student_to_municipality, minlength=self.n_municipalities)

    @property
    def municipalities_per_department(self) -> np.ndarray:
        """m_k: municipality count per department."""
        return np.bincount(self.municipality_to_department, minlength=self.n_departments)

    @property
    def student_to_department(self) -> np.ndarray:
        return self.municipality_to_department[self.student_to_municipality]

    def equals(self, other: "HierarchicalDataset") -> bool:
        return (
            np.array_equal(self.scores, other.scores)
            and np.array_equal(self.student_covariates, other.student_covariates)
            and np.array_equal(self.municipal_covariates, other.municipal_covariates)
            and np.array_equal(self.departmental_covariates, other.departmental_covariates)
            and np.array_equal(self.student_to_municipality, other.student_to_municipality)
            and np.array_equal(self.municipality_to_department, other.municipality_to_department)
            and self.student_ids == other.student_ids
            and self.municipality_ids == other.municipality_ids
            and self.department_ids == other.department_ids
            and self.student_covariate_names == other.student_covariate_names
            and self.municipal_covariate_names == other.municipal_covariate_names
            and self.departmental_covariate_names == other.departmental_covariate_names
        )


def _validate_dataset(ds: HierarchicalDataset):
    n, m, d = ds.n_students, ds.n_municipalities, ds.n_departments
    if ds.student_to_municipality.shape[0] != n:
        raise InputError("student index sequence length differs from score count")
    if ds.municipality_to_department.shape[0] != m:
        raise InputError("municipality index sequence length differs from municipality count")
    if n and (ds.student_to_municipality.min() < 0 or ds.student_to_municipality.max() >= m):
        raise InputError("student-to-municipality index out of range")
    if m and (ds.municipality_to_department.min() < 0 or ds.municipality_to_department.max() >= d):
        raise InputError("municipality-to-department index out of range")
    empty_mun = np.flatnonzero(ds.students_per_municipality == 0)
    if empty_mun.size:
        raise EmptyUnitError(
            f"municipality {ds.municipality_ids[empty_mun[0]]!r} has no students"
        )
    empty_dep = np.flatnonzero(ds.municipalities_per_department == 0)
    if empty_dep.size:
        raise EmptyUnitError(
            f"department {ds.department_ids[empty_dep[0]]!r} has no municipalities"
        )
    for name in ("scores", "student_covariates", "municipal_covariates", "departmental_covariates"):
        if not np.all(np.isfinite(getattr(ds, name))):
            raise InputError(f"non-finite values in {name}")


@dataclass(frozen=True)
class StandardizationRecord:
    """Per-column mean/sd used to standardize municipal and departmental covariates.

    Student-level columns (0/1 indicators) are never touched. Applying
    then inverting the transform is the identity to within 1e-12.
    """

    municipal_means: np.ndarray
    municipal_sds: np.ndarray
    departmental_means: np.ndarray
    departmental_sds: np.ndarray

    def __post_init__(self):
        if np.any(self.municipal_sds <= 0) or np.any(self.departmental_sds <= 0):
            raise ZeroVarianceError("standardization sds must be strictly positive")

    def apply_municipal(self, z: np.ndarray) -> np.ndarray:
        return (z - self.municipal_means) / self.municipal_sds

    def apply_departmental(self, w: np.ndarray) -> np.ndarray:
        return (w - self.departmental_means) / self.departmental_sds

    def invert_municipal(self, z: np.ndarray) -> np.ndarray:
        return z * self.municipal_sds + self.municipal_means

    def invert_departmental(self, w: np.ndarray) -> np.ndarray:
        return w * self.departmental_sds + self.departmental_means

    def to_dict(self) -> dict:
        return {
            "municipal_means": self.municipal_means.tolist(),
            "municipal_sds": self.municipal_sds.tolist(),
            "departmental_means": self.departmental_means.tolist(),
            "departmental_sds": self.departmental_sds.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "StandardizationRecord":
        return cls(
            municipal_means=np.asarray(payload["municipal_means"], dtype=float),
            municipal_sds=np.asarray(payload["municipal_sds"], dtype=float),
            departmental_means=np.asarray(payload["departmental_means"], dtype=float),
            departmental_sds=np.asarray(payload["departmental_sds"], dtype=float),
        )


def standardize_covariates(ds: HierarchicalDataset):
    """Center and scale municipal/departmental covariate columns to mean 0, sample sd 1.

    Returns (standardized dataset, StandardizationRecord). Student-level
    columns are left untouched. A constant column raises
    ZeroVarianceError naming the column.
    """

    def stats(matrix, names, level):
        means = matrix.mean(axis=0)
        sds = matrix.std(axis=0, ddof=1) if matrix.shape[0] > 1 else np.zeros(matrix.shape[1])
        bad = np.flatnonzero(sds <= 0)
        if bad.size:
            raise ZeroVarianceError(
                f"{level} covariate column {names[bad[0]]!r} has zero sample variance"
            )
        return means, sds

    mun_means, mun_sds = stats(ds.municipal_covariates, ds.municipal_covariate_names, "municipal")
    dep_means, dep_sds = stats(
        ds.departmental_covariates, ds.departmental_covariate_names, "departmental"
    )
    record = StandardizationRecord(mun_means, mun_sds, dep_means, dep_sds)
    out = replace(
        ds,
        municipal_covariates=record.apply_municipal(ds.municipal_covariates),
        departmental_covariates=record.apply_departmental(ds.departmental_covariates),
    )
    return out, record


def unstandardize_covariates(ds: HierarchicalDataset, record: StandardizationRecord) -> HierarchicalDataset:
    return replace(
        ds,
        municipal_covariates=record.invert_municipal(ds.municipal_covariates),
        departmental_covariates=record.invert_departmental(ds.departmental_covariates),
    )


def ols_fit(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients for a full-column-rank design matrix.

    The caller supplies the intercept column. Rank deficiency raises
    RankDeficientError; callers may fall back to zero prior means and
    record that in run metadata.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficientError(
            f"design matrix has rank {rank} < {design.shape[1]} columns"
        )
    return coef


# -- CSV ingestion ----------------------------------------------------------


def load_dataset(students_path, municipalities_path, departments_path) -> HierarchicalDataset:
    """Load and validate the three-file dataset.

    Every failure is located: missing column, unparseable cell, dangling
    foreign key, empty municipality or department.
    """
    dep_frame = _read_csv(departments_path, ["department_id"])
    mun_frame = _read_csv(municipalities_path, ["municipality_id", "department_id"])
    stu_frame = _read_csv(students_path, ["student_id", "municipality_id", "score"])

    department_ids = dep_frame["department_id"].tolist()
    _reject_duplicates(department_ids, "department_id", departments_path)
    department_index = {label: i for i, label in enumerate(department_ids)}

    municipality_ids = mun_frame["municipality_id"].tolist()
    _reject_duplicates(municipality_ids, "municipality_id", municipalities_path)
    municipality_index = {label: i for i, label in enumerate(municipality_ids)}

    mun_to_dep = np.empty(len(municipality_ids), dtype=int)
    for pos, label in enumerate(mun_frame["department_id"]):
        if label not in department_index:
            raise DanglingKeyError(
                f"municipality references unknown department id {label!r}",
                path=municipalities_path,
                row=pos + 2,
            )
        mun_to_dep[pos] = department_index[label]

    stu_to_mun = np.empty(len(stu_frame), dtype=int)
    for pos, label in enumerate(stu_frame["municipality_id"]):
        if label not in municipality_index:
            raise DanglingKeyError(
                f"student references unknown municipality id {label!r}",
                path=students_path,
                row=pos + 2,
            )
        stu_to_mun[pos] = municipality_index[label]

    dep_cov_names = [c for c in dep_frame.columns if c != "department_id"]
    mun_cov_names = [c for c in mun_frame.columns if c not in ("municipality_id", "department_id")]
    stu_cov_names = [
        c for c in stu_frame.columns if c not in ("student_id", "municipality_id", "score")
    ]

    return HierarchicalDataset(
        scores=_numeric_block(stu_frame, ["score"], students_path)[:, 0],
        student_covariates=_numeric_block(stu_frame, stu_cov_names, students_path),
        municipal_covariates=_numeric_block(mun_frame, mun_cov_names, municipalities_path),
        departmental_covariates=_numeric_block(dep_frame, dep_cov_names, departments_path),
        student_to_municipality=stu_to_mun,
        municipality_to_department=mun_to_dep,
        student_ids=stu_frame["student_id"].tolist(),
        municipality_ids=municipality_ids,
        department_ids=department_ids,
        student_covariate_names=stu_cov_names,
        municipal_covariate_names=mun_cov_names,
        departmental_covariate_names=dep_cov_names,
        municipality_index=municipality_index,
        department_index=department_index,
    )


def save_dataset(ds: HierarchicalDataset, out_dir) -> dict:
    """Write students/municipalities/departments CSVs; returns the paths."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "students": os.path.join(out_dir, "students.csv"),
        "municipalities": os.path.join(out_dir, "municipalities.csv"),
        "departments": os.path.join(out_dir, "departments.csv"),
    }
    stu = pd.DataFrame({"student_id": ds.student_ids})
    stu["municipality_id"] = [ds.municipality_ids[j] for j in ds.student_to_municipality]
    stu["score"] = ds.scores
    for i, name in enumerate(ds.student_covariate_names):
        stu[name] = ds.student_covariates[:, i]
    stu.to_csv(paths["students"], index=False)

    mun = pd.DataFrame({"municipality_id": ds.municipality_ids})
    mun["department_id"] = [ds.department_ids[k] for k in ds.municipality_to_department]
    for i, name in enumerate(ds.municipal_covariate_names):
        mun[name] = ds.municipal_covariates[:, i]
    mun.to_csv(paths["municipalities"], index=False)

    dep = pd.DataFrame({"department_id": ds.department_ids})
    for i, name in enumerate(ds.departmental_covariate_names):
        dep[name] = ds.departmental_covariates[:, i]
    dep.to_csv(paths["departments"], index=False)
    return paths


def _read_csv(path, required_columns) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise InputError("file not found", path=path) from None
    for col in required_columns:
        if col not in frame.columns:
            raise MissingColumnError(f"missing column {col!r}", path=path, column=col)
    return frame


def _reject_duplicates(labels, column, path):
    seen = set()
    for pos, label in enumerate(labels):
        if label in seen:
            raise InputError(f"duplicate {column} {label!r}", path=path, row=pos + 2)
        seen.add(label)


def _numeric_block(frame: pd.DataFrame, columns, path) -> np.ndarray:
    out = np.empty((len(frame), len(columns)), dtype=float)
    for i, col in enumerate(columns):
        # to_numeric only locates unparseable cells; the actual parse goes
        # through numpy, whose string conversion is round-trip exact
        parsed = pd.to_numeric(frame[col], errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            raise CellParseError(
                f"cell {frame[col].iloc[bad[0]]!r} is not numeric",
                path=path,
                row=int(bad[0]) + 2,
                column=col,
            )
        values = frame[col].to_numpy().astype(np.float64)
        nonfinite = np.flatnonzero(~np.isfinite(values))
        if nonfinite.size:
            raise CellParseError(
                "non-finite value",
                path=path,
                row=int(nonfinite[0]) + 2,
                column=col,
            )
        out[:, i] = values
    return out
