"""Shared fixtures: a small nested dataset with a known graph."""

import numpy as np
import pytest

from hiercar.data import HierarchicalDataset
from hiercar.graph import build_graph


def make_dataset(
    seed=0,
    n_per_mun=(12, 9, 11, 8),
    mun_to_dep=(0, 0, 1, 1),
    p_E=3,
    p_M=2,
    p_D=2,
    score_scale=30.0,
):
    """Random small dataset; municipality j holds n_per_mun[j] students."""
    gen = np.random.default_rng(seed)
    m = len(n_per_mun)
    d = max(mun_to_dep) + 1
    n = int(sum(n_per_mun))
    stu_to_mun = np.repeat(np.arange(m), n_per_mun)
    ds = HierarchicalDataset(
        scores=250.0 + score_scale * gen.standard_normal(n),
        student_covariates=(gen.random((n, p_E)) < 0.4).astype(float),
        municipal_covariates=gen.standard_normal((m, p_M)),
        departmental_covariates=gen.standard_normal((d, p_D)),
        student_to_municipality=stu_to_mun,
        municipality_to_department=np.asarray(mun_to_dep, dtype=int),
        student_ids=[f"s{i}" for i in range(n)],
        municipality_ids=[f"m{j}" for j in range(m)],
        department_ids=[f"d{k}" for k in range(d)],
        student_covariate_names=[f"x{i}" for i in range(p_E)],
        municipal_covariate_names=[f"z{i}" for i in range(p_M)],
        departmental_covariate_names=[f"w{i}" for i in range(p_D)],
        municipality_index={f"m{j}": j for j in range(m)},
        department_index={f"d{k}": k for k in range(d)},
    )
    # a path graph within each department
    edges = [
        (j, j + 1)
        for j in range(m - 1)
        if ds.municipality_to_department[j] == ds.municipality_to_department[j + 1]
    ]
    graph = build_graph(m, edges, ds.municipality_to_department)
    return ds, graph


@pytest.fixture
def toy():
    """40 students in 4 municipalities of 2 departments, path graphs."""
    return make_dataset()
