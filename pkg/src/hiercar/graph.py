"""Municipal adjacency structure and intrinsic-CAR linear algebra.

Adjacency is per-department: edges never cross department boundaries,
matching the per-department CAR prior on the spatial effects. The
quadratic form phi' (D - W) phi is evaluated through the pairwise
difference identity, which is exact and numerically stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import CrossDepartmentEdgeError, DanglingKeyError, MissingColumnError


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected municipality adjacency, department-local.

    edges: array (n_edges, 2) of municipality indices with a < b, deduplicated.
    degrees: neighbor count per municipality.
    neighbor_lists: sorted neighbor index array per municipality.
    components: list of index arrays, one per connected component; isolated
        municipalities are singleton components. Components never span
        departments.
    """

    n_municipalities: int
    edges: np.ndarray
    degrees: np.ndarray
    neighbor_lists: list = field(repr=False)
    components: list = field(repr=False)
    municipality_to_department: np.ndarray | None = field(default=None, repr=False)

    def component_of(self) -> np.ndarray:
        """Component id per municipality."""
        comp = np.empty(self.n_municipalities, dtype=int)
        for cid, members in enumerate(self.components):
            comp[members] = cid
        return comp

    def laplacian_dense(self) -> np.ndarray:
        """Dense D - W. Intended for small graphs (tests, simulation)."""
        lap = np.zeros((self.n_municipalities, self.n_municipalities))
        for a, b in self.edges:
            lap[a, b] -= 1.0
            lap[b, a] -= 1.0
        lap[np.diag_indices_from(lap)] = self.degrees
        return lap


def build_graph(n_municipalities: int, edge_pairs, municipality_to_department=None) -> AdjacencyGraph:
    """Construct a validated graph from raw (a, b) index pairs.

    Self-loops are rejected, duplicates collapsed. If a department map is
    given, cross-department pairs raise CrossDepartmentEdgeError.
    """
    seen = set()
    for a, b in edge_pairs:
        a, b = int(a), int(b)
        if a == b:
            raise ValueError(f"self-loop on municipality index {a}")
        if not (0 <= a < n_municipalities and 0 <= b < n_municipalities):
            raise ValueError(f"municipality index out of range: ({a}, {b})")
        if municipality_to_department is not None:
            if municipality_to_department[a] != municipality_to_department[b]:
                raise CrossDepartmentEdgeError(
                    f"edge ({a}, {b}) crosses department boundary"
                )
        seen.add((min(a, b), max(a, b)))
    edges = np.array(sorted(seen), dtype=int).reshape(-1, 2)

    neighbor_sets = [[] for _ in range(n_municipalities)]
    for a, b in edges:
        neighbor_sets[a].append(b)
        neighbor_sets[b].append(a)
    neighbor_lists = [np.array(sorted(s), dtype=int) for s in neighbor_sets]
    degrees = np.array([len(s) for s in neighbor_lists], dtype=int)

    components = _connected_components(n_municipalities, neighbor_lists)
    dep = None
    if municipality_to_department is not None:
        dep = np.asarray(municipality_to_department, dtype=int)
    return AdjacencyGraph(
        n_municipalities=n_municipalities,
        edges=edges,
        degrees=degrees,
        neighbor_lists=neighbor_lists,
        components=components,
        municipality_to_department=dep,
    )


def load_adjacency(path, ds) -> AdjacencyGraph:
    """Read `adjacency.csv` (municipality_id_a, municipality_id_b) against a dataset.

    Municipalities absent from the file end up with degree 0. Unknown ids and
    cross-department edges are rejected with the offending pair named.
    """
    frame = pd.read_csv(path, dtype=str)
    for col in ("municipality_id_a", "municipality_id_b"):
        if col not in frame.columns:
            raise MissingColumnError(f"missing column {col!r}", path=path, column=col)
    pairs = []
    for row_number, (ida, idb) in enumerate(
        zip(frame["municipality_id_a"], frame["municipality_id_b"]), start=2
    ):
        for raw in (ida, idb):
            if raw not in ds.municipality_index:
                raise DanglingKeyError(
                    f"unknown municipality id {raw!r} in adjacency file",
                    path=path,
                    row=row_number,
                )
        a = ds.municipality_index[ida]
        b = ds.municipality_index[idb]
        if ds.municipality_to_department[a] != ds.municipality_to_department[b]:
            raise CrossDepartmentEdgeError(
                f"edge ({ida!r}, {idb!r}) joins municipalities of different departments",
                path=path,
                row=row_number,
            )
        pairs.append((a, b))
    return build_graph(ds.n_municipalities, pairs, ds.municipality_to_department)


def car_quadratic_form(phi: np.ndarray, g: AdjacencyGraph, department: int | None = None) -> float:
    """phi' (D - W) phi via the identity 0.5 * sum w_ij (phi_i - phi_j)^2.

    With ``department`` given, only that department's edges contribute
    (phi stays indexed over all municipalities). Nonnegative by
    construction; zero iff phi is constant on every connected component
    in scope.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] != g.n_municipalities:
        raise ValueError(
            f"phi has length {phi.shape[0]}, graph has {g.n_municipalities} municipalities"
        )
    edges = g.edges
    if department is not None:
        if g.municipality_to_department is None:
            raise ValueError("graph carries no department map")
        keep = g.municipality_to_department[edges[:, 0]] == department
        edges = edges[keep]
    if edges.shape[0] == 0:
        return 0.0
    diffs = phi[edges[:, 0]] - phi[edges[:, 1]]
    # each undirected edge appears once; the 1/2 double-count factor cancels
    return float(np.dot(diffs, diffs))


def sum_to_zero_center(phi: np.ndarray) -> np.ndarray:
    """Subtract the mean so the vector sums to zero."""
    phi = np.asarray(phi, dtype=float)
    if phi.size == 0:
        raise ValueError("cannot center an empty vector")
    return phi - phi.mean()


def center_per_component(phi: np.ndarray, g: AdjacencyGraph) -> np.ndarray:
    """Apply the sum-to-zero constraint within every connected component."""
    out = np.asarray(phi, dtype=float).copy()
    for members in g.components:
        out[members] -= out[members].mean()
    return out


def connected_components(g: AdjacencyGraph, department: int | None = None) -> list:
    """Maximal connected components as sorted index arrays.

    Isolated municipalities are singletons. With ``department`` given,
    only components belonging to that department are returned.
    """
    comps = [np.array(c, copy=True) for c in g.components]
    if department is None:
        return comps
    if g.municipality_to_department is None:
        raise ValueError("graph carries no department map")
    return [c for c in comps if g.municipality_to_department[c[0]] == department]


def _connected_components(n: int, neighbor_lists) -> list:
    labels = np.full(n, -1, dtype=int)
    components = []
    for start in range(n):
        if labels[start] >= 0:
            continue
        cid = len(components)
        stack = [start]
        members = []
        labels[start] = cid
        while stack:
            node = stack.pop()
            members.append(node)
            for nb in neighbor_lists[node]:
                if labels[nb] < 0:
                    labels[nb] = cid
                    stack.append(nb)
        components.append(np.array(sorted(members), dtype=int))
    return components
