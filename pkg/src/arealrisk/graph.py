"""Adjacency structure over areal units and the CAR prior kernel.

Regions are identified by string labels; adjacency is binary and symmetric
with no self-loops. Every region must have at least one neighbor: the
spatial random-effect full conditionals divide by the neighbor count, so an
isolated region is rejected at load time rather than allowed to degenerate
during sampling. Disconnected (but island-free) maps are accepted with a
warning and receive a single global sum-to-zero centering downstream.
"""

from __future__ import annotations

import csv
import warnings

import numpy as np
import scipy.sparse as sp

__all__ = [
    "AdjacencyGraph",
    "GraphStructureError",
    "load_adjacency",
    "neighbor_mean",
    "car_pairwise_sum",
    "car_log_kernel",
]


class GraphStructureError(ValueError):
    """Raised for structurally invalid adjacency input."""


class AdjacencyGraph:
    """Symmetric binary neighbor structure over ``n_regions`` areal units.

    Immutable after construction and safe to share across concurrent fits.

    Parameters
    ----------
    region_ids : sequence of str
        Unique, order-defining region labels.
    edges : sequence of (int, int)
        Unordered index pairs; duplicates and reversed duplicates collapse
        to a single edge.
    """

    def __init__(self, region_ids, edges):
        ids = tuple(str(r) for r in region_ids)
        if len(set(ids)) != len(ids):
            raise GraphStructureError("region ids must be unique")
        n = len(ids)

        seen = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphStructureError(f"self-loop at region {ids[i]!r}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphStructureError(f"edge ({i},{j}) out of range")
            seen.add((min(i, j), max(i, j)))
        edge_arr = np.array(sorted(seen), dtype=np.int64).reshape(-1, 2)

        degrees = np.zeros(n, dtype=np.int64)
        if edge_arr.size:
            np.add.at(degrees, edge_arr[:, 0], 1)
            np.add.at(degrees, edge_arr[:, 1], 1)
        islands = [ids[i] for i in np.nonzero(degrees == 0)[0]]
        if islands:
            raise GraphStructureError(
                "isolated region(s) with no neighbors: " + ", ".join(islands)
            )

        self.region_ids = ids
        self.n_regions = n
        self.edges = edge_arr
        self.degrees = degrees
        self._index = {r: i for i, r in enumerate(ids)}
        self.edges.setflags(write=False)
        self.degrees.setflags(write=False)

        rows = np.concatenate([edge_arr[:, 0], edge_arr[:, 1]])
        cols = np.concatenate([edge_arr[:, 1], edge_arr[:, 0]])
        self._adjacency = sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(n, n)
        )

        if self.n_components > 1:
            warnings.warn(
                f"adjacency graph has {self.n_components} connected components; "
                "a single global sum-to-zero constraint will be applied",
                stacklevel=2,
            )

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def adjacency(self) -> sp.csr_matrix:
        """Sparse symmetric 0/1 adjacency matrix."""
        return self._adjacency

    @property
    def n_components(self) -> int:
        if not hasattr(self, "_n_components"):
            ncomp, _ = sp.csgraph.connected_components(self._adjacency, directed=False)
            self._n_components = int(ncomp)
        return self._n_components

    def index(self, region_id: str) -> int:
        return self._index[str(region_id)]

    def neighbors(self, i: int) -> np.ndarray:
        """Indices of the regions adjacent to region ``i``."""
        return self._adjacency.indices[
            self._adjacency.indptr[i] : self._adjacency.indptr[i + 1]
        ]

    def coloring(self) -> list[np.ndarray]:
        """Partition regions into classes with no within-class adjacency.

        Greedy coloring in decreasing-degree order; deterministic for a
        given graph. Within a class the spatial-effect full conditionals
        are mutually independent, so a Metropolis sweep may update a whole
        class at once (equivalent to a sequential scan in class order).
        """
        if not hasattr(self, "_coloring"):
            order = np.argsort(-self.degrees, kind="stable")
            color = np.full(self.n_regions, -1, dtype=np.int64)
            for i in order:
                used = {color[j] for j in self.neighbors(i) if color[j] >= 0}
                c = 0
                while c in used:
                    c += 1
                color[i] = c
            self._coloring = [
                np.nonzero(color == c)[0] for c in range(color.max() + 1)
            ]
        return self._coloring


def neighbor_mean(graph: AdjacencyGraph, phi: np.ndarray, i: int) -> float:
    """Arithmetic mean of ``phi`` over the neighbors of region ``i``."""
    nbrs = graph.neighbors(i)
    return float(np.mean(np.asarray(phi, dtype=float)[nbrs]))


def car_pairwise_sum(graph: AdjacencyGraph, phi: np.ndarray) -> float:
    """Sum of squared differences of ``phi`` across adjacent pairs.

    Each unordered neighbor pair contributes once. Zero exactly when phi is
    constant on every connected component; invariant under adding a constant.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (graph.n_regions,):
        raise ValueError(
            f"phi has shape {phi.shape}, expected ({graph.n_regions},)"
        )
    d = phi[graph.edges[:, 0]] - phi[graph.edges[:, 1]]
    return float(np.dot(d, d))


def car_log_kernel(graph: AdjacencyGraph, phi: np.ndarray, tau: float) -> float:
    """Log of the unnormalized CAR density: (I/2) log(tau) - (tau/2) S(phi)."""
    tau = float(tau)
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return 0.5 * graph.n_regions * np.log(tau) - 0.5 * tau * car_pairwise_sum(
        graph, phi
    )


def _parse_edge_list(rows, declared):
    edges = []
    order: list[str] = []
    seen_ids = set()

    def note(rid):
        if rid not in seen_ids:
            seen_ids.add(rid)
            order.append(rid)

    for lineno, row in rows:
        row = [c.strip() for c in row]
        if not row or not any(row):
            continue
        if len(row) < 2 or row[1] == "":
            # a row naming only one region declares it without neighbors
            note(row[0])
            declared.add(row[0])
            continue
        a, b = row[0], row[1]
        if a == "" or b == "":
            raise GraphStructureError(f"line {lineno}: incomplete edge row {row}")
        note(a)
        note(b)
        edges.append((a, b))
    return order, edges


def _parse_matrix(header, rows):
    ids = [c.strip() for c in header[1:]]
    n = len(ids)
    mat = np.zeros((n, n), dtype=np.int64)
    row_labels = []
    for lineno, row in rows:
        row = [c.strip() for c in row]
        if not row or not any(row):
            continue
        if len(row) != n + 1:
            raise GraphStructureError(
                f"line {lineno}: expected {n + 1} columns, got {len(row)}"
            )
        row_labels.append(row[0])
        for j, cell in enumerate(row[1:]):
            if cell not in ("0", "1"):
                raise GraphStructureError(
                    f"line {lineno}: adjacency entries must be 0 or 1, got {cell!r}"
                )
            mat[len(row_labels) - 1, j] = int(cell)
    if row_labels != ids:
        raise GraphStructureError(
            "matrix row labels do not match the header region ids"
        )
    if np.any(np.diag(mat) != 0):
        bad = ids[int(np.nonzero(np.diag(mat))[0][0])]
        raise GraphStructureError(f"self-loop at region {bad!r}")
    if not np.array_equal(mat, mat.T):
        i, j = np.argwhere(mat != mat.T)[0]
        raise GraphStructureError(
            f"asymmetric adjacency: entry ({ids[i]},{ids[j]}) != ({ids[j]},{ids[i]})"
        )
    edges = [(ids[i], ids[j]) for i, j in np.argwhere(np.triu(mat, 1))]
    return ids, edges


def load_adjacency(path, region_ids=None) -> AdjacencyGraph:
    """Load an adjacency file.

    Two CSV forms are accepted: an edge list with header ``from,to``, or a
    square 0/1 matrix whose header row and first column carry the region
    ids. Edge lists are symmetrized and deduplicated; matrices must already
    be symmetric. If ``region_ids`` is given, every listed region must
    appear with at least one neighbor.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GraphStructureError(f"{path}: empty adjacency file") from None
        numbered = [(lineno, row) for lineno, row in enumerate(reader, start=2)]

    header_norm = [c.strip().lower() for c in header]
    declared: set[str] = set()
    if header_norm[:2] == ["from", "to"]:
        order, named_edges = _parse_edge_list(numbered, declared)
    else:
        order, named_edges = _parse_matrix(header, numbered)

    if region_ids is not None:
        required = [str(r) for r in region_ids]
        onto = set(order)
        missing = [r for r in required if r not in onto]
        declared.update(missing)
        for r in missing:
            order.append(r)

    index = {r: i for i, r in enumerate(order)}
    edges = [(index[a], index[b]) for a, b in named_edges]

    # regions declared without any edge surface as islands
    if declared:
        touched = {i for e in edges for i in e}
        isolated = sorted(r for r in declared if index[r] not in touched)
        if isolated:
            raise GraphStructureError(
                "isolated region(s) with no neighbors: " + ", ".join(isolated)
            )

    return AdjacencyGraph(order, edges)
