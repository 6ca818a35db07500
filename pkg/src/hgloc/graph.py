"""Inductive KNN graph construction over fingerprint sampling points.

Records that share an exact position label form a sampling point. Graph
edges never link records directly by pairwise distance: a query record finds
its K+1 nearest sampling points in some feature space (mean RSSI, encoder
outputs, or predicted positions), drops its own point if retrieved, keeps the
top K, and links to up to N uniformly chosen member records of each. Edges
are undirected and connect targets only to training records, so co-submitted
queries can never influence each other.

Graphs are immutable once built; an RSSI-space graph and a position-space
graph over the same node set combine into a two-edge-type container.
"""

from __future__ import annotations

import dataclasses
import hashlib

import numpy as np

from .dataset import FingerprintSet
from .errors import GraphError
from .serialize import read_container, write_container

RECORD_PICK_STREAM = 0x9E1D  # seed-domain tag for member-record selection

KNN_CHUNK = 2048  # query rows per distance-matrix block


@dataclasses.dataclass
class KnnConfig:
    k: int = 4  # nearest sampling points kept per query
    n_records: int = 1  # member records linked per kept point

    def validate(self) -> list[str]:
        problems = []
        if self.k < 1:
            problems.append(f"knn.k must be >= 1, got {self.k}")
        if self.n_records < 1:
            problems.append(f"knn.n_records must be >= 1, got {self.n_records}")
        return problems


@dataclasses.dataclass
class SamplingPointSet:
    """Distinct survey positions with per-point mean features and members.

    ``spids`` are sorted ascending; ``members`` holds record indices (into
    whatever record set the point set was built from) in CSR layout.
    """

    spids: np.ndarray  # [S] int64, sorted ascending
    positions: np.ndarray  # [S, 4] float64: lon, lat, floor, building
    features: np.ndarray  # [S, F] float64, mean over member records
    members_indptr: np.ndarray  # [S + 1] int64
    members: np.ndarray  # [sum] int64 record indices

    def __post_init__(self):
        if len(self.spids) > 1 and not np.all(np.diff(self.spids) > 0):
            raise GraphError("sampling point ids must be sorted and unique")

    def __len__(self):
        return len(self.spids)

    def member_records(self, row: int) -> np.ndarray:
        return self.members[self.members_indptr[row] : self.members_indptr[row + 1]]

    def with_features(self, features: np.ndarray) -> "SamplingPointSet":
        if len(features) != len(self.spids):
            raise GraphError("replacement point features have wrong length")
        return dataclasses.replace(self, features=np.asarray(features, dtype=np.float64))


def _position_labels(fset: FingerprintSet) -> np.ndarray:
    labels = np.column_stack(
        [fset.lon, fset.lat, fset.floors.astype(np.float64), fset.buildings.astype(np.float64)]
    )
    return labels + 0.0  # folds -0.0 into +0.0 so equality is value equality


def aggregate_sampling_points(fset: FingerprintSet):
    """Assign sampling-point ids by exact position-label equality.

    Distinct (lon, lat, floor, building) labels are sorted lexicographically
    and numbered 0..S-1; each point's feature vector is the mean over its
    member records. Returns (per-record spids, SamplingPointSet).
    """
    labels = _position_labels(fset)
    uniq, inverse = np.unique(labels, axis=0, return_inverse=True)
    spids = inverse.astype(np.int64)
    points = _build_points(
        np.arange(len(uniq), dtype=np.int64), uniq, fset.features, spids
    )
    return spids, points


def _build_points(point_ids, positions, record_features, record_spids):
    order = np.argsort(record_spids, kind="stable")
    sorted_spids = record_spids[order]
    # boundaries of each spid run; point_ids are exactly the distinct spids
    boundaries = np.searchsorted(sorted_spids, point_ids, side="left")
    indptr = np.append(boundaries, len(sorted_spids)).astype(np.int64)
    feats = np.add.reduceat(
        record_features[order].astype(np.float64), indptr[:-1], axis=0
    )
    counts = np.diff(indptr)
    if np.any(counts == 0):
        raise GraphError("every sampling point needs at least one member record")
    feats /= counts[:, None]
    return SamplingPointSet(
        spids=point_ids,
        positions=np.asarray(positions, dtype=np.float64),
        features=feats,
        members_indptr=indptr,
        members=order.astype(np.int64),
    )


def points_from_records(fset: FingerprintSet, feature_matrix=None) -> SamplingPointSet:
    """Rebuild the point set over a record subset, keeping the original ids.

    Used after the validation split (train-side points only) and for
    alternate feature spaces (encoder outputs, positions): per-point features
    are the mean of member-record rows of ``feature_matrix``.
    """
    if np.any(fset.spids < 0):
        raise GraphError("records lack sampling-point ids; aggregate first")
    feats = fset.features if feature_matrix is None else np.asarray(feature_matrix)
    if len(feats) != len(fset):
        raise GraphError("feature matrix length does not match record count")
    ids = np.unique(fset.spids)
    positions = np.empty((len(ids), 4), dtype=np.float64)
    labels = _position_labels(fset)
    first = np.searchsorted(fset.spids[np.argsort(fset.spids, kind="stable")], ids)
    order = np.argsort(fset.spids, kind="stable")
    positions[:] = labels[order][first]
    return _build_points(ids, positions, feats, fset.spids)


def position_space(coords_std: np.ndarray, floors=None, floor_scale: float = 2.0):
    """KNN feature space over positions: (x, y) or (x, y, floor_scale*floor)."""
    coords_std = np.asarray(coords_std, dtype=np.float64)
    if floors is None:
        return coords_std.copy()
    floors = np.asarray(floors, dtype=np.float64)
    return np.column_stack([coords_std, floor_scale * floors])


def feature_keys(features: np.ndarray) -> np.ndarray:
    """Stable 64-bit content key per row; drives member-record selection.

    Keys depend only on the row's float64 bytes, so a record selects the same
    neighbors whether it is submitted alone or inside a batch.
    """
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    keys = np.empty(len(features), dtype=np.uint64)
    for i, row in enumerate(features):
        digest = hashlib.blake2b(row.tobytes(), digest_size=8).digest()
        keys[i] = np.frombuffer(digest, dtype=np.uint64)[0]
    return keys


def nearest_points(query_features, query_spids, points: SamplingPointSet, k: int):
    """Top-k sampling points per query under the exclusion rule.

    Finds the k+1 nearest points by Euclidean distance (ties broken by lower
    spid), removes the query's own point if it was retrieved, and keeps the
    first k of the remainder. Returns point ROW indices, shape [M, k].
    """
    points_f = points.features.astype(np.float64)
    queries = np.asarray(query_features, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != points_f.shape[1]:
        raise GraphError(
            f"query feature width {queries.shape[-1]} does not match "
            f"point feature width {points_f.shape[1]}"
        )
    s = len(points_f)
    if s < k + 1:
        raise GraphError(
            f"need at least k+1={k + 1} sampling points for k={k}, have {s}"
        )
    query_spids = np.asarray(query_spids, dtype=np.int64)
    out = np.empty((len(queries), k), dtype=np.int64)
    p_sq = (points_f * points_f).sum(axis=1)
    for start in range(0, len(queries), KNN_CHUNK):
        block = queries[start : start + KNN_CHUNK]
        q_sq = (block * block).sum(axis=1)
        d2 = q_sq[:, None] + p_sq[None, :] - 2.0 * (block @ points_f.T)
        for i, row in enumerate(d2):
            qi = start + i
            kth_val = np.partition(row, k)[k]
            cand = np.flatnonzero(row <= kth_val)
            cand = cand[np.argsort(row[cand], kind="stable")][: k + 1]
            if query_spids[qi] >= 0:
                cand = cand[points.spids[cand] != query_spids[qi]]
            out[qi] = cand[:k]
    return out


def select_member_records(
    points: SamplingPointSet, chosen_rows, query_keys, n_records: int, seed: int
):
    """Uniformly pick up to N member records of each chosen point per query.

    Selection is seeded by (run seed, point spid, query content key) so it is
    reproducible and independent of batch composition. Returns one sorted
    array of distinct record indices per query.
    """
    chosen_rows = np.asarray(chosen_rows)
    query_keys = np.asarray(query_keys, dtype=np.uint64)
    neighbor_lists = []
    for qi in range(len(chosen_rows)):
        picked = []
        for row in chosen_rows[qi]:
            members = points.member_records(int(row))
            rng = np.random.default_rng(
                [seed, RECORD_PICK_STREAM, int(points.spids[row]), int(query_keys[qi])]
            )
            take = min(n_records, len(members))
            picked.append(rng.choice(members, size=take, replace=False))
        neighbor_lists.append(np.unique(np.concatenate(picked)))
    return neighbor_lists


def knn_neighbors(
    query_features,
    query_spids,
    points: SamplingPointSet,
    cfg: KnnConfig,
    seed: int,
):
    """Full query pipeline: point search + exclusion + member selection."""
    rows = nearest_points(query_features, query_spids, points, cfg.k)
    keys = feature_keys(query_features)
    return select_member_records(points, rows, keys, cfg.n_records, seed)


ROLES = ("train", "validation", "online")


@dataclasses.dataclass
class FingerGraph:
    """One edge type over train (+ optional target) records.

    Node order: train records first, then target records. Edges are stored
    canonically (u < v, lexicographically sorted, unique); both directions
    are implied and materialized by ``neighbor_csr``. ``selection_counts``
    records how many neighbors each node chose as a query (bounded by K*N),
    which is distinct from its final degree.
    """

    role: str
    edge_space: str  # "rssi" | "pos"
    features: np.ndarray  # [V, A] float32 node features
    spids: np.ndarray  # [V] int64, -1 if unknown
    train_mask: np.ndarray  # [V] bool
    target_mask: np.ndarray  # [V] bool
    edges: np.ndarray  # [E, 2] uint32, canonical
    selection_counts: np.ndarray  # [V] int32
    k: int
    n_records: int

    @property
    def n_nodes(self) -> int:
        return len(self.features)

    def neighbor_csr(self):
        """CSR neighbor lists for aggregation (no self loops).

        Train role: every edge contributes both directions. Other roles:
        target rows aggregate their training neighbors, but no row ever
        aggregates a target row, so unseen nodes attach to the training
        graph without altering it. A target's output therefore cannot
        depend on which other targets were submitted alongside it.
        """
        v = self.n_nodes
        if len(self.edges) == 0:
            return np.zeros(v + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]]).astype(np.int64)
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]]).astype(np.int64)
        if self.role != "train":
            keep = ~self.target_mask[dst]
            src, dst = src[keep], dst[keep]
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(v + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, dst

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        if len(self.edges):
            np.add.at(deg, self.edges[:, 0].astype(np.int64), 1)
            np.add.at(deg, self.edges[:, 1].astype(np.int64), 1)
        return deg

    def validate(self):
        """Raise GraphError if any structural invariant is violated."""
        v = self.n_nodes
        if self.role not in ROLES:
            raise GraphError(f"unknown graph role {self.role!r}")
        for name in ("spids", "train_mask", "target_mask", "selection_counts"):
            if len(getattr(self, name)) != v:
                raise GraphError(f"graph column {name!r} length mismatch")
        if self.role == "train":
            if not (self.train_mask.all() and self.target_mask.all()):
                raise GraphError("train graph must mark every node train and target")
        else:
            if (self.train_mask & self.target_mask).any():
                raise GraphError("masks overlap: a node is both train and target")
            if not (self.train_mask | self.target_mask).all():
                raise GraphError("masks must cover every node")
        edges = self.edges.astype(np.int64)
        if len(edges):
            if edges.min() < 0 or edges.max() >= v:
                raise GraphError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise GraphError("edges must be canonical (u < v)")
            if len(np.unique(edges, axis=0)) != len(edges):
                raise GraphError("duplicate edges")
            su, sv = self.spids[edges[:, 0]], self.spids[edges[:, 1]]
            if np.any((su >= 0) & (su == sv)):
                raise GraphError("edge joins two records of the same sampling point")
            both_target = ~self.train_mask[edges[:, 0]] & ~self.train_mask[edges[:, 1]]
            if self.role != "train" and both_target.any():
                raise GraphError(f"{self.role} graph has target-target edges")
        bound = self.k * self.n_records
        if np.any(self.selection_counts > bound):
            raise GraphError(f"a query selected more than K*N={bound} neighbors")
        if self.role != "train":
            deg = self.degrees()
            if np.any(deg[self.target_mask] > bound):
                raise GraphError("target node degree exceeds K*N")


def _canonical_edges(pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.uint32)
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    canon = np.unique(np.column_stack([lo, hi]), axis=0)
    return canon.astype(np.uint32)


def _edges_from_neighbors(node_ids, neighbor_lists):
    pairs = []
    for node, neigh in zip(node_ids, neighbor_lists):
        if len(neigh):
            pairs.append(np.column_stack([np.full(len(neigh), node), neigh]))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(pairs).astype(np.int64)


def build_graph(
    role: str,
    node_features: np.ndarray,
    spids: np.ndarray,
    train_count: int,
    train_queries: np.ndarray,
    target_queries,
    points: SamplingPointSet,
    cfg: KnnConfig,
    seed: int,
    edge_space: str = "rssi",
    train_pairs=None,
) -> FingerGraph:
    """Construct one edge type for the given role.

    ``node_features`` stacks train-record features then target features (the
    values the GNN consumes, always preprocessed RSSI). ``train_queries`` /
    ``target_queries`` are the same records in the KNN feature space, which
    may differ (encoder outputs, predicted positions). ``points`` must be
    built from the train records so member indices are train node ids.

    For non-train roles the train-train edge set is included (recomputed from
    ``train_queries`` unless ``train_pairs`` is supplied), and target nodes
    additionally link to their own selected neighbors. Target-target edges
    cannot arise because only training records are selectable.
    """
    if role not in ROLES:
        raise GraphError(f"unknown graph role {role!r}")
    problems = cfg.validate()
    if problems:
        raise GraphError("; ".join(problems))
    v = len(node_features)
    spids = np.asarray(spids, dtype=np.int64)
    selection_counts = np.zeros(v, dtype=np.int32)

    if train_pairs is None:
        train_lists = knn_neighbors(
            train_queries, spids[:train_count], points, cfg, seed
        )
        for i, neigh in enumerate(train_lists):
            selection_counts[i] = len(neigh)
        train_pairs = _edges_from_neighbors(np.arange(train_count), train_lists)
    else:
        train_pairs = np.asarray(train_pairs, dtype=np.int64)
        if role == "train":
            raise GraphError("train role does not accept precomputed train edges")

    if role == "train":
        if v != train_count:
            raise GraphError("train graph must contain exactly the train records")
        pairs = train_pairs
        train_mask = np.ones(v, dtype=bool)
        target_mask = np.ones(v, dtype=bool)
    else:
        if target_queries is None:
            raise GraphError(f"{role} graph needs target queries")
        m = len(target_queries)
        if v != train_count + m:
            raise GraphError("node features must stack train then target records")
        target_ids = train_count + np.arange(m)
        target_lists = knn_neighbors(
            target_queries, spids[train_count:], points, cfg, seed
        )
        for i, neigh in enumerate(target_lists):
            selection_counts[train_count + i] = len(neigh)
        target_pairs = _edges_from_neighbors(target_ids, target_lists)
        pairs = np.concatenate([train_pairs, target_pairs])
        train_mask = np.zeros(v, dtype=bool)
        train_mask[:train_count] = True
        target_mask = ~train_mask

    graph = FingerGraph(
        role=role,
        edge_space=edge_space,
        features=np.ascontiguousarray(node_features, dtype=np.float32),
        spids=spids,
        train_mask=train_mask,
        target_mask=target_mask,
        edges=_canonical_edges(pairs),
        selection_counts=selection_counts,
        k=cfg.k,
        n_records=cfg.n_records,
    )
    graph.validate()
    return graph


POS_TASKS = ("coordinate", "floor")


def build_pos_graph(
    role: str,
    node_features: np.ndarray,
    spids: np.ndarray,
    train_count: int,
    train_fset,
    train_coords_std: np.ndarray,
    target_coords_std,
    target_floors,
    task: str,
    cfg: KnnConfig,
    seed: int,
    floor_scale: float = 2.0,
    train_pairs=None,
) -> FingerGraph:
    """Position-space edge type built from labels, never from target truth.

    Train-side positions are true labels (standardized coordinates, plus
    floors when ``task`` is "floor", scaled by ``floor_scale``). Target-side
    positions must be predictions; a missing or non-finite prediction is an
    error rather than a silent fallback to true labels.
    """
    if task not in POS_TASKS:
        raise ValueError(f"unknown position-graph task {task!r}")
    train_coords_std = np.asarray(train_coords_std, dtype=np.float64)
    if len(train_coords_std) != len(train_fset):
        raise GraphError("train coordinates do not match train record count")
    with_floors = task == "floor"
    train_space = position_space(
        train_coords_std, train_fset.floors if with_floors else None, floor_scale
    )
    points = points_from_records(train_fset, feature_matrix=train_space)

    if role == "train":
        target_space = None
    else:
        n_targets = len(node_features) - train_count
        if target_coords_std is None:
            raise GraphError(f"{role} position graph needs predicted coordinates")
        target_coords_std = np.asarray(target_coords_std, dtype=np.float64)
        if target_coords_std.shape != (n_targets, 2):
            raise GraphError(
                f"predicted coordinates shape {target_coords_std.shape} does not "
                f"cover the {n_targets} target nodes"
            )
        if not np.isfinite(target_coords_std).all():
            raise GraphError("missing (non-finite) coordinate prediction for a target node")
        floors = None
        if with_floors:
            if target_floors is None:
                raise GraphError(f"{role} floor-task position graph needs predicted floors")
            floors = np.asarray(target_floors, dtype=np.int64)
            if floors.shape != (n_targets,):
                raise GraphError("predicted floors do not cover the target nodes")
        target_space = position_space(target_coords_std, floors, floor_scale)

    return build_graph(
        role,
        node_features,
        spids,
        train_count,
        train_space,
        target_space,
        points,
        cfg,
        seed,
        edge_space="pos",
        train_pairs=train_pairs,
    )


@dataclasses.dataclass
class HeteroGraph:
    """Two edge types (RSSI-space and position-space) over one node set."""

    role: str
    features: np.ndarray
    spids: np.ndarray
    train_mask: np.ndarray
    target_mask: np.ndarray
    rssi_edges: np.ndarray
    pos_edges: np.ndarray
    k: int
    n_records: int

    @property
    def n_nodes(self) -> int:
        return len(self.features)

    def edge_view(self, space: str) -> FingerGraph:
        edges = {"rssi": self.rssi_edges, "pos": self.pos_edges}[space]
        return FingerGraph(
            role=self.role,
            edge_space=space,
            features=self.features,
            spids=self.spids,
            train_mask=self.train_mask,
            target_mask=self.target_mask,
            edges=edges,
            selection_counts=np.zeros(self.n_nodes, dtype=np.int32),
            k=self.k,
            n_records=self.n_records,
        )


def assemble_hetero_graph(rssi_graph: FingerGraph, pos_graph: FingerGraph) -> HeteroGraph:
    """Merge the two single-space graphs, checking node alignment exactly."""
    a, b = rssi_graph, pos_graph
    if a.edge_space != "rssi" or b.edge_space != "pos":
        raise GraphError("expected an rssi-space graph and a pos-space graph")
    if a.role != b.role:
        raise GraphError(f"role mismatch: {a.role!r} vs {b.role!r}")
    if a.n_nodes != b.n_nodes:
        raise GraphError("node count mismatch between edge types")
    if a.features.dtype != b.features.dtype or not np.array_equal(a.features, b.features):
        raise GraphError("node features differ between edge types")
    if not (
        np.array_equal(a.spids, b.spids)
        and np.array_equal(a.train_mask, b.train_mask)
        and np.array_equal(a.target_mask, b.target_mask)
    ):
        raise GraphError("node annotations differ between edge types")
    if (a.k, a.n_records) != (b.k, b.n_records):
        raise GraphError("KNN configuration differs between edge types")
    return HeteroGraph(
        role=a.role,
        features=a.features,
        spids=a.spids,
        train_mask=a.train_mask,
        target_mask=a.target_mask,
        rssi_edges=a.edges,
        pos_edges=b.edges,
        k=a.k,
        n_records=a.n_records,
    )


def serialize_graph(path, graph) -> None:
    """Write a FingerGraph or HeteroGraph container (uint32 LE edge pairs)."""
    if isinstance(graph, HeteroGraph):
        meta = {
            "graph_type": "hetero",
            "role": graph.role,
            "k": graph.k,
            "n_records": graph.n_records,
        }
        blobs = {
            "features": graph.features.astype(np.float32),
            "spids": graph.spids.astype(np.int64),
            "train_mask": graph.train_mask,
            "target_mask": graph.target_mask,
            "rssi_edges": graph.rssi_edges.astype(np.uint32),
            "pos_edges": graph.pos_edges.astype(np.uint32),
        }
    else:
        meta = {
            "graph_type": "single",
            "role": graph.role,
            "edge_space": graph.edge_space,
            "k": graph.k,
            "n_records": graph.n_records,
        }
        blobs = {
            "features": graph.features.astype(np.float32),
            "spids": graph.spids.astype(np.int64),
            "train_mask": graph.train_mask,
            "target_mask": graph.target_mask,
            "edges": graph.edges.astype(np.uint32),
            "selection_counts": graph.selection_counts.astype(np.int32),
        }
    write_container(path, "graph", meta, blobs)


def deserialize_graph(path):
    meta, blobs = read_container(path, expect_kind="graph")
    if meta["graph_type"] == "hetero":
        return HeteroGraph(
            role=meta["role"],
            features=blobs["features"],
            spids=blobs["spids"],
            train_mask=blobs["train_mask"],
            target_mask=blobs["target_mask"],
            rssi_edges=blobs["rssi_edges"],
            pos_edges=blobs["pos_edges"],
            k=meta["k"],
            n_records=meta["n_records"],
        )
    return FingerGraph(
        role=meta["role"],
        edge_space=meta["edge_space"],
        features=blobs["features"],
        spids=blobs["spids"],
        train_mask=blobs["train_mask"],
        target_mask=blobs["target_mask"],
        edges=blobs["edges"],
        selection_counts=blobs["selection_counts"],
        k=meta["k"],
        n_records=meta["n_records"],
    )
