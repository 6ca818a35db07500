"""Training loops for the graph localizers.

Training runs on mini-batches of target nodes. Each epoch draws a capped
neighbor table (at most ``neighbor_cap`` sampled neighbors per node) and each
batch expands its seed nodes by as many hops as the model has graph layers,
so the forward pass over the expanded node set reproduces the sampled-graph
computation exactly on the seed rows. Validation and inference never sample:
they run the full neighbor structure with dropout off and are deterministic.

Early stopping keeps the parameters from the best validation epoch (strict
improvement; ties keep the earlier epoch) and restores them at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError
from .evaluation import label_accuracy, location_errors, predicted_classes
from .numeric import Adam, NeighborMean, cross_entropy, l1_penalty, mse_loss

TRAIN_STREAM = 0x71A1


@dataclass
class TrainSettings:
    """Optimization knobs shared by the trainers."""

    lr: float = 0.0005
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    neighbor_cap: int = 4
    building_beta: float = 0.1
    l1_lambda: float = 1.0e-5
    sfe_epochs: int = 60
    adapter_lr: float = 0.01
    adapter_epochs: int = 150


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_metric: float | None = None
    best_epoch: int = -1
    epochs_run: int = 0


@dataclass
class ClassifierResult:
    phase1: TrainResult
    phase2: TrainResult | None


def _epoch_rng(seed, tag, epoch):
    return np.random.default_rng([int(seed), TRAIN_STREAM, int(tag), int(epoch)])


def _model_dtype(model):
    return model.params()[0].value.dtype


def _zero_grads(params):
    for p in params:
        p.zero_grad()


def snapshot_params(model) -> dict:
    return {p.name: p.value.copy() for p in model.params()}


def restore_params(model, snapshot: dict) -> None:
    for p in model.params():
        p.value[...] = snapshot[p.name]


class _BestTracker:
    """Tracks the strictly-best validation metric and its parameter snapshot."""

    def __init__(self, mode: str, patience: int):
        if mode not in ("min", "max"):
            raise ValueError(f"unknown tracker mode {mode!r}")
        self.mode = mode
        self.patience = patience
        self.best_metric = None
        self.best_epoch = -1
        self._snapshot = None
        self._stale = 0
        self._epoch = -1

    def update(self, metric: float, model) -> bool:
        self._epoch += 1
        if self.best_metric is None:
            better = True
        elif self.mode == "min":
            better = metric < self.best_metric
        else:
            better = metric > self.best_metric
        if better:
            self.best_metric = float(metric)
            self.best_epoch = self._epoch
            self._snapshot = snapshot_params(model)
            self._stale = 0
        else:
            self._stale += 1
        return better

    def should_stop(self) -> bool:
        return self._stale >= self.patience

    def restore(self, model) -> None:
        if self._snapshot is not None:
            restore_params(model, self._snapshot)


# ---------------------------------------------------------------------------
# mini-batch neighborhood machinery


def sampled_neighbor_table(indptr, indices, cap: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-epoch neighbor table: nodes keep at most ``cap`` sampled neighbors."""
    if cap <= 0:
        raise ValueError(f"neighbor cap must be positive, got {cap}")
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    deg = np.diff(indptr)
    keep = np.minimum(deg, cap)
    out_indptr = np.zeros(len(indptr), dtype=np.int64)
    np.cumsum(keep, out=out_indptr[1:])
    out_indices = np.empty(int(keep.sum()), dtype=np.int64)
    for v in range(len(deg)):
        s, e = indptr[v], indptr[v + 1]
        o = out_indptr[v]
        if e - s <= cap:
            out_indices[o : o + (e - s)] = indices[s:e]
        else:
            out_indices[o : o + cap] = rng.choice(indices[s:e], size=cap, replace=False)
    return out_indptr, out_indices


def _gather_neighbors(nodes, indptr, indices) -> np.ndarray:
    counts = indptr[nodes + 1] - indptr[nodes]
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=indices.dtype)
    starts = indptr[nodes]
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    flat = np.arange(total, dtype=np.int64) - offsets + np.repeat(starts, counts)
    return indices[flat]


def closure_nodes(seeds, indptr, indices, depth: int) -> np.ndarray:
    """Sorted node set reachable from the seeds within ``depth`` hops."""
    nodes = np.unique(np.asarray(seeds, dtype=np.int64))
    for _ in range(depth):
        nodes = np.union1d(nodes, _gather_neighbors(nodes, indptr, indices))
    return nodes


def local_operator(node_set, indptr, indices, dtype=np.float32) -> NeighborMean:
    """Neighborhood-mean operator restricted to ``node_set`` (sorted ids).

    Neighbors outside the set are dropped; rows whose full neighbor list sits
    inside the set (guaranteed by the closure for every row a batch actually
    consumes) match the unrestricted operator exactly.
    """
    node_set = np.asarray(node_set, dtype=np.int64)
    lookup = np.full(len(indptr) - 1, -1, dtype=np.int64)
    lookup[node_set] = np.arange(len(node_set))
    counts = indptr[node_set + 1] - indptr[node_set]
    mapped = lookup[_gather_neighbors(node_set, indptr, indices)]
    rows = np.repeat(np.arange(len(node_set), dtype=np.int64), counts)
    valid = mapped >= 0
    local_counts = np.bincount(rows[valid], minlength=len(node_set))
    local_indptr = np.zeros(len(node_set) + 1, dtype=np.int64)
    np.cumsum(local_counts, out=local_indptr[1:])
    return NeighborMean(local_indptr, mapped[valid], dtype=dtype)


def exact_operator(graph, dtype=np.float32) -> NeighborMean:
    """Full-graph operator for deterministic validation and inference."""
    indptr, indices = graph.neighbor_csr()
    return NeighborMean(indptr, indices, dtype=dtype)


def iter_seed_batches(targets, batch_size: int, rng):
    """Shuffled target-node batches; batch_size <= 0 means one full batch."""
    targets = np.asarray(targets, dtype=np.int64)
    if len(targets) == 0:
        raise ValueError("no target nodes to train on")
    perm = rng.permutation(targets)
    if batch_size <= 0 or batch_size >= len(perm):
        yield perm
        return
    for start in range(0, len(perm), batch_size):
        yield perm[start : start + batch_size]


def _check_finite(loss, what: str) -> None:
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"{what} loss is not finite: {loss}")


# ---------------------------------------------------------------------------
# exact inference helpers


def coarse_outputs(model, graph):
    """Deterministic full-graph outputs of a coarse localizer."""
    dtype = _model_dtype(model)
    agg = exact_operator(graph, dtype)
    return model.forward(graph.features.astype(dtype, copy=False), agg)


def hetero_outputs(model, hgraph, adapter=None):
    """Deterministic full-graph outputs of a two-edge-type localizer."""
    dtype = _model_dtype(model)
    agg_pos = exact_operator(hgraph.edge_view("pos"), dtype)
    agg_rssi = exact_operator(hgraph.edge_view("rssi"), dtype)
    x = hgraph.features.astype(dtype, copy=False)
    if adapter is not None:
        x = adapter.forward(x, hgraph.target_mask)
    return model.forward(x, agg_pos, agg_rssi)


def hetero_depths(model) -> tuple[int, int]:
    """Graph hops consumed per edge view (position view, signal view)."""
    shared = 1 if model.shared is not None else 0
    return shared + len(model.p1), shared + len(model.p2)


# ---------------------------------------------------------------------------
# coarse localizer training

COARSE_DEPTH = 2  # two stacked graph layers


def train_coarse_regressor(
    model, train_graph, y_std, val_graph, val_xy, scaler, settings: TrainSettings, seed: int
) -> TrainResult:
    """Coordinate regression on standardized targets, validated in map units.

    ``y_std`` holds standardized coordinates for every train-graph node;
    ``val_xy`` holds original-unit coordinates for the validation targets in
    target-row order. The best validation mean error is restored at the end.
    """
    y_std = np.asarray(y_std, dtype=np.float64)
    dtype = _model_dtype(model)
    features = train_graph.features.astype(dtype, copy=False)
    base_indptr, base_indices = train_graph.neighbor_csr()
    targets = np.nonzero(train_graph.target_mask)[0]

    val_x = val_graph.features.astype(dtype, copy=False)
    val_agg = exact_operator(val_graph, dtype)
    val_targets = np.nonzero(val_graph.target_mask)[0]

    opt = Adam(model.params(), lr=settings.lr)
    tracker = _BestTracker("min", settings.patience)
    result = TrainResult()

    for epoch in range(settings.max_epochs):
        rng = _epoch_rng(seed, 0, epoch)
        indptr, indices = sampled_neighbor_table(
            base_indptr, base_indices, settings.neighbor_cap, rng
        )
        losses = []
        for seeds in iter_seed_batches(targets, settings.batch_size, rng):
            nodes = closure_nodes(seeds, indptr, indices, COARSE_DEPTH)
            agg = local_operator(nodes, indptr, indices, dtype)
            local = np.searchsorted(nodes, seeds)
            out = model.forward(features[nodes], agg, train_rng=rng)
            loss, dpred = mse_loss(out[local], y_std[seeds])
            _check_finite(loss, "regression")
            losses.append(loss)
            dout = np.zeros_like(out)
            dout[local] = dpred
            _zero_grads(model.params())
            model.backward(dout)
            opt.step()

        preds = model.forward(val_x, val_agg)
        val_mle = float(location_errors(scaler.inverse(preds[val_targets]), val_xy).mean())
        improved = tracker.update(val_mle, model)
        result.history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_mle": val_mle,
                "improved": improved,
            }
        )
        if tracker.should_stop():
            break

    tracker.restore(model)
    result.best_metric = tracker.best_metric
    result.best_epoch = tracker.best_epoch
    result.epochs_run = len(result.history)
    return result


def train_coarse_classifier(
    model,
    train_graph,
    floors,
    buildings,
    val_graph,
    val_floors,
    val_buildings,
    settings: TrainSettings,
    seed: int,
) -> ClassifierResult:
    """Two-phase floor/building training.

    Phase 1 optimizes everything on a mixed loss, (1 - beta) * floor plus
    beta * building, monitored on validation floor accuracy. Phase 2 restores
    the best phase-1 parameters, then trains only the building head on the
    building loss; every other parameter stays bit-identical.

    Without a building head (``buildings`` is None) phase 1 runs on the floor
    loss alone and phase 2 is skipped.
    """
    has_buildings = buildings is not None
    if has_buildings != (model.building_head is not None):
        raise ValueError("building labels and model building head must match")
    floors = np.asarray(floors, dtype=np.int64)
    if has_buildings:
        buildings = np.asarray(buildings, dtype=np.int64)
        val_buildings = np.asarray(val_buildings, dtype=np.int64)
    val_floors = np.asarray(val_floors, dtype=np.int64)
    beta = settings.building_beta if has_buildings else 0.0

    dtype = _model_dtype(model)
    features = train_graph.features.astype(dtype, copy=False)
    base_indptr, base_indices = train_graph.neighbor_csr()
    targets = np.nonzero(train_graph.target_mask)[0]

    val_x = val_graph.features.astype(dtype, copy=False)
    val_agg = exact_operator(val_graph, dtype)
    val_targets = np.nonzero(val_graph.target_mask)[0]

    def run_phase(tag, param_subset, monitor, batch_loss):
        opt = Adam(param_subset, lr=settings.lr)
        tracker = _BestTracker("max", settings.patience)
        result = TrainResult()
        for epoch in range(settings.max_epochs):
            rng = _epoch_rng(seed, tag, epoch)
            indptr, indices = sampled_neighbor_table(
                base_indptr, base_indices, settings.neighbor_cap, rng
            )
            losses = []
            for seeds in iter_seed_batches(targets, settings.batch_size, rng):
                nodes = closure_nodes(seeds, indptr, indices, COARSE_DEPTH)
                agg = local_operator(nodes, indptr, indices, dtype)
                local = np.searchsorted(nodes, seeds)
                floor_logits, building_logits = model.forward(
                    features[nodes], agg, train_rng=rng
                )
                loss, dfl, dbl = batch_loss(floor_logits, building_logits, seeds, local)
                _check_finite(loss, "classification")
                losses.append(loss)
                dout = np.zeros_like(floor_logits)
                dout[local] = dfl
                if dbl is None:
                    dbuilding = None
                else:
                    dbuilding = np.zeros_like(building_logits)
                    dbuilding[local] = dbl
                _zero_grads(model.params())
                model.backward(dout, dbuilding)
                opt.step()

            metric = monitor()
            improved = tracker.update(metric, model)
            result.history.append(
                {
                    "epoch": epoch,
                    "train_loss": float(np.mean(losses)),
                    "val_accuracy": metric,
                    "improved": improved,
                }
            )
            if tracker.should_stop():
                break
        tracker.restore(model)
        result.best_metric = tracker.best_metric
        result.best_epoch = tracker.best_epoch
        result.epochs_run = len(result.history)
        return result

    def val_logits():
        return model.forward(val_x, val_agg)

    def phase1_loss(floor_logits, building_logits, seeds, local):
        loss_f, dfl = cross_entropy(floor_logits[local], floors[seeds])
        if not has_buildings:
            return loss_f, dfl, None
        loss_b, dbl = cross_entropy(building_logits[local], buildings[seeds])
        return (1.0 - beta) * loss_f + beta * loss_b, (1.0 - beta) * dfl, beta * dbl

    def phase1_monitor():
        fl, _ = val_logits()
        return label_accuracy(predicted_classes(fl[val_targets]), val_floors)

    phase1 = run_phase(1, model.params(), phase1_monitor, phase1_loss)

    if not has_buildings:
        return ClassifierResult(phase1=phase1, phase2=None)

    frozen_before = {p.name: p.value.copy() for p in model.frozen_in_building_phase()}

    def phase2_loss(floor_logits, building_logits, seeds, local):
        loss_b, dbl = cross_entropy(building_logits[local], buildings[seeds])
        return loss_b, np.zeros_like(floor_logits[local]), dbl

    def phase2_monitor():
        _, bl = val_logits()
        return label_accuracy(predicted_classes(bl[val_targets]), val_buildings)

    phase2 = run_phase(2, model.building_params(), phase2_monitor, phase2_loss)

    for p in model.frozen_in_building_phase():
        if p.value.tobytes() != frozen_before[p.name].tobytes():
            raise RuntimeError(f"building phase modified frozen parameter {p.name}")
    return ClassifierResult(phase1=phase1, phase2=phase2)


# ---------------------------------------------------------------------------
# feature encoder training


def train_sfe(model, features, coords_std, floors, settings: TrainSettings, seed: int) -> TrainResult:
    """Fits the feature encoder on coordinate + floor losses with L1 on the
    encoder weights. Runs a fixed number of epochs (no early stopping)."""
    if (floors is None) != (model.floor_out is None):
        raise ValueError("floor labels and model floor output must match")
    dtype = _model_dtype(model)
    x = np.asarray(features).astype(dtype, copy=False)
    coords_std = np.asarray(coords_std, dtype=np.float64)
    if floors is not None:
        floors = np.asarray(floors, dtype=np.int64)
    rows = np.arange(len(x), dtype=np.int64)

    opt = Adam(model.params(), lr=settings.lr)
    result = TrainResult()
    for epoch in range(settings.sfe_epochs):
        rng = _epoch_rng(seed, 3, epoch)
        losses = []
        for batch in iter_seed_batches(rows, settings.batch_size, rng):
            coords, floor_logits = model.forward(x[batch], train_rng=rng)
            loss, dcoords = mse_loss(coords, coords_std[batch])
            dfloors = None
            if floors is not None:
                loss_f, dfloors = cross_entropy(floor_logits, floors[batch])
                loss = loss + loss_f
            _zero_grads(model.params())
            loss += l1_penalty(model.encoder_weights(), settings.l1_lambda)
            _check_finite(loss, "encoder")
            losses.append(loss)
            model.backward(dcoords, dfloors)
            opt.step()
        result.history.append({"epoch": epoch, "train_loss": float(np.mean(losses))})

    result.epochs_run = len(result.history)
    if result.history:
        result.best_metric = result.history[-1]["train_loss"]
        result.best_epoch = result.epochs_run - 1
    return result


# ---------------------------------------------------------------------------
# two-edge-type localizer training


def train_hgnn(
    model,
    train_hetero,
    y,
    task: str,
    val_hetero,
    val_truth,
    scaler,
    settings: TrainSettings,
    seed: int,
) -> TrainResult:
    """Trains a two-edge-type localizer on coordinates or floor labels.

    ``task`` is "coords" (y = standardized coordinates per train node,
    val_truth = original-unit coordinates per validation target, scaler
    required) or "floor" (y = class labels, val_truth = class labels).
    """
    if task not in ("coords", "floor"):
        raise ValueError(f"unknown task {task!r}")
    dtype = _model_dtype(model)
    features = train_hetero.features.astype(dtype, copy=False)
    pos_indptr, pos_indices = train_hetero.edge_view("pos").neighbor_csr()
    rssi_indptr, rssi_indices = train_hetero.edge_view("rssi").neighbor_csr()
    depth_pos, depth_rssi = hetero_depths(model)
    targets = np.nonzero(train_hetero.target_mask)[0]

    if task == "coords":
        y = np.asarray(y, dtype=np.float64)
        val_truth = np.asarray(val_truth, dtype=np.float64)
    else:
        y = np.asarray(y, dtype=np.int64)
        val_truth = np.asarray(val_truth, dtype=np.int64)

    val_x = val_hetero.features.astype(dtype, copy=False)
    val_agg_pos = exact_operator(val_hetero.edge_view("pos"), dtype)
    val_agg_rssi = exact_operator(val_hetero.edge_view("rssi"), dtype)
    val_targets = np.nonzero(val_hetero.target_mask)[0]

    opt = Adam(model.params(), lr=settings.lr)
    tracker = _BestTracker("min" if task == "coords" else "max", settings.patience)
    result = TrainResult()

    for epoch in range(settings.max_epochs):
        rng = _epoch_rng(seed, 4, epoch)
        p_indptr, p_indices = sampled_neighbor_table(
            pos_indptr, pos_indices, settings.neighbor_cap, rng
        )
        r_indptr, r_indices = sampled_neighbor_table(
            rssi_indptr, rssi_indices, settings.neighbor_cap, rng
        )
        losses = []
        for seeds in iter_seed_batches(targets, settings.batch_size, rng):
            nodes = np.union1d(
                closure_nodes(seeds, p_indptr, p_indices, depth_pos),
                closure_nodes(seeds, r_indptr, r_indices, depth_rssi),
            )
            agg_pos = local_operator(nodes, p_indptr, p_indices, dtype)
            agg_rssi = local_operator(nodes, r_indptr, r_indices, dtype)
            local = np.searchsorted(nodes, seeds)
            out = model.forward(features[nodes], agg_pos, agg_rssi, train_rng=rng)
            if task == "coords":
                loss, drows = mse_loss(out[local], y[seeds])
            else:
                loss, drows = cross_entropy(out[local], y[seeds])
            _check_finite(loss, "localizer")
            losses.append(loss)
            dout = np.zeros_like(out)
            dout[local] = drows
            _zero_grads(model.params())
            model.backward(dout)
            opt.step()

        preds = model.forward(val_x, val_agg_pos, val_agg_rssi)
        if task == "coords":
            metric = float(
                location_errors(scaler.inverse(preds[val_targets]), val_truth).mean()
            )
        else:
            metric = label_accuracy(predicted_classes(preds[val_targets]), val_truth)
        improved = tracker.update(metric, model)
        result.history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_metric": metric,
                "improved": improved,
            }
        )
        if tracker.should_stop():
            break

    tracker.restore(model)
    result.best_metric = tracker.best_metric
    result.best_epoch = tracker.best_epoch
    result.epochs_run = len(result.history)
    return result


# ---------------------------------------------------------------------------
# online input adaptation


def train_adapter(
    adapter, model, hgraph, labeled_rows, y_std, settings: TrainSettings, seed: int
) -> TrainResult:
    """Fits the input adapter against a frozen coordinate localizer.

    Only rows under ``hgraph.target_mask`` are rescaled; the loss uses the
    labeled subset (node ids ``labeled_rows`` with standardized coordinates
    ``y_std``). Full-batch, deterministic forward (no dropout, no sampling).
    The best labeled-loss parameters are restored, so the result is never
    worse than the identity on the labeled rows. Localizer parameters are
    read-only here and stay bit-identical.
    """
    labeled_rows = np.asarray(labeled_rows, dtype=np.int64)
    if len(labeled_rows) == 0:
        raise ValueError("adapter training needs at least one labeled row")
    y_std = np.asarray(y_std, dtype=np.float64)
    dtype = _model_dtype(model)
    x = hgraph.features.astype(dtype, copy=False)
    adapt_mask = hgraph.target_mask
    agg_pos = exact_operator(hgraph.edge_view("pos"), dtype)
    agg_rssi = exact_operator(hgraph.edge_view("rssi"), dtype)

    opt = Adam(adapter.params(), lr=settings.adapter_lr)
    tracker = _BestTracker("min", patience=settings.adapter_epochs + 1)
    result = TrainResult()

    def labeled_loss_and_grad():
        feats = adapter.forward(x, adapt_mask)
        out = model.forward(feats, agg_pos, agg_rssi)
        loss, drows = mse_loss(out[labeled_rows], y_std)
        _check_finite(loss, "adapter")
        dout = np.zeros_like(out)
        dout[labeled_rows] = drows
        return loss, dout

    for step in range(settings.adapter_epochs):
        loss, dout = labeled_loss_and_grad()
        tracker.update(loss, adapter)
        result.history.append({"epoch": step, "train_loss": float(loss)})
        _zero_grads(model.params())
        _zero_grads(adapter.params())
        dx = model.backward(dout)
        adapter.backward(dx)
        opt.step()

    final_loss, _ = labeled_loss_and_grad()
    tracker.update(final_loss, adapter)
    result.history.append({"epoch": settings.adapter_epochs, "train_loss": float(final_loss)})

    tracker.restore(adapter)
    result.best_metric = tracker.best_metric
    result.best_epoch = tracker.best_epoch
    result.epochs_run = len(result.history)
    return result
