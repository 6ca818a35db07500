"""Localization networks built from explicit forward/backward pieces.

Four trainable models:

* CoarseLocalizer  - 2-layer mean-aggregation GNN with either a regression
  head (standardized coordinates) or a classification trunk with floor and
  building heads. Also serves as the homogeneous single-graph baseline.
* StackedFeatureEncoder - iso-dimensional ReLU stack whose outputs feed graph
  construction; trained through an auxiliary MLP with L1 on encoder weights.
* HeteroGnn        - one shared aggregation layer applied to both edge views,
  two parallel branches (position graph / RSSI graph), concatenation, a ReLU
  fusion layer, and an MLP head. Ablation modes drop stages structurally.
* OnlineAdapter    - elementwise (or full-matrix) input reweighting applied to
  target-node features only; the one piece trained at serving time.

Every model exposes ``params()`` (uniquely named), ``arch_spec()`` for
checkpointing, and caches its last forward pass for the matching backward.
Constructors take ``dtype`` so gradient checks can run in float64, and
``train_rng`` switches dropout on; ``train_rng=None`` is deterministic
inference.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .numeric import (
    Dropout,
    LeakyReLU,
    Linear,
    NeighborMean,
    Parameter,
    glorot_uniform,
)
from .serialize import read_container, write_container

INIT_STREAM = 0xC0DE


def _rng(seed):
    if isinstance(seed, (int, np.integer)):
        return np.random.default_rng([int(seed), INIT_STREAM])
    return np.random.default_rng(seed)


class SageLayer:
    """ReLU(W . mean over {v} u N(v)); no bias term.

    Aggregation happens before the linear map, so one weight matrix serves
    the whole neighborhood. The cache is returned explicitly because shared
    layers run once per edge view within a single forward pass.
    """

    def __init__(self, in_dim, out_dim, rng, name, dtype=np.float32):
        self.W = Parameter(
            f"{name}.W", glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim), dtype)
        )

    def forward(self, h, agg: NeighborMean):
        a = agg.forward(h)
        z = a @ self.W.value
        mask = z > 0
        return z * mask, (a, mask, agg)

    def backward(self, dout, cache):
        a, mask, agg = cache
        dz = dout * mask
        self.W.grad += a.T @ dz
        return agg.backward(dz @ self.W.value.T)

    def params(self):
        return [self.W]


class Mlp:
    """LeakyReLU hidden layers with dropout, linear output layer."""

    def __init__(self, in_dim, hidden, out_dim, rng, name, dropout=0.5, slope=0.01, dtype=np.float32):
        dims = [in_dim, *hidden, out_dim]
        self.linears = [
            Linear(dims[i], dims[i + 1], rng, name=f"{name}.fc{i}", dtype=dtype)
            for i in range(len(dims) - 1)
        ]
        self.acts = [LeakyReLU(slope) for _ in hidden]
        self.drops = [Dropout(dropout) for _ in hidden]

    def forward(self, x, train_rng=None):
        for lin, act, drop in zip(self.linears, self.acts, self.drops):
            x = drop.forward(act.forward(lin.forward(x)), rng=train_rng)
        return self.linears[-1].forward(x)

    def backward(self, dout):
        dx = self.linears[-1].backward(dout)
        for lin, act, drop in reversed(list(zip(self.linears, self.acts, self.drops))):
            dx = lin.backward(act.backward(drop.backward(dx)))
        return dx

    def params(self):
        out = []
        for lin in self.linears:
            out.extend(lin.params())
        return out


class CoarseLocalizer:
    """Two aggregation layers feeding one task head.

    task="regression": 256 -> (64 -> 32) -> 2 standardized coordinates.
    task="classification": shared trunk 256 -> 64, then a floor head
    64 -> 32 -> F and (when buildings exist) a building head 64 -> 32 -> B.
    """

    kind = "coarse"

    def __init__(
        self,
        in_dim,
        task,
        n_floors=None,
        n_buildings=None,
        hidden=256,
        mlp_hidden=(64, 32),
        dropout=0.5,
        slope=0.01,
        seed=0,
        dtype=np.float32,
    ):
        if task not in ("regression", "classification"):
            raise ValueError(f"unknown task {task!r}")
        if task == "classification" and not n_floors:
            raise ValueError("classification task needs n_floors")
        self.task = task
        self.in_dim = in_dim
        self.hidden = hidden
        self.mlp_hidden = tuple(mlp_hidden)
        self.n_floors = n_floors
        self.n_buildings = n_buildings
        self.dropout_rate = dropout
        self.slope = slope
        self.seed = seed
        rng = _rng(seed)
        dt = dtype
        self.sage1 = SageLayer(in_dim, hidden, rng, "gnn1", dt)
        self.sage2 = SageLayer(hidden, hidden, rng, "gnn2", dt)
        self.drop1 = Dropout(dropout)
        self.drop2 = Dropout(dropout)
        if task == "regression":
            self.head = Mlp(hidden, self.mlp_hidden, 2, rng, "reg", dropout, slope, dt)
        else:
            trunk_dim, head_hidden = self.mlp_hidden[0], self.mlp_hidden[1:]
            self.trunk = Linear(hidden, trunk_dim, rng, "trunk.fc", dt)
            self.trunk_act = LeakyReLU(slope)
            self.trunk_drop = Dropout(dropout)
            self.floor_head = Mlp(trunk_dim, head_hidden, n_floors, rng, "floor", dropout, slope, dt)
            self.building_head = (
                Mlp(trunk_dim, head_hidden, n_buildings, rng, "building", dropout, slope, dt)
                if n_buildings
                else None
            )
        self._cache = None

    def _embed(self, x, agg, train_rng):
        h1, c1 = self.sage1.forward(x, agg)
        h1 = self.drop1.forward(h1, rng=train_rng)
        h2, c2 = self.sage2.forward(h1, agg)
        h2 = self.drop2.forward(h2, rng=train_rng)
        return h2, (c1, c2)

    def forward(self, x, agg, train_rng=None):
        h, caches = self._embed(x, agg, train_rng)
        self._cache = caches
        if self.task == "regression":
            return self.head.forward(h, train_rng)
        t = self.trunk_drop.forward(
            self.trunk_act.forward(self.trunk.forward(h)), rng=train_rng
        )
        floor_logits = self.floor_head.forward(t, train_rng)
        building_logits = (
            self.building_head.forward(t, train_rng) if self.building_head else None
        )
        return floor_logits, building_logits

    def backward(self, dout, dbuilding=None):
        c1, c2 = self._cache
        if self.task == "regression":
            dh = self.head.backward(dout)
        else:
            dt = self.floor_head.backward(dout)
            if dbuilding is not None:
                if self.building_head is None:
                    raise ValueError("model has no building head")
                dt = dt + self.building_head.backward(dbuilding)
            dh = self.trunk.backward(
                self.trunk_act.backward(self.trunk_drop.backward(dt))
            )
        dh = self.drop2.backward(dh)
        dh = self.sage2.backward(dh, c2)
        dh = self.drop1.backward(dh)
        return self.sage1.backward(dh, c1)

    def gnn_params(self):
        return [*self.sage1.params(), *self.sage2.params()]

    def head_params(self):
        if self.task == "regression":
            return self.head.params()
        out = [*self.trunk.params(), *self.floor_head.params()]
        if self.building_head:
            out.extend(self.building_head.params())
        return out

    def building_params(self):
        return self.building_head.params() if self.building_head else []

    def frozen_in_building_phase(self):
        """Everything except the building head stays bit-identical in phase 2."""
        names = {p.name for p in self.building_params()}
        return [p for p in self.params() if p.name not in names]

    def params(self):
        return [*self.gnn_params(), *self.head_params()]

    def arch_spec(self):
        return {
            "in_dim": self.in_dim,
            "task": self.task,
            "n_floors": self.n_floors,
            "n_buildings": self.n_buildings,
            "hidden": self.hidden,
            "mlp_hidden": list(self.mlp_hidden),
            "dropout": self.dropout_rate,
            "slope": self.slope,
            "seed": self.seed,
        }

    @classmethod
    def from_arch(cls, arch, dtype=np.float32):
        arch = dict(arch)
        arch["mlp_hidden"] = tuple(arch["mlp_hidden"])
        return cls(dtype=dtype, **arch)


class StackedFeatureEncoder:
    """Iso-dimensional ReLU encoder plus an auxiliary localization MLP.

    ``transform`` runs the encoder alone (deterministic, non-negative
    outputs); the aux MLP exists only to give the encoder a training signal
    and predicts coordinates, plus floor logits when ``n_floors`` is set.
    """

    kind = "sfe"

    def __init__(
        self,
        ap_count,
        n_floors=None,
        n_layers=3,
        aux_hidden=(64, 32),
        dropout=0.5,
        slope=0.01,
        seed=0,
        dtype=np.float32,
    ):
        self.ap_count = ap_count
        self.n_floors = n_floors
        self.n_layers = n_layers
        self.aux_hidden = tuple(aux_hidden)
        self.dropout_rate = dropout
        self.slope = slope
        self.seed = seed
        rng = _rng(seed)
        self.enc = [
            Linear(ap_count, ap_count, rng, f"enc{i}", dtype) for i in range(n_layers)
        ]
        last_hidden = self.aux_hidden[-1]
        self.aux = Mlp(
            ap_count, self.aux_hidden[:-1], last_hidden, rng, "aux", dropout, slope, dtype
        )
        self.aux_act = LeakyReLU(slope)
        self.aux_drop = Dropout(dropout)
        self.coord_out = Linear(last_hidden, 2, rng, "coord_out", dtype)
        self.floor_out = (
            Linear(last_hidden, n_floors, rng, "floor_out", dtype) if n_floors else None
        )
        self._masks = None

    def _encode(self, x):
        masks = []
        for lin in self.enc:
            z = lin.forward(x)
            mask = z > 0
            masks.append(mask)
            x = z * mask
        return x, masks

    def transform(self, x):
        out, _ = self._encode(x)
        return out

    def forward(self, x, train_rng=None):
        h, self._masks = self._encode(x)
        t = self.aux_drop.forward(
            self.aux_act.forward(self.aux.forward(h, train_rng)), rng=train_rng
        )
        coords = self.coord_out.forward(t)
        floors = self.floor_out.forward(t) if self.floor_out else None
        return coords, floors

    def backward(self, dcoords, dfloors=None):
        dt = self.coord_out.backward(dcoords)
        if dfloors is not None:
            if self.floor_out is None:
                raise ValueError("encoder has no floor output")
            dt = dt + self.floor_out.backward(dfloors)
        dh = self.aux.backward(self.aux_act.backward(self.aux_drop.backward(dt)))
        for lin, mask in reversed(list(zip(self.enc, self._masks))):
            dh = lin.backward(dh * mask)
        return dh

    def encoder_weights(self):
        """L1 regularization applies to these (weights only, not biases)."""
        return [lin.W for lin in self.enc]

    def params(self):
        out = []
        for lin in self.enc:
            out.extend(lin.params())
        out.extend(self.aux.params())
        out.extend(self.coord_out.params())
        if self.floor_out:
            out.extend(self.floor_out.params())
        return out

    def arch_spec(self):
        return {
            "ap_count": self.ap_count,
            "n_floors": self.n_floors,
            "n_layers": self.n_layers,
            "aux_hidden": list(self.aux_hidden),
            "dropout": self.dropout_rate,
            "slope": self.slope,
            "seed": self.seed,
        }

    @classmethod
    def from_arch(cls, arch, dtype=np.float32):
        arch = dict(arch)
        arch["aux_hidden"] = tuple(arch["aux_hidden"])
        return cls(dtype=dtype, **arch)


HGNN_MODES = ("full", "shared_only", "parallel_only")


class HeteroGnn:
    """Shared layer on both edge views, two parallel branches, fuse, predict.

    Branch 1 consumes the position-space edges (one layer); branch 2 consumes
    the RSSI-space edges (two layers). Their outputs concatenate into a ReLU
    fusion layer and an MLP head. ``mode`` removes the shared stage or the
    parallel stage for ablations, keeping the fusion/head shape intact.
    """

    kind = "hgnn"

    def __init__(
        self,
        in_dim,
        out_dim,
        hidden=256,
        mlp_hidden=(64, 32),
        mode="full",
        dropout=0.5,
        slope=0.01,
        seed=0,
        dtype=np.float32,
    ):
        if mode not in HGNN_MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.mlp_hidden = tuple(mlp_hidden)
        self.mode = mode
        self.dropout_rate = dropout
        self.slope = slope
        self.seed = seed
        rng = _rng(seed)
        dt = dtype
        branch_in = in_dim
        if mode in ("full", "shared_only"):
            self.shared = SageLayer(in_dim, hidden, rng, "shared", dt)
            self.shared_drop_pos = Dropout(dropout)
            self.shared_drop_rssi = Dropout(dropout)
            branch_in = hidden
        else:
            self.shared = None
        if mode in ("full", "parallel_only"):
            self.p1 = [SageLayer(branch_in, hidden, rng, "pos1", dt)]
            self.p2 = [
                SageLayer(branch_in, hidden, rng, "rssi1", dt),
                SageLayer(hidden, hidden, rng, "rssi2", dt),
            ]
            self.p1_drops = [Dropout(dropout) for _ in self.p1]
            self.p2_drops = [Dropout(dropout) for _ in self.p2]
        else:
            self.p1, self.p2 = [], []
            self.p1_drops, self.p2_drops = [], []
        self.fusion = Linear(2 * hidden, hidden, rng, "fusion.fc", dt)
        self.fusion_drop = Dropout(dropout)
        self.head = Mlp(hidden, self.mlp_hidden, out_dim, rng, "head", dropout, slope, dt)
        self._cache = None
        self.branch_outputs = None

    def forward(self, x, agg_pos, agg_rssi, train_rng=None):
        caches = {"p1": [], "p2": []}
        if self.shared is not None:
            hp, caches["shared_pos"] = self.shared.forward(x, agg_pos)
            hp = self.shared_drop_pos.forward(hp, rng=train_rng)
            hr, caches["shared_rssi"] = self.shared.forward(x, agg_rssi)
            hr = self.shared_drop_rssi.forward(hr, rng=train_rng)
        else:
            hp = hr = x
        for layer, drop in zip(self.p1, self.p1_drops):
            hp, c = layer.forward(hp, agg_pos)
            hp = drop.forward(hp, rng=train_rng)
            caches["p1"].append(c)
        for layer, drop in zip(self.p2, self.p2_drops):
            hr, c = layer.forward(hr, agg_rssi)
            hr = drop.forward(hr, rng=train_rng)
            caches["p2"].append(c)
        self.branch_outputs = (hp, hr)
        fused = np.concatenate([hp, hr], axis=1)
        z = self.fusion.forward(fused)
        fmask = z > 0
        caches["fusion_mask"] = fmask
        out = self.fusion_drop.forward(z * fmask, rng=train_rng)
        self._cache = caches
        return self.head.forward(out, train_rng)

    def backward(self, dout):
        caches = self._cache
        dfused_act = self.fusion_drop.backward(self.head.backward(dout))
        dz = dfused_act * caches["fusion_mask"]
        dcat = self.fusion.backward(dz)
        dhp, dhr = dcat[:, : self.hidden], dcat[:, self.hidden :]
        for layer, drop, c in reversed(list(zip(self.p1, self.p1_drops, caches["p1"]))):
            dhp = layer.backward(drop.backward(dhp), c)
        for layer, drop, c in reversed(list(zip(self.p2, self.p2_drops, caches["p2"]))):
            dhr = layer.backward(drop.backward(dhr), c)
        if self.shared is None:
            return dhp + dhr
        dx = self.shared.backward(
            self.shared_drop_pos.backward(dhp), caches["shared_pos"]
        )
        dx = dx + self.shared.backward(
            self.shared_drop_rssi.backward(dhr), caches["shared_rssi"]
        )
        return dx

    def params(self):
        out = []
        if self.shared is not None:
            out.extend(self.shared.params())
        for layer in (*self.p1, *self.p2):
            out.extend(layer.params())
        out.extend(self.fusion.params())
        out.extend(self.head.params())
        return out

    def arch_spec(self):
        return {
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "hidden": self.hidden,
            "mlp_hidden": list(self.mlp_hidden),
            "mode": self.mode,
            "dropout": self.dropout_rate,
            "slope": self.slope,
            "seed": self.seed,
        }

    @classmethod
    def from_arch(cls, arch, dtype=np.float32):
        arch = dict(arch)
        arch["mlp_hidden"] = tuple(arch["mlp_hidden"])
        return cls(dtype=dtype, **arch)


class OnlineAdapter:
    """Input reweighting for target-node features, trained at serving time.

    Elementwise by default (one weight per AP, initialized to 1 so the
    untrained adapter is the identity); ``full_matrix=True`` uses a dense
    matrix initialized to the identity instead.
    """

    kind = "adapter"

    def __init__(self, ap_count, full_matrix=False, seed=0, dtype=np.float32):
        self.ap_count = ap_count
        self.full_matrix = full_matrix
        self.seed = seed
        if full_matrix:
            self.w = Parameter("adapter.W", np.eye(ap_count, dtype=dtype))
        else:
            self.w = Parameter("adapter.w", np.ones(ap_count, dtype=dtype))
        self._cache = None

    def forward(self, x, adapt_mask):
        adapt_mask = np.asarray(adapt_mask, dtype=bool)
        out = np.array(x, copy=True)
        rows = x[adapt_mask]
        if self.full_matrix:
            out[adapt_mask] = rows @ self.w.value
        else:
            out[adapt_mask] = rows * self.w.value
        self._cache = (rows, adapt_mask)
        return out

    def backward(self, dout):
        rows, adapt_mask = self._cache
        d = dout[adapt_mask]
        if self.full_matrix:
            self.w.grad += rows.T @ d
        else:
            self.w.grad += (d * rows).sum(axis=0)

    def params(self):
        return [self.w]

    def arch_spec(self):
        return {
            "ap_count": self.ap_count,
            "full_matrix": self.full_matrix,
            "seed": self.seed,
        }

    @classmethod
    def from_arch(cls, arch, dtype=np.float32):
        return cls(dtype=dtype, **arch)


MODEL_CLASSES = {
    cls.kind: cls
    for cls in (CoarseLocalizer, StackedFeatureEncoder, HeteroGnn, OnlineAdapter)
}


def save_checkpoint(path, model, config_fingerprint="", seed=0, extra_meta=None):
    """Persist named parameter tensors plus architecture and provenance."""
    params = model.params()
    meta = {
        "model": model.kind,
        "arch": model.arch_spec(),
        "fingerprint": config_fingerprint,
        "seed": int(seed),
        "param_names": [p.name for p in params],
    }
    if extra_meta:
        meta["extra"] = extra_meta
    write_container(path, "checkpoint", meta, {p.name: p.value for p in params})


def load_checkpoint(path, expect_fingerprint=None):
    """Rebuild a model from a checkpoint; parameters round-trip bit-exactly.

    When ``expect_fingerprint`` is given it must equal the stored one; this
    catches evaluating a model under a different configuration.
    """
    meta, blobs = read_container(path, expect_kind="checkpoint")
    if expect_fingerprint is not None and meta["fingerprint"] != expect_fingerprint:
        raise DataError(
            f"{path}: checkpoint fingerprint {meta['fingerprint']!r} does not "
            f"match expected {expect_fingerprint!r}"
        )
    kind = meta["model"]
    if kind not in MODEL_CLASSES:
        raise DataError(f"{path}: unknown model kind {kind!r}")
    sample = blobs[meta["param_names"][0]]
    model = MODEL_CLASSES[kind].from_arch(meta["arch"], dtype=sample.dtype)
    params = {p.name: p for p in model.params()}
    if set(params) != set(meta["param_names"]):
        raise DataError(f"{path}: parameter names do not match architecture")
    for name, p in params.items():
        stored = blobs[name]
        if stored.shape != p.value.shape:
            raise DataError(
                f"{path}: parameter {name!r} has shape {stored.shape}, "
                f"model expects {p.value.shape}"
            )
        p.value = np.ascontiguousarray(stored)
        p.grad = np.zeros_like(p.value)
    return model, meta
