"""Higher-order sequential message-passing network over a combinatorial complex.

Pipeline for one prediction:

1. encode every rank with its own MLP;
2. enrich faces with messages from their nodes, edges and parent object (SUM);
3. update each directed contact from its sender and receiver face messages;
4. add the incoming contact embeddings to each receiving face (SUM);
5. update objects from the MEAN of their face messages;
6. update nodes from their object's message, and objects from the MEAN of
   their (pre-update) node messages;
7. decode node and object accelerations.

Steps 2-6 form one processor block; ``processor_steps`` blocks with untied
weights can be stacked. Two ablations replace parts of the pipeline:
``no_object_cells`` (objects replaced by a virtual centre node that pools and
broadcasts node messages) and ``non_sequential`` (all neighbourhood messages
computed simultaneously from the previous embeddings, repeated for a fixed
number of shared-weight rounds).
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse

from .autodiff import Tape
from .errors import ShapeMismatch
from .features import (
    CONTACT_DIM,
    EDGE_DIM,
    FACE_DIM,
    NODE_DIM,
    NODE_DIM_NO_CENTER,
    OBJECT_DIM,
    NormalizerSet,
)

PHYSICAL_DIM = 5  # one-hot static/dynamic, mass, friction, restitution


@dataclass(frozen=True)
class ModelSpec:
    hidden: int = 128
    processor_steps: int = 1
    layer_norm: bool = True
    no_object_cells: bool = False
    no_center_mass_distance: bool = False
    non_sequential: bool = False
    non_sequential_rounds: int = 3
    contact_radius: float = 0.25

    @classmethod
    def from_config(cls, model_cfg):
        return cls(
            hidden=model_cfg.hidden,
            processor_steps=model_cfg.processor_steps,
            layer_norm=model_cfg.layer_norm,
            no_object_cells=model_cfg.no_object_cells,
            no_center_mass_distance=model_cfg.no_center_mass_distance,
            non_sequential=model_cfg.non_sequential,
            non_sequential_rounds=model_cfg.non_sequential_rounds,
            contact_radius=model_cfg.contact_radius,
        )

    @property
    def feature_node_dim(self):
        return NODE_DIM_NO_CENTER if self.no_center_mass_distance else NODE_DIM

    @property
    def node_input_dim(self):
        return self.feature_node_dim + (PHYSICAL_DIM if self.no_object_cells else 0)

    def to_dict(self):
        return asdict(self)


def _block_layout(spec):
    h = spec.hidden
    if spec.no_object_cells:
        return [
            ("m0_2", h), ("m1_2", h), ("proc2", 3 * h),
            ("m2_3", h), ("proc3", 3 * h), ("proc2b", 2 * h),
            ("m2_0", h), ("proc0", 2 * h),
            ("m0_c", h), ("procc", h), ("mc_0", h), ("proc0b", 2 * h),
        ]
    if spec.non_sequential:
        return [
            ("m0_2", h), ("m1_2", h), ("m4_2", h), ("m3_2", h), ("proc2", 5 * h),
            ("m2_3", h), ("proc3", 3 * h),
            ("m2_4", h), ("m0_4", h), ("proc4", 3 * h),
            ("m4_0", h), ("m2_0", h), ("proc0", 3 * h),
        ]
    return [
        ("m0_2", h), ("m1_2", h), ("m4_2", h), ("proc2", 4 * h),
        ("m2_3", h), ("proc3", 3 * h), ("proc2b", 2 * h),
        ("m2_4", h), ("proc4", 2 * h),
        ("m0_4", h), ("m4_0", h), ("proc0", 2 * h), ("proc4b", 2 * h),
    ]


def mlp_layout(spec):
    """Ordered ``(name, in_dim, out_dim, output_norm)`` for every MLP."""
    h = spec.hidden
    out = [
        ("encoder.nodes", spec.node_input_dim, h, False),
        ("encoder.edges", EDGE_DIM, h, False),
        ("encoder.faces", FACE_DIM, h, False),
        ("encoder.contacts", CONTACT_DIM, h, False),
    ]
    if not spec.no_object_cells:
        out.append(("encoder.objects", OBJECT_DIM, h, False))
    for p in range(spec.processor_steps):
        for name, fan_in in _block_layout(spec):
            out.append((f"block{p}.{name}", fan_in, h, spec.layer_norm))
    out.append(("decoder.nodes", h, 3, False))
    out.append(("decoder.objects", h, 3, False))
    return out


def _mlp_arrays(name, fan_in, fan_out, hidden, norm, rng):
    arrays = {}
    dims = [fan_in, hidden, hidden, fan_out]
    for i in range(3):
        arrays[f"{name}.l{i}.w"] = rng.normal(scale=1.0 / np.sqrt(dims[i]), size=(dims[i], dims[i + 1]))
        arrays[f"{name}.l{i}.b"] = np.zeros(dims[i + 1])
    if norm:
        arrays[f"{name}.ln.g"] = np.ones(fan_out)
        arrays[f"{name}.ln.b"] = np.zeros(fan_out)
    return arrays


class ModelParams:
    """Named weight arrays plus the normalisation statistics they were trained with."""

    def __init__(self, spec, arrays, normalizers=None):
        self.spec = spec
        self.arrays = dict(arrays)
        self.normalizers = normalizers if normalizers is not None else NormalizerSet(spec.feature_node_dim)

    @classmethod
    def initialize(cls, spec, seed=0):
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, fan_in, fan_out, norm in mlp_layout(spec):
            arrays.update(_mlp_arrays(name, fan_in, fan_out, spec.hidden, norm, rng))
        return cls(spec, arrays)

    def count(self):
        return int(sum(a.size for a in self.arrays.values()))

    def names(self):
        return list(self.arrays)

    def copy(self):
        return ModelParams(self.spec, {k: v.copy() for k, v in self.arrays.items()}, self.normalizers)


# ---------------------------------------------------------------------------
# connectivity operators


def _csr(rows, cols, vals, shape):
    return sparse.csr_matrix((np.asarray(vals, dtype=float), (rows, cols)), shape=shape)


def _gather(index, n_src):
    m = len(index)
    return _csr(np.arange(m), index, np.ones(m), (m, n_src))


def _mean_pool(group, n_groups):
    """``(n_groups, len(group))`` operator averaging members of each group."""
    counts = np.bincount(group, minlength=n_groups).astype(float)
    m = len(group)
    return _csr(group, np.arange(m), 1.0 / counts[group], (n_groups, m))


def topology_operators(cc):
    """Contact-independent operators, cached on the scene mesh."""
    cache = cc.mesh.__dict__.setdefault("_operators", {})
    key = len(cc.edges)
    if key in cache:
        return cache[key]
    n, e, f, _, k = cc.counts()
    faces = cc.faces
    face_rows3 = np.repeat(np.arange(f), 3)
    ops = {
        "face_nodes": _csr(face_rows3, faces.ravel(), np.ones(3 * f), (f, n)),
        "face_edges": _csr(np.repeat(np.arange(f), 6), cc.face_edges.ravel(), np.ones(6 * f), (f, e)),
        "face_object": _gather(cc.face_object, k),
        "object_faces_mean": _mean_pool(cc.face_object, k),
        "node_object": _gather(cc.node_object, k),
        "object_nodes_mean": _mean_pool(cc.node_object, k),
    }
    degree = np.bincount(faces.ravel(), minlength=n).astype(float)
    degree[degree == 0] = 1.0
    ops["node_faces_mean"] = _csr(faces.ravel(), face_rows3, 1.0 / degree[faces.ravel()], (n, f))
    cache[key] = ops
    return ops


def contact_operators(cc):
    f = len(cc.faces)
    c = cc.contacts
    sender = _gather(c[:, 0], f)
    receiver = _gather(c[:, 1], f)
    return {"contact_sender": sender, "contact_receiver": receiver, "face_incoming": receiver.T.tocsr()}


def operators(cc):
    ops = dict(topology_operators(cc))
    ops.update(contact_operators(cc))
    return ops


# ---------------------------------------------------------------------------
# forward pass


class Network:
    """Binds parameter arrays to a tape and exposes the individual steps."""

    def __init__(self, params, tape=None):
        self.params = params
        self.spec = params.spec
        self.tape = tape if tape is not None else Tape(record=False)
        self.vars = {name: self.tape.param(value, name) for name, value in params.arrays.items()}
        self.node_object = None

    def mlp(self, name, x):
        t = self.tape
        h = x
        for i in range(3):
            h = t.linear(h, self.vars[f"{name}.l{i}.w"], self.vars[f"{name}.l{i}.b"])
            if i < 2:
                h = t.softplus(h)
        if f"{name}.ln.g" in self.vars:
            h = t.layer_norm(h, self.vars[f"{name}.ln.g"], self.vars[f"{name}.ln.b"])
        return h

    def cat(self, *xs):
        return self.tape.concat(list(xs))

    def agg(self, op, x):
        return self.tape.spmm(op, x)

    # -- encoder ----------------------------------------------------------
    def encode(self, bundle):
        t = self.tape
        spec = self.spec
        checks = [
            ("nodes", bundle.nodes, spec.feature_node_dim),
            ("edges", bundle.edges, EDGE_DIM),
            ("faces", bundle.faces, FACE_DIM),
            ("contacts", bundle.contacts, CONTACT_DIM),
        ]
        if not spec.no_object_cells:
            checks.append(("objects", bundle.objects, OBJECT_DIM))
        for name, x, dim in checks:
            if np.ndim(x) != 2 or np.shape(x)[1] != dim:
                raise ShapeMismatch(f"{name} features must have {dim} columns, got shape {np.shape(x)}")
        nodes = bundle.nodes
        if spec.no_object_cells:
            # without object cells every node carries its object's one-hot
            # type and physical parameters instead
            nodes = np.concatenate([nodes, np.asarray(bundle.objects)[:, 8:13][self.node_object]], axis=1)
        emb = {
            "h0": self.mlp("encoder.nodes", t.const(nodes)),
            "h1": self.mlp("encoder.edges", t.const(bundle.edges)),
            "h2": self.mlp("encoder.faces", t.const(bundle.faces)),
            "h3": self.mlp("encoder.contacts", t.const(bundle.contacts)),
        }
        if not spec.no_object_cells:
            emb["h4"] = self.mlp("encoder.objects", t.const(bundle.objects))
        return emb

    # -- the sequential block -----------------------------------------------
    def step1_enrich_faces(self, emb, ops, p):
        b = f"block{p}."
        m02 = self.agg(ops["face_nodes"], self.mlp(b + "m0_2", emb["h0"]))
        m12 = self.agg(ops["face_edges"], self.mlp(b + "m1_2", emb["h1"]))
        m42 = self.agg(ops["face_object"], self.mlp(b + "m4_2", emb["h4"]))
        return self.mlp(b + "proc2", self.cat(emb["h2"], m02, m12, m42))

    def step2_contact_update(self, emb, h2p, ops, p):
        b = f"block{p}."
        m23 = self.mlp(b + "m2_3", h2p)
        m_s = self.agg(ops["contact_sender"], m23)
        m_r = self.agg(ops["contact_receiver"], m23)
        return self.mlp(b + "proc3", self.cat(emb["h3"], m_s, m_r))

    def step3_face_collision_aggregate(self, h2p, h3p, ops, p):
        incoming = self.agg(ops["face_incoming"], h3p)
        return self.mlp(f"block{p}.proc2b", self.cat(h2p, incoming))

    def step4_object_update(self, emb, h2pp, ops, p):
        b = f"block{p}."
        m24 = self.agg(ops["object_faces_mean"], self.mlp(b + "m2_4", h2pp))
        return self.mlp(b + "proc4", self.cat(emb["h4"], m24))

    def step5_node_object_exchange(self, emb, h4p, ops, p):
        b = f"block{p}."
        m04 = self.agg(ops["object_nodes_mean"], self.mlp(b + "m0_4", emb["h0"]))
        m40 = self.agg(ops["node_object"], self.mlp(b + "m4_0", h4p))
        h0p = self.mlp(b + "proc0", self.cat(emb["h0"], m40))
        h4pp = self.mlp(b + "proc4b", self.cat(h4p, m04))
        return h0p, h4pp

    def sequential_block(self, emb, ops, p):
        h2p = self.step1_enrich_faces(emb, ops, p)
        h3p = self.step2_contact_update(emb, h2p, ops, p)
        h2pp = self.step3_face_collision_aggregate(h2p, h3p, ops, p)
        h4p = self.step4_object_update(emb, h2pp, ops, p)
        h0p, h4pp = self.step5_node_object_exchange(emb, h4p, ops, p)
        return {"h0": h0p, "h1": emb["h1"], "h2": h2pp, "h3": h3p, "h4": h4pp}

    # -- ablations ------------------------------------------------------------
    def virtual_center_block(self, emb, ops, p):
        b = f"block{p}."
        m02 = self.agg(ops["face_nodes"], self.mlp(b + "m0_2", emb["h0"]))
        m12 = self.agg(ops["face_edges"], self.mlp(b + "m1_2", emb["h1"]))
        h2p = self.mlp(b + "proc2", self.cat(emb["h2"], m02, m12))
        m23 = self.mlp(b + "m2_3", h2p)
        h3p = self.mlp(
            b + "proc3",
            self.cat(emb["h3"], self.agg(ops["contact_sender"], m23), self.agg(ops["contact_receiver"], m23)),
        )
        h2pp = self.mlp(b + "proc2b", self.cat(h2p, self.agg(ops["face_incoming"], h3p)))
        m20 = self.agg(ops["node_faces_mean"], self.mlp(b + "m2_0", h2pp))
        h0p = self.mlp(b + "proc0", self.cat(emb["h0"], m20))
        center = self.mlp(b + "procc", self.agg(ops["object_nodes_mean"], self.mlp(b + "m0_c", h0p)))
        mc0 = self.agg(ops["node_object"], self.mlp(b + "mc_0", center))
        h0pp = self.mlp(b + "proc0b", self.cat(h0p, mc0))
        return {"h0": h0pp, "h1": emb["h1"], "h2": h2pp, "h3": h3p, "center": center}

    def simultaneous_round(self, emb, ops, p):
        b = f"block{p}."
        h0, h1, h2, h3, h4 = emb["h0"], emb["h1"], emb["h2"], emb["h3"], emb["h4"]
        m02 = self.agg(ops["face_nodes"], self.mlp(b + "m0_2", h0))
        m12 = self.agg(ops["face_edges"], self.mlp(b + "m1_2", h1))
        m42 = self.agg(ops["face_object"], self.mlp(b + "m4_2", h4))
        m32 = self.agg(ops["face_incoming"], self.mlp(b + "m3_2", h3))
        m23 = self.mlp(b + "m2_3", h2)
        m24 = self.agg(ops["object_faces_mean"], self.mlp(b + "m2_4", h2))
        m04 = self.agg(ops["object_nodes_mean"], self.mlp(b + "m0_4", h0))
        m40 = self.agg(ops["node_object"], self.mlp(b + "m4_0", h4))
        m20 = self.agg(ops["node_faces_mean"], self.mlp(b + "m2_0", h2))
        return {
            "h0": self.mlp(b + "proc0", self.cat(h0, m40, m20)),
            "h1": h1,
            "h2": self.mlp(b + "proc2", self.cat(h2, m02, m12, m42, m32)),
            "h3": self.mlp(
                b + "proc3",
                self.cat(h3, self.agg(ops["contact_sender"], m23), self.agg(ops["contact_receiver"], m23)),
            ),
            "h4": self.mlp(b + "proc4", self.cat(h4, m24, m04)),
        }

    # -- decoder --------------------------------------------------------------
    def decode(self, h0, h4):
        return self.mlp("decoder.nodes", h0), self.mlp("decoder.objects", h4)

    def forward(self, bundle, cc):
        ops = operators(cc)
        self.node_object = cc.node_object
        emb = self.encode(bundle)
        spec = self.spec
        for p in range(spec.processor_steps):
            if spec.no_object_cells:
                emb = self.virtual_center_block(emb, ops, p)
            elif spec.non_sequential:
                for _ in range(spec.non_sequential_rounds):
                    emb = self.simultaneous_round(emb, ops, p)
            else:
                emb = self.sequential_block(emb, ops, p)
        objects = emb["center"] if spec.no_object_cells else emb["h4"]
        node_acc, obj_acc = self.decode(emb["h0"], objects)
        return node_acc, obj_acc

    def gradients(self):
        return {
            name: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for name, v in self.vars.items()
        }


def forward(bundle, cc, params):
    """Plain forward pass; returns normalised ``(node_acc (N,3), object_acc (K,3))``."""
    net = Network(params)
    node_acc, obj_acc = net.forward(bundle, cc)
    return node_acc.value, obj_acc.value
