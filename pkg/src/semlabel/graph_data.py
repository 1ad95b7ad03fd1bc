"""Node-attributed project graphs, leave-one-project-out folds, synthetic data."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DatasetError
from .label_encoding import LabelVocabulary


@dataclass(frozen=True, eq=False)
class Dataset:
    """Undirected graph over dense node ids ``0..n-1``.

    Node attributes are stored column-wise: ``features[i]``, ``labels[i]`` and
    ``project_of[i]`` describe node ``i``.
    """

    features: np.ndarray
    labels: np.ndarray
    project_of: np.ndarray
    edges: tuple[tuple[int, int], ...]
    projects: tuple[str, ...]
    vocabulary: LabelVocabulary

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        proj = np.array(self.project_of, dtype=np.int64)
        n = len(labels)
        if feats.ndim != 2 or feats.shape[0] != n or proj.shape != (n,):
            raise DatasetError("features, labels and projects must describe the same nodes")
        if n and (labels.min() < 0 or labels.max() >= len(self.vocabulary)):
            raise DatasetError("label index out of vocabulary range", code="unknown_label")
        if n and (proj.min() < 0 or proj.max() >= len(self.projects)):
            raise DatasetError("project index out of range", code="unknown_project")
        edges = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise DatasetError(f"edge ({u}, {v}) has a dangling endpoint", code="dangling_edge")
            if u == v:
                raise DatasetError(f"self-loop on node {u}", code="self_loop")
            edges.add((min(u, v), max(u, v)))
        for arr in (feats, labels, proj):
            arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "project_of", proj)
        object.__setattr__(self, "edges", tuple(sorted(edges)))
        object.__setattr__(self, "projects", tuple(self.projects))

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(x)) for x in nbrs)

    @cached_property
    def mean_operator(self) -> sp.csr_matrix:
        """Row-normalized adjacency: ``mean_operator @ H`` averages neighbor rows.

        Isolated nodes get an all-zero row, i.e. a zero neighbor mean.
        """
        n = self.n_nodes
        if not self.edges:
            return sp.csr_matrix((n, n))
        e = np.asarray(self.edges, dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        deg = np.bincount(rows, minlength=n).astype(np.float64)
        vals = 1.0 / deg[rows]
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def nodes_of_project(self, project: int) -> np.ndarray:
        return np.flatnonzero(self.project_of == project)

    def to_json(self) -> str:
        doc = {
            "projects": list(self.projects),
            "labels": list(self.vocabulary.labels),
            "nodes": [
                {"id": i, "project": int(p), "label": int(lab), "features": f.tolist()}
                for i, (p, lab, f) in enumerate(zip(self.project_of, self.labels, self.features))
            ],
            "edges": [list(e) for e in self.edges],
        }
        if self.vocabulary.generic_group is not None:
            doc["generic_group"] = list(self.vocabulary.generic_group)
        return json.dumps(doc)


def load_dataset(data) -> Dataset:
    """Parse and validate a dataset document (bytes, str or decoded dict).

    An optional top-level ``generic_group`` list (one group index per label)
    is accepted so that synthetic hierarchies survive a round trip.
    """
    if isinstance(data, (bytes, bytearray, str)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"malformed dataset JSON: {exc}", code="malformed_json") from exc
    try:
        projects = [str(p) for p in data["projects"]]
        vocab = LabelVocabulary(tuple(data["labels"]), data.get("generic_group"))
        nodes = sorted(data["nodes"], key=lambda nd: int(nd["id"]))
        raw_edges = data.get("edges", [])
    except (KeyError, TypeError, AttributeError) as exc:
        raise DatasetError(f"dataset document is missing a field: {exc}", code="malformed_json") from exc

    if [int(nd["id"]) for nd in nodes] != list(range(len(nodes))):
        raise DatasetError("node ids must be dense 0..n-1", code="bad_node_ids")
    dims = {len(nd["features"]) for nd in nodes}
    if len(dims) > 1:
        raise DatasetError(f"inconsistent feature dimensions {sorted(dims)}", code="dimension_mismatch")
    labels = []
    for nd in nodes:
        lab = nd["label"]
        # labels may be given by index or by name
        if isinstance(lab, str):
            if lab not in vocab.labels:
                raise DatasetError(f"unknown label {lab!r}", code="unknown_label")
            lab = vocab.labels.index(lab)
        labels.append(int(lab))
    try:
        edges = tuple((int(u), int(v)) for u, v in raw_edges)
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"edges must be integer pairs: {exc}", code="malformed_json") from exc
    dim = dims.pop() if dims else 0
    feats = np.array([nd["features"] for nd in nodes], dtype=np.float64).reshape(len(nodes), dim)
    return Dataset(
        features=feats,
        labels=np.array(labels, dtype=np.int64),
        project_of=np.array([int(nd["project"]) for nd in nodes], dtype=np.int64),
        edges=edges,
        projects=tuple(projects),
        vocabulary=vocab,
    )


def neighbors(ds: Dataset, node_id: int) -> list[int]:
    if not 0 <= node_id < ds.n_nodes:
        raise DatasetError(f"unknown node id {node_id}", code="unknown_node")
    return list(ds.adjacency[node_id])


@dataclass(frozen=True)
class FoldSpec:
    fold_index: int
    test_project: int
    train_node_ids: tuple[int, ...]
    test_node_ids: tuple[int, ...]


def make_folds(ds: Dataset) -> list[FoldSpec]:
    """One fold per project: test on that project, train on every other one."""
    if len(ds.projects) < 2:
        raise DatasetError("leave-one-project-out needs at least 2 projects", code="too_few_projects")
    folds = []
    for k in range(len(ds.projects)):
        test = ds.project_of == k
        folds.append(FoldSpec(
            fold_index=k,
            test_project=k,
            train_node_ids=tuple(np.flatnonzero(~test).tolist()),
            test_node_ids=tuple(np.flatnonzero(test).tolist()),
        ))
    return folds


_GENERIC_NAMES = ("Wall", "Parapet", "Column", "Beam", "Slab", "Foundation", "Stairs", "Lintel")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_projects: int = 5
    generic_types: int = 6
    subtypes_per_type: int = 7
    nodes_per_project: int = 150
    intra_edge_prob: float = 0.1
    inter_edge_prob: float = 0.005
    feature_dim: int = 64
    sibling_confusion: float = 0.5
    noise_std: float = 0.15

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DatasetError(f"unknown SynthConfig fields {sorted(unknown)}", code="bad_config")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        for name in ("n_projects", "generic_types", "subtypes_per_type", "nodes_per_project", "feature_dim"):
            if int(getattr(self, name)) < 1:
                raise DatasetError(f"{name} must be >= 1", code="bad_config")
        for name in ("intra_edge_prob", "inter_edge_prob", "sibling_confusion"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DatasetError(f"{name} must lie in [0, 1]", code="bad_config")
        if self.noise_std < 0:
            raise DatasetError("noise_std must be >= 0", code="bad_config")


def synthetic_vocabulary(generic_types: int, subtypes_per_type: int) -> LabelVocabulary:
    labels, groups = [], []
    for g in range(generic_types):
        generic = _GENERIC_NAMES[g] if g < len(_GENERIC_NAMES) else f"Generic{g}"
        for s in range(subtypes_per_type):
            labels.append(f"{generic} subtype {s}")
            groups.append(g)
    return LabelVocabulary(tuple(labels), tuple(groups))


def subtype_prototypes(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(subtype_protos, generic_protos)`` as unit-norm rows.

    Subtype prototype = normalize((1 - c) * u_label + c * u_group) with
    ``c = sibling_confusion``. The ``u`` directions are orthonormal when
    ``feature_dim`` is at least labels + groups, otherwise random unit vectors.
    """
    n_labels = cfg.generic_types * cfg.subtypes_per_type
    n_dirs = n_labels + cfg.generic_types
    rng = np.random.default_rng([cfg.seed, 1])
    raw = rng.standard_normal((cfg.feature_dim, n_dirs))
    if cfg.feature_dim >= n_dirs:
        frame, _ = np.linalg.qr(raw)
    else:
        frame = raw / np.linalg.norm(raw, axis=0, keepdims=True)
    label_dirs = frame[:, :n_labels].T
    generic = frame[:, n_labels:].T
    group_of = np.repeat(np.arange(cfg.generic_types), cfg.subtypes_per_type)
    c = cfg.sibling_confusion
    protos = (1.0 - c) * label_dirs + c * generic[group_of]
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return protos, generic


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Deterministic BIM-like graph with a two-level label hierarchy.

    Node features are ``subtype prototype + generic prototype + noise``.
    Class frequencies are drawn once per dataset so classes are imbalanced
    the same way in every project. Edges only connect nodes of the same
    project, with probability ``intra_edge_prob`` inside a generic group and
    ``inter_edge_prob`` across groups.
    """
    cfg.validate()
    vocab = synthetic_vocabulary(cfg.generic_types, cfg.subtypes_per_type)
    protos, generic = subtype_prototypes(cfg)
    group_of = np.asarray(vocab.generic_group)
    n_labels = len(vocab)

    rng = np.random.default_rng([cfg.seed, 2])
    class_freq = rng.dirichlet(np.full(n_labels, 5.0))
    feats, labels, proj, edges = [], [], [], []
    offset = 0
    for p in range(cfg.n_projects):
        lab = rng.choice(n_labels, size=cfg.nodes_per_project, p=class_freq)
        x = protos[lab] + generic[group_of[lab]]
        x = x + cfg.noise_std * rng.standard_normal(x.shape)
        same = lab[:, None] == lab[None, :]
        prob = np.where(same, cfg.intra_edge_prob, cfg.inter_edge_prob)
        draw = rng.random(prob.shape) < prob
        iu, ju = np.nonzero(np.triu(draw, k=1))
        edges.extend(zip((iu + offset).tolist(), (ju + offset).tolist()))
        feats.append(x)
        labels.append(lab)
        proj.append(np.full(cfg.nodes_per_project, p))
        offset += cfg.nodes_per_project

    return Dataset(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        project_of=np.concatenate(proj),
        edges=tuple(edges),
        projects=tuple(f"P{p}" for p in range(cfg.n_projects)),
        vocabulary=vocab,
    )
