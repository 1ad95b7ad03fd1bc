"""Label vocabularies, label-target tables and nearest-embedding decoding.

A model trained against an :class:`EncodingTable` emits one vector per node;
:func:`decode_nearest` maps that vector back to the label whose row is most
cosine-similar to it.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .errors import EncodingError, FetchError

log = logging.getLogger(__name__)


class EncodingKind(str, enum.Enum):
    ONE_HOT = "one_hot"
    LOADED = "loaded"
    FETCHED = "fetched"
    COMPACTED = "compacted"
    SYNTHETIC_HIERARCHICAL = "synthetic_hierarchical"


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered distinct label names, optionally grouped into generic types."""

    labels: tuple[str, ...]
    generic_group: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(set(self.labels)) != len(self.labels):
            raise EncodingError("vocabulary labels must be distinct", code="duplicate_label")
        if self.generic_group is not None:
            groups = tuple(int(g) for g in self.generic_group)
            if len(groups) != len(self.labels):
                raise EncodingError("generic_group length must equal label count")
            if groups and sorted(set(groups)) != list(range(max(groups) + 1)):
                raise EncodingError("generic group indices must be dense 0..G-1")
            object.__setattr__(self, "generic_group", groups)

    def __len__(self):
        return len(self.labels)

    @property
    def n_groups(self) -> int:
        if self.generic_group is None:
            return 0
        return max(self.generic_group, default=-1) + 1

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise EncodingError(f"unknown label {label!r}", code="unknown_label") from None


# Subtype names with codes 0-41; the grouping into generic families follows
# the code ranges (walls, parapets, column, beams, lintels, stairs, slabs,
# foundations).
BUILDING_SUBTYPES = (
    "Core wall", "Horizontal wall", "Vertical wall", "Perimeter wall", "Side wall",
    "Entrance retaining wall", "Loadbearing retaining wall", "Miscellaneous wall",
    "Unit partition wall", "Non-loadbearing wall", "Auxiliary space wall",
    "Roof ornamental wall", "Roof parapet", "Penthouse parapet", "Ramp parapet",
    "Balcony parapet wall", "Miscellaneous parapet", "Transfer column", "Core beam",
    "Transfer beam", "Miscellaneous beam", "Wall girder", "Interior lintel",
    "Non-loadbearing lintel", "Entrance stairs", "Interior stairs", "Core slab",
    "Entrance slab", "Entrance ramp slab", "Piloti slab", "Basement utility pit slab",
    "Interior slab", "Bathroom slab", "Miscellaneous slab", "Auxiliary space slab",
    "Penthouse interior slab", "Penthouse core slab", "Roof ornamental slab",
    "Canopy slab", "Entrance strip foundation", "Mat foundation", "Haunch",
)
_BUILDING_GROUP_SIZES = (12, 5, 1, 4, 2, 2, 13, 3)


def building_vocabulary() -> LabelVocabulary:
    groups = [g for g, size in enumerate(_BUILDING_GROUP_SIZES) for _ in range(size)]
    return LabelVocabulary(BUILDING_SUBTYPES, tuple(groups))


@dataclass(frozen=True, eq=False)
class EncodingTable:
    """One target vector per vocabulary label, rows in vocabulary order."""

    vectors: np.ndarray
    kind: EncodingKind

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise EncodingError(f"encoding table must be a non-empty 2-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise EncodingError("encoding table contains NaN or Inf", code="nan_vector")
        zero = np.flatnonzero(~np.any(v != 0.0, axis=1))
        if zero.size:
            raise EncodingError(f"row {zero[0]} is the zero vector", code="zero_vector")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "kind", EncodingKind(self.kind))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    def unit_rows(self) -> np.ndarray:
        return self.vectors / np.linalg.norm(self.vectors, axis=1, keepdims=True)

    def to_json(self, vocab: LabelVocabulary) -> str:
        """Serialize in the embedding-table file format ``{label: [floats]}``."""
        if len(vocab) != len(self):
            raise EncodingError("vocabulary size does not match table rows")
        return json.dumps({lab: row.tolist() for lab, row in zip(vocab.labels, self.vectors)})


def one_hot_table(vocab: LabelVocabulary) -> EncodingTable:
    if len(vocab) == 0:
        raise EncodingError("vocabulary is empty", code="empty_vocabulary")
    return EncodingTable(np.eye(len(vocab)), EncodingKind.ONE_HOT)


def load_embedding_table(data, vocab: LabelVocabulary, kind=EncodingKind.LOADED) -> EncodingTable:
    """Build a table from the JSON file format; rows follow ``vocab`` order.

    ``data`` may be raw bytes/str or an already-decoded mapping. Labels in the
    file that are not in the vocabulary are ignored.
    """
    if isinstance(data, (bytes, bytearray, str)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise EncodingError(f"malformed embedding JSON: {exc}", code="malformed_json") from exc
    if not isinstance(data, dict):
        raise EncodingError("embedding table must be a JSON object", code="malformed_json")
    rows = []
    for label in vocab.labels:
        if label not in data:
            raise EncodingError(f"no embedding for label {label!r}", code="missing_label")
        row = data[label]
        if not isinstance(row, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in row
        ):
            raise EncodingError(f"embedding for {label!r} is not a numeric list", code="malformed_json")
        rows.append(row)
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise EncodingError(f"embedding lengths differ: {sorted(lengths)}", code="length_mismatch")
    return EncodingTable(np.asarray(rows, dtype=np.float64), kind)


@dataclass(frozen=True)
class EmbeddingEndpointConfig:
    base_url: str
    model_name: str
    auth_token: str | None = None
    batch_size: int = 16
    timeout: float = 60.0
    prompt_template: str = "{label}"


def fetch_embeddings(
    endpoint: EmbeddingEndpointConfig,
    vocab: LabelVocabulary,
    persist_path: str | Path | None = None,
    client: httpx.Client | None = None,
) -> EncodingTable:
    """Embed every label through an OpenAI-compatible ``/v1/embeddings`` endpoint.

    Requests are sent sequentially, ``batch_size`` labels at a time. Each
    response is re-ordered by its ``index`` field before being aligned with
    the request inputs. When ``persist_path`` is given the result is written
    in the embedding-table file format so the run can be replayed offline.
    """
    if endpoint.batch_size < 1:
        raise FetchError("batch_size must be >= 1")
    texts = [endpoint.prompt_template.format(label=lab) for lab in vocab.labels]
    url = endpoint.base_url.rstrip("/") + "/v1/embeddings"
    headers = {"Content-Type": "application/json"}
    if endpoint.auth_token:
        headers["Authorization"] = f"Bearer {endpoint.auth_token}"

    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=endpoint.timeout)
    vectors: list[list[float]] = []
    try:
        for start in range(0, len(texts), endpoint.batch_size):
            batch = texts[start:start + endpoint.batch_size]
            vectors.extend(_embed_batch(client, url, headers, endpoint.model_name, batch))
    finally:
        if own_client:
            client.close()

    lengths = {len(v) for v in vectors}
    if len(lengths) != 1:
        raise FetchError(f"endpoint returned vectors of differing lengths {sorted(lengths)}")
    arr = np.asarray(vectors, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FetchError("endpoint returned NaN or Inf in an embedding", code="nan_vector")
    table = EncodingTable(arr, EncodingKind.FETCHED)
    if persist_path is not None:
        Path(persist_path).write_text(table.to_json(vocab))
    return table


def _embed_batch(client, url, headers, model, batch):
    log.debug("POST %s (%d inputs)", url, len(batch))
    try:
        resp = client.post(url, headers=headers, json={"model": model, "input": batch})
    except httpx.HTTPError as exc:
        raise FetchError(f"request to {url} failed: {exc}", code="network") from exc
    if not 200 <= resp.status_code < 300:
        raise FetchError(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}", code="http_status")
    try:
        items = resp.json()["data"]
        items = sorted(items, key=lambda item: int(item["index"]))
        vectors = [[float(x) for x in item["embedding"]] for item in items]
    except (ValueError, KeyError, TypeError) as exc:
        raise FetchError(f"malformed embeddings response: {exc}", code="bad_response") from exc
    if len(vectors) != len(batch):
        raise FetchError(
            f"endpoint returned {len(vectors)} vectors for {len(batch)} inputs", code="count_mismatch"
        )
    if [int(item["index"]) for item in items] != list(range(len(batch))):
        raise FetchError("response indices are not a permutation of the inputs", code="bad_response")
    return vectors


def compact(table: EncodingTable, target_dim: int) -> EncodingTable:
    """Keep the first ``target_dim`` components of every row and renormalize to unit length."""
    if not 1 <= target_dim <= table.dim:
        raise EncodingError(
            f"target_dim must be in [1, {table.dim}], got {target_dim}", code="bad_dimension"
        )
    prefix = table.vectors[:, :target_dim]
    norms = np.linalg.norm(prefix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms[:, 0] == 0.0)[0])
        raise EncodingError(f"row {bad} has an all-zero {target_dim}-prefix", code="zero_vector")
    return EncodingTable(prefix / norms, EncodingKind.COMPACTED)


def synth_hierarchical_table(
    vocab: LabelVocabulary, dim: int, seed: int, within_group_cos: float = 0.8
) -> EncodingTable:
    """Unit-norm label vectors whose cosine is ``within_group_cos`` between siblings.

    Every label gets ``sqrt(c) * g + sqrt(1 - c) * u`` where ``g`` is its
    group's direction and ``u`` a label-unique direction, all drawn from one
    random orthonormal frame. Siblings therefore have cosine ``c`` and labels
    in different groups are orthogonal.
    """
    if vocab.generic_group is None:
        raise EncodingError("vocabulary has no generic groups", code="no_groups")
    if not 0.0 < within_group_cos < 1.0:
        raise EncodingError("within_group_cos must lie in (0, 1)")
    n_dirs = vocab.n_groups + len(vocab)
    if dim < n_dirs:
        raise EncodingError(f"dim must be >= {n_dirs} (groups + labels), got {dim}", code="bad_dimension")
    rng = np.random.default_rng(seed)
    frame, _ = np.linalg.qr(rng.standard_normal((dim, n_dirs)))
    group_dirs = frame[:, :vocab.n_groups].T
    label_dirs = frame[:, vocab.n_groups:].T
    c = within_group_cos
    vectors = math.sqrt(c) * group_dirs[list(vocab.generic_group)] + math.sqrt(1.0 - c) * label_dirs
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return EncodingTable(vectors, EncodingKind.SYNTHETIC_HIERARCHICAL)


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EncodingError(f"shape mismatch {a.shape} vs {b.shape}", code="length_mismatch")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise EncodingError("cosine similarity of a zero vector", code="zero_vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def decode_nearest(prediction, table: EncodingTable) -> int:
    """Index of the label whose row is most cosine-similar; ties go to the lowest index."""
    e_p = np.asarray(prediction, dtype=np.float64)
    if e_p.shape != (table.dim,):
        raise EncodingError(f"prediction has shape {e_p.shape}, table dim is {table.dim}",
                            code="length_mismatch")
    if not np.any(e_p != 0.0):
        raise EncodingError("cannot decode the zero vector", code="zero_vector")
    return int(decode_nearest_batch(e_p[None, :], table)[0])


def decode_nearest_batch(predictions: np.ndarray, table: EncodingTable) -> np.ndarray:
    """Row-wise :func:`decode_nearest`. Zero prediction rows decode to label 0."""
    p = np.asarray(predictions, dtype=np.float64)
    norms = np.linalg.norm(p, axis=1, keepdims=True)
    sims = (p / np.where(norms == 0.0, 1.0, norms)) @ table.unit_rows().T
    # np.argmax returns the first maximum, which is the lowest label index
    return np.argmax(sims, axis=1)
