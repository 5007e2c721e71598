"""Item registry: embeddings, residual-quantized semantic IDs, prefix trie.

Semantic IDs are assigned with a residual k-means quantizer: the first
``num_levels - 1`` digits are nearest-centroid indices on successive
residuals of the item embedding, the last digit is a per-prefix collision
counter assigned in ascending internal-index order. The prefix trie maps
every digit prefix to the set of items beneath it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, CodebookError, FormatError
from .tokens import TokenLayout

KMEANS_MAX_ITERS = 25
KMEANS_REL_TOL = 1e-6


def _l2_normalize(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return mat / norms


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # remaining mass is zero: all points coincide with chosen centers
            centers[j] = points[int(rng.integers(n))]
            continue
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd iterations from a k-means++ start; returns the centroid matrix."""
    centers = _kmeans_pp_init(points, k, rng)
    prev_obj = np.inf
    for _ in range(KMEANS_MAX_ITERS):
        d2 = (
            np.sum(points**2, axis=1, keepdims=True)
            - 2.0 * points @ centers.T
            + np.sum(centers**2, axis=1)
        )
        assign = np.argmin(d2, axis=1)
        obj = float(d2[np.arange(points.shape[0]), assign].sum())
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # revive empty clusters at the point farthest from its center
                worst = int(np.argmax(d2[np.arange(points.shape[0]), assign]))
                centers[j] = points[worst]
        if prev_obj - obj <= KMEANS_REL_TOL * max(prev_obj, 1e-30):
            break
        prev_obj = obj
    return centers


@dataclass(frozen=True)
class Codebooks:
    """Per-level centroid matrices for the semantic digits (not the id digit)."""

    centroids: tuple[np.ndarray, ...]

    @property
    def levels(self) -> int:
        return len(self.centroids)

    @property
    def codebook_size(self) -> int:
        return self.centroids[0].shape[0]

    def quantize(self, embedding: np.ndarray) -> tuple[int, ...]:
        """Nearest-centroid codes on successive residuals."""
        residual = np.asarray(embedding, dtype=np.float64).copy()
        codes = []
        for cents in self.centroids:
            d2 = np.sum((cents - residual) ** 2, axis=1)
            code = int(np.argmin(d2))
            codes.append(code)
            residual -= cents[code]
        return tuple(codes)

    def save(self, path: str | Path) -> None:
        arrays = {f"level_{i}": c for i, c in enumerate(self.centroids)}
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Codebooks":
        with np.load(path) as data:
            cents = tuple(data[f"level_{i}"] for i in range(len(data.files)))
        return cls(cents)


def fit_codebooks(
    embeddings: np.ndarray, levels: int, codebook_size: int, seed: int
) -> Codebooks:
    """Fit residual k-means codebooks, one per semantic level.

    Deterministic for a fixed seed and input row order.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise CodebookError("embeddings must be a 2-D matrix")
    if not np.all(np.isfinite(emb)):
        raise CodebookError("embeddings contain non-finite values")
    if levels < 1:
        raise CodebookError("need at least one quantization level")
    if emb.shape[0] < codebook_size:
        raise CodebookError(
            f"level 0: {emb.shape[0]} embeddings < codebook_size {codebook_size}"
        )
    rng = np.random.default_rng(seed)
    residual = emb.copy()
    centroids = []
    for level in range(levels):
        distinct = np.unique(residual, axis=0).shape[0]
        if distinct < codebook_size:
            raise CodebookError(
                f"level {level}: only {distinct} distinct residuals for "
                f"codebook_size {codebook_size}"
            )
        cents = _kmeans(residual, codebook_size, rng)
        d2 = (
            np.sum(residual**2, axis=1, keepdims=True)
            - 2.0 * residual @ cents.T
            + np.sum(cents**2, axis=1)
        )
        assign = np.argmin(d2, axis=1)
        residual = residual - cents[assign]
        centroids.append(cents)
    return Codebooks(tuple(centroids))


def assign_semantic_id(
    embedding: np.ndarray,
    codebooks: Codebooks,
    collision_registry: dict[tuple[int, ...], int],
) -> tuple[int, ...]:
    """Quantize one embedding and append the next free identification digit.

    The registry maps each semantic prefix to its next free counter; the
    counter range equals the codebook size, and exhausting it signals the
    codebooks are too coarse for the catalog.
    """
    prefix = codebooks.quantize(embedding)
    counter = collision_registry.get(prefix, 0)
    if counter >= codebooks.codebook_size:
        raise CapacityError(
            f"identification vocabulary exhausted for prefix {prefix}"
        )
    collision_registry[prefix] = counter + 1
    return prefix + (counter,)


@dataclass
class Catalog:
    """Immutable-after-build item registry.

    Internal indices are contiguous 0..N-1 and biject with external ids.
    """

    layout: TokenLayout
    codebooks: Codebooks
    external_ids: list[str] = field(default_factory=list)
    embeddings: np.ndarray | None = None  # N x d, rows L2-normalized
    semantic_ids: list[tuple[int, ...]] = field(default_factory=list)
    seen_in_training: np.ndarray | None = None
    _index_of: dict[str, int] = field(default_factory=dict)
    _trie: dict[tuple[int, ...], list[int]] = field(default_factory=dict)
    _id_to_item: dict[tuple[int, ...], int] = field(default_factory=dict)
    _registry: dict[tuple[int, ...], int] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        external_ids: list[str],
        embeddings: np.ndarray,
        seen_in_training: np.ndarray,
        layout: TokenLayout,
        codebooks: Codebooks,
    ) -> "Catalog":
        if codebooks.levels != layout.num_levels - 1:
            raise ValueError("codebook levels must equal num_levels - 1")
        if codebooks.codebook_size != layout.codebook_size:
            raise ValueError("codebook size must match the token layout")
        if len(set(external_ids)) != len(external_ids):
            raise ValueError("external ids must be unique")
        cat = cls(layout=layout, codebooks=codebooks)
        cat.embeddings = _l2_normalize(np.asarray(embeddings, dtype=np.float64))
        seen = np.asarray(seen_in_training, dtype=bool)
        cat.seen_in_training = seen
        for i, ext in enumerate(external_ids):
            cat._append(ext, cat.embeddings[i])
        return cat

    def _append(self, external: str, embedding: np.ndarray) -> int:
        idx = len(self.external_ids)
        sid = assign_semantic_id(embedding, self.codebooks, self._registry)
        self.external_ids.append(external)
        self.semantic_ids.append(sid)
        self._index_of[external] = idx
        self._id_to_item[sid] = idx
        for j in range(len(sid) + 1):
            self._trie.setdefault(sid[:j], []).append(idx)
        return idx

    def add_item(self, external: str, embedding: np.ndarray, seen: bool = False) -> int:
        """Tokenize one new item against the frozen codebooks (build phase)."""
        if external in self._index_of:
            raise ValueError(f"duplicate external id {external!r}")
        vec = _l2_normalize(np.asarray(embedding, dtype=np.float64)[None, :])[0]
        self.embeddings = (
            vec[None, :]
            if self.embeddings is None
            else np.vstack([self.embeddings, vec])
        )
        self.seen_in_training = (
            np.array([seen])
            if self.seen_in_training is None
            else np.append(self.seen_in_training, seen)
        )
        return self._append(external, vec)

    def __len__(self) -> int:
        return len(self.external_ids)

    def index_of(self, external: str) -> int:
        return self._index_of[external]

    def semantic_id(self, item: int) -> tuple[int, ...]:
        return self.semantic_ids[item]

    def item_for_semantic_id(self, digits: tuple[int, ...]) -> int | None:
        return self._id_to_item.get(tuple(digits))

    def items_with_prefix(self, prefix: tuple[int, ...]) -> frozenset[int]:
        """All items whose semantic ID starts with ``prefix`` (may be empty)."""
        if len(prefix) > self.layout.num_levels:
            raise ValueError("prefix longer than a semantic ID")
        return frozenset(self._trie.get(tuple(prefix), ()))

    # -- artifact I/O -------------------------------------------------------

    def dump_semantic_ids(self, path: str | Path) -> None:
        """JSON-lines dump: one record per item, in internal-index order."""
        with open(path, "w") as fh:
            for i, ext in enumerate(self.external_ids):
                rec = {
                    "id": ext,
                    "digits": list(self.semantic_ids[i]),
                    "seen": bool(self.seen_in_training[i]),
                }
                fh.write(json.dumps(rec) + "\n")


def write_embedding_file(
    path: str | Path, ids: list[str], matrix: np.ndarray
) -> None:
    """Row-major little-endian float32 matrix plus a JSON sidecar header."""
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    if mat.ndim != 2 or mat.shape[0] != len(ids):
        raise FormatError("matrix shape does not match id list")
    path = Path(path)
    path.write_bytes(mat.tobytes())
    header = {"rows": mat.shape[0], "cols": mat.shape[1], "ids": list(ids)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(header))


def read_embedding_file(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    rows, cols = header["rows"], header["cols"]
    raw = path.read_bytes()
    expected = rows * cols * 4
    if len(raw) != expected:
        raise FormatError(
            f"embedding file is {len(raw)} bytes, header implies {expected} "
            f"(mismatch at byte {min(len(raw), expected)})"
        )
    mat = np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float64)
    if len(header["ids"]) != rows:
        raise FormatError("header id list length does not match row count")
    return list(header["ids"]), mat
