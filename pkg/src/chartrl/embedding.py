"""Image-embedding backends and the vector machinery built on them.

Heavyweight encoders are remote services; offline work runs on a pure
deterministic stub (32x32 grayscale, mean-centered, L2-normalized) that
still responds to gross structural differences between charts.  On top of
the embeddings:

* cosine similarity (the visual-consistency score),
* seeded k-means++ / Lloyd clustering with per-iteration SSE,
* representative sampling (nearest member to each centroid),
* multi-encoder nearest-neighbor retrieval with averaged scores.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import requests
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, EncoderMismatch, EncoderUnavailable, ZeroVector

STUB_ENCODER_ID = "stub-gray32"
STUB_DIMENSION = 1024

KMEANS_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Fixed-length embedding tagged with the encoder that produced it."""

    values: np.ndarray
    encoder_id: str

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("feature vectors must be non-empty 1-D arrays")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature vectors must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)


class DeterministicStubEncoder:
    """Pure test-time encoder: same image bytes always give the same vector.

    Pixels are grayscale-downsampled to 32x32, mapped to [0,1], centered at
    0.5 and L2-normalized.  Centering keeps constant images apart (a raw
    pixel vector would make every uniform image parallel to every other,
    and an all-black image would embed to the zero vector).
    """

    kind = "deterministic-stub"
    encoder_id = STUB_ENCODER_ID
    dimension = STUB_DIMENSION

    def embed(self, image: bytes) -> FeatureVector:
        try:
            with Image.open(io.BytesIO(image)) as img:
                gray = img.convert("L").resize((32, 32), Image.Resampling.BILINEAR)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise DecodeError(f"image bytes do not decode: {exc}") from exc
        values = np.asarray(gray, dtype=np.float64).reshape(-1) / 255.0 - 0.5
        norm = np.linalg.norm(values)
        if norm < 1e-12:
            # Pathological case: every downsampled cell averages exactly to
            # mid-gray.  Fall back to a fixed canonical direction.
            values = np.zeros(self.dimension)
            values[0] = 1.0
            return FeatureVector(values=values, encoder_id=self.encoder_id)
        return FeatureVector(values=values / norm, encoder_id=self.encoder_id)


class RemoteEncoder:
    """HTTP encoder backend: POST base64 image, receive a float array."""

    kind = "remote-service"

    def __init__(self, endpoint: str, encoder_id: str, dimension: int, timeout: float = 60.0):
        self.endpoint = endpoint
        self.encoder_id = encoder_id
        self.dimension = dimension
        self.timeout = timeout
        self.session = requests.Session()

    def embed(self, image: bytes) -> FeatureVector:
        payload = {"image_b64": base64.b64encode(image).decode("ascii")}
        try:
            response = self.session.post(self.endpoint, json=payload, timeout=self.timeout)
            response.raise_for_status()
            values = np.asarray(response.json()["embedding"], dtype=np.float64)
        except requests.RequestException as exc:
            raise EncoderUnavailable(f"encoder {self.encoder_id} unreachable: {exc}") from exc
        except (KeyError, ValueError) as exc:
            raise EncoderUnavailable(f"malformed encoder response: {exc}") from exc
        if values.size != self.dimension:
            raise EncoderUnavailable(
                f"encoder {self.encoder_id} returned {values.size} dims, "
                f"expected {self.dimension}"
            )
        return FeatureVector(values=values, encoder_id=self.encoder_id)


def embed(image: bytes, backend) -> FeatureVector:
    """Embed one image under the given backend."""
    return backend.embed(image)


class VectorCache:
    """On-disk embedding cache keyed by (encoder_id, image SHA-256)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, encoder_id: str, image_sha256: str) -> Path:
        return self.root / encoder_id / f"{image_sha256}.npy"

    def get(self, encoder_id: str, image_sha256: str) -> FeatureVector | None:
        path = self._path(encoder_id, image_sha256)
        if not path.exists():
            return None
        return FeatureVector(values=np.load(path), encoder_id=encoder_id)

    def put(self, image_sha256: str, vector: FeatureVector) -> None:
        path = self._path(vector.encoder_id, image_sha256)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, np.asarray(vector.values))


def _check_comparable(a: FeatureVector, b: FeatureVector) -> None:
    if a.encoder_id != b.encoder_id:
        raise EncoderMismatch(f"cannot compare {a.encoder_id!r} with {b.encoder_id!r}")
    if len(a) != len(b):
        raise EncoderMismatch(
            f"dimension mismatch under encoder {a.encoder_id!r}: {len(a)} vs {len(b)}"
        )


def cosine_similarity(a: FeatureVector, b: FeatureVector) -> float:
    """Cosine similarity in [-1, 1] between two same-encoder vectors.

    Raises:
        EncoderMismatch: different encoders or dimensions.
        ZeroVector: either vector has zero norm.
    """
    _check_comparable(a, b)
    norm_a = np.linalg.norm(a.values)
    norm_b = np.linalg.norm(b.values)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity is undefined for zero vectors")
    value = float(np.dot(a.values, b.values) / (norm_a * norm_b))
    return max(-1.0, min(1.0, value))


def _as_matrix(vectors: Sequence[FeatureVector]) -> np.ndarray:
    if not vectors:
        raise ValueError("at least one vector required")
    encoder_id = vectors[0].encoder_id
    dim = len(vectors[0])
    for v in vectors[1:]:
        if v.encoder_id != encoder_id or len(v) != dim:
            raise EncoderMismatch("all vectors must share one encoder and dimension")
    return np.stack([v.values for v in vectors])


@dataclass(frozen=True)
class KMeansResult:
    """Converged clustering with the SSE trajectory of Lloyd's iterations."""

    assignments: np.ndarray
    centroids: np.ndarray
    sse_history: tuple[float, ...]
    n_iter: int

    @property
    def sse(self) -> float:
        return self.sse_history[-1]


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x||^2 - 2 x.c + ||c||^2, clamped at zero against rounding.
    sq = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.maximum(sq, 0.0)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _squared_distances(points, points[chosen])[:, 0]
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0.0:
            # Remaining mass is all duplicates of chosen points; take the
            # first unchosen index for determinism.
            remaining = [i for i in range(n) if i not in set(chosen)]
            chosen.append(remaining[0])
        else:
            idx = int(rng.choice(n, p=d2 / total))
            chosen.append(idx)
        d2 = np.minimum(d2, _squared_distances(points, points[[chosen[-1]]])[:, 0])
    return points[chosen].copy()


def kmeans(
    vectors: Sequence[FeatureVector] | np.ndarray,
    k: int,
    seed: int,
    max_iter: int = KMEANS_MAX_ITER,
) -> KMeansResult:
    """Seeded k-means++ / Lloyd clustering.

    Converges when no assignment changes or after ``max_iter`` iterations;
    deterministic for a fixed seed.  Empty clusters are reseeded to the
    point farthest from its assigned centroid.  The recorded SSE history is
    non-increasing.
    """
    points = vectors if isinstance(vectors, np.ndarray) else _as_matrix(list(vectors))
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= {n}, got {k}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    sse_history: list[float] = []

    def assign(current: np.ndarray, d2: np.ndarray) -> np.ndarray:
        # Sticky ties: a point equally close to its current centroid stays
        # put, so duplicate points cannot oscillate and re-empty a repaired
        # cluster.  Equal-distance choices leave the SSE unchanged.
        best = np.argmin(d2, axis=1)
        if current[0] >= 0:
            stay = d2[np.arange(n), current] <= d2[np.arange(n), best]
            best[stay] = current[stay]
        return best

    for iteration in range(1, max_iter + 1):
        d2 = _squared_distances(points, centroids)
        new_assignments = assign(assignments, d2)
        sse_history.append(float(d2[np.arange(n), new_assignments].sum()))
        if np.array_equal(new_assignments, assignments):
            return KMeansResult(
                assignments=assignments,
                centroids=centroids,
                sse_history=tuple(sse_history),
                n_iter=iteration,
            )
        assignments = new_assignments

        for cluster in range(k):
            members = np.flatnonzero(assignments == cluster)
            if members.size:
                centroids[cluster] = points[members].mean(axis=0)
            else:
                # Reseed an empty cluster at the point farthest from its own
                # assigned centroid, drawn from clusters that can spare a
                # member; claim the point so the donor stays non-empty.
                sizes = np.bincount(assignments, minlength=k)
                candidates = np.flatnonzero(sizes[assignments] > 1)
                dist_to_assigned = d2[candidates, assignments[candidates]]
                farthest = int(candidates[int(np.argmax(dist_to_assigned))])
                centroids[cluster] = points[farthest]
                assignments[farthest] = cluster
                d2[farthest, cluster] = 0.0

    d2 = _squared_distances(points, centroids)
    assignments = assign(assignments, d2)
    sse_history.append(float(d2[np.arange(n), assignments].sum()))
    return KMeansResult(
        assignments=assignments,
        centroids=centroids,
        sse_history=tuple(sse_history),
        n_iter=max_iter,
    )


def representative_sample(
    vectors: Sequence[FeatureVector] | np.ndarray, k: int, seed: int
) -> list[int]:
    """Indices of the k points nearest their cluster centroids, all distinct.

    Ties inside a cluster resolve to the lower index.
    """
    points = vectors if isinstance(vectors, np.ndarray) else _as_matrix(list(vectors))
    points = np.asarray(points, dtype=np.float64)
    result = kmeans(points, k, seed)

    picks: list[int] = []
    for cluster in range(k):
        members = np.flatnonzero(result.assignments == cluster)
        if members.size:
            dists = np.sum((points[members] - result.centroids[cluster]) ** 2, axis=1)
            picks.append(int(members[int(np.argmin(dists))]))
    # Degenerate duplicate-heavy inputs can leave a cluster empty; keep the
    # pick count at k with the lowest unused indices (any duplicate is an
    # equally good representative).
    if len(picks) < k:
        used = set(picks)
        picks.extend(i for i in range(points.shape[0]) if i not in used)
        picks = picks[:k]
    return picks


class NeighborMatch(NamedTuple):
    index: int
    score: float


def nearest_neighbors(
    queries: Sequence[Mapping[str, FeatureVector]],
    corpus: Sequence[Mapping[str, FeatureVector]],
    top_k: int,
) -> list[list[NeighborMatch]]:
    """Rank corpus items per query by encoder-averaged cosine similarity.

    Every query and corpus item must be embedded under the identical encoder
    set; per-encoder cosine scores are arithmetically averaged, rankings are
    descending and ties break toward the lower corpus index.
    """
    if not queries or not corpus:
        raise ValueError("queries and corpus must be non-empty")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")

    encoder_ids = sorted(queries[0].keys())
    for item in list(queries) + list(corpus):
        if sorted(item.keys()) != encoder_ids:
            raise EncoderMismatch(
                f"every item must be embedded under encoders {encoder_ids}, "
                f"found {sorted(item.keys())}"
            )

    scores = np.zeros((len(queries), len(corpus)))
    for encoder_id in encoder_ids:
        q = _as_matrix([item[encoder_id] for item in queries])
        c = _as_matrix([item[encoder_id] for item in corpus])
        if q.shape[1] != c.shape[1]:
            raise EncoderMismatch(f"dimension mismatch under encoder {encoder_id!r}")
        q_norm = np.linalg.norm(q, axis=1)
        c_norm = np.linalg.norm(c, axis=1)
        if np.any(q_norm == 0.0) or np.any(c_norm == 0.0):
            raise ZeroVector(f"zero vector under encoder {encoder_id!r}")
        scores += (q / q_norm[:, None]) @ (c / c_norm[:, None]).T
    scores /= len(encoder_ids)

    k = min(top_k, len(corpus))
    results: list[list[NeighborMatch]] = []
    for row in scores:
        order = np.argsort(-row, kind="stable")[:k]
        results.append([NeighborMatch(int(i), float(row[i])) for i in order])
    return results
