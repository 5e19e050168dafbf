"""Test-set loading, validation, sampling, feature derivation, and distances.

A TestSet is the immutable unit every other module consumes: an ordered
collection of points, each carrying a derived feature vector, the audited
classifier's confidence in its own prediction, the predicted class, and
(only for simulated oracles) an optional hidden true label.

Interchange formats:

* CSV: header ``id,f0,...,f{p-1},confidence,predicted_class`` plus optional
  ``true_label`` and ``display_uri`` columns; UTF-8, decimal point.
* JSONL: one object per point with keys ``id, features, confidence,
  predicted_class`` and optional ``true_label``, ``display_uri``.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionError, SchemaError, SizeError, ValidationError

_OPTIONAL_COLUMNS = ("true_label", "display_uri")


@dataclass(frozen=True, eq=False)
class TestPoint:
    """One unlabeled prediction to be audited."""

    __test__ = False  # not a pytest class, despite the name

    id: str
    features: np.ndarray
    confidence: float
    predicted_class: str
    true_label: str | None = None
    display_uri: str | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 1:
            raise DimensionError(f"point {self.id!r}: features must be a 1-d vector")
        if not np.all(np.isfinite(feats)):
            raise ValidationError(f"point {self.id!r}: non-finite feature value")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if not np.isfinite(self.confidence) or not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(
                f"point {self.id!r}: confidence {self.confidence} outside [0, 1]"
            )


class TestSet:
    """Immutable ordered collection of TestPoints sharing one feature space."""

    __test__ = False  # not a pytest class, despite the name

    def __init__(self, points: Sequence[TestPoint], critical_class: str | None = None):
        points = tuple(points)
        if not points:
            raise ValidationError("a TestSet needs at least one point")
        p = points[0].features.shape[0]
        seen: set[str] = set()
        for pt in points:
            if pt.features.shape[0] != p:
                raise DimensionError(
                    f"point {pt.id!r} has {pt.features.shape[0]} features, expected {p}"
                )
            if pt.id in seen:
                raise ValidationError(f"duplicate point id {pt.id!r}")
            seen.add(pt.id)
        self._points = points
        self._critical_class = critical_class
        self._index = {pt.id: i for i, pt in enumerate(points)}
        self._ids = tuple(pt.id for pt in points)
        self._predicted = [pt.predicted_class for pt in points]
        X = np.stack([pt.features for pt in points])
        X.setflags(write=False)
        self._X = X
        conf = np.array([pt.confidence for pt in points], dtype=float)
        conf.setflags(write=False)
        self._conf = conf
        if critical_class is not None:
            predicted = {pt.predicted_class for pt in points}
            if critical_class not in predicted:
                warnings.warn(
                    f"critical_class {critical_class!r} never appears among "
                    "predicted classes",
                    stacklevel=2,
                )

    @property
    def points(self) -> tuple[TestPoint, ...]:
        return self._points

    @property
    def critical_class(self) -> str | None:
        return self._critical_class

    @property
    def n(self) -> int:
        return len(self._points)

    @property
    def p(self) -> int:
        return self._X.shape[1]

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def features(self) -> np.ndarray:
        """Read-only (n, p) feature matrix in point order."""
        return self._X

    @property
    def confidences(self) -> np.ndarray:
        return self._conf

    @property
    def predicted_classes(self) -> list[str]:
        return list(self._predicted)

    @property
    def classes(self) -> list[str]:
        """All class labels observed in predictions or true labels, sorted."""
        labels = {pt.predicted_class for pt in self._points}
        labels.update(pt.true_label for pt in self._points if pt.true_label is not None)
        return sorted(labels)

    def has_true_labels(self) -> bool:
        return all(pt.true_label is not None for pt in self._points)

    def index_of(self, point_id: str) -> int:
        try:
            return self._index[point_id]
        except KeyError:
            raise ValidationError(f"unknown point id {point_id!r}") from None

    def __contains__(self, point_id: str) -> bool:
        return point_id in self._index

    def point(self, point_id: str) -> TestPoint:
        return self._points[self.index_of(point_id)]

    def subset(self, indices: Iterable[int]) -> "TestSet":
        pts = [self._points[i] for i in indices]
        return TestSet(pts, critical_class=self._critical_class)

    def __len__(self) -> int:
        return self.n


def load_testset(
    path: str | Path,
    fmt: str | None = None,
    critical_class: str | None = None,
) -> TestSet:
    """Load a TestSet from a CSV or JSONL file, preserving row order.

    ``fmt`` is ``"csv"`` or ``"jsonl"``; when omitted it is inferred from the
    file suffix.
    """
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv"
    if fmt not in ("csv", "jsonl"):
        raise SchemaError(f"unsupported format {fmt!r}; expected csv or jsonl")
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    text = path.read_text(encoding="utf-8")
    if fmt == "csv":
        points = _parse_csv(text)
    else:
        points = _parse_jsonl(text)
    return TestSet(points, critical_class=critical_class)


def _feature_columns(header: list[str]) -> list[str]:
    fcols = [c for c in header if c.startswith("f") and c[1:].isdigit()]
    if not fcols:
        raise SchemaError("missing column 'f0' (no feature columns found)")
    p = len(fcols)
    expected = [f"f{j}" for j in range(p)]
    if sorted(fcols, key=lambda c: int(c[1:])) != expected:
        missing = sorted(set(expected) - set(fcols), key=lambda c: int(c[1:]))
        raise SchemaError(
            f"feature columns must be f0..f{p - 1} with no gaps; missing {missing}"
        )
    return expected


def _parse_csv(text: str) -> list[TestPoint]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty file: no header row") from None
    for required in ("id", "confidence", "predicted_class"):
        if required not in header:
            raise SchemaError(f"missing column {required!r}")
    fcols = _feature_columns(header)
    known = {"id", "confidence", "predicted_class", *fcols, *_OPTIONAL_COLUMNS}
    unknown = [c for c in header if c not in known]
    if unknown:
        raise SchemaError(f"unexpected columns {unknown}")
    col = {name: header.index(name) for name in header}
    points = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DimensionError(
                f"line {lineno}: expected {len(header)} fields, got {len(row)}"
            )
        pid = row[col["id"]]
        try:
            feats = np.array([float(row[col[c]]) for c in fcols])
            conf = float(row[col["confidence"]])
        except ValueError as exc:
            raise ValidationError(f"row {pid!r} (line {lineno}): {exc}") from None
        tl = row[col["true_label"]] if "true_label" in col else ""
        uri = row[col["display_uri"]] if "display_uri" in col else ""
        try:
            points.append(
                TestPoint(
                    id=pid,
                    features=feats,
                    confidence=conf,
                    predicted_class=row[col["predicted_class"]],
                    true_label=tl or None,
                    display_uri=uri or None,
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"row {pid!r} (line {lineno}): {exc}") from None
    return points


def _parse_jsonl(text: str) -> list[TestPoint]:
    points = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {lineno}: invalid JSON ({exc})") from None
        for required in ("id", "features", "confidence", "predicted_class"):
            if required not in obj:
                raise SchemaError(f"line {lineno}: missing key {required!r}")
        unknown = set(obj) - {"id", "features", "confidence", "predicted_class",
                              *_OPTIONAL_COLUMNS}
        if unknown:
            raise SchemaError(f"line {lineno}: unexpected keys {sorted(unknown)}")
        try:
            points.append(
                TestPoint(
                    id=str(obj["id"]),
                    features=np.asarray(obj["features"], dtype=float),
                    confidence=float(obj["confidence"]),
                    predicted_class=str(obj["predicted_class"]),
                    true_label=obj.get("true_label"),
                    display_uri=obj.get("display_uri"),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    return points


def write_testset(ts: TestSet, path: str | Path, fmt: str | None = None) -> None:
    """Write a TestSet so that reloading reproduces it value-exactly.

    Floats are serialized with ``repr``, which round-trips float64 bits.
    """
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv"
    has_tl = any(pt.true_label is not None for pt in ts.points)
    has_uri = any(pt.display_uri is not None for pt in ts.points)
    if fmt == "csv":
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            header = ["id"] + [f"f{j}" for j in range(ts.p)] + [
                "confidence", "predicted_class"]
            if has_tl:
                header.append("true_label")
            if has_uri:
                header.append("display_uri")
            writer.writerow(header)
            for pt in ts.points:
                row = [pt.id, *[repr(v) for v in pt.features.tolist()],
                       repr(pt.confidence), pt.predicted_class]
                if has_tl:
                    row.append(pt.true_label or "")
                if has_uri:
                    row.append(pt.display_uri or "")
                writer.writerow(row)
    elif fmt == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for pt in ts.points:
                obj: dict = {
                    "id": pt.id,
                    "features": pt.features.tolist(),
                    "confidence": pt.confidence,
                    "predicted_class": pt.predicted_class,
                }
                if pt.true_label is not None:
                    obj["true_label"] = pt.true_label
                if pt.display_uri is not None:
                    obj["display_uri"] = pt.display_uri
                fh.write(json.dumps(obj) + "\n")
    else:
        raise SchemaError(f"unsupported format {fmt!r}; expected csv or jsonl")


def sample_testset(ts: TestSet, n: int, seed: int) -> TestSet:
    """Uniform sample of ``n`` points without replacement, seeded."""
    if n < 1:
        raise SizeError(f"sample size must be >= 1, got {n}")
    if n > ts.n:
        raise SizeError(f"sample size {n} exceeds test set size {ts.n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(ts.n, size=n, replace=False)
    return ts.subset(idx.tolist())


def euclidean_distance(x: np.ndarray, q: np.ndarray) -> float:
    """L2 distance between two equal-length vectors."""
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    if x.shape != q.shape:
        raise DimensionError(f"length mismatch: {x.shape} vs {q.shape}")
    return float(np.linalg.norm(x - q))


def distances_to(X: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distances from every row of X to the single point q."""
    return cdist(X, q[None, :])[:, 0]


def pairwise_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Dense Euclidean distance matrix between rows of A and rows of B."""
    return cdist(A, B)


def max_pairwise_distance(X: np.ndarray, chunk: int = 512) -> float:
    """Diameter of the point cloud (0 for a single point), chunked in memory."""
    n = X.shape[0]
    best = 0.0
    for start in range(0, n, chunk):
        block = cdist(X[start:start + chunk], X)
        best = max(best, float(block.max()))
    return best


def derive_features(
    raw: np.ndarray,
    k: int,
    seed: int = 0,
    center: bool = False,
    tol: float = 1e-8,
    max_iter: int = 5000,
) -> np.ndarray:
    """Rank-k score matrix (left singular vectors scaled by singular values).

    Uses power iteration with deflation on the raw matrix, so the result is
    deterministic for a fixed ``seed``. ``center`` optionally subtracts the
    column means first (off by default).
    """
    A = np.asarray(raw, dtype=float)
    if A.ndim != 2:
        raise DimensionError("raw matrix must be 2-d")
    if not np.all(np.isfinite(A)):
        raise ValidationError("raw matrix contains non-finite entries")
    n, m = A.shape
    if not 1 <= k <= min(n, m):
        raise DimensionError(f"k={k} out of range [1, {min(n, m)}]")
    if center:
        A = A - A.mean(axis=0)
    else:
        A = A.copy()
    rng = np.random.default_rng(seed)
    scores = np.zeros((n, k))
    for comp in range(k):
        v = rng.standard_normal(m)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        v /= norm
        for _ in range(max_iter):
            w = A.T @ (A @ v)
            norm = np.linalg.norm(w)
            if norm <= tol**2:
                # remaining spectrum is numerically zero
                v = None
                break
            w /= norm
            # sign-align to measure convergence up to the +-v ambiguity
            if w @ v < 0:
                w = -w
            delta = np.max(np.abs(w - v))
            v = w
            if delta < tol:
                break
        if v is None:
            break
        u = A @ v
        sigma = np.linalg.norm(u)
        if sigma <= tol:
            break
        scores[:, comp] = u  # u = (unit left vector) * sigma
        A -= np.outer(u / sigma, v) * sigma
    return scores
