"""Datasets, feature domains, loaders and ClusterMatch-style subpopulations."""
import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureDomain:
    """Axis-aligned box of admissible feature vectors."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).ravel()
        hi = np.asarray(self.hi, dtype=np.float64).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise DataError("domain bounds must be nonempty and of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DataError("domain bounds must be finite")
        if np.any(lo > hi):
            raise DataError("domain has lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def box(cls, dim, lo=0.0, hi=1.0):
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self):
        return self.lo.size

    def contains(self, x, atol=1e-12):
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - atol) and np.all(x <= self.hi + atol))

    def clip(self, X):
        return np.clip(X, self.lo, self.hi)

    def max_norm2(self):
        """sup of ||x||_2 over the box."""
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size=(size, self.dim))


@dataclass(frozen=True)
class L1Ball:
    """{x : ||x||_1 <= radius}; only used for the hinge closeness checks."""

    dim: int
    radius: float

    def contains(self, x, atol=1e-12):
        return bool(np.abs(np.asarray(x)).sum() <= self.radius + atol)

    def max_norm2(self):
        return float(self.radius)


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    domain: FeatureDomain
    # per-column (min, max) used by min-max normalisation, reusable on a test split
    scale: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.X.shape[0] != self.y.size:
            raise DataError(f"{self.X.shape[0]} feature rows but {self.y.size} labels")
        if self.X.shape[1] != self.domain.dim:
            raise DataError(f"feature dimension {self.X.shape[1]} != domain dimension {self.domain.dim}")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise DataError("labels must be -1 or +1")

    @property
    def n(self):
        return self.y.size

    @property
    def dim(self):
        return self.X.shape[1]

    def __len__(self):
        return self.y.size

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.domain, self.scale)

    def concat(self, other):
        return Dataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]), self.domain, self.scale)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _label_lookup(label_map):
    if label_map is None:
        return None
    table = {}
    for k, v in label_map.items():
        if int(v) not in (-1, 1):
            raise DataError(f"label map sends {k!r} to {v!r}; targets must be -1 or +1")
        table[str(k).strip()] = int(v)
        try:
            table[float(k)] = int(v)
        except (TypeError, ValueError):
            pass
    return table


def _map_label(raw, table, where):
    raw = str(raw).strip()
    if table is None:
        try:
            val = float(raw)
        except ValueError:
            raise DataError(f"{where}: unmappable label {raw!r}") from None
        if val not in (-1.0, 1.0):
            raise DataError(f"{where}: label {raw!r} is not -1/+1 and no label map was given")
        return int(val)
    if raw in table:
        return table[raw]
    try:
        return table[float(raw)]
    except (ValueError, KeyError):
        raise DataError(f"{where}: unmappable label {raw!r}") from None


def _read_csv(path, label_column, table):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError("empty dataset")
    header = [h.strip() for h in rows[0]]
    if label_column is None:
        raise DataError("csv format needs label_column")
    if label_column not in header:
        raise DataError(f"label column {label_column!r} not in header")
    li = header.index(label_column)
    X, y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        y.append(_map_label(row[li], table, f"line {lineno}"))
        try:
            X.append([float(c) for i, c in enumerate(row) if i != li])
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric feature") from None
    if not y:
        raise DataError("empty dataset")
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)


def _read_libsvm(path, dim, table):
    X, y = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            y.append(_map_label(parts[0], table, f"line {lineno}"))
            row = np.zeros(dim)
            for tok in parts[1:]:
                try:
                    idx, val = tok.split(":")
                    idx = int(idx)
                    val = float(val)
                except ValueError:
                    raise DataError(f"line {lineno}: malformed entry {tok!r}") from None
                if idx < 1 or idx > dim:
                    raise DataError(f"line {lineno}: index {idx} outside 1..{dim}")
                row[idx - 1] = val
            X.append(row)
    if not y:
        raise DataError("empty dataset")
    return np.vstack(X), np.asarray(y, dtype=np.float64)


def _open_maybe_gz(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path):
    """Read an MNIST-style IDX file into a uint8/ndarray of the stored shape."""
    with _open_maybe_gz(path) as fh:
        head = fh.read(4)
        if len(head) != 4 or head[0] != 0 or head[1] != 0:
            raise DataError(f"{path}: bad IDX magic")
        dtype_code, ndim = head[2], head[3]
        dtypes = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
        if dtype_code not in dtypes:
            raise DataError(f"{path}: unknown IDX dtype 0x{dtype_code:02x}")
        shape = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=dtypes[dtype_code])
    if data.size != int(np.prod(shape)):
        raise DataError(f"{path}: payload size does not match header {shape}")
    return data.reshape(shape)


def _read_idx_pair(images_path, labels_path, table):
    if labels_path is None:
        raise DataError("idx-pair format needs labels_path")
    if table is None:
        raise DataError("idx-pair format needs a label map (digit filter)")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError("image and label counts differ")
    keep = np.array([float(l) in table for l in labels], dtype=bool)
    if not keep.any():
        raise DataError("empty dataset")
    X = images[keep].reshape(int(keep.sum()), -1).astype(np.float64) / 255.0
    y = np.array([table[float(l)] for l in labels[keep]], dtype=np.float64)
    return X, y


def fit_minmax(X):
    return X.min(axis=0), X.max(axis=0)


def apply_minmax(X, scale, domain):
    """Scale non-binary columns into the domain box; 0/1 columns pass through."""
    cmin, cmax = scale
    X = X.copy()
    binary = np.all((X == 0.0) | (X == 1.0), axis=0) & (cmin >= 0.0) & (cmax <= 1.0)
    span = np.where(cmax > cmin, cmax - cmin, 1.0)
    scaled = (X - cmin) / span
    scaled = domain.lo + scaled * (domain.hi - domain.lo)
    X[:, ~binary] = scaled[:, ~binary]
    return domain.clip(X)


def load_dataset(path, format, domain=None, *, label_map=None, label_column=None, labels_path=None,
                 dim=None, normalize="minmax", scale=None):
    """Load a labelled dataset and bring its features into ``domain``.

    ``label_map`` sends raw labels to -1/+1 and, for ``idx-pair``, doubles as the
    digit filter. ``scale`` reuses min-max parameters fitted on another split.
    Without a domain the unit box of the file's dimension is used; a (lo, hi) pair of
    scalars gives that box instead.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    table = _label_lookup(label_map)
    if format == "csv":
        X, y = _read_csv(path, label_column, table)
    elif format == "libsvm":
        d = dim if dim is not None else (domain.dim if isinstance(domain, FeatureDomain) else None)
        if d is None:
            raise DataError("libsvm format needs the feature dimension")
        X, y = _read_libsvm(path, int(d), table)
    elif format == "idx-pair":
        X, y = _read_idx_pair(path, labels_path, table)
    else:
        raise DataError(f"unknown format {format!r}")
    if domain is None:
        domain = FeatureDomain.box(X.shape[1])
    elif isinstance(domain, tuple):
        domain = FeatureDomain.box(X.shape[1], *domain)
    if X.shape[1] != domain.dim:
        raise DataError(f"dimension mismatch: file has {X.shape[1]} features, domain {domain.dim}")
    if format == "idx-pair" or normalize == "none":
        X = domain.clip(X)
    elif normalize == "minmax":
        scale = scale if scale is not None else fit_minmax(X)
        X = apply_minmax(X, scale, domain)
    else:
        raise DataError(f"unknown normalisation {normalize!r}")
    return Dataset(X, y, domain, scale)


def write_libsvm(path, X, y, keys=None):
    """Write rows as libsvm lines; ``keys`` adds a trailing ``# key`` comment per row."""
    with open(path, "w") as fh:
        for r in range(len(y)):
            parts = [f"{int(y[r]):+d}"]
            parts += [f"{k + 1}:{float(v)!r}" for k, v in enumerate(X[r]) if v != 0.0]
            if keys is not None:
                parts.append(f"# {keys[r]}")
            fh.write(" ".join(parts) + "\n")


# ---------------------------------------------------------------------------
# clustering and subpopulations
# ---------------------------------------------------------------------------

def _sqdist(X, centers):
    return (np.einsum("ij,ij->i", X, X)[:, None] - 2.0 * X @ centers.T
            + np.einsum("ij,ij->i", centers, centers)[None, :]).clip(min=0.0)


def kmeans(X, k, seed, max_iter=300):
    """k-means++ seeding then Lloyd iterations until assignments stop changing."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1:
        raise DataError("k must be positive")
    if k > n:
        raise DataError(f"k={k} exceeds the number of examples ({n})")
    rng = np.random.default_rng(seed)
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = _sqdist(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            raise DataError(f"k={k} exceeds the number of distinct rows")
        pick = int(np.searchsorted(np.cumsum(d2), rng.uniform(0.0, total), side="right"))
        pick = min(pick, n - 1)
        while d2[pick] == 0.0:  # guards the cumsum edge when uniform lands on a boundary
            pick = (pick + 1) % n
        centers[c] = X[pick]
        d2 = np.minimum(d2, _sqdist(X, centers[c:c + 1])[:, 0])
    assign = np.argmin(_sqdist(X, centers), axis=1)
    for _ in range(max_iter):
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(_sqdist(X, centers)[np.arange(n), assign]))
                centers[c] = X[far]
        new = np.argmin(_sqdist(X, centers), axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
    return assign, centers


def cluster_kmeans(data, k, seed, max_iter=300):
    return kmeans(data.X, k, seed, max_iter)[0]


@dataclass
class SubpopulationSpec:
    assignments: np.ndarray
    selected: list
    label_filter: int
    member_indices: dict
    centers: Optional[np.ndarray] = None
    accuracies: dict = field(default_factory=dict)

    def indices(self):
        """Union of member indices of all selected clusters, sorted."""
        if not self.selected:
            return np.zeros(0, dtype=np.intp)
        return np.sort(np.concatenate([self.member_indices[c] for c in self.selected]))

    def only(self, cluster):
        return SubpopulationSpec(self.assignments, [cluster], self.label_filter,
                                 {cluster: self.member_indices[cluster]}, self.centers, self.accuracies)

    def on(self, data):
        """Resolve the same subpopulations on another split by nearest centre."""
        if self.centers is None:
            raise DataError("subpopulation has no cluster centres to transfer")
        assign = np.argmin(_sqdist(data.X, self.centers), axis=1)
        members = {c: np.flatnonzero((assign == c) & (data.y == self.label_filter)) for c in self.selected}
        return SubpopulationSpec(assign, list(self.selected), self.label_filter, members,
                                 self.centers, self.accuracies)


def select_subpopulations(assignments, data, label_filter, clean_model, top_m, *,
                          centers=None, eval_data=None):
    """Keep ``label_filter`` members per cluster and pick the ``top_m`` clusters
    the clean model classifies best (ties to the lower cluster id).

    Accuracy is measured on ``eval_data`` members when centres are supplied,
    otherwise on the training members.
    """
    assignments = np.asarray(assignments)
    label_filter = int(label_filter)
    clusters = np.unique(assignments)
    members = {int(c): np.flatnonzero((assignments == c) & (data.y == label_filter)) for c in clusters}
    if eval_data is not None and centers is not None:
        ev_assign = np.argmin(_sqdist(eval_data.X, centers), axis=1)
        ev_members = {c: np.flatnonzero((ev_assign == c) & (eval_data.y == label_filter)) for c in members}
        ev_X, ev_y = eval_data.X, eval_data.y
    else:
        ev_members, ev_X, ev_y = members, data.X, data.y
    acc = {}
    for c, idx in ev_members.items():
        if len(members[c]) == 0 or len(idx) == 0:
            continue
        acc[c] = float(np.mean(clean_model.predict(ev_X[idx]) == ev_y[idx]))
    if not acc:
        raise DataError(f"no cluster has members with label {label_filter}")
    ranked = sorted(acc, key=lambda c: (-acc[c], c))
    selected = ranked[:max(int(top_m), 0)]
    return SubpopulationSpec(assignments, selected, label_filter,
                             {c: members[c] for c in selected}, centers, acc)


# ---------------------------------------------------------------------------
# synthetic suites
# ---------------------------------------------------------------------------

def make_two_gaussians(n=200, seed=0, sep=1.0, scale=0.8, bound=2.0):
    """Two isotropic 2-D Gaussians at +-(sep, sep), clipped to [-bound, bound]^2."""
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = rng.normal(0.0, scale, size=(n, 2)) + y[:, None] * sep
    domain = FeatureDomain.box(2, -bound, bound)
    return Dataset(domain.clip(X), y, domain)


def make_subpop_blobs(n=240, seed=0, scale=0.35, bound=3.0):
    """Four 2-D blobs, two per class, so clustering yields label-pure regions.

    Returns (train, test).
    """
    rng = np.random.default_rng(seed)
    means = np.array([[1.5, 1.5], [1.5, -1.5], [-1.5, 1.5], [-1.5, -1.5]])
    labels = np.array([1.0, -1.0, 1.0, -1.0])
    domain = FeatureDomain.box(2, -bound, bound)

    def draw(m):
        blob = np.arange(m) % 4
        X = means[blob] + rng.normal(0.0, scale, size=(m, 2))
        return Dataset(domain.clip(X), labels[blob], domain)

    return draw(n), draw(n // 2)
