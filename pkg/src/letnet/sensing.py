"""Sensing operator, synthetic sparse signals, noisy measurements and datasets.

The measurement model is ``y = A x + xi`` with Gaussian ``A``.  Everything an
unrolled network needs from ``A`` is cached on :class:`SensingModel`: the step
size ``eta``, the recurrent weight ``W = I - eta A^T A`` and the bias map
``y -> eta A^T y``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from os import PathLike
from typing import Sequence

import numpy as np

from .errors import (
    DatasetCorruptError,
    DatasetFormatError,
    DegenerateSignalError,
    DomainError,
    InvalidDimensionError,
    ShapeError,
)

SPLITS = ("train", "validation", "test")
DATASET_MAGIC = b"LETD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIQQQQ")


def spectral_norm(A: np.ndarray, iters: int = 100) -> float:
    """Largest singular value of ``A`` by power iteration on ``A^T A``.

    The start vector is the normalized all-ones vector, so the estimate is a
    deterministic function of ``A``.
    """
    A = np.asarray(A, dtype=float)
    v = np.ones(A.shape[1]) / math.sqrt(A.shape[1])
    for _ in range(iters):
        w = A.T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
    return float(np.linalg.norm(A @ v))


@dataclass(frozen=True, eq=False)
class SensingModel:
    """Sensing matrix with its derived unrolling quantities.

    Attributes:
        A: (m, n) sensing matrix.
        eta: gradient step size.
        W: cached ``I - eta A^T A``.
    """

    A: np.ndarray
    eta: float
    W: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or min(A.shape) == 0:
            raise InvalidDimensionError(f"A must be a non-empty matrix, got shape {A.shape}")
        if A.shape[0] > A.shape[1]:
            raise InvalidDimensionError("expected m <= n")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise DomainError(f"eta must be positive, got {self.eta}")
        if self.eta * np.linalg.norm(A, 2) ** 2 >= 2.0:
            raise DomainError("eta * ||A||^2 must be below 2 for a stable iteration")
        A.setflags(write=False)
        W = np.eye(A.shape[1]) - self.eta * (A.T @ A)
        W.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "W", W)

    @classmethod
    def from_matrix(cls, A: np.ndarray, eta: float | None = None) -> "SensingModel":
        """Wrap ``A``; by default ``eta = 0.99 / ||A||^2``."""
        if eta is None:
            eta = 0.99 / spectral_norm(A) ** 2
        return cls(A, eta)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def bias(self, y: np.ndarray) -> np.ndarray:
        """Map measurements of shape (..., m) to ``eta A^T y`` of shape (..., n)."""
        return self.eta * (np.asarray(y, dtype=float) @ self.A)


def build_sensing_model(m: int, n: int, rng_seed: int) -> SensingModel:
    """Draw ``A`` with i.i.d. N(0, 1/m) entries."""
    if m <= 0 or n <= 0:
        raise InvalidDimensionError(f"m and n must be positive, got m={m}, n={n}")
    if m > n:
        raise InvalidDimensionError(f"need m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(rng_seed)
    A = rng.standard_normal((m, n)) / math.sqrt(m)
    return SensingModel.from_matrix(A)


@dataclass(frozen=True, eq=False)
class SparseSignal:
    x: np.ndarray
    rho: float


@dataclass(frozen=True, eq=False)
class Measurement:
    y: np.ndarray
    b: np.ndarray
    snr_input_db: float


def gen_sparse_signal(n: int, rho: float, rng: np.random.Generator) -> SparseSignal:
    """Bernoulli(rho) support times standard Gaussian magnitudes."""
    if not 0.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [0, 1], got {rho}")
    supp = rng.random(n) < rho
    mag = rng.standard_normal(n)
    return SparseSignal(np.where(supp, mag, 0.0), float(rho))


def measure(
    model: SensingModel, x: SparseSignal | np.ndarray, snr_input_db: float, rng: np.random.Generator
) -> Measurement:
    """Noisy measurement with noise rescaled to hit ``snr_input_db`` exactly.

    The SNR is ``20 log10(||Ax|| / ||xi||)``; ``inf`` gives ``y = Ax``.
    """
    xv = x.x if isinstance(x, SparseSignal) else np.asarray(x, dtype=float)
    clean = model.A @ xv
    if math.isinf(snr_input_db) and snr_input_db > 0:
        y = clean
    else:
        energy = np.linalg.norm(clean)
        if energy == 0.0:
            raise DegenerateSignalError("Ax = 0 cannot be measured at a finite SNR")
        xi = rng.standard_normal(model.m)
        xi *= energy / (np.linalg.norm(xi) * 10.0 ** (snr_input_db / 20.0))
        y = clean + xi
    return Measurement(y, model.bias(y), float(snr_input_db))


@dataclass(frozen=True, eq=False)
class Split:
    """Stacked arrays for one split: ``y`` (N, m), ``b`` (N, n), ``x`` (N, n)."""

    y: np.ndarray
    b: np.ndarray
    x: np.ndarray
    snr_db: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass(eq=False)
class Dataset:
    """Measurement/signal pairs sharing one sensing model.

    ``tags[i]`` is the split index (0 train, 1 validation, 2 test) of pair i.
    """

    model: SensingModel
    pairs: list[tuple[Measurement, SparseSignal]]
    tags: list[int]
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.tags) != len(self.pairs):
            raise ShapeError("one split tag per pair is required")
        if any(t not in (0, 1, 2) for t in self.tags):
            raise DomainError("split tags must be 0, 1 or 2")

    def __len__(self) -> int:
        return len(self.pairs)

    def split(self, name: str | int) -> Split:
        code = SPLITS.index(name) if isinstance(name, str) else int(name)
        idx = [i for i, t in enumerate(self.tags) if t == code]
        m, n = self.model.m, self.model.n
        y = np.array([self.pairs[i][0].y for i in idx]).reshape(len(idx), m)
        x = np.array([self.pairs[i][1].x for i in idx]).reshape(len(idx), n)
        snr = np.array([self.pairs[i][0].snr_input_db for i in idx], dtype=float)
        return Split(y, self.model.bias(y), x, snr)


def generate_dataset(
    model: SensingModel,
    rho: float,
    snr_input_db: float,
    counts: Sequence[int],
    seed: int,
) -> Dataset:
    """Generate ``counts = (n_train, n_val, n_test)`` pairs.

    Each pair draws from its own child of ``SeedSequence(seed)``, so the result
    does not depend on generation order.
    """
    if len(counts) != 3 or any(c < 0 for c in counts):
        raise DomainError("counts must be three non-negative integers")
    tags = [t for t, c in enumerate(counts) for _ in range(c)]
    children = np.random.SeedSequence(seed).spawn(len(tags))
    pairs = []
    for child in children:
        rng = np.random.default_rng(child)
        sig = gen_sparse_signal(model.n, rho, rng)
        # an all-zero draw has no measurable SNR and no reconstruction SNR; redraw
        while not np.any(sig.x) and rho > 0.0:
            sig = gen_sparse_signal(model.n, rho, rng)
        pairs.append((measure(model, sig, snr_input_db, rng), sig))
    return Dataset(model, pairs, tags, seed)


def _record_dtype(m: int, n: int) -> np.dtype:
    return np.dtype([("y", "<f8", (m,)), ("x", "<f8", (n,)), ("snr", "<f8"), ("tag", "u1")])


def save_dataset(d: Dataset, path: str | PathLike) -> None:
    """Write the binary LETD file.  ``eta`` is recomputed from ``A`` on load."""
    m, n, N = d.model.m, d.model.n, len(d)
    rec = np.zeros(N, dtype=_record_dtype(m, n))
    for i, ((meas, sig), tag) in enumerate(zip(d.pairs, d.tags)):
        rec[i] = (meas.y, sig.x, meas.snr_input_db, tag)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, m, n, N, d.seed))
        fh.write(d.model.A.astype("<f8").tobytes())
        fh.write(rec.tobytes())


def load_dataset(path: str | PathLike) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DATASET_MAGIC:
        raise DatasetFormatError(f"bad magic {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise DatasetCorruptError("truncated header")
    _, version, m, n, N, seed = _HEADER.unpack_from(raw)
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    dt = _record_dtype(m, n)
    expected = _HEADER.size + 8 * m * n + dt.itemsize * N
    if len(raw) != expected:
        raise DatasetCorruptError(f"expected {expected} bytes, found {len(raw)}")
    A = np.frombuffer(raw, dtype="<f8", count=m * n, offset=_HEADER.size).reshape(m, n)
    rec = np.frombuffer(raw, dtype=dt, count=N, offset=_HEADER.size + 8 * m * n)
    model = SensingModel.from_matrix(A.astype(float))
    pairs = []
    for r in rec:
        y = np.array(r["y"], dtype=float)
        # rho is a generation parameter and is not stored per record
        pairs.append((Measurement(y, model.bias(y), float(r["snr"])), SparseSignal(np.array(r["x"], dtype=float), math.nan)))
    return Dataset(model, pairs, [int(t) for t in rec["tag"]], int(seed))
