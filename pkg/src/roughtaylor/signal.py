"""Driving signals: independent fBm components plus an optional time path."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cholesky

from .multiindex import ExponentVector

log = logging.getLogger(__name__)

CHOLESKY_LIMIT = 2048
_MAGIC = b"RTPATH01"


def fgn_autocovariance(H: float, n: int) -> np.ndarray:
    """Autocovariance of unit-step fractional Gaussian noise at lags ``0..n``."""
    k = np.arange(n + 1, dtype=float)
    return 0.5 * ((k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))


def fbm_covariance(H: float, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    s, t = np.asarray(s, float), np.asarray(t, float)
    return 0.5 * (s ** (2 * H) + t ** (2 * H) - np.abs(t - s) ** (2 * H))


def _circulant_eigenvalues(H: float, n: int) -> np.ndarray:
    gamma = fgn_autocovariance(H, n)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    return np.fft.fft(row).real


def _rng(seed: int, component: int, path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(component, path)))


def fbm_increments(H: float, n: int, T: float, normals: np.ndarray, method: str = "circulant") -> np.ndarray:
    """Map standard normals to fBm increments on ``n`` equal steps of ``[0, T]``.

    ``normals`` has shape ``(..., 4n)`` for the circulant method and
    ``(..., n)`` for Cholesky.
    """
    scale = (T / n) ** H
    if method == "circulant":
        lam = _circulant_eigenvalues(H, n)
        if lam.min() < -1e-10 * lam.max():
            raise np.linalg.LinAlgError("negative circulant eigenvalue")
        lam = np.clip(lam, 0.0, None)
        M = 2 * n
        z = normals[..., :M] + 1j * normals[..., M:2 * M]
        y = np.fft.fft(np.sqrt(lam / M) * z, axis=-1)
        return scale * y.real[..., :n]
    if method == "cholesky":
        gamma = fgn_autocovariance(H, n)
        idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
        L = cholesky(gamma[idx], lower=True)
        return scale * normals[..., :n] @ L.T
    raise ValueError(f"unknown method {method!r}")


def sample_fbm(H: float, n_fine: int, T: float = 1.0, seed: int = 0,
               method: str = "circulant", component: int = 0, path: int = 0) -> np.ndarray:
    """One fBm path on ``n_fine + 1`` grid points, starting at 0."""
    if not 0.0 < H < 1.0:
        raise ValueError("H must lie in (0, 1)")
    if n_fine < 1 or n_fine & (n_fine - 1):
        raise ValueError("n_fine must be a power of two")
    return sample_fbm_batch(H, n_fine, T, seed, component, [path], method)[0]


def sample_fbm_batch(H: float, n_fine: int, T: float, seed: int, component: int,
                     paths: list[int] | range, method: str = "circulant") -> np.ndarray:
    """Paths with the given indices, shape ``(len(paths), n_fine + 1)``."""
    paths = list(paths)
    width = 4 * n_fine if method == "circulant" else n_fine
    normals = np.stack([_rng(seed, component, p).standard_normal(width) for p in paths]) \
        if paths else np.zeros((0, width))
    try:
        inc = fbm_increments(H, n_fine, T, normals, method)
    except np.linalg.LinAlgError:
        if n_fine > CHOLESKY_LIMIT:
            raise
        log.warning("circulant embedding failed for H=%s n=%d; using Cholesky", H, n_fine)
        inc = fbm_increments(H, n_fine, T, normals[..., :n_fine], "cholesky")
    out = np.zeros((len(paths), n_fine + 1))
    np.cumsum(inc, axis=-1, out=out[:, 1:])
    return out


@dataclass(frozen=True)
class SignalSpec:
    """Components, exponents and grid of a driving signal."""

    m: int
    hurst: tuple[float, ...]
    T: float = 1.0
    n_fine: int = 1024
    seed: int = 0
    component_1_is_time: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "hurst", tuple(float(h) for h in self.hurst))
        if len(self.hurst) != self.m:
            raise ValueError("need one Hurst value per component")
        if self.n_fine < 1 or self.n_fine & (self.n_fine - 1):
            raise ValueError("n_fine must be a power of two")
        if self.T <= 0:
            raise ValueError("T must be positive")
        for j, h in enumerate(self.hurst):
            if j == 0 and self.component_1_is_time:
                if h != 1.0:
                    raise ValueError("the time component must carry Hurst value 1")
            elif not 0.5 < h < 1.0:
                raise ValueError(f"Hurst value {h} outside (1/2, 1)")

    @classmethod
    def uniform(cls, H: float, m: int, time: bool = False, **kw) -> "SignalSpec":
        hurst = [H] * m
        if time:
            hurst[0] = 1.0
        return cls(m, tuple(hurst), component_1_is_time=time, **kw)

    @property
    def exponents(self) -> ExponentVector:
        return ExponentVector(self.hurst, "hurst")

    def with_(self, **changes) -> "SignalSpec":
        return SignalSpec(**{**asdict(self), **changes})

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["hurst"] = list(self.hurst)
        return doc

    @classmethod
    def from_json(cls, doc: dict | str) -> "SignalSpec":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(**doc)


@dataclass(frozen=True)
class DrivingSignal:
    """Sampled components, shape ``(m, n_fine + 1)``."""

    samples: np.ndarray
    spec: SignalSpec
    path_index: int = 0

    def __post_init__(self) -> None:
        self.samples.setflags(write=False)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.spec.T, self.spec.n_fine + 1)

    def coarse(self, coarse_n: int) -> np.ndarray:
        """Samples restricted to a coarse grid, shape ``(m, coarse_n + 1)``."""
        return self.samples[:, ::_stride(self.spec.n_fine, coarse_n)]

    def save(self, path: str | Path) -> None:
        """Write a binary file: magic, header length, JSON header, column-major float64."""
        header = json.dumps({"spec": self.spec.to_json(), "path_index": self.path_index,
                             "shape": list(self.samples.shape), "order": "F",
                             "dtype": "<f8"}, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(np.asfortranarray(self.samples, dtype="<f8").tobytes(order="F"))

    @classmethod
    def load(cls, path: str | Path) -> "DrivingSignal":
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise ValueError(f"{path} is not a path file")
            (size,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(size))
            data = np.frombuffer(fh.read(), dtype="<f8")
        samples = data.reshape(header["shape"], order="F").copy()
        return cls(samples, SignalSpec.from_json(header["spec"]), header.get("path_index", 0))


def _stride(n_fine: int, coarse_n: int) -> int:
    if coarse_n < 1 or n_fine % coarse_n:
        raise ValueError(f"coarse grid {coarse_n} does not divide the fine grid {n_fine}")
    return n_fine // coarse_n


def sample_components(spec: SignalSpec, paths: list[int] | range, method: str = "circulant") -> np.ndarray:
    """Samples for several path indices, shape ``(P, m, n_fine + 1)``."""
    paths = list(paths)
    out = np.zeros((len(paths), spec.m, spec.n_fine + 1))
    for j in range(spec.m):
        if j == 0 and spec.component_1_is_time:
            out[:, 0, :] = np.linspace(0.0, spec.T, spec.n_fine + 1)
        else:
            out[:, j, :] = sample_fbm_batch(spec.hurst[j], spec.n_fine, spec.T, spec.seed, j, paths, method)
    return out


def build_signal(spec: SignalSpec, path_index: int = 0) -> DrivingSignal:
    """Path ``path_index`` of the signal described by ``spec``."""
    return DrivingSignal(sample_components(spec, [path_index])[0], spec, path_index)


def build_signals(spec: SignalSpec, n_paths: int, start: int = 0) -> list[DrivingSignal]:
    samples = sample_components(spec, range(start, start + n_paths))
    return [DrivingSignal(s, spec, start + k) for k, s in enumerate(samples)]


def holder_seminorm(signal: DrivingSignal, j: int, beta: float,
                    a: float = 0.0, b: float | None = None, coarse_n: int | None = None) -> float:
    """Discrete ``beta``-Holder seminorm of component ``j`` (1-based) over
    coarse grid pairs in ``[a, b]``; a lower bound of the continuous one."""
    spec = signal.spec
    b = spec.T if b is None else b
    coarse_n = spec.n_fine if coarse_n is None else coarse_n
    z = signal.coarse(coarse_n)[j - 1]
    h = spec.T / coarse_n
    ia, ib = int(round(a / h)), int(round(b / h))
    if not (0 <= ia < ib <= coarse_n) or abs(ia * h - a) > 1e-9 * spec.T or abs(ib * h - b) > 1e-9 * spec.T:
        raise ValueError("a and b must be distinct coarse grid points")
    z = z[ia:ib + 1]
    best = 0.0
    for lag in range(1, len(z)):
        diff = np.abs(z[lag:] - z[:-lag]).max()
        best = max(best, diff / (lag * h) ** beta)
    return float(best)
