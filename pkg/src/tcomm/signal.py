"""Modulated I/Q data, sensing-channel impairments and channel primitives.

A payload is 64 complex points stored as 128 interleaved reals
``[I0, Q0, I1, Q1, ...]``. Functions accept a single payload (1-D) or a batch
of payloads (2-D, one per row).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tcomm.errors import (
    ConfigError,
    CorruptHeaderError,
    DomainError,
    FormatError,
    ShapeError,
    TruncatedFileError,
    VersionError,
)
from tcomm.rng import make_rng

BPSK, QPSK = 0, 1
LABELS = ("BPSK", "QPSK")
N_POINTS = 64
DIM = 2 * N_POINTS


def map_bits(modulation: int, bits) -> np.ndarray:
    """Map bits to unit-power constellation points (complex array).

    BPSK takes one bit per symbol (b -> 2b-1); QPSK takes bit pairs with Gray
    mapping 00->(+,+), 01->(-,+), 11->(-,-), 10->(+,-), scaled by 1/sqrt(2).
    """
    bits = np.asarray(bits, dtype=np.int64)
    if modulation == BPSK:
        return (2.0 * bits - 1.0).astype(np.complex128)
    if modulation == QPSK:
        if bits.shape[-1] % 2:
            raise ShapeError("QPSK needs an even number of bits")
        pairs = bits.reshape(*bits.shape[:-1], -1, 2)
        # Gray: Q sign follows the first bit, I sign the second
        i_sign = 1.0 - 2.0 * pairs[..., 1]
        q_sign = 1.0 - 2.0 * pairs[..., 0]
        return (i_sign + 1j * q_sign) / np.sqrt(2.0)
    raise ValueError(f"unknown modulation {modulation!r}")


def gen_symbols(modulation: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one symbol")
    bits_per = 1 if modulation == BPSK else 2
    return map_bits(modulation, rng.integers(0, 2, size=n * bits_per))


def to_payload(points: np.ndarray) -> np.ndarray:
    """Complex points (..., 64) -> interleaved reals (..., 128)."""
    points = np.asarray(points)
    out = np.empty(points.shape[:-1] + (2 * points.shape[-1],))
    out[..., 0::2] = points.real
    out[..., 1::2] = points.imag
    return out


def to_points(iq: np.ndarray) -> np.ndarray:
    iq = np.asarray(iq, dtype=np.float64)
    return iq[..., 0::2] + 1j * iq[..., 1::2]


def mean_power(iq: np.ndarray) -> np.ndarray:
    """Mean complex-point power |I|^2+|Q|^2 of each payload."""
    iq = np.asarray(iq, dtype=np.float64)
    return 2.0 * np.mean(iq * iq, axis=-1)


def apply_awgn(iq: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add complex AWGN at ``snr_db`` relative to each payload's own power.

    Per-real-component variance is ``P / (2 * 10**(snr_db/10))``.
    """
    iq = np.asarray(iq, dtype=np.float64)
    if not np.isfinite(iq).all():
        raise DomainError("payload contains non-finite values")
    power = mean_power(iq)
    if np.any(power == 0.0):
        raise DomainError("SNR is undefined for a zero-power payload")
    sigma = np.sqrt(power / (2.0 * 10.0 ** (snr_db / 10.0)))
    return iq + rng.standard_normal(iq.shape) * np.expand_dims(sigma, -1)


def apply_phase(iq: np.ndarray, theta) -> np.ndarray:
    """Rotate every complex point by ``theta`` radians (scalar or per row)."""
    iq = np.asarray(iq, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim:
        theta = theta[..., None]
    c, s = np.cos(theta), np.sin(theta)
    i, q = iq[..., 0::2], iq[..., 1::2]
    out = np.empty_like(iq)
    out[..., 0::2] = i * c - q * s
    out[..., 1::2] = i * s + q * c
    return out


def measure_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    """Empirical SNR in dB from mean powers of ``clean`` and ``noisy - clean``."""
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise ShapeError(f"shapes differ: {clean.shape} vs {noisy.shape}")
    p_clean = np.mean(clean * clean)
    if p_clean == 0.0:
        raise DomainError("clean signal has zero power")
    diff = noisy - clean
    p_noise = np.mean(diff * diff)
    if p_noise == 0.0:
        raise DomainError("inputs are identical; SNR is +inf")
    return float(10.0 * np.log10(p_clean / p_noise))


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class SensingConfig:
    n_samples: int = 5000
    snr_s: float = 10.0
    phase_impairment: bool = False
    seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigError("n_samples must be at least 2")
        if not np.isfinite(self.snr_s):
            raise ConfigError("snr_s must be finite")
        n_train = self.n_train
        if n_train < 1 or n_train >= self.n_samples:
            raise ConfigError("split leaves an empty train or test set")

    @property
    def n_train(self) -> int:
        return int(round(self.n_samples * self.train_fraction))


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def counts(self) -> dict:
        return {
            "train": len(self.train_y),
            "test": len(self.test_y),
            "train_labels": np.bincount(self.train_y, minlength=2).tolist(),
            "test_labels": np.bincount(self.test_y, minlength=2).tolist(),
        }

    def replace(self, **changes) -> "Dataset":
        fields = dict(train_x=self.train_x, train_y=self.train_y, test_x=self.test_x, test_y=self.test_y, meta=dict(self.meta))
        fields.update(changes)
        return Dataset(**fields)


def make_dataset(cfg: SensingConfig) -> Dataset:
    """Generate ``cfg.n_samples`` labelled payloads and split them by order."""
    n = cfg.n_samples
    labels = make_rng(cfg.seed, "dataset", 0).integers(0, 2, size=n)
    bits = make_rng(cfg.seed, "dataset", 1).integers(0, 2, size=(n, N_POINTS, 2))
    points = np.where(
        (labels == BPSK)[:, None],
        map_bits(BPSK, bits[..., 0]),
        map_bits(QPSK, bits.reshape(n, -1)),
    )
    iq = to_payload(points)
    if cfg.phase_impairment:
        iq = apply_phase(iq, make_rng(cfg.seed, "dataset", 2).uniform(0.0, 2.0 * np.pi, size=n))
    iq = apply_awgn(iq, cfg.snr_s, make_rng(cfg.seed, "dataset", 3))
    k = cfg.n_train
    labels = labels.astype(np.int64)
    ds = Dataset(iq[:k].copy(), labels[:k].copy(), iq[k:].copy(), labels[k:].copy())
    ds.meta = {"snr_s": float(cfg.snr_s), "phase_impairment": bool(cfg.phase_impairment), "seed": int(cfg.seed), **ds.counts}
    return ds


def noise_sigma(snr_s: float, power: float = 1.0) -> float:
    """Per-component std of the sensing noise for a payload of given power."""
    return float(np.sqrt(power / (2.0 * 10.0 ** (snr_s / 10.0))))


DS_MAGIC = b"TCDS"
DS_VERSION = 1
_DS_HEADER = "<IIIdqB"  # n_train, n_test, dim, snr_s, seed, flags


def save_dataset(ds: Dataset, path) -> None:
    flags = 1 if ds.meta.get("phase_impairment") else 0
    header = struct.pack(
        _DS_HEADER, len(ds.train_y), len(ds.test_y), DIM, float(ds.meta.get("snr_s", np.nan)), int(ds.meta.get("seed", -1)), flags
    )
    body = [
        DS_MAGIC,
        struct.pack("<H", DS_VERSION),
        header,
        np.ascontiguousarray(ds.train_x, dtype="<f8").tobytes(),
        np.ascontiguousarray(ds.test_x, dtype="<f8").tobytes(),
        ds.train_y.astype(np.uint8).tobytes(),
        ds.test_y.astype(np.uint8).tobytes(),
    ]
    Path(path).write_bytes(b"".join(body))


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    head = 4 + 2 + struct.calcsize(_DS_HEADER)
    if len(data) < 6:
        raise TruncatedFileError("file too short for a dataset header")
    if data[:4] != DS_MAGIC:
        raise CorruptHeaderError("not a TCDS dataset file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != DS_VERSION:
        raise VersionError(f"unsupported dataset version {version}")
    if len(data) < head:
        raise TruncatedFileError("file too short for a dataset header")
    n_train, n_test, dim, snr_s, seed, flags = struct.unpack_from(_DS_HEADER, data, 6)
    if dim != DIM or flags > 1:
        raise CorruptHeaderError(f"bad header (dim={dim}, flags={flags})")
    n = n_train + n_test
    expected = head + 8 * n * dim + n
    if len(data) < expected:
        raise TruncatedFileError(f"expected {expected} bytes for {n} samples, file has {len(data)}")
    if len(data) > expected:
        raise FormatError(f"sample count mismatch: {len(data) - expected} unexpected trailing bytes")
    x = np.frombuffer(data, dtype="<f8", count=n * dim, offset=head).astype(np.float64).reshape(n, dim)
    y = np.frombuffer(data, dtype=np.uint8, count=n, offset=head + 8 * n * dim).astype(np.int64)
    if y.max(initial=0) > 1:
        raise CorruptHeaderError("label bytes out of range")
    ds = Dataset(x[:n_train].copy(), y[:n_train].copy(), x[n_train:].copy(), y[n_train:].copy())
    ds.meta = {"snr_s": snr_s, "phase_impairment": bool(flags & 1), "seed": seed, **ds.counts}
    return ds


def export_csv(ds: Dataset, path) -> None:
    """One row per sample: split, 128 floats, label."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split"] + [f"{c}{k}" for k in range(N_POINTS) for c in "iq"] + ["label"])
        for split, xs, ys in (("train", ds.train_x, ds.train_y), ("test", ds.test_x, ds.test_y)):
            for x, y in zip(xs, ys):
                w.writerow([split] + [repr(float(v)) for v in x] + [int(y)])
