"""Synthetic two-modality data with a controllable privileged signal.

Latents: shared ``z_s`` and privileged-only ``z_p`` (standard normal).
Prevalent modality A sees only ``z_s``; privileged modality B sees both::

    X_A = z_s M_Aᵀ + noise_a      X_B = [z_s, z_p] M_Bᵀ + noise_b
    a_d = (1 - rho) * z_s·w_s[d] + rho * z_p·w_p[d]

Regression targets are ``tanh(a_d)``; class labels are quantile bins of
``tanh(a_0)``. A fraction ``unreliability`` of samples get their A features
replaced by noise of matching per-column scale.
"""
from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .tensor import save_csv

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, stream name)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class GenSpec:
    n_samples: int = 6000
    shared_dim: int = 4
    privileged_dim: int = 3
    dim_a: int = 20
    dim_b: int = 16
    noise_a: float = 0.3
    noise_b: float = 0.2
    privileged_informativeness: float = 0.5
    task: str = "classification"
    num_classes: int = 2
    n_outputs: int = 2
    unreliability: float = 0.1
    seed: int = 0

    def __post_init__(self):
        dims = (self.n_samples, self.shared_dim, self.privileged_dim, self.dim_a, self.dim_b, self.n_outputs)
        if min(dims) < 1:
            raise ConfigError(f"all dimensions must be >= 1, got {dims}")
        if self.n_samples < 20:
            raise ConfigError("need at least 20 samples for three splits")
        if self.noise_a < 0 or self.noise_b < 0:
            raise ConfigError("noise std must be >= 0")
        if not 0.0 <= self.privileged_informativeness <= 1.0:
            raise ConfigError("privileged_informativeness must be in [0, 1]")
        if not 0.0 <= self.unreliability < 1.0:
            raise ConfigError("unreliability must be in [0, 1)")
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "classification" and self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown GenSpec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "GenSpec":
        return GenSpec(**{**self.to_dict(), "seed": int(seed)})


def standard_config(task: str = "classification", seed: int = 0) -> GenSpec:
    return GenSpec(n_samples=6000, shared_dim=4, privileged_dim=3, dim_a=20, dim_b=16,
                   noise_a=0.3, noise_b=0.2, privileged_informativeness=0.5,
                   unreliability=0.1, task=task, seed=seed)


@dataclass
class Dataset:
    raw_a: np.ndarray
    raw_b: np.ndarray
    targets: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    spec: GenSpec

    @property
    def is_classification(self) -> bool:
        return self.spec.task == "classification"

    @property
    def n_outputs(self) -> int:
        return self.spec.num_classes if self.is_classification else self.targets.shape[1]

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise KeyError(split)
        return getattr(self, split)

    def split(self, name: str):
        """(raw_a, raw_b, targets) rows for one split."""
        idx = self.indices(name)
        return self.raw_a[idx], self.raw_b[idx], self.targets[idx]

    def labels(self, name: str) -> np.ndarray:
        return self.targets[self.indices(name)].astype(np.intp).reshape(-1)

    # --- persistence ---------------------------------------------------------

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        codes = np.zeros((self.raw_a.shape[0], 1))
        codes[self.val] = 1
        codes[self.test] = 2
        arrays = {"raw_a": self.raw_a, "raw_b": self.raw_b, "targets": self.targets, "split": codes}
        checksums = {}
        for name, arr in arrays.items():
            path = directory / f"{name}.csv"
            save_csv(path, arr)
            checksums[name] = hashlib.sha256(path.read_bytes()).hexdigest()
        manifest = {"spec": self.spec.to_dict(), "seed": self.spec.seed, "checksums": checksums}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory) -> "Dataset":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise ConfigError(f"no dataset manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text())
        arrays = {}
        for name, digest in manifest["checksums"].items():
            path = directory / f"{name}.csv"
            if hashlib.sha256(path.read_bytes()).hexdigest() != digest:
                raise ConfigError(f"checksum mismatch for {path}")
            arrays[name] = np.loadtxt(path, delimiter=",", ndmin=2)
        codes = arrays["split"][:, 0]
        return cls(arrays["raw_a"], arrays["raw_b"], arrays["targets"],
                   np.flatnonzero(codes == 0), np.flatnonzero(codes == 1), np.flatnonzero(codes == 2),
                   GenSpec.from_dict(manifest["spec"]))


def _unit(rng, *shape):
    w = rng.normal(size=shape)
    return w / np.linalg.norm(w, axis=-1, keepdims=True)


def _split_indices(rng, n: int, strata: np.ndarray | None):
    perm = rng.permutation(n)
    if strata is not None:
        # interleave classes so every contiguous chunk is class-balanced
        labels = strata[perm]
        position = np.empty(n)
        for c in np.unique(labels):
            members = np.flatnonzero(labels == c)
            position[members] = (np.arange(members.size) + 0.5) / members.size
        perm = perm[np.argsort(position, kind="stable")]
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    return (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
            np.sort(perm[n_train + n_val:]))


def generate(spec: GenSpec) -> Dataset:
    rng = rng_stream(spec.seed, "data")
    n, s, p = spec.n_samples, spec.shared_dim, spec.privileged_dim
    z_s = rng.normal(size=(n, s))
    z_p = rng.normal(size=(n, p))
    m_a = rng.normal(size=(spec.dim_a, s)) / np.sqrt(s)
    m_b = rng.normal(size=(spec.dim_b, s + p)) / np.sqrt(s + p)
    raw_a = z_s @ m_a.T + spec.noise_a * rng.normal(size=(n, spec.dim_a))
    raw_b = np.hstack([z_s, z_p]) @ m_b.T + spec.noise_b * rng.normal(size=(n, spec.dim_b))

    n_bad = int(round(spec.unreliability * n))
    bad = rng.choice(n, size=n_bad, replace=False)
    col_std = raw_a.std(axis=0)
    raw_a[bad] = rng.normal(size=(n_bad, spec.dim_a)) * col_std

    n_out = spec.n_outputs if spec.task == "regression" else 1
    w_s = _unit(rng, n_out, s)
    w_p = _unit(rng, n_out, p)
    rho = spec.privileged_informativeness
    latent = (1.0 - rho) * z_s @ w_s.T + rho * z_p @ w_p.T
    continuous = np.tanh(latent)
    if spec.task == "regression":
        targets = continuous
        strata = None
    else:
        edges = np.quantile(continuous[:, 0], np.linspace(0, 1, spec.num_classes + 1)[1:-1])
        labels = np.searchsorted(edges, continuous[:, 0], side="right")
        targets = labels.astype(np.float64).reshape(-1, 1)
        strata = labels
    train, val, test = _split_indices(rng, n, strata)
    return Dataset(raw_a, raw_b, targets, train, val, test, spec)
