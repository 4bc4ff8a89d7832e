"""Seeded synthetic generators: hidden source + observed condition mixed into
the observed input, with ground truth retained for evaluation only.

Generators are pure functions of (config, seed).  Datasets round-trip through
CSV (one sample per row, flattened row-major) with a JSON meta sidecar that
records the generator, its parameters, the seed, and the per-field shapes.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeMismatchError, SpecError

DET_FLOOR = 1e-6


@dataclass
class PairedDataset:
    """Aligned samples: inputs x, conditions t, optional hidden source s."""

    x: np.ndarray
    t: np.ndarray
    s: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x) != len(self.t):
            raise ShapeMismatchError(
                f"dataset: {len(self.x)} inputs vs {len(self.t)} conditions")
        if self.s is not None and len(self.s) != len(self.x):
            raise ShapeMismatchError(
                f"dataset: {len(self.s)} ground-truth rows vs {len(self.x)} inputs")

    def __len__(self):
        return len(self.x)

    @property
    def symbolic_condition(self):
        return np.issubdtype(self.t.dtype, np.integer)

    def train_view(self):
        """The dataset as the trainer sees it: ground truth stripped."""
        return PairedDataset(self.x, self.t, None, dict(self.meta))

    def subset(self, indices):
        return PairedDataset(
            self.x[indices], self.t[indices],
            None if self.s is None else self.s[indices], dict(self.meta))


@dataclass(frozen=True)
class MixingSpec:
    """Parameters of the mixing map producing x from (s, t)."""

    kind: str  # "linear" | "softplus-nonlinear" | "angles" | "fecg"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("linear", "softplus-nonlinear", "angles", "fecg"):
            raise SpecError(f"unknown mixing kind {self.kind!r}")
        if self.kind in ("linear", "softplus-nonlinear"):
            a = np.asarray(self.params.get("matrix", DEFAULT_MATRIX), dtype=float)
            if a.shape != (2, 2):
                raise SpecError(f"mixing matrix must be 2x2, got {a.shape}")
            if abs(np.linalg.det(a)) <= DET_FLOOR:
                raise SpecError(
                    f"mixing matrix is near-singular (|det| = "
                    f"{abs(np.linalg.det(a)):.2e} <= {DET_FLOOR})")


DEFAULT_MATRIX = ((1.0, 1.0), (1.0, -1.0))


def gen_uniform_sources(n, seed):
    """n i.i.d. pairs from uniform(0,1) x uniform(0,1)."""
    if n < 1:
        raise ConfigError(f"need n >= 1 samples, got {n}")
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, 1.0, n)
    t = rng.uniform(0.0, 1.0, n)
    return s, t


def _check_matrix(a):
    a = np.asarray(a, dtype=float)
    if a.shape != (2, 2):
        raise SpecError(f"mixing matrix must be 2x2, got {a.shape}")
    if abs(np.linalg.det(a)) <= DET_FLOOR:
        raise SpecError("mixing matrix is near-singular")
    return a


def mix_linear(s, t, a):
    """x = A [s, t] per sample; A must be invertible."""
    a = _check_matrix(a)
    st = np.stack([np.asarray(s, float), np.asarray(t, float)], axis=-1)
    return st @ a.T


def mix_nonlinear(s, t, a):
    """x = softplus(A [s, t]) per sample."""
    return np.logaddexp(0.0, mix_linear(s, t, a))


def gen_2d_dataset(n, seed, kind="linear", matrix=DEFAULT_MATRIX):
    """The two-uniform-sources demonstration dataset (linear or softplus mixing)."""
    spec = MixingSpec(kind, {"matrix": matrix})
    s, t = gen_uniform_sources(n, seed)
    mix = mix_linear if kind == "linear" else mix_nonlinear
    x = mix(s, t, matrix)
    meta = {"generator": "2d", "kind": kind,
            "matrix": np.asarray(matrix, float).tolist(), "n": int(n),
            "seed": int(seed),
            "shapes": {"x": [2], "t": [1], "s": [1]}}
    return PairedDataset(x, t[:, None], s[:, None], meta), spec


def gen_rotating_angles_toy(n, seed, embed_dim=8, embed_kind="random-orthonormal"):
    """Two independent angles; the hidden one is embedded smoothly in R^d.

    x = W (cos a_s, sin a_s, cos a_t, sin a_t) with W fixed, seed-drawn
    orthonormal columns (or identity when embed_dim == 4); t exposes the
    observed angle as (cos a_t, sin a_t); s stores the hidden angle.
    """
    if embed_dim < 4:
        raise ConfigError(f"embed_dim must be >= 4, got {embed_dim}")
    if embed_kind not in ("random-orthonormal", "identity"):
        raise ConfigError(f"unknown embedding kind {embed_kind!r}")
    if embed_kind == "identity" and embed_dim != 4:
        raise ConfigError("identity embedding requires embed_dim == 4")
    rng = np.random.default_rng(seed)
    theta_s = rng.uniform(0.0, 2.0 * np.pi, n)
    theta_t = rng.uniform(0.0, 2.0 * np.pi, n)
    base = np.stack([np.cos(theta_s), np.sin(theta_s),
                     np.cos(theta_t), np.sin(theta_t)], axis=1)
    if embed_kind == "identity":
        w = np.eye(4)
    else:
        q, _ = np.linalg.qr(rng.standard_normal((embed_dim, 4)))
        w = q  # (embed_dim, 4), orthonormal columns
    x = base @ w.T
    t = np.stack([np.cos(theta_t), np.sin(theta_t)], axis=1)
    meta = {"generator": "angles", "embed_dim": int(embed_dim),
            "embed_kind": embed_kind, "n": int(n), "seed": int(seed),
            "shapes": {"x": [int(embed_dim)], "t": [2], "s": [1]}}
    return PairedDataset(x, t, theta_s[:, None], meta)


@dataclass(frozen=True)
class FecgConfig:
    """Synthetic maternal/fetal mixture: pulse trains with distinct periods."""

    n_segments: int = 128
    n_a: int = 24           # abdominal channels
    n_t: int = 3            # thorax channels
    n_len: int = 2000       # samples per segment
    tau_m: int = 430        # maternal period (samples)
    tau_f: int = 270        # fetal period (samples)
    alpha: float = 0.2      # fetal amplitude ratio
    noise: float = 0.01
    width_m: float = 14.0   # maternal bump width (samples)
    width_f: float = 9.0    # fetal bump width (samples)

    def __post_init__(self):
        if self.tau_m <= 0 or self.tau_f <= 0:
            raise ConfigError("periods must be positive")
        if _commensurate(self.tau_m, self.tau_f):
            raise ConfigError(
                f"periods {self.tau_m} and {self.tau_f} are commensurate "
                "(one divides the other); the presence metric would conflate "
                "their peaks")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.n_segments < 1 or self.n_a < 1 or self.n_t < 1:
            raise ConfigError("channel and segment counts must be positive")
        if self.n_len < 2 * max(self.tau_m, self.tau_f):
            raise ConfigError(
                "segments must cover at least two periods of each train")


def _commensurate(tau_a, tau_b):
    return tau_a == tau_b or math.gcd(int(tau_a), int(tau_b)) == min(
        int(tau_a), int(tau_b))


def _pulse_train(n_len, period, width, phase):
    """Sum of unit Gaussian bumps centered every `period` samples."""
    u = np.arange(n_len, dtype=float)
    out = np.zeros(n_len)
    center = phase - period * math.ceil((phase + 4 * width) / period)
    while center < n_len + 4 * width:
        if center > -4 * width:
            out += np.exp(-0.5 * ((u - center) / width) ** 2)
        center += period
    return out


def gen_synthetic_fecg(cfg, seed):
    """Thorax channels carry only the dominant train; abdominal channels mix
    it with the weaker hidden train.  Ground truth is the hidden train."""
    rng = np.random.default_rng(seed)
    gain_tm = rng.uniform(0.4, 0.8, cfg.n_t)    # thorax, dominant train
    gain_am = rng.uniform(0.4, 0.8, cfg.n_a)    # abdominal, dominant train
    gain_af = rng.uniform(0.4, 0.8, cfg.n_a)    # abdominal, hidden train
    x = np.empty((cfg.n_segments, cfg.n_a, cfg.n_len))
    t = np.empty((cfg.n_segments, cfg.n_t, cfg.n_len))
    s = np.empty((cfg.n_segments, cfg.n_len))
    for i in range(cfg.n_segments):
        phase_m = rng.uniform(0.0, cfg.tau_m)
        phase_f = rng.uniform(0.0, cfg.tau_f)
        m = _pulse_train(cfg.n_len, cfg.tau_m, cfg.width_m, phase_m)
        g = _pulse_train(cfg.n_len, cfg.tau_f, cfg.width_f, phase_f)
        t[i] = (gain_tm[:, None] * m[None, :]
                + cfg.noise * rng.standard_normal((cfg.n_t, cfg.n_len)))
        x[i] = (gain_am[:, None] * m[None, :]
                + cfg.alpha * gain_af[:, None] * g[None, :]
                + cfg.noise * rng.standard_normal((cfg.n_a, cfg.n_len)))
        s[i] = g
    meta = {"generator": "fecg", "seed": int(seed),
            "params": {k: getattr(cfg, k) for k in (
                "n_segments", "n_a", "n_t", "n_len", "tau_m", "tau_f",
                "alpha", "noise", "width_m", "width_f")},
            "tau_m": cfg.tau_m, "tau_f": cfg.tau_f,
            "shapes": {"x": [cfg.n_a, cfg.n_len], "t": [cfg.n_t, cfg.n_len],
                       "s": [cfg.n_len]}}
    return PairedDataset(x, t, s, meta)


# ---------------------------------------------------------------------------
# invertibility probing
# ---------------------------------------------------------------------------

def _mixing_fn(spec):
    if spec.kind == "linear":
        a = _check_matrix(spec.params.get("matrix", DEFAULT_MATRIX))
        return (lambda z: z @ a.T), 2
    if spec.kind == "softplus-nonlinear":
        a = _check_matrix(spec.params.get("matrix", DEFAULT_MATRIX))
        return (lambda z: np.logaddexp(0.0, z @ a.T)), 2
    if spec.kind == "angles":
        dim = int(spec.params.get("embed_dim", 8))
        kind = spec.params.get("embed_kind", "random-orthonormal")
        seed = int(spec.params.get("seed", 0))
        if kind == "identity":
            w = np.eye(4)
        else:
            q, _ = np.linalg.qr(
                np.random.default_rng(seed).standard_normal((dim, 4)))
            w = q

        def fn(z):
            base = np.stack([np.cos(z[..., 0]), np.sin(z[..., 0]),
                             np.cos(z[..., 1]), np.sin(z[..., 1])], axis=-1)
            return base @ w.T

        return fn, 2
    raise ConfigError(
        f"invertibility probing not applicable to mixing kind {spec.kind!r}")


def verify_invertibility(spec, n_probes=100, seed=0, h=1e-6):
    """Minimum |Jacobian determinant| of the mixing map over seeded probes.

    Non-square Jacobians (smooth embeddings) use the Gram determinant
    sqrt(det(J^T J)), which reduces to |det J| in the square case.
    """
    fn, d_in = _mixing_fn(spec)
    rng = np.random.default_rng(seed)
    if spec.kind == "angles":
        probes = rng.uniform(0.0, 2.0 * np.pi, (n_probes, d_in))
    else:
        probes = rng.uniform(0.0, 1.0, (n_probes, d_in))
    worst = np.inf
    for z in probes:
        cols = []
        for j in range(d_in):
            hi = z.copy(); hi[j] += h
            lo = z.copy(); lo[j] -= h
            cols.append((fn(hi) - fn(lo)) / (2.0 * h))
        jac = np.stack(cols, axis=-1)
        gram = jac.T @ jac
        worst = min(worst, float(np.sqrt(max(np.linalg.det(gram), 0.0))))
    return worst


# ---------------------------------------------------------------------------
# CSV round-trip
# ---------------------------------------------------------------------------

def _flat_cols(prefix, shape):
    k = int(np.prod(shape)) if shape else 1
    return [f"{prefix}_{i}" for i in range(k)]


def write_csv(dataset, path):
    """One sample per row; header names flattened fields; meta JSON sidecar."""
    path = os.fspath(path)
    meta = dict(dataset.meta)
    shapes = dict(meta.get("shapes", {}))
    meta["shapes"] = shapes
    shapes.setdefault("x", list(dataset.x.shape[1:]) or [1])
    symbolic = dataset.symbolic_condition
    if symbolic:
        header = _flat_cols("x", dataset.x.shape[1:]) + ["t_class"]
    else:
        shapes.setdefault("t", list(dataset.t.shape[1:]) or [1])
        header = (_flat_cols("x", dataset.x.shape[1:])
                  + _flat_cols("t", dataset.t.shape[1:]))
    if dataset.s is not None:
        shapes.setdefault("s", list(dataset.s.shape[1:]) or [1])
        header += _flat_cols("s", dataset.s.shape[1:])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.x[i].ravel()]
            if symbolic:
                row.append(str(int(dataset.t[i])))
            else:
                row += [repr(float(v)) for v in np.asarray(dataset.t[i]).ravel()]
            if dataset.s is not None:
                row += [repr(float(v)) for v in np.asarray(dataset.s[i]).ravel()]
            writer.writerow(row)
    with open(meta_path(path), "w") as fh:
        json.dump(meta, fh, indent=1)
    return path


def meta_path(csv_path):
    return os.fspath(csv_path) + ".meta.json"


def read_csv(path):
    """Rebuild a PairedDataset from a CSV written by write_csv."""
    path = os.fspath(path)
    try:
        with open(meta_path(path)) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    if not rows:
        raise ConfigError(f"dataset {path} has no samples")
    nx = sum(1 for h in header if h.startswith("x_"))
    symbolic = "t_class" in header
    nt = 1 if symbolic else sum(1 for h in header if h.startswith("t_"))
    ns = sum(1 for h in header if h.startswith("s_"))
    if nx == 0 or nt == 0:
        raise ConfigError(f"dataset {path}: header must name x_* and t_* columns")
    data = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ConfigError(
                f"dataset {path}: row {i + 1} has {len(row)} fields, "
                f"header has {len(header)}")
        data[i] = [float(v) for v in row]
    shapes = meta.get("shapes", {})
    x = data[:, :nx].reshape(len(rows), *shapes.get("x", [nx]))
    if symbolic:
        t = data[:, nx].astype(np.int64)
    else:
        t = data[:, nx : nx + nt].reshape(len(rows), *shapes.get("t", [nt]))
    s = None
    if ns:
        s = data[:, nx + nt :].reshape(len(rows), *shapes.get("s", [ns]))
    return PairedDataset(x, t, s, meta)
