"""Quantitative evaluation pipeline: PCA, one-sided auto-correlation, the
hidden/dominant presence ratio, the 3-D PCA coloring export, and a
consolidated metrics report.

PCA eigendecomposes the sample covariance with cyclic Jacobi rotations
(exact, no iterative-convergence ambiguity for the small matrices used
here); when the feature dimension exceeds the sample count the dual Gram
problem is solved instead, which has the same nonzero spectrum.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import infometrics
from .errors import ConfigError, DegenerateBatchError, ShapeMismatchError

JACOBI_LIMIT = 512
AM_FLOOR = 1e-6


def jacobi_eigh(a, max_sweeps=64):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors-as-columns) in descending order.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeMismatchError(f"jacobi: matrix must be square, got {a.shape}")
    v = np.eye(n)
    if n == 1:
        return a.ravel().copy(), v
    scale = max(np.abs(a).max(), 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(max((a ** 2).sum() - (np.diag(a) ** 2).sum(), 0.0))
        if off <= 1e-14 * scale * n:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-16 * scale:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp, rq = a[p].copy(), a[q].copy()
                a[p], a[q] = c * rp - s * rq, s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * cp - s * cq, s * cp + c * cq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
    order = np.argsort(-np.diag(a), kind="stable")
    return np.diag(a)[order].copy(), v[:, order]


@dataclass
class PcaResult:
    components: np.ndarray        # (k, d), orthonormal rows
    projections: np.ndarray       # (n, k)
    eigenvalues: np.ndarray       # (k,)
    explained_ratio: np.ndarray   # (k,)
    mean: np.ndarray              # (d,)


def pca(data, k):
    """Top-k principal components of row-sample data.

    Components are orthonormal eigenvectors of the sample covariance in
    descending eigenvalue order, with the deterministic sign convention that
    each component's largest-magnitude entry is positive.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeMismatchError(f"pca: data must be (samples, dims), got {data.shape}")
    n, d = data.shape
    if n < 2:
        raise ConfigError(f"pca: need at least 2 samples, got {n}")
    if not 1 <= k <= d:
        raise ConfigError(f"pca: k={k} outside [1, {d}]")
    if min(n, d) > JACOBI_LIMIT:
        raise ConfigError(
            f"pca: min(samples, dims) = {min(n, d)} exceeds the exact-Jacobi "
            f"limit {JACOBI_LIMIT}")
    mean = data.mean(axis=0)
    xc = data - mean
    total_var = (xc ** 2).sum() / (n - 1)
    if d <= n:
        cov = (xc.T @ xc) / (n - 1)
        eigvals, eigvecs = jacobi_eigh(cov)
        comps = eigvecs.T  # rows
    else:
        gram = (xc @ xc.T) / (n - 1)
        eigvals, u = jacobi_eigh(gram)
        comps = np.zeros((n, d))
        for i in range(n):
            lam = eigvals[i]
            if lam > 0:
                comps[i] = (xc.T @ u[:, i]) / np.sqrt(lam * (n - 1))
    eigvals = np.maximum(eigvals, 0.0)
    rank = int((eigvals > max(eigvals.max(), 0.0) * 1e-12).sum())
    if k > rank:
        raise ConfigError(f"pca: k={k} exceeds data rank {rank}")
    comps = comps[:k]
    for i in range(k):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    projections = xc @ comps.T
    ratio = eigvals[:k] / total_var if total_var > 0 else np.zeros(k)
    return PcaResult(comps, projections, eigvals[:k].copy(), ratio, mean)


def one_sided_autocorrelation(x, max_lag=None):
    """Normalized one-sided auto-correlation A(tau) for tau = 1..max_lag.

    A(tau) = sum_t (x_t - mu)(x_{t+tau} - mu) / sum_t (x_t - mu)^2 -- the
    biased estimator, bounded in [-1, 1].
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    if max_lag is None:
        max_lag = n // 2
    if n < 2 * max_lag:
        raise ConfigError(
            f"autocorrelation: signal length {n} < 2 * max_lag = {2 * max_lag}")
    if max_lag < 1:
        raise ConfigError("autocorrelation: max_lag must be >= 1")
    xc = x - x.mean()
    energy = (xc * xc).sum()
    if energy <= 0.0:
        raise DegenerateBatchError("autocorrelation: constant signal")
    out = np.empty(max_lag)
    for tau in range(1, max_lag + 1):
        out[tau - 1] = (xc[:-tau] * xc[tau:]).sum() / energy
    return out


def _autocorr_at(x, lag):
    x = np.asarray(x, dtype=np.float64).ravel()
    xc = x - x.mean()
    energy = (xc * xc).sum()
    if energy <= 0.0:
        raise DegenerateBatchError("autocorrelation: constant signal")
    if not 1 <= lag < x.size:
        raise ConfigError(f"autocorrelation: lag {lag} invalid for length {x.size}")
    return float((xc[:-lag] * xc[lag:]).sum() / energy)


def _top_component_signal(segment):
    """Project a (channels, time) segment onto its top principal direction."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.ndim == 1:
        segment = segment[None, :]
    res = pca(segment.T, k=1)
    return res.projections[:, 0]


@dataclass
class PresenceReport:
    """Mean auto-correlations at the hidden (f) and dominant (m) periods and
    their ratio R = af_mean / am_mean."""

    af_mean: float
    am_mean: float
    ratio: float | None
    per_segment_f: list = field(default_factory=list)
    per_segment_m: list = field(default_factory=list)
    lags_f: list = field(default_factory=list)
    lags_m: list = field(default_factory=list)
    reason: str | None = None

    def to_json(self):
        return {"af_mean": self.af_mean, "am_mean": self.am_mean,
                "ratio": self.ratio, "per_segment_f": self.per_segment_f,
                "per_segment_m": self.per_segment_m,
                "lags_f": self.lags_f, "lags_m": self.lags_m,
                "reason": self.reason}


def presence_ratio(segments, tau_f, tau_m):
    """Per segment: top-PC projection, auto-correlation sampled at the two
    periods; averaged over segments and expressed as the ratio R."""
    segments = [np.asarray(s, dtype=np.float64) for s in segments]
    n = len(segments)
    if n == 0:
        raise ConfigError("presence_ratio: no segments")
    tau_f = np.broadcast_to(np.asarray(tau_f, dtype=int), (n,))
    tau_m = np.broadcast_to(np.asarray(tau_m, dtype=int), (n,))
    af, am = [], []
    for seg, tf, tm in zip(segments, tau_f, tau_m):
        sig = _top_component_signal(seg)
        af.append(_autocorr_at(sig, int(tf)))
        am.append(_autocorr_at(sig, int(tm)))
    af_mean = float(np.mean(af))
    am_mean = float(np.mean(am))
    if am_mean < AM_FLOOR:
        return PresenceReport(af_mean, am_mean, None, af, am,
                              tau_f.tolist(), tau_m.tolist(),
                              reason=f"dominant-period auto-correlation "
                                     f"{am_mean:.2e} below floor {AM_FLOOR}")
    return PresenceReport(af_mean, am_mean, af_mean / am_mean, af, am,
                          tau_f.tolist(), tau_m.tolist())


def effective_ratio(report, floor=AM_FLOOR):
    """Total-order view of a PresenceReport's ratio for comparisons.

    When the dominant-period correlation is below its floor the ratio is
    reported absent; for ranking purposes that limit is +inf if the hidden
    component is present (af above floor) and 0.0 if nothing is."""
    if report.ratio is not None:
        return report.ratio
    return float("inf") if report.af_mean > floor else 0.0


def pca_coloring_export(samples, tau_f, tau_m, path):
    """Flatten each sample, project to 3-D by PCA, and write a CSV with the
    modular color columns color_f = i mod tau_f and color_m = i mod tau_m."""
    samples = np.asarray(samples, dtype=np.float64)
    flat = samples.reshape(len(samples), -1)
    res = pca(flat, k=min(3, flat.shape[1]))
    proj = res.projections
    tau_f = int(tau_f)
    tau_m = int(tau_m)
    if tau_f < 1 or tau_m < 1:
        raise ConfigError("coloring periods must be positive integers")
    path = os.fspath(path)
    cols = proj.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write(",".join([f"pc{i + 1}" for i in range(cols)]
                          + ["color_f", "color_m"]) + "\n")
        for i in range(len(flat)):
            row = [repr(float(v)) for v in proj[i]]
            row.append(str(i % tau_f))
            row.append(str(i % tau_m))
            fh.write(",".join(row) + "\n")
    return path


def evaluation_report(codes=None, inputs=None, conditions=None,
                      ground_truth=None, tau_f=None, tau_m=None,
                      hsic_max_n=256, hsic_permutations=100, seed=0):
    """Consolidated metrics: presence ratios, code-condition dependence, and
    code-source rank correlation.  Fields are absent (not fabricated) when
    the inputs needed to compute them are missing."""
    report = {}
    have_lags = tau_f is not None and tau_m is not None
    if inputs is not None and have_lags:
        rep = presence_ratio(list(inputs), tau_f, tau_m)
        report["presence_input"] = rep.to_json()
        report["R_x"] = rep.ratio
    if codes is not None and have_lags and np.asarray(codes[0]).ndim >= 1 \
            and np.asarray(codes[0]).size > max(int(np.max(tau_f)), int(np.max(tau_m))):
        rep = presence_ratio(list(codes), tau_f, tau_m)
        report["presence_code"] = rep.to_json()
        report["R_code"] = rep.ratio
    if codes is not None and conditions is not None \
            and not np.issubdtype(np.asarray(conditions).dtype, np.integer):
        n = min(len(codes), hsic_max_n)
        a = np.asarray(codes[:n], dtype=np.float64).reshape(n, -1)
        b = np.asarray(conditions[:n], dtype=np.float64).reshape(n, -1)
        try:
            stat = infometrics.hsic(a, b)
            thr = infometrics.hsic_permutation_threshold(
                a, b, n_permutations=hsic_permutations, quantile=0.95, seed=seed)
            report["hsic_code_condition"] = stat
            report["hsic_threshold_95"] = thr
            report["hsic_independent"] = bool(stat < thr)
        except (DegenerateBatchError, ConfigError) as exc:
            report["hsic_error"] = str(exc)
    if codes is not None and ground_truth is not None:
        code_arr = np.asarray(codes, dtype=np.float64).reshape(len(codes), -1)
        truth = np.asarray(ground_truth, dtype=np.float64).reshape(
            len(ground_truth), -1)
        if code_arr.shape[1] == 1 and truth.shape[1] == 1:
            try:
                report["spearman_code_source"] = infometrics.spearman(
                    code_arr[:, 0], truth[:, 0])
            except DegenerateBatchError as exc:
                report["spearman_error"] = str(exc)
    return report
