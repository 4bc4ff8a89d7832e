"""Exact discrete information theory plus sample-based dependence estimators.

The discrete side works on explicit probability tables and lookup tables and
is exact up to 1e-12 floating tolerances; it powers the recovery-lemma
checker.  The sample side (histogram MI, HSIC with a permutation threshold,
Spearman) validates trained models on continuous data.  All logarithms are
base 2; every reported quantity is in bits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateBatchError, ShapeMismatchError

PROB_TOL = 1e-12
CONCLUSION_TOL = 1e-9
MAX_SUPPORT = 64


def _validate_distribution(p, what="distribution"):
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ConfigError(f"{what} is empty")
    if (p < 0).any():
        raise ConfigError(f"{what} has negative mass")
    total = p.sum()
    if abs(total - 1.0) > PROB_TOL:
        raise ConfigError(f"{what} sums to {total!r}, not 1")
    return p


def entropy_discrete(p):
    """Shannon entropy -sum p log2 p in bits, with 0 log 0 := 0."""
    p = _validate_distribution(p).ravel()
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


@dataclass(frozen=True)
class DiscreteJoint:
    """Finite joint distribution over two variables as a probability table."""

    p: np.ndarray

    def __post_init__(self):
        table = _validate_distribution(self.p, "joint table")
        if table.ndim != 2:
            raise ConfigError(f"joint table must be 2-d, got {table.ndim}-d")
        if max(table.shape) > MAX_SUPPORT:
            raise ConfigError(
                f"support sizes capped at {MAX_SUPPORT}, got {table.shape}")
        object.__setattr__(self, "p", table)

    @property
    def marginal_rows(self):
        return self.p.sum(axis=1)

    @property
    def marginal_cols(self):
        return self.p.sum(axis=0)


def mutual_information_discrete(joint):
    """Exact I(A;B) = sum p log2 (p / (p_a p_b)) in bits."""
    if not isinstance(joint, DiscreteJoint):
        joint = DiscreteJoint(np.asarray(joint, dtype=np.float64))
    p = joint.p
    pa = joint.marginal_rows
    pb = joint.marginal_cols
    mask = p > 0
    outer = pa[:, None] * pb[None, :]
    return float((p[mask] * np.log2(p[mask] / outer[mask])).sum())


def conditional_entropy(joint, given="cols"):
    """H(A|B) = H(A,B) - H(B); `given` picks which axis is conditioned on."""
    if not isinstance(joint, DiscreteJoint):
        joint = DiscreteJoint(np.asarray(joint, dtype=np.float64))
    h_joint = entropy_discrete(joint.p.ravel())
    if given == "cols":
        return h_joint - entropy_discrete(joint.marginal_cols)
    if given == "rows":
        return h_joint - entropy_discrete(joint.marginal_rows)
    raise ConfigError(f"given must be 'rows' or 'cols', got {given!r}")


# ---------------------------------------------------------------------------
# the exact recovery-lemma checker
# ---------------------------------------------------------------------------

@dataclass
class DiscreteSystem:
    """Finite mixture system: joint source/condition distribution plus
    mixing, encoder, and decoder lookup tables.

    mixing[s][t] -> x id (injective on positive-probability pairs)
    encoder[x] -> code id
    decoder[code][t] -> reconstruction id (total on reachable pairs)
    """

    joint: DiscreteJoint
    mixing: dict
    encoder: dict
    decoder: dict

    def support(self):
        ns, nt = self.joint.p.shape
        for s in range(ns):
            for t in range(nt):
                if self.joint.p[s, t] > 0:
                    yield s, t, self.joint.p[s, t]


@dataclass
class LemmaReport:
    premise_reconstruction: bool
    premise_independence: bool
    mi_source_code: float
    entropy_source: float
    entropy_code: float
    conclusion_holds: bool | None
    entropy_condition: float = 0.0
    mi_input_code_condition: float = 0.0
    mi_input_reconstruction: float = 0.0
    dpi_holds: bool = True
    failures: list = field(default_factory=list)
    units: str = "bits"

    def to_json(self):
        return {
            "premise_reconstruction": self.premise_reconstruction,
            "premise_independence": self.premise_independence,
            "mi_source_code": self.mi_source_code,
            "entropy_source": self.entropy_source,
            "entropy_code": self.entropy_code,
            "entropy_condition": self.entropy_condition,
            "mi_input_code_condition": self.mi_input_code_condition,
            "mi_input_reconstruction": self.mi_input_reconstruction,
            "dpi_holds": self.dpi_holds,
            "conclusion_holds": self.conclusion_holds,
            "failures": self.failures,
            "units": self.units,
        }


def _joint_of(pairs_mass, na, nb):
    table = np.zeros((na, nb))
    for (a, b), mass in pairs_mass.items():
        table[a, b] += mass
    return table


def lemma_check(system):
    """Exact check of the recovery property on a finite system.

    Premises checked: (a) the decoder reconstructs every positive-probability
    input exactly; (b) the code is exactly independent of the condition.
    The conclusion I(S;S') = H(S) = H(S') is evaluated only when both
    premises hold -- it is never inferred from them, and systems exist where
    the premises hold yet the conclusion fails.
    """
    failures = []
    support = list(system.support())
    seen_x = {}
    for s, t, mass in support:
        try:
            x = system.mixing[s][t]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(f"mixing table missing entry for (s={s}, t={t})")
        if x in seen_x and seen_x[x] != (s, t):
            raise ConfigError(
                f"mixing not injective: x={x} produced by both {seen_x[x]} "
                f"and {(s, t)}")
        seen_x[x] = (s, t)

    # premise (a): exact reconstruction on the support
    recon_ok = True
    for s, t, mass in support:
        x = system.mixing[s][t]
        try:
            code = system.encoder[x]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(f"encoder table missing entry for x={x}")
        try:
            xhat = system.decoder[code][t]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(
                f"decoder table missing entry for (code={code}, t={t})")
        if xhat != x:
            recon_ok = False
            failures.append(
                f"reconstruction fails at (s={s}, t={t}): x={x}, xhat={xhat}")

    # distributions of every derived variable
    codes = sorted({system.encoder[system.mixing[s][t]] for s, t, _ in support})
    code_ix = {c: i for i, c in enumerate(codes)}
    xs = sorted(seen_x)
    x_ix = {x: i for i, x in enumerate(xs)}
    ns, nt = system.joint.p.shape

    joint_ct = {}   # (code, t)
    joint_sc = {}   # (s, code)
    joint_x_ct = {}  # (x, (code, t) composite)
    joint_x_xhat = {}
    ct_ix = {}
    for s, t, mass in support:
        x = system.mixing[s][t]
        code = system.encoder[x]
        xhat = system.decoder[code][t]
        ci = code_ix[code]
        key_ct = (ci, t)
        if key_ct not in ct_ix:
            ct_ix[key_ct] = len(ct_ix)
        joint_ct[(ci, t)] = joint_ct.get((ci, t), 0.0) + mass
        joint_sc[(s, ci)] = joint_sc.get((s, ci), 0.0) + mass
        k2 = (x_ix[x], ct_ix[key_ct])
        joint_x_ct[k2] = joint_x_ct.get(k2, 0.0) + mass
        xh = x_ix.get(xhat)
        if xh is None:
            x_ix[xhat] = len(x_ix)
            xh = x_ix[xhat]
        k3 = (x_ix[x], xh)
        joint_x_xhat[k3] = joint_x_xhat.get(k3, 0.0) + mass

    ct_table = _joint_of(joint_ct, len(codes), nt)
    indep_ok = True
    rows = ct_table.sum(axis=1)
    cols = ct_table.sum(axis=0)
    dev = np.abs(ct_table - rows[:, None] * cols[None, :]).max()
    if dev > PROB_TOL:
        indep_ok = False
        failures.append(
            f"code-condition joint deviates from product by {dev:.3e}")

    sc_table = _joint_of(joint_sc, ns, len(codes))
    mi_sc = mutual_information_discrete(sc_table)
    h_s = entropy_discrete(system.joint.marginal_rows)
    h_t = entropy_discrete(system.joint.marginal_cols)
    h_code = entropy_discrete(sc_table.sum(axis=0))

    nx = len(x_ix)
    mi_x_ct = mutual_information_discrete(
        _joint_of(joint_x_ct, nx, len(ct_ix)))
    mi_x_xhat = mutual_information_discrete(_joint_of(joint_x_xhat, nx, nx))
    dpi_holds = mi_x_xhat <= mi_x_ct + PROB_TOL

    if recon_ok and indep_ok:
        conclusion = (abs(mi_sc - h_s) <= CONCLUSION_TOL
                      and abs(h_s - h_code) <= CONCLUSION_TOL)
    else:
        conclusion = None
    return LemmaReport(
        premise_reconstruction=recon_ok,
        premise_independence=indep_ok,
        mi_source_code=mi_sc,
        entropy_source=h_s,
        entropy_code=h_code,
        conclusion_holds=conclusion,
        entropy_condition=h_t,
        mi_input_code_condition=mi_x_ct,
        mi_input_reconstruction=mi_x_xhat,
        dpi_holds=dpi_holds,
        failures=failures,
    )


def system_from_json(doc):
    """Parse the DiscreteSystem JSON document (tables as nested lists /
    integer-keyed maps)."""
    try:
        joint = DiscreteJoint(np.asarray(doc["joint"], dtype=np.float64))
        mixing = [[int(v) for v in row] for row in doc["mixing"]]
        encoder = {int(k): int(v) for k, v in doc["encoder"].items()}
        decoder = [[int(v) for v in row] for row in doc["decoder"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid discrete-system document: {exc}") from exc
    return DiscreteSystem(joint, mixing, encoder, decoder)


def load_system(path):
    with open(path) as fh:
        return system_from_json(json.load(fh))


# ---------------------------------------------------------------------------
# sample-based estimators
# ---------------------------------------------------------------------------

def mi_histogram(a, b, bins=16):
    """Plug-in mutual information (bits) on an equal-width 2-d histogram."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeMismatchError(f"mi_histogram: {a.size} vs {b.size} samples")
    if a.size < 4 * bins * bins:
        raise ConfigError(
            f"mi_histogram: need at least {4 * bins * bins} samples for "
            f"{bins} bins, got {a.size}")

    def digitize(v):
        lo, hi = v.min(), v.max()
        if hi == lo:
            return np.zeros(v.size, dtype=np.int64)
        idx = np.floor((v - lo) / (hi - lo) * bins).astype(np.int64)
        return np.minimum(idx, bins - 1)

    ia, ib = digitize(a), digitize(b)
    if ia.min() == ia.max() or ib.min() == ib.max():
        return 0.0  # a variable confined to one bin carries no information
    counts = np.zeros((bins, bins))
    np.add.at(counts, (ia, ib), 1.0)
    return mutual_information_discrete(counts / a.size)


def _gaussian_gram(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
    n = x.shape[0]
    dist = np.sqrt(sq)
    med = float(np.median(dist[~np.eye(n, dtype=bool)]))
    if med <= 0.0:
        raise DegenerateBatchError(
            "hsic: median pairwise distance is zero (constant sample)")
    return np.exp(-sq / (2.0 * med * med))


def hsic(a, b):
    """Biased HSIC estimate, Gaussian kernels, median-distance bandwidth."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    if b.shape[0] != n:
        raise ShapeMismatchError(f"hsic: {n} vs {b.shape[0]} samples")
    if n < 8:
        raise ConfigError(f"hsic: need at least 8 samples, got {n}")
    k = _gaussian_gram(a)
    l = _gaussian_gram(b)
    kc = k - k.mean(axis=0, keepdims=True)
    kc -= kc.mean(axis=1, keepdims=True)  # kc = H K H
    return float((kc * l).sum() / (n * n))


def hsic_permutation_threshold(a, b, n_permutations=200, quantile=0.95, seed=0):
    """Empirical quantile of HSIC over seeded permutations of b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    if b.shape[0] != n:
        raise ShapeMismatchError(f"hsic: {n} vs {b.shape[0]} samples")
    if n < 8:
        raise ConfigError(f"hsic: need at least 8 samples, got {n}")
    k = _gaussian_gram(a)
    l = _gaussian_gram(b)
    kc = k - k.mean(axis=0, keepdims=True)
    kc -= kc.mean(axis=1, keepdims=True)
    stats = np.empty(n_permutations)
    root = np.random.SeedSequence(seed)
    for i, child in enumerate(root.spawn(n_permutations)):
        perm = np.random.default_rng(child).permutation(n)
        stats[i] = (kc[np.ix_(perm, perm)] * l).sum() / (n * n)
    return float(np.quantile(stats, quantile))


def spearman(a, b):
    """Rank correlation (Pearson correlation of mid-ranks, ties averaged)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeMismatchError(f"spearman: {a.size} vs {b.size} samples")
    if a.size < 3:
        raise ConfigError(f"spearman: need at least 3 samples, got {a.size}")
    ra, rb = _midranks(a), _midranks(b)
    for name, r in (("first", ra), ("second", rb)):
        if r.var() == 0.0:
            raise DegenerateBatchError(f"spearman: {name} argument is constant")
    ra -= ra.mean()
    rb -= rb.mean()
    return float((ra * rb).sum() / np.sqrt((ra * ra).sum() * (rb * rb).sum()))


def _midranks(v):
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks
