"""Soft-margin kernel SVM trained with Sequential Minimal Optimization.

The binary solver follows Platt (1998): an outer loop alternates sweeps over
all examples with sweeps over the non-bound ones, each KKT violator picks its
partner by the largest ``|E1 - E2|`` step, and pairs are optimized
analytically. Multiclass problems are reduced one-vs-one with sign voting.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    EmptyInput,
    InvalidParameter,
    IterationCapExceeded,
    SchemaVersionError,
    SingleClassInput,
    SniffBenchError,
)
from .rng import SplitMix64

VARIANCE_FLOOR = 1e-12
SV_THRESHOLD = 1e-8
REFINE_GAP = 2e-9
SCHEMA = "sniffbench.svm"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SvmConfig:
    C: float = 10.0
    gamma: float | str = "scale"
    tol: float = 1e-3
    max_passes: int = 200
    max_iterations: int | None = None  # default 10 * N * max_passes
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise InvalidParameter(f"C must be > 0, got {self.C}")
        if isinstance(self.gamma, str):
            if self.gamma != "scale":
                raise InvalidParameter(f"gamma must be a positive number or 'scale', got {self.gamma!r}")
        elif not self.gamma > 0:
            raise InvalidParameter(f"gamma must be > 0, got {self.gamma}")
        if not self.tol > 0:
            raise InvalidParameter("tol must be > 0")
        if self.max_passes < 1:
            raise InvalidParameter("max_passes must be >= 1")

    def resolve_gamma(self, X: np.ndarray) -> float:
        return compute_gamma(X) if self.gamma == "scale" else float(self.gamma)


def compute_gamma(samples) -> float:
    """``1 / (n * var)`` with ``var`` the population variance of all entries pooled."""
    X = np.asarray(samples, dtype=np.float64)
    if X.size == 0:
        raise EmptyInput("compute_gamma needs at least one sample")
    if X.ndim == 1:
        X = X[None, :]
    n = X.shape[1]
    var = float(X.var())
    if var < VARIANCE_FLOOR:
        warnings.warn(f"pooled variance {var:g} floored at {VARIANCE_FLOOR:g}", DegenerateVariance, stacklevel=2)
        var = VARIANCE_FLOOR
    return 1.0 / (n * var)


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"kernel arguments have shapes {x.shape} and {y.shape}")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel matrix ``K[i, j] = exp(-gamma * |A_i - B_j|^2)``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"feature dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    K = np.exp(-gamma * sq)
    if A is B:
        np.fill_diagonal(K, 1.0)
    return K


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    """``sum(alpha) - 1/2 (alpha*y)^T K (alpha*y)``, the quantity SMO maximizes."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    iterations: int
    converged: bool


class _Smo:
    def __init__(self, K: np.ndarray, y: np.ndarray, C: float, tol: float, seed: int):
        self.K = K
        self.y = y.astype(np.float64)
        self.C = C
        self.tol = tol
        self.n = len(y)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        # E_i = f(x_i) - y_i; with alpha = 0 and b = 0, f = 0
        self.E = -self.y.copy()
        self.rng = SplitMix64(seed)
        self.steps = 0
        # pair updates are accepted only above this; small enough to reach 1e-9 duals
        self.eps = 1e-12

    def non_bound(self) -> np.ndarray:
        return np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))

    def take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        self.steps += 1
        K, y, C = self.K, self.y, self.C
        a1, a2 = self.alpha[i1], self.alpha[i2]
        y1, y2 = y[i1], y[i2]
        E1, E2 = self.E[i1], self.E[i2]
        s = y1 * y2
        if y1 != y2:
            L, H = max(0.0, a2 - a1), min(C, C + a2 - a1)
        else:
            L, H = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        if H - L < self.eps:
            return False
        k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > self.eps:
            a2n = min(H, max(L, a2 + y2 * (E1 - E2) / eta))
        else:
            # flat direction: compare the objective at both ends of the segment
            f1 = y1 * (E1 - self.b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (E2 - self.b) - s * a1 * k12 - a2 * k22
            L1, H1 = a1 + s * (a2 - L), a1 + s * (a2 - H)
            obj_l = L1 * f1 + L * f2 + 0.5 * L1 * L1 * k11 + 0.5 * L * L * k22 + s * L * L1 * k12
            obj_h = H1 * f1 + H * f2 + 0.5 * H1 * H1 * k11 + 0.5 * H * H * k22 + s * H * H1 * k12
            if obj_l < obj_h - self.eps:
                a2n = L
            elif obj_l > obj_h + self.eps:
                a2n = H
            else:
                a2n = a2
        if abs(a2n - a2) < self.eps * (a2n + a2 + self.eps):
            return False
        a1n = a1 + s * (a2 - a2n)
        # snap to the box so bound membership tests are exact
        if a1n < self.eps:
            a1n = 0.0
        elif a1n > C - self.eps:
            a1n = C
        if a2n < self.eps:
            a2n = 0.0
        elif a2n > C - self.eps:
            a2n = C
        d1, d2 = y1 * (a1n - a1), y2 * (a2n - a2)
        b1 = self.b - E1 - d1 * k11 - d2 * k12
        b2 = self.b - E2 - d1 * k12 - d2 * k22
        if 0.0 < a1n < C:
            bn = b1
        elif 0.0 < a2n < C:
            bn = b2
        else:
            bn = 0.5 * (b1 + b2)
        self.E += d1 * K[i1] + d2 * K[i2] + (bn - self.b)
        self.alpha[i1], self.alpha[i2] = a1n, a2n
        self.b = bn
        return True

    def examine(self, i2: int) -> bool:
        y2, a2, E2 = self.y[i2], self.alpha[i2], self.E[i2]
        r2 = E2 * y2
        if not ((r2 < -self.tol and a2 < self.C) or (r2 > self.tol and a2 > 0)):
            return False
        nb = self.non_bound()
        if len(nb) > 1:
            i1 = int(nb[np.argmax(np.abs(self.E[nb] - E2))])
            if self.take_step(i1, i2):
                return True
        if len(nb):
            start = self.rng.below(len(nb))
            for i1 in np.roll(nb, -start):
                if self.take_step(int(i1), i2):
                    return True
        start = self.rng.below(self.n)
        for i1 in np.roll(np.arange(self.n), -start):
            if self.take_step(int(i1), i2):
                return True
        return False

    def run(self, max_passes: int, max_steps: int) -> bool:
        examine_all = True
        passes = 0
        changed = 0
        while changed > 0 or examine_all:
            if passes >= max_passes or self.steps >= max_steps:
                return False
            passes += 1
            changed = 0
            candidates = range(self.n) if examine_all else self.non_bound()
            for i in candidates:
                changed += self.examine(int(i))
                if self.steps >= max_steps:
                    return False
            if examine_all:
                examine_all = False
            elif changed == 0:
                examine_all = True
        return True

    def refine(self, max_steps: int, gap: float) -> bool:
        # Maximal-violating-pair sweep (Keerthi et al.): drives the KKT gap
        # far below ``tol`` so the dual matches a dense QP to ~1e-9.
        y, C = self.y, self.C
        while self.steps < max_steps:
            a = self.alpha
            # at the optimum max F over I_low <= min F over I_up
            F = self.E - self.b
            up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
            low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))
            if not up.any() or not low.any():
                return True
            iu = np.flatnonzero(up)[np.argmin(F[up])]
            il = np.flatnonzero(low)[np.argmax(F[low])]
            if F[il] - F[iu] <= gap:
                return True
            if not self.take_step(int(il), int(iu)):
                return True
        return False

    def final_bias(self) -> float:
        """Bias from the free multipliers, or the middle of the feasible interval."""
        y, a, C = self.y, self.alpha, self.C
        g = self.E + y - self.b  # decision value without bias
        free = (a > SV_THRESHOLD) & (a < C - SV_THRESHOLD)
        if free.any():
            return float(np.mean(y[free] - g[free]))
        lo, hi = -np.inf, np.inf
        pos, neg = y > 0, y < 0
        at_zero, at_c = a <= SV_THRESHOLD, a >= C - SV_THRESHOLD
        for mask, bound, is_lower in ((pos & at_zero, 1.0, True), (neg & at_c, -1.0, True),
                                      (pos & at_c, 1.0, False), (neg & at_zero, -1.0, False)):
            if mask.any():
                vals = bound - g[mask]
                if is_lower:
                    lo = max(lo, float(vals.max()))
                else:
                    hi = min(hi, float(vals.min()))
        if np.isfinite(lo) and np.isfinite(hi):
            return 0.5 * (lo + hi)
        return lo if np.isfinite(lo) else (hi if np.isfinite(hi) else 0.0)


def smo_solve(K: np.ndarray, y: np.ndarray, C: float = 10.0, tol: float = 1e-3,
              max_passes: int = 200, max_iterations: int | None = None, seed: int = 0) -> SmoResult:
    """Solve the SVM dual for a precomputed kernel matrix.

    Returns every multiplier (not only support vectors) and the bias.
    Warns with :class:`IterationCapExceeded` and returns the current iterate
    when the step budget runs out.
    """
    y = np.asarray(y, dtype=np.float64)
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise InvalidParameter("labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise SingleClassInput("binary SVM needs at least one sample of each sign")
    n = len(y)
    cap = max_iterations if max_iterations is not None else 10 * n * max_passes
    smo = _Smo(np.asarray(K, dtype=np.float64), y, float(C), float(tol), seed)
    smo.run(max_passes, cap)
    converged = smo.refine(cap, gap=REFINE_GAP)
    if not converged:
        warnings.warn(f"SMO stopped after {smo.steps} steps without converging", IterationCapExceeded, stacklevel=2)
    return SmoResult(smo.alpha.copy(), smo.final_bias(), smo.steps, converged)


@dataclass(frozen=True)
class BinarySvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    sv_labels: np.ndarray
    bias: float
    gamma: float
    C: float = 10.0

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"input has {X.shape[1]} features, model expects {self.dim}")
        return rbf_gram(X, self.support_vectors, self.gamma) @ (self.alphas * self.sv_labels) + self.bias

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "C": self.C,
            "bias": self.bias,
            "alphas": self.alphas.tolist(),
            "labels": self.sv_labels.astype(int).tolist(),
            "support_vectors": self.support_vectors.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BinarySvmModel":
        return cls(
            support_vectors=np.asarray(doc["support_vectors"], dtype=np.float64),
            alphas=np.asarray(doc["alphas"], dtype=np.float64),
            sv_labels=np.asarray(doc["labels"], dtype=np.float64),
            bias=float(doc["bias"]),
            gamma=float(doc["gamma"]),
            C=float(doc["C"]),
        )


def smo_train_binary(X, y, cfg: SvmConfig = SvmConfig(), gamma: float | None = None) -> BinarySvmModel:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y):
        raise DimensionMismatch(f"{len(X)} samples but {len(y)} labels")
    if gamma is None:
        gamma = cfg.resolve_gamma(X)
    K = rbf_gram(X, X, gamma)
    res = smo_solve(K, y, cfg.C, cfg.tol, cfg.max_passes, cfg.max_iterations, cfg.seed)
    sv = res.alpha > SV_THRESHOLD
    return BinarySvmModel(X[sv].copy(), res.alpha[sv], y[sv], res.bias, float(gamma), float(cfg.C))


def svm_decision(model: BinarySvmModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("svm_decision expects a single vector")
    return float(model.decision_function(x[None, :])[0])


@dataclass(frozen=True)
class MulticlassSvmModel:
    classes: tuple[int, ...]
    pairs: tuple[tuple[int, int, BinarySvmModel], ...]
    gamma: float = field(default=0.0)

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def votes(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        pos = {c: i for i, c in enumerate(self.classes)}
        votes = np.zeros((len(X), len(self.classes)), dtype=np.int64)
        for a, b, model in self.pairs:
            f = model.decision_function(X)
            votes[:, pos[a]] += f > 0
            votes[:, pos[b]] += f <= 0
        return votes

    def predict(self, X) -> np.ndarray:
        # argmax returns the first maximum, i.e. the smallest tied class
        return np.asarray(self.classes)[np.argmax(self.votes(X), axis=1)]

    def to_dict(self) -> dict:
        return {
            "format": SCHEMA,
            "version": SCHEMA_VERSION,
            "gamma": self.gamma,
            "classes": list(self.classes),
            "pairs": [{"class_a": a, "class_b": b, "model": m.to_dict()} for a, b, m in self.pairs],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MulticlassSvmModel":
        if doc.get("format") != SCHEMA or doc.get("version") != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"expected {SCHEMA} v{SCHEMA_VERSION}, got {doc.get('format')!r} v{doc.get('version')!r}")
        pairs = tuple((int(p["class_a"]), int(p["class_b"]), BinarySvmModel.from_dict(p["model"]))
                      for p in doc["pairs"])
        return cls(tuple(int(c) for c in doc["classes"]), pairs, float(doc["gamma"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def train_multiclass(X, labels: Sequence[int], cfg: SvmConfig = SvmConfig(), jobs: int = 1) -> MulticlassSvmModel:
    """One binary SVM per unordered class pair; ``a`` maps to +1, ``b`` to -1.

    One gamma, computed over all of ``X``, is shared by every pair.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels)
    if len(X) != len(labels):
        raise DimensionMismatch(f"{len(X)} samples but {len(labels)} labels")
    classes = tuple(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise SingleClassInput(f"need at least 2 classes, got {list(classes)}")
    gamma = cfg.resolve_gamma(X)
    jobs_list = [(a, b) for i, a in enumerate(classes) for b in classes[i + 1:]]

    def fit(pair):
        a, b = pair
        mask = (labels == a) | (labels == b)
        yy = np.where(labels[mask] == a, 1.0, -1.0)
        try:
            return a, b, smo_train_binary(X[mask], yy, cfg, gamma=gamma)
        except SniffBenchError as exc:
            raise type(exc)(f"pair ({a}, {b}): {exc}") from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pairs = tuple(pool.map(fit, jobs_list))
    else:
        pairs = tuple(fit(p) for p in jobs_list)
    return MulticlassSvmModel(classes, pairs, gamma)


def predict_multiclass(model: MulticlassSvmModel, x) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("predict_multiclass expects a single vector")
    return int(model.predict(x[None, :])[0])
