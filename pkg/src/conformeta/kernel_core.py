"""Prior mean/kernel assembly and the shared kernel-ridge precomputation.

Training and test points are handled as an augmented (n+1)-point problem:
``Kbar = [[K, k], [k^T, k0]]`` and ``Mbar = [M; m]``. Everything the
conformal predictors need is derived from ``Qbar = (Kbar + lam I)^-1 Kbar``
and ``tbar = (Kbar/lam + I)^-1 Mbar``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.linalg

from .errors import IdiocentricityViolation, InvalidGramError, InvalidInputError, NumericalFailure

KERNEL_KINDS = ("gaussian", "laplace", "precomputed")

SYMMETRY_RTOL = 1e-10
PSD_RTOL = 1e-8
JITTER = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    """Which kernel to evaluate.

    ``kind`` is one of ``gaussian``, ``laplace`` or ``precomputed``; the last
    reads the augmented Gram matrix from ``gram_path`` instead of features.
    """

    kind: str = "gaussian"
    lengthscale: float = 1.0
    gram_path: str | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise InvalidInputError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "precomputed":
            if self.gram_path is None:
                raise InvalidInputError("precomputed kernel requires gram_path")
        elif not (self.lengthscale > 0 and math.isfinite(self.lengthscale)):
            raise InvalidInputError(f"lengthscale must be positive, got {self.lengthscale!r}")

    @classmethod
    def parse(cls, text: str, lengthscale: float = 1.0) -> "KernelSpec":
        """Parse ``gaussian``, ``laplace`` or ``gram:PATH``."""
        if text.startswith("gram:"):
            return cls(kind="precomputed", gram_path=text[len("gram:"):])
        return cls(kind=text, lengthscale=lengthscale)


@dataclass(frozen=True)
class TrialRecord:
    features: np.ndarray
    y: float
    v: float

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float).reshape(-1)
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("trial features must be finite")
        if not (math.isfinite(self.y) and math.isfinite(self.v)):
            raise InvalidInputError("trial y and v must be finite")
        if self.v < 0:
            raise InvalidInputError(f"within-trial variance must be >= 0, got {self.v!r}")
        object.__setattr__(self, "features", feats)


def _freeze(*arrays: np.ndarray) -> None:
    for arr in arrays:
        arr.setflags(write=False)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def kernel_eval(spec: KernelSpec, x1, x2) -> float:
    """Evaluate the kernel on a single pair of feature vectors."""
    if spec.kind == "precomputed":
        raise InvalidInputError("precomputed kernels cannot be evaluated on features")
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.shape != x2.shape:
        raise InvalidInputError(f"dimension mismatch: {x1.shape} vs {x2.shape}")
    diff = x1 - x2
    if spec.kind == "gaussian":
        return math.exp(-float(diff @ diff) / (2.0 * spec.lengthscale**2))
    return math.exp(-float(np.abs(diff).sum()) / spec.lengthscale)


def gram_matrix(spec: KernelSpec, X1, X2) -> np.ndarray:
    """Vectorized kernel matrix between the rows of ``X1`` and ``X2``."""
    if spec.kind == "precomputed":
        raise InvalidInputError("precomputed kernels cannot be evaluated on features")
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    if X1.ndim == 1:
        X1 = X1[:, None]
    if X2.ndim == 1:
        X2 = X2[:, None]
    if X1.shape[1] != X2.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {X1.shape[1]} vs {X2.shape[1]}")
    if spec.kind == "gaussian":
        sq = (
            np.sum(X1**2, axis=1)[:, None]
            + np.sum(X2**2, axis=1)[None, :]
            - 2.0 * X1 @ X2.T
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-sq / (2.0 * spec.lengthscale**2))
    dist = np.abs(X1[:, None, :] - X2[None, :, :]).sum(axis=2)
    return np.exp(-dist / spec.lengthscale)


def read_gram(path) -> np.ndarray:
    """Read an augmented Gram file: first line ``n``, then n+1 rows of n+1 reals."""
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise InvalidInputError(f"cannot read Gram file {path}: {exc}") from exc
    if not lines:
        raise InvalidGramError(f"{path}: empty Gram file")
    try:
        n = int(lines[0].split()[0])
    except ValueError as exc:
        raise InvalidGramError(f"{path}:1: expected integer n") from exc
    if n < 1 or len(lines) != n + 2:
        raise InvalidGramError(f"{path}: expected {n + 1} matrix rows after n={n}, got {len(lines) - 1}")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != n + 1:
            raise InvalidGramError(f"{path}:{lineno}: expected {n + 1} values, got {len(parts)}")
        try:
            rows.append([float(tok) for tok in parts])
        except ValueError as exc:
            raise InvalidGramError(f"{path}:{lineno}: {exc}") from exc
    return np.array(rows)


def write_gram(path, Kbar) -> None:
    Kbar = np.asarray(Kbar, dtype=float)
    n = Kbar.shape[0] - 1
    with open(path, "w") as fh:
        fh.write(f"{n}\n")
        for row in Kbar:
            fh.write(" ".join(format(x, ".17g") for x in row) + "\n")


# ---------------------------------------------------------------------------
# Prior bundle
# ---------------------------------------------------------------------------


def _check_gram(Kbar: np.ndarray) -> np.ndarray:
    if Kbar.ndim != 2 or Kbar.shape[0] != Kbar.shape[1]:
        raise InvalidGramError(f"Gram matrix must be square, got shape {Kbar.shape}")
    if not np.all(np.isfinite(Kbar)):
        raise InvalidGramError("Gram matrix has non-finite entries")
    scale = max(float(np.max(np.abs(Kbar))), 1e-300)
    asym = float(np.max(np.abs(Kbar - Kbar.T)))
    if asym > SYMMETRY_RTOL * scale:
        raise InvalidGramError(f"Gram matrix is not symmetric (max asymmetry {asym:.3g})")
    if asym > 0:
        Kbar = 0.5 * (Kbar + Kbar.T)
    diag = np.diag(Kbar)
    if np.any(diag <= 0):
        raise InvalidGramError("Gram matrix diagonal must be strictly positive")
    min_eig = float(np.linalg.eigvalsh(Kbar)[0])
    if min_eig < -PSD_RTOL * float(diag.max()):
        raise InvalidGramError(f"Gram matrix is not positive semidefinite (min eigenvalue {min_eig:.3g})")
    return Kbar


@dataclass(frozen=True)
class PriorBundle:
    """Prior means and Gram blocks for n training points and one test point."""

    M: np.ndarray
    K: np.ndarray
    m: float
    k: np.ndarray
    k0: float

    def __post_init__(self):
        M = np.array(self.M, dtype=float).reshape(-1)
        k = np.array(self.k, dtype=float).reshape(-1)
        K = np.array(self.K, dtype=float)
        n = M.size
        if n < 1:
            raise InvalidInputError("at least one training point is required")
        if K.shape != (n, n) or k.size != n:
            raise InvalidInputError(f"inconsistent shapes: M {M.shape}, K {K.shape}, k {k.shape}")
        if not (np.all(np.isfinite(M)) and math.isfinite(self.m)):
            raise InvalidInputError("prior means must be finite")
        if not self.k0 > 0:
            raise InvalidGramError(f"test self-kernel k0 must be positive, got {self.k0!r}")
        Kbar = _check_gram(np.block([[K, k[:, None]], [k[None, :], np.array([[self.k0]])]]))
        K, k = Kbar[:-1, :-1].copy(), Kbar[-1, :-1].copy()
        _freeze(M, K, k)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "k0", float(Kbar[-1, -1]))

    @property
    def n(self) -> int:
        return self.M.size

    @property
    def Kbar(self) -> np.ndarray:
        return np.block([[self.K, self.k[:, None]], [self.k[None, :], np.array([[self.k0]])]])

    @property
    def Mbar(self) -> np.ndarray:
        return np.append(self.M, self.m)

    @classmethod
    def from_augmented(cls, Mbar, Kbar) -> "PriorBundle":
        Mbar = np.asarray(Mbar, dtype=float)
        Kbar = np.asarray(Kbar, dtype=float)
        return cls(M=Mbar[:-1], K=Kbar[:-1, :-1], m=Mbar[-1], k=Kbar[-1, :-1], k0=Kbar[-1, -1])


MeanSource = Sequence[float] | np.ndarray | Callable[[np.ndarray], float] | float


def _mean_values(mean: MeanSource, X: np.ndarray, x: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    if callable(mean):
        values = np.array([mean(row) for row in X] + [mean(x)], dtype=float)
    elif np.ndim(mean) == 0:
        values = np.full(n + 1, float(mean))
    else:
        values = np.asarray(mean, dtype=float).reshape(-1)
    if values.size != n + 1:
        raise InvalidInputError(f"need prior means for all {n + 1} points, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("prior means must be finite")
    return values


def assemble_prior(mean: MeanSource, spec: KernelSpec, X, x) -> PriorBundle:
    """Apply the prior mean and kernel to training features ``X`` and test ``x``.

    ``mean`` is either n+1 values (training then test), a constant, or a
    callable evaluated on each feature vector. With a precomputed kernel the
    augmented Gram matrix comes from ``spec.gram_path`` and features are
    only used for counting.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if X.shape[0] < 1:
        raise InvalidInputError("at least one training point is required")
    values = _mean_values(mean, X, x)
    if spec.kind == "precomputed":
        Kbar = read_gram(spec.gram_path)
        if Kbar.shape[0] != X.shape[0] + 1:
            raise InvalidGramError(
                f"Gram file has n={Kbar.shape[0] - 1} but {X.shape[0]} training rows were given"
            )
        return PriorBundle.from_augmented(values, Kbar)
    if x.size != X.shape[1]:
        raise InvalidInputError(f"dimension mismatch: test has {x.size} features, training {X.shape[1]}")
    K = gram_matrix(spec, X, X)
    k = gram_matrix(spec, X, x[None, :])[:, 0]
    k0 = kernel_eval(spec, x, x)
    return PriorBundle(M=values[:-1], K=K, m=values[-1], k=k, k0=k0)


# ---------------------------------------------------------------------------
# Precomputation
# ---------------------------------------------------------------------------


def conformal_rank(alpha: float, n: int) -> int:
    """tau = ceil((1 - alpha)(n + 1)), guarded against representation error."""
    if not (0.0 < alpha < 1.0):
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha!r}")
    raw = (1.0 - alpha) * (n + 1)
    return int(math.ceil(raw - 1e-12 * (n + 1)))


@dataclass(frozen=True)
class Precomputation:
    """Immutable bundle of the augmented KRR quantities for one test point.

    ``A``/``B`` are sign-standardized so ``A >= 0``; ``flip`` records the
    per-row sign that was applied (``A_raw = flip * A`` unless ``A_raw == 0``).
    """

    Q: np.ndarray
    q: np.ndarray
    q0: float
    tbar: np.ndarray
    A: np.ndarray
    a: float
    B: np.ndarray
    b: float
    S: np.ndarray
    s: float
    lam: float
    n: int
    tau: int
    alpha: float
    flip: np.ndarray = field(repr=False)

    @property
    def A_raw(self) -> np.ndarray:
        return -self.q

    def idiocentric(self) -> bool:
        return bool(np.all(self.a / self.s > self.A / self.S))


def _max_diag(K: np.ndarray, k0: float) -> float:
    return float(max(np.max(np.diag(K)), k0))


def _check_lambda(lam: float | None, floor: float) -> tuple[float, bool]:
    """Return (lambda, needs explicit idiocentricity check)."""
    if lam is None:
        return floor, False
    lam = float(lam)
    if not (lam > 0 and math.isfinite(lam)):
        raise InvalidInputError(f"lambda must be positive, got {lam!r}")
    return lam, lam < floor


def _cho_factor(mat: np.ndarray, lam: float):
    try:
        return scipy.linalg.cho_factor(mat, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    jittered = mat + JITTER * lam * np.eye(mat.shape[0])
    try:
        return scipy.linalg.cho_factor(jittered, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("positive-definite solve failed even after jitter") from exc


def _finish(Q, q, q0, tbar, U, lam, alpha, check_idiocentric) -> Precomputation:
    n = q.size
    t, t0 = tbar[:-1], tbar[-1]
    A = -q
    a = 1.0 - q0
    B = U - Q @ U - t
    b = float(-q @ U - t0)
    sign = np.sign(A)
    flip = sign + (A == 0)
    B = B * flip
    A = A * sign
    diagQ = np.diag(Q)
    if np.any(diagQ <= 0) or q0 <= 0:
        raise NumericalFailure("posterior variances must be positive")
    S = np.sqrt(lam * diagQ)
    s = math.sqrt(lam * q0)
    tau = conformal_rank(alpha, n)
    Q = np.array(Q)
    _freeze(Q, q, tbar, A, B, S, flip)
    pre = Precomputation(
        Q=Q, q=q, q0=float(q0), tbar=tbar, A=A, a=float(a), B=B, b=b,
        S=S, s=s, lam=lam, n=n, tau=tau, alpha=float(alpha), flip=flip,
    )
    if check_idiocentric and not pre.idiocentric():
        raise IdiocentricityViolation(
            f"lambda={lam:.6g} is below max diag and violates a/s > A_i/S_i"
        )
    return pre


def precompute(bundle: PriorBundle, U, alpha: float, lam: float | None = None) -> Precomputation:
    """Factorize the augmented ridge system for one test point.

    Parameters
    ----------
    bundle : PriorBundle
        Prior means and Gram blocks.
    U : array_like, shape (n,)
        Training responses (true effects, or observed effects Y).
    alpha : float
        Miscoverage level in (0, 1).
    lam : float, optional
        Ridge parameter. Defaults to the largest diagonal entry of the
        augmented Gram matrix; smaller values are accepted only if the
        residuals remain idiocentric.
    """
    U = np.asarray(U, dtype=float).reshape(-1)
    if U.size != bundle.n:
        raise InvalidInputError(f"expected {bundle.n} responses, got {U.size}")
    if not np.all(np.isfinite(U)):
        raise InvalidInputError("responses must be finite")
    conformal_rank(alpha, bundle.n)
    Kbar = bundle.Kbar
    lam, check = _check_lambda(lam, _max_diag(bundle.K, bundle.k0))
    factor = _cho_factor(Kbar + lam * np.eye(bundle.n + 1), lam)
    sol = scipy.linalg.cho_solve(factor, np.column_stack([Kbar, bundle.Mbar]), check_finite=False)
    Qbar = sol[:, :-1]
    tbar = lam * sol[:, -1]
    return _finish(
        Qbar[:-1, :-1], Qbar[-1, :-1].copy(), Qbar[-1, -1], tbar, U, lam, alpha, check
    )


class TrainingFactor:
    """Reusable factorization of the training block for many test points.

    With ``P = (K + lam I)^-1`` cached, the augmented inverse for a test
    point follows from its Schur complement ``c = k0 + lam - k^T P k`` in
    O(n^2), instead of refactorizing the (n+1)-point system.
    """

    def __init__(self, K, M, U):
        self.K = np.asarray(K, dtype=float)
        self.M = np.asarray(M, dtype=float).reshape(-1)
        self.U = np.asarray(U, dtype=float).reshape(-1)
        n = self.M.size
        if self.K.shape != (n, n) or self.U.size != n:
            raise InvalidInputError("inconsistent training shapes")
        _check_gram(self.K)
        self._cache: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    @property
    def n(self) -> int:
        return self.M.size

    def _inverse(self, lam: float):
        if lam not in self._cache:
            n = self.n
            factor = _cho_factor(self.K + lam * np.eye(n), lam)
            P = scipy.linalg.cho_solve(factor, np.eye(n), check_finite=False)
            P = 0.5 * (P + P.T)
            self._cache[lam] = (P, P @ self.M, P @ self.U)
        return self._cache[lam]

    def precompute(self, m: float, k, k0: float, alpha: float, lam: float | None = None) -> Precomputation:
        k = np.asarray(k, dtype=float).reshape(-1)
        if k.size != self.n:
            raise InvalidInputError(f"cross-kernel must have length {self.n}")
        if not (k0 > 0 and math.isfinite(m)):
            raise InvalidInputError("need k0 > 0 and finite prior mean")
        diag_max = float(np.max(np.diag(self.K)))
        lam, check = _check_lambda(lam, max(diag_max, float(k0)))
        P, PM, PU = self._inverse(lam)
        w = P @ k
        c = float(k0 + lam - k @ w)
        if c < lam - PSD_RTOL * max(diag_max, k0):
            raise InvalidGramError("augmented Gram matrix is not positive semidefinite")
        Q = np.eye(self.n) - lam * (P + np.outer(w, w) / c)
        q = lam * w / c
        q0 = 1.0 - lam / c
        t = lam * (PM + w * ((w @ self.M - m) / c))
        t0 = lam * (m - w @ self.M) / c
        return _finish(Q, q, q0, np.append(t, t0), self.U, lam, alpha, check)

    def iter_precompute(self, m_vec, k_mat, k0_vec, alpha: float, lam: float | None = None) -> Iterator[Precomputation]:
        """Yield one Precomputation per test point; ``k_mat`` is (n, n_test)."""
        k_mat = np.asarray(k_mat, dtype=float)
        for j in range(k_mat.shape[1]):
            yield self.precompute(float(m_vec[j]), k_mat[:, j], float(k0_vec[j]), alpha, lam)
