"""Recovery and phenomenology detectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConventionError, UnsupportedError
from .manifold import Scale, StiefelPoint, correlation_matrix, overlap_gram
from .trajectory import Trajectory

TIE_TOL = 1e-12


@dataclass(frozen=True)
class SelectionResult:
    pairs: list
    values: list


@dataclass
class EliminationReport:
    ordering: list
    stop_times: list
    satisfied: bool
    violations: list = field(default_factory=list)
    stride: int = 1


@dataclass(frozen=True)
class ConditionParams:
    gamma0: float = 1.0
    gamma1: float = 3.0
    gamma2: float = 0.05
    gamma: float = 0.1
    n_level: int = 1

    def __post_init__(self):
        if not (self.gamma1 > self.gamma2 > 0):
            raise ValueError(f"need gamma1 > gamma2 > 0, got {self.gamma1}, {self.gamma2}")
        if not (self.gamma1 > self.gamma > 0):
            raise ValueError(f"need gamma1 > gamma > 0, got {self.gamma1}, {self.gamma}")
        if self.gamma0 <= 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")


@dataclass
class ConditionReport:
    ok: bool
    offending: list = field(default_factory=list)
    statistic: float = float("nan")


def _arr(M) -> np.ndarray:
    return np.asarray(getattr(M, "data", M), dtype=float)


def init_matrix_I0(M0, lambdas, p: int) -> np.ndarray:
    """``I0[i, j] = l_i l_j m_ij^{p-2}``, zeroed where ``m_ij^{p-2} < 0``.

    For p = 2 this is ``l_i l_j`` (the initial correlations drop out).
    """
    M0 = _arr(M0)
    lam = np.asarray(lambdas, dtype=float)
    P = M0 ** (p - 2)
    return np.where(P >= 0, np.outer(lam, lam) * P, 0.0)


def greedy_max_selection(A) -> SelectionResult:
    """Iterated argmax of ``|A|`` over the surviving rows and columns.

    Entries within 1e-12 of the maximum are tied; the smallest (row, column)
    in lexicographic order wins.
    """
    A = np.abs(_arr(A))
    r = A.shape[0]
    rows, cols = list(range(r)), list(range(r))
    pairs, values = [], []
    for _ in range(r):
        sub = A[np.ix_(rows, cols)]
        best = sub.max()
        cand = np.argwhere(sub >= best - TIE_TOL)
        a, b = min((rows[i], cols[j]) for i, j in cand)
        pairs.append((a, b))
        values.append(float(A[a, b]))
        rows.remove(a)
        cols.remove(b)
    return SelectionResult(pairs, values)


def _pair_ok(C: np.ndarray, i: int, j: int, eps: float, eps_prime: float) -> np.ndarray:
    """Per-snapshot test of both elimination clauses for pair (i, j)."""
    big = C[:, i, j] >= 1 - eps
    row = np.delete(C[:, i, :], j, axis=1)
    col = np.delete(C[:, :, j], i, axis=1)
    small = np.all(row <= eps_prime, axis=1) & np.all(col <= eps_prime, axis=1)
    return big & small


def detect_sequential_elimination(traj: Trajectory, eps: float, eps_prime: float) -> EliminationReport:
    """Find the ordering and stopping times of a sequential elimination.

    For every pair, the stopping time is the first recorded snapshot from
    which both clauses hold until the end of the trajectory. The pairs that
    have one are sorted by that time; success requires them to form a
    permutation covering every row and column.
    """
    if not len(traj):
        raise ValueError("empty trajectory")
    if not (0 < eps < 1 and 0 < eps_prime <= 1):
        raise ValueError("need 0 < eps < 1 and 0 < eps_prime <= 1")
    C = np.abs(traj.corr_array())
    times = traj.times_array()
    r = C.shape[1]
    stride = int(traj.meta.get("record_every", 1))
    persist = {}
    for i in range(r):
        for j in range(r):
            ok = _pair_ok(C, i, j, eps, eps_prime)
            if ok[-1]:
                # first index of the final run of True values
                bad = np.flatnonzero(~ok)
                k = bad[-1] + 1 if bad.size else 0
                persist[(i, j)] = k
    ordered = sorted(persist, key=lambda ij: (persist[ij], ij))
    rows = {i for i, _ in ordered}
    cols = {j for _, j in ordered}
    violations = []
    satisfied = len(ordered) == r and len(rows) == r and len(cols) == r
    if not satisfied:
        for i in range(r):
            if i not in rows:
                j = int(np.argmax(C[-1, i]))
                violations.append({"row": i, "best_col": j, "final_abs": float(C[-1, i, j])})
        if len(ordered) > r or len(rows) != len(ordered) or len(cols) != len(ordered):
            violations.append({"reason": "persisting pairs do not form a matching", "pairs": ordered})
    return EliminationReport(
        ordering=ordered,
        stop_times=[float(times[persist[ij]]) for ij in ordered],
        satisfied=satisfied,
        violations=violations,
        stride=stride,
    )


def recovery_order(traj: Trajectory, sigma, level: float) -> list:
    """Matched pairs ``(sigma[j], j)`` sorted by the first time ``|m|`` reaches ``level``.

    Pairs that never reach it go last; ties break lexicographically.
    """
    H = traj.hitting_times(level)
    pairs = [(int(s), j) for j, s in enumerate(sigma)]
    return sorted(pairs, key=lambda ij: (np.inf if np.isnan(H[ij]) else H[ij], ij))


def matches_greedy_order(traj: Trajectory, sigma, lambdas, p: int, level: float) -> bool:
    """Whether the recovery order equals the greedy selection on the initial ``I0``."""
    greedy = greedy_max_selection(init_matrix_I0(traj.corr[0], lambdas, p)).pairs
    return recovery_order(traj, sigma, level) == list(greedy)


def exact_recovery(Mf, eps: float) -> bool:
    """``|m_ii| >= 1 - eps`` for every i."""
    Mf = _arr(Mf)
    return bool(np.all(np.abs(np.diag(Mf)) >= 1 - eps))


def permutation_recovery(Mf, eps: float):
    """Permutation ``sigma`` with ``|m_{sigma(i), i}| >= 1 - eps`` for all i, or None.

    Returned as a tuple where entry i is the spike index matched to column i.
    """
    C = np.abs(_arr(Mf))
    sigma = tuple(int(np.argmax(C[:, i])) for i in range(C.shape[1]))
    if len(set(sigma)) != len(sigma):
        return None
    if all(C[sigma[i], i] >= 1 - eps for i in range(len(sigma))):
        return sigma
    return None


def recovery_signs(Mf, sigma) -> tuple:
    """Sign of each matched correlation (which of +v or -v was found)."""
    Mf = _arr(Mf)
    return tuple(int(np.sign(Mf[s, i])) for i, s in enumerate(sigma))


def subspace_error(X: StiefelPoint, V: StiefelPoint, tol: float = 1e-9) -> dict:
    """``||X X^T - V V^T||_F^2 / scale^4`` and ``2 (r - Tr G)``; asserts they agree."""
    if X.scale is not V.scale:
        raise ConventionError("X and V use different conventions")
    s2 = X.scale2
    D = X.data @ X.data.T - V.data @ V.data.T
    frob_sq = float(np.sum(D * D) / s2**2)
    G = overlap_gram(correlation_matrix(V, X)).data
    trace_gap = float(2 * (X.r - np.trace(G)))
    if abs(frob_sq - trace_gap) > tol * max(1.0, abs(frob_sq)):
        raise AssertionError(f"subspace identity failed: {frob_sq} vs {trace_gap}")
    return {"frob_sq": frob_sq, "trace_gap": trace_gap}


def _sqrtN_corr(X: StiefelPoint, V: StiefelPoint) -> np.ndarray:
    return correlation_matrix(V.rescaled(X.scale), X).data


def check_condition1(X: StiefelPoint, V: StiefelPoint, params: ConditionParams, absolute: bool = False) -> ConditionReport:
    """``gamma2 / sqrt(N) <= m_ij < gamma1 / sqrt(N)`` for every entry.

    With ``absolute=True`` the band is applied to ``|m_ij|``, the form the
    anti-concentration argument for random starts controls.
    """
    M = _sqrtN_corr(X, V)
    s = np.sqrt(X.N)
    vals = np.abs(M) if absolute else M
    ok = (vals >= params.gamma2 / s) & (vals < params.gamma1 / s)
    off = [(int(i), int(j), float(M[i, j])) for i, j in np.argwhere(~ok)]
    return ConditionReport(bool(ok.all()), off, float(np.max(np.abs(M)) * s))


def check_condition2(X: StiefelPoint, V: StiefelPoint, lambdas, p: int, params: ConditionParams) -> ConditionReport:
    """``|l_i l_j m_ij^{p-2} / (l_k l_l m_kl^{p-2}) - 1| > gamma / gamma1`` over distinct pairs.

    Quadruples with ``(i, j) == (k, l)`` are skipped (their ratio is always 1).
    A zero denominator counts as a failure.
    """
    if p < 3:
        raise ValueError("condition 2 is defined for p >= 3")
    M = _sqrtN_corr(X, V)
    lam = np.asarray(lambdas, dtype=float)
    Q = (np.outer(lam, lam) * M ** (p - 2)).ravel()
    thr = params.gamma / params.gamma1
    off, sep = [], np.inf
    n = Q.size
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            if Q[b] == 0:
                off.append((divmod(a, M.shape[0]), divmod(b, M.shape[0]), float("inf")))
                continue
            d = abs(Q[a] / Q[b] - 1)
            sep = min(sep, d)
            if not d > thr:
                off.append((divmod(a, M.shape[0]), divmod(b, M.shape[0]), float(d)))
    return ConditionReport(not off, off, float(sep))


def check_condition0_level1(X: StiefelPoint, W, model, M: float, beta: float, gamma0: float, level: int = 1) -> ConditionReport:
    """``|L0 m_ij| <= gamma0 / sqrt(N)`` with L0 the noise part of the generator."""
    if level != 1:
        raise UnsupportedError("only level 1 of condition 0 is supported")
    from .dynamics import generator_noise_part

    if X.scale is not Scale.SQRTN:
        raise ConventionError("condition 0 is stated on the sqrt(N) manifold")
    L0 = generator_noise_part(X, W, model, beta, M)
    stat = float(np.max(np.abs(L0)) * np.sqrt(X.N))
    off = [(int(i), int(j), float(L0[i, j])) for i, j in np.argwhere(np.abs(L0) * np.sqrt(X.N) > gamma0)]
    return ConditionReport(not off, off, stat)
