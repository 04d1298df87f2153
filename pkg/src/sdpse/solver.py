"""Embedded solver for the relaxed estimation problem.

Primal barrier Newton method on

    f_mu(W) = sum_i (z_i - Tr(A_i W))^2 / sigma_i^2  -  mu * logdet(W)

over the anchored subspace (anchored rows/columns eliminated), with mu driven
geometrically toward zero.  The Newton step is computed through a
matrix-inversion-lemma reformulation that only needs an m x m factorization
(m = number of measurements) plus products against the sparse coefficient
terms, never a dense Hessian over matrix space.

A rank-one Gauss-Newton refinement runs afterwards: the leading eigenvector
of the barrier solution seeds a Levenberg-Marquardt descent on the unlifted
state, which tightens consistent problems down to machine precision.  The
refined point is kept only when it strictly improves the objective, so
ill-posed problems keep the (honestly bad) barrier solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ValidationError
from .problem import SdpProblem


@dataclass
class SolverConfig:
    max_iterations: int = 200
    convergence_tol: float = 1e-9
    barrier_reduction: float = 0.2
    initial_W: Union[str, np.ndarray] = "identity_scaled"
    polish: bool = True
    mu_initial: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not (self.convergence_tol > 0):
            raise ValidationError("convergence_tol must be positive")
        if not (0.0 < self.barrier_reduction < 1.0):
            raise ValidationError("barrier_reduction must be in (0, 1)")


@dataclass
class SolveReport:
    W: np.ndarray
    objective: float
    iterations: int
    status: str  # converged | max_iter | numerical_failure
    polished_X: Optional[np.ndarray] = None
    rank1_ratio_raw: float = float("nan")


class _Terms:
    """Flattened sparse terms of all coefficient matrices on the reduced
    (anchor-eliminated) index set."""

    def __init__(self, problem: SdpProblem, keep: np.ndarray):
        dim = problem.dim
        pos = -np.ones(dim, dtype=np.intp)
        pos[keep] = np.arange(len(keep))
        rows: List[np.ndarray] = []
        p_parts: List[np.ndarray] = []
        q_parts: List[np.ndarray] = []
        c_parts: List[np.ndarray] = []
        for i, A in enumerate(problem.matrices):
            p = pos[A.rows]
            q = pos[A.cols]
            ok = (p >= 0) & (q >= 0)
            p_parts.append(p[ok])
            q_parts.append(q[ok])
            c_parts.append(A.coeffs[ok])
            rows.append(np.full(ok.sum(), i, dtype=np.intp))
        self.m = problem.n_measurements
        self.d = len(keep)
        self.row = np.concatenate(rows)
        self.p = np.concatenate(p_parts)
        self.q = np.concatenate(q_parts)
        self.c = np.concatenate(c_parts)
        self.n_terms = len(self.c)
        # m x n_terms selector carrying the coefficients.
        self.S = sp.csr_matrix(
            (self.c, (self.row, np.arange(self.n_terms))),
            shape=(self.m, self.n_terms),
        )

    def values(self, W: np.ndarray) -> np.ndarray:
        """Tr(A_i W) for all i."""
        return self.S @ W[self.p, self.q]

    def accumulate(self, weights: np.ndarray) -> np.ndarray:
        """Dense sum_i weights_i A_i."""
        out = np.zeros((self.d, self.d))
        np.add.at(out, (self.p, self.q), weights[self.row] * self.c)
        return out

    def gram(self, W: np.ndarray, block: int = 1024) -> np.ndarray:
        """G[i, j] = Tr(A_i W A_j W)."""
        if self.m * self.d * self.d <= 40_000_000:
            # Stack P_i = A_i W densely; then G = <P_i, P_j^T> is one BLAS
            # product over the flattened stacks.
            P = np.zeros((self.m, self.d, self.d))
            np.add.at(P, (self.row, self.p), self.c[:, None] * W[self.q])
            F = P.reshape(self.m, -1)
            Ft = P.transpose(0, 2, 1).reshape(self.m, -1)
            return F @ Ft.T
        # Term-pair fallback with bounded memory for very large instances.
        Wp = W[self.p]
        Wq = W[self.q]
        G = np.zeros((self.m, self.m))
        St = self.S.T.tocsc()
        for lo in range(0, self.n_terms, block):
            hi = min(lo + block, self.n_terms)
            mt = Wp[lo:hi][:, self.p] * Wq[lo:hi][:, self.q]
            G += self.S[:, lo:hi] @ (mt @ St)
        return G

    def quad_values(self, X: np.ndarray) -> np.ndarray:
        """X^T A_i X for all i."""
        return self.S @ (X[self.p] * X[self.q])

    def jac_rows(self, X: np.ndarray) -> np.ndarray:
        """Rows A_i X stacked into an m x d matrix."""
        out = np.zeros((self.m, self.d))
        np.add.at(out, (self.row, self.p), self.c * X[self.q])
        return out


def _chol_logdet(W: np.ndarray) -> Optional[float]:
    try:
        L = np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        return None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _solve_spd(M: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
    """SPD solve with escalating diagonal regularization on failure."""
    jitter = 0.0
    base = 1e-14 * max(np.trace(M) / max(len(M), 1), 1.0)
    for _ in range(8):
        try:
            cf = sla.cho_factor(
                M + jitter * np.eye(len(M)) if jitter else M, lower=True
            )
            return sla.cho_solve(cf, b)
        except np.linalg.LinAlgError:
            jitter = base if jitter == 0.0 else jitter * 100.0
    return None


def solve(problem: SdpProblem, config: Optional[SolverConfig] = None) -> SolveReport:
    if config is None:
        config = SolverConfig()
    dim = problem.dim
    n = dim // 2
    drop = set(n + a for a in problem.anchors)
    keep = np.array([i for i in range(dim) if i not in drop], dtype=np.intp)
    terms = _Terms(problem, keep)
    d = terms.d
    w = 1.0 / (problem.sigma * problem.sigma)
    z = problem.z

    def objective(Wm: np.ndarray) -> float:
        res = z - terms.values(Wm)
        return float(np.dot(w, res * res))

    if isinstance(config.initial_W, np.ndarray):
        W = np.array(config.initial_W[np.ix_(keep, keep)], dtype=float)
        if _chol_logdet(W + 1e-12 * np.eye(d)) is None:
            W = np.eye(d)
        else:
            W = W + 1e-8 * np.eye(d)
    else:
        # Best multiple of the identity in the least-squares sense: the
        # objective is quadratic in the scale, so the minimizer is closed
        # form.  This matters when measurement weights are large; a plain
        # identity start can sit many orders of magnitude off.
        a = terms.values(np.eye(d))
        denom = float(np.dot(w * a, a))
        alpha = float(np.dot(w * z, a)) / denom if denom > 0 else 1.0
        W = max(alpha, 1e-6) * np.eye(d)

    # Start the barrier at the scale of the initial misfit so the first
    # centering passes are genuinely damped, then drive it down.
    mu = config.mu_initial * max(objective(W) / d, 1e-6)
    iterations = 0
    status = "converged"
    sigma2_half = problem.sigma * problem.sigma / 2.0

    while True:
        # Center at the current mu.
        for _ in range(40):
            if iterations >= config.max_iterations:
                status = "max_iter"
                break
            logdet = _chol_logdet(W)
            if logdet is None:
                status = "numerical_failure"
                break
            Winv = np.linalg.inv(W)
            Winv = (Winv + Winv.T) / 2.0
            res = z - terms.values(W)
            Rm = 2.0 * terms.accumulate(w * res) + mu * Winv
            Rm = (Rm + Rm.T) / 2.0
            T = W @ Rm @ W
            u = terms.values(T)
            G = terms.gram(W)
            s = _solve_spd(mu * np.diag(sigma2_half) + G, u)
            if s is None:
                status = "numerical_failure"
                break
            dW = (T - W @ terms.accumulate(s) @ W) / mu
            dW = (dW + dW.T) / 2.0
            lam2 = float(np.sum(Rm * dW))
            iterations += 1
            if lam2 <= 0:
                break
            # Backtracking line search keeping the iterate PSD.
            f0 = objective(W) - mu * logdet
            t = 1.0
            accepted = False
            while t > 1e-13:
                Wt = W + t * dW
                ld = _chol_logdet(Wt)
                if ld is not None:
                    ft = objective(Wt) - mu * ld
                    if ft <= f0 - 0.25 * t * lam2:
                        W = Wt
                        accepted = True
                        break
                t *= 0.5
            if not accepted:
                break
            if lam2 < max(1e-16, 0.1 * mu):
                break
        if status != "converged":
            break
        # Stop once mu is negligible against the (post-centering) objective;
        # the floor is evaluated after centering so a bad start cannot end
        # the solve before any progress is made.
        obj = objective(W)
        mu_min = max(config.convergence_tol * 1e-2, config.convergence_tol * obj / d)
        if mu < mu_min:
            break
        mu *= config.barrier_reduction

    obj_W = objective(W)
    polished_X = None
    obj_out = obj_W
    ratio_raw = float("nan")
    if status != "numerical_failure":
        vals = np.linalg.eigvalsh(W)
        lam1 = vals[-1]
        lam2v = max(vals[-2], 0.0) if d > 1 else 0.0
        if lam1 > 0:
            ratio_raw = lam2v / lam1
        if config.polish and lam1 > 0:
            X, obj_X = _polish(terms, z, w, W)
            if obj_X < obj_W:
                # The refined rank-one point is the better minimizer of the
                # same convex problem, so it becomes the returned solution
                # (and is exactly rank one).
                polished_X = X
                obj_out = obj_X
                W = np.outer(X, X)
                ratio_raw = 0.0

    W_full = np.zeros((dim, dim))
    W_full[np.ix_(keep, keep)] = W
    X_full = None
    if polished_X is not None:
        X_full = np.zeros(dim)
        X_full[keep] = polished_X
    return SolveReport(
        W=W_full,
        objective=obj_out,
        iterations=iterations,
        status=status,
        polished_X=X_full,
        rank1_ratio_raw=ratio_raw,
    )


def _polish(
    terms: _Terms, z: np.ndarray, w: np.ndarray, W: np.ndarray
) -> Tuple[np.ndarray, float]:
    """Levenberg-Marquardt on the unlifted state, seeded from W's leading
    eigenvector.  Returns the refined state and its objective."""
    vals, vecs = np.linalg.eigh(W)
    X = np.sqrt(max(vals[-1], 0.0)) * vecs[:, -1]
    sw = np.sqrt(w)

    def obj_of(Xc: np.ndarray) -> float:
        r = z - terms.quad_values(Xc)
        return float(np.dot(w, r * r))

    lam = 1e-8
    fx = obj_of(X)
    for _ in range(60):
        r = z - terms.quad_values(X)
        J = -2.0 * terms.jac_rows(X)
        Jw = sw[:, None] * J
        g = Jw.T @ (sw * r)
        H = Jw.T @ Jw
        step = _solve_spd(H + lam * np.eye(len(X)), -g)
        if step is None:
            break
        Xn = X + step
        fn = obj_of(Xn)
        if fn < fx:
            X, fx = Xn, fn
            lam = max(lam * 0.3, 1e-14)
            if fx < 1e-30 or float(np.linalg.norm(step)) < 1e-14:
                break
        else:
            lam *= 10.0
            if lam > 1e8:
                break
    return X, fx
