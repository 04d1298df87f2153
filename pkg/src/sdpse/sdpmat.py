"""Coefficient matrices of the lifted formulation.

Every scalar measurement on the network is a linear functional of the lifted
state W = X X^T, where X stacks the real parts of the node voltages over the
imaginary parts.  This module builds the real symmetric coefficient matrices
realizing those functionals:

    active injection at node k     Tr(Y_k W)
    reactive injection at node k   Tr(Ybar_k W)
    active flow out of end (l,m)   Tr(Y_lm W)
    reactive flow out of (l,m)     Tr(Ybar_lm W)
    squared magnitude at node k    Tr(M_k W)

Flows are referenced *into* the end node: Tr(Y_lm W) is the active power the
branch delivers into node l, so on a lossless branch the two end flows sum to
zero.  Each matrix is stored as a flat list of (row, col, coeff) terms; branch
matrices touch at most 16 entries, which the solver exploits heavily.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np

from .errors import ValidationError
from .network import NetworkModel


class SdpMatrix:
    """Sparse real symmetric matrix stored as explicit (row, col, coeff) terms.

    The term list covers both triangles, so Tr(A W) = sum c * W[p, q] without
    any symmetry bookkeeping at evaluation time.
    """

    __slots__ = ("dim", "rows", "cols", "coeffs")

    def __init__(self, dim: int, entries: Dict[Tuple[int, int], float]):
        self.dim = dim
        items = sorted((rc, v) for rc, v in entries.items() if v != 0.0)
        self.rows = np.array([rc[0] for rc, _ in items], dtype=np.intp)
        self.cols = np.array([rc[1] for rc, _ in items], dtype=np.intp)
        self.coeffs = np.array([v for _, v in items], dtype=float)

    def dot(self, W: np.ndarray) -> float:
        """Tr(A W) for dense symmetric W."""
        if W.shape != (self.dim, self.dim):
            raise ValidationError(
                f"dimension mismatch: matrix is {self.dim}, W is {W.shape}"
            )
        return float(np.dot(self.coeffs, W[self.rows, self.cols]))

    def quad(self, X: np.ndarray) -> float:
        """X^T A X without forming the outer product."""
        if X.shape[-1] != self.dim:
            raise ValidationError(
                f"dimension mismatch: matrix is {self.dim}, X is {X.shape}"
            )
        return float(np.dot(self.coeffs, X[self.rows] * X[self.cols]))

    def matvec(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dim)
        np.add.at(out, self.rows, self.coeffs * X[self.cols])
        return out

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.dim, self.dim))
        A[self.rows, self.cols] = self.coeffs
        return A

    def __add__(self, other: "SdpMatrix") -> "SdpMatrix":
        entries: Dict[Tuple[int, int], float] = {}
        for mat in (self, other):
            for r, c, v in zip(mat.rows, mat.cols, mat.coeffs):
                entries[(int(r), int(c))] = entries.get((int(r), int(c)), 0.0) + v
        return SdpMatrix(self.dim, entries)

    def __sub__(self, other: "SdpMatrix") -> "SdpMatrix":
        return self + other.scaled(-1.0)

    def scaled(self, factor: float) -> "SdpMatrix":
        entries = {
            (int(r), int(c)): factor * v
            for r, c, v in zip(self.rows, self.cols, self.coeffs)
        }
        return SdpMatrix(self.dim, entries)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if len(self.coeffs) else 0.0


def _accumulate(entries: Dict[Tuple[int, int], float], r: int, c: int, v: float) -> None:
    if v != 0.0:
        entries[(r, c)] = entries.get((r, c), 0.0) + v


def realify_active(
    n: int, complex_entries: Iterable[Tuple[int, int, complex]]
) -> SdpMatrix:
    """Real symmetric A with X^T A X = Re{V^H C V} for C given entrywise."""
    entries: Dict[Tuple[int, int], float] = {}
    for a, b, v in complex_entries:
        vr, vi = v.real, v.imag
        _accumulate(entries, a, b, vr / 2.0)
        _accumulate(entries, b, a, vr / 2.0)
        _accumulate(entries, n + a, n + b, vr / 2.0)
        _accumulate(entries, n + b, n + a, vr / 2.0)
        _accumulate(entries, b, n + a, vi / 2.0)
        _accumulate(entries, a, n + b, -vi / 2.0)
        _accumulate(entries, n + a, b, vi / 2.0)
        _accumulate(entries, n + b, a, -vi / 2.0)
    return SdpMatrix(2 * n, entries)


def realify_reactive(
    n: int, complex_entries: Iterable[Tuple[int, int, complex]]
) -> SdpMatrix:
    """Real symmetric A with X^T A X = -Im{V^H C V} for C given entrywise."""
    entries: Dict[Tuple[int, int], float] = {}
    for a, b, v in complex_entries:
        vr, vi = v.real, v.imag
        _accumulate(entries, a, b, -vi / 2.0)
        _accumulate(entries, b, a, -vi / 2.0)
        _accumulate(entries, n + a, n + b, -vi / 2.0)
        _accumulate(entries, n + b, n + a, -vi / 2.0)
        _accumulate(entries, a, n + b, -vr / 2.0)
        _accumulate(entries, b, n + a, vr / 2.0)
        _accumulate(entries, n + b, a, -vr / 2.0)
        _accumulate(entries, n + a, b, vr / 2.0)
    return SdpMatrix(2 * n, entries)


@dataclass(frozen=True)
class PairData:
    """Aggregated electrical data of the branches joining a node pair,
    oriented from the first node of the key toward the second."""

    series: complex
    shunt_at_from: complex


class MeasurementMatrixSet:
    """All coefficient matrices for one network, keyed by node or node pair."""

    def __init__(self, model: NetworkModel):
        self.model = model
        n = model.n_nodes
        self.n_nodes = n
        self.dim = 2 * n

        # Aggregate parallel in-service branches per directed node pair.
        pair_series: Dict[Tuple[int, int], complex] = {}
        pair_shunt: Dict[Tuple[int, int], complex] = {}
        for br in model.closed_branches:
            for l, m in ((br.from_node, br.to_node), (br.to_node, br.from_node)):
                pair_series[(l, m)] = pair_series.get((l, m), 0j) + br.series_admittance
                pair_shunt[(l, m)] = (
                    pair_shunt.get((l, m), 0j) + br.shunt_admittance_at_from
                )
        self.pairs: Dict[Tuple[int, int], PairData] = {
            key: PairData(series=pair_series[key], shunt_at_from=pair_shunt[key])
            for key in pair_series
        }

        ybus = model.ybus
        self.inj_p: Dict[int, SdpMatrix] = {}
        self.inj_q: Dict[int, SdpMatrix] = {}
        self.vmag: Dict[int, SdpMatrix] = {}
        for k in range(n):
            row = [(k, j, ybus[k, j]) for j in np.nonzero(ybus[k])[0]]
            self.inj_p[k] = realify_active(n, row)
            self.inj_q[k] = realify_reactive(n, row)
            self.vmag[k] = SdpMatrix(2 * n, {(k, k): 1.0, (n + k, n + k): 1.0})

        self.flow_p: Dict[Tuple[int, int], SdpMatrix] = {}
        self.flow_q: Dict[Tuple[int, int], SdpMatrix] = {}
        for (l, m), pd in self.pairs.items():
            flow_entries = [(l, l, -(pd.series + pd.shunt_at_from)), (l, m, pd.series)]
            self.flow_p[(l, m)] = realify_active(n, flow_entries)
            self.flow_q[(l, m)] = realify_reactive(n, flow_entries)

    def neighbors(self, k: int) -> List[int]:
        return sorted(m for (l, m) in self.pairs if l == k)


def build_matrix_set(model: NetworkModel) -> MeasurementMatrixSet:
    return MeasurementMatrixSet(model)


def eval_measurement(A: SdpMatrix, X: np.ndarray) -> float:
    """Value of the measurement functional at the (unlifted) state X."""
    return A.quad(np.asarray(X, dtype=float))


def count_variables(n_nodes: int, n_branches: int) -> Dict[str, int]:
    """Variable and equation counts of the lifted formulation.

    A symmetric W has n(2n+1) scalar entries, of which only 3 per node and 4
    per branch carry nonzero coefficients in any measurement; the largest
    possible measurement set has that same size but contains only n + 2m
    linearly independent equations.
    """
    if n_nodes < 1 or n_branches < 0:
        raise ValidationError("need n_nodes >= 1 and n_branches >= 0")
    distinct = 3 * n_nodes + 4 * n_branches
    return {
        "total_sym": n_nodes * (2 * n_nodes + 1),
        "distinct": distinct,
        "max_measurements": distinct,
        "independent": n_nodes + 2 * n_branches,
    }
