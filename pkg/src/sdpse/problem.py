"""Assembly and post-processing of the relaxed estimation problem.

The estimation problem is: minimize the weighted sum of squared residuals
(z_i - Tr(A_i W))^2 / sigma_i^2 over PSD matrices W, with the angle reference
fixed by forcing the imaginary-part diagonal entry of each anchor node to
zero (a PSD matrix with a zero diagonal entry has the whole row zero, which
pins that node's angle to zero exactly).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import RankRecoveryError, SolverError, ValidationError
from .measurements import Measurement, matrix_for
from .sdpmat import MeasurementMatrixSet, SdpMatrix

RANK1_SILENT = 1e-4
RANK1_ERROR = 0.1


@dataclass
class SdpProblem:
    matrix_set: MeasurementMatrixSet
    matrices: List[SdpMatrix]
    z: np.ndarray
    sigma: np.ndarray
    anchors: List[int]
    measurements: List[Measurement]

    @property
    def dim(self) -> int:
        return self.matrix_set.dim

    @property
    def n_measurements(self) -> int:
        return len(self.matrices)


def _node_components(mats: MeasurementMatrixSet) -> List[set]:
    n = mats.n_nodes
    seen = [False] * n
    comps = []
    neighbors = {k: [] for k in range(n)}
    for (l, m) in mats.pairs:
        neighbors[l].append(m)
    for start in range(n):
        if seen[start]:
            continue
        comp = set()
        stack = [start]
        seen[start] = True
        while stack:
            i = stack.pop()
            comp.add(i)
            for j in neighbors[i]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        comps.append(comp)
    return comps


def assemble_problem(
    mats: MeasurementMatrixSet,
    measurements: Sequence[Measurement],
    anchors: Sequence[int],
) -> SdpProblem:
    """Turn measurements into (A_i, z_i, sigma_i) triples plus anchors.

    Magnitude readings are squared here; their sigma is propagated to first
    order (sigma of |V|^2 is about 2 |V| sigma of |V|).
    """
    if not measurements:
        raise ValidationError("empty measurement list")
    n = mats.n_nodes
    anchors = sorted(set(int(a) for a in anchors))
    for a in anchors:
        if not (0 <= a < n):
            raise ValidationError(f"anchor node {a} out of range")
    for comp in _node_components(mats):
        if not comp.intersection(anchors):
            raise ValidationError(
                f"no anchor in connected component containing node {min(comp)}; "
                "the angle reference is undetermined"
            )
    matrices: List[SdpMatrix] = []
    z = np.empty(len(measurements))
    sig = np.empty(len(measurements))
    for i, m in enumerate(measurements):
        matrices.append(matrix_for(mats, m.kind, m.node, m.far_node))
        if m.kind == "Vmag":
            z[i] = m.value * m.value
            sig[i] = max(2.0 * abs(m.value) * m.sigma, 1e-12)
        else:
            z[i] = m.value
            sig[i] = m.sigma
        if not (sig[i] > 0):
            raise ValidationError(f"measurement {i}: non-positive variance")
    return SdpProblem(
        matrix_set=mats,
        matrices=matrices,
        z=z,
        sigma=sig,
        anchors=list(anchors),
        measurements=list(measurements),
    )


def compute_residuals(
    problem: SdpProblem, W: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Raw residuals z_i - Tr(A_i W) and their sigma-normalized values."""
    r = np.array([problem.z[i] - A.dot(W) for i, A in enumerate(problem.matrices)])
    return r, r / problem.sigma


def extract_state(
    W: np.ndarray, anchors: Sequence[int], raise_on_bad: bool = True
) -> Tuple[np.ndarray, float]:
    """Best rank-one factor of W and the quality ratio lambda2/lambda1.

    The global sign is fixed so the first anchor node's real part is
    positive.  A large ratio means the relaxation did not land near a
    physical state; by default that raises instead of returning garbage.
    """
    W = np.asarray(W, dtype=float)
    vals, vecs = np.linalg.eigh(W)
    lam1 = vals[-1]
    lam2 = max(vals[-2], 0.0) if len(vals) > 1 else 0.0
    if lam1 <= 0:
        raise SolverError("degenerate lifted state: leading eigenvalue <= 0")
    ratio = lam2 / lam1
    X = np.sqrt(lam1) * vecs[:, -1]
    pivot = int(anchors[0]) if len(anchors) else int(np.argmax(np.abs(X)))
    if X[pivot] == 0.0:
        pivot = int(np.argmax(np.abs(X)))
    if X[pivot] < 0:
        X = -X
    if ratio > RANK1_ERROR and raise_on_bad:
        raise RankRecoveryError(
            f"rank-1 quality ratio {ratio:.3g} exceeds {RANK1_ERROR}; "
            "the measurement set likely leaves the state undetermined"
        )
    if ratio > RANK1_SILENT:
        warnings.warn(
            f"rank-1 quality ratio {ratio:.3g} above {RANK1_SILENT}; "
            "treat the extracted state with caution",
            stacklevel=2,
        )
    return X, float(ratio)
