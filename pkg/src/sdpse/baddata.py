"""Pre-estimation bad-data detection via redundancy tests, and identification
by re-estimation sweeps.

Every fully-metered node yields an exact balance identity (injection plus
incident flows), and every fully-metered zero-shunt branch yields two more
(loss balance and voltage drop).  Under clean data each identity's residual
is zero-mean Gaussian with a composable variance; a residual far outside its
sigma flags all participating measurements as suspects.  Identification then
tries, for each combination of one suspect per violated identity, replacing
the hypothesized culprit by the value its own identity implies, re-running
the estimator, and keeping the combination that best explains the untouched
measurements.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import BudgetExceededError, SolverError, ValidationError
from .measurements import Measurement
from .network import NetworkModel
from .pipeline import EstimationResult, estimate
from .sdpmat import MeasurementMatrixSet
from .solver import SolverConfig

SIGMA2_FLOOR = 1e-18


@dataclass
class RedundancyResidual:
    kind: str  # node_P | node_Q | branch_1 | branch_2
    location: Tuple
    u: float
    sigma: float
    normalized: float
    members: List[int]
    # Identity terms (measurement index, coefficient, squares_value) with
    # sum(coeff * signal) expected to vanish; signal is the reading itself,
    # or its square for magnitude channels.
    terms: List[Tuple[int, float, bool]] = field(default_factory=list)

    def to_dict(self, model: NetworkModel) -> dict:
        return {
            "kind": self.kind,
            "location": _loc_name(model, self.location),
            "u": self.u,
            "sigma": self.sigma,
            "normalized": self.normalized,
            "members": self.members,
        }


@dataclass
class SuspectSet:
    trigger: RedundancyResidual
    members: List[int]


def _loc_name(model: NetworkModel, loc: Tuple) -> dict:
    if len(loc) == 1:
        nd = model.nodes[loc[0]]
        return {"bus": nd.bus, "phase": nd.phase}
    a, b = model.nodes[loc[0]], model.nodes[loc[1]]
    return {
        "from": {"bus": a.bus, "phase": a.phase},
        "to": {"bus": b.bus, "phase": b.phase},
    }


def prefilter_obvious(
    measurements: Sequence[Measurement],
) -> Tuple[List[Measurement], List[dict]]:
    """Strip readings that are wrong on their face (non-finite values,
    non-positive magnitudes) before any statistics run."""
    kept: List[Measurement] = []
    removed: List[dict] = []
    for i, m in enumerate(measurements):
        if not math.isfinite(m.value):
            removed.append({"index": i, "kind": m.kind, "reason": "non-finite value"})
        elif m.kind == "Vmag" and m.value <= 0:
            removed.append(
                {"index": i, "kind": m.kind, "reason": "non-positive magnitude"}
            )
        else:
            kept.append(m)
    return kept, removed


def compute_redundancy_residuals(
    model: NetworkModel,
    mats: MeasurementMatrixSet,
    measurements: Sequence[Measurement],
) -> List[RedundancyResidual]:
    idx: Dict[Tuple, int] = {}
    for i, m in enumerate(measurements):
        idx[(m.kind, m.node, m.far_node)] = i

    def get(kind, node, far=None):
        return idx.get((kind, node, far))

    out: List[RedundancyResidual] = []

    # Node balance: injection plus all incident flows sums to zero.
    for k in range(mats.n_nodes):
        nbrs = mats.neighbors(k)
        for res_kind, kind_inj, kind_flow in (
            ("node_P", "P_inj", "P_flow"),
            ("node_Q", "Q_inj", "Q_flow"),
        ):
            ids = [get(kind_inj, k)] + [get(kind_flow, k, m) for m in nbrs]
            if any(i is None for i in ids):
                continue
            u = sum(measurements[i].value for i in ids)
            var = sum(measurements[i].variance for i in ids)
            sigma = math.sqrt(max(var, SIGMA2_FLOOR))
            out.append(
                RedundancyResidual(
                    kind=res_kind,
                    location=(k,),
                    u=u,
                    sigma=sigma,
                    normalized=u / sigma,
                    members=list(ids),
                    terms=[(i, 1.0, False) for i in ids],
                )
            )

    # Branch identities on zero-shunt pairs, using the off-diagonal bus
    # admittance entry y = ybus(l, m).
    for (l, m), pd in sorted(mats.pairs.items()):
        if l > m:
            continue
        if pd.shunt_at_from != 0 or mats.pairs[(m, l)].shunt_at_from != 0:
            continue
        y = model.ybus[l, m]
        ids4 = [
            get("P_flow", l, m),
            get("P_flow", m, l),
            get("Q_flow", l, m),
            get("Q_flow", m, l),
        ]
        if any(i is None for i in ids4):
            continue
        plm, pml, qlm, qml = (measurements[i] for i in ids4)
        gi, gr = y.imag, y.real
        u1 = gi * (plm.value + pml.value) + gr * (qlm.value + qml.value)
        var1 = gi * gi * (plm.variance + pml.variance) + gr * gr * (
            qlm.variance + qml.variance
        )
        sigma1 = math.sqrt(max(var1, SIGMA2_FLOOR))
        out.append(
            RedundancyResidual(
                kind="branch_1",
                location=(l, m),
                u=u1,
                sigma=sigma1,
                normalized=u1 / sigma1,
                members=list(ids4),
                terms=[
                    (ids4[0], gi, False),
                    (ids4[1], gi, False),
                    (ids4[2], gr, False),
                    (ids4[3], gr, False),
                ],
            )
        )
        vl_i = get("Vmag", l)
        vm_i = get("Vmag", m)
        if vl_i is None or vm_i is None:
            continue
        vl, vm = measurements[vl_i], measurements[vm_i]
        y2 = abs(y) ** 2
        u2 = (
            gr * (plm.value - pml.value)
            - gi * (qlm.value - qml.value)
            - y2 * (vl.value**2 - vm.value**2)
        )
        var_vdiff = (2 * vl.value * vl.sigma) ** 2 + (2 * vm.value * vm.sigma) ** 2
        var2 = (
            gr * gr * (plm.variance + pml.variance)
            + gi * gi * (qlm.variance + qml.variance)
            + y2 * y2 * var_vdiff
        )
        if var2 <= 0:
            warnings.warn(
                f"voltage-drop residual variance non-positive ({var2:.3g}) on "
                f"pair ({l},{m}); flooring at {SIGMA2_FLOOR}",
                stacklevel=2,
            )
        sigma2 = math.sqrt(max(var2, SIGMA2_FLOOR))
        out.append(
            RedundancyResidual(
                kind="branch_2",
                location=(l, m),
                u=u2,
                sigma=sigma2,
                normalized=u2 / sigma2,
                members=ids4 + [vl_i, vm_i],
                terms=[
                    (ids4[0], gr, False),
                    (ids4[1], -gr, False),
                    (ids4[2], -gi, False),
                    (ids4[3], gi, False),
                    (vl_i, -y2, True),
                    (vm_i, y2, True),
                ],
            )
        )
    return out


def detect(
    model: NetworkModel,
    mats: MeasurementMatrixSet,
    measurements: Sequence[Measurement],
    threshold: float = 3.0,
) -> List[SuspectSet]:
    if not (threshold > 0):
        raise ValidationError("threshold must be positive")
    residuals = compute_redundancy_residuals(model, mats, measurements)
    return [
        SuspectSet(trigger=r, members=list(r.members))
        for r in residuals
        if abs(r.normalized) > threshold
    ]


def _replace_from_identity(
    measurements: List[Measurement], residual: RedundancyResidual, target: int
) -> Optional[Measurement]:
    """Solve the identity for the target measurement; None when infeasible."""
    c_k = None
    squared_k = False
    acc = 0.0
    var_acc = 0.0
    for i, coeff, squared in residual.terms:
        meas = measurements[i]
        if i == target:
            c_k = coeff
            squared_k = squared
            continue
        s = meas.value**2 if squared else meas.value
        var_s = (2 * meas.value * meas.sigma) ** 2 if squared else meas.variance
        acc += coeff * s
        var_acc += coeff * coeff * var_s
    if c_k is None or c_k == 0.0:
        return None
    s_k = -acc / c_k
    var_k = var_acc / (c_k * c_k)
    old = measurements[target]
    if squared_k:
        if s_k <= 0:
            return None
        value = math.sqrt(s_k)
        sigma = math.sqrt(max(var_k, SIGMA2_FLOOR)) / (2.0 * value)
    else:
        value = s_k
        sigma = math.sqrt(max(var_k, SIGMA2_FLOOR))
    return replace(old, value=value, sigma=sigma)


def identify_and_reestimate(
    model: NetworkModel,
    mats: MeasurementMatrixSet,
    measurements: Sequence[Measurement],
    suspects: Sequence[SuspectSet],
    anchors: Sequence[int],
    config: Optional[SolverConfig] = None,
    max_combinations: int = 256,
) -> Tuple[List[int], EstimationResult, int]:
    """Try every one-culprit-per-suspect-set combination; keep the one whose
    re-estimate best fits the untouched measurements.

    Returns (culprit indices, winning estimate, combinations evaluated).
    """
    if not suspects:
        raise ValidationError("identification needs at least one suspect set")
    total = 1
    for s in suspects:
        total *= len(s.members)
    if total > max_combinations:
        raise BudgetExceededError(
            f"{total} replacement combinations exceed the budget of "
            f"{max_combinations}; raise the detection threshold or the budget"
        )

    meas_list = list(measurements)
    best: Optional[Tuple[float, List[int], EstimationResult]] = None
    evaluated = 0
    for combo in itertools.product(*(s.members for s in suspects)):
        chosen = sorted(set(combo))
        trial = list(meas_list)
        feasible = True
        for s, target in zip(suspects, combo):
            rep = _replace_from_identity(meas_list, s.trigger, target)
            if rep is None:
                feasible = False
                break
            trial[target] = rep
        if not feasible:
            continue
        evaluated += 1
        try:
            result = estimate(
                model, trial, anchors, config, repair_method="negate", mats=mats
            )
        except SolverError:
            continue
        err = _fit_error(mats, meas_list, result, exclude=set(chosen))
        if best is None or err < best[0]:
            best = (err, chosen, result)
    if best is None:
        raise SolverError("every replacement combination failed to solve")
    return best[1], best[2], evaluated


def _fit_error(
    mats: MeasurementMatrixSet,
    measurements: List[Measurement],
    result: EstimationResult,
    exclude: set,
) -> float:
    from .measurements import matrix_for, state_to_X

    X = state_to_X(result.V)
    err = 0.0
    for i, m in enumerate(measurements):
        if i in exclude:
            continue
        A = matrix_for(mats, m.kind, m.node, m.far_node)
        pred = A.quad(X)
        if m.kind == "Vmag":
            z = m.value**2
            sig = max(2.0 * abs(m.value) * m.sigma, 1e-12)
        else:
            z = m.value
            sig = m.sigma
        err += ((z - pred) / sig) ** 2
    return err


def run_bad_data(
    model: NetworkModel,
    mats: MeasurementMatrixSet,
    measurements: Sequence[Measurement],
    anchors: Sequence[int],
    config: Optional[SolverConfig] = None,
    threshold: float = 3.0,
    max_combinations: int = 256,
) -> Tuple[dict, EstimationResult]:
    """Full pipeline: prefilter, detect, identify (if needed), estimate."""
    kept, removed = prefilter_obvious(measurements)
    residuals = compute_redundancy_residuals(model, mats, kept)
    suspects = [
        SuspectSet(trigger=r, members=list(r.members))
        for r in residuals
        if abs(r.normalized) > threshold
    ]
    if suspects:
        culprits, result, evaluated = identify_and_reestimate(
            model, mats, kept, suspects, anchors, config, max_combinations
        )
    else:
        culprits, evaluated = [], 0
        result = estimate(model, kept, anchors, config, repair_method="negate", mats=mats)
    report = {
        "removed_obvious": removed,
        "residuals": [r.to_dict(model) for r in residuals],
        "suspects": [
            {"trigger": s.trigger.to_dict(model), "members": s.members}
            for s in suspects
        ],
        "culprits": [
            {
                "index": i,
                "kind": kept[i].kind,
                "location": _loc_name(
                    model,
                    (kept[i].node,)
                    if kept[i].far_node is None
                    else (kept[i].node, kept[i].far_node),
                ),
            }
            for i in culprits
        ],
        "combinations_evaluated": evaluated,
    }
    return report, result
