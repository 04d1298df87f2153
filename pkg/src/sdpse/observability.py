"""Structural observability analysis of a measurement set.

The lifted formulation has 3 distinct unknowns per node and 4 per branch,
while even the largest measurement set supplies only n + 2m independent
equations, so the margin is thin and one-sided branch flows are enough to
break it.  The analysis here is combinatorial (coefficient supports and
redundancy identities), not a numerical rank computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .measurements import Measurement
from .network import NetworkModel
from .sdpmat import MeasurementMatrixSet, count_variables


@dataclass
class ObservabilityReport:
    distinct_vars: int
    independent_ceiling: int
    measured_distinct: int
    redundancy_deductions: int
    independent_eqs_available: int
    redundancy_points: List[dict] = field(default_factory=list)
    unobservable_branches: List[dict] = field(default_factory=list)
    uncovered_nodes: List[dict] = field(default_factory=list)
    verdict: str = "observable"  # observable | repairable | unobservable

    def to_dict(self) -> dict:
        return {
            "distinct_vars": self.distinct_vars,
            "independent_ceiling": self.independent_ceiling,
            "measured_distinct": self.measured_distinct,
            "redundancy_deductions": self.redundancy_deductions,
            "independent_eqs_available": self.independent_eqs_available,
            "redundancy_points": self.redundancy_points,
            "unobservable_branches": self.unobservable_branches,
            "uncovered_nodes": self.uncovered_nodes,
            "verdict": self.verdict,
        }


def _name(model: NetworkModel, idx: int) -> dict:
    nd = model.nodes[idx]
    return {"bus": nd.bus, "phase": nd.phase}


def analyze(
    model: NetworkModel,
    mats: MeasurementMatrixSet,
    measurements: Sequence[Measurement],
) -> ObservabilityReport:
    counts = count_variables(model.n_nodes, model.n_closed_branches)
    measured: Set[Tuple[str, int, Optional[int]]] = set()
    for m in measurements:
        measured.add((m.kind, m.node, m.far_node))

    # Node identities: injection plus every incident flow of the same kind.
    redundancy_points: List[dict] = []
    deductions = 0
    for k in range(mats.n_nodes):
        nbrs = mats.neighbors(k)
        for kind_inj, kind_flow in (("P_inj", "P_flow"), ("Q_inj", "Q_flow")):
            if (kind_inj, k, None) in measured and all(
                (kind_flow, k, m) in measured for m in nbrs
            ):
                deductions += 1
                redundancy_points.append(
                    {"type": "node", "quantity": kind_inj[0], "node": _name(model, k)}
                )

    # Branch identities: both-end P and Q flows (loss identity), plus both-end
    # magnitudes (voltage-drop identity); zero-shunt pairs only.
    one_sided: List[dict] = []
    for (l, m), pd in sorted(mats.pairs.items()):
        if l > m:
            continue
        here = any((kd, l, m) in measured for kd in ("P_flow", "Q_flow"))
        there = any((kd, m, l) in measured for kd in ("P_flow", "Q_flow"))
        if here != there:
            src, dst = (l, m) if here else (m, l)
            one_sided.append({"from": _name(model, src), "to": _name(model, dst)})
        shunt_free = (
            pd.shunt_at_from == 0 and mats.pairs[(m, l)].shunt_at_from == 0
        )
        full_flows = all(
            (kd, a, b) in measured
            for kd in ("P_flow", "Q_flow")
            for (a, b) in ((l, m), (m, l))
        )
        if shunt_free and full_flows:
            deductions += 1
            redundancy_points.append(
                {"type": "branch", "identity": "loss",
                 "from": _name(model, l), "to": _name(model, m)}
            )
            if ("Vmag", l, None) in measured and ("Vmag", m, None) in measured:
                deductions += 1
                redundancy_points.append(
                    {"type": "branch", "identity": "voltage_drop",
                     "from": _name(model, l), "to": _name(model, m)}
                )

    # Coverage: a node that no measurement's coefficient support touches can
    # take any value without changing a single residual.
    covered: Set[int] = set()
    for m in measurements:
        if m.kind in ("P_inj", "Q_inj"):
            covered.add(m.node)
            covered.update(mats.neighbors(m.node))
        elif m.kind in ("P_flow", "Q_flow"):
            covered.add(m.node)
            covered.add(m.far_node)
        else:
            covered.add(m.node)
    uncovered = [
        _name(model, k) for k in range(mats.n_nodes) if k not in covered
    ]

    if uncovered:
        verdict = "unobservable"
    elif one_sided:
        verdict = "repairable"
    else:
        verdict = "observable"

    available = min(len(measured) - deductions, counts["independent"])
    return ObservabilityReport(
        distinct_vars=counts["distinct"],
        independent_ceiling=counts["independent"],
        measured_distinct=len(measured),
        redundancy_deductions=deductions,
        independent_eqs_available=available,
        redundancy_points=redundancy_points,
        unobservable_branches=one_sided,
        uncovered_nodes=uncovered,
        verdict=verdict,
    )
