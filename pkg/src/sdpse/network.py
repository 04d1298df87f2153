"""Network model: buses, phase-resolved nodes, branches, and the reduced
admittance matrix.

A *bus* is a physical connection point carrying one to three phases.  Each
(bus, phase) pair is a *node*; nodes are the rows/columns of the admittance
matrix.  Branches connect individual nodes, so a mutually-coupled three-phase
line appears as several node-to-node branches (one per nonzero impedance
entry), which keeps single-phase and multiphase handling identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import ValidationError

PHASES = ("A", "B", "C")


@dataclass(frozen=True)
class Bus:
    id: str
    phases: Tuple[str, ...]
    is_feeder_head: bool = False
    base_kV: float = 1.0


@dataclass(frozen=True)
class Node:
    index: int
    bus: str
    phase: str


@dataclass(frozen=True)
class Branch:
    """One node-to-node branch.

    ``shunt_admittance_at_from`` is the per-end shunt admittance; the same
    value sits at the receiving end (symmetric pi model), so a network file's
    total charging susceptance is split half-half between the two ends.
    """

    id: str
    from_node: int
    to_node: int
    series_admittance: complex
    shunt_admittance_at_from: complex = 0j
    is_switch: bool = False
    switch_closed: bool = True

    @property
    def in_service(self) -> bool:
        return self.switch_closed or not self.is_switch

    @property
    def impedance(self) -> complex:
        return 1.0 / self.series_admittance


class NetworkModel:
    """Validated, immutable network with its assembled admittance matrix."""

    def __init__(self, buses: List[Bus], nodes: List[Node], branches: List[Branch]):
        self.buses = list(buses)
        self.nodes = list(nodes)
        self.branches = list(branches)
        self.node_index: Dict[Tuple[str, str], int] = {
            (n.bus, n.phase): n.index for n in nodes
        }
        self.bus_by_id: Dict[str, Bus] = {b.id: b for b in buses}
        self.ybus = assemble_ybus(buses, nodes, branches)
        heads = [b.id for b in buses if b.is_feeder_head]
        self.feeder_head: str = heads[0] if heads else buses[0].id

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def closed_branches(self) -> List[Branch]:
        return [br for br in self.branches if br.in_service]

    @property
    def n_closed_branches(self) -> int:
        return len(self.closed_branches)

    def node_of(self, bus: str, phase: str) -> int:
        try:
            return self.node_index[(bus, phase)]
        except KeyError:
            raise ValidationError(f"no node for bus {bus!r} phase {phase!r}")

    def nodes_of_bus(self, bus: str) -> List[int]:
        return [n.index for n in self.nodes if n.bus == bus]


def assemble_ybus(
    buses: Sequence[Bus], nodes: Sequence[Node], branches: Sequence[Branch]
) -> np.ndarray:
    """Build the N'xN' complex admittance matrix from in-service branches.

    Diagonal entries accumulate series plus per-end shunt admittance of every
    incident branch; off-diagonals are minus the (summed) series admittance of
    the branches joining the two nodes.
    """
    n = len(nodes)
    y = np.zeros((n, n), dtype=complex)
    for br in branches:
        if not br.in_service:
            continue
        l, m = br.from_node, br.to_node
        ys = br.series_admittance
        ysh = br.shunt_admittance_at_from
        y[l, l] += ys + ysh
        y[m, m] += ys + ysh
        y[l, m] -= ys
        y[m, l] -= ys
    return y


def adjacency(model: NetworkModel) -> Dict[str, Set[str]]:
    """Bus-level adjacency from nonzero off-diagonal ybus entries."""
    adj: Dict[str, Set[str]] = {b.id: set() for b in model.buses}
    rows, cols = np.nonzero(model.ybus)
    for r, c in zip(rows, cols):
        if r == c:
            continue
        bi = model.nodes[r].bus
        bj = model.nodes[c].bus
        if bi != bj:
            adj[bi].add(bj)
            adj[bj].add(bi)
    return adj


_BUS_KEYS = {"id", "phases", "feeder_head", "base_kV"}
_BRANCH_KEYS = {"id", "from", "to", "r", "x", "shunt_b", "is_switch", "closed"}
_ENDPOINT_KEYS = {"bus", "phase"}
_TOP_KEYS = {"buses", "branches", "base_mva"}


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    extra = set(obj) - allowed
    if extra:
        raise ValidationError(f"unknown keys {sorted(extra)} in {where}")


def parse_network(document: dict) -> NetworkModel:
    """Validate a network document and construct the model.

    Branch impedances are given in ohms (shunts in siemens) and converted to
    per-unit on the declared bases; with the default bases of 1.0 the values
    pass through unchanged.
    """
    if not isinstance(document, dict):
        raise ValidationError("network document must be a JSON object")
    _reject_unknown(document, _TOP_KEYS, "network document")
    if "buses" not in document or "branches" not in document:
        raise ValidationError("network document needs 'buses' and 'branches'")
    base_mva = float(document.get("base_mva", 1.0))
    if base_mva <= 0:
        raise ValidationError("base_mva must be positive")

    buses: List[Bus] = []
    seen_buses: Set[str] = set()
    for raw in document["buses"]:
        _reject_unknown(raw, _BUS_KEYS, f"bus {raw.get('id')!r}")
        if "id" not in raw or "phases" not in raw:
            raise ValidationError("every bus needs 'id' and 'phases'")
        bid = str(raw["id"])
        if bid in seen_buses:
            raise ValidationError(f"duplicate bus id {bid!r}")
        seen_buses.add(bid)
        phases = tuple(sorted(set(raw["phases"])))
        if not phases or any(p not in PHASES for p in phases):
            raise ValidationError(f"bus {bid!r}: phases must be a non-empty subset of A/B/C")
        buses.append(
            Bus(
                id=bid,
                phases=phases,
                is_feeder_head=bool(raw.get("feeder_head", False)),
                base_kV=float(raw.get("base_kV", 1.0)),
            )
        )

    heads = [b for b in buses if b.is_feeder_head]
    if len(heads) != 1:
        raise ValidationError(f"exactly one feeder_head bus required, found {len(heads)}")

    nodes: List[Node] = []
    for b in buses:
        for p in b.phases:
            nodes.append(Node(index=len(nodes), bus=b.id, phase=p))
    node_index = {(n.bus, n.phase): n.index for n in nodes}
    bus_by_id = {b.id: b for b in buses}

    def resolve(endpoint: dict, where: str) -> int:
        _reject_unknown(endpoint, _ENDPOINT_KEYS, where)
        bus = str(endpoint.get("bus"))
        phase = endpoint.get("phase", "A")
        if bus not in bus_by_id:
            raise ValidationError(f"{where}: unknown bus {bus!r}")
        if (bus, phase) not in node_index:
            raise ValidationError(f"{where}: bus {bus!r} has no phase {phase!r}")
        return node_index[(bus, phase)]

    branches: List[Branch] = []
    seen_branches: Set[str] = set()
    for raw in document["branches"]:
        brid = str(raw.get("id"))
        _reject_unknown(raw, _BRANCH_KEYS, f"branch {brid!r}")
        for key in ("id", "from", "to", "r", "x"):
            if key not in raw:
                raise ValidationError(f"branch {brid!r}: missing key {key!r}")
        if brid in seen_branches:
            raise ValidationError(f"duplicate branch id {brid!r}")
        seen_branches.add(brid)
        l = resolve(raw["from"], f"branch {brid!r} from")
        m = resolve(raw["to"], f"branch {brid!r} to")
        if l == m:
            raise ValidationError(f"branch {brid!r}: from and to are the same node")
        base_kv = bus_by_id[nodes[l].bus].base_kV
        z_base = base_kv * base_kv / base_mva
        r = float(raw["r"]) / z_base
        x = float(raw["x"]) / z_base
        b_total = float(raw.get("shunt_b", 0.0)) * z_base
        is_switch = bool(raw.get("is_switch", False))
        closed = bool(raw.get("closed", True))
        z = complex(r, x)
        if z == 0:
            if closed:
                raise ValidationError(f"branch {brid!r}: closed branch with zero impedance")
            ys = 0j
        else:
            ys = 1.0 / z
        branches.append(
            Branch(
                id=brid,
                from_node=l,
                to_node=m,
                series_admittance=ys,
                shunt_admittance_at_from=complex(0.0, b_total / 2.0),
                is_switch=is_switch,
                switch_closed=closed,
            )
        )

    _check_connected(buses, nodes, branches, heads[0].id)
    return NetworkModel(buses, nodes, branches)


def _check_connected(
    buses: Sequence[Bus],
    nodes: Sequence[Node],
    branches: Sequence[Branch],
    head: str,
) -> None:
    n = len(nodes)
    neighbors: List[List[int]] = [[] for _ in range(n)]
    for br in branches:
        if not br.in_service:
            continue
        neighbors[br.from_node].append(br.to_node)
        neighbors[br.to_node].append(br.from_node)
    seen = [False] * n
    stack = [nd.index for nd in nodes if nd.bus == head]
    for s in stack:
        seen[s] = True
    while stack:
        i = stack.pop()
        for j in neighbors[i]:
            if not seen[j]:
                seen[j] = True
                stack.append(j)
    missing = [(nodes[i].bus, nodes[i].phase) for i in range(n) if not seen[i]]
    if missing:
        raise ValidationError(
            f"disconnected graph: {len(missing)} node(s) unreachable from the "
            f"feeder head, e.g. {missing[:5]}"
        )


def load_network(path: str) -> NetworkModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"network file {path}: invalid JSON ({exc})")
    return parse_network(doc)


def restrict(
    model: NetworkModel, bus_ids: Sequence[str], head: Optional[str] = None
) -> Tuple[NetworkModel, Dict[int, int]]:
    """Sub-network induced by a bus subset.

    Returns the restricted model plus the old-node -> new-node index map.
    Branches with one endpoint outside the subset are dropped (they become
    tie-lines at a higher level).  ``head`` names the bus to treat as the
    sub-network's root; defaults to the original feeder head if included,
    else the first bus of the subset.
    """
    keep = set(bus_ids)
    unknown = keep - set(model.bus_by_id)
    if unknown:
        raise ValidationError(f"restrict: unknown buses {sorted(unknown)}")
    if head is None:
        head = model.feeder_head if model.feeder_head in keep else next(
            b.id for b in model.buses if b.id in keep
        )
    buses = [
        Bus(b.id, b.phases, is_feeder_head=(b.id == head), base_kV=b.base_kV)
        for b in model.buses
        if b.id in keep
    ]
    nodes: List[Node] = []
    node_map: Dict[int, int] = {}
    for old in model.nodes:
        if old.bus in keep:
            node_map[old.index] = len(nodes)
            nodes.append(Node(index=len(nodes), bus=old.bus, phase=old.phase))
    branches = [
        Branch(
            id=br.id,
            from_node=node_map[br.from_node],
            to_node=node_map[br.to_node],
            series_admittance=br.series_admittance,
            shunt_admittance_at_from=br.shunt_admittance_at_from,
            is_switch=br.is_switch,
            switch_closed=br.switch_closed,
        )
        for br in model.branches
        if br.from_node in node_map and br.to_node in node_map
    ]
    return NetworkModel(buses, nodes, branches), node_map
