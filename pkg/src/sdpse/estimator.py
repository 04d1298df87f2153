"""Estimator facade with a scikit-learn-flavored surface.

``fit`` consumes a network plus measurements and stores the solved state;
``predict`` returns the complex node voltages.  Hyperparameters live in the
constructor and round-trip through ``get_params`` / ``set_params``, so the
object composes with tooling that expects that protocol.  No scikit-learn
import is required.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .measurements import Measurement
from .network import NetworkModel
from .partition import PartitionPlan
from .pipeline import estimate, estimate_with_plan
from .solver import SolverConfig


class SdpStateEstimator:
    """State estimator over the semidefinite relaxation.

    Parameters
    ----------
    anchors : list of (bus, phase) pairs fixing the angle reference(s).
        Required for monolithic fits; ignored when a partition plan carries
        its own anchors.
    repair_method : 'negate' | 'efficiency' | 'analytic' | None
        How to fill in missing far-end branch flows.  None disables repair
        and makes one-sided measurement sets a hard error.
    plan : PartitionPlan, optional
        When given, fit solves each sub-network independently and merges.
    solver_config : SolverConfig, optional
    """

    def __init__(
        self,
        anchors: Optional[Sequence] = None,
        repair_method: Optional[str] = "negate",
        plan: Optional[PartitionPlan] = None,
        solver_config: Optional[SolverConfig] = None,
    ):
        self.anchors = anchors
        self.repair_method = repair_method
        self.plan = plan
        self.solver_config = solver_config

    def get_params(self, deep: bool = True) -> dict:
        return {
            "anchors": self.anchors,
            "repair_method": self.repair_method,
            "plan": self.plan,
            "solver_config": self.solver_config,
        }

    def set_params(self, **params) -> "SdpStateEstimator":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValidationError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(
        self, model: NetworkModel, measurements: Sequence[Measurement]
    ) -> "SdpStateEstimator":
        if self.plan is not None:
            result = estimate_with_plan(
                model,
                measurements,
                self.plan,
                self.solver_config,
                self.repair_method,
            )
        else:
            if not self.anchors:
                raise ValidationError("monolithic estimation requires anchors")
            anchor_nodes = [model.node_of(bus, phase) for bus, phase in self.anchors]
            result = estimate(
                model,
                measurements,
                anchor_nodes,
                self.solver_config,
                self.repair_method,
            )
        self.result_ = result
        self.V_ = result.V
        self.rank1_ratio_ = result.rank1_ratio
        self.objective_ = result.objective
        self.n_nodes_ = model.n_nodes
        return self

    def predict(self) -> np.ndarray:
        if not hasattr(self, "V_"):
            raise ValidationError("estimator is not fitted")
        return self.V_
