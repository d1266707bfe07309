"""Simulation and verification of incentive-compatible exploration in combinatorial semi-bandits."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Arm,
    ArmFamily,
    BetaPrior,
    DiscretePrior,
    ExplicitFamily,
    History,
    Instance,
    MSubsetFamily,
    ProductPrior,
    RngStream,
    TwoArmJointPrior,
    build_family,
    canonicalize,
    pull,
    sample_instance,
    singletons,
)
from .posterior import PosteriorState, best_arm, nu, posterior_mean_arm  # noqa: E402

__all__ = [
    "Arm",
    "ArmFamily",
    "BetaPrior",
    "DiscretePrior",
    "ExplicitFamily",
    "History",
    "Instance",
    "MSubsetFamily",
    "PosteriorState",
    "ProductPrior",
    "RngStream",
    "TwoArmJointPrior",
    "best_arm",
    "build_family",
    "canonicalize",
    "nu",
    "posterior_mean_arm",
    "pull",
    "sample_instance",
    "singletons",
]
