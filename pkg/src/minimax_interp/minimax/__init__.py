from .classes import BinLayout, DensityClass, project_membership, random_member, singleton
from .kkt import PAIRS, KKTResiduals, kkt_residuals
from .lmo import central_member, maximize_class, maximize_linear
from .saddle import SaddlePoint, pair_point, saddle_iterate, verify_saddle

__all__ = [
    "BinLayout", "DensityClass", "KKTResiduals", "PAIRS", "SaddlePoint",
    "central_member", "kkt_residuals", "maximize_class", "maximize_linear", "pair_point",
    "project_membership", "random_member", "saddle_iterate", "singleton", "verify_saddle",
]
