"""Multi-view mesh refinement.

Camera-pair selection by geometric pair energies and coverage-balancing
swaps, occlusion-aware ZNCC patch masks from rendered depth, and photometric
gradient-flow refinement of a triangle mesh, plus synthetic scenes and
metrics to check it all end to end.
"""

from .errors import MVSRefineError
from .geometry import CameraView, TriMesh
from .pairs import PairSet, SelectionConfig, select_pairs
from .refine import RefineConfig, photo_energy, photometric_gradient, refine

__all__ = [
    "CameraView", "MVSRefineError", "PairSet", "RefineConfig", "SelectionConfig", "TriMesh",
    "photo_energy", "photometric_gradient", "refine", "select_pairs",
]
__version__ = "0.1.0"
