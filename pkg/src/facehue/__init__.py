"""facehue: component-aware facial image colorization.

Colors are controlled per facial component (lips, skin, eyes, hair,
background) through a decoupled latent representation; colorization runs
reference-guided, automatically, or from seeded samples of per-component
color distributions.
"""

__version__ = "0.1.0"

from .colorspace import LabImage, assemble, lab_to_rgb, rgb_to_lab
from .parsing import COMPONENTS, ComponentMasks, LabelMapping, downscale_masks, map_labels
from .augment import AugmentationBundle, ChromaticTransform, SpatialWarp, make_bundle
from .representation import ColorRepresentation, encode, recombine
from .colorizer import generate
from .config import TrainConfig
from .checkpoint import Checkpoint, load_bundle

__all__ = [
    "LabImage",
    "assemble",
    "lab_to_rgb",
    "rgb_to_lab",
    "COMPONENTS",
    "ComponentMasks",
    "LabelMapping",
    "downscale_masks",
    "map_labels",
    "AugmentationBundle",
    "ChromaticTransform",
    "SpatialWarp",
    "make_bundle",
    "ColorRepresentation",
    "encode",
    "recombine",
    "generate",
    "TrainConfig",
    "Checkpoint",
    "load_bundle",
    "__version__",
]
