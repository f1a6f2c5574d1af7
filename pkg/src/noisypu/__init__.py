"""Class prior estimation from noisy positive and unlabeled data."""

from .alphamax import AlphaMax, AlphaMaxN, alphamax, alphamax_n
from .base import PriorEstimate, PUDataset, Truth
from .datagen import (LabelingConfig, SyntheticSpec, ZScorePCA, gen_synthetic,
                      pu_split, simulate_labeling)
from .exceptions import (ConvergenceWarning, DegenerateComponentError,
                         DegenerateCurveWarning, DegenerateOutputError,
                         EstimationFailedError, InvalidInputError)
from .measures import DiscreteMeasure, PriorPair, amax, canonical, correction
from .msgmm import MSGMM
from .transform import (NonTraditionalClassifier, PosteriorParams,
                        TransformedPU, posterior)

__version__ = "0.1.0"

__all__ = [
    "AlphaMax", "AlphaMaxN", "ConvergenceWarning", "DegenerateComponentError",
    "DegenerateCurveWarning", "DegenerateOutputError", "DiscreteMeasure",
    "EstimationFailedError", "InvalidInputError", "LabelingConfig", "MSGMM",
    "NonTraditionalClassifier", "PUDataset", "PosteriorParams", "PriorEstimate",
    "PriorPair", "SyntheticSpec", "TransformedPU", "Truth", "ZScorePCA",
    "alphamax", "alphamax_n", "amax", "canonical", "correction",
    "gen_synthetic", "posterior", "pu_split", "simulate_labeling",
]
