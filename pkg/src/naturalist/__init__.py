"""Comparative captioning of image pairs at desk scale.

Pipeline: taxonomy-aware pivot-branch pair sampling, a clarity gate and
class-level splits, a small Transformer that describes how two images differ,
automatic metrics and a rater-consensus judge.
"""
from .corpus import Vocabulary, preprocess
from .estimator import NeuralNaturalist
from .metrics import EvalInstance, evaluate, human_baseline
from .sampler import ImagePair, annotation_cost, apply_clarity_gate, sample_pairs, split_dataset
from .taxonomy import Taxonomy
from .visual_index import QuantizedIndex, build_index

__all__ = [
    "EvalInstance", "ImagePair", "NeuralNaturalist", "QuantizedIndex", "Taxonomy", "Vocabulary",
    "annotation_cost", "apply_clarity_gate", "build_index", "evaluate", "human_baseline",
    "preprocess", "sample_pairs", "split_dataset",
]
__version__ = "0.1.0"
