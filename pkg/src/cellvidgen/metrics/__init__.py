"""Evaluation suite: SEG, AOGM-based TRA, and Fréchet distance."""

from .embed import (EmbeddingSet, Embedder, available_embedders,
                    block_mean_downsample, embed, get_embedder, register_embedder)
from .frechet import frechet_distance, frechet_from_moments, gaussian_moments
from .seg import FrameMatches, match_frame, seg_score
from .tra import (PARENT_EDGE, TRACK_EDGE, AogmWeights, TrackingGraph, aogm,
                  aogm_empty, tra_score)

__all__ = [
    "AogmWeights", "Embedder", "EmbeddingSet", "FrameMatches", "PARENT_EDGE",
    "TRACK_EDGE", "TrackingGraph", "aogm", "aogm_empty", "available_embedders",
    "block_mean_downsample", "embed", "frechet_distance", "frechet_from_moments",
    "gaussian_moments", "get_embedder", "match_frame", "register_embedder",
    "seg_score", "tra_score",
]
