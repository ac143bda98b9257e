"""Multi-cue local features: coupled normal/saliency head, depth stability targets,
triple-cue descriptor fusion, keypoint reweighting and a homography matching evaluator."""

__version__ = "0.1.0"
