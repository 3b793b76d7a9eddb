"""Audio-visual deepfake detection with modality-invariant and -specific subspaces."""

__version__ = "0.1.0"
