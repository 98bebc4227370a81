"""ResNet-18 patch scorer for the WSI dysplasia-grading pipeline."""

__version__ = "0.1.0"
