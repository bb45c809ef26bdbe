"""Batch augmentation toolkit for vision-language navigation data.

Rewrites human-annotated trajectory-instruction pairs into new
observation-instruction pairs through pluggable foundation-model
providers, and emits two-stage (mix, then focus) training manifests.
"""

__version__ = "0.1.0"
