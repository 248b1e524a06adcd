"""Light-weight non-uniform illumination image enhancement.

Dual-Retinex enhancement with a tiny three-subnet CNN (illumination
estimation, exposure fusion, restoration), plus the classical retouching
pipeline used to synthesize paired training data, full training support,
quality metrics, a CLI and an HTTP service.
"""

__version__ = "0.1.0"
