"""Classical retouching: dual exposure-correction branches, fusion, detail gain.

Under-exposed regions are lifted by dividing the image by a smoothed
brightness map raised to a gamma; over-exposed regions are recovered by
applying the same correction to the inverted image. The corrected sequence
is exposure-fused and a final unsharp-style detail term is added.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import imgcore
from .errors import ConfigurationError, InvalidInputError
from .filters import FusionParams, SmoothParams, l0_smooth, mertens_fuse

DEFAULT_EPSILON = 1e-4


@dataclass
class RetouchCoefficients:
    """Per-cluster enhancement recipe.

    theta1/gamma1 parameterize the under-exposure sequence (one entry per
    member), theta2/gamma2 the over-exposure sequence, theta3 the fusion
    weights, theta4/alpha the detail amplification step.
    """

    theta1: list[float] = field(default_factory=lambda: [0.01, 0.01])
    gamma1: list[float] = field(default_factory=lambda: [0.4, 0.8])
    theta2: list[float] = field(default_factory=lambda: [0.01, 0.01])
    gamma2: list[float] = field(default_factory=lambda: [0.4, 0.8])
    theta3: FusionParams = field(default_factory=FusionParams)
    theta4: float = 0.01
    alpha: float = 0.5
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if len(self.theta1) != len(self.gamma1) or not self.theta1:
            raise InvalidInputError("theta1/gamma1 must be equal-length, nonempty")
        if len(self.theta2) != len(self.gamma2) or not self.theta2:
            raise InvalidInputError("theta2/gamma2 must be equal-length, nonempty")
        for g in list(self.gamma1) + list(self.gamma2):
            if not 0.0 <= g <= 1.0:
                raise InvalidInputError(f"gamma out of range [0, 1]: {g}")
        for t in list(self.theta1) + list(self.theta2) + [self.theta4]:
            if t < 0:
                raise InvalidInputError(f"smoothing strength must be >= 0: {t}")
        if self.alpha < 0:
            raise InvalidInputError(f"alpha must be >= 0, got {self.alpha}")
        if self.epsilon <= 0:
            raise InvalidInputError(f"epsilon must be > 0, got {self.epsilon}")

    def to_dict(self) -> dict:
        return {
            "theta1": [float(v) for v in self.theta1],
            "gamma1": [float(v) for v in self.gamma1],
            "theta2": [float(v) for v in self.theta2],
            "gamma2": [float(v) for v in self.gamma2],
            "theta3": {
                "w_contrast": self.theta3.w_contrast,
                "w_saturation": self.theta3.w_saturation,
                "w_exposedness": self.theta3.w_exposedness,
                "sigma_e": self.theta3.sigma_e,
                "levels": self.theta3.levels,
            },
            "theta4": float(self.theta4),
            "alpha": float(self.alpha),
            "epsilon": float(self.epsilon),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetouchCoefficients":
        if not isinstance(d, dict):
            raise ConfigurationError("coefficients must be a JSON object")
        kwargs = dict(d)
        t3 = kwargs.pop("theta3", None)
        try:
            theta3 = FusionParams(**t3) if t3 is not None else FusionParams()
            return cls(theta3=theta3, **kwargs)
        except TypeError as exc:
            raise ConfigurationError(f"bad coefficients schema: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RetouchCoefficients":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"coefficients are not valid JSON: {exc}") from None


def under_branch(img: np.ndarray, theta: float, gamma: float,
                 epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Brighten dark regions: img / (smoothed_brightness^gamma + epsilon)."""
    lmap = l0_smooth(imgcore.bright_channel(img), SmoothParams(lam=theta))
    return np.clip(img / (lmap ** gamma + epsilon), 0.0, 1.0).astype(np.float32)


def over_branch(img: np.ndarray, theta: float, gamma: float,
                epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Recover bright regions by enhancing the inverted image."""
    return (1.0 - under_branch(1.0 - img, theta, gamma, epsilon)).astype(np.float32)


def exposure_sequence(img: np.ndarray, c: RetouchCoefficients) -> list[np.ndarray]:
    """[img] + under-corrected members + over-corrected members."""
    imgcore.ensure_image(img)
    seq = [img]
    for t, g in zip(c.theta1, c.gamma1):
        seq.append(under_branch(img, t, g, c.epsilon))
    for t, g in zip(c.theta2, c.gamma2):
        seq.append(over_branch(img, t, g, c.epsilon))
    return seq

def retouch(img: np.ndarray, c: RetouchCoefficients) -> np.ndarray:
    fused = mertens_fuse(exposure_sequence(img, c), c.theta3)
    if c.alpha == 0:
        return fused
    base = l0_smooth(fused, SmoothParams(lam=c.theta4))
    return np.clip(fused + c.alpha * (fused - base), 0.0, 1.0).astype(np.float32)
