"""The hidden-state rows handed from the encoder to the generator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IMAGE = "image"
REASONING = "reasoning"
PAD = "pad"


@dataclass
class ConditioningBundle:
    """K conditioning rows plus where each one came from.

    ``sources`` labels every row image | reasoning | pad; ``positions`` holds
    the row's index in the encoder sequence (-1 for pad rows).
    """

    rows: np.ndarray
    mode: str
    layer: int
    sources: list[str]
    positions: list[int]
    n_image_original: int
    n_reasoning_original: int
    history: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ValueError(f"bundle rows must be 2-D, got shape {self.rows.shape}")
        if not (len(self.sources) == len(self.positions) == self.rows.shape[0]):
            raise ValueError("rows, sources and positions must have equal length")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def pad_mask(self) -> np.ndarray:
        return np.array([s == PAD for s in self.sources], dtype=bool)

    def count(self, label: str) -> int:
        return sum(1 for s in self.sources if s == label)

    def metadata(self) -> dict:
        return {
            "mode": self.mode,
            "layer": self.layer,
            "length": len(self),
            "n_image": self.count(IMAGE),
            "n_reasoning": self.count(REASONING),
            "n_pad": self.count(PAD),
            "n_image_original": self.n_image_original,
            "n_reasoning_original": self.n_reasoning_original,
            "sources": list(self.sources),
            "positions": list(self.positions),
            "history": list(self.history),
        }
