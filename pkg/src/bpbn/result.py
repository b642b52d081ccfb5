"""Shared inference result container (kept kernel-free so both the
production executor and the float reference interpreter can use it)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class InferenceResult:
    logits: np.ndarray
    trace: list[dict] | None = None
    mac_counts: list[dict] | None = None

    def argmax(self) -> int:
        return int(np.argmax(self.logits))
