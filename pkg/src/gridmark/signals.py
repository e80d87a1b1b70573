"""Light container for sampled signals.

Every trace in the package is a 1-D float64 array plus the global step index
of its first sample. Functions accept either a SignalTrace or a bare ndarray;
``as_array`` normalizes at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SignalTrace:
    """A uniformly sampled scalar signal.

    values: the samples, finite float64.
    start_index: global step index of values[0].
    dt: sample spacing in seconds (the default desk model runs at 1.0).
    """

    values: np.ndarray
    start_index: int = 0
    dt: float = 1.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"trace values must be 1-D, got shape {arr.shape}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("trace contains non-finite samples")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)

    def rms(self) -> float:
        if not len(self):
            return 0.0
        return float(np.sqrt(np.mean(np.square(self.values))))

    def window(self, start: int, stop: int) -> "SignalTrace":
        """Slice by global step index (start inclusive, stop exclusive)."""
        lo = start - self.start_index
        hi = stop - self.start_index
        if lo < 0 or hi > len(self) or lo > hi:
            raise ValueError(
                f"window [{start}, {stop}) outside trace "
                f"[{self.start_index}, {self.start_index + len(self)})"
            )
        return SignalTrace(self.values[lo:hi], start_index=start, dt=self.dt)


def as_array(trace) -> np.ndarray:
    """Return the sample array of a SignalTrace, or validate a bare array."""
    if isinstance(trace, SignalTrace):
        return trace.values
    arr = np.asarray(trace, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {arr.shape}")
    return arr
