"""Truncated Gram-Schmidt distribution.

Stacked-walk samples are conditioned on ``||Mx||_2`` falling in an annulus
``[r, r + width]``. The annulus is the fullest bin of an empirical histogram
of ``||Mx||_2`` over ``[0, cap * sqrt(d)]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from smoothkomlos.gswalk import sample_stacked
from smoothkomlos.instances import KomlosMatrix
from smoothkomlos.rng import derive_seed

DEFAULT_CAP = 3.0
DEFAULT_BINS = 64
# desk-scale annulus width, in units of sqrt(d)
DEFAULT_WIDTH_FRACTION = 0.05


class TruncationFailure(RuntimeError):
    """Rejection sampling ran out of attempts; the window is too thin for this budget."""

    def __init__(self, attempts: int, window: "TruncationWindow"):
        super().__init__(
            f"no sample landed in [{window.r:.6g}, {window.r + window.width:.6g}] "
            f"after {attempts} attempts (estimated mass {window.mass:.3g})"
        )
        self.attempts = attempts
        self.window = window


@dataclass(frozen=True)
class NormHistogram:
    edges: np.ndarray
    counts: np.ndarray
    overflow: int
    samples: int

    @property
    def bins(self) -> int:
        return self.counts.size

    @property
    def in_range(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class TruncationWindow:
    r: float
    width: float
    mass: float
    histogram_samples: int

    def __post_init__(self):
        if not (self.r >= 0.0 and self.width > 0.0 and 0.0 < self.mass <= 1.0):
            raise ValueError(f"invalid window {self!r}")

    def contains(self, norm: float) -> bool:
        return self.r <= norm <= self.r + self.width

    def to_json(self) -> str:
        return json.dumps(
            {"r": self.r, "width": self.width, "mass": self.mass, "samples": self.histogram_samples}
        )

    @classmethod
    def from_json(cls, text: str) -> "TruncationWindow":
        obj = json.loads(text)
        return cls(float(obj["r"]), float(obj["width"]), float(obj["mass"]), int(obj["samples"]))


@dataclass(frozen=True)
class TruncatedSample:
    coloring: np.ndarray
    disc_vector: np.ndarray
    norm: float
    tries: int = 1


def _entries(M):
    return M.entries if isinstance(M, KomlosMatrix) else np.asarray(M, dtype=float)


def histogram_edges(d: int, bins: int = DEFAULT_BINS, cap: float = DEFAULT_CAP, width=None):
    """Equal-width bin edges starting at 0.

    Without ``width`` the range ``[0, cap*sqrt(d)]`` is split into ``bins`` bins.
    With ``width`` the bins have that width and cover ``[0, cap*sqrt(d)]``
    (the last edge may overshoot it).
    """
    top = cap * math.sqrt(d)
    if width is None:
        if bins < 2:
            raise ValueError("need at least 2 bins")
        return np.linspace(0.0, top, bins + 1)
    if width <= 0:
        raise ValueError("width must be positive")
    nb = max(2, math.ceil(top / width))
    return np.arange(nb + 1) * float(width)


def stacked_norms(M, samples: int, seed: int) -> np.ndarray:
    """``||Mx||_2`` for ``samples`` independent stacked walks (stream ``(seed, i)``)."""
    a = _entries(M)
    out = np.empty(samples)
    for i in range(samples):
        out[i] = np.linalg.norm(sample_stacked(a, derive_seed(seed, i))[1])
    return out


def estimate_norm_histogram(
    M, samples: int, bins: int = DEFAULT_BINS, seed: int = 0, cap: float = DEFAULT_CAP, width=None
) -> NormHistogram:
    if samples < 1000:
        raise ValueError(f"need at least 1000 samples, got {samples}")
    a = _entries(M)
    edges = histogram_edges(a.shape[0], bins, cap, width)
    norms = stacked_norms(a, samples, seed)
    # bin k holds edges[k] <= norm < edges[k+1]
    idx = np.searchsorted(edges, norms, side="right") - 1
    inside = idx < edges.size - 1
    counts = np.bincount(idx[inside], minlength=edges.size - 1)
    return NormHistogram(edges, counts, int(np.count_nonzero(~inside)), samples)


def select_annulus(hist: NormHistogram) -> TruncationWindow:
    """Fullest bin, smallest radius on ties; its mass is at least the in-range mass / bins."""
    if hist.samples <= 0 or hist.in_range == 0:
        raise ValueError("histogram has no in-range mass")
    k = int(np.argmax(hist.counts))  # argmax returns the first maximum
    r, top = float(hist.edges[k]), float(hist.edges[k + 1])
    return TruncationWindow(r, top - r, hist.counts[k] / hist.samples, hist.samples)


def build_window(M, samples: int, seed: int, width=None, bins: int = DEFAULT_BINS, cap: float = DEFAULT_CAP):
    return select_annulus(estimate_norm_histogram(M, samples, bins, seed, cap, width))


def sample_truncated(M, window: TruncationWindow, seed: int, max_tries: int = 10_000) -> TruncatedSample:
    """First stacked-walk sample with ``||Mx||_2`` in the window; attempt i uses stream ``(seed, i)``."""
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    a = _entries(M)
    for attempt in range(max_tries):
        x, mx = sample_stacked(a, derive_seed(seed, attempt))
        norm = float(np.linalg.norm(mx))
        if window.contains(norm):
            return TruncatedSample(x, mx, norm, attempt + 1)
    raise TruncationFailure(max_tries, window)


def sample_truncated_many(M, window: TruncationWindow, count: int, seed: int, max_tries: int = 10_000):
    """``count`` independent truncated samples; sample j uses stream ``(seed, j)``."""
    return [sample_truncated(M, window, derive_seed(seed, j), max_tries) for j in range(count)]


def window_as_dict(window: TruncationWindow) -> dict:
    out = asdict(window)
    out["samples"] = out.pop("histogram_samples")
    return out
