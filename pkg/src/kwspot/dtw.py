"""Dynamic-time-warping kernels for template matching.

Three entry points share one distance machinery:

- dtw_full: whole-sequence alignment, anchored at both corners.
- sln_dtw: subsequence search with per-path-length cost normalisation,
  free entry and exit along the test axis.  This locates a short template
  inside a longer utterance without biasing toward short matches.
- scan_segments: windowed fallback that slides fixed windows over the
  test and keeps the best anchored alignment.

Normalised costs are exact minima of (path cost / path length) over all
monotone paths.  Tracking one running average per DP cell is greedy and
can miss the optimum (a worse prefix average may amortise better), so the
DP here is layered by exact path length: layer l holds the minimal total
cost over paths of exactly l cells, and the answer is the minimum of
cost/l over all layers and admissible exit cells.  dtw_oracle provides an
exhaustive-enumeration reference for tiny inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    BandTooNarrow,
    DimMismatch,
    EmptySequence,
    FormatError,
    TooLarge,
    TooShort,
    WindowTooSmall,
)
from .features import FeatureMatrix

DISTANCES = ("cosine", "euclidean")

# Cosine distances at or below this are treated as exact zeros so that
# identical sequences align with cost 0.0 rather than a few ulp.
ZERO_SNAP = 1e-12

ORACLE_CELL_CAP = 64


@dataclass(frozen=True)
class DtwConfig:
    """Distance metric, cost normalisation, and optional Sakoe-Chiba band."""

    distance: str = "cosine"
    normalize_by_path_length: bool = True
    band_radius: int | None = None

    def __post_init__(self) -> None:
        if self.distance not in DISTANCES:
            raise FormatError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.band_radius is not None and self.band_radius < 1:
            raise FormatError(f"band_radius must be >= 1, got {self.band_radius}")


@dataclass(frozen=True)
class MatchResult:
    """Where a template matched and how well.

    similarity is 1 - clamp(normalized_distance, 0, 1), so it always lives
    in [0, 1] with 1 meaning a perfect (zero-cost) alignment.
    """

    similarity: float
    start_frame: int
    end_frame: int
    normalized_distance: float

    @classmethod
    def from_distance(cls, normalized_distance: float, start_frame: int, end_frame: int) -> "MatchResult":
        clamped = min(max(normalized_distance, 0.0), 1.0)
        return cls(
            similarity=1.0 - clamped,
            start_frame=int(start_frame),
            end_frame=int(end_frame),
            normalized_distance=float(normalized_distance),
        )


def _as_frames(x: FeatureMatrix | np.ndarray) -> np.ndarray:
    if isinstance(x, FeatureMatrix):
        arr = x.frames.astype(np.float64)
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise FormatError("a sequence must be a 1-D or 2-D array of frames")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptySequence("cannot align an empty sequence")
    return arr


def frame_distance_matrix(a: np.ndarray, b: np.ndarray, distance: str = "cosine") -> np.ndarray:
    """Pairwise frame distances, shape (T_a, T_b).

    Cosine distance is 1 - cos(u, v) in [0, 2]; frames with near-zero norm
    are defined as maximally dissimilar (distance 1) to every frame.
    """
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"frame dims differ: {a.shape[1]} vs {b.shape[1]}")
    if distance == "euclidean":
        return cdist(a, b, metric="euclidean")
    norms_a = np.linalg.norm(a, axis=1)
    norms_b = np.linalg.norm(b, axis=1)
    dead_a = norms_a < 1e-12
    dead_b = norms_b < 1e-12
    unit_a = a / np.where(dead_a, 1.0, norms_a)[:, None]
    unit_b = b / np.where(dead_b, 1.0, norms_b)[:, None]
    d = 1.0 - np.clip(unit_a @ unit_b.T, -1.0, 1.0)
    d[d <= ZERO_SNAP] = 0.0
    d[dead_a, :] = 1.0
    d[:, dead_b] = 1.0
    return d


def _band_matrix(distances: np.ndarray, band_radius: int | None) -> np.ndarray:
    """Mask cells outside the |i - j| <= radius band with +inf."""
    if band_radius is None:
        return distances
    ta, tb = distances.shape
    if abs(ta - tb) > band_radius:
        raise BandTooNarrow(
            f"band radius {band_radius} cannot connect lengths {ta} and {tb}"
        )
    i = np.arange(ta)[:, None]
    j = np.arange(tb)[None, :]
    return np.where(np.abs(i - j) <= band_radius, distances, np.inf)


def _accumulated_costs(distances: np.ndarray) -> np.ndarray:
    """Classic DTW table: minimal total cost of a path from (0,0) to (i,j)."""
    ta, tb = distances.shape
    acc = np.empty((ta, tb))
    acc[0, 0] = distances[0, 0]
    for j in range(1, tb):
        acc[0, j] = distances[0, j] + acc[0, j - 1]
    for i in range(1, ta):
        acc[i, 0] = distances[i, 0] + acc[i - 1, 0]
        row = acc[i]
        above = acc[i - 1]
        d_row = distances[i]
        for j in range(1, tb):
            row[j] = d_row[j] + min(above[j - 1], above[j], row[j - 1])
    return acc


def _min_average_alignment(
    distances: np.ndarray, free_start: bool, free_end: bool
) -> tuple[float, int, int]:
    """Exact minimum of (path cost / path length) over monotone paths.

    Paths start in row 0 (any column when free_start, else column 0) and
    end in the last row (any column when free_end, else the last).  Ties
    break toward the smallest start column, then the smallest end column.
    Returns (average cost, start column, end column).
    """
    ta, tb = distances.shape
    col_sentinel = tb  # larger than any real start column

    cost = np.full((ta, tb), np.inf)
    start = np.full((ta, tb), col_sentinel, dtype=np.int64)
    if free_start:
        cost[0, :] = distances[0, :]
        start[0, :] = np.arange(tb)
    else:
        cost[0, 0] = distances[0, 0]
        start[0, 0] = 0

    best_avg = np.inf
    best_start = col_sentinel
    best_end = col_sentinel

    def consider_exits(layer: int) -> None:
        nonlocal best_avg, best_start, best_end
        exit_cost = cost[-1, :] if free_end else cost[-1, -1:]
        exit_start = start[-1, :] if free_end else start[-1, -1:]
        offset = 0 if free_end else tb - 1
        finite = np.isfinite(exit_cost)
        if not finite.any():
            return
        avg = exit_cost[finite] / layer
        layer_min = avg.min()
        if layer_min > best_avg:
            return
        hits = np.flatnonzero(finite)[avg == layer_min]
        starts = exit_start[finite][avg == layer_min]
        s = int(starts.min())
        e = int(hits[starts == s].min()) + offset
        if (layer_min, s, e) < (best_avg, best_start, best_end):
            best_avg, best_start, best_end = layer_min, s, e

    consider_exits(1)
    inf_row = np.full((1, tb), np.inf)
    inf_col = np.full((ta, 1), np.inf)
    pad_row = np.full((1, tb), col_sentinel, dtype=np.int64)
    pad_col = np.full((ta, 1), col_sentinel, dtype=np.int64)
    for layer in range(2, ta + tb):
        from_above = np.vstack([inf_row, cost[:-1, :]])
        from_left = np.hstack([inf_col, cost[:, :-1]])
        from_diag = np.vstack([inf_row, np.hstack([inf_col[1:], cost[:-1, :-1]])])
        prev_best = np.minimum(np.minimum(from_above, from_left), from_diag)
        if not np.isfinite(prev_best).any():
            break
        s_above = np.vstack([pad_row, start[:-1, :]])
        s_left = np.hstack([pad_col, start[:, :-1]])
        s_diag = np.vstack([pad_row, np.hstack([pad_col[1:], start[:-1, :-1]])])
        new_start = np.where(from_above == prev_best, s_above, col_sentinel)
        new_start = np.minimum(new_start, np.where(from_left == prev_best, s_left, col_sentinel))
        new_start = np.minimum(new_start, np.where(from_diag == prev_best, s_diag, col_sentinel))
        cost = distances + prev_best
        start = new_start
        consider_exits(layer)

    if not np.isfinite(best_avg):
        raise BandTooNarrow("no admissible alignment path inside the band")
    return float(best_avg), best_start, best_end


def dtw_full(
    a: FeatureMatrix | np.ndarray,
    b: FeatureMatrix | np.ndarray,
    config: DtwConfig | None = None,
) -> float:
    """Align two whole sequences; returns the optimal path cost.

    With normalize_by_path_length the objective (and return value) is the
    path's average per-cell cost instead of its total.
    """
    config = config or DtwConfig()
    fa, fb = _as_frames(a), _as_frames(b)
    distances = frame_distance_matrix(fa, fb, config.distance)
    distances = _band_matrix(distances, config.band_radius)
    if config.normalize_by_path_length:
        avg, _, _ = _min_average_alignment(distances, free_start=False, free_end=False)
        return avg
    return float(_accumulated_costs(distances)[-1, -1])


def align_path(
    a: FeatureMatrix | np.ndarray,
    b: FeatureMatrix | np.ndarray,
    config: DtwConfig | None = None,
) -> list[tuple[int, int]]:
    """Optimal-total-cost warping path from (0, 0) to the far corner.

    Cost ties prefer the diagonal predecessor, so aligning a sequence to
    itself yields the identity path.
    """
    config = config or DtwConfig()
    fa, fb = _as_frames(a), _as_frames(b)
    distances = frame_distance_matrix(fa, fb, config.distance)
    distances = _band_matrix(distances, config.band_radius)
    acc = _accumulated_costs(distances)
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            steps = ((i - 1, j - 1), (i - 1, j), (i, j - 1))
            values = [acc[p] for p in steps]
            i, j = steps[int(np.argmin(values))]
        path.append((i, j))
    path.reverse()
    return path


def sln_dtw(
    template: FeatureMatrix | np.ndarray,
    test: FeatureMatrix | np.ndarray,
    config: DtwConfig | None = None,
) -> MatchResult:
    """Find the best-matching test segment for a template.

    Entry is free along the test axis at the first template frame and exit
    is free at the last, so the template may land anywhere in the test.
    The returned bounds index the test frames of the winning path.  Any
    band_radius in the config is ignored here: an |i - j| band presumes
    aligned origins, which free placement does not have.
    """
    config = config or DtwConfig()
    ft, fx = _as_frames(template), _as_frames(test)
    if ft.shape[0] < 2:
        raise TooShort("template must have at least 2 frames")
    distances = frame_distance_matrix(ft, fx, config.distance)
    avg, start, end = _min_average_alignment(distances, free_start=True, free_end=True)
    return MatchResult.from_distance(avg, start, end)


def scan_segments(
    template: FeatureMatrix | np.ndarray,
    test: FeatureMatrix | np.ndarray,
    window_frames: int,
    hop_frames: int,
    config: DtwConfig | None = None,
) -> MatchResult:
    """Best anchored alignment of the template over sliding test windows.

    A final window flush with the end of the test is always included so
    the tail is never skipped.  Returns the winning window's bounds; ties
    go to the earliest window.
    """
    config = config or DtwConfig()
    ft, fx = _as_frames(template), _as_frames(test)
    if window_frames < 1 or hop_frames < 1:
        raise FormatError("window_frames and hop_frames must be >= 1")
    if 2 * window_frames < ft.shape[0]:
        raise WindowTooSmall(
            f"window of {window_frames} frames cannot hold a "
            f"{ft.shape[0]}-frame template (need >= half the template)"
        )
    total = fx.shape[0]
    if total <= window_frames:
        offsets = [0]
        window_frames = total
    else:
        offsets = list(range(0, total - window_frames + 1, hop_frames))
        if offsets[-1] != total - window_frames:
            offsets.append(total - window_frames)

    distances = frame_distance_matrix(ft, fx, config.distance)
    best: tuple[float, int, int] | None = None
    for offset in offsets:
        window = distances[:, offset : offset + window_frames]
        window = _band_matrix(window, config.band_radius)
        avg, _, _ = _min_average_alignment(window, free_start=False, free_end=False)
        if best is None or avg < best[0]:
            best = (avg, offset, offset + window.shape[1] - 1)
    assert best is not None
    return MatchResult.from_distance(*best)


def dtw_oracle(
    a: FeatureMatrix | np.ndarray,
    b: FeatureMatrix | np.ndarray,
    subsequence: bool = False,
    config: DtwConfig | None = None,
) -> float:
    """Reference DTW cost by exhaustive path enumeration.

    Exponential in the input size, hence the hard cell cap; exists so the
    DP implementations can be tested against ground truth.  Subsequence
    mode always normalises by path length; full mode follows the config.
    Bands are not modelled.
    """
    config = config or DtwConfig()
    fa, fb = _as_frames(a), _as_frames(b)
    ta, tb = fa.shape[0], fb.shape[0]
    if ta * tb > ORACLE_CELL_CAP:
        raise TooLarge(f"{ta}x{tb} exceeds the oracle cap of {ORACLE_CELL_CAP} cells")
    distances = frame_distance_matrix(fa, fb, config.distance)
    normalize = subsequence or config.normalize_by_path_length
    best = np.inf

    def extend(i: int, j: int, cost: float, length: int) -> None:
        nonlocal best
        cost = cost + distances[i, j]
        length += 1
        if i == ta - 1 and (subsequence or j == tb - 1):
            value = cost / length if normalize else cost
            if value < best:
                best = value
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < ta and j + dj < tb:
                extend(i + di, j + dj, cost, length)

    for start_col in range(tb) if subsequence else (0,):
        extend(0, start_col, 0.0, 0)
    return float(best)
