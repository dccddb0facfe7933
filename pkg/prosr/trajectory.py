#coding=utf8
""" Token-level entropy trajectories of the thinking span: entropy computation, span extraction,
resampling to a fixed length, l1 normalization and early/middle/late stage statistics.
All entropies are in nats.
"""
import math, sys, os
import numpy as np
from dataclasses import dataclass
from typing import List, Sequence, Tuple
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.errors import TrajectoryError


DEFAULT_T = 64
DEFAULT_EPS = 1e-8
DEFAULT_RATIOS = (3., 4., 3.)
DEFAULT_MIN_SPAN_LEN = 10
THINK_OPEN, THINK_CLOSE = '<think>', '</think>'


@dataclass(frozen=True)
class ThinkSpan:
    start: int # token index, inclusive
    end: int # token index, exclusive
    valid: bool

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SegmentStats:
    h_early: float
    h_mid: float
    h_late: float
    segment_lengths: Tuple[int, int, int]


def entropy_from_distribution(probs: Sequence[float], tol: float = 1e-6) -> float:
    """ H = - sum p * ln p with 0 * ln 0 := 0.
    @args:
        probs: one token's predictive distribution (full vocabulary or top-k, as logged)
        tol: accepted deviation of sum(probs) from 1
    @return:
        entropy in nats, >= 0
    """
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise TrajectoryError('empty probability vector')
    bad = np.flatnonzero(~np.isfinite(p) | (p < 0) | (p > 1))
    if bad.size > 0:
        raise TrajectoryError(f'probability {p[bad[0]]!r} outside [0, 1] at index {bad[0]:d}')
    total = math.fsum(p.tolist())
    if abs(total - 1.) > tol:
        raise TrajectoryError(f'probabilities sum to {total!r}, not 1 (last index {p.size - 1:d})')
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz))) + 0.


def entropies_from_probs(token_probs: Sequence[Sequence[float]]) -> List[float]:
    entropies = []
    for tid, probs in enumerate(token_probs):
        try:
            entropies.append(entropy_from_distribution(probs))
        except TrajectoryError as e:
            raise TrajectoryError(e.message, field=f'token_probs[{tid:d}]')
    return entropies


def extract_think_span(output_text: str, token_offsets: Sequence[Tuple[int, int]], min_span_len: int = DEFAULT_MIN_SPAN_LEN) -> ThinkSpan:
    """ Token index range whose characters fall strictly inside the first <think>...</think> pair.
    Missing, nested or out-of-order tags and too short spans give valid=False, never an exception.
    """
    n_tokens = len(token_offsets)
    open_pos = output_text.find(THINK_OPEN)
    if open_pos < 0: return ThinkSpan(0, 0, False)
    first_close = output_text.find(THINK_CLOSE)
    if 0 <= first_close < open_pos: return ThinkSpan(0, 0, False) # closing tag before the opening one
    inner_start = open_pos + len(THINK_OPEN)
    close_pos = output_text.find(THINK_CLOSE, inner_start)
    if close_pos < 0: return ThinkSpan(0, 0, False)
    if output_text.find(THINK_OPEN, inner_start, close_pos) >= 0: return ThinkSpan(0, 0, False) # nested

    start = 0
    while start < n_tokens and token_offsets[start][0] < inner_start:
        start += 1
    end = start
    while end < n_tokens and token_offsets[end][1] <= close_pos:
        end += 1
    return ThinkSpan(start, end, (end - start) >= min_span_len)


def resample(e: Sequence[float], T: int = DEFAULT_T) -> np.ndarray:
    """ Piecewise-linear interpolation of the index grid [0, L-1] onto [0, T-1]. """
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    L = e.size
    if L == 0:
        raise TrajectoryError('cannot resample an empty trajectory')
    if T < 1:
        raise TrajectoryError(f'resample length must be positive, got {T!r}')
    if L == T: return e.copy()
    if L == 1: return np.full(T, e[0], dtype=np.float64)
    return np.interp(np.linspace(0., L - 1., T), np.arange(L, dtype=np.float64), e)


def l1_normalize(v: Sequence[float], eps: float = DEFAULT_EPS) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    bad = np.flatnonzero(v < 0)
    if bad.size > 0:
        raise TrajectoryError(f'negative element {v[bad[0]]!r} at index {bad[0]:d}')
    return v / (np.sum(v) + eps)


def normalized_trajectory(e: Sequence[float], T: int = DEFAULT_T, eps: float = DEFAULT_EPS) -> np.ndarray:
    return l1_normalize(resample(e, T), eps)


def segment_bounds(L: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> Tuple[int, int]:
    """ Boundaries b1 < b2 of the early/middle/late partition, nearest integer (half up),
    moved minimally so that every segment keeps at least one token.
    """
    if L < 3:
        raise TrajectoryError(f'trajectory of length {L:d} is too short for three segments')
    r1, r2, r3 = ratios
    total = r1 + r2 + r3
    b1 = int(math.floor(L * r1 / total + .5))
    b2 = int(math.floor(L * (r1 + r2) / total + .5))
    b1 = min(max(b1, 1), L - 2)
    b2 = min(max(b2, b1 + 1), L - 1)
    return b1, b2


def segment_means(e: Sequence[float], ratios: Sequence[float] = DEFAULT_RATIOS) -> SegmentStats:
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    b1, b2 = segment_bounds(e.size, ratios)
    return SegmentStats(
        h_early=float(np.mean(e[:b1])), h_mid=float(np.mean(e[b1:b2])), h_late=float(np.mean(e[b2:])),
        segment_lengths=(b1, b2 - b1, e.size - b2)
    )


def tail_delta(s: SegmentStats, m: float = 0.1) -> float:
    """ Late-stage re-rise beyond the margin, [H_L - H_M - m]_+ """
    return max(0., s.h_late - s.h_mid - m)


def relative_profile(e: Sequence[float], T: int = DEFAULT_T, ratios: Sequence[float] = DEFAULT_RATIOS) -> np.ndarray:
    """ Resampled trajectory minus its middle-stage mean. """
    return resample(e, T) - segment_means(e, ratios).h_mid


def resample_batch(E: np.ndarray, T: int = DEFAULT_T) -> np.ndarray:
    """ Row-wise resample of an [N, L] matrix of equal-length trajectories. """
    E = np.asarray(E, dtype=np.float64)
    L = E.shape[1]
    if L == 0:
        raise TrajectoryError('cannot resample an empty trajectory')
    if L == T: return E.copy()
    if L == 1: return np.repeat(E, T, axis=1)
    grid = np.linspace(0., L - 1., T)
    left = np.minimum(np.floor(grid).astype(np.int64), L - 2)
    frac = grid - left
    return E[:, left] * (1. - frac) + E[:, left + 1] * frac


def l1_normalize_batch(V: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    return V / (np.sum(V, axis=1, keepdims=True) + eps)


def segment_means_batch(E: np.ndarray, ratios: Sequence[float] = DEFAULT_RATIOS) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    E = np.asarray(E, dtype=np.float64)
    b1, b2 = segment_bounds(E.shape[1], ratios)
    return E[:, :b1].mean(axis=1), E[:, b1:b2].mean(axis=1), E[:, b2:].mean(axis=1)


def similarity_batch(Za: np.ndarray, Zb: np.ndarray) -> np.ndarray:
    """ 1 - 0.5 * ||za - zb||_1 per row. """
    return 1. - .5 * np.sum(np.abs(Za - Zb), axis=1)
