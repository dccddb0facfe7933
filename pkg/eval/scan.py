#coding=utf8
""" Threshold sensitivity of the two failure criteria (exceedance curves over the tau_cf and
margin grids) and the mean trajectory curves written next to the diagnostics report.
"""
import math, sys, os, logging
import numpy as np
import pandas as pd
from typing import List, Sequence
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.errors import EmptyResultError, InputError
from utils.example import RolloutPair
from prosr.trajectory import normalized_trajectory, relative_profile


logger = logging.getLogger('prosr')

SCAN_COLUMNS = ('similarity', 'late_minus_mid')


def read_per_sample(path: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputError(f'cannot read per-sample table {path}: {e}')
    missing = [c for c in SCAN_COLUMNS if c not in df.columns]
    if missing:
        raise InputError(f'per-sample table lacks column(s) {missing}', field=missing[0])
    for column in SCAN_COLUMNS:
        if not pd.api.types.is_numeric_dtype(df[column]):
            raise InputError('expected numeric values', field=column)
    return df


def _exceedance_rows(metric: str, values: np.ndarray, grid: Sequence[float], above) -> List[dict]:
    rows = []
    for cutoff in grid:
        n_above = int(np.sum(above(values, cutoff)))
        rows.append({'metric': metric, 'cutoff': float(cutoff), 'n': int(values.size), 'n_above': n_above,
            'exceedance': (n_above / values.size) if values.size > 0 else float('nan')})
    return rows


def threshold_scan(per_sample: pd.DataFrame, tau_grid: Sequence[float], margin_grid: Sequence[float]) -> pd.DataFrame:
    """ Fraction of samples with similarity > tau for every tau, and with
    (h_late - h_mid - m)_+ > 0 for every margin m. Missing values are left out of the denominator.
    """
    if len(tau_grid) == 0 or len(margin_grid) == 0:
        raise InputError('threshold grids must not be empty', field='tau_grid' if len(tau_grid) == 0 else 'margin_grid')
    sims = per_sample['similarity'].dropna().to_numpy(dtype=np.float64)
    gaps = per_sample['late_minus_mid'].dropna().to_numpy(dtype=np.float64)
    if sims.size == 0 and gaps.size == 0:
        raise EmptyResultError('per-sample table holds no similarity and no stage statistics')
    rows = _exceedance_rows('tau_cf', sims, tau_grid, lambda v, c: v > c)
    rows += _exceedance_rows('margin', gaps, margin_grid, lambda v, c: np.maximum(v - c, 0.) > 0)
    return pd.DataFrame(rows, columns=['metric', 'cutoff', 'n', 'n_above', 'exceedance'])


def check_monotone(scan: pd.DataFrame) -> List[str]:
    """ Exceedance must not increase along a growing cutoff; returns one message per violation. """
    violations = []
    for metric, df in scan.groupby('metric', sort=True):
        df = df.sort_values('cutoff', kind='mergesort')
        values = df['exceedance'].to_numpy(dtype=np.float64)
        cutoffs = df['cutoff'].to_numpy(dtype=np.float64)
        for i in range(1, values.size):
            if not (math.isnan(values[i]) or math.isnan(values[i - 1])) and values[i] > values[i - 1]:
                violations.append(f'{metric}: exceedance rises from {values[i - 1]!r} at {cutoffs[i - 1]!r} to {values[i]!r} at {cutoffs[i]!r}')
    return violations


def trajectory_curves(pairs: Sequence[RolloutPair], cfg) -> pd.DataFrame:
    """ Per resampled position: mean |z_orig - z_blank| over pairs with two valid spans, and
    mean entropy relative to the middle stage over valid original rollouts.
    """
    T = cfg.T
    gaps = [np.abs(normalized_trajectory(p.original.trajectory, T, cfg.eps) - normalized_trajectory(p.blank.trajectory, T, cfg.eps))
        for p in pairs if p.original.valid and p.blank is not None and p.blank.valid]
    profiles = [relative_profile(p.original.trajectory, T, cfg.segment_ratios)
        for p in pairs if p.original.valid and p.original.trajectory.size >= 3]
    gap = np.mean(np.stack(gaps), axis=0) if gaps else np.full(T, np.nan)
    profile = np.mean(np.stack(profiles), axis=0) if profiles else np.full(T, np.nan)
    position = np.arange(T)
    return pd.DataFrame({
        'position': position, 'fraction': position / (T - 1) if T > 1 else np.zeros(T),
        'trajectory_gap': gap, 'relative_entropy': profile, 'n_gap': len(gaps), 'n_profile': len(profiles)
    })
