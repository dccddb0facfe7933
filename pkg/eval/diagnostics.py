#coding=utf8
""" Process-level diagnostics over paired original/blank rollouts:
A_img, A_blank, SAR, NTS, LRR@tau, the per-sample failure-group partition and its breakdown.
"""
import math, sys, os, logging, time
import numpy as np
import pandas as pd
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.errors import ConfigError, EmptyResultError, TrajectoryError
from utils.example import ORIGINAL, Rollout, RolloutPair
from prosr.trajectory import DEFAULT_EPS, DEFAULT_RATIOS, DEFAULT_T, normalized_trajectory, segment_means, tail_delta


logger = logging.getLogger('prosr')

CLEAN, SPURIOUS_ONLY, TAIL_ONLY, BOTH = 'clean', 'spurious-only', 'tail-only', 'both'
FAILURE_GROUPS = (CLEAN, SPURIOUS_ONLY, TAIL_ONLY, BOTH)


@dataclass
class DiagnosticsConfig:
    nts_cut: float = 0.4
    lrr_tau: float = 0.1
    lrr_taus: Tuple[float, ...] = (0.05, 0.1, 0.2)
    tau_grid: Tuple[float, ...] = (0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7)
    margin_grid: Tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)

    def __post_init__(self):
        if not 0. <= self.nts_cut <= 1.:
            raise ConfigError('nts_cut', f'must lie in [0, 1], got {self.nts_cut!r}')
        if self.lrr_tau < 0:
            raise ConfigError('lrr_tau', f'must be >= 0, got {self.lrr_tau!r}')
        for key in ['lrr_taus', 'tau_grid', 'margin_grid']:
            if len(getattr(self, key)) == 0:
                raise ConfigError(key, 'grid must not be empty')


@dataclass
class SampleDiagnostics:
    sample_id: str
    reference_answer: str
    original_answer: Optional[str]
    blank_answer: Optional[str]
    correct_original: bool
    correct_blank: bool
    same_answer: bool
    nts_included: bool
    similarity: Optional[float] = None
    h_early: Optional[float] = None
    h_mid: Optional[float] = None
    h_late: Optional[float] = None
    late_minus_mid: Optional[float] = None
    delta_tail: Optional[float] = None
    group: str = CLEAN


@dataclass
class DiagnosticReport:
    n: int
    a_img: float
    a_blank: float
    sar: float
    nts: Optional[float]
    nts_excluded: int
    lrr: Dict[float, Optional[float]]
    n_lrr: int
    per_sample: List[SampleDiagnostics] = field(default_factory=list)
    group_counts: Dict[str, int] = field(default_factory=dict)


def _mean(values: Sequence[float]) -> float:
    # exactly rounded sum, so the aggregate does not depend on the reduction order
    return math.fsum(values) / len(values)


def _require_pairs(pairs: Sequence[RolloutPair]):
    if len(pairs) == 0:
        raise EmptyResultError('no rollout pairs to diagnose')


def original_accuracy(pairs: Sequence[RolloutPair]) -> float:
    _require_pairs(pairs)
    return _mean([float(p.original.answer is not None and p.original.answer == p.reference_answer) for p in pairs])


def blank_accuracy(pairs: Sequence[RolloutPair]) -> float:
    """ A_blank: the answer stays correct after the visual content is removed. """
    _require_pairs(pairs)
    return _mean([float(p.blank.answer is not None and p.blank.answer == p.reference_answer) for p in pairs])


def same_answer_rate(pairs: Sequence[RolloutPair]) -> float:
    _require_pairs(pairs)
    return _mean([float(p.same_answer) for p in pairs])


def trajectory_similarity(a: Rollout, b: Rollout, T: int = DEFAULT_T, eps: float = DEFAULT_EPS) -> float:
    """ 1 - 0.5 * ||z^a - z^b||_1 with z the resampled, l1-normalized trajectory. """
    for rollout in [a, b]:
        if not rollout.valid:
            raise TrajectoryError(f'{rollout.condition} rollout of sample {rollout.sample_id} has no valid think span')
    za, zb = normalized_trajectory(a.trajectory, T, eps), normalized_trajectory(b.trajectory, T, eps)
    return float(1. - .5 * np.sum(np.abs(za - zb)))


def nts(pairs: Sequence[RolloutPair], T: int = DEFAULT_T, eps: float = DEFAULT_EPS) -> Tuple[float, int]:
    """ Mean trajectory similarity over pairs whose two spans are valid.
    @return:
        (nts, number of excluded pairs)
    """
    sims = [trajectory_similarity(p.original, p.blank, T, eps) for p in pairs if p.original.valid and p.blank.valid]
    if len(sims) == 0:
        raise EmptyResultError(f'all {len(pairs):d} pairs lack a valid think span on one side, NTS undefined')
    return _mean(sims), len(pairs) - len(sims)


def rollout_tail_delta(rollout: Rollout, m: float = 0.1, ratios: Sequence[float] = DEFAULT_RATIOS) -> Optional[float]:
    if not rollout.valid or rollout.trajectory.size < 3: return None
    return tail_delta(segment_means(rollout.trajectory, ratios), m)


def late_rise_rate(rollouts: Sequence[Rollout], m: float = 0.1, tau: float = 0.1, ratios: Sequence[float] = DEFAULT_RATIOS) -> float:
    """ LRR@tau over image-conditioned rollouts with a valid span; blank rollouts are ignored. """
    deltas = [rollout_tail_delta(r, m, ratios) for r in rollouts if r.condition == ORIGINAL]
    deltas = [d for d in deltas if d is not None]
    if len(deltas) == 0:
        raise EmptyResultError('no original-condition rollout with a valid think span')
    return _mean([float(d > tau) for d in deltas])


def failure_group(sample: SampleDiagnostics, nts_cut: float = 0.4, lrr_tau: float = 0.1) -> str:
    spurious = sample.same_answer and sample.similarity is not None and sample.similarity > nts_cut
    tail = sample.delta_tail is not None and sample.delta_tail > lrr_tau
    if spurious and tail: return BOTH
    if spurious: return SPURIOUS_ONLY
    if tail: return TAIL_ONLY
    return CLEAN


def failure_groups(report: DiagnosticReport, nts_cut: float = 0.4, lrr_tau: float = 0.1) -> List[str]:
    return [failure_group(s, nts_cut, lrr_tau) for s in report.per_sample]


def sample_diagnostics(pair: RolloutPair, cfg, diag_cfg: DiagnosticsConfig) -> SampleDiagnostics:
    """ cfg carries the shared trajectory settings (T, eps, margin_m, segment_ratios) """
    orig, blank, ref = pair.original, pair.blank, pair.reference_answer
    sample = SampleDiagnostics(
        sample_id=pair.sample_id, reference_answer=ref, original_answer=orig.answer, blank_answer=blank.answer,
        correct_original=(orig.answer is not None and orig.answer == ref),
        correct_blank=(blank.answer is not None and blank.answer == ref),
        same_answer=pair.same_answer, nts_included=(orig.valid and blank.valid)
    )
    if sample.nts_included:
        sample.similarity = trajectory_similarity(orig, blank, cfg.T, cfg.eps)
    if orig.valid and orig.trajectory.size >= 3:
        stats = segment_means(orig.trajectory, cfg.segment_ratios)
        sample.h_early, sample.h_mid, sample.h_late = stats.h_early, stats.h_mid, stats.h_late
        sample.late_minus_mid = stats.h_late - stats.h_mid
        sample.delta_tail = tail_delta(stats, cfg.margin_m)
    sample.group = failure_group(sample, diag_cfg.nts_cut, diag_cfg.lrr_tau)
    return sample


def compute_report(pairs: Sequence[RolloutPair], cfg, diag_cfg: DiagnosticsConfig, workers: int = 1) -> DiagnosticReport:
    _require_pairs(pairs)
    start_time = time.time()
    pairs = sorted(pairs, key=lambda p: p.sample_id)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_sample = list(pool.map(lambda p: sample_diagnostics(p, cfg, diag_cfg), pairs))
    else: per_sample = [sample_diagnostics(p, cfg, diag_cfg) for p in pairs]

    sims = [s.similarity for s in per_sample if s.nts_included]
    deltas = [s.delta_tail for s in per_sample if s.delta_tail is not None]
    if len(sims) == 0:
        logger.info('No pair has two valid think spans, NTS is reported as null')
    if len(deltas) == 0:
        logger.info('No original rollout has a valid think span, LRR is reported as null')
    lrr = {tau: (_mean([float(d > tau) for d in deltas]) if deltas else None) for tau in sorted(set(diag_cfg.lrr_taus) | {diag_cfg.lrr_tau})}
    report = DiagnosticReport(
        n=len(per_sample),
        a_img=_mean([float(s.correct_original) for s in per_sample]),
        a_blank=_mean([float(s.correct_blank) for s in per_sample]),
        sar=_mean([float(s.same_answer) for s in per_sample]),
        nts=(_mean(sims) if sims else None), nts_excluded=len(per_sample) - len(sims),
        lrr=lrr, n_lrr=len(deltas), per_sample=per_sample,
        group_counts={g: sum(1 for s in per_sample if s.group == g) for g in FAILURE_GROUPS}
    )
    logger.info(f'Diagnosed {report.n:d} pairs ({report.nts_excluded:d} excluded from NTS, {report.n_lrr:d} rollouts in LRR), cost {time.time() - start_time:.2f}s')
    return report


def failure_group_breakdown(report: DiagnosticReport, baseline: pd.DataFrame = None) -> pd.DataFrame:
    """ Per failure group: size and accuracy of the original rollouts.
    @args:
        baseline: per-sample table of a baseline run (sample_id, group, correct_original). Samples
            are then grouped by the baseline's failures, restricted to the ids both runs share,
            and the baseline accuracy and the delta are reported alongside.
    """
    if baseline is None:
        rows = []
        for group in FAILURE_GROUPS:
            members = [s for s in report.per_sample if s.group == group]
            acc = _mean([float(s.correct_original) for s in members]) if members else float('nan')
            rows.append({'group': group, 'n': len(members), 'accuracy': acc})
        return pd.DataFrame(rows, columns=['group', 'n', 'accuracy'])

    baseline_group = dict(zip(baseline['sample_id'].astype(str), baseline['group']))
    baseline_correct = dict(zip(baseline['sample_id'].astype(str), baseline['correct_original'].astype(str).str.lower() == 'true'))
    rows = []
    for group in FAILURE_GROUPS:
        members = [s for s in report.per_sample if baseline_group.get(s.sample_id) == group]
        acc = _mean([float(s.correct_original) for s in members]) if members else float('nan')
        base_acc = _mean([float(baseline_correct[s.sample_id]) for s in members]) if members else float('nan')
        rows.append({'group': group, 'n': len(members), 'baseline_accuracy': base_acc, 'accuracy': acc, 'delta': acc - base_acc})
    return pd.DataFrame(rows, columns=['group', 'n', 'baseline_accuracy', 'accuracy', 'delta'])


def per_sample_frame(report: DiagnosticReport) -> pd.DataFrame:
    columns = list(SampleDiagnostics.__dataclass_fields__.keys())
    return pd.DataFrame([asdict(s) for s in report.per_sample], columns=columns)


def report_to_dict(report: DiagnosticReport, config: dict = None, orphans: list = None, breakdown: pd.DataFrame = None) -> dict:
    result = {
        'n': report.n, 'a_img': report.a_img, 'a_blank': report.a_blank, 'sar': report.sar,
        'nts': report.nts, 'nts_excluded': report.nts_excluded,
        'lrr': {repr(float(tau)): value for tau, value in report.lrr.items()}, 'n_lrr': report.n_lrr,
        'failure_groups': [{'group': g, 'n': report.group_counts[g]} for g in FAILURE_GROUPS]
    }
    if breakdown is not None:
        result['failure_breakdown'] = [
            {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
            for row in breakdown.to_dict(orient='records')
        ]
    if orphans is not None: result['orphans'] = orphans
    if config is not None: result['config'] = config
    return result
