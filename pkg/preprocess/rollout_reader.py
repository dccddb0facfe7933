#coding=utf8
""" Reader of rollout logs (one JSON object per line), schema validation, and the pairing of
original/blank rollouts by sample_id.
"""
import json, math, sys, os, logging, time
import numpy as np
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.errors import InputError, TrajectoryError
from utils.example import ANSWER_LETTERS, BLANK, CONDITIONS, ORIGINAL, Rollout, RolloutPair, match_template, parse_answer
from prosr.trajectory import DEFAULT_MIN_SPAN_LEN, ThinkSpan, entropies_from_probs, extract_think_span


logger = logging.getLogger('prosr')

RECORD_FIELDS = ('sample_id', 'condition', 'reference_answer', 'output_text', 'token_entropies', 'token_probs', 'token_offsets', 'group_id', 'ref_logprobs')
NO_TOKEN_DATA = 'no_token_data'


@dataclass
class RolloutRecord:
    sample_id: str
    condition: str
    output_text: str
    reference_answer: Optional[str] = None
    token_entropies: Optional[List[float]] = None
    token_probs: Optional[List[List[float]]] = None
    token_offsets: Optional[List[Tuple[int, int]]] = None
    group_id: Optional[str] = None
    ref_logprobs: Optional[List[float]] = None
    extra: Dict[str, object] = field(default_factory=dict) # unknown fields, kept for re-serialization
    entropies: Optional[List[float]] = field(default=None, repr=False) # from token_entropies or derived from token_probs
    line_no: Optional[int] = field(default=None, compare=False)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_string(obj: dict, key: str, line_no: int, required: bool = True) -> Optional[str]:
    if key not in obj or obj[key] is None:
        if required: raise InputError('missing required field', line_no=line_no, field=key)
        return None
    if not isinstance(obj[key], str):
        raise InputError(f'expected a string, got {type(obj[key]).__name__}', line_no=line_no, field=key)
    return obj[key]


def _check_reals(values, key: str, line_no: int, non_negative: bool = False) -> List[float]:
    if not isinstance(values, list):
        raise InputError('expected an array of numbers', line_no=line_no, field=key)
    result = []
    for idx, v in enumerate(values):
        if not _is_number(v) or not math.isfinite(v):
            raise InputError(f'expected a finite number, got {v!r}', line_no=line_no, field=f'{key}[{idx:d}]')
        if non_negative and v < 0:
            raise InputError(f'negative entropy {v!r}', line_no=line_no, field=f'{key}[{idx:d}]')
        result.append(float(v))
    return result


def _check_offsets(values, text_len: int, line_no: int) -> List[Tuple[int, int]]:
    if not isinstance(values, list):
        raise InputError('expected an array of [start, end] pairs', line_no=line_no, field='token_offsets')
    offsets, prev_end = [], 0
    for idx, pair in enumerate(values):
        key = f'token_offsets[{idx:d}]'
        if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(v, int) and not isinstance(v, bool) for v in pair):
            raise InputError(f'expected an integer pair, got {pair!r}', line_no=line_no, field=key)
        start, end = pair
        if not 0 <= start <= end <= text_len:
            raise InputError(f'offsets {pair!r} outside the output text of length {text_len:d}', line_no=line_no, field=key)
        if start < prev_end:
            raise InputError(f'offsets not monotone, {start:d} < previous end {prev_end:d}', line_no=line_no, field=key)
        offsets.append((start, end))
        prev_end = end
    return offsets


def parse_record(line: str, line_no: int = None) -> RolloutRecord:
    """ Strict schema validation of one log line. Token probabilities are turned into
    entropies here, so a bad distribution is reported with its line and token index.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise InputError(f'malformed JSON ({e.msg} at column {e.colno:d})', line_no=line_no)
    if not isinstance(obj, dict):
        raise InputError('expected a JSON object', line_no=line_no)

    sample_id = _check_string(obj, 'sample_id', line_no)
    condition = _check_string(obj, 'condition', line_no)
    if condition not in CONDITIONS:
        raise InputError(f'expected one of {list(CONDITIONS)}, got {condition!r}', line_no=line_no, field='condition')
    output_text = _check_string(obj, 'output_text', line_no)
    reference = _check_string(obj, 'reference_answer', line_no, required=False)
    if reference is not None and reference not in ANSWER_LETTERS:
        raise InputError(f'expected one of {list(ANSWER_LETTERS)}, got {reference!r}', line_no=line_no, field='reference_answer')
    group_id = _check_string(obj, 'group_id', line_no, required=False)

    has_entropies, has_probs = obj.get('token_entropies') is not None, obj.get('token_probs') is not None
    if has_entropies and has_probs:
        raise InputError('ambiguous trajectory source, give token_entropies or token_probs but not both', line_no=line_no, field='token_entropies')
    entropies = token_entropies = token_probs = offsets = None
    if has_entropies:
        token_entropies = entropies = _check_reals(obj['token_entropies'], 'token_entropies', line_no, non_negative=True)
    if has_probs:
        if not isinstance(obj['token_probs'], list):
            raise InputError('expected an array of probability arrays', line_no=line_no, field='token_probs')
        token_probs = [_check_reals(probs, f'token_probs[{tid:d}]', line_no) for tid, probs in enumerate(obj['token_probs'])]
        try:
            entropies = entropies_from_probs(token_probs)
        except TrajectoryError as e:
            raise InputError(e.message, line_no=line_no, field=e.field)
    if entropies is not None:
        if obj.get('token_offsets') is None:
            raise InputError('required when token entropies or probabilities are given', line_no=line_no, field='token_offsets')
        offsets = _check_offsets(obj['token_offsets'], len(output_text), line_no)
        if len(offsets) != len(entropies):
            raise InputError(f'{len(offsets):d} offsets for {len(entropies):d} tokens', line_no=line_no, field='token_offsets')
    elif obj.get('token_offsets') is not None:
        offsets = _check_offsets(obj['token_offsets'], len(output_text), line_no)

    ref_logprobs = None
    if obj.get('ref_logprobs') is not None:
        ref_logprobs = _check_reals(obj['ref_logprobs'], 'ref_logprobs', line_no)
        if offsets is not None and len(ref_logprobs) != len(offsets):
            raise InputError(f'{len(ref_logprobs):d} values for {len(offsets):d} tokens', line_no=line_no, field='ref_logprobs')

    extra = {k: v for k, v in obj.items() if k not in RECORD_FIELDS}
    return RolloutRecord(
        sample_id=sample_id, condition=condition, output_text=output_text, reference_answer=reference,
        token_entropies=token_entropies, token_probs=token_probs, token_offsets=offsets, group_id=group_id,
        ref_logprobs=ref_logprobs, extra=extra, entropies=entropies, line_no=line_no
    )


def serialize_record(record: RolloutRecord) -> str:
    """ Inverse of parse_record: known fields in schema order, then the preserved unknown ones. """
    obj = {}
    for key in RECORD_FIELDS:
        value = getattr(record, key)
        if value is None: continue
        if key == 'token_offsets': value = [list(pair) for pair in value]
        obj[key] = value
    for key, value in record.extra.items():
        obj[key] = value
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


def iter_lines(path: str) -> Iterator[Tuple[int, str]]:
    try:
        with open(path, 'r', encoding='utf-8') as inf:
            for line_no, line in enumerate(inf, start=1):
                if line.strip(): yield line_no, line
    except (OSError, UnicodeDecodeError) as e:
        raise InputError(f'cannot read {path}: {e}')


def read_records(path: str, workers: int = 1, chunk_size: int = 1000) -> List[RolloutRecord]:
    """ Streaming reader; with workers > 1 the lines of each chunk are parsed concurrently,
    results keep the file order.
    """
    start_time = time.time()
    records, chunk = [], []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def flush():
        if pool is None: records.extend(parse_record(line, line_no) for line_no, line in chunk)
        else: records.extend(pool.map(lambda item: parse_record(item[1], item[0]), chunk))
        chunk.clear()

    try:
        for item in iter_lines(path):
            chunk.append(item)
            if len(chunk) >= chunk_size: flush()
        flush()
    finally:
        if pool is not None: pool.shutdown()
    logger.info(f'Read {len(records):d} rollout records from {path}, cost {time.time() - start_time:.2f}s')
    return records


def record_to_rollout(record: RolloutRecord, min_span_len: int = DEFAULT_MIN_SPAN_LEN) -> Rollout:
    flags = []
    if record.entropies is not None and record.token_offsets is not None:
        span = extract_think_span(record.output_text, record.token_offsets, min_span_len)
        trajectory = np.asarray(record.entropies[span.start:span.end], dtype=np.float64)
    else:
        span, trajectory = ThinkSpan(0, 0, False), np.zeros(0, dtype=np.float64)
        flags.append(NO_TOKEN_DATA)
    return Rollout(
        sample_id=record.sample_id, condition=record.condition, trajectory=trajectory, think_span=span,
        answer=parse_answer(record.output_text), format_ok=match_template(record.output_text),
        raw_text=record.output_text, group_id=record.group_id, line_no=record.line_no, flags=flags
    )


def collect_references(records: List[RolloutRecord]) -> Dict[str, str]:
    """ sample_id -> reference answer; two records disagreeing on it is an error. """
    references, origin = {}, {}
    for r in records:
        if r.reference_answer is None: continue
        if r.sample_id in references and references[r.sample_id] != r.reference_answer:
            raise InputError(f'reference_answer {r.reference_answer!r} conflicts with {references[r.sample_id]!r} on line {origin[r.sample_id]}',
                line_no=r.line_no, field='reference_answer')
        references.setdefault(r.sample_id, r.reference_answer)
        origin.setdefault(r.sample_id, r.line_no)
    return references


def pair_rollouts(records: List[RolloutRecord], min_span_len: int = DEFAULT_MIN_SPAN_LEN) -> Tuple[List[RolloutPair], List[dict]]:
    """ Join records on sample_id, exactly one original and one blank per sample.
    @return:
        pairs: sorted by sample_id
        orphans: one entry per rejected sample_id with reason, line numbers and record count
    """
    references = collect_references(records)
    grouped = defaultdict(lambda: {ORIGINAL: [], BLANK: []})
    for r in records:
        grouped[r.sample_id][r.condition].append(r)

    pairs, orphans = [], []
    for sample_id in sorted(grouped.keys()):
        originals, blanks = grouped[sample_id][ORIGINAL], grouped[sample_id][BLANK]
        if len(originals) > 1: reason = 'duplicate original'
        elif len(blanks) > 1: reason = 'duplicate blank'
        elif len(blanks) == 0: reason = 'missing blank'
        elif len(originals) == 0: reason = 'missing original'
        elif sample_id not in references: reason = 'missing reference'
        else: reason = None
        if reason is not None:
            lines = sorted(r.line_no for r in originals + blanks if r.line_no is not None)
            orphans.append({'sample_id': sample_id, 'reason': reason, 'n_records': len(originals) + len(blanks), 'lines': lines})
            continue
        pairs.append(RolloutPair(
            sample_id=sample_id, original=record_to_rollout(originals[0], min_span_len),
            blank=record_to_rollout(blanks[0], min_span_len), reference_answer=references[sample_id]
        ))
    for orphan in orphans:
        logger.info(f"Orphan sample {orphan['sample_id']}: {orphan['reason']}")
    logger.info(f'Paired {len(pairs):d} samples, {len(orphans):d} orphans')
    return pairs, orphans
