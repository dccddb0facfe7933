#coding=utf8
""" Rule-based quality filter for chain-of-thought training data: answer correctness, length bounds,
reconsideration markers, repeated sentences and the spatial-anchor ratio, plus per-source corpus
statistics before and after filtering.
"""
import json, math, re, sys, os, logging, time
import pandas as pd
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Pattern, Sequence
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.errors import ConfigError, InputError
from utils.example import ANSWER_LETTERS


logger = logging.getLogger('prosr')

LEXICON_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'lexicon')
DEFAULT_MARKERS_FILE = os.path.join(LEXICON_DIR, 'reconsider_markers.txt')
DEFAULT_LEXICON_FILE = os.path.join(LEXICON_DIR, 'spatial_lexicon.txt')
REGEX_PREFIX = 're:'

RULES = ('answer correctness', 'length', 'reconsider', 'repetition', 'spatial grounding')
SENTENCE_SPLIT = re.compile(r'[.!?\n]+')
MIN_SENTENCE_WORDS = 3


def load_entries(path: str) -> List[str]:
    """ One entry per line, `#` starts a comment line, blank lines skipped. """
    try:
        with open(path, 'r', encoding='utf-8') as inf:
            lines = [line.strip() for line in inf]
    except OSError as e:
        raise InputError(f'cannot read word list {path}: {e}')
    return [line for line in lines if line and not line.startswith('#')]


def compile_entries(entries: Sequence[str]) -> Optional[Pattern]:
    """ A single case-insensitive alternation. Phrases come first, longest first, so that a
    span matched by a multi-word phrase is not counted again by one of its words.
    """
    phrases, regexes = [], []
    for entry in entries:
        if entry.startswith(REGEX_PREFIX):
            pattern = entry[len(REGEX_PREFIX):]
            try:
                re.compile(pattern)
            except re.error as e:
                raise ConfigError('spatial_lexicon', f'bad regular expression {pattern!r}: {e}')
            regexes.append(f'(?:{pattern})')
        else:
            words = entry.lower().split()
            if words: phrases.append(words)
    if not phrases and not regexes: return None
    phrases = sorted(set(tuple(p) for p in phrases), key=lambda p: (-sum(len(w) for w in p) - len(p), p))
    alternatives = [r'(?<!\w)' + r'\s+'.join(re.escape(w) for w in p) + r'(?!\w)' for p in phrases] + regexes
    return re.compile('|'.join(alternatives), flags=re.IGNORECASE)


@dataclass
class FilterConfig:
    min_len: int = 40
    max_len: int = 400
    max_reconsider: int = 2
    max_repeated_sentences: int = 3
    min_anchor_ratio: float = 0.04
    reconsider_markers_file: str = DEFAULT_MARKERS_FILE
    spatial_lexicon_file: str = DEFAULT_LEXICON_FILE
    reconsider_markers: Optional[List[str]] = None
    spatial_lexicon: Optional[List[str]] = None
    marker_pattern: Optional[Pattern] = field(default=None, init=False, repr=False, compare=False)
    lexicon_pattern: Optional[Pattern] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        for key in ['min_len', 'max_len', 'max_reconsider', 'max_repeated_sentences', 'min_anchor_ratio']:
            if getattr(self, key) < 0:
                raise ConfigError(key, f'must be >= 0, got {getattr(self, key)!r}')
        if self.min_len > self.max_len:
            raise ConfigError('min_len', f'min_len {self.min_len!r} exceeds max_len {self.max_len!r}')
        if self.reconsider_markers is None: self.reconsider_markers = load_entries(self.reconsider_markers_file)
        if self.spatial_lexicon is None: self.spatial_lexicon = load_entries(self.spatial_lexicon_file)
        self.marker_pattern = compile_entries([m.lower() for m in self.reconsider_markers])
        self.lexicon_pattern = compile_entries(self.spatial_lexicon)


@dataclass
class CotSample:
    sample_id: str
    think_text: str
    predicted_answer: Optional[str]
    reference_answer: str
    source: str = 'default'
    line_no: Optional[int] = field(default=None, compare=False)


@dataclass
class FilterVerdict:
    sample_id: str
    source: str
    keep: bool
    failed_rules: List[str]
    length: int
    reconsider_count: int
    repeated_sentence_count: int
    anchor_ratio: float
    answer_correct: bool


def word_count(text: str) -> int:
    return len(text.split())


def reconsider_count(text: str, markers) -> int:
    """ markers: a compiled pattern or a list of phrases """
    pattern = markers if isinstance(markers, re.Pattern) or markers is None else compile_entries([m.lower() for m in markers])
    if pattern is None or not text: return 0
    return sum(1 for _ in pattern.finditer(text))


def anchor_ratio(text: str, lexicon) -> float:
    """ Matched lexicon spans over the whitespace word count, capped at 1. """
    n_words = word_count(text)
    if n_words == 0: return 0.
    pattern = lexicon if isinstance(lexicon, re.Pattern) or lexicon is None else compile_entries(lexicon)
    if pattern is None: return 0.
    matches = sum(1 for _ in pattern.finditer(text))
    return min(matches, n_words) / n_words


def repeated_sentence_count(text: str) -> int:
    sentences = (' '.join(s.lower().split()) for s in SENTENCE_SPLIT.split(text))
    counter = Counter(s for s in sentences if len(s.split()) >= MIN_SENTENCE_WORDS)
    return sum(c - 1 for c in counter.values())


def filter_verdict(sample: CotSample, cfg: FilterConfig) -> FilterVerdict:
    length = word_count(sample.think_text)
    n_reconsider = reconsider_count(sample.think_text, cfg.marker_pattern)
    n_repeat = repeated_sentence_count(sample.think_text)
    ratio = anchor_ratio(sample.think_text, cfg.lexicon_pattern)
    correct = sample.predicted_answer is not None and sample.predicted_answer == sample.reference_answer
    failed = []
    if not correct: failed.append('answer correctness')
    if not cfg.min_len <= length <= cfg.max_len: failed.append('length')
    if n_reconsider > cfg.max_reconsider: failed.append('reconsider')
    if n_repeat > cfg.max_repeated_sentences: failed.append('repetition')
    if ratio < cfg.min_anchor_ratio: failed.append('spatial grounding')
    return FilterVerdict(
        sample_id=sample.sample_id, source=sample.source, keep=(len(failed) == 0), failed_rules=failed, length=length,
        reconsider_count=n_reconsider, repeated_sentence_count=n_repeat, anchor_ratio=ratio, answer_correct=correct
    )


def filter_corpus(samples: Sequence[CotSample], cfg: FilterConfig, workers: int = 1) -> List[FilterVerdict]:
    start_time = time.time()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(lambda s: filter_verdict(s, cfg), samples))
    else: verdicts = [filter_verdict(s, cfg) for s in samples]
    logger.info(f'Filtered {len(verdicts):d} samples, kept {sum(v.keep for v in verdicts):d}, cost {time.time() - start_time:.2f}s')
    return verdicts


def _means(verdicts: List[FilterVerdict]) -> Dict[str, float]:
    keys = ['length', 'reconsider_count', 'repeated_sentence_count', 'anchor_ratio']
    if not verdicts: return {k: float('nan') for k in keys}
    return {k: math.fsum(float(getattr(v, k)) for v in verdicts) / len(verdicts) for k in keys}


def _summary_rows(source: str, verdicts: List[FilterVerdict]) -> List[dict]:
    kept = [v for v in verdicts if v.keep]
    after = _means(kept)
    rows = []
    for ordering, before_set in [('answer_last', verdicts), ('answer_first', [v for v in verdicts if v.answer_correct])]:
        before = _means(before_set)
        row = {'source': source, 'ordering': ordering, 'n': len(verdicts), 'n_before': len(before_set), 'n_kept': len(kept),
            'keep_rate': len(kept) / len(verdicts)}
        for key in ['length', 'reconsider_count', 'repeated_sentence_count', 'anchor_ratio']:
            row[f'{key}_before'], row[f'{key}_after'] = before[key], after[key]
        for rule in RULES:
            # answer-first removes the incorrect samples before the other rules see them
            pool = verdicts if ordering == 'answer_last' or rule == 'answer correctness' else before_set
            row['failed_' + rule.replace(' ', '_')] = sum(1 for v in pool if rule in v.failed_rules)
        rows.append(row)
    return rows


def corpus_stats(verdicts: Sequence[FilterVerdict]) -> pd.DataFrame:
    """ Per-source keep rate and before/after means, under both orderings of the correctness rule.
    An `overall` block is appended when there is more than one source.
    """
    if len(verdicts) == 0:
        raise InputError('corpus statistics need at least one sample')
    sources = sorted(set(v.source for v in verdicts))
    rows = []
    for source in sources:
        rows.extend(_summary_rows(source, [v for v in verdicts if v.source == source]))
    if len(sources) > 1:
        rows.extend(_summary_rows('overall', list(verdicts)))
    return pd.DataFrame(rows)


def parse_cot_record(line: str, line_no: int = None) -> CotSample:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise InputError(f'malformed JSON ({e.msg} at column {e.colno:d})', line_no=line_no)
    if not isinstance(obj, dict):
        raise InputError('expected a JSON object', line_no=line_no)
    for key in ['sample_id', 'think_text', 'reference_answer']:
        if not isinstance(obj.get(key), str):
            raise InputError('missing required string field', line_no=line_no, field=key)
    if obj['reference_answer'] not in ANSWER_LETTERS:
        raise InputError(f"expected one of {list(ANSWER_LETTERS)}, got {obj['reference_answer']!r}", line_no=line_no, field='reference_answer')
    predicted = obj.get('predicted_answer')
    if predicted is not None and predicted not in ANSWER_LETTERS:
        raise InputError(f'expected one of {list(ANSWER_LETTERS)} or null, got {predicted!r}', line_no=line_no, field='predicted_answer')
    source = obj.get('source', 'default')
    if not isinstance(source, str):
        raise InputError('expected a string', line_no=line_no, field='source')
    return CotSample(obj['sample_id'], obj['think_text'], predicted, obj['reference_answer'], source, line_no)


def read_cot_samples(path: str) -> List[CotSample]:
    samples = []
    try:
        with open(path, 'r', encoding='utf-8') as inf:
            for line_no, line in enumerate(inf, start=1):
                if line.strip(): samples.append(parse_cot_record(line, line_no))
    except (OSError, UnicodeDecodeError) as e:
        raise InputError(f'cannot read {path}: {e}')
    return samples


def verdict_to_dict(verdict: FilterVerdict) -> dict:
    return {
        'sample_id': verdict.sample_id, 'source': verdict.source, 'keep': verdict.keep, 'failed_rules': verdict.failed_rules,
        'length': verdict.length, 'reconsider_count': verdict.reconsider_count,
        'repeated_sentence_count': verdict.repeated_sentence_count, 'anchor_ratio': verdict.anchor_ratio,
        'answer_correct': verdict.answer_correct
    }
