#coding=utf8
import json, os
import pytest
from prosr.rewards import RewardConfig
from eval.diagnostics import DiagnosticsConfig
from preprocess.rollout_reader import pair_rollouts, parse_record
from preprocess.cot_filter import CotSample


FIXTURE_T = 12


def build_output(think_entropies, answer, trailing='', think=True):
    """ Token-level output with exact character offsets, tag tokens at entropy 0. """
    tokens = []
    if think:
        tokens.append(('<think>', 0.))
        tokens += [(f'w{i:d}' if i == 0 else f' w{i:d}', float(h)) for i, h in enumerate(think_entropies)]
        tokens.append(('</think>', 0.))
    tokens += [('<answer>', 0.), (answer, 0.), ('</answer>', 0.)]
    if trailing: tokens.append((trailing, 0.))
    text, entropies, offsets = '', [], []
    for token, h in tokens:
        offsets.append([len(text), len(text) + len(token)])
        text += token
        entropies.append(h)
    return text, entropies, offsets


def make_record(sample_id, condition, think_entropies, answer, reference='B', trailing='', think=True, **extra):
    text, entropies, offsets = build_output(think_entropies, answer, trailing, think)
    record = {'sample_id': sample_id, 'condition': condition, 'reference_answer': reference, 'output_text': text,
        'token_entropies': entropies, 'token_offsets': offsets}
    record.update(extra)
    return record


def fixture_records():
    """ Five hand-computed pairs plus one orphan original (T=12, segments 4/4/4). """
    flat_half, flat_one = [0.5] * 12, [1.] * 12
    stepped = [1.] * 4 + [0.5] * 4 + [0.9] * 4
    late_only = [0.] * 3 + [1.] * 9
    return [
        make_record('p1', 'original', flat_half, 'B'),
        make_record('p1', 'blank', flat_half, 'B'),
        make_record('p2', 'original', stepped, 'B'),
        make_record('p2', 'blank', flat_one, 'C'),
        make_record('p3', 'original', flat_one, 'A'),
        make_record('p3', 'blank', late_only, 'A'),
        make_record('p4', 'original', flat_half, 'B', trailing=' extra words'),
        make_record('p4', 'blank', [0.5] * 3, 'B'),
        make_record('p5', 'original', [], 'C', think=False),
        make_record('p5', 'blank', flat_half, 'B'),
        make_record('p6', 'original', flat_half, 'B'),
    ]


@pytest.fixture
def reward_cfg():
    return RewardConfig(T=FIXTURE_T)


@pytest.fixture
def diag_cfg():
    return DiagnosticsConfig()


@pytest.fixture
def raw_records():
    return fixture_records()


@pytest.fixture
def records(raw_records):
    return [parse_record(json.dumps(r), line_no) for line_no, r in enumerate(raw_records, start=1)]


@pytest.fixture
def pairs(records, reward_cfg):
    pairs, _ = pair_rollouts(records, reward_cfg.min_span_len)
    return pairs


@pytest.fixture
def pair_by_id(pairs):
    return {p.sample_id: p for p in pairs}


@pytest.fixture
def rollout_file(tmp_path, raw_records):
    path = os.path.join(str(tmp_path), 'rollouts.jsonl')
    with open(path, 'w') as of:
        for r in raw_records:
            of.write(json.dumps(r) + '\n')
    return path


@pytest.fixture
def fixture_config(tmp_path):
    path = os.path.join(str(tmp_path), 'config.json')
    with open(path, 'w') as of:
        json.dump({'T': FIXTURE_T}, of)
    return path


# (filler sentences, anchor sentences, reconsider sentences, extra repeats, correct, source) -> expected failed rules
COT_CORPUS = [
    ((10, 4, 0, 0, True, 'a'), []),
    ((20, 5, 1, 0, True, 'a'), ['spatial grounding']),
    ((5, 3, 0, 0, True, 'a'), []),
    ((2, 2, 0, 0, True, 'a'), ['length']),
    ((70, 5, 0, 0, True, 'a'), ['spatial grounding']),
    ((80, 10, 0, 0, True, 'a'), ['length', 'spatial grounding']),
    ((10, 4, 3, 0, True, 'a'), ['reconsider']),
    ((10, 4, 2, 0, True, 'a'), []),
    ((10, 4, 0, 3, True, 'a'), []),
    ((10, 4, 0, 4, True, 'a'), ['repetition']),
    ((10, 4, 0, 0, False, 'a'), ['answer correctness']),
    ((10, 4, 3, 4, False, 'a'), ['answer correctness', 'reconsider', 'repetition', 'spatial grounding']),
    ((15, 6, 1, 1, True, 'b'), []),
    ((15, 3, 0, 0, True, 'b'), ['spatial grounding']),
    ((6, 5, 0, 0, True, 'b'), []),
    ((0, 1, 0, 0, True, 'b'), ['length']),
    ((30, 8, 2, 2, True, 'b'), ['spatial grounding']),
    ((30, 10, 2, 2, True, 'b'), []),
    ((10, 4, 0, 0, False, 'b'), ['answer correctness']),
    ((10, 4, 5, 0, True, 'b'), ['reconsider']),
    ((8, 4, 0, 0, True, 'c'), []),
    ((1, 3, 0, 0, True, 'c'), ['length']),
    ((60, 14, 0, 0, True, 'c'), ['spatial grounding']),
    ((60, 16, 0, 0, True, 'c'), ['length', 'spatial grounding']),
    ((59, 16, 0, 0, True, 'c'), []),
    ((10, 4, 0, 6, True, 'c'), ['repetition', 'spatial grounding']),
    ((10, 4, 1, 1, False, 'c'), ['answer correctness']),
    ((12, 5, 0, 0, True, 'c'), []),
    ((4, 2, 0, 0, True, 'c'), ['length']),
    ((5, 2, 0, 0, True, 'c'), []),
]


def build_think_text(fill, anchors, reconsiders, repeats):
    """ 5 words per filler, 6 words and one spatial match per anchor, 4 words and one marker per
    reconsider sentence, and repeats + 1 copies of one 5-word sentence.
    """
    sentences = [f'Clue c{j:d} is noted here.' for j in range(fill)]
    sentences += [f'Cup a{j:d} is left of plate.' for j in range(anchors)]
    sentences += [f'Wait, recheck clue r{j:d}.' for j in range(reconsiders)]
    sentences += ['The scene has many objects.'] * (repeats + 1)
    return ' '.join(sentences)


def cot_word_count(fill, anchors, reconsiders, repeats):
    return 5 * fill + 6 * anchors + 4 * reconsiders + 5 * (repeats + 1)


@pytest.fixture
def cot_corpus():
    samples, expected = [], {}
    for idx, ((fill, anchors, reconsiders, repeats, correct, source), failed) in enumerate(COT_CORPUS):
        sample_id = f'cot{idx + 1:02d}'
        samples.append(CotSample(sample_id, build_think_text(fill, anchors, reconsiders, repeats), 'B' if correct else 'C', 'B', source))
        expected[sample_id] = failed
    return samples, expected
