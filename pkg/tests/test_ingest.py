#coding=utf8
import json, math, os
import numpy as np
import pandas as pd
import pytest
from preprocess.rollout_reader import NO_TOKEN_DATA, collect_references, pair_rollouts, parse_record, read_records, \
    record_to_rollout, serialize_record
from utils.errors import ConfigError, InputError
from utils.hyperparams import load_config, read_config_file
from utils.serialization import check_writable, read_jsonl, write_csv, write_json, write_jsonl
from conftest import make_record


def line_of(record):
    return json.dumps(record)


def test_parse_minimal_record():
    record = parse_record(line_of({'sample_id': 's1', 'condition': 'original', 'output_text': '<answer>A</answer>'}), 3)
    assert record.sample_id == 's1' and record.condition == 'original'
    assert record.entropies is None and record.reference_answer is None
    rollout = record_to_rollout(record)
    assert rollout.flags == [NO_TOKEN_DATA] and not rollout.valid
    assert rollout.answer == 'A' and rollout.line_no == 3


def test_parse_rejects_wrong_case_condition():
    with pytest.raises(InputError) as e:
        parse_record(line_of({'sample_id': 's1', 'condition': 'Blank', 'output_text': ''}), 7)
    assert e.value.field == 'condition' and e.value.line_no == 7
    assert str(e.value).startswith('line 7: condition: ')


def test_parse_rejects_ambiguous_trajectory_source():
    record = make_record('s1', 'original', [0.5] * 3, 'A')
    record['token_probs'] = [[1.]] * len(record['token_entropies'])
    with pytest.raises(InputError, match='ambiguous trajectory source'):
        parse_record(line_of(record), 1)


@pytest.mark.parametrize('mutate, field', [
    (lambda r: r.pop('sample_id'), 'sample_id'),
    (lambda r: r.update(output_text=5), 'output_text'),
    (lambda r: r.update(reference_answer='E'), 'reference_answer'),
    (lambda r: r['token_entropies'].__setitem__(2, -0.1), 'token_entropies[2]'),
    (lambda r: r.pop('token_offsets'), 'token_offsets'),
    (lambda r: r['token_offsets'].pop(), 'token_offsets'),
    (lambda r: r['token_offsets'].__setitem__(1, [0, 1]), 'token_offsets[1]'),
    (lambda r: r['token_offsets'].__setitem__(0, [0, 10 ** 6]), 'token_offsets[0]'),
    (lambda r: r.update(ref_logprobs=[-0.1]), 'ref_logprobs'),
])
def test_parse_errors_name_the_field(mutate, field):
    record = make_record('s1', 'original', [0.5] * 3, 'A')
    mutate(record)
    with pytest.raises(InputError) as e:
        parse_record(line_of(record), 4)
    assert e.value.field == field and e.value.line_no == 4


def test_parse_token_probs():
    record = make_record('s1', 'original', [0.] * 3, 'A')
    record['token_probs'] = [[1.]] * len(record.pop('token_entropies'))
    record['token_probs'][2] = [0.5, 0.5]
    parsed = parse_record(line_of(record), 1)
    assert parsed.entropies[2] == pytest.approx(math.log(2))
    record['token_probs'][3] = [0.5, 0.6]
    with pytest.raises(InputError) as e:
        parse_record(line_of(record), 1)
    assert e.value.field == 'token_probs[3]' and e.value.line_no == 1
    assert str(e.value).startswith('line 1: token_probs[3]: probabilities sum to')


def test_parse_malformed_json():
    with pytest.raises(InputError) as e:
        parse_record('{"sample_id": ', 12)
    assert e.value.line_no == 12
    with pytest.raises(InputError):
        parse_record('[1, 2]', 1)


def test_serialize_fixpoint(raw_records):
    for line_no, raw in enumerate(raw_records, start=1):
        raw = dict(raw, judge_score=0.5, group_id='g')
        record = parse_record(line_of(raw), line_no)
        line = serialize_record(record)
        again = parse_record(line, line_no)
        assert again == record
        assert serialize_record(again) == line
        assert json.loads(line)['judge_score'] == 0.5


def test_read_records_workers(rollout_file):
    serial = read_records(rollout_file, workers=1, chunk_size=2)
    threaded = read_records(rollout_file, workers=4, chunk_size=3)
    assert serial == threaded
    assert [r.line_no for r in serial] == list(range(1, 12))


def test_read_records_missing_file(tmp_path):
    with pytest.raises(InputError):
        read_records(os.path.join(str(tmp_path), 'absent.jsonl'))


def test_read_records_reports_line(tmp_path, raw_records):
    path = os.path.join(str(tmp_path), 'bad.jsonl')
    with open(path, 'w') as of:
        of.write(line_of(raw_records[0]) + '\n\n')
        of.write(line_of(dict(raw_records[1], condition='Blank')) + '\n')
    with pytest.raises(InputError) as e:
        read_records(path)
    assert e.value.line_no == 3


def test_pair_fixture(records, reward_cfg):
    pairs, orphans = pair_rollouts(records, reward_cfg.min_span_len)
    assert [p.sample_id for p in pairs] == ['p1', 'p2', 'p3', 'p4', 'p5']
    assert orphans == [{'sample_id': 'p6', 'reason': 'missing blank', 'n_records': 1, 'lines': [11]}]
    by_id = {p.sample_id: p for p in pairs}
    assert by_id['p1'].original.trajectory.tolist() == [0.5] * 12
    assert by_id['p4'].original.valid and not by_id['p4'].blank.valid
    assert not by_id['p4'].original.format_ok
    assert not by_id['p5'].original.valid


def test_pair_orphan_reasons():
    flat = [0.5] * 12
    raw = [
        make_record('d', 'original', flat, 'A'), make_record('d', 'original', flat, 'A'), make_record('d', 'blank', flat, 'A'),
        make_record('e', 'original', flat, 'A'), make_record('e', 'blank', flat, 'A'), make_record('e', 'blank', flat, 'B'),
        make_record('f', 'blank', flat, 'A'),
        make_record('g', 'original', flat, 'A', reference=None), make_record('g', 'blank', flat, 'A', reference=None),
        make_record('h', 'blank', flat, 'A'), make_record('h', 'original', flat, 'C'),
    ]
    for r in raw:
        if r['reference_answer'] is None: r.pop('reference_answer')
    records = [parse_record(line_of(r), i + 1) for i, r in enumerate(raw)]
    pairs, orphans = pair_rollouts(records)
    assert [p.sample_id for p in pairs] == ['h']
    assert pairs[0].original.answer == 'C' and pairs[0].blank.answer == 'A'
    assert [(o['sample_id'], o['reason'], o['lines']) for o in orphans] == [
        ('d', 'duplicate original', [1, 2, 3]), ('e', 'duplicate blank', [4, 5, 6]),
        ('f', 'missing original', [7]), ('g', 'missing reference', [8, 9]),
    ]


def test_reference_conflict():
    flat = [0.5] * 12
    records = [parse_record(line_of(make_record('c', 'original', flat, 'A', reference='A')), 1),
        parse_record(line_of(make_record('c', 'blank', flat, 'A', reference='B')), 2)]
    with pytest.raises(InputError) as e:
        collect_references(records)
    assert e.value.line_no == 2 and e.value.field == 'reference_answer'


def test_load_config_defaults(tmp_path):
    path = os.path.join(str(tmp_path), 'empty.json')
    open(path, 'w').close()
    cfg = load_config(path)
    assert cfg.reward.lambda_fmt == 0.2 and cfg.reward.lambda_cf == 0.1 and cfg.reward.lambda_drift == 0.1
    assert cfg.reward.tau_cf == 0.4 and cfg.reward.margin_m == 0.1 and cfg.reward.T == 64
    assert cfg.reward.segment_ratios == (3., 4., 3.)
    assert cfg.filter.min_len == 40 and cfg.filter.max_len == 400
    assert cfg.to_dict() == load_config(None).to_dict()


def test_load_config_precedence(tmp_path):
    path = os.path.join(str(tmp_path), 'config.json')
    with open(path, 'w') as of:
        json.dump({'lambda_cf': 0.3, 'T': 32, 'segment_ratios': [1, 2, 1]}, of)
    cfg = load_config(path, {'lambda_cf': 0.05, 'lambda_drift': None})
    assert cfg.reward.lambda_cf == 0.05
    assert cfg.reward.lambda_drift == 0.1
    assert cfg.reward.T == 32 and cfg.reward.segment_ratios == (1., 2., 1.)
    assert cfg.to_dict()['segment_ratios'] == [1., 2., 1.]


@pytest.mark.parametrize('content, key', [
    ({'tau_cf': 1.0}, 'tau_cf'),
    ({'lambda_sparse': 0.1}, 'lambda_sparse'),
    ({'T': 'long'}, 'T'),
    ({'T': 2.5}, 'T'),
    ({'segment_ratios': [3, 'x', 3]}, 'segment_ratios'),
])
def test_load_config_errors(tmp_path, content, key):
    path = os.path.join(str(tmp_path), 'config.json')
    with open(path, 'w') as of:
        json.dump(content, of)
    with pytest.raises(ConfigError) as e:
        load_config(path)
    assert e.value.key == key


def test_read_config_file_malformed(tmp_path):
    path = os.path.join(str(tmp_path), 'config.json')
    with open(path, 'w') as of:
        of.write('{\n"T": }')
    with pytest.raises(InputError) as e:
        read_config_file(path)
    assert e.value.line_no == 2


def test_writers(tmp_path):
    out = str(tmp_path)
    write_json({'a': np.float64(0.1), 'b': float('nan'), 'c': np.int64(3)}, os.path.join(out, 'r.json'))
    with open(os.path.join(out, 'r.json')) as inf:
        assert json.load(inf) == {'a': 0.1, 'b': None, 'c': 3}
    assert write_jsonl([{'x': 1}, {'x': np.bool_(True)}], os.path.join(out, 'r.jsonl')) == 2
    assert read_jsonl(os.path.join(out, 'r.jsonl')) == [{'x': 1}, {'x': True}]
    write_csv(pd.DataFrame({'v': [0.1, 1 / 3]}), os.path.join(out, 'r.csv'))
    with open(os.path.join(out, 'r.csv'), 'rb') as inf:
        assert inf.read() == b'v\n0.10000000000000001\n0.33333333333333331\n'
    with pytest.raises(InputError, match='--force'):
        check_writable([os.path.join(out, 'r.csv')])
    check_writable([os.path.join(out, 'r.csv')], force=True)
