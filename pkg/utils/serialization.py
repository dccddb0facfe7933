#coding=utf8
""" Writers for the report files. Floats keep their shortest round-trip repr in JSON and
17 significant digits in CSV, so rerunning a subcommand reproduces the same bytes.
"""
import json, math, os
import numpy as np
import pandas as pd
from typing import Iterable, List
from utils.errors import InputError


CSV_FLOAT_FORMAT = '%.17g'


def to_jsonable(obj):
    """ numpy scalars/arrays to python, NaN and inf to None """
    if isinstance(obj, dict): return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)): return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray): return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)): return bool(obj)
    if isinstance(obj, np.integer): return int(obj)
    if isinstance(obj, (np.floating, float)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def dumps_line(obj) -> str:
    return json.dumps(to_jsonable(obj), ensure_ascii=False, allow_nan=False)


def check_writable(paths: Iterable[str], force: bool = False):
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not force:
        raise InputError(f'refusing to overwrite {existing[0]}, pass --force', field='--out')


def write_json(obj, path: str):
    with open(path, 'w', encoding='utf-8', newline='\n') as of:
        json.dump(to_jsonable(obj), of, ensure_ascii=False, allow_nan=False, indent=4)
        of.write('\n')


def write_jsonl(records: Iterable[dict], path: str) -> int:
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as of:
        for record in records:
            of.write(dumps_line(record) + '\n')
            count += 1
    return count


def write_csv(df: pd.DataFrame, path: str):
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


def read_jsonl(path: str) -> List[dict]:
    """ Plain reader for the output files; rollout and CoT inputs go through their own parsers. """
    records = []
    with open(path, 'r', encoding='utf-8') as inf:
        for line_no, line in enumerate(inf, start=1):
            if not line.strip(): continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise InputError(f'malformed JSON ({e.msg})', line_no=line_no)
    return records
