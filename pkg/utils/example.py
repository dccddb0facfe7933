#coding=utf8
import re, sys, os
import numpy as np
from dataclasses import dataclass, field
from typing import List, Optional
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from prosr.trajectory import ThinkSpan


ORIGINAL, BLANK = 'original', 'blank'
CONDITIONS = (ORIGINAL, BLANK)
ANSWER_LETTERS = ('A', 'B', 'C', 'D')
ANSWER_PATTERN = re.compile(r'<answer>([^<]*)</answer>')
TEMPLATE_PATTERN = re.compile(r'\s*<think>(?:(?!<think>).)*?</think>\s*<answer>([ABCD])</answer>\s*', flags=re.DOTALL)


def parse_answer(text: str) -> Optional[str]:
    """ Letter inside the last <answer>X</answer> occurrence, None if absent or not one of A-D. """
    matches = ANSWER_PATTERN.findall(text)
    if not matches: return None
    letter = matches[-1].strip()
    return letter if letter in ANSWER_LETTERS else None


def match_template(text: str) -> bool:
    """ <think>...</think><answer>X</answer> with nothing but whitespace around it. """
    return TEMPLATE_PATTERN.fullmatch(text) is not None


@dataclass
class Rollout:
    sample_id: str
    condition: str
    trajectory: np.ndarray # entropies of the think_span tokens only
    think_span: ThinkSpan
    answer: Optional[str]
    format_ok: bool
    raw_text: str
    group_id: Optional[str] = None
    line_no: Optional[int] = None
    flags: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.think_span.valid and self.trajectory.size == len(self.think_span)


@dataclass
class RolloutPair:
    sample_id: str
    original: Rollout
    blank: Optional[Rollout] # None only in reward mode, when no blank rollout was logged
    reference_answer: str

    def __post_init__(self):
        assert self.original.condition == ORIGINAL
        assert self.blank is None or self.blank.condition == BLANK

    @property
    def same_answer(self) -> bool:
        """ Both answers parsed and identical; an unparsed answer never counts as the same. """
        return self.blank is not None and self.original.answer is not None and self.original.answer == self.blank.answer
