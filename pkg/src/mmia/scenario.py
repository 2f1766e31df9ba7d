"""Scenario codes such as ``CRFV``: shadow (dataset, architecture) then target.

A two-letter code like ``FR`` means shadow and target share dataset and
architecture.
"""

import itertools
from dataclasses import dataclass

from .errors import ParseError

DATASETS = ("C", "F", "I")
ARCHS = ("R", "V")
UNRESTRICTED, DATA_ONLY, CONSTRAINED = "unrestricted", "data-only", "constrained"


@dataclass(frozen=True)
class ScenarioSpec:
    shadow: tuple
    target: tuple
    attack: str = "both"

    @property
    def code(self):
        return "".join(self.shadow + self.target)

    @property
    def scenario_class(self):
        if self.shadow[0] != self.target[0]:
            return CONSTRAINED
        if self.shadow[1] != self.target[1]:
            return DATA_ONLY
        return UNRESTRICTED


def parse_scenario(code, attack="both"):
    if not isinstance(code, str) or len(code) not in (2, 4):
        raise ParseError(code, 0, "expected 2 or 4 letters")
    for i, ch in enumerate(code):
        allowed = DATASETS if i % 2 == 0 else ARCHS
        if ch not in allowed:
            kind = "dataset" if i % 2 == 0 else "architecture"
            raise ParseError(code, i, f"{ch!r} is not a {kind} letter {allowed}")
    if attack not in ("mb", "fb", "both"):
        raise ValueError(f"unknown attack {attack!r}")
    if len(code) == 2:
        code = code * 2
    return ScenarioSpec((code[0], code[1]), (code[2], code[3]), attack)


def all_codes():
    pairs = ["".join(p) for p in itertools.product(DATASETS, ARCHS)]
    return [a + b for a in pairs for b in pairs]
