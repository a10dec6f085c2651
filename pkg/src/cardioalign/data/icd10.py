"""ICD-10 code lists per disease and the code-set to label mapping."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

DISEASES = ("cad", "infarct", "stroke", "hypertension", "high_blood_pressure", "diabetes")

ICD10_CODES: dict[str, frozenset[str]] = {
    "cad": frozenset(
        "I200 I201 I208 I209 I220 I221 I228 I229 I210 I211 I212 I213 I214 I219 "
        "I240 I248 I249 I250 I251 I252 I253 I254 I255 I256 I258 I259".split()),
    "stroke": frozenset("I630 I631 I632 I633 I634 I635 I636 I638 I639".split()),
    "hypertension": frozenset(
        "I10 I110 I119 I120 I129 I130 I131 I132 I139 I150 I151 I152 I158 I159".split()),
    "infarct": frozenset("I210 I211 I212 I213 I214 I219 I252".split()),
    "diabetes": frozenset(
        "E100 E101 E102 E103 E104 E105 E106 E107 E108 E109 "
        "E110 E111 E112 E113 E114 E115 E116 E117 E118 E119 "
        "E121 E123 E125 E128 E129 "
        "E130 E131 E132 E133 E134 E135 E136 E137 E138 E139 "
        "E140 E141 E142 E143 E144 E145 E146 E147 E148 E149".split()),
}


@dataclass
class DiseaseLabels:
    cad: int = 0
    infarct: int = 0
    stroke: int = 0
    hypertension: int = 0
    high_blood_pressure: int = 0
    diabetes: int = 0

    def __post_init__(self):
        for name in DISEASES:
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"disease flag {name} must be 0 or 1")

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    def __getitem__(self, name: str) -> int:
        if name not in DISEASES:
            raise KeyError(name)
        return getattr(self, name)


def normalize_code(code: str) -> str:
    return code.strip().upper().replace(".", "")


def icd10_to_disease_labels(codes: Iterable[str]) -> DiseaseLabels:
    """Flag each disease whose code list intersects ``codes``; unknown codes are ignored.

    ``high_blood_pressure`` has no code list and is never set here.
    """
    present = {normalize_code(c) for c in codes}
    return DiseaseLabels(**{d: int(bool(present & ICD10_CODES[d])) for d in ICD10_CODES})
