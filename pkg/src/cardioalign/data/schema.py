"""Tabular feature schema and per-subject records.

The shipped schema lists 117 features: 67 numerical, 18 binary and 32 general
categorical, in that order. Categorical cardinalities are synthetic choices;
the names follow the cohort field names they stand in for.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

NUMERICAL = "numerical"
BINARY = "binary"
CATEGORICAL = "categorical"
KINDS = (NUMERICAL, BINARY, CATEGORICAL)


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    cardinality: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown feature kind {self.kind!r}")
        if self.kind == BINARY and self.cardinality != 2:
            object.__setattr__(self, "cardinality", 2)
        if self.kind == CATEGORICAL and self.cardinality < 2:
            raise SchemaError(f"categorical feature {self.name!r} needs cardinality >= 2")

    @property
    def is_categorical(self) -> bool:
        return self.kind != NUMERICAL


@dataclass
class TabularSchema:
    features: list[Feature]

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise KeyError(name)

    def indices(self, kind: str) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.kind == kind]

    def to_dict(self) -> dict:
        return {"features": [{"name": f.name, "kind": f.kind, "cardinality": f.cardinality}
                             for f in self.features]}

    @classmethod
    def from_dict(cls, d: dict) -> "TabularSchema":
        return cls([Feature(f["name"], f["kind"], int(f.get("cardinality", 0)))
                    for f in d["features"]])

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TabularRecord:
    """Values in schema order; categorical values are integer codes stored as floats."""

    values: np.ndarray
    missing: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.missing is None:
            self.missing = np.zeros(self.values.shape, dtype=bool)
        self.missing = np.asarray(self.missing, dtype=bool)
        if self.values.shape != self.missing.shape:
            raise SchemaError("record values and missing flags differ in length")

    def validate(self, schema: TabularSchema) -> None:
        if len(self.values) != len(schema):
            raise SchemaError(f"record has {len(self.values)} entries, schema has {len(schema)}")
        for i, f in enumerate(schema.features):
            if self.missing[i] or not f.is_categorical:
                continue
            v = self.values[i]
            if v != int(v) or not 0 <= v < f.cardinality:
                raise SchemaError(f"{f.name!r}: category {v} outside [0, {f.cardinality})")


# ---------------------------------------------------------------------------
# shipped schema

CARDIAC_NUMERICAL = [
    "LVEDV (mL)", "LVESV (mL)", "LVSV (mL)", "LVEF (%)", "LVCO (L/min)", "LVM (g)",
    "RVEDV (mL)", "RVESV (mL)", "RVSV (mL)", "RVEF (%)",
]

NUMERICAL_FEATURES = [
    "Pulse wave Arterial Stiffness index", "Systolic blood pressure (mean)",
    "Diastolic blood pressure (mean)", "Pulse rate (mean)", "Body fat percentage",
    "Whole body fat mass", "Whole body fat-free mass", "Whole body water mass",
    "Body mass index (BMI)", "Cooked vegetable intake", "Salad / raw vegetable intake",
    "Cardiac operations performed", "Total mass", "Basal metabolic rate",
    "Impedance of whole body", "Waist circumference", "Hip circumference", "Standing height",
    "Height", "Sitting height", "Weight", "Ventricular rate", "P duration", "QRS duration",
    "PQ interval", "RR interval", "PP interval", "Cardiac output", "Cardiac index",
    "Average heart rate", "Body surface area", "Duration of walks",
    "Duration of moderate activity", "Duration of vigorous activity",
    "Time spent watching television (TV)", "Time spent using computer", "Time spent driving",
    "Heart rate during PWA", "Systolic brachial blood pressure during PWA",
    "Diastolic brachial blood pressure during PWA", "Peripheral pulse pressure during PWA",
    "Central systolic blood pressure during PWA", "Central pulse pressure during PWA",
    "Number of beats in waveform average for PWA", "Central augmentation pressure during PWA",
    "Augmentation index for PWA", "Cardiac output during PWA", "End systolic pressure during PWA",
    "End systolic pressure index during PWA", "Stroke volume during PWA",
    "Mean arterial pressure during PWA", "Cardiac index during PWA", "Sleep duration",
    "Exposure to tobacco smoke at home", "Exposure to tobacco smoke outside home",
    "Pack years of smoking",
    "Pack years adult smoking as proportion of life span exposed to smoking",
] + CARDIAC_NUMERICAL

BINARY_FEATURES = [
    "Worrier / anxious feelings", "Shortness of breath walking on level ground", "Sex",
    "Diabetes diagnosis", "Heart attack diagnosed by doctor", "Angina diagnosed by doctor",
    "Stroke diagnosed by doctor", "High blood pressure diagnosed by doctor",
    "Cholesterol lowering medication regularly taken", "Blood pressure medication regularly taken",
    "Insulin medication regularly taken", "Hormone replacement therapy medication regularly taken",
    "Oral contraceptive pill or minipill medication regularly taken", "Pace-maker",
    "Ever had diabetes (Type I or Type II)", "Long-standing illness, disability or infirmity",
    "Tense / 'highly strung'", "Ever smoked",
]

# name -> number of answer levels
CATEGORICAL_FEATURES = {
    "Sleeplessness / insomnia": 3,
    "Frequency of heavy DIY in last 4 weeks": 6,
    "Alcohol intake frequency": 6,
    "Processed meat intake": 6,
    "Beef intake": 6,
    "Pork intake": 6,
    "Lamb/mutton intake": 6,
    "Overall health rating": 4,
    "Alcohol usually taken with meals": 3,
    "Alcohol drinker status": 3,
    "Frequency of drinking alcohol": 5,
    "Frequency of consuming six or more units of alcohol": 5,
    "Amount of alcohol drunk on a typical drinking day": 5,
    "Falls in the last year": 3,
    "Weight change compared with 1 year ago": 3,
    "Number of days/week walked 10+ minutes": 8,
    "Number of days/week of moderate physical activity 10+ minutes": 8,
    "Number of days/week of vigorous physical activity 10+ minutes": 8,
    "Usual walking pace": 3,
    "Frequency of stair climbing in last 4 weeks": 6,
    "Frequency of walking for pleasure in last 4 weeks": 6,
    "Duration walking for pleasure": 7,
    "Frequency of strenuous sports in last 4 weeks": 6,
    "Duration of strenuous sports": 7,
    "Duration of light DIY": 7,
    "Duration of heavy DIY": 7,
    "Frequency of other exercises in last 4 weeks": 6,
    "Duration of other exercises": 7,
    "Current tobacco smoking": 3,
    "Past tobacco smoking": 4,
    "Smoking/smokers in household": 3,
    "Smoking status": 3,
}


def default_schema() -> TabularSchema:
    feats = [Feature(n, NUMERICAL) for n in NUMERICAL_FEATURES]
    feats += [Feature(n, BINARY, 2) for n in BINARY_FEATURES]
    feats += [Feature(n, CATEGORICAL, c) for n, c in CATEGORICAL_FEATURES.items()]
    return TabularSchema(feats)


def subset_schema(schema: TabularSchema, names: Iterable[str]) -> TabularSchema:
    keep = set(names)
    return TabularSchema([f for f in schema.features if f.name in keep])
