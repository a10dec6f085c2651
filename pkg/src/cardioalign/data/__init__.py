from .augment import AugmentConfig, augment_subject
from .icd10 import DISEASES, DiseaseLabels, icd10_to_disease_labels
from .io import Dataset, DatasetError, read_dataset, write_dataset
from .phantom import (
    APPENDIX_PHENOTYPES, CLASSES, CmrStack, PhantomConfig, PhantomError, PhantomParams,
    PhenotypeSet, SegMask, Subject, analytic_phenotypes, generate_cohort,
    generate_phantom_subject, sample_params, voxel_volumes,
)
from .schema import Feature, TabularRecord, TabularSchema, default_schema
from .tabular import TabularStats, normalize_tabular


def select_frames(total: int, keep: int, offset: int = 0) -> list[int]:
    """Evenly spaced frame indices ``offset + i * (total // keep)`` (cyclic)."""
    if keep <= 0:
        raise ValueError("keep must be positive")
    if keep > total:
        raise ValueError(f"cannot keep {keep} of {total} frames")
    stride = total // keep
    return [(offset + i * stride) % total for i in range(keep)]
