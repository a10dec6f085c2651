import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cardioalign.data import (CLASSES, DISEASES, AugmentConfig, Dataset, DatasetError,
                              PhantomConfig, PhantomError, TabularRecord, TabularSchema,
                              analytic_phenotypes, augment_subject, generate_cohort,
                              generate_phantom_subject, icd10_to_disease_labels, normalize_tabular,
                              read_dataset, sample_params, select_frames, voxel_volumes,
                              write_dataset)
from cardioalign.data.icd10 import ICD10_CODES
from cardioalign.data.phantom import (PHENOTYPE_FIELDS, build_params, ellipsoid_volume,
                                      sample_disease)
from cardioalign.data.schema import BINARY, CATEGORICAL, NUMERICAL, Feature, SchemaError
from cardioalign.data.tabular import denormalize_tabular


def _params(**kw):
    return build_params(lv_axes=(27, 27, 40), myo_thickness=7, rv_axes=(22, 32, 45),
                        la_axes=(24, 24, 22), ra_axes=(22, 22, 22), crop=32, frames=4,
                        spacing_mm=5.0, **kw)


class TestSelectFrames:
    """Evenly strided frame subsampling."""

    def test_paper_counts(self):
        assert select_frames(50, 5) == [0, 10, 20, 30, 40]

    def test_keep_all(self):
        assert select_frames(7, 7) == list(range(7))

    def test_stride(self):
        assert select_frames(10, 2) == [0, 5]

    def test_offset_wraps(self):
        assert select_frames(10, 5, offset=7) == [7, 9, 1, 3, 5]

    @pytest.mark.parametrize("total, keep", [(10, 0), (4, 5)])
    def test_invalid(self, total, keep):
        with pytest.raises(ValueError):
            select_frames(total, keep)


class TestAnalyticPhenotypes:
    """Closed-form volumes from ellipsoid axes."""

    def test_sphere_ejection_fraction(self):
        p = build_params(lv_axes=(30, 30, 30), myo_thickness=7, rv_axes=(22, 32, 45),
                         la_axes=(24, 24, 22), ra_axes=(22, 22, 22), lv_es_scale=0.8)
        ph = analytic_phenotypes(p)
        assert ph.lvef == pytest.approx(100 * (1 - (24 / 30) ** 3), rel=1e-12)
        assert round(ph.lvef, 1) == 48.8
        assert ph.lvedv == pytest.approx(4 / 3 * math.pi * 30 ** 3 / 1000, rel=1e-12)

    def test_no_contraction(self):
        ph = analytic_phenotypes(_params(lv_es_scale=1.0, rv_es_scale=1.0))
        assert ph.lvsv == 0 and ph.lvef == 0 and ph.rvsv == 0 and ph.rvef == 0

    def test_identities_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            ph = analytic_phenotypes(sample_params(rng))
            for pre, (edv, esv) in {"lv": ("lvedv", "lvesv"), "rv": ("rvedv", "rvesv"),
                                    "la": ("lav_max", "lav_min"), "ra": ("rav_max", "rav_min")}.items():
                sv = getattr(ph, f"{pre}sv")
                ef = getattr(ph, f"{pre}ef")
                assert sv == getattr(ph, edv) - getattr(ph, esv)
                assert ef == 100.0 * sv / getattr(ph, edv)
                assert 0 < ef <= 100
            assert all(getattr(ph, f) > 0 for f in PHENOTYPE_FIELDS if not f.endswith("ef"))


class TestPhantomGeometry:
    """Voxel counts against the analytic volumes they approximate."""

    def test_voxel_volumes_within_five_percent(self):
        rng = np.random.default_rng(11)
        for _ in range(2):
            p = sample_params(rng)
            ph = analytic_phenotypes(p)
            ed = voxel_volumes(p, 0.0, 1.0)
            es = voxel_volumes(p, p.systole_fraction, 1.0)
            pairs = [(ed["LVBP"], ph.lvedv), (es["LVBP"], ph.lvesv), (ed["RVBP"], ph.rvedv),
                     (es["RVBP"], ph.rvesv), (ed["LABP"], ph.lav_min), (es["LABP"], ph.lav_max),
                     (ed["RABP"], ph.rav_min), (ed["LVMYO"], ph.lvm / 1.05)]
            for counted, exact in pairs:
                assert abs(counted - exact) / exact < 0.05

    def test_finer_voxels_tighten(self):
        p = sample_params(np.random.default_rng(2))
        exact = analytic_phenotypes(p).lvedv
        assert abs(voxel_volumes(p, 0.0, 0.5)["LVBP"] - exact) / exact < 0.02

    def test_ellipsoid_volume(self):
        assert ellipsoid_volume((1, 2, 3)) == pytest.approx(8 * math.pi)

    def test_thin_shell_rejected(self):
        with pytest.raises(PhantomError, match="thinner than voxel"):
            generate_phantom_subject(replace(_params(), myo_thickness=4.0), 0)

    def test_invalid_scale_rejected(self):
        with pytest.raises(PhantomError):
            generate_phantom_subject(replace(_params(), lv_es_scale=1.2), 0)

    def test_negative_noise_rejected(self):
        with pytest.raises(PhantomError):
            generate_phantom_subject(replace(_params(), noise=-0.1), 0)


class TestPhantomSubject:
    """Rendered stacks, masks and records."""

    def test_deterministic(self):
        a = generate_phantom_subject(_params(), 5)
        b = generate_phantom_subject(_params(), 5)
        assert a.stack.images.tobytes() == b.stack.images.tobytes()
        assert a.mask.labels.tobytes() == b.mask.labels.tobytes()
        np.testing.assert_array_equal(a.record.values, b.record.values)
        assert a.labels == b.labels and a.icd10 == b.icd10

    def test_shapes_and_ranges(self):
        s = generate_phantom_subject(_params(), 1)
        assert s.stack.images.shape == (9, 4, 32, 32)
        assert s.stack.images.shape == s.mask.labels.shape
        assert s.stack.images.min() >= 0 and s.stack.images.max() <= 1
        assert set(np.unique(s.mask.labels)) <= set(range(len(CLASSES)))
        assert s.stack.n_sa == 6 and s.stack.n_la == 3

    def test_atria_only_on_long_axis(self):
        s = generate_phantom_subject(_params(), 1)
        sa = s.mask.labels[:6]
        assert not np.isin(sa, [4, 5]).any()
        assert np.isin(s.mask.labels[6:], [4]).any()

    def test_noise_free_mask_is_iso_contour(self):
        s = generate_phantom_subject(replace(_params(), noise=0.0), 1)
        for img, lab in zip(s.stack.images.reshape(-1, 32, 32), s.mask.labels.reshape(-1, 32, 32)):
            levels = {}
            for c in np.unique(lab):
                vals = np.unique(img[lab == c])
                assert len(vals) == 1
                levels[c] = vals[0]
            assert len(set(levels.values())) == len(levels)

    def test_record_matches_schema(self, schema):
        s = generate_phantom_subject(_params(), 1, schema=schema)
        s.record.validate(schema)
        assert s.record.values[schema.index("LVEF (%)")] == pytest.approx(s.phenotypes.lvef)

    def test_disease_prevalence(self):
        rng = np.random.default_rng(0)
        flags = {d: 0 for d in DISEASES}
        n = 3000
        for _ in range(n):
            labels, codes = sample_disease(analytic_phenotypes(sample_params(rng)), rng)
            for d in DISEASES:
                flags[d] += labels[d]
            assert icd10_to_disease_labels(codes).cad == labels.cad
        for d in ("cad", "stroke", "hypertension", "high_blood_pressure", "diabetes"):
            assert 0.05 < flags[d] / n < 0.16, d


class TestAugment:
    """Geometric transforms hit image and mask alike; contrast hits the image only."""

    def _stack(self):
        rng = np.random.default_rng(0)
        img = rng.random((3, 2, 24, 24)).astype(np.float32)
        yy, xx = np.mgrid[:24, :24]
        disk = ((yy - 11.5) ** 2 + (xx - 11.5) ** 2 < 36).astype(np.uint8)
        lab = np.broadcast_to(disk * 2, (3, 2, 24, 24)).copy()
        return img, lab

    def test_identity(self):
        img, lab = self._stack()
        a, b = augment_subject(img, lab, AugmentConfig.identity(), 0)
        np.testing.assert_array_equal(a, img)
        np.testing.assert_array_equal(b, lab)

    def test_double_flip_identity(self):
        img, lab = self._stack()
        once, lab1 = augment_subject(img, lab, AugmentConfig(0.0, 1.0, (1.0, 1.0)), 0)
        twice, lab2 = augment_subject(once, lab1, AugmentConfig(0.0, 1.0, (1.0, 1.0)), 0)
        np.testing.assert_array_equal(twice, img)
        np.testing.assert_array_equal(lab2, lab)

    def test_rotation_preserves_label_counts(self):
        img, lab = self._stack()
        _, rot = augment_subject(img, lab, AugmentConfig(30.0, 0.0, (1.0, 1.0)), 3)
        assert set(np.unique(rot)) <= {0, 2}
        assert abs(int((rot == 2).sum()) - int((lab == 2).sum())) <= 0.02 * (lab == 2).sum()

    def test_contrast_image_only_and_clamped(self):
        img, lab = self._stack()
        a, b = augment_subject(img, lab, AugmentConfig(0.0, 0.0, (1.5, 1.5)), 0)
        np.testing.assert_array_equal(b, lab)
        np.testing.assert_allclose(a, np.clip(img * 1.5, 0, 1))

    def test_input_untouched(self):
        img, lab = self._stack()
        before = img.copy()
        augment_subject(img, lab, AugmentConfig(), 1)
        np.testing.assert_array_equal(img, before)


def _schema(*features):
    return TabularSchema(list(features))


class TestTabularNormalization:
    """Population z-scores fitted on one split, with mean/mode imputation."""

    def test_population_zscore(self):
        sch = _schema(Feature("a", NUMERICAL))
        out, stats = normalize_tabular([TabularRecord([v]) for v in (1.0, 2.0, 3.0)], sch)
        np.testing.assert_allclose([r.values[0] for r in out], [-1.2247449, 0.0, 1.2247449], atol=1e-6)
        assert stats.std[0] == pytest.approx(math.sqrt(2 / 3))

    def test_all_missing_feature_is_zero(self):
        sch = _schema(Feature("a", NUMERICAL), Feature("b", NUMERICAL))
        recs = [TabularRecord([v, 0.0], [False, True]) for v in (1.0, 4.0, 9.0)]
        out, _ = normalize_tabular(recs, sch)
        assert all(r.values[1] == 0.0 for r in out)

    def test_missing_numerical_imputed_to_mean(self):
        sch = _schema(Feature("a", NUMERICAL))
        recs = [TabularRecord([1.0]), TabularRecord([3.0]), TabularRecord([0.0], [True])]
        out, stats = normalize_tabular(recs, sch)
        assert out[2].values[0] == 0.0 and stats.mean[0] == 2.0

    def test_missing_categorical_uses_mode(self):
        sch = _schema(Feature("c", CATEGORICAL, 4), Feature("b", BINARY))
        recs = [TabularRecord([2, 1]), TabularRecord([2, 1]), TabularRecord([1, 0]),
                TabularRecord([0, 0], [True, True])]
        out, _ = normalize_tabular(recs, sch)
        np.testing.assert_array_equal(out[3].values, [2, 1])

    def test_zero_variance_clamped(self, caplog):
        sch = _schema(Feature("a", NUMERICAL))
        _, stats = normalize_tabular([TabularRecord([5.0])] * 3, sch)
        assert stats.std[0] == 1.0
        assert "zero variance" in caplog.text

    @given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=30))
    def test_inverse_round_trip(self, xs):
        sch = _schema(Feature("a", NUMERICAL))
        recs = [TabularRecord([x]) for x in xs]
        out, stats = normalize_tabular(recs, sch)
        back = denormalize_tabular(out, sch, stats)
        np.testing.assert_allclose([r.values[0] for r in back], xs, atol=1e-6, rtol=1e-9)

    def test_stats_only_from_fitting_split(self):
        sch = _schema(Feature("a", NUMERICAL))
        _, stats = normalize_tabular([TabularRecord([0.0]), TabularRecord([2.0])], sch)
        out, _ = normalize_tabular([TabularRecord([4.0])], sch, stats)
        assert out[0].values[0] == 3.0

    def test_category_out_of_range(self):
        sch = _schema(Feature("c", CATEGORICAL, 3))
        with pytest.raises(SchemaError):
            TabularRecord([3.0]).validate(sch)


class TestSchema:
    def test_shipped_schema_size(self, schema):
        assert len(schema) == 117
        kinds = [f.kind for f in schema.features]
        assert kinds.count(NUMERICAL) == 67 and kinds.count(BINARY) == 18
        assert len(set(schema.names)) == 117

    def test_round_trip(self, schema):
        again = TabularSchema.from_dict(json.loads(json.dumps(schema.to_dict())))
        assert again.fingerprint() == schema.fingerprint()


class TestIcd10:
    """Diagnosis codes to disease flags."""

    def test_infarct_code(self):
        lab = icd10_to_disease_labels({"I210"})
        assert lab.to_dict() == {"cad": 1, "infarct": 1, "stroke": 0, "hypertension": 0,
                                 "high_blood_pressure": 0, "diabetes": 0}

    def test_empty(self):
        assert sum(icd10_to_disease_labels(set()).to_dict().values()) == 0

    def test_hypertension(self):
        lab = icd10_to_disease_labels({"I10"})
        assert lab.hypertension == 1 and sum(lab.to_dict().values()) == 1

    def test_dotted_and_unknown_codes(self):
        lab = icd10_to_disease_labels({"i63.4", "Z999"})
        assert lab.stroke == 1 and sum(lab.to_dict().values()) == 1

    @given(st.sets(st.sampled_from(sorted(set().union(*ICD10_CODES.values())) + ["X00", "A01"])),
           st.sets(st.sampled_from(sorted(ICD10_CODES["diabetes"] | ICD10_CODES["cad"]))))
    def test_monotone(self, codes, extra):
        a = icd10_to_disease_labels(codes).to_dict()
        b = icd10_to_disease_labels(codes | extra).to_dict()
        assert all(b[d] >= a[d] for d in a)


@pytest.fixture(scope="module")
def cohort(schema):
    return generate_cohort(2, 1, PhantomConfig(crop=16, frames=5, n_sa=2, n_la=1), schema)


class TestDatasetIO:
    """On-disk layout round trips and corruption handling."""

    def test_round_trip_bit_exact(self, tmp_path, schema, cohort):
        write_dataset(cohort, tmp_path / "ds", schema)
        ds = read_dataset(tmp_path / "ds")
        for a, b in zip(cohort, ds.subjects):
            assert a.id == b.id
            assert a.stack.images.tobytes() == b.stack.images.tobytes()
            assert a.mask.labels.tobytes() == b.mask.labels.tobytes()
            np.testing.assert_array_equal(a.record.values, b.record.values)
            np.testing.assert_array_equal(a.record.missing, b.record.missing)
            assert a.phenotypes == b.phenotypes and a.labels == b.labels
            assert a.params == b.params and a.stack.planes == b.stack.planes

    def test_files_identical_across_writes(self, tmp_path, schema, cohort):
        write_dataset(cohort, tmp_path / "a", schema)
        write_dataset(generate_cohort(2, 1, PhantomConfig(crop=16, frames=5, n_sa=2, n_la=1), schema),
                      tmp_path / "b", schema)
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_truncated_blob(self, tmp_path, schema, cohort):
        root = write_dataset(cohort, tmp_path / "ds", schema)
        blob = root / "subjects" / cohort[0].id / "images.f32"
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(DatasetError, match="images.f32"):
            read_dataset(root)

    def test_empty_dataset(self, tmp_path, schema):
        write_dataset([], tmp_path / "ds", schema)
        ds = read_dataset(tmp_path / "ds")
        assert isinstance(ds, Dataset) and len(ds) == 0

    def test_version_mismatch(self, tmp_path, schema, cohort):
        root = write_dataset(cohort, tmp_path / "ds", schema)
        meta = root / "schema.json"
        d = json.loads(meta.read_text())
        d["format_version"] = 99
        meta.write_text(json.dumps(d))
        with pytest.raises(DatasetError, match="version"):
            read_dataset(root)

    def test_schema_mismatch(self, tmp_path, schema, cohort):
        root = write_dataset(cohort, tmp_path / "ds", schema)
        small = TabularSchema(schema.features[:10])
        (root / "schema.json").write_text(json.dumps({"format_version": 1, **small.to_dict()}))
        with pytest.raises(DatasetError, match="schema"):
            read_dataset(root)
