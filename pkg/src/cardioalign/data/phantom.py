"""Synthetic cine cardiac phantom with analytic ground truth.

Each chamber is an ellipsoid whose semi-axes scale over the cardiac cycle.
Planes are cut through the ellipsoids at pixel centres, so masks are exact
rasterizations of the same geometry the phenotypes are computed from.

Heart frame: z runs along the left-ventricular long axis (apex at -z, base
towards +z), x points from the right to the left ventricle. Lengths in mm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .icd10 import ICD10_CODES, DiseaseLabels, icd10_to_disease_labels
from .schema import TabularRecord, TabularSchema, default_schema

CLASSES = ("background", "LVBP", "LVMYO", "RVBP", "LABP", "RABP")
BACKGROUND, LVBP, LVMYO, RVBP, LABP, RABP = range(6)
MYOCARDIAL_DENSITY = 1.05  # g/mL


class PhantomError(ValueError):
    """Invalid or degenerate phantom geometry."""


# ---------------------------------------------------------------------------
# containers

@dataclass
class PlaneMeta:
    view: str  # "SA" | "LA"
    index: int
    position: float
    origin: tuple[float, float, float]
    u: tuple[float, float, float]
    v: tuple[float, float, float]


@dataclass
class CmrStack:
    """Planes × frames × H × W intensities in [0, 1]."""

    images: np.ndarray
    planes: list[PlaneMeta]
    spacing: float

    @property
    def n_sa(self) -> int:
        return sum(p.view == "SA" for p in self.planes)

    @property
    def n_la(self) -> int:
        return sum(p.view == "LA" for p in self.planes)

    @property
    def views(self) -> np.ndarray:
        return np.array([p.view == "LA" for p in self.planes], dtype=np.int64)


@dataclass
class SegMask:
    labels: np.ndarray  # uint8, same shape as CmrStack.images


PHENOTYPE_FIELDS = (
    "lvedv", "lvesv", "lvsv", "lvef", "lvco", "lvm",
    "rvedv", "rvesv", "rvsv", "rvef",
    "lav_max", "lav_min", "lasv", "laef",
    "rav_max", "rav_min", "rasv", "raef",
)
# the 17 reported phenotypes, in reporting order, with display names
APPENDIX_PHENOTYPES = {
    "lvedv": "LVEDV (mL)", "lvsv": "LVSV (mL)", "lvef": "LVEF (%)", "lvco": "LVCO (L/min)",
    "lvm": "LVM (g)", "rvedv": "RVEDV (mL)", "rvesv": "RVESV (mL)", "rvsv": "RVSV (mL)",
    "rvef": "RVEF (%)", "lav_max": "LAV max (mL)", "lav_min": "LAV min (mL)",
    "lasv": "LASV (mL)", "laef": "LAEF (%)", "rav_max": "RAV max (mL)",
    "rav_min": "RAV min (mL)", "rasv": "RASV (mL)", "raef": "RAEF (%)",
}


@dataclass
class PhenotypeSet:
    """Volumes in mL, EF in %, cardiac output in L/min, mass in g."""

    lvedv: float
    lvesv: float
    lvsv: float
    lvef: float
    lvco: float
    lvm: float
    rvedv: float
    rvesv: float
    rvsv: float
    rvef: float
    lav_max: float
    lav_min: float
    lasv: float
    laef: float
    rav_max: float
    rav_min: float
    rasv: float
    raef: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def vector(self, names=tuple(APPENDIX_PHENOTYPES)) -> np.ndarray:
        return np.array([getattr(self, n) for n in names], dtype=np.float64)


@dataclass
class Subject:
    id: str
    stack: CmrStack
    mask: SegMask
    record: TabularRecord
    phenotypes: PhenotypeSet
    labels: DiseaseLabels
    icd10: list[str] = field(default_factory=list)
    seed: int = 0
    params: "PhantomParams | None" = None


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class PhantomParams:
    lv_center: tuple[float, float, float]
    lv_axes: tuple[float, float, float]
    myo_thickness: float
    rv_center: tuple[float, float, float]
    rv_axes: tuple[float, float, float]
    la_center: tuple[float, float, float]
    la_axes: tuple[float, float, float]
    ra_center: tuple[float, float, float]
    ra_axes: tuple[float, float, float]
    lv_es_scale: float = 0.78
    rv_es_scale: float = 0.80
    la_min_scale: float = 0.75
    ra_min_scale: float = 0.78
    ed_scale: float = 1.0
    heart_rate: float = 68.0
    systole_fraction: float = 0.4
    noise: float = 0.05
    intensities: tuple[float, ...] = (0.10, 0.85, 0.30, 0.80, 0.70, 0.65)
    spacing_mm: float = 160 / 128
    crop: int = 128
    frames: int = 50
    n_sa: int = 6
    n_la: int = 3
    sa_span: float = 0.75

    def validate(self) -> None:
        for name in ("lv_axes", "rv_axes", "la_axes", "ra_axes"):
            if min(getattr(self, name)) <= 0:
                raise PhantomError(f"{name} must be positive")
        for name in ("lv_es_scale", "rv_es_scale", "la_min_scale", "ra_min_scale"):
            s = getattr(self, name)
            if not 0 < s <= 1:
                raise PhantomError(f"{name}={s} outside (0, 1]")
        if self.ed_scale != 1.0:
            raise PhantomError("ed_scale is the reference phase and must be 1")
        if self.myo_thickness <= 0:
            raise PhantomError("myocardial thickness must be positive")
        if self.myo_thickness < self.spacing_mm:
            raise PhantomError(
                f"myocardial shell {self.myo_thickness:.2f} mm thinner than voxel {self.spacing_mm:.2f} mm")
        if self.noise < 0:
            raise PhantomError("noise level must be >= 0")
        if len(self.intensities) != len(CLASSES):
            raise PhantomError("one intensity level per tissue class required")
        if self.n_sa < 1 or self.n_la < 1 or self.frames < 1 or self.crop < 1:
            raise PhantomError("need at least one SA plane, one LA plane, one frame and one pixel")
        if not 0 < self.systole_fraction < 1:
            raise PhantomError("systole_fraction must lie in (0, 1)")
        boxes = {k: _bbox(c, a) for k, (c, a) in self._chambers().items()}
        names = list(boxes)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                if _boxes_overlap(boxes[a], boxes[b]):
                    raise PhantomError(f"chambers {a} and {b} overlap")

    def _chambers(self) -> dict:
        lv_outer = tuple(a + self.myo_thickness for a in self.lv_axes)
        return {"LV": (self.lv_center, lv_outer), "RV": (self.rv_center, self.rv_axes),
                "LA": (self.la_center, self.la_axes), "RA": (self.ra_center, self.ra_axes)}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomParams":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                kw[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


def _bbox(center, axes):
    c, a = np.asarray(center, float), np.asarray(axes, float)
    return c - a, c + a


def _boxes_overlap(a, b) -> bool:
    return bool(np.all(a[0] < b[1]) and np.all(b[0] < a[1]))


@dataclass(frozen=True)
class PhantomConfig:
    """Cohort-level rendering settings; per-subject anatomy is sampled."""

    crop: int = 128
    frames: int = 50
    n_sa: int = 6
    n_la: int = 3
    fov_mm: float = 160.0
    noise: float = 0.05
    positive_rate: float = 0.10


def build_params(lv_axes, myo_thickness, rv_axes, la_axes, ra_axes, gap: float = 3.0,
                 **kw) -> PhantomParams:
    """Place chambers side by side (RV left of LV, atria above) and centre the heart."""
    th = myo_thickness
    lv = np.zeros(3)
    left_edge = max(lv_axes[0] + th, la_axes[0]) + gap
    rv = np.array([-(left_edge + rv_axes[0]), 0.0, 0.0])
    la = np.array([0.0, 0.0, lv_axes[2] + th + la_axes[2] + gap])
    ra = np.array([min(rv[0], -(left_edge + ra_axes[0])), 0.0, rv_axes[2] + ra_axes[2] + gap])
    xmin, xmax = min(rv[0] - rv_axes[0], ra[0] - ra_axes[0]), max(lv_axes[0] + th, la_axes[0])
    zmin = -(lv_axes[2] + th)
    zmax = max(la[2] + la_axes[2], ra[2] + ra_axes[2])
    shift = np.array([(xmin + xmax) / 2, 0.0, (zmin + zmax) / 2])
    t = lambda p: tuple(float(x) for x in (p - shift))  # noqa: E731
    return PhantomParams(
        lv_center=t(lv), lv_axes=tuple(map(float, lv_axes)), myo_thickness=float(th),
        rv_center=t(rv), rv_axes=tuple(map(float, rv_axes)),
        la_center=t(la), la_axes=tuple(map(float, la_axes)),
        ra_center=t(ra), ra_axes=tuple(map(float, ra_axes)), **kw)


def sample_params(rng: np.random.Generator, cfg: PhantomConfig = PhantomConfig()) -> PhantomParams:
    k = float(np.clip(rng.normal(1.0, 0.06), 0.85, 1.15))

    def jitter(base, sd=0.05):
        return tuple(float(b * k * np.clip(1 + rng.normal(0, sd), 0.88, 1.12)) for b in base)

    spacing = cfg.fov_mm / cfg.crop
    th = float(np.clip(7.0 * k * (1 + rng.normal(0, 0.1)), 5.0, 10.0))
    th = max(th, spacing * 1.05)
    return build_params(
        lv_axes=jitter((27, 27, 40)), myo_thickness=th, rv_axes=jitter((22, 32, 45)),
        la_axes=jitter((24, 24, 22)), ra_axes=jitter((22, 22, 22)),
        lv_es_scale=float(np.clip(rng.normal(0.78, 0.05), 0.62, 0.95)),
        rv_es_scale=float(np.clip(rng.normal(0.80, 0.05), 0.62, 0.95)),
        la_min_scale=float(np.clip(rng.normal(0.75, 0.05), 0.6, 0.92)),
        ra_min_scale=float(np.clip(rng.normal(0.78, 0.05), 0.6, 0.92)),
        heart_rate=float(np.clip(rng.normal(68, 10), 45, 110)),
        noise=cfg.noise, spacing_mm=spacing, crop=cfg.crop, frames=cfg.frames,
        n_sa=cfg.n_sa, n_la=cfg.n_la)


# ---------------------------------------------------------------------------
# cycle and geometry

def _contraction(phase, systole_fraction):
    # raised cosine: 0 at ED (phase 0), 1 at ES (phase = systole_fraction)
    ph = np.mod(np.asarray(phase, dtype=np.float64), 1.0)
    f = systole_fraction
    return np.where(ph < f, 0.5 * (1 - np.cos(np.pi * ph / f)),
                    0.5 * (1 + np.cos(np.pi * (ph - f) / (1 - f))))


def chamber_scales(params: PhantomParams, phase) -> dict[str, np.ndarray]:
    w = _contraction(phase, params.systole_fraction)
    return {
        "LV": 1 - (1 - params.lv_es_scale) * w,
        "RV": 1 - (1 - params.rv_es_scale) * w,
        # atria fill while the ventricles empty
        "LA": params.la_min_scale + (1 - params.la_min_scale) * w,
        "RA": params.ra_min_scale + (1 - params.ra_min_scale) * w,
    }


def plane_geometry(params: PhantomParams) -> list[PlaneMeta]:
    planes = []
    lv = np.asarray(params.lv_center)
    c = params.lv_axes[2]
    zs = lv[2] + c * np.linspace(-params.sa_span, params.sa_span, params.n_sa)
    for i, z in enumerate(zs):
        planes.append(PlaneMeta("SA", i, float(z), (0.0, 0.0, float(z)), (1.0, 0.0, 0.0),
                                (0.0, 1.0, 0.0)))
    for j in range(params.n_la):
        theta = math.pi * j / params.n_la
        u = np.array([math.cos(theta), math.sin(theta), 0.0])
        # plane contains the LV long axis; centred as close to the heart centre as it allows
        origin = np.array([lv[0], lv[1], 0.0]) - (lv[0] * u[0] + lv[1] * u[1]) * u
        planes.append(PlaneMeta("LA", params.n_sa + j, float(math.degrees(theta)),
                                tuple(map(float, origin)), tuple(map(float, u)), (0.0, 0.0, 1.0)))
    return planes


def plane_points(plane: PlaneMeta, size: int, spacing: float) -> np.ndarray:
    """Pixel-centre coordinates, shape (size, size, 3); rows follow v, columns follow u."""
    off = (np.arange(size) - (size - 1) / 2) * spacing
    o, u, v = (np.asarray(a, dtype=np.float64) for a in (plane.origin, plane.u, plane.v))
    return o + off[None, :, None] * u + off[:, None, None] * v


def _inside(points, center, axes) -> np.ndarray:
    # points (N, 3); axes (T, 3) -> (T, N)
    d = (points[None, :, :] - np.asarray(center)[None, None, :]) / axes[:, None, :]
    return np.einsum("tnk,tnk->tn", d, d) <= 1.0


def label_points(points: np.ndarray, params: PhantomParams, phase) -> np.ndarray:
    """Tissue class at each point for each phase; returns (T, *points.shape[:-1]) uint8."""
    phase = np.atleast_1d(np.asarray(phase, dtype=np.float64))
    shp = points.shape[:-1]
    pts = points.reshape(-1, 3)
    s = chamber_scales(params, phase)
    lv_in = np.asarray(params.lv_axes)[None, :] * s["LV"][:, None]
    lab = np.zeros((len(phase), len(pts)), dtype=np.uint8)
    # later assignments win; chambers are disjoint by construction
    for cls, center, axes in (
        (RABP, params.ra_center, np.asarray(params.ra_axes)[None, :] * s["RA"][:, None]),
        (LABP, params.la_center, np.asarray(params.la_axes)[None, :] * s["LA"][:, None]),
        (RVBP, params.rv_center, np.asarray(params.rv_axes)[None, :] * s["RV"][:, None]),
        (LVMYO, params.lv_center, lv_in + params.myo_thickness),
        (LVBP, params.lv_center, lv_in),
    ):
        lab[_inside(pts, center, axes)] = cls
    return lab.reshape(len(phase), *shp)


def render_labels(params: PhantomParams, planes: list[PlaneMeta] | None = None) -> np.ndarray:
    planes = plane_geometry(params) if planes is None else planes
    phases = np.arange(params.frames) / params.frames
    out = np.empty((len(planes), params.frames, params.crop, params.crop), dtype=np.uint8)
    for i, pl in enumerate(planes):
        out[i] = label_points(plane_points(pl, params.crop, params.spacing_mm), params, phases)
    return out


def normalize_intensity(plane: np.ndarray, lo_pct: float = 1.0, hi_pct: float = 99.0) -> np.ndarray:
    """Clip to the [lo, hi] percentile range of the plane and rescale to [0, 1]."""
    lo, hi = np.percentile(plane, [lo_pct, hi_pct])
    if hi <= lo:
        return np.zeros_like(plane, dtype=np.float32)
    return ((np.clip(plane, lo, hi) - lo) / (hi - lo)).astype(np.float32)


def render_images(labels: np.ndarray, params: PhantomParams, rng: np.random.Generator) -> np.ndarray:
    levels = np.asarray(params.intensities, dtype=np.float64)
    raw = levels[labels]
    if params.noise > 0:
        raw = raw + rng.normal(0.0, params.noise, size=raw.shape)
    return np.stack([normalize_intensity(p) for p in raw])


# ---------------------------------------------------------------------------
# phenotypes

def ellipsoid_volume(axes) -> float:
    a, b, c = axes
    return 4.0 / 3.0 * math.pi * a * b * c


def _cycle_volume(axes, scale) -> float:
    return ellipsoid_volume(axes) * scale ** 3 / 1000.0  # mL


def analytic_phenotypes(params: PhantomParams) -> PhenotypeSet:
    p = params

    def pair(axes, es):
        edv, esv = _cycle_volume(axes, 1.0), _cycle_volume(axes, es)
        sv = edv - esv
        return edv, esv, sv, 100.0 * sv / edv

    lvedv, lvesv, lvsv, lvef = pair(p.lv_axes, p.lv_es_scale)
    rvedv, rvesv, rvsv, rvef = pair(p.rv_axes, p.rv_es_scale)
    outer = tuple(a + p.myo_thickness for a in p.lv_axes)
    lvm = MYOCARDIAL_DENSITY * (ellipsoid_volume(outer) - ellipsoid_volume(p.lv_axes)) / 1000.0
    lav_max, lav_min, lasv, laef = pair(p.la_axes, p.la_min_scale)
    rav_max, rav_min, rasv, raef = pair(p.ra_axes, p.ra_min_scale)
    return PhenotypeSet(
        lvedv=lvedv, lvesv=lvesv, lvsv=lvsv, lvef=lvef, lvco=lvsv * p.heart_rate / 1000.0, lvm=lvm,
        rvedv=rvedv, rvesv=rvesv, rvsv=rvsv, rvef=rvef,
        lav_max=lav_max, lav_min=lav_min, lasv=lasv, laef=laef,
        rav_max=rav_max, rav_min=rav_min, rasv=rasv, raef=raef)


def voxel_volumes(params: PhantomParams, phase: float = 0.0, voxel_mm: float = 1.0) -> dict[str, float]:
    """Count labelled voxels on a dense short-axis stack (mL per class).

    The stack is cut with the same plane renderer as the training masks, at
    isotropic ``voxel_mm`` spacing, covering every chamber.
    """
    boxes = [_bbox(c, a) for c, a in params._chambers().values()]
    lo = np.min([b[0] for b in boxes], axis=0) - 2 * voxel_mm
    hi = np.max([b[1] for b in boxes], axis=0) + 2 * voxel_mm
    half = float(np.max(np.maximum(np.abs(lo[:2]), np.abs(hi[:2]))))
    size = int(math.ceil(2 * half / voxel_mm)) + 1
    counts = np.zeros(len(CLASSES), dtype=np.int64)
    for z in np.arange(lo[2], hi[2] + voxel_mm, voxel_mm):
        pl = PlaneMeta("SA", 0, float(z), (0.0, 0.0, float(z)), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0))
        lab = label_points(plane_points(pl, size, voxel_mm), params, phase)[0]
        counts += np.bincount(lab.ravel(), minlength=len(CLASSES))
    vol = counts * voxel_mm ** 3 / 1000.0
    return {name: float(v) for name, v in zip(CLASSES, vol)}


# ---------------------------------------------------------------------------
# labels and tabular record

EF_MEAN, EF_SD = 52.0, 9.2
# intercepts put each flag near 10% positives (infarct ~3%, folded into CAD)
_DISEASE_MODEL = {
    # name: (intercept, EF slope)
    "cad": (-3.74, 2.0),
    "infarct": (-5.29, 2.0),
    "stroke": (-2.73, 1.2),
    "hypertension": (-2.73, 1.2),
    "high_blood_pressure": (-2.73, 1.2),
    "diabetes": (-2.73, 1.2),
}


def sample_disease(phenotypes: PhenotypeSet, rng: np.random.Generator,
                   positive_rate: float = 0.10) -> tuple[DiseaseLabels, list[str]]:
    """Latent conditions from a logistic function of LVEF, emitted as ICD-10 codes."""
    z = (EF_MEAN - phenotypes.lvef) / EF_SD
    shift = math.log(positive_rate / 0.9) - math.log(0.1 / 0.9)
    state = {}
    for name, (b0, slope) in _DISEASE_MODEL.items():
        p = 1.0 / (1.0 + math.exp(-(b0 + shift + slope * z)))
        state[name] = bool(rng.random() < p)
    codes: list[str] = []
    plain_cad = sorted(ICD10_CODES["cad"] - ICD10_CODES["infarct"])
    if state["infarct"]:
        codes.append(str(rng.choice(sorted(ICD10_CODES["infarct"]))))
    if state["cad"]:
        codes.append(str(rng.choice(plain_cad)))
    for name in ("stroke", "hypertension", "diabetes"):
        if state[name]:
            codes.append(str(rng.choice(sorted(ICD10_CODES[name]))))
    labels = icd10_to_disease_labels(codes)
    labels.high_blood_pressure = int(state["high_blood_pressure"])
    return labels, codes


# (mean, sd, lower bound) for numerical fields without a dedicated generator
_GENERIC = {
    "Pulse wave Arterial Stiffness index": (9.5, 3.0, 2.0),
    "Body fat percentage": (30.0, 7.0, 5.0),
    "Cooked vegetable intake": (3.0, 1.5, 0.0),
    "Salad / raw vegetable intake": (2.5, 1.5, 0.0),
    "Cardiac operations performed": (0.1, 0.3, 0.0),
    "Impedance of whole body": (550.0, 70.0, 300.0),
    "P duration": (105.0, 12.0, 60.0),
    "QRS duration": (90.0, 10.0, 60.0),
    "PQ interval": (160.0, 22.0, 90.0),
    "Duration of walks": (45.0, 25.0, 0.0),
    "Duration of moderate activity": (40.0, 30.0, 0.0),
    "Duration of vigorous activity": (25.0, 20.0, 0.0),
    "Time spent watching television (TV)": (2.5, 1.3, 0.0),
    "Time spent using computer": (1.2, 1.0, 0.0),
    "Time spent driving": (0.9, 0.8, 0.0),
    "Number of beats in waveform average for PWA": (8.0, 2.0, 2.0),
    "Central augmentation pressure during PWA": (9.0, 5.0, -5.0),
    "Augmentation index for PWA": (22.0, 10.0, -10.0),
    "End systolic pressure index during PWA": (40.0, 6.0, 20.0),
    "Sleep duration": (7.1, 1.0, 3.0),
    "Exposure to tobacco smoke at home": (0.3, 1.5, 0.0),
    "Exposure to tobacco smoke outside home": (0.8, 2.0, 0.0),
    "Pack years of smoking": (8.0, 10.0, 0.0),
    "Pack years adult smoking as proportion of life span exposed to smoking": (0.1, 0.12, 0.0),
}

_BINARY_PREVALENCE = {
    "Worrier / anxious feelings": 0.45, "Shortness of breath walking on level ground": 0.05,
    "Angina diagnosed by doctor": 0.04, "Cholesterol lowering medication regularly taken": 0.15,
    "Blood pressure medication regularly taken": 0.15, "Insulin medication regularly taken": 0.01,
    "Hormone replacement therapy medication regularly taken": 0.05,
    "Oral contraceptive pill or minipill medication regularly taken": 0.02, "Pace-maker": 0.01,
    "Long-standing illness, disability or infirmity": 0.3, "Tense / 'highly strung'": 0.15,
    "Ever smoked": 0.55,
}

_NEVER_MISSING = {"Sex"}


def synthesize_tabular(params: PhantomParams, ph: PhenotypeSet, labels: DiseaseLabels,
                       rng: np.random.Generator, schema: TabularSchema | None = None,
                       missing_rate: float = 0.05) -> TabularRecord:
    """Fill one record: cardiac fields from the phantom, anthropometrics scaled with
    heart size, disease-linked binaries from ``labels``, everything else seeded noise."""
    schema = default_schema() if schema is None else schema
    n = rng.normal
    k = (ellipsoid_volume(params.lv_axes) / ellipsoid_volume((27, 27, 40))) ** (1 / 3)
    sex = int(rng.random() < 0.5)
    height = 168 + 9 * sex + 120 * (k - 1) + n(0, 5)
    bmi = 26.5 + 2.0 * labels.diabetes + n(0, 3.5)
    weight = bmi * (height / 100) ** 2
    bsa = math.sqrt(height * weight / 3600)
    hr = params.heart_rate
    sbp = 132 + 14 * labels.high_blood_pressure + 8 * labels.hypertension + n(0, 12)
    dbp = 80 + 0.3 * (sbp - 132) + n(0, 7)
    fat_pct = float(np.clip(30 - 8 * sex + 0.8 * (bmi - 26.5) + n(0, 4), 5, 60))
    fat_mass = weight * fat_pct / 100
    sv_pwa = ph.lvsv + n(0, 8)
    values = {
        "Systolic blood pressure (mean)": sbp,
        "Diastolic blood pressure (mean)": dbp,
        "Pulse rate (mean)": hr + n(0, 3),
        "Body fat percentage": fat_pct,
        "Whole body fat mass": fat_mass,
        "Whole body fat-free mass": weight - fat_mass,
        "Whole body water mass": 0.73 * (weight - fat_mass),
        "Body mass index (BMI)": bmi,
        "Total mass": weight + n(0, 0.5),
        "Basal metabolic rate": 370 + 21.6 * (weight - fat_mass) + n(0, 50),
        "Waist circumference": 0.9 * weight + 20 + n(0, 6),
        "Hip circumference": 0.5 * weight + 66 + n(0, 5),
        "Standing height": height + n(0, 0.5),
        "Height": height,
        "Sitting height": 0.52 * height + n(0, 2),
        "Weight": weight,
        "Ventricular rate": hr + n(0, 2),
        "RR interval": 60000 / hr + n(0, 15),
        "PP interval": 60000 / hr + n(0, 15),
        "Cardiac output": ph.lvco + n(0, 0.3),
        "Cardiac index": ph.lvco / bsa + n(0, 0.15),
        "Average heart rate": hr + n(0, 2),
        "Body surface area": bsa,
        "Heart rate during PWA": hr + n(0, 3),
        "Systolic brachial blood pressure during PWA": sbp + n(0, 5),
        "Diastolic brachial blood pressure during PWA": dbp + n(0, 4),
        "Peripheral pulse pressure during PWA": sbp - dbp + n(0, 4),
        "Central systolic blood pressure during PWA": sbp - 10 + n(0, 5),
        "Central pulse pressure during PWA": sbp - dbp - 10 + n(0, 4),
        "Cardiac output during PWA": sv_pwa * hr / 1000,
        "End systolic pressure during PWA": sbp - 15 + n(0, 6),
        "Stroke volume during PWA": sv_pwa,
        "Mean arterial pressure during PWA": dbp + (sbp - dbp) / 3 + n(0, 3),
        "Cardiac index during PWA": sv_pwa * hr / 1000 / bsa,
        "LVEDV (mL)": ph.lvedv, "LVESV (mL)": ph.lvesv, "LVSV (mL)": ph.lvsv,
        "LVEF (%)": ph.lvef, "LVCO (L/min)": ph.lvco, "LVM (g)": ph.lvm,
        "RVEDV (mL)": ph.rvedv, "RVESV (mL)": ph.rvesv, "RVSV (mL)": ph.rvsv,
        "RVEF (%)": ph.rvef,
        "Sex": sex,
        "Diabetes diagnosis": labels.diabetes,
        "Ever had diabetes (Type I or Type II)": labels.diabetes,
        "Heart attack diagnosed by doctor": labels.infarct,
        "Stroke diagnosed by doctor": labels.stroke,
        "High blood pressure diagnosed by doctor": labels.high_blood_pressure,
    }
    vals = np.zeros(len(schema))
    missing = np.zeros(len(schema), dtype=bool)
    for i, f in enumerate(schema.features):
        if f.name in values:
            v = values[f.name]
        elif f.kind == "numerical":
            mu, sd, lo = _GENERIC.get(f.name, (0.0, 1.0, -np.inf))
            v = max(mu + sd * n(), lo)
        elif f.kind == "binary":
            v = int(rng.random() < _BINARY_PREVALENCE.get(f.name, 0.2))
        else:
            # skewed towards low levels, like most frequency questionnaires
            w = 1.0 / (1 + np.arange(f.cardinality))
            v = int(rng.choice(f.cardinality, p=w / w.sum()))
        vals[i] = v
        if f.name not in _NEVER_MISSING and not f.name.endswith(("(mL)", "(%)", "(g)", "(L/min)")):
            missing[i] = rng.random() < missing_rate
    vals[missing] = 0.0
    return TabularRecord(vals, missing)


# ---------------------------------------------------------------------------
# subject generation

def generate_phantom_subject(params: PhantomParams, seed: int, subject_id: str = "0",
                             schema: TabularSchema | None = None,
                             positive_rate: float = 0.10) -> Subject:
    params.validate()
    rng = np.random.default_rng(seed)
    planes = plane_geometry(params)
    labels_img = render_labels(params, planes)
    images = render_images(labels_img, params, rng)
    ph = analytic_phenotypes(params)
    disease, codes = sample_disease(ph, rng, positive_rate)
    record = synthesize_tabular(params, ph, disease, rng, schema)
    stack = CmrStack(images, planes, params.spacing_mm)
    return Subject(subject_id, stack, SegMask(labels_img), record, ph, disease, codes, int(seed), params)


def generate_cohort(n: int, seed: int, cfg: PhantomConfig = PhantomConfig(),
                    schema: TabularSchema | None = None, start: int = 0) -> list[Subject]:
    schema = default_schema() if schema is None else schema
    out = []
    for i in range(start, start + n):
        ss = np.random.SeedSequence([seed, i])
        prng, srng = (np.random.default_rng(s) for s in ss.spawn(2))
        params = sample_params(prng, cfg)
        subj_seed = int(srng.integers(2 ** 31))
        out.append(generate_phantom_subject(params, subj_seed, f"{i:05d}", schema, cfg.positive_rate))
    return out


def with_noise(params: PhantomParams, noise: float) -> PhantomParams:
    return replace(params, noise=noise)
