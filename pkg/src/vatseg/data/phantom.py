"""Deterministic synthetic water-fat abdomen phantoms with exact ground truth.

Each transverse slice is built from nested ellipses: the body outline, a
thin lean skin layer, a subcutaneous fat ring (SAT) of angle-dependent thickness, a lean abdominal
wall, and the abdominal cavity. Visceral fat (VAT) is the union of
ellipsoidal blobs clipped to the cavity, with a lean disk standing in for the
spine (fat around the spinal column is not VAT). Signals are piecewise
constant per tissue plus Gaussian noise; the fat fraction is derived from the
noisy signals and clamped so that labelled fat sits at or above 0.5 and lean
tissue below it. Small gas pockets inside the cavity carry almost no signal,
so their fat fraction is uniform noise, as in real bowel gas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .manifest import ManifestRecord, body_mask_path, write_manifest
from .volume import DEFAULT_SPACING, LabelMask, Volume, write_volume

LEAN_FF_MAX = float(np.nextafter(np.float32(0.5), np.float32(0)))

# tissue signal levels (water, fat) before gain and noise
_FAT = (0.08, 0.92)
_LEAN = (0.78, 0.08)
_SPINE = (0.55, 0.05)


@dataclass(frozen=True)
class PhantomParams:
    """Generator settings. Lengths are fractions of the mean in-plane half extent."""

    seed: int = 0
    dims: Tuple[int, int, int] = (12, 64, 64)
    spacing: Tuple[float, float, float] = DEFAULT_SPACING
    body_axes: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.62, 0.76), (0.80, 0.90))
    skin_thickness: float = 0.04
    sat_thickness: Tuple[float, float] = (0.10, 0.22)
    sat_modulation: float = 0.3
    wall_thickness: float = 0.09
    vat_blobs: Tuple[int, int] = (6, 10)
    vat_blob_size: Tuple[float, float] = (0.12, 0.24)
    vat_blob_depth: Tuple[float, float] = (0.25, 0.6)
    gas_pockets: Tuple[int, int] = (3, 6)
    gas_size: Tuple[float, float] = (0.06, 0.14)
    spine_radius: float = 0.12
    spine_offset: float = 0.55
    z_taper: float = 0.08
    signal_noise: float = 0.03
    ff_noise: float = 0.02
    background_noise: float = 0.05
    include_background_noise: bool = False
    gain: Tuple[float, float] = (400.0, 1200.0)
    slice_falloff: float = 0.35

    def validate(self) -> None:
        d, h, w = self.dims
        if min(self.dims) < 1 or h < 16 or w < 16:
            raise ValueError(f"dims {self.dims}: need depth >= 1 and height, width >= 16")
        if any(not s > 0 for s in self.spacing):
            raise ValueError(f"spacing {self.spacing}: components must be > 0")
        if not 0 <= self.gas_pockets[0] <= self.gas_pockets[1]:
            raise ValueError(f"gas_pockets: need 0 <= min <= max, got {self.gas_pockets}")
        for name in ("sat_thickness", "vat_blobs", "vat_blob_size", "vat_blob_depth", "gas_size", "gain"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} > max {hi}")
            if lo <= 0:
                raise ValueError(f"{name}: values must be > 0, got {lo}")
        for axis, (lo, hi) in zip(("body_axes[y]", "body_axes[x]"), self.body_axes):
            if not 0 < lo <= hi < 1:
                raise ValueError(f"{axis}: need 0 < min <= max < 1, got ({lo}, {hi})")
        if not 0 <= self.sat_modulation < 1:
            raise ValueError(f"sat_modulation must lie in [0, 1), got {self.sat_modulation}")
        if self.skin_thickness < 0:
            raise ValueError(f"skin_thickness must be >= 0, got {self.skin_thickness}")
        if not self.wall_thickness > 0:
            raise ValueError("wall_thickness must be > 0 (VAT must stay inside the abdominal wall)")
        if not self.spine_radius > 0:
            raise ValueError("spine_radius must be > 0")
        if not 0 <= self.z_taper < 0.5:
            raise ValueError(f"z_taper must lie in [0, 0.5), got {self.z_taper}")
        if not 0 <= self.slice_falloff < 1:
            raise ValueError(f"slice_falloff must lie in [0, 1), got {self.slice_falloff}")
        for name in ("signal_noise", "ff_noise", "background_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        # the thinnest cavity (smallest body, thickest ring, strongest taper) must hold the spine
        half = (h + w) / 4
        min_minor = min(self.body_axes[0][0], self.body_axes[1][0]) * half * (1 - self.z_taper)
        sat_max = self.sat_thickness[1] * half * (1 + self.sat_modulation)
        cavity = min_minor - (self.skin_thickness + self.wall_thickness) * half - sat_max
        spine_extent = (self.spine_offset + self.spine_radius) * cavity
        if cavity < 2.0:
            raise ValueError(
                f"skin, SAT ring and abdominal wall leave a cavity of {cavity:.2f} voxels; need >= 2")
        if spine_extent >= cavity:
            raise ValueError("spine disk does not fit inside the abdominal cavity")


@dataclass
class Blob:
    z: float
    y: float
    x: float
    rz: float
    ry: float
    rx: float


@dataclass
class PhantomGeometry:
    """Concrete voxel-unit geometry for one scan (all in-plane offsets from the body center)."""

    dims: Tuple[int, int, int]
    center: Tuple[float, float]
    body: Tuple[float, float]
    sat_thickness: float
    sat_modulation: float
    sat_phase: float
    wall: float
    spine_radius: float
    spine_dy: float
    z_taper: float
    blobs: List[Blob] = field(default_factory=list)
    gas: List[Blob] = field(default_factory=list)
    gain: float = 1000.0
    slice_falloff: float = 0.0
    skin: float = 0.0

    def taper(self, z: float) -> float:
        d = self.dims[0]
        if d == 1:
            return 1.0
        zc = (d - 1) / 2
        return 1.0 - self.z_taper * ((z - zc) / zc) ** 2

    def perturbed(self, rng: np.random.Generator, scale: float = 0.02, shift: float = 2.0,
                  blob_jitter: float = 0.015) -> "PhantomGeometry":
        """Repeat-visit variant: global in-plane scale, translation and blob boundary noise."""
        f = 1.0 + rng.uniform(-scale, scale)
        ty, tx = rng.uniform(-shift, shift, size=2)
        blobs = []
        for b in self.blobs:
            j = 1.0 + rng.uniform(-blob_jitter, blob_jitter, size=3)
            blobs.append(Blob(b.z, b.y * f, b.x * f, b.rz * j[0], b.ry * f * j[1], b.rx * f * j[2]))
        gas = [Blob(g.z, g.y * f, g.x * f, g.rz, g.ry * f, g.rx * f) for g in self.gas]
        return replace(
            self,
            center=(self.center[0] + ty, self.center[1] + tx),
            body=(self.body[0] * f, self.body[1] * f),
            sat_thickness=self.sat_thickness * f,
            skin=self.skin * f,
            wall=self.wall * f,
            spine_radius=self.spine_radius * f,
            spine_dy=self.spine_dy * f,
            blobs=blobs,
            gas=gas,
            gain=self.gain * (1.0 + rng.uniform(-0.05, 0.05)),
        )


def sample_geometry(params: PhantomParams, rng: Optional[np.random.Generator] = None) -> PhantomGeometry:
    params.validate()
    rng = np.random.default_rng(params.seed) if rng is None else rng
    d, h, w = params.dims
    half = (h + w) / 4
    ay = rng.uniform(*params.body_axes[0]) * h / 2
    ax = rng.uniform(*params.body_axes[1]) * w / 2
    margin_y = max(h / 2 - ay - 1.5, 0.0)
    margin_x = max(w / 2 - ax - 1.5, 0.0)
    cy = (h - 1) / 2 + rng.uniform(-1, 1) * min(2.0, margin_y)
    cx = (w - 1) / 2 + rng.uniform(-1, 1) * min(2.0, margin_x)
    t = rng.uniform(*params.sat_thickness) * half
    wall = params.wall_thickness * half
    skin = params.skin_thickness * half
    cav_y = ay * (1 - params.z_taper) - skin - t * (1 + params.sat_modulation) - wall
    cav_x = ax * (1 - params.z_taper) - skin - t * (1 + params.sat_modulation) - wall
    spine_dy = params.spine_offset * cav_y
    spine_r = params.spine_radius * cav_y
    n_blobs = int(rng.integers(params.vat_blobs[0], params.vat_blobs[1] + 1))
    blobs = []
    for _ in range(n_blobs):
        # rejection-sample centers inside the cavity and away from the spine
        for _attempt in range(100):
            r = math.sqrt(rng.uniform(0, 1)) * 0.75
            phi = rng.uniform(0, 2 * math.pi)
            by, bx = r * cav_y * math.sin(phi), r * cav_x * math.cos(phi)
            if math.hypot(by - spine_dy, bx) > spine_r + 2:
                break
        size = rng.uniform(*params.vat_blob_size, size=2) * half
        blobs.append(Blob(
            z=rng.uniform(0, d - 1) if d > 1 else 0.0,
            y=by, x=bx,
            rz=max(rng.uniform(*params.vat_blob_depth) * d, 0.75),
            ry=size[0], rx=size[1],
        ))
    # bowel gas: low-signal pockets in the cavity whose fat fraction is pure noise
    gas = []
    for _ in range(int(rng.integers(params.gas_pockets[0], params.gas_pockets[1] + 1))):
        r = math.sqrt(rng.uniform(0, 1)) * 0.8
        phi = rng.uniform(0, 2 * math.pi)
        size = rng.uniform(*params.gas_size, size=2) * half
        gas.append(Blob(
            z=rng.uniform(0, d - 1) if d > 1 else 0.0,
            y=r * cav_y * math.sin(phi), x=r * cav_x * math.cos(phi),
            rz=max(rng.uniform(*params.vat_blob_depth) * d, 0.75),
            ry=max(size[0], 1.0), rx=max(size[1], 1.0),
        ))
    return PhantomGeometry(
        dims=params.dims, center=(cy, cx), body=(ay, ax), sat_thickness=t,
        sat_modulation=params.sat_modulation, sat_phase=rng.uniform(0, 2 * math.pi),
        wall=wall, spine_radius=spine_r, spine_dy=spine_dy, z_taper=params.z_taper,
        blobs=blobs, gas=gas, gain=rng.uniform(*params.gain), slice_falloff=params.slice_falloff, skin=skin,
    )


def region_masks(geom: PhantomGeometry) -> dict:
    """Boolean (D, H, W) masks for body, skin, sat, inner, cavity, spine, vat and gas."""
    d, h, w = geom.dims
    z = np.arange(d, dtype=np.float64)[:, None, None]
    dy = np.arange(h, dtype=np.float64)[None, :, None] - geom.center[0]
    dx = np.arange(w, dtype=np.float64)[None, None, :] - geom.center[1]
    s = np.array([geom.taper(k) for k in range(d)])[:, None, None]
    ay, ax = geom.body[0] * s, geom.body[1] * s
    theta = np.arctan2(dy, dx)
    t = geom.sat_thickness * (1 + geom.sat_modulation * np.cos(theta - geom.sat_phase))
    body = (dy / ay) ** 2 + (dx / ax) ** 2 <= 1
    ay, ax = ay - geom.skin, ax - geom.skin
    dermis = (dy / ay) ** 2 + (dx / ax) ** 2 <= 1
    inner = (dy / (ay - t)) ** 2 + (dx / (ax - t)) ** 2 <= 1
    cavity = (dy / (ay - t - geom.wall)) ** 2 + (dx / (ax - t - geom.wall)) ** 2 <= 1
    spine = (dy - geom.spine_dy) ** 2 + dx ** 2 <= geom.spine_radius ** 2
    spine = np.broadcast_to(spine, (d, h, w))
    blobs = np.zeros((d, h, w), dtype=bool)
    for b in geom.blobs:
        blobs |= ((z - b.z) / b.rz) ** 2 + ((dy - b.y) / b.ry) ** 2 + ((dx - b.x) / b.rx) ** 2 <= 1
    pockets = np.zeros((d, h, w), dtype=bool)
    for g in geom.gas:
        pockets |= ((z - g.z) / g.rz) ** 2 + ((dy - g.y) / g.ry) ** 2 + ((dx - g.x) / g.rx) ** 2 <= 1
    body = np.broadcast_to(body, (d, h, w))
    dermis = np.broadcast_to(dermis, (d, h, w)) & body
    inner = np.broadcast_to(inner, (d, h, w)) & dermis
    cavity = np.broadcast_to(cavity, (d, h, w)) & inner
    return {
        "body": body,
        "skin": body & ~dermis,
        "sat": dermis & ~inner,
        "inner": inner,
        "cavity": cavity,
        "spine": spine & cavity,
        "vat": blobs & cavity & ~spine,
        "gas": pockets & cavity & ~spine & ~blobs,
    }


def render_phantom(params: PhantomParams, geom: PhantomGeometry, signal_rng: np.random.Generator,
                   background_rng: np.random.Generator):
    regions = region_masks(geom)
    d, h, w = geom.dims
    labels = np.zeros((d, h, w), dtype=np.uint8)
    labels[regions["vat"]] = 1
    labels[regions["sat"]] = 2
    body = regions["body"]
    fat_tissue = labels > 0
    if not regions["vat"].any():
        raise ValueError("degenerate geometry: no VAT voxels inside the abdominal cavity")
    if not regions["sat"].any():
        raise ValueError("degenerate geometry: empty SAT ring")

    water = np.full((d, h, w), _LEAN[0])
    fat = np.full((d, h, w), _LEAN[1])
    water[fat_tissue], fat[fat_tissue] = _FAT
    water[regions["spine"]], fat[regions["spine"]] = _SPINE
    water = np.clip(water + signal_rng.normal(0, params.signal_noise, (d, h, w)), 0.005, None)
    fat = np.clip(fat + signal_rng.normal(0, params.signal_noise, (d, h, w)), 0.005, None)
    ff = fat / (fat + water) + signal_rng.normal(0, params.ff_noise, (d, h, w))
    ff = np.where(fat_tissue, np.clip(ff, 0.5, 1.0), np.clip(ff, 0.0, LEAN_FF_MAX))
    gas = regions["gas"]
    n_gas = int(gas.sum())
    water[gas] = np.abs(signal_rng.normal(0, params.background_noise, n_gas))
    fat[gas] = np.abs(signal_rng.normal(0, params.background_noise, n_gas))
    ff[gas] = signal_rng.uniform(0, 1, n_gas)

    zc = (d - 1) / 2 if d > 1 else 1.0
    falloff = 1.0 - geom.slice_falloff * np.abs(np.arange(d) - zc) / zc
    scale = (geom.gain * falloff)[:, None, None]
    water *= scale
    fat *= scale

    bg = ~body
    water[bg] = 0.0
    fat[bg] = 0.0
    ff[bg] = 0.0
    if params.include_background_noise:
        n = int(bg.sum())
        sigma = params.background_noise * geom.gain
        water[bg] = np.abs(background_rng.normal(0, sigma, n))
        fat[bg] = np.abs(background_rng.normal(0, sigma, n))
        ff[bg] = background_rng.uniform(0, 1, n)
    data = np.stack([water, fat, ff]).astype(np.float32)
    # float32 rounding must not push a depot voxel below 0.5 or lean tissue above it
    data[2][fat_tissue] = np.maximum(data[2][fat_tissue], np.float32(0.5))
    lean = body & ~fat_tissue & ~gas
    data[2][lean] = np.minimum(data[2][lean], np.float32(LEAN_FF_MAX))
    return Volume(data, params.spacing), LabelMask(labels, params.spacing), body.copy()


def generate_phantom(params: PhantomParams, geometry: Optional[PhantomGeometry] = None):
    """Return ``(volume, label_mask, body_mask)``; fully determined by ``params``."""
    params.validate()
    geo_ss, sig_ss, bg_ss = np.random.SeedSequence(params.seed).spawn(3)
    if geometry is None:
        geometry = sample_geometry(params, np.random.default_rng(geo_ss))
    return render_phantom(params, geometry, np.random.default_rng(sig_ss), np.random.default_rng(bg_ss))


def generate_cohort(n_patients: int, visits_per_patient: int, params_base: PhantomParams, seed: int,
                    out_dir, center_tag: str = "site_a", prefix: str = "P"):
    """Write ``n_patients * visits_per_patient`` phantoms plus ``manifest.csv`` to ``out_dir``.

    Visits of one patient share a sampled geometry and differ by a small
    perturbation, mimicking repeat scans of the same subject.
    """
    if n_patients < 1 or visits_per_patient < 1:
        raise ValueError("need at least one patient and one visit")
    params_base.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    width = max(3, len(str(n_patients - 1)))
    for i, pss in enumerate(np.random.SeedSequence(seed).spawn(n_patients)):
        pid = f"{prefix}{i:0{width}d}"
        geo_ss, *visit_ss = pss.spawn(1 + visits_per_patient)
        base = sample_geometry(params_base, np.random.default_rng(geo_ss))
        for v, vss in enumerate(visit_ss, start=1):
            jit_ss, sig_ss, bg_ss = vss.spawn(3)
            geom = base.perturbed(np.random.default_rng(jit_ss))
            vol, lab, body = render_phantom(params_base, geom, np.random.default_rng(sig_ss),
                                            np.random.default_rng(bg_ss))
            image = out / f"{pid}_v{v}.mvf"
            label = out / f"{pid}_v{v}.label.mvf"
            write_volume(image, vol)
            write_volume(label, lab)
            write_volume(body_mask_path(image), LabelMask(body.astype(np.uint8), vol.spacing))
            records.append(ManifestRecord(pid, v, image, label, center_tag))
    manifest = out / "manifest.csv"
    write_manifest(manifest, records)
    return manifest, records
