"""Two-scale patch pairs sampled at superpixel centroids.

Each in-retina superpixel yields one pair: a side x side crop around the
centroid, and a 4x-wider crop at the same center whose width is averaged
down to the same size. Both scales therefore share the center pixel
exactly; borders are handled by edge replication.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError
from .rng import Rng


@dataclass(frozen=True)
class PatchPreset:
    name: str
    side: int  # scale-1 crop side; scale-2 source is (side x 4*side)

    @property
    def wide(self) -> int:
        return 4 * self.side


PRESETS = {
    "paper": PatchPreset("paper", 32),
    "desk": PatchPreset("desk", 16),
}


def get_preset(name) -> PatchPreset:
    if isinstance(name, PatchPreset):
        return name
    try:
        return PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown patch preset {name!r}; know {sorted(PRESETS)}") from None


@dataclass
class PatchPair:
    scale1: np.ndarray  # [side, side] float32
    scale2: np.ndarray  # [side, side] float32, width-downsampled wide crop
    source: tuple  # (volume_id, slice index, superpixel id)


def _crop_replicated(img, r0, c0, height, width):
    rows = np.clip(np.arange(r0, r0 + height), 0, img.shape[0] - 1)
    cols = np.clip(np.arange(c0, c0 + width), 0, img.shape[1] - 1)
    return img[np.ix_(rows, cols)]


def extract_pair(slice_img, center, preset, source=("", 0, 0)) -> PatchPair:
    """Cut the (scale1, scale2) pair centered on one pixel."""
    p = get_preset(preset)
    r, c = int(center[0]), int(center[1])
    if not (0 <= r < slice_img.shape[0] and 0 <= c < slice_img.shape[1]):
        raise InputError(f"center {center} outside slice {slice_img.shape}")
    s = p.side
    scale1 = _crop_replicated(slice_img, r - s // 2, c - s // 2, s, s)
    wide = _crop_replicated(slice_img, r - s // 2, c - p.wide // 2, s, p.wide)
    scale2 = wide.reshape(s, s, 4).mean(axis=2)  # 1x4 average pooling
    return PatchPair(
        scale1=scale1.astype(np.float32),
        scale2=scale2.astype(np.float32),
        source=source,
    )


@dataclass
class PatchDataset:
    scale1: np.ndarray  # [n, side, side] float32
    scale2: np.ndarray  # [n, side, side] float32
    sources: list  # (volume_id, slice index, superpixel id) per row
    patient_ids: list  # one per row
    split: str  # healthy-train | anomaly-train | eval
    preset: PatchPreset

    def __len__(self):
        return self.scale1.shape[0]


def build_dataset(preps, split, preset, rng: Rng | None = None, cap=None,
                  ground_truths=None) -> PatchDataset:
    """One patch pair per in-retina superpixel centroid.

    `preps` is an ordered list of (volume_id, PreprocessedVolume). Ordering
    of the output is (volume order, slice, superpixel id) and deterministic.
    For the healthy-train split, pass `ground_truths` aligned with `preps`
    to assert the volumes really are anomaly-free. `cap` subsamples
    uniformly (seeded) while preserving the sort order.
    """
    p = get_preset(preset)
    if split not in ("healthy-train", "anomaly-train", "eval"):
        raise ParameterError(f"unknown split {split!r}")
    if split == "healthy-train" and ground_truths is not None:
        for (vid, _), gt in zip(preps, ground_truths):
            if gt is not None and gt.mask.any():
                raise InputError(f"volume {vid} in healthy-train has anomaly voxels")

    s1, s2, sources, patients = [], [], [], []
    for vid, prep in preps:
        sps = [sp for sp in prep.superpixels if sp.in_retina]
        sps.sort(key=lambda sp: (sp.slice_index, sp.id))
        for sp in sps:
            center = (int(round(sp.centroid[0])), int(round(sp.centroid[1])))
            pair = extract_pair(prep.data[sp.slice_index], center, p,
                                source=(vid, sp.slice_index, sp.id))
            s1.append(pair.scale1)
            s2.append(pair.scale2)
            sources.append(pair.source)
            patients.append(vid)
    if not s1:
        raise InputError("no in-retina superpixels: empty dataset")

    if cap is not None and len(s1) > cap:
        if rng is None:
            raise ParameterError("cap subsampling requires an rng")
        keep = np.sort(rng.choice(len(s1), size=cap, replace=False))
        s1 = [s1[i] for i in keep]
        s2 = [s2[i] for i in keep]
        sources = [sources[i] for i in keep]
        patients = [patients[i] for i in keep]

    return PatchDataset(
        scale1=np.stack(s1).astype(np.float32),
        scale2=np.stack(s2).astype(np.float32),
        sources=sources,
        patient_ids=patients,
        split=split,
        preset=p,
    )
