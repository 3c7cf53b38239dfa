"""Training-map edits: skull-strip simulation, lesion dropout, target projection."""

from __future__ import annotations

import numpy as np

from .schema import BACKGROUND, LabelSchema, SchemaError
from .volume import Volume

__all__ = [
    "STRIP_NONE",
    "STRIP_FULL",
    "STRIP_KEEP_CSF",
    "draw_strip_branch",
    "apply_skullstrip",
    "simulate_skullstrip",
    "draw_lesion_keep",
    "apply_lesion_dropout",
    "lesion_dropout",
    "build_target",
]

STRIP_NONE = "none"
STRIP_FULL = "full"
STRIP_KEEP_CSF = "keep_csf"


def _relabel(data: np.ndarray, mapping: dict[int, int]) -> np.ndarray:
    if not mapping:
        return data.copy()
    max_label = max(int(data.max()), max(mapping))
    lut = np.arange(max_label + 1, dtype=np.int64)
    for src, dst in mapping.items():
        lut[src] = dst
    return lut[data].astype(data.dtype)


def draw_strip_branch(rng) -> str:
    """Half the maps keep their head labels; the stripped half splits evenly
    between a complete strip and one that leaves the fluid layer behind."""
    u = rng.random()
    if u < 0.5:
        return STRIP_NONE
    if u < 0.75:
        return STRIP_FULL
    return STRIP_KEEP_CSF


def apply_skullstrip(labels: Volume, schema: LabelSchema, branch: str) -> Volume:
    if branch == STRIP_NONE:
        return labels.with_data(labels.data.copy())
    stripped = set(schema.extracerebral_labels)
    if branch == STRIP_FULL and schema.csf_label is not None:
        stripped.add(schema.csf_label)
    elif branch not in (STRIP_FULL, STRIP_KEEP_CSF):
        raise ValueError(f"unknown strip branch {branch!r}")
    mapping = {lab: BACKGROUND for lab in stripped}
    return labels.with_data(_relabel(labels.data, mapping))


def simulate_skullstrip(labels: Volume, schema: LabelSchema, rng) -> Volume:
    """Randomly remove head labels to mimic (possibly imperfect) skull stripping."""
    return apply_skullstrip(labels, schema, draw_strip_branch(rng))


def draw_lesion_keep(rng) -> bool:
    return bool(rng.random() < 0.5)


def apply_lesion_dropout(labels: Volume, schema: LabelSchema, keep: bool) -> Volume:
    if keep:
        return labels.with_data(labels.data.copy())
    present = set(labels.labels_present())
    mapping = {}
    for lesion in sorted(schema.lesion_labels):
        host = schema.lesion_hosts.get(lesion)
        if host is None:
            raise SchemaError(f"lesion label {lesion} has no host mapping")
        if lesion in present:
            mapping[lesion] = host
    return labels.with_data(_relabel(labels.data, mapping))


def lesion_dropout(labels: Volume, schema: LabelSchema, rng) -> Volume:
    """Keep lesion labels with probability one half, otherwise absorb each
    lesion into its host tissue so no hole is left in the anatomy."""
    return apply_lesion_dropout(labels, schema, draw_lesion_keep(rng))


def build_target(deformed_labels: Volume, schema: LabelSchema) -> Volume:
    """Reset every label that is not to be predicted to background."""
    data = deformed_labels.data
    present = np.unique(data)
    mapping = {
        int(v): BACKGROUND
        for v in present
        if int(v) != BACKGROUND and int(v) not in schema.target_labels
    }
    return deformed_labels.with_data(_relabel(data, mapping))
