"""Default 64-channel 10-10 electrode montage and brain-region map.

Channel ordering is a project convention: electrodes are grouped by region,
occipital first (indices 0-7). The synthetic data generator places its
informative channels at indices 0-7, so saliency tooling run on synthetic
data highlights the occipital group.
"""

from __future__ import annotations

import json
from pathlib import Path

DEFAULT_REGION_MAP: dict[str, list[str]] = {
    "occipital": ["O1", "Oz", "O2", "PO7", "PO3", "POz", "PO4", "PO8"],
    "parietal": [
        "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
        "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6",
    ],
    "central": [
        "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
        "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6",
    ],
    "temporal": ["FT9", "FT7", "T7", "TP7", "TP9", "FT10", "FT8", "T8", "TP8", "TP10"],
    "frontal": [
        "Fp1", "Fpz", "Fp2", "AF7", "AF3", "AF4", "AF8",
        "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    ],
}

REGION_ORDER = ("occipital", "parietal", "central", "temporal", "frontal")

DEFAULT_MONTAGE: tuple[str, ...] = tuple(
    name for region in REGION_ORDER for name in DEFAULT_REGION_MAP[region]
)

N_CHANNELS = len(DEFAULT_MONTAGE)
assert N_CHANNELS == 64


def validate_region_map(region_map: dict[str, list[str]], channel_names: list[str] | tuple[str, ...]) -> None:
    """Raise ValueError unless ``region_map`` partitions ``channel_names``."""
    seen: list[str] = []
    for region, names in region_map.items():
        if not names:
            raise ValueError(f"region {region!r} is empty")
        seen.extend(names)
    if len(seen) != len(set(seen)):
        dupes = sorted({n for n in seen if seen.count(n) > 1})
        raise ValueError(f"region map assigns channels more than once: {dupes}")
    missing = set(channel_names) - set(seen)
    extra = set(seen) - set(channel_names)
    if missing or extra:
        raise ValueError(
            f"region map is not a partition of the montage "
            f"(missing={sorted(missing)}, unknown={sorted(extra)})"
        )


def load_region_map(path: str | Path) -> dict[str, list[str]]:
    """Load a user region map from JSON ({region: [electrode, ...]})."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("region map JSON must be an object mapping region -> electrode list")
    return {str(k): [str(n) for n in v] for k, v in raw.items()}
