"""Known optimal (or best known) objective values for QAPLIB instances."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

KNOWN_OPTIMA: dict[str, float] = {
    "had14": 2724,
    "had16": 3720,
    "had18": 5358,
    "had20": 6922,
    "kra30a": 88900,
    "nug12": 578,
    "nug15": 1150,
    "nug16a": 1610,
    "nug16b": 1240,
    "nug18": 1930,
    "nug20": 2570,
    "nug22": 3596,
    "nug24": 3488,
    "nug25": 3744,
    "nug28": 5166,
    "nug30": 6124,
    "rou15": 354210,
    "rou20": 725520,
    "tai15a": 388214,
    "tai17a": 491812,
    "tai20a": 703482,
    "tai25a": 1167256,
    "tai30a": 1818146,
    "tho30": 149936,
    "chr18a": 11098,
    "chr20a": 2192,
    "chr20b": 2298,
    "chr22a": 6156,
}


def known_optimum(name: str) -> float | None:
    v = KNOWN_OPTIMA.get(name.lower())
    return None if v is None else float(v)


def bundled_path(filename: str) -> Path:
    """Path of a data file shipped inside the package (e.g. ``nug12.dat``)."""
    return Path(str(resources.files("rltqap") / "data" / filename))
