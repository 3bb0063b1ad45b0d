"""Chord symbols and pitch-class sets.

A chord symbol is written as a root (``[A-G]`` with an optional ``#`` or
``b``), a quality suffix and an optional ``/bass`` note, e.g. ``"Dm7"``,
``"Bb"``, ``"F#m7b5"`` or ``"C/E"``.  ``"N.C."`` denotes the rest chord.

Root spelling is kept as written; all pitch arithmetic happens mod 12.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

REST_TEXT = "N.C."

STEP_PITCH = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
ACCIDENTALS = {"": 0, "#": 1, "b": -1}

# canonical suffix -> intervals above the root
QUALITIES: dict[str, tuple[int, ...]] = {
    "": (0, 4, 7),
    "m": (0, 3, 7),
    "dim": (0, 3, 6),
    "aug": (0, 4, 8),
    "sus2": (0, 2, 7),
    "sus4": (0, 5, 7),
    "5": (0, 7),
    "6": (0, 4, 7, 9),
    "m6": (0, 3, 7, 9),
    "7": (0, 4, 7, 10),
    "maj7": (0, 4, 7, 11),
    "m7": (0, 3, 7, 10),
    "mmaj7": (0, 3, 7, 11),
    "m7b5": (0, 3, 6, 10),
    "dim7": (0, 3, 6, 9),
    "aug7": (0, 4, 8, 10),
    "7sus4": (0, 5, 7, 10),
    "9": (0, 4, 7, 10, 2),
    "maj9": (0, 4, 7, 11, 2),
    "m9": (0, 3, 7, 10, 2),
    "add9": (0, 4, 7, 2),
    "11": (0, 4, 7, 10, 2, 5),
    "13": (0, 4, 7, 10, 2, 9),
}

QUALITY_NAMES = {
    "": "major",
    "m": "minor",
    "dim": "diminished",
    "aug": "augmented",
    "sus2": "sus2",
    "sus4": "sus4",
    "5": "power",
    "6": "major-sixth",
    "m6": "minor-sixth",
    "7": "dominant-seventh",
    "maj7": "major-seventh",
    "m7": "minor-seventh",
    "mmaj7": "minor-major-seventh",
    "m7b5": "half-diminished",
    "dim7": "diminished-seventh",
    "aug7": "augmented-seventh",
    "7sus4": "dominant-seventh-sus4",
    "9": "dominant-ninth",
    "maj9": "major-ninth",
    "m9": "minor-ninth",
    "add9": "add9",
    "11": "dominant-eleventh",
    "13": "dominant-thirteenth",
}

# accepted spellings that normalize to a canonical suffix
ALIASES = {
    "M": "",
    "maj": "",
    "min": "m",
    "-": "m",
    "o": "dim",
    "+": "aug",
    "sus": "sus4",
    "M7": "maj7",
    "Maj7": "maj7",
    "Δ": "maj7",
    "Δ7": "maj7",
    "min7": "m7",
    "-7": "m7",
    "ø": "m7b5",
    "ø7": "m7b5",
    "-7b5": "m7b5",
    "o7": "dim7",
    "+7": "aug7",
    "mM7": "mmaj7",
    "mMaj7": "mmaj7",
    "M9": "maj9",
    "min9": "m9",
    "-9": "m9",
    "min6": "m6",
    "-6": "m6",
}

_ROOT_RE = re.compile(r"([A-G])(#|b)?")


class ChordParseError(ValueError):
    """Raised for malformed chord symbols; ``fragment`` holds the offending text."""

    def __init__(self, message: str, fragment: str):
        super().__init__(message)
        self.fragment = fragment


@dataclass(frozen=True)
class PitchClassSet:
    mask: tuple[bool, ...] = (False,) * 12

    def __post_init__(self):
        if len(self.mask) != 12:
            raise ValueError("pitch-class mask needs 12 entries")

    @classmethod
    def of(cls, pcs) -> "PitchClassSet":
        mask = [False] * 12
        for pc in pcs:
            mask[pc % 12] = True
        return cls(tuple(mask))

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(i for i, on in enumerate(self.mask) if on)

    def __contains__(self, pc: int) -> bool:
        return self.mask[pc % 12]

    def __len__(self) -> int:
        return sum(self.mask)

    def transpose(self, k: int) -> "PitchClassSet":
        return PitchClassSet.of(pc + k for pc in self.classes)


@dataclass(frozen=True)
class ChordSymbol:
    text: str
    root: int | None
    quality: str
    pitch_classes: PitchClassSet
    bass: int | None = None

    @property
    def is_rest(self) -> bool:
        return self.root is None

    def __str__(self) -> str:
        return self.text


REST = ChordSymbol(REST_TEXT, None, "rest", PitchClassSet())


def _parse_note_name(text: str, whole: str) -> tuple[int, str]:
    m = _ROOT_RE.match(text)
    if m is None:
        raise ChordParseError(f"malformed root {text[:2]!r} in chord {whole!r}", text[:2] or whole)
    step, acc = m.group(1), m.group(2) or ""
    return (STEP_PITCH[step] + ACCIDENTALS[acc]) % 12, m.group(0)


@lru_cache(maxsize=4096)
def parse_chord_symbol(text: str) -> ChordSymbol:
    """Parse ``text`` into a :class:`ChordSymbol`.

    Raises :class:`ChordParseError` naming the offending substring when the
    root or quality suffix is not recognised.
    """
    if not text:
        raise ChordParseError("empty chord symbol", "")
    text = text.strip()
    if text in (REST_TEXT, "NC", "N.C", "N"):
        return REST

    root, root_text = _parse_note_name(text, text)
    rest = text[len(root_text):]

    bass = None
    bass_text = ""
    if "/" in rest:
        rest, bass_part = rest.split("/", 1)
        bass, bass_text = _parse_note_name(bass_part, text)
        if bass_text != bass_part:
            raise ChordParseError(f"malformed bass {bass_part!r} in chord {text!r}", bass_part)

    suffix = ALIASES.get(rest, rest)
    if suffix not in QUALITIES:
        raise ChordParseError(f"unknown chord quality {rest!r} in {text!r}", rest)

    pcs = {(root + iv) % 12 for iv in QUALITIES[suffix]}
    if bass is not None:
        pcs.add(bass)
    canonical = root_text + suffix + (f"/{bass_text}" if bass_text else "")
    return ChordSymbol(canonical, root, QUALITY_NAMES[suffix], PitchClassSet.of(pcs), bass)


def canonical_text(chord: ChordSymbol) -> str:
    return chord.text


def chord_to_pcp(chord: ChordSymbol) -> np.ndarray:
    """Binary 12-dim pitch class profile; all zeros for the rest chord."""
    return np.array(chord.pitch_classes.mask, dtype=float)


_SHARP_NAMES = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]
_FLAT_NAMES = ["C", "Db", "D", "Eb", "E", "F", "Gb", "G", "Ab", "A", "Bb", "B"]


def pitch_name(pc: int, prefer_flats: bool = False) -> str:
    return (_FLAT_NAMES if prefer_flats else _SHARP_NAMES)[pc % 12]


def transpose_chord(chord: ChordSymbol, k: int, prefer_flats: bool = False) -> ChordSymbol:
    """Transpose by ``k`` semitones; the result is respelled from ``prefer_flats``."""
    if chord.is_rest:
        return chord
    suffix = chord.text[len(_ROOT_RE.match(chord.text).group(0)):].split("/")[0]
    text = pitch_name(chord.root + k, prefer_flats) + suffix
    if chord.bass is not None:
        text += "/" + pitch_name(chord.bass + k, prefer_flats)
    return parse_chord_symbol(text)
