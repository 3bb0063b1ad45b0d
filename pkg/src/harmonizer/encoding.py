"""Frame-level encoding of lead sheets: melody, beat, key and chord sequences."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from .chords import REST, REST_TEXT, ChordSymbol, parse_chord_symbol
from .score import LeadSheet, TimeSignature, bar_layout, frames_per_bar

log = logging.getLogger(__name__)

N_MELODY = 128
N_BEAT = 4
N_KEY = 15
ENCODING_FORMAT = "harmonizer-frames"


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class ChordVocab:
    symbols: tuple[str, ...]

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != REST_TEXT:
            raise ValueError("vocabulary must start with the rest token")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def __getitem__(self, i: int) -> ChordSymbol:
        return parse_chord_symbol(self.symbols[i])

    def __contains__(self, text: str) -> bool:
        return text in self._index

    def index(self, chord: ChordSymbol | str) -> int:
        text = chord if isinstance(chord, str) else chord.text
        try:
            return self._index[text]
        except KeyError:
            raise EncodingError(f"chord {text!r} is not in the vocabulary") from None

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.symbols).encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps({"symbols": list(self.symbols), "hash": self.hash}, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ChordVocab":
        d = json.loads(text)
        vocab = cls(tuple(d["symbols"]))
        if "hash" in d and d["hash"] != vocab.hash:
            raise ValueError("vocabulary hash does not match its symbols")
        return vocab


@dataclass(frozen=True)
class FrameEncoding:
    melody: np.ndarray
    beat: np.ndarray
    key: np.ndarray
    chord: np.ndarray
    vocab_hash: str = ""

    def __post_init__(self):
        for name in ("melody", "beat", "key", "chord"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.melody)
        if not len(self.beat) == len(self.key) == len(self.chord) == n:
            raise EncodingError("frame sequences differ in length")
        if n and (self.melody.min() < 0 or self.melody.max() >= N_MELODY):
            raise EncodingError("melody index outside 0..127")
        if n and (self.beat.min() < 0 or self.beat.max() > 3):
            raise EncodingError("beat strength outside 0..3")
        if n and (self.key.min() < -7 or self.key.max() > 7):
            raise EncodingError("key value outside -7..7")

    def __len__(self) -> int:
        return len(self.melody)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrameEncoding):
            return NotImplemented
        return self.vocab_hash == other.vocab_hash and all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("melody", "beat", "key", "chord"))

    __hash__ = None

    def with_chords(self, chords) -> "FrameEncoding":
        return FrameEncoding(self.melody, self.beat, self.key, chords, self.vocab_hash)

    def to_json(self) -> str:
        return json.dumps({
            "format": ENCODING_FORMAT,
            "vocab_hash": self.vocab_hash,
            "melody": self.melody.tolist(),
            "beat": self.beat.tolist(),
            "key": self.key.tolist(),
            "chord": self.chord.tolist(),
        }) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FrameEncoding":
        d = json.loads(text)
        if d.get("format") != ENCODING_FORMAT:
            raise ValueError("not a frame-encoding document")
        return cls(d["melody"], d["beat"], d["key"], d["chord"], d["vocab_hash"])


def beat_strength(ts: TimeSignature, frame_in_bar: int) -> int:
    """Metrical weight of a frame: 3 downbeat, 2 mid-bar beat, 1 other beat, 0 off-beat.

    Compound meters (x/8 with x divisible by 3) beat in dotted quarters.
    """
    fpb = frames_per_bar(ts)
    if not 0 <= frame_in_bar < fpb:
        raise ValueError(f"frame {frame_in_bar} outside a {ts} bar")
    if ts.is_compound:
        unit, beats = 6, ts.numerator // 3
    else:
        unit, beats = 16 // ts.denominator, ts.numerator
    if frame_in_bar == 0:
        return 3
    if frame_in_bar % unit:
        return 0
    if beats % 2 == 0 and frame_in_bar == unit * beats // 2:
        return 2
    return 1


def beat_frames(ls: LeadSheet) -> np.ndarray:
    out = np.zeros(ls.total_frames, dtype=np.int64)
    for bar in bar_layout(ls):
        for i in range(bar.length):
            out[bar.start + i] = beat_strength(bar.time, bar.offset + i)
    return out


def melody_frames(ls: LeadSheet) -> np.ndarray:
    out = np.zeros(ls.total_frames, dtype=np.int64)
    for note in ls.melody:
        if note.pitch is not None:
            out[note.onset:note.end] = note.pitch
    return out


def key_frames(ls: LeadSheet) -> np.ndarray:
    out = np.zeros(ls.total_frames, dtype=np.int64)
    for onset, key in ls.key_regions:
        out[onset:] = key.fifths
    return out


def chord_frames(ls: LeadSheet) -> list[ChordSymbol]:
    """Active chord per frame, ``REST`` before the first onset."""
    out = [REST] * ls.total_frames
    bounds = [o for o, _ in ls.chord_regions[1:]] + [ls.total_frames]
    for (onset, chord), end in zip(ls.chord_regions, bounds):
        out[onset:end] = [chord] * (end - onset)
    return out


def encode(ls: LeadSheet, vocab: ChordVocab, oov_as_rest: bool = False) -> FrameEncoding:
    """Encode ``ls`` into four aligned per-frame sequences.

    With ``oov_as_rest`` chords missing from ``vocab`` become rest frames
    instead of raising :class:`EncodingError`; the number of such frames is
    stored on the returned object as ``oov_frames``.
    """
    chords = np.zeros(ls.total_frames, dtype=np.int64)
    oov = 0
    bounds = [o for o, _ in ls.chord_regions[1:]] + [ls.total_frames]
    for (onset, chord), end in zip(ls.chord_regions, bounds):
        if chord.text in vocab:
            chords[onset:end] = vocab.index(chord)
        elif oov_as_rest:
            oov += end - onset
        else:
            raise EncodingError(f"chord {chord.text!r} at frame {onset} is not in the vocabulary")
    enc = FrameEncoding(melody_frames(ls), beat_frames(ls), key_frames(ls), chords, vocab.hash)
    object.__setattr__(enc, "oov_frames", oov)
    return enc


def build_vocab(sheets) -> ChordVocab:
    """Rest token followed by every distinct chord text, sorted."""
    texts = set()
    for ls in sheets:
        texts.update(c.text for _, c in ls.chord_regions if not c.is_rest)
    return ChordVocab((REST_TEXT, *sorted(texts)))


def decode_chords(chord_frames_, vocab: ChordVocab) -> list[tuple[int, ChordSymbol]]:
    """Run-collapse a chord index sequence into ``(onset, chord)`` regions.

    Leading rest frames produce no region; a rest run after a chord yields
    an explicit rest region so that the chord does not extend over it.
    """
    regions: list[tuple[int, ChordSymbol]] = []
    prev = None
    for t, idx in enumerate(np.asarray(chord_frames_, dtype=np.int64).tolist()):
        if idx == prev:
            continue
        prev = idx
        if idx == 0 and not regions:
            continue
        if not 0 <= idx < len(vocab):
            raise EncodingError(f"chord index {idx} outside vocabulary of size {len(vocab)}")
        regions.append((t, vocab[idx]))
    return regions
