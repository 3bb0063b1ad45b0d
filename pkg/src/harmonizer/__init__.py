"""Frame-level melody harmonization with controllable harmonic density."""

__version__ = "0.1.0"

from .chords import ChordSymbol, PitchClassSet, chord_to_pcp, parse_chord_symbol
from .encoding import ChordVocab, FrameEncoding, beat_strength, build_vocab, decode_chords, encode
from .gamma import density_report, gamma_rescale, generate
from .model import ModelConfig, ModelWeights, forward, grad_check, train
from .musicxml import Corpus, corpus_filter, parse_musicxml, split_corpus
from .score import KeySignature, LeadSheet, Note, TimeSignature, frames_per_bar, validate_leadsheet
from .weights_io import load_weights, save_weights
