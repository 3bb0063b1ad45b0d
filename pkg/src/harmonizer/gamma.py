"""Gamma sampling and density-controlled autoregressive chord generation.

The attribute set at each step is the previously emitted chord token.  With
``gamma > 0.5`` its probability is pushed down (more chord changes); with
``gamma < 0.5`` it is pushed up (fewer changes); ``gamma == 0.5`` leaves the
distribution unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .encoding import FrameEncoding
from .model import ContractError, ModelWeights, decoder_step, softmax, start_decoder

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class DegenerateDistributionError(ValueError):
    pass


def gamma_exponent(gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"gamma must lie in [0, 1], got {gamma}")
    if gamma == 1.0:
        return math.inf
    return math.tan(math.pi * gamma / 2)


def gamma_rescale(dist, attribute_tokens, gamma: float) -> np.ndarray:
    """Rescale ``dist`` so the attribute mass becomes ``p_A ** tan(pi * gamma / 2)``.

    Attribute tokens share the factor ``p_A_out / p_A_in``; the complement
    absorbs the difference proportionally, so ratios inside each group are
    preserved.
    """
    exponent = gamma_exponent(gamma)
    p = np.asarray(dist, dtype=np.float64)
    attr = np.zeros(p.shape, dtype=bool)
    attr[list(attribute_tokens)] = True
    if not attr.any():
        raise ContractError("attribute set is empty")
    p_a = float(p[attr].sum())
    p_n = float(p[~attr].sum())
    if p_a < PROB_FLOOR or p_n < PROB_FLOOR:
        raise DegenerateDistributionError(
            f"attribute mass {p_a:.3g} leaves nothing to rescale")
    if gamma == 0.5:
        return p / (p_a + p_n)
    total = p_a + p_n
    p_a, p_n = p_a / total, p_n / total
    p_a_out = 0.0 if math.isinf(exponent) else max(p_a, PROB_FLOOR) ** exponent
    out = np.empty_like(p)
    out[attr] = p[attr] / total * (p_a_out / p_a)
    out[~attr] = p[~attr] / total * ((1.0 - p_a_out) / p_n)
    return out


@dataclass
class GenerationTrace:
    steps: list = field(default_factory=list)  # (step, p_A_in, p_A_out, token)
    degenerate_steps: int = 0

    def to_dict(self) -> dict:
        return {"degenerate_steps": self.degenerate_steps,
                "steps": [{"step": s, "p_A_in": a, "p_A_out": b, "token": t}
                          for s, a, b, t in self.steps]}


def generate(w: ModelWeights, enc: FrameEncoding, gamma: float = 0.5, strategy: str = "greedy",
             temperature: float = 1.0, seed: int = 0,
             trace: GenerationTrace | None = None) -> np.ndarray:
    """Decode chord indices frame by frame under gamma control.

    ``strategy`` is ``"greedy"`` (ties go to the lowest index) or
    ``"sample"`` (softmax at ``temperature``, seeded).  Steps where the
    previous token holds (numerically) all or none of the mass are left
    unscaled and counted in ``trace.degenerate_steps``.
    """
    gamma_exponent(gamma)
    if strategy not in ("greedy", "sample"):
        raise ContractError(f"unknown strategy {strategy!r}")
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    if enc.vocab_hash and enc.vocab_hash != w.vocab.hash:
        raise ContractError("encoding was built with a different vocabulary")
    trace = trace if trace is not None else GenerationTrace()
    rng = np.random.default_rng(seed)
    state = start_decoder(w, enc)
    out = np.zeros(len(enc), dtype=np.int64)
    prev = 0
    for t in range(len(enc)):
        logits = decoder_step(w, state, prev).astype(np.float64)
        if strategy == "sample":
            logits = logits / temperature
        p = softmax(logits)
        p_in = float(p[prev])
        try:
            q = gamma_rescale(p, [prev], gamma)
        except DegenerateDistributionError:
            trace.degenerate_steps += 1
            q = p
        if strategy == "greedy":
            token = int(np.argmax(q))
        else:
            token = int(rng.choice(len(q), p=q / q.sum()))
        trace.steps.append((t, p_in, float(q[prev]), token))
        out[t] = token
        prev = token
    if trace.degenerate_steps:
        log.info("%d degenerate steps left unscaled", trace.degenerate_steps)
    return out


def chord_onsets(chords) -> np.ndarray:
    """Frames where a non-rest chord region starts after run collapse."""
    c = np.asarray(chords)
    if not len(c):
        return np.zeros(0, dtype=np.int64)
    changed = np.ones(len(c), dtype=bool)
    changed[1:] = c[1:] != c[:-1]
    return np.flatnonzero(changed & (c != 0))


def count_bars(beat) -> int:
    """Bars implied by a beat-strength sequence; a leading pickup counts as one."""
    beat = np.asarray(beat)
    if not len(beat):
        return 0
    downbeats = np.flatnonzero(beat == 3)
    return len(downbeats) + int(not len(downbeats) or downbeats[0] > 0)


@dataclass
class DensityReport:
    onsets: int
    bars: int
    onsets_per_bar: float
    onset_beat_histogram: list  # counts at strengths 0..3

    def to_dict(self) -> dict:
        return {"onsets": self.onsets, "bars": self.bars,
                "onsets_per_bar": self.onsets_per_bar,
                "onset_beat_histogram": self.onset_beat_histogram}


def density_report(chords, enc: FrameEncoding) -> DensityReport:
    if len(chords) != len(enc):
        raise ContractError("chord sequence and encoding differ in length")
    onsets = chord_onsets(chords)
    bars = count_bars(enc.beat)
    hist = np.bincount(enc.beat[onsets], minlength=4).tolist() if len(onsets) else [0, 0, 0, 0]
    return DensityReport(len(onsets), bars, len(onsets) / bars if bars else 0.0, hist)
