"""Bi-LSTM encoder-decoder chord model in plain numpy, with hand-written backprop.

Two encoders read the melody (one-hot over 128 indices) and the meta-info
sequence (one-hot beat strength + one-hot key).  Each is a stack of blocks:
a bidirectional LSTM followed by a per-frame ``tanh`` projection.  The final
forward/backward hidden states of both top-level LSTMs form a context
vector.  At every frame the decoder (stacked unidirectional LSTMs) receives
the context, the per-frame encoder outputs and an embedding of the previous
chord token, and emits logits over the chord vocabulary.

Batches hold left-aligned sequences padded to a common length; the
backward direction reverses each row within its own length so padding
never leaks into valid frames.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .encoding import N_BEAT, N_KEY, N_MELODY, ChordVocab, FrameEncoding, build_vocab, encode

log = logging.getLogger(__name__)

META_DIM = N_BEAT + N_KEY
DIRECTIONS = ("fwd", "bwd")
ENCODERS = ("melody", "meta")


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder_hidden: int = 64
    projection: int = 32
    encoder_blocks: int = 2
    decoder_layers: int = 3
    decoder_hidden: int = 64
    chord_vocab_size: int = 2
    prev_chord_embedding: int = 64
    dropout: float = 0.2
    batch_size: int = 8
    patience: int = 20
    learning_rate: float = 1e-3
    max_epochs: int = 200
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        for name in ("encoder_hidden", "projection", "encoder_blocks", "decoder_layers",
                     "decoder_hidden", "chord_vocab_size", "prev_chord_embedding",
                     "batch_size", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if not 0 <= self.dropout < 1:
            raise ContractError("dropout must lie in [0, 1)")
        if self.patience < 0 or self.learning_rate <= 0:
            raise ContractError("patience must be >= 0 and learning_rate > 0")

    @classmethod
    def full_scale(cls, chord_vocab_size: int = 1462, **kw) -> "ModelConfig":
        return cls(encoder_hidden=256, projection=128, decoder_hidden=256,
                   batch_size=512, chord_vocab_size=chord_vocab_size, **kw)

    @property
    def context_dim(self) -> int:
        return 2 * len(ENCODERS) * self.encoder_hidden

    @property
    def decoder_input_dim(self) -> int:
        return self.context_dim + 2 * self.projection + self.prev_chord_embedding

    def to_dict(self) -> dict:
        return asdict(self)


def tensor_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable tensor, in canonical order."""
    H, P, D, V = cfg.encoder_hidden, cfg.projection, cfg.decoder_hidden, cfg.chord_vocab_size
    shapes: dict[str, tuple[int, ...]] = {}
    for enc, in_dim in zip(ENCODERS, (N_MELODY, META_DIM)):
        for b in range(cfg.encoder_blocks):
            d_in = in_dim if b == 0 else P
            for d in DIRECTIONS:
                shapes[f"{enc}.{b}.{d}.Wx"] = (d_in, 4 * H)
                shapes[f"{enc}.{b}.{d}.Wh"] = (H, 4 * H)
                shapes[f"{enc}.{b}.{d}.b"] = (4 * H,)
            shapes[f"{enc}.{b}.proj.W"] = (2 * H, P)
            shapes[f"{enc}.{b}.proj.b"] = (P,)
    for layer in range(cfg.decoder_layers):
        d_in = cfg.decoder_input_dim if layer == 0 else D
        shapes[f"decoder.{layer}.Wx"] = (d_in, 4 * D)
        shapes[f"decoder.{layer}.Wh"] = (D, 4 * D)
        shapes[f"decoder.{layer}.b"] = (4 * D,)
    shapes["embed"] = (V, cfg.prev_chord_embedding)
    shapes["out.W"] = (D, V)
    shapes["out.b"] = (V,)
    return shapes


@dataclass
class ModelWeights:
    config: ModelConfig
    vocab: ChordVocab
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.config.chord_vocab_size != len(self.vocab):
            raise ContractError("config vocab size differs from vocabulary")
        expected = tensor_shapes(self.config)
        if list(self.tensors) != list(expected):
            missing = set(expected) ^ set(self.tensors)
            raise ContractError(f"tensor names do not match config: {sorted(missing)[:5]}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ContractError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")

    @property
    def dtype(self):
        return self.tensors["out.W"].dtype

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.config, self.vocab,
                            {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, self.vocab, {k: v.copy() for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


def init_weights(cfg: ModelConfig, vocab: ChordVocab, seed: int | None = None,
                 dtype=np.float32) -> ModelWeights:
    """Glorot-uniform matrices, zero biases, forget-gate biases at 1."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    tensors = {}
    for name, shape in tensor_shapes(cfg).items():
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, shape)
        else:
            arr = np.zeros(shape)
            if not name.startswith("out") and not name.endswith("proj.b"):
                h = shape[0] // 4
                arr[h:2 * h] = 1.0
        tensors[name] = arr.astype(dtype)
    return ModelWeights(cfg, vocab, tensors)


# -- primitives --------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(x, Wx, Wh, b):
    B, T, _ = x.shape
    H = Wh.shape[0]
    gx = x @ Wx + b
    hs = np.zeros((B, T, H), dtype=x.dtype)
    cs = np.zeros((B, T, H), dtype=x.dtype)
    acts = np.zeros((B, T, 4 * H), dtype=x.dtype)
    h = np.zeros((B, H), dtype=x.dtype)
    c = np.zeros((B, H), dtype=x.dtype)
    for t in range(T):
        a = gx[:, t] + h @ Wh
        act = acts[:, t]
        act[:, :2 * H] = _sigmoid(a[:, :2 * H])
        act[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
        act[:, 3 * H:] = _sigmoid(a[:, 3 * H:])
        c = act[:, H:2 * H] * c + act[:, :H] * act[:, 2 * H:3 * H]
        h = act[:, 3 * H:] * np.tanh(c)
        hs[:, t] = h
        cs[:, t] = c
    return hs, (x, Wx, Wh, hs, cs, acts)


def lstm_backward(dhs, cache):
    x, Wx, Wh, hs, cs, acts = cache
    B, T, H = hs.shape
    dgx = np.zeros_like(acts)
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((B, H), dtype=hs.dtype)
    dc_next = np.zeros((B, H), dtype=hs.dtype)
    for t in range(T - 1, -1, -1):
        i, f, g, o = (acts[:, t, k * H:(k + 1) * H] for k in range(4))
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1 - tc * tc)
        c_prev = cs[:, t - 1] if t else 0.0
        da = dgx[:, t]
        da[:, :H] = dc * g * i * (1 - i)
        da[:, H:2 * H] = dc * c_prev * f * (1 - f)
        da[:, 2 * H:3 * H] = dc * i * (1 - g * g)
        da[:, 3 * H:] = dh * tc * o * (1 - o)
        if t:
            dWh += hs[:, t - 1].T @ da
        dh_next = da @ Wh.T
        dc_next = dc * f
    flat = dgx.reshape(B * T, 4 * H)
    dWx = x.reshape(B * T, -1).T @ flat
    db = flat.sum(0)
    dx = dgx @ Wx.T
    return dx, dWx, dWh, db


def _gather_rows(x, idx):
    return x[np.arange(x.shape[0])[:, None], idx]


def _dropout_mask(rng, shape, rate, dtype):
    if not rate or rng is None:
        return None
    return ((rng.random(shape) >= rate) / (1.0 - rate)).astype(dtype)


# -- batches -----------------------------------------------------------------

@dataclass
class Batch:
    melody: np.ndarray   # (B, T) int
    meta: np.ndarray     # (B, T, META_DIM) float
    prev: np.ndarray     # (B, T) int, previous chord token per frame
    target: np.ndarray   # (B, T) int
    mask: np.ndarray     # (B, T) float
    lengths: np.ndarray  # (B,) int

    @property
    def rev_idx(self) -> np.ndarray:
        B, T = self.melody.shape
        t = np.arange(T)[None, :]
        L = self.lengths[:, None]
        return np.where(t < L, L - 1 - t, t)


def meta_features(enc: FrameEncoding, dtype=np.float64) -> np.ndarray:
    T = len(enc)
    out = np.zeros((T, META_DIM), dtype=dtype)
    out[np.arange(T), enc.beat] = 1
    out[np.arange(T), N_BEAT + enc.key + 7] = 1
    return out


def make_batch(encs: list[FrameEncoding], teacher=None, dtype=np.float64) -> Batch:
    """Pad encodings into a batch; ``teacher`` defaults to each encoding's own chords."""
    teacher = [e.chord for e in encs] if teacher is None else teacher
    B = len(encs)
    lengths = np.array([len(e) for e in encs])
    if (lengths <= 0).any():
        raise ContractError("empty sequence in batch")
    T = int(lengths.max())
    melody = np.zeros((B, T), dtype=np.int64)
    meta = np.zeros((B, T, META_DIM), dtype=dtype)
    target = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T), dtype=dtype)
    for k, (e, chords) in enumerate(zip(encs, teacher)):
        n = len(e)
        if len(chords) != n:
            raise ContractError("teacher chords and encoding differ in length")
        melody[k, :n] = e.melody
        meta[k, :n] = meta_features(e, dtype)
        target[k, :n] = chords
        mask[k, :n] = 1
    prev = np.zeros_like(target)
    prev[:, 1:] = target[:, :-1]
    return Batch(melody, meta, prev, target, mask, lengths)


# -- network -----------------------------------------------------------------

def _encoder_forward(p, name, x, batch, cfg, rng, caches):
    rev = batch.rev_idx
    B = x.shape[0]
    last = batch.lengths - 1
    ctx = None
    for b in range(cfg.encoder_blocks):
        pre = f"{name}.{b}"
        hf, cf = lstm_forward(x, p[f"{pre}.fwd.Wx"], p[f"{pre}.fwd.Wh"], p[f"{pre}.fwd.b"])
        hbr, cb = lstm_forward(_gather_rows(x, rev), p[f"{pre}.bwd.Wx"], p[f"{pre}.bwd.Wh"], p[f"{pre}.bwd.b"])
        hcat = np.concatenate([hf, _gather_rows(hbr, rev)], axis=-1)
        y = np.tanh(hcat @ p[f"{pre}.proj.W"] + p[f"{pre}.proj.b"])
        m = _dropout_mask(rng, y.shape, cfg.dropout, y.dtype)
        caches[pre] = (cf, cb, hcat, y, m)
        if b == cfg.encoder_blocks - 1:
            ctx = np.concatenate([hf[np.arange(B), last], hbr[np.arange(B), last]], axis=-1)
        x = y * m if m is not None else y
    return x, ctx


def _encoder_backward(p, g, name, dy, dctx, batch, cfg, caches):
    rev = batch.rev_idx
    B = dy.shape[0]
    last = batch.lengths - 1
    H = cfg.encoder_hidden
    for b in range(cfg.encoder_blocks - 1, -1, -1):
        pre = f"{name}.{b}"
        cf, cb, hcat, y, m = caches[pre]
        if m is not None:
            dy = dy * m
        da = dy * (1 - y * y)
        g[f"{pre}.proj.W"] += hcat.reshape(-1, hcat.shape[-1]).T @ da.reshape(-1, da.shape[-1])
        g[f"{pre}.proj.b"] += da.sum((0, 1))
        dhcat = da @ p[f"{pre}.proj.W"].T
        dhf = dhcat[..., :H].copy()
        dhbr = _gather_rows(dhcat[..., H:], rev)
        if b == cfg.encoder_blocks - 1:
            dhf[np.arange(B), last] += dctx[:, :H]
            dhbr[np.arange(B), last] += dctx[:, H:]
        dxf, dWx, dWh, db = lstm_backward(dhf, cf)
        g[f"{pre}.fwd.Wx"] += dWx
        g[f"{pre}.fwd.Wh"] += dWh
        g[f"{pre}.fwd.b"] += db
        dxr, dWx, dWh, db = lstm_backward(dhbr, cb)
        g[f"{pre}.bwd.Wx"] += dWx
        g[f"{pre}.bwd.Wh"] += dWh
        g[f"{pre}.bwd.b"] += db
        dy = dxf + _gather_rows(dxr, rev)
    return dy


def forward_batch(w: ModelWeights, batch: Batch, rng=None):
    """Teacher-forced logits ``(B, T, V)`` and the cache for :func:`backward_batch`.

    Dropout is active iff ``rng`` is given.
    """
    p, cfg = w.tensors, w.config
    dtype = w.dtype
    B, T = batch.melody.shape
    caches: dict = {}
    x_mel = np.zeros((B, T, N_MELODY), dtype=dtype)
    np.put_along_axis(x_mel, batch.melody[..., None], 1, axis=-1)
    y_mel, ctx_mel = _encoder_forward(p, "melody", x_mel, batch, cfg, rng, caches)
    y_meta, ctx_meta = _encoder_forward(p, "meta", batch.meta.astype(dtype), batch, cfg, rng, caches)
    ctx = np.concatenate([ctx_mel, ctx_meta], axis=-1)
    emb = p["embed"][batch.prev]
    x = np.concatenate([np.broadcast_to(ctx[:, None], (B, T, ctx.shape[-1])), y_mel, y_meta, emb], axis=-1)
    dec = []
    for layer in range(cfg.decoder_layers):
        pre = f"decoder.{layer}"
        h, c = lstm_forward(x, p[f"{pre}.Wx"], p[f"{pre}.Wh"], p[f"{pre}.b"])
        m = _dropout_mask(rng, h.shape, cfg.dropout, dtype)
        dec.append((c, m))
        x = h * m if m is not None else h
    logits = x @ p["out.W"] + p["out.b"]
    caches["decoder"] = dec
    caches["top"] = x
    return logits, caches


def backward_batch(w: ModelWeights, batch: Batch, caches, dlogits) -> dict[str, np.ndarray]:
    p, cfg = w.tensors, w.config
    g = {k: np.zeros_like(v) for k, v in p.items()}
    B, T, V = dlogits.shape
    top = caches["top"]
    g["out.W"] = top.reshape(-1, top.shape[-1]).T @ dlogits.reshape(-1, V)
    g["out.b"] = dlogits.sum((0, 1))
    dx = dlogits @ p["out.W"].T
    for layer in range(cfg.decoder_layers - 1, -1, -1):
        pre = f"decoder.{layer}"
        c, m = caches["decoder"][layer]
        if m is not None:
            dx = dx * m
        dx, dWx, dWh, db = lstm_backward(dx, c)
        g[f"{pre}.Wx"] += dWx
        g[f"{pre}.Wh"] += dWh
        g[f"{pre}.b"] += db
    C, P = cfg.context_dim, cfg.projection
    dctx = dx[..., :C].sum(1)
    dmel = dx[..., C:C + P]
    dmeta = dx[..., C + P:C + 2 * P]
    demb = dx[..., C + 2 * P:]
    np.add.at(g["embed"], batch.prev.reshape(-1), demb.reshape(-1, demb.shape[-1]))
    half = C // 2
    _encoder_backward(p, g, "melody", dmel, dctx[:, :half], batch, cfg, caches)
    _encoder_backward(p, g, "meta", dmeta, dctx[:, half:], batch, cfg, caches)
    return g


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def masked_cross_entropy(logits, batch: Batch, scale: float = 1.0):
    """Mean per-frame cross-entropy, its gradient w.r.t. logits, and correct-frame count."""
    B, T, V = logits.shape
    z = logits - logits.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    n = batch.mask.sum()
    nll = -np.take_along_axis(logp, batch.target[..., None], -1)[..., 0]
    loss = float((nll * batch.mask).sum() / n) * scale
    d = np.exp(logp)
    np.put_along_axis(d, batch.target[..., None], np.take_along_axis(d, batch.target[..., None], -1) - 1, -1)
    d *= (batch.mask / n * scale)[..., None]
    correct = int(((logits.argmax(-1) == batch.target) * batch.mask).sum())
    return loss, d.astype(logits.dtype), correct


def loss_and_grads(w: ModelWeights, batch: Batch, rng=None, scale: float = 1.0):
    logits, caches = forward_batch(w, batch, rng)
    loss, dlogits, correct = masked_cross_entropy(logits, batch, scale)
    return loss, backward_batch(w, batch, caches, dlogits), correct


# -- stepwise decoding ---------------------------------------------------------

@dataclass
class DecoderState:
    ctx: np.ndarray      # (C,)
    frames: np.ndarray   # (T, 2P) per-frame encoder outputs
    h: list = field(default_factory=list)
    c: list = field(default_factory=list)
    t: int = 0


def start_decoder(w: ModelWeights, enc: FrameEncoding) -> DecoderState:
    batch = make_batch([enc], dtype=w.dtype)
    cfg = w.config
    caches: dict = {}
    B, T = batch.melody.shape
    x_mel = np.zeros((B, T, N_MELODY), dtype=w.dtype)
    np.put_along_axis(x_mel, batch.melody[..., None], 1, axis=-1)
    y_mel, ctx_mel = _encoder_forward(w.tensors, "melody", x_mel, batch, cfg, None, caches)
    y_meta, ctx_meta = _encoder_forward(w.tensors, "meta", batch.meta.astype(w.dtype), batch, cfg, None, caches)
    D = cfg.decoder_hidden
    zeros = [np.zeros(D, dtype=w.dtype) for _ in range(cfg.decoder_layers)]
    return DecoderState(
        ctx=np.concatenate([ctx_mel[0], ctx_meta[0]]),
        frames=np.concatenate([y_mel[0], y_meta[0]], axis=-1),
        h=list(zeros), c=[z.copy() for z in zeros])


def decoder_step(w: ModelWeights, state: DecoderState, prev_token: int) -> np.ndarray:
    """Advance one frame given the previous chord token; returns logits ``(V,)``."""
    p, cfg = w.tensors, w.config
    if state.t >= len(state.frames):
        raise ContractError("decoder stepped past the end of the sequence")
    x = np.concatenate([state.ctx, state.frames[state.t], p["embed"][prev_token]])
    H = cfg.decoder_hidden
    for layer in range(cfg.decoder_layers):
        pre = f"decoder.{layer}"
        a = x @ p[f"{pre}.Wx"] + state.h[layer] @ p[f"{pre}.Wh"] + p[f"{pre}.b"]
        i, f = _sigmoid(a[:H]), _sigmoid(a[H:2 * H])
        g, o = np.tanh(a[2 * H:3 * H]), _sigmoid(a[3 * H:])
        state.c[layer] = f * state.c[layer] + i * g
        state.h[layer] = o * np.tanh(state.c[layer])
        x = state.h[layer]
    state.t += 1
    return x @ p["out.W"] + p["out.b"]


def forward(w: ModelWeights, enc: FrameEncoding, teacher_chords=None,
            dropout_on: bool = False, seed: int = 0) -> np.ndarray:
    """Per-frame logits ``(T, V)``.

    With ``teacher_chords`` the decoder is fed the ground-truth previous
    tokens; otherwise it feeds back its own greedy choice.
    """
    if teacher_chords is not None:
        if len(teacher_chords) != len(enc):
            raise ContractError("teacher_chords length differs from encoding length")
        rng = np.random.default_rng(seed) if dropout_on else None
        logits, _ = forward_batch(w, make_batch([enc], [np.asarray(teacher_chords)], w.dtype), rng)
        return logits[0]
    if dropout_on:
        raise ContractError("dropout is only supported with teacher forcing")
    state = start_decoder(w, enc)
    out = np.zeros((len(enc), w.config.chord_vocab_size), dtype=w.dtype)
    prev = 0
    for t in range(len(enc)):
        out[t] = decoder_step(w, state, prev)
        prev = int(out[t].argmax())
    return out


# -- training ------------------------------------------------------------------

@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_valid_loss: float = float("inf")
    valid_oov_frames: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class EarlyStopping:
    """Track validation loss; ``update`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


class Adam:
    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(params[k].dtype)


def clip_grads(grads, max_norm):
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def evaluate_loss(w: ModelWeights, encs, batch_size: int) -> tuple[float, float]:
    """Teacher-forced mean frame loss and frame accuracy, dropout off."""
    total, correct, frames = 0.0, 0, 0
    for k in range(0, len(encs), batch_size):
        batch = make_batch(encs[k:k + batch_size], dtype=w.dtype)
        logits, _ = forward_batch(w, batch)
        loss, _, c = masked_cross_entropy(logits, batch)
        n = int(batch.mask.sum())
        total += loss * n
        correct += c
        frames += n
    return total / frames, correct / frames


def _sheets(x):
    return list(x.sheets) if hasattr(x, "sheets") else list(x)


def train(train_sheets, valid_sheets, cfg: ModelConfig, vocab: ChordVocab | None = None,
          dtype=np.float32, progress=None) -> tuple[ModelWeights, TrainReport]:
    """Fit the model with teacher forcing and early stopping on validation loss.

    ``train_sheets``/``valid_sheets`` are lead sheets (or corpora of them).
    The vocabulary is built from the training side unless given.  Returns the
    weights of the best validation epoch.
    """
    train_sheets, valid_sheets = _sheets(train_sheets), _sheets(valid_sheets)
    if not train_sheets or not valid_sheets:
        raise ContractError("training and validation sets must be non-empty")
    vocab = vocab or build_vocab(train_sheets)
    cfg = replace(cfg, chord_vocab_size=len(vocab))
    train_encs = [encode(ls, vocab) for ls in train_sheets]
    valid_encs = [encode(ls, vocab, oov_as_rest=True) for ls in valid_sheets]
    report = TrainReport(valid_oov_frames=sum(e.oov_frames for e in valid_encs))
    if report.valid_oov_frames:
        log.warning("%d validation frames hold out-of-vocabulary chords; encoded as rest",
                    report.valid_oov_frames)

    w = init_weights(cfg, vocab, dtype=dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(w.tensors, lr=cfg.learning_rate)
    stopper = EarlyStopping(cfg.patience)
    best = w.copy()
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_encs))
        total, correct, frames = 0.0, 0, 0
        for k in range(0, len(order), cfg.batch_size):
            batch = make_batch([train_encs[i] for i in order[k:k + cfg.batch_size]], dtype=dtype)
            loss, grads, c = loss_and_grads(w, batch, rng if cfg.dropout else None)
            clip_grads(grads, cfg.clip_norm)
            opt.step(w.tensors, grads)
            n = int(batch.mask.sum())
            total += loss * n
            correct += c
            frames += n
        v_loss, v_acc = evaluate_loss(w, valid_encs, cfg.batch_size)
        report.epochs.append({"epoch": epoch, "train_loss": total / frames,
                              "train_acc": correct / frames,
                              "valid_loss": v_loss, "valid_acc": v_acc})
        if progress:
            progress(report.epochs[-1])
        stop = stopper.update(epoch, v_loss)
        if stopper.best_epoch == epoch:
            best = w.copy()
        report.stopped_epoch = epoch
        if stop:
            break
    report.best_epoch = stopper.best_epoch
    report.best_valid_loss = stopper.best
    if not best.all_finite():
        raise FloatingPointError("training produced non-finite weights")
    return best, report


# -- gradient verification -------------------------------------------------------

def numeric_grad(w: ModelWeights, batch: Batch, name: str, index, eps: float = 1e-5,
                 scale: float = 1.0) -> float:
    arr = w.tensors[name]
    orig = arr[index]
    arr[index] = orig + eps
    lp = masked_cross_entropy(forward_batch(w, batch)[0], batch, scale)[0]
    arr[index] = orig - eps
    lm = masked_cross_entropy(forward_batch(w, batch)[0], batch, scale)[0]
    arr[index] = orig
    return (lp - lm) / (2 * eps)


def grad_check(w: ModelWeights, batch: Batch, samples_per_tensor: int = 8,
               eps: float = 1e-5, seed: int = 0) -> tuple[float, dict[str, float]]:
    """Compare analytic gradients with central differences on sampled entries.

    Every tensor is checked; for each, the entries with the largest analytic
    gradient plus random entries are perturbed.  Returns the maximum
    relative error ``|a - n| / (|a| + |n|)`` (vector norms per tensor) and
    the per-tensor errors.
    """
    if w.dtype != np.float64:
        raise ContractError("gradient checks need float64 weights")
    rng = np.random.default_rng(seed)
    _, grads, _ = loss_and_grads(w, batch)
    errors = {}
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite analytic gradient in {name}")
        flat = np.abs(g).ravel()
        k = min(samples_per_tensor, flat.size)
        top = np.argsort(-flat, kind="stable")[:k // 2 + 1]
        rand = rng.choice(flat.size, size=k - len(top) if flat.size > len(top) else 0, replace=False)
        picks = np.unique(np.concatenate([top, rand]).astype(np.int64))
        analytic = np.array([g.flat[i] for i in picks])
        numeric = np.array([numeric_grad(w, batch, name, np.unravel_index(i, g.shape), eps)
                            for i in picks])
        denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        errors[name] = float(np.linalg.norm(analytic - numeric) / denom) if denom > 1e-12 else 0.0
    return max(errors.values()), errors

