"""Toy physics-informed acoustic model.

Synthetic emotion-indexed tones are hard-clipped, framed, passed through a
fixed log-magnitude spectral front end and a trainable two-layer tanh
encoder.  Softmax attention pools the latent trajectory into a single vector
that feeds a 7-way emotion head.  A :class:`~affectrisk.physics.PressureOperator`
reads a pressure track off the same trajectory, and the training objective
is ``cross_entropy + lam * phys_loss``.

All gradients are derived by hand and batched over waveforms.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .asl import EMOTIONS, EmotionLabel
from .errors import DegenerateDataset, TooFewFrames
from .physics import (
    AcousticConstants,
    PressureOperator,
    _rel_err,
    _stencil_adjoint,
    second_time_derivative,
)

N_CLASSES = len(EMOTIONS)

# (fundamental Hz, relative jitter, amplitude) in EMOTIONS order
VOICE_PARAMS = {
    EmotionLabel.HAPPINESS: (440.0, 0.010, 0.70),
    EmotionLabel.SURPRISE: (880.0, 0.030, 0.80),
    EmotionLabel.NEUTRAL: (220.0, 0.005, 0.50),
    EmotionLabel.SADNESS: (150.0, 0.004, 0.35),
    EmotionLabel.FEAR: (1200.0, 0.050, 0.75),
    EmotionLabel.ANGER: (620.0, 0.020, 0.90),
    EmotionLabel.DISGUST: (310.0, 0.015, 0.55),
}


@dataclass(frozen=True)
class WaveConfig:
    duration: float = 0.5
    sample_rate: int = 8000
    clip_level: float = 0.8
    noise_sd: float = 0.05
    amplitude: float | None = None  # overrides the emotion amplitude when set
    frame_size: int = 64
    hop: int = 32

    def __post_init__(self):
        if not 0 < self.clip_level <= 1:
            raise ValueError("clip_level must lie in (0, 1]")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ValueError("duration and sample_rate must be positive")
        if self.frame_size < 2 or self.hop < 1:
            raise ValueError("frame_size >= 2 and hop >= 1 required")
        if self.noise_sd < 0 or (self.amplitude is not None and self.amplitude < 0):
            raise ValueError("noise_sd and amplitude must be nonnegative")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass(frozen=True)
class ToyWaveform:
    samples: np.ndarray
    sample_rate: int
    true_emotion: EmotionLabel
    clip_level: float

    @property
    def clipped_fraction(self) -> float:
        return float(np.mean(np.abs(self.samples) >= self.clip_level))


def synth_waveform(emotion: EmotionLabel, seed, config: WaveConfig = WaveConfig()) -> ToyWaveform:
    """Jittered two-harmonic tone plus white noise, hard-clipped at ``clip_level``."""
    f0, jitter, amp = VOICE_PARAMS[emotion]
    if config.amplitude is not None:
        amp = config.amplitude
    rng = np.random.default_rng(seed)
    n = config.n_samples
    sr = config.sample_rate
    # slowly wandering pitch: smoothed white noise, unit variance before scaling
    wander = np.convolve(rng.standard_normal(n + 63), np.ones(64) / 8.0, mode="valid")
    freq = f0 * (1.0 + rng.uniform(-0.03, 0.03)) * (1.0 + jitter * wander)
    phase = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.cumsum(freq) / sr
    tone = amp * (np.sin(phase) + 0.3 * np.sin(2 * phase)) / 1.3
    x = tone + config.noise_sd * rng.standard_normal(n)
    x = np.clip(x, -config.clip_level, config.clip_level)
    return ToyWaveform(x, sr, emotion, config.clip_level)


def n_frames(n_samples: int, frame_size: int, hop: int) -> int:
    # frames start at t*hop for t < (n - frame)/hop; 4000 samples at 64/32 give 123
    return max(0, (n_samples - frame_size) // hop)


def frame_features(samples, frame_size: int = 64, hop: int = 32) -> np.ndarray:
    """Fixed front end: Hann-windowed log(1 + |rfft|) per frame, shape (T, frame//2 + 1)."""
    x = np.asarray(samples, dtype=np.float64)
    T = n_frames(x.shape[0], frame_size, hop)
    if T < 3:
        raise TooFewFrames(f"need at least 3 frames, got {T}")
    idx = np.arange(T)[:, None] * hop + np.arange(frame_size)[None, :]
    frames = x[idx] * np.hanning(frame_size)
    return np.log1p(np.abs(np.fft.rfft(frames, axis=1)))


# -- model ---------------------------------------------------------------------

_PARAMS = ("We1", "be1", "We2", "be2", "u", "Wc", "bc")
_MAGIC = b"PIAM"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")  # magic, version, frame, hop, F, He, D


@dataclass
class ToyModel:
    We1: np.ndarray  # (He, F)
    be1: np.ndarray
    We2: np.ndarray  # (D, He)
    be2: np.ndarray
    u: np.ndarray  # attention scoring vector (D,)
    Wc: np.ndarray  # (7, D)
    bc: np.ndarray
    pressure_op: PressureOperator
    frame_size: int = 64
    hop: int = 32

    @classmethod
    def init(cls, n_features: int, hidden: int = 16, latent: int = 8, op_hidden: int = 8,
             rng=None, frame_size: int = 64, hop: int = 32) -> "ToyModel":
        rng = np.random.default_rng(rng)
        return cls(
            rng.normal(0, 1 / np.sqrt(n_features), (hidden, n_features)),
            np.zeros(hidden),
            rng.normal(0, 1 / np.sqrt(hidden), (latent, hidden)),
            np.zeros(latent),
            rng.normal(0, 1 / np.sqrt(latent), latent),
            rng.normal(0, 1 / np.sqrt(latent), (N_CLASSES, latent)),
            np.zeros(N_CLASSES),
            PressureOperator.init(latent, op_hidden, rng),
            frame_size,
            hop,
        )

    @property
    def latent(self) -> int:
        return self.We2.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        d = {k: getattr(self, k) for k in _PARAMS}
        op = self.pressure_op
        d.update(op_W1=op.W1, op_b1=op.b1, op_w2=op.w2, op_b2=np.array([op.b2]))
        return d

    def to_vector(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params().values()])

    def with_vector(self, vec) -> "ToyModel":
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = {}, 0
        for k, v in self.params().items():
            out[k] = vec[pos:pos + v.size].reshape(v.shape).copy()
            pos += v.size
        if pos != vec.size:
            raise ValueError("parameter vector length mismatch")
        op = PressureOperator(out.pop("op_W1"), out.pop("op_b1"), out.pop("op_w2"), out.pop("op_b2")[0])
        return ToyModel(**out, pressure_op=op, frame_size=self.frame_size, hop=self.hop)

    def copy(self) -> "ToyModel":
        return self.with_vector(self.to_vector())

    def to_bytes(self) -> bytes:
        He, F = self.We1.shape
        head = _HEADER.pack(_MAGIC, _VERSION, self.frame_size, self.hop, F, He, self.latent)
        body = np.concatenate([getattr(self, k).ravel() for k in _PARAMS]).astype("<f8").tobytes()
        return head + body + self.pressure_op.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ToyModel":
        magic, version, frame, hop, F, He, D = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != _VERSION:
            raise ValueError("not a toy-model file")
        shapes = [(He, F), (He,), (D, He), (D,), (D,), (N_CLASSES, D), (N_CLASSES,)]
        n = sum(int(np.prod(s)) for s in shapes)
        flat = np.frombuffer(data, dtype="<f8", count=n, offset=_HEADER.size).astype(np.float64)
        arrays, pos = [], 0
        for s in shapes:
            size = int(np.prod(s))
            arrays.append(flat[pos:pos + size].reshape(s).copy())
            pos += size
        op, rest = PressureOperator.read_block(data[_HEADER.size + 8 * n:])
        if rest or op.dim != D:
            raise ValueError("trailing or inconsistent operator block")
        return cls(*arrays, pressure_op=op, frame_size=frame, hop=hop)


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class _Cache:
    X: np.ndarray
    A1: np.ndarray
    H: np.ndarray
    alpha: np.ndarray
    v: np.ndarray
    P: np.ndarray
    p: np.ndarray
    a_op: np.ndarray


def _forward_batch(model: ToyModel, X: np.ndarray) -> _Cache:
    """X: (B, T, F) front-end features."""
    A1 = np.tanh(X @ model.We1.T + model.be1)
    H = np.tanh(A1 @ model.We2.T + model.be2)
    alpha = _softmax(H @ model.u, axis=1)
    v = np.einsum("bt,btd->bd", alpha, H)
    P = _softmax(v @ model.Wc.T + model.bc)
    B, T, D = H.shape
    p, a_op = model.pressure_op.forward(H.reshape(B * T, D))
    return _Cache(X, A1, H, alpha, v, P, p.reshape(B, T), a_op)


def _phys_terms(p: np.ndarray, k: AcousticConstants):
    """Per-waveform mean squared residual and its gradient w.r.t. p, for p of shape (B, T)."""
    pt = p.T
    r = k.linear_coef * second_time_derivative(pt, k.dt) + k.nonlinear_coef * second_time_derivative(pt * pt, k.dt)
    m = r.shape[0]
    losses = np.sum(r * r, axis=0) / m
    back = _stencil_adjoint(2.0 * r / m, k.dt)
    dp = k.linear_coef * back + k.nonlinear_coef * 2.0 * pt * back
    return losses, dp.T


def _loss_and_grad(model: ToyModel, X, y, lam: float, k: AcousticConstants, need_grad: bool = True):
    c = _forward_batch(model, X)
    B, T, D = c.H.shape
    rows = np.arange(B)
    l_task = float(-np.mean(np.log(np.maximum(c.P[rows, y], 1e-300))))
    phys, dp_each = _phys_terms(c.p, k)
    l_phys = float(np.mean(phys))
    if not need_grad:
        return l_task, l_phys, c, None
    dlog = c.P.copy()
    dlog[rows, y] -= 1.0
    dlog /= B
    g = {"Wc": dlog.T @ c.v, "bc": dlog.sum(axis=0)}
    dv = dlog @ model.Wc
    dH = c.alpha[:, :, None] * dv[:, None, :]
    dalpha = c.H @ dv[:, :, None]
    dalpha = dalpha[:, :, 0]
    ds = c.alpha * (dalpha - np.sum(c.alpha * dalpha, axis=1, keepdims=True))
    g["u"] = np.einsum("bt,btd->d", ds, c.H)
    dH += ds[:, :, None] * model.u
    dp = (lam / B) * dp_each
    og, dH_op = model.pressure_op.backward(c.H.reshape(B * T, D), c.a_op, dp.reshape(-1))
    dH += dH_op.reshape(B, T, D)
    dZ2 = dH * (1.0 - c.H * c.H)
    g["We2"] = np.einsum("btd,bth->dh", dZ2, c.A1)
    g["be2"] = dZ2.sum(axis=(0, 1))
    dZ1 = (dZ2 @ model.We2) * (1.0 - c.A1 * c.A1)
    g["We1"] = np.einsum("bth,btf->hf", dZ1, X)
    g["be1"] = dZ1.sum(axis=(0, 1))
    g.update(op_W1=og["W1"], op_b1=og["b1"], op_w2=og["w2"], op_b2=np.array([og["b2"]]))
    vec = np.concatenate([g[name].ravel() for name in model.params()])
    return l_task, l_phys, c, vec


def forward(model: ToyModel, wave: ToyWaveform, frame_size: int | None = None, hop: int | None = None):
    """Latent trajectory (T, D), emotion probabilities (7,) and pressure track (T,)."""
    X = frame_features(wave.samples, frame_size or model.frame_size, hop or model.hop)
    c = _forward_batch(model, X[None])
    return c.H[0], c.P[0], c.p[0]


def attention_weights(model: ToyModel, wave: ToyWaveform) -> np.ndarray:
    X = frame_features(wave.samples, model.frame_size, model.hop)
    return _forward_batch(model, X[None]).alpha[0]


def classify(model: ToyModel, wave: ToyWaveform) -> EmotionLabel:
    """Argmax of the emotion probabilities; ties go to the lowest label index."""
    _, probs, _ = forward(model, wave)
    return EMOTIONS[int(np.argmax(probs))]


# -- training ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainHyper:
    lam: float = 0.0
    epochs: int = 30
    lr: float = 0.05
    batch: int = 20
    seed: int = 0
    momentum: float = 0.9
    hidden: int = 16
    latent: int = 8
    op_hidden: int = 8

    def __post_init__(self):
        if self.lam < 0 or self.epochs < 0 or self.lr <= 0 or self.batch < 1:
            raise ValueError("need lam >= 0, epochs >= 0, lr > 0, batch >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    l_task: float
    l_phys: float
    l_total: float
    accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    diverged: bool = False

    @property
    def final(self) -> EpochStats | None:
        return self.epochs[-1] if self.epochs else None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.epochs)


def _stack(dataset, frame_size, hop):
    X = np.stack([frame_features(w.samples, frame_size, hop) for w in dataset])
    y = np.array([w.true_emotion.index for w in dataset])
    return X, y


def evaluate(model: ToyModel, dataset, lam: float = 0.0, k: AcousticConstants = AcousticConstants()) -> EpochStats:
    X, y = _stack(dataset, model.frame_size, model.hop)
    l_task, l_phys, c, _ = _loss_and_grad(model, X, y, lam, k, need_grad=False)
    acc = float(np.mean(np.argmax(c.P, axis=1) == y))
    return EpochStats(0, l_task, l_phys, l_task + lam * l_phys, acc)


def train(dataset, hyper: TrainHyper = TrainHyper(), k: AcousticConstants = AcousticConstants(),
          frame_size: int = 64, hop: int = 32):
    """Mini-batch momentum descent on ``L_task + lam * L_phys``; returns (model, report)."""
    dataset = list(dataset)
    if len({w.true_emotion for w in dataset}) < 2:
        raise DegenerateDataset("training set must cover at least two emotion classes")
    X, y = _stack(dataset, frame_size, hop)
    rng = np.random.default_rng(hyper.seed)
    model = ToyModel.init(X.shape[2], hyper.hidden, hyper.latent, hyper.op_hidden, rng, frame_size, hop)
    theta = model.to_vector()
    vel = np.zeros_like(theta)
    report = TrainReport()
    prev = None
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(y))
        for start in range(0, len(y), hyper.batch):
            idx = order[start:start + hyper.batch]
            _, _, _, grad = _loss_and_grad(model, X[idx], y[idx], hyper.lam, k)
            vel = hyper.momentum * vel - hyper.lr * grad
            theta = theta + vel
            model = model.with_vector(theta)
        l_task, l_phys, c, _ = _loss_and_grad(model, X, y, hyper.lam, k, need_grad=False)
        total = l_task + hyper.lam * l_phys
        acc = float(np.mean(np.argmax(c.P, axis=1) == y))
        report.epochs.append(EpochStats(epoch, l_task, l_phys, total, acc))
        if not np.isfinite(total) or (prev is not None and total > 1.1 * prev):
            report.diverged = True
        prev = total
    return model, report


def make_dataset(n: int, seed: int = 0, config: WaveConfig = WaveConfig()) -> list[ToyWaveform]:
    """``n`` waveforms cycling through the seven emotions."""
    return [synth_waveform(EMOTIONS[i % N_CLASSES], [seed, i], config) for i in range(n)]


def gradient_check(seed: int = 0, T: int = 5, D: int = 4, batch: int = 3, lam: float = 0.5,
                   n_features: int = 6, step: float = 1e-5, k: AcousticConstants = AcousticConstants()) -> float:
    """Max relative error of the hand-derived ``L_total`` gradient against
    symmetric finite differences on a tiny random instance."""
    rng = np.random.default_rng(seed)
    model = ToyModel.init(n_features, hidden=5, latent=D, op_hidden=3, rng=rng)
    X = rng.normal(0, 1, (batch, T, n_features))
    y = rng.integers(0, N_CLASSES, batch)

    def total(m):
        lt, lp, _, _ = _loss_and_grad(m, X, y, lam, k, need_grad=False)
        return lt + lam * lp

    _, _, _, grad = _loss_and_grad(model, X, y, lam, k)
    theta = model.to_vector()
    num = np.empty_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += step
        dn[i] -= step
        num[i] = (total(model.with_vector(up)) - total(model.with_vector(dn))) / (2 * step)
    return _rel_err(grad, num)
