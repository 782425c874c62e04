"""Toy F0 predictor training on synthetic clips.

The dataset is small enough to be used as one full batch, so a run is
deterministic given the seed.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import PipelineConfig
from .layers import Network, build_f0_net, load_checkpoint, resample_linear, save_checkpoint
from .losses import VoicedMask, build_voiced_mask, f0_loss, spectral_recon_loss
from .resynth import bank_from_config, frame_gain
from .spectral import SAMPLERATE, conditioning_params, mel_spectrogram
from .synth import voiced_clip
from .vtf import apply_vtf, cepstral_envelope_of
from .wavetable import F0Contour, WavetableBank, synthesize_excitation


@dataclass
class Example:
    audio: np.ndarray
    f0: np.ndarray              # audio rate, 0 = unvoiced
    voicing: np.ndarray
    mel: np.ndarray             # [frames, 80], natural-log magnitudes
    mask: VoicedMask


def make_example(audio, f0, voicing=None, samplerate: int = SAMPLERATE) -> Example:
    audio = np.asarray(audio, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    voicing = f0 > 0 if voicing is None else np.asarray(voicing, bool)
    mel = mel_spectrogram(Tensor(audio, dtype=np.float64), samplerate).numpy()
    return Example(audio, f0, voicing, mel, build_voiced_mask(voicing, samplerate))


def synthetic_dataset(n_clips: int = 20, n_samples: int = 9600, seed: int = 0) -> list[Example]:
    """Vowel clips with smooth F0 contours, each with one unvoiced gap."""
    rng = np.random.default_rng(seed)
    return [make_example(*voiced_clip(n_samples, rng)) for _ in range(n_clips)]


@dataclass
class Batch:
    mel: np.ndarray             # [B, frames, 80], normalised
    target: np.ndarray          # [B, frames * upsampling]
    core: np.ndarray            # same shape, bool
    samples_per_point: float
    examples: list


def make_batch(examples: list[Example], upsampling: int, mel_mean: float, mel_std: float,
               hop: int = 240) -> Batch:
    frames = {e.mel.shape[0] for e in examples}
    if len(frames) != 1:
        raise ValueError("all clips in a batch need the same number of frames")
    n_frames = frames.pop()
    step = hop / upsampling
    grid = np.arange(n_frames * upsampling) * step
    targets, cores = [], []
    for e in examples:
        n = len(e.audio)
        targets.append(np.interp(grid, np.arange(n), e.f0))
        cores.append(e.mask.core[np.minimum(np.round(grid).astype(int), n - 1)])
    mel = (np.stack([e.mel for e in examples]) - mel_mean) / mel_std
    return Batch(mel, np.stack(targets), np.stack(cores), step, examples)


class Adam:
    """Adam over a name -> array dict; state is plain arrays so it checkpoints exactly."""

    def __init__(self, names, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.names = list(names)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for name in self.names:
            p, g = params[name], grads[name]
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            out[name] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out

    def save(self, path) -> None:
        arrays = {f"m/{k}": v for k, v in self.m.items()}
        arrays.update({f"v/{k}": v for k, v in self.v.items()})
        np.savez(path, t=np.array(self.t), **arrays)

    def load(self, path) -> None:
        with np.load(path) as z:
            self.t = int(z["t"])
            self.m = {k[2:]: z[k].copy() for k in z.files if k.startswith("m/")}
            self.v = {k[2:]: z[k].copy() for k in z.files if k.startswith("v/")}


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, report: dict):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step
        self.report = report


class BoundaryRecon:
    """Reconstruction loss restricted to the boundary regions B_v and B_u.

    Clips are concatenated into one signal. The predicted F0 drives the
    wavetable, gated by the target voicing, and the result goes through the
    target's own cepstral envelope and a fixed per-frame gain. Envelope and gain
    come from the oracle chain run on the target F0, so only the F0 path
    carries gradient.
    """

    def __init__(self, examples: list[Example], bank: WavetableBank, n_ceps: int = 160):
        self.bank = bank
        self.params = conditioning_params()
        self.n = len(examples[0].audio)
        audio = np.concatenate([e.audio for e in examples])
        f0 = np.concatenate([e.f0 for e in examples])
        voicing = np.concatenate([e.voicing for e in examples])
        self.gate = voicing.astype(np.float64)
        self.window = np.concatenate([e.mask.boundary for e in examples]).astype(np.float64)
        self.active = bool(self.window.any())
        p = self.params
        centres = np.minimum(np.arange(p.num_frames(len(audio))) * p.hop_size, len(audio) - 1)
        self.env = cepstral_envelope_of(audio, p, n_ceps, iterations=30,
                                        f0_frames=np.where(voicing, f0, 0.0)[centres])
        ref = synthesize_excitation(F0Contour(Tensor(f0 * self.gate, dtype=np.float64)), bank).data
        shaped = apply_vtf(Tensor(ref, dtype=np.float64), self.env, p).data
        self.gain = frame_gain(shaped, audio, p)
        self.target = audio * self.window

    def __call__(self, pred: Tensor, samples_per_point: float) -> Tensor:
        tracks = [resample_linear(pred[b], self.n, 1.0 / samples_per_point) for b in range(pred.shape[0])]
        f = ad.concat(tracks, axis=0) * self.gate
        exc = synthesize_excitation(F0Contour(f), self.bank)
        gen = apply_vtf(exc, self.env, self.params) * (self.gain * self.window)
        return spectral_recon_loss(self.target, gen).total


@dataclass
class TrainResult:
    net: Network
    losses: list = field(default_factory=list)
    f0_losses: list = field(default_factory=list)
    recon_losses: list = field(default_factory=list)
    masked_mae: float = math.nan
    boundary_recon: float = math.nan
    seconds: float = 0.0
    steps: int = 0
    mel_mean: float = 0.0
    mel_std: float = 1.0

    def to_dict(self) -> dict:
        return {"steps": self.steps, "seconds": self.seconds, "masked_mae_hz": self.masked_mae,
                "boundary_recon": self.boundary_recon, "final_loss": self.losses[-1] if self.losses else None,
                "n_parameters": self.net.n_parameters()}


def moving_average(x, width: int = 100) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < width:
        return np.array([x.mean()]) if len(x) else x
    c = np.concatenate([[0.0], np.cumsum(x)])
    return (c[width:] - c[:-width]) / width


def block_means(x, width: int = 100) -> np.ndarray:
    """Means of consecutive non-overlapping ``width``-step blocks."""
    x = np.asarray(x, dtype=np.float64)
    k = len(x) // width
    return x[:k * width].reshape(k, width).mean(1) if k else np.array([x.mean()])


def evaluate_mae(net: Network, batch: Batch) -> float:
    pred = net(batch.mel).data
    return float(np.abs(pred - batch.target)[batch.core].mean())


def _checkpoint(out_dir: Path, net: Network, opt: Adam, step: int, result: TrainResult) -> Path:
    base = out_dir / f"f0_step{step:06d}"
    save_checkpoint(net, base, {"step": step, "mel_mean": result.mel_mean, "mel_std": result.mel_std,
                                "losses": result.losses})
    opt.save(base.with_suffix(".adam.npz"))
    return base


def train_f0_toy(dataset: list[Example], cfg: PipelineConfig | None = None, *,
                 out_dir=None, resume=None, steps: int | None = None, log=None) -> TrainResult:
    """Full-batch Adam on the masked F0 loss.

    The reconstruction loss over the boundary regions is evaluated at every
    log step and at the end. With ``recon_every = k > 0`` it also joins the
    objective, weighted by ``recon_weight``, on every k-th step.

    ``resume`` is a checkpoint base path written by a previous run; training
    continues at the following step with the saved optimiser state.
    """
    cfg = cfg or PipelineConfig()
    tc, oc = cfg.train, cfg.optimizer
    steps = tc.steps if steps is None else steps
    dtype = tc.dtype
    if not dataset:
        raise ValueError("empty dataset")
    mels = np.stack([e.mel for e in dataset])
    start = 0
    if resume is not None:
        net, extra = load_checkpoint(resume)
        start = int(extra["step"])
        mel_mean, mel_std = float(extra["mel_mean"]), float(extra["mel_std"])
        history = list(extra.get("losses", []))
    else:
        net = build_f0_net(tc.f0_spec, cfg.wavetable.f0_min, cfg.wavetable.f0_max,
                           in_channels=cfg.mel.n_mels, seed=tc.seed, dtype=dtype)
        mel_mean, mel_std = float(mels.mean()), float(mels.std())
        history = []
    upsampling = net.config["upsampling"]
    batch = make_batch(dataset, upsampling, mel_mean, mel_std, cfg.mel.hop_size)
    recon = BoundaryRecon(dataset, bank_from_config(cfg), cfg.n_ceps)
    if recon is not None and not recon.active:
        recon = None

    opt = Adam(net.params.keys(), oc.lr, oc.beta1, oc.beta2, oc.eps)
    if resume is not None:
        opt.load(Path(resume).with_suffix(".adam.npz"))
    result = TrainResult(net, losses=history, mel_mean=mel_mean, mel_std=mel_std)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    for step in range(start + 1, start + steps + 1):
        params = net.parameters()
        with ad.Tape(dtype) as tape:
            pred = net(batch.mel)
            lf = f0_loss(batch.target, pred, batch.core)
            loss = lf * tc.f0_weight
            lr_val = math.nan
            if recon is not None and tc.recon_weight > 0 and tc.recon_every > 0 and (step - 1) % tc.recon_every == 0:
                lr_t = recon(pred, batch.samples_per_point)
                loss = loss + lr_t * tc.recon_weight
                lr_val = float(lr_t.data)
            grads = tape.grad(loss, params)
        logging_step = step % tc.log_every == 0 or step == start + 1
        if recon is not None and logging_step and math.isnan(lr_val):
            with ad.Tape(dtype):
                lr_val = float(recon(pred, batch.samples_per_point).data)
        value = float(loss.data)
        if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
            report = {"step": step, "loss": value, "last_finite": result.losses[-1] if result.losses else None}
            if out_dir is not None:
                (out_dir / "diverged.json").write_text(json.dumps(report, indent=2))
            raise TrainingDiverged(step, report)
        result.losses.append(value)
        result.f0_losses.append(float(lf.data))
        result.recon_losses.append(lr_val)
        new = opt.step({k: p.data for k, p in net.params.items()}, dict(zip(net.params.keys(), grads)))
        net = net.with_params(new)
        if log is not None and logging_step:
            log(f"step {step:6d}  loss {value:.4f}  L_F0 {float(lf.data):.3f} Hz  L_R(boundary) {lr_val:.4f}")
        if out_dir is not None and tc.checkpoint_every and step % tc.checkpoint_every == 0:
            result.net = net
            _checkpoint(out_dir, net, opt, step, result)

    result.net = net
    result.steps = start + steps
    result.seconds = time.perf_counter() - t0
    result.masked_mae = evaluate_mae(net, batch)
    if recon is not None:
        with ad.Tape("float64"):
            result.boundary_recon = float(recon(net(batch.mel), batch.samples_per_point).data)
    if out_dir is not None:
        _checkpoint(out_dir, net, opt, result.steps, result)
        with open(out_dir / "loss_curve.csv", "w") as fh:
            fh.write("step,loss\n")
            for i, v in enumerate(result.losses, 1):
                fh.write(f"{i},{v!r}\n")
        (out_dir / "metrics.json").write_text(json.dumps(result.to_dict(), indent=2))
    return result


def load_dataset_dir(path, samplerate: int = SAMPLERATE) -> list[Example]:
    """Pairs ``name.wav`` with ``name.csv`` (``time_s,f0_hz``) from a directory.

    Clips are trimmed to the shortest one so they batch together.
    """
    from .audio import f0_to_audio_rate, read_f0_csv, read_wav

    path = Path(path)
    if not path.is_dir():
        raise ValueError(f"{path} is not a directory")
    wavs = sorted(path.glob("*.wav"))
    pairs = [(w, w.with_suffix(".csv")) for w in wavs if w.with_suffix(".csv").exists()]
    if not pairs:
        raise ValueError(f"{path}: no <name>.wav/<name>.csv pairs")
    clips = []
    for w, c in pairs:
        audio = read_wav(w).samples
        t, f = read_f0_csv(c)
        clips.append((audio, f0_to_audio_rate(t, f, len(audio), samplerate)))
    n = min(len(a) for a, _ in clips)
    return [make_example(a[:n], f[:n], samplerate=samplerate) for a, f in clips]
