"""Teacher-alignment training for the sensor encoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..cli.checkpoint import Checkpoint, load_module_state, module_state
from ..numerics import Adam, Rng
from .model import EncoderConfig, SensorEncoder, alignment_loss
from .teacher import TeacherError


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainSettings:
    lr: float = 2e-4
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    reg_weight: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    min_delta: float = 1e-4
    early_stopping: bool = True


@dataclass
class EncoderRun:
    model: SensorEncoder
    log: dict = field(default_factory=dict)
    checkpoint: Checkpoint | None = None


def stack_clips(clips, modalities):
    return {m: np.stack([c.streams[m] for c in clips]) for m in modalities}


def _targets(clips, teacher):
    out = []
    for c in clips:
        try:
            out.append(teacher.lookup(c))
        except TeacherError as exc:
            raise TeacherError(f"missing teacher embedding for training clip {c.clip_id}: {exc}") from None
    return np.stack(out)


def mean_loss(model, inputs, targets, batch_size=64):
    """Mean per-sample squared distance in eval mode."""
    total = 0.0
    n = len(targets)
    for i in range(0, n, batch_size):
        sl = slice(i, i + batch_size)
        pred = model.encode({m: x[sl] for m, x in inputs.items()})
        total += alignment_loss(pred, targets[sl])[0]
    return total / n


def encoder_checkpoint(model: SensorEncoder, seed: int, log: dict | None = None, parent=None) -> Checkpoint:
    tensors, steps = module_state(model)
    return Checkpoint("encoder", model.cfg.to_json(), tensors, "encoder", seed, parent,
                      {"steps": steps, "log": log or {}})


def encoder_from_checkpoint(ck: Checkpoint) -> SensorEncoder:
    model = SensorEncoder(EncoderConfig.from_json(ck.config), Rng(ck.seed))
    load_module_state(model, ck)
    return model


def train_encoder(train_clips, teacher, config: EncoderConfig, settings: TrainSettings,
                  val_clips=None, progress=None) -> EncoderRun:
    """Fit the encoder so fused embeddings match teacher vectors (L2).

    Stops after ``settings.epochs`` or, with validation clips and early
    stopping on, once validation loss fails to improve by ``min_delta`` for
    ``patience`` epochs.
    """
    if teacher.dim != config.teacher_dim:
        raise TeacherError(f"teacher dim {teacher.dim} != configured {config.teacher_dim}")
    rng = Rng(settings.seed)
    model = SensorEncoder(config, rng)
    mods = model.modalities
    X = stack_clips(train_clips, mods)
    Y = _targets(train_clips, teacher)
    Xv = Yv = None
    if val_clips:
        Xv, Yv = stack_clips(val_clips, mods), _targets(val_clips, teacher)
    opt = Adam(model.parameters(), settings.lr, settings.beta1, settings.beta2, settings.eps,
               settings.reg_weight)
    shuffle = rng.substream("shuffle")
    log = {"train_loss": [], "val_loss": [], "initial_loss": mean_loss(model, X, Y)}
    if Xv is not None:
        log["initial_val_loss"] = mean_loss(model, Xv, Yv)
    best, stale = np.inf, 0
    n = len(Y)
    for epoch in range(settings.epochs):
        model.train()
        order = shuffle.permutation(n)
        total = 0.0
        for i in range(0, n, settings.batch_size):
            idx = order[i:i + settings.batch_size]
            pred = model.forward({m: X[m][idx] for m in mods})
            loss, dpred = alignment_loss(pred, Y[idx], settings.reg_weight, opt.params)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite alignment loss at epoch {epoch}")
            model.backward(dpred)
            opt.step()
            total += alignment_loss(pred, Y[idx])[0]
        log["train_loss"].append(total / n)
        if Xv is not None:
            v = mean_loss(model, Xv, Yv)
            log["val_loss"].append(v)
            if settings.early_stopping:
                if v < best - settings.min_delta:
                    best, stale = v, 0
                else:
                    stale += 1
                    if stale >= settings.patience:
                        break
        if progress:
            progress(epoch, log)
    model.eval()
    log["epochs_run"] = len(log["train_loss"])
    ck = encoder_checkpoint(model, settings.seed, None)
    log["final_loss"] = mean_loss(model, X, Y)
    ck.extra["log"] = log
    ck.extra["settings"] = asdict(settings)
    return EncoderRun(model, log, ck)


def segment_windows(streams: dict, n_segments: int, window: int | None = None) -> dict:
    """Cut a clip into ``n_segments`` time-ordered pieces.

    The clip is divided into ``n_segments`` equal parts.  With ``window`` set,
    each piece is the first ``window`` samples of its part (the encoder's
    native clip length); otherwise it is the whole part.  Returns
    modality -> ``(n_segments, length, channels)``.
    """
    if n_segments < 1:
        raise ValueError("need at least one segment")
    T = min(len(v) for v in streams.values())
    part = T // n_segments
    length = part if window is None else window
    if length < 1 or length > part:
        raise ValueError(f"{n_segments} segments of {length} samples do not fit in {T} samples")
    out = {}
    for m, v in streams.items():
        v = np.asarray(v, dtype=np.float64)
        out[m] = np.stack([v[k * part: k * part + length] for k in range(n_segments)])
    return out


def encode_segments(model: SensorEncoder, streams: dict, n_segments: int, window: int | None = None) -> np.ndarray:
    """Encode the time-ordered segments of one clip -> ``(n_segments, d_output)``."""
    segs = segment_windows({m: streams[m] for m in model.modalities}, n_segments, window)
    return model.encode(segs)
