"""Adam optimization, the plateau LR schedule, the training loop, and
model/report persistence.

Everything is deterministic given the plan seed: epoch shuffles and
augmentation draws are keyed by (seed, epoch, scene index), never by
arrival order, and the optimizer runs serially.
"""

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .complexnn import ComplexTensor
from .enhancement import enhance, mask_and_resynth, stack_inputs
from .errors import DataError, InvalidArgumentError, NumericalError
from .network import MaskNet, load_config, save_config
from .objectives import LossWeights, composite_loss, sdr, si_sdr
from .scenes import augment_scale, augment_shift
from .tensor import Tensor

EDGE_TRIM = dsp.HOP  # samples excluded at each end when scoring


@dataclass
class TrainState:
    """Optimizer and schedule state carried across epochs."""

    lr: float
    step: int = 0
    best_val: float = math.inf
    stale_epochs: int = 0
    rng_seed: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class TrainPlan:
    epochs: int
    scenes_per_epoch: int
    batch_size: int
    weights: LossWeights = field(default_factory=lambda: LossWeights(1.0, 0.0))
    augment_shift: bool = False
    augment_scale: bool = False
    lr0: float = 1e-3
    weight_decay: float = 1e-6
    seed: int = 0
    precision: str = "double"
    accum: int = 1  # optimizer steps once per this many batches

    def __post_init__(self):
        if min(self.epochs, self.scenes_per_epoch, self.batch_size, self.accum) < 1:
            raise InvalidArgumentError("plan counts must be positive")
        if self.precision not in ("double", "single"):
            raise InvalidArgumentError("precision must be double|single")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


def adam_step(params, state, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update with bias correction and decoupled weight decay.

    ``params`` is an iterable of (name, tensor); gradients are read from
    tensor.grad (missing gradient means zero).  Weight decay shrinks the
    parameter before the moment update, by lr * weight_decay * param.
    """
    state.step += 1
    t = state.step
    b1, b2 = betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if weight_decay:
            p.data -= state.lr * weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + eps)


def lr_schedule(state, val_loss, factor=0.9, patience=3, min_delta=1e-6):
    """Reduce lr by ``factor`` after ``patience`` epochs without improvement."""
    if val_loss < state.best_val - min_delta:
        state.best_val = val_loss
        state.stale_epochs = 0
    else:
        state.stale_epochs += 1
        if state.stale_epochs >= patience:
            state.lr *= factor
            state.stale_epochs = 0
    return state


def scene_loss(model, scene, weights, mode, loopback=None):
    """Composite loss of the enhanced output against the pre-scaled target."""
    q = scene.loopback if loopback is None else loopback
    dtype = next(model.named_params())[1].data.dtype
    P = dsp.stft(scene.mic)
    Q = dsp.stft(q[:len(scene.mic)] if len(q) >= len(scene.mic) else
                 np.concatenate([q, np.zeros(len(scene.mic) - len(q))]))
    x = stack_inputs(P, Q)
    x = ComplexTensor(Tensor(x.re.data.astype(dtype)), Tensor(x.im.data.astype(dtype)))
    masks = model.forward(x, mode=mode)
    est = mask_and_resynth(P, Q, masks)
    target = scene.clean[:est.data.size]
    return composite_loss(est, target, weights)


def train(plan, config, train_scenes, val_scenes):
    """Train a fresh model; returns (model, state, history).

    History holds one (epoch, train_loss, val_loss, lr) row per epoch.
    Validation losses are computed in eval mode with frozen BN statistics.
    """
    if not train_scenes or not val_scenes:
        raise InvalidArgumentError("train and validation scene pools must be non-empty")
    model = MaskNet(config).set_precision(plan.dtype)
    params = list(model.named_params())
    state = TrainState(lr=plan.lr0, rng_seed=plan.seed)
    history = []
    n_pick = min(plan.scenes_per_epoch, len(train_scenes))

    for epoch in range(plan.epochs):
        order = np.random.default_rng([plan.seed & 0x7FFFFFFF, epoch, 7]).permutation(
            len(train_scenes))[:n_pick]
        batches = [order[lo:lo + plan.batch_size]
                   for lo in range(0, n_pick, plan.batch_size)]
        epoch_losses = []
        for glo in range(0, len(batches), plan.accum):
            group = batches[glo:glo + plan.accum]
            for _, p in params:
                p.zero_grad()
            for batch in group:
                batch_losses = []
                for idx in batch:
                    scene = train_scenes[int(idx)]
                    q = scene.loopback
                    if plan.augment_shift or plan.augment_scale:
                        rng = np.random.default_rng(
                            [plan.seed & 0x7FFFFFFF, epoch, int(idx), 13])
                        if plan.augment_shift:
                            q = augment_shift(q, rng)
                        if plan.augment_scale:
                            q = augment_scale(q, rng)
                    loss = scene_loss(model, scene, plan.weights, "train", loopback=q)
                    value = loss.item()
                    if not math.isfinite(value):
                        raise NumericalError(
                            f"non-finite loss at epoch {epoch} step {state.step} "
                            f"(scene {int(idx)})"
                        )
                    (loss * (1.0 / (len(batch) * len(group)))).backward()
                    batch_losses.append(value)
                epoch_losses.append(float(np.mean(batch_losses)))
            adam_step(params, state, plan.weight_decay)
        val_loss = validation_loss(model, val_scenes, plan.weights)
        train_loss = float(np.mean(epoch_losses))
        lr_schedule(state, val_loss)
        history.append((epoch, train_loss, val_loss, state.lr))
    return model, state, history


def validation_loss(model, scenes, weights):
    losses = [scene_loss(model, s, weights, "eval").item() for s in scenes]
    return float(np.mean(losses))


def write_history(path, history):
    with open(path, "w") as f:
        f.write("# epoch\ttrain_loss\tval_loss\tlr\n")
        for epoch, tr, va, lr in history:
            f.write(f"{epoch}\t{tr:.6f}\t{va:.6f}\t{lr:.8g}\n")


# -- evaluation ---------------------------------------------------------------


def _trimmed(x, n):
    return x[EDGE_TRIM:n - EDGE_TRIM]


def evaluate_with(enhance_fn, scenes):
    """Score an arbitrary scene -> estimate callable against clean targets.

    Returns a report dict with one row per scene (SI-SDR/SDR of the output
    and of the unprocessed mic, plus improvement deltas) and mean/stdev
    summaries.  Per-scene failures are recorded and the run continues.
    """
    rows = []
    errors = []
    for i, scene in enumerate(scenes):
        try:
            est = np.asarray(enhance_fn(scene), dtype=np.float64)
            n = min(len(est), len(scene.clean))
            if n <= 2 * EDGE_TRIM + dsp.FFT_SIZE:
                raise InvalidArgumentError("scene too short to score")
            ref = _trimmed(scene.clean[:n], n)
            out = _trimmed(est[:n], n)
            mic = _trimmed(scene.mic[:n], n)
            row = {
                "scene": i,
                "si_sdr_out": si_sdr(out, ref),
                "si_sdr_mic": si_sdr(mic, ref),
                "sdr_out": sdr(out, ref),
                "sdr_mic": sdr(mic, ref),
            }
            row["si_sdr_impr"] = row["si_sdr_out"] - row["si_sdr_mic"]
            row["sdr_impr"] = row["sdr_out"] - row["sdr_mic"]
            rows.append(row)
        except Exception as exc:  # noqa: BLE001 - per-scene isolation is the contract
            errors.append({"scene": i, "error": f"{type(exc).__name__}: {exc}"})
    metrics = ("si_sdr_out", "si_sdr_mic", "si_sdr_impr",
               "sdr_out", "sdr_mic", "sdr_impr")
    summary = {}
    for key in metrics:
        vals = [r[key] for r in rows]
        summary[key] = (float(np.mean(vals)), float(np.std(vals))) if vals else (math.nan, math.nan)
    return {"rows": rows, "errors": errors, "summary": summary}


def evaluate(model, scenes):
    """Enhance every scene with the model and score against clean targets."""
    return evaluate_with(lambda s: enhance(s.mic, s.loopback, model), scenes)


def write_report(path, report):
    cols = ("scene", "si_sdr_out", "si_sdr_mic", "si_sdr_impr",
            "sdr_out", "sdr_mic", "sdr_impr")
    with open(path, "w") as f:
        f.write("\t".join(cols) + "\n")
        for row in report["rows"]:
            f.write("\t".join(
                str(row["scene"]) if c == "scene" else f"{row[c]:.4f}" for c in cols
            ) + "\n")
        for stat, pick in (("mean", 0), ("stdev", 1)):
            f.write("\t".join(
                [stat] + [f"{report['summary'][c][pick]:.4f}" for c in cols[1:]]
            ) + "\n")
        for err in report["errors"]:
            f.write(f"# scene {err['scene']} failed: {err['error']}\n")


# -- model persistence --------------------------------------------------------
#
# A model directory holds config.cfg, weights.bin (all arrays concatenated,
# little-endian), and manifest.txt with one line per array:
#   <kind> <name> <dtype> <shape> <offset> <nbytes> sha256:<hex>


def save_model(path, model):
    os.makedirs(path, exist_ok=True)
    save_config(model.config, os.path.join(path, "config.cfg"))
    entries = []
    chunks = []
    offset = 0
    for kind, pairs in (("param", model.named_params()),
                        ("buffer", model.named_buffers())):
        for name, obj in pairs:
            arr = obj.data if isinstance(obj, Tensor) else obj
            arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
            raw = arr.tobytes()
            digest = hashlib.sha256(raw).hexdigest()
            shape = ",".join(str(s) for s in arr.shape)
            entries.append(
                f"{kind} {name} {arr.dtype.str} {shape} {offset} {len(raw)} sha256:{digest}"
            )
            chunks.append(raw)
            offset += len(raw)
    with open(os.path.join(path, "weights.bin"), "wb") as f:
        f.write(b"".join(chunks))
    with open(os.path.join(path, "manifest.txt"), "w") as f:
        f.write("# deepaec model manifest v1\n")
        f.write("\n".join(entries) + "\n")


def load_model(path):
    config_path = os.path.join(path, "config.cfg")
    manifest_path = os.path.join(path, "manifest.txt")
    weights_path = os.path.join(path, "weights.bin")
    for p in (config_path, manifest_path, weights_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"model directory missing {os.path.basename(p)}")
    model = MaskNet(load_config(config_path))
    with open(weights_path, "rb") as f:
        blob = f.read()
    loaded = {}
    with open(manifest_path) as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                kind, name, dtype, shape, offset, nbytes, digest = line.split()
            except ValueError as exc:
                raise DataError(f"bad manifest line: {raw!r}") from exc
            offset, nbytes = int(offset), int(nbytes)
            raw_bytes = blob[offset:offset + nbytes]
            if len(raw_bytes) != nbytes:
                raise DataError(f"weights.bin truncated at array {name!r}")
            if digest != "sha256:" + hashlib.sha256(raw_bytes).hexdigest():
                raise DataError(f"checksum mismatch for array {name!r}")
            arr = np.frombuffer(raw_bytes, dtype=np.dtype(dtype)).reshape(
                tuple(int(s) for s in shape.split(",")))
            loaded[(kind, name)] = arr
    params = dict(model.named_params())
    buffers = dict(model.named_buffers())
    if set(loaded) != {("param", n) for n in params} | {("buffer", n) for n in buffers}:
        raise DataError("manifest entries do not match the model architecture")
    for (kind, name), arr in loaded.items():
        if kind == "param":
            params[name].data = np.array(arr, copy=True)  # frombuffer is read-only
        else:
            buffers[name][...] = arr
    return model
