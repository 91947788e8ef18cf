"""One-to-many wrench-sequence generator.

A 19-dim seed (relative target pose, end-effector twist, previous wrench)
is projected into the cell space of a forget-gate LSTM, which is then
unrolled on its own output for a fixed number of steps; a linear readout
turns every step into a 6-dim wrench.  Training is exact backpropagation
through time (including the output-to-input feedback path) with Adam on
mini-batches of demonstration windows.  All math is 64-bit and
deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .spatial import Wrench

__all__ = [
    "ModelFormatError",
    "Hyperparams",
    "NormStats",
    "LstmModel",
    "CellState",
    "AdamState",
    "init_model",
    "lstm_step",
    "predict_sequence",
    "sequence_loss",
    "bptt_gradients",
    "adam_step",
    "train",
    "save_model",
    "load_model",
]

FORMAT_VERSION = 1
_GATES = ("f", "i", "o", "g")   # stacked row-block order
SEED_DIM = 19
WRENCH_DIM = 6


class ModelFormatError(ValueError):
    """Model file malformed, wrong version, or shape-inconsistent."""


@dataclass
class Hyperparams:
    hidden: int = 50          # LSTM cells
    unroll: int = 50          # sequence steps per sample
    batch: int = 512
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    lr_final: float | None = None   # exponential decay target; None = constant
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 3000
    rng_seed: int = 0

    def __post_init__(self):
        if self.hidden <= 0 or self.unroll <= 0 or self.batch < 1:
            raise ValueError("hidden, unroll and batch must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.lr_final is not None and self.lr_final <= 0:
            raise ValueError("lr_final must be positive")

    def lr_at(self, step: int) -> float:
        if self.lr_final is None or self.steps <= 1:
            return self.learning_rate
        frac = step / (self.steps - 1)
        return self.learning_rate * (self.lr_final / self.learning_rate) ** frac


@dataclass
class NormStats:
    """Per-dimension z-scoring statistics, stored inside the model file."""

    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    def __post_init__(self):
        self.in_mean = np.asarray(self.in_mean, dtype=float).reshape(SEED_DIM)
        self.in_std = np.asarray(self.in_std, dtype=float).reshape(SEED_DIM)
        self.out_mean = np.asarray(self.out_mean, dtype=float).reshape(WRENCH_DIM)
        self.out_std = np.asarray(self.out_std, dtype=float).reshape(WRENCH_DIM)
        if np.any(self.in_std <= 0) or np.any(self.out_std <= 0):
            raise ValueError("normalization stds must be positive")

    @staticmethod
    def identity() -> "NormStats":
        return NormStats(np.zeros(SEED_DIM), np.ones(SEED_DIM),
                         np.zeros(WRENCH_DIM), np.ones(WRENCH_DIM))


@dataclass
class CellState:
    c: np.ndarray
    h: np.ndarray

    @staticmethod
    def zero(hidden: int) -> "CellState":
        return CellState(np.zeros(hidden), np.zeros(hidden))


@dataclass
class LstmModel:
    hidden: int
    unroll: int
    w_in: np.ndarray     # (H, 19) seed projection
    w_x: np.ndarray      # (4H, H) stacked per-gate input-side weights [f,i,o,g]
    w_h: np.ndarray      # (4H, H) stacked per-gate recurrent weights
    b: np.ndarray        # (4H,)  stacked per-gate biases
    w_out: np.ndarray    # (6, H) wrench readout
    norm: NormStats = field(default_factory=NormStats.identity)
    hyper: Hyperparams | None = None

    def params(self) -> dict[str, np.ndarray]:
        return {"w_in": self.w_in, "w_x": self.w_x, "w_h": self.w_h,
                "b": self.b, "w_out": self.w_out}


def init_model(hyper: Hyperparams, rng: np.random.Generator,
               norm: NormStats | None = None) -> LstmModel:
    """Uniform(+-1/sqrt(fan_in)) weights; forget-gate bias starts at +1."""
    h = hyper.hidden

    def u(shape, fan_in):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    b = np.zeros(4 * h)
    b[0:h] = 1.0   # forget gate open at start
    return LstmModel(
        hidden=h,
        unroll=hyper.unroll,
        w_in=u((h, SEED_DIM), SEED_DIM),
        w_x=u((4 * h, h), 2 * h),
        w_h=u((4 * h, h), 2 * h),
        b=b,
        w_out=u((WRENCH_DIM, h), h),
        norm=norm or NormStats.identity(),
        hyper=hyper,
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_step(model: LstmModel, state: CellState, x: np.ndarray):
    """One forget-gate LSTM step (no peepholes); returns (state', y) with y = h'."""
    h = model.hidden
    a = model.w_x @ x + model.w_h @ state.h + model.b
    f = _sigmoid(a[0:h])
    i = _sigmoid(a[h:2 * h])
    o = _sigmoid(a[2 * h:3 * h])
    g = np.tanh(a[3 * h:4 * h])
    c = f * state.c + i * g
    y = o * np.tanh(c)
    return CellState(c, y), y


# ---------------------------------------------------------------------------
# batched forward / backward
# ---------------------------------------------------------------------------

def _forward(model: LstmModel, seeds: np.ndarray, labels: np.ndarray | None,
             masks: np.ndarray | None, keep: float, n: int | None = None):
    """Unrolled batch forward pass in normalized space.

    seeds: (B, 19) raw; labels: (B, N, 6) raw or None; masks: (B, N, H)
    0/1 dropout masks for the readout branch or None.  Returns
    (loss | None, preds_norm (B, N, 6), cache).
    """
    n = model.unroll if n is None else n
    hid = model.hidden
    z = (seeds - model.norm.in_mean) / model.norm.in_std
    x = z @ model.w_in.T                     # y_0
    bsz = x.shape[0]
    h = np.zeros((bsz, hid))
    c = np.zeros((bsz, hid))

    cache = {"z": z, "x": [], "h_prev": [], "c_prev": [], "f": [], "i": [],
             "o": [], "g": [], "tc": [], "yd": []}
    preds = np.empty((bsz, n, WRENCH_DIM))
    for k in range(n):
        a = x @ model.w_x.T + h @ model.w_h.T + model.b
        f = _sigmoid(a[:, 0:hid])
        i = _sigmoid(a[:, hid:2 * hid])
        o = _sigmoid(a[:, 2 * hid:3 * hid])
        g = np.tanh(a[:, 3 * hid:4 * hid])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        y = o * tc
        yd = y if masks is None else y * masks[:, k, :] / keep
        preds[:, k, :] = yd @ model.w_out.T

        cache["x"].append(x)
        cache["h_prev"].append(h)
        cache["c_prev"].append(c)
        for key, val in (("f", f), ("i", i), ("o", o), ("g", g), ("tc", tc), ("yd", yd)):
            cache[key].append(val)
        x, h, c = y, y, c_new

    loss = None
    if labels is not None:
        t = (labels - model.norm.out_mean) / model.norm.out_std
        cache["diff"] = preds - t
        loss = float(np.mean(cache["diff"] ** 2))
    return loss, preds, cache


def _backward(model: LstmModel, cache, masks: np.ndarray | None, keep: float):
    """Exact gradients of the mean-squared sequence loss for one batch."""
    n, hid = len(cache["x"]), model.hidden
    diff = cache["diff"]
    bsz = diff.shape[0]
    scale = 2.0 / diff.size                  # d(mean sq)/d(pred)

    grads = {k: np.zeros_like(v) for k, v in model.params().items()}
    dh_next = np.zeros((bsz, hid))
    dx_next = np.zeros((bsz, hid))
    dc_next = np.zeros((bsz, hid))

    for k in reversed(range(n)):
        dp = scale * diff[:, k, :]
        grads["w_out"] += dp.T @ cache["yd"][k]
        dyd = dp @ model.w_out
        dy = dyd if masks is None else dyd * masks[:, k, :] / keep
        dy = dy + dh_next + dx_next          # readout + recurrence + feedback paths

        o, tc = cache["o"][k], cache["tc"][k]
        do = dy * tc
        dc = dc_next + dy * o * (1.0 - tc * tc)
        f, i, g = cache["f"][k], cache["i"][k], cache["g"][k]
        c_prev = cache["c_prev"][k]
        da = np.concatenate(
            [
                dc * c_prev * f * (1.0 - f),
                dc * g * i * (1.0 - i),
                do * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        grads["w_x"] += da.T @ cache["x"][k]
        grads["w_h"] += da.T @ cache["h_prev"][k]
        grads["b"] += da.sum(axis=0)
        dx_next = da @ model.w_x
        dh_next = da @ model.w_h
        dc_next = dc * f

    grads["w_in"] = dx_next.T @ cache["z"]   # y_0 = W_in z; h_0, c_0 are constants
    return grads


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def predict_sequence(model: LstmModel, seed: np.ndarray, n: int | None = None,
                     frame: str = "e") -> list[Wrench]:
    """Generate ``n`` wrenches from one raw 19-dim seed (dropout inactive)."""
    n = model.unroll if n is None else int(n)
    seed = np.asarray(seed, dtype=float).reshape(1, SEED_DIM)
    _, preds, _ = _forward(model, seed, None, None, 1.0, n=n)
    out = preds[0] * model.norm.out_std + model.norm.out_mean
    return [Wrench(row[:3], row[3:], frame) for row in out]


def sequence_loss(model: LstmModel, seed: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared wrench error over the unrolled sequence, normalized space."""
    labels = np.asarray(labels, dtype=float)
    if labels.shape != (model.unroll, WRENCH_DIM):
        raise ValueError(f"labels must have shape ({model.unroll}, {WRENCH_DIM})")
    seed = np.asarray(seed, dtype=float).reshape(1, SEED_DIM)
    loss, _, _ = _forward(model, seed, labels[None, :, :], None, 1.0)
    return loss


def bptt_gradients(model: LstmModel, seeds: np.ndarray, labels: np.ndarray,
                   masks: np.ndarray | None = None, dropout_rate: float = 0.0):
    """Gradients of the mean batch loss w.r.t. every parameter.

    seeds (B, 19), labels (B, N, 6), masks (B, N, H) optional pre-drawn
    dropout masks.  Returns (loss, grads dict).
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    labels = np.asarray(labels, dtype=float)
    keep = 1.0 - dropout_rate
    loss, _, cache = _forward(model, seeds, labels, masks, keep)
    return loss, _backward(model, cache, masks, keep)


@dataclass
class AdamState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @staticmethod
    def zeros_like(model: LstmModel) -> "AdamState":
        return AdamState(
            t=0,
            m={k: np.zeros_like(v) for k, v in model.params().items()},
            v={k: np.zeros_like(v) for k, v in model.params().items()},
        )


def adam_step(model: LstmModel, grads: dict[str, np.ndarray], opt: AdamState,
              hyper: Hyperparams, lr: float | None = None) -> tuple[LstmModel, AdamState]:
    """Bias-corrected Adam update, applied in place; returns the pair back."""
    lr = hyper.learning_rate if lr is None else lr
    opt.t += 1
    b1t = 1.0 - hyper.beta1 ** opt.t
    b2t = 1.0 - hyper.beta2 ** opt.t
    params = model.params()
    for key, grad in grads.items():
        opt.m[key] = hyper.beta1 * opt.m[key] + (1.0 - hyper.beta1) * grad
        opt.v[key] = hyper.beta2 * opt.v[key] + (1.0 - hyper.beta2) * grad * grad
        m_hat = opt.m[key] / b1t
        v_hat = opt.v[key] / b2t
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return model, opt


def train(dataset, hyper: Hyperparams, rng: np.random.Generator,
          progress=None) -> tuple[LstmModel, list[float]]:
    """Mini-batch BPTT training over demonstration windows.

    ``dataset`` is a list of demonstrations (see the demo pipeline); only
    successful ones long enough for a full window are used.  Returns the
    trained model and the per-step loss curve.
    """
    from . import demos as demo_pipeline

    usable = [d for d in dataset
              if d.meta.success and len(d.records) > hyper.unroll + 1]
    if not usable:
        raise ValueError("no usable demonstrations (successful and long enough)")

    stats = demo_pipeline.norm_stats(usable)
    model = init_model(hyper, rng, norm=stats)
    opt = AdamState.zeros_like(model)
    n, hid = hyper.unroll, hyper.hidden
    losses: list[float] = []

    for step in range(hyper.steps):
        bsz = hyper.batch
        seeds = np.empty((bsz, SEED_DIM))
        labels = np.empty((bsz, n, WRENCH_DIM))
        idx = rng.integers(0, len(usable), size=bsz)
        for row, di in enumerate(idx):
            sample = demo_pipeline.window_sample(usable[di], rng, n)
            seeds[row] = sample.seed
            labels[row] = sample.labels
        masks = None
        if hyper.dropout_rate > 0.0:
            masks = (rng.random((bsz, n, hid)) >= hyper.dropout_rate).astype(float)
        loss, grads = bptt_gradients(model, seeds, labels, masks, hyper.dropout_rate)
        model, opt = adam_step(model, grads, opt, hyper, lr=hyper.lr_at(step))
        losses.append(loss)
        if progress is not None:
            progress(step, loss)
    return model, losses


# ---------------------------------------------------------------------------
# serialization (versioned JSON, bit-exact round trip)
# ---------------------------------------------------------------------------

def _model_dict(model: LstmModel) -> dict:
    h = model.hidden
    gates = {}
    for gi, gate in enumerate(_GATES):
        gates[f"w_{gate}_x"] = model.w_x[gi * h:(gi + 1) * h].tolist()
        gates[f"w_{gate}_h"] = model.w_h[gi * h:(gi + 1) * h].tolist()
        gates[f"b_{gate}"] = model.b[gi * h:(gi + 1) * h].tolist()
    hyper = model.hyper or Hyperparams(hidden=model.hidden, unroll=model.unroll)
    return {
        "format_version": FORMAT_VERSION,
        "kind": "wrench-sequence-lstm",
        "hyper": {
            "hidden": hyper.hidden, "unroll": hyper.unroll, "batch": hyper.batch,
            "dropout_rate": hyper.dropout_rate, "learning_rate": hyper.learning_rate,
            "lr_final": hyper.lr_final,
            "beta1": hyper.beta1, "beta2": hyper.beta2, "eps": hyper.eps,
            "steps": hyper.steps, "rng_seed": hyper.rng_seed,
        },
        "shapes": {"hidden": model.hidden, "unroll": model.unroll,
                   "input": SEED_DIM, "output": WRENCH_DIM},
        "conventions": {"quaternion": "xyzw, qw >= 0", "frame": "end-effector/object",
                        "units": "N, N*m, m, m/s, rad/s"},
        "norm": {
            "in_mean": model.norm.in_mean.tolist(),
            "in_std": model.norm.in_std.tolist(),
            "out_mean": model.norm.out_mean.tolist(),
            "out_std": model.norm.out_std.tolist(),
        },
        "weights": {"w_in": model.w_in.tolist(), "w_out": model.w_out.tolist(), **gates},
    }


def save_model(model: LstmModel, path) -> None:
    text = json.dumps(_model_dict(model), sort_keys=True, indent=1)
    with open(path, "w") as fh:
        fh.write(text)
        fh.write("\n")


def load_model(path) -> LstmModel:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON: {exc}") from exc

    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported format_version {doc.get('format_version')!r}"
        )
    try:
        shapes = doc["shapes"]
        h, n = int(shapes["hidden"]), int(shapes["unroll"])
        weights = doc["weights"]
        w_in = np.asarray(weights["w_in"], dtype=float)
        w_out = np.asarray(weights["w_out"], dtype=float)
        w_x = np.vstack([np.asarray(weights[f"w_{g}_x"], dtype=float) for g in _GATES])
        w_h = np.vstack([np.asarray(weights[f"w_{g}_h"], dtype=float) for g in _GATES])
        b = np.concatenate([np.asarray(weights[f"b_{g}"], dtype=float) for g in _GATES])
        norm = NormStats(**{k: np.asarray(v, dtype=float)
                            for k, v in doc["norm"].items()})
        hyper = Hyperparams(**doc["hyper"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed model file: {exc}") from exc

    expected = {"w_in": (h, SEED_DIM), "w_x": (4 * h, h), "w_h": (4 * h, h),
                "b": (4 * h,), "w_out": (WRENCH_DIM, h)}
    actual = {"w_in": w_in.shape, "w_x": w_x.shape, "w_h": w_h.shape,
              "b": b.shape, "w_out": w_out.shape}
    if actual != expected:
        raise ModelFormatError(f"{path}: weight shapes {actual} != declared {expected}")
    return LstmModel(hidden=h, unroll=n, w_in=w_in, w_x=w_x, w_h=w_h, b=b,
                     w_out=w_out, norm=norm, hyper=hyper)
