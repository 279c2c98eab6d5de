"""Datasets, shifted-FFT features, a small complex-valued trainer and noisy evaluation.

Inputs are complex vectors normalised to unit power (1 mW, i.e. 0 dBm per
sample). The class score of output port ``c`` is its detected power
``|z_c|**2``; ports beyond the class count are ignored.
"""

from __future__ import annotations

import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from spnoise.core import make_rng, spawn_seeds
from spnoise.mesh import MeshKind, map_weights
from spnoise.nau import NauHandle, NauParams, activation, plain_relu
from spnoise.netsim import LayerSpec, NoiseSpec, OguSpec, layer_matrix


@dataclass
class Dataset:
    features: np.ndarray  # (samples, n) complex
    labels: np.ndarray  # (samples,) int
    split: np.ndarray  # (samples,) "train" / "test"
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=complex)
        self.labels = np.asarray(self.labels, dtype=int)
        self.split = np.asarray(self.split, dtype=object)
        if self.features.ndim != 2:
            raise ValueError("features must be a (samples, n) array")
        if not (len(self.features) == len(self.labels) == len(self.split)):
            raise ValueError("features, labels and split must have equal lengths")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range for the class count")
        if not set(self.split.tolist()) <= {"train", "test"}:
            raise ValueError("split tags must be 'train' or 'test'")

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def subset(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.split == tag
        return self.features[mask], self.labels[mask]

    @property
    def train(self):
        return self.subset("train")

    @property
    def test(self):
        return self.subset("test")

    # JSON-lines file format ---------------------------------------------------

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for f, y, s in zip(self.features, self.labels, self.split):
                rec = {"features": [{"re": float(v.real), "im": float(v.imag)} for v in f],
                       "label": int(y), "split": str(s)}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path, n_classes: int | None = None) -> "Dataset":
        feats, labels, split = [], [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    feats.append([complex(v["re"], v["im"]) for v in rec["features"]])
                    labels.append(int(rec["label"]))
                    split.append(rec["split"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from None
        if len({len(f) for f in feats}) > 1:
            raise ValueError("records have inconsistent feature lengths")
        k = n_classes if n_classes is not None else (max(labels) + 1 if labels else 1)
        return cls(np.array(feats, dtype=complex), np.array(labels), np.array(split, dtype=object), k)


def normalize_power(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit total power; all-zero rows stay zero."""
    x = np.asarray(x, dtype=complex)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def _split_tags(count: int, test_fraction: float, rng) -> np.ndarray:
    n_test = int(round(count * test_fraction))
    tags = np.array(["train"] * (count - n_test) + ["test"] * n_test, dtype=object)
    return tags[rng.permutation(count)]


def gen_gaussian(n: int, classes: int = 2, sigma: float = 0.1, seed: int = 0,
                 samples_per_class: int = 100, test_fraction: float = 0.3) -> Dataset:
    """Linearly separable complex Gaussian blobs.

    Class ``c`` is centred on the unit vector along port ``c`` (mutually
    orthogonal, maximally separated means); every component gets circular
    complex noise of standard deviation ``sigma``. Samples are then scaled
    to unit power.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if classes > n:
        raise ValueError("class count cannot exceed the feature dimension")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rng = make_rng(seed)
    labels = np.repeat(np.arange(classes), samples_per_class)
    means = np.eye(n, dtype=complex)[labels]
    noise = (rng.standard_normal(means.shape) + 1j * rng.standard_normal(means.shape)) * (sigma / math.sqrt(2.0))
    feats = normalize_power(means + noise)
    order = rng.permutation(len(labels))
    feats, labels = feats[order], labels[order]
    return Dataset(feats, labels, _split_tags(len(labels), test_fraction, rng), classes)


# --- images -----------------------------------------------------------------------------

def shifted_fft_features(image, n: int = 16) -> np.ndarray:
    """Central ``sqrt(n) x sqrt(n)`` block of the centred 2-D FFT, flattened row-major."""
    img = np.asarray(image, dtype=float)
    if img.shape != (28, 28):
        raise ValueError(f"expected a 28x28 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    side = math.isqrt(n)
    if side * side != n or not 1 <= n <= 784:
        raise ValueError(f"n must be a perfect square in [1, 784], got {n}")
    spec = np.fft.fftshift(np.fft.fft2(img))
    c = 14  # zero frequency after fftshift on a 28-point axis
    lo = c - side // 2
    return spec[lo : lo + side, lo : lo + side].reshape(-1)


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzip-compressed) into an array."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise ValueError(f"{path}: not an IDX file")
    dtypes = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    if data[2] not in dtypes:
        raise ValueError(f"{path}: unknown IDX element type {data[2]:#x}")
    ndim = data[3]
    dims = struct.unpack(">" + "I" * ndim, data[4 : 4 + 4 * ndim])
    arr = np.frombuffer(data, dtype=dtypes[data[2]], offset=4 + 4 * ndim)
    if arr.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload size does not match header")
    return arr.reshape(dims)


def read_image_csv(path, label_column: str = "last") -> tuple[np.ndarray, np.ndarray]:
    """Read 28x28 grayscale images stored one per CSV row (784 pixels plus a label).

    ``label_column`` is ``"first"`` or ``"last"``. Gzip files are accepted.
    """
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt") as fh:
        rows = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    try:
        data = np.array([[float(v) for v in r.split(",")] for r in rows])
    except ValueError:
        # Allow one header line.
        data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    if data.ndim != 2 or data.shape[1] != 785:
        raise ValueError(f"{path}: expected 785 columns (784 pixels + label)")
    if label_column == "last":
        return data[:, :-1].reshape(-1, 28, 28), data[:, -1].astype(int)
    if label_column == "first":
        return data[:, 1:].reshape(-1, 28, 28), data[:, 0].astype(int)
    raise ValueError("label_column must be 'first' or 'last'")


def image_dataset(images, labels, n: int = 16, test_fraction: float = 0.2, seed: int = 0,
                  n_classes: int = 10) -> Dataset:
    """Shifted-FFT feature dataset from 28x28 images, normalised to unit power."""
    images = np.asarray(images)
    feats = normalize_power(np.array([shifted_fft_features(im, n) for im in images]))
    rng = make_rng(seed)
    return Dataset(feats, np.asarray(labels, dtype=int), _split_tags(len(images), test_fraction, rng), n_classes)


# --- training -------------------------------------------------------------------------------

@dataclass
class TrainedModel:
    weights: list  # complex matrices, input layer first
    n_classes: int
    programs: dict = field(default_factory=dict)  # kind value -> list[SvdProgram]
    nominal: dict = field(default_factory=dict)  # kind value -> noiseless test accuracy
    loss_history: list = field(default_factory=list)
    converged: bool = True

    @property
    def n(self) -> int:
        return self.weights[0].shape[1]

    def layers(self, kind, ogu: OguSpec | None = None, nau_loss: float = 0.0) -> list[LayerSpec]:
        kind = MeshKind.parse(kind)
        if kind.value not in self.programs:
            self.programs[kind.value] = [map_weights(w, kind) for w in self.weights]
        return [LayerSpec(p, ogu or OguSpec(), nau_loss) for p in self.programs[kind.value]]


def forward(weights: Sequence[np.ndarray], x: np.ndarray, act=plain_relu) -> np.ndarray:
    """Ideal forward pass; ``x`` is (n, batch). Returns the last pre-activation output."""
    z = x
    for i, w in enumerate(weights):
        z = w @ z
        if i < len(weights) - 1:
            z = act(z)
    return z


def _softmax_xent(scores: np.ndarray, labels: np.ndarray):
    s = scores - scores.max(axis=0, keepdims=True)
    e = np.exp(s)
    prob = e / e.sum(axis=0, keepdims=True)
    idx = np.arange(labels.size)
    loss = -np.mean(np.log(prob[labels, idx] + 1e-300))
    grad = prob
    grad[labels, idx] -= 1.0
    return loss, grad / labels.size


def _loss_and_grads(weights, x, y, n_classes, scale):
    """Cross-entropy over ``scale * |z_c|^2`` and gradients w.r.t. the real and imaginary parts.

    Gradients are returned as ``dL/dRe(W) + 1j * dL/dIm(W)``.
    """
    acts = [x]
    masks = []
    z = x
    for i, w in enumerate(weights):
        z = w @ z
        if i < len(weights) - 1:
            mask = z.real > 0
            masks.append(mask)
            z = np.where(mask, z, 0.0)
            acts.append(z)
    out = z[:n_classes]
    loss, g_scores = _softmax_xent(scale * np.abs(out) ** 2, y)
    g_z = np.zeros_like(z)
    g_z[:n_classes] = 2.0 * scale * g_scores * out
    grads = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        grads[i] = g_z @ acts[i].conj().T
        if i:
            g_z = (weights[i].conj().T @ g_z) * masks[i - 1]
    return loss, grads


def train(dataset: Dataset, layers: Sequence[int], epochs: int = 50, lr: float = 0.01, seed: int = 0,
          batch_size: int = 64, scale: float = 10.0, kinds=tuple(MeshKind)) -> TrainedModel:
    """Train complex weights with Adam on softmax cross-entropy of detected powers.

    ``layers`` lists the widths from input to output, e.g. ``[16, 16, 16, 16]``
    for three 16x16 layers. The final weights are mapped onto every mesh kind
    in ``kinds`` and the noiseless test accuracy of each mapping is recorded.
    """
    dims = list(layers)
    if len(dims) < 2:
        raise ValueError("need at least an input and an output width")
    if dims[0] != dataset.n:
        raise ValueError(f"first layer width {dims[0]} does not match feature dimension {dataset.n}")
    if dims[-1] < dataset.n_classes:
        raise ValueError("output width must be at least the class count")
    rng = make_rng(seed)
    weights = [
        (rng.standard_normal((o, i)) + 1j * rng.standard_normal((o, i))) / math.sqrt(2.0 * i)
        for i, o in zip(dims[:-1], dims[1:])
    ]
    m1 = [np.zeros_like(w) for w in weights]
    m2 = [np.zeros(w.shape) for w in weights]
    b1, b2, eps = 0.9, 0.999, 1e-8
    x_tr, y_tr = dataset.train
    history = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(y_tr))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            loss, grads = _loss_and_grads(weights, x_tr[idx].T, y_tr[idx], dataset.n_classes, scale)
            epoch_loss += loss * len(idx)
            step += 1
            for k, g in enumerate(grads):
                m1[k] = b1 * m1[k] + (1 - b1) * g
                m2[k] = b2 * m2[k] + (1 - b2) * np.abs(g) ** 2
                mh = m1[k] / (1 - b1**step)
                vh = m2[k] / (1 - b2**step)
                weights[k] = weights[k] - lr * mh / (np.sqrt(vh) + eps)
        history.append(epoch_loss / max(1, len(y_tr)))
    model = TrainedModel(weights, dataset.n_classes, loss_history=history,
                         converged=bool(np.isfinite(history[-1]) and history[-1] <= history[0]))
    for kind in kinds:
        kind = MeshKind.parse(kind)
        model.layers(kind)
        model.nominal[kind.value] = eval_accuracy(model, dataset, kind, NoiseSpec.noiseless(), trials=1).mean
    return model


def ideal_accuracy(model: TrainedModel, dataset: Dataset, split: str = "test") -> float:
    """Accuracy of the trained weights themselves (no mesh mapping)."""
    x, y = dataset.subset(split)
    z = forward(model.weights, x.T)
    return float(np.mean(np.argmax(np.abs(z[: model.n_classes]) ** 2, axis=0) == y))


# --- evaluation -------------------------------------------------------------------------------

@dataclass
class AccuracyStats:
    per_trial: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_trial))

    @property
    def std(self) -> float:
        return float(np.std(self.per_trial))


def _eval_trial(layers, x, y, n_classes, noise, act, seed) -> float:
    rng = np.random.default_rng(seed)
    z = x
    for i, layer in enumerate(layers):
        z = layer_matrix(layer, noise, rng) @ z
        if i < len(layers) - 1:
            z = act(z)
    return float(np.mean(np.argmax(np.abs(z[:n_classes]) ** 2, axis=0) == y))


def eval_accuracy(model: TrainedModel, dataset: Dataset, kind, noise: NoiseSpec, nau=NauHandle.PLAIN_RELU,
                  trials: int = 10, seed: int = 0, split: str = "test", ogu: OguSpec | None = None,
                  nau_params: NauParams | None = None) -> AccuracyStats:
    """Test accuracy of the mesh-mapped model; every trial draws fresh noise for each layer."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if dataset.n != model.n:
        raise ValueError("dataset and model widths differ")
    layers = model.layers(kind, ogu)
    act = activation(nau, nau_params)
    x, y = dataset.subset(split)
    acc = [_eval_trial(layers, x.T, y, model.n_classes, noise, act, s) for s in spawn_seeds(seed, trials)]
    return AccuracyStats(np.array(acc))
