"""Siamese location/pair models, the downstream classifier, and encoder transfer.

The encoder is a VGG-style stack: each block is ``repeats`` 3x3 conv+relu
layers followed by 2x2 max pooling, except the last block whose pooling is a
global average, so the latent size equals the last block's filter count.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoError, MissingTensor, ShapeMismatch, SpecError
from .nncore import (Tensor, concat, conv2d, dense, global_avgpool, load_weights, maxpool2d,
                     no_grad, relu, save_weights, sigmoid_cross_entropy, softmax,
                     softmax_cross_entropy)

PRESETS = {
    "desk": [(8, 1), (16, 1), (32, 1)],
    "vgg16-shape": [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)],
}

TASKS = ("location", "pair")


@dataclass
class EncoderSpec:
    blocks: list[tuple[int, int]] = field(default_factory=lambda: list(PRESETS["desk"]))
    kernel: int = 3
    in_channels: int = 3

    def __post_init__(self):
        self.blocks = [tuple(int(v) for v in b) for b in self.blocks]
        if not self.blocks or any(f < 1 or r < 1 for f, r in self.blocks):
            raise SpecError(f"encoder blocks must be non-empty (filters, repeats) pairs, got {self.blocks}")
        if self.kernel % 2 == 0:
            raise SpecError("kernel size must be odd")

    @classmethod
    def preset(cls, name: str) -> "EncoderSpec":
        if name not in PRESETS:
            raise SpecError(f"unknown encoder preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(list(PRESETS[name]))

    @property
    def latent_dim(self) -> int:
        return self.blocks[-1][0]

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes, cin = {}, self.in_channels
        for i, (filters, repeats) in enumerate(self.blocks):
            for j in range(repeats):
                shapes[f"encoder.b{i}.c{j}.w"] = (self.kernel, self.kernel, cin, filters)
                shapes[f"encoder.b{i}.c{j}.b"] = (filters,)
                cin = filters
        return shapes


def he_uniform(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1]))
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape).astype(dtype)


def _init(shapes: dict[str, tuple], rng, dtype) -> dict[str, Tensor]:
    params = {}
    for name, shape in shapes.items():
        data = np.zeros(shape, dtype) if name.endswith(".b") else he_uniform(rng, shape, dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


class Encoder:
    def __init__(self, spec: EncoderSpec, rng: np.random.Generator, dtype=np.float32):
        self.spec = spec
        self.params = _init(spec.layer_shapes(), rng, dtype)

    def __call__(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        last = len(self.spec.blocks) - 1
        for i, (_, repeats) in enumerate(self.spec.blocks):
            for j in range(repeats):
                p = f"encoder.b{i}.c{j}"
                h = relu(conv2d(h, self.params[p + ".w"], self.params[p + ".b"], "same"))
            h = global_avgpool(h) if i == last else maxpool2d(h, 2)
        return h


class _Model:
    kind = ""

    @property
    def params(self) -> dict[str, Tensor]:
        raise NotImplementedError

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, t in self.params.items():
            if name not in state:
                if strict:
                    raise MissingTensor(f"checkpoint has no tensor {name!r}")
                continue
            if state[name].shape != t.shape:
                raise ShapeMismatch(f"{name}: checkpoint {state[name].shape} vs model {t.shape}")
            t.data[...] = state[name]

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def config(self) -> dict:
        raise NotImplementedError

    def save(self, directory: str | os.PathLike, extra: dict | None = None) -> Path:
        out = save_weights(self.state_dict(), directory)
        meta = {"kind": self.kind, **self.config(), **(extra or {})}
        (out / "model.json").write_text(json.dumps(meta, indent=2))
        return out


class SiameseNet(_Model):
    """Shared encoder over child and parent, concatenated latents, two dense layers."""

    kind = "siamese"

    def __init__(self, spec: EncoderSpec, task: str = "location", n: int = 2, hidden: int = 256,
                 seed: int = 0, dtype=np.float32):
        if task not in TASKS:
            raise SpecError(f"task must be one of {TASKS}, got {task!r}")
        rng = np.random.default_rng(seed)
        self.spec, self.task, self.n, self.hidden = spec, task, n, hidden
        self.encoder = Encoder(spec, rng, dtype)
        self.num_outputs = 4 ** n if task == "location" else 1
        self.head = _init({
            "head.hidden.w": (2 * spec.latent_dim, hidden),
            "head.hidden.b": (hidden,),
            "head.out.w": (hidden, self.num_outputs),
            "head.out.b": (self.num_outputs,),
        }, rng, dtype)

    @property
    def params(self) -> dict[str, Tensor]:
        return {**self.encoder.params, **self.head}

    def __call__(self, child, parent) -> Tensor:
        fused = concat([self.encoder(child), self.encoder(parent)], axis=1)
        h = relu(dense(fused, self.head["head.hidden.w"], self.head["head.hidden.b"]))
        return dense(h, self.head["head.out.w"], self.head["head.out.b"])

    def loss(self, logits: Tensor, labels) -> Tensor:
        if self.task == "location":
            return softmax_cross_entropy(logits, labels)
        return sigmoid_cross_entropy(logits, labels)

    def predict(self, logits: np.ndarray) -> np.ndarray:
        if self.task == "location":
            return logits.argmax(axis=1)
        return (logits[:, 0] > 0).astype(np.int64)

    def config(self) -> dict:
        return {"encoder": asdict(self.spec), "task": self.task, "n": self.n, "hidden": self.hidden}


class Classifier(_Model):
    """Encoder followed by one linear layer over the latent vector."""

    kind = "classifier"

    def __init__(self, spec: EncoderSpec, num_classes: int, seed: int = 0, dtype=np.float32):
        if num_classes < 2:
            raise SpecError(f"need at least 2 classes, got {num_classes}")
        rng = np.random.default_rng(seed)
        self.spec, self.num_classes = spec, num_classes
        self.encoder = Encoder(spec, rng, dtype)
        self.head = _init({"classifier.w": (spec.latent_dim, num_classes),
                           "classifier.b": (num_classes,)}, rng, dtype)
        self.frozen = False

    @property
    def params(self) -> dict[str, Tensor]:
        return {**self.encoder.params, **self.head}

    def freeze_encoder(self, frozen: bool = True) -> None:
        self.frozen = frozen
        for t in self.encoder.params.values():
            t.requires_grad = not frozen
            t.grad = None

    def __call__(self, x) -> Tensor:
        return dense(self.encoder(x), self.head["classifier.w"], self.head["classifier.b"])

    def loss(self, logits: Tensor, labels) -> Tensor:
        return softmax_cross_entropy(logits, labels)

    def predict_proba(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = []
        with no_grad():
            for s in range(0, len(images), batch_size):
                out.append(softmax(self(images[s:s + batch_size].astype(self.dtype)).data))
        return np.concatenate(out) if out else np.zeros((0, self.num_classes))

    def config(self) -> dict:
        return {"encoder": asdict(self.spec), "num_classes": self.num_classes}


def build_siamese(spec: EncoderSpec, task: str = "location", n: int = 2, hidden: int = 256,
                  seed: int = 0, dtype=np.float32) -> SiameseNet:
    return SiameseNet(spec, task, n, hidden, seed, dtype)


def read_model_json(directory: str | os.PathLike) -> dict:
    path = Path(directory) / "model.json"
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def load_model(directory: str | os.PathLike, dtype=np.float32) -> _Model:
    meta = read_model_json(directory)
    spec = EncoderSpec(**meta["encoder"])
    if meta["kind"] == "siamese":
        model = SiameseNet(spec, meta["task"], meta["n"], meta["hidden"], dtype=dtype)
    elif meta["kind"] == "classifier":
        model = Classifier(spec, meta["num_classes"], dtype=dtype)
    else:
        raise ConfigError(f"unknown model kind {meta['kind']!r}")
    model.load_state_dict(load_weights(directory))
    return model


def transfer_encoder(checkpoint, num_classes: int, spec: EncoderSpec | None = None,
                     seed: int = 0, dtype=np.float32, freeze: bool = True) -> Classifier:
    """Downstream classifier whose encoder is copied from a pretext checkpoint.

    ``checkpoint`` is a checkpoint directory or a name->array mapping. The
    fusion head is dropped, the linear head is freshly initialised, and the
    encoder starts frozen unless ``freeze`` is False.
    """
    if isinstance(checkpoint, (str, os.PathLike)):
        if spec is None:
            spec = EncoderSpec(**read_model_json(checkpoint)["encoder"])
        weights = load_weights(checkpoint)
    else:
        weights = checkpoint
        if spec is None:
            raise SpecError("an EncoderSpec is required when passing raw weights")
    model = Classifier(spec, num_classes, seed, dtype)
    encoder_state = {k: v for k, v in weights.items() if k.startswith("encoder.")}
    for name, t in model.encoder.params.items():
        if name not in encoder_state:
            raise MissingTensor(f"checkpoint has no tensor {name!r}")
        if encoder_state[name].shape != t.shape:
            raise ShapeMismatch(f"{name}: checkpoint {encoder_state[name].shape} vs spec {t.shape}")
        t.data[...] = encoder_state[name]
    model.freeze_encoder(freeze)
    return model
