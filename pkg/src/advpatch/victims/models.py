"""Victim networks: depth (disparity) regression and 6-class segmentation.

Both are small convolutional nets built on the autodiff core, so attack
gradients flow from the losses back to the composited texture. Weights are
float64 throughout; inference is a pure function of (weights, input).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..diffcore import Tensor
from ..scenegen import CLASS_NAMES

SCHEMA_VERSION = 1


class VictimError(ValueError):
    pass


@dataclass(frozen=True)
class DisparityConvention:
    """Affine disparity in (0,1) mapped to metric depth.

    disp=1 is the near limit d_min, disp=0 the far limit d_max; depth is
    strictly decreasing in disparity.
    """

    d_min: float = 0.5
    d_max: float = 50.0

    def __post_init__(self) -> None:
        if not 0 < self.d_min < self.d_max:
            raise VictimError("need 0 < d_min < d_max")

    def depth(self, disp):
        scale = 1.0 / self.d_min - 1.0 / self.d_max
        return 1.0 / (disp * scale + 1.0 / self.d_max)

    def disparity(self, depth):
        scale = 1.0 / self.d_min - 1.0 / self.d_max
        return (1.0 / depth - 1.0 / self.d_max) / scale


@dataclass(frozen=True)
class LayerSpec:
    c_in: int
    c_out: int
    stride: int = 1
    dilation: int = 1
    relu: bool = True

    @property
    def padding(self) -> int:
        return self.dilation        # keeps 3x3 output size at stride 1


def _he_init(rng: np.random.Generator, spec: LayerSpec):
    fan_in = spec.c_in * 9
    w = rng.standard_normal((spec.c_out, spec.c_in, 3, 3)) * np.sqrt(2.0 / fan_in)
    b = np.zeros(spec.c_out)
    return w, b


def _scaled(width: int, mult: float) -> int:
    return max(4, int(round(width * mult)))


@dataclass
class ConvNet:
    """Shared weight container: a list of 3x3 conv layers plus metadata.

    dtype float32 is the working precision for training and attack loops;
    float64 twins (see to_dtype) serve finite-difference verification.
    """

    kind: str
    specs: list[LayerSpec]
    weights: list[Tensor] = field(default_factory=list)
    seed: int = 0
    width_mult: float = 1.0
    dtype: str = "float32"

    def init_weights(self) -> None:
        rng = np.random.default_rng(self.seed)
        dt = np.dtype(self.dtype)
        self.weights = []
        for spec in self.specs:
            w, b = _he_init(rng, spec)
            self.weights.append(dc.Tensor(w.astype(dt), requires_grad=True))
            self.weights.append(dc.Tensor(b.astype(dt), requires_grad=True))

    def param_count(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self.weights)

    def parameters(self) -> list[Tensor]:
        return self.weights

    def set_trainable(self, flag: bool) -> None:
        for t in self.weights:
            t.requires_grad = flag

    def checksum(self) -> str:
        h = hashlib.sha256()
        for t in self.weights:
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def layer(self, i: int, x: Tensor) -> Tensor:
        spec = self.specs[i]
        w, b = self.weights[2 * i], self.weights[2 * i + 1]
        y = dc.conv2d(x, w, b, stride=spec.stride, padding=spec.padding,
                      dilation=spec.dilation)
        if spec.relu:
            y = dc.maximum(y, 0.0)
        return y


def _check_input(x: Tensor, multiple: int, net: ConvNet) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise VictimError(f"expected (N, 3, H, W) input, got {x.shape}")
    if x.shape[2] % multiple or x.shape[3] % multiple:
        raise VictimError(
            f"spatial dims {x.shape[2:]}, must be multiples of {multiple}")
    return dc.cast(x, net.dtype)


@dataclass
class MDEModel:
    """Encoder-decoder disparity net: stride-2 stem plus two more stride-2
    stages, nearest upsampling back, one skip connection, sigmoid head.

    The decoder stops at half resolution and the head output is upsampled
    once more; keeping the widest layers off the full grid cuts the cost
    of a forward pass roughly fourfold."""

    net: ConvNet
    convention: DisparityConvention = field(default_factory=DisparityConvention)
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, seed: int = 0, width_mult: float = 1.0,
               convention: DisparityConvention | None = None,
               dtype: str = "float32") -> "MDEModel":
        c1 = _scaled(32, width_mult)
        c2 = _scaled(48, width_mult)
        c3 = _scaled(64, width_mult)
        specs = [
            LayerSpec(3, c1, stride=2),
            LayerSpec(c1, c2, stride=2),
            LayerSpec(c2, c3, stride=2),
            LayerSpec(c3, c3),
            LayerSpec(c3, c2),
            LayerSpec(c2 + c1, c1),           # after skip concat
            LayerSpec(c1, 1, relu=False),
        ]
        net = ConvNet(kind="mde", specs=specs, seed=seed, width_mult=width_mult,
                      dtype=dtype)
        net.init_weights()
        return cls(net=net, convention=convention or DisparityConvention())

    def forward(self, x: Tensor) -> Tensor:
        x = _check_input(x, 8, self.net)
        h1 = self.net.layer(0, x)                   # 1/2 resolution
        h2 = self.net.layer(1, h1)                  # 1/4
        h3 = self.net.layer(2, h2)                  # 1/8
        h4 = self.net.layer(3, h3)
        h5 = self.net.layer(4, dc.upsample2x(h4))   # 1/4
        u2 = dc.upsample2x(h5)                      # 1/2, matches h1
        h6 = self.net.layer(5, dc.concat([u2, h1], axis=1))
        return dc.upsample2x(dc.sigmoid(self.net.layer(6, h6)))


@dataclass
class SSModel:
    """Dilated fully-convolutional segmentation net, 6-class softmax.

    A stride-2 stem halves the grid the dilated trunk runs on; per-pixel
    logits are recovered with a final nearest upsample."""

    net: ConvNet
    classes: tuple[str, ...] = CLASS_NAMES
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, seed: int = 0, width_mult: float = 1.0,
               dtype: str = "float32") -> "SSModel":
        c1 = _scaled(24, width_mult)
        c2 = _scaled(32, width_mult)
        c3 = _scaled(40, width_mult)
        specs = [
            LayerSpec(3, c1, stride=2),
            LayerSpec(c1, c2, dilation=2),
            LayerSpec(c2, c3, dilation=4),
            LayerSpec(c3, c3, dilation=8),
            LayerSpec(c3, c2, dilation=2),
            LayerSpec(c2, len(CLASS_NAMES), relu=False),
        ]
        net = ConvNet(kind="ss", specs=specs, seed=seed, width_mult=width_mult,
                      dtype=dtype)
        net.init_weights()
        return cls(net=net)

    def logits(self, x: Tensor) -> Tensor:
        h = _check_input(x, 2, self.net)
        for i in range(len(self.net.specs)):
            h = self.net.layer(i, h)
        return dc.upsample2x(h)

    def forward(self, x: Tensor) -> Tensor:
        return dc.softmax_channel(self.logits(x))

    def features(self, x: Tensor, layer: int = 3) -> Tensor:
        """Intermediate activations for the content loss (frozen usage)."""
        if not 0 <= layer < len(self.net.specs):
            raise VictimError(f"feature layer {layer} out of range")
        h = _check_input(x, 2, self.net)
        for i in range(layer + 1):
            h = self.net.layer(i, h)
        return h


def to_dtype(model: MDEModel | SSModel, dtype: str) -> MDEModel | SSModel:
    """Same architecture and weights at another float precision.

    Gradient verification runs the float64 twin so finite differences are
    not drowned by single-precision rounding.
    """
    if isinstance(model, MDEModel):
        twin: MDEModel | SSModel = MDEModel.create(
            seed=model.net.seed, width_mult=model.net.width_mult,
            convention=model.convention, dtype=dtype)
    else:
        twin = SSModel.create(seed=model.net.seed,
                              width_mult=model.net.width_mult, dtype=dtype)
    dt = np.dtype(dtype)
    for src, dst in zip(model.net.weights, twin.net.weights):
        dst.data = src.data.astype(dt)
    return twin


def image_to_batch(img) -> Tensor:
    """(H, W, 3) image to an (1, 3, H, W) network input, keeping gradients."""
    if isinstance(img, Tensor):
        h, w, c = img.shape
        return dc.reshape(dc.transpose(img, (2, 0, 1)), (1, c, h, w))
    arr = np.asarray(img, dtype=np.float64)
    return dc.constant(arr.transpose(2, 0, 1)[None])


def predict_disparity(model: MDEModel, x: Tensor) -> Tensor:
    """Disparity maps (N, H, W) in (0,1), differentiable wrt x."""
    out = model.forward(x)
    n, _, h, w = out.shape
    return dc.reshape(out, (n, h, w))


def predict_semantics(model: SSModel, x: Tensor) -> Tensor:
    """Per-pixel class probabilities (N, C, H, W), differentiable wrt x."""
    return model.forward(x)


def save_checkpoint(model: MDEModel | SSModel, path) -> None:
    net = model.net
    meta = {
        "schema": SCHEMA_VERSION,
        "kind": net.kind,
        "seed": net.seed,
        "width_mult": net.width_mult,
        "dtype": net.dtype,
        "specs": [[s.c_in, s.c_out, s.stride, s.dilation, int(s.relu)]
                  for s in net.specs],
    }
    if net.kind == "mde":
        meta["d_min"] = model.convention.d_min
        meta["d_max"] = model.convention.d_max
    else:
        meta["classes"] = list(model.classes)
    arrays = {f"p{i}": t.data for i, t in enumerate(net.weights)}
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> MDEModel | SSModel:
    try:
        with np.load(path) as npz:
            data = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise VictimError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in data:
        raise VictimError(f"checkpoint {path} has no metadata record")
    try:
        meta = json.loads(bytes(data["meta"]).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VictimError(f"checkpoint {path} metadata is corrupt") from exc
    if meta.get("schema") != SCHEMA_VERSION:
        raise VictimError(
            f"checkpoint schema {meta.get('schema')!r} unsupported "
            f"(expected {SCHEMA_VERSION})")
    kind = meta.get("kind")
    if kind == "mde":
        model: MDEModel | SSModel = MDEModel.create(
            seed=meta["seed"], width_mult=meta["width_mult"],
            convention=DisparityConvention(meta["d_min"], meta["d_max"]),
            dtype=meta.get("dtype", "float32"))
    elif kind == "ss":
        model = SSModel.create(seed=meta["seed"], width_mult=meta["width_mult"],
                               dtype=meta.get("dtype", "float32"))
        if tuple(meta.get("classes", ())) != model.classes:
            raise VictimError("checkpoint class table does not match")
    else:
        raise VictimError(f"unknown checkpoint kind {kind!r}")
    net = model.net
    stored = [tuple(s) for s in meta["specs"]]
    current = [(s.c_in, s.c_out, s.stride, s.dilation, int(s.relu))
               for s in net.specs]
    if stored != current:
        raise VictimError("checkpoint layer table does not match architecture")
    for i, t in enumerate(net.weights):
        key = f"p{i}"
        if key not in data:
            raise VictimError(f"checkpoint missing weight {key}")
        arr = np.asarray(data[key], dtype=np.dtype(meta.get("dtype", "float32")))
        if arr.shape != t.shape:
            raise VictimError(
                f"weight {key} shape {arr.shape} does not match {t.shape}")
        t.data = arr
    return model
