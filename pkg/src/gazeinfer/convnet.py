"""VGG16-style network: spec, weight bundles, tapped forward pass, classifier.

Layer indices are 1-based over the whole sequence.  The feature stack runs
from index 1 to 31 (13 conv+relu pairs with 5 interleaved pools), then
flatten (32) and the classifier head (33-38).  Taps name points in that
sequence where activations are captured post-layer:

    T1 = 5   first pool        T5 = 24  fourth pool
    T2 = 10  second pool       T6 = 30  relu after conv 5_3
    T3 = 17  third pool        T7 = 31  fifth pool
    T4 = 23  relu after conv 4_3

Whether a published layer count starts at 0 or 1, and whether activations
are read before or after the nonlinearity, varies between papers; the
mapping above is data, not code, so alternative tap sets can be passed
anywhere a tap set is accepted, and reports echo the index mapping.
"""

from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from . import nnwb
from .errors import FormatError, ShapeMismatchError
from .tensorops import conv2d, maxpool2d, pool_output_extent, relu, softmax

DEFAULT_TAPS = MappingProxyType(
    {"T1": 5, "T2": 10, "T3": 17, "T4": 23, "T5": 24, "T6": 30, "T7": 31}
)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_SCALE = (1.0 / 0.229, 1.0 / 0.224, 1.0 / 0.225)


@dataclass(frozen=True)
class LayerDesc:
    kind: str  # conv | relu | maxpool | flatten | linear | softmax
    out_ch: int = 0  # conv: output channels, linear: output dim
    k: int = 3
    pad: int = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list plus the label -> 1-based index tap table."""

    layers: tuple
    taps: dict = field(default_factory=lambda: dict(DEFAULT_TAPS))
    ceil_pool: bool = True

    def tap_indices(self, labels):
        out = {}
        for lab in labels:
            if lab not in self.taps:
                raise ShapeMismatchError(
                    f"unknown tap {lab!r}; known: {sorted(self.taps)}"
                )
            out[lab] = self.taps[lab]
        return out

    def weight_names(self):
        """(index, kind, weight_name, bias_name) for every weighted layer."""
        out = []
        for idx, layer in enumerate(self.layers, start=1):
            if layer.kind == "conv":
                out.append((idx, "conv", f"conv{idx:02d}.weight", f"conv{idx:02d}.bias"))
            elif layer.kind == "linear":
                out.append((idx, "linear", f"linear{idx}.weight", f"linear{idx}.bias"))
        return out


_VGG16_CONV_PLAN = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)]


def vgg16_spec() -> NetworkSpec:
    layers = []
    for n_convs, ch in _VGG16_CONV_PLAN:
        for _ in range(n_convs):
            layers.append(LayerDesc("conv", out_ch=ch, k=3, pad=1))
            layers.append(LayerDesc("relu"))
        layers.append(LayerDesc("maxpool", k=2))
    layers.append(LayerDesc("flatten"))
    for dim in (4096, 4096, 1000):
        layers.append(LayerDesc("linear", out_ch=dim))
        if dim != 1000:
            layers.append(LayerDesc("relu"))
    layers.append(LayerDesc("softmax"))
    return NetworkSpec(layers=tuple(layers))


@dataclass(frozen=True)
class WeightBundle:
    """Immutable named tensors plus the constants that make them usable.

    ``preprocess_scale`` multiplies after the mean subtraction, i.e. it is
    the reciprocal of a normalization standard deviation.
    """

    tensors: object  # read-only mapping name -> ndarray
    preprocess_mean: tuple
    preprocess_scale: tuple
    input_side: int
    labels: tuple
    provenance: str
    _checksum: object = None  # int, or callable for lazy computation

    @property
    def checksum(self) -> int:
        val = self._checksum
        if callable(val):
            val = val()
            object.__setattr__(self, "_checksum", val)
        return val

    def metadata(self) -> dict:
        return {
            "preprocess_mean": list(self.preprocess_mean),
            "preprocess_scale": list(self.preprocess_scale),
            "input_side": self.input_side,
            "labels_file": None,
            "provenance": self.provenance,
        }


def _expected_shapes(spec: NetworkSpec, input_side: int):
    """name -> shape for every weight tensor, walking the layer sequence."""
    shapes = {}
    ch, side = 3, input_side
    flat = None
    for idx, layer in enumerate(spec.layers, start=1):
        if layer.kind == "conv":
            shapes[f"conv{idx:02d}.weight"] = (layer.out_ch, ch, layer.k, layer.k)
            shapes[f"conv{idx:02d}.bias"] = (layer.out_ch,)
            ch = layer.out_ch
        elif layer.kind == "maxpool":
            side = pool_output_extent(side, layer.k, layer.k, spec.ceil_pool)
        elif layer.kind == "flatten":
            flat = ch * side * side
        elif layer.kind == "linear":
            shapes[f"linear{idx}.weight"] = (layer.out_ch, flat)
            shapes[f"linear{idx}.bias"] = (layer.out_ch,)
            flat = layer.out_ch
    return shapes


def _freeze(tensors):
    frozen = {}
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype=np.float32)
        # File-backed views land at arbitrary byte offsets; copy those once
        # here so the hot loops never re-copy per call.
        if not (a.flags.c_contiguous and a.flags.aligned):
            a = a.astype(np.float32, order="C")
        a.flags.writeable = False
        frozen[name] = a
    return MappingProxyType(frozen)


def load_weight_bundle(path, spec: NetworkSpec = None) -> WeightBundle:
    """Read an NNWB file, verify its checksum, and shape-check every tensor.

    The label file named in the metadata is resolved relative to the bundle
    and loaded when present; classification reports work without it but
    then show bare class indices.
    """
    import os

    if spec is None:
        spec = vgg16_spec()
    tensors, meta, checksum = nnwb.read_bundle(path)
    for key in ("preprocess_mean", "preprocess_scale", "input_side"):
        if key not in meta:
            raise FormatError(f"{path}: metadata missing {key!r}")
    input_side = int(meta["input_side"])
    expected = _expected_shapes(spec, input_side)
    for name, shape in expected.items():
        if name not in tensors:
            raise FormatError(f"{path}: bundle is missing tensor {name!r}")
        if tuple(tensors[name].shape) != shape:
            raise ShapeMismatchError(
                f"{path}: tensor {name!r} has shape {tuple(tensors[name].shape)}, "
                f"network needs {shape}"
            )
    labels = None
    labels_file = meta.get("labels_file")
    if labels_file:
        lp = os.path.join(os.path.dirname(os.path.abspath(path)), labels_file)
        if os.path.exists(lp):
            with open(lp, "r", encoding="utf-8") as fh:
                labels = tuple(line.rstrip("\n") for line in fh)
    return WeightBundle(
        tensors=_freeze(tensors),
        preprocess_mean=tuple(float(v) for v in meta["preprocess_mean"]),
        preprocess_scale=tuple(float(v) for v in meta["preprocess_scale"]),
        input_side=input_side,
        labels=labels,
        provenance=str(meta.get("provenance", "")),
        _checksum=checksum,
    )


def random_bundle(seed: int, spec: NetworkSpec = None) -> WeightBundle:
    """Seeded random weights on the full network topology.

    Kernels are uniform in [-a, a] with a = sqrt(6 / fan_in); biases are
    zero.  That keeps activation magnitudes bounded through the deep stack
    without any training, which is all a random-weight control needs.
    """
    if spec is None:
        spec = vgg16_spec()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _expected_shapes(spec, 224).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            a = float(np.sqrt(6.0 / fan_in))
            tensors[name] = rng.uniform(-a, a, size=shape).astype(np.float32)
    frozen = _freeze(tensors)
    provenance = f"random-uniform(seed={seed})"
    labels = tuple(f"class_{i:04d}" for i in range(1000))
    meta = {
        "preprocess_mean": list(IMAGENET_MEAN),
        "preprocess_scale": list(IMAGENET_SCALE),
        "input_side": 224,
        "labels_file": None,
        "provenance": provenance,
    }
    return WeightBundle(
        tensors=frozen,
        preprocess_mean=IMAGENET_MEAN,
        preprocess_scale=IMAGENET_SCALE,
        input_side=224,
        labels=labels,
        provenance=provenance,
        _checksum=lambda: nnwb.stream_checksum(frozen, meta),
    )


def preprocess_image(rgb01, bundle: WeightBundle) -> np.ndarray:
    """(3, H, W) float image in [0, 1] -> network input using bundle constants."""
    x = np.asarray(rgb01, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeMismatchError(f"preprocess expects (3, H, W), got {x.shape}")
    mean = np.asarray(bundle.preprocess_mean, dtype=np.float32)[:, None, None]
    scale = np.asarray(bundle.preprocess_scale, dtype=np.float32)[:, None, None]
    return (x - mean) * scale


def _min_surviving_extent(spec: NetworkSpec, upto_index: int) -> int:
    for side in range(1, 513):
        s = side
        ok = True
        for layer in spec.layers[:upto_index]:
            if layer.kind == "maxpool":
                s = pool_output_extent(s, layer.k, layer.k, spec.ceil_pool)
                if s < 1:
                    ok = False
                    break
        if ok:
            return side
    return 513


def forward_taps(spec: NetworkSpec, bundle: WeightBundle, image, taps=None) -> dict:
    """Run the feature stack once, capturing activations at the requested taps.

    ``image`` must already be preprocessed.  Runs only as deep as the
    deepest requested tap and never touches the classifier head.
    """
    if taps is None:
        taps = tuple(spec.taps)
    wanted = spec.tap_indices(taps)
    deepest = max(wanted.values())
    x = np.asarray(image, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeMismatchError(f"forward_taps expects a (3, H, W) image, got {x.shape}")
    h, w = x.shape[1], x.shape[2]
    m = _min_surviving_extent(spec, deepest)
    if h < m or w < m:
        raise ShapeMismatchError(
            f"image {h}x{w} too small for tap index {deepest}; minimum extent is {m}"
        )
    by_index = {}
    for idx, layer in enumerate(spec.layers, start=1):
        if idx > deepest:
            break
        if layer.kind == "conv":
            x = conv2d(x, bundle.tensors[f"conv{idx:02d}.weight"],
                       bias=bundle.tensors[f"conv{idx:02d}.bias"], pad=layer.pad)
        elif layer.kind == "relu":
            x = relu(x)
        elif layer.kind == "maxpool":
            x = maxpool2d(x, layer.k, layer.k, ceil_mode=spec.ceil_pool)
        else:
            raise ShapeMismatchError(
                f"tap index {deepest} reaches non-feature layer {layer.kind!r} at {idx}"
            )
        if idx in wanted.values():
            by_index[idx] = x
    return {lab: by_index[i] for lab, i in wanted.items()}


def classify(spec: NetworkSpec, bundle: WeightBundle, image) -> np.ndarray:
    """Full forward pass to the 1000-way probability vector.

    Input must be preprocessed and exactly (3, side, side) for the bundle's
    input side (224 for the standard networks here).
    """
    x = np.asarray(image, dtype=np.float32)
    side = bundle.input_side
    if x.shape != (3, side, side):
        raise ShapeMismatchError(f"classify expects (3, {side}, {side}), got {x.shape}")
    for idx, layer in enumerate(spec.layers, start=1):
        if layer.kind == "conv":
            x = conv2d(x, bundle.tensors[f"conv{idx:02d}.weight"],
                       bias=bundle.tensors[f"conv{idx:02d}.bias"], pad=layer.pad)
        elif layer.kind == "relu":
            x = relu(x)
        elif layer.kind == "maxpool":
            x = maxpool2d(x, layer.k, layer.k, ceil_mode=spec.ceil_pool)
        elif layer.kind == "flatten":
            x = x.ravel()
        elif layer.kind == "linear":
            w = bundle.tensors[f"linear{idx}.weight"]
            b = bundle.tensors[f"linear{idx}.bias"]
            if x.shape != (w.shape[1],):
                raise ShapeMismatchError(
                    f"linear{idx} expects {w.shape[1]} inputs, got {x.shape}"
                )
            x = w @ x + b
        elif layer.kind == "softmax":
            x = softmax(x)
    return x
