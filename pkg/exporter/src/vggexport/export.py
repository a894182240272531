"""Convert a VGG16 checkpoint to an NNWB bundle, labels file and manifest.

The pipeline: resolve the source checkpoint to raw float32 tensors, rename
them through the layer table, write ``vgg16.nnwb`` / ``labels.txt`` /
``manifest.json``, then verify the artifact by reloading it through the
consuming library (gazeinfer) and classifying a built-in probe image.  The
probe's top-5 lands in the manifest.  When torch is importable the same
exported tensors are loaded back into a torchvision VGG16 and its top-1 on
the identical preprocessed input must agree with the bundle's; that guards
against silent layout or naming drift between the two implementations.

Supported source ids:

    torchvision/vgg16                 pretrained IMAGENET1K_V1 (downloads)
    torchvision/vgg16:<WEIGHTS_NAME>  any torchvision VGG16_Weights entry
    torchvision/vgg16:random          seeded random init, offline smoke runs

Callers can also hand ``export_bundle`` a raw state dict keyed by
torchvision parameter names; the source id is then recorded as provenance
only and nothing is downloaded.
"""

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mapping import (
    INPUT_SIDE,
    PREPROCESS_MEAN,
    PREPROCESS_SCALE,
    layer_table,
)
from .writer import write_nnwb

BUNDLE_FILE = "vgg16.nnwb"
LABELS_FILE = "labels.txt"
MANIFEST_FILE = "manifest.json"
N_CLASSES = 1000

_PROBE_NAME = "builtin radial sweep v1"


class ExportError(Exception):
    """Any failure that makes the export invalid."""


class SourceUnavailableError(ExportError, OSError):
    """The source checkpoint could not be obtained; retrying may succeed."""


@dataclass(frozen=True)
class ExportManifest:
    """What was exported, from where, and how the verification went."""

    source: str
    source_version: str
    content_sha256: str
    checksum: int
    mapping: tuple
    preprocess_mean: tuple
    preprocess_scale: tuple
    input_side: int
    bundle_file: str
    labels_file: str
    manifest_file: str
    top5: tuple
    top5_labels: tuple
    top1_probability: float
    source_framework_top1: Optional[int]


def probe_image(side: int = INPUT_SIDE) -> np.ndarray:
    """Deterministic RGB probe used by the reload-and-classify check.

    A radial phase sweep plus a straight ramp: smooth, full range in every
    channel, and structured enough that the leading logits do not tie.
    """
    ax = np.linspace(0.0, 1.0, side, dtype=np.float32)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    rad = np.hypot(xx - 0.5, yy - 0.5).astype(np.float32) * 2.0
    turn = np.float32(2.0 * np.pi)
    red = 0.5 + 0.5 * np.cos(turn * (xx + 0.25 * rad))
    green = yy
    blue = 0.5 + 0.5 * np.sin(turn * (yy - 0.25 * rad))
    return np.clip(np.stack([red, green, blue]), 0.0, 1.0).astype(np.float32)


def _tensors_from_state_dict(state_dict) -> dict:
    """Pull the 32 mapped tensors, shape-check them, rename to bundle names.

    Unrecognized keys are ignored; frameworks keep bookkeeping buffers in
    their state dicts that have no place in the bundle.
    """
    out = {}
    for row in layer_table():
        for part, want in (("weight", row.weight_shape), ("bias", row.bias_shape)):
            key = f"{row.source}.{part}"
            if key not in state_dict:
                raise ExportError(f"source checkpoint is missing tensor {key!r}")
            arr = state_dict[key]
            if hasattr(arr, "detach"):
                arr = arr.detach().cpu().numpy()
            arr = np.asarray(arr, dtype=np.float32)
            if tuple(arr.shape) != want:
                raise ExportError(
                    f"source layer {row.source!r}: {part} has shape "
                    f"{tuple(arr.shape)}, VGG16 needs {want}"
                )
            out[f"{row.bundle}.{part}"] = np.ascontiguousarray(arr)
    return out


def _content_sha256(tensors) -> str:
    h = hashlib.sha256()
    for name, arr in tensors.items():
        h.update(name.encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


def _generated_labels():
    return [f"class_{i:04d}" for i in range(N_CLASSES)]


def _load_torchvision(variant: str):
    """Source id resolution for the torchvision/vgg16 family."""
    try:
        import torch
        import torchvision
    except ImportError as exc:
        raise SourceUnavailableError(
            "torchvision sources need the 'torch' and 'torchvision' packages "
            "(pip install 'gazeinfer-export[torch]')"
        ) from exc

    if variant == "random":
        torch.manual_seed(0)
        model = torchvision.models.vgg16(weights=None)
        labels = _generated_labels()
        version = f"torchvision {torchvision.__version__}, seeded random init"
    else:
        name = variant or "IMAGENET1K_V1"
        try:
            weights = torchvision.models.VGG16_Weights[name]
        except KeyError:
            known = ", ".join(w.name for w in torchvision.models.VGG16_Weights)
            raise ExportError(
                f"unknown torchvision/vgg16 variant {name!r}; known: {known}, random"
            ) from None
        try:
            model = torchvision.models.vgg16(weights=weights)
        except Exception as exc:
            raise SourceUnavailableError(
                f"could not fetch the {name} checkpoint: {exc}"
            ) from exc
        labels = [str(c) for c in weights.meta["categories"]]
        version = f"torchvision {torchvision.__version__}, {name}"
    model.eval()
    return model.state_dict(), labels, version


def _resolve_source(source: str):
    base, _, variant = source.partition(":")
    if base == "torchvision/vgg16":
        return _load_torchvision(variant)
    raise ExportError(
        f"unknown source {source!r}; expected 'torchvision/vgg16[:VARIANT]' "
        "or an explicit state_dict"
    )


def _verify_bundle(bundle_path, tensors):
    """Reload through the consumer library and classify the probe.

    Going through gazeinfer's loader rather than a reader of our own means
    the check exercises the real consumer: checksum validation, shape
    checks against the network topology, and the full forward pass.
    """
    from gazeinfer import convnet

    bundle = convnet.load_weight_bundle(bundle_path)
    for name, arr in tensors.items():
        if bundle.tensors[name].tobytes() != arr.tobytes():
            raise ExportError(f"round-trip mismatch in tensor {name!r}")
    x = convnet.preprocess_image(probe_image(), bundle)
    probs = convnet.classify(convnet.vgg16_spec(), bundle, x)
    top5 = [int(i) for i in np.argsort(probs)[::-1][:5]]
    return x, probs, top5, bundle.checksum


def _source_framework_top1(tensors, x) -> Optional[int]:
    """Top-1 of a torchvision VGG16 rebuilt from the exported arrays.

    Runs on the identical preprocessed input so any disagreement is a
    weight-transfer defect, not a preprocessing one.  Returns None when
    torch is not importable.
    """
    try:
        import torch
        import torchvision
    except ImportError:
        return None
    model = torchvision.models.vgg16(weights=None)
    sd = {}
    for row in layer_table():
        for part in ("weight", "bias"):
            sd[f"{row.source}.{part}"] = torch.from_numpy(tensors[f"{row.bundle}.{part}"])
    model.load_state_dict(sd)
    model.eval()
    with torch.no_grad():
        logits = model(torch.from_numpy(x[None]))
    return int(logits.argmax())


def export_bundle(source, out_dir, state_dict=None, labels=None) -> ExportManifest:
    """Write vgg16.nnwb, labels.txt and manifest.json under ``out_dir``.

    ``source`` identifies the checkpoint (see the module docstring for
    recognized ids).  With an explicit ``state_dict`` nothing is fetched
    and ``source`` is recorded as provenance only.  ``labels`` overrides
    the class names; exactly 1000 are required.  Returns the manifest,
    which is also serialized as JSON next to the bundle.
    """
    if state_dict is None:
        state_dict, fetched_labels, version = _resolve_source(str(source))
        if labels is None:
            labels = fetched_labels
    else:
        version = "caller-supplied state_dict"
    if labels is None:
        labels = _generated_labels()
    labels = [str(lbl) for lbl in labels]
    if len(labels) != N_CLASSES:
        raise ExportError(f"need exactly {N_CLASSES} labels, got {len(labels)}")

    tensors = _tensors_from_state_dict(state_dict)
    digest = _content_sha256(tensors)

    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    bundle_path = os.path.join(out_dir, BUNDLE_FILE)

    with open(os.path.join(out_dir, LABELS_FILE), "w", encoding="utf-8") as fh:
        fh.write("\n".join(labels) + "\n")

    metadata = {
        "preprocess_mean": list(PREPROCESS_MEAN),
        "preprocess_scale": [float(s) for s in PREPROCESS_SCALE],
        "input_side": INPUT_SIDE,
        "labels_file": LABELS_FILE,
        "provenance": f"{source} | {version} | sha256:{digest}",
    }
    checksum = write_nnwb(bundle_path, tensors, metadata)

    x, probs, top5, loaded_checksum = _verify_bundle(bundle_path, tensors)
    if loaded_checksum != checksum:
        raise ExportError(
            f"checksum disagreement: wrote {checksum:016x}, "
            f"consumer read {loaded_checksum:016x}"
        )
    src_top1 = _source_framework_top1(tensors, x)
    if src_top1 is not None and src_top1 != top5[0]:
        raise ExportError(
            f"verification failed: bundle top-1 {top5[0]} but the source "
            f"framework says {src_top1}"
        )

    rows = layer_table()
    doc = {
        "source": {"id": str(source), "version": version, "content_sha256": digest},
        "mapping": [
            {
                "source": r.source,
                "bundle": r.bundle,
                "weight_shape": list(r.weight_shape),
                "bias_shape": list(r.bias_shape),
            }
            for r in rows
        ],
        "preprocess": {
            "mean": list(PREPROCESS_MEAN),
            "scale": [float(s) for s in PREPROCESS_SCALE],
            "input_side": INPUT_SIDE,
        },
        "output": {
            "bundle_file": BUNDLE_FILE,
            "labels_file": LABELS_FILE,
            "checksum_fnv1a64": f"{checksum:016x}",
            "bundle_bytes": os.path.getsize(bundle_path),
        },
        "verification": {
            "probe": _PROBE_NAME,
            "top5": top5,
            "top5_labels": [labels[i] for i in top5],
            "top1_probability": float(probs[top5[0]]),
            "source_framework_top1": src_top1,
            "source_framework_agrees": None if src_top1 is None else src_top1 == top5[0],
        },
    }
    with open(os.path.join(out_dir, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return ExportManifest(
        source=str(source),
        source_version=version,
        content_sha256=digest,
        checksum=checksum,
        mapping=rows,
        preprocess_mean=PREPROCESS_MEAN,
        preprocess_scale=tuple(float(s) for s in PREPROCESS_SCALE),
        input_side=INPUT_SIDE,
        bundle_file=BUNDLE_FILE,
        labels_file=LABELS_FILE,
        manifest_file=MANIFEST_FILE,
        top5=tuple(top5),
        top5_labels=tuple(labels[i] for i in top5),
        top1_probability=float(probs[top5[0]]),
        source_framework_top1=src_top1,
    )
