"""Name and shape correspondence between torchvision's VGG16 and NNWB.

The bundle names each weighted layer by its 1-based position in the flat
conv/relu/pool/linear sequence (conv01 .. conv29, linear33/35/37), while
torchvision indexes the same layers inside its ``features`` and
``classifier`` submodules.  The table built here is the single source of
truth for that correspondence and for the tensor shapes a VGG16
checkpoint must have; every weighted layer of the network appears in it
exactly once.
"""

from dataclasses import dataclass

INPUT_SIDE = 224
PREPROCESS_MEAN = (0.485, 0.456, 0.406)
PREPROCESS_STD = (0.229, 0.224, 0.225)
PREPROCESS_SCALE = tuple(1.0 / s for s in PREPROCESS_STD)

# The 13 convolutions, in network order: output width, index of the layer
# inside torchvision's `features` sequential, and 1-based position in the
# bundle's flat layer numbering.
_CONV_WIDTHS = (64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512)
_CONV_SOURCE_IDX = (0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28)
_CONV_BUNDLE_IDX = (1, 3, 6, 8, 11, 13, 15, 18, 20, 22, 25, 27, 29)

# The 3 fully connected layers: torchvision `classifier` index, bundle
# position, (out, in) dimensions.  25088 = 512 channels x 7 x 7 after the
# fifth pool at 224 px input.
_LINEAR_SOURCE_IDX = (0, 3, 6)
_LINEAR_BUNDLE_IDX = (33, 35, 37)
_LINEAR_DIMS = ((4096, 25088), (4096, 4096), (1000, 4096))


@dataclass(frozen=True)
class LayerMap:
    """One weighted layer: where its tensors live on each side."""

    source: str  # torchvision submodule path, e.g. "features.0"
    bundle: str  # NNWB tensor stem, e.g. "conv01"
    weight_shape: tuple
    bias_shape: tuple


def layer_table() -> tuple:
    """All 16 weighted layers in the order they are written to the bundle."""
    rows = []
    in_ch = 3
    for src, dst, width in zip(_CONV_SOURCE_IDX, _CONV_BUNDLE_IDX, _CONV_WIDTHS):
        rows.append(
            LayerMap(f"features.{src}", f"conv{dst:02d}", (width, in_ch, 3, 3), (width,))
        )
        in_ch = width
    for src, dst, dims in zip(_LINEAR_SOURCE_IDX, _LINEAR_BUNDLE_IDX, _LINEAR_DIMS):
        rows.append(LayerMap(f"classifier.{src}", f"linear{dst}", dims, (dims[0],)))
    return tuple(rows)
