"""Tests for the VGG16 to NNWB exporter.

Everything runs offline: weights come from a seeded he-style random state
dict (or torchvision's seeded random init for the CLI runs), never from a
download.  The full-size exports make this suite slow by unit-test
standards, a couple of minutes end to end.
"""

import filecmp
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from gazeinfer import convnet, nnwb

pytest.importorskip("vggexport", reason="exporter package not installed")

from vggexport import ExportError, export_bundle, layer_table
from vggexport.export import BUNDLE_FILE, LABELS_FILE, MANIFEST_FILE


def he_state_dict(seed):
    """Random VGG16 weights with he-ish scaling, keyed by torchvision names.

    The scaling keeps activations alive through the 16 weighted layers so
    the verification forward pass produces a meaningful argmax.
    """
    rng = np.random.default_rng(seed)
    sd = {}
    for row in layer_table():
        fan_in = int(np.prod(row.weight_shape[1:]))
        std = np.float32(np.sqrt(2.0 / fan_in))
        sd[f"{row.source}.weight"] = (
            rng.standard_normal(row.weight_shape, dtype=np.float32) * std
        )
        sd[f"{row.source}.bias"] = 0.01 * rng.standard_normal(
            row.bias_shape, dtype=np.float32
        )
    return sd


def torch_available():
    try:
        import torch  # noqa: F401
        import torchvision  # noqa: F401
    except ImportError:
        return False
    return True


@pytest.fixture(scope="session")
def source_sd():
    return he_state_dict(2026)


@pytest.fixture(scope="session")
def exported(source_sd, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    manifest = export_bundle("unit-test/he-init-2026", out, state_dict=source_sd)
    return out, manifest


class TestExportArtifacts:
    def test_writes_all_three_files(self, exported):
        out, manifest = exported
        for name in (BUNDLE_FILE, LABELS_FILE, MANIFEST_FILE):
            assert (out / name).is_file()
        assert manifest.bundle_file == BUNDLE_FILE
        assert manifest.source == "unit-test/he-init-2026"

    def test_roundtrip_bitwise(self, exported, source_sd):
        out, _ = exported
        tensors, meta, _ = nnwb.read_bundle(out / BUNDLE_FILE)
        for row in layer_table():
            for part in ("weight", "bias"):
                got = tensors[f"{row.bundle}.{part}"]
                want = source_sd[f"{row.source}.{part}"]
                assert got.dtype == np.float32
                assert got.tobytes() == want.tobytes()
        assert meta["input_side"] == 224
        assert meta["labels_file"] == LABELS_FILE

    def test_first_tensor_is_the_first_conv(self, exported):
        out, _ = exported
        tensors, _, _ = nnwb.read_bundle(out / BUNDLE_FILE)
        first = next(iter(tensors))
        assert first == "conv01.weight"
        assert tensors[first].shape == (64, 3, 3, 3)

    def test_checksums_agree_across_implementations(self, exported):
        out, manifest = exported
        _, _, checksum = nnwb.read_bundle(out / BUNDLE_FILE)
        assert checksum == manifest.checksum
        doc = json.loads((out / MANIFEST_FILE).read_text())
        assert doc["output"]["checksum_fnv1a64"] == f"{manifest.checksum:016x}"

    def test_repeat_export_identical(self, exported, source_sd, tmp_path):
        out, _ = exported
        again = tmp_path / "again"
        export_bundle("unit-test/he-init-2026", again, state_dict=source_sd)
        for name in (BUNDLE_FILE, LABELS_FILE, MANIFEST_FILE):
            assert filecmp.cmp(out / name, again / name, shallow=False), name


class TestMappingAndLoader:
    def test_mapping_covers_every_layer_once(self):
        rows = layer_table()
        assert len(rows) == 16
        assert len({r.source for r in rows}) == 16
        assert len({r.bundle for r in rows}) == 16
        spec = convnet.vgg16_spec()
        stems = []
        for idx, layer in enumerate(spec.layers, start=1):
            if layer.kind == "conv":
                stems.append(f"conv{idx:02d}")
            elif layer.kind == "linear":
                stems.append(f"linear{idx}")
        assert [r.bundle for r in rows] == stems

    def test_consumer_loader_accepts_bundle(self, exported):
        out, manifest = exported
        bundle = convnet.load_weight_bundle(out / BUNDLE_FILE)
        assert bundle.input_side == 224
        assert len(bundle.labels) == 1000
        lines = (out / LABELS_FILE).read_text().splitlines()
        assert list(bundle.labels) == lines
        assert np.allclose(bundle.preprocess_mean, (0.485, 0.456, 0.406))
        assert np.allclose(bundle.preprocess_scale, (1 / 0.229, 1 / 0.224, 1 / 0.225))
        assert "unit-test/he-init-2026" in bundle.provenance
        assert manifest.content_sha256 in bundle.provenance

    def test_manifest_document(self, exported):
        out, manifest = exported
        doc = json.loads((out / MANIFEST_FILE).read_text())
        assert len(doc["mapping"]) == 16
        assert doc["mapping"][0] == {
            "source": "features.0",
            "bundle": "conv01",
            "weight_shape": [64, 3, 3, 3],
            "bias_shape": [64],
        }
        assert doc["source"]["content_sha256"] == manifest.content_sha256
        assert len(doc["source"]["content_sha256"]) == 64
        top5 = doc["verification"]["top5"]
        assert len(top5) == 5 and len(set(top5)) == 5
        assert all(0 <= i < 1000 for i in top5)
        labels = (out / LABELS_FILE).read_text().splitlines()
        assert doc["verification"]["top5_labels"] == [labels[i] for i in top5]
        assert 0.0 < doc["verification"]["top1_probability"] <= 1.0

    @pytest.mark.skipif(not torch_available(), reason="needs torch + torchvision")
    def test_source_framework_crosscheck_ran(self, exported):
        out, manifest = exported
        doc = json.loads((out / MANIFEST_FILE).read_text())
        assert doc["verification"]["source_framework_agrees"] is True
        assert doc["verification"]["source_framework_top1"] == manifest.top5[0]
        assert manifest.source_framework_top1 == manifest.top5[0]


class TestErrors:
    def test_missing_tensor(self, tmp_path):
        sd = he_state_dict(7)
        del sd["classifier.6.bias"]
        with pytest.raises(ExportError, match="classifier.6.bias"):
            export_bundle("unit-test/broken", tmp_path / "w", state_dict=sd)

    def test_shape_mismatch_names_source_layer(self, tmp_path):
        sd = he_state_dict(7)
        sd["features.5.weight"] = sd["features.5.weight"][:, :32]
        out = tmp_path / "w"
        with pytest.raises(ExportError, match="features.5"):
            export_bundle("unit-test/broken", out, state_dict=sd)
        assert not (out / BUNDLE_FILE).exists()

    def test_labels_count_enforced(self, tmp_path, source_sd):
        with pytest.raises(ExportError, match="1000 labels"):
            export_bundle(
                "unit-test/he-init-2026",
                tmp_path / "w",
                state_dict=source_sd,
                labels=["a"] * 999,
            )

    def test_unknown_source(self, tmp_path):
        with pytest.raises(ExportError, match="unknown source"):
            export_bundle("zoo/alexnet", tmp_path / "w")


@pytest.mark.skipif(not torch_available(), reason="needs torch + torchvision")
class TestCli:
    def _run(self, *argv):
        return subprocess.run(
            [sys.executable, "-m", "vggexport", *argv],
            capture_output=True,
            text=True,
        )

    def test_export_twice_identical_checksums(self, tmp_path):
        digests = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            res = self._run(
                "export", "--source", "torchvision/vgg16:random", "--out", str(out)
            )
            assert res.returncode == 0, res.stderr
            assert "wrote vgg16.nnwb" in res.stdout
            labels = (out / LABELS_FILE).read_text().splitlines()
            assert len(labels) == 1000
            doc = json.loads((out / MANIFEST_FILE).read_text())
            assert doc["verification"]["source_framework_agrees"] is True
            digests.append(hashlib.sha256((out / BUNDLE_FILE).read_bytes()).hexdigest())
            digests.append(doc["output"]["checksum_fnv1a64"])
        assert digests[0] == digests[2]
        assert digests[1] == digests[3]

    def test_usage_errors_exit_1(self, tmp_path):
        res = self._run()
        assert res.returncode == 1
        assert "usage" in res.stderr
        res = self._run("export", "--source", "torchvision/vgg16:random")
        assert res.returncode == 1
        assert "--out" in res.stderr

    def test_unknown_source_exits_2(self, tmp_path):
        res = self._run("export", "--source", "zoo/alexnet", "--out", str(tmp_path))
        assert res.returncode == 2
        assert "unknown source" in res.stderr
