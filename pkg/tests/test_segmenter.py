import os
import sys
import textwrap

import numpy as np
import pytest

from conftest import make_labels, make_volume
from oracles import brute_collision_count

from mpseg.distance import detect_collisions
from mpseg.errors import DataError, ProtocolError
from mpseg.metrics import dice
from mpseg.multiplanar import extract_slices
from mpseg.phantom import generate_phantom, two_sphere_spec
from mpseg.postprocess import SymmetryPairs, symmetric_cc_filter
from mpseg.segmenter import (
    CorruptionConfig,
    SliceManifest,
    corrupt_labels,
    dilate_labels,
    external_segmenter,
    oracle_corrupted,
    oracle_perfect,
    read_manifest,
    read_slice_batch,
    run_segmenter,
    validate_plugin_outputs,
    write_slice_batch,
)
from mpseg.volume import sample_nearest, write_volume


@pytest.fixture(scope="module")
def small_phantom():
    return generate_phantom(two_sphere_spec(dims=(24, 24, 24), radius_mm=5.0,
                                            surface_gap_mm=3.0, seed=2))


def _canonical_batch(vol, labels=None, weights=None, d=24):
    return extract_slices(vol, (0, 0, 1), d, float(d), labels=labels, weights=weights)


class TestManifest:
    def test_roundtrip_bit_exact(self, tmp_path, small_phantom):
        vol, lab = small_phantom
        wm = make_volume(np.full(vol.geometry.dims, 2.5), spacing=vol.geometry.spacing_mm)
        batch = _canonical_batch(vol, labels=lab, weights=wm)
        manifest_path = write_slice_batch(batch, str(tmp_path), lab.num_classes)
        manifest, images, labels, weights = read_slice_batch(manifest_path)
        assert manifest.num_classes == lab.num_classes
        assert images.tobytes() == batch.images.tobytes()
        assert labels.tobytes() == batch.labels.astype(np.uint8).tobytes()
        assert weights.tobytes() == batch.weights.tobytes()

    def test_duplicate_ids_rejected(self):
        from mpseg.segmenter import SliceEntry
        e = SliceEntry(id="a", width=2, height=2, image_path="x.bin")
        with pytest.raises(ProtocolError):
            SliceManifest(1, 2, (e, e))

    def test_unsupported_version(self):
        with pytest.raises(ProtocolError):
            SliceManifest.from_json('{"protocol_version": 2, "num_classes": 1, "entries": []}')


class TestOracles:
    def test_perfect_oracle_matches_nearest_sampling(self, small_phantom):
        vol, lab = small_phantom
        batch = _canonical_batch(vol)
        probs = run_segmenter(oracle_perfect(lab), batch)
        assert probs.shape == (24, 24, 24, lab.num_classes)
        d = 24
        kab = np.stack(np.meshgrid(*[np.arange(d)] * 3, indexing="ij"), -1)
        pts = batch.grid.grid_to_physical(kab[..., [1, 2, 0]].reshape(-1, 3).astype(float))
        want = sample_nearest(lab, pts).reshape(d, d, d)
        assert np.array_equal(np.argmax(probs, -1), want)
        onehot = np.take_along_axis(probs, want[..., None].astype(np.intp), -1)
        assert np.all(onehot == 1.0)

    def test_slice_outside_reference_is_background(self, small_phantom):
        vol, lab = small_phantom
        batch = extract_slices(vol, (0, 0, 1), 8, 8.0, center_mm=(0, 0, 500.0))
        probs = run_segmenter(oracle_perfect(lab), batch)
        assert np.all(probs[..., 0] == 1.0)

    def test_deterministic(self, small_phantom):
        vol, lab = small_phantom
        batch = _canonical_batch(vol)
        a = run_segmenter(oracle_perfect(lab), batch)
        b = run_segmenter(oracle_perfect(lab), batch)
        assert a.tobytes() == b.tobytes()

    def test_degenerate_corruption_equals_perfect(self, small_phantom):
        vol, lab = small_phantom
        batch = _canonical_batch(vol)
        a = run_segmenter(oracle_perfect(lab), batch)
        b = run_segmenter(oracle_corrupted(lab, CorruptionConfig()), batch)
        assert a.tobytes() == b.tobytes()


class TestCorruption:
    def test_swap_moves_band_voxels(self, small_phantom):
        _, lab = small_phantom
        cfg = CorruptionConfig(swap_fraction=0.2, swap_pairs=((1, 2),), seed=4)
        out = corrupt_labels(lab, cfg)
        changed = out.labels != lab.labels
        assert changed.any()
        # swaps only exchange 1 <-> 2
        assert set(np.unique(out.labels[changed])) <= {1, 2}
        assert set(np.unique(lab.labels[changed])) <= {1, 2}

    def test_swap_deterministic_per_seed(self, small_phantom):
        _, lab = small_phantom
        cfg = CorruptionConfig(swap_fraction=0.1, swap_pairs=((1, 2),), seed=7)
        a = corrupt_labels(lab, cfg)
        b = corrupt_labels(lab, cfg)
        assert a.labels.tobytes() == b.labels.tobytes()
        c = corrupt_labels(lab, CorruptionConfig(swap_fraction=0.1,
                                                 swap_pairs=((1, 2),), seed=8))
        assert c.labels.tobytes() != a.labels.tobytes()

    def test_dilation_closes_gap(self, small_phantom):
        _, lab = small_phantom
        assert detect_collisions(lab, 2.0).count == 0
        dilated = dilate_labels(lab, 2)
        rep = detect_collisions(dilated, 2.0)
        want, _ = brute_collision_count(dilated.labels, dilated.num_classes, 2.0)
        assert rep.count == want > 0

    def test_floaters_removed_by_postprocessing(self, small_phantom):
        _, lab = small_phantom
        cfg = CorruptionConfig(floater_count=2, floater_radius_vox=1.5,
                               swap_pairs=((1, 2),), seed=5)
        bad = corrupt_labels(lab, cfg)
        raw = dice(bad, lab)[1]
        cleaned, _ = symmetric_cc_filter(bad, SymmetryPairs(((1, 2),)))
        post = dice(cleaned, lab)[1]
        assert post > raw
        assert np.array_equal(cleaned.labels, lab.labels)

    def test_validation(self):
        with pytest.raises(DataError):
            CorruptionConfig(swap_fraction=0.5)
        with pytest.raises(DataError):
            CorruptionConfig(swap_fraction=2.0, swap_pairs=((1, 2),))


def _write_plugin(tmp_path, body: str) -> str:
    path = tmp_path / "plugin.py"
    path.write_text(textwrap.dedent(body))
    return f"{sys.executable} {path}"


class TestExternalPath:
    def test_standalone_oracle_plugin(self, tmp_path, small_phantom):
        vol, lab = small_phantom
        ref_path = tmp_path / "ref.hdr"
        write_volume(lab, str(ref_path))
        batch = _canonical_batch(vol)
        handle = external_segmenter(
            f"{sys.executable} -m mpseg.segmenter --reference {ref_path}",
            num_classes=lab.num_classes)
        got = run_segmenter(handle, batch, work_dir=str(tmp_path / "work"))
        want = run_segmenter(oracle_perfect(lab), batch)
        assert got.tobytes() == want.tobytes()

    def test_uniform_plugin_fuses_to_background(self, tmp_path, small_phantom):
        vol, lab = small_phantom
        plugin = _write_plugin(tmp_path, """
            import argparse, json, os
            import numpy as np
            ap = argparse.ArgumentParser()
            ap.add_argument("--input"); ap.add_argument("--output")
            a = ap.parse_args()
            doc = json.load(open(a.input))
            k = doc["num_classes"]
            os.makedirs(a.output, exist_ok=True)
            for e in doc["entries"]:
                probs = np.full((e["height"], e["width"], k), 1.0 / k, "<f4")
                probs.tofile(os.path.join(a.output, f"probs_{e['id']}.bin"))
            open(os.path.join(a.output, "done"), "w").close()
        """)
        batch = _canonical_batch(vol)
        handle = external_segmenter(plugin, num_classes=lab.num_classes)
        probs = run_segmenter(handle, batch, work_dir=str(tmp_path / "w"))
        from mpseg.multiplanar import fuse, reconstruct_view
        fused = fuse([reconstruct_view(probs, batch.grid, vol.geometry)])
        assert np.all(fused.labels == 0)  # uniform maps argmax to class 0

    def test_nonzero_exit_raises(self, tmp_path, small_phantom):
        vol, lab = small_phantom
        plugin = _write_plugin(tmp_path, """
            import sys
            sys.stderr.write("deliberate failure")
            sys.exit(4)
        """)
        batch = _canonical_batch(vol, d=8)
        with pytest.raises(ProtocolError, match="deliberate failure"):
            run_segmenter(external_segmenter(plugin, 3), batch,
                          work_dir=str(tmp_path / "w"))

    def test_short_file_names_offender(self, tmp_path, small_phantom):
        vol, lab = small_phantom
        plugin = _write_plugin(tmp_path, """
            import argparse, json, os
            import numpy as np
            ap = argparse.ArgumentParser()
            ap.add_argument("--input"); ap.add_argument("--output")
            a = ap.parse_args()
            doc = json.load(open(a.input))
            os.makedirs(a.output, exist_ok=True)
            for e in doc["entries"]:
                np.zeros(3, "<f4").tofile(os.path.join(a.output, f"probs_{e['id']}.bin"))
            open(os.path.join(a.output, "done"), "w").close()
        """)
        batch = _canonical_batch(vol, d=8)
        with pytest.raises(ProtocolError, match="slice_000"):
            run_segmenter(external_segmenter(plugin, 3), batch,
                          work_dir=str(tmp_path / "w"))

    def test_missing_done_marker(self, tmp_path, small_phantom):
        vol, _ = small_phantom
        plugin = _write_plugin(tmp_path, "pass")
        batch = _canonical_batch(vol, d=8)
        with pytest.raises(ProtocolError, match="done"):
            run_segmenter(external_segmenter(plugin, 3), batch,
                          work_dir=str(tmp_path / "w"))

    def test_nan_output_rejected(self, tmp_path, small_phantom):
        vol, _ = small_phantom
        plugin = _write_plugin(tmp_path, """
            import argparse, json, os
            import numpy as np
            ap = argparse.ArgumentParser()
            ap.add_argument("--input"); ap.add_argument("--output")
            a = ap.parse_args()
            doc = json.load(open(a.input))
            k = doc["num_classes"]
            os.makedirs(a.output, exist_ok=True)
            for e in doc["entries"]:
                probs = np.full((e["height"], e["width"], k), np.nan, "<f4")
                probs.tofile(os.path.join(a.output, f"probs_{e['id']}.bin"))
            open(os.path.join(a.output, "done"), "w").close()
        """)
        batch = _canonical_batch(vol, d=8)
        with pytest.raises(ProtocolError, match="finite"):
            run_segmenter(external_segmenter(plugin, 3), batch,
                          work_dir=str(tmp_path / "w"))

    def test_timeout(self, tmp_path, small_phantom):
        vol, _ = small_phantom
        plugin = _write_plugin(tmp_path, "import time; time.sleep(60)")
        batch = _canonical_batch(vol, d=8)
        with pytest.raises(ProtocolError, match="timed out"):
            run_segmenter(external_segmenter(plugin, 3), batch,
                          work_dir=str(tmp_path / "w"), timeout_s=1.5)
