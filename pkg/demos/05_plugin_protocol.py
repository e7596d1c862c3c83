"""
The external segmenter protocol
===============================

Slice segmenters run out of process: the host writes a manifest plus raw
image files, invokes `<command> --input manifest --output dir`, and reads
back one probability file per slice once the done marker appears.  This
demo drives the bundled standalone oracle plugin through that path.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from mpseg import (
    extract_slices,
    external_segmenter,
    oracle_perfect,
    run_segmenter,
    write_volume,
)
from mpseg.phantom import generate_phantom, two_sphere_spec
from mpseg.segmenter import write_slice_batch

vol, labels = generate_phantom(two_sphere_spec(dims=(24, 24, 24), radius_mm=5.0,
                                               noise_sd=15.0, seed=3))
batch = extract_slices(vol, (0, 0, 1), 24, 24.0)

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    ref = tmp / "reference.hdr"
    write_volume(labels, str(ref))

    # what lands in a work directory
    manifest = write_slice_batch(batch, str(tmp / "show"), labels.num_classes)
    print("manifest head:")
    print("\n".join(Path(manifest).read_text().splitlines()[:12]), "\n...")

    # the same oracle, in process and as an external plugin
    handle = external_segmenter(
        f"{sys.executable} -m mpseg.segmenter --reference {ref}",
        num_classes=labels.num_classes)
    external = run_segmenter(handle, batch, work_dir=str(tmp / "work"))
    internal = run_segmenter(oracle_perfect(labels), batch)
    print("external output shape:", external.shape)
    print("bit-identical with the in-process oracle:",
          external.tobytes() == internal.tobytes())
