"""Write a manifest CSV for an image tree laid out as <root>/<split>/<label>/*.

    python scripts/make_manifest.py /data/HotelBath hotelbath.csv

With --placeholder the tree is not read; instead a manifest with the
published per-cell counts (and fake paths) is written, which is enough to
exercise `bathcls dataset-stats` without the images.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

from bathcls.dataset import Manifest, Record, manifest_from_directory, stats, write_manifest

PUBLISHED_COUNTS = {("good", "train"): 6822, ("bad", "train"): 3739, ("good", "test"): 359, ("bad", "test"): 196}


@dataclass
class ManifestJob:
    output: Path
    root: Path | None = None
    placeholder: bool = False


def placeholder_manifest(counts=PUBLISHED_COUNTS) -> Manifest:
    return Manifest([
        Record(f"{split}/{label}/{label}_{i:05d}.jpg", label, split)
        for (label, split), n in counts.items()
        for i in range(n)
    ])


def run(job: ManifestJob) -> Manifest:
    if job.placeholder:
        m = placeholder_manifest()
    elif job.root is None:
        raise SystemExit("need an image root or --placeholder")
    else:
        m = manifest_from_directory(job.root)
    write_manifest(m, job.output)
    return m


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("root", nargs="?", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--placeholder", action="store_true")
    a = p.parse_args(argv)
    m = run(ManifestJob(a.output, a.root, a.placeholder))
    print(stats(m).table(), file=sys.stderr)


if __name__ == "__main__":
    main()
