#!/usr/bin/env python3
"""Regenerate the serialization golden files under tests/golden/.

The byte-identity acceptance test compares a fresh pipeline run against
these files.  Only rerun this after a deliberate format change, and review
the resulting diff before committing.
"""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from helpers import golden_pipeline  # noqa: E402


def main() -> None:
    outdir = ROOT / "tests" / "golden"
    golden_pipeline(outdir)
    for name in ("vocab.json", "merges.txt", "data.bin", "masked.bin"):
        path = outdir / name
        print(f"wrote {path} ({path.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
