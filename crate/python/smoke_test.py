"""Smoke test for the installed extension module.

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml
    python python/smoke_test.py
"""

import cmath
import sys
import tempfile
from pathlib import Path

import hhgcoh_py as h

CONFIG = """
name = "smoke"
pipeline = "table"

[table]
max = 7.2e14
nodes = 200
"""


def main() -> int:
    print("hhgcoh", h.__version__)
    ids = [pid for pid, _ in h.presets()]
    print(f"{len(ids)} presets, e.g. {ids[:3]}")

    beam = h.gaussian_beam(3.8)
    print(f"w0 = {beam['waist_um']:.2f} um, w(3.8 mm) = {beam['radius_um']:.2f} um")

    x = h.harmonic_dipole(4e14)
    print(f"x_45(4e14 W/cm2) = {abs(x):.3e} a.u., phase {cmath.phase(x):+.3f} rad")

    with tempfile.TemporaryDirectory() as out:
        result = h.run(CONFIG, out)
        print(f"run {result['scenario']}: {len(result['files'])} files in {result['wall_time_s']:.1f} s")
        for name, status in result["stages"].items():
            print(f"  {name}: {status}")
        summary = (Path(result["run_dir"]) / "summary.csv").read_text().splitlines()
        for line in summary[1:]:
            print("  " + line)
        return 0 if result["succeeded"] else 1


if __name__ == "__main__":
    sys.exit(main())
