"""Smoke test for the epdt extension module.

Build first:

    cargo build --release -p epdt-py --features extension-module

then run `python3 python/smoke_test.py`. The script copies the built library
next to itself under the importable name if `epdt` is not already installed.
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_epdt():
    try:
        import epdt  # noqa: F401
        return epdt
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libepdt.so"
        if lib.exists():
            dest = Path(tempfile.mkdtemp()) / "epdt.so"
            shutil.copy(lib, dest)
            sys.path.insert(0, str(dest.parent))
            import epdt
            return epdt
    sys.exit("libepdt.so not found; build with --features extension-module")


def main():
    epdt = import_epdt()
    blowup_case = dict(m=0.1, n=2, mu1=3.0, mu2=0.5, nu1sq=0.0625, nu2sq=0.015625, p=2.1, q=2.2)

    c = epdt.derive_constants(**blowup_case)
    assert abs(c["delta1"] - 3.75) < 1e-12, c
    assert abs(c["gamma_m"] - 0.017) < 1e-3, c

    verdict, regime, gamma, _ = epdt.classify(**blowup_case)
    assert verdict == "BlowUp" and regime == "blow-up", (verdict, regime)
    assert abs(gamma - c["gamma_m"]) < 1e-15

    try:
        epdt.classify(**{**blowup_case, "p": 1.0})
    except ValueError:
        pass
    else:
        raise AssertionError("p = 1 accepted")

    cfg = {
        "schema": "epdt-config/1",
        "params": {**blowup_case, "n": 1, "sigma": 1.0},
        "grid": {"dim": 1, "points": 128, "half_length": "auto"},
        "time": {"t_max": 2.0},
        "data": {"profile": "bump", "amplitude": 0.1, "radius": 1.0},
        "outputs": {"snapshot_interval": 0.5},
    }
    with tempfile.TemporaryDirectory() as out:
        summary = json.loads(epdt.run("simulate", json.dumps(cfg), out))
        assert summary["outcome"] == "CompletedHorizon", summary
        times = epdt.snapshot_times(str(Path(out) / "snapshots.bin"))
        assert times == [1.0, 1.5, 2.0], times
    print("epdt smoke test ok")


if __name__ == "__main__":
    main()
