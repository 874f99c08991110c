"""Smoke test for the `dumbbell` extension.

Uses an installed module if there is one (`maturin develop`), otherwise
loads target/release/libdumbbell.so built by
`cargo build --release -p dumbbell-py`.
"""

import math
import pathlib
import shutil
import sys
import tempfile


def load():
    try:
        import dumbbell
        return dumbbell
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parents[1]
    for name in ("libdumbbell.so", "libdumbbell.dylib"):
        lib = root / "target" / "release" / name
        if lib.exists():
            tmp = pathlib.Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "dumbbell.so")
            sys.path.insert(0, str(tmp))
            import dumbbell
            return dumbbell
    sys.exit("dumbbell extension not found; run `cargo build --release -p dumbbell-py` first")


def main():
    db = load()

    assert abs(db.upsilon(3) - math.sqrt(2 * math.pi / 3)) < 1e-14
    assert abs(db.richardson(1.0, 1.0, 3.0) - 1.0) < 1e-15

    disk = db.Section.disk(1.0)
    assert abs(disk.measure - math.pi) < 1e-12 and disk.is_disk
    lam = disk.lambda1(1.0 / 32.0)
    assert abs(lam / db.BESSEL_J0_ZERO**2 - 1) < 5e-3, lam

    square = db.Section.square(1.0, admissible=True)
    assert square.is_admissible and square.contains(0.4, -0.4)

    fit = db.fit_rate([0.2, 0.15, 0.1], [0.5 * e**3 for e in (0.2, 0.15, 0.1)])
    assert abs(fit["slope"] - 3) < 1e-10 and abs(fit["prefactor"] - 0.5) < 1e-10

    c = db.compliance(db.Section.disk(0.75, admissible=True), radius=8.0, tube_length=4.0, h=1.0 / 16.0)
    routes = [c[k]["at_r"] for k in ("trace", "flux", "energy")]
    assert all(r > 0 for r in routes) and c["m"] < 0, c
    assert max(routes) / min(routes) - 1 < 0.05, routes

    text = db.default_config("cross-section").replace("cross_section.h = 0.0078125", "cross_section.h = 0.03125")
    rec = db.run_config(text)
    assert rec["passed"], rec["assertions"]

    try:
        db.run_config('sweeps.eps = [0.2, 0.1, 0.05]\n')
    except ValueError as e:
        assert "sweep.eps" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("smoke test passed:", disk, f"lambda1={lam:.6f}", f"C_trace={routes[0]:.6f}")


if __name__ == "__main__":
    main()
