#!/usr/bin/env python3
"""Smoke test for the walkphase extension module.

Builds nothing itself: it looks for the compiled cdylib under target/
(release preferred), exposes it as an importable module, and exercises the
main types and operations end to end. Run from the repository root:

    cargo build -p walkphase-py --release
    python3 python/smoke_test.py
"""

import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def import_walkphase():
    candidates = [
        ROOT / "target" / "release" / "libwalkphase.so",
        ROOT / "target" / "debug" / "libwalkphase.so",
        ROOT / "target" / "release" / "libwalkphase.dylib",
        ROOT / "target" / "debug" / "libwalkphase.dylib",
    ]
    lib = next((c for c in candidates if c.exists()), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p walkphase-py")
    stage = pathlib.Path(tempfile.mkdtemp(prefix="walkphase-py-"))
    shutil.copy2(lib, stage / "walkphase.so")
    sys.path.insert(0, str(stage))
    import walkphase  # noqa: E402

    return walkphase


def main():
    wp = import_walkphase()
    checks = []

    def check(name, ok, detail=""):
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")

    # coin is special unitary
    coin = wp.Coin(0.3)
    check(
        "coin unitarity",
        coin.unitarity_defect() <= 1e-14 and coin.det_defect() <= 1e-14,
        f"defects {coin.unitarity_defect():.2e}, {coin.det_defect():.2e}",
    )
    m = coin.matrix()
    check(
        "coin entries",
        abs(m[0][0] - math.cos(0.3)) < 1e-15 and abs(m[0][1] + 1j * math.sin(0.3)) < 1e-15,
    )

    # dispersion: theta = 0 gives omega = |k|; k = 0 gives omega = |theta|
    omega, chi_p, chi_m = wp.dispersion(0.0, 0.7)
    check("dispersion theta=0", abs(omega - 0.7) <= 1e-12, f"omega {omega:.12f}")
    omega, _, _ = wp.dispersion(0.45, 0.0)
    check("dispersion k=0", abs(omega - 0.45) <= 1e-12)

    # packet: unit norm, norm preserved under evolution
    state = wp.gaussian_packet(64, 0.5, 8 * 2 * math.pi / 64, 0.3, spin_mix=(0.7, 0.4))
    check("packet norm", abs(state.norm() - 1.0) <= 1e-13, f"norm {state.norm():.15f}")
    hist = wp.evolve(state, coin, 20)
    drift = abs(hist.state(19).norm() - 1.0)
    check("evolution norm drift", drift <= 1e-13, f"drift {drift:.2e}")

    # one step moves the L component against the index at theta = 0
    zero_coin = wp.Coin(0.0)
    l = [0j] * 8
    r = [0j] * 8
    l[3] = 1 + 0j
    s = wp.step(wp.State(l, r), zero_coin)
    l_after, _ = s.components()
    check("theta=0 shift", abs(l_after[2] - 1) < 1e-15)

    # equation-of-motion audit singles out the unit mass coefficient
    report = wp.eom_audit(hist, coin)
    check(
        "equation-of-motion audit",
        report["exact"] == "c=1 (audit form)"
        and report["entries"]["audit_form_c1_max"] <= 1e-13,
        f"exact variant: {report['exact']}",
    )

    # window-identity audit: the corrected candidate is exact
    report = wp.omega_identity_audit(hist, 9, 8)
    check(
        "window-identity audit",
        report["exact"] is not None
        and report["entries"]["time_corrected_max"] <= 1e-13,
        f"corrected residual {report['entries']['time_corrected_max']:.2e}",
    )

    # Wigner field of the packet window is spin-Hermitian
    w = wp.wigner_field(hist, 9, 8)
    check(
        "Wigner spin Hermiticity",
        w["hermiticity_defect"] <= 1e-12,
        f"defect {w['hermiticity_defect']:.2e}",
    )
    expected_len = 1
    for d in w["shape"]:
        expected_len *= d
    check("Wigner tensor shape", len(w["data"]) == expected_len, f"shape {w['shape']}")

    # transport audit on a window-commensurate eigenmode isolates the
    # audited variant at machine precision
    theta, omega, k, mode_state = wp.commensurate_mode(32, 8, 3, 2)
    mode_hist = wp.evolve(mode_state, wp.Coin(theta), 19)
    report = wp.transport_audit(mode_hist, 9, 8, wp.Coin(theta))
    name = wp.audited_variant()
    residual = report["entries"][f"variant[{name}]_rel_l2"]
    check(
        "transport audit",
        report["exact"] == name and residual <= 1e-11,
        f"variant {name} residual {residual:.2e} (theta {theta:.3f})",
    )

    if not all(checks):
        sys.exit(1)
    print(f"all {len(checks)} smoke checks passed")


if __name__ == "__main__":
    main()
