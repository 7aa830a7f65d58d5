"""Smoke test for the optipur_py extension module."""

import math
import sys
from pathlib import Path

import optipur_py as op

ROOT = Path(__file__).resolve().parent.parent


def main():
    p = op.success_probability("ground", 20.0)
    assert math.isclose(p, 0.398107, abs_tol=1e-6), p

    w = [0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3]
    post, p_succ = op.dejmps_recurrence(w, w)
    assert math.isclose(post[0], 0.926396, abs_tol=5e-7), post
    assert math.isclose(p_succ, 0.875556, abs_tol=5e-7), p_succ

    nop = op.estimate("NOP", 0, 20.0, 1e9, 0.9, 1e-3, trials_min=500)
    opt = op.estimate("OPT", 2, 20.0, 1e9, 0.9, 1e-3, trials_min=500)
    assert opt["fidelity"] > nop["fidelity"], (opt, nop)
    assert opt["rate"] < nop["rate"], (opt, nop)

    report = op.simulate_config(str(ROOT / "configs" / "ground.toml"))
    assert "OPT" in report

    try:
        op.estimate("XYZ", 1, 20.0, 1e9, 0.9, 1e-3)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown protocol accepted")

    print("smoke test passed")
    print(f"NOP F={nop['fidelity']:.4f} R={nop['rate']:.1f}")
    print(f"OPT F={opt['fidelity']:.4f} R={opt['rate']:.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
