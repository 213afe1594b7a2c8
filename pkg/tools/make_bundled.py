"""Regenerate the bundled synthetic ground truth and configs under src/olahgp/data."""

import json
from pathlib import Path

from olahgp.fgrid import write_fgrid
from olahgp.gp_field import GridDomain, KernelParams
from olahgp.mission import synthetic_truth

DATA = Path(__file__).resolve().parents[1] / "src" / "olahgp" / "data"
SEED = 20240611
LEVEL = 2.0


def main():
    grid = GridDomain(4800.0, 32, 128)
    truth = synthetic_truth(grid, KernelParams(1.0, 600.0), LEVEL, SEED)
    write_fgrid(DATA / "bundled_truth.fgrid", truth, grid.side_s)
    table1 = {
        "scenario": {"side_s": 4800.0, "res_opt": 32, "res_eval": 128, "sigma2": 1.0, "ell": 600.0,
                     "gamma": LEVEL, "n_steps": 25, "truth": "bundled", "start": [0.0, 0.0]},
        "planner": {"kind": "olah", "horizon_n": 5, "l_max": 6160.0, "n_static": 20},
        "cost": {"lambda1": 1e-3},
    }
    (DATA / "bundled.json").write_text(json.dumps(table1, indent=2) + "\n")
    # small smoke scenario: 16x16 grids over a proportionally smaller region
    smoke = {
        "scenario": {"side_s": 1200.0, "res_opt": 16, "res_eval": 16, "sigma2": 1.0, "ell": 300.0,
                     "gamma": LEVEL, "n_steps": 8, "truth": "synthetic", "truth_level": LEVEL,
                     "start": [0.0, 0.0]},
        "planner": {"kind": "olah", "horizon_n": 3, "l_max": 1500.0, "n_static": 6},
    }
    (DATA / "smoke.json").write_text(json.dumps(smoke, indent=2) + "\n")


if __name__ == "__main__":
    main()
