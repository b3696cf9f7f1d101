"""Smoke test for the pilotsim extension module.

Build and run from the repository root:

    cargo build --release -p pilotsim-py --features extension-module
    cp target/release/libpilotsim_py.so python/pilotsim.so
    python3 python/smoke_test.py
"""

import json
import math

import pilotsim


def main():
    cfg = pilotsim.Config()
    cfg.set("M", "64")
    cfg.validate()
    assert json.loads(cfg.to_json())["M"] == 64
    assert cfg.sigma_sq > 0 and cfg.tau > 0

    header, rows, csv = pilotsim.analytic(cfg)
    assert "mse_tp" in header and rows and csv.startswith(header[0])
    mse_tp = rows[0][header.index("mse_tp")]
    mse_sp = rows[0][header.index("mse_sp")]
    assert 0 < mse_sp and 0 < mse_tp

    rho_d_sq, rho_p_sq = pilotsim.optimal_power_split(100, 7, 5, 40)
    assert math.isclose(rho_d_sq + rho_p_sq, 1.0, rel_tol=1e-12)

    beta = [[[1.0 if j == l else 0.05 for _ in range(3)] for l in range(2)] for j in range(2)]
    sp_users, cost = pilotsim.partition(beta, 10, rho_d_sq)
    assert all(0 <= c < 2 and 0 <= k < 3 for c, k in sp_users) and cost >= 0

    cfg.trials = 64
    fields, derived = pilotsim.run_trials(cfg, "mse", "sp", threads=1)
    mean, half_width = fields["mse_c0_u0"]
    assert mean > 0 and half_width >= 0 and isinstance(derived, dict)

    try:
        cfg.set("M", "0")
        cfg.validate()
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")

    print("smoke test ok; figures:", list(pilotsim.FIGURE_IDS))


if __name__ == "__main__":
    main()
