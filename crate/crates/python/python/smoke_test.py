"""Quick check that the extension imports and the main entry points work.

    pip install --no-build-isolation -e crates/python
    python crates/python/python/smoke_test.py
"""

import math

import rydberg


def main():
    assert rydberg.two_photon_rabi() == 2.0
    assert abs(rydberg.doppler_sigma_khz() / 43.5 - 1) < 0.02

    presets = rydberg.list_presets()
    assert len(presets) == 9
    assert all(p["figure"] for p in presets)

    run = rydberg.run_preset("blockade_rabi", n_shots=4)
    ens = run["ensemble"]
    assert ens["patterns"] == ["gg", "gr", "rg", "rr"]
    assert len(ens["scan_values"]) == len(ens["probabilities"])
    freq = next(d for d in run["derived"] if d["name"] == "frequency_mhz")
    assert abs(freq["value"] / (2 * math.sqrt(2)) - 1) < 0.01, freq

    rho = [[0j] * 4 for _ in range(4)]
    rho[1][1] = rho[2][2] = rho[1][2] = rho[2][1] = 0.5
    alpha, _, _ = rydberg.parity_amplitude(rho, 5.0, [i * 0.4 / 23 for i in range(24)])
    assert abs(alpha - 0.5) < 1e-9

    assert abs(rydberg.bell_fidelity(0.94, 0.88) - 0.91) < 1e-12
    assert all(ok for _, _, ok, _ in rydberg.check([1, 2, 8]))

    try:
        rydberg.run_preset("rabbi")
    except ValueError as e:
        assert "rabi" in str(e)
    else:
        raise AssertionError("unknown preset accepted")

    print(f"rydberg {rydberg.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
