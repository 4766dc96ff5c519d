import numpy as np
import pytest

from uavnet.metrics import RunSummary, config_hash, energy_efficiency, jain_index


def test_jain_equal_shares():
    assert jain_index([1, 1, 1, 1]) == pytest.approx(1.0)


def test_jain_single_user_extreme():
    assert jain_index([1, 0, 0, 0]) == pytest.approx(0.25)


def test_jain_two_values():
    # (2+4)^2 / (2 * (4+16)) = 36/40
    assert jain_index([2, 4]) == pytest.approx(0.9)


def test_jain_all_zero_convention():
    assert jain_index([0.0, 0.0, 0.0]) == 1.0


def test_jain_bounds_and_scale_invariance():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = rng.integers(1, 40)
        x = rng.uniform(0, 10, n)
        if not x.any():
            continue
        j = jain_index(x)
        assert 1.0 / n - 1e-12 <= j <= 1.0 + 1e-12
        c = rng.uniform(0.01, 100)
        assert jain_index(c * x) == pytest.approx(j, rel=1e-12)


def test_jain_rejects_bad_input():
    with pytest.raises(ValueError):
        jain_index([])
    with pytest.raises(ValueError):
        jain_index([1.0, -0.5])


def test_energy_efficiency_zero_bits():
    assert energy_efficiency(0, 10.0) == 0.0


def test_energy_efficiency_arithmetic():
    assert energy_efficiency(1e6, 10.0) == pytest.approx(1e5)


def test_energy_efficiency_linear_in_bits():
    rng = np.random.default_rng(3)
    for _ in range(50):
        bits = rng.uniform(1, 1e9)
        joules = rng.uniform(0.1, 1e4)
        c = rng.uniform(0.1, 50)
        assert energy_efficiency(c * bits, joules) == pytest.approx(
            c * energy_efficiency(bits, joules), rel=1e-12)


def test_energy_efficiency_rejects_nonpositive_energy():
    with pytest.raises(ValueError):
        energy_efficiency(100, 0.0)
    with pytest.raises(ValueError):
        energy_efficiency(100, -1.0)


def test_config_hash_order_independent():
    a = config_hash({"x": 1, "y": 2.5, "z": "abc"})
    b = config_hash({"z": "abc", "y": 2.5, "x": 1})
    assert a == b
    assert a != config_hash({"x": 2, "y": 2.5, "z": "abc"})


def test_run_summary_row():
    rs = RunSummary("routing", 7, {"j": 5}, {"mean_ms": 3.5, "delivered": 120})
    header, row = rs.summary_row()
    assert header == ["experiment", "config_hash", "seed", "delivered", "mean_ms"]
    assert row[0] == "routing" and row[2] == 7 and row[3] == 120
