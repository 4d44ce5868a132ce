"""Gaussian sequence observations and the KL divergence."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from compound_minimax.basis import CoefficientMap, IndexBox
from compound_minimax.errors import DomainError, ParameterError
from compound_minimax.sequence import (
    index_noise,
    kl_divergence,
    observe,
    read_observation_csv,
    tail_energy,
    write_observation_csv,
)


def test_zero_noise_injection():
    f = CoefficientMap(2, {(0, 0): 1.0, (1, 0): 0.3, (0, -2): -0.2})
    obs = observe(f, 0.1, IndexBox(2, 2), seed=1, noise=0.0)
    assert obs.as_map().pruned() == f


def test_law_of_large_numbers():
    # 101 x 101 box minus a few gives >= 1e4 indices of pure noise
    obs = observe(CoefficientMap(2), 0.1, IndexBox(2, 50), seed=2024)
    y = obs.values
    assert len(y) >= 10_000
    assert abs(y.mean()) <= 4 * 0.1 / 100
    assert abs(y.var(ddof=1) - 0.01) <= 0.001


def test_bit_identical():
    f = CoefficientMap(3, {(1, 0, 0): 0.5})
    a = observe(f, 0.2, IndexBox(3, 3), seed=77)
    b = observe(f, 0.2, IndexBox(3, 3), seed=77)
    assert a.values.tobytes() == b.values.tobytes()
    c = observe(f, 0.2, IndexBox(3, 3), seed=78)
    assert not np.array_equal(a.values, c.values)


def test_overlapping_boxes_agree():
    small = observe(CoefficientMap(2), 0.3, IndexBox(2, 2), seed=5)
    large = observe(CoefficientMap(2), 0.3, IndexBox(2, 4), seed=5)
    lm = large.as_map()
    for j, y in small.as_map().items():
        assert lm[j] == y


def test_max_support_restriction():
    obs = observe(CoefficientMap(3), 0.3, IndexBox(3, 2), seed=5, max_support=1)
    assert len(obs) == 1 + 3 * 4


def test_calibration_ks():
    idx = [(k, 0) for k in range(-25, 25)]
    f = CoefficientMap(2, {j: 0.1 * (i % 5) for i, j in enumerate(idx)})
    z = []
    for r in range(1000):
        obs = observe(f, 0.2, IndexBox(2, 25, (1,)), seed=10_000 + r)
        m = obs.as_map()
        z.extend((m[j] - f.get(j)) / 0.2 for j in idx)
    assert stats.kstest(z, "norm").pvalue > 0.01


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63))
def test_noise_is_finite(seed):
    idx = np.array([[0, 0], [-3, 7], [10**6, -10**6]], dtype=np.int64)
    assert np.all(np.isfinite(index_noise(seed, idx)))


def test_epsilon_range():
    for bad in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(ParameterError, match="0 < epsilon < 1"):
            observe(CoefficientMap(1), bad, IndexBox(1, 2), seed=0)
    with pytest.raises(DomainError):
        observe(CoefficientMap(1), 0.5, IndexBox(1, 0), seed=0)


class TestKL:
    def test_identical(self):
        f = CoefficientMap(2, {(1, 0): 0.5})
        assert kl_divergence(f, f, 0.3) == 0.0

    def test_hand_value(self):
        f = CoefficientMap(1, {(1,): 0.1, (2,): 0.1})
        assert kl_divergence(f, CoefficientMap(1), 0.1) == pytest.approx(1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.floats(0.01, 0.99))
    def test_quadratic_and_symmetric(self, vals, eps):
        f = CoefficientMap(1, {(k,): v for k, v in enumerate(vals)})
        g = CoefficientMap(1, {(k,): 0.5 * v - 0.1 for k, v in enumerate(vals)})
        kl = kl_divergence(f, g, eps)
        assert kl == pytest.approx(kl_divergence(g, f, eps))
        diff2 = (f - g).scaled(2.0)
        assert kl_divergence(diff2, CoefficientMap(1), eps) == pytest.approx(4 * kl, abs=1e-9)
        assert kl_divergence(f, CoefficientMap(1), eps) == pytest.approx(0.5 * f.sq_norm() / eps**2)


def test_tail_energy():
    f = CoefficientMap(1, {(0,): 1.0, (3,): 0.5, (-4,): 0.5})
    obs = observe(f, 0.1, IndexBox(1, 3), seed=0)
    assert tail_energy(f, obs.indices) == pytest.approx(0.25)


def test_observation_csv(tmp_path):
    obs = observe(CoefficientMap(2, {(1, 1): 0.4}), 0.15, IndexBox(2, 2), seed=9)
    p = tmp_path / "obs.csv"
    write_observation_csv(obs, p)
    text = p.read_text().splitlines()
    assert text[0] == "# epsilon=0.15, cutoff=2, seed=9"
    assert text[1] == "j_1,j_2,y"
    back = read_observation_csv(p)
    assert back.epsilon == 0.15 and back.cutoff == 2 and back.seed == 9
    assert np.array_equal(back.indices, obs.indices)
    assert back.values.tobytes() == obs.values.tobytes()
