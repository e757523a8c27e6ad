import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochch.noise import (
    MAX_MODES,
    MAX_STEPS,
    InadmissibleNoise,
    QSpectrum,
    build_noise_batch,
    build_noise_table,
    coarsen,
    convolution_h3_moment,
    derive_seed,
    dump_table,
    load_table,
    read_table,
    sample_convolution_path,
    save_table,
)
from stochch.spectral import eigenvalues

Q2 = QSpectrum.power_law(2.0)


class TestSpectrum:
    def test_default_is_inverse_square(self):
        np.testing.assert_allclose(Q2.variances(4), eigenvalues(4) ** -2.0)

    def test_trace_class(self):
        np.testing.assert_allclose(QSpectrum.trace_class(4).variances(3), [1, 2**-4, 3**-4])

    @pytest.mark.parametrize("q, ok", [(QSpectrum.power_law(1.2), False), (QSpectrum.power_law(1.5), False),
                                       (QSpectrum.power_law(1.51), True), (QSpectrum.trace_class(3), False),
                                       (QSpectrum.trace_class(3.5), True)])
    def test_admissibility(self, q, ok):
        assert q.admissibility()[0] is ok

    def test_message_names_condition(self):
        ok, msg = QSpectrum.power_law(1.2).admissibility()
        assert "1.2" in msg and "3/2" in msg
        assert QSpectrum.power_law(2).admissibility()[1].endswith("OK (r=2 > 3/2)")

    def test_inadmissible_table_rejected(self):
        with pytest.raises(InadmissibleNoise, match="1.2"):
            build_noise_table(0, 1.0, 8, 4, QSpectrum.power_law(1.2))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.5, 5), st.floats(0, 3))
    def test_monotone(self, r, dr):
        if QSpectrum.power_law(r).admissibility()[0]:
            assert QSpectrum.power_law(r + dr).admissibility()[0]


class TestTable:
    def test_deterministic(self):
        a = build_noise_table(7, 1.0, 64, 8, Q2)
        b = build_noise_table(7, 1.0, 64, 8, Q2)
        assert np.array_equal(a.normals, b.normals)

    def test_seeds_differ(self):
        a = build_noise_table(7, 1.0, 64, 8, Q2)
        b = build_noise_table(8, 1.0, 64, 8, Q2)
        assert not np.array_equal(a.normals, b.normals)

    def test_finite_and_sized(self):
        inc = coarsen(build_noise_table(1, 1.0, 32, 6, Q2), 32)
        assert inc.values.shape == (1, 32, 6) and np.all(np.isfinite(inc.values))

    def test_mode_prefix_stable(self):
        # asking for more modes never changes the lower ones
        a = build_noise_table(3, 1.0, 16, 4, Q2).normals
        b = build_noise_table(3, 1.0, 16, 9, Q2).normals
        assert np.array_equal(a, b[..., :4])

    def test_ceilings(self):
        with pytest.raises(ValueError):
            build_noise_table(0, 1.0, MAX_STEPS * 2, 4, Q2)
        with pytest.raises(ValueError):
            build_noise_table(0, 1.0, 8, MAX_MODES + 1, Q2)

    def test_variance_and_correlation(self):
        # 10^5 draws of two modes; chi-square and correlation oracles
        M, N = 1024, 3
        t = build_noise_batch([derive_seed(11, "var", p) for p in range(100)], 1.0, M, N, Q2)
        dW = t.increments.values.reshape(-1, N)
        n = dW.shape[0]
        target = Q2.variances(N) * t.tau_ref
        var = np.mean(dW**2, axis=0)
        se = target * math.sqrt(2.0 / n)
        assert np.all(np.abs(var - target) <= 4 * se)
        z = dW / np.sqrt(target)
        corr = np.mean(z[:, 0] * z[:, 1])
        assert abs(corr) <= 4 / math.sqrt(n)

    def test_seed_derivation_is_labelled(self):
        assert derive_seed(1, "a", 0) == derive_seed(1, "a", 0)
        assert derive_seed(1, "a", 0) != derive_seed(1, "a", 1)
        assert derive_seed(1, "a", 0) != derive_seed(1, "b", 0)


class TestCoarsen:
    table = build_noise_table(5, 1.0, 96, 6, Q2)

    def test_identity(self):
        inc = coarsen(self.table, 96, 6)
        assert np.array_equal(inc.values, self.table.increments.values)

    @pytest.mark.parametrize("M", [1, 2, 3, 12, 48])
    def test_sum_preserved_exactly(self, M):
        fine = self.table.increments.sums.sum(axis=-2)
        assert np.array_equal(coarsen(self.table, M).sums.sum(axis=-2), fine)

    @pytest.mark.parametrize("M", [1, 3, 6, 24])
    def test_telescoping(self, M):
        assert np.array_equal(coarsen(coarsen(self.table, 2 * M), M).values, coarsen(self.table, M).values)

    def test_truncation(self):
        assert np.array_equal(coarsen(self.table, 12, 3).values, coarsen(self.table, 12).values[..., :3])

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError, match="mod"):
            coarsen(self.table, 7)


class TestBinary:
    def test_round_trip(self, tmp_path):
        t = build_noise_table(123, 0.5, 32, 5, QSpectrum.trace_class(4.0))
        p = tmp_path / "noise.bin"
        save_table(t, p)
        back = read_table(p)
        assert back.seed == 123 and back.T == 0.5 and back.M_ref == 32 and back.N_ref == 5
        assert back.q.family == "trace_class" and back.q.param == 4.0
        assert np.array_equal(back.normals, t.normals)

    def test_layout(self):
        t = build_noise_table(1, 1.0, 4, 3, Q2)
        raw = dump_table(t)
        assert raw[:8] == b"SCHNOISE"
        payload = np.frombuffer(raw[-4 * 3 * 8:], dtype="<f8").reshape(4, 3)
        assert np.array_equal(payload, t.normals[0])

    def test_corrupt_rejected(self):
        raw = bytearray(dump_table(build_noise_table(1, 1.0, 4, 3, Q2)))
        raw[0:8] = b"NOTNOISE"
        with pytest.raises(ValueError):
            load_table(bytes(raw))
        with pytest.raises(ValueError):
            load_table(dump_table(build_noise_table(1, 1.0, 4, 3, Q2))[:-8])


class TestConvolution:
    def test_starts_at_zero(self):
        assert np.all(sample_convolution_path(1, [0.0, 0.1], Q2, 4)[0] == 0)

    def test_grid_checks(self):
        with pytest.raises(ValueError):
            sample_convolution_path(1, [0.0, 0.2, 0.1], Q2, 4)

    def test_stationary_variance(self):
        N, K = 3, 4000
        x = sample_convolution_path([derive_seed(2, "ou", k) for k in range(K)], [0.0, 5.0], Q2, N)[:, -1]
        lam = eigenvalues(N)
        target = Q2.variances(N) / (2 * lam**2)
        var = np.mean(x**2, axis=0)
        assert np.all(np.abs(var - target) <= 4 * target * math.sqrt(2 / K))

    def test_h3_moment(self):
        N, K, t = 16, 4000, 0.3
        x = sample_convolution_path([derive_seed(3, "h3", k) for k in range(K)], [0.0, 0.1, t], Q2, N)[:, -1]
        s = np.sum(eigenvalues(N) ** 3 * x**2, axis=-1)
        exact = convolution_h3_moment(Q2, N, t)
        assert abs(s.mean() - exact) <= 4 * s.std(ddof=1) / math.sqrt(K)
