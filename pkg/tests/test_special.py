import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from osrkit import special
from osrkit.errors import DomainError

# 50-digit mpmath oracle (scripts/gen_gamma_oracle.py), frozen 2026-08-10.
REG_UPPER_GAMMA_ORACLE = [
    (0.5, 0.25, 0.47950012218695346),
    (0.5, 3.0, 0.01430587843542964),
    (1.0, 0.5, 0.60653065971263342),
    (1.0, 30.0, 9.3576229688401746e-14),
    (2.0, 1.5, 0.55782540037107457),
    (2.0, 9.0, 0.0012340980408667955),
    (5.0, 2.5, 0.89117801891415124),
    (5.0, 21.0, 7.4986783531781313e-6),
    (16.0, 9.0, 0.97796434082810103),
    (16.0, 40.0, 5.4639807112998636e-6),
    (50.0, 35.0, 0.99015449752359146),
    (50.0, 80.0, 0.00013078397659141034),
    (128.0, 100.0, 0.99600537970596441),
    (128.0, 170.0, 0.00033877644788439259),
    (256.0, 220.0, 0.99046033949143355),
    (256.0, 330.0, 1.0108817743113103e-5),
    (400.0, 360.0, 0.98001395522893406),
    (400.0, 520.0, 1.8625232716785703e-8),
    (512.0, 470.0, 0.97093064252395278),
    (512.0, 2148.0, 1.2328221570222347e-394),  # underflows float64; abs check only
]

LOG_GAMMA_ORACLE = [
    (0.5, 0.5723649429247000870717),
    (1.5, -0.1207822376352452223455),
    (8.0, 8.525161361065414300166),
    (64.0, 201.0093163992815266793),
    (512.0, 2679.822147001308875276),
    (4096.0, 29970.33029467732889227),
    (10000.0, 82099.71749644237727265),
]


class TestLogGamma:
    def test_gamma_of_one_is_zero(self):
        assert special.log_gamma(1.0) == pytest.approx(0.0, abs=1e-14)

    def test_gamma_of_half_is_log_sqrt_pi(self):
        assert special.log_gamma(0.5) == pytest.approx(math.log(math.sqrt(math.pi)), abs=1e-14)

    @pytest.mark.parametrize("a,expected", LOG_GAMMA_ORACLE)
    def test_against_high_precision_oracle(self, a, expected):
        got = special.log_gamma(a)
        assert abs(got - expected) <= 1e-12 * max(1.0, abs(expected))

    def test_relative_error_bound_over_domain(self):
        # Platform lgamma is accurate to a couple of ulps; 1e-12 relative
        # leaves plenty of headroom except at the zeros of lnGamma, where an
        # absolute bound applies.
        for a in np.geomspace(0.5, 1e4, 400):
            got = special.log_gamma(float(a))
            ref = math.lgamma(float(a))
            assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))

    def test_rejects_non_positive(self):
        with pytest.raises(DomainError):
            special.log_gamma(0.0)
        with pytest.raises(DomainError):
            special.log_gamma(-3.0)


class TestRegUpperIncGamma:
    def test_q_of_a_one_is_exp(self):
        for x in np.linspace(0.0, 50.0, 101):
            assert abs(special.reg_upper_inc_gamma(1.0, float(x)) - math.exp(-x)) <= 1e-12

    def test_q_of_a_two_closed_form(self):
        for x in np.linspace(0.0, 50.0, 101):
            expected = (1.0 + x) * math.exp(-x)
            assert abs(special.reg_upper_inc_gamma(2.0, float(x)) - expected) <= 1e-12

    def test_full_tail_at_zero_is_exactly_one(self):
        for a in (0.5, 1.0, 7.0, 64.0, 511.5):
            assert special.reg_upper_inc_gamma(a, 0.0) == 1.0

    @pytest.mark.parametrize("a,x,expected", REG_UPPER_GAMMA_ORACLE)
    def test_against_high_precision_oracle(self, a, x, expected):
        assert abs(special.reg_upper_inc_gamma(a, x) - expected) <= 1e-10

    def test_strict_monotonicity_in_x(self):
        # Strictness is only representable where Q is neither rounded to 1.0
        # nor underflowed; restrict each grid to that band.
        for a in (0.5, 2.0, 16.0, 128.0, 512.0):
            xs = np.linspace(0.0, 4.0 * a + 100.0, 200)
            qs = [special.reg_upper_inc_gamma(a, float(x)) for x in xs]
            band = [q for q in qs if 1e-280 < q < 1.0 - 1e-12]
            assert len(band) >= 20
            assert all(q2 < q1 for q1, q2 in zip(band, band[1:]))

    def test_branch_consistency_at_switch_point(self):
        # Both evaluation paths must agree where the implementation switches.
        for a in (0.5, 1.0, 3.0, 10.0, 64.0, 256.0, 512.0):
            x = a + 1.0
            q_series = 1.0 - special._lower_series(a, x)
            q_cf = special._upper_continued_fraction(a, x)
            assert abs(q_series - q_cf) <= 1e-9

    def test_complement_identity(self):
        for a in (0.5, 4.0, 100.0):
            for x in (0.1, a, 3.0 * a):
                p = special.reg_lower_inc_gamma(a, x)
                q = special.reg_upper_inc_gamma(a, x)
                assert p + q == pytest.approx(1.0, abs=1e-12)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            special.reg_upper_inc_gamma(0.0, 1.0)
        with pytest.raises(DomainError):
            special.reg_upper_inc_gamma(1.0, -0.5)

    @given(
        a=st.floats(min_value=0.5, max_value=512.0),
        x=st.floats(min_value=0.0, max_value=2000.0),
    )
    def test_range_property(self, a, x):
        q = special.reg_upper_inc_gamma(a, x)
        assert 0.0 <= q <= 1.0


class TestProbInclusion:
    def test_zero_distance_is_one(self):
        assert special.prob_inclusion(0.0, 128) == 1.0
        assert special.prob_inclusion(0.0, 1) == 1.0

    def test_n_two_closed_form(self):
        for d in np.linspace(0.0, 50.0, 120):
            assert abs(special.prob_inclusion(float(d), 2) - math.exp(-d / 2.0)) <= 1e-12
        assert special.prob_inclusion(2.0 * math.log(2.0), 2) == pytest.approx(0.5, abs=1e-12)

    def test_n_four_closed_form(self):
        # Q(2, x) = (1 + x) e^-x at x = d_sq / 2 = 2.
        assert special.prob_inclusion(4.0, 4) == pytest.approx(3.0 * math.exp(-2.0), abs=1e-12)

    def test_strictly_decreasing(self):
        for n in (2, 8, 32, 128):
            ds = np.linspace(0.0, 4.0 * n, 120)
            ps = [special.prob_inclusion(float(d), n) for d in ds]
            band = [p for p in ps if 1e-280 < p < 1.0 - 1e-12]
            assert len(band) >= 15
            assert all(p2 < p1 for p1, p2 in zip(band, band[1:]))

    def test_far_tail_clamped_not_zero(self):
        assert special.prob_inclusion(1e6, 2) == special.PROB_FLOOR

    def test_plateau_then_rapid_decay_at_n_128(self):
        # Oracle roots of Q(64, d^2/2): 0.99 at d=9.6820, 0.01 at d=12.9666.
        for dist in np.linspace(0.0, 9.0, 20):
            assert special.prob_inclusion(float(dist) ** 2, 128) >= 0.99
        for dist in np.linspace(14.0, 25.0, 20):
            assert special.prob_inclusion(float(dist) ** 2, 128) <= 0.01

    def test_exclusion_complement_no_cancellation(self):
        # Deep inside the plateau 1 - Q cancels; the direct series must not.
        p = special.prob_exclusion(4.0, 128)
        assert 0.0 < p < 1e-50
        q = special.prob_inclusion(4.0, 128)
        assert q == 1.0  # rounds to 1 in double precision


class TestProbInclusionGrad:
    def test_n_two_density(self):
        assert special.prob_inclusion_grad(2.0, 2) == pytest.approx(
            -0.5 * math.exp(-1.0), abs=1e-14
        )

    def test_origin_values(self):
        assert special.prob_inclusion_grad(0.0, 4) == 0.0
        assert special.prob_inclusion_grad(0.0, 2) == -0.5
        with pytest.raises(DomainError):
            special.prob_inclusion_grad(0.0, 1)

    def test_matches_finite_difference_of_prob_inclusion(self):
        # Near the plateau Q rounds to 1.0 and its differences quantize at one
        # ulp, so difference whichever of Q and its complement carries the
        # resolution at that point (they are negatives of each other).  The
        # step is relative: the density behaves like d^(n/2-1), so a fixed
        # step is dominated by truncation error at small d.
        for n in (2, 8, 32, 128):
            for d in np.geomspace(0.01, 4.0 * n, 25):
                d = float(d)
                h = 1e-5 * d
                if special.prob_inclusion(d, n) > 0.5:
                    fd = -(
                        special.prob_exclusion(d + h, n) - special.prob_exclusion(d - h, n)
                    ) / (2.0 * h)
                else:
                    fd = (
                        special.prob_inclusion(d + h, n) - special.prob_inclusion(d - h, n)
                    ) / (2.0 * h)
                grad = special.prob_inclusion_grad(d, n)
                if abs(fd) < 1e-280:  # beyond the tail both vanish
                    continue
                assert abs(grad - fd) <= 1e-5 * max(abs(grad), abs(fd))

    def test_spec_point_matches_central_difference(self):
        h = 1e-4
        fd = (special.prob_inclusion(10.0 + h, 8) - special.prob_inclusion(10.0 - h, 8)) / (2 * h)
        assert special.prob_inclusion_grad(10.0, 8) == pytest.approx(fd, rel=1e-5)


class TestHScale:
    @pytest.mark.parametrize("x,expected", [(0.0, 0.0), (3.0, 1.0), (8.0, 2.0)])
    def test_exact_points(self, x, expected):
        assert special.h_scale(x) == expected

    def test_monotone(self):
        xs = np.linspace(0.0, 100.0, 200)
        hs = [special.h_scale(float(x)) for x in xs]
        assert all(h2 > h1 for h1, h2 in zip(hs, hs[1:]))

    def test_small_x_accuracy(self):
        x = 1e-12
        assert special.h_scale(x) == pytest.approx(x / 2.0, rel=1e-9)

    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            special.h_scale(-1e-9)
