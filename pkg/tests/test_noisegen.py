import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from wvadelay.errors import FormatError, InvalidArgumentError, LengthError, UnsupportedExponentError
from wvadelay.noisegen import (
    DELAY_OFFSET,
    FRINGE_OFFSET,
    NoiseBudget,
    TimeSeries,
    gen_powerlaw,
    inject,
    read_series_csv,
    white_amp,
    write_series_csv,
)

DT = 0.01


def periodogram_fit(x, dt, band):
    """Log-log line through a Hann periodogram (independent of metrology.psd).

    The series are not periodic, so an untapered periodogram would leak the
    endpoint jump into every bin with an f**-2 shape of its own.
    """
    f, s = signal.periodogram(x, fs=1 / dt, window="hann", detrend=False)
    sel = (f >= band[0]) & (f <= band[1])
    slope, icpt = np.polyfit(np.log10(f[sel]), np.log10(s[sel]), 1)
    return slope, 10**icpt


class TestTimeSeries:
    def test_invalid(self):
        with pytest.raises(InvalidArgumentError):
            TimeSeries([1.0], 0.1)
        with pytest.raises(InvalidArgumentError):
            TimeSeries([1.0, 2.0], 0.0)

    def test_times(self):
        ts = TimeSeries([1.0, 2.0, 3.0], 0.5, start_index=4)
        assert ts.times.tolist() == [2.0, 2.5, 3.0]
        assert ts.sample_rate == 2.0

    def test_add(self):
        a = TimeSeries([1.0, 2.0], 0.1)
        assert (a + a).samples.tolist() == [2.0, 4.0]
        with pytest.raises(LengthError):
            a + TimeSeries([1.0, 2.0, 3.0], 0.1)


class TestGenPowerlaw:
    def test_zero_amp(self, rng):
        assert np.all(gen_powerlaw(1, 128, 0.0, DT, rng).samples == 0)

    @pytest.mark.parametrize("alpha", [-0.5, 2.5])
    def test_unsupported(self, rng, alpha):
        with pytest.raises(UnsupportedExponentError):
            gen_powerlaw(alpha, 128, 1.0, DT, rng)

    def test_too_short(self, rng):
        with pytest.raises(InvalidArgumentError):
            gen_powerlaw(0, 32, 1.0, DT, rng)

    def test_white_autocorrelation(self, rng):
        n = 2**14
        x = gen_powerlaw(0, n, 1.0, DT, rng).samples
        x = x - x.mean()
        ac = np.correlate(x, x, mode="full")[n - 1 :] / np.dot(x, x)
        assert np.max(np.abs(ac[1:50])) < 4 / np.sqrt(n)

    def test_random_walk_middle_decade(self, rng):
        n = 2**16
        x = gen_powerlaw(2, n, 1e-3, DT, rng).samples
        f1 = 1 / (n * DT)
        slope, _ = periodogram_fit(x, DT, (30 * f1, 300 * f1))
        assert slope == pytest.approx(-2, abs=0.2)

    @pytest.mark.parametrize("alpha", [0, 1, 2])
    def test_spectral_calibration(self, alpha):
        n = 2**18
        amp = 3e-4
        x = gen_powerlaw(alpha, n, amp, DT, np.random.default_rng(100 + alpha)).samples
        slope, _ = periodogram_fit(x, DT, (0.01, 10.0))
        assert slope == pytest.approx(-alpha, abs=0.15)
        # level at 1 Hz from a fixed-slope fit (mean of log residuals)
        f, s = signal.periodogram(x, fs=1 / DT, window="hann", detrend=False)
        sel = (f >= 0.1) & (f <= 10)
        # periodogram ordinates are chi^2_2 / 2: log-mean is biased by exp(-gamma)
        level = 10 ** np.mean(np.log10(s[sel] * f[sel] ** alpha)) / np.exp(-np.euler_gamma)
        assert 1 / 1.3 < level / amp < 1.3

    def test_white_variance(self, rng):
        sigma = 0.7
        x = gen_powerlaw(0, 2**16, white_amp(sigma, DT), DT, rng).samples
        assert np.var(x) == pytest.approx(sigma**2, rel=0.05)

    def test_zero_mean(self, rng):
        for alpha in (0, 1, 2):
            assert abs(gen_powerlaw(alpha, 256, 1.0, DT, rng).samples.mean()) < 1e-12

    def test_random_walk_allan_upturn(self):
        # a record shaped at its own length is periodic and bends the long-T
        # Allan slope of a random walk below +1
        from wvadelay.metrology import allan_curve, slope_fit

        x = gen_powerlaw(2, 2**15, 1.0, DT, np.random.default_rng(12))
        assert slope_fit(allan_curve(x), band=(3, 30)).exponent == pytest.approx(1, abs=0.15)

    def test_reproducible(self):
        a = gen_powerlaw(1, 1024, 1.0, DT, np.random.default_rng(5)).samples
        b = gen_powerlaw(1, 1024, 1.0, DT, np.random.default_rng(5)).samples
        assert np.array_equal(a, b)


class TestBudget:
    def test_negative(self):
        with pytest.raises(InvalidArgumentError):
            NoiseBudget(white_sigma=-1)

    def test_channel(self):
        with pytest.raises(InvalidArgumentError):
            NoiseBudget(channel="phase")

    def test_silent(self, rng):
        assert np.all(NoiseBudget().realize(100, DT, rng).samples == 0)

    def test_components_add(self):
        b = NoiseBudget(white_sigma=0.5, flicker_amp=1e-3, rw_amp=1e-4)
        x = b.realize(4096, DT, np.random.default_rng(9)).samples
        gens = np.random.default_rng(9).spawn(3)
        parts = [
            gen_powerlaw(0, 4096, white_amp(0.5, DT), DT, gens[0]).samples,
            gen_powerlaw(1, 4096, 1e-3, DT, gens[1]).samples,
            gen_powerlaw(2, 4096, 1e-4, DT, gens[2]).samples,
        ]
        assert np.allclose(x, sum(parts))

    def test_short_series(self, rng):
        assert len(NoiseBudget(white_sigma=1).realize(10, DT, rng)) == 10


class TestInject:
    def test_zero_drift(self):
        inj = inject(1.7e-18, np.zeros(5))
        assert np.all(inj.tau_eff == 1.7e-18)

    def test_constant_drift(self):
        inj = inject(1.7e-18, np.full(5, 0.2e-18), DELAY_OFFSET)
        assert np.allclose(inj.tau_eff, 1.9e-18)
        assert np.all(inj.fringe_offset == 0)

    def test_fringe_channel(self):
        inj = inject(1.7e-18, TimeSeries([0.5, -0.5, 1.0], DT), FRINGE_OFFSET)
        assert np.all(inj.tau_eff == 1.7e-18)
        assert inj.fringe_offset.tolist() == [0.5, -0.5, 1.0]

    def test_length(self):
        with pytest.raises(LengthError):
            inject(0.0, np.zeros(5), n_frames=6)


class TestSeriesCsv:
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50), st.floats(1e-4, 10))
    def test_roundtrip(self, tmp_path_factory, values, dt):
        path = tmp_path_factory.mktemp("csv") / "s.csv"
        ts = TimeSeries(np.array(values), dt)
        write_series_csv(ts, path, header_lines=["data=synthetic"])
        back = read_series_csv(path)
        assert np.array_equal(back.samples, ts.samples)
        assert back.dt == pytest.approx(dt, rel=1e-9)

    def test_one_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0.0\n0.1\n")
        with pytest.raises(FormatError, match="line 1"):
            read_series_csv(p)

    def test_ragged(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("t,v\n0.0,1\n0.1,2\n0.2,3,4\n")
        with pytest.raises(FormatError, match="line 4"):
            read_series_csv(p)

    def test_non_uniform(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0.0,1\n0.1,2\n0.2,3\n0.35,4\n")
        with pytest.raises(FormatError, match="line 4"):
            read_series_csv(p)

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0.0,1\n0.1,x\n")
        with pytest.raises(FormatError, match="line 2"):
            read_series_csv(p)
