import dataclasses
import filecmp
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wvadelay.errors import FormatError, StageError, UsageError
from wvadelay.experiment import (
    FIGURE_PRESETS,
    FIGURES,
    UPTURN_BAND,
    ExperimentConfig,
    Simulator,
    figure_config,
    parse_override,
    run_analyze,
    run_reproduce,
    run_simulate,
    simulate_series,
)
from wvadelay.metrology import slope_fit
from wvadelay.noisegen import TimeSeries, gen_powerlaw, white_amp, write_series_csv

# eight columns: identical row-marginal statistics, far cheaper frames
NARROW = {"ccd.cols": 8}

ALTERNATIVES = {
    "optics.propagation": "numeric",
    "optics.kernel": "erf",
    "noise.channel": "fringe_offset",
    "run.reference": "first",
    "run.weighting": "intensity",
    "run.register_on": "frame",
}


def all_keys():
    cfg = ExperimentConfig()
    return [f"{sec}.{f.name}" for sec in cfg.to_dict() for f in dataclasses.fields(getattr(cfg, sec))]


def perturbed(key, value):
    if key in ALTERNATIVES:
        return ALTERNATIVES[key]
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return value + 1
    if isinstance(value, float):
        return value * 1.5 + 0.25
    if isinstance(value, list):
        return value + [7.0]
    raise AssertionError(key)


def header_of(path):
    return [line[2:].strip() for line in path.read_text().splitlines() if line.startswith("# ")]


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.optics.wavelength_nm == 632.992
        assert cfg.optics.sigma_xy_mm == 0.325
        assert cfg.optics.d1_mm == 0.425
        assert cfg.optics.f_d_m == 1.0
        assert cfg.optics.n0 == 1.54
        assert (cfg.selection.beta_u_deg, cfg.selection.beta_d_deg) == (1.6, -1.6)
        assert cfg.run.n_r == 3.6e4

    def test_toml_roundtrip(self, tmp_path):
        cfg = ExperimentConfig().replace(**{"run.n_r": 1234.5, "delays.calibration_tau_as": [0.1, 0.2]})
        cfg.save(tmp_path / "c.toml")
        back = ExperimentConfig.load(tmp_path / "c.toml")
        assert back == cfg and back.hash == cfg.hash

    def test_partial_file_keeps_base(self, tmp_path):
        (tmp_path / "c.toml").write_text("[run]\nframes = 17\n")
        base = ExperimentConfig().replace(**{"run.seed": 5})
        cfg = ExperimentConfig.load(tmp_path / "c.toml", base=base)
        assert (cfg.run.frames, cfg.run.seed) == (17, 5)

    @pytest.mark.parametrize("data", [{"laser": {}}, {"run": {"speed": 1}}, {"run": 3}])
    def test_unknown_keys(self, data):
        with pytest.raises(UsageError):
            ExperimentConfig.from_dict(data)

    @pytest.mark.parametrize("key, value", [
        ("run.frames", 1), ("run.n_r", 0.0), ("run.kappa", 0), ("run.weighting", "sqrt"),
        ("noise.channel", "phase"), ("run.frames", "many"), ("run.shot_noise", "no"), ("run.frames", 2.5),
    ])
    def test_invalid_values(self, key, value):
        with pytest.raises(UsageError):
            ExperimentConfig().replace(**{key: value})

    def test_replace_unknown(self):
        with pytest.raises(UsageError):
            ExperimentConfig().replace(**{"run.nope": 1})

    @settings(max_examples=60)
    @given(st.sampled_from(all_keys()))
    def test_hash_changes_with_any_parameter(self, key):
        cfg = ExperimentConfig()
        sec, name = key.split(".")
        changed = cfg.replace(**{key: perturbed(key, getattr(getattr(cfg, sec), name))})
        assert changed.hash != cfg.hash

    def test_hash_stable(self):
        assert ExperimentConfig().hash == ExperimentConfig().hash
        assert len(ExperimentConfig().hash) == 16

    @pytest.mark.parametrize("text, expected", [
        ("run.n_r=1e4", ("run.n_r", 1e4)),
        ("run.shot_noise=false", ("run.shot_noise", False)),
        ("delays.calibration_tau_as=[1, 2]", ("delays.calibration_tau_as", [1, 2])),
        ("run.weighting=intensity", ("run.weighting", "intensity")),
    ])
    def test_parse_override(self, text, expected):
        assert parse_override(text) == expected

    def test_parse_override_needs_equals(self):
        with pytest.raises(UsageError):
            parse_override("run.frames")

    def test_figure_presets(self):
        assert set(FIGURE_PRESETS) == set(FIGURES)
        cfg = figure_config("allan_2a")
        assert cfg.noise.rw_amp > 0 and cfg.noise.flicker_amp > 0
        with pytest.raises(UsageError):
            figure_config("fig9")


class TestSimulator:
    def test_row_distribution_normalized(self):
        sim = Simulator(ExperimentConfig().replace(**NARROW))
        p = sim.row_distribution(1.7)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert p.shape == (1024,)

    def test_narrow_detector_same_rows(self):
        wide = Simulator(ExperimentConfig()).row_distribution(1.7)
        narrow = Simulator(ExperimentConfig().replace(**NARROW)).row_distribution(1.7)
        assert np.allclose(wide, narrow, rtol=1e-10, atol=1e-15)

    def test_paper_calibration_delays(self):
        taus = Simulator(ExperimentConfig()).calibration_taus()
        assert taus == pytest.approx([1.08, 1.69, 2.43], rel=0.01)

    def test_frame_reproducible(self):
        sim = Simulator(ExperimentConfig().replace(**NARROW))
        assert np.array_equal(sim.frame(1.7, 3).counts, sim.frame(1.7, 3).counts)
        assert not np.array_equal(sim.frame(1.7, 3).counts, sim.frame(1.7, 4).counts)

    def test_photon_budget(self):
        sim = Simulator(ExperimentConfig().replace(**NARROW))
        totals = [sim.frame(1.7, i).counts.sum() for i in range(50)]
        assert abs(np.mean(totals) - 3.6e4) < 4 * np.sqrt(3.6e4 / 50)


class TestSimulateSeries:
    def test_noise_free_zero_delay(self):
        # a calibration bracketing the operating point: the default 4-6 degree
        # line has a nonzero intercept from the slightly nonlinear response
        cfg = ExperimentConfig().replace(**NARROW, **{
            "run.frames": 4, "run.shot_noise": False,
            "delays.operating_tau_as": 0.0, "delays.calibration_tau_as": [-0.6, 0.0, 0.6],
        })
        res = simulate_series(cfg)
        bound = 1 / (cfg.run.kappa * res.calibration.slope)
        assert np.all(np.abs(res.tau_hat.samples) <= bound)

    def test_noise_free_recovers_operating_delay(self):
        cfg = ExperimentConfig().replace(**NARROW, **{"run.frames": 3, "run.shot_noise": False})
        res = simulate_series(cfg)
        # three-point line through a weakly curved response: within the fit residual
        assert np.all(np.abs(res.tau_hat.samples - res.operating_tau_as) < 3 * res.calibration.residual_rms
                      / res.calibration.slope)

    def test_constant_drift_biases_estimate(self):
        base = ExperimentConfig().replace(**NARROW, **{"run.frames": 3, "run.shot_noise": False,
                                                      "delays.calibration_tau_as": [1.5, 1.7, 1.9]})
        a = simulate_series(base.replace(**{"delays.operating_tau_as": 1.7}))
        b = simulate_series(base.replace(**{"delays.operating_tau_as": 1.75}))
        assert np.mean(b.tau_hat.samples) - np.mean(a.tau_hat.samples) == pytest.approx(0.05, abs=0.002)

    def test_fringe_channel_adds_pixels(self):
        base = ExperimentConfig().replace(**NARROW, **{"run.frames": 64, "run.shot_noise": False,
                                                      "noise.channel": "fringe_offset"})
        quiet = simulate_series(base)
        noisy = simulate_series(base.replace(**{"noise.white_sigma": 2.0}))
        extra = np.array([e.dy for e in noisy.estimates]) - np.array([e.dy for e in quiet.estimates])
        assert np.std(extra) == pytest.approx(2.0, rel=0.3)
        assert np.allclose(noisy.tau_hat.samples - quiet.tau_hat.samples, extra / quiet.calibration.slope)

    def test_crb_independent_of_frame_count(self):
        cfg = ExperimentConfig().replace(**NARROW, **{"run.frames": 3})
        a = simulate_series(cfg).fisher
        b = simulate_series(cfg.replace(**{"run.frames": 12})).fisher
        assert a.crb == b.crb

    @pytest.mark.slow
    def test_shot_noise_efficiency(self):
        cfg = ExperimentConfig().replace(**NARROW, **{"run.frames": 1000})
        res = simulate_series(cfg)
        assert 1.0 <= res.crb_ratio <= 1.5

    def test_stage_named_in_error(self):
        cfg = ExperimentConfig().replace(**{"selection.beta_u_deg": 0.0})
        with pytest.raises(StageError) as info:
            simulate_series(cfg)
        assert info.value.stage == "diffraction"
        assert "diffraction" in str(info.value)

    def test_reference_policies(self):
        base = ExperimentConfig().replace(**NARROW, **{"run.frames": 6})
        for policy in ("first", "mean"):
            res = simulate_series(base.replace(**{"run.reference": policy}))
            assert len(res.tau_hat) == 6 and np.all(np.isfinite(res.tau_hat.samples))


class TestRunSimulate:
    def _cfg(self, **kw):
        return ExperimentConfig().replace(**NARROW, **{"run.frames": 40, "run.save_frames": 2, **kw})

    def test_artifacts(self, tmp_path):
        cfg = self._cfg()
        run_simulate(cfg, tmp_path)
        names = {p.name for p in tmp_path.iterdir()}
        assert {"config.toml", "calibration.json", "shifts.csv", "tau_hat.csv", "allan.csv", "psd.csv",
                "cfi.json", "summary.json", "frames"} <= names
        assert ExperimentConfig.load(tmp_path / "config.toml") == cfg
        assert len(list((tmp_path / "frames").glob("*.pgm"))) == 2
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config_hash"] == cfg.hash and summary["data"] == "synthetic"

    def test_headers(self, tmp_path):
        cfg = self._cfg()
        run_simulate(cfg, tmp_path)
        for name in ("shifts.csv", "tau_hat.csv", "allan.csv", "psd.csv"):
            hdr = header_of(tmp_path / name)
            assert "tool=wvadelay 0.1.0" in hdr
            assert f"config_hash={cfg.hash}" in hdr
            assert f"seed={cfg.run.seed}" in hdr
            assert "data=synthetic" in hdr

    def test_byte_identical(self, tmp_path):
        cfg = self._cfg(**{"noise.white_sigma": 0.01, "noise.rw_amp": 1e-4})
        run_simulate(cfg, tmp_path / "a")
        run_simulate(cfg, tmp_path / "b")
        for p in sorted((tmp_path / "a").rglob("*")):
            if p.is_file():
                assert filecmp.cmp(p, tmp_path / "b" / p.relative_to(tmp_path / "a"), shallow=False), p.name

    def test_seed_changes_output(self, tmp_path):
        run_simulate(self._cfg(), tmp_path / "a")
        run_simulate(self._cfg(**{"run.seed": 7}), tmp_path / "b")
        assert (tmp_path / "a" / "shifts.csv").read_text() != (tmp_path / "b" / "shifts.csv").read_text()


class TestReproduce:
    def test_unknown_figure(self, tmp_path):
        with pytest.raises(UsageError):
            run_reproduce("fig9", ExperimentConfig(), tmp_path)

    @pytest.mark.slow
    def test_scaling_slope(self, tmp_path):
        cfg = figure_config("scaling_3")
        res = run_reproduce("scaling_3", cfg, tmp_path)
        assert res[1.6]["fit"].exponent == pytest.approx(-1, abs=0.05)
        fits = json.loads((tmp_path / "scaling_3.json").read_text())
        assert set(fits) == {"1.6", "45.0"}
        assert "noise_budget=synthetic" in header_of(tmp_path / "scaling_3.csv")

    @pytest.mark.slow
    def test_allan_upturn(self, tmp_path):
        cfg = figure_config("allan_2a").replace(**{"run.frames": 2**14})
        res = run_reproduce("allan_2a", cfg, tmp_path)
        for beta in (1.6, 45.0):
            curve = res[beta]["curve"]
            # falls from the shot-noise level, bottoms out, then rises
            low = int(np.argmin(curve.sigma2))
            assert 0 < low < len(curve.points) - 1
            assert curve.sigma2[0] > 3 * curve.sigma2[low]
            assert res[beta]["upturn"].exponent == pytest.approx(1, abs=0.2)
        # technical noise enters in pixels, so WVA divides it by a larger slope
        assert res[1.6]["curve"].sigma2[-5] < res[45.0]["curve"].sigma2[-5] / 100
        hdr = header_of(tmp_path / "allan_2a.csv")
        assert "data=synthetic" in hdr and "figure=allan_2a" in hdr
        assert json.loads((tmp_path / "allan_2a.json").read_text())["1.6"]["upturn_band_s"] == list(UPTURN_BAND)

    def test_psd_small(self, tmp_path):
        cfg = figure_config("psd_2b").replace(**{"run.frames": 256})
        res = run_reproduce("psd_2b", cfg, tmp_path)
        assert set(res) == {1.6, 45.0}
        lines = [ln for ln in (tmp_path / "psd_2b.csv").read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == "beta_deg,freq_hz,psd"

    def test_allan_tau_small(self, tmp_path):
        cfg = figure_config("allan_tau_5").replace(**{"run.frames": 200})
        res = run_reproduce("allan_tau_5", cfg, tmp_path, taus_as=(0.2, 6.7))
        for tau in (0.2, 6.7):
            first = res[tau]["curve"].points[0]
            assert first.sigma2 < 2 * res[tau]["crb"]


class TestAnalyze:
    def _write(self, path, x, dt=0.01):
        write_series_csv(TimeSeries(np.asarray(x, float), dt), path)

    def test_white_slope(self, tmp_path):
        x = gen_powerlaw(0, 2**14, white_amp(1.0, 0.01), 0.01, np.random.default_rng(4)).samples
        self._write(tmp_path / "s.csv", x)
        res = run_analyze(tmp_path / "s.csv", tmp_path / "out", band_allan=(0.01, 10))
        assert res["slopes"]["allan"]["exponent"] == pytest.approx(-1, abs=0.1)
        assert {"allan.csv", "psd.csv", "slope.json"} <= {p.name for p in (tmp_path / "out").iterdir()}
        assert "data=ingested" in header_of(tmp_path / "out" / "allan.csv")

    def test_constant(self, tmp_path):
        self._write(tmp_path / "s.csv", np.full(100, 3.0))
        res = run_analyze(tmp_path / "s.csv", tmp_path / "out", commands=("allan",))
        assert np.all(res["allan"].sigma2 == 0)
        assert not (tmp_path / "out" / "psd.csv").exists()

    def test_one_column(self, tmp_path):
        (tmp_path / "s.csv").write_text("1.0\n2.0\n3.0\n")
        with pytest.raises(FormatError):
            run_analyze(tmp_path / "s.csv", tmp_path / "out")

    def test_non_uniform(self, tmp_path):
        (tmp_path / "s.csv").write_text("0.0,1\n0.01,2\n0.02,3\n0.04,4\n")
        with pytest.raises(FormatError, match="line 4"):
            run_analyze(tmp_path / "s.csv", tmp_path / "out")

    def test_slope_reports_empty_band(self, tmp_path):
        self._write(tmp_path / "s.csv", np.random.default_rng(0).normal(size=200))
        res = run_analyze(tmp_path / "s.csv", tmp_path / "out", band_allan=(1e3, 1e4))
        assert "error" in res["slopes"]["allan"]
        assert slope_fit(res["allan"]).n_points > 4
