"""Config-driven simulation runs: simulate, reproduce figures, analyze series.

Config files are TOML with one table per stage (``optics``, ``selection``,
``delays``, ``ccd``, ``noise``, ``run``). Angles are degrees, delays
attoseconds and lengths carry their unit in the key name; everything is
converted to SI radians/seconds/metres when the simulator is built.

Precedence: built-in defaults < config file < command-line overrides.
"""

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ccd import CcdSpec, Frame, expected_counts, expose, frame_rng, write_frame_bin, write_pgm
from .diffraction import (
    Grid,
    IntensityMap,
    OpticalGeometry,
    closed_form_envelope,
    combine_arms,
    fringe_profile,
    numeric_arm_fields,
)
from .errors import StageError, UsageError, WvaError
from .metrology import (
    CalibrationLine,
    allan_curve,
    calibrate,
    estimate_tau,
    fisher_information,
    psd,
    scaling_fit,
    slope_fit,
)
from .noisegen import CHANNELS, DELAY_OFFSET, FRINGE_OFFSET, NoiseBudget, TimeSeries, inject, read_series_csv, write_series_csv
from .polarization import SelectionConfig, tilt_to_delay
from .registration import ShiftEstimate, register, write_shifts_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

AS = 1e-18
FIGURES = ("allan_2a", "psd_2b", "scaling_3", "allan_nr_4", "allan_tau_5")


# -- configuration -----------------------------------------------------------------


@dataclass
class OpticsSection:
    wavelength_nm: float = 632.992
    sigma_xy_mm: float = 0.325
    d1_mm: float = 0.425
    f_d_m: float = 1.0
    n0: float = 1.54
    propagation: str = "closed_form"
    kernel: str = "erfi"


@dataclass
class SelectionSection:
    beta_u_deg: float = 1.6
    beta_d_deg: float = -1.6
    offset_deg: float = 0.0


@dataclass
class DelaysSection:
    calibration_theta_deg: list = field(default_factory=lambda: [4.0, 5.0, 6.0])
    operating_theta_deg: float = 5.0
    # explicit delays override the tilt angles when non-empty / >= 0
    calibration_tau_as: list = field(default_factory=list)
    operating_tau_as: float = -1.0


@dataclass
class CcdSection:
    pixel_pitch_um: float = 1.85
    rows: int = 1024
    cols: int = 1024
    bit_depth: int = 8
    quantum_efficiency: float = 0.856
    gain: float = 1.0
    incident_photons: bool = False


@dataclass
class NoiseSection:
    """Delay channel in attoseconds, fringe channel in pixels."""

    white_sigma: float = 0.0
    flicker_amp: float = 0.0
    rw_amp: float = 0.0
    channel: str = DELAY_OFFSET


@dataclass
class RunSection:
    frames: int = 1000
    sample_rate_hz: float = 100.0
    n_r: float = 3.6e4
    seed: int = 20251
    kappa: int = 100
    reference: str = "model"
    reference_tau_as: float = 0.0
    weighting: str = "log"
    register_on: str = "rows"
    shot_noise: bool = True
    calibration_frames: int = 0
    save_frames: int = 0


_SECTIONS = {
    "optics": OpticsSection,
    "selection": SelectionSection,
    "delays": DelaysSection,
    "ccd": CcdSection,
    "noise": NoiseSection,
    "run": RunSection,
}


@dataclass
class ExperimentConfig:
    optics: OpticsSection = field(default_factory=OpticsSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    delays: DelaysSection = field(default_factory=DelaysSection)
    ccd: CcdSection = field(default_factory=CcdSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        kwargs = {}
        for name, value in data.items():
            if name not in _SECTIONS:
                raise UsageError(f"unknown config section [{name}]")
            kwargs[name] = _build_section(_SECTIONS[name], value, name)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if self.noise.channel not in CHANNELS:
            raise UsageError(f"noise.channel must be one of {CHANNELS}")
        if self.run.reference not in ("model", "first", "mean"):
            raise UsageError("run.reference must be model, first or mean")
        if self.run.weighting not in ("log", "intensity"):
            raise UsageError("run.weighting must be log or intensity")
        if self.run.register_on not in ("rows", "frame"):
            raise UsageError("run.register_on must be rows or frame")
        if self.optics.propagation not in ("closed_form", "numeric"):
            raise UsageError("optics.propagation must be closed_form or numeric")
        if self.run.frames < 2:
            raise UsageError("run.frames must be >= 2")
        if not self.run.n_r > 0:
            raise UsageError("run.n_r must be > 0")
        if self.run.kappa < 1:
            raise UsageError("run.kappa must be >= 1")
        if not self.run.sample_rate_hz > 0:
            raise UsageError("run.sample_rate_hz must be > 0")
        return self

    def replace(self, **overrides):
        """Copy with dotted overrides, e.g. ``replace(**{"run.n_r": 1e4})``."""
        data = self.to_dict()
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in data or name not in data[section]:
                raise UsageError(f"unknown config key {key!r}")
            data[section][name] = value
        return ExperimentConfig.from_dict(data)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def overlay(self, data):
        """Copy with whole sections or single keys from ``data`` laid over."""
        merged = self.to_dict()
        for name, values in data.items():
            if name not in merged:
                raise UsageError(f"unknown config section [{name}]")
            if not isinstance(values, dict):
                raise UsageError(f"[{name}] must be a table")
            merged[name].update(values)
        return ExperimentConfig.from_dict(merged)

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    def save(self, path):
        Path(path).write_text(self.to_toml())

    @classmethod
    def from_toml(cls, text):
        return cls.from_dict(tomllib.loads(text))

    @classmethod
    def load(cls, path, base=None):
        """Read a TOML file; keys it leaves out come from ``base`` (defaults)."""
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return (base or cls()).overlay(data)


def _build_section(kind, values, name):
    if not isinstance(values, dict):
        raise UsageError(f"[{name}] must be a table")
    known = {f.name: f for f in dataclasses.fields(kind)}
    out = {}
    for key, value in values.items():
        if key not in known:
            raise UsageError(f"unknown key {name}.{key}")
        default = getattr(kind(), key)
        try:
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise TypeError("expected true or false")
            elif isinstance(default, int):
                if isinstance(value, float) and not value.is_integer():
                    raise TypeError("expected an integer")
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
            elif isinstance(default, list):
                value = [float(v) for v in value]
            elif not isinstance(value, str):
                raise TypeError("expected a string")
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {name}.{key}: {value!r} ({exc})") from None
        out[key] = value
    return kind(**out)


def parse_override(text):
    """``section.key=value`` with the value parsed as a TOML literal."""
    key, sep, raw = text.partition("=")
    if not sep:
        raise UsageError(f"override {text!r} is not key=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip(), value


# -- simulator ------------------------------------------------------------------


class Simulator:
    """Frames, shifts and delay estimates for one configuration.

    The detector grid follows the CCD section. Frames are produced one at a
    time from per-frame RNG substreams keyed by ``(seed, frame index)``, so
    any subset of frames can be regenerated independently.
    """

    def __init__(self, config):
        self.config = config
        o, c, r = config.optics, config.ccd, config.run
        self.geometry = OpticalGeometry(
            wavelength=o.wavelength_nm * 1e-9,
            sigma_xy=o.sigma_xy_mm * 1e-3,
            d1=o.d1_mm * 1e-3,
            f_d=o.f_d_m,
        )
        self.selection = SelectionConfig.from_degrees(
            config.selection.beta_u_deg, config.selection.beta_d_deg, config.selection.offset_deg
        )
        self.spec = CcdSpec(
            pixel_pitch=c.pixel_pitch_um * 1e-6,
            rows=c.rows,
            cols=c.cols,
            bit_depth=c.bit_depth,
            quantum_efficiency=c.quantum_efficiency,
            gain=c.gain,
        )
        self.grid = Grid(c.rows, c.cols, self.spec.pixel_pitch)
        self.dt = 1.0 / r.sample_rate_hz
        self._arms = None
        self._cached = (None, None)

    # geometry -> intensity

    def intensity(self, tau_as):
        tau_as = float(tau_as)
        if self._cached[0] == tau_as:
            return self._cached[1]
        o = self.config.optics
        tau = tau_as * AS
        if o.propagation == "closed_form":
            prof = fringe_profile(self.geometry, self.selection, tau, self.grid.y, o.kernel)
            env = closed_form_envelope(self.geometry, self.grid.x, o.kernel) ** 2
            out = IntensityMap(np.outer(prof, env), self.grid.pitch)
        else:
            if self._arms is None:
                self._arms = numeric_arm_fields(self.geometry, self.grid)
            out = combine_arms(*self._arms, self.selection, tau, self.geometry.omega)
        self._cached = (tau_as, out)
        return out

    def row_distribution(self, tau_as):
        """Normalized ``p(K_m | tau)`` on the detector rows."""
        rows = self.intensity(tau_as).row_profile()
        return rows / rows.sum()

    # delays

    def calibration_taus(self):
        d = self.config.delays
        if d.calibration_tau_as:
            return [float(t) for t in d.calibration_tau_as]
        return [
            tilt_to_delay(np.deg2rad(th), self.config.optics.n0, self.geometry.wavelength) / AS
            for th in d.calibration_theta_deg
        ]

    def operating_tau(self):
        d = self.config.delays
        if d.operating_tau_as >= 0:
            return float(d.operating_tau_as)
        return tilt_to_delay(
            np.deg2rad(d.operating_theta_deg), self.config.optics.n0, self.geometry.wavelength
        ) / AS

    # frames

    def expected_frame(self, tau_as):
        return expected_counts(self.intensity(tau_as), self.config.run.n_r, self.spec,
                               incident=self.config.ccd.incident_photons)

    def model_frame(self, tau_as):
        """Noiseless detector image: mean counts after gain and clipping."""
        return np.minimum(self.expected_frame(tau_as) * self.spec.gain, self.spec.saturation)

    def frame(self, tau_as, index):
        r = self.config.run
        intensity = self.intensity(tau_as)
        if not r.shot_noise:
            # mean counts, unquantized: rounding would be a noise source too
            counts = self.model_frame(tau_as)
            return Frame(counts, self.spec, index=index, timestamp=index * self.dt, seed=r.seed)
        return expose(
            intensity,
            r.n_r,
            self.spec,
            frame_rng(r.seed, index),
            index=index,
            timestamp=index * self.dt,
            seed=r.seed,
            incident=self.config.ccd.incident_photons,
        )

    # registration

    def _reduce(self, arr):
        return arr.sum(axis=1) if self.config.run.register_on == "rows" else arr

    def reference(self, first_frame=None, mean_frame=None):
        r = self.config.run
        if r.reference == "model":
            return self._reduce(self.model_frame(r.reference_tau_as))
        if r.reference == "first":
            return self._reduce(np.asarray(first_frame, dtype=float))
        return self._reduce(np.asarray(mean_frame, dtype=float))

    def measure(self, ref, image):
        r = self.config.run
        return register(ref, self._reduce(np.asarray(image, dtype=float)), kappa=r.kappa, weighting=r.weighting)

    def calibration(self, ref):
        """Calibration line from model images (or mean noisy frames)."""
        r = self.config.run
        pts = []
        for j, tau in enumerate(self.calibration_taus()):
            if r.calibration_frames > 0:
                base = 10_000_000 + 1000 * j
                shifts = [self.measure(ref, self.frame(tau, base + i).counts).dy
                          for i in range(r.calibration_frames)]
                pts.append((tau, float(np.mean(shifts))))
            else:
                pts.append((tau, self.measure(ref, self.model_frame(tau)).dy))
        return calibrate(pts)

    def fisher(self, tau_as, slope=None):
        slope = slope if slope else self.calibration(self.reference()).slope
        step = 0.1 / abs(slope)
        return fisher_information(self.row_distribution, tau_as, step, self.config.run.n_r)


@dataclass
class SimulationResult:
    config: ExperimentConfig
    calibration: CalibrationLine
    estimates: list
    tau_hat: TimeSeries
    tau_eff_as: np.ndarray
    operating_tau_as: float
    fisher: object
    frames: list = field(default_factory=list)

    @property
    def variance(self):
        return float(np.var(self.tau_hat.samples, ddof=1))

    @property
    def crb_ratio(self):
        return self.variance / self.fisher.crb


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except WvaError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc
    except (ValueError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc


def simulate_series(config, keep_frames=0):
    """Run diffraction -> noise -> CCD -> registration -> calibration -> tau-hat."""
    sim = _stage("diffraction", Simulator, config)
    r = config.run
    tau0 = sim.operating_tau()
    M = r.frames

    budget = _stage("noise", NoiseBudget, config.noise.white_sigma, config.noise.flicker_amp,
                    config.noise.rw_amp, config.noise.channel)
    noise_rng = np.random.default_rng([r.seed, 0xD81F7])
    drift = _stage("noise", budget.realize, M, sim.dt, noise_rng)
    scale = AS if budget.channel == DELAY_OFFSET else 1.0
    inj = _stage("noise", inject, tau0 * AS, drift.samples * scale, budget.channel, M)
    tau_eff_as = inj.tau_eff / AS

    if r.reference == "model":
        ref = _stage("registration", sim.reference)
        frames_iter = None
    else:
        frames_iter = [_stage("ccd", sim.frame, tau_eff_as[i], i) for i in range(M)]
        first = frames_iter[0].counts
        mean = np.mean([f.counts.astype(float) for f in frames_iter], axis=0)
        ref = _stage("registration", sim.reference, first, mean)
    line = _stage("calibration", sim.calibration, ref)

    estimates, kept = [], []
    for i in range(M):
        fr = frames_iter[i] if frames_iter is not None else _stage("ccd", sim.frame, tau_eff_as[i], i)
        if i < keep_frames:
            kept.append(fr)
        e = _stage("registration", sim.measure, ref, fr.counts)
        if inj.fringe_offset[i] != 0:
            e = ShiftEstimate(e.dy + float(inj.fringe_offset[i]), e.dx, e.peak_value, e.upsample)
        estimates.append(e)

    dy = np.array([e.dy for e in estimates])
    tau_hat = TimeSeries(_stage("calibration", estimate_tau, dy, line), sim.dt)
    fisher = _stage("fisher", sim.fisher, tau0, line.slope)
    return SimulationResult(config, line, estimates, tau_hat, tau_eff_as, tau0, fisher, kept)


# -- outputs --------------------------------------------------------------------


def header_lines(config, data="synthetic", extra=()):
    lines = [
        f"tool=wvadelay {__version__}",
        f"config_hash={config.hash}" if config is not None else "config_hash=none",
        f"seed={config.run.seed}" if config is not None else "seed=none",
        f"data={data}",
    ]
    return lines + list(extra)


def _write_table(path, columns, rows, headers):
    with open(path, "w") as fh:
        for line in headers:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_allan_csv(path, curve, headers, sql=None, prefix=()):
    cols = ["T_seconds", "allan_variance", "n", "windows_used", "sql_variance"]
    rows = [
        (*prefix, p.T, p.sigma2, p.n, p.windows_used, "" if sql is None else sql)
        for p in curve.points
    ]
    return cols, rows


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def run_simulate(config, outdir):
    """Full pipeline; writes every artifact under ``outdir``.

    Files: ``config.toml``, ``calibration.json``, ``shifts.csv``,
    ``tau_hat.csv``, ``allan.csv``, ``psd.csv``, ``cfi.json``,
    ``summary.json`` and optionally ``frames/``.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.toml")
    res = simulate_series(config, keep_frames=config.run.save_frames)
    hdr = header_lines(config)

    res.calibration.to_json(out / "calibration.json")
    write_shifts_csv(res.estimates, out / "shifts.csv", res.tau_hat.dt, header_lines=hdr)
    write_series_csv(res.tau_hat, out / "tau_hat.csv", header_lines=hdr + ["units=attoseconds"])

    curve = allan_curve(res.tau_hat)
    cols, rows = write_allan_csv(None, curve, hdr, sql=res.fisher.crb)
    _write_table(out / "allan.csv", cols, rows, hdr + ["units=as^2"])
    if len(res.tau_hat) >= 36:
        spec = psd(res.tau_hat)
        _write_table(out / "psd.csv", ["freq_hz", "psd"], zip(spec.f, spec.S), hdr + ["units=as^2/Hz"])
    write_json(out / "cfi.json", {
        "cfi_per_as2": res.fisher.cfi, "crb_as2": res.fisher.crb, "n_r": res.fisher.n_r,
        "delta_tau_as": res.fisher.delta_tau, "fd_relative_change": res.fisher.fd_change,
        "tau0_as": res.operating_tau_as,
    })
    write_json(out / "summary.json", {
        "config_hash": config.hash,
        "seed": config.run.seed,
        "frames": config.run.frames,
        "operating_tau_as": res.operating_tau_as,
        "tau_hat_mean_as": float(np.mean(res.tau_hat.samples)),
        "tau_hat_variance_as2": res.variance,
        "crb_as2": res.fisher.crb,
        "variance_over_crb": res.crb_ratio,
        "calibration_slope_px_per_as": res.calibration.slope,
        "data": "synthetic",
    })
    if res.frames:
        fdir = out / "frames"
        fdir.mkdir(exist_ok=True)
        for fr in res.frames:
            write_pgm(fr, fdir / f"frame_{fr.index:06d}.pgm")
            write_frame_bin(fr, fdir / f"frame_{fr.index:06d}.bin")
    return res


NR_GRID = (1e3, 10**3.5, 1e4, 10**4.5, 1e5)
UPTURN_BAND = (0.5, 5.0)

# Lowest-precedence layer for ``reproduce`` (defaults, preset, file, --set,
# flags). Technical noise is synthetic and sits on the fringe channel in
# pixels. Eight detector columns leave the row-marginal statistics unchanged
# while no pixel saturates (a sum of Poisson pixels is Poisson) and cut the
# per-frame cost to a few milliseconds.
_BUDGET = {
    "ccd.cols": 8,
    "noise.channel": FRINGE_OFFSET,
    "noise.flicker_amp": 0.02,
    "noise.rw_amp": 0.2,
}
FIGURE_PRESETS = {
    "allan_2a": {**_BUDGET, "run.frames": 2**15},
    "psd_2b": {**_BUDGET, "run.frames": 2**15},
    "scaling_3": {"ccd.cols": 8, "run.frames": 500},
    "allan_nr_4": {**_BUDGET, "run.frames": 2**13},
    "allan_tau_5": {**_BUDGET, "run.frames": 2**13},
}


def figure_config(figure, base=None):
    """Defaults (or ``base``) with the figure's preset applied."""
    if figure not in FIGURES:
        raise UsageError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    return (base or ExperimentConfig()).replace(**FIGURE_PRESETS[figure])


def _no_wva(config):
    return config.replace(**{"selection.beta_u_deg": 45.0, "selection.beta_d_deg": -45.0})


def run_reproduce(figure, config, outdir, nr_grid=NR_GRID, taus_as=(0.2, 1.0, 4.3, 6.7)):
    """Desk-scale data for one figure of the delay-metrology study.

    All noise is synthetic and every output says so in its header. Returns a
    dict with the in-memory results (curves, fits) for programmatic checks.
    """
    if figure not in FIGURES:
        raise UsageError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.toml")
    hdr = header_lines(config, extra=[f"figure={figure}", "noise_budget=synthetic"])
    result = {}

    if figure in ("allan_2a", "psd_2b"):
        cols = ["beta_deg"]
        rows = []
        fits = {}
        for cfg in (config, _no_wva(config)):
            res = simulate_series(cfg)
            beta = cfg.selection.beta_u_deg
            if figure == "allan_2a":
                curve = allan_curve(res.tau_hat)
                c, r = write_allan_csv(None, curve, hdr, sql=res.fisher.crb, prefix=(beta,))
                rows.extend(r)
                result[beta] = {"curve": curve, "crb": res.fisher.crb, "series": res.tau_hat}
                try:
                    fit = slope_fit(curve, UPTURN_BAND)
                    fits[str(beta)] = {"upturn_band_s": list(UPTURN_BAND), "exponent": fit.exponent,
                                       "stderr": fit.stderr}
                    result[beta]["upturn"] = fit
                except WvaError as exc:
                    fits[str(beta)] = {"upturn_band_s": list(UPTURN_BAND), "error": str(exc)}
            else:
                spec = psd(res.tau_hat)
                rows.extend((beta, f, s) for f, s in zip(spec.f, spec.S))
                c = ["freq_hz", "psd"]
                result[beta] = {"psd": spec, "series": res.tau_hat}
        _write_table(out / f"{figure}.csv", cols + c, rows, hdr)
        if fits:
            write_json(out / f"{figure}.json", fits)
        return result

    if figure == "scaling_3":
        rows = []
        fits = {}
        for cfg in (config, _no_wva(config)):
            beta = cfg.selection.beta_u_deg
            pts = []
            for n_r in nr_grid:
                res = simulate_series(cfg.replace(**{"run.n_r": float(n_r)}))
                pts.append((n_r, res.variance))
                rows.append((beta, n_r, res.variance, res.fisher.crb))
            fit = scaling_fit(pts)
            fits[str(beta)] = {"exponent": fit.exponent, "stderr": fit.stderr}
            result[beta] = {"points": pts, "fit": fit}
        _write_table(out / "scaling_3.csv", ["beta_deg", "n_r", "variance_as2", "sql_variance_as2"], rows, hdr)
        write_json(out / "scaling_3.json", fits)
        return result

    if figure == "allan_nr_4":
        rows = []
        for n_r in nr_grid:
            res = simulate_series(config.replace(**{"run.n_r": float(n_r)}))
            curve = allan_curve(res.tau_hat)
            _, r = write_allan_csv(None, curve, hdr, sql=res.fisher.crb, prefix=(n_r,))
            rows.extend(r)
            result[n_r] = {"curve": curve, "crb": res.fisher.crb}
        _write_table(out / "allan_nr_4.csv",
                     ["n_r", "T_seconds", "allan_variance", "n", "windows_used", "sql_variance"], rows, hdr)
        return result

    rows = []
    for tau in taus_as:
        cfg = config.replace(**{
            "delays.operating_tau_as": float(tau),
            "delays.calibration_tau_as": [0.8 * tau, tau, 1.2 * tau],
            "run.reference_tau_as": float(tau),
        })
        res = simulate_series(cfg)
        curve = allan_curve(res.tau_hat)
        _, r = write_allan_csv(None, curve, hdr, sql=res.fisher.crb, prefix=(tau,))
        rows.extend(r)
        result[tau] = {"curve": curve, "crb": res.fisher.crb}
    _write_table(out / "allan_tau_5.csv",
                 ["tau_as", "T_seconds", "allan_variance", "n", "windows_used", "sql_variance"], rows, hdr)
    return result


def run_analyze(series_csv, outdir, commands=("allan", "psd", "slope"), band_allan=None, band_psd=None):
    """Allan/PSD/slope analysis of an external two-column series."""
    series = read_series_csv(series_csv)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    hdr = header_lines(None, data="ingested", extra=[f"source={os.path.basename(str(series_csv))}"])
    result = {"series": series}
    if "allan" in commands or "slope" in commands:
        curve = allan_curve(series)
        result["allan"] = curve
        if "allan" in commands:
            cols, rows = write_allan_csv(None, curve, hdr)
            _write_table(out / "allan.csv", cols, rows, hdr)
    if ("psd" in commands or "slope" in commands) and len(series) >= 36:
        spec = psd(series)
        result["psd"] = spec
        if "psd" in commands:
            _write_table(out / "psd.csv", ["freq_hz", "psd"], zip(spec.f, spec.S), hdr)
    if "slope" in commands:
        slopes = {}
        for key, band in (("allan", band_allan), ("psd", band_psd)):
            if key in result:
                try:
                    fit = slope_fit(result[key], band)
                    slopes[key] = {"exponent": fit.exponent, "stderr": fit.stderr, "n_points": fit.n_points}
                except WvaError as exc:
                    slopes[key] = {"error": str(exc)}
        result["slopes"] = slopes
        write_json(out / "slope.json", slopes)
    return result
