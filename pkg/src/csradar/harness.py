"""Configuration, seeded Monte-Carlo experiment runner, report emission.

Scenario kinds and what they sweep:

* ``sir_sweep``          -- SIR vs jammer power, per design family.
* ``ltilde_sweep``       -- SIR vs observation-window slack (max delay bins).
* ``coherence``          -- coherence / condition-number statistics per seed.
* ``sir_noise_sweep``    -- SIR vs thermal noise power, no jammer.
* ``roc``                -- detection flags over a hard-threshold sweep,
                            CS recovery per family plus an uncompressed
                            matched-filter baseline.
* ``lambda_accuracy``    -- detection accuracy vs the design trade-off
                            weight, over the threshold sweep.

Configs are flat INI files with typed sections (grammar in the README).
Every run is a pure function of (config, master seed): per-trial randomness
comes from derived substreams, aggregation sorts before writing, and floats
are serialized with ``repr``, so re-runs are byte-identical.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .design import (
    DesignContext,
    DesignConvergenceError,
    MeasurementDesign,
    build_phi2,
    grmm,
    structured_phi1,
)
from .metrics import coherence_summary, theoretical_sir
from .numerics import SPEED_OF_LIGHT, RandomSource
from .recovery import (
    RecoveryConvergenceError,
    dantzig_select,
    default_epsilon,
    default_threshold_sweep,
    matched_filter_estimate,
    threshold_detect,
)
from .scene import (
    ArrayGeometry,
    NoiseModel,
    Scene,
    SearchGrid,
    Target,
    WaveformSet,
    generate_waveforms,
    place_nodes_uniform_disk,
)
from .signal import (
    grid_delay_bins,
    stacked_sensing_matrix,
    synthesize_received,
)

RECORD_HEADER = ("scenario", "trial", "seed", "param", "metric", "value")

SCENARIO_KINDS = ("sir_sweep", "ltilde_sweep", "coherence", "sir_noise_sweep", "roc", "lambda_accuracy")

_SWEEP_PARAMETER = {
    "sir_sweep": "jammer_power",
    "ltilde_sweep": "max_delay_bins",
    "sir_noise_sweep": "thermal_variance",
    "lambda_accuracy": "lam",
}

DESIGN_FAMILIES = ("grmm", "phi2", "phi1_structured")

WAVEFORM_KINDS = ("rectangular", "hadamard", "qpsk")


class ConfigError(ValueError):
    """Configuration parse or validation failure, naming the offending key."""


class RunAbortedError(RuntimeError):
    """More than 10% of trials failed; carries the partial summary."""

    def __init__(self, message, summary=None):
        super().__init__(message)
        self.summary = summary


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: str
    # geometry
    num_tx: int
    num_rx: int
    disk_radius: float
    carrier: float
    wave_speed: float
    pulse_duration: float
    pri: float
    samples_per_pulse: int
    max_delay_bins: int
    pulses: int
    measurements: int
    # grid
    angle_start_deg: float
    angle_step_deg: float
    angle_count: int
    range_start: float
    range_step: float
    range_count: int
    speeds: tuple
    # design
    families: tuple
    waveform: str
    lam: float
    csm_variant: str
    m_tilde: int
    # noise
    thermal_variance: float
    jammer_power: float
    jammer_angle_deg: float
    # sweep
    sweep_parameter: str
    sweep_values: tuple
    # run
    trials: int
    master_seed: int
    output_dir: str
    targets_kind: str
    random_targets: int
    fixed_targets: tuple
    thresholds: tuple

    def grid(self, max_delay_bins: int = None) -> SearchGrid:
        angles = np.deg2rad(self.angle_start_deg + self.angle_step_deg * np.arange(self.angle_count))
        ranges = self.range_start + self.range_step * np.arange(self.range_count)
        return SearchGrid(angles=angles, speeds=np.asarray(self.speeds), ranges=ranges)

    def geometry(self, rng: RandomSource, max_delay_bins: int = None) -> ArrayGeometry:
        """Draw node positions and assemble the geometry for one trial."""
        return ArrayGeometry(
            tx_nodes=place_nodes_uniform_disk(self.num_tx, self.disk_radius, rng.derive("tx")),
            rx_nodes=place_nodes_uniform_disk(self.num_rx, self.disk_radius, rng.derive("rx")),
            disk_radius=self.disk_radius,
            carrier=self.carrier,
            wave_speed=self.wave_speed,
            pulse_duration=self.pulse_duration,
            pri=self.pri,
            samples_per_pulse=self.samples_per_pulse,
            max_delay_bins=self.max_delay_bins if max_delay_bins is None else max_delay_bins,
            pulses=self.pulses,
        )

    def waveforms(self, rng: RandomSource) -> WaveformSet:
        return generate_waveforms(self.waveform, self.samples_per_pulse, self.num_tx, rng.derive("waveform"))

    def serialize(self) -> str:
        """Canonical INI text; load(serialize(cfg)) == cfg."""
        out = io.StringIO()

        def section(title, pairs):
            out.write(f"[{title}]\n")
            for key, value in pairs:
                if value is None:
                    continue
                out.write(f"{key} = {value}\n")
            out.write("\n")

        def fmt(x):
            return repr(float(x))

        def fmt_list(xs):
            return ",".join(repr(float(x)) for x in xs)

        section("scenario", [("name", self.name), ("kind", self.kind)])
        section(
            "geometry",
            [
                ("num_tx", self.num_tx),
                ("num_rx", self.num_rx),
                ("disk_radius", fmt(self.disk_radius)),
                ("carrier", fmt(self.carrier)),
                ("wave_speed", fmt(self.wave_speed)),
                ("pulse_duration", fmt(self.pulse_duration)),
                ("pri", fmt(self.pri)),
                ("samples_per_pulse", self.samples_per_pulse),
                ("max_delay_bins", self.max_delay_bins),
                ("pulses", self.pulses),
                ("measurements", self.measurements),
            ],
        )
        section(
            "grid",
            [
                ("angle_start_deg", fmt(self.angle_start_deg)),
                ("angle_step_deg", fmt(self.angle_step_deg)),
                ("angle_count", self.angle_count),
                ("range_start", fmt(self.range_start)),
                ("range_step", fmt(self.range_step)),
                ("range_count", self.range_count),
                ("speeds", fmt_list(self.speeds)),
            ],
        )
        section(
            "design",
            [
                ("families", ",".join(self.families)),
                ("waveform", self.waveform),
                ("lam", fmt(self.lam)),
                ("csm_variant", self.csm_variant),
                ("m_tilde", self.m_tilde),
            ],
        )
        section(
            "noise",
            [
                ("thermal_variance", fmt(self.thermal_variance)),
                ("jammer_power", fmt(self.jammer_power)),
                ("jammer_angle_deg", fmt(self.jammer_angle_deg)),
            ],
        )
        if self.sweep_parameter:
            section("sweep", [("parameter", self.sweep_parameter), ("values", fmt_list(self.sweep_values))])
        targets = (
            f"random:{self.random_targets}"
            if self.targets_kind == "random"
            else ",".join(f"{ia}:{ic}:{beta}" for ia, ic, beta in self.fixed_targets)
        )
        section(
            "run",
            [
                ("trials", self.trials),
                ("master_seed", self.master_seed),
                ("output_dir", self.output_dir),
                ("targets", targets),
                ("thresholds", fmt_list(self.thresholds) if self.thresholds else None),
            ],
        )
        return out.getvalue()

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


_SCHEMA = {
    "scenario": {"name": str, "kind": str},
    "geometry": {
        "num_tx": int,
        "num_rx": int,
        "disk_radius": float,
        "carrier": float,
        "wave_speed": float,
        "pulse_duration": float,
        "pri": float,
        "samples_per_pulse": int,
        "max_delay_bins": int,
        "pulses": int,
        "measurements": int,
    },
    "grid": {
        "angle_start_deg": float,
        "angle_step_deg": float,
        "angle_count": int,
        "range_start": float,
        "range_step": float,
        "range_count": int,
        "speeds": "float_list",
    },
    "design": {
        "families": "str_list",
        "waveform": str,
        "lam": float,
        "csm_variant": str,
        "m_tilde": int,
    },
    "noise": {"thermal_variance": float, "jammer_power": float, "jammer_angle_deg": float},
    "sweep": {"parameter": str, "values": "float_list"},
    "run": {
        "trials": int,
        "master_seed": int,
        "output_dir": str,
        "targets": str,
        "thresholds": "float_list",
    },
}

_DEFAULTS = {
    ("geometry", "wave_speed"): SPEED_OF_LIGHT,
    ("geometry", "pulses"): 1,
    ("grid", "speeds"): (0.0,),
    ("design", "lam"): 0.6,
    ("design", "csm_variant"): "sum",
    ("design", "m_tilde"): 0,  # 0 means "use measurements"
    ("noise", "thermal_variance"): 1.0,
    ("noise", "jammer_power"): 0.0,
    ("noise", "jammer_angle_deg"): 7.0,
    ("run", "output_dir"): "out",
    ("run", "thresholds"): (),
}


def _parse_value(section, key, raw, kind):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw.strip()
        if kind == "float_list":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if kind == "str_list":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
    except ValueError as err:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({err})") from None
    raise AssertionError(f"unknown schema kind {kind!r}")


def _parse_targets(raw):
    raw = raw.strip()
    if raw.startswith("random:"):
        try:
            count = int(raw.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"[run] targets: cannot parse {raw!r}") from None
        if count < 1:
            raise ConfigError("[run] targets: random target count must be >= 1")
        return "random", count, ()
    fixed = []
    for item in raw.split(","):
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise ConfigError(f"[run] targets: expected 'ia:ic:beta', got {item.strip()!r}")
        try:
            fixed.append((int(parts[0]), int(parts[1]), complex(parts[2])))
        except ValueError as err:
            raise ConfigError(f"[run] targets: cannot parse {item.strip()!r} ({err})") from None
    if not fixed:
        raise ConfigError("[run] targets: empty target list")
    return "fixed", 0, tuple(fixed)


def load_config(path_or_text) -> ExperimentConfig:
    """Parse and validate an experiment config (INI path or literal text)."""
    parser = configparser.ConfigParser(interpolation=None)
    text = None
    try:
        if isinstance(path_or_text, str) and "\n" in path_or_text:
            text = path_or_text
        else:
            with open(path_or_text, "r") as fh:
                text = fh.read()
        parser.read_string(text)
    except (OSError, configparser.Error) as err:
        raise ConfigError(f"cannot read config: {err}") from None

    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
            values[(section, key)] = _parse_value(section, key, raw, _SCHEMA[section][key])
    for (section, key), default in _DEFAULTS.items():
        values.setdefault((section, key), default)

    def need(section, key):
        if (section, key) not in values:
            raise ConfigError(f"missing required key [{section}] {key}")
        return values[(section, key)]

    targets_kind, random_targets, fixed_targets = _parse_targets(need("run", "targets"))
    sweep_parameter = values.get(("sweep", "parameter"), "")
    sweep_values = values.get(("sweep", "values"), ())

    config = ExperimentConfig(
        name=need("scenario", "name"),
        kind=need("scenario", "kind"),
        num_tx=need("geometry", "num_tx"),
        num_rx=need("geometry", "num_rx"),
        disk_radius=need("geometry", "disk_radius"),
        carrier=need("geometry", "carrier"),
        wave_speed=values[("geometry", "wave_speed")],
        pulse_duration=need("geometry", "pulse_duration"),
        pri=need("geometry", "pri"),
        samples_per_pulse=need("geometry", "samples_per_pulse"),
        max_delay_bins=need("geometry", "max_delay_bins"),
        pulses=values[("geometry", "pulses")],
        measurements=need("geometry", "measurements"),
        angle_start_deg=need("grid", "angle_start_deg"),
        angle_step_deg=need("grid", "angle_step_deg"),
        angle_count=need("grid", "angle_count"),
        range_start=need("grid", "range_start"),
        range_step=need("grid", "range_step"),
        range_count=need("grid", "range_count"),
        speeds=values[("grid", "speeds")],
        families=need("design", "families"),
        waveform=need("design", "waveform"),
        lam=values[("design", "lam")],
        csm_variant=values[("design", "csm_variant")],
        m_tilde=values[("design", "m_tilde")],
        thermal_variance=values[("noise", "thermal_variance")],
        jammer_power=values[("noise", "jammer_power")],
        jammer_angle_deg=values[("noise", "jammer_angle_deg")],
        sweep_parameter=sweep_parameter,
        sweep_values=sweep_values,
        trials=need("run", "trials"),
        master_seed=need("run", "master_seed"),
        output_dir=values[("run", "output_dir")],
        targets_kind=targets_kind,
        random_targets=random_targets,
        fixed_targets=fixed_targets,
        thresholds=values[("run", "thresholds")],
    )
    validate_config(config)
    return config


def validate_config(config: ExperimentConfig) -> None:
    def positive(name, value):
        if value <= 0:
            raise ConfigError(f"{name} must be positive, got {value!r}")

    if config.kind not in SCENARIO_KINDS:
        raise ConfigError(f"kind must be one of {SCENARIO_KINDS}, got {config.kind!r}")
    for name in (
        "num_tx",
        "num_rx",
        "disk_radius",
        "carrier",
        "wave_speed",
        "pulse_duration",
        "pri",
        "samples_per_pulse",
        "measurements",
        "angle_count",
        "range_count",
        "trials",
        "pulses",
    ):
        positive(name, getattr(config, name))
    if config.angle_step_deg <= 0 or config.range_step <= 0:
        raise ConfigError("grid steps must be positive")
    if not 0 <= config.max_delay_bins <= 2 * config.samples_per_pulse - 1:
        raise ConfigError("max_delay_bins must lie in [0, 2 * samples_per_pulse - 1]")
    if config.lam < 0:
        raise ConfigError("lam must be >= 0")
    if config.thermal_variance < 0 or config.jammer_power < 0:
        raise ConfigError("noise powers must be >= 0")
    if config.m_tilde < 0:
        raise ConfigError("m_tilde must be >= 0")
    if config.waveform not in WAVEFORM_KINDS:
        raise ConfigError(f"waveform must be one of {WAVEFORM_KINDS}, got {config.waveform!r}")
    if config.waveform == "hadamard":
        length = config.samples_per_pulse
        if length & (length - 1) != 0 or config.num_tx > length:
            raise ConfigError("hadamard waveforms need samples_per_pulse a power of two and num_tx <= it")
    if not config.families:
        raise ConfigError("families must list at least one design family")
    for family in config.families:
        if family not in DESIGN_FAMILIES:
            raise ConfigError(f"families: unknown design family {family!r}")
    expected_sweep = _SWEEP_PARAMETER.get(config.kind)
    if expected_sweep:
        if config.sweep_parameter != expected_sweep:
            raise ConfigError(f"kind {config.kind!r} requires [sweep] parameter = {expected_sweep}")
        if not config.sweep_values:
            raise ConfigError("[sweep] values must be nonempty")
        if config.kind == "ltilde_sweep":
            for v in config.sweep_values:
                if v != int(v) or not 0 <= int(v) <= 2 * config.samples_per_pulse - 1:
                    raise ConfigError(f"[sweep] values: bad max_delay_bins value {v!r}")
    elif config.sweep_parameter:
        raise ConfigError(f"kind {config.kind!r} does not take a [sweep] section")

    # grid invariant: every range must map to a delay bin inside the window
    spacing = config.wave_speed * config.pulse_duration / config.samples_per_pulse
    ranges = config.range_start + config.range_step * np.arange(config.range_count)
    bins = np.floor(2.0 * ranges / spacing).astype(int)
    max_bins = config.max_delay_bins
    if config.kind == "ltilde_sweep" and config.sweep_values:
        max_bins = int(min(config.sweep_values))
    if bins.min() < 0 or bins.max() > max_bins:
        raise ConfigError(
            f"grid ranges map to delay bins [{bins.min()}, {bins.max()}], violating the "
            f"grid invariant 0 <= bin <= {max_bins}"
        )
    for ia, ic, _ in config.fixed_targets:
        if not (0 <= ia < config.angle_count and 0 <= ic < config.range_count):
            raise ConfigError(f"target index ({ia}, {ic}) is off the grid")
    if config.targets_kind == "random" and config.random_targets > config.angle_count * config.range_count:
        raise ConfigError("more random targets than grid points")


@dataclass(frozen=True)
class Record:
    scenario: str
    trial: int
    seed: int
    param: str
    metric: str
    value: float


@dataclass
class RunSummary:
    config: ExperimentConfig
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    histograms: dict = field(default_factory=dict)
    roc_flags: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.config.content_hash()

    @property
    def code_version(self) -> str:
        return __version__

    def sorted_records(self) -> list:
        def key(rec):
            try:
                param = (0, float(rec.param))
            except ValueError:
                param = (1, rec.param)
            return (rec.scenario, rec.metric, param, rec.trial)

        return sorted(self.records, key=key)


def _format_param(value) -> str:
    if isinstance(value, str):
        return value
    f = float(value)
    return repr(int(f)) if f == int(f) else repr(f)


def master_source(config: ExperimentConfig) -> RandomSource:
    return RandomSource(config.master_seed)


def trial_source(config: ExperimentConfig, sweep_index: int, trial: int) -> RandomSource:
    return master_source(config).derive("sweep", sweep_index, "trial", trial)


def _draw_targets(config: ExperimentConfig, grid: SearchGrid, geometry: ArrayGeometry, rng: RandomSource):
    """Target list for one trial; random targets land on distinct grid points."""
    if config.targets_kind == "fixed":
        specs = [(ia, ic, beta) for ia, ic, beta in config.fixed_targets]
    else:
        gen = rng.derive("targets").generator()
        flat = gen.choice(grid.num_angles * grid.num_ranges, size=config.random_targets, replace=False)
        specs = [(int(i % grid.num_angles), int(i // grid.num_angles), 1.0 + 0.0j) for i in flat]
    noise = NoiseModel(
        thermal_variance=config.thermal_variance,
        jammer_power=config.jammer_power,
        jammer_angle=math.radians(config.jammer_angle_deg),
    )
    return Scene.from_grid_indices(grid, specs, noise=noise), specs


def _build_design(config, family, geometry, grid, waveforms, rng, lam=None):
    """One measurement design per family; phi1_structured optimizes over a phi2 inner."""
    m = config.measurements
    if family == "grmm":
        return grmm(m, geometry.window_length, rng.derive("design", family))
    if family == "phi2":
        return build_phi2(waveforms, geometry.max_delay_bins, m, rng.derive("design", family))
    if family == "phi1_structured":
        m_tilde = config.m_tilde or m
        inner = build_phi2(waveforms, geometry.max_delay_bins, m_tilde, rng.derive("design", family))
        context = DesignContext.build(geometry, grid, waveforms)
        try:
            _, design = structured_phi1(
                context, inner, config.lam if lam is None else lam, config.csm_variant
            )
        except DesignConvergenceError as err:
            # budget-capped solve: the attached best iterate is feasible, PSD
            # and monotonically improved, which is what the scenarios need
            design = err.design
        return design
    raise ConfigError(f"unknown design family {family!r}")


def _signal_and_interference(scene, geometry, waveforms, phi, rng):
    """Per-trial empirical powers: noiseless signal pass, one interference draw."""
    silent = Scene(targets=scene.targets, noise=NoiseModel(0.0, 0.0, 0.0))
    noise_only = Scene(targets=(), noise=scene.noise)
    p_sig = 0.0
    p_int = 0.0
    for node in range(geometry.num_rx):
        for pulse in range(geometry.pulses):
            r = synthesize_received(silent, geometry, waveforms, phi, rng, node, pulse)
            p_sig += float(np.vdot(r, r).real)
            rn = synthesize_received(noise_only, geometry, waveforms, phi, rng.derive("noise"), node, pulse)
            p_int += float(np.vdot(rn, rn).real)
    return p_sig, p_int


_THEORY_KIND = {"grmm": "conventional", "phi2": None}  # None: use waveform kind


def _sir_trial(config, sweep_index, param_value, trial, max_delay_override=None):
    """One SIR trial: draw geometry/waveforms/target/designs, measure powers."""
    src = trial_source(config, sweep_index, trial)
    max_delay = config.max_delay_bins if max_delay_override is None else int(max_delay_override)
    geometry = config.geometry(src, max_delay_bins=max_delay)
    waveforms = config.waveforms(src)
    gen = src.derive("target").generator()
    angle = math.radians(
        config.angle_start_deg + config.angle_step_deg * gen.integers(0, config.angle_count)
    )
    tau = int(gen.integers(0, max_delay + 1))
    target_range = tau * geometry.range_bin
    thermal = config.thermal_variance
    jammer = config.jammer_power
    if config.kind == "sir_sweep":
        jammer = float(param_value)
    elif config.kind == "sir_noise_sweep":
        thermal = float(param_value)
        jammer = 0.0
    scene = Scene(
        targets=(Target(angle=angle, range_m=target_range, speed=0.0, reflectivity=1.0 + 0.0j),),
        noise=NoiseModel(thermal, jammer, math.radians(config.jammer_angle_deg)),
    )
    sigma_eff = thermal + jammer
    rows = []
    for family in config.families:
        if family == "phi1_structured":
            # the structured design needs a grid context; SIR sweeps compare
            # grmm/phi2 (detection scenarios exercise phi1)
            raise ConfigError("phi1_structured is not supported in SIR sweep scenarios")
        design = _build_design(config, family, geometry, None, waveforms, src)
        p_sig, p_int = _signal_and_interference(
            scene, geometry, waveforms, design.phi, src.derive("powers", family)
        )
        trace = float(np.linalg.norm(design.phi, "fro") ** 2)
        rows.append((f"signal_power:{family}", p_sig))
        rows.append((f"interference_power:{family}", p_int))
        rows.append((f"interference_trace:{family}", geometry.num_rx * geometry.pulses * sigma_eff * trace))
        rows.append((f"sir:{family}", p_sig / p_int if p_int > 0 else np.inf))
        kind = _THEORY_KIND.get(family) or config.waveform
        theory = theoretical_sir(
            kind,
            config.measurements,
            config.num_tx,
            config.samples_per_pulse,
            max_delay,
            [1.0 + 0.0j],
            [tau],
            sigma_eff,
        )
        rows.append((f"sir_theory:{family}", theory))
    return rows


def _coherence_trial(config, trial):
    src = trial_source(config, 0, trial)
    geometry = config.geometry(src)
    waveforms = config.waveforms(src)
    grid = config.grid()
    rows = []
    hists = {}
    for family in config.families:
        design = _build_design(config, family, geometry, grid, waveforms, src)
        theta = stacked_sensing_matrix(geometry, grid, waveforms, design.phi)
        report = coherence_summary(theta)
        for metric, value in report.metric_rows():
            rows.append((f"{metric}:{family}", value))
        if family.startswith("phi1"):
            rows.append((f"phi1_rows:{family}", float(design.rows)))
        hists[family] = report.histogram_counts
    return rows, hists


def _detection_trial(config, sweep_index, trial, lam_value=None):
    """One detection trial: per-family CS recovery plus the MFM baseline."""
    src = trial_source(config, sweep_index, trial)
    geometry = config.geometry(src)
    waveforms = config.waveforms(src)
    grid = config.grid()
    scene, specs = _draw_targets(config, grid, geometry, src)
    true_flat = sorted(grid.flatten(ia, 0, ic) for ia, ic, _ in specs)
    thresholds = config.thresholds or tuple(default_threshold_sweep())
    sigma_eff = math.sqrt(config.thermal_variance + config.jammer_power)
    rows = []
    flags = {}

    def stacked_observation(phi):
        obs = []
        for node in range(geometry.num_rx):
            for pulse in range(geometry.pulses):
                obs.append(synthesize_received(scene, geometry, waveforms, phi, src.derive("rx"), node, pulse))
        return np.concatenate(obs)

    families = config.families if lam_value is None else ("phi1_structured",)
    for family in families:
        design = _build_design(config, family, geometry, grid, waveforms, src, lam=lam_value)
        theta = stacked_sensing_matrix(geometry, grid, waveforms, design.phi)
        y = stacked_observation(design.phi)
        epsilon = default_epsilon(theta, sigma_eff)
        try:
            estimate = dantzig_select(theta, y, epsilon)
            rows.append((f"solver_converged:{family}", 1.0))
        except RecoveryConvergenceError as err:
            estimate = err.estimate
            rows.append((f"solver_converged:{family}", 0.0))
        rows.append((f"solver_iterations:{family}", float(estimate.iterations)))
        label = family if lam_value is None else f"{family}@lam={_format_param(lam_value)}"
        for it, thr in enumerate(thresholds):
            outcome = threshold_detect(estimate.s_hat, thr, mode="relative")
            found, false = outcome.flags(true_flat)
            flags[(label, float(thr))] = (found, false)
            rows.append((f"all_found:t{it:02d}:{label}", float(found)))
            rows.append((f"any_false:t{it:02d}:{label}", float(false)))
            if lam_value is not None:
                rows.append((f"accuracy:t{it:02d}:{label}", float(found and not false)))

    if lam_value is None:
        identity = np.eye(geometry.window_length, dtype=np.complex128)
        templates = stacked_sensing_matrix(geometry, grid, waveforms, identity)
        y_raw = stacked_observation(identity)
        statistic = matched_filter_estimate(templates, y_raw)
        for it, thr in enumerate(thresholds):
            outcome = threshold_detect(statistic, thr, mode="relative")
            found, false = outcome.flags(true_flat)
            flags[("mfm", float(thr))] = (found, false)
            rows.append((f"all_found:t{it:02d}:mfm", float(found)))
            rows.append((f"any_false:t{it:02d}:mfm", float(false)))
    return rows, flags


def run_monte_carlo(config: ExperimentConfig, threads: int = 1) -> RunSummary:
    """Execute a scenario config; deterministic given (config, master seed)."""
    summary = RunSummary(config=config)
    jobs = []
    if config.kind in ("sir_sweep", "sir_noise_sweep"):
        for si, value in enumerate(config.sweep_values):
            for trial in range(config.trials):
                jobs.append((si, value, trial, None))
    elif config.kind == "ltilde_sweep":
        for si, value in enumerate(config.sweep_values):
            for trial in range(config.trials):
                jobs.append((si, value, trial, int(value)))
    elif config.kind == "lambda_accuracy":
        for si, value in enumerate(config.sweep_values):
            for trial in range(config.trials):
                jobs.append((si, value, trial, None))
    else:  # coherence, roc
        for trial in range(config.trials):
            jobs.append((0, None, trial, None))

    def execute(job):
        si, value, trial, override = job
        seed = trial_source(config, si, trial).fingerprint()
        param = _format_param(value) if value is not None else "-"
        try:
            if config.kind in ("sir_sweep", "sir_noise_sweep", "ltilde_sweep"):
                rows = _sir_trial(config, si, value, trial, max_delay_override=override)
                return job, seed, param, rows, None, None, None
            if config.kind == "coherence":
                rows, hists = _coherence_trial(config, trial)
                return job, seed, param, rows, hists, None, None
            if config.kind == "roc":
                rows, flags = _detection_trial(config, si, trial)
                return job, seed, param, rows, None, flags, None
            if config.kind == "lambda_accuracy":
                rows, flags = _detection_trial(config, si, trial, lam_value=float(value))
                return job, seed, param, rows, None, flags, None
            raise ConfigError(f"unhandled scenario kind {config.kind!r}")
        except ConfigError:
            raise
        except Exception as err:  # recorded per trial; run continues
            return job, seed, param, None, None, None, f"{type(err).__name__}: {err}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(execute, jobs))
    else:
        results = [execute(job) for job in jobs]

    for (si, value, trial, _), seed, param, rows, hists, flags, error in results:
        if error is not None:
            summary.failures.append((trial, param, error))
            continue
        for metric, metric_value in rows:
            summary.records.append(
                Record(config.name, trial, seed, param, metric, float(metric_value))
            )
        if hists:
            for family, counts in hists.items():
                key = ("pairwise", family)
                if key in summary.histograms:
                    summary.histograms[key] = summary.histograms[key] + counts
                else:
                    summary.histograms[key] = counts.copy()
        if flags:
            for (label, thr), flag in flags.items():
                summary.roc_flags.setdefault((label, thr), []).append((trial, flag))

    if len(summary.failures) > 0.1 * len(jobs):
        raise RunAbortedError(
            f"{len(summary.failures)} of {len(jobs)} trials failed", summary=summary
        )
    return summary


def load_records(path) -> RunSummary:
    """Reload a records.csv for re-aggregation (summary/series only)."""
    records = []
    with open(path, "r") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != RECORD_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            scenario, trial, seed, param, metric, value = line.rstrip("\n").split(",")
            records.append(Record(scenario, int(trial), int(seed), param, metric, float(value)))
    return RunSummary(config=None, records=records)


def emit_report(summary: RunSummary, out_dir, formats=("csv", "txt", "series")) -> list:
    """Write records/summary/series files; re-emission is byte-identical."""
    import os

    if not summary.records:
        raise ValueError("empty summary: nothing to emit")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def sanitize(name):
        return "".join(c if c.isalnum() or c in "-._" else "_" for c in name)

    if "csv" in formats:
        path = os.path.join(out_dir, "records.csv")
        with open(path, "w", newline="") as fh:
            fh.write(",".join(RECORD_HEADER) + "\n")
            for rec in summary.sorted_records():
                fh.write(
                    f"{rec.scenario},{rec.trial},{rec.seed},{rec.param},{rec.metric},{repr(rec.value)}\n"
                )
        written.append(path)

    groups = {}
    for rec in summary.sorted_records():
        groups.setdefault((rec.scenario, rec.param, rec.metric), []).append(rec.value)

    if "txt" in formats:
        path = os.path.join(out_dir, "summary.txt")
        scenario_name = summary.config.name if summary.config is not None else summary.records[0].scenario
        config_hash = summary.config_hash if summary.config is not None else "(reaggregated)"
        with open(path, "w") as fh:
            fh.write(f"scenario: {scenario_name}\n")
            fh.write(f"config_hash: {config_hash}\n")
            fh.write(f"code_version: {summary.code_version}\n")
            fh.write(f"records: {len(summary.records)}  failures: {len(summary.failures)}\n\n")
            for (scenario, param, metric), values in sorted(groups.items()):
                arr = np.asarray(values)
                mean = arr.mean()
                half = 1.96 * arr.std(ddof=1) / math.sqrt(arr.size) if arr.size > 1 else 0.0
                fh.write(
                    f"{scenario} param={param} {metric}: mean={repr(float(mean))} "
                    f"ci95=+/-{repr(float(half))} n={arr.size}\n"
                )
        written.append(path)

    if "series" in formats:
        by_metric = {}
        for (scenario, param, metric), values in groups.items():
            by_metric.setdefault((scenario, metric), []).append((param, float(np.mean(values))))
        for (scenario, metric), pairs in sorted(by_metric.items()):
            path = os.path.join(out_dir, f"{sanitize(scenario)}__{sanitize(metric)}.csv")
            with open(path, "w", newline="") as fh:
                fh.write("param,mean\n")
                def param_key(p):
                    try:
                        return (0, float(p[0]))
                    except ValueError:
                        return (1, p[0])
                for param, mean in sorted(pairs, key=param_key):
                    fh.write(f"{param},{repr(mean)}\n")
            written.append(path)
        scenario_name = summary.config.name if summary.config is not None else summary.records[0].scenario
        for (tag, family), counts in sorted(summary.histograms.items()):
            path = os.path.join(out_dir, f"{sanitize(scenario_name)}__hist_{tag}_{sanitize(family)}.csv")
            edges = np.linspace(0.0, 1.0, counts.size + 1)
            with open(path, "w", newline="") as fh:
                fh.write("bin_lo,count\n")
                for lo, c in zip(edges[:-1], counts):
                    fh.write(f"{repr(float(lo))},{int(c)}\n")
            written.append(path)
        for label in sorted({label for label, _ in summary.roc_flags}):
            flag_map = {
                thr: [f for _, f in sorted(v)]
                for (lab, thr), v in summary.roc_flags.items()
                if lab == label
            }
            from .recovery import roc_curve

            points = roc_curve(flag_map)
            path = os.path.join(out_dir, f"{sanitize(scenario_name)}__roc_{sanitize(label)}.csv")
            with open(path, "w", newline="") as fh:
                fh.write("pfa,pd,threshold\n")
                for p in points:
                    fh.write(f"{repr(p.pfa)},{repr(p.pd)},{repr(p.threshold)}\n")
            written.append(path)

    return written
