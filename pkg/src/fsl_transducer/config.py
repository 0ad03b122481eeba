"""Experiment configuration: schema, validation and echo.

Configuration files are YAML in laboratory units: couplings as ``g/2pi`` in MHz,
decay rates as ``rate/2pi`` in kHz, times in us. :class:`ExperimentConfig` keeps
those lab values as its canonical fields (so an echoed config normalizes back to
the identical object) and exposes engine values in rad/us as properties.

Schema (every key optional; defaults reproduce the N_m = 5 pumping run)::

    scenario: pump              # pump | spectrum | winding | scan | disorder | wigner
    model: fsl                  # fsl | ssh
    n_m: 5                      # initial MW photon number / chain excitation number
    input_state:
      kind: fock                # fock | coherent | squeezed
      n: 5                      # fock; defaults to n_m
      alpha_re: 1.0             # coherent amplitude
      alpha_im: 0.0
      r: 0.7                    # squeezed magnitude
      theta: 0.0                # squeezed angle (rad)
    g_over_2pi_mhz: 0.282
    T_us: 8.2
    decay: true                 # false -> closed system
    gamma0_over_2pi_khz: 3.6
    kappa_m_over_2pi_khz: 2.0
    kappa_o_over_2pi_khz: 3.4
    grid_points: 501
    rtol: 1.0e-9
    atol: 1.0e-12
    seed: 12345
    workers: 1
    spectrum: {n_times: 51}
    scan: {n_list: [1, ..., 10], gT_min: 2.0, gT_max: 40.0, gT_step: 0.25, threshold: 0.99}
    winding:
      mode: ratio               # ratio (winding vs G_m/G_o) | pump (winding during pumping)
      n_list: [2, ..., 8]
      ratio_min: 0.1
      ratio_max: 10.0
      n_ratios: 15
      tau_g: 200.0              # averaging time in units of 1/g
      initial_even_site: null   # null -> middle even site
      eta_m: 0.1                # pump mode only
      eta_o: 0.1
      samples: 101
      probe_fractions: [0.0, 0.25, 0.5, 0.75, 1.0]
    disorder:
      eta_m_grid: [0.0, 0.05, 0.1, 0.15, 0.2]
      eta_o_grid: [0.0, 0.05, 0.1, 0.15, 0.2]
      samples: 1001
    wigner: {points: 121}
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dynamics import DecayRates
from .hamiltonians import ChainKind
from .states import Coherent, Fock, InputStateSpec, SqueezedVacuum

__all__ = [
    "SCENARIOS",
    "ConfigError",
    "ScanSpec",
    "WindingSpec",
    "DisorderSpec",
    "ExperimentConfig",
    "validate_config",
    "config_to_dict",
    "echo_config",
    "config_hash",
]

SCENARIOS = ("pump", "spectrum", "winding", "scan", "disorder", "wigner")


class ConfigError(ValueError):
    """All problems found in a configuration, reported together."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class ScanSpec:
    n_list: tuple[int, ...] = tuple(range(1, 11))
    gT_min: float = 2.0
    gT_max: float = 40.0
    gT_step: float = 0.25
    threshold: float = 0.99


@dataclass(frozen=True)
class WindingSpec:
    mode: str = "ratio"
    n_list: tuple[int, ...] = tuple(range(2, 9))
    ratio_min: float = 0.1
    ratio_max: float = 10.0
    n_ratios: int = 15
    tau_g: float = 200.0
    initial_even_site: int | None = None
    eta_m: float = 0.1
    eta_o: float = 0.1
    samples: int = 101
    probe_fractions: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class DisorderSpec:
    eta_m_grid: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2)
    eta_o_grid: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2)
    samples: int = 1001


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "pump"
    model: str = "fsl"
    n_m: int = 5
    input_state: tuple[tuple[str, Any], ...] = (("kind", "fock"),)
    g_over_2pi_mhz: float = 0.282
    T_us: float = 8.2
    decay: bool = True
    gamma0_over_2pi_khz: float = 3.6
    kappa_m_over_2pi_khz: float = 2.0
    kappa_o_over_2pi_khz: float = 3.4
    grid_points: int = 501
    rtol: float = 1e-9
    atol: float = 1e-12
    seed: int = 12345
    workers: int = 1
    spectrum_times: int = 51
    scan: ScanSpec = field(default_factory=ScanSpec)
    winding: WindingSpec = field(default_factory=WindingSpec)
    disorder: DisorderSpec = field(default_factory=DisorderSpec)
    wigner_points: int = 121

    @property
    def g(self) -> float:
        """Coupling scale in rad/us."""
        return 2 * math.pi * self.g_over_2pi_mhz

    @property
    def T(self) -> float:
        return self.T_us

    @property
    def kind(self) -> ChainKind:
        return ChainKind(self.model)

    @property
    def rates(self) -> DecayRates:
        if not self.decay:
            return DecayRates()
        return DecayRates.from_khz(
            self.gamma0_over_2pi_khz, self.kappa_m_over_2pi_khz, self.kappa_o_over_2pi_khz
        )

    @property
    def input_spec(self) -> InputStateSpec:
        d = dict(self.input_state)
        kind = d.get("kind", "fock")
        if kind == "fock":
            return Fock(int(d.get("n", self.n_m)))
        if kind == "coherent":
            return Coherent(complex(d.get("alpha_re", 1.0), d.get("alpha_im", 0.0)))
        return SqueezedVacuum(float(d.get("r", 0.7)), float(d.get("theta", 0.0)))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


class _Collector:
    def __init__(self):
        self.errors: list[str] = []

    def take(self, src: dict, key: str, default, conv, check=None, msg="", prefix=""):
        name = f"{prefix}{key}"
        if key not in src or src[key] is None and default is None:
            return default
        raw = src[key]
        try:
            val = conv(raw)
        except (TypeError, ValueError):
            self.errors.append(f"{name}: cannot interpret {raw!r}")
            return default
        if check is not None and not check(val):
            self.errors.append(f"{name}: {msg} (got {raw!r})")
            return default
        return val

    def unknown(self, src: dict, allowed, prefix=""):
        for k in src:
            if k not in allowed:
                self.errors.append(f"{prefix}{k}: unknown field")


def _num(x) -> float:
    if isinstance(x, bool):
        raise TypeError
    v = float(x)
    if not math.isfinite(v):
        raise ValueError
    return v


def _int(x) -> int:
    if isinstance(x, bool):
        raise TypeError
    if isinstance(x, float) and not x.is_integer():
        raise ValueError
    return int(x)


def _bool(x) -> bool:
    if not isinstance(x, bool):
        raise TypeError
    return x


def _int_tuple(x) -> tuple[int, ...]:
    if not isinstance(x, (list, tuple)) or not x:
        raise TypeError
    return tuple(_int(v) for v in x)


def _num_tuple(x) -> tuple[float, ...]:
    if not isinstance(x, (list, tuple)) or not x:
        raise TypeError
    return tuple(_num(v) for v in x)


def _section(c: _Collector, raw: dict, key: str) -> dict:
    sec = raw.get(key) or {}
    if not isinstance(sec, dict):
        c.errors.append(f"{key}: must be a mapping")
        return {}
    return sec


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _load(source) -> dict:
    if source is None:
        return {}
    if isinstance(source, dict):
        return dict(source)
    text = Path(source).read_text()
    data = yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(["top level of the config file must be a mapping"])
    return data


def validate_config(source=None) -> ExperimentConfig:
    """Normalize a config file path, a mapping or ``None`` (all defaults).

    Every invalid field is collected and raised together in :class:`ConfigError`.
    """
    try:
        raw = _load(source)
    except yaml.YAMLError as exc:
        raise ConfigError([f"config file does not parse: {exc}"]) from exc
    d = ExperimentConfig()
    c = _Collector()
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"spectrum_times", "wigner_points"}
    c.unknown(raw, top | {"spectrum", "wigner"})

    scenario = c.take(raw, "scenario", d.scenario, str, lambda v: v in SCENARIOS, f"must be one of {SCENARIOS}")
    model = c.take(raw, "model", d.model, lambda v: str(v).lower(), lambda v: v in ("fsl", "ssh"), "must be fsl or ssh")
    n_m = c.take(raw, "n_m", d.n_m, _int, lambda v: 1 <= v <= 40, "must be an integer in 1..40")

    ins = _section(c, raw, "input_state")
    c.unknown(ins, {"kind", "n", "alpha_re", "alpha_im", "r", "theta"}, "input_state.")
    kind = c.take(ins, "kind", "fock", str, lambda v: v in ("fock", "coherent", "squeezed"),
                  "must be fock, coherent or squeezed", "input_state.")
    state: dict[str, Any] = {"kind": kind}
    if kind == "fock":
        if "n" in ins:
            state["n"] = c.take(ins, "n", n_m, _int, lambda v: 0 <= v <= 40, "must be in 0..40", "input_state.")
    elif kind == "coherent":
        state["alpha_re"] = c.take(ins, "alpha_re", 1.0, _num, prefix="input_state.")
        state["alpha_im"] = c.take(ins, "alpha_im", 0.0, _num, prefix="input_state.")
    else:
        state["r"] = c.take(ins, "r", 0.7, _num, lambda v: 0 <= v <= 2, "must be in [0, 2]", "input_state.")
        state["theta"] = c.take(ins, "theta", 0.0, _num, prefix="input_state.")

    g = c.take(raw, "g_over_2pi_mhz", d.g_over_2pi_mhz, _num, _positive, "must be positive")
    T = c.take(raw, "T_us", d.T_us, _num, _positive, "must be positive")
    decay = c.take(raw, "decay", d.decay, _bool)
    g0 = c.take(raw, "gamma0_over_2pi_khz", d.gamma0_over_2pi_khz, _num, _nonneg, "must be nonnegative")
    km = c.take(raw, "kappa_m_over_2pi_khz", d.kappa_m_over_2pi_khz, _num, _nonneg, "must be nonnegative")
    ko = c.take(raw, "kappa_o_over_2pi_khz", d.kappa_o_over_2pi_khz, _num, _nonneg, "must be nonnegative")
    grid = c.take(raw, "grid_points", d.grid_points, _int, lambda v: v >= 2, "must be >= 2")
    rtol = c.take(raw, "rtol", d.rtol, _num, _positive, "must be positive")
    atol = c.take(raw, "atol", d.atol, _num, _positive, "must be positive")
    seed = c.take(raw, "seed", d.seed, _int, _nonneg, "must be a nonnegative integer")
    workers = c.take(raw, "workers", d.workers, _int, lambda v: v >= 1, "must be >= 1")

    spec_sec = _section(c, raw, "spectrum")
    c.unknown(spec_sec, {"n_times"}, "spectrum.")
    n_times = c.take(spec_sec, "n_times", d.spectrum_times, _int, lambda v: v >= 2, "must be >= 2", "spectrum.")

    ssec = _section(c, raw, "scan")
    ds = ScanSpec()
    c.unknown(ssec, {f.name for f in dataclasses.fields(ScanSpec)}, "scan.")
    scan = ScanSpec(
        n_list=c.take(ssec, "n_list", ds.n_list, _int_tuple, lambda v: all(1 <= x <= 40 for x in v), "entries in 1..40", "scan."),
        gT_min=c.take(ssec, "gT_min", ds.gT_min, _num, _positive, "must be positive", "scan."),
        gT_max=c.take(ssec, "gT_max", ds.gT_max, _num, _positive, "must be positive", "scan."),
        gT_step=c.take(ssec, "gT_step", ds.gT_step, _num, _positive, "must be positive", "scan."),
        threshold=c.take(ssec, "threshold", ds.threshold, _num, lambda v: 0 < v <= 1, "must be in (0, 1]", "scan."),
    )
    if scan.gT_max <= scan.gT_min + 2 * scan.gT_step:
        c.errors.append("scan.gT_max: must exceed gT_min by at least two steps")

    wsec = _section(c, raw, "winding")
    dw = WindingSpec()
    c.unknown(wsec, {f.name for f in dataclasses.fields(WindingSpec)}, "winding.")
    site = wsec.get("initial_even_site")
    if site is not None:
        site = c.take(wsec, "initial_even_site", None, _int, lambda v: v >= 2 and v % 2 == 0,
                      "must be an even site index >= 2", "winding.")
    eta_ok = (lambda v: 0 <= v <= 0.5, "must lie in [0, 0.5]")
    winding = WindingSpec(
        mode=c.take(wsec, "mode", dw.mode, str, lambda v: v in ("ratio", "pump"), "must be ratio or pump", "winding."),
        n_list=c.take(wsec, "n_list", dw.n_list, _int_tuple, lambda v: all(1 <= x <= 40 for x in v), "entries in 1..40", "winding."),
        ratio_min=c.take(wsec, "ratio_min", dw.ratio_min, _num, _positive, "must be positive", "winding."),
        ratio_max=c.take(wsec, "ratio_max", dw.ratio_max, _num, _positive, "must be positive", "winding."),
        n_ratios=c.take(wsec, "n_ratios", dw.n_ratios, _int, lambda v: v >= 1, "must be >= 1", "winding."),
        tau_g=c.take(wsec, "tau_g", dw.tau_g, _num, lambda v: v >= 50, "must be >= 50", "winding."),
        initial_even_site=site,
        eta_m=c.take(wsec, "eta_m", dw.eta_m, _num, *eta_ok, "winding."),
        eta_o=c.take(wsec, "eta_o", dw.eta_o, _num, *eta_ok, "winding."),
        samples=c.take(wsec, "samples", dw.samples, _int, lambda v: v >= 1, "must be >= 1", "winding."),
        probe_fractions=c.take(wsec, "probe_fractions", dw.probe_fractions, _num_tuple,
                               lambda v: all(0 <= x <= 1 for x in v), "entries in [0, 1]", "winding."),
    )
    if winding.ratio_max < winding.ratio_min:
        c.errors.append("winding.ratio_max: must not be below ratio_min")

    dsec = _section(c, raw, "disorder")
    dd = DisorderSpec()
    c.unknown(dsec, {f.name for f in dataclasses.fields(DisorderSpec)}, "disorder.")
    grid_ok = (lambda v: all(0 <= x <= 0.2 for x in v), "entries in [0, 0.2]")
    disorder = DisorderSpec(
        eta_m_grid=c.take(dsec, "eta_m_grid", dd.eta_m_grid, _num_tuple, *grid_ok, "disorder."),
        eta_o_grid=c.take(dsec, "eta_o_grid", dd.eta_o_grid, _num_tuple, *grid_ok, "disorder."),
        samples=c.take(dsec, "samples", dd.samples, _int, lambda v: v >= 1, "must be >= 1", "disorder."),
    )

    wig = _section(c, raw, "wigner")
    c.unknown(wig, {"points"}, "wigner.")
    wpts = c.take(wig, "points", d.wigner_points, _int, lambda v: v >= 3, "must be >= 3", "wigner.")

    if c.errors:
        raise ConfigError(c.errors)
    return ExperimentConfig(
        scenario=scenario, model=model, n_m=n_m, input_state=tuple(sorted(state.items())),
        g_over_2pi_mhz=g, T_us=T, decay=decay, gamma0_over_2pi_khz=g0,
        kappa_m_over_2pi_khz=km, kappa_o_over_2pi_khz=ko, grid_points=grid, rtol=rtol,
        atol=atol, seed=seed, workers=workers, spectrum_times=n_times, scan=scan,
        winding=winding, disorder=disorder, wigner_points=wpts,
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Lab-unit mapping in the file schema (inverse of :func:`validate_config`)."""
    out = {
        "scenario": cfg.scenario,
        "model": cfg.model,
        "n_m": cfg.n_m,
        "input_state": dict(cfg.input_state),
        "g_over_2pi_mhz": cfg.g_over_2pi_mhz,
        "T_us": cfg.T_us,
        "decay": cfg.decay,
        "gamma0_over_2pi_khz": cfg.gamma0_over_2pi_khz,
        "kappa_m_over_2pi_khz": cfg.kappa_m_over_2pi_khz,
        "kappa_o_over_2pi_khz": cfg.kappa_o_over_2pi_khz,
        "grid_points": cfg.grid_points,
        "rtol": cfg.rtol,
        "atol": cfg.atol,
        "seed": cfg.seed,
        "workers": cfg.workers,
        "spectrum": {"n_times": cfg.spectrum_times},
        "scan": _listify(dataclasses.asdict(cfg.scan)),
        "winding": _listify(dataclasses.asdict(cfg.winding)),
        "disorder": _listify(dataclasses.asdict(cfg.disorder)),
        "wigner": {"points": cfg.wigner_points},
    }
    return out


def _listify(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def echo_config(cfg: ExperimentConfig, path=None) -> str:
    """YAML text of the normalized config; written to ``path`` when given."""
    text = yaml.safe_dump(config_to_dict(cfg), sort_keys=True)
    if path is not None:
        Path(path).write_text(text)
    return text


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
