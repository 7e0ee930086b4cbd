"""YAML scenario files with a strict schema.

Every physical quantity carries its unit in the key name. Unknown keys and
wrongly typed values are rejected with the line they appear on.

Example::

    seed: 7
    scenario:
      signal: D
      delta_t_a_ns: 3.0
      l_c_um: 75.0
      v_m: 0.959
      noise: {kind: iid_uniform}
    scan: {start_um: -200, stop_um: 200, step_um: 5}
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import yaml

from .noise import IID_UNIFORM, ORNSTEIN_UHLENBECK, NoiseModel
from .protocol import PROBES, Conventions, Scenario
from .states import JonesVector, OverlapKernel, StateError


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


NUMBER, INTEGER, FLAG, TEXT = "number", "integer", "flag", "text"

SCHEMA = {
    "seed": INTEGER,
    "scenario": {
        "mode": TEXT,
        "signal": "polarization",
        "inputs": "names",
        "delta_t_a_ns": NUMBER,
        "delta_t_b_ns": NUMBER,
        "tau_ns": NUMBER,
        "l_c_um": NUMBER,
        "v_m": NUMBER,
        "window_ns": NUMBER,
        "fast_switches": FLAG,
        "feed_forward": FLAG,
        "trials": INTEGER,
        "analytic": FLAG,
        "transmittance": {"CH": NUMBER, "CV": NUMBER},
        "noise": {
            "kind": TEXT,
            "correlation_time_ns": NUMBER,
            "sigma_phi_rad": NUMBER,
        },
        "conventions": {
            "bs_reflection_phase_rad": NUMBER,
            "pbs_reflection_phase_rad": NUMBER,
        },
    },
    "scan": {"start_um": NUMBER, "stop_um": NUMBER, "step_um": NUMBER},
    "tomography": {
        "n_total": INTEGER,
        "repetitions": INTEGER,
        "exact": FLAG,
        "counts_csv": TEXT,
    },
    "output": {"dir": TEXT, "formats": "names"},
}


@dataclass(frozen=True)
class ScanConfig:
    start_um: float = -200.0
    stop_um: float = 200.0
    step_um: float = 5.0

    def offsets(self) -> list[float]:
        span = self.stop_um - self.start_um
        if self.step_um <= 0 or span < 0:
            raise ConfigError("scan needs step_um > 0 and stop_um >= start_um")
        n = int(math.floor(span / self.step_um + 1e-9)) + 1
        return [self.start_um + i * self.step_um for i in range(n)]


@dataclass(frozen=True)
class TomographyConfig:
    n_total: int = 10_000
    repetitions: int = 200
    exact: bool = False
    counts_csv: str | None = None


@dataclass(frozen=True)
class OutputConfig:
    dir: str | None = None
    formats: tuple[str, ...] = ("json", "csv")


@dataclass(frozen=True)
class Config:
    scenario: Scenario = field(default_factory=lambda: Scenario(noise=NoiseModel(seed=0)))
    scan: ScanConfig = field(default_factory=ScanConfig)
    tomography: TomographyConfig = field(default_factory=TomographyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def with_seed(self, seed: int) -> Config:
        return replace(self, seed=seed, scenario=replace(
            self.scenario, noise=replace(self.scenario.noise, seed=seed)))


# ---------------------------------------------------------------------------
# Validation against the node tree (keeps line numbers)


_CONSTRUCTOR = yaml.constructor.SafeConstructor()


def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar(node, kind, where, src):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{where} must be a {kind}", _line(node), src)
    value = _CONSTRUCTOR.construct_object(node)
    if kind == FLAG:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {node.value!r}", _line(node), src)
    elif kind == INTEGER:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {node.value!r}", _line(node), src)
    elif kind == NUMBER:
        if value is None and where.endswith("delta_t_b_ns"):
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {node.value!r}", _line(node), src)
        value = float(value)
    elif kind == TEXT:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be text, got {node.value!r}", _line(node), src)
    return value


def _validate(node, schema, where, src):
    if isinstance(schema, dict):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigError(f"{where or 'top level'} must be a mapping", _line(node), src)
        out = {}
        for knode, vnode in node.value:
            key = knode.value
            full = f"{where}.{key}" if where else key
            if key not in schema:
                raise ConfigError(f"unknown key {full!r}", _line(knode), src)
            if key in out:
                raise ConfigError(f"duplicate key {full!r}", _line(knode), src)
            out[key] = _validate(vnode, schema[key], full, src)
        return out
    if schema == "names":
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{where} must be a list", _line(node), src)
        return [_scalar(n, TEXT, where, src) for n in node.value]
    if schema == "polarization":
        if isinstance(node, yaml.ScalarNode):
            return _scalar(node, TEXT, where, src)
        pol = _validate(node, {"alpha": "pair", "beta": "pair"}, where, src)
        return pol
    if schema == "pair":
        if not isinstance(node, yaml.SequenceNode) or len(node.value) != 2:
            raise ConfigError(f"{where} must be a [re, im] pair", _line(node), src)
        return [_scalar(n, NUMBER, where, src) for n in node.value]
    return _scalar(node, schema, where, src)


# ---------------------------------------------------------------------------
# dict <-> Config


def _polarization(value, src) -> JonesVector:
    try:
        if isinstance(value, str):
            return JonesVector.named(value)
        a, b = complex(*value["alpha"]), complex(*value["beta"])
        return JonesVector(a, b)
    except (StateError, KeyError) as exc:
        raise ConfigError(f"scenario.signal: {exc}", None, src) from None


def _polarization_out(psi: JonesVector):
    for name in ("H", "V", "D", "A", "L", "R"):
        ref = JonesVector.named(name)
        if psi.alpha == ref.alpha and psi.beta == ref.beta:
            return name
    return {"alpha": [psi.alpha.real, psi.alpha.imag], "beta": [psi.beta.real, psi.beta.imag]}


def _unit(phase: float | None) -> complex:
    # Quarter turns map to exact values so that default files equal Config().
    if phase is None:
        return 1j
    quarter = phase / (math.pi / 2)
    if abs(quarter - round(quarter)) < 1e-12:
        return 1j ** (round(quarter) % 4)
    return cmath.exp(1j * phase)


def config_from_dict(data: dict, src: str = "<config>") -> Config:
    seed = data.get("seed", 0)
    sc = data.get("scenario", {})
    nz = sc.get("noise", {})
    conv = sc.get("conventions", {})
    try:
        noise = NoiseModel(
            kind=nz.get("kind", IID_UNIFORM),
            correlation_time_ns=nz.get("correlation_time_ns", math.inf),
            sigma_phi_rad=nz.get("sigma_phi_rad", 1.0),
            seed=seed,
        )
        kernel = OverlapKernel(sc.get("l_c_um", 75.0), sc.get("v_m", 1.0))
        scenario = Scenario(
            signal=_polarization(sc.get("signal", "D"), src),
            delta_t_a_ns=sc.get("delta_t_a_ns", 3.0),
            delta_t_b_ns=sc.get("delta_t_b_ns"),
            tau_ns=sc.get("tau_ns", 0.0),
            kernel=kernel,
            noise=noise,
            window_ns=sc.get("window_ns", 2.5),
            fast_switches=sc.get("fast_switches", False),
            feed_forward=sc.get("feed_forward", False),
            trials=sc.get("trials", 1000),
            analytic=sc.get("analytic", False),
            transmittance=tuple(sc.get("transmittance", {}).items()),
            mode=sc.get("mode", "protocol"),
            inputs=tuple(sc.get("inputs", PROBES)),
            conventions=Conventions(
                _unit(conv.get("bs_reflection_phase_rad")),
                _unit(conv.get("pbs_reflection_phase_rad")),
            ),
        )
    except ConfigError:
        raise
    except (ValueError, StateError) as exc:
        raise ConfigError(f"scenario: {exc}", None, src) from None
    if noise.kind not in (IID_UNIFORM, ORNSTEIN_UHLENBECK):
        raise ConfigError(f"unknown noise kind {noise.kind!r}", None, src)
    tomo = data.get("tomography", {})
    out = data.get("output", {})
    tcfg = TomographyConfig(**tomo)
    if tcfg.n_total < 1 or tcfg.repetitions < 1:
        raise ConfigError("tomography.n_total and repetitions must be positive", None, src)
    return Config(
        scenario=scenario,
        scan=ScanConfig(**data.get("scan", {})),
        tomography=tcfg,
        output=OutputConfig(out.get("dir"), tuple(out.get("formats", ("json", "csv")))),
        seed=seed,
    )


def config_to_dict(cfg: Config) -> dict:
    s = cfg.scenario
    conv = s.conventions
    nz = {"kind": s.noise.kind}
    if s.noise.kind == ORNSTEIN_UHLENBECK:
        nz["correlation_time_ns"] = s.noise.correlation_time_ns
        nz["sigma_phi_rad"] = s.noise.sigma_phi_rad
    scenario = {
        "mode": s.mode,
        "signal": _polarization_out(s.signal),
        "inputs": list(s.inputs),
        "delta_t_a_ns": s.delta_t_a_ns,
        "delta_t_b_ns": s.delta_t_b_ns,
        "tau_ns": s.tau_ns,
        "l_c_um": s.kernel.coherence_length_um,
        "v_m": s.kernel.visibility,
        "window_ns": s.window_ns,
        "fast_switches": s.fast_switches,
        "feed_forward": s.feed_forward,
        "trials": s.trials,
        "analytic": s.analytic,
        "transmittance": dict(s.transmittance),
        "noise": nz,
        "conventions": {
            "bs_reflection_phase_rad": cmath.phase(conv.bs_r),
            "pbs_reflection_phase_rad": cmath.phase(conv.pbs_r),
        },
    }
    tomo = {"n_total": cfg.tomography.n_total, "repetitions": cfg.tomography.repetitions,
            "exact": cfg.tomography.exact}
    if cfg.tomography.counts_csv:
        tomo["counts_csv"] = cfg.tomography.counts_csv
    out = {"formats": list(cfg.output.formats)}
    if cfg.output.dir:
        out["dir"] = cfg.output.dir
    return {
        "seed": cfg.seed,
        "scenario": scenario,
        "scan": {"start_um": cfg.scan.start_um, "stop_um": cfg.scan.stop_um,
                 "step_um": cfg.scan.step_um},
        "tomography": tomo,
        "output": out,
    }


def parse_config(text: str, src: str = "<config>") -> Config:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, src) from None
    if root is None:
        return config_from_dict({}, src)
    data = _validate(root, SCHEMA, "", src)
    return config_from_dict(data, src)


def load_config(path) -> Config:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def dump_config(cfg: Config) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
