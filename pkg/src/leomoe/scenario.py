"""Scenario files: parsing, validation, resolved echo and derived runtime state.

A scenario is an INI file with [constellation], [links], [token], [moe],
[compute] and [eval] sections. Every run writes back a resolved copy so a
result directory is reproducible from its own artifacts.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .activation import ActivationModel, models_from_trace
from .constellation import ConstellationConfig, Ephemeris, GridCoord, propagate
from .evaluator import ComputeProfile, default_workload_split
from .placement import SubnetSpec, gateway_position, ring_partition
from .routing import TokenParams
from .topology import LinkParams, TopologyModel


class ScenarioError(Exception):
    """Malformed or inconsistent scenario input."""


SAMPLERS = ("auto", "exact", "sequential")


@dataclass(frozen=True)
class MoEConfig:
    """Model shape plus either shared expert weights or a trace path."""

    n_layers: int
    n_experts: int
    top_k: int
    weights: tuple[float, ...] | None = None
    trace_path: str | None = None

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ScenarioError(f"[moe] n_layers must be >= 1, got {self.n_layers}")
        if self.n_experts < 1:
            raise ScenarioError(f"[moe] n_experts must be >= 1, got {self.n_experts}")
        if not 1 <= self.top_k <= self.n_experts:
            raise ScenarioError(
                f"[moe] top_k must lie in [1, n_experts={self.n_experts}], got {self.top_k}"
            )
        if (self.weights is None) == (self.trace_path is None):
            raise ScenarioError("[moe] exactly one of weights/trace must be given")
        if self.weights is not None and len(self.weights) != self.n_experts:
            raise ScenarioError(
                f"[moe] got {len(self.weights)} weights for n_experts={self.n_experts}"
            )


@dataclass(frozen=True)
class EvalConfig:
    n_trials: int = 200
    n_survival_samples: int = 100
    seed: int = 0
    sampler: str = "auto"
    disconnect_policy: str = "skip"
    penalty_s: float = 1.0

    def __post_init__(self) -> None:
        if self.n_trials < 1:
            raise ScenarioError(f"[eval] n_trials must be >= 1, got {self.n_trials}")
        if self.n_survival_samples < 1:
            raise ScenarioError(
                f"[eval] n_survival_samples must be >= 1, got {self.n_survival_samples}"
            )
        if self.seed < 0:
            raise ScenarioError(f"[eval] seed must be non-negative, got {self.seed}")
        if self.sampler not in SAMPLERS:
            raise ScenarioError(f"[eval] sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.disconnect_policy not in ("skip", "penalty"):
            raise ScenarioError(
                f"[eval] disconnect_policy must be skip or penalty, got {self.disconnect_policy!r}"
            )
        if self.penalty_s <= 0:
            raise ScenarioError(f"[eval] penalty_s must be positive, got {self.penalty_s}")


@dataclass(frozen=True)
class Scenario:
    constellation: ConstellationConfig
    links: LinkParams
    token: TokenParams
    moe: MoEConfig
    compute: ComputeProfile
    eval: EvalConfig
    slot_duration_mode: str = "fixed"  # "fixed" or "auto" (= orbital period / n_slots)
    name: str = "scenario"


def _resolve_slot_duration(cfg: ConstellationConfig, mode: str) -> ConstellationConfig:
    if mode == "auto":
        return dataclasses.replace(
            cfg, slot_duration_s=cfg.orbital_period_s / cfg.n_slots
        )
    return cfg


def _get(parser, section, key, conv, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ScenarioError(f"missing required key [{section}] {key}")
        return default
    raw = parser.get(section, key).strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


def builtin_scenario_names() -> list[str]:
    base = resources.files("leomoe") / "scenarios"
    return sorted(p.name[:-4] for p in base.iterdir() if p.name.endswith(".ini"))


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Load a scenario from a file path or a builtin scenario name."""
    p = Path(path_or_name)
    if p.suffix == ".ini" and p.exists():
        return _load_file(p, name=p.stem)
    if not p.exists():
        base = resources.files("leomoe") / "scenarios" / f"{path_or_name}.ini"
        if base.is_file():
            with resources.as_file(base) as real:
                return _load_file(real, name=str(path_or_name))
        raise ScenarioError(
            f"scenario {path_or_name!r} is neither a readable file nor a builtin "
            f"(builtins: {', '.join(builtin_scenario_names())})"
        )
    return _load_file(p, name=p.stem)


def _load_file(path: Path, name: str) -> Scenario:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except OSError:
        raise
    except configparser.Error as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc

    for section in ("constellation", "moe"):
        if not parser.has_section(section):
            raise ScenarioError(f"{path}: missing required section [{section}]")

    sd_raw = _get(parser, "constellation", "slot_duration", str, default="10.0")
    mode = "auto" if sd_raw == "auto" else "fixed"
    try:
        constellation = ConstellationConfig(
            n_planes=_get(parser, "constellation", "n_planes", int, required=True),
            sats_per_plane=_get(parser, "constellation", "sats_per_plane", int, required=True),
            altitude_km=_get(parser, "constellation", "altitude_km", float, default=550.0),
            inclination_deg=_get(parser, "constellation", "inclination_deg", float, default=87.0),
            phasing=_get(parser, "constellation", "phasing", int, default=0),
            earth_radius_km=_get(parser, "constellation", "earth_radius_km", float, default=6371.0),
            n_slots=_get(parser, "constellation", "n_slots", int, default=1),
            slot_duration_s=1.0 if mode == "auto" else float(sd_raw),
            plane_spread=_get(parser, "constellation", "plane_spread", str, default="star"),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: [constellation] {exc}") from exc
    constellation = _resolve_slot_duration(constellation, mode)

    try:
        links = LinkParams(
            rate_threshold_rad_s=_get(parser, "links", "rate_threshold_rad_s", float, default=0.12),
            survival_prob=_get(parser, "links", "survival_prob", float, default=0.95),
            isl_rate_bps=_get(parser, "links", "isl_rate_bps", float, default=100e9),
            seam_policy=_get(parser, "links", "seam_policy", str, default="angular-rate-test"),
        )
        token = TokenParams(
            embed_dim=_get(parser, "token", "embed_dim", int, default=4096),
            quant_bits=_get(parser, "token", "quant_bits", int, default=16),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc

    weights = _get(parser, "moe", "weights", _float_list)
    trace = _get(parser, "moe", "trace", str)
    if trace is not None:
        trace = str((path.parent / trace).resolve())
    moe = MoEConfig(
        n_layers=_get(parser, "moe", "n_layers", int, required=True),
        n_experts=_get(parser, "moe", "n_experts", int, required=True),
        top_k=_get(parser, "moe", "top_k", int, required=True),
        weights=weights,
        trace_path=trace,
    )

    flops_per_sec = _get(parser, "compute", "flops_per_sec", float, default=7.28e9)
    workload = _get(parser, "compute", "workload", str, default="auto")
    if workload == "auto":
        gw_flops, ex_flops = default_workload_split(
            moe.n_layers,
            moe.top_k,
            total_forward_flops=_get(
                parser, "compute", "total_forward_flops", float, default=36.3e12
            ),
            seq_len=_get(parser, "compute", "seq_len", int, default=4096),
        )
    elif workload == "explicit":
        gw_flops = _get(parser, "compute", "flops_per_gateway", float, required=True)
        ex_flops = _get(parser, "compute", "flops_per_expert", float, required=True)
    else:
        raise ScenarioError(f"[compute] workload must be auto or explicit, got {workload!r}")
    try:
        compute = ComputeProfile(
            flops_per_expert=ex_flops,
            flops_per_gateway=gw_flops,
            flops_per_sec=flops_per_sec,
            parallel_efficiency=_get(parser, "compute", "parallel_efficiency", float, default=1.0),
            max_experts_per_sat=_get(parser, "compute", "max_experts_per_sat", int, default=1),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: [compute] {exc}") from exc

    ev = EvalConfig(
        n_trials=_get(parser, "eval", "n_trials", int, default=200),
        n_survival_samples=_get(parser, "eval", "n_survival_samples", int, default=100),
        seed=_get(parser, "eval", "seed", int, default=0),
        sampler=_get(parser, "eval", "sampler", str, default="auto"),
        disconnect_policy=_get(parser, "eval", "disconnect_policy", str, default="skip"),
        penalty_s=_get(parser, "eval", "penalty_s", float, default=1.0),
    )

    scenario = Scenario(
        constellation=constellation,
        links=links,
        token=token,
        moe=moe,
        compute=compute,
        eval=ev,
        slot_duration_mode=mode,
        name=name,
    )
    validate_scenario(scenario)
    return scenario


def validate_scenario(scenario: Scenario) -> None:
    """Cross-field checks; raises FeasibilityError for layout impossibilities."""
    # Raises with the violated inequality in the message.
    ring_partition(scenario.constellation, scenario.moe.n_layers, scenario.moe.n_experts)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_resolved(scenario: Scenario, path) -> None:
    """Write the fully resolved scenario (every field explicit, stable order)."""
    c, l, t, m, cp, e = (
        scenario.constellation,
        scenario.links,
        scenario.token,
        scenario.moe,
        scenario.compute,
        scenario.eval,
    )
    lines = [
        f"; resolved scenario: {scenario.name}",
        "[constellation]",
        f"n_planes = {c.n_planes}",
        f"sats_per_plane = {c.sats_per_plane}",
        f"altitude_km = {_fmt(c.altitude_km)}",
        f"inclination_deg = {_fmt(c.inclination_deg)}",
        f"phasing = {c.phasing}",
        f"earth_radius_km = {_fmt(c.earth_radius_km)}",
        f"n_slots = {c.n_slots}",
        "slot_duration = auto" if scenario.slot_duration_mode == "auto"
        else f"slot_duration = {_fmt(c.slot_duration_s)}",
        f"; resolved slot_duration_s = {_fmt(c.slot_duration_s)}",
        f"plane_spread = {c.plane_spread}",
        "",
        "[links]",
        f"rate_threshold_rad_s = {_fmt(l.rate_threshold_rad_s)}",
        f"survival_prob = {_fmt(l.survival_prob)}",
        f"isl_rate_bps = {_fmt(l.isl_rate_bps)}",
        f"seam_policy = {l.seam_policy}",
        "",
        "[token]",
        f"embed_dim = {t.embed_dim}",
        f"quant_bits = {t.quant_bits}",
        "",
        "[moe]",
        f"n_layers = {m.n_layers}",
        f"n_experts = {m.n_experts}",
        f"top_k = {m.top_k}",
    ]
    if m.weights is not None:
        lines.append("weights = " + ", ".join(repr(w) for w in m.weights))
    if m.trace_path is not None:
        lines.append(f"trace = {m.trace_path}")
    lines += [
        "",
        "[compute]",
        "workload = explicit",
        f"flops_per_sec = {_fmt(cp.flops_per_sec)}",
        f"flops_per_gateway = {_fmt(cp.flops_per_gateway)}",
        f"flops_per_expert = {_fmt(cp.flops_per_expert)}",
        f"parallel_efficiency = {_fmt(cp.parallel_efficiency)}",
        f"max_experts_per_sat = {cp.max_experts_per_sat}",
        "",
        "[eval]",
        f"n_trials = {e.n_trials}",
        f"n_survival_samples = {e.n_survival_samples}",
        f"seed = {e.seed}",
        f"sampler = {e.sampler}",
        f"disconnect_policy = {e.disconnect_policy}",
        f"penalty_s = {_fmt(e.penalty_s)}",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


SWEEP_AXES = ("altitude_km", "constellation", "survival_prob", "rate_threshold_rad_s")


def apply_axis(scenario: Scenario, axis: str, value) -> tuple[Scenario, str]:
    """Base scenario with one swept field replaced; returns (scenario, value label)."""
    c = scenario.constellation
    if axis == "altitude_km":
        v = float(value)
        c2 = _resolve_slot_duration(
            dataclasses.replace(c, altitude_km=v), scenario.slot_duration_mode
        )
        out = dataclasses.replace(scenario, constellation=c2)
        label = f"{v:g}"
    elif axis == "constellation":
        if isinstance(value, str):
            try:
                nx, ny = (int(tok) for tok in value.lower().split("x"))
            except ValueError as exc:
                raise ScenarioError(f"constellation value must look like '6x8', got {value!r}") from exc
        else:
            nx, ny = (int(v) for v in value)
        c2 = _resolve_slot_duration(
            dataclasses.replace(
                c, n_planes=nx, sats_per_plane=ny, phasing=c.phasing % nx
            ),
            scenario.slot_duration_mode,
        )
        out = dataclasses.replace(scenario, constellation=c2)
        label = f"{nx}x{ny}"
    elif axis == "survival_prob":
        v = float(value)
        out = dataclasses.replace(
            scenario, links=dataclasses.replace(scenario.links, survival_prob=v)
        )
        label = f"{v:g}"
    elif axis == "rate_threshold_rad_s":
        v = float(value)
        out = dataclasses.replace(
            scenario, links=dataclasses.replace(scenario.links, rate_threshold_rad_s=v)
        )
        label = f"{v:g}"
    else:
        raise ScenarioError(f"unknown sweep axis {axis!r} (known: {', '.join(SWEEP_AXES)})")
    validate_scenario(out)
    return out, label


@dataclass(frozen=True)
class ScenarioRuntime:
    """Heavy derived state shared by placement and evaluation."""

    eph: Ephemeris
    topo: TopologyModel
    subnets: tuple[SubnetSpec, ...]
    central_gateways: tuple[GridCoord, ...]
    activation_models: tuple[ActivationModel, ...]


def build_runtime(scenario: Scenario) -> ScenarioRuntime:
    """Propagate, precompute link geometry and instantiate per-layer models."""
    eph = propagate(scenario.constellation)
    topo = TopologyModel(eph, scenario.links)
    subnets = tuple(
        ring_partition(scenario.constellation, scenario.moe.n_layers, scenario.moe.n_experts)
    )
    gateways = tuple(
        gateway_position(scenario.constellation, scenario.moe.n_layers, spec.layer)
        for spec in subnets
    )
    m = scenario.moe
    if m.weights is not None:
        shared = ActivationModel(weights=m.weights, top_k=m.top_k)
        models = tuple(shared for _ in range(m.n_layers))
    else:
        fitted = models_from_trace(m.trace_path, m.top_k, n_experts=m.n_experts)
        missing = [l for l in range(1, m.n_layers + 1) if l not in fitted]
        if missing:
            raise ScenarioError(f"trace misses layers {missing} of 1..{m.n_layers}")
        models = tuple(fitted[l] for l in range(1, m.n_layers + 1))
    return ScenarioRuntime(
        eph=eph,
        topo=topo,
        subnets=subnets,
        central_gateways=gateways,
        activation_models=models,
    )
