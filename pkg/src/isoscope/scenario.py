"""Scenario files: one experiment per file in a flat INI-style grammar.

Grammar (``#`` or ``;`` starts a comment, keys are ``key = value``)::

    [scenario]          name, workload, n_cores, seed, duration_ns, drain_ns,
                        trace_workload, output_dir
    [noise]             tick_period_ns, tick_cost, rt_period_ns, rt_cost,
                        ipi_rate_hz, ipi_cost, irq_entry, rcu_sync_period_ns
    [workload]          keys depend on ``scenario.workload`` (see WORKLOAD_PARAMS)
    [isolation.N]       core, mask, start_ns, stop_ns (integer or ``end``),
                        tick_period_ns, kinds
    [channel]           capacity, max_payload
    [ipi]               wire_delay_ns, cached_freq_khz, handler_cost, queue_capacity
    [rcu]               fix, kthread_allowed (``all`` or ``0,1``), gp_step_ns,
                        stall_ns, kernel_context
    [tick_costs]        accounting, rt, tsc_sync, flush, message

Costs are ``constant:N``, ``uniform:A:B`` or a bare integer. Masks are
``CLOCK|RESCHED|IPI`` combinations. Every key has a default except
``scenario.name``, ``scenario.workload``, ``scenario.duration_ns`` and the
workload's required keys.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .engine import MAX_TIME_NS, CostDist
from .errors import ParseError, ValidationError
from .isolator import ALL_TICK_WORK, Mask, TickCosts, TickWork
from .workloads import NoiseProfile

REQUIRED = object()

WORKLOAD_PARAMS: dict[str, dict[str, object]] = {
    "gpio_response": {
        "core": 2, "period_ns": REQUIRED, "poll_granularity_ns": 40,
        "response_cost_ns": 390, "poll_phase_ns": 0, "first_ns": 0,
    },
    "counter_toggle": {
        "core": 2, "interval_ns": REQUIRED, "read_granularity_ns": 40, "read_phase_ns": 0,
    },
    "cross_core": {
        "core_a": 1, "core_b": 2, "period_ns": 2000, "hop_delay_ns": 100,
        "poll_granularity_ns": 40,
    },
    "ipc_bench": {
        "mode": "sim", "loops": 10, "roundtrips": 1000, "hop_delay_ns": 100,
        "poll_granularity_ns": 50, "pin": "",
    },
}
_POSITIVE = {"period_ns", "interval_ns", "loops", "roundtrips"}


@dataclass(frozen=True)
class IsolationSpec:
    core: int
    mask: Mask
    start_ns: int = 0
    stop_ns: int | None = None  # None: isolated until the end of the run
    tick_period_ns: int = 1_000_000
    kinds: frozenset = ALL_TICK_WORK


@dataclass(frozen=True)
class ChannelSpec:
    capacity: int = 64
    max_payload: int = 64


@dataclass(frozen=True)
class IpiSpec:
    wire_delay_ns: int = 0
    cached_freq_khz: int = 1_800_000
    handler_cost: CostDist = CostDist.constant(0)
    queue_capacity: int = 1024


@dataclass(frozen=True)
class RcuSpec:
    fix: bool = True
    kthread_allowed: tuple[int, ...] | None = None
    gp_step_ns: int = 1000
    stall_ns: int = 100_000_000
    kernel_context: bool = False

    def __post_init__(self):
        # the allowed set is a set; keep one canonical order
        if self.kthread_allowed is not None:
            object.__setattr__(self, "kthread_allowed", tuple(sorted(set(self.kthread_allowed))))


@dataclass
class Scenario:
    name: str
    workload: str
    duration_ns: int
    params: dict = field(default_factory=dict)
    n_cores: int = 4
    seed: int = 0
    drain_ns: int = 1_000_000
    trace_workload: bool = False
    output_dir: str = ""
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    isolation: list[IsolationSpec] = field(default_factory=list)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    ipi: IpiSpec = field(default_factory=IpiSpec)
    rcu: RcuSpec = field(default_factory=RcuSpec)
    tick_costs: TickCosts = field(default_factory=TickCosts)

    @property
    def mode(self) -> str:
        return "isolated" if self.isolation else "baseline"

    def with_overrides(self, seed: int | None = None, duration_ns: int | None = None) -> "Scenario":
        out = replace(self, params=dict(self.params), isolation=list(self.isolation))
        if seed is not None:
            out.seed = seed
        if duration_ns is not None:
            out.duration_ns = duration_ns
        validate(out)
        return out


# ---- value conversion ---------------------------------------------------------

def _int(text: str, where: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ValidationError(where, f"expected an integer, got {text!r}") from None


def _bool(text: str, where: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError(where, f"expected a boolean, got {text!r}")


def _float(text: str, where: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ValidationError(where, f"expected a number, got {text!r}") from None


def _cost(text: str, where: str) -> CostDist:
    try:
        return CostDist.parse(text)
    except ValueError as exc:
        raise ValidationError(where, str(exc)) from None


def _mask(text: str, where: str) -> Mask:
    try:
        return Mask.parse(text)
    except KeyError as exc:
        raise ValidationError(where, f"unknown mask bit {exc}") from None


def _kinds(text: str, where: str) -> frozenset:
    out = set()
    for part in text.replace(",", "|").split("|"):
        part = part.strip().upper()
        if not part:
            continue
        try:
            out.add(TickWork(part if part.startswith("TICK_") else f"TICK_{part}"))
        except ValueError:
            raise ValidationError(where, f"unknown tick work {part!r}") from None
    return frozenset(out)


def _take(section, name: str, keys: dict, where: str) -> dict:
    unknown = set(section) - set(keys)
    if unknown:
        raise ValidationError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    out = {}
    for key, conv in keys.items():
        if key in section:
            out[key] = conv(section[key], f"{name}.{key}")
    return out


# ---- load / write-back ----------------------------------------------------------

def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   default_section="__defaults__")
    cp.optionxform = str
    return cp


def _line_of(exc: configparser.Error) -> int:
    if getattr(exc, "lineno", None):
        return int(exc.lineno)
    errors = getattr(exc, "errors", None)
    if errors:
        return errors[0][0]
    return 0


def loads(text: str) -> Scenario:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParseError(_line_of(exc), exc.message.splitlines()[0]) from None
    if not cp.has_section("scenario"):
        raise ParseError(1, "missing [scenario] section")
    allowed = {"scenario", "noise", "workload", "channel", "ipi", "rcu", "tick_costs"}
    for sec in cp.sections():
        if sec not in allowed and not sec.startswith("isolation."):
            raise ValidationError(sec, "unknown section")

    head = dict(cp["scenario"])
    for key in ("name", "workload", "duration_ns"):
        if key not in head:
            raise ValidationError(f"scenario.{key}", "required")
    h = _take(head, "scenario", {
        "name": lambda v, w: v.strip(), "workload": lambda v, w: v.strip(),
        "n_cores": _int, "seed": _int, "duration_ns": _int, "drain_ns": _int,
        "trace_workload": _bool, "output_dir": lambda v, w: v.strip(),
    }, "scenario")
    workload = h["workload"]
    if workload not in WORKLOAD_PARAMS:
        raise ValidationError("scenario.workload",
                              f"unknown workload {workload!r}; one of {sorted(WORKLOAD_PARAMS)}")

    schema = WORKLOAD_PARAMS[workload]
    raw = dict(cp["workload"]) if cp.has_section("workload") else {}
    convs = {k: (lambda v, w: v.strip()) if isinstance(d, str) else _int for k, d in schema.items()}
    params = _take(raw, "workload", convs, "workload")
    for k, d in schema.items():
        if k not in params:
            if d is REQUIRED:
                raise ValidationError(f"workload.{k}", "required")
            params[k] = d

    noise_kw = _take(dict(cp["noise"]) if cp.has_section("noise") else {}, "noise", {
        "tick_period_ns": _int, "tick_cost": _cost, "rt_period_ns": _int, "rt_cost": _cost,
        "ipi_rate_hz": _float, "ipi_cost": _cost, "irq_entry": _cost,
        "rcu_sync_period_ns": _int,
    }, "noise")
    for k, v in noise_kw.items():
        if isinstance(v, (int, float)) and v < 0:
            raise ValidationError(f"noise.{k}", "must be >= 0")
    noise = NoiseProfile(**noise_kw)

    isolation = []
    iso_secs = sorted((s for s in cp.sections() if s.startswith("isolation.")),
                      key=lambda s: (len(s), s))
    for sec in iso_secs:
        kw = _take(dict(cp[sec]), sec, {
            "core": _int, "mask": _mask, "start_ns": _int,
            "stop_ns": lambda v, w: None if v.strip().lower() == "end" else _int(v, w),
            "tick_period_ns": _int, "kinds": _kinds,
        }, sec)
        for key in ("core", "mask"):
            if key not in kw:
                raise ValidationError(f"{sec}.{key}", "required")
        isolation.append(IsolationSpec(**kw))

    channel = ChannelSpec(**_take(dict(cp["channel"]) if cp.has_section("channel") else {},
                                  "channel", {"capacity": _int, "max_payload": _int}, "channel"))
    ipi = IpiSpec(**_take(dict(cp["ipi"]) if cp.has_section("ipi") else {}, "ipi", {
        "wire_delay_ns": _int, "cached_freq_khz": _int, "handler_cost": _cost,
        "queue_capacity": _int}, "ipi"))

    def allowed_cores(v, w):
        v = v.strip().lower()
        if v in ("", "all"):
            return None
        return tuple(sorted({_int(x, w) for x in v.split(",") if x.strip()}))

    rcu = RcuSpec(**_take(dict(cp["rcu"]) if cp.has_section("rcu") else {}, "rcu", {
        "fix": _bool, "kthread_allowed": allowed_cores, "gp_step_ns": _int,
        "stall_ns": _int, "kernel_context": _bool}, "rcu"))
    tick_costs = TickCosts(**_take(dict(cp["tick_costs"]) if cp.has_section("tick_costs") else {},
                                   "tick_costs", {f.name: _int for f in fields(TickCosts)},
                                   "tick_costs"))

    sc = Scenario(params=params, noise=noise, isolation=isolation, channel=channel, ipi=ipi,
                  rcu=rcu, tick_costs=tick_costs, **h)
    validate(sc)
    return sc


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file. I/O failures propagate as OSError."""
    text = Path(path).read_text(encoding="utf-8")
    return loads(text)


def validate(sc: Scenario) -> None:
    """Check every cross-field invariant; raise ValidationError on the first failure."""
    if not sc.name or any(ch in sc.name for ch in "\n,\r"):
        raise ValidationError("scenario.name", "must be non-empty without commas or newlines")
    if sc.n_cores < 1:
        raise ValidationError("scenario.n_cores", "must be >= 1")
    if not 0 <= sc.seed < 1 << 64:
        raise ValidationError("scenario.seed", "must fit in 64 unsigned bits")
    if not 0 < sc.duration_ns <= MAX_TIME_NS // 2:
        raise ValidationError("scenario.duration_ns", f"must be in (0, {MAX_TIME_NS // 2}]")
    if sc.drain_ns < 0:
        raise ValidationError("scenario.drain_ns", "must be >= 0")
    if sc.isolation and sc.n_cores < 2:
        raise ValidationError("scenario.n_cores", "isolation needs at least 2 cores")

    def core_ok(value: int, where: str) -> None:
        if not 0 <= value < sc.n_cores:
            raise ValidationError(where, f"core {value} outside [0, {sc.n_cores})")

    for i, w in enumerate(sc.isolation):
        where = f"isolation.{i}"
        core_ok(w.core, f"{where}.core")
        if not w.mask:
            raise ValidationError(f"{where}.mask", "needs at least one bit")
        if w.tick_period_ns <= 0:
            raise ValidationError(f"{where}.tick_period_ns", "must be > 0")
        stop = sc.duration_ns if w.stop_ns is None else w.stop_ns
        if not 0 <= w.start_ns <= stop <= sc.duration_ns:
            raise ValidationError(f"{where}.start_ns",
                                  f"window [{w.start_ns}, {stop}] not within [0, {sc.duration_ns}]")
        if w.stop_ns is not None and w.stop_ns == w.start_ns:
            raise ValidationError(f"{where}.stop_ns", "empty window")

    p = sc.params
    for k in _POSITIVE & set(p):
        if p[k] <= 0:
            raise ValidationError(f"workload.{k}", "must be > 0")
    for k, v in p.items():
        if isinstance(v, int) and v < 0:
            raise ValidationError(f"workload.{k}", "must be >= 0")
    if sc.workload == "gpio_response":
        core_ok(p["core"], "workload.core")
        if sc.duration_ns // p["period_ns"] < 1:
            raise ValidationError("workload.period_ns", "longer than the run")
    elif sc.workload == "counter_toggle":
        core_ok(p["core"], "workload.core")
        if sc.duration_ns // p["interval_ns"] < 1:
            raise ValidationError("workload.interval_ns", "longer than the run")
    elif sc.workload == "cross_core":
        core_ok(p["core_a"], "workload.core_a")
        core_ok(p["core_b"], "workload.core_b")
        if p["core_a"] == p["core_b"]:
            raise ValidationError("workload.core_b", "must differ from core_a")
        if p["period_ns"] <= 0 or sc.duration_ns // p["period_ns"] < 1:
            raise ValidationError("workload.period_ns", "must be > 0 and fit in the run")
    elif sc.workload == "ipc_bench":
        if p["mode"] not in ("sim", "live"):
            raise ValidationError("workload.mode", "must be sim or live")
        if p["pin"]:
            parse_pin(p["pin"], "workload.pin")

    cap = sc.channel.capacity
    if cap < 2 or cap & (cap - 1):
        raise ValidationError("channel.capacity", "must be a power of two >= 2")
    if sc.channel.max_payload < 8:
        raise ValidationError("channel.max_payload", "must be >= 8")
    if sc.ipi.queue_capacity < 1:
        raise ValidationError("ipi.queue_capacity", "must be >= 1")
    if sc.ipi.wire_delay_ns < 0 or sc.ipi.cached_freq_khz < 0:
        raise ValidationError("ipi", "delays and frequencies must be >= 0")
    if sc.rcu.kthread_allowed is not None:
        for c in sc.rcu.kthread_allowed:
            core_ok(c, "rcu.kthread_allowed")
    if sc.rcu.gp_step_ns < 0 or sc.rcu.stall_ns <= 0:
        raise ValidationError("rcu", "gp_step_ns must be >= 0 and stall_ns > 0")
    for f in fields(TickCosts):
        if getattr(sc.tick_costs, f.name) < 0:
            raise ValidationError(f"tick_costs.{f.name}", "must be >= 0")


def parse_pin(text: str, where: str = "pin") -> tuple[int, int]:
    parts = [x for x in text.split(",") if x.strip()]
    if len(parts) != 2:
        raise ValidationError(where, f"expected A,B, got {text!r}")
    return _int(parts[0], where), _int(parts[1], where)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps(sc: Scenario) -> str:
    """Canonical text form; ``loads(dumps(s)) == s`` for every valid scenario."""
    lines = ["[scenario]"]
    for k in ("name", "workload", "n_cores", "seed", "duration_ns", "drain_ns",
              "trace_workload", "output_dir"):
        lines.append(f"{k} = {_fmt(getattr(sc, k))}")
    lines += ["", "[noise]"]
    for f in fields(NoiseProfile):
        lines.append(f"{f.name} = {_fmt(getattr(sc.noise, f.name))}")
    lines += ["", "[workload]"]
    for k in WORKLOAD_PARAMS[sc.workload]:
        lines.append(f"{k} = {_fmt(sc.params[k])}")
    for i, w in enumerate(sc.isolation):
        kinds = "|".join(sorted(k.value for k in w.kinds))
        lines += ["", f"[isolation.{i}]", f"core = {w.core}", f"mask = {w.mask}",
                  f"start_ns = {w.start_ns}",
                  f"stop_ns = {'end' if w.stop_ns is None else w.stop_ns}",
                  f"tick_period_ns = {w.tick_period_ns}", f"kinds = {kinds}"]
    lines += ["", "[channel]", f"capacity = {sc.channel.capacity}",
              f"max_payload = {sc.channel.max_payload}"]
    lines += ["", "[ipi]"] + [f"{f.name} = {_fmt(getattr(sc.ipi, f.name))}" for f in fields(IpiSpec)]
    allowed = "all" if sc.rcu.kthread_allowed is None else ",".join(map(str, sc.rcu.kthread_allowed))
    lines += ["", "[rcu]", f"fix = {_fmt(sc.rcu.fix)}", f"kthread_allowed = {allowed}",
              f"gp_step_ns = {sc.rcu.gp_step_ns}", f"stall_ns = {sc.rcu.stall_ns}",
              f"kernel_context = {_fmt(sc.rcu.kernel_context)}"]
    lines += ["", "[tick_costs]"] + [f"{f.name} = {getattr(sc.tick_costs, f.name)}"
                                     for f in fields(TickCosts)]
    return "\n".join(lines) + "\n"


def write_back(sc: Scenario, path) -> None:
    Path(path).write_text(dumps(sc), encoding="utf-8")


def scenario_hash(sc: Scenario) -> str:
    return hashlib.sha256(dumps(sc).encode("utf-8")).hexdigest()[:16]


def header_comment(sc: Scenario) -> str:
    return f"scenario={sc.name} seed={sc.seed} hash={scenario_hash(sc)}"
