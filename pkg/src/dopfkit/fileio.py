"""Plain-text file formats: feeders, scenarios, schedules, configs, reports.

Every format starts with a versioned `# dopfkit <kind> v1` header line and is
line-oriented, so fixtures diff cleanly.  All parse failures raise ParseError
carrying the file path and 1-based line number.

Human-facing units on disk are kW for powers, $/kWh for prices and the loss
weight; loaders convert to the per-unit / per-interval convention the solver
uses internally (multiply $/kWh by s_base*dt, divide kW by s_base).
"""

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .instance import DopfInstance
from .network import CostConfig, Feeder
from .rainflow import StressModel
from .scenarios import PvSpec, ScenarioSet
from .storage import BesSchedule, BesSpec, simulate_soc

FEEDER_HEADER = "# dopfkit feeder v1"
LOADS_HEADER = "# dopfkit loads v1"
PRICES_HEADER = "# dopfkit prices v1"
SCENARIO_HEADER = "# dopfkit scenarios v1"
FORECAST_HEADER = "# dopfkit forecast v1"
SCHEDULE_HEADER = "# dopfkit schedule v1"
CONFIG_HEADER = "# dopfkit config v1"

def _fmt(v):
    """Shortest decimal that round-trips the exact float."""
    return repr(float(v))


def _fmt_row(values):
    return " ".join(_fmt(v) for v in np.asarray(values, dtype=float))


class _Lines:
    """Iterator over (line_number, stripped_text), skipping blanks/comments."""

    def __init__(self, path, text, header):
        self.path = str(path)
        self.raw = text.splitlines()
        if not self.raw or self.raw[0].strip() != header:
            raise ParseError(self.path, 1, f"expected header {header!r}")
        self.pos = 1  # header consumed

    def __iter__(self):
        return self

    def __next__(self):
        while self.pos < len(self.raw):
            self.pos += 1
            text = self.raw[self.pos - 1].strip()
            if text and not text.startswith("#"):
                return self.pos, text
        raise StopIteration

    def take(self, count, what):
        out = []
        for _ in range(count):
            try:
                out.append(next(self))
            except StopIteration:
                raise ParseError(self.path, len(self.raw),
                                 f"file ends inside {what}") from None
        return out


def _floats(path, lineno, fields, count=None, what="values"):
    try:
        vals = [float(f) for f in fields]
    except ValueError as exc:
        raise ParseError(path, lineno, f"bad number in {what}: {exc}") from None
    if count is not None and len(vals) != count:
        raise ParseError(path, lineno,
                         f"expected {count} {what}, got {len(vals)}")
    return vals


def _int(path, lineno, text, what):
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, lineno, f"{what} must be an integer, got {text!r}") from None


# --------------------------------------------------------------------------
# feeder / loads / prices
# --------------------------------------------------------------------------

@dataclass
class FeederFile:
    """Everything a feeder file can carry; loads/prices sections optional."""

    feeder: Feeder = None
    pv_specs: list = field(default_factory=list)
    bes_specs: list = field(default_factory=list)
    horizon: int = None
    dt: float = None
    load_p_kw: np.ndarray = None   # (T, n) kW
    load_q_kw: np.ndarray = None
    c_loss_kwh: float = None       # $/kWh
    price_kwh: np.ndarray = None   # (T,) $/kWh


def _read_table(lines, t_count, n_cols, what):
    rows = []
    for lineno, text in lines.take(t_count, what):
        rows.append(_floats(lines.path, lineno, text.split(), n_cols, what))
    return np.array(rows)


def _parse_sections(lines):
    """Shared section grammar for feeder/loads/prices files."""
    ff = FeederFile()
    scalars = {}
    branches = []
    n_nodes = None
    path = lines.path
    for lineno, text in lines:
        fields = text.split()
        key = fields[0]
        if key == "base":
            vals = _floats(path, lineno, fields[1:], 2, "base values (s_base v_base)")
            scalars["s_base"], scalars["v_base"] = vals
        elif key in ("v0", "epsilon", "dt", "c_loss"):
            (val,) = _floats(path, lineno, fields[1:], 1, key)
            if key == "dt":
                ff.dt = val
            elif key == "c_loss":
                ff.c_loss_kwh = val
            else:
                scalars[key] = val
        elif key in ("nodes", "horizon"):
            if len(fields) != 2:
                raise ParseError(path, lineno, f"{key} takes one value")
            val = _int(path, lineno, fields[1], key)
            if key == "nodes":
                n_nodes = val
            else:
                ff.horizon = val
        elif key == "branch":
            vals = _floats(path, lineno, fields[1:], 4, "branch fields (child parent r x)")
            branches.append((int(vals[0]), int(vals[1]), vals[2], vals[3]))
        elif key == "pv":
            vals = _floats(path, lineno, fields[1:], 2, "pv fields (node s_w)")
            ff.pv_specs.append(PvSpec(node=int(vals[0]), s_w=vals[1]))
        elif key == "bes":
            vals = _floats(path, lineno, fields[1:], 14, "bes fields")
            ff.bes_specs.append(BesSpec(
                node=int(vals[0]), e_cap=vals[1], ch_max=vals[2],
                dis_max=vals[3], eta_c=vals[4], eta_d=vals[5],
                soc_min=vals[6], soc_max=vals[7], soc_init=vals[8],
                soc_end_lo=vals[9], soc_end_hi=vals[10],
                stress=StressModel(k1=vals[11], k2=vals[12]), c_bes=vals[13]))
        elif key in ("load_p", "load_q"):
            if ff.horizon is None or n_nodes is None:
                raise ParseError(path, lineno,
                                 f"{key} table requires nodes and horizon first")
            table = _read_table(lines, ff.horizon, n_nodes, f"{key} row")
            if key == "load_p":
                ff.load_p_kw = table
            else:
                ff.load_q_kw = table
        elif key == "price":
            ff.price_kwh = np.array(_floats(path, lineno, fields[1:],
                                            None, "price values"))
        else:
            raise ParseError(path, lineno, f"unknown record type {key!r}")
    if n_nodes is not None:
        try:
            ff.feeder = Feeder(n_nodes, branches,
                               v0=scalars.get("v0", 1.0),
                               epsilon=scalars.get("epsilon", 0.05),
                               s_base=scalars.get("s_base", 1000.0),
                               v_base=scalars.get("v_base", 12.66))
        except Exception as exc:
            raise ParseError(path, len(lines.raw), f"bad feeder: {exc}") from exc
    return ff


def load_feeder_file(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read feeder file {path}: {exc}") from exc
    return _parse_sections(_Lines(path, text, FEEDER_HEADER))


def load_loads_file(path):
    path = Path(path)
    ff = _parse_sections(_Lines(path, path.read_text(), LOADS_HEADER))
    if ff.load_p_kw is None or ff.load_q_kw is None:
        raise ParseError(path, 1, "loads file must define load_p and load_q")
    return ff


def load_prices_file(path):
    path = Path(path)
    ff = _parse_sections(_Lines(path, path.read_text(), PRICES_HEADER))
    if ff.price_kwh is None or ff.c_loss_kwh is None:
        raise ParseError(path, 1, "prices file must define c_loss and price")
    return ff


def save_feeder_file(path, feeder, pv_specs=(), bes_specs=(), horizon=None,
                     dt=None, load_p_kw=None, load_q_kw=None,
                     c_loss_kwh=None, price_kwh=None):
    out = [FEEDER_HEADER,
           "base " + _fmt_row([feeder.s_base, feeder.v_base]),
           "v0 " + _fmt(feeder.v0),
           "epsilon " + _fmt(feeder.epsilon),
           f"nodes {feeder.n_nodes}"]
    if horizon is not None:
        out.append(f"horizon {horizon}")
    if dt is not None:
        out.append("dt " + _fmt(dt))
    for child in feeder.order[1:]:
        out.append("branch " + f"{child} {feeder.parent[child]} "
                   + _fmt_row([feeder.r[child], feeder.x[child]]))
    for pv in pv_specs:
        out.append(f"pv {pv.node} " + _fmt(pv.s_w))
    for b in bes_specs:
        out.append(f"bes {b.node} " + _fmt_row(
            [b.e_cap, b.ch_max, b.dis_max, b.eta_c, b.eta_d, b.soc_min,
             b.soc_max, b.soc_init, b.soc_end_lo, b.soc_end_hi,
             b.stress.k1, b.stress.k2, b.c_bes]))
    if c_loss_kwh is not None:
        out.append("c_loss " + _fmt(c_loss_kwh))
    if price_kwh is not None:
        out.append("price " + _fmt_row(price_kwh))
    if load_p_kw is not None:
        out.append("load_p")
        out.extend(_fmt_row(row) for row in load_p_kw)
    if load_q_kw is not None:
        out.append("load_q")
        out.extend(_fmt_row(row) for row in load_q_kw)
    Path(path).write_text("\n".join(out) + "\n")


def assemble_instance(feeder_file, scenario_set, loads=None, prices=None):
    """DopfInstance from parsed files, converting human units to solver units."""
    ff = feeder_file
    loads = loads if loads is not None else ff
    prices = prices if prices is not None else ff
    missing = [name for name, val in [
        ("feeder topology", ff.feeder), ("load_p", loads.load_p_kw),
        ("load_q", loads.load_q_kw), ("dt", loads.dt if loads.dt is not None else ff.dt),
        ("c_loss", prices.c_loss_kwh), ("price", prices.price_kwh)]
        if val is None]
    if missing:
        raise InputError("instance is missing " + ", ".join(missing))
    dt = loads.dt if loads.dt is not None else ff.dt
    s_base = ff.feeder.s_base
    cost = CostConfig(c_loss=prices.c_loss_kwh * s_base * dt,
                      purchase_price=np.asarray(prices.price_kwh) * s_base * dt)
    return DopfInstance(
        feeder=ff.feeder,
        load_p=ff.feeder.kw_to_pu(loads.load_p_kw),
        load_q=ff.feeder.kw_to_pu(loads.load_q_kw),
        pv_specs=ff.pv_specs, bes_specs=ff.bes_specs,
        scenarios=scenario_set, cost=cost, dt=dt)


# --------------------------------------------------------------------------
# scenarios / forecasts / history
# --------------------------------------------------------------------------

def save_scenarios(path, scenario_set):
    s_count, t_count, i_count = scenario_set.values.shape
    out = [SCENARIO_HEADER, f"{s_count} {t_count} {i_count}"]
    if i_count:
        for s in range(s_count):
            for t in range(t_count):
                out.append(_fmt_row(scenario_set.values[s, t]))
    out.extend(_fmt(p) for p in scenario_set.probabilities)
    Path(path).write_text("\n".join(out) + "\n")


def load_scenarios(path):
    path = Path(path)
    lines = _Lines(path, path.read_text(), SCENARIO_HEADER)
    lineno, text = lines.take(1, "scenario size header")[0]
    fields = text.split()
    if len(fields) != 3:
        raise ParseError(path, lineno, "size header must be `S T I`")
    s_count = _int(path, lineno, fields[0], "S")
    t_count = _int(path, lineno, fields[1], "T")
    i_count = _int(path, lineno, fields[2], "I")
    if min(s_count, t_count) < 1 or i_count < 0:
        raise ParseError(path, lineno, "S and T must be positive, I nonnegative")
    values = np.empty((s_count, t_count, i_count))
    if i_count:
        rows = lines.take(s_count * t_count, "scenario values")
        for k, (ln, tx) in enumerate(rows):
            values[k // t_count, k % t_count] = _floats(
                path, ln, tx.split(), i_count, "scenario values")
    probs = []
    for ln, tx in lines.take(s_count, "probabilities"):
        probs.extend(_floats(path, ln, tx.split(), 1, "probability"))
    try:
        return ScenarioSet(values=values,
                           probabilities=np.array(probs)).validate()
    except InputError as exc:
        raise ParseError(path, len(lines.raw), str(exc)) from exc


def save_forecasts(path, forecasts_kw):
    forecasts_kw = np.asarray(forecasts_kw, dtype=float)
    t_count, i_count = forecasts_kw.shape
    out = [FORECAST_HEADER, f"{t_count} {i_count}"]
    out.extend(_fmt_row(row) for row in forecasts_kw)
    Path(path).write_text("\n".join(out) + "\n")


def load_forecasts(path):
    path = Path(path)
    lines = _Lines(path, path.read_text(), FORECAST_HEADER)
    lineno, text = lines.take(1, "forecast size header")[0]
    fields = text.split()
    if len(fields) != 2:
        raise ParseError(path, lineno, "size header must be `T I`")
    t_count = _int(path, lineno, fields[0], "T")
    i_count = _int(path, lineno, fields[1], "I")
    rows = lines.take(t_count, "forecast rows")
    return np.array([_floats(path, ln, tx.split(), i_count, "forecast row")
                     for ln, tx in rows])


def save_history_csv(path, history, names=None):
    history = np.asarray(history, dtype=float)
    i2 = history.shape[1]
    if names is None:
        i_count = i2 // 2
        names = [f"actual_{i + 1}" for i in range(i_count)] \
            + [f"forecast_{i + 1}" for i in range(i_count)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in history:
            writer.writerow([_fmt(v) for v in row])


def load_history_csv(path):
    """(n, 2I) history matrix plus column names from a CSV file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read history file {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        names = next(reader)
    except StopIteration:
        raise ParseError(path, 1, "history CSV is empty") from None
    if len(names) < 2 or len(names) % 2:
        raise ParseError(path, 1,
                         f"history needs an even number >= 2 of columns, got {len(names)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        rows.append(_floats(path, lineno, row, len(names), "history row"))
    if not rows:
        raise ParseError(path, 1, "history CSV has no data rows")
    return np.array(rows), [n.strip() for n in names]


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------

def save_schedule(path, schedule, objective=None):
    s_count, t_count, i_count = schedule.q_pv.shape
    out = [SCHEDULE_HEADER,
           f"{s_count} {t_count} {i_count} {len(schedule.bes)}"]
    if objective is not None:
        out.append("objective " + _fmt(objective))
    if schedule.breakdown:
        for key in sorted(schedule.breakdown):
            out.append(f"cost {key} " + _fmt(schedule.breakdown[key]))
    for j, b in enumerate(schedule.bes):
        out.append(f"bes {j}")
        for t in range(t_count):
            out.append(_fmt_row([b.p_ch[t], b.p_dis[t]]))
    out.append("q_pv")
    if i_count:
        for s in range(s_count):
            for t in range(t_count):
                out.append(_fmt_row(schedule.q_pv[s, t]))
    Path(path).write_text("\n".join(out) + "\n")


def load_schedule(path, instance):
    """Rebuild a schedule against its instance; SoC is re-simulated."""
    from .dispatch import DispatchSchedule

    path = Path(path)
    lines = _Lines(path, path.read_text(), SCHEDULE_HEADER)
    lineno, text = lines.take(1, "schedule size header")[0]
    dims = _floats(path, lineno, text.split(), 4, "size header (S T I J)")
    s_count, t_count, i_count, j_count = (int(v) for v in dims)
    if (s_count, t_count, i_count) != (instance.S, instance.T, instance.I) \
            or j_count != instance.J:
        raise ParseError(path, lineno,
                         f"schedule dims {dims} do not match the instance")
    bes = [None] * j_count
    q_pv = None
    for lineno, text in lines:
        fields = text.split()
        if fields[0] == "objective" or fields[0] == "cost":
            continue
        if fields[0] == "bes":
            j = _int(path, lineno, fields[1], "battery index")
            if not 0 <= j < j_count:
                raise ParseError(path, lineno, f"battery index {j} out of range")
            rows = _read_table(lines, t_count, 2, "bes power row")
            spec = instance.bes_specs[j]
            bes[j] = BesSchedule(p_ch=rows[:, 0], p_dis=rows[:, 1],
                                 soc=simulate_soc(spec, rows[:, 0],
                                                  rows[:, 1], instance.dt))
        elif fields[0] == "q_pv":
            if i_count:
                q_pv = _read_table(lines, s_count * t_count, i_count, "q_pv row")
                q_pv = q_pv.reshape(s_count, t_count, i_count)
            else:
                q_pv = np.zeros((s_count, t_count, 0))
        else:
            raise ParseError(path, lineno, f"unknown schedule record {fields[0]!r}")
    if q_pv is None or any(b is None for b in bes):
        raise ParseError(path, len(lines.raw),
                         "schedule file is missing q_pv or a bes block")
    return DispatchSchedule(q_pv=q_pv, bes=bes)


# --------------------------------------------------------------------------
# run configs
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    feeder: Path = None
    loads: Path = None
    prices: Path = None
    scenarios: Path = None
    history: Path = None
    forecasts: Path = None
    test_scenarios: Path = None
    schedule: Path = None
    method: str = "dual"
    seed: int = 0
    n_scenarios: int = 20
    time_ar1: float = 0.0
    sampling: str = "copula"     # copula | independent | deterministic
    output: Path = Path(".")
    rho: float = 1e-3
    gamma: float = None          # None = auto step
    max_iterations: int = 500
    step_rule: str = "constant"
    init: str = "price"
    threads: int = 1
    degradation: str = "rainflow"
    s_values: tuple = ()         # scaling study scenario counts

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise InputError("config is missing " + ", ".join(missing))


_CONFIG_PATHS = ("feeder", "loads", "prices", "scenarios", "history",
                 "forecasts", "test_scenarios", "schedule", "output")
_CONFIG_INTS = ("seed", "n_scenarios", "max_iterations", "threads")
_CONFIG_FLOATS = ("time_ar1", "rho", "gamma")
_CONFIG_STRS = ("method", "step_rule", "init", "degradation", "sampling")


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    lines = _Lines(path, text, CONFIG_HEADER)
    cfg = RunConfig()
    base = path.parent
    for lineno, line in lines:
        fields = line.split(None, 1)
        if len(fields) != 2:
            raise ParseError(path, lineno, f"config line needs `key value`: {line!r}")
        key, value = fields[0], fields[1].strip()
        if key in _CONFIG_PATHS:
            setattr(cfg, key, (base / value).resolve())
        elif key in _CONFIG_INTS:
            setattr(cfg, key, _int(path, lineno, value, key))
        elif key in _CONFIG_FLOATS:
            (val,) = _floats(path, lineno, [value], 1, key)
            setattr(cfg, key, val)
        elif key in _CONFIG_STRS:
            setattr(cfg, key, value)
        elif key == "s_values":
            cfg.s_values = tuple(_int(path, lineno, v, "s_values entry")
                                 for v in value.split())
        else:
            raise ParseError(path, lineno, f"unknown config key {key!r}")
    return cfg


# --------------------------------------------------------------------------
# report CSVs
# --------------------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_cost_csv(path, reports):
    """One row per labeled CostReport: {label: CostReport}."""
    header = ["schedule", "modeled_bes_cost", "peak_shaving_benefit",
              "modeled_net_benefit", "actual_bes_cost", "actual_net_benefit",
              "life_expectancy_years"]
    rows = []
    for label, rep in reports.items():
        life = rep.life_expectancy_years
        rows.append([label] + [_fmt(v) for v in
                               (rep.modeled_bes_cost, rep.peak_shaving_benefit,
                                rep.modeled_net_benefit, rep.actual_bes_cost,
                                rep.actual_net_benefit)]
                    + ["inf" if np.isinf(life) else _fmt(life)])
    _write_csv(path, header, rows)


def write_instability_csv(path, reports):
    """One row per labeled InstabilityReport: {label: report}."""
    header = ["schedule", "tested", "violating", "probability"]
    rows = [[label, rep.tested, rep.violating, _fmt(rep.probability)]
            for label, rep in reports.items()]
    _write_csv(path, header, rows)


def write_scaling_csv(path, rows, fit=None):
    header = ["scenarios", "subproblems", "wall_time_s", "dual_value"]
    data = [[r.s_count, r.subproblems, _fmt(r.wall_time), _fmt(r.dual_value)]
            for r in rows]
    if fit is not None:
        data.append(["# sse_linear", _fmt(fit["sse_linear"]),
                     "sse_quadratic", _fmt(fit["sse_quadratic"])])
    _write_csv(path, header, data)


def write_band_csv(path, bands):
    """{coverage_level: (T, 2) lo/hi} -> long-format CSV."""
    header = ["level", "interval", "low_kw", "high_kw"]
    rows = []
    for level in sorted(bands):
        band = bands[level]
        for t in range(band.shape[0]):
            rows.append([_fmt(level), t, _fmt(band[t, 0]), _fmt(band[t, 1])])
    _write_csv(path, header, rows)
