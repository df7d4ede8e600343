"""Regenerate the bundled example data under src/dopfkit/data/.

Everything here is synthetic but sized like a small distribution feeder.
The chain8 example is the tuned stochastic showcase: its history, forecast,
and feeder files are inputs to the scenario-training comparisons, so the
numbers below are frozen -- regenerating must reproduce the same bytes.
"""
import pathlib
import sys

import numpy as np
from scipy.special import ndtr

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from dopfkit.fileio import (save_feeder_file, save_forecasts,
                            save_history_csv, save_scenarios)
from dopfkit.network import Feeder
from dopfkit.scenarios import (PvSpec, ScenarioSet, fit_gaussian_copula,
                               generate_scenarios)
from dopfkit.storage import BesSpec, StressModel

DATA = pathlib.Path(__file__).resolve().parents[1] / "src" / "dopfkit" / "data"


def factor_history(w_max, n, seed, unit_rho=0.95, forecast_rho=0.65):
    """Correlated PV history: one sky factor, per-unit noise, clipped output.

    Columns are actual_1..actual_I then forecast_1..forecast_I, in kW.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(n)
    actual, forecast = [], []
    for w in w_max:
        a = unit_rho * g + np.sqrt(1 - unit_rho**2) * rng.standard_normal(n)
        f = forecast_rho * a \
            + np.sqrt(1 - forecast_rho**2) * rng.standard_normal(n)
        actual.append(w * (0.05 + 0.9 * ndtr(a)))
        forecast.append(w * (0.05 + 0.9 * ndtr(f)))
    return np.column_stack(actual + forecast)


def build_two_node():
    """Textbook two-node feeder: 100 kW load behind one 0.02 pu branch.

    With load_q = 0 the open-circuit voltage drop is r * p = 0.002, i.e.
    V1 = 0.998 -- handy as a first sanity check of any flow code.
    """
    feeder = Feeder(2, [(1, 0, 0.02, 0.01)], epsilon=0.05, s_base=1000.0)
    t_count = 4
    load_p = np.tile([0.0, 100.0], (t_count, 1))
    load_q = np.zeros_like(load_p)
    save_feeder_file(DATA / "two_node.feeder", feeder,
                     horizon=t_count, dt=1.0,
                     load_p_kw=load_p, load_q_kw=load_q,
                     c_loss_kwh=0.05, price_kwh=np.full(t_count, 0.05))
    save_scenarios(DATA / "two_node.scen",
                   ScenarioSet(values=np.zeros((1, t_count, 0)),
                               probabilities=np.array([1.0])))


def build_star3():
    """Root plus three spokes; one PV and one battery on separate spokes."""
    feeder = Feeder(4, [(1, 0, 0.03, 0.02), (2, 0, 0.05, 0.03),
                        (3, 0, 0.04, 0.025)], epsilon=0.05, s_base=1000.0)
    t_count = 4
    shape = np.array([0.9, 1.0, 1.1, 1.0])
    load_p = np.outer(shape, [0.0, 80.0, 120.0, 60.0])
    save_feeder_file(DATA / "star3.feeder", feeder,
                     pv_specs=[PvSpec(node=2, s_w=220.0)],
                     bes_specs=[BesSpec(node=3, e_cap=60.0, ch_max=30.0,
                                        dis_max=30.0, soc_init=0.5,
                                        soc_end_lo=0.4, soc_end_hi=0.6)],
                     horizon=t_count, dt=1.0,
                     load_p_kw=load_p, load_q_kw=0.35 * load_p,
                     c_loss_kwh=0.05,
                     price_kwh=np.array([0.04, 0.06, 0.12, 0.05]))


# chain8: frozen tuning for the stochastic-training and wear-model studies.
CHAIN8_SUN = np.array([0.3, 0.55, 0.85, 0.95, 0.75, 0.25, 0.08, 0.0])
CHAIN8_FC_SCALE = 0.72
CHAIN8_PRICE = np.array([0.03, 0.03, 0.05, 0.07, 0.19, 0.035, 0.034, 0.040])
CHAIN8_CAPS = (350.0, 300.0)       # kVA at nodes 5 and 7
CHAIN8_HISTORY_SEED = 4242


def build_chain8():
    t_count = 8
    feeder = Feeder(8, [(i + 1, i, 0.045, 0.03) for i in range(7)],
                    epsilon=0.045, s_base=1000.0)
    pv = [PvSpec(node=5, s_w=CHAIN8_CAPS[0]),
          PvSpec(node=7, s_w=CHAIN8_CAPS[1])]
    # battery sits at the far PV node so its discharge moves the binding
    # voltage; it starts at the corridor floor so the daily cycle is symmetric
    bes = [BesSpec(node=7, e_cap=120.0, ch_max=100.0, dis_max=100.0,
                   eta_c=0.95, eta_d=0.95, soc_min=0.1, soc_max=0.9,
                   soc_init=0.1, soc_end_lo=0.1, soc_end_hi=0.5,
                   stress=StressModel(k1=3.5e-4, k2=2.2), c_bes=150.0)]
    shape = np.array([0.7, 0.8, 0.9, 1.0, 1.0, 1.1, 1.2, 1.2])
    per_node = np.array([0.0, 4, 5, 4, 6, 3, 4, 4]) * 5.0
    load_p = np.outer(shape, per_node)
    save_feeder_file(DATA / "chain8.feeder", feeder, pv_specs=pv,
                     bes_specs=bes, horizon=t_count, dt=1.0,
                     load_p_kw=load_p, load_q_kw=0.35 * load_p,
                     c_loss_kwh=0.05, price_kwh=CHAIN8_PRICE)
    w_max = np.array([p.w_max for p in pv])
    save_history_csv(DATA / "chain8_history.csv",
                     factor_history(w_max, n=200, seed=CHAIN8_HISTORY_SEED))
    save_forecasts(DATA / "chain8_forecast.txt",
                   np.outer(CHAIN8_SUN * CHAIN8_FC_SCALE, w_max))


def build_tree24():
    """24-node tree: 8-node trunk, four 3-node laterals, one 4-node lateral."""
    branches = [(i + 1, i, 0.02, 0.012) for i in range(7)]        # trunk
    laterals = [(8, 2), (9, 8), (10, 9),
                (11, 3), (12, 11), (13, 12),
                (14, 5), (15, 14), (16, 15),
                (17, 6), (18, 17), (19, 18),
                (20, 7), (21, 20), (22, 21), (23, 22)]
    branches += [(c, p, 0.03, 0.018) for c, p in laterals]
    feeder = Feeder(24, branches, epsilon=0.06, s_base=4000.0)
    pv = [PvSpec(node=n, s_w=450.0) for n in (10, 13, 16, 23)] \
        + [PvSpec(node=n, s_w=300.0) for n in (9, 12, 19, 21)]
    bes = [BesSpec(node=n, e_cap=75.0, ch_max=75.0, dis_max=75.0,
                   soc_init=0.5, soc_end_lo=0.4, soc_end_hi=0.6,
                   stress=StressModel(k1=4.5e-4, k2=2.2), c_bes=150.0)
           for n in (2, 8, 11, 14, 17, 20)]
    t_count = 24
    hours = np.arange(t_count)
    shape = 0.65 + 0.25 * np.exp(-0.5 * ((hours - 19) / 2.5) ** 2) \
        + 0.10 * np.exp(-0.5 * ((hours - 8) / 2.0) ** 2)
    per_node = np.zeros(24)
    per_node[1:] = 40.0 + 10.0 * (np.arange(1, 24) % 5)
    load_p = np.outer(shape, per_node)
    price = np.full(t_count, 0.04)
    price[6:10] = 0.07
    price[10:16] = 0.05
    price[17:22] = 0.15
    save_feeder_file(DATA / "tree24.feeder", feeder, pv_specs=pv,
                     bes_specs=bes, horizon=t_count, dt=1.0,
                     load_p_kw=load_p, load_q_kw=0.3 * load_p,
                     c_loss_kwh=0.05, price_kwh=price)
    # bundled scenario set: copula-sampled from a synthetic clear-to-cloudy mix
    sun = np.exp(-0.5 * ((hours - 12.5) / 3.2) ** 2)
    sun[sun < 0.02] = 0.0
    w_max = np.array([p.w_max for p in pv])
    history = factor_history(w_max, n=300, seed=777)
    fc = np.outer(0.7 * sun, w_max)
    sset = generate_scenarios(pv, fc, 21, seed=321,
                              copula=fit_gaussian_copula(history))
    save_scenarios(DATA / "tree24.scen", sset)


def main():
    DATA.mkdir(exist_ok=True)
    build_two_node()
    build_star3()
    build_chain8()
    build_tree24()
    for path in sorted(DATA.iterdir()):
        print(f"{path.name:22s} {path.stat().st_size:7d} bytes")


if __name__ == "__main__":
    main()
