"""Command-line entry points: generate-scenarios, solve, evaluate, report.

All commands read one plain-text config file and write into its output
directory.  Exit codes: 0 success/converged, 2 iteration limit reached,
3 infeasible instance, 4 bad input (missing or malformed files, bad
arguments).  Outputs are deterministic for a fixed config and seed except
for wall-time columns.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .coordinator import CoordinatorConfig, run_master, write_trace
from .dispatch import evaluate_objective
from .errors import DopfError, InfeasibleError, InputError, ParseError
from .evaluation import (
    cost_report,
    fit_scaling,
    life_expectancy_years,
    monte_carlo_voltage_test,
    no_bes_baseline,
    scaling_study,
)
from .fileio import (
    assemble_instance,
    load_config,
    load_feeder_file,
    load_forecasts,
    load_history_csv,
    load_loads_file,
    load_prices_file,
    load_scenarios,
    load_schedule,
    save_scenarios,
    save_schedule,
    write_band_csv,
    write_cost_csv,
    write_instability_csv,
    write_scaling_csv,
)
from .monolithic import solve_monolithic
from .scenarios import (
    build_marginals,
    deterministic_set,
    fit_gaussian_copula,
    generate_scenarios,
    sum_power_bands,
)

# Benchmark dimensions for the bundled example fleet: six 75 kWh units
# valued at 150 $/kWh, and the daily wear costs they are known to incur
# under no / linear / cycle-counting wear pricing.
REFERENCE_FLEET_VALUE = 6 * 75.0 * 150.0
REFERENCE_DAILY_COSTS = {"none": 73.75, "linear": 39.45, "rainflow": 15.06}
REFERENCE_LIFE_YEARS = {"none": 2.51, "linear": 4.69, "rainflow": 12.28}


def life_arithmetic_check(out=None):
    """Reproduce the reference life-expectancy figures from daily costs."""
    out = out if out is not None else sys.stdout
    ok = True
    lives = {}
    for model, daily in REFERENCE_DAILY_COSTS.items():
        years = life_expectancy_years(REFERENCE_FLEET_VALUE, daily)
        lives[model] = years
        want = REFERENCE_LIFE_YEARS[model]
        good = abs(years - want) <= 0.01 * want
        ok &= good
        print(f"{model:>8}: {daily:7.2f} $/day -> {years:6.2f} yr "
              f"(reference {want:5.2f}) {'ok' if good else 'MISMATCH'}",
              file=out)
    ratio = lives["rainflow"] / lives["none"]
    good = abs(ratio - 4.89) <= 0.01 * 4.89
    ok &= good
    print(f"   ratio: rainflow/none = {ratio:.2f} (reference 4.89) "
          f"{'ok' if good else 'MISMATCH'}", file=out)
    return ok


def _load_instance(cfg):
    cfg.require("feeder", "scenarios")
    ff = load_feeder_file(cfg.feeder)
    loads = load_loads_file(cfg.loads) if cfg.loads else None
    prices = load_prices_file(cfg.prices) if cfg.prices else None
    scen = load_scenarios(cfg.scenarios)
    return assemble_instance(ff, scen, loads=loads, prices=prices)


def _coordinator_config(cfg):
    return CoordinatorConfig(rho=cfg.rho, gamma=cfg.gamma,
                             max_iterations=cfg.max_iterations,
                             step_rule=cfg.step_rule, init=cfg.init,
                             threads=cfg.threads)


def _out_dir(cfg):
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate_scenarios(cfg):
    cfg.require("feeder", "forecasts")
    ff = load_feeder_file(cfg.feeder)
    if not ff.pv_specs:
        raise InputError("feeder file declares no pv units to sample")
    forecasts = load_forecasts(cfg.forecasts)
    if cfg.sampling == "deterministic":
        sset = deterministic_set(forecasts)
    else:
        copula = None
        if cfg.sampling == "copula":
            cfg.require("history")
            history, _ = load_history_csv(cfg.history)
            copula = fit_gaussian_copula(history)
        elif cfg.sampling != "independent":
            raise InputError(f"unknown sampling mode {cfg.sampling!r}")
        sset = generate_scenarios(ff.pv_specs, forecasts, cfg.n_scenarios,
                                  cfg.seed, copula=copula,
                                  time_ar1=cfg.time_ar1)
    out = _out_dir(cfg) / "scenarios.txt"
    save_scenarios(out, sset)
    print(f"wrote {sset.S} scenarios ({sset.T} intervals, {sset.I} units) "
          f"to {out}")
    _echo_moments(ff.pv_specs, forecasts, sset)
    return 0


def _echo_moments(pv_specs, forecasts, sset):
    if sset.S < 2:
        return
    marginals = build_marginals(pv_specs, forecasts)
    worst_mean = worst_std = 0.0
    for t in range(sset.T):
        for i in range(sset.I):
            marg = marginals[t][i]
            if marg is None:
                continue
            target_mean = marg.mu_norm * marg.w_max
            target_std = marg.sigma_norm * marg.w_max
            sample = sset.values[:, t, i]
            worst_mean = max(worst_mean,
                             abs(sample.mean() - target_mean) / target_mean)
            if target_std > 0:
                worst_std = max(worst_std,
                                abs(sample.std(ddof=1) - target_std) / target_std)
    print(f"moment check: worst mean error {worst_mean:.3%}, "
          f"worst std error {worst_std:.3%}")


def cmd_solve(cfg):
    instance = _load_instance(cfg)
    out = _out_dir(cfg)
    if cfg.method == "monolithic":
        result = solve_monolithic(instance, degradation=cfg.degradation)
        schedule, objective = result.schedule, result.objective
        reason = "converged"
        trace = []
    elif cfg.method == "dual":
        res = run_master(instance, _coordinator_config(cfg),
                         degradation=cfg.degradation)
        schedule, objective, reason = res.schedule, res.primal_value, res.reason
        trace = res.trace
        print(f"dual value {res.dual_value:.6f}, primal {res.primal_value:.6f}, "
              f"worst residual {res.worst_violation:.3e} "
              f"after {len(trace)} iterations")
    else:
        raise InputError(f"unknown method {cfg.method!r}; use dual or monolithic")
    total, parts = evaluate_objective(instance, schedule,
                                      degradation=cfg.degradation)
    save_schedule(out / "schedule.txt", schedule, objective=total)
    if trace:
        write_trace(trace, out / "trace.csv")
    for key in sorted(parts):
        print(f"{key:>12}: {parts[key]:.6f} $")
    print(f"{'total':>12}: {total:.6f} $  [{reason}]")
    return 0 if reason == "converged" else 2


def cmd_evaluate(cfg, q_zero=False):
    instance = _load_instance(cfg)
    out = _out_dir(cfg)
    schedule_path = cfg.schedule or out / "schedule.txt"
    schedule = load_schedule(schedule_path, instance)

    reports = {}
    if cfg.test_scenarios:
        test_set = load_scenarios(cfg.test_scenarios)
        rep = monte_carlo_voltage_test(schedule, instance, test_set,
                                       q_zero=q_zero)
        reports["schedule"] = rep
        write_instability_csv(out / "instability.csv", reports)
        print(f"instability: {rep.violating}/{rep.tested} test scenarios "
              f"({rep.probability:.4f})")

    coord = _coordinator_config(cfg)
    baseline = no_bes_baseline(instance, coord)
    costs = {"schedule": cost_report(schedule, instance, baseline,
                                     model=cfg.degradation)}
    write_cost_csv(out / "cost.csv", costs)
    rep = costs["schedule"]
    print(f"wear {rep.actual_bes_cost:.2f} $/day, "
          f"benefit {rep.peak_shaving_benefit:.2f} $/day, "
          f"net {rep.actual_net_benefit:.2f} $/day, "
          f"life {rep.life_expectancy_years:.2f} yr")

    bands = sum_power_bands(instance.scenarios, (0.5, 0.7, 0.9))
    write_band_csv(out / "band.csv", bands)

    if cfg.s_values:
        rows = scaling_study(instance, cfg.s_values, coord)
        fit = fit_scaling([r.s_count for r in rows],
                          [r.wall_time for r in rows]) \
            if len(rows) >= 3 else None
        write_scaling_csv(out / "scaling.csv", rows, fit)
        print(f"scaling study over S={list(cfg.s_values)} written")
    return 0


def cmd_report(cfg):
    out = _out_dir(cfg)
    printed = False
    for name in ("cost.csv", "instability.csv", "scaling.csv", "band.csv"):
        path = out / name
        if path.exists():
            print(f"--- {name} ---")
            print(path.read_text().rstrip())
            printed = True
    if not printed:
        raise InputError(f"no report files under {out}; run evaluate first")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dopfkit",
        description="Day-ahead feeder dispatch: scenario sampling, dual "
                    "decomposition solver, and schedule evaluation.")
    parser.add_argument("command",
                        choices=["generate-scenarios", "solve", "evaluate",
                                 "report"])
    parser.add_argument("--config", help="path to a run config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--method", choices=["dual", "monolithic"],
                        help="override the solver selection")
    parser.add_argument("--threads", type=int,
                        help="override the worker thread cap")
    parser.add_argument("--q-zero", action="store_true",
                        help="evaluate with reactive recourse disabled")
    parser.add_argument("--table3-check", action="store_true",
                        help="run the built-in life-expectancy arithmetic "
                             "self-check and exit")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.table3_check:
            return 0 if life_arithmetic_check() else 4
        if not args.config:
            raise InputError("--config is required")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.method is not None:
            cfg.method = args.method
        if args.threads is not None:
            if args.threads < 1:
                raise InputError("--threads must be at least 1")
            cfg.threads = args.threads
        if args.command == "generate-scenarios":
            return cmd_generate_scenarios(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, q_zero=args.q_zero)
        return cmd_report(cfg)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except (InputError, DopfError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
