"""Command-line experiment harness.

    irsvlc impulse --user 2.5,2.5,1 --out ir.csv
    irsvlc sweep-power --trials 100 --out power.csv
    irsvlc sweep-blockage --trials 100 --out blockage.csv
    irsvlc solve --rho 0.5 --seed 3 --out report.json
    irsvlc default-scenario --out scenario.json

Every command is a pure function of the scenario file, flags and seeds.
Exit status: 0 on success, 2 on invalid input, 1 on internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import sys
from enum import Enum
from pathlib import Path

import numpy as np

from .allocation import UNASSIGNED, SearchSpaceError, evaluate, sample_blockage, solve
from .channel import CSV_CLASS_COLUMNS, ChannelModel, impulse_response
from .scene import (DEFAULT_SCENARIO_FILE, ScenarioError, UserPlacement, default_scenario,
                    dump_scenario, load_scenario_file, place_users)

log = logging.getLogger("irsvlc")

DEFAULT_POWER_GRID = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
DEFAULT_RHO_GRID = tuple(round(0.1 * i, 1) for i in range(11))


class ChannelVariant(Enum):
    LOS_ONLY = "LoSOnly"
    LOS_PLUS_DIFFUSE = "LoSPlusDiffuse"
    IRS_1_ARRAY = "IRS_1Array"
    IRS_2_ARRAYS = "IRS_2Arrays"

    def apply(self, tensor):
        """Mask tensor components; the scene geometry is left untouched."""
        if self is ChannelVariant.LOS_ONLY:
            return tensor.masked(diffuse=False, arrays=[])
        if self is ChannelVariant.LOS_PLUS_DIFFUSE:
            return tensor.masked(arrays=[])
        if self is ChannelVariant.IRS_1_ARRAY:
            return tensor.masked(arrays=[0])
        return tensor.masked(arrays=[0, 1])


ALL_VARIANTS = tuple(ChannelVariant)


def parse_variants(text):
    if text is None:
        return ALL_VARIANTS
    out = []
    for name in text.split(","):
        try:
            out.append(ChannelVariant(name.strip()))
        except ValueError:
            raise ValueError(f"unknown variant {name.strip()!r}; "
                             f"choose from {[v.value for v in ChannelVariant]}") from None
    return tuple(out)


def parse_grid(text, default):
    if text is None:
        return tuple(default)
    grid = tuple(float(v) for v in text.split(","))
    if not grid:
        raise ValueError("grid must not be empty")
    if list(grid) != sorted(grid):
        raise ValueError("grid must be sorted ascending")
    return grid


def parse_vec3(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise ValueError("expected x,y,z")
    return tuple(parts)


def fmt(x) -> str:
    return f"{x:.9g}"


def load(path):
    return load_scenario_file(path if path else DEFAULT_SCENARIO_FILE)


def _scenario_digest(scenario) -> str:
    return hashlib.sha256(dump_scenario(scenario).encode()).hexdigest()[:16]


# -- impulse ---------------------------------------------------------------------

def impulse_csv(scenario, user_position, model=None) -> str:
    """Per-AP impulse responses, each for the branch with the largest DC gain."""
    if not scenario.room.contains(user_position):
        raise ValueError(f"user position {user_position} outside the room")
    model = model or ChannelModel(scenario)
    tensor = model.gain_tensor([user_position])
    total = tensor.los[0] + tensor.diff[0] + tensor.irs[0].sum(axis=-1)     # (B, L)
    buf = io.StringIO()
    buf.write("ap,branch,t_ns,total," + ",".join(CSV_CLASS_COLUMNS) + "\n")
    for l in range(len(scenario.aps)):
        b = int(np.argmax(total[:, l]))
        ir = impulse_response(model.paths(user_position, l, b), scenario.time_bin_ns)
        for row in ir.rows():
            buf.write(f"{l},{b}," + ",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def cmd_impulse(scenario_path, user_position, out_path):
    scenario = load(scenario_path)
    Path(out_path).write_text(impulse_csv(scenario, user_position))


# -- sweeps ------------------------------------------------------------------------

def _trial_tensor(scenario, model, seed):
    if isinstance(scenario.users, UserPlacement):
        users = place_users(scenario.users, scenario.room, scenario.adr.mount_height_m, rng_seed=seed)
    else:
        users = scenario.user_positions()
    return model.gain_tensor(users)


def _mask_seed(seed):
    # separate stream from user placement; shared across the rho grid so that
    # blocked links stay blocked as rho grows
    return [int(seed), 1]


def _run_trial(scenario, variable, grid, variants, seed, model=None):
    """Sum rates ``[grid_index][variant_index]`` for one trial."""
    model = model or ChannelModel(scenario)
    tensor = _trial_tensor(scenario, model, seed)
    K, L = tensor.num_users, tensor.num_aps
    masked = [v.apply(tensor) for v in variants]
    out = []
    for x in grid:
        if variable == "power_w":
            sc, mask = scenario.with_power(x), None
        else:
            sc, mask = scenario, sample_blockage(x, (K, L), _mask_seed(seed))
        out.append([solve(sc, mask, t)[1].sum_rate for t in masked])
    return out


def run_sweep(scenario, variable, grid, variants, trials, seed_base, jobs=1):
    """Mean and population stddev of the solved sum rate per (grid point, variant)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if variable == "blockage_ratio" and not all(0.0 <= x <= 1.0 for x in grid):
        raise ValueError("blockage ratios must lie in [0, 1]")
    seeds = [seed_base + t for t in range(trials)]
    if jobs == 1:
        model = ChannelModel(scenario)
        results = [_run_trial(scenario, variable, grid, variants, s, model) for s in seeds]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(
            delayed(_run_trial)(scenario, variable, grid, variants, s) for s in seeds)
    arr = np.array(results)                     # (trials, grid, variants)
    return arr.mean(axis=0), arr.std(axis=0)


def sweep_csv(scenario, variable, grid, variants, trials, seed_base, jobs=1):
    mean, std = run_sweep(scenario, variable, grid, variants, trials, seed_base, jobs)
    col = "power_w" if variable == "power_w" else "rho"
    buf = io.StringIO()
    buf.write(f"{col},variant,mean_sum_rate_bps_hz,stddev,trials\n")
    for i, x in enumerate(grid):
        for j, v in enumerate(variants):
            buf.write(f"{fmt(x)},{v.value},{fmt(mean[i, j])},{fmt(std[i, j])},{trials}\n")
    return buf.getvalue()


def _write_sweep(scenario_path, variable, grid, grid_is_default, variants, trials, seed,
                 out_path, jobs):
    scenario = load(scenario_path)
    text = sweep_csv(scenario, variable, grid, variants, trials, seed, jobs)
    out = Path(out_path)
    out.write_text(text)
    meta = {
        "variable": variable,
        "grid": list(grid),
        "grid_source": "default" if grid_is_default else "user",
        "variants": [v.value for v in variants],
        "trials": trials,
        "seed_base": seed,
        "scenario_sha256_16": _scenario_digest(scenario),
    }
    out.with_name(out.name + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def cmd_sweep_power(scenario_path, grid, variants, trials, seed, out_path, jobs=1, grid_is_default=False):
    _write_sweep(scenario_path, "power_w", grid, grid_is_default, variants, trials, seed, out_path, jobs)


def cmd_sweep_blockage(scenario_path, grid, variants, trials, seed, out_path, jobs=1, grid_is_default=False):
    _write_sweep(scenario_path, "blockage_ratio", grid, grid_is_default, variants, trials, seed,
                 out_path, jobs)


# -- solve -------------------------------------------------------------------------

def solve_report(scenario, rho, seed):
    model = ChannelModel(scenario)
    users = scenario.user_positions()
    tensor = model.gain_tensor(users)
    mask = sample_blockage(rho, (tensor.num_users, tensor.num_aps), _mask_seed(seed))
    assignment, report = solve(scenario, mask, tensor)
    doc = {
        "rho": rho,
        "seed": seed,
        "users": [list(map(float, u)) for u in users],
        "blockage_mask": mask.tolist(),
        "ap_of_user": list(assignment.ap_of_user),
        "user_of_mirror": ["unassigned" if u == UNASSIGNED else u for u in assignment.user_of_mirror],
        "time_fraction": list(assignment.time_fraction),
        "branches": list(report.branches),
        "snr": list(report.snr),
        "rates_bps_hz": list(report.rates),
        "sum_rate_bps_hz": report.sum_rate,
        "log_utility": report.log_utility,
    }
    return json.dumps(doc, indent=2) + "\n"


def cmd_solve(scenario_path, rho, seed, out_path):
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    Path(out_path).write_text(solve_report(load(scenario_path), rho, seed))


def reevaluate_report(scenario, text):
    """Sum rate of a solve report's assignment, recomputed from scratch."""
    from .allocation import Assignment
    doc = json.loads(text)
    model = ChannelModel(scenario)
    tensor = model.gain_tensor(doc["users"])
    mirrors = tuple(UNASSIGNED if u == "unassigned" else u for u in doc["user_of_mirror"])
    a = Assignment(tuple(doc["ap_of_user"]), mirrors, tuple(doc["time_fraction"]))
    return evaluate(a, tensor, np.array(doc["blockage_mask"]), scenario).sum_rate


# -- entry point -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="irsvlc", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", help="scenario JSON (default: packaged baseline)")
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("impulse", help="impulse responses for one receiver position")
    common(sp)
    sp.add_argument("--user", required=True, help="x,y,z in metres")

    for name, help_ in (("sweep-power", "sum rate versus transmit power"),
                        ("sweep-blockage", "sum rate versus LoS blockage ratio")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--grid", help="comma-separated, ascending")
        sp.add_argument("--trials", type=int, default=100)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--variants", help="comma-separated subset of "
                        + ",".join(v.value for v in ChannelVariant))
        sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    sp = sub.add_parser("solve", help="allocate APs and mirrors for one blockage draw")
    common(sp)
    sp.add_argument("--rho", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("default-scenario", help="write the baseline scenario file")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "impulse":
            cmd_impulse(args.scenario, parse_vec3(args.user), args.out)
        elif args.command in ("sweep-power", "sweep-blockage"):
            power = args.command == "sweep-power"
            grid = parse_grid(args.grid, DEFAULT_POWER_GRID if power else DEFAULT_RHO_GRID)
            variants = parse_variants(args.variants)
            fn = cmd_sweep_power if power else cmd_sweep_blockage
            fn(args.scenario, grid, variants, args.trials, args.seed, args.out, args.jobs,
               grid_is_default=args.grid is None)
        elif args.command == "solve":
            cmd_solve(args.scenario, args.rho, args.seed, args.out)
        elif args.command == "default-scenario":
            Path(args.out).write_text(dump_scenario(default_scenario()))
    except (ScenarioError, SearchSpaceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc, OSError) else 2
    except Exception:
        log.exception("internal error")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
