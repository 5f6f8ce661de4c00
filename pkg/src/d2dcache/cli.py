"""Command-line client for the caching-policy service.

Subcommands mirror the service endpoints; the scenario file is parsed here
and shipped inline. By default the requests run against the app in-process
(no server needed); --server targets a running instance instead. Results are
emitted as CSV with a fixed 12-significant-digit decimal format, comma
separators and LF line endings; the first line is a comment carrying the
schema name and version.

The Monte Carlo seed comes from --seed when given, else from the
D2DCACHE_SEED environment variable, else 0.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import io
import os
import sys

import httpx
import yaml

SEED_ENV_VAR = "D2DCACHE_SEED"
CSV_SCHEMA_VERSION = "v1"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


def load_scenario_file(path: str) -> dict:
    """Parse the YAML scenario document; parse errors carry line/column."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", exit_code=2)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise CliError(f"{path}: parse error at {where}: {exc.problem}", exit_code=2)
    except yaml.YAMLError as exc:
        raise CliError(f"{path}: parse error: {exc}", exit_code=2)
    if not isinstance(doc, dict):
        raise CliError(f"{path}: scenario file must be a mapping", exit_code=2)
    return doc


def post(server: str | None, path: str, payload: dict) -> dict:
    """POST to a remote server or to the in-process app."""
    if server:
        with httpx.Client(base_url=server, timeout=600.0) as client:
            response = client.post(path, json=payload)
    else:
        from .service import app

        async def _call():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://d2dcache.internal", timeout=600.0
            ) as client:
                return await client.post(path, json=payload)

        response = asyncio.run(_call())
    if response.status_code != 200:
        try:
            detail = response.json().get("detail")
        except ValueError:
            detail = response.text
        if isinstance(detail, dict) and "problems" in detail:
            raise CliError("\n".join(detail["problems"]))
        raise CliError(f"service error {response.status_code}: {detail}")
    return response.json()


def _write_csv(out, schema: str, header: list[str], rows: list[list]) -> None:
    out.write(f"# d2dcache.{schema}.{CSV_SCHEMA_VERSION}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])


def _parse_sweep(text: str) -> dict:
    """--sweep start:stop:step, or a comma-separated value list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError("--sweep expects start:stop:step or v1,v2,...", exit_code=2)
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise CliError("--sweep bounds must be numbers", exit_code=2)
        return {"start": start, "stop": stop, "step": step}
    try:
        values = [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError:
        raise CliError("--sweep values must be numbers", exit_code=2)
    if not values:
        raise CliError("--sweep needs at least one value", exit_code=2)
    return {"values": values}


def _ladder_text(ladder: list[dict]) -> str:
    return ";".join(f"{_fmt(step['r'])}:{step['count_left']}" for step in ladder)


def _users_text(users: list[int]) -> str:
    return ",".join(str(u) for u in users)


def cmd_validate(args, out) -> int:
    doc = load_scenario_file(args.scenario)
    result = post(args.server, "/validate", {"scenario": doc})
    if result["valid"]:
        out.write("OK: scenario is valid\n")
        return 0
    for problem in result["problems"]:
        out.write(f"VIOLATION: {problem}\n")
    return 1


def cmd_centralized(args, out, policy: str | None = None) -> int:
    doc = load_scenario_file(args.scenario)
    payload: dict = {"scenario": doc, "policy": policy or args.policy}
    if args.r is not None:
        payload["r"] = args.r
    if args.sweep is not None:
        payload["sweep"] = _parse_sweep(args.sweep)
    result = post(args.server, "/centralized", payload)
    header = [
        "item", "r", "policy", "cache_count", "users", "load",
        "caching_cost", "total", "gain", "ladder", "skipped_levels", "work",
    ]
    rows = [
        [
            row["item"], row["r"], result["policy"], row["cache_count"],
            _users_text(row["users"]), row["load"], row["caching_cost"],
            row["total"], row["gain"], _ladder_text(row["ladder"]),
            ",".join(str(k) for k in row["skipped_levels"]), row["work"],
        ]
        for row in result["rows"]
    ]
    _write_csv(out, "centralized", header, rows)
    return 0


def cmd_bounds(args, out) -> int:
    doc = load_scenario_file(args.scenario)
    payload: dict = {"scenario": doc}
    if args.r is not None:
        payload["r"] = args.r
    if args.sweep is not None:
        payload["sweep"] = _parse_sweep(args.sweep)
    result = post(args.server, "/bounds", payload)
    header = ["r", "gain_lower", "gain_exact", "gain_upper"]
    rows = [
        [row["r"], row["gain_lower"], row["gain_exact"], row["gain_upper"]]
        for row in result["rows"]
    ]
    _write_csv(out, "bounds", header, rows)
    return 0


def cmd_decentralized(args, out) -> int:
    doc = load_scenario_file(args.scenario)
    payload: dict = {"scenario": doc, "select": args.select}
    if args.r_prime is not None:
        payload["r_prime"] = args.r_prime
    if args.sweep is not None:
        payload["sweep"] = _parse_sweep(args.sweep)
    result = post(args.server, "/decentralized", payload)
    rows_in = result["rows"]
    n_users = len(rows_in[0]["x"]) if rows_in else 0
    header = (
        ["item", "r_prime", "selection"]
        + [f"x_{n+1}" for n in range(n_users)]
        + [f"payment_{n+1}" for n in range(n_users)]
        + [f"regime_{n+1}" for n in range(n_users)]
        + ["nash_gap", "converged"]
    )
    rows = [
        [row["item"], row["r_prime"], result["selection"]]
        + row["x"] + row["payments"] + row["regimes"]
        + [row["nash_gap"], row["converged"]]
        for row in rows_in
    ]
    _write_csv(out, "decentralized", header, rows)
    return 0


def cmd_tradeoff(args, out) -> int:
    doc = load_scenario_file(args.scenario)
    payload: dict = {"scenario": doc, "side": args.side}
    if args.beta is not None:
        payload["beta"] = args.beta
    if args.gamma is not None:
        payload["gamma"] = args.gamma
    result = post(args.server, "/tradeoff", payload)
    header = ["scope", "row_type", "z_lo", "z_hi", "value"]
    rows = []
    for block in result["blocks"]:
        for level in block["levels"]:
            rows.append([block["scope"], "level", level["z_lo"], level["z_hi"], level["level"]])
        rows.append([block["scope"], "intersection", block["z_star"], None, block["r_star"]])
    _write_csv(out, "tradeoff", header, rows)
    return 0


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"{SEED_ENV_VAR} must be an integer, got {env!r}", exit_code=2)
    return 0


def cmd_simulate(args, out) -> int:
    doc = load_scenario_file(args.scenario)
    payload: dict = {
        "scenario": doc,
        "alloc": args.alloc,
        "replications": args.reps,
        "seed": _resolve_seed(args),
        "lanes": args.lanes,
    }
    if args.alloc == "explicit":
        if args.alloc_path is None:
            raise CliError("--alloc explicit needs --alloc-path", exit_code=2)
        alloc_doc = load_scenario_file(args.alloc_path)
        if "x" not in alloc_doc:
            raise CliError(f"{args.alloc_path}: expected a top-level 'x' matrix", exit_code=2)
        payload["x"] = alloc_doc["x"]
    if args.r is not None:
        payload["r"] = args.r
    if args.r_prime is not None:
        payload["r_prime"] = args.r_prime
    result = post(args.server, "/simulate", payload)
    header = ["quantity", "index", "empirical", "stderr", "analytic", "z"]
    rows = [
        ["replications", None, result["replications"], None, None, None],
        ["seed", None, result["seed"], None, None, None],
        ["lanes", None, result["lanes"], None, None, None],
        ["price", None, result["price"], None, None, None],
    ]
    for t, (mean, err, ana) in enumerate(
        zip(result["slot_load_mean"], result["slot_load_stderr"], result["slot_load_analytic"])
    ):
        rows.append(["slot_load", t + 1, mean, err, ana, None])
    rows.append(
        [
            "avg_load", None, result["avg_load_mean"], result["avg_load_stderr"],
            result["avg_load_analytic"], result["load_z"],
        ]
    )
    for n, (mean, err, ana, z) in enumerate(
        zip(
            result["payment_mean"], result["payment_stderr"],
            result["payment_analytic"], result["payment_z"],
        )
    ):
        rows.append(["payment", n + 1, mean, err, ana, z])
    rows.append(
        [
            "avg_load_literal_form", None, result["avg_load_mean"], result["avg_load_stderr"],
            result["literal_load_analytic"], result["literal_load_z"],
        ]
    )
    rows.append(["max_abs_z", None, result["max_abs_z"], None, None, None])
    _write_csv(out, "simulate", header, rows)
    if result["max_abs_z"] > args.z_threshold:
        sys.stderr.write(
            f"max |z| = {result['max_abs_z']:.3f} exceeds threshold {args.z_threshold}\n"
        )
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="d2dcache",
        description="Compute, bound and validate mobility-aware D2D caching policies.",
        epilog=(
            "CSV output: first line '# d2dcache.<schema>.v1', then a header row and "
            "data rows; decimals use '.', 12 significant digits, LF endings. "
            f"Monte Carlo seed: --seed wins over the {SEED_ENV_VAR} environment variable."
        ),
    )
    parser.add_argument("--server", help="base URL of a running service (default: in-process)")
    parser.add_argument("--out", help="write output to this file instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario(p):
        p.add_argument("scenario", help="path to the YAML scenario file")

    p = sub.add_parser("validate", help="check a scenario file; exit 0 iff valid")
    add_scenario(p)

    for name, policy in (("centralized", None), ("greedy", "greedy")):
        p = sub.add_parser(
            name,
            help="compute the caching policy and reward ladder"
            + (" (greedy alias)" if policy else ""),
        )
        add_scenario(p)
        if policy is None:
            p.add_argument("--policy", choices=["optimal", "greedy"], default="optimal")
        p.add_argument("--r", type=float, help="reward per byte in [0, 1]")
        p.add_argument("--sweep", help="reward grid: start:stop:step or v1,v2,...")

    p = sub.add_parser("bounds", help="greedy lower / exact / additive upper gain")
    add_scenario(p)
    p.add_argument("--r", type=float)
    p.add_argument("--sweep")

    p = sub.add_parser("decentralized", help="users' game equilibrium per item")
    add_scenario(p)
    p.add_argument("--r-prime", dest="r_prime", type=float, help="off-peak price in [0, 1]")
    p.add_argument("--sweep", help="price grid: start:stop:step or v1,v2,...")
    p.add_argument("--select", choices=["fair", "risk"], default="fair")

    p = sub.add_parser("tradeoff", help="multiplier staircases and intersections")
    add_scenario(p)
    p.add_argument("--side", choices=["sp", "users"], required=True)
    p.add_argument("--beta", type=float, help="users' memory-per-reward slope (sp side)")
    p.add_argument("--gamma", type=float, help="provider price-per-memory slope (users side)")

    p = sub.add_parser("simulate", help="Monte Carlo validation of the load model")
    add_scenario(p)
    p.add_argument("--alloc", choices=["optimal", "greedy", "fair", "explicit"], default="optimal")
    p.add_argument("--alloc-path", help="YAML file with an explicit 'x' matrix (bytes)")
    p.add_argument("--r", type=float, help="reward used to build optimal/greedy allocations")
    p.add_argument("--r-prime", dest="r_prime", type=float, help="price used for payments")
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lanes", type=int, default=1)
    p.add_argument("--z-threshold", dest="z_threshold", type=float, default=5.0)
    return parser


_COMMANDS = {
    "validate": cmd_validate,
    "bounds": cmd_bounds,
    "decentralized": cmd_decentralized,
    "tradeoff": cmd_tradeoff,
    "simulate": cmd_simulate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        buffer = io.StringIO()
        if args.command == "centralized":
            code = cmd_centralized(args, buffer)
        elif args.command == "greedy":
            code = cmd_centralized(args, buffer, policy="greedy")
        else:
            code = _COMMANDS[args.command](args, buffer)
        text = buffer.getvalue()
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return code
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except httpx.HTTPError as exc:
        sys.stderr.write(f"error: cannot reach service: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
