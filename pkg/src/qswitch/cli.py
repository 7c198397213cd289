"""``qswitch`` command line.

Exit codes: 0 success, 1 failed check (emitter-check), 2 usage or config
error, 3 physics precondition violated.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .config import ConfigError, load_config, resolve
from .runner import COMMANDS, execute, write_outputs

OUTPUT_ENV = "QSWITCH_OUTPUT_DIR"
DEFAULT_OUTPUT_ROOT = "qswitch-runs"


def _tau(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a duration in ns or 'auto'") from None
    return value


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _bits(text: str) -> list[int]:
    parts = text.split(",")
    if len(parts) != 2 or any(p.strip() not in ("0", "1") for p in parts):
        raise argparse.ArgumentTypeError("expected two bits, e.g. 1,0")
    return [int(p) for p in parts]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML/JSON config or an emitted manifest.json")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trajectories", type=int, help="number of trajectories N")
    common.add_argument("--resamples", type=int, help="bootstrap resamples R")
    common.add_argument("--sample-size", type=int, help="bootstrap sample size M (default min(500, N/2) with --trajectories)")
    common.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ENV}/<command>)")
    common.add_argument("--workers", type=int, default=1, help="threads for trajectories; results do not depend on it")
    common.add_argument("--tau-ns", type=_tau, help="stage duration in ns, or 'auto'")
    common.add_argument("--t1-us", type=float, help="T1 of all qubits in us")
    common.add_argument("--p-loss", type=float, help="photon loss per link traversal")
    common.add_argument("--chi", type=_floats, help="chi/kappa: one value for all switches or one per switch")
    common.add_argument("--window-kappa", type=float, help="mode window half-width in units of kappa")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qswitch", description="Quantum-switch network simulator")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "qst": "coherent and decohered state transfer",
        "bell": "Bell pair through an open switch",
        "ghz": "GHZ state with a switch in superposition",
        "w": "sequential W state",
        "route": "directional emission from the central node",
        "sweep-tau": "QST fidelity versus duration and optimal time per T1",
        "sweep-chi": "GHZ fidelity versus chi/kappa",
        "sweep-t1": "protocol fidelity versus T1",
        "emitter-check": "analytic versus numeric single-emitter oracles",
    }
    subs = {name: sub.add_parser(name, parents=[common], help=h, description=h) for name, h in helps.items()}
    subs["w"].add_argument("--n", type=int, help="number of W qubits (equals the node count)")
    subs["route"].add_argument("--order", choices=["left_first", "right_first", "simultaneous_split"])
    subs["route"].add_argument("--switch-bits", type=_bits, help="left,right switch bits")
    subs["sweep-chi"].add_argument("--chi-values", type=_floats, help="chi/kappa values of switch s1")
    subs["sweep-t1"].add_argument("--t1-values", type=_floats, help="T1 values in us")
    subs["sweep-t1"].add_argument("--target", choices=["qst", "bell", "ghz", "w"])
    subs["sweep-tau"].add_argument("--t1-values", type=_floats, help="T1 values in us")
    assert set(subs) == set(COMMANDS)
    return parser


def _overrides(args, raw: dict) -> dict:
    raw = {k: dict(v) if isinstance(v, dict) else v for k, v in raw.items()}

    def put(section, key, value):
        if value is not None:
            raw.setdefault(section, {})[key] = value

    put("monte_carlo", "seed", args.seed)
    put("monte_carlo", "trajectories", args.trajectories)
    put("monte_carlo", "resamples", args.resamples)
    put("monte_carlo", "sample_size", args.sample_size)
    if args.trajectories is not None and args.sample_size is None and "sample_size" not in raw.get("monte_carlo", {}):
        put("monte_carlo", "sample_size", min(500, max(1, args.trajectories // 2)))
    put("protocol", "tau_ns", args.tau_ns)
    put("noise", "t1_us", args.t1_us)
    if args.p_loss is not None:
        put("noise", "p_loss", args.p_loss)
        raw["noise"].pop("attenuation_db_per_km", None)
    put("network", "chi_over_kappa", args.chi)
    if args.window_kappa is not None:
        put("network", "mode_window_over_kappa", args.window_kappa)
        raw["network"]["n_modes"] = None
    put("protocol", "n", getattr(args, "n", None))
    if getattr(args, "n", None) is not None:
        put("network", "n_nodes", args.n)
    put("protocol", "order", getattr(args, "order", None))
    put("protocol", "switch_bits", getattr(args, "switch_bits", None))
    put("protocol", "chi_values", getattr(args, "chi_values", None))
    put("protocol", "t1_us_values", getattr(args, "t1_values", None))
    put("protocol", "target", getattr(args, "target", None))
    if args.out is not None:
        put("output", "directory", str(args.out))
    return raw


def _output_dir(cfg: dict, command: str) -> Path:
    d = cfg["output"]["directory"]
    if d is not None:
        return Path(d)
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT_ROOT)) / command


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        cfg = resolve(_overrides(args, raw), args.command)
    except ConfigError as exc:
        print(f"qswitch: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"qswitch: cannot read config: {exc}", file=sys.stderr)
        return 2

    out = _output_dir(cfg, args.command)
    out.mkdir(parents=True, exist_ok=True)
    logger = logging.getLogger("qswitch")
    logger.setLevel(logging.INFO)
    fh = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    fh.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    sh = logging.StreamHandler(sys.stderr)
    sh.setLevel(logging.INFO if args.verbose else logging.WARNING)
    logger.handlers[:] = [fh, sh]
    start = time.perf_counter()
    try:
        result = execute(cfg, args.command, workers=max(1, args.workers))
    except ValueError as exc:
        logger.error("%s", exc)
        print(f"qswitch: {exc}", file=sys.stderr)
        return 3
    finally:
        logger.info("elapsed %.1f s", time.perf_counter() - start)
    for p in write_outputs(result, cfg, out):
        print(p)
    fh.close()
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
