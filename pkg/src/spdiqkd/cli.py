"""Command-line front end.

Every subcommand reads an optional JSON config (unknown keys are rejected),
applies flag overrides and writes a CSV table or a JSON report. The number of
worker processes comes from ``SPDIQKD_WORKERS`` (default 1).

Exit codes: 0 success, 2 configuration error, 3 numerical infeasibility.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace

import numpy as np

from . import finitekey as fk
from .measurements import ALPHA_CAP, DEFAULT_CUTOFF, SQUEEZE_CAP_DB, db_to_xi
from .photonics import (
    SetupParams,
    channel_efficiency,
    heralded_state_analytic,
    heralded_state_ideal,
    heralded_state_oracle,
    heralding_probability,
    heralding_probability_twophoton,
)
from .protocol import key_statistics, optimize_chsh, optimize_protocol, rate_per_second

log = logging.getLogger("spdiqkd")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
WORKERS_ENV = "SPDIQKD_WORKERS"
SCAN_AXES = ("L", "eta_tilde_L", "eta_L", "T", "n")
STATE_MODELS = ("ideal", "analytic", "oracle")
SETTING_NAMES = ("a1", "a2", "b1", "b2", "b3")
SETTING_FIELDS = ("xi_amp", "xi_phase", "alpha_amp", "alpha_phase")


class ConfigError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    pass


# ------------------------------------------------------------------ config

DEFAULTS = {
    "scenario": {
        "T": 0.005,
        "L": 0.0,
        "alpha_att": 0.2,
        "eta_D": 1.0,
        "eta_tilde_L": 1.0,
        "eta_tilde_D": 0.95,
        "nu": 5e6,
        "eta_L": None,
    },
    "state_model": None,
    "caps": {"squeeze_db": SQUEEZE_CAP_DB, "alpha": ALPHA_CAP},
    "optimizer": {"n_starts": 32, "max_evals": 4000, "cutoff": DEFAULT_CUTOFF},
    "finite": {
        "n": [],
        "asymptotic": True,
        "k": fk.COMPLETENESS_K,
        "n_starts": 16,
        "epsilons": asdict(fk.EpsilonSet()),
    },
    "scan": None,
    "threshold": {"lo": 0.85, "hi": 0.95, "tol": 0.002},
    "t_values": [0.001, 0.005, 0.02, 0.05],
    "output": {"path": None},
    "seed": 0,
}

COMMAND_DEFAULTS = {
    "chsh-scan": {
        "state_model": "ideal",
        "scan": {"variable": "eta_tilde_L", "min": 0.75, "max": 1.0, "steps": 26},
    },
    "threshold": {"state_model": "ideal"},
    "rate-vs-distance": {
        "state_model": "analytic",
        "scenario": {"eta_L": 0.9},
        "scan": {"variable": "L", "min": 0.0, "max": 400.0, "steps": 41},
    },
    "t-scan": {
        "state_model": "analytic",
        "scan": {"variable": "eta_L", "min": 0.88, "max": 1.0, "steps": 7},
    },
    "finite-keylen": {"state_model": "analytic", "scenario": {"eta_L": 0.9}},
}

ALLOWED_AXES = {
    "chsh-scan": ("eta_tilde_L", "eta_L"),
    "threshold": (),
    "rate-vs-distance": ("L",),
    "t-scan": ("eta_L", "eta_tilde_L"),
    "finite-keylen": ("n",),
}


def _merge(base: dict, new: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in new.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(out[key], dict) and key not in ("epsilons",):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be an object")
            out[key] = _merge(out[key], value, where + ".")
        elif key == "epsilons":
            if not isinstance(value, dict):
                raise ConfigError("config key 'finite.epsilons' must be an object")
            unknown = set(value) - set(out[key])
            if unknown:
                raise ConfigError(f"unknown config key 'finite.epsilons.{sorted(unknown)[0]}'")
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


def _parse_scan(text: str) -> dict:
    parts = text.split(":")
    if len(parts) != 4:
        raise ConfigError("--scan expects VARIABLE:MIN:MAX:STEPS")
    try:
        return {"variable": parts[0], "min": float(parts[1]), "max": float(parts[2]), "steps": int(parts[3])}
    except ValueError as exc:
        raise ConfigError(f"bad --scan value: {exc}") from None


def _parse_n(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --n value '{text}'") from None


def build_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then command defaults, then the JSON file, then flags."""
    cfg = _merge(DEFAULTS, COMMAND_DEFAULTS[command])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        if "scan" in user and user["scan"] is not None:
            cfg["scan"] = cfg["scan"] or {"variable": None, "min": None, "max": None, "steps": None}
        cfg = _merge(cfg, user)
    if args.scan:
        cfg["scan"] = _parse_scan(args.scan)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.n:
        cfg["finite"]["n"] = _parse_n(args.n)
    if args.asymptotic:
        cfg["finite"]["asymptotic"] = True
    elif cfg["finite"]["n"] and args.n:
        cfg["finite"]["asymptotic"] = False
    if args.out:
        cfg["output"]["path"] = args.out
    _validate(command, cfg)
    return cfg


def _validate(command: str, cfg: dict) -> None:
    if cfg["state_model"] not in STATE_MODELS:
        raise ConfigError(f"state_model must be one of {STATE_MODELS}")
    scan = cfg["scan"]
    if scan is not None:
        for key in ("variable", "min", "max", "steps"):
            if scan.get(key) is None:
                raise ConfigError(f"scan.{key} is required")
        if scan["variable"] not in SCAN_AXES:
            raise ConfigError(f"scan variable must be one of {SCAN_AXES}")
        if scan["variable"] not in ALLOWED_AXES[command]:
            raise ConfigError(f"{command} cannot scan '{scan['variable']}'")
        if int(scan["steps"]) < 2:
            raise ConfigError("scan.steps must be >= 2")
        if not scan["min"] < scan["max"]:
            raise ConfigError("scan.min must be below scan.max")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    opt = cfg["optimizer"]
    if int(opt["n_starts"]) < 1 or int(opt["max_evals"]) < 10 or int(opt["cutoff"]) < 2:
        raise ConfigError("optimizer settings out of range")
    if cfg["caps"]["squeeze_db"] < 0 or cfg["caps"]["alpha"] <= 0:
        raise ConfigError("caps must be non-negative")
    try:
        scenario(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    eps = cfg["finite"]["epsilons"]
    try:
        values = [float(v) for v in eps.values()]
    except (TypeError, ValueError):
        raise ConfigError("epsilons must be numbers") from None
    if any(not 0.0 < v < 1.0 for v in values):
        raise ConfigError("epsilons must lie in (0, 1)")
    try:
        fk.EpsilonSet(**eps)
    except ValueError as exc:
        # well-formed values that violate the smoothing inequality
        raise InfeasibleError(str(exc)) from None
    for n in cfg["finite"]["n"]:
        if not n >= 1:
            raise ConfigError("finite.n values must be >= 1")
    th = cfg["threshold"]
    if not 0.0 < th["lo"] < th["hi"] <= 1.0 or th["tol"] <= 0:
        raise ConfigError("threshold bracket must satisfy 0 < lo < hi <= 1 and tol > 0")
    if any(not 0.0 < t < 1.0 for t in cfg["t_values"]):
        raise ConfigError("t_values must lie in (0, 1)")


def scenario(cfg: dict, **override) -> SetupParams:
    sc = {**cfg["scenario"], **override}
    eta_L = sc.pop("eta_L")
    params = SetupParams(**sc)
    if eta_L is not None:
        if eta_L > params.eta_tilde_D:
            raise ValueError("eta_L cannot exceed eta_tilde_D")
        params = params.with_eta_L(eta_L)
    return params


def scan_values(scan: dict) -> list[float]:
    lo, hi, steps = float(scan["min"]), float(scan["max"]), int(scan["steps"])
    if scan["variable"] == "n":
        return [float(v) for v in np.geomspace(lo, hi, steps)]
    return [float(v) for v in np.linspace(lo, hi, steps)]


# --------------------------------------------------------------- evaluation


def make_state(cfg: dict, params: SetupParams):
    model = cfg["state_model"]
    if model == "ideal":
        return heralded_state_ideal(params.eta_tilde_L)
    if model == "analytic":
        return heralded_state_analytic(params)
    return heralded_state_oracle(params)


def _opt_kwargs(cfg: dict) -> dict:
    opt = cfg["optimizer"]
    return {
        "xi_cap": db_to_xi(cfg["caps"]["squeeze_db"]),
        "alpha_cap": cfg["caps"]["alpha"],
        "n_starts": int(opt["n_starts"]),
        "max_evals": int(opt["max_evals"]),
        "cutoff": int(opt["cutoff"]),
        "seed": int(cfg["seed"]),
    }


def _chsh_point(task):
    cfg, eta_tilde_L = task
    params = scenario(cfg, eta_tilde_L=eta_tilde_L, eta_L=None)
    res = optimize_chsh(make_state(cfg, params), params.eta_tilde_D, **_opt_kwargs(cfg))
    return eta_tilde_L, res.S, res.settings


def _rate_point(task):
    cfg, overrides = task
    params = scenario(cfg, **overrides)
    rep = optimize_protocol(make_state(cfg, params), params.eta_tilde_D, params=params, **_opt_kwargs(cfg))
    return params, rep


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got '{raw}'") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def _map(fn, tasks):
    """Ordered map over a process pool sized by the environment."""
    tasks = list(tasks)
    n = min(_workers(), len(tasks))
    if n <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, tasks))


# ----------------------------------------------------------------- output


def fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12g}"


def write_csv(rows: list[list], header: list[str], path: str | None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    _emit(text, path)
    return text


def write_json(report: dict, path: str | None) -> str:
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"
    _emit(text, path)
    return text


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _summary(msg: str, cfg: dict) -> None:
    # stdout carries the data when no output file is given
    stream = sys.stdout if cfg["output"]["path"] else sys.stderr
    print(msg, file=stream)


def _effective(cfg: dict) -> dict:
    """Config echo including frozen constants."""
    out = copy.deepcopy(cfg)
    out["constants"] = {
        "fixed_overhead_bits": fk.FIXED_OVERHEAD_BITS,
        "syndrome_slack": fk.SYNDROME_SLACK,
        "eps_hash": fk.EPS_HASH,
        "completeness_target": fk.COMPLETENESS_TARGET,
        "b": fk.B_CONST,
    }
    return out


def _setting_columns(settings) -> list[float]:
    return [getattr(s, f) for s in settings.all for f in SETTING_FIELDS]


def _setting_header() -> list[str]:
    return [f"{f}_{n}" for n in SETTING_NAMES for f in SETTING_FIELDS]


# --------------------------------------------------------------- commands


def cmd_chsh_scan(cfg: dict) -> int:
    scan = cfg["scan"]
    base = scenario(cfg)
    values = scan_values(scan)
    if scan["variable"] == "eta_L":
        values = [v / base.eta_tilde_D for v in values]
    results = _map(_chsh_point, [(cfg, v) for v in values])
    rows = [[eta, S] + _setting_columns(settings) for eta, S, settings in results]
    write_csv(rows, ["eta_tilde_L", "S"] + _setting_header(), cfg["output"]["path"])
    crossing = _crossing([r[0] for r in rows], [r[1] - 2.0 for r in rows])
    _summary(f"chsh-scan: {len(rows)} points, S = 2 crossing at eta_tilde_L = {fmt(crossing)}", cfg)
    return EXIT_OK


def _crossing(xs, ys) -> float:
    for (x0, y0), (x1, y1) in zip(zip(xs, ys), zip(xs[1:], ys[1:])):
        if y0 <= 0.0 < y1:
            return x0 + (x1 - x0) * (-y0) / (y1 - y0)
    return float("nan")


def threshold_search(cfg: dict) -> dict:
    """Bisection on eta_L for the zero of the asymptotic rate."""
    th = cfg["threshold"]
    lo, hi = th["lo"], th["hi"]
    history = []

    def evaluate(eta_L, warm=None):
        params = scenario(cfg, eta_L=eta_L)
        rep = optimize_protocol(
            make_state(cfg, params), params.eta_tilde_D, params=params, warm=warm[0] if warm else None,
            warm_q=warm[1] if warm else None, **_opt_kwargs(cfg)
        )
        history.append({"eta_L": eta_L, "r_inf": rep.r_inf, "raw": rep.raw, "S": rep.S})
        log.info("threshold: eta_L=%.5f r=%.3e S=%.5f", eta_L, rep.raw, rep.S)
        return rep

    r_lo = evaluate(lo)
    r_hi = evaluate(hi)
    if r_lo.r_inf > 0.0 or r_hi.r_inf <= 0.0:
        raise InfeasibleError(
            f"threshold not bracketed: r({lo}) = {r_lo.raw:.3e}, r({hi}) = {r_hi.raw:.3e}"
        )
    best = r_hi
    while hi - lo > th["tol"]:
        mid = 0.5 * (lo + hi)
        rep = evaluate(mid, (best.settings, best.q_n))
        if rep.r_inf > 0.0:
            hi, best = mid, rep
        else:
            lo = mid
    return {
        "eta_L_threshold": 0.5 * (lo + hi),
        "bracket": [lo, hi],
        "S_at_threshold": best.S,
        "r_inf_at_upper": best.r_inf,
        "q_n_at_upper": best.q_n,
        "settings": best.settings.to_dict(),
        "evaluations": history,
    }


def cmd_threshold(cfg: dict) -> int:
    result = threshold_search(cfg)
    result["config"] = _effective(cfg)
    write_json(result, cfg["output"]["path"])
    _summary(f"threshold: eta_L = {result['eta_L_threshold']:.4f}", cfg)
    return EXIT_OK


def _finite_rates(cfg: dict, params, rep) -> list[tuple[float, float]]:
    """``(n, bits per round)`` pairs, asymptotic first when requested."""
    out = []
    if cfg["finite"]["asymptotic"]:
        out.append((math.inf, rep.r_inf))
    if cfg["finite"]["n"]:
        state = make_state(cfg, params)
        S, joint = key_statistics(state, rep.settings)
        stats = fk.KeyStatistics(S, joint)
        eps = fk.EpsilonSet(**cfg["finite"]["epsilons"])
        for n in cfg["finite"]["n"]:
            res = fk.optimize_finite(
                stats, n, eps, k=cfg["finite"]["k"], n_starts=int(cfg["finite"]["n_starts"]), seed=cfg["seed"]
            )
            out.append((n, max(res.ell, 0.0) / n))
    return out


def cmd_rate_vs_distance(cfg: dict) -> int:
    # the per-round rate does not depend on L; optimise once at the base point
    params, rep = _rate_point((cfg, {"L": 0.0}))
    if rep.S <= 2.0 and rep.r_inf == 0.0:
        log.warning("no CHSH violation at this scenario; all rates are zero")
    per_round = _finite_rates(cfg, params, rep)
    rows = []
    for L in scan_values(cfg["scan"]):
        p = replace(params, L=L)
        p_single = heralding_probability(p) * p.nu
        p_two = heralding_probability_twophoton(p) * p.nu
        for n, r in per_round:
            rows.append([L, n, p_single * r, "single_photon"])
            rows.append([L, n, p_two * r, "two_photon_scaling"])
    write_csv(rows, ["L_km", "n", "R_bits_per_s", "scheme"], cfg["output"]["path"])
    parts = []
    for n, r in per_round:
        base = heralding_probability(params) * params.nu * r
        cutoff = 100.0 * math.log10(base / 0.1) if base > 0.1 else float("nan")
        parts.append(f"n={fmt(n)}: r={r:.4g}, R=0.1 at L={cutoff:.1f} km")
    _summary("rate-vs-distance: " + "; ".join(parts), cfg)
    return EXIT_OK


def cmd_t_scan(cfg: dict) -> int:
    scan = cfg["scan"]
    tasks = []
    for T in cfg["t_values"]:
        for v in scan_values(scan):
            key = "eta_L" if scan["variable"] == "eta_L" else "eta_tilde_L"
            over = {"T": T, key: v}
            if key == "eta_tilde_L":
                over["eta_L"] = None
            tasks.append((cfg, over))
    results = _map(_rate_point, tasks)
    rows = [[p.T, p.eta_L, rep.r_inf] for p, rep in results]
    write_csv(rows, ["T", "eta_L", "r_inf"], cfg["output"]["path"])
    _summary(f"t-scan: {len(rows)} points", cfg)
    return EXIT_OK


def cmd_finite_keylen(cfg: dict) -> int:
    ns = list(cfg["finite"]["n"])
    if cfg["scan"] is not None:
        ns = scan_values(cfg["scan"])
    if not ns:
        raise ConfigError("finite-keylen needs --n or finite.n")
    params, rep = _rate_point((cfg, {}))
    state = make_state(cfg, params)
    S, joint = key_statistics(state, rep.settings)
    stats = fk.KeyStatistics(S, joint)
    eps = fk.EpsilonSet(**cfg["finite"]["epsilons"])
    r_inf, _ = stats.asymptotic()
    entries = []
    for n in ns:
        res = fk.optimize_finite(
            stats, n, eps, k=cfg["finite"]["k"], n_starts=int(cfg["finite"]["n_starts"]), seed=cfg["seed"]
        )
        p = res.params
        entries.append(
            {
                "n": n,
                "ell": res.ell,
                "ell_per_n": res.ell / n,
                "l_raw": res.key.l,
                "secure": res.key.secure,
                "R_bits_per_s": fk.finite_rate_per_second(res.ell, n, params),
                "params": {
                    "gamma": p.gamma,
                    "t": p.t,
                    "q_n": p.q_n,
                    "alpha_p": p.alpha_p,
                    "alpha_pp": p.alpha_pp,
                    "k": p.k,
                },
                "H_A1_B3": res.H_A1_B3,
                "terms": res.key.terms,
            }
        )
    report = {
        "results": entries,
        "S": S,
        "r_inf": r_inf,
        "R_inf": rate_per_second(r_inf, params),
        "soundness": eps.soundness,
        "completeness_target": fk.COMPLETENESS_TARGET,
        "epsilons": asdict(eps),
        "settings": rep.settings.to_dict(),
        "config": _effective(cfg),
    }
    if len(entries) == 1:
        report.update({k: entries[0][k] for k in ("n", "ell", "ell_per_n")})
    write_json(report, cfg["output"]["path"])
    _summary(
        "finite-keylen: " + ", ".join(f"n={fmt(e['n'])} ell/n={e['ell_per_n']:.4g}" for e in entries), cfg
    )
    return EXIT_OK


COMMANDS = {
    "chsh-scan": (cmd_chsh_scan, "optimised CHSH score against the local efficiency"),
    "threshold": (cmd_threshold, "local efficiency at which the asymptotic key rate vanishes"),
    "rate-vs-distance": (cmd_rate_vs_distance, "key rate per second against the distance"),
    "t-scan": (cmd_t_scan, "asymptotic key rate for several source transmittances"),
    "finite-keylen": (cmd_finite_keylen, "finite-size key length for given numbers of rounds"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdiqkd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--scan", help="scan axis as VARIABLE:MIN:MAX:STEPS")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--seed", type=int, help="optimiser seed")
        p.add_argument("--n", help="comma-separated numbers of rounds")
        p.add_argument("--asymptotic", action="store_true", help="include the asymptotic rate")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    fn = COMMANDS[args.command][0]
    try:
        cfg = build_config(args.command, args)
        return fn(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleError, FloatingPointError, ValueError) as exc:
        print(f"numerical infeasibility: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
