"""Command-line front end: ``bdpu simulate | stationary | verify | phase-scan``.

Exit codes: 0 success, 1 input/output failure, 2 invalid configuration,
3 a verification check failed.  A file of ``key = value`` lines given with
``--config`` supplies defaults for flags; explicit flags take precedence.
Without ``--seed`` the seed comes from ``BDPU_SEED`` or is drawn at random
and printed to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import secrets
import sys
import warnings

import numpy as np

from . import linsys, stationary, verify
from .engine import StoppingTimes, simulate
from .errors import BDPUError
from .partition import ChainParams, MuSchedule, bounded_states, partitions_of

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2, 3
SEED_ENV = "BDPU_SEED"
TABLE_SCHEMA = "bdpu-table/1"
SCAN_SCHEMA = "bdpu-phase-scan/1"


class ConfigError(BDPUError):
    pass


# Parsing -------------------------------------------------------------------


def _add_chain_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta", type=float, required=False, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdpu", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="file of key = value defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one trajectory and write snapshots")
    _add_chain_flags(sim)
    sim.add_argument("--kernel", choices=("bdpu", "maximal", "modified"), default="bdpu")
    sim.add_argument("--mu-L", dest="mu_L", type=float, default=None,
                     help="boundary weight of the modified kernel")
    sim.add_argument("--schedule", default=None,
                     help="mu_L rule for the modified kernel: inverse_square or inverse_log")
    sim.add_argument("--steps", type=int, default=10000)
    sim.add_argument("--every", type=int, default=None, help="snapshot cadence")
    sim.add_argument("--out", default=None)
    sim.add_argument("--format", choices=("csv", "json"), default="csv")

    st = sub.add_parser("stationary", help="tabulate a closed-form law")
    _add_chain_flags(st)
    st.add_argument("--law", required=True,
                    choices=("theta", "pi", "pi_L", "j", "k", "nb", "esf", "mixture"))
    st.add_argument("--n", type=int, default=None, help="sample size for esf/mixture")
    st.add_argument("--max", dest="max_index", type=int, default=None,
                    help="largest index or norm tabulated")
    st.add_argument("--out", default=None)
    st.add_argument("--format", choices=("csv", "json"), default="csv")

    ve = sub.add_parser("verify", help="run a verification suite")
    ve.add_argument("suite", choices=("balance", "nb", "global", "particle", "embedding",
                                      "stationarity", "supercritical", "esf", "linsys",
                                      "monotonicity"))
    _add_chain_flags(ve)
    ve.add_argument("--states", type=int, default=1000)
    ve.add_argument("--max-norm", dest="max_norm", type=int, default=20)
    ve.add_argument("--steps", type=int, default=1_000_000)
    ve.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    ve.add_argument("--horizon", type=int, default=100_000)
    ve.add_argument("--replicas", type=int, default=1000)
    ve.add_argument("--n", type=int, default=5)
    ve.add_argument("--perturb", type=float, default=0.0)
    ve.add_argument("--schedule", default="inverse_square")
    ve.add_argument("--L-max", dest="L_max", type=int, default=500)
    ve.add_argument("--out", default=None, help="per-class CSV for the embedding suite")
    ve.add_argument("--format", choices=("text", "json"), default="text")

    ps = sub.add_parser("phase-scan", help="block-count growth across a beta grid")
    ps.add_argument("--betas", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
                    help="comma-separated beta values")
    ps.add_argument("--lambda", dest="lam", type=float, default=1.0)
    ps.add_argument("--horizon", type=int, default=100_000)
    ps.add_argument("--replicas", type=int, default=100)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--out", default=None)
    ps.add_argument("--format", choices=("csv", "json"), default="csv")
    for p in (sim, st, ve, ps):
        p.add_argument("--config", default=argparse.SUPPRESS, help="file of key = value defaults")
    return parser


def read_config(path: str) -> list[str]:
    """Turn ``key = value`` lines into flag tokens (``#`` starts a comment)."""
    tokens = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            flag = "--" + key.replace("_", "-") if key not in ("L", "mu_L", "L_max") else {
                "L": "--L", "mu_L": "--mu-L", "L_max": "--L-max"}[key]
            tokens += [flag, value]
    return tokens


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        extra = read_config(args.config)
        # config values first so that explicit flags, parsed later, win
        pos = argv.index(args.command) + 1
        if args.command == "verify":
            pos += 1
        merged = argv[:pos] + extra + argv[pos:]
        args = parser.parse_args(merged)
    return args


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    seed = secrets.randbits(32)
    print(f"seed={seed}", file=sys.stderr)
    return seed


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _require_beta(args) -> float:
    if args.beta is None:
        raise ConfigError("--beta is required")
    return args.beta


def _schedule(name: str) -> MuSchedule:
    rules = {"inverse_square": MuSchedule.inverse_square, "inverse_log": MuSchedule.inverse_log}
    if name not in rules:
        raise ConfigError(f"unknown schedule {name!r}; choose from {sorted(rules)}")
    return rules[name]()


# Commands --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    beta = _require_beta(args)
    L, mu_L = args.L, args.mu_L
    if args.kernel == "maximal":
        params = ChainParams(beta, args.lam, args.L, args.mu)
    else:
        params = ChainParams(beta, args.lam)
    if args.kernel == "modified":
        if L is None:
            raise ConfigError("--L is required for the modified kernel")
        if mu_L is None:
            mu_L = _schedule(args.schedule or "inverse_square")(L)
    seed = resolve_seed(args.seed)
    obs = [StoppingTimes(keep_times=False)] if args.kernel == "modified" else []
    record = simulate(params, args.kernel, args.steps, obs, seed=seed, every=args.every,
                      L=L if args.kernel == "modified" else None, mu_L=mu_L)
    text = record.to_csv() if args.format == "csv" else record.dumps() + "\n"
    _emit(text, args.out)
    final = record.final
    sane = all(s.norm == s.state.norm and s.block_count == s.state.block_count
               for s in record.snapshots)
    if args.kernel == "maximal":
        sane = sane and all(s.state.max_size <= params.L for s in record.snapshots)
    print(f"steps={args.steps} final_norm={final.norm} block_count={final.block_count} "
          f"invariants={'ok' if sane else 'violated'}", file=sys.stderr)
    return EXIT_OK if sane else EXIT_FAILED


def _table(law_name, params: dict, header, rows, total=None, truncation=None, fmt="csv") -> str:
    if fmt == "json":
        obj = {"schema_version": TABLE_SCHEMA, "law": law_name, "params": params,
               "columns": list(header), "rows": rows}
        if total is not None:
            obj["sum"] = total
        if truncation is not None:
            obj["truncation_mass"] = truncation
        return json.dumps(obj, sort_keys=True) + "\n"
    lines = [f"# {TABLE_SCHEMA} law={law_name} "
             + " ".join(f"{k}={v}" for k, v in params.items()), ",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(v) for v in row))
    if total is not None:
        lines.append(f"# sum={total!r}")
    if truncation is not None:
        lines.append(f"# truncation_mass={truncation!r}")
    return "\n".join(lines) + "\n"


def _index_limit(args, default: int) -> int:
    return default if args.max_index is None else args.max_index


def cmd_stationary(args) -> int:
    beta = _require_beta(args)
    lam = args.lam
    info = {"beta": beta, "lambda": lam}
    law_name = args.law
    if law_name == "theta":
        if args.L is None or args.mu is None:
            raise ConfigError("--L and --mu are required for the theta table")
        th = stationary.theta_closed_form(args.L, beta, lam, args.mu)
        info.update(L=args.L, mu=args.mu)
        rows = [[i, v, w] for i, v, w in th.to_rows()]
        text = _table(law_name, info, ("i", "theta", "w"), rows,
                      total=stationary.theta_sum(args.L, beta, lam, args.mu), fmt=args.format)
        _emit(text, args.out)
        return EXIT_OK

    if law_name == "pi_L":
        if args.L is None or args.mu is None:
            raise ConfigError("--L and --mu are required for pi_L")
        ChainParams(beta, lam, args.L, args.mu)
        th = stationary.theta_closed_form(args.L, beta, lam, args.mu)
        info.update(L=args.L, mu=args.mu)
        states = list(bounded_states(args.L, _index_limit(args, 6)))
        rows = [[m.to_csv(), lp, math.exp(lp)]
                for m in states for lp in [stationary.log_pi_L(m, th)]]
        total = math.fsum(r[2] for r in rows)
        _emit(_table(law_name, info, ("state", "log_prob", "prob"), rows, total=total,
                     truncation=1 - total, fmt=args.format), args.out)
        return EXIT_OK

    law = stationary.LimitLaw(beta, lam)
    if law_name == "esf":
        n = args.n if args.n is not None else 5
        info["n"] = n
        rows = [[m.to_csv(), lp, math.exp(lp)]
                for m in partitions_of(n) for lp in [stationary.log_esf(n, m, lam)]]
        _emit(_table(law_name, info, ("state", "log_prob", "prob"), rows,
                     total=math.fsum(r[2] for r in rows), fmt=args.format), args.out)
        return EXIT_OK

    law.require_subcritical()
    if law_name == "pi":
        states = [m for n in range(_index_limit(args, 6) + 1) for m in partitions_of(n)]
        rows = [[m.to_csv(), lp, math.exp(lp)]
                for m in states for lp in [stationary.log_pi(m, law)]]
        total = math.fsum(r[2] for r in rows)
        text = _table(law_name, info, ("state", "log_prob", "prob"), rows, total=total,
                      truncation=1 - total, fmt=args.format)
    elif law_name == "mixture":
        n = args.n if args.n is not None else 6
        info["n"] = n
        rows = []
        for m in partitions_of(n):
            lhs, rhs = stationary.mixture_identity(m, law)
            rows.append([m.to_csv(), lhs, rhs, abs(lhs - rhs) / lhs])
        text = _table(law_name, info, ("state", "lhs", "rhs", "rel_diff"), rows, fmt=args.format)
    else:
        if law_name == "j":
            pmf = lambda k: stationary.j_pmf(k, law)  # noqa: E731
        elif law_name == "k":
            pmf = lambda k: stationary.k_pmf(k, law)  # noqa: E731
        else:
            pmf = lambda k: stationary.tilted_nb_pmf(k, law)  # noqa: E731
        top = args.max_index
        rows, acc, k = [], 0.0, 0
        while (top is None and 1 - acc > 1e-12 and k < 100_000) or (top is not None and k <= top):
            v = float(pmf(k))
            rows.append([k, v])
            acc += v
            k += 1
        total = math.fsum(r[1] for r in rows)
        text = _table(law_name, info, ("index", "prob"), rows, total=total,
                      truncation=1 - total, fmt=args.format)
    _emit(text, args.out)
    return EXIT_OK


def _reports_out(reports, fmt: str) -> None:
    if fmt == "json":
        print(verify.reports_json(reports))
    else:
        for r in reports:
            print(r.text())


def cmd_verify(args) -> int:
    suite = args.suite
    seed = resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    beta = args.beta
    reports = []
    if suite in ("balance", "nb", "stationarity", "global", "particle", "embedding",
                 "supercritical", "linsys", "monotonicity") and beta is None:
        raise ConfigError("--beta is required")
    if suite == "balance":
        law = stationary.LimitLaw(beta, args.lam)
        law.require_subcritical()
        states = verify.random_states(rng, args.states, args.max_norm)
        reports.append(verify.check_detailed_balance_pi(
            law, ChainParams(beta, args.lam), states, perturb=args.perturb))
    elif suite == "nb":
        law = stationary.LimitLaw(beta, args.lam)
        reports.append(verify.check_detailed_balance_norm(law, perturb=args.perturb))
    elif suite == "global":
        L = args.L or 4
        mu = args.mu if args.mu is not None else 1.0
        params = ChainParams(beta, args.lam, L, mu)
        th = stationary.theta_closed_form(L, beta, args.lam, mu)
        if args.perturb:
            th = th.perturbed(args.perturb)
        states = verify.random_states(rng, args.states, args.max_norm, L)
        reports.append(verify.check_global_balance_pi_L(th, params, states))
    elif suite == "particle":
        reports.append(verify.check_particle_equivalence(
            verify.exact_params(beta, args.lam), rng, count=args.states))
    elif suite == "embedding":
        L = args.L or 2
        r = verify.check_embedding(L, ChainParams(beta, args.lam), _schedule(args.schedule),
                                   args.steps, rng=rng)
        if args.format == "text":
            sys.stdout.write(verify.embedding_csv(r))
        if args.out:
            _emit(verify.embedding_csv(r), args.out)
        reports.append(r)
    elif suite == "stationarity":
        reports.append(verify.check_subcritical_stationarity(
            ChainParams(beta, args.lam), args.steps, rng=rng, burn_in=args.burn_in))
    elif suite == "supercritical":
        reports.append(verify.check_supercritical_limit(
            ChainParams(beta, args.lam), args.horizon, args.replicas, seed=seed))
    elif suite == "esf":
        reports.append(verify.check_finite_sample_esf(args.lam, args.n, args.replicas, seed=seed))
    elif suite == "linsys":
        L = args.L or 50
        mu = args.mu if args.mu is not None else 1.0
        th = linsys.solve_numeric(linsys.TridiagonalSystem(L, beta), args.lam, mu)
        ref = stationary.theta_closed_form(L, beta, args.lam, mu)
        err = float(np.max(np.abs(th.values - ref.values) / np.abs(ref.values)))
        reports.append(verify.BalanceReport("numeric solve versus closed form", L, L,
                                            max_global=err, tol=1e-10))
    elif suite == "monotonicity":
        scan = linsys.monotonicity_scan(beta, args.lam, _schedule(args.schedule), args.L_max)
        rep = verify.FitReport(f"growth of theta in L, beta={beta}", args.L_max - 1)
        rep.passed = scan.L0 is not None
        rep.details = scan.to_dict()
        reports.append(rep)
        if args.format == "text":
            print(f"L0={scan.L0} negative_L_count={len(scan.negative_L)}")
    _reports_out(reports, args.format)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


def cmd_phase_scan(args) -> int:
    try:
        betas = [float(b) for b in args.betas.split(",") if b.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse beta grid {args.betas!r}") from None
    if not betas:
        raise ConfigError("the beta grid is empty")
    seed = resolve_seed(args.seed)
    rows = verify.phase_scan(betas, args.lam, args.horizon, args.replicas, seed=seed)
    header = ["beta", "mean_block_count", "block_count_se", "growth_slope", "stationarity_z"]
    if args.format == "json":
        text = json.dumps({"schema_version": SCAN_SCHEMA, "lambda": args.lam,
                           "horizon": args.horizon, "replicas": args.replicas,
                           "seed": seed, "columns": header,
                           "rows": [r.as_list() for r in rows]}, sort_keys=True) + "\n"
    else:
        lines = [f"# {SCAN_SCHEMA} lambda={args.lam} horizon={args.horizon} "
                 f"replicas={args.replicas} seed={seed}", ",".join(header)]
        lines += [",".join(repr(v) for v in r.as_list()) for r in rows]
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "stationary": cmd_stationary,
            "verify": cmd_verify, "phase-scan": cmd_phase_scan}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BDPUError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
