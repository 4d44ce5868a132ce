"""Command-line front end: simulate, estimate, benchmark, verify-bounds.

Settings come from built-in defaults, then an optional flat ``key=value``
config file, then command-line flags (flags win). The seed falls back to
the ``COMPOUND_MINIMAX_SEED`` environment variable when neither the file
nor the flags set it.

Exit codes: 0 success, 2 validation error, 3 capacity exceeded,
4 a verification check failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds as B
from .aggregation import (
    DEFAULT_CEILING,
    CandidateSpace,
    McmcConfig,
    exact_aggregate,
    mcmc_aggregate,
)
from .basis import IndexBox, write_coefficients_csv
from .compound import (
    FAMILY_RULES,
    SobolevBall,
    compose,
    family_rule_holds,
    make_structure,
    sample_sobolev_atom,
    write_bundle,
)
from .errors import CapacityError, CompoundModelError, DomainError, ParameterError, StructureError
from .risk import (
    AggregateEstimator,
    Lemma1Estimator,
    McmcEstimator,
    benchmark,
    rate_exponent,
    rate_fit,
    replicate_seed,
    theorem1_preconditions,
    theorem2_bound,
    write_plot_data,
    write_reports_csv,
)
from .sequence import check_epsilon, observe, read_observation_csv, write_observation_csv

EXIT_OK, EXIT_VALIDATION, EXIT_CAPACITY, EXIT_CHECK = 0, 2, 3, 4
SEED_ENV = "COMPOUND_MINIMAX_SEED"

# key -> (type, default)
SETTINGS = {
    "d": (int, 2),
    "s": (int, 1),
    "m": (int, 1),
    "beta": (float, 1.0),
    "L": (float, 1.0),
    "epsilon": (float, 0.2),
    "eps_grid": (str, "0.3,0.2,0.15,0.1,0.07"),
    "cutoff": (int, 6),
    "replicates": (int, 50),
    "mode": (str, "exact"),
    "steps": (int, 110_000),
    "burn_in": (int, 10_000),
    "seed": (int, None),
    "out": (str, "out"),
    "threads": (int, 1),
    "family_rule": (str, "disjoint"),
    "mean": (float, 0.0),
    "fill": (float, 1.0),
    "decay": (float, 0.0),
    "k": (int, None),
    "observation": (str, None),
}
MODES = ("exact", "mcmc", "lemma1")

log = logging.getLogger("compound_minimax")


class ValidationError(CompoundModelError, ValueError):
    pass


# --- configuration ----------------------------------------------------------

def read_config_file(path) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in SETTINGS:
            raise ValidationError(f"{path}:{n}: expected key=value with a known key, got {raw!r}")
        out[key] = value.strip()
    return out


def _convert(key: str, value):
    typ = SETTINGS[key][0]
    try:
        return typ(value)
    except ValueError:
        raise ValidationError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = {k: default for k, (_, default) in SETTINGS.items()}
    if args.config:
        for k, v in read_config_file(args.config).items():
            cfg[k] = _convert(k, v)
    for k in SETTINGS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if cfg["seed"] is None:
        env = os.environ.get(SEED_ENV)
        cfg["seed"] = _convert("seed", env) if env not in (None, "") else 0
    cfg["subcommand"] = args.command
    return cfg


def eps_grid(cfg) -> list[float]:
    try:
        grid = [float(x) for x in str(cfg["eps_grid"]).split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"eps_grid: cannot parse {cfg['eps_grid']!r}") from None
    return grid


def validate(cfg: dict) -> None:
    """Hard constraints; violating any of them is a validation error."""
    if cfg["d"] < 1:
        raise ValidationError("d >= 1 is required")
    if not 1 <= cfg["s"] <= cfg["d"]:
        raise ValidationError(f"1 <= s <= d is required (s={cfg['s']}, d={cfg['d']})")
    if cfg["m"] < 1:
        raise ValidationError("m >= 1 is required")
    if cfg["beta"] <= 0:
        raise ValidationError("beta > 0 is required")
    if cfg["L"] <= 0:
        raise ValidationError("L > 0 is required")
    if cfg["cutoff"] < 1:
        raise ValidationError("cutoff >= 1 is required")
    if cfg["replicates"] < 2:
        raise ValidationError("replicates >= 2 is required")
    if cfg["threads"] < 1:
        raise ValidationError("threads >= 1 is required")
    if cfg["mode"] not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    if cfg["family_rule"] not in FAMILY_RULES:
        raise ValidationError(f"family_rule must be one of {FAMILY_RULES}, got {cfg['family_rule']!r}")
    if cfg["seed"] < 0:
        raise ValidationError("seed must be nonnegative")
    check_epsilon(cfg["epsilon"])
    for e in eps_grid(cfg):
        check_epsilon(e)
    if not 0.0 < cfg["fill"] <= 1.0:
        raise ValidationError("0 < fill <= 1 is required")


def precondition_checks(cfg: dict) -> list[dict]:
    """Soft checks of the theoretical preconditions, recorded in the manifest."""
    beta, L, s, m, d = cfg["beta"], cfg["L"], cfg["s"], cfg["m"], cfg["d"]
    eps_list = [cfg["epsilon"]] + (eps_grid(cfg) if cfg["subcommand"] == "benchmark" else [])
    out = []
    for eps in dict.fromkeys(eps_list):
        violated = theorem1_preconditions(beta, L, eps, s)
        for name in ("log(eps^-2) >= log(L)/(2 beta)", "L > eps^2 log(e eps^-2)^((2 beta + s)/s)"):
            out.append({"check": name, "epsilon": eps, "passed": name not in violated})
        if cfg["k"] is not None:
            try:
                theorem2_bound(cfg["k"], s, m, d, eps)
                ok = True
            except ParameterError:
                ok = False
            out.append({"check": "k < eps^-2", "epsilon": eps, "passed": ok})
    arg = d / (s * m ** (1.0 / s))
    out.append({"check": "d/(s m^(1/s)) > 1", "value": arg, "passed": arg > 1.0})
    return out


def write_manifest(cfg: dict, checks: list[dict], extra: dict | None = None) -> Path:
    out = Path(cfg["out"])
    manifest = {
        "version": __version__,
        "subcommand": cfg["subcommand"],
        "seed": cfg["seed"],
        "config": {k: cfg[k] for k in SETTINGS},
        "precondition_checks": checks,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --- model construction -----------------------------------------------------

def draw_structure(cfg: dict, rng: np.random.Generator):
    d, s, m, rule = cfg["d"], cfg["s"], cfg["m"], cfg["family_rule"]
    if rule == "disjoint" and m * s > d:
        raise ValidationError(f"{m} disjoint supports of size {s} need m*s <= d (d={d})")
    if rule == "disjoint":
        perm = rng.permutation(np.arange(1, d + 1))
        return make_structure(d, s, [tuple(perm[l * s:(l + 1) * s]) for l in range(m)], rule)
    chosen: list[tuple[int, ...]] = []
    for _ in range(1000 * m):
        V = tuple(sorted(int(c) for c in rng.choice(np.arange(1, d + 1), size=s, replace=False)))
        if V not in chosen and family_rule_holds(chosen + [V], rule):
            chosen.append(V)
            if len(chosen) == m:
                return make_structure(d, s, chosen, rule)
    raise ValidationError(f"could not place {m} supports of size {s} in d={d} under {rule!r}")


def build_model(cfg: dict):
    rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 0]))
    structure = draw_structure(cfg, rng)
    atoms = [sample_sobolev_atom(SobolevBall(cfg["d"], V, cfg["beta"], cfg["L"]), cfg["cutoff"], rng,
                                 fill=cfg["fill"], decay=cfg["decay"])
             for V in structure.supports]
    return compose(cfg["mean"], structure, atoms, smoothness=(cfg["beta"], cfg["L"]))


# --- subcommands ------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    f = build_model(cfg)
    write_bundle(f, out)
    obs = observe(f.coefficients, cfg["epsilon"], IndexBox(cfg["d"], cfg["cutoff"]),
                  replicate_seed(cfg["seed"], 1), max_support=cfg["s"])
    write_observation_csv(obs, out / "observation.csv")
    certs = []
    for ell, (V, atom) in enumerate(zip(f.structure.supports, f.atoms), start=1):
        ball = SobolevBall(cfg["d"], V, cfg["beta"], cfg["L"])
        form = ball.form(atom)
        certs.append({"atom": ell, "support": list(V), "sobolev_form": form,
                      "L": cfg["L"], "inside": ball.contains(atom)})
        print(f"atom {ell} on {V}: sum |j|^(2 beta) theta_j^2 = {form:.12g} <= L = {cfg['L']:g}: "
              f"{'yes' if ball.contains(atom) else 'NO'}")
    write_manifest(cfg, precondition_checks(cfg), {"sobolev_certificates": certs})
    return EXIT_OK


def cmd_estimate(cfg: dict) -> int:
    if not cfg["observation"]:
        raise ValidationError("estimate needs an observation file (--observation)")
    obs = read_observation_csv(cfg["observation"])
    cutoff = min(cfg["cutoff"], obs.cutoff)
    space = CandidateSpace(obs.d, min(cfg["s"], obs.d), cutoff, cfg["m"], cfg["family_rule"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    extra = {"observation": {"d": obs.d, "epsilon": obs.epsilon, "cutoff": obs.cutoff, "seed": obs.seed}}
    if cfg["mode"] == "exact":
        ens, est = exact_aggregate(obs, space.candidates(DEFAULT_CEILING))
        ens.to_csv(out / "ensemble.csv")
        extra["argmax_candidate"] = ens.argmax().label()
    elif cfg["mode"] == "mcmc":
        mc = McmcConfig(steps=cfg["steps"], burn_in=cfg["burn_in"], seed=cfg["seed"])
        res = mcmc_aggregate(obs, mc, space)
        est = res.estimate
        _write_chain_csv(res, out / "chain.csv")
        extra["acceptance_rate"] = res.acceptance_rate
        extra["l2_stderr"] = res.l2_stderr()
    else:
        raise ValidationError("estimate supports modes 'exact' and 'mcmc'")
    write_coefficients_csv(est, out / "estimate.csv", metadata=f"mode={cfg['mode']}")
    write_manifest(cfg, precondition_checks(cfg), extra)
    return EXIT_OK


def _write_chain_csv(res, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["candidate", "m", "s_max", "visits", "frequency"])
    freqs = res.frequencies()
    for c in sorted(res.visits, key=lambda c: (-res.visits[c], c)):
        w.writerow([c.label(), c.m, c.s, res.visits[c], repr(freqs[c])])
    Path(path).write_text(buf.getvalue())


def cmd_benchmark(cfg: dict) -> int:
    grid = eps_grid(cfg)
    if len(set(grid)) < 4:
        raise ValidationError("benchmark needs at least 4 distinct noise levels in eps_grid")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    f = build_model(cfg)
    if cfg["mode"] == "lemma1":
        est = Lemma1Estimator(f.structure, cfg["beta"], cfg["L"])
    else:
        space = CandidateSpace(cfg["d"], cfg["s"], cfg["cutoff"], cfg["m"], cfg["family_rule"])
        if cfg["mode"] == "exact":
            space.size(DEFAULT_CEILING)
            est = AggregateEstimator(space)
        else:
            est = McmcEstimator(space, McmcConfig(steps=cfg["steps"], burn_in=cfg["burn_in"], seed=cfg["seed"]))
    reports = benchmark(f, est, grid, cfg["replicates"], cfg["seed"], lambda e: cfg["cutoff"],
                        cfg["beta"], cfg["L"], cfg["s"], cfg["m"], max_support=cfg["s"],
                        threads=cfg["threads"])
    write_reports_csv(reports, out / "risk.csv")
    write_plot_data(reports, out / "loglog.dat")
    fit = rate_fit(reports, rate_exponent(cfg["beta"], cfg["s"]))
    (out / "rate_fit.csv").write_text(
        "slope,intercept,r_squared,target_exponent,deviation\n"
        f"{fit.slope!r},{fit.intercept!r},{fit.r_squared!r},{fit.target_exponent!r},{fit.deviation()!r}\n")
    print(f"fitted slope {fit.slope:.4f} (target {fit.target_exponent:.4f}), r^2 = {fit.r_squared:.4f}")
    write_manifest(cfg, precondition_checks(cfg))
    return EXIT_OK


def cmd_verify_bounds(cfg: dict) -> int:
    d, s, m = cfg["d"], cfg["s"], cfg["m"]
    if m * s > d:
        raise ValidationError(f"partitions need m*s <= d (m={m}, s={s}, d={d})")
    n = B.partition_count(d, s, m)
    if n > B.ENUMERATION_CEILING:
        raise CapacityError(f"|P^{d}_{{{s},{m}}}| = {n} exceeds the enumeration ceiling {B.ENUMERATION_CEILING}")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    checks = B.combinatorics_checks()
    checks += B.packing_checks(d, s, m)
    checks += B.vg_checks(9)
    checks += B.prop1_checks()
    checks += B.prop2_checks(d, s, m, epsilon=cfg["epsilon"], L=cfg["L"])
    B.write_checks_csv(checks, out / "checks.csv")
    B.write_packing(B.greedy_packing(d, s, m, 1 / 8), out / "packing.txt")
    B.write_code(B.varshamov_gilbert(9), out / "vg_code.txt")
    failed = [c.name for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    for name in failed:
        print(f"FAILED {name}")
    write_manifest(cfg, precondition_checks(cfg), {"checks_run": len(checks), "checks_failed": failed})
    return EXIT_CHECK if failed else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "benchmark": cmd_benchmark,
    "verify-bounds": cmd_verify_bounds,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value settings file (flags override it)")
    for key, (typ, _) in SETTINGS.items():
        if key == "observation":
            continue
        common.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)
    p = argparse.ArgumentParser(prog="compound-minimax", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "estimate":
            sp.add_argument("observation", nargs="?", default=None, help="observation CSV")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        validate(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return COMMANDS[args.command](cfg)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ValidationError, ParameterError, DomainError, StructureError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
