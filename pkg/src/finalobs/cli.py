"""Command-line runner: ``finalobs <command> --config cfg.json --out DIR``.

Exit codes: 0 pass, 2 certification failure, 3 audit failure, 4 config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, config_hash, load_config
from .constants import ConstantBundle, InvariantViolation, derive_certificate, q_ratio
from .evolution import CertificationError, NotEllipticError, certify_DE, estimate_exp_bound
from .observation import certify_UCP
from .pipeline import UncertifiedBundleError, compute_traces, epsilon_balance_check, run_telescope, verify_OBS
from .time_sets import (
    DomainError,
    Mode,
    NotDensityPointError,
    SequenceCertificateError,
    TimeSet,
    build_sequence,
    find_density_point,
    measure,
)

EXIT_OK, EXIT_CERT, EXIT_AUDIT, EXIT_CONFIG = 0, 2, 3, 4

INSTANCE_KEYS = ("grid", "horizon", "symbol", "sensors", "time_set", "projector", "lambda_grid",
                 "ucp_lambda_grid", "st_grid", "monte_carlo", "ucp", "seed")


def instance_hash(cfg: Config) -> str:
    return config_hash({k: cfg.raw.get(k) for k in INSTANCE_KEYS})


def _versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"finalobs": own, "numpy": np.__version__, "python": sys.version.split()[0]}


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _r_label(r: float) -> str:
    return "inf" if math.isinf(r) else f"{r:g}"


# -- steps --------------------------------------------------------------------------


def run_certify_de(cfg: Config):
    fam = cfg.family()
    mc = cfg.raw["monte_carlo"]
    return certify_DE(fam, cfg.projectors(), cfg.raw["lambda_grid"], cfg.raw["st_grid"], int(mc["trials"]), cfg.seed)


def run_certify_ucp(cfg: Config):
    E = cfg.time_set()
    lams = cfg.raw["ucp_lambda_grid"] or cfg.raw["lambda_grid"]
    u = cfg.raw["ucp"]
    return certify_UCP(
        cfg.sensors(E), E, cfg.projectors(), lams, cfg.space(), int(cfg.raw["monte_carlo"]["trials"]),
        float(u["gamma1"]), float(u["d1_min"]), cfg.seed,
    )


def build_bundle(cfg: Config) -> ConstantBundle:
    """Certify every hypothesis of the observability theorem and assemble the constants."""
    fam = cfg.family()
    de = run_certify_de(cfg)
    ucp = run_certify_ucp(cfg)
    mc = cfg.raw["monte_carlo"]
    eb = estimate_exp_bound(fam, int(mc["trials"]), cfg.raw["st_grid"], cfg.seed)
    E = cfg.time_set()
    lineage = {
        "instance_hash": instance_hash(cfg),
        "grid": cfg.space().to_json(),
        "seed": cfg.seed,
        "de": de.to_json(),
        "ucp": ucp.to_json(),
        "exp_bound": {"M": eb.M, "omega": eb.omega, "samples": eb.samples},
    }
    return ConstantBundle(
        d0=ucp.d0, d1=ucp.d1, gamma1=ucp.gamma1,
        d2=de.d2, d3=de.d3, gamma2=de.gamma2, gamma3=de.gamma3, gamma4=de.gamma4,
        M=eb.M, omega=eb.omega, C_sup=cfg.sensors(E).C_sup(E),
        certified=True, lineage=lineage,
    )


def load_bundle(path: str | Path, cfg: Config) -> ConstantBundle:
    data = json.loads(Path(path).read_text())
    bundle = ConstantBundle.from_json(data)
    lin = bundle.lineage or {}
    if lin.get("instance_hash") not in (None, instance_hash(cfg)):
        raise ConfigError("bundle was certified for a different instance (grid, seed or model differ)")
    if lin.get("grid") not in (None, cfg.space().to_json()):
        raise ConfigError(f"bundle grid {lin.get('grid')} does not match config grid {cfg.space().to_json()}")
    return bundle


def choose_window(cfg: Config, E: TimeSet, q: float) -> tuple[float, float, Mode | None]:
    """``(ell, ell1)`` and the requested mode (``None`` lets the sequence decide)."""
    dens = cfg.raw["density"]
    mode = cfg.raw["mode"]
    if "ell" in dens and "ell1" in dens:
        return float(dens["ell"]), float(dens["ell1"]), None if mode == "auto" else Mode(mode)
    if mode == "full_interval":
        a, b = max(E.intervals, key=lambda ab: (ab[1] - ab[0], -ab[0]))
        return a, b, Mode.FULL_INTERVAL
    dp = find_density_point(E, q, bool(dens["relaxed"]), float(dens["ell1_fraction"]))
    return dp.ell, dp.ell1, None if mode == "auto" else Mode(mode)


def _bundle_q(cfg: Config, bundle: ConstantBundle | None) -> float:
    if bundle is not None:
        return q_ratio(bundle.gamma1, bundle.gamma2, bundle.gamma3)
    return q_ratio(float(cfg.raw["ucp"]["gamma1"]), float(cfg.symbol().degree), 1.0)


def _sample_in(E: TimeSet, rng: np.random.Generator) -> float:
    lengths = np.array([b - a for a, b in E.intervals])
    i = rng.choice(len(lengths), p=lengths / lengths.sum())
    a, b = E.intervals[i]
    return float(a + (b - a) * rng.uniform(0.05, 0.95))


def run_verify(cfg: Config, bundle: ConstantBundle, run_mode: str) -> tuple[dict, dict, int]:
    """All audits and the final-state inequality; returns (report, tables, exit code)."""
    fam = cfg.family()
    E = cfg.time_set()
    sensors = cfg.sensors(E)
    q = _bundle_q(cfg, bundle)
    ell, ell1, mode = choose_window(cfg, E, q)
    depth = int(cfg.raw["depth"])
    seq = build_sequence(E, ell, ell1, q, depth + 2, mode)
    cert = derive_certificate(bundle, ell=ell, ell1=ell1, T=fam.T, mode=seq.mode, measE=E.measure, depth=depth + 1)
    batch = cfg.batch()
    ids = [f"x{i}" for i in range(len(batch))]

    rng = np.random.default_rng([cfg.seed, 2])
    balance = []
    for i in range(int(cfg.raw["balance"]["samples"])):
        t = _sample_in(E, rng)
        s = float(rng.uniform(0.0, t))
        eps = float(rng.uniform(1e-6, 1 - 1e-6))
        balance.append(epsilon_balance_check(fam, sensors, bundle, s, t, eps, batch[i % len(batch)], E, cfg.projectors()))

    audits = [
        run_telescope(fam, sensors, bundle, E, ell, ell1, depth, x0, seq.mode, proj_family=cfg.projectors())
        for x0 in batch
    ]
    failures = [f"balance[{i}]:{name}" for i, a in enumerate(balance) for name in a.failures]
    failures += [f"{ids[i]}:{f}" for i, a in enumerate(audits) for f in a.failures()]

    obs_reports, code = [], EXIT_OK
    obs_mode = run_mode
    if run_mode == "certify" and not bundle.certified:
        code = EXIT_CERT
        obs_mode = "diagnostic"
        failures.append("uncertified bundle: final-state check run in diagnostic mode only")
    for r in cfg.r_list:
        obs_reports.append(verify_OBS(fam, sensors, cert, E, r, batch, obs_mode, ids))
    if any(rep.passed is False for rep in obs_reports):
        failures.append("obs margin negative")
    audit_failed = any(not a.passed for a in balance) or any(not a.passed for a in audits) or any(
        rep.passed is False for rep in obs_reports
    )
    if audit_failed:
        code = EXIT_AUDIT

    traces = compute_traces(fam, sensors, batch[0], np.linspace(0.0, fam.T, 201), ids[0])
    report = {
        "schema": "finalobs.report/1",
        "config_hash": cfg.hash,
        "instance_hash": instance_hash(cfg),
        "seed": cfg.seed,
        "run_mode": run_mode,
        "versions": _versions(),
        "grid": cfg.space().to_json(),
        "bundle": bundle.to_json(),
        "certificate": cert.to_json(),
        "window": {"ell": ell, "ell1": ell1, "mode": seq.mode.value, "measE": E.measure},
        "balance": {
            "samples": len(balance),
            "passed": all(a.passed for a in balance),
            "min_slack": min((a.min_slack for a in balance), default=None),
            "records": [a.to_json() for a in balance],
        },
        "telescope": {
            "passed": all(a.passed for a in audits),
            "max_identity_error": max(a.max_identity_error for a in audits),
            "remainders": [a.remainder for a in audits],
            "remainder_bounds": [a.remainder_bound for a in audits],
            "audits": [a.to_json() for a in audits],
        },
        "obs": [rep.to_json() for rep in obs_reports],
        "failures": failures,
        "exit_code": code,
    }
    tables = {
        "audit.csv": [{"x0_id": ids[i], **row} for i, a in enumerate(audits) for row in a.csv_rows()],
        "traces.csv": [{"t": t, "F": F, "G": G} for t, F, G in traces.rows()],
    }
    for rep in obs_reports:
        tables[f"margins_r{_r_label(rep.r)}.csv"] = [m.to_json() for m in rep.margins]
    return report, tables, code


# -- commands -------------------------------------------------------------------------


def cmd_certify_de(cfg: Config, args, out: Path) -> int:
    de = run_certify_de(cfg)
    data = {"config_hash": cfg.hash, "instance_hash": instance_hash(cfg), **de.to_json()}
    _write_json(out / "de_certificate.json", data)
    print(json.dumps({k: data[k] for k in ("d2", "d3", "gamma2", "gamma3", "gamma4")}))
    return EXIT_OK


def cmd_certify_ucp(cfg: Config, args, out: Path) -> int:
    ucp = run_certify_ucp(cfg)
    data = {"config_hash": cfg.hash, "instance_hash": instance_hash(cfg), **ucp.to_json()}
    _write_json(out / "ucp_certificate.json", data)
    print(json.dumps({k: data[k] for k in ("d0", "d1", "gamma1")}))
    return EXIT_OK


def cmd_constants(cfg: Config, args, out: Path) -> int:
    bundle = load_bundle(args.bundle, cfg) if args.bundle else build_bundle(cfg)
    E = cfg.time_set()
    q = _bundle_q(cfg, bundle)
    ell, ell1, mode = choose_window(cfg, E, q)
    if mode is None:
        full = measure(E, (ell, ell1)) >= (ell1 - ell) * (1 - 1e-12)
        mode = Mode.FULL_INTERVAL if full else Mode.GENERAL
    certs = [
        derive_certificate(bundle, ell=ell, ell1=ell1, T=cfg.T, mode=mode, r=r, measE=E.measure, depth=int(cfg.raw["depth"]))
        for r in cfg.r_list
    ]
    _write_json(out / "bundle.json", bundle.to_json())
    _write_json(out / "certificate.json", {"config_hash": cfg.hash, "certificates": [c.to_json() for c in certs]})
    print(json.dumps({"q": certs[0].q, "c1": certs[0].c1, "c2": certs[0].c2, "c3": certs[0].c3, "c4": certs[0].c4,
                      "C_obs": certs[0].C_obs, "certified": bundle.certified}))
    return EXIT_OK if bundle.certified else EXIT_CERT


def cmd_density_seq(cfg: Config, args, out: Path) -> int:
    E = cfg.time_set()
    q = _bundle_q(cfg, None)
    ell, ell1, mode = choose_window(cfg, E, q)
    seq = build_sequence(E, ell, ell1, q, int(cfg.raw["depth"]) + 2, mode)
    _write_json(out / "sequence.json", {"config_hash": cfg.hash, **seq.to_json()})
    print(json.dumps({"ell": ell, "ell1": ell1, "mode": seq.mode.value, "q": q}))
    return EXIT_OK


def cmd_verify(cfg: Config, args, out: Path) -> int:
    t0 = time.perf_counter()
    bundle = load_bundle(args.bundle, cfg) if args.bundle else build_bundle(cfg)
    t1 = time.perf_counter()
    report, tables, code = run_verify(cfg, bundle, args.mode)
    t2 = time.perf_counter()
    _write_json(out / "report.json", report)
    for name, rows in tables.items():
        _write_csv(out / name, rows)
    _write_json(out / "timings.json", {"bundle_s": t1 - t0, "verify_s": t2 - t1})
    for f in report["failures"]:
        print(f"FAIL {f}", file=sys.stderr)
    summary = {_r_label(float(rep["r"])): rep["min_margin"] for rep in report["obs"]}
    print(json.dumps({"exit_code": code, "C_obs": report["certificate"]["C_obs"], "min_margin": summary}))
    return code


def cmd_report(cfg: Config | None, args, out: Path) -> int:
    path = out / "report.json"
    if not path.exists():
        raise ConfigError(f"no report at {path}; run 'verify' first")
    rep = json.loads(path.read_text())
    lines = [
        f"config   {rep['config_hash'][:16]}  seed {rep['seed']}  mode {rep['run_mode']}",
        f"window   ell={rep['window']['ell']:.6g} ell1={rep['window']['ell1']:.6g} ({rep['window']['mode']})",
        f"C_obs    {rep['certificate']['C_obs']:.6g}",
        f"balance  {'pass' if rep['balance']['passed'] else 'FAIL'}  min slack {rep['balance']['min_slack']:.3g}",
        f"telescope {'pass' if rep['telescope']['passed'] else 'FAIL'}  identity err {rep['telescope']['max_identity_error']:.2e}",
    ]
    for o in rep["obs"]:
        status = {True: "pass", False: "FAIL", None: "diagnostic"}[o["passed"]]
        lines.append(f"obs r={_r_label(float(o['r']))}  {status}  min margin {o['min_margin']:.6g}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return int(rep["exit_code"])


COMMANDS = {
    "certify-de": cmd_certify_de,
    "certify-ucp": cmd_certify_ucp,
    "constants": cmd_constants,
    "density-seq": cmd_density_seq,
    "verify": cmd_verify,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="finalobs", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="experiment config (JSON, schema finalobs.config/1)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--mode", choices=("certify", "diagnostic"), default="certify")
    ap.add_argument("--bundle", help="previously certified bundle.json to reuse")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "report":
            return cmd_report(None, args, out)
        if not args.config:
            raise ConfigError("--config is required")
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotEllipticError as exc:
        print(f"certification failed: symbol is not uniformly strongly elliptic: {exc}", file=sys.stderr)
        return EXIT_CERT
    except CertificationError as exc:
        print(f"certification failed: {exc} {json.dumps(exc.witness)}", file=sys.stderr)
        return EXIT_CERT
    except (SequenceCertificateError, NotDensityPointError, UncertifiedBundleError) as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT
    except (DomainError, InvariantViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
