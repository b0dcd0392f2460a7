"""Campaign configuration, runner, table output and the command line.

A campaign file is TOML::

    Z = 2
    n_e = 2
    state = "1^3(-1)+"          # or a field-free label such as "1s_0 2p_-1"
    beta_Z = [1.0, 6.25]
    eta = [0.25, 0.5, 1.0, 2.0] # optional
    N = [21, 31, 41, 51, 61, 71]
    output = "results"

    [scf]
    tol = 1e-6
    exchange = "nonlocal"

    [eigen]
    krylov_dim = 50

Runs are keyed by ``(beta_Z, eta, N)`` in ``manifest.json`` inside the
output directory, so an interrupted campaign resumes where it stopped.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli

from .extrap import (
    FitError,
    PoleError,
    extrapolate_domain,
    extrapolate_mesh,
    rational_eval,
    rational_fit,
    shipped_fits,
)
from .grid import DEFAULT_DELTA, Grid, make_domain
from .scf import EXCHANGE_MODES, EnergyRecord, ScfOptions, run_hf
from .states import Configuration, normalize_state_label, resolve_state

log = logging.getLogger("magnetohf")

WORKERS_ENV = "MAGNETOHF_WORKERS"
EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

DEFAULT_ETA = (0.25, 0.5, 1.0, 2.0)
DEFAULT_N = (21, 31, 41, 51, 61, 71)

_TOP_KEYS = {
    "Z", "n_e", "state", "beta_Z", "eta", "N", "output", "workers", "record_timing",
    "rho_max", "z_max", "delta", "fit_order", "scf", "eigen",
}
_SCF_KEYS = {"tol", "max_iter", "exchange", "mixing", "shift_fraction", "first_shift_factor", "slater_guard"}
_EIGEN_KEYS = {"k", "krylov_dim", "tol", "dense_max"}


class ConfigError(ValueError):
    """Invalid campaign file; the message carries the offending line when known."""


# ---------------------------------------------------------------- configuration


@dataclass
class CampaignConfig:
    Z: float
    state: str
    config: Configuration
    beta_Z: tuple
    eta: tuple = DEFAULT_ETA
    N: tuple = DEFAULT_N
    output: Path = Path("results")
    workers: int = 1
    record_timing: bool = True
    rho_max: float | None = None
    z_max: float | None = None
    delta: float = DEFAULT_DELTA
    fit_order: int = 4
    scf: ScfOptions = field(default_factory=ScfOptions)

    @property
    def n_e(self) -> int:
        return self.config.n_e

    def fingerprint(self) -> str:
        """Hash of everything that changes the numbers of a run."""
        key = {
            "Z": self.Z,
            "orbitals": [(o.m, o.z_parity, o.nu) for o in self.config.orbitals],
            "rho_max": self.rho_max,
            "z_max": self.z_max,
            "delta": self.delta,
            "scf": {k: v for k, v in asdict(self.scf).items() if k != "workers"},
        }
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def _line_of(text: str, key: str, section: str | None = None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        hdr = re.fullmatch(r"\[\s*([^\]]+?)\s*\]", s)
        if hdr:
            current = hdr.group(1)
            if section is None and current == key:
                return no
            continue
        if current == section and re.match(rf'"?{re.escape(key)}"?\s*=', s):
            return no
    return None


def _err(text: str, msg: str, key: str, section: str | None = None) -> ConfigError:
    line = _line_of(text, key, section)
    where = f"line {line}: " if line else ""
    return ConfigError(f"{where}{msg}")


def _number_list(text, raw, key, cast, *, positive=True):
    val = raw[key]
    if not isinstance(val, list):
        val = [val]
    if not val:
        raise _err(text, f"{key} must be a nonempty list", key)
    out = []
    for v in val:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise _err(text, f"{key} entries must be numbers, got {v!r}", key)
        if cast is int and float(v) != int(v):
            raise _err(text, f"{key} entries must be integers, got {v!r}", key)
        v = cast(v)
        if (positive and v <= 0) or (not positive and v < 0):
            raise _err(text, f"{key} entries must be {'positive' if positive else 'non-negative'}, got {v}", key)
        out.append(v)
    return tuple(out)


def _options(text, raw, section, allowed, mapping) -> dict:
    sub = raw.get(section, {})
    if not isinstance(sub, dict):
        raise _err(text, f"[{section}] must be a table", section)
    out = {}
    for k, v in sub.items():
        if k not in allowed:
            raise _err(text, f"unknown key {k!r} in [{section}]; allowed: {sorted(allowed)}", k, section)
        out[mapping.get(k, k)] = v
    return out


def config_from_text(text: str, base: Path | None = None) -> CampaignConfig:
    """Validate a campaign document and fill in defaults."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    for k in raw:
        if k not in _TOP_KEYS:
            raise _err(text, f"unknown key {k!r}; allowed: {sorted(_TOP_KEYS)}", k)
    for k in ("Z", "state", "beta_Z"):
        if k not in raw:
            raise ConfigError(f"missing required key {k!r}")
    Z = raw["Z"]
    if isinstance(Z, bool) or not isinstance(Z, (int, float)) or Z <= 0:
        raise _err(text, f"Z must be a positive number, got {Z!r}", "Z")
    if not isinstance(raw["state"], str):
        raise _err(text, "state must be a string label", "state")
    try:
        config = resolve_state(raw["state"], Z)
    except ValueError as exc:
        raise _err(text, str(exc), "state") from None
    if "n_e" in raw:
        n_e = raw["n_e"]
        if isinstance(n_e, bool) or not isinstance(n_e, int) or n_e < 1:
            raise _err(text, f"n_e must be a positive integer, got {n_e!r}", "n_e")
        if n_e != config.n_e:
            raise _err(
                text, f"state {raw['state']!r} has {config.n_e} orbitals but n_e = {n_e}", "n_e"
            )

    kw = {}
    kw["beta_Z"] = _number_list(text, raw, "beta_Z", float, positive=False)
    if "eta" in raw:
        kw["eta"] = _number_list(text, raw, "eta", float)
    if "N" in raw:
        kw["N"] = _number_list(text, raw, "N", int)
        if min(kw["N"]) < 4:
            raise _err(text, "N entries must be at least 4", "N")
    for k in ("rho_max", "z_max", "delta"):
        if k in raw:
            v = raw[k]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
                raise _err(text, f"{k} must be a positive number, got {v!r}", k)
            kw[k] = float(v)
    if any(b <= 0 for b in kw["beta_Z"]) and "rho_max" not in kw and "z_max" not in kw:
        raise _err(text, "beta_Z = 0 needs an explicit rho_max or z_max", "beta_Z")
    if "output" in raw:
        if not isinstance(raw["output"], str):
            raise _err(text, "output must be a path string", "output")
        out = Path(raw["output"])
        kw["output"] = out if out.is_absolute() or base is None else base / out
    elif base is not None:
        kw["output"] = base / "results"
    if "record_timing" in raw:
        if not isinstance(raw["record_timing"], bool):
            raise _err(text, "record_timing must be true or false", "record_timing")
        kw["record_timing"] = raw["record_timing"]
    if "fit_order" in raw:
        n = raw["fit_order"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 2:
            raise _err(text, f"fit_order must be an integer >= 2, got {n!r}", "fit_order")
        kw["fit_order"] = n

    workers = raw.get("workers", config.n_e)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise _err(text, f"workers must be a positive integer, got {workers!r}", "workers")
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            workers = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if workers < 1:
            raise ConfigError(f"{WORKERS_ENV} must be positive, got {workers}")
    # eigensolves never use more threads than electrons
    kw["workers"] = min(workers, config.n_e)

    scf_kw = _options(text, raw, "scf", _SCF_KEYS, {})
    scf_kw.update(_options(text, raw, "eigen", _EIGEN_KEYS, {"tol": "eig_tol"}))
    if "exchange" in scf_kw and scf_kw["exchange"] not in EXCHANGE_MODES:
        raise _err(text, f"exchange must be one of {EXCHANGE_MODES}", "exchange", "scf")
    try:
        kw["scf"] = ScfOptions(workers=kw["workers"], **scf_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [scf]/[eigen] options: {exc}") from None
    return CampaignConfig(Z=float(Z), state=raw["state"], config=config, **kw)


def parse_config(path) -> CampaignConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return config_from_text(text, base=path.parent)


# ---------------------------------------------------------------- campaign


@dataclass
class FinalEnergy:
    beta_Z: float
    E_HF: float
    mesh_r2: tuple
    domain_r2: float
    mesh_limits: tuple
    warnings: tuple = ()

    @property
    def min_mesh_r2(self) -> float:
        return min(self.mesh_r2)


@dataclass
class CampaignResult:
    config: CampaignConfig
    records: list
    finals: dict
    failures: list
    fit: object | None = None

    @property
    def complete(self) -> bool:
        return all(b in self.finals for b in self.config.beta_Z)


def _run_key(beta, eta, N) -> str:
    return f"{beta!r}|{eta!r}|{N}"


class Manifest:
    """Completed runs of one campaign, persisted after every run."""

    def __init__(self, path: Path, fingerprint: str):
        self.path = path
        self.fingerprint = fingerprint
        self.runs: dict[str, dict] = {}
        if path.exists():
            try:
                data = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError):
                log.warning("ignoring unreadable manifest %s", path)
                return
            if data.get("fingerprint") == fingerprint:
                self.runs = data.get("runs", {})
            else:
                log.warning("manifest %s belongs to different settings; starting afresh", path)

    def get(self, beta, eta, N) -> EnergyRecord | None:
        d = self.runs.get(_run_key(beta, eta, N))
        if d is None:
            return None
        d = dict(d)
        d["eps"] = tuple(d["eps"])
        d["trace"] = tuple(d.get("trace", ()))
        return EnergyRecord(**d)

    def put(self, rec: EnergyRecord) -> None:
        self.runs[_run_key(rec.beta_Z, rec.eta, rec.N)] = asdict(rec)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"fingerprint": self.fingerprint, "runs": self.runs}, indent=1))
        tmp.replace(self.path)


def run_campaign(cfg: CampaignConfig, *, resume: bool = True) -> CampaignResult:
    """Every ``(beta_Z, eta, N)`` run, then both extrapolations per ``beta_Z``."""
    cfg.output.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(cfg.output / "manifest.json", cfg.fingerprint()) if resume else None
    records, failures, finals = [], [], {}
    for beta in cfg.beta_Z:
        limits, areas, r2s, notes = [], [], [], []
        for eta in cfg.eta:
            recs = []
            for N in cfg.N:
                rec = manifest.get(beta, eta, N) if manifest else None
                if rec is None:
                    try:
                        dom = make_domain(beta, eta, rho_max=cfg.rho_max, z_max=cfg.z_max)
                        rec = run_hf(cfg.config, Grid(N, dom, cfg.delta), cfg.scf)
                    except Exception as exc:  # a failed run must not stop the campaign
                        log.error("run beta_Z=%g eta=%g N=%d failed: %s", beta, eta, N, exc)
                        failures.append((beta, eta, N, f"{type(exc).__name__}: {exc}"))
                        continue
                    if manifest:
                        manifest.put(rec)
                log.info("beta_Z=%g eta=%g N=%d E_HF=%.10f (%d iterations)", beta, eta, N, rec.E_HF, rec.iterations)
                recs.append(rec)
            records.extend(recs)
            try:
                ext = extrapolate_mesh(recs)
            except (ValueError, FitError) as exc:
                log.error("mesh extrapolation beta_Z=%g eta=%g failed: %s", beta, eta, exc)
                failures.append((beta, eta, None, f"mesh extrapolation: {exc}"))
                continue
            limits.append(ext.value)
            areas.append(recs[0].area)
            r2s.append(ext.fit.r2)
            notes.extend(ext.warnings)
        try:
            dom_ext = extrapolate_domain(areas, limits)
        except (ValueError, FitError) as exc:
            log.error("domain extrapolation beta_Z=%g failed: %s", beta, exc)
            failures.append((beta, None, None, f"domain extrapolation: {exc}"))
            continue
        notes.extend(dom_ext.warnings)
        finals[beta] = FinalEnergy(beta, dom_ext.value, tuple(r2s), dom_ext.fit.r2, tuple(limits), tuple(notes))
        log.info("beta_Z=%g final |E_HF| = %.6f", beta, abs(dom_ext.value))
    fit = None
    order = cfg.fit_order
    if len(finals) >= 8 and len(finals) >= 2 * order:
        betas = sorted(finals)
        try:
            fit = rational_fit(betas, [abs(finals[b].E_HF) for b in betas], order, label=cfg.config.label)
        except (ValueError, FitError) as exc:
            log.error("rational fit failed: %s", exc)
            failures.append((None, None, None, f"rational fit: {exc}"))
    return CampaignResult(cfg, records, finals, failures, fit)


# ---------------------------------------------------------------- tables


def _fmt(x: float) -> str:
    return repr(float(x))


def write_runs(path: Path, records, n_e: int, record_timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta_Z", "eta", "N", "E_HF"] + [f"eps_{i + 1}" for i in range(n_e)] + ["iterations", "seconds"])
        for r in sorted(records, key=lambda r: (r.beta_Z, r.eta, r.N)):
            secs = f"{r.seconds:.3f}" if record_timing else ""
            w.writerow([_fmt(r.beta_Z), _fmt(r.eta), r.N, _fmt(r.E_HF)] + [_fmt(e) for e in r.eps] + [r.iterations, secs])


def write_final(path: Path, finals: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta_Z", "abs_E_HF", "mesh_r2", "domain_r2"])
        for b in sorted(finals):
            f = finals[b]
            w.writerow([_fmt(b), _fmt(abs(f.E_HF)), _fmt(f.min_mesh_r2), _fmt(f.domain_r2)])


def write_fits(path: Path, fits) -> None:
    """One row per fit: label, numerator and denominator coefficients, max error."""
    fits = list(fits)
    n = max(len(f.coeffs.a) for f in fits)
    m = max(len(f.coeffs.b) for f in fits)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state"] + [f"a_{i}" for i in range(n)] + [f"b_{i}" for i in range(m)] + ["max_frac_error"])
        for f in fits:
            a = [_fmt(v) for v in f.coeffs.a] + [""] * (n - len(f.coeffs.a))
            b = [_fmt(v) for v in f.coeffs.b] + [""] * (m - len(f.coeffs.b))
            w.writerow([f.coeffs.label] + a + b + [_fmt(f.max_frac_error)])


def write_plot_data(path: Path, records, etas) -> None:
    """``|E|`` against ``N``, one column per ``eta``, rows per ``(beta_Z, N)``."""
    table: dict[tuple, dict] = {}
    for r in records:
        table.setdefault((r.beta_Z, r.N), {})[r.eta] = abs(r.E_HF)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta_Z", "N"] + [f"abs_E_eta_{e:g}" for e in etas])
        for (b, N) in sorted(table):
            row = table[(b, N)]
            w.writerow([_fmt(b), N] + [_fmt(row[e]) if e in row else "" for e in etas])


def emit_tables(result: CampaignResult, outdir: Path | None = None) -> dict[str, Path]:
    cfg = result.config
    out = Path(outdir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"runs": out / "runs.csv", "final": out / "final.csv", "plot": out / "plot_data.csv"}
    write_runs(paths["runs"], result.records, cfg.n_e, cfg.record_timing)
    write_final(paths["final"], result.finals)
    write_plot_data(paths["plot"], result.records, cfg.eta)
    if result.fit is not None:
        paths["fits"] = out / "fits.csv"
        write_fits(paths["fits"], [result.fit])
    return paths


def read_final(path) -> tuple[list, list]:
    betas, energies = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            betas.append(float(row["beta_Z"]))
            energies.append(float(row["abs_E_HF"]))
    return betas, energies


# ---------------------------------------------------------------- commands


def _cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output:
        cfg.output = Path(args.output)
    result = run_campaign(cfg, resume=not args.fresh)
    paths = emit_tables(result)
    for b in cfg.beta_Z:
        f = result.finals.get(b)
        print(f"beta_Z={b:g}: " + (f"|E_HF| = {abs(f.E_HF):.6f}" if f else "missing"))
    for p in paths.values():
        print(f"wrote {p}")
    for fail in result.failures:
        print(f"failure: {fail}", file=sys.stderr)
    return EXIT_OK if result.complete else EXIT_PARTIAL


def _cmd_fit(args) -> int:
    try:
        betas, energies = read_final(args.final)
    except (OSError, KeyError, ValueError) as exc:
        print(f"cannot read {args.final}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        fit = rational_fit(betas, energies, args.order, label=args.state)
    except (ValueError, FitError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    out = Path(args.out) if args.out else Path(args.final).with_name("fits.csv")
    write_fits(out, [fit])
    print(f"a = {list(fit.coeffs.a)}")
    print(f"b = {list(fit.coeffs.b)}")
    print(f"max fractional error = {fit.max_frac_error:.3e}")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    fits = shipped_fits()
    try:
        key = normalize_state_label(args.state)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if key not in fits:
        print(f"no shipped fit for {args.state!r}; available: {sorted(fits)}", file=sys.stderr)
        return EXIT_CONFIG
    status = EXIT_OK
    for beta in args.beta:
        try:
            print(f"{key} beta_Z={beta:g} |E_HF| = {rational_eval(fits[key], beta):.6f}")
        except (ValueError, PoleError) as exc:
            print(f"beta_Z={beta:g}: {exc}", file=sys.stderr)
            status = EXIT_PARTIAL
    return status


def _cmd_oracle(args) -> int:
    from .oracle import run_all

    checks = run_all(quick=args.quick)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} oracle checks passed")
    return EXIT_OK if failed == 0 else EXIT_PARTIAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magnetohf", description="Hartree-Fock energies of atoms in strong magnetic fields")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a campaign from a TOML file")
    r.add_argument("config")
    r.add_argument("--output", help="override the output directory")
    r.add_argument("--fresh", action="store_true", help="ignore an existing manifest")
    r.set_defaults(func=_cmd_run)

    f = sub.add_parser("fit", help="fit the rational form to a final.csv")
    f.add_argument("final")
    f.add_argument("--state", required=True)
    f.add_argument("--order", type=int, default=4)
    f.add_argument("--out", help="fits.csv path (default: next to final.csv)")
    f.set_defaults(func=_cmd_fit)

    e = sub.add_parser("eval", help="evaluate a shipped rational fit")
    e.add_argument("--state", required=True)
    e.add_argument("--beta", type=float, nargs="+", required=True)
    e.set_defaults(func=_cmd_eval)

    o = sub.add_parser("oracle", help="run the analytic and dense-solver validation suites")
    o.add_argument("--quick", action="store_true", help="smaller meshes")
    o.set_defaults(func=_cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
