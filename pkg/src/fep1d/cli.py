"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 a replica did not
freeze within ``--max-events``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from fep1d import __version__
from fep1d.correlations import correlation_by_integral, correlations_by_series, exact_variances
from fep1d.dynamics import RULES, PARALLEL_TA, FrozenEnsemble, NotFrozenError, gap_total_variation, simulate_ensemble
from fep1d.estimators import stats_from_arrays
from fep1d.renewal import GapLaw, sample_window, sample_window_batch
from fep1d.report import COLUMNS, ROUTES, parse_l_grid, regime_report
from fep1d.streams import stream
from fep1d.walkmax import walk_max_bruteforce_counts, walk_max_counts, walk_max_pmf, walk_max_second_moment

log = logging.getLogger("fep1d")

SCHEMA_VERSION = 1
SUBCOMMANDS = ("sample", "simulate", "gaps", "exact-variance", "correlations", "rw-max", "regimes")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_NOT_FROZEN = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunSpec:
    subcommand: str
    delta: Optional[float] = None
    rho: Optional[float] = None
    L: Optional[int] = None
    L_grid: Optional[str] = None
    parity: str = "all"
    route: str = "exact-series"
    ring_size: int = 2**20
    replicas: int = 10
    samples: int = 100_000
    seed: int = 0
    out: Optional[str] = None
    format: str = "csv"
    rule: str = PARALLEL_TA
    K: int = 100
    max_events: int = 10**12
    ensemble: Optional[str] = None
    records: Optional[str] = None
    brute_check: bool = False
    integral_check: bool = False

    def validate(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")
        needs_density = self.subcommand in ("sample", "simulate", "exact-variance", "correlations", "regimes")
        if self.subcommand == "gaps" and self.ensemble is None:
            needs_density = True
        if needs_density:
            if (self.delta is None) == (self.rho is None):
                raise UsageError("give exactly one of --delta / --rho")
            if self.delta is None:
                self.delta = 0.5 - float(self.rho)
            if not 0.0 <= self.delta < 0.5:
                raise UsageError("delta must lie in [0, 1/2)")
            self.rho = 0.5 - self.delta
        if self.format not in ("csv", "json"):
            raise UsageError("--format must be csv or json")
        if self.route not in ROUTES:
            raise UsageError(f"--route must be one of {ROUTES}")
        if self.rule not in RULES:
            raise UsageError(f"--rule must be one of {RULES}")
        if self.parity not in ("all", "odd", "even"):
            raise UsageError("--parity must be all, odd or even")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fep1d", description="Frozen states of the 1d facilitated exclusion process.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand")

    def common(sp, density=True, grid=False):
        if density:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--delta", type=float)
            g.add_argument("--rho", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--spec", help="JSON RunSpec; explicit flags override it")
        if grid:
            sp.add_argument("--L-grid", dest="L_grid")
            sp.add_argument("--parity", choices=("all", "odd", "even"))

    sp = sub.add_parser("sample", help="exact windows of the frozen measure")
    common(sp)
    sp.add_argument("--L", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--records", help="also write WindowSample records (JSON lines)")

    sp = sub.add_parser("simulate", help="run dynamics to absorption")
    common(sp)
    sp.add_argument("--ring-size", dest="ring_size", type=int)
    sp.add_argument("--replicas", type=int)
    sp.add_argument("--rule", choices=RULES)
    sp.add_argument("--max-events", dest="max_events", type=int)
    sp.add_argument("--L", type=int, help="with --records: window length to export")
    sp.add_argument("--records")

    sp = sub.add_parser("gaps", help="frozen gap histogram against the exact law")
    common(sp)
    sp.add_argument("--ensemble", help="ensemble file written by 'simulate'")
    sp.add_argument("--ring-size", dest="ring_size", type=int)
    sp.add_argument("--replicas", type=int)
    sp.add_argument("--rule", choices=RULES)
    sp.add_argument("--max-events", dest="max_events", type=int)

    sp = sub.add_parser("exact-variance", help="exact number variance from the correlation series")
    common(sp, grid=True)
    sp.add_argument("--L", type=int)

    sp = sub.add_parser("correlations", help="truncated two-point function table")
    common(sp)
    sp.add_argument("--K", type=int)
    sp.add_argument("--integral-check", dest="integral_check", action="store_true", default=None)

    sp = sub.add_parser("rw-max", help="law of the random-walk maximum")
    common(sp, density=False)
    sp.add_argument("--L", type=int)
    sp.add_argument("--brute-check", dest="brute_check", action="store_true", default=None)

    sp = sub.add_parser("regimes", help="variance against the three-regime prediction")
    common(sp, grid=True)
    sp.add_argument("--route", choices=ROUTES)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--ring-size", dest="ring_size", type=int)
    sp.add_argument("--replicas", type=int)
    sp.add_argument("--rule", choices=RULES)
    return p


def _runspec(argv) -> RunSpec:
    parser = _build_parser()
    # argparse exits with status 2 on usage errors; remap to 1
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        if e.code in (0, None):
            raise
        raise UsageError("invalid arguments") from None
    if ns.subcommand is None:
        parser.print_help(sys.stderr)
        raise UsageError("missing subcommand")
    given = {k: v for k, v in vars(ns).items() if v is not None and k != "spec"}
    base = {}
    if getattr(ns, "spec", None):
        with open(ns.spec, encoding="utf-8") as fh:
            base = json.load(fh)
        if "delta" in given or "rho" in given:
            base.pop("delta", None)
            base.pop("rho", None)
        elif base.get("delta") is not None:
            # manifests record both; delta is the primary parameter
            base.pop("rho", None)
    base.update(given)
    fields = {f.name for f in dataclasses.fields(RunSpec)}
    unknown = set(base) - fields
    if unknown:
        raise UsageError(f"unknown RunSpec fields {sorted(unknown)}")
    spec = RunSpec(**base)
    spec.validate()
    return spec


def _workers() -> int:
    env = os.environ.get("FEP_THREADS")
    if env:
        return max(1, int(env))
    return 1


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def _emit(spec: RunSpec, header, rows, extra: Optional[dict] = None) -> None:
    """Write rows as CSV (or JSON) to ``spec.out`` or stdout, plus a manifest next to files."""
    meta = {"schema_version": SCHEMA_VERSION, "runspec": spec.as_dict()}
    if extra:
        meta.update(extra)
    if spec.format == "json":
        payload = dict(meta, columns=list(header), rows=[dict(zip(header, r)) for r in rows])
        text = json.dumps(payload, indent=1, sort_keys=True, default=_json_default) + "\n"
    else:
        buf = io.StringIO()
        buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
        buf.write("# runspec: " + json.dumps(spec.as_dict(), sort_keys=True) + "\n")
        for k, v in (extra or {}).items():
            buf.write(f"# {k}: " + json.dumps(v, sort_keys=True, default=_json_default) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([[_fmt(v) for v in r] for r in rows])
        text = buf.getvalue()
    if spec.out is None:
        sys.stdout.write(text)
        return
    with open(spec.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    _manifest(spec)


def _manifest(spec: RunSpec, **extra) -> None:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "master_seed": spec.seed,
        "replicas": spec.replicas,
        "runspec": spec.as_dict(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "version": __version__,
    }
    manifest.update(extra)
    with open(spec.out + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _need(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _grid(spec: RunSpec) -> list[int]:
    if spec.L_grid:
        Ls = parse_l_grid(spec.L_grid)
    else:
        Ls = [_need(spec.L, "--L or --L-grid")]
    if spec.parity == "odd":
        Ls = [v for v in Ls if v % 2]
    elif spec.parity == "even":
        Ls = [v for v in Ls if v % 2 == 0]
    if not Ls or min(Ls) < 1:
        raise UsageError("empty or invalid L grid")
    return Ls


def cmd_exact_variance(spec: RunSpec) -> int:
    Ls = _grid(spec)
    values = exact_variances(spec.delta, Ls)
    if spec.L_grid is None and spec.out is None and spec.format == "csv":
        print(repr(float(values[0])))
        return EXIT_OK
    rows = [(spec.delta, L, "odd" if L % 2 else "even", float(v)) for L, v in zip(Ls, values)]
    _emit(spec, ("delta", "L", "parity", "variance"), rows)
    return EXIT_OK


def cmd_correlations(spec: RunSpec) -> int:
    table = correlations_by_series(spec.delta, spec.K)
    if spec.integral_check:
        if spec.delta == 0.0:
            raise UsageError("--integral-check needs delta > 0")
        worst = max(abs(correlation_by_integral(spec.delta, k) - table[k]) for k in range(1, spec.K + 1, 2))
        log.info("max |series - integral| over odd k <= %d: %.3e", spec.K, worst)
    buf = io.StringIO()
    table.to_csv(buf)
    lines = buf.getvalue().splitlines()
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    _emit(spec, header, rows)
    return EXIT_OK


def cmd_rw_max(spec: RunSpec) -> int:
    L = _need(spec.L, "--L")
    law = walk_max_pmf(L)
    extra = {"second_moment": walk_max_second_moment(L)}
    if spec.brute_check:
        match = walk_max_counts(L) == walk_max_bruteforce_counts(L)
        extra["brute_check"] = "exact match" if match else "MISMATCH"
        print(f"brute-force check (L={L}): {extra['brute_check']}", file=sys.stderr)
        if not match:
            return EXIT_RUNTIME
    rows = [(n, repr(float(p))) for n, p in enumerate(law.pmf)]
    _emit(spec, ("n", "pmf"), rows, extra)
    return EXIT_OK


def cmd_sample(spec: RunSpec) -> int:
    L = _need(spec.L, "--L")
    batch = sample_window_batch(spec.delta, L, spec.samples, stream(spec.seed, 0))
    st = stats_from_arrays(spec.delta, L, batch.N, batch.N_ren, batch.sigma)
    if spec.records:
        rng = stream(spec.seed, 1)
        law = GapLaw(spec.delta)
        with open(spec.records, "w", encoding="utf-8") as fh:
            for _ in range(spec.samples):
                fh.write(json.dumps(sample_window(spec.delta, L, rng, law).to_record(), sort_keys=True) + "\n")
    header = ("delta", "L", "n_samples", "mean_N", "var_N", "var_N_stderr", "mean_Nren",
              "var_Nren", "p_sigma_nonzero", "identity_failures")
    row = (spec.delta, L, st.n_samples, st.mean_N, st.var_N, st.var_N_stderr, st.mean_Nren,
           st.var_Nren, st.p_sigma_nonzero, batch.identity_failures)
    _emit(spec, header, [row])
    return EXIT_OK if batch.identity_failures == 0 else EXIT_RUNTIME


def _ensemble(spec: RunSpec) -> FrozenEnsemble:
    return simulate_ensemble(spec.ring_size, spec.rho, spec.rule, spec.replicas, spec.seed,
                             spec.max_events, workers=_workers())


def cmd_simulate(spec: RunSpec) -> int:
    ens = _ensemble(spec)
    if spec.out:
        ens.write(spec.out)
        _manifest(spec, freeze_times=ens.freeze_times)
    if spec.records:
        L = _need(spec.L, "--L (window length for --records)")
        with open(spec.records, "w", encoding="utf-8") as fh:
            for rec in ens.window_records(L):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    for rid, t, c in zip(ens.replica_ids, ens.freeze_times, ens.configs):
        print(f"replica {rid}: particles={int(c.sum())} freeze_time={t!r}")
    return EXIT_OK


def cmd_gaps(spec: RunSpec) -> int:
    ens = FrozenEnsemble.read(spec.ensemble) if spec.ensemble else _ensemble(spec)
    gaps = ens.gaps()
    delta = 0.5 - ens.rho
    law = GapLaw(delta)
    bins = 30
    hist = np.bincount(np.minimum(gaps, bins + 1), minlength=bins + 2)
    total = max(1, int(hist.sum()))
    rows = []
    for n in range(bins + 2):
        ref = law.pmf(n) if n <= bins else max(0.0, 1.0 - law.cdf(bins))
        label = str(n) if n <= bins else f">{bins}"
        rows.append((label, int(hist[n]), hist[n] / total, ref))
    extra = {"total_variation": gap_total_variation(gaps, law, bins), "n_gaps": int(gaps.size)}
    _emit(spec, ("X", "count", "empirical", "exact"), rows, extra)
    return EXIT_OK


def cmd_regimes(spec: RunSpec) -> int:
    Ls = _grid(spec)
    rows = regime_report(spec.delta, Ls, spec.route, samples=spec.samples, seed=spec.seed,
                         ring_size=spec.ring_size, replicas=spec.replicas, rule=spec.rule,
                         workers=_workers())
    _emit(spec, COLUMNS, [[r[c] for c in COLUMNS] for r in rows])
    return EXIT_OK


_DISPATCH = {
    "sample": cmd_sample,
    "simulate": cmd_simulate,
    "gaps": cmd_gaps,
    "exact-variance": cmd_exact_variance,
    "correlations": cmd_correlations,
    "rw-max": cmd_rw_max,
    "regimes": cmd_regimes,
}


def cli_dispatch(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        spec = _runspec(argv)
        return _DISPATCH[spec.subcommand](spec)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NotFrozenError as e:
        print(f"not frozen: {e}", file=sys.stderr)
        return EXIT_NOT_FROZEN
    except SystemExit:
        raise
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
