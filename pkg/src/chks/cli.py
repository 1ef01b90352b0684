"""Command line drivers: run, twin, nconv and compare.

Exit status: 0 success, 1 a time step failed, 2 the configuration was rejected.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np
import scipy.fft
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from . import output
from .diagnostics import (
    COLUMNS, LHS_NAMES, RHS_NAMES, Subvolume, boundary_chemotaxis, flux_balance, twin_metrics,
)
from .errors import CHKSError, ConfigError, StepFailure
from .stepper import Mode, advance, initial_state, step

EXIT_OK, EXIT_STEP, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("chks")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed {text} is not an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("thread count must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="INI configuration file")
    common.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="replace one configuration value (repeatable)")
    common.add_argument("--out", default=".", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=_u64, default=None, help="seed for randomPerturbed presets")
    common.add_argument("--threads", type=_positive, default=1, help="BLAS/FFT threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="chks", description="Cahn-Hilliard-Keller-Segel tumor growth simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single trajectory with per-step diagnostics")
    tw = sub.add_parser("twin", parents=[common], help="two trajectories and continuous-dependence metrics")
    tw.add_argument("--config-b", metavar="PATH", default=None,
                    help="second configuration; without it twin.perturb is applied to the first")
    nc = sub.add_parser("nconv", parents=[common], help="regularized runs against the full-mode reference")
    nc.add_argument("--n-list", default=None, help="comma separated truncation levels (overrides nconv.nList)")
    sub.add_parser("compare", parents=[common], help="full versus old nutrient model from identical data")
    return p


@contextlib.contextmanager
def _threads(n):
    with threadpool_limits(limits=n), scipy.fft.set_workers(n):
        yield


def _load(path, overrides, seed):
    return cfgmod.load(path, overrides, seed)


def _start(rc):
    phi0, sigma0 = rc.initial_fields()
    return initial_state(rc.grid, phi0, sigma0, rc.spec, rc.params, rc.scheme.truncation)


def _failure_row(step_no, t, dt):
    row = [math.nan] * len(COLUMNS)
    row[COLUMNS.index("step")] = step_no
    row[COLUMNS.index("t")] = t
    row[COLUMNS.index("newton_iters")] = -1
    row[COLUMNS.index("dt_used")] = dt
    return row


# ----------------------------------------------------------------------


def cmd_run(rc, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    state = _start(rc)
    snaps = out / "snapshots"
    if rc.snapshot_formats and rc.snapshot_every > 0:
        output.write_snapshot(snaps, 0, state, rc.snapshot_formats)

    with output.CsvWriter(out / rc.csv, COLUMNS) as w:
        def record(k, new, rec):
            w.write(rec.row())
            if rc.snapshot_formats and rc.snapshot_every > 0 and k % rc.snapshot_every == 0:
                output.write_snapshot(snaps, k, new, rc.snapshot_formats)

        try:
            state, _ = advance(rc.grid, state, rc.scheme, rc.spec, rc.params, rc.n_steps,
                               subvolume=rc.subvolume, callback=record)
        except StepFailure as exc:
            w.write(_failure_row(exc.step, exc.t + rc.scheme.dt, rc.scheme.dt))
            _dump_final(out, exc.state)
            print(f"chks: {exc}", file=sys.stderr)
            return EXIT_STEP
    _dump_final(out, state)
    return EXIT_OK


def _dump_final(out, state):
    for name in ("phi", "mu", "sigma"):
        output.write_raw(out / f"final_{name}.raw", getattr(state, name))


def _perturbed(rc):
    """Second configuration of a twin pair built from twin.perturb = field:preset(...)."""
    if rc.twin_perturb is None:
        raise ConfigError("twin: give --config-b or set twin.perturb = phi:<preset> or sigma:<preset>")
    target, _, preset = rc.twin_perturb.partition(":")
    target = target.strip()
    if target not in ("phi", "sigma") or not preset.strip():
        raise ConfigError(f"twin.perturb = {rc.twin_perturb!r} must look like phi:<preset> or sigma:<preset>")
    delta = cfgmod.build_field(rc.grid, preset, rc.seed)
    phi0, sigma0 = rc.initial_fields()
    if target == "phi":
        phi0 = phi0 + delta
    else:
        sigma0 = sigma0 + delta
    errors = cfgmod.check_initial_data(rc.grid, phi0, sigma0, rc.spec.singular)
    if errors:
        raise ConfigError("\n".join(errors))
    return phi0, sigma0


def cmd_twin(rc_a, rc_b, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if rc_b is None:
        phi_b, sigma_b = _perturbed(rc_a)
        rc_b = rc_a
    else:
        if rc_b.grid != rc_a.grid:
            raise ConfigError(f"twin: grids differ ({rc_a.grid} vs {rc_b.grid})")
        if rc_b.scheme.dt != rc_a.scheme.dt or rc_b.n_steps != rc_a.n_steps:
            raise ConfigError("twin: time lines differ (dt and tEnd must match)")
        phi_b, sigma_b = rc_b.initial_fields()
    s_a = _start(rc_a)
    s_b = initial_state(rc_b.grid, phi_b, sigma_b, rc_b.spec, rc_b.params, rc_b.scheme.truncation)
    runs = []
    for rc, s0 in ((rc_a, s_a), (rc_b, s_b)):
        try:
            _, series = advance(rc.grid, s0, rc.scheme, rc.spec, rc.params, rc_a.n_steps, keep_states=True)
        except StepFailure as exc:
            print(f"chks: twin run failed: {exc}", file=sys.stderr)
            return EXIT_STEP
        runs.append(series.states)
    tm = twin_metrics(rc_a.grid, *runs)
    keys = list(tm.trace[0])
    output.write_csv(out / "twin.csv", ["t", *keys],
                     ([s.t, *(p[k] for k in keys)] for s, p in zip(runs[0], tm.trace)))
    summary = [(k, tm.lhs[k]) for k in LHS_NAMES] + [(k, tm.rhs[k]) for k in RHS_NAMES]
    summary += [("lhs_total", tm.lhs_total), ("rhs_total", tm.rhs_total), ("ratio", tm.ratio),
                ("sigma_dual_sup", math.sqrt(tm.lhs["sigma_fluct_dual_sq"]))]
    output.write_csv(out / "twin_summary.csv", ["metric", "value"], summary)
    return EXIT_OK


NCONV_COLUMNS = ("n", "phi_l2", "sigma_l2", "phi_excursion")


def nconv_table(rc, n_list):
    """Rows (n, |phi_n - phi_ref|, |sigma_n - sigma_ref|, max(|phi_n| - 1)_+) at tEnd."""
    if not n_list:
        return []
    full = dataclasses.replace(rc.scheme, mode=Mode.FULL, n=None)
    phi0, sigma0 = rc.initial_fields()
    ref, _ = advance(rc.grid, initial_state(rc.grid, phi0, sigma0, rc.spec, rc.params), full,
                     rc.spec, rc.params, rc.n_steps)
    rows = []
    for n in n_list:
        sc = dataclasses.replace(rc.scheme, mode=Mode.APPROX, n=int(n))
        s0 = initial_state(rc.grid, phi0, sigma0, rc.spec.with_n(int(n)), rc.params, sc.truncation)
        end, _ = advance(rc.grid, s0, sc, rc.spec, rc.params, rc.n_steps)
        rows.append((int(n), rc.grid.norm_l2(end.phi - ref.phi), rc.grid.norm_l2(end.sigma - ref.sigma),
                     float(np.max(np.maximum(np.abs(end.phi) - 1.0, 0.0)))))
    return rows


def cmd_nconv(rc, n_list, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = nconv_table(rc, n_list)
    except StepFailure as exc:
        print(f"chks: {exc}", file=sys.stderr)
        return EXIT_STEP
    output.write_csv(out / "nconv.csv", NCONV_COLUMNS, rows)
    return EXIT_OK


_FB = ("change", "diffusive_out", "chemotactic_out", "source", "imbalance", "chemo_weighted", "chemo_plain")
COMPARE_COLUMNS = ("step", "t", "sigma_min_full", "sigma_min_old",
                   *(f"{c}_full" for c in _FB), *(f"{c}_old" for c in _FB))


def _compare_cells(rc, prev, new, info, V):
    fb = flux_balance(rc.grid, prev.sigma, new.sigma, info.sigma, V)
    n_cells = rc.params.mob_n(new.phi, new.sigma)
    weighted, plain = boundary_chemotaxis(rc.grid, new.phi, new.sigma, n_cells, rc.params.chi, V)
    return [fb.change, fb.diffusive_outflow, fb.chemotactic_outflow, fb.source, fb.imbalance, weighted, plain]


def cmd_compare(rc, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    V = rc.subvolume.checked(rc.grid) if rc.subvolume is not None else Subvolume.left_half(rc.grid)
    schemes = {"full": dataclasses.replace(rc.scheme, mode=Mode.FULL, n=None),
               "old": dataclasses.replace(rc.scheme, mode=Mode.OLD, n=None)}
    phi0, sigma0 = rc.initial_fields()
    s0 = initial_state(rc.grid, phi0, sigma0, rc.spec, rc.params)
    states = {"full": s0, "old": s0}
    nan7 = [math.nan] * len(_FB)
    status = EXIT_OK
    with output.CsvWriter(out / "compare.csv", COMPARE_COLUMNS) as w:
        for k in range(1, rc.n_steps + 1):
            cells = {}
            for name, sc in schemes.items():
                prev = states[name]
                if prev is None:
                    cells[name] = (math.nan, nan7)
                    continue
                try:
                    new, info = step(rc.grid, prev, sc, rc.spec, rc.params)
                except CHKSError as exc:
                    print(f"chks: {name} model failed at step {k}: {exc}", file=sys.stderr)
                    states[name] = None
                    status = EXIT_STEP
                    cells[name] = (math.nan, nan7)
                    continue
                states[name] = new
                cells[name] = (float(np.min(new.sigma)), _compare_cells(rc, prev, new, info, V))
            w.write([k, k * rc.scheme.dt, cells["full"][0], cells["old"][0], *cells["full"][1], *cells["old"][1]])
            if states["full"] is None and states["old"] is None:
                break
    return status


# ----------------------------------------------------------------------


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    out = Path(args.out)
    try:
        rc = _load(args.config, args.override, args.seed)
        with _threads(args.threads):
            if args.command == "run":
                return cmd_run(rc, out)
            if args.command == "twin":
                rc_b = _load(args.config_b, args.override, args.seed) if args.config_b else None
                return cmd_twin(rc, rc_b, out)
            if args.command == "nconv":
                if args.n_list is not None:
                    try:
                        n_list = [int(v) for v in args.n_list.split(",") if v.strip()]
                    except ValueError:
                        raise ConfigError(f"--n-list {args.n_list!r} must be comma separated integers") from None
                else:
                    n_list = list(rc.n_list)
                return cmd_nconv(rc, n_list, out)
            return cmd_compare(rc, out)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
