"""``influence analyze | verify | simulate``.

Exit codes: 0 success, 2 validation error, 3 numerical failure (singular
metric, non-convergence, failed verification).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import NumericalError, PertInfError, SingularMetric, ValidationError
from .io import ingest, read_config, write_csv, write_index_plot
from .pipeline import OBJECTIVES, SCHEMES, AnalysisConfig, analyze, verify
from .simulate import simulate_clustered, write_dataset

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

FLAG_NOTE = ("flag_top is a heuristic, not a test: 1 when |SI| exceeds mean(|SI|) + 2 SD(|SI|) "
             "over all basis directions")


def _label_columns(analysis):
    name = analysis.cfg.scheme
    labels = analysis.raw.labels
    if name == "lmm_mean_shift":
        pairs = analysis.raw.info["observation_labels"]
        return ["cluster_id", "obs_index"], [[cid, str(k)] for cid, k in pairs]
    if name == "explanatory_full":
        return ["cluster_id", "covariate"], [lab.rsplit(":", 1) for lab in labels]
    if name == "loglinear":
        return ["component"], [[lab] for lab in labels]
    return ["cluster_id"], [[lab] for lab in labels]


def top_flags(si):
    a = np.abs(np.asarray(si, dtype=float))
    if a.size < 2:
        return np.zeros(a.size, dtype=bool)
    return a > a.mean() + 2.0 * a.std(ddof=1)


def write_outputs(analysis, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    rep = analysis.report
    cols, labels = _label_columns(analysis)
    flags = top_flags(rep.basis_si)
    rows = [
        lab + [rep.basis_fi[i], rep.basis_si[i], rep.basis_ssi[i], rep.basis_c[i], rep.basis_b[i],
               rep.h_max[i], int(flags[i])]
        for i, lab in enumerate(labels)
    ]
    comment = f"scheme={analysis.scheme.name} objective={rep.objective}\n{FLAG_NOTE}"
    if rep.warning:
        comment += f"\nWARNING: {rep.warning}"
    write_csv(out / "report.csv", cols + ["FI", "SI", "SSI", "C", "B", "h_max", "flag_top"], rows, comment)

    write_csv(out / "geometry.csv", *_geometry_table(analysis))

    eig_rows = [[k + 1, rep.eigenvalues[k], rep.normalized_eigenvalues[k]] + list(rep.eigenvectors[:, k])
                for k in range(rep.p)]
    write_csv(out / "eigen.csv", ["rank", "eigenvalue", "normalized_eigenvalue"]
              + [f"u[{'/'.join(lab)}]" for lab in labels], eig_rows,
              f"fi_max={rep.fi_max!r} ssi_defined={int(rep.ssi_defined)}")
    write_index_plot(out / "index_plot.svg", rep.basis_si, rep.basis_fi,
                     f"{analysis.scheme.name}: {rep.objective}", flags)


def _verdict_row(stage, model, geom, verdict):
    return [stage, model.name, model.p, geom.source, verdict.is_appropriate, verdict.c_hat,
            verdict.min_eigenvalue, verdict.max_offdiag_abs_corr, verdict.max_iso_deviation,
            verdict.rank, verdict.singular]


def _geometry_table(analysis):
    header = ["stage", "scheme", "p", "source", "is_appropriate", "c_hat", "min_eigenvalue",
              "max_offdiag_abs_corr", "max_iso_deviation", "rank", "singular"]
    rows = [_verdict_row("raw", analysis.raw, analysis.raw_geom, analysis.raw_verdict)]
    if analysis.rescaled:
        rows.append(_verdict_row("rescaled", analysis.scheme, analysis.geom, analysis.verdict))
    return header, rows


def _config(args) -> AnalysisConfig:
    values = read_config(getattr(args, "config", None))
    overrides = {
        "scheme": getattr(args, "scheme", None),
        "objective": getattr(args, "objective", None),
        "alpha": getattr(args, "alpha", None),
        "seed": getattr(args, "seed", None),
        "out": getattr(args, "out", None),
    }
    if getattr(args, "no_rescale", False):
        overrides["auto_rescale"] = False
    values.update({k: v for k, v in overrides.items() if v is not None})
    return AnalysisConfig.from_mapping(values)


def cmd_analyze(args) -> int:
    cfg = _config(args)
    data = ingest(args.data)
    s = data.summary()
    print(f"data: n={s['n']} M={s['M']} m in [{s['min_m']}, {s['max_m']}] q1={s['q1']}")
    try:
        res = analyze(cfg, data)
    except SingularMetric as exc:
        partial = getattr(exc, "analysis", None)
        if partial is not None:
            out = Path(cfg.out)
            out.mkdir(parents=True, exist_ok=True)
            write_csv(out / "geometry.csv", *_geometry_table(partial))
            v = partial.raw_verdict
            print(f"step 3: scheme {partial.raw.name} is_appropriate=false singular=true rank={v.rank}/{partial.raw.p}")
        print(f"halted: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    v0 = res.raw_verdict
    print(f"step 3: scheme {res.raw.name} is_appropriate={str(v0.is_appropriate).lower()} c_hat={v0.c_hat:.6g}")
    if res.rescaled:
        print(f"        rescaled to {res.scheme.name}: is_appropriate={str(res.verdict.is_appropriate).lower()}")
    if res.report.warning:
        print(f"warning: {res.report.warning}")
    write_outputs(res, Path(cfg.out))
    top = int(np.argmax(np.abs(res.report.basis_si)))
    print(f"step 4: objective {res.report.objective}; largest |SI| at {res.raw.labels[top]} "
          f"(SI={res.report.basis_si[top]:.6g}); fi_max={res.report.fi_max:.6g}")
    print(f"wrote report.csv, geometry.csv, eigen.csv, index_plot.svg to {cfg.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    data = ingest(args.data)
    checks = verify(cfg, data)
    width = max(len(c.name) for c in checks)
    print(f"{'check':<{width}}  {'quantity':<20} {'tolerance':>10} {'observed':>12}  status  note")
    for c in checks:
        print(f"{c.name:<{width}}  {c.quantity:<20} {c.tolerance:>10.3g} {c.observed:>12.4g}  {c.status:<6}  {c.note}")
    failed = [c for c in checks if c.status == "FAIL"]
    for c in failed:
        print(f"FAILED: {c.name} ({c.quantity})", file=sys.stderr)
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_simulate(args) -> int:
    data = simulate_clustered(args.clusters, args.min_m, args.max_m, args.seed, args.outlier_cluster, args.inflate)
    write_dataset(data, args.out)
    s = data.summary()
    print(f"wrote {args.out}: n={s['n']} M={s['M']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="influence", description="Local influence on perturbation manifolds")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="fit, check the perturbation and report influence measures")
    a.add_argument("--data", required=True)
    a.add_argument("--config")
    a.add_argument("--scheme", choices=SCHEMES)
    a.add_argument("--objective", choices=OBJECTIVES)
    a.add_argument("--alpha", type=float)
    a.add_argument("--no-rescale", action="store_true")
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("verify", help="compare closed forms with the numerical oracle")
    v.add_argument("--data", required=True)
    v.add_argument("--config")
    v.add_argument("--scheme", choices=SCHEMES)
    v.add_argument("--objective", choices=OBJECTIVES)
    v.add_argument("--seed", type=int, required=True)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="write synthetic clustered data")
    s.add_argument("--clusters", type=int, required=True)
    s.add_argument("--min-m", type=int, default=3)
    s.add_argument("--max-m", type=int, default=12)
    s.add_argument("--outlier-cluster", type=int, default=0)
    s.add_argument("--inflate", type=float, default=1.0)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PertInfError as exc:  # pragma: no cover - every error derives from one of the two
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
