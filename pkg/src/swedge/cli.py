"""Command-line interface: power, sweep, compare, catalog, validate.

Exit codes: 0 success, 2 input or validation problem, 3 estimability
(rank-deficiency) problem.  Machine-readable output (CSV and JSON) is
deterministic for identical inputs and carries 12 significant digits;
human tables show 4.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .covariance import (
    CorrelationSpec,
    CovarianceModel,
    ParameterError,
    RawComponents,
)
from .designs import (
    DesignError,
    DesignGrid,
    TransitionPolicy,
    UnknownDesignError,
    catalog_design,
    catalog_ids,
    parse_design,
    serialize_design,
    validate_design,
)
from .power import ContrastSpec, EffectSpec, design_power, sweep
from .variance import RankDeficiencyError, active_effects

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RANK = 3


class CliError(Exception):
    """Input-level problem; rendered to stderr with exit code 2."""


def _machine(x: float) -> str:
    return format(float(x), ".12g")


def _human(x: float) -> str:
    return format(float(x), ".4g")


def _json_value(x: float) -> float:
    # Round-trips through the CSV representation so both formats carry
    # numerically identical values.
    return float(_machine(x))


def _emit(text: str, output: str | None) -> None:
    if output:
        with open(output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _render_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _render_csv(header: list[str], rows: list[list[str]]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    return "\n".join(lines) + "\n"


def _render_json(meta: dict, rows: list[dict]) -> str:
    return json.dumps({"meta": meta, "rows": rows}, sort_keys=True,
                      separators=(",", ":")) + "\n"


# ---------------------------------------------------------------------------
# Input assembly
# ---------------------------------------------------------------------------

def _load_design(spec: str, policy: TransitionPolicy) -> DesignGrid:
    looks_like_path = os.sep in spec or spec.endswith((".csv", ".json"))
    if not looks_like_path:
        try:
            grid = catalog_design(spec)
        except UnknownDesignError:
            grid = None
        if grid is not None:
            violations = validate_design(grid)
            if violations and policy is TransitionPolicy.STRICT:
                raise CliError(f"design {spec!r} violates the transition policy")
            return grid
        if not os.path.exists(spec):
            raise CliError(
                f"unknown design {spec!r}: not a catalog id "
                f"(known: {', '.join(catalog_ids())}) and no such file"
            )
    try:
        with open(spec, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read design file {spec!r}: {exc}") from None
    try:
        grid = parse_design(text)
    except DesignError as exc:
        raise CliError(f"invalid design file {spec!r}: {exc}") from None
    if not grid.label:
        grid = grid.relabel(os.path.splitext(os.path.basename(spec))[0])
    violations = validate_design(grid)
    if violations:
        listing = "\n".join(f"  {v}" for v in violations)
        if policy is TransitionPolicy.STRICT:
            raise CliError(f"design {spec!r} has disallowed transitions:\n{listing}")
        sys.stderr.write(f"warning: design {spec!r} has disallowed transitions:\n{listing}\n")
    return grid


def _correlation_from_args(args) -> CorrelationSpec:
    model = CovarianceModel.from_string(args.model)
    raw_given = [
        x for x in (args.sigma_alpha_sq, args.sigma_psi_sq, args.sigma_nu_sq, args.sigma_e_sq)
        if x is not None
    ]
    if args.rho_w is not None and raw_given:
        raise CliError("use either --rho-w (standardized) or raw variance components, not both")
    if raw_given:
        if args.sigma_alpha_sq is None or args.sigma_e_sq is None:
            raise CliError("raw parameterization needs --sigma-alpha-sq and --sigma-e-sq")
        raw = RawComponents(
            sigma_alpha_sq=args.sigma_alpha_sq,
            sigma_e_sq=args.sigma_e_sq,
            sigma_psi_sq=args.sigma_psi_sq or 0.0,
            sigma_nu_sq=args.sigma_nu_sq or 0.0,
        )
        return CorrelationSpec(model=model, n_per_period=args.n, raw=raw)
    if args.rho_w is None:
        raise CliError("give --rho-w (with --rho-a / --pi as the model needs) "
                       "or raw variance components")
    rho_a = args.rho_a
    if model is CovarianceModel.NESTED_EXCHANGEABLE and rho_a is None \
            and getattr(args, "cac", None) is not None:
        rho_a = args.cac * args.rho_w
    return CorrelationSpec(model=model, n_per_period=args.n,
                           rho_w=args.rho_w, rho_a=rho_a, pi=args.pi)


def _parse_contrast(text: str) -> ContrastSpec:
    label, _, rest = text.partition("=")
    if not rest:
        raise CliError(f"contrast {text!r} must look like label=w1,w2[,w3][@effect]")
    effect = None
    if "@" in rest:
        rest, _, eff_text = rest.partition("@")
        try:
            effect = float(eff_text)
        except ValueError:
            raise CliError(f"bad contrast effect size in {text!r}") from None
    try:
        weights = tuple(float(tok) for tok in rest.split(","))
    except ValueError:
        raise CliError(f"bad contrast weights in {text!r}") from None
    return ContrastSpec(label=label, weights=weights, effect=effect)


def _effects_from_args(args, grid: DesignGrid) -> EffectSpec:
    labels = list(active_effects(grid))
    if args.additive and "interaction" in labels:
        labels.remove("interaction")
    if not labels:
        raise RankDeficiencyError(
            "design has no treated cluster-periods; no effects are estimable"
        )
    deltas = list(args.delta or [])
    if not deltas and not args.contrast:
        raise CliError("give --delta (one value per estimable effect) and/or --contrast")
    if len(deltas) == 1 and len(labels) > 1:
        deltas = deltas * len(labels)
    if deltas and len(deltas) != len(labels):
        raise CliError(
            f"--delta got {len(deltas)} value(s) but the analysis has "
            f"{len(labels)} estimable effect(s): {', '.join(labels)}"
        )
    by_label = dict(zip(labels, deltas)) if deltas else {}
    contrasts = tuple(_parse_contrast(c) for c in (args.contrast or []))
    return EffectSpec(
        delta1=by_label.get("trt1"),
        delta2=by_label.get("trt2"),
        delta3=by_label.get("interaction"),
        alpha=args.alpha,
        contrasts=contrasts,
        additive=args.additive,
    )


def _sweep_template(args) -> CorrelationSpec:
    """Correlation spec whose rho_w is replaced point by point."""
    model = CovarianceModel.from_string(args.model)
    raw_given = any(
        x is not None
        for x in (args.sigma_alpha_sq, args.sigma_psi_sq, args.sigma_nu_sq, args.sigma_e_sq)
    )
    if raw_given:
        raise CliError("sweeps run on the standardized parameterization; drop the raw "
                       "variance components and give ICC flags instead")
    if model is CovarianceModel.COHORT:
        if args.pi is None:
            raise CliError("a cohort sweep needs --pi")
        return CorrelationSpec(model=model, n_per_period=args.n, rho_w=0.0, pi=args.pi)
    if model is CovarianceModel.NESTED_EXCHANGEABLE:
        if args.rho_a is None and args.cac is None:
            raise CliError("a nested exchangeable sweep needs --rho-a (held fixed) "
                           "or --cac (rho_a proportional to rho_w)")
        if args.rho_a is not None:
            return CorrelationSpec(model=model, n_per_period=args.n,
                                   rho_w=args.rho_a, rho_a=args.rho_a)
        return CorrelationSpec(model=model, n_per_period=args.n, rho_w=0.0, rho_a=0.0)
    return CorrelationSpec(model=model, n_per_period=args.n, rho_w=0.0)


def _sweep_points(args, model: CovarianceModel) -> list:
    if args.rho_values:
        try:
            values = [float(tok) for tok in args.rho_values.split(",") if tok.strip()]
        except ValueError:
            raise CliError(f"bad --rho-values list {args.rho_values!r}") from None
    else:
        if args.rho_step <= 0:
            raise CliError("--rho-step must be positive")
        count = int(round((args.rho_max - args.rho_min) / args.rho_step)) + 1
        if count < 1:
            raise CliError("empty sweep grid; check --rho-min/--rho-max/--rho-step")
        values = [round(args.rho_min + k * args.rho_step, 12) for k in range(count)]
    if model is CovarianceModel.NESTED_EXCHANGEABLE and args.cac is not None:
        if not 0.0 <= args.cac <= 1.0:
            raise CliError("--cac must lie in [0, 1]")
        return [(v, args.cac * v) for v in values]
    return values


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _meta(args, designs: list[str], correlation: CorrelationSpec,
          effects: EffectSpec) -> dict:
    meta = {
        "command": args.command,
        "designs": designs,
        "alpha": effects.alpha,
        "additive": effects.additive,
        "version": __version__,
    }
    meta.update({k: (_json_value(v) if isinstance(v, float) else v)
                 for k, v in correlation.describe().items()})
    deltas = effects.deltas()
    if deltas:
        meta["deltas"] = {k: _json_value(v) for k, v in deltas.items()}
    if effects.contrasts:
        meta["contrasts"] = [
            {"label": c.label, "weights": list(c.weights),
             **({"effect": _json_value(c.effect)} if c.effect is not None else {})}
            for c in effects.contrasts
        ]
    return meta


def cmd_power(args) -> int:
    policy = TransitionPolicy(args.policy)
    grid = _load_design(args.design, policy)
    correlation = _correlation_from_args(args)
    effects = _effects_from_args(args, grid)
    result = design_power(grid, correlation, effects)

    header = ["label", "effect", "se", "power"]
    if args.format == "json":
        rows = [
            {"label": r.label, "effect": _json_value(r.effect),
             "se": _json_value(r.se), "power": _json_value(r.power)}
            for r in result.rows
        ]
        text = _render_json(_meta(args, [args.design], correlation, effects), rows)
    else:
        fmt = _machine if args.format == "csv" else _human
        cells = [[r.label, fmt(r.effect), fmt(r.se), fmt(r.power)] for r in result.rows]
        render = _render_csv if args.format == "csv" else _render_table
        text = render(header, cells)
        if args.format == "table":
            params = " ".join(
                f"{k}={_human(v) if isinstance(v, float) else v}"
                for k, v in correlation.describe().items()
            )
            text = f"# {result.design_label or args.design}: {params} alpha={effects.alpha:g}\n{text}"
    _emit(text, args.output)
    return EXIT_OK


def _sweep_one(args, grid: DesignGrid, correlation: CorrelationSpec,
               effects: EffectSpec) -> list:
    points = _sweep_points(args, correlation.model)
    return sweep(grid, correlation, effects, points=points)


def _rho_columns(model: CovarianceModel) -> list[str]:
    cols = ["rho_w"]
    if model is CovarianceModel.NESTED_EXCHANGEABLE:
        cols.append("rho_a")
    if model is CovarianceModel.COHORT:
        cols.append("pi")
    return cols


def _row_params(row, model: CovarianceModel) -> list[float]:
    vals = [row.rho_w]
    if model is CovarianceModel.NESTED_EXCHANGEABLE:
        vals.append(row.rho_a)
    if model is CovarianceModel.COHORT:
        vals.append(row.pi)
    return vals


def cmd_sweep(args) -> int:
    policy = TransitionPolicy(args.policy)
    grid = _load_design(args.design, policy)
    correlation = _sweep_template(args)
    effects = _effects_from_args(args, grid)
    rows = _sweep_one(args, grid, correlation, effects)

    labels = None
    for row in rows:
        if row.result is not None:
            labels = list(row.result.labels())
            break
    if labels is None:
        raise CliError("every sweep point failed; first error: "
                       f"{rows[0].error if rows else 'empty grid'}")

    model = correlation.model
    header = _rho_columns(model) + [f"se_{l}" for l in labels] + [f"power_{l}" for l in labels]
    csv_rows, json_rows = [], []
    for row in rows:
        params = _row_params(row, model)
        if row.error is not None:
            sys.stderr.write(f"point {row.index} (rho_w={row.rho_w:g}): {row.error}\n")
            entry = dict(zip(_rho_columns(model), (_json_value(p) for p in params)))
            entry["error"] = row.error
            json_rows.append(entry)
            continue
        ses = [row.result.row(l).se for l in labels]
        powers = [row.result.row(l).power for l in labels]
        csv_rows.append([_machine(v) for v in params + ses + powers])
        entry = dict(zip(header, (_json_value(v) for v in params + ses + powers)))
        json_rows.append(entry)

    if args.format == "json":
        text = _render_json(_meta(args, [args.design], correlation, effects), json_rows)
    elif args.format == "csv":
        text = _render_csv(header, csv_rows)
    else:
        human = [[_human(float(v)) for v in row] for row in csv_rows]
        text = _render_table(header, human)
    _emit(text, args.output)
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.design) < 2:
        raise CliError("compare needs at least two --design values")
    policy = TransitionPolicy(args.policy)
    correlation = _sweep_template(args)

    names, effect_specs, sweeps, label_sets = [], [], [], []
    for spec in args.design:
        grid = _load_design(spec, policy)
        effects = _effects_from_args(args, grid)
        rows = _sweep_one(args, grid, correlation, effects)
        if os.sep in spec or spec.endswith((".csv", ".json")):
            name = os.path.splitext(os.path.basename(spec))[0]
        else:
            name = spec
        name = "".join(ch if (ch.isalnum() or ch in "-_") else "-" for ch in name)
        names.append(name)
        effect_specs.append(effects)
        sweeps.append(rows)
        per_design = None
        for row in rows:
            if row.result is not None:
                per_design = list(row.result.labels())
                break
        if per_design is None:
            raise CliError(f"design {spec!r}: every sweep point failed")
        label_sets.append(per_design)

    shared = [l for l in label_sets[0] if all(l in s for s in label_sets)]
    if not shared:
        raise CliError("designs share no estimable effect or contrast labels to compare")

    model = correlation.model
    header = list(_rho_columns(model))
    for name in names:
        header += [f"se_{l}_{name}" for l in shared] + [f"power_{l}_{name}" for l in shared]
    for name in names[1:]:
        header += [f"gain_{l}_{name}" for l in shared]

    csv_rows, json_rows = [], []
    for idx in range(len(sweeps[0])):
        rows_at = [s[idx] for s in sweeps]
        params = _row_params(rows_at[0], model)
        bad = next((r for r in rows_at if r.error is not None), None)
        if bad is not None:
            sys.stderr.write(f"point {bad.index} (rho_w={bad.rho_w:g}): {bad.error}\n")
            entry = dict(zip(_rho_columns(model), (_json_value(p) for p in params)))
            entry["error"] = bad.error
            json_rows.append(entry)
            continue
        values = list(params)
        for row in rows_at:
            values += [row.result.row(l).se for l in shared]
            values += [row.result.row(l).power for l in shared]
        base = rows_at[0].result
        for row in rows_at[1:]:
            values += [row.result.row(l).power - base.row(l).power for l in shared]
        csv_rows.append([_machine(v) for v in values])
        json_rows.append(dict(zip(header, (_json_value(v) for v in values))))

    meta = _meta(args, args.design, correlation, effect_specs[0])
    meta["design_names"] = names
    if args.format == "json":
        text = _render_json(meta, json_rows)
    elif args.format == "csv":
        text = _render_csv(header, csv_rows)
    else:
        human = [[_human(float(v)) for v in row] for row in csv_rows]
        text = _render_table(header, human)
    _emit(text, args.output)
    return EXIT_OK


def cmd_catalog(args) -> int:
    if not args.id:
        header = ["id", "clusters", "periods", "reconstructed"]
        rows = []
        for design_id in catalog_ids():
            grid = catalog_design(design_id)
            rows.append([design_id, str(grid.n_clusters), str(grid.n_periods),
                         "yes" if grid.reconstructed else "no"])
        _emit(_render_table(header, rows), args.output)
        return EXIT_OK
    try:
        grid = catalog_design(args.id)
    except UnknownDesignError:
        raise CliError(
            f"unknown catalog id {args.id!r} (known: {', '.join(catalog_ids())})"
        ) from None
    fmt = "json" if args.format == "json" else "csv"
    _emit(serialize_design(grid, fmt=fmt), args.output)
    return EXIT_OK


def cmd_validate(args) -> int:
    policy = TransitionPolicy(args.policy)
    spec = args.design
    if os.path.exists(spec) or os.sep in spec or spec.endswith((".csv", ".json")):
        try:
            with open(spec, "r", encoding="utf-8") as fh:
                grid = parse_design(fh.read())
        except OSError as exc:
            raise CliError(f"cannot read design file {spec!r}: {exc}") from None
        except DesignError as exc:
            raise CliError(f"invalid design file {spec!r}: {exc}") from None
    else:
        try:
            grid = catalog_design(spec)
        except UnknownDesignError:
            raise CliError(f"unknown design {spec!r}") from None
    violations = validate_design(grid)
    if not violations:
        print(f"{spec}: ok ({grid.n_clusters} clusters x {grid.n_periods} periods)")
        return EXIT_OK
    for v in violations:
        print(str(v))
    if policy is TransitionPolicy.PERMISSIVE:
        print(f"{spec}: {len(violations)} warning(s) under the permissive policy")
        return EXIT_OK
    return EXIT_INPUT


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_param_options(p: argparse.ArgumentParser, sweep_mode: bool = False) -> None:
    p.add_argument("--model", required=True, help="covariance model: cs, cohort, or nested")
    p.add_argument("--n", type=int, required=True, help="individuals per cluster-period")
    p.add_argument("--rho-w", type=float, default=None, help="within-period ICC")
    p.add_argument("--rho-a", type=float, default=None,
                   help="across-period ICC (nested exchangeable)")
    p.add_argument("--pi", type=float, default=None, help="individual autocorrelation (cohort)")
    p.add_argument("--cac", type=float, default=None,
                   help="cluster autocorrelation rho_a/rho_w (nested exchangeable)")
    p.add_argument("--sigma-alpha-sq", type=float, default=None, help="raw cluster variance")
    p.add_argument("--sigma-psi-sq", type=float, default=None,
                   help="raw individual variance (cohort)")
    p.add_argument("--sigma-nu-sq", type=float, default=None,
                   help="raw cluster-period variance (nested exchangeable)")
    p.add_argument("--sigma-e-sq", type=float, default=None, help="raw residual variance")
    p.add_argument("--delta", type=float, nargs="+", default=None,
                   help="effect size per estimable effect (single value broadcasts)")
    p.add_argument("--alpha", type=float, default=0.05, help="two-sided type I error rate")
    p.add_argument("--contrast", action="append", default=None,
                   metavar="LABEL=W1,W2[,W3][@EFFECT]",
                   help="contrast of effect estimates; repeatable")
    p.add_argument("--additive", action="store_true",
                   help="assume additive treatment effects (drop the interaction column)")
    p.add_argument("--policy", choices=["strict", "permissive"], default="strict",
                   help="transition policy applied to input designs")
    p.add_argument("--format", choices=["table", "csv", "json"], default="table")
    p.add_argument("--output", default=None, help="write output to this path instead of stdout")
    if sweep_mode:
        p.add_argument("--rho-min", type=float, default=0.001)
        p.add_argument("--rho-max", type=float, default=0.30)
        p.add_argument("--rho-step", type=float, default=0.001)
        p.add_argument("--rho-values", default=None,
                       help="comma-separated rho_w values (overrides min/max/step)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swedge",
        description="Power analysis for stepped wedge trials with two treatments.",
    )
    parser.add_argument("--version", action="version", version=f"swedge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_power = sub.add_parser("power", help="power for one design at one parameter point")
    p_power.add_argument("--design", required=True, help="catalog id or design file path")
    _add_param_options(p_power)
    p_power.set_defaults(func=cmd_power)

    p_sweep = sub.add_parser("sweep", help="power across a grid of ICC values")
    p_sweep.add_argument("--design", required=True, help="catalog id or design file path")
    _add_param_options(p_sweep, sweep_mode=True)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="side-by-side sweep of two or more designs")
    p_cmp.add_argument("--design", action="append", required=True,
                       help="catalog id or design file path; repeat for each design")
    _add_param_options(p_cmp, sweep_mode=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_cat = sub.add_parser("catalog", help="list catalog designs or dump one")
    p_cat.add_argument("id", nargs="?", default=None, help="catalog design id")
    p_cat.add_argument("--format", choices=["csv", "json"], default="csv")
    p_cat.add_argument("--json", dest="format", action="store_const", const="json")
    p_cat.add_argument("--output", default=None)
    p_cat.set_defaults(func=cmd_catalog)

    p_val = sub.add_parser("validate", help="check a design against the transition policy")
    p_val.add_argument("--design", required=True, help="catalog id or design file path")
    p_val.add_argument("--policy", choices=["strict", "permissive"], default="strict")
    p_val.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except (ParameterError, DesignError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except RankDeficiencyError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RANK


def entrypoint() -> None:  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
