"""boot2lab command line.

    boot2lab <subcommand> [--theta F] [--sigma-x F] [--sigma-eps F] [--n U]
             [--m U] [--k U] [--r U] [--b U] [--m-values LIST]
             [--mode multinomial|poisson] [--merge arithmetic|geometric]
             [--bias-correct] [--seed U64] [--preset paper-full|desk-reduced]
             [--format json|csv] [--out PATH]
    boot2lab rerun REPORT [--out PATH]

Exit codes: 0 success, 2 argument error, 3 study error, 4 I/O error.
BOOT2LAB_WORKERS sets the worker count; output does not depend on it.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from boot2lab import analytics, harness
from boot2lab.report import (
    FORMATS,
    SUBCOMMANDS,
    RunManifest,
    dumps_csv,
    dumps_json,
    flatten,
    read_manifest,
)
from boot2lab.sampling import MODES
from boot2lab.toy_model import MERGE_MODES, PRESETS, ConfigError

EXIT_OK, EXIT_USAGE, EXIT_STUDY, EXIT_IO = 0, 2, 3, 4

# Study sizes used when --r / --b / --m-values / --datasets are not given.
STUDY_DEFAULTS = {
    "replicate": {"r": 2000, "b": 0},
    "conditional": {"r": 2000, "datasets": 20},
    "dependence": {"r": 5000},
    "scaling": {"r": 200, "m_values": (25, 100, 400, 1600)},
    "fixes": {"r": 500, "b": 200},
}

_CONFIG_FLAGS = {
    "theta": "theta",
    "sigma_x": "sigma_x",
    "sigma_eps": "sigma_eps",
    "n": "n",
    "m": "m",
    "k": "k",
    "mode": "resample_mode",
    "merge": "merge_mode",
}


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("must be a 64-bit unsigned integer")
    return value


def _m_values(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boot2lab", description="Double-bootstrap uncertainty studies on a Gaussian toy model."
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=sorted(PRESETS), help="base configuration (default paper-full)")
    common.add_argument("--theta", type=float, help="true mean")
    common.add_argument("--sigma-x", type=float, help="datapoint sd")
    common.add_argument("--sigma-eps", type=float, help="per-member noise sd")
    common.add_argument("--n", type=int, help="dataset size N")
    common.add_argument("--m", type=int, help="ensemble size M")
    common.add_argument("--k", type=int, help="double-bootstrap trials K")
    common.add_argument("--r", type=int, help="replications (inner runs for conditional)")
    common.add_argument("--b", type=int, help="pseudo-experiments for the corrected procedures")
    common.add_argument("--m-values", type=_m_values, help="comma-separated ensemble sizes for scaling")
    common.add_argument("--datasets", type=int, help="outer datasets for conditional")
    common.add_argument("--mode", choices=MODES, help="first-level resampling mode")
    common.add_argument("--merge", choices=MERGE_MODES, help="ensemble merge")
    common.add_argument("--bias-correct", action="store_true", help="scale delta_boot_boot^2 by M/(M-1)")
    common.add_argument("--seed", type=_u64, default=0, help="master seed")
    common.add_argument("--format", choices=FORMATS, default="json", dest="output_format")
    common.add_argument("--out", help="output path (default stdout)")

    helps = {
        "analytic": "closed-form moments",
        "single": "one full pipeline run",
        "replicate": "independent end-to-end replications",
        "conditional": "spread of the merged estimate with the dataset held fixed",
        "dependence": "covariance between two members of one ensemble",
        "scaling": "double-bootstrap delta versus ensemble size",
        "fixes": "flawed versus corrected procedures",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    rerun = sub.add_parser("rerun", help="re-execute the manifest embedded in a report")
    rerun.add_argument("report", help="JSON or CSV report written by boot2lab")
    rerun.add_argument("--out", help="output path (default stdout, never the original file)")
    return parser


def manifest_from_namespace(ns: argparse.Namespace) -> RunManifest:
    """Raises ConfigError or ValueError naming the offending parameter."""
    base = PRESETS[ns.preset or "paper-full"]
    changes = {
        field: getattr(ns, flag) for flag, field in _CONFIG_FLAGS.items() if getattr(ns, flag) is not None
    }
    config = base.replace(**changes)
    defaults = STUDY_DEFAULTS.get(ns.subcommand, {})

    def pick(name):
        value = getattr(ns, name)
        return defaults.get(name) if value is None else value

    r, b, m_values, datasets = pick("r"), pick("b"), pick("m_values"), pick("datasets")
    if ns.subcommand in ("replicate", "dependence") and r < 2:
        raise ConfigError("r must be ≥ 2")
    if ns.subcommand == "conditional":
        if r < 2:
            raise ConfigError("r must be ≥ 2")
        if datasets < 2:
            raise ConfigError("datasets must be ≥ 2")
    if ns.subcommand == "scaling":
        if r < 1:
            raise ConfigError("r must be ≥ 1")
        if min(m_values) < 2:
            raise ConfigError("m-values must all be ≥ 2")
    if ns.subcommand == "replicate" and (b < 0 or b == 1):
        raise ConfigError("b must be 0 or ≥ 2")
    if ns.subcommand == "fixes":
        if b < 2:
            raise ConfigError("b must be ≥ 2")
        if r < 2:
            raise ConfigError("r must be ≥ 2")
    return RunManifest(
        subcommand=ns.subcommand,
        config=config,
        seed=ns.seed,
        output_format=ns.output_format,
        output_path=ns.out,
        r=r if ns.subcommand in STUDY_DEFAULTS else None,
        b=b if ns.subcommand in ("replicate", "fixes") else None,
        m_values=m_values if ns.subcommand == "scaling" else None,
        datasets=datasets if ns.subcommand == "conditional" else None,
        bias_correct=ns.bias_correct,
        preset=ns.preset,
    )


def parse_args(argv=None) -> RunManifest:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.subcommand == "rerun":
        parser.error("rerun does not produce a new manifest")
    try:
        return manifest_from_namespace(ns)
    except (ConfigError, ValueError) as exc:
        parser.error(str(exc))


def run_study(manifest: RunManifest) -> tuple[dict, list[dict]]:
    """Result record (JSON body) and flattened rows (CSV body) for a manifest."""
    cfg, seed = manifest.config, manifest.seed
    kind = manifest.subcommand
    if kind == "analytic":
        moments = analytics.compute_moments(cfg)
        plain, nested = analytics.expected_fix_variances(cfg)
        result = moments.to_dict()
        result["mcstat_fraction_missed"] = (
            analytics.mcstat_fraction_missed(moments) if moments.var_boot_avg > 0 else None
        )
        result["expected_fix_delta2"] = {
            "plain": plain,
            "nested": nested,
            "derivation": "derived for this package from the same variance identities; Monte Carlo checked",
        }
        return result, [flatten(result)]
    if kind == "single":
        result = harness.run_single(cfg, seed, bias_correct=manifest.bias_correct).to_dict()
        return result, [flatten(result)]
    if kind == "replicate":
        result = harness.run_replicated(
            cfg, manifest.r, seed, b=manifest.b, bias_correct=manifest.bias_correct
        ).to_dict()
        return result, [flatten(result)]
    if kind == "conditional":
        result = harness.run_conditional_study(cfg, manifest.datasets, manifest.r, seed).to_dict()
        return result, [flatten(result)]
    if kind == "dependence":
        result = harness.run_dependence_study(cfg, manifest.r, seed).to_dict()
        return result, [flatten(result)]
    if kind == "scaling":
        res = harness.run_scaling_study(cfg, manifest.m_values, manifest.r, seed)
        return res.to_dict(), res.rows()
    if kind == "fixes":
        res = harness.run_fixes_study(cfg, manifest.b, manifest.r, seed, bias_correct=manifest.bias_correct)
        return res.to_dict(), [dict(vars(row)) for row in res.rows]
    raise ValueError(f"unknown subcommand {kind!r}")


def render(manifest: RunManifest) -> str:
    result, rows = run_study(manifest)
    if manifest.output_format == "csv":
        return dumps_csv(rows, manifest)
    return dumps_json({"manifest": manifest.to_dict(), "result": result})


def _emit(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text, encoding="utf-8")


def execute(manifest: RunManifest, out: str | None = None) -> int:
    """Run the manifest's study and write its report; returns the exit status."""
    try:
        text = render(manifest)
    except (ArithmeticError, ValueError) as exc:
        print(f"boot2lab: {manifest.subcommand} failed: {exc}", file=sys.stderr)
        return EXIT_STUDY
    try:
        _emit(text, out if out is not None else manifest.output_path)
    except OSError as exc:
        print(f"boot2lab: cannot write report: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.subcommand == "rerun":
        try:
            manifest = read_manifest(Path(ns.report).read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"boot2lab: cannot read report: {exc}", file=sys.stderr)
            return EXIT_IO
        except (ValueError, KeyError, TypeError) as exc:
            print(f"boot2lab: not a boot2lab report: {exc}", file=sys.stderr)
            return EXIT_USAGE
        return execute(manifest, out=ns.out or "-")
    try:
        manifest = manifest_from_namespace(ns)
    except (ConfigError, ValueError) as exc:
        parser.error(str(exc))
    return execute(manifest)


if __name__ == "__main__":
    sys.exit(main())
