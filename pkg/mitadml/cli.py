"""
Command-line entry point.

Subcommands: replicate, dml, simulate, montecarlo, summarize, gradcheck and
orthoprobe. Every run writes a manifest.json next to its outputs; passing that
file back with --from-manifest repeats the run.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Type, TypeVar

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from mitadml import __version__
from mitadml.core.data import load_dataset, summarize, validate, write_dataset
from mitadml.core.design import build_design
from mitadml.core.dml import (
    dml_grid,
    estimate_effect,
    grid_tsv,
    orthogonality_probe,
    probe_decay_slope,
    render_dml_table,
)
from mitadml.core.exceptions import (
    EXIT_OK,
    EXIT_USAGE,
    ConfigError,
    InputError,
    MitaDMLError,
    exit_status_for,
)
from mitadml.core.learners import grad_check
from mitadml.core.ols import render_table2, replicate_table2, table2_tsv
from mitadml.core.report import atomic_write_text, to_json, to_tsv
from mitadml.core.seeds import derive_seed
from mitadml.core.simulate import monte_carlo, simulate
from mitadml.models.config import DEFAULT_SEED, AnalysisOptions
from mitadml.models.dataset import ColumnSchema, Dataset
from mitadml.models.design import DesignSpec, Panel
from mitadml.models.estimate import DmlConfig, Estimand
from mitadml.models.learner import Activation, LearnerKind, LearnerSpec
from mitadml.models.manifest import MANIFEST_NAME, RunManifest, file_digest
from mitadml.models.simulation import (
    DgpConfig,
    EstimatorKind,
    EstimatorSpec,
    linear_dml_config,
    simulation_design,
)

logger = logging.getLogger("mitadml")

M = TypeVar("M", bound=BaseModel)

MODEL_ESTIMANDS = {
    "plr": Estimand.PLR,
    "irm-ate": Estimand.IRM_ATE,
    "irm-atte": Estimand.IRM_ATTE,
}
GRID_TABLES = {Estimand.PLR: "table3", Estimand.IRM_ATE: "table4", Estimand.IRM_ATTE: "table4_atte"}
PROBE_ESTIMANDS = {
    "plr": Estimand.PLR,
    "irm-ate": Estimand.IRM_ATE,
    "irm-atte": Estimand.IRM_ATTE,
    "plugin": Estimand.PLUG_IN,
}
GRADCHECK_GRID = [[], [4], [3, 3], [32]]
VERBOSITY = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}


class ArgumentParser(argparse.ArgumentParser):
    """Parser whose usage errors exit with status 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class RunContext:
    """Output directory, seed and manifest bookkeeping of one command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.seed = int(args.seed)
        self.manifest = RunManifest(
            command=args.command,
            version=__version__,
            seed=self.seed,
            arguments=_arguments(args),
        )

    def record_input(self, path: str) -> None:
        self.manifest.inputs[str(path)] = file_digest(path)

    def record_config(self, name: str, model: Any) -> None:
        if isinstance(model, BaseModel):
            model = model.model_dump(mode="json", by_alias=True)
        self.manifest.config[name] = model

    def write(self, name: str, text: str) -> Path:
        return atomic_write_text(self.out / name, text)

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        payload = dict(payload)
        payload["manifest"] = self.manifest.reproducible()
        return self.write(name, to_json(payload))

    def close(self) -> None:
        self.write(MANIFEST_NAME, to_json(self.manifest.finish().model_dump(mode="json")))


def _arguments(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"func", "from_manifest", "verbose", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _load_model(path: Optional[str], model: Type[M], **defaults: Any) -> M:
    """Validate a JSON config file into a model; missing file means defaults."""
    if path is None:
        return model(**defaults)
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e.strerror}", {"path": path})
    except ValueError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}", {"path": path})
    try:
        return model.model_validate({**defaults, **raw})
    except PydanticValidationError as e:
        raise ConfigError(f"Invalid config in {path}: {e.errors()[0]['msg']}", {"path": path})


def _load_data(ctx: RunContext, path: str, schema_path: Optional[str]) -> Dataset:
    if not Path(path).is_file():
        raise InputError(f"Data file not found: {path}", {"path": path})
    schema = ColumnSchema.from_sidecar(schema_path) if schema_path else ColumnSchema()
    ds = load_dataset(path, schema)
    ctx.record_input(path)
    violations = validate(ds)
    if violations:
        for v in violations:
            print(f"row {v.row}, column {v.column}: {v.rule} (value {v.value})", file=sys.stderr)
        raise InputError(f"{len(violations)} schema violations in {path}", {"path": path})
    return ds


def _learner_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    updates: Dict[str, Any] = {}
    if args.hidden is not None:
        updates["hidden_layers"] = [int(u) for u in args.hidden.split(",") if u.strip()]
    for flag, field in (
        ("activation", "activation"),
        ("learning_rate", "learning_rate"),
        ("batch_size", "batch_size"),
        ("max_epochs", "max_epochs"),
        ("patience", "early_stop_patience"),
    ):
        value = getattr(args, flag)
        if value is not None:
            updates[field] = value
    return updates


def _dml_config(args: argparse.Namespace, label: str) -> DmlConfig:
    cfg = _load_model(args.config, DmlConfig)
    learner_updates = _learner_overrides(args)
    updates: Dict[str, Any] = {"seed": derive_seed(args.seed, label)}
    if learner_updates:
        try:
            updates["outcome_learner"] = LearnerSpec.model_validate(
                {**cfg.outcome_learner.model_dump(), **learner_updates}
            )
            updates["treatment_learner"] = LearnerSpec.model_validate(
                {**cfg.treatment_learner.model_dump(), **learner_updates}
            )
        except PydanticValidationError as e:
            raise ConfigError(f"Invalid learner override: {e.errors()[0]['msg']}")
    for flag, field in (
        ("k_folds", "k_folds"),
        ("repeats", "n_repeats"),
        ("clip", "propensity_clip"),
    ):
        value = getattr(args, flag)
        if value is not None:
            updates[field] = value
    if args.cluster_variance:
        updates["cluster_variance"] = True
    try:
        return DmlConfig.model_validate({**cfg.model_dump(), **updates})
    except PydanticValidationError as e:
        raise ConfigError(f"Invalid DML settings: {e.errors()[0]['msg']}")


def _design_spec(args: argparse.Namespace) -> DesignSpec:
    try:
        return DesignSpec(panel=Panel.from_letter(args.panel), band_km=args.band)
    except PydanticValidationError as e:
        raise ConfigError(f"Invalid design: {e.errors()[0]['msg']}")
    except ValueError as e:
        raise ConfigError(f"Invalid design: {e}")


def _parse_deltas(text: str) -> List[float]:
    try:
        deltas = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"Invalid --deltas: {text!r} is not a comma-separated list of numbers")
    bad = [d for d in deltas if not 0 < d <= 0.5]
    if bad:
        raise ConfigError(f"Invalid --deltas: {bad[0]} is outside (0, 0.5]")
    if len(deltas) < 2:
        raise ConfigError("Invalid --deltas: a decay slope needs at least two values")
    return deltas


def _parse_estimands(text: str) -> List[Estimand]:
    try:
        return [PROBE_ESTIMANDS[name.strip()] for name in text.split(",")]
    except KeyError as e:
        choices = ", ".join(PROBE_ESTIMANDS)
        raise ConfigError(f"Unknown estimand {e.args[0]!r}, expected one of {choices}")


def cmd_replicate(args: argparse.Namespace, ctx: RunContext) -> int:
    ds = _load_data(ctx, args.data, args.schema)
    options = AnalysisOptions(threads=args.threads)
    ctx.record_config("options", options)
    result = replicate_table2(ds, options)
    ctx.write("table2.txt", render_table2(result))
    ctx.write("table2.tsv", table2_tsv(result, options.significant_digits))
    return EXIT_OK


def cmd_dml(args: argparse.Namespace, ctx: RunContext) -> int:
    ds = _load_data(ctx, args.data, args.schema)
    estimand = MODEL_ESTIMANDS[args.model]
    cfg = _dml_config(args, f"dml/{args.model}")
    ctx.record_config("dml", cfg)

    if args.grid:
        cells = dml_grid(ds, cfg, estimand, threads=args.threads)
        table = GRID_TABLES[estimand]
        ctx.write(f"{table}.tsv", grid_tsv(cells))
        ctx.write(f"{table}.txt", render_dml_table(cells, estimand))
        return EXIT_OK

    spec = _design_spec(args)
    ctx.record_config("design", spec)
    estimate = estimate_effect(build_design(ds, spec), cfg, estimand, threads=args.threads)
    ctx.write_json("estimate.json", {"estimate": estimate.to_dict(include_psi=args.include_psi)})
    print(f"{estimand.value}: {estimate.theta:.4f}{estimate.stars} ({estimate.se:.3f})")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, ctx: RunContext) -> int:
    cfg = _load_model(args.config, DgpConfig, seed=derive_seed(args.seed, "simulate"))
    if args.n is not None:
        try:
            cfg = DgpConfig.model_validate({**cfg.model_dump(), "n": args.n})
        except PydanticValidationError as e:
            raise ConfigError(f"Invalid --n: {e.errors()[0]['msg']}")
    ctx.record_config("dgp", cfg)
    ds, truth = simulate(cfg)
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, ctx.out / "synthetic.csv")
    ctx.write_json("truth.json", {"truth": truth.model_dump(mode="json")})
    return EXIT_OK


def cmd_montecarlo(args: argparse.Namespace, ctx: RunContext) -> int:
    cfg = _load_model(args.config, DgpConfig, seed=derive_seed(args.seed, "montecarlo"))
    kind = EstimatorKind(args.estimator.replace("-", "_"))
    estimator = _load_model(
        args.estimator_config,
        EstimatorSpec,
        kind=kind,
        design=simulation_design(),
        dml=linear_dml_config(),
    )
    estimator = estimator.model_copy(update={"kind": kind})
    ctx.record_config("dgp", cfg)
    ctx.record_config("estimator", estimator)
    report = monte_carlo(cfg, estimator, reps=args.reps, threads=args.threads)
    ctx.write_json("mc_report.json", {"report": report.summary(), "estimates": report.rows()})
    ctx.write("mc_report.tsv", to_tsv(report.rows(), ["rep", "theta", "se", "covered"]))
    print(
        f"{kind.value}: bias {report.mean_bias:.4f}, rmse {report.rmse:.4f}, "
        f"coverage {report.coverage95:.3f} over {len(report.estimates)} reps"
    )
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace, ctx: RunContext) -> int:
    ds = _load_data(ctx, args.data, args.schema)
    frame = summarize(ds).to_frame()
    text = frame.T.to_string(float_format=lambda v: f"{v:.6g}") + "\n"
    print(text, end="")
    rows = [{"variable": name, **row} for name, row in frame.T.to_dict(orient="index").items()]
    ctx.write("summary.tsv", to_tsv(rows, ["variable"] + list(frame.index)))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, ctx: RunContext) -> int:
    rng = np.random.default_rng(derive_seed(args.seed, "gradcheck"))
    x = rng.normal(size=(args.rows, args.features))
    y_reg = x @ rng.normal(size=args.features) + rng.normal(scale=0.1, size=args.rows)
    y_cls = (y_reg > np.median(y_reg)).astype(np.float64)

    rows: List[Dict[str, Any]] = []
    for kind, target in ((LearnerKind.MLP_REGRESSOR, y_reg), (LearnerKind.MLP_CLASSIFIER, y_cls)):
        for activation in Activation:
            for hidden in GRADCHECK_GRID:
                spec = LearnerSpec(
                    kind=kind,
                    hidden_layers=hidden,
                    activation=activation,
                    seed=derive_seed(
                        args.seed, "gradcheck", kind.value, activation.value, len(hidden)
                    ),
                )
                error = grad_check(spec, x, target)
                limit = 1e-8 if not hidden else 1e-4
                rows.append(
                    {
                        "kind": kind.value,
                        "activation": activation.value,
                        "hidden": "-".join(map(str, hidden)) or "none",
                        "max_rel_error": error,
                        "ok": int(error < limit),
                    }
                )
    columns = ["kind", "activation", "hidden", "max_rel_error", "ok"]
    text = to_tsv(rows, columns)
    print(text, end="")
    ctx.write("gradcheck.tsv", text)
    return EXIT_OK


def cmd_orthoprobe(args: argparse.Namespace, ctx: RunContext) -> int:
    deltas = _parse_deltas(args.deltas)
    estimands = _parse_estimands(args.estimands)
    if args.data:
        ds = _load_data(ctx, args.data, args.schema)
        spec = _design_spec(args)
        cfg = _dml_config(args, "orthoprobe")
    else:
        dgp = _load_model(
            args.dgp_config, DgpConfig, n=5000, seed=derive_seed(args.seed, "probe-data")
        )
        ctx.record_config("dgp", dgp)
        ds, _ = simulate(dgp)
        spec = simulation_design()
        base = linear_dml_config() if args.config is None else None
        cfg = _dml_config(args, "orthoprobe")
        if base is not None:
            cfg = cfg.model_copy(
                update={
                    "outcome_learner": base.outcome_learner,
                    "treatment_learner": base.treatment_learner,
                }
            )
    ctx.record_config("design", spec)
    ctx.record_config("dml", cfg)
    dm = build_design(ds, spec)

    rows: List[Dict[str, Any]] = []
    slopes: Dict[str, Dict[str, float]] = {}
    for estimand in estimands:
        report = orthogonality_probe(dm, cfg, estimand, deltas, threads=args.threads)
        slopes[estimand.value] = {
            direction: probe_decay_slope(report, direction) for direction in report.directions()
        }
        for entry in report.entries:
            rows.append({"estimand": estimand.value, **entry.model_dump()})
        print(
            f"{estimand.value}: "
            + ", ".join(f"{d} slope {s:.3f}" for d, s in slopes[estimand.value].items())
        )
    columns = ["estimand", "direction", "delta", "sensitivity", "sample_sensitivity"]
    ctx.write("probe.tsv", to_tsv(rows, columns))
    ctx.write_json("probe.json", {"slopes": slopes, "entries": rows})
    return EXIT_OK


def _env_default(name: str, fallback: Any, cast: Callable[[str], Any] = str) -> Any:
    value = os.environ.get(name)
    if value in (None, ""):
        return fallback
    try:
        return cast(value)
    except ValueError:
        return fallback


def _add_data_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    if required:
        parser.add_argument("data", help="Comma-delimited household file")
    else:
        parser.add_argument("--data", help="Comma-delimited household file (default: simulate)")
    parser.add_argument("--schema", help="JSON sidecar remapping header names to roles")


def _add_dml_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="DmlConfig JSON file")
    parser.add_argument(
        "--panel",
        type=str.upper,
        choices=["A", "B", "C"],
        default="B",
        help="Panel letter A, B or C (default: B)",
    )
    parser.add_argument("--band", type=float, default=100.0, help="Band width (default: 100)")
    parser.add_argument("--k-folds", type=int, help="Cross-fitting folds")
    parser.add_argument("--repeats", type=int, help="Repeated fold draws")
    parser.add_argument("--clip", type=float, help="Propensity clipping bound")
    parser.add_argument(
        "--cluster-variance", action="store_true", help="Cluster scores by district"
    )
    parser.add_argument("--hidden", help="Comma-separated hidden layer sizes, e.g. 32,16")
    parser.add_argument("--activation", choices=[a.value for a in Activation])
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--max-epochs", type=int)
    parser.add_argument("--patience", type=int)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="mitadml",
        description="Regression discontinuity replication and double machine learning "
        "estimates of the mita effect on household consumption.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--seed",
        type=int,
        default=_env_default("MITADML_SEED", DEFAULT_SEED, int),
        help="Top-level seed (env MITADML_SEED)",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=_env_default("MITADML_THREADS", 1, int),
        help="Worker threads (env MITADML_THREADS)",
    )
    parser.add_argument(
        "--out",
        default=_env_default("MITADML_OUT", "out"),
        help="Output directory (env MITADML_OUT)",
    )
    parser.add_argument(
        "--verbose", type=int, choices=[0, 1, 2], default=0, help="Log level: 0, 1 or 2"
    )
    parser.add_argument("--from-manifest", help="Repeat the run recorded in a manifest.json")

    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    p = sub.add_parser("replicate", help="OLS replication grid with clustered standard errors")
    _add_data_args(p)
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("dml", help="Cross-fitted DML estimate for one design or the grid")
    _add_data_args(p)
    p.add_argument("--model", choices=sorted(MODEL_ESTIMANDS), default="plr")
    p.add_argument("--grid", action="store_true", help="Run all nine panel-by-band designs")
    p.add_argument("--include-psi", action="store_true", help="Write the score vector")
    _add_dml_args(p)
    p.set_defaults(func=cmd_dml)

    p = sub.add_parser("simulate", help="Draw a synthetic dataset with known effects")
    p.add_argument("--config", help="DgpConfig JSON file")
    p.add_argument("--n", type=int, help="Override the number of households")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="Bias and coverage of an estimator")
    p.add_argument("--config", help="DgpConfig JSON file")
    p.add_argument(
        "--estimator",
        choices=[k.value.replace("_", "-") for k in EstimatorKind],
        default="plr",
    )
    p.add_argument("--estimator-config", help="EstimatorSpec JSON file")
    p.add_argument("--reps", type=int, default=200)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("summarize", help="Descriptive statistics of a household file")
    _add_data_args(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("gradcheck", help="Finite-difference check of network gradients")
    p.add_argument("--rows", type=int, default=20)
    p.add_argument("--features", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("orthoprobe", help="Score sensitivity to nuisance perturbations")
    _add_data_args(p, required=False)
    p.add_argument("--dgp-config", help="DgpConfig JSON file for the simulated default")
    p.add_argument("--estimands", default="plr,irm-ate,plugin")
    p.add_argument("--deltas", default="0.1,0.05,0.025")
    _add_dml_args(p)
    p.set_defaults(func=cmd_orthoprobe)
    return parser


def _configure_logging(verbose: int) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(VERBOSITY.get(verbose, logging.DEBUG))


def _replay(parser: ArgumentParser, args: argparse.Namespace) -> argparse.Namespace:
    path = Path(args.from_manifest)
    try:
        manifest = RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"Cannot read manifest {path}: {e.strerror}", {"path": str(path)})
    except PydanticValidationError as e:
        raise ConfigError(f"Invalid manifest {path}: {e.errors()[0]['msg']}", {"path": str(path)})

    # Defaults of the recorded command, overlaid with the recorded arguments.
    replayed = parser.parse_args([manifest.command] + _required_positionals(manifest))
    for key, value in manifest.arguments.items():
        setattr(replayed, key, value)
    replayed.out = args.out
    replayed.verbose = args.verbose
    replayed.from_manifest = args.from_manifest
    return replayed


def _required_positionals(manifest: RunManifest) -> List[str]:
    data = manifest.arguments.get("data")
    if manifest.command in ("replicate", "dml", "summarize") and data:
        return [str(data)]
    return []


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return the exit status."""
    load_dotenv()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    try:
        if args.from_manifest:
            args = _replay(parser, args)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        ctx = RunContext(args)
        status = args.func(args, ctx)
        ctx.close()
        return status
    except MitaDMLError as e:
        print(f"error: {e.name}: {e}", file=sys.stderr)
        return exit_status_for(e)


if __name__ == "__main__":
    sys.exit(main())
