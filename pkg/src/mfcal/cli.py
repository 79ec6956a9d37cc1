"""Command-line front end.

Subcommands: fit, predict, loo, toy-gen, sim-study, lhs.  All file
interfaces are CSV plus a JSON run configuration validated against the
schema published as CONFIG_SCHEMA; every command is deterministic given
its seed arguments and exits non-zero when anything fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .data import load_dataset, scale_inputs, unscale_inputs
from .errors import CalibrationError, ConfigError
from .inference import PriorConfig, fit
from .params import ParameterLayout
from .predict import loo, posterior_predictive
from .toy import StudyConfig, _raw_toy_tables, replicate_raw_tables, run_sim_study
from . import design as design_mod
from . import inference

# Published schema: section -> key -> (type, default).  REQUIRED means the
# key must be present; sections themselves are optional unless a command
# needs them.  Unknown sections or keys are rejected.
REQUIRED = object()

CONFIG_SCHEMA = {
    "data": {
        "field_csv": (str, REQUIRED),
        "low_csv": (str, REQUIRED),
        "high_csv": (str, None),
        "x_columns": (list, REQUIRED),
        "t_shared_columns": (list, []),
        "t_low_columns": (list, []),
        "t_high_columns": (list, []),
        "y_column": (str, "y"),
        "bounds": (dict, {}),
        "p": (int, None),
        "m_shared": (int, None),
        "m_low": (int, None),
        "m_high": (int, None),
    },
    "priors": {
        "a_emulator": (float, 5.0),
        "b_emulator": (float, 5.0),
        "a_other": (float, 1.0),
        "b_other": (float, 0.001),
        "beta_a": (float, 1.0),
        "beta_b": (float, 0.001),
        "a_noise": (float, None),
        "b_noise": (float, None),
        "noise_cap": (float, 1e6),
    },
    "mcmc": {
        "steps": (int, 10000),
        "burn_in": (int, 2000),
        "seed": (int, 0),
        "pilot_steps": (int, 200),
        "tuning_rounds": (int, 5),
        "sample_mean": (bool, False),
    },
    "prediction": {
        "include_noise": (bool, True),
        "draws_per_sample": (int, 1),
        "thin": (int, 1),
        "interval": (float, 0.95),
        "seed": (int, 0),
    },
}


def validate_config(raw: dict) -> dict:
    """Check a run config against CONFIG_SCHEMA and fill in defaults.

    Rejects unknown sections and keys so typos fail loudly instead of
    silently falling back to defaults.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = [k for k in raw if k not in CONFIG_SCHEMA]
    if unknown:
        raise ConfigError(f"unknown config section '{unknown[0]}'")
    out = {}
    for section, fields in CONFIG_SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section '{section}' must be a JSON object")
        bad = [k for k in given if k not in fields]
        if bad:
            raise ConfigError(f"unknown key '{section}.{bad[0]}'")
        filled = {}
        for key, (typ, default) in fields.items():
            if key in given and given[key] is not None:
                value = given[key]
                if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
                    value = float(value)
                if typ is int and isinstance(value, bool):
                    raise ConfigError(f"'{section}.{key}' must be {typ.__name__}")
                if not isinstance(value, typ):
                    raise ConfigError(f"'{section}.{key}' must be {typ.__name__}")
                filled[key] = value
            elif default is REQUIRED:
                if section == "data":
                    continue  # checked when the data section is actually used
                raise ConfigError(f"missing required key '{section}.{key}'")
            else:
                filled[key] = default
        out[section] = filled
    return out


def _require_data(config: dict) -> dict:
    data = config["data"]
    for key in ("field_csv", "low_csv", "x_columns"):
        if data.get(key) in (None, [], ""):
            raise ConfigError(f"missing required key 'data.{key}'")
    return data


def load_config(path) -> dict:
    with Path(path).open() as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return validate_config(raw)


def priors_from_config(config: dict) -> PriorConfig:
    p = config["priors"]
    return PriorConfig(
        a_emulator=p["a_emulator"],
        b_emulator=p["b_emulator"],
        a_other=p["a_other"],
        b_other=p["b_other"],
        beta_a=p["beta_a"],
        beta_b=p["beta_b"],
        a_noise=p["a_noise"],
        b_noise=p["b_noise"],
        noise_cap=p["noise_cap"],
    )


class Progress:
    """Stderr progress reporter, rate limited to one line per second."""

    def __init__(self, label: str, stream=None):
        self.label = label
        self.stream = stream if stream is not None else sys.stderr
        self._last = 0.0

    def __call__(self, done: int, total: int) -> None:
        now = time.monotonic()
        if done >= total or now - self._last >= 1.0:
            self._last = now
            print(f"{self.label}: {done}/{total}", file=self.stream)


def _fmt(value) -> str:
    return repr(float(value))


def _write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---- subcommands ----------------------------------------------------------------


def cmd_fit(args) -> int:
    config = load_config(args.config)
    data_cfg = _require_data(config)
    mcmc = config["mcmc"]
    if args.seed is not None:
        mcmc["seed"] = args.seed
    if args.steps is not None:
        mcmc["steps"] = args.steps
    if args.burn_in is not None:
        mcmc["burn_in"] = args.burn_in

    dataset = load_dataset(data_cfg, base_dir=Path(args.config).parent)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.monotonic()
    chain, tuning = fit(
        dataset,
        config=priors_from_config(config),
        steps=mcmc["steps"],
        burn_in=mcmc["burn_in"],
        seed=mcmc["seed"],
        pilot_steps=mcmc["pilot_steps"],
        tuning_rounds=mcmc["tuning_rounds"],
        sample_mu=mcmc["sample_mean"],
        progress=Progress("fit"),
    )
    elapsed = time.monotonic() - t0

    chain.to_csv(out_dir / "chain.csv")
    _write_csv(
        out_dir / "posterior_summary.csv",
        ["parameter", "mean", "sd", "lower95", "upper95"],
        [
            [name, _fmt(m), _fmt(s), _fmt(lo), _fmt(hi)]
            for name, m, s, lo, hi in chain.summary()
        ],
    )
    meta = {
        "names": chain.names,
        "seed": chain.seed,
        "steps": chain.steps,
        "burn_in": chain.burn_in,
        "widths": {n: w for n, w in zip(chain.names, chain.widths.tolist())},
        "acceptance_rates": {
            n: r for n, r in zip(chain.names, chain.acceptance_rates.tolist())
        },
        "noise_cap_rejections": chain.noise_cap_rejections,
        "tuning": {
            "acceptance": {
                n: a for n, a in zip(tuning.names, tuning.acceptance.tolist())
            },
            "warnings": tuning.warnings,
        },
        "timing_seconds": elapsed,
        "config": config,
    }
    with (out_dir / "chain_meta.json").open("w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    for warning in tuning.warnings:
        print(f"tuning warning: {warning}", file=sys.stderr)
    print(f"wrote {out_dir / 'chain.csv'} ({len(chain)} samples)", file=sys.stderr)
    return 0


def _read_x_new(path, x_columns, y_column):
    """Prediction inputs; returns (raw x matrix, optional actuals)."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in x_columns if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing column '{missing[0]}'")
        rows = list(reader)
    if not rows:
        return np.empty((0, len(x_columns))), None
    x = np.array([[float(r[c]) for c in x_columns] for r in rows])
    actual = None
    if y_column in header:
        actual = np.array([float(r[y_column]) for r in rows])
    return x, actual


def cmd_predict(args) -> int:
    config = load_config(args.config)
    data_cfg = _require_data(config)
    pred = config["prediction"]
    if args.include_noise is not None:
        pred["include_noise"] = args.include_noise
    if args.seed is not None:
        pred["seed"] = args.seed

    dataset = load_dataset(data_cfg, base_dir=Path(args.config).parent)
    layout = ParameterLayout(dataset, sample_mu=config["mcmc"]["sample_mean"])
    chain = inference.Chain.from_csv(args.chain, layout)
    if len(chain) < 1:
        raise ConfigError(f"{args.chain}: chain has no samples")

    x_columns = data_cfg["x_columns"]
    x_raw, actual = _read_x_new(args.x_new, x_columns, data_cfg["y_column"])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    header = x_columns + ["mean", "variance", "lower", "upper"]
    if x_raw.shape[0] == 0:
        _write_csv(out_dir / "predictions.csv", header, [])
        print("empty prediction input, wrote header only", file=sys.stderr)
        return 0

    bounds = np.array(
        [data_cfg["bounds"].get(c, (0.0, 1.0)) for c in x_columns], dtype=float
    )
    x_unit = scale_inputs(x_raw, bounds)
    summaries = posterior_predictive(
        dataset,
        chain,
        x_unit,
        include_noise=pred["include_noise"],
        draws_per_sample=pred["draws_per_sample"],
        thin=pred["thin"],
        rng_seed=pred["seed"],
        interval=pred["interval"],
    )
    rows = [
        [_fmt(v) for v in x_raw[i]]
        + [_fmt(s.mean), _fmt(s.variance), _fmt(s.lower), _fmt(s.upper)]
        for i, s in enumerate(summaries)
    ]
    _write_csv(out_dir / "predictions.csv", header, rows)
    if actual is not None:
        _write_csv(
            out_dir / "diagnostics.csv",
            x_columns + ["actual", "predicted", "residual", "lower", "upper"],
            [
                [_fmt(v) for v in x_raw[i]]
                + [
                    _fmt(actual[i]),
                    _fmt(s.mean),
                    _fmt(s.mean - actual[i]),
                    _fmt(s.lower),
                    _fmt(s.upper),
                ]
                for i, s in enumerate(summaries)
            ],
        )
    print(f"wrote {out_dir / 'predictions.csv'} ({len(summaries)} rows)", file=sys.stderr)
    return 0


def cmd_loo(args) -> int:
    config = load_config(args.config)
    data_cfg = _require_data(config)
    mcmc = config["mcmc"]
    pred = config["prediction"]
    if args.seed is not None:
        mcmc["seed"] = args.seed
    if args.steps is not None:
        mcmc["steps"] = args.steps
    if args.burn_in is not None:
        mcmc["burn_in"] = args.burn_in

    dataset = load_dataset(data_cfg, base_dir=Path(args.config).parent)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = loo(
        dataset,
        config=priors_from_config(config),
        steps=mcmc["steps"],
        burn_in=mcmc["burn_in"],
        pilot_steps=mcmc["pilot_steps"],
        seed=mcmc["seed"],
        thin=pred["thin"],
        interval=pred["interval"],
        workers=args.threads,
        progress=Progress("loo folds"),
    )
    x_columns = data_cfg["x_columns"]
    bounds = np.array(
        [data_cfg["bounds"].get(c, (0.0, 1.0)) for c in x_columns], dtype=float
    )
    rows = []
    for r in results:
        x_raw = unscale_inputs(r.x.reshape(1, -1), bounds)[0]
        rows.append(
            [str(r.index)]
            + [_fmt(v) for v in x_raw]
            + [
                _fmt(r.actual),
                _fmt(r.summary.mean),
                _fmt(r.summary.variance),
                _fmt(r.summary.lower),
                _fmt(r.summary.upper),
                str(int(r.covered)),
            ]
        )
    _write_csv(
        out_dir / "loo_report.csv",
        ["index"] + x_columns + ["actual", "mean", "variance", "lower", "upper", "covered"],
        rows,
    )
    covered = sum(r.covered for r in results)
    print(f"loo coverage: {covered}/{len(results)}", file=sys.stderr)
    return 0


def _write_toy_tables(out_dir: Path, raw) -> None:
    """Dump one set of raw toy tables plus a ready-to-fit config."""
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_dir / "field.csv",
        ["x1", "x2", "y"],
        [
            [_fmt(raw.field_x[i, 0]), _fmt(raw.field_x[i, 1]), _fmt(raw.field_y[i])]
            for i in range(raw.field_x.shape[0])
        ],
    )
    lx, ltf, ltl, ly = raw.low
    _write_csv(
        out_dir / "low.csv",
        ["x1", "x2", "tf", "tl", "y"],
        [
            [_fmt(lx[i, 0]), _fmt(lx[i, 1]), _fmt(ltf[i, 0]), _fmt(ltl[i, 0]), _fmt(ly[i])]
            for i in range(lx.shape[0])
        ],
    )
    data_cfg = {
        "field_csv": "field.csv",
        "low_csv": "low.csv",
        "x_columns": ["x1", "x2"],
        "t_shared_columns": ["tf"],
        "t_low_columns": ["tl"],
        "y_column": "y",
        "p": 2,
        "m_shared": 1,
        "m_low": 1,
    }
    hx, htf, hth, hy = raw.high
    if hy.shape[0] > 0:
        _write_csv(
            out_dir / "high.csv",
            ["x1", "x2", "tf", "th", "y"],
            [
                [_fmt(hx[i, 0]), _fmt(hx[i, 1]), _fmt(htf[i, 0]), _fmt(hth[i, 0]), _fmt(hy[i])]
                for i in range(hx.shape[0])
            ],
        )
        data_cfg["high_csv"] = "high.csv"
        data_cfg["t_high_columns"] = ["th"]
        data_cfg["m_high"] = 1
    if raw.validation.n > 0:
        v = raw.validation
        _write_csv(
            out_dir / "validation.csv",
            ["x1", "x2", "y", "mean"],
            [
                [_fmt(v.x[i, 0]), _fmt(v.x[i, 1]), _fmt(v.y[i]), _fmt(v.mean[i])]
                for i in range(v.n)
            ],
        )
    with (out_dir / "config.json").open("w") as fh:
        json.dump({"data": data_cfg}, fh, indent=2, sort_keys=True)


def cmd_toy_gen(args) -> int:
    raw = _raw_toy_tables(args.n_low, args.n_high, args.n_field, args.validation, args.seed)
    out_dir = Path(args.out_dir)
    _write_toy_tables(out_dir, raw)
    print(f"wrote toy data to {out_dir}", file=sys.stderr)
    return 0


def cmd_sim_study(args) -> int:
    models = tuple(m.strip().upper() for m in args.models.split(",") if m.strip())
    config = StudyConfig(
        n_low=args.n_low,
        n_high=args.n_high,
        n_field=args.n_field,
        replicates=args.replicates,
        validation_n=args.validation,
        models=models,
        seed=args.seed,
        steps=args.steps if args.steps is not None else 10000,
        burn_in=args.burn_in if args.burn_in is not None else 2000,
        predict_thin=args.predict_thin,
        workers=args.threads,
    )
    result = run_sim_study(config, progress=Progress("replicates"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for r in range(config.replicates):
        row = [str(r)]
        for j in range(len(result.models)):
            v = result.table[r, j]
            row.append("" if np.isnan(v) else _fmt(v))
        rows.append(row)
    _write_csv(out_dir / "rmspe.csv", ["replicate"] + list(result.models), rows)

    box_rows = []
    for j, model in enumerate(result.models):
        col = result.table[:, j]
        col = col[~np.isnan(col)]
        if col.size:
            q = np.quantile(col, [0.0, 0.25, 0.5, 0.75, 1.0])
            box_rows.append([model] + [_fmt(v) for v in q])
        else:
            box_rows.append([model] + [""] * 5)
    _write_csv(
        out_dir / "boxplot.csv", ["model", "min", "q1", "median", "q3", "max"], box_rows
    )

    summary = {
        "medians": result.medians,
        "failures": [
            {"replicate": r, "model": m, "error": e} for r, m, e in result.failures
        ],
        "n_failures": len(result.failures),
        "config": {
            "n_low": config.n_low,
            "n_high": config.n_high,
            "n_field": config.n_field,
            "replicates": config.replicates,
            "validation_n": config.validation_n,
            "models": list(config.models),
            "seed": config.seed,
            "steps": config.steps,
            "burn_in": config.burn_in,
            "predict_thin": config.predict_thin,
        },
    }
    with (out_dir / "rmspe_summary.json").open("w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    if args.dump_data:
        for r in range(config.replicates):
            raw, _ = replicate_raw_tables(config, r)
            _write_toy_tables(out_dir / "datasets" / f"replicate_{r:03d}", raw)
        print(f"wrote replicate datasets under {out_dir / 'datasets'}", file=sys.stderr)
    print(f"medians: {result.medians}", file=sys.stderr)
    return 0


def cmd_lhs(args) -> int:
    dm = design_mod.lhs(args.n, args.d, args.seed)
    header = [f"x{j + 1}" for j in range(args.d)]
    rows = [[_fmt(v) for v in dm.points[i]] for i in range(args.n)]
    if args.out:
        _write_csv(args.out, header, rows)
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
    return 0


# ---- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfcal",
        description="Bayesian calibration of multi-fidelity computer models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_mcmc=True):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out-dir", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if with_mcmc:
            p.add_argument("--steps", type=int, default=None)
            p.add_argument("--burn-in", type=int, default=None)

    p_fit = sub.add_parser("fit", help="run the MCMC and store the chain")
    common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="posterior prediction at new points")
    common(p_pred, with_mcmc=False)
    p_pred.add_argument("--chain", required=True, help="chain CSV from fit")
    p_pred.add_argument("--x-new", required=True, help="CSV of design points")
    noise = p_pred.add_mutually_exclusive_group()
    noise.add_argument("--include-noise", dest="include_noise", action="store_true", default=None)
    noise.add_argument("--no-include-noise", dest="include_noise", action="store_false")
    p_pred.set_defaults(func=cmd_predict)

    p_loo = sub.add_parser("loo", help="leave-one-out analysis of the field data")
    common(p_loo)
    p_loo.add_argument("--threads", type=int, default=1)
    p_loo.set_defaults(func=cmd_loo)

    p_toy = sub.add_parser("toy-gen", help="generate toy training/validation data")
    p_toy.add_argument("--n-low", type=int, default=40)
    p_toy.add_argument("--n-high", type=int, default=10)
    p_toy.add_argument("--n-field", type=int, default=3)
    p_toy.add_argument("--validation", type=int, default=25)
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--out-dir", default="toy_data")
    p_toy.set_defaults(func=cmd_toy_gen)

    p_study = sub.add_parser("sim-study", help="D1/D2/D3 RMSPE comparison study")
    p_study.add_argument("--n-low", type=int, default=40)
    p_study.add_argument("--n-high", type=int, default=10)
    p_study.add_argument("--n-field", type=int, default=3)
    p_study.add_argument("--replicates", type=int, default=100)
    p_study.add_argument("--validation", type=int, default=25)
    p_study.add_argument("--models", default="D1,D2,D3")
    p_study.add_argument("--seed", type=int, default=0)
    p_study.add_argument("--steps", type=int, default=None)
    p_study.add_argument("--burn-in", type=int, default=None)
    p_study.add_argument("--predict-thin", type=int, default=10)
    p_study.add_argument("--threads", type=int, default=1)
    p_study.add_argument(
        "--dump-data", action="store_true",
        help="also write each replicate's generated datasets",
    )
    p_study.add_argument("--out-dir", default="study")
    p_study.set_defaults(func=cmd_sim_study)

    p_lhs = sub.add_parser("lhs", help="emit a random Latin hypercube design")
    p_lhs.add_argument("n", type=int)
    p_lhs.add_argument("d", type=int)
    p_lhs.add_argument("seed", type=int, nargs="?", default=0)
    p_lhs.add_argument("--out", default=None)
    p_lhs.set_defaults(func=cmd_lhs)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
