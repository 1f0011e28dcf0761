"""Command-line front end: run cells, sweeps, and the delta search.

Configuration comes from an INI-style file (key = value sections) with
command-line flags winning over file values.  Results go out as UTF-8
CSV with a mandatory header row, '.' decimal points, "NA" for undefined
metrics, and '#' comment lines that serialize the full configuration so
any output file reproduces its run.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
import sys

import click
import numpy as np

from . import engine
from .engine import (STATUS_CONFIG_ERROR, CellResult, SweepSpec, TrialConfig,
                     TuneResult)
from .scenario import ConfigurationError, build_scenario

RESULT_COLUMNS = (
    "protocol", "K", "B", "P_a", "P_b", "delta", "varpi", "n_trials",
    "avg_attempts", "avg_attempts_ci95", "failed_prob", "failed_prob_ci95",
    "norm_accepted", "norm_accepted_ci95", "avg_sum_rate_bpcu",
    "sum_rate_ci95", "status")

LONG_COLUMNS = ("protocol", "K", "B", "delta", "metric", "value", "ci95",
                "n_trials", "status")

_INT_FIELDS = {"K", "B", "tau", "n_blocks", "n_trials", "seed", "M_y", "M_z"}
_BOOL_FIELDS = {"literal_eq3", "allow_small_subarrays"}
_STR_FIELDS = {"protocol", "estimator", "bias_mode", "shadow_mode"}


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "NA" if math.isnan(v) else repr(v)
    return str(value)


def coerce_field(name: str, text: str):
    """Parse one TrialConfig field from its textual form."""
    text = text.strip()
    if text in ("NA", "None", ""):
        return None
    if name in _INT_FIELDS:
        return int(text)
    if name in _BOOL_FIELDS:
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"bad boolean for {name}: {text!r}")
    if name in _STR_FIELDS:
        return text
    return float(text)


def config_from_items(items: dict) -> TrialConfig:
    """TrialConfig from a key = value mapping; unknown keys are errors."""
    known = {f.name for f in dataclasses.fields(TrialConfig)}
    kwargs = {}
    for key, value in items.items():
        if key not in known:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        kwargs[key] = coerce_field(key, str(value))
    return TrialConfig(**{k: v for k, v in kwargs.items() if v is not None or k == "delta"})


def config_comment_lines(cfg: TrialConfig) -> list[str]:
    return [f"# {f.name} = {_fmt(getattr(cfg, f.name))}"
            for f in dataclasses.fields(TrialConfig)]


def parse_config_comments(text: str) -> TrialConfig:
    """Rebuild the TrialConfig serialized in a result file's '#' lines."""
    items = {}
    known = {f.name for f in dataclasses.fields(TrialConfig)}
    for line in text.splitlines():
        if not line.startswith("#") or "=" not in line:
            continue
        key, _, value = line[1:].partition("=")
        key = key.strip()
        if key in known:
            items[key] = value.strip()
    return config_from_items(items)


def result_row(cell: CellResult) -> list[str]:
    cfg = cell.config
    row = [cfg.protocol, _fmt(cfg.K), _fmt(cfg.B), _fmt(cfg.P_a), _fmt(cfg.P_b),
           _fmt(cfg.delta), _fmt(cfg.varpi), _fmt(cfg.n_trials)]
    for metric in ("avg_attempts", "failed_prob", "norm_accepted", "sum_rate"):
        mean, ci, n = cell.summary.get(metric, (None, None, 0))
        row.append(_fmt(mean if n > 0 else None))
        row.append(_fmt(ci if n > 0 else None))
    row.append(cell.status)
    return row


def render_result_csv(cells: list[CellResult], header_cfg: TrialConfig,
                      extra_comments: list[str] = ()) -> str:
    lines = list(extra_comments)
    lines += config_comment_lines(header_cfg)
    lines.append(",".join(RESULT_COLUMNS))
    for cell in cells:
        lines.append(",".join(result_row(cell)))
    return "\n".join(lines) + "\n"


def render_long_csv(cells: list[CellResult]) -> str:
    lines = [",".join(LONG_COLUMNS)]
    for cell in cells:
        cfg = cell.config
        for metric in ("avg_attempts", "failed_prob", "norm_accepted", "sum_rate"):
            mean, ci, n = cell.summary.get(metric, (None, None, 0))
            lines.append(",".join([
                cfg.protocol, _fmt(cfg.K), _fmt(cfg.B), _fmt(cfg.delta), metric,
                _fmt(mean if n > 0 else None), _fmt(ci if n > 0 else None),
                _fmt(n), cell.status]))
    return "\n".join(lines) + "\n"


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_ini(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case: K, P_a, ...
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"cannot read config file {path!r}")
    return parser


def _base_from_sections(parser: configparser.ConfigParser,
                        sections: tuple[str, ...]) -> TrialConfig:
    items = {}
    for section in sections:
        if parser.has_section(section):
            items.update(dict(parser.items(section)))
    return config_from_items(items)


_CONFIG_OPTIONS = [
    click.option("--protocol", type=click.Choice(["sucre-xl", "nvr-xl"]),
                 default=None, help="Random-access protocol to simulate."),
    click.option("--K", "K", type=int, default=None,
                 help="Number of inactive users in the cell."),
    click.option("--B", "B", type=int, default=None, help="Number of subarrays."),
    click.option("--delta", type=float, default=None,
                 help="Decision-bias scale factor (protocol default if omitted)."),
    click.option("--pa", "P_a", type=float, default=None,
                 help="First-attempt access probability."),
    click.option("--pna", "P_na", type=float, default=None,
                 help="Retry access probability."),
    click.option("--pb", "P_b", type=float, default=None,
                 help="Per-subarray visibility probability."),
    click.option("--tau", type=int, default=None, help="Number of RA pilots."),
    click.option("--varpi", type=float, default=None,
                 help="Residual interference factor after the SIC step."),
    click.option("--sigma2", type=float, default=None, help="Noise power [W]."),
    click.option("--trials", "n_trials", type=int, default=None,
                 help="Monte Carlo trials per cell."),
    click.option("--blocks", "n_blocks", type=int, default=None,
                 help="RA blocks per trial."),
    click.option("--seed", type=int, default=None, help="Master seed."),
    click.option("--literal-eq3", "literal_eq3", is_flag=True, default=None,
                 help="Use the published multiplicative strong-user SINR "
                      "denominator instead of the additive correction."),
    click.option("--estimator", type=click.Choice(["genie", "noisy"]),
                 default=None, help="Contending-gain estimator mode."),
    click.option("--noise-scale", "noise_scale", type=float, default=None,
                 help="Deviation multiplier of the noisy estimator."),
    click.option("--bias-mode", "bias_mode",
                 type=click.Choice(["gain_scaled", "literal"]), default=None,
                 help="How delta enters the decision bias."),
    click.option("--shadow-mode", "shadow_mode",
                 type=click.Choice(["per_antenna", "per_subarray"]), default=None),
    click.option("--allow-small-subarrays", "allow_small_subarrays",
                 is_flag=True, default=None,
                 help="Permit subarrays below the antenna-count floor."),
]


def config_options(fn):
    for option in reversed(_CONFIG_OPTIONS):
        fn = option(fn)
    return fn


def _merge_config(base: TrialConfig, overrides: dict) -> TrialConfig:
    fields = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(base, **fields)


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(2)


@click.group()
@click.version_option()
def main():
    """Monte Carlo experiments for XL-MIMO grant-based random access."""


@main.command("run")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="INI file with a [run] section; flags override it.")
@click.option("--out", type=click.Path(), default=None,
              help="Also write the CSV to this path.")
@click.option("--workers", type=int, default=None)
@click.option("--backend", type=click.Choice(["python", "cython"]), default=None)
@config_options
def cmd_run(config_path, out, workers, backend, **overrides):
    """Run one (protocol, K, B, delta) cell and print its result row."""
    try:
        base = TrialConfig()
        if config_path:
            base = _base_from_sections(_read_ini(config_path), ("run", "base"))
        cfg = _merge_config(base, overrides)
        cell = engine.run_cell(cfg, workers=workers, backend=backend)
        if cell.status == STATUS_CONFIG_ERROR:
            _fail(cell.error)
        text = render_result_csv([cell], cell.config)
    except (ConfigurationError, ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(text, nl=False)
    if out:
        _write_text(out, text)


@main.command("sweep")
@click.argument("spec_path", type=click.Path())
@click.option("--out", type=click.Path(), required=True,
              help="Output CSV path; a .long.csv companion sits beside it.")
@click.option("--workers", type=int, default=None)
@click.option("--backend", type=click.Choice(["python", "cython"]), default=None)
def cmd_sweep(spec_path, out, workers, backend):
    """Run the experiment grid described by an INI spec file.

    The [grid] section lists comma-separated values for protocol, K, B
    and delta; the [base] section holds every other parameter.
    """
    try:
        parser = _read_ini(spec_path)
        base = _base_from_sections(parser, ("base",))
        if not parser.has_section("grid"):
            raise ConfigurationError("sweep spec needs a [grid] section")
        grid = dict(parser.items("grid"))

        def split(key, default, conv):
            if key not in grid:
                return default
            values = [v.strip() for v in grid[key].split(",") if v.strip()]
            if not values:
                raise ConfigurationError(f"empty grid list for {key!r}")
            return tuple(conv(v) for v in values)

        spec = SweepSpec(
            base=base,
            protocols=split("protocol", (base.protocol,), str),
            Ks=split("K", (base.K,), int),
            Bs=split("B", (base.B,), int),
            deltas=split("delta", (base.delta,),
                         lambda v: None if v in ("NA", "None") else float(v)))
        cells = engine.run_sweep(spec, workers=workers, backend=backend)
        grid_comments = [f"# grid.{key} = {value}" for key, value in
                         sorted(grid.items())]
        text = render_result_csv(cells, base, extra_comments=grid_comments)
    except (ConfigurationError, ValueError, OSError) as exc:
        _fail(str(exc))
    _write_text(out, text)
    long_path = (out[:-4] if out.endswith(".csv") else out) + ".long.csv"
    _write_text(long_path, render_long_csv(cells))
    click.echo(f"wrote {len(cells)} rows to {out} (long format: {long_path})")


@main.command("tune-delta")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="INI file with [tune] (grid) and [base] sections.")
@click.option("--delta-min", type=float, default=None)
@click.option("--delta-max", type=float, default=None)
@click.option("--delta-step", type=float, default=None)
@click.option("--objective", type=click.Choice(["sum_rate", "attempts"]),
              default=None, help="Maximize sum-rate or minimize attempts.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--backend", type=click.Choice(["python", "cython"]), default=None)
@config_options
def cmd_tune_delta(config_path, delta_min, delta_max, delta_step, objective,
                   out, workers, backend, **overrides):
    """Exhaustive delta search; prints the objective table and delta_star."""
    try:
        base = TrialConfig()
        tune_items = {}
        if config_path:
            parser = _read_ini(config_path)
            base = _base_from_sections(parser, ("base",))
            if parser.has_section("tune"):
                tune_items = dict(parser.items("tune"))
        cfg = _merge_config(base, overrides)
        lo = delta_min if delta_min is not None else float(tune_items.get("delta_min", -500.0))
        hi = delta_max if delta_max is not None else float(tune_items.get("delta_max", 0.0))
        step = delta_step if delta_step is not None else float(tune_items.get("delta_step", 25.0))
        if step <= 0 or hi < lo:
            raise ConfigurationError("need delta_min <= delta_max and a positive step")
        obj = objective or tune_items.get("objective", "sum_rate")
        n_points = int(round((hi - lo) / step)) + 1
        deltas = [lo + i * step for i in range(n_points)]
        result = engine.tune_delta(cfg, deltas, objective=obj,
                                   workers=workers, backend=backend)
        lines = config_comment_lines(engine.normalize(cfg))
        lines.append(f"# objective = {obj}")
        lines.append("delta,objective_mean,objective_ci95,n_trials")
        for d, mean, ci, n in result.table:
            lines.append(",".join([_fmt(d), _fmt(mean if n else None),
                                   _fmt(ci if n else None), _fmt(n)]))
        lines.append(f"delta_star={_fmt(result.delta_star)}")
        text = "\n".join(lines) + "\n"
    except (ConfigurationError, ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(text, nl=False)
    if out:
        _write_text(out, text)


@main.command("dump-scenario")
@click.option("--out", type=click.Path(), default=None,
              help="Write the JSON dump here instead of stdout.")
@click.option("--trial", type=int, default=0, help="Trial index to dump.")
@config_options
def cmd_dump_scenario(out, trial, **overrides):
    """Emit one trial's world (positions, gains, visibility) as JSON."""
    try:
        cfg = engine.normalize(_merge_config(TrialConfig(), overrides))
        scn = build_scenario(engine.scenario_config(cfg), cfg.seed, trial)
        payload = {
            "config": {f.name: getattr(cfg, f.name)
                       for f in dataclasses.fields(TrialConfig)},
            "trial": trial,
            "M_b": scn.partition.M_b,
            "positions": scn.positions.tolist(),
            "beta_sa": scn.fading.beta.tolist(),
            "rho": scn.fading.rho.tolist(),
            "visible": scn.visibility.visible.astype(int).tolist(),
        }
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    except (ConfigurationError, ValueError, OSError) as exc:
        _fail(str(exc))
    if out:
        _write_text(out, text)
        click.echo(f"wrote scenario dump to {out}")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
