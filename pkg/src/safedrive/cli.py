"""Command-line entry points: `safedrive run` and `safedrive batch`.

Exit codes: 0 success, 2 configuration error, 3 pipeline error (failing stage
named on stderr).
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from .errors import PipelineStageError, SafeDriveError
from .pipeline import RunConfig, run_safedrive, write_outputs

EXIT_CONFIG_ERROR = 2
EXIT_PIPELINE_ERROR = 3


def _build_config(manifest, image, lat, lon, radius, truth, config_path, seed, base=None):
    overrides = {}
    if config_path is not None:
        try:
            overrides = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise click.ClickException(f"cannot read config: {exc}")
    overrides.update(
        {k: v for k, v in {
            "manifest": manifest, "image": image, "lat": lat, "lon": lon,
            "radius": radius, "truth": truth, "seed": seed,
        }.items() if v is not None}
    )
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise click.ClickException(f"unknown config fields: {sorted(unknown)}")
    try:
        return RunConfig.from_json(json.dumps(overrides))
    except TypeError as exc:
        raise click.ClickException(f"invalid config: {exc}")


def _run_case(config: RunConfig, out_dir):
    overlay, report = run_safedrive(config)
    overlay_path, metrics_path = write_outputs(out_dir, overlay, report)
    click.echo(f"wrote {overlay_path} and {metrics_path}")
    if report.average_offset_px is not None:
        click.echo(f"average offset: {report.average_offset_px:.3f} px")
    for msg in report.warnings:
        click.echo(f"warning: {msg}", err=True)


@click.group()
def main():
    """Lane-marker projection from alternate road imagery."""


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--image", required=True, type=click.Path(exists=True))
@click.option("--lat", required=True, type=float)
@click.option("--lon", required=True, type=float)
@click.option("--radius", type=float, default=None, help="Search radius in meters.")
@click.option("--truth", type=click.Path(exists=True), default=None,
              help="Ground-truth line sidecar: `u1 v1 u2 v2`.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), default="safedrive_out")
@click.option("--seed", type=int, default=None)
def run(manifest, image, lat, lon, radius, truth, config_path, out_dir, seed):
    """Run the pipeline for a single current image."""
    try:
        config = _build_config(manifest, image, lat, lon, radius, truth, config_path, seed)
    except click.ClickException as exc:
        click.echo(f"config error: {exc.message}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        _run_case(config, out_dir)
    except PipelineStageError as exc:
        click.echo(f"pipeline error in stage '{exc.stage}': {exc.cause}", err=True)
        sys.exit(EXIT_PIPELINE_ERROR)
    except SafeDriveError as exc:
        click.echo(f"pipeline error: {exc}", err=True)
        sys.exit(EXIT_PIPELINE_ERROR)


@main.command()
@click.option("--cases", "cases_dir", required=True, type=click.Path(exists=True),
              help="Directory whose subdirectories each hold a case.json.")
@click.option("--out", "out_dir", type=click.Path(), default="safedrive_out")
def batch(cases_dir, out_dir):
    """Run every case under a directory; continues past failing cases."""
    cases = sorted(p for p in Path(cases_dir).iterdir() if (p / "case.json").is_file())
    if not cases:
        click.echo("no case.json files found", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    failures = 0
    for case_dir in cases:
        try:
            data = json.loads((case_dir / "case.json").read_text(encoding="utf-8"))
            for key in ("manifest", "image", "truth"):
                if data.get(key) and not Path(data[key]).is_absolute():
                    data[key] = str(case_dir / data[key])
            config = RunConfig.from_json(json.dumps(data))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            click.echo(f"{case_dir.name}: config error: {exc}", err=True)
            failures += 1
            continue
        try:
            _run_case(config, Path(out_dir) / case_dir.name)
        except PipelineStageError as exc:
            click.echo(
                f"{case_dir.name}: pipeline error in stage '{exc.stage}': {exc.cause}",
                err=True,
            )
            failures += 1
        except SafeDriveError as exc:
            click.echo(f"{case_dir.name}: pipeline error: {exc}", err=True)
            failures += 1
    if failures:
        sys.exit(EXIT_PIPELINE_ERROR)


if __name__ == "__main__":
    main()
