"""Command-line client for the study-design simulation service.

Every subcommand builds a request and posts it to the HTTP API: against a
running server when ``--server`` is given, otherwise against the bundled app
in-process. Exit codes: 0 success, 1 usage error, 2 runtime estimation
failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx


class RuntimeFailure(Exception):
    """Server-side estimation failure (exit code 2)."""


def _post_inprocess(path: str, payload: dict) -> httpx.Response:
    import asyncio

    from .service import app

    async def go() -> httpx.Response:
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://tndsim.internal", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(go())


def _post(ctx, path: str, payload: dict) -> httpx.Response:
    server = ctx.obj.get("server")
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            response = client.post(path, json=payload)
    else:
        response = _post_inprocess(path, payload)
    if response.status_code == 422:
        detail = response.json().get("detail", response.text)
        raise click.UsageError(f"{path}: {detail}")
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise RuntimeFailure(f"{path}: {detail}")
    return response


def _parse_overrides(pairs: tuple[str, ...]) -> dict[str, float]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        try:
            overrides[key.strip()] = float(value)
        except ValueError:
            raise click.UsageError(f"--set {key}: {value!r} is not a number") from None
    return overrides


@click.group()
@click.option("--server", default=None, help="Base URL of a running server; default runs in-process.")
@click.pass_context
def cli(ctx, server):
    """Simulate testing-based study designs and compare their estimators."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@cli.command()
@click.option("--scenario", type=click.IntRange(1, 3), default=1, show_default=True)
@click.option("--population", type=int, default=200_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--set", "overrides", multiple=True, help="Scenario override KEY=VALUE; repeatable.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output CSV path (default stdout).")
@click.pass_context
def simulate(ctx, scenario, population, seed, overrides, out):
    """Generate a population and emit its complete-data CSV."""
    response = _post(
        ctx,
        "/simulate",
        {
            "scenario": scenario,
            "population_size": population,
            "seed": seed,
            "scenario_overrides": _parse_overrides(overrides),
        },
    )
    if out:
        Path(out).write_text(response.text)
        click.echo(f"wrote {out}")
    else:
        click.echo(response.text, nl=False)


@cli.command()
@click.option("--method", required=True,
              type=click.Choice(["proper-tnd", "testpos-vs-controls", "tested-only",
                                 "ipw-correct", "ipw-missing-interaction",
                                 "ipw-omitted-w", "ipw-omit-hcsb", "ipw-adjust-hcsb"]))
@click.option("--sample", "sample_path", type=click.Path(exists=True, dir_okay=False),
              help="Pre-drawn study-sample CSV.")
@click.option("--population-csv", "population_path", type=click.Path(exists=True, dir_okay=False),
              help="Population CSV to draw a sample from.")
@click.option("--n-tested", type=int, default=400, show_default=True)
@click.option("--n-controls", type=int, default=400, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--q0", type=float, default=None, help="Assumed testing prevalence (needed for IPW on a sample CSV).")
@click.option("--bootstrap-b", type=int, default=0, show_default=True,
              help="Bootstrap replicates for the IPW interval; 0 skips it.")
@click.option("--level", type=float, default=0.95, show_default=True)
@click.pass_context
def estimate(ctx, method, sample_path, population_path, n_tested, n_controls,
             seed, q0, bootstrap_b, level):
    """Run one analysis method on one sample and print the estimate."""
    if (sample_path is None) == (population_path is None):
        raise click.UsageError("provide exactly one of --sample or --population-csv")
    payload = {
        "method": method,
        "n_tested": n_tested,
        "n_controls": n_controls,
        "seed": seed,
        "q0": q0,
        "ci_level": level,
        "bootstrap_b": bootstrap_b,
    }
    if sample_path:
        payload["sample_csv"] = Path(sample_path).read_text()
    else:
        payload["population_csv"] = Path(population_path).read_text()
    response = _post(ctx, "/estimate", payload)
    click.echo(json.dumps(response.json(), indent=2, sort_keys=True))


@cli.command()
@click.option("--scenario", type=click.IntRange(1, 3), default=1, show_default=True)
@click.option("--profile", type=click.Choice(["desk", "paper"]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="TOML experiment config; flags override its values.")
@click.option("--seed", type=int, default=None)
@click.option("--replicates", type=int, default=None)
@click.option("--population", type=int, default=None)
@click.option("--n-tested", type=int, default=None)
@click.option("--n-controls", type=int, default=None)
@click.option("--bootstrap-b", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--fixed-population", is_flag=True, default=False,
              help="Reuse one generated population across replicates.")
@click.option("--set", "overrides", multiple=True, help="Scenario override KEY=VALUE; repeatable.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="tndsim-out", show_default=True)
@click.pass_context
def experiment(ctx, scenario, profile, config_path, seed, replicates, population,
               n_tested, n_controls, bootstrap_b, threads, fixed_population,
               overrides, out_dir):
    """Run the full Monte Carlo comparison and write table, report, and CSV."""
    payload: dict = {}
    if config_path:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib

        with open(config_path, "rb") as fh:
            payload.update(tomllib.load(fh))
        if "scenario_overrides" in payload:
            payload["scenario_overrides"] = {
                k: float(v) for k, v in payload["scenario_overrides"].items()
            }
    payload.setdefault("scenario", scenario)
    if profile:
        payload["profile"] = profile
    for key, value in (
        ("base_seed", seed),
        ("replicates", replicates),
        ("population_size", population),
        ("n_tested_sample", n_tested),
        ("n_controls", n_controls),
        ("bootstrap_b", bootstrap_b),
        ("threads", threads),
    ):
        if value is not None:
            payload[key] = value
    if fixed_population:
        payload["fixed_population"] = True
    if overrides:
        merged = dict(payload.get("scenario_overrides", {}))
        merged.update(_parse_overrides(overrides))
        payload["scenario_overrides"] = merged

    response = _post(ctx, "/experiment", payload)
    body = response.json()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(body["table"])
    (out / "report.json").write_text(json.dumps(body["report"], indent=2, sort_keys=True) + "\n")
    (out / "replicates.csv").write_text(body["replicates_csv"])
    click.echo(body["table"], nl=False)
    click.echo(f"\nwrote {out / 'table.txt'}, {out / 'report.json'}, {out / 'replicates.csv'}")


@cli.command()
@click.option("--replicates-csv", "csv_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--report-json", "json_path", type=click.Path(exists=True, dir_okay=False),
              help="Sidecar report.json carrying the truth block; or pass --true-or/--true-relative-or.")
@click.option("--true-or", type=float, default=None)
@click.option("--true-relative-or", type=float, default=None)
@click.pass_context
def report(ctx, csv_path, json_path, true_or, true_relative_or):
    """Re-render the summary table from a per-replicate CSV."""
    scenario = 0
    realized_q0 = 0.0
    if json_path:
        sidecar = json.loads(Path(json_path).read_text())
        true_or = sidecar["truth"]["true_or"]
        true_relative_or = sidecar["truth"]["true_relative_or"]
        realized_q0 = sidecar["truth"].get("realized_q0", 0.0)
        scenario = sidecar.get("scenario", 0)
    if true_or is None or true_relative_or is None:
        raise click.UsageError(
            "supply --report-json or both --true-or and --true-relative-or"
        )
    response = _post(
        ctx,
        "/report",
        {
            "replicates_csv": Path(csv_path).read_text(),
            "true_or": true_or,
            "true_relative_or": true_relative_or,
            "scenario": scenario,
            "realized_q0": realized_q0,
        },
    )
    click.echo(response.json()["table"], nl=False)


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service with uvicorn."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as err:
        click.echo(f"usage error: {err.format_message()}", err=True)
        return 1
    except click.exceptions.Exit as err:
        return int(err.exit_code)
    except click.Abort:
        return 1
    except RuntimeFailure as err:
        click.echo(f"estimation failure: {err}", err=True)
        return 2
    except httpx.HTTPError as err:
        click.echo(f"transport error: {err}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
