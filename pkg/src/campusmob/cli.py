"""Command-line entry point: generate, run, sweep and validate."""

from __future__ import annotations

import argparse
import configparser
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import KEYS, MODES, ConfigError, RunConfig, default_config, load_config
from .core import ConstraintViolationError, StageError, build_agents, execute_mode
from .geo import make_router
from .metrics import apply_baseline, summary_dict, write_csv, write_summaries
from .modes import make_mode
from .scenario import DemandScenario, ScenarioError, generate_scenario, read_scenario, write_scenario

logger = logging.getLogger("campusmob")

BASELINE = "everybodydrives"
EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2


def make_router_for(cfg: RunConfig):
    return make_router(cfg.backend, speed_kmh=cfg.driving_speed_kmh, detour_factor=cfg.detour_factor,
                       graph_file=cfg.graph_file or None)


def execution_order(modes) -> list[str]:
    """The baseline runs first so later modes can report percentages against it."""
    modes = list(dict.fromkeys(modes))
    return ([BASELINE] if BASELINE in modes else []) + [m for m in modes if m != BASELINE]


def run_modes(cfg: RunConfig, scenario: DemandScenario, modes, out_dir=None) -> dict:
    """Run ``modes`` on identical agents; returns ``{mode: (mode object, summary)}`` in execution order."""
    if not modes:
        raise ConfigError("no modes selected")
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}")
    agents = build_agents(scenario, cfg)
    router = make_router_for(cfg)
    baseline = None
    results = {}
    for name in execution_order(modes):
        mode = make_mode(name, cfg, router)
        mode.baseline = baseline
        execute_mode(mode, agents, out_dir)
        if name == BASELINE:
            baseline = mode.summary
            apply_baseline(baseline, baseline)
        results[name] = (mode, mode.summary)
    return results


def _load(path) -> RunConfig:
    return load_config(path) if path else default_config()


def run_info(cfg: RunConfig, scenario: DemandScenario, modes) -> dict:
    return {
        "version": __version__,
        "config_digest": cfg.digest,
        "config_file_digest": cfg.source_digest,
        "scenario_digest": scenario.digest,
        "seed": cfg.seed,
        "modes": list(modes),
        "agents": len(scenario.rows),
        "routing_backend": cfg.backend,
        "walking_model": f"great-circle distance x {cfg.walking_detour_factor} at {cfg.walking_speed_mps} m/s",
    }


def format_summary(results: dict) -> str:
    head = f"{'mode':<16}{'rides':>8}{'lost':>6}{'driving':>9}{'km':>12}{'CO2 kg':>11}{'EUR':>11}{'occ':>7}{'% dist':>8}"
    lines = [head]
    for name, (_, s) in results.items():
        pct = "" if s.pct_distance is None else f"{s.pct_distance:.2f}"
        lines.append(f"{name:<16}{s.rides:>8}{s.lost:>6}{s.driving_agents:>9}{s.total_distance_m / 1000:>12.1f}"
                     f"{s.total_co2_g / 1000:>11.1f}{s.total_fuel_cost_eur:>11.2f}{s.avg_occupancy:>7.3f}{pct:>8}")
    return "\n".join(lines)


# -- verbs -----------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _load(args.config)
    changes = {}
    if args.agents is not None:
        changes["n_agents"] = args.agents
    if args.seed is not None:
        changes["seed"] = args.seed
    cfg = cfg.replace(**changes) if changes else cfg
    out = Path(args.out or "scenario.csv")
    scenario = generate_scenario(cfg, cfg.seed)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_scenario(scenario, out)
    print(f"wrote {len(scenario.rows)} agents to {out} (seed {cfg.seed}, digest {scenario.digest[:12]})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.modes:
        cfg = cfg.replace(modes=args.modes)
    if not args.scenario:
        raise ScenarioError("run needs --scenario")
    # parse the scenario before any output directory is created
    scenario = read_scenario(args.scenario)
    modes = cfg.mode_list
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_modes(cfg, scenario, modes, out)
    ordered = {m: results[m] for m in modes}
    with_pct = BASELINE in modes and len(modes) > 1
    write_summaries(out, [s for _, s in ordered.values()], cfg.digest, with_pct=with_pct)
    (out / "runInfo.json").write_text(json.dumps(run_info(cfg, scenario, modes), indent=2) + "\n",
                                      encoding="utf-8")
    print(format_summary(ordered))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args.config)
    print(f"config ok: digest {cfg.digest[:12]}, modes {', '.join(cfg.mode_list)}")
    if args.scenario:
        sc = read_scenario(args.scenario)
        build_agents(sc, cfg)
        print(f"scenario ok: {len(sc.rows)} agents")
    return EXIT_OK


# -- sweeps ----------------------------------------------------------------------------

@dataclass
class SweepSpec:
    base: RunConfig
    axes: list[tuple[str, list]]
    seeds: list[int]
    modes: list[str]
    scenario: str | None = None
    overrides: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        n = len(self.seeds)
        for _, values in self.axes:
            n *= len(values)
        return n

    def points(self):
        """(axis values, seed) in deterministic spec order."""
        for combo in itertools.product(*[v for _, v in self.axes]):
            for seed in self.seeds:
                yield dict(zip([k for k, _ in self.axes], combo)), seed


def _split(raw: str) -> list[str]:
    return [v.strip() for v in raw.replace("\n", ",").split(",") if v.strip()]


def load_sweep(path) -> SweepSpec:
    """Sweep file grammar: ``[sweep]`` (config, scenario, modes, seeds), ``[axes]`` key = v1, v2, ...,
    and an optional ``[overrides]`` section of fixed config changes."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"sweep file not found: {path}")
    p = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    p.optionxform = str
    p.read_string(path.read_text(encoding="utf-8"), source=str(path))
    for s in p.sections():
        if s not in ("sweep", "axes", "overrides"):
            raise ConfigError(f"{path}: unknown section [{s}]")
    sw = p["sweep"] if p.has_section("sweep") else {}
    for k in sw:
        if k not in ("config", "scenario", "modes", "seeds"):
            raise ConfigError(f"{path}: unknown [sweep] key {k!r}")
    cfg_path = sw.get("config", "").strip()
    base = load_config(path.parent / cfg_path) if cfg_path else default_config()
    overrides = dict(p["overrides"]) if p.has_section("overrides") else {}
    if overrides:
        base = base.replace(**overrides)
    axes = []
    if p.has_section("axes"):
        for key, raw in p["axes"].items():
            if key not in KEYS:
                raise ConfigError(f"{path}: unknown swept key {key!r}")
            values = _split(raw)
            if not values:
                raise ConfigError(f"{path}: axis {key!r} has no values")
            # coerce now so type errors surface before any run starts
            values = [getattr(base.replace(**{key: v}), key) for v in values]
            axes.append((key, values))
    if not axes:
        raise ConfigError(f"{path}: a sweep needs at least one axis")
    seeds = [int(s) for s in _split(sw.get("seeds", str(base.seed)))]
    modes = _split(sw.get("modes", base.modes))
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"{path}: unknown mode {m!r}")
    scenario = sw.get("scenario", "").strip() or None
    if scenario:
        scenario = str(path.parent / scenario)
    return SweepSpec(base, axes, seeds, modes, scenario, overrides)


def sweep_point(base: RunConfig, values: dict, seed: int, modes, scenario_path) -> list[dict]:
    """One sweep run; failures come back as rows carrying the error text."""
    try:
        cfg = base.replace(**values, seed=seed)
        scenario = read_scenario(scenario_path) if scenario_path else generate_scenario(cfg, seed)
        results = run_modes(cfg, scenario, modes)
        rows = []
        for name in modes:
            d = summary_dict(results[name][1])
            d["config_digest"] = cfg.digest
            d["error"] = ""
            rows.append(d)
        return rows
    except Exception as exc:  # recorded per row, the sweep continues
        return [{"mode": name, "error": f"{type(exc).__name__}: {exc}"} for name in modes]


SWEEP_METRICS = ["agents", "rides", "rides_multi", "driving_agents", "lost", "total_distance_m", "total_time_s",
                 "total_co2_g", "total_fuel_cost_eur", "penalty_eur", "empty_distance_m", "avg_occupancy",
                 "pct_distance", "pct_co2", "pct_cost", "excl_lost_total_distance_m", "excl_lost_total_co2_g",
                 "excl_lost_total_fuel_cost_eur", "excl_lost_avg_occupancy", "config_digest", "error"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}" if abs(v) < 1e6 else f"{v:.1f}"
    return v


def run_sweep(spec: SweepSpec, out_dir, jobs: int = 1) -> Path:
    points = list(spec.points())
    args = [(spec.base, values, seed, spec.modes, spec.scenario) for values, seed in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(sweep_point, *zip(*args)))
        # pool.map preserves submission order, so rows stay in spec order
    else:
        results = [sweep_point(*a) for a in args]
    header = [k for k, _ in spec.axes] + ["seed", "mode"] + SWEEP_METRICS
    rows = []
    for (values, seed), res in zip(points, results):
        for r in res:
            rows.append([_cell(values[k]) for k, _ in spec.axes] + [seed, r["mode"]]
                        + [_cell(r.get(k)) for k in SWEEP_METRICS])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweepResults.csv"
    write_csv(path, header, rows)
    return path


def cmd_sweep(args) -> int:
    spec = load_sweep(args.spec)
    if args.modes:
        spec.modes = _split(args.modes)
    print(f"sweep: {spec.size} runs ({' x '.join(str(len(v)) for _, v in spec.axes)} values x "
          f"{len(spec.seeds)} seeds), modes {', '.join(spec.modes)}")
    path = run_sweep(spec, args.out or spec.base.output_dir, args.jobs)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="campusmob", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", help="synthesize a demand scenario file")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--agents", type=int, help="override n_agents")
    g.add_argument("--out", help="scenario file to write (default scenario.csv)")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="simulate modes on a scenario")
    r.add_argument("--config")
    r.add_argument("--scenario", required=True)
    r.add_argument("--modes", help="comma-separated, e.g. everybodydrives,ridesharing")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("spec", help="sweep specification file")
    s.add_argument("--modes")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a config (and optionally a scenario)")
    v.add_argument("--config")
    v.add_argument("--scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CAMPUSMOB_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        if isinstance(exc.cause, ConstraintViolationError):
            print(f"error: {exc.cause}", file=sys.stderr)
            return EXIT_VIOLATION
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except ConstraintViolationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    raise SystemExit(main())
