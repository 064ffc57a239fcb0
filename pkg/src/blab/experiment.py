"""Replicated bandit experiments: configuration, execution and summaries.

A configuration file has three sections::

    [env]
    generator = low_rank      # low_rank | contextual | csv
    d_r = 100
    d_c = 100
    rank = 3
    factors = uniform01       # uniform01 | std_normal
    noise_sd = 0.1

    [experiment]
    horizon = 2000
    replications = 50
    master_seed = 0
    output = results          # optional; relative to the config file
    threads = 4               # optional; capped by BLAB_THREADS

    [policies]
    lrb(h=1,f=225)
    ssucb

Each replicate draws its own true matrix (except for ``csv``, whose matrix is
fixed) and its own noise stream; every policy in a replicate faces the same
matrix and the same per-round noise, so comparisons are paired.
"""

from __future__ import annotations

import csv
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .env import Environment, RegretTrace, generate_contextual, write_traces
from .errors import ConfigError
from .matrix_core import generate_low_rank, load_matrix_csv
from .policies import POLICY_PARAMS, build_policy, canonical_spec, parse_policy_spec

SUMMARY_HEADER = ["policy", "params", "mean_final_regret", "se", "ci95", "reps"]
PARTS_HEADER = ["policy", "params", "replicate", "part1", "part2", "total"]

_ENV_KEYS = {
    "low_rank": {"d_r", "d_c", "rank", "factors", "noise_sd"},
    "contextual": {"d_r", "d_c", "rank", "p", "noise_sd"},
    "csv": {"path", "rank", "noise_sd"},
}
_EXPERIMENT_KEYS = {"horizon", "replications", "master_seed", "output", "threads", "decompose"}


@dataclass
class ExperimentConfig:
    env: dict = field(default_factory=lambda: {"generator": "low_rank"})
    horizon: int = 1000
    replications: int = 1
    master_seed: int = 0
    policies: list = field(default_factory=list)
    output: str | None = None
    threads: int | None = None
    decompose: bool = False

    @property
    def generator(self):
        return self.env.get("generator", "low_rank")

    @property
    def dims(self):
        if self.generator == "csv":
            return np.shape(_csv_matrix(self.env["path"]))
        return int(self.env.get("d_r", 100)), int(self.env.get("d_c", 100))

    @property
    def rank(self):
        return int(self.env.get("rank", 3))

    @property
    def noise_sd(self):
        return float(self.env.get("noise_sd", 0.1))


# --------------------------------------------------------------------------
# parsing

def _convert(section, key, value, line):
    ints = {"d_r", "d_c", "rank", "p", "horizon", "replications", "master_seed", "threads"}
    try:
        if key in ints:
            return int(value)
        if key == "noise_sd":
            v = float(value)
            if v < 0:
                raise ValueError("must be nonnegative")
            return v
        if key == "decompose":
            if value.lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError("expected true or false")
            return value.lower() in ("true", "yes", "1")
    except ValueError as exc:
        raise ConfigError(f"bad value {value!r} ({exc})", line=line, field=key) from None
    return value


def parse_config(text, base_dir=None):
    """Parse configuration text; relative paths resolve against ``base_dir``."""
    env, exp, policies = {}, {}, []
    section = None
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("env", "experiment", "policies"):
                raise ConfigError(f"unknown section [{section}]", line=lineno)
            continue
        if section is None:
            raise ConfigError("entry before any section header", line=lineno)
        if section == "policies":
            try:
                name, params = parse_policy_spec(line)
            except ConfigError as exc:
                raise ConfigError(str(exc), line=lineno) from None
            spec = canonical_spec(name, params)
            if any(spec == s for s, _ in policies):
                raise ConfigError(f"policy {spec} listed twice", line=lineno)
            policies.append((spec, lineno))
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not value:
            raise ConfigError("empty value", line=lineno, field=key)
        target = env if section == "env" else exp
        if key in target:
            raise ConfigError("duplicate key", line=lineno, field=key)
        target[key] = _convert(section, key, value, lineno)
        lines[(section, key)] = lineno

    gen = env.setdefault("generator", "low_rank")
    if gen not in _ENV_KEYS:
        raise ConfigError(f"unknown generator {gen!r}", line=lines.get(("env", "generator")), field="generator")
    for key in env:
        if key != "generator" and key not in _ENV_KEYS[gen]:
            raise ConfigError(f"not a {gen} setting", line=lines[("env", key)], field=key)
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError("unknown experiment setting", line=lines[("experiment", key)], field=key)
    if gen == "csv":
        if "path" not in env:
            raise ConfigError("csv generator needs a path", field="path")
        if base_dir is not None:
            env["path"] = str(Path(base_dir) / env["path"])
    if not policies:
        raise ConfigError("no policies listed")

    cfg = ExperimentConfig(
        env=env,
        horizon=exp.get("horizon", 1000),
        replications=exp.get("replications", 1),
        master_seed=exp.get("master_seed", 0),
        policies=[spec for spec, _ in policies],
        output=exp.get("output"),
        threads=exp.get("threads"),
        decompose=exp.get("decompose", False),
    )
    if cfg.output is not None and base_dir is not None:
        cfg.output = str(Path(base_dir) / cfg.output)
    for key, ok in (("horizon", cfg.horizon >= 1), ("replications", cfg.replications >= 1)):
        if not ok:
            raise ConfigError("must be at least 1", line=lines.get(("experiment", key)), field=key)
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("must be at least 1", line=lines.get(("experiment", "threads")), field="threads")
    _check_policies(cfg, dict(policies))
    return cfg


def _check_policies(cfg, linenos):
    d_r, d_c = cfg.dims
    for spec in cfg.policies:
        name, params = parse_policy_spec(spec)
        if name == "oful" and cfg.generator != "contextual":
            raise ConfigError("oful needs the contextual generator", line=linenos.get(spec), field=spec)
        if name == "sslrb":
            for key in ("m", "mr", "mc"):
                if key in params:
                    limit = d_c if key == "mc" else min(d_r, d_c) if key == "m" else d_r
                    try:
                        ok = 1 <= int(params[key]) <= limit
                    except ValueError:
                        ok = False
                    if not ok:
                        raise ConfigError(f"{key}={params[key]} outside 1..{limit}", line=linenos.get(spec), field=spec)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)


def parse_grid(text):
    """Grid file: one ``key = v1, v2, ...`` line per swept policy parameter."""
    grid = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected key = v1, v2, ...", line=lineno)
        key, values = (s.strip() for s in line.split("=", 1))
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not key or not vals:
            raise ConfigError("empty key or value list", line=lineno, field=key or None)
        if key in grid:
            raise ConfigError("duplicate key", line=lineno, field=key)
        grid[key] = vals
    if not grid:
        raise ConfigError("empty grid")
    return grid


# --------------------------------------------------------------------------
# seeds and instances

def derive_seed(master, replicate, role, extra=0):
    """32-bit seed for one stream, a pure function of its coordinates."""
    ss = np.random.SeedSequence([int(master), int(replicate), int(role), int(extra)])
    return int(ss.generate_state(1)[0])


def spec_key(spec):
    return zlib.crc32(spec.encode("utf-8"))


_CSV_CACHE = {}


def _csv_matrix(path):
    if path not in _CSV_CACHE:
        try:
            _CSV_CACHE[path] = load_matrix_csv(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load reward matrix: {exc}", field="path") from None
    return _CSV_CACHE[path]


def make_instance(cfg, replicate):
    """``(truth, contextual_or_None)`` for one replicate."""
    seed = derive_seed(cfg.master_seed, replicate, 0)
    gen = cfg.generator
    if gen == "csv":
        return _csv_matrix(cfg.env["path"]), None
    d_r, d_c = cfg.dims
    if gen == "contextual":
        inst = generate_contextual(d_r, d_c, cfg.rank, int(cfg.env.get("p", 7)), cfg.noise_sd, seed)
        return inst.truth, inst
    return generate_low_rank(d_r, d_c, cfg.rank, cfg.env.get("factors", "uniform01"), seed), None


# --------------------------------------------------------------------------
# execution

def play(policy, env, horizon, label="", replicate=0):
    """Run one policy for ``horizon`` rounds and record its trace."""
    flat_truth = env.truth.ravel()
    best = env.best_value
    rows = np.empty(horizon, dtype=np.int64)
    cols = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon)
    regret = np.empty(horizon)
    forced = np.zeros(horizon, dtype=bool)
    shortfall = np.zeros(horizon)
    cand_src, cand_gap = None, 0.0
    for t in range(1, horizon + 1):
        arm, was_forced = policy.select(t)
        y = env.pull(arm, t)
        policy.update(t, arm, y, was_forced)
        i = t - 1
        rows[i], cols[i], rewards[i] = arm[0], arm[1], y
        regret[i] = best - flat_truth[arm[0] * env.shape[1] + arm[1]]
        forced[i] = was_forced
        if not was_forced:
            cand = policy.candidate_arms()
            if cand is not cand_src:
                cand_src = cand
                cand_gap = 0.0 if cand is None else best - float(flat_truth[cand].max())
            shortfall[i] = cand_gap
    return RegretTrace(label, replicate, rows, cols, rewards, regret, forced, shortfall)


def run_replicate(cfg, replicate):
    truth, contextual = make_instance(cfg, replicate)
    d_r, d_c = np.shape(truth)
    noise_seed = derive_seed(cfg.master_seed, replicate, 1)
    traces = []
    for spec in cfg.policies:
        seed = derive_seed(cfg.master_seed, replicate, 2, spec_key(spec))
        policy = build_policy(spec, d_r, d_c, cfg.horizon, seed, truth=truth,
                              contextual=contextual, default_rank=cfg.rank)
        env = Environment(truth, cfg.noise_sd, noise_seed)
        traces.append(play(policy, env, cfg.horizon, spec, replicate))
    return traces


def _run_replicate_star(args):
    return run_replicate(*args)


def worker_count(cfg, threads=None):
    """Requested parallelism, capped by ``BLAB_THREADS`` when it is set."""
    n = threads if threads is not None else cfg.threads
    if n is None:
        n = os.cpu_count() or 1
    cap = os.environ.get("BLAB_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"BLAB_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(int(n), cfg.replications))


class SummaryRow(NamedTuple):
    policy: str
    params: str
    mean_final_regret: float
    se: float
    ci95: float
    reps: int


class RegretParts(NamedTuple):
    part1: float
    part2: float

    @property
    def total(self):
        return self.part1 + self.part2


@dataclass
class RunResult:
    config: ExperimentConfig
    traces: list
    summary: list
    parts: dict | None = None


def decompose(trace):
    """Split final regret into the filtering part and the UCB part.

    Part 1 is the regret of forced rounds plus, on the other rounds, the
    amount by which the best candidate arm falls short of the overall best.
    Part 2 is what remains: the UCB subroutine's regret relative to the best
    candidate.  The parts add up to the total.
    """
    forced = np.asarray(trace.forced, dtype=bool)
    regret = np.asarray(trace.inst_regret, dtype=float)
    part1 = float(regret[forced].sum() + trace.shortfall[~forced].sum())
    return RegretParts(part1, float(regret.sum()) - part1)


def summarize(traces, specs):
    """One row per policy spec, in the order given."""
    out = []
    for spec in specs:
        finals = np.array([tr.final_regret for tr in traces if tr.policy == spec])
        n = finals.size
        se = float(finals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        name, params = parse_policy_spec(spec)
        out.append(SummaryRow(name, ",".join(f"{k}={v}" for k, v in params.items()),
                              float(finals.mean()), se, 1.96 * se, n))
    return out


def run(cfg, threads=None):
    """Play every policy on every replicate; deterministic in ``cfg`` alone."""
    workers = worker_count(cfg, threads)
    jobs = [(cfg, r) for r in range(cfg.replications)]
    if workers == 1:
        per_rep = [_run_replicate_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_run_replicate_star, jobs))
    traces = [tr for rep in per_rep for tr in rep]
    parts = None
    if cfg.decompose:
        parts = {(tr.policy, tr.replicate): decompose(tr) for tr in traces}
    result = RunResult(cfg, traces, summarize(traces, cfg.policies), parts)
    if cfg.output is not None:
        write_outputs(result, cfg.output)
    return result


def expand_grid(cfg, grid):
    """Policy specs for every grid cell, applied to each configured policy.

    A grid key only varies the policies that take it; the others run once.
    A key no configured policy takes is an error.
    """
    unused = [k for k in grid if not any(k in POLICY_PARAMS[parse_policy_spec(s)[0]] for s in cfg.policies)]
    if unused:
        raise ConfigError(f"no configured policy takes {', '.join(unused)}", field=unused[0])
    specs = []
    for spec in cfg.policies:
        name, params = parse_policy_spec(spec)
        keys = [k for k in grid if k in POLICY_PARAMS[name]]
        for values in product(*(grid[k] for k in keys)):
            cell = dict(params)
            cell.update(zip(keys, values))
            specs.append(canonical_spec(*parse_policy_spec(canonical_spec(name, cell))))
    seen, out = set(), []
    for s in specs:
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def sweep(cfg, grid, threads=None):
    """Run every grid cell with shared environments; one summary row per cell."""
    specs = expand_grid(cfg, grid)
    return run(replace(cfg, policies=specs), threads)


# --------------------------------------------------------------------------
# output

def write_summary(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in rows:
            w.writerow([r.policy, r.params, repr(r.mean_final_regret), repr(r.se), repr(r.ci95), r.reps])


def write_parts(parts, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARTS_HEADER)
        for (spec, rep), p in parts.items():
            name, params = parse_policy_spec(spec)
            w.writerow([name, ",".join(f"{k}={v}" for k, v in params.items()), rep,
                        repr(p.part1), repr(p.part2), repr(p.total)])


def write_outputs(result, outdir):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_traces(result.traces, out / "traces.csv")
    write_summary(result.summary, out / "summary.csv")
    if result.parts is not None:
        write_parts(result.parts, out / "parts.csv")
    return out
