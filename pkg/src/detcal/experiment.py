"""End-to-end experiment machinery behind the CLI.

Owns the experiment configuration, per-run model evaluation, the results
file formats (line-delimited records or CSV), resumable streaming writes,
and the aggregate report tables. Everything is a pure function of
(config, corpus bytes, seed): per-run filter randomness comes from a seed
stream derived from the root seed and the run's position, so results are
byte-identical regardless of worker count or interruption.
"""

from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from .baselines import ThresholdPolicy, fit_threshold, fixed_prior_infer, threshold_infer
from .core import DetectionStats, PriorConfig
from .dataset import (
    Run,
    SCHEMA_VERSION,
    corpus_header,
    inference_seed,
    read_corpus,
)
from .inference import ParticleFilterConfig, retrospective_infer, run_filter
from .metrics import (
    RunEvaluation,
    chance_accuracy,
    observation_noise,
    rolling_accuracy_by_noise,
    world_state_accuracy,
)

logger = logging.getLogger(__name__)

MODEL_ONLINE = "online"
MODEL_RETRO = "retrospective"
MODEL_THRESHOLD = "threshold"
MODEL_FIXED_PRIOR = "fixed_prior"
ALL_MODELS = (MODEL_ONLINE, MODEL_RETRO, MODEL_THRESHOLD, MODEL_FIXED_PRIOR)

FITTED_ROW = "fitted_threshold"
FITTED_HOLDOUT_ROW = "fitted_threshold_holdout"
CHANCE_ROW = "chance"

FORMATS = ("jsonl", "csv")

CSV_COLUMNS = ("run_id", "obs_index", "frame_count", "zeta", "world_state",
               "detect_counts", "online_map", "retrospective_map",
               "threshold_map", "fixed_prior_map",
               "mse_fa", "mse_miss", "mse_combined")

_NOT_RUN = "-"


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class InputError(ValueError):
    """Missing or inconsistent input data (CLI exit code 3)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a full experiment; validated before any work starts."""

    num_categories: int = 5
    beta_alpha: float = 2.0
    beta_beta: float = 10.0
    poisson_lambda: float = 1.0
    count_min: int = 1
    count_max: int = 5
    frames_min: int = 5
    frames_max: int = 15
    num_systems: int = 1000
    world_states_per_system: int = 75
    num_particles: int = 100
    proposal_sigma: float = 0.1
    rejuvenation_sweeps: int = 1
    ess_resample_threshold: float = 0.5
    enumeration_limit: int = 15
    seed: int = 0
    models: tuple = ALL_MODELS
    format: str = "jsonl"
    jobs: int = 1

    def __post_init__(self):
        try:
            self.prior()
            self.filter_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.num_categories < 1:
            raise ConfigError("num_categories must be >= 1")
        if self.count_max > self.num_categories:
            raise ConfigError(
                f"count_max {self.count_max} exceeds num_categories {self.num_categories}")
        if self.num_systems < 1:
            raise ConfigError("num_systems must be >= 1")
        if self.world_states_per_system < 1:
            raise ConfigError("world_states_per_system must be >= 1")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        unknown = [m for m in self.models if m not in ALL_MODELS]
        if unknown:
            raise ConfigError(f"unknown models {unknown}; known: {list(ALL_MODELS)}")
        if MODEL_RETRO in self.models and MODEL_ONLINE not in self.models:
            raise ConfigError("the retrospective model needs the online model's "
                              "final estimate; include 'online' in --models")

    def prior(self) -> PriorConfig:
        return PriorConfig(
            beta_alpha=self.beta_alpha, beta_beta=self.beta_beta,
            poisson_lambda=self.poisson_lambda,
            count_bounds=(self.count_min, self.count_max),
            frames_bounds=(self.frames_min, self.frames_max))

    def filter_config(self) -> ParticleFilterConfig:
        return ParticleFilterConfig(
            num_particles=self.num_particles,
            proposal_sigma=self.proposal_sigma,
            rejuvenation_sweeps_per_observation=self.rejuvenation_sweeps,
            ess_resample_threshold=self.ess_resample_threshold,
            enumeration_limit=self.enumeration_limit,
            seed=self.seed)

    def echo(self) -> dict:
        out = asdict(self)
        out["models"] = list(self.models)
        return out


# ---------------------------------------------------------------------------
# Per-run evaluation
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    """Everything one run produced, enough to rebuild every report table."""

    run_id: str
    num_categories: int
    world_states: list
    frame_counts: list
    detect_counts: list
    zeta: list
    maps: dict = field(default_factory=dict)
    v_true: list | None = None
    v_hat: list | None = None
    mse_fa: list | None = None        # length T+1; index 0 is the prior estimate
    mse_miss: list | None = None
    mse_combined: list | None = None

    @property
    def num_observations(self) -> int:
        return len(self.world_states)

    def stats(self) -> list:
        return [DetectionStats(counts=np.asarray(k), frame_count=f)
                for k, f in zip(self.detect_counts, self.frame_counts)]

    def to_record(self) -> dict:
        return {
            "record": "result",
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "num_categories": self.num_categories,
            "world_states": [sorted(w) for w in self.world_states],
            "frame_counts": list(self.frame_counts),
            "detect_counts": [list(map(int, k)) for k in self.detect_counts],
            "zeta": list(self.zeta),
            "maps": {m: [sorted(w) for w in states] for m, states in self.maps.items()},
            "v_true": self.v_true,
            "v_hat": self.v_hat,
            "mse_fa": self.mse_fa,
            "mse_miss": self.mse_miss,
            "mse_combined": self.mse_combined,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RunResult":
        return cls(
            run_id=rec["run_id"],
            num_categories=rec["num_categories"],
            world_states=[frozenset(w) for w in rec["world_states"]],
            frame_counts=list(rec["frame_counts"]),
            detect_counts=[list(k) for k in rec["detect_counts"]],
            zeta=list(rec["zeta"]),
            maps={m: [frozenset(w) for w in states]
                  for m, states in rec["maps"].items()},
            v_true=rec.get("v_true"),
            v_hat=rec.get("v_hat"),
            mse_fa=rec.get("mse_fa"),
            mse_miss=rec.get("mse_miss"),
            mse_combined=rec.get("mse_combined"),
        )

    def evaluation(self, models) -> RunEvaluation:
        accuracy = {}
        for m in models:
            states = self.maps[m]
            accuracy[m] = [world_state_accuracy(w, s)
                           for w, s in zip(self.world_states, states)]
        return RunEvaluation(run_id=self.run_id, zeta=list(self.zeta),
                             accuracy=accuracy, mse_fa=self.mse_fa,
                             mse_miss=self.mse_miss, mse_combined=self.mse_combined)


def evaluate_run(run: Run, config: ExperimentConfig, run_index: int) -> RunResult:
    """Run the selected models over one run's observations."""
    prior = config.prior()
    c = config.num_categories
    stats = [DetectionStats.from_observation(o, c) for o in run.observations]
    zeta = [observation_noise(w, s, c) for w, s in zip(run.world_states, stats)]
    result = RunResult(
        run_id=run.run_id,
        num_categories=c,
        world_states=list(run.world_states),
        frame_counts=[s.frame_count for s in stats],
        detect_counts=[s.counts.tolist() for s in stats],
        zeta=zeta,
        v_true=run.v_true.as_flat().tolist(),
    )

    if MODEL_ONLINE in config.models:
        rng = np.random.default_rng(inference_seed(config.seed, run_index))
        trace = run_filter(stats, config.filter_config(), prior, c,
                           v_true=run.v_true, true_states=run.world_states, rng=rng)
        result.maps[MODEL_ONLINE] = list(trace.map_states)
        v_hat = trace.final_estimate
        result.v_hat = v_hat.as_flat().tolist()
        result.mse_combined = [trace.initial_mse[0]] + [m[0] for m in trace.mse]
        result.mse_fa = [trace.initial_mse[1]] + [m[1] for m in trace.mse]
        result.mse_miss = [trace.initial_mse[2]] + [m[2] for m in trace.mse]
        if MODEL_RETRO in config.models:
            result.maps[MODEL_RETRO] = retrospective_infer(v_hat, stats, prior, c)
    if MODEL_THRESHOLD in config.models:
        policy = ThresholdPolicy()
        result.maps[MODEL_THRESHOLD] = [threshold_infer(s, policy) for s in stats]
    if MODEL_FIXED_PRIOR in config.models:
        result.maps[MODEL_FIXED_PRIOR] = fixed_prior_infer(stats, prior, c)
    return result


# ---------------------------------------------------------------------------
# Results files
# ---------------------------------------------------------------------------

def _encode_set(s) -> str:
    return "|".join(str(c) for c in sorted(s))

def _decode_set(text: str):
    return frozenset(int(c) for c in text.split("|")) if text else frozenset()

def _encode_counts(counts) -> str:
    return "|".join(str(int(c)) for c in counts)


def result_chunk(result: RunResult, fmt: str) -> str:
    """Serialize one run's results as the exact bytes appended to the file."""
    if fmt == "jsonl":
        return json.dumps(result.to_record(), separators=(",", ":")) + "\n"
    rows = []
    if result.mse_fa is not None:
        rows.append([result.run_id, "0", "", "", _NOT_RUN, _NOT_RUN,
                     _NOT_RUN, _NOT_RUN, _NOT_RUN, _NOT_RUN,
                     repr(result.mse_fa[0]), repr(result.mse_miss[0]),
                     repr(result.mse_combined[0])])
    for t in range(result.num_observations):
        def map_cell(model):
            if model not in result.maps:
                return _NOT_RUN
            return _encode_set(result.maps[model][t])
        rows.append([
            result.run_id, str(t + 1), str(result.frame_counts[t]),
            repr(result.zeta[t]), _encode_set(result.world_states[t]),
            _encode_counts(result.detect_counts[t]),
            map_cell(MODEL_ONLINE), map_cell(MODEL_RETRO),
            map_cell(MODEL_THRESHOLD), map_cell(MODEL_FIXED_PRIOR),
            repr(result.mse_fa[t + 1]) if result.mse_fa is not None else "",
            repr(result.mse_miss[t + 1]) if result.mse_miss is not None else "",
            repr(result.mse_combined[t + 1]) if result.mse_combined is not None else "",
        ])
    return "".join(",".join(row) + "\n" for row in rows)


def _result_from_csv_rows(rows: list) -> RunResult:
    col = {name: i for i, name in enumerate(CSV_COLUMNS)}
    obs_rows = [r for r in rows if r[col["obs_index"]] != "0"]
    prior_rows = [r for r in rows if r[col["obs_index"]] == "0"]
    if not obs_rows:
        raise InputError("results CSV run block has no observation rows")
    counts0 = obs_rows[0][col["detect_counts"]].split("|")
    result = RunResult(
        run_id=obs_rows[0][col["run_id"]],
        num_categories=len(counts0),
        world_states=[_decode_set(r[col["world_state"]]) for r in obs_rows],
        frame_counts=[int(r[col["frame_count"]]) for r in obs_rows],
        detect_counts=[[int(x) for x in r[col["detect_counts"]].split("|")]
                       for r in obs_rows],
        zeta=[float(r[col["zeta"]]) for r in obs_rows],
    )
    for model, name in ((MODEL_ONLINE, "online_map"), (MODEL_RETRO, "retrospective_map"),
                        (MODEL_THRESHOLD, "threshold_map"),
                        (MODEL_FIXED_PRIOR, "fixed_prior_map")):
        cells = [r[col[name]] for r in obs_rows]
        if cells[0] != _NOT_RUN:
            result.maps[model] = [_decode_set(c) for c in cells]
    if prior_rows and obs_rows[0][col["mse_fa"]]:
        head = prior_rows[0]
        result.mse_fa = [float(head[col["mse_fa"]])] + \
            [float(r[col["mse_fa"]]) for r in obs_rows]
        result.mse_miss = [float(head[col["mse_miss"]])] + \
            [float(r[col["mse_miss"]]) for r in obs_rows]
        result.mse_combined = [float(head[col["mse_combined"]])] + \
            [float(r[col["mse_combined"]]) for r in obs_rows]
    return result


def read_results(path):
    """Yield RunResult records from a results file in either format."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise InputError(f"{path}: results file is empty")
        is_csv = first.startswith("run_id,")
        if not is_csv:
            for lineno, line in enumerate([first] + fh.readlines(), start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    if rec.get("record") != "result":
                        raise ValueError(f"unexpected record {rec.get('record')!r}")
                    yield RunResult.from_record(rec)
                except (ValueError, KeyError, TypeError) as exc:
                    raise InputError(f"{path} line {lineno}: bad result record ({exc})") from exc
            return
        block: list = []
        block_id = None
        for line in fh:
            if not line.strip():
                continue
            row = line.rstrip("\n").split(",")
            if len(row) != len(CSV_COLUMNS):
                raise InputError(f"{path}: malformed results row {row[:2]}")
            if block and row[0] != block_id:
                yield _result_from_csv_rows(block)
                block = []
            block_id = row[0]
            block.append(row)
        if block:
            yield _result_from_csv_rows(block)


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.json")


def write_manifest(path, payload: dict) -> None:
    with open(_manifest_path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict | None:
    mpath = _manifest_path(path)
    if not mpath.exists():
        return None
    with open(mpath, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Commands (the CLI wraps these)
# ---------------------------------------------------------------------------

def synth_command(config: ExperimentConfig, out_path) -> None:
    """Write a corpus file plus its manifest (config echo and checksum)."""
    from .dataset import write_corpus

    out_path = Path(out_path)
    write_corpus(out_path, config.prior(), config.num_categories,
                 config.num_systems, config.seed,
                 config.world_states_per_system)
    write_manifest(out_path, {
        "kind": "corpus",
        "schema_version": SCHEMA_VERSION,
        "config": config.echo(),
        "header": corpus_header(config.prior(), config.num_categories,
                                config.num_systems, config.world_states_per_system,
                                config.seed),
        "sha256": sha256_of(out_path),
    })


def _iter_corpus_lines(path):
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            if line.strip():
                yield line


_worker_config: ExperimentConfig | None = None


def _worker_init(config: ExperimentConfig) -> None:
    global _worker_config
    _worker_config = config


def _worker_evaluate(task):
    """(chunk, None) on success; (None, reason) for a corrupted record."""
    index, line = task
    try:
        rec = json.loads(line)
        if rec.get("record") != "run":
            raise ValueError(f"unexpected record type {rec.get('record')!r}")
        run = Run.from_record(rec)
    except (ValueError, KeyError, TypeError) as exc:
        return None, f"corpus record at position {index}: {exc}"
    result = evaluate_run(run, _worker_config, index)
    return result_chunk(result, _worker_config.format), None


def _rows_per_run(config: ExperimentConfig) -> int:
    return config.world_states_per_system + (1 if MODEL_ONLINE in config.models else 0)


def _complete_prefix(path: Path, fmt: str, rows_per_run: int):
    """(fully written runs, byte offset after them, last written run_id)."""
    runs = 0
    good_offset = 0
    offset = 0
    pending_rows = 0
    last_run_id = None
    first = True
    with open(path, "rb") as fh:
        for raw in fh:
            if not raw.endswith(b"\n"):
                break
            if fmt == "csv" and first:
                first = False
                if not raw.startswith(b"run_id,"):
                    break
                offset += len(raw)
                good_offset = offset
                continue
            if fmt == "jsonl":
                try:
                    rec = json.loads(raw)
                except json.JSONDecodeError:
                    break
                if rec.get("record") != "result":
                    break
                offset += len(raw)
                runs += 1
                good_offset = offset
                last_run_id = rec.get("run_id")
            else:
                offset += len(raw)
                pending_rows += 1
                if pending_rows == rows_per_run:
                    runs += 1
                    pending_rows = 0
                    good_offset = offset
                    last_run_id = raw.split(b",", 1)[0].decode("utf-8")
    return runs, good_offset, last_run_id


def _position_after(corpus_path, run_id: str | None) -> int:
    """Corpus position right after the given run_id (0 when None)."""
    if run_id is None:
        return 0
    for index, line in enumerate(_iter_corpus_lines(corpus_path)):
        try:
            if json.loads(line).get("run_id") == run_id:
                return index + 1
        except json.JSONDecodeError:
            continue
    raise InputError(
        f"results end at run_id {run_id!r}, which the corpus does not contain")


def run_command(config: ExperimentConfig, corpus_path, out_path):
    """Evaluate every corpus run, streaming results; resumes after a crash.

    Returns (runs computed in this invocation, corrupted records skipped).
    Workers own a seed derived from (config seed, corpus position), and the
    single writer appends chunks in corpus order, so output bytes do not
    depend on the worker count. A rerun keeps fully written runs and
    continues after the last one; corrupted corpus records are skipped with
    their position logged.
    """
    corpus_path = Path(corpus_path)
    out_path = Path(out_path)
    if not corpus_path.exists():
        raise InputError(f"corpus file not found: {corpus_path}")
    corpus = read_corpus(corpus_path)
    if corpus.num_categories != config.num_categories:
        raise InputError(
            f"corpus has {corpus.num_categories} categories, config says "
            f"{config.num_categories}")

    manifest = {
        "kind": "results",
        "schema_version": SCHEMA_VERSION,
        "config": config.echo(),
        "corpus": corpus_path.name,
        "corpus_sha256": sha256_of(corpus_path),
        "format": config.format,
        "models": list(config.models),
    }
    done = 0
    offset = 0
    start = 0
    previous = read_manifest(out_path)
    if out_path.exists() and previous is not None:
        if previous != manifest:
            raise InputError(
                f"{out_path} was produced with a different config or corpus; "
                "remove it or pick another --out to start fresh")
        done, offset, last_run_id = _complete_prefix(out_path, config.format,
                                                     _rows_per_run(config))
        start = _position_after(corpus_path, last_run_id)
        logger.info("resuming: %d runs already complete", done)
    write_manifest(out_path, manifest)

    tasks = ((i, line) for i, line in enumerate(_iter_corpus_lines(corpus_path))
             if i >= start)
    mode = "r+b" if out_path.exists() else "wb"
    computed = 0
    skipped = 0
    with open(out_path, mode) as fh:
        if mode == "r+b":
            fh.truncate(offset)
            fh.seek(offset)
        if config.format == "csv" and offset == 0:
            fh.write((",".join(CSV_COLUMNS) + "\n").encode("utf-8"))

        def write_all(outcomes):
            nonlocal computed, skipped
            for chunk, error in outcomes:
                if error is not None:
                    skipped += 1
                    logger.error("skipping %s", error)
                    continue
                fh.write(chunk.encode("utf-8"))
                computed += 1
                if computed % 100 == 0:
                    fh.flush()
                    logger.info("completed %d runs", done + computed)

        if config.jobs == 1:
            _worker_init(config)
            write_all(_worker_evaluate(t) for t in tasks)
        else:
            ctx = multiprocessing.get_context()
            with ctx.Pool(config.jobs, initializer=_worker_init,
                          initargs=(config,)) as pool:
                write_all(pool.imap(_worker_evaluate, tasks, chunksize=1))
    if skipped:
        logger.error("%d corrupted corpus record(s) were skipped", skipped)
    return computed, skipped


def ingest_command(config: ExperimentConfig, percepts_path, vocabulary,
                   out_path) -> None:
    """Filter externally logged percepts and emit corrected inferences.

    Runs the online filter over the ingested observations, then re-infers
    every world state under the final rate estimate; each output row holds
    the online and retrospective MAP states plus the posterior mass of the
    retrospective one.
    """
    from .dataset import ingest_percept_groups

    out_path = Path(out_path)
    if not Path(percepts_path).exists():
        raise InputError(f"percept file not found: {percepts_path}")
    groups = ingest_percept_groups(percepts_path, vocabulary)
    c = len(vocabulary)
    if c != config.num_categories:
        config = replace(config, num_categories=c,
                         count_max=min(config.count_max, c))
    prior = config.prior()
    stats = [DetectionStats.from_observation(obs, c) for _, obs in groups]
    rng = np.random.default_rng(inference_seed(config.seed, 0))
    trace = run_filter(stats, config.filter_config(), prior, c, rng=rng)
    v_hat = trace.final_estimate
    from .inference import retrospective_map_with_mass
    retro = retrospective_map_with_mass(v_hat, stats, prior, c)

    write_manifest(out_path, {
        "kind": "inferences",
        "schema_version": SCHEMA_VERSION,
        "config": config.echo(),
        "vocabulary": list(vocabulary),
        "v_hat": v_hat.as_flat().tolist(),
    })
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        if config.format == "csv":
            fh.write("obs_index,observation_id,online_map,retrospective_map,"
                     "retrospective_map_mass\n")
            for t, (obs_id, _) in enumerate(groups):
                state, mass = retro[t]
                fh.write(",".join([
                    str(t + 1), obs_id,
                    _encode_set(trace.map_states[t]), _encode_set(state),
                    repr(mass)]) + "\n")
        else:
            head = {"record": "inferences", "schema_version": SCHEMA_VERSION,
                    "v_hat": v_hat.as_flat().tolist(),
                    "vocabulary": list(vocabulary)}
            fh.write(json.dumps(head, separators=(",", ":")) + "\n")
            for t, (obs_id, _) in enumerate(groups):
                state, mass = retro[t]
                rec = {"record": "inference", "obs_index": t + 1,
                       "observation_id": obs_id,
                       "online_map": sorted(trace.map_states[t]),
                       "retrospective_map": sorted(state),
                       "retrospective_map_mass": mass}
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_table(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def report_command(results_paths, out_dir, models=None,
                   error_map_run: str | None = None,
                   prior: PriorConfig | None = None) -> dict:
    """Aggregate results into the four report tables plus a summary.

    Tables: estimate MSE by observation index (row 0 is the prior
    baseline), accuracy by observation index per model, rolling accuracy by
    observation noise per model, and the retrospective-minus-threshold
    accuracy gap by noise. The summary adds overall accuracies, the fitted
    threshold (same-corpus and a half-split holdout) and the analytic
    chance accuracy. Returns {table name: path}.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for path in results_paths:
        path = Path(path)
        if not path.exists():
            raise InputError(f"results file not found: {path}")
        if prior is None:
            manifest = read_manifest(path)
            if manifest is not None:
                cfg = manifest.get("config", {})
                prior = PriorConfig(
                    beta_alpha=cfg.get("beta_alpha", 2.0),
                    beta_beta=cfg.get("beta_beta", 10.0),
                    poisson_lambda=cfg.get("poisson_lambda", 1.0),
                    count_bounds=(cfg.get("count_min", 1), cfg.get("count_max", 5)),
                    frames_bounds=(cfg.get("frames_min", 5), cfg.get("frames_max", 15)))
        results.extend(read_results(path))
    if not results:
        raise InputError("no run results found in the given files")
    # aggregation must not depend on input order (float sums, holdout split)
    results.sort(key=lambda r: r.run_id)
    if prior is None:
        prior = PriorConfig()

    present = [m for m in ALL_MODELS if all(m in r.maps for r in results)]
    if models is None:
        models = present
    missing = [m for m in models if m not in present]
    if missing:
        raise InputError(f"results are missing model columns: {missing}")

    evaluations = [r.evaluation(models) for r in results]
    paths = {}

    # A: estimate error by observation index (row 0 = prior baseline)
    with_mse = [r for r in results if r.mse_fa is not None]
    if MODEL_ONLINE in models and with_mse:
        depth = max(len(r.mse_fa) for r in with_mse)
        rows = []
        for t in range(depth):
            fa = [r.mse_fa[t] for r in with_mse if len(r.mse_fa) > t]
            miss = [r.mse_miss[t] for r in with_mse if len(r.mse_miss) > t]
            comb = [r.mse_combined[t] for r in with_mse if len(r.mse_combined) > t]
            rows.append([t, float(np.mean(fa)), float(np.mean(miss)),
                         float(np.mean(comb)), len(fa)])
        paths["mse_by_observation"] = out_dir / "mse_by_observation.csv"
        _write_table(paths["mse_by_observation"],
                     ["observation_index", "mse_fa", "mse_miss", "mse_combined",
                      "run_count"], rows)

    # B: accuracy by observation index
    if not models:
        raise InputError("no models present in the results to aggregate")
    depth = max(len(e.accuracy[models[0]]) for e in evaluations)
    rows = []
    for t in range(depth):
        row = [t + 1]
        n = 0
        for m in models:
            bits = [e.accuracy[m][t] for e in evaluations
                    if len(e.accuracy[m]) > t]
            row.append(float(np.mean(bits)))
            n = len(bits)
        rows.append(row + [n])
    paths["accuracy_by_observation"] = out_dir / "accuracy_by_observation.csv"
    _write_table(paths["accuracy_by_observation"],
                 ["observation_index"] + list(models) + ["run_count"], rows)

    # C: rolling accuracy by noise
    points = rolling_accuracy_by_noise(evaluations)
    paths["accuracy_by_noise"] = out_dir / "accuracy_by_noise.csv"
    _write_table(paths["accuracy_by_noise"],
                 ["zeta"] + list(models) + ["observation_count"],
                 [[p.zeta] + [p.accuracy[m] for m in models] + [p.count]
                  for p in points])

    # D: retrospective-minus-threshold gap by noise
    if MODEL_RETRO in models and MODEL_THRESHOLD in models:
        paths["noise_gap"] = out_dir / "noise_gap.csv"
        _write_table(paths["noise_gap"],
                     ["zeta", "accuracy_gap", "observation_count"],
                     [[p.zeta, p.accuracy[MODEL_RETRO] - p.accuracy[MODEL_THRESHOLD],
                       p.count] for p in points])

    # summary: overall accuracies, fitted thresholds, chance
    rows = []
    total_obs = sum(r.num_observations for r in results)
    for m in models:
        bits = np.concatenate([np.asarray(e.accuracy[m]) for e in evaluations])
        theta = ThresholdPolicy().theta if m == MODEL_THRESHOLD else ""
        rows.append([m, float(bits.mean()), theta, total_obs])

    all_stats = [s for r in results for s in r.stats()]
    all_truth = [w for r in results for w in r.world_states]
    theta, acc = fit_threshold(all_stats, all_truth)
    rows.append([FITTED_ROW, acc, theta, total_obs])
    half = max(1, len(results) // 2)
    if len(results) >= 2:
        fit_stats = [s for r in results[:half] for s in r.stats()]
        fit_truth = [w for r in results[:half] for w in r.world_states]
        theta_h, _ = fit_threshold(fit_stats, fit_truth)
        eval_stats = [s for r in results[half:] for s in r.stats()]
        eval_truth = [w for r in results[half:] for w in r.world_states]
        policy = ThresholdPolicy(theta=theta_h)
        bits = [world_state_accuracy(w, threshold_infer(s, policy))
                for s, w in zip(eval_stats, eval_truth)]
        rows.append([FITTED_HOLDOUT_ROW, float(np.mean(bits)), theta_h, len(bits)])
    lo, hi = prior.count_bounds
    rows.append([CHANCE_ROW,
                 chance_accuracy(results[0].num_categories,
                                 prior.poisson_lambda, (lo, hi)), "", ""])
    paths["summary"] = out_dir / "summary.csv"
    _write_table(paths["summary"], ["model", "accuracy", "theta", "n_observations"],
                 rows)

    if error_map_run is not None:
        match = [r for r in results if r.run_id == error_map_run]
        if not match:
            raise InputError(f"run_id {error_map_run!r} not found in results")
        paths["error_map"] = out_dir / f"error_map_{error_map_run}.csv"
        _write_table(paths["error_map"],
                     ["model", "observation_index", "category", "status"],
                     _error_map_rows(match[0], models))
    return paths


def _error_map_rows(result: RunResult, models) -> list:
    rows = []
    for m in models:
        for t, (truth, guess) in enumerate(zip(result.world_states, result.maps[m])):
            for cat in range(result.num_categories):
                if cat in truth:
                    status = "correct" if cat in guess else "missed"
                else:
                    status = "false_alarm" if cat in guess else "correct"
                rows.append([m, t + 1, cat, status])
    return rows
