"""Speaker-disjoint splits, condition assembly, the repeated-run harness and comparisons."""

from __future__ import annotations

import csv
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .augment import derive_seed
from .classifier import TrainConfig, predict, train
from .corpus import AgeGroup, DatasetManifest, Provenance, split_speaker_count
from .embed import EmbeddingTable
from .stats import mann_whitney_u, significance_stars, weighted_f1


class ExperimentError(RuntimeError):
    pass


class InfeasibleSplitError(ExperimentError):
    pass


# --- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    run_seed: int
    val_speakers: dict[str, tuple[str, ...]]
    test_speakers: dict[str, tuple[str, ...]]
    train_speakers: dict[str, tuple[str, ...]]

    def partition_of(self) -> dict[str, str]:
        out = {}
        for name, part in (("train", self.train_speakers), ("val", self.val_speakers), ("test", self.test_speakers)):
            for spks in part.values():
                for s in spks:
                    out[s] = name
        return out

    def speakers(self, part: str) -> set[str]:
        d = {"train": self.train_speakers, "val": self.val_speakers, "test": self.test_speakers}[part]
        return {s for spks in d.values() for s in spks}


def sample_split(manifest: DatasetManifest, run_seed: int) -> SplitAssignment:
    """Per dialect, draw ceil(S_d / 10) validation then as many test speakers; the rest train."""
    rng = np.random.default_rng(run_seed)
    val, test, tr = {}, {}, {}
    for dialect, speakers in manifest.speakers_by_dialect().items():
        k = split_speaker_count(len(speakers))
        if 2 * k >= len(speakers):
            raise InfeasibleSplitError(
                f"dialect {dialect!r}: {len(speakers)} speakers leave no training speaker after 2 x {k} held out")
        order = rng.permutation(len(speakers))
        picked = [speakers[i] for i in order]
        val[dialect] = tuple(sorted(picked[:k]))
        test[dialect] = tuple(sorted(picked[k:2 * k]))
        tr[dialect] = tuple(sorted(picked[2 * k:]))
    return SplitAssignment(run_seed, val, test, tr)


# --- segments and conditions ------------------------------------------------------

@dataclass(frozen=True)
class SegmentRecord:
    """Bookkeeping for one embedded segment; audio is not needed past the embedding step."""

    segment_id: str
    recording_id: str
    speaker_id: str
    dialect: str
    age_group: AgeGroup
    provenance: Provenance
    conversion: str = ""  # "", "rvc1" or "rvc3"
    pass_index: int = -1


SEGMENT_INDEX_FIELDS = ["segment_id", "recording_id", "speaker_id", "dialect", "age_group",
                        "provenance", "conversion", "pass_index", "path"]


def write_segment_index(records: Iterable[tuple[SegmentRecord, str]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEGMENT_INDEX_FIELDS)
        for r, p in records:
            w.writerow([r.segment_id, r.recording_id, r.speaker_id, r.dialect, r.age_group.value,
                        r.provenance.value, r.conversion, r.pass_index, p])


def read_segment_index(path) -> list[tuple[SegmentRecord, str]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SEGMENT_INDEX_FIELDS:
            raise ExperimentError(f"{path}: expected header {','.join(SEGMENT_INDEX_FIELDS)}")
        for row in reader:
            out.append((SegmentRecord(row["segment_id"], row["recording_id"], row["speaker_id"], row["dialect"],
                                      AgeGroup(row["age_group"]), Provenance(row["provenance"]),
                                      row["conversion"], int(row["pass_index"])), row["path"]))
    return out


SRFM_SOURCES = ("originals", "originals+converted")


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    use_rvc: str | None = None  # None, "rvc1" or "rvc3"
    srfm_k: int = 0
    srfm_source: str = "originals"

    def __post_init__(self):
        if self.use_rvc not in (None, "rvc1", "rvc3"):
            raise ExperimentError(f"unknown conversion mode {self.use_rvc!r}")
        if self.srfm_k < 0:
            raise ExperimentError(f"srfm_k must be >= 0, got {self.srfm_k}")
        if self.srfm_source not in SRFM_SOURCES:
            raise ExperimentError(f"srfm_source must be one of {SRFM_SOURCES}")

    @property
    def is_baseline(self) -> bool:
        return self.use_rvc is None and self.srfm_k == 0

    @property
    def label(self) -> str:
        parts = []
        if self.use_rvc:
            parts.append(self.use_rvc.upper().replace("RVC", "RVC-"))
        if self.srfm_k:
            parts.append(f"SR-FM-{self.srfm_k}")
        return " + ".join(parts) or "Baseline"


_COND_RE = re.compile(r"^(?:(rvc[13]))?(?:\+?srfm(\d+))?$")


def parse_condition(name: str, srfm_source: str = "originals") -> ConditionSpec:
    """``baseline``, ``srfm<k>``, ``rvc1``, ``rvc3`` or ``rvc<n>+srfm<k>``."""
    key = name.strip().lower().replace(" ", "").replace("-", "")
    if key == "baseline":
        return ConditionSpec("baseline")
    m = _COND_RE.match(key)
    if not key or not m or (m.group(1) is None and m.group(2) is None):
        raise ExperimentError(f"unknown condition {name!r}")
    rvc, k = m.group(1), int(m.group(2) or 0)
    canonical = "+".join(p for p in (rvc, f"srfm{k}" if k else None) if p)
    if k == 0 and m.group(2) is not None:
        canonical = rvc or "baseline"
    return ConditionSpec(canonical, rvc, k, srfm_source)


@dataclass
class ExperimentData:
    manifest: DatasetManifest
    segments: list[SegmentRecord]
    embeddings: EmbeddingTable
    converted_recordings: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        # abort before any training if an embedding is missing
        self.embeddings.matrix([s.segment_id for s in self.segments])
        self.classes = sorted(self.manifest.dialects)
        self._class_index = {d: i for i, d in enumerate(self.classes)}
        speakers = {r.speaker_id for r in self.manifest.recordings}
        self._by_speaker: dict[str, list[SegmentRecord]] = {}
        for s in self.segments:
            if s.speaker_id in speakers:
                self._by_speaker.setdefault(s.speaker_id, []).append(s)

    def restrict(self, age_group: AgeGroup | None) -> "ExperimentData":
        if age_group is None:
            return self
        sub = self.manifest.restrict(age_group)
        if not sub.recordings:
            raise ExperimentError(f"age group {age_group.value}: no dialect keeps at least 3 speakers")
        keep = {r.speaker_id for r in sub.recordings}
        return ExperimentData(sub, [s for s in self.segments if s.speaker_id in keep], self.embeddings,
                              self.converted_recordings)

    def segments_of(self, speakers: Iterable[str]) -> list[SegmentRecord]:
        return [s for spk in sorted(speakers) for s in self._by_speaker.get(spk, [])]

    def labels(self, segs: Sequence[SegmentRecord]) -> np.ndarray:
        return np.array([self._class_index[s.dialect] for s in segs], dtype=np.int64)

    def available_passes(self, conversion: str = "") -> int:
        passes = {s.pass_index for s in self.segments
                  if s.provenance in (Provenance.SRFM, Provenance.CONVERTED_SRFM) and s.conversion == conversion}
        return max(passes) + 1 if passes else 0


def _select(segs: Sequence[SegmentRecord], cond: ConditionSpec) -> list[SegmentRecord]:
    out = []
    for s in segs:
        if s.provenance is Provenance.ORIGINAL:
            out.append(s)
        elif s.provenance is Provenance.CONVERTED and cond.use_rvc and s.conversion == cond.use_rvc:
            out.append(s)
        elif s.provenance is Provenance.SRFM and s.pass_index < cond.srfm_k:
            out.append(s)
        elif (s.provenance is Provenance.CONVERTED_SRFM and cond.srfm_source == "originals+converted"
              and cond.use_rvc and s.conversion == cond.use_rvc and s.pass_index < cond.srfm_k):
            out.append(s)
    return out


def check_condition(cond: ConditionSpec, data: ExperimentData) -> None:
    """Raise unless every artifact the condition needs is present for every recording."""
    if cond.use_rvc:
        have = data.converted_recordings.get(cond.use_rvc, set())
        missing = [r.recording_id for r in data.manifest.recordings if r.recording_id not in have]
        if missing:
            raise ExperimentError(f"{cond.name}: {len(missing)} recording(s) have no {cond.use_rvc} "
                                  f"converted file, e.g. {missing[0]}")
    if cond.srfm_k:
        have = data.available_passes("")
        if have < cond.srfm_k:
            raise ExperimentError(f"{cond.name}: needs {cond.srfm_k} SR-FM passes, only {have} generated")
        if cond.srfm_source == "originals+converted" and cond.use_rvc:
            have = data.available_passes(cond.use_rvc)
            if have < cond.srfm_k:
                raise ExperimentError(f"{cond.name}: needs {cond.srfm_k} SR-FM passes over converted audio, "
                                      f"only {have} generated")


def build_training_set(cond: ConditionSpec, split: SplitAssignment, data: ExperimentData):
    """(train, val, test) segment lists.

    Train holds the originals of training speakers plus the condition's
    converted and SR-FM segments of those same speakers. Validation and test
    hold originals only.
    """
    check_condition(cond, data)
    train_segs = _select(data.segments_of(split.speakers("train")), cond)
    val = [s for s in data.segments_of(split.speakers("val")) if s.provenance is Provenance.ORIGINAL]
    test = [s for s in data.segments_of(split.speakers("test")) if s.provenance is Provenance.ORIGINAL]
    return train_segs, val, test


@dataclass(frozen=True)
class SampleCounts:
    n_original: int
    n_converted: int
    n_srfm: int

    @property
    def n_augmented(self) -> int:
        return self.n_converted + self.n_srfm


def condition_counts(cond: ConditionSpec, data: ExperimentData) -> SampleCounts:
    """Corpus-wide sample counts for a condition, converted and SR-FM kept apart."""
    sel = _select(data.segments, cond)
    n_orig = sum(s.provenance is Provenance.ORIGINAL for s in sel)
    n_conv = sum(s.provenance is Provenance.CONVERTED for s in sel)
    return SampleCounts(n_orig, n_conv, len(sel) - n_orig - n_conv)


# --- runs ---------------------------------------------------------------------

def run_seed(base_seed: int, index: int) -> int:
    return derive_seed(base_seed, "run", index)


def run_once(cond: ConditionSpec, seed: int, data: ExperimentData, config: TrainConfig) -> float:
    """Train on one split and return the test weighted F1 over segments."""
    split = sample_split(data.manifest, seed)
    tr, va, te = build_training_set(cond, split, data)
    emb = data.embeddings
    cfg = replace(config, seed=derive_seed(seed, "train"))
    result = train(cfg, emb.matrix([s.segment_id for s in tr]), data.labels(tr),
                   emb.matrix([s.segment_id for s in va]), data.labels(va), n_classes=len(data.classes))
    pred = predict(result.params, emb.matrix([s.segment_id for s in te]), config.leaky_slope)
    return weighted_f1(data.labels(te).tolist(), pred.tolist())


@dataclass
class RunDistribution:
    condition: str
    scores: list[float]
    run_indices: list[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores))

    def format(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


_worker_state: dict = {}


def _init_worker(data, config):
    _worker_state["data"] = data
    _worker_state["config"] = config


def _worker_run(args):
    cond, seed = args
    return run_once(cond, seed, _worker_state["data"], _worker_state["config"])


def run_many(cond: ConditionSpec, data: ExperimentData, config: TrainConfig, n_runs: int = 250,
             base_seed: int = 0, workers: int = 1, run_indices: Sequence[int] | None = None) -> RunDistribution:
    """Scores for runs 0..n_runs-1; run i uses split seed hash(base_seed, i).

    Conditions run with the same base seed share their splits. ``run_indices``
    only changes the execution order; results are stored by run index.
    """
    if n_runs < 1:
        raise ExperimentError("n_runs must be >= 1")
    check_condition(cond, data)
    order = list(range(n_runs)) if run_indices is None else list(run_indices)
    if sorted(order) != list(range(n_runs)):
        raise ExperimentError("run_indices must be a permutation of range(n_runs)")
    jobs = [(cond, run_seed(base_seed, i)) for i in order]
    results: dict[int, float] = {}
    if workers <= 1:
        for i, (c, s) in zip(order, jobs):
            try:
                results[i] = run_once(c, s, data, config)
            except Exception as exc:
                raise ExperimentError(f"{cond.name}: run {i} (seed {s}) failed: {exc}") from exc
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(data, config)) as ex:
            futures = {i: ex.submit(_worker_run, job) for i, job in zip(order, jobs)}
            for i, fut in futures.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    raise ExperimentError(f"{cond.name}: run {i} (seed {run_seed(base_seed, i)}) failed: {exc}") from exc
    idx = sorted(results)
    return RunDistribution(cond.name, [results[i] for i in idx], idx)


# --- comparisons and reports ----------------------------------------------------------

@dataclass
class ComparisonRow:
    test: str
    reference: str
    p_value: float
    u_statistic: float
    mean_test: float
    std_test: float
    mean_ref: float
    std_ref: float
    stars: str
    age_group: str = "All"
    counts: SampleCounts | None = None


def compare_conditions(a: RunDistribution, b: RunDistribution, age_group: str = "All",
                       counts: SampleCounts | None = None) -> ComparisonRow:
    """Two-sided Mann-Whitney U of ``a`` (tested) against ``b`` (reference)."""
    if not a.scores or not b.scores:
        raise ExperimentError("both distributions must be nonempty")
    res = mann_whitney_u(a.scores, b.scores)
    return ComparisonRow(a.condition, b.condition, res.p_value, res.u_statistic, a.mean, a.std, b.mean, b.std,
                         significance_stars(res.p_value), age_group, counts)


DEFAULT_REFERENCES = {
    "rvc1": "srfm6",
    "rvc1+srfm1": "rvc1",
    "rvc1+srfm6": "rvc1",
    "rvc3+srfm6": "rvc1+srfm6",
}


def default_reference(name: str, available: set[str]) -> str | None:
    ref = DEFAULT_REFERENCES.get(name)
    if ref in available:
        return ref
    if name != "baseline" and "baseline" in available:
        return "baseline"
    return None


RUNS_FIELDS = ["condition", "run_index", "weighted_f1"]
COMPARISON_FIELDS = ["test", "age_group", "n_original", "n_augmented_converted", "n_augmented_srfm",
                     "tested_against", "p_value_two_sided", "stars", "mean_weighted_f1", "std_weighted_f1",
                     "mean_weighted_f1_ref", "std_weighted_f1_ref", "mean_weighted_f1_fmt"]
DELTA_FIELDS = ["condition", "age_group", "delta_f1", "stars"]


def write_runs(dists: Sequence[RunDistribution], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNS_FIELDS)
        for d in dists:
            for i, s in zip(d.run_indices or range(len(d.scores)), d.scores):
                w.writerow([d.condition, i, repr(float(s))])


def read_runs(path) -> list[RunDistribution]:
    by_cond: dict[str, list[tuple[int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RUNS_FIELDS:
            raise ExperimentError(f"{path}: expected header {','.join(RUNS_FIELDS)}")
        for row in reader:
            by_cond.setdefault(row["condition"], []).append((int(row["run_index"]), float(row["weighted_f1"])))
    out = []
    for cond, rows in by_cond.items():
        rows.sort()
        out.append(RunDistribution(cond, [s for _, s in rows], [i for i, _ in rows]))
    return out


def write_comparisons(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_FIELDS)
        for r in rows:
            c = r.counts
            w.writerow([r.test, r.age_group,
                        c.n_original if c else "", c.n_converted if c else "", c.n_srfm if c else "",
                        r.reference, f"{r.p_value:.3f}", r.stars,
                        f"{r.mean_test:.6f}", f"{r.std_test:.6f}", f"{r.mean_ref:.6f}", f"{r.std_ref:.6f}",
                        f"{r.mean_test:.3f} ± {r.std_test:.3f}"])


def write_deltas(rows: Sequence[ComparisonRow], path) -> None:
    """Improvement over baseline per condition; ``rows`` must be comparisons against baseline."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DELTA_FIELDS)
        for r in rows:
            w.writerow([r.test, r.age_group, f"{r.mean_test - r.mean_ref:.6f}", r.stars])


# --- configuration --------------------------------------------------------------

@dataclass
class ExperimentConfig:
    manifest: Path | None = None
    conversions: list[Path] = field(default_factory=list)
    out_dir: Path = Path("out")
    embedding_backend: str = "builtin"
    embedding_table: Path | None = None
    conditions: list[str] = field(default_factory=lambda: ["baseline"])
    n_runs: int = 250
    base_seed: int = 0
    age_group: str = "all"
    srfm_k: int = 6
    srfm_source: str = "originals"
    workers: int = 1
    targets: dict[str, str] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def age(self) -> AgeGroup | None:
        return None if self.age_group.lower() == "all" else AgeGroup(self.age_group.lower())


_PATH_KEYS = {"manifest", "out_dir", "embedding_table"}


def parse_config_text(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    """``key = value`` lines; ``#`` starts a comment. Relative paths resolve against ``base_dir``."""
    cfg = ExperimentConfig()
    train_kwargs = {}
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    own = {f.name for f in fields(ExperimentConfig)} - {"train", "targets"}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ExperimentError(f"config line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key.startswith("target_"):
            cfg.targets[key[len("target_"):]] = value
        elif key in _PATH_KEYS:
            setattr(cfg, key, base_dir / value)
        elif key == "conversions":
            cfg.conversions = [base_dir / v.strip() for v in value.split(",") if v.strip()]
        elif key == "conditions":
            cfg.conditions = [v.strip() for v in value.split(",") if v.strip()]
        elif key in ("n_runs", "base_seed", "srfm_k", "workers"):
            setattr(cfg, key, int(value))
        elif key in own:
            setattr(cfg, key, value)
        elif key in train_fields:
            train_kwargs[key] = _coerce(value, TrainConfig.__dataclass_fields__[key].default)
        else:
            raise ExperimentError(f"config line {lineno}: unknown key {key!r}")
    cfg.train = TrainConfig(**train_kwargs)
    return cfg


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ExperimentError(f"expected a boolean, got {value!r}")
        return value.lower() in ("true", "1", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), path.parent)

