"""Command-line front end: one subcommand per pipeline stage.

Every command reads the same ``key = value`` config; flags override it.
Failures print one ``error: <code>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import acoustics, augment, conversion, corpus, embed, experiment, pipeline, synthetic

USAGE_EXIT = 2
FAIL_EXIT = 1


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = FAIL_EXIT):
        super().__init__(message)
        self.code = code
        self.status = status


# --- shared helpers -------------------------------------------------------------------

def _config(args) -> experiment.ExperimentConfig:
    if not args.config:
        raise CliError("missing_config", "--config is required", USAGE_EXIT)
    path = Path(args.config)
    if not path.is_file():
        raise CliError("missing_config", f"config file not found: {path}", USAGE_EXIT)
    cfg = experiment.load_config(path)
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out_dir is not None:
        cfg.out_dir = Path(args.out_dir)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _manifest(cfg) -> corpus.DatasetManifest:
    if cfg.manifest is None:
        raise CliError("missing_manifest", "config does not name a manifest")
    return corpus.load_manifest(cfg.manifest)


def _conversions(cfg, manifest) -> dict[str, dict[str, Path]]:
    """mode -> recording id -> converted file, with full coverage checked per mode."""
    out: dict[str, dict[str, Path]] = {}
    for path in cfg.conversions:
        cm = conversion.load_conversion_manifest(path, manifest)
        for mode in sorted(cm.modes(), key=lambda m: m.value):
            conversion.check_coverage(cm, manifest, mode)
            out.setdefault(mode.value, {}).update({p.recording_id: cm.path(p) for p in cm.for_mode(mode)})
    return out


def _load_converted(conv_paths):
    def load(rec, mode):
        return corpus.normalize_audio(corpus.read_wav(conv_paths[mode][rec.recording_id]))
    return load


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else f"{x:.4f}"


# --- commands ------------------------------------------------------------------

def cmd_ingest(args) -> None:
    cfg = _config(args)
    manifest = _manifest(cfg)
    if args.check_audio:
        for rec in manifest.recordings:
            w = corpus.load_recording(manifest, rec)
            if not corpus.check_duration(rec, w):
                raise CliError("duration_mismatch",
                               f"{rec.recording_id}: manifest says {rec.duration_s} s, audio has {w.duration_s} s")
    rows = corpus.summarize_manifest(manifest)
    _write_rows(cfg.out_dir / "summary.csv",
                ["age_group", "n_speakers", "total_seconds", "n_samples", "n_speakers_val_test"],
                [[r.age_group, r.n_speakers, f"{r.total_seconds:.2f}", r.n_samples, r.n_speakers_val_test]
                 for r in rows])
    print(corpus.format_summary(rows))


def cmd_segment(args) -> None:
    cfg = _config(args)
    manifest = _manifest(cfg)
    conv = _conversions(cfg, manifest)
    seg_dir = cfg.out_dir / "segments"
    seg_dir.mkdir(exist_ok=True)
    items = pipeline.iter_recording_segments(manifest, lambda r: corpus.load_recording(manifest, r),
                                             _load_converted(conv), sorted(conv))
    index = []
    for rec, seg in items:
        rel = f"segments/{rec.segment_id}.wav"
        corpus.write_wav(cfg.out_dir / rel, seg.waveform)
        index.append((rec, rel))
    experiment.write_segment_index(index, cfg.out_dir / "segment_index.csv")
    print(f"wrote {len(index)} segments")


def cmd_augment(args) -> None:
    cfg = _config(args)
    manifest = _manifest(cfg)
    k = args.k if args.k is not None else cfg.srfm_k
    if k < 1:
        raise CliError("bad_argument", f"--k must be >= 1, got {k}")
    aug_dir = cfg.out_dir / "srfm"

    def items():
        for rec in manifest.recordings:
            segs = corpus.segment_recording(corpus.load_recording(manifest, rec), recording_id=rec.recording_id)
            if segs:
                yield from augment.iter_sr_fm_copies(segs, k, cfg.base_seed)

    n = augment.write_augmented(items(), aug_dir)
    print(f"wrote {n} SR-FM segments for k={k}")


def cmd_validate_conversion(args) -> None:
    cfg = _config(args)
    manifest = _manifest(cfg)
    if not cfg.conversions:
        raise CliError("missing_conversions", "config names no conversion manifests")
    by_id = manifest.by_id()
    rows, pairs_by_mode = [], {}
    counts = {v: 0 for v in conversion.Verdict}
    for path in cfg.conversions:
        cm = conversion.load_conversion_manifest(path, manifest)
        for p in cm.pairs:
            orig = corpus.read_wav(manifest.audio_path(by_id[p.recording_id]))
            try:
                conv_w = corpus.read_wav(cm.path(p))
            except (OSError, ValueError) as exc:
                raise CliError("conversion_io", f"cannot decode {cm.path(p)}: {exc}") from exc
            rep = conversion.validate_converted_pair(orig, conv_w)
            counts[rep.verdict] += 1
            rows.append([p.recording_id, p.mode.value, p.target_speaker_id, rep.verdict.value,
                         int(rep.rate_ok), int(rep.channels_ok), f"{rep.duration_drift_s:.4f}",
                         _fmt(rep.mean_pitch_orig_hz), _fmt(rep.mean_pitch_conv_hz)])
            if rep.verdict is not conversion.Verdict.FAIL:
                pairs_by_mode.setdefault(p.mode.value, []).append((orig, conv_w))
    _write_rows(cfg.out_dir / "conversion_report.csv",
                ["recording_id", "mode", "target_speaker_id", "verdict", "rate_ok", "channels_ok",
                 "duration_drift_s", "mean_pitch_orig_hz", "mean_pitch_conv_hz"], rows)
    for mode, pairs in sorted(pairs_by_mode.items()):
        print(f"{mode}: mean pitch {conversion.pitch_stability_report(pairs).format()}")
    print(" ".join(f"{v.value}={n}" for v, n in counts.items()))
    if counts[conversion.Verdict.FAIL]:
        raise CliError("conversion_failed", f"{counts[conversion.Verdict.FAIL]} converted file(s) failed validation")


def cmd_embed(args) -> None:
    cfg = _config(args)
    manifest = _manifest(cfg)
    conv = _conversions(cfg, manifest)
    backend = args.backend or cfg.embedding_backend
    items = pipeline.iter_recording_segments(manifest, lambda r: corpus.load_recording(manifest, r),
                                             _load_converted(conv), sorted(conv), cfg.srfm_k, cfg.base_seed,
                                             cfg.srfm_source)
    if backend == "builtin":
        records, table = pipeline.embed_segments(items)
    elif backend == "table":
        src = args.table or cfg.embedding_table
        if src is None:
            raise CliError("missing_table", "the table backend needs --table or embedding_table in the config")
        ext = embed.load_embedding_table(src)
        records = [r for r, _ in items]
        table = embed.EmbeddingTable(ext.dim)
        missing = [r.segment_id for r in records if r.segment_id not in ext.entries]
        if missing:
            raise CliError("missing_embedding", f"{len(missing)} segment(s) have no embedding, e.g. {missing[0]}")
        for r in records:
            table.add(r.segment_id, ext.entries[r.segment_id])
    else:
        raise CliError("bad_argument", f"unknown embedding backend {backend!r}")
    experiment.write_segment_index([(r, "") for r in records], cfg.out_dir / "segment_index.csv")
    embed.write_embedding_table(table, cfg.out_dir / "embeddings.csv")
    print(f"embedded {len(records)} segments (dim {table.dim}, backend {backend})")


def _experiment_data(cfg) -> experiment.ExperimentData:
    manifest = _manifest(cfg)
    idx_path, emb_path = cfg.out_dir / "segment_index.csv", cfg.out_dir / "embeddings.csv"
    if not idx_path.exists() or not emb_path.exists():
        raise CliError("missing_embeddings", f"run `embed` first: {idx_path} or {emb_path} not found")
    records = [r for r, _ in experiment.read_segment_index(idx_path)]
    return pipeline.experiment_data(manifest, records, embed.load_embedding_table(emb_path))


def cmd_run(args) -> None:
    cfg = _config(args)
    names = args.conditions.split(",") if args.conditions else cfg.conditions
    n_runs = args.runs if args.runs is not None else cfg.n_runs
    age_name = (args.age_group or cfg.age_group).lower()
    age = None if age_name == "all" else corpus.AgeGroup(age_name)
    conds = [experiment.parse_condition(n, cfg.srfm_source) for n in names]
    data = _experiment_data(cfg).restrict(age)
    for c in conds:  # validate every condition before spending time on runs
        experiment.check_condition(c, data)
    dists = []
    for c in conds:
        d = experiment.run_many(c, data, cfg.train, n_runs, cfg.base_seed, cfg.workers)
        print(f"{age_name:>6} {c.label:<20} {d.format()}")
        dists.append(d)
    # merge with conditions from earlier invocations; rerun conditions are replaced
    runs_path = cfg.out_dir / f"runs_{age_name}.csv"
    counts_path = cfg.out_dir / f"counts_{age_name}.csv"
    fresh = {d.condition for d in dists}
    old = experiment.read_runs(runs_path) if runs_path.exists() else []
    experiment.write_runs([d for d in old if d.condition not in fresh] + dists, runs_path)
    counts = {k: v for k, v in _read_counts(counts_path).items() if k not in fresh}
    counts.update({c.name: experiment.condition_counts(c, data) for c in conds})
    _write_rows(counts_path, ["condition", "n_original", "n_converted", "n_srfm"],
                [[k, v.n_original, v.n_converted, v.n_srfm] for k, v in counts.items()])


def _read_counts(path) -> dict[str, experiment.SampleCounts]:
    if not path.exists():
        return {}
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["condition"]: experiment.SampleCounts(int(r["n_original"]), int(r["n_converted"]), int(r["n_srfm"]))
                for r in csv.DictReader(fh)}


def cmd_report(args) -> None:
    cfg = _config(args)
    run_files = sorted(cfg.out_dir.glob("runs_*.csv"))
    if not run_files:
        raise CliError("no_runs", "no run distributions found", USAGE_EXIT)
    comparisons, deltas = [], []
    for path in run_files:
        age_name = path.stem[len("runs_"):]
        age_label = "All" if age_name == "all" else corpus.AgeGroup(age_name).label
        dists = {d.condition: d for d in experiment.read_runs(path)}
        counts = _read_counts(cfg.out_dir / f"counts_{age_name}.csv")
        for name, d in dists.items():
            ref = args.against if args.against in dists and args.against != name else \
                experiment.default_reference(name, set(dists))
            if ref is None:
                continue
            comparisons.append(experiment.compare_conditions(d, dists[ref], age_label, counts.get(name)))
            if "baseline" in dists and name != "baseline":
                deltas.append(experiment.compare_conditions(d, dists["baseline"], age_label))
    experiment.write_comparisons(comparisons, cfg.out_dir / "comparisons.csv")
    experiment.write_deltas(deltas, cfg.out_dir / "deltas.csv")
    for r in comparisons:
        print(f"{r.age_group:>6} {r.test:<12} vs {r.reference:<12} p={r.p_value:.3f}{r.stars:<3} "
              f"{r.mean_test:.3f} ± {r.std_test:.3f}")


def cmd_analyze(args) -> None:
    cfg = _config(args)
    what = args.what
    if what in ("acoustics", "all"):
        manifest = _manifest(cfg)
        conv = _conversions(cfg, manifest)
        if not conv:
            raise CliError("missing_conversions", "acoustic analysis needs conversion manifests in the config")
        for mode, paths in sorted(conv.items()):
            recs = manifest.recordings[:args.max_files] if args.max_files else manifest.recordings
            rows, origs, convs = [], [], []
            for rec in recs:
                o = corpus.load_recording(manifest, rec)
                c = corpus.normalize_audio(corpus.read_wav(paths[rec.recording_id]))
                origs.append(o)
                convs.append(c)
                po, fo = acoustics.file_features(o)
                pc, fc = acoustics.file_features(c)
                rows.append([rec.recording_id, rec.age_group.value, _fmt(po), *map(_fmt, fo), _fmt(pc), *map(_fmt, fc)])
            _write_rows(cfg.out_dir / f"acoustics_{mode}.csv",
                        ["recording_id", "age_group", "pitch_orig", "f1_orig", "f2_orig", "f3_orig",
                         "pitch_conv", "f1_conv", "f2_conv", "f3_conv"], rows)
            print(f"{mode}:\n{acoustics.summarize_pairs(origs, convs).format()}")
    if what in ("projection", "all"):
        data = _experiment_data(cfg)
        keep = [r for r in data.segments if r.provenance in (corpus.Provenance.ORIGINAL, corpus.Provenance.CONVERTED)]
        if args.max_points and len(keep) > args.max_points:
            rng = np.random.default_rng(cfg.base_seed)
            keep = [keep[i] for i in sorted(rng.choice(len(keep), args.max_points, replace=False))]
        sub = embed.EmbeddingTable(data.embeddings.dim)
        for r in keep:
            sub.add(r.segment_id, data.embeddings.entries[r.segment_id])
        meta = {r.segment_id: r for r in keep}
        proj = acoustics.project_embeddings(sub, args.method, seed=cfg.base_seed)
        _write_rows(cfg.out_dir / f"projection_{args.method}.csv",
                    ["segment_id", "x", "y", "dialect", "age_group", "provenance", "conversion"],
                    [[sid, f"{x:.6f}", f"{y:.6f}", meta[sid].dialect, meta[sid].age_group.value,
                      meta[sid].provenance.value, meta[sid].conversion]
                     for sid, (x, y) in zip(proj.segment_ids, proj.coords)])
        print(f"projected {len(keep)} segments with {args.method}")


def cmd_synth(args) -> None:
    """Write a small synthetic corpus plus a ready-to-use config (no --config needed)."""
    out = Path(args.out_dir or "synthetic")
    c = synthetic.make_corpus(args.dialects, args.speakers, args.recordings, args.seconds,
                              args.seed if args.seed is not None else 0)
    synthetic.write_corpus(c, out)
    (out / "experiment.cfg").write_text(
        "manifest = manifest.csv\n"
        "conversions = conversion_rvc1.csv, conversion_rvc3.csv\n"
        "out_dir = results\n"
        "conditions = baseline, srfm1, rvc1\n"
        "n_runs = 20\n"
        "srfm_k = 1\n"
        "epochs = 100\n", encoding="utf-8")
    print(f"wrote synthetic corpus to {out}")


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value experiment config")
    common.add_argument("--seed", type=int, help="override base_seed")
    common.add_argument("--workers", type=int, help="parallel runs")
    common.add_argument("--out-dir", help="override out_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dialect-aug", description="Dialect-classification augmentation pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("ingest", parents=[common], help="validate the manifest and print the dataset summary")
    p.add_argument("--check-audio", action="store_true", help="also decode audio and check durations")
    p.set_defaults(func=cmd_ingest)
    p = sub.add_parser("segment", parents=[common], help="cut 10 s segments (originals and converted)")
    p.set_defaults(func=cmd_segment)
    p = sub.add_parser("augment", parents=[common], help="write SR-FM copies")
    p.add_argument("--k", type=int, help="number of SR-FM passes (default: srfm_k)")
    p.set_defaults(func=cmd_augment)
    p = sub.add_parser("validate-conversion", parents=[common], help="check converted files against originals")
    p.set_defaults(func=cmd_validate_conversion)
    p = sub.add_parser("embed", parents=[common], help="embed every segment the experiment needs")
    p.add_argument("--backend", choices=["builtin", "table"])
    p.add_argument("--table", help="precomputed embedding table (CSV or binary)")
    p.set_defaults(func=cmd_embed)
    p = sub.add_parser("run", parents=[common], help="repeated random-split runs per condition")
    p.add_argument("--conditions", help="comma-separated, e.g. baseline,srfm6,rvc1+srfm6")
    p.add_argument("--runs", type=int)
    p.add_argument("--age-group", choices=["all", "young", "middle", "old"])
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", parents=[common], help="comparison table and per-age deltas")
    p.add_argument("--against", help="compare every condition with this one instead of the defaults")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("analyze", parents=[common], help="pitch/formant and projection CSVs")
    p.add_argument("--what", choices=["acoustics", "projection", "all"], default="all")
    p.add_argument("--method", choices=["pca", "tsne"], default="pca")
    p.add_argument("--max-files", type=int, default=0)
    p.add_argument("--max-points", type=int, default=acoustics.TSNE_MAX_POINTS)
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic demo corpus")
    p.add_argument("--dialects", type=int, default=2)
    p.add_argument("--speakers", type=int, default=12)
    p.add_argument("--recordings", type=int, default=4)
    p.add_argument("--seconds", type=float, default=20.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code) if isinstance(exc.code, int) else USAGE_EXIT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.status
    except (corpus.CorpusError, conversion.ConversionError, embed.EmbeddingError, experiment.ExperimentError,
            acoustics.AnalysisError, augment.AugmentError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return FAIL_EXIT
    except (OSError, conversion.ConversionIOError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return FAIL_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
