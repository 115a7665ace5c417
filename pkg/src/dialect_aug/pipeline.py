"""Glue from recordings to embedded, labelled segments.

Shared by the CLI (audio on disk) and the synthetic experiments (audio in memory):
callers pass loader functions, so nothing here knows where the audio lives.
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator

from .augment import FreqMaskSpec, SegmentRemovalSpec, derive_seed, iter_sr_fm_copies
from .corpus import SEGMENT_SECONDS, DatasetManifest, Provenance, RecordingMeta, Segment, Waveform, segment_recording
from .embed import BUILTIN_DIM, EmbeddingTable, compute_builtin_embedding
from .experiment import ExperimentData, SegmentRecord


def converted_segment_id(recording_id: str, mode: str, index: int) -> str:
    return f"{recording_id}__{mode}__{index:04d}"


def converted_srfm_segment_id(recording_id: str, mode: str, pass_index: int, index: int) -> str:
    return f"{recording_id}__{mode}srfm{pass_index}__{index:04d}"


def iter_recording_segments(manifest: DatasetManifest, load_original: Callable[[RecordingMeta], Waveform],
                            load_converted: Callable[[RecordingMeta, str], Waveform] | None = None,
                            modes: Iterable[str] = (), srfm_k: int = 0, seed: int = 0,
                            srfm_source: str = "originals", seg_len_s: float = SEGMENT_SECONDS,
                            sr_spec: SegmentRemovalSpec = SegmentRemovalSpec(),
                            fm_spec: FreqMaskSpec = FreqMaskSpec()) -> Iterator[tuple[SegmentRecord, Segment]]:
    """Yield every segment the experiment can use, one recording at a time.

    Per recording: original windows, ``srfm_k`` SR-FM passes over them, then for
    each conversion mode the converted windows (and, with
    ``srfm_source="originals+converted"``, SR-FM passes over those).
    """
    modes = list(modes)
    if modes and load_converted is None:
        raise ValueError("conversion modes given without a converted-audio loader")
    for rec in manifest.recordings:
        def record(seg, prov, conversion="", pass_index=-1):
            return SegmentRecord(seg.segment_id, rec.recording_id, rec.speaker_id, rec.dialect, rec.age_group,
                                 prov, conversion, pass_index)

        orig = segment_recording(load_original(rec), seg_len_s, rec.recording_id)
        for s in orig:
            yield record(s, Provenance.ORIGINAL), s
        if srfm_k and orig:
            for a in iter_sr_fm_copies(orig, srfm_k, seed, sr_spec, fm_spec, seg_len_s):
                yield record(a.segment, Provenance.SRFM, "", a.pass_index), a.segment
        for mode in modes:
            conv = segment_recording(load_converted(rec, mode), seg_len_s, rec.recording_id, Provenance.CONVERTED)
            for s in conv:
                s.segment_id = converted_segment_id(rec.recording_id, mode, s.segment_index)
                yield record(s, Provenance.CONVERTED, mode), s
            if srfm_k and conv and srfm_source == "originals+converted":
                for a in iter_sr_fm_copies(conv, srfm_k, derive_seed(seed, mode), sr_spec, fm_spec, seg_len_s):
                    a.segment.segment_id = converted_srfm_segment_id(rec.recording_id, mode, a.pass_index,
                                                                     a.segment.segment_index)
                    yield record(a.segment, Provenance.CONVERTED_SRFM, mode, a.pass_index), a.segment


def embed_segments(items: Iterable[tuple[SegmentRecord, Segment]], embed_fn=compute_builtin_embedding,
                   dim: int = BUILTIN_DIM) -> tuple[list[SegmentRecord], EmbeddingTable]:
    """Embed a stream of segments; the audio is dropped as soon as it is embedded."""
    records = []
    table = EmbeddingTable(dim)
    for rec, seg in items:
        table.add(rec.segment_id, embed_fn(seg))
        records.append(rec)
    return records, table


def experiment_data(manifest: DatasetManifest, records: list[SegmentRecord], table: EmbeddingTable) -> ExperimentData:
    converted: dict[str, set[str]] = {}
    for r in records:
        if r.provenance is Provenance.CONVERTED:
            converted.setdefault(r.conversion, set()).add(r.recording_id)
    return ExperimentData(manifest, records, table, converted)


def synthetic_experiment_data(corpus, modes: Iterable[str] = (), srfm_k: int = 0, seed: int = 0,
                              srfm_source: str = "originals") -> ExperimentData:
    """Build ExperimentData for an in-memory synthetic corpus with the built-in embedding."""
    manifest = corpus.manifest()
    lookup = {m.recording_id: (spk, rs) for m, spk, rs in corpus.recordings()}

    def load_original(rec):
        spk, rs = lookup[rec.recording_id]
        return corpus.original(spk, rs)

    def load_converted(rec, mode):
        spk, rs = lookup[rec.recording_id]
        return corpus.converted(spk, rs, corpus.target_for(mode, spk.age_group))

    items = iter_recording_segments(manifest, load_original, load_converted, modes, srfm_k, seed, srfm_source)
    records, table = embed_segments(items)
    return experiment_data(manifest, records, table)
