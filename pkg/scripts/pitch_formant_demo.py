"""Pitch and formant drift between original and converted synthetic recordings, plus a 2-D projection.

Example:
    python3 scripts/pitch_formant_demo.py --mode rvc1 --projection-csv /tmp/projection.csv
"""

import argparse
import csv

from dialect_aug import acoustics, pipeline, synthetic
from dialect_aug.corpus import Provenance
from dialect_aug.embed import EmbeddingTable


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mode", default="rvc1", choices=["rvc1", "rvc3"])
    ap.add_argument("--speakers", type=int, default=6, help="speakers per dialect")
    ap.add_argument("--recordings", type=int, default=2, help="recordings per speaker")
    ap.add_argument("--method", default="pca", choices=["pca", "tsne"])
    ap.add_argument("--projection-csv", default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    corpus = synthetic.make_corpus(2, args.speakers, args.recordings, seed=args.seed)
    originals, converted = [], []
    for _, spk, rs in corpus.recordings():
        originals.append(corpus.original(spk, rs))
        converted.append(corpus.converted(spk, rs, corpus.target_for(args.mode, spk.age_group)))
    print(f"original vs {args.mode}, {len(originals)} recording pairs")
    print(acoustics.summarize_pairs(originals, converted).format())

    data = pipeline.synthetic_experiment_data(corpus, [args.mode], seed=args.seed)
    meta = {s.segment_id: {"provenance": s.provenance.value, "dialect": s.dialect} for s in data.segments
            if s.provenance in (Provenance.ORIGINAL, Provenance.CONVERTED)}
    table = EmbeddingTable(data.embeddings.dim)
    for sid in meta:
        table.add(sid, data.embeddings.entries[sid])
    proj = acoustics.project_embeddings(table, args.method, seed=args.seed, metadata=meta)
    for prov in ("original", "converted"):
        pts = proj.coords[[m["provenance"] == prov for m in proj.metadata]]
        print(f"{prov:<10} n={len(pts):<4} centroid=({pts[:, 0].mean():+.2f}, {pts[:, 1].mean():+.2f}) "
              f"spread={pts.std(axis=0).mean():.2f}")
    if args.projection_csv:
        with open(args.projection_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["segment_id", "x", "y", "provenance", "dialect"])
            for sid, (x, y), m in zip(proj.segment_ids, proj.coords, proj.metadata):
                w.writerow([sid, f"{x:.6f}", f"{y:.6f}", m["provenance"], m["dialect"]])


if __name__ == "__main__":
    main()
