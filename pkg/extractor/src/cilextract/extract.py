"""Extraction jobs: dataset files in, one frozen-feature file out."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import KINDS, OTHER, DatasetError, read_dataset
from .encoder import EncoderError, candidate_vectors, load_encoder
from .featfile import write_feature_file

log = logging.getLogger("cilextract")


@dataclass
class ExtractionJob:
    kind: str  # events | ner | pairs
    encoder: str  # pretrained checkpoint name, or tiny[:seed[:hidden]]
    mode: str  # detection | classification
    out_path: str
    split_files: dict[str, str] = field(default_factory=dict)  # split -> path
    max_negatives: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}")
        if self.mode not in ("detection", "classification"):
            raise DatasetError(f"unknown mode {self.mode!r}")
        bad = set(self.split_files) - {"train", "dev", "test"}
        if bad or not self.split_files:
            raise DatasetError(f"split files must cover a subset of train/dev/test, got {sorted(self.split_files)}")


def run_extraction(job: ExtractionJob) -> dict:
    """Featurize every candidate and write the engine's binary format.

    Returns a summary with per-split candidate counts, the skipped-record
    count, the class inventory, and the feature dimension.
    """
    per_split = {}
    skipped = 0
    for split in ("train", "dev", "test"):
        if split not in job.split_files:
            continue
        result = read_dataset(job.split_files[split], job.kind, job.max_negatives)
        per_split[split] = result.candidates
        skipped += result.skipped

    classes = sorted({c.label for cands in per_split.values() for c in cands if c.label != OTHER})
    if not classes:
        raise DatasetError("no positive candidates found in any split")
    index = {c: i for i, c in enumerate(classes)}

    corpus_tokens = {t for cands in per_split.values() for c in cands for t in c.tokens}
    encoder = load_encoder(job.encoder, corpus_tokens)

    records = []
    dim = None
    for split, cands in per_split.items():
        feats = candidate_vectors(encoder, cands)
        if cands:
            if dim is not None and feats.shape[1] != dim:
                raise EncoderError("splits produced inconsistent feature dimensions")
            dim = feats.shape[1]
        for cand, vec in zip(cands, feats):
            records.append((f"{split}:{cand.id}", split, index.get(cand.label, -1), vec))
    if dim is None:
        raise DatasetError("no candidates to featurize")

    write_feature_file(job.out_path, job.mode, dim, classes, records)
    summary = {
        "out": job.out_path,
        "dim": dim,
        "classes": classes,
        "counts": {s: len(c) for s, c in per_split.items()},
        "skipped": skipped,
        "encoder": encoder.name,
    }
    log.info("wrote %d records (%d-d, %d classes) to %s; skipped %d",
             len(records), dim, len(classes), job.out_path, skipped)
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cil-extract",
        description="Convert an IE dataset into a frozen-feature file.",
    )
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--encoder", default="bert-large-cased",
                        help="pretrained checkpoint, or tiny[:seed[:hidden]] for an offline encoder")
    parser.add_argument("--mode", choices=("detection", "classification"), default="detection")
    parser.add_argument("--train", help="training split file")
    parser.add_argument("--dev", help="development split file")
    parser.add_argument("--test", help="test split file")
    parser.add_argument("--out", required=True)
    parser.add_argument("--max-negatives", type=int,
                        help="cap on OTHER candidates per split file")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    split_files = {s: getattr(args, s) for s in ("train", "dev", "test") if getattr(args, s)}
    try:
        job = ExtractionJob(
            kind=args.kind,
            encoder=args.encoder,
            mode=args.mode,
            out_path=args.out,
            split_files=split_files,
            max_negatives=args.max_negatives,
        )
        summary = run_extraction(job)
    except (DatasetError, EncoderError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    counts = ", ".join(f"{s}={n}" for s, n in summary["counts"].items())
    print(f"wrote {summary['out']}: dim {summary['dim']}, "
          f"{len(summary['classes'])} classes, {counts}, skipped {summary['skipped']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
