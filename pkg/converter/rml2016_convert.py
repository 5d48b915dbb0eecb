#!/usr/bin/env python3
"""Convert a RadioML2016.10a pickle archive into a portable IQDS dataset file.

The archive is a (Python 2) pickled mapping keyed by
(modulation name, snr_db) holding float32 arrays of shape N x 2 x 128
(I row first, then Q). The output follows the IQDS container layout:

    magic "IQDS" | version u32 LE | header-length u32 LE
    header JSON: classes, snr_grid_db, frame_length, total_frames,
                 counts as [class_index, snr_db, count] triples
    records: class_index u16 LE | snr_db i16 LE
             | 128 float32 LE I samples | 128 float32 LE Q samples

Sample values pass through as raw 32-bit words, so conversion is
lossless. Usage:

    python3 rml2016_convert.py <archive> <out> [--class-order <file>]

Exit codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import json
import pickle
import struct
import sys

import numpy as np

MAGIC = b"IQDS"
VERSION = 1
FRAME_LENGTH = 128


class ConvertError(Exception):
    pass


def _load_archive(path) -> dict:
    try:
        with open(path, "rb") as fh:
            archive = pickle.load(fh, encoding="latin1")
    except OSError as exc:
        raise ConvertError(f"cannot read archive: {exc}") from exc
    except (pickle.UnpicklingError, EOFError, AttributeError, ImportError) as exc:
        raise ConvertError(f"not a pickle archive: {exc}") from exc
    if not isinstance(archive, dict):
        raise ConvertError(f"archive must be a mapping, got {type(archive).__name__}")
    return archive


def _validate_entry(key, value) -> np.ndarray:
    if not (isinstance(key, tuple) and len(key) == 2
            and isinstance(key[0], str) and isinstance(key[1], (int, np.integer))):
        raise ConvertError(f"key {key!r} is not a (modulation, snr_db) pair")
    frames = np.asarray(value)
    if frames.ndim != 3 or frames.shape[1] != 2 or frames.shape[2] != FRAME_LENGTH:
        raise ConvertError(
            f"entry {key!r} has shape {frames.shape}, expected (N, 2, {FRAME_LENGTH})"
        )
    return frames.astype("<f4", copy=False)


def convert(archive_path, out_path, class_order: list[str] | None = None) -> dict:
    """Write the IQDS file; returns {(class, snr): count} summary."""
    archive = _load_archive(archive_path)
    if not archive:
        raise ConvertError("archive is empty")

    entries: dict[tuple[str, int], np.ndarray] = {}
    for key, value in archive.items():
        frames = _validate_entry(key, value)
        entries[(key[0], int(key[1]))] = frames

    found = sorted({mod for mod, _ in entries})
    if class_order is not None:
        unknown = sorted(set(found) - set(class_order))
        if unknown:
            raise ConvertError(f"archive classes missing from class order: {unknown}")
        classes = list(class_order)
    else:
        classes = found
    class_index = {name: i for i, name in enumerate(classes)}
    snr_grid = sorted({snr for _, snr in entries})

    counts: dict[tuple[int, int], int] = {}
    for (mod, snr), frames in entries.items():
        key = (class_index[mod], snr)
        counts[key] = counts.get(key, 0) + frames.shape[0]
    total = sum(counts.values())

    header = {
        "frame_length": FRAME_LENGTH,
        "classes": classes,
        "snr_grid_db": snr_grid,
        "total_frames": total,
        "counts": [[c, s, n] for (c, s), n in sorted(counts.items())],
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")

    with open(out_path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        for mod in classes:
            for snr in snr_grid:
                frames = entries.get((mod, snr))
                if frames is None:
                    continue
                ci = class_index[mod]
                for frame in frames:
                    fh.write(struct.pack("<Hh", ci, snr))
                    fh.write(np.ascontiguousarray(frame[0], dtype="<f4").tobytes())
                    fh.write(np.ascontiguousarray(frame[1], dtype="<f4").tobytes())

    summary = {(mod, snr): frames.shape[0] for (mod, snr), frames in sorted(entries.items())}
    return summary


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def main(argv=None) -> int:
    parser = _Parser(description="Convert a RadioML2016.10a pickle archive to IQDS")
    parser.add_argument("archive", help="pickle archive path")
    parser.add_argument("out", help="output dataset path")
    parser.add_argument("--class-order", help="file with one class name per line")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1

    order = None
    if args.class_order:
        try:
            with open(args.class_order, "r", encoding="utf-8") as fh:
                order = [line.strip() for line in fh if line.strip()]
        except OSError as exc:
            print(f"error: cannot read class order: {exc}", file=sys.stderr)
            return 2
    try:
        summary = convert(args.archive, args.out, class_order=order)
    except ConvertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for (mod, snr), n in summary.items():
        print(f"{mod} @ {snr:+d} dB: {n}")
    print(f"total: {sum(summary.values())} frames -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
