"""Portable on-disk frame container and in-memory dataset handling.

File layout, bit-exact: magic "IQDS", version u32 LE, header-length
u32 LE, header as UTF-8 JSON (classes, snr_grid_db, frame_length,
total_frames, counts), then one record per frame: class_index u16 LE,
snr_db i16 LE, frame_length float32 LE I samples, frame_length float32
LE Q samples.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagicError, CountError, DataError, FormatError, TruncatedError, VersionError
from .seeding import derive_seed, philox

DATASET_MAGIC = b"IQDS"
DATASET_VERSION = 1


@dataclass
class IQFrame:
    """One labeled window of complex baseband: I row, Q row, class, SNR."""

    i: np.ndarray  # float32, length == frame_length
    q: np.ndarray
    class_index: int
    snr_db: int


@dataclass
class DatasetHeader:
    frame_length: int
    classes: list[str]
    snr_grid_db: list[int]
    total_frames: int
    counts: dict[tuple[int, int], int]  # (class_index, snr_db) -> count
    version: int = DATASET_VERSION

    def validate(self) -> None:
        if len(set(self.classes)) != len(self.classes):
            raise FormatError("class names must be unique")
        if sum(self.counts.values()) != self.total_frames:
            raise CountError(
                f"total_frames {self.total_frames} != sum of counts {sum(self.counts.values())}"
            )


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction must be in (0,1), got {self.train_fraction}")


def header_from_frames(frames: list[IQFrame], classes: list[str],
                       snr_grid_db: list[int], frame_length: int) -> DatasetHeader:
    counts: dict[tuple[int, int], int] = {}
    for f in frames:
        key = (int(f.class_index), int(f.snr_db))
        counts[key] = counts.get(key, 0) + 1
    return DatasetHeader(frame_length=frame_length, classes=list(classes),
                         snr_grid_db=list(snr_grid_db), total_frames=len(frames),
                         counts=counts)


def write_dataset(header: DatasetHeader, frames: list[IQFrame], path) -> None:
    header.validate()
    recount: dict[tuple[int, int], int] = {}
    for f in frames:
        key = (int(f.class_index), int(f.snr_db))
        recount[key] = recount.get(key, 0) + 1
    if recount != header.counts or len(frames) != header.total_frames:
        raise CountError("header counts do not match the frames being written")

    blob = {
        "frame_length": header.frame_length,
        "classes": header.classes,
        "snr_grid_db": header.snr_grid_db,
        "total_frames": header.total_frames,
        "counts": [[c, s, n] for (c, s), n in sorted(header.counts.items())],
    }
    encoded = json.dumps(blob, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", header.version))
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        for f in frames:
            i = np.ascontiguousarray(f.i, dtype="<f4")
            q = np.ascontiguousarray(f.q, dtype="<f4")
            if i.shape != (header.frame_length,) or q.shape != (header.frame_length,):
                raise FormatError(
                    f"frame channels must have length {header.frame_length}, "
                    f"got {i.shape} / {q.shape}"
                )
            fh.write(struct.pack("<Hh", int(f.class_index), int(f.snr_db)))
            fh.write(i.tobytes())
            fh.write(q.tobytes())


def read_dataset(path) -> tuple[DatasetHeader, list[IQFrame]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise BadMagicError(f"not a dataset file: magic {magic!r}")
        raw = fh.read(8)
        if len(raw) != 8:
            raise TruncatedError("dataset file ends inside the fixed header")
        version, blob_len = struct.unpack("<II", raw)
        if version != DATASET_VERSION:
            raise VersionError(f"unsupported dataset version {version}")
        raw = fh.read(blob_len)
        if len(raw) != blob_len:
            raise TruncatedError("dataset file ends inside the JSON header")
        blob = json.loads(raw.decode("utf-8"))
        header = DatasetHeader(
            frame_length=int(blob["frame_length"]),
            classes=list(blob["classes"]),
            snr_grid_db=[int(s) for s in blob["snr_grid_db"]],
            total_frames=int(blob["total_frames"]),
            counts={(int(c), int(s)): int(n) for c, s, n in blob["counts"]},
            version=version,
        )
        header.validate()

        record_len = 4 + 8 * header.frame_length
        frames: list[IQFrame] = []
        for _ in range(header.total_frames):
            rec = fh.read(record_len)
            if len(rec) == 0:
                raise CountError(
                    f"header claims {header.total_frames} frames, file holds {len(frames)}"
                )
            if len(rec) != record_len:
                raise TruncatedError("dataset file ends inside a record")
            class_index, snr_db = struct.unpack_from("<Hh", rec, 0)
            if class_index >= len(header.classes):
                raise DataError(f"record class index {class_index} out of range")
            i = np.frombuffer(rec, dtype="<f4", count=header.frame_length, offset=4)
            q = np.frombuffer(rec, dtype="<f4", count=header.frame_length,
                              offset=4 + 4 * header.frame_length)
            frames.append(IQFrame(i=i.copy(), q=q.copy(),
                                  class_index=class_index, snr_db=snr_db))
        if fh.read(1):
            raise CountError("dataset file has records beyond the header count")
    return header, frames


def split(frames: list[IQFrame], spec: SplitSpec) -> tuple[list[IQFrame], list[IQFrame]]:
    """Stratified train/test partition by (class, snr), seeded.

    Each stratum lands as close to train_fraction as rounding allows;
    strata of one frame go to train.
    """
    spec.validate()
    if not frames:
        raise DataError("cannot split an empty dataset")
    strata: dict[tuple[int, int], list[int]] = {}
    for idx, f in enumerate(frames):
        strata.setdefault((int(f.class_index), int(f.snr_db)), []).append(idx)

    train_idx: list[int] = []
    test_idx: list[int] = []
    for key in sorted(strata):
        members = strata[key]
        n = len(members)
        if n == 1:
            train_idx.extend(members)
            continue
        n_train = int(round(n * spec.train_fraction))
        n_train = min(max(n_train, 1), n - 1)
        order = philox(derive_seed(spec.seed, key[0], key[1], "split")).permutation(n)
        chosen = [members[j] for j in order[:n_train]]
        rest = [members[j] for j in order[n_train:]]
        train_idx.extend(chosen)
        test_idx.extend(rest)
    train_idx.sort()
    test_idx.sort()
    return [frames[i] for i in train_idx], [frames[i] for i in test_idx]


def batches(items: list, batch_size: int, epoch_seed: int) -> list[list]:
    """Seeded shuffle into batches; the final partial batch is kept."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    order = philox(derive_seed(epoch_seed, "batches")).permutation(len(items))
    shuffled = [items[i] for i in order]
    return [shuffled[lo : lo + batch_size] for lo in range(0, len(shuffled), batch_size)]
