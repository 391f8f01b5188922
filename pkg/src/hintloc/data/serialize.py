"""Dataset container, generation entry point, and the on-disk format.

File layout (integers little-endian):

    magic  b"HLDS"
    u32    format version (currently 1)
    u32    header length
    bytes  header JSON: {"seed", "config", "vocab", "counts"}
    records, each: u32 record length | record JSON | raw float64 blob
    bytes  sha256 digest of everything above

Instance records carry their points as the binary blob; submap and query
records are pure JSON. Identical inputs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataFormatError
from .queries import QueryDescription, generate_queries
from .scene import ObjectInstance, generate_scene
from .submaps import Submap, slice_submaps
from .vocab import Vocabulary

MAGIC = b"HLDS"
VERSION = 1

SPLIT_TRAIN = 0
SPLIT_EVAL = 1

DEFAULT_CONFIG = {
    "extent": 100.0,
    "density": 12.0,
    "class_mix": None,
    "n_hints": 6,
    "hint_radius": 16.0,
    "train_queries": 512,
    "eval_queries": 256,
}


@dataclass
class Dataset:
    seed: int
    config: dict
    scene: list[ObjectInstance]
    submaps: list[Submap]
    train_queries: list[QueryDescription]
    eval_queries: list[QueryDescription]
    vocab: Vocabulary = field(repr=False)


def resolve_config(overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise ConfigError(f"unknown dataset config key {key!r}")
        cfg[key] = value
    return cfg


def build_dataset(seed: int, config: dict | None = None) -> Dataset:
    cfg = resolve_config(config)
    vocab = Vocabulary.default()
    scene = generate_scene(cfg["extent"], cfg["density"], seed, cfg["class_mix"])
    submaps = slice_submaps(scene, cfg["extent"])
    train = generate_queries(scene, submaps, vocab, seed, cfg["train_queries"],
                             SPLIT_TRAIN, cfg["n_hints"], cfg["hint_radius"])
    evalq = generate_queries(scene, submaps, vocab, seed, cfg["eval_queries"],
                             SPLIT_EVAL, cfg["n_hints"], cfg["hint_radius"])
    return Dataset(seed, cfg, scene, submaps, train, evalq, vocab)


def _record(obj: dict, blob: bytes = b"") -> bytes:
    body = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<II", 4 + 4 + len(body) + len(blob), len(body)) + body + blob


def save_dataset(path: str, ds: Dataset) -> None:
    header = json.dumps({
        "seed": ds.seed,
        "config": ds.config,
        "vocab": ds.vocab.tokens,
        "counts": {"instances": len(ds.scene), "submaps": len(ds.submaps),
                   "train": len(ds.train_queries), "eval": len(ds.eval_queries)},
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for inst in ds.scene:
        pts = np.ascontiguousarray(inst.points, dtype="<f8")
        chunks.append(_record({"kind": "instance", "class_id": inst.class_id,
                               "n": int(pts.shape[0])}, pts.tobytes()))
    for sm in ds.submaps:
        chunks.append(_record({"kind": "submap", "id": sm.id,
                               "center": list(sm.center),
                               "instance_ids": sm.instance_ids}))
    for split, queries in (("train", ds.train_queries), ("eval", ds.eval_queries)):
        for q in queries:
            chunks.append(_record({"kind": "query", "split": split,
                                   "hints": q.hints, "texts": q.hint_texts,
                                   "hint_instances": q.hint_instance_ids,
                                   "target": list(q.target),
                                   "gt": q.gt_submap_id}))
    body = b"".join(chunks)
    blob = body + hashlib.sha256(body).digest()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load_dataset(path: str) -> Dataset:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataFormatError(f"cannot read dataset {path}: {e}") from e
    if len(blob) < 4 + 8 + 32 or blob[:4] != MAGIC:
        raise DataFormatError(f"{path} is not a dataset file (bad magic or truncated)")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise DataFormatError(f"{path} failed its integrity check")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataFormatError(f"{path} has unsupported version {version}")
    offset = 12
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise DataFormatError(f"{path} has a malformed header: {e}") from e
    offset += header_len

    scene: list[ObjectInstance] = []
    submaps: list[Submap] = []
    queries = {"train": [], "eval": []}
    end = len(blob) - 32
    while offset < end:
        if offset + 8 > end:
            raise DataFormatError(f"{path} has a truncated record at byte {offset}")
        total, json_len = struct.unpack_from("<II", blob, offset)
        if offset + total > end:
            raise DataFormatError(f"{path} record at byte {offset} overruns the file")
        rec = json.loads(blob[offset + 8:offset + 8 + json_len].decode("utf-8"))
        payload = blob[offset + 8 + json_len:offset + total]
        kind = rec.get("kind")
        if kind == "instance":
            pts = np.frombuffer(payload, dtype="<f8").reshape(rec["n"], 6)
            scene.append(ObjectInstance(rec["class_id"], pts.astype(np.float64)))
        elif kind == "submap":
            submaps.append(Submap(rec["id"], np.array(rec["center"]),
                                  [int(i) for i in rec["instance_ids"]]))
        elif kind == "query":
            queries[rec["split"]].append(QueryDescription(
                hints=[[int(t) for t in h] for h in rec["hints"]],
                hint_texts=list(rec["texts"]),
                hint_instance_ids=[int(i) for i in rec["hint_instances"]],
                target=np.array(rec["target"]),
                gt_submap_id=int(rec["gt"]),
            ))
        else:
            raise DataFormatError(f"{path} contains unknown record kind {kind!r}")
        offset += total
    counts = header.get("counts", {})
    got = {"instances": len(scene), "submaps": len(submaps),
           "train": len(queries["train"]), "eval": len(queries["eval"])}
    if counts != got:
        raise DataFormatError(f"{path} record counts {got} disagree with header {counts}")
    return Dataset(int(header["seed"]), dict(header["config"]), scene, submaps,
                   queries["train"], queries["eval"], Vocabulary(header["vocab"]))
