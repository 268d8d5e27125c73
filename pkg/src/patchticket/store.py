"""Persistent image -> patch-mask store (`.tickets` container) with provenance."""

import io
import json
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ProvenanceError, ShapeError, TopologyViolationError
from .selector import PatchMask, SelectorConfig, select_tickets

FORMAT_VERSION = 1
MAGIC = b"TICKETS1\n"


@dataclass
class StoreManifest:
    selector_fingerprint: str
    selector_config: SelectorConfig
    dataset_id: str
    grid_side: int
    format_version: int = FORMAT_VERSION

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "selector_fingerprint": self.selector_fingerprint,
            "selector_config": self.selector_config.to_dict(),
            "dataset_id": self.dataset_id,
            "grid_side": self.grid_side,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            selector_fingerprint=d["selector_fingerprint"],
            selector_config=SelectorConfig.from_dict(d["selector_config"]),
            dataset_id=d["dataset_id"],
            grid_side=int(d["grid_side"]),
            format_version=int(d["format_version"]),
        )


@dataclass
class TicketStore:
    manifest: StoreManifest
    records: dict = field(default_factory=dict)  # image id -> PatchMask

    def put(self, image_id: str, mask: PatchMask):
        if mask.grid_side != self.manifest.grid_side:
            raise ShapeError(
                f"mask grid {mask.grid_side} != store grid {self.manifest.grid_side}"
            )
        existing = self.records.get(image_id)
        if existing is not None:
            if not np.array_equal(existing.bits, mask.bits) or existing.kept_order != mask.kept_order:
                raise TopologyViolationError(f"conflicting rewrite for id {image_id!r}")
            return self
        self.records[image_id] = mask
        return self

    def get(self, image_id: str) -> PatchMask:
        return self.records[image_id]

    def __contains__(self, image_id):
        return image_id in self.records

    def __len__(self):
        return len(self.records)

    # ---- serialization -------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        header = json.dumps(self.manifest.to_dict(), sort_keys=True).encode()
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        buf.write(struct.pack("<I", len(self.records)))
        for image_id in sorted(self.records):
            mask = self.records[image_id]
            id_bytes = image_id.encode()
            buf.write(struct.pack("<I", len(id_bytes)))
            buf.write(id_bytes)
            order = mask.kept_order or ()
            buf.write(struct.pack("<H", len(order)))
            buf.write(struct.pack(f"<{len(order)}H", *order))
            buf.write(np.packbits(mask.bits, bitorder="little").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TicketStore":
        buf = io.BytesIO(data)
        if buf.read(len(MAGIC)) != MAGIC:
            raise ProvenanceError("not a tickets container")
        (hlen,) = struct.unpack("<I", buf.read(4))
        manifest = StoreManifest.from_dict(json.loads(buf.read(hlen).decode()))
        (count,) = struct.unpack("<I", buf.read(4))
        n_bits = manifest.grid_side ** 2
        n_bytes = (n_bits + 7) // 8
        sparsity = 1.0 - manifest.selector_config.keep_rate ** manifest.selector_config.stages
        records = {}
        for _ in range(count):
            (idlen,) = struct.unpack("<I", buf.read(4))
            image_id = buf.read(idlen).decode()
            (olen,) = struct.unpack("<H", buf.read(2))
            order = struct.unpack(f"<{olen}H", buf.read(2 * olen)) if olen else None
            bits = np.unpackbits(
                np.frombuffer(buf.read(n_bytes), dtype=np.uint8), bitorder="little"
            )[:n_bits].astype(bool)
            records[image_id] = PatchMask(manifest.grid_side, bits, "ticket",
                                          sparsity, kept_order=order)
        return cls(manifest, records)

    def save(self, path):
        """Atomic publish: write a temp file, then rename over the target."""
        path = os.fspath(path)
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(self.to_bytes())
        os.replace(tmp, path)
        self._write_sidecar(path)
        return path

    def _write_sidecar(self, path):
        lines = ["ticket store manifest", "====================="]
        for k, v in self.manifest.to_dict().items():
            lines.append(f"{k}: {v}")
        lines.append(f"record_count: {len(self.records)}")
        lines.append(f"written_at: {time.strftime('%Y-%m-%dT%H:%M:%S')}")
        with open(path + ".manifest.txt", "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "TicketStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def materialize(store_path, selector, dataset, config: SelectorConfig,
                selector_fingerprint, save_every=200):
    """Fill the store with one mask per dataset image; resumable and deterministic."""
    manifest = StoreManifest(
        selector_fingerprint=selector_fingerprint,
        selector_config=config,
        dataset_id=dataset.digest,
        grid_side=selector.config.grid_side,
    )
    if os.path.exists(store_path):
        store = TicketStore.load(store_path)
        if store.manifest.selector_fingerprint != selector_fingerprint:
            raise ProvenanceError("existing store was built by a different selector")
    else:
        store = TicketStore(manifest)
    since_save = 0
    for image_id in dataset.ids:
        if image_id in store:
            continue
        image = dataset.image(image_id)
        store.put(image_id, select_tickets(selector, image, config))
        since_save += 1
        if since_save >= save_every:
            store.save(store_path)
            since_save = 0
    store.save(store_path)
    return store


def verify_fixed_topology(store: TicketStore, selector, dataset, sample_ids):
    """Recompute masks for the sample ids and report any bit mismatches."""
    sample_ids = list(sample_ids)
    mismatches = []
    for image_id in sample_ids:
        fresh = select_tickets(selector, dataset.image(image_id),
                               store.manifest.selector_config)
        if not np.array_equal(fresh.bits, store.get(image_id).bits):
            mismatches.append(image_id)
    return {
        "checked": len(sample_ids),
        "mismatches": sorted(mismatches),
        "ok": not mismatches,
    }
