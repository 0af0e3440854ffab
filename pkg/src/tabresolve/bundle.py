"""Single-file bundle of everything a resolver needs.

A bundle is a zip archive with fixed timestamps holding the learned model,
the abstraction map, the value table, the blueprint, solver settings and a
manifest of SHA-256 hashes of every component.
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .abstraction import AbstractionMap
from .games import GameSpec, InfosetKey
from .model import LearnedModel
from .valuation import ValueTable

BUNDLE_VERSION = 1
_STAMP = (1980, 1, 1, 0, 0, 0)


class BundleError(ValueError):
    pass


def policy_to_json(policy: dict) -> list:
    return [[k.player, k.data.hex(), [float(x) for x in v]]
            for k, v in sorted(policy.items(), key=lambda kv: (kv[0].player, kv[0].data))]


def policy_from_json(rows: list) -> dict:
    return {InfosetKey(p, bytes.fromhex(h)): np.array(v, dtype=float) for p, h, v in rows}


@dataclass
class Bundle:
    spec: GameSpec
    amap: AbstractionMap
    model: LearnedModel
    values: ValueTable
    blueprint: tuple                      # real-game policy per player
    settings: dict = field(default_factory=dict)

    def components(self) -> dict[str, bytes]:
        return {
            "model.json.gz": self.model.to_bytes(),
            "abstraction.txt": self.amap.to_text().encode(),
            "values.json": _dumps(self.values.to_dict()),
            "blueprint.json": _dumps([policy_to_json(self.blueprint[0]),
                                      policy_to_json(self.blueprint[1])]),
            "settings.json": _dumps(self.settings),
        }

    def manifest(self) -> dict:
        return {
            "version": BUNDLE_VERSION,
            "game": str(self.spec),
            "L": self.amap.L,
            "T": self.values.T,
            "components": {name: hashlib.sha256(blob).hexdigest()
                           for name, blob in sorted(self.components().items())},
        }

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            entries = dict(self.components())
            entries["manifest.json"] = _dumps(self.manifest())
            for name in sorted(entries):
                zf.writestr(zipfile.ZipInfo(name, date_time=_STAMP), entries[name])
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Bundle":
        try:
            with zipfile.ZipFile(io.BytesIO(blob)) as zf:
                files = {name: zf.read(name) for name in zf.namelist()}
        except zipfile.BadZipFile as exc:
            raise BundleError(f"not a bundle: {exc}") from exc
        if "manifest.json" not in files:
            raise BundleError("bundle has no manifest")
        manifest = json.loads(files["manifest.json"])
        if manifest.get("version") != BUNDLE_VERSION:
            raise BundleError(f"unsupported bundle version {manifest.get('version')}")
        for name, digest in manifest["components"].items():
            if name not in files:
                raise BundleError(f"bundle is missing {name}")
            if hashlib.sha256(files[name]).hexdigest() != digest:
                raise BundleError(f"hash mismatch for {name}")
        spec = GameSpec.parse(manifest["game"])
        model = LearnedModel.from_bytes(files["model.json.gz"])
        amap = AbstractionMap.from_text(files["abstraction.txt"].decode())
        values = ValueTable.from_dict(json.loads(files["values.json"]))
        bp = json.loads(files["blueprint.json"])
        settings = json.loads(files["settings.json"])
        if model.spec != spec or model.L != amap.L:
            raise BundleError("model does not match the manifest")
        return cls(spec, amap, model, values, (policy_from_json(bp[0]), policy_from_json(bp[1])),
                   settings)

    @classmethod
    def load(cls, path) -> "Bundle":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
