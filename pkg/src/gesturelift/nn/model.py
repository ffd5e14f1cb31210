"""Base class tying a parameter store to its hyperparameters and bundle file."""

from __future__ import annotations

import numpy as np

from gesturelift.errors import StructuralError
from gesturelift.nn.bundle import decode_bundle, encode_bundle, load_bundle
from gesturelift.nn.params import ParamStore

BUFFER_PREFIX = "buffer."


class Model:
    """Subclasses set ``kind``, build layers in ``__init__(hp, seed)`` and keep
    non-trainable arrays in ``self.buffers``."""

    kind = "model"

    def __init__(self, hp: dict, seed: int = 0):
        self.hp = dict(hp)
        self.seed = int(seed)
        self.store = ParamStore(np.float32)
        self.buffers: dict[str, np.ndarray] = {}
        self.rng = np.random.default_rng(seed)

    @property
    def dim(self) -> int:
        return int(self.hp.get("dim", 3))

    def to_bytes(self, extra: dict | None = None) -> bytes:
        tensors = dict(self.store.state())
        tensors.update({BUFFER_PREFIX + k: v for k, v in self.buffers.items()})
        meta = {"kind": self.kind, "seed": self.seed, "hp": self.hp}
        meta.update(extra or {})
        return encode_bundle(tensors, meta)

    def save(self, path, extra=None):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(extra))

    @classmethod
    def from_tensors(cls, tensors, meta):
        if meta.get("kind") != cls.kind:
            raise StructuralError(f"bundle holds a {meta.get('kind')!r} model, expected {cls.kind!r}")
        model = cls(meta["hp"], meta.get("seed", 0))
        model.store.load({k: v for k, v in tensors.items() if not k.startswith(BUFFER_PREFIX)})
        model.buffers = {k[len(BUFFER_PREFIX):]: v for k, v in tensors.items() if k.startswith(BUFFER_PREFIX)}
        model.meta = meta
        return model

    @classmethod
    def load(cls, path):
        return cls.from_tensors(*load_bundle(path))

    @classmethod
    def from_bytes(cls, data: bytes):
        return cls.from_tensors(*decode_bundle(data))
