# Copyright 2024 catpose contributors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

# checkpoint.py

"""
Binary checkpoint files, all integers little-endian:

    b'PFCK' | u32 version | 32-byte sha256 of the ModelConfig
    | u32 length + JSON metadata (config echo, RNG state, cursors, Adam steps)
    | u32 tensor count
    | per tensor: u32 name length, name, u32 rank, u64 dims, f64 values
    | u32 CRC32 of everything before it

Adam moments of trainable parameters are stored as '<name>@m' and '<name>@v'.
"""

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from catpose import nncore
from catpose.errors import CorruptCheckpoint, IoError, ShapeMismatch, VersionMismatch
from catpose.model import ModelConfig, load_into

MAGIC = b'PFCK'
FORMAT_VERSION = 1
DIGEST_SIZE = 32
MOMENT_SUFFIXES = ('@m', '@v')


@dataclass
class Checkpoint:
    model_config: ModelConfig
    store: nncore.ParameterStore
    rng_state: dict = None
    phase_cursor: int = 0
    epoch_cursor: int = 0
    extra: dict = field(default_factory=dict)

    def model(self):
        return load_into(self.model_config, self.store)

    def rng(self):
        """Generator resumed from the saved bit-generator state."""
        if self.rng_state is None:
            return None
        bit_generator = getattr(np.random, self.rng_state['bit_generator'])()
        bit_generator.state = self.rng_state
        return np.random.Generator(bit_generator)


def _tensor_bytes(name, values):
    encoded = name.encode('utf-8')
    values = np.ascontiguousarray(values, dtype='<f8')
    return b''.join([
        struct.pack('<I', len(encoded)), encoded,
        struct.pack('<I', values.ndim), struct.pack(f'<{values.ndim}Q', *values.shape),
        values.tobytes(),
    ])


def encode_checkpoint(checkpoint):
    store = checkpoint.store
    meta = {
        'model_config': checkpoint.model_config.to_dict(),
        'rng_state': checkpoint.rng_state,
        'phase_cursor': checkpoint.phase_cursor,
        'epoch_cursor': checkpoint.epoch_cursor,
        'steps': {name: store.entry(name).step for name in store},
        'trainable': {name: store.entry(name).trainable for name in store},
        'extra': checkpoint.extra,
    }
    blob = json.dumps(meta, sort_keys=True).encode('utf-8')
    tensors = []
    for name in store:
        entry = store.entry(name)
        tensors.append(_tensor_bytes(name, entry.values))
        if entry.trainable:
            tensors.append(_tensor_bytes(name + '@m', entry.m))
            tensors.append(_tensor_bytes(name + '@v', entry.v))
    body = b''.join([
        MAGIC, struct.pack('<I', FORMAT_VERSION), checkpoint.model_config.digest(),
        struct.pack('<I', len(blob)), blob,
        struct.pack('<I', len(tensors)), *tensors,
    ])
    return body + struct.pack('<I', zlib.crc32(body))


def save_checkpoint(path, checkpoint):
    """Writes to a temporary sibling file, then renames it over path."""
    path = Path(path)
    tmp_path = path.with_name(path.name + '.tmp')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp_path, 'wb') as file:
            file.write(encode_checkpoint(checkpoint))
        os.replace(tmp_path, path)
    except OSError as e:
        raise IoError(f"Cannot write checkpoint {path}: {e}") from e
    return path


class _Reader:
    def __init__(self, data, offset):
        self.data = data
        self.offset = offset

    def take(self, size):
        if self.offset + size > len(self.data):
            raise CorruptCheckpoint("checkpoint ends inside a record")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data):
    if len(data) < 8 or data[:4] != MAGIC:
        raise CorruptCheckpoint("not a checkpoint file (bad magic)")
    version = struct.unpack('<I', data[4:8])[0]
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(data) < 8 + DIGEST_SIZE + 4:
        raise CorruptCheckpoint("checkpoint truncated")
    body, trailer = data[:-4], data[-4:]
    if zlib.crc32(body) != struct.unpack('<I', trailer)[0]:
        raise CorruptCheckpoint("CRC32 mismatch")

    reader = _Reader(body, 8)
    digest = reader.take(DIGEST_SIZE)
    (meta_length,) = reader.unpack('<I')
    try:
        meta = json.loads(reader.take(meta_length).decode('utf-8'))
        config = ModelConfig.from_dict(meta['model_config'])
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptCheckpoint(f"unreadable checkpoint metadata: {e}") from e
    if config.digest() != digest:
        raise CorruptCheckpoint("model config digest mismatch")

    (count,) = reader.unpack('<I')
    tensors = {}
    for _ in range(count):
        (name_length,) = reader.unpack('<I')
        name = reader.take(name_length).decode('utf-8')
        (rank,) = reader.unpack('<I')
        shape = reader.unpack(f'<{rank}Q')
        size = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(8 * size), dtype='<f8').reshape(shape)
        tensors[name] = values.astype(np.float64)
    if reader.offset != len(body):
        raise CorruptCheckpoint("trailing bytes after the last tensor")

    store = nncore.ParameterStore()
    for name, values in tensors.items():
        if name.endswith(MOMENT_SUFFIXES):
            continue
        store.add(name, values, trainable=meta['trainable'].get(name, True))
        entry = store.entry(name)
        entry.step = int(meta['steps'].get(name, 0))
        if entry.trainable:
            for suffix, target in zip(MOMENT_SUFFIXES, (entry.m, entry.v)):
                moment = tensors.get(name + suffix)
                if moment is None or moment.shape != values.shape:
                    raise CorruptCheckpoint(f"missing or misshapen Adam moment {name}{suffix}")
                target[...] = moment
    try:
        load_into(config, store)
    except ShapeMismatch as e:
        raise CorruptCheckpoint(f"tensor shapes do not match the model config: {e}") from e
    return Checkpoint(config, store, meta['rng_state'], int(meta['phase_cursor']),
                      int(meta['epoch_cursor']), meta.get('extra', {}))


def load_checkpoint(path):
    try:
        with open(path, 'rb') as file:
            data = file.read()
    except OSError as e:
        raise IoError(f"Cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(data)
