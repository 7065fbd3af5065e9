# -*- coding: utf-8 -*-

# Local storage for embedding files and run directories.
#
# MME embedding files are little-endian binaries laid out as:
# - 4 magic bytes: MMTS
# - u32 version (currently 1)
# - u64 n, u64 d
# - n * d IEEE-754 float32 values, row-major
# No padding and no trailing bytes are allowed.
#
# A run directory holds the outputs of one command plus exactly one
# manifest.json describing the command, its resolved configuration, its seed,
# digests of its inputs and the paths it produced.

import datetime
import hashlib
import json
import logging
import os
import struct

from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .exceptions import FormatError, StorageException, TruncationError, ValidationError


logger = logging.getLogger('mmts')

MME_MAGIC = b'MMTS'
MME_VERSION = 1
MME_HEADER = struct.Struct('<4sIQQ')
MANIFEST_NAME = 'manifest.json'


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """n row vectors of dimensionality d, one modality's representations."""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValidationError('An embedding matrix must be two-dimensional, got shape {}.'.format(data.shape))
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError('An embedding matrix needs n >= 1 and d >= 1, got shape {}.'.format(data.shape))
        bad_rows = np.flatnonzero(~np.isfinite(data).all(axis=1))
        if len(bad_rows):
            logger.error("Non-finite embedding rows: {}".format(bad_rows[:10].tolist()))
            raise ValidationError('Embedding rows {} contain NaN or Inf.'.format(bad_rows[:10].tolist()))
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d(self):
        return self.data.shape[1]


def encode_mme(matrix):
    data = np.asarray(matrix.data if isinstance(matrix, EmbeddingMatrix) else matrix)
    if data.ndim != 2:
        raise ValidationError('Only two-dimensional matrices can be stored, got shape {}.'.format(data.shape))
    n, d = data.shape
    return MME_HEADER.pack(MME_MAGIC, MME_VERSION, n, d) + np.ascontiguousarray(data, dtype='<f4').tobytes()


def decode_mme(payload, name='<memory>'):
    logger.debug("decode_mme")
    if len(payload) < MME_HEADER.size:
        raise TruncationError("The file '{}' is shorter than the MME header.".format(name))
    magic, version, n, d = MME_HEADER.unpack_from(payload)
    if magic != MME_MAGIC:
        logger.error("Bad magic {!r} in {}".format(magic, name))
        raise FormatError("The file '{}' is not an MME file (magic {!r}).".format(name, magic))
    if version != MME_VERSION:
        logger.error("Unsupported MME version {} in {}".format(version, name))
        raise FormatError("The file '{}' has unsupported MME version {}.".format(name, version))
    expected = MME_HEADER.size + 4 * n * d
    if len(payload) < expected:
        raise TruncationError(
            "The file '{}' declares {}x{} values but holds {} payload bytes.".format(
                name, n, d, len(payload) - MME_HEADER.size
            )
        )
    if len(payload) > expected:
        raise FormatError("The file '{}' has {} trailing bytes.".format(name, len(payload) - expected))
    values = np.frombuffer(payload, dtype='<f4', count=n * d, offset=MME_HEADER.size)
    return EmbeddingMatrix(values.reshape(n, d))


def load_embeddings(path):
    logger.debug("load_embeddings")
    try:
        with open(path, 'rb') as fh:
            payload = fh.read()
    except (IOError, OSError) as exc:
        logger.error("Cannot read {}: {}".format(path, exc))
        raise StorageException("Cannot read '{}': {}".format(path, exc))
    return decode_mme(payload, name=path)


def save_embeddings(path, matrix):
    logger.debug("save_embeddings")
    with open(path, 'wb') as fh:
        fh.write(encode_mme(matrix))
    return path


def file_digest(path):
    sha = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b''):
            sha.update(chunk)
    return sha.hexdigest()


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + '\n'


class RunStorage(object):
    """A directory holding the files of one run."""

    def __init__(self, location, create=False):
        logger.debug("__init__")
        self.location = os.path.abspath(location)
        if create:
            os.makedirs(self.location, exist_ok=True)
        elif not os.path.isdir(self.location):
            logger.error("Run directory {} not found".format(self.location))
            raise StorageException("The run directory '{}' has not been found.".format(self.location))

    def path(self, name):
        return os.path.join(self.location, name)

    def exists(self, name):
        return os.path.exists(self.path(name))

    def _open(self, name, mode='rb'):
        logger.debug("_open")
        try:
            return open(self.path(name), mode)
        except (IOError, OSError) as exc:
            logger.error("Error opening file {}".format(name))
            raise StorageException("Error opening file '{}': {}".format(self.path(name), exc))

    def _save(self, name, content):
        logger.debug("_save")
        if isinstance(content, str):
            content = content.encode('utf-8')
        # Written next to the target, then renamed over it.
        tmp_path = self.path(name) + '.tmp'
        with open(tmp_path, 'wb') as fh:
            fh.write(content)
        os.replace(tmp_path, self.path(name))
        return name

    def save_text(self, name, text):
        return self._save(name, text)

    def save_json(self, name, obj):
        return self._save(name, dumps_json(obj))

    def load_json(self, name):
        with self._open(name, 'rb') as fh:
            try:
                return json.loads(fh.read().decode('utf-8'))
            except ValueError as exc:
                raise FormatError("The file '{}' is not valid JSON: {}".format(self.path(name), exc))

    def save_embeddings(self, name, matrix):
        return self._save(name, encode_mme(matrix))

    def load_embeddings(self, name):
        with self._open(name, 'rb') as fh:
            return decode_mme(fh.read(), name=self.path(name))

    def digest(self, name):
        return file_digest(self.path(name))


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int = None
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = __version__
    created: str = None

    @classmethod
    def for_inputs(cls, command, config, seed, input_paths):
        inputs = {}
        for path in input_paths:
            inputs[os.path.abspath(path)] = file_digest(path)
        return cls(command=command, config=config, seed=seed, inputs=inputs)

    def to_dict(self):
        return {
            'command': self.command,
            'config': self.config,
            'seed': self.seed,
            'inputs': dict(self.inputs),
            'outputs': list(self.outputs),
            'version': self.version,
            'created': self.created,
        }

    def write(self, storage, name=MANIFEST_NAME):
        logger.debug("write manifest")
        self.created = datetime.datetime.now(datetime.timezone.utc).isoformat()
        storage.save_json(name, self.to_dict())
        return storage.path(name)

    @classmethod
    def read(cls, path):
        logger.debug("read manifest")
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                raw = json.load(fh)
        except (IOError, OSError) as exc:
            raise StorageException("Cannot read manifest '{}': {}".format(path, exc))
        except ValueError as exc:
            raise FormatError("The manifest '{}' is not valid JSON: {}".format(path, exc))
        return cls(**raw)

    def verify(self):
        """Names of inputs whose current digest differs from the recorded one."""
        mismatched = []
        for path, digest in sorted(self.inputs.items()):
            if not os.path.exists(path) or file_digest(path) != digest:
                mismatched.append(path)
        if mismatched:
            logger.warning("Manifest inputs changed since the run: {}".format(mismatched))
        return mismatched
