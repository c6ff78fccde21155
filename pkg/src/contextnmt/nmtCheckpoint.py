__doc__ = """
Checkpoint files.

A checkpoint is a small binary container:

| bytes | content                                              |
|-------|------------------------------------------------------|
| 16    | signature                                            |
| 4     | format version (u32)                                 |
| 4     | number of entries (i32)                              |
| 8     | update counter (u64)                                 |
| 24·n  | entry table: type, format (u32), offset, size (u64)  |
| ...   | sections, in entry order                             |

Array sections (parameters and the two optimizer moments) hold named arrays:
a 128 byte null padded name, the number of dimensions, the shape (u32 each)
and the values as little-endian 32 bit floats in row-major order. The config
snapshot section is length-prefixed YAML text.

```python
from contextnmt.nmtCheckpoint import Checkpoint

ckpt = Checkpoint.load("run/model.00030000.ckpt")
model = ckpt.model()
ckpt.save("copy.ckpt")  # byte-identical to the original
```
"""

import io
import logging
import re
from pathlib import Path
from typing import IO, Dict, Iterator, List, Optional, Tuple, Type, Union

import numpy as np
import yaml

from contextnmt.nmtBlock import Section, SectionType, Sized
from contextnmt.nmtModel import ModelConfig
from contextnmt.nmtStrategies import TranslationModel
from contextnmt.nmtTypes import NameString, TextBlob, f32, i32, u32, u64
from contextnmt.nmtUtils import CheckpointFormatError

logger = logging.getLogger(__name__)

__all__ = ["Checkpoint", "last_checkpoints", "list_checkpoints"]

_FILE_NAME = re.compile(r"^model\.(\d+)\.ckpt$")


class ArraySection(Section):
    """
    Named float32 arrays.
    """

    format = 1

    def __init__(self, arrays: Dict[str, np.ndarray]) -> None:
        self.arrays: Dict[str, np.ndarray] = {
            name: np.asarray(a, dtype=np.float32) for name, a in arrays.items()
        }

    @classmethod
    def _build(cls, file: IO[bytes], format: int) -> "ArraySection":
        if format != cls.format:
            raise CheckpointFormatError(f"Unknown {cls.type.name} format {format}")
        n = int(u32.bread(file))
        arrays = {}
        for _ in range(n):
            name = NameString.bread(file)
            ndim = int(u32.bread(file))
            shape = tuple(int(d) for d in u32.bread(file, ndim)) if ndim else ()
            arrays[name] = f32.bread_shaped(file, shape).copy()
        return cls(arrays)

    def _write(self, file: IO[bytes]) -> None:
        u32.bwrite(file, len(self.arrays))
        for name, array in self.arrays.items():
            NameString.bwrite(file, name)
            u32.bwrite(file, array.ndim)
            if array.ndim:
                u32.bwrite(file, np.array(array.shape, dtype="<u4"))
            f32.bwrite(file, array)

    @property
    def nBytes(self) -> int:
        return u32.nBytes() + sum(
            NameString.size + u32.nBytes(1 + a.ndim) + f32.nBytes(a.size)
            for a in self.arrays.values()
        )

    def __iter__(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self.arrays.items())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __len__(self) -> int:
        return len(self.arrays)

    def __eq__(self, other) -> bool:
        if type(self) is not type(other) or list(self.arrays) != list(other.arrays):
            return False
        return all(np.array_equal(a, other.arrays[n]) for n, a in self.arrays.items())


class ParametersSection(ArraySection):
    type = SectionType.parameters


class FirstMomentsSection(ArraySection):
    type = SectionType.firstMoments


class SecondMomentsSection(ArraySection):
    type = SectionType.secondMoments


class ConfigSection(Section):
    """
    The YAML snapshot of the model and training configuration.
    The text is kept verbatim so reading and writing never reformats it.
    """

    type = SectionType.configSnapshot
    format = 1

    def __init__(self, text: str) -> None:
        self.text = text

    @staticmethod
    def from_dict(config: dict) -> "ConfigSection":
        return ConfigSection(yaml.safe_dump(config, sort_keys=True))

    @property
    def config(self) -> dict:
        return yaml.safe_load(self.text) or {}

    @classmethod
    def _build(cls, file: IO[bytes], format: int) -> "ConfigSection":
        if format != cls.format:
            raise CheckpointFormatError(f"Unknown config snapshot format {format}")
        return cls(TextBlob.bread(file))

    def _write(self, file: IO[bytes]) -> None:
        TextBlob.bwrite(file, self.text)

    @property
    def nBytes(self) -> int:
        return TextBlob.nBytes(self.text)

    def __iter__(self):
        return iter(self.config.items())

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfigSection) and self.text == other.text


def _get_section_class(section_type: SectionType) -> Type[Section]:
    if section_type == SectionType.parameters:
        return ParametersSection
    elif section_type == SectionType.firstMoments:
        return FirstMomentsSection
    elif section_type == SectionType.secondMoments:
        return SecondMomentsSection
    elif section_type == SectionType.configSnapshot:
        return ConfigSection
    else:
        raise CheckpointFormatError(f"Unknown section type {section_type}")


class CheckpointEntry(Sized):
    "An entry of the section table"

    def __init__(self, type: SectionType, format: int, offset: int, size: int) -> None:
        self.type = type
        self.format = format
        self.offset = offset
        self.size = size

    nBytes = 24

    def _write(self, file: IO[bytes]) -> None:
        u32.bwrite(file, self.type.value)
        u32.bwrite(file, self.format)
        u64.bwrite(file, self.offset)
        u64.bwrite(file, self.size)

    @staticmethod
    def _build(file: IO[bytes]) -> "CheckpointEntry":
        try:
            type_ = SectionType(int(u32.bread(file)))
        except ValueError as e:
            raise CheckpointFormatError(str(e))
        format = int(u32.bread(file))
        offset = int(u64.bread(file))
        size = int(u64.bread(file))
        return CheckpointEntry(type_, format, offset, size)

    def __eq__(self, o: object) -> bool:
        if not isinstance(o, CheckpointEntry):
            return False
        return (
            self.type == o.type
            and self.format == o.format
            and self.offset == o.offset
            and self.size == o.size
        )

    def __repr__(self) -> str:
        return (
            f"CheckpointEntry(type={self.type}, format={self.format}, "
            f"offset={self.offset}, size={self.size})"
        )


class Checkpoint:
    """
    Parameters, optimizer moments and a configuration snapshot at a given
    update count.
    """

    SIGNATURE = b"\x89CTXNMT\r\n\x1a\nckpt\x00"
    "The first 16 bytes of every checkpoint file"
    VERSION = 1
    HEADER_SIZE = 32

    def __init__(
        self,
        parameters: Dict[str, np.ndarray],
        config: Union[dict, ConfigSection],
        updates: int = 0,
        first_moments: Optional[Dict[str, np.ndarray]] = None,
        second_moments: Optional[Dict[str, np.ndarray]] = None,
    ) -> None:
        self.parameters = ParametersSection(parameters)
        if not isinstance(config, ConfigSection):
            config = ConfigSection.from_dict(config)
        self.config = config
        self.updates = int(updates)
        "Optimizer updates done when the checkpoint was taken"
        self.first_moments = (
            None if first_moments is None else FirstMomentsSection(first_moments)
        )
        self.second_moments = (
            None if second_moments is None else SecondMomentsSection(second_moments)
        )

    @property
    def sections(self) -> List[Section]:
        candidates = (
            self.config,
            self.parameters,
            self.first_moments,
            self.second_moments,
        )
        return [s for s in candidates if s is not None]

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.config.config["model"])

    def model(self) -> TranslationModel:
        "Rebuild the translation model the checkpoint holds"
        model = TranslationModel(self.model_config)
        model.params.load_arrays(self.parameters.arrays)
        return model

    @staticmethod
    def from_model(
        model: TranslationModel,
        updates: int = 0,
        extra_config: Optional[dict] = None,
        moments: Optional[Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]] = None,
    ) -> "Checkpoint":
        config = {"model": model.config.to_dict()}
        config.update(extra_config or {})
        first, second = moments if moments is not None else (None, None)
        return Checkpoint(model.params.arrays(), config, updates, first, second)

    # Reading

    @staticmethod
    def _build(file: IO[bytes]) -> "Checkpoint":
        signature = file.read(len(Checkpoint.SIGNATURE))
        if signature != Checkpoint.SIGNATURE:
            raise CheckpointFormatError("Invalid checkpoint file")
        version = int(u32.bread(file))
        if version != Checkpoint.VERSION:
            raise CheckpointFormatError(f"Unsupported checkpoint version {version}")
        n_entries = int(i32.bread(file))
        updates = int(u64.bread(file))
        entries = [CheckpointEntry._build(file) for _ in range(n_entries)]

        sections: Dict[SectionType, Section] = {}
        for entry in entries:
            file.seek(entry.offset, 0)
            section_class = _get_section_class(entry.type)
            sections[entry.type] = section_class._build(file, entry.format)
        required = (SectionType.parameters, SectionType.configSnapshot)
        if any(t not in sections for t in required):
            raise CheckpointFormatError(
                "A checkpoint needs parameters and a config snapshot"
            )

        ckpt = Checkpoint({}, sections[SectionType.configSnapshot], updates)
        ckpt.parameters = sections[SectionType.parameters]
        ckpt.first_moments = sections.get(SectionType.firstMoments)
        ckpt.second_moments = sections.get(SectionType.secondMoments)
        return ckpt

    @staticmethod
    def load(path: Union[Path, str]) -> "Checkpoint":
        with Path(path).open("rb") as f:
            try:
                return Checkpoint._build(f)
            except EOFError as e:
                raise CheckpointFormatError(f"Truncated checkpoint {path}: {e}")

    # Writing

    def _entries(self) -> List[CheckpointEntry]:
        offset = self.HEADER_SIZE + CheckpointEntry.nBytes * len(self.sections)
        entries = []
        for section in self.sections:
            entries.append(
                CheckpointEntry(section.type, section.format, offset, section.nBytes)
            )
            offset += section.nBytes
        return entries

    def _write(self, file: IO[bytes]) -> None:
        entries = self._entries()
        file.write(self.SIGNATURE)
        u32.bwrite(file, self.VERSION)
        i32.bwrite(file, len(entries))
        u64.bwrite(file, self.updates)
        for entry in entries:
            entry._write(file)
        for section in self.sections:
            section._write(file)

    def save(self, path: Union[Path, str]) -> Path:
        path = Path(path)
        with path.open("wb") as f:
            self._write(f)
        logger.debug("Saved %r to %s", self, path)
        return path

    def to_bytes(self) -> bytes:
        buffer = io.BytesIO()
        self._write(buffer)
        return buffer.getvalue()

    @property
    def nBytes(self) -> int:
        return (
            self.HEADER_SIZE
            + CheckpointEntry.nBytes * len(self.sections)
            + sum(s.nBytes for s in self.sections)
        )

    @staticmethod
    def file_name(updates: int) -> str:
        return f"model.{updates:08d}.ckpt"

    def __eq__(self, o: object) -> bool:
        if not isinstance(o, Checkpoint):
            return False
        return self.updates == o.updates and self.sections == o.sections

    def __repr__(self) -> str:
        return (
            f"<Checkpoint updates={self.updates} tensors={len(self.parameters)} "
            f"nBytes={self.nBytes}>"
        )


def list_checkpoints(directory: Union[Path, str]) -> List[Path]:
    "Checkpoint files of a run directory, oldest first"
    found = []
    for path in Path(directory).iterdir():
        match = _FILE_NAME.match(path.name)
        if match:
            found.append((int(match.group(1)), path))
    return [p for _, p in sorted(found)]


def last_checkpoints(directory: Union[Path, str], n: int = 3) -> List[Path]:
    "The n most recent checkpoints, for ensembling"
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return list_checkpoints(directory)[-n:]
