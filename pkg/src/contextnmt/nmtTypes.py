__doc__ = "Little-endian binary codecs shared by the checkpoint container."

from typing import IO, BinaryIO, Generic, Optional, Sequence, TypeVar, Union

import numpy as np
import numpy.typing as npt

X = TypeVar("X", bound=np.dtype)


class NameString:
    """
    A fixed-size, null padded UTF-8 string. Used for parameter names.
    """

    size = 128
    "Size in bytes of every name field"

    @staticmethod
    def read(data: bytes) -> str:
        """read a NameString from bytes

        Args:
            data (bytes): input bytes, `NameString.size` of them

        Returns:
            str: a Python string
        """
        try:
            pos = data.index(b"\x00")
            return data[:pos].decode("utf-8")
        except ValueError:
            return data.decode("utf-8")

    @staticmethod
    def write(data: str) -> bytes:
        dat = data.encode("utf-8")
        if len(dat) >= NameString.size:
            raise ValueError(
                f"The name is too long: max {NameString.size - 1} bytes, got {len(dat)}"
            )
        return dat + b"\x00" * (NameString.size - len(dat))

    @staticmethod
    def bwrite(file: BinaryIO, data: str) -> None:
        file.write(NameString.write(data))

    @staticmethod
    def bread(file: BinaryIO) -> str:
        return NameString.read(file.read(NameString.size))


class TextBlob:
    """
    A length-prefixed UTF-8 text: a 32 bit length followed by the bytes.
    Holds the structured-text config snapshot of a checkpoint.
    """

    @staticmethod
    def write(data: str) -> bytes:
        raw = data.encode("utf-8")
        return u32.write(len(raw)) + raw

    @staticmethod
    def bwrite(file: BinaryIO, data: str) -> None:
        file.write(TextBlob.write(data))

    @staticmethod
    def bread(file: BinaryIO) -> str:
        n = int(u32.bread(file))
        raw = file.read(n)
        if len(raw) != n:
            raise EOFError(f"Expected {n} bytes of text, got {len(raw)}")
        return raw.decode("utf-8")

    @staticmethod
    def nBytes(data: str) -> int:
        return 4 + len(data.encode("utf-8"))


class ArrayType(Generic[X]):
    """
    A class to use numpy types to read and write binary data
    """

    def __init__(self, btype: npt.DTypeLike) -> None:
        self.btype: X = np.dtype(btype)
        "The numpy type to use for reading and writing data"

    def read(self, data: bytes) -> npt.NDArray[X]:
        """Read data to the type

        Args:
            data (bytes): input bytes

        Returns:
            np.ndarray: output array with items of the required type
        """
        return np.frombuffer(data, dtype=self.btype)

    def bread(
        self, file: IO[bytes], n: Optional[int] = None
    ) -> Union[npt.NDArray[X], X]:
        """Read data from binary file or buffer

        Args:
            file (IO[Any]): input file or buffer
            n (int, optional): Amount of items to take. If _None_, returns a
            single item, otherwise returns an array of _n_ items. Defaults to None.

        Returns:
            Union[np.ndarray,type]: A numpy scalar or an array of _n_ items
        """
        if n is None:
            raw = file.read(self.btype.itemsize)
            if len(raw) != self.btype.itemsize:
                raise EOFError("Unexpected end of file")
            return self.read(raw)[0]
        raw = file.read(n * self.btype.itemsize)
        if len(raw) != n * self.btype.itemsize:
            raise EOFError(f"Expected {n} items, file ended early")
        return self.read(raw)

    def bread_shaped(self, file: IO[bytes], shape: Sequence[int]) -> np.ndarray:
        "Read a row-major array of the given shape"
        n = int(np.prod(shape, dtype=np.int64))
        return self.bread(file, n).reshape(tuple(shape))

    def write(self, data: Union[npt.NDArray[X], X]) -> bytes:
        "Write data to bytes (row-major)"
        return (
            np.ascontiguousarray(data).astype(self.btype.base).tobytes()
            if isinstance(data, np.ndarray)
            else np.array(data, dtype=self.btype.base).tobytes()
        )

    def bwrite(self, file: IO[bytes], data: Union[npt.NDArray[X], X]) -> None:
        "Write data to a binary file or buffer"
        file.write(self.write(data))

    def nBytes(self, n: int = 1) -> int:
        "Return the size in bytes of n items of the type"
        return n * self.btype.itemsize


i32 = ArrayType(np.dtype("<i4"))
"32 bit integer, little endian"
u32 = ArrayType(np.dtype("<u4"))
"32 bit unsigned integer, little endian"
u64 = ArrayType(np.dtype("<u8"))
"64 bit unsigned integer, little endian"
f32 = ArrayType(np.dtype("<f4"))
"32 bit float, little endian. Every stored parameter uses it"
