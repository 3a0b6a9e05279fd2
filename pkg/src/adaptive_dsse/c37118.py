"""IEEE C37.118.2 frame subset: config-2, data, and command frames.

Wire conventions used throughout:

* all integers big-endian, floats big-endian IEEE 754 binary32;
* SYNC = 0xAA, then frame type (bits 6-4) and version (bits 3-0);
* FRAMESIZE counts every byte including the 2-byte CRC trailer;
* FRACSEC = time-quality byte (bits 31-24) + fraction ticks (bits 23-0);
* data frames carry exactly one voltage phasor in float rectangular
  format plus FREQ (deviation from nominal, Hz) and DFREQ (Hz/s):

      SYNC(2) FRAMESIZE(2) IDCODE(2) SOC(4) FRACSEC(4) STAT(2)
      PHASOR(4+4) FREQ(4) DFREQ(4) CHK(2)            -> 34 bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

from .errors import (
    BadSyncError,
    CodecError,
    CrcMismatchError,
    FieldRangeError,
    FrameSizeMismatchError,
    FrameTruncatedError,
    StreamDesyncError,
    UnknownFrameTypeError,
)

__all__ = [
    "TIME_BASE",
    "DATA_FRAME_SIZE",
    "CMD_FRAME_SIZE",
    "CMD_DATA_OFF",
    "CMD_DATA_ON",
    "CMD_SEND_CFG2",
    "DEFAULT_PMU_PORT",
    "FrameHeader",
    "DataFrame",
    "ConfigFrame2",
    "CommandFrame",
    "crc_ccitt",
    "encode_data",
    "encode_config2",
    "encode_command",
    "decode_frame",
    "frame_stream",
    "FrameStream",
    "make_config2",
]

TIME_BASE = 1_000_000  # exact microsecond ticks; 20 ms = 20_000 ticks
DEFAULT_PMU_PORT = 4712

SYNC_BYTE = 0xAA
VERSION = 1
TIME_QUALITY_LOCKED = 0x00  # clock locked, no leap pending

_TYPE_DATA = 0
_TYPE_CFG2 = 3
_TYPE_CMD = 4
_TYPE_NAMES = {_TYPE_DATA: "data", _TYPE_CFG2: "config2", _TYPE_CMD: "command"}

CMD_DATA_OFF = 1
CMD_DATA_ON = 2
CMD_SEND_CFG2 = 5
SUPPORTED_COMMANDS = (CMD_DATA_OFF, CMD_DATA_ON, CMD_SEND_CFG2)

FORMAT_FLOAT_RECT = 0x000E  # freq/analog/phasor as float, phasor rectangular
PHUNIT_VOLTAGE = 0x00000001
STAT_OK = 0x0000

DATA_FRAME_SIZE = 34
CMD_FRAME_SIZE = 18
CFG2_FRAME_SIZE = 74
_MIN_FRAME_SIZE = 18


# ---------------------------------------------------------------------------
# CRC-CCITT: x^16 + x^12 + x^5 + 1, init 0xFFFF, no reflection, no final xor.

def _build_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _build_crc_table()


def crc_ccitt(data: bytes) -> int:
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ byte]
    return crc


# ---------------------------------------------------------------------------
# Frame types.


@dataclass
class FrameHeader:
    sync_type: str  # "data" | "config2" | "command"
    version: int
    framesize: int
    idcode: int
    soc: int
    fracsec: int  # fraction ticks (24-bit field)
    time_quality: int = TIME_QUALITY_LOCKED


@dataclass
class DataFrame:
    header: FrameHeader
    stat: int
    phasor: complex  # rectangular, per-unit by deployment convention
    freq_dev: float  # Hz away from nominal
    rocof: float  # Hz/s


@dataclass
class ConfigFrame2:
    header: FrameHeader
    time_base: int = TIME_BASE
    num_pmu: int = 1
    station_name: str = "PMU"
    pmu_idcode: int = 1
    format_flags: int = FORMAT_FLOAT_RECT
    phnmr: int = 1
    annmr: int = 0
    dgnmr: int = 0
    channel_name: str = "VA"
    phasor_unit: int = PHUNIT_VOLTAGE
    fnom: float = 50.0
    cfgcnt: int = 0
    data_rate: int = 50


@dataclass
class CommandFrame:
    header: FrameHeader
    cmd: int


Frame = Union[DataFrame, ConfigFrame2, CommandFrame]


def _header_bytes(frame_type: int, framesize: int, idcode: int, soc: int,
                  fracsec: int, time_quality: int) -> bytes:
    if not 0 <= idcode <= 0xFFFF:
        raise FieldRangeError(f"idcode {idcode} out of range")
    if not 0 <= soc <= 0xFFFFFFFF:
        raise FieldRangeError(f"soc {soc} out of range")
    if not 0 <= fracsec < (1 << 24):
        raise FieldRangeError(f"fracsec {fracsec} does not fit 24 bits")
    sync2 = (frame_type << 4) | VERSION
    frac_word = ((time_quality & 0xFF) << 24) | fracsec
    return struct.pack(">BBHHII", SYNC_BYTE, sync2, framesize, idcode, soc, frac_word)


def _finish(body: bytes) -> bytes:
    return body + struct.pack(">H", crc_ccitt(body))


def make_config2(
    idcode: int,
    station_name: str,
    data_rate: int = 50,
    fnom: float = 50.0,
    soc: int = 0,
    fracsec: int = 0,
    cfgcnt: int = 0,
) -> ConfigFrame2:
    if data_rate not in (1, 10, 25, 50):
        raise FieldRangeError(f"data_rate {data_rate} not in (1, 10, 25, 50)")
    header = FrameHeader("config2", VERSION, CFG2_FRAME_SIZE, idcode, soc, fracsec)
    return ConfigFrame2(
        header=header,
        station_name=station_name,
        pmu_idcode=idcode,
        data_rate=data_rate,
        fnom=fnom,
        cfgcnt=cfgcnt,
    )


def encode_data(sample, cfg: ConfigFrame2) -> bytes:
    """Encode one synchrophasor sample against its governing config-2."""
    if cfg.format_flags != FORMAT_FLOAT_RECT or cfg.phnmr != 1:
        raise FieldRangeError("codec subset requires float rectangular, 1 phasor")
    if not 0 <= sample.frac < cfg.time_base:
        raise FieldRangeError(
            f"fracsec {sample.frac} outside [0, time_base={cfg.time_base})"
        )
    head = _header_bytes(_TYPE_DATA, DATA_FRAME_SIZE, cfg.pmu_idcode,
                         sample.soc, sample.frac, TIME_QUALITY_LOCKED)
    body = head + struct.pack(
        ">Hffff",
        STAT_OK,
        float(sample.v.real),
        float(sample.v.imag),
        float(sample.freq - cfg.fnom),
        float(sample.rocof),
    )
    return _finish(body)


def encode_config2(cfg: ConfigFrame2) -> bytes:
    name = cfg.station_name.encode("ascii", "replace")[:16].ljust(16)
    chan = cfg.channel_name.encode("ascii", "replace")[:16].ljust(16)
    head = _header_bytes(_TYPE_CFG2, CFG2_FRAME_SIZE, cfg.header.idcode,
                         cfg.header.soc, cfg.header.fracsec, cfg.header.time_quality)
    body = head
    body += struct.pack(">IH", cfg.time_base & 0xFFFFFF, cfg.num_pmu)
    body += name
    body += struct.pack(">HHHHH", cfg.pmu_idcode, cfg.format_flags,
                        cfg.phnmr, cfg.annmr, cfg.dgnmr)
    body += chan
    body += struct.pack(">I", cfg.phasor_unit)
    body += struct.pack(">HH", 1 if cfg.fnom == 50.0 else 0, cfg.cfgcnt)
    body += struct.pack(">h", cfg.data_rate)
    return _finish(body)


def encode_command(idcode: int, cmd: int, soc: int = 0, fracsec: int = 0) -> bytes:
    head = _header_bytes(_TYPE_CMD, CMD_FRAME_SIZE, idcode, soc, fracsec,
                         TIME_QUALITY_LOCKED)
    return _finish(head + struct.pack(">H", cmd))


def _parse_header(data: bytes) -> tuple[int, FrameHeader]:
    sync2 = data[1]
    frame_type = (sync2 >> 4) & 0x07
    version = sync2 & 0x0F
    framesize, idcode, soc, frac_word = struct.unpack(">HHII", data[2:14])
    header = FrameHeader(
        sync_type=_TYPE_NAMES.get(frame_type, f"type{frame_type}"),
        version=version,
        framesize=framesize,
        idcode=idcode,
        soc=soc,
        fracsec=frac_word & 0xFFFFFF,
        time_quality=(frac_word >> 24) & 0xFF,
    )
    return frame_type, header


def decode_frame(data: bytes) -> Frame:
    """Decode one complete frame; total over arbitrary byte strings.

    Raises a distinct CodecError subtype for each failure mode; CRC is
    verified before any body field is interpreted.
    """
    if len(data) < 4:
        raise FrameTruncatedError(f"{len(data)} bytes: too short for SYNC+FRAMESIZE")
    if data[0] != SYNC_BYTE:
        raise BadSyncError(f"first byte 0x{data[0]:02X} != 0xAA")
    framesize = struct.unpack(">H", data[2:4])[0]
    if framesize < _MIN_FRAME_SIZE:
        raise FrameSizeMismatchError(f"framesize {framesize} below minimum frame")
    if len(data) < framesize:
        raise FrameTruncatedError(f"have {len(data)} bytes of {framesize}")
    if len(data) > framesize:
        raise FrameSizeMismatchError(
            f"framesize field {framesize} != {len(data)} bytes supplied"
        )
    expect = struct.unpack(">H", data[-2:])[0]
    actual = crc_ccitt(data[:-2])
    if expect != actual:
        raise CrcMismatchError(f"crc 0x{actual:04X} != trailer 0x{expect:04X}")

    frame_type, header = _parse_header(data)
    body = data[14:-2]
    if frame_type == _TYPE_DATA:
        if framesize != DATA_FRAME_SIZE:
            raise FrameSizeMismatchError(
                f"data frame must be {DATA_FRAME_SIZE} bytes, got {framesize}"
            )
        stat, v_re, v_im, freq_dev, rocof = struct.unpack(">Hffff", body)
        return DataFrame(header, stat, complex(v_re, v_im), freq_dev, rocof)
    if frame_type == _TYPE_CMD:
        if framesize != CMD_FRAME_SIZE:
            raise FrameSizeMismatchError(
                f"command frame must be {CMD_FRAME_SIZE} bytes, got {framesize}"
            )
        (cmd,) = struct.unpack(">H", body)
        return CommandFrame(header, cmd)
    if frame_type == _TYPE_CFG2:
        if framesize != CFG2_FRAME_SIZE:
            raise FrameSizeMismatchError(
                f"single-phasor config-2 must be {CFG2_FRAME_SIZE} bytes, got {framesize}"
            )
        time_base_word, num_pmu = struct.unpack(">IH", body[0:6])
        if num_pmu != 1:
            raise FieldRangeError(f"multi-PMU config frames unsupported (num_pmu={num_pmu})")
        station = body[6:22].decode("ascii", "replace").rstrip()
        pmu_idcode, fmt, phnmr, annmr, dgnmr = struct.unpack(">HHHHH", body[22:32])
        if fmt != FORMAT_FLOAT_RECT or phnmr != 1 or annmr != 0 or dgnmr != 0:
            raise FieldRangeError("codec subset requires float rectangular, 1 phasor")
        channel = body[32:48].decode("ascii", "replace").rstrip()
        (phunit,) = struct.unpack(">I", body[48:52])
        fnom_word, cfgcnt = struct.unpack(">HH", body[52:56])
        (data_rate,) = struct.unpack(">h", body[56:58])
        return ConfigFrame2(
            header=header,
            time_base=time_base_word & 0xFFFFFF,
            num_pmu=num_pmu,
            station_name=station,
            pmu_idcode=pmu_idcode,
            format_flags=fmt,
            phnmr=phnmr,
            annmr=annmr,
            dgnmr=dgnmr,
            channel_name=channel,
            phasor_unit=phunit,
            fnom=50.0 if fnom_word & 0x0001 else 60.0,
            cfgcnt=cfgcnt,
            data_rate=data_rate,
        )
    raise UnknownFrameTypeError(f"unsupported frame type {frame_type}")


# ---------------------------------------------------------------------------
# Stream re-framing.


class FrameStream:
    """Re-frames a chunked byte stream into typed frames.

    Frames may arrive fragmented or coalesced; after a corrupt region the
    stream resynchronizes by scanning for the next 0xAA.  Total skipped
    garbage beyond `garbage_limit` raises StreamDesyncError.
    """

    def __init__(self, chunks: Iterable[bytes], garbage_limit: int = 65536):
        self._chunks = iter(chunks)
        self._buf = bytearray()
        self._eof = False
        self.garbage_limit = garbage_limit
        self.garbage_bytes = 0

    def _fill(self, need: int) -> bool:
        while not self._eof and len(self._buf) < need:
            try:
                chunk = next(self._chunks)
            except StopIteration:
                self._eof = True
                return len(self._buf) >= need
            if chunk:
                self._buf.extend(chunk)
        return len(self._buf) >= need

    def _skip(self, n: int) -> None:
        del self._buf[:n]
        self.garbage_bytes += n
        if self.garbage_bytes > self.garbage_limit:
            raise StreamDesyncError(
                f"skipped {self.garbage_bytes} garbage bytes (> {self.garbage_limit})"
            )

    def __iter__(self) -> Iterator[Frame]:
        while True:
            if not self._fill(1):
                return
            pos = self._buf.find(SYNC_BYTE)
            if pos < 0:
                self._skip(len(self._buf))
                continue
            if pos:
                self._skip(pos)
            if not self._fill(4):
                # EOF with a dangling sync: drain byte-wise (a bogus sync may
                # hide real frames behind it; a true partial frame just ends)
                self._skip(1)
                continue
            framesize = struct.unpack(">H", bytes(self._buf[2:4]))[0]
            if framesize < _MIN_FRAME_SIZE:
                self._skip(1)
                continue
            if not self._fill(framesize):
                self._skip(1)
                continue
            candidate = bytes(self._buf[:framesize])
            try:
                frame = decode_frame(candidate)
            except CodecError:
                self._skip(1)
                continue
            del self._buf[:framesize]
            yield frame


def frame_stream(chunks: Iterable[bytes], garbage_limit: int = 65536) -> Iterator[Frame]:
    """Iterate typed frames out of a chunked byte transport."""
    return iter(FrameStream(chunks, garbage_limit=garbage_limit))
