"""PCM16 mono WAV input and output."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise FormatError("channels", "audio must be mono")
        if self.sample_rate <= 0:
            raise FormatError("sample_rate", f"must be positive, got {self.sample_rate}")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def _chunks(buf, pos):
    while pos + 8 <= len(buf):
        cid, size = struct.unpack_from("<4sI", buf, pos)
        yield cid, buf[pos + 8:pos + 8 + size]
        pos += 8 + size + (size & 1)


def parse_wav(buf: bytes) -> AudioBuffer:
    if len(buf) < 12 or buf[:4] != b"RIFF":
        raise FormatError("riff_magic", f"expected b'RIFF', got {bytes(buf[:4])!r}")
    if buf[8:12] != b"WAVE":
        raise FormatError("wave_magic", f"expected b'WAVE', got {bytes(buf[8:12])!r}")
    fmt = data = None
    for cid, body in _chunks(buf, 12):
        if cid == b"fmt " and fmt is None:
            fmt = body
        elif cid == b"data" and data is None:
            data = body
    if fmt is None or len(fmt) < 16:
        raise FormatError("fmt", "missing or truncated fmt chunk")
    if data is None:
        raise FormatError("data", "missing data chunk")
    tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == 0xFFFE and len(fmt) >= 26:
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if tag != 1:
        raise FormatError("audio_format", f"only PCM (1) is supported, got {tag}")
    if bits != 16:
        raise FormatError("bits_per_sample", f"only 16-bit PCM is supported, got {bits}")
    if channels != 1:
        raise FormatError("num_channels", f"only mono is supported, got {channels}")
    pcm = np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / 32768.0, rate)


def read_wav(path) -> AudioBuffer:
    """Read a PCM16 mono WAV file; samples are scaled by 1/32768."""
    with open(path, "rb") as fh:
        return parse_wav(fh.read())


def write_wav(path, audio: AudioBuffer):
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(audio.sample_rate))
        wf.writeframes(pcm.tobytes())
