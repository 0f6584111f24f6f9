#!/usr/bin/env python3
"""Writes tone WAV fixtures with the standard library's wave module:
tone_440_8k.wav (0.5 s, 8 kHz) and tone_1k_16k.wav (1 s, 16 kHz), both
16-bit mono at amplitude 0.5."""

import math
import struct
import wave


def write_tone(path, rate, hz, seconds, amp=0.5):
    n = int(rate * seconds)
    frames = b"".join(
        struct.pack("<h", int(round(amp * 32767 * math.sin(2 * math.pi * hz * i / rate)))) for i in range(n)
    )
    with wave.open(path, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(frames)


if __name__ == "__main__":
    write_tone("tone_440_8k.wav", 8000, 440.0, 0.5)
    write_tone("tone_1k_16k.wav", 16000, 1000.0, 1.0)
