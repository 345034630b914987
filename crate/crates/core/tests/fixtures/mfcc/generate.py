"""Regenerates the MFCC reference fixtures with python_speech_features.

Each fixture is a mono 16-bit WAV plus a whitespace-separated matrix of the
reference MFCCs (40 filters, 40 coefficients, Hamming window, no energy
substitution). Rows are truncated to floor((L - W) / S) + 1 frames, dropping
the zero-padded tail frame that python_speech_features appends.

    pip install python_speech_features numpy
    python3 generate.py
"""
import math
import wave

import numpy as np
from python_speech_features import mfcc

RATE = 16000


def signal(kind, seconds, rng):
    t = np.arange(int(round(seconds * RATE))) / RATE
    if kind == "chirp":
        f = 200 + 1800 * t / seconds
        x = 0.5 * np.sin(2 * np.pi * np.cumsum(f) / RATE)
    elif kind == "chord":
        x = sum(a * np.sin(2 * np.pi * f * t) for f, a in [(261.63, 0.3), (329.63, 0.2), (392.0, 0.15)])
        x *= np.minimum(1.0, t / 0.05)
    else:
        x = 0.2 * np.sin(2 * np.pi * 700 * t) * np.exp(-2 * t)
    x = x + 0.01 * rng.uniform(-1, 1, size=t.shape)
    return np.clip(x, -1, 1)


def write_wav(path, x):
    q = np.clip(np.round(x * 32767), -32768, 32767).astype("<i2")
    with wave.open(path, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(RATE)
        w.writeframes(q.tobytes())
    return q.astype(np.float64) / 32768.0


def main():
    rng = np.random.default_rng(20240917)
    for name, kind, seconds in [("chirp_1s", "chirp", 1.0), ("chord_0p6s", "chord", 0.6), ("decay_1p3s", "decay", 1.3)]:
        x = write_wav(f"{name}.wav", signal(kind, seconds, rng))
        feat = mfcc(x, RATE, numcep=40, nfilt=40, appendEnergy=False, winfunc=np.hamming)
        frames = (len(x) - 400) // 160 + 1
        np.savetxt(f"{name}.txt", feat[:frames], fmt="%.10e")
        print(name, len(x), feat.shape, "->", frames)


if __name__ == "__main__":
    main()
