"""Independent reference values frozen into the C++ unit tests.

Everything here is computed from the textbook definitions with explicit
loops (no FFT, no library DCT) so it shares no code path with the library.
Run: python3 tests/oracle/frozen_values.py
"""
import math


def dct2_brute(x):
    H, W = len(x), len(x[0])
    out = [[0.0] * W for _ in range(H)]
    for u in range(H):
        au = math.sqrt((1 if u == 0 else 2) / H)
        for v in range(W):
            av = math.sqrt((1 if v == 0 else 2) / W)
            s = 0.0
            for h in range(H):
                for w in range(W):
                    s += x[h][w] * math.cos(math.pi * (2 * h + 1) * u / (2 * H)) * math.cos(
                        math.pi * (2 * w + 1) * v / (2 * W))
            out[u][v] = au * av * s
    return out


def idct2_brute(X):
    H, W = len(X), len(X[0])
    out = [[0.0] * W for _ in range(H)]
    for h in range(H):
        for w in range(W):
            s = 0.0
            for u in range(H):
                au = math.sqrt((1 if u == 0 else 2) / H)
                for v in range(W):
                    av = math.sqrt((1 if v == 0 else 2) / W)
                    s += au * av * X[u][v] * math.cos(math.pi * (2 * h + 1) * u / (2 * H)) * math.cos(
                        math.pi * (2 * w + 1) * v / (2 * W))
            out[h][w] = s
    return out


def hco_brute(x, k, t):
    H, W = len(x), len(x[0])
    F = dct2_brute(x)
    for u in range(H):
        for v in range(W):
            wx, wy = math.pi * u / H, math.pi * v / W
            F[u][v] *= math.exp(-k * (wx * wx + wy * wy) * t)
    return idct2_brute(F)


def gelu_tanh(x):
    return 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


X4 = [[0.5, -1.2, 3.3, 0.7],
      [2.2, 0.1, -0.4, 1.9],
      [-1.5, 0.8, 0.6, -2.1],
      [1.1, -0.3, 2.7, 0.2]]


def fmt(m):
    return ", ".join(f"{v:.17g}" for row in m for v in row)


if __name__ == "__main__":
    print("dct2 2x2:", fmt(dct2_brute([[1, 2], [3, 4]])))
    print("dct2 4x4:", fmt(dct2_brute(X4)))
    print("hco 4x4 k=1 t=0.5:", fmt(hco_brute(X4, 1.0, 0.5)))
    print("gelu(1):", f"{gelu_tanh(1.0):.17g}")
    print("decay k=1 t=1 wx=pi/2:", f"{math.exp(-math.pi ** 2 / 4):.17g}")
    print("literal loss [0.7,0.3] y=0:", f"{-(math.log(0.7) + math.log(0.7)) / 2:.17g}")
    print("sgd p=1 wd=1e-4 lr=1e-3:", f"{1 - 0.001 * (0 + 0.0001 * 1):.17g}")
