"""High-precision evaluation of the residual NTK recursion (test oracle).

Independent of the C++ implementation; used to freeze golden values into
tests/unit/test_rntk.cpp and the acceptance suite.
"""
import mpmath as mp

mp.mp.dps = 80


def kappa0(u):
    return (mp.pi - mp.acos(u)) / mp.pi


def kappa1(u):
    return (u * (mp.pi - mp.acos(u)) + mp.sqrt(1 - u * u)) / mp.pi


def rntk(u, L, a):
    u, a = mp.mpf(u), mp.mpf(a)
    a2 = a * a
    K = [u]
    for l in range(1, L):
        K.append(K[l - 1] + a2 * (1 + a2) ** (l - 1) * kappa1(K[l - 1] / (1 + a2) ** (l - 1)))
    B = {L + 1: mp.mpf(1)}
    for l in range(L, 1, -1):
        B[l] = B[l + 1] * (1 + a2 * kappa0(K[l - 1] / (1 + a2) ** (l - 1)))
    C = 1 / (2 * L * (1 + a2) ** (L - 1))
    s = mp.mpf(0)
    for l in range(1, L + 1):
        rho = K[l - 1] / (1 + a2) ** (l - 1)
        s += B[l + 1] * ((1 + a2) ** (l - 1) * kappa1(rho) + K[l - 1] * kappa0(rho))
    return C * s


if __name__ == "__main__":
    for (u, L, a) in [(-1, 2, "0.5"), (0, 2, "0.5"), ("0.5", 3, "0.3"), ("-0.25", 5, "0.5"), (1, 4, "0.7")]:
        print(u, L, a, mp.nstr(rntk(mp.mpf(u), L, mp.mpf(a)), 60))
