"""Recompute the regression constants frozen in tests/test_kernel.py.

    python3 scripts/fit_constants.py
"""
import math

import numpy as np
from scipy import integrate

from critchaos.kernel import (INFINITY, StarScaleParams, build_bump_profile, kbar_table, kappa, log_envelope,
                              mollified_covariance, smooth_bump)


def kappa_half_oracle():
    psi = lambda x: float(smooth_bump(abs(x), 1.0, 0.5))
    conv = lambda r: integrate.quad(lambda x: psi(x) * psi(r - x), r - 0.5, 0.5, epsabs=1e-14, epsrel=1e-13)[0]
    return conv(0.5) / conv(0.0)


def envelope_constant(prof, eta1, ts=(1, 2, 4, 8, 12, 20)):
    prm = StarScaleParams(eta1=eta1, eta2=1.0)
    return max(float(np.max(log_envelope(t, tb.nodes) - tb.values)) for t in ts
               for tb in [kbar_table(t, prm, prof)])


def main():
    prof = build_bump_profile(1)
    print(f"kappa(0.5), quadrature oracle : {kappa_half_oracle()!r}")
    print(f"kappa(0.5), table             : {float(kappa(0.5, prof))!r}")
    for eta1 in (0.0, 0.25):
        print(f"envelope C, eta1={eta1:<4}        : {envelope_constant(prof, eta1)!r}")
    prm0 = StarScaleParams(eta1=0.0)
    for eps in (2 ** -3, 2 ** -5):
        v = mollified_covariance(INFINITY, eps, 0.0, "k_eps", prm0, prof, spacing=2 ** -12)
        print(f"K_eps(0) - log(1/eps), eps={eps:g}: {v - math.log(1 / eps)!r}")
    v = mollified_covariance(INFINITY, 1.0, 0.0, "k_eps", prm0, prof, spacing=2 ** -8)
    print(f"K_eps(0) at eps=1             : {v!r}")


if __name__ == "__main__":
    main()
