"""Reference tip states from an adaptive 8th-order Runge-Kutta integration.

The right-hand side is written out here from the rod equations rather than
imported, so the values frozen in ``tests/test_rod.py`` do not share code
with the integrator they check. Needs scipy (``pip install -e .[oracle]``).
"""

import numpy as np
from scipy.integrate import solve_ivp
from scipy.spatial.transform import Rotation

from dloshape.presets import get_preset

CASES = {
    "rubber_band": dict(p=(0.01, -0.02, 0.03), R=(0.1, -0.2, 0.3), n=(0.004, -0.003, 0.01), m=(0.002, 0.003, -0.001)),
    "steel_cable": dict(p=(0.0, 0.0, 0.0), R=(0.0, 0.3, 0.0), n=(0.8, -0.5, 1.0), m=(1.2, -0.7, 0.2)),
}


def skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def tip_state(params, p0, R0, n0, m0):
    kt_inv, kr_inv = np.linalg.inv(params.kt), np.linalg.inv(params.kr)

    def rhs(_, y):
        R, n, m = y[3:12].reshape(3, 3), y[12:15], y[15:18]
        dp = R @ (kt_inv @ R.T @ n + params.v_rest)
        dR = R @ skew(kr_inv @ R.T @ m + params.u_rest)
        return np.concatenate([dp, dR.ravel(), -params.f_dist, -np.cross(dp, n) - params.l_dist])

    y0 = np.concatenate([p0, np.ravel(R0), n0, m0])
    sol = solve_ivp(rhs, (0.0, params.length), y0, method="DOP853", rtol=1e-13, atol=1e-15)
    return sol.y[:, -1]


def main():
    for name, case in CASES.items():
        params = get_preset(name).params()
        R0 = Rotation.from_rotvec(case["R"]).as_matrix()
        y = tip_state(params, np.array(case["p"]), R0, np.array(case["n"]), np.array(case["m"]))
        print(name)
        print("  p =", [float(v) for v in y[0:3]])
        print("  R =", [float(v) for v in y[3:12]])
        print("  m =", [float(v) for v in y[15:18]])


if __name__ == "__main__":
    main()
