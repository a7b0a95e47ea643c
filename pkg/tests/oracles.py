"""Independent reference solutions used by the test-suite."""
import math

import numpy as np
from scipy.integrate import quad, solve_ivp


def dense_qvi_oracle(r, c, G, H, lam, delta, k, s):
    """Discrete QVI solved exactly by Howard policy iteration on a dense system.

    Point-mass shocks of size ``s``: a shock from node i lands on node
    ``i - ceil(s/h - 1/2)`` or fails if that is negative.
    """
    N = r.size
    h = r[1] - r[0]
    a = c / h
    P = np.zeros((N, N))
    d = math.ceil(s / h - 0.5)
    for i in range(d, N):
        P[i, i - d] = 1.0
    target = np.full(N, -1)
    for _ in range(500):
        A = np.zeros((N, N))
        b = np.zeros(N)
        for i in range(N):
            if target[i] < 0:
                A[i, i] += delta + a[i] + lam
                if i > 0:
                    A[i, i - 1] -= a[i]
                A[i] -= lam * P[i]
                b[i] = G[i]
            else:
                A[i, i] += 1.0
                A[i, target[i]] -= 1.0
                b[i] = H[i] - H[target[i]] - k
        V = np.linalg.solve(A, b)
        left = np.concatenate(([0.0], V[:-1]))
        cont = (G + a * left + lam * P @ V) / (delta + a + lam)
        new = target.copy()
        for i in range(N):
            # restoring to the same node only pays k, so targets above i suffice
            interv, j = -np.inf, -1
            if i + 1 < N:
                x = V[i + 1:] - H[i + 1:]
                j = i + 1 + int(np.argmax(x))
                interv = x[j - i - 1] + H[i] - k
            if max(cont[i], interv) > V[i] + 1e-12 * (1 + abs(V[i])):
                new[i] = j if interv > cont[i] else -1
        if np.array_equal(new, target):
            return V
        target = new
    raise RuntimeError("policy iteration did not settle")


def random_point_mass_instance(rng):
    """Random small model dict with point-mass shocks, and its grid size."""
    m = float(rng.uniform(0, 1))
    M = m + float(rng.uniform(0.5, 3))
    N = int(rng.integers(3, 9))
    h = (M - m) / (N - 1)
    while True:
        s = float(rng.uniform(0.05, 1.5 * (M - m)))
        frac = s / h - 0.5
        if abs(frac - round(frac)) > 1e-6:  # keep clear of bin edges
            break
    if rng.random() < 0.5:
        rate = {"kind": "constant", "c0": float(rng.uniform(0.05, 2))}
    else:
        rate = {"kind": "affine", "alpha": float(rng.uniform(0, 1)),
                "kappa": M + float(rng.uniform(0.1, 2))}
    doc = {
        "bounds": {"m": m, "M": M},
        "rate": rate,
        "shocks": {"lambda": float(rng.uniform(0, 2)), "dist": {"kind": "point_mass", "s0": s}},
        "benefit": {"kind": "saturating_exp", "C": float(rng.uniform(0.1, 2)),
                    "rate": float(rng.uniform(0.1, 3)), "delta": float(rng.uniform(0.02, 0.5))},
        "cost": {"kind": "power", "p": float(rng.uniform(0.5, 3)),
                 "scale": float(rng.uniform(0.1, 2)), "k": float(rng.uniform(0.001, 0.5))},
    }
    return doc, N


def ode_flow(c, r0, t, m=-np.inf):
    """Numerical solution of dR/dt = -c(R) up to time t (stopped at m)."""
    def ev(_, y):
        return y[0] - m
    ev.terminal = True
    sol = solve_ivp(lambda _, y: [-float(c(y[0]))], (0.0, t), [r0], rtol=1e-12, atol=1e-14,
                    events=ev)
    return float(sol.y[0, -1])


def discounted_benefit(G, flow, delta, L):
    """Quadrature of int_0^L exp(-delta u) G(flow(u)) du."""
    val, _ = quad(lambda u: math.exp(-delta * u) * float(G(flow(u))), 0.0, L,
                  epsabs=1e-13, epsrel=1e-12, limit=200)
    return val
