"""Smoke test for the pgkit_py extension.

Build and run from the repository root:

    cargo build --release -p pgkit-python --features extension-module
    cp target/release/libpgkit_py.so python/pgkit_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pgkit_py as pk


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def check_hmm():
    hmm = pk.FiniteHmm([[0.7, 0.3], [0.4, 0.6]], [[0.8, 0.2], [0.3, 0.7]], [0.5, 0.5])
    xs, ys = hmm.simulate(8, seed=1)
    assert len(xs) == len(ys) == 8
    exact = hmm.log_likelihood(ys)

    estimates = [math.exp(pk.run_smc(hmm, ys, 200, seed=s).log_likelihood) for s in range(200)]
    mean = sum(estimates) / len(estimates)
    assert close(mean, math.exp(exact), 0.05), (mean, math.exp(exact))

    fa = pk.run_smc(hmm, ys, 50, seed=3, proposal="fully-adapted")
    assert len(fa.states) == 8 and len(fa.states[0]) == 50
    assert fa.ancestors[0] == []

    b = hmm.exact_b(ys[:3])
    eps = [hmm.exact_epsilon(ys[:3], n) for n in (2, 10, 100)]
    assert eps == sorted(eps) and 0.0 < eps[0] <= eps[-1] <= 1.0
    assert close(pk.epsilon(b, 10), eps[1], 1e-12)

    sm, sp = hmm.strong_mixing_constants()
    floor = pk.strong_mixing_bound(sm, sp, 1.0, proposal="fully-adapted")
    assert 0.0 <= floor <= 1.0

    chain = pk.run_pg(hmm, ys, 5, 50, seed=4, burn_in=10)
    assert len(chain.samples) == 40 and len(chain.update_fraction) == 50
    again = pk.run_pg(hmm, ys, 5, 50, seed=4, burn_in=10)
    assert chain.samples == again.samples


def check_lgss():
    m = pk.Lgss(0.9, 1.0, 0.5, 1.0)
    _, ys = m.simulate(20, seed=2)
    exact = m.log_likelihood(ys)
    est = pk.run_smc(m, ys, 2000, seed=5, proposal="fully-adapted").log_likelihood
    assert abs(est - exact) < 0.5, (est, exact)
    means, variances = m.smoother(ys)
    assert len(means) == 20 and all(v > 0 for v in variances)

    chain = pk.run_pg(m, ys, 20, 300, seed=6, burn_in=50)
    first = [s[0] for s in chain.samples]
    draws = [m.sample_smoothing(ys, seed=s)[0] for s in range(250)]
    stat, p = pk.ks_two_sample(first, draws)
    assert 0.0 <= stat <= 1.0 and p > 1e-4, (stat, p)


def check_sv_and_errors():
    sv = pk.StochVol(0.95, 0.3, 0.7)
    _, ys = sv.simulate(30, seed=7)
    r = pk.run_smc(sv, ys, 100, seed=8)
    assert math.isfinite(r.log_likelihood)
    assert all(1.0 <= e <= 100.0 + 1e-9 for e in r.ess)

    for bad in (
        lambda: pk.FiniteHmm([[0.5, 0.6], [0.5, 0.5]], [[1.0], [1.0]], [0.5, 0.5]),
        lambda: pk.run_smc(sv, ys, 10, proposal="fully-adapted"),
        lambda: pk.run_pg(sv, ys, 1, 10),
        lambda: pk.run_smc(sv, ys, 10, proposal="guided"),
    ):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    try:
        pk.run_smc("not a model", ys, 10)
    except TypeError:
        pass
    else:
        raise AssertionError("expected TypeError")


if __name__ == "__main__":
    check_hmm()
    check_lgss()
    check_sv_and_errors()
    print("smoke test passed")
