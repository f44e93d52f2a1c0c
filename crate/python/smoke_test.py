"""Smoke test for the dpcs_py extension module.

Build first with `maturin develop -m crates/python/Cargo.toml --release`.
"""

import math
import os
import tempfile

import dpcs_py


def main():
    data, truth = dpcs_py.simulate_small(n=60, t=8, beta=1.0, seed=3)
    assert data.n == 60 and data.j == 4
    assert data.validate() == []
    assert all(set(data.responses(i)) <= set(truth[i]) for i in range(data.n))

    est, hold = data.split_holdout(2)
    chain = dpcs_py.fit(est, variant="mnl_c", iters=400, seed=7)
    print(chain)
    beta = sum(b[0] for b in chain.beta()) / len(chain)
    print("posterior mean beta %.3f" % beta)
    assert abs(beta - 1.0) < 0.5

    incl = chain.inclusion_probs()
    for i in range(est.n):
        for r in est.responses(i):
            assert incl[i][r - 1] == 1.0

    sim = chain.similarity()
    assert all(abs(sim[i][i] - 1.0) < 1e-12 for i in range(est.n))

    rows = chain.predictive_loglik(hold)
    assert len(rows) == hold.n
    print("holdout log predictive %.2f" % sum(r[2] for r in rows if math.isfinite(r[2])))
    print("acceptance", dict(chain.acceptance()))

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "data.csv")
        data.to_csv(path)
        again = dpcs_py.Dataset.from_csv(path)
        assert again.n == data.n and again.responses(5) == data.responses(5)
        chain.save(os.path.join(tmp, "chain"))
        loaded = dpcs_py.Chain.load(os.path.join(tmp, "chain"))
        assert len(loaded) == len(chain) and loaded.beta() == chain.beta()

    pmf = dpcs_py.mixture_pmf([0.7, 0.3], [[0.9, 0.1], [0.2, 0.8]])
    assert abs(sum(pmf) - 1.0) < 1e-12

    checks = dpcs_py.oracle_checks(sweeps=50000, seed=1)
    for name, passed, value, tol in checks:
        print("%-32s %s %.2e (tol %.0e)" % (name, "PASS" if passed else "FAIL", value, tol))

    try:
        dpcs_py.fit(est, variant="probit", iters=5)
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("bad variant accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
