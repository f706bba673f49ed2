"""Smoke test for the gwdev Python extension.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/gwdev-*.whl
"""

import math

import gwdev


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b}"


def main():
    law = gwdev.OffspringLaw("{1: 0.2, 2: 0.8}")
    close(law.mean, 1.8, 1e-12)
    close(law.gamma, 0.2, 1e-12)
    close(law.alpha, math.log(1 / 0.2) / math.log(1.8), 1e-12)
    assert law.extinction_prob == 0.0 and law.lattice_span == 1 and law.min_offspring == 1
    assert gwdev.OffspringLaw("two_point 2 3 0.5 0.5").alpha is None

    lf = gwdev.OffspringLaw("linear_fractional m=2")
    pmf = gwdev.generation_pmf(lf, 6)
    close(pmf.total_mass + pmf.truncated_mass, 1.0, 1e-12)
    # Z_6 is geometric with mean 64.
    close(pmf.mass_at(1), 1 / 64, 1e-14)
    close(gwdev.laplace_w(lf, 1.0), 0.5, 1e-10)

    x = gwdev.IncrementLaw("rademacher")
    value, err, tier = gwdev.IncrementLaw("rademacher").sum_tail(4, 2.0)
    close(value, 5 / 16, 1e-14)

    exact = gwdev.decomposition_tail(gwdev.OffspringLaw("{1: 0.5, 2: 0.5}"), x, 1, 1.0)
    close(exact["value"], 0.375, 1e-14)
    est = gwdev.estimate_rn_tail(gwdev.OffspringLaw("{1: 0.5, 2: 0.5}"), x, 1, 1.0, seed=1, replications=20000)
    assert est["ci_low"] <= 0.375 <= est["ci_high"], est

    report = gwdev.verify(lf, x, "ddev", (8, 10), {"form": "power", "c": 1.0, "rho": 0.25})
    assert [r["n"] for r in report["rows"]] == [8, 9, 10]
    close(report["rows"][-1]["normalized_value"], 0.5, 0.25 * 0.5)

    try:
        gwdev.OffspringLaw("{3: 1.0}")
    except gwdev.GwdevError as e:
        assert "degenerate" in str(e)
    else:
        raise AssertionError("degenerate law accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
