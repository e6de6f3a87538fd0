"""End-to-end smoke of the python surface: simulate -> stats -> fits."""

import math

import lambdapop


def test_simulate_round_trip():
    nwk = lambdapop.simulate("iso:20", "uniform:2", "kingman", seed=7)
    assert nwk.endswith(";")
    stats = lambdapop.tree_stats(nwk)
    assert stats["n_tips"] == 20
    assert len(stats["coal_times"]) == 19  # binary all the way down
    assert all(b == 2 for b in stats["block_sizes"])
    assert stats["tmrca"] == stats["coal_times"][-1] > 0
    # same seed, same bytes
    assert nwk == lambdapop.simulate("iso:20", "uniform:2", "kingman", seed=7)


def test_heterochronous_schedule():
    nwk = lambdapop.simulate("0:6,1.5:4", "exp:10,0.5", "beta:1.4", seed=3)
    stats = lambdapop.tree_stats(nwk)
    assert stats["sample_times"] == [0.0, 1.5]
    assert stats["sample_counts"] == [6, 4]
    assert sum(b - 1 for b in stats["block_sizes"]) == 9


def test_rates():
    # Kingman: only pairwise mergers, total rate C(b, 2)
    assert math.isclose(lambdapop.total_rate("kingman", 10), 45.0, rel_tol=1e-12)
    pmf = lambdapop.block_size_pmf("bs", 6)
    assert len(pmf) == 5
    assert math.isclose(sum(pmf), 1.0, rel_tol=1e-12)
    assert pmf[0] > pmf[-1]  # pairwise mergers dominate


def test_block_size_mle_flags_binary_trees():
    nwk = lambdapop.simulate("iso:40", "uniform:1", "kingman", seed=11)
    alpha, at_boundary = lambdapop.block_size_mle(nwk)
    assert at_boundary
    assert alpha > 1.9


def test_fit_paths():
    nwk = lambdapop.simulate("iso:30", "uniform:2", "bs", seed=5)

    quick = lambdapop.fit(nwk, method="bs-mle", grid_size=8)
    assert quick["method"] == "bs-mle"
    assert 0 < quick["alpha"] <= 2.0
    traj = quick["trajectory"]
    assert len(traj["grid_points"]) == 8
    assert len(traj["median"]) == 7
    assert all(l <= m <= u for l, m, u in zip(traj["lower"], traj["median"], traj["upper"]))

    posterior = lambdapop.fit(nwk, method="mcmc", grid_size=8, iterations=2000, seed=2)
    assert posterior["method"] == "mcmc"
    assert 0.0 < posterior["accept_rate"] <= 1.0
    assert posterior["ess_alpha"] > 0
    assert all(v > 0 for v in posterior["trajectory"]["median"])


def test_errors_are_typed():
    try:
        lambdapop.tree_stats("this is not a tree")
    except lambdapop.InputError:
        pass
    else:
        raise AssertionError("expected InputError")
    assert issubclass(lambdapop.InputError, ValueError)


if __name__ == "__main__":
    # runnable without pytest: execute every test_* in definition order
    failures = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
                print(f"ok   {name}")
            except Exception as exc:  # noqa: BLE001
                failures += 1
                print(f"FAIL {name}: {exc!r}")
    raise SystemExit(1 if failures else 0)
