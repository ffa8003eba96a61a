"""Smoke test for the pytopoinfer extension module.

Build and install first:

    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
    python python/smoke_test.py
"""

import math
import random
import tempfile

import pytopoinfer as ti


def smooth_noise(rng, dims, fwhm):
    n = dims[0] * dims[1]
    values = [rng.gauss(0.0, 1.0) for _ in range(n)]
    return ti.gaussian_smooth(values, dims, [fwhm, fwhm])


def main():
    rng = random.Random(7)

    # EC densities and corrected thresholds
    assert abs(ti.ec_density(0, 0.0) - 0.5) < 1e-12
    mu = [1.0, 64 + 64 + 441.4, 64 * 64 + 2 * 64 * 441.4, 64 * 64 * 441.4]
    box = ti.ReselVector.from_resels(230.3, mu)
    total, parts = box.expected_ec(3.93, dof=12.0)
    assert abs(total - 4.96) < 0.25, total
    assert len(parts) == 4
    t_star = box.corrected_threshold(0.05, dof=12.0)
    assert abs(box.fwe_p(t_star, dof=12.0) - 0.05) < 1e-6

    # search spaces
    space = ti.SearchSpace.lattice([10, 12])
    assert len(space) == 120 and space.dim == 2
    assert space.intrinsic_volumes() == [1.0, 20.0, 99.0]
    sheet = ti.SearchSpace.mesh([[0, 0], [1, 0], [0, 1], [1, 1]], [[0, 1, 2], [1, 3, 2]])
    assert sheet.is_mesh and abs(sheet.intrinsic_volumes()[2] - 1.0) < 1e-12

    # a one-sample study with an injected effect
    dims = [32, 40]
    n_obs = 12
    observations = []
    for _ in range(n_obs):
        x = smooth_noise(rng, dims, 4.0)
        for i in range(dims[0]):
            for j in range(dims[1]):
                r2 = (i - 16) ** 2 + (j - 25) ** 2
                x[i * dims[1] + j] += 1.5 * math.exp(-r2 / 8.0)
        observations.append(x)
    dataset = ti.Dataset(observations, dims, axes=["y", "time"], units=["", "ms"], origin=[0.0, -100.0], step=[1.0, 4.0])

    t, dof = ti.t_statistic(observations)
    assert dof == n_obs - 1 and len(t) == dims[0] * dims[1]
    resels = ti.estimate_resels(observations, dataset.search_space(), norm="exact")
    assert resels.fwhm is not None and all(2.0 < f < 8.0 for f in resels.fwhm), resels.fwhm

    analysis = ti.analyze(dataset, alpha=0.05)
    results = analysis.results
    for key in ["peaks", "clusters", "footnote", "lkc", "resels", "fwhm", "p_fwe", "expected_ec_breakdown", "corrected_threshold"]:
        assert key in results, key
    top = results["peaks"][0]
    assert abs(top["coords"][0] - 16) + abs(top["coords"][1] - 25) <= 2, top["coords"]
    assert top["p_fwe"] < 0.05
    assert "Height threshold" in analysis.report

    with tempfile.TemporaryDirectory() as tmp:
        dataset.write(tmp + "/ds")
        again = ti.Dataset.read(tmp + "/ds")
        assert again.dims == dims and again.n_obs == n_obs
        assert ti.analyze(again).results == results

    # simulation
    report = ti.simulate([48, 48], [5.0, 5.0], n_realizations=200, seed=3)
    assert len(report["mean_ec"]) == len(report["thresholds"]) == 4
    assert 0.0 <= report["empirical_fwe"] <= 0.15

    # preprocessing
    fs = 250.0
    signal = [math.sin(2 * math.pi * 20.0 * k / fs) for k in range(1000)]
    tf = ti.morlet_tf(signal, fs, [10.0, 20.0, 30.0])
    mid = len(signal) // 2
    assert tf["power"][1][mid] > 10 * tf["power"][0][mid]
    values, mask = ti.interpolate_to_grid([[0, 0], [2, 0], [0, 2], [2, 2]], [1.0, 2.0, 3.0, 4.0], [3, 3])
    assert all(mask) and abs(values[4] - 2.5) < 1e-12
    diffused = ti.laplacian_smooth(space, [float(v % 7) for v in range(120)], 10, 0.2)
    assert abs(sum(diffused) - sum(float(v % 7) for v in range(120))) < 1e-9

    print("pytopoinfer smoke test passed")


if __name__ == "__main__":
    main()
