"""Smoke test for the `sprnet` extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import math
import os
import tempfile

import sprnet


def main():
    names = sprnet.parameter_names()
    assert len(names) == 15 and names[0] == "L"
    mean = sprnet.class_mean()

    gm = sprnet.GroundMotion.synthesize(0.4, 20.0, 0.01, seed=3)
    assert abs(gm.pga() - 0.4) < 1e-9
    gm = gm.trim_resample(6.0, 0.05)
    assert len(gm) == 120
    again = sprnet.GroundMotion.parse("again", gm.to_text())
    assert max(abs(a - b) for a, b in zip(again.accel, gm.accel)) < 1e-8

    response = sprnet.simulate(mean, gm)
    assert len(response["drift_ratio"]) == len(gm)
    assert response["column_energy"][-1] >= 0.0

    motions = [sprnet.GroundMotion.synthesize(0.1 + 0.1 * i, 6.0, 0.01, seed=i).trim_resample(6.0, 0.05) for i in range(8)]
    ds = sprnet.Dataset.build(8, motions, seed=5, split=(0.5, 0.25, 0.25), substeps=2)
    train, val, test = ds.split()
    assert sorted(train + val + test) == list(range(8))

    det = sprnet.Model('{"n_layers": 3, "conv_filters": 4}')
    train_loss, val_loss = det.train(ds, epochs=2, batch_size=4)
    assert len(train_loss) == 2 and all(math.isfinite(v) for v in train_loss)
    pred = det.predict(ds.ground_motion(0), ds.parameters(0))
    assert set(pred) == {"drift_ratio", "column_force", "bearing_disp", "bearing_force"}

    prob = det.transfer([0, 2, 3], ds, epochs=1, batch_size=4)
    assert prob.probabilistic and prob.frozen()
    features = [ds.parameters(0)[j] for j in (0, 2, 3)]
    band = prob.predict(ds.ground_motion(0), features)
    assert all(lo <= hi for lo, hi in zip(map(abs, band["drift_ratio_p16"]), map(abs, band["drift_ratio_p84"])))

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "prob.sprw")
        prob.save(path)
        loaded = sprnet.Model.load(path)
        assert loaded.frozen() == prob.frozen()
        ds.write(os.path.join(tmp, "data"))
        assert len(sprnet.Dataset.read(os.path.join(tmp, "data"))) == 8

    small = sprnet.Model('{"n_layers": 2, "conv_filters": 2, "feature_indices": [0, 1, 2, 3]}')
    base, phi, value = sprnet.shapley(small, gm, mean[:4], [[v * 0.9 for v in mean[:4]]])
    assert abs(base + sum(phi) - value) < 1e-9 * max(1.0, abs(value))

    ims = [0.05 * (i + 1) for i in range(40)]
    edps = [math.exp(0.5 + 1.1 * math.log(im) + 0.2 * math.sin(7 * i)) for i, im in enumerate(ims)]
    a, b, beta = sprnet.cloud_regression(ims, edps)
    assert abs(b - 1.1) < 0.1
    curves = sprnet.fragility_curves(a, b, beta, [0.1, 1.0, 2.0])
    assert len(curves) == 4
    assert abs(sprnet.hazard_rate(0.5) / 2.977e-3 - 1.0) < 1e-3
    slr = sprnet.seismic_loss_ratio(a, b, beta)
    assert 0.0 < slr < 1.0
    m = sprnet.trace_metrics(response["drift_ratio"], [0.9 * v for v in response["drift_ratio"]])
    assert abs(m["peak_error"] - 0.1) < 1e-9

    print(f"sprnet smoke test passed (slr {slr:.4e})")


if __name__ == "__main__":
    main()
