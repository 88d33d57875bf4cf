"""Quick end-to-end check of the Python bindings."""

import os
import tempfile

import hcloth_py as hc


def main():
    assert set(hc.PRESETS) == {"flag", "hang", "sphere", "stretch"}

    h = hc.Hierarchy(4, 4, 1.0, 1.0, 2)
    assert h.counts(0) == (25, 56, 32)
    assert h.counts(1) == (81, 208, 128)
    assert len(h.triangles(2)) == 512

    cfg = hc.SimConfig.preset("hang")
    cfg.finer_levels = 1
    again = hc.SimConfig.from_toml(cfg.to_toml())
    assert again.finer_levels == 1

    sim = hc.Simulator(cfg, level=0, method="admm")
    start = sim.positions
    sim.step(10)
    assert abs(sim.time - 10 / 150) < 1e-12
    assert sim.positions != start

    zero = hc.Model.zeros(1, [9, 32, 32, 9])
    assert zero.forward([0.1] * 9) == [0.0] * 9
    fine = hc.infer_level(zero, cfg, 0, sim.positions)
    assert fine[: len(sim.positions)] == sim.positions

    frames = hc.run_hybrid(cfg, [hc.Model.random(1, seed=3)], 3, workers=2)
    assert len(frames) == 3 and len(frames[0]) == 2

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "data.hcsds")
        n = hc.generate_dataset([cfg], 1, 4, data, seed=1)
        assert n == 4 * 12 * 12 * 2
        model, log = hc.train(data, epochs=5, batch_size=32, checkpoints=[1, 5])
        assert [e for e, _ in log] == [1, 5]
        path = os.path.join(tmp, "m.hcsnn")
        model.save(path)
        loaded = hc.Model.load(path)
        assert loaded.dims == model.dims
        assert max(abs(a - b) for a, b in zip(loaded.forward([0.01] * 9), model.forward([0.01] * 9))) < 1e-5
        again = os.path.join(tmp, "again.hcsnn")
        loaded.save(again)
        assert hc.Model.load(again) == loaded

    print("smoke test ok")


if __name__ == "__main__":
    main()
