"""Smoke test for the elyte Python module.

Build and install first:  pip install --no-build-isolation ./crates/python
Then run:                 python python/smoke_test.py
"""

import json
import math
import random
import tempfile
from pathlib import Path

import elyte

ROOT = Path(__file__).resolve().parent.parent
TOY = ROOT / "crates" / "core" / "data" / "pretrain_toy.smi"
POOL = ["C1COC(=O)O1", "COC(=O)OC", "CCOC(=O)OCC", "COCCOC", "CC#N",
        "[Li+].F[P-](F)(F)(F)(F)F", "[Li+].F[B-](F)(F)F", "O=C1OC=CO1"]


def main():
    sf = elyte.smiles_to_selfies("OCC")
    assert sf == elyte.smiles_to_selfies("CCO"), sf
    assert elyte.smiles_to_selfies(elyte.selfies_to_smiles(sf)) == sf
    try:
        elyte.smiles_to_selfies("C1CC")
        raise AssertionError("unclosed ring accepted")
    except ValueError:
        pass

    train_idx, test_idx = elyte.split_indices(147, 0)
    assert (len(train_idx), len(test_idx)) == (117, 30)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        corpus = [l for l in TOY.read_text().splitlines() if l and not l.startswith("#")][:80]
        (tmp / "corpus.smi").write_text("\n".join(corpus) + "\n")
        (tmp / "config.json").write_text(json.dumps({
            "model": {"d_model": 16, "n_heads": 2, "n_layers_enc": 1, "n_layers_dec": 1,
                      "d_ff": 32, "max_len": 64, "dropout_rate": 0.0, "pooling": "mean"},
            "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.001, "mask_ratio": 0.15},
        }))
        model = elyte.Model.pretrain(tmp / "corpus.smi", tmp / "config.json", tmp / "model", 1)
        again = elyte.Model.load(tmp / "model")
        assert model.width == again.width == 16
        r = model.embed("CCO")
        assert r == again.embed("OCC") and len(r) == 16

        sa = model.featurize([("CCO", 0.25), ("CC#N", 0.75)])
        r2 = model.embed("CC#N")
        expect = [0.25 * a + 0.75 * b for a, b in zip(r, r2)]
        assert all(math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12) for a, b in zip(sa, expect))

        rng = random.Random(0)
        x = [[rng.uniform(-1, 1) for _ in range(3)] for _ in range(40)]
        y = [a * a - b for a, b, _ in x]
        reg = elyte.Regressor.fit(x, y, n_trees=50, max_depth=3)
        back = elyte.Regressor.from_json(reg.to_json())
        assert reg.predict_many(x) == back.predict_many(x)
        assert reg.n_features == 3 and reg.n_trees == 50

        lines = ["formulation_id,component_smiles,mole_fraction,target"]
        for k in range(30):
            picks = rng.sample(POOL, rng.randint(2, 4))
            w = [rng.random() + 0.05 for _ in picks]
            fr = [v / sum(w) for v in w]
            target = sum(f * (i + 1) for i, f in enumerate(fr))
            lines += [f"F{k:02d},{s},{f!r},{target!r}" for s, f in zip(picks, fr)]
        (tmp / "data.csv").write_text("\n".join(lines) + "\n")
        report = elyte.train(tmp / "model", tmp / "data.csv", tmp / "run", 0, 4, 0)
        assert (report["n_train"], report["n_test"]) == (24, 6)
        preds = elyte.predict(tmp / "model", tmp / "run" / "regressor.json", tmp / "data.csv", tmp / "p.csv")
        assert len(preds) == 30
        ev = elyte.evaluate(tmp / "model", tmp / "run" / "regressor.json", tmp / "data.csv", tmp / "e.json")
        assert ev["rmse"] >= 0 and len(ev["parity_pairs"]) == 30
        print(f"ok: {model!r}, test RMSE {report['rmse']:.3f}")


if __name__ == "__main__":
    main()
