"""Smoke test for the advcode_py extension module.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import math
import tempfile
from pathlib import Path

import advcode_py as ac


def check_formulas():
    assert ac.tokenize_nl("How do I sort a list?") == ["how", "do", "i", "sort", "a", "list", "?"]
    assert "sorted" in ac.tokenize_code("x = sorted(xs)")
    assert ac.hinge_loss(0.8, 0.1, 0.05) == 0.0
    assert math.isclose(ac.hinge_loss(0.1, 0.2, 0.05), 0.15)
    probs = ac.adversarial_distribution([0.1, 0.5, -0.2], 0.2)
    assert math.isclose(sum(probs), 1.0) and probs[1] == max(probs)
    assert ac.normalize_relevance(1.0) == 1.0
    assert math.isclose(ac.qd_weight(0.25, 1, 1), 0.75)
    assert ac.average_precision(2) == 0.5
    assert math.isclose(ac.ndcg(3), 0.5)


def check_training():
    cfg = ac.TrainConfig(embedding_dim=16, encoder_out_dim=32, learning_rate=0.005, batch_size=16,
                         max_epochs=3, seed=1)
    assert cfg.max_epochs == 3 and cfg.to_dict()["embedding_dim"] == 16
    try:
        ac.TrainConfig(no_such_field=1)
    except KeyError:
        pass
    else:
        raise AssertionError("unknown field accepted")

    data = ac.Dataset.synthetic(10, 3, seed=1, config=cfg)
    sizes = data.sizes()
    assert sizes["qc_train"] + sizes["qc_dev"] + sizes["qc_test"] == 30
    assert data.has_qd and data.is_false_negative(0, 1)

    qc, history = ac.pretrain_qc(data, cfg)
    assert len(history) == 3 and all(0.0 <= r["dev_map"] <= 1.0 for r in history)
    qd, _ = ac.pretrain_qd(data, qc, cfg)
    run = ac.train_adversarial(data, qc, qd, cfg.replace(max_epochs=2, record_samples=True))
    assert len(run["history"]) == 2 and run["samples"]
    assert all(0.0 <= s["weight"] <= 1.0 for s in run["samples"])

    report = ac.evaluate(run["qc"], data, "test")
    assert 0.0 < report["map"] <= 1.0 and len(report["ranks"]) == sizes["qc_test"]

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "qc.json"
        qc.save(path)
        loaded = ac.QCModel.load(path, data)
        assert loaded.score("q0w0 q0w1", "k0t0 f0t0") == qc.score("q0w0 q0w1", "k0t0 f0t0")
    print(f"pretrained MAP {history[-1]['dev_map']:.3f}, adversarial test MAP {report['map']:.3f}")


if __name__ == "__main__":
    check_formulas()
    check_training()
    print("ok")
