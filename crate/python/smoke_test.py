"""Quick end-to-end check of the compiled `actseq` extension module.

Build and install first, e.g.

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/actseq-*.whl
"""

import json
import os
import tempfile

import actseq


def main():
    # metrics on the ES/AER example: reach=0 idle=1 stabilize=2 transport=3
    g = [0, 1, 2]
    assert actseq.levenshtein(g, [0, 3]) == 2
    assert abs(actseq.edit_score(g, [0, 1]) - 200 / 3) < 1e-9
    assert abs(actseq.edit_score(g, [0, 1, 2, 3]) - 75.0) < 1e-9
    assert abs(actseq.aer(g, [0, 1]) - 1 / 3) < 1e-12
    counts = actseq.align(g, [0, 3])
    assert counts == {"correct": 1, "substituted": 1, "missed": 1, "spurious": 0}, counts
    print("tpr/fdr/f1:", actseq.detection_rates(g, [0, 1, 1, 2]))

    assert actseq.collapse([0, 0, 1, 1, 1, 0]) == [0, 1, 0]
    assert actseq.stitch([[0, 1], [1, 2], [], [2, 0]]) == [0, 1, 2, 0]

    try:
        actseq.aer([], [1])
    except ValueError as e:
        assert str(e).startswith("numeric:"), e
    else:
        raise AssertionError("empty ground truth must be rejected")

    classes = actseq.class_names("stroke-like")
    samples = [s.normalized() for s in actseq.generate(8, seed=3)]
    assert samples[0].sequence == actseq.collapse(samples[0].labels)
    print(samples[0], "group", samples[0].group)

    report = actseq.evaluate([(s.sequence, s.sequence) for s in samples], len(classes), replicates=50)
    assert report["edit_score"]["value"] == 100.0

    train, val = samples[:6], samples[6:]
    seg = actseq.Segmenter.train(train, val, len(classes), train_config=json.dumps({"epochs": 2}), seed=1)
    probs, boundary = seg.predict(val[0].features)
    assert len(probs) == len(val[0]) and abs(sum(probs[0]) - 1.0) < 1e-9
    assert boundary is not None
    seq = seg.predict_sequence(val[0].features, refine="smoothing")
    print("segmenter log best epoch:", seg.log["best_epoch"], "smoothed sequence length:", len(seq))

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "seg.json")
        seg.save(path)
        again = actseq.Segmenter.load(path)
        assert again.predict(val[0].features) == (probs, boundary)

    s2s = actseq.Seq2Seq.train(
        train, val, len(classes), config=json.dumps({"encoder": "conv"}), train_config=json.dumps({"epochs": 1}), seed=1
    )
    out = s2s.predict(val[0].features)
    assert all(0 <= k < len(classes) for k in out)
    assert all(a != b for a, b in zip(out, out[1:]))

    plan = {"systems": ["oracle", "empty"], "data": {"kind": "generator", "n": 10}, "bootstrap_replicates": 20}
    metrics = actseq.run_plan(json.dumps(plan))
    assert metrics["oracle"]["aer"]["value"] == 0.0
    assert metrics["empty"]["aer"]["value"] == 1.0
    print("smoke test passed")


if __name__ == "__main__":
    main()
