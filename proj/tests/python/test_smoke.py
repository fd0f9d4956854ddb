import json
import math

import numpy as np
import pytest

import rescomb


def test_version():
    assert rescomb.__version__.startswith("rescomb ")


def test_normalize_and_align():
    assert rescomb.normalize("The CAT, sat!") == ["the", "cat", "sat"]
    a = rescomb.align(["a", "b", "c"], ["a", "x", "c"])
    assert (a["sub"], a["ins"], a["del"], a["ref"]) == (1, 0, 0, 3)
    assert a["ops"][1] == ("sub", "b", "x")
    assert rescomb.align(["real-"], ["really"], fragment_forgiving=True)["errors"] == 0


def test_wer_and_errors():
    r = rescomb.wer({"u1": ["a", "b", "c"], "u2": ["d"]}, {"u1": ["a", "x", "c"], "u2": ["d"]})
    assert r["wer"] == pytest.approx(0.25)
    with pytest.raises(rescomb.DataError, match="zz9"):
        rescomb.wer({"u1": ["a"]}, {"zz9": ["a"]})
    assert issubclass(rescomb.ConfigError, rescomb.Error)
    assert issubclass(rescomb.Error, RuntimeError)


def test_ngram_round_trip(tmp_path):
    text = [s.split() for s in ["the cat sat", "the dog sat", "a cat ran"]]
    m = rescomb.NGramModel.train(text, order=3)
    assert m.order == 3
    words = ["the", "cat", "dog", "sat", "a", "ran", "</s>", "<unk>"]
    assert sum(math.exp(m.logprob(["the"], w)) for w in words) == pytest.approx(1.0, abs=1e-9)
    m.save(tmp_path / "lm.arpa")
    back = rescomb.NGramModel.load(tmp_path / "lm.arpa")
    # ARPA keeps base-10 values at fixed precision.
    assert back.sentence_logprob(["the", "cat"]) == pytest.approx(m.sentence_logprob(["the", "cat"]), abs=1e-6)
    back.save(tmp_path / "again.arpa")
    assert (tmp_path / "again.arpa").read_text() == (tmp_path / "lm.arpa").read_text()
    with pytest.raises(rescomb.ConfigError):
        rescomb.NGramModel.train(text, smoothing="bogus")


def test_lstm_scores(tmp_path):
    m = rescomb.LstmModel.train([["a", "b", "c"]] * 50, epochs=2, hidden=8, embed=8)
    lp = m.score(["a", "b", "c"])
    assert len(lp) == 4 and all(x <= 0 for x in lp)
    m.save(tmp_path / "lstm.json")
    assert rescomb.LstmModel.load(tmp_path / "lstm.json").score(["a", "b", "c"]) == pytest.approx(lp)


def test_stabilizer():
    assert rescomb.stabilizer_scale(0.0) == pytest.approx(0.25 * math.log(2), abs=1e-12)


def test_confusion_network():
    bins = rescomb.build_cn([(["a", "b", "c"], 0.6), (["a", "x", "c"], 0.4)])
    assert bins == [{"a": 1.0}, pytest.approx({"b": 0.6, "x": 0.4}), {"c": 1.0}]
    assert rescomb.consensus(bins) == ["a", "b", "c"]
    nb = rescomb.cn_to_nbest(bins, 5)
    assert nb[0][0] == ["a", "b", "c"]
    assert nb[0][1] == pytest.approx(math.log(0.6))


def test_posteriors_and_optimizer():
    hyps = [(["a"], {"am": -2.0}), (["b"], {"am": -1.0})]
    post = rescomb.nbest_posteriors(hyps, {"am": 1.0}, posterior_scale=1.0)
    assert sum(post) == pytest.approx(1.0)
    assert post[1] > post[0]

    # The reference always carries the better "oracle" score.
    dev = []
    for k in range(10):
        good, bad = ["w%d" % k], ["v%d" % k]
        dev.append(([(bad, {"am": 0.0, "oracle": 0.0}), (good, {"am": -1.0, "oracle": 1.0})], good))
    weights, errors, initial = rescomb.optimize_weights(dev, {"am": 1.0, "oracle": 0.0})
    assert initial == 10
    assert errors == 0
    assert weights["am"] == 1.0


def test_frame_combine():
    a = np.array([[0.7, 0.3], [0.2, 0.8]])
    b = np.array([[0.3, 0.7], [0.2, 0.8]])
    out = rescomb.frame_combine([a, b])
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.2, 0.8]])
    with pytest.raises(rescomb.DataError):
        rescomb.frame_combine([a, np.ones((3, 2)) / 2])


def test_toy_pipeline(tmp_path):
    rescomb.make_toy(tmp_path, lstm_epochs=1)
    rows = rescomb.run_pipeline(tmp_path / "config.json")
    stages = {r["stage"] for r in rows}
    assert {"first_pass", "combination", "cn_rescore"} <= stages
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert set(manifest["stages"]) == {"rescore", "combine", "cn_rescore", "score"}
    with pytest.raises(rescomb.ConfigError):
        rescomb.run_pipeline(tmp_path / "absent.json")
