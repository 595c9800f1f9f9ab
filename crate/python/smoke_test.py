"""Smoke test for the `pee` extension module.

Build and install first:

    pip install maturin
    pip install --no-build-isolation -e crates/python
    python python/smoke_test.py
"""

import json
import pathlib
import tempfile

import pee

ROOT = pathlib.Path(__file__).resolve().parent.parent
TOY = ROOT / "crates" / "core" / "tests" / "data" / "toy_personachat.txt"

CONFIG = f"""
[paths]
train = "{TOY}"
test = "{TOY}"
[topic]
topics = 3
hidden = 6
epochs = 2
batch_size = 4
[expansion]
m = 2
n_w = 4
[model]
embed_dim = 4
encoder_hidden = 3
hidden = 6
attention = 4
epochs = 2
batch_size = 8
max_len = 4
vocab_size = 200
"""


def check_metrics():
    toks = pee.tokenize("I like music.")
    assert toks == ["i", "like", "music", "."], toks
    assert pee.bleu([toks], [toks], 4) == 100.0
    assert pee.f1(toks, toks) == 1.0
    assert pee.jaccard(["vegan"], ["candy", "dairy", "form", "vegan"]) == 0.25
    try:
        pee.bleu([toks], [], 1)
    except ValueError:
        pass
    else:
        raise AssertionError("length mismatch must raise ValueError")


def check_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        cfg = tmp / "run.toml"
        cfg.write_text(CONFIG)
        topic = str(tmp / "topic.ckpt")
        model = str(tmp / "model.ckpt")

        trace = pee.pretrain_topic(topic, config=str(cfg), seed=4)
        assert len(trace) == 2
        assert trace == pee.pretrain_topic(topic, config=str(cfg), seed=4)

        records = pee.expand(topic, config=str(cfg))
        assert len(records) == 8
        exp = tmp / "exp.jsonl"
        exp.write_text(
            "".join(json.dumps({"conversation": c, "words": w}) + "\n" for c, w in records)
        )

        losses = pee.train(model, config=str(cfg), expansions=str(exp))
        assert len(losses) == 2
        responses = pee.generate(model, config=str(cfg), expansions=str(exp))
        assert len(responses) == 16
        report = pee.evaluate(config=str(cfg), checkpoint=model, expansions=str(exp))
        assert set(report) == {
            "BLEU1", "BLEU2", "BLEU3", "BLEU4", "F1",
            "Average", "Extrema", "Greedy", "persona_use_ratio",
        }, report
        try:
            pee.generate(topic, config=str(cfg))
        except ValueError:
            pass
        else:
            raise AssertionError("topic checkpoint must not load as a model")


if __name__ == "__main__":
    check_metrics()
    check_pipeline()
    print("smoke test passed")
