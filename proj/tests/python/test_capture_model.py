import json

import numpy as np
import pytest

import spectraprobe as sp
from spectraprobe import capture as cap

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")


class WordTokenizer:
    """Whitespace tokenizer with a BOS token; enough for capture()."""

    all_special_ids = [0]

    def __init__(self, vocab_size):
        self.vocab_size = vocab_size

    def _id(self, word):
        return 1 + sum(word.encode("utf-8")) % (self.vocab_size - 1)

    def __call__(self, text):
        return {"input_ids": [0] + [self._id(w) for w in text.split()]}

    def convert_ids_to_tokens(self, ids):
        return ["<s>" if i == 0 else f"w{i}" for i in ids]


@pytest.fixture(scope="module")
def tiny_model():
    cfg = transformers.GPT2Config(n_layer=4, n_head=4, n_embd=32, vocab_size=64, n_positions=64,
                                  resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
    cfg._attn_implementation = "eager"
    torch.manual_seed(0)
    return transformers.GPT2LMHeadModel(cfg).eval(), WordTokenizer(64)


ITEMS = [cap.Item("EN", "periphrastic", "active", 0, "the cat chased the dog"),
         cap.Item("EN", "periphrastic", "passive", 0, "the dog was chased by the cat")]


def read_all(bundle):
    m = json.loads((bundle / "manifest.json").read_text(encoding="utf-8"))
    return m, {it["item_id"]: [sp.read_tensor(str(bundle / f)) for f in it["attention_files"]] for it in m["items"]}


def test_capture_tiny_model(tmp_path, tiny_model):
    model, tok = tiny_model
    spec = cap.CaptureSpec(model_id="tiny-gpt2", items=ITEMS)
    out = cap.capture(spec, tmp_path / "base", model=model, tokenizer=tok)
    assert sp.validate_bundle(str(out)) == []
    m, att = read_all(out)
    assert m["num_layers"] == 4 and m["num_heads"] == 4 and m["hidden_size"] == 32
    for it in m["items"]:
        assert len(it["tokens"]) == att[it["item_id"]][0].shape[1]
        assert it["behavioral_nll"] > 0
        for a in att[it["item_id"]]:
            np.testing.assert_allclose(a.sum(axis=2), 1.0, atol=1e-4)

    again = cap.capture(spec, tmp_path / "again", model=model, tokenizer=tok)
    _, att2 = read_all(again)
    for k in att:
        for a, b in zip(att[k], att2[k]):
            assert np.array_equal(a, b)


def test_capture_nll_matches_manual_loop(tmp_path, tiny_model):
    model, tok = tiny_model
    out = cap.capture(cap.CaptureSpec(model_id="tiny-gpt2", items=ITEMS[:1]), tmp_path / "b", model=model,
                      tokenizer=tok)
    m = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    ids = tok(ITEMS[0].text)["input_ids"]
    with torch.no_grad():
        total = 0.0
        for t in range(1, len(ids)):
            logits = model(torch.tensor([ids[:t]])).logits[0, -1].double()
            total += -torch.log_softmax(logits, dim=0)[ids[t]].item()
    assert m["items"][0]["behavioral_nll"] == pytest.approx(total / (len(ids) - 1), abs=1e-5)


def test_ablation_locality_and_zeroing(tmp_path, tiny_model):
    model, tok = tiny_model
    base = cap.capture(cap.CaptureSpec(model_id="tiny-gpt2", items=ITEMS), tmp_path / "base", model=model,
                       tokenizer=tok)
    ablation = cap.parse_ablation("2:0-1", "L2 H0-1")
    abl = cap.capture(cap.CaptureSpec(model_id="tiny-gpt2", items=ITEMS, ablation=ablation), tmp_path / "abl",
                      model=model, tokenizer=tok)
    mb, ab = read_all(base)
    ma, aa = read_all(abl)
    assert ma["ablation_label"] == "L2 H0-1"
    for k in ab:
        assert np.array_equal(ab[k][0], aa[k][0])  # block 1 precedes the ablation
        assert any(not np.array_equal(x, y) for x, y in zip(ab[k][2:], aa[k][2:]))

    code, out, _ = sp.run_cli(["ablation-summary", str(base), str(abl), "--boot", "100", "--perm", "100",
                               "--window", "1:2", "--out", str(tmp_path / "summary")])
    assert code == 0
    assert "L2 H0-1" in out

    seen = []
    proj = model.transformer.h[1].attn.c_proj
    ablator = cap.HeadAblator(model, ablation, num_heads=4, head_dim=8)
    handle = proj.register_forward_pre_hook(lambda _m, args: seen.append(args[0][..., :16].abs().max().item()))
    try:
        with torch.no_grad():
            model(torch.tensor([tok(ITEMS[0].text)["input_ids"]]))
    finally:
        handle.remove()
        ablator.remove()
    assert ablator.checked == 1
    assert seen == [0.0]

    with pytest.raises(ValueError, match="layer"):
        cap.capture(cap.CaptureSpec(model_id="tiny-gpt2", items=ITEMS, ablation=cap.parse_ablation("5:0")),
                    tmp_path / "x", model=model, tokenizer=tok)
    with pytest.raises(ValueError, match="at least 2"):
        cap.capture(cap.CaptureSpec(model_id="tiny-gpt2", items=[cap.Item("EN", "other", "active", 1, "   ")]),
                    tmp_path / "y", model=model, tokenizer=tok)
