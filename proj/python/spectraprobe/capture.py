"""Capture harness: runs a causal LM over an item list and writes a bundle.

torch and transformers are imported lazily; everything except `capture`
works without them.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _core

VOICE_TYPES = ("analytic", "periphrastic", "affixal", "particle", "non_concatenative", "other")
ITEM_COLUMNS = ("language", "voice_type", "condition", "paraphrase_id", "text")


@dataclass(frozen=True)
class Item:
    language: str
    voice_type: str
    condition: str
    paraphrase_id: int
    text: str

    @property
    def item_id(self) -> str:
        return f"{self.language}-{self.condition}-{self.paraphrase_id:02d}"


@dataclass(frozen=True)
class Ablation:
    # (layer, head): layer is the 1-based block ordinal, head is 0-based.
    heads: tuple[tuple[int, int], ...]
    label: str

    def validate(self, num_layers: int, num_heads: int) -> None:
        if not self.heads:
            raise ValueError("ablation lists no heads")
        for layer, head in self.heads:
            if not 1 <= layer <= num_layers:
                raise ValueError(f"ablation layer {layer} outside 1..{num_layers}")
            if not 0 <= head < num_heads:
                raise ValueError(f"ablation head {head} outside 0..{num_heads - 1}")


@dataclass
class CaptureSpec:
    model_id: str
    items: list[Item]
    ablation: Ablation | None = None
    dtype: str = "native"  # "native" or a torch dtype name such as "float32"
    device: str = "cpu"
    family: str | None = None
    seed: int = 0


def parse_ablation(text: str, label: str | None = None) -> Ablation:
    """Parses "2:0-7,3:0-7" (layer:head or layer:lo-hi) into an Ablation."""
    heads: list[tuple[int, int]] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        layer_text, _, head_text = part.partition(":")
        if not head_text:
            raise ValueError(f"ablation entry '{part}' is not layer:head")
        lo_text, _, hi_text = head_text.partition("-")
        lo, hi = int(lo_text), int(hi_text or lo_text)
        heads.extend((int(layer_text), h) for h in range(lo, hi + 1))
    return Ablation(tuple(heads), label or text)


def read_item_list(path: str | Path) -> list[Item]:
    """Reads the TSV item list. A header row and '#' comment lines are allowed."""
    items: list[Item] = []
    with open(path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE), start=1):
            if not row or row[0].startswith("#"):
                continue
            if tuple(c.strip() for c in row) == ITEM_COLUMNS:
                continue
            if len(row) != len(ITEM_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(ITEM_COLUMNS)} tab-separated fields, got {len(row)}")
            language, voice_type, condition, paraphrase_id, text = row
            if voice_type not in VOICE_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown voice_type '{voice_type}'")
            if not text.strip():
                raise ValueError(f"{path}:{lineno}: empty text")
            try:
                pid = int(paraphrase_id)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: paraphrase_id '{paraphrase_id}' is not an integer") from None
            items.append(Item(language, voice_type, condition, pid, text))
    ids = [it.item_id for it in items]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise ValueError(f"duplicate items: {', '.join(dup)}")
    return items


def behavioral_nll(logits: np.ndarray, token_ids: Sequence[int]) -> float:
    """Mean negative log-likelihood of tokens 1..N-1 given their prefixes.

    logits[t] scores the token at position t+1.
    """
    logits = np.asarray(logits, dtype=np.float64)
    ids = np.asarray(token_ids)
    if ids.size < 2:
        raise ValueError("behavioral NLL needs at least two tokens")
    z = logits[:-1]
    m = z.max(axis=1, keepdims=True)
    log_norm = (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]
    picked = z[np.arange(ids.size - 1), ids[1:]]
    return float(np.mean(log_norm - picked))


@dataclass
class CapturedItem:
    item: Item
    pieces: list[str]
    token_ids: list[int]
    special: list[bool]
    attentions: list[np.ndarray]  # per block, [H, N, N]
    hidden: list[np.ndarray]      # per block, [N, d]
    embedding: np.ndarray | None = None
    nll: float | None = None


def write_bundle(out_dir: str | Path, model_id: str, captured: Iterable[CapturedItem], *, family: str | None = None,
                 ablation_label: str | None = None) -> Path:
    """Writes manifest.json and tensor files in the bundle format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    captured = list(captured)
    if not captured:
        raise ValueError("nothing to write")
    num_layers = len(captured[0].attentions)
    num_heads = int(captured[0].attentions[0].shape[0])
    hidden_size = int(captured[0].hidden[0].shape[1])
    records = []
    for c in captured:
        n = len(c.pieces)
        if len(c.attentions) != num_layers or len(c.hidden) != num_layers:
            raise ValueError(f"{c.item.item_id}: layer count differs from the first item")
        base = Path("tensors") / c.item.item_id
        (out / base).mkdir(parents=True, exist_ok=True)
        attn_files, hidden_files = [], []
        for ordinal, (a, h) in enumerate(zip(c.attentions, c.hidden), start=1):
            if a.shape != (num_heads, n, n) or h.shape != (n, hidden_size):
                raise ValueError(f"{c.item.item_id}: block {ordinal} shape mismatch")
            attn = (base / f"{ordinal}.attn.spct").as_posix()
            hid = (base / f"{ordinal}.hidden.spct").as_posix()
            _core.write_tensor(str(out / attn), a.astype(np.float32))
            _core.write_tensor(str(out / hid), h.astype(np.float32))
            attn_files.append(attn)
            hidden_files.append(hid)
        rec = {
            "item_id": c.item.item_id,
            "language": c.item.language,
            "voice_type": c.item.voice_type,
            "condition": c.item.condition,
            "paraphrase_id": c.item.paraphrase_id,
            "text": c.item.text,
            "char_len": len(c.item.text),  # str length counts Unicode scalar values
            "tokens": [{"piece": p, "id": int(i), **({"special": True} if s else {})}
                       for p, i, s in zip(c.pieces, c.token_ids, c.special)],
            "attention_files": attn_files,
            "hidden_files": hidden_files,
        }
        if c.embedding is not None:
            emb = (base / "embedding.hidden.spct").as_posix()
            _core.write_tensor(str(out / emb), c.embedding.astype(np.float32))
            rec["embedding_file"] = emb
        if c.nll is not None:
            rec["behavioral_nll"] = c.nll
        records.append(rec)
    manifest = {
        "format": "spectraprobe-bundle",
        "version": 1,
        "model_id": model_id,
        "num_layers": num_layers,
        "num_heads": num_heads,
        "hidden_size": hidden_size,
        "layer_index_base": 1,
        "items": records,
    }
    if family:
        manifest["family"] = family
    if ablation_label:
        manifest["ablation_label"] = ablation_label
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, ensure_ascii=False) + "\n",
                                       encoding="utf-8")
    return out


def _blocks(model):
    for path in ("transformer.h", "model.layers", "gpt_neox.layers", "model.decoder.layers"):
        obj = model
        try:
            for name in path.split("."):
                obj = getattr(obj, name)
        except AttributeError:
            continue
        return list(obj)
    raise ValueError(f"unsupported architecture {type(model).__name__}: no decoder block list found")


def _output_projection(block):
    for path in ("attn.c_proj", "self_attn.o_proj", "attention.dense", "self_attn.out_proj"):
        obj = block
        try:
            for name in path.split("."):
                obj = getattr(obj, name)
        except AttributeError:
            continue
        return obj
    raise ValueError(f"no attention output projection found in {type(block).__name__}")


class HeadAblator:
    """Zeroes selected heads' value-weighted outputs before the output projection."""

    def __init__(self, model, ablation: Ablation, num_heads: int, head_dim: int):
        self.handles = []
        self.checked = 0
        by_layer: dict[int, list[int]] = {}
        for layer, head in ablation.heads:
            by_layer.setdefault(layer, []).append(head)
        blocks = _blocks(model)
        for layer, heads in sorted(by_layer.items()):
            proj = _output_projection(blocks[layer - 1])
            self.handles.append(proj.register_forward_pre_hook(self._hook(sorted(heads), head_dim)))

    def _hook(self, heads, head_dim):
        def hook(_module, args):
            x = args[0].clone()
            for h in heads:
                x[..., h * head_dim:(h + 1) * head_dim] = 0
            for h in heads:
                assert not x[..., h * head_dim:(h + 1) * head_dim].any(), "ablated head output is not zero"
            self.checked += 1
            return (x, *args[1:])
        return hook

    def remove(self):
        for h in self.handles:
            h.remove()
        self.handles = []


def capture(spec: CaptureSpec, out_dir: str | Path, *, model=None, tokenizer=None) -> Path:
    """One forward pass per item; writes a bundle to out_dir.

    `model` and `tokenizer` default to loading spec.model_id with transformers.
    The tokenizer must provide `__call__(text)["input_ids"]`,
    `convert_ids_to_tokens` and `all_special_ids`.
    """
    import torch

    if model is None or tokenizer is None:
        from transformers import AutoModelForCausalLM, AutoTokenizer

        if tokenizer is None:
            tokenizer = AutoTokenizer.from_pretrained(spec.model_id)
        if model is None:
            kwargs = {"attn_implementation": "eager"}
            if spec.dtype != "native":
                kwargs["torch_dtype"] = getattr(torch, spec.dtype)
            model = AutoModelForCausalLM.from_pretrained(spec.model_id, **kwargs)
    if not spec.items:
        raise ValueError("capture needs at least one item")
    torch.manual_seed(spec.seed)
    model = model.to(spec.device).eval()
    cfg = model.config
    num_heads = int(getattr(cfg, "num_attention_heads", getattr(cfg, "n_head", 0)))
    hidden_size = int(getattr(cfg, "hidden_size", getattr(cfg, "n_embd", 0)))
    num_layers = len(_blocks(model))
    ablator = None
    if spec.ablation is not None:
        spec.ablation.validate(num_layers, num_heads)
        ablator = HeadAblator(model, spec.ablation, num_heads, hidden_size // num_heads)

    special_ids = set(getattr(tokenizer, "all_special_ids", []) or [])
    captured = []
    try:
        for item in spec.items:
            ids = list(tokenizer(item.text)["input_ids"])
            if len(ids) < 2:
                raise ValueError(f"{item.item_id}: tokenization produced {len(ids)} token(s); need at least 2")
            input_ids = torch.tensor([ids], device=spec.device)
            with torch.no_grad():
                out = model(input_ids, output_attentions=True, output_hidden_states=True)
            attentions = [a[0].to(torch.float32).cpu().numpy() for a in out.attentions]
            hidden = [h[0].to(torch.float32).cpu().numpy() for h in out.hidden_states]
            logits = out.logits[0].to(torch.float64).cpu().numpy()
            captured.append(CapturedItem(
                item=item,
                pieces=list(tokenizer.convert_ids_to_tokens(ids)),
                token_ids=ids,
                special=[i in special_ids for i in ids],
                attentions=attentions,
                hidden=hidden[1:],
                embedding=hidden[0],
                nll=behavioral_nll(logits, ids),
            ))
    finally:
        if ablator is not None:
            ablator.remove()
    return write_bundle(out_dir, spec.model_id, captured, family=spec.family,
                        ablation_label=spec.ablation.label if spec.ablation else None)


def main(argv: Sequence[str] | None = None) -> int:
    p = argparse.ArgumentParser(prog="python -m spectraprobe.capture", description=__doc__.splitlines()[0])
    p.add_argument("--model", required=True, help="model identifier or local path")
    p.add_argument("--items", required=True, help="TSV: language, voice_type, condition, paraphrase_id, text")
    p.add_argument("--out", required=True, help="bundle directory to write")
    p.add_argument("--ablate", help="heads to ablate, e.g. 2:0-7,3:0-7 (block ordinal:head)")
    p.add_argument("--ablation-label", help="label recorded in the manifest")
    p.add_argument("--family", help="family label recorded in the manifest")
    p.add_argument("--dtype", default="native")
    p.add_argument("--device", default="cpu")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    try:
        spec = CaptureSpec(
            model_id=args.model,
            items=read_item_list(args.items),
            ablation=parse_ablation(args.ablate, args.ablation_label) if args.ablate else None,
            dtype=args.dtype,
            device=args.device,
            family=args.family,
            seed=args.seed,
        )
        out = capture(spec, args.out)
    except (ValueError, OSError) as e:
        print(f"capture: {e}", file=sys.stderr)
        return 2
    violations = _core.validate_bundle(str(out))
    for v in violations:
        print(f"violation: {v['item']} {v['rule']}: {v['detail']}", file=sys.stderr)
    return 1 if violations else 0


if __name__ == "__main__":
    sys.exit(main())
