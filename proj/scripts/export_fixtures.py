#!/usr/bin/env python3
"""Regenerate tests/fixtures/pythia70m_synthetic/ with the reference stack.

The model has the published Pythia-70M architecture (6 layers, width 512,
8 heads, rotary fraction 0.25, parallel residual, vocab 50304) with weights
produced by a counter-based hash generator. The same generator is
implemented in include/contrans/synthetic.hpp, so the C++ suite rebuilds the
exact checkpoint in memory and only the golden outputs are committed.

Outputs:
  golden.safetensors   prompt.{i}.tokens (I32), prompt.{i}.logits (F32, last position),
                       prompt.{i}.layer.{k} (F32, last-token post-block state, k = 1..L),
                       concept.layer.{k} (F32, reference mean-difference vector)
  tokenizer_cases.json strings and their reference token ids
  manifest.json        prompts, config, pairs, tool versions
"""
import json
import math
from pathlib import Path

import numpy as np
import tokenizers
import torch
import transformers
from safetensors.numpy import save_file
from transformers import GPTNeoXConfig, GPTNeoXForCausalLM

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "tests" / "fixtures" / "pythia70m_synthetic"

PYTHIA_70M = {
    "architectures": ["GPTNeoXForCausalLM"],
    "model_type": "gpt_neox",
    "hidden_act": "gelu",
    "hidden_size": 512,
    "intermediate_size": 2048,
    "num_attention_heads": 8,
    "num_hidden_layers": 6,
    "layer_norm_eps": 1e-05,
    "max_position_embeddings": 2048,
    "rotary_emb_base": 10000,
    "rotary_pct": 0.25,
    "tie_word_embeddings": False,
    "use_parallel_residual": True,
    "vocab_size": 50304,
    "bos_token_id": 0,
    "eos_token_id": 0,
}

PROMPTS = [
    "Scenario: You receive an unexpected token of appreciation.\nThe emotion of the above scenario is",
    "The quick brown fox jumps over the lazy dog.",
    "[INST] Pretend you're an honest person making statements about the world. [/INST] Are bats blind?",
    "Return the number of items in a container, or raise an error if it is closed.",
    "Numbers like 3.14159 and 2,718 appear   with   odd spacing\tand tabs.",
]

CONCEPT_TEMPLATE = "Scenario: {input}\nThe emotion of the above scenario is"
CONCEPT_PAIRS = [
    ("You hear footsteps following you down a dark alley.", "You receive an unexpected token of appreciation from a colleague."),
    ("A large dog growls and runs toward you.", "Your neighbor leaves fresh cookies on your doorstep."),
    ("The elevator stops between floors and the lights go out.", "You find twenty dollars in the pocket of an old coat."),
    ("You get lost in the forest as night falls.", "Your painting sells at the local art fair."),
]

TOKENIZER_CASES = [
    "",
    "hello",
    "Hello world",
    " hello",
    "  leading spaces",
    "trailing spaces   ",
    "Scenario: You receive an unexpected token of appreciation.",
    "it's I'll we've they're she'd I'm don't",
    "IT'S THEY'RE",
    "numbers 12345 and 3.14159, 2,718",
    "tabs\tand\nnewlines\n\n\nrepeated",
    "four    spaces and\t\tdouble tabs",
    "multiple     spaces     inside",
    "punctuation!!! ??? ... ---",
    "café naïve résumé",
    "café composed later",
    "中文字符 and 日本語",
    "emoji \U0001F600 \U0001F44D\U0001F3FD end",
    "Αθήνα Москва",
    "<|endoftext|>",
    "before<|endoftext|>after",
    "x<|padding|><|endoftext|>y",
    "[INST] Pretend you're an honest person making statements about the world. [/INST]",
    "½ ⅓ Ⅲ ٣٤",
    "non breaking em space",
    "   ",
    "\n",
    "a\r\nb",
    "The emotion of the above scenario is fear.",
    "URLs like https://example.com/a?b=c&d=e#f",
    "snake_case and camelCase and kebab-case",
    "\"quoted\" 'single' `backtick`",
]


def fnv1a64(name: str) -> int:
    h = 0xCBF29CE484222325
    for b in name.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def hash_uniform(name: str, count: int, amplitude: np.float32, offset: np.float32) -> np.ndarray:
    """offset + (u * 2^-24 - 0.5) * (2 * amplitude), u the top 24 bits of splitmix64."""
    seed = np.uint64(fnv1a64(name))
    out = np.empty(count, dtype=np.float32)
    chunk = 1 << 22
    with np.errstate(over="ignore"):
        for start in range(0, count, chunk):
            idx = np.arange(start, min(count, start + chunk), dtype=np.uint64)
            z = seed + (idx + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            u = (z >> np.uint64(40)).astype(np.float32)
            r = u * np.float32(2.0 ** -24) - np.float32(0.5)
            v = r * np.float32(2.0 * amplitude)
            if offset != 0:
                v = v + np.float32(offset)
            out[start:start + len(idx)] = v
    return out


def synthetic_state_dict(cfg):
    d = cfg["hidden_size"]
    ff = cfg["intermediate_size"]
    vocab = cfg["vocab_size"]

    def lin_amp(fan_in):
        return np.float32(math.sqrt(3.0 / fan_in))

    def tensor(name, shape, amplitude, offset=0.0):
        n = int(np.prod(shape))
        return hash_uniform(name, n, np.float32(amplitude), np.float32(offset)).reshape(shape)

    sd = {"gpt_neox.embed_in.weight": tensor("gpt_neox.embed_in.weight", (vocab, d), 1.0)}
    for i in range(cfg["num_hidden_layers"]):
        p = f"gpt_neox.layers.{i}."
        for ln in ("input_layernorm", "post_attention_layernorm"):
            sd[p + ln + ".weight"] = tensor(p + ln + ".weight", (d,), 0.1, 1.0)
            sd[p + ln + ".bias"] = tensor(p + ln + ".bias", (d,), 0.05)
        sd[p + "attention.query_key_value.weight"] = tensor(p + "attention.query_key_value.weight", (3 * d, d), lin_amp(d))
        sd[p + "attention.query_key_value.bias"] = tensor(p + "attention.query_key_value.bias", (3 * d,), 0.02)
        sd[p + "attention.dense.weight"] = tensor(p + "attention.dense.weight", (d, d), lin_amp(d))
        sd[p + "attention.dense.bias"] = tensor(p + "attention.dense.bias", (d,), 0.02)
        sd[p + "mlp.dense_h_to_4h.weight"] = tensor(p + "mlp.dense_h_to_4h.weight", (ff, d), lin_amp(d))
        sd[p + "mlp.dense_h_to_4h.bias"] = tensor(p + "mlp.dense_h_to_4h.bias", (ff,), 0.02)
        sd[p + "mlp.dense_4h_to_h.weight"] = tensor(p + "mlp.dense_4h_to_h.weight", (d, ff), lin_amp(ff))
        sd[p + "mlp.dense_4h_to_h.bias"] = tensor(p + "mlp.dense_4h_to_h.bias", (d,), 0.02)
    sd["gpt_neox.final_layer_norm.weight"] = tensor("gpt_neox.final_layer_norm.weight", (d,), 0.1, 1.0)
    sd["gpt_neox.final_layer_norm.bias"] = tensor("gpt_neox.final_layer_norm.bias", (d,), 0.05)
    sd["embed_out.weight"] = tensor("embed_out.weight", (vocab, d), lin_amp(d))
    return sd


def build_model(cfg):
    config = GPTNeoXConfig(**{k: v for k, v in cfg.items() if k not in ("architectures", "model_type")})
    config._attn_implementation = "eager"
    model = GPTNeoXForCausalLM(config).float().eval()
    sd = {k: torch.from_numpy(v) for k, v in synthetic_state_dict(cfg).items()}
    missing, unexpected = model.load_state_dict(sd, strict=False)
    missing = [m for m in missing if not m.endswith("inv_freq")]
    assert not missing and not unexpected, (missing, unexpected)
    return model


@torch.no_grad()
def run(model, ids):
    captured = []
    hooks = [layer.register_forward_hook(lambda mod, inp, out: captured.append(out[0] if isinstance(out, tuple) else out))
             for layer in model.gpt_neox.layers]
    try:
        logits = model(torch.tensor([ids])).logits[0]
    finally:
        for h in hooks:
            h.remove()
    states = [c[0, -1].numpy().astype(np.float32) for c in captured]
    return logits[-1].numpy().astype(np.float32), states


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    tok = tokenizers.Tokenizer.from_file(str(ROOT / "data" / "tokenizer" / "tokenizer.json"))
    torch.manual_seed(0)
    model = build_model(PYTHIA_70M)

    tensors = {}
    for i, prompt in enumerate(PROMPTS):
        ids = tok.encode(prompt).ids
        logits, states = run(model, ids)
        tensors[f"prompt.{i}.tokens"] = np.asarray(ids, dtype=np.int32)
        tensors[f"prompt.{i}.logits"] = logits
        for k, s in enumerate(states, start=1):
            tensors[f"prompt.{i}.layer.{k}"] = s

    diffs = None
    for pos, neg in CONCEPT_PAIRS:
        _, sp = run(model, tok.encode(CONCEPT_TEMPLATE.replace("{input}", pos)).ids)
        _, sn = run(model, tok.encode(CONCEPT_TEMPLATE.replace("{input}", neg)).ids)
        d = [a - b for a, b in zip(sp, sn)]
        diffs = d if diffs is None else [x + y for x, y in zip(diffs, d)]
    for k, v in enumerate(diffs, start=1):
        tensors[f"concept.layer.{k}"] = (v / len(CONCEPT_PAIRS)).astype(np.float32)

    save_file(tensors, str(OUT / "golden.safetensors"))
    cases = [{"text": s, "ids": tok.encode(s).ids} for s in TOKENIZER_CASES]
    (OUT / "tokenizer_cases.json").write_text(json.dumps(cases, indent=1, ensure_ascii=False) + "\n")
    manifest = {
        "model": "pythia-70m-architecture, hash-generated weights",
        "config": PYTHIA_70M,
        "weight_generator": "fnv1a64(name) seeded splitmix64, uniform offset + [-a, a)",
        "prompts": PROMPTS,
        "concept_template": CONCEPT_TEMPLATE,
        "concept_pairs": [{"positive": p, "negative": n} for p, n in CONCEPT_PAIRS],
        "capture": "last-token output of each GPTNeoXLayer (pre final layernorm)",
        "versions": {"torch": torch.__version__, "transformers": transformers.__version__,
                     "tokenizers": tokenizers.__version__, "numpy": np.__version__},
    }
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
