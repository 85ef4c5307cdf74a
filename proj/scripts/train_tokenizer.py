#!/usr/bin/env python3
"""Train the byte-level BPE tokenizer shipped in data/tokenizer/tokenizer.json.

The pipeline mirrors the GPT-NeoX tokenizer definition: NFC normalizer,
byte-level pre-tokenizer without prefix space, byte-level decoder, two special
tokens at ids 0/1 and a few non-special whitespace-run added tokens.
"""
import json
from pathlib import Path

from tokenizers import Tokenizer, decoders, models, normalizers, pre_tokenizers, processors, trainers
from tokenizers import AddedToken

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
VOCAB_SIZE = 8192


def corpus():
    lines = (DATA / "fitting_corpus.txt").read_text().splitlines()
    lines += (DATA / "ppl_corpus.txt").read_text().splitlines()
    for row in map(json.loads, (DATA / "emotion" / "scenarios.jsonl").read_text().splitlines()):
        lines.append(f"Scenario: {row['scenario']}\nThe emotion of the above scenario is {row['label']}.")
    lines += [json.dumps(row) for row in map(json.loads, (DATA / "mc_sample.jsonl").read_text().splitlines())]
    lines += (DATA / "provocation_prompts.jsonl").read_text().splitlines()
    lines += (DATA / "honesty_pairs.jsonl").read_text().splitlines()
    lines += list(json.loads((DATA / "templates.json").read_text()).keys())
    return lines


def main():
    tok = Tokenizer(models.BPE())
    tok.normalizer = normalizers.NFC()
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False, use_regex=True)
    tok.decoder = decoders.ByteLevel()
    tok.post_processor = processors.ByteLevel(trim_offsets=True)
    trainer = trainers.BpeTrainer(
        vocab_size=VOCAB_SIZE,
        min_frequency=2,
        special_tokens=["<|endoftext|>", "<|padding|>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
        show_progress=False,
    )
    tok.train_from_iterator(corpus(), trainer=trainer)
    tok.add_tokens([AddedToken("    ", normalized=True), AddedToken("\t\t", normalized=True)])
    out = DATA / "tokenizer" / "tokenizer.json"
    tok.save(str(out))
    print(f"wrote {out}: {tok.get_vocab_size()} tokens")


if __name__ == "__main__":
    main()
