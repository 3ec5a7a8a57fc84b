"""Builds the WordPiece golden file used by the tokenizer parity tests.

Reference: the Hugging Face `tokenizers` pipeline (BertNormalizer,
BertPreTokenizer, WordPiece) with no special tokens registered, over the
bert-base-uncased vocabulary.

    python3 scripts/make_tokenizer_golden.py \
        crates/core/tests/data/bert-base-uncased-vocab.txt \
        crates/core/tests/data/wordpiece_golden.jsonl
"""

import inspect
import json
import random
import sys

from tokenizers import Tokenizer, models, normalizers, pre_tokenizers

SEED = 20241016
N_SAMPLES = 1000

EDGE_FRAGMENTS = [
    "café", "naïve", "Ångström", "résumé", "Ærøskøbing", "İstanbul", "straße", "ﬁnancial",
    "Ελληνικά", "Москва", "日本語のテキスト", "中文分词测试", "한국어 문장", "عربى", "עברית",
    "emoji 😀🚀", "zero‍width", "soft­hyphen", "nbsp space", "tab\tsep", "line\nbreak",
    "ctrl\x07bell", "repl�char", "null\x00byte", "comb́ining", "́lead", "ｆｕｌｌｗｉｄｔｈ",
    "x² + y³ = z⁴", "€100 £50 ¥30", "«quoted»", "“smart” ‘quotes’", "em—dash", "a…b", "§12(b)",
    "don't", "U.S.A.", "e-mail", "C++ & C#", "http://example.com/a?b=c", "user@example.org",
    "[CLS] [MASK] [SEP]", "##ing", "1,234.56", "3.14159", "2024-10-16", "a" * 101, "b" * 100,
    "supercalifragilisticexpialidocious", "pneumonoultramicroscopicsilicovolcanoconiosis",
    " sep para", "\x0bvt\x0cff", "mixed123abc", "ALLCAPS", "MiXeD CaSe",
]


def docstring_sentences():
    import collections, functools, itertools, json as js, os, random as rnd, re, string, textwrap
    out = []
    for mod in [collections, functools, itertools, js, os, rnd, re, string, textwrap]:
        for _, obj in sorted(inspect.getmembers(mod), key=lambda kv: kv[0]):
            doc = inspect.getdoc(obj)
            if not doc:
                continue
            for line in doc.splitlines():
                line = line.strip()
                if 20 <= len(line) <= 200:
                    out.append(line)
    return sorted(set(out))


def build_samples(vocab):
    rng = random.Random(SEED)
    docs = docstring_sentences()
    words = [w for w in vocab if not w.startswith("[")]
    samples = []
    samples.extend(rng.sample(docs, min(450, len(docs))))
    samples.extend(EDGE_FRAGMENTS)
    while len(samples) < 800:
        n = rng.randint(1, 12)
        parts = []
        for _ in range(n):
            w = rng.choice(words)
            if w.startswith("##"):
                w = rng.choice(words).lstrip("#") + w[2:]
            if rng.random() < 0.2:
                w = w.upper()
            parts.append(w)
        samples.append(rng.choice([" ", "  ", "\t", "-"]).join(parts))
    while len(samples) < N_SAMPLES:
        k = rng.randint(2, 5)
        samples.append(" ".join(rng.choice(EDGE_FRAGMENTS + docs[:50]) for _ in range(k)))
    return samples[:N_SAMPLES]


def main():
    vocab_path, out_path = sys.argv[1], sys.argv[2]
    with open(vocab_path, encoding="utf-8") as f:
        vocab = [line.rstrip("\n") for line in f]
    tok = Tokenizer(models.WordPiece({t: i for i, t in enumerate(vocab)}, unk_token="[UNK]", max_input_chars_per_word=100))
    tok.normalizer = normalizers.BertNormalizer(clean_text=True, handle_chinese_chars=True, lowercase=True)
    tok.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    with open(out_path, "w", encoding="utf-8") as f:
        for text in build_samples(vocab):
            ids = tok.encode(text, add_special_tokens=False).ids
            f.write(json.dumps({"text": text, "ids": ids}, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
