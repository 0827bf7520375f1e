#!/usr/bin/env python3
"""Build the byte-level BPE test fixtures.

Trains a small byte-level BPE vocabulary on a deterministic synthetic corpus,
saves it in the standard vocab.json / merges.txt format, and freezes reference
encodings for 1000+ sentences produced by the `tokenizers` library (the same
engine behind GPT2TokenizerFast). A second, independently written reference
encoder (the classic encoder.py algorithm on top of the `regex` package) is
run over every fixture as a cross-check; the script fails if the two reference
implementations disagree anywhere.

Outputs (under crates/detok/fixtures/):
  vocab.json, merges.txt     - synthetic tokenizer data
  encode_fixtures.jsonl      - {"text": ..., "ids": [...]} per line

Usage: python3 tools/gen_tokenizer_fixtures.py
"""

import json
import random
from pathlib import Path

import regex
from tokenizers import ByteLevelBPETokenizer
from tokenizers.pre_tokenizers import ByteLevel

SEED = 20260810
VOCAB_SIZE = 1800
FIXTURE_DIR = Path(__file__).resolve().parent.parent / "crates/detok/fixtures"

WORDS = """
the of and to in a is that for it as was with be by on not he this are or his
from at which but have an had they you were their one all we can her has there
been if more when will would who so no she other its may these than then do
some said like him into time only could new them man any may about out up what
world hello sapiens aliens libertarian tokyo korea north south obama barack
einstein albert jackson michael chloride sodium aluminum century nineteenth
attention layer token position embedding variance weight analysis head model
language detokenize vocabulary frequency corpus count score softmax matrix
""".split()

UNICODE_WORDS = [
    "café", "naïve", "Zürich", "résumé", "Ångström", "señor", "groß",
    "日本語", "東京", "привет", "мир", "ελληνικά", "עברית", "العربية",
    "ไทย", "한국어", "中文", "ñandú", "Ⅷ", "№５", "½", "π≈3",
    "😀", "👍🏽", "🇯🇵", "🧑‍🔬", "é", "äb",
]

PUNCT = ["...", "!?", "--", "()", "[]", "{}", '"', "'", ",", ".", ";", ":",
         "!!", "?”", "—", "«»", "#@$%", "**", "/", "\\"]

CONTRACTIONS = ["it's", "don't", "we're", "you've", "I'm", "they'll", "he'd",
                "isn't", "won't", "she's", "that's", "I'd", "we'll", "y'all",
                "O'Neill", "rock 'n' roll", "'tis", "'EM", "IT'S"]

NUMBERS = ["0", "7", "42", "1024", "50257", "3.14159", "1,000,000", "2026",
           "0x1f", "1e-5", "-12", "½", "７７７", "٣٤٥", "²³"]

WHITESPACE_TORTURE = [
    "a b", "a  b", "a   b", "a    b", " a", "  a", "a ", "a  ",
    "\ta", "a\t", "\t a", "a \t", "a\tb", "a\t\tb", "a \t b",
    "\na", "a\n", "a\nb", "a\n\nb", "a\r\nb", "a\n \nb",
    " ", "  ", "\t", "\n", "\r\n", " \t\n", " a", "a b",
    " wide ", "x　y",
]


def build_sentences():
    rng = random.Random(SEED)
    sentences = []

    # Plain templated prose.
    for _ in range(520):
        n = rng.randint(3, 12)
        words = [rng.choice(WORDS) for _ in range(n)]
        if rng.random() < 0.3:
            words[0] = words[0].capitalize()
        sep = rng.choice([" ", " ", " ", "  "])
        text = sep.join(words) + rng.choice(["", ".", "!", "?", "...", ""])
        sentences.append(text)

    # Contractions, numbers, punctuation mixes.
    for _ in range(220):
        parts = [
            rng.choice(WORDS),
            rng.choice(CONTRACTIONS),
            rng.choice(NUMBERS),
            rng.choice(PUNCT),
            rng.choice(WORDS),
        ]
        rng.shuffle(parts)
        sentences.append(" ".join(parts))

    # Unicode-heavy lines.
    for _ in range(220):
        parts = [rng.choice(UNICODE_WORDS) for _ in range(rng.randint(1, 5))]
        if rng.random() < 0.5:
            parts.insert(rng.randrange(len(parts) + 1), rng.choice(WORDS))
        sentences.append(rng.choice(["", " "]).join(parts))

    # Fixed edge cases.
    sentences += [
        "",
        "Hello world",
        "Libertarian",
        "Homo sapiens and Aliens",
        " Korea Tokyo chloride century",
        "don't stop believing",
        "x",
        "'s",
        "a's",
        "B'n'M",
        "12,345.67th",
        "tab\tseparated\tvalues",
        "trailing spaces   ",
        "   leading spaces",
        "mixed \t \n whitespace",
        "ALLCAPS lowercase MiXeD",
        "ⅧⅨⅩ are numerals",
        "combining: é vs é",
        "zero​width and joiner 🧑‍🚀",
        "quote “nested 'inner'” end",
    ]
    sentences += WHITESPACE_TORTURE
    return sentences


# ---------------------------------------------------------------------------
# Independent reference: the classic byte-level BPE encoder algorithm.
# ---------------------------------------------------------------------------

PAT = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)


def bytes_to_unicode():
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, (chr(c) for c in cs)))


BYTE_ENCODER = bytes_to_unicode()


def get_pairs(word):
    return {(word[i], word[i + 1]) for i in range(len(word) - 1)}


def bpe(token, ranks, cache={}):
    if token in cache:
        return cache[token]
    word = tuple(token)
    pairs = get_pairs(word)
    while pairs:
        bigram = min(pairs, key=lambda pair: ranks.get(pair, float("inf")))
        if bigram not in ranks:
            break
        first, second = bigram
        new_word = []
        i = 0
        while i < len(word):
            try:
                j = word.index(first, i)
            except ValueError:
                new_word.extend(word[i:])
                break
            new_word.extend(word[i:j])
            i = j
            if word[i] == first and i < len(word) - 1 and word[i + 1] == second:
                new_word.append(first + second)
                i += 2
            else:
                new_word.append(word[i])
                i += 1
        word = tuple(new_word)
        pairs = get_pairs(word)
    cache[token] = word
    return word


def reference_encode(text, vocab, ranks):
    ids = []
    for tok in PAT.findall(text):
        mapped = "".join(BYTE_ENCODER[b] for b in tok.encode("utf-8"))
        for piece in bpe(mapped, ranks):
            ids.append(vocab[piece])
    return ids


def main():
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    sentences = build_sentences()
    print(f"{len(sentences)} fixture sentences")

    trainer_input = [s for s in sentences if s] * 3
    tok = ByteLevelBPETokenizer(add_prefix_space=False)
    tok.train_from_iterator(
        trainer_input,
        vocab_size=VOCAB_SIZE,
        min_frequency=2,
        show_progress=False,
        special_tokens=["<|endoftext|>"],
    )
    tok.save_model(str(FIXTURE_DIR))
    print(f"trained vocab of {tok.get_vocab_size()} tokens")

    # Every byte-level char must be present or arbitrary input can't encode.
    vocab = json.loads((FIXTURE_DIR / "vocab.json").read_text())
    alphabet = set(ByteLevel.alphabet())
    missing = alphabet - set(vocab)
    assert not missing, f"byte alphabet incomplete: {sorted(missing)[:8]}"

    oracle = ByteLevelBPETokenizer(
        str(FIXTURE_DIR / "vocab.json"),
        str(FIXTURE_DIR / "merges.txt"),
        add_prefix_space=False,
    )

    merges = (FIXTURE_DIR / "merges.txt").read_text().splitlines()
    if merges and merges[0].startswith("#"):
        merges = merges[1:]
    ranks = {tuple(line.split(" ")): i for i, line in enumerate(merges) if line}

    mismatches = 0
    with (FIXTURE_DIR / "encode_fixtures.jsonl").open("w") as out:
        for text in sentences:
            ids = oracle.encode(text).ids
            ref = reference_encode(text, vocab, ranks)
            if ids != ref:
                mismatches += 1
                print(f"MISMATCH {text!r}: oracle={ids} reference={ref}")
            assert oracle.decode(ids) == text, f"decode round-trip failed: {text!r}"
            out.write(json.dumps({"text": text, "ids": ids}) + "\n")

    assert mismatches == 0, f"{mismatches} reference mismatches"
    print("oracle and independent reference agree on all fixtures")


if __name__ == "__main__":
    main()
