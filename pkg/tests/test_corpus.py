import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlseg.corpus import (
    CorpusManifest,
    LanguageProfile,
    Paragraph,
    PunctuationInventory,
    TrainingWindow,
    build_punct_inventory,
    make_training_windows,
    normalize_text,
    read_paragraphs,
    sample_paragraphs,
)

EN = LanguageProfile("en")
JA = LanguageProfile("ja", uses_whitespace=False)

texts = st.text(alphabet=st.sampled_from(list("ab .,\n\n  é漢")), max_size=60)


def normalize_oracle(raw, uses_whitespace):
    """Two-pass scan: collapse newline runs, then fix the spaces after them."""
    out = []
    for ch in raw:
        if ch == "\n" and out and out[-1] == "\n":
            continue
        out.append(ch)
    while out and out[0] == "\n":
        out.pop(0)
    while out and out[-1] == "\n":
        out.pop()
    if not uses_whitespace:
        return "".join(out)
    res = []
    i = 0
    while i < len(out):
        res.append(out[i])
        if out[i] == "\n":
            res.append(" ")
            i += 1
            while i < len(out) and out[i] == " ":
                i += 1
            continue
        i += 1
    return "".join(res)


class TestNormalize:
    def test_examples(self):
        assert normalize_text("a\n\n\nb", EN) == "a\n b"
        assert normalize_text("a\nb", JA) == "a\nb"
        assert normalize_text("a\n  b", EN) == "a\n b"
        assert normalize_text("", EN) == ""

    def test_matches_oracle_on_random_strings(self):
        rng = np.random.default_rng(0)
        alphabet = list("ab \n.é")
        for _ in range(1000):
            raw = "".join(rng.choice(alphabet, size=int(rng.integers(0, 30))))
            for prof in (EN, JA):
                assert normalize_text(raw, prof) == normalize_oracle(raw, prof.uses_whitespace)

    @given(texts)
    def test_idempotent(self, raw):
        for prof in (EN, JA):
            once = normalize_text(raw, prof)
            assert normalize_text(once, prof) == once

    @given(texts)
    def test_newline_structure(self, raw):
        out = normalize_text(raw, EN)
        assert "\n\n" not in out
        assert not out.startswith("\n") and not out.endswith("\n")
        for i, ch in enumerate(out):
            if ch == "\n":
                assert out[i + 1] == " " and (i + 2 == len(out) or out[i + 2] != " ")


class TestProfiles:
    def test_validation(self):
        with pytest.raises(ValueError):
            LanguageProfile("")
        with pytest.raises(ValueError):
            LanguageProfile("en", ends_with_punct_ratio_cap=1.5)

    def test_paragraph_rejects_newline(self):
        with pytest.raises(ValueError):
            Paragraph("a\nb", "en")
        with pytest.raises(ValueError):
            Paragraph("", "en")


def _paras(n_punct, n_other):
    return [Paragraph(f"p{i}.", "en") for i in range(n_punct)] + [Paragraph(f"o{i}", "en") for i in range(n_other)]


class TestSampleParagraphs:
    inv = PunctuationInventory(".!")

    def test_ninety_thirty(self):
        out = sample_paragraphs(_paras(90, 30), self.inv, 0.10, rng_seed=1)
        n_other = sum(not p.text.endswith(".") for p in out)
        assert len(out) - n_other == 90 and n_other == 10

    def test_all_punct_is_noop(self):
        paras = _paras(7, 0)
        assert sample_paragraphs(paras, self.inv, 0.0, 3) == paras

    def test_five_five(self):
        out = sample_paragraphs(_paras(5, 5), self.inv, 0.10, rng_seed=7)
        # exhaustive oracle: largest r with r / (5 + r) <= 0.1
        best = max(r for r in range(6) if r / (5 + r) <= 0.10)
        assert best == 0
        assert len(out) == 5 + best

    def test_all_other_keeps_one(self):
        out = sample_paragraphs(_paras(0, 4), self.inv, 0.10, 0)
        assert len(out) == 1

    def test_cap_validation(self):
        with pytest.raises(ValueError):
            sample_paragraphs(_paras(1, 1), self.inv, -0.1, 0)

    @settings(max_examples=60)
    @given(st.integers(0, 40), st.integers(0, 40), st.floats(0.0, 1.0), st.integers(0, 2**31))
    def test_ratio_subsequence_and_determinism(self, n_p, n_o, cap, seed):
        rng = np.random.default_rng(seed)
        paras = _paras(n_p, n_o)
        paras = [paras[i] for i in rng.permutation(len(paras))]
        out = sample_paragraphs(paras, self.inv, cap, seed)
        assert out == sample_paragraphs(paras, self.inv, cap, seed)
        it = iter(paras)
        assert all(any(p is q for q in it) for p in out)
        n_other = sum(not p.text.endswith(".") for p in out)
        assert sum(p.text.endswith(".") for p in out) == n_p
        if n_p > 0:
            assert n_other / len(out) <= cap + 1e-12
        if paras:
            assert out


class TestInventory:
    def test_top_k(self):
        inv = build_punct_inventory({"en": "a.b.c!"}, k=2)
        assert inv.chars == (".", "!")

    def test_union_idempotent(self):
        a = build_punct_inventory({"en": "a.b,c!?"}, k=30)
        b = build_punct_inventory({"en": "a.b,c!?", "de": "x.y,z!?"}, k=30)
        assert len(a) == len(b)

    def test_ties_by_codepoint(self):
        inv = build_punct_inventory({"en": "!.,"}, k=3)
        assert inv.chars == tuple(sorted("!.,"))

    def test_index_map(self):
        inv = PunctuationInventory(".,?")
        assert inv.index(None) == 0
        assert [inv.index(c) for c in ".,?"] == [1, 2, 3]
        assert [inv.char(i) for i in range(4)] == [None, ".", ",", "?"]
        with pytest.raises(KeyError):
            inv.index("a")

    def test_invalid_inventories(self):
        with pytest.raises(ValueError):
            PunctuationInventory(["\n"])
        with pytest.raises(ValueError):
            PunctuationInventory("..")

    def test_json_round_trip(self, tmp_path):
        inv = PunctuationInventory("。.,")
        inv.save(tmp_path / "inv.json")
        back = PunctuationInventory.load(tmp_path / "inv.json")
        assert back == inv and back.hash == inv.hash
        assert json.loads(inv.to_json()) == [ord(c) for c in "。.,"]

    @given(st.text(max_size=80))
    def test_never_letters_digits_or_newline(self, text):
        inv = build_punct_inventory({"xx": text}, k=30)
        for ch in inv.chars:
            assert ch != "\n" and not ch.isalnum()


class TestWindows:
    def test_exact_multiple(self):
        ws = make_training_windows("a" * 1024, 512)
        assert [w.pad_len for w in ws] == [0, 0]

    def test_partial(self):
        ws = make_training_windows("a" * 513, 512)
        assert len(ws) == 2 and ws[1].pad_len == 511

    def test_empty(self):
        assert make_training_windows("", 8) == []
        with pytest.raises(ValueError):
            make_training_windows("abc", 1)

    def test_lossless(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            text = "".join(rng.choice(list("ab.\n é漢"), size=int(rng.integers(1, 300))))
            L = int(rng.integers(2, 64))
            ws = make_training_windows(text, L)
            assert "".join(w.text for w in ws) == text
            assert all(len(w.codepoints) == L for w in ws)

    def test_pad_invariant(self):
        with pytest.raises(ValueError):
            TrainingWindow(np.zeros(4, dtype=np.int32), 4)


def test_manifest_and_read(tmp_path):
    (tmp_path / "en.txt").write_text("First para.\n\n  \nSecond para\n", encoding="utf-8")
    m = tmp_path / "m.json"
    m.write_text(json.dumps({"languages": [{"lang_id": "en", "uses_whitespace": True, "path": "en.txt"}]}))
    man = CorpusManifest.load(m)
    paras = man.read()["en"]
    assert [p.text for p in paras] == ["First para.", "Second para"]
    assert len(man.file_hashes()["en"]) == 64
    assert read_paragraphs(tmp_path / "en.txt", "en") == paras


def test_manifest_malformed(tmp_path):
    m = tmp_path / "m.json"
    m.write_text("{not json")
    with pytest.raises(ValueError):
        CorpusManifest.load(m)
