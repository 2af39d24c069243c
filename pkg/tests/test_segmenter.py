import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from nlseg.corpus import LanguageProfile, PunctuationInventory
from nlseg.encoder import EncoderConfig, EncoderModel, sigmoid
from nlseg.metrics import BoundarySet, GoldText, UndefinedRecallError
from nlseg.segmenter import (
    THRESHOLD_GRID,
    AdapterWeights,
    SegmenterConfig,
    SingleClassError,
    extract_sentences,
    fit_adapter_features,
    fit_logistic,
    fit_punct_adapter,
    score_newlines,
    score_punct_adapter,
    score_text,
    segment,
    segment_threshold,
    sentence_spans,
    tune_threshold,
    tune_threshold_scores,
    window_starts,
)

INV = PunctuationInventory(".,")


@pytest.fixture(scope="module")
def model():
    cfg = EncoderConfig(num_layers=1, hidden_dim=8, num_heads=2, max_len=64, embed_buckets=257)
    m = EncoderModel(cfg, INV, seed=3)
    rng = np.random.default_rng(0)
    for k, v in m.params.items():
        if not k.endswith(".g"):
            v[...] = rng.normal(0, 0.3, v.shape).astype(v.dtype)
    return m


def random_text(rng, n):
    return "".join(rng.choice(list("abc de. f,"), size=n))


class TestWindows:
    def test_window_starts(self):
        assert window_starts(0, 8, 4) == []
        assert window_starts(5, 8, 4) == [0]
        assert window_starts(12, 8, 4) == [0, 4]
        assert window_starts(13, 8, 4) == [0, 4, 5]

    def test_short_text_equals_single_window(self, model):
        t = "hello there. ok"
        out = model.encode(t)
        assert_allclose(score_newlines(model, t), sigmoid(out.newline_logits.astype(np.float64)), rtol=1e-6)

    def test_overlap_is_mean_of_two_windows(self, model):
        rng = np.random.default_rng(1)
        W, S = 16, 8
        t = random_text(rng, W + S)
        cfg = SegmenterConfig(window_len=W, stride=S)
        got = score_newlines(model, t, cfg)
        a = sigmoid(model.encode(t[:W]).newline_logits.astype(np.float64))
        b = sigmoid(model.encode(t[S:]).newline_logits.astype(np.float64))
        assert_allclose(got[S:W], (a[S:] + b[:W - S]) / 2, rtol=1e-6)
        assert_allclose(got[:S], a[:S], rtol=1e-6)

    def test_matches_explicit_coverage(self, model):
        rng = np.random.default_rng(2)
        t = random_text(rng, 3000)
        cfg = SegmenterConfig(window_len=64, stride=32)
        probs, logits = score_text(model, t, cfg)
        acc = [[] for _ in t]
        lacc = [[] for _ in t]
        starts = sorted({min(s, len(t) - 64) for s in range(0, len(t), 32)})
        for s in starts:
            out = model.encode(t[s:s + 64])
            for j in range(64):
                acc[s + j].append(sigmoid(float(out.newline_logits[j])))
                lacc[s + j].append(out.punct_logits[j].astype(np.float64))
        assert_allclose(probs, [np.mean(v) for v in acc], rtol=1e-6)
        assert_allclose(logits, [np.mean(v, axis=0) for v in lacc], rtol=1e-5, atol=1e-6)
        assert ((probs > 0) & (probs < 1)).all()

    def test_empty_and_newline(self, model):
        assert score_newlines(model, "").shape == (0,)
        with pytest.raises(ValueError):
            score_newlines(model, "a\nb")


class TestThreshold:
    def test_examples(self):
        assert segment_threshold("abc", [0.001, 0.5, 0.002], 0.01).indices == (1,)
        assert len(segment_threshold("abc", [0.1, 0.2, 0.3], 0.31)) == 0

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
    def test_superlevel_nesting(self, scores):
        text = "x" * len(scores)
        prev = None
        for a in THRESHOLD_GRID:
            cur = set(segment_threshold(text, scores, a))
            if prev is not None:
                assert cur <= prev
            prev = cur

    def test_separable_gives_smallest_grid_point_in_gap(self):
        scores = np.array([0.001, 0.2, 0.002, 0.3])
        labels = np.array([0, 1, 0, 1], bool)
        a, f = tune_threshold_scores([scores], [labels])
        assert f == 1.0
        in_gap = [g for g in THRESHOLD_GRID if 0.002 < g <= 0.2]
        assert a == in_gap[0]

    def test_boundary_vs_distractor(self):
        scores = np.array([0.01, 0.2, 0.05, 0.3, 0.0])
        labels = np.array([0, 0, 0, 1, 0], bool)
        a, f = tune_threshold_scores([scores], [labels])
        # brute force over the grid
        f1s = []
        for g in THRESHOLD_GRID:
            p = scores >= g
            tp = np.sum(p & labels)
            f1s.append(2 * tp / (p.sum() + labels.sum()))
        assert a == THRESHOLD_GRID[int(np.argmax(f1s))]
        assert 0.2 < a <= 0.3

    def test_no_gold(self):
        with pytest.raises(UndefinedRecallError):
            tune_threshold_scores([np.zeros(3)], [np.zeros(3, bool)])

    def test_tune_threshold_on_model(self, model):
        gt = GoldText("ab. cd. ef", BoundarySet([2, 6], 10))
        a = tune_threshold(model, [gt])
        assert a in THRESHOLD_GRID


class TestAdapter:
    def separable(self, rng, n=200):
        X = rng.normal(0, 1, (n, 3))
        y = rng.random(n) < 0.3
        # class 1's logit exceeds 1.0 exactly at boundaries
        X[:, 1] = np.where(y, 1.0 + rng.random(n), 1.0 - rng.random(n))
        return X, y

    def test_separable_fit_is_perfect(self):
        rng = np.random.default_rng(0)
        X, y = self.separable(rng)
        ad = fit_adapter_features(X, y)
        p = 1 / (1 + np.exp(-(X @ ad.weights + ad.intercept)))
        assert ((p >= 0.5) == y).all()
        assert (p[y] > 0.5).all() and (p[~y] < 0.5).all()

    def test_single_class(self):
        with pytest.raises(SingleClassError):
            fit_logistic(np.zeros((4, 2)), np.zeros(4))

    def test_matches_sklearn_unpenalized(self):
        from sklearn.linear_model import LogisticRegression

        rng = np.random.default_rng(1)
        X = rng.normal(0, 1, (300, 3))
        y = (X @ [1.0, -2.0, 0.5] + rng.normal(0, 1, 300)) > 0.3
        w, b, _ = fit_logistic(X, y)
        ref = LogisticRegression(penalty=None, tol=1e-10, max_iter=10_000).fit(X, y)
        assert_allclose(w, ref.coef_[0], rtol=1e-4)
        assert b == pytest.approx(ref.intercept_[0], rel=1e-4)

    def test_convex_two_inits(self):
        rng = np.random.default_rng(2)
        X = rng.normal(0, 1, (200, 4))
        y = rng.random(200) < 0.4
        _, _, l1 = fit_logistic(X, y, init=np.zeros(5))
        _, _, l2 = fit_logistic(X, y, init=rng.normal(0, 3, 5))
        assert abs(l1 - l2) < 1e-6

    def test_zero_adapter_gives_half(self, model):
        ad = AdapterWeights(np.zeros(INV.num_classes), 0.0, inventory_hash=INV.hash)
        s = score_punct_adapter(model, ad, "abc. de")
        assert_allclose(s, 0.5)
        assert len(s) == 7

    def test_inventory_mismatch(self, model):
        ad = AdapterWeights(np.zeros(INV.num_classes), 0.0, inventory_hash="nope")
        with pytest.raises(ValueError):
            score_punct_adapter(model, ad, "abc")

    def test_fit_on_model_and_segment(self, model):
        gts = [GoldText("ab. cd. ef gh. ij", BoundarySet([2, 6, 13], 17))]
        ad = fit_punct_adapter(model, gts, tune_threshold=True)
        assert len(ad.a) == INV.num_classes + 1
        b = segment(model, gts[0].text, SegmenterConfig(mode="Punct", adapter=ad))
        assert isinstance(b, BoundarySet)

    def test_json_round_trip(self, tmp_path):
        ad = AdapterWeights(np.array([0.5, -1.0, 2.0]), 0.25, 0.4, "abc")
        ad.save(tmp_path / "a.json")
        assert set(json.loads((tmp_path / "a.json").read_text())) == {"inventory_hash", "weights",
                                                                      "intercept", "threshold"}
        back = AdapterWeights.load(tmp_path / "a.json")
        assert_allclose(back.a, ad.a) and back.threshold == 0.4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SegmenterConfig(mode="Punct")
        with pytest.raises(ValueError):
            SegmenterConfig(mode="X")
        with pytest.raises(ValueError):
            SegmenterConfig(window_len=4, stride=8)


class TestExtraction:
    def test_examples(self):
        assert extract_sentences("Hi. Ok.", BoundarySet([2], 7)) == ["Hi.", "Ok."]
        assert extract_sentences("Hi. Ok.", BoundarySet([], 7)) == ["Hi. Ok."]

    def test_no_trim_without_whitespace(self):
        ja = LanguageProfile("ja", uses_whitespace=False)
        assert extract_sentences("あ。 い", BoundarySet([1], 4), ja) == ["あ。", " い"]

    @settings(max_examples=200)
    @given(st.text(alphabet=st.sampled_from(list("ab .")), min_size=1, max_size=40), st.data())
    def test_lossless(self, text, data):
        idx = data.draw(st.sets(st.integers(0, len(text) - 1)))
        b = BoundarySet(idx, len(text))
        spans = sentence_spans(text, b)
        # restoring the trimmed separators reproduces the input
        rebuilt = []
        pos = 0
        for s, e in spans:
            gap = text[pos:s]
            assert gap.strip() == ""
            rebuilt.append(gap + text[s:e])
            pos = e
        rebuilt.append(text[pos:])
        assert "".join(rebuilt) == text
        assert all(text[s:e] for s, e in spans)
