"""Document schema, FUNSD ingestion, tokenization, and synthetic corpora."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import docadapt.docdata as dd
from docadapt.docdata import (
    FUNSD_SCHEME,
    IGNORE_INDEX,
    SROIE_SCHEME,
    Box,
    Document,
    QAPair,
    SyntheticDomainSpec,
    Word,
    ZERO_BOX,
    build_vocab,
    detokenize,
    filter_qa_by_keywords,
    generate_synthetic,
    ingest_funsd,
    load_corpus,
    load_manifest,
    make_box,
    normalize_box,
    save_corpus,
    save_manifest,
    tokenize,
    tokenize_qa,
)

LAYOUT_KEYWORDS = ["top", "bottom", "right", "left", "header", "page number"]


# ---------------------------------------------------------------------------
# Boxes
# ---------------------------------------------------------------------------


def test_normalize_box_full_page():
    box = normalize_box(0, 100, 0, 50, page_w=100, page_h=50)
    assert box.as_tuple() == (0, 1000, 0, 1000, 1000, 1000)


def test_normalize_box_interior():
    box = normalize_box(25, 75, 10, 20, page_w=100, page_h=100)
    assert box.as_tuple() == (250, 750, 100, 200, 500, 100)


def test_normalize_box_zero_width_is_valid():
    box = normalize_box(40, 40, 10, 20, page_w=100, page_h=100)
    assert box.w == 0 and box.x_min == box.x_max == 400


def test_normalize_box_clamps_and_counts():
    before = dd.clamp_warnings
    box = normalize_box(-5, 120, 0, 50, page_w=100, page_h=50)
    assert dd.clamp_warnings == before + 1
    assert box.x_min == 0 and box.x_max == 1000


def test_normalize_box_in_page_does_not_count():
    before = dd.clamp_warnings
    normalize_box(1, 2, 3, 4, page_w=100, page_h=100)
    assert dd.clamp_warnings == before


@pytest.mark.parametrize("page_w,page_h", [(0, 50), (100, 0), (-1, 50), (100, -2)])
def test_normalize_box_rejects_bad_page(page_w, page_h):
    with pytest.raises(ValueError, match="page dims must be positive"):
        normalize_box(0, 10, 0, 10, page_w, page_h)


def test_box_rejects_inverted_extent():
    with pytest.raises(ValueError, match="degenerate box"):
        make_box(10, 5, 0, 0)


def test_box_rejects_inconsistent_width():
    with pytest.raises(ValueError, match="inconsistent w/h"):
        Box(0, 10, 0, 10, 99, 10)


def test_zero_box():
    assert ZERO_BOX.as_tuple() == (0, 0, 0, 0, 0, 0)


# ---------------------------------------------------------------------------
# Label schemes
# ---------------------------------------------------------------------------


def test_scheme_sizes():
    assert FUNSD_SCHEME.num_classes == 7
    assert SROIE_SCHEME.num_classes == 9
    assert FUNSD_SCHEME.names[0] == "O"
    assert FUNSD_SCHEME.names == [
        "O", "B-HEADER", "I-HEADER", "B-QUESTION", "I-QUESTION", "B-ANSWER", "I-ANSWER",
    ]


def test_scheme_id_round_trip():
    for scheme in (FUNSD_SCHEME, SROIE_SCHEME):
        for i, name in enumerate(scheme.names):
            assert scheme.id_of(name) == i


def test_scheme_unknown_label():
    with pytest.raises(ValueError, match="unknown label 'B-TOTAL'"):
        FUNSD_SCHEME.id_of("B-TOTAL")


def test_intermediate_of_maps_begin_to_inside():
    for scheme in (FUNSD_SCHEME, SROIE_SCHEME):
        assert scheme.intermediate_of(0) == 0
        for t in scheme.types:
            b, i = scheme.id_of(f"B-{t}"), scheme.id_of(f"I-{t}")
            assert scheme.intermediate_of(b) == i
            assert scheme.intermediate_of(i) == i


# ---------------------------------------------------------------------------
# Document invariants
# ---------------------------------------------------------------------------


def _word(text, x0=0, x1=10, y0=0, y1=10):
    return Word(text, make_box(x0, x1, y0, y1))


def test_document_check_label_length():
    doc = Document(id="d", words=[_word("a")], page_w=100, page_h=100, token_labels=[0, 0])
    with pytest.raises(ValueError, match="length mismatch"):
        doc.check()


def test_document_check_box_grid():
    doc = Document(id="d", words=[Word("a", make_box(0, 1200, 0, 10))], page_w=1, page_h=1)
    with pytest.raises(ValueError, match="out of grid"):
        doc.check()


def test_document_check_span_text():
    doc = Document(
        id="d",
        words=[_word("a"), _word("b")],
        page_w=100,
        page_h=100,
        qa_pairs=[QAPair(question="q ?", answer_text="zzz", answer_span=(0, 1))],
    )
    with pytest.raises(ValueError, match="answer text"):
        doc.check()


def test_document_check_span_range():
    doc = Document(
        id="d",
        words=[_word("a")],
        page_w=100,
        page_h=100,
        qa_pairs=[QAPair(question="q ?", answer_text="a", answer_span=(0, 5))],
    )
    with pytest.raises(ValueError, match="out of range"):
        doc.check()


# ---------------------------------------------------------------------------
# FUNSD-format ingestion
# ---------------------------------------------------------------------------


def _write_form(path, blocks, **extra):
    payload = {"form": blocks}
    payload.update(extra)
    path.write_text(json.dumps(payload))


def test_ingest_minimal_question_block(tmp_path):
    _write_form(
        tmp_path / "form0.json",
        [
            {
                "id": 0,
                "label": "question",
                "words": [
                    {"text": "name", "box": [10, 20, 50, 30]},
                    {"text": "field", "box": [55, 20, 90, 30]},
                ],
            }
        ],
        page_w=100,
        page_h=50,
    )
    docs = ingest_funsd(tmp_path)
    assert len(docs) == 1
    doc = docs[0]
    assert doc.id == "form0"
    assert [w.text for w in doc.words] == ["name", "field"]
    names = [FUNSD_SCHEME.names[i] for i in doc.token_labels]
    assert names == ["B-QUESTION", "I-QUESTION"]


def test_ingest_empty_form(tmp_path):
    _write_form(tmp_path / "empty.json", [], page_w=100, page_h=100)
    docs = ingest_funsd(tmp_path)
    assert len(docs) == 1
    assert docs[0].words == [] and docs[0].token_labels == []


def test_ingest_other_maps_to_outside(tmp_path):
    _write_form(
        tmp_path / "f.json",
        [{"id": 1, "label": "other", "words": [
            {"text": "page", "box": [0, 0, 5, 5]},
            {"text": "one", "box": [6, 0, 9, 5]},
        ]}],
        page_w=10,
        page_h=10,
    )
    (doc,) = ingest_funsd(tmp_path)
    assert doc.token_labels == [0, 0]


def test_ingest_skips_whitespace_words(tmp_path):
    _write_form(
        tmp_path / "f.json",
        [{"id": 0, "label": "header", "words": [
            {"text": "  ", "box": [0, 0, 5, 5]},
            {"text": "title", "box": [6, 0, 9, 5]},
        ]}],
        page_w=10,
        page_h=10,
    )
    (doc,) = ingest_funsd(tmp_path)
    assert [w.text for w in doc.words] == ["title"]
    assert doc.token_labels == [FUNSD_SCHEME.id_of("B-HEADER")]


def test_ingest_unknown_label(tmp_path):
    _write_form(tmp_path / "bad.json", [{"id": 0, "label": "title", "words": []}])
    with pytest.raises(ValueError, match=r"bad\.json.*title.*answer") as exc:
        ingest_funsd(tmp_path)
    assert "question" in str(exc.value)


def test_ingest_malformed_box(tmp_path):
    _write_form(
        tmp_path / "bad.json",
        [{"id": 7, "label": "question", "words": [{"text": "x", "box": [50, 20, 10, 30]}]}],
        page_w=100,
        page_h=100,
    )
    with pytest.raises(ValueError, match=r"bad\.json.*record 7.*malformed box"):
        ingest_funsd(tmp_path)


def test_ingest_prefers_annotations_subdir(tmp_path):
    anno = tmp_path / "annotations"
    anno.mkdir()
    _write_form(anno / "inner.json", [], page_w=10, page_h=10)
    _write_form(tmp_path / "outer.json", [], page_w=10, page_h=10)
    docs = ingest_funsd(tmp_path)
    assert [d.id for d in docs] == ["inner"]


def test_ingest_page_fallback_uses_extent(tmp_path):
    _write_form(
        tmp_path / "f.json",
        [{"id": 0, "label": "other", "words": [{"text": "x", "box": [10, 20, 50, 30]}]}],
    )
    (doc,) = ingest_funsd(tmp_path)
    assert doc.page_w == 50 and doc.page_h == 30
    assert doc.words[0].box.x_max == 1000 and doc.words[0].box.y_max == 1000
    assert doc.words[0].box.x_min == 200  # 10/50 of the grid


def test_ingest_sorted_by_filename(tmp_path):
    _write_form(tmp_path / "b.json", [], page_w=10, page_h=10)
    _write_form(tmp_path / "a.json", [], page_w=10, page_h=10)
    assert [d.id for d in ingest_funsd(tmp_path)] == ["a", "b"]


# ---------------------------------------------------------------------------
# QA keyword filter
# ---------------------------------------------------------------------------


def _qa(question):
    return QAPair(question=question, answer_text="x", answer_span=(0, 0))


def test_filter_qa_by_keywords_selects_layout_questions():
    pairs = [
        _qa("what is at the top of the form ?"),
        _qa("what is the total ?"),
        _qa("which value sits in the header row ?"),
        _qa("what is the page number ?"),
        _qa("who is the owner ?"),
    ]
    kept = filter_qa_by_keywords(pairs, LAYOUT_KEYWORDS)
    assert [q.question for q in kept] == [
        "what is at the top of the form ?",
        "which value sits in the header row ?",
        "what is the page number ?",
    ]


def test_filter_qa_case_insensitive():
    pairs = [_qa("TOP left corner value ?")]
    assert filter_qa_by_keywords(pairs, ["top"]) == pairs
    assert filter_qa_by_keywords(pairs, ["ToP"]) == pairs


def test_filter_qa_empty_keywords():
    assert filter_qa_by_keywords([_qa("top ?")], []) == []


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


def test_vocab_requires_specials():
    with pytest.raises(ValueError, match="missing special token"):
        dd.Vocab(["a", "b"])


def test_vocab_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        dd.Vocab(dd.SPECIAL_TOKENS + ["a", "a"])


def test_build_vocab_includes_question_words(tiny_docs):
    vocab = build_vocab(tiny_docs, size=400)
    for w in ("what", "is", "the", "?"):
        assert w in vocab.index


def test_word_pieces_greedy_longest_match():
    vocab = dd.Vocab(dd.SPECIAL_TOKENS + ["a", "##a", "b", "##b", "ab", "abc", "##c"])
    assert vocab.word_pieces("abc") == ["abc"]
    assert vocab.word_pieces("ab") == ["ab"]
    assert vocab.word_pieces("abab") == ["ab", "##a", "##b"]
    assert vocab.word_pieces("ABC") == ["abc"]  # lower-cased first


def test_word_pieces_unseen_char_is_unk():
    vocab = dd.Vocab(dd.SPECIAL_TOKENS + ["a", "##a"])
    assert vocab.word_pieces("ax") == [dd.UNK]


def test_vocab_save_load_round_trip(tmp_path, tiny_vocab):
    path = tmp_path / "vocab.txt"
    tiny_vocab.save(path)
    loaded = dd.Vocab.load(path)
    assert loaded.pieces == tiny_vocab.pieces
    assert loaded.special_ids == tiny_vocab.special_ids


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------


def _three_word_setup():
    vocab = dd.Vocab(dd.SPECIAL_TOKENS + ["alpha", "beta", "gamma", "##a", "a"])
    doc = Document(
        id="d",
        words=[_word("alpha", 0, 10), _word("beta", 12, 20), _word("gamma", 22, 30)],
        page_w=100,
        page_h=100,
        token_labels=[
            FUNSD_SCHEME.id_of("B-QUESTION"),
            FUNSD_SCHEME.id_of("B-ANSWER"),
            FUNSD_SCHEME.id_of("O"),
        ],
    )
    return vocab, doc


def test_tokenize_attention_layout():
    vocab, doc = _three_word_setup()
    tok = tokenize(doc, vocab, max_len=8, scheme=FUNSD_SCHEME)
    assert tok.attention_mask == [1, 1, 1, 1, 1, 0, 0, 0]
    assert tok.token_ids[0] == vocab.cls_id
    assert tok.token_ids[4] == vocab.sep_id
    assert tok.token_ids[5:] == [vocab.pad_id] * 3
    assert tok.segment_ids == [0] * 8
    assert len(tok.token_ids) == len(tok.boxes) == len(tok.label_ids) == 8


def test_tokenize_specials_carry_ignore_and_zero_box():
    vocab, doc = _three_word_setup()
    tok = tokenize(doc, vocab, max_len=8, scheme=FUNSD_SCHEME)
    for pos in tok.special_positions:
        assert tok.label_ids[pos] == IGNORE_INDEX
        assert tok.boxes[pos] == ZERO_BOX
    assert tok.special_positions == [0, 4, 5, 6, 7]
    assert tok.word_ids[1:4] == [0, 1, 2]


def test_tokenize_truncates_to_content_budget():
    vocab = dd.Vocab(dd.SPECIAL_TOKENS + ["a", "##a"])
    doc = Document(id="d", words=[_word("a")] * 600, page_w=100, page_h=100)
    tok = tokenize(doc, vocab, max_len=512)
    assert sum(tok.attention_mask) == 512
    content = [i for i in tok.token_ids if i not in vocab.special_ids]
    assert len(content) == 510
    assert tok.word_ids[1:511] == list(range(510))


def test_tokenize_continuation_pieces_inherit_box_and_intermediate_label():
    vocab = dd.Vocab(dd.SPECIAL_TOKENS + ["alpha", "##b", "##e", "##t", "##a"])
    box = make_box(5, 50, 0, 10)
    doc = Document(
        id="d",
        words=[Word("alphabeta", box)],
        page_w=100,
        page_h=100,
        token_labels=[FUNSD_SCHEME.id_of("B-ANSWER")],
    )
    tok = tokenize(doc, vocab, max_len=12, scheme=FUNSD_SCHEME)
    n = 5  # alpha ##b ##e ##t ##a
    labels = tok.label_ids[1 : 1 + n]
    assert labels[0] == FUNSD_SCHEME.id_of("B-ANSWER")
    assert labels[1:] == [FUNSD_SCHEME.id_of("I-ANSWER")] * (n - 1)
    assert tok.boxes[1 : 1 + n] == [box] * n
    assert tok.word_ids[1 : 1 + n] == [0] * n


def test_tokenize_without_scheme_ignores_labels():
    vocab, doc = _three_word_setup()
    tok = tokenize(doc, vocab, max_len=8)
    assert set(tok.label_ids) == {IGNORE_INDEX}


def test_detokenize_round_trip(tiny_docs, tiny_vocab):
    doc = tiny_docs[0]
    tok = tokenize(doc, tiny_vocab, max_len=128)
    expected = [p for w in doc.words for p in tiny_vocab.word_pieces(w.text)]
    assert detokenize(tok.token_ids, tiny_vocab) == expected[:126]


def test_strip_labels_removes_all_supervision():
    vocab, doc = _three_word_setup()
    tok = tokenize(doc, vocab, max_len=8, scheme=FUNSD_SCHEME)
    bare = tok.strip_labels()
    assert set(bare.label_ids) == {IGNORE_INDEX}
    assert bare.answer_start is None and bare.answer_end is None and bare.gold_answer is None
    assert bare.token_ids == tok.token_ids and bare.attention_mask == tok.attention_mask


def test_tokenize_qa_layout_and_span():
    vocab = dd.Vocab(dd.SPECIAL_TOKENS + ["alpha", "beta", "gamma", "what", "?"])
    doc = Document(
        id="d",
        words=[_word("alpha", 0, 10), _word("beta", 12, 20), _word("gamma", 22, 30)],
        page_w=100,
        page_h=100,
        qa_pairs=[QAPair(question="what ?", answer_text="beta gamma", answer_span=(1, 2))],
    )
    tok = tokenize_qa(doc, doc.qa_pairs[0], vocab, max_len=12)
    assert tok is not None
    # [CLS] what ? [SEP] alpha beta gamma [SEP] [PAD]*4
    assert tok.token_ids[:8] == [
        vocab.cls_id,
        vocab.index["what"],
        vocab.index["?"],
        vocab.sep_id,
        vocab.index["alpha"],
        vocab.index["beta"],
        vocab.index["gamma"],
        vocab.sep_id,
    ]
    assert tok.segment_ids == [0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0]
    assert tok.attention_mask == [1] * 8 + [0] * 4
    assert (tok.answer_start, tok.answer_end) == (5, 6)
    assert tok.word_ids[:4] == [None] * 4 and tok.word_ids[4:7] == [0, 1, 2]
    assert tok.gold_answer == "beta gamma"
    assert tok.question == "what ?"


def test_tokenize_qa_none_when_span_truncated():
    vocab = dd.Vocab(dd.SPECIAL_TOKENS + ["alpha", "beta", "gamma", "what", "?"])
    doc = Document(
        id="d",
        words=[_word("alpha")] * 6 + [_word("beta"), _word("gamma")],
        page_w=100,
        page_h=100,
        qa_pairs=[QAPair(question="what ?", answer_text="beta gamma", answer_span=(6, 7))],
    )
    assert tokenize_qa(doc, doc.qa_pairs[0], vocab, max_len=10) is None


def test_tokenize_qa_none_when_question_fills_budget():
    vocab = dd.Vocab(dd.SPECIAL_TOKENS + ["alpha", "what", "?"])
    doc = Document(
        id="d",
        words=[_word("alpha")],
        page_w=100,
        page_h=100,
        qa_pairs=[QAPair(question="what what what ?", answer_text="alpha", answer_span=(0, 0))],
    )
    assert tokenize_qa(doc, doc.qa_pairs[0], vocab, max_len=7) is None


# ---------------------------------------------------------------------------
# Synthetic corpus generator
# ---------------------------------------------------------------------------


def test_generate_deterministic():
    spec = SyntheticDomainSpec(density=0.5, jitter=10, fill_rate=0.6, ink_noise=0.1)
    a = generate_synthetic(spec, 6, seed=4)
    b = generate_synthetic(spec, 6, seed=4)
    for da, db in zip(a, b):
        assert da.id == db.id
        assert da.words == db.words
        assert da.token_labels == db.token_labels
        assert da.qa_pairs == db.qa_pairs
        assert np.array_equal(da.ink_image, db.ink_image)


def test_generate_seed_changes_content():
    spec = SyntheticDomainSpec()
    a = generate_synthetic(spec, 3, seed=1)
    b = generate_synthetic(spec, 3, seed=2)
    assert any(da.words != db.words for da, db in zip(a, b))


def test_generate_unfilled_forms_have_only_header_content():
    docs = generate_synthetic(SyntheticDomainSpec(fill_rate=0.0), 20, seed=3)
    allowed = {FUNSD_SCHEME.id_of(n) for n in ("O", "B-HEADER", "I-HEADER")}
    for d in docs:
        assert set(d.token_labels) <= allowed
        assert not d.qa_pairs


def test_generate_full_fill_yields_one_qa_per_key():
    docs = generate_synthetic(SyntheticDomainSpec(fill_rate=1.0, density=1.0), 10, seed=5)
    for d in docs:
        assert len(d.qa_pairs) == 12
        for qa in d.qa_pairs:
            s, e = qa.answer_span
            assert " ".join(w.text for w in d.words[s : e + 1]) == qa.answer_text


def test_generate_count_zero_and_negative():
    assert generate_synthetic(SyntheticDomainSpec(), 0, seed=0) == []
    with pytest.raises(ValueError, match="count"):
        generate_synthetic(SyntheticDomainSpec(), -1, seed=0)


def test_generate_id_prefix():
    docs = generate_synthetic(SyntheticDomainSpec(), 2, seed=7)
    assert [d.id for d in docs] == ["syn7-00000", "syn7-00001"]
    docs = generate_synthetic(SyntheticDomainSpec(), 1, seed=7, id_prefix="tgt")
    assert docs[0].id == "tgt-00000"


def test_generate_ink_raster():
    (doc,) = generate_synthetic(SyntheticDomainSpec(ink_noise=0.2), 1, seed=0)
    assert doc.ink_image.shape == (dd.INK_H, dd.INK_W)
    assert doc.ink_image.dtype == np.uint8
    assert set(np.unique(doc.ink_image)) <= {0, 1}


def test_generate_sroie_style_labels():
    docs = generate_synthetic(
        SyntheticDomainSpec(label_style="sroie", fill_rate=1.0), 4, seed=2
    )
    for d in docs:
        assert all(0 <= l < SROIE_SCHEME.num_classes for l in d.token_labels)
        assert any(l > 0 for l in d.token_labels)


@pytest.mark.parametrize(
    "field,value",
    [
        ("lexicon", "forms-z"),
        ("label_style", "conll"),
        ("density", 0.0),
        ("density", 2.5),
        ("jitter", 61),
        ("fill_rate", -0.1),
        ("ink_noise", 0.6),
        ("other_rate", 0.9),
    ],
)
def test_spec_validate_rejects_out_of_range(field, value):
    spec = SyntheticDomainSpec(**{field: value})
    with pytest.raises(ValueError):
        spec.validate()


@settings(max_examples=12, deadline=None)
@given(
    density=st.floats(0.05, 2.0),
    jitter=st.integers(0, 60),
    fill_rate=st.floats(0.0, 1.0),
    ink_noise=st.floats(0.0, 0.5),
    other_rate=st.floats(0.0, 0.8),
    lexicon=st.sampled_from(["forms-a", "forms-b"]),
    label_style=st.sampled_from(["funsd", "sroie"]),
    seed=st.integers(0, 10**6),
)
def test_generator_valid_over_spec_space(
    density, jitter, fill_rate, ink_noise, other_rate, lexicon, label_style, seed
):
    spec = SyntheticDomainSpec(
        lexicon=lexicon,
        density=density,
        jitter=jitter,
        fill_rate=fill_rate,
        ink_noise=ink_noise,
        other_rate=other_rate,
        label_style=label_style,
    )
    docs = generate_synthetic(spec, 2, seed=seed)
    assert len(docs) == 2
    for d in docs:
        d.check()
        assert len(d.token_labels) == len(d.words)
        assert all(0 <= l < spec.scheme.num_classes for l in d.token_labels)


# ---------------------------------------------------------------------------
# Corpus persistence
# ---------------------------------------------------------------------------


def test_corpus_round_trip(tmp_path):
    docs = generate_synthetic(SyntheticDomainSpec(ink_noise=0.05, fill_rate=0.7), 4, seed=6)
    path = tmp_path / "corpus.jsonl"
    save_corpus(docs, path)
    loaded = load_corpus(path)
    assert len(loaded) == len(docs)
    for a, b in zip(docs, loaded):
        assert a.id == b.id
        assert a.words == b.words
        assert a.page_w == b.page_w and a.page_h == b.page_h
        assert a.token_labels == b.token_labels
        assert a.qa_pairs == b.qa_pairs
        assert np.array_equal(a.ink_image, b.ink_image)


def test_corpus_file_is_stable_jsonl(tmp_path):
    docs = generate_synthetic(SyntheticDomainSpec(), 2, seed=1)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_corpus(docs, p1)
    save_corpus(docs, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert len(p1.read_text().splitlines()) == 2


def test_manifest_round_trip(tmp_path):
    ids = ["b-1", "a-2", "c-3"]
    path = tmp_path / "ids.txt"
    save_manifest(ids, path)
    assert load_manifest(path) == ids
    save_manifest([], path)
    assert load_manifest(path) == []
