"""Document schema, FUNSD-format ingestion, tokenization, synthetic corpora.

Layout coordinates are kept on a 0-1000 integer grid (LayoutLM-family
convention); ``Document`` always stores normalized boxes, with the original
page size retained for ink rendering.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

GRID = 1000
IGNORE_INDEX = -100

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = [PAD, UNK, CLS, SEP, MASK]

# boxes that fall outside the page are clamped; callers can poll this
clamp_warnings = 0


@dataclass(frozen=True)
class Box:
    """Word bounding box on the 0-1000 grid: (x_min, x_max, y_min, y_max, w, h)."""

    x_min: int
    x_max: int
    y_min: int
    y_max: int
    w: int
    h: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box: {self}")
        if self.w != self.x_max - self.x_min or self.h != self.y_max - self.y_min:
            raise ValueError(f"inconsistent w/h: {self}")

    def as_tuple(self) -> tuple[int, int, int, int, int, int]:
        return (self.x_min, self.x_max, self.y_min, self.y_max, self.w, self.h)


ZERO_BOX = Box(0, 0, 0, 0, 0, 0)


def make_box(x_min: int, x_max: int, y_min: int, y_max: int) -> Box:
    return Box(x_min, x_max, y_min, y_max, x_max - x_min, y_max - y_min)


def normalize_box(
    x_min: float, x_max: float, y_min: float, y_max: float, page_w: float, page_h: float
) -> Box:
    """Scale a pixel box to the 0-1000 grid, clamping out-of-page inputs."""
    global clamp_warnings
    if page_w <= 0 or page_h <= 0:
        raise ValueError(f"page dims must be positive, got {page_w}x{page_h}")
    sx = [int(round(v * GRID / page_w)) for v in (x_min, x_max)]
    sy = [int(round(v * GRID / page_h)) for v in (y_min, y_max)]
    clamped = [min(max(v, 0), GRID) for v in sx + sy]
    if clamped != sx + sy:
        clamp_warnings += 1
    x0, x1, y0, y1 = clamped
    return make_box(x0, x1, y0, y1)


@dataclass(frozen=True)
class QAPair:
    question: str
    answer_text: str
    answer_span: tuple[int, int]  # inclusive word-index range


@dataclass(frozen=True)
class Word:
    text: str
    box: Box


@dataclass
class Document:
    id: str
    words: list[Word]
    page_w: int
    page_h: int
    token_labels: list[int] | None = None
    qa_pairs: list[QAPair] | None = None
    ink_image: np.ndarray | None = None  # binary uint8 raster (H', W')

    def check(self) -> None:
        """Raise if any schema invariant is violated."""
        for w in self.words:
            b = w.box
            if not (0 <= b.x_min <= b.x_max <= GRID and 0 <= b.y_min <= b.y_max <= GRID):
                raise ValueError(f"{self.id}: box out of grid: {b}")
        if self.token_labels is not None and len(self.token_labels) != len(self.words):
            raise ValueError(f"{self.id}: label/word length mismatch")
        for qa in self.qa_pairs or []:
            s, e = qa.answer_span
            if not (0 <= s <= e < len(self.words)):
                raise ValueError(f"{self.id}: answer span {qa.answer_span} out of range")
            joined = " ".join(w.text for w in self.words[s : e + 1])
            if joined != qa.answer_text:
                raise ValueError(
                    f"{self.id}: answer text {qa.answer_text!r} != span text {joined!r}"
                )


@dataclass(frozen=True)
class LabelScheme:
    """'O' plus begin/intermediate labels per entity type."""

    types: tuple[str, ...]

    @property
    def names(self) -> list[str]:
        out = ["O"]
        for t in self.types:
            out.extend([f"B-{t}", f"I-{t}"])
        return out

    @property
    def num_classes(self) -> int:
        return 1 + 2 * len(self.types)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown label {name!r}; valid: {self.names}") from None

    def intermediate_of(self, label_id: int) -> int:
        # O stays O, B-X -> I-X, I-X stays
        if label_id == 0:
            return 0
        return label_id + 1 if label_id % 2 == 1 else label_id


FUNSD_SCHEME = LabelScheme(("HEADER", "QUESTION", "ANSWER"))
SROIE_SCHEME = LabelScheme(("COMPANY", "DATE", "ADDRESS", "TOTAL"))


# ---------------------------------------------------------------------------
# FUNSD-format ingestion
# ---------------------------------------------------------------------------

_FUNSD_LABELS = {"header": "HEADER", "question": "QUESTION", "answer": "ANSWER", "other": None}


def ingest_funsd(directory: str | Path) -> list[Document]:
    """Read FUNSD-schema annotation files (one form per ``*.json``).

    Block labels map onto the 7-class scheme: the first word of a labeled
    block gets B-, the rest I-; ``other`` blocks map to O.  Boxes are
    normalized to the grid using the page size when the file provides one,
    otherwise the maximal box extent.
    """
    directory = Path(directory)
    if (directory / "annotations").is_dir():
        directory = directory / "annotations"
    docs = []
    for path in sorted(directory.glob("*.json")):
        with open(path) as f:
            data = json.load(f)
        blocks = data.get("form", [])
        raw_words: list[tuple[str, tuple[float, float, float, float]]] = []
        labels: list[str] = []
        for block in blocks:
            label = block.get("label")
            if label not in _FUNSD_LABELS:
                raise ValueError(
                    f"{path.name}: unknown label {label!r}; "
                    f"valid labels: {sorted(_FUNSD_LABELS)}"
                )
            entity = _FUNSD_LABELS[label]
            first = True
            for w in block.get("words", []):
                text = w.get("text", "")
                if not text.strip():
                    continue
                x0, y0, x1, y1 = w["box"]
                if x1 < x0 or y1 < y0:
                    raise ValueError(
                        f"{path.name}: record {block.get('id')}: malformed box {w['box']}"
                    )
                raw_words.append((text, (x0, x1, y0, y1)))
                if entity is None:
                    labels.append("O")
                else:
                    labels.append(f"B-{entity}" if first else f"I-{entity}")
                    first = False
        page_w = data.get("page_w") or max((b[1] for _, b in raw_words), default=1) or 1
        page_h = data.get("page_h") or max((b[3] for _, b in raw_words), default=1) or 1
        words = [
            Word(text, normalize_box(x0, x1, y0, y1, page_w, page_h))
            for text, (x0, x1, y0, y1) in raw_words
        ]
        docs.append(
            Document(
                id=path.stem,
                words=words,
                page_w=int(page_w),
                page_h=int(page_h),
                token_labels=[FUNSD_SCHEME.id_of(l) for l in labels],
            )
        )
    return docs


def filter_qa_by_keywords(qa_pairs: list[QAPair], keywords: list[str]) -> list[QAPair]:
    """QA pairs whose question contains any keyword (case-insensitive substring)."""
    lowered = [k.lower() for k in keywords]
    return [qa for qa in qa_pairs if any(k in qa.question.lower() for k in lowered)]


# ---------------------------------------------------------------------------
# Vocabulary + WordPiece-style tokenization
# ---------------------------------------------------------------------------


class Vocab:
    """Greedy longest-match subword vocabulary with '##' continuations."""

    def __init__(self, pieces: list[str]):
        if not pieces:
            raise ValueError("empty vocabulary")
        for s in SPECIAL_TOKENS:
            if s not in pieces:
                raise ValueError(f"vocabulary missing special token {s}")
        self.pieces = list(pieces)
        self.index = {p: i for i, p in enumerate(self.pieces)}
        if len(self.index) != len(self.pieces):
            raise ValueError("duplicate vocabulary entries")
        self.pad_id = self.index[PAD]
        self.unk_id = self.index[UNK]
        self.cls_id = self.index[CLS]
        self.sep_id = self.index[SEP]
        self.mask_id = self.index[MASK]

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def special_ids(self) -> set[int]:
        return {self.pad_id, self.unk_id, self.cls_id, self.sep_id, self.mask_id}

    def word_pieces(self, word: str) -> list[str]:
        """Greedy longest-match split; a word with unseen characters is [UNK]."""
        word = word.lower()
        pieces = []
        i = 0
        while i < len(word):
            match = None
            for j in range(len(word), i, -1):
                cand = word[i:j] if i == 0 else "##" + word[i:j]
                if cand in self.index:
                    match = (cand, j)
                    break
            if match is None:
                return [UNK]
            pieces.append(match[0])
            i = match[1]
        return pieces

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.pieces) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls(Path(path).read_text().splitlines())


def build_vocab(docs: list[Document], size: int = 1000, extra_texts: list[str] | None = None) -> Vocab:
    """Corpus-built vocabulary: specials, all seen characters, frequent words."""
    counts: dict[str, int] = {}
    chars: set[str] = set()
    texts = [w.text for d in docs for w in d.words]
    texts += [t for d in docs for qa in d.qa_pairs or [] for t in qa.question.split()]
    texts += extra_texts or []
    for text in texts:
        word = text.lower()
        counts[word] = counts.get(word, 0) + 1
        chars.update(word)
    pieces = list(SPECIAL_TOKENS)
    for c in sorted(chars):
        pieces.append(c)
        pieces.append("##" + c)
    seen = set(pieces)
    for word, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(pieces) >= size:
            break
        if word not in seen:
            pieces.append(word)
            seen.add(word)
    return Vocab(pieces)


@dataclass
class TokenizedDoc:
    """Model-ready view of one document (or one QA instance)."""

    doc_id: str
    token_ids: list[int]
    boxes: list[Box]
    segment_ids: list[int]
    attention_mask: list[int]
    label_ids: list[int]
    word_ids: list[int | None]  # source word per token; None for specials/pads
    words: list[str] = field(default_factory=list)
    ink_image: np.ndarray | None = None
    question: str | None = None
    answer_start: int | None = None  # token index of span start (QA)
    answer_end: int | None = None
    gold_answer: str | None = None

    @property
    def special_positions(self) -> list[int]:
        return [i for i, w in enumerate(self.word_ids) if w is None]

    def strip_labels(self) -> "TokenizedDoc":
        """A copy with all supervision removed (adaptation-side view)."""
        return replace(
            self,
            label_ids=[IGNORE_INDEX] * len(self.label_ids),
            answer_start=None,
            answer_end=None,
            gold_answer=None,
        )


def tokenize(
    doc: Document,
    vocab: Vocab,
    max_len: int = 512,
    scheme: LabelScheme | None = None,
) -> TokenizedDoc:
    """[CLS] content [SEP] [PAD]*; sub-word pieces inherit the word's box.

    The first piece of a word keeps its begin-label; continuation pieces take
    the intermediate variant.  [CLS]/[SEP]/[PAD] carry the ignore index.
    """
    ids: list[int] = []
    boxes: list[Box] = []
    labels: list[int] = []
    word_ids: list[int | None] = []
    doc_labels = doc.token_labels
    for wi, word in enumerate(doc.words):
        pieces = vocab.word_pieces(word.text)
        for k, piece in enumerate(pieces):
            ids.append(vocab.index.get(piece, vocab.unk_id))
            boxes.append(word.box)
            word_ids.append(wi)
            if doc_labels is None or scheme is None:
                labels.append(IGNORE_INDEX)
            else:
                lid = doc_labels[wi]
                labels.append(lid if k == 0 else scheme.intermediate_of(lid))
    content = max_len - 2
    ids, boxes, labels, word_ids = (
        ids[:content],
        boxes[:content],
        labels[:content],
        word_ids[:content],
    )
    n_pad = max_len - 2 - len(ids)
    token_ids = [vocab.cls_id] + ids + [vocab.sep_id] + [vocab.pad_id] * n_pad
    out_boxes = [ZERO_BOX] + boxes + [ZERO_BOX] * (1 + n_pad)
    label_ids = [IGNORE_INDEX] + labels + [IGNORE_INDEX] * (1 + n_pad)
    attention = [1] * (len(ids) + 2) + [0] * n_pad
    return TokenizedDoc(
        doc_id=doc.id,
        token_ids=token_ids,
        boxes=out_boxes,
        segment_ids=[0] * max_len,
        attention_mask=attention,
        label_ids=label_ids,
        word_ids=[None] + word_ids + [None] * (1 + n_pad),
        words=[w.text for w in doc.words],
        ink_image=doc.ink_image,
    )


def tokenize_qa(
    doc: Document, qa: QAPair, vocab: Vocab, max_len: int = 512
) -> TokenizedDoc | None:
    """[CLS] question [SEP] document [SEP] [PAD]*; spans become token indices.

    Returns None when truncation cuts off the answer span.
    """
    q_ids: list[int] = []
    for word in qa.question.split():
        for piece in vocab.word_pieces(word):
            q_ids.append(vocab.index.get(piece, vocab.unk_id))
    d_ids: list[int] = []
    d_boxes: list[Box] = []
    d_word_ids: list[int] = []
    for wi, word in enumerate(doc.words):
        for piece in vocab.word_pieces(word.text):
            d_ids.append(vocab.index.get(piece, vocab.unk_id))
            d_boxes.append(word.box)
            d_word_ids.append(wi)
    doc_budget = max_len - 3 - len(q_ids)
    if doc_budget <= 0:
        return None
    d_ids, d_boxes, d_word_ids = d_ids[:doc_budget], d_boxes[:doc_budget], d_word_ids[:doc_budget]
    ws, we = qa.answer_span
    tok_start = tok_end = None
    for ti, wi in enumerate(d_word_ids):
        if wi == ws and tok_start is None:
            tok_start = ti
        if wi == we:
            tok_end = ti
    if tok_start is None or tok_end is None:
        return None
    doc_offset = 2 + len(q_ids)  # [CLS] + question + [SEP]
    n_pad = max_len - 3 - len(q_ids) - len(d_ids)
    token_ids = (
        [vocab.cls_id] + q_ids + [vocab.sep_id] + d_ids + [vocab.sep_id] + [vocab.pad_id] * n_pad
    )
    boxes = [ZERO_BOX] * (2 + len(q_ids)) + d_boxes + [ZERO_BOX] * (1 + n_pad)
    segments = [0] * (2 + len(q_ids)) + [1] * (len(d_ids) + 1) + [0] * n_pad
    attention = [1] * (3 + len(q_ids) + len(d_ids)) + [0] * n_pad
    word_ids: list[int | None] = (
        [None] * (2 + len(q_ids)) + list(d_word_ids) + [None] * (1 + n_pad)
    )
    return TokenizedDoc(
        doc_id=doc.id,
        token_ids=token_ids,
        boxes=boxes,
        segment_ids=segments,
        attention_mask=attention,
        label_ids=[IGNORE_INDEX] * max_len,
        word_ids=word_ids,
        words=[w.text for w in doc.words],
        ink_image=doc.ink_image,
        question=qa.question,
        answer_start=doc_offset + tok_start,
        answer_end=doc_offset + tok_end,
        gold_answer=qa.answer_text,
    )


def detokenize(token_ids: list[int], vocab: Vocab) -> list[str]:
    """Word pieces for the content region (specials and padding dropped)."""
    return [vocab.pieces[i] for i in token_ids if i not in vocab.special_ids]


# ---------------------------------------------------------------------------
# Synthetic domain-shift corpora
# ---------------------------------------------------------------------------

INK_W = INK_H = 64

_LEXICONS = {
    "forms-a": {
        "values": [
            "smith", "jones", "miller", "garcia", "chen", "novak", "patel",
            "acme", "globex", "initech", "baxter", "monroe", "avenue",
            "street", "north", "south", "lakeside", "hilltop", "riverside",
            "pending", "approved", "rejected", "standard", "express",
            "retail", "wholesale", "annual", "monthly",
        ],
        "other": [
            "please", "print", "clearly", "form", "section", "continued",
            "page", "of", "internal", "use", "only", "see", "reverse",
            "instructions", "attached", "note", "draft",
        ],
        "headers": ["registration", "invoice", "application", "order", "claim", "report"],
    },
    "forms-b": {
        "values": [
            "okafor", "svensson", "dubois", "tanaka", "rossi", "almeida",
            "kowalski", "vertex", "zenith", "quorum", "nimbus", "harbor",
            "terrace", "boulevard", "east", "west", "meadowbrook", "stonegate",
            "willowfield", "onhold", "escalated", "deferred", "priority",
            "economy", "quarterly", "weekly", "bulk", "custom",
        ],
        "other": [
            "submit", "before", "deadline", "office", "stamp", "here",
            "confidential", "copy", "retain", "records", "void", "unless",
            "signed", "appendix", "revision", "checked",
        ],
        "headers": ["requisition", "statement", "enrollment", "manifest", "voucher", "summary"],
    },
}

_KEYS = [
    "name", "date", "total", "address", "phone", "email",
    "amount", "city", "status", "reference", "owner", "category",
]

# value realizations per key; numeric-style keys render digits
_NUMERIC_KEYS = {"total", "amount", "phone", "reference"}
_DATE_KEYS = {"date"}

_VALID_RANGES = {
    "density": (0.05, 2.0),
    "jitter": (0, 60),
    "fill_rate": (0.0, 1.0),
    "ink_noise": (0.0, 0.5),
    "other_rate": (0.0, 0.8),
}


@dataclass(frozen=True)
class SyntheticDomainSpec:
    """Generative spec for one domain of key-value form documents.

    Two specs with equal fields define identically distributed corpora; a
    domain shift is expressed purely through differing fields.
    """

    lexicon: str = "forms-a"
    density: float = 1.0  # scales field count and packing
    jitter: int = 4  # box perturbation amplitude, page pixels
    fill_rate: float = 0.9  # fraction of field slots that are populated at all
    ink_noise: float = 0.0  # pixel flip probability in the rendered mask
    other_rate: float = 0.2  # target share of unlabeled filler words
    label_style: str = "funsd"  # 'funsd' (7 classes) or 'sroie' (9 classes)

    def validate(self) -> None:
        if self.lexicon not in _LEXICONS:
            raise ValueError(f"unknown lexicon {self.lexicon!r}; have {sorted(_LEXICONS)}")
        if self.label_style not in ("funsd", "sroie"):
            raise ValueError(f"unknown label_style {self.label_style!r}")
        for name, (lo, hi) in _VALID_RANGES.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    @property
    def num_fields(self) -> int:
        return max(2, round(12 * self.density))

    @property
    def scheme(self) -> LabelScheme:
        return FUNSD_SCHEME if self.label_style == "funsd" else SROIE_SCHEME


_SROIE_KEY_TYPES = {"name": "COMPANY", "date": "DATE", "address": "ADDRESS", "total": "TOTAL"}

PAGE_W, PAGE_H = 850, 1100
_CHAR_W, _CHAR_H = 9, 16


def _value_words(key: str, rng: random.Random, lex: dict) -> list[str]:
    if key in _DATE_KEYS:
        return [f"{rng.randint(2018, 2024)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"]
    if key in _NUMERIC_KEYS:
        return [str(rng.randint(10, 99999))]
    n = rng.choice([1, 1, 2, 2, 3])
    return [rng.choice(lex["values"]) for _ in range(n)]


def _render_ink(
    boxes_px: list[tuple[int, int, int, int]], noise: float, rng: random.Random
) -> np.ndarray:
    img = np.zeros((INK_H, INK_W), dtype=np.uint8)
    for x0, x1, y0, y1 in boxes_px:
        c0 = max(0, min(INK_W - 1, x0 * INK_W // PAGE_W))
        c1 = max(0, min(INK_W - 1, x1 * INK_W // PAGE_W))
        r0 = max(0, min(INK_H - 1, y0 * INK_H // PAGE_H))
        r1 = max(0, min(INK_H - 1, y1 * INK_H // PAGE_H))
        img[r0 : r1 + 1, c0 : c1 + 1] = 1
    if noise > 0:
        flips = np.array(
            [[rng.random() < noise for _ in range(INK_W)] for _ in range(INK_H)],
            dtype=bool,
        )
        img = np.where(flips, 1 - img, img).astype(np.uint8)
    return img


def generate_synthetic(
    spec: SyntheticDomainSpec, count: int, seed: int, id_prefix: str | None = None
) -> list[Document]:
    """Key-value form documents with word labels and one QA pair per filled key.

    Deterministic for fixed (spec, count, seed): every random draw comes from
    per-document generators seeded from the arguments.
    """
    spec.validate()
    if count < 0:
        raise ValueError("count must be >= 0")
    lex = _LEXICONS[spec.lexicon]
    scheme = spec.scheme
    prefix = id_prefix if id_prefix is not None else f"syn{seed}"
    docs = []
    for i in range(count):
        rng = random.Random(f"{spec.lexicon}:{seed}:{i}")
        words_px: list[tuple[str, int, int, int, int]] = []  # text, x0, x1, y0, y1
        labels: list[str] = []

        def put(text: str, x: int, y: int, label: str) -> tuple[int, int]:
            w = max(_CHAR_W, _CHAR_W * len(text))
            jx = rng.randint(-spec.jitter, spec.jitter) if spec.jitter else 0
            jy = rng.randint(-spec.jitter, spec.jitter) if spec.jitter else 0
            x0 = min(max(x + jx, 0), PAGE_W - w) if w < PAGE_W else 0
            y0 = min(max(y + jy, 0), PAGE_H - _CHAR_H)
            words_px.append((text, x0, min(x0 + w, PAGE_W), y0, y0 + _CHAR_H))
            labels.append(label)
            return x0 + w + _CHAR_W, y0

        # header strip
        header = rng.choice(lex["headers"])
        title_words = [header] + (["form"] if rng.random() < 0.5 else [])
        x = 60
        for k, t in enumerate(title_words):
            hdr_label = ("B-HEADER" if k == 0 else "I-HEADER") if spec.label_style == "funsd" else "O"
            x, _ = put(t, x, 40, hdr_label)

        # key-value grid
        keys = rng.sample(_KEYS, min(spec.num_fields, len(_KEYS)))
        if spec.label_style == "sroie":
            keys = [k for k in _KEYS if k in _SROIE_KEY_TYPES]
        two_col = spec.density > 0.75
        row_gap = int(_CHAR_H + 18 / max(spec.density, 0.2))
        col_w = PAGE_W // 2 if two_col else PAGE_W
        qa_pairs: list[QAPair] = []
        y = 110
        for fi, key in enumerate(keys):
            col = fi % 2 if two_col else 0
            if two_col and col == 0 and fi > 0:
                y += row_gap
            elif not two_col and fi > 0:
                y += row_gap
            if rng.random() >= spec.fill_rate:
                continue  # unpopulated slot: blank space in the grid
            x = 60 + col * col_w
            if spec.label_style == "funsd":
                x, _ = put(key, x, y, "B-QUESTION")
            else:
                x, _ = put(key, x, y, "O")
            value = _value_words(key, rng, lex)
            span_start = len(words_px)
            for k, v in enumerate(value):
                if spec.label_style == "funsd":
                    vlabel = "B-ANSWER" if k == 0 else "I-ANSWER"
                else:
                    t = _SROIE_KEY_TYPES[key]
                    vlabel = f"B-{t}" if k == 0 else f"I-{t}"
                x, _ = put(v, x, y, vlabel)
            qa_pairs.append(
                QAPair(
                    question=f"what is the {key} ?",
                    answer_text=" ".join(value),
                    answer_span=(span_start, span_start + len(value) - 1),
                )
            )
        # filler words aiming at the requested 'other' share
        entity_words = len(words_px)
        n_other = int(round(spec.other_rate / max(1e-9, 1.0 - spec.other_rate) * entity_words))
        bottom = y + 2 * row_gap
        for _ in range(n_other):
            t = rng.choice(lex["other"])
            ox = rng.randint(40, PAGE_W - 200)
            oy = rng.randint(min(bottom, PAGE_H - 80), PAGE_H - _CHAR_H - 1)
            put(t, ox, oy, "O")

        ink = _render_ink([b for _, *b in words_px], spec.ink_noise, rng)
        words = [
            Word(t, normalize_box(x0, x1, y0, y1, PAGE_W, PAGE_H))
            for t, x0, x1, y0, y1 in words_px
        ]
        doc = Document(
            id=f"{prefix}-{i:05d}",
            words=words,
            page_w=PAGE_W,
            page_h=PAGE_H,
            token_labels=[scheme.id_of(l) for l in labels],
            qa_pairs=qa_pairs,
            ink_image=ink,
        )
        doc.check()
        docs.append(doc)
    return docs


# ---------------------------------------------------------------------------
# Corpus persistence (one JSON document per line) + split manifests
# ---------------------------------------------------------------------------


def doc_to_dict(doc: Document) -> dict:
    out = {
        "id": doc.id,
        "words": [{"text": w.text, "box": list(w.box.as_tuple())} for w in doc.words],
        "page_w": doc.page_w,
        "page_h": doc.page_h,
        "token_labels": doc.token_labels,
        "qa_pairs": [
            {"question": qa.question, "answer_text": qa.answer_text, "answer_span": list(qa.answer_span)}
            for qa in doc.qa_pairs
        ]
        if doc.qa_pairs is not None
        else None,
        "ink_image": None,
    }
    if doc.ink_image is not None:
        out["ink_image"] = {
            "h": int(doc.ink_image.shape[0]),
            "w": int(doc.ink_image.shape[1]),
            "rows": ["".join(str(int(v)) for v in row) for row in doc.ink_image],
        }
    return out


def doc_from_dict(d: dict) -> Document:
    ink = None
    if d.get("ink_image"):
        ink = np.array(
            [[int(c) for c in row] for row in d["ink_image"]["rows"]], dtype=np.uint8
        )
    return Document(
        id=d["id"],
        words=[Word(w["text"], Box(*w["box"])) for w in d["words"]],
        page_w=d["page_w"],
        page_h=d["page_h"],
        token_labels=d.get("token_labels"),
        qa_pairs=[
            QAPair(q["question"], q["answer_text"], tuple(q["answer_span"]))
            for q in d["qa_pairs"]
        ]
        if d.get("qa_pairs") is not None
        else None,
        ink_image=ink,
    )


def save_corpus(docs: list[Document], path: str | Path) -> None:
    with open(path, "w") as f:
        for doc in docs:
            f.write(json.dumps(doc_to_dict(doc), sort_keys=True) + "\n")


def load_corpus(path: str | Path) -> list[Document]:
    docs = []
    with open(path) as f:
        for line in f:
            if line.strip():
                docs.append(doc_from_dict(json.loads(line)))
    return docs


def save_manifest(ids: list[str], path: str | Path) -> None:
    Path(path).write_text("\n".join(ids) + ("\n" if ids else ""))


def load_manifest(path: str | Path) -> list[str]:
    return [l for l in Path(path).read_text().splitlines() if l]
