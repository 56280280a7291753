"""Vocabulary, tokenization, TSV ingestion, synthetic data, batching.

The tokenizer is lowercase-whitespace over a small dense-id vocabulary;
ids 0..4 are reserved for [PAD], [UNK], [CLS], [SEP], [MASK] in that order.
Synthetic data comes in two families: a class-conditional classification
task (per-class marker tokens plus class-tilted topic vocabulary) and a
document-structured corpus whose contiguous sentences share topical tokens.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
NUM_RESERVED = len(RESERVED)


def _open_text(path):
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError("cannot read %s: %s" % (path, exc))


def _open_write(path, mode="w"):
    try:
        kwargs = {} if "b" in mode else {"encoding": "utf-8"}
        return open(path, mode, **kwargs)
    except OSError as exc:
        raise InputError("cannot write %s: %s" % (path, exc))


class Vocab:
    """Dense token/id bijection with fixed reserved ids."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise InputError("vocabulary has duplicate tokens")
        for t in tokens:
            if t in RESERVED:
                raise InputError("token %r collides with a reserved token" % t)
        self._tokens = list(RESERVED) + tokens
        self._ids = {t: i for i, t in enumerate(self._tokens)}

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if not (0 <= idx < len(self._tokens)):
            raise InputError("token id %d out of range" % idx)
        return self._tokens[idx]

    def is_special(self, idx: int) -> bool:
        return idx < NUM_RESERVED

    def save(self, path) -> None:
        with _open_write(path) as fh:
            for t in self._tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with _open_text(path) as fh:
            toks = [line.rstrip("\n") for line in fh if line.strip()]
        if toks[:NUM_RESERVED] != list(RESERVED):
            raise InputError(
                "vocab file must start with the reserved tokens %s" % (RESERVED,)
            )
        return cls(toks[NUM_RESERVED:])

    @classmethod
    def from_texts(cls, texts) -> "Vocab":
        seen = {}
        for text in texts:
            for tok in text.lower().split():
                if tok not in seen:
                    seen[tok] = len(seen)
        return cls(sorted(seen, key=seen.get))


def tokenize(text: str, vocab: Vocab) -> list:
    """Lowercased whitespace tokens mapped to ids, [CLS]-prefixed."""
    if not text or not text.strip():
        raise InputError("cannot tokenize empty text")
    return [CLS] + [vocab.id_of(t) for t in text.lower().split()]


def detokenize(ids, vocab: Vocab) -> str:
    return " ".join(vocab.token_of(i) for i in ids)


@dataclass
class Example:
    ids: np.ndarray
    label: int  # -1 when unlabeled (corpus examples)
    index: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)

    @property
    def valid_len(self) -> int:
        return self.ids.shape[0]


@dataclass
class Batch:
    ids: np.ndarray  # (B, L) padded with PAD after valid_len
    valid_lens: np.ndarray
    indices: np.ndarray
    labels: np.ndarray = None  # (B,) or None for corpus batches
    mask_rows: np.ndarray = None  # set by apply_masking
    mask_cols: np.ndarray = None
    mask_targets: np.ndarray = None

    @property
    def size(self) -> int:
        return self.ids.shape[0]


@dataclass
class Dataset:
    examples: list
    num_classes: int = 0  # 0 for unlabeled corpora
    doc_bounds: list = field(default_factory=list)  # corpus document spans

    def __len__(self):
        return len(self.examples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.int64)


def load_tsv_classification(path, vocab: Vocab) -> Dataset:
    """Lines of "label<TAB>sentence[<TAB>sentence2]"; pair tasks join the
    sentences with [SEP]. Indices follow file order."""
    examples = []
    labels = []
    with _open_text(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise InputError(
                    "line %d: expected 2 or 3 tab-separated fields, got %d"
                    % (lineno, len(parts))
                )
            try:
                label = int(parts[0])
            except ValueError:
                raise InputError(
                    "line %d: label %r is not an integer" % (lineno, parts[0])
                )
            if label < 0:
                raise InputError("line %d: label must be >= 0" % lineno)
            ids = tokenize(parts[1], vocab)
            if len(parts) == 3:
                ids = ids + [SEP] + [vocab.id_of(t) for t in parts[2].lower().split()]
            examples.append(Example(np.array(ids), label, len(examples)))
            labels.append(label)
    if not examples:
        raise InputError("dataset at %s is empty" % path)
    return Dataset(examples, num_classes=max(labels) + 1)


@dataclass
class SyntheticSpec:
    kind: str = "classification"  # or "corpus"
    num_classes: int = 2
    num_topics: int = 4
    tokens_per_topic: int = 8
    min_len: int = 5
    max_len: int = 12  # tokens before the [CLS] prefix
    marker_prob: float = 0.9
    topic_tilt: float = 0.75  # chance a filler comes from the class's topic
    doc_sentences: int = 6  # corpus: mean sentences per document

    def __post_init__(self):
        if self.kind not in ("classification", "corpus"):
            raise ParameterError("kind must be classification or corpus")
        if self.kind == "classification" and self.num_classes < 2:
            raise ParameterError(
                "classification needs >= 2 classes, got %d" % self.num_classes
            )
        if self.num_topics < 1 or self.tokens_per_topic < 1:
            raise ParameterError("topics and tokens_per_topic must be >= 1")
        if not (1 <= self.min_len <= self.max_len):
            raise ParameterError("need 1 <= min_len <= max_len")
        if not (0.0 <= self.marker_prob <= 1.0):
            raise ParameterError("marker_prob must be in [0,1]")
        if not (0.0 <= self.topic_tilt <= 1.0):
            raise ParameterError("topic_tilt must be in [0,1]")

    @classmethod
    def from_mapping(cls, mapping) -> "SyntheticSpec":
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name in mapping:
                kwargs[name] = f.type(mapping[name])
        return cls(**kwargs)


def build_synthetic_vocab(spec: SyntheticSpec) -> Vocab:
    tokens = ["mark%d" % c for c in range(spec.num_classes)] if \
        spec.kind == "classification" else []
    for t in range(spec.num_topics):
        tokens.extend("t%dw%d" % (t, j) for j in range(spec.tokens_per_topic))
    return Vocab(tokens)


def _marker_id(vocab: Vocab, c: int) -> int:
    return vocab.id_of("mark%d" % c)


def _topic_ids(vocab: Vocab, spec: SyntheticSpec, t: int) -> np.ndarray:
    return np.array(
        [vocab.id_of("t%dw%d" % (t, j)) for j in range(spec.tokens_per_topic)]
    )


def generate_synthetic(spec: SyntheticSpec, n: int, seed: int):
    """Deterministic synthetic dataset plus its vocabulary.

    Classification sentences carry their class marker with probability
    marker_prob and lean toward a class-linked topic for filler tokens, so
    the marker rule alone scores around marker_prob and topical statistics
    carry the rest.  Corpus documents fix one topic for several consecutive
    sentences, giving contiguous batches shared vocabulary.
    """
    if n < 2:
        raise ParameterError("n must be >= 2, got %d" % n)
    vocab = build_synthetic_vocab(spec)
    rng = np.random.default_rng(seed)
    topic_ids = [_topic_ids(vocab, spec, t) for t in range(spec.num_topics)]

    if spec.kind == "classification":
        labels = np.arange(n) % spec.num_classes
        rng.shuffle(labels)
        examples = []
        for i in range(n):
            c = int(labels[i])
            home_topic = c % spec.num_topics
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            toks = []
            for _ in range(length):
                if rng.random() < spec.topic_tilt:
                    t = home_topic
                else:
                    t = int(rng.integers(spec.num_topics))
                toks.append(int(rng.choice(topic_ids[t])))
            if rng.random() < spec.marker_prob:
                pos = int(rng.integers(len(toks) + 1))
                toks.insert(pos, _marker_id(vocab, c))
            examples.append(Example(np.array([CLS] + toks), c, i))
        return Dataset(examples, num_classes=spec.num_classes), vocab

    # corpus: documents of consecutive same-topic sentences
    examples = []
    doc_bounds = []
    i = 0
    while i < n:
        t = int(rng.integers(spec.num_topics))
        n_sent = int(rng.integers(max(2, spec.doc_sentences - 2),
                                  spec.doc_sentences + 3))
        start = i
        for _ in range(min(n_sent, n - i)):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            local = rng.random(length) < spec.topic_tilt
            toks = [
                int(rng.choice(topic_ids[t])) if keep
                else int(rng.choice(topic_ids[int(rng.integers(spec.num_topics))]))
                for keep in local
            ]
            examples.append(Example(np.array([CLS] + toks), -1, i))
            i += 1
        doc_bounds.append((start, i))
    return Dataset(examples, num_classes=0, doc_bounds=doc_bounds), vocab


def write_tsv(dataset: Dataset, vocab: Vocab, path) -> None:
    """Inverse of load_tsv_classification for single-sentence examples."""
    with _open_write(path) as fh:
        for e in dataset.examples:
            toks = " ".join(vocab.token_of(i) for i in e.ids[1:])
            fh.write("%d\t%s\n" % (e.label, toks))


def write_corpus(dataset: Dataset, vocab: Vocab, path) -> None:
    """One sentence per line, blank lines between documents."""
    bounds = dataset.doc_bounds or [(0, len(dataset.examples))]
    with _open_write(path) as fh:
        for d, (start, stop) in enumerate(bounds):
            if d:
                fh.write("\n")
            for e in dataset.examples[start:stop]:
                fh.write(" ".join(vocab.token_of(i) for i in e.ids[1:]) + "\n")


def load_corpus_lines(path, vocab: Vocab) -> Dataset:
    """Text corpus: one sentence per line, blank lines split documents."""
    examples = []
    doc_bounds = []
    doc_start = 0
    with _open_text(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                if len(examples) > doc_start:
                    doc_bounds.append((doc_start, len(examples)))
                    doc_start = len(examples)
                continue
            ids = tokenize(line, vocab)
            examples.append(Example(np.array(ids), -1, len(examples)))
    if len(examples) > doc_start:
        doc_bounds.append((doc_start, len(examples)))
    if not examples:
        raise InputError("corpus at %s is empty" % path)
    return Dataset(examples, num_classes=0, doc_bounds=doc_bounds)


def pad_batch(examples, pad_to: int = 0) -> Batch:
    """Pad a list of Examples to the longest member with [PAD].

    pad_to, when larger than the longest member, forces extra trailing
    padding; useful for fixed-shape timing runs and padding-invariance
    checks.
    """
    if not examples:
        raise ParameterError("cannot build an empty batch")
    B = len(examples)
    L = max(max(e.valid_len for e in examples), pad_to)
    ids = np.full((B, L), PAD, dtype=np.int64)
    valid = np.empty(B, dtype=np.int64)
    for r, e in enumerate(examples):
        ids[r, : e.valid_len] = e.ids
        valid[r] = e.valid_len
    labels = np.array([e.label for e in examples], dtype=np.int64)
    idx = np.array([e.index for e in examples], dtype=np.int64)
    has_labels = bool((labels >= 0).all())
    return Batch(ids=ids, valid_lens=valid, indices=idx,
                 labels=labels if has_labels else None)


def iter_batches(dataset: Dataset, batch_size: int, rng=None,
                 shuffle: bool = True):
    """Yield Batches covering every example exactly once per epoch.

    With shuffle off, batches are contiguous slices in dataset order, which
    for a corpus keeps documents together.
    """
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    order = np.arange(len(dataset.examples))
    if shuffle:
        if rng is None:
            raise ParameterError("shuffled batching needs an rng")
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [dataset.examples[j] for j in order[start : start + batch_size]]
        yield pad_batch(chunk)
