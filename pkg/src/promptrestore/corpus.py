"""Instruction corpus: deterministic paraphrase generation, storage and tokenization.

Sentences pair a restoration request with one of three degradation
categories (noise / rain / haze). A template expander composes
verb x degradation-noun x image-noun x phrasing combinations so the corpus
is reproducible from a seed, with an 80/20 train/heldout split per category.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

CATEGORIES = ("noise", "rain", "haze")
SPLITS = ("train", "heldout")

PAD, MASK, CLS, SEP, UNK = "[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]"
SPECIAL_TOKENS = (PAD, MASK, CLS, SEP, UNK)

_VERBS = ["remove", "eliminate", "clear", "erase", "wipe out", "get rid of"]

_DEG_NOUNS = {
    "noise": ["noise", "the noise", "the grain", "the speckles", "the graininess"],
    "rain": ["rain", "the rain", "the rain streaks", "the raindrops", "the rainfall"],
    "haze": ["haze", "the haze", "the fog", "the mist", "the smog"],
}

_IMG_NOUNS = ["picture", "image", "photo", "photograph", "snapshot"]

_PATTERNS = [
    "{verb} {deg} from this {img}",
    "please {verb} {deg} in this {img}",
    "could you {verb} {deg} from the {img}",
    "i want you to {verb} {deg} in my {img}",
    "from this {img} {verb} {deg}",
    "in the {img} below {verb} {deg}",
    "help me {verb} {deg} from that {img}",
]


@dataclass(frozen=True)
class Instruction:
    text: str
    category: str
    split: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("instruction text must be non-empty")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class TokenSequence:
    ids: list[int]
    attention_mask: list[int]

    @property
    def length(self) -> int:
        return len(self.ids)

    def __post_init__(self):
        if len(self.ids) != len(self.attention_mask):
            raise ValueError("attention_mask must align with ids")


def words_of(text: str) -> list[str]:
    """Lowercased whitespace+punctuation word split (punctuation dropped)."""
    return re.findall(r"[a-z0-9']+", text.lower())


@dataclass
class InstructionCorpus:
    instructions: list[Instruction]
    vocabulary: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.vocabulary:
            self.vocabulary = build_vocabulary(self.instructions)
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}

    # -- lookup ----------------------------------------------------------

    def sentences(self, category=None, split=None) -> list[Instruction]:
        out = self.instructions
        if category is not None:
            out = [s for s in out if s.category == category]
        if split is not None:
            out = [s for s in out if s.split == split]
        return out

    def token_id(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def special_ids(self) -> set[int]:
        return {self._index[t] for t in SPECIAL_TOKENS}

    # -- persistence -----------------------------------------------------

    def save(self, path) -> None:
        """Write `<category>\\t<split>\\t<sentence>` lines plus a .vocab sidecar."""
        with open(path, "w", encoding="utf-8") as f:
            for ins in self.instructions:
                f.write(f"{ins.category}\t{ins.split}\t{ins.text}\n")
        with open(str(path) + ".vocab", "w", encoding="utf-8") as f:
            for tok in self.vocabulary:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "InstructionCorpus":
        instructions = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                category, split, text = line.split("\t", 2)
                instructions.append(Instruction(text, category, split))
        vocab = []
        try:
            with open(str(path) + ".vocab", encoding="utf-8") as f:
                vocab = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        except FileNotFoundError:
            pass
        return cls(instructions, vocab)

    def to_lines(self) -> list[str]:
        return [f"{i.category}\t{i.split}\t{i.text}" for i in self.instructions]

    @classmethod
    def from_lines(cls, lines, vocabulary=None) -> "InstructionCorpus":
        instructions = []
        for line in lines:
            category, split, text = line.split("\t", 2)
            instructions.append(Instruction(text, category, split))
        return cls(instructions, list(vocabulary) if vocabulary else [])


def build_vocabulary(instructions) -> list[str]:
    words = sorted({w for ins in instructions for w in words_of(ins.text)})
    return list(SPECIAL_TOKENS) + words


def _expand_category(category: str) -> list[str]:
    out = []
    for pattern in _PATTERNS:
        for verb in _VERBS:
            for deg in _DEG_NOUNS[category]:
                for img in _IMG_NOUNS:
                    out.append(pattern.format(verb=verb, deg=deg, img=img))
    # template product is unique by construction; dedupe defensively
    return sorted(set(out))


def generate_corpus(seed: int, per_category: int = 50) -> InstructionCorpus:
    """Build the paraphrase corpus: `per_category` sentences for each task.

    Deterministic in (seed, per_category). 80/20 train/heldout split per
    category, at least one sentence held out.
    """
    if per_category < 10:
        raise ValueError(f"per_category must be >= 10, got {per_category}")
    rng = np.random.default_rng(seed)
    instructions = []
    for category in CATEGORIES:
        pool = _expand_category(category)
        if per_category > len(pool):
            raise ValueError(
                f"per_category={per_category} exceeds the {len(pool)} distinct "
                f"templates available for {category!r}"
            )
        picked = [pool[i] for i in rng.permutation(len(pool))[:per_category]]
        n_held = max(1, per_category // 5)
        for i, text in enumerate(picked):
            split = "heldout" if i < n_held else "train"
            instructions.append(Instruction(text, category, split))
    return InstructionCorpus(instructions)


def sample_instruction(corpus: InstructionCorpus, category: str, split: str, rng) -> Instruction:
    cell = corpus.sentences(category, split)
    if not cell:
        raise LookupError(f"no instructions for ({category}, {split})")
    return cell[int(rng.integers(len(cell)))]


def tokenize(corpus: InstructionCorpus, text: str) -> TokenSequence:
    """[CLS] + word ids + [SEP]; out-of-vocabulary words map to [UNK]."""
    if not text or not text.strip():
        raise ValueError("text must be non-empty")
    ids = [corpus.token_id(CLS)]
    ids += [corpus.token_id(w) for w in words_of(text)]
    ids.append(corpus.token_id(SEP))
    return TokenSequence(ids, [1] * len(ids))
