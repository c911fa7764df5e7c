"""Task-specific text encoder: a small bidirectional transformer fine-tuned
with masked-token and sentence-pair objectives.

The sentence-level guidance vector is the mean of the final-layer token
states over unmasked positions. The sentence-pair objective is adapted to
this corpus: it has no document order, so a pair is "coherent" (label 1)
iff both sentences request the same restoration task, which pressures task
identity into the representation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .corpus import (
    CATEGORIES, CLS, SEP, MASK, PAD, InstructionCorpus, TokenSequence,
    sample_instruction, tokenize,
)
from . import checkpoint as ckpt


@dataclass
class TextEncoderConfig:
    vocab_size: int
    d_model: int = 768
    n_layers: int = 4
    n_heads: int = 4
    max_len: int = 32
    mask_prob: float = 0.15
    ffn_factor: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if not (0.0 < self.mask_prob < 1.0):
            raise ValueError("mask_prob must lie in (0,1)")


TINY_TEXT_PRESET = dict(d_model=64, n_layers=4, n_heads=4, max_len=32)


class _Block(nn.Module):
    """Pre-norm bidirectional self-attention + feed-forward."""

    def __init__(self, d, heads, ffn):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, ffn), nn.GELU(), nn.Linear(ffn, d))

    def forward(self, x, pad_mask):
        h = self.norm1(x)
        a, _ = self.attn(h, h, h, key_padding_mask=pad_mask, need_weights=False)
        x = x + a
        return x + self.ffn(self.norm2(x))


class TextEncoder(nn.Module):
    def __init__(self, config: TextEncoderConfig, corpus: InstructionCorpus):
        super().__init__()
        self.config = config
        self.corpus = corpus
        d = config.d_model
        self.tok_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_len, d)
        self.seg_emb = nn.Embedding(2, d)
        self.blocks = nn.ModuleList(
            _Block(d, config.n_heads, config.ffn_factor * d) for _ in range(config.n_layers))
        self.final_norm = nn.LayerNorm(d)
        self.mlm_head = nn.Linear(d, config.vocab_size)
        self.nsp_pool = nn.Linear(d, d)
        self.nsp_head = nn.Linear(d, 2)

    # -- forward ---------------------------------------------------------

    def forward(self, ids, attention_mask, segments=None):
        """ids/masks: (B, L) long tensors -> (B, L, d) final token states."""
        b, l = ids.shape
        pos = torch.arange(l, device=ids.device).expand(b, l)
        x = self.tok_emb(ids) + self.pos_emb(pos)
        if segments is None:
            segments = torch.zeros_like(ids)
        x = x + self.seg_emb(segments)
        pad_mask = attention_mask == 0
        for block in self.blocks:
            x = block(x, pad_mask)
        return self.final_norm(x)

    def encode(self, tokens: TokenSequence) -> torch.Tensor:
        """Per-token representations (length x d_model) for one sequence."""
        ids = tokens.ids
        mask = tokens.attention_mask
        if len(ids) > self.config.max_len:
            warnings.warn(f"input of {len(ids)} tokens truncated to max_len={self.config.max_len}")
            ids = ids[: self.config.max_len]
            mask = mask[: self.config.max_len]
        with torch.no_grad():
            was_training = self.training
            self.eval()
            out = self.forward(torch.tensor([ids]), torch.tensor([mask]))[0]
            self.train(was_training)
        return out

    # -- guidance --------------------------------------------------------

    def embed(self, text: str) -> np.ndarray:
        """Guidance vector for one sentence (numpy, shape (d_model,))."""
        tokens = tokenize(self.corpus, text)
        reprs = self.encode(tokens)
        mask = torch.tensor(tokens.attention_mask[: reprs.shape[0]])
        return pool_guidance(reprs, mask).numpy()

    def embed_batch(self, texts) -> torch.Tensor:
        self.eval()
        ids, mask, _ = _pad_batch(
            [tokenize(self.corpus, t) for t in texts], self.corpus, self.config.max_len)
        with torch.no_grad():
            reprs = self.forward(ids, mask)
            return pool_guidance(reprs, mask)

    def guidance_for_category(self, category: str, rng, split: str = "train") -> np.ndarray:
        ins = sample_instruction(self.corpus, category, split, rng)
        return self.embed(ins.text)


def pool_guidance(token_reprs: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
    """Mean over unmasked token representations; (L,d)->(d,), (B,L,d)->(B,d)."""
    single = token_reprs.dim() == 2
    if single:
        token_reprs = token_reprs[None]
        attention_mask = attention_mask[None]
    m = attention_mask.to(token_reprs.dtype)
    counts = m.sum(dim=1)
    if torch.any(counts == 0):
        raise ValueError("at least one unmasked position required")
    z = (token_reprs * m[..., None]).sum(dim=1) / counts[:, None]
    return z[0] if single else z


# -- fine-tuning objectives -------------------------------------------------

def mlm_mask(corpus: InstructionCorpus, tokens: TokenSequence, mask_prob: float, rng):
    """Corrupt non-special positions for masked-token prediction.

    Each non-special position is independently selected with mask_prob;
    selected positions become [MASK] 80% of the time, a random vocab id 10%,
    and stay unchanged 10%. Returns (corrupted ids, target ids, positions).
    """
    special = corpus.special_ids()
    mask_id = corpus.token_id(MASK)
    corrupted = list(tokens.ids)
    targets, positions = [], []
    for i, tid in enumerate(tokens.ids):
        if tid in special:
            continue
        if rng.random() >= mask_prob:
            continue
        positions.append(i)
        targets.append(tid)
        r = rng.random()
        if r < 0.8:
            corrupted[i] = mask_id
        elif r < 0.9:
            corrupted[i] = int(rng.integers(corpus.vocab_size))
        # else leave unchanged
    return corrupted, targets, positions


def nsp_pairs(corpus: InstructionCorpus, n_pairs: int, rng, split: str = "train"):
    """Balanced sentence pairs; label 1 iff both share a category."""
    by_cat = {c: corpus.sentences(c, split) for c in CATEGORIES}
    usable = [c for c in CATEGORIES if len(by_cat[c]) >= 2]
    if len(usable) < 1 or len([c for c in CATEGORIES if by_cat[c]]) < 2:
        raise ValueError("corpus too small for sentence pairing")
    pairs = []
    for _ in range(n_pairs):
        if rng.random() < 0.5:
            c = usable[int(rng.integers(len(usable)))]
            i, j = rng.choice(len(by_cat[c]), 2, replace=False)
            pairs.append(((by_cat[c][i].text, by_cat[c][j].text), 1))
        else:
            cs = [c for c in CATEGORIES if by_cat[c]]
            ca, cb = rng.choice(len(cs), 2, replace=False)
            a = by_cat[cs[ca]][int(rng.integers(len(by_cat[cs[ca]])))]
            b = by_cat[cs[cb]][int(rng.integers(len(by_cat[cs[cb]])))]
            pairs.append(((a.text, b.text), 0))
    return pairs


def _pair_tokens(corpus, a: str, b: str, max_len: int):
    """[CLS] a [SEP] b [SEP] with segment ids 0/1."""
    from .corpus import words_of

    ids = [corpus.token_id(CLS)]
    ids += [corpus.token_id(w) for w in words_of(a)]
    ids.append(corpus.token_id(SEP))
    seg_split = len(ids)
    ids += [corpus.token_id(w) for w in words_of(b)]
    ids.append(corpus.token_id(SEP))
    ids = ids[:max_len]
    seg = [0] * min(seg_split, len(ids)) + [1] * max(0, len(ids) - seg_split)
    return ids, seg


def _pad_batch(seqs, corpus, max_len, segments=None):
    pad_id = corpus.token_id(PAD)
    if isinstance(seqs[0], TokenSequence):
        id_lists = [s.ids[:max_len] for s in seqs]
    else:
        id_lists = [list(s)[:max_len] for s in seqs]
    l = max(len(s) for s in id_lists)
    ids = torch.full((len(id_lists), l), pad_id, dtype=torch.long)
    mask = torch.zeros((len(id_lists), l), dtype=torch.long)
    segs = torch.zeros((len(id_lists), l), dtype=torch.long)
    for i, s in enumerate(id_lists):
        ids[i, : len(s)] = torch.tensor(s)
        mask[i, : len(s)] = 1
        if segments is not None:
            segs[i, : len(segments[i])] = torch.tensor(segments[i][:l])
    return ids, mask, segs


def finetune(corpus: InstructionCorpus, config: TextEncoderConfig, steps: int, rng,
             batch_size: int = 16, lr: float = 2e-4, weight_decay: float = 1e-4):
    """Train the encoder from random init with combined MLM+NSP loss.

    Returns (encoder, log); log is a list of {step, loss, mlm, nsp} dicts.
    """
    from .train import TrainingFailureError

    if steps < 1:
        raise ValueError("steps must be >= 1")
    torch.manual_seed(int(rng.integers(2 ** 31)))
    encoder = TextEncoder(config, corpus)
    opt = torch.optim.AdamW(encoder.parameters(), lr=lr,
                            betas=(0.9, 0.999), weight_decay=weight_decay)
    ce = nn.CrossEntropyLoss()
    log = []
    encoder.train()
    for step in range(1, steps + 1):
        pairs = nsp_pairs(corpus, batch_size, rng)
        seqs, segs, labels = [], [], []
        mlm_targets, mlm_rows, mlm_cols = [], [], []
        for row, ((a, b), label) in enumerate(pairs):
            ids, seg = _pair_tokens(corpus, a, b, config.max_len)
            corrupted, targets, positions = mlm_mask(
                corpus, TokenSequence(ids, [1] * len(ids)), config.mask_prob, rng)
            seqs.append(corrupted)
            segs.append(seg)
            labels.append(label)
            mlm_rows += [row] * len(positions)
            mlm_cols += positions
            mlm_targets += targets
        ids, mask, seg = _pad_batch(seqs, corpus, config.max_len, segs)
        reprs = encoder(ids, mask, seg)
        nsp_logits = encoder.nsp_head(torch.tanh(encoder.nsp_pool(reprs[:, 0])))
        loss = ce(nsp_logits, torch.tensor(labels))
        nsp_val = float(loss)
        mlm_val = 0.0
        if mlm_targets:
            logits = encoder.mlm_head(reprs[mlm_rows, mlm_cols])
            mlm_loss = ce(logits, torch.tensor(mlm_targets))
            mlm_val = float(mlm_loss)
            loss = loss + mlm_loss
        if not torch.isfinite(loss):
            raise TrainingFailureError(f"non-finite loss at step {step}", step=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.append({"step": step, "loss": float(loss), "mlm": mlm_val, "nsp": nsp_val})
    encoder.eval()
    return encoder, log


# -- category centroids and persistence -------------------------------------

def category_centroids(encoder: TextEncoder, split: str = "train") -> dict:
    out = {}
    for c in CATEGORIES:
        texts = [s.text for s in encoder.corpus.sentences(c, split)]
        zs = encoder.embed_batch(texts).numpy()
        out[c] = zs.mean(axis=0)
    return out


def classify_guidance(z: np.ndarray, centroids: dict) -> tuple[str, dict]:
    dists = {c: float(np.linalg.norm(z - m)) for c, m in centroids.items()}
    return min(dists, key=dists.get), dists


def save_textenc(path, encoder: TextEncoder, step: int = 0) -> None:
    tensors = {k: v.detach().cpu().numpy() for k, v in encoder.state_dict().items()}
    config = {
        "encoder": asdict(encoder.config),
        "corpus_lines": encoder.corpus.to_lines(),
        "vocabulary": encoder.corpus.vocabulary,
    }
    ckpt.save_checkpoint(path, tensors, kind="textenc", config=config, step=step)


def load_textenc(path) -> TextEncoder:
    manifest, tensors = ckpt.load_checkpoint(path)
    if manifest["kind"] != "textenc":
        raise ckpt.CheckpointError(f"expected a textenc checkpoint, got {manifest['kind']!r}")
    cfg = TextEncoderConfig(**manifest["config"]["encoder"])
    corpus = InstructionCorpus.from_lines(
        manifest["config"]["corpus_lines"], manifest["config"]["vocabulary"])
    encoder = TextEncoder(cfg, corpus)
    ckpt.match_tensors(tensors, [k for k, _ in encoder.state_dict().items()])
    encoder.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    encoder.eval()
    return encoder
