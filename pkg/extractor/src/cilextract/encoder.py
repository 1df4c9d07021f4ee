"""Frozen transformer encoders and span pooling.

Two flavors behind one interface: any pretrained checkpoint loadable by
transformers, or a small randomly initialized BERT ("tiny[:seed[:dim]]")
whose wordpiece vocabulary is built from the corpus itself. The tiny flavor
exists so extraction jobs and their tests run offline and byte-reproducibly;
it is still a frozen transformer, just not a pretrained one.

Span vectors are the mean over the span's sub-token representations; pair
candidates concatenate the two span vectors.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer, BertConfig, BertModel, BertTokenizerFast

from .datasets import Candidate

MAX_TOKENS = 128


class EncoderError(RuntimeError):
    pass


class FrozenEncoder:
    """A tokenizer+model pair locked in eval mode."""

    def __init__(self, tokenizer, model, name: str):
        self.tokenizer = tokenizer
        self.model = model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.name = name
        self.hidden_size = int(model.config.hidden_size)

    @torch.no_grad()
    def word_vectors(self, token_lists: list[tuple[str, ...]]) -> list[np.ndarray]:
        """Per sub-token vectors grouped back onto source tokens.

        Returns, per sentence, an (n_tokens, hidden) float32 array where each
        row is the mean of that word's sub-token representations.
        """
        enc = self.tokenizer(
            [list(t) for t in token_lists],
            is_split_into_words=True,
            padding=True,
            truncation=True,
            max_length=MAX_TOKENS,
            return_tensors="pt",
        )
        hidden = self.model(**enc).last_hidden_state  # (b, seq, h)
        out = []
        for b, tokens in enumerate(token_lists):
            word_ids = enc.word_ids(batch_index=b)
            sums = np.zeros((len(tokens), self.hidden_size), dtype=np.float64)
            counts = np.zeros(len(tokens), dtype=np.int64)
            row = hidden[b].numpy()
            for pos, wid in enumerate(word_ids):
                if wid is None:
                    continue
                sums[wid] += row[pos]
                counts[wid] += 1
            counts[counts == 0] = 1  # truncated-away tokens keep zero vectors
            out.append((sums / counts[:, None]).astype(np.float32))
        return out


def _build_tiny(corpus_tokens, seed: int, hidden: int) -> FrozenEncoder:
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    vocab.extend(sorted({t.lower() for t in corpus_tokens}))
    with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as f:
        f.write("\n".join(vocab))
        vocab_file = f.name
    tokenizer = BertTokenizerFast(vocab_file=vocab_file, do_lower_case=True)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=hidden,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=hidden * 2,
        max_position_embeddings=MAX_TOKENS + 2,
    )
    torch.manual_seed(seed)
    model = BertModel(config)
    return FrozenEncoder(tokenizer, model, f"tiny:{seed}:{hidden}")


def load_encoder(name: str, corpus_tokens=None) -> FrozenEncoder:
    """`tiny[:seed[:hidden]]` builds an offline encoder; anything else is a
    pretrained checkpoint name handed to transformers."""
    if name == "tiny" or name.startswith("tiny:"):
        parts = name.split(":")
        seed = int(parts[1]) if len(parts) > 1 else 0
        hidden = int(parts[2]) if len(parts) > 2 else 32
        if corpus_tokens is None:
            raise EncoderError("tiny encoder needs the corpus token inventory")
        return _build_tiny(corpus_tokens, seed, hidden)
    try:
        tokenizer = AutoTokenizer.from_pretrained(name)
        model = AutoModel.from_pretrained(name)
    except Exception as e:
        raise EncoderError(f"cannot load encoder {name!r}: {e}") from e
    return FrozenEncoder(tokenizer, model, name)


def candidate_vectors(encoder: FrozenEncoder, candidates: list[Candidate], batch_size: int = 8) -> np.ndarray:
    """Feature matrix for the candidates, in order.

    Token-level candidates get their span mean (dim hidden); pair candidates
    get [head_mean; tail_mean] (dim 2*hidden).
    """
    if not candidates:
        dim = encoder.hidden_size
        return np.zeros((0, dim), dtype=np.float32)

    is_pair = candidates[0].tail_span is not None
    dim = encoder.hidden_size * (2 if is_pair else 1)
    feats = np.zeros((len(candidates), dim), dtype=np.float32)

    # One forward per unique sentence, in fixed batches for reproducibility.
    sent_of = {}
    for cand in candidates:
        sent_of.setdefault(cand.tokens, None)
    sentences = list(sent_of)
    vectors = {}
    for lo in range(0, len(sentences), batch_size):
        chunk = sentences[lo:lo + batch_size]
        for tokens, vecs in zip(chunk, encoder.word_vectors(chunk)):
            vectors[tokens] = vecs

    def span_mean(vecs, span):
        s, e = span
        e = min(e, vecs.shape[0])
        if s >= e:
            return np.zeros(encoder.hidden_size, dtype=np.float32)
        return vecs[s:e].mean(axis=0)

    for i, cand in enumerate(candidates):
        vecs = vectors[cand.tokens]
        if (cand.tail_span is not None) != is_pair:
            raise EncoderError("mixed pair and span candidates in one job")
        head = span_mean(vecs, cand.span)
        if is_pair:
            feats[i] = np.concatenate([head, span_mean(vecs, cand.tail_span)])
        else:
            feats[i] = head
    return feats
