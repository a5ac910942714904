"""Word-level tokenizer over the query grammar vocabulary."""

from __future__ import annotations

import re

import torch

PAD, UNK, EOS, MASK = "<pad>", "<unk>", "<eos>", "<mask>"
SPECIALS = (PAD, UNK, EOS, MASK)


class Tokenizer:
    def __init__(self, words, max_len: int = 20):
        words = [w for w in dict.fromkeys(words) if w not in SPECIALS]
        self.itos = list(SPECIALS) + words
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        self.max_len = max_len
        self.pad_id, self.unk_id, self.eos_id, self.mask_id = (self.stoi[s] for s in SPECIALS)

    def __len__(self):
        return len(self.itos)

    def tokenize(self, text: str) -> list[int]:
        """Lowercased words -> ids, EOS appended, padded/truncated to ``max_len``."""
        ids = [self.stoi.get(w, self.unk_id) for w in re.findall(r"[a-z]+", text.lower())]
        ids = ids[: self.max_len - 1] + [self.eos_id]
        return ids + [self.pad_id] * (self.max_len - len(ids))

    def batch(self, texts) -> torch.Tensor:
        return torch.tensor([self.tokenize(t) for t in texts], dtype=torch.long)

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            if i == self.eos_id:
                break
            out.append(self.itos[i])
        return " ".join(out)
