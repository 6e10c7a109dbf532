"""Sample prompts and the frozen language-model providers that embed them.

Two providers share one small interface: ``StubProvider`` (hash-seeded
embedding table, whitespace tokenizer; needs no download) and
``PretrainedProvider`` (a local Hugging Face causal LM directory, read-only).
Select one with ``load_provider("stub")`` or ``load_provider("pretrained:<dir>")``.
"""

from __future__ import annotations

import hashlib
import logging
from importlib import resources
from typing import Protocol, Sequence

import numpy as np
import torch

from .data import TrajectorySample
from .errors import ConfigError

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "v1"


def load_template(version: str = TEMPLATE_VERSION) -> str:
    return resources.files("maker.resources").joinpath(f"prompt_template_{version}.txt").read_text("utf-8").strip()


def build_prompt(sample: TrajectorySample, dataset_name: str, template: str | None = None) -> str:
    template = template or load_template()
    feats = sample.history_features
    lon, lat, sog, cog = feats.T
    dt = np.diff(sample.history_timestamps).astype(np.float64)
    fmt5 = "{:.5f}".format
    return template.format(
        dataset=dataset_name,
        h=sample.h,
        p=sample.p,
        lon_min=fmt5(lon.min()),
        lon_max=fmt5(lon.max()),
        lon_median=fmt5(np.median(lon)),
        lat_min=fmt5(lat.min()),
        lat_max=fmt5(lat.max()),
        lat_median=fmt5(np.median(lat)),
        dt_mean=f"{dt.mean():.1f}" if dt.size else "0.0",
        dt_std=f"{dt.std():.1f}" if dt.size else "0.0",
        sog_mean=f"{sog.mean():.2f}",
        cog_mean=f"{cog.mean():.2f}",
        positions=" ".join(f"{fmt5(a)} {fmt5(b)}" for a, b in zip(lon, lat)),
    )


class FrozenLMProvider(Protocol):
    vocab_size: int
    embed_width: int
    context_limit: int

    @property
    def word_embeddings(self) -> torch.Tensor: ...

    def encode(self, text: str) -> list[int]: ...

    def lookup(self, token_ids: Sequence[int]) -> torch.Tensor: ...

    def parameters(self): ...


class StubProvider:
    """Whitespace tokenizer with hashed ids over a seeded Gaussian embedding table."""

    def __init__(self, vocab_size: int = 4096, embed_width: int = 64, context_limit: int = 512, seed: int = 0):
        self.vocab_size = vocab_size
        self.embed_width = embed_width
        self.context_limit = context_limit
        gen = torch.Generator().manual_seed(seed)
        self._table = torch.randn(vocab_size, embed_width, generator=gen, dtype=torch.float64) / embed_width**0.5
        self._table.requires_grad_(False)
        self._words: dict[int, str] = {}

    @property
    def word_embeddings(self) -> torch.Tensor:
        return self._table

    def token_id(self, word: str) -> int:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.vocab_size

    def encode(self, text: str) -> list[int]:
        ids = []
        for word in text.split():
            i = self.token_id(word)
            self._words.setdefault(i, word)
            ids.append(i)
        return ids

    def decode(self, token_ids: Sequence[int]) -> str:
        """Inverse of encode for words seen so far; on a hash collision the first word seen wins."""
        return " ".join(self._words[i] for i in token_ids)

    def lookup(self, token_ids: Sequence[int]) -> torch.Tensor:
        return self._table[torch.as_tensor(list(token_ids), dtype=torch.long)]

    def parameters(self):
        return [self._table]


class PretrainedProvider:
    """Read-only adapter around a local causal LM (e.g. a GPT-2 checkpoint directory)."""

    def __init__(self, model_dir: str):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - optional extra
            raise ConfigError("pretrained providers need the 'transformers' package") from exc
        self.tokenizer = AutoTokenizer.from_pretrained(model_dir)
        self.model = AutoModel.from_pretrained(model_dir).eval()
        for param in self.model.parameters():
            param.requires_grad_(False)
        self.vocab_size = int(self.model.get_input_embeddings().weight.shape[0])
        self.embed_width = int(self.model.get_input_embeddings().weight.shape[1])
        self.context_limit = int(getattr(self.model.config, "n_positions", 1024))

    @property
    def word_embeddings(self) -> torch.Tensor:
        return self.model.get_input_embeddings().weight.detach()

    def encode(self, text: str) -> list[int]:
        return list(self.tokenizer(text, add_special_tokens=False)["input_ids"])

    def decode(self, token_ids: Sequence[int]) -> str:
        """Inverse of encode for words seen so far; on a hash collision the first word seen wins."""
        return self.tokenizer.decode(list(token_ids))

    @torch.no_grad()
    def lookup(self, token_ids: Sequence[int]) -> torch.Tensor:
        ids = torch.as_tensor([list(token_ids)], dtype=torch.long)
        return self.model(input_ids=ids).last_hidden_state[0]

    def parameters(self):
        return list(self.model.parameters())


def load_provider(name: str, seed: int = 0) -> FrozenLMProvider:
    if name == "stub":
        return StubProvider(seed=seed)
    if name.startswith("pretrained:"):
        return PretrainedProvider(name.split(":", 1)[1])
    raise ConfigError(f"unknown lm_provider {name!r}; expected 'stub' or 'pretrained:<model-dir>'")


class Tokenizer:
    """Tokenize against a provider, truncating to its context limit."""

    def __init__(self, provider: FrozenLMProvider):
        self.provider = provider
        self.truncated = 0

    def __call__(self, text: str) -> list[int]:
        ids = self.provider.encode(text) if text else []
        if len(ids) > self.provider.context_limit:
            self.truncated += 1
            log.warning("prompt truncated from %d to %d tokens", len(ids), self.provider.context_limit)
            ids = ids[: self.provider.context_limit]
        return ids


def tokenize(text: str, provider: FrozenLMProvider) -> list[int]:
    return Tokenizer(provider)(text)


def embed_tokens(token_ids: Sequence[int], provider: FrozenLMProvider) -> torch.Tensor:
    """H_L: one row per token, (len(token_ids), embed_width)."""
    ids = list(token_ids)
    if any(i < 0 or i >= provider.vocab_size for i in ids):
        raise ValueError(f"token id out of vocabulary range [0, {provider.vocab_size})")
    if not ids:
        return torch.zeros(0, provider.embed_width, dtype=provider.word_embeddings.dtype)
    with torch.no_grad():
        return provider.lookup(ids).detach()


def provider_checksum(provider: FrozenLMProvider) -> str:
    h = hashlib.sha256()
    for p in provider.parameters():
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
