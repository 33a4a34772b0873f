import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from bev_adapter.grid import token_layout, visual_tokens
from bev_adapter.raster import N_CHANNELS, BevSpec, rasterize_scene
from cot.prompts import CotOptions, assemble_turns
from datagen.world import SceneSample
from tokenizer.conversation import TokenStream, Turn, encode_conversation
from tokenizer.vocab import Vocab, tokenize

logger = logging.getLogger(__name__)


@dataclass
class SampleEncoder:
    """Turns scene samples into model inputs: visual tokens plus a token stream."""

    vocab: Vocab
    bev: BevSpec = BevSpec()
    grid: tuple[int, int] = (8, 8)
    adapter: str = "flatten"
    options: CotOptions = CotOptions()
    _visual_cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def visual_layout(self) -> tuple[int, int]:
        """(token count, token dim)."""
        return token_layout(N_CHANNELS, self.bev.size, self.bev.size, *self.grid, adapter=self.adapter)

    def visual(self, sample: SceneSample) -> np.ndarray:
        cached = self._visual_cache.get(sample.sample_id)
        if cached is None:
            feature = rasterize_scene(sample.objects, self.bev)
            if feature.skipped:
                logger.debug("%s: %d objects outside the BEV extent", sample.sample_id, feature.skipped)
            cached = visual_tokens(feature, *self.grid, adapter=self.adapter).tokens
            self._visual_cache[sample.sample_id] = cached
        return cached

    def turns(self, sample: SceneSample, cot: Sequence[Turn] | None = None) -> list[Turn]:
        return assemble_turns(cot if cot is not None else sample.cot, sample.ego_status, self.options)

    def stream(self, sample: SceneSample, cot: Sequence[Turn] | None = None) -> TokenStream:
        return encode_conversation(self.turns(sample, cot), self.vocab)

    def prompt_ids(self, sample: SceneSample) -> list[list[int]]:
        return [[self.vocab.id(t) for t in tokenize(prompt)] for prompt, _ in self.turns(sample)]
