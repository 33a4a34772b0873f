import math

import numpy as np
import pytest

from datagen.alignment import vanilla_example
from losses.training import TrainSchedule, train
from model.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from model.generation import generate
from model.transformer import (
    EmptyMaskError,
    ModelConfig,
    ModelConfigError,
    SequenceTooLongError,
    attention_mask,
    forward,
    init_model,
    parameter_count,
    score,
    sequence_nll,
)
from tokenizer.conversation import encode_token_turns
from tokenizer.vocab import PAD_ID

SMALL = ModelConfig(n_layers=2, width=8, n_heads=2, max_seq_len=32, vocab_size=64,
                    visual_token_dim=3, n_visual_tokens=2, seed=0)


def small_inputs(rng, n_text=10):
    visual = rng.normal(size=(SMALL.n_visual_tokens, SMALL.visual_token_dim))
    ids = rng.integers(5, SMALL.vocab_size, size=n_text)
    return visual, ids


class TestInit:
    def test_same_seed_identical(self):
        a, b = init_model(SMALL), init_model(SMALL)
        for name, node in a.params.items():
            np.testing.assert_array_equal(node.value, b.params[name].value)

    def test_different_seed_differs(self):
        a, b = init_model(SMALL), init_model(SMALL.model_copy(update={"seed": 1}))
        assert not np.array_equal(a.params["tok_emb"].value, b.params["tok_emb"].value)

    def test_parameter_count_closed_form(self):
        d, v, s, dv, n_layers = 8, 64, 32, 3, 2
        expected = (v * d + s * d + d) + (dv * d + d + d * d + d) + n_layers * (12 * d * d + 7 * d) + d + d * v
        assert parameter_count(SMALL) == expected
        assert init_model(SMALL).params.num_parameters == expected

    def test_width_must_split_into_heads(self):
        with pytest.raises(ModelConfigError):
            init_model(SMALL.model_copy(update={"n_heads": 3}))


class TestForward:
    def test_rows_are_distributions(self, rng):
        visual, ids = small_inputs(rng)
        logp = forward(init_model(SMALL), visual, ids).value
        assert logp.shape == (10, 64)
        np.testing.assert_allclose(np.exp(logp).sum(axis=-1), 1.0, atol=1e-10)

    def test_causal(self, rng):
        model = init_model(SMALL)
        visual, ids = small_inputs(rng)
        base = forward(model, visual, ids).value
        changed = ids.copy()
        changed[6] = (changed[6] + 1 - 5) % (SMALL.vocab_size - 5) + 5
        perturbed = forward(model, visual, changed).value
        np.testing.assert_allclose(perturbed[:6], base[:6], atol=1e-12)
        assert not np.allclose(perturbed[6:], base[6:])

    def test_visual_prefix_sees_itself_only(self):
        mask = attention_mask(3, 2)
        assert not mask[:3, :3].any()
        assert mask[:3, 3:].all()
        assert mask[3].tolist() == [False, False, False, False, True]

    def test_sequence_too_long(self, rng):
        visual, ids = small_inputs(rng, n_text=31)
        with pytest.raises(SequenceTooLongError) as info:
            forward(init_model(SMALL), visual, ids)
        assert (info.value.length, info.value.limit) == (33, 32)

    def test_wrong_visual_dim(self, rng):
        with pytest.raises(ModelConfigError):
            forward(init_model(SMALL), rng.normal(size=(2, 5)), np.array([1, 6, 7]))


class TestScore:
    def stream(self):
        return encode_token_turns([([7, 8, 9], [10, 11, 12, 13, 14, 15, 16, 17, 18])])

    def test_zero_head_is_uniform(self, rng):
        model = init_model(SMALL)
        model.params["head"].value[:] = 0.0
        visual, _ = small_inputs(rng)
        assert score(model, visual, self.stream()).item() == pytest.approx(-math.log(64), abs=1e-12)

    def test_uniform_nll(self, rng):
        model = init_model(SMALL)
        model.params["head"].value[:] = 0.0
        visual, _ = small_inputs(rng)
        stream = self.stream()
        assert stream.n_supervised == 10
        assert sequence_nll(model, visual, stream).item() == pytest.approx(10 * math.log(64), abs=1e-9)
        assert 10 * math.log(64) == pytest.approx(41.589, abs=1e-3)

    def test_padding_invariant(self, rng):
        model = init_model(SMALL)
        visual, _ = small_inputs(rng)
        stream = self.stream()
        assert score(model, visual, stream.padded(20)).item() == score(model, visual, stream).item()

    def test_empty_mask(self, rng):
        visual, _ = small_inputs(rng)
        stream = encode_token_turns([([7, 8], [])])
        stream = type(stream)(ids=stream.ids, loss_mask=np.zeros(len(stream), dtype=bool), turn_spans=stream.turn_spans)
        with pytest.raises(EmptyMaskError):
            score(init_model(SMALL), visual, stream)


class TestCheckpoint:
    def test_round_trip_forward(self, tmp_path, rng):
        model = init_model(SMALL)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        visual, ids = small_inputs(rng)
        np.testing.assert_array_equal(forward(loaded, visual, ids).value, forward(model, visual, ids).value)
        assert loaded.config == model.config

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_model(SMALL), path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(CheckpointError, match="payload"):
            load_checkpoint(path)

    def test_garbage_header(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes((5).to_bytes(8, "little") + b"{nope")
        with pytest.raises(CheckpointError, match="JSON"):
            load_checkpoint(path)

    def test_version_required(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_model(SMALL), path)
        raw = path.read_bytes().replace(b'"version": "1"', b'"version": "2"')
        path.write_bytes(raw)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")


class TestGenerate:
    def test_same_seed_same_candidates(self, tiny_model, encoder, world):
        sample = world[0]
        args = (tiny_model, encoder.vocab, encoder.visual(sample), encoder.prompt_ids(sample))
        a = generate(*args, k=2, temperature=1.0, seed=5, max_turn_tokens=40)
        b = generate(*args, k=2, temperature=1.0, seed=5, max_turn_tokens=40)
        assert [c.response_ids for c in a] == [c.response_ids for c in b]

    def test_low_temperature_matches_greedy(self, tiny_model, encoder, world):
        sample = world[1]
        args = (tiny_model, encoder.vocab, encoder.visual(sample), encoder.prompt_ids(sample))
        (greedy,) = generate(*args, greedy=True, max_turn_tokens=40)
        (cold,) = generate(*args, temperature=1e-8, seed=3, max_turn_tokens=40)
        assert cold.response_ids == greedy.response_ids

    def test_untrained_model_fails_softly(self, tiny_model, encoder, world):
        sample = world[2]
        (conv,) = generate(tiny_model, encoder.vocab, encoder.visual(sample), encoder.prompt_ids(sample),
                           greedy=True, max_turn_tokens=20)
        assert len(conv.responses) == 1
        if not conv.ok:
            assert conv.failure

    def test_k_must_be_positive(self, tiny_model, encoder, world):
        with pytest.raises(ValueError):
            generate(tiny_model, encoder.vocab, encoder.visual(world[0]), encoder.prompt_ids(world[0]), k=0)


def blank_model(vocab, encoder, max_seq_len: int):
    """Zero output head: every token is equally likely and greedy decoding emits <PAD> forever."""
    n_visual, dim = encoder.visual_layout
    model = init_model(ModelConfig(n_layers=1, width=16, n_heads=2, max_seq_len=max_seq_len, vocab_size=len(vocab),
                                   visual_token_dim=dim, n_visual_tokens=n_visual, seed=0))
    model.params["head"].value[:] = 0.0
    return model


class TestContextWindow:
    def test_exhausted_window_is_a_failure(self, vocab, full_encoder, world):
        sample = world[0]
        prompts = full_encoder.prompt_ids(sample)
        n_visual = full_encoder.visual_layout[0]
        room = 1 + len(prompts[0]) + 20
        model = blank_model(vocab, full_encoder, max_seq_len=n_visual + room)
        (conv,) = generate(model, vocab, full_encoder.visual(sample), prompts, greedy=True, max_turn_tokens=1000)
        assert not conv.ok
        assert conv.failure == "context window exhausted"
        assert len(conv.response_ids) == 6
        assert conv.response_ids[0] == (PAD_ID,) * 20
        assert all(r == () for r in conv.response_ids[1:])

        stream = conv.stream()
        assert len(stream) == room
        assert stream.n_supervised == 20
        assert score(model, full_encoder.visual(sample), stream).item() == pytest.approx(-math.log(len(vocab)))

    def test_first_failure_reason_is_kept(self, vocab, full_encoder, world):
        sample = world[1]
        model = blank_model(vocab, full_encoder, max_seq_len=1024)
        (conv,) = generate(model, vocab, full_encoder.visual(sample), full_encoder.prompt_ids(sample),
                           greedy=True, max_turn_tokens=5)
        assert not conv.ok
        assert conv.failure == "turn 1 hit the length cap"
        assert [len(r) for r in conv.response_ids] == [5] * 6



@pytest.mark.slow
def test_overfit_single_sample(tiny_model, encoder, world):
    example = vanilla_example(world[0], encoder)
    before = score(tiny_model, example.visual, example.stream).item()
    schedule = TrainSchedule(epochs=150, batch_size=1, lr=1e-2, min_lr=1e-3, weight_decay=0.0)
    trained = train(tiny_model, [example], schedule).model
    after = score(trained, example.visual, example.stream).item()
    assert before < after < 0.0
    assert after > -0.5
