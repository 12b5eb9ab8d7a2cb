import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from core.model.attention import AttentionState, advance, attend, energies, initial_attention_state
from core.model.las import LASModel, ModelDims, forward_ce
from core.model.listener import listen, reduced_length
from core.model.speller import SpellerState, initial_layers, smooth_labels, spell_step
from core.numerics.checkpoint import read_checkpoint
from core.numerics.gradcheck import check_gradients
from core.numerics.graph import Graph
from core.numerics.layers import lstm_init
from core.numerics.prng import make_prng
from core.numerics.tensor import Tensor, no_grad
from core.wordpiece import BOS_ID, EOS_ID, PAD_ID
from utils.errors import CheckpointFormatError, InvalidArgumentError


def _features(frames: int = 4, dim: int = 3, seed: int = 0) -> np.ndarray:
    return make_prng(seed).normal(size=(frames, dim))


def test_alignments_sum_to_one_at_every_step(tiny_model):
    with no_grad():
        encoded = tiny_model.encode(_features(9))
        state = tiny_model.initial_state(encoded)
        for token in [4, 5, 3, 4, 4, 5, 2]:
            _, state = tiny_model.step(state, encoded)
            assert abs(state.attention.previous.data.sum() - 1.0) < 1e-8
            state = state._replace(prev_token=token)
        np.testing.assert_allclose(state.attention.accumulated.data.sum(), 7.0, atol=1e-8)


def test_zero_history_location_attention_equals_content_attention(tiny_model):
    with no_grad():
        encoded = tiny_model.encode(_features(8))
        state = initial_attention_state(encoded.listener.length, "accumulated")
        s = Tensor(make_prng(1).normal(size=3))
        params = tiny_model.attention_params
        content_only = {k: v for k, v in params.items() if k not in ("F", "U_loc")}
        with_location = energies(s, encoded.listener, state, params)
        without = energies(s, encoded.listener, state, content_only)
    assert np.array_equal(with_location.data, without.data)


def test_location_term_changes_energies_once_history_is_nonzero(tiny_model):
    with no_grad():
        encoded = tiny_model.encode(_features(8))
        length = encoded.listener.length
        state = advance(initial_attention_state(length), Tensor(np.eye(length)[0]))
        s = Tensor(np.zeros(3))
        params = tiny_model.attention_params
        content_only = {k: v for k, v in params.items() if k not in ("F", "U_loc")}
        assert not np.array_equal(energies(s, encoded.listener, state, params).data,
                                  energies(s, encoded.listener, state, content_only).data)


def test_zero_energy_weights_give_uniform_attention(tiny_model):
    with no_grad():
        encoded = tiny_model.encode(_features(8))
        params = dict(tiny_model.attention_params)
        params["w"] = Tensor(np.zeros_like(params["w"].data))
        state = advance(initial_attention_state(encoded.listener.length), Tensor(np.eye(encoded.listener.length)[0]))
        context, alpha = attend(Tensor(make_prng(2).normal(size=3)), encoded.listener, state, params)
    length = encoded.listener.length
    np.testing.assert_allclose(alpha.data, np.full(length, 1.0 / length), atol=1e-15)
    np.testing.assert_allclose(context.data, encoded.listener.h.data.mean(axis=0), atol=1e-12)


def test_history_modes_agree_when_location_filters_are_zero(tiny_model):
    arrays = tiny_model.graph.state_dict()
    arrays["attention.F"] = np.zeros_like(arrays["attention.F"])
    batch = [(_features(8, seed=3), [4, 5, 3, EOS_ID])]
    losses = {
        mode: forward_ce(batch, LASModel.from_arrays(arrays, mode), 0.0, 0.01, make_prng(0)).loss.item()
        for mode in ("accumulated", "previous")
    }
    assert losses["accumulated"] == losses["previous"]
    original = tiny_model.graph.state_dict()
    with_filters = {
        mode: forward_ce(batch, LASModel.from_arrays(original, mode), 0.0, 0.01, make_prng(0)).loss.item()
        for mode in ("accumulated", "previous")
    }
    assert with_filters["accumulated"] != with_filters["previous"]


def test_previous_history_mode_uses_last_alignment():
    state = AttentionState(previous=Tensor(np.array([0.25, 0.75])), accumulated=Tensor(np.array([1.0, 2.0])), mode="previous")
    np.testing.assert_array_equal(state.history().data, [0.25, 0.75])
    with pytest.raises(InvalidArgumentError):
        initial_attention_state(3, "sideways")


def test_alignment_length_mismatch_raises(tiny_model):
    encoded = tiny_model.encode(_features(8))
    state = initial_attention_state(encoded.listener.length + 1)
    with pytest.raises(InvalidArgumentError):
        attend(Tensor(np.zeros(3)), encoded.listener, state, tiny_model.attention_params)


def test_listener_shape_law_for_all_lengths():
    rng = make_prng(0)
    graph = Graph()
    for layer, input_dim in enumerate((2, 4, 4)):
        for direction in ("fwd", "bwd"):
            graph.add_group(f"listener.layer{layer}.{direction}", lstm_init(rng, input_dim, 1))
    with no_grad():
        for frames in range(1, 201):
            expected = math.ceil(math.ceil(math.ceil(frames / 2) / 2) / 2)
            out = listen(np.ones((frames, 1)), graph, 3)
            assert out.length == expected == reduced_length(frames, 3)
            assert out.h.shape == (expected, 2)


@given(st.integers(1, 10_000), st.integers(0, 6))
def test_reduced_length_is_repeated_ceiling(frames, layers):
    expected = frames
    for _ in range(layers):
        expected = (expected + 1) // 2
    assert reduced_length(frames, layers) == expected


def test_listener_rejects_empty_input(tiny_model):
    with pytest.raises(InvalidArgumentError):
        tiny_model.encode(np.zeros((0, 3)))


def test_feature_dim_mismatch_raises(tiny_model):
    with pytest.raises(InvalidArgumentError):
        tiny_model.encode(np.zeros((4, 5)))


def test_spell_step_returns_log_distribution(tiny_model):
    state = SpellerState(layers=initial_layers(1, 3), prev_token=BOS_ID, attention=initial_attention_state(2))
    log_probs, layers = spell_step(state, Tensor(np.zeros(4)), tiny_model.graph)
    assert log_probs.shape == (6,)
    assert abs(np.exp(log_probs.data).sum() - 1.0) < 1e-12
    assert len(layers) == 1


def test_spell_step_rejects_bad_token(tiny_model):
    state = SpellerState(layers=initial_layers(1, 3), prev_token=6, attention=initial_attention_state(2))
    with pytest.raises(InvalidArgumentError):
        spell_step(state, Tensor(np.zeros(4)), tiny_model.graph)


def test_smooth_labels():
    q = smooth_labels(2, 5, 0.01)
    assert q[2] == pytest.approx(0.99, abs=1e-15)
    assert q[0] == pytest.approx(0.0025)
    assert q.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(smooth_labels(1, 3, 0.0), [0.0, 1.0, 0.0])


@pytest.mark.parametrize("args", [(0, 5, 1.0), (0, 5, -0.1), (5, 5, 0.1), (0, 1, 0.1)])
def test_smooth_labels_rejects_bad_arguments(args):
    with pytest.raises(InvalidArgumentError):
        smooth_labels(*args)


def test_teacher_forcing_feeds_bos_then_truth(tiny_model):
    tokens = [4, 5, 3, EOS_ID]
    result = forward_ce([(_features(), tokens)], tiny_model, 0.0, 0.0, make_prng(0))
    assert result.diagnostics[0].fed_tokens == [BOS_ID, 4, 5, 3]
    assert result.num_steps == 4
    expected = -np.mean(np.log(result.diagnostics[0].truth_probs))
    assert result.loss.item() == pytest.approx(expected, rel=1e-12)


def test_full_sampling_keeps_bos_first_and_draws_from_the_model(tiny_model):
    result = forward_ce([(_features(), [4, 5, 3, EOS_ID])], tiny_model, 1.0, 0.01, make_prng(3))
    fed = result.diagnostics[0].fed_tokens
    assert fed[0] == BOS_ID
    assert all(0 <= t < 6 for t in fed)


def test_sequence_logprob_matches_teacher_forced_truth_probs(tiny_model):
    tokens = [5, 4, EOS_ID]
    features = _features(6)
    result = forward_ce([(features, tokens)], tiny_model, 0.0, 0.0, make_prng(0))
    logp = tiny_model.sequence_logprob(features, tokens).item()
    assert logp == pytest.approx(float(np.sum(np.log(result.diagnostics[0].truth_probs))), rel=1e-12)


def test_batch_loss_is_mean_over_all_steps(tiny_model):
    a = (_features(4, seed=1), [4, EOS_ID])
    b = (_features(6, seed=2), [5, 5, 3, EOS_ID])
    rng = make_prng(0)
    la = forward_ce([a], tiny_model, 0.0, 0.01, rng).loss.item()
    lb = forward_ce([b], tiny_model, 0.0, 0.01, rng).loss.item()
    both = forward_ce([a, b], tiny_model, 0.0, 0.01, rng).loss.item()
    assert both == pytest.approx((2 * la + 4 * lb) / 6, rel=1e-12)


@pytest.mark.parametrize("tokens", [[], [4, 5]])
def test_token_sequences_must_end_with_eos(tiny_model, tokens):
    with pytest.raises(InvalidArgumentError):
        forward_ce([(_features(), tokens)], tiny_model, 0.0, 0.01, make_prng(0))


def test_sampling_probability_range_checked(tiny_model):
    with pytest.raises(InvalidArgumentError):
        forward_ce([(_features(), [EOS_ID])], tiny_model, 1.5, 0.01, make_prng(0))


def test_ce_loss_gradients_match_finite_differences(tiny_model):
    batch = [(_features(5, seed=4), [4, 3, EOS_ID]), (_features(3, seed=5), [5, EOS_ID])]
    errors = check_gradients(tiny_model.graph, lambda: forward_ce(batch, tiny_model, 0.0, 0.01, make_prng(0)).loss)
    assert max(errors.values()) < 1e-4


def test_ce_gradients_on_a_twelve_frame_four_token_utterance(tiny_model):
    batch = [(_features(12, seed=6), [4, 5, 3, 4, EOS_ID])]
    errors = check_gradients(tiny_model.graph, lambda: forward_ce(batch, tiny_model, 0.0, 0.01, make_prng(0)).loss)
    assert max(errors.values()) < 1e-4


def test_ce_gradients_reach_location_filters(tiny_model):
    grads = tiny_model.graph.backward(forward_ce([(_features(8), [4, 5, 3, EOS_ID])], tiny_model, 0.0, 0.01, make_prng(0)).loss)
    assert np.any(grads["attention.F"] != 0)
    assert np.any(grads["attention.U_loc"] != 0)


def test_greedy_decode_never_emits_pad_bos_or_eos(tiny_model):
    tokens = tiny_model.greedy_decode(_features(8), max_steps=12)
    assert len(tokens) <= 12
    assert not {PAD_ID, BOS_ID, EOS_ID} & set(tokens)


def test_checkpoint_round_trip_recovers_architecture(tiny_model, tmp_path):
    path = str(tmp_path / "tiny.lasf")
    tiny_model.save(path)
    loaded = LASModel.load(path)
    assert loaded.dims == tiny_model.dims
    features = _features(7)
    with no_grad():
        a = tiny_model.sequence_logprob(features, [4, EOS_ID]).item()
        b = loaded.sequence_logprob(features, [4, EOS_ID]).item()
    assert a == b


def test_content_only_model_has_no_location_parameters(tiny_dims):
    model = LASModel.initialize(tiny_dims.model_copy(update={"location_aware": False}), seed=1)
    assert "attention.F" not in model.graph and "attention.U_loc" not in model.graph
    assert ModelDims.from_arrays(model.graph.state_dict()).location_aware is False
    assert forward_ce([(_features(), [4, EOS_ID])], model, 0.0, 0.01, make_prng(0)).num_steps == 2


def test_foreign_checkpoint_rejected():
    with pytest.raises(CheckpointFormatError):
        LASModel.from_arrays({"lm.embed": np.zeros((5, 2))})


def test_initialization_is_seeded(tiny_dims, tmp_path):
    LASModel.initialize(tiny_dims, seed=3).save(str(tmp_path / "a.lasf"))
    LASModel.initialize(tiny_dims, seed=3).save(str(tmp_path / "b.lasf"))
    assert (tmp_path / "a.lasf").read_bytes() == (tmp_path / "b.lasf").read_bytes()
    arrays = read_checkpoint(str(tmp_path / "a.lasf"))
    assert list(arrays)[0] == "listener.layer0.fwd.Wx"
