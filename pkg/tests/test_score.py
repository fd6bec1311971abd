import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singsynth.score import (
    LexiconError,
    MusicalScore,
    NoteEvent,
    PhonemeLexicon,
    ScoreParseError,
    beats_to_frames,
    demo_lexicon,
    midi_to_hz,
    parse_score,
    score_to_tokens,
    serialize_score,
)


def test_parse_minimal_score():
    score = parse_score("tempo 120\nla 69 1.0\n")
    assert score.tempo_bpm == 120
    assert score.events == (NoteEvent("la", 69, 1.0),)


def test_parse_rejects_zero_tempo():
    with pytest.raises(ScoreParseError, match="tempo must be positive"):
        parse_score("tempo 0\nla 69 1.0\n")


def test_parse_rejects_leading_continuation():
    with pytest.raises(ScoreParseError, match="no syllable to continue"):
        parse_score("tempo 120\nla 69 1.0 ~\n")


def test_parse_rejects_continuation_after_rest():
    with pytest.raises(ScoreParseError, match="cannot continue a rest"):
        parse_score("tempo 120\n- 0 1.0\nla 69 1.0 ~\n")


def test_parse_rejects_rest_with_pitch():
    with pytest.raises(ScoreParseError):
        parse_score("tempo 120\n- 60 1.0\n")


def test_parse_rejects_sung_note_with_pitch_zero():
    with pytest.raises(ScoreParseError):
        parse_score("tempo 120\nla 0 1.0\n")


def test_parse_error_reports_line_number():
    with pytest.raises(ScoreParseError, match="line 3"):
        parse_score("tempo 120\nla 69 1.0\nla 69 zero\n")


def test_parse_skips_comments_and_blanks():
    text = "# a song\n\ntempo 100  # fast\nla 69 1.0\n"
    score = parse_score(text)
    assert score.tempo_bpm == 100
    assert len(score.events) == 1


def test_midi_to_hz_reference_points():
    assert midi_to_hz(69) == pytest.approx(440.0, abs=0)
    assert midi_to_hz(81) == pytest.approx(880.0, abs=1e-9)
    # closed form evaluated independently: 440 * 2 ** (-9/12)
    assert midi_to_hz(60) == pytest.approx(261.6256, abs=1e-3)


def test_midi_to_hz_rejects_rest_pitch():
    with pytest.raises(ValueError):
        midi_to_hz(0)


def test_midi_to_hz_monotonic_and_octave_doubling():
    values = [midi_to_hz(m) for m in range(1, 128)]
    assert all(a < b for a, b in zip(values, values[1:]))
    for m in range(1, 116):
        assert abs(midi_to_hz(m + 12) / (2 * midi_to_hz(m)) - 1.0) < 1e-9


def test_beats_to_frames_examples():
    # 0.5 s at 15 ms -> 33.33, rounds down
    assert beats_to_frames(1.0, 120, 0.015) == 33
    # 0.3 s at 15 ms -> exactly 20
    assert beats_to_frames(0.5, 100, 0.015) == 20
    # tiny note clamps to one frame
    assert beats_to_frames(0.001, 120, 0.015) == 1


def test_beats_to_frames_requires_positive_args():
    with pytest.raises(ValueError):
        beats_to_frames(0.0, 120, 0.015)


def test_score_to_tokens_duplicates_note_attributes(lexicon):
    score = parse_score("tempo 120\nla 69 1.0\n")
    tokens = score_to_tokens(score, lexicon)
    ids = lexicon.ids()
    assert tokens.phoneme_ids == [ids["l"], ids["a"]]
    assert tokens.pitch_ids == [69, 69]
    assert tokens.note_frame_counts == [33, 33]
    assert tokens.syllable_spans == [(0, 2)]


def test_score_to_tokens_rest(lexicon):
    score = parse_score("tempo 100\n- 0 0.5\n")
    tokens = score_to_tokens(score, lexicon)
    assert tokens.phoneme_ids == [lexicon.silence_id]
    assert tokens.pitch_ids == [0]
    assert tokens.note_frame_counts == [20]


def test_score_to_tokens_melisma_merges_span(lexicon):
    score = parse_score("tempo 120\nla 69 1.0\nla 71 0.5 ~\n")
    tokens = score_to_tokens(score, lexicon)
    ids = lexicon.ids()
    # first note carries the syllable's phonemes, the continuation repeats
    # the final vowel at the new pitch
    assert tokens.phoneme_ids == [ids["l"], ids["a"], ids["a"]]
    assert tokens.pitch_ids == [69, 69, 71]
    assert tokens.note_frame_counts == [33, 33, 17]
    assert tokens.syllable_spans == [(0, 3)]


def test_score_to_tokens_melisma_extension_uses_final_vowel(lexicon):
    score = parse_score("tempo 120\nlan 60 1.0\nlan 62 1.0 ~\n")
    tokens = score_to_tokens(score, lexicon)
    ids = lexicon.ids()
    assert tokens.phoneme_ids == [ids["l"], ids["a"], ids["n"], ids["a"]]
    assert tokens.syllable_spans == [(0, 4)]


def test_score_to_tokens_unknown_syllable_names_it(lexicon):
    score = parse_score("tempo 120\nxyzzy 69 1.0\n")
    with pytest.raises(LexiconError, match="xyzzy"):
        score_to_tokens(score, lexicon)


def test_demo_lexicon_shape(lexicon):
    assert lexicon.phoneme_vocab[0] == "pad"
    assert lexicon.phoneme_vocab[1] == "sil"
    assert len(lexicon.phoneme_vocab) <= 72
    assert len(lexicon.syllables) >= 40


def test_lexicon_rejects_unknown_phoneme():
    with pytest.raises(LexiconError):
        PhonemeLexicon(
            syllables={"la": ("l", "q")},
            phoneme_vocab=("pad", "sil", "a", "l"),
        )


# --- property tests --------------------------------------------------------

SYLLABLES = sorted(demo_lexicon().syllables)


@st.composite
def valid_scores(draw):
    tempo = draw(st.sampled_from([60.0, 90.0, 120.0, 150.0]))
    n = draw(st.integers(min_value=1, max_value=12))
    events = []
    for _ in range(n):
        beats = draw(st.sampled_from([0.25, 0.5, 1.0, 2.0]))
        if draw(st.booleans()) and events and not events[-1].is_rest and \
                draw(st.integers(0, 3)) == 0:
            events.append(NoteEvent(events[-1].syllable,
                                    draw(st.integers(55, 79)), beats,
                                    continues=True))
        elif draw(st.integers(0, 9)) == 0:
            events.append(NoteEvent("-", 0, beats))
        else:
            events.append(NoteEvent(draw(st.sampled_from(SYLLABLES)),
                                    draw(st.integers(55, 79)), beats))
    return MusicalScore(tempo_bpm=tempo, events=tuple(events))


@settings(max_examples=60, deadline=None)
@given(valid_scores())
def test_score_round_trip(score):
    assert parse_score(serialize_score(score)) == score


@settings(max_examples=60, deadline=None)
@given(valid_scores())
def test_tokens_satisfy_invariants(score):
    lexicon = demo_lexicon()
    tokens = score_to_tokens(score, lexicon)
    tokens.validate()
    n = len(tokens)
    assert sum(end - start for start, end in tokens.syllable_spans) == n
    for pid, pitch in zip(tokens.phoneme_ids, tokens.pitch_ids):
        assert (pitch == 0) == (pid == lexicon.silence_id)
    assert all(c >= 1 for c in tokens.note_frame_counts)
