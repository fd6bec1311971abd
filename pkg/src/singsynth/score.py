"""Musical scores, syllable-to-phoneme lexicons, and the token sequence fed
to the acoustic model.

Score file grammar (UTF-8 text, ``#`` starts a comment)::

    tempo <bpm>
    <syllable|-> <midi_pitch> <beat_length> [~]

``-`` marks a rest and must carry pitch 0; a trailing ``~`` marks a note that
continues the previous line's syllable (a melisma). One syllable's phonemes
attach to its first note; every later note of the melisma contributes one
repeat of the syllable's final vowel so pitch changes stay representable.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass

REST_SYLLABLE = "-"
PAD_PHONEME = "pad"
SILENCE_PHONEME = "sil"
MAX_PHONEME_VOCAB = 72

DEFAULT_VOWELS = frozenset("aeiou")


class ScoreParseError(ValueError):
    """Malformed score file; carries the offending 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class NoteEvent:
    syllable: str
    midi_pitch: int
    beat_length: float
    continues: bool = False  # same-syllable continuation (melisma)

    def __post_init__(self):
        if not 0 <= self.midi_pitch <= 127:
            raise ValueError(f"midi_pitch must be in [0, 127], got {self.midi_pitch}")
        if (self.midi_pitch == 0) != (self.syllable == REST_SYLLABLE):
            raise ValueError(
                "pitch 0 is reserved for rests: "
                f"got syllable {self.syllable!r} with pitch {self.midi_pitch}"
            )
        if not self.beat_length > 0:
            raise ValueError(f"beat_length must be positive, got {self.beat_length}")

    @property
    def is_rest(self) -> bool:
        return self.midi_pitch == 0


@dataclass(frozen=True)
class MusicalScore:
    tempo_bpm: float
    events: tuple[NoteEvent, ...]

    def __post_init__(self):
        if not self.tempo_bpm > 0:
            raise ValueError(f"tempo must be positive, got {self.tempo_bpm}")
        if not self.events:
            raise ValueError("score has no events")


@dataclass(frozen=True)
class PhonemeLexicon:
    """Syllable -> phoneme-name mapping plus the integer phoneme vocabulary.

    ID 0 is reserved for padding and ID 1 for the rest/silence phoneme.
    """

    syllables: dict[str, tuple[str, ...]]
    phoneme_vocab: tuple[str, ...]
    vowels: frozenset[str] = DEFAULT_VOWELS

    def __post_init__(self):
        if len(self.phoneme_vocab) > MAX_PHONEME_VOCAB:
            raise LexiconError(
                f"phoneme vocabulary too large: {len(self.phoneme_vocab)} > "
                f"{MAX_PHONEME_VOCAB}"
            )
        if self.phoneme_vocab[:2] != (PAD_PHONEME, SILENCE_PHONEME):
            raise LexiconError(
                f"vocabulary must start with ({PAD_PHONEME!r}, {SILENCE_PHONEME!r})"
            )
        ids = self.ids()
        for syllable, phonemes in self.syllables.items():
            if not phonemes:
                raise LexiconError(f"syllable {syllable!r} maps to no phonemes")
            for ph in phonemes:
                if ph not in ids:
                    raise LexiconError(
                        f"syllable {syllable!r} uses phoneme {ph!r} missing from "
                        "the vocabulary"
                    )

    def ids(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.phoneme_vocab)}

    @property
    def silence_id(self) -> int:
        return 1

    def phonemes_for(self, syllable: str) -> tuple[str, ...]:
        try:
            return self.syllables[syllable]
        except KeyError:
            raise LexiconError(f"syllable {syllable!r} not in lexicon") from None

    def extension_phoneme(self, syllable: str) -> str:
        """Phoneme repeated on melisma continuation notes: the final vowel,
        or the last phoneme when the syllable has no vowel."""
        phonemes = self.phonemes_for(syllable)
        for ph in reversed(phonemes):
            if ph in self.vowels:
                return ph
        return phonemes[-1]

    @classmethod
    def from_entries(cls, entries: dict[str, tuple[str, ...]],
                     vowels: frozenset[str] = DEFAULT_VOWELS) -> "PhonemeLexicon":
        names = sorted({ph for phs in entries.values() for ph in phs}
                       - {PAD_PHONEME, SILENCE_PHONEME})
        vocab = (PAD_PHONEME, SILENCE_PHONEME) + tuple(names)
        return cls(syllables=dict(entries), phoneme_vocab=vocab, vowels=vowels)


def load_lexicon(path) -> PhonemeLexicon:
    """Load a ``<syllable>\\t<ph1> <ph2> ...`` lexicon file."""
    entries: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "\t" not in line:
                raise LexiconError(f"line {line_no}: expected TAB separator")
            syllable, phones = line.split("\t", 1)
            entries[syllable.strip()] = tuple(phones.split())
    if not entries:
        raise LexiconError("lexicon file contains no entries")
    return PhonemeLexicon.from_entries(entries)


def demo_lexicon() -> PhonemeLexicon:
    """The small built-in lexicon used by tests and the demo pipeline."""
    ref = importlib.resources.files("singsynth.data").joinpath("demo_lexicon.tsv")
    with importlib.resources.as_file(ref) as path:
        return load_lexicon(path)


# ---------------------------------------------------------------------------
# score parsing / serialization

def parse_score(text: str) -> MusicalScore:
    tempo: float | None = None
    events: list[NoteEvent] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if tempo is None:
            if fields[0] != "tempo" or len(fields) != 2:
                raise ScoreParseError(line_no, "expected 'tempo <bpm>' first")
            try:
                tempo = float(fields[1])
            except ValueError:
                raise ScoreParseError(line_no, f"bad tempo value {fields[1]!r}") from None
            if not tempo > 0:
                raise ScoreParseError(line_no, "tempo must be positive")
            continue
        continues = False
        if fields[-1] == "~":
            continues = True
            fields = fields[:-1]
        if len(fields) != 3:
            raise ScoreParseError(
                line_no, "expected '<syllable> <midi_pitch> <beat_length> [~]'"
            )
        syllable, pitch_s, beats_s = fields
        try:
            pitch = int(pitch_s)
        except ValueError:
            raise ScoreParseError(line_no, f"bad midi pitch {pitch_s!r}") from None
        try:
            beats = float(beats_s)
        except ValueError:
            raise ScoreParseError(line_no, f"bad beat length {beats_s!r}") from None
        if continues:
            if not events:
                raise ScoreParseError(line_no, "no syllable to continue")
            prev = events[-1]
            if prev.is_rest:
                raise ScoreParseError(line_no, "cannot continue a rest")
            if syllable != prev.syllable:
                raise ScoreParseError(
                    line_no,
                    f"continuation syllable {syllable!r} differs from previous "
                    f"{prev.syllable!r}",
                )
            if syllable == REST_SYLLABLE or pitch == 0:
                raise ScoreParseError(line_no, "rests cannot continue a syllable")
        try:
            events.append(
                NoteEvent(syllable=syllable, midi_pitch=pitch,
                          beat_length=beats, continues=continues)
            )
        except ValueError as exc:
            raise ScoreParseError(line_no, str(exc)) from None
    if tempo is None:
        raise ScoreParseError(1, "missing tempo line")
    if not events:
        raise ScoreParseError(1, "score has no events")
    return MusicalScore(tempo_bpm=tempo, events=tuple(events))


def serialize_score(score: MusicalScore) -> str:
    lines = [f"tempo {score.tempo_bpm!r}"]
    for ev in score.events:
        suffix = " ~" if ev.continues else ""
        lines.append(f"{ev.syllable} {ev.midi_pitch} {ev.beat_length!r}{suffix}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# conversions

def midi_to_hz(midi_pitch: int) -> float:
    """Equal-tempered frequency of a MIDI note number (A4 = 69 = 440 Hz)."""
    if midi_pitch < 1:
        raise ValueError(
            f"midi pitch {midi_pitch} has no frequency (0 is the rest marker)"
        )
    if midi_pitch > 127:
        raise ValueError(f"midi pitch {midi_pitch} out of range [1, 127]")
    return 440.0 * 2.0 ** ((midi_pitch - 69) / 12.0)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def beats_to_frames(beat_length: float, tempo_bpm: float, frame_shift_s: float) -> int:
    """Frame count of a note, at least 1."""
    if beat_length <= 0 or tempo_bpm <= 0 or frame_shift_s <= 0:
        raise ValueError("beats_to_frames requires positive arguments")
    seconds = beat_length * 60.0 / tempo_bpm
    return max(1, round_half_up(seconds / frame_shift_s))


# ---------------------------------------------------------------------------
# score -> phoneme tokens

@dataclass
class PhonemeTokenSequence:
    """Per-phoneme model input: phoneme ID, pitch ID and note frame count,
    plus the syllable grouping needed for the syllable duration loss."""

    phoneme_ids: list[int]
    pitch_ids: list[int]
    note_frame_counts: list[int]
    syllable_spans: list[tuple[int, int]]
    gt_phoneme_durations: list[int] | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n = len(self.phoneme_ids)
        if n < 1:
            raise ValueError("token sequence is empty")
        if len(self.pitch_ids) != n or len(self.note_frame_counts) != n:
            raise ValueError("parallel token lists have different lengths")
        if any(c < 1 for c in self.note_frame_counts):
            raise ValueError("note frame counts must all be >= 1")
        cursor = 0
        for start, end in self.syllable_spans:
            if start != cursor or end <= start:
                raise ValueError(f"syllable spans do not tile [0, {n})")
            cursor = end
        if cursor != n:
            raise ValueError(f"syllable spans do not cover [0, {n})")
        if self.gt_phoneme_durations is not None:
            if len(self.gt_phoneme_durations) != n:
                raise ValueError("ground-truth durations length mismatch")
            if any(d < 1 for d in self.gt_phoneme_durations):
                raise ValueError("ground-truth durations must all be >= 1")

    def __len__(self) -> int:
        return len(self.phoneme_ids)

    @property
    def total_frames(self) -> int:
        """Frame total implied by the ground-truth durations."""
        if self.gt_phoneme_durations is None:
            raise ValueError("token sequence has no ground-truth durations")
        return sum(self.gt_phoneme_durations)


def event_phonemes(event: NoteEvent, lexicon: PhonemeLexicon) -> tuple[str, ...]:
    """Phonemes a single note contributes: the silence phoneme for rests, the
    lexicon entry for a syllable's first note, one vowel repeat afterwards."""
    if event.is_rest:
        return (SILENCE_PHONEME,)
    if event.continues:
        return (lexicon.extension_phoneme(event.syllable),)
    return lexicon.phonemes_for(event.syllable)


def score_to_tokens(score: MusicalScore, lexicon: PhonemeLexicon,
                    frame_shift_s: float = 0.015) -> PhonemeTokenSequence:
    """Expand a score to phoneme level.

    Each note's pitch ID and frame count are duplicated onto every phoneme it
    carries; rests become one silence phoneme with pitch ID 0; a melisma's
    notes all land in one syllable span.
    """
    ids = lexicon.ids()
    phoneme_ids: list[int] = []
    pitch_ids: list[int] = []
    frame_counts: list[int] = []
    spans: list[tuple[int, int]] = []
    span_start: int | None = None

    def close_span():
        nonlocal span_start
        if span_start is not None:
            spans.append((span_start, len(phoneme_ids)))
            span_start = None

    for ev in score.events:
        frames = beats_to_frames(ev.beat_length, score.tempo_bpm, frame_shift_s)
        if ev.is_rest:
            close_span()
            phoneme_ids.append(lexicon.silence_id)
            pitch_ids.append(0)
            frame_counts.append(frames)
            spans.append((len(phoneme_ids) - 1, len(phoneme_ids)))
            continue
        if not ev.continues:
            close_span()
            span_start = len(phoneme_ids)
        for ph in event_phonemes(ev, lexicon):
            phoneme_ids.append(ids[ph])
            pitch_ids.append(ev.midi_pitch)
            frame_counts.append(frames)
    close_span()
    return PhonemeTokenSequence(
        phoneme_ids=phoneme_ids,
        pitch_ids=pitch_ids,
        note_frame_counts=frame_counts,
        syllable_spans=spans,
    )
