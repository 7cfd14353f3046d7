"""Caption corpora: Clotho-style CSV ingestion and a synthetic event dataset.

A corpus CSV has a ``file_name`` column and one or more ``caption_<i>``
columns. ``file_name`` resolves, inside the data directory, either to a WAV
file (log-mel features are extracted and cached) or to a ``.feat`` feature
file with the same stem.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureParams, LogMel, Waveform, cached_logmel, load_features, logmel, save_features, write_wav
from .keywords import Caption, EmptyCaptionError, tokenize_caption
from .model import Vocab
from .numerics import Rng

SPLITS = ("train", "val", "test")


class CorpusError(ValueError):
    pass


@dataclass
class Clip:
    clip_id: str
    source: Path
    captions: list

    def features(self, params: FeatureParams, cache_dir=None) -> np.ndarray:
        """Log-mel frames [T, n_mels] for this clip."""
        if self.source.suffix == ".feat":
            x = load_features(self.source)
            if x.params != params:
                raise CorpusError(
                    f"{self.source}: stored features use {x.params}, the config expects {params}"
                )
            return x.frames
        cache = cache_dir if cache_dir is not None else self.source.parent / ".feature_cache"
        return cached_logmel(self.source, cache, params).frames


@dataclass
class CaptionCorpus:
    clips: list
    split: str = "train"
    vocab: Vocab | None = None
    rejected: list = field(default_factory=list)   # (line number, file_name) rows without captions

    def __len__(self) -> int:
        return len(self.clips)

    def captions(self) -> list:
        return [c for clip in self.clips for c in clip.captions]

    def references(self) -> list:
        return [[list(c.tokens) for c in clip.captions] for clip in self.clips]

    def feature_matrix(self, params: FeatureParams, cache_dir=None) -> np.ndarray:
        return stack_features([clip.features(params, cache_dir) for clip in self.clips])


def stack_features(frames) -> np.ndarray:
    """Stack [T_i, F] arrays into [B, T_max, F]; shorter clips are padded with their minimum (silence)."""
    frames = list(frames)
    if not frames:
        raise CorpusError("no clips to stack")
    t_max = max(f.shape[0] for f in frames)
    out = np.empty((len(frames), t_max, frames[0].shape[1]), dtype=np.float64)
    for i, f in enumerate(frames):
        out[i, :f.shape[0]] = f
        out[i, f.shape[0]:] = f.min()
    return out


def _resolve(data_dir: Path, file_name: str):
    direct = data_dir / file_name
    if direct.is_file():
        return direct
    feat = data_dir / (Path(file_name).stem + ".feat")
    if feat.is_file():
        return feat
    return None


def load_corpus_csv(captions_csv, data_dir, split: str = "train", vocab: Vocab | None = None,
                    extra_words=()) -> CaptionCorpus:
    """Read a caption CSV; build the vocabulary from it when ``split`` is train.

    For val/test a training vocabulary must be supplied; their out-of-vocabulary
    tokens map to UNK at encoding time.
    """
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}")
    data_dir = Path(data_dir)
    clips, rejected, missing = [], [], []
    with open(captions_csv, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"{captions_csv}: empty file") from None
        header = [h.strip() for h in header]
        if "file_name" not in header:
            raise CorpusError(f"{captions_csv}:1: header lacks a file_name column")
        cap_cols = [i for i, h in enumerate(header) if h.startswith("caption")]
        if not cap_cols:
            raise CorpusError(f"{captions_csv}:1: header lacks caption columns")
        name_col = header.index("file_name")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CorpusError(f"{captions_csv}:{line}: expected {len(header)} fields, found {len(row)}")
            name = row[name_col].strip()
            if not name:
                raise CorpusError(f"{captions_csv}:{line}: empty file_name")
            caps = []
            for i in cap_cols:
                try:
                    caps.append(tokenize_caption(row[i], name))
                except EmptyCaptionError:
                    continue
            if not caps:
                rejected.append((line, name))
                continue
            source = _resolve(data_dir, name)
            if source is None:
                missing.append((line, name))
                continue
            clips.append(Clip(name, source, caps))
    if missing:
        listing = ", ".join(f"line {ln}: {n}" for ln, n in missing)
        raise CorpusError(f"missing audio/feature files in {data_dir}: {listing}")
    if not clips:
        raise CorpusError(f"{captions_csv}: no usable rows")
    corpus = CaptionCorpus(clips, split, vocab, rejected)
    if split == "train" and vocab is None:
        corpus.vocab = Vocab.build((c.tokens for c in corpus.captions()), extra_words)
    elif vocab is None:
        raise CorpusError(f"the {split} split needs the training vocabulary")
    return corpus


def caption_targets(captions, vocab: Vocab, max_len: int | None = None) -> np.ndarray:
    """Token ids with EOS, right-padded with PAD: [n, T]."""
    from .decoder import EOS, PAD

    seqs = []
    for cap in captions:
        toks = cap.tokens if isinstance(cap, Caption) else tuple(cap)
        ids = vocab.encode(toks, eos=False)
        if max_len is not None:
            ids = ids[:max_len - 1]
        seqs.append(ids + [EOS])
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    noun: str
    verb: str
    third: str      # "barks"
    ing: str        # "barking"
    past: str       # "barked"
    article: str = "a"

    def np(self) -> str:
        return f"{self.article} {self.noun}".strip()


EVENTS = (
    Event("bird", "chirp", "chirps", "chirping", "chirped"),
    Event("dog", "bark", "barks", "barking", "barked"),
    Event("bell", "ring", "rings", "ringing", "rang"),
    Event("water", "flow", "flows", "flowing", "flowed", article=""),
    Event("engine", "hum", "hums", "humming", "hummed", article="an"),
    Event("door", "slam", "slams", "slamming", "slammed"),
    Event("wind", "blow", "blows", "blowing", "blew", article="the"),
    Event("car", "pass", "passes", "passing", "passed"),
    Event("baby", "cry", "cries", "crying", "cried"),
    Event("man", "speak", "speaks", "speaking", "spoke"),
)


def _canonical_caption(events) -> str:
    return " and ".join(f"{e.np()} {e.third}" for e in events)


def _template_captions(events, rng: Rng) -> list:
    """Five captions naming every event with its noun and a form of its verb."""
    ordered = sorted(events, key=EVENTS.index)
    caps = [_canonical_caption(ordered)]
    shuffled = [events[i] for i in rng.permutation(len(events))]
    head, last = shuffled[:-1], shuffled[-1]
    caps.append(" and ".join(f"{e.np()} {e.third}" for e in head) + f" while {last.np()} is {last.ing}")
    shuffled = [events[i] for i in rng.permutation(len(events))]
    caps.append("there is " + " and ".join(f"{e.np()} {e.ing}" for e in shuffled))
    shuffled = [events[i] for i in rng.permutation(len(events))]
    caps.append(f"{shuffled[0].np()} {shuffled[0].third} then "
                + " and ".join(f"{e.np()} {e.past}" for e in shuffled[1:]))
    shuffled = [events[i] for i in rng.permutation(len(events))]
    caps.append(" and ".join(f"the sound of {e.np()} that {e.third}" for e in shuffled))
    return caps


def _event_frequencies(sample_rate: int, n_events: int) -> np.ndarray:
    """Two tone frequencies per event on a mel-spaced grid well inside Nyquist."""
    lo, hi = 2595.0 * np.log10(1 + 150.0 / 700.0), 2595.0 * np.log10(1 + 0.42 * sample_rate / 700.0)
    grid = 700.0 * (10 ** (np.linspace(lo, hi, 2 * n_events) / 2595.0) - 1)
    return grid.reshape(2, n_events).T     # event k uses grid[k] and grid[k + n_events]


def synth_waveform(event_ids, n_samples: int, sample_rate: int, rng: Rng) -> np.ndarray:
    t = np.arange(n_samples) / sample_rate
    x = 0.003 * rng.normal(size=n_samples)
    freqs = _event_frequencies(sample_rate, len(EVENTS))
    for k in event_ids:
        span = int(rng.integers(int(0.5 * n_samples), n_samples + 1))
        start = int(rng.integers(0, n_samples - span + 1))
        env = np.zeros(n_samples)
        ramp = np.hanning(span)
        env[start:start + span] = 0.5 + 0.5 * ramp
        # each event pulses at its own rate so patterns differ in time as well
        rate = 2.0 + k
        pulse = 0.6 + 0.4 * np.sign(np.sin(2 * np.pi * rate * t))
        tone = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) for f in freqs[k])
        x += 0.2 * env * pulse * tone
    return x


def synthetic_clip_samples(params: FeatureParams, frames: int = 64) -> int:
    return params.window + (frames - 1) * params.hop


def gen_synthetic_dataset(out_dir, seed: int, n_clips: int, params: FeatureParams, frames: int = 64,
                          min_events: int = 2, max_events: int = 4, write_audio: bool = False) -> dict:
    """Write captions.csv, features/<clip>.feat and planted.json under ``out_dir``.

    Returns the planted mapping {file_name: {"events": [...], "keywords": [...]}}.
    """
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    if not 1 <= min_events <= max_events <= len(EVENTS):
        raise ValueError("need 1 <= min_events <= max_events <= number of events")
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    if write_audio:
        (out / "audio").mkdir(exist_ok=True)
    rng = Rng(seed)
    n_samples = synthetic_clip_samples(params, frames)
    planted, rows = {}, []
    for i in range(n_clips):
        clip_id = f"clip_{i:04d}"
        file_name = f"{clip_id}.wav"
        n_ev = int(rng.integers(min_events, max_events + 1))
        ids = sorted(int(k) for k in rng.choice(len(EVENTS), size=n_ev, replace=False))
        events = [EVENTS[k] for k in ids]
        caps = _template_captions(events, rng)
        wave_rng = rng.child(clip_id)
        samples = synth_waveform(ids, n_samples, params.sample_rate, wave_rng)
        w = Waveform(samples, params.sample_rate)
        save_features(feat_dir / f"{clip_id}.feat", logmel(w, params))
        if write_audio:
            write_wav(out / "audio" / f"{clip_id}.wav", w)
        planted[file_name] = {
            "events": ids,
            "keywords": sorted({e.noun for e in events} | {e.verb for e in events}),
        }
        rows.append([file_name] + caps)
    with open(out / "captions.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["file_name"] + [f"caption_{j}" for j in range(1, 6)])
        writer.writerows(rows)
    (out / "planted.json").write_text(json.dumps(planted, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return planted


def load_planted(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


__all__ = [
    "CaptionCorpus", "Clip", "CorpusError", "EVENTS", "Event", "LogMel", "caption_targets",
    "gen_synthetic_dataset", "load_corpus_csv", "load_planted", "stack_features",
]
