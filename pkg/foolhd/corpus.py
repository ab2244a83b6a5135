"""Toy speaker corpus: synthesis, manifests and clip preparation."""

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import scipy.signal

from .dsp import SAMPLE_RATE, AudioClip
from .errors import ContractViolation
from .wavio import read_wav, write_wav

logger = logging.getLogger(__name__)

CLIP_SECONDS = 4.0
MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ("clip_id", "path", "speaker", "duration", "sample_rate", "split")

# Each formant and the pitch have their own band; speakers get disjoint slots inside it.
FORMANT_BANDS = ((250.0, 900.0), (900.0, 2200.0), (2200.0, 3600.0))
PITCH_BAND = (80.0, 280.0)
FORMANT_BANDWIDTH = 90.0
NOISE_LEVEL = 0.01


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: Path
    speaker: int
    duration: float
    sample_rate: int
    split: str


@dataclass
class CorpusManifest:
    entries: List[ManifestEntry] = field(default_factory=list)
    root: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    @property
    def speakers(self) -> List[int]:
        return sorted({e.speaker for e in self.entries})

    def validate(self) -> "CorpusManifest":
        if not self.entries:
            raise ContractViolation("manifest has no clips")
        ids = [e.clip_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ContractViolation("manifest contains duplicate clip ids")
        bad_splits = {e.split for e in self.entries} - {"train", "test"}
        if bad_splits:
            raise ContractViolation(f"unknown split tags {sorted(bad_splits)}")
        without_test = set(self.speakers) - {e.speaker for e in self.split("test")}
        if without_test:
            raise ContractViolation(f"speakers {sorted(without_test)} have no test clip")
        return self


@dataclass(frozen=True)
class SpeakerVoice:
    pitch: float
    formants: tuple


def _slot_centers(band, n_speakers: int, rng: np.random.Generator) -> np.ndarray:
    """One value per speaker, each inside the middle half of its own slot of ``band``."""
    low, high = band
    width = (high - low) / n_speakers
    slots = rng.permutation(n_speakers)
    return low + width * (slots + rng.uniform(0.25, 0.75, size=n_speakers))


def speaker_voices(n_speakers: int, seed: int) -> List[SpeakerVoice]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF0]))
    pitches = _slot_centers(PITCH_BAND, n_speakers, rng)
    formants = [_slot_centers(band, n_speakers, rng) for band in FORMANT_BANDS]
    return [SpeakerVoice(float(pitches[s]), tuple(float(f[s]) for f in formants)) for s in range(n_speakers)]


def _resonate(signal: np.ndarray, center: float, sample_rate: int) -> np.ndarray:
    radius = np.exp(-np.pi * FORMANT_BANDWIDTH / sample_rate)
    a = [1.0, -2.0 * radius * np.cos(2.0 * np.pi * center / sample_rate), radius * radius]
    return scipy.signal.lfilter([1.0 - radius], a, signal)


def _phrase_envelope(num_samples: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Syllable-like bursts separated by short pauses, with raised-cosine edges."""
    envelope = np.full(num_samples, 0.05)
    position = int(rng.uniform(0.0, 0.1) * sample_rate)
    while position < num_samples:
        length = int(rng.uniform(0.15, 0.45) * sample_rate)
        burst = np.hanning(length) ** 0.5 * rng.uniform(0.6, 1.0)
        end = min(position + length, num_samples)
        envelope[position:end] = np.maximum(envelope[position:end], burst[:end - position])
        position = end + int(rng.uniform(0.03, 0.2) * sample_rate)
    return envelope


def synthesize_clip(voice: SpeakerVoice, rng: np.random.Generator, duration: float = CLIP_SECONDS,
                    sample_rate: int = SAMPLE_RATE) -> AudioClip:
    num_samples = int(round(duration * sample_rate))
    t = np.arange(num_samples) / sample_rate
    vibrato = 1.0 + 0.03 * np.sin(2.0 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = voice.pitch * rng.uniform(0.95, 1.05) * vibrato
    phase = np.cumsum(f0) / sample_rate
    pulses = np.diff(np.floor(phase), prepend=0.0)
    source = pulses + NOISE_LEVEL * rng.standard_normal(num_samples)
    for center in voice.formants:
        source = _resonate(source, center, sample_rate)
    voiced = source * _phrase_envelope(num_samples, sample_rate, rng)
    voiced += 0.5 * NOISE_LEVEL * rng.standard_normal(num_samples) * np.max(np.abs(voiced))
    peak = np.max(np.abs(voiced))
    return AudioClip(voiced / peak * rng.uniform(0.3, 0.7), sample_rate)


def synthesize_toy_corpus(
    n_speakers: int,
    clips_per_speaker: int,
    seed: int,
    out_dir: Path,
    test_clips_per_speaker: Optional[int] = None,
) -> CorpusManifest:
    """Write ``n_speakers * clips_per_speaker`` PCM16 clips plus ``manifest.csv`` under ``out_dir``.

    The last ``test_clips_per_speaker`` clips of every speaker (a third by
    default) form the test split.
    """
    if n_speakers < 2:
        raise ContractViolation(f"a speaker corpus needs at least 2 speakers, got {n_speakers}")
    if test_clips_per_speaker is None:
        test_clips_per_speaker = max(1, clips_per_speaker // 3)
    if not 1 <= test_clips_per_speaker < clips_per_speaker:
        raise ContractViolation(
            f"need 1 <= test clips ({test_clips_per_speaker}) < clips per speaker ({clips_per_speaker})"
        )
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Synthesizing {n_speakers} speakers x {clips_per_speaker} clips into '{out_dir}'...")

    entries = []
    for speaker, voice in enumerate(speaker_voices(n_speakers, seed)):
        logger.debug(f"Speaker {speaker}: pitch {voice.pitch:.1f} Hz, formants {[round(f) for f in voice.formants]}")
        for index in range(clips_per_speaker):
            rng = np.random.default_rng(np.random.SeedSequence([seed, speaker, index]))
            clip = synthesize_clip(voice, rng)
            clip_id = f"spk{speaker:02d}_{index:03d}"
            relative = Path("wav") / f"{clip_id}.wav"
            write_wav(out_dir / relative, clip)
            split = "test" if index >= clips_per_speaker - test_clips_per_speaker else "train"
            entries.append(ManifestEntry(clip_id, relative, speaker, clip.duration, clip.sample_rate, split))

    manifest = CorpusManifest(entries, out_dir).validate()
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def write_manifest(manifest: CorpusManifest, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for e in manifest.entries:
            writer.writerow({
                "clip_id": e.clip_id,
                "path": e.path.as_posix(),
                "speaker": e.speaker,
                "duration": repr(e.duration),
                "sample_rate": e.sample_rate,
                "split": e.split,
            })
    logger.info(f"Manifest with {len(manifest)} clips written to '{path}'.")


def load_manifest(path: Path, check_files: bool = True) -> CorpusManifest:
    """Read a manifest; clip paths are relative to the manifest's directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"Corpus manifest not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ContractViolation(f"manifest '{path}' lacks columns {sorted(missing)}")
        try:
            entries = [
                ManifestEntry(
                    clip_id=row["clip_id"],
                    path=Path(row["path"]),
                    speaker=int(row["speaker"]),
                    duration=float(row["duration"]),
                    sample_rate=int(row["sample_rate"]),
                    split=row["split"],
                )
                for row in reader
            ]
        except ValueError as e:
            raise ContractViolation(f"malformed row in manifest '{path}': {e}") from e
    manifest = CorpusManifest(entries, path.parent).validate()
    if check_files:
        absent = [e.clip_id for e in entries if not (manifest.root / e.path).is_file()]
        if absent:
            raise FileNotFoundError(f"{len(absent)} manifest clip(s) missing on disk, e.g. {absent[:3]}")
    logger.info(f"Loaded manifest '{path}': {len(manifest)} clips, {len(manifest.speakers)} speakers.")
    return manifest


def _blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def corpus_hash(manifest: CorpusManifest) -> str:
    """Git-style content hash over the manifest rows and every clip's bytes."""
    digest = hashlib.sha1()
    for e in sorted(manifest.entries, key=lambda e: e.clip_id):
        blob = _blob_sha1((manifest.root / e.path).read_bytes())
        digest.update(f"{blob} {e.clip_id} {e.speaker} {e.split}\n".encode("utf-8"))
    return digest.hexdigest()


def prepare_clip(clip: AudioClip, duration: float = CLIP_SECONDS, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Center-crop to ``duration`` seconds; shorter clips and other rates are rejected."""
    if clip.sample_rate != sample_rate:
        raise ContractViolation(f"clip is {clip.sample_rate} Hz; only {sample_rate} Hz is supported")
    wanted = int(round(duration * sample_rate))
    if len(clip) < wanted:
        raise ContractViolation(f"clip has {len(clip)} samples, needs at least {wanted} ({duration} s)")
    start = (len(clip) - wanted) // 2
    return AudioClip(clip.samples[start:start + wanted], sample_rate)


def load_clip(manifest: CorpusManifest, entry: ManifestEntry) -> AudioClip:
    return prepare_clip(read_wav(manifest.root / entry.path))


def labelled_clips(manifest: CorpusManifest, entries: Sequence[ManifestEntry]):
    for entry in entries:
        yield entry, load_clip(manifest, entry)
