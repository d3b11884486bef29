"""Synthetic feature bundles, the report vocabulary, and bundle/manifest files.

The generator stands in for frozen foundation-model extractors. Each case draws
a diagnosis ``g``; the report is a fixed template whose slot words are read
off the bits of ``g``. Concept features always identify ``g``. When
``concept_informativeness`` is on, patch and slide features only reveal the
lowest bit of ``g`` (the histologic type), so the remaining slots can only be
recovered from the concepts.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

MAGIC = b"SCT1"
_HEADER = struct.Struct("<4s6I")

# one (off, on) word pair per diagnosis bit; bit 0 is the patch-visible one
SLOT_WORDS = (
    {"histo": ("ductal", "lobular")},
    {"grade": ("one", "three"), "mitoses": ("rare", "frequent")},
    {"side": ("left", "right"), "quadrant": ("upper", "lower")},
    {"margin": ("clear", "involved")},
)
TEMPLATE = ("invasive {histo} carcinoma in {quadrant} quadrant of {side} breast . "
            "grade {grade} with {mitoses} mitoses . margins {margin} .")
MAX_DIAGNOSES = 2 ** len(SLOT_WORDS)


class FeatureFileError(Exception):
    """Base class for malformed feature-bundle files."""


class HeaderError(FeatureFileError):
    """Bad magic bytes or an unreadable header."""


class DimensionError(FeatureFileError):
    """Header dimensions that cannot describe a valid bundle."""


class TruncationError(FeatureFileError):
    """The file ends before the payload the header promises."""


# ----------------------------------------------------------------- vocabulary

class Vocabulary:
    """Whitespace vocabulary with ids 0-3 reserved for PAD/BOS/EOS/UNK."""

    def __init__(self, tokens: Iterable[str]):
        words = sorted(set(tokens) - set(RESERVED))
        self.itos: list[str] = list(RESERVED) + words
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        return cls(w for text in texts for w in normalize(text).split())

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, text: str) -> list[int]:
        return [BOS] + [self.stoi.get(w, UNK) for w in normalize(text).split()] + [EOS]

    def decode(self, ids: Sequence[int]) -> str:
        ids = [int(i) for i in ids]
        bad = [i for i in ids if not 0 <= i < len(self.itos)]
        if bad:
            raise ValueError(f"token id {bad[0]} outside vocabulary of size {len(self)}")
        words = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            words.append(self.itos[i])
        return " ".join(words)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos[len(RESERVED):]) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").split())


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


def tokenize_encode(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(text)


def decode_tokens(ids: Sequence[int], vocab: Vocabulary) -> str:
    return vocab.decode(ids)


# ------------------------------------------------------------------ generator

@dataclass(frozen=True)
class SyntheticTaskSpec:
    num_diagnoses: int = 8
    d_p: int = 32
    d_s: int = 16
    d_c: int = 16
    L: int = 16
    K: int = 4
    noise_sigma: float = 0.1
    concept_informativeness: bool = True
    world_seed: int = 0

    def __post_init__(self):
        for name in ("num_diagnoses", "d_p", "d_s", "d_c", "L", "K"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.num_diagnoses > MAX_DIAGNOSES:
            raise ValueError(f"at most {MAX_DIAGNOSES} diagnoses are supported")

    def patch_group(self, g: int) -> int:
        """Which patch/slide prototype family diagnosis ``g`` shows."""
        return g % 2 if self.concept_informativeness else g

    @property
    def num_groups(self) -> int:
        return min(2, self.num_diagnoses) if self.concept_informativeness else self.num_diagnoses


@dataclass
class FeatureBundle:
    case_id: str
    patch_feats: np.ndarray
    slide_feat: np.ndarray
    concept_feats: np.ndarray
    report_tokens: list[int] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureBundle):
            return NotImplemented
        return (self.case_id == other.case_id
                and list(self.report_tokens) == list(other.report_tokens)
                and all(np.array_equal(a, b) for a, b in zip(
                    (self.patch_feats, self.slide_feat, self.concept_feats),
                    (other.patch_feats, other.slide_feat, other.concept_feats))))


@dataclass(frozen=True)
class Prototypes:
    """Noise-free feature centres, fixed by the task spec."""

    patch: np.ndarray    # (groups, modes, d_p)
    slide: np.ndarray    # (groups, d_s)
    concept: np.ndarray  # (num_diagnoses, K, d_c)


_PATCH_MODES = 3


def diagnosis_prototypes(spec: SyntheticTaskSpec) -> Prototypes:
    rng = np.random.default_rng([spec.world_seed, 7919])
    patch = rng.normal(0.0, 1.0, (spec.num_groups, _PATCH_MODES, spec.d_p))
    mix = rng.normal(0.0, 1.0 / np.sqrt(spec.d_p), (spec.d_p, spec.d_s))
    slide = patch.mean(axis=1) @ mix
    # each concept row is a block one-hot whose position cycles with the row index
    block = max(1, spec.d_c // spec.num_diagnoses)
    concept = np.zeros((spec.num_diagnoses, spec.K, spec.d_c))
    for g in range(spec.num_diagnoses):
        for k in range(spec.K):
            start = (((g + k) % spec.num_diagnoses) * block) % spec.d_c
            concept[g, k, start:start + block] = 1.0
    return Prototypes(_f32(patch), _f32(slide), concept)


def _f32(x: np.ndarray) -> np.ndarray:
    # bundles are stored as float32; keep values representable so IO is bit-exact
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def report_text(g: int) -> str:
    slots = {}
    for bit, words in enumerate(SLOT_WORDS):
        on = (g >> bit) & 1
        slots.update({name: pair[on] for name, pair in words.items()})
    return TEMPLATE.format(**slots)


def report_vocabulary() -> Vocabulary:
    return Vocabulary.from_texts(report_text(g) for g in range(MAX_DIAGNOSES))


def sample_diagnosis(spec: SyntheticTaskSpec, seed: int) -> int:
    return int(np.random.default_rng([spec.world_seed, seed, 0]).integers(spec.num_diagnoses))


def generate_synthetic_case(spec: SyntheticTaskSpec, seed: int,
                            vocab: Vocabulary | None = None) -> FeatureBundle:
    """Draw one case; a pure function of ``(spec, seed)``."""
    protos = diagnosis_prototypes(spec)
    g = sample_diagnosis(spec, seed)
    rng = np.random.default_rng([spec.world_seed, seed, 1])
    sigma = spec.noise_sigma
    group = spec.patch_group(g)
    modes = rng.integers(_PATCH_MODES, size=spec.L)
    patch = protos.patch[group, modes] + sigma * rng.normal(size=(spec.L, spec.d_p))
    slide = protos.slide[group] + sigma * rng.normal(size=spec.d_s)
    concept = protos.concept[g] + sigma * rng.normal(size=(spec.K, spec.d_c))
    vocab = vocab or report_vocabulary()
    return FeatureBundle(
        case_id=f"case{seed:06d}",
        patch_feats=_f32(patch),
        slide_feat=_f32(slide),
        concept_feats=_f32(concept),
        report_tokens=vocab.encode(report_text(g)),
    )


def nearest_prototype(bundle: FeatureBundle, spec: SyntheticTaskSpec,
                      modality: str = "concept") -> int:
    """Brute-force nearest-prototype diagnosis guess from one modality.

    For patches the row mean is compared with each diagnosis's expected row
    mean; ties resolve to the lowest diagnosis id.
    """
    protos = diagnosis_prototypes(spec)
    best, best_dist = -1, np.inf
    for g in range(spec.num_diagnoses):
        if modality == "concept":
            dist = np.sum((bundle.concept_feats - protos.concept[g]) ** 2)
        elif modality == "patch":
            centre = protos.patch[spec.patch_group(g)].mean(axis=0)
            dist = np.sum((bundle.patch_feats.mean(axis=0) - centre) ** 2)
        else:
            raise ValueError(f"unknown modality {modality!r}")
        if dist < best_dist:
            best, best_dist = g, dist
    return best


# ---------------------------------------------------------------------- files

def write_feature_bundle(bundle: FeatureBundle, path: str | Path) -> None:
    L, d_p = bundle.patch_feats.shape
    K, d_c = bundle.concept_feats.shape
    d_s = bundle.slide_feat.shape[0]
    cid = bundle.case_id.encode("utf-8")
    parts = [
        _HEADER.pack(MAGIC, L, d_p, d_s, K, d_c, len(bundle.report_tokens)),
        np.asarray(bundle.patch_feats, dtype="<f4").tobytes(),
        np.asarray(bundle.slide_feat, dtype="<f4").tobytes(),
        np.asarray(bundle.concept_feats, dtype="<f4").tobytes(),
        np.asarray(bundle.report_tokens, dtype="<u4").tobytes(),
        struct.pack("<I", len(cid)),
        cid,
    ]
    Path(path).write_bytes(b"".join(parts))


def read_feature_bundle(path: str | Path) -> FeatureBundle:
    """Read a bundle written by :func:`write_feature_bundle`.

    Raises:
        HeaderError, DimensionError, TruncationError
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        if raw[:4] != MAGIC[:len(raw[:4])]:
            raise HeaderError(f"{path}: bad magic bytes")
        raise TruncationError(f"{path}: file ends inside the header")
    magic, L, d_p, d_s, K, d_c, n_tok = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise HeaderError(f"{path}: bad magic bytes {magic!r}")
    if min(L, d_p, d_s, K, d_c) == 0:
        raise DimensionError(f"{path}: zero dimension in header "
                             f"(L={L}, d_p={d_p}, d_s={d_s}, K={K}, d_c={d_c})")
    if n_tok < 2:
        raise DimensionError(f"{path}: report length {n_tok} cannot hold BOS and EOS")
    offset = _HEADER.size
    sizes = [(L * d_p, "<f4"), (d_s, "<f4"), (K * d_c, "<f4"), (n_tok, "<u4")]
    arrays = []
    for count, dtype in sizes:
        nbytes = 4 * count
        if offset + nbytes > len(raw):
            raise TruncationError(f"{path}: payload truncated at byte {len(raw)}")
        arrays.append(np.frombuffer(raw, dtype=dtype, count=count, offset=offset))
        offset += nbytes
    if offset + 4 > len(raw):
        raise TruncationError(f"{path}: missing case id")
    (n_id,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if offset + n_id > len(raw):
        raise TruncationError(f"{path}: case id truncated")
    if offset + n_id != len(raw):
        raise HeaderError(f"{path}: {len(raw) - offset - n_id} trailing bytes")
    tokens = arrays[3].astype(np.int64).tolist()
    if tokens[0] != BOS or tokens[-1] != EOS:
        raise DimensionError(f"{path}: report must start with BOS and end with EOS")
    return FeatureBundle(
        case_id=raw[offset:offset + n_id].decode("utf-8"),
        patch_feats=arrays[0].astype(np.float64).reshape(L, d_p),
        slide_feat=arrays[1].astype(np.float64),
        concept_feats=arrays[2].astype(np.float64).reshape(K, d_c),
        report_tokens=tokens,
    )


@dataclass
class ManifestEntry:
    case_id: str
    path: str
    split: str


def write_manifest(entries: Sequence[ManifestEntry], path: str | Path) -> None:
    lines = [f"{e.case_id}\t{e.path}\t{e.split}" for e in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        entries.append(ManifestEntry(*fields))
    return entries


def split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return n_train, n_val, n - n_train - n_val


def generate_corpus(spec: SyntheticTaskSpec, n: int, seed: int,
                    fractions: Sequence[float] = (0.8, 0.1, 0.1)
                    ) -> tuple[list[FeatureBundle], list[str], Vocabulary]:
    """Generate ``n`` cases with seeds ``seed + i`` and assign disjoint splits.

    Splits follow generation order, so case ids never straddle splits.
    """
    vocab = report_vocabulary()
    bundles = [generate_synthetic_case(spec, seed + i, vocab) for i in range(n)]
    n_train, n_val, n_test = split_counts(n, fractions)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    return bundles, splits, vocab


@dataclass
class Corpus:
    """An on-disk corpus loaded into memory."""

    root: Path
    vocab: Vocabulary
    splits: dict[str, list[FeatureBundle]]

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for path in sorted(self.root.glob("*.sct")):
            digest.update(path.read_bytes())
        digest.update((self.root / "manifest.tsv").read_bytes())
        return digest.hexdigest()[:16]


def save_corpus(root: str | Path, bundles: Sequence[FeatureBundle], splits: Sequence[str],
                vocab: Vocabulary) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for bundle, split in zip(bundles, splits):
        name = f"{bundle.case_id}.sct"
        write_feature_bundle(bundle, root / name)
        entries.append(ManifestEntry(bundle.case_id, name, split))
    write_manifest(entries, root / "manifest.tsv")
    vocab.save(root / "vocab.txt")


def load_corpus(root: str | Path) -> Corpus:
    root = Path(root)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"no corpus manifest at {manifest}")
    vocab = Vocabulary.load(root / "vocab.txt")
    splits: dict[str, list[FeatureBundle]] = {"train": [], "val": [], "test": []}
    for entry in read_manifest(manifest):
        splits.setdefault(entry.split, []).append(read_feature_bundle(root / entry.path))
    return Corpus(root, vocab, splits)
