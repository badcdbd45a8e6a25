"""Dataset bundles, the synthetic compositional generator and checkpoints.

On-disk layout of a bundle directory::

    meta.json        metadata (names, pairs with split tags, samples)
    features.bin     MUSTFEAT matrix, one row per feature index
    embeddings.bin   MUSTFEAT matrix, state rows then object rows

See docs/formats.md for the byte-level grammar.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import CompatError, ConfigError, FormatError, SplitViolation, UnknownComponent
from .model import ModelConfig, MustModel, hashed_word_vector
from .space import CompositionSpace, build_space

SPLITS = ("train", "val_seen", "val_unseen", "test_seen", "test_unseen")
FEAT_MAGIC = b"MUSTFEAT"
FEAT_VERSION = 1
META_FORMAT = "MUSTMETA"
META_VERSION = 1
CKPT_MAGIC = b"MUSTCKPT"
CKPT_VERSION = 1

META_FILE = "meta.json"
FEATURE_FILE = "features.bin"
EMBEDDING_FILE = "embeddings.bin"


# -- binary matrix files ----------------------------------------------------

def write_matrix(path, matrix: np.ndarray) -> None:
    """Write a 2-D matrix as MUSTFEAT: magic, u32 version, u64 rows, u32 cols, f32 LE."""
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise FormatError(f"matrix must be 2-D, got shape {m.shape}")
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<IQI", FEAT_VERSION, m.shape[0], m.shape[1]))
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    head = len(FEAT_MAGIC) + 16
    if len(raw) < head or raw[:8] != FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic (expected MUSTFEAT)")
    version, n, dim = struct.unpack("<IQI", raw[8:head])
    if version != FEAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = head + 4 * n * dim
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n}x{dim}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=head).reshape(n, dim).astype(np.float32)


# -- bundle -----------------------------------------------------------------

@dataclass
class DatasetBundle:
    features: np.ndarray  # (n, d_feat) float32
    samples: np.ndarray  # (m, 3) int64: feature index, state id, object id
    splits: np.ndarray  # (m,) split tags, values from SPLITS
    space: CompositionSpace
    state_vectors: np.ndarray  # (|S|, word_dim) float32
    object_vectors: np.ndarray  # (|O|, word_dim) float32

    def __post_init__(self):
        validate_bundle(self)

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def word_dim(self) -> int:
        return self.state_vectors.shape[1]

    def split(self, *tags: str):
        """(X float64, states, objects) for the samples carrying any of ``tags``."""
        sel = np.isin(self.splits, tags)
        rows = self.samples[sel]
        return self.features[rows[:, 0]].astype(np.float64), rows[:, 1], rows[:, 2]

    def has_split(self, tag: str) -> bool:
        return bool(np.any(self.splits == tag))

    def word_dicts(self):
        sv = {n: self.state_vectors[i] for i, n in enumerate(self.space.state_names)}
        ov = {n: self.object_vectors[i] for i, n in enumerate(self.space.object_names)}
        return sv, ov

    def equals(self, other: "DatasetBundle") -> bool:
        return (
            self.space == other.space
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.samples, other.samples)
            and np.array_equal(self.splits, other.splits)
            and np.array_equal(self.state_vectors, other.state_vectors)
            and np.array_equal(self.object_vectors, other.object_vectors)
        )


def validate_bundle(b: DatasetBundle) -> None:
    sp = b.space
    if b.features.ndim != 2:
        raise FormatError("features must be 2-D")
    if b.samples.ndim != 2 or b.samples.shape[1] != 3 or len(b.samples) != len(b.splits):
        raise FormatError("samples must be (m, 3) with one split tag each")
    if b.state_vectors.shape[0] != sp.n_states or b.object_vectors.shape[0] != sp.n_objects:
        raise FormatError("embedding rows do not match state/object counts")
    if b.state_vectors.shape[1] != b.object_vectors.shape[1]:
        raise FormatError("state and object embeddings differ in width")
    if len(b.samples):
        fi, st, ob = b.samples.T
        if fi.min() < 0 or fi.max() >= len(b.features):
            raise FormatError("sample feature index out of range")
        if st.min() < 0 or st.max() >= sp.n_states or ob.min() < 0 or ob.max() >= sp.n_objects:
            raise UnknownComponent("sample references an unknown state or object")
    bad = set(np.unique(b.splits).tolist()) - set(SPLITS)
    if bad:
        raise FormatError(f"unknown split tags {sorted(bad)}")
    for (fi, s, o), tag in zip(b.samples.tolist(), b.splits.tolist()):
        key = (s, o)
        if key not in sp._pair_to_id:
            raise SplitViolation(f"sample {fi} labelled {sp.pair_name(key)} outside the closed set")
        seen = sp.is_seen(key)
        if tag in ("train", "val_seen", "test_seen") and not seen:
            raise SplitViolation(f"{tag} sample {fi} carries unseen pair {sp.pair_name(key)}")
        if tag in ("val_unseen", "test_unseen") and seen:
            raise SplitViolation(f"{tag} sample {fi} carries seen pair {sp.pair_name(key)}")


def save_bundle(bundle: DatasetBundle, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    sp = bundle.space
    meta = {
        "format": META_FORMAT,
        "version": META_VERSION,
        "feature_file": FEATURE_FILE,
        "embedding_file": EMBEDDING_FILE,
        "states": list(sp.state_names),
        "objects": list(sp.object_names),
        "pairs": [[sp.state_names[s], sp.object_names[o], "seen"] for s, o in sp.seen_pairs]
        + [[sp.state_names[s], sp.object_names[o], "unseen"] for s, o in sp.unseen_pairs],
        "samples": [
            [int(fi), sp.state_names[s], sp.object_names[o], str(tag)]
            for (fi, s, o), tag in zip(bundle.samples.tolist(), bundle.splits.tolist())
        ],
    }
    (d / META_FILE).write_text(json.dumps(meta, indent=1) + "\n")
    write_matrix(d / FEATURE_FILE, bundle.features)
    write_matrix(d / EMBEDDING_FILE, np.concatenate([bundle.state_vectors, bundle.object_vectors]))


def _meta_error(msg: str):
    return FormatError(f"{META_FILE}: {msg}")


def load_bundle(directory) -> DatasetBundle:
    d = Path(directory)
    try:
        meta = json.loads((d / META_FILE).read_text())
    except FileNotFoundError:
        raise FormatError(f"{d / META_FILE} not found") from None
    except json.JSONDecodeError as e:
        raise _meta_error(f"line {e.lineno} column {e.colno}: {e.msg}") from None
    if meta.get("format") != META_FORMAT or meta.get("version") != META_VERSION:
        raise _meta_error(f"expected format {META_FORMAT} version {META_VERSION}")
    for key in ("states", "objects", "pairs", "samples"):
        if not isinstance(meta.get(key), list):
            raise _meta_error(f"missing list field {key!r}")
    seen, unseen = [], []
    for i, entry in enumerate(meta["pairs"]):
        if not (isinstance(entry, list) and len(entry) == 3 and entry[2] in ("seen", "unseen")):
            raise _meta_error(f"pairs[{i}] must be [state, object, 'seen'|'unseen']")
        (seen if entry[2] == "seen" else unseen).append((entry[0], entry[1]))
    space = build_space(meta["states"], meta["objects"], seen, unseen)
    s_idx = {n: i for i, n in enumerate(space.state_names)}
    o_idx = {n: i for i, n in enumerate(space.object_names)}
    rows, tags = [], []
    for i, entry in enumerate(meta["samples"]):
        if not (isinstance(entry, list) and len(entry) == 4):
            raise _meta_error(f"samples[{i}] must be [feature_index, state, object, split]")
        fi, sn, on, tag = entry
        if sn not in s_idx or on not in o_idx:
            raise UnknownComponent(f"samples[{i}] references unknown component ({sn}, {on})")
        rows.append((int(fi), s_idx[sn], o_idx[on]))
        tags.append(tag)
    features = read_matrix(d / meta.get("feature_file", FEATURE_FILE))
    emb = read_matrix(d / meta.get("embedding_file", EMBEDDING_FILE))
    if emb.shape[0] != space.n_states + space.n_objects:
        raise FormatError(
            f"embedding file has {emb.shape[0]} rows, expected {space.n_states + space.n_objects}")
    return DatasetBundle(
        features=features,
        samples=np.array(rows, dtype=np.int64).reshape(-1, 3),
        splits=np.array(tags, dtype=object),
        space=space,
        state_vectors=emb[: space.n_states],
        object_vectors=emb[space.n_states:],
    )


# -- synthetic generator ----------------------------------------------------

@dataclass
class SynthConfig:
    n_states: int = 12
    n_objects: int = 10
    n_seen: int = 60
    n_unseen: int = 20
    samples_per_pair: int = 30
    d_feat: int = 64
    word_dim: int = 32
    # Per-class deviation scales. When omitted they are drawn from the seed:
    # states lognormal (heavy tail), objects near-constant.
    sigma_state: list[float] | None = None
    sigma_object: list[float] | None = None
    state_sigma_median: float = 0.5
    state_sigma_spread: float = 1.0
    object_sigma: float = 0.5
    noise: float = 0.15
    # Explicit pair lists [[state, object], ...] override n_seen / n_unseen.
    seen_pairs: list | None = None
    unseen_pairs: list | None = None
    train_frac: float = 0.6
    val_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("n_states", "n_objects", "n_seen", "samples_per_pair", "d_feat", "word_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synth.{name} must be >= 1")
        if self.n_unseen < 0:
            raise ConfigError("synth.n_unseen must be >= 0")
        if self.seen_pairs is None and self.n_seen + self.n_unseen > self.n_states * self.n_objects:
            raise ConfigError("synth: more pairs requested than states x objects")
        for name in ("noise", "state_sigma_median", "state_sigma_spread", "object_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"synth.{name} must be >= 0")
        for name, n in (("sigma_state", self.n_states), ("sigma_object", self.n_objects)):
            v = getattr(self, name)
            if v is not None:
                if len(v) != n:
                    raise ConfigError(f"synth.{name} must have {n} entries")
                if min(v) < 0:
                    raise ConfigError(f"synth.{name} entries must be >= 0")
        if not (0 < self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac < 1):
            raise ConfigError("synth: need 0 < train_frac, 0 <= val_frac, train_frac + val_frac < 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _choose_pairs(cfg: SynthConfig, rng: np.random.Generator):
    S, O = cfg.n_states, cfg.n_objects
    if cfg.seen_pairs is not None:
        seen = [(int(s), int(o)) for s, o in cfg.seen_pairs]
        unseen = [(int(s), int(o)) for s, o in (cfg.unseen_pairs or [])]
        return seen, unseen
    if cfg.n_seen < max(S, O):
        raise ConfigError(f"synth: n_seen must be >= max(n_states, n_objects) = {max(S, O)} to cover every component")
    # cover every state and object with seen pairs first
    perm_s = rng.permutation(S)
    perm_o = rng.permutation(O)
    cover = []
    for i in range(max(S, O)):
        p = (int(perm_s[i % S]), int(perm_o[i % O]))
        if p not in cover:
            cover.append(p)
    covered = set(cover)
    rest = [(s, o) for s in range(S) for o in range(O) if (s, o) not in covered]
    rest = [rest[i] for i in rng.permutation(len(rest))]
    seen = cover + rest[: cfg.n_seen - len(cover)]
    unseen = rest[cfg.n_seen - len(cover): cfg.n_seen - len(cover) + cfg.n_unseen]
    return seen, unseen


def resolve_sigmas(cfg: SynthConfig, rng: np.random.Generator):
    if cfg.sigma_state is not None:
        sig_s = np.asarray(cfg.sigma_state, dtype=np.float64)
    else:
        sig_s = cfg.state_sigma_median * np.exp(cfg.state_sigma_spread * rng.standard_normal(cfg.n_states))
    if cfg.sigma_object is not None:
        sig_o = np.asarray(cfg.sigma_object, dtype=np.float64)
    else:
        sig_o = cfg.object_sigma * np.exp(0.1 * rng.standard_normal(cfg.n_objects))
    return sig_s, sig_o


def synth_generate(cfg: SynthConfig) -> DatasetBundle:
    """Draw a compositional dataset with per-class visual deviation.

    Each pair gets fixed composition-specific perturbations of its state and
    object prototypes, scaled by that class's deviation scale; every sample
    is the normalised sum plus isotropic Gaussian noise. Seen pairs split
    into train/val_seen/test_seen, unseen pairs into val_unseen/test_unseen.
    """
    rng = np.random.default_rng(cfg.seed)
    seen, unseen = _choose_pairs(cfg, rng)
    seen_s = {s for s, _ in seen}
    seen_o = {o for _, o in seen}
    for s, o in unseen:
        if s not in seen_s or o not in seen_o:
            raise SplitViolation(f"unseen pair ({s}, {o}) uses a component absent from all seen pairs")

    states = [f"state{i:02d}" for i in range(cfg.n_states)]
    objects = [f"object{i:02d}" for i in range(cfg.n_objects)]
    space = build_space(states, objects, seen, unseen)

    d = cfg.d_feat
    proto_s = _unit(rng.standard_normal((cfg.n_states, d)))
    proto_o = _unit(rng.standard_normal((cfg.n_objects, d)))
    sig_s, sig_o = resolve_sigmas(cfg, rng)

    n_per = cfg.samples_per_pair
    n_train = int(round(cfg.train_frac * n_per))
    n_val = int(round(cfg.val_frac * n_per))
    n_val_u = n_per // 2

    feats, rows, tags = [], [], []
    for pid, (s, o) in enumerate(space.closed_pairs):
        eps_s = _unit(rng.standard_normal(d))
        eps_o = _unit(rng.standard_normal(d))
        centre = _unit(proto_s[s] + sig_s[s] * eps_s + proto_o[o] + sig_o[o] * eps_o)
        x = centre[None, :] + cfg.noise * rng.standard_normal((n_per, d))
        if pid < space.n_seen:
            split = ["train"] * n_train + ["val_seen"] * n_val + ["test_seen"] * (n_per - n_train - n_val)
        else:
            split = ["val_unseen"] * n_val_u + ["test_unseen"] * (n_per - n_val_u)
        base = len(feats) * n_per
        feats.append(x)
        rows.extend((base + j, s, o) for j in range(n_per))
        tags.extend(split)

    sv = np.stack([hashed_word_vector(n, cfg.word_dim, "state:") for n in states]).astype(np.float32)
    ov = np.stack([hashed_word_vector(n, cfg.word_dim, "object:") for n in objects]).astype(np.float32)
    return DatasetBundle(
        features=np.concatenate(feats).astype(np.float32),
        samples=np.array(rows, dtype=np.int64),
        splits=np.array(tags, dtype=object),
        space=space,
        state_vectors=sv,
        object_vectors=ov,
    )


def intra_state_spread(bundle: DatasetBundle) -> float:
    """Mean over states of 1 - cos(pair mean, state mean) across its pairs."""
    X = bundle.features.astype(np.float64)
    fi, st, ob = bundle.samples.T
    spreads = []
    for s in range(bundle.space.n_states):
        means = []
        for o in np.unique(ob[st == s]):
            sel = (st == s) & (ob == o)
            means.append(X[fi[sel]].mean(axis=0))
        if len(means) < 2:
            continue
        means = _unit(np.stack(means))
        centre = _unit(means.mean(axis=0))
        spreads.append(float(np.mean(1.0 - means @ centre)))
    return float(np.mean(spreads))


# -- checkpoints ------------------------------------------------------------

def config_hash(model_cfg: dict, space: CompositionSpace) -> str:
    blob = json.dumps({"model": model_cfg, "space": space.digest()}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(model: MustModel, path, extra: dict | None = None) -> None:
    """Length-prefixed named float64 tensors behind a JSON header.

    Layout: magic, u32 version, u64 header length, header JSON (UTF-8),
    u32 tensor count, then per tensor: u16 name length, name, u32 ndim,
    ndim x u64 dims, float64 LE payload. Word vectors are stored as tensors
    too, so a checkpoint is self-contained.
    """
    header = {
        "model": model.config.to_dict(),
        "space": model.space.to_dict(),
        "config_hash": config_hash(model.config.to_dict(), model.space),
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    ws, wo = model.word_vectors
    tensors = [("words.state", ws), ("words.object", wo)] + [(p.name, p.value) for p in model.params]
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<IQ", CKPT_VERSION, len(hb)))
    buf.write(hb)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        nb = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    try:
        version, hlen = struct.unpack_from("<IQ", raw, 8)
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 20
        header = json.loads(raw[pos:pos + hlen].decode())
        pos += hlen
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + size > len(raw):
                raise FormatError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt checkpoint ({e})") from None
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    return header, tensors


def load_checkpoint(path, expected_space: CompositionSpace | None = None, expected_hash: str | None = None) -> MustModel:
    """Rebuild a model. Raises CompatError if the space or config hash differ."""
    header, tensors = read_checkpoint(path)
    space = CompositionSpace.from_dict(header["space"])
    known = {f.name for f in fields(ModelConfig)}
    mcfg = ModelConfig(**{k: v for k, v in header["model"].items() if k in known})
    if config_hash(mcfg.to_dict(), space) != header["config_hash"]:
        raise FormatError(f"{path}: header hash does not match its contents")
    if expected_space is not None and expected_space != space:
        raise CompatError("checkpoint was trained on a different composition space")
    if expected_hash is not None and expected_hash != header["config_hash"]:
        raise CompatError("checkpoint config hash does not match the requested configuration")
    ws, wo = tensors.pop("words.state"), tensors.pop("words.object")
    sv = {n: ws[i] for i, n in enumerate(space.state_names)}
    ov = {n: wo[i] for i, n in enumerate(space.object_names)}
    model = MustModel(space, sv, ov, mcfg)
    model.load_state_dict(tensors)
    model.checkpoint_extra = header.get("extra", {})
    return model
