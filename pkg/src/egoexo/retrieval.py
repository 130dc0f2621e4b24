"""Two-stream cross-view embedding network, contrastive training, and
gallery retrieval.

One encoder per view maps an RGB frame (3 channels) or a momentary flow map
(2 channels) to a 512-d embedding. Corresponding ego/exo inputs (same
sequence, same time) are pulled together; non-corresponding pairs
(t1 != t2) are pushed beyond a margin. Retrieval ranks a gallery by
Euclidean distance with deterministic id-order tie-breaking.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np
import torch
import torch.nn as nn

from . import checkpoints, data, flow as flow_mod
from .errors import (
    CheckpointIncompatible,
    DataEmpty,
    DimensionMismatch,
    MissingFile,
    SchemaError,
    ShapeError,
    TruthMissing,
)
from .metrics import CMCCurve, cmc

EMBEDDING_DIM = 512
CKPT_KIND = "retrieval"
GALLERY_MAGIC = b"EEMB"

VARIANT_CHANNELS = {"rgb": 3, "flow": 2}


@dataclass
class RetrievalConfig:
    variant: str = "rgb"
    margin: float = 1.0
    neg_ratio: int = 3
    within_seq_fraction: float = 0.5
    input_size: int = 128
    width_base: int = 32
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 = final checkpoint only
    validate_every: int = 1  # epochs; 0 disables per-epoch validation
    norm: str = "group"  # batch-independent so encode() matches training
    head: str = "pool"  # "pool" (global average) or "flatten"

    def __post_init__(self):
        if self.variant not in VARIANT_CHANNELS:
            raise SchemaError(f"unknown variant {self.variant!r}")
        if self.margin <= 0:
            raise SchemaError("margin must be positive")
        if self.neg_ratio < 0:
            raise SchemaError("neg_ratio must be >= 0")
        if self.norm not in ("group", "batch"):
            raise SchemaError(f"unknown norm {self.norm!r}")
        if self.head not in ("pool", "flatten"):
            raise SchemaError(f"unknown head {self.head!r}")

    @property
    def input_channels(self) -> int:
        return VARIANT_CHANNELS[self.variant]


# ---------------------------------------------------------------------------
# model

def _norm_layer(kind: str, width: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(width)
    groups = 8 if width % 8 == 0 else 1
    return nn.GroupNorm(groups, width)


class StreamEncoder(nn.Module):
    """Five stride-2 conv stages (norm + rectifier each), spatial reduction
    (global average pooling or flatten), and a fully connected embedding
    head."""

    def __init__(self, in_channels: int, width_base: int = 32,
                 embedding_dim: int = EMBEDDING_DIM, input_size: int = 128,
                 norm: str = "group", head: str = "pool"):
        super().__init__()
        widths = [min(width_base * 2**i, 512) for i in range(5)]
        blocks = []
        prev = in_channels
        for w in widths:
            blocks += [
                nn.Conv2d(prev, w, 4, 2, 1),
                _norm_layer(norm, w),
                nn.ReLU(inplace=True),
            ]
            prev = w
        self.features = nn.Sequential(*blocks)
        self.head_kind = head
        if head == "pool":
            self.reduce = nn.AdaptiveAvgPool2d(1)
            head_in = prev
        else:
            self.reduce = nn.Identity()
            head_in = prev * (input_size // 32) ** 2
        self.head = nn.Linear(head_in, embedding_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.reduce(self.features(x)).flatten(1)
        return self.head(feats)


class TwoStreamModel(nn.Module):
    """View-specific encoders with independent weights."""

    def __init__(self, cfg: RetrievalConfig):
        super().__init__()
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        kwargs = dict(width_base=cfg.width_base, input_size=cfg.input_size,
                      norm=cfg.norm, head=cfg.head)
        self.ego = StreamEncoder(cfg.input_channels, **kwargs)
        self.exo = StreamEncoder(cfg.input_channels, **kwargs)
        self.steps_trained = 0

    @property
    def margin(self) -> float:
        return self.cfg.margin

    @property
    def input_channels(self) -> int:
        return self.cfg.input_channels

    def encoder(self, view: str) -> StreamEncoder:
        if view == "ego":
            return self.ego
        if view == "exo":
            return self.exo
        raise SchemaError(f"unknown view {view!r}")


def _prepare_input(model: TwoStreamModel, x: np.ndarray) -> torch.Tensor:
    x = np.asarray(x)
    size = model.cfg.input_size
    if x.ndim != 3 or x.shape[2] != model.input_channels:
        raise ShapeError(
            f"expected HxWx{model.input_channels} input, got shape {x.shape}"
        )
    if x.shape[0] != size or x.shape[1] != size:
        raise ShapeError(f"expected {size}x{size} input, got {x.shape[0]}x{x.shape[1]}")
    if model.input_channels == 3:
        arr = x.astype(np.float32) / 255.0
    else:
        arr = x.astype(np.float32)
    return torch.from_numpy(np.transpose(arr, (2, 0, 1)))


def encode(model: TwoStreamModel, view: str, x: np.ndarray) -> np.ndarray:
    """Embed one input map with the view-specific stream."""
    model.eval()
    with torch.no_grad():
        emb = model.encoder(view)(_prepare_input(model, x)[None])[0]
    return emb.numpy().astype(np.float64)


def encode_batch(model: TwoStreamModel, view: str, xs: list[np.ndarray]) -> np.ndarray:
    model.eval()
    batch = torch.stack([_prepare_input(model, x) for x in xs])
    with torch.no_grad():
        emb = model.encoder(view)(batch)
    return emb.numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# losses

def contrastive_loss(e_ego: np.ndarray, e_exo: np.ndarray, label: int, margin: float) -> float:
    """Contrastive objective on a single pair: squared distance for
    positives (label 0), squared hinge beyond the margin for negatives."""
    e_ego = np.asarray(e_ego, dtype=np.float64)
    e_exo = np.asarray(e_exo, dtype=np.float64)
    if e_ego.shape != e_exo.shape:
        raise DimensionMismatch(f"embedding dims differ: {e_ego.shape} vs {e_exo.shape}")
    if label not in (0, 1):
        raise SchemaError(f"label must be 0 or 1, got {label}")
    d = float(np.linalg.norm(e_ego - e_exo))
    if label == 0:
        return d * d
    return max(0.0, margin - d) ** 2


def contrastive_batch_loss(
    emb_ego: torch.Tensor, emb_exo: torch.Tensor, labels: torch.Tensor, margin: float
) -> torch.Tensor:
    """Differentiable batch mean of the contrastive objective."""
    d = torch.sqrt(((emb_ego - emb_exo) ** 2).sum(dim=1) + 1e-12)
    pos = d**2
    neg = torch.clamp(margin - d, min=0.0) ** 2
    per = torch.where(labels > 0, neg, pos)
    return per.mean()


# ---------------------------------------------------------------------------
# pair sampling

@dataclass(frozen=True)
class SampleRef:
    seq_id: str
    view: str
    t: int
    path: Path


@dataclass(frozen=True)
class PairSample:
    ego: SampleRef
    exo: SampleRef
    label: int  # 0 positive (same sequence and time), 1 negative


@lru_cache(maxsize=8192)
def _cached_frame(path: str) -> np.ndarray:
    return data.load_frame(path)


@lru_cache(maxsize=2048)
def _cached_flow(path: str) -> np.ndarray:
    return data.read_flow(path)


def load_input(ref: SampleRef, variant: str, input_size: int) -> np.ndarray:
    if variant == "rgb":
        frame = _cached_frame(str(ref.path))
        if frame.shape[0] != input_size or frame.shape[1] != input_size:
            frame = data.resize_frame(frame, (input_size, input_size))
        return frame
    fl = _cached_flow(str(ref.path))
    if fl.shape[0] != input_size or fl.shape[1] != input_size:
        fl = flow_mod.resize_flow(fl, (input_size, input_size))
    return fl


def _input_path(seq: data.PairedSequence, view: str, t: int, variant: str) -> Path:
    if variant == "rgb":
        return seq.frame_path(view, t)
    frame_dir = seq.ego_dir if view == "ego" else seq.exo_dir
    return flow_mod.flow_path(frame_dir, t)


def _time_range(seq: data.PairedSequence, variant: str) -> int:
    # momentary flow exists for frames 0 .. length-2
    return seq.length if variant == "rgb" else seq.length - 1


def sample_pairs(
    manifest: data.Manifest,
    split: str,
    variant: str = "rgb",
    neg_ratio: int = 3,
    seed: int = 0,
    within_seq_fraction: float = 0.5,
) -> Iterator[PairSample]:
    """Yield one positive per aligned pair (shuffled) followed by
    ``neg_ratio`` negatives with t1 != t2, drawn half within the same
    sequence and half across sequences. Deterministic for a given seed.
    """
    if variant not in VARIANT_CHANNELS:
        raise SchemaError(f"unknown variant {variant!r}")
    seqs = [s for s in manifest.split_sequences(split) if _time_range(s, variant) > 0]
    if not seqs:
        raise DataEmpty(f"split {split!r} has no usable sequences")
    rng = np.random.default_rng(seed)

    positives = [(si, t) for si, seq in enumerate(seqs) for t in range(_time_range(seq, variant))]
    order = rng.permutation(len(positives))

    def ref(si: int, view: str, t: int) -> SampleRef:
        seq = seqs[si]
        return SampleRef(seq.id, view, t, _input_path(seq, view, t, variant))

    for pi in order:
        si, t = positives[pi]
        n_t = _time_range(seqs[si], variant)
        yield PairSample(ref(si, "ego", t), ref(si, "exo", t), 0)
        for _ in range(neg_ratio):
            within = rng.random() < within_seq_fraction
            if within and n_t > 1:
                t2 = int(rng.integers(n_t - 1))
                if t2 >= t:
                    t2 += 1
                yield PairSample(ref(si, "ego", t), ref(si, "exo", t2), 1)
            elif len(seqs) > 1:
                sj = int(rng.integers(len(seqs) - 1))
                if sj >= si:
                    sj += 1
                n_j = _time_range(seqs[sj], variant)
                t2 = int(rng.integers(n_j))
                if t2 == t:  # keep t1 != t2 even across sequences
                    t2 = (t2 + 1) % n_j
                    if t2 == t:
                        continue
                yield PairSample(ref(si, "ego", t), ref(sj, "exo", t2), 1)
            elif n_t > 1:
                t2 = int(rng.integers(n_t - 1))
                if t2 >= t:
                    t2 += 1
                yield PairSample(ref(si, "ego", t), ref(si, "exo", t2), 1)


# ---------------------------------------------------------------------------
# training

@dataclass
class RetrievalEpochLog:
    epoch: int
    steps: int
    loss: float
    val_auc: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)


def _model_from_checkpoint(path: str | Path) -> tuple[TwoStreamModel, checkpoints.Checkpoint]:
    ckpt = checkpoints.load_checkpoint(path, expect_kind=CKPT_KIND)
    cfg = RetrievalConfig(**ckpt.config)
    model = TwoStreamModel(cfg)
    ckpt.apply_to(model)
    model.steps_trained = ckpt.steps_trained
    return model, ckpt


def load_model(path: str | Path) -> TwoStreamModel:
    return _model_from_checkpoint(path)[0]


def train(
    manifest: data.Manifest,
    cfg: RetrievalConfig,
    init: Optional[str | Path] = None,
    adapt: bool = False,
    out_dir: Optional[str | Path] = None,
    split: str = "train",
    val_split: str = "val",
    log_cb: Optional[Callable[[dict], None]] = None,
) -> tuple[list[Path], list[RetrievalEpochLog], TwoStreamModel]:
    """Minimize the mean contrastive loss over sampled pairs.

    With ``adapt`` the embedding heads are frozen and only the convolutional
    stages update (the synthetic-to-real fine-tuning protocol); this
    requires ``init``.
    """
    if adapt and init is None:
        raise CheckpointIncompatible("adapt=True requires a pretrained checkpoint")

    if init is not None:
        model, ckpt = _model_from_checkpoint(init)
        base_cfg = model.cfg
        # training hyperparameters come from cfg; architecture from the checkpoint
        for arch_key in ("variant", "input_size", "width_base", "norm", "head"):
            if getattr(cfg, arch_key) != getattr(base_cfg, arch_key):
                raise CheckpointIncompatible(
                    f"checkpoint {arch_key}={getattr(base_cfg, arch_key)!r} "
                    f"differs from requested {getattr(cfg, arch_key)!r}"
                )
        model.cfg = cfg
        model.steps_trained = ckpt.steps_trained
        start_epoch = ckpt.epoch
    else:
        model = TwoStreamModel(cfg)
        start_epoch = 0

    params = list(model.parameters())
    if adapt:
        for head in (model.ego.head, model.exo.head):
            for p in head.parameters():
                p.requires_grad_(False)
        params = [p for p in model.parameters() if p.requires_grad]

    optimizer = torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    torch.manual_seed(cfg.seed)

    out_dir = Path(out_dir) if out_dir is not None else None
    history: list[RetrievalEpochLog] = []
    ckpt_paths: list[Path] = []

    def save(tag: str, epoch: int) -> None:
        if out_dir is None:
            return
        path = checkpoints.save_checkpoint(
            out_dir / f"retr_{cfg.variant}_{tag}.ckpt.npz",
            CKPT_KIND,
            asdict(cfg),
            model,
            optimizers={"main": optimizer},
            epoch=epoch,
            steps_trained=model.steps_trained,
        )
        ckpt_paths.append(path)

    has_val = cfg.validate_every > 0 and len(manifest.split_sequences(val_split)) > 0

    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        model.train()
        samples = sample_pairs(
            manifest, split, cfg.variant, cfg.neg_ratio,
            seed=cfg.seed + 1000 * epoch, within_seq_fraction=cfg.within_seq_fraction,
        )
        loss_sum = 0.0
        steps = 0
        batch: list[PairSample] = []

        def step(batch_samples: list[PairSample]) -> float:
            ego_in = torch.stack(
                [_prepare_input(model, load_input(s.ego, cfg.variant, cfg.input_size)) for s in batch_samples]
            )
            exo_in = torch.stack(
                [_prepare_input(model, load_input(s.exo, cfg.variant, cfg.input_size)) for s in batch_samples]
            )
            labels = torch.tensor([s.label for s in batch_samples], dtype=torch.float32)
            emb_ego = model.ego(ego_in)
            emb_exo = model.exo(exo_in)
            loss = contrastive_batch_loss(emb_ego, emb_exo, labels, cfg.margin)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            return float(loss.detach())

        for sample in samples:
            batch.append(sample)
            if len(batch) == cfg.batch_size:
                loss_sum += step(batch)
                steps += 1
                model.steps_trained += 1
                batch = []
        if batch:
            loss_sum += step(batch)
            steps += 1
            model.steps_trained += 1

        val_auc = None
        if has_val and epoch % cfg.validate_every == 0:
            val_auc = evaluate(model, manifest, val_split).auc
        log = RetrievalEpochLog(epoch=epoch, steps=steps, loss=loss_sum / max(steps, 1), val_auc=val_auc)
        history.append(log)
        if log_cb is not None:
            log_cb({"event": "retrieval_epoch", "variant": cfg.variant, **log.as_dict()})
        if cfg.checkpoint_every and (epoch - start_epoch) % cfg.checkpoint_every == 0:
            save(f"epoch{epoch:04d}", epoch)

    save("final", start_epoch + cfg.epochs)
    return ckpt_paths, history, model


# ---------------------------------------------------------------------------
# galleries and retrieval

@dataclass(frozen=True)
class Gallery:
    kind: str  # "F_ego", "F'_ego", "F_exo"
    ids: tuple[str, ...]
    embeddings: np.ndarray  # (N, dim) float32

    def __post_init__(self):
        if len(self.ids) != len(self.embeddings):
            raise SchemaError("gallery ids and embeddings differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise SchemaError("gallery ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class RankingResult:
    query_id: str
    gallery_kind: str
    ranked_ids: tuple[str, ...]
    rank_of_truth: int

    @property
    def gallery_size(self) -> int:
        return len(self.ranked_ids)


def entry_id(seq_id: str, view: str, t: int) -> str:
    return f"{seq_id}/{view}/{t:06d}"


def build_gallery(
    model: TwoStreamModel,
    manifest: data.Manifest,
    split: str,
    view: str,
    variant: str = "rgb",
    source: str = "ground_truth",
    synthesized_dir: Optional[str | Path] = None,
    batch_size: int = 64,
) -> Gallery:
    """Encode every frame (or flow map) of a split/view into a gallery.

    ``source="synthesized"`` reads images from ``synthesized_dir`` (the
    layout written by the synthesis generator) and encodes them with the
    ego stream, producing an F'_ego gallery.
    """
    if source not in ("ground_truth", "synthesized"):
        raise SchemaError(f"unknown source {source!r}")
    if source == "synthesized":
        if synthesized_dir is None:
            raise SchemaError("synthesized source requires synthesized_dir")
        if variant != "rgb":
            raise SchemaError("synthesized galleries are RGB only")
        kind = "F'_ego"
        stream = "ego"
    else:
        kind = "F_ego" if view == "ego" else "F_exo"
        stream = view

    size = model.cfg.input_size
    ids: list[str] = []
    inputs: list[np.ndarray] = []
    for seq in manifest.split_sequences(split):
        for t in range(_time_range(seq, variant)):
            if source == "synthesized":
                path = Path(synthesized_dir) / seq.id / f"{t:06d}.png"
                if not path.is_file():
                    raise MissingFile(f"synthesized frame {path} does not exist")
                frame = data.load_frame(path)
                inputs.append(data.resize_frame(frame, (size, size)))
            else:
                ref = SampleRef(seq.id, view, t, _input_path(seq, view, t, variant))
                inputs.append(load_input(ref, variant, size))
            ids.append(entry_id(seq.id, view if source == "ground_truth" else "ego", t))
    if not ids:
        raise DataEmpty(f"no entries for split {split!r} view {view!r}")

    embs = []
    for lo in range(0, len(inputs), batch_size):
        embs.append(encode_batch(model, stream, inputs[lo : lo + batch_size]))
    embeddings = np.concatenate(embs).astype(np.float32)

    order = np.argsort(np.asarray(ids, dtype=object))
    return Gallery(kind, tuple(np.asarray(ids, dtype=object)[order]), embeddings[order])


def _id_tiebreak_rank(ids: tuple[str, ...]) -> np.ndarray:
    order = np.argsort(np.asarray(ids, dtype=str), kind="stable")
    rank = np.empty(len(ids), dtype=np.intp)
    rank[order] = np.arange(len(ids))
    return rank


def retrieve(query_embedding: np.ndarray, truth_id: str, gallery: Gallery) -> RankingResult:
    """Rank the gallery by Euclidean distance to the query; exact distance
    ties break by id order."""
    if truth_id not in gallery.ids:
        raise TruthMissing(f"truth id {truth_id!r} not in gallery")
    q = np.asarray(query_embedding, dtype=np.float64)
    if q.shape != (gallery.embeddings.shape[1],):
        raise DimensionMismatch(
            f"query dim {q.shape} vs gallery dim {gallery.embeddings.shape[1]}"
        )
    dists = np.linalg.norm(gallery.embeddings.astype(np.float64) - q, axis=1)
    order = np.lexsort((_id_tiebreak_rank(gallery.ids), dists))
    ranked = tuple(gallery.ids[i] for i in order)
    rank = ranked.index(truth_id) + 1
    return RankingResult(query_id=truth_id, gallery_kind=gallery.kind, ranked_ids=ranked, rank_of_truth=rank)


def rank_of_truth_many(query_embs: np.ndarray, truth_indices: np.ndarray, gallery: Gallery) -> np.ndarray:
    """Vectorized rank computation for many queries against one gallery,
    with the same distance-then-id ordering as ``retrieve``."""
    g = gallery.embeddings.astype(np.float64)
    q = np.asarray(query_embs, dtype=np.float64)
    d2 = ((q[:, None, :] - g[None, :, :]) ** 2).sum(axis=2)
    id_rank = _id_tiebreak_rank(gallery.ids)
    ranks = np.empty(len(q), dtype=np.intp)
    for i in range(len(q)):
        order = np.lexsort((id_rank, d2[i]))
        ranks[i] = int(np.nonzero(order == truth_indices[i])[0][0]) + 1
    return ranks


@dataclass(frozen=True)
class RetrievalEval:
    auc: float
    curve: CMCCurve
    per_sequence_auc: dict[str, float]
    gallery_size: int
    n_queries: int


def evaluate(
    model: TwoStreamModel,
    manifest: data.Manifest,
    split: str,
    variant: Optional[str] = None,
    direction: str = "ego2exo",
) -> RetrievalEval:
    """Per-sequence retrieval evaluation.

    Every frame of the query view is ranked against the gallery built from
    the other view of the same sequence; CMC is aggregated over all queries
    (sequences share one length at toy scale). A uniformly random ranking
    gives AUC (N+1)/2N, about 0.505 for galleries of 100.
    """
    variant = variant or model.cfg.variant
    if direction == "ego2exo":
        query_view, gallery_view = "ego", "exo"
    elif direction == "exo2ego":
        query_view, gallery_view = "exo", "ego"
    else:
        raise SchemaError(f"unknown direction {direction!r}")

    seqs = [s for s in manifest.split_sequences(split) if _time_range(s, variant) > 0]
    if not seqs:
        raise DataEmpty(f"split {split!r} has no usable sequences")

    results = []
    per_seq: dict[str, float] = {}
    for seq in seqs:
        sub = data.Manifest(manifest.modality, manifest.exo_kind, (seq,), root=manifest.root)
        gal = build_gallery(model, sub, seq.split, gallery_view, variant)
        n_t = _time_range(seq, variant)
        queries = [
            load_input(SampleRef(seq.id, query_view, t, _input_path(seq, query_view, t, variant)), variant, model.cfg.input_size)
            for t in range(n_t)
        ]
        q_embs = encode_batch(model, query_view, queries)
        truth_ids = [entry_id(seq.id, gallery_view, t) for t in range(n_t)]
        truth_idx = np.array([gal.ids.index(tid) for tid in truth_ids])
        ranks = rank_of_truth_many(q_embs, truth_idx, gal)
        seq_results = [
            RankingResult(entry_id(seq.id, query_view, t), gal.kind, tuple(gal.ids), int(r))
            for t, r in enumerate(ranks)
        ]
        results.extend(seq_results)
        per_seq[seq.id] = cmc(seq_results).auc

    curve = cmc(results)
    return RetrievalEval(
        auc=curve.auc,
        curve=curve,
        per_sequence_auc=per_seq,
        gallery_size=curve.gallery_size,
        n_queries=len(results),
    )


# ---------------------------------------------------------------------------
# gallery files (JSON header + EEMB binary block)

def save_gallery(gallery: Gallery, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": gallery.kind,
        "count": len(gallery),
        "dim": int(gallery.embeddings.shape[1]),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(GALLERY_MAGIC)
        fh.write(struct.pack("<II", len(gallery), gallery.embeddings.shape[1]))
        fh.write(np.ascontiguousarray(gallery.embeddings, dtype="<f4").tobytes())
        for entry in gallery.ids:
            raw = entry.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
    return path


def load_gallery(path: str | Path) -> Gallery:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"gallery {path} does not exist")
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}: bad gallery header: {exc}") from exc
        magic = fh.read(4)
        if magic != GALLERY_MAGIC:
            raise SchemaError(f"{path}: bad magic {magic!r}, expected {GALLERY_MAGIC!r}")
        count, dim = struct.unpack("<II", fh.read(8))
        if count != header.get("count") or dim != header.get("dim"):
            raise SchemaError(f"{path}: header and binary block disagree")
        embeddings = np.frombuffer(fh.read(count * dim * 4), dtype="<f4").reshape(count, dim).copy()
        ids = []
        for _ in range(count):
            (length,) = struct.unpack("<I", fh.read(4))
            ids.append(fh.read(length).decode("utf-8"))
    return Gallery(header["kind"], tuple(ids), embeddings)
