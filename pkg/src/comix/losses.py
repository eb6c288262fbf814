"""Training objectives: speed-contrastive losses, pseudo-label supervised
contrastive loss, smoothed cross-entropy, and their weighted total.

All contrastive terms share the kernel h(u, v) = exp(cos(u, v) / tau) and a
common anchor scheme. For a batch of B videos, each with a fast and a slow
embedding (and, with background mixing, a mixed fast and mixed slow one):

* speed contrastive (originals only): anchors are every (video, speed); the
  single positive is the same video at the other speed; negatives are both
  speeds of every other video.

* with background mixing: anchors are all four embeddings of every video; the
  positive set is the video's three sibling embeddings (other speed same
  provenance, other speed other provenance, same speed other provenance);
  negatives are all four embeddings of every other video.

* pseudo-label supervised (target originals, admitted subset A only): anchors
  are both speeds of every video in A; positives are every A-embedding that
  shares the anchor's pseudo-label, minus the anchor itself. As printed, the
  denominator sums the positive set plus both speeds of every other A video,
  so same-label terms from other videos are counted twice; the optional
  SupCon-style denominator counts every non-anchor A-embedding exactly once.
  (For the two losses above the printed denominator already equals the
  SupCon one, so the flag only changes this term.)

Per-anchor losses -(1/|P|) sum_p log(h(anchor, p) / den) are averaged over all
anchors of a batch, so the loss weights are batch-size independent. Anchors
with an empty positive set contribute zero and are counted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ComixError
from .pseudolabel import PseudoLabelSet
from .synthvideo import FAST, MIXED, ORIGINAL, SLOW


class MissingEmbeddingError(ComixError):
    """A video in a contrastive view lacks a required embedding."""


@dataclass
class LossWeights:
    lambda_bgm: float = 0.1
    lambda_tpl: float = 0.01
    tau: float = 0.5
    label_smoothing: float = 0.1

    def validate(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.lambda_bgm < 0 or self.lambda_tpl < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label smoothing must lie in [0, 1), got {self.label_smoothing}")


@dataclass
class EmbeddingEntry:
    video_id: int
    domain: str
    speed: str  # FAST or SLOW
    provenance: str  # ORIGINAL or MIXED
    z: ad.Tensor
    label: Optional[int] = None


class EmbeddingBatch:
    """Flat collection of logit embeddings, at most one per
    (video_id, speed, provenance) triple."""

    def __init__(self):
        self.entries: list[EmbeddingEntry] = []
        self._seen = set()

    def add(self, entry: EmbeddingEntry):
        key = (entry.video_id, entry.speed, entry.provenance)
        if key in self._seen:
            raise ValueError(f"duplicate embedding for {key}")
        self._seen.add(key)
        self.entries.append(entry)

    def view(self, domain: str) -> "ContrastiveBatchView":
        order = []
        grouped: dict[int, dict] = {}
        for e in self.entries:
            if e.domain != domain:
                continue
            if e.video_id not in grouped:
                grouped[e.video_id] = {"label": e.label}
                order.append(e.video_id)
            grouped[e.video_id][(e.speed, e.provenance)] = e.z
            if e.label is not None:
                grouped[e.video_id]["label"] = e.label
        videos = []
        for vid in order:
            g = grouped[vid]
            videos.append(
                VideoEmbeddings(
                    video_id=vid,
                    label=g.get("label"),
                    z_fast=g.get((FAST, ORIGINAL)),
                    z_slow=g.get((SLOW, ORIGINAL)),
                    z_fast_mixed=g.get((FAST, MIXED)),
                    z_slow_mixed=g.get((SLOW, MIXED)),
                )
            )
        return ContrastiveBatchView(videos)


@dataclass
class VideoEmbeddings:
    video_id: int
    z_fast: ad.Tensor
    z_slow: Optional[ad.Tensor] = None
    z_fast_mixed: Optional[ad.Tensor] = None
    z_slow_mixed: Optional[ad.Tensor] = None
    label: Optional[int] = None

    def get(self, speed: str, provenance: str) -> ad.Tensor:
        if provenance == ORIGINAL:
            return self.z_fast if speed == FAST else self.z_slow
        return self.z_fast_mixed if speed == FAST else self.z_slow_mixed


class ContrastiveBatchView:
    """Per-video embedding groups in batch-slot order.

    Every video needs at least a fast embedding (the CE-only path uses nothing
    else); the contrastive losses check for the slow and mixed embeddings they
    require. Mixed embeddings come in fast/slow pairs per video.
    """

    def __init__(self, videos):
        videos = list(videos)
        for v in videos:
            if v.z_fast is None:
                raise MissingEmbeddingError(f"video {v.video_id} is missing its fast embedding")
            if (v.z_fast_mixed is None) != (v.z_slow_mixed is None):
                raise MissingEmbeddingError(
                    f"video {v.video_id} has only one of its mixed embeddings"
                )
        self.videos = videos

    @property
    def has_mixed(self) -> bool:
        return bool(self.videos) and all(v.z_fast_mixed is not None for v in self.videos)

    def __len__(self):
        return len(self.videos)

    def without_mixed(self) -> "ContrastiveBatchView":
        return ContrastiveBatchView(
            [
                VideoEmbeddings(
                    video_id=v.video_id, z_fast=v.z_fast, z_slow=v.z_slow, label=v.label
                )
                for v in self.videos
            ]
        )

    def _require(self, use_mixed: bool):
        for v in self.videos:
            if v.z_slow is None:
                raise MissingEmbeddingError(f"video {v.video_id} is missing its slow embedding")
            if use_mixed and v.z_fast_mixed is None:
                raise MissingEmbeddingError(
                    f"video {v.video_id} is missing its background-mixed embeddings"
                )


# ---------------------------------------------------------------------------
# kernel and helpers


def h(u: ad.Tensor, v: ad.Tensor, tau: float) -> ad.Tensor:
    """exp(cosine(u, v) / tau); errors on a zero-norm embedding."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return ad.exp(ad.scale(ad.cosine(u, v), 1.0 / tau))


class _HCache:
    """Memoizes h(., .) nodes within one loss evaluation. Keys are positional
    (slot, speed, provenance) descriptors, canonicalized since h is symmetric
    and the cosine kernel is bitwise symmetric in its arguments."""

    def __init__(self, view: ContrastiveBatchView, tau: float):
        self.view = view
        self.tau = tau
        self._cache = {}

    def get(self, a, b) -> ad.Tensor:
        key = (a, b) if a <= b else (b, a)
        node = self._cache.get(key)
        if node is None:
            za = self.view.videos[a[0]].get(a[1], a[2])
            zb = self.view.videos[b[0]].get(b[1], b[2])
            node = h(za, zb, self.tau)
            self._cache[key] = node
        return node


def _sum_nodes(nodes):
    total = nodes[0]
    for node in nodes[1:]:
        total = ad.add(total, node)
    return total


def _other(speed_or_prov: str) -> str:
    if speed_or_prov == FAST:
        return SLOW
    if speed_or_prov == SLOW:
        return FAST
    return MIXED if speed_or_prov == ORIGINAL else ORIGINAL


def _nce_anchor_term(anchor_key, positives, negatives, cache) -> ad.Tensor:
    """-(1/|P|) sum_p log(h(anchor, p) / (sum_P h + sum_neg h))."""
    pos_nodes = [cache.get(anchor_key, p) for p in positives]
    neg_nodes = [cache.get(anchor_key, n) for n in negatives]
    den = _sum_nodes(pos_nodes + neg_nodes)
    log_den = ad.log(den)
    pos_logs = _sum_nodes([ad.log(p) for p in pos_nodes])
    mean_pos_log = ad.scale(pos_logs, 1.0 / len(pos_nodes))
    return ad.sub(log_den, mean_pos_log)


# ---------------------------------------------------------------------------
# speed-contrastive losses (with and without background mixing)


def _speed_contrastive(view: ContrastiveBatchView, tau: float, use_mixed: bool) -> ad.Tensor:
    view._require(use_mixed)
    provs = (ORIGINAL, MIXED) if use_mixed else (ORIGINAL,)
    cache = _HCache(view, tau)
    terms = []
    for i in range(len(view)):
        for prov in provs:
            for speed in (FAST, SLOW):
                anchor = (i, speed, prov)
                positives = [(i, _other(speed), prov)]
                if use_mixed:
                    positives += [
                        (i, _other(speed), _other(prov)),
                        (i, speed, _other(prov)),
                    ]
                negatives = []
                for j in range(len(view)):
                    if j == i:
                        continue
                    for v_speed in (SLOW, FAST):
                        negatives.append((j, v_speed, ORIGINAL))
                        if use_mixed:
                            negatives.append((j, v_speed, MIXED))
                terms.append(_nce_anchor_term(anchor, positives, negatives, cache))
    return ad.scale(_sum_nodes(terms), 1.0 / len(terms))


def tcl_anchor_loss(view: ContrastiveBatchView, i: int, anchor_speed: str, tau: float) -> ad.Tensor:
    """Single-anchor speed-contrastive term over originals."""
    view._require(use_mixed=False)
    cache = _HCache(view, tau)
    positives = [(i, _other(anchor_speed), ORIGINAL)]
    negatives = [
        (j, s, ORIGINAL) for j in range(len(view)) if j != i for s in (SLOW, FAST)
    ]
    return _nce_anchor_term((i, anchor_speed, ORIGINAL), positives, negatives, cache)


def tcl_loss(view: ContrastiveBatchView, tau: float) -> ad.Tensor:
    """Speed-contrastive loss over originals, averaged over both anchor
    directions (fast->slow and slow->fast) of every video."""
    if len(view) == 0:
        raise ValueError("empty batch")
    return _speed_contrastive(view, tau, use_mixed=False)


def bgm_loss(view: ContrastiveBatchView, tau: float, require_mixed: bool = True) -> ad.Tensor:
    """Speed-contrastive loss with background-mixed positives.

    Each anchor gains its mixed siblings as extra positives (three per anchor)
    and every other video contributes its mixed embeddings as extra negatives.
    With mixed embeddings absent and `require_mixed=False`, this degenerates to
    exactly `tcl_loss`.
    """
    if len(view) == 0:
        raise ValueError("empty batch")
    if not view.has_mixed:
        if require_mixed:
            raise MissingEmbeddingError("background-mixed embeddings are required")
        return _speed_contrastive(view, tau, use_mixed=False)
    return _speed_contrastive(view, tau, use_mixed=True)


# ---------------------------------------------------------------------------
# pseudo-label supervised contrastive loss


@dataclass
class TplResult:
    loss: ad.Tensor
    num_anchors: int = 0
    empty_positive_anchors: int = 0


def tpl_anchor_loss(
    view: ContrastiveBatchView,
    pseudo: PseudoLabelSet,
    i: int,
    anchor_speed: str,
    tau: float,
    supcon_denominator: bool = False,
) -> ad.Tensor:
    """Single-anchor pseudo-label supervised term. `i` indexes the view and
    must belong to the admitted set."""
    view._require(use_mixed=False)
    cache = _HCache(view, tau)
    admitted = [k for k, v in enumerate(view.videos) if v.video_id in pseudo]
    if i not in admitted:
        raise ValueError(f"anchor video {view.videos[i].video_id} has no pseudo-label")
    term = _tpl_term(view, pseudo, admitted, i, anchor_speed, cache, supcon_denominator)
    if term is None:
        return ad.constant(0.0)
    return term


def _tpl_term(view, pseudo, admitted, i, anchor_speed, cache, supcon_denominator):
    label_i = pseudo.label_of(view.videos[i].video_id)
    speeds = (SLOW, FAST) if anchor_speed == FAST else (FAST, SLOW)
    anchor = (i, anchor_speed, ORIGINAL)
    positives = [
        (p, s, ORIGINAL)
        for p in admitted
        if pseudo.label_of(view.videos[p].video_id) == label_i
        for s in speeds
        if not (p == i and s == anchor_speed)
    ]
    if not positives:
        return None
    if supcon_denominator:
        den_keys = [
            (a, s, ORIGINAL)
            for a in admitted
            for s in speeds
            if not (a == i and s == anchor_speed)
        ]
        den = _sum_nodes([cache.get(anchor, k) for k in den_keys])
    else:
        # as printed: the positive set plus both speeds of every other admitted
        # video, so same-label terms from other videos appear twice
        extra = [(a, s, ORIGINAL) for a in admitted if a != i for s in speeds]
        den = _sum_nodes(
            [cache.get(anchor, k) for k in positives] + [cache.get(anchor, k) for k in extra]
        )
    log_den = ad.log(den)
    pos_logs = _sum_nodes([ad.log(cache.get(anchor, p)) for p in positives])
    return ad.sub(log_den, ad.scale(pos_logs, 1.0 / len(positives)))


def tpl_loss(
    view: ContrastiveBatchView,
    pseudo: PseudoLabelSet,
    tau: float,
    supcon_denominator: bool = False,
) -> TplResult:
    """Pseudo-label supervised contrastive loss over the admitted subset,
    averaged over both anchor speeds of every admitted video. Anchors with no
    positives contribute zero and are counted."""
    cache = _HCache(view, tau)
    admitted = [k for k, v in enumerate(view.videos) if v.video_id in pseudo]
    if not admitted:
        return TplResult(loss=ad.constant(0.0))
    view._require(use_mixed=False)
    terms = []
    empty = 0
    num_anchors = 0
    for i in admitted:
        for speed in (FAST, SLOW):
            num_anchors += 1
            term = _tpl_term(view, pseudo, admitted, i, speed, cache, supcon_denominator)
            if term is None:
                empty += 1
            else:
                terms.append(term)
    if not terms:
        return TplResult(loss=ad.constant(0.0), num_anchors=num_anchors, empty_positive_anchors=empty)
    loss = ad.scale(_sum_nodes(terms), 1.0 / num_anchors)
    return TplResult(loss=loss, num_anchors=num_anchors, empty_positive_anchors=empty)


# ---------------------------------------------------------------------------
# cross-entropy and the total objective


def ce_smoothed(z: ad.Tensor, y: int, eps: float) -> ad.Tensor:
    """Cross-entropy of softmax(z) against a label-smoothed one-hot target
    (1 - eps on the true class, eps/(c-1) elsewhere)."""
    c = z.shape[0]
    if not 0 <= y < c:
        raise ValueError(f"class id {y} out of range [0, {c})")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"label smoothing must lie in [0, 1), got {eps}")
    target = np.full(c, eps / (c - 1) if c > 1 else 0.0)
    target[y] = 1.0 - eps
    return ad.neg(ad.sum_all(ad.mul(ad.constant(target, "ce_target"), ad.log_softmax(z))))


@dataclass
class LossBreakdown:
    total: float = 0.0
    ce: float = 0.0
    bgm_src: float = 0.0
    bgm_tgt: float = 0.0
    tpl: float = 0.0
    num_pseudo: int = 0
    empty_positive_anchors: int = 0


def total_loss(
    source_view: ContrastiveBatchView,
    target_view: ContrastiveBatchView,
    pseudo: Optional[PseudoLabelSet],
    weights: LossWeights,
    use_bgm: bool = True,
    use_tpl: bool = True,
    use_src_contrastive: bool = True,
    supcon_denominator: bool = False,
    self_training_ce: bool = False,
    labeled_target: Optional[list] = None,
) -> tuple[ad.Tensor, LossBreakdown]:
    """Weighted objective: source CE + lambda_bgm * (source + target
    contrastive) + lambda_tpl * pseudo-label term.

    A weight of exactly zero skips building that term altogether, so zero
    weights reduce the graph to the plain CE objective. `labeled_target` is a
    list of (logits, label) pairs folded into the CE mean (the few-shot
    semi-supervised variant).
    """
    weights.validate()
    report = LossBreakdown()

    ce_terms = []
    for v in source_view.videos:
        if v.label is None:
            raise ValueError(f"unlabeled source video {v.video_id} in cross-entropy term")
        ce_terms.append(ce_smoothed(v.z_fast, v.label, weights.label_smoothing))
    for z, label in labeled_target or []:
        ce_terms.append(ce_smoothed(z, label, weights.label_smoothing))
    total = ad.scale(_sum_nodes(ce_terms), 1.0 / len(ce_terms))
    report.ce = total.item()

    if weights.lambda_bgm > 0.0:
        contrastive = []
        if use_src_contrastive:
            src = (
                bgm_loss(source_view, weights.tau)
                if use_bgm
                else tcl_loss(source_view, weights.tau)
            )
            report.bgm_src = src.item()
            contrastive.append(src)
        tgt = (
            bgm_loss(target_view, weights.tau)
            if use_bgm
            else tcl_loss(target_view, weights.tau)
        )
        report.bgm_tgt = tgt.item()
        contrastive.append(tgt)
        total = ad.add(total, ad.scale(_sum_nodes(contrastive), weights.lambda_bgm))

    if weights.lambda_tpl > 0.0 and use_tpl and pseudo is not None:
        report.num_pseudo = len(pseudo)
        if self_training_ce:
            terms = [
                ce_smoothed(v.z_fast, pseudo.label_of(v.video_id), weights.label_smoothing)
                for v in target_view.videos
                if v.video_id in pseudo
            ]
            tpl_node = (
                ad.scale(_sum_nodes(terms), 1.0 / len(terms)) if terms else ad.constant(0.0)
            )
        else:
            result = tpl_loss(target_view, pseudo, weights.tau, supcon_denominator)
            tpl_node = result.loss
            report.empty_positive_anchors = result.empty_positive_anchors
        report.tpl = tpl_node.item()
        if tpl_node.op != "const":
            total = ad.add(total, ad.scale(tpl_node, weights.lambda_tpl))

    report.total = total.item()
    return total, report
