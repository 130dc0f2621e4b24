"""Higher-level experiments on trained models.

``view_invariance_test`` fits linear max-margin action classifiers on
frozen embeddings from each view (and their pool) and reports the full
3x3 accuracy grid: {ego-only, exo-only, both} classifiers evaluated on
{ego, exo, pooled} test features. ``synthesized_retrieval_test`` checks
whether synthesized ego images preserve enough high-level content to find
their ground-truth counterparts in a gallery.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.preprocessing import StandardScaler
from sklearn.svm import LinearSVC

from . import data, retrieval, synthesis
from .errors import DataEmpty, MissingFile, MissingLabels, UntrainedModel
from .metrics import CMCCurve, cmc

CLASSIFIER_NAMES = ("ego_only", "exo_only", "both")
EVAL_VIEWS = ("ego", "exo", "both")


@dataclass(frozen=True)
class ProbeReport:
    """Accuracy grid of the view-invariance test plus its chance level."""

    accuracies: dict  # accuracies[classifier][eval_view] -> float
    chance: float
    class_count: int
    classes: tuple[str, ...]
    n_train: int
    n_test: int

    def as_dict(self) -> dict:
        return {
            "accuracies": self.accuracies,
            "chance": self.chance,
            "class_count": self.class_count,
            "classes": list(self.classes),
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


def _fit_linear_svm(X: np.ndarray, y: np.ndarray, C: float, seed: int):
    classes = np.unique(y)
    if len(classes) == 1:
        only = classes[0]
        return lambda X_eval: np.full(len(X_eval), only)
    clf = LinearSVC(C=C, loss="hinge", max_iter=20000, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(X, y)
    return clf.predict


def fit_probe_grid(
    train_feats: dict[str, np.ndarray],
    train_labels: np.ndarray,
    test_feats: dict[str, np.ndarray],
    test_labels: np.ndarray,
    C: float = 1.0,
    standardize: bool = False,
    seed: int = 0,
) -> dict:
    """Fit the three classifiers and evaluate each on every test view.

    ``train_feats`` / ``test_feats`` map "ego" and "exo" to (N, D) feature
    matrices aligned with the label vectors. The pooled sets concatenate
    both views (labels duplicated); pooled accuracy is order-invariant.
    """
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)

    train_sets = {
        "ego": (train_feats["ego"], train_labels),
        "exo": (train_feats["exo"], train_labels),
        "both": (
            np.concatenate([train_feats["ego"], train_feats["exo"]]),
            np.concatenate([train_labels, train_labels]),
        ),
    }
    test_sets = {
        "ego": (test_feats["ego"], test_labels),
        "exo": (test_feats["exo"], test_labels),
        "both": (
            np.concatenate([test_feats["ego"], test_feats["exo"]]),
            np.concatenate([test_labels, test_labels]),
        ),
    }

    scalers = {}
    if standardize:
        for key, (X, _) in train_sets.items():
            scalers[key] = StandardScaler().fit(X)

    grid: dict = {}
    for clf_name, train_key in zip(CLASSIFIER_NAMES, ("ego", "exo", "both")):
        X_train, y_train = train_sets[train_key]
        if standardize:
            X_train = scalers[train_key].transform(X_train)
        predict = _fit_linear_svm(X_train, y_train, C, seed)
        grid[clf_name] = {}
        for view in EVAL_VIEWS:
            X_test, y_test = test_sets[view]
            if standardize:
                X_test = scalers[train_key].transform(X_test)
            grid[clf_name][view] = float(np.mean(predict(X_test) == y_test))
    return grid


def _extract_features(
    model: retrieval.TwoStreamModel,
    manifest: data.Manifest,
    split: str,
    variant: str,
    batch_size: int = 64,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    feats = {"ego": [], "exo": []}
    labels: list[str] = []
    for seq in manifest.split_sequences(split):
        if not seq.labels:
            raise MissingLabels(f"sequence {seq.id} has no action labels")
        n_t = seq.length if variant == "rgb" else seq.length - 1
        for view in ("ego", "exo"):
            inputs = [
                retrieval.load_input(
                    retrieval.SampleRef(seq.id, view, t, retrieval._input_path(seq, view, t, variant)),
                    variant,
                    model.cfg.input_size,
                )
                for t in range(n_t)
            ]
            for lo in range(0, len(inputs), batch_size):
                feats[view].append(
                    retrieval.encode_batch(model, view, inputs[lo : lo + batch_size])
                )
        labels.extend(seq.labels[:n_t])
    if not labels:
        raise DataEmpty(f"split {split!r} is empty")
    return (
        {view: np.concatenate(chunks) for view, chunks in feats.items()},
        np.asarray(labels),
    )


def view_invariance_test(
    model: retrieval.TwoStreamModel,
    manifest: data.Manifest,
    variant: str = "rgb",
    train_split: str = "train",
    test_split: str = "test",
    C: float = 1.0,
    standardize: bool = False,
    permute_labels: bool = False,
    seed: int = 0,
) -> ProbeReport:
    """Linear-probe action classification from frozen view embeddings.

    ``permute_labels`` shuffles the training labels before fitting, giving
    the chance-level null used for calibration.
    """
    if model.steps_trained == 0:
        raise UntrainedModel("the retrieval model has not been trained")
    train_feats, train_labels = _extract_features(model, manifest, train_split, variant)
    test_feats, test_labels = _extract_features(model, manifest, test_split, variant)
    if permute_labels:
        rng = np.random.default_rng(seed)
        train_labels = rng.permutation(train_labels)
    grid = fit_probe_grid(
        train_feats, train_labels, test_feats, test_labels,
        C=C, standardize=standardize, seed=seed,
    )
    classes = data.actions_for(manifest.modality)
    return ProbeReport(
        accuracies=grid,
        chance=1.0 / len(classes),
        class_count=len(classes),
        classes=classes,
        n_train=len(train_labels),
        n_test=len(test_labels),
    )


def synthesized_retrieval_test(
    synth_ckpt: str | Path,
    retr_model: retrieval.TwoStreamModel,
    manifest: data.Manifest,
    split: str = "test",
    synthesized_dir: Optional[str | Path] = None,
) -> tuple[CMCCurve, CMCCurve]:
    """Retrieve ground truth from synthesized ego images.

    Every exo frame of the split is pushed through the generator (unless a
    directory of pre-generated images is given); the synthesized image is
    encoded with the ego stream and its ground-truth exo and ego entries
    are ranked in per-sequence galleries. Returns the two CMC curves
    (versus F_exo, versus F_ego).
    """
    generator = None
    if synthesized_dir is None:
        generator, _, _ = synthesis.load_generator(synth_ckpt)

    size = retr_model.cfg.input_size
    results_exo = []
    results_ego = []
    for seq in manifest.split_sequences(split):
        sub = data.Manifest(manifest.modality, manifest.exo_kind, (seq,), root=manifest.root)
        gal_exo = retrieval.build_gallery(retr_model, sub, seq.split, "exo", "rgb")
        gal_ego = retrieval.build_gallery(retr_model, sub, seq.split, "ego", "rgb")

        queries = []
        for t in range(seq.length):
            if synthesized_dir is not None:
                path = Path(synthesized_dir) / seq.id / f"{t:06d}.png"
                if not path.is_file():
                    raise MissingFile(f"synthesized frame {path} does not exist")
                frame = data.load_frame(path)
            else:
                exo = data.resize_for_synthesis(data.load_frame(seq.frame_path("exo", t)))
                frame = synthesis.generate(generator, exo)
            queries.append(data.resize_frame(frame, (size, size)))
        q_embs = retrieval.encode_batch(retr_model, "ego", queries)

        for view, gal, results in (("exo", gal_exo, results_exo), ("ego", gal_ego, results_ego)):
            truth_ids = [retrieval.entry_id(seq.id, view, t) for t in range(seq.length)]
            truth_idx = np.array([gal.ids.index(tid) for tid in truth_ids])
            ranks = retrieval.rank_of_truth_many(q_embs, truth_idx, gal)
            results.extend(
                retrieval.RankingResult(tid, gal.kind, tuple(gal.ids), int(r))
                for tid, r in zip(truth_ids, ranks)
            )
    if not results_exo:
        raise DataEmpty(f"split {split!r} is empty")
    return cmc(results_exo), cmc(results_ego)
