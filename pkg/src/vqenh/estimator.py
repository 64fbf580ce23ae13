"""sklearn-style estimator facade.

``VideoEnhancer`` wraps model construction, adversarial training and
sliding-window inference behind the familiar fit/transform/predict
surface so the enhancer composes with pipelines and parameter search.
"""

from __future__ import annotations

from typing import Optional, Sequence

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .checkpoint import load_checkpoint, save_checkpoint
from .core import ModelConfig, TrainConfig
from .data import samples_from_arrays
from .pipeline import build_generator, enhance_sequence
from .train import resolve_eval_qp, train
from .validation import as_frame_sequence, frames_to_array

__all__ = ["VideoEnhancer"]


class VideoEnhancer(BaseEstimator):
    """QP-adaptive compressed-video enhancer.

    fit(X) expects an iterable of (compressed, raw, qp) clip triples,
    where the frame stacks are T x H x W arrays (uint8 or [0, 1] floats)
    or Frame sequences. transform(X) takes (frames, qp) pairs and
    returns the enhanced T x H x W float arrays; predict is an alias.
    """

    def __init__(self, qp_vocabulary=(22, 27, 32, 37), ablation: str = "I",
                 backbone: str = "test-stub", backbone_weights: Optional[str] = None,
                 attention_downsample_factor: int = 1,
                 alpha: float = 10.0, beta: float = 10.0,
                 steps: int = 100, batch_size: int = 8,
                 learning_rate: float = 1e-4, crop_size: int = 128,
                 tile_size: Optional[int] = None, seed: int = 1234):
        self.qp_vocabulary = qp_vocabulary
        self.ablation = ablation
        self.backbone = backbone
        self.backbone_weights = backbone_weights
        self.attention_downsample_factor = attention_downsample_factor
        self.alpha = alpha
        self.beta = beta
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.crop_size = crop_size
        self.tile_size = tile_size
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        from .core import AblationMask

        return ModelConfig(
            qp_vocabulary=tuple(self.qp_vocabulary),
            ablation_mask=AblationMask.table_row(self.ablation),
            backbone=self.backbone,
            backbone_weights=self.backbone_weights,
            attention_downsample_factor=self.attention_downsample_factor,
            loss_weights=(self.alpha, self.beta),
            tile_size=self.tile_size,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        """Train on (compressed, raw, qp) clip triples. Returns self."""
        config = self._model_config()
        samples = samples_from_arrays(
            list(X), crop_size=self.crop_size,
            qp_vocabulary=config.qp_vocabulary, seed=self.seed,
        )
        generator = build_generator(config)
        result = train(
            generator, samples,
            TrainConfig(learning_rate=self.learning_rate,
                        batch_size=self.batch_size, steps=self.steps,
                        checkpoint_every=max(self.steps, 1)),
        )
        self.generator_ = generator
        self.n_steps_ = result.steps
        self.n_samples_ = len(samples)
        return self

    def _check_fitted(self):
        if not hasattr(self, "generator_"):
            raise NotFittedError("this VideoEnhancer is not fitted yet; call fit first")

    def transform(self, X):
        """Enhance (frames, qp) pairs; returns a list of T x H x W arrays."""
        self._check_fitted()
        if isinstance(X, tuple) and len(X) == 2 and isinstance(X[1], (int, float)):
            X = [X]
        out = []
        vocab = self.generator_.config.qp_vocabulary
        for frames, qp in X:
            code = resolve_eval_qp(int(qp), vocab)
            enhanced = enhance_sequence(as_frame_sequence(frames), code,
                                        self.generator_, tile_size=self.tile_size)
            out.append(frames_to_array(enhanced))
        return out

    def predict(self, X):
        return self.transform(X)

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(path, self.generator_, meta={"steps": getattr(self, "n_steps_", 0)})

    @classmethod
    def from_checkpoint(cls, path) -> "VideoEnhancer":
        generator, _, meta = load_checkpoint(path)
        config = generator.config
        est = cls(
            qp_vocabulary=config.qp_vocabulary,
            backbone=config.backbone,
            backbone_weights=config.backbone_weights,
            attention_downsample_factor=config.attention_downsample_factor,
            alpha=config.alpha, beta=config.beta,
            tile_size=config.tile_size, seed=config.seed,
        )
        est.generator_ = generator
        est.n_steps_ = meta.get("steps", 0)
        return est
