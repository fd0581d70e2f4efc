"""scikit-learn style wrapper: fit trains, transform compresses, inverse_transform decodes."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .codec import decode_container, encode_array
from .container import Container
from .metrics import psnr
from .model import HYPER_SCHEMES, ModelConfig, OctaveCodecNet, load_model, save_model
from .train import TrainConfig, patches_from_arrays, train_all


def check_image(img, min_dim: int = 8) -> np.ndarray:
    """Validate one RGB image and return it as a C-contiguous (H, W, 3) uint8 array."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() > 255:
            raise ValueError("image values must be integers in [0, 255]")
        arr = arr.astype(np.uint8)
    if min(arr.shape[:2]) < min_dim:
        raise ValueError(f"image {arr.shape[1]}x{arr.shape[0]} is smaller than {min_dim}x{min_dim}")
    return np.ascontiguousarray(arr)


def check_images(images, min_dim: int = 8) -> list[np.ndarray]:
    """Accept one image, a 4-D batch, or a sequence of images of any sizes."""
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    out = [check_image(im, min_dim) for im in images]
    if not out:
        raise ValueError("no images given")
    return out


class OctaveImageCodec(TransformerMixin, BaseEstimator):
    """Learned multi-resolution image codec with an estimator interface.

    ``fit`` runs the three training stages on random patches of the given
    images, ``transform`` returns one serialized container per image and
    ``inverse_transform`` decodes them back to uint8 images.
    """

    def __init__(
        self,
        N=32,
        lam=0.01,
        hyper_scheme="scheme2",
        lambda1=1.0,
        lambda2=1.0,
        metric="mse",
        iterations=1000,
        batch_size=8,
        patch_size=64,
        n_patches=256,
        lr=1e-3,
        use_fidelity=True,
        seed=0,
    ):
        self.N = N
        self.lam = lam
        self.hyper_scheme = hyper_scheme
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.metric = metric
        self.iterations = iterations
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.n_patches = n_patches
        self.lr = lr
        self.use_fidelity = use_fidelity
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        if self.hyper_scheme not in HYPER_SCHEMES:
            raise ValueError(f"hyper_scheme must be one of {sorted(HYPER_SCHEMES)}")
        return ModelConfig(
            N=self.N,
            lam=self.lam,
            hyper_scheme=self.hyper_scheme,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            metric=self.metric,
            seed=self.seed,
        )

    def fit(self, X, y=None, log_dir=None):
        images = check_images(X, min_dim=self.patch_size)
        patches = patches_from_arrays(images, self.patch_size, self.n_patches, self.seed)
        model = OctaveCodecNet(self._model_config())
        tc = TrainConfig(1, max(3, self.iterations), self.batch_size, self.patch_size, self.lr, self.seed)
        self.history_ = train_all(model, tc.iterations, tc, patches, log_dir, self.use_fidelity)
        self.model_ = model
        return self

    def transform(self, X) -> list[bytes]:
        check_is_fitted(self, "model_")
        return [encode_array(self.model_, im).container.serialize() for im in check_images(X)]

    def inverse_transform(self, blobs) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        if isinstance(blobs, (bytes, bytearray)):
            blobs = [blobs]
        return [decode_container(self.model_, Container.parse(bytes(b)))[0] for b in blobs]

    def predict(self, X) -> list[np.ndarray]:
        """Reconstructions after a full encode/decode pass."""
        return self.inverse_transform(self.transform(X))

    def score(self, X, y=None) -> float:
        """Mean PSNR (dB) of the reconstructions."""
        images = check_images(X)
        return float(np.mean([psnr(a, b) for a, b in zip(images, self.predict(images))]))

    def bits_per_pixel(self, X) -> list[float]:
        images = check_images(X)
        return [8 * len(b) / (im.shape[0] * im.shape[1]) for b, im in zip(self.transform(images), images)]

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_model(path, self.model_)

    @classmethod
    def from_checkpoint(cls, path) -> "OctaveImageCodec":
        model = load_model(path)
        c = model.config
        est = cls(N=c.N, lam=c.lam, hyper_scheme=c.hyper_scheme, lambda1=c.lambda1, lambda2=c.lambda2, metric=c.metric, seed=c.seed)
        est.model_ = model
        return est
