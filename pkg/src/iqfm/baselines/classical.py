"""Width-matched classical network: h_0 = W_0 x, h_l = tanh(W_l h_{l-1})."""
import numpy as np

from ..errors import DimensionError
from ..learn import TANH_ACT, FeatureSource, rotate_image
from ..qfm import Representation, glorot


def init_classical(rng, M, L, n_pixels=784):
    """W_0 (M x n_pixels, frozen) and W_1..W_L (M x M), Glorot uniform."""
    return [glorot(rng, M, n_pixels)] + [glorot(rng, M, M) for _ in range(L)]


def classical_baseline_forward(widths, weights, x):
    """Representation (h_1..h_L) for rows of ``x``.

    ``widths`` is [n_in, M, ..., M]; ``weights[0]`` is the projection W_0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if len(weights) != len(widths) - 1:
        raise DimensionError("need one weight matrix per width step")
    for w, (a, b) in zip(weights, zip(widths[:-1], widths[1:])):
        if w.shape != (b, a):
            raise DimensionError(f"weight of shape {w.shape} does not map {a} -> {b}")
    h = x @ weights[0].T
    hs = []
    for w in weights[1:]:
        h = np.tanh(h @ w.T)
        hs.append(h)
    return Representation(hs)


class ClassicalSource(FeatureSource):
    """Contrastive-training adapter: the 'features' of layer l are h_{l-1}."""

    act = TANH_ACT
    image_keys = True

    def __init__(self, weights, images):
        super().__init__(weights[1:])
        self.W0 = weights[0]
        self.images = images

    def _h0(self, keys):
        rows = [rotate_image(self.images[i]) if rot else self.images[i] for i, rot in keys]
        return np.stack(rows) @ self.W0.T

    def _layer_features(self, l, keys, h_prev):
        return h_prev
