"""Toy distributions with exact samplers.

=================  ====  =======  ==============================================
kind               dim   classes  construction
=================  ====  =======  ==============================================
gauss_mixture_8    2     8        ring of 8 Gaussians, radius 2, sigma 0.1
two_moons          2     2        sklearn ``make_moons`` with gaussian ``noise``
checkerboard       2     8        uniform on the 8 dark cells of a 4x4 board
                                  covering [-2, 2]^2
one_d_bimodal      1     2        equal mixture of N(-1, 0.2^2) and N(1, 0.2^2)
=================  ====  =======  ==============================================

Monte-Carlo tolerances used by the tests (n = 1e5 draws, 3 sigma):
gauss_mixture_8 mean norm 2.0 +/- 0.05 and one_d_bimodal mean 0 +/- 0.01.
"""
import logging
import os

import numpy as np
from sklearn.datasets import make_moons

from .base_classes import SplitflowInputError

__all__ = ["ToyDataset", "DATASET_KINDS", "export"]
mod_logger = logging.getLogger(__name__)

DATASET_KINDS = {
    "gauss_mixture_8": (2, 8),
    "two_moons": (2, 2),
    "checkerboard": (2, 8),
    "one_d_bimodal": (1, 2),
}

RING_RADIUS = 2.0
RING_SIGMA = 0.1
BIMODAL_CENTER = 1.0
BIMODAL_SIGMA = 0.2
BOARD_SIZE = 4
BOARD_HALF_WIDTH = 2.0


def _dark_cells():
    cells = [
        (i, j) for i in range(BOARD_SIZE) for j in range(BOARD_SIZE) if (i + j) % 2 == 0
    ]
    return np.array(cells, dtype=np.float64)


class ToyDataset(object):
    """Low-dimensional distribution with an exact sampler.

    Parameters
    ----------
    kind : str
        One of 'gauss_mixture_8', 'two_moons', 'checkerboard',
        'one_d_bimodal'

    labeled : bool
        If True, ``sample_batch`` returns the mixture component (or cell,
        or moon) of each point as its class id
        Default: False

    noise : float
        Noise level of 'two_moons'
        Default: 0.05
    """

    def __init__(self, kind="gauss_mixture_8", labeled=False, noise=0.05):
        if kind not in DATASET_KINDS:
            raise SplitflowInputError(
                "dataset kind must be one of {k!r}, got {g!r}".format(
                    k=sorted(DATASET_KINDS), g=kind
                )
            )
        if noise < 0:
            raise SplitflowInputError("noise must be nonnegative.")
        self._kind = kind
        self._labeled = bool(labeled)
        self._noise = float(noise)

    @property
    def kind(self):
        return self._kind

    @property
    def labeled(self):
        return self._labeled

    @property
    def noise(self):
        return self._noise

    @property
    def dim(self):
        return DATASET_KINDS[self._kind][0]

    @property
    def num_classes(self):
        """Number of mixture components available as labels"""
        return DATASET_KINDS[self._kind][1]

    def sample_batch(self, n, rng):
        """Draw ``n`` i.i.d. points.

        Parameters
        ----------
        n : int
            Number of draws, at least 1

        rng : numpy.random.Generator

        Returns
        -------
        points : numpy.ndarray of shape (n, dim)

        labels : numpy.ndarray of int of shape (n,) or None
            Present iff the dataset is labeled

        Examples
        --------
        >>> ds = ToyDataset("one_d_bimodal", labeled=True)
        >>> x, y = ds.sample_batch(3, np.random.default_rng(0))
        >>> x.shape, y.shape
        ((3, 1), (3,))
        """
        if int(n) != n or n < 1:
            raise SplitflowInputError("n must be a positive integer.")
        n = int(n)
        sampler = getattr(self, "_sample_" + self._kind)
        points, labels = sampler(n, rng)
        return points, (labels.astype(np.int64) if self._labeled else None)

    def _sample_gauss_mixture_8(self, n, rng):
        labels = rng.integers(0, 8, size=n)
        angles = 2.0 * np.pi * labels / 8.0
        centers = RING_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return centers + RING_SIGMA * rng.standard_normal((n, 2)), labels

    def _sample_two_moons(self, n, rng):
        # make_moons splits n between the moons and orders by moon, so shuffle
        points, labels = make_moons(
            n_samples=n, noise=self._noise, random_state=int(rng.integers(2 ** 31))
        )
        order = rng.permutation(n)
        return points[order].astype(np.float64), labels[order]

    def _sample_checkerboard(self, n, rng):
        cells = _dark_cells()
        labels = rng.integers(0, len(cells), size=n)
        width = 2.0 * BOARD_HALF_WIDTH / BOARD_SIZE
        corner = -BOARD_HALF_WIDTH + width * cells[labels]
        return corner + width * rng.random((n, 2)), labels

    def _sample_one_d_bimodal(self, n, rng):
        labels = rng.integers(0, 2, size=n)
        centers = np.where(labels == 0, -BIMODAL_CENTER, BIMODAL_CENTER)
        points = centers + BIMODAL_SIGMA * rng.standard_normal(n)
        return points[:, None], labels

    @property
    def description(self):
        return {"kind": self.kind, "labeled": self.labeled, "noise": self.noise}

    def __repr__(self):
        return "ToyDataset({k!r}, labeled={l!r}, noise={n!r})".format(
            k=self.kind, l=self.labeled, n=self.noise
        )


def export(dataset, n, rng, path):
    """Write ``n`` draws of ``dataset`` to a CSV file.

    Columns are ``x0 .. x{dim-1}`` followed by ``label`` for labeled
    datasets.

    Returns
    -------
    str
        The path written
    """
    points, labels = dataset.sample_batch(n, rng)
    header = ["x{i:d}".format(i=i) for i in range(dataset.dim)]
    columns = [points]
    fmt = ["%.17g"] * dataset.dim
    if labels is not None:
        header.append("label")
        columns.append(labels[:, None])
        fmt.append("%d")
    path = os.path.abspath(path)
    np.savetxt(
        path, np.hstack(columns), delimiter=",", header=",".join(header), comments="", fmt=fmt
    )
    mod_logger.info(
        "Exported {n:d} points of {kind:s} to {path:s}".format(
            n=n, kind=dataset.kind, path=path
        )
    )
    return path
