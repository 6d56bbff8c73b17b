"""Adam with linear warmup, and an exponential moving average of parameters."""
import logging

import numpy as np

from .base_classes import ShapeError, SplitflowInputError

__all__ = ["Adam", "EMA"]
mod_logger = logging.getLogger(__name__)


class Adam(object):
    """Adam optimizer over a list of numpy parameter arrays.

    Parameters
    ----------
    shapes : sequence of tuple
        Shapes of the parameters, in the order gradients will be passed

    lr : float
        Peak learning rate
        Default: 1e-4

    warmup_steps : int
        Number of steps over which the learning rate ramps linearly from
        ``lr / warmup_steps`` to ``lr``
        Default: 1000

    betas : (float, float)
        Default: (0.9, 0.999)

    eps : float
        Default: 1e-8
    """

    def __init__(self, shapes, lr=1e-4, warmup_steps=1000, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise SplitflowInputError("lr must be positive.")
        if warmup_steps < 0:
            raise SplitflowInputError("warmup_steps must be nonnegative.")
        self.lr = float(lr)
        self.warmup_steps = int(warmup_steps)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.shapes = [tuple(s) for s in shapes]
        self.m = [np.zeros(s) for s in self.shapes]
        self.v = [np.zeros(s) for s in self.shapes]
        self.step_count = 0

    def learning_rate(self, step=None):
        """Learning rate used for 1-based ``step`` (next step by default).

        Examples
        --------
        >>> Adam([(1,)], lr=1.0, warmup_steps=4).learning_rate(2)
        0.5
        """
        step = self.step_count + 1 if step is None else step
        if self.warmup_steps and step < self.warmup_steps:
            return self.lr * step / self.warmup_steps
        return self.lr

    def step(self, params, grads):
        """Return updated copies of ``params`` given ``grads``."""
        if len(params) != len(self.shapes) or len(grads) != len(self.shapes):
            raise ShapeError("adam", (len(params),), (len(grads),), (len(self.shapes),))
        self.step_count += 1
        k = self.step_count
        lr = self.learning_rate(k)
        updated = []
        for i, (p, g) in enumerate(zip(params, grads)):
            if g.shape != self.shapes[i]:
                raise ShapeError("adam", g.shape, self.shapes[i])
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1 ** k)
            v_hat = self.v[i] / (1.0 - self.beta2 ** k)
            updated.append(p - lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return updated


class EMA(object):
    """Shadow copy of parameters, ``shadow <- decay * shadow + (1 - decay) * p``.

    Examples
    --------
    >>> ema = EMA([np.zeros(1)], decay=0.5)
    >>> ema.update([np.ones(1)])
    >>> ema.shadow[0].tolist()
    [0.5]
    """

    def __init__(self, params, decay=0.999):
        if not 0.0 <= decay < 1.0:
            raise SplitflowInputError("ema_decay must lie in [0, 1).")
        self.decay = float(decay)
        self.shadow = [np.array(p, dtype=np.float64, copy=True) for p in params]

    def update(self, params):
        self.shadow = [
            self.decay * s + (1.0 - self.decay) * np.asarray(p)
            for s, p in zip(self.shadow, params)
        ]
