import numpy as np


def sgd_step(params, grads, lr, momentum=0.0, buffers=None):
    """One momentum-SGD update, in place.

    ``v <- momentum * v + g`` then ``p <- p - lr * v``.  ``params``, ``grads``
    and ``buffers`` are parallel lists of arrays; buffers are created when
    ``None`` and returned.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if buffers is None:
        buffers = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, buffers):
        g = np.asarray(g, dtype=float)
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
        v *= momentum
        v += g
        p -= lr * v
    return params, buffers


class SGD:
    """Momentum SGD over autograd leaf tensors, with optional global-norm clipping."""

    def __init__(self, params, lr=1e-3, momentum=0.9, clip_norm=None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.buffers = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.clip_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        sgd_step([p.data for p in self.params], grads, self.lr, self.momentum, self.buffers)
