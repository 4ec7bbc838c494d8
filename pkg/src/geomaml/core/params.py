"""Named, ordered parameter collections."""
from collections.abc import Mapping

import numpy as np

from .tensor import Tensor, as_tensor, sub, mul


class ParamSet(Mapping):
    """Ordered ``name -> Tensor`` mapping; the order is fixed at construction.

    Arithmetic helpers (``map``, ``zip_map``, ``sub_scaled``) build new sets and keep the order,
    so an adapted set always lines up entry-by-entry with its source.
    """

    def __init__(self, entries):
        if isinstance(entries, Mapping):
            entries = list(entries.items())
        names = [n for n, _ in entries]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate parameter names: {dup}")
        self._entries = [(str(n), as_tensor(t)) for n, t in entries]
        self._index = {n: i for i, (n, _) in enumerate(self._entries)}

    def __getitem__(self, name):
        return self._entries[self._index[name]][1]

    def __iter__(self):
        return (n for n, _ in self._entries)

    def __len__(self):
        return len(self._entries)

    def __repr__(self):
        inner = ", ".join(f"{n}: {t.shape}" for n, t in self._entries)
        return f"ParamSet({inner})"

    @property
    def names(self):
        return [n for n, _ in self._entries]

    @property
    def tensors(self):
        return [t for _, t in self._entries]

    @property
    def numel(self):
        return sum(t.size for _, t in self._entries)

    def map(self, fn):
        return ParamSet([(n, fn(t)) for n, t in self._entries])

    def zip_map(self, other, fn):
        self._check_aligned(other)
        return ParamSet([(n, fn(t, other[n])) for n, t in self._entries])

    def _check_aligned(self, other):
        if self.names != list(other.keys()):
            raise ValueError("parameter sets have different entries or order")

    def detach(self):
        return self.map(lambda t: t.detach())

    def clone(self, requires_grad=False):
        """Deep copy as fresh leaves."""
        return self.map(lambda t: Tensor(t.data.copy(), requires_grad=requires_grad))

    def requires_grad_(self):
        """Fresh leaves that record gradients (the set itself is not modified)."""
        return self.clone(requires_grad=True)

    def sub_scaled(self, other, alpha):
        """``self - alpha * other`` entry-wise, differentiable."""
        return self.zip_map(other, lambda a, b: sub(a, mul(b, float(alpha))))

    def flatten(self):
        """Concatenate all entries (fixed order) into one float64 vector."""
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([t.data.reshape(-1) for _, t in self._entries])

    def unflatten(self, vector):
        """Inverse of :meth:`flatten`, shaped like this set."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.numel,):
            raise ValueError(f"vector of length {vector.size} does not match {self.numel} parameters")
        out, pos = [], 0
        for n, t in self._entries:
            out.append((n, Tensor(vector[pos:pos + t.size].reshape(t.shape).copy())))
            pos += t.size
        return ParamSet(out)

    def norm(self):
        return float(np.linalg.norm(self.flatten()))


def flatten_params(params):
    return params.flatten()


def unflatten_params(like, vector):
    return like.unflatten(vector)
