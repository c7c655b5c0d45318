import numpy as np


class Adam:
    """Adaptive-moment optimizer, standard coefficients.

    When every parameter shares one dtype the optimizer repoints the
    parameters into a single flat buffer so ``step``/``zero_grad`` are a
    handful of vector operations instead of per-tensor loops. Layers keep
    working untouched: their Param.data/grad become views into the buffer.
    """

    def __init__(self, params, lr=2e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        dtypes = {p.data.dtype for p in self.params}
        self._flat = len(dtypes) == 1
        if self._flat:
            dtype = dtypes.pop()
            total = sum(p.data.size for p in self.params)
            self._data = np.empty(total, dtype=dtype)
            self._grad = np.zeros(total, dtype=dtype)
            offset = 0
            for p in self.params:
                n = p.data.size
                self._data[offset:offset + n] = p.data.reshape(-1)
                shape = p.data.shape
                p.data = self._data[offset:offset + n].reshape(shape)
                p.grad = self._grad[offset:offset + n].reshape(shape)
                offset += n
            self._m = np.zeros(total, dtype=dtype)
            self._v = np.zeros(total, dtype=dtype)
            self._scratch = np.empty(total, dtype=dtype)
        else:
            self._m = [np.zeros_like(p.data) for p in self.params]
            self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        if self._flat:
            g = self._grad
            s = self._scratch
            self._m *= b1
            np.multiply(g, 1.0 - b1, out=s)
            self._m += s
            self._v *= b2
            np.multiply(g, g, out=s)
            s *= 1.0 - b2
            self._v += s
            np.multiply(self._v, 1.0 / bc2, out=s)
            np.sqrt(s, out=s)
            s += self.eps
            np.divide(self._m, s, out=s)
            s *= self.lr / bc1
            self._data -= s
            return
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (self.lr * (m / bc1) /
                       (np.sqrt(v / bc2) + self.eps)).astype(p.data.dtype,
                                                             copy=False)

    def zero_grad(self):
        if self._flat:
            self._grad[...] = 0.0
            return
        for p in self.params:
            p.grad[...] = 0.0
