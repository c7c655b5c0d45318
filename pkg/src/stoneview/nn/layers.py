"""Minimal layer framework with explicit forward/backward passes.

Every layer is a pure function of (input, parameters) plus an explicit
cache written during a training-mode forward and consumed by ``backward``.
Parameter gradients accumulate into ``Param.grad``; ``backward`` returns the
gradient with respect to the layer input.
"""

import numpy as np

from . import kernels


class Param:
    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name=""):
        self.data = data
        self.grad = np.zeros_like(data)
        self.name = name

    @property
    def shape(self):
        return self.data.shape


def fan_in_uniform(rng, shape, fan_in, dtype):
    """Fan-in-scaled uniform init: U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", False)

    def __setattr__(self, name, value):
        if isinstance(value, Param):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    # -- tree walking -------------------------------------------------
    def modules(self):
        yield self
        for child in self._modules.values():
            yield from child.modules()

    def named_parameters(self, prefix=""):
        for name, p in self._parameters.items():
            yield (f"{prefix}{name}", p)
        for cname, child in self._modules.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield (f"{prefix}{name}", self._buffers[name])
        for cname, child in self._modules.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def train(self, flag=True):
        for m in self.modules():
            object.__setattr__(m, "training", flag)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0.0

    # -- state --------------------------------------------------------
    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[f"{name}"] = buf
        return state

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        missing = []
        for name, p in own.items():
            if name not in state:
                missing.append(name)
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}"
                )
            p.data = arr.astype(p.data.dtype).copy()
            p.grad = np.zeros_like(p.data)
        for name, buf in self.named_buffers():
            if name in state:
                self._assign_buffer(name, np.asarray(state[name]).astype(buf.dtype))
            elif strict:
                missing.append(name)
        if strict and missing:
            raise KeyError(f"missing state entries: {missing}")

    def _assign_buffer(self, dotted, value):
        parts = dotted.split(".")
        mod = self
        for part in parts[:-1]:
            mod = mod._modules[part]
        mod._buffers[parts[-1]][...] = value

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._items = []
        for it in items:
            self.append(it)

    def append(self, module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = ModuleList(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def backward(self, dout):
        for layer in reversed(list(self.layers)):
            dout = layer.backward(dout)
        return dout


class Identity(Module):
    def forward(self, x):
        return x

    def backward(self, dout):
        return dout


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k, stride=1, pad=None, bias=True,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        fan_in = in_ch * k * k
        rng = rng or np.random.default_rng(0)
        self.weight = Param(fan_in_uniform(rng, (out_ch, in_ch, k, k), fan_in, dtype))
        self.bias = Param(np.zeros(out_ch, dtype=dtype)) if bias else None
        self._cache = None

    def forward(self, x):
        b, c, h, w = x.shape
        cols = kernels.im2col(x, self.k, self.k, self.stride, self.pad)
        w_mat = self.weight.data.reshape(self.out_ch, -1)
        y = cols @ w_mat.T
        if self.bias is not None:
            y += self.bias.data
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        y = y.reshape(b, oh, ow, self.out_ch).transpose(0, 3, 1, 2)
        if self.training:
            self._cache = (cols, x.shape)
        return np.ascontiguousarray(y)

    def backward(self, dout):
        cols, x_shape = self._cache
        b, cout, oh, ow = dout.shape
        dy = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
        w_mat = self.weight.data.reshape(cout, -1)
        self.weight.grad += (dy.T @ cols).reshape(self.weight.data.shape)
        if self.bias is not None:
            self.bias.grad += dy.sum(axis=0)
        dcols = dy @ w_mat
        return kernels.col2im(dcols, x_shape, self.k, self.k, self.stride, self.pad)


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None,
                 dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = Param(
            fan_in_uniform(rng, (out_features, in_features), in_features, dtype)
        )
        self.bias = Param(np.zeros(out_features, dtype=dtype)) if bias else None
        self._cache = None

    def forward(self, x):
        if self.training:
            self._cache = x
        y = x @ self.weight.data.T
        if self.bias is not None:
            y += self.bias.data
        return y

    def backward(self, dout):
        x = self._cache
        self.weight.grad += dout.T @ x
        if self.bias is not None:
            self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.data


class BatchNorm(Module):
    """Batch normalization over all axes except the channel axis.

    ``spatial=True`` expects (B, C, H, W); otherwise (B, C). Training mode
    normalizes with batch statistics and tracks running statistics for
    inference mode.
    """

    def __init__(self, num_features, spatial, eps=1e-5, momentum=0.1,
                 dtype=np.float32):
        super().__init__()
        self.spatial = spatial
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(np.ones(num_features, dtype=dtype))
        self.beta = Param(np.zeros(num_features, dtype=dtype))
        self._buffers["running_mean"] = np.zeros(num_features, dtype=dtype)
        self._buffers["running_var"] = np.ones(num_features, dtype=dtype)
        self._cache = None

    def _shape(self, v):
        return v.reshape(1, -1, 1, 1) if self.spatial else v.reshape(1, -1)

    def _per_channel(self, x):
        """(C, N) contiguous view-copy for fast row reductions."""
        if self.spatial:
            return np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(
                x.shape[1], -1
            )
        return np.ascontiguousarray(x.T)

    def forward(self, x):
        if self.training:
            flat = self._per_channel(x)
            n = flat.shape[1]
            mean = flat.mean(axis=1)
            sq = np.einsum("ij,ij->i", flat, flat) / n
            var = np.maximum(sq - mean * mean, 0.0)
            rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
            rm *= 1.0 - self.momentum
            rm += self.momentum * mean
            unbiased = var * (n / max(n - 1, 1))
            rv *= 1.0 - self.momentum
            rv += self.momentum * unbiased
        else:
            mean = self._buffers["running_mean"]
            var = self._buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = x - self._shape(mean)
        xhat *= self._shape(inv_std)
        if self.training:
            self._cache = (xhat, inv_std)
        return self._shape(self.gamma.data) * xhat + self._shape(self.beta.data)

    def backward(self, dout):
        xhat, inv_std = self._cache
        n = dout.size // dout.shape[1]
        flat_d = self._per_channel(dout)
        flat_x = self._per_channel(xhat)
        dbeta = flat_d.sum(axis=1)
        dgamma = np.einsum("ij,ij->i", flat_d, flat_x)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        # dx = inv_std*gamma * (dout - dbeta/n - xhat*dgamma/n): the batch
        # means of dxhat and dxhat*xhat reduce to the parameter grads
        dx = dout - self._shape(dbeta / n)
        dx -= xhat * self._shape(dgamma / n)
        dx *= self._shape(inv_std * self.gamma.data)
        return dx.astype(dout.dtype, copy=False)


class ReLU(Module):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x):
        if self.training:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._mask


class Sigmoid(Module):
    def __init__(self):
        super().__init__()
        self._out = None

    def forward(self, x):
        out = sigmoid(x)
        if self.training:
            self._out = out
        return out

    def backward(self, dout):
        return dout * self._out * (1.0 - self._out)


class Dropout(Module):
    """Inverted dropout; active only in training mode.

    The mask generator must be seeded through ``seed_dropout`` before any
    training-mode forward so runs are reproducible.
    """

    def __init__(self, p):
        super().__init__()
        self.p = p
        self._rng = None
        self._mask = None

    def forward(self, x):
        if not self.training or self.p == 0.0:
            self._mask = None
            return x
        if self._rng is None:
            raise RuntimeError("Dropout used in training mode without seed_dropout()")
        keep = 1.0 - self.p
        self._mask = (self._rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask


class GlobalAvgPool2d(Module):
    def __init__(self):
        super().__init__()
        self._hw = None

    def forward(self, x):
        self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        h, w = self._hw
        scale = 1.0 / (h * w)
        return np.broadcast_to(
            (dout * scale)[:, :, None, None], dout.shape + (h, w)
        ).astype(dout.dtype, copy=True)


class MaxPool2d(Module):
    def __init__(self, k, stride, pad=0):
        super().__init__()
        self.k, self.stride, self.pad = k, stride, pad
        self._cache = None

    def forward(self, x):
        y, idx = kernels.maxpool2d_forward(x, self.k, self.stride, self.pad)
        if self.training:
            self._cache = (idx, x.shape)
        return y

    def backward(self, dout):
        idx, x_shape = self._cache
        return kernels.maxpool2d_backward(dout, idx, x_shape, self.k,
                                          self.stride, self.pad)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def seed_dropout(model, seed):
    """Give every Dropout in the tree its own deterministic generator."""
    ss = np.random.SeedSequence([int(seed), 0xD0])
    drops = [m for m in model.modules() if isinstance(m, Dropout)]
    for m, child in zip(drops, ss.spawn(max(len(drops), 1))):
        m._rng = np.random.default_rng(child)
