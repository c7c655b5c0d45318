"""CBAM-style attention: channel gating followed by spatial gating.

The channel gate squeezes the feature map into global average and global max
descriptors, runs both through a shared bottleneck MLP (reduce -> ReLU ->
expand, no hidden bias), sums them with a learnable gate bias, and applies a
sigmoid. The spatial gate stacks the channel-wise mean and max maps, runs a
same-padded k x k convolution (k odd) plus a scalar bias, and applies a
sigmoid. A CbamBlock multiplies the input by the channel gate, then the
result by the spatial gate, so output magnitudes never exceed the input's.
"""

import numpy as np

from .nn import Conv2d, Module, Param, fan_in_uniform, sigmoid


class ChannelAttention(Module):
    def __init__(self, channels, reduction=16, rng=None, dtype=np.float32):
        super().__init__()
        if channels % reduction != 0:
            raise ValueError(
                f"reduction {reduction} must divide channel count {channels}"
            )
        rng = rng or np.random.default_rng(0)
        hidden = channels // reduction
        self.channels = channels
        self.reduction = reduction
        self.reduce = Param(fan_in_uniform(rng, (hidden, channels), channels, dtype))
        self.expand = Param(fan_in_uniform(rng, (channels, hidden), hidden, dtype))
        self.gate_bias = Param(np.zeros(channels, dtype=dtype))
        self._cache = None

    def _descriptors(self, f):
        b, c, h, w = f.shape
        flat = f.reshape(b, c, h * w)
        s_avg = flat.mean(axis=2)
        argmax = flat.argmax(axis=2)
        s_max = np.take_along_axis(flat, argmax[:, :, None], axis=2)[:, :, 0]
        return s_avg, s_max, argmax

    def gate(self, f):
        """Per-channel gate in (0, 1), shape (B, C)."""
        if f.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {f.shape[1]}")
        s_avg, s_max, argmax = self._descriptors(f)
        pre_avg = s_avg @ self.reduce.data.T
        pre_max = s_max @ self.reduce.data.T
        h_avg = np.maximum(pre_avg, 0)
        h_max = np.maximum(pre_max, 0)
        z = (h_avg + h_max) @ self.expand.data.T + self.gate_bias.data
        g = sigmoid(z)
        if self.training:
            self._cache = (f.shape, s_avg, s_max, argmax, pre_avg, pre_max,
                           h_avg, h_max, g)
        return g

    def backward_gate(self, dgate):
        """Gradient of the gate path; returns dF for the gate's input."""
        f_shape, s_avg, s_max, argmax, pre_avg, pre_max, h_avg, h_max, g = self._cache
        b, c, h, w = f_shape
        dz = dgate * g * (1.0 - g)
        self.gate_bias.grad += dz.sum(axis=0)
        self.expand.grad += dz.T @ (h_avg + h_max)
        dh = dz @ self.expand.data
        dpre_avg = dh * (pre_avg > 0)
        dpre_max = dh * (pre_max > 0)
        self.reduce.grad += dpre_avg.T @ s_avg + dpre_max.T @ s_max
        ds_avg = dpre_avg @ self.reduce.data
        ds_max = dpre_max @ self.reduce.data
        df = np.broadcast_to(
            (ds_avg / (h * w))[:, :, None], (b, c, h * w)
        ).astype(dgate.dtype, copy=True)
        np.put_along_axis(
            df, argmax[:, :, None],
            np.take_along_axis(df, argmax[:, :, None], axis=2) + ds_max[:, :, None],
            axis=2,
        )
        return df.reshape(f_shape)

    forward = gate


class SpatialAttention(Module):
    def __init__(self, kernel_size=7, rng=None, dtype=np.float32):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError(f"spatial kernel size must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.conv = Conv2d(2, 1, kernel_size, stride=1, pad=kernel_size // 2,
                           bias=True, rng=rng or np.random.default_rng(0),
                           dtype=dtype)
        self._cache = None

    def gate(self, f):
        """Per-location gate in (0, 1), shape (B, 1, H, W)."""
        m_avg = f.mean(axis=1, keepdims=True)
        argmax = f.argmax(axis=1)[:, None, :, :]
        m_max = np.take_along_axis(f, argmax, axis=1)
        u = np.concatenate([m_avg, m_max], axis=1)
        v = self.conv(u)
        g = sigmoid(v)
        if self.training:
            self._cache = (f.shape, argmax, g)
        return g

    def backward_gate(self, dgate):
        f_shape, argmax, g = self._cache
        c = f_shape[1]
        dv = dgate * g * (1.0 - g)
        du = self.conv.backward(dv)
        df = np.broadcast_to(du[:, 0:1] / c, f_shape).astype(dgate.dtype, copy=True)
        np.put_along_axis(
            df, argmax,
            np.take_along_axis(df, argmax, axis=1) + du[:, 1:2],
            axis=1,
        )
        return df

    forward = gate


class CbamBlock(Module):
    """Channel gate then spatial gate, both multiplicative, shape-preserving."""

    def __init__(self, channels, reduction=16, kernel_size=7, rng=None,
                 dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.channel = ChannelAttention(channels, reduction, rng=rng, dtype=dtype)
        self.spatial = SpatialAttention(kernel_size, rng=rng, dtype=dtype)
        self._cache = None

    def forward(self, f):
        g_c = self.channel.gate(f)
        f1 = f * g_c[:, :, None, None]
        g_s = self.spatial.gate(f1)
        out = f1 * g_s
        if self.training:
            self._cache = (f, g_c, f1, g_s)
        return out

    def backward(self, dout):
        f, g_c, f1, g_s = self._cache
        df1 = dout * g_s
        dg_s = (dout * f1).sum(axis=1, keepdims=True)
        df1 = df1 + self.spatial.backward_gate(dg_s)
        df = df1 * g_c[:, :, None, None]
        dg_c = (df1 * f).sum(axis=(2, 3))
        df = df + self.channel.backward_gate(dg_c)
        return df


def channel_attention(f, params):
    """Functional view of the channel gate: (B,C,H,W) -> (B,C) in (0,1)."""
    return params.gate(f)


def spatial_attention(f, params):
    """Functional view of the spatial gate: (B,C,H,W) -> (B,1,H,W) in (0,1)."""
    return params.gate(f)


def cbam_forward(f, block):
    """Apply channel-then-spatial gating; preserves the input shape."""
    return block.forward(f)


def set_gate_biases(model, value):
    """Push every attention gate bias in the tree to ``value``.

    Large positive values saturate all sigmoids toward 1, turning every
    CBAM block into (approximately) the identity.
    """
    for m in model.modules():
        if isinstance(m, ChannelAttention):
            m.gate_bias.data[...] = value
        elif isinstance(m, SpatialAttention):
            m.conv.bias.data[...] = value
