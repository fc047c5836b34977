"""Bidirectional multi-scale sub-band dilated convolution.

The feature dimension is partitioned into contiguous bands. A rightward pass
convolves each band's input concatenated with the previous band's output, so
the temporal receptive field grows band by band; a leftward pass runs over
the rightward results in the opposite order to balance the bands. Each
sub-band convolution is followed by BN, ReLU and dropout, and the two
directional results are concatenated to full width and summed elementwise.
"""

import numpy as np

from .nn import ConvBlock, add_op, concat_op, split_op


def partition_bands(dim: int, m: int):
    """Split `dim` into m contiguous bands as (offset, width) pairs.

    The first dim % m bands get one extra element, so widths differ by at
    most one and the result is deterministic.
    """
    if m < 1:
        raise ValueError(f"band count must be >= 1, got {m}")
    if m > dim:
        raise ValueError(f"cannot split {dim} dims into {m} bands")
    base, rem = divmod(dim, m)
    widths = [base + 1] * rem + [base] * (m - rem)
    parts = []
    offset = 0
    for w in widths:
        parts.append((offset, w))
        offset += w
    return parts


class MultiScaleConv:
    """Multi-scale sub-band layer mapping (T, in_dim) to (T, out_dim)."""

    def __init__(self, name, in_dim, out_dim, bands, kernel, dilation, dropout, rng, dtype):
        self.name = name
        self.in_dim, self.out_dim = in_dim, out_dim
        self.bands = bands
        self.kernel, self.dilation = kernel, dilation
        self.in_parts = partition_bands(in_dim, bands)
        self.out_parts = partition_bands(out_dim, bands)
        self.right = []
        self.left = []
        for b in range(bands):
            prev_w = self.out_parts[b - 1][1] if b > 0 else 0
            self.right.append(
                ConvBlock(
                    f"{name}.r{b}",
                    prev_w + self.in_parts[b][1],
                    self.out_parts[b][1],
                    kernel,
                    dilation,
                    dropout,
                    rng,
                    dtype,
                )
            )
        for b in range(bands):
            next_w = self.out_parts[b + 1][1] if b < bands - 1 else 0
            self.left.append(
                ConvBlock(
                    f"{name}.l{b}",
                    next_w + self.out_parts[b][1],
                    self.out_parts[b][1],
                    kernel,
                    dilation,
                    dropout,
                    rng,
                    dtype,
                )
            )

    def forward(self, tape, x, ctx):
        if x.value.shape[1] != self.in_dim:
            raise ValueError(
                f"multiscale layer expects {self.in_dim} inputs, got {x.value.shape[1]}"
            )
        xs = split_op(tape, x, [w for _, w in self.in_parts])

        rightward = []
        for b in range(self.bands):
            inp = xs[b] if b == 0 else concat_op(tape, [rightward[b - 1], xs[b]])
            rightward.append(self.right[b].forward(tape, inp, ctx))

        leftward = [None] * self.bands
        for b in reversed(range(self.bands)):
            if b == self.bands - 1:
                inp = rightward[b]
            else:
                inp = concat_op(tape, [leftward[b + 1], rightward[b]])
            leftward[b] = self.left[b].forward(tape, inp, ctx)

        return add_op(tape, concat_op(tape, rightward), concat_op(tape, leftward))

    # temporal reach: each directional pass chains band convolutions, so the
    # worst-case path runs through all bands of both passes
    @property
    def past_reach(self):
        return 2 * self.bands * self.dilation * (self.kernel - 1)

    def blocks(self):
        return self.right + self.left

    def params(self):
        out = []
        for blk in self.blocks():
            out.extend(blk.params())
        return out

    def buffers(self):
        out = []
        for blk in self.blocks():
            out.extend(blk.buffers())
        return out

    def param_count(self):
        return sum(blk.param_count() for blk in self.blocks())

    def flops_per_frame(self):
        return sum(blk.flops_per_frame() for blk in self.blocks())
