"""Minimal trainable-layer engine.

A forward pass records backward closures on a tape; `Tape.backward` replays
them in reverse, accumulating exact gradients into `Var.grad` / `Param.grad`.
The op set is fixed (dense, causal dilated convolution, batch norm, ReLU,
sigmoid, dropout, concat/split/add/mul, MSE) because the model graph is
static.

Sequences are (T, dim) arrays. Batches concatenate several utterances along
the time axis; a `SegmentContext` carries the per-frame segment boundaries so
causal convolutions never read history across an utterance boundary.
"""

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.99


class StateError(RuntimeError):
    """Raised when backward is requested without a recorded forward."""


class GradientError(RuntimeError):
    """Raised when an optimizer step sees a non-finite gradient."""


class Var:
    """Value plus gradient slot for one node of the recorded graph."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = None


class Param(Var):
    """Named persistent tensor with a gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, name, value):
        super().__init__(value)
        self.name = name

    def zero_grad(self):
        self.grad = None


def _accum(var, g):
    if var.grad is None:
        var.grad = np.zeros_like(var.value)
    var.grad += g


class Tape:
    """Execution-ordered list of backward closures."""

    def __init__(self):
        self._stack = []

    def push(self, fn):
        self._stack.append(fn)

    def backward(self, loss):
        if not self._stack:
            raise StateError("backward called before any forward was recorded")
        loss.grad = np.ones_like(loss.value)
        for fn in reversed(self._stack):
            fn()
        self._stack.clear()


class SegmentContext:
    """Frame-position bookkeeping for a batch of concatenated sequences."""

    def __init__(self, lengths):
        lengths = [int(n) for n in lengths]
        if not lengths or min(lengths) < 1:
            raise ValueError("segment lengths must be positive")
        self.lengths = lengths
        self.n_frames = sum(lengths)
        self._pos = np.concatenate([np.arange(n) for n in lengths])
        self._rows = {}

    def rows_for(self, shift):
        """Frame indices whose history at `shift` stays inside the segment."""
        if shift not in self._rows:
            self._rows[shift] = np.nonzero(self._pos >= shift)[0]
        return self._rows[shift]


class ForwardContext:
    """Per-call evaluation mode: train/infer, dropout RNG, segmentation."""

    def __init__(self, training, segments, rng=None, update_stats=True):
        self.training = training
        self.segments = segments
        self.rng = rng
        self.update_stats = update_stats


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def dense_op(tape, x, w, b):
    y = Var(x.value @ w.value + b.value)

    def backward():
        g = y.grad
        _accum(w, x.value.T @ g)
        _accum(b, g.sum(axis=0))
        _accum(x, g @ w.value.T)

    tape.push(backward)
    return y


def causal_conv_op(tape, x, w, b, dilation, segments):
    """y(t) = sum_i x(t - dilation*i) @ w[i] + b, zero history per segment."""
    kernel = w.value.shape[0]
    y = x.value @ w.value[0] + b.value
    for i in range(1, kernel):
        shift = dilation * i
        rows = segments.rows_for(shift)
        if rows.size:
            y[rows] += x.value[rows - shift] @ w.value[i]
    out = Var(y)

    def backward():
        g = out.grad
        gw = np.empty_like(w.value)
        gw[0] = x.value.T @ g
        gx = g @ w.value[0].T
        for i in range(1, kernel):
            shift = dilation * i
            rows = segments.rows_for(shift)
            if rows.size:
                gw[i] = x.value[rows - shift].T @ g[rows]
                gx[rows - shift] += g[rows] @ w.value[i].T
            else:
                gw[i] = 0.0
        _accum(w, gw)
        _accum(b, g.sum(axis=0))
        _accum(x, gx)

    tape.push(backward)
    return out


def relu_op(tape, x):
    y = Var(np.maximum(x.value, 0))

    def backward():
        _accum(x, y.grad * (y.value > 0))

    tape.push(backward)
    return y


def sigmoid_op(tape, x):
    v = x.value
    y = Var(np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                     np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v)))).astype(v.dtype))

    def backward():
        _accum(x, y.grad * y.value * (1.0 - y.value))

    tape.push(backward)
    return y


def dropout_op(tape, x, rate, ctx):
    """Inverted dropout; identity in inference mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not ctx.training or rate == 0.0:
        return x
    dtype = x.value.dtype
    keep = (ctx.rng.random(x.value.shape) >= rate).astype(dtype)
    keep *= dtype.type(1.0 / (1.0 - rate))
    y = Var(x.value * keep)

    def backward():
        _accum(x, y.grad * keep)

    tape.push(backward)
    return y


def concat_op(tape, parts):
    widths = [p.value.shape[1] for p in parts]
    y = Var(np.concatenate([p.value for p in parts], axis=1))

    def backward():
        g = y.grad
        off = 0
        for p, width in zip(parts, widths):
            _accum(p, g[:, off : off + width])
            off += width

    tape.push(backward)
    return y


def split_op(tape, x, widths):
    offsets = np.cumsum([0] + list(widths))
    outs = [
        Var(np.ascontiguousarray(x.value[:, offsets[i] : offsets[i + 1]]))
        for i in range(len(widths))
    ]

    def backward():
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        for i, out in enumerate(outs):
            if out.grad is not None:
                x.grad[:, offsets[i] : offsets[i + 1]] += out.grad

    tape.push(backward)
    return outs


def add_op(tape, a, b):
    y = Var(a.value + b.value)

    def backward():
        _accum(a, y.grad)
        _accum(b, y.grad)

    tape.push(backward)
    return y


def mul_op(tape, a, b):
    y = Var(a.value * b.value)

    def backward():
        _accum(a, y.grad * b.value)
        _accum(b, y.grad * a.value)

    tape.push(backward)
    return y


def mse_op(tape, pred, target):
    """Mean over all elements of (pred - target)^2, as a scalar Var."""
    target = np.asarray(target)
    if pred.value.shape != target.shape:
        raise ValueError(
            f"prediction shape {pred.value.shape} != target shape {target.shape}"
        )
    diff = pred.value - target
    y = Var(np.float64(np.mean(diff * diff, dtype=np.float64)))

    def backward():
        scale = 2.0 * float(y.grad) / diff.size
        _accum(pred, (scale * diff).astype(pred.value.dtype))

    tape.push(backward)
    return y


def add_scalars_op(tape, a, b):
    y = Var(a.value + b.value)

    def backward():
        _accum(a, y.grad)
        _accum(b, y.grad)

    tape.push(backward)
    return y


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense:
    def __init__(self, name, in_dim, out_dim, rng, dtype):
        self.name = name
        self.in_dim, self.out_dim = in_dim, out_dim
        self.w = Param(f"{name}.w", kaiming_uniform(rng, (in_dim, out_dim), in_dim, dtype))
        self.b = Param(f"{name}.b", np.zeros(out_dim, dtype=dtype))

    def forward(self, tape, x, ctx=None):
        if x.value.shape[1] != self.in_dim:
            raise ValueError(f"dense expects {self.in_dim} inputs, got {x.value.shape[1]}")
        return dense_op(tape, x, self.w, self.b)

    def params(self):
        return [self.w, self.b]

    def param_count(self):
        return self.in_dim * self.out_dim + self.out_dim

    def flops_per_frame(self):
        return 2 * self.in_dim * self.out_dim


class CausalConv:
    """Causal dilated temporal convolution over (T, in_dim) sequences."""

    def __init__(self, name, in_dim, out_dim, kernel, dilation, rng, dtype):
        if kernel < 1 or dilation < 1:
            raise ValueError("kernel and dilation must be >= 1")
        self.name = name
        self.in_dim, self.out_dim = in_dim, out_dim
        self.kernel, self.dilation = kernel, dilation
        self.w = Param(
            f"{name}.w",
            kaiming_uniform(rng, (kernel, in_dim, out_dim), kernel * in_dim, dtype),
        )
        self.b = Param(f"{name}.b", np.zeros(out_dim, dtype=dtype))

    @property
    def past_reach(self):
        return self.dilation * (self.kernel - 1)

    def forward(self, tape, x, ctx):
        if x.value.shape[1] != self.in_dim:
            raise ValueError(f"conv expects {self.in_dim} inputs, got {x.value.shape[1]}")
        return causal_conv_op(tape, x, self.w, self.b, self.dilation, ctx.segments)

    def params(self):
        return [self.w, self.b]

    def param_count(self):
        return self.kernel * self.in_dim * self.out_dim + self.out_dim

    def flops_per_frame(self):
        return 2 * self.kernel * self.in_dim * self.out_dim


class BatchNorm:
    """Per-channel batch normalization over the frame axis.

    Training normalizes by the batch statistics with the variance floored at
    BN_EPS (a constant channel therefore maps to the shift parameter) and
    updates running statistics with momentum 0.99; inference uses the running
    statistics only.
    """

    def __init__(self, name, channels, dtype, eps=BN_EPS, momentum=BN_MOMENTUM):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.scale = Param(f"{name}.scale", np.ones(channels, dtype=dtype))
        self.shift = Param(f"{name}.shift", np.zeros(channels, dtype=dtype))
        self.name = name
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, tape, x, ctx):
        xv = x.value
        if ctx.training:
            if xv.shape[0] < 2:
                raise ValueError("batch norm needs at least 2 frames in train mode")
            mu = xv.mean(axis=0)
            var = xv.var(axis=0)
            if ctx.update_stats:
                m = self.momentum
                self.running_mean = (m * self.running_mean + (1 - m) * mu).astype(xv.dtype)
                self.running_var = (m * self.running_var + (1 - m) * var).astype(xv.dtype)
        else:
            mu = self.running_mean
            var = self.running_var
        floored = var < self.eps
        denom = np.sqrt(np.maximum(var, self.eps))
        xhat = (xv - mu) / denom
        y = Var(xhat * self.scale.value + self.shift.value)
        scale, training = self.scale, ctx.training
        shift = self.shift

        def backward():
            g = y.grad
            _accum(scale, (g * xhat).sum(axis=0))
            _accum(shift, g.sum(axis=0))
            gxhat = g * scale.value
            if training:
                mean_g = gxhat.mean(axis=0)
                mean_gx = np.where(floored, 0.0, (gxhat * xhat).mean(axis=0))
                _accum(x, (gxhat - mean_g - xhat * mean_gx) / denom)
            else:
                _accum(x, gxhat / denom)

        tape.push(backward)
        return y

    def params(self):
        return [self.scale, self.shift]

    def buffers(self):
        return [
            (f"{self.name}.running_mean", "running_mean"),
            (f"{self.name}.running_var", "running_var"),
        ]

    def param_count(self):
        return 2 * self.channels

    def flops_per_frame(self):
        return 4 * self.channels


class Dropout:
    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, tape, x, ctx):
        return dropout_op(tape, x, self.rate, ctx)

    def params(self):
        return []

    def param_count(self):
        return 0

    def flops_per_frame(self):
        return 0


class ConvBlock:
    """CausalConv + BN + ReLU + dropout, the repeated unit of the network."""

    def __init__(self, name, in_dim, out_dim, kernel, dilation, dropout, rng, dtype):
        self.name = name
        self.conv = CausalConv(name + ".conv", in_dim, out_dim, kernel, dilation, rng, dtype)
        self.bn = BatchNorm(name + ".bn", out_dim, dtype)
        self.dp = Dropout(dropout)
        self.out_dim = out_dim

    def forward(self, tape, x, ctx):
        y = self.conv.forward(tape, x, ctx)
        y = self.bn.forward(tape, y, ctx)
        y = relu_op(tape, y)
        return self.dp.forward(tape, y, ctx)

    def params(self):
        return self.conv.params() + self.bn.params()

    def buffers(self):
        return [(name, attr, self.bn) for name, attr in self.bn.buffers()]

    def param_count(self):
        return self.conv.param_count() + self.bn.param_count()

    def flops_per_frame(self):
        # +out_dim for the ReLU (one op per activation)
        return self.conv.flops_per_frame() + self.bn.flops_per_frame() + self.out_dim


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction; moments live per parameter name."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self):
        for p in self.params:
            g = p.grad
            if g is not None and not np.isfinite(g).all():
                raise GradientError(f"non-finite gradient in {p.name}; step aborted")
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def finite_diff_check(loss_fn, params, h=1e-5, coords_per_param=200, rng=None):
    """Compare analytic gradients against central finite differences.

    `loss_fn()` must re-evaluate the loss under identical conditions (same
    dropout masks, no running-stat updates); `params` must already hold the
    analytic gradients for that loss. Checks up to `coords_per_param`
    coordinates per tensor and returns (worst_relative_error, per_param dict).

    The error denominator is floored at 1e-6*(1+|loss|): coordinates whose
    true gradient vanishes (e.g. a conv bias absorbed by batch norm) would
    otherwise compare pure roundoff noise against itself.
    """
    rng = rng or np.random.default_rng(0)
    atol = 1e-6 * (1.0 + abs(loss_fn()))
    report = {}
    worst = 0.0
    for p in params:
        if p.value.dtype != np.float64:
            raise ValueError("finite_diff_check requires a 64-bit model")
        if p.grad is None:
            raise StateError(f"no recorded gradient for {p.name}")
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= coords_per_param else np.sort(
            rng.choice(n, size=coords_per_param, replace=False)
        )
        p_worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), atol)
            p_worst = max(p_worst, err)
        report[p.name] = p_worst
        worst = max(worst, p_worst)
    return worst, report
