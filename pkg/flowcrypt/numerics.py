# -*- coding: utf-8 -*-
"""
数值计算核心：张量、卷积、激活函数与反向模式自动微分

只覆盖FlowCrypt固定结构所需的运算集合。每个基本运算在前向时把自身记录到
当前激活的梯度带（GradientTape）上，反向时按记录顺序的逆序调用已注册的反向规则。
"""

import logging
import threading
from contextlib import contextmanager

import numpy as np

from flowcrypt.errors import InvalidArgumentError, UnsupportedOperationError

logger = logging.getLogger(__name__)

DEFAULT_SLOPE = 0.2
DEFAULT_FD_EPS = 1e-3
VARIANCE_FLOOR = 1e-12
HISTOGRAM_BINS = 256
DCT_BLOCK = 8

_state = threading.local()

# 运算名 -> 反向规则
BACKWARD_RULES = {}


def get_default_dtype():
    """返回当前线程的默认浮点精度（默认float32）"""
    return getattr(_state, 'dtype', np.float32)


@contextmanager
def precision(dtype):
    """
    临时切换当前线程的默认浮点精度，梯度校验时使用float64

    参数:
        dtype (numpy.dtype): 目标精度
    """
    previous = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


class Tensor:
    """
    稠密多维实数数组

    data 为 numpy 数组；requires_grad 为 True 的张量是可训练参数（叶子节点）。
    """

    __slots__ = ('data', 'requires_grad', 'name', '_tracked')

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if dtype is None and isinstance(data, (np.ndarray, np.generic)) and data.dtype.kind == 'f':
            array = np.ascontiguousarray(data)
        else:
            array = np.ascontiguousarray(np.asarray(data, dtype=dtype or get_default_dtype()))
        self.data = array
        self.requires_grad = requires_grad
        self.name = name
        self._tracked = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        label = f' name={self.name}' if self.name else ''
        return f'Tensor(shape={self.shape}, dtype={self.dtype}{label})'

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


def as_tensor(value, like=None):
    """
    把标量、列表或数组包装为不参与求导的常量张量

    参数:
        value: 待转换的值
        like (Tensor, optional): 标量按该张量的精度转换

    返回:
        Tensor: 张量（若输入已是Tensor则原样返回）
    """
    if isinstance(value, Tensor):
        return value
    if like is not None and np.isscalar(value):
        return Tensor(np.asarray(value, dtype=like.dtype))
    return Tensor(value)


class TapeEntry:
    """梯度带上的一条记录：运算名、输入、输出以及反向所需的上下文"""

    __slots__ = ('op', 'inputs', 'output', 'ctx')

    def __init__(self, op, inputs, output, ctx):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.ctx = ctx


class GradientTape:
    """
    梯度带

    用法:
        with GradientTape() as tape:
            loss = f(params)
        grads = tape.gradient(loss, params)

    单写者：同一时刻一条梯度带只服务一次前向/反向。
    """

    def __init__(self):
        self.entries = []
        self._leaves = {}

    def __enter__(self):
        stack = getattr(_state, 'tapes', None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tapes.pop()
        return False

    def record(self, op, inputs, output, ctx):
        for tensor in inputs:
            if tensor.requires_grad:
                self._leaves[id(tensor)] = tensor
        self.entries.append(TapeEntry(op, inputs, output, ctx))

    def backward(self, loss):
        """
        从标量损失出发执行反向传播

        参数:
            loss (Tensor): 标量损失

        返回:
            dict: id(参数张量) -> 梯度数组，形状与参数一致
        """
        if loss.size != 1:
            raise InvalidArgumentError(f'反向传播要求标量损失，实际形状为 {loss.shape}')
        grads = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            rule = BACKWARD_RULES.get(entry.op)
            if rule is None:
                raise UnsupportedOperationError(f'运算 {entry.op} 未注册反向规则')
            upstream = grads.pop(id(entry.output), None)
            if upstream is None:
                continue
            input_grads = rule(upstream, entry)
            for tensor, grad in zip(entry.inputs, input_grads):
                if grad is None or not tensor._tracked:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
        result = {}
        for key, tensor in self._leaves.items():
            grad = grads.get(key)
            if grad is None:
                grad = np.zeros_like(tensor.data)
            result[key] = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
        return result

    def gradient(self, loss, sources):
        """
        计算损失对一组参数的梯度

        参数:
            loss (Tensor): 标量损失
            sources (list): 参数张量列表

        返回:
            list: 与 sources 一一对应的梯度数组
        """
        grads = self.backward(loss)
        return [grads.get(id(p), np.zeros_like(p.data)) for p in sources]


def backward(tape, loss):
    """对 tape 上记录的计算执行反向传播，返回 id(参数) -> 梯度"""
    return tape.backward(loss)


def _active_tape():
    stack = getattr(_state, 'tapes', None)
    return stack[-1] if stack else None


def _record(op, inputs, out_data, ctx=None):
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        tape.record(op, inputs, out, ctx or {})
    return out


def register_backward(op):
    """注册反向规则的装饰器，规则签名为 rule(upstream, entry) -> 各输入梯度"""

    def decorator(fn):
        BACKWARD_RULES[op] = fn
        return fn

    return decorator


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# ---------------------------------------------------------------------------
# 逐元素运算
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _binary(a, b)
    return _record('add', (a, b), a.data + b.data)


@register_backward('add')
def _add_backward(g, entry):
    a, b = entry.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b):
    a, b = _binary(a, b)
    return _record('sub', (a, b), a.data - b.data)


@register_backward('sub')
def _sub_backward(g, entry):
    a, b = entry.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b):
    a, b = _binary(a, b)
    return _record('mul', (a, b), a.data * b.data)


@register_backward('mul')
def _mul_backward(g, entry):
    a, b = entry.inputs
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def div(a, b):
    a, b = _binary(a, b)
    return _record('div', (a, b), a.data / b.data)


@register_backward('div')
def _div_backward(g, entry):
    a, b = entry.inputs
    grad_a = _unbroadcast(g / b.data, a.shape)
    grad_b = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
    return grad_a, grad_b


def neg(x):
    return _record('neg', (x,), -x.data)


@register_backward('neg')
def _neg_backward(g, entry):
    return (-g,)


def exp(x):
    return _record('exp', (x,), np.exp(x.data))


@register_backward('exp')
def _exp_backward(g, entry):
    return (g * entry.output.data,)


def log(x):
    return _record('log', (x,), np.log(x.data))


@register_backward('log')
def _log_backward(g, entry):
    return (g / entry.inputs[0].data,)


def sigmoid(x):
    # 分段计算避免exp溢出
    data = x.data
    out = np.empty_like(data)
    pos = data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-data[pos]))
    ez = np.exp(data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _record('sigmoid', (x,), out)


@register_backward('sigmoid')
def _sigmoid_backward(g, entry):
    s = entry.output.data
    return (g * s * (1.0 - s),)


def leaky_relu(x, slope=DEFAULT_SLOPE):
    """
    LeakyReLU激活：x >= 0 时取 x，否则取 slope·x

    参数:
        x (Tensor): 输入
        slope (float): 负半轴斜率，默认0.2

    返回:
        Tensor: 与输入同形状
    """
    data = x.data
    out = np.where(data >= 0, data, data * data.dtype.type(slope))
    return _record('leaky_relu', (x,), out, {'slope': slope})


@register_backward('leaky_relu')
def _leaky_relu_backward(g, entry):
    data = entry.inputs[0].data
    return (np.where(data >= 0, g, g * entry.ctx['slope']),)


def square(x):
    return _record('square', (x,), x.data * x.data)


@register_backward('square')
def _square_backward(g, entry):
    return (2.0 * g * entry.inputs[0].data,)


def absolute(x):
    return _record('abs', (x,), np.abs(x.data))


@register_backward('abs')
def _abs_backward(g, entry):
    return (g * np.sign(entry.inputs[0].data),)


def relu(x):
    return _record('relu', (x,), np.maximum(x.data, 0))


@register_backward('relu')
def _relu_backward(g, entry):
    # 折点处取次梯度0
    return (np.where(entry.inputs[0].data > 0, g, 0.0),)


def clip_min(x, floor):
    """下限截断，被截断的元素梯度为0"""
    return _record('clip_min', (x,), np.maximum(x.data, floor), {'floor': floor})


@register_backward('clip_min')
def _clip_min_backward(g, entry):
    return (np.where(entry.inputs[0].data > entry.ctx['floor'], g, 0.0),)


# ---------------------------------------------------------------------------
# 归约与形状运算
# ---------------------------------------------------------------------------

def reduce_sum(x):
    return _record('sum', (x,), np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype))


@register_backward('sum')
def _sum_backward(g, entry):
    return (np.broadcast_to(g, entry.inputs[0].shape).copy(),)


def mean(x):
    return _record('mean', (x,), np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype))


@register_backward('mean')
def _mean_backward(g, entry):
    x = entry.inputs[0]
    return (np.broadcast_to(g / x.size, x.shape).copy(),)


def amin(x):
    index = int(np.argmin(x.data))
    return _record('amin', (x,), np.asarray(x.data.reshape(-1)[index]), {'index': index})


def amax(x):
    index = int(np.argmax(x.data))
    return _record('amax', (x,), np.asarray(x.data.reshape(-1)[index]), {'index': index})


@register_backward('amin')
@register_backward('amax')
def _extreme_backward(g, entry):
    x = entry.inputs[0]
    grad = np.zeros(x.size, dtype=x.dtype)
    grad[entry.ctx['index']] = np.asarray(g).reshape(-1)[0]
    return (grad.reshape(x.shape),)


def reshape(x, shape):
    return _record('reshape', (x,), x.data.reshape(shape))


@register_backward('reshape')
def _reshape_backward(g, entry):
    return (g.reshape(entry.inputs[0].shape),)


def concat(tensors, axis=0):
    """
    沿指定轴拼接张量

    参数:
        tensors (list): 张量列表
        axis (int): 拼接轴，默认通道轴0

    返回:
        Tensor: 拼接结果
    """
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _record('concat', tensors, out, {'axis': axis, 'sizes': sizes})


@register_backward('concat')
def _concat_backward(g, entry):
    splits = np.cumsum(entry.ctx['sizes'])[:-1]
    return tuple(np.split(g, splits, axis=entry.ctx['axis']))


def gather(x, index):
    """
    按扁平下标取值：out = x.ravel()[index]，输出形状与 index 相同

    划分/合并与相邻像素采样都建立在这个运算上，取值是逐位精确的。
    """
    index = np.asarray(index, dtype=np.int64)
    return _record('gather', (x,), x.data.reshape(-1)[index], {'index': index})


@register_backward('gather')
def _gather_backward(g, entry):
    x = entry.inputs[0]
    grad = np.bincount(entry.ctx['index'].reshape(-1), weights=g.reshape(-1), minlength=x.size)
    return (grad.astype(x.dtype).reshape(x.shape),)


# ---------------------------------------------------------------------------
# 卷积
# ---------------------------------------------------------------------------

def _im2col(data, k):
    channels, height, width = data.shape
    pad = k // 2
    padded = np.pad(data, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    return windows.transpose(0, 3, 4, 1, 2).reshape(channels * k * k, height * width)


def _col2im(cols, shape, k):
    channels, height, width = shape
    pad = k // 2
    cols = cols.reshape(channels, k, k, height, width)
    padded = np.zeros((channels, height + 2 * pad, width + 2 * pad), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            padded[:, dy:dy + height, dx:dx + width] += cols[:, dy, dx]
    return padded[:, pad:pad + height, pad:pad + width]


def conv2d(x, weight, bias):
    """
    二维卷积：步长1，零填充 k//2，输出与输入空间尺寸相同

    output[o,y,x] = bias[o] + Σ_{c,dy,dx} w[o,c,dy,dx]·input_padded[c,y+dy,x+dx]

    参数:
        x (Tensor): 输入，形状 C_in×H×W
        weight (Tensor): 卷积核，形状 C_out×C_in×k×k（k为奇数，默认结构为3）
        bias (Tensor): 偏置，形状 C_out

    返回:
        Tensor: 输出，形状 C_out×H×W
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise InvalidArgumentError(f'conv2d 输入维度不合法: {x.shape}, {weight.shape}')
    out_ch, in_ch, k, k2 = weight.shape
    if in_ch != x.shape[0]:
        raise InvalidArgumentError(f'conv2d 输入通道数 {x.shape[0]} 与卷积核输入通道数 {in_ch} 不一致')
    if k != k2 or k % 2 == 0:
        raise InvalidArgumentError(f'conv2d 只支持奇数方形卷积核，实际为 {k}×{k2}')
    if bias.shape != (out_ch,):
        raise InvalidArgumentError(f'conv2d 偏置形状应为 ({out_ch},)，实际为 {bias.shape}')
    _, height, width = x.shape
    cols = _im2col(x.data, k)
    out = weight.data.reshape(out_ch, -1) @ cols
    out = out.reshape(out_ch, height, width) + bias.data[:, None, None]
    return _record('conv2d', (x, weight, bias), out)


@register_backward('conv2d')
def _conv2d_backward(g, entry):
    x, weight, bias = entry.inputs
    out_ch, _, k, _ = weight.shape
    g2 = g.reshape(out_ch, -1)
    # im2col 不缓存，反向时重算以控制内存
    cols = _im2col(x.data, k)
    grad_w = (g2 @ cols.T).reshape(weight.shape)
    grad_b = g2.sum(axis=1)
    grad_x = _col2im(weight.data.reshape(out_ch, -1).T @ g2, x.shape, k)
    return grad_x, grad_w, grad_b


def depthwise_conv2d(x, kernel):
    """逐通道卷积（同一个常量二维核作用于每个通道），零填充保持尺寸"""
    kernel = np.asarray(kernel, dtype=x.dtype)
    k = kernel.shape[0]
    pad = k // 2
    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    out = np.einsum('chwij,ij->chw', windows, kernel)
    return _record('depthwise_conv2d', (x,), out, {'kernel': kernel})


@register_backward('depthwise_conv2d')
def _depthwise_conv2d_backward(g, entry):
    kernel = entry.ctx['kernel']
    k = kernel.shape[0]
    channels, height, width = entry.inputs[0].shape
    cols = np.einsum('chw,ij->cijhw', g, kernel)
    return (_col2im(cols, (channels, height, width), k),)


# ---------------------------------------------------------------------------
# 噪声层与损失函数使用的专用运算
# ---------------------------------------------------------------------------

def dct_matrix(n=DCT_BLOCK):
    """正交DCT-II矩阵"""
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * cols + 1) * rows / (2 * n)) * np.sqrt(2.0 / n)
    mat[0, :] = np.sqrt(1.0 / n)
    return mat


def _block_dct_apply(data, keep):
    channels, height, width = data.shape
    n = keep.shape[0]
    ph = (-height) % n
    pw = (-width) % n
    padded = np.pad(data, ((0, 0), (0, ph), (0, pw)))
    hb, wb = padded.shape[1] // n, padded.shape[2] // n
    blocks = padded.reshape(channels, hb, n, wb, n)
    d = dct_matrix(n).astype(data.dtype)
    coeff = np.einsum('ij,chjwk,lk->chiwl', d, blocks, d)
    coeff = coeff * keep[None, None, :, None, :]
    restored = np.einsum('ji,chjwk,kl->chiwl', d, coeff, d)
    return restored.reshape(padded.shape)[:, :height, :width]


def block_dct_filter(x, keep):
    """
    分块DCT系数掩码：8×8块做DCT，保留 keep 为1的系数，再做逆DCT

    正交投影算子是自伴的，反向直接对上游梯度做同样的滤波。
    """
    keep = np.asarray(keep, dtype=x.dtype)
    return _record('block_dct_filter', (x,), _block_dct_apply(x.data, keep), {'keep': keep})


@register_backward('block_dct_filter')
def _block_dct_filter_backward(g, entry):
    return (_block_dct_apply(g, entry.ctx['keep']),)


def median_filter(x, window):
    """逐通道中值滤波；反向按直通（恒等）梯度处理"""
    from scipy import ndimage

    out = ndimage.median_filter(x.data, size=(1, window, window), mode='reflect')
    return _record('median_filter', (x,), out, {'window': window})


@register_backward('median_filter')
def _median_filter_backward(g, entry):
    return (g,)


def soft_histogram(x, bins=HISTOGRAM_BINS):
    """
    三角核（线性插值）软直方图，输入取值应在[0,1]

    位置 t = x·(bins−1)，质量按距离线性分给相邻两个箱，箱中心与8位量化电平一致。
    超出[0,1]的值先截断，截断部分梯度为0。输入含非有限值时整个直方图为 NaN。
    """
    data = x.data.reshape(-1).astype(np.float64)
    finite = np.isfinite(data)
    inside = (data >= 0.0) & (data <= 1.0)
    t = np.clip(np.where(finite, data, 0.0), 0.0, 1.0) * (bins - 1)
    lower = np.minimum(np.floor(t), bins - 2).astype(np.int64)
    frac = t - lower
    hist = np.bincount(lower, weights=1.0 - frac, minlength=bins)
    hist += np.bincount(lower + 1, weights=frac, minlength=bins)
    if not finite.all():
        hist[:] = np.nan
    ctx = {'lower': lower, 'inside': inside, 'bins': bins}
    return _record('soft_histogram', (x,), hist.astype(x.dtype), ctx)


@register_backward('soft_histogram')
def _soft_histogram_backward(g, entry):
    lower = entry.ctx['lower']
    slope = (g[lower + 1] - g[lower]) * (entry.ctx['bins'] - 1)
    grad = np.where(entry.ctx['inside'], slope, 0.0)
    x = entry.inputs[0]
    return (grad.astype(x.dtype).reshape(x.shape),)


def pearson(x, y):
    """
    两组样本的皮尔逊相关系数

    任一方差（总体方差）低于 1e-12 时结果定义为0，梯度也为0。
    """
    xd = x.data.reshape(-1).astype(np.float64)
    yd = y.data.reshape(-1).astype(np.float64)
    if xd.size != yd.size or xd.size < 2:
        raise InvalidArgumentError(f'pearson 需要等长且至少2个样本，实际为 {xd.size} 与 {yd.size}')
    xm = xd - xd.mean()
    ym = yd - yd.mean()
    sxx = float(xm @ xm)
    syy = float(ym @ ym)
    n = xd.size
    if sxx / n < VARIANCE_FLOOR or syy / n < VARIANCE_FLOOR:
        return _record('pearson', (x, y), np.asarray(0.0, dtype=x.dtype), {'degenerate': True})
    r = float(xm @ ym) / np.sqrt(sxx * syy)
    ctx = {'degenerate': False, 'xm': xm, 'ym': ym, 'sxx': sxx, 'syy': syy, 'r': r}
    return _record('pearson', (x, y), np.asarray(r, dtype=x.dtype), ctx)


@register_backward('pearson')
def _pearson_backward(g, entry):
    x, y = entry.inputs
    ctx = entry.ctx
    if ctx['degenerate']:
        return np.zeros_like(x.data), np.zeros_like(y.data)
    upstream = float(np.asarray(g).reshape(-1)[0])
    norm = np.sqrt(ctx['sxx'] * ctx['syy'])
    grad_x = ctx['ym'] / norm - ctx['r'] * ctx['xm'] / ctx['sxx']
    grad_y = ctx['xm'] / norm - ctx['r'] * ctx['ym'] / ctx['syy']
    return (
        (upstream * grad_x).astype(x.dtype).reshape(x.shape),
        (upstream * grad_y).astype(y.dtype).reshape(y.shape),
    )


# ---------------------------------------------------------------------------
# 梯度校验
# ---------------------------------------------------------------------------

def finite_difference_check(f, params, eps=DEFAULT_FD_EPS, num_samples=16, rng=None):
    """
    用中心差分校验解析梯度

    参数:
        f (callable): 无参函数，读取 params 的当前取值并返回标量 Tensor
        params (list): 参数张量列表（原地扰动后恢复）
        eps (float): 差分步长，默认1e-3
        num_samples (int): 每个参数抽查的坐标数
        rng (numpy.random.Generator, optional): 抽样随机源

    返回:
        float: 抽查坐标上 |解析 − 数值| / (|解析| + 1e-8) 的最大值
    """
    if eps <= 0:
        raise InvalidArgumentError(f'差分步长必须为正数，实际为 {eps}')
    rng = rng if rng is not None else np.random.default_rng(0)
    with GradientTape() as tape:
        loss = f()
    analytic = tape.gradient(loss, params)

    worst = 0.0
    for param, grad in zip(params, analytic):
        flat = param.data.reshape(-1)
        count = min(num_samples, flat.size)
        for i in rng.choice(flat.size, size=count, replace=False):
            original = flat[i]
            flat[i] = original + eps
            plus_at = float(flat[i])
            f_plus = f().item()
            flat[i] = original - eps
            minus_at = float(flat[i])
            f_minus = f().item()
            flat[i] = original
            numeric = (f_plus - f_minus) / (plus_at - minus_at)
            value = float(grad.reshape(-1)[i])
            error = abs(value - numeric) / (abs(value) + 1e-8)
            worst = max(worst, error)
    logger.debug(f'有限差分校验完成，最大相对误差 {worst:.3e}')
    return worst
