import numpy as np

from ddpredict.nn import autograd as ag


def numeric_grad(f, arr, step=1e-5):
    """Central finite differences of the scalar f() w.r.t. every entry of arr (in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + step
        fp = f()
        arr[i] = old - step
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def grad_rel_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_tensor_grads(loss_fn, tensors, step=1e-5):
    """Max relative error between backward() and finite differences over tensors."""
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    ag.backward(loss)
    worst = 0.0
    for t in tensors:
        num = numeric_grad(lambda: float(loss_fn().data), t.data, step)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, grad_rel_error(ana, num))
    return worst
