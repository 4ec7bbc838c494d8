"""Central finite-difference checks for first and second derivatives."""
import numpy as np

from .core import ParamSet, Tensor, gradient


def relative_error(analytic, numeric):
    """``max|a - n| / max(max|a|, max|n|)``, guarded against an all-zero scale."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def numeric_gradient(f, arrays, h=1e-5):
    """Central differences of a scalar function of several float64 arrays."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(*arrays)
            flat[i] = orig - h
            down = f(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def check_gradient(fn, arrays, h=1e-5):
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` maps Tensors to a scalar Tensor; ``arrays`` are the float64 inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    params = ParamSet([(f"x{i}", Tensor(a, requires_grad=True)) for i, a in enumerate(arrays)])
    loss = fn(*params.tensors)
    analytic = gradient(loss, params)

    def scalar(*arrs):
        return fn(*[Tensor(a) for a in arrs]).item()

    numeric = numeric_gradient(scalar, arrays, h)
    return max(relative_error(analytic[f"x{i}"].data, numeric[i]) for i in range(len(arrays)))


def check_hessian_vector(fn, x, v, h=1e-5):
    """Relative error of ``d/dx <grad fn(x), v>`` against differences of ``grad fn``."""
    x = np.array(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)

    def grad_at(arr, create_graph=False):
        p = ParamSet([("x", Tensor(arr, requires_grad=True))])
        return p, gradient(fn(p["x"]), p, create_graph=create_graph)

    p, g = grad_at(x, create_graph=True)
    hv = gradient((g["x"] * v).sum(), p)["x"].data
    _, g_up = grad_at(x + h * v)
    _, g_down = grad_at(x - h * v)
    numeric = (g_up["x"].data - g_down["x"].data) / (2 * h)
    return relative_error(hv, numeric)
