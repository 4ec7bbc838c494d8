"""Reverse-mode gradients and the differentiate-through-adaptation meta-gradient."""
import numpy as np

from .params import ParamSet
from .tensor import Tensor, add, grad_mode


def _relevant_order(root, targets):
    """Nodes between ``root`` and any target, in reverse topological order.

    A node is relevant when it is a target or one of its parents is. Targets
    are not expanded: gradients are not pushed past them.
    """
    relevant = {}
    order = []
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            if key in targets:
                relevant[key] = True
            else:
                relevant[key] = any(relevant.get(id(p), False) for p in node._parents)
            order.append(node)
            continue
        if key in relevant:
            continue
        relevant[key] = False  # visiting
        stack.append((node, True))
        if key not in targets:
            for p in node._parents:
                if id(p) not in relevant and p.requires_grad:
                    stack.append((p, False))
    return [n for n in reversed(order) if relevant[id(n)]], relevant


def gradient(loss, params, create_graph=False):
    """Gradient of a scalar ``loss`` with respect to each tensor in ``params``.

    Parameters
    ----------
    loss : Tensor
        Scalar (single-element) tensor.
    params : ParamSet
        Tensors to differentiate against. Entries the loss does not reach
        receive zeros of matching shape.
    create_graph : bool
        Record the backward computation so the returned gradients can be
        differentiated again.

    Returns
    -------
    ParamSet
        Gradients, entry-aligned with ``params``.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ValueError(f"gradient needs a scalar loss, got shape {shape}")
    targets = {id(t): n for n, t in params.items()}
    grads = {}
    if loss.requires_grad:
        order, relevant = _relevant_order(loss, targets)
        with grad_mode(create_graph):
            grads[id(loss)] = Tensor(np.ones_like(loss.data))
            for node in order:
                g = grads.get(id(node))
                if g is None or id(node) in targets or node._backward is None:
                    continue
                parent_grads = node._backward(g)
                for p, pg in zip(node._parents, parent_grads):
                    if pg is None or not relevant.get(id(p), False):
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else add(prev, pg)
    out = []
    for n, t in params.items():
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        elif not create_graph:
            g = g.detach()
        out.append((n, g))
    return ParamSet(out)


def adapt_steps(params, loss_fn, alpha, steps, create_graph):
    """``steps`` plain gradient-descent updates ``phi <- phi - alpha * grad``.

    With ``create_graph`` the updates stay differentiable with respect to the
    starting parameters; otherwise each gradient is detached.
    """
    phi = params
    for _ in range(steps):
        g = gradient(loss_fn(phi), phi, create_graph=create_graph)
        phi = phi.sub_scaled(g, alpha)
    return phi


def gradient_through_update(theta, support_loss_fn, query_loss_fn, alpha, t=1,
                            second_order=True, return_loss=False):
    """Meta-gradient of the query loss after ``t`` inner steps on the support loss.

    With ``second_order`` the gradient is taken with respect to ``theta``
    through the inner updates. Otherwise the query gradient is evaluated at the
    adapted parameters and returned as-is (the first-order approximation).

    Leaves of ``theta`` that do not record gradients are replaced by
    recording copies, so the result never silently comes back as zeros.
    """
    if t < 1:
        raise ValueError(f"inner steps must be >= 1, got {t}")
    if alpha < 0:
        raise ValueError(f"step size must be non-negative, got {alpha}")
    if not all(p.requires_grad for p in theta.tensors):
        theta = theta.clone(requires_grad=True)
    phi = adapt_steps(theta, support_loss_fn, alpha, t, create_graph=second_order)
    if not second_order:
        phi = phi.clone(requires_grad=True)
    query_loss = query_loss_fn(phi)
    grads = gradient(query_loss, theta if second_order else phi)
    if return_loss:
        return grads, float(query_loss.item())
    return grads
