"""Central finite differences, kept apart from the analytic backward code."""

import numpy as np


def numerical_gradient(f, arr, h=1e-4):
    """dF/d(arr) by central differences; ``arr`` is perturbed in place and restored."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        fp = f()
        arr[i] = orig - h
        fm = f()
        arr[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-7):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def random_network(rng, in_dim, widths, alpha=0.2, final_sigmoid=False):
    """Dense-BN-LeakyReLU blocks ending in a plain dense layer (optionally a sigmoid)."""
    from craft.nn import BatchNorm, Dense, LeakyReLU, Sequential, Sigmoid

    layers, d = [], in_dim
    for w in widths[:-1]:
        bn = BatchNorm(w)
        bn.params["gamma"][:] = rng.uniform(0.5, 1.5, w)
        bn.params["beta"][:] = rng.normal(0, 0.3, w)
        layers += [Dense(d, w, rng), bn, LeakyReLU(alpha)]
        d = w
    last = Dense(d, widths[-1], rng)
    last.params["bias"][:] = rng.normal(0, 0.1, widths[-1])
    layers.append(last)
    if final_sigmoid:
        layers.append(Sigmoid())
    return Sequential(layers)


def check_network(net, x, rng, training=True, h=1e-4):
    """Worst relative error over every parameter and input coordinate."""
    return gradient_errors(net, x, rng, training, h)[0]


def gradient_errors(net, x, rng, training=True, h=1e-4, floor=1e-7):
    """``(error, fd_error)`` for a random linear loss on the network output.

    ``error`` compares the analytic gradients with central differences at
    ``h``.  ``fd_error`` is the Richardson estimate of how far those
    differences themselves are from the true derivative, from a second pass
    at ``h / 2``; it never looks at the analytic gradient.
    """
    out_shape = net.forward(x, training=training, update_stats=False).shape
    weights = rng.normal(size=out_shape)

    def loss():
        return float((net.forward(x, training=training, update_stats=False) * weights).sum())

    loss()
    dx = net.backward(weights)
    analytic = net.gradients()
    err = fd_err = 0.0
    for a, arr in [(dx, x)] + [(analytic[name], p) for name, p in net.parameters()]:
        d1 = numerical_gradient(loss, arr, h)
        err = max(err, max_relative_error(a, d1, floor))
        d2 = numerical_gradient(loss, arr, h / 2)
        fd_err = max(fd_err, max_relative_error(d1 + 4 / 3 * (d2 - d1), d1, floor))
    return err, fd_err
