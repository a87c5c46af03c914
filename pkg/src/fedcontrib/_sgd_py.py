"""Pure NumPy fallback for the SGD kernel and the shared softmax math."""

import numpy as np


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def cross_entropy_grad(weights, biases, features, labels):
    """Mean cross-entropy gradient over the rows of ``features``.

    Returns ``(grad_weights, grad_biases)`` with the shapes of the inputs.
    """
    probs = softmax(features @ weights.T + biases)
    probs[np.arange(labels.shape[0]), labels] -= 1.0
    m = features.shape[0]
    return (probs.T @ features) / m, probs.sum(axis=0) / m


def sgd_epoch(weights, biases, features, labels, order, lr, batch_size):
    """Run one epoch in place over ``order`` in batches of ``batch_size``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = order.shape[0]
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        grad_w, grad_b = cross_entropy_grad(weights, biases, features[idx], labels[idx])
        biases -= lr * grad_b
        weights -= lr * grad_w
