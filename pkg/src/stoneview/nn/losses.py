import numpy as np


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy over the batch.

    Returns (loss, dlogits) where dlogits is the gradient of the mean loss.
    """
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(b), labels].mean()
    probs = np.exp(log_probs)
    dlogits = probs
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    return float(loss), dlogits.astype(logits.dtype, copy=False)
