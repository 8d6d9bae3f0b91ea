"""Independent brute-force references used by the tests."""
import numpy as np


def roc_bruteforce(scores, labels):
    """Evaluate (fpr, tpr) at +inf and at every distinct score with an O(n * k) loop."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pos, neg = labels.sum(), (~labels).sum()
    fpr, tpr = [0.0], [0.0]
    for t in sorted(set(scores.tolist()), reverse=True):
        hit = scores >= t
        tpr.append((hit & labels).sum() / pos)
        fpr.append((hit & ~labels).sum() / neg)
    return np.array(fpr), np.array(tpr)


def auroc_mann_whitney(scores, labels):
    """P(s_pos > s_neg) + 0.5 P(s_pos == s_neg) over all positive/negative pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    p, n = scores[labels], scores[~labels]
    gt = (p[:, None] > n[None, :]).sum()
    eq = (p[:, None] == n[None, :]).sum()
    return (gt + 0.5 * eq) / (len(p) * len(n))
