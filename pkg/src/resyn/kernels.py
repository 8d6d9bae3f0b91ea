"""
Hot numeric kernels with numba and pure-numpy implementations.

Every kernel ``foo`` exists as ``foo_numba`` and ``foo_numpy``; the public name
dispatches on :data:`resyn._accel.USE_NUMBA`. Both variants must agree exactly
(integer counts) or to rounding (float sums); ``tests/test_kernels.py`` checks this.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


# -- HOG ---------------------------------------------------------------------

def _orientation_bins(orientation, n_bins):
    edges = (180.0 / n_bins) * np.arange(n_bins)
    return np.searchsorted(edges, orientation, side="right") - 1


def hog_cell_histograms_numpy(magnitude, orientation, cell, n_bins):
    """Sum gradient magnitude per (cell, orientation bin), averaged over cell area.

    ``magnitude`` and ``orientation`` (degrees in [0, 180)) must already be
    cropped to a multiple of ``cell`` in both dimensions.
    """
    h, w = magnitude.shape
    ncr, ncc = h // cell, w // cell
    bins = _orientation_bins(orientation, n_bins)
    rows = np.arange(h) // cell
    cols = np.arange(w) // cell
    idx = (rows[:, None] * ncc + cols[None, :]) * n_bins + bins
    hist = np.bincount(idx.ravel(), weights=magnitude.ravel(), minlength=ncr * ncc * n_bins)
    return hist.reshape(ncr, ncc, n_bins) / float(cell * cell)


@njit
def hog_cell_histograms_numba(magnitude, orientation, cell, n_bins):
    h, w = magnitude.shape
    ncr = h // cell
    ncc = w // cell
    width = 180.0 / n_bins
    hist = np.zeros((ncr, ncc, n_bins))
    for r in range(ncr * cell):
        cr = r // cell
        for c in range(ncc * cell):
            o = orientation[r, c]
            b = 0
            for i in range(1, n_bins):
                if o >= width * i:
                    b = i
            hist[cr, c // cell, b] += magnitude[r, c]
    area = float(cell * cell)
    for i in range(ncr):
        for j in range(ncc):
            for k in range(n_bins):
                hist[i, j, k] /= area
    return hist


def hog_blocks_numpy(hist, block, clip, eps):
    """L2-Hys normalised, overlapping (stride one cell) block descriptors."""
    ncr, ncc, n_bins = hist.shape
    nbr, nbc = ncr - block + 1, ncc - block + 1
    win = np.lib.stride_tricks.sliding_window_view(hist, (block, block), axis=(0, 1))
    # (nbr, nbc, n_bins, block, block) -> (nbr, nbc, block, block, n_bins)
    blocks = np.ascontiguousarray(np.moveaxis(win, 2, -1)).reshape(nbr, nbc, -1)
    out = blocks / np.sqrt(np.sum(blocks ** 2, axis=-1, keepdims=True) + eps ** 2)
    out = np.minimum(out, clip)
    out = out / np.sqrt(np.sum(out ** 2, axis=-1, keepdims=True) + eps ** 2)
    return out.reshape(nbr, nbc, block, block, n_bins)


@njit
def hog_blocks_numba(hist, block, clip, eps):
    ncr, ncc, n_bins = hist.shape
    nbr = ncr - block + 1
    nbc = ncc - block + 1
    out = np.zeros((nbr, nbc, block, block, n_bins))
    for i in range(nbr):
        for j in range(nbc):
            ss = 0.0
            for a in range(block):
                for b in range(block):
                    for k in range(n_bins):
                        v = hist[i + a, j + b, k]
                        ss += v * v
            norm = np.sqrt(ss + eps * eps)
            ss2 = 0.0
            for a in range(block):
                for b in range(block):
                    for k in range(n_bins):
                        v = min(hist[i + a, j + b, k] / norm, clip)
                        out[i, j, a, b, k] = v
                        ss2 += v * v
            norm2 = np.sqrt(ss2 + eps * eps)
            for a in range(block):
                for b in range(block):
                    for k in range(n_bins):
                        out[i, j, a, b, k] /= norm2
    return out


# -- ROC ---------------------------------------------------------------------

def roc_counts_numpy(scores_desc, labels_desc):
    """Cumulative (tp, fp) at each distinct score, scores sorted descending.

    Returns ``(thresholds, tp, fp)``; predicting positive means ``score >= threshold``.
    """
    n = scores_desc.shape[0]
    if n == 0:
        return np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64)
    last = np.flatnonzero(np.diff(scores_desc) != 0)
    ends = np.append(last, n - 1)
    pos = labels_desc.astype(np.int64)
    tp = np.cumsum(pos)[ends]
    fp = (ends + 1) - tp
    return scores_desc[ends].astype(np.float64), tp, fp


@njit
def roc_counts_numba(scores_desc, labels_desc):
    n = scores_desc.shape[0]
    thr = np.empty(n)
    tp = np.empty(n, np.int64)
    fp = np.empty(n, np.int64)
    m = 0
    ctp = 0
    cfp = 0
    for i in range(n):
        if labels_desc[i]:
            ctp += 1
        else:
            cfp += 1
        if i == n - 1 or scores_desc[i + 1] != scores_desc[i]:
            thr[m] = scores_desc[i]
            tp[m] = ctp
            fp[m] = cfp
            m += 1
    return thr[:m], tp[:m], fp[:m]


# -- patch scores -> pixels ---------------------------------------------------

def patch_coverage_numpy(patch_scores, stride, patch, height, width):
    """Per-pixel sum and count of the scores of all patches covering each pixel."""
    ny, nx = patch_scores.shape
    total = np.zeros((height, width))
    count = np.zeros((height, width), np.int64)
    for i in range(ny):
        y = i * stride
        for j in range(nx):
            x = j * stride
            total[y:y + patch, x:x + patch] += patch_scores[i, j]
            count[y:y + patch, x:x + patch] += 1
    return total, count


@njit
def patch_coverage_numba(patch_scores, stride, patch, height, width):
    ny, nx = patch_scores.shape
    total = np.zeros((height, width))
    count = np.zeros((height, width), np.int64)
    for i in range(ny):
        y0 = i * stride
        for j in range(nx):
            x0 = j * stride
            s = patch_scores[i, j]
            for y in range(y0, y0 + patch):
                for x in range(x0, x0 + patch):
                    total[y, x] += s
                    count[y, x] += 1
    return total, count


if USE_NUMBA:
    hog_cell_histograms = hog_cell_histograms_numba
    hog_blocks = hog_blocks_numba
    roc_counts = roc_counts_numba
    patch_coverage = patch_coverage_numba
else:
    hog_cell_histograms = hog_cell_histograms_numpy
    hog_blocks = hog_blocks_numpy
    roc_counts = roc_counts_numpy
    patch_coverage = patch_coverage_numpy
