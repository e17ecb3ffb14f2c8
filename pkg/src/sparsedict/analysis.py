"""Quality metrics and coefficient-histogram analysis.

Images are compared on the grey-level scale. Histograms use equal-width bins
over the full coefficient range; the zero peak is the contiguous run of bins
around 0 that sits well above the fitted Gaussian.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .types import DimensionError, GrayImage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_RANGE = 255.0
PEAK_KAPPA = 3.0


def _pixels(img):
    return img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)


def _pair(org, rec):
    a, b = _pixels(org), _pixels(rec)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def rel_err(org, rec):
    """Frobenius-norm relative error ``||org - rec|| / ||org||``."""
    a, b = _pair(org, rec)
    ref = np.linalg.norm(a)
    if ref == 0:
        raise ValueError("relative error is undefined for an all-zero original")
    return float(np.linalg.norm(a - b) / ref)


def max_dev(org, rec):
    """Largest absolute pixel difference, in grey levels."""
    a, b = _pair(org, rec)
    return float(np.abs(a - b).max())


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalised 1-d Gaussian taps; the 2-d window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation, keeping only positions where the window fits
    k = g.shape[0]
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim_map(org, rec, data_range=SSIM_RANGE):
    a, b = _pair(org, rec)
    if min(a.shape) < SSIM_WINDOW:
        raise DimensionError(f"image {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(org, rec, data_range=SSIM_RANGE):
    """Mean structural similarity over all full 11x11 Gaussian windows."""
    return float(ssim_map(org, rec, data_range).mean())


@dataclass(frozen=True)
class QualityReport:
    rel_err: float
    dev: float
    ssim: float

    @classmethod
    def compare(cls, org, rec):
        return cls(rel_err(org, rec), max_dev(org, rec), ssim(org, rec))

    def csv_row(self):
        return [repr(self.rel_err), repr(self.dev), repr(self.ssim)]


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    degenerate: bool = False

    @property
    def n_bins(self):
        return self.counts.shape[0]

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def n_samples(self):
        return int(self.counts.sum())


def coefficient_histogram(X, n_bins=100):
    """Equal-width histogram of every entry of ``X``.

    Bins span ``[min, max]`` with the top edge nudged up so the maximum lands
    inside the last bin. If all values are equal the result is a single bin
    holding everything, with ``degenerate`` set.
    """
    x = np.asarray(X, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("no coefficients to bin")
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        edges = np.array([lo - 0.5, lo + 0.5])
        return Histogram(edges, np.array([x.size], dtype=np.int64), degenerate=True)
    hi += 1e-12 * max(1.0, hi - lo)
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    return Histogram(edges, counts.astype(np.int64))


@dataclass(frozen=True)
class GaussianFit:
    """``amplitude * exp(-(c - m)^2 / (2 sigma^2))`` fitted to bin counts."""

    m: float
    sigma: float
    amplitude: float
    fit_residual: float

    def __call__(self, c):
        c = np.asarray(c, dtype=np.float64)
        return self.amplitude * np.exp(-((c - self.m) ** 2) / (2.0 * self.sigma**2))


@dataclass(frozen=True)
class PeakStats:
    peak_bin_indices: tuple = ()
    peak_count: int = 0
    peak_edges: tuple | None = None

    @property
    def empty(self):
        return not self.peak_bin_indices


def _gauss_parts(c, amp, m, s):
    z = (c - m) / s
    e = np.exp(-0.5 * z * z)
    f = amp * e
    # columns: d/dA, d/dm, d/dsigma
    J = np.column_stack([e, f * z / s, f * z * z / s])
    return f, J


def _gauss_newton(c, y, theta, max_iter, rtol):
    def sse(t):
        r = _gauss_parts(c, *t)[0] - y
        return float(r @ r)

    cost = sse(theta)
    for _ in range(max_iter):
        f, J = _gauss_parts(c, *theta)
        step, *_ = np.linalg.lstsq(J, y - f, rcond=None)
        lam = 1.0
        while lam > 1e-10:
            trial = theta + lam * step
            if trial[2] > 0 and (new := sse(trial)) <= cost:
                break
            lam *= 0.5
        else:
            break
        moved = np.linalg.norm(trial - theta) / max(np.linalg.norm(theta), 1e-300)
        theta, cost = trial, new
        if moved < rtol:
            break
    return theta, cost


def fit_gaussian(h, exclude=None, max_iter=100, rtol=1e-10):
    """Least-squares Gaussian through ``(bin centre, count)`` pairs.

    Bins in ``exclude`` (a :class:`PeakStats` or an index collection) are left
    out. Gauss-Newton, halving any step that does not lower the residual, runs
    from the count-weighted mean and spread of the remaining bins. Heavy
    tails can strand that start with a curve narrower than one bin, so a
    second run starts from the tallest bin, with a width matched to its
    larger neighbour; the lower residual wins.
    """
    if h.degenerate:
        raise ValueError("cannot fit a Gaussian to a degenerate histogram")
    keep = np.ones(h.n_bins, dtype=bool)
    if exclude is not None:
        idx = exclude.peak_bin_indices if isinstance(exclude, PeakStats) else exclude
        keep[list(idx)] = False
    c = h.centers[keep]
    y = h.counts[keep].astype(np.float64)
    if np.count_nonzero(y) < 3:
        raise ValueError("need at least 3 non-excluded bins with nonzero counts")
    width = h.edges[1] - h.edges[0]
    w = y / y.sum()
    m = float(w @ c)
    s = max(math.sqrt(float(w @ (c - m) ** 2)), width / 2)
    starts = [np.array([y.sum() * width / (s * math.sqrt(2 * math.pi)), m, s])]
    top = int(np.argmax(y))
    side = max(y[top - 1] if top > 0 else 0.0, y[top + 1] if top + 1 < y.size else 0.0)
    s_top = width * math.sqrt(0.5 / math.log(y[top] / side)) if 0 < side < y[top] else width / 2
    starts.append(np.array([y[top], c[top], s_top]))
    best = min((_gauss_newton(c, y, t, max_iter, rtol) for t in starts), key=lambda r: r[1])
    theta, cost = best
    rms = math.sqrt(cost / c.size)
    return GaussianFit(m=float(theta[1]), sigma=float(abs(theta[2])), amplitude=float(theta[0]), fit_residual=rms)


def _zero_bins(h):
    e = h.edges
    return [i for i in range(h.n_bins) if e[i] <= 0.0 <= e[i + 1]]


def detect_peak(h, fit, kappa=PEAK_KAPPA):
    """Contiguous bins around 0 whose counts exceed ``kappa`` times the fit."""
    if h.degenerate:
        return PeakStats((0,), int(h.counts[0]), (float(h.edges[0]), float(h.edges[1])))
    expected = fit(h.centers) if fit is not None else np.zeros(h.n_bins)
    above = h.counts > kappa * expected
    seeds = [i for i in _zero_bins(h) if above[i]]
    if not seeds:
        return PeakStats()
    lo, hi = min(seeds), max(seeds)
    while lo > 0 and above[lo - 1]:
        lo -= 1
    while hi < h.n_bins - 1 and above[hi + 1]:
        hi += 1
    idx = tuple(range(lo, hi + 1))
    return PeakStats(idx, int(h.counts[lo : hi + 1].sum()), (float(h.edges[lo]), float(h.edges[hi + 1])))


@dataclass(frozen=True)
class SparsityReport:
    histogram: Histogram
    fit: GaussianFit | None
    peak: PeakStats
    sparsity: float


def active_histogram(X, h):
    """Counts of the nonzero entries of ``X`` on the bins of ``h``."""
    x = np.asarray(X, dtype=np.float64).ravel()
    counts, _ = np.histogram(x[x != 0.0], bins=h.edges)
    return Histogram(h.edges, counts.astype(np.int64))


def analyze_coefficients(X, n_bins=100, kappa=PEAK_KAPPA):
    """Histogram, Gaussian fit and zero peak of a coefficient matrix.

    The Gaussian is fitted to the coefficients shrinkage left nonzero, binned
    on the same edges as the full histogram. Exact zeros pile up on top of it
    in the bin holding 0, and that excess is what :func:`detect_peak` finds.
    """
    h = coefficient_histogram(X, n_bins)
    frac = sparsity_fraction(X)
    if h.degenerate:
        return SparsityReport(h, None, detect_peak(h, None, kappa), frac)
    try:
        fit = fit_gaussian(active_histogram(X, h))
    except ValueError:
        fit = None
    return SparsityReport(h, fit, detect_peak(h, fit, kappa), frac)


def remove_peak(X, peak):
    """Zero every coefficient inside the peak's edges; returns ``(X', removed)``."""
    X = np.array(X, dtype=np.float64)
    if peak.empty:
        return X, 0
    lo, hi = peak.peak_edges
    inside = (X >= lo) & (X <= hi)
    removed = int(np.count_nonzero(inside))
    X[inside] = 0.0
    return X, removed


def remove_peak_and_rereconstruct(X, peak, D, grid, original, unit=False):
    """Drop the peak coefficients and rebuild the image from what is left.

    Returns ``(X', removed, reconstruction)``.
    """
    from .image import reconstruct_from_codes

    Xp, removed = remove_peak(X, peak)
    rec, _ = reconstruct_from_codes(Xp, D, grid, original, unit)
    return Xp, removed, rec


def difference_image(org, rec, scale=50.0, invert=True):
    """``|org - rec|`` magnified by ``scale`` and clipped to [0, 255]; white means equal when inverted."""
    a, b = _pair(org, rec)
    out = np.clip(scale * np.abs(a - b), 0.0, 255.0)
    return GrayImage(255.0 - out if invert else out)


def sparsity_fraction(X):
    """Share of coefficients that are exactly 0.0."""
    X = np.asarray(X)
    if X.size == 0:
        raise ValueError("no coefficients")
    return float(np.count_nonzero(X == 0) / X.size)


def histogram_csv(h, fit=None, peak=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "low", "high", "center", "count", "fitted", "in_peak"])
    fitted = fit(h.centers) if fit is not None else np.full(h.n_bins, np.nan)
    in_peak = set(peak.peak_bin_indices) if peak is not None else set()
    for i in range(h.n_bins):
        w.writerow([
            i, repr(float(h.edges[i])), repr(float(h.edges[i + 1])), repr(float(h.centers[i])),
            int(h.counts[i]), repr(float(fitted[i])), int(i in in_peak),
        ])
    return buf.getvalue()


def report_csv(report):
    """One-row summary of a :class:`SparsityReport`."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "sigma", "fit_residual", "peak_count", "peak_low", "peak_high",
                "sparsity_fraction", "degenerate"])
    fit, peak = report.fit, report.peak
    lo, hi = peak.peak_edges if peak.peak_edges else (float("nan"), float("nan"))
    nan = float("nan")
    w.writerow([
        repr(fit.m if fit else nan), repr(fit.sigma if fit else nan),
        repr(fit.fit_residual if fit else nan), peak.peak_count, repr(lo), repr(hi),
        repr(report.sparsity), int(report.histogram.degenerate),
    ])
    return buf.getvalue()
