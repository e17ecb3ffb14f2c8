"""Command-line experiment runner for learning, reconstruction and analysis.

Every option can also come from a flat ``key = value`` config file
(``--config``); flags given on the command line win. Keys are the long flag
names without the leading dashes. The manifest each command writes uses the
same format, so ``--config run/manifest.cfg`` repeats a run.
"""

import argparse
import csv
import hashlib
import io
import math
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .analysis import (
    QualityReport,
    analyze_coefficients,
    difference_image,
    histogram_csv,
    remove_peak_and_rereconstruct,
    report_csv,
)
from .image import (
    PatchGrid,
    n_threads,
    overcomplete_dct_dictionary,
    reconstruct_image,
    sample_training_set,
)
from .learn import LearnConfig, learn_dictionary
from .types import DimensionError, Dictionary, FormatError, SolverError, SolverId, SolverSettings

DEFAULTS = {
    "images": [],
    "test": [],
    "dict": None,
    "codes": None,
    "solver": ["fpcbb"],
    "mu": [2.0**-4],
    "patch": [8],
    "stride": 2,
    "atoms": 256,
    "n_patches": 2000,
    "seed": 0,
    "eps1": None,
    "eps2": None,
    "max_iters": 50_000,
    "bcd_sweeps": 100,
    "bcd_tol": 1e-8,
    "kappa": 3.0,
    "bins": 100,
    "unit": False,
    "out": ".",
}
LIST_KEYS = {"images", "test", "solver", "mu", "patch"}
META_KEYS = {"command", "version", "image_sha256"}


class UsageError(Exception):
    """Bad flags, config entries or missing inputs; exits with status 2."""


def parse_mu(text):
    """Accept plain numbers and powers of two written ``2^-4`` or ``2**-4``."""
    t = str(text).strip().replace("**", "^")
    try:
        if "^" in t:
            base, exp = t.split("^", 1)
            val = float(base) ** float(exp)
        else:
            val = float(t)
    except ValueError:
        raise UsageError(f"cannot read mu value {text!r}") from None
    if not val > 0 or not math.isfinite(val):
        raise UsageError(f"mu must be positive, got {text!r}")
    return val


def _int(key, text, lo=1):
    try:
        v = int(str(text).strip())
    except ValueError:
        raise UsageError(f"{key} must be an integer, got {text!r}") from None
    if v < lo:
        raise UsageError(f"{key} must be at least {lo}, got {v}")
    return v


def _float(key, text):
    try:
        v = float(str(text).strip())
    except ValueError:
        raise UsageError(f"{key} must be a number, got {text!r}") from None
    if not v > 0:
        raise UsageError(f"{key} must be positive, got {v}")
    return v


def _bool(key, text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"{key} must be true or false, got {text!r}")


def _split(text):
    return [p.strip() for p in str(text).split(",") if p.strip()]


def _solver(text):
    try:
        return SolverId.parse(text).value
    except ValueError as exc:
        raise UsageError(str(exc)) from None


CONVERT = {
    "images": lambda k, v: _split(v),
    "test": lambda k, v: _split(v),
    "solver": lambda k, v: [_solver(s) for s in _split(v)],
    "mu": lambda k, v: [parse_mu(s) for s in _split(v)],
    "patch": lambda k, v: [_int(k, s, 2) for s in _split(v)],
    "stride": _int,
    "atoms": _int,
    "n_patches": _int,
    "seed": lambda k, v: _int(k, v, 0),
    "eps1": _float,
    "eps2": _float,
    "max_iters": _int,
    "bcd_sweeps": _int,
    "bcd_tol": _float,
    "kappa": _float,
    "bins": _int,
    "unit": _bool,
    "dict": lambda k, v: str(v).strip() or None,
    "codes": lambda k, v: str(v).strip() or None,
    "out": lambda k, v: str(v).strip(),
}


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key in META_KEYS:
            continue
        if key not in CONVERT:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        # optional keys are written back empty when unset
        out[key] = None if value == "" and DEFAULTS[key] is None else CONVERT[key](key, value)
    return out


def _fmt(value):
    if isinstance(value, list):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def manifest_text(command, opts, images=()):
    lines = [f"command = {command}", f"version = {__version__}"]
    for key in DEFAULTS:
        lines.append(f"{key} = {_fmt(opts[key])}")
    if images:
        digests = []
        for p in images:
            digests.append(hashlib.sha256(Path(p).read_bytes()).hexdigest())
        lines.append(f"image_sha256 = {','.join(digests)}")
    return "\n".join(lines) + "\n"


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--config", help="flat key = value file; flags override it")
    a("--images", action="append", help="input image path (repeatable or comma separated)")
    a("--test", action="append", help="held-out image for sweep (repeatable)")
    a("--dict", help="dictionary artifact")
    a("--codes", help="coefficient matrix artifact")
    a("--solver", action="append", help="ista, fista, fpcbb or twist (repeatable for sweep)")
    a("--mu", action="append", help="sparsity weight, e.g. 0.0625 or 2^-4 (repeatable)")
    a("--patch", action="append", help="patch side (repeatable for sweep)")
    a("--stride")
    a("--atoms")
    a("--n-patches", dest="n_patches")
    a("--seed")
    a("--eps1", help="relative tolerance while learning")
    a("--eps2", help="relative tolerance while reconstructing")
    a("--max-iters", dest="max_iters")
    a("--bcd-sweeps", dest="bcd_sweeps")
    a("--bcd-tol", dest="bcd_tol")
    a("--kappa")
    a("--bins")
    a("--unit", action="store_const", const="true", help="solve on pixels scaled to [0, 1]")
    a("--out", help="output directory")

    p = argparse.ArgumentParser(prog="sparsedict", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("learn", parents=[common], help="learn a dictionary from training images")
    sub.add_parser("reconstruct", parents=[common], help="reconstruct images with a dictionary")
    sub.add_parser("analyze", parents=[common], help="histogram and peak analysis of codes")
    sub.add_parser("sweep", parents=[common], help="grid over solver, mu and patch side")
    return p


def resolve(args):
    """Merge defaults, config file and flags (in rising priority)."""
    opts = dict(DEFAULTS)
    if args.config:
        opts.update(read_config(args.config))
    for key, conv in CONVERT.items():
        raw = getattr(args, key, None)
        if raw is None:
            continue
        if key in LIST_KEYS:
            opts[key] = [v for item in raw for v in conv(key, item)]
        else:
            opts[key] = conv(key, raw)
    if not opts["mu"]:
        raise UsageError("at least one --mu value is required")
    if not opts["solver"]:
        raise UsageError("at least one --solver is required")
    if not opts["patch"]:
        raise UsageError("at least one --patch side is required")
    return opts


def _need_files(paths, what):
    if not paths:
        raise UsageError(f"no {what} given")
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"{what} not found: {p}")


def _load_images(paths):
    return [sio.load_image_grayscale(p) for p in paths]


def _settings(opts, mu, solver, eps):
    return SolverSettings(mu=mu, eps_rel=eps, max_iters=opts["max_iters"], solver_id=solver)


def _out(opts):
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8", newline="")


def _csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _tag(x):
    return repr(float(x)).replace(".", "p").replace("-", "m")


def _learn(opts, images, solver, mu, side):
    D0 = overcomplete_dct_dictionary(side, opts["atoms"])
    patches = sample_training_set(
        images, side, opts["stride"], opts["n_patches"], opts["seed"], unit=opts["unit"]
    )
    cfg = LearnConfig(
        n_patches=opts["n_patches"],
        settings=_settings(opts, mu, solver, opts["eps1"]),
        rng_seed=opts["seed"],
        bcd_max_sweeps=opts["bcd_sweeps"],
        bcd_tol=opts["bcd_tol"],
    )
    return learn_dictionary(D0, patches, cfg)


def cmd_learn(opts):
    _need_files(opts["images"], "training image")
    if len(opts["patch"]) != 1 or len(opts["mu"]) != 1 or len(opts["solver"]) != 1:
        raise UsageError("learn takes a single --patch, --mu and --solver")
    images = _load_images(opts["images"])
    out = _out(opts)
    D, log = _learn(opts, images, opts["solver"][0], opts["mu"][0], opts["patch"][0])
    sio.save(out / "dictionary.bin", D)
    _write(out / "learn_log.csv", log.to_csv())
    _write(out / "manifest.cfg", manifest_text("learn", opts, opts["images"]))
    return 0


def cmd_reconstruct(opts):
    _need_files(opts["images"], "image")
    _need_files([opts["dict"]] if opts["dict"] else [], "dictionary")
    D = sio.load(opts["dict"], sio.KIND_DICTIONARY)
    side = opts["patch"][0]
    if D.atom_dim != side * side:
        raise DimensionError(
            f"dictionary atoms have dimension {D.atom_dim}, --patch {side} needs {side * side}"
        )
    out = _out(opts)
    rows = [["image", "solver", "mu", "rel_err", "dev", "ssim", "criterion_met", "uncovered_pixels"]]
    for path in opts["images"]:
        img = sio.load_image_grayscale(path)
        stem = Path(path).stem
        for solver in opts["solver"]:
            for mu in opts["mu"]:
                st = _settings(opts, mu, solver, opts["eps2"])
                rec, X, rep = reconstruct_image(img, D, st, side, opts["stride"], unit=opts["unit"])
                name = f"{stem}_{solver}_mu{_tag(mu)}"
                sio.write_pgm(out / f"rec_{name}.pgm", rec)
                sio.save(out / f"codes_{name}.bin", X)
                q = QualityReport.compare(img, rec)
                rows.append([path, solver, repr(mu), *q.csv_row(), int(rep.criterion_met), rep.uncovered_pixels])
    _write(out / "quality.csv", _csv(rows))
    _write(out / "manifest.cfg", manifest_text("reconstruct", opts, opts["images"]))
    return 0


def cmd_analyze(opts):
    _need_files([opts["codes"]] if opts["codes"] else [], "coefficient artifact")
    X = sio.load(opts["codes"], sio.KIND_CODES)
    out = _out(opts)
    rep = analyze_coefficients(X, opts["bins"], opts["kappa"])
    _write(out / "histogram.csv", histogram_csv(rep.histogram, rep.fit, rep.peak))
    _write(out / "sparsity.csv", report_csv(rep))
    if opts["dict"] and opts["images"]:
        _need_files([opts["dict"], opts["images"][0]], "input")
        D = sio.load(opts["dict"], sio.KIND_DICTIONARY)
        img = sio.load_image_grayscale(opts["images"][0])
        side = math.isqrt(D.atom_dim)
        grid = PatchGrid(side, opts["stride"], img.shape)
        if X.shape != (D.n_atoms, grid.n_patches):
            raise DimensionError(f"codes {X.shape} do not fit dictionary and image grid")
        Xp, removed, rec = remove_peak_and_rereconstruct(X, rep.peak, D, grid, img, opts["unit"])
        q = QualityReport.compare(img, rec)
        rows = [["removed", "rel_err", "dev", "ssim"], [removed, *q.csv_row()]]
        _write(out / "peak_removed.csv", _csv(rows))
        sio.write_pgm(out / "peak_removed.pgm", rec)
        sio.write_pgm(out / "difference.pgm", difference_image(img, rec))
    _write(out / "manifest.cfg", manifest_text("analyze", opts))
    return 0


SWEEP_HEADER = ["solver", "mu", "patch", "rel_err", "dev", "ssim", "m", "sigma",
                "peak_count", "sparsity_fraction", "error"]


def sweep_cell(opts, train, tests, solver, mu, side):
    """Learn at one grid point and score it on the held-out images."""
    try:
        D, _ = _learn(opts, train, solver, mu, side)
        st = _settings(opts, mu, solver, opts["eps2"])
        quals, codes = [], []
        for img in tests:
            rec, X, _ = reconstruct_image(img, D, st, side, opts["stride"], threads=1, unit=opts["unit"])
            quals.append(QualityReport.compare(img, rec))
            codes.append(X)
        rep = analyze_coefficients(np.hstack(codes), opts["bins"], opts["kappa"])
        fit = rep.fit
        return [
            solver, repr(mu), side,
            repr(float(np.mean([q.rel_err for q in quals]))),
            repr(float(np.max([q.dev for q in quals]))),
            repr(float(np.mean([q.ssim for q in quals]))),
            repr(fit.m if fit else float("nan")), repr(fit.sigma if fit else float("nan")),
            rep.peak.peak_count, repr(rep.sparsity), "",
        ]
    except Exception as exc:  # a failed cell is reported in its row
        msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        return [solver, repr(mu), side] + [""] * 7 + [msg]


def cmd_sweep(opts):
    _need_files(opts["images"], "training image")
    tests = opts["test"] or opts["images"]
    _need_files(tests, "test image")
    train = _load_images(opts["images"])
    held = _load_images(tests)
    cells = [(s, mu, p) for s in opts["solver"] for mu in opts["mu"] for p in opts["patch"]]
    workers = min(n_threads(), len(cells))
    with ThreadPoolExecutor(workers) as pool:
        rows = list(pool.map(lambda c: sweep_cell(opts, train, held, *c), cells))
    out = _out(opts)
    _write(out / "sweep.csv", _csv([SWEEP_HEADER] + rows))
    _write(out / "manifest.cfg", manifest_text("sweep", opts, opts["images"] + opts["test"]))
    return 0 if all(not r[-1] for r in rows) else 1


COMMANDS = {
    "learn": cmd_learn,
    "reconstruct": cmd_reconstruct,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sparsedict: error: {exc}", file=sys.stderr)
        return 2
    except (DimensionError, FormatError, SolverError, ValueError, OSError) as exc:
        print(f"sparsedict: {type(exc).__name__}: {exc}", file=sys.stderr)
        if os.environ.get("SPARSEDICT_DEBUG"):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
