"""Shared domain types, validation, and bit-exact file I/O.

Datasets travel as CSV (header ``x1,...,xp,y``), source estimates as a JSON
bundle, and posterior draws as one checksummed JSON file per chain. Draw
serialization goes through ``repr``-exact floats so a save/load round trip
reproduces every value bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "CorruptionError",
    "NumericalError",
    "SimulationError",
    "DigestMismatchWarning",
    "Dataset",
    "SourceEstimate",
    "TraderConfig",
    "PosteriorDraws",
    "PosteriorSummary",
    "derive_seed",
    "substream",
    "load_dataset",
    "save_dataset",
    "load_sources",
    "save_sources",
    "save_draws",
    "load_draws",
    "save_draws_bundle",
    "load_draws_bundle",
]


class DataError(ValueError):
    """Raised when an input file or in-memory structure fails validation."""


class CorruptionError(DataError):
    """Raised when a stored artifact fails its checksum or cannot be parsed."""


class NumericalError(RuntimeError):
    """Raised when a sampler update hits a numerical failure.

    Attributes
    ----------
    pivot : int or None
        Offending pivot index for Cholesky failures.
    iteration : int or None
        Sampler iteration at which the failure occurred, when known.
    """

    def __init__(self, message, pivot=None, iteration=None, chain_id=None):
        super().__init__(message)
        self.pivot = pivot
        self.iteration = iteration
        self.chain_id = chain_id


class SimulationError(ValueError):
    """Raised for invalid simulation specifications."""


class DigestMismatchWarning(UserWarning):
    """Emitted when loaded draws carry a different config digest than expected."""


def derive_seed(seed: int, *path: int) -> int:
    """Derive an independent 64-bit child seed from ``seed`` and an integer path.

    Children for distinct paths come from distinct SeedSequence entropy
    pools, so streams never collide across chains, replications, or
    validation fits.
    """
    ss = np.random.SeedSequence([int(seed), *[int(t) for t in path]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator on the independent substream addressed by ``path``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(t) for t in path]]))


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """A regression dataset: covariates ``x`` (n x p) and response ``y`` (n).

    ``has_intercept`` records whether an unpenalized intercept is modeled as
    a separate term; the intercept is never stored as a column of ``x``.
    """

    x: np.ndarray
    y: np.ndarray
    has_intercept: bool = False

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim != 2:
            raise DataError("x must be a 2-d matrix")
        n, p = x.shape
        if n < 1 or p < 1:
            raise DataError(f"dataset needs n >= 1 and p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise DataError(f"y length {y.shape[0]} does not match n={n}")
        bad = np.argwhere(~np.isfinite(x))
        if bad.size:
            i, j = bad[0]
            raise DataError(f"non-finite value in x at (row {i}, column {j})")
        bad = np.argwhere(~np.isfinite(y))
        if bad.size:
            raise DataError(f"non-finite value in y at row {bad[0][0]}")
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "y", _freeze(y))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.x[rows], self.y[rows], self.has_intercept)


@dataclass(frozen=True)
class SourceEstimate:
    """A source study's fitted coefficient vector (and optional intercept)."""

    id: str
    omega_hat: np.ndarray
    intercept_hat: float | None = None

    def __post_init__(self):
        omega = np.asarray(self.omega_hat, dtype=float).ravel()
        if omega.size < 1:
            raise DataError(f"source {self.id!r}: empty omega_hat")
        if not np.all(np.isfinite(omega)):
            raise DataError(f"source {self.id!r}: non-finite omega_hat entry")
        if float(np.linalg.norm(omega)) == 0.0:
            raise DataError(f"zero-norm source: {self.id!r}")
        object.__setattr__(self, "omega_hat", _freeze(omega))

    @property
    def p(self) -> int:
        return self.omega_hat.shape[0]


@dataclass(frozen=True)
class TraderConfig:
    """Run configuration for guided and plain horseshoe fits.

    ``psi_hat`` is the prior guess of the number of informative elements;
    ``None`` resolves to p/2 when the global scale is selected. ``zeta`` is
    the Dirichlet concentration of the zero component and ``nu`` the shape
    and rate of the inverse-gamma prior on the noise variance.
    """

    psi_hat: float | None = None
    tau_override: float | None = None
    zeta: float = 1.0
    nu: float = 0.01
    validation_fraction: float = 1.0 / 3.0
    n_warmup: int = 2000
    n_samples: int = 2000
    n_chains: int = 4
    seed: int = 0
    eta_proposal_concentration: float = 50.0
    ci_level: float = 0.95
    theta_floor: float = 0.01

    def __post_init__(self):
        if self.psi_hat is not None and self.psi_hat <= 0:
            raise ValueError("psi_hat must be positive")
        if self.tau_override is not None and self.tau_override <= 0:
            raise ValueError("tau_override must be positive")
        if self.zeta <= 0 or self.nu <= 0 or self.theta_floor <= 0:
            raise ValueError("zeta, nu, theta_floor must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0,1)")
        if min(self.n_warmup, self.n_samples, self.n_chains) < 1:
            raise ValueError("n_warmup, n_samples, n_chains must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.eta_proposal_concentration <= 0:
            raise ValueError("eta_proposal_concentration must be positive")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0,1)")

    def digest(self) -> str:
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "TraderConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained draws of one chain.

    ``beta`` is S x p, ``lambda2`` the squared local scales (S x p), ``eta``
    the simplex weights (S x (K+1); a single all-ones column when K=0), and
    ``intercept`` is present iff the model included one. ``tau`` is the
    fixed global scale of the run.
    """

    beta: np.ndarray
    sigma2: np.ndarray
    lambda2: np.ndarray
    eta: np.ndarray
    tau: float
    chain_id: int
    config_digest: str
    intercept: np.ndarray | None = None

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        sigma2 = np.asarray(self.sigma2, dtype=float).ravel()
        lambda2 = np.asarray(self.lambda2, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        s, p = beta.shape
        if sigma2.shape != (s,) or lambda2.shape != (s, p) or eta.shape[0] != s:
            raise DataError("draw arrays have inconsistent shapes")
        for name, arr in (("beta", beta), ("sigma2", sigma2), ("lambda2", lambda2), ("eta", eta)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite value in {name} draws")
        if np.any(sigma2 <= 0):
            raise DataError("sigma2 draws must be strictly positive")
        if np.any(lambda2 <= 0):
            raise DataError("lambda2 draws must be strictly positive")
        if np.any(eta < 0) or np.any(np.abs(eta.sum(axis=1) - 1.0) > 1e-12):
            raise DataError("eta rows must be nonnegative and sum to 1 within 1e-12")
        if not self.tau > 0:
            raise DataError("tau must be positive")
        object.__setattr__(self, "beta", _freeze(beta))
        object.__setattr__(self, "sigma2", _freeze(sigma2))
        object.__setattr__(self, "lambda2", _freeze(lambda2))
        object.__setattr__(self, "eta", _freeze(eta))
        if self.intercept is not None:
            intercept = np.asarray(self.intercept, dtype=float).ravel()
            if intercept.shape != (s,):
                raise DataError("intercept draws must have length S")
            if not np.all(np.isfinite(intercept)):
                raise DataError("non-finite value in intercept draws")
            object.__setattr__(self, "intercept", _freeze(intercept))

    @property
    def n_retained(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1]


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-coefficient posterior mean, median, and equal-tailed interval."""

    mean: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    selected: np.ndarray
    level: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        median = np.asarray(self.median, dtype=float).ravel()
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        selected = np.asarray(self.selected, dtype=bool).ravel()
        p = mean.shape[0]
        if not (median.shape[0] == lower.shape[0] == upper.shape[0] == selected.shape[0] == p):
            raise DataError("summary fields have inconsistent lengths")
        if np.any(lower > median) or np.any(median > upper):
            raise DataError("summary must satisfy lower <= median <= upper")
        object.__setattr__(self, "mean", _freeze(mean))
        object.__setattr__(self, "median", _freeze(median))
        object.__setattr__(self, "lower", _freeze(lower))
        object.__setattr__(self, "upper", _freeze(upper))
        sel = np.array(selected, dtype=bool)
        sel.setflags(write=False)
        object.__setattr__(self, "selected", sel)

    @property
    def p(self) -> int:
        return self.mean.shape[0]


def load_dataset(path, format: str = "csv_xy", has_intercept: bool = False) -> Dataset:
    """Read a dataset from CSV with a header row; the response column is ``y``.

    All non-``y`` columns become covariates in file order. Malformed
    numbers, ragged rows, a missing response column, or non-finite values
    raise :class:`DataError` naming the offending row and column.
    """
    if format != "csv_xy":
        raise DataError(f"unknown dataset format: {format!r}")
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no rows") from None
        header = [h.strip() for h in header]
        if "y" not in header:
            raise DataError(f"{path}: missing 'y' column")
        y_col = header.index("y")
        x_cols = [i for i in range(len(header)) if i != y_col]
        xs, ys = [], []
        for r, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(f"{path}: ragged row {r} (expected {len(header)} fields, got {len(row)})")
            vals = []
            for i, tok in enumerate(row):
                try:
                    v = float(tok)
                except ValueError:
                    raise DataError(
                        f"{path}: malformed number at (row {r}, column {header[i]!r})"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value at (row {r}, column {header[i]!r})")
                vals.append(v)
            xs.append([vals[i] for i in x_cols])
            ys.append(vals[y_col])
    if not xs:
        raise DataError(f"{path}: no rows")
    if not x_cols:
        raise DataError(f"{path}: no covariate columns")
    return Dataset(np.array(xs), np.array(ys), has_intercept)


def save_dataset(data: Dataset, path) -> None:
    """Write a dataset as ``x1,...,xp,y`` CSV with round-trip-exact floats."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(data.p)] + ["y"])
        for i in range(data.n):
            writer.writerow([repr(float(v)) for v in data.x[i]] + [repr(float(data.y[i]))])


def load_sources(path) -> list[SourceEstimate]:
    """Read a JSON source bundle: ``[{id, omega_hat[, intercept_hat]}]``.

    All vectors must share one length; mismatches and zero-norm vectors
    raise :class:`DataError` naming the source id.
    """
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(records, list):
        raise DataError(f"{path}: expected a JSON array of sources")
    sources = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "omega_hat" not in rec:
            raise DataError(f"{path}: source {i} lacks an 'omega_hat' field")
        sid = str(rec.get("id", f"source_{i + 1}"))
        intercept = rec.get("intercept_hat")
        sources.append(
            SourceEstimate(sid, np.asarray(rec["omega_hat"], dtype=float), intercept)
        )
    if sources:
        p0 = sources[0].p
        for src in sources[1:]:
            if src.p != p0:
                raise DataError(f"length mismatch: {src.id}")
    return sources


def save_sources(sources: list[SourceEstimate], path) -> None:
    records = []
    for src in sources:
        rec = {"id": src.id, "omega_hat": [float(v) for v in src.omega_hat]}
        if src.intercept_hat is not None:
            rec["intercept_hat"] = float(src.intercept_hat)
        records.append(rec)
    Path(path).write_text(json.dumps(records))


def _draws_payload(draws: PosteriorDraws) -> dict:
    payload = {
        "chain_id": int(draws.chain_id),
        "tau": float(draws.tau),
        "config_digest": draws.config_digest,
        "beta": draws.beta.tolist(),
        "sigma2": draws.sigma2.tolist(),
        "lambda2": draws.lambda2.tolist(),
        "eta": draws.eta.tolist(),
        "intercept": None if draws.intercept is None else draws.intercept.tolist(),
    }
    return payload


def save_draws(draws: PosteriorDraws, path) -> None:
    """Write one chain's draws as checksummed JSON.

    The file is a single JSON line followed by a ``sha256:<hex>`` trailer;
    json round-trips Python floats through ``repr`` so reloading is
    value-exact.
    """
    blob = json.dumps(_draws_payload(draws), separators=(",", ":"))
    checksum = hashlib.sha256(blob.encode()).hexdigest()
    Path(path).write_text(blob + "\nsha256:" + checksum + "\n")


def load_draws(path, expected_digest: str | None = None) -> PosteriorDraws:
    """Load one chain's draws, verifying the content checksum.

    A checksum or parse failure raises :class:`CorruptionError`. If
    ``expected_digest`` is given and differs from the stored config digest,
    a :class:`DigestMismatchWarning` is emitted (the draws still load).
    """
    path = Path(path)
    text = path.read_text()
    lines = text.strip().split("\n")
    if len(lines) != 2 or not lines[1].startswith("sha256:"):
        raise CorruptionError(f"{path}: missing or malformed checksum trailer")
    blob, stored = lines[0], lines[1][len("sha256:"):]
    if hashlib.sha256(blob.encode()).hexdigest() != stored:
        raise CorruptionError(f"{path}: checksum mismatch (file corrupted or truncated)")
    try:
        payload = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"{path}: cannot parse draws payload ({exc})") from None
    if expected_digest is not None and payload["config_digest"] != expected_digest:
        warnings.warn(
            f"{path}: draws were produced under config digest {payload['config_digest']}, "
            f"expected {expected_digest}",
            DigestMismatchWarning,
            stacklevel=2,
        )
    return PosteriorDraws(
        beta=np.asarray(payload["beta"], dtype=float),
        sigma2=np.asarray(payload["sigma2"], dtype=float),
        lambda2=np.asarray(payload["lambda2"], dtype=float),
        eta=np.asarray(payload["eta"], dtype=float),
        tau=payload["tau"],
        chain_id=payload["chain_id"],
        config_digest=payload["config_digest"],
        intercept=None if payload["intercept"] is None else np.asarray(payload["intercept"], dtype=float),
    )


def save_draws_bundle(all_draws: list[PosteriorDraws], out_dir, seed: int) -> None:
    """Write one file per chain plus a manifest carrying tau, seed, digest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for draws in all_draws:
        name = f"chain_{draws.chain_id}.json"
        save_draws(draws, out_dir / name)
        files.append(name)
    manifest = {
        "tau": float(all_draws[0].tau),
        "seed": int(seed),
        "config_digest": all_draws[0].config_digest,
        "n_chains": len(all_draws),
        "files": files,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_draws_bundle(in_dir) -> list[PosteriorDraws]:
    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{in_dir}: no draws manifest found")
    manifest = json.loads(manifest_path.read_text())
    return [
        load_draws(in_dir / name, expected_digest=manifest["config_digest"])
        for name in manifest["files"]
    ]
