"""One-dimensional sampling designs: SI, STSI and Poisson.

Each design exposes first- and second-order inclusion probabilities through
scalar accessors (the "generic" route, used by the brute-force checks) and
through structured operators that exploit the block form of the covariance
matrix ``Delta`` (the "fast" route).

For SI and STSI the covariance matrix restricted to a stratum ``h`` is a
scaled centering projector, ``Delta_h = c_h * N_h / (N_h - 1) * C_h`` with
``c_h = pi_h (1 - pi_h)`` and ``C_h = I - J / N_h``.  Over a realized sample
the matrix of ratios ``Delta_ij / pi_ij`` has the same shape, with scale
``(1 - pi_h) n_h / (n_h - 1)``.  Poisson sampling gives diagonal matrices.
Because ``C_h`` is idempotent, every such matrix factors as ``T.T @ T`` and
quadratic forms become sums of squares, which keeps the simplified variance
estimators non-negative in floating point as well as in exact arithmetic.

Indices are 0-based throughout the library; file formats are 1-based.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "DesignSpec",
    "CrossSample",
    "DesignError",
    "DesignSyntaxError",
    "ZeroJointProbabilityError",
    "parse_design",
    "enumerate_cross",
    "MAX_ENUMERATION",
]

MAX_ENUMERATION = 1_000_000


class DesignError(ValueError):
    """Invalid design parameters or an operation the design does not support."""


class ZeroJointProbabilityError(DesignError):
    """A pair of sampled units has zero joint inclusion probability."""


class DesignSyntaxError(DesignError):
    """Malformed design string; ``position`` is the 0-based offending column."""

    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        caret = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {text}\n  {caret}")


@dataclass(frozen=True)
class CrossSample:
    """Sorted 0-based row (``S_M``) and column (``S_D``) index sets."""

    rows: np.ndarray
    cols: np.ndarray

    def __post_init__(self):
        rows = np.unique(np.asarray(self.rows, dtype=np.intp))
        cols = np.unique(np.asarray(self.cols, dtype=np.intp))
        if rows.size != np.asarray(self.rows).size or cols.size != np.asarray(self.cols).size:
            raise DesignError("duplicate indices in cross sample")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows.size, self.cols.size)

    def check(self, n_rows: int, n_cols: int) -> None:
        for name, idx, size in (("row", self.rows, n_rows), ("column", self.cols, n_cols)):
            if idx.size and (idx[0] < 0 or idx[-1] >= size):
                raise IndexError(f"{name} index out of range [0, {size})")


def _along(x: np.ndarray, axis: int, values: np.ndarray) -> np.ndarray:
    """Reshape a 1-D per-unit vector so it broadcasts along ``axis`` of ``x``."""
    shape = [1] * x.ndim
    shape[axis] = -1
    return values.reshape(shape)


def _block_center(x: np.ndarray, starts: np.ndarray, sizes: np.ndarray, axis: int, overwrite: bool = False) -> np.ndarray:
    # Shift by the first element of each block before averaging: exact zeros
    # for block-constant input, and less cancellation in general.
    if starts.size == 1:
        # one block spanning the axis: plain broadcasting, no repeats
        first = np.take(x, starts, axis=axis)
        if overwrite:
            x -= first
            shifted = x
        else:
            shifted = x - first
        shifted -= shifted.mean(axis=axis, keepdims=True)
        return shifted
    x = np.moveaxis(x, axis, 0)
    shifted = x - np.repeat(x[starts], sizes, axis=0)
    sums = np.add.reduceat(shifted, starts, axis=0)
    means = sums / sizes.reshape((-1,) + (1,) * (x.ndim - 1))
    out = shifted - np.repeat(means, sizes, axis=0)
    return np.moveaxis(out, 0, axis)


class DesignSpec:
    """A sampling design on a population of ``population_size`` units.

    Build with :meth:`si`, :meth:`stsi` or :meth:`poisson`.  Instances are
    immutable and safe to share between threads and processes.
    """

    __slots__ = ("kind", "population_size", "_strata", "_pi")

    def __init__(self, kind: str, population_size: int, strata=None, probs=None):
        self.kind = kind
        self.population_size = int(population_size)
        self._strata = strata
        if kind in ("si", "stsi"):
            sizes = np.array([s[0] for s in strata], dtype=np.intp)
            takes = np.array([s[1] for s in strata], dtype=np.intp)
            self._pi = np.repeat(takes / sizes, sizes)
        else:
            self._pi = probs
        self._pi.setflags(write=False)

    # -- construction -------------------------------------------------------

    @classmethod
    def si(cls, population_size: int, n: int) -> DesignSpec:
        """Simple random sampling without replacement of ``n`` out of ``N``."""
        N, n = int(population_size), int(n)
        if N < 1:
            raise DesignError("population size must be positive")
        if not 1 <= n <= N:
            raise DesignError(f"SI sample size n={n} must satisfy 1 <= n <= N={N}")
        return cls("si", N, strata=((N, n),))

    @classmethod
    def stsi(cls, strata: Sequence[tuple[int, int]], population_size: int | None = None) -> DesignSpec:
        """Stratified SI over contiguous blocks given as ``(N_h, n_h)`` pairs."""
        strata = tuple((int(N_h), int(n_h)) for N_h, n_h in strata)
        if not strata:
            raise DesignError("STSI needs at least one stratum")
        for h, (N_h, n_h) in enumerate(strata, start=1):
            if N_h < 1 or not 1 <= n_h <= N_h:
                raise DesignError(f"stratum {h}: need 1 <= n_h <= N_h, got {N_h}:{n_h}")
        total = sum(N_h for N_h, _ in strata)
        if population_size is not None and total != int(population_size):
            raise DesignError(f"strata sizes sum to {total}, population has {population_size}")
        return cls("stsi", total, strata=strata)

    @classmethod
    def poisson(cls, probs, population_size: int | None = None) -> DesignSpec:
        """Poisson sampling; ``probs`` is a scalar (with ``population_size``) or a vector."""
        probs = np.asarray(probs, dtype=float)
        if probs.ndim == 0:
            if population_size is None:
                raise DesignError("scalar Poisson probability needs a population size")
            probs = np.full(int(population_size), float(probs))
        probs = probs.ravel().copy()
        if population_size is not None and probs.size != int(population_size):
            raise DesignError(f"{probs.size} probabilities for a population of {population_size}")
        if probs.size < 1:
            raise DesignError("population size must be positive")
        if not np.all((probs >= 0.0) & (probs <= 1.0)):
            raise DesignError("Poisson probabilities must lie in [0, 1]")
        return cls("poisson", probs.size, probs=probs)

    # -- description --------------------------------------------------------

    @property
    def fixed_size(self) -> bool:
        return self.kind != "poisson"

    @property
    def strata(self) -> tuple[tuple[int, int], ...]:
        if self._strata is None:
            raise DesignError("Poisson designs have no strata")
        return self._strata

    @property
    def pi(self) -> np.ndarray:
        """First-order inclusion probabilities, one per unit (read-only)."""
        return self._pi

    @property
    def expected_size(self) -> float:
        if self.fixed_size:
            return float(sum(n_h for _, n_h in self._strata))
        return float(self._pi.sum())

    def describe(self) -> str:
        """The design in the text grammar accepted by :func:`parse_design`."""
        if self.kind == "si":
            return f"si(n={self._strata[0][1]})"
        if self.kind == "stsi":
            return "stsi(" + ",".join(f"{N}:{n}" for N, n in self._strata) + ")"
        if np.all(self._pi == self._pi[0]):
            return f"poisson(p={self._pi[0]!r})"
        return f"poisson(probs=<{self.population_size} values>)"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "population_size": self.population_size, "text": self.describe()}
        if self.kind == "si":
            out["n"] = self._strata[0][1]
        elif self.kind == "stsi":
            out["strata"] = [list(s) for s in self._strata]
        else:
            out["probs"] = self._pi.tolist()
        return out

    def __repr__(self) -> str:
        return f"DesignSpec({self.describe()}, N={self.population_size})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, DesignSpec):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.population_size == other.population_size
            and self._strata == other._strata
            and np.array_equal(self._pi, other._pi)
        )

    def __hash__(self):
        return hash((self.kind, self.population_size, self._strata, self._pi.tobytes()))

    # -- stratum bookkeeping ------------------------------------------------

    def _blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        sizes = np.array([s[0] for s in self._strata], dtype=np.intp)
        takes = np.array([s[1] for s in self._strata], dtype=np.intp)
        starts = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.intp)
        return starts, sizes, takes

    def stratum_of(self, i) -> np.ndarray:
        """Stratum label(s) of unit(s) ``i``; Poisson units are their own stratum."""
        if not self.fixed_size:
            return np.asarray(i)
        starts, _, _ = self._blocks()
        return np.searchsorted(starts, i, side="right") - 1

    def _check_index(self, *idx: int) -> None:
        for i in idx:
            if not 0 <= i < self.population_size:
                raise IndexError(f"unit index {i} out of range [0, {self.population_size})")

    # -- scalar accessors (generic route) -----------------------------------

    def pi1(self, i: int) -> float:
        self._check_index(i)
        return float(self._pi[i])

    def pi2(self, i: int, j: int) -> float:
        self._check_index(i, j)
        if i == j:
            return float(self._pi[i])
        if not self.fixed_size:
            return float(self._pi[i] * self._pi[j])
        h, g = self.stratum_of(i), self.stratum_of(j)
        if h != g:
            return float(self._pi[i] * self._pi[j])
        N_h, n_h = self._strata[h]
        return n_h * (n_h - 1) / (N_h * (N_h - 1))

    def pi1_exact(self, i: int) -> Fraction:
        """:meth:`pi1` as an exact rational (Poisson: the stored double, exactly)."""
        self._check_index(i)
        if not self.fixed_size:
            return Fraction(float(self._pi[i]))
        N_h, n_h = self._strata[int(self.stratum_of(i))]
        return Fraction(n_h, N_h)

    def pi2_exact(self, i: int, j: int) -> Fraction:
        """:meth:`pi2` as an exact rational."""
        self._check_index(i, j)
        if i == j:
            return self.pi1_exact(i)
        if self.fixed_size and self.stratum_of(i) == self.stratum_of(j):
            N_h, n_h = self._strata[int(self.stratum_of(i))]
            return Fraction(n_h * (n_h - 1), N_h * (N_h - 1))
        return self.pi1_exact(i) * self.pi1_exact(j)

    def delta(self, i: int, j: int) -> float:
        return self.pi2(i, j) - self.pi1(i) * self.pi1(j)

    def pi2_matrix(self) -> np.ndarray:
        """Dense matrix of joint inclusion probabilities, built from :meth:`pi2`."""
        N = self.population_size
        out = np.empty((N, N))
        for i in range(N):
            for j in range(i, N):
                out[i, j] = out[j, i] = self.pi2(i, j)
        return out

    def delta_matrix(self) -> np.ndarray:
        return self.pi2_matrix() - np.outer(self._pi, self._pi)

    def syg_condition_holds(self) -> bool:
        """True iff ``Delta_ij <= 0`` for every pair ``i != j`` (direct scan)."""
        N = self.population_size
        if self.fixed_size and N > 2000:
            # Only within-stratum pairs can be non-zero; one pair per stratum suffices.
            starts, sizes, _ = self._blocks()
            return all(self.delta(s, s + 1) <= 0.0 for s, m in zip(starts, sizes) if m > 1)
        d = self.delta_matrix()
        np.fill_diagonal(d, 0.0)
        return bool(np.all(d <= 0.0))

    # -- structured operators (fast route) ----------------------------------

    def delta_root(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        """Apply ``T`` along ``axis`` where ``Delta = T.T @ T`` over the population."""
        x = np.asarray(x, dtype=float)
        if not self.fixed_size:
            return x * _along(x, axis, np.sqrt(self._pi * (1.0 - self._pi)))
        starts, sizes, takes = self._blocks()
        f = takes / sizes
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(sizes > 1, f * (1.0 - f) * sizes / (sizes - 1), 0.0)
        return _block_center(x, starts, sizes, axis) * _along(x, axis, np.repeat(np.sqrt(scale), sizes))

    def apply_delta(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        """``Delta @ x`` (axis 0) or ``x @ Delta`` (axis 1) in linear time."""
        x = np.asarray(x, dtype=float)
        if not self.fixed_size:
            return x * _along(x, axis, self._pi * (1.0 - self._pi))
        starts, sizes, takes = self._blocks()
        f = takes / sizes
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(sizes > 1, f * (1.0 - f) * sizes / (sizes - 1), 0.0)
        return _block_center(x, starts, sizes, axis) * _along(x, axis, np.repeat(scale, sizes))

    def sample_blocks(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-stratum ``(starts, counts, stratum ids)`` of a sorted sample ``idx``."""
        labels = self.stratum_of(idx)
        ids, starts, counts = np.unique(labels, return_index=True, return_counts=True)
        return starts.astype(np.intp), counts.astype(np.intp), ids

    def sample_root(self, idx: np.ndarray, x: np.ndarray, axis: int = 0, overwrite: bool = False) -> np.ndarray:
        """Apply ``T_s`` along ``axis``, where ``T_s.T @ T_s`` is the matrix of
        ``Delta_ij / pi_ij`` over the sorted sample ``idx``.

        With ``overwrite`` a float array ``x`` may be reused for the result.
        A stratum that yields a single sampled unit out of several has no
        sampled pairs; its unit keeps the diagonal weight ``1 - pi``.
        """
        x = np.asarray(x, dtype=float)
        idx = np.asarray(idx, dtype=np.intp)
        if not self.fixed_size:
            root = _along(x, axis, np.sqrt(1.0 - self._pi[idx]))
            if overwrite:
                x *= root
                return x
            return x * root
        if idx.size == 0:
            return x
        starts, counts, ids = self.sample_blocks(idx)
        scale = np.zeros(ids.size)
        single = np.zeros(ids.size, dtype=bool)
        for m, h in enumerate(ids):
            N_h, n_h = self._strata[h]
            if n_h == N_h:
                continue
            if counts[m] == 1:
                single[m] = True
            else:
                scale[m] = (1.0 - n_h / N_h) * n_h / (n_h - 1)
        kept = None
        if single.any():
            pos = starts[single]
            keep = np.sqrt(1.0 - self._pi[idx[pos]])
            kept = np.take(x, pos, axis=axis) * _along(x, axis, keep)
        out = _block_center(x, starts, counts, axis, overwrite)
        out *= _along(x, axis, np.repeat(np.sqrt(scale), counts))
        if kept is not None:
            np.moveaxis(out, axis, 0)[pos] = np.moveaxis(kept, axis, 0)
        return out

    def sample_singles(self, idx: np.ndarray) -> np.ndarray:
        """Mask over the sorted sample of units drawn alone from a stratum
        of several.  Their ``Delta / pi`` row holds only the diagonal term."""
        idx = np.asarray(idx, dtype=np.intp)
        mask = np.zeros(idx.size, dtype=bool)
        if not self.fixed_size or idx.size == 0:
            return mask
        starts, counts, ids = self.sample_blocks(idx)
        for start, count, h in zip(starts, counts, ids):
            if count == 1 and self._strata[h][0] > 1:
                mask[start] = True
        return mask

    def sample_weight_matrix(self, idx: np.ndarray, exact: bool = False) -> np.ndarray:
        """Dense ``Delta_ij / pi_ij`` over the sample, built from scalar accessors.

        With ``exact`` the entries are :class:`~fractions.Fraction` objects.
        """
        idx = [int(i) for i in idx]
        out = np.empty((len(idx), len(idx)), dtype=object if exact else float)
        for a, i in enumerate(idx):
            for b, j in enumerate(idx):
                if exact:
                    p = self.pi2_exact(i, j)
                    d = p - self.pi1_exact(i) * self.pi1_exact(j)
                else:
                    p = self.pi2(i, j)
                    d = self.delta(i, j)
                if p <= 0:
                    raise ZeroJointProbabilityError(f"pi2({i}, {j}) = 0")
                out[a, b] = d / p
        return out

    # -- realization --------------------------------------------------------

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one sample as a sorted array of 0-based unit indices.

        SI and each STSI stratum use ``Generator.choice(replace=False)``
        (a partial Fisher-Yates shuffle for small fractions, a full
        permutation otherwise); Poisson compares one uniform per unit.
        """
        if not self.fixed_size:
            return np.flatnonzero(rng.random(self.population_size) < self._pi)
        parts = []
        offset = 0
        for N_h, n_h in self._strata:
            if n_h == N_h:
                parts.append(np.arange(offset, offset + N_h))
            else:
                parts.append(offset + rng.choice(N_h, size=n_h, replace=False, shuffle=False))
            offset += N_h
        out = np.concatenate(parts) if len(parts) > 1 else parts[0]
        out.sort()
        return out

    def support_size(self) -> int:
        if not self.fixed_size:
            return 2 ** int(np.count_nonzero((self._pi > 0) & (self._pi < 1)))
        return math.prod(math.comb(N_h, n_h) for N_h, n_h in self._strata)

    def enumerate(self, limit: int = MAX_ENUMERATION) -> list[tuple[tuple[int, ...], float]]:
        """Every support point with its exact probability."""
        size = self.support_size()
        if size > limit:
            raise DesignError(f"support has {size} outcomes, above the limit of {limit}")
        if not self.fixed_size:
            out = []
            for mask in itertools.product((False, True), repeat=self.population_size):
                sel = np.array(mask)
                p = float(np.prod(np.where(sel, self._pi, 1.0 - self._pi)))
                if p > 0.0:
                    out.append((tuple(np.flatnonzero(sel).tolist()), p))
            return out
        per_stratum = []
        offset = 0
        for N_h, n_h in self._strata:
            combos = [tuple(offset + c for c in comb) for comb in itertools.combinations(range(N_h), n_h)]
            per_stratum.append((combos, 1.0 / math.comb(N_h, n_h)))
            offset += N_h
        out = []
        for pick in itertools.product(*(c for c, _ in per_stratum)):
            p = math.prod(q for _, q in per_stratum)
            out.append((tuple(i for part in pick for i in part), p))
        return out


def enumerate_cross(dm: DesignSpec, dd: DesignSpec, limit: int = MAX_ENUMERATION) -> Iterator[tuple[CrossSample, float]]:
    """All cross samples ``S_M x S_D`` with probability ``p_M(S_M) p_D(S_D)``."""
    if dm.support_size() * dd.support_size() > limit:
        raise DesignError("cross-sample support too large to enumerate")
    rows = dm.enumerate(limit)
    cols = dd.enumerate(limit)
    for r, p in rows:
        for c, q in cols:
            yield CrossSample(np.array(r, dtype=np.intp), np.array(c, dtype=np.intp)), p * q


# -- text grammar -------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<num>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_./\\~][\w./\\~-]*)"
    r"|(?P<op>[(),=:])"
)


@dataclass
class _Lexer:
    text: str
    tokens: list = field(default_factory=list)

    def __post_init__(self):
        text, pos = self.text, 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN.match(text, pos)
            if not m:
                raise DesignSyntaxError("unexpected character", text, pos)
            self.tokens.append((m.lastgroup, m.group(), pos))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind: str, value: str | None = None):
        tok = self.tokens[self.i]
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = repr(value) if value is not None else kind
            raise DesignSyntaxError(f"expected {want}", self.text, tok[2])
        self.i += 1
        return tok


def _int(tok, text: str) -> int:
    try:
        return int(tok[1])
    except ValueError:
        raise DesignSyntaxError("expected an integer", text, tok[2]) from None


def _read_probs(path: Path) -> np.ndarray:
    # values separated by commas and/or whitespace; '#' starts a comment
    lines = (line.split("#", 1)[0] for line in Path(path).read_text().splitlines())
    tokens = " ".join(lines).replace(",", " ").split()
    try:
        return np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise DesignError(f"{path}: {exc}") from None


def parse_design(text: str, population_size: int, base_dir: str | Path | None = None) -> DesignSpec:
    """Parse ``si(n=25)``, ``stsi(108:21,108:41)``, ``poisson(p=0.1)`` or
    ``poisson(file=probs.csv)`` for a population of ``population_size`` units.

    Strata are contiguous index blocks in the listed order.  Relative Poisson
    probability files are resolved against ``base_dir``.
    """
    lex = _Lexer(text)
    kind_tok = lex.take("name")
    kind = kind_tok[1].lower()
    lex.take("op", "(")
    try:
        if kind == "si":
            key = lex.take("name")
            if key[1] != "n":
                raise DesignSyntaxError("expected 'n'", text, key[2])
            lex.take("op", "=")
            n = _int(lex.take("num"), text)
            lex.take("op", ")")
            design = DesignSpec.si(population_size, n)
        elif kind == "stsi":
            strata = []
            while True:
                N_h = _int(lex.take("num"), text)
                lex.take("op", ":")
                n_h = _int(lex.take("num"), text)
                strata.append((N_h, n_h))
                if lex.peek()[1] == ",":
                    lex.take("op", ",")
                    continue
                lex.take("op", ")")
                break
            design = DesignSpec.stsi(strata, population_size)
        elif kind == "poisson":
            key = lex.take("name")
            lex.take("op", "=")
            if key[1] == "p":
                p = float(lex.take("num")[1])
                design_args = (p, population_size)
            elif key[1] == "file":
                path = Path(lex.take("name")[1])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                probs = _read_probs(path)
                design_args = (probs, population_size)
            else:
                raise DesignSyntaxError("expected 'p' or 'file'", text, key[2])
            lex.take("op", ")")
            design = DesignSpec.poisson(*design_args)
        else:
            raise DesignSyntaxError(f"unknown design '{kind_tok[1]}'", text, kind_tok[2])
    except DesignSyntaxError:
        raise
    except DesignError as exc:
        raise DesignError(f"{text!r}: {exc}") from None
    end = lex.peek()
    if end[0] != "end":
        raise DesignSyntaxError("trailing input", text, end[2])
    return design
