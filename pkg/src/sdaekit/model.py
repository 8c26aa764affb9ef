"""SDAE problem definition and numerical assumption diagnostics.

A problem is the tuple (A(t), f, g, X0, T) with A an n x n grid of
expressions in t, f an n-vector and g an n x m grid of expressions in
(t, x1..xn).  The state Jacobian of f is derived symbolically at build
time and cross-checked against central finite differences, because the
constraint solver leans on it.

All assumption checks are sampled diagnostics, not proofs: the
conditions they probe are universally quantified, so the reports carry
constants that are certified on the sample set only.  Sampling is fully
reproducible from a :class:`SampleSpec`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import exprlang, projectors
from .exprlang import Expr
from .linalg import frobenius, vector

INDEX1_TOLERANCE = 1e-10

_SING_REL_TOL = 1e-12  # sigma_min/sigma_max below this flags a singular Jacobian


class ProblemFormatError(ValueError):
    """Problem text rejected; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class JacobianMismatchError(RuntimeError):
    """Symbolic state Jacobian disagrees with finite differences."""


def _as_expr(entry, n: int) -> Expr:
    if isinstance(entry, str):
        return exprlang.parse(entry, n)
    if isinstance(entry, (int, float)):
        return exprlang.Const(float(entry))
    return entry


@dataclass
class SdaeProblem:
    """Immutable-by-convention problem definition with compiled evaluators."""

    n: int
    m: int
    horizon: float
    a_entries: list[list[Expr]]
    f_entries: list[Expr]
    g_entries: list[list[Expr]]
    f_jacobian: list[list[Expr]]
    x0: np.ndarray
    name: str = ""

    def __post_init__(self):
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise ValueError("horizon T must be positive and finite")
        if self.x0.shape != (self.n,):
            raise ValueError(f"x0 must have dimension {self.n}")
        if len(self.a_entries) != self.n or any(len(row) != self.n for row in self.a_entries):
            raise ValueError("a_entries must be an n x n grid")
        if len(self.f_entries) != self.n:
            raise ValueError("f_entries must have n entries")
        if len(self.g_entries) != self.n or any(len(row) != self.m for row in self.g_entries):
            raise ValueError("g_entries must be an n x m grid")
        for i, row in enumerate(self.a_entries):
            for j, e in enumerate(row):
                extra = exprlang.free_variables(e) - {"t"}
                if extra:
                    raise ValueError(f"a[{i + 1}][{j + 1}] may only depend on t, uses {extra}")
        self._a_c = [[exprlang.compile_entry(e) for e in row] for row in self.a_entries]
        self._f_c = [exprlang.compile_entry(e) for e in self.f_entries]
        self._g_c = [[exprlang.compile_entry(e) for e in row] for row in self.g_entries]
        self._fx_c = [[exprlang.compile_entry(e) for e in row] for row in self.f_jacobian]

    @classmethod
    def build(cls, n: int, m: int, horizon: float, a, f, g, x0,
              name: str = "", check_jacobian: bool = True) -> "SdaeProblem":
        """Construct from expression strings (or trees), deriving the state
        Jacobian of f symbolically."""
        a_e = [[_as_expr(a[i][j], n) for j in range(n)] for i in range(n)]
        f_e = [_as_expr(f[i], n) for i in range(n)]
        g_e = [[_as_expr(g[i][j], n) for j in range(m)] for i in range(n)]
        jac = [[exprlang.differentiate(f_e[i], f"x{j + 1}") for j in range(n)] for i in range(n)]
        prob = cls(n=n, m=m, horizon=float(horizon), a_entries=a_e, f_entries=f_e,
                   g_entries=g_e, f_jacobian=jac, x0=vector(x0), name=name)
        if check_jacobian:
            prob._check_jacobian_against_fd()
        return prob

    # --- compiled evaluation -------------------------------------------------

    def _grid_at(self, compiled, t, x, cols: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        out = np.empty(lead + (len(compiled), cols))
        for i, row in enumerate(compiled):
            for j, fn in enumerate(row):
                out[..., i, j] = fn(t, x)
        return out

    def a_at(self, t: float) -> np.ndarray:
        """A(t) as an (n, n) array."""
        out = np.empty((self.n, self.n))
        zero = np.zeros(self.n)
        for i, row in enumerate(self._a_c):
            for j, fn in enumerate(row):
                out[i, j] = fn(float(t), zero)
        return out

    def f_at(self, t, x) -> np.ndarray:
        """Drift f(t, x); vectorizes over leading axes of x."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (self.n,))
        for i, fn in enumerate(self._f_c):
            out[..., i] = fn(t, x)
        return out

    def g_at(self, t, x) -> np.ndarray:
        """Diffusion g(t, x) with shape (..., n, m)."""
        return self._grid_at(self._g_c, t, np.asarray(x, dtype=float), self.m)

    def fx_at(self, t, x) -> np.ndarray:
        """State Jacobian f'_x(t, x) with shape (..., n, n)."""
        return self._grid_at(self._fx_c, t, np.asarray(x, dtype=float), self.n)

    def _check_jacobian_against_fd(self, points: int = 8, seed: int = 101):
        rng = np.random.default_rng(seed)
        ts = rng.uniform(0.0, self.horizon, points)
        xs = rng.uniform(-2.0, 2.0, (points, self.n))
        for t, x in zip(ts, xs):
            sym = self.fx_at(t, x)
            fd = np.empty_like(sym)
            for j in range(self.n):
                h = 1e-6 * (1.0 + abs(x[j]))
                xp, xm = x.copy(), x.copy()
                xp[j] += h
                xm[j] -= h
                fd[:, j] = (self.f_at(t, xp) - self.f_at(t, xm)) / (2.0 * h)
            if not (np.isfinite(sym).all() and np.isfinite(fd).all()):
                continue  # probe point outside the coefficient domain
            gap = np.abs(sym - fd)
            scale = 1.0 + np.maximum(np.abs(sym), np.abs(fd))
            if (gap > 1e-5 * scale).any():
                i, j = np.unravel_index(int(np.argmax(gap / scale)), gap.shape)
                raise JacobianMismatchError(
                    f"d f[{i + 1}]/d x{j + 1} at t={t:.4g}, x={x}: "
                    f"symbolic {sym[i, j]:.8g} vs finite-difference {fd[i, j]:.8g}"
                )


# --- problem text format -----------------------------------------------------

_KEY_RE = re.compile(
    r"^(?:(?P<scalar>[nmT])|x0|(?P<grid>[afg])\[(?P<i>\d+)\](?:\[(?P<j>\d+)\])?)$"
)


def parse_problem_text(text: str, name: str = "") -> SdaeProblem:
    """Parse the line-oriented ``key = value`` problem format.

    Keys: ``n``, ``m``, ``T``, ``a[i][j]``, ``f[i]``, ``g[i][j]`` (1-based
    indices), ``x0 = v1,...,vn``.  ``#`` starts a comment.  Unset
    coefficient entries default to 0.
    """
    entries: list[tuple[int, str, str]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ProblemFormatError(line_no, "expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        entries.append((line_no, key, value))

    dims: dict[str, float] = {}
    x0_raw = None
    for line_no, key, value in entries:
        if key in ("n", "m", "T"):
            try:
                dims[key] = float(value)
            except ValueError:
                raise ProblemFormatError(line_no, f"bad number for {key}: {value!r}") from None
        elif key == "x0":
            x0_raw = (line_no, value)
    for needed in ("n", "m", "T"):
        if needed not in dims:
            raise ProblemFormatError(0, f"missing required key '{needed}'")
    n, m = int(dims["n"]), int(dims["m"])
    if n < 1 or m < 1 or n != dims["n"] or m != dims["m"]:
        raise ProblemFormatError(0, "n and m must be positive integers")

    zero = exprlang.Const(0.0)
    a = [[zero] * n for _ in range(n)]
    f = [zero] * n
    g = [[zero] * m for _ in range(n)]
    for line_no, key, value in entries:
        if key in ("n", "m", "T", "x0"):
            continue
        km = _KEY_RE.match(key)
        if km is None or km.group("grid") is None:
            raise ProblemFormatError(line_no, f"unknown key {key!r}")
        which, i_s, j_s = km.group("grid"), km.group("i"), km.group("j")
        i = int(i_s)
        if which == "f":
            if j_s is not None:
                raise ProblemFormatError(line_no, "f takes a single index: f[i]")
            if not 1 <= i <= n:
                raise ProblemFormatError(line_no, f"f index out of range: {i}")
        else:
            if j_s is None:
                raise ProblemFormatError(line_no, f"{which} needs two indices: {which}[i][j]")
            j = int(j_s)
            cols = n if which == "a" else m
            if not (1 <= i <= n and 1 <= j <= cols):
                raise ProblemFormatError(line_no, f"{which} index out of range: [{i}][{j}]")
        try:
            tree = exprlang.parse(value, n)
        except exprlang.ParseError as exc:
            raise ProblemFormatError(line_no, f"in {key!r}: {exc}") from exc
        if which == "f":
            f[i - 1] = tree
        elif which == "a":
            a[i - 1][int(j_s) - 1] = tree
        else:
            g[i - 1][int(j_s) - 1] = tree

    if x0_raw is None:
        raise ProblemFormatError(0, "missing required key 'x0'")
    line_no, value = x0_raw
    try:
        x0 = [float(part) for part in value.split(",")]
    except ValueError:
        raise ProblemFormatError(line_no, f"bad x0 value: {value!r}") from None
    if len(x0) != n:
        raise ProblemFormatError(line_no, f"x0 needs {n} components, got {len(x0)}")
    return SdaeProblem.build(n=n, m=m, horizon=dims["T"], a=a, f=f, g=g, x0=x0, name=name)


def load_problem_file(path) -> SdaeProblem:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_problem_text(fh.read(), name=str(path))


# --- sampling ----------------------------------------------------------------


@dataclass(frozen=True)
class SampleSpec:
    """Reproducible (t, X) sampling: a uniform t-grid on [0, T] crossed with
    seeded-uniform draws from the state box [-box, box]^n."""

    t_count: int = 64
    x_per_t: int = 64
    box: float = 10.0
    seed: int = 20240901

    def t_grid(self, horizon: float) -> np.ndarray:
        return np.linspace(0.0, horizon, self.t_count)

    def _rng(self, stream: int) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(stream,)))
        )

    def state_samples(self, n: int, stream: int = 0) -> np.ndarray:
        rng = self._rng(stream)
        return rng.uniform(-self.box, self.box, (self.t_count, self.x_per_t, n))

    def ball_samples(self, n: int, radius: float, stream: int = 1) -> np.ndarray:
        """Uniform draws from the open radius-ball, shape (t_count, x_per_t, n)."""
        rng = self._rng(stream)
        z = rng.standard_normal((self.t_count, self.x_per_t, n))
        z /= np.linalg.norm(z, axis=-1, keepdims=True)
        scale = radius * 0.999 * rng.uniform(0.0, 1.0, (self.t_count, self.x_per_t, 1)) ** (1.0 / n)
        return z * scale


# --- diagnostics -------------------------------------------------------------


@dataclass(frozen=True)
class Index1Report:
    ok: bool
    max_residual: float
    tolerance: float
    worst_t: float
    worst_x: np.ndarray


@dataclass(frozen=True)
class MonotoneReport:
    k: float          # smallest constant valid against 1 + ||X||^2 on the samples
    remark_k: float   # same numerator against 1 + ||P(t)X||^2
    p: int


@dataclass(frozen=True)
class GrowthReport:
    c: float
    r2: float


@dataclass(frozen=True)
class JacobianReport:
    t_values: np.ndarray
    x_values: np.ndarray
    det_values: np.ndarray
    inv_norm_values: np.ndarray      # Frobenius norms; inf where singular
    bound: float                     # max finite inverse norm (the constant N)
    near_singular: list[tuple[float, np.ndarray, float]]
    worst_t: float
    worst_x: np.ndarray


@dataclass(frozen=True)
class SmoothnessReport:
    max_second_divided_difference: float
    rank_jumps: list[tuple[float, float, int, int]]
    t_grid: np.ndarray


@dataclass(frozen=True)
class AssumptionReport:
    index1_ok: bool
    index1_residual: float
    monotone_k: float
    monotone_p: int
    remark_k: float
    lipschitz_estimates: Mapping[float, float]
    growth_c: float
    growth_r2: float
    p_smoothness: float
    rank_jumps: list
    jacobian_bound: float
    sample_spec: SampleSpec


def _family_grid(prob: SdaeProblem, ts: Iterable[float]):
    for t in ts:
        yield float(t), projectors.family_at(prob.a_at(t), t)


def check_index1(prob: SdaeProblem, spec: SampleSpec | None = None) -> Index1Report:
    """Max over samples of |R(t) g(t,X)|_F; zero (to tolerance) iff the noise
    stays out of the constraints."""
    spec = spec or SampleSpec()
    xs = spec.state_samples(prob.n, stream=0)
    worst = (-1.0, 0.0, np.zeros(prob.n))
    for (t, fam), xb in zip(_family_grid(prob, spec.t_grid(prob.horizon)), xs):
        g = prob.g_at(t, xb)
        rg = np.einsum("ij,bjk->bik", fam.r, g)
        res = np.sqrt((rg ** 2).sum(axis=(1, 2)))
        b = int(np.argmax(res))
        if res[b] > worst[0]:
            worst = (float(res[b]), t, xb[b])
    return Index1Report(ok=worst[0] <= INDEX1_TOLERANCE, max_residual=worst[0],
                        tolerance=INDEX1_TOLERANCE, worst_t=worst[1], worst_x=worst[2])


def check_monotone(prob: SdaeProblem, p: int = 2, spec: SampleSpec | None = None) -> MonotoneReport:
    """Smallest sampled constant k with
    <P(t)X, A^-(t)f(t,X)> + (p-1)/2 |A^-(t)g(t,X)|_F^2 <= k (1 + ||X||^2),
    plus the variant measured against 1 + ||P(t)X||^2."""
    if p < 2:
        raise ValueError("moment order p must be >= 2")
    spec = spec or SampleSpec()
    xs = spec.state_samples(prob.n, stream=0)
    k_max = 0.0
    remark_max = 0.0
    for (t, fam), xb in zip(_family_grid(prob, spec.t_grid(prob.horizon)), xs):
        fv = prob.f_at(t, xb)
        gv = prob.g_at(t, xb)
        px = xb @ fam.p.T
        amf = fv @ fam.a_minus.T
        amg = np.einsum("ij,bjk->bik", fam.a_minus, gv)
        lhs = (px * amf).sum(axis=1) + 0.5 * (p - 1) * (amg ** 2).sum(axis=(1, 2))
        k_max = max(k_max, float((lhs / (1.0 + (xb ** 2).sum(axis=1))).max()))
        remark_max = max(remark_max, float((lhs / (1.0 + (px ** 2).sum(axis=1))).max()))
    return MonotoneReport(k=k_max, remark_k=remark_max, p=p)


def estimate_local_lipschitz(prob: SdaeProblem, q: float, spec: SampleSpec | None = None) -> float:
    """Sampled lower bound on the radius-q Lipschitz constant of (f, g).

    Uses independent pairs plus short-step pairs inside the q-ball; the
    estimate is monotone in the sample count and always a lower bound.
    """
    if q <= 0:
        raise ValueError("radius q must be positive")
    spec = spec or SampleSpec()
    xs = spec.ball_samples(prob.n, q, stream=1)
    ys_far = spec.ball_samples(prob.n, q, stream=2)
    rng = spec._rng(3)
    step = rng.standard_normal(xs.shape)
    step *= 1e-4 * q / np.linalg.norm(step, axis=-1, keepdims=True)
    ys_near = xs + step
    over = np.linalg.norm(ys_near, axis=-1, keepdims=True)
    np.divide(ys_near, over / (0.999 * q), out=ys_near, where=over >= q)
    best = 0.0
    for t, xb, yfar, ynear in zip(spec.t_grid(prob.horizon), xs, ys_far, ys_near):
        for yb in (yfar, ynear):
            dx = np.linalg.norm(xb - yb, axis=1)
            keep = dx > 1e-12
            df = np.linalg.norm(prob.f_at(t, xb) - prob.f_at(t, yb), axis=1)
            dg = np.sqrt(((prob.g_at(t, xb) - prob.g_at(t, yb)) ** 2).sum(axis=(1, 2)))
            quot = np.maximum(df, dg)[keep] / dx[keep]
            if quot.size:
                best = max(best, float(quot.max()))
    return best


def check_growth(prob: SdaeProblem, spec: SampleSpec | None = None,
                 radii: Sequence[float] | None = None, dirs_per_radius: int = 64) -> GrowthReport:
    """Fit |g(t,X)|_F^2 ~ c ||X||^{r2} from large-radius samples.

    Returns (0, 0) when g vanishes on every sample (degenerate fit).
    """
    spec = spec or SampleSpec()
    radii = np.geomspace(10.0, 1e4, 25) if radii is None else np.asarray(radii, float)
    rng = spec._rng(4)
    ts = np.linspace(0.0, prob.horizon, 9)
    log_x: list[np.ndarray] = []
    log_y: list[np.ndarray] = []
    ratio_num: list[np.ndarray] = []
    ratio_rad: list[np.ndarray] = []
    for t in ts:
        dirs = rng.standard_normal((radii.size, dirs_per_radius, prob.n))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        x = dirs * radii[:, None, None]
        y = (prob.g_at(t, x.reshape(-1, prob.n)) ** 2).sum(axis=(1, 2))
        r_flat = np.repeat(radii, dirs_per_radius)
        pos = y > 0.0
        log_x.append(np.log(r_flat[pos]))
        log_y.append(np.log(y[pos]))
        ratio_num.append(y)
        ratio_rad.append(r_flat)
    lx = np.concatenate(log_x)
    if lx.size == 0:
        return GrowthReport(c=0.0, r2=0.0)
    ly = np.concatenate(log_y)
    slope = float(np.polyfit(lx, ly, 1)[0])
    r2 = max(slope, 0.0)
    num = np.concatenate(ratio_num)
    rad = np.concatenate(ratio_rad)
    c = float((num / rad ** r2).max())
    return GrowthReport(c=c, r2=r2)


def jacobian_report(prob: SdaeProblem, spec: SampleSpec | None = None) -> JacobianReport:
    """Determinant and inverse norm of J(t,X) = A(t) + R(t) f'_x(t,X) per sample."""
    spec = spec or SampleSpec()
    xs = spec.state_samples(prob.n, stream=0)
    t_all, x_all, det_all, inv_all = [], [], [], []
    near: list[tuple[float, np.ndarray, float]] = []
    for (t, fam), xb in zip(_family_grid(prob, spec.t_grid(prob.horizon)), xs):
        fx = prob.fx_at(t, xb)
        jac = fam.a[None, :, :] + np.einsum("ij,bjk->bik", fam.r, fx)
        dets = np.linalg.det(jac)
        sing = np.linalg.svd(jac, compute_uv=False)
        smin, smax = sing[:, -1], sing[:, 0]
        singular = smin <= _SING_REL_TOL * np.maximum(smax, 1e-300)
        inv_norm = np.full(len(xb), np.inf)
        ok = ~singular
        inv_norm[ok] = np.sqrt((1.0 / sing[ok] ** 2).sum(axis=1))
        for b in np.flatnonzero(singular):
            near.append((t, xb[b], float(dets[b])))
        t_all.append(np.full(len(xb), t))
        x_all.append(xb)
        det_all.append(dets)
        inv_all.append(inv_norm)
    t_values = np.concatenate(t_all)
    x_values = np.concatenate(x_all)
    det_values = np.concatenate(det_all)
    inv_values = np.concatenate(inv_all)
    finite = np.isfinite(inv_values)
    bound = float(inv_values[finite].max()) if finite.any() else np.inf
    worst = int(np.argmax(np.where(finite, inv_values, -np.inf))) if finite.any() else 0
    return JacobianReport(
        t_values=t_values, x_values=x_values, det_values=det_values,
        inv_norm_values=inv_values, bound=bound, near_singular=near,
        worst_t=float(t_values[worst]), worst_x=x_values[worst],
    )


def smoothness_report(prob: SdaeProblem, t_grid=64) -> SmoothnessReport:
    """Second divided differences of P(t) on a grid, as a C^1 proxy.

    Also detects numerical rank changes of A(t) across the grid, which
    make P(t) discontinuous.
    """
    if np.isscalar(t_grid):
        grid = np.linspace(0.0, prob.horizon, int(t_grid))
    else:
        grid = np.asarray(t_grid, dtype=float)
    if grid.size < 3:
        raise ValueError("t-grid needs at least 3 points")
    fams = [projectors.family_at(prob.a_at(t), t) for t in grid]
    ranks = [fam.rank for fam in fams]
    jumps = [
        (float(grid[i]), float(grid[i + 1]), ranks[i], ranks[i + 1])
        for i in range(len(ranks) - 1)
        if ranks[i] != ranks[i + 1]
    ]
    h = float(grid[1] - grid[0])
    worst = 0.0
    for i in range(1, len(fams) - 1):
        second = (fams[i + 1].p - 2.0 * fams[i].p + fams[i - 1].p) / (h * h)
        worst = max(worst, frobenius(second))
    return SmoothnessReport(max_second_divided_difference=worst, rank_jumps=jumps,
                            t_grid=grid)


def run_diagnostics(prob: SdaeProblem, spec: SampleSpec | None = None, p: int = 2,
                    lipschitz_radii: Sequence[float] = (1.0, 2.0, 5.0, 10.0)) -> AssumptionReport:
    """Run every assumption check and collect the constants."""
    spec = spec or SampleSpec()
    index1 = check_index1(prob, spec)
    monotone = check_monotone(prob, p, spec)
    lipschitz = {float(q): estimate_local_lipschitz(prob, q, spec) for q in lipschitz_radii}
    growth = check_growth(prob, spec)
    smooth = smoothness_report(prob, spec.t_count)
    jac = jacobian_report(prob, spec)
    return AssumptionReport(
        index1_ok=index1.ok,
        index1_residual=index1.max_residual,
        monotone_k=monotone.k,
        monotone_p=monotone.p,
        remark_k=monotone.remark_k,
        lipschitz_estimates=lipschitz,
        growth_c=growth.c,
        growth_r2=growth.r2,
        p_smoothness=smooth.max_second_divided_difference,
        rank_jumps=smooth.rank_jumps,
        jacobian_bound=jac.bound,
        sample_spec=spec,
    )
