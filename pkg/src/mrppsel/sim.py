"""Monte Carlo size/power experiments and a t-test + BH selection baseline.

Data are Gaussian with AR(1) covariance ``rho**|i-j|``; the second group is
shifted by ``nu`` in its first ``shifted_dims`` variables.
"""

from __future__ import annotations

import configparser
import csv
import io
import itertools
import json
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .data import LabeledSample, standardize
from .dist import euclidean
from .modsel import modified_mrpp_rules
from .mrpp import mrpp_test
from .perm import build_plan, derive_seed, make_rng
from .select import average_ranks, backward_select, top_by_average_rank

# method name -> R0 rule (None for the ordinary test)
METHODS = {
    "MRPP_Org": None,
    "Mod_S(L)": "sl",
    "Mod_2": "fixed:2",
    "Mod_4": "fixed:4",
    "Mod_8": "fixed:8",
    "Mod_16": "fixed:16",
    "Mod_sqrtR": "sqrt",
}


class ConfigError(ValueError):
    """Invalid simulation configuration; the message names the key."""


@dataclass(frozen=True)
class SimConfig:
    n1: int = 20
    n2: int = 20
    R: int = 25
    rho: float = 0.5
    nu: float = 0.0
    shifted_dims: int = 4
    reps: int = 1000
    permutations: int = 1000
    alpha: float = 0.05
    seed: int = 0
    methods: tuple = tuple(METHODS)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        checks = [
            ("n1", self.n1 >= 2, "must be >= 2"),
            ("n2", self.n2 >= 2, "must be >= 2"),
            ("R", self.R >= 1, "must be >= 1"),
            ("shifted_dims", 0 <= self.shifted_dims <= self.R, "must lie in [0, R]"),
            ("rho", -1 < self.rho < 1, "must lie in (-1, 1)"),
            ("reps", self.reps >= 1, "must be >= 1"),
            ("permutations", self.permutations >= 2, "must be >= 2"),
            ("alpha", 0 < self.alpha < 1, "must lie in (0, 1)"),
            ("methods", len(self.methods) > 0, "must name at least one method"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{key} {msg} (got {getattr(self, key)!r})")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"methods: unknown {unknown}; choose from {list(METHODS)}")

    def mean_shift(self) -> np.ndarray:
        mu = np.zeros(self.R)
        mu[:self.shifted_dims] = self.nu
        return mu


_INT_KEYS = {"n1", "n2", "R", "shifted_dims", "reps", "permutations", "seed"}
_FLOAT_KEYS = {"rho", "nu", "alpha"}


def _split(value: str) -> list:
    return [v.strip() for v in value.replace(";", ",").split(",") if v.strip()]


def parse_sim_config(text: str) -> list:
    """Parse ``key = value`` lines into a list of :class:`SimConfig`.

    ``n1`` and ``n2`` may list several sizes (paired in order); ``R`` and
    ``nu`` may list several values (every combination is run). Other keys
    take one value. ``#`` starts a comment.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[sim]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    raw = dict(cp["sim"])
    known = {f.name for f in fields(SimConfig)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"unknown key(s): {', '.join(extra)}")
    vals = {}
    for key, value in raw.items():
        items = _split(value)
        if not items:
            raise ConfigError(f"{key}: empty value")
        try:
            if key in _INT_KEYS:
                conv = [int(v) for v in items]
            elif key in _FLOAT_KEYS:
                conv = [float(v) for v in items]
            else:
                conv = items
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
        if key not in ("n1", "n2", "R", "nu", "methods") and len(conv) != 1:
            raise ConfigError(f"{key}: expected a single value")
        vals[key] = conv
    n1 = vals.pop("n1", [SimConfig.n1])
    n2 = vals.pop("n2", [SimConfig.n2])
    if len(n1) != len(n2):
        if len(n1) == 1:
            n1 = n1 * len(n2)
        elif len(n2) == 1:
            n2 = n2 * len(n1)
        else:
            raise ConfigError("n1, n2: lists must have equal length")
    Rs = vals.pop("R", [SimConfig.R])
    nus = vals.pop("nu", [SimConfig.nu])
    base = {k: v if k == "methods" else v[0] for k, v in vals.items()}
    return [SimConfig(n1=a, n2=b, R=r, nu=nu, **base)
            for (a, b), r, nu in itertools.product(zip(n1, n2), Rs, nus)]


def load_sim_config(path) -> list:
    return parse_sim_config(Path(path).read_text())


def gen_mvn_ar1(n: int, R: int, rho: float, mu=None, rng=None) -> np.ndarray:
    """``n`` rows from N(mu, Sigma) with ``Sigma_ij = rho**|i-j|``.

    Uses the AR(1) recursion across columns, exact for this covariance.
    """
    if not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 1)")
    rng = np.random.default_rng() if rng is None else rng
    eps = rng.standard_normal((n, R))
    x = np.empty_like(eps)
    x[:, 0] = eps[:, 0]
    c = np.sqrt(1.0 - rho * rho)
    for j in range(1, R):
        x[:, j] = rho * x[:, j - 1] + c * eps[:, j]
    if mu is not None:
        x += np.asarray(mu, dtype=float)
    return x


def draw_two_groups(cfg: SimConfig, rng) -> LabeledSample:
    y1 = gen_mvn_ar1(cfg.n1, cfg.R, cfg.rho, None, rng)
    y2 = gen_mvn_ar1(cfg.n2, cfg.R, cfg.rho, cfg.mean_shift(), rng)
    labels = np.repeat([0, 1], [cfg.n1, cfg.n2])
    return LabeledSample(np.vstack([y1, y2]), labels, group_names=("1", "2"))


def replicate_p_values(cfg: SimConfig, rep: int) -> np.ndarray:
    """p-value of every configured method on replicate ``rep``.

    All methods share the replicate's data and permutation plan.
    """
    sample = draw_two_groups(cfg, make_rng(cfg.seed, rep, 0))
    plan = build_plan(sample.labels, cfg.permutations, derive_seed(cfg.seed, rep, 1))
    out = np.empty(len(cfg.methods))
    mod = [m for m in cfg.methods if METHODS[m] is not None]
    mod_p = {}
    if mod:
        res = modified_mrpp_rules(sample, [METHODS[m] for m in mod], plan=plan)
        mod_p = {m: r.p_bs for m, r in zip(mod, res)}
    for i, m in enumerate(cfg.methods):
        if METHODS[m] is None:
            out[i] = mrpp_test(euclidean(sample), plan).p_value
        else:
            out[i] = mod_p[m]
    return out


@dataclass
class SimResult:
    config: SimConfig
    methods: tuple
    rates: np.ndarray
    se: np.ndarray
    p_values: np.ndarray  # (reps, methods)
    wall_clock: float = field(default=0.0, compare=False)

    def rate(self, method: str) -> float:
        return float(self.rates[self.methods.index(method)])

    def stderr(self, method: str) -> float:
        return float(self.se[self.methods.index(method)])

    def to_dict(self) -> dict:
        # wall-clock is left to the run manifest so result files stay reproducible
        return {
            "config": {**asdict(self.config), "methods": list(self.config.methods)},
            "results": [
                {"method": m, "rate": float(r), "se": float(s)}
                for m, r, s in zip(self.methods, self.rates, self.se)
            ],
        }


def run_size_power(cfg: SimConfig, n_jobs: int = 1) -> SimResult:
    """Empirical rejection rate of every method at level ``cfg.alpha``."""
    t0 = time.perf_counter()
    if n_jobs == 1:
        rows = [replicate_p_values(cfg, rep) for rep in range(cfg.reps)]
    else:
        rows = Parallel(n_jobs=n_jobs)(
            delayed(replicate_p_values)(cfg, rep) for rep in range(cfg.reps))
    p = np.vstack(rows)
    rates = (p <= cfg.alpha).mean(axis=0)
    se = np.sqrt(rates * (1 - rates) / cfg.reps)
    return SimResult(cfg, cfg.methods, rates, se, p, time.perf_counter() - t0)


CSV_FIELDS = ["n1", "n2", "R", "rho", "nu", "shifted_dims", "reps", "permutations",
              "alpha", "seed", "method", "rate", "se"]


def results_csv(results) -> str:
    """Flat CSV, one row per method and configuration."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for res in results:
        c = asdict(res.config)
        for m, r, s in zip(res.methods, res.rates, res.se):
            w.writerow([c[k] for k in CSV_FIELDS[:10]] + [m, repr(float(r)), repr(float(s))])
    return buf.getvalue()


def results_json(results) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True) + "\n"


def size_table(results) -> str:
    """Methods as rows and ``(n1, n2, R)`` as columns, for null runs."""
    cols = [r for r in results if r.config.nu == 0]
    if not cols:
        return ""
    methods = list(dict.fromkeys(m for r in cols for m in r.methods))
    heads = [f"n=({r.config.n1},{r.config.n2}) R={r.config.R}" for r in cols]
    width = max(12, *(len(h) for h in heads))
    lines = ["method".ljust(12) + "".join(h.rjust(width + 2) for h in heads)]
    for m in methods:
        cells = [f"{r.rate(m):.3f}" if m in r.methods else "-" for r in cols]
        lines.append(m.ljust(12) + "".join(c.rjust(width + 2) for c in cells))
    return "\n".join(lines)


@dataclass(frozen=True)
class TTestBH:
    t: np.ndarray
    p: np.ndarray
    selected: list


def welch_t(sample: LabeledSample):
    """Welch t statistics and two-sided p-values per variable (K = 2)."""
    if sample.K != 2:
        raise ValueError("the t-test baseline needs exactly K = 2 groups")
    a = sample.values[sample.labels == 0]
    b = sample.values[sample.labels == 1]
    with np.errstate(divide="ignore", invalid="ignore"), warnings.catch_warnings():
        # constant columns are handled below
        warnings.simplefilter("ignore", RuntimeWarning)
        t, p = stats.ttest_ind(a, b, equal_var=False, axis=0)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    # both groups constant: no evidence if the means agree, certain otherwise
    flat = np.isnan(t)
    same = np.isclose(a.mean(axis=0), b.mean(axis=0), rtol=0, atol=1e-12)
    t[flat & same] = 0.0
    p[flat & same] = 1.0
    t[flat & ~same] = np.inf * np.sign(a.mean(axis=0) - b.mean(axis=0))[flat & ~same]
    p[flat & ~same] = 0.0
    return t, p


def bh_select(p, q: float = 0.05) -> list:
    """Benjamini-Hochberg step-up at level ``q``; returns selected indices."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        return []
    adj = stats.false_discovery_control(p, method="bh")
    return [int(i) for i in np.flatnonzero(adj <= q)]


def ttest_bh_baseline(sample: LabeledSample, q: float = 0.05) -> TTestBH:
    t, p = welch_t(sample)
    return TTestBH(t, p, bh_select(p, q))


@dataclass(frozen=True)
class FprConfig:
    n1: int = 15
    n2: int = 15
    R: int = 50
    rho: float = 0.5
    nu: float = 2.0
    signal: int = 4
    reps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.signal < 1:
            raise ConfigError("signal must be >= 1")
        if self.signal > self.R:
            raise ConfigError(f"signal ({self.signal}) exceeds R ({self.R})")

    def sim_config(self) -> SimConfig:
        return SimConfig(n1=self.n1, n2=self.n2, R=self.R, rho=self.rho, nu=self.nu,
                         shifted_dims=self.signal, reps=self.reps, seed=self.seed)


@dataclass(frozen=True)
class FprResult:
    config: FprConfig
    fpr: dict        # method -> mean share of picks outside the signal set
    recovery: dict   # method -> share of reps whose picks equal the signal set


FPR_METHODS = ("ttest_bh", "backward_select")


def _fpr_replicate(cfg: FprConfig, rep: int, methods) -> dict:
    sample = draw_two_groups(cfg.sim_config(), make_rng(cfg.seed, rep, 0))
    k = cfg.signal
    picks = {}
    if "ttest_bh" in methods:
        _, p = welch_t(sample)
        picks["ttest_bh"] = np.argsort(p, kind="stable")[:k]
    if "backward_select" in methods:
        trace = backward_select(standardize(sample))
        picks["backward_select"] = top_by_average_rank(average_ranks(trace), k)
    return {m: int(np.count_nonzero(np.asarray(v) >= k)) for m, v in picks.items()}


def compare_selection_fpr(cfg: FprConfig, methods=FPR_METHODS, n_jobs: int = 1) -> FprResult:
    """Average false-positive share when each method picks ``signal`` variables.

    The t-test picks the smallest p-values, backward selection the smallest
    average ranks. The signal set is the first ``signal`` variables.
    """
    methods = tuple(methods)
    bad = [m for m in methods if m not in FPR_METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {bad}")
    if n_jobs == 1:
        rows = [_fpr_replicate(cfg, rep, methods) for rep in range(cfg.reps)]
    else:
        rows = Parallel(n_jobs=n_jobs)(
            delayed(_fpr_replicate)(cfg, rep, methods) for rep in range(cfg.reps))
    fpr = {m: float(np.mean([r[m] for r in rows]) / cfg.signal) for m in methods}
    rec = {m: float(np.mean([r[m] == 0 for r in rows])) for m in methods}
    return FprResult(cfg, fpr, rec)
