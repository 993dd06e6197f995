"""Batch experiment driver.

Subcommands: ``run`` (one hybrid reconstruction), ``compare`` (prior
variants on one data realization), ``fit`` (kernel hyperparameters from
training samples), ``gen`` (export a problem to files).  Configuration is
a flat key=value text file; unknown keys are rejected.  Every artifact
byte is determined by the config plus its seed, so wall-clock timing is
printed to stdout instead of being written to files.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ArgumentError,
    BreakdownError,
    ConfigError,
    MixkryError,
    SearchError,
)
from .learn import learn_matern, rademacher_probes, rblw_gamma
from .mixgk import mixgk_init, mixgk_step
from .operators import (
    Grid,
    KernelSpec,
    LinearOperator,
    PriorSpec,
    build_kernel_operator,
    grid_distances,
    identity_operator,
    load_matrix,
    load_samples,
    load_vector,
    noise_whitener,
    sample_covariance,
    save_matrix,
    save_vector,
    zero_operator,
)
from .params import (
    METHODS,
    RunRecord,
    SearchConfig,
    StoppingPolicy,
    select_params,
    selection_threads_from_env,
    stopping_check,
)
from .projected import (
    build_projected,
    projected_residual,
    recover_iterate,
    solve_projected,
)
from .testproblems import (
    add_noise,
    crosswell_tomo,
    gen_training_images,
    spherical_tomo,
    write_pgm,
)

__all__ = [
    "HybridResult",
    "run_hybrid",
    "Workload",
    "assemble_workload",
    "read_config",
    "resolve_config",
    "main",
]

_PRESETS = ("spherical", "crosswell", "file")
_VARIANTS = ("mix", "q1", "q2", "identity")


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# key -> (caster, default); None defaults are filled per preset or left unset
_KEYS = {
    "problem.preset": (str, "spherical"),
    "problem.size": (int, None),
    "problem.angles": (int, 16),
    "problem.circles": (int, 24),
    "problem.sources": (int, 10),
    "problem.receivers": (int, 20),
    "problem.train_count": (int, 49),
    "noise.level": (float, None),
    "noise.sigma": (float, None),
    "prior.mean": (str, None),
    "prior.q1.kernel": (str, None),
    "prior.q1.ell": (float, 0.25),
    "prior.q1.nu": (float, 0.5),
    "prior.q1.gamma_exp": (float, 1.0),
    "prior.q1.learn": (_bool, False),
    "prior.q2.source": (str, None),
    "prior.q2.kernel": (str, "rational-quadratic"),
    "prior.q2.ell": (float, 0.1),
    "prior.q2.nu": (float, 2.0),
    "prior.q2.gamma_exp": (float, 1.0),
    "file.a": (str, None),
    "file.b": (str, None),
    "file.s_true": (str, None),
    "file.mean": (str, None),
    "file.samples": (str, None),
    "select.method": (str, "wgcv"),
    "select.gamma": (float, None),
    "select.gamma_min": (float, 0.01),
    "select.omega": (float, None),
    "select.sigma2": (float, None),
    "select.grid_gamma": (int, 15),
    "select.grid_lambda": (int, 15),
    "select.log10_lambda_lo": (float, -6.0),
    "select.log10_lambda_hi": (float, 2.0),
    "select.refine_evals": (int, 200),
    "stop.max_iter": (int, 100),
    "stop.flat_tol": (float, 1e-4),
    "stop.residual_tol": (float, 1e-6),
    "stop.window": (int, 3),
    "seed": (int, 0),
    "out": (str, None),
    "compare.variants": (str, "mix,q1,q2,identity"),
    "fit.probes": (int, 20),
    "fit.repeats": (int, 6),
}

_PRESET_DEFAULTS = {
    "spherical": {
        "problem.size": 32,
        "noise.level": 0.03,
        "prior.mean": "train",
        "prior.q1.kernel": "matern",
        "prior.q2.source": "samples",
    },
    "crosswell": {
        "problem.size": 64,
        "noise.level": 0.01,
        "prior.mean": "zero",
        "prior.q1.kernel": "matern",
        "prior.q2.source": "kernel",
    },
    "file": {
        "prior.mean": "zero",
        "prior.q1.kernel": "identity",
        "prior.q2.source": "identity",
        "noise.sigma": 1.0,
    },
}

_CHOICES = {
    "problem.preset": _PRESETS,
    "prior.mean": ("train", "zero"),
    "prior.q2.source": ("samples", "kernel", "identity"),
    "select.method": METHODS,
}


def read_config(path):
    """Parse a flat key=value config file; comments start with '#'."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        if key in pairs:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def resolve_config(pairs):
    """Validate raw key=value pairs and fill preset-dependent defaults."""
    cfg = {}
    for key, value in pairs.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        caster = _KEYS[key][0]
        try:
            cfg[key] = caster(value) if isinstance(value, str) else value
        except (ValueError, TypeError):
            raise ConfigError(f"config key {key}: cannot parse {value!r}")
    preset = cfg.get("problem.preset", _KEYS["problem.preset"][1])
    if preset not in _PRESETS:
        raise ConfigError(f"problem.preset must be one of {_PRESETS}")
    for key, value in _PRESET_DEFAULTS[preset].items():
        cfg.setdefault(key, value)
    for key, (_, default) in _KEYS.items():
        if key not in cfg and default is not None:
            cfg[key] = default
    for key, allowed in _CHOICES.items():
        if key in cfg and cfg[key] not in allowed:
            raise ConfigError(f"config key {key} must be one of {allowed}")
    return cfg


# ---------------------------------------------------------------------------
# problem assembly


@dataclass
class Workload:
    """Everything one reconstruction needs, assembled from a config."""

    name: str
    A: LinearOperator
    b: np.ndarray
    b_true: np.ndarray
    s_true: np.ndarray
    sigma: float
    mean: np.ndarray
    grid: Grid
    mask: np.ndarray
    sample: object
    q1: LinearOperator
    q2: LinearOperator
    q2_source: str
    learned: object = None

    @property
    def m(self):
        return self.A.rows

    @property
    def n(self):
        return self.A.cols


def _kernel_operator(prefix, cfg, grid, dists, n):
    family = cfg[f"{prefix}.kernel"]
    if family == "identity":
        return identity_operator(n)
    if grid is None:
        raise ConfigError(
            f"{prefix}.kernel={family} needs a square grid; the problem size "
            "is not a perfect square"
        )
    spec = KernelSpec(family=family, ell=cfg[f"{prefix}.ell"],
                      nu=cfg[f"{prefix}.nu"],
                      gamma_exp=cfg[f"{prefix}.gamma_exp"])
    return build_kernel_operator(spec, grid, dists=dists)


def _maybe_learn_q1(cfg, work, dists):
    if not cfg["prior.q1.learn"]:
        return None
    if work.sample is None:
        raise ConfigError("prior.q1.learn=true needs training samples")
    family = cfg["prior.q1.kernel"]
    if family == "identity":
        raise ConfigError("prior.q1.learn=true needs a kernel family")
    fit = learn_matern(work.sample, work.grid, probes=cfg["fit.probes"],
                       seed=cfg["seed"] + 3, family=family)
    spec = KernelSpec(family=family, ell=fit.ell, nu=fit.nu,
                      gamma_exp=cfg["prior.q1.gamma_exp"])
    work.q1 = build_kernel_operator(spec, work.grid, dists=dists)
    work.learned = fit
    return fit


def assemble_workload(cfg):
    """Build operators, data, and priors for the configured problem."""
    preset = cfg["problem.preset"]
    seed = cfg["seed"]

    sample = None
    if preset == "spherical":
        size = cfg["problem.size"]
        prob = spherical_tomo(size, cfg["problem.angles"],
                              cfg["problem.circles"], seed=seed)
        train = gen_training_images(cfg["problem.train_count"], size, seed + 1)
        sample = sample_covariance(train.images.reshape(train.count, -1))
        b, sigma = add_noise(prob.b_clean, cfg["noise.level"], seed + 2)
        grid, mask, s_true = prob.grid, prob.mask, prob.s_true
        A, b_true, name = prob.A, prob.b_clean, preset
    elif preset == "crosswell":
        size = cfg["problem.size"]
        prob = crosswell_tomo(size, cfg["problem.sources"],
                              cfg["problem.receivers"], seed=seed)
        b, sigma = add_noise(prob.b_clean, cfg["noise.level"], seed + 2)
        grid, mask, s_true = prob.grid, prob.mask, prob.s_true
        A, b_true, name = prob.A, prob.b_clean, preset
    else:
        if not cfg.get("file.a") or not cfg.get("file.b"):
            raise ConfigError("problem.preset=file requires file.a and file.b")
        A = LinearOperator.from_matrix(load_matrix(cfg["file.a"]))
        b = load_vector(cfg["file.b"])
        if b.size != A.rows:
            raise ConfigError("file.b length does not match file.a rows")
        b_true = b.copy()
        s_true = None
        if cfg.get("file.s_true"):
            s_true = load_vector(cfg["file.s_true"])
        side = int(round(np.sqrt(A.cols)))
        grid = Grid(side, side) if side * side == A.cols else None
        mask = np.ones(A.cols, dtype=bool)
        sigma = cfg["noise.sigma"]
        if cfg.get("file.samples"):
            sample = sample_covariance(load_samples(cfg["file.samples"]).T)
            if sample.dim != A.cols:
                raise ConfigError("file.samples dimension does not match file.a")
        name = "file"

    n = A.cols
    mean_mode = cfg["prior.mean"]
    if preset == "file" and cfg.get("file.mean"):
        mean = load_vector(cfg["file.mean"])
        if mean.size != n:
            raise ConfigError("file.mean length does not match file.a columns")
    elif mean_mode == "train":
        if sample is None:
            raise ConfigError("prior.mean=train needs training samples")
        mean = sample.mean.copy()
    else:
        mean = np.zeros(n)

    dists = grid_distances(grid) if grid is not None else None
    q1 = _kernel_operator("prior.q1", cfg, grid, dists, n)

    q2_source = cfg["prior.q2.source"]
    if q2_source == "samples":
        if sample is None:
            raise ConfigError("prior.q2.source=samples needs training samples")
        q2 = sample.operator()
    elif q2_source == "kernel":
        q2 = _kernel_operator("prior.q2", cfg, grid, dists, n)
    else:
        q2 = identity_operator(n)

    work = Workload(name=name, A=A, b=np.asarray(b, dtype=float),
                    b_true=np.asarray(b_true, dtype=float), s_true=s_true,
                    sigma=float(sigma), mean=mean, grid=grid, mask=mask,
                    sample=sample, q1=q1, q2=q2, q2_source=q2_source)
    _maybe_learn_q1(cfg, work, dists)
    return work


def _whitener(sigma, m):
    if sigma > 0:
        return noise_whitener(sigma**2, m)
    return identity_operator(m), identity_operator(m)


def _search_config(cfg, work, method, fixed_gamma="config"):
    sigma2 = cfg.get("select.sigma2")
    if sigma2 is None and work.sigma > 0:
        sigma2 = work.sigma**2
    s_true = None
    if method == "optimal":
        if work.s_true is None:
            raise ConfigError("select.method=optimal requires file.s_true")
        s_true = work.s_true
    gamma_fixed = cfg.get("select.gamma") if fixed_gamma == "config" else fixed_gamma
    return SearchConfig(
        gamma_min=cfg["select.gamma_min"],
        gamma_fixed=gamma_fixed,
        grid_gamma=cfg["select.grid_gamma"],
        grid_lambda=cfg["select.grid_lambda"],
        log10_lambda=(cfg["select.log10_lambda_lo"],
                      cfg["select.log10_lambda_hi"]),
        refine_evals=cfg["select.refine_evals"],
        sigma2=sigma2,
        omega=cfg.get("select.omega"),
        s_true=s_true,
        threads=selection_threads_from_env(),
    )


def _stopping_policy(cfg):
    return StoppingPolicy(max_iter=cfg["stop.max_iter"],
                          flat_tol=cfg["stop.flat_tol"],
                          residual_tol=cfg["stop.residual_tol"],
                          window=cfg["stop.window"])


# ---------------------------------------------------------------------------
# driver


@dataclass
class HybridResult:
    """Outcome of one hybrid reconstruction run."""

    history: list
    selections: list
    solution: np.ndarray
    stop_reason: str
    state: object = None

    @property
    def final(self):
        return self.history[-1]


def run_hybrid(A, Rinv, LR, prior, b, method="wgcv", search=None, policy=None,
               s_true=None):
    """Iterate expansion, selection, and projected solves until stopping.

    Each outer iteration advances the subspace once, picks (gamma, lambda)
    for the current projection, and records the resulting iterate.  Raises
    :class:`BreakdownError` if the very first basis vector cannot be built.
    """
    if search is None:
        search = SearchConfig()
    if policy is None:
        policy = StoppingPolicy()
    # shift out the prior mean: expand on b - A mu, add mu back on recovery
    b_shift = np.asarray(b, dtype=float) - A.matvec(prior.mean)
    state = mixgk_init(A, Rinv, LR, prior.q1, prior.q2, b_shift)
    if state.terminal:
        raise BreakdownError(
            "bidiagonalization broke down before the first iterate "
            f"({state.breakdown_reason})"
        )
    if s_true is not None:
        s_true = np.asarray(s_true, dtype=float)
        norm_true = np.linalg.norm(s_true)
    history, selections = [], []
    solution = None
    stop_reason = None
    while True:
        mixgk_step(state)
        sel = select_params(method, state, prior, search)
        sys_k = build_projected(state, sel.gamma)
        y = solve_projected(sys_k, sel.lam)
        resid = projected_residual(sys_k, y)
        rel_res = float(np.linalg.norm(resid)) / state.beta1
        solution = recover_iterate(state, prior, sel.gamma, y)
        rel_err = None
        if s_true is not None and norm_true > 0:
            rel_err = float(np.linalg.norm(solution - s_true) / norm_true)
        history.append(RunRecord(k=state.k, lam=sel.lam, gamma=sel.gamma,
                                 objective=sel.objective,
                                 rel_residual=rel_res, rel_error=rel_err))
        selections.append(sel)
        decision = stopping_check(history, policy)
        if decision.stop:
            stop_reason = decision.reason
            break
        if state.terminal:
            stop_reason = f"breakdown:{state.breakdown_reason}"
            break
    return HybridResult(history=history, selections=selections,
                        solution=solution, stop_reason=stop_reason,
                        state=state)


# ---------------------------------------------------------------------------
# artifact writers


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        # plain-float repr; numpy scalars would stringify as np.float64(x)
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_run_csv(path, history):
    _write_csv(path, ("k", "lambda", "gamma", "objective", "rel_residual",
                      "rel_error", "ms"),
               [(r.k, r.lam, r.gamma, r.objective, r.rel_residual,
                 r.rel_error, r.ms) for r in history])


def _write_params_csv(path, history, selections):
    _write_csv(path, ("k", "method", "gamma", "lambda", "objective",
                      "evaluations", "converged"),
               [(rec.k, sel.method, sel.gamma, sel.lam, sel.objective,
                 sel.evaluations, sel.converged)
                for rec, sel in zip(history, selections)])


def _write_images(outdir, work, result, summary):
    if work.grid is None:
        return
    shape = (work.grid.ny, work.grid.nx)
    lo, hi = write_pgm(outdir / "recon.pgm", result.solution.reshape(shape))
    summary.append(f"recon_scale: {_fmt(lo)} {_fmt(hi)}")
    if work.s_true is not None:
        lo, hi = write_pgm(outdir / "truth.pgm", work.s_true.reshape(shape))
        summary.append(f"truth_scale: {_fmt(lo)} {_fmt(hi)}")


def _summarize_run(work, method, result, summary):
    final = result.final
    summary.append(f"problem: {work.name}")
    summary.append(f"m: {work.m}")
    summary.append(f"n: {work.n}")
    summary.append(f"method: {method}")
    summary.append(f"iterations: {final.k}")
    summary.append(f"stop_reason: {result.stop_reason}")
    summary.append(f"gamma: {_fmt(final.gamma)}")
    summary.append(f"lambda: {_fmt(final.lam)}")
    summary.append(f"objective: {_fmt(final.objective)}")
    summary.append(f"rel_residual: {_fmt(final.rel_residual)}")
    summary.append(f"rel_error: {_fmt(final.rel_error)}")
    summary.append(f"noise_sigma: {_fmt(work.sigma)}")
    if work.s_true is not None:
        norm_true = np.linalg.norm(work.s_true)
        if norm_true > 0:
            start = float(np.linalg.norm(work.mean - work.s_true)) / norm_true
            summary.append(f"rel_error_start: {_fmt(start)}")
    if work.learned is not None:
        summary.append(f"learned_nu: {_fmt(work.learned.nu)}")
        summary.append(f"learned_ell: {_fmt(work.learned.ell)}")


def _outdir(cfg):
    if not cfg.get("out"):
        raise ConfigError("config key 'out' (output directory) is required")
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


# ---------------------------------------------------------------------------
# subcommands


def _cmd_run(cfg):
    outdir = _outdir(cfg)
    work = assemble_workload(cfg)
    method = cfg["select.method"]
    search = _search_config(cfg, work, method)
    policy = _stopping_policy(cfg)
    Rinv, LR = _whitener(work.sigma, work.m)
    prior = PriorSpec(mean=work.mean, q1=work.q1, q2=work.q2)

    start = time.perf_counter()
    result = run_hybrid(work.A, Rinv, LR, prior, work.b, method=method,
                        search=search, policy=policy, s_true=work.s_true)
    elapsed = (time.perf_counter() - start) * 1e3

    _write_run_csv(outdir / "run.csv", result.history)
    _write_params_csv(outdir / "params.csv", result.history, result.selections)
    summary = []
    _summarize_run(work, method, result, summary)
    _write_images(outdir, work, result, summary)
    (outdir / "summary.txt").write_text("\n".join(summary) + "\n")
    final = result.final
    print(f"run: k={final.k} gamma={final.gamma:.4g} lambda={final.lam:.4g} "
          f"stop={result.stop_reason} ({elapsed:.1f} ms)")
    return 0


def _blend_with_identity(sample, rho):
    n = sample.dim

    def apply(x):
        return rho * np.asarray(x, dtype=float) + (1.0 - rho) * sample.apply(x)

    return LinearOperator(n, n, apply, apply)


def _variant_runs(cfg, work):
    """Prior configuration per compare variant.

    mix searches gamma over the full mixture; q1 and identity fix gamma = 1
    on a single covariance; q2 uses the second component alone, blended
    with the identity by the shrinkage weight when it is sample-based
    (a bare sample covariance is rank-deficient and cannot anchor the
    bidiagonalization).
    """
    n = work.n
    zero = zero_operator(n)
    for tag in _parse_variants(cfg):
        note = ""
        if tag == "mix":
            prior = PriorSpec(mean=work.mean, q1=work.q1, q2=work.q2)
            fixed = "config"
        elif tag == "q1":
            prior = PriorSpec(mean=work.mean, q1=work.q1, q2=zero,
                              gamma_mode="fixed", gamma=1.0)
            fixed = None
        elif tag == "q2":
            if work.q2_source == "samples":
                rho = rblw_gamma(work.sample)
                op = _blend_with_identity(work.sample, rho)
                note = f"rblw_rho: {_fmt(rho)}"
            else:
                op = work.q2
            prior = PriorSpec(mean=work.mean, q1=op, q2=zero,
                              gamma_mode="fixed", gamma=1.0)
            fixed = None
        else:
            prior = PriorSpec(mean=work.mean, q1=identity_operator(n), q2=zero,
                              gamma_mode="fixed", gamma=1.0)
            fixed = None
        yield tag, prior, fixed, note


def _parse_variants(cfg):
    tags = [t.strip() for t in cfg["compare.variants"].split(",") if t.strip()]
    if not tags:
        raise ConfigError("compare.variants is empty")
    for tag in tags:
        if tag not in _VARIANTS:
            raise ConfigError(
                f"unknown compare variant {tag!r}; allowed: {_VARIANTS}")
    return tags


def _cmd_compare(cfg):
    outdir = _outdir(cfg)
    work = assemble_workload(cfg)
    method = cfg["select.method"]
    policy = _stopping_policy(cfg)
    Rinv, LR = _whitener(work.sigma, work.m)

    rows = []
    summary = [f"problem: {work.name}", f"m: {work.m}", f"n: {work.n}",
               f"method: {method}"]
    for tag, prior, fixed, note in _variant_runs(cfg, work):
        search = _search_config(cfg, work, method, fixed_gamma=fixed)
        # fixed-gamma variants search only lambda; the prior pins gamma
        start = time.perf_counter()
        result = run_hybrid(work.A, Rinv, LR, prior, work.b, method=method,
                            search=search, policy=policy, s_true=work.s_true)
        elapsed = (time.perf_counter() - start) * 1e3
        vdir = outdir / tag
        vdir.mkdir(parents=True, exist_ok=True)
        _write_run_csv(vdir / "run.csv", result.history)
        _write_params_csv(vdir / "params.csv", result.history,
                          result.selections)
        vsummary = []
        _summarize_run(work, method, result, vsummary)
        _write_images(vdir, work, result, vsummary)
        (vdir / "summary.txt").write_text("\n".join(vsummary) + "\n")
        final = result.final
        rows.append((tag, final.k, final.gamma, final.lam, final.objective,
                     final.rel_residual, final.rel_error, result.stop_reason))
        summary.append(f"{tag}: k={final.k} rel_error={_fmt(final.rel_error)} "
                       f"stop={result.stop_reason}")
        if note:
            summary.append(note)
        print(f"compare[{tag}]: k={final.k} "
              f"rel_error={_fmt(final.rel_error)} ({elapsed:.1f} ms)")
    _write_csv(outdir / "compare.csv",
               ("variant", "k", "gamma", "lambda", "objective",
                "rel_residual", "rel_error", "stop_reason"), rows)
    (outdir / "summary.txt").write_text("\n".join(summary) + "\n")
    return 0


def _cmd_fit(cfg):
    outdir = _outdir(cfg)
    work = assemble_workload(cfg)
    if work.sample is None:
        raise ConfigError(
            "fit needs training samples (spherical preset or file.samples)")
    if work.grid is None:
        raise ConfigError("fit needs a square grid for the kernel")
    family = cfg["prior.q1.kernel"]
    if family == "identity":
        raise ConfigError("fit needs a kernel family in prior.q1.kernel")
    probes = cfg["fit.probes"]
    repeats = cfg["fit.repeats"]
    if repeats < 2:
        raise ConfigError("fit.repeats must be at least 2")
    seed = cfg["seed"]

    start = time.perf_counter()
    fit = learn_matern(work.sample, work.grid, probes=probes, seed=seed + 3,
                       family=family)
    elapsed = (time.perf_counter() - start) * 1e3

    # probe-count sweep at the learned parameters: standard error of the
    # mismatch estimate shrinks as the probe count grows
    dists = grid_distances(work.grid)
    spec = KernelSpec(family=family, ell=fit.ell, nu=fit.nu)
    K = build_kernel_operator(spec, work.grid, dists=dists).mat
    ladder = sorted({max(2, probes // 4), probes, 4 * probes})
    sweep = []
    for mi, count in enumerate(ladder):
        vals = []
        for rep in range(repeats):
            xi = rademacher_probes(work.grid.n, count,
                                   seed + 1000 * (mi + 1) + rep)
            diff = K @ xi - work.sample.apply(xi)
            vals.append(float(np.mean(np.sum(diff * diff, axis=0))))
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / np.sqrt(repeats))
        sweep.append((count, repeats, mean, se))
    _write_csv(outdir / "fit.csv",
               ("probes", "repeats", "mean_objective", "se_objective"), sweep)
    summary = [
        f"problem: {work.name}",
        f"family: {family}",
        f"samples: {work.sample.count}",
        f"prior.q1.nu={_fmt(fit.nu)}",
        f"prior.q1.ell={_fmt(fit.ell)}",
        f"objective: {_fmt(fit.objective)}",
        f"probes: {fit.probes}",
    ]
    (outdir / "summary.txt").write_text("\n".join(summary) + "\n")
    print(f"fit: nu={fit.nu:.4g} ell={fit.ell:.4g} ({elapsed:.1f} ms)")
    return 0


def _cmd_gen(cfg):
    outdir = _outdir(cfg)
    work = assemble_workload(cfg)
    save_matrix(outdir / "A.mtx", work.A.mat)
    save_vector(outdir / "b.mtx", work.b)
    save_vector(outdir / "b_true.mtx", work.b_true)
    summary = [f"problem: {work.name}", f"m: {work.m}", f"n: {work.n}",
               f"noise_sigma: {_fmt(work.sigma)}"]
    if work.s_true is not None:
        save_vector(outdir / "s_true.mtx", work.s_true)
        if work.grid is not None:
            shape = (work.grid.ny, work.grid.nx)
            lo, hi = write_pgm(outdir / "truth.pgm", work.s_true.reshape(shape))
            summary.append(f"truth_scale: {_fmt(lo)} {_fmt(hi)}")
    if work.sample is not None:
        cols = work.sample.mean[:, None] + work.sample.factor * np.sqrt(
            work.sample.count)
        save_matrix(outdir / "samples.mtx", cols)
        summary.append(f"samples: {work.sample.count}")
    (outdir / "summary.txt").write_text("\n".join(summary) + "\n")
    print(f"gen: wrote {work.name} problem to {outdir}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _load_cfg(args):
    pairs = read_config(args.config)
    for item in args.overrides:
        key, eq, value = item.partition("=")
        if not eq or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        pairs[key.strip()] = value.strip()
    if args.out:
        pairs["out"] = args.out
    return resolve_config(pairs)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mixkry",
        description="Hybrid projection solver for mixed Gaussian priors",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in (("run", _cmd_run), ("compare", _cmd_compare),
                          ("fit", _cmd_fit)):
        p = sub.add_parser(name)
        p.add_argument("config", help="flat key=value config file")
        p.add_argument("overrides", nargs="*",
                       help="key=value overrides applied after the file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.set_defaults(handler=handler, gen=False)
    g = sub.add_parser("gen")
    g.add_argument("preset", choices=_PRESETS[:2],
                   help="problem preset to export")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=None)
    g.set_defaults(handler=_cmd_gen, gen=True)

    args = parser.parse_args(argv)
    try:
        if args.gen:
            pairs = {"problem.preset": args.preset, "out": args.out,
                     "seed": args.seed}
            if args.size is not None:
                pairs["problem.size"] = args.size
            cfg = resolve_config(pairs)
        else:
            cfg = _load_cfg(args)
        return args.handler(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BreakdownError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MixkryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
