"""Experiment configuration: flat sectioned key=value files.

Sections and keys (defaults in parentheses):

    [kernel]      family = liouville_fbm | fbm | mbm ; hurst ; hurst_expr ;
                  T (1.0)
    [sigma]       kind = constant | table ; value (1.0) ; times ; values
    [grids]       t0 (0.05) ; n_time (128) ; x_halfwidth (0 = auto) ;
                  n_space (321) ; n_var (128) ; var_power (2.0)
    [driver]      expr (0) or name = zero|one|minus_y ; lipschitz (1.0) ;
                  degree (4)
    [terminal]    expr (x) or name = identity|one|square|relu|cos ;
                  growth_c (8.0) ; growth_lambda (0.05)
    [driver2]     second problem for `compare` (same keys as [driver])
    [terminal2]   second problem for `compare`
    [mc]          n_paths (4000) ; seed (12345) ; export_paths (16)
    [bsde]        base_steps (64) ; n_levels (4)
    [tolerances]  quad_abs (1e-8) ; quad_rel (1e-6) ; picard_tol (1e-10) ;
                  max_iter (60)

Comments start with '#'.  The canonical hash covers the parsed semantic
fields only, so formatting or comment edits do not change it.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigError
from .expressions import ExpressionError, compile_expression
from .operators import Volatility, graded_grid, variance_curve
from .pde import Driver, GrowthBudget, TerminalCondition, default_halfwidth
from .quadrature import SingularQuadRule

_DEFAULTS = {
    ("kernel", "T"): "1.0",
    ("sigma", "kind"): "constant",
    ("sigma", "value"): "1.0",
    ("grids", "t0"): "0.05",
    ("grids", "n_time"): "128",
    ("grids", "x_halfwidth"): "0",
    ("grids", "n_space"): "321",
    ("grids", "n_var"): "128",
    ("grids", "var_power"): "2.0",
    ("driver", "expr"): "0",
    ("driver", "lipschitz"): "1.0",
    ("driver", "degree"): "4",
    ("terminal", "expr"): "x",
    ("terminal", "growth_c"): "8.0",
    ("terminal", "growth_lambda"): "0.05",
    ("mc", "n_paths"): "4000",
    ("mc", "seed"): "12345",
    ("mc", "export_paths"): "16",
    ("bsde", "base_steps"): "64",
    ("bsde", "n_levels"): "4",
    ("tolerances", "quad_abs"): "1e-8",
    ("tolerances", "quad_rel"): "1e-6",
    ("tolerances", "picard_tol"): "1e-10",
    ("tolerances", "max_iter"): "60",
}


@dataclass
class ExperimentConfig:
    """Parsed and semantically validated experiment description."""

    values: dict = field(default_factory=dict)
    path: Optional[str] = None

    def get(self, section, key, cast=str):
        raw = self.values.get((section, key))
        if raw is None:
            raw = _DEFAULTS.get((section, key))
        if raw is None:
            raise ConfigError(f"missing config key [{section}] {key}", key=f"{section}.{key}")
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(
                f"bad value for [{section}] {key}: {raw!r} ({exc})",
                key=f"{section}.{key}",
            ) from exc

    def has(self, section, key):
        return (section, key) in self.values

    def canonical_text(self):
        merged = dict(_DEFAULTS)
        merged.update(self.values)
        lines = [f"{s}.{k}={merged[(s, k)]}" for s, k in sorted(merged)]
        return "\n".join(lines) + "\n"

    def canonical_hash(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            values[(section, key)] = raw.strip()
    return ExperimentConfig(values=values, path=str(path))


# -- builders -----------------------------------------------------------------


def build_kernel(cfg):
    family = cfg.get("kernel", "family")
    T = cfg.get("kernel", "T", float)
    if family in (kernels.LIOUVILLE, kernels.FBM):
        if not cfg.has("kernel", "hurst"):
            raise ConfigError("missing config key [kernel] hurst", key="kernel.hurst")
        hurst = cfg.get("kernel", "hurst", float)
        try:
            return kernels.KernelSpec(family=family, T=T, hurst=hurst)
        except Exception as exc:
            raise ConfigError(f"invalid kernel: {exc}", key="kernel.hurst") from exc
    if family == kernels.MBM:
        src = cfg.get("kernel", "hurst_expr")
        try:
            expr = compile_expression(src, ("t",))
        except ExpressionError as exc:
            raise ConfigError(f"bad hurst_expr: {exc}", key="kernel.hurst_expr") from exc

        def hfn(t):
            return expr(t=np.asarray(t, dtype=float)) * np.ones_like(np.asarray(t, dtype=float))

        try:
            return kernels.multifractional(hfn, T)
        except Exception as exc:
            raise ConfigError(f"invalid kernel: {exc}", key="kernel.hurst_expr") from exc
    raise ConfigError(f"unknown kernel family {family!r}", key="kernel.family")


def build_sigma(cfg):
    kind = cfg.get("sigma", "kind")
    if kind == "constant":
        return Volatility.constant(cfg.get("sigma", "value", float))
    if kind == "table":
        try:
            times = [float(v) for v in cfg.get("sigma", "times").split(",")]
            values = [float(v) for v in cfg.get("sigma", "values").split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad sigma table: {exc}", key="sigma.times") from exc
        if len(times) != len(values):
            raise ConfigError("sigma times/values length mismatch", key="sigma.values")
        return Volatility.from_table(times, values)
    raise ConfigError(f"unknown sigma kind {kind!r}", key="sigma.kind")


def build_rule(cfg):
    return SingularQuadRule(
        abs_tol=cfg.get("tolerances", "quad_abs", float),
        rel_tol=cfg.get("tolerances", "quad_rel", float),
    )


def build_varcurve(cfg, kernel, sigma, rule):
    n_var = cfg.get("grids", "n_var", int)
    power = cfg.get("grids", "var_power", float)
    if n_var < 8:
        raise ConfigError("n_var must be >= 8", key="grids.n_var")
    grid = graded_grid(kernel.T, n_var, power=power)
    return variance_curve(kernel, sigma, grid, rule=rule)


# builtin problem names usable instead of an expression
_DRIVER_BUILTINS = {"zero": "0", "one": "1", "minus_y": "-y"}
_TERMINAL_BUILTINS = {"identity": "x", "one": "1", "square": "x^2",
                      "relu": "max(x, 0)", "cos": "cos(x)"}


def _expr_source(cfg, section, fallback_section, builtins):
    if cfg.has(section, "name"):
        name = cfg.get(section, "name")
        if name not in builtins:
            raise ConfigError(
                f"unknown builtin {name!r} (choices: {sorted(builtins)})",
                key=f"{section}.name",
            )
        return builtins[name]
    if cfg.has(section, "expr"):
        return cfg.get(section, "expr")
    return cfg.get(fallback_section, "expr")


def build_driver(cfg, section="driver"):
    src = _expr_source(cfg, section, "driver", _DRIVER_BUILTINS)
    lipschitz = cfg.get(section, "lipschitz", float) if cfg.has(section, "lipschitz") \
        else cfg.get("driver", "lipschitz", float)
    degree = cfg.get(section, "degree", int) if cfg.has(section, "degree") \
        else cfg.get("driver", "degree", int)
    try:
        expr = compile_expression(src, ("t", "x", "y", "z"))
    except ExpressionError as exc:
        raise ConfigError(f"bad driver expr: {exc}", key=f"{section}.expr") from exc

    def f_fn(t, x, y, z):
        shape = np.broadcast(t, x, y, z).shape
        return np.broadcast_to(
            np.asarray(expr(t=t, x=x, y=y, z=z), dtype=float), shape
        ).copy()

    return Driver(f_fn=f_fn, lipschitz_yz=lipschitz, growth_degree=degree,
                  label=expr.source)


def build_terminal(cfg, varcurve=None, section="terminal"):
    src = _expr_source(cfg, section, "terminal", _TERMINAL_BUILTINS)
    c = cfg.get(section, "growth_c", float) if cfg.has(section, "growth_c") \
        else cfg.get("terminal", "growth_c", float)
    lam = cfg.get(section, "growth_lambda", float) if cfg.has(section, "growth_lambda") \
        else cfg.get("terminal", "growth_lambda", float)
    try:
        expr = compile_expression(src, ("x",))
    except ExpressionError as exc:
        raise ConfigError(f"bad terminal expr: {exc}", key=f"{section}.expr") from exc

    def g_fn(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(expr(x=x), dtype=float), x.shape).copy()

    budget = GrowthBudget(c=c, lam=lam)
    terminal = TerminalCondition(g_fn=g_fn, growth=budget, label=expr.source)
    if varcurve is not None:
        try:
            budget.check_against(varcurve)
        except Exception as exc:
            raise ConfigError(
                f"terminal growth budget: {exc}", key=f"{section}.growth_lambda"
            ) from exc
    return terminal


def build_grids(cfg, varcurve):
    """PDE/simulation grids on [0, T] plus the BSDE window start t0 > 0.

    Paths and the PDE always live on the full interval (the Wiener
    integrals defining X and N start at 0); t0 only delimits the window of
    the Brownian-side BSDE checks, which divide by the variance rate.
    """
    t0 = cfg.get("grids", "t0", float)
    n_time = cfg.get("grids", "n_time", int)
    n_space = cfg.get("grids", "n_space", int)
    halfwidth = cfg.get("grids", "x_halfwidth", float)
    T = varcurve.T
    if not (0.0 < t0 < T):
        raise ConfigError(f"t0 must lie in (0, T), got {t0}", key="grids.t0")
    if n_time < 2 or n_space < 9:
        raise ConfigError("n_time >= 2 and n_space >= 9 required", key="grids.n_time")
    if halfwidth <= 0:
        halfwidth = default_halfwidth(varcurve)
    tgrid = np.linspace(0.0, T, n_time + 1)
    xgrid = np.linspace(-halfwidth, halfwidth, n_space)
    return tgrid, xgrid, t0
