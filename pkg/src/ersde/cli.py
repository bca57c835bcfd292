"""Command-line driver.

Settings come from defaults, then an optional flat ``key = value`` config file
(``--config``), then command-line flags.  Every subcommand writes CSV with
17 significant digits and is reproducible from its settings and seed
(timing columns excepted).

Exit codes: 0 success, 2 configuration error, 3 admissibility error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
import warnings
from dataclasses import dataclass, fields

import numpy as np

from .errors import AdmissibilityError, ParameterError, SolverError
from .noise_scale import CATALOGUE_NAMES, check_admissible, fei_curve, parse_phi
from .predictors import ConstantPredictor, GaussianMixtureOracle, MixturePredictor
from .reference import compute_metrics, convergence_study
from .schedules import (SCHEDULE_KINDS, VE_EDM, VP_FROM_EDM, VP_LINEAR,
                        CosineVPSchedule, LinearVPSchedule, TimeGrid, edm_step_grid,
                        edm_to_vp, uniform_time_grid)
from .solvers import SamplerConfig, sample

EXIT_OK, EXIT_CONFIG, EXIT_ADMISSIBILITY, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_COMPONENTS = ((0.5, (2.0, 0.0), 0.25), (0.5, (-2.0, 0.0), 0.25))


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def parse_component(text: str):
    """``weight, mean_0, ..., mean_{D-1}, scale`` -> (w, means, scale)."""
    vals = [float(v) for v in text.replace(" ", "").split(",") if v]
    if len(vals) < 3:
        raise ParameterError(f"component needs weight, >=1 mean, scale: {text!r}")
    return (vals[0], tuple(vals[1:-1]), vals[-1])


def format_component(comp) -> str:
    w, mu, s = comp
    return ",".join(fmt(float(v)) for v in (w, *mu, s))


@dataclass
class RunConfig:
    command: str = "sample"
    schedule: str = VE_EDM
    steps: int = 10
    phi: str = "er5"
    order: int = 3
    param: str = "ve"
    quad_points: int = 100
    quadrature: str = "midpoint"
    chains: int = 1
    seed: int = 0
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    cosine_s: float = 0.008
    epsilon: float = 1e-3
    terminal: str = "zero"
    components: tuple = DEFAULT_COMPONENTS
    phis: tuple[str, ...] = CATALOGUE_NAMES
    nfe: tuple[int, ...] = (10, 20, 30, 50)
    orders: tuple[int, ...] = (1, 2, 3)
    steps_list: tuple[int, ...] = (10, 20, 40, 80, 160)
    model: str = "gaussian"
    reference_samples: int = 10_000
    out: str = "-"

    _LIST_KEYS = {"phis": _names, "nfe": _ints, "orders": _ints, "steps_list": _ints}

    # ---- serialization -------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "components":
                lines += [f"component = {format_component(c)}" for c in value]
            elif isinstance(value, tuple):
                lines.append(f"{f.name} = {','.join(fmt(v) for v in value)}")
            else:
                lines.append(f"{f.name} = {fmt(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_items(cls, text: str) -> dict:
        """Parse ``key = value`` lines ('#' comments) into typed field values."""
        types = {f.name: f.type for f in fields(cls)}
        out: dict = {}
        comps = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key == "component":
                comps.append(parse_component(value))
                continue
            if key not in types or key == "components":
                raise ParameterError(f"config line {lineno}: unknown key {key!r}")
            out[key] = cls._convert(key, value)
        if comps:
            out["components"] = tuple(comps)
        return out

    @classmethod
    def _convert(cls, key, value):
        default = getattr(cls, key)
        try:
            if key in cls._LIST_KEYS:
                return cls._LIST_KEYS[key](value)
            if isinstance(default, int):
                return int(value)
            if isinstance(default, float):
                return float(value)
        except ValueError:
            raise ParameterError(f"{key}: cannot parse {value!r}") from None
        return value

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(**cls.parse_items(text))

    # ---- validation and derived objects ---------------------------------
    def validate(self) -> None:
        if self.schedule not in SCHEDULE_KINDS:
            raise ParameterError(f"schedule: expected one of {SCHEDULE_KINDS}, got {self.schedule!r}")
        if self.param not in ("ve", "vp"):
            raise ParameterError(f"param: expected 've' or 'vp', got {self.param!r}")
        if self.param == "vp" and self.schedule == VE_EDM:
            raise ParameterError("param: the VP solver needs a vp-* schedule")
        if self.param == "ve" and self.schedule != VE_EDM:
            raise ParameterError("param: the VE solver needs the ve-edm schedule")
        if self.order not in (1, 2, 3):
            raise ParameterError(f"order: expected 1, 2 or 3, got {self.order}")
        if self.steps < 1:
            raise ParameterError(f"steps: must be >= 1, got {self.steps}")
        if self.chains < 1:
            raise ParameterError(f"chains: must be >= 1, got {self.chains}")
        if self.quad_points < 1:
            raise ParameterError(f"quad_points: must be >= 1, got {self.quad_points}")
        if self.terminal not in ("zero", "none"):
            raise ParameterError(f"terminal: expected 'zero' or 'none', got {self.terminal!r}")
        if self.model not in ("gaussian", "constant"):
            raise ParameterError(f"model: expected 'gaussian' or 'constant', got {self.model!r}")
        if not self.components:
            raise ParameterError("components: at least one oracle component is required")

    def make_grid(self, steps: int | None = None) -> TimeGrid:
        steps = self.steps if steps is None else steps
        terminal = self.terminal == "zero"
        count = steps if terminal else steps + 1
        if self.schedule in (VE_EDM, VP_FROM_EDM):
            grid = edm_step_grid(count, self.sigma_min, self.sigma_max, self.rho, terminal)
            if self.schedule == VP_FROM_EDM:
                grid = edm_to_vp(self.sigma_min, self.sigma_max, self.epsilon).grid_from_levels(
                    grid.lambdas)
            return grid
        schedule = (LinearVPSchedule(self.beta_min, self.beta_max) if self.schedule == VP_LINEAR
                    else CosineVPSchedule(self.cosine_s))
        return uniform_time_grid(count, self.epsilon, schedule, terminal)

    def make_oracle(self) -> GaussianMixtureOracle:
        w = np.array([c[0] for c in self.components])
        dims = {len(c[1]) for c in self.components}
        if len(dims) != 1:
            raise ParameterError("components: all means need the same dimension")
        mu = np.array([c[1] for c in self.components])
        s = np.array([c[2] for c in self.components])
        return GaussianMixtureOracle(w, mu, s)

    def sampler_config(self, grid: TimeGrid, order: int | None = None,
                       chains: int | None = None) -> SamplerConfig:
        return SamplerConfig(
            grid=grid, phi=parse_phi(self.phi), order=self.order if order is None else order,
            param=self.param, quad_points=self.quad_points, quadrature=self.quadrature,
            seed=self.seed, chains=self.chains if chains is None else chains,
            record_states=False)


def _require_admissible(phi_name: str, grid: TimeGrid) -> None:
    phi = parse_phi(phi_name)
    report = check_admissible(phi, grid)
    if not report.passed:
        lo, hi = report.violation
        raise AdmissibilityError(
            f"phi {phi.name} is not admissible: phi(x_t)/phi(x_s) > x_t/x_s at "
            f"x_t={fmt(lo)}, x_s={fmt(hi)}", pair=report.violation)


def _warn_warmup(cfg: RunConfig, order: int, steps: int, err) -> None:
    if order > steps:
        print(f"warning: order {order} with {steps} steps; early steps run at reduced "
              "order during multistep warm-up", file=err)


def cmd_sample(cfg: RunConfig, out, err) -> None:
    grid = cfg.make_grid()
    _require_admissible(cfg.phi, grid)
    _warn_warmup(cfg, cfg.order, grid.steps, err)
    model = MixturePredictor(cfg.make_oracle())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = sample(cfg.sampler_config(grid), model)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["chain", *(f"dim_{d}" for d in range(model.dim))])
    for c, row in enumerate(res.samples):
        w.writerow([c, *(fmt(v) for v in row)])


def cmd_fei(cfg: RunConfig, out, err) -> None:
    grid = cfg.make_grid()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["step", "phi_name", "fei"])
    for name in cfg.phis:
        phi = parse_phi(name)
        for i, value in fei_curve(phi, grid):
            w.writerow([i, phi.name, fmt(value)])


def cmd_check(cfg: RunConfig, out, err) -> bool:
    grid = cfg.make_grid()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["phi_name", "passed", "pairs_checked", "violation_x_t", "violation_x_s"])
    ok = True
    for name in cfg.phis:
        phi = parse_phi(name)
        rep = check_admissible(phi, grid)
        lo, hi = rep.violation if rep.violation else ("", "")
        w.writerow([phi.name, int(rep.passed), rep.pairs_checked, fmt(lo), fmt(hi)])
        ok &= rep.passed
    return ok


def cmd_sweep(cfg: RunConfig, out, err) -> None:
    oracle = cfg.make_oracle()
    reference = oracle.sample(cfg.reference_samples, np.random.default_rng([cfg.seed, 7919]))
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["nfe", "order", "phi", "mean_error", "cov_error", "energy_distance", "wall_ms"])
    for nfe in cfg.nfe:
        grid = cfg.make_grid(nfe)
        _require_admissible(cfg.phi, grid)
        for order in cfg.orders:
            _warn_warmup(cfg, order, nfe, err)
            start = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = sample(cfg.sampler_config(grid, order=order), MixturePredictor(oracle))
            wall_ms = (time.perf_counter() - start) * 1e3
            rep = compute_metrics(res.samples, reference, seed=cfg.seed)
            w.writerow([nfe, order, cfg.phi, fmt(rep.mean_error), fmt(rep.cov_error),
                        fmt(rep.energy_distance), fmt(round(wall_ms, 3))])


def cmd_convergence(cfg: RunConfig, out, err) -> None:
    if cfg.model == "constant":
        oracle = cfg.make_oracle()
        model = ConstantPredictor(oracle.mean())
    else:
        oracle = cfg.make_oracle()
        if not oracle.is_single:
            oracle = GaussianMixtureOracle.single(np.zeros(oracle.dim))
        model = MixturePredictor(oracle)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["order", "M", "error", "slope"])
    for order in cfg.orders:
        grids = {m: cfg.make_grid(m) for m in cfg.steps_list}
        res = convergence_study(order, model, cfg.steps_list, phi=parse_phi("ode"),
                                grid_factory=grids.__getitem__, param=cfg.param,
                                quad_points=cfg.quad_points, quadrature=cfg.quadrature)
        for m, e in zip(res.steps, res.errors):
            w.writerow([order, m, fmt(e), fmt(res.slope)])


COMMANDS = {
    "sample": cmd_sample,
    "fei": cmd_fei,
    "check": cmd_check,
    "sweep": cmd_sweep,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--config", help="flat key = value settings file; flags override it")
    a("--schedule", choices=SCHEDULE_KINDS)
    a("--steps", type=int, help="number of solver steps M (= NFE)")
    a("--phi", help=f"noise-scale function: {', '.join(CATALOGUE_NAMES)} or pow:<p>")
    a("--order", type=int, choices=(1, 2, 3))
    a("--param", choices=("ve", "vp"))
    a("--quad-points", type=int, help="quadrature points N (default 100)")
    a("--quadrature", choices=("midpoint", "left"))
    a("--chains", type=int)
    a("--seed", type=int)
    a("--oracle", help="file of 'component = w, mean..., scale' lines")
    a("--out", help="output CSV path ('-' for stdout)")
    a("--sigma-min", type=float)
    a("--sigma-max", type=float)
    a("--rho", type=float)
    a("--beta-min", type=float)
    a("--beta-max", type=float)
    a("--cosine-s", type=float)
    a("--epsilon", type=float)
    a("--terminal", choices=("zero", "none"),
      help="append a final level-0 node (zero) or stop at the last formula node (none)")
    a("--phis", help="comma-separated phi names (fei, check)")
    a("--nfe", help="comma-separated NFE list (sweep)")
    a("--orders", help="comma-separated solver orders (sweep, convergence)")
    a("--steps-list", help="comma-separated M values (convergence)")
    a("--model", choices=("gaussian", "constant"), help="predictor for convergence")
    a("--reference-samples", type=int, help="exact oracle draws for sweep metrics")

    parser = argparse.ArgumentParser(prog="ersde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="run chains, write terminal samples")
    sub.add_parser("fei", parents=[common], help="per-step FEI coefficients")
    sub.add_parser("check", parents=[common], help="admissibility report per phi")
    sub.add_parser("sweep", parents=[common], help="metrics over NFE and order")
    sub.add_parser("convergence", parents=[common], help="deterministic error vs M")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    items: dict = {}
    if args.config:
        with open(args.config) as fh:
            items.update(RunConfig.parse_items(fh.read()))
    if args.oracle:
        with open(args.oracle) as fh:
            parsed = RunConfig.parse_items(fh.read())
        if "components" not in parsed:
            raise ParameterError(f"oracle: no 'component = ...' lines in {args.oracle}")
        items["components"] = parsed["components"]
    for key, value in vars(args).items():
        if value is None or key in ("config", "oracle"):
            continue
        items[key] = RunConfig._convert(key, value) if isinstance(value, str) else value
    cfg = RunConfig(**items)
    cfg.validate()
    return cfg


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        buf = io.StringIO()
        result = COMMANDS[cfg.command](cfg, buf, stderr)
        if cfg.out == "-":
            stdout.write(buf.getvalue())
        else:
            with open(cfg.out, "w", newline="") as fh:
                fh.write(buf.getvalue())
    except AdmissibilityError as exc:
        print(f"admissibility error: {exc}", file=stderr)
        return EXIT_ADMISSIBILITY
    except (SolverError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=stderr)
        return EXIT_NUMERIC
    except (ParameterError, OSError) as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    if result is False:
        return EXIT_ADMISSIBILITY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
