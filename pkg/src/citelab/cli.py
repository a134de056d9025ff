"""Command-line entry point: ``citelab <command> [options]``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as cio
from .errors import CitelabError
from .fitting import fit
from .meanfield import OdeVariant, default_t_end, integrate, verify_fixed_point
from .model import KernelVariant, SystemParams, parse_kernel, ultimate_citations
from .stochastic import (
    EXHAUST,
    Constant,
    SampledUniform,
    SimConfig,
    SystemSimConfig,
    arbitrate,
    default_grid,
    simulate_ensemble,
    simulate_system,
)

COMMANDS = ("simulate", "system", "integrate", "verify-c2", "fit", "predict", "arbitrate")


@dataclass
class RunConfig:
    command: str
    params: dict
    output: str | None = None
    fmt: str | None = None
    input: str | None = None
    threads: int | None = None

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise CitelabError(f"unknown command {self.command!r}")
        if self.input is not None and not Path(self.input).is_file():
            raise CitelabError(f"input file not found: {self.input}")
        if self.output not in (None, "-") and not Path(self.output).resolve().parent.is_dir():
            raise CitelabError(f"output directory does not exist: {Path(self.output).parent}")


def _horizon(text: str):
    return EXHAUST if text == EXHAUST else float(text)


def _kernel_arg(text: str):
    try:
        return parse_kernel(text)
    except CitelabError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _variant_arg(text: str):
    try:
        return KernelVariant.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown kernel variant {text!r}") from None


def _ode_arg(text: str):
    try:
        return OdeVariant.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown ODE variant {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, formats, default):
        p.add_argument("-o", "--output", default="-", help="output path (default: stdout)")
        p.add_argument("--format", choices=formats, default=default)

    def kernel(p, default="lognormal:0,1"):
        p.add_argument("--kernel", type=_kernel_arg, default=parse_kernel(default),
                       help="lognormal:<mu>,<sigma> | exponential:<rate> | uniform:<horizon>")

    p = sub.add_parser("simulate", help="single-paper ensemble -> mean citation curve")
    p.add_argument("--variant", type=_variant_arg, default=KernelVariant.WITH_ATTRACTIVENESS)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    kernel(p)
    p.add_argument("--horizon", type=_horizon, default=EXHAUST)
    p.add_argument("--replicas", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-points", type=int, default=21)
    p.add_argument("--threads", type=int, default=None)
    common(p, ["csv", "json"], "csv")

    p = sub.add_parser("system", help="full growing-network run -> histories")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--bigA", type=float, default=1.0)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--t-end", type=float, required=True)
    fit_src = p.add_mutually_exclusive_group()
    fit_src.add_argument("--eta", type=float, default=1.0)
    fit_src.add_argument("--eta-range", type=str, default=None, help="lo,hi for uniformly sampled fitness")
    p.add_argument("--variant", type=_variant_arg, default=KernelVariant.WITH_ATTRACTIVENESS)
    kernel(p)
    p.add_argument("--refs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    common(p, ["csv", "json"], "csv")

    p = sub.add_parser("integrate", help="mean-field trajectory")
    p.add_argument("--variant", type=_ode_arg, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--m", type=int, default=1)
    kernel(p)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--points", type=int, default=401)
    common(p, ["csv"], "csv")

    p = sub.add_parser("verify-c2", help="check that f stays at 1 under the corrected equation")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--m", type=int, default=1)
    kernel(p)
    p.add_argument("--t-end", type=float, default=100.0)
    p.add_argument("--tol", type=float, default=1e-10)
    common(p, ["json"], "json")

    p = sub.add_parser("fit", help="maximum-likelihood fit of histories")
    p.add_argument("--input", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--kernel-kind", choices=["lognormal", "exponential", "uniform"], default="lognormal")
    p.add_argument("--observation-end", type=float, default=None)
    p.add_argument("--pool", action="store_true", help="fit one shared parameter set to all histories")
    common(p, ["json"], "json")

    p = sub.add_parser("predict", help="ultimate citations m(e^lambda - 1)")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--m", type=int, required=True)

    p = sub.add_parser("arbitrate", help="simulate both kernel readings and score both predictions")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    kernel(p)
    p.add_argument("--horizon", type=_horizon, default=EXHAUST)
    p.add_argument("--replicas", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    common(p, ["json", "markdown"], "json")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    params = {k: v for k, v in vars(ns).items() if k not in ("command", "output", "format", "input", "threads")}
    return RunConfig(
        command=ns.command,
        params=params,
        output=getattr(ns, "output", None),
        fmt=getattr(ns, "format", None),
        input=getattr(ns, "input", None),
        threads=getattr(ns, "threads", None),
    )


def _cfg_dict(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if hasattr(v, "spec_string"):
            v = v.spec_string()
        elif hasattr(v, "value") and not isinstance(v, (int, float)):
            v = v.value
        out[k] = v
    return out


def run_command(cfg: RunConfig) -> int:
    cfg.validate()
    p = cfg.params
    cmd = cfg.command

    if cmd == "predict":
        print(repr(ultimate_citations(p["lam"], p["m"])))
        return 0

    meta = cio.artifact_meta(cmd, _cfg_dict(p))

    if cmd == "simulate":
        sim = SimConfig(p["variant"], p["lam"], p["m"], p["kernel"], p["horizon"], p["seed"], p["replicas"])
        stats = simulate_ensemble(sim, grid=default_grid(sim, p["grid_points"]), workers=cfg.threads)
        if cfg.fmt == "json":
            text = cio.dumps_json({
                "meta": meta,
                "grid": stats.grid.tolist(),
                "mean_c": stats.mean_c.tolist(),
                "stderr_c": stats.stderr_c.tolist(),
                "n": stats.n,
                "final_counts": stats.final_counts.tolist(),
            })
        else:
            text = cio.ensemble_to_csv(stats, meta)

    elif cmd == "system":
        sys_p = SystemParams(beta=p["beta"], bigA=p["bigA"], m=p["m"], n0=p["n0"])
        if p["eta_range"]:
            lo, hi = (float(x) for x in p["eta_range"].split(","))
            source = SampledUniform(lo, hi)
        else:
            source = Constant(p["eta"])
        run = simulate_system(SystemSimConfig(sys_p, p["t_end"], source, p["variant"], p["kernel"], p["refs"], p["seed"]))
        meta["lambda_eff_cohort"] = run.meta["lambda_eff_cohort"]
        meta["n_papers"] = run.meta["n_papers"]
        if cfg.fmt == "json":
            text = cio.histories_to_json(run.histories, meta)
        else:
            text = cio.histories_to_csv(run.histories, meta)

    elif cmd == "integrate":
        t_end = p["t_end"] if p["t_end"] is not None else default_t_end(p["kernel"])
        grid = np.linspace(0.0, t_end, p["points"])
        traj = integrate(p["variant"], p["lam"], p["kernel"], t_end, p["tol"], grid=grid)
        text = cio.trajectory_to_csv(traj, p["m"], meta)

    elif cmd == "verify-c2":
        report = verify_fixed_point(p["lam"], p["kernel"], p["t_end"], p["tol"], p["m"])
        text = cio.dumps_json({"meta": meta, **report.to_dict()})

    elif cmd == "fit":
        histories = cio.parse_history(cfg.input)
        obs_end = p["observation_end"]
        if p["pool"]:
            payload = {"meta": meta, "fit": fit(histories, p["m"], p["kernel_kind"], obs_end).to_dict()}
        else:
            fits = []
            for h in histories:
                fits.append({"paper_id": h.paper_id, **fit(h, p["m"], p["kernel_kind"], obs_end).to_dict()})
            payload = {"meta": meta, "fits": fits}
        text = cio.dumps_json(payload)

    elif cmd == "arbitrate":
        sim = SimConfig(KernelVariant.WITH_ATTRACTIVENESS, p["lam"], p["m"], p["kernel"], p["horizon"], p["seed"],
                        p["replicas"])
        report = cio.arbitration_report(arbitrate(sim, workers=cfg.threads))
        text = cio.report_to_markdown(report) if cfg.fmt == "markdown" else cio.dumps_json(report)

    cio.write_text(text, cfg.output)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return run_command(config_from_args(ns))
    except CitelabError as exc:
        print(f"citelab {ns.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError) as exc:
        print(f"citelab {ns.command}: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
