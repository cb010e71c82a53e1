"""Command-line front end: ``msgn <command> --config <file> [--seed S] [--out DIR] [--workers W]``.

Config files hold ``key = value`` lines; ``#`` starts a comment.  Keys:

    network     path to a network file (relative to the config file)
    z0          initial state, continuous values then ``|`` then discrete counts, e.g. ``1.0 | 1``
    z0N         initial state of the scaled process (default: z0)
    T           horizon
    N           scale, or an ascending comma-separated list for ``converge``
    M           replica count (coupled pairs)
    M_sde       SDE runs for ``clt``
    seed        master seed
    replica     replica index for ``simulate`` and ``pdmp``
    grid        number of uniform grid intervals on [0, T]
    tol         relative tolerance of the flow integrator
    sde_steps   Euler-Maruyama steps on [0, T]
    out         output directory
    workers     size of the replica worker pool
    decomposition   ``true`` to also write decomposition.csv from ``simulate``
    command     optional; the command-line positional argument wins
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import __version__
from .network import HybridState, NetworkError, load_network, summary
from .paths import SimulationError, uniform_grid

COMMANDS = ("simulate", "pdmp", "converge", "clt", "validate")
EXIT_CONFIG, EXIT_NETWORK, EXIT_SIMULATION, EXIT_IO = 2, 3, 4, 5


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str = ""
    network: str = ""
    z0: Optional[HybridState] = None
    z0N: Optional[HybridState] = None
    T: float = 1.0
    N: tuple = ()
    M: int = 100
    M_sde: int = 1000
    seed: int = 0
    replica: int = 0
    grid: int = 256
    tol: float = 1e-8
    sde_steps: int = 2**12
    out: str = "."
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    decomposition: bool = False

    def resolved(self) -> list:
        """``key = value`` lines describing every field, in a fixed order."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, HybridState):
                v = _fmt_state(v)
            elif v is None:
                v = "-"
            elif isinstance(v, tuple):
                v = ", ".join(repr(float(a)) for a in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return out


def _fmt_state(s: HybridState) -> str:
    xs = " ".join(repr(float(a)) for a in s.x)
    ys = " ".join(str(int(a)) for a in s.y)
    return f"{xs} | {ys}".strip()


def _parse_state(text: str) -> HybridState:
    left, _, right = text.partition("|")
    try:
        x = [float(a) for a in left.replace(",", " ").split()]
        y = [int(a) for a in right.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"bad state {text!r}: {exc}") from None
    try:
        return HybridState(x, y)
    except ValueError as exc:
        raise ConfigError(f"bad state {text!r}: {exc}") from None


def _positive(name, v):
    if not v > 0:
        raise ConfigError(f"{name} must be positive, got {v}")
    return v


def _int(name, text, minimum=None):
    try:
        v = int(text)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {text!r}") from None
    if minimum is not None and v < minimum:
        raise ConfigError(f"{name} must be at least {minimum}, got {v}")
    return v


def _float(name, text):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {text!r}") from None


def _bool(name, text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{name} must be true or false, got {text!r}")


def _set(cfg: ExperimentConfig, key: str, text: str):
    text = text.strip()
    if key == "command":
        if text not in COMMANDS:
            raise ConfigError(f"unknown command {text!r}")
        cfg.command = text
    elif key == "network":
        cfg.network = text
    elif key in ("z0", "z0N"):
        setattr(cfg, key, _parse_state(text))
    elif key == "T":
        cfg.T = _positive("T", _float("T", text))
    elif key == "N":
        Ns = tuple(_positive("N", _float("N", a)) for a in text.replace(",", " ").split())
        if not Ns:
            raise ConfigError("N is empty")
        if any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ConfigError("N-list must be strictly ascending")
        cfg.N = Ns
    elif key in ("M", "M_sde", "grid", "sde_steps", "workers"):
        setattr(cfg, key, _int(key, text, 1))
    elif key in ("seed", "replica"):
        setattr(cfg, key, _int(key, text))
    elif key == "tol":
        cfg.tol = _positive("tol", _float("tol", text))
    elif key == "out":
        cfg.out = text
    elif key == "decomposition":
        cfg.decomposition = _bool(key, text)
    else:
        raise ConfigError(f"unknown key {key!r}")


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            _set(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    if cfg.network and not os.path.isabs(cfg.network):
        cfg.network = os.path.normpath(os.path.join(base_dir, cfg.network))
    return cfg


def _check(cfg: ExperimentConfig, net):
    if cfg.command != "validate":
        if cfg.z0 is None:
            raise ConfigError("z0 is required")
        for name in ("z0", "z0N"):
            s = getattr(cfg, name)
            if s is not None and (len(s.x) != net.n or len(s.y) != net.d):
                raise ConfigError(f"{name} has dimensions ({len(s.x)}, {len(s.y)}), network has ({net.n}, {net.d})")
    if cfg.command in ("simulate", "clt") and len(cfg.N) != 1:
        raise ConfigError(f"{cfg.command} needs exactly one value of N")
    if cfg.command == "converge" and len(cfg.N) < 2:
        raise ConfigError("converge needs at least two values of N")
    if cfg.command == "converge" and cfg.M < 2:
        raise ConfigError("M must be at least 2")


# ---------------------------------------------------------------------------
# commands


def _header(cfg):
    return [f"msgn {__version__} {cfg.command}"] + cfg.resolved()


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _summary_text(cfg, body: str) -> str:
    return "".join(f"# {h}\n" for h in _header(cfg)) + body


def _run_simulate(cfg, net):
    from .fluctuation import decompose
    from .jump_sim import simulate_scaled
    from .pdmp_sim import simulate_pdmp

    grid = uniform_grid(cfg.T, cfg.grid)
    z0N = cfg.z0N or cfg.z0
    N = cfg.N[0]
    jp = simulate_scaled(net, N, z0N, cfg.T, cfg.seed, cfg.replica, grid=grid)
    jp.write_csv(os.path.join(cfg.out, "path.csv"), _header(cfg))
    jp.write_events_csv(os.path.join(cfg.out, "events.csv"), _header(cfg))
    counts = jp.jump_counts()
    body = [f"events = {jp.n_events}"] + [f"count {k} = {v}" for k, v in counts.items()]
    if cfg.decomposition:
        pp = simulate_pdmp(net, cfg.z0, cfg.T, cfg.seed, cfg.replica, tol=cfg.tol, grid=grid)
        dec = decompose(net, jp, pp, tol=cfg.tol)
        dec.write_csv(os.path.join(cfg.out, "decomposition.csv"), _header(cfg))
        body += [
            f"sup |Z^N - Z| = {dec.sup_err!r}",
            f"Y^N = Y = {str(dec.y_equal).lower()}",
            f"max identity residual = {float(np.max(np.abs(dec.residual()))) if dec.t.size else 0.0!r}",
        ]
    _write(os.path.join(cfg.out, "summary.txt"), _summary_text(cfg, "\n".join(body) + "\n"))


def _run_pdmp(cfg, net):
    from .pdmp_sim import simulate_pdmp

    grid = uniform_grid(cfg.T, cfg.grid)
    pp = simulate_pdmp(net, cfg.z0, cfg.T, cfg.seed, cfg.replica, tol=cfg.tol, grid=grid)
    pp.write_csv(os.path.join(cfg.out, "path.csv"), _header(cfg))
    pp.write_events_csv(os.path.join(cfg.out, "events.csv"), _header(cfg))
    body = [f"events = {pp.n_events}"] + [f"count {k} = {v}" for k, v in pp.jump_counts().items()]
    _write(os.path.join(cfg.out, "summary.txt"), _summary_text(cfg, "\n".join(body) + "\n"))


def _run_converge(cfg, net):
    from .stats import strong_error_sweep

    rep = strong_error_sweep(net, cfg.z0, cfg.T, cfg.N, cfg.M, cfg.seed, z0N=cfg.z0N,
                             grid=uniform_grid(cfg.T, cfg.grid), workers=cfg.workers, tol=cfg.tol)
    rep.to_csv(os.path.join(cfg.out, "report.csv"), _header(cfg))
    _write(os.path.join(cfg.out, "summary.txt"), _summary_text(cfg, rep.summary()))
    _write(os.path.join(cfg.out, "plot.script"), _summary_text(cfg, rep.plot_script()))


def _run_clt(cfg, net):
    from .stats import ConvergenceReport, clt_compare, clt_csv, clt_summary

    c = clt_compare(net, cfg.z0, cfg.T, cfg.N[0], cfg.M, cfg.M_sde, cfg.seed, z0N=cfg.z0N,
                    workers=cfg.workers, sde_steps=cfg.sde_steps, tol=cfg.tol)
    _write(os.path.join(cfg.out, "report.csv"), clt_csv(c, _header(cfg)))
    _write(os.path.join(cfg.out, "summary.txt"), _summary_text(cfg, clt_summary(c) + "\n"))
    rep = ConvergenceReport(T=cfg.T, seed=cfg.seed, rows=[], clt=c)
    _write(os.path.join(cfg.out, "plot.script"), _summary_text(cfg, rep.plot_script()))


def _run_validate(cfg, net):
    s = summary(net)
    body = "\n".join(f"{k} = {v}" for k, v in s.items()) + "\n"
    print(body, end="")
    _write(os.path.join(cfg.out, "summary.txt"), _summary_text(cfg, body))


RUNNERS = {
    "simulate": _run_simulate,
    "pdmp": _run_pdmp,
    "converge": _run_converge,
    "clt": _run_clt,
    "validate": _run_validate,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute a resolved config; returns the process exit status."""
    try:
        if cfg.command not in COMMANDS:
            raise ConfigError(f"unknown command {cfg.command!r}")
        if not cfg.network:
            raise ConfigError("network is required")
        try:
            net = load_network(cfg.network)
        except NetworkError as exc:
            print(f"network error: {exc}", file=sys.stderr)
            return EXIT_NETWORK
        _check(cfg, net)
        os.makedirs(cfg.out, exist_ok=True)
        RUNNERS[cfg.command](cfg, net)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="msgn", description="coupled multiscale gene network simulations")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="key = value experiment file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("--workers", type=int)
    args = ap.parse_args(argv)
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text, os.path.dirname(os.path.abspath(args.config)))
        if args.workers is not None:
            _set(cfg, "workers", str(args.workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.command = args.command
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
