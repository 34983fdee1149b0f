"""Command-line front end: ``diracsearch {bands,dirac,integrals,simulate,verify}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _accel
from .bloch import DiracSearchError, band_energies, find_dirac_points, momentum_grid, verify_assumptions
from .lattice import LatticeError, LatticeSpec, builtin, load_spec

try:
    import tomllib
except ImportError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("diracsearch")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    lattice: str = "staggered-hypercubic-2"
    lattice_params: dict = field(default_factory=dict)
    l: int | None = None
    ladder: list | None = None
    marked: object = None  # [w..., alpha], "random" or None (origin, alpha 0)
    oracle: str = "auto"
    gamma: float = 1.0
    n_times: int = 200
    run_time: float | None = None
    starts: str = "all"
    out: str = "out"
    threads: int | None = None
    seed: int = 0
    resolution: int | None = None

    @classmethod
    def from_sources(cls, path=None, overrides=None) -> "ExperimentConfig":
        data = {}
        if path is not None:
            try:
                with open(path, "rb") as fh:
                    data = tomllib.load(fh)
            except (OSError, tomllib.TOMLDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self):
        if self.l is not None and int(self.l) < 1:
            raise ConfigError("l must be positive")
        if self.ladder is not None and (not self.ladder or any(int(x) < 1 for x in self.ladder)):
            raise ConfigError("ladder must be a non-empty list of positive sizes")
        if self.n_times < 2:
            raise ConfigError("n_times must be at least 2")
        if self.starts not in ("all", "true"):
            raise ConfigError("starts must be 'all' or 'true'")

    def spec(self) -> LatticeSpec:
        p = Path(self.lattice)
        if p.suffix == ".toml" or p.exists():
            return load_spec(p)
        return builtin(self.lattice, **self.lattice_params)

    def resolve_marked(self, spec: LatticeSpec, l: int):
        if self.marked is None:
            return (0,) * spec.d, 0
        if self.marked == "random":
            rng = np.random.default_rng(self.seed)
            return tuple(int(c) for c in rng.integers(0, l, spec.d)), int(rng.integers(spec.r))
        vals = [int(v) for v in self.marked]
        if len(vals) != spec.d + 1:
            raise ConfigError(f"marked needs {spec.d} cell coordinates and a site index")
        return tuple(vals[:-1]), vals[-1]


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    log.info("wrote %s", path)


def write_script(path: Path, body: str):
    path.write_text(body)
    log.info("wrote %s", path)


BANDS_PLOT = '''import sys
import numpy as np
import matplotlib.pyplot as plt

data = np.genfromtxt("{csv}", delimiter=",", names=True)
d, r = {d}, {r}
k = np.column_stack([data["k%d" % (i + 1)] for i in range(d)])
E = np.column_stack([data["E%d" % (i + 1)] for i in range(r)])
if d == 2:
    l = int(round(np.sqrt(len(k))))
    fig = plt.figure()
    ax = fig.add_subplot(projection="3d")
    for i in range(r):
        ax.plot_surface(k[:, 0].reshape(l, l), k[:, 1].reshape(l, l), E[:, i].reshape(l, l), alpha=0.6)
    ax.set_xlabel("k1")
    ax.set_ylabel("k2")
    ax.set_zlabel("E")
else:
    order = np.argsort(k[:, 0])
    plt.plot(k[order, 0], E[order], ".", ms=2)
    plt.xlabel("k1")
    plt.ylabel("E")
plt.title("{name}")
plt.savefig(sys.argv[1] if len(sys.argv) > 1 else "bands.png", dpi=150)
'''

TRACE_PLOT = '''import sys
import numpy as np
import matplotlib.pyplot as plt

data = np.genfromtxt("{csv}", delimiter=",", names=True)
plt.plot(data["t"], data["overlapSq"], label="overlap with target")
plt.plot(data["t"], data["successProb"], label="success probability")
plt.axvline({T!r}, color="gray", ls="--", label="predicted T")
plt.xlabel("t")
plt.legend()
plt.title("{name}, l={l}")
plt.savefig(sys.argv[1] if len(sys.argv) > 1 else "trace.png", dpi=150)
'''

MOMENTS_PLOT = '''import sys
import numpy as np
import matplotlib.pyplot as plt

data = np.genfromtxt("{csv}", delimiter=",", names=True)
for m in np.unique(data["m"]):
    sel = data["m"] == m
    plt.plot(1 / data["l"][sel], data["value"][sel], "o-", label="m=%d" % m)
plt.xlabel("1/l")
plt.ylabel("moment")
plt.legend()
plt.savefig(sys.argv[1] if len(sys.argv) > 1 else "moments.png", dpi=150)
'''


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_bands(cfg: ExperimentConfig) -> int:
    spec = cfg.spec()
    l = cfg.l or 32
    ks = momentum_grid(spec.d, l)
    E = band_energies(spec, ks)
    out = Path(cfg.out)
    header = [f"k{i + 1}" for i in range(spec.d)] + [f"E{i + 1}" for i in range(spec.r)]
    write_csv(out / "bands.csv", header, (list(k) + list(e) for k, e in zip(ks, E)))
    write_script(out / "plot_bands.py", BANDS_PLOT.format(csv="bands.csv", d=spec.d, r=spec.r, name=spec.name))
    return EXIT_OK


def cmd_dirac(cfg: ExperimentConfig) -> int:
    spec = cfg.spec()
    try:
        diracs = find_dirac_points(spec, resolution=cfg.resolution, seed=cfg.seed)
    except DiracSearchError as exc:
        report = {"lattice": spec.name, "error": str(exc), "dirac_points": []}
        _dump_json(Path(cfg.out) / "dirac.json", report)
        print(f"no Dirac structure: {exc}")
        return EXIT_VERIFY
    rep = verify_assumptions(spec, diracs)
    report = {
        "lattice": spec.name,
        "d": spec.d,
        "r": spec.r,
        "dirac_points": [dp.as_dict() for dp in diracs],
        "assumptions": rep.as_dict(),
    }
    _dump_json(Path(cfg.out) / "dirac.json", report)
    print(f"{spec.name}: D={rep.D} m={rep.m} components={rep.components}")
    for dp in diracs:
        print(f"  k/pi = {np.round(dp.k / np.pi, 6).tolist()}  bands={list(dp.band_indices)}  chi={np.round(dp.chi, 6).tolist()}")
    for key, ok in rep.passed.items():
        print(f"  assumption {key}: {'pass' if ok else 'FAIL'}  ({rep.evidence.get(key)})")
    if rep.components and rep.components > 1:
        print(f"  graph splits into {rep.components} connected components")
    return EXIT_OK if rep.ok else EXIT_VERIFY


def _dump_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    log.info("wrote %s", path)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def cmd_integrals(cfg: ExperimentConfig) -> int:
    from .resolvent import limit_integrals

    spec = cfg.spec()
    alpha = cfg.resolve_marked(spec, cfg.l or 1)[1] if cfg.marked not in (None, "random") else 0
    ladder = [int(x) for x in cfg.ladder] if cfg.ladder else None
    if ladder is None and cfg.l:
        ladder = [cfg.l]
    try:
        lim = limit_integrals(spec, ladder, alpha, tol=math.inf)
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(cfg.out)
    write_csv(out / "moments.csv", ["l", "m", "value"], lim.moments_rows())
    write_script(out / "plot_moments.py", MOMENTS_PLOT.format(csv="moments.csv"))
    summary = {
        "lattice": spec.name,
        "ladder": lim.ladder,
        "I1": lim.I1,
        "I1_err": lim.I1_err,
        "I2": lim.I2,
        "I2_err": lim.I2_err,
        "log_fit": None if lim.log_fit is None else {"slope": lim.log_fit[0], "intercept": lim.log_fit[1]},
    }
    _dump_json(out / "integrals.json", summary)
    print(f"I1 = {fmt(lim.I1)} +- {lim.I1_err:.2g}")
    if lim.I2 is not None:
        print(f"I2 = {fmt(lim.I2)} +- {lim.I2_err:.2g}")
    if lim.log_fit is not None:
        print(f"moment2 ~ {fmt(lim.log_fit[0])} log N + {fmt(lim.log_fit[1])}")
    return EXIT_OK


PRED_HEADER = ["lattice", "d", "l", "n", "N", "oracle", "gamma", "I1", "I2", "Eminus", "Eplus", "Fprime", "T", "overlapStart", "successAmplitude"]


def cmd_simulate(cfg: ExperimentConfig) -> int:
    from .dynamics import PropagationError, run_search
    from .resolvent import PoleError, RootError

    spec = cfg.spec()
    sizes = [int(x) for x in cfg.ladder] if cfg.ladder else [cfg.l or 4]
    out = Path(cfg.out)
    pred_rows, summary = [], []
    for l in sizes:
        marked = cfg.resolve_marked(spec, l)
        try:
            trace, rep = run_search(
                spec, l, marked, cfg.oracle, cfg.gamma, n_times=cfg.n_times, run_time=cfg.run_time, starts=cfg.starts
            )
        except (PropagationError, PoleError, RootError, DiracSearchError) as exc:
            print(f"numerical failure at l={l}: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        row = rep.prediction.csv_row()
        pred_rows.append([row[h] for h in PRED_HEADER])
        name = f"trace_l{l}.csv"
        write_csv(
            out / name,
            ["t", "overlapSq", "successProb", "norm"],
            zip(trace.times, trace.overlap_sq, trace.success_prob, trace.norms),
        )
        write_script(out / f"plot_trace_l{l}.py", TRACE_PLOT.format(csv=name, T=rep.run_time, name=spec.name, l=l))
        item = {"l": l, "marked": [list(marked[0]), marked[1]], **rep.as_dict()}
        item["log_N"] = math.log(rep.prediction.N)
        summary.append(item)
        print(
            f"l={l} N={rep.prediction.N}: T={rep.run_time:.6g} max overlap={rep.best_overlap_sq:.6g} "
            f"best success={rep.best_success:.6g} at t={rep.best_time:.6g} ({rep.n_runs} runs)"
        )
    write_csv(out / "prediction.csv", PRED_HEADER, pred_rows)
    _dump_json(out / "simulate.json", summary)
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig) -> int:
    from .checks import default_suite

    results = default_suite()
    for r in results:
        print(r.line())
    _dump_json(Path(cfg.out) / "verify.json", [r.__dict__ for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


COMMANDS = {
    "bands": cmd_bands,
    "dirac": cmd_dirac,
    "integrals": cmd_integrals,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def _int_list(text: str):
    return [int(x) for x in text.replace(",", " ").split()]


def _marked(text: str):
    if text == "random":
        return text
    return _int_list(text)


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError("expected key=value")
    return key.strip(), float(value)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diracsearch", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        s = sub.add_parser(name, help=fn.__name__.replace("cmd_", ""))
        s.add_argument("--config", help="TOML file with experiment settings")
        s.add_argument("--lattice", help="built-in name or path to a lattice TOML file")
        s.add_argument("--param", action="append", type=_param, help="lattice builder parameter key=value")
        s.add_argument("--l", type=int, help="linear lattice size")
        s.add_argument("--ladder", type=_int_list, help="comma-separated list of sizes")
        s.add_argument("--marked", type=_marked, help="'w1,..,wd,alpha' or 'random'")
        s.add_argument("--oracle", choices=["auto", "projector", "onsite"])
        s.add_argument("--gamma", type=float)
        s.add_argument("--out", help="output directory")
        s.add_argument("--threads", type=int)
        s.add_argument("--seed", type=int)
        if name == "simulate":
            s.add_argument("--n-times", dest="n_times", type=int)
            s.add_argument("--run-time", dest="run_time", type=float)
            s.add_argument("--starts", choices=["all", "true"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose", "param")}
    if args.param:
        overrides["lattice_params"] = dict(args.param)
    try:
        cfg = ExperimentConfig.from_sources(args.config, overrides)
        _accel.set_threads(cfg.threads)
        return COMMANDS[args.command](cfg)
    except (ConfigError, LatticeError, TypeError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, DiracSearchError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
