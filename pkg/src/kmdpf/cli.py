"""Command-line front end: ``kmdpf simulate | decompose | pf | report``.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 rank
deficiency under ``--strict``, 5 non-convergent expectation under ``--strict``.
"""
import argparse
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
import logging
import math
from pathlib import Path
import re
import sys
import warnings

import numpy as np

from . import fileio
from .edmd import (
    DEFAULT_SVD_RTOL,
    KoopmanDecomposition,
    fit_edmd,
    mode_summary,
    reconstruct,
    reconstruction_error,
)
from .errors import (
    DegenerateSpectrum,
    KmdpfError,
    NonFiniteValue,
    RankDeficientWarning,
    ZeroRealEigenvector,
    ZeroReference,
)
from .koopman_pf import InitialDistribution, participation_factors
from .models import PRESETS, get_preset, integrate_rk4
from .observables import (
    DICTIONARY_PRESETS,
    build_dictionary,
    dictionary_from_json,
    dictionary_from_strings,
    identity_dictionary,
    parse_observable,
)

log = logging.getLogger("kmdpf")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_RANK, EXIT_PF = 0, 2, 3, 4, 5
ZERO_MODE_TOL = 1e-3


class ConfigError(Exception):
    pass


class StrictFailure(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


@dataclass
class AnalysisConfig:
    """Resolved settings; the JSON form of this is what ``--config`` reads."""

    input: list = field(default_factory=list)
    model: str = None
    x0: list = None
    dt: float = None
    steps: int = 1000
    params: dict = field(default_factory=dict)
    dictionary: object = None
    svd_rtol: float = DEFAULT_SVD_RTOL
    order: str = "modulus"
    pf_method: str = "simplified"
    convention: str = "elementwise"
    distribution: dict = None
    output_dir: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])
    seed: int = None
    strict: bool = False
    decomposition: str = None

    @classmethod
    def from_sources(cls, args):
        cfg = cls()
        if getattr(args, "config", None):
            try:
                doc = fileio.read_json(args.config)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from None
            cfg.update(doc)
        overrides = {
            "input": args.input,
            "model": args.model,
            "x0": args.x0,
            "dt": args.dt,
            "steps": args.steps,
            "params": args.param,
            "svd_rtol": args.svd_rtol,
            "order": args.order,
            "pf_method": args.method,
            "convention": args.convention,
            "output_dir": args.out,
            "formats": args.formats,
            "seed": args.seed,
            "strict": args.strict or None,
            "decomposition": args.decomposition,
        }
        if args.dict_file:
            try:
                overrides["dictionary"] = fileio.read_json(args.dict_file)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read dictionary {args.dict_file}: {exc}") from None
        elif args.observables:
            overrides["dictionary"] = [s for s in args.observables.split(",") if s.strip()]
        elif args.dict_preset:
            overrides["dictionary"] = args.dict_preset
        dist = _distribution_overrides(args)
        if dist:
            overrides["distribution"] = {**(cfg.distribution or {}), **dist}
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        return cfg

    def update(self, doc):
        names = {f.name for f in fields(self)}
        for k, v in doc.items():
            if k not in names:
                raise ConfigError(f"unknown config key {k!r}")
            setattr(self, k, v)

    @property
    def out(self):
        return Path(self.output_dir)

    def validate_input(self):
        if bool(self.input) == bool(self.model):
            raise ConfigError("give exactly one input source: --input CSV(s) or --model")
        if self.model and self.model not in PRESETS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(PRESETS)}")
        if int(self.steps) < 1:
            raise ConfigError("steps must be at least 1")
        if self.dt is not None and not float(self.dt) > 0:
            raise ConfigError("dt must be positive")


def _distribution_overrides(args):
    d = {}
    if args.box:
        lo, hi = _parse_box(args.box)
        d.update(kind="box", lo=lo, hi=hi)
    if args.sphere is not None:
        d.update(kind="sphere", radius=args.sphere)
    if args.samples is not None:
        d["samples"] = args.samples
    return d


def _parse_box(text):
    try:
        lo, hi = text.split(":")
        return _floats(lo), _floats(hi)
    except ValueError:
        raise ConfigError(f"--box expects LO:HI (comma lists allowed), got {text!r}") from None


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _param(text):
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    return key.strip(), float(val)


# -- pipeline pieces ----------------------------------------------------------

def _simulate(cfg):
    params = dict(cfg.params or {})
    try:
        system = get_preset(cfg.model, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {cfg.model}: {exc}") from None
    if cfg.x0 is not None:
        x0 = np.array(_floats(cfg.x0))
    elif system.default_x0 is not None:
        x0 = system.default_x0
    else:
        raise ConfigError(f"model {cfg.model} needs --x0")
    if x0.size != system.n:
        raise ConfigError(f"x0 has {x0.size} entries, model {cfg.model} has {system.n} states")
    dt = float(cfg.dt) if cfg.dt is not None else 0.01
    X = integrate_rk4(system, x0, dt, int(cfg.steps))
    return system, dt, X


def _load_trajectories(cfg):
    """Return ``(dt, [trajectory, ...], state_names)``."""
    if cfg.model:
        system, dt, X = _simulate(cfg)
        return dt, [X], list(system.state_names)
    trajs, names, dts = [], None, set()
    for path in cfg.input:
        try:
            t, X, hdr = fileio.read_trajectory_csv(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        if names is not None and hdr != names:
            raise ConfigError(f"{path}: columns {hdr} differ from {names}")
        names = hdr
        if not np.all(np.isfinite(X)):
            raise NonFiniteValue(f"{path} contains non-finite values")
        if t is not None and t.size > 1:
            steps = np.diff(t)
            if np.allclose(steps, steps[0], rtol=1e-6, atol=0):
                dts.add(round(float(steps[0]), 12))
        trajs.append(X)
    if cfg.dt is not None:
        dt = float(cfg.dt)
    elif len(dts) == 1:
        dt = dts.pop()
    else:
        raise ConfigError("cannot infer a uniform sampling interval from the CSV; pass --dt")
    return dt, trajs, names


def _dictionary(cfg, n, state_names):
    spec = cfg.dictionary
    try:
        if spec is None or spec == "identity":
            return identity_dictionary(n, state_names if _plain_names(state_names) else None)
        if isinstance(spec, str):
            if spec not in DICTIONARY_PRESETS:
                raise ConfigError(f"unknown dictionary preset {spec!r}")
            d = DICTIONARY_PRESETS[spec](n)
        elif isinstance(spec, dict):
            d = dictionary_from_json(spec)
        else:
            d = build_dictionary(
                [parse_observable(s, n) if isinstance(s, str) else s for s in spec], n
            )
    except KmdpfError as exc:
        raise ConfigError(str(exc)) from None
    if d.n != n:
        raise ConfigError(f"dictionary is for {d.n} states but the data has {n}")
    return d


def _plain_names(names):
    return names is not None and len(set(names)) == len(names) and all(
        re.fullmatch(r"[A-Za-z_]\w*", s) for s in names
    )


def _fit(cfg):
    cfg.validate_input()
    dt, trajs, names = _load_trajectories(cfg)
    dictionary = _dictionary(cfg, trajs[0].shape[0], names)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankDeficientWarning)
        dec = fit_edmd(trajs, dictionary, dt, float(cfg.svd_rtol), cfg.order)
    notes = [str(w.message) for w in caught if issubclass(w.category, RankDeficientWarning)]
    for msg in notes:
        log.warning(msg)
    if dec.rank_deficient and cfg.strict:
        raise StrictFailure(f"rank deficient fit (rank {dec.rank} < {dec.q})", EXIT_RANK)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        recon = np.hstack([reconstruct(dec, T[:, 0], T.shape[1] - 1) for T in trajs])
    eps = reconstruction_error(recon, np.hstack(trajs))
    return dec, eps, notes


def _mode_labels(q):
    return [f"mode{j}" for j in range(1, q + 1)]


def _write_decomposition(cfg, dec, eps, notes):
    out, fmts = cfg.out, set(cfg.formats)
    summary = mode_summary(dec)
    names = dec.dictionary.names
    labels = _mode_labels(dec.q)
    if "csv" in fmts:
        rows = []
        for m in summary:
            rows.append([
                m.index + 1, fileio.fmt(m.mu.real), fileio.fmt(m.mu.imag),
                fileio.fmt(m.lambda_c.real), fileio.fmt(m.lambda_c.imag),
                fileio.fmt(m.freq_hz), fileio.fmt(m.damping_pct), int(m.zero_eigenvalue),
            ])
        fileio.write_csv(
            out / "modes.csv",
            ["index", "mu_re", "mu_im", "lambda_re", "lambda_im", "freq_hz", "damping_pct",
             "zero_eigenvalue"],
            rows,
        )
        fileio.write_complex_matrix_csv(out / "xi.csv", dec.Xi, "mode", labels, names)
        fileio.write_complex_matrix_csv(
            out / "phi.csv", dec.Phi, "state", dec.dictionary.state_names, labels
        )
    fileio.atomic_write_text(
        out / "recon_error.txt",
        f"epsilon {fileio.fmt(eps)}\nepsilon_percent {eps * 100:.6f}%\n",
    )
    if "json" in fmts:
        fileio.write_json(out / "decomposition.json", decomposition_to_json(dec, eps, notes, cfg))


def decomposition_to_json(dec, eps=None, notes=(), cfg=None):
    doc = {
        "dt": dec.dt,
        "q": dec.q,
        "n": dec.n,
        "dictionary": dec.dictionary.to_json(),
        "K": dec.K,
        "B": dec.B,
        "mu": fileio.complex_to_json(dec.mu),
        "Xi": fileio.complex_to_json(dec.Xi),
        "XiInv": fileio.complex_to_json(dec.XiInv),
        "Phi": fileio.complex_to_json(dec.Phi),
        "rank": dec.rank,
        "rank_deficient": bool(dec.rank_deficient),
        "residual": dec.residual,
        "recon_error": eps,
        "warnings": list(notes),
    }
    if cfg is not None:
        doc["svd_rtol"] = float(cfg.svd_rtol)
        doc["order"] = cfg.order
    return doc


def decomposition_from_json(doc):
    return KoopmanDecomposition(
        K=np.array(doc["K"], dtype=float),
        mu=fileio.complex_from_json(doc["mu"]),
        Xi=fileio.complex_from_json(doc["Xi"]),
        XiInv=fileio.complex_from_json(doc["XiInv"]),
        Phi=fileio.complex_from_json(doc["Phi"]),
        B=np.array(doc["B"], dtype=float),
        dt=float(doc["dt"]),
        dictionary=dictionary_from_json(doc["dictionary"]),
        rank=doc.get("rank"),
        residual=doc.get("residual"),
        rank_deficient=bool(doc.get("rank_deficient", False)),
    )


# -- subcommands --------------------------------------------------------------

def cmd_simulate(cfg):
    if not cfg.model:
        raise ConfigError("simulate needs --model")
    cfg.validate_input()
    system, dt, X = _simulate(cfg)
    t = dt * np.arange(X.shape[1])
    path = cfg.out / "trajectory.csv"
    fileio.write_trajectory_csv(path, t, X, system.state_names)
    print(f"{system.name}: n={system.n} steps={X.shape[1] - 1} dt={dt:g} -> {path}")
    return EXIT_OK


def cmd_decompose(cfg):
    dec, eps, notes = _fit(cfg)
    _write_decomposition(cfg, dec, eps, notes)
    print(f"q={dec.q} rank={dec.rank} epsilon={eps:.3e} ({eps * 100:.4f}%) -> {cfg.out}")
    return EXIT_OK


def _obtain_decomposition(cfg):
    path = cfg.decomposition
    if path is None and not (cfg.input or cfg.model):
        path = cfg.out / "decomposition.json"
    if path is not None:
        try:
            return decomposition_from_json(fileio.read_json(path)), []
        except FileNotFoundError:
            raise ConfigError(f"{path} not found; run decompose first or give an input") from None
        except (KeyError, ValueError, KmdpfError) as exc:
            raise ConfigError(f"cannot load decomposition {path}: {exc}") from None
    dec, eps, notes = _fit(cfg)
    _write_decomposition(cfg, dec, eps, notes)
    return dec, notes


def _build_distribution(cfg, n):
    spec = dict(cfg.distribution or {})
    if cfg.seed is None and "seed" not in spec:
        raise ConfigError("the general method needs an explicit --seed")
    spec.setdefault("seed", cfg.seed)
    if cfg.seed is not None:
        spec["seed"] = cfg.seed
    spec.setdefault("kind", "box")
    if spec["kind"] == "box":
        lo = spec.pop("lo", None)
        hi = spec.pop("hi", None)
        lo = [-1.0] if lo is None else _floats(lo)
        hi = [1.0] if hi is None else _floats(hi)
        spec["lo"] = lo * n if len(lo) == 1 else lo
        spec["hi"] = hi * n if len(hi) == 1 else hi
    else:
        spec.setdefault("n", n)
        spec.setdefault("radius", 1.0)
    spec["seed"] = int(spec["seed"])
    try:
        return InitialDistribution(**spec)
    except (TypeError, KmdpfError) as exc:
        raise ConfigError(f"bad distribution: {exc}") from None


def cmd_pf(cfg):
    dec, _ = _obtain_decomposition(cfg)
    dist = None
    if cfg.pf_method == "general":
        dist = _build_distribution(cfg, dec.n)
    elif cfg.pf_method != "simplified":
        raise ConfigError(f"unknown pf method {cfg.pf_method!r}")
    if cfg.convention not in ("elementwise", "classic"):
        raise ConfigError(f"unknown convention {cfg.convention!r}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = participation_factors(dec, cfg.pf_method, dist, cfg.convention)
    out, fmts = cfg.out, set(cfg.formats)
    labels = _mode_labels(dec.q)
    states = dec.dictionary.state_names
    if "csv" in fmts:
        fileio.write_real_matrix_csv(out / "p_mode_in_state.csv", res.P_abs, "state", states, labels)
        fileio.write_real_matrix_csv(out / "p_normalized.csv", res.P_normalized, "state", states, labels)
        fileio.write_real_matrix_csv(
            out / "pi_state_in_mode.csv", res.Pi, "observable", dec.dictionary.names, labels
        )
    terms = res.expectation_terms
    if terms is not None and "csv" in fmts:
        rows = []
        for i, s in enumerate(states):
            for r, name in enumerate(dec.dictionary.names):
                if r == terms.identity_indices[i]:
                    continue
                rows.append([name, s, fileio.fmt(terms.value[r, i]), fileio.fmt(terms.stderr[r, i]),
                             int(terms.nonconvergent[r, i])])
        fileio.write_csv(
            out / "expectation_terms.csv",
            ["numerator", "denominator", "value", "stderr", "nonconvergent"],
            rows,
        )
    if "json" in fmts:
        doc = {
            "method": res.method,
            "convention": res.convention,
            "states": states,
            "observables": dec.dictionary.names,
            "P": fileio.complex_to_json(res.P),
            "P_abs": res.P_abs,
            "P_normalized": res.P_normalized,
            "Pi": res.Pi,
        }
        if dist is not None:
            doc["distribution"] = dist.to_json()
        if terms is not None:
            doc["expectation_terms"] = {
                "value": terms.value, "stderr": terms.stderr,
                "nonconvergent": terms.nonconvergent,
            }
        fileio.write_json(out / "participation.json", doc)
    flagged = terms is not None and terms.any_nonconvergent
    print(f"{res.method} participation factors ({res.convention} convention) -> {out}")
    if flagged:
        log.warning("some cross expectations did not converge")
        if cfg.strict:
            raise StrictFailure("non-convergent cross expectations", EXIT_PF)
    return EXIT_OK


def cmd_report(cfg):
    out = cfg.out
    dec_path = out / "decomposition.json"
    if not dec_path.exists() or not (out / "modes.csv").exists():
        raise ConfigError(f"{out} has no decompose output (modes.csv, decomposition.json)")
    doc = fileio.read_json(dec_path)
    dec = decomposition_from_json(doc)
    _, _, modes = fileio.read_matrix_csv(out / "modes.csv")
    if (out / "p_normalized.csv").exists():
        states, _, Pn = fileio.read_matrix_csv(out / "p_normalized.csv")
    else:
        res = participation_factors(dec)
        states, Pn = dec.dictionary.state_names, res.P_normalized
    eps = doc.get("recon_error")
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")
    lines = [f"# kmdpf report", f"_generated {stamp}_", ""]
    lines += [f"- observables (q): {dec.q}; states (n): {dec.n}; dt: {dec.dt:g} s"]
    if eps is not None:
        lines.append(f"- reconstruction error: {eps:.3e} ({eps * 100:.4f} %)")
    lines += ["", "| mode | Re lambda | Im lambda | freq (Hz) | damping (%) | top states |",
              "|---:|---:|---:|---:|---:|:---|"]
    order = sorted(range(dec.q), key=lambda j: (modes[j, 5], j))
    for j in order:
        col = Pn[:, j]
        top = np.argsort(-col, kind="stable")[:3]
        tops = ", ".join(f"{states[k]} ({col[k]:.2f})" for k in top if col[k] > 1e-6)
        lre, lim = modes[j, 2], modes[j, 3]
        lines.append(
            f"| {j + 1} | {lre:.4f} | {lim:.4f} | {modes[j, 4]:.4f} | {modes[j, 5]:.2f} | {tops} |"
        )
    warn_lines = []
    for j in range(dec.q):
        lam = complex(modes[j, 2], modes[j, 3])
        if modes[j, 6]:
            warn_lines.append(f"mode {j + 1}: discrete eigenvalue is zero (null direction of the data)")
        elif abs(lam) < ZERO_MODE_TOL:
            warn_lines.append(f"mode {j + 1}: zero mode, |lambda| = {abs(lam):.2e}")
    if doc.get("rank_deficient"):
        warn_lines.append(f"lifted data is rank deficient (rank {doc.get('rank')} of {dec.q})")
    pf_path = out / "participation.json"
    if pf_path.exists():
        pf = fileio.read_json(pf_path)
        flags = pf.get("expectation_terms", {}).get("nonconvergent")
        if flags and np.any(flags):
            warn_lines.append("some cross expectations did not converge")
    lines += ["", "## Warnings", ""]
    lines += [f"- {w}" for w in warn_lines] or ["- none"]
    text = "\n".join(lines) + "\n"
    fileio.atomic_write_text(out / "report.md", text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "decompose": cmd_decompose,
    "pf": cmd_pf,
    "report": cmd_report,
}


# -- argument parsing ---------------------------------------------------------

def _common(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON file with analysis settings")
    parser.add_argument("--seed", type=int, default=d, help="seed for Monte Carlo estimates")
    parser.add_argument("--out", default=d, help="output directory (default: out)")
    parser.add_argument("--strict", action="store_true", default=d,
                        help="fail on rank deficiency / non-convergent expectations")


def _input_args(p):
    p.add_argument("--input", action="append", help="trajectory CSV (repeatable)")
    p.add_argument("--model", help=f"built-in model: {', '.join(PRESETS)}")
    p.add_argument("--x0", help="initial state, comma separated")
    p.add_argument("--dt", type=float, help="sampling interval in seconds")
    p.add_argument("--steps", type=int, help="number of integration steps")
    p.add_argument("--param", type=_param, action="append", help="model parameter NAME=VALUE")


def _dict_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--dict", dest="dict_file", help="dictionary JSON file")
    g.add_argument("--observables", help='comma separated expressions, e.g. "x1,x2,x2^2"')
    g.add_argument("--dict-preset", choices=sorted(DICTIONARY_PRESETS))
    p.add_argument("--svd-rtol", type=float, help="relative SVD truncation threshold")
    p.add_argument("--order", choices=["modulus", "observable"], help="mode ordering")
    p.add_argument("--formats", type=lambda s: [f for f in s.split(",") if f],
                   help="subset of csv,json")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kmdpf",
        description="Koopman mode decomposition and modal participation factors.",
    )
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a built-in model to CSV")
    _common(p, suppress=True)
    _input_args(p)

    p = sub.add_parser("decompose", help="fit EDMD and write modes, Xi, Phi")
    _common(p, suppress=True)
    _input_args(p)
    _dict_args(p)

    p = sub.add_parser("pf", help="compute participation factors")
    _common(p, suppress=True)
    _input_args(p)
    _dict_args(p)
    p.add_argument("--decomposition", help="decomposition.json from a previous run")
    p.add_argument("--method", choices=["simplified", "general"])
    p.add_argument("--convention", choices=["elementwise", "classic"])
    p.add_argument("--samples", type=int, help="Monte Carlo sample count")
    p.add_argument("--box", help="uniform box LO:HI, scalars or comma lists")
    p.add_argument("--sphere", type=float, help="uniform sphere of this radius")

    p = sub.add_parser("report", help="summarise outputs in --out")
    _common(p, suppress=True)
    return parser


_VECTOR_FLAGS = ("--x0", "--box")


def _join_negative_values(argv):
    """Allow ``--x0 -1,2``: argparse would read ``-1,2`` as an option."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _VECTOR_FLAGS and i + 1 < len(argv) and re.match(r"^-[\d.]", argv[i + 1]):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def _namespace_defaults(args):
    for name in ("input", "model", "x0", "dt", "steps", "param", "svd_rtol", "order", "method",
                 "convention", "formats", "decomposition", "dict_file", "observables",
                 "dict_preset", "box", "sphere", "samples", "config", "seed", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    if not hasattr(args, "strict"):
        args.strict = False
    if args.param is not None:
        args.param = dict(args.param)
    return args


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        args = _namespace_defaults(parser.parse_args(argv))
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = AnalysisConfig.from_sources(args)
        return COMMANDS[args.command](cfg)
    except StrictFailure as exc:
        log.error(str(exc))
        return exc.code
    except ConfigError as exc:
        log.error(str(exc))
        return EXIT_CONFIG
    except (NonFiniteValue, DegenerateSpectrum, ZeroReference, ZeroRealEigenvector,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (KmdpfError, ValueError) as exc:
        log.error(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
