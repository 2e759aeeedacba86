"""Command-line front end.

Every command writes a JSON report (to ``--out`` or stdout) carrying the
config hash and seed; traces and population tables go to CSV next to it.
Exit status is 0 on success, 2 for bad input and 3 for numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from . import __version__
from .chain import ConfigurationError, ConvergenceError
from .characterization import FitError, parity_scan, qpt_cnot, rb_run
from .compiler import (
    CircuitError,
    CircuitIR,
    CompilerError,
    EchoFlip,
    Gate,
    MsSegment,
    Pulse,
    PulseProgram,
    Transport,
    WellChange,
    compile_circuit,
)
from .config import ConfigError, RunConfig
from .experiment import ProgramError, gate_scan, ideal_scan, infer_populations, run_program
from .ir import parse, parse_batch, product_preparations
from .ms import TruncationError
from .pulses import DecompositionError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
INPUT_ERRORS = (ConfigError, ConfigurationError, CircuitError, ProgramError, OSError, ValueError)
NUMERIC_ERRORS = (
    FitError, DecompositionError, ConvergenceError, TruncationError, CompilerError, np.linalg.LinAlgError,
    FloatingPointError,
)


def format_op(op) -> str:
    if isinstance(op, Transport):
        return f"TRANSPORT  offset={op.offset:+.3f} um  well={op.well}"
    if isinstance(op, WellChange):
        return f"WELL       {op.mode}"
    if isinstance(op, Pulse):
        return f"PULSE      ion={op.target}  phi={op.phi:+.6f}  {len(op.composite.pulses)} segments  {op.duration * 1e6:.0f} us"
    if isinstance(op, MsSegment):
        return (
            f"MS         pair={op.pair}  theta={op.theta:.6f}  area={op.area:.6f}  "
            f"phase={op.phase:+.6f}  {op.duration * 1e6:.1f} us"
        )
    if isinstance(op, EchoFlip):
        return f"ECHO       ion={op.ion}  phase={op.phase:+.6f}"
    return repr(op)


def listing(program: PulseProgram) -> str:
    lines = [f"{k:4d}  {format_op(op)}" for k, op in enumerate(program.ops)]
    s = program.summary()
    lines.append(
        f"# {s['pulses']} pulses, {s['transports']} transports, {s['ms_segments']} MS segments, "
        f"{s['duration_us']:.0f} us"
    )
    return "\n".join(lines) + "\n"


def basis_labels(n: int) -> list[str]:
    return [format(k, f"0{n}b") for k in range(2**n)]


def populations_table(rows: Sequence[tuple[str, np.ndarray]], n: int, shots: int, confidence: float = 0.95) -> str:
    """CSV of populations with Wilson intervals at the shot count."""
    buf = io.StringIO()
    w = csv.writer(buf)
    header = ["circuit"]
    for lab in basis_labels(n):
        header += [f"p{lab}", f"lo{lab}", f"hi{lab}"]
    w.writerow(header)
    for name, pops in rows:
        row = [name]
        for p in pops:
            k = int(round(np.clip(p, 0, 1) * shots))
            ci = binomtest(k, shots).proportion_ci(confidence, method="wilson")
            row += [f"{p:.6f}", f"{ci.low:.6f}", f"{ci.high:.6f}"]
        w.writerow(row)
    return buf.getvalue()


# --- commands -------------------------------------------------------------


def _read_ir(path: str, cfg: RunConfig, batch: bool = False):
    text = Path(path).read_text()
    n = cfg["chain"]["trap"]["n_ions"]
    return parse_batch(text, n) if batch else parse(text, n)


def cmd_compile(args, cfg: RunConfig) -> tuple[dict, dict]:
    ir = _read_ir(args.circuit, cfg)
    chain = cfg.chain(ir.n_qubits)
    program = compile_circuit(ir, chain, cfg.compiler_options())
    report = {"program": program.summary(), "n_gates": len(ir.gates)}
    return report, {"listing.txt": listing(program)}


def cmd_run(args, cfg: RunConfig) -> tuple[dict, dict]:
    noise = cfg.noise(args.ideal)
    opts = cfg.compiler_options()
    shots = args.shots
    if args.product:
        n = args.ions or cfg["chain"]["trap"]["n_ions"]
        circuits = product_preparations(n, [g.strip() for g in args.product.split(",")])
        names = ["".join(g.name for g in c.gates) for c in circuits]
    else:
        if not args.circuit:
            raise ValueError("run needs a circuit file or --product")
        circuits = _read_ir(args.circuit, cfg, batch=True)
        names = [f"circuit{k}" for k in range(len(circuits))]
    n = circuits[0].n_qubits
    chain = cfg.chain(n)
    seeds = np.random.SeedSequence(args.seed).spawn(len(circuits))
    rows = []
    for name, ir, ss in zip(names, circuits, seeds):
        program = compile_circuit(ir, chain, opts)
        rec = run_program(program, chain, noise, shots, int(ss.generate_state(1)[0]), cfg.max_trajectories)
        pops = infer_populations(rec, noise.pmt_crosstalk, noise.detection_fidelity)
        rows.append((name, pops))
    report = {
        "n_circuits": len(circuits),
        "shots": shots,
        "populations": {name: dict(zip(basis_labels(n), map(float, p))) for name, p in rows},
    }
    files = {"populations.csv": populations_table(rows, n, shots)}
    if args.scan:
        if len(circuits) != 1:
            raise ValueError("--scan needs a single circuit")
        rep, f = _scan(circuits[0], chain, cfg, opts, noise, shots, args.seed)
        report["scan"] = rep
        files.update(f)
    return report, files


def _scan(ir: CircuitIR, chain, cfg, opts, noise, shots, seed):
    program = compile_circuit(ir, chain, opts)
    n = ir.n_qubits
    ideal = ideal_scan(program, chain)
    seeds = np.random.SeedSequence(seed).spawn(len(ideal))
    buf = io.StringIO()
    w = csv.writer(buf)
    labels = basis_labels(n)
    w.writerow(["k", "op"] + [f"p{lab}" for lab in labels] + [f"ideal{lab}" for lab in labels])
    gate_ops = program.gate_op_indices
    measured = []
    for k in range(len(ideal)):
        pops = gate_scan(program, chain, k, noise, shots, int(seeds[k].generate_state(1)[0]), cfg.max_trajectories)
        measured.append(pops)
        op = "start" if k == 0 else format_op(program.ops[gate_ops[k - 1]]).split()[0]
        w.writerow([k, op] + [f"{p:.6f}" for p in pops] + [f"{p:.6f}" for p in ideal[k]])
    dev = float(np.max(np.abs(np.array(measured) - ideal)))
    return {"steps": len(ideal), "max_deviation": dev}, {"scan.csv": buf.getvalue()}


def cmd_scan(args, cfg: RunConfig) -> tuple[dict, dict]:
    ir = _read_ir(args.circuit, cfg)
    chain = cfg.chain(ir.n_qubits)
    return _scan(ir, chain, cfg, cfg.compiler_options(), cfg.noise(args.ideal), args.shots, args.seed)


def cmd_rb(args, cfg: RunConfig) -> tuple[dict, dict]:
    rb = cfg["characterization"]["rb"]
    n = rb["n_ions"]
    exp = rb_run(
        n_ions=n,
        lengths=rb["lengths"],
        n_seq=rb["n_seq"],
        noise=cfg.noise(args.ideal),
        seed=args.seed,
        model=rb["model"],
        shots=args.shots if args.shots_given else rb["shots"],
        chain=cfg.chain(n),
        options=cfg.compiler_options(),
        max_trajectories=cfg.max_trajectories,
    )
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["L", "mean_survival", "sem"])
    for L, m, e in zip(exp.lengths, exp.mean_survival, exp.sem):
        w.writerow([L, f"{m:.6f}", f"{e:.6f}"])
    return exp.report(), {"rb.csv": buf.getvalue()}


def cmd_bell(args, cfg: RunConfig) -> tuple[dict, dict]:
    bell = cfg["characterization"]["bell"]
    chain = cfg.chain(bell["n_ions"])
    scan = parity_scan(
        chain,
        tuple(bell["pair"]),
        np.linspace(0, np.pi, bell["n_phases"], endpoint=False),
        args.shots if args.shots_given else bell["shots"],
        cfg.noise(args.ideal),
        args.seed,
        cfg.compiler_options(),
        max_trajectories=cfg.max_trajectories,
    )
    report = scan.report()
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["phase", "parity"])
    for ph, par in zip(scan.phases, scan.parity):
        w.writerow([f"{ph:.6f}", f"{par:.6f}"])
    return report, {"parity.csv": buf.getvalue()}


def cmd_qpt(args, cfg: RunConfig) -> tuple[dict, dict]:
    q = cfg["characterization"]["qpt"]
    chain = cfg.chain(2)
    opts = cfg.compiler_options()
    if args.circuit:
        ir = _read_ir(args.circuit, cfg)
    else:
        ir = CircuitIR(2, [Gate("CNOT", (0, 1))])
    if ir.n_qubits != 2:
        raise ValueError("process tomography needs a two-ion circuit")
    program = compile_circuit(ir, chain, opts)
    shots = args.shots if args.shots_given else q["shots_per_setting"]
    result = qpt_cnot(
        program, chain, shots, cfg.noise(args.ideal), args.seed,
        n_bootstrap=q["n_bootstrap"], options=opts, max_trajectories=cfg.max_trajectories,
    )
    report = result.report()
    report["shots_per_setting"] = shots
    return report, {}


COMMANDS = {
    "compile": cmd_compile,
    "run": cmd_run,
    "scan": cmd_scan,
    "rb": cmd_rb,
    "bell": cmd_bell,
    "qpt": cmd_qpt,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ioncascade", description="Compile and simulate trapped-ion pulse programs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding the shipped defaults")
    common.add_argument("--seed", type=int, default=None, help="master seed (default from config)")
    common.add_argument("--shots", type=int, default=None, help="repetitions per setting")
    common.add_argument("--out", help="directory for the report and CSV files")
    common.add_argument("--ideal", action="store_true", help="ignore the configured noise")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("compile", parents=[common], help="compile a circuit to a pulse program")
    p.add_argument("circuit")
    p = sub.add_parser("run", parents=[common], help="simulate circuits and report populations")
    p.add_argument("circuit", nargs="?")
    p.add_argument("--scan", action="store_true", help="also sweep gate-scan truncation points")
    p.add_argument("--product", help="run every product of these gates, e.g. I,H,X")
    p.add_argument("--ions", type=int, help="chain length for --product")
    p = sub.add_parser("scan", parents=[common], help="gate-scan trace of a circuit")
    p.add_argument("circuit")
    sub.add_parser("rb", parents=[common], help="randomized benchmarking")
    sub.add_parser("bell", parents=[common], help="Bell-state parity scan")
    p = sub.add_parser("qpt", parents=[common], help="process tomography of a two-ion circuit (default CNOT)")
    p.add_argument("circuit", nargs="?")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        cfg = RunConfig.load(args.config)
        args.shots_given = args.shots is not None
        if args.seed is None:
            args.seed = int(cfg["cli"]["seed"])
        if args.shots is None:
            args.shots = int(cfg["cli"]["shots"])
        if args.shots < 1:
            raise ValueError("--shots must be positive")
        report, files = COMMANDS[args.command](args, cfg)
    except NUMERIC_ERRORS as exc:
        if isinstance(exc, CircuitError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report = {"command": args.command, "config_hash": cfg.hash, "seed": args.seed, **report}
    text = json.dumps(report, indent=2, default=float)
    out = args.out or cfg["cli"]["out"]
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"{args.command}.json").write_text(text + "\n")
        for name, content in files.items():
            (path / name).write_text(content)
    else:
        print(text)
        for name, content in files.items():
            print(f"\n# {name}")
            print(content, end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
