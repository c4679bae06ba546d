"""Command-line entry point.

Exit codes: 0 success, 1 I/O error, 2 validation failure, 3 solver did not
converge, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import io
from .decomposition import assemble_davis, lhs_norm, solve_decomposition, verify_corollary_chain
from .experiments import (DEFAULT_SEED, DEFAULT_SIZE, Corpus, br_suite, davis_ratio_search,
                          envelope_suite)
from .filtration import check_f4, marginals, prev
from .martingale import deltas_2d, hardy_norms, hardy_norms_1d
from .mixed import AdaptedFamily, dual_witness, duality_defect, mixed_norm, pairing
from .prob import InvalidInput

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_USAGE = 0, 1, 2, 3, 64
SLACK = -1e-10


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _number(text: str) -> float:
    """Accepts decimals and fractions such as ``4/3``."""
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def _positive(text: str) -> float:
    x = _number(text)
    if not x > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return x


def _count(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if k < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return k


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--corpus-size", type=_count, default=DEFAULT_SIZE)
    common.add_argument("--tol", type=_positive, default=1e-6)
    common.add_argument("--max-iter", type=_count, default=20000)
    common.add_argument("--in", dest="inp", metavar="PATH")
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--p", type=_number, default=None)
    common.add_argument("--q", type=_number, default=None)
    common.add_argument("--threads", type=_count, default=None)

    parser = _Parser(prog="martlab", description="Finite-space martingale inequality toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "check-f4": "check the (F4) commutation condition of a grid",
        "norms": "Hardy norms of f on a grid and on its marginals",
        "solve-decomposition": "minimise the four-term decomposition norm of X",
        "assemble-davis": "split f into A+B+C+D and evaluate the inequality chain",
        "verify-duality": "mixed-norm dual witness checks",
        "br-suite": "Burkholder-Rosenthal corpus checks (CSV)",
        "ratio-search": "Hardy-norm ratio search over a corpus (CSV)",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "ratio-search":
            p.add_argument("--envelope", action="store_true",
                           help="also solve the decomposition and record every envelope constant")
    return parser


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _need_input(args):
    if not args.inp:
        raise UsageError(f"{args.command} needs --in")
    return io.read_json(args.inp)


# commands


def cmd_check_f4(args) -> int:
    G = io.grid_from_json(_need_input(args), honor_flag=False)
    rep = check_f4(G, 1e-12)
    _emit(args, io.dumps({"passed": rep.passed, "worstDefect": rep.worst_defect,
                          "witness": list(rep.witness) if rep.witness else None,
                          "method": rep.method, "tolerance": rep.tolerance}))
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_norms(args) -> int:
    G, f, _ = io.instance_from_json(_need_input(args), honor_flag=False)
    if f is None:
        raise InvalidInput("instance has no 'f'")
    certified = check_f4(G).passed
    G.certified_f4 = certified
    h = hardy_norms(G, f)
    F1, F2 = marginals(G)
    out = {"certifiedF4": certified, "h1S": h.h1S, "h1s": h.h1s, "h1M": h.h1M}
    for key, F in (("rows", F1), ("cols", F2)):
        h1 = hardy_norms_1d(F, f)
        out[key] = {"h1S": h1.h1S, "h1s": h1.h1s, "h1M": h1.h1M}
    _emit(args, io.dumps(out))
    return EXIT_OK


def cmd_solve(args) -> int:
    G, f, X = io.instance_from_json(_need_input(args), certify=True)
    if X is None:
        if f is None:
            raise InvalidInput("instance needs 'X' or 'f'")
        X = deltas_2d(G, f)
    d, rep = solve_decomposition(X, G, max_iter=args.max_iter, tol=args.tol, seed=args.seed)
    out = {"lhs": lhs_norm(G, X), "decomposition": d.as_dict(), "report": rep.as_dict()}
    _emit(args, io.dumps(out))
    return EXIT_OK if rep.converged else EXIT_NONCONVERGED


def cmd_davis(args) -> int:
    G, f, _ = io.instance_from_json(_need_input(args), certify=True)
    if f is None:
        raise InvalidInput("instance has no 'f'")
    res = assemble_davis(f, G, max_iter=args.max_iter, tol=args.tol, seed=args.seed)
    chain = verify_corollary_chain(f, G, res)
    _emit(args, io.dumps({"davis": res.as_dict(), "chain": chain.as_dict()}))
    if res.reconstruction_residual > 1e-9 or chain.exact_slack() < SLACK:
        return EXIT_INVALID
    return EXIT_OK if res.report.converged else EXIT_NONCONVERGED


def _duality_row(F: AdaptedFamily, p: float, q: float) -> dict:
    rep = duality_defect(F, p, q)
    Y = dual_witness(F, p, q)
    holder = mixed_norm(F, p, q) * mixed_norm(Y, p / (p - 1), q / (q - 1)) - pairing(F, Y)
    rel = abs(rep.pairing - rep.expected_pairing) / max(abs(rep.expected_pairing), 1e-300)
    return {"ratio": rep.ratio, "pairing": rep.pairing, "expected": rep.expected_pairing,
            "relError": rel, "holderSlack": holder}


def cmd_duality(args) -> int:
    p = 4 / 3 if args.p is None else args.p
    q = 1.5 if args.q is None else args.q
    if args.inp:
        row = _duality_row(io.family_from_json(io.read_json(args.inp)), p, q)
        _emit(args, io.dumps(row))
        rows = [row]
    else:
        corpus = Corpus(seed=args.seed, size=args.corpus_size)
        rows = []
        for inst in corpus:
            G = inst.grid
            X = deltas_2d(G, inst.f).reshape(-1, G.space.n)
            if not np.any(X):
                continue
            fam = AdaptedFamily(G.space, X, [G.parts[prev(i)][prev(j)] for i, j in G.indices()],
                                [G.parts[i][j] for i, j in G.indices()], nested=True)
            rows.append({"id": inst.idx, **_duality_row(fam, p, q)})
        cols = ["id", "ratio", "pairing", "expected", "relError", "holderSlack"]
        _emit(args, io.csv_text(cols, [[r[c] for c in cols] for r in rows]))
    bad = any(r["relError"] > 1e-9 or r["holderSlack"] < SLACK for r in rows)
    return EXIT_INVALID if bad else EXIT_OK


def cmd_br_suite(args) -> int:
    corpus = Corpus(seed=args.seed, size=args.corpus_size)
    p = 3.0 if args.p is None else args.p
    q = 1.5 if args.q is None else args.q
    rep = br_suite(corpus, p=p, q=q, threads=args.threads)
    _emit(args, rep.csv())
    bad = any(r["tensorDeltaError"] > 1e-12 for r in rep.rows)
    return EXIT_INVALID if bad else EXIT_OK


def cmd_ratio_search(args) -> int:
    corpus = Corpus(seed=args.seed, size=args.corpus_size)
    if args.envelope:
        rep = envelope_suite(corpus, threads=args.threads, tol=args.tol, max_iter=args.max_iter)
    else:
        rep = davis_ratio_search(corpus, threads=args.threads)
    _emit(args, rep.csv())
    if args.out:
        worst = Path(args.out).with_suffix(".worst.json")
        io.write_json(worst, {"skipped": rep.skipped, "summary": rep.summary(),
                              "worst": rep.worst})
    return EXIT_OK


COMMANDS = {"check-f4": cmd_check_f4, "norms": cmd_norms, "solve-decomposition": cmd_solve,
            "assemble-davis": cmd_davis, "verify-duality": cmd_duality,
            "br-suite": cmd_br_suite, "ratio-search": cmd_ratio_search}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except InvalidInput as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"I/O error: {exc}\n")
        return EXIT_IO


def main() -> None:
    sys.exit(run())
