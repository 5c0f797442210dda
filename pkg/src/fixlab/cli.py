"""Command-line entry point: ``fixlab {game,expander,geom,realizer}``.

Exit codes
----------
0  success (winning strategy matches its expectation / every corpus case matches)
1  verdict mismatch: incomplete strategy, wrong winner, or failing corpus cases
2  input error: unreadable or malformed scenario, strategy or corpus
3  invalid move in a strategy (the 1-based step is printed)
4  budget exhausted: closure overflow, undecided validation, overflow rows

All randomness flows from ``--seed`` through numpy's PCG64 generator.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import expander, geometry, realizer
from .game import (
    ScenarioFormatError,
    ScenarioTooLarge,
    Strategy,
    builtin_scenario,
    load_scenario,
    run_strategy,
    scenario_to_json,
    summary_table,
    write_trace,
)
from .groups import DEFAULT_CAP, ClosureOverflow

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_INPUT = 2
EXIT_INVALID_MOVE = 3
EXIT_BUDGET = 4

BUNDLED_CORPORA = {"geom": "geometry_corpus.json", "realizer": "realizer_corpus.json"}


def data_path(name: str) -> Path:
    """Path of a file shipped in ``fixlab/data``."""
    return Path(str(resources.files("fixlab") / "data" / name))


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_json(ref: str):
    """Load ``ref`` as a file path, else as a bundled data file name; None if neither exists."""
    for cand in (Path(ref), data_path(ref), data_path(ref + ".json")):
        if cand.is_file():
            return _read_json(cand)
    return None


def _err(msg: str) -> None:
    print(f"fixlab: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# game


def cmd_game(scenario: str, strategy: str | None = None, out: str | Path = "out", cap: int = DEFAULT_CAP) -> int:
    try:
        obj = _resolve_json(scenario)
        strat_obj = None
        if strategy is not None:
            strat_obj = _resolve_json(strategy)
            if strat_obj is None:
                raise ScenarioFormatError(f"strategy {strategy!r} not found")
        if obj is None:
            config, strat = builtin_scenario(scenario, cap=cap)
            if strat_obj is not None:
                _, strat = load_scenario(_builtin_shell(config), strat_obj, cap=cap)
        else:
            config, strat = load_scenario(obj, strat_obj, cap=cap)
    except (ScenarioTooLarge, ClosureOverflow) as exc:
        _err(f"budget exhausted: {exc}")
        return EXIT_BUDGET
    except (OSError, json.JSONDecodeError, ScenarioFormatError, KeyError, TypeError, ValueError) as exc:
        _err(f"cannot load scenario: {exc}")
        return EXIT_INPUT

    result = run_strategy(config, strat)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(result, out / "trace.jsonl")
    table = summary_table(result, config)
    (out / "summary.txt").write_text(table, encoding="utf-8", newline="\n")
    print(table, end="")

    if result.verdict == "invalid":
        print(f"invalid move at step {result.failed_step}")
        return EXIT_INVALID_MOVE
    if result.verdict == "undecided":
        print(f"undecided at step {result.failed_step}")
        return EXIT_BUDGET
    if result.verdict == "win" and strat.expected_winner in (None, result.winner):
        return EXIT_OK
    if result.verdict == "win":
        print(f"winner {result.winner} differs from expected {strat.expected_winner}")
    return EXIT_MISMATCH


def _builtin_shell(config) -> dict:
    # a built-in scenario re-expressed as JSON so a separate strategy file can reference it
    return scenario_to_json(config, Strategy("none", []))


# ---------------------------------------------------------------------------
# expander


def cmd_expander(
    m_list,
    p: int,
    q_list,
    d: int = 3,
    restarts: int = 20,
    seed: int = 0,
    out: str | Path = "out",
    cap: int = DEFAULT_CAP,
) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    def export(m, g):
        stem = out / f"cayley-m{m}-p{p}"
        g.write_edge_list(stem.with_suffix(".edges"))
        g.write_header(stem.with_suffix(".json"))
        print(f"m={m} p={p}: {g.vertex_count} vertices, degree {g.degree} -> {stem}.edges")

    rows = expander.family_gap_report(m_list, p, q_list, d=d, restarts=restarts, seed=seed, cap=cap, on_graph=export)
    overflow = []
    for m in m_list:
        order = expander.standard_generating_images(m, p).target_order()
        if order > expander.VERTEX_LIMIT:
            overflow.append(m)
            print(f"m={m} p={p}: |G| = {order} exceeds the vertex budget")
    if q_list:
        text = expander.report_csv(rows)
        (out / "report.csv").write_text(text, encoding="utf-8", newline="\n")
        print(text, end="")
    return EXIT_BUDGET if overflow else EXIT_OK


# ---------------------------------------------------------------------------
# corpora


def cmd_corpus(kind: str, corpus: str | None = None, seed: int = 0, tol: float | None = None, out: str | Path | None = None) -> int:
    runner = {"geom": geometry.run_case, "realizer": realizer.run_case}[kind]
    try:
        cases = _read_json(corpus if corpus is not None else data_path(BUNDLED_CORPORA[kind]))
        if not isinstance(cases, list):
            raise ValueError("corpus must be a JSON list of cases")
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        _err(f"cannot load corpus: {exc}")
        return EXIT_INPUT

    failing, records = [], []
    for i, case in enumerate(cases):
        cid = case.get("id", f"case-{i}") if isinstance(case, dict) else f"case-{i}"
        try:
            if tol is not None:
                case = {**case, "tol": tol}
            ok, observed = runner(case, seed=seed)
        except Exception as exc:  # a broken case is a failing case, not a crash
            ok, observed = False, {"error": f"{type(exc).__name__}: {exc}"}
        records.append({"id": cid, "ok": bool(ok), "observed": observed})
        print(f"{'PASS' if ok else 'FAIL'}  {cid}")
        if not ok:
            failing.append(cid)

    print(f"{len(cases)} checks, {len(failing)} failing")
    if failing:
        print("failing cases: " + ", ".join(failing))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{kind}-report.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(records, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
    return EXIT_MISMATCH if failing else EXIT_OK


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "item"):
        return obj.item()
    return str(obj)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fixlab", description="Fixed-point game, expander and geometry experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("game", help="replay a strategy on a scenario")
    g.add_argument("--scenario", required=True, help="scenario JSON file, bundled file name, or built-in like elementary-3-2")
    g.add_argument("--strategy", help="strategy JSON overriding the scenario's own moves")
    g.add_argument("--out", default="out")
    g.add_argument("--cap", type=int, default=DEFAULT_CAP, help="closure size budget")

    e = sub.add_parser("expander", help="Cayley graphs of SL(4m, F_p) and Poincare constants")
    e.add_argument("--m", type=int, nargs="+", default=[1])
    e.add_argument("--p", type=int, default=2)
    e.add_argument("--q", type=float, nargs="*", default=[2.0], help="target exponents; none means graph export only")
    e.add_argument("--d", type=int, default=3)
    e.add_argument("--restarts", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--cap", type=int, default=DEFAULT_CAP)
    e.add_argument("--out", default="out")

    for name, text in (("geom", "geometry predicate corpus"), ("realizer", "affine action corpus")):
        c = sub.add_parser(name, help=f"run the {text}")
        c.add_argument("corpus", nargs="?", help="corpus JSON (default: bundled)")
        c.add_argument("--seed", type=int, default=0)
        c.add_argument("--tol", type=float, default=None, help="override every case tolerance")
        c.add_argument("--out", default=None, help="directory for a JSON report")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "game":
        return cmd_game(args.scenario, args.strategy, args.out, args.cap)
    if args.command == "expander":
        return cmd_expander(args.m, args.p, args.q, args.d, args.restarts, args.seed, args.out, args.cap)
    return cmd_corpus(args.command, args.corpus, args.seed, args.tol, args.out)


if __name__ == "__main__":
    sys.exit(main())
