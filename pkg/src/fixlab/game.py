"""The subgroup-enlargement game on finite matrix groups.

A state is a tuple (H_1, ..., H_l) of subgroups of G, starting at the base
subgroups (M_1, ..., M_l).  Type I moves add a set P to every H_i whose
index is fixed by a non-derangement tau, provided h H_i h^-1 >= M_tau(i) for
all h in P.  Type II moves add phi(H_sigma(i)) to H_i for phi in a set
Lambda of automorphisms from Inn(G).Pi, provided H_i >= phi(M_sigma(i)).
The player wins once some H_i equals G.

Permutations are written as 1-based image lists: ``(2, 1)`` swaps 1 and 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .algebra import MatrixOverFp, elementary_matrix, mat_inv, mat_mul, mat_prod
from .groups import (
    DEFAULT_CAP,
    ClosureOverflow,
    FiniteMatrixGroup,
    GroupAutomorphism,
    NoCertificateError,
    SubgroupHandle,
    TorsionCertificate,
    abelianization_is_torsion,
    elementary_index_set,
    inner,
    make_automorphism,
    perfectness_certificate,
    permutation_automorphism,
    sl_order,
)

VARIANTS = ("game", "game+", "game_l", "game_l+")


class ScenarioTooLarge(ValueError):
    pass


class InvalidMoveError(ValueError):
    def __init__(self, report: ValidationReport):
        super().__init__(report.reason or "invalid move")
        self.report = report


def _check_perm(perm: Sequence[int], l: int, what: str) -> tuple[int, ...]:
    perm = tuple(int(v) for v in perm)
    if sorted(perm) != list(range(1, l + 1)):
        raise ValueError(f"{what} must be a permutation of 1..{l}, got {list(perm)}")
    return perm


@dataclass(frozen=True)
class TypeI:
    """Enlarge H_i by P for every i with tau(i) = i."""

    tau: tuple[int, ...]
    P: tuple[MatrixOverFp, ...]
    label: str = ""

    def describe(self) -> str:
        return self.label or f"I[tau={list(self.tau)}, |P|={len(self.P)}]"


@dataclass(frozen=True)
class TypeII:
    """Enlarge every H_i by phi(H_sigma(i)) for phi in Lambda."""

    sigma: tuple[int, ...]
    Lambda: tuple[GroupAutomorphism, ...]
    label: str = ""

    def describe(self) -> str:
        return self.label or f"II[sigma={list(self.sigma)}, |Lambda|={len(self.Lambda)}]"


Move = TypeI | TypeII


@dataclass
class Strategy:
    name: str
    moves: list
    expected_winner: int | None = None


@dataclass
class GameConfig:
    ambient: FiniteMatrixGroup
    base_subgroups: list[SubgroupHandle]
    Pi: list[GroupAutomorphism] = field(default_factory=list)
    variant: str = "game+"
    name: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if len(self.base_subgroups) < 2:
            raise ValueError("need at least two base subgroups")
        if self.variant in ("game", "game+") and self.l != 2:
            raise ValueError(f"variant {self.variant!r} is the two-subgroup game; use game_l for l={self.l}")

    @property
    def l(self) -> int:
        return len(self.base_subgroups)

    @property
    def needs_torsion(self) -> bool:
        return not self.variant.endswith("+")

    def check_generation(self) -> bool:
        """Hypothesis (i): the base subgroups jointly generate G."""
        gens = [g for M in self.base_subgroups for g in M.generators]
        union = SubgroupHandle(self.ambient, gens, check=False)
        return union.order == self.ambient.order

    def pi_report(self) -> dict:
        """Closure of Pi under composition and inverse, as automorphisms of G."""
        ident = GroupAutomorphism(self.ambient.identity, "gl", "id")

        def key(phi):
            return tuple(phi.images(self.ambient))

        provided = {key(phi) for phi in self.Pi}
        found = {key(ident): ident}
        frontier = [ident]
        gens = [*self.Pi, *(phi.inverse() for phi in self.Pi)]
        while frontier:
            nxt = []
            for a in frontier:
                for b in gens:
                    c = a.compose(b)
                    k = key(c)
                    if k not in found:
                        found[k] = c
                        nxt.append(c)
            frontier = nxt
        closed = set(found) <= provided | {key(ident)}
        return {"provided": len(self.Pi), "generated_order": len(found), "closed": closed}

    def pi_closure(self) -> list[GroupAutomorphism]:
        out = [GroupAutomorphism(self.ambient.identity, "gl", "id")]
        seen = {tuple(out[0].images(self.ambient))}
        frontier = list(out)
        gens = [*self.Pi, *(phi.inverse() for phi in self.Pi)]
        while frontier:
            nxt = []
            for a in frontier:
                for b in gens:
                    c = a.compose(b)
                    k = tuple(c.images(self.ambient))
                    if k not in seen:
                        seen.add(k)
                        out.append(c)
                        nxt.append(c)
            frontier = nxt
        return out


@dataclass
class GameState:
    config: GameConfig
    H: list[SubgroupHandle]
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, config: GameConfig) -> GameState:
        return cls(config, list(config.base_subgroups), [])

    def orders(self) -> list[int]:
        return [h.order for h in self.H]


@dataclass
class Containment:
    """One checked containment: ``subject`` >= ``target`` for a given move element."""

    element: str
    index: int
    relation: str
    passed: bool | None
    witness: MatrixOverFp | None = None

    def to_json(self) -> dict:
        return {
            "element": self.element,
            "index": self.index,
            "relation": self.relation,
            "passed": self.passed,
            "witness": self.witness.to_json() if self.witness is not None else None,
        }


@dataclass
class ValidationReport:
    valid: bool | None
    move: str
    checks: list[Containment] = field(default_factory=list)
    torsion: TorsionCertificate | None = None
    perfectness: list | None = None
    perfectness_note: str = ""
    reason: str = ""
    notes: list[str] = field(default_factory=list)

    @property
    def undecided(self) -> bool:
        return self.valid is None

    def failures(self) -> list[Containment]:
        return [c for c in self.checks if c.passed is False]

    def to_json(self) -> dict:
        return {
            "valid": self.valid,
            "move": self.move,
            "reason": self.reason,
            "checks": [c.to_json() for c in self.checks],
            "torsion": self.torsion.to_json() if self.torsion else None,
            "perfectness": [str(w) for w in self.perfectness] if self.perfectness else None,
            "perfectness_note": self.perfectness_note,
            "notes": self.notes,
        }


def _conj_label(h_idx: int) -> str:
    return f"P[{h_idx}]"


def _in_inn_times_pi(config: GameConfig, phi: GroupAutomorphism, pis: list[GroupAutomorphism]) -> bool:
    # phi = conj(c) lies in Inn(G).Pi iff conj(c c_pi^-1) is inner for some pi;
    # inner is certified by lambda * c * c_pi^-1 in G for a scalar lambda
    G = config.ambient
    for pi in pis:
        d = mat_mul(phi.matrix, mat_inv(pi.matrix))
        for lam in range(1, G.p):
            if MatrixOverFp(d.array * lam, G.p) in G:
                return True
    return False


def validate_move(state: GameState, mv: Move) -> ValidationReport:
    config = state.config
    G = config.ambient
    l = config.l
    report = ValidationReport(None, mv.describe())
    try:
        if isinstance(mv, TypeI):
            _validate_type_i(state, mv, report)
        elif isinstance(mv, TypeII):
            _validate_type_ii(state, mv, report)
        else:
            raise TypeError(f"unknown move {mv!r}")
    except ClosureOverflow as exc:
        report.valid = None
        report.reason = f"undecided at cap: {exc}"
        return report
    except ValueError as exc:
        report.valid = False
        report.reason = str(exc)
        return report
    failed = report.failures()
    undecided = [c for c in report.checks if c.passed is None]
    if failed:
        report.valid = False
        c = failed[0]
        report.reason = f"containment failed: {c.relation} (element {c.element}, index {c.index})"
    elif undecided or (report.torsion is not None and report.torsion.result is None):
        report.valid = None
        report.reason = "undecided at cap"
    else:
        report.valid = True
    return report


def _validate_type_i(state: GameState, mv: TypeI, report: ValidationReport) -> None:
    config = state.config
    G = config.ambient
    l = config.l
    tau = _check_perm(mv.tau, l, "tau")
    if all(tau[i] != i + 1 for i in range(l)):
        raise ValueError(f"tau={list(tau)} is a derangement; type I moves need a fixed point")
    for k, h in enumerate(mv.P):
        if h not in G:
            raise ValueError(f"P[{k}] is not an element of G")
    for k, h in enumerate(mv.P):
        hinv = mat_inv(h)
        for i in range(l):
            target = config.base_subgroups[tau[i] - 1]
            rel = f"P[{k}] H_{i + 1} P[{k}]^-1 >= M_{tau[i]}"
            witness = None
            passed = True
            for m in target.generators:
                # h H h^-1 contains m  <=>  h^-1 m h in H
                if mat_prod([hinv, m, h]) not in state.H[i]:
                    witness = m
                    passed = False
                    break
            report.checks.append(Containment(_conj_label(k), i + 1, rel, passed, witness))
    if config.needs_torsion:
        Q = SubgroupHandle(G, mv.P, check=False)
        report.torsion = abelianization_is_torsion(Q)
        report.notes.append("torsion side-condition verified on a finite quotient only")
    idx = elementary_index_set(mv.P)
    if idx is None or not mv.P:
        report.perfectness_note = "no symbolic certificate: P is not a set of elementary matrices"
    else:
        try:
            report.perfectness = perfectness_certificate(idx, G.p, G.n)
            ok = all(w.verified for w in report.perfectness)
            report.perfectness_note = (
                f"<P> on indices {sorted(idx)} is perfect: every generator is a commutator"
                if ok
                else "commutator evaluation failed"
            )
        except NoCertificateError as exc:
            report.perfectness_note = f"no symbolic certificate: {exc}"


def _validate_type_ii(state: GameState, mv: TypeII, report: ValidationReport) -> None:
    config = state.config
    l = config.l
    sigma = _check_perm(mv.sigma, l, "sigma")
    if l == 2:
        report.notes.append("l = 2: sigma equals its inverse; the general-l rule is applied verbatim")
    pis = config.pi_closure()
    for k, phi in enumerate(mv.Lambda):
        if not _in_inn_times_pi(config, phi, pis):
            raise ValueError(f"Lambda[{k}] is not certified to lie in Inn(G).Pi")
    for k, phi in enumerate(mv.Lambda):
        for i in range(l):
            source = config.base_subgroups[sigma[i] - 1]
            rel = f"H_{i + 1} >= Lambda[{k}](M_{sigma[i]})"
            witness = None
            passed = True
            for m in source.generators:
                if phi(m) not in state.H[i]:
                    witness = phi(m)
                    passed = False
                    break
            report.checks.append(Containment(f"Lambda[{k}]", i + 1, rel, passed, witness))


def apply_move(state: GameState, mv: Move, report: ValidationReport | None = None) -> GameState:
    """Return the next state; the input state is never modified."""
    report = report or validate_move(state, mv)
    if report.valid is not True:
        raise InvalidMoveError(report)
    l = state.config.l
    if isinstance(mv, TypeI):
        H = [h.join(mv.P) if mv.tau[i] == i + 1 else h for i, h in enumerate(state.H)]
    else:
        H = []
        for i in range(l):
            src = state.H[mv.sigma[i] - 1]
            H.append(state.H[i].join(phi(g) for phi in mv.Lambda for g in src.generators))
    return GameState(state.config, H, [*state.history, mv])


def check_win(state: GameState) -> int | None:
    """Least 1-based i with H_i = G, or None.  Raises ClosureOverflow if undecidable."""
    target = state.config.ambient.order
    for i, h in enumerate(state.H):
        if h.order == target:
            return i + 1
    return None


@dataclass
class StrategyResult:
    verdict: str  # "win", "incomplete", "invalid", "undecided"
    winner: int | None
    failed_step: int | None
    trace: list[dict]

    @property
    def label(self) -> str:
        if self.verdict == "win":
            return f"win({self.winner})"
        if self.verdict == "invalid":
            return f"invalid-at-step-{self.failed_step}"
        return self.verdict

    def orders(self, i: int) -> list[int]:
        """Order trace of H_i (1-based) across stages."""
        return [rec["orders"][i - 1] for rec in self.trace if rec.get("orders")]


def run_strategy(config: GameConfig, strat: Strategy) -> StrategyResult:
    """Replay ``strat`` from the initial state and record every stage.

    Steps are numbered from 1; stage 0 is the initial state.
    """
    state = GameState.initial(config)
    try:
        trace = [_stage_record(0, "initial", state, None)]
    except ClosureOverflow as exc:
        return StrategyResult("undecided", None, 0, [{"stage": 0, "move": "initial", "orders": None, "error": str(exc)}])
    for step, mv in enumerate(strat.moves, start=1):
        report = validate_move(state, mv)
        if report.valid is not True:
            verdict = "undecided" if report.valid is None else "invalid"
            trace.append({"stage": step, "move": mv.describe(), "validation": report.to_json(), "orders": None})
            return StrategyResult(verdict, None, step, trace)
        state = apply_move(state, mv, report)
        try:
            trace.append(_stage_record(step, mv.describe(), state, report))
        except ClosureOverflow as exc:
            trace.append({"stage": step, "move": mv.describe(), "validation": report.to_json(), "orders": None, "error": str(exc)})
            return StrategyResult("undecided", None, step, trace)
    winner = trace[-1]["winner"]
    if winner is None:
        return StrategyResult("incomplete", None, None, trace)
    return StrategyResult("win", winner, None, trace)


def _stage_record(stage: int, move: str, state: GameState, report: ValidationReport | None) -> dict:
    return {
        "stage": stage,
        "move": move,
        "orders": state.orders(),
        "group_order": state.config.ambient.order,
        "winner": check_win(state),
        "validation": report.to_json() if report else None,
    }


def summary_table(result: StrategyResult, config: GameConfig) -> str:
    l = config.l
    head = ["stage", "move"] + [f"|H_{i + 1}|" for i in range(l)] + ["winner"]
    rows = [head]
    for rec in result.trace:
        orders = rec["orders"] or ["-"] * l
        rows.append([str(rec["stage"]), rec["move"], *map(str, orders), str(rec.get("winner") or "-")])
    widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.append(f"verdict: {result.label}  (|G| = {config.ambient.order}, variant {config.variant})")
    return "\n".join(lines) + "\n"


def weyl_element(n: int, p: int) -> MatrixOverFp:
    """w = e_{1,n}(1) e_{n,1}(-1) e_{1,n}(1)."""
    return mat_prod([elementary_matrix(n, 1, n, 1, p), elementary_matrix(n, n, 1, -1, p), elementary_matrix(n, 1, n, 1, p)])


def scenario_elementary(
    n: int,
    p: int,
    automorphism: str = "inner",
    variant: str | None = None,
    cap: int = DEFAULT_CAP,
) -> tuple[GameConfig, Strategy]:
    """G = E(n, F_p), M = last column, L = last row, and the two-move strategy.

    ``automorphism="inner"`` uses conjugation by w^-1 for the second move with
    Pi = {id}; ``"transposition"`` uses phi_tau for tau = (1 n) with
    Pi = {id, phi_tau}.
    """
    if n < 3:
        raise ValueError("scenario needs n >= 3")
    if sl_order(n, p) > cap:
        raise ScenarioTooLarge(f"|SL({n},{p})| = {sl_order(n, p)} exceeds cap {cap}")
    G = FiniteMatrixGroup.elementary(n, p, cap=cap)
    M = G.subgroup([elementary_matrix(n, i, n, 1, p) for i in range(1, n)], name="M", check=False)
    L = G.subgroup([elementary_matrix(n, n, j, 1, p) for j in range(1, n)], name="L", check=False)
    P = tuple(elementary_matrix(n, i, j, 1, p) for i in range(1, n) for j in range(1, n) if i != j)
    if variant is None:
        variant = "game" if n >= 4 else "game+"
    if automorphism == "inner":
        w = weyl_element(n, p)
        phi = inner(G, mat_inv(w), label="conj(w^-1)")
        Pi: list[GroupAutomorphism] = []
    elif automorphism == "transposition":
        perm = list(range(n))
        perm[0], perm[-1] = perm[-1], perm[0]
        phi = permutation_automorphism(G, perm, label=f"phi_(1 {n})")
        Pi = [phi]
    else:
        raise ValueError("automorphism must be 'inner' or 'transposition'")
    config = GameConfig(G, [M, L], Pi, variant, name=f"elementary-{n}-{p}")
    strat = Strategy(
        f"elementary-{n}-{p}",
        [
            TypeI((1, 2), P, label=f"I[id, P = E({n - 1}) block]"),
            TypeII((2, 1), (phi,), label=f"II[(12), {phi.label}]"),
        ],
        expected_winner=1,
    )
    return config, strat


# ---------------------------------------------------------------------------
# scenario / strategy files


class ScenarioFormatError(ValueError):
    pass


def _parse_element(spec, n: int, p: int, named: dict) -> MatrixOverFp:
    if isinstance(spec, str):
        if spec not in named:
            raise ScenarioFormatError(f"unknown element reference {spec!r}")
        return named[spec]
    if not isinstance(spec, dict):
        raise ScenarioFormatError(f"bad element spec {spec!r}")
    if "entries" in spec:
        g = MatrixOverFp.from_json(spec)
    elif "elementary" in spec:
        i, j, r = spec["elementary"]
        g = elementary_matrix(n, int(i), int(j), int(r), p)
    elif "ref" in spec:
        return _parse_element(spec["ref"], n, p, named)
    elif "inverse" in spec:
        return mat_inv(_parse_element(spec["inverse"], n, p, named))
    elif "product" in spec:
        parts = [_parse_element(s, n, p, named) for s in spec["product"]]
        if not parts:
            return MatrixOverFp.identity(n, p)
        return mat_prod(parts)
    elif "matrix" in spec:
        g = MatrixOverFp.from_json(spec["matrix"])
    else:
        raise ScenarioFormatError(f"bad element spec {spec!r}")
    if g.shape != (n, n) or g.p != p:
        raise ScenarioFormatError("element does not match the group dimension/modulus")
    return g


def _parse_automorphism(spec, G: FiniteMatrixGroup, named: dict) -> GroupAutomorphism:
    kind = spec.get("kind")
    label = spec.get("label", "")
    if kind == "inner":
        return inner(G, _parse_element(spec["element"], G.n, G.p, named), label)
    if kind == "conjugation":
        return make_automorphism(G, _parse_element(spec["element"], G.n, G.p, named), "gl", label)
    if kind == "permutation":
        perm = _check_perm(spec["perm"], G.n, "perm")
        return permutation_automorphism(G, [v - 1 for v in perm], label)
    raise ScenarioFormatError(f"unknown automorphism kind {kind!r}")


def _parse_moves(specs, G: FiniteMatrixGroup, named: dict) -> list:
    moves = []
    for k, spec in enumerate(specs, start=1):
        t = spec.get("type")
        label = spec.get("label", "")
        if t == "I":
            P = tuple(_parse_element(s, G.n, G.p, named) for s in spec.get("P", []))
            moves.append(TypeI(tuple(spec["tau"]), P, label))
        elif t == "II":
            lam = tuple(_parse_automorphism(s, G, named) for s in spec.get("Lambda", []))
            moves.append(TypeII(tuple(spec["sigma"]), lam, label))
        else:
            raise ScenarioFormatError(f"move {k}: unknown type {t!r}")
    return moves


def load_scenario(obj: dict, strategy_obj: dict | None = None, cap: int = DEFAULT_CAP) -> tuple[GameConfig, Strategy]:
    """Build a config and strategy from the JSON scenario schema.

    Moves come from ``strategy_obj`` when given, else from the scenario itself.
    """
    try:
        gspec = obj["group"]
        kind = gspec.get("kind")
        n, p = int(gspec["n"]), int(gspec["p"])
        named: dict[str, MatrixOverFp] = {}
        if kind == "elementary":
            G = FiniteMatrixGroup.elementary(n, p, cap=cap)
        elif kind == "generated":
            gens = [_parse_element(s, n, p, named) for s in gspec["generators"]]
            G = FiniteMatrixGroup(gens, name=gspec.get("id"), cap=cap)
        else:
            raise ScenarioFormatError(f"unknown group kind {kind!r}")
        for source in (obj, strategy_obj or {}):
            for name, spec in source.get("elements", {}).items():
                named[name] = _parse_element(spec, n, p, named)
        subs = []
        for s in obj["subgroups"]:
            gens = [_parse_element(e, n, p, named) for e in s["generators"]]
            subs.append(G.subgroup(gens, name=s.get("name"), check=False))
        Pi = [_parse_automorphism(s, G, named) for s in obj.get("pi", [])]
        config = GameConfig(G, subs, Pi, obj.get("variant", "game+"), name=obj.get("name", ""))
        src = strategy_obj if strategy_obj is not None else obj
        moves = _parse_moves(src.get("moves", []), G, named)
        expected = src.get("expected_winner", obj.get("expected_winner"))
        strat = Strategy(src.get("name", config.name), moves, expected)
    except ScenarioFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc}") from exc
    return config, strat


def _element_json(g: MatrixOverFp) -> dict:
    return g.to_json()


def _automorphism_json(phi: GroupAutomorphism) -> dict:
    kind = "inner" if phi.kind == "inner" else "conjugation"
    return {"kind": kind, "element": _element_json(phi.matrix), "label": phi.label}


def move_to_json(mv: Move) -> dict:
    if isinstance(mv, TypeI):
        return {"type": "I", "tau": list(mv.tau), "P": [_element_json(h) for h in mv.P], "label": mv.label}
    return {"type": "II", "sigma": list(mv.sigma), "Lambda": [_automorphism_json(f) for f in mv.Lambda], "label": mv.label}


def scenario_to_json(config: GameConfig, strat: Strategy) -> dict:
    G = config.ambient
    return {
        "name": config.name,
        "group": {"kind": "generated", "id": G.name, "n": G.n, "p": G.p, "generators": [_element_json(g) for g in G.generators]},
        "subgroups": [{"name": M.name, "generators": [_element_json(g) for g in M.generators]} for M in config.base_subgroups],
        "pi": [_automorphism_json(phi) for phi in config.Pi],
        "variant": config.variant,
        "moves": [move_to_json(mv) for mv in strat.moves],
        "expected_winner": strat.expected_winner,
    }


def builtin_scenario(name: str, cap: int = DEFAULT_CAP) -> tuple[GameConfig, Strategy]:
    """Resolve names like ``elementary-3-2`` or ``elementary-4-2-transposition``."""
    parts = name.split("-")
    if parts[0] != "elementary" or len(parts) not in (3, 4):
        raise ScenarioFormatError(f"unknown built-in scenario {name!r}")
    try:
        n, p = int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ScenarioFormatError(f"unknown built-in scenario {name!r}") from exc
    auto = parts[3] if len(parts) == 4 else "inner"
    return scenario_elementary(n, p, automorphism=auto, cap=cap)


def write_trace(result: StrategyResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in result.trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.write(json.dumps({"verdict": result.label, "winner": result.winner, "failed_step": result.failed_step}, sort_keys=True) + "\n")
