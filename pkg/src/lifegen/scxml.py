"""SCXML subset engine: parse, validate, simulate, canonically serialize.

Supports the control-logic core of W3C SCXML: ``scxml``, ``state``, ``final``
and ``transition`` elements with ``initial``, ``id``, ``event``, ``cond`` and
``target`` attributes. Anything else (``parallel``, ``datamodel``, executable
content, multi-target transitions) is parsed past and reported as an
``Unsupported`` warning rather than an error. ``cond`` expressions are kept
as opaque strings and always evaluate to true during simulation.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterator
from xml.sax.saxutils import escape

SUPPORTED_ELEMENTS = {"scxml", "state", "final", "transition"}


@dataclass(frozen=True)
class ParseError:
    kind: str  # XmlMalformed | WrongRootElement
    message: str
    line: int = 0
    column: int = 0


@dataclass(frozen=True)
class Transition:
    """One outgoing edge. ``event=None`` matches any event (wildcard)."""

    target: str
    event: str | None = None
    cond: str | None = None
    document_index: int = 0


@dataclass(frozen=True)
class State:
    id: str
    transitions: tuple[Transition, ...] = ()
    children: tuple["State", ...] = ()
    initial: str | None = None
    is_final: bool = False


@dataclass(frozen=True)
class StateChart:
    initial: str | None
    states: tuple[State, ...]
    name: str | None = None
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def all_ids(self) -> frozenset[str]:
        return frozenset(s.id for s in self.iter_states())

    def iter_states(self) -> Iterator[State]:
        """All states in document order, depth first."""
        stack = list(reversed(self.states))
        while stack:
            state = stack.pop()
            yield state
            stack.extend(reversed(state.children))

    def find_state(self, state_id: str) -> State | None:
        for state in self.iter_states():
            if state.id == state_id:
                return state
        return None


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1] if "}" in tag else tag


def parse_scxml(text: str) -> StateChart | list[ParseError]:
    """Parse SCXML text into a chart, or return parse errors.

    Never raises on bad input: malformed XML and a wrong root element come
    back as an error list with line/column positions where available.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, column = getattr(exc, "position", (0, 0)) or (0, 0)
        return [ParseError("XmlMalformed", str(exc), line, column)]

    if _localname(root.tag) != "scxml":
        return [
            ParseError(
                "WrongRootElement",
                f"root element is <{_localname(root.tag)}>, expected <scxml>",
            )
        ]

    warnings: list[str] = []
    anon_counter = [0]
    states = tuple(
        _parse_state(child, warnings, anon_counter)
        for child in root
        if _localname(child.tag) in ("state", "final")
    )
    for child in root:
        name = _localname(child.tag)
        if name not in ("state", "final"):
            warnings.append(f"unsupported element <{name}> ignored")

    return StateChart(
        initial=root.get("initial"),
        states=states,
        name=root.get("name"),
        warnings=tuple(warnings),
    )


def _parse_state(elem: ET.Element, warnings: list[str], anon_counter: list[int]) -> State:
    is_final = _localname(elem.tag) == "final"
    state_id = elem.get("id")
    if not state_id:
        anon_counter[0] += 1
        state_id = f"__anon{anon_counter[0]}"
        warnings.append(f"state without id assigned generated id {state_id!r}")

    transitions: list[Transition] = []
    children: list[State] = []
    for child in elem:
        name = _localname(child.tag)
        if name == "transition":
            transition = _parse_transition(child, state_id, len(transitions), warnings)
            if transition is not None:
                transitions.append(transition)
        elif name in ("state", "final"):
            children.append(_parse_state(child, warnings, anon_counter))
        else:
            warnings.append(f"unsupported element <{name}> in state {state_id!r} ignored")

    return State(
        id=state_id,
        transitions=tuple(transitions),
        children=tuple(children),
        initial=elem.get("initial"),
        is_final=is_final,
    )


def _parse_transition(
    elem: ET.Element, state_id: str, index: int, warnings: list[str]
) -> Transition | None:
    target = elem.get("target")
    if target is None:
        warnings.append(f"targetless transition in state {state_id!r} dropped (unsupported)")
        return None
    targets = target.split()
    if len(targets) > 1:
        warnings.append(
            f"multi-target transition in state {state_id!r} keeps first target {targets[0]!r}"
        )
    return Transition(
        target=targets[0] if targets else "",
        event=elem.get("event"),
        cond=elem.get("cond"),
        document_index=index,
    )


# --- static validation ------------------------------------------------------

ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Finding:
    kind: str
    message: str
    severity: str = ERROR
    subject: str = ""  # offending state id / target / attribute value


@dataclass(frozen=True)
class ScxmlValidationReport:
    findings: tuple[Finding, ...]

    @property
    def errors(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == ERROR)

    @property
    def warnings(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == WARNING)

    @property
    def ok(self) -> bool:
        """True when no error-severity findings are present."""
        return not self.errors

    def kinds(self) -> set[str]:
        return {f.kind for f in self.findings}


def validate(chart: StateChart) -> ScxmlValidationReport:
    """Check structural rules; findings are data, never exceptions.

    Emits MissingInitial, DanglingTarget, DuplicateStateId, UnreachableState,
    EmptyEventName and FinalStateTransition errors plus Unsupported warnings
    carried over from parsing. Reachability analysis is skipped when ids are
    duplicated or there is no resolvable initial state.
    """
    findings: list[Finding] = []
    all_states = list(chart.iter_states())
    ids = [s.id for s in all_states]
    id_set = set(ids)

    duplicates = sorted({i for i in ids if ids.count(i) > 1})
    for dup in duplicates:
        findings.append(Finding("DuplicateStateId", f"state id {dup!r} declared more than once", subject=dup))

    initial_ok = False
    if not chart.initial:
        findings.append(Finding("MissingInitial", "scxml element has no initial attribute"))
    elif chart.initial not in id_set:
        findings.append(
            Finding("DanglingTarget", f"initial attribute names unknown state {chart.initial!r}", subject=chart.initial)
        )
    else:
        initial_ok = True

    for state in all_states:
        if state.is_final and state.transitions:
            findings.append(
                Finding("FinalStateTransition", f"final state {state.id!r} declares transitions", subject=state.id)
            )
        if state.initial is not None and state.initial not in {c.id for c in state.children}:
            findings.append(
                Finding(
                    "DanglingTarget",
                    f"initial attribute of state {state.id!r} names no direct child {state.initial!r}",
                    subject=state.initial,
                )
            )
        for transition in state.transitions:
            if transition.event == "":
                findings.append(
                    Finding("EmptyEventName", f"transition in state {state.id!r} has empty event name", subject=state.id)
                )
            if transition.target not in id_set:
                findings.append(
                    Finding(
                        "DanglingTarget",
                        f"transition in state {state.id!r} targets unknown state {transition.target!r}",
                        subject=transition.target,
                    )
                )

    if initial_ok and not duplicates:
        reachable = _reachable_ids(chart)
        for state in all_states:
            if state.id not in reachable:
                findings.append(
                    Finding("UnreachableState", f"state {state.id!r} is unreachable from initial", subject=state.id)
                )

    for warning in chart.warnings:
        findings.append(Finding("Unsupported", warning, severity=WARNING))

    return ScxmlValidationReport(findings=tuple(findings))


def _build_maps(chart: StateChart) -> tuple[dict[str, State], dict[str, str | None]]:
    """First-occurrence id lookup plus parent-id map."""
    by_id: dict[str, State] = {}
    parent: dict[str, str | None] = {}

    def walk(state: State, parent_id: str | None) -> None:
        if state.id not in by_id:
            by_id[state.id] = state
            parent[state.id] = parent_id
        for child in state.children:
            walk(child, state.id)

    for state in chart.states:
        walk(state, None)
    return by_id, parent


def _entry_chain(state: State, by_id: dict[str, State]) -> list[State]:
    """States entered when targeting ``state``: itself, then initial descendants."""
    chain = [state]
    current = state
    while current.children:
        nxt = None
        if current.initial:
            nxt = next((c for c in current.children if c.id == current.initial), None)
        if nxt is None:
            nxt = current.children[0]
        chain.append(nxt)
        current = nxt
    return chain


def _reachable_ids(chart: StateChart) -> set[str]:
    by_id, parent = _build_maps(chart)
    if not chart.initial or chart.initial not in by_id:
        return set()

    reachable: set[str] = set()

    def enter(state_id: str) -> None:
        # entering a state activates its ancestors and its initial descent
        cursor: str | None = state_id
        while cursor is not None and cursor not in reachable:
            reachable.add(cursor)
            cursor = parent[cursor]
        for entered in _entry_chain(by_id[state_id], by_id):
            reachable.add(entered.id)

    enter(chart.initial)
    changed = True
    while changed:
        changed = False
        for state_id in list(reachable):
            for transition in by_id[state_id].transitions:
                target = transition.target
                if target in by_id and target not in reachable:
                    enter(target)
                    changed = True
    return reachable


# --- deterministic simulation -----------------------------------------------


@dataclass(frozen=True)
class SimStep:
    event: str
    from_state: str
    to_state: str


@dataclass(frozen=True)
class SimTrace:
    steps: tuple[SimStep, ...]
    final_configuration: str
    reached_final: bool


class StepLimitError(Exception):
    """Raised when max_steps transitions were taken and events remain."""

    def __init__(self, partial: SimTrace):
        super().__init__(f"step limit reached in configuration {partial.final_configuration!r}")
        self.partial = partial


def simulate(chart: StateChart, events: list[str], max_steps: int = 1000) -> SimTrace:
    """Deterministically run the chart over an event list.

    Per event, the first transition in document order on the innermost
    active state (walking outward through ancestors) whose event matches is
    taken; conditions are treated as true; unmatched events are dropped.
    A transition without an event attribute matches any event. Simulation
    stops on entering a final state.
    """
    by_id, parent = _build_maps(chart)
    if not chart.initial or chart.initial not in by_id:
        raise ValueError("chart has no resolvable initial state; validate first")

    entry = _entry_chain(by_id[chart.initial], by_id)
    current = entry[-1]
    reached_final = any(s.is_final for s in entry)
    steps: list[SimStep] = []

    for position, event in enumerate(events):
        if reached_final:
            break
        transition = _select_transition(current, event, by_id, parent)
        if transition is None:
            continue
        if len(steps) >= max_steps:
            raise StepLimitError(SimTrace(tuple(steps), current.id, reached_final))
        target = by_id.get(transition.target)
        if target is None:
            raise ValueError(f"transition targets unknown state {transition.target!r}; validate first")
        entry = _entry_chain(target, by_id)
        steps.append(SimStep(event=event, from_state=current.id, to_state=entry[-1].id))
        current = entry[-1]
        reached_final = any(s.is_final for s in entry)

    return SimTrace(tuple(steps), current.id, reached_final)


def _select_transition(
    leaf: State, event: str, by_id: dict[str, State], parent: dict[str, str | None]
) -> Transition | None:
    cursor: State | None = leaf
    while cursor is not None:
        for transition in cursor.transitions:
            if transition.event is None or transition.event == event:
                return transition
        parent_id = parent.get(cursor.id)
        cursor = by_id[parent_id] if parent_id is not None else None
    return None


# --- canonical serialization --------------------------------------------------


def to_canonical_xml(chart: StateChart) -> str:
    """Serialize deterministically: sorted attributes, two-space indent.

    Within a state, transitions are emitted before child states, each group
    in document order. ``parse_scxml(to_canonical_xml(c))`` is structurally
    equal to ``c`` for charts within the supported subset.
    """
    lines: list[str] = []
    lines.append(_open_tag("scxml", {"initial": chart.initial, "name": chart.name}, bool(chart.states)))
    for state in chart.states:
        _write_state(state, lines, depth=1)
    if chart.states:
        lines.append("</scxml>")
    return "\n".join(lines) + "\n"


def _write_state(state: State, lines: list[str], depth: int) -> None:
    indent = "  " * depth
    tag = "final" if state.is_final else "state"
    attrs = {"id": state.id, "initial": state.initial}
    has_body = bool(state.transitions or state.children)
    lines.append(indent + _open_tag(tag, attrs, has_body))
    for transition in state.transitions:
        t_attrs = {"cond": transition.cond, "event": transition.event, "target": transition.target}
        lines.append("  " * (depth + 1) + _open_tag("transition", t_attrs, False))
    for child in state.children:
        _write_state(child, lines, depth + 1)
    if has_body:
        lines.append(f"{indent}</{tag}>")


_ATTR_ESCAPES = {'"': "&quot;"}


def _open_tag(name: str, attrs: dict[str, str | None], has_body: bool) -> str:
    parts = [name]
    for key in sorted(attrs):
        value = attrs[key]
        if value is not None:
            parts.append('{}="{}"'.format(key, escape(value, _ATTR_ESCAPES)))
    inner = " ".join(parts)
    return f"<{inner}>" if has_body else f"<{inner}/>"
