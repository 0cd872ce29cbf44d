"""Similarity metrics for stage artifacts: EM, BLEU, ROUGE-L, TF-IDF, CodeBLEU.

All scores live in [0, 1] and all functions are pure. Text metrics tokenize
by lowercasing and splitting on Unicode whitespace; code metrics tokenize
with the Python lexer (with a regex fallback for unlexable candidates);
SCXML TF-IDF tokenizes element names, attribute names, attribute values and
text words from the parsed document.
"""

from __future__ import annotations

import ast
import io
import keyword
import math
import re
import tokenize as pytokenize
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from lifegen.records import Stage, normalize_artifact


class EmptyReferenceError(ValueError):
    pass


class EmptyDocumentError(ValueError):
    pass


class ReferenceUnparsableError(ValueError):
    pass


PYTHON_KEYWORDS = frozenset(keyword.kwlist)
KEYWORD_WEIGHT = 5.0
_FALLBACK_TOKEN = re.compile(r"\w+|[^\w\s]")
_WORD = re.compile(r"[\w.:-]+")


# --- tokenization -------------------------------------------------------------


def text_tokens(text: str) -> list[str]:
    """Lowercased Unicode-whitespace tokens."""
    return text.lower().split()


def code_tokens(code: str) -> list[str]:
    """Lexical tokens of Python source, ignoring comments and layout.

    Falls back to a generic identifier/punctuation split when the Python
    lexer rejects the input, so arbitrary candidate text still tokenizes.
    """
    wanted = {pytokenize.NAME, pytokenize.NUMBER, pytokenize.STRING, pytokenize.OP}
    tokens: list[str] = []
    try:
        for tok in pytokenize.generate_tokens(io.StringIO(code).readline):
            if tok.type in wanted:
                tokens.append(tok.string)
    except (pytokenize.TokenError, IndentationError, SyntaxError, ValueError):
        return _FALLBACK_TOKEN.findall(code)
    return tokens


def xml_tokens(text: str) -> list[str]:
    """Lowercased element names, attribute names/values and text words.

    Unparsable documents fall back to a plain word split of the raw text.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError:
        return [t.lower() for t in _WORD.findall(text)]

    tokens: list[str] = []
    for elem in root.iter():
        tag = elem.tag.rsplit("}", 1)[-1]
        tokens.append(tag.lower())
        for name, value in elem.attrib.items():
            tokens.append(name.rsplit("}", 1)[-1].lower())
            tokens.extend(v.lower() for v in value.split())
        if elem.text:
            tokens.extend(t.lower() for t in _WORD.findall(elem.text))
        if elem.tail:
            tokens.extend(t.lower() for t in _WORD.findall(elem.tail))
    return tokens


# --- exact match --------------------------------------------------------------


def exact_match(candidate: str, reference: str, granularity: str = "line") -> float:
    """Fraction of reference units reproduced at the same position.

    Granularities: ``line`` (default) compares normalized lines by index,
    ``token`` compares whitespace tokens by index, ``sample`` is all-or-
    nothing on the fully normalized text.
    """
    cand = normalize_artifact(candidate).rstrip("\n")
    ref = normalize_artifact(reference).rstrip("\n")
    if not ref.strip():
        raise EmptyReferenceError("reference is empty")

    if granularity == "sample":
        return 1.0 if cand == ref else 0.0
    if granularity == "line":
        ref_units = ref.split("\n")
        cand_units = cand.split("\n")
    elif granularity == "token":
        ref_units = ref.split()
        cand_units = cand.split()
    else:
        raise ValueError(f"unknown granularity: {granularity!r}")

    hits = sum(
        1 for i, unit in enumerate(ref_units) if i < len(cand_units) and cand_units[i] == unit
    )
    return hits / len(ref_units)


# --- BLEU ----------------------------------------------------------------------


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_from_tokens(
    candidate: Sequence[str],
    reference: Sequence[str],
    max_n: int = 4,
    smoothing: bool = True,
) -> float:
    """Geometric mean of clipped n-gram precisions times the brevity penalty.

    Smoothing adds one to numerator and denominator of any order whose
    clipped match count is zero; without smoothing such orders zero the
    score.
    """
    if not reference:
        raise EmptyReferenceError("reference has no tokens")
    if not candidate:
        return 0.0

    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        matched = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total = sum(cand_counts.values())
        if matched == 0:
            if not smoothing:
                return 0.0
            precision = (matched + 1) / (total + 1)
        else:
            precision = matched / total
        log_sum += math.log(precision)

    geo_mean = math.exp(log_sum / max_n)
    c, r = len(candidate), len(reference)
    brevity = 1.0 if c > r else math.exp(1 - r / c)
    return min(1.0, geo_mean * brevity)


def bleu(
    candidate: str,
    reference: str,
    max_n: int = 4,
    smoothing: bool = True,
    tokenizer: Callable[[str], list[str]] = text_tokens,
) -> float:
    return bleu_from_tokens(tokenizer(candidate), tokenizer(reference), max_n, smoothing)


# --- ROUGE-L -------------------------------------------------------------------


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # single-row dynamic program; the test oracle keeps the full matrix
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(
    candidate: str,
    reference: str,
    beta: float = 1.2,
    tokenizer: Callable[[str], list[str]] = text_tokens,
) -> float:
    """LCS-based F-measure with recall weighted by ``beta``."""
    cand = tokenizer(candidate)
    ref = tokenizer(reference)
    if not ref:
        raise EmptyReferenceError("reference has no tokens")
    if not cand:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    beta2 = beta * beta
    return ((1 + beta2) * precision * recall) / (recall + beta2 * precision)


# --- TF-IDF cosine --------------------------------------------------------------


def tfidf_cosine(
    candidate: str,
    reference: str,
    idf_corpus: Sequence[str],
    tokenizer: Callable[[str], list[str]] = xml_tokens,
) -> float:
    """Cosine similarity of TF-IDF vectors under corpus-derived IDF weights.

    TF is raw count over document length; terms unseen in the corpus get
    the maximal smoothed IDF.
    """
    if not idf_corpus:
        raise ValueError("idf corpus must be nonempty")
    cand_tokens = tokenizer(candidate)
    ref_tokens = tokenizer(reference)
    if not cand_tokens or not ref_tokens:
        raise EmptyDocumentError("document has no tokens")

    n_docs = len(idf_corpus)
    df: Counter = Counter()
    for doc in idf_corpus:
        df.update(set(tokenizer(doc)))

    def vector(tokens: list[str]) -> dict[str, float]:
        counts = Counter(tokens)
        length = len(tokens)
        return {
            term: (count / length) * (math.log((1 + n_docs) / (1 + df[term])) + 1)
            for term, count in counts.items()
        }

    a = vector(cand_tokens)
    b = vector(ref_tokens)
    dot = sum(weight * b[term] for term, weight in a.items() if term in b)
    norm_a = math.sqrt(sum(w * w for w in a.values()))
    norm_b = math.sqrt(sum(w * w for w in b.values()))
    if dot == 0.0:
        return 0.0
    return min(1.0, dot / (norm_a * norm_b))


# --- CodeBLEU -------------------------------------------------------------------


@dataclass(frozen=True)
class CodeBleuBreakdown:
    ngram: float
    weighted_ngram: float
    ast_match: float
    dataflow_match: float
    combined: float
    weights: tuple[float, float, float, float]
    parse_fallback: bool = False  # candidate failed to parse; tree scores forced to 0

    def to_json(self) -> dict:
        return {
            "ngram": self.ngram,
            "weighted_ngram": self.weighted_ngram,
            "ast_match": self.ast_match,
            "dataflow_match": self.dataflow_match,
            "combined": self.combined,
            "weights": list(self.weights),
            "parse_fallback": self.parse_fallback,
        }


def weighted_ngram_match(
    candidate: Sequence[str],
    reference: Sequence[str],
    max_n: int = 4,
    keyword_weight: float = KEYWORD_WEIGHT,
    keywords: frozenset[str] = PYTHON_KEYWORDS,
    smoothing: bool = True,
) -> float:
    """BLEU where n-grams containing a reserved keyword weigh ``keyword_weight``x."""
    if not reference:
        raise EmptyReferenceError("reference has no tokens")
    if not candidate:
        return 0.0

    def weight(gram: tuple[str, ...]) -> float:
        return keyword_weight if any(tok in keywords for tok in gram) else 1.0

    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        matched = sum(
            min(count, ref_counts[gram]) * weight(gram) for gram, count in cand_counts.items()
        )
        total = sum(count * weight(gram) for gram, count in cand_counts.items())
        if matched == 0:
            if not smoothing:
                return 0.0
            precision = (matched + 1) / (total + 1)
        else:
            precision = matched / total
        log_sum += math.log(precision)

    geo_mean = math.exp(log_sum / max_n)
    c, r = len(candidate), len(reference)
    brevity = 1.0 if c > r else math.exp(1 - r / c)
    return min(1.0, geo_mean * brevity)


def ast_subtree_signatures(code: str) -> Counter:
    """Multiset of full-depth subtree shapes rooted at each internal node.

    Identifiers and literal values never appear in a signature (only node
    kinds do), so consistent renaming leaves the multiset unchanged.
    Raises SyntaxError on unparsable code.
    """
    tree = ast.parse(code)
    signatures: Counter = Counter()

    def shape(node: ast.AST) -> str:
        children = list(ast.iter_child_nodes(node))
        if not children:
            return type(node).__name__
        inner = ",".join(shape(child) for child in children)
        sig = f"{type(node).__name__}({inner})"
        signatures[sig] += 1
        return sig

    shape(tree)
    return signatures


def ast_match(candidate_code: str, reference_code: str) -> float:
    """Clipped overlap of candidate subtree shapes against the reference multiset."""
    try:
        ref_sigs = ast_subtree_signatures(reference_code)
    except SyntaxError as exc:
        raise ReferenceUnparsableError(str(exc)) from exc
    cand_sigs = ast_subtree_signatures(candidate_code)
    total = sum(ref_sigs.values())
    if total == 0:
        return 1.0
    matched = sum(min(count, ref_sigs[sig]) for sig, count in cand_sigs.items())
    return matched / total


def dataflow_edges(code: str) -> Counter:
    """Multiset of def-use edges with variables renamed positionally.

    A name occurrence index is assigned in evaluation order (assignment
    right-hand sides before their targets); a load of a variable with a
    prior store yields the edge (placeholder, def index, use index).
    Raises SyntaxError on unparsable code.
    """
    tree = ast.parse(code)
    position = [0]
    first_seen: dict[str, int] = {}
    last_def: dict[str, int] = {}
    edges: Counter = Counter()

    def placeholder(name: str) -> str:
        if name not in first_seen:
            first_seen[name] = len(first_seen)
        return f"var{first_seen[name]}"

    def record(name: str, is_store: bool) -> None:
        var = placeholder(name)
        pos = position[0]
        position[0] += 1
        if is_store:
            last_def[var] = pos
        elif var in last_def:
            edges[(var, last_def[var], pos)] += 1

    def visit(node: ast.AST) -> None:
        if isinstance(node, ast.Assign):
            visit(node.value)
            for target in node.targets:
                visit(target)
        elif isinstance(node, ast.AnnAssign):
            if node.value is not None:
                visit(node.value)
            visit(node.target)
        elif isinstance(node, ast.AugAssign):
            visit(node.value)
            if isinstance(node.target, ast.Name):
                record(node.target.id, is_store=False)
                record(node.target.id, is_store=True)
            else:
                visit(node.target)
        elif isinstance(node, ast.For):
            visit(node.iter)
            visit(node.target)
            for stmt in node.body:
                visit(stmt)
            for stmt in node.orelse:
                visit(stmt)
        elif isinstance(node, ast.Name):
            record(node.id, is_store=isinstance(node.ctx, (ast.Store, ast.Del)))
        elif isinstance(node, ast.arg):
            record(node.arg, is_store=True)
        else:
            for child in ast.iter_child_nodes(node):
                visit(child)

    visit(tree)
    return edges


def dataflow_match(candidate_code: str, reference_code: str) -> float:
    """Clipped overlap of def-use edges; vacuously 1 when the reference has none."""
    try:
        ref_edges = dataflow_edges(reference_code)
    except SyntaxError as exc:
        raise ReferenceUnparsableError(str(exc)) from exc
    cand_edges = dataflow_edges(candidate_code)
    total = sum(ref_edges.values())
    if total == 0:
        return 1.0
    matched = sum(min(count, ref_edges[edge]) for edge, count in cand_edges.items())
    return matched / total


def codebleu(
    candidate_code: str,
    reference_code: str,
    weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25),
    max_n: int = 4,
    keyword_weight: float = KEYWORD_WEIGHT,
) -> CodeBleuBreakdown:
    """Composite code similarity over token n-grams, keyword-weighted n-grams,
    AST subtree overlap and def-use dataflow overlap.

    An unparsable candidate zeroes the tree-based components and sets
    ``parse_fallback``; an unparsable reference raises.
    """
    if len(weights) != 4 or any(w < 0 for w in weights):
        raise ValueError("weights must be four nonnegative numbers")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")

    cand_tokens = code_tokens(candidate_code)
    ref_tokens = code_tokens(reference_code)
    ngram = bleu_from_tokens(cand_tokens, ref_tokens, max_n=max_n)
    weighted = weighted_ngram_match(cand_tokens, ref_tokens, max_n=max_n, keyword_weight=keyword_weight)

    parse_fallback = False
    try:
        # ast_match parses the reference first, so an unparsable reference
        # raises before an unparsable candidate can trip the fallback
        ast_score = ast_match(candidate_code, reference_code)
        dataflow_score = dataflow_match(candidate_code, reference_code)
    except SyntaxError:
        parse_fallback = True
        ast_score = 0.0
        dataflow_score = 0.0

    combined = (
        weights[0] * ngram
        + weights[1] * weighted
        + weights[2] * ast_score
        + weights[3] * dataflow_score
    )
    return CodeBleuBreakdown(
        ngram=ngram,
        weighted_ngram=weighted,
        ast_match=ast_score,
        dataflow_match=dataflow_score,
        combined=combined,
        weights=tuple(weights),
        parse_fallback=parse_fallback,
    )


# --- stage aggregation -----------------------------------------------------------

STAGE_METRICS: dict[Stage, tuple[str, ...]] = {
    Stage.REQUIREMENT: ("em", "bleu", "rouge_l"),
    Stage.SCXML: ("em", "bleu", "tfidf"),
    Stage.PSEUDOCODE: ("em", "bleu", "rouge_l"),
    Stage.CODE: ("em", "bleu", "codebleu"),
}


@dataclass(frozen=True)
class MetricRow:
    """Mean metric values for one (model, stage) cell."""

    model: str
    stage: Stage
    em: float
    bleu: float
    n_samples: int
    rouge_l: float | None = None
    tfidf: float | None = None
    codebleu: float | None = None

    def metric_values(self) -> dict[str, float]:
        values = {"em": self.em, "bleu": self.bleu}
        for name in ("rouge_l", "tfidf", "codebleu"):
            value = getattr(self, name)
            if value is not None:
                values[name] = value
        return values

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "stage": self.stage.key,
            "n_samples": self.n_samples,
            **self.metric_values(),
        }


def evaluate_stage(
    pairs: Sequence[tuple[str, str]],
    stage: Stage,
    model: str = "",
    em_granularity: str = "line",
) -> MetricRow:
    """Mean per-sample metrics for one stage's (candidate, reference) pairs.

    The metric set follows the stage: ROUGE-L for the text stages, TF-IDF
    (IDF fitted on the references) for the SCXML stage, CodeBLEU for the
    code stage.
    """
    if not pairs:
        raise ValueError("pairs must be nonempty")
    if stage not in STAGE_METRICS:
        raise ValueError(f"no metric column group for stage {stage.key}")

    def mean(values: Iterable[float]) -> float:
        values = list(values)
        return sum(values) / len(values)

    em_score = mean(exact_match(c, r, em_granularity) for c, r in pairs)
    if stage is Stage.CODE:
        bleu_score = mean(bleu(c, r, tokenizer=code_tokens) for c, r in pairs)
    else:
        bleu_score = mean(bleu(c, r) for c, r in pairs)

    rouge = tfidf = cb = None
    if stage in (Stage.REQUIREMENT, Stage.PSEUDOCODE):
        rouge = mean(rouge_l(c, r) for c, r in pairs)
    elif stage is Stage.SCXML:
        corpus = [r for _, r in pairs]
        tfidf = mean(tfidf_cosine(c, r, corpus) for c, r in pairs)
    elif stage is Stage.CODE:
        cb = mean(codebleu(c, r).combined for c, r in pairs)

    return MetricRow(
        model=model,
        stage=stage,
        em=em_score,
        bleu=bleu_score,
        rouge_l=rouge,
        tfidf=tfidf,
        codebleu=cb,
        n_samples=len(pairs),
    )
