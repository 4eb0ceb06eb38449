"""Text format for RDBN models (``.rdbn`` files).

Grammar (line oriented, ``#`` starts a comment)::

    type NAME: CONST CONST ...
    predicate NAME(TYPE, ...) [certain|uncertain] [simple|complex] [functional] [event]
    order PRED PRED ...                  # optional; declaration order otherwise
    initial|transition PRED(VAR, ...)
      parents PRED[@t-1], ...            # optional
      TREE
    end

A tree node is either ``leaf EXPR`` or::

    if FORMULA [; bind VAR, ...]
      TREE                               # true branch, indented deeper
    else
      TREE                               # false branch

Formulas: ``P(a, b)`` / ``P(a, b)@t-1``, ``a = b``, ``a != b``, ``a < b``
(constant order), ``!F``, ``F & G``, ``F | G``, ``exists x:T. F``,
``forall x:T. F`` and ``#(>= n) x:T. F`` with op one of ``= < > >= <=``.
Quantifier bodies extend as far right as possible.

Leaf expressions: a number in [0, 1], ``N / count(w:T | F)``,
``count(..) / count(..)``, products with ``*`` and ``clamp(EXPR)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path

from .logic import (And, Atom, CountCmp, Exists, Forall, Not, Or, TermEq, TermLt, Var)
from .model import (Clamp, Const, CountTerm, Diagnostic, Fopt, Interior, Leaf,
                    PredicateModel, Product, Rdbn, Ratio, check_model)
from .relational import Ordering, PredicateSignature, Vocabulary, VocabularyError

__all__ = ["ModelSyntaxError", "parse_model", "load_model", "format_model"]


class ModelSyntaxError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


class _Error(Exception):
    def __init__(self, message, col=0):
        super().__init__(message)
        self.message = message
        self.col = col


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)
  | (?P<tlag>@t-1|@t)
  | (?P<op>>=|<=|!=|[(),:.=<>!&|*/\#;\-])
  | (?P<id>[A-Za-z_][A-Za-z0-9_\-']*)
""", re.VERBOSE)


def _tokenize(text: str, col0: int):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise _Error(f"unexpected character {text[pos]!r}", col0 + pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), col0 + pos + 1))
        pos = m.end()
    toks.append(("eof", "", col0 + len(text) + 1))
    return toks


class _Parser:
    """Recursive-descent parser for one formula or expression line."""

    def __init__(self, toks, vocab: Vocabulary, scope: dict):
        self.toks = toks
        self.i = 0
        self.vocab = vocab
        self.scope = dict(scope)  # variable -> type

    def peek(self, k=0):
        return self.toks[self.i + k]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.next()
        if tok[1] != value:
            raise _Error(f"expected {value!r}, found {tok[1] or 'end of line'!r}", tok[2])
        return tok

    def ident(self):
        tok = self.next()
        if tok[0] != "id":
            raise _Error(f"expected a name, found {tok[1] or 'end of line'!r}", tok[2])
        return tok

    def at_end(self):
        return self.peek()[0] == "eof"

    # formulas
    def formula(self):
        tok = self.peek()
        if tok[1] in ("exists", "forall") or tok[1] == "#":
            return self.quantified()
        return self.disjunction()

    def quantified(self):
        tok = self.next()
        op = n = None
        if tok[1] == "#":
            self.expect("(")
            optok = self.next()
            if optok[1] not in ("=", "<", ">", ">=", "<="):
                raise _Error(f"bad count comparator {optok[1]!r}", optok[2])
            op = optok[1]
            ntok = self.next()
            if ntok[0] != "num" or not ntok[1].isdigit():
                raise _Error("count bound must be a non-negative integer", ntok[2])
            n = int(ntok[1])
            self.expect(")")
        var = self.ident()
        self.expect(":")
        typ = self.ident()
        if typ[1] not in self.vocab.constants:
            raise _Error(f"unknown type {typ[1]}", typ[2])
        self.expect(".")
        saved = self.scope.get(var[1])
        self.scope[var[1]] = typ[1]
        body = self.formula()
        if saved is None:
            del self.scope[var[1]]
        else:
            self.scope[var[1]] = saved
        if tok[1] == "exists":
            return Exists(var[1], typ[1], body)
        if tok[1] == "forall":
            return Forall(var[1], typ[1], body)
        return CountCmp(op, n, var[1], typ[1], body)

    def disjunction(self):
        items = [self.conjunction()]
        while self.peek()[1] == "|":
            self.next()
            items.append(self._operand(self.conjunction))
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conjunction(self):
        items = [self.unary()]
        while self.peek()[1] == "&":
            self.next()
            items.append(self._operand(self.unary))
        return items[0] if len(items) == 1 else And(tuple(items))

    def _operand(self, fallback):
        if self.peek()[1] in ("exists", "forall", "#"):
            return self.quantified()
        return fallback()

    def unary(self):
        tok = self.peek()
        if tok[1] == "!":
            self.next()
            if self.peek()[1] in ("exists", "forall", "#"):
                return Not(self.quantified())
            return Not(self.unary())
        if tok[1] == "(":
            self.next()
            f = self.formula()
            self.expect(")")
            return f
        if tok[0] == "id" and self.peek(1)[1] == "(":
            return self.atom()
        left = self.term()
        op = self.next()
        if op[1] not in ("=", "!=", "<"):
            raise _Error(f"expected a comparison, found {op[1] or 'end of line'!r}", op[2])
        right = self.term()
        self._same_type(left, right, op[2])
        if op[1] == "=":
            return TermEq(left[0], right[0])
        if op[1] == "!=":
            return Not(TermEq(left[0], right[0]))
        return TermLt(left[0], right[0])

    def _same_type(self, a, b, col):
        if a[1] != b[1]:
            raise _Error(f"type mismatch: comparing {a[1]} with {b[1]}", col)

    def term(self):
        tok = self.ident()
        name = tok[1]
        if name in self.scope:
            return Var(name), self.scope[name], tok[2]
        if name in self.vocab.constant_type:
            return name, self.vocab.constant_type[name], tok[2]
        raise _Error(f"unknown symbol {name}", tok[2])

    def atom(self):
        ptok = self.ident()
        if ptok[1] not in self.vocab.predicates:
            raise _Error(f"unknown predicate {ptok[1]}", ptok[2])
        sig = self.vocab.predicates[ptok[1]]
        self.expect("(")
        terms = []
        if self.peek()[1] != ")":
            terms.append(self.term())
            while self.peek()[1] == ",":
                self.next()
                terms.append(self.term())
        self.expect(")")
        if len(terms) != sig.arity:
            raise _Error(f"{sig.name} expects {sig.arity} arguments, got {len(terms)}", ptok[2])
        for (t, typ, col), want in zip(terms, sig.arg_types):
            if typ != want:
                raise _Error(f"type mismatch: {sig.name} expects {want}, got {t} of type {typ}", col)
        lag = 0
        if self.peek()[0] == "tlag":
            lag = 1 if self.next()[1] == "@t-1" else 0
        return Atom(sig.name, tuple(t for t, _, _ in terms), lag)

    # leaf expressions
    def expression(self):
        items = [self.factor()]
        while self.peek()[1] == "*":
            self.next()
            items.append(self.factor())
        return items[0] if len(items) == 1 else Product(tuple(items))

    def factor(self):
        tok = self.peek()
        if tok[1] == "clamp":
            self.next()
            self.expect("(")
            inner = self.expression()
            self.expect(")")
            return Clamp(inner)
        if tok[1] == "(":
            self.next()
            inner = self.expression()
            self.expect(")")
            return inner
        if tok[0] == "num":
            self.next()
            value = float(tok[1])
            if self.peek()[1] == "/":
                self.next()
                return Ratio(_int_if_whole(value), self.count())
            if not 0.0 <= value <= 1.0:
                raise _Error("probability out of range", tok[2])
            return Const(value)
        if tok[1] == "count":
            num = self.count()
            if self.peek()[1] == "/":
                self.next()
                return Ratio(num, self.count())
            raise _Error("a bare count is not a probability; divide it by a count", tok[2])
        raise _Error(f"expected an expression, found {tok[1] or 'end of line'!r}", tok[2])

    def count(self):
        tok = self.ident()
        if tok[1] != "count":
            raise _Error("expected count(...)", tok[2])
        self.expect("(")
        var = self.ident()
        self.expect(":")
        typ = self.ident()
        if typ[1] not in self.vocab.constants:
            raise _Error(f"unknown type {typ[1]}", typ[2])
        self.expect("|")
        saved = self.scope.get(var[1])
        self.scope[var[1]] = typ[1]
        body = self.formula()
        if saved is None:
            del self.scope[var[1]]
        else:
            self.scope[var[1]] = saved
        self.expect(")")
        return CountTerm(var[1], typ[1], body)


def _int_if_whole(x: float):
    return int(x) if float(x).is_integer() else x


@dataclass
class _Line:
    no: int
    indent: int
    text: str


def _lines(text: str):
    out = []
    for no, raw in enumerate(text.splitlines(), start=1):
        body = _remove_comment(raw).rstrip()
        if body.strip():
            out.append(_Line(no, len(body) - len(body.lstrip()), body.strip()))
    return out


def _remove_comment(raw: str) -> str:
    # '#' followed by '(' is the counting quantifier, anything else starts a comment
    for i, ch in enumerate(raw):
        if ch == "#" and not raw[i + 1:i + 2] == "(":
            return raw[:i]
    return raw


_PRED_DECL = re.compile(r"predicate\s+([A-Za-z_][\w\-']*)\s*\(([^)]*)\)\s*(.*)$")
_BLOCK = re.compile(r"(initial|transition)\s+([A-Za-z_][\w\-']*)\s*\(([^)]*)\)\s*$")


def parse_model(text: str, filename: str = "<model>") -> Rdbn:
    """Parse and validate a model; raises :class:`ModelSyntaxError`."""
    diags: list[Diagnostic] = []

    def err(msg, line, col=1, severity="error"):
        diags.append(Diagnostic(msg, severity, line, col, filename))

    lines = _lines(text)
    constants: dict[str, list[str]] = {}
    signatures: list[PredicateSignature] = []
    order = None
    order_line = 0
    blocks = []
    i = 0
    while i < len(lines):
        ln = lines[i]
        head = ln.text.split(None, 1)[0]
        if head == "type":
            m = re.match(r"type\s+([A-Za-z_]\w*)\s*:\s*(.*)$", ln.text)
            if not m:
                err("malformed type declaration", ln.no, ln.indent + 1)
            elif m.group(1) in constants:
                err(f"type {m.group(1)} declared twice", ln.no, ln.indent + 1)
            else:
                constants[m.group(1)] = m.group(2).replace(",", " ").split()
            i += 1
        elif head == "predicate":
            m = _PRED_DECL.match(ln.text)
            if not m:
                err("malformed predicate declaration", ln.no, ln.indent + 1)
            else:
                flags = m.group(3).split()
                bad = [f for f in flags if f not in
                       ("certain", "uncertain", "simple", "complex", "functional", "event")]
                if bad:
                    err(f"unknown predicate flag {bad[0]}", ln.no, ln.indent + 1)
                types = [t.strip() for t in m.group(2).split(",") if t.strip()]
                for t in types:
                    if t not in constants:
                        err(f"unknown symbol {t} (type)", ln.no, ln.indent + 1)
                try:
                    signatures.append(PredicateSignature(
                        m.group(1), tuple(types),
                        kind="complex" if "complex" in flags else "simple",
                        certain="certain" in flags,
                        functional="functional" in flags,
                        event="event" in flags))
                except VocabularyError as e:
                    err(str(e), ln.no, ln.indent + 1)
            i += 1
        elif head == "order":
            order = ln.text.split()[1:]
            order_line = ln.no
            i += 1
        elif head in ("initial", "transition"):
            j = i + 1
            while j < len(lines) and lines[j].text != "end":
                if _BLOCK.match(lines[j].text) and lines[j].indent == 0:
                    break
                j += 1
            if j >= len(lines) or lines[j].text != "end":
                err(f"{head} block is missing 'end'", ln.no, 1)
                blocks.append((ln, lines[i + 1:j]))
                i = j
            else:
                blocks.append((ln, lines[i + 1:j]))
                i = j + 1
        else:
            err(f"unexpected {head!r}", ln.no, ln.indent + 1)
            i += 1

    if not signatures:
        err("no predicates declared", 1, 1)
        raise ModelSyntaxError(diags)
    try:
        vocab = Vocabulary(constants, signatures)
    except VocabularyError as e:
        err(str(e), 1, 1)
        raise ModelSyntaxError(diags) from None

    warnings = []
    if order is None:
        order = list(vocab.predicates)
        warnings.append(Diagnostic("no order given; using declaration order",
                                   "warning", 1, 1, filename))
    try:
        ordering = Ordering.from_vocabulary(vocab, order)
    except VocabularyError as e:
        err(str(e), order_line, 1)
        raise ModelSyntaxError(diags) from None

    nets = {"initial": {}, "transition": {}}
    header_line = {}
    for header, body in blocks:
        try:
            pm = _parse_block(header, body, vocab)
        except _Error as e:
            err(e.message, getattr(e, "line", header.no), e.col or 1)
            continue
        net = nets[header.text.split()[0]]
        if pm.predicate in net:
            err(f"second {header.text.split()[0]} model for {pm.predicate}", header.no, 1)
            continue
        net[pm.predicate] = pm
        header_line.setdefault(pm.predicate, header.no)

    if any(d.severity == "error" for d in diags):
        raise ModelSyntaxError(diags)
    model = Rdbn(vocab, ordering, nets["initial"], nets["transition"])
    for d in check_model(model):
        line = next((header_line[p] for p in re.findall(r"[\w\-']+", d.message)
                     if p in header_line), 1)
        d = replace(d, file=filename, line=line, col=1)
        (diags if d.severity == "error" else warnings).append(d)
    if any(d.severity == "error" for d in diags):
        raise ModelSyntaxError(diags + warnings)
    model.warnings = warnings
    return model


def _parse_block(header: _Line, body: list[_Line], vocab: Vocabulary) -> PredicateModel:
    m = _BLOCK.match(header.text)
    if not m:
        raise _Error("malformed model header", 1)
    net, pred = m.group(1), m.group(2)
    if pred not in vocab.predicates:
        _raise_at(header.no, f"unknown predicate {pred}", 1)
    sig = vocab.predicates[pred]
    params = tuple(p.strip() for p in m.group(3).split(",") if p.strip())
    if len(params) != sig.arity:
        _raise_at(header.no, f"{pred} expects {sig.arity} arguments, got {len(params)}", 1)
    scope = dict(zip(params, sig.arg_types))
    parents = []
    k = 0
    if body and body[0].text.startswith("parents"):
        for item in body[0].text[len("parents"):].split(","):
            item = item.strip()
            if not item:
                continue
            name, _, lag = item.partition("@")
            if name not in vocab.predicates:
                _raise_at(body[0].no, f"unknown predicate {name}", body[0].indent + 1)
            if lag not in ("", "t", "t-1"):
                _raise_at(body[0].no, f"bad slice {lag!r}", body[0].indent + 1)
            parents.append((name, 1 if lag == "t-1" else 0))
        k = 1
    nodes = body[k:]
    if not nodes:
        _raise_at(header.no, f"{pred}: empty tree", 1)
    root, used = _parse_node(nodes, 0, vocab, scope)
    if used != len(nodes):
        extra = nodes[used]
        _raise_at(extra.no, "unexpected line after complete tree", extra.indent + 1)
    return PredicateModel(pred, params, tuple(parents), Fopt(root))


def _raise_at(line, message, col):
    e = _Error(message, col)
    e.line = line
    raise e


def _parse_node(nodes, i, vocab, scope):
    ln = nodes[i]
    try:
        if ln.text.startswith("leaf"):
            p = _Parser(_tokenize(ln.text[4:], ln.indent + 4), vocab, scope)
            expr = p.expression()
            if not p.at_end():
                raise _Error(f"unexpected {p.peek()[1]!r}", p.peek()[2])
            return Leaf(expr), i + 1
        if ln.text.startswith("if"):
            text, _, bind_text = ln.text[2:].partition(";")
            p = _Parser(_tokenize(text, ln.indent + 2), vocab, scope)
            formula = p.formula()
            if not p.at_end():
                raise _Error(f"unexpected {p.peek()[1]!r}", p.peek()[2])
            binds = ()
            inner_scope = dict(scope)
            if bind_text.strip():
                bt = bind_text.strip()
                if not bt.startswith("bind"):
                    raise _Error("expected 'bind' after ';'", ln.indent + 1)
                binds = tuple(v.strip() for v in bt[4:].split(",") if v.strip())
                chain = {}
                f = formula
                while isinstance(f, Exists):
                    chain[f.var] = f.type
                    f = f.body
                for v in binds:
                    if v not in chain:
                        raise _Error(f"bind {v}: not a leading existential variable", ln.indent + 1)
                    inner_scope[v] = chain[v]
        else:
            raise _Error(f"expected 'if' or 'leaf', found {ln.text.split()[0]!r}", ln.indent + 1)
    except _Error as e:
        if not hasattr(e, "line"):
            e.line = ln.no
        raise
    j = i + 1
    if j >= len(nodes) or nodes[j].indent <= ln.indent:
        _raise_at(ln.no, "'if' without a true branch", ln.indent + 1)
    if_true, j = _parse_node(nodes, j, vocab, inner_scope)
    if j >= len(nodes) or nodes[j].text != "else" or nodes[j].indent != ln.indent:
        _raise_at(nodes[j].no if j < len(nodes) else ln.no,
                  "expected 'else' aligned with its 'if'", ln.indent + 1)
    j += 1
    if j >= len(nodes) or nodes[j].indent <= ln.indent:
        _raise_at(ln.no, "'else' without a false branch", ln.indent + 1)
    if_false, j = _parse_node(nodes, j, vocab, scope)
    return Interior(formula, if_true, if_false, binds), j


def load_model(path) -> Rdbn:
    path = Path(path)
    return parse_model(path.read_text(encoding="utf-8"), str(path))


# -- printing -----------------------------------------------------------------

def _fmt_term(t):
    return t.name if isinstance(t, Var) else t


def _fmt_formula(f, top=True) -> str:
    if isinstance(f, Atom):
        s = f"{f.pred}({', '.join(_fmt_term(t) for t in f.terms)})"
        return s + ("@t-1" if f.lag else "")
    if isinstance(f, TermEq):
        return f"{_fmt_term(f.left)} = {_fmt_term(f.right)}"
    if isinstance(f, TermLt):
        return f"{_fmt_term(f.left)} < {_fmt_term(f.right)}"
    if isinstance(f, Not):
        if isinstance(f.body, TermEq):
            return f"{_fmt_term(f.body.left)} != {_fmt_term(f.body.right)}"
        return "!" + _wrap(f.body)
    if isinstance(f, And):
        return " & ".join(_wrap(g) for g in f.items)
    if isinstance(f, Or):
        return " | ".join(_wrap(g) for g in f.items)
    if isinstance(f, Exists):
        return f"exists {f.var}:{f.type}. {_fmt_formula(f.body)}"
    if isinstance(f, Forall):
        return f"forall {f.var}:{f.type}. {_fmt_formula(f.body)}"
    if isinstance(f, CountCmp):
        return f"#({f.op} {f.n}) {f.var}:{f.type}. {_fmt_formula(f.body)}"
    raise TypeError(f)


def _wrap(f) -> str:
    if isinstance(f, (Atom, TermEq, TermLt)):
        return _fmt_formula(f)
    if isinstance(f, Not) and not isinstance(f.body, TermEq):
        return _fmt_formula(f)
    if isinstance(f, Not):
        return "(" + _fmt_formula(f) + ")"
    return "(" + _fmt_formula(f) + ")"


def _fmt_number(x) -> str:
    return repr(float(x)) if not isinstance(x, int) else str(x)


def _fmt_expr(e) -> str:
    if isinstance(e, Const):
        return repr(float(e.p))
    if isinstance(e, CountTerm):
        return f"count({e.var}:{e.type} | {_fmt_formula(e.formula)})"
    if isinstance(e, Ratio):
        num = _fmt_expr(e.numerator) if isinstance(e.numerator, CountTerm) else _fmt_number(e.numerator)
        return f"{num} / {_fmt_expr(e.denominator)}"
    if isinstance(e, Product):
        return " * ".join(_fmt_expr(x) if not isinstance(x, Product) else f"({_fmt_expr(x)})"
                          for x in e.items)
    if isinstance(e, Clamp):
        return f"clamp({_fmt_expr(e.inner)})"
    raise TypeError(e)


def _fmt_node(node, indent, out):
    pad = "  " * indent
    if isinstance(node, Leaf):
        out.append(f"{pad}leaf {_fmt_expr(node.expr)}")
        return
    bind = f" ; bind {', '.join(node.binds)}" if node.binds else ""
    out.append(f"{pad}if {_fmt_formula(node.formula)}{bind}")
    _fmt_node(node.if_true, indent + 1, out)
    out.append(f"{pad}else")
    _fmt_node(node.if_false, indent + 1, out)


def format_model(model: Rdbn) -> str:
    """Render ``model`` in the text format; :func:`parse_model` inverts it."""
    vocab = model.vocabulary
    out = []
    for typ, consts in vocab.constants.items():
        out.append(f"type {typ}: {' '.join(consts)}")
    out.append("")
    for sig in vocab.predicates.values():
        flags = ["certain" if sig.certain else "uncertain", sig.kind]
        if sig.functional:
            flags.append("functional")
        if sig.event:
            flags.append("event")
        out.append(f"predicate {sig.name}({', '.join(sig.arg_types)}) {' '.join(flags)}")
    out.append("order " + " ".join(model.ordering.predicate_order))
    for net_name, net in (("initial", model.initial), ("transition", model.transition)):
        for pred in model.ordering.predicate_order:
            if pred not in net:
                continue
            pm = net[pred]
            out.append("")
            out.append(f"{net_name} {pred}({', '.join(pm.params)})")
            if pm.parents:
                out.append("  parents " + ", ".join(
                    f"{p}@t-1" if lag else p for p, lag in pm.parents))
            _fmt_node(pm.fopt.root, 1, out)
            out.append("end")
    return "\n".join(out) + "\n"
