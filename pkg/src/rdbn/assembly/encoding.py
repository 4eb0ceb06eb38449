"""Declarative ``.rdbn`` encoding of the assembly fault model.

The procedural fault operations are rewritten as FOPTs over latent
predicates sampled earlier in the slice order:

* ``PBranch(b)`` picks the propositional outcome (intended / unchanged /
  wrong value);
* ``RBranch(r)`` picks the relational outcome;
* ``Cls1``/``Cls2`` pick the similarity class of a replacement object and
  ``Pick1``/``Pick2`` the object within it.

Categorical choices are encoded as sequential conditionals along the
constant order, e.g. ``1 / count(w | candidate(w) & !(w < v))`` draws a
uniform member.  The encoding is generated for a concrete object inventory
so that it can be checked against the procedural simulator.
"""

from __future__ import annotations

from ..language import parse_model
from ..model import Rdbn
from .domain import APPLICABLE, ATTRIBUTES, CLASS_WEIGHTS, PROP_ACTIONS, AssemblyDomain

__all__ = ["assembly_model_source", "assembly_model", "ACTION_PREDICATES"]

# attribute -> event predicate setting it
ACTION_PREDICATES = {"Shape": "LatheShape", "Size": "LatheSize", "Color": "Paint",
                     "Surface": "Polish", "Temperature": "Heat", "HoleType": "Punch"}
assert set(ACTION_PREDICATES) == {a for attrs in PROP_ACTIONS.values() for a in attrs}

PBRANCH = ("pok", "pskip", "pwrong")
RBRANCH = ("rok", "rskip", "rwrong1", "rwrong2", "rboth")
CLASSES = ("cboth", "ca", "cb", "call")
# relational fault branches (skip, wrong first, wrong second, both wrong) as fractions of p_f
RBRANCH_FRACTIONS = (0.05, 0.45, 0.45, 0.05)


def _fmt(x: float) -> str:
    return repr(float(x)) if x not in (0, 1) else str(int(x))


def _same(attr: str, o: str, p: str) -> str:
    return f"(exists sw:{attr.lower()}. {attr}({o}, sw)@t-1 & {attr}({p}, sw)@t-1)"


def _class_formula(pos: int, cls: str, o: str) -> str:
    """``o`` is a candidate replacement for action argument ``pos`` in class ``cls``."""
    parts = []
    for act, sims in (("Weld", {1: ("Color", "Shape"), 2: ("Color", "Shape")}),
                      ("BoltAct", {1: ("Size", "Size"), 2: ("Color", "Surface")})):
        tgt = "ca1" if pos == 1 else "ca2"
        if pos == 1:
            kind = "IsPlate(%s)" % o if act == "Weld" else "IsBolt(%s)" % o
        else:
            kind = f"(IsPlate({o}) | IsBracket({o}))"
        a1, a2 = sims[pos]
        cond = {"cboth": f" & {_same(a1, o, tgt)} & {_same(a2, o, tgt)}",
                "ca": f" & {_same(a1, o, tgt)}", "cb": f" & {_same(a2, o, tgt)}",
                "call": ""}[cls]
        parts.append(f"(exists ca1:obj. exists ca2:obj. {act}(ca1, ca2) & {kind} "
                     f"& {o} != ca1 & {o} != ca2{cond})")
    return "(" + " | ".join(parts) + ")"


def _tree(lines, depth, node):
    """Render a nested ``(formula, true, false)`` / leaf-string structure."""
    pad = "  " * depth
    if isinstance(node, str):
        lines.append(f"{pad}leaf {node}")
        return
    f, yes, no = node
    lines.append(f"{pad}if {f}")
    _tree(lines, depth + 1, yes)
    lines.append(f"{pad}else")
    _tree(lines, depth + 1, no)


def _block(lines, header, parents, node):
    lines.append(header)
    if parents:
        lines.append("  parents " + ", ".join(parents))
    _tree(lines, 1, node)
    lines.append("end")
    lines.append("")


def _sequential(names, probs, var):
    """Tree drawing ``var`` from ``names`` with the given probabilities."""
    rest = 1.0
    node = "1"
    chain = []
    for name, p in zip(names[:-1], probs[:-1]):
        q = 0.0 if rest <= 0 else min(1.0, p / rest)
        chain.append((name, q))
        rest -= p
    for name, q in reversed(chain):
        node = (f"{var} = {name}", _fmt(q), node)
    return node


def assembly_model_source(domain: AssemblyDomain, p_f: float, kappa: int | None = None) -> str:
    """Model text for ``domain`` with fault probability ``p_f``."""
    kappa = domain.cfg.kappa if kappa is None else kappa
    out = ["# assembly fault model (generated)"]
    out.append("type obj: " + " ".join(domain.names))
    for a in ATTRIBUTES:
        out.append(f"type {a.lower()}: " + " ".join(domain.values[a]))
    out.append("type branch: " + " ".join(PBRANCH))
    out.append("type rbranch: " + " ".join(RBRANCH))
    out.append("type cls: " + " ".join(CLASSES))
    out.append("")
    order = []

    def pred(decl, name):
        out.append("predicate " + decl)
        order.append(name)

    for k in ("IsPlate", "IsBracket", "IsBolt"):
        pred(f"{k}(obj) certain", k)
    for attr, act in ACTION_PREDICATES.items():
        pred(f"{act}(obj, {attr.lower()}) certain event", act)
    pred("Weld(obj, obj) certain event", "Weld")
    pred("BoltAct(obj, obj) certain event", "BoltAct")
    pred("PBranch(branch) uncertain", "PBranch")
    pred("RBranch(rbranch) uncertain", "RBranch")
    for k in ("Cls1", "Cls2"):
        pred(f"{k}(cls) uncertain", k)
    for k in ("Pick1", "Pick2"):
        pred(f"{k}(obj) uncertain", k)
    for a in ATTRIBUTES:
        pred(f"{a}(obj, {a.lower()}) uncertain functional", a)
    pred("WeldedTo(obj, obj) uncertain complex", "WeldedTo")
    pred("BoltedTo(obj, obj) uncertain complex", "BoltedTo")
    out.append("order " + " ".join(order))
    out.append("")

    any_prop = "(" + " | ".join(f"(exists w:{a.lower()}. exists o:obj. {act}(o, w))"
                                for a, act in ACTION_PREDICATES.items()) + ")"
    any_rel = "(exists o:obj. exists p:obj. Weld(o, p) | BoltAct(o, p))"
    latents = [("PBranch", "b", "branch"), ("RBranch", "r", "rbranch"),
               ("Cls1", "c", "cls"), ("Cls2", "c", "cls"), ("Pick1", "o", "obj"), ("Pick2", "o", "obj")]
    for name, var, typ in latents:
        _block(out, f"initial {name}({var})", [], "0")

    # initial attributes: uniform over values for applicable kinds
    for a in ATTRIBUTES:
        t = a.lower()
        kinds = [k for k in ("plate", "bracket", "bolt") if a in APPLICABLE[k]]
        isk = " | ".join(f"Is{k.capitalize()}(x)" for k in kinds)
        node = (f"exists w:{t}. {a}(x, w)", "0",
                (f"!({isk})", "0", f"1 / count(w:{t} | !(w < v))"))
        _block(out, f"initial {a}(x, v)", [a, "IsPlate", "IsBracket", "IsBolt"], node)
    for r in ("WeldedTo", "BoltedTo"):
        _block(out, f"initial {r}(x, y)", [], "0")

    prop_parents = list(ACTION_PREDICATES.values())
    node = ("exists c:branch. PBranch(c)", "0",
            (any_prop, _sequential(PBRANCH, (1 - p_f, p_f / 2, p_f / 2), "b"), "0"))
    _block(out, "transition PBranch(b)", ["PBranch"] + prop_parents, node)

    rprobs = (1 - p_f,) + tuple(p_f * f for f in RBRANCH_FRACTIONS)
    node = ("exists c:rbranch. RBranch(c)", "0",
            (any_rel, _sequential(RBRANCH, rprobs, "r"), "0"))
    _block(out, "transition RBranch(r)", ["RBranch", "Weld", "BoltAct"], node)

    sim_parents = ["IsPlate", "IsBracket", "IsBolt", "Weld", "BoltAct", "RBranch",
                   "Color@t-1", "Shape@t-1", "Size@t-1", "Surface@t-1"]
    for pos in (1, 2):
        cls_pred, pick_pred = f"Cls{pos}", f"Pick{pos}"
        active = f"(RBranch(rwrong{pos}) | RBranch(rboth))"
        flags = {c: f"(exists e:obj. {_class_formula(pos, c, 'e')})" for c in ("cboth", "ca", "cb")}
        # nested tests over which classes are nonempty; "call" is always nonempty here

        def by_flags(i, present):
            if i == 3:
                w = [CLASS_WEIGHTS[k] * (present[k] if k < 3 else 1) for k in range(4)]
                total = sum(w)
                return _sequential(CLASSES, [x / total for x in w], "c")
            c = ("cboth", "ca", "cb")[i]
            return (flags[c], by_flags(i + 1, present + [1]), by_flags(i + 1, present + [0]))

        node = (f"exists d:cls. {cls_pred}(d)", "0", (f"!{active}", "0", by_flags(0, [])))
        _block(out, f"transition {cls_pred}(c)", [cls_pred] + sim_parents, node)

        chain = "0"
        for c in reversed(CLASSES):
            member = _class_formula(pos, c, "o")
            count = f"1 / count(w:obj | {_class_formula(pos, c, 'w')} & !(w < o))"
            chain = (f"{cls_pred}({c})", (member, count, "0"), chain)
        node = (f"exists q:obj. {pick_pred}(q)", "0", (f"!{active}", "0", chain))
        _block(out, f"transition {pick_pred}(o)", [pick_pred, cls_pred] + sim_parents, node)

    for a in ATTRIBUTES:
        t = a.lower()
        act = ACTION_PREDICATES.get(a)
        persist = (f"{a}(x, v)@t-1", "1", "0")
        if act is None:
            node = (f"exists w:{t}. {a}(x, w)", "0", persist)
            _block(out, f"transition {a}(x, v)", [a, f"{a}@t-1"], node)
            continue
        wrong = (f"{act}(x, v)", "0", f"1 / count(w:{t} | !{act}(x, w) & !(w < v))")
        acted = ("PBranch(pok)", (f"{act}(x, v)", "1", "0"),
                 ("PBranch(pskip)", persist, wrong))
        node = (f"exists w:{t}. {a}(x, w)", "0",
                (f"exists w:{t}. {act}(x, w)", acted, persist))
        _block(out, f"transition {a}(x, v)", [a, f"{a}@t-1", act, "PBranch"], node)

    # Bolt(bolt, part) creates BoltedTo(part, bolt): action arguments swap
    for rel, act, (a1, a2) in (("WeldedTo", "Weld", ("x", "y")), ("BoltedTo", "BoltAct", ("y", "x"))):
        intended = f"{act}({a1}, {a2})"
        wrong1 = f"Pick1({a1}) & exists z:obj. {act}(z, {a2})"
        wrong2 = f"Pick2({a2}) & exists z:obj. {act}({a1}, z)"
        both = f"Pick1({a1}) & Pick2({a2}) & x != y"
        branches = ("RBranch(rok)", (intended, "1", "0"),
                    ("RBranch(rwrong1)", (wrong1, "1", "0"),
                     ("RBranch(rwrong2)", (wrong2, "1", "0"),
                      ("RBranch(rboth)", (both, "1", "0"), "0"))))
        node = (f"{rel}(x, y)@t-1", "1",
                (f"!(exists z:obj. exists z2:obj. {act}(z, z2))", "0",
                 (f"#(>= {kappa}) z:obj. {rel}(x, z)@t-1", "0", branches)))
        _block(out, f"transition {rel}(x, y)",
               [f"{rel}@t-1", act, "RBranch", "Pick1", "Pick2"], node)
    return "\n".join(out)


def assembly_model(domain: AssemblyDomain, p_f: float, kappa: int | None = None) -> Rdbn:
    return parse_model(assembly_model_source(domain, p_f, kappa), "<assembly>")
