"""Observable dictionaries: the lifting ``x -> gamma(x)`` used by EDMD.

State references inside observable specs are 1-based (``x1 .. xn``), matching
how dictionaries are written in config files; all array indices returned by
this module are 0-based.
"""
import ast
from dataclasses import dataclass, field
import operator
import re

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateName,
    InvalidObservable,
    MissingIdentity,
    NonFiniteValue,
)

__all__ = [
    "ObservableSpec",
    "ObservableDictionary",
    "build_dictionary",
    "lift",
    "recovery_matrix",
    "parse_observable",
    "dictionary_from_strings",
    "dictionary_from_json",
    "identity_dictionary",
    "canonical_dictionary",
    "swing_dictionary",
    "DICTIONARY_PRESETS",
]

KINDS = ("identity", "monomial", "sine", "cosine", "custom")


@dataclass(frozen=True)
class ObservableSpec:
    """One scalar observable.

    ``args`` depends on ``kind``: ``(i,)`` for identity/sine/cosine, a tuple of
    n exponents for monomial, ``(expression,)`` for custom.
    """

    kind: str
    args: tuple
    name: str = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidObservable(f"unknown observable kind {self.kind!r}")
        object.__setattr__(self, "args", tuple(self.args))
        if self.name is None:
            object.__setattr__(self, "name", self._default_name())

    @classmethod
    def identity(cls, i, name=None):
        return cls("identity", (i,), name)

    @classmethod
    def monomial(cls, exponents, name=None):
        return cls("monomial", tuple(exponents), name)

    @classmethod
    def sine(cls, i, name=None):
        return cls("sine", (i,), name)

    @classmethod
    def cosine(cls, i, name=None):
        return cls("cosine", (i,), name)

    @classmethod
    def custom(cls, expression, name=None):
        return cls("custom", (expression,), name)

    def _default_name(self):
        k, a = self.kind, self.args
        if k == "identity":
            return f"x{a[0]}"
        if k == "sine":
            return f"sin(x{a[0]})"
        if k == "cosine":
            return f"cos(x{a[0]})"
        if k == "monomial":
            parts = []
            for i, e in enumerate(a, start=1):
                if e == 1:
                    parts.append(f"x{i}")
                elif e:
                    parts.append(f"x{i}^{e}")
            return "*".join(parts) or "1"
        return str(a[0]).replace(" ", "")

    def to_json(self):
        return {"kind": self.kind, "args": list(self.args), "name": self.name}


# -- custom expressions -------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_STATE = re.compile(r"x(\d+)$")


def _compile_expression(text, n):
    """Compile an arithmetic expression over x1..xn into ``f(X) -> row``."""
    try:
        tree = ast.parse(str(text).replace("^", "**"), mode="eval").body
    except SyntaxError as exc:
        raise InvalidObservable(f"cannot parse {text!r}: {exc.msg}") from None

    def build(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            c = float(node.value)
            return lambda X: np.full(X.shape[1], c)
        if isinstance(node, ast.Name):
            m = _STATE.match(node.id)
            if not m or not 1 <= int(m.group(1)) <= n:
                raise InvalidObservable(f"{node.id!r} is not a state of x1..x{n}")
            i = int(m.group(1)) - 1
            return lambda X: X[i]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, lhs, rhs = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda X: op(lhs(X), rhs(X))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            arg = build(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda X: -arg(X)
            return arg
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS
            and len(node.args) == 1
            and not node.keywords
        ):
            fn, arg = _FUNCS[node.func.id], build(node.args[0])
            return lambda X: fn(arg(X))
        raise InvalidObservable(f"unsupported syntax in {text!r}: {ast.dump(node)[:40]}")

    return build(tree)


def _compile(spec, n):
    def state_index(i):
        if isinstance(i, bool) or int(i) != i or not 1 <= i <= n:
            raise InvalidObservable(f"{spec.name}: state index {i} outside 1..{n}")
        return int(i) - 1

    if spec.kind in ("identity", "sine", "cosine"):
        if len(spec.args) != 1:
            raise InvalidObservable(f"{spec.name}: expected one state index")
        i = state_index(spec.args[0])
        if spec.kind == "identity":
            return lambda X: X[i]
        fn = np.sin if spec.kind == "sine" else np.cos
        return lambda X: fn(X[i])
    if spec.kind == "monomial":
        exps = spec.args
        if len(exps) != n:
            raise InvalidObservable(f"{spec.name}: need {n} exponents, got {len(exps)}")
        if any(isinstance(e, bool) or int(e) != e or e < 0 for e in exps):
            raise InvalidObservable(f"{spec.name}: exponents must be non-negative integers")
        if sum(exps) < 1:
            raise InvalidObservable(f"{spec.name}: total degree must be at least 1")
        terms = [(i, int(e)) for i, e in enumerate(exps) if e]

        def mono(X):
            out = X[terms[0][0]] ** terms[0][1]
            for i, e in terms[1:]:
                out = out * X[i] ** e
            return out

        return mono
    return _compile_expression(spec.args[0], n)


@dataclass(frozen=True)
class ObservableDictionary:
    """Ordered, validated list of observables over an n-dimensional state."""

    entries: tuple
    n: int
    _funcs: tuple = field(repr=False, compare=False, default=())

    @property
    def q(self):
        return len(self.entries)

    @property
    def names(self):
        return [e.name for e in self.entries]

    @property
    def identity_indices(self):
        """Observable index holding state i, for i = 0..n-1."""
        idx = [0] * self.n
        for j, e in enumerate(self.entries):
            if e.kind == "identity":
                idx[int(e.args[0]) - 1] = j
        return np.array(idx)

    @property
    def state_names(self):
        return [self.entries[j].name for j in self.identity_indices]

    def __call__(self, X):
        return lift(self, X)

    def to_json(self):
        return {"n": self.n, "observables": [e.to_json() for e in self.entries]}


def build_dictionary(spec, n):
    """Validate ``spec`` and compile it into an :class:`ObservableDictionary`.

    Raises
    ------
    MissingIdentity
        If some state has no identity observable (or has more than one).
    DuplicateName
        If two observables share a name.
    """
    n = int(n)
    if n < 1:
        raise InvalidObservable("state dimension must be positive")
    entries = tuple(s if isinstance(s, ObservableSpec) else ObservableSpec(**s) for s in spec)
    seen = set()
    for e in entries:
        if e.name in seen:
            raise DuplicateName(f"observable name {e.name!r} used twice")
        seen.add(e.name)
    funcs = tuple(_compile(e, n) for e in entries)
    counts = np.zeros(n, dtype=int)
    for e in entries:
        if e.kind == "identity":
            counts[int(e.args[0]) - 1] += 1
    for i, c in enumerate(counts, start=1):
        if c != 1:
            raise MissingIdentity(i)
    return ObservableDictionary(entries, n, funcs)


def lift(dictionary, X):
    """Evaluate the dictionary column-wise: ``(n, m) -> (q, m)``.

    A 1-D state vector is lifted to a length-q vector.
    """
    X = np.asarray(X, dtype=float)
    vector = X.ndim == 1
    if vector:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != dictionary.n:
        raise DimensionMismatch(
            f"expected {dictionary.n} state rows, got array of shape {np.shape(X)}"
        )
    G = np.empty((dictionary.q, X.shape[1]))
    with np.errstate(all="ignore"):
        for j, f in enumerate(dictionary._funcs):
            G[j] = f(X)
    if not np.all(np.isfinite(G)):
        rows = np.flatnonzero(~np.all(np.isfinite(G), axis=1))
        names = [dictionary.entries[r].name for r in rows]
        raise NonFiniteValue(f"non-finite values in lifted observables {names}")
    return G[:, 0] if vector else G


def recovery_matrix(dictionary):
    """Selection matrix B (n x q) with ``x = B gamma(x)``."""
    B = np.zeros((dictionary.n, dictionary.q))
    B[np.arange(dictionary.n), dictionary.identity_indices] = 1.0
    return B


# -- convenience constructors -------------------------------------------------

_SIMPLE = re.compile(r"^(?:(sin|cos)\(\s*x(\d+)\s*\)|x(\d+))$")
_MONO_FACTOR = re.compile(r"^x(\d+)(?:\^(\d+))?$")


def parse_observable(text, n, name=None):
    """Turn an expression such as ``"x2^2"`` or ``"sin(x1)"`` into a spec.

    Plain state references, ``sin(xi)``, ``cos(xi)`` and products of integer
    powers are recognised as their dedicated kinds; anything else becomes a
    custom expression.
    """
    s = str(text).strip()
    m = _SIMPLE.match(s)
    if m:
        i = int(m.group(2) or m.group(3))
        kind = {"sin": "sine", "cos": "cosine", None: "identity"}[m.group(1)]
        return ObservableSpec(kind, (i,), name)
    factors = [f.strip() for f in s.replace("**", "^").split("*")]
    if all(_MONO_FACTOR.match(f) for f in factors):
        exps = [0] * n
        ok = True
        for f in factors:
            i, e = _MONO_FACTOR.match(f).groups()
            i = int(i)
            if not 1 <= i <= n:
                ok = False
                break
            exps[i - 1] += int(e or 1)
        if ok and sum(exps) >= 1:
            return ObservableSpec("monomial", tuple(exps), name or s.replace("**", "^"))
    return ObservableSpec("custom", (s,), name)


def dictionary_from_strings(expressions, n):
    return build_dictionary([parse_observable(e, n) for e in expressions], n)


def dictionary_from_json(doc):
    """Build from ``{"n": ..., "observables": [{"kind", "args", "name"}, ...]}``.

    Entries may also be bare expression strings.
    """
    try:
        n = int(doc["n"])
        items = doc["observables"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidObservable(f"malformed dictionary document: {exc}") from None
    specs = []
    for item in items:
        if isinstance(item, str):
            specs.append(parse_observable(item, n))
        else:
            specs.append(ObservableSpec(item["kind"], tuple(item.get("args", ())), item.get("name")))
    return build_dictionary(specs, n)


def identity_dictionary(n, names=None):
    names = names or [f"x{i}" for i in range(1, n + 1)]
    return build_dictionary([ObservableSpec.identity(i, nm) for i, nm in enumerate(names, 1)], n)


def canonical_dictionary():
    """``[x1, x2, x2^2]``, the exact lift of the canonical two-state system."""
    return dictionary_from_strings(["x1", "x2", "x2^2"], 2)


def swing_dictionary(machines):
    """``[delta, omega, sin(delta), cos(delta)]`` for a swing model.

    States are ordered ``delta_1..delta_N, omega_1..omega_N``.
    """
    N = int(machines)
    specs = [ObservableSpec.identity(i, f"d{i}") for i in range(1, N + 1)]
    specs += [ObservableSpec.identity(N + i, f"w{i}") for i in range(1, N + 1)]
    specs += [ObservableSpec.sine(i, f"sin(d{i})") for i in range(1, N + 1)]
    specs += [ObservableSpec.cosine(i, f"cos(d{i})") for i in range(1, N + 1)]
    return build_dictionary(specs, 2 * N)


DICTIONARY_PRESETS = {
    "identity": identity_dictionary,
    "canonical": lambda n=2: canonical_dictionary(),
    "swing": lambda n: swing_dictionary(n // 2),
}
