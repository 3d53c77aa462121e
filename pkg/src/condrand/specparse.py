#!/usr/bin/env python3

"""``--statistic`` / ``--balance`` の小さな記法の字句解析と再帰下降構文解析。

    t_sd | t_ps(x) | t_res(x) | ols(x) | kruskal_wallis[(raw)] | mean_rank(a, b)
    none | strata(x[, x2...]) | contingency(x1, x2...) | marginal(x1, x2...) | cluster(label)

列名は空白や記号を含む場合 "..." または '...' で囲みます。
"""

import ast
import re

from .balance import BalanceFunctionSpec
from .errors import UsageError
from .stats import StatisticSpec

_RE_WHITESPACE = re.compile(r"\s+")
_RE_STRING_LITERAL = re.compile(r"\"(?:\\.|[^\"\\])*\"|'(?:\\.|[^'\\])*'")
_RE_PLACEHOLDER = re.compile(r"__STRING_LITERAL_(\d+)__")
_RE_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$|^-?\d+$")


def tokenize(src):
    """記法の文字列をトークンリストに変換します。

    トークンリスト例 : ``strata(x1, "age group")`` → ['strata', '(', 'x1', ',', '"age group"', ')']
    """
    strings = []

    def string_replacer(match):
        strings.append(match.group(0))
        return f" __STRING_LITERAL_{len(strings) - 1}__ "

    replaced = _RE_STRING_LITERAL.sub(string_replacer, src)
    for p in "(),":
        replaced = replaced.replace(p, f" {p} ")
    tokens = []
    for token in _RE_WHITESPACE.split(replaced):
        if not token:
            continue
        m = _RE_PLACEHOLDER.fullmatch(token)
        tokens.append(strings[int(m.group(1))] if m else token)
    return tokens


class SpecParser:
    """``name`` または ``name(arg, ...)`` の形を解析します。"""

    def __init__(self, text):
        self.text = text
        self.tokens = tokenize(text)
        self.idx = 0

    def peek(self):
        """次のトークンを消費せずに返します。"""
        return self.tokens[self.idx] if self.idx < len(self.tokens) else None

    def consume(self):
        """次のトークンを消費して返します。"""
        token = self.peek()
        self.idx += 1
        return token

    def parse_atom(self):
        """名前または引用符付き文字列を解析します。"""
        token = self.consume()
        if token is None:
            raise UsageError(f"Unexpected end of '{self.text}'")
        if token in ("(", ")", ","):
            raise UsageError(f"Unexpected '{token}' in '{self.text}'")
        if token[0] in "'\"":
            try:
                return ast.literal_eval(token)
            except (ValueError, SyntaxError) as e:
                raise UsageError(f"Invalid quoted name {token} in '{self.text}'") from e
        if not _RE_NAME.match(token):
            raise UsageError(f"Invalid name '{token}' in '{self.text}'")
        return token

    def parse_args(self):
        """括弧内のカンマ区切りの引数を解析します。"""
        args = []
        if self.peek() == ")":
            self.consume()
            return args
        while True:
            args.append(self.parse_atom())
            token = self.consume()
            if token == ")":
                return args
            if token != ",":
                raise UsageError(f"Expected ',' or ')' in '{self.text}'")

    def parse(self):
        """(名前, 引数リスト) を返します。"""
        if not self.tokens:
            raise UsageError("Empty expression")
        name = self.parse_atom().lower()
        args = []
        if self.peek() == "(":
            self.consume()
            args = self.parse_args()
        if self.idx != len(self.tokens):
            raise UsageError(f"Invalid syntax near '{self.peek()}' in '{self.text}'")
        return name, args


def _arm(token, arm_levels):
    try:
        return int(token)
    except ValueError:
        pass
    if arm_levels is not None and token in arm_levels:
        return list(arm_levels).index(token)
    raise UsageError(f"Unknown arm '{token}' (available: {', '.join(arm_levels or [])})")


def parse_statistic(text, arm_levels=None):
    """``--statistic`` の記法から StatisticSpec を作ります。

    Args:
        text (str): 記法の文字列。
        arm_levels (sequence[str] | None): mean_rank の腕をラベルで指定する場合の水準一覧。
    """
    name, args = SpecParser(text).parse()
    match name:
        case "t_sd":
            if args:
                raise UsageError("t_sd takes no arguments")
            return StatisticSpec("t_sd")
        case "t_ps" | "t_res" | "ols":
            if len(args) != 1:
                raise UsageError(f"{name} takes exactly one stratum column, e.g. {name}(x)")
            return StatisticSpec(name, column=args[0])
        case "t_ps_drop":
            if len(args) != 1:
                raise UsageError("t_ps_drop takes exactly one stratum column")
            return StatisticSpec("t_ps", column=args[0], drop_empty_strata=True)
        case "kruskal_wallis" | "kw":
            if args and args != ["raw"]:
                raise UsageError("kruskal_wallis takes no arguments or (raw)")
            return StatisticSpec("kruskal_wallis", use_ranks=not args)
        case "mean_rank":
            if args and len(args) != 2:
                raise UsageError("mean_rank takes two arms, e.g. mean_rank(1, 0)")
            arms = tuple(_arm(a, arm_levels) for a in args) if args else None
            return StatisticSpec("mean_rank", arms=arms)
    raise UsageError(f"Unknown statistic '{name}'")


def parse_balance(text):
    """``--balance`` の記法から BalanceFunctionSpec を作ります。"""
    name, args = SpecParser(text).parse()
    if name == "none":
        if args:
            raise UsageError("Balance 'none' takes no columns")
        return BalanceFunctionSpec("none")
    if name not in ("strata", "contingency", "marginal", "cluster"):
        raise UsageError(f"Unknown balance function '{name}'")
    if not args:
        raise UsageError(f"Balance '{name}' needs at least one column, e.g. {name}(x)")
    if name == "cluster" and len(args) != 1:
        raise UsageError("Balance 'cluster' takes exactly one label column")
    return BalanceFunctionSpec(name, tuple(args))
