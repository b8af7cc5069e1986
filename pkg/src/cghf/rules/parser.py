"""Lexer and recursive-descent parser for ``.rules`` files.

Grammar (keywords are contextual identifiers)::

    ruleset  := (entity | factdef | rule)*
    entity   := "entity" IDENT "{" attr* "}"
    attr     := "attr" IDENT ":" TYPE ["unit" STRING] ("static" | "dynamic")
    factdef  := "factdef" IDENT "{" "stream" STRING
                "aggregate" FUNC "window" DURATION ["horizon" DURATION]
                "ttl" DURATION ["reemit" DURATION]
                ("when" expr "emit" emit)* ["otherwise" "emit" emit] "}"
    emit     := "fact" "(" STRING "," STRING "," expr ")"
    rule     := "rule" IDENT "priority" INT "ttl" DURATION "{"
                "when" pattern ("and" pattern)* ["where" expr] "then" action+ "}"
    pattern  := "fact" "(" term "," STRING "," term ")" ["as" IDENT]
    action   := "publish" "context" TOPIC "{" field ("," field)* "}"
              | "assert" "fact" "(" expr "," STRING "," expr "," "ttl" DURATION ")"
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import ast as A

DURATION_UNITS = {"ms": 1, "s": 1000, "min": 60_000}
TOP_LEVEL = ("entity", "factdef", "rule")
_PUNCT2 = ("==", "!=", "<=", ">=")
_PUNCT1 = "{}(),:.<>+-*/"
_TOPIC_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-.$")


@dataclass(frozen=True)
class ParseError:
    message: str
    line: int
    col: int
    expected: frozenset[str] = field(default_factory=frozenset)

    def __str__(self) -> str:
        exp = ""
        if self.expected:
            exp = " (expected " + ", ".join(sorted(self.expected)) + ")"
        return f"{self.line}:{self.col}: {self.message}{exp}"


class RuleSyntaxError(Exception):
    def __init__(self, errors: list[ParseError]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT VAR STRING NUMBER DURATION PUNCT EOF
    text: str
    value: object
    line: int
    col: int

    @property
    def pos(self) -> tuple[int, int]:
        return (self.line, self.col)

    def describe(self) -> str:
        if self.kind == "EOF":
            return "end of input"
        return repr(self.text)


class _Abort(Exception):
    pass


class Lexer:
    def __init__(self, text: str):
        self.text = text
        self.i = 0
        self.line = 1
        self.col = 1

    def _advance(self, n: int = 1) -> None:
        for _ in range(n):
            if self.text[self.i] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.i += 1

    def skip_ws(self) -> None:
        text = self.text
        while self.i < len(text):
            c = text[self.i]
            if c in " \t\r\n":
                self._advance()
            elif c == "#":
                while self.i < len(text) and text[self.i] != "\n":
                    self._advance()
            else:
                break

    def error(self, msg: str, expected=()) -> ParseError:
        return ParseError(msg, self.line, self.col, frozenset(expected))

    def next(self) -> Token:
        self.skip_ws()
        text = self.text
        line, col = self.line, self.col
        if self.i >= len(text):
            return Token("EOF", "", None, line, col)
        c = text[self.i]
        start = self.i
        if c.isalpha() or c == "_":
            while self.i < len(text) and (text[self.i].isalnum() or text[self.i] == "_"):
                self._advance()
            word = text[start:self.i]
            return Token("IDENT", word, word, line, col)
        if c == "$":
            self._advance()
            s = self.i
            while self.i < len(text) and (text[self.i].isalnum() or text[self.i] == "_"):
                self._advance()
            name = text[s:self.i]
            if not name or not (name[0].isalpha() or name[0] == "_"):
                raise _LexError(ParseError("malformed variable", line, col, frozenset({"VARIABLE"})))
            return Token("VAR", text[start:self.i], name, line, col)
        if c == '"':
            return self._string(line, col)
        if c.isdigit():
            return self._number(line, col)
        two = text[self.i:self.i + 2]
        if two in _PUNCT2:
            self._advance(2)
            return Token("PUNCT", two, two, line, col)
        if c in _PUNCT1:
            self._advance()
            return Token("PUNCT", c, c, line, col)
        raise _LexError(ParseError(f"unexpected character {c!r}", line, col))

    def _string(self, line: int, col: int) -> Token:
        text = self.text
        start = self.i
        self._advance()
        chars = []
        escapes = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}
        while True:
            if self.i >= len(text) or text[self.i] == "\n":
                raise _LexError(ParseError("unterminated string", line, col, frozenset({'"'})))
            c = text[self.i]
            if c == '"':
                self._advance()
                break
            if c == "\\":
                nxt = text[self.i + 1] if self.i + 1 < len(text) else ""
                if nxt not in escapes:
                    raise _LexError(ParseError(f"bad escape \\{nxt}", self.line, self.col))
                chars.append(escapes[nxt])
                self._advance(2)
                continue
            chars.append(c)
            self._advance()
        return Token("STRING", text[start:self.i], "".join(chars), line, col)

    def _number(self, line: int, col: int) -> Token:
        text = self.text
        start = self.i

        def digits():
            while self.i < len(text) and text[self.i].isdigit():
                self._advance()

        digits()
        is_int = True
        if self.i + 1 < len(text) and text[self.i] == "." and text[self.i + 1].isdigit():
            is_int = False
            self._advance()
            digits()
        if self.i < len(text) and text[self.i] in "eE":
            j = self.i + 1
            if j < len(text) and text[j] in "+-":
                j += 1
            if j < len(text) and text[j].isdigit():
                is_int = False
                self._advance(j - self.i)
                digits()
        num_text = text[start:self.i]
        if self.i < len(text) and text[self.i].isalpha():
            s = self.i
            while self.i < len(text) and text[self.i].isalpha():
                self._advance()
            unit = text[s:self.i]
            if unit not in DURATION_UNITS:
                raise _LexError(ParseError(
                    f"unknown duration unit {unit!r}", line, col,
                    frozenset(DURATION_UNITS)))
            ms = float(num_text) * DURATION_UNITS[unit]
            if ms != int(ms):
                raise _LexError(ParseError("duration is not a whole number of ms", line, col))
            return Token("DURATION", text[start:self.i], int(ms), line, col)
        value = int(num_text) if is_int else float(num_text)
        return Token("NUMBER", num_text, value, line, col)

    def read_topic(self) -> tuple[str, int, int]:
        self.skip_ws()
        line, col = self.line, self.col
        start = self.i
        while self.i < len(self.text) and (self.text[self.i] in _TOPIC_CHARS or self.text[self.i] == "/"):
            self._advance()
        return self.text[start:self.i], line, col


class _LexError(Exception):
    def __init__(self, error: ParseError):
        self.error = error


# binding strengths, loosest first
PREC = {"or": 1, "and": 2, "not": 3, "cmp": 4, "+": 5, "-": 5, "*": 6, "/": 6, "neg": 7, "atom": 8}


class Parser:
    def __init__(self, text: str):
        self.lexer = Lexer(text)
        self._peeked: Token | None = None
        self.errors: list[ParseError] = []
        self._in_factdef = False

    # -- token plumbing --

    def peek(self) -> Token:
        if self._peeked is None:
            try:
                self._peeked = self.lexer.next()
            except _LexError as exc:
                self.errors.append(exc.error)
                raise _Abort() from None
        return self._peeked

    def take(self) -> Token:
        tok = self.peek()
        self._peeked = None
        return tok

    def fail(self, expected, tok: Token | None = None):
        tok = tok or self.peek()
        exp = frozenset(expected)
        self.errors.append(ParseError(f"unexpected {tok.describe()}", tok.line, tok.col, exp))
        raise _Abort()

    def at_word(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.text in words

    def at_punct(self, p: str) -> bool:
        tok = self.peek()
        return tok.kind == "PUNCT" and tok.text == p

    def word(self, w: str) -> Token:
        if not self.at_word(w):
            self.fail({w})
        return self.take()

    def punct(self, p: str) -> Token:
        if not self.at_punct(p):
            self.fail({p})
        return self.take()

    def ident(self) -> Token:
        if self.peek().kind != "IDENT":
            self.fail({"IDENT"})
        return self.take()

    def string(self) -> Token:
        if self.peek().kind != "STRING":
            self.fail({"STRING"})
        return self.take()

    def duration(self) -> int:
        if self.peek().kind != "DURATION":
            self.fail({"DURATION"})
        return self.take().value

    def integer(self) -> int:
        neg = False
        if self.at_punct("-"):
            self.take()
            neg = True
        tok = self.peek()
        if tok.kind != "NUMBER" or not isinstance(tok.value, int):
            self.fail({"INT"})
        self.take()
        return -tok.value if neg else tok.value

    # -- top level --

    def parse(self) -> A.RuleSet:
        entities, factdefs, rules = [], [], []
        while True:
            try:
                tok = self.peek()
                if tok.kind == "EOF":
                    break
                if self.at_word("entity"):
                    entities.append(self.entity())
                elif self.at_word("factdef"):
                    factdefs.append(self.factdef())
                elif self.at_word("rule"):
                    rules.append(self.rule())
                else:
                    self.fail(set(TOP_LEVEL) | {"end of input"})
            except _Abort:
                self._recover()
        if self.errors:
            raise RuleSyntaxError(self.errors)
        return A.RuleSet(tuple(entities), tuple(factdefs), tuple(rules))

    def _recover(self) -> None:
        # skip to the next top-level keyword starting a line
        self._in_factdef = False
        while True:
            self._peeked = None
            try:
                tok = self.lexer.next()
            except _LexError:
                if self.lexer.i < len(self.lexer.text):
                    self.lexer._advance()
                continue
            if tok.kind == "EOF" or (tok.kind == "IDENT" and tok.text in TOP_LEVEL and tok.col == 1):
                self._peeked = tok
                return

    # -- model --

    def entity(self) -> A.EntityDecl:
        start = self.word("entity")
        name = self.ident().text
        self.punct("{")
        attrs = []
        while self.at_word("attr"):
            attrs.append(self.attr())
        if not self.at_punct("}"):
            self.fail({"attr", "}"})
        self.take()
        return A.EntityDecl(name, tuple(attrs), pos=start.pos)

    def attr(self) -> A.AttrDecl:
        start = self.word("attr")
        name = self.ident().text
        self.punct(":")
        if not self.at_word(*A.ATTR_TYPES):
            self.fail(set(A.ATTR_TYPES))
        typ = self.take().text
        unit = None
        if self.at_word("unit"):
            self.take()
            unit = self.string().value
        if not self.at_word("static", "dynamic"):
            self.fail({"static", "dynamic"} | ({"unit"} if unit is None else set()))
        static = self.take().text == "static"
        return A.AttrDecl(name, typ, unit, static, pos=start.pos)

    # -- factdef --

    def factdef(self) -> A.FactDef:
        start = self.word("factdef")
        name = self.ident().text
        self.punct("{")
        self.word("stream")
        stream = self.string().value
        self.word("aggregate")
        if not self.at_word(*A.AGGREGATES):
            self.fail(set(A.AGGREGATES))
        fn = self.take().text
        self.word("window")
        window = self.duration()
        horizon = None
        if self.at_word("horizon"):
            self.take()
            horizon = self.duration()
        if not self.at_word("ttl"):
            self.fail({"ttl"} | ({"horizon"} if horizon is None else set()))
        self.take()
        ttl = self.duration()
        reemit = None
        if self.at_word("reemit"):
            self.take()
            reemit = self.duration()
        entries = []
        self._in_factdef = True
        try:
            while self.at_word("when"):
                tok = self.take()
                pred = self.expr()
                self.word("emit")
                entries.append(A.ClassifierEntry(pred, self.emit(), pos=tok.pos))
            if self.at_word("otherwise"):
                tok = self.take()
                self.word("emit")
                entries.append(A.ClassifierEntry(None, self.emit(), pos=tok.pos))
        finally:
            self._in_factdef = False
        if not self.at_punct("}"):
            exp = {"}", "when", "otherwise"}
            if not entries and reemit is None:
                exp.add("reemit")
            if entries and entries[-1].predicate is None:
                exp = {"}"}
            self.fail(exp)
        self.take()
        return A.FactDef(name, stream, fn, window, horizon, ttl, reemit, tuple(entries), pos=start.pos)

    def emit(self) -> A.Emit:
        start = self.word("fact")
        self.punct("(")
        subject = self.string().value
        self.punct(",")
        attribute = self.string().value
        self.punct(",")
        value = self.expr()
        self.punct(")")
        return A.Emit(subject, attribute, value, pos=start.pos)

    # -- rule --

    def rule(self) -> A.Rule:
        start = self.word("rule")
        name = self.ident().text
        self.word("priority")
        priority = self.integer()
        self.word("ttl")
        ttl = self.duration()
        self.punct("{")
        self.word("when")
        patterns = [self.pattern()]
        while self.at_word("and"):
            self.take()
            patterns.append(self.pattern())
        cond = None
        if self.at_word("where"):
            self.take()
            cond = self.expr()
        elif not self.at_word("then"):
            self.fail({"and", "where", "then"})
        self.word("then")
        actions = [self.action()]
        while not self.at_punct("}"):
            if not self.at_word("publish", "assert"):
                self.fail({"publish", "assert", "}"})
            actions.append(self.action())
        self.take()
        return A.Rule(name, priority, ttl, tuple(patterns), cond, tuple(actions), pos=start.pos)

    def term(self):
        tok = self.peek()
        if tok.kind == "VAR":
            self.take()
            return A.Var(tok.value, pos=tok.pos)
        if tok.kind == "STRING":
            self.take()
            return A.Str(tok.value, pos=tok.pos)
        if tok.kind == "NUMBER":
            self.take()
            return A.Num(float(tok.value), pos=tok.pos)
        if tok.kind == "PUNCT" and tok.text == "-":
            self.take()
            num = self.peek()
            if num.kind != "NUMBER":
                self.fail({"NUMBER"})
            self.take()
            return A.Num(-float(num.value), pos=tok.pos)
        if self.at_word("true", "false"):
            self.take()
            return A.Bool(tok.text == "true", pos=tok.pos)
        self.fail({"VARIABLE", "STRING", "NUMBER", "true", "false"})

    def pattern(self) -> A.FactPattern:
        start = self.word("fact")
        self.punct("(")
        subject = self.term()
        self.punct(",")
        attribute = self.string().value
        self.punct(",")
        value = self.term()
        self.punct(")")
        alias = None
        if self.at_word("as"):
            self.take()
            alias = self.ident().text
        return A.FactPattern(subject, attribute, value, alias, pos=start.pos)

    def action(self):
        if self.at_word("publish"):
            start = self.take()
            self.word("context")
            if self._peeked is not None:  # pragma: no cover - parser invariant
                raise AssertionError("topic must be read from raw input")
            raw, line, col = self.lexer.read_topic()
            segments = self._topic_segments(raw, line, col)
            self.punct("{")
            fields = [self.field_()]
            while self.at_punct(","):
                self.take()
                fields.append(self.field_())
            if not self.at_punct("}"):
                self.fail({",", "}"})
            self.take()
            return A.PublishAction(tuple(segments), tuple(fields), pos=start.pos)
        if self.at_word("assert"):
            start = self.take()
            self.word("fact")
            self.punct("(")
            subject = self.expr()
            self.punct(",")
            attribute = self.string().value
            self.punct(",")
            value = self.expr()
            self.punct(",")
            self.word("ttl")
            ttl = self.duration()
            self.punct(")")
            return A.AssertAction(subject, attribute, value, ttl, pos=start.pos)
        self.fail({"publish", "assert"})

    def _topic_segments(self, raw: str, line: int, col: int) -> list:
        if not raw:
            self.errors.append(ParseError("expected a topic", line, col, frozenset({"TOPIC"})))
            raise _Abort()
        segments = []
        offset = 0
        for seg in raw.split("/"):
            seg_col = col + offset
            offset += len(seg) + 1
            if not seg:
                self.errors.append(ParseError("empty topic segment", line, seg_col, frozenset({"SEGMENT"})))
                raise _Abort()
            if seg.startswith("$"):
                name = seg[1:]
                if not name or not (name[0].isalpha() or name[0] == "_") or not all(
                    ch.isalnum() or ch == "_" for ch in name
                ):
                    self.errors.append(ParseError(f"bad variable segment {seg!r}", line, seg_col,
                                                  frozenset({"VARIABLE"})))
                    raise _Abort()
                segments.append(A.Var(name, pos=(line, seg_col)))
            elif "$" in seg:
                self.errors.append(ParseError(
                    f"variables must fill a whole segment: {seg!r}", line, seg_col, frozenset({"SEGMENT"})))
                raise _Abort()
            else:
                segments.append(seg)
        return segments

    def field_(self) -> tuple[str, A.Expr]:
        name = self.ident().text
        self.punct(":")
        return (name, self.expr())

    # -- expressions --

    def expr(self):
        return self.or_expr()

    def or_expr(self):
        left = self.and_expr()
        while self.at_word("or"):
            tok = self.take()
            left = A.Binary("or", left, self.and_expr(), pos=tok.pos)
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.at_word("and"):
            tok = self.take()
            left = A.Binary("and", left, self.not_expr(), pos=tok.pos)
        return left

    def not_expr(self):
        if self.at_word("not"):
            tok = self.take()
            return A.Unary("not", self.not_expr(), pos=tok.pos)
        return self.cmp_expr()

    def cmp_expr(self):
        left = self.add_expr()
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.text in A.COMPARISONS:
            self.take()
            right = self.add_expr()
            left = A.Binary(tok.text, left, right, pos=tok.pos)
        return left

    def add_expr(self):
        left = self.mul_expr()
        while self.peek().kind == "PUNCT" and self.peek().text in "+-":
            tok = self.take()
            left = A.Binary(tok.text, left, self.mul_expr(), pos=tok.pos)
        return left

    def mul_expr(self):
        left = self.unary()
        while self.peek().kind == "PUNCT" and self.peek().text in "*/":
            tok = self.take()
            left = A.Binary(tok.text, left, self.unary(), pos=tok.pos)
        return left

    def unary(self):
        if self.at_punct("-"):
            tok = self.take()
            nxt = self.peek()
            if nxt.kind == "NUMBER":
                self.take()
                return A.Num(-float(nxt.value), pos=tok.pos)
            return A.Unary("-", self.unary(), pos=tok.pos)
        return self.primary()

    _PRIMARY_EXPECTED = frozenset({"VARIABLE", "STRING", "NUMBER", "true", "false", "(", "-", "not", "IDENT"})

    def primary(self):
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.take()
            return A.Num(float(tok.value), pos=tok.pos)
        if tok.kind == "STRING":
            self.take()
            return A.Str(tok.value, pos=tok.pos)
        if tok.kind == "VAR":
            self.take()
            return A.Var(tok.value, pos=tok.pos)
        if tok.kind == "PUNCT" and tok.text == "(":
            self.take()
            inner = self.expr()
            self.punct(")")
            return inner
        if tok.kind == "IDENT":
            if tok.text in ("true", "false"):
                self.take()
                return A.Bool(tok.text == "true", pos=tok.pos)
            if tok.text == "value" and self._in_factdef:
                self.take()
                return A.ValueRef(pos=tok.pos)
            if tok.text in ("and", "or", "not", "then", "where", "emit", "when", "otherwise"):
                self.fail(self._PRIMARY_EXPECTED)
            self.take()
            self.punct(".")
            if not self.at_word(*A.ALIAS_ATTRS):
                self.fail(set(A.ALIAS_ATTRS))
            attr = self.take().text
            return A.AliasAttr(tok.text, attr, pos=tok.pos)
        self.fail(self._PRIMARY_EXPECTED)


def parse(text: str) -> A.RuleSet:
    """Parse rule-language text.

    Raises :class:`RuleSyntaxError` listing every located error found; the
    parser resynchronises at the next top-level keyword after each error.
    """
    return Parser(text).parse()


def parse_file(path) -> A.RuleSet:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())
