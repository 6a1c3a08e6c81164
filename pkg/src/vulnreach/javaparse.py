"""Error-tolerant declaration-level parsing of Java source.

Segmentation only needs the shallow shape of a file: package/import
declarations and type declarations at the top level, and field, method,
constructor, initializer and nested-type members inside type bodies.
Statement-level structure is never modeled; bodies are consumed by bracket
balancing with full string/comment awareness, so arbitrary (including
syntactically broken) content inside bodies cannot derail the scan.

Anything that cannot be recognized is captured as an ``error`` node that
still carries an exact line span. Downstream segmentation turns error nodes
into ordinary blocks, which keeps the line-coverage invariant intact on
real-world corpora containing unparseable files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParseError

MODIFIERS = frozenset(
    {
        "public",
        "protected",
        "private",
        "static",
        "final",
        "abstract",
        "synchronized",
        "native",
        "strictfp",
        "transient",
        "volatile",
        "default",
        "sealed",
    }
)

TYPE_KEYWORDS = frozenset({"class", "interface", "enum", "record"})

_OPENERS = {"(": ")", "{": "}", "[": "]"}
_CLOSERS = {")", "}", "]"}

_IDENT_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_$")
_IDENT_PART = _IDENT_START | frozenset("0123456789")
_DIGITS = frozenset("0123456789")


@dataclass(frozen=True)
class Token:
    kind: str  # ident | number | string | char | punct | comment
    text: str
    line_start: int
    line_end: int


def lex(source: str) -> list[Token]:
    """Tokenize Java source, keeping comments as tokens (needed for
    attaching leading comment runs to declarations)."""
    tokens: list[Token] = []
    i = 0
    n = len(source)
    line = 1

    def advance_lines(text: str) -> int:
        return text.count("\n")

    while i < n:
        ch = source[i]
        if ch == "\n":
            line += 1
            i += 1
            continue
        if ch in " \t\r\f\v":
            i += 1
            continue
        start_line = line
        if ch == "/" and i + 1 < n:
            nxt = source[i + 1]
            if nxt == "/":
                j = source.find("\n", i)
                if j == -1:
                    j = n
                tokens.append(Token("comment", source[i:j], start_line, start_line))
                i = j
                continue
            if nxt == "*":
                j = source.find("*/", i + 2)
                if j == -1:
                    text = source[i:]
                    i = n
                else:
                    text = source[i : j + 2]
                    i = j + 2
                line += advance_lines(text)
                tokens.append(Token("comment", text, start_line, line))
                continue
        if ch == '"':
            if source.startswith('"""', i):
                j = i + 3
                while j < n:
                    if source[j] == "\\":
                        j += 2
                        continue
                    if source.startswith('"""', j):
                        j += 3
                        break
                    j += 1
                else:
                    j = n
                text = source[i:j]
                i = j
                line += advance_lines(text)
                tokens.append(Token("string", text, start_line, line))
                continue
            j = i + 1
            while j < n and source[j] not in '"\n':
                if source[j] == "\\":
                    j += 1
                j += 1
            if j < n and source[j] == '"':
                j += 1
            tokens.append(Token("string", source[i:j], start_line, start_line))
            i = j
            continue
        if ch == "'":
            j = i + 1
            while j < n and source[j] not in "'\n":
                if source[j] == "\\":
                    j += 1
                j += 1
            if j < n and source[j] == "'":
                j += 1
            tokens.append(Token("char", source[i:j], start_line, start_line))
            i = j
            continue
        if ch in _IDENT_START:
            j = i + 1
            while j < n and source[j] in _IDENT_PART:
                j += 1
            tokens.append(Token("ident", source[i:j], start_line, start_line))
            i = j
            continue
        if ch in _DIGITS:
            j = i + 1
            while j < n and (source[j] in _IDENT_PART or source[j] == "."):
                j += 1
            tokens.append(Token("number", source[i:j], start_line, start_line))
            i = j
            continue
        tokens.append(Token("punct", ch, start_line, start_line))
        i += 1
    return tokens


@dataclass
class JavaNode:
    """Shallow declaration node with an exact (1-based, inclusive) line span."""

    kind: str  # package | import | type | field | method | constructor |
    #            initializer | enum_constants | error
    line_start: int
    line_end: int
    name: str | None = None
    type_keyword: str | None = None
    members: list["JavaNode"] = field(default_factory=list)
    malformed: bool = False


@dataclass
class CompilationUnit:
    """Root handle for one parsed source file."""

    file_path: str
    lines: list[str]  # keepends=True; exact reassembly is ``"".join(lines)``
    nodes: list[JavaNode]

    @property
    def line_count(self) -> int:
        return len(self.lines)

    def slice_text(self, line_start: int, line_end: int) -> str:
        return "".join(self.lines[line_start - 1 : line_end])

    def text_of(self, node: JavaNode) -> str:
        return self.slice_text(node.line_start, node.line_end)

    def iter_types(self) -> list[tuple[JavaNode, str]]:
        """All type declarations with their dotted nesting path, outermost first."""
        out: list[tuple[JavaNode, str]] = []

        def walk(nodes: list[JavaNode], prefix: list[str]) -> None:
            for node in nodes:
                if node.kind == "type":
                    path = prefix + [node.name or "<anonymous>"]
                    out.append((node, ".".join(path)))
                    walk(node.members, path)

        walk(self.nodes, [])
        return out


class _Parser:
    def __init__(self, file_path: str, tokens: list[Token]):
        self.file_path = file_path
        self.tokens = tokens
        self.pos = 0

    # -- token access -------------------------------------------------

    def _at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    def _peek(self, offset: int = 0) -> Token | None:
        """Next significant token (skipping comments), without consuming."""
        idx = self.pos
        seen = 0
        while idx < len(self.tokens):
            tok = self.tokens[idx]
            if tok.kind != "comment":
                if seen == offset:
                    return tok
                seen += 1
            idx += 1
        return None

    def _next(self) -> Token | None:
        """Consume and return the next significant token."""
        while self.pos < len(self.tokens):
            tok = self.tokens[self.pos]
            self.pos += 1
            if tok.kind != "comment":
                return tok
        return None

    def _attached_comment_start(self, decl_line: int) -> int | None:
        """Line where the comment run directly above ``decl_line`` starts.

        The pending comments sit between the cursor and the next significant
        token. A run attaches when each comment ends on the line directly
        above the next element (javadoc style); a blank line breaks it.
        """
        idx = self.pos
        pending: list[Token] = []
        while idx < len(self.tokens) and self.tokens[idx].kind == "comment":
            pending.append(self.tokens[idx])
            idx += 1
        anchor = decl_line
        start: int | None = None
        for tok in reversed(pending):
            if anchor - tok.line_end > 1:
                break
            start = tok.line_start
            anchor = tok.line_start
        return start

    # -- balanced consumption ------------------------------------------

    def _consume_balanced(self) -> Token | None:
        """Consume an opener token and everything up to its matching closer.

        All bracket kinds nest on one shared stack so lambdas and anonymous
        classes inside argument lists balance correctly. Returns the closing
        token, or None when input ends first (malformed).
        """
        opener = self._next()
        if opener is None or opener.text not in _OPENERS:
            return opener
        stack = [opener.text]
        last = opener
        while stack:
            tok = self._next()
            if tok is None:
                return None
            last = tok
            if tok.kind == "punct":
                if tok.text in _OPENERS:
                    stack.append(tok.text)
                elif tok.text in _CLOSERS:
                    stack.pop()
        return last

    def _consume_to_semicolon(self) -> Token | None:
        """Consume until a ';' at bracket depth zero. Returns that token or
        the last one consumed when input ends first."""
        last: Token | None = None
        while True:
            tok = self._peek()
            if tok is None:
                return last
            if tok.kind == "punct" and tok.text in _OPENERS:
                last = self._consume_balanced()
                if last is None:
                    return None
                continue
            tok = self._next()
            last = tok
            if tok is not None and tok.kind == "punct" and tok.text == ";":
                return tok

    # -- declaration-head scanning ---------------------------------------

    def _scan_decl_head(self) -> tuple[str | None, int]:
        """Look ahead past annotations/modifiers/type parameters.

        Returns (type_keyword or None, significant-token offset of that
        keyword). Does not consume anything.
        """
        offset = 0
        while True:
            tok = self._peek(offset)
            if tok is None:
                return None, offset
            if tok.kind == "punct" and tok.text == "@":
                nxt = self._peek(offset + 1)
                if nxt is not None and nxt.kind == "ident" and nxt.text == "interface":
                    return "@interface", offset
                # Annotation: @ Qualified.Name ( ... )?
                offset += 1
                while True:
                    name_tok = self._peek(offset)
                    if name_tok is None or name_tok.kind != "ident":
                        break
                    offset += 1
                    dot = self._peek(offset)
                    if dot is not None and dot.kind == "punct" and dot.text == ".":
                        offset += 1
                        continue
                    break
                paren = self._peek(offset)
                if paren is not None and paren.kind == "punct" and paren.text == "(":
                    depth = 0
                    while True:
                        tok2 = self._peek(offset)
                        if tok2 is None:
                            return None, offset
                        if tok2.kind == "punct":
                            if tok2.text in _OPENERS:
                                depth += 1
                            elif tok2.text in _CLOSERS:
                                depth -= 1
                        offset += 1
                        if depth == 0:
                            break
                continue
            if tok.kind == "ident":
                if tok.text in MODIFIERS:
                    offset += 1
                    continue
                if tok.text == "non":
                    dash = self._peek(offset + 1)
                    sealed = self._peek(offset + 2)
                    if (
                        dash is not None
                        and dash.kind == "punct"
                        and dash.text == "-"
                        and sealed is not None
                        and sealed.text == "sealed"
                    ):
                        offset += 3
                        continue
                if tok.text in TYPE_KEYWORDS:
                    return tok.text, offset
                return None, offset
            if tok.kind == "punct" and tok.text == "<":
                depth = 0
                while True:
                    tok2 = self._peek(offset)
                    if tok2 is None:
                        return None, offset
                    if tok2.kind == "punct":
                        if tok2.text == "<":
                            depth += 1
                        elif tok2.text == ">":
                            depth -= 1
                    offset += 1
                    if depth == 0:
                        break
                continue
            return None, offset

    # -- grammar ----------------------------------------------------------

    def parse_unit(self) -> list[JavaNode]:
        nodes: list[JavaNode] = []
        while True:
            tok = self._peek()
            if tok is None:
                break
            if tok.kind == "ident" and tok.text == "package":
                nodes.append(self._parse_simple("package"))
                continue
            if tok.kind == "ident" and tok.text == "import":
                nodes.append(self._parse_simple("import"))
                continue
            keyword, _ = self._scan_decl_head()
            if keyword is not None:
                nodes.append(self._parse_type_decl(keyword))
                continue
            if tok.kind == "punct" and tok.text == ";":
                self._next()  # stray top-level semicolon: residue
                continue
            nodes.append(self._recover_error())
        return nodes

    def _parse_simple(self, kind: str) -> JavaNode:
        first = self._peek()
        assert first is not None
        start = self._attached_comment_start(first.line_start) or first.line_start
        self._next()  # keyword
        name_parts: list[str] = []
        tok = self._peek()
        while tok is not None and not (tok.kind == "punct" and tok.text == ";"):
            if tok.kind in ("ident", "punct"):
                name_parts.append(tok.text)
            tok2 = self._next()
            assert tok2 is not None
            last = tok2
            tok = self._peek()
        if tok is not None:
            last = self._next()  # the ';'
            assert last is not None
        else:
            last = self.tokens[-1] if self.tokens else first
        return JavaNode(
            kind=kind,
            line_start=start,
            line_end=last.line_end,
            name="".join(name_parts) or None,
            malformed=tok is None,
        )

    def _parse_type_decl(self, keyword: str) -> JavaNode:
        first = self._peek()
        assert first is not None
        start = self._attached_comment_start(first.line_start) or first.line_start
        # Consume everything up to (and including) the type keyword.
        while True:
            tok = self._peek()
            if tok is None:
                return JavaNode("error", start, self.tokens[-1].line_end, malformed=True)
            if tok.kind == "ident" and tok.text in TYPE_KEYWORDS:
                self._next()
                break
            if tok.kind == "punct" and tok.text == "@":
                nxt = self._peek(1)
                if nxt is not None and nxt.text == "interface":
                    self._next()
                    self._next()
                    break
            self._next()
        name_tok = self._peek()
        name = name_tok.text if name_tok is not None and name_tok.kind == "ident" else None
        # Header: everything before the body brace (extends/implements/record
        # components; generics cannot contain braces).
        last: Token | None = name_tok
        while True:
            tok = self._peek()
            if tok is None:
                return JavaNode(
                    "error",
                    start,
                    last.line_end if last is not None else start,
                    name=name,
                    malformed=True,
                )
            if tok.kind == "punct" and tok.text == "{":
                break
            if tok.kind == "punct" and tok.text == "(":
                last = self._consume_balanced()
                if last is None:
                    return JavaNode("error", start, self.tokens[-1].line_end, name=name, malformed=True)
                continue
            if tok.kind == "punct" and tok.text == ";":
                # Degenerate declaration without a body.
                last = self._next()
                return JavaNode("type", start, last.line_end, name=name, type_keyword=keyword)
            last = self._next()
        self._next()  # '{'
        node = JavaNode("type", start, 0, name=name, type_keyword=keyword)
        if keyword == "enum":
            constants = self._parse_enum_constants()
            if constants is not None:
                node.members.append(constants)
        closing = self._parse_members(node)
        if closing is None:
            node.line_end = self.tokens[-1].line_end if self.tokens else start
            node.malformed = True
        else:
            node.line_end = closing.line_end
        return node

    def _parse_enum_constants(self) -> JavaNode | None:
        first = self._peek()
        if first is None or (first.kind == "punct" and first.text in ("}", ";")):
            if first is not None and first.text == ";":
                self._next()
            return None
        start = first.line_start
        last = first
        while True:
            tok = self._peek()
            if tok is None:
                return JavaNode("enum_constants", start, last.line_end, malformed=True)
            if tok.kind == "punct" and tok.text == "}":
                return JavaNode("enum_constants", start, last.line_end)
            if tok.kind == "punct" and tok.text == ";":
                consumed = self._next()
                assert consumed is not None
                return JavaNode("enum_constants", start, consumed.line_end)
            if tok.kind == "punct" and tok.text in _OPENERS:
                closed = self._consume_balanced()
                if closed is None:
                    return JavaNode("enum_constants", start, last.line_end, malformed=True)
                last = closed
                continue
            consumed = self._next()
            assert consumed is not None
            last = consumed

    def _parse_members(self, type_node: JavaNode) -> Token | None:
        """Parse members until the type body's closing brace. Returns that
        closing token, or None at premature end of input."""
        while True:
            tok = self._peek()
            if tok is None:
                return None
            if tok.kind == "punct" and tok.text == "}":
                return self._next()
            if tok.kind == "punct" and tok.text == ";":
                self._next()  # stray semicolon: residue
                continue
            member = self._parse_member(type_node.name)
            if member is not None:
                type_node.members.append(member)

    def _parse_member(self, enclosing_name: str | None) -> JavaNode | None:
        first = self._peek()
        assert first is not None
        start = self._attached_comment_start(first.line_start) or first.line_start

        if first.kind == "ident" and first.text == "static":
            nxt = self._peek(1)
            if nxt is not None and nxt.kind == "punct" and nxt.text == "{":
                self._next()  # 'static'
                closing = self._consume_balanced()
                end = closing.line_end if closing is not None else self.tokens[-1].line_end
                return JavaNode("initializer", start, end, malformed=closing is None)
        if first.kind == "punct" and first.text == "{":
            closing = self._consume_balanced()
            end = closing.line_end if closing is not None else self.tokens[-1].line_end
            return JavaNode("initializer", start, end, malformed=closing is None)

        keyword, _ = self._scan_decl_head()
        if keyword is not None:
            nested = self._parse_type_decl(keyword)
            nested.line_start = min(nested.line_start, start)
            return nested

        return self._parse_field_or_callable(start, enclosing_name)

    def _parse_field_or_callable(self, start: int, enclosing_name: str | None) -> JavaNode:
        # Strip annotations, modifiers and generic type parameters.
        while True:
            tok = self._peek()
            if tok is None:
                return JavaNode("error", start, self.tokens[-1].line_end, malformed=True)
            if tok.kind == "punct" and tok.text == "@":
                self._next()
                while True:
                    name_tok = self._peek()
                    if name_tok is None or name_tok.kind != "ident":
                        break
                    self._next()
                    dot = self._peek()
                    if dot is not None and dot.kind == "punct" and dot.text == ".":
                        self._next()
                        continue
                    break
                paren = self._peek()
                if paren is not None and paren.kind == "punct" and paren.text == "(":
                    if self._consume_balanced() is None:
                        return JavaNode("error", start, self.tokens[-1].line_end, malformed=True)
                continue
            if tok.kind == "ident" and tok.text in MODIFIERS:
                self._next()
                continue
            if tok.kind == "punct" and tok.text == "<":
                depth = 0
                while True:
                    tok2 = self._next()
                    if tok2 is None:
                        return JavaNode("error", start, self.tokens[-1].line_end, malformed=True)
                    if tok2.kind == "punct":
                        if tok2.text == "<":
                            depth += 1
                        elif tok2.text == ">":
                            depth -= 1
                    if depth == 0:
                        break
                continue
            break

        # Collect signature tokens until the decision point: '(' means a
        # callable, '=' or ';' a field, '{' a record compact constructor.
        sig: list[Token] = []
        while True:
            tok = self._peek()
            if tok is None:
                last_line = sig[-1].line_end if sig else start
                return JavaNode("error", start, max(last_line, start), malformed=True)
            if tok.kind == "punct" and tok.text == "(":
                return self._finish_callable(start, sig, enclosing_name)
            if tok.kind == "punct" and tok.text in ("=", ";"):
                return self._finish_field(start, sig)
            if tok.kind == "punct" and tok.text == "{":
                name = sig[-1].text if sig and sig[-1].kind == "ident" else None
                closing = self._consume_balanced()
                end = closing.line_end if closing is not None else self.tokens[-1].line_end
                if name is not None and name == enclosing_name:
                    return JavaNode("constructor", start, end, name=name, malformed=closing is None)
                return JavaNode("error", start, end, malformed=True)
            if tok.kind == "punct" and tok.text == "}":
                # Unexpected body close: emit what we have as an error node
                # without consuming the brace (it closes the enclosing type).
                last_line = sig[-1].line_end if sig else start
                return JavaNode("error", start, max(last_line, start), malformed=True)
            consumed = self._next()
            assert consumed is not None
            sig.append(consumed)

    def _finish_callable(self, start: int, sig: list[Token], enclosing_name: str | None) -> JavaNode:
        name = sig[-1].text if sig and sig[-1].kind == "ident" else None
        idents = [t for t in sig if t.kind in ("ident", "number")]
        is_constructor = len(idents) == 1 and name is not None and name == enclosing_name
        params_close = self._consume_balanced()
        if params_close is None:
            return JavaNode("error", start, self.tokens[-1].line_end, name=name, malformed=True)
        last = params_close
        while True:
            tok = self._peek()
            if tok is None:
                return JavaNode("error", start, last.line_end, name=name, malformed=True)
            if tok.kind == "punct" and tok.text == "{":
                closing = self._consume_balanced()
                if closing is None:
                    return JavaNode(
                        "constructor" if is_constructor else "method",
                        start,
                        self.tokens[-1].line_end,
                        name=name,
                        malformed=True,
                    )
                last = closing
                break
            if tok.kind == "punct" and tok.text == ";":
                consumed = self._next()
                assert consumed is not None
                last = consumed
                break
            if tok.kind == "punct" and tok.text == "}":
                # Body never opened and the enclosing type is closing:
                # malformed declaration (do not consume the brace).
                return JavaNode("error", start, last.line_end, name=name, malformed=True)
            if tok.kind == "punct" and tok.text in _OPENERS:
                # Annotation-member default values and throws generics.
                closed = self._consume_balanced()
                if closed is None:
                    return JavaNode("error", start, self.tokens[-1].line_end, name=name, malformed=True)
                last = closed
                continue
            consumed = self._next()
            assert consumed is not None
            last = consumed
        return JavaNode(
            "constructor" if is_constructor else "method",
            start,
            last.line_end,
            name=name,
        )

    def _finish_field(self, start: int, sig: list[Token]) -> JavaNode:
        name = None
        for tok in reversed(sig):
            if tok.kind == "ident":
                name = tok.text
                break
        last = self._consume_to_semicolon()
        if last is None:
            return JavaNode("error", start, self.tokens[-1].line_end, name=name, malformed=True)
        return JavaNode("field", start, last.line_end, name=name)

    def _recover_error(self) -> JavaNode:
        first = self._peek()
        assert first is not None
        start = self._attached_comment_start(first.line_start) or first.line_start
        last: Token | None = None
        while True:
            tok = self._peek()
            if tok is None:
                break
            if tok.kind == "punct" and tok.text in _OPENERS:
                closed = self._consume_balanced()
                if closed is None:
                    last = self.tokens[-1]
                    break
                last = closed
                continue
            consumed = self._next()
            last = consumed
            if consumed is not None and consumed.kind == "punct" and consumed.text == ";":
                break
        end = last.line_end if last is not None else start
        return JavaNode("error", start, max(end, start), malformed=True)


def parse_source(file_path: str, source: str) -> list[CompilationUnit]:
    """Parse one file into its compilation unit (always a 1-element list).

    Raises ParseError only when the lexer itself cannot make progress, which
    for text input effectively never happens; recoverable trouble surfaces
    as error nodes instead.
    """
    lines = source.splitlines(keepends=True)
    try:
        tokens = lex(source)
        nodes = _Parser(file_path, tokens).parse_unit() if tokens else []
    except RecursionError as exc:
        raise ParseError(file_path, 1, f"parser recursion limit: {exc}") from exc
    unit = CompilationUnit(file_path=file_path, lines=lines, nodes=nodes)
    _clamp_spans(unit)
    return [unit]


def _clamp_spans(unit: CompilationUnit) -> None:
    """Keep every node span inside the file's real line range."""
    limit = max(unit.line_count, 1)

    def clamp(node: JavaNode) -> None:
        node.line_start = min(max(node.line_start, 1), limit)
        node.line_end = min(max(node.line_end, node.line_start), limit)
        for member in node.members:
            clamp(member)

    for node in unit.nodes:
        clamp(node)
