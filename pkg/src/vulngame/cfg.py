"""Statement-level control-flow graphs for single C functions.

One node per statement (multi-statement lines split at semicolons), true and
false branch edges from conditions, loop-back edges for loop re-entry, and a
switch lowering that turns each case label into an if/else-style test node.
Falling off the end of the function lands on a synthesized closing-brace node
only when a branch needs it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from . import lexer
from .lexer import Token

SEQ = "seq"
TRUE = "true-branch"
FALSE = "false-branch"
LOOP_BACK = "loop-back"
EDGE_KINDS = (SEQ, TRUE, FALSE, LOOP_BACK)


class CfgParseError(ValueError):
    """Source could not be parsed; carries the first offending line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnreachableCodeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CfgNode:
    node_id: int
    line_span: tuple[int, int]
    text: str


@dataclass(frozen=True)
class CfgEdge:
    src: int
    dst: int
    kind: str


@dataclass(frozen=True)
class ControlFlowGraph:
    nodes: tuple[CfgNode, ...]
    edges: tuple[CfgEdge, ...]
    entry: int
    exits: frozenset[int]

    def successors(self, node_id: int) -> list[CfgEdge]:
        return [e for e in self.edges if e.src == node_id]

    def node(self, node_id: int) -> CfgNode:
        return self.nodes[node_id]

    def __post_init__(self):
        ids = {n.node_id for n in self.nodes}
        assert ids == set(range(len(self.nodes)))
        assert self.entry in ids and self.exits and self.exits <= ids
        out_degree = {i: 0 for i in ids}
        for e in self.edges:
            out_degree[e.src] += 1
        for x in self.exits:
            assert out_degree[x] == 0, "exit node with outgoing edges"


# ---------------------------------------------------------------------------
# statement parsing


@dataclass
class _Stmt:
    kind: str  # expr|return|break|continue|goto|label|if|while|dowhile|for|switch
    line: int
    text: str
    cond: str = ""
    body: list = field(default_factory=list)
    orelse: list | None = None
    cases: list = field(default_factory=list)  # (label_text, line, body, is_default)
    name: str = ""


def _ttext(tokens: list[Token], lo: int, hi: int) -> str:
    return " ".join(t.text for t in tokens[lo:hi])


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    def peek(self, offset: int = 0) -> Token | None:
        j = self.i + offset
        return self.toks[j] if j < len(self.toks) else None

    def error(self, message: str) -> CfgParseError:
        t = self.peek()
        line = t.line if t is not None else (self.toks[-1].line if self.toks else 1)
        return CfgParseError(message, line)

    def expect(self, text: str) -> Token:
        t = self.peek()
        if t is None or t.text != text:
            raise self.error(f"expected {text!r}, found {t.text!r}" if t else f"expected {text!r}")
        self.i += 1
        return t

    def skip_group(self, open_text: str, close_text: str) -> int:
        """Consume a balanced group starting at the current token; returns the
        index one past the closing token."""
        depth = 0
        start = self.i
        while self.i < len(self.toks):
            t = self.toks[self.i].text
            if t == open_text:
                depth += 1
            elif t == close_text:
                depth -= 1
                if depth == 0:
                    self.i += 1
                    return self.i
            self.i += 1
        raise CfgParseError(f"unbalanced {open_text!r}", self.toks[start].line)

    # -- statements ---------------------------------------------------------

    def parse_block_or_stmt(self) -> list[_Stmt]:
        t = self.peek()
        if t is not None and t.text == "{":
            return self.parse_block()
        st = self.parse_stmt()
        return [st] if st is not None else []

    def parse_block(self) -> list[_Stmt]:
        self.expect("{")
        stmts: list[_Stmt] = []
        while True:
            t = self.peek()
            if t is None:
                raise self.error("unterminated block")
            if t.text == "}":
                self.i += 1
                return stmts
            st = self.parse_stmt()
            if st is not None:
                stmts.append(st)

    def parse_stmt(self) -> _Stmt | None:
        t = self.peek()
        if t is None:
            raise self.error("unexpected end of input")
        text = t.text

        if text == ";":
            self.i += 1
            return None
        if text == "{":
            # anonymous block: splice its statements via a wrapper
            inner = self.parse_block()
            return _Stmt("blk", t.line, "{", body=inner)
        if text == "if":
            return self.parse_if()
        if text == "while":
            return self.parse_while()
        if text == "do":
            return self.parse_dowhile()
        if text == "for":
            return self.parse_for()
        if text == "switch":
            return self.parse_switch()
        if text == "return":
            start = self.i
            self.consume_simple()
            return _Stmt("return", t.line, _ttext(self.toks, start, self.i))
        if text in ("break", "continue"):
            self.i += 1
            self.expect(";")
            return _Stmt(text, t.line, f"{text} ;")
        if text == "goto":
            self.i += 1
            target = self.peek()
            if target is None or target.kind != "ident":
                raise self.error("goto without a label")
            self.i += 1
            self.expect(";")
            return _Stmt("goto", t.line, f"goto {target.text} ;", name=target.text)
        if t.kind == "ident" and self.peek(1) is not None and self.peek(1).text == ":":
            self.i += 2
            return _Stmt("label", t.line, f"{text} :", name=text)

        start = self.i
        self.consume_simple()
        return _Stmt("expr", t.line, _ttext(self.toks, start, self.i))

    def consume_simple(self) -> None:
        """Consume tokens through the terminating ';' of a simple statement.

        Brace groups inside the statement (array initializers, compound
        literals) are consumed as part of it; an unmatched '}' means the
        enclosing block closed where a ';' was expected."""
        depth = 0
        braces = 0
        start = self.i
        while self.i < len(self.toks):
            text = self.toks[self.i].text
            if text in "([":
                depth += 1
            elif text in ")]":
                depth -= 1
            elif text == "{":
                braces += 1
            elif text == "}":
                if braces == 0:
                    raise CfgParseError("statement without ';'", self.toks[start].line)
                braces -= 1
            elif text == ";" and depth == 0 and braces == 0:
                self.i += 1
                return
            self.i += 1
        raise CfgParseError("statement without ';'", self.toks[start].line)

    def parse_paren_text(self) -> str:
        start = self.i
        self.expect("(")
        self.i = start
        self.skip_group("(", ")")
        return _ttext(self.toks, start, self.i)

    def parse_if(self) -> _Stmt:
        t = self.expect("if")
        cond = self.parse_paren_text()
        then = self.parse_block_or_stmt()
        orelse = None
        nxt = self.peek()
        if nxt is not None and nxt.text == "else":
            self.i += 1
            orelse = self.parse_block_or_stmt()
        return _Stmt("if", t.line, f"if {cond}", cond=cond, body=then, orelse=orelse)

    def parse_while(self) -> _Stmt:
        t = self.expect("while")
        cond = self.parse_paren_text()
        body = self.parse_block_or_stmt()
        return _Stmt("while", t.line, f"while {cond}", cond=cond, body=body)

    def parse_dowhile(self) -> _Stmt:
        t = self.expect("do")
        body = self.parse_block_or_stmt()
        w = self.expect("while")
        cond = self.parse_paren_text()
        self.expect(";")
        st = _Stmt("dowhile", t.line, f"while {cond} ;", cond=cond, body=body)
        st.line = w.line
        return st

    def parse_for(self) -> _Stmt:
        t = self.expect("for")
        header = self.parse_paren_text()
        body = self.parse_block_or_stmt()
        return _Stmt("for", t.line, f"for {header}", cond=header, body=body)

    def parse_switch(self) -> _Stmt:
        t = self.expect("switch")
        expr = self.parse_paren_text()
        self.expect("{")
        cases: list[tuple[str, int, list[_Stmt], bool]] = []
        current: list[_Stmt] | None = None
        while True:
            nxt = self.peek()
            if nxt is None:
                raise self.error("unterminated switch")
            if nxt.text == "}":
                self.i += 1
                break
            if nxt.text in ("case", "default"):
                is_default = nxt.text == "default"
                start = self.i
                self.i += 1
                while self.peek() is not None and self.peek().text != ":":
                    self.i += 1
                colon = self.expect(":")
                label_text = _ttext(self.toks, start, self.i)
                current = []
                cases.append((label_text, nxt.line, current, is_default))
                continue
            if current is None:
                raise self.error("statement before first case label in switch")
            st = self.parse_stmt()
            if st is not None:
                current.append(st)
        if not cases:
            raise CfgParseError("switch with no cases", t.line)
        return _Stmt("switch", t.line, f"switch {expr}", cond=expr, cases=cases)


def _split_signature(tokens: list[Token]) -> tuple[str, int, int]:
    """(signature text, signature line, index of the body's '{')."""
    lparen = None
    for j, t in enumerate(tokens):
        if t.text == "(" and j > 0 and tokens[j - 1].kind == "ident":
            lparen = j
            break
    if lparen is None:
        raise CfgParseError("no function declarator found", tokens[0].line if tokens else 1)
    depth = 0
    rparen = None
    for j in range(lparen, len(tokens)):
        if tokens[j].text == "(":
            depth += 1
        elif tokens[j].text == ")":
            depth -= 1
            if depth == 0:
                rparen = j
                break
    if rparen is None:
        raise CfgParseError("unbalanced parameter list", tokens[lparen].line)
    lbrace = None
    for j in range(rparen + 1, len(tokens)):
        if tokens[j].text == "{":
            lbrace = j
            break
    if lbrace is None:
        raise CfgParseError("function has no body", tokens[rparen].line)
    return _ttext(tokens, 0, rparen + 1), tokens[0].line, lbrace


# ---------------------------------------------------------------------------
# graph construction


class _Builder:
    def __init__(self, last_line: int):
        self.texts: list[str] = []
        self.lines: list[tuple[int, int]] = []
        self.edges: list[tuple[int, int, str]] = []
        self.returns: list[int] = []
        self.gotos: list[tuple[int, str]] = []
        self.labels: dict[str, int] = {}
        self.goto_lines: dict[int, int] = {}
        self.end_node: int | None = None
        self.last_line = last_line

    def new_node(self, text: str, line: int) -> int:
        self.texts.append(text)
        self.lines.append((line, line))
        return len(self.texts) - 1

    def connect(self, src: int, dst: int, kind: str) -> None:
        self.edges.append((src, dst, kind))

    def attach(self, pending: list[tuple[int, str]], node: int) -> None:
        for src, kind in pending:
            self.connect(src, node, kind)

    def get_end_node(self) -> int:
        if self.end_node is None:
            self.end_node = self.new_node("}", self.last_line)
        return self.end_node

    # pending: [(node_id, edge_kind)] edges waiting for the next node
    def emit_stmts(self, stmts: list[_Stmt], pending, ctx) -> list[tuple[int, str]]:
        for st in stmts:
            pending = self.emit_stmt(st, pending, ctx)
        return pending

    def emit_stmt(self, st: _Stmt, pending, ctx) -> list[tuple[int, str]]:
        kind = st.kind
        if kind == "blk":
            return self.emit_stmts(st.body, pending, ctx)

        if kind in ("expr", "label"):
            n = self.new_node(st.text, st.line)
            self.attach(pending, n)
            if kind == "label":
                if st.name in self.labels:
                    raise CfgParseError(f"duplicate label {st.name!r}", st.line)
                self.labels[st.name] = n
            return [(n, SEQ)]

        if kind == "return":
            n = self.new_node(st.text, st.line)
            self.attach(pending, n)
            self.returns.append(n)
            return []

        if kind == "goto":
            n = self.new_node(st.text, st.line)
            self.attach(pending, n)
            self.gotos.append((n, st.name))
            self.goto_lines[n] = st.line
            return []

        if kind == "break":
            n = self.new_node(st.text, st.line)
            self.attach(pending, n)
            if ctx.get("break") is None:
                raise CfgParseError("break outside loop or switch", st.line)
            ctx["break"].append((n, SEQ))
            return []

        if kind == "continue":
            n = self.new_node(st.text, st.line)
            self.attach(pending, n)
            target = ctx.get("continue")
            if target is None:
                raise CfgParseError("continue outside loop", st.line)
            if target == "dowhile-patch":
                ctx["continue_pending"].append(n)
            else:
                self.connect(n, target, LOOP_BACK)
            return []

        if kind == "if":
            c = self.new_node(st.text, st.line)
            self.attach(pending, c)
            out = self.emit_stmts(st.body, [(c, TRUE)], ctx)
            if st.orelse is not None:
                out = out + self.emit_stmts(st.orelse, [(c, FALSE)], ctx)
            else:
                out = out + [(c, FALSE)]
            return out

        if kind in ("while", "for"):
            c = self.new_node(st.text, st.line)
            self.attach(pending, c)
            inner = {**ctx, "break": [], "continue": c}
            tails = self.emit_stmts(st.body, [(c, TRUE)], inner)
            for src, _ in tails:
                self.connect(src, c, LOOP_BACK)
            if not st.body:
                self.connect(c, c, LOOP_BACK)
            return [(c, FALSE)] + inner["break"]

        if kind == "dowhile":
            first_body = len(self.texts)
            # continue in a do-while targets the condition node, which does
            # not exist until the body is emitted; collect and patch after
            inner = {**ctx, "break": [], "continue": "dowhile-patch",
                     "continue_pending": []}
            tails = self.emit_stmts(st.body, pending, inner)
            c = self.new_node(st.text, st.line)
            body_entry = first_body if first_body < c else c
            self.attach(tails, c)
            self.connect(c, body_entry, LOOP_BACK)
            for n in inner["continue_pending"]:
                self.connect(n, c, LOOP_BACK)
            return [(c, FALSE)] + inner["break"]

        if kind == "switch":
            h = self.new_node(st.text, st.line)
            self.attach(pending, h)
            inner = {**ctx, "break": []}
            label_nodes = [self.new_node(text, line) for text, line, _, _ in st.cases]
            tests = [label_nodes[i] for i, c in enumerate(st.cases) if not c[3]]
            default = next((label_nodes[i] for i, c in enumerate(st.cases) if c[3]), None)
            # if/else-chain lowering: header seq-> first test, each test
            # true-> its body and false-> the next test, last test false->
            # default (when present) or out of the switch
            first = tests[0] if tests else default
            self.connect(h, first, SEQ)
            for a, b in zip(tests, tests[1:]):
                self.connect(a, b, FALSE)
            miss: list[tuple[int, str]] = []
            if tests:
                if default is not None:
                    self.connect(tests[-1], default, FALSE)
                else:
                    miss = [(tests[-1], FALSE)]
            # bodies in source order; a body without break falls into the
            # next body, skipping its test
            fall_in: list[tuple[int, str]] = []
            for idx, (_text, _line, body, is_default) in enumerate(st.cases):
                ln = label_nodes[idx]
                entry_kind = SEQ if is_default else TRUE
                fall_in = self.emit_stmts(body, fall_in + [(ln, entry_kind)], inner)
            return fall_in + miss + inner["break"]

        raise AssertionError(f"unhandled statement kind {kind}")


def build_cfg(source: str) -> ControlFlowGraph:
    """Parse one C function and build its statement-level CFG.

    Raises CfgParseError (with the first offending line) on malformed input;
    an empty body yields a single-node graph whose entry is its only exit.
    """
    try:
        tokens = lexer.code_tokens(source)
    except lexer.LexError as exc:
        raise CfgParseError(str(exc), exc.line) from exc
    if not tokens:
        raise CfgParseError("empty source", 1)
    signature, sig_line, lbrace = _split_signature(tokens)

    parser = _Parser(tokens)
    parser.i = lbrace
    body = parser.parse_block()
    if parser.peek() is not None:
        raise CfgParseError("trailing tokens after function body", parser.peek().line)

    builder = _Builder(last_line=tokens[-1].line)

    if not body:
        n = builder.new_node(signature, sig_line)
        return ControlFlowGraph(
            nodes=(CfgNode(0, builder.lines[n], builder.texts[n]),),
            edges=(), entry=0, exits=frozenset({0}))

    ctx = {"break": None, "continue": None}
    pending = builder.emit_stmts(body, [], ctx)

    # seq tails at the end of the function simply become exits; branch tails
    # need a landing node for the closing brace
    for src, kind in pending:
        if kind != SEQ:
            builder.connect(src, builder.get_end_node(), kind)

    for src, label in builder.gotos:
        if label not in builder.labels:
            raise CfgParseError(f"goto to unknown label {label!r}", builder.goto_lines[src])
        dst = builder.labels[label]
        kind = LOOP_BACK if builder.lines[dst][0] <= builder.lines[src][0] else SEQ
        builder.connect(src, dst, kind)

    return _finalize(builder)


def _finalize(builder: _Builder) -> ControlFlowGraph:
    n_nodes = len(builder.texts)
    adjacency: dict[int, list[tuple[int, str]]] = {i: [] for i in range(n_nodes)}
    for src, dst, kind in builder.edges:
        adjacency[src].append((dst, kind))

    entry = 0
    reachable = set()
    stack = [entry]
    while stack:
        node = stack.pop()
        if node in reachable:
            continue
        reachable.add(node)
        for dst, _ in adjacency[node]:
            if dst not in reachable:
                stack.append(dst)

    if len(reachable) < n_nodes:
        dropped = sorted(set(range(n_nodes)) - reachable)
        lines = ", ".join(str(builder.lines[i][0]) for i in dropped)
        warnings.warn(f"dropping unreachable statements at lines {lines}",
                      UnreachableCodeWarning, stacklevel=3)

    order = sorted(reachable)
    remap = {old: new for new, old in enumerate(order)}
    nodes = tuple(CfgNode(remap[i], builder.lines[i], builder.texts[i]) for i in order)
    edges = tuple(CfgEdge(remap[s], remap[d], k) for s, d, k in builder.edges
                  if s in reachable and d in reachable)
    has_out = {e.src for e in edges}
    exits = frozenset(n.node_id for n in nodes if n.node_id not in has_out)
    if not exits:
        raise CfgParseError("function has no reachable exit", builder.lines[0][0])
    return ControlFlowGraph(nodes=nodes, edges=edges, entry=remap[entry], exits=exits)


def cfg_to_dot(cfg: ControlFlowGraph, name: str = "cfg") -> str:
    """Render a CFG in DOT text for visual inspection."""
    out = [f"digraph {name} {{"]
    for n in cfg.nodes:
        shape = "doublecircle" if n.node_id in cfg.exits else "ellipse"
        label = n.text.replace("\\", "\\\\").replace('"', '\\"')
        out.append(f'  n{n.node_id} [shape={shape} label="{n.node_id}: {label}"];')
    for e in cfg.edges:
        style = ' [style=dashed label="loop"]' if e.kind == LOOP_BACK else (
            f' [label="{e.kind[0].upper()}"]' if e.kind in (TRUE, FALSE) else "")
        out.append(f"  n{e.src} -> n{e.dst}{style};")
    out.append("}")
    return "\n".join(out)
