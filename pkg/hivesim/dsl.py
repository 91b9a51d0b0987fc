"""
Task-graph DSL for swarm applications.

A program is a sequence of call-shaped statements, one per logical line
(brackets and parentheses continue a line), with ``#`` comments::

    TaskGraph(list=['collectImage','faceRecognition'],constraint=[latency='200ms'])
    Task(collectImage,None,sensorData,'code/collect',parentTask=None,childTask=['faceRecognition'])
    Task(faceRecognition,sensorData,recognitionStats,'code/face',parentTask=['collectImage'],childTask=[])
    Place(faceRecognition,'Cloud')

A ``sync='all'`` task argument is shorthand for ``Synchronize(task,'all')``.
The module parses, validates and renders programs. All functions are pure.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import networkx as nx

from hivesim.errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

PAIR_ORDERINGS = ('Parallel', 'Overlap', 'Serial')
ORDERING_KINDS = PAIR_ORDERINGS + ('Synchronize',)
DIRECTIVE_KINDS = ('Schedule', 'Isolate', 'Place', 'Restore', 'Learn', 'Persist')
STATEMENTS = ('TaskGraph', 'Task') + ORDERING_KINDS + DIRECTIVE_KINDS

# Directives whose second positional argument fills a payload key.
POSITIONAL_PAYLOAD = {'Place': 'location', 'Learn': 'scope'}

LEARN_SCOPES = ('Global', 'Local', 'Off')
RESTORE_POLICIES = ('respawn', 'drop')
SCHEDULE_PRIORITIES = ('high', 'normal', 'low')

METRICS = {
    'exec_time': ('execTime', 'upper'),
    'latency': ('latency', 'upper'),
    'throughput': ('throughput', 'lower'),
    'cost': ('cost', 'upper'),
}
METRIC_BY_SPELLING = {spelling: metric for metric, (spelling, _) in METRICS.items()}

TIME_UNITS = {'us': 0.001, 'ms': 1.0, 's': 1000.0, 'min': 60000.0}
RATE_UNITS = {'req/s': 1.0, 'rps': 1.0}
COST_UNITS = {'': 1.0, 'fs': 1.0}
UNITS_BY_METRIC = {
    'exec_time': TIME_UNITS,
    'latency': TIME_UNITS,
    'throughput': RATE_UNITS,
    'cost': COST_UNITS,
}

IDENTIFIER = re.compile(r'[A-Za-z_][A-Za-z0-9_]*\Z')
_BOUND = re.compile(r'\s*([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]*)\s*\Z')


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class TaskDef:
    """One task of the application graph."""
    name: str
    data_in: Optional[str] = None
    data_out: Optional[str] = None
    code_ref: str = ''
    task_args: Dict[str, str] = field(default_factory=dict)
    parents: List[str] = field(default_factory=list)
    children: List[str] = field(default_factory=list)

    @property
    def is_source(self) -> bool:
        """Sensor source: consumes no upstream data."""
        return self.data_in is None

    @property
    def is_actuation(self) -> bool:
        return str(self.task_args.get('actuation', '')).lower() == 'true'


@dataclass
class OrderingDirective:
    kind: str
    subjects: Tuple[str, str]


@dataclass
class ManagementDirective:
    kind: str
    subject: str
    payload: Dict[str, str] = field(default_factory=dict)


@dataclass
class PerfConstraint:
    """A user performance/cost bound, e.g. ``latency='200ms'``."""
    metric: str
    value: float
    unit: str = ''
    direction: str = 'upper'

    @property
    def limit(self) -> float:
        """Bound in canonical units: ms for times, req/s for throughput, function-seconds for cost."""
        return self.value * UNITS_BY_METRIC.get(self.metric, {}).get(self.unit, 1.0)

    def is_met(self, measured: float) -> bool:
        if self.direction == 'lower':
            return measured >= self.limit
        return measured <= self.limit

    def excess(self, measured: float) -> float:
        """Relative distance past the bound (0 when met)."""
        if self.is_met(measured) or self.limit <= 0:
            return 0.0
        return abs(measured - self.limit) / self.limit

    def describe(self) -> str:
        op = '>=' if self.direction == 'lower' else '<='
        return f"{self.metric} {op} {_format_number(self.value)}{self.unit}"


@dataclass
class ValidationIssue:
    rule: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.rule}: {self.subject}: {self.message}"


@dataclass
class TaskGraph:
    """The application program: tasks, orderings, directives and constraints."""
    tasks: List[TaskDef] = field(default_factory=list)
    orderings: List[OrderingDirective] = field(default_factory=list)
    directives: List[ManagementDirective] = field(default_factory=list)
    constraints: List[PerfConstraint] = field(default_factory=list)

    @property
    def task_names(self) -> List[str]:
        return [t.name for t in self.tasks]

    def task(self, name: str) -> TaskDef:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    def edges(self) -> List[Tuple[str, str]]:
        """Parent->child edges in declaration order."""
        declared = set(self.task_names)
        result = []
        for t in self.tasks:
            for child in t.children:
                if child in declared:
                    result.append((t.name, child))
        return result

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(self.task_names)
        for t in self.tasks:
            for child in t.children:
                graph.add_edge(t.name, child)
            for parent in t.parents:
                graph.add_edge(parent, t.name)
        return graph

    def directives_of(self, kind: str, subject: Optional[str] = None) -> List[ManagementDirective]:
        return [d for d in self.directives
                if d.kind == kind and (subject is None or d.subject == subject)]

    def place_directives(self) -> Dict[str, str]:
        return {d.subject: d.payload.get('location', '') for d in self.directives_of('Place')}

    def sync_all_tasks(self) -> List[str]:
        """Tasks carrying a ``Synchronize(task,'all')`` barrier."""
        return [o.subjects[0] for o in self.orderings
                if o.kind == 'Synchronize' and o.subjects[1] == 'all']


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_SPEC = [
    ('NUMBER', r'[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?[A-Za-z/]*'),
    ('IDENT', r'[A-Za-z_][A-Za-z0-9_]*'),
    ('STRING', r"'(?:[^'\\\n]|\\.)*'|\"(?:[^\"\\\n]|\\.)*\""),
    ('LPAREN', r'\('),
    ('RPAREN', r'\)'),
    ('LBRACK', r'\['),
    ('RBRACK', r'\]'),
    ('COMMA', r','),
    ('EQ', r'='),
    ('COMMENT', r'\#[^\n]*'),
    ('NEWLINE', r'\r?\n'),
    ('SKIP', r'[ \t\f\r]+'),
]
_TOKEN_RE = re.compile('|'.join(f'(?P<{name}>{pattern})' for name, pattern in _TOKEN_SPEC))
_ESCAPES = {'n': '\n', 't': '\t', '\\': '\\', "'": "'", '"': '"'}


def _unquote(text: str) -> str:
    body = text[1:-1]
    return re.sub(r'\\(.)', lambda m: _ESCAPES.get(m.group(1), m.group(1)), body)


def tokenize(source: str, path: Optional[str] = None) -> Iterator[Token]:
    """Split DSL source into tokens; newlines inside brackets are dropped."""
    line, line_start, depth, pos = 1, 0, 0, 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if match is None:
            char = source[pos]
            if char in '\'"':
                raise ParseError('unterminated string literal', line, col, path)
            raise ParseError(f"unexpected character {char!r}", line, col, path)
        kind, text = match.lastgroup, match.group()
        pos = match.end()
        if kind == 'NEWLINE':
            if depth == 0:
                yield Token('NEWLINE', '\n', line, col)
            line += 1
            line_start = pos
            continue
        if kind in ('SKIP', 'COMMENT'):
            continue
        if kind in ('LPAREN', 'LBRACK'):
            depth += 1
        elif kind in ('RPAREN', 'RBRACK'):
            depth = max(0, depth - 1)
        yield Token(kind, text, line, col)
    yield Token('EOF', '', line, pos - line_start + 1)


# ---------------------------------------------------------------------------
# Parser (syntax)
# ---------------------------------------------------------------------------

@dataclass
class Value:
    kind: str           # str | num | ident | none | list | kv
    data: Any
    line: int
    col: int
    key: Optional[str] = None


@dataclass
class Statement:
    name: str
    positional: List[Value]
    keywords: Dict[str, Value]
    line: int
    col: int


class _Parser:
    def __init__(self, source: str, path: Optional[str]):
        self.path = path
        self.tokens = list(tokenize(source, path))
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def error(self, message: str, token: Token) -> ParseError:
        return ParseError(message, token.line, token.col, self.path)

    def expect(self, kind: str, what: str) -> Token:
        token = self.peek()
        if token.kind != kind:
            found = token.text or token.kind.lower()
            raise self.error(f"expected {what}, found {found!r}", token)
        return self.advance()

    def parse(self) -> List[Statement]:
        statements = []
        while self.peek().kind != 'EOF':
            if self.peek().kind == 'NEWLINE':
                self.advance()
                continue
            statements.append(self.statement())
            end = self.peek()
            if end.kind not in ('NEWLINE', 'EOF'):
                raise self.error('expected end of statement', end)
        return statements

    def statement(self) -> Statement:
        head = self.expect('IDENT', 'statement name')
        if head.text not in STATEMENTS:
            raise self.error(f"unknown statement {head.text!r}", head)
        self.expect('LPAREN', "'('")
        positional: List[Value] = []
        keywords: Dict[str, Value] = {}
        while self.peek().kind != 'RPAREN':
            arg = self.argument()
            if arg.kind == 'kv':
                if arg.key in keywords:
                    raise ParseError(f"duplicate argument {arg.key!r}", arg.line, arg.col, self.path)
                keywords[arg.key] = arg.data
            elif keywords:
                raise ParseError('positional argument after keyword argument',
                                 arg.line, arg.col, self.path)
            else:
                positional.append(arg)
            if self.peek().kind == 'COMMA':
                self.advance()
            elif self.peek().kind != 'RPAREN':
                raise self.error("expected ',' or ')'", self.peek())
        self.advance()
        return Statement(head.text, positional, keywords, head.line, head.col)

    def argument(self) -> Value:
        token = self.peek()
        if token.kind == 'IDENT' and self.tokens[self.pos + 1].kind == 'EQ':
            self.advance()
            self.advance()
            value = self.value()
            return Value('kv', value, token.line, token.col, key=token.text)
        return self.value()

    def value(self) -> Value:
        token = self.advance()
        if token.kind == 'STRING':
            return Value('str', _unquote(token.text), token.line, token.col)
        if token.kind == 'NUMBER':
            return Value('num', token.text, token.line, token.col)
        if token.kind == 'IDENT':
            if token.text == 'None':
                return Value('none', None, token.line, token.col)
            return Value('ident', token.text, token.line, token.col)
        if token.kind == 'LBRACK':
            items = []
            while self.peek().kind != 'RBRACK':
                items.append(self.argument())
                if self.peek().kind == 'COMMA':
                    self.advance()
                elif self.peek().kind != 'RBRACK':
                    raise self.error("expected ',' or ']'", self.peek())
            self.advance()
            return Value('list', items, token.line, token.col)
        found = token.text or token.kind.lower()
        raise self.error(f"expected a value, found {found!r}", token)


# ---------------------------------------------------------------------------
# Graph construction (statement semantics)
# ---------------------------------------------------------------------------

class _Builder:
    """Turns parsed statements into a TaskGraph, collecting semantic issues."""

    def __init__(self, statements: List[Statement], path: Optional[str]):
        self.statements = statements
        self.path = path
        self.issues: List[ValidationIssue] = []

    def fail(self, message: str, node: Any) -> ParseError:
        return ParseError(message, node.line, node.col, self.path)

    def scalar(self, value: Value, what: str, allow_none: bool = False) -> Optional[str]:
        if value.kind == 'none' and allow_none:
            return None
        if value.kind in ('str', 'ident', 'num'):
            return str(value.data)
        raise self.fail(f"{what} must be a scalar value", value)

    def name(self, value: Value, what: str = 'task name') -> str:
        if value.kind not in ('str', 'ident'):
            raise self.fail(f"{what} must be an identifier or string", value)
        return value.data

    def name_list(self, value: Value, what: str) -> Optional[List[str]]:
        if value.kind == 'none':
            return []
        if value.kind != 'list':
            raise self.fail(f"{what} must be a list of task names", value)
        names = []
        for item in value.data:
            if item.kind == 'kv':
                raise self.fail(f"{what} entries must be task names", item)
            names.append(self.name(item))
        return names

    def build(self) -> TaskGraph:
        graph_stmts = [s for s in self.statements if s.name == 'TaskGraph']
        if not graph_stmts:
            line, col = (1, 1)
            raise ParseError('missing TaskGraph statement', line, col, self.path)
        if len(graph_stmts) > 1:
            raise self.fail('duplicate TaskGraph statement', graph_stmts[1])
        header = graph_stmts[0]
        listed, constraints = self.task_graph(header)
        header_index = self.statements.index(header)

        declared: Dict[str, Tuple[TaskDef, bool, bool]] = {}
        orderings: List[OrderingDirective] = []
        directives: List[ManagementDirective] = []
        for index, stmt in enumerate(self.statements):
            if stmt.name == 'Task':
                task, parents_given, children_given = self.task(stmt)
                if task.name in listed and index < header_index:
                    raise self.fail(f"Task {task.name!r} appears before the TaskGraph "
                                    f"statement that lists it", stmt)
                if task.name in declared:
                    self.issues.append(ValidationIssue('duplicate task', task.name,
                                                       'task declared more than once'))
                    continue
                declared[task.name] = (task, parents_given, children_given)
                if 'sync' in stmt.keywords:
                    condition = self.scalar(stmt.keywords['sync'], 'sync')
                    orderings.append(OrderingDirective('Synchronize', (task.name, condition)))
            elif stmt.name in ORDERING_KINDS:
                orderings.append(self.ordering(stmt))
            elif stmt.name in DIRECTIVE_KINDS:
                directives.append(self.directive(stmt))

        for name in listed:
            if name not in declared:
                self.issues.append(ValidationIssue('undeclared task', name,
                                                   'listed in TaskGraph but has no Task statement'))
        for name in declared:
            if name not in listed:
                self.issues.append(ValidationIssue('unlisted task', name,
                                                   'Task statement not listed in TaskGraph'))

        ordered = [declared[name] for name in listed if name in declared]
        tasks = self.link(ordered, set(declared))
        return TaskGraph(tasks=tasks, orderings=orderings, directives=directives,
                         constraints=constraints)

    def task_graph(self, stmt: Statement) -> Tuple[List[str], List[PerfConstraint]]:
        args = dict(stmt.keywords)
        for key, value in zip(('list', 'constraint'), stmt.positional):
            args[key] = value
        if len(stmt.positional) > 2:
            raise self.fail('TaskGraph takes at most two arguments', stmt.positional[2])
        unknown = set(args) - {'list', 'constraint'}
        if unknown:
            raise self.fail(f"unknown TaskGraph argument {sorted(unknown)[0]!r}", stmt)
        listed = self.name_list(args['list'], 'TaskGraph list') if 'list' in args else []
        constraints = []
        if 'constraint' in args:
            value = args['constraint']
            if value.kind not in ('list', 'none'):
                raise self.fail('constraint must be a list', value)
            for item in (value.data if value.kind == 'list' else []):
                constraints.append(self.constraint(item))
        return listed, constraints

    def constraint(self, item: Value) -> PerfConstraint:
        if item.kind != 'kv':
            raise self.fail("constraint entries must look like metric='bound'", item)
        metric = METRIC_BY_SPELLING.get(item.key)
        if metric is None:
            raise self.fail(f"unknown constraint metric {item.key!r}", item)
        text = self.scalar(item.data, 'constraint bound')
        match = _BOUND.match(text)
        if match is None:
            raise self.fail(f"malformed bound {text!r}", item.data)
        unit = match.group(2)
        if unit not in UNITS_BY_METRIC[metric]:
            raise self.fail(f"unit {unit!r} not valid for {item.key}", item.data)
        bound = float(match.group(1))
        if not math.isfinite(bound):
            raise self.fail(f"bound {text!r} is not a finite number", item.data)
        return PerfConstraint(metric=metric, value=bound, unit=unit,
                              direction=METRICS[metric][1])

    def task(self, stmt: Statement) -> Tuple[TaskDef, bool, bool]:
        if not stmt.positional:
            raise self.fail('Task requires a name', stmt)
        if len(stmt.positional) > 4:
            raise self.fail('Task takes at most four positional arguments '
                            '(name, dataIn, dataOut, code)', stmt.positional[4])
        pos = stmt.positional + [None] * (4 - len(stmt.positional))
        name = self.name(pos[0])
        data_in = self.scalar(pos[1], 'dataIn', allow_none=True) if pos[1] else None
        data_out = self.scalar(pos[2], 'dataOut', allow_none=True) if pos[2] else None
        code_ref = (self.scalar(pos[3], 'code', allow_none=True) or '') if pos[3] else ''
        task_args = {}
        parents: List[str] = []
        children: List[str] = []
        for key, value in stmt.keywords.items():
            if key == 'parentTask':
                parents = self.name_list(value, 'parentTask')
            elif key == 'childTask':
                children = self.name_list(value, 'childTask')
            elif key == 'sync':
                continue
            else:
                arg = self.scalar(value, f"task argument {key!r}", allow_none=True)
                task_args[key] = 'None' if arg is None else arg
        task = TaskDef(name=name, data_in=data_in, data_out=data_out, code_ref=code_ref,
                       task_args=task_args, parents=parents, children=children)
        return task, 'parentTask' in stmt.keywords, 'childTask' in stmt.keywords

    def ordering(self, stmt: Statement) -> OrderingDirective:
        if stmt.name == 'Synchronize':
            if not stmt.positional:
                raise self.fail('Synchronize requires a task', stmt)
            subject = self.name(stmt.positional[0])
            if len(stmt.positional) > 2:
                raise self.fail('Synchronize takes a task and a condition', stmt.positional[2])
            if len(stmt.positional) == 2:
                condition = self.scalar(stmt.positional[1], 'condition')
            elif 'condition' in stmt.keywords:
                condition = self.scalar(stmt.keywords['condition'], 'condition')
            else:
                raise self.fail('Synchronize requires a condition', stmt)
            return OrderingDirective('Synchronize', (subject, condition))
        if len(stmt.positional) != 2 or stmt.keywords:
            raise self.fail(f"{stmt.name} takes exactly two task names", stmt)
        return OrderingDirective(stmt.name, (self.name(stmt.positional[0]),
                                             self.name(stmt.positional[1])))

    def directive(self, stmt: Statement) -> ManagementDirective:
        if not stmt.positional:
            raise self.fail(f"{stmt.name} requires a task", stmt)
        subject = self.name(stmt.positional[0])
        payload = {}
        extra = stmt.positional[1:]
        payload_key = POSITIONAL_PAYLOAD.get(stmt.name)
        if extra:
            if payload_key is None or len(extra) > 1:
                raise self.fail(f"too many positional arguments for {stmt.name}", extra[-1])
            payload[payload_key] = self.scalar(extra[0], payload_key)
        for key, value in stmt.keywords.items():
            if key in payload:
                raise self.fail(f"duplicate argument {key!r}", value)
            payload[key] = self.scalar(value, key)
        return ManagementDirective(stmt.name, subject, payload)

    def link(self, ordered: List[Tuple[TaskDef, bool, bool]], declared: set) -> List[TaskDef]:
        """Merge parent/child declarations into a consistent, complete edge set."""
        by_name = {task.name: (task, pg, cg) for task, pg, cg in ordered}
        edges = set()
        for task, _, _ in ordered:
            for parent in task.parents:
                edges.add((parent, task.name))
            for child in task.children:
                edges.add((task.name, child))
        for parent, child in sorted(edges):
            for endpoint in (parent, child):
                if endpoint not in declared:
                    self.issues.append(ValidationIssue(
                        'undeclared task', endpoint, f"referenced by edge {parent}->{child}"))
            if parent in by_name and child in by_name:
                ptask, _, children_given = by_name[parent]
                ctask, parents_given, _ = by_name[child]
                if children_given and child not in ptask.children:
                    self.issues.append(ValidationIssue(
                        'inconsistent edge', f"{parent}->{child}",
                        f"{child} lists {parent} as parent but {parent} does not list it as child"))
                if parents_given and parent not in ctask.parents:
                    self.issues.append(ValidationIssue(
                        'inconsistent edge', f"{parent}->{child}",
                        f"{parent} lists {child} as child but {child} does not list it as parent"))
        order = [task.name for task, _, _ in ordered]
        tasks = []
        for task, _, _ in ordered:
            task.parents = [n for n in order if (n, task.name) in edges]
            task.children = [n for n in order if (task.name, n) in edges]
            tasks.append(task)
        return tasks


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def parse_program(source_text: str, path: Optional[str] = None) -> TaskGraph:
    """
    Parse and validate a DSL program.

    Args:
        source_text: Program text
        path: Optional file name used in error locations

    Returns:
        The TaskGraph

    Raises:
        ParseError: syntax errors, with line/column
        ValidationError: semantic violations (undeclared task, cycle, conflicts)
    """
    try:
        statements = _Parser(source_text, path).parse()
        builder = _Builder(statements, path)
        graph = builder.build()
    except RecursionError:
        raise ParseError('nesting too deep', 1, 1, path) from None
    issues = builder.issues + [i for i in validate(graph) if i not in builder.issues]
    if issues:
        raise ValidationError(issues)
    logger.debug(f"Parsed program with {len(graph.tasks)} task(s)")
    return graph


def load_program(path: str) -> TaskGraph:
    """
    Read and parse a ``.hive`` file.

    Raises:
        OSError: file cannot be read
        ParseError / ValidationError: as parse_program
    """
    raw = Path(path).read_bytes()
    try:
        text = raw.decode('utf-8')
    except UnicodeDecodeError as e:
        line = raw.count(b'\n', 0, e.start) + 1
        col = e.start - (raw.rfind(b'\n', 0, e.start) + 1) + 1
        raise ParseError('invalid UTF-8', line, col, str(path)) from None
    return parse_program(text, str(path))


def parse_location(text: str) -> Optional[Tuple[str, Optional[Tuple[str, ...]]]]:
    """
    Parse a Place location: ``Cloud``, ``Edge:all`` or ``Edge:<id>,<id>``.

    Returns:
        (kind, scope) with scope ('all',) or the device ids; None when malformed
    """
    if text == 'Cloud':
        return 'Cloud', None
    if text.startswith('Edge:'):
        scope = tuple(part.strip() for part in text[5:].split(',') if part.strip())
        if scope:
            return 'Edge', scope
    return None


def validate(graph: TaskGraph) -> List[ValidationIssue]:
    """
    Check every TaskGraph invariant.

    Args:
        graph: A structurally parsed graph

    Returns:
        List of issues; empty iff the graph is valid
    """
    issues: List[ValidationIssue] = []
    names = graph.task_names
    declared = set(names)
    by_name = {t.name: t for t in graph.tasks}

    seen = set()
    for name in names:
        if name in seen:
            issues.append(ValidationIssue('duplicate task', name, 'task declared more than once'))
        seen.add(name)

    for task in graph.tasks:
        for ref in task.parents + task.children:
            if ref not in declared:
                issues.append(ValidationIssue('undeclared task', ref,
                                              f"referenced by task {task.name}"))
        for child in task.children:
            if child in by_name and task.name not in by_name[child].parents:
                issues.append(ValidationIssue('inconsistent edge', f"{task.name}->{child}",
                                              f"{child} does not list {task.name} as parent"))
        for parent in task.parents:
            if parent in by_name and task.name not in by_name[parent].children:
                issues.append(ValidationIssue('inconsistent edge', f"{parent}->{task.name}",
                                              f"{parent} does not list {task.name} as child"))

    dag = graph.to_networkx()
    dag.remove_nodes_from([n for n in list(dag.nodes) if n not in declared])
    if not nx.is_directed_acyclic_graph(dag):
        cycle = nx.find_cycle(dag)
        path = ' -> '.join([u for u, _ in cycle] + [cycle[0][0]])
        issues.append(ValidationIssue('cycle', cycle[0][0], f"cycle {path}"))

    for task in graph.tasks:
        if task.data_in is None or not task.parents:
            continue
        kinds = {by_name[p].data_out for p in task.parents if p in by_name}
        if task.data_in not in kinds:
            issues.append(ValidationIssue(
                'data kind mismatch', task.name,
                f"dataIn {task.data_in!r} matches no parent dataOut {sorted(k or 'None' for k in kinds)}"))

    pair_kinds: Dict[frozenset, List[str]] = {}
    for ordering in graph.orderings:
        refs = ordering.subjects[:1] if ordering.kind == 'Synchronize' else ordering.subjects
        missing = [r for r in refs if r not in declared]
        for ref in missing:
            issues.append(ValidationIssue('undeclared task', ref, f"referenced by {ordering.kind}"))
        if ordering.kind in PAIR_ORDERINGS and not missing:
            pair_kinds.setdefault(frozenset(ordering.subjects), []).append(ordering.kind)
    for pair, kinds in pair_kinds.items():
        subject = ','.join(sorted(pair))
        if len(set(kinds)) > 1:
            issues.append(ValidationIssue('conflicting ordering', subject,
                                          f"pair carries {' and '.join(sorted(set(kinds)))}"))
        elif len(kinds) > 1:
            issues.append(ValidationIssue('duplicate ordering', subject,
                                          f"{kinds[0]} declared {len(kinds)} times"))

    places: Dict[str, int] = {}
    for directive in graph.directives:
        subject = directive.subject
        if subject not in declared:
            issues.append(ValidationIssue('undeclared task', subject,
                                          f"referenced by {directive.kind}"))
            continue
        issues.extend(_check_payload(directive, by_name[subject]))
        if directive.kind == 'Place':
            places[subject] = places.get(subject, 0) + 1
    for subject, count in places.items():
        if count > 1:
            issues.append(ValidationIssue('duplicate place', subject,
                                          f"{count} Place directives for one task"))

    for constraint in graph.constraints:
        if constraint.metric not in METRICS:
            issues.append(ValidationIssue('unknown metric', constraint.metric,
                                          'constraint metric not recognized'))
        if not constraint.value > 0:
            issues.append(ValidationIssue('nonpositive bound', constraint.metric,
                                          f"bound {constraint.describe()} must be > 0"))
    return issues


def _check_payload(directive: ManagementDirective, task: TaskDef) -> List[ValidationIssue]:
    issues = []
    payload = directive.payload
    kind = directive.kind
    if kind == 'Place':
        location = parse_location(payload.get('location', ''))
        if location is None:
            issues.append(ValidationIssue('invalid directive payload', task.name,
                                          f"bad Place location {payload.get('location')!r}"))
        elif location[0] == 'Cloud' and task.is_source:
            issues.append(ValidationIssue('source task must run on edge', task.name,
                                          'sensor source cannot be placed in the cloud'))
        elif location[0] == 'Cloud' and task.is_actuation:
            issues.append(ValidationIssue('actuation task must run on edge', task.name,
                                          'actuation task cannot be placed in the cloud'))
    elif kind == 'Learn':
        if payload.get('scope') not in LEARN_SCOPES:
            issues.append(ValidationIssue('invalid directive payload', task.name,
                                          f"Learn scope must be one of {', '.join(LEARN_SCOPES)}"))
    elif kind == 'Restore':
        if payload.get('policy', 'respawn') not in RESTORE_POLICIES:
            issues.append(ValidationIssue('invalid directive payload', task.name,
                                          f"Restore policy must be one of {', '.join(RESTORE_POLICIES)}"))
    elif kind == 'Schedule':
        if payload.get('priority', 'normal') not in SCHEDULE_PRIORITIES:
            issues.append(ValidationIssue('invalid directive payload', task.name,
                                          f"priority must be one of {', '.join(SCHEDULE_PRIORITIES)}"))
        if 'nodes' in payload and parse_node_set(payload['nodes']) is None:
            issues.append(ValidationIssue('invalid directive payload', task.name,
                                          f"bad node set {payload['nodes']!r}"))
    return issues


def parse_node_set(text: str) -> Optional[List[int]]:
    """Parse ``'0,2,5'`` or ``'0-3'`` into node indices."""
    nodes: List[int] = []
    try:
        for part in text.split(','):
            part = part.strip()
            if '-' in part:
                lo, hi = (int(p) for p in part.split('-', 1))
                if hi < lo:
                    return None
                nodes.extend(range(lo, hi + 1))
            else:
                nodes.append(int(part))
    except ValueError:
        return None
    return nodes if nodes and min(nodes) >= 0 else None


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _format_number(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def _quote(text: str) -> str:
    return "'" + text.replace('\\', '\\\\').replace("'", "\\'").replace('\n', '\\n') + "'"


def _bare_or_quoted(text: Optional[str]) -> str:
    if text is None:
        return 'None'
    if IDENTIFIER.match(text) and text != 'None':
        return text
    return _quote(text)


def _name_list(names: Sequence[str]) -> str:
    return '[' + ','.join(_quote(n) for n in names) + ']'


def render_program(graph: TaskGraph) -> str:
    """
    Render a graph back to DSL text.

    parse_program(render_program(g)) is structurally equal to g for valid g.
    """
    lines = []
    constraints = ','.join(
        f"{METRICS[c.metric][0]}={_quote(_format_number(c.value) + c.unit)}"
        for c in graph.constraints)
    lines.append(f"TaskGraph(list={_name_list(graph.task_names)},constraint=[{constraints}])")
    for task in graph.tasks:
        parts = [_bare_or_quoted(task.name), _bare_or_quoted(task.data_in),
                 _bare_or_quoted(task.data_out), _quote(task.code_ref)]
        parts += [f"{key}={_quote(value)}" for key, value in task.task_args.items()]
        parts.append(f"parentTask={_name_list(task.parents)}")
        parts.append(f"childTask={_name_list(task.children)}")
        lines.append(f"Task({','.join(parts)})")
    for ordering in graph.orderings:
        first, second = ordering.subjects
        second_text = _quote(second) if ordering.kind == 'Synchronize' else _bare_or_quoted(second)
        lines.append(f"{ordering.kind}({_bare_or_quoted(first)},{second_text})")
    for directive in graph.directives:
        parts = [_bare_or_quoted(directive.subject)]
        payload = dict(directive.payload)
        positional_key = POSITIONAL_PAYLOAD.get(directive.kind)
        if positional_key and positional_key in payload:
            parts.append(_quote(payload.pop(positional_key)))
        parts += [f"{key}={_quote(value)}" for key, value in payload.items()]
        lines.append(f"{directive.kind}({','.join(parts)})")
    return '\n'.join(lines) + '\n'
