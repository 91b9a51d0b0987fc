"""
Tests for the task-graph DSL: parsing, validation and rendering.
"""

import random
from collections import deque

import pytest

from conftest import random_dag
from hivesim.dsl import (PerfConstraint, TaskDef, TaskGraph, load_program, parse_location,
                         parse_node_set, parse_program, render_program, validate)
from hivesim.errors import ParseError, ValidationError

PROGRAM = """TaskGraph(list=['a','b'],constraint=[{constraint}])
Task(a,None,x,'code/a',parentTask=None,childTask=['b'])
Task(b,{data_in},y,'code/b',parentTask=['a'],childTask=[])
{extra}
"""


def program(constraint: str = '', data_in: str = 'x', extra: str = '') -> str:
    return PROGRAM.format(constraint=constraint, data_in=data_in, extra=extra)


def rules(text: str) -> set:
    with pytest.raises(ValidationError) as info:
        parse_program(text)
    return {issue.rule for issue in info.value.issues}


def kahn_has_cycle(graph: TaskGraph) -> bool:
    indegree = {t.name: 0 for t in graph.tasks}
    for t in graph.tasks:
        for child in t.children:
            indegree[child] += 1
    ready = deque(name for name, d in indegree.items() if d == 0)
    seen = 0
    while ready:
        name = ready.popleft()
        seen += 1
        for child in graph.task(name).children:
            indegree[child] -= 1
            if indegree[child] == 0:
                ready.append(child)
    return seen != len(graph.tasks)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def test_scenario_b_parses(scenario_dir):
    graph = load_program(str(scenario_dir / 'scenario_b.hive'))
    assert graph.task_names == ['createRoute', 'collectImage', 'obstacleAvoidance',
                                'faceRecognition', 'deduplication']
    assert len(graph.edges()) == 4
    assert len(graph.orderings) + len(graph.directives) == 7
    assert graph.sync_all_tasks() == ['deduplication']
    assert graph.place_directives() == {'obstacleAvoidance': 'Edge:all'}
    assert graph.task('collectImage').is_source
    assert graph.task('createRoute').task_args['load_balancer'] == 'round robin'
    assert [c.describe() for c in graph.constraints] == ['exec_time <= 10s']


def test_parents_are_completed_from_children():
    text = """TaskGraph(list=['a','b'])
Task(a,None,x,'code/a',childTask=['b'])
Task(b,x,y,'code/b')
"""
    graph = parse_program(text)
    assert graph.task('b').parents == ['a']
    assert graph.edges() == [('a', 'b')]


def test_every_builtin_program_is_valid(scenario_dir):
    for path in sorted(scenario_dir.glob('*.hive')):
        graph = load_program(str(path))
        assert graph.tasks, path.name
        assert validate(graph) == []


def test_parse_error_reports_line_and_column():
    with pytest.raises(ParseError) as info:
        parse_program("TaskGraph(list=['a'])\nTask(a None)\n")
    error = info.value
    assert (error.line, error.col) == (2, 8)
    assert error.format() == "<input>:2:8: expected ',' or ')'"


def test_unterminated_string_points_at_quote():
    with pytest.raises(ParseError) as info:
        parse_program("TaskGraph(list=['a)", path='broken.hive')
    assert (info.value.line, info.value.col) == (1, 17)
    assert info.value.format().startswith('broken.hive:1:17: unterminated string literal')


def test_unknown_statement():
    with pytest.raises(ParseError) as info:
        parse_program("TaskGraph(list=[])\nFoo(a)\n")
    assert (info.value.line, info.value.col) == (2, 1)
    assert 'Foo' in info.value.message


def test_missing_taskgraph():
    with pytest.raises(ParseError, match='missing TaskGraph'):
        parse_program("Task(a,None,x,'c')\n")


def test_unknown_constraint_metric_is_a_syntax_error():
    with pytest.raises(ParseError, match='unknown constraint metric'):
        parse_program(program(constraint="speed='3ms'"))


@pytest.mark.parametrize('bound', ["latency='1e999ms'", "throughput='-1e400rps'"])
def test_non_finite_bound_is_a_syntax_error(bound):
    with pytest.raises(ParseError, match='not a finite number'):
        parse_program(program(constraint=bound))


def test_invalid_utf8(tmp_path):
    path = tmp_path / 'bad.hive'
    path.write_bytes(b"TaskGraph(list=[])\n\xff\n")
    with pytest.raises(ParseError) as info:
        load_program(str(path))
    assert (info.value.line, info.value.col) == (2, 1)


def test_comments_and_continuations():
    text = """# leading comment
TaskGraph(list=['a',
                'b'])  # trailing
Task(a,None,x,'code/a',parentTask=None,
     childTask=['b'])
Task(b,x,y,'code/b',parentTask=['a'],childTask=[])
"""
    assert parse_program(text).task_names == ['a', 'b']


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def test_valid_program_has_no_issues():
    graph = parse_program(program(constraint="latency='200ms'", extra="Place(b,'Cloud')"))
    assert graph.constraints[0].limit == 200.0


def test_undeclared_task():
    text = """TaskGraph(list=['a','b'])
Task(a,None,x,'code/a',parentTask=None,childTask=[])
"""
    assert 'undeclared task' in rules(text)


def test_unlisted_task():
    text = program(extra="Task(c,y,z,'code/c',parentTask=None,childTask=[])")
    assert 'unlisted task' in rules(text)


def test_duplicate_task():
    text = program(extra="Task(b,x,y,'code/b2',parentTask=['a'],childTask=[])")
    assert 'duplicate task' in rules(text)


def test_inconsistent_edge():
    text = """TaskGraph(list=['a','b'])
Task(a,None,x,'code/a',parentTask=None,childTask=[])
Task(b,x,y,'code/b',parentTask=['a'],childTask=[])
"""
    assert 'inconsistent edge' in rules(text)


def test_cycle():
    text = """TaskGraph(list=['a','b','c'])
Task(a,None,x,'code/a',parentTask=None,childTask=['b'])
Task(b,x,y,'code/b',parentTask=['a','c'],childTask=['c'])
Task(c,y,x,'code/c',parentTask=['b'],childTask=['b'])
"""
    assert 'cycle' in rules(text)


def test_data_kind_mismatch():
    assert rules(program(data_in='z')) == {'data kind mismatch'}


def test_conflicting_and_duplicate_orderings():
    assert 'conflicting ordering' in rules(program(extra='Parallel(a,b)\nSerial(b,a)'))
    assert 'duplicate ordering' in rules(program(extra='Serial(a,b)\nSerial(a,b)'))


def test_duplicate_place():
    assert 'duplicate place' in rules(program(extra="Place(b,'Cloud')\nPlace(b,'Edge:all')"))


def test_source_task_cannot_go_to_cloud():
    assert rules(program(extra="Place(a,'Cloud')")) == {'source task must run on edge'}


def test_actuation_task_cannot_go_to_cloud():
    text = """TaskGraph(list=['a','b'])
Task(a,None,x,'code/a',parentTask=None,childTask=['b'])
Task(b,x,y,'code/b',actuation='true',parentTask=['a'],childTask=[])
Place(b,'Cloud')
"""
    assert rules(text) == {'actuation task must run on edge'}


@pytest.mark.parametrize('directive', [
    "Learn(b,'Everywhere')",
    "Restore(b,policy='retry')",
    "Schedule(b,priority='urgent')",
    "Schedule(b,nodes='4-1')",
    "Place(b,'Moon')",
])
def test_invalid_directive_payload(directive):
    assert rules(program(extra=directive)) == {'invalid directive payload'}


def test_nonpositive_bound():
    assert rules(program(constraint="latency='0ms'")) == {'nonpositive bound'}


def test_unknown_metric_on_constructed_graph():
    graph = parse_program(program())
    graph.constraints.append(PerfConstraint('speed', 1.0))
    assert [i.rule for i in validate(graph)] == ['unknown metric']


def test_validation_error_lists_every_issue():
    text = program(data_in='z', extra="Place(a,'Cloud')\nLearn(b,'Everywhere')")
    assert rules(text) == {'data kind mismatch', 'source task must run on edge',
                           'invalid directive payload'}


def test_cycle_detection_matches_topological_sort():
    rnd = random.Random(7)
    cyclic = 0
    for _ in range(300):
        size = rnd.randint(1, 12)
        names = [f"t{i}" for i in range(size)]
        parents = {n: [] for n in names}
        children = {n: [] for n in names}
        for i in range(size):
            for j in range(size):
                if i != j and rnd.random() < 0.12:
                    children[names[i]].append(names[j])
                    parents[names[j]].append(names[i])
        graph = TaskGraph(tasks=[
            TaskDef(n, None if not parents[n] else 'd', 'd', '', {}, parents[n], children[n])
            for n in names])
        expected = kahn_has_cycle(graph)
        cyclic += expected
        assert ('cycle' in {i.rule for i in validate(graph)}) == expected
    assert 0 < cyclic < 300


# ---------------------------------------------------------------------------
# Rendering and helpers
# ---------------------------------------------------------------------------

def test_render_round_trip(scenario_dir):
    graph = load_program(str(scenario_dir / 'scenario_b.hive'))
    assert parse_program(render_program(graph)) == graph


def test_render_round_trip_random_graphs():
    rnd = random.Random(11)
    for _ in range(50):
        graph = random_dag(rnd, rnd.randint(1, 10))
        assert validate(graph) == []
        assert parse_program(render_program(graph)) == graph


def test_render_quotes_awkward_names():
    text = """TaskGraph(list=['step one','b'],constraint=[throughput='10req/s'])
Task('step one',None,x,'code/a',note='it\\'s',parentTask=None,childTask=['b'])
Task(b,x,y,'code/b',parentTask=['step one'],childTask=[])
"""
    graph = parse_program(text)
    assert graph.task('step one').task_args['note'] == "it's"
    assert parse_program(render_program(graph)) == graph


def test_parse_location():
    assert parse_location('Cloud') == ('Cloud', None)
    assert parse_location('Edge:all') == ('Edge', ('all',))
    assert parse_location('Edge:d0, d3') == ('Edge', ('d0', 'd3'))
    assert parse_location('Edge:') is None
    assert parse_location('Fog') is None


def test_parse_node_set():
    assert parse_node_set('0,2,5') == [0, 2, 5]
    assert parse_node_set('0-3') == [0, 1, 2, 3]
    assert parse_node_set('3-1') is None
    assert parse_node_set('x') is None


def test_constraint_units_and_directions():
    latency = PerfConstraint('latency', 5, 's')
    assert latency.limit == 5000.0
    assert latency.is_met(4999.0) and not latency.is_met(5001.0)
    assert latency.excess(6000.0) == pytest.approx(0.2)
    throughput = PerfConstraint('throughput', 10, 'req/s', 'lower')
    assert throughput.is_met(12.0) and not throughput.is_met(8.0)
    assert throughput.excess(8.0) == pytest.approx(0.2)
