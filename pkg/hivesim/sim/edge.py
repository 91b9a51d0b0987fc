"""
Edge devices: field model, region partitioning, coverage routing, battery and repartitioning.

The field is a grid of camera-footprint cells. Each device sweeps its region
in boustrophedon order, with A* legs between consecutive cells.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx

from hivesim.config import DeviceClass
from hivesim.errors import MissionInfeasible, UnreachableCell
from hivesim.sim.kernel import RngStream, ServiceStation
from hivesim.utils import chunk_sizes, closest_factors

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]  # (col, row)

CELL_W = 6.7
CELL_H = 8.75


# ---------------------------------------------------------------------------
# Field
# ---------------------------------------------------------------------------

@dataclass
class Target:
    """An item (static) or a person (random-waypoint walker)."""
    target_id: str
    kind: str
    x: float
    y: float
    max_speed: float = 0.0
    stream: Optional[RngStream] = None
    _t0: float = 0.0
    _from: Tuple[float, float] = (0.0, 0.0)
    _to: Tuple[float, float] = (0.0, 0.0)
    _speed: float = 0.0
    _t1: float = 0.0
    _started: bool = False

    def position(self, t_s: float, bounds: Tuple[float, float]) -> Tuple[float, float]:
        """Position at t_s; queries must be nondecreasing in time for moving targets."""
        if self.max_speed <= 0 or self.stream is None:
            return self.x, self.y
        if not self._started:
            self._started = True
            self._from = (self.x, self.y)
            self._next_leg(0.0, bounds)
        while t_s >= self._t1:
            self._from = self._to
            self._next_leg(self._t1, bounds)
        frac = (t_s - self._t0) / (self._t1 - self._t0)
        return (self._from[0] + frac * (self._to[0] - self._from[0]),
                self._from[1] + frac * (self._to[1] - self._from[1]))

    def _next_leg(self, start: float, bounds: Tuple[float, float]) -> None:
        width, height = bounds
        self._t0 = start
        self._to = (self.stream.uniform(0, width), self.stream.uniform(0, height))
        self._speed = self.stream.uniform(0.3 * self.max_speed, self.max_speed)
        distance = math.dist(self._from, self._to)
        self._t1 = start + max(distance / self._speed, 1.0)


@dataclass
class FieldModel:
    cols: int
    rows: int
    cell_w: float = CELL_W
    cell_h: float = CELL_H
    obstacles: Set[Cell] = field(default_factory=set)
    targets: List[Target] = field(default_factory=list)

    @property
    def width(self) -> float:
        return self.cols * self.cell_w

    @property
    def height(self) -> float:
        return self.rows * self.cell_h

    @property
    def area(self) -> float:
        return self.width * self.height

    def cell_center(self, cell: Cell) -> Tuple[float, float]:
        return (cell[0] + 0.5) * self.cell_w, (cell[1] + 0.5) * self.cell_h

    def cell_of(self, x: float, y: float) -> Cell:
        col = min(self.cols - 1, max(0, int(x // self.cell_w)))
        row = min(self.rows - 1, max(0, int(y // self.cell_h)))
        return col, row

    def cells(self) -> List[Cell]:
        return [(c, r) for r in range(self.rows) for c in range(self.cols)]

    def free_cells(self) -> List[Cell]:
        return [cell for cell in self.cells() if cell not in self.obstacles]

    def in_footprint(self, x: float, y: float, tx: float, ty: float) -> bool:
        return abs(tx - x) <= self.cell_w / 2 and abs(ty - y) <= self.cell_h / 2

    def visible(self, x: float, y: float, t_s: float) -> List[str]:
        """Ids of targets inside the camera footprint centred at (x, y)."""
        bounds = (self.width, self.height)
        seen = []
        for target in self.targets:
            tx, ty = target.position(t_s, bounds)
            if self.in_footprint(x, y, tx, ty):
                seen.append(target.target_id)
        return seen

    def obstacle_cells_from_rects(self, rects: Iterable[Sequence[float]]) -> Set[Cell]:
        """Cells whose centre lies inside any [x0, y0, x1, y1] rectangle."""
        cells = set()
        for x0, y0, x1, y1 in rects:
            for cell in self.cells():
                cx, cy = self.cell_center(cell)
                if x0 <= cx <= x1 and y0 <= cy <= y1:
                    cells.add(cell)
        return cells


def build_field(devices: int, cells_per_device: int = 16,
                cell_w: float = CELL_W, cell_h: float = CELL_H) -> FieldModel:
    """Field sized so each device's region is a cells_per_device block."""
    region_rows, region_cols = closest_factors(devices)
    block_rows, block_cols = closest_factors(cells_per_device)
    return FieldModel(cols=region_cols * block_cols, rows=region_rows * block_rows,
                      cell_w=cell_w, cell_h=cell_h)


def place_items(field_model: FieldModel, count: int, stream: RngStream,
                margin: float = 1.0) -> List[Target]:
    """Static items, one per distinct free cell, at least `margin` metres inside it."""
    free = field_model.free_cells()
    chosen: List[Cell] = []
    while len(chosen) < min(count, len(free)):
        cell = free[stream.index(len(free))]
        if cell not in chosen:
            chosen.append(cell)
    items = []
    for i, cell in enumerate(chosen):
        x0, y0 = cell[0] * field_model.cell_w, cell[1] * field_model.cell_h
        x = x0 + stream.uniform(margin, field_model.cell_w - margin)
        y = y0 + stream.uniform(margin, field_model.cell_h - margin)
        items.append(Target(f"item-{i}", 'item', x, y))
    return items


def place_people(field_model: FieldModel, count: int, seed: int, max_speed: float = 1.5) -> List[Target]:
    people = []
    for i in range(count):
        stream = RngStream(seed, f"person-{i}")
        x = stream.uniform(0, field_model.width)
        y = stream.uniform(0, field_model.height)
        people.append(Target(f"person-{i}", 'person', x, y, max_speed=max_speed, stream=stream))
    return people


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------

@dataclass
class Region:
    device_id: str
    x0: float
    y0: float
    x1: float
    y1: float
    cells: List[Cell] = field(default_factory=list)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def distance_to(self, x: float, y: float) -> float:
        dx = max(self.x0 - x, 0.0, x - self.x1)
        dy = max(self.y0 - y, 0.0, y - self.y1)
        return math.hypot(dx, dy)


def partition_field(field_model: FieldModel, device_ids: Sequence[str]) -> Dict[str, Region]:
    """
    Split the field into equal-area rectangles, one per device.

    The region grid is the most square factorization of the device count;
    prime counts become strips. A cell belongs to the region holding its centre.

    Args:
        field_model: Field to divide
        device_ids: Alive devices, in assignment order

    Returns:
        device id -> Region
    """
    if not device_ids:
        raise ValueError('partition_field needs at least one device')
    grid_rows, grid_cols = closest_factors(len(device_ids))
    width = field_model.width / grid_cols
    height = field_model.height / grid_rows
    regions: Dict[str, Region] = {}
    for i, device_id in enumerate(device_ids):
        row, col = divmod(i, grid_cols)
        regions[device_id] = Region(device_id, col * width, row * height,
                                    (col + 1) * width, (row + 1) * height)
    for cell in field_model.free_cells():
        cx, cy = field_model.cell_center(cell)
        col = min(grid_cols - 1, int(cx // width))
        row = min(grid_rows - 1, int(cy // height))
        regions[device_ids[row * grid_cols + col]].cells.append(cell)
    for region in regions.values():
        region.cells = sweep_order(region.cells)
    return regions


def region_adjacency(regions: Dict[str, Region], eps: float = 1e-6) -> nx.Graph:
    """Devices whose regions share a boundary segment of positive length."""
    graph = nx.Graph()
    graph.add_nodes_from(regions)
    items = list(regions.items())
    for i, (a, ra) in enumerate(items):
        for b, rb in items[i + 1:]:
            vertical = (abs(ra.x1 - rb.x0) < eps or abs(rb.x1 - ra.x0) < eps) and \
                min(ra.y1, rb.y1) - max(ra.y0, rb.y0) > eps
            horizontal = (abs(ra.y1 - rb.y0) < eps or abs(rb.y1 - ra.y0) < eps) and \
                min(ra.x1, rb.x1) - max(ra.x0, rb.x0) > eps
            if vertical or horizontal:
                graph.add_edge(a, b)
    return graph


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------

def sweep_order(cells: Iterable[Cell]) -> List[Cell]:
    """Boustrophedon order: rows bottom-up, alternating column direction."""
    rows: Dict[int, List[Cell]] = {}
    for cell in cells:
        rows.setdefault(cell[1], []).append(cell)
    ordered = []
    for i, row in enumerate(sorted(rows)):
        line = sorted(rows[row])
        ordered.extend(line if i % 2 == 0 else reversed(line))
    return ordered


def grid_graph(cells: Iterable[Cell]) -> nx.Graph:
    """4-neighbourhood unit-cost graph over the given free cells."""
    cell_set = set(cells)
    graph = nx.Graph()
    graph.add_nodes_from(cell_set)
    for col, row in cell_set:
        for neighbour in ((col + 1, row), (col, row + 1)):
            if neighbour in cell_set:
                graph.add_edge((col, row), neighbour)
    return graph


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def astar_leg(graph: nx.Graph, start: Cell, goal: Cell) -> List[Cell]:
    """
    Shortest 4-neighbour path by A* with the Manhattan heuristic.

    Raises:
        UnreachableCell: no path between start and goal
    """
    try:
        return nx.astar_path(graph, start, goal, heuristic=manhattan)
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        raise UnreachableCell(f"cell {goal} unreachable from {start}") from None


@dataclass
class Waypoint:
    cell: Cell
    visit: bool


@dataclass
class Route:
    waypoints: List[Waypoint] = field(default_factory=list)
    dropped: List[Cell] = field(default_factory=list)

    @property
    def visits(self) -> List[Cell]:
        return [w.cell for w in self.waypoints if w.visit]

    @property
    def length_steps(self) -> int:
        return max(0, len(self.waypoints) - 1)

    def length_m(self, field_model: FieldModel) -> float:
        total = 0.0
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            total += abs(a.cell[0] - b.cell[0]) * field_model.cell_w
            total += abs(a.cell[1] - b.cell[1]) * field_model.cell_h
        return total


def plan_route(cells: Sequence[Cell], field_model: FieldModel, start: Optional[Cell] = None,
               allowed: Optional[Iterable[Cell]] = None) -> Route:
    """
    Coverage route visiting every given free cell once.

    Args:
        cells: Cells to visit
        field_model: Field (obstacles are never entered)
        start: Starting cell; defaults to the first cell of the sweep
        allowed: Cells legs may pass through; defaults to `cells`

    Returns:
        Route with visit/transit waypoints; cells disconnected from the start
        by obstacles are listed in `dropped`
    """
    targets = sweep_order(c for c in cells if c not in field_model.obstacles)
    if not targets:
        return Route()
    passable = set(allowed) if allowed is not None else set(targets)
    passable = {c for c in passable if c not in field_model.obstacles} | set(targets)
    if start is not None and start not in field_model.obstacles:
        passable.add(start)
        if manhattan(start, targets[-1]) < manhattan(start, targets[0]):
            targets.reverse()
    else:
        start = targets[0]
    graph = grid_graph(passable)
    reachable = nx.node_connected_component(graph, start)
    dropped = [c for c in targets if c not in reachable]
    for cell in dropped:
        logger.warning(f"Cell {cell} unreachable from {start}; dropped from route")
    pending = [c for c in targets if c in reachable]
    to_visit = set(pending)
    route = Route(dropped=dropped)
    route.waypoints.append(Waypoint(start, start in to_visit))
    visited = {start} if start in to_visit else set()
    current = start
    for cell in pending:
        if cell in visited:
            continue
        path = astar_leg(graph, current, cell)
        for step in path[1:-1]:
            route.waypoints.append(Waypoint(step, False))
        route.waypoints.append(Waypoint(cell, True))
        visited.add(cell)
        current = cell
    return route


# ---------------------------------------------------------------------------
# Devices
# ---------------------------------------------------------------------------

@dataclass
class Activity:
    motion_s: float = 0.0
    hover_s: float = 0.0
    compute_core_ms: float = 0.0
    radio_bytes: float = 0.0


@dataclass
class SensorFrame:
    device_id: str
    capture_us: int
    size: int
    tags: List[str] = field(default_factory=list)


@dataclass
class EdgeDevice:
    device_id: str
    index: int
    device_class: DeviceClass
    x: float = 0.0
    y: float = 0.0
    battery: float = 100.0
    alive: bool = True
    region: Optional[Region] = None
    own_cells: List[Cell] = field(default_factory=list)
    route: Route = field(default_factory=Route)
    next_waypoint: int = 0
    flying: bool = False
    capturing: bool = False
    station: Optional[ServiceStation] = None
    last_heartbeat: Optional[int] = None
    frame_clock_us: int = 0
    passes: int = 0

    @property
    def speed(self) -> float:
        return self.device_class.speed_mps

    @property
    def route_done(self) -> bool:
        return self.next_waypoint >= len(self.route.waypoints)

    def assign_route(self, route: Route) -> None:
        self.route = route
        self.next_waypoint = 0


def drain_battery(device: EdgeDevice, activity: Activity) -> float:
    """
    Apply the linear power model and return the new battery level.

    drain = motion_rate*motion_s + hover_rate*hover_s + compute_rate*core_ms + radio_rate*bytes
    """
    if not device.alive or device.battery <= 0:
        return device.battery
    dc = device.device_class
    drain = (dc.motion_rate * activity.motion_s + dc.hover_rate * activity.hover_s
             + dc.compute_rate * activity.compute_core_ms + dc.radio_rate * activity.radio_bytes)
    device.battery = max(0.0, device.battery - drain)
    if device.battery <= 0:
        device.alive = False
        device.flying = device.capturing = False
        logger.info(f"Device {device.device_id} battery depleted")
    return device.battery


@dataclass
class StepResult:
    frames: List[SensorFrame] = field(default_factory=list)
    arrived: List[Waypoint] = field(default_factory=list)
    moved_m: float = 0.0


def _move(device: EdgeDevice, field_model: FieldModel, dt_s: float, result: StepResult) -> float:
    """Advance along the route for dt_s; return seconds spent moving."""
    remaining = dt_s
    moving = 0.0
    while remaining > 1e-12 and device.flying and not device.route_done:
        waypoint = device.route.waypoints[device.next_waypoint]
        tx, ty = field_model.cell_center(waypoint.cell)
        distance = math.hypot(tx - device.x, ty - device.y)
        reach = device.speed * remaining
        if reach + 1e-9 >= distance:
            device.x, device.y = tx, ty
            spent = distance / device.speed
            remaining -= spent
            moving += spent
            result.moved_m += distance
            result.arrived.append(waypoint)
            device.next_waypoint += 1
        else:
            device.x += (tx - device.x) * reach / distance
            device.y += (ty - device.y) * reach / distance
            result.moved_m += reach
            moving += remaining
            remaining = 0.0
    return moving


def step_device(device: EdgeDevice, dt_us: int, field_model: FieldModel, now_us: int,
                fps: float, frame_bytes: int) -> StepResult:
    """
    Advance a device by dt_us from now_us.

    Moves along the route at the class speed, captures frames at the fps
    cadence while capturing is on, and drains motion/hover battery. A device
    whose battery hits zero stops mid-leg.
    """
    result = StepResult()
    if not device.alive:
        return result
    period_us = int(round(1e6 / fps)) if fps > 0 else 0
    end_us = now_us + dt_us
    cursor = now_us
    moving_s = 0.0
    while True:
        frame_at = None
        if device.capturing and period_us:
            upcoming = device.frame_clock_us
            if upcoming <= cursor:
                upcoming = (cursor // period_us + 1) * period_us
            if upcoming <= end_us:
                frame_at = upcoming
        stop = frame_at if frame_at is not None else end_us
        moving_s += _move(device, field_model, (stop - cursor) / 1e6, result)
        cursor = stop
        if frame_at is None:
            break
        tags = field_model.visible(device.x, device.y, cursor / 1e6)
        result.frames.append(SensorFrame(device.device_id, cursor, frame_bytes, tags))
        device.frame_clock_us = cursor + period_us
        if cursor >= end_us:
            break
    hover_s = dt_us / 1e6 - moving_s
    drain_battery(device, Activity(motion_s=moving_s, hover_s=hover_s))
    return result


def repartition_on_failure(failed_id: str, devices: Dict[str, EdgeDevice],
                           adjacency: nx.Graph, field_model: FieldModel,
                           uncovered: Sequence[Cell], threshold: float = 20.0) -> Dict[str, List[Cell]]:
    """
    Share a failed device's uncovered cells among eligible neighbours.

    Eligible neighbours are alive, region-adjacent and at or above the battery
    threshold. Quotas differ by at most one cell; cells are handed out in
    sweep order, each to the nearest neighbour with quota left.

    Returns:
        neighbour id -> acquired cells

    Raises:
        MissionInfeasible: uncovered cells remain but no neighbour is eligible
    """
    cells = sweep_order(uncovered)
    if not cells:
        return {}
    neighbours = sorted(adjacency.neighbors(failed_id), key=lambda d: devices[d].index) \
        if failed_id in adjacency else []
    eligible = [d for d in neighbours
                if devices[d].alive and devices[d].battery >= threshold]
    if not eligible:
        raise MissionInfeasible(f"no eligible neighbour can take over {failed_id}'s "
                                f"{len(cells)} uncovered cell(s)")
    quota = dict(zip(eligible, chunk_sizes(len(cells), len(eligible))))
    acquired: Dict[str, List[Cell]] = {d: [] for d in eligible}
    for cell in cells:
        cx, cy = field_model.cell_center(cell)
        open_neighbours = [d for d in eligible if quota[d] > 0]
        best = min(open_neighbours,
                   key=lambda d: (devices[d].region.distance_to(cx, cy), devices[d].index))
        acquired[best].append(cell)
        quota[best] -= 1
    logger.info(f"Repartitioned {len(cells)} cell(s) of {failed_id} among "
                f"{', '.join(f'{d}:{len(c)}' for d, c in acquired.items())}")
    return acquired
