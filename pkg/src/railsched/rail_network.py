"""Static rail topology: transition masks, compact cell indexing, heuristics.

Masks follow the 16-bit grid4 convention: the nibble selected by the incoming
orientation (N, E, S, W from the most significant nibble down) lists the
allowed exit directions, again N, E, S, W from the most significant bit down.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

N, E, S, W = 0, 1, 2, 3
DIRECTION_NAMES = "NESW"
DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))

MAX_DIM = 150
MAX_RAIL_CELLS = 3000
UNREACHABLE = 1 << 24

# canonical masks, see docs/transitions.md
EMPTY = 0x0000
STRAIGHT_EW = 0x0401
STRAIGHT_NS = 0x8020
CROSSING = 0x8421


class MapParseError(ValueError):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class MapValidationError(ValueError):
    def __init__(self, violations: List[str]):
        super().__init__("invalid rail network:\n  " + "\n  ".join(violations))
        self.violations = violations


class GenerationError(RuntimeError):
    pass


def opposite(direction: int) -> int:
    return (direction + 2) % 4


def parse_direction(value) -> int:
    if isinstance(value, str):
        value = value.strip().upper()
        if value in DIRECTION_NAMES and len(value) == 1:
            return DIRECTION_NAMES.index(value)
        value = int(value)
    if not 0 <= int(value) <= 3:
        raise ValueError(f"bad direction {value!r}")
    return int(value)


def exit_bits(mask: int, orientation: int) -> int:
    return (mask >> ((3 - orientation) * 4)) & 0xF


def allowed_exits(mask: int, orientation: int) -> List[int]:
    nibble = exit_bits(mask, orientation)
    return [d for d in range(4) if nibble & (1 << (3 - d))]


def mask_from_exits(table: Dict[int, Iterable[int]]) -> int:
    """Build a mask from {incoming orientation: exit directions}."""
    mask = 0
    for orientation, exits in table.items():
        for d in exits:
            mask |= 1 << ((3 - orientation) * 4 + (3 - d))
    return mask


def mask_from_connections(sides: Iterable[int]) -> int:
    """Mask for a cell whose track touches the given sides.

    Any non-reversing exit is allowed, except that four-way cells are plain
    crossings and single-sided cells are dead-ends that permit reversal.  A
    train standing in a dead-end facing out of it may also just leave.
    """
    sides = set(sides)
    table: Dict[int, List[int]] = {}
    if len(sides) == 1:
        (side,) = sides
        # reverse when running into the buffer, or leave when facing out of it
        return mask_from_exits({opposite(side): [side], side: [side]})
    for orientation in range(4):
        entry_side = opposite(orientation)
        if entry_side not in sides:
            continue
        if len(sides) == 4:
            exits = [orientation]
        else:
            exits = sorted(sides - {entry_side})
        table[orientation] = exits
    return mask_from_exits(table)


class RailNetwork:
    """Rail cells of a grid, indexed in row-major order from 0."""

    def __init__(self, width: int, height: int, rail_cells: Sequence[Tuple[int, int, int]]):
        self.width = width
        self.height = height
        self.rail_cells: List[Tuple[int, int, int]] = sorted(rail_cells)
        self.cell_index: Dict[Tuple[int, int], int] = {
            (r, c): i for i, (r, c, _) in enumerate(self.rail_cells)
        }
        self.masks = np.array([m for _, _, m in self.rail_cells], dtype=np.int64)
        self.warnings: List[str] = []
        self._trans: List[Tuple[Tuple[int, int], ...]] = []
        self._preds: Optional[List[List[int]]] = None
        self._heuristics: Dict[int, "HeuristicTable"] = {}
        self._build_transitions()

    def _build_transitions(self) -> None:
        for r, c, mask in self.rail_cells:
            for o in range(4):
                moves = []
                for d in allowed_exits(mask, o):
                    dr, dc = DELTAS[d]
                    nb = self.cell_index.get((r + dr, c + dc))
                    if nb is not None:
                        moves.append((nb, d))
                self._trans.append(tuple(moves))

    @property
    def num_cells(self) -> int:
        return len(self.rail_cells)

    def coords(self, cell: int) -> Tuple[int, int]:
        r, c, _ = self.rail_cells[cell]
        return r, c

    def mask(self, cell: int) -> int:
        return self.rail_cells[cell][2]

    def transitions(self, cell: int, orientation: int) -> Tuple[Tuple[int, int], ...]:
        return self._trans[cell * 4 + orientation]

    def neighbor(self, cell: int, direction: int) -> Optional[int]:
        r, c = self.coords(cell)
        dr, dc = DELTAS[direction]
        return self.cell_index.get((r + dr, c + dc))

    def direction_to(self, cell: int, other: int) -> int:
        r, c = self.coords(cell)
        r2, c2 = self.coords(other)
        return DELTAS.index((r2 - r, c2 - c))

    def enterable_orientations(self, cell: int) -> List[int]:
        return [o for o in range(4) if exit_bits(self.mask(cell), o)]

    def validate(self) -> List[str]:
        """Return every invariant violation; also refresh ``warnings``."""
        violations = []
        if not (1 <= self.width <= MAX_DIM and 1 <= self.height <= MAX_DIM):
            violations.append(
                f"grid {self.width}x{self.height} outside 1..{MAX_DIM} per side")
        for r, c, mask in self.rail_cells:
            if not (0 <= r < self.height and 0 <= c < self.width):
                violations.append(f"cell ({r},{c}) outside the grid")
                continue
            for o in range(4):
                for d in allowed_exits(mask, o):
                    dr, dc = DELTAS[d]
                    nr, nc = r + dr, c + dc
                    if not (0 <= nr < self.height and 0 <= nc < self.width):
                        violations.append(
                            f"cell ({r},{c}) facing {DIRECTION_NAMES[o]}: exit "
                            f"{DIRECTION_NAMES[d]} leaves the grid")
                        continue
                    nb = self.cell_index.get((nr, nc))
                    if nb is None:
                        violations.append(
                            f"cell ({r},{c}) facing {DIRECTION_NAMES[o]}: exit "
                            f"{DIRECTION_NAMES[d]} points at non-rail ({nr},{nc})")
                    elif not exit_bits(self.mask(nb), d):
                        violations.append(
                            f"cell ({r},{c}) exits {DIRECTION_NAMES[d]} into ({nr},{nc}), "
                            f"which has no exit when entered facing {DIRECTION_NAMES[d]}")
        self.warnings = []
        if self.num_cells > MAX_RAIL_CELLS:
            self.warnings.append(
                f"cell count exceeds {MAX_RAIL_CELLS} ({self.num_cells} rail cells)")
        return violations

    def predecessors(self) -> List[List[int]]:
        """Reverse adjacency over encoded states ``cell * 4 + orientation``."""
        if self._preds is None:
            preds: List[List[int]] = [[] for _ in range(self.num_cells * 4)]
            for state, moves in enumerate(self._trans):
                for nb, d in moves:
                    preds[nb * 4 + d].append(state)
            self._preds = preds
        return self._preds

    def heuristic(self, target: int) -> "HeuristicTable":
        table = self._heuristics.get(target)
        if table is None:
            table = compute_heuristic(self, target)
            self._heuristics[target] = table
        return table

    def to_text(self) -> str:
        grid = [["0000"] * self.width for _ in range(self.height)]
        for r, c, mask in self.rail_cells:
            grid[r][c] = f"{mask:04x}"
        lines = [f"RAIL v1 {self.width} {self.height}"]
        lines.extend(" ".join(row) for row in grid)
        return "\n".join(lines) + "\n"

    def __eq__(self, other) -> bool:
        return (isinstance(other, RailNetwork) and self.width == other.width
                and self.height == other.height and self.rail_cells == other.rail_cells)

    def __repr__(self) -> str:
        return f"RailNetwork({self.width}x{self.height}, {self.num_cells} rail cells)"


def network_from_grid(grid: Sequence[Sequence[int]], validate: bool = True) -> RailNetwork:
    height = len(grid)
    width = len(grid[0]) if height else 0
    cells = [(r, c, int(m)) for r, row in enumerate(grid) for c, m in enumerate(row) if m]
    net = RailNetwork(width, height, cells)
    if validate:
        violations = net.validate()
        if violations:
            raise MapValidationError(violations)
    return net


def load_map(text: str) -> RailNetwork:
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapParseError(1, 1, "empty map file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "RAIL" or header[1] != "v1":
        raise MapParseError(1, 1, "expected header 'RAIL v1 <width> <height>'")
    try:
        width, height = int(header[2]), int(header[3])
    except ValueError:
        raise MapParseError(1, 9, "width and height must be integers") from None
    if width < 1 or height < 1:
        raise MapParseError(1, 9, "width and height must be positive")
    if len(lines) - 1 != height:
        raise MapParseError(len(lines) + 1, 1, f"expected {height} grid rows, got {len(lines) - 1}")
    grid = []
    for r, line in enumerate(lines[1:]):
        lineno = r + 2
        tokens = line.split()
        if len(tokens) != width:
            raise MapParseError(lineno, 1, f"expected {width} masks, got {len(tokens)}")
        row = []
        col = 1
        for tok in tokens:
            col = line.index(tok, col - 1) + 1
            if len(tok) != 4:
                raise MapParseError(lineno, col, f"mask {tok!r} is not 4 hex digits")
            try:
                row.append(int(tok, 16))
            except ValueError:
                raise MapParseError(lineno, col, f"mask {tok!r} is not hexadecimal") from None
            col += len(tok)
        grid.append(row)
    return network_from_grid(grid)


@dataclass(frozen=True)
class HeuristicTable:
    target_cell: int
    dist: np.ndarray  # (num_cells, 4), moves to target or UNREACHABLE

    def __post_init__(self):
        # flat python list indexed by cell * 4 + orientation, for the planner's inner loop
        object.__setattr__(self, "flat", self.dist.reshape(-1).tolist())

    def __call__(self, cell: int, orientation: int) -> int:
        return int(self.dist[cell, orientation])


def compute_heuristic(net: RailNetwork, target: int) -> HeuristicTable:
    """Exact move counts to ``target`` by reverse BFS over (cell, orientation)."""
    n = net.num_cells
    dist = np.full(n * 4, UNREACHABLE, dtype=np.int64)
    preds = net.predecessors()
    queue = deque()
    for o in range(4):
        dist[target * 4 + o] = 0
        queue.append(target * 4 + o)
    while queue:
        state = queue.popleft()
        nd = dist[state] + 1
        for p in preds[state]:
            # states on the target cell are terminal
            if p // 4 == target:
                continue
            if dist[p] > nd:
                dist[p] = nd
                queue.append(p)
    dist = dist.reshape(n, 4)
    dist.setflags(write=False)
    return HeuristicTable(target, dist)


# ---------------------------------------------------------------------------
# random generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorParams:
    width: int
    height: int
    n_cities: int
    rails_per_city: int = 2
    city_half_length: int = 2
    max_retries: int = 50


@dataclass(frozen=True)
class City:
    row: int  # top track row
    col: int  # centre column
    rails: int
    half: int

    @property
    def box(self) -> Tuple[int, int, int, int]:
        return self.row, self.col - self.half, self.row + self.rails - 1, self.col + self.half

    def track_cells(self) -> List[Tuple[int, int]]:
        r0, c0, r1, c1 = self.box
        return [(r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)]


def _add_segment(edges: Dict[Tuple[int, int], set], a: Tuple[int, int], b: Tuple[int, int]) -> None:
    d = DELTAS.index((b[0] - a[0], b[1] - a[1]))
    edges.setdefault(a, set()).add(d)
    edges.setdefault(b, set()).add(opposite(d))


def _add_line(edges, cells: List[Tuple[int, int]]) -> None:
    for a, b in zip(cells, cells[1:]):
        _add_segment(edges, a, b)


def _l_path(a: Tuple[int, int], b: Tuple[int, int], horizontal_first: bool) -> List[Tuple[int, int]]:
    (r0, c0), (r1, c1) = a, b
    cells = [a]
    r, c = r0, c0
    legs = ("h", "v") if horizontal_first else ("v", "h")
    for leg in legs:
        if leg == "h":
            step = 1 if c1 > c else -1
            while c != c1:
                c += step
                cells.append((r, c))
        else:
            step = 1 if r1 > r else -1
            while r != r1:
                r += step
                cells.append((r, c))
    return cells


def _place_cities(params: GeneratorParams, rng: np.random.Generator) -> Optional[List[City]]:
    k, half = params.rails_per_city, params.city_half_length
    rows = range(1, params.height - k)
    cols = range(1 + half, params.width - 1 - half)
    if len(rows) == 0 or len(cols) == 0:
        return None
    cities: List[City] = []
    for _ in range(params.n_cities):
        for _attempt in range(200):
            city = City(int(rng.choice(rows)), int(rng.choice(cols)), k, half)
            r0, c0, r1, c1 = city.box
            # keep a two-cell gap between station boxes
            if all(r0 > o[2] + 2 or r1 < o[0] - 2 or c0 > o[3] + 2 or c1 < o[1] - 2
                   for o in (x.box for x in cities)):
                cities.append(city)
                break
        else:
            return None
    return cities


def _city_port(city: City, toward: City) -> Tuple[int, int]:
    r0, c0, _, c1 = city.box
    return (r0, c1) if toward.col >= city.col else (r0, c0)


def generate_random_network(params: GeneratorParams, seed: int) -> Tuple[RailNetwork, List[City]]:
    """Cities of parallel tracks joined by L-shaped corridors.

    Deterministic in ``(params, seed)``.
    """
    if params.n_cities < 2:
        raise GenerationError("need at least 2 cities")
    if params.width > MAX_DIM or params.height > MAX_DIM:
        raise GenerationError(f"grid larger than {MAX_DIM}x{MAX_DIM}")
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x5EED]))
    for _ in range(params.max_retries):
        cities = _place_cities(params, rng)
        if cities is None:
            continue
        edges: Dict[Tuple[int, int], set] = {}
        for city in cities:
            r0, c0, r1, c1 = city.box
            for r in range(r0, r1 + 1):
                _add_line(edges, [(r, c) for c in range(c0, c1 + 1)])
            if r1 > r0:
                _add_line(edges, [(r, c0) for r in range(r0, r1 + 1)])
                _add_line(edges, [(r, c1) for r in range(r0, r1 + 1)])
        order = sorted(range(len(cities)), key=lambda i: (cities[i].col, cities[i].row))
        links = list(zip(order, order[1:]))
        if len(order) > 2:
            links.append((order[-1], order[0]))
        for i, j in links:
            a = _city_port(cities[i], cities[j])
            b = _city_port(cities[j], cities[i])
            _add_line(edges, _l_path(a, b, bool(rng.integers(2))))
        cells = [(r, c, mask_from_connections(sides)) for (r, c), sides in edges.items()]
        if len(cells) > MAX_RAIL_CELLS:
            continue
        net = RailNetwork(params.width, params.height, cells)
        if net.validate():
            continue
        return net, cities
    raise GenerationError(
        f"could not place {params.n_cities} cities on a {params.width}x{params.height} grid "
        f"after {params.max_retries} attempts")
