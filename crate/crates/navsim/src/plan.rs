//! Dijkstra shortest paths on an 8-connected grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::grid::OccupancyGrid;
use crate::NavError;

pub type Cell = (usize, usize);

/// Path cost held as counts of straight and diagonal moves, so equal costs
/// compare equal exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    pub fn value(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    fn step(self, diagonal: bool) -> Self {
        if diagonal {
            PathCost { diagonal: self.diagonal + 1, ..self }
        } else {
            PathCost { straight: self.straight + 1, ..self }
        }
    }
}

impl PartialOrd for PathCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PathCost {
    fn cmp(&self, other: &Self) -> Ordering {
        if self == other {
            Ordering::Equal
        } else {
            self.value().total_cmp(&other.value())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub cells: Vec<Cell>,
    pub cost: PathCost,
}

impl Plan {
    pub fn to_csv(&self, grid: &OccupancyGrid) -> String {
        let mut s = String::from("index,row,col,x,z\n");
        for (i, (r, c)) in self.cells.iter().enumerate() {
            let (x, z) = grid.cell_center(*r, *c);
            let _ = writeln!(s, "{i},{r},{c},{x},{z}");
        }
        s
    }
}

/// Cells whose centre lies within `radius` metres of an occupied cell's centre.
pub fn inflate(grid: &OccupancyGrid, radius: f64) -> Result<Vec<bool>, NavError> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(NavError::InvalidArgument(format!("inflation radius must be non-negative, got {radius}")));
    }
    let (w, h) = (grid.width(), grid.height());
    let reach = radius * grid.resolution();
    let k = reach.floor() as isize;
    let mut blocked = vec![false; w * h];
    for r in 0..h {
        for c in 0..w {
            if !grid.is_occupied(r, c) {
                continue;
            }
            for dr in -k..=k {
                for dc in -k..=k {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    if ((dr * dr + dc * dc) as f64).sqrt() <= reach + 1e-12 {
                        blocked[rr as usize * w + cc as usize] = true;
                    }
                }
            }
        }
    }
    Ok(blocked)
}

/// Free neighbours of `cell` with whether the move is diagonal. Diagonal
/// moves may not cut a blocked corner.
pub fn neighbours(blocked: &[bool], width: usize, height: usize, cell: Cell) -> Vec<(Cell, bool)> {
    let (r, c) = (cell.0 as isize, cell.1 as isize);
    let free = |rr: isize, cc: isize| rr >= 0 && cc >= 0 && rr < height as isize && cc < width as isize && !blocked[rr as usize * width + cc as usize];
    let mut out = Vec::with_capacity(8);
    for dr in -1..=1isize {
        for dc in -1..=1isize {
            if (dr, dc) == (0, 0) || !free(r + dr, c + dc) {
                continue;
            }
            let diagonal = dr != 0 && dc != 0;
            if diagonal && !(free(r + dr, c) && free(r, c + dc)) {
                continue;
            }
            out.push((((r + dr) as usize, (c + dc) as usize), diagonal));
        }
    }
    out
}

#[derive(PartialEq, Eq)]
struct Entry {
    cost: PathCost,
    cell: Cell,
}

impl Ord for Entry {
    // min-heap on (cost, row, col)
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.cmp(&self.cost).then_with(|| o.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Minimal-cost path (straight 1, diagonal √2) avoiding cells within
/// `inflation_radius` of obstacles. Equal-cost alternatives resolve towards
/// the predecessor with the smaller `(row, col)`.
pub fn dijkstra_plan(grid: &OccupancyGrid, start: Cell, goal: Cell, inflation_radius: f64) -> Result<Plan, NavError> {
    let (w, h) = (grid.width(), grid.height());
    let blocked = inflate(grid, inflation_radius)?;
    for cell in [start, goal] {
        if cell.0 >= h || cell.1 >= w || blocked[cell.0 * w + cell.1] {
            return Err(NavError::InvalidEndpoint { row: cell.0, col: cell.1 });
        }
    }
    let idx = |c: Cell| c.0 * w + c.1;
    let mut best: Vec<Option<PathCost>> = vec![None; w * h];
    let mut prev: Vec<Option<Cell>> = vec![None; w * h];
    let mut done = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    best[idx(start)] = Some(PathCost::default());
    heap.push(Entry { cost: PathCost::default(), cell: start });

    while let Some(Entry { cost, cell }) = heap.pop() {
        if done[idx(cell)] {
            continue;
        }
        done[idx(cell)] = true;
        if cell == goal {
            break;
        }
        for (n, diagonal) in neighbours(&blocked, w, h, cell) {
            if done[idx(n)] {
                continue;
            }
            let c = cost.step(diagonal);
            let better = match best[idx(n)] {
                None => true,
                Some(b) => c < b || (c == b && prev[idx(n)].is_some_and(|p| cell < p)),
            };
            if better {
                best[idx(n)] = Some(c);
                prev[idx(n)] = Some(cell);
                heap.push(Entry { cost: c, cell: n });
            }
        }
    }

    let cost = best[idx(goal)].ok_or(NavError::NoPath)?;
    let mut cells = vec![goal];
    let mut cur = goal;
    while cur != start {
        cur = prev[idx(cur)].expect("reached cells have predecessors");
        cells.push(cur);
    }
    cells.reverse();
    Ok(Plan { cells, cost })
}
