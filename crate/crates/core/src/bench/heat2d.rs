//! 2d heat equation on the unit square with a rectangular hole,
//!
//! ```text
//! y_t = 0.01 Lap y + 1_{Omega_1}(x) u~(t)   in Omega,
//! y   = 1_{dOmega_1}(x) u~(t)               on the outer boundary,
//! y   = 0                                   on the hole boundary,
//! ```
//!
//! where `u~` is a noisy input, modelled by using the same single column for
//! `B` and `M`. Unknowns are the interior nodes of an `nx x ny` equidistant
//! grid that do not fall into the closed hole, numbered with `x` fastest.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BilinearSdeSystem;

/// Closed axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    /// Same rectangle with each interval's endpoints in ascending order.
    pub fn normalized(&self) -> Rect {
        Rect {
            x0: self.x0.min(self.x1),
            x1: self.x0.max(self.x1),
            y0: self.y0.min(self.y1),
            y1: self.y0.max(self.y1),
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn on_boundary(&self, x: f64, y: f64) -> bool {
        self.contains(x, y) && (x == self.x0 || x == self.x1 || y == self.y0 || y == self.y1)
    }
}

pub const TARGET_UNKNOWNS: usize = 1016;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Heat2dSpec {
    pub nx: usize,
    pub ny: usize,
    pub diffusivity: f64,
    pub source: Rect,
    /// Hole as given; reversed endpoints are sorted before use.
    pub hole: Rect,
    pub target_unknowns: usize,
}

impl Default for Heat2dSpec {
    fn default() -> Self {
        let base = Heat2dSpec {
            nx: 32,
            ny: 32,
            diffusivity: 0.01,
            source: Rect::new(0.12, 0.88, 0.0, 0.36),
            hole: Rect::new(0.51, 0.48, 0.94, 0.79),
            target_unknowns: TARGET_UNKNOWNS,
        };
        base.calibrated(4)
    }
}

impl Heat2dSpec {
    /// Number of unknowns of an `nx x ny` grid with this hole.
    pub fn unknowns(&self) -> usize {
        Mesh::new(self).unknowns()
    }

    /// Searches node counts within `radius` of `(nx, ny)` for the grid whose
    /// unknown count is closest to the target, preferring near-square grids
    /// and then fewer `x` nodes.
    pub fn calibrated(&self, radius: usize) -> Heat2dSpec {
        let mut best: Option<((usize, usize, usize), Heat2dSpec)> = None;
        for nx in self.nx.saturating_sub(radius).max(1)..=self.nx + radius {
            for ny in self.ny.saturating_sub(radius).max(1)..=self.ny + radius {
                let cand = Heat2dSpec { nx, ny, ..*self };
                let key = (cand.unknowns().abs_diff(self.target_unknowns), nx.abs_diff(ny), nx);
                if best.as_ref().is_none_or(|(k, _)| key < *k) {
                    best = Some((key, cand));
                }
            }
        }
        best.map(|(_, s)| s).unwrap_or(*self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Unknown(usize),
    Outer,
    Hole,
}

struct Mesh {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    hole: Rect,
    index: Vec<Option<usize>>,
    coords: Vec<(f64, f64)>,
}

impl Mesh {
    fn new(spec: &Heat2dSpec) -> Mesh {
        let (nx, ny) = (spec.nx, spec.ny);
        let dx = 1.0 / (nx as f64 + 1.0);
        let dy = 1.0 / (ny as f64 + 1.0);
        let hole = spec.hole.normalized();
        let mut index = vec![None; nx * ny];
        let mut coords = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = ((i + 1) as f64 * dx, (j + 1) as f64 * dy);
                if !hole.contains(x, y) {
                    index[j * nx + i] = Some(coords.len());
                    coords.push((x, y));
                }
            }
        }
        Mesh {
            nx,
            ny,
            dx,
            dy,
            hole,
            index,
            coords,
        }
    }

    fn unknowns(&self) -> usize {
        self.coords.len()
    }

    /// Node at grid position `(gi, gj)` including the outer boundary layer.
    fn node(&self, gi: isize, gj: isize) -> Node {
        if gi <= 0 || gj <= 0 || gi > self.nx as isize || gj > self.ny as isize {
            return Node::Outer;
        }
        match self.index[(gj as usize - 1) * self.nx + gi as usize - 1] {
            Some(k) => Node::Unknown(k),
            None => Node::Hole,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heat2dFom {
    pub system: BilinearSdeSystem,
    pub spec: Heat2dSpec,
    pub nodes: Vec<(f64, f64)>,
    /// Hole after endpoint sorting.
    pub hole: Rect,
    /// Interpretation notes recorded with the model.
    pub flags: Vec<String>,
}

impl Heat2dFom {
    pub fn unknowns(&self) -> usize {
        self.nodes.len()
    }

    pub fn matches_target(&self) -> bool {
        self.unknowns() == self.spec.target_unknowns
    }
}

pub fn build_heat2d_fom(spec: &Heat2dSpec) -> Result<Heat2dFom> {
    if spec.nx < 2 || spec.ny < 2 {
        return Err(Error::InvalidArgument(format!(
            "heat2d grid must have at least 2 nodes per axis, got {}x{}",
            spec.nx, spec.ny
        )));
    }
    let mesh = Mesh::new(spec);
    let n = mesh.unknowns();
    let cx = spec.diffusivity / (mesh.dx * mesh.dx);
    let cy = spec.diffusivity / (mesh.dy * mesh.dy);
    let source = spec.source.normalized();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    for j in 1..=mesh.ny as isize {
        for i in 1..=mesh.nx as isize {
            let Node::Unknown(p) = mesh.node(i, j) else {
                continue;
            };
            let (x, y) = mesh.coords[p];
            a[(p, p)] = -2.0 * (cx + cy);
            if source.contains(x, y) {
                b[(p, 0)] += 1.0;
            }
            for (di, dj, c) in [(-1, 0, cx), (1, 0, cx), (0, -1, cy), (0, 1, cy)] {
                match mesh.node(i + di, j + dj) {
                    Node::Unknown(q) => a[(p, q)] = c,
                    Node::Outer => {
                        let bx = (i + di) as f64 * mesh.dx;
                        let by = (j + dj) as f64 * mesh.dy;
                        if source.on_boundary(bx, by) {
                            b[(p, 0)] += c;
                        }
                    }
                    Node::Hole => {}
                }
            }
        }
    }
    let mut flags = Vec::new();
    if !spec.hole.is_normalized() {
        let h = mesh.hole;
        flags.push(format!(
            "hole endpoints sorted to [{}, {}] x [{}, {}]",
            h.x0, h.x1, h.y0, h.y1
        ));
    }
    if n != spec.target_unknowns {
        log::warn!(
            "heat2d grid {}x{} has {n} unknowns, target {}",
            spec.nx,
            spec.ny,
            spec.target_unknowns
        );
        flags.push(format!(
            "grid {}x{} realizes {n} unknowns instead of {}",
            spec.nx, spec.ny, spec.target_unknowns
        ));
    }
    let system = BilinearSdeSystem::new(a, b.clone(), vec![DMatrix::zeros(n, n)], b, DMatrix::identity(1, 1));
    Ok(Heat2dFom {
        system,
        spec: *spec,
        nodes: mesh.coords,
        hole: mesh.hole,
        flags,
    })
}
