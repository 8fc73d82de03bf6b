//! Uniform Cartesian discretization of the unit ball with embedded boundary.
//!
//! Nodes live at `x_a = -1 + i_a * h` with `h = 2/(N-1)` and odd `N`, so the
//! origin is always a node. A node is *interior* if `|x| < 1`, *boundary* if
//! it is not interior but has an interior axis neighbor (the ghost layer that
//! carries Dirichlet traces), and *exterior* otherwise. Cells are the axis
//! boxes between nodes; set measures count cells fractionally by the number
//! of corners that satisfy the predicate.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::weights::WeightField;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Boundary,
    Exterior,
}

/// Row-major index arithmetic over an `n`-dimensional box of sizes `dims`.
/// The last axis varies fastest.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub n: usize,
    pub dims: [usize; MAX_DIM],
    strides: [usize; MAX_DIM],
    pub len: usize,
}

impl Lattice {
    pub fn new(n: usize, dims: [usize; MAX_DIM]) -> Self {
        let mut strides = [0usize; MAX_DIM];
        let mut len = 1usize;
        for a in (0..n).rev() {
            strides[a] = len;
            len *= dims[a];
        }
        Lattice { n, dims, strides, len }
    }

    #[inline]
    pub fn index(&self, multi: [usize; MAX_DIM]) -> usize {
        let mut idx = 0;
        for a in 0..self.n {
            debug_assert!(multi[a] < self.dims[a]);
            idx += multi[a] * self.strides[a];
        }
        idx
    }

    #[inline]
    pub fn multi(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0usize; MAX_DIM];
        for a in 0..self.n {
            out[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        out
    }
}

#[derive(Debug)]
pub struct Grid {
    /// Spatial dimension, 2 or 3.
    pub n: usize,
    /// Nodes per axis (odd).
    pub resolution: usize,
    /// Node spacing `2/(N-1)`.
    pub h: f64,
    pub nodes: Lattice,
    pub cells: Lattice,
    /// One lattice of axis-`a` edges per axis; an edge is identified by its
    /// lower endpoint.
    pub edges: Vec<Lattice>,
    node_class: Vec<NodeClass>,
    /// Number of corners of each cell that are interior nodes (0..=2^n).
    cell_interior_corners: Vec<u8>,
    pub interior_count: usize,
    pub boundary_count: usize,
    pub exterior_count: usize,
}

/// Build the classified grid. `N` must be odd (the origin has to be a node
/// for the radial diagnostics) and at least 17.
pub fn build_grid(n: usize, resolution: usize) -> Result<Arc<Grid>> {
    if n != 2 && n != 3 {
        return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {n}")));
    }
    if resolution % 2 == 0 {
        return Err(Error::InvalidGrid(format!(
            "resolution must be odd so the origin is a node, got {resolution}"
        )));
    }
    if resolution < 17 {
        return Err(Error::InvalidGrid(format!("resolution must be >= 17, got {resolution}")));
    }

    let mut dims = [1usize; MAX_DIM];
    let mut cdims = [1usize; MAX_DIM];
    for a in 0..n {
        dims[a] = resolution;
        cdims[a] = resolution - 1;
    }
    let nodes = Lattice::new(n, dims);
    let cells = Lattice::new(n, cdims);
    let h = 2.0 / (resolution - 1) as f64;

    // First pass: interior vs not.
    let mut class = vec![NodeClass::Exterior; nodes.len];
    for idx in 0..nodes.len {
        let x = coords_of(&nodes, h, idx);
        if norm2(&x, n) < 1.0 {
            class[idx] = NodeClass::Interior;
        }
    }
    // Second pass: ghost layer.
    for idx in 0..nodes.len {
        if class[idx] == NodeClass::Interior {
            continue;
        }
        let multi = nodes.multi(idx);
        let mut touches = false;
        for a in 0..n {
            for step in [-1isize, 1] {
                let ia = multi[a] as isize + step;
                if ia < 0 || ia as usize >= resolution {
                    continue;
                }
                let mut m = multi;
                m[a] = ia as usize;
                if class[nodes.index(m)] == NodeClass::Interior {
                    touches = true;
                }
            }
        }
        if touches {
            class[idx] = NodeClass::Boundary;
        }
    }

    let mut edges = Vec::with_capacity(n);
    for a in 0..n {
        let mut ed = dims;
        ed[a] = resolution - 1;
        edges.push(Lattice::new(n, ed));
    }

    let mut cell_interior_corners = vec![0u8; cells.len];
    for c in 0..cells.len {
        let base = cells.multi(c);
        let mut cnt = 0u8;
        for corner in 0..(1usize << n) {
            let mut m = base;
            for a in 0..n {
                m[a] += (corner >> a) & 1;
            }
            if class[nodes.index(m)] == NodeClass::Interior {
                cnt += 1;
            }
        }
        cell_interior_corners[c] = cnt;
    }

    let interior_count = class.iter().filter(|c| **c == NodeClass::Interior).count();
    let boundary_count = class.iter().filter(|c| **c == NodeClass::Boundary).count();
    let exterior_count = class.len() - interior_count - boundary_count;

    Ok(Arc::new(Grid {
        n,
        resolution,
        h,
        nodes,
        cells,
        edges,
        node_class: class,
        cell_interior_corners,
        interior_count,
        boundary_count,
        exterior_count,
    }))
}

#[inline]
fn coords_of(lattice: &Lattice, h: f64, idx: usize) -> [f64; MAX_DIM] {
    let multi = lattice.multi(idx);
    let mut x = [0.0; MAX_DIM];
    for a in 0..lattice.n {
        x[a] = -1.0 + multi[a] as f64 * h;
    }
    x
}

#[inline]
pub fn norm2(x: &[f64; MAX_DIM], n: usize) -> f64 {
    let mut s = 0.0;
    for a in 0..n {
        s += x[a] * x[a];
    }
    s.sqrt()
}

impl Grid {
    #[inline]
    pub fn class(&self, node: usize) -> NodeClass {
        self.node_class[node]
    }

    #[inline]
    pub fn node_coords(&self, node: usize) -> [f64; MAX_DIM] {
        coords_of(&self.nodes, self.h, node)
    }

    /// Neighbor of `node` one step along `axis`; `None` past the box edge.
    #[inline]
    pub fn neighbor(&self, node: usize, axis: usize, dir: isize) -> Option<usize> {
        let mut multi = self.nodes.multi(node);
        let ia = multi[axis] as isize + dir;
        if ia < 0 || ia as usize >= self.resolution {
            return None;
        }
        multi[axis] = ia as usize;
        Some(self.nodes.index(multi))
    }

    /// Cell volume `h^n`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    #[inline]
    pub fn cell_center(&self, cell: usize) -> [f64; MAX_DIM] {
        let multi = self.cells.multi(cell);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.n {
            x[a] = -1.0 + (multi[a] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Corner node indices of a cell (2^n of them).
    pub fn cell_corners(&self, cell: usize) -> Vec<usize> {
        let base = self.cells.multi(cell);
        let mut out = Vec::with_capacity(1 << self.n);
        for corner in 0..(1usize << self.n) {
            let mut m = base;
            for a in 0..self.n {
                m[a] += (corner >> a) & 1;
            }
            out.push(self.nodes.index(m));
        }
        out
    }

    #[inline]
    pub fn interior_corner_count(&self, cell: usize) -> u8 {
        self.cell_interior_corners[cell]
    }

    /// Fraction of the cell counted as inside the unit ball.
    #[inline]
    pub fn cell_b1_fraction(&self, cell: usize) -> f64 {
        self.cell_interior_corners[cell] as f64 / (1u32 << self.n) as f64
    }

    /// Edge index of the axis-`a` edge whose lower endpoint is `node`.
    /// Caller must ensure the edge exists (`i_a < N - 1`).
    #[inline]
    pub fn edge_index(&self, axis: usize, lower_node: usize) -> usize {
        let multi = self.nodes.multi(lower_node);
        self.edges[axis].index(multi)
    }

    /// Iterate all axis edges as `(axis, edge_idx, lower_node, upper_node)`.
    pub fn for_each_edge(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for a in 0..self.n {
            let lat = &self.edges[a];
            for e in 0..lat.len {
                let multi = lat.multi(e);
                let p = self.nodes.index(multi);
                let mut mq = multi;
                mq[a] += 1;
                let q = self.nodes.index(mq);
                f(a, e, p, q);
            }
        }
    }
}

/// One real value per node, tied to its grid. Exterior nodes hold 0 by
/// convention.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        ScalarField { grid: grid.clone(), values: vec![0.0; grid.nodes.len] }
    }

    /// Evaluate `f` at every non-exterior node; exterior nodes stay 0.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; MAX_DIM]) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        for idx in 0..grid.nodes.len {
            if grid.class(idx) != NodeClass::Exterior {
                field.values[idx] = f(grid.node_coords(idx));
            }
        }
        field
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Copy boundary-node values from `trace` into `self`.
    pub fn impose_trace(&mut self, trace: &ScalarField) {
        for idx in 0..self.grid.nodes.len {
            if self.grid.class(idx) == NodeClass::Boundary {
                self.values[idx] = trace.values[idx];
            }
        }
    }
}

/// Closed-form boundary data on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundarySpec {
    Constant(f64),
    /// `g = offset + amplitude * cos(mode * theta)` with `theta = atan2(y, x)`
    /// (the azimuthal angle in 3d).
    Cosine { offset: f64, amplitude: f64, mode: u32 },
}

impl BoundarySpec {
    pub fn eval_direction(&self, dir: &[f64; MAX_DIM]) -> f64 {
        match *self {
            BoundarySpec::Constant(c) => c,
            BoundarySpec::Cosine { offset, amplitude, mode } => {
                let theta = dir[1].atan2(dir[0]);
                offset + amplitude * (mode as f64 * theta).cos()
            }
        }
    }

    /// Exact infimum over the sphere.
    pub fn infimum(&self) -> f64 {
        match *self {
            BoundarySpec::Constant(c) => c,
            BoundarySpec::Cosine { offset, amplitude, mode } => {
                if mode == 0 {
                    offset + amplitude
                } else {
                    offset - amplitude.abs()
                }
            }
        }
    }

    pub fn supremum(&self) -> f64 {
        match *self {
            BoundarySpec::Constant(c) => c,
            BoundarySpec::Cosine { offset, amplitude, mode } => {
                if mode == 0 {
                    offset + amplitude
                } else {
                    offset + amplitude.abs()
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub spec: BoundarySpec,
    /// `inf g` over the sphere; must be positive.
    pub gamma: f64,
}

impl BoundaryData {
    pub fn new(spec: BoundarySpec) -> Result<Self> {
        let gamma = spec.infimum();
        if gamma <= 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidBoundary(format!(
                "boundary data must be bounded below by a positive constant (inf g = {gamma})"
            )));
        }
        Ok(BoundaryData { spec, gamma })
    }
}

/// Sample `g` onto the ghost layer: each boundary node receives the value of
/// `g` at its radial projection onto the sphere. Interior nodes stay 0.
pub fn sample_boundary(bd: &BoundaryData, grid: &Arc<Grid>) -> Result<ScalarField> {
    let mut field = ScalarField::zeros(grid);
    for idx in 0..grid.nodes.len {
        if grid.class(idx) != NodeClass::Boundary {
            continue;
        }
        let x = grid.node_coords(idx);
        let r = norm2(&x, grid.n);
        debug_assert!(r > 0.0);
        let mut dir = [0.0; MAX_DIM];
        for a in 0..grid.n {
            dir[a] = x[a] / r;
        }
        let v = bd.spec.eval_direction(&dir);
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::InvalidBoundary(format!(
                "sampled boundary value {v} at node {idx} is not positive"
            )));
        }
        field.values[idx] = v;
    }
    Ok(field)
}

/// Discrete weighted Dirichlet energy
/// `sum over edges of omega_face * ((u_q - u_p)/h)^2 * h^n`,
/// restricted to edges with at least one interior endpoint and no exterior
/// endpoint.
pub fn dirichlet_energy(field: &ScalarField, wf: &WeightField) -> f64 {
    energy_over_edges(field, wf, |_, _| true)
}

/// Same sum restricted to edges selected by `keep(p, q)` (on top of the
/// interior/exterior rule). Used for ball-local and level-band energies.
pub fn energy_over_edges(
    field: &ScalarField,
    wf: &WeightField,
    keep: impl Fn(usize, usize) -> bool,
) -> f64 {
    let grid = &field.grid;
    wf.assert_matches(grid);
    let scale = grid.h.powi(grid.n as i32 - 2);
    let mut total = 0.0;
    grid.for_each_edge(|axis, edge, p, q| {
        let cp = grid.class(p);
        let cq = grid.class(q);
        if cp == NodeClass::Exterior || cq == NodeClass::Exterior {
            return;
        }
        if cp != NodeClass::Interior && cq != NodeClass::Interior {
            return;
        }
        if !keep(p, q) {
            return;
        }
        let d = field.values[q] - field.values[p];
        total += wf.face_value(axis, edge) * d * d * scale;
    });
    total
}

/// Weighted measure of the discrete superlevel set `{u > delta} ∩ B_1`.
/// Cells are counted by the fraction of corners that are interior nodes
/// with value above the threshold.
pub fn positivity_measure(field: &ScalarField, wf: &WeightField, delta_pos: f64) -> f64 {
    let grid = &field.grid;
    wf.assert_matches(grid);
    let vol = grid.cell_volume();
    let denom = (1u32 << grid.n) as f64;
    let mut total = 0.0;
    for cell in 0..grid.cells.len {
        if grid.interior_corner_count(cell) == 0 {
            continue;
        }
        let mut cnt = 0u32;
        for corner in grid.cell_corners(cell) {
            if grid.class(corner) == NodeClass::Interior && field.values[corner] > delta_pos {
                cnt += 1;
            }
        }
        if cnt > 0 {
            total += wf.cell_value(cell) * vol * cnt as f64 / denom;
        }
    }
    total
}

/// Serialize a field: first line `n N h`, then one full-precision value per
/// node in row-major order (last axis fastest).
pub fn dump_field(field: &ScalarField) -> String {
    let grid = &field.grid;
    let mut out = String::with_capacity(field.values.len() * 20);
    let _ = writeln!(out, "{} {} {}", grid.n, grid.resolution, grid.h);
    for v in &field.values {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn write_field(field: &ScalarField, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, dump_field(field))?;
    Ok(())
}

/// Parse a field dump against an existing grid.
pub fn read_field(grid: &Arc<Grid>, text: &str) -> Result<ScalarField> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::MalformedDump("empty file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::MalformedDump(format!("bad header `{header}`")));
    }
    let n: usize = parts[0].parse().map_err(|_| Error::MalformedDump("bad dimension".into()))?;
    let res: usize = parts[1].parse().map_err(|_| Error::MalformedDump("bad resolution".into()))?;
    if n != grid.n || res != grid.resolution {
        return Err(Error::FieldMismatch(format!(
            "dump is {n}d at N={res}, grid is {}d at N={}",
            grid.n, grid.resolution
        )));
    }
    let mut values = Vec::with_capacity(grid.nodes.len);
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::MalformedDump(format!("bad value `{line}`")))?;
        if !v.is_finite() {
            return Err(Error::MalformedDump(format!("non-finite value `{line}`")));
        }
        values.push(v);
    }
    if values.len() != grid.nodes.len {
        return Err(Error::FieldMismatch(format!(
            "expected {} values, got {}",
            grid.nodes.len,
            values.len()
        )));
    }
    for idx in 0..grid.nodes.len {
        if grid.class(idx) == NodeClass::Exterior && values[idx] != 0.0 {
            return Err(Error::MalformedDump(format!(
                "exterior node {idx} carries nonzero value {}",
                values[idx]
            )));
        }
    }
    Ok(ScalarField { grid: grid.clone(), values })
}
