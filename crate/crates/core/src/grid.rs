//! Uniform quadrilateral mesh of a rectangle with conforming bilinear (Q1)
//! nodal spaces, the assembled Galerkin operators, and the discrete harmonic
//! lifting of Dirichlet data.
//!
//! Node `(i, j)` has index `j * (nx + 1) + i`. Vector fields interleave
//! components: dof `2 * node + c`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, DirectSolver, TripletBuilder};

/// Local node order of a cell: (0,0), (1,0), (1,1), (0,1).
const LOCAL: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

/// Dimensions identifying a grid; fields carry this to detect mismatches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridShape {
    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    shape: GridShape,
    dx: f64,
    dy: f64,
    is_boundary: Vec<bool>,
    boundary_nodes: Vec<usize>,
    interior_nodes: Vec<usize>,
    sides: [Vec<usize>; 4],
}

pub fn build_grid(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Grid> {
    if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
        return Err(Error::InvalidDimensions(format!("extents must be positive, got Lx={lx}, Ly={ly}")));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidDimensions(format!("cell counts must be positive, got nx={nx}, ny={ny}")));
    }
    let shape = GridShape { lx, ly, nx, ny };
    let n = shape.node_count();
    let mut is_boundary = vec![false; n];
    let mut sides: [Vec<usize>; 4] = Default::default();
    for j in 0..=ny {
        for i in 0..=nx {
            let k = j * (nx + 1) + i;
            if j == 0 {
                sides[0].push(k);
            }
            if i == nx {
                sides[1].push(k);
            }
            if j == ny {
                sides[2].push(k);
            }
            if i == 0 {
                sides[3].push(k);
            }
            is_boundary[k] = i == 0 || j == 0 || i == nx || j == ny;
        }
    }
    let boundary_nodes = (0..n).filter(|&k| is_boundary[k]).collect();
    let interior_nodes = (0..n).filter(|&k| !is_boundary[k]).collect();
    Ok(Grid {
        shape,
        dx: lx / nx as f64,
        dy: ly / ny as f64,
        is_boundary,
        boundary_nodes,
        interior_nodes,
        sides,
    })
}

impl Grid {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn nx(&self) -> usize {
        self.shape.nx
    }

    pub fn ny(&self) -> usize {
        self.shape.ny
    }

    pub fn lx(&self) -> f64 {
        self.shape.lx
    }

    pub fn ly(&self) -> f64 {
        self.shape.ly
    }

    pub fn node_count(&self) -> usize {
        self.shape.node_count()
    }

    pub fn cell_count(&self) -> usize {
        self.shape.nx * self.shape.ny
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (self.dx, self.dy)
    }

    /// Characteristic mesh size `max(dx, dy)`.
    pub fn h(&self) -> f64 {
        self.dx.max(self.dy)
    }

    pub fn area(&self) -> f64 {
        self.shape.lx * self.shape.ly
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.shape.lx + self.shape.ly)
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.shape.nx + 1) + i
    }

    #[inline]
    pub fn node_coords(&self, k: usize) -> (f64, f64) {
        let i = k % (self.shape.nx + 1);
        let j = k / (self.shape.nx + 1);
        (i as f64 * self.dx, j as f64 * self.dy)
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.is_boundary[k]
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    pub fn side_nodes(&self, side: Side) -> &[usize] {
        &self.sides[side as usize]
    }

    /// Global node indices of cell `(ci, cj)` in local order.
    #[inline]
    pub fn cell_nodes(&self, ci: usize, cj: usize) -> [usize; 4] {
        LOCAL.map(|(a, b)| self.node_index(ci + a, cj + b))
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.shape.ny).flat_map(move |cj| (0..self.shape.nx).map(move |ci| (ci, cj)))
    }

    /// Physical coordinates of Gauss point `q` in cell `(ci, cj)`.
    pub fn quad_point(&self, ci: usize, cj: usize, q: usize) -> (f64, f64) {
        let (xi, eta) = GAUSS_2X2[q];
        (
            (ci as f64 + 0.5 * (1.0 + xi)) * self.dx,
            (cj as f64 + 0.5 * (1.0 + eta)) * self.dy,
        )
    }

    /// Evaluates the bilinear interpolant of nodal `values` at `(x, y)`.
    pub fn interpolate(&self, values: &[f64], x: f64, y: f64) -> f64 {
        let fx = (x / self.dx).clamp(0.0, self.shape.nx as f64);
        let fy = (y / self.dy).clamp(0.0, self.shape.ny as f64);
        let ci = (fx.floor() as usize).min(self.shape.nx - 1);
        let cj = (fy.floor() as usize).min(self.shape.ny - 1);
        let (s, t) = (fx - ci as f64, fy - cj as f64);
        let nodes = self.cell_nodes(ci, cj);
        values[nodes[0]] * (1.0 - s) * (1.0 - t)
            + values[nodes[1]] * s * (1.0 - t)
            + values[nodes[2]] * s * t
            + values[nodes[3]] * (1.0 - s) * t
    }

    fn check(&self, shape: GridShape) -> Result<()> {
        if shape != self.shape {
            return Err(Error::GridMismatch { expected: self.node_count(), found: shape.node_count() });
        }
        Ok(())
    }
}

const G: f64 = 0.577_350_269_189_625_8; // 1/√3
/// Reference-cell Gauss points, ordered like the local nodes.
pub const GAUSS_2X2: [(f64, f64); 4] = [(-G, -G), (G, -G), (G, G), (-G, G)];

/// Shape-function values and physical gradients at the four Gauss points of
/// a cell. Identical for every cell of a uniform grid.
#[derive(Debug, Clone)]
pub struct CellQuadrature {
    /// `n[q][a]`
    pub n: [[f64; 4]; 4],
    pub dndx: [[f64; 4]; 4],
    pub dndy: [[f64; 4]; 4],
    /// Gauss weight times Jacobian determinant.
    pub weight: f64,
}

impl CellQuadrature {
    pub fn new(dx: f64, dy: f64) -> Self {
        let mut n = [[0.0; 4]; 4];
        let mut dndx = [[0.0; 4]; 4];
        let mut dndy = [[0.0; 4]; 4];
        for (q, &(xi, eta)) in GAUSS_2X2.iter().enumerate() {
            for (a, &(ia, ja)) in LOCAL.iter().enumerate() {
                let sx = 2.0 * ia as f64 - 1.0;
                let sy = 2.0 * ja as f64 - 1.0;
                n[q][a] = 0.25 * (1.0 + sx * xi) * (1.0 + sy * eta);
                dndx[q][a] = 0.25 * sx * (1.0 + sy * eta) * 2.0 / dx;
                dndy[q][a] = 0.25 * (1.0 + sx * xi) * sy * 2.0 / dy;
            }
        }
        Self { n, dndx, dndy, weight: dx * dy / 4.0 }
    }

    #[inline]
    pub fn value(&self, q: usize, local: &[f64; 4]) -> f64 {
        (0..4).map(|a| self.n[q][a] * local[a]).sum()
    }

    #[inline]
    pub fn gradient(&self, q: usize, local: &[f64; 4]) -> (f64, f64) {
        let gx = (0..4).map(|a| self.dndx[q][a] * local[a]).sum();
        let gy = (0..4).map(|a| self.dndy[q][a] * local[a]).sum();
        (gx, gy)
    }
}

/// Condition attached to a scalar field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryTag {
    Neumann,
    /// Member of the zero-trace subspace; boundary coefficients are exactly 0.
    DirichletZero,
    Robin { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    shape: GridShape,
    values: Vec<f64>,
    bc: BoundaryTag,
}

impl ScalarField {
    pub fn new(grid: &Grid, values: Vec<f64>, bc: BoundaryTag) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch { expected: grid.node_count(), found: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(*v));
        }
        let mut f = Self { shape: grid.shape(), values, bc };
        f.enforce_bc(grid);
        Ok(f)
    }

    pub fn zeros(grid: &Grid, bc: BoundaryTag) -> Self {
        Self { shape: grid.shape(), values: vec![0.0; grid.node_count()], bc }
    }

    pub fn constant(grid: &Grid, value: f64, bc: BoundaryTag) -> Self {
        let mut f = Self { shape: grid.shape(), values: vec![value; grid.node_count()], bc };
        f.enforce_bc(grid);
        f
    }

    pub fn from_fn(grid: &Grid, bc: BoundaryTag, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.node_count())
            .map(|k| {
                let (x, y) = grid.node_coords(k);
                f(x, y)
            })
            .collect();
        Self::new(grid, values, bc)
    }

    fn enforce_bc(&mut self, grid: &Grid) {
        if self.bc == BoundaryTag::DirichletZero {
            for &k in grid.boundary_nodes() {
                self.values[k] = 0.0;
            }
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn bc(&self) -> BoundaryTag {
        self.bc
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same values, different boundary tag (re-zeroing for DirichletZero).
    pub fn with_bc(mut self, grid: &Grid, bc: BoundaryTag) -> Self {
        self.bc = bc;
        self.enforce_bc(grid);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    shape: GridShape,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != 2 * grid.node_count() {
            return Err(Error::GridMismatch { expected: 2 * grid.node_count(), found: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(*v));
        }
        Ok(Self { shape: grid.shape(), values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self { shape: grid.shape(), values: vec![0.0; 2 * grid.node_count()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let mut values = Vec::with_capacity(2 * grid.node_count());
        for k in 0..grid.node_count() {
            let (x, y) = grid.node_coords(k);
            let (a, b) = f(x, y);
            values.push(a);
            values.push(b);
        }
        Self::new(grid, values)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(2).copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Galerkin matrices of a grid. Immutable after construction; the lazily
/// built factorization caches are thread-safe.
#[derive(Debug)]
pub struct AssembledOperators {
    grid: Grid,
    quad: CellQuadrature,
    /// `∫ ψ_i ψ_j`
    pub mass: CsrMatrix,
    /// `∫ ∇ψ_i · ∇ψ_j`
    pub stiffness: CsrMatrix,
    /// `∫_Γ ψ_i ψ_j`
    pub boundary_mass: CsrMatrix,
    pub lumped_mass: Vec<f64>,
    /// Component-wise mass on the interleaved vector space.
    pub vector_mass: CsrMatrix,
    /// Component-wise stiffness `∫ ∇v : ∇ζ`.
    pub vector_stiffness: CsrMatrix,
    /// `∫ Dv : Dζ` with the symmetrized gradient.
    pub strain: CsrMatrix,
    /// `∫ div v div ζ`
    pub div_div: CsrMatrix,
    /// `B[i, dof] = ∫ ψ_i div ζ_dof` (scalar rows × vector columns).
    pub divergence: CsrMatrix,
    dirichlet_solver: OnceLock<std::result::Result<DirectSolver, String>>,
}

pub fn assemble(grid: &Grid) -> AssembledOperators {
    let (dx, dy) = grid.cell_size();
    let quad = CellQuadrature::new(dx, dy);
    let n = grid.node_count();

    // element matrices are the same on every cell
    let mut me = [[0.0; 4]; 4];
    let mut ke = [[0.0; 4]; 4];
    let mut se = [[0.0; 8]; 8];
    let mut de = [[0.0; 8]; 8];
    let mut be = [[0.0; 8]; 4];
    for q in 0..4 {
        let w = quad.weight;
        for a in 0..4 {
            for b in 0..4 {
                me[a][b] += w * (quad.n[q][a] * quad.n[q][b]);
                ke[a][b] += w * (quad.dndx[q][a] * quad.dndx[q][b] + quad.dndy[q][a] * quad.dndy[q][b]);
            }
        }
        // vector basis: dof 2a + c is ψ_a e_c
        let grad = |dof: usize| -> [[f64; 2]; 2] {
            let (a, c) = (dof / 2, dof % 2);
            let mut g = [[0.0; 2]; 2];
            g[c][0] = quad.dndx[q][a];
            g[c][1] = quad.dndy[q][a];
            g
        };
        for u in 0..8 {
            let gu = grad(u);
            let du = sym(gu);
            let divu = gu[0][0] + gu[1][1];
            for v in 0..8 {
                let gv = grad(v);
                let dv = sym(gv);
                let divv = gv[0][0] + gv[1][1];
                se[u][v] += w * (du[0][0] * dv[0][0] + 2.0 * du[0][1] * dv[0][1] + du[1][1] * dv[1][1]);
                de[u][v] += w * divu * divv;
            }
            for a in 0..4 {
                be[a][u] += w * quad.n[q][a] * divu;
            }
        }
    }

    // exact symmetry, independent of rounding order
    for a in 0..4 {
        for b in 0..a {
            me[a][b] = me[b][a];
            ke[a][b] = ke[b][a];
        }
    }
    for u in 0..8 {
        for v in 0..u {
            se[u][v] = se[v][u];
            de[u][v] = de[v][u];
        }
    }

    let cells = grid.cell_count();
    let mut mass = TripletBuilder::with_capacity(n, n, 16 * cells);
    let mut stiff = TripletBuilder::with_capacity(n, n, 16 * cells);
    let mut vmass = TripletBuilder::with_capacity(2 * n, 2 * n, 32 * cells);
    let mut vstiff = TripletBuilder::with_capacity(2 * n, 2 * n, 32 * cells);
    let mut strain = TripletBuilder::with_capacity(2 * n, 2 * n, 64 * cells);
    let mut divdiv = TripletBuilder::with_capacity(2 * n, 2 * n, 64 * cells);
    let mut div = TripletBuilder::with_capacity(n, 2 * n, 32 * cells);
    for (ci, cj) in grid.cells() {
        let nodes = grid.cell_nodes(ci, cj);
        for a in 0..4 {
            for b in 0..4 {
                mass.push(nodes[a], nodes[b], me[a][b]);
                stiff.push(nodes[a], nodes[b], ke[a][b]);
                for c in 0..2 {
                    vmass.push(2 * nodes[a] + c, 2 * nodes[b] + c, me[a][b]);
                    vstiff.push(2 * nodes[a] + c, 2 * nodes[b] + c, ke[a][b]);
                }
            }
        }
        for u in 0..8 {
            let gu = 2 * nodes[u / 2] + u % 2;
            for v in 0..8 {
                let gv = 2 * nodes[v / 2] + v % 2;
                strain.push(gu, gv, se[u][v]);
                divdiv.push(gu, gv, de[u][v]);
            }
            for a in 0..4 {
                div.push(nodes[a], gu, be[a][u]);
            }
        }
    }

    // boundary edges with two-point Gauss (exact for the linear traces)
    let mut bmass = TripletBuilder::new(n, n);
    let gp = [0.5 * (1.0 - G), 0.5 * (1.0 + G)];
    let mut edge = |a: usize, b: usize, len: f64| {
        for &t in &gp {
            let (na, nb) = (1.0 - t, t);
            let w = 0.5 * len;
            let off = w * (na * nb);
            bmass.push(a, a, w * (na * na));
            bmass.push(a, b, off);
            bmass.push(b, a, off);
            bmass.push(b, b, w * (nb * nb));
        }
    };
    for side in [Side::Bottom, Side::Right, Side::Top, Side::Left] {
        let nodes = grid.side_nodes(side);
        let len = match side {
            Side::Bottom | Side::Top => dx,
            Side::Left | Side::Right => dy,
        };
        for w in nodes.windows(2) {
            edge(w[0], w[1], len);
        }
    }

    let mass = mass.build();
    let lumped_mass = mass.row_sums();
    AssembledOperators {
        grid: grid.clone(),
        quad,
        mass,
        stiffness: stiff.build(),
        boundary_mass: bmass.build(),
        lumped_mass,
        vector_mass: vmass.build(),
        vector_stiffness: vstiff.build(),
        strain: strain.build(),
        div_div: divdiv.build(),
        divergence: div.build(),
        dirichlet_solver: OnceLock::new(),
    }
}

fn sym(g: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let off = 0.5 * (g[0][1] + g[1][0]);
    [[g[0][0], off], [off, g[1][1]]]
}

impl AssembledOperators {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn quadrature(&self) -> &CellQuadrature {
        &self.quad
    }

    pub fn check(&self, f: &ScalarField) -> Result<()> {
        self.grid.check(f.shape())
    }

    pub fn check_vector(&self, v: &VectorField) -> Result<()> {
        self.grid.check(v.shape())
    }

    /// Values of nodal `values` at the Gauss points of a cell.
    #[inline]
    pub fn local(&self, nodes: &[usize; 4], values: &[f64]) -> [f64; 4] {
        nodes.map(|k| values[k])
    }

    /// `1ᵀ M f = ∫_Ω f_h`.
    pub fn integrate(&self, f: &ScalarField) -> Result<f64> {
        self.check(f)?;
        Ok(self.lumped_mass.iter().zip(f.values()).map(|(m, v)| m * v).sum())
    }

    /// `1ᵀ M_Γ f = ∫_Γ f_h`.
    pub fn boundary_integrate(&self, f: &ScalarField) -> Result<f64> {
        self.check(f)?;
        Ok(self.boundary_mass.row_sums().iter().zip(f.values()).map(|(m, v)| m * v).sum())
    }

    /// `‖u‖_{L²}` of nodal values.
    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.mass.bilinear(u, u).max(0.0).sqrt()
    }

    /// `‖∇u‖_{L²}`.
    pub fn h1_seminorm(&self, u: &[f64]) -> f64 {
        self.stiffness.bilinear(u, u).max(0.0).sqrt()
    }

    /// `‖u‖_V = (‖u‖² + ‖∇u‖²)^{1/2}`.
    pub fn h1_norm(&self, u: &[f64]) -> f64 {
        (self.mass.bilinear(u, u) + self.stiffness.bilinear(u, u)).max(0.0).sqrt()
    }

    pub fn vector_l2_norm(&self, v: &[f64]) -> f64 {
        self.vector_mass.bilinear(v, v).max(0.0).sqrt()
    }

    pub fn vector_h1_norm(&self, v: &[f64]) -> f64 {
        (self.vector_mass.bilinear(v, v) + self.vector_stiffness.bilinear(v, v)).max(0.0).sqrt()
    }

    fn dirichlet_solver(&self) -> Result<&DirectSolver> {
        let cached = self.dirichlet_solver.get_or_init(|| {
            let interior = self.grid.interior_nodes();
            if interior.is_empty() {
                return Err("grid has no interior nodes".into());
            }
            let kii = self.stiffness.submatrix(interior, interior);
            DirectSolver::factor(&kii).map_err(|e| e.to_string())
        });
        cached.as_ref().map_err(|e| Error::LinearSolveFailed(e.clone()))
    }

    /// Discrete harmonic extension: `h = boundary_values` on `grid.boundary_nodes()`
    /// (same order) and `(K h)_i = 0` at every interior node.
    pub fn harmonic_extension(&self, boundary_values: &[f64]) -> Result<ScalarField> {
        let bnodes = self.grid.boundary_nodes();
        if boundary_values.len() != bnodes.len() {
            return Err(Error::GridMismatch { expected: bnodes.len(), found: boundary_values.len() });
        }
        if let Some(v) = boundary_values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(*v));
        }
        let n = self.grid.node_count();
        let mut h = vec![0.0; n];
        for (&k, &v) in bnodes.iter().zip(boundary_values) {
            h[k] = v;
        }
        let interior = self.grid.interior_nodes();
        if !interior.is_empty() && boundary_values.iter().any(|&v| v != 0.0) {
            let kh = self.stiffness.matvec(&h);
            let rhs: Vec<f64> = interior.iter().map(|&k| -kh[k]).collect();
            let hi = self.dirichlet_solver()?.solve(&rhs)?;
            for (&k, v) in interior.iter().zip(hi) {
                h[k] = v;
            }
        }
        ScalarField::new(&self.grid, h, BoundaryTag::Neumann)
    }

    /// Harmonic extension of a function given pointwise on the boundary.
    pub fn harmonic_extension_fn(&self, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        let vals: Vec<f64> = self
            .grid
            .boundary_nodes()
            .iter()
            .map(|&k| {
                let (x, y) = self.grid.node_coords(k);
                f(x, y)
            })
            .collect();
        self.harmonic_extension(&vals)
    }

    /// Nodal interpolation of initial data, with its discrete norms.
    pub fn project_initial(&self, bc: BoundaryTag, f: impl Fn(f64, f64) -> f64) -> Result<InitialProjection> {
        let field = ScalarField::from_fn(&self.grid, bc, f)?;
        Ok(InitialProjection {
            l2_norm: self.l2_norm(field.values()),
            h1_seminorm: self.h1_seminorm(field.values()),
            max_abs: field.max_abs(),
            field,
        })
    }
}

#[derive(Debug, Clone)]
pub struct InitialProjection {
    pub field: ScalarField,
    pub l2_norm: f64,
    pub h1_seminorm: f64,
    pub max_abs: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> (Grid, AssembledOperators) {
        let g = build_grid(1.0, 1.0, n, n).unwrap();
        let ops = assemble(&g);
        (g, ops)
    }

    #[test]
    fn build_grid_examples() {
        let g = build_grid(1.0, 1.0, 2, 2).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.boundary_nodes().len(), 8);
        let g = build_grid(2.0, 1.0, 4, 2).unwrap();
        assert_eq!(g.cell_size(), (0.5, 0.5));
        assert!(matches!(build_grid(1.0, 1.0, 0, 2), Err(Error::InvalidDimensions(_))));
        assert!(matches!(build_grid(-1.0, 1.0, 2, 2), Err(Error::InvalidDimensions(_))));
    }

    #[test]
    fn boundary_sets_cover_boundary() {
        let g = build_grid(3.0, 2.0, 5, 4).unwrap();
        for &k in g.boundary_nodes() {
            let on_side = [Side::Bottom, Side::Right, Side::Top, Side::Left]
                .iter()
                .any(|&s| g.side_nodes(s).contains(&k));
            assert!(on_side);
        }
        assert_eq!(g.boundary_nodes().len() + g.interior_nodes().len(), g.node_count());
    }

    #[test]
    fn mass_and_stiffness_sanity() {
        for n in [1, 3, 8] {
            let (_, ops) = unit(n);
            let total: f64 = ops.mass.values().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(ops.stiffness.row_sums().iter().all(|s| s.abs() < 1e-12));
            let gamma: f64 = ops.boundary_mass.values().iter().sum();
            assert!((gamma - 4.0).abs() < 1e-12);
            assert_eq!(ops.mass.max_asymmetry(), 0.0);
            assert_eq!(ops.stiffness.max_asymmetry(), 0.0);
        }
    }

    #[test]
    fn boundary_mass_lives_on_boundary() {
        let (g, ops) = unit(5);
        for &k in g.interior_nodes() {
            assert!(ops.boundary_mass.row(k).all(|(_, v)| v == 0.0));
        }
    }

    #[test]
    fn integrate_examples() {
        let (g, ops) = unit(6);
        let one = ScalarField::constant(&g, 1.0, BoundaryTag::Neumann);
        assert!((ops.integrate(&one).unwrap() - 1.0).abs() < 1e-12);
        let x = ScalarField::from_fn(&g, BoundaryTag::Neumann, |x, _| x).unwrap();
        assert!((ops.integrate(&x).unwrap() - 0.5).abs() < 1e-12);
        assert!((ops.boundary_integrate(&one).unwrap() - 4.0).abs() < 1e-12);
        let other = build_grid(1.0, 1.0, 3, 3).unwrap();
        let f = ScalarField::zeros(&other, BoundaryTag::Neumann);
        assert!(matches!(ops.integrate(&f), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn harmonic_extension_of_constants_and_linears() {
        let (g, ops) = unit(8);
        let h = ops.harmonic_extension(&vec![3.0; g.boundary_nodes().len()]).unwrap();
        assert!(h.values().iter().all(|v| (v - 3.0).abs() < 1e-12));
        let h = ops.harmonic_extension_fn(|x, _| x).unwrap();
        for k in 0..g.node_count() {
            assert!((h.values()[k] - g.node_coords(k).0).abs() < 1e-10);
        }
    }

    #[test]
    fn dirichlet_zero_fields_are_conforming() {
        let (g, _) = unit(4);
        let f = ScalarField::from_fn(&g, BoundaryTag::DirichletZero, |x, y| 1.0 + x * y).unwrap();
        for &k in g.boundary_nodes() {
            assert_eq!(f.values()[k], 0.0);
        }
        let f = ScalarField::constant(&g, 2.0, BoundaryTag::Neumann).with_bc(&g, BoundaryTag::DirichletZero);
        assert!(g.boundary_nodes().iter().all(|&k| f.values()[k] == 0.0));
    }

    #[test]
    fn strain_form_kills_rigid_motions() {
        let (g, ops) = unit(4);
        // translation and infinitesimal rotation (−y, x)
        for v in [
            VectorField::from_fn(&g, |_, _| (1.0, -2.0)).unwrap(),
            VectorField::from_fn(&g, |x, y| (-y, x)).unwrap(),
        ] {
            let e = ops.strain.bilinear(v.values(), v.values());
            assert!(e.abs() < 1e-12, "strain energy {e}");
        }
        // divergence of (x, y) is 2 everywhere
        let v = VectorField::from_fn(&g, |x, y| (x, y)).unwrap();
        let bv = ops.divergence.matvec(v.values());
        for (k, &m) in ops.lumped_mass.iter().enumerate() {
            assert!((bv[k] - 2.0 * m).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_projection_is_nodal_interpolation() {
        let (g, ops) = unit(4);
        let p = ops.project_initial(BoundaryTag::Neumann, |_, _| 1.0).unwrap();
        assert!(p.field.values().iter().all(|&v| v == 1.0));
        let p = ops.project_initial(BoundaryTag::Neumann, |x, y| (5.0 * (x - 0.5) + y).tanh()).unwrap();
        for k in 0..g.node_count() {
            let (x, y) = g.node_coords(k);
            assert_eq!(p.field.values()[k], (5.0 * (x - 0.5) + y).tanh());
        }
        assert!((p.l2_norm - ops.l2_norm(p.field.values())).abs() < 1e-15);
    }
}
