//! Spectral Galerkin basis on a rectangle `[0,Lx] x [0,Ly]`.
//!
//! Scalar modes are tensor products of 1D sine/cosine eigenfunctions of the
//! Laplacian, scaled to unit L2 norm:
//!
//! ```text
//!   C_i(x) = n_i cos(i pi x / L),   S_i(x) = sqrt(2/L) sin(i pi x / L),
//! ```
//!
//! with `n_0 = 1/sqrt(L)`, `n_i = sqrt(2/L)` otherwise. Four parity families
//! carry the unknowns: velocity components use sin*cos (x-component) and
//! cos*sin (y-component) so that `v.n = 0` holds identically on the boundary,
//! diagonal deformation-gradient components use the Neumann family cos*cos,
//! and the shear components use sin*sin, the parity their products with the
//! velocity gradients force. Derivatives exchange sine and cosine per axis,
//! staying inside the same four-member closure; a [`Family`] names any of
//! them.
//!
//! Grids are midpoint collocation grids `x_m = (m+1/2) L / M`, on which both
//! the sine and cosine systems are discretely orthogonal and the midpoint rule
//! integrates in-span products exactly. `M >= ceil(3N/2)` per axis removes
//! aliasing from quadratic products (3/2 rule). Pairings between families of
//! opposite parity (needed when assembling weak forms) are evaluated exactly
//! through the closed-form couplings `int C_q S_i dx`.

use ndarray::{Array1, Array2, ArrayView2};
use std::f64::consts::PI;
use thiserror::Error;

use crate::parallel::{grid_sum, matmul};

/// Errors from basis construction or shape checks.
#[derive(Debug, Error)]
pub enum BasisError {
    #[error("domain edges must be positive, got {lx} x {ly}")]
    InvalidDomain { lx: f64, ly: f64 },
    #[error("mode counts must be at least 2 per axis, got {nx} x {ny}")]
    TooFewModes { nx: usize, ny: usize },
    #[error("grid {mx} x {my} too small for modes {nx} x {ny}: need M >= ceil(3N/2)")]
    GridTooSmall {
        nx: usize,
        ny: usize,
        mx: usize,
        my: usize,
    },
    #[error("expected array of shape {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("operation needs rank {expected}, field has rank {got}")]
    Rank { expected: usize, got: usize },
    #[error("missing {0} representation; call the transform first")]
    MissingRepresentation(&'static str),
    #[error("boundary data is not tangential: |g.n| = {normal} exceeds {tol}")]
    NotTangential { normal: f64, tol: f64 },
}

/// Rectangle `[0,Lx] x [0,Ly]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub lx: f64,
    pub ly: f64,
}

impl Domain {
    pub fn new(lx: f64, ly: f64) -> Result<Self, BasisError> {
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(BasisError::InvalidDomain { lx, ly });
        }
        Ok(Self { lx, ly })
    }

    pub fn unit_square() -> Self {
        Self { lx: 1.0, ly: 1.0 }
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }
}

/// The four edges of the rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    /// x = 0
    Left,
    /// x = Lx
    Right,
    /// y = 0
    Bottom,
    /// y = Ly
    Top,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Bottom, Edge::Top];

    /// Outward unit normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Edge::Left => [-1.0, 0.0],
            Edge::Right => [1.0, 0.0],
            Edge::Bottom => [0.0, -1.0],
            Edge::Top => [0.0, 1.0],
        }
    }

    /// Unit tangent (direction of increasing arc parameter).
    pub fn tangent(self) -> [f64; 2] {
        match self {
            Edge::Left | Edge::Right => [0.0, 1.0],
            Edge::Bottom | Edge::Top => [1.0, 0.0],
        }
    }

    pub fn length(self, domain: &Domain) -> f64 {
        match self {
            Edge::Left | Edge::Right => domain.ly,
            Edge::Bottom | Edge::Top => domain.lx,
        }
    }
}

/// 1D parity of a mode family along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Sin,
    Cos,
}

impl Parity {
    /// Parity of a pointwise product along one axis.
    pub fn product(self, other: Parity) -> Parity {
        if self == other {
            Parity::Cos
        } else {
            Parity::Sin
        }
    }

    /// Parity after one differentiation along this axis.
    pub fn differentiate(self) -> Parity {
        match self {
            Parity::Sin => Parity::Cos,
            Parity::Cos => Parity::Sin,
        }
    }
}

/// Tensor-product family of a scalar field: a parity per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Family {
    pub x: Parity,
    pub y: Parity,
}

impl Family {
    /// Velocity x-component family ("a"): sin(x) * cos(y), zero trace on x-walls.
    pub const SC: Family = Family {
        x: Parity::Sin,
        y: Parity::Cos,
    };
    /// Velocity y-component family ("b"): cos(x) * sin(y), zero trace on y-walls.
    pub const CS: Family = Family {
        x: Parity::Cos,
        y: Parity::Sin,
    };
    /// Neumann family ("c"): cos(x) * cos(y); carries diagonal F components.
    pub const CC: Family = Family {
        x: Parity::Cos,
        y: Parity::Cos,
    };
    /// Double-sine family ("d"): sin(x) * sin(y), zero trace on all walls;
    /// carries shear F components.
    pub const SS: Family = Family {
        x: Parity::Sin,
        y: Parity::Sin,
    };

    pub fn product(self, other: Family) -> Family {
        Family {
            x: self.x.product(other.x),
            y: self.y.product(other.y),
        }
    }
}

/// Spectral basis with precomputed transform, coupling, and edge tables.
#[derive(Clone, Debug)]
pub struct GalerkinBasis {
    pub domain: Domain,
    /// Retained modes per axis (indices `0..nx`, `0..ny`).
    pub nx: usize,
    pub ny: usize,
    /// Collocation grid points per axis (3/2-rule padded).
    pub mx: usize,
    pub my: usize,
    /// Axis wavenumbers `k_i = i pi / L`.
    pub kx: Array1<f64>,
    pub ky: Array1<f64>,
    /// Laplacian eigenvalues `lambda_ij = kx_i^2 + ky_j^2`.
    pub lambda: Array2<f64>,
    /// Grid coordinates (midpoints).
    pub xs: Array1<f64>,
    pub ys: Array1<f64>,

    // Synthesis tables, shape (m, n): column i holds mode i at the grid points.
    syn_cos_x: Array2<f64>,
    syn_sin_x: Array2<f64>,
    syn_cos_y: Array2<f64>,
    syn_sin_y: Array2<f64>,
    // Analysis tables, shape (n, m): quadrature-weighted transposes.
    ana_cos_x: Array2<f64>,
    ana_sin_x: Array2<f64>,
    ana_cos_y: Array2<f64>,
    ana_sin_y: Array2<f64>,
    // Parity couplings U[c, s] = int C_c S_s, shape (n, n), checkerboard sparse.
    coupling_x: Array2<f64>,
    coupling_y: Array2<f64>,
    // 1D integrals of each mode over its axis.
    int_cos_x: Array1<f64>,
    int_sin_x: Array1<f64>,
    int_cos_y: Array1<f64>,
    int_sin_y: Array1<f64>,
    // Gauss-Legendre edge quadrature (nodes on [0,L], weights) per axis.
    pub gl_x: (Array1<f64>, Array1<f64>),
    pub gl_y: (Array1<f64>, Array1<f64>),
    // Mode traces at the Gauss-Legendre nodes, shape (n, n_gl).
    cos_gl_x: Array2<f64>,
    sin_gl_x: Array2<f64>,
    cos_gl_y: Array2<f64>,
    sin_gl_y: Array2<f64>,
}

/// Smallest padded grid satisfying the 3/2 rule for `n` modes.
pub fn dealiased_grid(n: usize) -> usize {
    (3 * n + 1) / 2
}

fn normalization(parity: Parity, i: usize, l: f64) -> f64 {
    match parity {
        Parity::Cos if i == 0 => (1.0 / l).sqrt(),
        _ => (2.0 / l).sqrt(),
    }
}

fn build_axis_tables(
    n: usize,
    m: usize,
    l: f64,
) -> (
    Array2<f64>, // syn cos (m, n)
    Array2<f64>, // syn sin (m, n)
    Array2<f64>, // ana cos (n, m)
    Array2<f64>, // ana sin (n, m)
) {
    let w = l / m as f64;
    let mut syn_cos = Array2::zeros((m, n));
    let mut syn_sin = Array2::zeros((m, n));
    for gp in 0..m {
        let theta = PI * (gp as f64 + 0.5) / m as f64;
        for i in 0..n {
            let nc = normalization(Parity::Cos, i, l);
            syn_cos[[gp, i]] = nc * (i as f64 * theta).cos();
            if i > 0 {
                let ns = normalization(Parity::Sin, i, l);
                syn_sin[[gp, i]] = ns * (i as f64 * theta).sin();
            }
        }
    }
    let ana_cos = syn_cos.t().map(|&v| v * w);
    let ana_sin = syn_sin.t().map(|&v| v * w);
    (syn_cos, syn_sin, ana_cos, ana_sin)
}

/// `U[c, s] = int_0^L C_c(x) S_s(x) dx`; nonzero only for odd `c + s`.
fn build_coupling(n: usize, l: f64) -> Array2<f64> {
    let mut u = Array2::zeros((n, n));
    for c in 0..n {
        for s in 1..n {
            if (c + s) % 2 == 1 {
                let nc = normalization(Parity::Cos, c, l);
                let ns = normalization(Parity::Sin, s, l);
                let (cf, sf) = (c as f64, s as f64);
                u[[c, s]] = nc * ns * (l / PI) * 2.0 * sf / (sf * sf - cf * cf);
            }
        }
    }
    u
}

/// Gauss-Legendre rule with `n` nodes mapped to `[0, l]`.
pub fn gauss_legendre(n: usize, l: f64) -> (Array1<f64>, Array1<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..(n + 1) / 2 {
        // Newton iteration from the Chebyshev-like initial guess.
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0_f64, x);
            for j in 1..n {
                let jf = j as f64;
                let p2 = ((2.0 * jf + 1.0) * x * p1 - jf * p0) / (jf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        // Recompute the derivative at the converged node for the weight.
        let (mut p0, mut p1) = (1.0_f64, x);
        for j in 1..n {
            let jf = j as f64;
            let p2 = ((2.0 * jf + 1.0) * x * p1 - jf * p0) / (jf + 1.0);
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    let half = l / 2.0;
    let mapped_nodes = Array1::from_iter(nodes.iter().map(|&x| half * (x + 1.0)));
    let mapped_weights = Array1::from_iter(weights.iter().map(|&w| w * half));
    (mapped_nodes, mapped_weights)
}

fn trace_tables(n: usize, l: f64, nodes: &Array1<f64>) -> (Array2<f64>, Array2<f64>) {
    let ngl = nodes.len();
    let mut cos_t = Array2::zeros((n, ngl));
    let mut sin_t = Array2::zeros((n, ngl));
    for i in 0..n {
        let k = i as f64 * PI / l;
        let nc = normalization(Parity::Cos, i, l);
        let ns = normalization(Parity::Sin, i, l);
        for (g, &x) in nodes.iter().enumerate() {
            cos_t[[i, g]] = nc * (k * x).cos();
            if i > 0 {
                sin_t[[i, g]] = ns * (k * x).sin();
            }
        }
    }
    (cos_t, sin_t)
}

impl GalerkinBasis {
    pub fn new(
        domain: Domain,
        nx: usize,
        ny: usize,
        mx: usize,
        my: usize,
    ) -> Result<Self, BasisError> {
        if nx < 2 || ny < 2 {
            return Err(BasisError::TooFewModes { nx, ny });
        }
        if mx < dealiased_grid(nx) || my < dealiased_grid(ny) {
            return Err(BasisError::GridTooSmall { nx, ny, mx, my });
        }
        let kx = Array1::from_iter((0..nx).map(|i| i as f64 * PI / domain.lx));
        let ky = Array1::from_iter((0..ny).map(|j| j as f64 * PI / domain.ly));
        let lambda = Array2::from_shape_fn((nx, ny), |(i, j)| kx[i] * kx[i] + ky[j] * ky[j]);
        let xs = Array1::from_iter((0..mx).map(|m| (m as f64 + 0.5) * domain.lx / mx as f64));
        let ys = Array1::from_iter((0..my).map(|m| (m as f64 + 0.5) * domain.ly / my as f64));
        let (syn_cos_x, syn_sin_x, ana_cos_x, ana_sin_x) = build_axis_tables(nx, mx, domain.lx);
        let (syn_cos_y, syn_sin_y, ana_cos_y, ana_sin_y) = build_axis_tables(ny, my, domain.ly);
        let coupling_x = build_coupling(nx, domain.lx);
        let coupling_y = build_coupling(ny, domain.ly);

        let mut int_cos_x = Array1::zeros(nx);
        int_cos_x[0] = domain.lx.sqrt();
        let mut int_sin_x = Array1::zeros(nx);
        for i in 1..nx {
            if i % 2 == 1 {
                int_sin_x[i] =
                    normalization(Parity::Sin, i, domain.lx) * 2.0 * domain.lx / (i as f64 * PI);
            }
        }
        let mut int_cos_y = Array1::zeros(ny);
        int_cos_y[0] = domain.ly.sqrt();
        let mut int_sin_y = Array1::zeros(ny);
        for j in 1..ny {
            if j % 2 == 1 {
                int_sin_y[j] =
                    normalization(Parity::Sin, j, domain.ly) * 2.0 * domain.ly / (j as f64 * PI);
            }
        }

        let gl_x = gauss_legendre(mx.max(24), domain.lx);
        let gl_y = gauss_legendre(my.max(24), domain.ly);
        let (cos_gl_x, sin_gl_x) = trace_tables(nx, domain.lx, &gl_x.0);
        let (cos_gl_y, sin_gl_y) = trace_tables(ny, domain.ly, &gl_y.0);

        Ok(Self {
            domain,
            nx,
            ny,
            mx,
            my,
            kx,
            ky,
            lambda,
            xs,
            ys,
            syn_cos_x,
            syn_sin_x,
            syn_cos_y,
            syn_sin_y,
            ana_cos_x,
            ana_sin_x,
            ana_cos_y,
            ana_sin_y,
            coupling_x,
            coupling_y,
            int_cos_x,
            int_sin_x,
            int_cos_y,
            int_sin_y,
            gl_x,
            gl_y,
            cos_gl_x,
            sin_gl_x,
            cos_gl_y,
            sin_gl_y,
        })
    }

    /// Basis with the smallest 3/2-rule grid for the requested modes.
    pub fn with_default_grid(domain: Domain, nx: usize, ny: usize) -> Result<Self, BasisError> {
        Self::new(domain, nx, ny, dealiased_grid(nx), dealiased_grid(ny))
    }

    pub fn coeff_shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.mx, self.my)
    }

    /// Midpoint quadrature weight of one grid cell.
    pub fn quad_weight(&self) -> f64 {
        self.domain.lx / self.mx as f64 * self.domain.ly / self.my as f64
    }

    fn syn_x(&self, p: Parity) -> &Array2<f64> {
        match p {
            Parity::Cos => &self.syn_cos_x,
            Parity::Sin => &self.syn_sin_x,
        }
    }

    fn syn_y(&self, p: Parity) -> &Array2<f64> {
        match p {
            Parity::Cos => &self.syn_cos_y,
            Parity::Sin => &self.syn_sin_y,
        }
    }

    fn ana_x(&self, p: Parity) -> &Array2<f64> {
        match p {
            Parity::Cos => &self.ana_cos_x,
            Parity::Sin => &self.ana_sin_x,
        }
    }

    fn ana_y(&self, p: Parity) -> &Array2<f64> {
        match p {
            Parity::Cos => &self.ana_cos_y,
            Parity::Sin => &self.ana_sin_y,
        }
    }

    fn check_coeff(&self, c: ArrayView2<f64>) -> Result<(), BasisError> {
        if c.dim() != (self.nx, self.ny) {
            return Err(BasisError::Shape {
                expected: (self.nx, self.ny),
                got: c.dim(),
            });
        }
        Ok(())
    }

    fn check_grid(&self, g: ArrayView2<f64>) -> Result<(), BasisError> {
        if g.dim() != (self.mx, self.my) {
            return Err(BasisError::Shape {
                expected: (self.mx, self.my),
                got: g.dim(),
            });
        }
        Ok(())
    }

    /// Grid values of a coefficient array: `G = X C Y^T`.
    pub fn synthesize(&self, coeff: ArrayView2<f64>, fam: Family) -> Array2<f64> {
        debug_assert!(self.check_coeff(coeff).is_ok());
        let tmp = matmul(coeff, self.syn_y(fam.y).t());
        matmul(self.syn_x(fam.x).view(), tmp.view())
    }

    /// Quadrature projection of grid values onto the family's modes.
    ///
    /// Exact L2 projection (of the trigonometric interpolant) whenever the
    /// sampled function is a trig polynomial of the family's parity with
    /// per-axis index sums below `2M`; in particular exact and alias-free for
    /// products of two in-span fields on the 3/2-padded grid.
    pub fn analyze(&self, grid: ArrayView2<f64>, fam: Family) -> Array2<f64> {
        debug_assert!(self.check_grid(grid).is_ok());
        let tmp = matmul(self.ana_x(fam.x).view(), grid);
        matmul(tmp.view(), self.ana_y(fam.y).t())
    }

    /// Coefficient-space x-derivative; sine and cosine exchange with factor
    /// `+k` (sin -> cos) or `-k` (cos -> sin).
    pub fn dx(&self, coeff: ArrayView2<f64>, fam: Family) -> (Array2<f64>, Family) {
        debug_assert!(self.check_coeff(coeff).is_ok());
        let sign = match fam.x {
            Parity::Sin => 1.0,
            Parity::Cos => -1.0,
        };
        let mut out = coeff.to_owned();
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            let f = sign * self.kx[i];
            row.map_inplace(|v| *v *= f);
        }
        (
            out,
            Family {
                x: fam.x.differentiate(),
                y: fam.y,
            },
        )
    }

    /// Coefficient-space y-derivative.
    pub fn dy(&self, coeff: ArrayView2<f64>, fam: Family) -> (Array2<f64>, Family) {
        debug_assert!(self.check_coeff(coeff).is_ok());
        let sign = match fam.y {
            Parity::Sin => 1.0,
            Parity::Cos => -1.0,
        };
        let mut out = coeff.to_owned();
        for (j, mut col) in out.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            let f = sign * self.ky[j];
            col.map_inplace(|v| *v *= f);
        }
        (
            out,
            Family {
                x: fam.x,
                y: fam.y.differentiate(),
            },
        )
    }

    /// Exact L2 projection of a coefficient array onto another family.
    ///
    /// Same-parity axes pass through; opposite-parity axes apply the
    /// closed-form sine/cosine coupling. This is the cross-family piece of
    /// weak-form assembly and is exact for in-span inputs.
    pub fn project(&self, coeff: ArrayView2<f64>, from: Family, to: Family) -> Array2<f64> {
        debug_assert!(self.check_coeff(coeff).is_ok());
        let mut cur = coeff.to_owned();
        if from.x != to.x {
            cur = match to.x {
                // target cos row i: sum_q U[i, q] c[q, :]
                Parity::Cos => matmul(self.coupling_x.view(), cur.view()),
                Parity::Sin => matmul(self.coupling_x.t(), cur.view()),
            };
        }
        if from.y != to.y {
            cur = match to.y {
                Parity::Cos => matmul(cur.view(), self.coupling_y.t()),
                Parity::Sin => matmul(cur.view(), self.coupling_y.view()),
            };
        }
        cur
    }

    /// Midpoint-rule integral of grid values over the domain.
    pub fn integrate_grid(&self, grid: ArrayView2<f64>) -> f64 {
        debug_assert!(self.check_grid(grid).is_ok());
        self.quad_weight() * grid_sum(&grid.to_owned())
    }

    /// Exact integral of the spectral representation.
    pub fn integrate_coeff(&self, coeff: ArrayView2<f64>, fam: Family) -> f64 {
        debug_assert!(self.check_coeff(coeff).is_ok());
        let ix = match fam.x {
            Parity::Cos => &self.int_cos_x,
            Parity::Sin => &self.int_sin_x,
        };
        let iy = match fam.y {
            Parity::Cos => &self.int_cos_y,
            Parity::Sin => &self.int_sin_y,
        };
        let mut total = 0.0;
        for i in 0..self.nx {
            if ix[i] == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for j in 0..self.ny {
                s += coeff[[i, j]] * iy[j];
            }
            total += ix[i] * s;
        }
        total
    }

    /// L2 norm from coefficients (Parseval; the modes are orthonormal).
    pub fn l2_norm_coeff(&self, coeff: ArrayView2<f64>) -> f64 {
        coeff.iter().map(|&c| c * c).sum::<f64>().sqrt()
    }

    /// Value of the spectral representation at an arbitrary point.
    pub fn point_eval(&self, coeff: ArrayView2<f64>, fam: Family, x: f64, y: f64) -> f64 {
        debug_assert!(self.check_coeff(coeff).is_ok());
        let ev = PointEvaluator::new(self, x, y);
        ev.value(coeff, fam)
    }

    /// Mode trace values along one edge at the Gauss-Legendre nodes.
    ///
    /// Returns the per-node values of the family's trace factor along the
    /// edge direction and the constant factor from the transverse axis.
    pub fn edge_nodes(&self, edge: Edge) -> (&Array1<f64>, &Array1<f64>) {
        match edge {
            Edge::Left | Edge::Right => (&self.gl_y.0, &self.gl_y.1),
            Edge::Bottom | Edge::Top => (&self.gl_x.0, &self.gl_x.1),
        }
    }

    /// 1D mode values at the Gauss-Legendre nodes of the axis running along
    /// `edge` (cos table, sin table), shape `(n, n_gl)`.
    pub fn edge_trace_tables(&self, edge: Edge) -> (&Array2<f64>, &Array2<f64>) {
        match edge {
            Edge::Left | Edge::Right => (&self.cos_gl_y, &self.sin_gl_y),
            Edge::Bottom | Edge::Top => (&self.cos_gl_x, &self.sin_gl_x),
        }
    }

    /// Transverse 1D cosine mode values at the fixed coordinate of `edge`
    /// (sine modes vanish there identically).
    pub fn edge_transverse_cos(&self, edge: Edge) -> Array1<f64> {
        match edge {
            Edge::Left => Array1::from_iter(
                (0..self.nx).map(|i| normalization(Parity::Cos, i, self.domain.lx)),
            ),
            Edge::Right => Array1::from_iter((0..self.nx).map(|i| {
                normalization(Parity::Cos, i, self.domain.lx) * if i % 2 == 0 { 1.0 } else { -1.0 }
            })),
            Edge::Bottom => Array1::from_iter(
                (0..self.ny).map(|j| normalization(Parity::Cos, j, self.domain.ly)),
            ),
            Edge::Top => Array1::from_iter((0..self.ny).map(|j| {
                normalization(Parity::Cos, j, self.domain.ly) * if j % 2 == 0 { 1.0 } else { -1.0 }
            })),
        }
    }
}

/// Cached 1D mode values at one point, for repeated field evaluation.
pub struct PointEvaluator {
    cos_x: Array1<f64>,
    sin_x: Array1<f64>,
    cos_y: Array1<f64>,
    sin_y: Array1<f64>,
}

impl PointEvaluator {
    pub fn new(basis: &GalerkinBasis, x: f64, y: f64) -> Self {
        let nx = basis.nx;
        let ny = basis.ny;
        let lx = basis.domain.lx;
        let ly = basis.domain.ly;
        let mut cos_x = Array1::zeros(nx);
        let mut sin_x = Array1::zeros(nx);
        for i in 0..nx {
            let arg = basis.kx[i] * x;
            cos_x[i] = normalization(Parity::Cos, i, lx) * arg.cos();
            if i > 0 {
                sin_x[i] = normalization(Parity::Sin, i, lx) * arg.sin();
            }
        }
        let mut cos_y = Array1::zeros(ny);
        let mut sin_y = Array1::zeros(ny);
        for j in 0..ny {
            let arg = basis.ky[j] * y;
            cos_y[j] = normalization(Parity::Cos, j, ly) * arg.cos();
            if j > 0 {
                sin_y[j] = normalization(Parity::Sin, j, ly) * arg.sin();
            }
        }
        Self {
            cos_x,
            sin_x,
            cos_y,
            sin_y,
        }
    }

    pub fn value(&self, coeff: ArrayView2<f64>, fam: Family) -> f64 {
        let vx = match fam.x {
            Parity::Cos => &self.cos_x,
            Parity::Sin => &self.sin_x,
        };
        let vy = match fam.y {
            Parity::Cos => &self.cos_y,
            Parity::Sin => &self.sin_y,
        };
        let mut total = 0.0;
        for i in 0..vx.len() {
            if vx[i] == 0.0 {
                continue;
            }
            let row = coeff.row(i);
            let mut s = 0.0;
            for j in 0..vy.len() {
                s += row[j] * vy[j];
            }
            total += vx[i] * s;
        }
        total
    }
}
