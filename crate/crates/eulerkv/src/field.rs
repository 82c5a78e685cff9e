//! Tensor fields with dual spectral/grid representation.
//!
//! A [`TensorField`] holds one [`Component`] per tensor entry; each component
//! knows its parity [`Family`] and caches either the coefficient array, the
//! collocation-grid values, or both. Operations synthesize or analyze on
//! demand. Products are formed pointwise on the 3/2-padded grid and analyzed
//! back, which is an exact, alias-free L2 projection when both factors are
//! in-span.

use ndarray::{Array1, Array2, ArrayView2};

use crate::basis::{BasisError, Edge, Family, GalerkinBasis};
use crate::parallel::zip2_into;

/// Tensor rank of a field; fixes the number and meaning of components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    /// Components `[x, y]`.
    Vector,
    /// Components `[xx, xy, yx, yy]`, row r = output index, column s = input.
    Tensor2,
    /// Gradient of a `Tensor2`: components `[(rs, axis)]` in row-major order
    /// `[xx_x, xx_y, xy_x, xy_y, yx_x, yx_y, yy_x, yy_y]`.
    Tensor3,
}

impl Rank {
    pub fn components(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 2,
            Rank::Tensor2 => 4,
            Rank::Tensor3 => 8,
        }
    }

    pub fn order(self) -> usize {
        match self {
            Rank::Scalar => 0,
            Rank::Vector => 1,
            Rank::Tensor2 => 2,
            Rank::Tensor3 => 3,
        }
    }
}

/// One scalar component of a tensor field.
#[derive(Clone, Debug)]
pub struct Component {
    pub family: Family,
    pub coeff: Option<Array2<f64>>,
    pub grid: Option<Array2<f64>>,
}

impl Component {
    pub fn from_coeff(family: Family, coeff: Array2<f64>) -> Self {
        Self {
            family,
            coeff: Some(coeff),
            grid: None,
        }
    }

    pub fn from_grid(family: Family, grid: Array2<f64>) -> Self {
        Self {
            family,
            coeff: None,
            grid: Some(grid),
        }
    }

    pub fn ensure_coeff(&mut self, basis: &GalerkinBasis) -> Result<(), BasisError> {
        if self.coeff.is_none() {
            let g = self
                .grid
                .as_ref()
                .ok_or(BasisError::MissingRepresentation("grid"))?;
            self.coeff = Some(basis.analyze(g.view(), self.family));
        }
        Ok(())
    }

    pub fn ensure_grid(&mut self, basis: &GalerkinBasis) -> Result<(), BasisError> {
        if self.grid.is_none() {
            let c = self
                .coeff
                .as_ref()
                .ok_or(BasisError::MissingRepresentation("coefficient"))?;
            self.grid = Some(basis.synthesize(c.view(), self.family));
        }
        Ok(())
    }

    pub fn coeff_view(&self) -> Result<ArrayView2<'_, f64>, BasisError> {
        self.coeff
            .as_ref()
            .map(|c| c.view())
            .ok_or(BasisError::MissingRepresentation("coefficient"))
    }

    pub fn grid_view(&self) -> Result<ArrayView2<'_, f64>, BasisError> {
        self.grid
            .as_ref()
            .map(|g| g.view())
            .ok_or(BasisError::MissingRepresentation("grid"))
    }
}

/// A rank-tagged collection of components over one basis.
#[derive(Clone, Debug)]
pub struct TensorField {
    pub rank: Rank,
    pub comps: Vec<Component>,
}

impl TensorField {
    pub fn scalar(comp: Component) -> Self {
        Self {
            rank: Rank::Scalar,
            comps: vec![comp],
        }
    }

    /// Velocity-type vector field: x-component in the sin*cos family,
    /// y-component in cos*sin, so `v.n = 0` on the walls.
    pub fn velocity_from_coeffs(ax: Array2<f64>, ay: Array2<f64>) -> Self {
        Self {
            rank: Rank::Vector,
            comps: vec![
                Component::from_coeff(Family::SC, ax),
                Component::from_coeff(Family::CS, ay),
            ],
        }
    }

    /// Tensor field with all four components in the Neumann (cos*cos) family.
    pub fn neumann_tensor_from_coeffs(c: [Array2<f64>; 4]) -> Self {
        let [xx, xy, yx, yy] = c;
        Self {
            rank: Rank::Tensor2,
            comps: vec![
                Component::from_coeff(Family::CC, xx),
                Component::from_coeff(Family::CC, xy),
                Component::from_coeff(Family::CC, yx),
                Component::from_coeff(Family::CC, yy),
            ],
        }
    }

    /// Populate coefficient arrays for every component (grid -> spectral).
    pub fn transform_forward(&mut self, basis: &GalerkinBasis) -> Result<(), BasisError> {
        for c in &mut self.comps {
            c.ensure_coeff(basis)?;
        }
        Ok(())
    }

    /// Populate grid values for every component (spectral -> grid).
    pub fn transform_inverse(&mut self, basis: &GalerkinBasis) -> Result<(), BasisError> {
        for c in &mut self.comps {
            c.ensure_grid(basis)?;
        }
        Ok(())
    }

    /// Spectral gradient, one rank up. Requires coefficients.
    pub fn gradient(&self, basis: &GalerkinBasis) -> Result<TensorField, BasisError> {
        let out_rank = match self.rank {
            Rank::Scalar => Rank::Vector,
            Rank::Vector => Rank::Tensor2,
            Rank::Tensor2 => Rank::Tensor3,
            Rank::Tensor3 => {
                return Err(BasisError::Rank {
                    expected: 2,
                    got: 3,
                })
            }
        };
        let mut comps = Vec::with_capacity(out_rank.components());
        for c in &self.comps {
            let coeff = c.coeff_view()?;
            let (gx, fx) = basis.dx(coeff, c.family);
            let (gy, fy) = basis.dy(coeff, c.family);
            comps.push(Component::from_coeff(fx, gx));
            comps.push(Component::from_coeff(fy, gy));
        }
        Ok(TensorField {
            rank: out_rank,
            comps,
        })
    }

    /// Pointwise product with a scalar field, analyzed back into the product
    /// family on the padded grid (exact projection for in-span factors).
    pub fn dealiased_product(
        &self,
        basis: &GalerkinBasis,
        scalar: &TensorField,
    ) -> Result<TensorField, BasisError> {
        if scalar.rank != Rank::Scalar {
            return Err(BasisError::Rank {
                expected: 0,
                got: scalar.rank.order(),
            });
        }
        let mut s = scalar.comps[0].clone();
        s.ensure_grid(basis)?;
        let sg = s.grid.as_ref().unwrap();
        let mut comps = Vec::with_capacity(self.comps.len());
        for c in &self.comps {
            let mut cc = c.clone();
            cc.ensure_grid(basis)?;
            let g = cc.grid.as_ref().unwrap();
            let mut prod = Array2::zeros(basis.grid_shape());
            zip2_into(&mut prod, g, sg, |a, b| a * b);
            let fam = c.family.product(s.family);
            let coeff = basis.analyze(prod.view(), fam);
            comps.push(Component {
                family: fam,
                coeff: Some(coeff),
                grid: Some(prod),
            });
        }
        Ok(TensorField {
            rank: self.rank,
            comps,
        })
    }

    /// Integral of a scalar field over the domain. Uses the exact spectral
    /// integral when coefficients are available, midpoint quadrature of the
    /// grid otherwise (the two agree for fields with finite cosine series).
    pub fn integrate(&self, basis: &GalerkinBasis) -> Result<f64, BasisError> {
        if self.rank != Rank::Scalar {
            return Err(BasisError::Rank {
                expected: 0,
                got: self.rank.order(),
            });
        }
        let c = &self.comps[0];
        if let Some(coeff) = &c.coeff {
            Ok(basis.integrate_coeff(coeff.view(), c.family))
        } else {
            Ok(basis.integrate_grid(c.grid_view()?))
        }
    }

    /// L2 norm over the domain (Parseval from coefficients).
    pub fn l2_norm(&mut self, basis: &GalerkinBasis) -> Result<f64, BasisError> {
        let mut sum = 0.0;
        for c in &mut self.comps {
            c.ensure_coeff(basis)?;
            let v = c.coeff.as_ref().unwrap();
            sum += v.iter().map(|&x| x * x).sum::<f64>();
        }
        Ok(sum.sqrt())
    }

    /// Trace of a vector field component along one edge, evaluated at the
    /// edge's Gauss-Legendre nodes.
    pub fn edge_trace(
        &self,
        basis: &GalerkinBasis,
        comp: usize,
        edge: Edge,
    ) -> Result<Array1<f64>, BasisError> {
        let c = &self.comps[comp];
        let coeff = c.coeff_view()?;
        Ok(edge_trace_values(basis, coeff, c.family, edge))
    }
}

/// Values of a spectral scalar along one edge at the Gauss-Legendre nodes.
pub fn edge_trace_values(
    basis: &GalerkinBasis,
    coeff: ArrayView2<f64>,
    fam: Family,
    edge: Edge,
) -> Array1<f64> {
    use crate::basis::Parity;
    let (cos_t, sin_t) = basis.edge_trace_tables(edge);
    let ngl = cos_t.dim().1;
    // Transverse factor: mode values at the fixed coordinate of the edge.
    // Sine modes vanish on their walls, so only the cosine factor survives.
    let transverse_parity = match edge {
        Edge::Left | Edge::Right => fam.x,
        Edge::Bottom | Edge::Top => fam.y,
    };
    if transverse_parity == Parity::Sin {
        return Array1::zeros(ngl);
    }
    let tcos = basis.edge_transverse_cos(edge);
    let along_parity = match edge {
        Edge::Left | Edge::Right => fam.y,
        Edge::Bottom | Edge::Top => fam.x,
    };
    let table = match along_parity {
        Parity::Cos => cos_t,
        Parity::Sin => sin_t,
    };
    // reduced[j] = sum_i coeff[i][j] * tcos[i] (x-transverse edges) or the
    // transposed contraction for y-transverse edges.
    match edge {
        Edge::Left | Edge::Right => {
            let reduced = coeff.t().dot(&tcos);
            table.t().dot(&reduced)
        }
        Edge::Bottom | Edge::Top => {
            let reduced = coeff.dot(&tcos);
            table.t().dot(&reduced)
        }
    }
}

/// Boundary pairing `int_edge g_t (tau . test) ds` for every mode of the
/// tangential velocity family of `edge`, as a coefficient array.
///
/// On the x-walls only the y-velocity (cos*sin) has nonzero trace; on the
/// y-walls only the x-velocity (sin*cos). `g_t` holds the tangential traction
/// at the edge's Gauss-Legendre nodes.
pub fn edge_load(basis: &GalerkinBasis, edge: Edge, g_t: &Array1<f64>) -> Array2<f64> {
    let (_, weights) = basis.edge_nodes(edge);
    let (_, sin_t) = basis.edge_trace_tables(edge);
    let weighted = Array1::from_iter(g_t.iter().zip(weights.iter()).map(|(&g, &w)| g * w));
    // along-edge pairing with the sine factor of the tangential family
    let along = sin_t.dot(&weighted);
    let tcos = basis.edge_transverse_cos(edge);
    match edge {
        // tangential component is v2 = C_i(x) S_j(y): rows from tcos, cols from along
        Edge::Left | Edge::Right => {
            let mut out = Array2::zeros((basis.nx, basis.ny));
            for i in 0..basis.nx {
                for j in 0..basis.ny {
                    out[[i, j]] = tcos[i] * along[j];
                }
            }
            out
        }
        // tangential component is v1 = S_i(x) C_j(y)
        Edge::Bottom | Edge::Top => {
            let mut out = Array2::zeros((basis.nx, basis.ny));
            for i in 0..basis.nx {
                for j in 0..basis.ny {
                    out[[i, j]] = along[i] * tcos[j];
                }
            }
            out
        }
    }
}

/// `int_Gamma g . v ds` over listed edges, with `g` given as vectors at the
/// Gauss-Legendre nodes of each edge. Fails unless `g . n` vanishes to the
/// stated tolerance (the walls are impermeable; only tangential loads act).
pub fn boundary_integrate(
    basis: &GalerkinBasis,
    v: &TensorField,
    data: &[(Edge, Array2<f64>)],
    normal_tol: f64,
) -> Result<f64, BasisError> {
    if v.rank != Rank::Vector {
        return Err(BasisError::Rank {
            expected: 1,
            got: v.rank.order(),
        });
    }
    let mut total = 0.0;
    for (edge, g) in data {
        let n = edge.normal();
        let tau = edge.tangent();
        let scale = g.iter().fold(0.0_f64, |a, &x| a.max(x.abs())).max(1.0);
        let mut worst = 0.0_f64;
        for row in g.outer_iter() {
            worst = worst.max((row[0] * n[0] + row[1] * n[1]).abs());
        }
        if worst > normal_tol * scale {
            return Err(BasisError::NotTangential {
                normal: worst,
                tol: normal_tol * scale,
            });
        }
        let (_, weights) = basis.edge_nodes(*edge);
        let vx = v.edge_trace(basis, 0, *edge)?;
        let vy = v.edge_trace(basis, 1, *edge)?;
        for (k, &w) in weights.iter().enumerate() {
            let gt = g[[k, 0]] * tau[0] + g[[k, 1]] * tau[1];
            let vt = vx[k] * tau[0] + vy[k] * tau[1];
            total += w * gt * vt;
        }
    }
    Ok(total)
}
