//! Constitutive laws: stored energy, conservative Cauchy stress, viscous
//! stress, and the second-grade hyperstress.
//!
//! The stored energy is an isotropic function of the Green-Lagrange strain
//! `E = (F^T F - I)/2` with sublinear-growth regularization:
//!
//! ```text
//!   phi(E) = 2 K |sph E|^2 / (2 + eta |E|^(3/2))
//!          +   G |dev E|^2 / (1 + eta |E|^(3/2)),
//! ```
//!
//! `sph E = (tr E) I / 2`, `dev E = E - sph E`. With `eta = 0` this is the
//! St. Venant-Kirchhoff material (quadratic in E); with `eta > 0` both `phi`
//! and `phi'` grow at most linearly in `|F|`, which the well-posedness theory
//! needs. `|E|^(3/2)` is smoothed as `(|E|^2 + delta^2)^(3/4)` with
//! `delta = 1e-12` so the derivative formula has no removable singularity at
//! `E = 0`.
//!
//! The viscous stress is the isotropic two-parameter form
//! `D E = Dlambda (tr E) I + 2 Dmu E` acting on the strain rate `E(v)`, and
//! the hyperstress is `nu |grad E(v)|^(p-2) grad E(v)` with Frobenius norm on
//! the rank-3 gradient.

use ndarray::Array2;
use thiserror::Error;

use crate::basis::{BasisError, GalerkinBasis};
use crate::field::{Component, Rank, TensorField};

/// Row-major 2x2 matrix; `m[r][c]` is row r, column c.
pub type Mat2 = [[f64; 2]; 2];

pub const MAT2_ID: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

const DELTA_SMOOTH: f64 = 1e-12;

pub fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn mat_transpose(a: Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

pub fn mat_det(a: Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Cofactor matrix: d(det F)/dF, satisfying `cof(F) F^T = det(F) I`.
pub fn mat_cofactor(a: Mat2) -> Mat2 {
    [[a[1][1], -a[1][0]], [-a[0][1], a[0][0]]]
}

pub fn mat_frob(a: Mat2) -> f64 {
    (a[0][0] * a[0][0] + a[0][1] * a[0][1] + a[1][0] * a[1][0] + a[1][1] * a[1][1]).sqrt()
}

/// Green-Lagrange strain `E = (F^T F - I)/2`; symmetric by construction.
pub fn green_lagrange(f: Mat2) -> Mat2 {
    let ft_f = mat_mul(mat_transpose(f), f);
    [
        [(ft_f[0][0] - 1.0) / 2.0, ft_f[0][1] / 2.0],
        [ft_f[1][0] / 2.0, (ft_f[1][1] - 1.0) / 2.0],
    ]
}

/// Violations of the constitutive parameter constraints, one per rule.
#[derive(Debug, Error)]
pub enum ParamError {
    #[error("mass density must be positive: rho = {0}")]
    Density(f64),
    #[error("hyperviscosity must be positive: nu = {0}")]
    Hyperviscosity(f64),
    #[error("hyperstress exponent must exceed the spatial dimension 2: p = {0}")]
    Exponent(f64),
    #[error("shear viscosity must be positive: d_mu = {0}")]
    ShearViscosity(f64),
    #[error("bulk viscosity must be nonnegative: d_lambda = {0}")]
    BulkViscosity(f64),
    #[error("bulk modulus must be positive: bulk = {0}")]
    BulkModulus(f64),
    #[error("shear modulus must be positive: shear = {0}")]
    ShearModulus(f64),
    #[error("growth regularization must be nonnegative: eta = {0}")]
    Eta(f64),
    #[error("transport regularization must be nonnegative: epsilon = {0}")]
    Epsilon(f64),
    #[error("parameter must be finite: {0} = {1}")]
    NotFinite(&'static str, f64),
}

/// Physical parameters of the model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    /// Mass density (constant; the model is semi-compressible).
    pub rho: f64,
    /// Viscosity moduli: stress `Dlambda (tr E) I + 2 Dmu E` on strain rate E.
    pub d_lambda: f64,
    pub d_mu: f64,
    /// Hyperviscosity coefficient and exponent of `nu |grad E|^(p-2) grad E`.
    pub nu: f64,
    pub p: f64,
    /// Bulk and shear elastic moduli of the stored energy.
    pub bulk: f64,
    pub shear: f64,
    /// Growth regularization of the stored energy; 0 recovers SVK.
    pub eta: f64,
    /// Deformation-transport regularization (coefficient of Lap F).
    pub epsilon: f64,
}

impl MaterialParams {
    /// Reference parameter set used by the decaying-shear scenario.
    pub fn reference() -> Self {
        Self {
            rho: 1.0,
            d_lambda: 0.1,
            d_mu: 0.1,
            nu: 1e-3,
            p: 3.0,
            bulk: 1.0,
            shear: 1.0,
            eta: 0.1,
            epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let fields = [
            ("rho", self.rho),
            ("d_lambda", self.d_lambda),
            ("d_mu", self.d_mu),
            ("nu", self.nu),
            ("p", self.p),
            ("bulk", self.bulk),
            ("shear", self.shear),
            ("eta", self.eta),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(ParamError::NotFinite(name, v));
            }
        }
        if self.rho <= 0.0 {
            return Err(ParamError::Density(self.rho));
        }
        if self.nu <= 0.0 {
            return Err(ParamError::Hyperviscosity(self.nu));
        }
        if self.p <= 2.0 {
            return Err(ParamError::Exponent(self.p));
        }
        if self.d_mu <= 0.0 {
            return Err(ParamError::ShearViscosity(self.d_mu));
        }
        if self.d_lambda < 0.0 {
            return Err(ParamError::BulkViscosity(self.d_lambda));
        }
        if self.bulk <= 0.0 {
            return Err(ParamError::BulkModulus(self.bulk));
        }
        if self.shear <= 0.0 {
            return Err(ParamError::ShearModulus(self.shear));
        }
        if self.eta < 0.0 {
            return Err(ParamError::Eta(self.eta));
        }
        if self.epsilon < 0.0 {
            return Err(ParamError::Epsilon(self.epsilon));
        }
        Ok(())
    }
}

/// Which stored-energy branch to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoredEnergyKind {
    /// The eta-regularized model (linear growth for eta > 0).
    RegularizedSvk,
    /// Plain St. Venant-Kirchhoff: the eta = 0 branch regardless of eta.
    Svk,
}

/// Stored energy density and its derived stresses.
#[derive(Clone, Copy, Debug)]
pub struct StoredEnergy {
    pub kind: StoredEnergyKind,
    pub bulk: f64,
    pub shear: f64,
    pub eta: f64,
    /// Additive incompressibility penalty `det_penalty (1 - det F)^2`;
    /// 0 disables it. Used by the elastic-bulk incompressible-limit sweep.
    pub det_penalty: f64,
}

impl StoredEnergy {
    pub fn new(kind: StoredEnergyKind, params: &MaterialParams) -> Self {
        Self {
            kind,
            bulk: params.bulk,
            shear: params.shear,
            eta: params.eta,
            det_penalty: 0.0,
        }
    }

    pub fn with_det_penalty(mut self, k: f64) -> Self {
        self.det_penalty = k;
        self
    }

    fn effective_eta(&self) -> f64 {
        match self.kind {
            StoredEnergyKind::RegularizedSvk => self.eta,
            StoredEnergyKind::Svk => 0.0,
        }
    }

    /// Shared invariants of E: trace m, squared Frobenius norm s2, smoothed
    /// growth weight w = (s2 + delta^2)^(3/4), and the denominators.
    #[inline]
    fn strain_invariants(&self, e: Mat2) -> (f64, f64, f64, f64, f64) {
        let m = e[0][0] + e[1][1];
        let s2 = e[0][0] * e[0][0]
            + e[0][1] * e[0][1]
            + e[1][0] * e[1][0]
            + e[1][1] * e[1][1];
        let w = (s2 + DELTA_SMOOTH * DELTA_SMOOTH).powf(0.75);
        let eta = self.effective_eta();
        (m, s2, w, 2.0 + eta * w, 1.0 + eta * w)
    }

    /// Stored energy density phi(F) >= 0.
    pub fn phi(&self, f: Mat2) -> f64 {
        let e = green_lagrange(f);
        let (m, s2, _, a, b) = self.strain_invariants(e);
        // 2K|sph E|^2 = K m^2, |dev E|^2 = s2 - m^2/2 >= 0.
        let mut phi = self.bulk * m * m / a + self.shear * (s2 - m * m / 2.0) / b;
        if self.det_penalty > 0.0 {
            let d = mat_det(f);
            phi += self.det_penalty * (1.0 - d) * (1.0 - d);
        }
        phi
    }

    /// dphi/dE, the symmetric strain-conjugate stress.
    #[inline]
    fn phi_e(&self, e: Mat2) -> Mat2 {
        let (m, s2, _, a, b) = self.strain_invariants(e);
        let eta = self.effective_eta();
        let (k, g) = (self.bulk, self.shear);
        // phi = K m^2 / A + G (s2 - m^2/2) / B with A = 2 + eta w, B = 1 + eta w.
        let c_tr = 2.0 * k * m / a - g * m / b;
        let c_e = 2.0 * g / b;
        // d(w)/dE = (3/2)(s2 + delta^2)^(-1/4) E; chain through both denominators.
        let dw = 1.5 * (s2 + DELTA_SMOOTH * DELTA_SMOOTH).powf(-0.25);
        let c_w = -eta * (k * m * m / (a * a) + g * (s2 - m * m / 2.0) / (b * b));
        let c = c_e + dw * c_w;
        [
            [c_tr + c * e[0][0], c * e[0][1]],
            [c * e[1][0], c_tr + c * e[1][1]],
        ]
    }

    /// Analytic derivative dphi/dF = F dphi/dE (using the symmetry of dphi/dE).
    pub fn phi_prime(&self, f: Mat2) -> Mat2 {
        let s = self.phi_e(green_lagrange(f));
        let mut out = mat_mul(f, s);
        if self.det_penalty > 0.0 {
            let d = mat_det(f);
            let c = -2.0 * self.det_penalty * (1.0 - d);
            let cof = mat_cofactor(f);
            for r in 0..2 {
                for q in 0..2 {
                    out[r][q] += c * cof[r][q];
                }
            }
        }
        out
    }

    /// Conservative Cauchy stress `T = phi'(F) F^T + phi(F) I`; symmetric.
    pub fn cauchy_conservative(&self, f: Mat2) -> Mat2 {
        let (phi, t) = self.phi_and_cauchy(f);
        let _ = phi;
        t
    }

    /// Energy density and conservative stress in one evaluation.
    pub fn phi_and_cauchy(&self, f: Mat2) -> (f64, Mat2) {
        let phi = self.phi(f);
        let pf = self.phi_prime(f);
        let mut t = mat_mul(pf, mat_transpose(f));
        t[0][0] += phi;
        t[1][1] += phi;
        (phi, t)
    }
}

/// Pointwise viscous stress `Dlambda (tr Ev) I + 2 Dmu Ev`.
pub fn viscous_stress_point(ev: Mat2, d_lambda: f64, d_mu: f64) -> Mat2 {
    let tr = ev[0][0] + ev[1][1];
    [
        [d_lambda * tr + 2.0 * d_mu * ev[0][0], 2.0 * d_mu * ev[0][1]],
        [2.0 * d_mu * ev[1][0], d_lambda * tr + 2.0 * d_mu * ev[1][1]],
    ]
}

/// Symmetrized spectral gradient of a velocity-type field.
///
/// Components `[xx, xy, yx, yy]` with `xy = yx` by construction; for the
/// velocity families the diagonal lands in cos*cos and the shear in sin*sin.
pub fn strain_rate(basis: &GalerkinBasis, v: &TensorField) -> Result<TensorField, BasisError> {
    if v.rank != Rank::Vector {
        return Err(BasisError::Rank {
            expected: 1,
            got: v.rank.order(),
        });
    }
    let grad = v.gradient(basis)?;
    // grad comps: [d_x v1, d_y v1, d_x v2, d_y v2]
    let gxx = &grad.comps[0];
    let gxy = &grad.comps[1];
    let gyx = &grad.comps[2];
    let gyy = &grad.comps[3];
    if gxy.family != gyx.family {
        return Err(BasisError::MissingRepresentation(
            "matching shear families (velocity layout)",
        ));
    }
    let cxy = gxy.coeff_view()?;
    let cyx = gyx.coeff_view()?;
    let shear = (&cxy + &cyx).mapv(|x| x / 2.0);
    Ok(TensorField {
        rank: Rank::Tensor2,
        comps: vec![
            gxx.clone(),
            Component::from_coeff(gxy.family, shear.clone()),
            Component::from_coeff(gyx.family, shear),
            gyy.clone(),
        ],
    })
}

/// Local viscous stress field `Dlambda (tr Ev) I + 2 Dmu Ev` (coefficients).
pub fn viscous_stress(
    params: &MaterialParams,
    ev: &TensorField,
) -> Result<TensorField, BasisError> {
    if ev.rank != Rank::Tensor2 {
        return Err(BasisError::Rank {
            expected: 2,
            got: ev.rank.order(),
        });
    }
    let exx = ev.comps[0].coeff_view()?;
    let exy = ev.comps[1].coeff_view()?;
    let eyx = ev.comps[2].coeff_view()?;
    let eyy = ev.comps[3].coeff_view()?;
    if ev.comps[0].family != ev.comps[3].family {
        return Err(BasisError::MissingRepresentation("uniform diagonal family"));
    }
    let (dl, dm) = (params.d_lambda, params.d_mu);
    let sxx = exx.mapv(|x| x * (dl + 2.0 * dm)) + &eyy.mapv(|x| x * dl);
    let syy = eyy.mapv(|x| x * (dl + 2.0 * dm)) + &exx.mapv(|x| x * dl);
    Ok(TensorField {
        rank: Rank::Tensor2,
        comps: vec![
            Component::from_coeff(ev.comps[0].family, sxx),
            Component::from_coeff(ev.comps[1].family, exy.mapv(|x| 2.0 * dm * x)),
            Component::from_coeff(ev.comps[2].family, eyx.mapv(|x| 2.0 * dm * x)),
            Component::from_coeff(ev.comps[3].family, syy),
        ],
    })
}

/// Hyperstress `nu |grad Ev|^(p-2) grad Ev` as a rank-3 field, evaluated
/// pointwise on the padded grid and analyzed back componentwise.
///
/// At `|grad Ev| = 0` the value is 0, the continuous extension for p > 2.
pub fn hyperstress(
    basis: &GalerkinBasis,
    params: &MaterialParams,
    ev: &TensorField,
) -> Result<TensorField, BasisError> {
    if ev.rank != Rank::Tensor2 {
        return Err(BasisError::Rank {
            expected: 2,
            got: ev.rank.order(),
        });
    }
    let grad = ev.gradient(basis)?;
    let mut grids = Vec::with_capacity(8);
    for c in &grad.comps {
        grids.push((c.family, basis.synthesize(c.coeff_view()?, c.family)));
    }
    let shape = basis.grid_shape();
    let mut s2 = Array2::zeros(shape);
    for (_, g) in &grids {
        s2 = s2 + &g.mapv(|x| x * x);
    }
    let expo = (params.p - 2.0) / 2.0;
    let weight = s2.mapv(|s: f64| params.nu * s.powf(expo));
    let mut comps = Vec::with_capacity(8);
    for (fam, g) in &grids {
        let scaled = g * &weight;
        comps.push(Component {
            family: *fam,
            coeff: Some(basis.analyze(scaled.view(), *fam)),
            grid: Some(scaled),
        });
    }
    Ok(TensorField {
        rank: Rank::Tensor3,
        comps,
    })
}
