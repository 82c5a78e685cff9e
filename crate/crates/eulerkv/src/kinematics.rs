//! Transport verification along characteristics, independent of the field
//! dynamics.
//!
//! Along a trajectory x'(t) = v(t, x) the deformation gradient obeys the
//! matrix ODE F' = (grad v) F, so an RK4 particle integrator driven by
//! spectral point evaluation is an independent oracle for the spectral
//! transport solve at eps = 0. Two further identities are measured rather
//! than assumed: the Jacobian transport D/Dt det F = (div v) det F, checked
//! from stored snapshots, and the return-map duality F (grad xi) = I for
//! xi = x + zeta, whose L2 defect couples the forward and inverse
//! discretizations.

use ndarray::Array2;
use thiserror::Error;

use crate::basis::{BasisError, Domain, Family, GalerkinBasis, PointEvaluator};
use crate::dynamics::{SimState, F_FAMILIES};

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("particle left the domain at t = {t}: ({x}, {y})")]
    LeftDomain { t: f64, x: f64, y: f64 },
    #[error("nonfinite particle state at t = {t}")]
    NonFinite { t: f64 },
    #[error("{0}")]
    Samples(&'static str),
    #[error("state carries no return-map field")]
    NoReturnMap,
}

/// Point source of velocity and velocity gradient for the particle ODE.
///
/// The gradient rows are `[[d v1/dx, d v1/dy], [d v2/dx, d v2/dy]]`.
pub trait VelocityProvider {
    fn eval(&self, t: f64, x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]);
}

/// Steady spectral velocity: one coefficient snapshot with precomputed
/// derivative coefficients, evaluated pointwise on demand.
pub struct SpectralVelocity<'a> {
    basis: &'a GalerkinBasis,
    a: Array2<f64>,
    b: Array2<f64>,
    dxa: Array2<f64>,
    dya: Array2<f64>,
    dxb: Array2<f64>,
    dyb: Array2<f64>,
}

impl<'a> SpectralVelocity<'a> {
    pub fn new(basis: &'a GalerkinBasis, v: &[Array2<f64>; 2]) -> Self {
        let (dxa, _) = basis.dx(v[0].view(), Family::SC);
        let (dya, _) = basis.dy(v[0].view(), Family::SC);
        let (dxb, _) = basis.dx(v[1].view(), Family::CS);
        let (dyb, _) = basis.dy(v[1].view(), Family::CS);
        Self {
            basis,
            a: v[0].clone(),
            b: v[1].clone(),
            dxa,
            dya,
            dxb,
            dyb,
        }
    }
}

impl VelocityProvider for SpectralVelocity<'_> {
    fn eval(&self, _t: f64, x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let ev = PointEvaluator::new(self.basis, x, y);
        let v = [
            ev.value(self.a.view(), Family::SC),
            ev.value(self.b.view(), Family::CS),
        ];
        let grad = [
            [
                ev.value(self.dxa.view(), Family::CC),
                ev.value(self.dya.view(), Family::SS),
            ],
            [
                ev.value(self.dxb.view(), Family::SS),
                ev.value(self.dyb.view(), Family::CC),
            ],
        ];
        (v, grad)
    }
}

/// One stored velocity snapshot with its coefficient time derivative.
pub struct VelocitySample {
    pub t: f64,
    pub v: [Array2<f64>; 2],
    pub rate: [Array2<f64>; 2],
}

/// Time-dependent spectral velocity interpolated by cubic Hermite blending
/// of stored coefficient snapshots and their rates, which preserves the
/// fourth-order accuracy of the particle integrator across the interface.
pub struct HermiteVelocity<'a> {
    basis: &'a GalerkinBasis,
    samples: Vec<VelocitySample>,
}

impl<'a> HermiteVelocity<'a> {
    pub fn new(
        basis: &'a GalerkinBasis,
        samples: Vec<VelocitySample>,
    ) -> Result<Self, KinematicsError> {
        if samples.len() < 2 {
            return Err(KinematicsError::Samples(
                "time interpolation needs at least two snapshots",
            ));
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(KinematicsError::Samples(
                "snapshot times must be strictly increasing",
            ));
        }
        Ok(Self { basis, samples })
    }

    /// Blended velocity coefficients at time `t` (clamped to the stored
    /// span, which callers should not rely on beyond round-off).
    fn blend(&self, t: f64) -> [Array2<f64>; 2] {
        let last = self.samples.len() - 1;
        let k = match self
            .samples
            .binary_search_by(|s| s.t.partial_cmp(&t).unwrap())
        {
            Ok(k) => k.min(last - 1),
            Err(k) => k.saturating_sub(1).min(last - 1),
        };
        let (s0, s1) = (&self.samples[k], &self.samples[k + 1]);
        let h = s1.t - s0.t;
        let s = ((t - s0.t) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        std::array::from_fn(|c| {
            let mut out = s0.v[c].mapv(|x| h00 * x);
            out.scaled_add(h10 * h, &s0.rate[c]);
            out.scaled_add(h01, &s1.v[c]);
            out.scaled_add(h11 * h, &s1.rate[c]);
            out
        })
    }
}

impl VelocityProvider for HermiteVelocity<'_> {
    fn eval(&self, t: f64, x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let [a, b] = self.blend(t);
        let basis = self.basis;
        let (dxa, _) = basis.dx(a.view(), Family::SC);
        let (dya, _) = basis.dy(a.view(), Family::SC);
        let (dxb, _) = basis.dx(b.view(), Family::CS);
        let (dyb, _) = basis.dy(b.view(), Family::CS);
        let ev = PointEvaluator::new(basis, x, y);
        let v = [ev.value(a.view(), Family::SC), ev.value(b.view(), Family::CS)];
        let grad = [
            [
                ev.value(dxa.view(), Family::CC),
                ev.value(dya.view(), Family::SS),
            ],
            [
                ev.value(dxb.view(), Family::SS),
                ev.value(dyb.view(), Family::CC),
            ],
        ];
        (v, grad)
    }
}

/// One point of a particle trajectory with its transported gradient.
#[derive(Clone, Debug)]
pub struct PathSample {
    pub t: f64,
    pub x: [f64; 2],
    pub f: [[f64; 2]; 2],
}

/// Trajectory of one seed point under the particle ODE.
///
/// Invariant: every sample lies in the closed domain; `v.n = 0` admits no
/// outflow, so an excursion beyond `1e-8 min(Lx, Ly)` is an integrator
/// error and aborts the path.
#[derive(Clone, Debug)]
pub struct ParticlePath {
    pub x0: [f64; 2],
    pub samples: Vec<PathSample>,
}

impl ParticlePath {
    pub fn final_x(&self) -> [f64; 2] {
        self.samples.last().expect("path has samples").x
    }

    pub fn final_f(&self) -> [[f64; 2]; 2] {
        self.samples.last().expect("path has samples").f
    }
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
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

/// Integrate x' = v(t, x), F' = (grad v)(t, x) F by classical RK4 from
/// `(x0, f0)` to `t_end` with uniform steps no larger than `dt_ode`.
///
/// When comparing against a PDE transport solve run at step `dt`, pass
/// `dt_ode <= dt / 4` so the oracle's O(dt_ode^4) error sits below the
/// solver's O(dt^3) one.
pub fn characteristics_oracle(
    domain: &Domain,
    v: &impl VelocityProvider,
    x0: [f64; 2],
    f0: [[f64; 2]; 2],
    t_end: f64,
    dt_ode: f64,
) -> Result<ParticlePath, KinematicsError> {
    assert!(dt_ode > 0.0 && dt_ode.is_finite() && t_end >= 0.0);
    let tol = 1e-8 * domain.lx.min(domain.ly);
    let in_domain = |t: f64, x: [f64; 2]| -> Result<(), KinematicsError> {
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(KinematicsError::NonFinite { t });
        }
        if x[0] < -tol || x[0] > domain.lx + tol || x[1] < -tol || x[1] > domain.ly + tol {
            return Err(KinematicsError::LeftDomain {
                t,
                x: x[0],
                y: x[1],
            });
        }
        Ok(())
    };
    in_domain(0.0, x0)?;
    let mut samples = vec![PathSample {
        t: 0.0,
        x: x0,
        f: f0,
    }];
    if t_end == 0.0 {
        return Ok(ParticlePath { x0, samples });
    }
    let n = (t_end / dt_ode).ceil().max(1.0) as usize;
    let h = t_end / n as f64;
    let rate = |t: f64, x: [f64; 2], f: [[f64; 2]; 2]| -> ([f64; 2], [[f64; 2]; 2]) {
        let (vv, grad) = v.eval(t, x[0], x[1]);
        (vv, mat_mul(grad, f))
    };
    let mut x = x0;
    let mut f = f0;
    let mut t = 0.0;
    for step in 1..=n {
        let (kx1, kf1) = rate(t, x, f);
        let half = |x: [f64; 2], k: [f64; 2]| [x[0] + 0.5 * h * k[0], x[1] + 0.5 * h * k[1]];
        let fhalf = |f: [[f64; 2]; 2], k: [[f64; 2]; 2]| {
            std::array::from_fn(|i| std::array::from_fn(|j| f[i][j] + 0.5 * h * k[i][j]))
        };
        let (kx2, kf2) = rate(t + 0.5 * h, half(x, kx1), fhalf(f, kf1));
        let (kx3, kf3) = rate(t + 0.5 * h, half(x, kx2), fhalf(f, kf2));
        let (kx4, kf4) = rate(
            t + h,
            [x[0] + h * kx3[0], x[1] + h * kx3[1]],
            std::array::from_fn(|i| std::array::from_fn(|j| f[i][j] + h * kf3[i][j])),
        );
        for c in 0..2 {
            x[c] += h / 6.0 * (kx1[c] + 2.0 * kx2[c] + 2.0 * kx3[c] + kx4[c]);
        }
        for i in 0..2 {
            for j in 0..2 {
                f[i][j] +=
                    h / 6.0 * (kf1[i][j] + 2.0 * kf2[i][j] + 2.0 * kf3[i][j] + kf4[i][j]);
            }
        }
        t = step as f64 * h;
        in_domain(t, x)?;
        if f.iter().flatten().any(|z| !z.is_finite()) {
            return Err(KinematicsError::NonFinite { t });
        }
        samples.push(PathSample { t, x, f });
    }
    Ok(ParticlePath { x0, samples })
}

fn f_grids(basis: &GalerkinBasis, s: &SimState) -> [Array2<f64>; 4] {
    std::array::from_fn(|k| basis.synthesize(s.f[k].view(), F_FAMILIES[k]))
}

fn det_grid(f: &[Array2<f64>; 4]) -> Array2<f64> {
    let mut d = &f[0] * &f[3];
    d.zip_mut_with(&(&f[1] * &f[2]), |a, b| *a -= b);
    d
}

/// Point value of the deformation gradient field of a state.
pub fn deformation_at(basis: &GalerkinBasis, s: &SimState, x: f64, y: f64) -> [[f64; 2]; 2] {
    let ev = PointEvaluator::new(basis, x, y);
    [
        [
            ev.value(s.f[0].view(), F_FAMILIES[0]),
            ev.value(s.f[1].view(), F_FAMILIES[1]),
        ],
        [
            ev.value(s.f[2].view(), F_FAMILIES[2]),
            ev.value(s.f[3].view(), F_FAMILIES[3]),
        ],
    ]
}

/// L2 defect of the Jacobian transport identity
/// `d/dt det F + v . grad det F = (div v) det F` per interior snapshot.
///
/// The time derivative is a centered difference of the stored snapshots
/// ( second order in their spacing), the spatial terms are spectral, and
/// the result pairs each interior snapshot time with its defect norm.
pub fn det_transport_check(
    basis: &GalerkinBasis,
    states: &[SimState],
) -> Result<Vec<(f64, f64)>, KinematicsError> {
    if states.len() < 3 {
        return Err(KinematicsError::Samples(
            "the centered difference needs at least three snapshots",
        ));
    }
    let h = states[1].t - states[0].t;
    if !(h > 0.0) {
        return Err(KinematicsError::Samples(
            "snapshot times must be strictly increasing",
        ));
    }
    for w in states.windows(2) {
        if ((w[1].t - w[0].t) - h).abs() > 1e-9 * h {
            return Err(KinematicsError::Samples(
                "snapshots must be uniformly spaced",
            ));
        }
    }
    let dets: Vec<Array2<f64>> = states.iter().map(|s| det_grid(&f_grids(basis, s))).collect();
    let mut out = Vec::with_capacity(states.len() - 2);
    for k in 1..states.len() - 1 {
        let s = &states[k];
        let v1 = basis.synthesize(s.v[0].view(), Family::SC);
        let v2 = basis.synthesize(s.v[1].view(), Family::CS);
        let (dxa, _) = basis.dx(s.v[0].view(), Family::SC);
        let (dyb, _) = basis.dy(s.v[1].view(), Family::CS);
        let divv = basis.synthesize((&dxa + &dyb).view(), Family::CC);
        let detc = basis.analyze(dets[k].view(), Family::CC);
        let (ddx, fx) = basis.dx(detc.view(), Family::CC);
        let (ddy, fy) = basis.dy(detc.view(), Family::CC);
        let gdx = basis.synthesize(ddx.view(), fx);
        let gdy = basis.synthesize(ddy.view(), fy);
        let mut defect = (&dets[k + 1] - &dets[k - 1]).mapv(|z| z / (2.0 * h));
        defect += &(&v1 * &gdx);
        defect += &(&v2 * &gdy);
        defect -= &(&divv * &dets[k]);
        let norm = basis.integrate_grid(defect.mapv(|z| z * z).view()).sqrt();
        out.push((s.t, norm));
    }
    Ok(out)
}

/// L2 defect of the return-map duality `F (grad xi) - I` for one state,
/// with `xi = x + zeta`. A non-positive Jacobian of xi at any quadrature
/// point means the reconstructed map has folded; the defect is then
/// reported as infinity.
pub fn return_map_defect(basis: &GalerkinBasis, s: &SimState) -> Result<f64, KinematicsError> {
    let zeta = s.zeta.as_ref().ok_or(KinematicsError::NoReturnMap)?;
    let (z1x, f1x) = basis.dx(zeta[0].view(), Family::SC);
    let (z1y, f1y) = basis.dy(zeta[0].view(), Family::SC);
    let (z2x, f2x) = basis.dx(zeta[1].view(), Family::CS);
    let (z2y, f2y) = basis.dy(zeta[1].view(), Family::CS);
    let g11 = basis.synthesize(z1x.view(), f1x).mapv(|z| z + 1.0);
    let g12 = basis.synthesize(z1y.view(), f1y);
    let g21 = basis.synthesize(z2x.view(), f2x);
    let g22 = basis.synthesize(z2y.view(), f2y).mapv(|z| z + 1.0);
    let mut min_det = f64::INFINITY;
    ndarray::Zip::from(&g11)
        .and(&g12)
        .and(&g21)
        .and(&g22)
        .for_each(|&a, &b, &c, &d| {
            let det = a * d - b * c;
            if det < min_det {
                min_det = det;
            }
        });
    if !(min_det > 0.0) {
        return Ok(f64::INFINITY);
    }
    let f = f_grids(basis, s);
    let mut sq = Array2::zeros(basis.grid_shape());
    ndarray::Zip::indexed(&mut sq).for_each(|(i, j), out| {
        let (f11, f12, f21, f22) = (f[0][[i, j]], f[1][[i, j]], f[2][[i, j]], f[3][[i, j]]);
        let d11 = f11 * g11[[i, j]] + f12 * g21[[i, j]] - 1.0;
        let d12 = f11 * g12[[i, j]] + f12 * g22[[i, j]];
        let d21 = f21 * g11[[i, j]] + f22 * g21[[i, j]];
        let d22 = f21 * g12[[i, j]] + f22 * g22[[i, j]] - 1.0;
        *out = d11 * d11 + d12 * d12 + d21 * d21 + d22 * d22;
    });
    Ok(basis.integrate_grid(sq.view()).sqrt())
}

/// Return-map defect per state; once a state reports a folded map, every
/// later entry is infinity.
pub fn return_map_defects(
    basis: &GalerkinBasis,
    states: &[SimState],
) -> Result<Vec<(f64, f64)>, KinematicsError> {
    let mut folded = false;
    states
        .iter()
        .map(|s| {
            let d = if folded {
                f64::INFINITY
            } else {
                let d = return_map_defect(basis, s)?;
                folded = d.is_infinite();
                d
            };
            Ok((s.t, d))
        })
        .collect()
}
