//! Additive (IMEX) Runge-Kutta tableau.
//!
//! Four stages, third order in both parts. The implicit part is diagonally
//! implicit with constant diagonal `gamma` and an explicit first stage, so a
//! step costs three linear solves with the same shifted operator
//! `I - dt gamma L`; the explicit part is a classical third-order scheme with
//! matching abscissae. Both parts share the weights `b`, which keeps the
//! additive splitting consistent: the update sums `b_i (f_ex + f_im)(Y_i)`,
//! so terms can be moved between the two parts without changing the fixed
//! points of the method.

/// gamma = middle root of 6 x^3 - 18 x^2 + 9 x - 1, the standard choice that
/// makes the implicit part L-stable.
pub const GAMMA: f64 = 0.435_866_521_508_459;

/// Butcher data for the 4-stage additive scheme.
#[derive(Clone, Copy, Debug)]
pub struct ArkTableau {
    pub c: [f64; 4],
    /// Implicit coefficients, lower triangular; `a_im[i][i] = GAMMA` for i >= 1.
    pub a_im: [[f64; 4]; 4],
    /// Explicit coefficients, strictly lower triangular.
    pub a_ex: [[f64; 4]; 4],
    /// Shared quadrature weights.
    pub b: [f64; 4],
}

impl ArkTableau {
    pub fn ars343() -> Self {
        let g = GAMMA;
        let b1 = -1.5 * g * g + 4.0 * g - 0.25;
        let b2 = 1.5 * g * g - 5.0 * g + 1.25;
        Self {
            c: [0.0, g, (1.0 + g) / 2.0, 1.0],
            a_im: [
                [0.0, 0.0, 0.0, 0.0],
                [0.0, g, 0.0, 0.0],
                [0.0, (1.0 - g) / 2.0, g, 0.0],
                [0.0, b1, b2, g],
            ],
            a_ex: [
                [0.0, 0.0, 0.0, 0.0],
                [g, 0.0, 0.0, 0.0],
                [0.321_278_886_0, 0.396_654_374_7, 0.0, 0.0],
                [-0.105_858_296_0, 0.552_929_147_9, 0.552_929_147_9, 0.0],
            ],
            b: [0.0, b1, b2, g],
        }
    }
}
