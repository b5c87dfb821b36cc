//! Polarization optics on the (H, V) modes: the two-angle SU(2) gadget,
//! Jones matrices of physical wave plates, and a QWP-HWP-QWP solver that
//! realizes an arbitrary gadget setting with plate angles.
//!
//! Conventions: `H = (1, 0)`, `V = (0, 1)`, fields evolve as `e^{-iωt}`.
//! Equality of transforms is always tested up to a global phase.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::ONE;

const UNITARY_TOL: f64 = 1e-12;

/// A 2x2 unitary acting on the polarization creation operators.
///
/// Column `j` is the image of the `j`-th creation operator:
/// `a†_j -> sum_i m[(i, j)] a†_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeTransform(Matrix2<Complex64>);

impl ModeTransform {
    pub fn identity() -> Self {
        Self(Matrix2::identity())
    }

    pub fn from_matrix(m: Matrix2<Complex64>) -> Result<Self> {
        let t = Self(m);
        t.checked()?;
        Ok(t)
    }

    pub fn from_matrix_unchecked(m: Matrix2<Complex64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix2<Complex64> {
        &self.0
    }

    /// Largest entry of `M M† - I`.
    pub fn unitarity_error(&self) -> f64 {
        (self.0 * self.0.adjoint() - Matrix2::identity())
            .iter()
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    /// The matrix, if it is unitary to within 1e-12.
    pub fn checked(&self) -> Result<&Matrix2<Complex64>> {
        let err = self.unitarity_error();
        if err > UNITARY_TOL {
            return Err(Error::NotUnitary(err));
        }
        Ok(&self.0)
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn determinant(&self) -> Complex64 {
        self.0.determinant()
    }

    /// Distance to `other` after removing the best global phase (max-entry
    /// norm).
    pub fn distance_up_to_phase(&self, other: &ModeTransform) -> f64 {
        let overlap = (other.0.adjoint() * self.0).trace();
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { ONE };
        (self.0 - other.0 * phase).iter().fold(0.0, |m, z| m.max(z.norm()))
    }
}

/// `b · a`: `a` acts first.
pub fn compose(a: &ModeTransform, b: &ModeTransform) -> ModeTransform {
    ModeTransform(b.0 * a.0)
}

/// Gadget setting `(φ, θ)` in radians, stored with `φ ∈ [0, 2π)` and
/// `θ ∈ [0, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawSetting")]
pub struct WavePlateSetting {
    phi: f64,
    theta: f64,
}

#[derive(Deserialize)]
struct RawSetting {
    phi: f64,
    theta: f64,
}

impl From<RawSetting> for WavePlateSetting {
    fn from(r: RawSetting) -> Self {
        Self::new(r.phi, r.theta)
    }
}

impl WavePlateSetting {
    pub fn new(phi: f64, theta: f64) -> Self {
        // rem_euclid can round up to the modulus itself for tiny negatives
        let wrap = |x: f64, m: f64| {
            let r = x.rem_euclid(m);
            if r >= m { 0.0 } else { r }
        };
        Self { phi: wrap(phi, TAU), theta: wrap(theta, PI) }
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// `U(φ, θ) = [[cos θ, e^{iφ} sin θ], [-e^{-iφ} sin θ, cos θ]]`.
pub fn su2_from_angles(setting: WavePlateSetting) -> ModeTransform {
    let (s, c) = setting.theta.sin_cos();
    let e = Complex64::from_polar(1.0, setting.phi);
    ModeTransform(Matrix2::new(
        Complex64::new(c, 0.0),
        e * s,
        -e.conj() * s,
        Complex64::new(c, 0.0),
    ))
}

/// Half-wave plate with its fast axis at `angle` from H.
pub fn jones_hwp(angle: f64) -> ModeTransform {
    let (s, c) = (2.0 * angle).sin_cos();
    ModeTransform(Matrix2::new(
        Complex64::new(c, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(-c, 0.0),
    ))
}

/// Quarter-wave plate with its fast axis at `angle` from H.
pub fn jones_qwp(angle: f64) -> ModeTransform {
    let (s, c) = angle.sin_cos();
    let i = Complex64::i();
    let off = (ONE - i) * (s * c);
    ModeTransform(Matrix2::new(
        Complex64::new(c * c, s * s),
        off,
        off,
        Complex64::new(s * s, c * c),
    ))
}

fn d_hwp(angle: f64) -> Matrix2<Complex64> {
    let (s, c) = (2.0 * angle).sin_cos();
    Matrix2::new(
        Complex64::new(-2.0 * s, 0.0),
        Complex64::new(2.0 * c, 0.0),
        Complex64::new(2.0 * c, 0.0),
        Complex64::new(2.0 * s, 0.0),
    )
}

fn d_qwp(angle: f64) -> Matrix2<Complex64> {
    let (s2, c2) = (2.0 * angle).sin_cos();
    let off = Complex64::new(c2, -c2);
    Matrix2::new(Complex64::new(-s2, s2), off, off, Complex64::new(s2, -s2))
}

/// Plate orientations of a QWP-HWP-QWP gadget, listed in the order light
/// traverses them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GadgetAngles {
    pub first_qwp: f64,
    pub hwp: f64,
    pub second_qwp: f64,
}

impl GadgetAngles {
    pub fn jones(&self) -> ModeTransform {
        let q1 = jones_qwp(self.first_qwp);
        let h = jones_hwp(self.hwp);
        let q2 = jones_qwp(self.second_qwp);
        compose(&compose(&q1, &h), &q2)
    }

    fn from_array(x: [f64; 3]) -> Self {
        // plate matrices are π-periodic in the orientation
        let w = |a: f64| a.rem_euclid(PI);
        Self { first_qwp: w(x[0]), hwp: w(x[1]), second_qwp: w(x[2]) }
    }
}

/// Residual vector (real and imaginary parts of `J(x) - sign * T`) and its
/// Jacobian with respect to the three plate angles.
fn residual(x: &[f64; 3], target: &Matrix2<Complex64>, sign: f64) -> ([f64; 8], [[f64; 3]; 8]) {
    let q1 = *jones_qwp(x[0]).matrix();
    let h = *jones_hwp(x[1]).matrix();
    let q2 = *jones_qwp(x[2]).matrix();
    let j = q2 * h * q1;
    let partials = [q2 * h * d_qwp(x[0]), q2 * d_hwp(x[1]) * q1, d_qwp(x[2]) * h * q1];
    let mut r = [0.0; 8];
    let mut jac = [[0.0; 3]; 8];
    for e in 0..4 {
        let d = j[e] - target[e] * sign;
        r[2 * e] = d.re;
        r[2 * e + 1] = d.im;
        for (p, dj) in partials.iter().enumerate() {
            jac[2 * e][p] = dj[e].re;
            jac[2 * e + 1][p] = dj[e].im;
        }
    }
    (r, jac)
}

fn norm_sqr8(r: &[f64; 8]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg-Marquardt on the 3 plate angles from one starting point.
fn refine(start: [f64; 3], target: &Matrix2<Complex64>, sign: f64) -> ([f64; 3], f64) {
    let mut x = start;
    let (mut r, mut jac) = residual(&x, target, sign);
    let mut cost = norm_sqr8(&r);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        if cost < 1e-30 {
            break;
        }
        // normal equations (J^T J + λ diag) dx = -J^T r
        let mut a = nalgebra::Matrix3::<f64>::zeros();
        let mut g = nalgebra::Vector3::<f64>::zeros();
        for k in 0..8 {
            for p in 0..3 {
                g[p] += jac[k][p] * r[k];
                for q in 0..3 {
                    a[(p, q)] += jac[k][p] * jac[k][q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = a;
            for p in 0..3 {
                damped[(p, p)] += lambda * (1.0 + a[(p, p)]);
            }
            let Some(step) = damped.lu().solve(&(-g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [x[0] + step[0], x[1] + step[1], x[2] + step[2]];
            let (tr, tj) = residual(&trial, target, sign);
            let tc = norm_sqr8(&tr);
            if tc < cost {
                x = trial;
                r = tr;
                jac = tj;
                let rel = (cost - tc) / cost;
                cost = tc;
                lambda = (lambda * 0.3).max(1e-15);
                improved = rel > 1e-14 || cost < 1e-30;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x, cost)
}

/// Finds QWP-HWP-QWP orientations whose composed Jones matrix equals
/// `target` up to a global phase.
pub fn solve_angles_for_target(target: &ModeTransform) -> Result<GadgetAngles> {
    let m = target.checked()?;
    // move to SU(2); the plate product has determinant exactly 1
    let root = m.determinant().sqrt();
    let t = m / root;

    const GRID: usize = 6;
    let mut starts = Vec::with_capacity(GRID * GRID * GRID);
    for a in 0..GRID {
        for b in 0..GRID {
            for c in 0..GRID {
                let x = [a, b, c].map(|i| (i as f64 + 0.5) * PI / GRID as f64);
                let j = *GadgetAngles::from_array(x).jones().matrix();
                let overlap = (t.adjoint() * j).trace().re;
                let sign = if overlap >= 0.0 { 1.0 } else { -1.0 };
                starts.push((2.0 - overlap.abs(), x, sign));
            }
        }
    }
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best = (f64::INFINITY, GadgetAngles::from_array(starts[0].1));
    for &(_, x0, sign) in starts.iter().take(24) {
        let (x, cost) = refine(x0, &t, sign);
        if cost < best.0 {
            best = (cost, GadgetAngles::from_array(x));
        }
        if cost < 1e-26 {
            break;
        }
    }
    Ok(best.1)
}

/// Angles of the canonical "time-reversed HOM" setting.
pub const HOM_SETTING: (f64, f64) = (FRAC_PI_2, std::f64::consts::FRAC_PI_4);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::ZERO;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, FRAC_PI_8};

    fn unit(seed: u64) -> WavePlateSetting {
        // small LCG is enough for a deterministic spread of angles
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        WavePlateSetting::new(next() * TAU, next() * PI)
    }

    #[test]
    fn identity_at_zero_theta() {
        for phi in [0.0, 0.3, 2.0, 5.9] {
            let u = su2_from_angles(WavePlateSetting::new(phi, 0.0));
            assert!(u.distance_up_to_phase(&ModeTransform::identity()) < 1e-15);
        }
    }

    #[test]
    fn gadget_is_unitary_with_real_diagonal() {
        for seed in 0..100 {
            let st = unit(seed);
            let u = su2_from_angles(st);
            assert!(u.unitarity_error() < 1e-12);
            assert!((u.determinant().norm() - 1.0).abs() < 1e-12);
            assert_eq!(u.matrix()[(0, 0)].im, 0.0);
            assert!((u.matrix()[(0, 0)].re - st.theta().cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn canonical_range() {
        let s = WavePlateSetting::new(-0.5, 4.0);
        assert!((s.phi() - (TAU - 0.5)).abs() < 1e-15);
        assert!((s.theta() - (4.0 - PI)).abs() < 1e-15);
        let json = serde_json::to_string(&s).unwrap();
        let back: WavePlateSetting = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let wrapped: WavePlateSetting = serde_json::from_str(r#"{"phi": 7.0, "theta": -1.0}"#).unwrap();
        assert!(wrapped.phi() < TAU && wrapped.theta() < PI && wrapped.theta() >= 0.0);
    }

    #[test]
    fn jones_examples() {
        let diag = ModeTransform(Matrix2::new(ONE, ZERO, ZERO, -ONE));
        assert!(jones_hwp(0.0).distance_up_to_phase(&diag) < 1e-15);

        let out = jones_hwp(FRAC_PI_8).matrix() * nalgebra::Vector2::new(ONE, ZERO);
        let diag_pol = nalgebra::Vector2::new(Complex64::new(FRAC_1_SQRT_2, 0.0), Complex64::new(FRAC_1_SQRT_2, 0.0));
        assert!((out.dotc(&diag_pol).norm() - 1.0).abs() < 1e-15);

        for a in [0.0, 0.2, FRAC_PI_4, 1.3, 2.9] {
            let q = jones_qwp(a);
            assert!(compose(&q, &q).distance_up_to_phase(&jones_hwp(a)) < 1e-14);
            assert!(q.unitarity_error() < 1e-15);
            assert!(jones_hwp(a).unitarity_error() < 1e-15);
        }
    }

    #[test]
    fn composition_laws() {
        let u = su2_from_angles(unit(3));
        let v = su2_from_angles(unit(4));
        let w = jones_qwp(0.7);
        assert_eq!(compose(&ModeTransform::identity(), &u), u);
        assert!(compose(&u, &u.inverse()).distance_up_to_phase(&ModeTransform::identity()) < 1e-15);
        let left = compose(&compose(&u, &v), &w);
        let right = compose(&u, &compose(&v, &w));
        assert!(left.distance_up_to_phase(&right) < 1e-12);
        // a acts first
        assert_eq!(*compose(&u, &v).matrix(), v.matrix() * u.matrix());
    }

    #[test]
    fn derivative_matrices_match_finite_differences() {
        let h = 1e-6;
        for a in [0.1, 0.9, 2.2] {
            let fd_h = (jones_hwp(a + h).matrix() - jones_hwp(a - h).matrix()) / Complex64::new(2.0 * h, 0.0);
            let fd_q = (jones_qwp(a + h).matrix() - jones_qwp(a - h).matrix()) / Complex64::new(2.0 * h, 0.0);
            assert!((fd_h - d_hwp(a)).norm() < 1e-8);
            assert!((fd_q - d_qwp(a)).norm() < 1e-8);
        }
    }

    #[test]
    fn solver_identity_and_hom_setting() {
        let id = solve_angles_for_target(&ModeTransform::identity()).unwrap();
        assert!(id.jones().distance_up_to_phase(&ModeTransform::identity()) < 1e-9);

        let target = su2_from_angles(WavePlateSetting::new(HOM_SETTING.0, HOM_SETTING.1));
        let ang = solve_angles_for_target(&target).unwrap();
        assert!(ang.jones().distance_up_to_phase(&target) < 1e-9);
    }

    #[test]
    fn solver_round_trips_random_targets() {
        for seed in 0..100 {
            let target = su2_from_angles(unit(1000 + seed));
            let ang = solve_angles_for_target(&target).unwrap();
            let err = ang.jones().distance_up_to_phase(&target);
            assert!(err < 1e-9, "seed {seed}: {err:e}");
        }
    }

    #[test]
    fn solver_accepts_unitary_with_phase() {
        let u = su2_from_angles(unit(77));
        let phased = ModeTransform(u.matrix() * Complex64::from_polar(1.0, 0.4));
        let ang = solve_angles_for_target(&phased).unwrap();
        assert!(ang.jones().distance_up_to_phase(&phased) < 1e-9);
    }
}
