//! Jones-calculus polarization states and the optical elements of the
//! ground-station/retroreflector round trip.
//!
//! States live in the `{|H⟩, |V⟩}` basis. Circular states follow the
//! convention `|L⟩ = (|H⟩ + i|V⟩)/√2` and `|R⟩ = (|H⟩ − i|V⟩)/√2`.
//! State comparisons are up to global phase.
//!
//! The Coudé path is modelled as a chain of ideal mirrors, each a `σ_z`
//! (π phase shift between s and p), interleaved with frame rotations
//! `R(θ) = exp(−iθσ_y)`. A metallic corner cube acts as `σ_z`; with a
//! Faraday rotator of angle `φ` on its entrance face it becomes
//! `R(−φ) σ_z R(φ)`. Because `σ_z R(θ) = R(−θ) σ_z`, the downlink path undoes
//! the uplink path and the received state is `R(2φ) σ_z |ψ⟩` regardless of
//! the telescope pose.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance used when validating normalization of user-supplied states.
pub const NORM_TOLERANCE: f64 = 1e-9;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A pure polarization state (normalized Jones vector).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationState {
    amplitude_h: Complex64,
    amplitude_v: Complex64,
}

impl PolarizationState {
    pub const H: Self = Self::raw(ONE, ZERO);
    pub const V: Self = Self::raw(ZERO, ONE);
    pub const L: Self = Self::raw(
        Complex64::new(FRAC_1_SQRT_2, 0.0),
        Complex64::new(0.0, FRAC_1_SQRT_2),
    );
    pub const R: Self = Self::raw(
        Complex64::new(FRAC_1_SQRT_2, 0.0),
        Complex64::new(0.0, -FRAC_1_SQRT_2),
    );
    /// Diagonal, `(|H⟩ + |V⟩)/√2`.
    pub const D: Self = Self::raw(
        Complex64::new(FRAC_1_SQRT_2, 0.0),
        Complex64::new(FRAC_1_SQRT_2, 0.0),
    );
    /// Anti-diagonal, `(|H⟩ − |V⟩)/√2`.
    pub const A: Self = Self::raw(
        Complex64::new(FRAC_1_SQRT_2, 0.0),
        Complex64::new(-FRAC_1_SQRT_2, 0.0),
    );

    const fn raw(amplitude_h: Complex64, amplitude_v: Complex64) -> Self {
        Self {
            amplitude_h,
            amplitude_v,
        }
    }

    /// Builds a state from amplitudes that must already be normalized.
    pub fn new(amplitude_h: Complex64, amplitude_v: Complex64) -> Result<Self> {
        let s = Self::raw(amplitude_h, amplitude_v);
        s.check_normalized()?;
        Ok(s)
    }

    /// Builds a state from arbitrary non-zero amplitudes, rescaling them.
    pub fn normalized(amplitude_h: Complex64, amplitude_v: Complex64) -> Result<Self> {
        let n = (amplitude_h.norm_sqr() + amplitude_v.norm_sqr()).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::invalid("polarization amplitudes must be finite and non-zero"));
        }
        Ok(Self::raw(amplitude_h / n, amplitude_v / n))
    }

    /// Builds a state without any normalization check.
    pub fn new_unchecked(amplitude_h: Complex64, amplitude_v: Complex64) -> Self {
        Self::raw(amplitude_h, amplitude_v)
    }

    /// `cos α |H⟩ + e^{iφ} sin α |V⟩`.
    pub fn from_angles(alpha: f64, phase: f64) -> Self {
        Self::raw(
            Complex64::new(alpha.cos(), 0.0),
            Complex64::from_polar(alpha.sin(), phase),
        )
    }

    pub fn amplitude_h(&self) -> Complex64 {
        self.amplitude_h
    }

    pub fn amplitude_v(&self) -> Complex64 {
        self.amplitude_v
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitude_h.norm_sqr() + self.amplitude_v.norm_sqr()
    }

    fn check_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::invalid(format!(
                "polarization state is not normalized (|h|²+|v|² = {n})"
            )));
        }
        Ok(())
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amplitude_h.conj() * other.amplitude_h + self.amplitude_v.conj() * other.amplitude_v
    }

    /// `|⟨self|other⟩|`, equal to 1 for states identical up to global phase.
    pub fn fidelity(&self, other: &Self) -> f64 {
        self.inner(other).norm()
    }

    pub fn same_up_to_phase(&self, other: &Self, tol: f64) -> bool {
        (1.0 - self.fidelity(other)).abs() <= tol
    }

    /// The orthogonal state `(−v*, h*)`.
    pub fn orthogonal(&self) -> Self {
        Self::raw(-self.amplitude_v.conj(), self.amplitude_h.conj())
    }
}

impl fmt::Display for PolarizationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn c(z: Complex64) -> String {
            format!("{:+.6}{:+.6}i", z.re, z.im)
        }
        write!(f, "({}, {})", c(self.amplitude_h), c(self.amplitude_v))
    }
}

/// A 2×2 complex Jones matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationOperator {
    pub entries: [[Complex64; 2]; 2],
}

impl PolarizationOperator {
    pub const IDENTITY: Self = Self {
        entries: [[ONE, ZERO], [ZERO, ONE]],
    };

    pub fn from_real(m: [[f64; 2]; 2]) -> Self {
        Self {
            entries: [
                [Complex64::new(m[0][0], 0.0), Complex64::new(m[0][1], 0.0)],
                [Complex64::new(m[1][0], 0.0), Complex64::new(m[1][1], 0.0)],
            ],
        }
    }

    pub fn adjoint(&self) -> Self {
        let e = &self.entries;
        Self {
            entries: [[e[0][0].conj(), e[1][0].conj()], [e[0][1].conj(), e[1][1].conj()]],
        }
    }

    pub fn determinant(&self) -> Complex64 {
        let e = &self.entries;
        e[0][0] * e[1][1] - e[0][1] * e[1][0]
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.entries[i][j] - other.entries[i][j]).norm());
            }
        }
        worst
    }

    /// `M†M = I` entrywise within `tol`.
    pub fn is_unitary(&self, tol: f64) -> bool {
        (self.adjoint() * *self).max_abs_diff(&Self::IDENTITY) <= tol
    }

    pub fn apply(&self, psi: &PolarizationState) -> PolarizationState {
        let e = &self.entries;
        PolarizationState::raw(
            e[0][0] * psi.amplitude_h + e[0][1] * psi.amplitude_v,
            e[1][0] * psi.amplitude_h + e[1][1] * psi.amplitude_v,
        )
    }
}

impl Mul for PolarizationOperator {
    type Output = PolarizationOperator;

    fn mul(self, rhs: Self) -> Self {
        let a = &self.entries;
        let b = &rhs.entries;
        let mut out = [[ZERO; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Self { entries: out }
    }
}

impl Mul<PolarizationState> for PolarizationOperator {
    type Output = PolarizationState;

    fn mul(self, rhs: PolarizationState) -> PolarizationState {
        self.apply(&rhs)
    }
}

/// Telescope pointing used by the Coudé-path model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelescopePose {
    azimuth: f64,
    elevation: f64,
}

impl TelescopePose {
    /// `azimuth ∈ [0, 2π)`, `elevation ∈ [0, π/2]`, radians.
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !(azimuth.is_finite() && (0.0..2.0 * PI).contains(&azimuth)) {
            return Err(Error::invalid(format!("azimuth {azimuth} rad outside [0, 2π)")));
        }
        if !(elevation.is_finite() && (0.0..=FRAC_PI_2).contains(&elevation)) {
            return Err(Error::invalid(format!("elevation {elevation} rad outside [0, π/2]")));
        }
        Ok(Self { azimuth, elevation })
    }

    /// Like [`TelescopePose::new`] but wraps the azimuth into `[0, 2π)`.
    pub fn wrapped(azimuth: f64, elevation: f64) -> Result<Self> {
        if !azimuth.is_finite() {
            return Err(Error::invalid("azimuth must be finite"));
        }
        let mut az = azimuth.rem_euclid(2.0 * PI);
        if az >= 2.0 * PI {
            az = 0.0;
        }
        Self::new(az, elevation)
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }
}

/// Frame rotation `R(θ) = exp(−iθσ_y) = [[cos θ, sin θ], [−sin θ, cos θ]]`.
pub fn rotation(theta: f64) -> Result<PolarizationOperator> {
    if !theta.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    Ok(rotation_unchecked(theta))
}

fn rotation_unchecked(theta: f64) -> PolarizationOperator {
    let (s, c) = theta.sin_cos();
    PolarizationOperator::from_real([[c, s], [-s, c]])
}

/// Ideal mirror / metallic corner cube: `σ_z = diag(1, −1)`.
pub fn mirror_flip() -> PolarizationOperator {
    PolarizationOperator::from_real([[1.0, 0.0], [0.0, -1.0]])
}

/// `U_up = σ_z R(π/2 − θ_el) σ_z R(θ_az) σ_z R(π/2)`.
pub fn coude_uplink(pose: &TelescopePose) -> PolarizationOperator {
    let z = mirror_flip();
    z * rotation_unchecked(FRAC_PI_2 - pose.elevation)
        * z
        * rotation_unchecked(pose.azimuth)
        * z
        * rotation_unchecked(FRAC_PI_2)
}

/// `U_down = R(π/2) σ_z R(θ_az) σ_z R(π/2 − θ_el) σ_z`.
pub fn coude_downlink(pose: &TelescopePose) -> PolarizationOperator {
    let z = mirror_flip();
    rotation_unchecked(FRAC_PI_2)
        * z
        * rotation_unchecked(pose.azimuth)
        * z
        * rotation_unchecked(FRAC_PI_2 - pose.elevation)
        * z
}

/// Corner cube with a Faraday rotator of angle `φ`: `R(−φ) σ_z R(φ)`.
pub fn ccr_transform(fr_angle: f64) -> Result<PolarizationOperator> {
    if !fr_angle.is_finite() {
        return Err(Error::invalid("Faraday rotator angle must be finite"));
    }
    Ok(rotation_unchecked(-fr_angle) * mirror_flip() * rotation_unchecked(fr_angle))
}

/// Full ground → satellite → ground chain `U_down U_CCR(φ) U_up |ψ⟩`.
pub fn round_trip(
    pose: &TelescopePose,
    fr_angle: f64,
    psi: &PolarizationState,
) -> Result<PolarizationState> {
    psi.check_normalized()?;
    let chain = coude_downlink(pose) * ccr_transform(fr_angle)? * coude_uplink(pose);
    Ok(chain.apply(psi))
}

/// The closed-form prediction `R(2φ) σ_z |ψ⟩` for the received state.
pub fn predicted_round_trip(fr_angle: f64, psi: &PolarizationState) -> Result<PolarizationState> {
    Ok((rotation(2.0 * fr_angle)? * mirror_flip()).apply(psi))
}

/// Born-rule click probability `|⟨analyzer|ψ⟩|²` of an ideal analyzer port.
pub fn detection_probability(
    psi: &PolarizationState,
    analyzer_state: &PolarizationState,
) -> Result<f64> {
    psi.check_normalized()?;
    analyzer_state.check_normalized()?;
    Ok(analyzer_state.inner(psi).norm_sqr().clamp(0.0, 1.0))
}

/// A two-port analyzer (polarizing beam splitter with one detector per port).
/// Port `c` is detector channel `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzerBasis {
    ports: [PolarizationState; 2],
}

impl AnalyzerBasis {
    pub const HV: Self = Self {
        ports: [PolarizationState::H, PolarizationState::V],
    };
    pub const LR: Self = Self {
        ports: [PolarizationState::L, PolarizationState::R],
    };
    pub const DA: Self = Self {
        ports: [PolarizationState::D, PolarizationState::A],
    };

    pub fn new(port0: PolarizationState, port1: PolarizationState) -> Result<Self> {
        port0.check_normalized()?;
        port1.check_normalized()?;
        if port0.fidelity(&port1) > 1e-9 {
            return Err(Error::invalid("analyzer ports must be orthogonal"));
        }
        Ok(Self {
            ports: [port0, port1],
        })
    }

    pub fn port(&self, channel: usize) -> &PolarizationState {
        &self.ports[channel]
    }

    /// Click probabilities on both ports for a normalized input.
    pub fn probabilities(&self, psi: &PolarizationState) -> Result<[f64; 2]> {
        Ok([
            detection_probability(psi, &self.ports[0])?,
            detection_probability(psi, &self.ports[1])?,
        ])
    }

    /// The port that an ideal input `psi` lands on with the larger probability.
    pub fn expected_port(&self, psi: &PolarizationState) -> Result<usize> {
        let p = self.probabilities(psi)?;
        Ok(if p[1] > p[0] { 1 } else { 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const TIGHT: f64 = 1e-12;

    // Independent reference: plain real-matrix product, no operator types.
    fn mat2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        out
    }

    fn rot_ref(t: f64) -> [[f64; 2]; 2] {
        [[t.cos(), t.sin()], [-t.sin(), t.cos()]]
    }

    const SZ: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, -1.0]];

    #[test]
    fn rotation_cases() {
        assert!(rotation(0.0).unwrap().max_abs_diff(&PolarizationOperator::IDENTITY) < TIGHT);
        let quarter = PolarizationOperator::from_real([[0.0, 1.0], [-1.0, 0.0]]);
        assert!(rotation(FRAC_PI_2).unwrap().max_abs_diff(&quarter) < TIGHT);
        let prod = rotation(0.37).unwrap() * rotation(-0.37).unwrap();
        assert!(prod.max_abs_diff(&PolarizationOperator::IDENTITY) < TIGHT);
        assert!(matches!(rotation(f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(rotation(f64::INFINITY).is_err());
    }

    #[test]
    fn mirror_flip_on_basis_states() {
        let z = mirror_flip();
        assert!(z.apply(&PolarizationState::H).same_up_to_phase(&PolarizationState::H, TIGHT));
        let v = z.apply(&PolarizationState::V);
        assert_abs_diff_eq!(v.amplitude_v().re, -1.0);
        assert!(v.same_up_to_phase(&PolarizationState::V, TIGHT));
        // diag(1,−1)·(1,i)/√2 = (1,−i)/√2
        let l = z.apply(&PolarizationState::L);
        assert_abs_diff_eq!(l.amplitude_v().im, -FRAC_1_SQRT_2, epsilon = TIGHT);
        assert!(l.same_up_to_phase(&PolarizationState::R, TIGHT));
    }

    #[test]
    fn coude_collapses_at_zenith_zero_azimuth() {
        let pose = TelescopePose::new(0.0, FRAC_PI_2).unwrap();
        let up = coude_uplink(&pose);
        assert!(up.max_abs_diff(&(mirror_flip() * rotation(FRAC_PI_2).unwrap())) < TIGHT);
        let down = coude_downlink(&pose);
        assert!(down.max_abs_diff(&(rotation(FRAC_PI_2).unwrap() * mirror_flip())) < TIGHT);
    }

    #[test]
    fn coude_matches_reference_product() {
        let pose = TelescopePose::new(1.1, 0.6).unwrap();
        let r = mat2(
            mat2(mat2(SZ, rot_ref(FRAC_PI_2 - 0.6)), mat2(SZ, rot_ref(1.1))),
            mat2(SZ, rot_ref(FRAC_PI_2)),
        );
        let up = coude_uplink(&pose);
        assert!(up.max_abs_diff(&PolarizationOperator::from_real(r)) < TIGHT);
        assert!(up.is_unitary(TIGHT));
    }

    #[test]
    fn compensation_at_fixed_pose() {
        let pose = TelescopePose::new(2.3, 0.4).unwrap();
        let total = coude_downlink(&pose) * mirror_flip() * coude_uplink(&pose);
        assert!(total.max_abs_diff(&mirror_flip()) < TIGHT);
        assert!(coude_downlink(&pose).is_unitary(TIGHT));
    }

    #[test]
    fn ccr_cases() {
        assert!(ccr_transform(0.0).unwrap().max_abs_diff(&mirror_flip()) < TIGHT);
        let m = ccr_transform(0.7).unwrap();
        assert!(m.is_unitary(TIGHT));
        assert!(m.max_abs_diff(&m.adjoint()) < TIGHT, "reflection is Hermitian");
        let minus_z = PolarizationOperator::from_real([[-1.0, 0.0], [0.0, 1.0]]);
        assert!(ccr_transform(FRAC_PI_2).unwrap().max_abs_diff(&minus_z) < TIGHT);
    }

    #[test]
    fn round_trip_examples() {
        let pose = TelescopePose::new(0.8, 1.0).unwrap();
        let h = round_trip(&pose, 0.0, &PolarizationState::H).unwrap();
        assert!(h.same_up_to_phase(&PolarizationState::H, 1e-12));
        let v = round_trip(&pose, 0.0, &PolarizationState::V).unwrap();
        assert!(v.same_up_to_phase(&PolarizationState::V, 1e-12));
        // R(π/2)|H⟩ = (0, −1) = −|V⟩
        let rotated = round_trip(&pose, std::f64::consts::FRAC_PI_4, &PolarizationState::H).unwrap();
        assert_abs_diff_eq!(rotated.amplitude_v().re, -1.0, epsilon = 1e-12);
        assert!(rotated.same_up_to_phase(&PolarizationState::V, 1e-12));
    }

    #[test]
    fn detection_probability_cases() {
        let p = |a: &PolarizationState, b: &PolarizationState| detection_probability(a, b).unwrap();
        assert_abs_diff_eq!(p(&PolarizationState::H, &PolarizationState::H), 1.0, epsilon = TIGHT);
        assert_abs_diff_eq!(p(&PolarizationState::H, &PolarizationState::V), 0.0, epsilon = TIGHT);
        assert_abs_diff_eq!(p(&PolarizationState::L, &PolarizationState::H), 0.5, epsilon = TIGHT);
        let bad = PolarizationState::new_unchecked(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.9));
        assert!(matches!(detection_probability(&bad, &PolarizationState::H), Err(Error::InvalidArgument(_))));
        assert!(detection_probability(&PolarizationState::H, &bad).is_err());
    }

    #[test]
    fn state_construction() {
        assert!(PolarizationState::new(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)).is_ok());
        assert!(PolarizationState::new(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.9)).is_err());
        assert!(PolarizationState::normalized(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)).is_err());
        for s in [PolarizationState::H, PolarizationState::L, PolarizationState::D] {
            assert!(s.fidelity(&s.orthogonal()) < TIGHT);
        }
        assert!(TelescopePose::new(2.0 * PI, 0.1).is_err());
        assert!(TelescopePose::new(0.0, -0.01).is_err());
        assert!(TelescopePose::wrapped(-0.5, 0.3).unwrap().azimuth() > 5.7);
    }

    #[test]
    fn analyzer_rejects_non_orthogonal_ports() {
        assert!(AnalyzerBasis::new(PolarizationState::H, PolarizationState::D).is_err());
        assert_eq!(AnalyzerBasis::LR.expected_port(&PolarizationState::R).unwrap(), 1);
    }

    fn pose_strategy() -> impl Strategy<Value = TelescopePose> {
        (0.0..2.0 * PI, 0.0..=FRAC_PI_2).prop_map(|(a, e)| TelescopePose::new(a, e).unwrap())
    }

    fn state_strategy() -> impl Strategy<Value = PolarizationState> {
        (0.0..PI, -PI..PI).prop_map(|(a, p)| PolarizationState::from_angles(a, p))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn mirror_rotation_commutation(theta in -10.0f64..10.0) {
            let lhs = mirror_flip() * rotation(theta).unwrap();
            let rhs = rotation(-theta).unwrap() * mirror_flip();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }

        #[test]
        fn all_operators_unitary(pose in pose_strategy(), phi in -PI..PI) {
            prop_assert!(coude_uplink(&pose).is_unitary(1e-12));
            prop_assert!(coude_downlink(&pose).is_unitary(1e-12));
            prop_assert!(ccr_transform(phi).unwrap().is_unitary(1e-12));
            prop_assert!(rotation(phi).unwrap().is_unitary(1e-12));
            prop_assert!((coude_uplink(&pose).determinant().norm() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn compensation_theorem(pose in pose_strategy(), psi in state_strategy()) {
            let expected = mirror_flip().apply(&psi);
            let got = round_trip(&pose, 0.0, &psi).unwrap();
            prop_assert!((expected.fidelity(&got) - 1.0).abs() <= 1e-10);
        }

        #[test]
        fn faraday_rotator_theorem(pose in pose_strategy(), phi in -PI..PI, psi in state_strategy()) {
            let expected = predicted_round_trip(phi, &psi).unwrap();
            let got = round_trip(&pose, phi, &psi).unwrap();
            prop_assert!((expected.fidelity(&got) - 1.0).abs() <= 1e-10);
        }

        #[test]
        fn analyzer_probabilities_sum_to_one(psi in state_strategy(), a in state_strategy()) {
            let p = detection_probability(&psi, &a).unwrap()
                + detection_probability(&psi, &a.orthogonal()).unwrap();
            prop_assert!((p - 1.0).abs() <= 1e-12);
        }
    }
}
