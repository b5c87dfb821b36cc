//! Dual-pump SFWM source in a Sagnac loop.
//!
//! Pumping both directions produces a product of two single-mode squeezed
//! vacua on the H and V modes. Expanding the disentangled evolution operator,
//! the state is
//!
//! ```text
//! |Ψ> = (1/C) exp(Γ · ½ ((a†_H)² + (a†_V)²)) |00>,   C = cosh r,  Γ = tanh r
//! ```
//!
//! where `r` is the dimensionless interaction strength. The normalization is
//! `1/C` (one `1/sqrt(C)` per mode), which makes the untruncated state exactly
//! normalized; the post-selected states do not depend on it. The exponent is
//! read symmetrically in the two modes.
//!
//! The module also carries the source's rate bookkeeping: pump-power scaling,
//! the delay overlap of the two pump pulses, the filtered pulse width and the
//! loss budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockVector, Mode, Truncated};
use num_complex::Complex64;

/// Truncated probability above which state generation logs a warning.
pub const TRUNCATION_WARN: f64 = 1e-6;

/// Squeeze parameter `r = χt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezeParams {
    r: f64,
}

impl SqueezeParams {
    pub fn new(r: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("squeeze parameter r = {r} must be >= 0")));
        }
        Ok(Self { r })
    }

    /// The `r` whose mean pair number `sinh² r` equals `pairs`.
    pub fn from_pairs_per_pulse(pairs: f64) -> Result<Self> {
        if !(pairs >= 0.0 && pairs.is_finite()) {
            return Err(Error::InvalidParameter(format!("pairs per pulse {pairs} must be >= 0")));
        }
        Self::new(pairs.sqrt().asinh())
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// `C = cosh r`.
    pub fn c(&self) -> f64 {
        self.r.cosh()
    }

    /// `Γ = tanh r`.
    pub fn gamma(&self) -> f64 {
        self.r.tanh()
    }

    /// Mean number of pairs (both directions together).
    pub fn mean_pairs(&self) -> f64 {
        self.r.sinh().powi(2)
    }
}

/// Amplitudes `<2j| exp(Γ/2 a†²) |0>` for one mode, `j = 0..=cutoff/2`.
fn single_mode_series(gamma: f64, cutoff: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(cutoff / 2 + 1);
    let mut a = 1.0;
    for j in 0..=cutoff / 2 {
        if j > 0 {
            // a_j / a_{j-1} = (Γ/2) sqrt((2j)(2j-1)) / j
            let jf = j as f64;
            a *= gamma / 2.0 * ((2.0 * jf) * (2.0 * jf - 1.0)).sqrt() / jf;
        }
        out.push(a);
    }
    out
}

/// Two-mode squeezed output of the loop, truncated at `cutoff` photons per
/// mode and renormalized. `truncated_mass` is the probability that lay past
/// the cutoff.
pub fn squeezed_two_mode_state(params: SqueezeParams, cutoff: usize) -> Truncated<FockVector> {
    let gamma = params.gamma();
    let series = single_mode_series(gamma, cutoff);
    let prefactor = 1.0 / params.c();
    let mut terms = Vec::new();
    for (jh, ah) in series.iter().enumerate() {
        for (jv, av) in series.iter().enumerate() {
            terms.push((2 * jh, 2 * jv, Complex64::new(prefactor * ah * av, 0.0)));
        }
    }
    let raw = FockVector::from_terms(cutoff, terms).expect("even labels within cutoff");
    let kept = raw.norm_sqr();
    let truncated_mass = (1.0 - kept).max(0.0);
    if truncated_mass > TRUNCATION_WARN {
        log::warn!(
            "squeezed state with r = {} loses {truncated_mass:.3e} past cutoff {cutoff}",
            params.r()
        );
    }
    let value = raw.normalize().expect("vacuum amplitude is nonzero");
    Truncated { value, truncated_mass }
}

/// Single-direction pumping: signal and idler leave on orthogonal
/// polarizations, `(1/C) Σ Γⁿ |n n>`, truncated and renormalized like
/// [`squeezed_two_mode_state`]. Its four-photon sector is `|22>`.
pub fn separated_pair_state(params: SqueezeParams, cutoff: usize) -> Truncated<FockVector> {
    let gamma = params.gamma();
    let terms = (0..=cutoff).map(|n| (n, n, Complex64::new(gamma.powi(n as i32) / params.c(), 0.0)));
    let raw = FockVector::from_terms(cutoff, terms).expect("labels within cutoff");
    let truncated_mass = (1.0 - raw.norm_sqr()).max(0.0);
    if truncated_mass > TRUNCATION_WARN {
        log::warn!(
            "pair state with r = {} loses {truncated_mass:.3e} past cutoff {cutoff}",
            params.r()
        );
    }
    let value = raw.normalize().expect("vacuum amplitude is nonzero");
    Truncated { value, truncated_mass }
}

/// Normalized projection of `state` onto total photon number `2n`.
pub fn post_select_2n(state: &FockVector, n: usize) -> Result<FockVector> {
    if 2 * n > state.cutoff() {
        return Err(Error::InvalidParameter(format!(
            "2n = {} exceeds cutoff {}",
            2 * n,
            state.cutoff()
        )));
    }
    let proj = state.sector_projection(2 * n);
    proj.normalize().map_err(|_| Error::EmptyProjection(2 * n))
}

/// `2n`-photon state post-selected from the source at squeeze `params`.
pub fn entangled_state(params: SqueezeParams, n: usize, cutoff: usize) -> Result<FockVector> {
    let source = squeezed_two_mode_state(params, cutoff);
    post_select_2n(&source.value, n)
}

/// `(1/n!) (½ ((a†_H)² + (a†_V)²))ⁿ |00>`, built by repeated creation
/// operators without normalizing.
pub fn entangled_state_closed_form(n: usize, cutoff: usize) -> Result<FockVector> {
    if 2 * n > cutoff {
        return Err(Error::InvalidParameter(format!("2n = {} exceeds cutoff {cutoff}", 2 * n)));
    }
    let half = Complex64::new(0.5, 0.0);
    let mut state = FockVector::vacuum(cutoff);
    for step in 1..=n {
        let h = state.raise(Mode::H).value.raise(Mode::H).value;
        let v = state.raise(Mode::V).value.raise(Mode::V).value;
        let sum: Vec<Complex64> = h
            .amplitudes()
            .iter()
            .zip(v.amplitudes())
            .map(|(a, b)| (a + b) * half / step as f64)
            .collect();
        state = FockVector::from_amplitudes(cutoff, sum)?;
    }
    Ok(state)
}

/// Pump configuration of the two pulse trains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpConfig {
    /// µW
    pub p1: f64,
    /// µW
    pub p2: f64,
    /// Hz
    pub rep_rate: f64,
    /// ps
    #[serde(default)]
    pub delay: f64,
    /// ps
    #[serde(default = "default_pulse_fwhm")]
    pub pulse_fwhm: f64,
}

fn default_pulse_fwhm() -> f64 {
    23.0
}

impl PumpConfig {
    pub fn new(p1: f64, p2: f64, rep_rate: f64) -> Result<Self> {
        let pump = Self { p1, p2, rep_rate, delay: 0.0, pulse_fwhm: default_pulse_fwhm() };
        pump.validate()?;
        Ok(pump)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p1 >= 0.0 && self.p2 >= 0.0) {
            return Err(Error::InvalidParameter("pump powers must be >= 0".into()));
        }
        if !(self.rep_rate > 0.0) {
            return Err(Error::InvalidParameter("repetition rate must be > 0".into()));
        }
        if !(self.pulse_fwhm > 0.0) {
            return Err(Error::InvalidParameter("pulse FWHM must be > 0".into()));
        }
        Ok(())
    }

    /// Pairs per pulse, scaled from a reference measured with both pumps at
    /// `reference.power_uw`, including the delay overlap.
    pub fn pairs_per_pulse(&self, reference: &BrightnessReference) -> f64 {
        reference.pairs_per_pulse * self.p1 * self.p2 / reference.power_uw.powi(2)
            * delay_overlap(self.delay, self.pulse_fwhm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpMode {
    /// Two pulses at different frequencies; degenerate pairs take one
    /// photon from each.
    Dual,
    /// One pulse (power `p1`) supplying both pump photons.
    Single,
}

/// Relative pair rate in µW²: `P₁P₂` for dual pumping, `P₁²` for a single
/// pump.
pub fn pair_rate(pump: &PumpConfig, mode: PumpMode) -> f64 {
    match mode {
        PumpMode::Dual => pump.p1 * pump.p2,
        PumpMode::Single => pump.p1 * pump.p1,
    }
}

/// Lorentzian coincidence factor `1 / (1 + (2 delay / fwhm)²)`.
pub fn delay_overlap(delay: f64, fwhm: f64) -> f64 {
    let x = 2.0 * delay / fwhm;
    1.0 / (1.0 + x * x)
}

/// Pulse width after spectral filtering at a constant time-bandwidth
/// product.
pub fn pulse_width_tbp(input_fwhm_ps: f64, input_bw_nm: f64, filter_bw_nm: f64) -> Result<f64> {
    if !(input_bw_nm > 0.0 && filter_bw_nm > 0.0) {
        return Err(Error::InvalidParameter("bandwidths must be > 0".into()));
    }
    Ok(input_fwhm_ps * input_bw_nm / filter_bw_nm)
}

/// Loss contributions (dB) between generation and detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBudget {
    #[serde(default)]
    pub waveguide_db: f64,
    #[serde(default)]
    pub coupler_db: f64,
    #[serde(default)]
    pub manipulation_db: f64,
    #[serde(default)]
    pub filters_db: f64,
    #[serde(default)]
    pub detector_db: f64,
    /// Total quoted independently of the components; overrides their sum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stated_total_db: Option<f64>,
}

impl LossBudget {
    pub fn lossless() -> Self {
        Self {
            waveguide_db: 0.0,
            coupler_db: 0.0,
            manipulation_db: 0.0,
            filters_db: 0.0,
            detector_db: 0.0,
            stated_total_db: None,
        }
    }

    /// The measured silicon-chip setup: 1 dB propagation, 5 dB grating
    /// coupler, 4.3 dB manipulation/measurement optics, 2 dB post-filters,
    /// 0.7 dB detectors, with a quoted total of 12 dB.
    pub fn silicon_setup() -> Self {
        Self {
            waveguide_db: 1.0,
            coupler_db: 5.0,
            manipulation_db: 4.3,
            filters_db: 2.0,
            detector_db: 0.7,
            stated_total_db: Some(12.0),
        }
    }

    pub fn components(&self) -> [(&'static str, f64); 5] {
        [
            ("waveguide", self.waveguide_db),
            ("coupler", self.coupler_db),
            ("manipulation", self.manipulation_db),
            ("filters", self.filters_db),
            ("detector", self.detector_db),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, db) in self.components() {
            if !(db >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} loss {db} dB must be >= 0")));
            }
        }
        if let Some(t) = self.stated_total_db {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(format!("stated total {t} dB must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTotal {
    pub component_sum_db: f64,
    /// The stated total when present, otherwise the component sum.
    pub effective_db: f64,
    /// `10^(-effective_db / 10)`.
    pub transmissivity: f64,
}

pub fn db_to_transmissivity(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

pub fn loss_budget_total(budget: &LossBudget) -> Result<LossTotal> {
    budget.validate()?;
    let component_sum_db: f64 = budget.components().iter().map(|(_, db)| db).sum();
    let effective_db = budget.stated_total_db.unwrap_or(component_sum_db);
    Ok(LossTotal {
        component_sum_db,
        effective_db,
        transmissivity: db_to_transmissivity(effective_db),
    })
}

/// Calibration point for brightness scaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrightnessReference {
    /// Power of each pump at the reference point, µW.
    pub power_uw: f64,
    pub pairs_per_pulse: f64,
}

impl BrightnessReference {
    /// 0.002 pairs per pulse with both pumps at 80 µW.
    pub fn silicon_setup() -> Self {
        Self { power_uw: 80.0, pairs_per_pulse: 0.002 }
    }
}

/// Pairs per pulse implied by a detected two-fold rate when each photon
/// suffers `single_loss_db`.
pub fn pairs_from_detected_rate(rate_hz: f64, single_loss_db: f64, rep_rate: f64) -> f64 {
    rate_hz / db_to_transmissivity(2.0 * single_loss_db) / rep_rate
}

/// Multiplicative factor for beam splitting and pattern selection in the
/// four-fold fringe measurement, calibrated on the 250 µW operating point.
pub const FOUR_FOLD_POSTPROCESSING: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrightnessReport {
    pub pairs_per_pulse: f64,
    pub pair_generation_hz: f64,
    pub four_photon_per_pulse: f64,
    pub four_photon_generation_hz: f64,
    pub single_photon_loss_db: f64,
    pub four_fold_loss_db: f64,
    pub postprocessing_factor: f64,
    pub four_fold_detected_hz: f64,
}

/// Pair and four-photon rates at `pump`: pairs scale with `P₁P₂`, the
/// four-photon probability is the square of the pair probability, and the
/// detected four-fold rate carries four times the single-photon loss and
/// the post-processing factor.
pub fn brightness_estimate(
    pump: &PumpConfig,
    reference: &BrightnessReference,
    losses: &LossBudget,
    postprocessing_factor: f64,
) -> Result<BrightnessReport> {
    pump.validate()?;
    if !(0.0..=1.0).contains(&postprocessing_factor) {
        return Err(Error::InvalidParameter(format!(
            "post-processing factor {postprocessing_factor} is outside [0, 1]"
        )));
    }
    let single = loss_budget_total(losses)?.effective_db;
    let pairs = pump.pairs_per_pulse(reference);
    let four = pairs * pairs;
    let four_fold_loss_db = 4.0 * single;
    let four_hz = four * pump.rep_rate;
    Ok(BrightnessReport {
        pairs_per_pulse: pairs,
        pair_generation_hz: pairs * pump.rep_rate,
        four_photon_per_pulse: four,
        four_photon_generation_hz: four_hz,
        single_photon_loss_db: single,
        four_fold_loss_db,
        postprocessing_factor,
        four_fold_detected_hz: four_hz * db_to_transmissivity(four_fold_loss_db) * postprocessing_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn re(v: &FockVector, nh: usize, nv: usize) -> f64 {
        let a = v.amplitude(nh, nv);
        assert!(a.im.abs() < 1e-15);
        a.re
    }

    #[test]
    fn separated_pairs() {
        let p = SqueezeParams::from_pairs_per_pulse(0.01).unwrap();
        let s = separated_pair_state(p, 8);
        assert!(s.truncated_mass < 1e-12);
        let four = post_select_2n(&s.value, 2).unwrap();
        assert!((four.amplitude(2, 2).norm() - 1.0).abs() < 1e-12);
        // mean photons per mode = sinh² r
        assert!((s.value.mean_photons(Mode::H) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_squeezing_is_vacuum() {
        let s = squeezed_two_mode_state(SqueezeParams::new(0.0).unwrap(), 8);
        assert_eq!(s.value, FockVector::vacuum(8));
        assert_eq!(s.truncated_mass, 0.0);
        assert!(matches!(
            entangled_state(SqueezeParams::new(0.0).unwrap(), 1, 8),
            Err(Error::EmptyProjection(2))
        ));
    }

    #[test]
    fn pair_amplitude_ratio() {
        // term-by-term: (Γ/2) a†² |0> = (Γ/2) sqrt(2) |2>
        for r in [0.05, 0.2, 0.6] {
            let p = SqueezeParams::new(r).unwrap();
            let s = squeezed_two_mode_state(p, 8).value;
            let ratio = re(&s, 2, 0) / re(&s, 0, 0);
            assert!((ratio - p.gamma() / 2f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn two_photon_selection() {
        let s = entangled_state(SqueezeParams::new(0.3).unwrap(), 1, 8).unwrap();
        assert!((re(&s, 2, 0) - FRAC_1_SQRT_2).abs() < 1e-14);
        assert!((re(&s, 0, 2) - FRAC_1_SQRT_2).abs() < 1e-14);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn four_and_eight_photon_coefficients() {
        let p = SqueezeParams::new(0.2).unwrap();
        let s4 = entangled_state(p, 2, 8).unwrap();
        assert!((re(&s4, 4, 0) - (3.0f64 / 8.0).sqrt()).abs() < 1e-12);
        assert!((re(&s4, 2, 2) - 0.5).abs() < 1e-12);
        assert!((re(&s4, 0, 4) - (3.0f64 / 8.0).sqrt()).abs() < 1e-12);

        let s8 = entangled_state(p, 4, 8).unwrap();
        assert!((re(&s8, 8, 0) - 70f64.sqrt() / 16.0).abs() < 1e-12);
        assert!((re(&s8, 6, 2) - 10f64.sqrt() / 8.0).abs() < 1e-12);
        assert!((re(&s8, 2, 6) - 10f64.sqrt() / 8.0).abs() < 1e-12);
        assert!((re(&s8, 4, 4) - 3.0 / 8.0).abs() < 1e-12);
        assert!((re(&s8, 0, 8) - 70f64.sqrt() / 16.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_selection() {
        let p = SqueezeParams::new(0.4).unwrap();
        for n in 0..=4 {
            let closed = entangled_state_closed_form(n, 8).unwrap();
            // the closed form is already normalized
            assert!((closed.norm_sqr() - 1.0).abs() < 1e-12, "n = {n}");
            let selected = entangled_state(p, n, 8).unwrap();
            for (a, b) in closed.amplitudes().iter().zip(selected.amplitudes()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn selected_amplitudes_real_nonnegative_even() {
        let p = SqueezeParams::new(0.25).unwrap();
        for n in 1..=4 {
            let s = entangled_state(p, n, 8).unwrap();
            for (i, a) in s.amplitudes().iter().enumerate() {
                let (nh, nv) = s.basis().label(i);
                assert_eq!(a.im, 0.0);
                assert!(a.re >= 0.0);
                if a.re != 0.0 {
                    assert!(nh % 2 == 0 && nv % 2 == 0);
                }
            }
        }
    }

    #[test]
    fn factorizes_into_single_mode_squeezers() {
        // single-mode squeezed vacuum: <2j|S|0> = (tanh r)^j sqrt((2j)!) / (2^j j! sqrt(cosh r))
        let p = SqueezeParams::new(0.5).unwrap();
        let s = squeezed_two_mode_state(p, 8);
        let r1 = p.gamma().atanh();
        let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
        let single = |j: usize| {
            r1.tanh().powi(j as i32) * fact(2 * j).sqrt() / (2f64.powi(j as i32) * fact(j) * r1.cosh().sqrt())
        };
        let keep = (1.0 - s.truncated_mass).sqrt();
        for jh in 0..=4 {
            for jv in 0..=4 {
                let expect = single(jh) * single(jv) / keep;
                assert!((re(&s.value, 2 * jh, 2 * jv) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncation_is_small_at_operating_points() {
        for pairs in [0.002, 0.0195, 0.05] {
            let p = SqueezeParams::from_pairs_per_pulse(pairs).unwrap();
            assert!((p.mean_pairs() - pairs).abs() < 1e-15);
            assert!(squeezed_two_mode_state(p, 8).truncated_mass < 1e-6);
        }
    }

    #[test]
    fn pump_scaling() {
        let base = PumpConfig::new(100.0, 100.0, 1e8).unwrap();
        let doubled = PumpConfig { p1: 200.0, ..base };
        assert!((pair_rate(&doubled, PumpMode::Dual) / pair_rate(&base, PumpMode::Dual) - 2.0).abs() < 1e-15);
        assert!((pair_rate(&doubled, PumpMode::Single) / pair_rate(&base, PumpMode::Single) - 4.0).abs() < 1e-15);
        let off = PumpConfig { p1: 0.0, ..base };
        assert_eq!(pair_rate(&off, PumpMode::Dual), 0.0);
        assert!(PumpConfig::new(-1.0, 1.0, 1e8).is_err());
        assert!(PumpConfig::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn lorentzian_overlap() {
        assert_eq!(delay_overlap(0.0, 23.0), 1.0);
        assert!((delay_overlap(11.5, 23.0) - 0.5).abs() < 1e-15);
        assert!(delay_overlap(1e9, 23.0) < 1e-12);
        let mut last = 1.0;
        for k in 0..100 {
            let d = k as f64 * 0.7;
            let v = delay_overlap(d, 23.0);
            assert_eq!(v, delay_overlap(-d, 23.0));
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn filtered_pulse_width() {
        assert!((pulse_width_tbp(0.090, 80.0, 0.4).unwrap() - 18.0).abs() < 1e-12);
        assert_eq!(pulse_width_tbp(0.09, 80.0, 80.0).unwrap(), 0.09);
        assert!((pulse_width_tbp(0.09, 80.0, 0.2).unwrap() - 36.0).abs() < 1e-12);
        assert!(pulse_width_tbp(0.09, 0.0, 0.4).is_err());
    }

    #[test]
    fn loss_totals() {
        let zero = loss_budget_total(&LossBudget::lossless()).unwrap();
        assert_eq!(zero.effective_db, 0.0);
        assert_eq!(zero.transmissivity, 1.0);

        let silicon = LossBudget::silicon_setup();
        let t = loss_budget_total(&silicon).unwrap();
        assert!((t.component_sum_db - 13.0).abs() < 1e-12);
        assert_eq!(t.effective_db, 12.0);
        let unstated = LossBudget { stated_total_db: None, ..silicon };
        assert!((loss_budget_total(&unstated).unwrap().effective_db - 13.0).abs() < 1e-12);

        assert!((db_to_transmissivity(10.0) - 0.1).abs() < 1e-15);
        let bad = LossBudget { coupler_db: -1.0, ..silicon };
        assert!(loss_budget_total(&bad).is_err());
    }

    #[test]
    fn brightness_chain() {
        // 800 Hz detected two-folds with 12 dB per photon
        let pairs = pairs_from_detected_rate(800.0, 12.0, 1e8);
        assert!((pairs * 1e8 / 1e3 - 200.95).abs() < 0.1);

        let pump = PumpConfig::new(250.0, 250.0, 1e8).unwrap();
        let rep = brightness_estimate(
            &pump,
            &BrightnessReference::silicon_setup(),
            &LossBudget::silicon_setup(),
            FOUR_FOLD_POSTPROCESSING,
        )
        .unwrap();
        assert!((rep.pairs_per_pulse - 0.002 * 250.0 * 250.0 / 6400.0).abs() < 1e-15);
        assert!((rep.pairs_per_pulse - 0.02).abs() < 0.001);
        assert!((rep.four_photon_per_pulse - rep.pairs_per_pulse.powi(2)).abs() < 1e-18);
        assert_eq!(rep.four_fold_loss_db, 48.0);
        assert!(rep.four_fold_detected_hz > 0.03 && rep.four_fold_detected_hz < 0.12);
    }
}
