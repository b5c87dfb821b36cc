//! From emitted state to expected click rates, with the noise knobs.
//!
//! The ideal pipeline emits the post-selected `N`-photon state with its
//! per-pulse probability. Noise then
//! - replaces it with the whole truncated source output when higher-order
//!   emission is included, so `(N+2)`-photon events can leave false
//!   `N`-folds after loss and threshold detection;
//! - multiplies every coherence by the photons' indistinguishability;
//! - perturbs the three wave-plate angles of each setting by independent
//!   zero-mean Gaussian jitter.

use rand_distr::{Distribution, Normal};

use fockforge_core::detection::{class_probability, port_distribution, stream, ClickClass, DetectionTree, DetectorModel};
use fockforge_core::fock::{DensityMatrix, FockVector, LossChannel};
use fockforge_core::polarization::{solve_angles_for_target, su2_from_angles, GadgetAngles, ModeTransform, WavePlateSetting};
use fockforge_core::source::{post_select_2n, separated_pair_state, squeezed_two_mode_state, SqueezeParams};
use fockforge_core::{Error, Result};

use crate::config::NoiseConfig;

/// Offsets separating the random streams of one seed.
pub const JITTER_STREAMS: u64 = 1 << 32;
pub const COUNT_STREAMS: u64 = 2 << 32;
pub const SINGLES_STREAMS: u64 = 3 << 32;

/// What the source emits per pulse.
#[derive(Clone, Debug, PartialEq)]
pub struct Emission {
    /// Whole output, truncated and renormalized.
    pub full: FockVector,
    /// Photon number of the post-selected state.
    pub photons: usize,
}

impl Emission {
    /// Both pumping directions: the entangled `|Φ>` family.
    pub fn entangled(squeeze: SqueezeParams, photons: usize) -> Self {
        Self { full: squeezed_two_mode_state(squeeze, photons + 4).value, photons }
    }

    /// One direction: separated pairs, `|n n>`.
    pub fn separated(squeeze: SqueezeParams, photons: usize) -> Self {
        Self { full: separated_pair_state(squeeze, photons + 4).value, photons }
    }

    pub fn target(&self) -> Result<FockVector> {
        if self.photons % 2 != 0 {
            return Err(Error::InvalidParameter(format!("{} photons cannot be post-selected from pairs", self.photons)));
        }
        post_select_2n(&self.full, self.photons / 2)
    }

    pub fn sector_weight(&self) -> f64 {
        self.full.sector_projection(self.photons).norm_sqr()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    /// Normalized emitted state.
    pub emitted: DensityMatrix,
    /// Probability per pulse that `emitted` is produced.
    pub emission_prob: f64,
    /// Transmissivity from source to detector input.
    pub transmission: f64,
    pub detector: DetectorModel,
    pub tree: DetectionTree,
    pub jitter_rad: f64,
}

/// The noise-free pipeline: only the post-selected `N`-photon state, with
/// its emission probability.
pub fn ideal_pipeline(emission: &Emission, transmission: f64, detector: DetectorModel, tree: DetectionTree) -> Result<Pipeline> {
    let target = emission.target()?;
    Ok(Pipeline {
        emitted: DensityMatrix::pure(&target)?,
        emission_prob: emission.sector_weight(),
        transmission,
        detector,
        tree,
        jitter_rad: 0.0,
    })
}

/// A pipeline that emits a given normalized state with probability
/// `emission_prob` per pulse.
pub fn fixed_state_pipeline(state: &FockVector, emission_prob: f64, transmission: f64, detector: DetectorModel, tree: DetectionTree) -> Result<Pipeline> {
    Ok(Pipeline {
        emitted: DensityMatrix::pure(&state.normalize()?)?,
        emission_prob,
        transmission,
        detector,
        tree,
        jitter_rad: 0.0,
    })
}

pub fn apply_noise_model(ideal: &Pipeline, emission: Option<&Emission>, noise: &NoiseConfig) -> Result<Pipeline> {
    if !(noise.waveplate_angle_jitter_rad >= 0.0) {
        return Err(Error::InvalidParameter("wave-plate jitter must be >= 0".into()));
    }
    let mut out = ideal.clone();
    if noise.include_higher_order {
        let emission = emission.ok_or_else(|| Error::InvalidParameter("higher-order emission needs a squeezed source".into()))?;
        out.emitted = DensityMatrix::pure(&emission.full)?;
        out.emission_prob = 1.0;
    }
    if noise.indistinguishability != 1.0 {
        out.emitted = out.emitted.scale_coherences(noise.indistinguishability)?;
    }
    out.jitter_rad = noise.waveplate_angle_jitter_rad;
    Ok(out)
}

/// The gadget actually realized for `setting` when each plate is off by
/// Gaussian jitter `sigma`. Draw `index` of `seed`'s jitter streams.
pub fn perturbed_transform(setting: WavePlateSetting, sigma: f64, seed: u64, index: u64) -> Result<ModeTransform> {
    let nominal = su2_from_angles(setting);
    if sigma == 0.0 {
        return Ok(nominal);
    }
    let angles = solve_angles_for_target(&nominal)?;
    let mut rng = stream(seed, JITTER_STREAMS + index);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let jittered = GadgetAngles {
        first_qwp: angles.first_qwp + normal.sample(&mut rng),
        hwp: angles.hwp + normal.sample(&mut rng),
        second_qwp: angles.second_qwp + normal.sample(&mut rng),
    };
    Ok(jittered.jones())
}

impl Pipeline {
    /// State reaching the detectors.
    pub fn detected_state(&self) -> Result<DensityMatrix> {
        if self.transmission == 1.0 {
            return Ok(self.emitted.clone());
        }
        self.emitted.apply_loss(&LossChannel::symmetric(self.transmission)?)
    }

    /// Per-pulse probabilities of `classes` through the gadget `u`.
    pub fn class_probs(&self, detected: &DensityMatrix, u: &ModeTransform, classes: &[ClickClass]) -> Result<Vec<f64>> {
        let dist = port_distribution(detected, u)?;
        classes
            .iter()
            .map(|c| Ok(self.emission_prob * class_probability(&dist, &self.tree, &self.detector, *c)?))
            .collect()
    }

    /// Transform for scan point or setting `index`, jittered if configured.
    pub fn transform(&self, setting: WavePlateSetting, seed: u64, index: u64) -> Result<ModeTransform> {
        perturbed_transform(setting, self.jitter_rad, seed, index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fockforge_core::detection::DetectionTree;

    fn setup() -> (Emission, Pipeline) {
        let e = Emission::entangled(SqueezeParams::from_pairs_per_pulse(0.02).unwrap(), 4);
        let p = ideal_pipeline(&e, 0.06, DetectorModel::snspd_four_photon(), DetectionTree { h: 1, v: 3 }).unwrap();
        (e, p)
    }

    #[test]
    fn zero_noise_leaves_the_pipeline_unchanged() {
        let (e, p) = setup();
        assert_eq!(apply_noise_model(&p, Some(&e), &NoiseConfig::none()).unwrap(), p);
        let s = WavePlateSetting::new(0.3, 0.7);
        assert_eq!(p.transform(s, 1, 0).unwrap(), su2_from_angles(s));
    }

    #[test]
    fn jitter_is_seeded() {
        let s = WavePlateSetting::new(0.3, 0.7);
        let a = perturbed_transform(s, 0.02, 9, 4).unwrap();
        let b = perturbed_transform(s, 0.02, 9, 4).unwrap();
        let c = perturbed_transform(s, 0.02, 9, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let d = a.distance_up_to_phase(&su2_from_angles(s));
        assert!(d > 0.0 && d < 0.2);
    }

    #[test]
    fn emission_weights() {
        let (e, p) = setup();
        assert!((p.emitted.trace() - 1.0).abs() < 1e-12);
        // four photons: two pairs among both modes
        let r = SqueezeParams::from_pairs_per_pulse(0.02).unwrap();
        let g = r.gamma();
        let expected = (g / 2.0).powi(4) * (3.0 * 2.0 + 4.0 + 3.0 * 2.0) / r.c().powi(2);
        assert!((e.sector_weight() - expected).abs() < 1e-6 * expected, "{} {expected}", e.sector_weight());
    }
}
