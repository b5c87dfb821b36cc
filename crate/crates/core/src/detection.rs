//! Measurement side: the SU(2) gadget followed by a PBS, balanced splitter
//! trees feeding threshold detectors on each PBS port, count sampling, and
//! the HOM-dip and phase-fringe scans with their fits.
//!
//! Photon routing through a balanced splitter tree is uniform and
//! independent per photon, which is exact for number-state inputs. Dark
//! clicks are OR-ed into each detector independently.

use std::f64::consts::FRAC_PI_4;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, weighted_linear};
use crate::fock::{binomial, lift_sector, Basis, DensityMatrix, FockVector};
use crate::polarization::{su2_from_angles, ModeTransform, WavePlateSetting};
use crate::source::delay_overlap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Probability of a dark click within one coincidence window.
    pub dark_click_prob: f64,
    /// Click/no-click detectors when true; photon-number resolving otherwise.
    #[serde(default = "default_threshold")]
    pub threshold: bool,
}

fn default_threshold() -> bool {
    true
}

impl DetectorModel {
    pub fn ideal() -> Self {
        Self { efficiency: 1.0, dark_click_prob: 0.0, threshold: true }
    }

    /// Threshold detector with a Poissonian dark-count rate observed through
    /// a coincidence window.
    pub fn from_dark_rate(efficiency: f64, dark_rate_hz: f64, window_s: f64) -> Result<Self> {
        let m = Self {
            efficiency,
            dark_click_prob: 1.0 - (-dark_rate_hz * window_s).exp(),
            threshold: true,
        };
        m.validate()?;
        Ok(m)
    }

    /// 85 % efficient nanowire detectors with 100 Hz dark counts in a
    /// 0.8 ns window.
    pub fn snspd_two_photon() -> Self {
        Self::from_dark_rate(0.85, 100.0, 0.8e-9).expect("valid constants")
    }

    /// As [`Self::snspd_two_photon`] with the 1 ns four-photon window.
    pub fn snspd_four_photon() -> Self {
        Self::from_dark_rate(0.85, 100.0, 1.0e-9).expect("valid constants")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("efficiency", self.efficiency), ("dark click probability", self.dark_click_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Detectors behind each PBS output port. A port with zero detectors is not
/// monitored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionTree {
    pub h: usize,
    pub v: usize,
}

impl DetectionTree {
    pub fn new(h: usize, v: usize) -> Result<Self> {
        if h + v == 0 {
            return Err(Error::InvalidParameter("detection tree has no detectors".into()));
        }
        if h > 16 || v > 16 {
            return Err(Error::InvalidParameter("at most 16 detectors per port".into()));
        }
        Ok(Self { h, v })
    }
}

/// Number of clicking detectors on each port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClickClass {
    pub h: usize,
    pub v: usize,
}

impl ClickClass {
    pub fn new(h: usize, v: usize) -> Self {
        Self { h, v }
    }
}

impl std::fmt::Display for ClickClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}H&{}V", self.h, self.v)
    }
}

/// Exactly which detectors clicked, one bit per detector on each port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClickPattern {
    pub h_mask: u32,
    pub v_mask: u32,
}

impl ClickPattern {
    pub fn class(&self) -> ClickClass {
        ClickClass::new(self.h_mask.count_ones() as usize, self.v_mask.count_ones() as usize)
    }

    pub fn fits(&self, tree: &DetectionTree) -> bool {
        let fits = |mask: u32, d: usize| d >= 32 || mask >> d == 0;
        fits(self.h_mask, tree.h) && fits(self.v_mask, tree.v)
    }
}

/// Joint photon-number distribution at the two PBS ports.
#[derive(Clone, Debug, PartialEq)]
pub struct PortDistribution {
    max: usize,
    probs: Vec<f64>,
    /// Probability mapped past the cutoff by the gadget.
    pub truncated_mass: f64,
}

impl PortDistribution {
    pub fn max_per_port(&self) -> usize {
        self.max
    }

    /// `p(k photons at the H port, m at the V port)`.
    pub fn get(&self, k: usize, m: usize) -> f64 {
        if k > self.max || m > self.max {
            return 0.0;
        }
        self.probs[k * (self.max + 1) + m]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let side = self.max + 1;
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, p)| ((i / side, i % side), *p))
    }
}

/// Port distribution of a (possibly mixed) state after the gadget `u`.
pub fn port_distribution(rho: &DensityMatrix, u: &ModeTransform) -> Result<PortDistribution> {
    let m = u.checked()?;
    let basis = rho.basis();
    let max = basis.max_per_mode();
    let side = max + 1;
    let mut probs = vec![0.0; side * side];
    let mut lost = 0.0;
    let sectors: Vec<usize> = match basis {
        Basis::Sector { photons } => vec![photons],
        Basis::Truncated { cutoff } => (0..=2 * cutoff).collect(),
    };
    for photons in sectors {
        let block = match basis {
            Basis::Sector { .. } => rho.entries().clone(),
            Basis::Truncated { .. } => rho.sector_block(photons),
        };
        if block.iter().all(|z| z.norm() == 0.0) {
            continue;
        }
        let lift = lift_sector(m, photons);
        let out: DMatrix<_> = &lift * block * lift.adjoint();
        for k in 0..=photons {
            let p = out[(k, k)].re;
            let v = photons - k;
            if k <= max && v <= max {
                probs[k * side + v] += p;
            } else {
                lost += p;
            }
        }
    }
    Ok(PortDistribution { max, probs, truncated_mass: lost })
}

/// `p(k, m) = |<k, m| U(φ, θ) |ψ>|²` for a pure state.
pub fn port_number_distribution(state: &FockVector, setting: WavePlateSetting) -> Result<PortDistribution> {
    port_distribution(&state.to_density(), &su2_from_angles(setting))
}

/// Distribution of the number of clicking detectors (threshold) or of the
/// registered photon count (number resolving) when `photons` enter a
/// balanced tree of `detectors`.
pub fn fanout_click_probs(photons: usize, detectors: usize, model: &DetectorModel) -> Result<Vec<f64>> {
    model.validate()?;
    if detectors == 0 {
        return Ok(vec![1.0]);
    }
    let eta = model.efficiency;
    let dark = model.dark_click_prob;
    if !model.threshold {
        let signal: Vec<f64> = (0..=photons)
            .map(|j| binomial(photons, j) * eta.powi(j as i32) * (1.0 - eta).powi((photons - j) as i32))
            .collect();
        let noise: Vec<f64> = (0..=detectors)
            .map(|j| binomial(detectors, j) * dark.powi(j as i32) * (1.0 - dark).powi((detectors - j) as i32))
            .collect();
        let mut out = vec![0.0; photons + detectors + 1];
        for (a, ps) in signal.iter().enumerate() {
            for (b, pn) in noise.iter().enumerate() {
                out[a + b] += ps * pn;
            }
        }
        return Ok(out);
    }
    let d = detectors as f64;
    // probability that a given set of `a` detectors stays silent
    let silent = |a: usize| (1.0 - eta * a as f64 / d).powi(photons as i32) * (1.0 - dark).powi(a as i32);
    let mut out = Vec::with_capacity(detectors + 1);
    for j in 0..=detectors {
        let exact_set: f64 = (0..=j)
            .map(|t| {
                let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                sign * binomial(j, t) * silent(detectors - j + t)
            })
            .sum();
        out.push((binomial(detectors, j) * exact_set).max(0.0));
    }
    Ok(out)
}

/// Probability of a click class given a port distribution.
pub fn class_probability(
    dist: &PortDistribution,
    tree: &DetectionTree,
    model: &DetectorModel,
    target: ClickClass,
) -> Result<f64> {
    let limit = |d: usize| if model.threshold { d } else { usize::MAX };
    if target.h > limit(tree.h) || target.v > limit(tree.v) {
        return Err(Error::IncompatiblePattern(format!(
            "{target} with {} H and {} V detectors",
            tree.h, tree.v
        )));
    }
    let max = dist.max_per_port();
    let fan_h: Vec<Vec<f64>> = (0..=max).map(|k| fanout_click_probs(k, tree.h, model)).collect::<Result<_>>()?;
    let fan_v: Vec<Vec<f64>> = (0..=max).map(|k| fanout_click_probs(k, tree.v, model)).collect::<Result<_>>()?;
    let at = |v: &Vec<f64>, i: usize| v.get(i).copied().unwrap_or(0.0);
    Ok(dist
        .iter()
        .filter(|(_, p)| *p != 0.0)
        .map(|((k, m), p)| p * at(&fan_h[k], target.h) * at(&fan_v[m], target.v))
        .sum())
}

/// Per-pulse probability of a click class for `rho` measured through the
/// gadget `u`, the PBS and the detector tree.
pub fn coincidence_probability_with(
    rho: &DensityMatrix,
    u: &ModeTransform,
    tree: &DetectionTree,
    model: &DetectorModel,
    target: ClickClass,
) -> Result<f64> {
    class_probability(&port_distribution(rho, u)?, tree, model, target)
}

pub fn coincidence_probability(
    state: &FockVector,
    setting: WavePlateSetting,
    tree: &DetectionTree,
    model: &DetectorModel,
    target: ClickClass,
) -> Result<f64> {
    coincidence_probability_with(&state.to_density(), &su2_from_angles(setting), tree, model, target)
}

/// Probability of one exact detector pattern (all detectors on a port are
/// equivalent, so this is the class probability shared evenly).
pub fn pattern_probability(
    state: &FockVector,
    setting: WavePlateSetting,
    tree: &DetectionTree,
    model: &DetectorModel,
    pattern: ClickPattern,
) -> Result<f64> {
    if !pattern.fits(tree) {
        return Err(Error::IncompatiblePattern(format!(
            "masks {:#b}/{:#b} with {} H and {} V detectors",
            pattern.h_mask, pattern.v_mask, tree.h, tree.v
        )));
    }
    let class = pattern.class();
    let p = coincidence_probability(state, setting, tree, model, class)?;
    Ok(p / (binomial(tree.h, class.h) * binomial(tree.v, class.v)))
}

/// Deterministic random stream `index` derived from `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Poisson draw with the given mean from an existing stream.
pub fn poisson_draw<R: rand::Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Counts over `integration_s` at `rep_rate` pulses per second when each
/// pulse yields an event with probability `prob_per_pulse`.
pub fn sample_counts(prob_per_pulse: f64, rep_rate: f64, integration_s: f64, seed: u64) -> Result<u64> {
    if !(0.0..=1.0).contains(&prob_per_pulse) {
        return Err(Error::InvalidParameter(format!("probability {prob_per_pulse} is outside [0, 1]")));
    }
    let mut rng = stream(seed, 0);
    Ok(poisson_draw(prob_per_pulse * rep_rate * integration_s, &mut rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub counts: f64,
    pub stderr: f64,
}

/// A scanned curve, serialized as CSV `x,counts,stderr`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// Noise-free curve.
    pub fn expected(xs: &[f64], ys: &[f64]) -> Self {
        Self {
            points: xs.iter().zip(ys).map(|(&x, &y)| CurvePoint { x, counts: y, stderr: 0.0 }).collect(),
        }
    }

    /// Poisson-sampled curve; point `i` uses stream `i` of `seed` and gets a
    /// `sqrt(N)` error bar.
    pub fn sampled(xs: &[f64], means: &[f64], seed: u64) -> Self {
        let points = xs
            .par_iter()
            .zip(means.par_iter())
            .enumerate()
            .map(|(i, (&x, &mean))| {
                let n = poisson_draw(mean, &mut stream(seed, i as u64)) as f64;
                CurvePoint { x, counts: n, stderr: n.sqrt() }
            })
            .collect();
        Self { points }
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.counts).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fit weights: `1/σ²` with `σ² = max(stderr², 1)` for sampled curves,
    /// uniform when no error bars are present.
    fn weights(&self) -> Vec<f64> {
        if self.points.iter().all(|p| p.stderr == 0.0) {
            vec![1.0; self.len()]
        } else {
            self.points.iter().map(|p| 1.0 / p.stderr.powi(2).max(1.0)).collect()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,counts,stderr\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.x, p.counts, p.stderr));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("x,counts,stderr") {
            return Err(Error::InvalidParameter("curve CSV must start with header x,counts,stderr".into()));
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParameter(format!("curve CSV row {}: {e}", i + 2)))?;
            if f.len() != 3 {
                return Err(Error::InvalidParameter(format!("curve CSV row {} has {} fields", i + 2, f.len())));
            }
            points.push(CurvePoint { x: f[0], counts: f[1], stderr: f[2] });
        }
        Ok(Self { points })
    }
}

/// Fraction of two-photon events whose H and V photons interfere, times the
/// mode overlap: the HOM dip visibility produced by `state` after the PBS
/// separates H and V into the two arms of the final splitter. Events with
/// both photons in one arm give a flat `½` coincidence probability.
pub fn hom_visibility(state: &FockVector, indistinguishability: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&indistinguishability) {
        return Err(Error::InvalidParameter(format!(
            "indistinguishability {indistinguishability} is outside [0, 1]"
        )));
    }
    let p11 = state.amplitude(1, 1).norm_sqr();
    let p_two = p11 + state.amplitude(2, 0).norm_sqr() + state.amplitude(0, 2).norm_sqr();
    if p_two == 0.0 {
        return Err(Error::EmptyProjection(2));
    }
    // |11> on a balanced splitter: zero coincidences with perfect overlap
    let bs = su2_from_angles(WavePlateSetting::new(0.0, FRAC_PI_4));
    let out = port_distribution(&FockVector::number_state(1, 1, 2)?.to_density(), &bs)?;
    let bunching = 1.0 - out.get(1, 1) / 0.5;
    Ok(indistinguishability * bunching * p11 / p_two)
}

/// Expected HOM coincidences `C(τ) = C_max (1 - V L(τ))` with `L` the
/// Lorentzian envelope of FWHM `envelope_fwhm`.
pub fn hom_scan(delays: &[f64], visibility: f64, envelope_fwhm: f64, c_max: f64) -> Result<Curve> {
    if !(envelope_fwhm > 0.0) {
        return Err(Error::InvalidParameter("envelope FWHM must be > 0".into()));
    }
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::InvalidParameter(format!("visibility {visibility} is outside [0, 1]")));
    }
    let ys: Vec<f64> = delays
        .iter()
        .map(|&t| c_max * (1.0 - visibility * delay_overlap(t, envelope_fwhm)))
        .collect();
    Ok(Curve::expected(delays, &ys))
}

/// Click-class probability along a phase scan at fixed `theta`.
pub fn fringe_scan(
    rho: &DensityMatrix,
    phis: &[f64],
    theta: f64,
    tree: &DetectionTree,
    model: &DetectorModel,
    target: ClickClass,
) -> Result<Vec<f64>> {
    phis.par_iter()
        .map(|&phi| {
            let u = su2_from_angles(WavePlateSetting::new(phi, theta));
            coincidence_probability_with(rho, &u, tree, model, target)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencySearch {
    /// Best of 1, 2 and 4 cycles per 2π.
    Experiment,
    /// Continuous search over `[0.5, 8]` cycles per 2π.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub visibility: f64,
    pub visibility_err: f64,
    /// Cycles per 2π of φ.
    pub frequency: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub residual: f64,
}

fn sinusoid_fit(xs: &[f64], ys: &[f64], w: &[f64], freq: f64) -> Result<(nalgebra::DVector<f64>, DMatrix<f64>, f64)> {
    let design = DMatrix::from_fn(xs.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => (freq * xs[i]).cos(),
        _ => (freq * xs[i]).sin(),
    });
    weighted_linear(&design, ys, w)
}

/// Least-squares sinusoid `a + b cos(fφ) + c sin(fφ)`; the visibility is
/// `(C_max - C_min) / C_max` of the fitted curve, clamped to `[0, 1]`.
pub fn fit_fringe(curve: &Curve, search: FrequencySearch) -> Result<FringeFit> {
    if curve.len() < 8 {
        return Err(Error::FitFailed { reason: format!("{} points, need at least 8", curve.len()), residual: f64::NAN });
    }
    let xs = curve.xs();
    let ys = curve.counts();
    let w0 = curve.weights();
    let sampled = curve.points.iter().any(|p| p.stderr > 0.0);
    // Counting data: refit with variances from the fitted curve rather than
    // the observed counts, which would pull the fit toward low points.
    let fit_at = |f: f64| -> Result<(nalgebra::DVector<f64>, DMatrix<f64>, f64, Vec<f64>)> {
        let mut w = w0.clone();
        let mut r = sinusoid_fit(&xs, &ys, &w, f)?;
        if sampled {
            for _ in 0..4 {
                w = xs.iter().map(|&x| 1.0 / (r.0[0] + r.0[1] * (f * x).cos() + r.0[2] * (f * x).sin()).max(1.0)).collect();
                r = sinusoid_fit(&xs, &ys, &w, f)?;
            }
        }
        Ok((r.0, r.1, r.2, w))
    };
    let ssr_at = |f: f64| fit_at(f).map(|r| r.2).unwrap_or(f64::INFINITY);

    let freq = match search {
        FrequencySearch::Experiment => {
            let mut best = (f64::INFINITY, 1.0);
            for f in [1.0, 2.0, 4.0] {
                let r = ssr_at(f);
                // prefer the lower frequency on ties (e.g. a flat curve)
                if r < best.0 * (1.0 - 1e-12) - 1e-300 {
                    best = (r, f);
                }
            }
            best.1
        }
        FrequencySearch::Free => {
            let step = 0.01;
            let mut best = (f64::INFINITY, 1.0);
            let mut f = 0.5;
            while f <= 8.0 + 1e-12 {
                let r = ssr_at(f);
                if r < best.0 {
                    best = (r, f);
                }
                f += step;
            }
            // golden-section refinement around the grid optimum
            let (mut a, mut b) = (best.1 - step, best.1 + step);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..80 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if ssr_at(c) < ssr_at(d) { b = d } else { a = c }
            }
            0.5 * (a + b)
        }
    };

    let (beta, inv, ssr, _) = fit_at(freq)?;
    if !ssr.is_finite() {
        return Err(Error::FitFailed { reason: "non-finite residual".into(), residual: ssr });
    }
    let (a, b, c) = (beta[0], beta[1], beta[2]);
    let amp = b.hypot(c);
    let c_max = a + amp;
    let (visibility, grad) = if c_max <= 0.0 {
        (0.0, [0.0; 3])
    } else if a - amp < 0.0 {
        (1.0, [0.0; 3])
    } else {
        let v = 2.0 * amp / c_max;
        let d_a = -2.0 * amp / c_max.powi(2);
        let d_amp = 2.0 * a / c_max.powi(2);
        let (db, dc) = if amp > 0.0 { (b / amp, c / amp) } else { (0.0, 0.0) };
        (v, [d_a, d_amp * db, d_amp * dc])
    };
    let dof = (xs.len() - 3) as f64;
    let scale = (ssr / dof).max(if curve.points.iter().all(|p| p.stderr == 0.0) { 0.0 } else { 1.0 });
    let var: f64 = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| grad[i] * inv[(i, j)] * grad[j])
        .sum::<f64>()
        * scale;
    Ok(FringeFit {
        visibility: visibility.clamp(0.0, 1.0),
        visibility_err: var.max(0.0).sqrt(),
        frequency: freq,
        amplitude: amp,
        offset: a,
        residual: ssr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipFit {
    pub c_max: f64,
    pub c_min: f64,
    pub visibility: f64,
    pub visibility_err: f64,
    pub center: f64,
    pub width: f64,
    pub residual: f64,
}

/// Lorentzian dip `C_max (1 - V / (1 + (2(τ - τ₀)/w)²))` by weighted
/// Levenberg-Marquardt; `V = (C_max - C_min) / C_max`.
pub fn fit_dip(curve: &Curve) -> Result<DipFit> {
    if curve.len() < 8 {
        return Err(Error::FitFailed { reason: format!("{} points, need at least 8", curve.len()), residual: f64::NAN });
    }
    let xs = curve.xs();
    let ys = curve.counts();
    let sw: Vec<f64> = curve.weights().iter().map(|w| w.sqrt()).collect();

    let (imin, ymin) = ys
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &y)| if y < acc.1 { (i, y) } else { acc });
    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let top = &sorted[sorted.len() * 3 / 4..];
    let base = top.iter().sum::<f64>() / top.len() as f64;
    let span = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let half = 0.5 * (base + ymin);
    let below = xs.iter().zip(&ys).filter(|(_, &y)| y < half).map(|(x, _)| *x).collect::<Vec<_>>();
    let width0 = match (below.first(), below.last()) {
        (Some(a), Some(b)) if b > a => b - a,
        _ => span / 4.0,
    };
    let v0 = if base > 0.0 { (1.0 - ymin / base).clamp(0.05, 1.0) } else { 0.5 };
    let x0 = [base.max(1e-9), v0, xs[imin], width0.max(span / 100.0)];

    let model = |p: &[f64], x: f64| p[0] * (1.0 - p[1] / (1.0 + (2.0 * (x - p[2]) / p[3]).powi(2)));
    let sol = levenberg_marquardt(
        |p| {
            xs.iter()
                .zip(&ys)
                .zip(&sw)
                .map(|((&x, &y), &s)| s * (model(p, x) - y))
                .collect()
        },
        &x0,
        500,
    )?;
    let p = &sol.params;
    let (c_max, v, center, width) = (p[0], p[1], p[2], p[3].abs());
    if !(c_max > 0.0) {
        return Err(Error::FitFailed { reason: "non-positive baseline".into(), residual: sol.cost });
    }
    let visibility = v.clamp(0.0, 1.0);
    let dof = (xs.len() - 4) as f64;
    let scale = if curve.points.iter().all(|p| p.stderr == 0.0) { sol.cost / dof } else { (sol.cost / dof).max(1.0) };
    let visibility_err = sol.covariance.as_ref().map_or(f64::NAN, |c| (c[(1, 1)] * scale).max(0.0).sqrt());
    Ok(DipFit {
        c_max,
        c_min: c_max * (1.0 - visibility),
        visibility,
        visibility_err,
        center,
        width,
        residual: sol.cost,
    })
}
