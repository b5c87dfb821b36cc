//! One runner per experiment kind. Each returns the files to write and the
//! headline numbers, each number tagged with the file that carries it.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use fockforge_core::detection::{fit_dip, fit_fringe, hom_scan, hom_visibility, ClickClass, Curve, DetectorModel, DipFit, FrequencySearch, FringeFit};
use fockforge_core::fit::{levenberg_marquardt, weighted_linear};
use fockforge_core::fock::FockVector;
use fockforge_core::polarization::WavePlateSetting;
use fockforge_core::source::{brightness_estimate, db_to_transmissivity, loss_budget_total, pulse_width_tbp, PumpMode, SqueezeParams};
use fockforge_core::tomography::{
    default_settings, fidelity_to, fidelity_with_errorbars, mle_reconstruct, poisson_records, records_to_csv, CountRecord,
    MeasurementModel, MleOptions,
};
use fockforge_core::Error;
use num_complex::Complex64;

use crate::config::{ExperimentConfig, Kind};
use crate::error::{Context, RunError};
use crate::pipeline::{apply_noise_model, fixed_state_pipeline, ideal_pipeline, Emission, Pipeline, SINGLES_STREAMS};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quantity {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<f64>,
    pub unit: &'static str,
    /// Output file holding the number.
    pub file: &'static str,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    /// `(file name, contents)` in write order.
    pub files: Vec<(&'static str, String)>,
    pub quantities: BTreeMap<String, Quantity>,
    pub notes: Vec<String>,
}

impl RunOutput {
    fn file(&mut self, name: &'static str, contents: String) {
        self.files.push((name, contents));
    }

    fn number(&mut self, name: &str, value: f64, uncertainty: Option<f64>, unit: &'static str, file: &'static str) {
        self.quantities.insert(name.to_string(), Quantity { value, uncertainty, unit, file });
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn seed_of(cfg: &ExperimentConfig) -> Result<u64, RunError> {
    cfg.seed.ok_or_else(|| {
        RunError::Config(crate::config::ConfigError { problems: vec![format!("seed: required for {}", cfg.kind)] })
    })
}

/// Source-to-detector transmissivity: the loss budget without the detector
/// entry (detector efficiency lives in the detector model).
pub fn transmission(cfg: &ExperimentConfig) -> Result<f64, RunError> {
    let total = loss_budget_total(&cfg.losses.budget()).context("loss budget")?;
    Ok(db_to_transmissivity((total.effective_db - cfg.losses.detector_db).max(0.0)))
}

pub fn pairs_per_pulse(cfg: &ExperimentConfig) -> f64 {
    match cfg.source.r {
        Some(r) => r.sinh().powi(2),
        None => cfg.source.pump().pairs_per_pulse(&cfg.source.reference()),
    }
}

pub fn squeeze(cfg: &ExperimentConfig) -> Result<SqueezeParams, RunError> {
    match cfg.source.r {
        Some(r) => SqueezeParams::new(r),
        None => SqueezeParams::from_pairs_per_pulse(pairs_per_pulse(cfg)),
    }
    .context("squeeze parameter")
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    log::info!("running {}", cfg.kind);
    match cfg.kind {
        Kind::DelayScan => delay_scan(cfg),
        Kind::PowerScan => power_scan(cfg),
        Kind::Hom => hom(cfg),
        Kind::Tomo2 | Kind::Tomo4 | Kind::TomoFock => tomography(cfg),
        Kind::Fringe1 | Kind::Fringe2 | Kind::Fringe4 => fringe(cfg),
        Kind::Brightness => brightness(cfg),
        Kind::Budget => budget(cfg),
    }
}

/// Per-pulse click probability of one detector fed by half of each pair.
fn singles_prob(pairs: f64, eta: f64, model: &DetectorModel) -> f64 {
    pairs * eta + model.dark_click_prob
}

/// Two-fold probability for a pair split on a balanced splitter, plus
/// accidentals unless subtracted.
fn pair_coincidence_prob(cfg: &ExperimentConfig, pairs: f64, eta: f64, model: &DetectorModel) -> f64 {
    let true_pairs = 0.5 * pairs * eta * eta;
    let s = singles_prob(pairs, eta, model);
    if cfg.measurement.subtract_accidentals { true_pairs } else { true_pairs + s * s }
}

#[derive(Serialize)]
struct PeakFit {
    peak: f64,
    background: f64,
    center: f64,
    fwhm: f64,
    fwhm_err: f64,
    residual: f64,
}

fn fit_lorentzian_peak(curve: &Curve) -> Result<PeakFit, RunError> {
    let xs = curve.xs();
    let ys = curve.counts();
    let sw: Vec<f64> = curve.points.iter().map(|p| 1.0 / p.stderr.max(1.0)).collect();
    let (imax, ymax) = ys.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &y)| if y > a.1 { (i, y) } else { a });
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let span = xs[xs.len() - 1] - xs[0];
    let model = |p: &[f64], x: f64| p[0] + p[1] / (1.0 + (2.0 * (x - p[2]) / p[3]).powi(2));
    let sol = levenberg_marquardt(
        |p| xs.iter().zip(&ys).zip(&sw).map(|((&x, &y), &s)| s * (model(p, x) - y)).collect(),
        &[ymin, ymax - ymin, xs[imax], span / 4.0],
        500,
    )
    .context("Lorentzian fit")?;
    let dof = (xs.len() - 4) as f64;
    let scale = (sol.cost / dof).max(1.0);
    let p = &sol.params;
    Ok(PeakFit {
        peak: p[1],
        background: p[0],
        center: p[2],
        fwhm: p[3].abs(),
        fwhm_err: sol.covariance.as_ref().map_or(f64::NAN, |c| (c[(3, 3)] * scale).max(0.0).sqrt()),
        residual: sol.cost,
    })
}

fn delay_scan(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let seed = seed_of(cfg)?;
    let eta = transmission(cfg)? * cfg.detector.efficiency;
    let model = cfg.detector.model();
    let xs = cfg.scan.grid(true);
    let rate = cfg.source.rep_rate_hz * cfg.measurement.integration_s;
    let means: Vec<f64> = xs
        .iter()
        .map(|&d| {
            let mut c = cfg.clone();
            c.source.delay_ps = d;
            pair_coincidence_prob(cfg, pairs_per_pulse(&c), eta, &model) * rate
        })
        .collect();
    let curve = Curve::sampled(&xs, &means, seed);
    let fit = fit_lorentzian_peak(&curve)?;
    let mut out = RunOutput::default();
    out.file("delay_scan.csv", curve.to_csv());
    out.file("fit.json", json(&fit));
    out.number("fwhm_ps", fit.fwhm, Some(fit.fwhm_err), "ps", "fit.json");
    out.number("center_ps", fit.center, None, "ps", "fit.json");
    out.number("peak_counts", fit.peak, None, "counts", "fit.json");
    Ok(out)
}

#[derive(Serialize)]
struct SlopeFit {
    coincidence_slope: f64,
    coincidence_slope_err: f64,
    singles_slope: f64,
    singles_slope_err: f64,
}

/// Slope of `log counts` against `log x`, each point weighted by its count.
fn log_log_slope(curve: &Curve) -> Result<(f64, f64), RunError> {
    let pts: Vec<_> = curve.points.iter().filter(|p| p.counts > 0.0 && p.x > 0.0).collect();
    if pts.len() < 3 {
        return Err(RunError::NonConvergence { context: "power-law fit".into(), detail: "fewer than 3 non-zero points".into() });
    }
    let design = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { 1.0 } else { pts[i].x.ln() });
    let y: Vec<f64> = pts.iter().map(|p| p.counts.ln()).collect();
    let w: Vec<f64> = pts.iter().map(|p| p.counts).collect();
    let (beta, inv, ssr) = weighted_linear(&design, &y, &w).context("power-law fit")?;
    let scale = (ssr / (pts.len() - 2).max(1) as f64).max(1.0);
    Ok((beta[1], (inv[(1, 1)] * scale).sqrt()))
}

fn power_scan(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let seed = seed_of(cfg)?;
    let eta = transmission(cfg)? * cfg.detector.efficiency;
    let model = cfg.detector.model();
    let xs = cfg.scan.grid(true);
    let rate = cfg.source.rep_rate_hz * cfg.measurement.integration_s;
    let pairs: Vec<f64> = xs
        .iter()
        .map(|&p| {
            let mut c = cfg.clone();
            c.source.p1_uw = p;
            pairs_per_pulse(&c)
        })
        .collect();
    let coinc: Vec<f64> = pairs.iter().map(|&p| pair_coincidence_prob(cfg, p, eta, &model) * rate).collect();
    let singles: Vec<f64> = pairs.iter().map(|&p| singles_prob(p, eta, &model) * rate).collect();
    let coinc = Curve::sampled(&xs, &coinc, seed);
    let singles = Curve::sampled(&xs, &singles, seed.wrapping_add(SINGLES_STREAMS));
    let (cs, cs_err) = log_log_slope(&coinc)?;
    let (ss, ss_err) = log_log_slope(&singles)?;
    let fit = SlopeFit { coincidence_slope: cs, coincidence_slope_err: cs_err, singles_slope: ss, singles_slope_err: ss_err };
    let mut out = RunOutput::default();
    out.file("coincidences.csv", coinc.to_csv());
    out.file("singles.csv", singles.to_csv());
    out.file("fit.json", json(&fit));
    out.number("coincidence_slope", cs, Some(cs_err), "", "fit.json");
    out.number("singles_slope", ss, Some(ss_err), "", "fit.json");
    out.notes.push(format!(
        "{} pumping: expected slope {}",
        if cfg.source.pumping == PumpMode::Dual { "dual" } else { "single" },
        if cfg.source.pumping == PumpMode::Dual { 1 } else { 2 }
    ));
    Ok(out)
}

#[derive(Serialize)]
struct HomReport {
    #[serde(flatten)]
    fit: DipFit,
    model_visibility: f64,
    accidental_counts: f64,
    net_visibility: f64,
}

fn hom(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let seed = seed_of(cfg)?;
    let eta = transmission(cfg)? * cfg.detector.efficiency;
    let model = cfg.detector.model();
    let pairs = pairs_per_pulse(cfg);
    let rate = cfg.source.rep_rate_hz * cfg.measurement.integration_s;
    let v = hom_visibility(&FockVector::number_state(1, 1, 2).context("pair state")?, cfg.noise.indistinguishability)
        .context("HOM visibility")?;
    let c_max = 0.5 * pairs * eta * eta * rate;
    let s = singles_prob(pairs, eta, &model);
    let acc = if cfg.measurement.subtract_accidentals { 0.0 } else { s * s * rate };
    let xs = cfg.scan.grid(true);
    let ideal = hom_scan(&xs, v, cfg.scan.envelope_fwhm_ps, c_max).context("HOM scan")?;
    let means: Vec<f64> = ideal.counts().iter().map(|c| c + acc).collect();
    let curve = Curve::sampled(&xs, &means, seed);
    let fit = fit_dip(&curve).context("HOM dip fit")?;
    let net = if fit.c_max > acc { (fit.c_max - fit.c_min) / (fit.c_max - acc) } else { fit.visibility };
    let report = HomReport { fit, model_visibility: v, accidental_counts: acc, net_visibility: net.clamp(0.0, 1.0) };
    let mut out = RunOutput::default();
    out.file("hom.csv", curve.to_csv());
    out.file("fit.json", json(&report));
    out.number("visibility", fit.visibility, Some(fit.visibility_err), "", "fit.json");
    out.number("net_visibility", report.net_visibility, Some(fit.visibility_err), "", "fit.json");
    out.number("dip_width_ps", fit.width, None, "ps", "fit.json");
    out.number("c_max", fit.c_max, None, "counts", "fit.json");
    Ok(out)
}

/// Builds the noisy pipeline for the tomography and fringe kinds.
fn state_pipeline(cfg: &ExperimentConfig) -> Result<(Pipeline, FockVector), RunError> {
    let eta = transmission(cfg)?;
    let detector = cfg.detector.model();
    let tree = cfg.tree.tree();
    if cfg.kind == Kind::Fringe1 {
        // CW reference: diagonal single photons, rate normalized at the detector
        let c = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let state = FockVector::from_terms(1, [(1, 0, c), (0, 1, c)]).context("single-photon state")?;
        let ideal = fixed_state_pipeline(&state, 1.0, 1.0, DetectorModel::ideal(), tree).context("CW pipeline")?;
        let noisy = apply_noise_model(&ideal, None, &crate::config::NoiseConfig { include_higher_order: false, ..cfg.noise })
            .context("noise model")?;
        return Ok((noisy, state));
    }
    let sq = squeeze(cfg)?;
    let emission = if cfg.kind == Kind::TomoFock {
        Emission::separated(sq, cfg.photons())
    } else {
        Emission::entangled(sq, cfg.photons())
    };
    let target = emission.target().context("post-selection")?;
    let ideal = ideal_pipeline(&emission, eta, detector, tree).context("source pipeline")?;
    let noisy = apply_noise_model(&ideal, Some(&emission), &cfg.noise).context("noise model")?;
    Ok((noisy, target))
}

#[derive(Serialize)]
struct SettingsDoc {
    thetas: Vec<f64>,
    condition_number: f64,
    settings: Vec<WavePlateSetting>,
}

fn tomography(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let seed = seed_of(cfg)?;
    let (pipeline, target) = state_pipeline(cfg)?;
    let model = MeasurementModel { photons: cfg.photons(), tree: cfg.tree.tree(), detector: cfg.detector.model() };
    let plan = default_settings(&model).context("tomography settings")?;
    let outcomes = model.outcomes();
    let detected = pipeline.detected_state().context("loss")?;
    let probs: Vec<Vec<f64>> = plan
        .settings
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let u = pipeline.transform(s.setting, seed, i as u64)?;
            pipeline.class_probs(&detected, &u, &outcomes)
        })
        .collect::<fockforge_core::Result<_>>()
        .context("forward model")?;
    let scale = match cfg.measurement.counts_per_setting {
        Some(n) => {
            let mean: f64 = probs.iter().map(|p| p.iter().sum::<f64>()).sum::<f64>() / probs.len() as f64;
            if !(mean > 0.0) {
                return Err(RunError::Numerical { context: "tomography".into(), source: Error::NoCounts });
            }
            n / mean
        }
        None => cfg.source.rep_rate_hz * cfg.measurement.integration_s,
    };
    let expected: Vec<CountRecord> = plan
        .settings
        .iter()
        .zip(&probs)
        .enumerate()
        .map(|(i, (s, p))| CountRecord {
            setting_index: i,
            setting: s.setting,
            counts: outcomes.iter().zip(p).map(|(c, p)| (*c, p * scale)).collect(),
            integration_s: cfg.measurement.integration_s,
        })
        .collect();
    let records = poisson_records(&expected, seed.wrapping_add(crate::pipeline::COUNT_STREAMS));
    let total: f64 = records.iter().map(|r| r.total()).sum();

    let options = MleOptions { max_iterations: cfg.measurement.max_iterations, ..MleOptions::default() };
    let context = format!("{} reconstruction", cfg.kind);
    let (result, estimate) = if cfg.measurement.bootstrap >= 2 {
        let (res, est) = fidelity_with_errorbars(&records, &model, &target, cfg.measurement.bootstrap, seed, &options).context(&context)?;
        (res, Some(est))
    } else {
        let mut res = mle_reconstruct(&records, &model, &options).context(&context)?;
        res.fidelity = Some(fidelity_to(&res.rho, &target).context("fidelity")?);
        (res, None)
    };
    if !result.converged() {
        return Err(RunError::NonConvergence {
            context,
            detail: format!("{:?} after {} iterations", result.termination, result.iterations),
        });
    }
    let fidelity = result.fidelity.expect("set above");

    let mut out = RunOutput::default();
    out.file("counts.csv", records_to_csv(&records));
    out.file(
        "settings.json",
        json(&SettingsDoc {
            thetas: plan.thetas.clone(),
            condition_number: plan.condition_number,
            settings: plan.settings.iter().map(|s| s.setting).collect(),
        }),
    );
    out.file("rho.json", result.to_json().context("result document")? + "\n");
    out.number("fidelity", fidelity, result.fidelity_std, "", "rho.json");
    out.number("log_likelihood", result.log_likelihood, None, "", "rho.json");
    out.number("iterations", result.iterations as f64, None, "", "rho.json");
    out.number("condition_number", plan.condition_number, None, "", "settings.json");
    out.number("total_counts", total, None, "counts", "counts.csv");
    out.number("purity", result.rho.purity(), None, "", "rho.json");
    if let Some(est) = estimate {
        out.file("bootstrap.json", json(&est));
        out.number("fidelity_bootstrap_mean", est.mean, Some(est.std), "", "bootstrap.json");
        out.number("bootstrap_failures", est.failures as f64, None, "", "bootstrap.json");
        if est.failures > 0 {
            out.notes.push(format!("{} of {} resampled reconstructions failed", est.failures, est.resamples));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct FringeReport {
    #[serde(flatten)]
    fit: FringeFit,
    pattern: String,
    theta: f64,
    model_visibility: f64,
}

fn fringe(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let seed = seed_of(cfg)?;
    let (pipeline, _) = state_pipeline(cfg)?;
    let class = match cfg.kind {
        Kind::Fringe1 => ClickClass::new(1, 0),
        Kind::Fringe2 => ClickClass::new(1, 1),
        _ => ClickClass::new(1, 3),
    };
    let rate = if cfg.kind == Kind::Fringe1 { cfg.measurement.cw_rate_hz } else { cfg.source.rep_rate_hz } * cfg.measurement.integration_s;
    let detected = pipeline.detected_state().context("loss")?;
    let xs = cfg.scan.grid(false);
    let means: Vec<f64> = xs
        .par_iter()
        .enumerate()
        .map(|(i, &phi)| {
            let u = pipeline.transform(WavePlateSetting::new(phi, cfg.scan.theta_rad), seed, i as u64)?;
            Ok(pipeline.class_probs(&detected, &u, &[class])?[0] * rate)
        })
        .collect::<fockforge_core::Result<_>>()
        .context("fringe model")?;
    let model_fit = fit_fringe(&Curve::expected(&xs, &means), FrequencySearch::Experiment).context("fringe fit")?;
    let curve = Curve::sampled(&xs, &means, seed.wrapping_add(crate::pipeline::COUNT_STREAMS));
    let fit = fit_fringe(&curve, FrequencySearch::Experiment).context("fringe fit")?;
    let report = FringeReport { fit, pattern: class.to_string(), theta: cfg.scan.theta_rad, model_visibility: model_fit.visibility };
    let mut out = RunOutput::default();
    out.file("fringe.csv", curve.to_csv());
    out.file("fit.json", json(&report));
    out.number("visibility", fit.visibility, Some(fit.visibility_err), "", "fit.json");
    out.number("frequency", fit.frequency, None, "cycles per 2pi", "fit.json");
    out.number("model_visibility", model_fit.visibility, None, "", "fit.json");
    out.number("peak_counts", fit.offset + fit.amplitude, None, "counts", "fit.json");
    Ok(out)
}

#[derive(Serialize)]
struct BrightnessDoc {
    #[serde(flatten)]
    report: fockforge_core::source::BrightnessReport,
    /// First-principles four-fold 1H&3V rate at the fringe maximum.
    model_four_fold_peak_hz: f64,
}

fn brightness(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let report = brightness_estimate(&cfg.source.pump(), &cfg.source.reference(), &cfg.losses.budget(), cfg.measurement.postprocessing_factor)
        .context("brightness")?;
    let mut peak_cfg = cfg.clone();
    peak_cfg.kind = Kind::Fringe4;
    peak_cfg.tree = crate::config::TreeConfig { h: 1, v: 3 };
    let (pipeline, _) = state_pipeline(&peak_cfg)?;
    let detected = pipeline.detected_state().context("loss")?;
    let peak = (0..16)
        .map(|i| {
            let u = pipeline.transform(WavePlateSetting::new(std::f64::consts::FRAC_PI_4 * i as f64 / 8.0, cfg.scan.theta_rad), 0, 0)?;
            Ok(pipeline.class_probs(&detected, &u, &[ClickClass::new(1, 3)])?[0])
        })
        .collect::<fockforge_core::Result<Vec<f64>>>()
        .context("four-fold model")?
        .into_iter()
        .fold(0.0, f64::max)
        * cfg.source.rep_rate_hz;
    let doc = BrightnessDoc { report, model_four_fold_peak_hz: peak };
    let mut out = RunOutput::default();
    out.file("brightness.json", json(&doc));
    out.number("pairs_per_pulse", report.pairs_per_pulse, None, "", "brightness.json");
    out.number("pair_generation_hz", report.pair_generation_hz, None, "Hz", "brightness.json");
    out.number("four_photon_per_pulse", report.four_photon_per_pulse, None, "", "brightness.json");
    out.number("four_photon_generation_hz", report.four_photon_generation_hz, None, "Hz", "brightness.json");
    out.number("four_fold_loss_db", report.four_fold_loss_db, None, "dB", "brightness.json");
    out.number("four_fold_detected_hz", report.four_fold_detected_hz, None, "Hz", "brightness.json");
    out.number("model_four_fold_peak_hz", peak, None, "Hz", "brightness.json");
    Ok(out)
}

#[derive(Serialize)]
struct BudgetDoc {
    components_db: BTreeMap<&'static str, f64>,
    component_sum_db: f64,
    stated_total_db: Option<f64>,
    effective_db: f64,
    transmissivity: f64,
    filtered_pulse_ps: f64,
}

fn budget(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let budget = cfg.losses.budget();
    let total = loss_budget_total(&budget).context("loss budget")?;
    let pulse = pulse_width_tbp(cfg.pulse.input_fwhm_ps, cfg.pulse.input_bw_nm, cfg.pulse.filter_bw_nm).context("pulse width")?;
    let doc = BudgetDoc {
        components_db: budget.components().into_iter().collect(),
        component_sum_db: total.component_sum_db,
        stated_total_db: budget.stated_total_db,
        effective_db: total.effective_db,
        transmissivity: total.transmissivity,
        filtered_pulse_ps: pulse,
    };
    let mut out = RunOutput::default();
    out.file("budget.json", json(&doc));
    out.number("component_sum_db", total.component_sum_db, None, "dB", "budget.json");
    out.number("effective_db", total.effective_db, None, "dB", "budget.json");
    out.number("transmissivity", total.transmissivity, None, "", "budget.json");
    out.number("filtered_pulse_ps", pulse, None, "ps", "budget.json");
    if budget.stated_total_db.is_some_and(|t| (t - total.component_sum_db).abs() > 1e-9) {
        out.notes.push(format!(
            "components sum to {} dB; the stated total of {} dB is used",
            total.component_sum_db, total.effective_db
        ));
    }
    Ok(out)
}
