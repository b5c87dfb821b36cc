//! State tomography of a single-spatial-mode `N`-photon polarization state.
//!
//! Each setting applies the gadget `U(φ, θ)`, splits H and V on a PBS and
//! records `N`-fold coincidence classes `(k clicks at H, N - k at V)`. With
//! threshold detectors behind splitter trees, the class probabilities are a
//! known linear mixture of the port photon-number probabilities, so every
//! recorded outcome corresponds to an effective measurement operator
//!
//! ```text
//! Π̃_{s,o} = Σ_j M[o][j] · L_s† |j><j| L_s
//! ```
//!
//! with `L_s` the lifted gadget and `M` the tree response. Counts are Poisson
//! with mean `A · T_s · Tr(Π̃_{s,o} ρ)`; the overall rate `A` is profiled out.
//!
//! Reconstruction maximizes that likelihood over `ρ = T†T / Tr(T†T)` with a
//! monotone L-BFGS ascent, starting from the maximally mixed state.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{fanout_click_probs, poisson_draw, stream, ClickClass, DetectionTree, DetectorModel};
use crate::error::{Error, Result};
use crate::fock::{lift_sector, Basis, DensityMatrix, FockVector, MatrixDocument};
use crate::polarization::{su2_from_angles, ModeTransform, WavePlateSetting};

/// How `N`-photon events are registered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub photons: usize,
    pub tree: DetectionTree,
    pub detector: DetectorModel,
}

impl MeasurementModel {
    /// Perfect photon-number-resolving detection on both ports.
    pub fn number_resolving(photons: usize) -> Self {
        Self {
            photons,
            tree: DetectionTree { h: 1, v: 1 },
            detector: DetectorModel { efficiency: 1.0, dark_click_prob: 0.0, threshold: false },
        }
    }

    /// Outcome classes an `N`-fold coincidence can show.
    pub fn outcomes(&self) -> Vec<ClickClass> {
        let n = self.photons;
        (0..=n)
            .map(|k| ClickClass::new(k, n - k))
            .filter(|c| {
                !self.detector.threshold || (c.h <= self.tree.h && c.v <= self.tree.v)
            })
            .collect()
    }

    /// `M[o][j]`: probability of outcome `o` given `j` photons at the H port
    /// and `N - j` at the V port.
    pub fn response(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.photons;
        let fan_h: Vec<Vec<f64>> = (0..=n).map(|j| fanout_click_probs(j, self.tree.h, &self.detector)).collect::<Result<_>>()?;
        let fan_v: Vec<Vec<f64>> = (0..=n).map(|j| fanout_click_probs(j, self.tree.v, &self.detector)).collect::<Result<_>>()?;
        let at = |v: &Vec<f64>, i: usize| v.get(i).copied().unwrap_or(0.0);
        Ok(self
            .outcomes()
            .iter()
            .map(|o| (0..=n).map(|j| at(&fan_h[j], o.h) * at(&fan_v[n - j], o.v)).collect())
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        if self.photons == 0 {
            return Err(Error::InvalidParameter("tomography needs at least one photon".into()));
        }
        if self.outcomes().is_empty() {
            return Err(Error::IncompatiblePattern(format!(
                "no {}-fold class fits {} H and {} V detectors",
                self.photons, self.tree.h, self.tree.v
            )));
        }
        Ok(())
    }
}

/// One gadget configuration and the outcome classes recorded with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomoSetting {
    pub setting: WavePlateSetting,
    pub outcomes: Vec<ClickClass>,
}

/// `(N+1)²` settings on the grid `φ_j = 2πj/(N+1)` × `θ_k`, with the `θ_k`
/// tuned for the condition number of the forward map.
#[derive(Clone, Debug, PartialEq)]
pub struct SettingsPlan {
    pub settings: Vec<TomoSetting>,
    pub thetas: Vec<f64>,
    pub condition_number: f64,
}

/// Hermitian basis: `E_ii`, then `E_ij + E_ji` and `-i E_ij + i E_ji` for
/// `i < j`.
fn hermitian_basis(d: usize) -> Vec<DMatrix<Complex64>> {
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        let mut m = DMatrix::zeros(d, d);
        m[(i, i)] = Complex64::new(1.0, 0.0);
        out.push(m);
    }
    for i in 0..d {
        for j in i + 1..d {
            let mut re = DMatrix::zeros(d, d);
            re[(i, j)] = Complex64::new(1.0, 0.0);
            re[(j, i)] = Complex64::new(1.0, 0.0);
            out.push(re);
            let mut im = DMatrix::zeros(d, d);
            im[(i, j)] = Complex64::new(0.0, -1.0);
            im[(j, i)] = Complex64::new(0.0, 1.0);
            out.push(im);
        }
    }
    out
}

/// `Re Tr(a b)` without forming the product.
fn trace_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let d = a.nrows();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// Effective operators `Π̃_o` for one gadget transform.
fn effective_operators(u: &ModeTransform, model: &MeasurementModel, response: &[Vec<f64>]) -> Result<Vec<DMatrix<Complex64>>> {
    let n = model.photons;
    let lift = lift_sector(u.checked()?, n);
    let projectors: Vec<DMatrix<Complex64>> = (0..=n)
        .map(|j| {
            let row = lift.row(j).transpose(); // L_jk as a column over k
            let v = row.map(|z| z.conj()); // L† |j>
            &v * v.adjoint()
        })
        .collect();
    Ok(response
        .iter()
        .map(|weights| {
            let mut op = DMatrix::zeros(n + 1, n + 1);
            for (j, w) in weights.iter().enumerate() {
                if *w != 0.0 {
                    op += &projectors[j] * Complex64::new(*w, 0.0);
                }
            }
            op
        })
        .collect())
}

/// Rows of the linear map from Hermitian-basis coordinates to recorded
/// outcome probabilities.
fn design_matrix(operators: &[DMatrix<Complex64>], d: usize) -> DMatrix<f64> {
    let basis = hermitian_basis(d);
    DMatrix::from_fn(operators.len(), d * d, |r, c| trace_product(&operators[r], &basis[c]))
}

fn rank_and_condition(design: &DMatrix<f64>) -> (usize, f64) {
    let sv = design.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<f64> = sv.iter().cloned().filter(|s| *s > 1e-10 * max).collect();
    let min = kept.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if kept.len() == design.ncols() { max / min } else { f64::INFINITY };
    (kept.len(), cond)
}

fn grid_settings(photons: usize, thetas: &[f64], outcomes: &[ClickClass]) -> Vec<TomoSetting> {
    let n1 = photons + 1;
    let mut out = Vec::with_capacity(n1 * thetas.len());
    for j in 0..n1 {
        let phi = TAU * j as f64 / n1 as f64;
        for &theta in thetas {
            out.push(TomoSetting { setting: WavePlateSetting::new(phi, theta), outcomes: outcomes.to_vec() });
        }
    }
    out
}

/// Condition number of the forward map of a list of settings.
pub fn forward_condition(settings: &[WavePlateSetting], model: &MeasurementModel) -> Result<(usize, f64)> {
    let response = model.response()?;
    let mut ops = Vec::new();
    for s in settings {
        ops.extend(effective_operators(&su2_from_angles(*s), model, &response)?);
    }
    Ok(rank_and_condition(&design_matrix(&ops, model.photons + 1)))
}

/// Default informationally complete settings for `model.photons` photons.
pub fn default_settings(model: &MeasurementModel) -> Result<SettingsPlan> {
    model.validate()?;
    let n = model.photons;
    let n1 = n + 1;
    let outcomes = model.outcomes();
    let cond_of = |thetas: &[f64]| -> f64 {
        let s: Vec<WavePlateSetting> = grid_settings(n, thetas, &outcomes).iter().map(|t| t.setting).collect();
        forward_condition(&s, model).map(|r| r.1).unwrap_or(f64::INFINITY)
    };
    let mut thetas: Vec<f64> = (0..n1).map(|k| (k as f64 + 0.5) * FRAC_PI_2 / n1 as f64).collect();
    let mut best = cond_of(&thetas);
    let mut step = FRAC_PI_2 / (4.0 * n1 as f64);
    while step > 1e-3 {
        let mut improved = false;
        for k in 0..n1 {
            for dir in [1.0, -1.0] {
                let mut trial = thetas.clone();
                trial[k] = (trial[k] + dir * step).clamp(1e-3, FRAC_PI_2 - 1e-3);
                let c = cond_of(&trial);
                if c < best * (1.0 - 1e-9) {
                    best = c;
                    thetas = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    if !best.is_finite() {
        let s: Vec<WavePlateSetting> = grid_settings(n, &thetas, &outcomes).iter().map(|t| t.setting).collect();
        let (rank, _) = forward_condition(&s, model)?;
        return Err(Error::RankDeficient { rank, needed: n1 * n1 });
    }
    log::info!("{n}-photon tomography: {} settings, condition number {best:.3}", n1 * n1);
    Ok(SettingsPlan { settings: grid_settings(n, &thetas, &outcomes), thetas, condition_number: best })
}

/// Outcome probabilities for `rho` at one gadget transform, conditioned on
/// an `N`-fold coincidence (so they sum to 1), in `model.outcomes()` order.
pub fn forward_probs_with(rho: &DensityMatrix, u: &ModeTransform, model: &MeasurementModel) -> Result<Vec<f64>> {
    if rho.basis() != (Basis::Sector { photons: model.photons }) {
        return Err(Error::DimensionMismatch(format!(
            "state on {:?}, measurement expects the {}-photon sector",
            rho.basis(),
            model.photons
        )));
    }
    let ops = effective_operators(u, model, &model.response()?)?;
    let raw: Vec<f64> = ops.iter().map(|op| trace_product(op, rho.entries()).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyProjection(model.photons));
    }
    Ok(raw.iter().map(|p| p / total).collect())
}

pub fn forward_probs(rho: &DensityMatrix, setting: &TomoSetting, model: &MeasurementModel) -> Result<Vec<f64>> {
    forward_probs_with(rho, &su2_from_angles(setting.setting), model)
}

/// Counts observed at one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub setting_index: usize,
    pub setting: WavePlateSetting,
    /// Counts per outcome class. Non-negative; usually integers, but
    /// expected (noise-free) values are accepted.
    pub counts: Vec<(ClickClass, f64)>,
    pub integration_s: f64,
}

impl CountRecord {
    pub fn total(&self) -> f64 {
        self.counts.iter().map(|(_, n)| n).sum()
    }
}

/// Label used in count files, e.g. `1H3V`.
pub struct OutcomeLabel(pub ClickClass);

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}H{}V", self.0.h, self.0.v)
    }
}

impl FromStr for OutcomeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("outcome label {s:?} is not of the form <k>H<m>V"));
        let (h, rest) = s.split_once('H').ok_or_else(bad)?;
        let v = rest.strip_suffix('V').ok_or_else(bad)?;
        Ok(Self(ClickClass::new(h.parse().map_err(|_| bad())?, v.parse().map_err(|_| bad())?)))
    }
}

/// CSV with columns `setting_index,phi,theta,outcome_label,counts,integration_s`.
pub fn records_to_csv(records: &[CountRecord]) -> String {
    let mut s = String::from("setting_index,phi,theta,outcome_label,counts,integration_s\n");
    for r in records {
        for (class, n) in &r.counts {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.setting_index,
                r.setting.phi(),
                r.setting.theta(),
                OutcomeLabel(*class),
                n,
                r.integration_s
            ));
        }
    }
    s
}

pub fn records_from_csv(text: &str) -> Result<Vec<CountRecord>> {
    let mut lines = text.lines();
    let header = "setting_index,phi,theta,outcome_label,counts,integration_s";
    if lines.next().map(str::trim) != Some(header) {
        return Err(Error::InvalidParameter(format!("count CSV must start with header {header}")));
    }
    let mut out: Vec<CountRecord> = Vec::new();
    for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::InvalidParameter(format!("count CSV row {}: {what}", row + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let index: usize = f[0].parse().map_err(|_| bad("setting_index"))?;
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        let setting = WavePlateSetting::new(num(f[1], "phi")?, num(f[2], "theta")?);
        let class = f[3].parse::<OutcomeLabel>()?.0;
        let counts = num(f[4], "counts")?;
        let integration_s = num(f[5], "integration_s")?;
        match out.last_mut() {
            Some(r) if r.setting_index == index => r.counts.push((class, counts)),
            _ => out.push(CountRecord { setting_index: index, setting, counts: vec![(class, counts)], integration_s }),
        }
    }
    Ok(out)
}

/// One row of the likelihood: an effective operator, its count and the
/// setting's integration time.
struct Row {
    op: DMatrix<Complex64>,
    count: f64,
    exposure: f64,
}

fn build_rows(records: &[CountRecord], model: &MeasurementModel) -> Result<Vec<Row>> {
    model.validate()?;
    if records.is_empty() {
        return Err(Error::NoCounts);
    }
    let outcomes = model.outcomes();
    let response = model.response()?;
    let mut rows = Vec::new();
    for r in records {
        if !(r.integration_s > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "setting {}: integration time must be > 0",
                r.setting_index
            )));
        }
        let ops = effective_operators(&su2_from_angles(r.setting), model, &response)?;
        for (class, n) in &r.counts {
            if !(*n >= 0.0 && n.is_finite()) {
                return Err(Error::InvalidParameter(format!("setting {}: count {n} is invalid", r.setting_index)));
            }
            let o = outcomes.iter().position(|c| c == class).ok_or_else(|| {
                Error::IncompatiblePattern(format!("{class} for a {}-photon measurement", model.photons))
            })?;
            rows.push(Row { op: ops[o].clone(), count: *n, exposure: r.integration_s });
        }
    }
    if rows.iter().all(|r| r.count == 0.0) {
        return Err(Error::NoCounts);
    }
    let d = model.photons + 1;
    let ops: Vec<DMatrix<Complex64>> = rows.iter().map(|r| r.op.clone()).collect();
    let (rank, _) = rank_and_condition(&design_matrix(&ops, d));
    if rank < d * d {
        return Err(Error::RankDeficient { rank, needed: d * d });
    }
    Ok(rows)
}

/// Unconstrained least-squares estimate, normalized to unit trace. The
/// result is Hermitian but may have negative eigenvalues.
pub fn linear_inversion(records: &[CountRecord], model: &MeasurementModel) -> Result<DMatrix<Complex64>> {
    let rows = build_rows(records, model)?;
    let d = model.photons + 1;
    let ops: Vec<DMatrix<Complex64>> = rows.iter().map(|r| r.op.clone()).collect();
    let design = design_matrix(&ops, d);
    let rates = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.count / r.exposure));
    let svd = design.svd(true, true);
    let coords = svd.solve(&rates, 1e-12).map_err(|e| Error::FitFailed { reason: e.to_string(), residual: f64::NAN })?;
    let basis = hermitian_basis(d);
    let mut x = DMatrix::zeros(d, d);
    for (c, b) in coords.iter().zip(&basis) {
        x += b * Complex64::new(*c, 0.0);
    }
    let tr = x.trace().re;
    if tr.abs() < f64::MIN_POSITIVE {
        return Err(Error::NoCounts);
    }
    Ok(x / Complex64::new(tr, 0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Stop when the relative log-likelihood gain per iteration stays below
    /// this on two consecutive iterations (and the gradient is negligible).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// L-BFGS memory.
    pub memory: usize,
    /// Keep the per-iteration log-likelihood trace in the result.
    pub keep_history: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 100_000, memory: 12, keep_history: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    /// No ascent step could be found and the gradient is negligible.
    Stationary,
    /// No ascent step could be found but the gradient is not small.
    Stalled,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub rho: DensityMatrix,
    /// Poisson log-likelihood with the rate profiled out (no `log n!`).
    pub log_likelihood: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Per-iteration log-likelihood when requested.
    pub history: Vec<f64>,
    pub fidelity: Option<f64>,
    pub fidelity_std: Option<f64>,
}

impl ReconstructionResult {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Tolerance | Termination::Stationary)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ResultDocument {
            rho: self.rho.to_document(),
            log_likelihood: self.log_likelihood,
            iterations: self.iterations,
            converged: self.converged(),
            termination: self.termination,
            fidelity: self.fidelity,
            fidelity_std: self.fidelity_std,
        })?)
    }
}

#[derive(Serialize)]
struct ResultDocument {
    rho: MatrixDocument,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
    termination: Termination,
    fidelity: Option<f64>,
    fidelity_std: Option<f64>,
}

/// Likelihood in terms of the unnormalized factor `T` (flattened as real
/// and imaginary parts, row-major).
struct Likelihood<'a> {
    rows: &'a [Row],
    d: usize,
    total: f64,
}

impl Likelihood<'_> {
    fn unpack(&self, x: &[f64]) -> DMatrix<Complex64> {
        let d = self.d;
        DMatrix::from_fn(d, d, |i, j| Complex64::new(x[2 * (i * d + j)], x[2 * (i * d + j) + 1]))
    }

    fn rho(&self, t: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let m = t.adjoint() * t;
        let tr = m.trace().re;
        m / Complex64::new(tr, 0.0)
    }

    /// Log-likelihood at `rho`; `-inf` if an observed outcome has zero
    /// probability.
    fn value_at(&self, rho: &DMatrix<Complex64>) -> (f64, Vec<f64>) {
        let probs: Vec<f64> = self.rows.iter().map(|r| trace_product(&r.op, rho)).collect();
        let expected: f64 = self.rows.iter().zip(&probs).map(|(r, p)| r.exposure * p).sum();
        if !(expected > 0.0) {
            return (f64::NEG_INFINITY, probs);
        }
        let scale = self.total / expected;
        let mut ll = 0.0;
        for (r, p) in self.rows.iter().zip(&probs) {
            if r.count > 0.0 {
                if *p <= 0.0 {
                    return (f64::NEG_INFINITY, probs);
                }
                ll += r.count * (scale * r.exposure * p).ln();
            }
        }
        (ll - self.total, probs)
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.value_at(&self.rho(&self.unpack(x))).0
    }

    /// Value and gradient with respect to `x`.
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        let t = self.unpack(x);
        let norm = (t.adjoint() * &t).trace().re;
        let rho = self.rho(&t);
        let (ll, probs) = self.value_at(&rho);
        let expected: f64 = self.rows.iter().zip(&probs).map(|(r, p)| r.exposure * p).sum();
        let d = self.d;
        let mut g = DMatrix::<Complex64>::zeros(d, d);
        for (r, p) in self.rows.iter().zip(&probs) {
            let mut w = -self.total * r.exposure / expected;
            if r.count > 0.0 && *p > 0.0 {
                w += r.count / p;
            }
            if w != 0.0 {
                g += &r.op * Complex64::new(w, 0.0);
            }
        }
        let shift = trace_product(&g, &rho);
        for i in 0..d {
            g[(i, i)] -= Complex64::new(shift, 0.0);
        }
        // dL/dX + i dL/dY = (2 / Tr T†T) T G'
        let grad_t = &t * &g * Complex64::new(2.0 / norm, 0.0);
        let mut out = vec![0.0; 2 * d * d];
        for i in 0..d {
            for j in 0..d {
                out[2 * (i * d + j)] = grad_t[(i, j)].re;
                out[2 * (i * d + j) + 1] = grad_t[(i, j)].im;
            }
        }
        let stationarity = (&g * &rho).iter().fold(0.0, |m: f64, z| m.max(z.norm())) / self.total;
        (ll, out, stationarity)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximum-likelihood density matrix on the `N`-photon sector.
pub fn mle_reconstruct(records: &[CountRecord], model: &MeasurementModel, options: &MleOptions) -> Result<ReconstructionResult> {
    let rows = build_rows(records, model)?;
    let d = model.photons + 1;
    let total: f64 = rows.iter().map(|r| r.count).sum();
    let lik = Likelihood { rows: &rows, d, total };

    // T = I / sqrt(d): the maximally mixed state
    let mut x = vec![0.0; 2 * d * d];
    for i in 0..d {
        x[2 * (i * d + i)] = 1.0 / (d as f64).sqrt();
    }
    let (mut f, mut g, mut stationarity) = lik.value_grad(&x);
    let mut history = Vec::new();
    if options.keep_history {
        history.push(f);
    }
    let mut mem_s: Vec<Vec<f64>> = Vec::new();
    let mut mem_y: Vec<Vec<f64>> = Vec::new();
    let mut small_steps = 0;
    let mut iterations = 0;
    let termination = loop {
        if iterations >= options.max_iterations {
            break Termination::MaxIterations;
        }
        if stationarity < 1e-13 {
            break Termination::Stationary;
        }
        iterations += 1;

        // two-loop recursion on the ascent problem (maximize f)
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem_s.len());
        for (s, y) in mem_s.iter().zip(&mem_y).rev() {
            let rho_k = 1.0 / dot(y, s);
            let a = rho_k * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push((a, rho_k));
        }
        let gamma = match (mem_s.last(), mem_y.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / dot(&g, &g).sqrt().max(1e-300),
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y), (a, rho_k)) in mem_s.iter().zip(&mem_y).zip(alphas.into_iter().rev()) {
            let b = rho_k * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        // q approximates -H⁻¹g for the concave objective: an ascent direction
        let mut dir = q;
        let mut slope = dot(&g, &dir);
        if !(slope > 0.0) {
            mem_s.clear();
            mem_y.clear();
            let scale = 1.0 / dot(&g, &g).sqrt().max(1e-300);
            dir = g.iter().map(|v| v * scale).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let ft = lik.value(&trial);
            if ft.is_finite() && ft >= f + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((mut trial, ft)) = accepted else {
            if !mem_s.is_empty() {
                // retry along the plain gradient before giving up
                mem_s.clear();
                mem_y.clear();
                iterations -= 1;
                continue;
            }
            break if stationarity < 1e-8 { Termination::Stationary } else { Termination::Stalled };
        };
        debug_assert!(ft >= f, "log-likelihood decreased: {f} -> {ft}");

        // the objective is scale invariant in T; keep |T| near 1
        let norm2: f64 = trial.iter().map(|v| v * v).sum();
        let rescaled = !(0.25..=4.0).contains(&norm2);
        if rescaled {
            let s = 1.0 / norm2.sqrt();
            trial.iter_mut().for_each(|v| *v *= s);
        }
        let (fn_, gn, st) = lik.value_grad(&trial);
        if rescaled {
            mem_s.clear();
            mem_y.clear();
        } else {
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            // ascent problem: y = -(g_new - g_old)
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| b - a).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                mem_s.push(s);
                mem_y.push(y);
                if mem_s.len() > options.memory {
                    mem_s.remove(0);
                    mem_y.remove(0);
                }
            }
        }
        let gain = (fn_ - f) / f.abs().max(1.0);
        x = trial;
        f = fn_;
        g = gn;
        stationarity = st;
        if options.keep_history {
            history.push(f);
        }
        if gain < options.tolerance {
            small_steps += 1;
            // a long run of negligible gains means f is flat to rounding
            if (small_steps >= 2 && stationarity < 1e-9) || small_steps >= 50 {
                break Termination::Tolerance;
            }
        } else {
            small_steps = 0;
        }
    };
    if termination == Termination::MaxIterations || termination == Termination::Stalled {
        log::warn!("MLE stopped without converging ({termination:?}) after {iterations} iterations");
    }

    let t = lik.unpack(&x);
    let rho = lik.rho(&t);
    let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let rho = DensityMatrix::from_parts_unchecked(Basis::Sector { photons: model.photons }, rho)?;
    rho.validate()?;
    Ok(ReconstructionResult {
        rho,
        log_likelihood: f,
        iterations,
        termination,
        history,
        fidelity: None,
        fidelity_std: None,
    })
}

/// `Tr(ρ |ψ><ψ|)` against the target's `N`-photon component (normalized).
pub fn fidelity_to(rho: &DensityMatrix, target: &FockVector) -> Result<f64> {
    let Basis::Sector { photons } = rho.basis() else {
        return Ok(rho.expectation_pure(&target.normalize()?));
    };
    let pure = DensityMatrix::pure_in_sector(target, photons)?;
    crate::fock::fidelity_trace(rho, &pure)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    /// Fidelity of the reconstruction from the recorded data.
    pub point: f64,
    /// Mean over Poisson resamples.
    pub mean: f64,
    /// Standard deviation over Poisson resamples.
    pub std: f64,
    pub resamples: usize,
    /// Resamples whose reconstruction failed or did not converge.
    pub failures: usize,
}

/// Poisson Monte Carlo error bar on the fidelity: every count is redrawn
/// with its observed value as the mean and the reconstruction repeated.
/// Resample `i` uses stream `i` of `seed`.
pub fn fidelity_with_errorbars(
    records: &[CountRecord],
    model: &MeasurementModel,
    target: &FockVector,
    resamples: usize,
    seed: u64,
    options: &MleOptions,
) -> Result<(ReconstructionResult, FidelityEstimate)> {
    if resamples < 2 {
        return Err(Error::InvalidParameter("need at least 2 resamples".into()));
    }
    let mut base = mle_reconstruct(records, model, options)?;
    let point = fidelity_to(&base.rho, target)?;
    let opts = MleOptions { keep_history: false, ..*options };
    let outcomes: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let redrawn: Vec<CountRecord> = records
                .iter()
                .map(|r| CountRecord {
                    counts: r.counts.iter().map(|(c, n)| (*c, poisson_draw(*n, &mut rng) as f64)).collect(),
                    ..r.clone()
                })
                .collect();
            match mle_reconstruct(&redrawn, model, &opts) {
                Ok(res) if res.converged() => fidelity_to(&res.rho, target).ok(),
                _ => None,
            }
        })
        .collect();
    let values: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let failures = resamples - values.len();
    if values.len() < 2 {
        return Err(Error::FitFailed {
            reason: format!("{failures} of {resamples} resampled reconstructions failed"),
            residual: f64::NAN,
        });
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    base.fidelity = Some(point);
    base.fidelity_std = Some(var.sqrt());
    Ok((base, FidelityEstimate { point, mean, std: var.sqrt(), resamples, failures }))
}

/// Reconstruction of a Fock-state-dominated sector (single-direction
/// pumping); the same machinery as [`mle_reconstruct`].
pub fn fock_state_tomography(records: &[CountRecord], model: &MeasurementModel, options: &MleOptions) -> Result<ReconstructionResult> {
    if records.is_empty() {
        return Err(Error::NoCounts);
    }
    mle_reconstruct(records, model, options)
}

/// Expected counts for `rho` at each setting: `scale · T_s · Tr(Π̃ ρ)`,
/// with the per-setting transform supplied by `transform_for` (nominal or
/// perturbed gadgets).
pub fn expected_records<F>(
    rho: &DensityMatrix,
    settings: &[TomoSetting],
    model: &MeasurementModel,
    scale: f64,
    integration_s: f64,
    transform_for: F,
) -> Result<Vec<CountRecord>>
where
    F: Fn(usize, &TomoSetting) -> ModeTransform,
{
    let response = model.response()?;
    let outcomes = model.outcomes();
    settings
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ops = effective_operators(&transform_for(i, s), model, &response)?;
            let counts = s
                .outcomes
                .iter()
                .map(|c| {
                    let o = outcomes.iter().position(|x| x == c).ok_or_else(|| {
                        Error::IncompatiblePattern(format!("{c} for a {}-photon measurement", model.photons))
                    })?;
                    Ok((*c, scale * integration_s * trace_product(&ops[o], rho.entries()).max(0.0)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CountRecord { setting_index: i, setting: s.setting, counts, integration_s })
        })
        .collect()
}

/// Poisson draw of every count, stream `i` of `seed` for record `i`.
pub fn poisson_records(expected: &[CountRecord], seed: u64) -> Vec<CountRecord> {
    expected
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = stream(seed, i as u64);
            CountRecord {
                counts: r.counts.iter().map(|(c, n)| (*c, poisson_draw(*n, &mut rng) as f64)).collect(),
                ..r.clone()
            }
        })
        .collect()
}
