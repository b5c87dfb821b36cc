//! Two-mode bosonic Fock space for the H and V polarization modes of one
//! spatial mode.
//!
//! Basis labels are `(n_H, n_V)`. On a truncated space with `cutoff = c` the
//! labels run over `0..=c` for each mode and are stored row-major, i.e. index
//! `n_H * (c + 1) + n_V`. A fixed-photon-number sector with `N` photons is
//! ordered by ascending `n_H`: `(0, N), (1, N - 1), ..., (N, 0)`, which is the
//! same relative order the labels have in any truncated space.
//!
//! Every operation that can push amplitude past the cutoff returns the
//! discarded probability mass alongside its result.

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::ModeTransform;

/// Default photons per mode; enough for the eight-photon state.
pub const DEFAULT_CUTOFF: usize = 8;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const EIGEN_TOL: f64 = 1e-10;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    H,
    V,
}

/// Labelling of the rows/columns of a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Basis {
    /// All `(n_H, n_V)` with both entries `<= cutoff`, row-major.
    Truncated { cutoff: usize },
    /// All `(n_H, n_V)` with `n_H + n_V = photons`, ascending `n_H`.
    Sector { photons: usize },
}

impl Basis {
    pub fn dim(&self) -> usize {
        match *self {
            Basis::Truncated { cutoff } => (cutoff + 1) * (cutoff + 1),
            Basis::Sector { photons } => photons + 1,
        }
    }

    pub fn label(&self, index: usize) -> (usize, usize) {
        match *self {
            Basis::Truncated { cutoff } => (index / (cutoff + 1), index % (cutoff + 1)),
            Basis::Sector { photons } => (index, photons - index),
        }
    }

    pub fn index(&self, nh: usize, nv: usize) -> Option<usize> {
        match *self {
            Basis::Truncated { cutoff } => {
                (nh <= cutoff && nv <= cutoff).then(|| nh * (cutoff + 1) + nv)
            }
            Basis::Sector { photons } => (nh + nv == photons).then_some(nh),
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.dim()).map(move |i| self.label(i))
    }

    /// Largest photon number either mode can hold.
    pub fn max_per_mode(&self) -> usize {
        match *self {
            Basis::Truncated { cutoff } => cutoff,
            Basis::Sector { photons } => photons,
        }
    }
}

/// A value together with the probability mass discarded at the cutoff while
/// producing it.
#[derive(Clone, Debug)]
pub struct Truncated<T> {
    pub value: T,
    pub truncated_mass: f64,
}

/// Pure state of the two polarization modes on a truncated number basis.
#[derive(Clone, Debug, PartialEq)]
pub struct FockVector {
    cutoff: usize,
    amps: Vec<Complex64>,
}

impl FockVector {
    pub fn zeros(cutoff: usize) -> Self {
        let dim = (cutoff + 1) * (cutoff + 1);
        Self { cutoff, amps: vec![ZERO; dim] }
    }

    pub fn vacuum(cutoff: usize) -> Self {
        let mut v = Self::zeros(cutoff);
        v.amps[0] = ONE;
        v
    }

    /// `|n_H, n_V>`.
    pub fn number_state(nh: usize, nv: usize, cutoff: usize) -> Result<Self> {
        let mut v = Self::zeros(cutoff);
        let i = v
            .basis()
            .index(nh, nv)
            .ok_or(Error::LabelOutOfRange { nh, nv, cutoff })?;
        v.amps[i] = ONE;
        Ok(v)
    }

    /// Builds a state from `(n_H, n_V, amplitude)` triples. Not normalized.
    pub fn from_terms<I>(cutoff: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, Complex64)>,
    {
        let mut v = Self::zeros(cutoff);
        for (nh, nv, a) in terms {
            let i = v
                .basis()
                .index(nh, nv)
                .ok_or(Error::LabelOutOfRange { nh, nv, cutoff })?;
            v.amps[i] += a;
        }
        Ok(v)
    }

    pub fn from_amplitudes(cutoff: usize, amps: Vec<Complex64>) -> Result<Self> {
        let dim = (cutoff + 1) * (cutoff + 1);
        if amps.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for cutoff {cutoff} (expected {dim})",
                amps.len()
            )));
        }
        Ok(Self { cutoff, amps })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn basis(&self) -> Basis {
        Basis::Truncated { cutoff: self.cutoff }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    /// Amplitude on `|n_H, n_V>`; zero for labels past the cutoff.
    pub fn amplitude(&self, nh: usize, nv: usize) -> Complex64 {
        self.basis().index(nh, nv).map_or(ZERO, |i| self.amps[i])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            cutoff: self.cutoff,
            amps: self.amps.iter().map(|a| a * factor).collect(),
        }
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &FockVector) -> Result<Complex64> {
        if self.cutoff != other.cutoff {
            return Err(Error::DimensionMismatch(format!(
                "cutoffs {} and {}",
                self.cutoff, other.cutoff
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Applies a creation operator to one mode. Components already at the
    /// cutoff are dropped; their would-be norm is reported.
    pub fn raise(&self, mode: Mode) -> Truncated<FockVector> {
        let basis = self.basis();
        let mut out = Self::zeros(self.cutoff);
        let mut lost = 0.0;
        for (i, a) in self.amps.iter().enumerate() {
            if *a == ZERO {
                continue;
            }
            let (nh, nv) = basis.label(i);
            let (th, tv, n) = match mode {
                Mode::H => (nh + 1, nv, nh),
                Mode::V => (nh, nv + 1, nv),
            };
            let amp = a * ((n + 1) as f64).sqrt();
            match basis.index(th, tv) {
                Some(j) => out.amps[j] += amp,
                None => lost += amp.norm_sqr(),
            }
        }
        Truncated { value: out, truncated_mass: lost }
    }

    /// Applies an annihilation operator to one mode.
    pub fn lower(&self, mode: Mode) -> FockVector {
        let basis = self.basis();
        let mut out = Self::zeros(self.cutoff);
        for (i, a) in self.amps.iter().enumerate() {
            let (nh, nv) = basis.label(i);
            let (n, target) = match mode {
                Mode::H if nh > 0 => (nh, basis.index(nh - 1, nv)),
                Mode::V if nv > 0 => (nv, basis.index(nh, nv - 1)),
                _ => continue,
            };
            if let Some(j) = target {
                out.amps[j] += a * (n as f64).sqrt();
            }
        }
        out
    }

    /// Component with exactly `photons` total photons (not renormalized).
    pub fn sector_projection(&self, photons: usize) -> FockVector {
        let basis = self.basis();
        let mut out = Self::zeros(self.cutoff);
        for (i, a) in self.amps.iter().enumerate() {
            let (nh, nv) = basis.label(i);
            if nh + nv == photons {
                out.amps[i] = *a;
            }
        }
        out
    }

    /// Amplitudes of one sector in sector ordering. Labels past the cutoff
    /// are zero.
    pub fn sector_amplitudes(&self, photons: usize) -> DVector<Complex64> {
        DVector::from_fn(photons + 1, |k, _| self.amplitude(k, photons - k))
    }

    /// Probability of each total photon number `0..=2 * cutoff`.
    pub fn photon_number_distribution(&self) -> Vec<f64> {
        let basis = self.basis();
        let mut p = vec![0.0; 2 * self.cutoff + 1];
        for (i, a) in self.amps.iter().enumerate() {
            let (nh, nv) = basis.label(i);
            p[nh + nv] += a.norm_sqr();
        }
        p
    }

    pub fn mean_photons(&self, mode: Mode) -> f64 {
        let basis = self.basis();
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let (nh, nv) = basis.label(i);
                let n = if mode == Mode::H { nh } else { nv };
                n as f64 * a.norm_sqr()
            })
            .sum()
    }

    /// Induced action of a polarization transform: every creation operator
    /// is replaced by its image under `u`. Photon number is conserved per
    /// sector; amplitude mapped onto labels past the cutoff is dropped and
    /// reported.
    pub fn transform(&self, u: &ModeTransform) -> Result<Truncated<FockVector>> {
        let m = u.checked()?;
        let c = self.cutoff;
        let mut out = Self::zeros(c);
        let mut lost = 0.0;
        for photons in 0..=2 * c {
            let input = self.sector_amplitudes(photons);
            if input.iter().all(|a| *a == ZERO) {
                continue;
            }
            let mapped = lift_sector(m, photons) * input;
            for (k, a) in mapped.iter().enumerate() {
                match out.basis().index(k, photons - k) {
                    Some(j) => out.amps[j] = *a,
                    None => lost += a.norm_sqr(),
                }
            }
        }
        Ok(Truncated { value: out, truncated_mass: lost })
    }

    pub fn to_density(&self) -> DensityMatrix {
        let v = DVector::from_column_slice(&self.amps);
        DensityMatrix {
            basis: self.basis(),
            entries: &v * v.adjoint(),
        }
    }

    pub fn to_document(&self) -> MatrixDocument {
        let side = self.cutoff + 1;
        let grid = |f: fn(&Complex64) -> f64| {
            (0..side)
                .map(|nh| (0..side).map(|nv| f(&self.amps[nh * side + nv])).collect())
                .collect()
        };
        MatrixDocument {
            cutoff: self.cutoff,
            basis: BASIS_TAG.to_string(),
            sector: None,
            re: grid(|a| a.re),
            im: grid(|a| a.im),
        }
    }

    pub fn from_document(doc: &MatrixDocument) -> Result<Self> {
        let side = doc.cutoff + 1;
        doc.check_shape(side, side)?;
        if doc.sector.is_some() {
            return Err(Error::DimensionMismatch("state vectors live on a truncated basis".into()));
        }
        let amps = (0..side * side)
            .map(|i| Complex64::new(doc.re[i / side][i % side], doc.im[i / side][i % side]))
            .collect();
        Ok(Self { cutoff: doc.cutoff, amps })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// The `(N+1) x (N+1)` unitary a 2x2 mode transform induces on the
/// `N`-photon sector, in sector ordering.
///
/// Column convention: `a†_j -> sum_i u[(i, j)] a†_i`, so a single photon's
/// amplitude vector transforms as `v -> u v` and lifting is a homomorphism.
pub fn lift_sector(u: &Matrix2<Complex64>, photons: usize) -> DMatrix<Complex64> {
    let n = photons;
    let mut out = DMatrix::zeros(n + 1, n + 1);
    for k in 0..=n {
        // coefficients of a†_H^m a†_V^(n-m) in the image of a†_H^k a†_V^(n-k)
        let mut poly = vec![ZERO; n + 1];
        poly[0] = ONE;
        let mut degree = 0;
        for step in 0..n {
            let (ch, cv) = if step < k {
                (u[(0, 0)], u[(1, 0)])
            } else {
                (u[(0, 1)], u[(1, 1)])
            };
            for m in (0..=degree + 1).rev() {
                let from_h = if m > 0 { poly[m - 1] * ch } else { ZERO };
                let from_v = if m <= degree { poly[m] * cv } else { ZERO };
                poly[m] = from_h + from_v;
            }
            degree += 1;
        }
        let input_norm = (factorial(k) * factorial(n - k)).sqrt();
        for (m, c) in poly.iter().enumerate() {
            let output_norm = (factorial(m) * factorial(n - m)).sqrt();
            out[(m, k)] = c * (output_norm / input_norm);
        }
    }
    out
}

/// Per-mode binomial photon loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossChannel {
    pub eta_h: f64,
    pub eta_v: f64,
}

impl LossChannel {
    pub fn new(eta_h: f64, eta_v: f64) -> Result<Self> {
        let ch = Self { eta_h, eta_v };
        ch.validate()?;
        Ok(ch)
    }

    pub fn symmetric(eta: f64) -> Result<Self> {
        Self::new(eta, eta)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta_H", self.eta_h), ("eta_V", self.eta_v)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {eta} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Kraus amplitudes `k[n][l] = sqrt(C(n, l) eta^(n-l) (1-eta)^l)` for losing
/// `l` of `n` photons.
fn loss_amplitudes(eta: f64, max_n: usize) -> Vec<Vec<f64>> {
    (0..=max_n)
        .map(|n| {
            (0..=n)
                .map(|l| {
                    (binomial(n, l) * eta.powi((n - l) as i32) * (1.0 - eta).powi(l as i32)).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Density operator on a truncated space or a single photon-number sector.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    basis: Basis,
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validated constructor: Hermitian, unit trace, positive semidefinite.
    pub fn new(basis: Basis, entries: DMatrix<Complex64>) -> Result<Self> {
        let rho = Self::from_parts_unchecked(basis, entries)?;
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn from_parts_unchecked(basis: Basis, entries: DMatrix<Complex64>) -> Result<Self> {
        let d = basis.dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for a basis of dimension {d}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { basis, entries })
    }

    pub fn pure(state: &FockVector) -> Result<Self> {
        Ok(state.normalize()?.to_density())
    }

    /// Pure state restricted to one sector and renormalized.
    pub fn pure_in_sector(state: &FockVector, photons: usize) -> Result<Self> {
        let v = state.sector_amplitudes(photons);
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::EmptyProjection(photons));
        }
        let v = v / Complex64::new(n, 0.0);
        Ok(Self {
            basis: Basis::Sector { photons },
            entries: &v * v.adjoint(),
        })
    }

    pub fn maximally_mixed(basis: Basis) -> Self {
        let d = basis.dim();
        Self {
            basis,
            entries: DMatrix::identity(d, d) * Complex64::new(1.0 / d as f64, 0.0),
        }
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<Complex64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.entries * &self.entries).trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.entries - self.entries.adjoint())
            .iter()
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.entries + self.entries.adjoint()) * Complex64::new(0.5, 0.0);
        let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidDensity(format!("not Hermitian (deviation {herm:.3e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} differs from 1")));
        }
        let min = self.eigenvalues()[0];
        if min < -EIGEN_TOL {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    /// Diagonal entry for `|n_H, n_V>`; zero if the label is not in the basis.
    pub fn population(&self, nh: usize, nv: usize) -> f64 {
        self.basis.index(nh, nv).map_or(0.0, |i| self.entries[(i, i)].re)
    }

    pub fn mean_photons(&self, mode: Mode) -> f64 {
        self.basis
            .labels()
            .enumerate()
            .map(|(i, (nh, nv))| {
                let n = if mode == Mode::H { nh } else { nv };
                n as f64 * self.entries[(i, i)].re
            })
            .sum()
    }

    /// Photon-number block of a truncated-basis state, in sector ordering.
    pub fn sector_block(&self, photons: usize) -> DMatrix<Complex64> {
        let idx: Vec<Option<usize>> = (0..=photons)
            .map(|k| self.basis.index(k, photons - k))
            .collect();
        DMatrix::from_fn(photons + 1, photons + 1, |a, b| match (idx[a], idx[b]) {
            (Some(i), Some(j)) => self.entries[(i, j)],
            _ => ZERO,
        })
    }

    /// Embeds into a truncated space. Sector states need `cutoff >= photons`.
    pub fn to_truncated(&self, cutoff: usize) -> Result<Self> {
        if let Basis::Truncated { cutoff: c } = self.basis {
            if c == cutoff {
                return Ok(self.clone());
            }
        }
        let target = Basis::Truncated { cutoff };
        let mut map = Vec::with_capacity(self.dim());
        for (nh, nv) in self.basis.labels() {
            map.push(target.index(nh, nv));
        }
        let mut out = DMatrix::zeros(target.dim(), target.dim());
        for (a, ia) in map.iter().enumerate() {
            for (b, ib) in map.iter().enumerate() {
                match (ia, ib) {
                    (Some(i), Some(j)) => out[(*i, *j)] = self.entries[(a, b)],
                    _ if self.entries[(a, b)] != ZERO => {
                        let (nh, nv) = self.basis.label(if ia.is_none() { a } else { b });
                        return Err(Error::LabelOutOfRange { nh, nv, cutoff });
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { basis: target, entries: out })
    }

    /// `U rho U†` with `U` the induced unitary of `u`. On a truncated space
    /// the population mapped past the cutoff is dropped and reported.
    pub fn transform(&self, u: &ModeTransform) -> Result<Truncated<DensityMatrix>> {
        let m = u.checked()?;
        match self.basis {
            Basis::Sector { photons } => {
                let lift = lift_sector(m, photons);
                let entries = &lift * &self.entries * lift.adjoint();
                Ok(Truncated {
                    value: Self { basis: self.basis, entries },
                    truncated_mass: 0.0,
                })
            }
            Basis::Truncated { cutoff } => {
                // block-diagonal unitary restricted to the kept labels
                let d = self.dim();
                let mut w = DMatrix::zeros(d, d);
                let mut outside: Vec<DMatrix<Complex64>> = Vec::new();
                for photons in 0..=2 * cutoff {
                    let lift = lift_sector(m, photons);
                    let kept: Vec<(usize, Option<usize>)> = (0..=photons)
                        .map(|k| (k, self.basis.index(k, photons - k)))
                        .collect();
                    let mut leak_rows = Vec::new();
                    for &(out_k, out_i) in &kept {
                        match out_i {
                            Some(i) => {
                                for &(in_k, in_j) in &kept {
                                    if let Some(j) = in_j {
                                        w[(i, j)] = lift[(out_k, in_k)];
                                    }
                                }
                            }
                            None => leak_rows.push(out_k),
                        }
                    }
                    if !leak_rows.is_empty() {
                        let cols: Vec<Option<usize>> = kept.iter().map(|&(_, j)| j).collect();
                        outside.push(DMatrix::from_fn(leak_rows.len(), d, |r, c| {
                            cols.iter()
                                .position(|j| *j == Some(c))
                                .map_or(ZERO, |in_k| lift[(leak_rows[r], in_k)])
                        }));
                    }
                }
                let entries = &w * &self.entries * w.adjoint();
                let lost = outside
                    .iter()
                    .map(|x| (x * &self.entries * x.adjoint()).trace().re)
                    .sum();
                Ok(Truncated {
                    value: Self { basis: self.basis, entries },
                    truncated_mass: lost,
                })
            }
        }
    }

    /// Independent binomial loss on each mode (Kraus sum). Sector states are
    /// first embedded in the truncated space with `cutoff = photons`.
    pub fn apply_loss(&self, channel: &LossChannel) -> Result<DensityMatrix> {
        channel.validate()?;
        let rho = match self.basis {
            Basis::Sector { photons } => self.to_truncated(photons)?,
            Basis::Truncated { .. } => self.clone(),
        };
        let c = rho.basis.max_per_mode();
        let kh = loss_amplitudes(channel.eta_h, c);
        let kv = loss_amplitudes(channel.eta_v, c);
        let basis = rho.basis;
        let d = rho.dim();
        let mut out = DMatrix::zeros(d, d);
        for i in 0..d {
            let (mh, mv) = basis.label(i);
            for j in 0..d {
                let (ph, pv) = basis.label(j);
                let mut acc = ZERO;
                for lh in 0..=(c - mh.max(ph)) {
                    let fh = kh[mh + lh][lh] * kh[ph + lh][lh];
                    if fh == 0.0 {
                        continue;
                    }
                    for lv in 0..=(c - mv.max(pv)) {
                        let fv = kv[mv + lv][lv] * kv[pv + lv][lv];
                        if fv == 0.0 {
                            continue;
                        }
                        let a = basis.index(mh + lh, mv + lv).expect("label within cutoff");
                        let b = basis.index(ph + lh, pv + lv).expect("label within cutoff");
                        acc += rho.entries[(a, b)] * (fh * fv);
                    }
                }
                out[(i, j)] = acc;
            }
        }
        Ok(Self { basis, entries: out })
    }

    /// Multiplies every off-diagonal entry by `overlap`, leaving populations
    /// untouched. `overlap = 1` keeps full coherence.
    pub fn scale_coherences(&self, overlap: f64) -> Result<DensityMatrix> {
        if !(0.0..=1.0).contains(&overlap) {
            return Err(Error::InvalidParameter(format!(
                "coherence overlap {overlap} is outside [0, 1]"
            )));
        }
        let mut entries = self.entries.clone();
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    entries[(i, j)] *= overlap;
                }
            }
        }
        Ok(Self { basis: self.basis, entries })
    }

    /// `<psi|rho|psi>` for a (normalized) state, matching labels by value so
    /// a sector matrix can be compared against a truncated-space vector.
    pub fn expectation_pure(&self, target: &FockVector) -> f64 {
        let v: Vec<Complex64> = self
            .basis
            .labels()
            .map(|(nh, nv)| target.amplitude(nh, nv))
            .collect();
        let v = DVector::from_vec(v);
        (v.adjoint() * &self.entries * &v)[(0, 0)].re
    }

    pub fn to_document(&self) -> MatrixDocument {
        let d = self.dim();
        let grid = |f: fn(&Complex64) -> f64| {
            (0..d)
                .map(|i| (0..d).map(|j| f(&self.entries[(i, j)])).collect())
                .collect()
        };
        let (cutoff, sector) = match self.basis {
            Basis::Truncated { cutoff } => (cutoff, None),
            Basis::Sector { photons } => (photons, Some(photons)),
        };
        MatrixDocument {
            cutoff,
            basis: BASIS_TAG.to_string(),
            sector,
            re: grid(|z| z.re),
            im: grid(|z| z.im),
        }
    }

    /// Reads a document without enforcing physicality, so that estimates
    /// such as linear-inversion output can be stored too.
    pub fn from_document(doc: &MatrixDocument) -> Result<Self> {
        let basis = match doc.sector {
            Some(photons) => Basis::Sector { photons },
            None => Basis::Truncated { cutoff: doc.cutoff },
        };
        let d = basis.dim();
        doc.check_shape(d, d)?;
        let entries = DMatrix::from_fn(d, d, |i, j| Complex64::new(doc.re[i][j], doc.im[i][j]));
        Ok(Self { basis, entries })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

/// `Tr(rho_exp rho_th)`.
pub fn fidelity_trace(rho_exp: &DensityMatrix, rho_th: &DensityMatrix) -> Result<f64> {
    if rho_exp.basis != rho_th.basis {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            rho_exp.basis, rho_th.basis
        )));
    }
    Ok((rho_exp.entries() * rho_th.entries()).trace().re)
}

/// Trace distance `½ ||a - b||_1` of two Hermitian matrices.
pub fn trace_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let diff = a - b;
    let herm = (&diff + diff.adjoint()) * Complex64::new(0.5, 0.0);
    0.5 * herm.symmetric_eigenvalues().iter().map(|x| x.abs()).sum::<f64>()
}

const BASIS_TAG: &str = "nH,nV row-major";

/// JSON layout shared by state vectors and density matrices.
///
/// For a vector, `re[n_H][n_V]` holds the amplitude of `|n_H, n_V>`. For a
/// matrix, `re[i][j]` is the entry between basis indices `i` and `j`; a
/// `sector` field marks a fixed-photon-number basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixDocument {
    pub cutoff: usize,
    pub basis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<usize>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixDocument {
    fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.basis != BASIS_TAG {
            return Err(Error::DimensionMismatch(format!("unknown basis tag {:?}", self.basis)));
        }
        let ok = |g: &Vec<Vec<f64>>| g.len() == rows && g.iter().all(|r| r.len() == cols);
        if !ok(&self.re) || !ok(&self.im) {
            return Err(Error::DimensionMismatch(format!(
                "document grid is not {rows}x{cols}"
            )));
        }
        Ok(())
    }
}
