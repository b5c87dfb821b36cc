//! Experiment configuration files (TOML).
//!
//! Every key is optional apart from `kind`; missing values take the
//! defaults for that kind. Angles are radians unless the key carries an
//! explicit unit suffix (`theta_deg = 45`). Validation reports every
//! offending field at once.

use std::f64::consts::{FRAC_PI_4, TAU};
use std::fmt;

use serde::Serialize;
use toml::{Table, Value};

use fockforge_core::detection::{DetectionTree, DetectorModel};
use fockforge_core::source::{BrightnessReference, LossBudget, PumpConfig, PumpMode, FOUR_FOLD_POSTPROCESSING};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    DelayScan,
    PowerScan,
    Hom,
    Tomo2,
    Tomo4,
    TomoFock,
    Fringe1,
    Fringe2,
    Fringe4,
    Brightness,
    Budget,
}

impl Kind {
    pub const ALL: [Kind; 11] = [
        Kind::DelayScan,
        Kind::PowerScan,
        Kind::Hom,
        Kind::Tomo2,
        Kind::Tomo4,
        Kind::TomoFock,
        Kind::Fringe1,
        Kind::Fringe2,
        Kind::Fringe4,
        Kind::Brightness,
        Kind::Budget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::DelayScan => "delay_scan",
            Kind::PowerScan => "power_scan",
            Kind::Hom => "hom",
            Kind::Tomo2 => "tomo2",
            Kind::Tomo4 => "tomo4",
            Kind::TomoFock => "tomo_fock",
            Kind::Fringe1 => "fringe1",
            Kind::Fringe2 => "fringe2",
            Kind::Fringe4 => "fringe4",
            Kind::Brightness => "brightness",
            Kind::Budget => "budget",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Kind::DelayScan => "two-fold coincidences against the delay between the pump pulses",
            Kind::PowerScan => "singles and coincidences against the power of one pump",
            Kind::Hom => "Hong-Ou-Mandel dip of a separated photon pair",
            Kind::Tomo2 => "MLE tomography of the two-photon entangled state (9 settings)",
            Kind::Tomo4 => "MLE tomography of the four-photon entangled state (25 settings)",
            Kind::TomoFock => "MLE tomography of the four-photon Fock state from single-direction pumping",
            Kind::Fringe1 => "single-photon phase fringe (CW reference)",
            Kind::Fringe2 => "two-fold coincidence fringe of the two-photon state",
            Kind::Fringe4 => "four-fold 1H&3V fringe of the four-photon state",
            Kind::Brightness => "pair and four-photon rates scaled from the reference brightness",
            Kind::Budget => "loss budget total and filtered pulse width",
        }
    }

    pub fn parse(name: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Kinds that draw random numbers and therefore need a seed.
    pub fn samples(self) -> bool {
        !matches!(self, Kind::Brightness | Kind::Budget)
    }

    pub fn is_tomography(self) -> bool {
        matches!(self, Kind::Tomo2 | Kind::Tomo4 | Kind::TomoFock)
    }

    pub fn is_fringe(self) -> bool {
        matches!(self, Kind::Fringe1 | Kind::Fringe2 | Kind::Fringe4)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SourceConfig {
    pub p1_uw: f64,
    pub p2_uw: f64,
    pub rep_rate_hz: f64,
    pub delay_ps: f64,
    pub pulse_fwhm_ps: f64,
    pub reference_power_uw: f64,
    pub reference_pairs_per_pulse: f64,
    /// Overrides the squeeze parameter derived from the pump.
    pub r: Option<f64>,
    pub pumping: PumpMode,
}

impl SourceConfig {
    pub fn pump(&self) -> PumpConfig {
        PumpConfig {
            p1: self.p1_uw,
            p2: if self.pumping == PumpMode::Single { self.p1_uw } else { self.p2_uw },
            rep_rate: self.rep_rate_hz,
            delay: self.delay_ps,
            pulse_fwhm: self.pulse_fwhm_ps,
        }
    }

    pub fn reference(&self) -> BrightnessReference {
        BrightnessReference { power_uw: self.reference_power_uw, pairs_per_pulse: self.reference_pairs_per_pulse }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseConfig {
    pub waveplate_angle_jitter_rad: f64,
    /// Overlap of the interfering photons; multiplies every coherence.
    /// 1 keeps full interference.
    pub indistinguishability: f64,
    pub include_higher_order: bool,
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self { waveplate_angle_jitter_rad: 0.0, indistinguishability: 1.0, include_higher_order: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub window_ns: f64,
    pub threshold: bool,
}

impl DetectorConfig {
    pub fn model(&self) -> DetectorModel {
        DetectorModel {
            efficiency: self.efficiency,
            dark_click_prob: 1.0 - (-self.dark_rate_hz * self.window_ns * 1e-9).exp(),
            threshold: self.threshold,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TreeConfig {
    pub h: usize,
    pub v: usize,
}

impl TreeConfig {
    pub fn tree(&self) -> DetectionTree {
        DetectionTree { h: self.h, v: self.v }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossConfig {
    pub waveguide_db: f64,
    pub coupler_db: f64,
    pub manipulation_db: f64,
    pub filters_db: f64,
    pub detector_db: f64,
    pub stated_total_db: f64,
    /// Use `stated_total_db` instead of the component sum.
    pub use_stated_total: bool,
}

impl LossConfig {
    pub fn budget(&self) -> LossBudget {
        LossBudget {
            waveguide_db: self.waveguide_db,
            coupler_db: self.coupler_db,
            manipulation_db: self.manipulation_db,
            filters_db: self.filters_db,
            detector_db: self.detector_db,
            stated_total_db: self.use_stated_total.then_some(self.stated_total_db),
        }
    }
}

/// Scan grid. `start`/`stop` are in ps (delay, hom), µW (power) or radians
/// (fringes); the stop point is excluded for fringes so that a full period
/// is sampled evenly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanConfig {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub theta_rad: f64,
    pub envelope_fwhm_ps: f64,
}

impl ScanConfig {
    pub fn grid(&self, include_stop: bool) -> Vec<f64> {
        let n = self.points;
        let denom = if include_stop { (n - 1).max(1) } else { n } as f64;
        (0..n).map(|i| self.start + (self.stop - self.start) * i as f64 / denom).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeasurementConfig {
    /// Per scan point or per tomography setting, s.
    pub integration_s: f64,
    /// Scale tomography counts to this mean total per setting instead of
    /// the physical rate.
    pub counts_per_setting: Option<f64>,
    pub bootstrap: usize,
    pub subtract_accidentals: bool,
    pub max_iterations: usize,
    pub postprocessing_factor: f64,
    /// Detected rate of the CW reference at the fringe maximum, Hz.
    pub cw_rate_hz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PulseConfig {
    pub input_fwhm_ps: f64,
    pub input_bw_nm: f64,
    pub filter_bw_nm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: Option<u64>,
    pub output: Option<String>,
    pub source: SourceConfig,
    pub noise: NoiseConfig,
    pub detector: DetectorConfig,
    pub tree: TreeConfig,
    pub losses: LossConfig,
    pub scan: ScanConfig,
    pub measurement: MeasurementConfig,
    pub pulse: PulseConfig,
}

impl ExperimentConfig {
    /// Defaults for `kind`, following the operating points of the measured
    /// silicon setup.
    pub fn defaults(kind: Kind) -> Self {
        let power = match kind {
            Kind::Tomo4 | Kind::TomoFock => 400.0,
            Kind::Fringe4 | Kind::Brightness => 250.0,
            _ => 80.0,
        };
        let four = matches!(kind, Kind::Tomo4 | Kind::TomoFock | Kind::Fringe4);
        let source = SourceConfig {
            p1_uw: power,
            p2_uw: power,
            rep_rate_hz: 1e8,
            delay_ps: 0.0,
            pulse_fwhm_ps: 23.0,
            reference_power_uw: 80.0,
            reference_pairs_per_pulse: 0.002,
            r: None,
            pumping: if matches!(kind, Kind::TomoFock | Kind::Hom) { PumpMode::Single } else { PumpMode::Dual },
        };
        let detector = DetectorConfig { efficiency: 0.85, dark_rate_hz: 100.0, window_ns: if four { 1.0 } else { 0.8 }, threshold: true };
        let tree = match kind {
            Kind::Tomo2 => TreeConfig { h: 2, v: 2 },
            Kind::Tomo4 | Kind::TomoFock => TreeConfig { h: 4, v: 4 },
            Kind::Fringe1 => TreeConfig { h: 1, v: 0 },
            Kind::Fringe4 => TreeConfig { h: 1, v: 3 },
            _ => TreeConfig { h: 1, v: 1 },
        };
        let scan = match kind {
            Kind::DelayScan | Kind::Hom => ScanConfig { start: -60.0, stop: 60.0, points: 41, theta_rad: FRAC_PI_4, envelope_fwhm_ps: 23.0 },
            Kind::PowerScan => ScanConfig { start: 20.0, stop: 160.0, points: 8, theta_rad: FRAC_PI_4, envelope_fwhm_ps: 23.0 },
            _ => ScanConfig {
                start: 0.0,
                stop: TAU,
                points: if kind == Kind::Fringe4 { 48 } else { 36 },
                theta_rad: FRAC_PI_4,
                envelope_fwhm_ps: 23.0,
            },
        };
        let integration_s = match kind {
            Kind::Fringe4 | Kind::Tomo4 | Kind::TomoFock => 600.0,
            Kind::Tomo2 => 5.0,
            _ => 10.0,
        };
        Self {
            kind,
            seed: None,
            output: None,
            source,
            noise: NoiseConfig::none(),
            detector,
            tree,
            losses: LossConfig {
                waveguide_db: 1.0,
                coupler_db: 5.0,
                manipulation_db: 4.3,
                filters_db: 2.0,
                detector_db: 0.7,
                stated_total_db: 12.0,
                use_stated_total: true,
            },
            scan,
            measurement: MeasurementConfig {
                integration_s,
                counts_per_setting: None,
                bootstrap: if kind.is_tomography() { 50 } else { 0 },
                subtract_accidentals: false,
                max_iterations: 100_000,
                postprocessing_factor: FOUR_FOLD_POSTPROCESSING,
                cw_rate_hz: 2e4,
            },
            pulse: PulseConfig { input_fwhm_ps: 0.090, input_bw_nm: 80.0, filter_bw_nm: 0.4 },
        }
    }

    pub fn photons(&self) -> usize {
        match self.kind {
            Kind::Tomo2 | Kind::Fringe2 | Kind::Hom => 2,
            Kind::Tomo4 | Kind::TomoFock | Kind::Fringe4 => 4,
            Kind::Fringe1 => 1,
            _ => 2,
        }
    }
}

/// All problems found in a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for p in &self.problems {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Reads typed fields out of one TOML table, recording problems instead
/// of stopping at the first.
struct Section<'a> {
    name: &'static str,
    table: Table,
    problems: &'a mut Vec<String>,
}

impl<'a> Section<'a> {
    fn new(root: &mut Table, name: &'static str, problems: &'a mut Vec<String>) -> Self {
        let table = match root.remove(name) {
            None => Table::new(),
            Some(Value::Table(t)) => t,
            Some(other) => {
                problems.push(format!("{name}: expected a table, found {}", other.type_str()));
                Table::new()
            }
        };
        Self { name, table, problems }
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn number(&mut self, key: &str, target: &mut f64) -> bool {
        match self.table.remove(key) {
            None => false,
            Some(Value::Float(x)) => {
                *target = x;
                true
            }
            Some(Value::Integer(i)) => {
                *target = i as f64;
                true
            }
            Some(other) => {
                let p = format!("{}: expected a number, found {}", self.path(key), other.type_str());
                self.problems.push(p);
                false
            }
        }
    }

    fn count(&mut self, key: &str, target: &mut usize) {
        match self.table.remove(key) {
            None => {}
            Some(Value::Integer(i)) if i >= 0 => *target = i as usize,
            Some(other) => {
                let p = format!("{}: expected a non-negative integer, found {}", self.path(key), other);
                self.problems.push(p);
            }
        }
    }

    fn flag(&mut self, key: &str, target: &mut bool) {
        match self.table.remove(key) {
            None => {}
            Some(Value::Boolean(b)) => *target = b,
            Some(other) => {
                let p = format!("{}: expected true or false, found {}", self.path(key), other.type_str());
                self.problems.push(p);
            }
        }
    }

    /// Angle given as `<base>`, `<base>_rad` or `<base>_deg`; at most one.
    fn angle(&mut self, base: &str, target: &mut f64) {
        let mut found = Vec::new();
        for (suffix, scale) in [("", 1.0), ("_rad", 1.0), ("_deg", std::f64::consts::PI / 180.0)] {
            let key = format!("{base}{suffix}");
            let mut v = 0.0;
            if self.number(&key, &mut v) {
                found.push((key, v * scale));
            }
        }
        match found.len() {
            0 => {}
            1 => *target = found[0].1,
            _ => {
                let keys: Vec<String> = found.iter().map(|(k, _)| self.path(k)).collect();
                self.problems.push(format!("{}: give the angle once, not as {}", self.path(base), keys.join(" and ")));
            }
        }
    }

    fn check(&mut self, key: &str, ok: bool, msg: &str) {
        if !ok {
            let p = format!("{}: {msg}", self.path(key));
            self.problems.push(p);
        }
    }

    fn finish(self) {
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        for k in keys {
            self.problems.push(format!("{}.{k}: unknown field", self.name));
        }
    }
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Parses and validates a configuration file's text.
pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_with_seed(text, None)
}

/// As [`parse`], with `seed` (when given) replacing the file's seed before
/// validation.
pub fn parse_with_seed(text: &str, seed: Option<u64>) -> Result<ExperimentConfig, ConfigError> {
    let mut root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        problems: vec![format!("TOML syntax: {}", e.message())],
    })?;
    let mut problems = Vec::new();

    let kind = match root.remove("kind") {
        Some(Value::String(s)) => match Kind::parse(&s) {
            Some(k) => k,
            None => {
                let names: Vec<&str> = Kind::ALL.iter().map(|k| k.name()).collect();
                return Err(ConfigError { problems: vec![format!("kind: unknown kind {s:?} (expected one of {})", names.join(", "))] });
            }
        },
        Some(other) => return Err(ConfigError { problems: vec![format!("kind: expected a string, found {}", other.type_str())] }),
        None => return Err(ConfigError { problems: vec!["kind: missing required field".into()] }),
    };
    let mut cfg = ExperimentConfig::defaults(kind);

    match root.remove("seed") {
        None => {}
        Some(Value::Integer(i)) if i >= 0 => cfg.seed = Some(i as u64),
        Some(other) => problems.push(format!("seed: expected a non-negative integer, found {other}")),
    }
    match root.remove("output") {
        None => {}
        Some(Value::String(s)) => cfg.output = Some(s),
        Some(other) => problems.push(format!("output: expected a path string, found {}", other.type_str())),
    }

    {
        let s = &mut cfg.source;
        let mut sec = Section::new(&mut root, "source", &mut problems);
        sec.number("p1_uw", &mut s.p1_uw);
        sec.number("p2_uw", &mut s.p2_uw);
        sec.number("rep_rate_hz", &mut s.rep_rate_hz);
        sec.number("delay_ps", &mut s.delay_ps);
        sec.number("pulse_fwhm_ps", &mut s.pulse_fwhm_ps);
        sec.number("reference_power_uw", &mut s.reference_power_uw);
        sec.number("reference_pairs_per_pulse", &mut s.reference_pairs_per_pulse);
        let mut r = f64::NAN;
        if sec.number("r", &mut r) {
            s.r = Some(r);
            sec.check("r", r >= 0.0 && r.is_finite(), "must be >= 0");
        }
        match sec.table.remove("pumping") {
            None => {}
            Some(Value::String(p)) if p == "dual" => s.pumping = PumpMode::Dual,
            Some(Value::String(p)) if p == "single" => s.pumping = PumpMode::Single,
            Some(other) => {
                let p = format!("source.pumping: expected \"dual\" or \"single\", found {other}");
                sec.problems.push(p);
            }
        }
        sec.check("p1_uw", s.p1_uw >= 0.0, "must be >= 0");
        sec.check("p2_uw", s.p2_uw >= 0.0, "must be >= 0");
        sec.check("rep_rate_hz", s.rep_rate_hz > 0.0, "must be > 0");
        sec.check("pulse_fwhm_ps", s.pulse_fwhm_ps > 0.0, "must be > 0");
        sec.check("reference_power_uw", s.reference_power_uw > 0.0, "must be > 0");
        sec.check("reference_pairs_per_pulse", s.reference_pairs_per_pulse >= 0.0, "must be >= 0");
        sec.finish();
    }
    {
        let n = &mut cfg.noise;
        let mut sec = Section::new(&mut root, "noise", &mut problems);
        sec.angle("waveplate_angle_jitter", &mut n.waveplate_angle_jitter_rad);
        let mut overlap = n.indistinguishability;
        let a = sec.number("indistinguishability", &mut overlap);
        let b = sec.number("distinguishability", &mut overlap);
        if a && b {
            sec.problems.push("noise.indistinguishability: also given as noise.distinguishability".into());
        }
        n.indistinguishability = overlap;
        sec.flag("include_higher_order", &mut n.include_higher_order);
        sec.check("waveplate_angle_jitter", n.waveplate_angle_jitter_rad >= 0.0, "must be >= 0");
        sec.check("indistinguishability", in_unit(n.indistinguishability), "must be in [0, 1]");
        sec.finish();
    }
    {
        let d = &mut cfg.detector;
        let mut sec = Section::new(&mut root, "detector", &mut problems);
        sec.number("efficiency", &mut d.efficiency);
        sec.number("dark_rate_hz", &mut d.dark_rate_hz);
        sec.number("window_ns", &mut d.window_ns);
        sec.flag("threshold", &mut d.threshold);
        sec.check("efficiency", in_unit(d.efficiency), "must be in [0, 1]");
        sec.check("dark_rate_hz", d.dark_rate_hz >= 0.0, "must be >= 0");
        sec.check("window_ns", d.window_ns > 0.0, "must be > 0");
        sec.finish();
    }
    {
        let t = &mut cfg.tree;
        let mut sec = Section::new(&mut root, "tree", &mut problems);
        sec.count("h", &mut t.h);
        sec.count("v", &mut t.v);
        sec.check("h", t.h <= 16, "at most 16 detectors per port");
        sec.check("v", t.v <= 16, "at most 16 detectors per port");
        sec.check("h", t.h + t.v > 0, "the tree needs at least one detector");
        sec.finish();
    }
    {
        let l = &mut cfg.losses;
        let mut sec = Section::new(&mut root, "losses", &mut problems);
        for (key, field) in [
            ("waveguide_db", &mut l.waveguide_db),
            ("coupler_db", &mut l.coupler_db),
            ("manipulation_db", &mut l.manipulation_db),
            ("filters_db", &mut l.filters_db),
            ("detector_db", &mut l.detector_db),
            ("stated_total_db", &mut l.stated_total_db),
        ] {
            sec.number(key, field);
            let ok = *field >= 0.0;
            sec.check(key, ok, "must be >= 0");
        }
        sec.flag("use_stated_total", &mut l.use_stated_total);
        sec.finish();
    }
    {
        let s = &mut cfg.scan;
        let mut sec = Section::new(&mut root, "scan", &mut problems);
        if kind.is_fringe() {
            sec.angle("start", &mut s.start);
            sec.angle("stop", &mut s.stop);
        } else {
            sec.number("start", &mut s.start);
            sec.number("stop", &mut s.stop);
        }
        sec.count("points", &mut s.points);
        sec.angle("theta", &mut s.theta_rad);
        sec.number("envelope_fwhm_ps", &mut s.envelope_fwhm_ps);
        let scanned = matches!(kind, Kind::DelayScan | Kind::PowerScan | Kind::Hom) || kind.is_fringe();
        if scanned {
            sec.check("points", s.points >= 8, "need at least 8 points for the fit");
            sec.check("stop", s.stop > s.start, "must exceed scan.start");
        }
        if kind == Kind::PowerScan {
            sec.check("start", s.start > 0.0, "power scan must start above 0 µW");
        }
        sec.check("envelope_fwhm_ps", s.envelope_fwhm_ps > 0.0, "must be > 0");
        sec.finish();
    }
    {
        let m = &mut cfg.measurement;
        let mut sec = Section::new(&mut root, "measurement", &mut problems);
        sec.number("integration_s", &mut m.integration_s);
        let mut cps = f64::NAN;
        if sec.number("counts_per_setting", &mut cps) {
            m.counts_per_setting = Some(cps);
            sec.check("counts_per_setting", cps > 0.0, "must be > 0");
        }
        sec.count("bootstrap", &mut m.bootstrap);
        sec.flag("subtract_accidentals", &mut m.subtract_accidentals);
        sec.count("max_iterations", &mut m.max_iterations);
        sec.number("postprocessing_factor", &mut m.postprocessing_factor);
        sec.number("cw_rate_hz", &mut m.cw_rate_hz);
        sec.check("integration_s", m.integration_s > 0.0, "must be > 0");
        sec.check("bootstrap", m.bootstrap != 1, "use 0 (off) or at least 2 resamples");
        sec.check("max_iterations", m.max_iterations > 0, "must be > 0");
        sec.check("postprocessing_factor", in_unit(m.postprocessing_factor), "must be in [0, 1]");
        sec.check("cw_rate_hz", m.cw_rate_hz >= 0.0, "must be >= 0");
        sec.finish();
    }
    {
        let p = &mut cfg.pulse;
        let mut sec = Section::new(&mut root, "pulse", &mut problems);
        sec.number("input_fwhm_ps", &mut p.input_fwhm_ps);
        sec.number("input_bw_nm", &mut p.input_bw_nm);
        sec.number("filter_bw_nm", &mut p.filter_bw_nm);
        sec.check("input_fwhm_ps", p.input_fwhm_ps > 0.0, "must be > 0");
        sec.check("input_bw_nm", p.input_bw_nm > 0.0, "must be > 0");
        sec.check("filter_bw_nm", p.filter_bw_nm > 0.0, "must be > 0");
        sec.finish();
    }

    if seed.is_some() {
        cfg.seed = seed;
    }
    let mut rest: Vec<&String> = root.keys().collect();
    rest.sort();
    for k in rest {
        problems.push(format!("{k}: unknown field"));
    }

    if kind.samples() && cfg.seed.is_none() {
        problems.push(format!("seed: required for {kind} (it draws random counts; set it in the config or pass --seed)"));
    }
    if kind.is_tomography() {
        let model = fockforge_core::tomography::MeasurementModel {
            photons: cfg.photons(),
            tree: cfg.tree.tree(),
            detector: cfg.detector.model(),
        };
        if let Err(e) = model.validate() {
            problems.push(format!("tree: {e}"));
        }
    }
    if kind == Kind::Fringe4 && cfg.detector.threshold && (cfg.tree.h < 1 || cfg.tree.v < 3) {
        problems.push("tree: the 1H&3V pattern needs h >= 1 and v >= 3".into());
    }
    if kind == Kind::Fringe2 && cfg.detector.threshold && (cfg.tree.h < 1 || cfg.tree.v < 1) {
        problems.push("tree: the two-fold pattern needs a detector on each port".into());
    }
    if kind == Kind::Fringe1 && cfg.tree.h < 1 {
        problems.push("tree: the single-photon fringe needs a detector on the H port".into());
    }

    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { problems })
    }
}
