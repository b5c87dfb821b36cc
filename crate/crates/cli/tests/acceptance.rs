//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::Matrix2;
use num_complex::Complex64;

use fockforge::config::{parse, ExperimentConfig, NoiseConfig};
use fockforge_core::detection::{fanout_click_probs, fit_fringe, Curve, DetectionTree, DetectorModel, FrequencySearch};
use fockforge_core::fock::{DensityMatrix, FockVector};
use fockforge_core::polarization::{su2_from_angles, ModeTransform, WavePlateSetting};
use fockforge_core::source::{brightness_estimate, entangled_state, pulse_width_tbp, BrightnessReference, LossBudget, PumpConfig, SqueezeParams};
use fockforge_core::tomography::{default_settings, expected_records, fidelity_to, mle_reconstruct, poisson_records, MeasurementModel, MleOptions};

type Outcome = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn load(name: &str) -> ExperimentConfig {
    let path = configs_dir().join(format!("{name}.toml"));
    parse(&std::fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn quantity(cfg: &ExperimentConfig, name: &str) -> Result<f64, String> {
    let out = fockforge::run(cfg).map_err(|e| e.to_string())?;
    out.quantities.get(name).map(|q| q.value).ok_or_else(|| format!("no quantity {name}"))
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Amplitudes of `(a_H†² + a_V†²)ⁿ |00>`, normalized, on `|2k, 2n-2k>`.
fn pair_expansion(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..=n)
        .map(|k| (factorial(2 * k) * factorial(2 * (n - k))).sqrt() / (factorial(k) * factorial(n - k)))
        .collect();
    let norm = raw.iter().map(|a| a * a).sum::<f64>().sqrt();
    raw.iter().map(|a| a / norm).collect()
}

fn state_coefficients() -> Outcome {
    let p = SqueezeParams::new(0.3).map_err(|e| e.to_string())?;
    let quoted: [&[(usize, f64)]; 3] = [
        &[(2, 0.5f64.sqrt()), (0, 0.5f64.sqrt())],
        &[(4, (3.0f64 / 8.0).sqrt()), (2, 0.5), (0, (3.0f64 / 8.0).sqrt())],
        &[(8, 70f64.sqrt() / 16.0), (6, 10f64.sqrt() / 8.0), (4, 3.0 / 8.0), (2, 10f64.sqrt() / 8.0), (0, 70f64.sqrt() / 16.0)],
    ];
    let mut worst: f64 = 0.0;
    for (n, expected) in [1usize, 2, 4].into_iter().zip(quoted) {
        let s = entangled_state(p, n, 2 * n + 2).map_err(|e| e.to_string())?;
        let oracle = pair_expansion(n);
        for (nh, c) in expected {
            let a = s.amplitude(*nh, 2 * n - nh);
            worst = worst.max((a - Complex64::new(*c, 0.0)).norm()).max((a.re - oracle[nh / 2]).abs());
        }
    }
    let s4 = entangled_state(p, 2, 6).map_err(|e| e.to_string())?;
    let w = [s4.amplitude(4, 0).norm_sqr(), s4.amplitude(2, 2).norm_sqr(), s4.amplitude(0, 4).norm_sqr()];
    for (got, want) in w.iter().zip([3.0 / 8.0, 0.25, 3.0 / 8.0]) {
        worst = worst.max((got - want).abs());
    }
    check(worst < 1e-12, format!("max deviation {worst:.2e}"))?;
    Ok(format!("max deviation {worst:.2e}"))
}

fn time_reversed_hom() -> Outcome {
    let c = Complex64::new(0.5f64.sqrt(), 0.0);
    let phi2 = FockVector::from_terms(2, [(2, 0, c), (0, 2, c)]).map_err(|e| e.to_string())?;
    let u = su2_from_angles(WavePlateSetting::new(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_4));
    let out = phi2.transform(&u).map_err(|e| e.to_string())?.value;
    let overlap = out.inner(&FockVector::number_state(1, 1, 2).unwrap()).unwrap().norm();
    check((overlap - 1.0).abs() < 1e-10, format!("|<11|U|Φ2>| = {overlap}"))?;
    Ok(format!("|<11|U|Φ2>| = {overlap:.15}"))
}

/// Each photon lands on one of `d` detectors uniformly and is seen with
/// probability `eta`; a detector clicks on a seen photon or a dark count.
fn multinomial_clicks(n: usize, d: usize, eta: f64, dark: f64) -> Vec<f64> {
    fn compositions(n: usize, d: usize) -> Vec<Vec<usize>> {
        if d == 1 {
            return vec![vec![n]];
        }
        (0..=n)
            .flat_map(|k| compositions(n - k, d - 1).into_iter().map(move |mut rest| {
                rest.insert(0, k);
                rest
            }))
            .collect()
    }
    let mut out = vec![0.0; d + 1];
    for occ in compositions(n, d) {
        let weight = factorial(n) / occ.iter().map(|&k| factorial(k)).product::<f64>() / (d as f64).powi(n as i32);
        let mut dist = vec![1.0];
        for &k in &occ {
            let click = 1.0 - (1.0 - eta).powi(k as i32) * (1.0 - dark);
            let mut next = vec![0.0; dist.len() + 1];
            for (j, p) in dist.iter().enumerate() {
                next[j] += p * (1.0 - click);
                next[j + 1] += p * click;
            }
            dist = next;
        }
        for (j, p) in dist.iter().enumerate() {
            out[j] += weight * p;
        }
    }
    out
}

fn beam_splitter(transmission: f64) -> ModeTransform {
    let (t, r) = (transmission.sqrt(), (1.0 - transmission).sqrt());
    let c = |x: f64| Complex64::new(x, 0.0);
    ModeTransform::from_matrix(Matrix2::new(c(t), c(-r), c(r), c(t))).unwrap()
}

/// Photon-number split of `n` photons on a beam splitter, as a list of
/// `(kept, passed on, probability)`.
fn split(n: usize, transmission: f64) -> Vec<(usize, usize, f64)> {
    let out = FockVector::number_state(n, 0, n.max(1)).unwrap().transform(&beam_splitter(transmission)).unwrap().value;
    (0..=n).map(|a| (a, n - a, out.amplitude(a, n - a).norm_sqr())).collect()
}

/// Click-count distribution from a bosonic splitter tree: the first
/// splitter sends 1/d of the light to detector 1, the rest continues to a
/// tree of d-1 detectors. Loss and dark clicks act per detector.
fn bosonic_tree(n: usize, d: usize, eta: f64, dark: f64) -> Vec<f64> {
    if d == 1 {
        let click = 1.0 - (1.0 - eta).powi(n as i32) * (1.0 - dark);
        return vec![1.0 - click, click];
    }
    let mut out = vec![0.0; d + 1];
    for (here, rest, w) in split(n, 1.0 / d as f64) {
        let first = bosonic_tree(here, 1, eta, dark);
        let others = bosonic_tree(rest, d - 1, eta, dark);
        for (i, a) in first.iter().enumerate() {
            for (j, b) in others.iter().enumerate() {
                out[i + j] += w * a * b;
            }
        }
    }
    out
}

fn click_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in 0..=6 {
        for d in 1..=3 {
            for (eta, dark) in [(1.0, 0.0), (0.85, 0.0), (0.3, 1e-3), (0.063, 0.05), (0.0, 0.2)] {
                let model = DetectorModel { efficiency: eta, dark_click_prob: dark, threshold: true };
                let got = fanout_click_probs(n, d, &model).map_err(|e| e.to_string())?;
                for want in [bosonic_tree(n, d, eta, dark), multinomial_clicks(n, d, eta, dark)] {
                    check(got.len() == want.len(), format!("n={n} d={d}: {} entries", got.len()))?;
                    for (a, b) in got.iter().zip(&want) {
                        worst = worst.max((a - b).abs());
                    }
                }
                cases += 1;
            }
        }
    }
    check(worst < 1e-10, format!("max deviation {worst:.2e}"))?;
    Ok(format!("{cases} cases, max deviation {worst:.2e}"))
}

fn hom_visibility() -> Outcome {
    let mut cfg = load("hom");
    check(cfg.noise.indistinguishability == 0.97, "hom config must use overlap 0.97")?;
    let mut worst: f64 = 0.0;
    for seed in 1..=50 {
        cfg.seed = Some(seed);
        let v = quantity(&cfg, "visibility")?;
        worst = worst.max((v - 0.97).abs());
    }
    check(worst <= 0.02, format!("max |V - 0.97| = {worst:.4}"))?;
    Ok(format!("50 seeds, max |V - 0.97| = {worst:.4}"))
}

fn fringe_periods() -> Outcome {
    let mut notes = Vec::new();
    for (name, freq) in [("fringe1", 1.0), ("fringe2", 2.0), ("fringe4", 4.0)] {
        let mut cfg = load(name);
        cfg.noise = NoiseConfig::none();
        cfg.detector.dark_rate_hz = 0.0;
        let out = fockforge::run(&cfg).map_err(|e| e.to_string())?;
        let q = |k: &str| out.quantities[k].value;
        check(q("frequency") == freq, format!("{name}: frequency {}", q("frequency")))?;
        let csv = &out.files.iter().find(|(n, _)| *n == "fringe.csv").ok_or("no fringe.csv")?.1;
        let free = fit_fringe(&Curve::from_csv(csv).map_err(|e| e.to_string())?, FrequencySearch::Free).map_err(|e| e.to_string())?;
        check((free.frequency - freq).abs() <= 0.01 * freq, format!("{name}: free-search frequency {}", free.frequency))?;
        let v = q("model_visibility");
        check((v - 1.0).abs() < 1e-6, format!("{name}: noiseless visibility {v}"))?;
        notes.push(format!("{name} f={:.4} V0={v:.8}", free.frequency));
    }
    let mut cfg = load("fringe4");
    let mut vs = Vec::new();
    for seed in 1..=10 {
        cfg.seed = Some(seed);
        vs.push(quantity(&cfg, "visibility")?);
    }
    let (lo, hi) = vs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    check(lo >= 0.64 && hi <= 0.84, format!("noisy four-fold visibility range [{lo:.3}, {hi:.3}]"))?;
    notes.push(format!("noisy V4 in [{lo:.3}, {hi:.3}] over 10 seeds"));
    Ok(notes.join("; "))
}

fn target_state(n: usize) -> FockVector {
    let amps = pair_expansion(n / 2);
    FockVector::from_terms(n, amps.iter().enumerate().map(|(k, a)| (2 * k, n - 2 * k, Complex64::new(*a, 0.0)))).unwrap()
}

fn tomography_round_trip() -> Outcome {
    let mut notes = Vec::new();
    for (n, tree) in [(2, DetectionTree { h: 2, v: 2 }), (4, DetectionTree { h: 4, v: 4 })] {
        let model = MeasurementModel { photons: n, tree, detector: DetectorModel::ideal() };
        let plan = default_settings(&model).map_err(|e| e.to_string())?;
        check(plan.settings.len() == (n + 1) * (n + 1), format!("{} settings for N={n}", plan.settings.len()))?;
        let target = target_state(n);
        let rho = DensityMatrix::pure_in_sector(&target, n).map_err(|e| e.to_string())?;
        let unit = expected_records(&rho, &plan.settings, &model, 1.0, 1.0, |_, s| su2_from_angles(s.setting)).map_err(|e| e.to_string())?;
        let mean = unit.iter().map(|r| r.total()).sum::<f64>() / unit.len() as f64;
        let expected = expected_records(&rho, &plan.settings, &model, 1e5 / mean, 1.0, |_, s| su2_from_angles(s.setting)).map_err(|e| e.to_string())?;
        let records = poisson_records(&expected, 2024 + n as u64);
        let opts = MleOptions { keep_history: true, ..MleOptions::default() };
        let res = mle_reconstruct(&records, &model, &opts).map_err(|e| e.to_string())?;
        check(res.converged(), format!("N={n}: {:?}", res.termination))?;
        let f = fidelity_to(&res.rho, &target).map_err(|e| e.to_string())?;
        check(f >= 0.99, format!("N={n}: fidelity {f}"))?;
        let drops = res.history.windows(2).filter(|w| w[1] < w[0]).count();
        check(drops == 0, format!("N={n}: log-likelihood decreased {drops} times"))?;
        let min_eig = res.rho.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        let tr = res.rho.trace();
        check(min_eig >= -1e-9 && (tr - 1.0).abs() <= 1e-9, format!("N={n}: min eigenvalue {min_eig:.2e}, trace {tr}"))?;
        notes.push(format!("N={n}: F={f:.5}, {} iterations", res.iterations));
    }
    Ok(notes.join("; "))
}

fn fidelity_bands() -> Outcome {
    let mut notes = Vec::new();
    for (name, lo, hi) in [("tomo2", 0.90, 1.06), ("tomo4", 0.60, 0.84)] {
        let mut cfg = load(name);
        cfg.measurement.bootstrap = 0;
        let mut fs = Vec::new();
        for seed in 1..=20 {
            cfg.seed = Some(seed);
            fs.push(quantity(&cfg, "fidelity")?);
        }
        let (a, b) = fs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mean = fs.iter().sum::<f64>() / fs.len() as f64;
        check(a >= lo && b <= hi, format!("{name}: fidelity range [{a:.3}, {b:.3}] outside [{lo}, {hi}]"))?;
        notes.push(format!("{name} F in [{a:.3}, {b:.3}], mean {mean:.3}"));
    }
    Ok(notes.join("; "))
}

fn methods_arithmetic() -> Outcome {
    let width = pulse_width_tbp(0.090, 80.0, 0.4).map_err(|e| e.to_string())?;
    check((width - 18.0).abs() < 1e-9, format!("filtered pulse {width} ps"))?;

    let pump = PumpConfig::new(250.0, 250.0, 1e8).map_err(|e| e.to_string())?;
    let report = brightness_estimate(&pump, &BrightnessReference::silicon_setup(), &LossBudget::silicon_setup(), 0.1).map_err(|e| e.to_string())?;
    // independent chain: quadratic pump scaling, squared pair probability,
    // four photons through 12 dB each, and the 0.1 selection factor
    let pairs = 0.002 * (250.0f64 / 80.0).powi(2);
    let four_hz = pairs * pairs * 1e8;
    let detected = four_hz * 10f64.powf(-48.0 / 10.0) * 0.1;
    check((report.pairs_per_pulse - pairs).abs() < 1e-15, "pairs per pulse")?;
    check((report.four_photon_generation_hz - four_hz).abs() < 1e-9 * four_hz, "four-photon rate")?;
    check((report.four_fold_detected_hz - detected).abs() < 1e-12, "detected four-fold rate")?;
    check((report.pairs_per_pulse * 100.0).round() / 100.0 == 0.02, format!("{} pairs per pulse", report.pairs_per_pulse))?;
    check((report.four_photon_generation_hz / 1e4).round() * 1e4 == 40_000.0, format!("{} Hz four-photon", report.four_photon_generation_hz))?;
    check((0.03..=0.12).contains(&report.four_fold_detected_hz), format!("{} Hz detected", report.four_fold_detected_hz))?;
    Ok(format!(
        "{width:.3} ps; {:.4} pairs/pulse; {:.0} Hz four-photon; {:.4} Hz detected",
        report.pairs_per_pulse, report.four_photon_generation_hz, report.four_fold_detected_hz
    ))
}

fn run_binary(config: &Path, out: &Path, threads: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fockforge"));
    cmd.arg("run").arg(config).arg("--out").arg(out);
    if let Some(t) = threads {
        cmd.env("FOCKFORGE_THREADS", t);
    }
    let status = cmd.output().map_err(|e| e.to_string())?;
    check(status.status.success(), format!("{} exited with {:?}: {}", config.display(), status.status.code(), String::from_utf8_lossy(&status.stderr)))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(configs_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    let mut files = 0;
    for cfg in &entries {
        let stem = cfg.file_stem().unwrap().to_string_lossy().to_string();
        let a = tmp.path().join(format!("{stem}-a"));
        let b = tmp.path().join(format!("{stem}-b"));
        run_binary(cfg, &a, None)?;
        run_binary(cfg, &b, Some("1"))?;
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            let x = std::fs::read(a.join(&name)).unwrap();
            let y = std::fs::read(b.join(&name)).map_err(|e| format!("{stem}/{}: {e}", name.to_string_lossy()))?;
            check(x == y, format!("{stem}/{} differs between runs", name.to_string_lossy()))?;
            files += 1;
        }
    }
    Ok(format!("{} configs, {files} files byte-identical (default vs single thread)", entries.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("state coefficients", Duration::from_secs(1), state_coefficients),
        ("time-reversed HOM", Duration::from_secs(1), time_reversed_hom),
        ("click-statistics oracle", Duration::from_secs(10), click_oracle),
        ("HOM visibility", Duration::from_secs(60), hom_visibility),
        ("fringe periods", Duration::from_secs(300), fringe_periods),
        ("tomography round-trip", Duration::from_secs(600), tomography_round_trip),
        ("fidelity bands", Duration::from_secs(600), fidelity_bands),
        ("methods arithmetic", Duration::from_secs(1), methods_arithmetic),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let result = result.and_then(|msg| {
            if took <= *limit { Ok(msg) } else { Err(format!("{msg}; took {took:.2?}, limit {limit:?}")) }
        });
        match result {
            Ok(msg) => println!("PASS {}. {name}: {msg} [{took:.2?}]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {}. {name}: {msg} [{took:.2?}]", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
