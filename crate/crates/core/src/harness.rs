//! Ensemble execution, result files and the named verification scenarios.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analytics::{self, tail_window, EnsembleAccumulator, Estimate, Estimator, TrajectoryObserver};
use crate::config::{ExperimentConfig, ModelKind, TimeGrid};
use crate::engine::{run_steps, Engine, TrajectoryState};
use crate::error::{Error, Result};
use crate::models::{self, CatState};
use crate::stochastics::RngStream;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MCSME_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "mcsme-out";
/// Upper bound on the number of work blocks an ensemble is split into.
pub const MAX_BLOCKS: u64 = 256;
/// Drive strength from which the strong-drive closed forms are reported.
pub const STRONG_DRIVE: f64 = 10.0;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_traj: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.ensemble.seed = seed;
        }
        if let Some(n) = self.n_traj {
            cfg.ensemble.n_traj = n;
        }
        if let Some(t) = self.threads {
            cfg.ensemble.threads = Some(t);
        }
        if let Some(out) = &self.out {
            cfg.output.dir = Some(out.clone());
        }
    }
}

/// Trajectories per work block. Depends on the ensemble size only, so the
/// merge order, and with it every output bit, is independent of threads.
pub fn block_size(n_traj: u64) -> u64 {
    n_traj.div_ceil(MAX_BLOCKS).max(1)
}

fn blocks(n_traj: u64) -> Vec<(u64, u64)> {
    let size = block_size(n_traj);
    (0..n_traj)
        .step_by(size as usize)
        .map(|lo| (lo, (lo + size).min(n_traj)))
        .collect()
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.ensemble.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("ensemble.threads", e.to_string()))
}

/// Runs `per_block` over fixed trajectory blocks in parallel and returns
/// the block results in trajectory order.
fn par_blocks<T: Send>(cfg: &ExperimentConfig, per_block: impl Fn(u64, u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let work = blocks(cfg.ensemble.n_traj);
    pool(cfg)?.install(|| work.par_iter().map(|&(lo, hi)| per_block(lo, hi)).collect())
}

fn run_atom_or_fock(
    engine: &Engine,
    initial: &TrajectoryState,
    grid: &TimeGrid,
    obs: &mut TrajectoryObserver,
    rng: &mut RngStream,
) -> Result<()> {
    let mut state = initial.clone();
    obs.sample_state(0, &state);
    run_steps(engine, &mut state, grid.n_steps, rng, |k, s, rec| {
        if let Some(ch) = rec.fired() {
            obs.detection(ch, s.t);
        }
        if (k + 1) % grid.stride == 0 {
            obs.sample_state((k + 1) / grid.stride, s);
        }
        Ok(())
    })
}

fn run_cat(
    efficiencies: &[f64],
    grid: &TimeGrid,
    mut obs: Option<&mut TrajectoryObserver>,
    rng: &mut RngStream,
) -> Result<CatState> {
    let mut state = CatState::balanced(efficiencies.len());
    if let Some(o) = obs.as_deref_mut() {
        o.sample_cat(0, &state);
    }
    for k in 0..grid.n_steps {
        models::cat_sde_step(&mut state, efficiencies, grid.dt, rng)?;
        state.tau = (k + 1) as f64 * grid.dt;
        if let Some(o) = obs.as_deref_mut() {
            if (k + 1) % grid.stride == 0 {
                o.sample_cat((k + 1) / grid.stride, &state);
            }
        }
    }
    Ok(state)
}

/// Runs the whole ensemble described by `cfg`. Trajectory `k` draws from
/// stream `k` of the configured seed.
pub fn simulate(cfg: &ExperimentConfig) -> Result<EnsembleAccumulator> {
    cfg.validate()?;
    let grid = cfg.time_grid()?;
    let template = EnsembleAccumulator::new(
        cfg.channels.len(),
        cfg.estimators()?,
        grid.sample_times(),
        tail_window(grid.t_final()),
    )?;
    let seed = cfg.ensemble.seed;
    let parts = match cfg.model_spec()? {
        Some(spec) => {
            let engine = Engine::new(spec, grid.dt)?.with_invariant_checks(cfg.numerics.check_invariants);
            let initial = TrajectoryState::replicated(cfg.initial_density()?, cfg.channels.len())?;
            par_blocks(cfg, |lo, hi| {
                let mut acc = template.empty_like();
                for k in lo..hi {
                    let mut obs = acc.observer();
                    run_atom_or_fock(&engine, &initial, &grid, &mut obs, &mut RngStream::new(seed, k))?;
                    acc.absorb(obs)?;
                }
                Ok(acc)
            })?
        }
        None => {
            let eff = cfg.efficiencies();
            par_blocks(cfg, |lo, hi| {
                let mut acc = template.empty_like();
                for k in lo..hi {
                    let mut obs = acc.observer();
                    run_cat(&eff, &grid, Some(&mut obs), &mut RngStream::new(seed, k))?;
                    acc.absorb(obs)?;
                }
                Ok(acc)
            })?
        }
    };
    let mut total = template.empty_like();
    for part in &parts {
        total.merge(part)?;
    }
    Ok(total)
}

/// Final reduced-model states of every trajectory of a `qbm-cat` config,
/// in trajectory order.
pub fn cat_final_states(cfg: &ExperimentConfig) -> Result<Vec<CatState>> {
    cfg.validate()?;
    if cfg.model.kind != ModelKind::QbmCat {
        return Err(Error::config("model.kind", "final cat states need the qbm-cat model"));
    }
    let grid = cfg.time_grid()?;
    let eff = cfg.efficiencies();
    let seed = cfg.ensemble.seed;
    let parts = par_blocks(cfg, |lo, hi| {
        (lo..hi)
            .map(|k| run_cat(&eff, &grid, None, &mut RngStream::new(seed, k)))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(parts.into_iter().flatten().collect())
}

/// Closed-form asymptote of `estimator` for this config, when one exists.
pub fn oracle_for(cfg: &ExperimentConfig, estimator: Estimator) -> Option<f64> {
    let omega = cfg.model.omega_damping_units.unwrap_or(0.0);
    if omega < STRONG_DRIVE {
        return None;
    }
    let eta = |i: usize| cfg.channels[i].efficiency;
    let phi = |i: usize| cfg.channels[i].phase_rad.unwrap_or(0.0);
    let value = match (cfg.model.kind, estimator) {
        (ModelKind::AtomPhoto, Estimator::RelativePurity(i) | Estimator::Purity(i)) => {
            analytics::oracle_o1_photo(eta(i))
        }
        (ModelKind::AtomPhoto, Estimator::Pair(i, j)) if cfg.channels.len() == 2 => {
            analytics::oracle_o12_photo(eta(i), eta(j))
        }
        (ModelKind::AtomHomodyneDiffusive, Estimator::RelativePurity(i) | Estimator::Purity(i)) => {
            analytics::oracle_o_homodyne(eta(i), phi(i))
        }
        (ModelKind::AtomHomodyneDiffusive, Estimator::Pair(i, j)) => {
            analytics::oracle_o12_homodyne(eta(i), phi(i), eta(j), phi(j))
        }
        _ => return None,
    };
    value.ok()
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(cfg.to_toml_string()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Output directory: explicit override, config, environment, built-in default.
pub fn resolve_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| "NaN".into())
}

#[derive(Debug, Clone, Serialize)]
struct ManifestAsymptote {
    estimator: String,
    window_start: f64,
    window_end: f64,
    mean: f64,
    standard_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: u64,
    n_traj: u64,
    block_size: u64,
    files: Vec<String>,
    asymptote: Vec<ManifestAsymptote>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoteSummary {
    pub estimator: Estimator,
    pub estimate: Estimate,
    pub oracle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub asymptotes: Vec<AsymptoteSummary>,
}

fn write_file(dir: &Path, name: &str, body: &str, files: &mut Vec<String>) -> Result<()> {
    let mut f = fs::File::create(dir.join(name))?;
    f.write_all(body.as_bytes())?;
    files.push(name.to_string());
    Ok(())
}

fn write_outputs(cfg: &ExperimentConfig, acc: &EnsembleAccumulator, dir: &Path) -> Result<Vec<AsymptoteSummary>> {
    let grid = cfg.time_grid()?;
    let window = tail_window(grid.t_final());
    let mut files = Vec::new();
    let mut asymptotes = Vec::new();
    for &est in acc.estimators() {
        let oracle = cfg.output.oracle.then(|| oracle_for(cfg, est)).flatten();
        let mut body = String::from("time,estimate,standard_error,oracle_value\n");
        for (k, &t) in acc.times().iter().enumerate() {
            let e = acc.estimate_o(est, k)?;
            body.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(t),
                fmt_f64(e.mean),
                fmt_f64(e.standard_error),
                fmt_opt(oracle)
            ));
        }
        write_file(dir, &format!("{est}.csv"), &body, &mut files)?;
        asymptotes.push(AsymptoteSummary {
            estimator: est,
            estimate: acc.estimate_tail(est)?,
            oracle,
        });
    }
    if cfg.output.waiting_times {
        for ch in 0..cfg.channels.len() {
            let waits = acc.waits(ch);
            if waits.len() < analytics::MIN_WAITS {
                continue;
            }
            let hist = analytics::waiting_time_histogram(waits)?;
            let strong =
                cfg.model.kind == ModelKind::AtomPhoto && cfg.model.omega_damping_units.unwrap_or(0.0) >= STRONG_DRIVE;
            let mut body = String::from("wait,density,oracle_density\n");
            for (center, density) in hist.bin_centers().zip(&hist.density) {
                let oracle = strong.then(|| analytics::waiting_time_density(center, cfg.channels[ch].efficiency));
                body.push_str(&format!(
                    "{},{},{}\n",
                    fmt_f64(center),
                    fmt_f64(*density),
                    fmt_opt(oracle)
                ));
            }
            write_file(dir, &format!("waits_ch{}.csv", ch + 1), &body, &mut files)?;
        }
    }
    write_file(dir, "config.toml", &cfg.to_toml_string()?, &mut files)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config_hash(cfg)?,
        seed: cfg.ensemble.seed,
        n_traj: cfg.ensemble.n_traj,
        block_size: block_size(cfg.ensemble.n_traj),
        files: files.clone(),
        asymptote: asymptotes
            .iter()
            .map(|a| ManifestAsymptote {
                estimator: a.estimator.to_string(),
                window_start: window.0,
                window_end: window.1,
                mean: a.estimate.mean,
                standard_error: a.estimate.standard_error,
                oracle: a.oracle,
            })
            .collect(),
    };
    write_file(dir, "manifest.toml", &toml::to_string(&manifest)?, &mut files)?;
    Ok(asymptotes)
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    out.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

/// Runs the experiment and writes one CSV per estimator plus a manifest.
/// Files are written to a staging directory that replaces the output
/// directory only when everything succeeded.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = resolve_out_dir(cfg);
    if out.exists() && !out.join("manifest.toml").is_file() {
        return Err(Error::config(
            "output.dir",
            format!("{} exists and does not hold a previous run", out.display()),
        ));
    }
    let acc = simulate(cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let staging = staging_dir(&out);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir(&staging)?;
    let written = write_outputs(cfg, &acc, &staging).and_then(|asymptotes| {
        if out.exists() {
            fs::remove_dir_all(&out)?;
        }
        fs::rename(&staging, &out)?;
        Ok(asymptotes)
    });
    match written {
        Ok(asymptotes) => {
            let mut files: Vec<String> = fs::read_dir(&out)?
                .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
                .collect();
            files.sort();
            Ok(RunSummary {
                out_dir: out,
                files,
                asymptotes,
            })
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

/// One named acceptance scenario.
#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub name: &'static str,
    pub summary: &'static str,
}

pub const SCENARIOS: &[Scenario] = &[
    Scenario {
        name: "O1-photo",
        summary: "photodetection O1 and O11 asymptotes, η = (0.5, 0.1)",
    },
    Scenario {
        name: "O12-photo-equal",
        summary: "photodetection O12 asymptote, η = (0.5, 0.5)",
    },
    Scenario {
        name: "O12-photo-unequal",
        summary: "photodetection O12 asymptote, η = (0.7, 0.3)",
    },
    Scenario {
        name: "O1-homodyne-x",
        summary: "diffusive homodyne O1 and O11, η = 0.1, φ = 0",
    },
    Scenario {
        name: "O1-homodyne-y",
        summary: "diffusive homodyne O1 and O11, η = 0.1, φ = π/2",
    },
    Scenario {
        name: "O12-homodyne-small",
        summary: "diffusive homodyne O12 at η = (0.01, 0.01), 10^5 trajectories (slow)",
    },
    Scenario {
        name: "waiting-time-independence",
        summary: "channel-1 waiting times with and without a second detector",
    },
    Scenario {
        name: "cat-consensus",
        summary: "reduced cat model, all observers agree by τ = 20",
    },
    Scenario {
        name: "fokker-planck-independence",
        summary: "B_1 law at τ = 2 with and without a second observer",
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub reference: f64,
    pub z_score: Option<f64>,
    pub rule: String,
    pub passed: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {:.6} vs {:.6} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.label,
            self.value,
            self.reference,
            self.rule
        )?;
        if let Some(z) = self.z_score {
            write!(f, " z = {z:+.2}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub scenario: String,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {c}", self.scenario)?;
        }
        write!(f, "{} {}", if self.passed() { "PASS" } else { "FAIL" }, self.scenario)
    }
}

fn band_check(label: String, est: Estimate, reference: f64, tol: f64) -> Check {
    Check {
        label,
        value: est.mean,
        reference,
        z_score: Some(est.z_score(reference)),
        rule: format!("±{tol}"),
        passed: (est.mean - reference).abs() <= tol,
    }
}

fn sigma_check(label: String, est: Estimate, reference: f64, k: f64) -> Check {
    let z = est.z_score(reference);
    Check {
        label,
        value: est.mean,
        reference,
        z_score: Some(z),
        rule: format!("|z| < {k}"),
        passed: z.abs() < k,
    }
}

fn floor_check(label: String, value: f64, minimum: f64) -> Check {
    Check {
        label,
        value,
        reference: minimum,
        z_score: None,
        rule: format!("≥ {minimum}"),
        passed: value >= minimum,
    }
}

fn p_check(label: String, p: f64) -> Check {
    Check {
        label,
        value: p,
        reference: 0.01,
        z_score: None,
        rule: "p > 0.01".into(),
        passed: p > 0.01,
    }
}

/// Built-in configuration of a scenario's (first) run.
pub fn scenario_config(name: &str) -> Result<ExperimentConfig> {
    let atom_at = |omega: f64,
                   kind: &str,
                   channels: &[(f64, f64)],
                   n_traj: u64,
                   t_final: f64,
                   dt: f64,
                   estimators: &[&str],
                   seed: u64| {
        let channels: String = channels
            .iter()
            .map(|(eta, phi)| format!("[[channels]]\nefficiency = {eta:?}\nphase_rad = {phi:?}\n\n"))
            .collect();
        let estimators: Vec<String> = estimators.iter().map(|e| format!("{e:?}")).collect();
        format!(
            "[model]\nkind = \"{kind}\"\nomega_damping_units = {omega:?}\n\n{channels}\
             [initial_state]\nkind = \"maximally-mixed\"\n\n\
             [numerics]\ndt_damping_units = {dt:?}\nt_final_damping_units = {t_final:?}\nsample_stride = 50\n\n\
             [ensemble]\nn_traj = {n_traj}\nseed = {seed}\n\n\
             [output]\nestimators = [{}]\nwaiting_times = {}\n",
            estimators.join(", "),
            kind == "atom-photo"
        )
    };
    let atom =
        |kind: &str, channels: &[(f64, f64)], n_traj: u64, t_final: f64, dt: f64, estimators: &[&str], seed: u64| {
            atom_at(20.0, kind, channels, n_traj, t_final, dt, estimators, seed)
        };
    let cat = |eff: &[f64], n_traj: u64, tau_final: f64, seed: u64| {
        let channels: String = eff
            .iter()
            .map(|e| format!("[[channels]]\nefficiency = {e:?}\n\n"))
            .collect();
        format!(
            "[model]\nkind = \"qbm-cat\"\n\n{channels}\
             [initial_state]\nkind = \"cat\"\nz_re = 3.0\n\n\
             [numerics]\ndtau = 0.01\ntau_final = {tau_final:?}\nsample_stride = 10\n\n\
             [ensemble]\nn_traj = {n_traj}\nseed = {seed}\n\n\
             [output]\nestimators = [\"O1\", \"O2\", \"O12\"]\noracle = false\n"
        )
    };
    use std::f64::consts::FRAC_PI_2;
    let text = match name {
        "O1-photo" => atom(
            "atom-photo",
            &[(0.5, 0.0), (0.1, 0.0)],
            1024,
            30.0,
            2e-3,
            &["O1", "O11"],
            101,
        ),
        "O12-photo-equal" => atom("atom-photo", &[(0.5, 0.0), (0.5, 0.0)], 1024, 30.0, 2e-3, &["O12"], 102),
        "O12-photo-unequal" => atom("atom-photo", &[(0.7, 0.0), (0.3, 0.0)], 1024, 30.0, 2e-3, &["O12"], 103),
        "O1-homodyne-x" => atom(
            "atom-homodyne-diffusive",
            &[(0.1, 0.0)],
            1024,
            30.0,
            2e-3,
            &["O1", "O11"],
            104,
        ),
        "O1-homodyne-y" => atom(
            "atom-homodyne-diffusive",
            &[(0.1, FRAC_PI_2)],
            1024,
            30.0,
            2e-3,
            &["O1", "O11"],
            105,
        ),
        "O12-homodyne-small" => atom_at(
            200.0,
            "atom-homodyne-diffusive",
            &[(0.01, 0.0), (0.01, 0.0)],
            100_000,
            6.25,
            2.5e-4,
            &["O12"],
            106,
        ),
        "waiting-time-independence" => atom("atom-photo", &[(0.3, 0.0), (0.0, 0.0)], 1024, 200.0, 2e-3, &["O1"], 107),
        "cat-consensus" => cat(&[0.7, 0.3], 10_000, 20.0, 108),
        "fokker-planck-independence" => cat(&[0.01, 0.99], 10_000, 2.0, 109),
        _ => return Err(Error::UnknownScenario(name.to_string())),
    };
    ExperimentConfig::from_toml_str(&text)
}

fn tail_band(cfg: &ExperimentConfig, names: &[&str], reference: f64, tol: f64) -> Result<Vec<Check>> {
    let acc = simulate(cfg)?;
    names
        .iter()
        .map(|n| {
            let est = Estimator::parse(n)?;
            Ok(band_check(format!("{n} tail"), acc.estimate_tail(est)?, reference, tol))
        })
        .collect()
}

/// Runs a named scenario and compares it with its closed-form prediction.
pub fn verify(name: &str, overrides: &Overrides) -> Result<VerifyReport> {
    let mut cfg = scenario_config(name)?;
    overrides.apply(&mut cfg);
    let checks = match name {
        "O1-photo" => tail_band(&cfg, &["O1", "O11"], analytics::oracle_o1_photo(0.5)?, 0.02)?,
        "O12-photo-equal" => tail_band(&cfg, &["O12"], analytics::oracle_o12_photo(0.5, 0.5)?, 0.01)?,
        "O12-photo-unequal" => tail_band(&cfg, &["O12"], analytics::oracle_o12_photo(0.7, 0.3)?, 0.01)?,
        "O1-homodyne-x" => tail_band(&cfg, &["O1", "O11"], analytics::oracle_o_homodyne(0.1, 0.0)?, 0.01)?,
        "O1-homodyne-y" => tail_band(
            &cfg,
            &["O1", "O11"],
            analytics::oracle_o_homodyne(0.1, std::f64::consts::FRAC_PI_2)?,
            0.01,
        )?,
        "O12-homodyne-small" => {
            let acc = simulate(&cfg)?;
            let reference = analytics::oracle_o12_homodyne(0.01, 0.0, 0.01, 0.0)?;
            vec![sigma_check(
                "O12 tail".into(),
                acc.estimate_tail(Estimator::Pair(0, 1))?,
                reference,
                3.0,
            )]
        }
        "waiting-time-independence" => {
            let alone = simulate(&cfg)?;
            let mut shared = cfg.clone();
            shared.channels[1].efficiency = 0.6;
            shared.ensemble.seed += 1000;
            let shared = simulate(&shared)?;
            let rate = 0.5 * cfg.channels[0].efficiency;
            let (a, b) = (alone.waits(0), shared.waits(0));
            vec![
                floor_check("waits without observer 2".into(), a.len() as f64, 1e4),
                floor_check("waits with observer 2".into(), b.len() as f64, 1e4),
                p_check(
                    "KS vs exponential, η_2 = 0".into(),
                    analytics::compare_exponential(a, rate)?.p_value,
                ),
                p_check(
                    "KS vs exponential, η_2 = 0.6".into(),
                    analytics::compare_exponential(b, rate)?.p_value,
                ),
                p_check("two-sample KS".into(), analytics::ks_two_sample(a, b)?.p_value),
            ]
        }
        "cat-consensus" => {
            let finals = cat_final_states(&cfg)?;
            let agree = finals.iter().filter(|s| cat_consensus(s, 0.01)).count();
            let mut o12 = analytics::RunningStats::default();
            finals.iter().for_each(|s| o12.push(s.o_ij(0, 1)));
            vec![
                floor_check("consensus fraction".into(), agree as f64 / finals.len() as f64, 0.999),
                band_check("O12 at τ = 20".into(), o12.estimate()?, 1.0, 0.005),
            ]
        }
        "fokker-planck-independence" => {
            let eta1 = cfg.channels[0].efficiency;
            let tau = cfg.time_grid()?.t_final();
            let with = b1_samples(&cfg)?;
            let mut alone_cfg = cfg.clone();
            alone_cfg.channels[1].efficiency = 0.0;
            alone_cfg.ensemble.seed += 1000;
            let alone = b1_samples(&alone_cfg)?;
            let cdf = |b: f64| models::fokker_planck_cdf(tau, b, eta1).unwrap_or(f64::NAN);
            vec![
                p_check(
                    "KS vs mixture, η_2 = 0.99".into(),
                    analytics::ks_one_sample(&with, cdf)?.p_value,
                ),
                p_check(
                    "KS vs mixture, η_2 = 0".into(),
                    analytics::ks_one_sample(&alone, cdf)?.p_value,
                ),
                p_check("two-sample KS".into(), analytics::ks_two_sample(&with, &alone)?.p_value),
            ]
        }
        _ => return Err(Error::UnknownScenario(name.to_string())),
    };
    Ok(VerifyReport {
        scenario: name.to_string(),
        checks,
    })
}

/// A, A_1, A_2, … all within `tol` of the same ±1.
pub fn cat_consensus(state: &CatState, tol: f64) -> bool {
    let target = state.a().signum();
    (state.a() - target).abs() < tol && (0..state.b_single.len()).all(|i| (state.a_single(i) - target).abs() < tol)
}

fn b1_samples(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    Ok(cat_final_states(cfg)?.into_iter().map(|s| s.b_single[0]).collect())
}
