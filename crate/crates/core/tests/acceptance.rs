//! Acceptance criteria. Every test writes exactly one `PASS`/`FAIL` line to
//! stderr, bypassing the test harness capture, before asserting.

use std::f64::consts::{FRAC_PI_2, SQRT_2};
use std::io::Write;

use mcsme::analytics::{self, Estimate, Estimator, RunningStats};
use mcsme::config::ExperimentConfig;
use mcsme::densmat::DensityMatrix;
use mcsme::engine::{run_steps, Engine, TrajectoryState};
use mcsme::harness::{self, Overrides};
use mcsme::models::{self, CatState};
use mcsme::stochastics::RngStream;
use statrs::function::erf::erf;

mod common;
use common::{bloch_of, excited_m2, rk4};

const OMEGA: f64 = 20.0;
const DT: f64 = 2e-3;
const T_FINAL: f64 = 30.0;
const N_TRAJ: u64 = 1024;

const C1_TARGET: f64 = 0.125;
const C1_TOL: f64 = 0.02;
const C2_EQUAL_TARGET: f64 = -0.025;
const C2_UNEQUAL_TARGET: f64 = -0.022;
const C2_TOL: f64 = 0.01;
const C3_X_TARGET: f64 = 0.05;
const C3_Y_TARGET: f64 = 0.1 / 3.0;
const C3_TOL: f64 = 0.01;
const C4_TARGET: f64 = 1.0e-4;
const C4_SIGMAS: f64 = 3.0;
const C4_MIN_TRAJ: u64 = 100_000;
const C5_MIN_WAITS: usize = 10_000;
const C5_ALPHA: f64 = 0.01;
const C6_MIN_CONSENSUS: f64 = 0.999;
const C6_CONSENSUS_TOL: f64 = 0.01;
const C6_O12_TOL: f64 = 0.005;
const C7_ALPHA: f64 = 0.01;
const C7_SAMPLES: u64 = 10_000;
const C8_SIGMAS: f64 = 3.0;

fn report(criterion: u32, title: &str, passed: bool, detail: &str) {
    let line = format!(
        "{} criterion {criterion}: {title}: {detail}\n",
        if passed { "PASS" } else { "FAIL" }
    );
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
    assert!(passed, "criterion {criterion} failed: {detail}");
}

struct Atom<'a> {
    kind: &'a str,
    omega: f64,
    channels: &'a [(f64, f64)],
    n_traj: u64,
    t_final: f64,
    dt: f64,
    estimators: &'a [&'a str],
    seed: u64,
}

impl Atom<'_> {
    fn config(&self) -> ExperimentConfig {
        let mut text = format!(
            "[model]\nkind = \"{}\"\nomega_damping_units = {:?}\n\n",
            self.kind, self.omega
        );
        for (eta, phi) in self.channels {
            text += &format!("[[channels]]\nefficiency = {eta:?}\nphase_rad = {phi:?}\n\n");
        }
        let est: Vec<String> = self.estimators.iter().map(|e| format!("\"{e}\"")).collect();
        text += &format!(
            "[initial_state]\nkind = \"maximally-mixed\"\n\n\
             [numerics]\ndt_damping_units = {:?}\nt_final_damping_units = {:?}\nsample_stride = 50\n\n\
             [ensemble]\nn_traj = {}\nseed = {}\n\n\
             [output]\nestimators = [{}]\nwaiting_times = {}\n",
            self.dt,
            self.t_final,
            self.n_traj,
            self.seed,
            est.join(", "),
            self.kind == "atom-photo",
        );
        ExperimentConfig::from_toml_str(&text).unwrap()
    }
}

fn cat_config(efficiencies: &[f64], n_traj: u64, tau_final: f64, seed: u64) -> ExperimentConfig {
    let mut text = String::from("[model]\nkind = \"qbm-cat\"\n\n");
    for e in efficiencies {
        text += &format!("[[channels]]\nefficiency = {e:?}\n\n");
    }
    text += &format!(
        "[initial_state]\nkind = \"cat\"\nz_re = 3.0\n\n\
         [numerics]\ndtau = 0.01\ntau_final = {tau_final:?}\nsample_stride = 10\n\n\
         [ensemble]\nn_traj = {n_traj}\nseed = {seed}\n\n\
         [output]\nestimators = [\"O1\"]\noracle = false\n"
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

fn tail(cfg: &ExperimentConfig, names: &[&str]) -> Vec<Estimate> {
    let acc = harness::simulate(cfg).unwrap();
    names
        .iter()
        .map(|n| acc.estimate_tail(Estimator::parse(n).unwrap()).unwrap())
        .collect()
}

fn in_band(est: &Estimate, target: f64, tol: f64) -> bool {
    (est.mean - 0.5 - target).abs() <= tol
}

fn photo_o1_closed_form(eta1: f64) -> f64 {
    // ½ η_1 / (3 − 2η_1)
    0.5 * eta1 / (3.0 - 2.0 * eta1)
}

fn photo_o12_closed_form(eta1: f64, eta2: f64) -> f64 {
    let eta = eta1 + eta2;
    -eta1 * eta2 * (3.0 - eta) / ((6.0 - eta) * (3.0 - 2.0 * eta1) * (3.0 - 2.0 * eta2))
}

fn homodyne_o1_closed_form(eta: f64, phi: f64) -> f64 {
    eta * (phi.cos().powi(2) / 2.0 + phi.sin().powi(2) / 3.0)
}

fn homodyne_o12_closed_form(eta1: f64, eta2: f64) -> f64 {
    eta1 * eta2
}

#[test]
fn closed_forms_reproduce_pinned_values() {
    assert!((photo_o1_closed_form(0.5) - C1_TARGET).abs() < 1e-15);
    assert!((photo_o12_closed_form(0.5, 0.5) - C2_EQUAL_TARGET).abs() < 1e-15);
    assert!((photo_o12_closed_form(0.7, 0.3) - C2_UNEQUAL_TARGET).abs() < 5e-4);
    assert!((homodyne_o1_closed_form(0.1, 0.0) - C3_X_TARGET).abs() < 1e-15);
    assert!((homodyne_o1_closed_form(0.1, FRAC_PI_2) - C3_Y_TARGET).abs() < 1e-15);
    assert!((homodyne_o12_closed_form(0.01, 0.01) - C4_TARGET).abs() < 1e-15);
    for (lib, ours) in [
        (analytics::oracle_o1_photo(0.5).unwrap(), photo_o1_closed_form(0.5)),
        (
            analytics::oracle_o12_photo(0.5, 0.5).unwrap(),
            photo_o12_closed_form(0.5, 0.5),
        ),
        (
            analytics::oracle_o12_photo(0.7, 0.3).unwrap(),
            photo_o12_closed_form(0.7, 0.3),
        ),
        (
            analytics::oracle_o_homodyne(0.1, 0.0).unwrap(),
            homodyne_o1_closed_form(0.1, 0.0),
        ),
        (
            analytics::oracle_o_homodyne(0.1, FRAC_PI_2).unwrap(),
            homodyne_o1_closed_form(0.1, FRAC_PI_2),
        ),
        (
            analytics::oracle_o12_homodyne(0.01, 0.0, 0.01, 0.0).unwrap(),
            homodyne_o12_closed_form(0.01, 0.01),
        ),
    ] {
        assert!((lib - 0.5 - ours).abs() < 1e-15, "{lib} vs ½ + {ours}");
    }
}

#[test]
fn criterion_1_photodetection_o1_asymptote() {
    let cfg = Atom {
        kind: "atom-photo",
        omega: OMEGA,
        channels: &[(0.5, 0.0), (0.1, 0.0)],
        n_traj: N_TRAJ,
        t_final: T_FINAL,
        dt: DT,
        estimators: &["O1", "O11"],
        seed: 1,
    }
    .config();
    let est = tail(&cfg, &["O1", "O11"]);
    let passed = est.iter().all(|e| in_band(e, C1_TARGET, C1_TOL));
    let detail = format!(
        "O1-1/2 = {:.4} ± {:.4}, O11-1/2 = {:.4} ± {:.4}, target {C1_TARGET} ± {C1_TOL}",
        est[0].mean - 0.5,
        est[0].standard_error,
        est[1].mean - 0.5,
        est[1].standard_error
    );
    report(1, "photodetection O1 and O11 asymptote", passed, &detail);
}

#[test]
fn criterion_2_photodetection_o12() {
    let mut parts = Vec::new();
    let mut passed = true;
    for (channels, target, seed) in [
        ([(0.5, 0.0), (0.5, 0.0)], C2_EQUAL_TARGET, 2),
        ([(0.7, 0.0), (0.3, 0.0)], C2_UNEQUAL_TARGET, 3),
    ] {
        let cfg = Atom {
            kind: "atom-photo",
            omega: OMEGA,
            channels: &channels,
            n_traj: N_TRAJ,
            t_final: T_FINAL,
            dt: DT,
            estimators: &["O12"],
            seed,
        }
        .config();
        let est = tail(&cfg, &["O12"])[0];
        passed &= in_band(&est, target, C2_TOL);
        parts.push(format!(
            "η = ({}, {}): O12-1/2 = {:.4} ± {:.4} (target {target} ± {C2_TOL})",
            channels[0].0,
            channels[1].0,
            est.mean - 0.5,
            est.standard_error
        ));
    }
    report(2, "photodetection O12", passed, &parts.join("; "));
}

#[test]
fn criterion_3_homodyne_o1() {
    let mut parts = Vec::new();
    let mut passed = true;
    for (phi, target, seed, label) in [(0.0, C3_X_TARGET, 4, "φ = 0"), (FRAC_PI_2, C3_Y_TARGET, 5, "φ = π/2")] {
        let cfg = Atom {
            kind: "atom-homodyne-diffusive",
            omega: OMEGA,
            channels: &[(0.1, phi)],
            n_traj: N_TRAJ,
            t_final: T_FINAL,
            dt: DT,
            estimators: &["O1", "O11"],
            seed,
        }
        .config();
        let est = tail(&cfg, &["O1", "O11"]);
        passed &= est.iter().all(|e| in_band(e, target, C3_TOL));
        parts.push(format!(
            "{label}: O1-1/2 = {:.4}, O11-1/2 = {:.4} (target {target:.4} ± {C3_TOL})",
            est[0].mean - 0.5,
            est[1].mean - 0.5
        ));
    }
    report(3, "diffusive homodyne O1", passed, &parts.join("; "));
}

#[test]
fn criterion_4_homodyne_o12_small_efficiency_slow() {
    // ω = 200 keeps the finite-drive shift of the steady state (~3e-6 here)
    // well below the statistical resolution.
    let cfg = Atom {
        kind: "atom-homodyne-diffusive",
        omega: 200.0,
        channels: &[(0.01, 0.0), (0.01, 0.0)],
        n_traj: C4_MIN_TRAJ,
        t_final: 6.25,
        dt: 2.5e-4,
        estimators: &["O12"],
        seed: 6,
    }
    .config();
    let est = tail(&cfg, &["O12"])[0];
    let z = est.z_score(0.5 + C4_TARGET);
    let passed = est.n >= C4_MIN_TRAJ && z.abs() <= C4_SIGMAS;
    let detail = format!(
        "O12-1/2 = {:.3e} ± {:.2e} over {} trajectories, target {C4_TARGET:e}, z = {z:+.2}",
        est.mean - 0.5,
        est.standard_error,
        est.n
    );
    report(4, "diffusive homodyne O12 at η = 0.01", passed, &detail);
}

fn exponential_cdf(rate: f64) -> impl Fn(f64) -> f64 {
    move |t| if t <= 0.0 { 0.0 } else { 1.0 - (-rate * t).exp() }
}

#[test]
fn criterion_5_waiting_times_ignore_second_observer() {
    let eta1 = 0.3;
    let waits = |eta2: f64, seed: u64| {
        let cfg = Atom {
            kind: "atom-photo",
            omega: OMEGA,
            channels: &[(eta1, 0.0), (eta2, 0.0)],
            n_traj: N_TRAJ,
            t_final: 200.0,
            dt: DT,
            estimators: &["O1"],
            seed,
        }
        .config();
        harness::simulate(&cfg).unwrap().waits(0).to_vec()
    };
    let alone = waits(0.0, 7);
    let shared = waits(0.6, 8);
    let rate = eta1 / 2.0;
    let ks_alone = analytics::ks_one_sample(&alone, exponential_cdf(rate)).unwrap();
    let ks_shared = analytics::ks_one_sample(&shared, exponential_cdf(rate)).unwrap();
    let ks_pair = analytics::ks_two_sample(&alone, &shared).unwrap();
    let passed = alone.len() >= C5_MIN_WAITS
        && shared.len() >= C5_MIN_WAITS
        && ks_alone.p_value > C5_ALPHA
        && ks_shared.p_value > C5_ALPHA
        && ks_pair.p_value > C5_ALPHA;
    let detail = format!(
        "{} and {} waits; KS p vs exponential {:.3} (η_2 = 0), {:.3} (η_2 = 0.6); two-sample p {:.3}; threshold {C5_ALPHA}",
        alone.len(),
        shared.len(),
        ks_alone.p_value,
        ks_shared.p_value,
        ks_pair.p_value
    );
    report(5, "waiting-time law and observer independence", passed, &detail);
}

fn agrees(state: &CatState) -> bool {
    let target = if state.b >= 0.0 { 1.0 } else { -1.0 };
    let close = |b: f64| (b.tanh() - target).abs() < C6_CONSENSUS_TOL;
    close(state.b) && state.b_single.iter().all(|&b| close(b))
}

#[test]
fn criterion_6_cat_consensus() {
    let cfg = cat_config(&[0.7, 0.3], 10_000, 20.0, 9);
    let finals = harness::cat_final_states(&cfg).unwrap();
    let fraction = finals.iter().filter(|s| agrees(s)).count() as f64 / finals.len() as f64;
    let mut o12 = RunningStats::default();
    for s in &finals {
        o12.push(0.5 * (1.0 + s.b_single[0].tanh() * s.b_single[1].tanh()));
    }
    let o12 = o12.estimate().unwrap();
    let passed = finals.len() == 10_000 && fraction >= C6_MIN_CONSENSUS && (o12.mean - 1.0).abs() <= C6_O12_TOL;
    let detail = format!(
        "consensus fraction {fraction:.4} (need ≥ {C6_MIN_CONSENSUS}), O12 = {:.4} ± {:.4} (need 1 ± {C6_O12_TOL})",
        o12.mean, o12.standard_error
    );
    report(6, "cat-state consensus at τ = 20", passed, &detail);
}

fn mixture_cdf(tau: f64, eta1: f64) -> impl Fn(f64) -> f64 {
    let (m, s) = (eta1 * tau, (eta1 * tau).sqrt());
    move |b| 0.25 * (2.0 + erf((b - m) / (s * SQRT_2)) + erf((b + m) / (s * SQRT_2)))
}

#[test]
fn criterion_7_fokker_planck_independence() {
    let (tau, eta1) = (2.0, 0.01);
    let sample = |eta2: f64, seed: u64| -> Vec<f64> {
        let cfg = cat_config(&[eta1, eta2], C7_SAMPLES, tau, seed);
        harness::cat_final_states(&cfg)
            .unwrap()
            .iter()
            .map(|s| s.b_single[0])
            .collect()
    };
    let with = sample(0.99, 10);
    let without = sample(0.0, 11);
    let p_pair = analytics::ks_two_sample(&with, &without).unwrap().p_value;
    let p_with = analytics::ks_one_sample(&with, mixture_cdf(tau, eta1)).unwrap().p_value;
    let p_without = analytics::ks_one_sample(&without, mixture_cdf(tau, eta1))
        .unwrap()
        .p_value;
    let passed = with.len() as u64 == C7_SAMPLES && [p_pair, p_with, p_without].iter().all(|&p| p > C7_ALPHA);
    let detail = format!(
        "KS p: η_2 = 0.99 vs η_2 = 0 {p_pair:.3}, η_2 = 0.99 vs mixture {p_with:.3}, η_2 = 0 vs mixture {p_without:.3}; threshold {C7_ALPHA}"
    );
    report(7, "Fokker-Planck law of B_1 independent of observer 2", passed, &detail);
}

fn invariant_sweep() -> Result<usize, String> {
    let mut rng = RngStream::new(77, 0);
    let kinds = ["atom-photo", "atom-homodyne", "atom-homodyne-diffusive", "qbm-fock"];
    let mut runs = 0;
    for k in 0..16 {
        let kind = kinds[k % kinds.len()];
        let n_ch = 1 + (rng.uniform() * 3.0) as usize;
        let total = 0.1 + 0.9 * rng.uniform();
        let weights: Vec<f64> = (0..n_ch).map(|_| 0.05 + rng.uniform()).collect();
        let sum: f64 = weights.iter().sum();
        let omega = 0.5 + 4.0 * rng.uniform();
        let mut text = format!("[model]\nkind = \"{kind}\"\nomega_damping_units = {omega:?}\n");
        let initial = match kind {
            "qbm-fock" => {
                text += "n_trunc = 6\n";
                "[initial_state]\nkind = \"coherent\"\nz_re = 0.3\nz_im = 0.2\n"
            }
            "atom-homodyne" => {
                text += "oscillator_amplitude = 3.0\n";
                "[initial_state]\nkind = \"excited\"\n"
            }
            _ => "[initial_state]\nkind = \"maximally-mixed\"\n",
        };
        text += "\n";
        for w in &weights {
            let scheme = if kind == "qbm-fock" {
                "scheme = \"homodyne-diffusive\"\n"
            } else {
                ""
            };
            text += &format!(
                "[[channels]]\nefficiency = {:?}\nphase_rad = {:?}\n{scheme}\n",
                total * w / sum * 0.999,
                std::f64::consts::TAU * rng.uniform()
            );
        }
        text += &format!(
            "{initial}\n[numerics]\ndt_damping_units = 1e-3\nt_final_damping_units = 2.0\nsample_stride = 100\ncheck_invariants = true\n\n\
             [ensemble]\nn_traj = 16\nseed = {k}\n\n[output]\nestimators = [\"O1\"]\n"
        );
        let cfg = ExperimentConfig::from_toml_str(&text).map_err(|e| format!("{kind}: {e}"))?;
        harness::simulate(&cfg).map_err(|e| format!("{kind}: {e}"))?;
        runs += 1;
    }
    Ok(runs)
}

/// Largest |z| between ensemble-mean Bloch components and the master equation.
fn recovery_worst_z(diffusive: bool) -> f64 {
    let omega = 1.5;
    let spec = if diffusive {
        models::build_atom_homodyne(omega, &[(0.4, 0.3), (0.3, 1.2)], true, None).unwrap()
    } else {
        models::build_atom_photodetection(omega, &[0.4, 0.3]).unwrap()
    };
    let dt = 1e-3;
    let engine = Engine::new(spec, dt).unwrap();
    let n_steps = 1000;
    let mut stats = vec![[RunningStats::default(); 3]; 3];
    for k in 0..4000 {
        let mut rng = RngStream::new(31 + diffusive as u64, k);
        let mut state = TrajectoryState::replicated(DensityMatrix::basis_state(2, 0).unwrap(), 2).unwrap();
        run_steps(&engine, &mut state, n_steps, &mut rng, |_, _, _| Ok(())).unwrap();
        let all = std::iter::once(&state.rho_super).chain(state.rho_single.iter());
        for (o, rho) in all.enumerate() {
            let b = rho.to_bloch().unwrap();
            for (a, v) in [b.x, b.y, b.z].into_iter().enumerate() {
                stats[o][a].push(v);
            }
        }
    }
    let exact = bloch_of(&rk4(excited_m2(), omega, n_steps as f64 * dt, 20_000));
    stats
        .iter()
        .flat_map(|obs| {
            obs.iter()
                .enumerate()
                .map(|(a, s)| s.estimate().unwrap().z_score(exact[a]).abs())
        })
        .fold(0.0, f64::max)
}

fn self_overlap_worst_z() -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for scenario in harness::SCENARIOS {
        let mut cfg = harness::scenario_config(scenario.name).unwrap();
        let cat = cfg.model.kind == mcsme::config::ModelKind::QbmCat;
        cfg.ensemble.n_traj = if cat { 4000 } else { 256 };
        cfg.ensemble.seed += 500;
        let n = cfg.channels.len();
        cfg.output.estimators = (1..=n).flat_map(|i| [format!("O{i}"), format!("O{i}{i}")]).collect();
        let acc = harness::simulate(&cfg).unwrap();
        for i in 0..n {
            let a = acc.estimate_tail(Estimator::RelativePurity(i)).unwrap();
            let b = acc.estimate_tail(Estimator::Purity(i)).unwrap();
            let combined = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
            let diff = (a.mean - b.mean).abs();
            let z = if combined > 0.0 {
                diff / combined
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
            pairs += 1;
        }
    }
    (worst, pairs)
}

fn unit_efficiency_defect() -> f64 {
    let mut worst = 0.0f64;
    for spec in [
        models::build_atom_photodetection(OMEGA, &[1.0]).unwrap(),
        models::build_atom_homodyne(OMEGA, &[(1.0, 0.0)], true, None).unwrap(),
    ] {
        let engine = Engine::new(spec, DT).unwrap();
        for k in 0..4 {
            let mut rng = RngStream::new(41, k);
            let mut state = TrajectoryState::replicated(DensityMatrix::maximally_mixed(2), 1).unwrap();
            run_steps(&engine, &mut state, 5000, &mut rng, |_, s, _| {
                worst = worst.max(s.rho_super.matrix().max_abs_diff(s.rho_single[0].matrix()));
                Ok(())
            })
            .unwrap();
        }
    }
    worst
}

fn replay_identical() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (tag, threads) in [("first", 1), ("second", 2)] {
        let mut cfg = harness::scenario_config("O1-homodyne-y").unwrap();
        cfg.numerics.t_final_damping_units = Some(5.0);
        Overrides {
            n_traj: Some(32),
            threads: Some(threads),
            out: Some(dir.path().join(tag)),
            ..Overrides::default()
        }
        .apply(&mut cfg);
        harness::run(&cfg).unwrap();
        let read = |f: &str| std::fs::read(dir.path().join(tag).join(f)).unwrap();
        outputs.push((read("O1.csv"), read("O11.csv")));
    }
    outputs[0] == outputs[1]
}

#[test]
fn criterion_8_property_suite() {
    let sweep = invariant_sweep();
    let z_photo = recovery_worst_z(false);
    let z_diff = recovery_worst_z(true);
    let (z_self, pairs) = self_overlap_worst_z();
    let defect = unit_efficiency_defect();
    let replay = replay_identical();
    let passed =
        sweep.is_ok() && z_photo < C8_SIGMAS && z_diff < C8_SIGMAS && z_self < C8_SIGMAS && defect < 1e-12 && replay;
    let detail = format!(
        "invariants {}; master-equation recovery worst |z| {z_photo:.2} (jump), {z_diff:.2} (diffusive); \
         O_i vs O_ii worst |z| {z_self:.2} over {pairs} pairs; η = 1 defect {defect:.1e}; replay {}",
        match &sweep {
            Ok(n) => format!("held on {n} random configs"),
            Err(e) => format!("violated ({e})"),
        },
        if replay { "identical" } else { "differs" }
    );
    report(8, "property suite", passed, &detail);
}
