//! Concrete models: the driven two-level atom, the damped oscillator in a
//! truncated Fock space, and the reduced two-branch description of a
//! decohering cat state.

use smallvec::SmallVec;
use statrs::function::erf::erf;

use crate::densmat::{make_atom_operators, make_fock_operators, DensityMatrix, C64};
use crate::engine::{ChannelConfig, ModelSpec};
use crate::error::{Error, Result};
use crate::stochastics::{sample_wiener, RngStream};

/// Saturation bound on the cat-state log-odds B.
pub const B_CLAMP: f64 = 30.0;
/// Largest η·dτ accepted by the cat SDE step.
pub const MAX_CAT_DRIFT_STEP: f64 = 0.01;
/// Largest probability mass a truncated coherent state may lose.
pub const MAX_TRUNCATION_LOSS: f64 = 1e-8;

/// Atom driven with H = ωσ_x and monitored by photodetectors.
pub fn build_atom_photodetection(omega: f64, efficiencies: &[f64]) -> Result<ModelSpec> {
    check_drive(omega)?;
    let ops = make_atom_operators();
    let channels = efficiencies
        .iter()
        .map(|&eta| ChannelConfig::photodetection(eta))
        .collect();
    ModelSpec::new(ops.sigma_x.scale_real(omega), ops.lowering, channels)
}

/// Atom driven with H = ωσ_x and monitored by homodyne detectors given as
/// `(η_i, φ_i)`. With `diffusive` the R → ∞ limit is used and `amplitude`
/// must be absent; otherwise `amplitude` is the common oscillator strength R.
pub fn build_atom_homodyne(
    omega: f64,
    channels: &[(f64, f64)],
    diffusive: bool,
    amplitude: Option<f64>,
) -> Result<ModelSpec> {
    check_drive(omega)?;
    let channels = match (diffusive, amplitude) {
        (true, None) => channels
            .iter()
            .map(|&(eta, phi)| ChannelConfig::homodyne_diffusive(eta, phi))
            .collect(),
        (false, Some(r)) => channels
            .iter()
            .map(|&(eta, phi)| ChannelConfig::homodyne(eta, r, phi))
            .collect(),
        (true, Some(_)) => {
            return Err(Error::InvalidModel(
                "the diffusive limit takes no oscillator amplitude".into(),
            ))
        }
        (false, None) => {
            return Err(Error::InvalidModel(
                "finite-amplitude homodyne needs an oscillator amplitude".into(),
            ))
        }
    };
    let ops = make_atom_operators();
    ModelSpec::new(ops.sigma_x.scale_real(omega), ops.lowering, channels)
}

/// Oscillator with H = ω a†a and L = a on `n_trunc` Fock levels.
pub fn build_qbm(omega: f64, n_trunc: usize, channels: Vec<ChannelConfig>) -> Result<ModelSpec> {
    check_drive(omega)?;
    let (a, a_dag) = make_fock_operators(n_trunc)?;
    ModelSpec::new((&a_dag * &a).scale_real(omega), a, channels)
}

fn check_drive(omega: f64) -> Result<()> {
    if !(omega.is_finite() && omega >= 0.0) {
        return Err(Error::InvalidModel(format!(
            "drive frequency {omega} must be finite and non-negative"
        )));
    }
    Ok(())
}

fn coherent_amplitudes(n_trunc: usize, z: C64) -> Vec<C64> {
    let mut amps = Vec::with_capacity(n_trunc);
    let mut term = C64::new((-0.5 * z.norm_sqr()).exp(), 0.0);
    for n in 0..n_trunc {
        amps.push(term);
        term = term * z / ((n + 1) as f64).sqrt();
    }
    amps
}

fn truncated_pure(amps: &[C64], what: &str) -> Result<DensityMatrix> {
    let weight: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if !(weight > 0.0) {
        return Err(Error::InvalidState(format!("{what} has zero norm")));
    }
    DensityMatrix::from_pure(amps)
}

/// |z⟩ truncated to `n_trunc` levels and renormalized.
pub fn coherent_state(n_trunc: usize, z: C64) -> Result<DensityMatrix> {
    if n_trunc < 2 {
        return Err(Error::InvalidDimension {
            dim: n_trunc,
            reason: "Fock truncation needs at least two levels",
        });
    }
    let amps = coherent_amplitudes(n_trunc, z);
    let kept: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if 1.0 - kept > MAX_TRUNCATION_LOSS {
        return Err(Error::config(
            "n_trunc",
            format!("{n_trunc} levels lose {:.2e} of the coherent state |{z}⟩", 1.0 - kept),
        ));
    }
    truncated_pure(&amps, "coherent state")
}

/// (|z⟩ + |−z⟩)/N truncated to `n_trunc` levels.
pub fn cat_state(n_trunc: usize, z: C64) -> Result<DensityMatrix> {
    coherent_state(n_trunc, z)?;
    let amps: Vec<C64> = coherent_amplitudes(n_trunc, z)
        .into_iter()
        .enumerate()
        .map(|(n, a)| if n % 2 == 0 { a * 2.0 } else { C64::new(0.0, 0.0) })
        .collect();
    truncated_pure(&amps, "cat state")
}

/// Rescaled time τ = 4 t r² cos²(φ − ψ) of the reduced cat model.
pub fn tau_from_time(t: f64, r: f64, phi: f64, psi: f64) -> f64 {
    4.0 * t * r * r * (phi - psi).cos().powi(2)
}

/// Log-odds of the two cat branches: ρ ∝ diag((1+A)/2, (1−A)/2) with A = tanh B.
#[derive(Debug, Clone, PartialEq)]
pub struct CatState {
    pub tau: f64,
    pub b: f64,
    pub b_single: SmallVec<[f64; 4]>,
}

impl CatState {
    /// Equal-weight start, B = B_i = 0.
    pub fn balanced(n_channels: usize) -> Self {
        CatState {
            tau: 0.0,
            b: 0.0,
            b_single: SmallVec::from_elem(0.0, n_channels),
        }
    }

    pub fn a(&self) -> f64 {
        self.b.tanh()
    }

    pub fn a_single(&self, i: usize) -> f64 {
        self.b_single[i].tanh()
    }

    /// Tr ρ_i ρ
    pub fn o_i(&self, i: usize) -> f64 {
        0.5 * (1.0 + self.a() * self.a_single(i))
    }

    /// Tr ρ_i ρ_j
    pub fn o_ij(&self, i: usize, j: usize) -> f64 {
        0.5 * (1.0 + self.a_single(i) * self.a_single(j))
    }

    pub fn density(a: f64) -> Result<DensityMatrix> {
        DensityMatrix::new(crate::densmat::ComplexMatrix::diagonal(&[
            C64::new(0.5 * (1.0 + a), 0.0),
            C64::new(0.5 * (1.0 - a), 0.0),
        ]))
    }
}

fn check_cat_step(state: &CatState, efficiencies: &[f64], dtau: f64) -> Result<f64> {
    if state.b_single.len() != efficiencies.len() {
        return Err(Error::InvalidModel(format!(
            "{} single observers for {} efficiencies",
            state.b_single.len(),
            efficiencies.len()
        )));
    }
    if efficiencies.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::EfficiencyOutOfRange(format!("{efficiencies:?}")));
    }
    let eta: f64 = efficiencies.iter().sum();
    if eta > 1.0 + 1e-12 {
        return Err(Error::EfficiencyOutOfRange(format!("total efficiency {eta} exceeds 1")));
    }
    if !(dtau > 0.0) || eta * dtau > MAX_CAT_DRIFT_STEP {
        return Err(Error::StepTooLarge {
            quantity: "η·dτ",
            value: eta * dtau,
            limit: MAX_CAT_DRIFT_STEP,
        });
    }
    Ok(eta)
}

fn clamp_b(b: f64) -> f64 {
    b.clamp(-B_CLAMP, B_CLAMP)
}

/// One Heun (predictor–corrector) step of
/// dB = η tanh B dτ + Σ √η_i dW_i, dB_i = η_i tanh B dτ + √η_i dW_i.
pub fn cat_sde_step(state: &mut CatState, efficiencies: &[f64], dtau: f64, rng: &mut RngStream) -> Result<()> {
    let eta = check_cat_step(state, efficiencies, dtau)?;
    let dw = sample_wiener(efficiencies.len(), dtau, rng);
    let noise: SmallVec<[f64; 4]> = efficiencies.iter().zip(&dw).map(|(e, w)| e.sqrt() * w).collect();
    let total_noise: f64 = noise.iter().sum();
    let slope = state.b.tanh();
    let predicted = state.b + eta * slope * dtau + total_noise;
    let mean_slope = 0.5 * (slope + predicted.tanh());
    state.b = clamp_b(state.b + eta * mean_slope * dtau + total_noise);
    for ((b_i, e), n) in state.b_single.iter_mut().zip(efficiencies).zip(&noise) {
        *b_i = clamp_b(*b_i + e * mean_slope * dtau + n);
    }
    state.tau += dtau;
    Ok(())
}

/// Euler–Maruyama version of [`cat_sde_step`], drawing the same increments.
pub fn cat_sde_step_euler(state: &mut CatState, efficiencies: &[f64], dtau: f64, rng: &mut RngStream) -> Result<()> {
    let eta = check_cat_step(state, efficiencies, dtau)?;
    let dw = sample_wiener(efficiencies.len(), dtau, rng);
    let slope = state.b.tanh();
    let mut total_noise = 0.0;
    for ((b_i, e), w) in state.b_single.iter_mut().zip(efficiencies).zip(&dw) {
        let n = e.sqrt() * w;
        total_noise += n;
        *b_i = clamp_b(*b_i + e * slope * dtau + n);
    }
    state.b = clamp_b(state.b + eta * slope * dtau + total_noise);
    state.tau += dtau;
    Ok(())
}

fn check_fp_args(tau: f64, eta1: f64) -> Result<(f64, f64)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config("tau", "must be positive"));
    }
    if !(eta1 > 0.0 && eta1 <= 1.0) {
        return Err(Error::EfficiencyOutOfRange(format!("η_1 = {eta1} must lie in (0, 1]")));
    }
    Ok((eta1 * tau, (eta1 * tau).sqrt()))
}

/// Density of B_1 at τ: the equal-weight mixture of N(±η_1τ, η_1τ).
pub fn fokker_planck_solution(tau: f64, b1: f64, eta1: f64) -> Result<f64> {
    let (mean, sd) = check_fp_args(tau, eta1)?;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let g = |m: f64| (-0.5 * ((b1 - m) / sd).powi(2)).exp();
    Ok(0.5 * norm * (g(mean) + g(-mean)))
}

/// Cumulative distribution of [`fokker_planck_solution`].
pub fn fokker_planck_cdf(tau: f64, b1: f64, eta1: f64) -> Result<f64> {
    let (mean, sd) = check_fp_args(tau, eta1)?;
    let phi = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    Ok(0.5 * (phi((b1 - mean) / sd) + phi((b1 + mean) / sd)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::unconditional_step;

    #[test]
    fn atom_builders() {
        let spec = build_atom_photodetection(20.0, &[0.5]).unwrap();
        assert_eq!(spec.channels().len(), 1);
        assert!((spec.hamiltonian()[(0, 1)].re - 20.0).abs() < 1e-15);
        let decay = build_atom_photodetection(0.0, &[0.5, 0.1]).unwrap();
        assert_eq!(decay.hamiltonian().norm_inf(), 0.0);
        assert!((decay.total_efficiency() - 0.6).abs() < 1e-15);
        let fig4 = build_atom_photodetection(20.0, &[0.7, 0.3]).unwrap();
        assert_eq!(fig4.channels().len(), 2);
        assert!(build_atom_photodetection(20.0, &[0.7, 0.4]).is_err());
        assert!(build_atom_photodetection(-1.0, &[0.5]).is_err());
    }

    #[test]
    fn homodyne_builders() {
        let fig5 = build_atom_homodyne(20.0, &[(0.1, 0.0)], true, None).unwrap();
        assert!(fig5.is_diffusive());
        let fig8 = build_atom_homodyne(
            20.0,
            &[(0.1, std::f64::consts::FRAC_PI_2), (0.1, std::f64::consts::FRAC_PI_2)],
            true,
            None,
        )
        .unwrap();
        assert_eq!(fig8.channels().len(), 2);
        assert!(build_atom_homodyne(20.0, &[(0.1, 0.0)], true, Some(3.0)).is_err());
        assert!(build_atom_homodyne(20.0, &[(0.1, 0.0)], false, None).is_err());

        // γ = 0 reproduces photodetection
        let zero = build_atom_homodyne(20.0, &[(0.4, 1.0)], false, Some(0.0)).unwrap();
        let photo = build_atom_photodetection(20.0, &[0.4]).unwrap();
        let l = zero.lindblad();
        assert_eq!(
            zero.channels()[0].jump_operator(l),
            photo.channels()[0].jump_operator(photo.lindblad())
        );
    }

    #[test]
    fn coherent_state_is_pure_with_right_mean() {
        let z = C64::new(1.2, -0.5);
        let rho = coherent_state(30, z).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        let (a, _) = make_fock_operators(30).unwrap();
        assert!((rho.expectation(&a) - z).norm() < 1e-9);
        assert!(coherent_state(5, C64::new(3.0, 0.0)).is_err());
    }

    #[test]
    fn cat_state_has_even_parity() {
        let rho = cat_state(30, C64::new(2.0, 0.0)).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        for n in (1..30).step_by(2) {
            assert_eq!(rho.matrix()[(n, n)].re, 0.0);
        }
        let (a, _) = make_fock_operators(30).unwrap();
        assert!(rho.expectation(&a).norm() < 1e-12);
    }

    #[test]
    fn coherent_state_decays_without_entropy() {
        let n = 30;
        let z0 = 1.5;
        let spec = build_qbm(0.0, n, vec![]).unwrap();
        let (a, _) = make_fock_operators(n).unwrap();
        let mut rho = coherent_state(n, C64::new(z0, 0.0)).unwrap();
        let dt = 2e-4;
        let steps = 20_000;
        for _ in 0..steps {
            rho = unconditional_step(&rho, &spec, dt).unwrap();
        }
        let t = steps as f64 * dt;
        assert!(rho.purity() > 1.0 - 1e-6, "purity {}", rho.purity());
        let mean = rho.expectation(&a);
        // first-order step: global bias ~ z0³ dt t / 2
        assert!((mean.re - z0 * (-t / 2.0).exp()).abs() < 2e-4, "{mean}");
        assert!(mean.im.abs() < 1e-12);
    }

    #[test]
    fn tau_rescaling() {
        assert!((tau_from_time(0.5, 2.0, 0.0, 0.0) - 8.0).abs() < 1e-15);
        assert!(tau_from_time(1.0, 2.0, std::f64::consts::FRAC_PI_2, 0.0).abs() < 1e-14);
    }

    #[test]
    fn saturated_drift_pushes_outward() {
        let mut rng = RngStream::new(2, 0);
        let n = 2000;
        let mut total = 0.0;
        for _ in 0..n {
            let mut s = CatState {
                tau: 0.0,
                b: 10.0,
                b_single: SmallVec::from_slice(&[10.0]),
            };
            cat_sde_step(&mut s, &[0.8], 0.01, &mut rng).unwrap();
            total += s.b - 10.0;
        }
        let mean = total / n as f64;
        let se = (0.8f64 * 0.01 / n as f64).sqrt();
        assert!((mean - 0.8 * 0.01).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn blind_cat_observer_learns_nothing() {
        let mut rng = RngStream::new(6, 0);
        let mut s = CatState::balanced(2);
        for _ in 0..1000 {
            cat_sde_step(&mut s, &[0.7, 0.0], 0.01, &mut rng).unwrap();
        }
        assert_eq!(s.b_single[1], 0.0);
        assert!((s.o_i(1) - 0.5).abs() < 1e-15);
        assert!((s.tau - 10.0).abs() < 1e-9);
    }

    #[test]
    fn cat_step_guards() {
        let mut rng = RngStream::new(0, 0);
        let mut s = CatState::balanced(2);
        assert!(cat_sde_step(&mut s, &[0.5, 0.5], 0.02, &mut rng).is_err());
        assert!(cat_sde_step(&mut s, &[0.7, 0.4], 0.001, &mut rng).is_err());
        assert!(cat_sde_step(&mut s, &[0.5], 0.001, &mut rng).is_err());
        s.b = 1e6;
        cat_sde_step(&mut s, &[0.5, 0.5], 0.01, &mut rng).unwrap();
        assert!(s.b <= B_CLAMP);
    }

    #[test]
    fn heun_and_euler_agree_in_distribution() {
        let eff = [0.7, 0.3];
        let n = 4000;
        let mean_abs = |euler: bool| {
            let mut acc = 0.0;
            for k in 0..n {
                let mut rng = RngStream::new(13, k);
                let mut s = CatState::balanced(2);
                for _ in 0..200 {
                    if euler {
                        cat_sde_step_euler(&mut s, &eff, 0.01, &mut rng).unwrap();
                    } else {
                        cat_sde_step(&mut s, &eff, 0.01, &mut rng).unwrap();
                    }
                }
                acc += s.b.abs();
            }
            acc / n as f64
        };
        // same increments, so the difference is the O(dτ) discretization bias
        let (h, e) = (mean_abs(false), mean_abs(true));
        assert!((h - e).abs() < 0.01, "{h} vs {e}");
    }

    #[test]
    fn cat_density_and_purities() {
        let rho = CatState::density(0.6).unwrap();
        assert!((rho.matrix()[(0, 0)].re - 0.8).abs() < 1e-15);
        let s = CatState {
            tau: 0.0,
            b: 0.0,
            b_single: SmallVec::from_slice(&[0.5f64.atanh(), (-0.5f64).atanh()]),
        };
        assert!((s.o_ij(0, 1) - 0.375).abs() < 1e-14);
        let r0 = CatState::density(s.a_single(0)).unwrap();
        let r1 = CatState::density(s.a_single(1)).unwrap();
        assert!((r0.relative_purity(&r1).unwrap() - s.o_ij(0, 1)).abs() < 1e-14);
    }

    #[test]
    fn fokker_planck_properties() {
        for b in [0.1, 0.7, 2.5] {
            let p = fokker_planck_solution(2.0, b, 0.4).unwrap();
            let q = fokker_planck_solution(2.0, -b, 0.4).unwrap();
            assert!((p - q).abs() < 1e-15);
        }
        // Simpson quadrature over ±12σ around both peaks
        let (tau, eta) = (3.0, 0.8);
        let (lo, hi, n) = (-30.0, 30.0, 20_000);
        let h = (hi - lo) / n as f64;
        let mut sum = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * fokker_planck_solution(tau, lo + k as f64 * h, eta).unwrap();
        }
        assert!((sum * h / 3.0 - 1.0).abs() < 1e-8);

        let narrow = fokker_planck_solution(1e-6, 0.0, 1.0).unwrap();
        assert!(narrow > 300.0);
        assert!(fokker_planck_solution(1e-6, 0.1, 1.0).unwrap() < 1e-100);
        assert!(fokker_planck_solution(0.0, 0.0, 0.5).is_err());

        assert!((fokker_planck_cdf(2.0, 0.0, 0.3).unwrap() - 0.5).abs() < 1e-15);
        let (x0, x1) = (0.3, 0.30001);
        let slope = (fokker_planck_cdf(2.0, x1, 0.3).unwrap() - fokker_planck_cdf(2.0, x0, 0.3).unwrap()) / (x1 - x0);
        assert!((slope - fokker_planck_solution(2.0, 0.300005, 0.3).unwrap()).abs() < 1e-6);
    }
}
