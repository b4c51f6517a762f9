#![allow(dead_code)]

use num_complex::Complex64 as C64;

pub type M2 = [[C64; 2]; 2];

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn m_mul(a: &M2, b: &M2) -> M2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for j in 0..2 {
        for k in 0..2 {
            out[j][k] = a[j][0] * b[0][k] + a[j][1] * b[1][k];
        }
    }
    out
}

pub fn m_dag(a: &M2) -> M2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

pub fn m_lin(terms: &[(C64, &M2)]) -> M2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for (c, m) in terms {
        for j in 0..2 {
            for k in 0..2 {
                out[j][k] += c * m[j][k];
            }
        }
    }
    out
}

/// −i[ωσ_x, ρ] + σ₋ρσ₊ − ½{σ₊σ₋, ρ}
pub fn lindblad_rhs(rho: &M2, omega: f64) -> M2 {
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let h: M2 = [[zero, C64::new(omega, 0.0)], [C64::new(omega, 0.0), zero]];
    let l: M2 = [[zero, zero], [one, zero]];
    let ld = m_dag(&l);
    let ldl = m_mul(&ld, &l);
    let hr = m_mul(&h, rho);
    let rh = m_mul(rho, &h);
    let jump = m_mul(&m_mul(&l, rho), &ld);
    let a = m_mul(&ldl, rho);
    let b = m_mul(rho, &ldl);
    m_lin(&[
        (-I, &hr),
        (I, &rh),
        (one, &jump),
        (C64::new(-0.5, 0.0), &a),
        (C64::new(-0.5, 0.0), &b),
    ])
}

pub fn rk4(rho0: M2, omega: f64, t: f64, n: usize) -> M2 {
    let h = t / n as f64;
    let mut rho = rho0;
    let one = C64::new(1.0, 0.0);
    for _ in 0..n {
        let k1 = lindblad_rhs(&rho, omega);
        let k2 = lindblad_rhs(&m_lin(&[(one, &rho), (C64::new(0.5 * h, 0.0), &k1)]), omega);
        let k3 = lindblad_rhs(&m_lin(&[(one, &rho), (C64::new(0.5 * h, 0.0), &k2)]), omega);
        let k4 = lindblad_rhs(&m_lin(&[(one, &rho), (C64::new(h, 0.0), &k3)]), omega);
        rho = m_lin(&[
            (one, &rho),
            (C64::new(h / 6.0, 0.0), &k1),
            (C64::new(h / 3.0, 0.0), &k2),
            (C64::new(h / 3.0, 0.0), &k3),
            (C64::new(h / 6.0, 0.0), &k4),
        ]);
    }
    rho
}

/// Basis order (|e⟩, |g⟩): z = ρ_ee − ρ_gg, x = 2 Re ρ_eg, y = −2 Im ρ_eg.
pub fn bloch_of(rho: &M2) -> [f64; 3] {
    [2.0 * rho[0][1].re, -2.0 * rho[0][1].im, (rho[0][0] - rho[1][1]).re]
}

/// |e⟩⟨e|
pub fn excited_m2() -> M2 {
    let (one, zero) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
    [[one, zero], [zero, zero]]
}
