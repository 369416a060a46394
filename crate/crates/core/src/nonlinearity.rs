//! The renormalized cubic nonlinearity and its trilinear pieces.
//!
//! For fields u₁, u₂, u₃ the non-pairing form is
//! 𝒩(u₁,u₂,u₃)(n) = Σ_{n=n₁−n₂+n₃, n₂≠n₁, n₂≠n₃} û₁(n₁) conj(û₂(n₂)) û₃(n₃),
//! evaluated as the dealiased product u₁ū₂u₃ minus the two pairing sums plus the
//! doubly removed diagonal ℛ. Then 𝔑 = 𝒩 − ℛ = |u|²u − 2S₂u.

use num_complex::Complex64;

use crate::error::{PhiError, Result};
use crate::spectral_core::{dyadic_of, in_dyadic_shell, to_physical, triple_product, FourierField};

/// Dyadic separation used for "≫": N ≫ K means N ≥ `GAP`·K.
pub const GAP: u32 = 4;

/// Unrestricted dealiased product 𝐏(u₁ū₂u₃).
pub fn cubic(u1: &FourierField, u2: &FourierField, u3: &FourierField) -> Result<FourierField> {
    triple_product(u1, u2, u3)
}

/// 𝒩(u₁,u₂,u₃).
pub fn cal_n(u1: &FourierField, u2: &FourierField, u3: &FourierField) -> Result<FourierField> {
    let full = triple_product(u1, u2, u3)?;
    let p12 = u1.dot(u2);
    let p32 = u3.dot(u2);
    let (a, b, c) = (u1.coeffs(), u2.coeffs(), u3.coeffs());
    Ok(full.map_indexed(|i, f| f - p12 * c[i] - p32 * a[i] + a[i] * b[i].conj() * c[i]))
}

/// 𝒩(u,u,u).
pub fn cal_n_self(u: &FourierField) -> Result<FourierField> {
    cal_n(u, u, u)
}

/// ℛ(u₁,u₂,u₃)(n) = û₁(n) conj(û₂(n)) û₃(n).
pub fn cal_r(u1: &FourierField, u2: &FourierField, u3: &FourierField) -> Result<FourierField> {
    u1.check_same(u2)?;
    u1.check_same(u3)?;
    let (b, c) = (u2.coeffs(), u3.coeffs());
    Ok(u1.map_indexed(|i, a| a * b[i].conj() * c[i]))
}

/// 𝔑(u) = |u|²u − 2S₂(u)u.
pub fn renorm_n(u: &FourierField) -> Result<FourierField> {
    let m = u.mass();
    Ok(triple_product(u, u, u)?.axpy(Complex64::new(-2.0 * m, 0.0), u))
}

/// Wick nonlinearity |u|²u − 2σu.
pub fn wick_n(u: &FourierField, sigma: f64) -> Result<FourierField> {
    Ok(triple_product(u, u, u)?.axpy(Complex64::new(-2.0 * sigma, 0.0), u))
}

/// S₄(u) = avg_x |u(x)|⁴ (exact on the padded grid).
pub fn s4(u: &FourierField) -> f64 {
    to_physical(u).average(|z| z.norm_sqr().powi(2))
}

/// H_imp(u) = Σ⟨n⟩²|û|² + ½S₄ − S₂², conserved by the γ=0 flow with 𝔑.
pub fn h_imp(u: &FourierField) -> f64 {
    let kinetic: f64 = u.coeffs().iter().zip(u.lattice().bsq_all()).map(|(c, b)| b * c.norm_sqr()).sum();
    let m = u.mass();
    kinetic + 0.5 * s4(u) - m * m
}

/// Im⟨𝔑(u), u⟩, zero for every u.
pub fn mass_pairing_imag(u: &FourierField) -> Result<f64> {
    Ok(renorm_n(u)?.dot(u).im)
}

/// Index set restriction for the trilinear oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Restriction {
    Full,
    /// n₂ ≠ n₁ and n₂ ≠ n₃.
    NonPairing,
    /// n₁ = n₂ = n₃.
    ResonantDiagonal,
}

/// Conjugation pattern is always (u₁, ū₂, u₃).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrilinearSpec {
    pub restriction: Restriction,
    /// Optional dyadic localizers (N₁, N₂, N₃).
    pub shells: Option<[u32; 3]>,
}

impl TrilinearSpec {
    pub fn new(restriction: Restriction) -> Self {
        Self { restriction, shells: None }
    }
}

/// Brute-force triple loop over lattice triples honouring `spec`.
pub fn oracle_trilinear(
    spec: &TrilinearSpec,
    u1: &FourierField,
    u2: &FourierField,
    u3: &FourierField,
) -> Result<FourierField> {
    u1.check_same(u2)?;
    u1.check_same(u3)?;
    let lat = u1.lattice();
    if lat.n_cut() > 8 {
        return Err(PhiError::CostGuard(format!("oracle needs N_cut <= 8, got {}", lat.n_cut())));
    }
    let modes = lat.modes();
    let keep = |i: usize, slot: usize| match spec.shells {
        Some(s) => in_dyadic_shell(lat.bsq(i), s[slot]),
        None => true,
    };
    let mut out = vec![Complex64::default(); lat.len()];
    for (i1, m1) in modes.iter().enumerate() {
        if !keep(i1, 0) {
            continue;
        }
        for (i2, m2) in modes.iter().enumerate() {
            if !keep(i2, 1) {
                continue;
            }
            let a = u1.coeffs()[i1] * u2.coeffs()[i2].conj();
            for (i3, m3) in modes.iter().enumerate() {
                if !keep(i3, 2) {
                    continue;
                }
                let ok = match spec.restriction {
                    Restriction::Full => true,
                    Restriction::NonPairing => i2 != i1 && i2 != i3,
                    Restriction::ResonantDiagonal => i1 == i2 && i2 == i3,
                };
                if !ok {
                    continue;
                }
                if let Some(j) = lat.index_of([m1[0] - m2[0] + m3[0], m1[1] - m2[1] + m3[1]]) {
                    out[j] += a * u3.coeffs()[i3];
                }
            }
        }
    }
    FourierField::from_coeffs(lat, out)
}

fn keep_where<F: Fn(f64) -> bool>(u: &FourierField, pred: F) -> FourierField {
    let lat = u.lattice().clone();
    u.map_indexed(|i, c| if pred(lat.bsq(i)) { c } else { Complex64::default() })
}

/// 𝒩(𝐏_{N₁}u₁, 𝐏_{N₂}u₂, 𝐏_{N₃}u₃).
pub fn cal_n_shells(u1: &FourierField, u2: &FourierField, u3: &FourierField, shells: [u32; 3]) -> Result<FourierField> {
    let p = |u: &FourierField, n: u32| keep_where(u, |b| in_dyadic_shell(b, n));
    cal_n(&p(u1, shells[0]), &p(u2, shells[1]), &p(u3, shells[2]))
}

fn occupied_scales(u: &FourierField) -> Vec<u32> {
    let mut s: Vec<u32> = u
        .coeffs()
        .iter()
        .zip(u.lattice().bsq_all())
        .filter(|(c, _)| c.norm_sqr() > 0.0)
        .map(|(_, &b)| dyadic_of(b))
        .collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// High-frequency part 𝒩^{j,>} for j ∈ {1, 2}: slot j carries 𝐏_{≫ N_a ∨ N_b}
/// of the two other dyadic scales.
pub fn cal_n_separated(j: usize, u1: &FourierField, u2: &FourierField, u3: &FourierField) -> Result<FourierField> {
    if j != 1 && j != 2 {
        return Err(PhiError::InvalidParameter(format!("slot {j} not in {{1,2}}")));
    }
    let (hi, others) = if j == 1 { (u1, [u2, u3]) } else { (u2, [u1, u3]) };
    let mut acc = FourierField::zeros(u1.lattice());
    for &na in &occupied_scales(others[0]) {
        for &nb in &occupied_scales(others[1]) {
            let floor = (GAP * na.max(nb)) as f64;
            let h = keep_where(hi, |b| b >= floor * floor);
            let a = keep_where(others[0], |b| in_dyadic_shell(b, na));
            let c = keep_where(others[1], |b| in_dyadic_shell(b, nb));
            let term = if j == 1 { cal_n(&h, &a, &c)? } else { cal_n(&a, &h, &c)? };
            acc = acc.add(&term);
        }
    }
    Ok(acc)
}

/// Complement 𝒩^{j,<} = 𝒩 − 𝒩^{j,>}.
pub fn cal_n_unseparated(j: usize, u1: &FourierField, u2: &FourierField, u3: &FourierField) -> Result<FourierField> {
    Ok(cal_n(u1, u2, u3)?.sub(&cal_n_separated(j, u1, u2, u3)?))
}
