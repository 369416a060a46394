//! Fixed-point iteration for the remainder v = 𝐏_{≤N}u − ⟨1⟩.
//!
//! With z = ⟨1⟩ the remainder solves
//! v = −(γ+i)[⟨30⟩ + 𝓘(𝒩(v) + 2𝒩(z,v,v) + 𝒩(v,z,v) + 2𝒩(v,z,z) + 𝒩(z,v,z) − ℛ(z+v))],
//! where ⟨30⟩ = 𝓘(𝒩(z)).

use num_complex::Complex64;

use super::{duhamel, Trajectory};
use crate::error::{PhiError, Result};
use crate::nonlinearity::{cal_n, cal_n_self, cal_r};
use crate::spectral_core::{project_leq, FourierField};

#[derive(Clone, Debug)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Largest horizon accepted (contraction regime).
    pub t_max: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 50, t_max: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct PicardResult {
    pub v: Trajectory,
    pub iterations: usize,
    /// Largest ratio of successive iterate distances.
    pub contraction: f64,
    pub converged: bool,
    /// ℓ²-in-time distance between successive iterates.
    pub history: Vec<f64>,
}

impl PicardResult {
    pub fn contracting(&self) -> bool {
        self.contraction < 1.0
    }
}

/// ⟨30⟩ = 𝓘_γ(𝒩(z,z,z)) on the grid of `one`.
pub fn thirty_from(one: &Trajectory, gamma: f64) -> Result<Trajectory> {
    duhamel(&one.map(cal_n_self)?, gamma)
}

/// Γ(v) with every term of the remainder equation assembled separately.
pub fn veq2_rhs(one: &Trajectory, thirty: &Trajectory, v: &Trajectory, gamma: f64, n: u32) -> Result<Trajectory> {
    let two = Complex64::new(2.0, 0.0);
    let mut forcing = v.clone();
    for k in 0..v.len() {
        let z = &one.snapshots[k];
        let w = &v.snapshots[k];
        let zw = z.add(w);
        let f = cal_n_self(w)?
            .axpy(two, &cal_n(z, w, w)?)
            .add(&cal_n(w, z, w)?)
            .axpy(two, &cal_n(w, z, z)?)
            .add(&cal_n(z, w, z)?)
            .sub(&cal_r(&zw, &zw, &zw)?);
        forcing.snapshots[k] = project_leq(&f, n)?;
    }
    let integral = duhamel(&forcing, gamma)?;
    let c = Complex64::new(-gamma, -1.0);
    let mut out = integral;
    for (o, t) in out.snapshots.iter_mut().zip(&thirty.snapshots) {
        *o = project_leq(&o.add(t), n)?.scale(c);
    }
    Ok(out)
}

/// Iterate v ← Γ(v) from v = 0. `thirty` is computed from `one` when absent.
pub fn picard_solve_remainder(
    one: &Trajectory,
    thirty: Option<&Trajectory>,
    gamma: f64,
    n: u32,
    opts: &PicardOptions,
) -> Result<PicardResult> {
    let horizon = *one.times.last().unwrap();
    if horizon > opts.t_max + 1e-12 {
        return Err(PhiError::InvalidParameter(format!("horizon {horizon} above {}", opts.t_max)));
    }
    let owned;
    let thirty = match thirty {
        Some(t) => t,
        None => {
            owned = thirty_from(one, gamma)?;
            &owned
        }
    };
    if thirty.len() != one.len() {
        return Err(PhiError::InvalidParameter("⟨1⟩ and ⟨30⟩ grids differ".into()));
    }
    let mut v = one.map(|u| Ok(FourierField::zeros(u.lattice())))?;
    let mut history = Vec::new();
    let mut contraction: f64 = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        let next = veq2_rhs(one, thirty, &v, gamma, n)?;
        let d = next.l2_time_distance(&v)?;
        let scale = next.snapshots.iter().map(|u| u.norm()).fold(0.0, f64::max).max(1e-300);
        if let Some(&prev) = history.last() {
            if prev > 1e-12 * scale {
                contraction = contraction.max(d / prev);
            }
        }
        history.push(d);
        v = next;
        iterations += 1;
        if d <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(PicardResult { v, iterations, contraction, converged, history })
}
