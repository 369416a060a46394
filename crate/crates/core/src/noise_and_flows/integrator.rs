//! Time stepping for ∂_t u = (γ+i)(Δ−1)u − (γ+i)𝐏_{≤N}𝔑(𝐏_{≤N}u) + √(2γ)𝐏_{≤N}ξ.
//!
//! The nonlinear vector field splits as −(γ+i)|u|²u plus the mass term
//! 2(γ+i)m·u with m = S₂ (PDE) or m = σ_N (Wick). The mass term is integrated
//! exactly, the cubic part by implicit midpoint, and the linear part together with
//! the noise by the exact OU step.

use num_complex::Complex64;

use super::{ou_coefficients, DynamicsConfig, Integrator, NoisePath, Renormalization, Trajectory};
use crate::error::{PhiError, Result};
use crate::nonlinearity::{renorm_n, wick_n};
use crate::spectral_core::{triple_product, FourierField};

const MIDPOINT_TOL: f64 = 1e-14;
const MIDPOINT_MAX_ITER: usize = 200;
const GROWTH_LIMIT: f64 = 10.0;

struct Stepper<'a> {
    cfg: &'a DynamicsConfig,
    inside: Vec<bool>,
    full: bool,
    sigma: f64,
    decay: Vec<Complex64>,
    scale: Vec<f64>,
    phi1: Vec<Complex64>,
    t: f64,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a DynamicsConfig, u0: &FourierField) -> Self {
        let lat = u0.lattice();
        let n2 = (cfg.n_trunc as f64).powi(2);
        let inside: Vec<bool> = lat.bsq_all().iter().map(|&b| b <= n2).collect();
        let full = inside.iter().all(|&x| x);
        let mut decay = Vec::with_capacity(lat.len());
        let mut scale = Vec::with_capacity(lat.len());
        let mut phi1 = Vec::with_capacity(lat.len());
        for (i, &b) in lat.bsq_all().iter().enumerate() {
            let (d, c) = ou_coefficients(cfg.gamma, cfg.h, b);
            decay.push(d);
            scale.push(if inside[i] { c } else { 0.0 });
            let zh = Complex64::new(cfg.gamma, 1.0) * (b * cfg.h);
            phi1.push(if zh.norm() < 1e-8 { 1.0 - 0.5 * zh } else { (1.0 - (-zh).exp()) / zh });
        }
        Self { cfg, inside, full, sigma: cfg.sigma(), decay, scale, phi1, t: 0.0 }
    }

    fn project(&self, u: &FourierField) -> FourierField {
        if self.full {
            u.clone()
        } else {
            u.map_indexed(|i, c| if self.inside[i] { c } else { Complex64::default() })
        }
    }

    fn reject(&self, reason: String) -> PhiError {
        PhiError::StepRejected { t: self.t, reason }
    }

    /// Exact flow of ∂_t u = 2(γ+i)m·u over τ on the retained modes.
    fn mass_flow(&self, u: &mut FourierField, tau: f64) -> Result<()> {
        let g = self.cfg.gamma;
        let integral = match self.cfg.renorm {
            Renormalization::Wick => self.sigma * tau,
            Renormalization::Pde => {
                let s: f64 = u.coeffs().iter().zip(&self.inside).filter(|(_, &k)| k).map(|(c, _)| c.norm_sqr()).sum();
                if g > 0.0 {
                    let q = 1.0 - 4.0 * g * s * tau;
                    if q <= 0.1 {
                        return Err(self.reject(format!("mass blow-up factor {q:.3}")));
                    }
                    -q.ln() / (4.0 * g)
                } else {
                    s * tau
                }
            }
        };
        let mult = (Complex64::new(2.0 * g, 2.0) * integral).exp();
        for (c, &k) in u.coeffs_mut().iter_mut().zip(&self.inside) {
            if k {
                *c *= mult;
            }
        }
        Ok(())
    }

    /// Implicit midpoint for ∂_t u = −(γ+i)𝐏|u|²u over τ.
    fn cubic_flow(&self, u: &mut FourierField, tau: f64) -> Result<()> {
        let a = Complex64::new(-self.cfg.gamma, -1.0) * tau;
        let rhs = |w: &FourierField| -> Result<FourierField> {
            let p = self.project(w);
            Ok(self.project(&triple_product(&p, &p, &p)?))
        };
        let u0 = self.project(u);
        let scale = u0.norm().max(1e-300);
        let mut w = u0.axpy(a, &rhs(&u0)?);
        let mut converged = false;
        let mut prev = f64::INFINITY;
        for _ in 0..MIDPOINT_MAX_ITER {
            let mid = u0.add(&w).scale(Complex64::new(0.5, 0.0));
            let next = u0.axpy(a, &rhs(&mid)?);
            let diff = next.distance(&w);
            w = next;
            // stalled at rounding level
            if diff <= MIDPOINT_TOL * scale || (diff >= prev && diff <= 1e3 * MIDPOINT_TOL * scale) {
                converged = true;
                break;
            }
            prev = diff;
        }
        if !converged {
            return Err(self.reject("implicit midpoint did not converge".into()));
        }
        for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
            if self.inside[i] {
                *c = w.coeffs()[i];
            }
        }
        Ok(())
    }

    fn nonlinear(&self, u: &mut FourierField, tau: f64) -> Result<()> {
        self.mass_flow(u, 0.5 * tau)?;
        self.cubic_flow(u, tau)?;
        self.mass_flow(u, 0.5 * tau)
    }

    fn linear(&self, u: &mut FourierField, db: &[Complex64]) {
        for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
            *c = self.decay[i] * *c + self.scale[i] * db[i];
        }
    }

    fn free(&self, u: &mut FourierField, tau: f64) {
        let lat = u.lattice().clone();
        for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
            *c *= Complex64::from_polar(1.0, -tau * lat.bsq(i));
        }
    }

    fn strang(&self, u: &mut FourierField, db: &[Complex64]) -> Result<()> {
        let h = self.cfg.h;
        if self.cfg.nonlinear {
            self.nonlinear(u, 0.5 * h)?;
        }
        self.linear(u, db);
        if self.cfg.nonlinear {
            self.nonlinear(u, 0.5 * h)?;
        }
        Ok(())
    }

    fn yoshida(&self, u: &mut FourierField) -> Result<()> {
        let c = 2f64.powf(1.0 / 3.0);
        let w1 = 1.0 / (2.0 - c);
        let w0 = -c / (2.0 - c);
        for w in [w1, w0, w1] {
            let tau = w * self.cfg.h;
            if self.cfg.nonlinear {
                self.nonlinear(u, 0.5 * tau)?;
            }
            self.free(u, tau);
            if self.cfg.nonlinear {
                self.nonlinear(u, 0.5 * tau)?;
            }
        }
        Ok(())
    }

    fn exp_euler(&self, u: &mut FourierField, db: &[Complex64]) -> Result<()> {
        let forcing = if self.cfg.nonlinear {
            let p = self.project(u);
            let n = match self.cfg.renorm {
                Renormalization::Pde => renorm_n(&p)?,
                Renormalization::Wick => wick_n(&p, self.sigma)?,
            };
            Some(self.project(&n))
        } else {
            None
        };
        let z = Complex64::new(-self.cfg.gamma, -1.0) * self.cfg.h;
        for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
            let mut next = self.decay[i] * *c + self.scale[i] * db[i];
            if let Some(f) = &forcing {
                next += z * self.phi1[i] * f.coeffs()[i];
            }
            *c = next;
        }
        Ok(())
    }
}

/// Integrate from `u0` with the increments of `path`.
pub fn evolve(u0: &FourierField, path: &NoisePath, cfg: &DynamicsConfig) -> Result<Trajectory> {
    let steps = cfg.steps()?;
    let lat = u0.lattice();
    if !lat.compatible(path.lattice()) {
        return Err(PhiError::LatticeMismatch("initial data and noise path".into()));
    }
    if cfg.n_trunc > lat.n_cut() || cfg.n_trunc == 0 {
        return Err(PhiError::CutoffExceeded { requested: cfg.n_trunc, available: lat.n_cut() });
    }
    if (path.h() - cfg.h).abs() > 1e-12 * cfg.h || path.steps() < steps {
        return Err(PhiError::InvalidParameter(format!(
            "path (h = {}, {} steps) does not cover config (h = {}, {} steps)",
            path.h(),
            path.steps(),
            cfg.h,
            steps
        )));
    }
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(PhiError::InvalidParameter(format!("gamma = {}", cfg.gamma)));
    }
    if cfg.integrator == Integrator::StrangYoshida4 && cfg.gamma > 0.0 {
        return Err(PhiError::InvalidParameter("fourth-order composition requires gamma = 0".into()));
    }
    let every = cfg.record_every.max(1);
    let mut st = Stepper::new(cfg, u0);
    let mut u = u0.clone();
    let mut times = vec![0.0];
    let mut snapshots = vec![u.clone()];
    for k in 0..steps {
        let before = u.norm();
        let db = path.increment(k);
        match cfg.integrator {
            Integrator::Strang => st.strang(&mut u, db)?,
            Integrator::StrangYoshida4 => st.yoshida(&mut u)?,
            Integrator::ExpEuler => st.exp_euler(&mut u, db)?,
        }
        let after = u.norm();
        st.t = (k + 1) as f64 * cfg.h;
        if !after.is_finite() || (before > 1e-12 && after > GROWTH_LIMIT * before) {
            return Err(st.reject(format!("one-step growth {before:.3e} -> {after:.3e}")));
        }
        if (k + 1) % every == 0 {
            times.push(st.t);
            snapshots.push(u.clone());
        }
    }
    Ok(Trajectory { times, snapshots, gamma: cfg.gamma, config: Some(cfg.clone()), provenance: Some((path.seed, path.member)) })
}
