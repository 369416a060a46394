//! Brownian mode paths, linear propagators, the stochastic convolution, Duhamel
//! quadrature, truncated dynamics, the gauge transform and the remainder.
//!
//! Time runs on a uniform grid t_k = k·h. The complex Brownian increments satisfy
//! E|ΔB_n(k)|² = h, and the damped linear flow multiplies mode n by
//! e^{−(γ+i)t⟨n⟩²}.

mod integrator;
mod picard;

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PhiError, Result};
use crate::gibbs_measures::{sigma_n, GaussianSample};
use crate::spectral_core::{project_leq, FourierField, ModeLattice};
use crate::util::{complex_normal, stream_rng, tag};

pub use integrator::evolve;
pub use picard::{picard_solve_remainder, veq2_rhs, PicardOptions, PicardResult};

/// Complex Brownian increments ΔB_n(k) for every retained mode.
#[derive(Clone, Debug)]
pub struct NoisePath {
    lattice: Arc<ModeLattice>,
    h: f64,
    steps: usize,
    pub seed: u64,
    pub member: u64,
    level: u32,
    incr: Vec<Complex64>,
}

impl NoisePath {
    /// `steps` increments of width `h`, drawn from the (seed, member) stream.
    pub fn generate(lattice: &Arc<ModeLattice>, h: f64, steps: usize, seed: u64, member: u64) -> Self {
        let mut rng = stream_rng(seed, tag::NOISE, member);
        let incr = (0..steps * lattice.len()).map(|_| complex_normal(&mut rng, h)).collect();
        Self { lattice: lattice.clone(), h, steps, seed, member, level: 0, incr }
    }

    pub fn zero(lattice: &Arc<ModeLattice>, h: f64, steps: usize) -> Self {
        let incr = vec![Complex64::default(); steps * lattice.len()];
        Self { lattice: lattice.clone(), h, steps, seed: 0, member: 0, level: 0, incr }
    }

    pub fn lattice(&self) -> &Arc<ModeLattice> {
        &self.lattice
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn t_final(&self) -> f64 {
        self.h * self.steps as f64
    }

    /// Increments of step k, indexed by mode.
    pub fn increment(&self, k: usize) -> &[Complex64] {
        let n = self.lattice.len();
        &self.incr[k * n..(k + 1) * n]
    }

    /// B_n(t_k) for all modes.
    pub fn brownian_at(&self, k: usize) -> Vec<Complex64> {
        let mut b = vec![Complex64::default(); self.lattice.len()];
        for j in 0..k {
            for (acc, d) in b.iter_mut().zip(self.increment(j)) {
                *acc += d;
            }
        }
        b
    }

    /// Halve h by Brownian-bridge midpoints; pairs of fine increments sum to the coarse ones.
    pub fn refine(&self) -> Self {
        let n = self.lattice.len();
        let mut rng = stream_rng(self.seed, tag::BRIDGE + self.level as u64, self.member);
        let q = (0.25 * self.h).sqrt();
        let mut incr = Vec::with_capacity(2 * self.incr.len());
        for k in 0..self.steps {
            let coarse = self.increment(k);
            let first: Vec<Complex64> = coarse.iter().map(|d| 0.5 * d + q * complex_normal(&mut rng, 1.0)).collect();
            let second: Vec<Complex64> = coarse.iter().zip(&first).map(|(d, f)| d - f).collect();
            incr.extend(first);
            incr.extend(second);
        }
        debug_assert_eq!(incr.len(), 2 * self.steps * n);
        Self {
            lattice: self.lattice.clone(),
            h: 0.5 * self.h,
            steps: 2 * self.steps,
            seed: self.seed,
            member: self.member,
            level: self.level + 1,
            incr,
        }
    }

    /// Sum consecutive pairs of increments.
    pub fn coarsen(&self) -> Result<Self> {
        if self.steps % 2 != 0 {
            return Err(PhiError::InvalidParameter("odd step count".into()));
        }
        let mut incr = Vec::with_capacity(self.incr.len() / 2);
        for k in 0..self.steps / 2 {
            let (a, b) = (self.increment(2 * k), self.increment(2 * k + 1));
            incr.extend(a.iter().zip(b).map(|(x, y)| x + y));
        }
        Ok(Self {
            lattice: self.lattice.clone(),
            h: 2.0 * self.h,
            steps: self.steps / 2,
            seed: self.seed,
            member: self.member,
            level: self.level.saturating_sub(1),
            incr,
        })
    }
}

/// Multiply û(n) by e^{−(γ|t| + i t′)⟨n⟩²}.
pub fn propagator(u: &FourierField, gamma: f64, t: f64, t_prime: f64) -> FourierField {
    let lat = u.lattice().clone();
    let z = Complex64::new(-gamma * t.abs(), -t_prime);
    u.map_indexed(|i, c| c * (z * lat.bsq(i)).exp())
}

/// Per-step OU data for one mode: multiplier e^{−(γ+i)h⟨n⟩²} and the factor c with
/// η = c·ΔB, c² = (1 − e^{−2γh⟨n⟩²})/(h⟨n⟩²).
pub fn ou_coefficients(gamma: f64, h: f64, bsq: f64) -> (Complex64, f64) {
    let decay = (Complex64::new(-gamma, -1.0) * (h * bsq)).exp();
    let scale = (-(-2.0 * gamma * h * bsq).exp_m1() / (h * bsq)).sqrt();
    (decay, scale)
}

/// Truncated dynamics flavour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Renormalization {
    /// 𝔑 = |u|²u − 2S₂u.
    Pde,
    /// |u|²u − 2σ_N u.
    Wick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Exact linear/noise step between two half nonlinear steps.
    Strang,
    /// Fourth-order triple-jump composition of `Strang` (γ = 0 only).
    StrangYoshida4,
    /// Exponential Euler with the exact OU increment.
    ExpEuler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub gamma: f64,
    pub n_trunc: u32,
    pub renorm: Renormalization,
    pub h: f64,
    pub t_final: f64,
    pub integrator: Integrator,
    /// When false only the linear flow and the noise act.
    pub nonlinear: bool,
    pub record_every: usize,
}

impl DynamicsConfig {
    pub fn new(gamma: f64, n_trunc: u32, renorm: Renormalization, h: f64, t_final: f64) -> Self {
        Self { gamma, n_trunc, renorm, h, t_final, integrator: Integrator::Strang, nonlinear: true, record_every: 1 }
    }

    /// Number of steps; T must be a multiple of h.
    pub fn steps(&self) -> Result<usize> {
        if !(self.h > 0.0 && self.t_final >= 0.0) {
            return Err(PhiError::InvalidParameter(format!("h = {}, T = {}", self.h, self.t_final)));
        }
        let k = (self.t_final / self.h).round();
        if (k * self.h - self.t_final).abs() > 1e-9 * self.t_final.max(1.0) {
            return Err(PhiError::InvalidParameter(format!("T = {} not a multiple of h = {}", self.t_final, self.h)));
        }
        Ok(k as usize)
    }

    /// σ_N when the Wick renormalization is selected.
    pub fn sigma(&self) -> f64 {
        match self.renorm {
            Renormalization::Wick => sigma_n(self.n_trunc),
            Renormalization::Pde => 0.0,
        }
    }
}

/// Snapshots u(t_k) on a uniform grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<FourierField>,
    pub gamma: f64,
    pub config: Option<DynamicsConfig>,
    /// (seed, member) of the noise and initial data that produced the trajectory.
    pub provenance: Option<(u64, u64)>,
}

impl Trajectory {
    pub fn lattice(&self) -> &Arc<ModeLattice> {
        self.snapshots[0].lattice()
    }
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }
    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
    pub fn last(&self) -> &FourierField {
        self.snapshots.last().unwrap()
    }

    /// Grid spacing, checking uniformity.
    pub fn dt(&self) -> Result<f64> {
        if self.times.len() < 2 {
            return Err(PhiError::InvalidParameter("trajectory needs two samples".into()));
        }
        let h = self.times[1] - self.times[0];
        for w in self.times.windows(2) {
            if ((w[1] - w[0]) - h).abs() > 1e-9 * h {
                return Err(PhiError::InvalidParameter("non-uniform time grid".into()));
            }
        }
        Ok(h)
    }

    /// Snapshot-wise map keeping times and metadata.
    pub fn map<F: Fn(&FourierField) -> Result<FourierField>>(&self, f: F) -> Result<Trajectory> {
        Ok(Trajectory {
            times: self.times.clone(),
            snapshots: self.snapshots.iter().map(f).collect::<Result<_>>()?,
            gamma: self.gamma,
            config: self.config.clone(),
            provenance: self.provenance,
        })
    }

    fn check_times(&self, other: &Trajectory) -> Result<()> {
        let same = self.times.len() == other.times.len()
            && self.times.iter().zip(&other.times).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
        if same {
            Ok(())
        } else {
            Err(PhiError::InvalidParameter("trajectories on different time grids".into()))
        }
    }

    /// sup_k ‖u_k − w_k‖_{ℓ²}.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        self.check_times(other)?;
        Ok(self.snapshots.iter().zip(&other.snapshots).map(|(a, b)| a.distance(b)).fold(0.0, f64::max))
    }

    /// (Σ_k h‖u_k − w_k‖²)^{1/2}.
    pub fn l2_time_distance(&self, other: &Trajectory) -> Result<f64> {
        self.check_times(other)?;
        let h = self.dt()?;
        Ok((h * self.snapshots.iter().zip(&other.snapshots).map(|(a, b)| a.distance(b).powi(2)).sum::<f64>()).sqrt())
    }

    /// Snapshot files plus a manifest with times and provenance.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (k, u) in self.snapshots.iter().enumerate() {
            let name = format!("snapshot_{k:06}.json");
            std::fs::write(dir.join(&name), serde_json::to_string(&u.to_snapshot())?)?;
            files.push(name);
        }
        let manifest = serde_json::json!({
            "times": self.times,
            "gamma": self.gamma,
            "config": self.config,
            "provenance": self.provenance,
            "files": files,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Exact OU recursion from `u0`: û ← e^{−(γ+i)h⟨n⟩²}û + c_n ΔB_n on ⟨n⟩ ≤ N; modes
/// above N only feel the linear flow.
pub fn ou_evolve(u0: &FourierField, path: &NoisePath, gamma: f64, n_trunc: u32, record_every: usize) -> Result<Trajectory> {
    let lat = u0.lattice().clone();
    if !lat.compatible(path.lattice()) {
        return Err(PhiError::LatticeMismatch("initial data and noise path".into()));
    }
    if n_trunc > lat.n_cut() {
        return Err(PhiError::CutoffExceeded { requested: n_trunc, available: lat.n_cut() });
    }
    let every = record_every.max(1);
    let n2 = (n_trunc as f64).powi(2);
    let coef: Vec<(Complex64, f64)> = lat
        .bsq_all()
        .iter()
        .map(|&b| {
            let (d, c) = ou_coefficients(gamma, path.h(), b);
            (d, if b <= n2 { c } else { 0.0 })
        })
        .collect();
    let mut u = u0.coeffs().to_vec();
    let mut times = vec![0.0];
    let mut snapshots = vec![u0.clone()];
    for k in 0..path.steps() {
        for ((x, (d, c)), db) in u.iter_mut().zip(&coef).zip(path.increment(k)) {
            *x = d * *x + c * db;
        }
        if (k + 1) % every == 0 {
            times.push((k + 1) as f64 * path.h());
            snapshots.push(FourierField::from_coeffs(&lat, u.clone())?);
        }
    }
    Ok(Trajectory { times, snapshots, gamma, config: None, provenance: Some((path.seed, path.member)) })
}

/// Ψ_γ on the path grid, Ψ(0) = 0.
pub fn stochastic_convolution(path: &NoisePath, gamma: f64) -> Result<Trajectory> {
    ou_evolve(&FourierField::zeros(path.lattice()), path, gamma, path.lattice().n_cut(), 1)
}

/// 𝓘_γ(F)(t_k) = ∫₀^{t_k} S_γ(t_k − t′)F(t′)dt′ by the exponential trapezoid rule.
pub fn duhamel(f: &Trajectory, gamma: f64) -> Result<Trajectory> {
    let h = f.dt()?;
    let lat = f.lattice().clone();
    let decay: Vec<Complex64> = lat.bsq_all().iter().map(|&b| (Complex64::new(-gamma, -1.0) * (h * b)).exp()).collect();
    let mut acc = vec![Complex64::default(); lat.len()];
    let mut out = vec![FourierField::zeros(&lat)];
    for k in 0..f.len() - 1 {
        let (a, b) = (f.snapshots[k].coeffs(), f.snapshots[k + 1].coeffs());
        for i in 0..acc.len() {
            acc[i] = decay[i] * (acc[i] + 0.5 * h * a[i]) + 0.5 * h * b[i];
        }
        out.push(FourierField::from_coeffs(&lat, acc.clone())?);
    }
    Ok(Trajectory { times: f.times.clone(), snapshots: out, gamma, config: None, provenance: f.provenance })
}

/// V(t_k) = ∫₀^{t_k}(S₂(𝐏_{≤N}u) − σ_N)dt′ by the trapezoid rule.
pub fn gauge_v(traj: &Trajectory, n: u32) -> Result<Vec<f64>> {
    let sigma = sigma_n(n);
    let g: Vec<f64> = traj.snapshots.iter().map(|u| Ok(project_leq(u, n)?.mass() - sigma)).collect::<Result<_>>()?;
    let mut v = vec![0.0; g.len()];
    for k in 1..g.len() {
        v[k] = v[k - 1] + 0.5 * (traj.times[k] - traj.times[k - 1]) * (g[k] + g[k - 1]);
    }
    Ok(v)
}

/// Multiply every snapshot by e^{2iV(t)}, mapping the Wick flow onto the PDE flow.
pub fn gauge_apply(traj: &Trajectory, n: u32) -> Result<Trajectory> {
    let v = gauge_v(traj, n)?;
    let mut out = traj.clone();
    for (u, vk) in out.snapshots.iter_mut().zip(&v) {
        *u = u.scale(Complex64::from_polar(1.0, 2.0 * vk));
    }
    if let Some(cfg) = out.config.as_mut() {
        cfg.renorm = Renormalization::Pde;
    }
    Ok(out)
}

/// ⟨1⟩_{γ,N}(t) = S_γ(t)φ_N + Ψ_{γ,N}(t) sampled like `traj`.
pub fn first_order(phi: &GaussianSample, path: &NoisePath, gamma: f64, n: u32, record_every: usize) -> Result<Trajectory> {
    if (phi.seed, phi.member) != (path.seed, path.member) {
        return Err(PhiError::Provenance(format!(
            "initial data ({}, {}) vs noise ({}, {})",
            phi.seed, phi.member, path.seed, path.member
        )));
    }
    ou_evolve(&project_leq(&phi.field, n)?, path, gamma, n, record_every)
}

/// v = 𝐏_{≤N}u − ⟨1⟩_{γ,N}.
pub fn extract_remainder(traj: &Trajectory, phi: &GaussianSample, path: &NoisePath) -> Result<Trajectory> {
    let cfg = traj.config.as_ref().ok_or_else(|| PhiError::Provenance("trajectory without dynamics config".into()))?;
    if traj.provenance != Some((path.seed, path.member)) {
        return Err(PhiError::Provenance(format!("trajectory {:?} vs path ({}, {})", traj.provenance, path.seed, path.member)));
    }
    let z = first_order(phi, path, cfg.gamma, cfg.n_trunc, cfg.record_every)?;
    let k = traj.len();
    if z.len() < k {
        return Err(PhiError::InvalidParameter("noise path shorter than trajectory".into()));
    }
    let snapshots = traj
        .snapshots
        .iter()
        .zip(&z.snapshots)
        .map(|(u, w)| Ok(project_leq(u, cfg.n_trunc)?.sub(w)))
        .collect::<Result<_>>()?;
    Ok(Trajectory { times: traj.times.clone(), snapshots, gamma: cfg.gamma, config: Some(cfg.clone()), provenance: traj.provenance })
}
