//! Gaussian free field, truncated potentials, pCN Gibbs sampling and the
//! Monte-Carlo checks on the truncated potential sequence.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PhiError, Result};
use crate::nonlinearity::s4;
use crate::spectral_core::{project_leq, FourierField, ModeLattice};
use crate::util::{complex_normal, mean_se, stream_rng, tag};

/// A GFF draw û(n) = g_n/⟨n⟩ with its seed provenance.
#[derive(Clone, Debug)]
pub struct GaussianSample {
    pub field: FourierField,
    pub seed: u64,
    pub member: u64,
}

impl GaussianSample {
    /// The standard Gaussians g_n = ⟨n⟩û(n).
    pub fn g(&self) -> Vec<Complex64> {
        let lat = self.field.lattice();
        self.field.coeffs().iter().enumerate().map(|(i, c)| c * lat.bsq(i).sqrt()).collect()
    }
}

fn gff_coeffs(lat: &ModeLattice, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    lat.bsq_all().iter().map(|b| complex_normal(rng, 1.0) / b.sqrt()).collect()
}

/// Draw member `member` of the GFF stream for `seed`.
pub fn sample_gff(lattice: &Arc<ModeLattice>, seed: u64, member: u64) -> GaussianSample {
    let mut rng = stream_rng(seed, tag::GFF, member);
    let coeffs = gff_coeffs(lattice, &mut rng);
    GaussianSample { field: FourierField::from_coeffs(lattice, coeffs).unwrap(), seed, member }
}

/// σ_N = Σ_{⟨n⟩≤N} ⟨n⟩⁻².
pub fn sigma_n(n: u32) -> f64 {
    let n2 = (n as i64).pow(2);
    let r = n as i64;
    let mut s = 0.0;
    for a in -r..=r {
        for b in -r..=r {
            let q = 1 + a * a + b * b;
            if q <= n2 {
                s += 1.0 / q as f64;
            }
        }
    }
    s
}

/// R_N(u) = −¼S₄(𝐏_{≤N}u) − S₂(𝐏_{≤N}u)².
pub fn potential_rn(u: &FourierField, n: u32) -> Result<f64> {
    let p = project_leq(u, n)?;
    let m = p.mass();
    Ok(-0.25 * s4(&p) - m * m)
}

/// ¼·avg(|u_N|⁴ − 4σ_N|u_N|² + 2σ_N²).
pub fn potential_wick(u: &FourierField, n: u32) -> Result<f64> {
    let p = project_leq(u, n)?;
    let sigma = sigma_n(n);
    Ok(0.25 * (s4(&p) - 4.0 * sigma * p.mass() + 2.0 * sigma * sigma))
}

/// Target density e^{−Φ}dμ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GibbsPotential {
    /// Φ ≡ 0.
    Free,
    /// Φ = −R_N.
    PaperRn { n: u32 },
    /// Φ = potential_wick.
    Wick { n: u32 },
    /// Φ = 2·potential_wick, the measure left invariant by the Wick Langevin dynamics.
    WickFlow { n: u32 },
}

impl GibbsPotential {
    pub fn phi(&self, u: &FourierField) -> Result<f64> {
        match *self {
            GibbsPotential::Free => Ok(0.0),
            GibbsPotential::PaperRn { n } => Ok(-potential_rn(u, n)?),
            GibbsPotential::Wick { n } => potential_wick(u, n),
            GibbsPotential::WickFlow { n } => Ok(2.0 * potential_wick(u, n)?),
        }
    }
}

/// Sampler settings. `beta = None` tunes the step on a pilot chain.
#[derive(Clone, Debug)]
pub struct PcnConfig {
    pub beta: Option<f64>,
    pub members: usize,
    pub chains: usize,
    pub pilot_steps: usize,
}

impl Default for PcnConfig {
    fn default() -> Self {
        Self { beta: None, members: 256, chains: 16, pilot_steps: 4000 }
    }
}

#[derive(Clone, Debug)]
pub struct GibbsEnsemble {
    pub members: Vec<FourierField>,
    pub potential: GibbsPotential,
    pub beta: f64,
    pub acceptance_rate: f64,
    pub iat: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Acceptance outside [0.1, 0.9].
    pub mis_tuned: bool,
}

/// Markov chain state with cached potential.
#[derive(Clone, Debug)]
pub struct PcnChain {
    pub state: FourierField,
    phi: f64,
    rng: ChaCha8Rng,
    pub accepted: usize,
    pub proposed: usize,
}

impl PcnChain {
    pub fn new(state: FourierField, potential: &GibbsPotential, rng: ChaCha8Rng) -> Result<Self> {
        let phi = potential.phi(&state)?;
        Ok(Self { state, phi, rng, accepted: 0, proposed: 0 })
    }

    /// One proposal u′ = √(1−β²)u + βξ, ξ ~ μ, accepted with prob. min(1, e^{Φ(u)−Φ(u′)}).
    pub fn step(&mut self, potential: &GibbsPotential, beta: f64) -> Result<()> {
        let lat = self.state.lattice().clone();
        let xi = gff_coeffs(&lat, &mut self.rng);
        let c = (1.0 - beta * beta).sqrt();
        let prop: Vec<Complex64> = self.state.coeffs().iter().zip(&xi).map(|(u, x)| c * u + beta * x).collect();
        let prop = FourierField::from_coeffs(&lat, prop)?;
        let phi = potential.phi(&prop)?;
        self.proposed += 1;
        let u: f64 = self.rng.gen();
        if (self.phi - phi).exp() >= u {
            self.state = prop;
            self.phi = phi;
            self.accepted += 1;
        }
        Ok(())
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// Integrated autocorrelation time with Sokal's self-consistent window (c = 5).
pub fn integrated_autocorrelation(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return 1.0;
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let var = trace.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 1e-300 {
        return 1.0;
    }
    let mut tau = 1.0;
    for k in 1..n / 2 {
        let c: f64 = (0..n - k).map(|i| (trace[i] - mean) * (trace[i + k] - mean)).sum::<f64>() / (n as f64 * var);
        tau += 2.0 * c;
        if k as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Thinned, burned-in ensemble of `cfg.members` draws from e^{−Φ}dμ.
pub fn sample_gibbs_pcn(
    lattice: &Arc<ModeLattice>,
    potential: GibbsPotential,
    cfg: &PcnConfig,
    seed: u64,
) -> Result<GibbsEnsemble> {
    if cfg.members == 0 || cfg.chains == 0 {
        return Err(PhiError::InvalidParameter("empty ensemble".into()));
    }
    let pilot_id = u64::MAX;
    let init = |id: u64| -> Result<PcnChain> {
        let mut rng = stream_rng(seed, tag::PCN, id);
        let start = FourierField::from_coeffs(lattice, gff_coeffs(lattice, &mut rng))?;
        PcnChain::new(start, &potential, rng)
    };
    let mut pilot = init(pilot_id)?;
    let beta = match cfg.beta {
        Some(b) => b,
        None => {
            let mut b: f64 = 0.5;
            for _ in 0..30 {
                let (a0, p0) = (pilot.accepted, pilot.proposed);
                for _ in 0..100 {
                    pilot.step(&potential, b)?;
                }
                let rate = (pilot.accepted - a0) as f64 / (pilot.proposed - p0) as f64;
                if rate > 0.35 {
                    b = (b * 1.25).min(1.0);
                } else if rate < 0.25 {
                    b /= 1.25;
                }
            }
            b
        }
    };
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(PhiError::InvalidParameter(format!("beta = {beta}")));
    }
    let mut phi_trace = Vec::with_capacity(cfg.pilot_steps);
    let mut mass_trace = Vec::with_capacity(cfg.pilot_steps);
    for _ in 0..cfg.pilot_steps {
        pilot.step(&potential, beta)?;
        phi_trace.push(pilot.phi());
        mass_trace.push(pilot.state.mass());
    }
    let iat = integrated_autocorrelation(&phi_trace).max(integrated_autocorrelation(&mass_trace));
    let burn_in = ((10.0 * iat).ceil() as usize).max(50);
    let thin = ((2.0 * iat).ceil() as usize).max(1);
    let per_chain = cfg.members.div_ceil(cfg.chains);

    let runs: Vec<Result<(Vec<FourierField>, usize, usize)>> = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut chain = init(c)?;
            for _ in 0..burn_in {
                chain.step(&potential, beta)?;
            }
            let (a0, p0) = (chain.accepted, chain.proposed);
            let mut out = Vec::with_capacity(per_chain);
            for _ in 0..per_chain {
                for _ in 0..thin {
                    chain.step(&potential, beta)?;
                }
                out.push(chain.state.clone());
            }
            Ok((out, chain.accepted - a0, chain.proposed - p0))
        })
        .collect();
    let mut members = Vec::with_capacity(cfg.members);
    let (mut acc, mut prop) = (0usize, 0usize);
    for r in runs {
        let (m, a, p) = r?;
        members.extend(m);
        acc += a;
        prop += p;
    }
    members.truncate(cfg.members);
    let acceptance_rate = acc as f64 / prop.max(1) as f64;
    Ok(GibbsEnsemble {
        members,
        potential,
        beta,
        acceptance_rate,
        iat,
        burn_in,
        thin,
        seed,
        mis_tuned: !(0.1..=0.9).contains(&acceptance_rate),
    })
}

impl GibbsEnsemble {
    /// Advance every member by `steps` further pCN steps on fresh streams.
    pub fn advance(&self, steps: usize, stream_offset: u64) -> Result<Vec<FourierField>> {
        self.members
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let rng = stream_rng(self.seed ^ stream_offset, tag::PCN, i as u64);
                let mut chain = PcnChain::new(u.clone(), &self.potential, rng)?;
                for _ in 0..steps {
                    chain.step(&self.potential, self.beta)?;
                }
                Ok(chain.state)
            })
            .collect()
    }

    /// Write one snapshot file per member plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (i, m) in self.members.iter().enumerate() {
            let name = format!("member_{i:05}.json");
            std::fs::write(dir.join(&name), serde_json::to_string(&m.to_snapshot())?)?;
            files.push(name);
        }
        let manifest = EnsembleManifest {
            seed: self.seed,
            potential: self.potential,
            beta: self.beta,
            acceptance_rate: self.acceptance_rate,
            iat: self.iat,
            burn_in: self.burn_in,
            thin: self.thin,
            files,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub seed: u64,
    pub potential: GibbsPotential,
    pub beta: f64,
    pub acceptance_rate: f64,
    pub iat: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub files: Vec<String>,
}

/// One row of the truncated-potential report.
#[derive(Clone, Debug, Serialize)]
pub struct PropMesRow {
    pub n: u32,
    /// ‖e^{R_N}‖_{L^p(μ)}.
    pub exp_lp: f64,
    pub max_rn: f64,
    /// ‖R_{2N} − R_N‖_{L²(μ)} and its standard error.
    pub increment_l2: f64,
    pub increment_se: f64,
    pub fourth_moment: f64,
    /// Same increment for −¼S₄ + ½S₂² (pairing-cancelling variant, diagnostic only).
    pub paired_increment_l2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropMesReport {
    pub p: f64,
    pub samples: usize,
    pub rows: Vec<PropMesRow>,
    pub exp_bounded: bool,
    pub increments_decreasing: bool,
    pub paired_increments_decreasing: bool,
}

/// Monte-Carlo check of ‖e^{R_N}‖_{L^p} and of the increments ‖R_{2N} − R_N‖_{L²}.
pub fn check_prop_mes(n_list: &[u32], p: f64, ensemble_size: usize, seed: u64) -> Result<PropMesReport> {
    if n_list.is_empty() || ensemble_size < 2 {
        return Err(PhiError::InvalidParameter("need N values and ≥ 2 samples".into()));
    }
    let mut scales: Vec<u32> = n_list.iter().flat_map(|&n| [n, 2 * n]).collect();
    scales.sort_unstable();
    scales.dedup();
    let big = ModeLattice::new(*scales.last().unwrap())?;
    let lats: Vec<Arc<ModeLattice>> = scales.iter().map(|&n| ModeLattice::new(n)).collect::<Result<_>>()?;
    let draws: Vec<Vec<(f64, f64)>> = (0..ensemble_size as u64)
        .into_par_iter()
        .map(|k| {
            let phi = sample_gff(&big, seed, k).field;
            lats.iter()
                .map(|lat| {
                    let u = phi.transfer(lat);
                    let (q, m) = (s4(&u), u.mass());
                    (-0.25 * q - m * m, -0.25 * q + 0.5 * m * m)
                })
                .collect()
        })
        .collect();
    let col = |n: u32| scales.iter().position(|&s| s == n).unwrap();
    let mut rows = Vec::new();
    for &n in n_list {
        let (a, b) = (col(n), col(2 * n));
        let rn: Vec<f64> = draws.iter().map(|d| d[a].0).collect();
        let inc: Vec<f64> = draws.iter().map(|d| (d[b].0 - d[a].0).powi(2)).collect();
        let pinc: Vec<f64> = draws.iter().map(|d| (d[b].1 - d[a].1).powi(2)).collect();
        let (m2, se2) = mean_se(&inc);
        let exp_lp = (rn.iter().map(|r| (p * r).exp()).sum::<f64>() / rn.len() as f64).powf(1.0 / p);
        rows.push(PropMesRow {
            n,
            exp_lp,
            max_rn: rn.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            increment_l2: m2.sqrt(),
            increment_se: se2 / (2.0 * m2.sqrt()),
            fourth_moment: rn.iter().map(|r| r.powi(4)).sum::<f64>() / rn.len() as f64,
            paired_increment_l2: (pinc.iter().sum::<f64>() / pinc.len() as f64).sqrt(),
        });
    }
    let decreasing = |f: &dyn Fn(&PropMesRow) -> f64| rows.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    Ok(PropMesReport {
        p,
        samples: ensemble_size,
        exp_bounded: rows.iter().all(|r| r.exp_lp <= 1.0 && r.max_rn <= 0.0),
        increments_decreasing: decreasing(&|r| r.increment_l2),
        paired_increments_decreasing: decreasing(&|r| r.paired_increment_l2),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_core::random_field;

    #[test]
    fn sigma_values() {
        assert_eq!(sigma_n(1), 1.0);
        assert!((sigma_n(2) - 13.0 / 3.0).abs() < 1e-14);
        let mut prev = f64::NAN;
        for k in 3..=8 {
            let n = 1u32 << k;
            let r = sigma_n(n) / (n as f64).ln();
            assert!(r > 2.0 && r < 2.0 * std::f64::consts::TAU, "{r}");
            if prev.is_finite() {
                assert!((r - prev).abs() < 0.3 * prev);
            }
            prev = r;
        }
    }

    #[test]
    fn gff_moments() {
        let lat = ModeLattice::new(4).unwrap();
        let i0 = lat.index_of([0, 0]).unwrap();
        let i1 = lat.index_of([1, 2]).unwrap();
        let mut v0 = Vec::new();
        let (mut re, mut cross_re) = (Vec::new(), Vec::new());
        let mut l2 = Vec::new();
        for k in 0..10_000 {
            let s = sample_gff(&lat, 3, k);
            let c = s.field.coeffs();
            v0.push(c[i0].norm_sqr());
            re.push(c[i1].re);
            cross_re.push((c[i0] * c[i1].conj()).re);
            l2.push(s.field.mass());
        }
        let (m, se) = mean_se(&v0);
        assert!((m - 1.0).abs() < 3.0 * se);
        let (m, se) = mean_se(&re);
        assert!(m.abs() < 3.0 * se);
        let (m, se) = mean_se(&cross_re);
        assert!(m.abs() < 3.0 * se);
        let (m, se) = mean_se(&l2);
        assert!((m - sigma_n(4)).abs() < 3.0 * se);
        let a = sample_gff(&lat, 3, 17);
        let b = sample_gff(&lat, 3, 17);
        assert_eq!(a.field.coeffs(), b.field.coeffs());
        let g = a.g();
        assert!((g[i1] - a.field.coeffs()[i1] * 6f64.sqrt()).norm() < 1e-14);
    }

    #[test]
    fn potential_examples() {
        let lat = ModeLattice::new(4).unwrap();
        let z = FourierField::zeros(&lat);
        assert_eq!(potential_rn(&z, 4).unwrap(), 0.0);
        let sigma = sigma_n(4);
        assert!((potential_wick(&z, 4).unwrap() - 0.5 * sigma * sigma).abs() < 1e-12);
        let c = Complex64::new(0.8, -0.6) * 1.3;
        let u = FourierField::single_mode(&lat, [1, 1], c).unwrap();
        let expect = -1.25 * c.norm_sqr().powi(2);
        assert!((potential_rn(&u, 4).unwrap() - expect).abs() < 1e-12);
        assert!(potential_rn(&u, 5).is_err());
    }

    #[test]
    fn wick_quartic_is_centered() {
        let lat = ModeLattice::new(6).unwrap();
        let sigma = sigma_n(6);
        let vals: Vec<f64> = (0..10_000)
            .map(|k| {
                let u = sample_gff(&lat, 5, k).field;
                s4(&u) - 4.0 * sigma * u.mass() + 2.0 * sigma * sigma
            })
            .collect();
        let (m, se) = mean_se(&vals);
        assert!(m.abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn wick_lower_bound() {
        let lat = ModeLattice::new(3).unwrap();
        let bound = -0.5 * sigma_n(3).powi(2);
        for k in 0..100_000u64 {
            let amp = 0.05 + (k % 97) as f64 * 0.05;
            let u = random_field(&lat, k).scale(Complex64::new(amp, 0.0));
            assert!(potential_wick(&u, 3).unwrap() >= bound - 1e-9);
        }
    }

    fn ks_radial(samples: &[f64], density: impl Fn(f64) -> f64) -> f64 {
        let (r, w) = crate::util::gauss_legendre(400, 0.0, 8.0);
        let grid: Vec<f64> = (1..=800).map(|i| i as f64 * 0.01).collect();
        let weight = |x: f64| 2.0 * std::f64::consts::PI * x * density(x);
        let z: f64 = r.iter().zip(&w).map(|(x, wi)| wi * weight(*x)).sum();
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut worst: f64 = 0.0;
        for &x in &grid {
            let (rr, ww) = crate::util::gauss_legendre(80, 0.0, x);
            let cdf: f64 = rr.iter().zip(&ww).map(|(y, wi)| wi * weight(*y)).sum::<f64>() / z;
            let emp = sorted.partition_point(|&s| s <= x) as f64 / sorted.len() as f64;
            worst = worst.max((cdf - emp).abs());
        }
        worst
    }

    #[test]
    fn single_mode_wick_quadrature() {
        let lat = ModeLattice::new(1).unwrap();
        let sigma = sigma_n(1);
        let cfg = PcnConfig { beta: None, members: 40_000, chains: 8, pilot_steps: 4000 };
        let ens = sample_gibbs_pcn(&lat, GibbsPotential::Wick { n: 1 }, &cfg, 21).unwrap();
        assert!(!ens.mis_tuned, "acceptance {}", ens.acceptance_rate);
        let radii: Vec<f64> = ens.members.iter().map(|u| u.coeffs()[0].norm()).collect();
        let d = ks_radial(&radii, |r| {
            let a2 = r * r;
            (-a2 - 0.25 * (a2 * a2 - 4.0 * sigma * a2 + 2.0 * sigma * sigma)).exp()
        });
        assert!(d <= 0.01, "sup-CDF distance {d}");
        let phases: Vec<f64> = ens.members.iter().map(|u| u.coeffs()[0].arg().cos()).collect();
        let (m, se) = mean_se(&phases);
        assert!(m.abs() < 3.0 * se);
    }

    #[test]
    fn free_potential_reproduces_gff() {
        let lat = ModeLattice::new(3).unwrap();
        let cfg = PcnConfig { beta: Some(0.4), members: 4000, chains: 4, pilot_steps: 500 };
        let ens = sample_gibbs_pcn(&lat, GibbsPotential::Free, &cfg, 2).unwrap();
        assert_eq!(ens.acceptance_rate, 1.0);
        assert!(ens.mis_tuned);
        for (i, b) in lat.bsq_all().iter().enumerate() {
            let v: Vec<f64> = ens.members.iter().map(|u| u.coeffs()[i].norm_sqr() * b).collect();
            let (m, se) = mean_se(&v);
            assert!((m - 1.0).abs() < 4.0 * se, "mode {i}: {m} ± {se}");
        }
    }

    #[test]
    fn chain_stationarity() {
        let lat = ModeLattice::new(3).unwrap();
        let cfg = PcnConfig { beta: None, members: 2000, chains: 8, pilot_steps: 2000 };
        let pot = GibbsPotential::Wick { n: 3 };
        let ens = sample_gibbs_pcn(&lat, pot, &cfg, 8).unwrap();
        let later = ens.advance(10, 0xabc).unwrap();
        let obs = |v: &[FourierField]| -> Vec<f64> { v.iter().map(|u| pot.phi(u).unwrap()).collect() };
        let diff: Vec<f64> = obs(&later).iter().zip(obs(&ens.members)).map(|(a, b)| a - b).collect();
        let (m, se) = mean_se(&diff);
        assert!(m.abs() < 3.0 * se.max(1e-12), "{m} ± {se}");
        let mass: Vec<f64> = later.iter().zip(&ens.members).map(|(a, b)| a.mass() - b.mass()).collect();
        let (m, se) = mean_se(&mass);
        assert!(m.abs() < 3.0 * se.max(1e-12));
    }

    #[test]
    fn ensemble_persistence() {
        let lat = ModeLattice::new(2).unwrap();
        let cfg = PcnConfig { beta: Some(0.5), members: 3, chains: 1, pilot_steps: 100 };
        let ens = sample_gibbs_pcn(&lat, GibbsPotential::Wick { n: 2 }, &cfg, 1).unwrap();
        let dir = std::env::temp_dir().join(format!("phi4-ens-{}", std::process::id()));
        ens.save(&dir).unwrap();
        let man: EnsembleManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(man.files.len(), 3);
        let snap = serde_json::from_str(&std::fs::read_to_string(dir.join(&man.files[1])).unwrap()).unwrap();
        assert_eq!(FourierField::from_snapshot(&snap).unwrap().coeffs(), ens.members[1].coeffs());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn prop_mes_small() {
        let rep = check_prop_mes(&[2, 4], 2.0, 200, 1).unwrap();
        assert!(rep.exp_bounded);
        assert!(rep.rows.iter().all(|r| r.fourth_moment.is_finite()));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::spectral_core::random_field;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn potentials_phase_invariant(seed in 0u64..10_000, theta in 0.0f64..6.3, n in 1u32..6) {
            let lat = ModeLattice::new(5).unwrap();
            let u = random_field(&lat, seed);
            let v = u.scale(Complex64::from_polar(1.0, theta));
            let (a, b) = (potential_rn(&u, n).unwrap(), potential_rn(&v, n).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            let (a, b) = (potential_wick(&u, n).unwrap(), potential_wick(&v, n).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn paper_potential_nonpositive(seed in 0u64..10_000, amp in 0.0f64..10.0, n in 1u32..6) {
            let lat = ModeLattice::new(5).unwrap();
            let u = random_field(&lat, seed).scale(Complex64::new(amp, 0.0));
            prop_assert!(potential_rn(&u, n).unwrap() <= 0.0);
        }
    }
}
