//! The stochastic objects ⟨1⟩, ⟨3⟩ = 𝒩(⟨1⟩,⟨1⟩,⟨1⟩) and ⟨30⟩ = 𝓘_γ(⟨3⟩), and
//! measurements of their size as the cutoff grows.
//!
//! At γ = 0 the linear evolution is a pure phase, so ⟨30⟩(t) is computed without a
//! time grid by composite Gauss–Legendre quadrature in t′.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PhiError, Result};
use crate::gibbs_measures::{sample_gff, GaussianSample};
use crate::noise_and_flows::{duhamel, first_order, propagator, NoisePath, Trajectory};
use crate::nonlinearity::cal_n_self;
use crate::spectral_core::{sobolev_norm, FourierField, ModeLattice};
use crate::util::{gauss_legendre, loglog_slope, mean_se};

const GL_PANEL: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    One,
    Three,
    Thirty,
}

impl ObjectKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::One => "one",
            ObjectKind::Three => "three",
            ObjectKind::Thirty => "thirty",
        }
    }
}

/// ⟨1⟩, ⟨3⟩, ⟨30⟩ for every γ of a grid, from one shared (φ, noise) realization.
#[derive(Clone, Debug)]
pub struct ObjectBundle {
    pub gammas: Vec<f64>,
    pub one: Vec<Trajectory>,
    pub three: Vec<Trajectory>,
    pub thirty: Vec<Trajectory>,
    pub seed: u64,
}

/// Build the bundle on a uniform grid of step h up to T.
pub fn build_bundle(lattice: &Arc<ModeLattice>, gamma_grid: &[f64], t: f64, h: f64, seed: u64) -> Result<ObjectBundle> {
    let steps = (t / h).round() as usize;
    if steps == 0 || ((steps as f64) * h - t).abs() > 1e-9 * t {
        return Err(PhiError::InvalidParameter(format!("T = {t} is not a multiple of h = {h}")));
    }
    if gamma_grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(PhiError::InvalidParameter("gamma outside [0, 1]".into()));
    }
    let phi = sample_gff(lattice, seed, 0);
    let path = NoisePath::generate(lattice, h, steps, seed, 0);
    let per_gamma: Vec<(Trajectory, Trajectory, Trajectory)> = gamma_grid
        .par_iter()
        .map(|&g| {
            let one = first_order(&phi, &path, g, lattice.n_cut(), 1)?;
            let three = one.map(cal_n_self)?;
            let thirty = duhamel(&three, g)?;
            Ok((one, three, thirty))
        })
        .collect::<Result<_>>()?;
    let mut b = ObjectBundle { gammas: gamma_grid.to_vec(), one: vec![], three: vec![], thirty: vec![], seed };
    for (o, th, tt) in per_gamma {
        b.one.push(o);
        b.three.push(th);
        b.thirty.push(tt);
    }
    Ok(b)
}

impl ObjectBundle {
    pub fn object(&self, kind: ObjectKind, i: usize) -> &Trajectory {
        match kind {
            ObjectKind::One => &self.one[i],
            ObjectKind::Three => &self.three[i],
            ObjectKind::Thirty => &self.thirty[i],
        }
    }
}

/// ⟨30⟩(t) at γ = 0 by composite Gauss–Legendre in t′ with `nodes` points (rounded up to panels).
pub fn thirty_free(phi: &FourierField, t: f64, nodes: usize) -> Result<FourierField> {
    let panels = nodes.div_ceil(GL_PANEL).max(1);
    let width = t / panels as f64;
    let lat = phi.lattice().clone();
    let mut acc = vec![num_complex::Complex64::default(); lat.len()];
    for p in 0..panels {
        let (x, w) = gauss_legendre(GL_PANEL, p as f64 * width, (p + 1) as f64 * width);
        for (tp, wt) in x.iter().zip(&w) {
            let u = propagator(phi, 0.0, 0.0, *tp);
            let f = propagator(&cal_n_self(&u)?, 0.0, 0.0, t - tp);
            for (a, c) in acc.iter_mut().zip(f.coeffs()) {
                *a += wt * c;
            }
        }
    }
    FourierField::from_coeffs(&lat, acc)
}

/// Default node count: the phase of ⟨30⟩ oscillates at rate O(N²).
pub fn thirty_nodes(n_cut: u32, t: f64) -> usize {
    (1.1 * (n_cut as f64).powi(2) * t).ceil() as usize + 40
}

#[derive(Clone, Debug)]
pub struct ScanConfig {
    pub gamma: f64,
    /// Evaluation time.
    pub t: f64,
    /// Grid step for γ > 0.
    pub h: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub object: ObjectKind,
    pub s: f64,
    pub n: u32,
    pub mean_sq_norm: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    /// (object, s, fitted slope of log E‖·‖²_{H^s} against log N).
    pub slopes: Vec<(ObjectKind, f64, f64)>,
}

impl ScanReport {
    pub fn slope(&self, kind: ObjectKind, s: f64) -> Option<f64> {
        self.slopes.iter().find(|(k, ss, _)| *k == kind && (ss - s).abs() < 1e-12).map(|x| x.2)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("object,s,N,mean_sq_norm,stderr,fitted_slope\n");
        for r in &self.rows {
            let slope = self.slope(r.object, r.s).unwrap_or(f64::NAN);
            let _ = writeln!(out, "{},{},{},{:.10e},{:.4e},{:.6}", r.object.name(), r.s, r.n, r.mean_sq_norm, r.stderr, slope);
        }
        out
    }
}

/// The three objects at time t for one member on lattice N. The GFF is drawn on
/// the largest lattice and restricted, so different N are coupled.
fn objects_at(lat: &Arc<ModeLattice>, big: &Arc<ModeLattice>, member: u64, cfg: &ScanConfig, want_thirty: bool) -> Result<[FourierField; 3]> {
    let base = sample_gff(big, cfg.seed, member);
    let phi = GaussianSample { field: base.field.transfer(lat), seed: cfg.seed, member };
    if cfg.gamma == 0.0 {
        let one = propagator(&phi.field, 0.0, 0.0, cfg.t);
        let three = cal_n_self(&one)?;
        let thirty = if want_thirty {
            thirty_free(&phi.field, cfg.t, thirty_nodes(lat.n_cut(), cfg.t))?
        } else {
            FourierField::zeros(lat)
        };
        return Ok([one, three, thirty]);
    }
    let steps = (cfg.t / cfg.h).round() as usize;
    let nmax2 = (lat.n_cut() as f64).powi(2);
    if cfg.h * nmax2 > 1.0 {
        return Err(PhiError::CostGuard(format!("h⟨n⟩² = {} would under-resolve ⟨30⟩", cfg.h * nmax2)));
    }
    let path = NoisePath::generate(lat, cfg.h, steps, cfg.seed, member);
    let one = first_order(&phi, &path, cfg.gamma, lat.n_cut(), 1)?;
    let three = one.map(cal_n_self)?;
    let thirty = if want_thirty { duhamel(&three, cfg.gamma)?.last().clone() } else { FourierField::zeros(lat) };
    Ok([one.last().clone(), three.last().clone(), thirty])
}

/// Mean squared H^s norms of the objects at time t over N_grid, with log–log slopes.
pub fn regularity_scan(kinds: &[ObjectKind], s_grid: &[f64], n_grid: &[u32], ensemble: usize, cfg: &ScanConfig) -> Result<ScanReport> {
    if n_grid.len() < 2 || ensemble < 2 {
        return Err(PhiError::InvalidParameter("need at least two cutoffs and two members".into()));
    }
    let nbig = *n_grid.iter().max().unwrap();
    let big = ModeLattice::new(nbig)?;
    let want_thirty = kinds.contains(&ObjectKind::Thirty);
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut means: Vec<Vec<f64>> = vec![Vec::new(); kinds.len() * s_grid.len()];
    for &n in n_grid {
        let lat = if n == nbig { big.clone() } else { ModeLattice::new(n)? };
        let samples: Vec<[FourierField; 3]> =
            (0..ensemble as u64).into_par_iter().map(|m| objects_at(&lat, &big, m, cfg, want_thirty)).collect::<Result<_>>()?;
        for (ki, &kind) in kinds.iter().enumerate() {
            let idx = match kind {
                ObjectKind::One => 0,
                ObjectKind::Three => 1,
                ObjectKind::Thirty => 2,
            };
            for (si, &s) in s_grid.iter().enumerate() {
                let vals: Vec<f64> = samples.iter().map(|o| sobolev_norm(&o[idx], s).powi(2)).collect();
                let (m, se) = mean_se(&vals);
                means[ki * s_grid.len() + si].push(m);
                rows.push(ScanRow { object: kind, s, n, mean_sq_norm: m, stderr: se });
            }
        }
    }
    let xs: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    for (ki, &kind) in kinds.iter().enumerate() {
        for (si, &s) in s_grid.iter().enumerate() {
            slopes.push((kind, s, loglog_slope(&xs, &means[ki * s_grid.len() + si])));
        }
    }
    Ok(ScanReport { rows, slopes })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityReport {
    pub object: ObjectKind,
    /// (γ_a, γ_b, sup_t ‖·_{γ_a} − ·_{γ_b}‖_{H^{−1/4}}).
    pub pairs: Vec<(f64, f64, f64)>,
    /// Fit distance ≈ C|Δγ|^θ over the pairs with γ_a = smallest γ.
    pub theta: f64,
    pub constant: f64,
}

/// Sup-in-time H^{−1/4} distances between consecutive γ of the bundle, plus the
/// distances from the smallest γ used for the Hölder fit.
pub fn gamma_continuity(bundle: &ObjectBundle, kind: ObjectKind) -> Result<ContinuityReport> {
    let n = bundle.gammas.len();
    if n < 2 {
        return Err(PhiError::InvalidParameter("gamma grid needs two points".into()));
    }
    let dist = |a: usize, b: usize| -> f64 {
        let (ta, tb) = (bundle.object(kind, a), bundle.object(kind, b));
        ta.snapshots.iter().zip(&tb.snapshots).map(|(x, y)| sobolev_norm(&x.sub(y), -0.25)).fold(0.0, f64::max)
    };
    let pairs: Vec<(f64, f64, f64)> = (1..n).map(|i| (bundle.gammas[i - 1], bundle.gammas[i], dist(i - 1, i))).collect();
    let base = (0..n).min_by(|&a, &b| bundle.gammas[a].partial_cmp(&bundle.gammas[b]).unwrap()).unwrap();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..n {
        let dg = (bundle.gammas[i] - bundle.gammas[base]).abs();
        let d = dist(base, i);
        if dg > 0.0 && d > 0.0 {
            xs.push(dg);
            ys.push(d);
        }
    }
    let (theta, constant) = if xs.len() >= 2 {
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
        let (slope, icpt) = crate::util::linear_fit(&lx, &ly);
        (slope, icpt.exp())
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ContinuityReport { object: kind, pairs, theta, constant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_core::bracket_sq;

    #[test]
    fn bundle_basics() {
        let lat = ModeLattice::new(4).unwrap();
        let b = build_bundle(&lat, &[0.0, 0.25, 0.5, 1.0], 0.1, 0.01, 3).unwrap();
        let phi = sample_gff(&lat, 3, 0).field;
        for i in 0..4 {
            assert!(b.one[i].snapshots[0].distance(&phi) == 0.0);
            assert_eq!(b.thirty[i].snapshots[0].norm(), 0.0);
            for (o, th) in b.one[i].snapshots.iter().zip(&b.three[i].snapshots) {
                assert!(cal_n_self(o).unwrap().distance(th) < 1e-13 * th.norm().max(1.0));
            }
        }
        for u in &b.one[0].snapshots {
            for (c, p) in u.coeffs().iter().zip(phi.coeffs()) {
                assert!((c.norm() - p.norm()).abs() < 1e-13);
            }
        }
        let again = build_bundle(&lat, &[0.0, 0.25, 0.5, 1.0], 0.1, 0.01, 3).unwrap();
        for i in 0..4 {
            assert_eq!(again.thirty[i].last().coeffs(), b.thirty[i].last().coeffs());
        }
        assert!(build_bundle(&lat, &[0.0], 0.105, 0.01, 3).is_err());
    }

    #[test]
    fn stationary_mode_law() {
        let lat = ModeLattice::new(3).unwrap();
        let gamma = 0.7;
        let mut vals = vec![Vec::new(); lat.len()];
        for m in 0..4000u64 {
            let phi = sample_gff(&lat, 11, m);
            let path = NoisePath::generate(&lat, 0.05, 10, 11, m);
            let one = first_order(&phi, &path, gamma, 3, 1).unwrap();
            for (i, c) in one.last().coeffs().iter().enumerate() {
                vals[i].push(c.norm_sqr());
            }
        }
        for (i, v) in vals.iter().enumerate() {
            let (m, se) = mean_se(v);
            let exact = 1.0 / bracket_sq(lat.mode(i)) as f64;
            assert!((m - exact).abs() < 3.5 * se, "mode {i}: {m} vs {exact} ± {se}");
        }
    }

    #[test]
    fn three_orthogonal_to_first_chaos() {
        let lat = ModeLattice::new(2).unwrap();
        let mut re = vec![Vec::new(); lat.len()];
        for m in 0..4000u64 {
            let phi = sample_gff(&lat, 5, m);
            let three = cal_n_self(&phi.field).unwrap();
            let g = phi.g();
            for (i, c) in three.coeffs().iter().enumerate() {
                re[i].push((c * g[i].conj()).re);
            }
        }
        for v in &re {
            let (m, se) = mean_se(v);
            assert!(m.abs() < 3.5 * se.max(1e-12));
        }
    }

    #[test]
    fn free_quadrature_matches_grid() {
        let lat = ModeLattice::new(4).unwrap();
        let phi = sample_gff(&lat, 2, 0);
        let t = 0.25;
        let quad = thirty_free(&phi.field, t, thirty_nodes(4, t)).unwrap();
        let finer = thirty_free(&phi.field, t, 4 * thirty_nodes(4, t)).unwrap();
        assert!(quad.distance(&finer) < 1e-10 * finer.norm());
        let h = 1e-4;
        let path = NoisePath::zero(&lat, h, (t / h).round() as usize);
        let phi0 = GaussianSample { field: phi.field.clone(), seed: 0, member: 0 };
        let one = first_order(&phi0, &path, 0.0, 4, 1).unwrap();
        let grid = duhamel(&one.map(cal_n_self).unwrap(), 0.0).unwrap();
        assert!(grid.last().distance(&quad) < 1e-4 * quad.norm(), "{}", grid.last().distance(&quad) / quad.norm());
    }

    /// 2Σ⟨n⟩^{2s}Π⟨n_j⟩⁻²·4sin²(κt/2)/κ² over non-pairing triples.
    fn thirty_exact(n: u32, t: f64, s: f64) -> f64 {
        let lat = ModeLattice::new(n).unwrap();
        let m = lat.modes();
        let cap = (n * n) as i64;
        let mut tot = 0.0;
        for (i1, a) in m.iter().enumerate() {
            for (i2, b) in m.iter().enumerate() {
                for (i3, c) in m.iter().enumerate() {
                    if i2 == i1 || i2 == i3 {
                        continue;
                    }
                    let o = [a[0] - b[0] + c[0], a[1] - b[1] + c[1]];
                    let bo = bracket_sq(o);
                    if bo > cap {
                        continue;
                    }
                    let k = (bo - bracket_sq(*a) + bracket_sq(*b) - bracket_sq(*c)) as f64;
                    let f = if k == 0.0 { t * t } else { 4.0 * (0.5 * k * t).sin().powi(2) / (k * k) };
                    tot += 2.0 * (bo as f64).powf(s) * f / (lat.bsq(i1) * lat.bsq(i2) * lat.bsq(i3));
                }
            }
        }
        tot
    }

    #[test]
    fn thirty_scan_matches_lattice_sum() {
        let cfg = ScanConfig { gamma: 0.0, t: 0.25, h: 0.01, seed: 4 };
        let rep = regularity_scan(&[ObjectKind::Thirty], &[0.0, 0.4], &[4, 6], 300, &cfg).unwrap();
        for r in &rep.rows {
            let exact = thirty_exact(r.n, 0.25, r.s);
            assert!((r.mean_sq_norm - exact).abs() < 3.5 * r.stderr, "{r:?} vs {exact}");
        }
    }

    #[test]
    fn one_scan_matches_lattice_sum() {
        let cfg = ScanConfig { gamma: 0.0, t: 0.3, h: 0.01, seed: 1 };
        let s = 0.4;
        let rep = regularity_scan(&[ObjectKind::One], &[s], &[4, 8], 400, &cfg).unwrap();
        for r in &rep.rows {
            let lat = ModeLattice::new(r.n).unwrap();
            let exact: f64 = lat.bsq_all().iter().map(|b| b.powf(s - 1.0)).sum();
            assert!((r.mean_sq_norm - exact).abs() < 3.5 * r.stderr, "{r:?} vs {exact}");
        }
        assert!(rep.to_csv().lines().count() == 3);
    }

    #[test]
    fn continuity_of_first_order() {
        let lat = ModeLattice::new(4).unwrap();
        let b = build_bundle(&lat, &[0.0, 1.0 / 64.0, 1.0 / 16.0, 0.25, 1.0], 0.5, 0.005, 9).unwrap();
        let same = ObjectBundle { gammas: vec![0.3, 0.3], one: vec![b.one[1].clone(), b.one[1].clone()], three: vec![], thirty: vec![], seed: 9 };
        assert_eq!(gamma_continuity(&same, ObjectKind::One).unwrap().pairs[0].2, 0.0);
        let rep = gamma_continuity(&b, ObjectKind::One).unwrap();
        assert!(rep.theta > 0.2, "{rep:?}");
        let base: Vec<f64> = (1..5)
            .map(|i| {
                b.one[0].snapshots.iter().zip(&b.one[i].snapshots).map(|(x, y)| sobolev_norm(&x.sub(y), -0.25)).fold(0.0, f64::max)
            })
            .collect();
        assert!(base.windows(2).all(|w| w[0] <= w[1]), "{base:?}");
    }
}
