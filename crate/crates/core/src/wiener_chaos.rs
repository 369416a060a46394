//! Hermite polynomials and discrete multiple Wiener–Itô integrals.
//!
//! The noise is discretized into atoms: a (mode, time cell) pair carries the
//! Brownian increment ΔB_n(k) with weight h, and a (mode, initial) pair carries the
//! initial Gaussian g_n with weight 1. A kernel of order k ≤ 3 is a table over
//! k-tuples of atoms together with a conjugation pattern. I_k is the Wick-ordered
//! sum: products of increments with every contraction of a conjugated and an
//! unconjugated copy of the same atom removed.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PhiError, Result};
use crate::gibbs_measures::GaussianSample;
use crate::noise_and_flows::{ou_coefficients, NoisePath};
use crate::nonlinearity::cal_n_self;
use crate::spectral_core::{FourierField, ModeLattice};

/// H_k(x;σ) from H_{k+1} = xH_k − kσH_{k−1}, the coefficients of e^{tx−σt²/2}.
pub fn hermite(k: usize, x: f64, sigma: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if k == 0 {
        return h0;
    }
    for j in 1..k {
        let h2 = x * h1 - j as f64 * sigma * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// H_k(x+y;σ) = Σ_ℓ C(k,ℓ) x^{k−ℓ} H_ℓ(y;σ).
pub fn hermite_shift(k: usize, x: f64, y: f64, sigma: f64) -> f64 {
    let mut binom = 1.0;
    let mut s = 0.0;
    for l in 0..=k {
        s += binom * x.powi((k - l) as i32) * hermite(l, y, sigma);
        binom = binom * (k - l) as f64 / (l + 1) as f64;
    }
    s
}

/// Point of the discretized noise space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    /// Lattice mode index.
    pub mode: usize,
    /// Time cell [t_k, t_{k+1}); `None` for the initial-data Gaussian.
    pub cell: Option<usize>,
}

/// Atoms and their weights: h for time cells, 1 for initial data.
#[derive(Debug)]
pub struct ChaosSpace {
    pub lattice: Arc<ModeLattice>,
    pub atoms: Vec<Atom>,
    pub weights: Vec<f64>,
    pub h: f64,
}

impl ChaosSpace {
    /// All `modes` × (initial ∪ cells 0..cells).
    pub fn new(lattice: &Arc<ModeLattice>, modes: &[usize], cells: usize, h: f64, initial: bool) -> Arc<Self> {
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for &m in modes {
            if initial {
                atoms.push(Atom { mode: m, cell: None });
                weights.push(1.0);
            }
            for c in 0..cells {
                atoms.push(Atom { mode: m, cell: Some(c) });
                weights.push(h);
            }
        }
        Arc::new(Self { lattice: lattice.clone(), atoms, weights, h })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Increment attached to every atom for one realization.
    pub fn realize(&self, phi: Option<&GaussianSample>, path: &NoisePath) -> Result<Vec<Complex64>> {
        let g = phi.map(|p| p.g());
        self.atoms
            .iter()
            .map(|a| match a.cell {
                Some(c) => {
                    if c >= path.steps() {
                        return Err(PhiError::InvalidParameter("cell beyond the noise path".into()));
                    }
                    Ok(path.increment(c)[a.mode])
                }
                None => g
                    .as_ref()
                    .map(|g| g[a.mode])
                    .ok_or_else(|| PhiError::InvalidParameter("initial atoms need a Gaussian sample".into())),
            })
            .collect()
    }

    /// Standard complex Gaussian realization with the atom variances.
    pub fn realize_random(&self, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        self.weights.iter().map(|w| crate::util::complex_normal(rng, *w)).collect()
    }
}

/// Kernel f(a₁,…,a_k) with slot j conjugated when `conj[j]`.
#[derive(Clone, Debug)]
pub struct ChaosKernel {
    pub space: Arc<ChaosSpace>,
    pub conj: Vec<bool>,
    pub values: Vec<Complex64>,
}

impl ChaosKernel {
    pub fn new(space: &Arc<ChaosSpace>, conj: Vec<bool>, values: Vec<Complex64>) -> Result<Self> {
        let k = conj.len();
        if k > 3 {
            return Err(PhiError::InvalidParameter(format!("order {k} > 3")));
        }
        if values.len() != space.len().pow(k as u32) {
            return Err(PhiError::InvalidParameter("kernel table size".into()));
        }
        Ok(Self { space: space.clone(), conj, values })
    }

    pub fn zeros(space: &Arc<ChaosSpace>, conj: Vec<bool>) -> Self {
        let n = space.len().pow(conj.len() as u32);
        Self { space: space.clone(), conj, values: vec![Complex64::default(); n] }
    }

    /// Random table from a seeded stream.
    pub fn random(space: &Arc<ChaosSpace>, conj: Vec<bool>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = space.len().pow(conj.len() as u32);
        let values = (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        Self { space: space.clone(), conj, values }
    }

    pub fn order(&self) -> usize {
        self.conj.len()
    }

    fn index(&self, a: &[usize]) -> usize {
        a.iter().fold(0, |acc, &x| acc * self.space.len() + x)
    }

    pub fn at(&self, a: &[usize]) -> Complex64 {
        self.values[self.index(a)]
    }

    fn tuples(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let n = self.space.len();
        let k = self.order();
        (0..n.pow(k as u32)).map(move |mut i| {
            let mut a = vec![0; k];
            for j in (0..k).rev() {
                a[j] = i % n;
                i /= n;
            }
            a
        })
    }

    fn weight(&self, a: &[usize]) -> f64 {
        a.iter().map(|&x| self.space.weights[x]).product()
    }

    /// Weighted ‖f‖² = Σ|f(a)|²Πw.
    pub fn norm_sq(&self) -> f64 {
        self.tuples().map(|a| self.at(&a).norm_sqr() * self.weight(&a)).sum()
    }

    /// Weighted ⟨f, g⟩ = Σ f(a) conj(g(a)) Πw.
    pub fn inner(&self, other: &ChaosKernel) -> Complex64 {
        self.tuples().map(|a| self.at(&a) * other.at(&a).conj() * self.weight(&a)).sum()
    }

    pub fn axpy(&self, c: Complex64, other: &ChaosKernel) -> ChaosKernel {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + c * y).collect();
        ChaosKernel { space: self.space.clone(), conj: self.conj.clone(), values }
    }

    /// f ⊗ ḡ for first-order kernels.
    pub fn tensor_conj(&self, other: &ChaosKernel) -> Result<ChaosKernel> {
        if self.order() != 1 || other.order() != 1 {
            return Err(PhiError::InvalidParameter("tensor_conj needs order-1 kernels".into()));
        }
        let n = self.space.len();
        let mut values = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                values.push(self.values[a] * other.values[b].conj());
            }
        }
        ChaosKernel::new(&self.space, vec![self.conj[0], !other.conj[0]], values)
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    match k {
        0 => vec![vec![]],
        1 => vec![vec![0]],
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]],
    }
}

/// Average over the argument permutations that preserve the conjugation pattern.
pub fn symmetrize(f: &ChaosKernel) -> ChaosKernel {
    let k = f.order();
    let perms: Vec<Vec<usize>> = permutations(k).into_iter().filter(|p| (0..k).all(|j| f.conj[p[j]] == f.conj[j])).collect();
    let mut out = ChaosKernel::zeros(&f.space, f.conj.clone());
    let scale = 1.0 / perms.len() as f64;
    for a in f.tuples() {
        let mut s = Complex64::default();
        for p in &perms {
            let b: Vec<usize> = p.iter().map(|&j| a[j]).collect();
            s += f.at(&b);
        }
        let i = f.index(&a);
        out.values[i] = s * scale;
    }
    out
}

fn pow_conj(x: Complex64, c: bool) -> Complex64 {
    if c {
        x.conj()
    } else {
        x
    }
}

/// I_k[f] for the realization `x` (one increment per atom).
pub fn multi_integral(f: &ChaosKernel, x: &[Complex64]) -> Complex64 {
    let w = &f.space.weights;
    let c = &f.conj;
    match f.order() {
        0 => f.values[0],
        1 => f.values.iter().zip(x).map(|(v, xa)| v * pow_conj(*xa, c[0])).sum(),
        2 => {
            let n = x.len();
            let mut s = Complex64::default();
            for a in 0..n {
                let xa = pow_conj(x[a], c[0]);
                for b in 0..n {
                    let mut term = xa * pow_conj(x[b], c[1]);
                    if a == b && c[0] != c[1] {
                        term -= w[a];
                    }
                    s += f.values[a * n + b] * term;
                }
            }
            s
        }
        _ => {
            let n = x.len();
            let mut s = Complex64::default();
            for a in 0..n {
                let xa = pow_conj(x[a], c[0]);
                for b in 0..n {
                    let xb = pow_conj(x[b], c[1]);
                    let base = (a * n + b) * n;
                    for d in 0..n {
                        let xd = pow_conj(x[d], c[2]);
                        let mut term = xa * xb * xd;
                        if a == b && c[0] != c[1] {
                            term -= w[a] * xd;
                        }
                        if a == d && c[0] != c[2] {
                            term -= w[a] * xb;
                        }
                        if b == d && c[1] != c[2] {
                            term -= w[b] * xa;
                        }
                        s += f.values[base + d] * term;
                    }
                }
            }
            s
        }
    }
}

/// E[I_k[f] conj(I_ℓ[g])], summing over slot matchings with equal conjugation.
pub fn ito_inner(f: &ChaosKernel, g: &ChaosKernel) -> Complex64 {
    let k = f.order();
    if k != g.order() {
        return Complex64::default();
    }
    let mut total = Complex64::default();
    for p in permutations(k) {
        // slot j of f meets slot p[j] of g
        if !(0..k).all(|j| f.conj[j] == g.conj[p[j]]) {
            continue;
        }
        for a in f.tuples() {
            let mut b = vec![0; k];
            for j in 0..k {
                b[p[j]] = a[j];
            }
            total += f.at(&a) * g.at(&b).conj() * f.weight(&a);
        }
    }
    total
}

/// Kernel of ⟨1⟩̂(n,t_K) under the exact OU recursion: d^K/⟨n⟩ on the initial atom
/// and c·d^{K−1−k} on cell k < K, with (d, c) the one-step decay and noise scale.
pub fn first_order_kernel(space: &Arc<ChaosSpace>, mode: usize, steps: usize, gamma: f64) -> ChaosKernel {
    let mut f = ChaosKernel::zeros(space, vec![false]);
    let b = space.lattice.bsq(mode);
    let (d, c) = ou_coefficients(gamma, space.h, b);
    for (i, a) in space.atoms.iter().enumerate() {
        if a.mode != mode {
            continue;
        }
        f.values[i] = match a.cell {
            None => d.powu(steps as u32) / b.sqrt(),
            Some(k) if k < steps => c * d.powu((steps - 1 - k) as u32),
            Some(_) => Complex64::default(),
        };
    }
    f
}

/// ⟨3⟩̂(·, t_K) as I₃[g_{n,t}]: each mode's first-order integral Y(n) = I₁[f_{n,t}]
/// enters 𝒩(Y,Y,Y), whose index restriction leaves no contractions.
pub fn cubic_object_via_i3(
    lattice: &Arc<ModeLattice>,
    gamma: f64,
    steps: usize,
    phi: &GaussianSample,
    path: &NoisePath,
) -> Result<FourierField> {
    if (phi.seed, phi.member) != (path.seed, path.member) {
        return Err(PhiError::Provenance("initial data and noise come from different streams".into()));
    }
    if steps > path.steps() {
        return Err(PhiError::InvalidParameter("time index beyond the path".into()));
    }
    let g = phi.g();
    let mut y = vec![Complex64::default(); lattice.len()];
    for (i, yi) in y.iter_mut().enumerate() {
        let b = lattice.bsq(i);
        let (d, c) = ou_coefficients(gamma, path.h(), b);
        let mut s = d.powu(steps as u32) / b.sqrt() * g[i];
        if gamma > 0.0 {
            for k in 0..steps {
                s += c * d.powu((steps - 1 - k) as u32) * path.increment(k)[i];
            }
        }
        *yi = s;
    }
    cal_n_self(&FourierField::from_coeffs(lattice, y)?)
}

/// Dense third-order kernel g_{n,t} for one output mode (tiny lattices only).
pub fn cubic_kernel(space: &Arc<ChaosSpace>, out_mode: usize, steps: usize, gamma: f64) -> Result<ChaosKernel> {
    let n = space.len();
    if n > 64 {
        return Err(PhiError::CostGuard(format!("{n} atoms for a dense order-3 kernel")));
    }
    let lat = &space.lattice;
    let firsts: Vec<Complex64> = {
        let mut v = vec![Complex64::default(); n];
        let mut by_mode = std::collections::HashMap::new();
        for a in &space.atoms {
            by_mode.entry(a.mode).or_insert_with(|| first_order_kernel(space, a.mode, steps, gamma));
        }
        for (i, a) in space.atoms.iter().enumerate() {
            v[i] = by_mode[&a.mode].values[i];
        }
        v
    };
    let target = lat.mode(out_mode);
    let mut f = ChaosKernel::zeros(space, vec![false, true, false]);
    for a in 0..n {
        let m1 = space.atoms[a].mode;
        for b in 0..n {
            let m2 = space.atoms[b].mode;
            if m2 == m1 {
                continue;
            }
            for d in 0..n {
                let m3 = space.atoms[d].mode;
                if m3 == m2 {
                    continue;
                }
                let (p1, p2, p3) = (lat.mode(m1), lat.mode(m2), lat.mode(m3));
                if [p1[0] - p2[0] + p3[0], p1[1] - p2[1] + p3[1]] == target {
                    f.values[(a * n + b) * n + d] = firsts[a] * firsts[b].conj() * firsts[d];
                }
            }
        }
    }
    Ok(f)
}

#[derive(Clone, Debug)]
pub struct HyperReport {
    pub ratio: f64,
    pub ci: (f64, f64),
    pub bound: f64,
    pub ok: bool,
}

/// ‖X‖_p/‖X‖₂ with a bootstrap interval, compared to (p−1)^{k/2}.
pub fn hypercontractivity_check(samples: &[Complex64], p: f64, k: u32, seed: u64) -> HyperReport {
    let ratio_of = |idx: &mut dyn Iterator<Item = usize>| {
        let (mut sp, mut s2, mut n) = (0.0, 0.0, 0.0);
        for i in idx {
            let a = samples[i].norm();
            sp += a.powf(p);
            s2 += a * a;
            n += 1.0;
        }
        if s2 == 0.0 {
            return 1.0;
        }
        (sp / n).powf(1.0 / p) / (s2 / n).sqrt()
    };
    let ratio = ratio_of(&mut (0..samples.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boots: Vec<f64> = (0..200)
        .map(|_| {
            let mut it = (0..samples.len()).map(|_| rng.gen_range(0..samples.len()));
            ratio_of(&mut it)
        })
        .collect();
    boots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let bound = (p - 1.0).powf(k as f64 / 2.0);
    HyperReport { ratio, ci: (boots[5], boots[194]), bound, ok: boots[194] <= bound + 1e-12 }
}
