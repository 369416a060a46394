//! Lattice geometry, sharp projections, transforms and dealiased products.
//!
//! A [`ModeLattice`] holds the retained modes 1 + |n|² ≤ N_cut² in lexicographic
//! order together with a padded transform grid of side M ≥ 4·n_max + 1. With that
//! padding a product of three retained fields and the mean of a product of four
//! are free of aliasing.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{PhiError, Result};

/// ⟨n⟩ = (1+|n|²)^{1/2}.
pub fn bracket(n: [i32; 2]) -> f64 {
    (bracket_sq(n) as f64).sqrt()
}

/// ⟨n⟩² = 1+|n|² as an exact integer.
pub fn bracket_sq(n: [i32; 2]) -> i64 {
    1 + (n[0] as i64).pow(2) + (n[1] as i64).pow(2)
}

fn is_smooth_235(mut m: usize) -> bool {
    for p in [2, 3, 5] {
        while m % p == 0 {
            m /= p;
        }
    }
    m == 1
}

/// Smallest 2^a·3^b·5^c not below `lo`.
pub fn fft_friendly_size(lo: usize) -> usize {
    (lo.max(1)..).find(|&m| is_smooth_235(m)).unwrap()
}

/// Retained modes of the ball ⟨n⟩ ≤ N_cut with a cached 2-D transform plan.
pub struct ModeLattice {
    n_cut: u32,
    n_max: i32,
    m: usize,
    modes: Vec<[i32; 2]>,
    bsq: Vec<f64>,
    grid_pos: Vec<usize>,
    lookup: Vec<i32>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for ModeLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModeLattice")
            .field("n_cut", &self.n_cut)
            .field("modes", &self.modes.len())
            .field("m", &self.m)
            .finish()
    }
}

impl ModeLattice {
    /// Lattice with the default padded grid.
    pub fn new(n_cut: u32) -> Result<Arc<Self>> {
        if n_cut == 0 {
            return Err(PhiError::InvalidParameter("N_cut must be positive".into()));
        }
        let n_max = max_coordinate(n_cut);
        Self::with_grid(n_cut, fft_friendly_size(4 * n_max as usize + 1))
    }

    /// Lattice with an explicit grid side `m` (must satisfy m ≥ 4·n_max + 1).
    pub fn with_grid(n_cut: u32, m: usize) -> Result<Arc<Self>> {
        if n_cut == 0 {
            return Err(PhiError::InvalidParameter("N_cut must be positive".into()));
        }
        let n_max = max_coordinate(n_cut);
        if m < 4 * n_max as usize + 1 {
            return Err(PhiError::InvalidParameter(format!(
                "grid {m} below 4*n_max+1 = {}",
                4 * n_max + 1
            )));
        }
        let cut2 = (n_cut as i64).pow(2);
        let side = (2 * n_max + 1) as usize;
        let mut lookup = vec![-1i32; side * side];
        let mut modes = Vec::new();
        for a in -n_max..=n_max {
            for b in -n_max..=n_max {
                if bracket_sq([a, b]) <= cut2 {
                    lookup[((a + n_max) as usize) * side + (b + n_max) as usize] = modes.len() as i32;
                    modes.push([a, b]);
                }
            }
        }
        let wrap = |k: i32| k.rem_euclid(m as i32) as usize;
        let grid_pos = modes.iter().map(|n| wrap(n[0]) * m + wrap(n[1])).collect();
        let bsq = modes.iter().map(|&n| bracket_sq(n) as f64).collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        Ok(Arc::new(Self { n_cut, n_max, m, modes, bsq, grid_pos, lookup, fwd, inv }))
    }

    pub fn n_cut(&self) -> u32 {
        self.n_cut
    }
    pub fn n_max(&self) -> i32 {
        self.n_max
    }
    /// Padded grid side M.
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn len(&self) -> usize {
        self.modes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
    pub fn modes(&self) -> &[[i32; 2]] {
        &self.modes
    }
    pub fn mode(&self, i: usize) -> [i32; 2] {
        self.modes[i]
    }
    /// ⟨n_i⟩² for retained mode i.
    pub fn bsq(&self, i: usize) -> f64 {
        self.bsq[i]
    }
    pub fn bsq_all(&self) -> &[f64] {
        &self.bsq
    }

    pub fn index_of(&self, n: [i32; 2]) -> Option<usize> {
        if n[0].abs() > self.n_max || n[1].abs() > self.n_max {
            return None;
        }
        let side = (2 * self.n_max + 1) as usize;
        let k = self.lookup[((n[0] + self.n_max) as usize) * side + (n[1] + self.n_max) as usize];
        (k >= 0).then_some(k as usize)
    }

    /// Same cutoff and grid.
    pub fn compatible(&self, other: &ModeLattice) -> bool {
        self.n_cut == other.n_cut && self.m == other.m
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let m = self.m;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        transpose(buf, m);
        plan.process_with_scratch(buf, &mut scratch);
        transpose(buf, m);
    }
}

fn max_coordinate(n_cut: u32) -> i32 {
    let c2 = (n_cut as i64).pow(2) - 1;
    let mut k = (c2 as f64).sqrt() as i64;
    while k * k > c2 {
        k -= 1;
    }
    while (k + 1) * (k + 1) <= c2 {
        k += 1;
    }
    k as i32
}

fn transpose(buf: &mut [Complex64], m: usize) {
    for i in 0..m {
        for j in (i + 1)..m {
            buf.swap(i * m + j, j * m + i);
        }
    }
}

/// Physical samples u(x_j) on the uniform M×M grid x_j = 2πj/M, row-major.
#[derive(Clone, Debug)]
pub struct Grid {
    pub m: usize,
    pub values: Vec<Complex64>,
}

impl Grid {
    /// Spatial average (1/M²)Σ_x f(u(x)).
    pub fn average<F: Fn(Complex64) -> f64>(&self, f: F) -> f64 {
        self.values.iter().map(|&z| f(z)).sum::<f64>() / (self.m * self.m) as f64
    }
}

/// Fourier coefficients û(n) indexed by the lattice modes.
#[derive(Clone, Debug)]
pub struct FourierField {
    lattice: Arc<ModeLattice>,
    coeffs: Vec<Complex64>,
}

impl FourierField {
    pub fn zeros(lattice: &Arc<ModeLattice>) -> Self {
        Self { lattice: lattice.clone(), coeffs: vec![Complex64::default(); lattice.len()] }
    }

    pub fn from_coeffs(lattice: &Arc<ModeLattice>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(PhiError::LatticeMismatch(format!(
                "{} coefficients for {} modes",
                coeffs.len(),
                lattice.len()
            )));
        }
        Ok(Self { lattice: lattice.clone(), coeffs })
    }

    /// Field with value `c` at mode `n` and zero elsewhere.
    pub fn single_mode(lattice: &Arc<ModeLattice>, n: [i32; 2], c: Complex64) -> Result<Self> {
        let i = lattice.index_of(n).ok_or_else(|| {
            PhiError::InvalidParameter(format!("mode {n:?} outside the lattice"))
        })?;
        let mut u = Self::zeros(lattice);
        u.coeffs[i] = c;
        Ok(u)
    }

    pub fn lattice(&self) -> &Arc<ModeLattice> {
        &self.lattice
    }
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }
    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }
    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }
    pub fn get(&self, n: [i32; 2]) -> Complex64 {
        self.lattice.index_of(n).map_or(Complex64::default(), |i| self.coeffs[i])
    }

    pub fn check_same(&self, other: &FourierField) -> Result<()> {
        if self.lattice.compatible(&other.lattice) {
            Ok(())
        } else {
            Err(PhiError::LatticeMismatch(format!(
                "{:?} vs {:?}",
                self.lattice, other.lattice
            )))
        }
    }

    /// Coefficient-wise map with the mode index.
    pub fn map_indexed<F: Fn(usize, Complex64) -> Complex64>(&self, f: F) -> Self {
        let coeffs = self.coeffs.iter().enumerate().map(|(i, &c)| f(i, c)).collect();
        Self { lattice: self.lattice.clone(), coeffs }
    }

    pub fn scale(&self, a: Complex64) -> Self {
        self.map_indexed(|_, c| a * c)
    }

    pub fn conj(&self) -> Self {
        self.map_indexed(|_, c| c.conj())
    }

    /// self + a·other.
    pub fn axpy(&self, a: Complex64, other: &FourierField) -> Self {
        debug_assert!(self.lattice.compatible(&other.lattice));
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| x + a * y).collect();
        Self { lattice: self.lattice.clone(), coeffs }
    }

    pub fn add(&self, other: &FourierField) -> Self {
        self.axpy(Complex64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &FourierField) -> Self {
        self.axpy(Complex64::new(-1.0, 0.0), other)
    }

    /// ⟨self, other⟩ = Σ û(n) conj(v̂(n)).
    pub fn dot(&self, other: &FourierField) -> Complex64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b.conj()).sum()
    }

    /// S₂ = Σ|û(n)|².
    pub fn mass(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Plain ℓ² norm of the coefficients.
    pub fn norm(&self) -> f64 {
        self.mass().sqrt()
    }

    /// ℓ² distance to another field.
    pub fn distance(&self, other: &FourierField) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }

    /// Copy onto another lattice, dropping modes that are not retained there.
    pub fn transfer(&self, target: &Arc<ModeLattice>) -> Self {
        let mut out = Self::zeros(target);
        for (i, &n) in self.lattice.modes().iter().enumerate() {
            if let Some(j) = target.index_of(n) {
                out.coeffs[j] = self.coeffs[i];
            }
        }
        out
    }

    pub fn to_snapshot(&self) -> FieldSnapshot {
        FieldSnapshot {
            n_cut: self.lattice.n_cut,
            m: self.lattice.m,
            modes: self.lattice.modes.clone(),
            coeffs: self.coeffs.iter().map(|c| [c.re, c.im]).collect(),
        }
    }

    pub fn from_snapshot(snap: &FieldSnapshot) -> Result<Self> {
        let lattice = ModeLattice::with_grid(snap.n_cut, snap.m)?;
        if lattice.modes != snap.modes {
            return Err(PhiError::LatticeMismatch("snapshot mode ordering".into()));
        }
        let coeffs = snap.coeffs.iter().map(|c| Complex64::new(c[0], c[1])).collect();
        Self::from_coeffs(&lattice, coeffs)
    }
}

/// JSON layout of a field snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    #[serde(rename = "N_cut")]
    pub n_cut: u32,
    #[serde(rename = "M")]
    pub m: usize,
    pub modes: Vec<[i32; 2]>,
    pub coeffs: Vec<[f64; 2]>,
}

fn cutoff_check(u: &FourierField, n: u32) -> Result<()> {
    if n > u.lattice.n_cut {
        Err(PhiError::CutoffExceeded { requested: n, available: u.lattice.n_cut })
    } else {
        Ok(())
    }
}

/// 𝐏_{≤N}: keep ⟨n⟩ ≤ N.
pub fn project_leq(u: &FourierField, n: u32) -> Result<FourierField> {
    cutoff_check(u, n)?;
    let n2 = (n as f64).powi(2);
    Ok(u.map_indexed(|i, c| if u.lattice.bsq(i) <= n2 { c } else { Complex64::default() }))
}

/// Dyadic shell test N ≤ ⟨n⟩ < 2N.
pub fn in_dyadic_shell(bsq: f64, n: u32) -> bool {
    let lo = (n as f64).powi(2);
    bsq >= lo && bsq < 4.0 * lo
}

/// 𝐏_N: keep N ≤ ⟨n⟩ < 2N.
pub fn project_dyadic(u: &FourierField, n: u32) -> FourierField {
    u.map_indexed(|i, c| if in_dyadic_shell(u.lattice.bsq(i), n) { c } else { Complex64::default() })
}

/// Dyadic scales 1, 2, 4, … whose shells meet the lattice.
pub fn dyadic_scales(lattice: &ModeLattice) -> Vec<u32> {
    let mut out = Vec::new();
    let mut n = 1u32;
    while n <= lattice.n_cut {
        out.push(n);
        n *= 2;
    }
    out
}

/// Dyadic scale of ⟨n⟩ (the N with N ≤ ⟨n⟩ < 2N).
pub fn dyadic_of(bsq: f64) -> u32 {
    let mut n = 1u32;
    while 4.0 * (n as f64).powi(2) <= bsq {
        n *= 2;
    }
    n
}

/// u(x) = Σ û(n) e^{in·x} on the padded grid.
pub fn to_physical(u: &FourierField) -> Grid {
    let lat = &u.lattice;
    let m = lat.m;
    let mut values = vec![Complex64::default(); m * m];
    for (c, &p) in u.coeffs.iter().zip(&lat.grid_pos) {
        values[p] = *c;
    }
    lat.fft2(&mut values, true);
    Grid { m, values }
}

/// Inverse of [`to_physical`], truncated to the retained modes.
pub fn to_fourier(lattice: &Arc<ModeLattice>, grid: &Grid) -> Result<FourierField> {
    if grid.m != lattice.m {
        return Err(PhiError::LatticeMismatch(format!("grid {} vs lattice {}", grid.m, lattice.m)));
    }
    let mut buf = grid.values.clone();
    lattice.fft2(&mut buf, false);
    let scale = 1.0 / (lattice.m * lattice.m) as f64;
    let coeffs = lattice.grid_pos.iter().map(|&p| buf[p] * scale).collect();
    FourierField::from_coeffs(lattice, coeffs)
}

/// 𝐏(u₁ ū₂ u₃) by one dealiased pass.
pub fn triple_product(u1: &FourierField, u2: &FourierField, u3: &FourierField) -> Result<FourierField> {
    u1.check_same(u2)?;
    u1.check_same(u3)?;
    let g1 = to_physical(u1);
    let mut out = if std::ptr::eq(u1, u2) && std::ptr::eq(u1, u3) {
        let mut g = g1;
        for z in g.values.iter_mut() {
            *z *= z.norm_sqr();
        }
        g
    } else {
        let g2 = to_physical(u2);
        let g3 = to_physical(u3);
        let values = g1
            .values
            .iter()
            .zip(&g2.values)
            .zip(&g3.values)
            .map(|((a, b), c)| a * b.conj() * c)
            .collect();
        Grid { m: g1.m, values }
    };
    out.m = u1.lattice.m;
    to_fourier(&u1.lattice, &out)
}

/// ‖u‖_{H^s} = ‖⟨n⟩^s û(n)‖_{ℓ²}.
pub fn sobolev_norm(u: &FourierField, s: f64) -> f64 {
    u.coeffs
        .iter()
        .zip(u.lattice.bsq_all())
        .map(|(c, b)| b.powf(s) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// ‖u‖_{𝓕L^{s,∞}} = sup ⟨n⟩^s|û(n)|.
pub fn fl_norm(u: &FourierField, s: f64) -> f64 {
    u.coeffs
        .iter()
        .zip(u.lattice.bsq_all())
        .map(|(c, b)| b.powf(0.5 * s) * c.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{complex_normal, stream_rng};

    pub(crate) fn random_field(lat: &Arc<ModeLattice>, seed: u64) -> FourierField {
        let mut rng = stream_rng(seed, 99, 0);
        let coeffs = (0..lat.len()).map(|_| complex_normal(&mut rng, 1.0)).collect();
        FourierField::from_coeffs(lat, coeffs).unwrap()
    }

    #[test]
    fn bracket_values() {
        assert_eq!(bracket([0, 0]), 1.0);
        assert!((bracket([1, 0]) - 2f64.sqrt()).abs() < 1e-15);
        assert!((bracket([3, 4]) - 26f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lattice_membership_and_grid() {
        for n_cut in 1..=12u32 {
            let lat = ModeLattice::new(n_cut).unwrap();
            let brute: Vec<[i32; 2]> = (-13..=13)
                .flat_map(|a| (-13..=13).map(move |b| [a, b]))
                .filter(|&n| bracket_sq(n) <= (n_cut as i64).pow(2))
                .collect();
            assert_eq!(lat.modes(), brute.as_slice());
            assert!(lat.m() >= 4 * lat.n_max() as usize + 1);
            for (i, &n) in lat.modes().iter().enumerate() {
                assert_eq!(lat.index_of(n), Some(i));
            }
        }
        assert_eq!(ModeLattice::new(8).unwrap().m(), 30);
    }

    #[test]
    fn projection_examples() {
        let lat = ModeLattice::new(6).unwrap();
        let u = random_field(&lat, 1);
        let p1 = project_leq(&u, 1).unwrap();
        let nz: Vec<usize> = (0..lat.len()).filter(|&i| p1.coeffs()[i].norm() > 0.0).collect();
        assert_eq!(nz, vec![lat.index_of([0, 0]).unwrap()]);
        assert_eq!(project_leq(&u, 6).unwrap().coeffs(), u.coeffs());
        assert!(project_leq(&u, 7).is_err());
        let p3 = project_leq(&u, 3).unwrap();
        assert_eq!(project_leq(&p3, 3).unwrap().coeffs(), p3.coeffs());
        assert_eq!(project_leq(&project_leq(&u, 5).unwrap(), 3).unwrap().coeffs(), p3.coeffs());
    }

    #[test]
    fn dyadic_partition() {
        let lat = ModeLattice::new(9).unwrap();
        let u = random_field(&lat, 2);
        let mut sum = FourierField::zeros(&lat);
        let scales = dyadic_scales(&lat);
        for &n in &scales {
            let p = project_dyadic(&u, n);
            for &n2 in &scales {
                if n2 != n {
                    let q = project_dyadic(&u, n2);
                    assert!(p.coeffs().iter().zip(q.coeffs()).all(|(a, b)| a.norm() * b.norm() == 0.0));
                }
            }
            sum = sum.add(&p);
        }
        assert_eq!(sum.coeffs(), u.coeffs());
        let shell1 = project_dyadic(&FourierField::from_coeffs(&lat, vec![Complex64::new(1.0, 0.0); lat.len()]).unwrap(), 1);
        assert_eq!(shell1.coeffs().iter().filter(|c| c.norm() > 0.0).count(), 9);
    }

    #[test]
    fn transforms() {
        let lat = ModeLattice::new(5).unwrap();
        let one = FourierField::single_mode(&lat, [0, 0], Complex64::new(1.0, 0.0)).unwrap();
        let g = to_physical(&one);
        assert!(g.values.iter().all(|z| (z - 1.0).norm() < 1e-14));
        let u = random_field(&lat, 3);
        let back = to_fourier(&lat, &to_physical(&u)).unwrap();
        assert!(back.distance(&u) <= 1e-12 * u.norm());
        let three = FourierField::from_coeffs(
            &lat,
            (0..lat.len())
                .map(|i| if i < 3 { Complex64::new(i as f64 + 1.0, 0.5) } else { Complex64::default() })
                .collect(),
        )
        .unwrap();
        let direct: f64 = (0..3).map(|i| (i as f64 + 1.0).powi(2) + 0.25).sum();
        let parseval = to_physical(&three).average(|z| z.norm_sqr());
        assert!((direct - parseval).abs() < 1e-12 * direct);
    }

    #[test]
    fn norms() {
        let lat = ModeLattice::new(3).unwrap();
        let u = FourierField::single_mode(&lat, [1, 0], Complex64::new(2.0, 0.0)).unwrap();
        assert!((sobolev_norm(&u, 1.0) - 2.0 * 2f64.sqrt()).abs() < 1e-14);
        assert!((fl_norm(&u, 1.0) - 2.0 * 2f64.sqrt()).abs() < 1e-14);
        let v = random_field(&lat, 4);
        assert!((sobolev_norm(&v, 0.0) - v.norm()).abs() < 1e-12);
    }

    #[test]
    fn snapshot_roundtrip() {
        let lat = ModeLattice::new(3).unwrap();
        let u = random_field(&lat, 5);
        let json = serde_json::to_string(&u.to_snapshot()).unwrap();
        assert!(json.contains("\"N_cut\":3"));
        let snap: FieldSnapshot = serde_json::from_str(&json).unwrap();
        let v = FourierField::from_snapshot(&snap).unwrap();
        assert_eq!(u.coeffs(), v.coeffs());
    }

    #[test]
    fn gff_sobolev_expectation() {
        let lat = ModeLattice::new(6).unwrap();
        let s = 0.3;
        let exact: f64 = lat.bsq_all().iter().map(|b| b.powf(s - 1.0)).sum();
        let mut vals = Vec::new();
        for k in 0..4000 {
            let mut rng = stream_rng(11, 1, k);
            let coeffs = lat.bsq_all().iter().map(|b| complex_normal(&mut rng, 1.0 / b)).collect();
            let u = FourierField::from_coeffs(&lat, coeffs).unwrap();
            vals.push(sobolev_norm(&u, s).powi(2));
        }
        let (m, se) = crate::util::mean_se(&vals);
        assert!((m - exact).abs() < 3.0 * se, "{m} vs {exact} ± {se}");
    }
}

#[cfg(test)]
pub(crate) use tests::random_field;
