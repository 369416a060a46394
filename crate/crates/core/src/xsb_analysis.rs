//! Space–time analysis relative to the Schrödinger flow.
//!
//! A trajectory on [0,T] is extended by the free flow outside [0,T], multiplied by a
//! fixed smooth window χ (≡ 1 on [0,T], supported in [−T,2T]) and transformed in
//! time after removing the phase e^{−it⟨n⟩²}. The result is the twisted transform
//! ũ(n,λ), sampled on λ_m = 2πm/(Ph) with P the padded FFT length, and normalized so
//! that Σ_n Σ_m |ũ(n,λ_m)|² Δλ/2π = Σ_n Σ_j h|χu(n,t_j)|².
//!
//! Also here: the Duhamel kernel K_γ(n,λ,μ) with its bounds, an L⁴ Strichartz probe,
//! a trilinear ratio, and power-iteration estimates for the random operators
//! v ↦ 𝓘_γ𝒩(v,z,z), 𝓘_γ𝒩(z,v,z) and the bilinear (u,v) ↦ 𝓘_γ𝒩(z,u,v), 𝓘_γ𝒩(u,z,v).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{PhiError, Result};
use crate::noise_and_flows::Trajectory;
use crate::nonlinearity::cal_n;
use crate::spectral_core::{fft_friendly_size, to_physical, FourierField, ModeLattice};
use crate::util::{complex_normal, gauss_legendre, loglog_slope, stream_rng, tag};

/// 0 for x ≤ 0, 1 for x ≥ 1, C^∞ in between.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

/// Analysis window: χ ≡ 1 on [0,T], ramps on [−T,0] and [T,2T].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Window {
    pub t: f64,
}

impl Window {
    pub fn new(t: f64) -> Result<Self> {
        if t <= 0.0 || !t.is_finite() {
            return Err(PhiError::InvalidParameter(format!("window length {t}")));
        }
        Ok(Self { t })
    }

    pub fn eval(&self, s: f64) -> f64 {
        smooth_step((s + self.t) / self.t) * smooth_step((2.0 * self.t - s) / self.t)
    }

    pub fn support(&self) -> (f64, f64) {
        (-self.t, 2.0 * self.t)
    }
}

/// Extended time grid t_j = (j − pre)h, j < pre + k + 1 + post, padded to P.
#[derive(Clone, Debug)]
struct Layout {
    h: f64,
    k: usize,
    pre: usize,
    total: usize,
    p: usize,
}

impl Layout {
    fn new(h: f64, k: usize, n_cut: u32) -> Result<Self> {
        let t = h * k as f64;
        let need = (4.0 * (n_cut as f64).powi(2)).max(64.0 / t);
        if PI / h < need {
            return Err(PhiError::InvalidParameter(format!("time step {h} resolves |λ| ≤ {:.1}, need {need:.1}", PI / h)));
        }
        let total = 3 * k + 1;
        Ok(Self { h, k, pre: k, total, p: fft_friendly_size(2 * total) })
    }

    fn time(&self, j: usize) -> f64 {
        (j as f64 - self.pre as f64) * self.h
    }

    fn dlambda(&self) -> f64 {
        2.0 * PI / (self.p as f64 * self.h)
    }

    fn lambda(&self, m: usize) -> f64 {
        let mm = if m < self.p.div_ceil(2) { m as f64 } else { m as f64 - self.p as f64 };
        mm * self.dlambda()
    }

    fn t0(&self) -> f64 {
        self.time(0)
    }
}

fn layout_of(traj: &Trajectory, window: &Window) -> Result<Layout> {
    let h = traj.dt()?;
    let k = traj.len() - 1;
    if traj.times[0].abs() > 1e-12 {
        return Err(PhiError::InvalidParameter("trajectory must start at t = 0".into()));
    }
    if (h * k as f64 - window.t).abs() > 1e-9 * window.t {
        return Err(PhiError::InvalidParameter(format!("window T = {} vs trajectory T = {}", window.t, h * k as f64)));
    }
    Layout::new(h, k, traj.lattice().n_cut())
}

fn planner_pair(p: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(p), planner.plan_fft_inverse(p))
}

/// Twisted transform of the windowed free extension of `snaps` (one field per grid time).
fn transform_fields(lay: &Layout, window: &Window, snaps: &[FourierField], fft: &Arc<dyn Fft<f64>>) -> Vec<Vec<Complex64>> {
    let lat = snaps[0].lattice().clone();
    let t_end = lay.h * lay.k as f64;
    let chi: Vec<f64> = (0..lay.total).map(|j| window.eval(lay.time(j))).collect();
    let shift: Vec<Complex64> = (0..lay.p).map(|m| Complex64::from_polar(lay.h, -lay.t0() * lay.lambda(m))).collect();
    let mut out = Vec::with_capacity(lat.len());
    let mut buf = vec![Complex64::default(); lay.p];
    for i in 0..lat.len() {
        let b = lat.bsq(i);
        let (u0, ut) = (snaps[0].coeffs()[i], snaps[lay.k].coeffs()[i]);
        buf.iter_mut().for_each(|x| *x = Complex64::default());
        for j in 0..lay.total {
            let t = lay.time(j);
            // demodulated value u(t)e^{itb}
            let w = if j < lay.pre {
                u0
            } else if j <= lay.pre + lay.k {
                snaps[j - lay.pre].coeffs()[i] * Complex64::from_polar(1.0, t * b)
            } else {
                ut * Complex64::from_polar(1.0, t_end * b)
            };
            buf[j] = chi[j] * w;
        }
        fft.process(&mut buf);
        out.push(buf.iter().zip(&shift).map(|(x, s)| x * s).collect());
    }
    out
}

/// Adjoint of `transform_fields` with respect to the plain ℓ² pairings.
fn transform_adjoint(lay: &Layout, window: &Window, lat: &Arc<ModeLattice>, y: &[Vec<Complex64>], ifft: &Arc<dyn Fft<f64>>) -> Result<Vec<FourierField>> {
    let t_end = lay.h * lay.k as f64;
    let chi: Vec<f64> = (0..lay.total).map(|j| window.eval(lay.time(j))).collect();
    let shift: Vec<Complex64> = (0..lay.p).map(|m| Complex64::from_polar(lay.h, lay.t0() * lay.lambda(m))).collect();
    let mut out = vec![vec![Complex64::default(); lat.len()]; lay.k + 1];
    let mut buf = vec![Complex64::default(); lay.p];
    for i in 0..lat.len() {
        let b = lat.bsq(i);
        for (x, (v, s)) in buf.iter_mut().zip(y[i].iter().zip(&shift)) {
            *x = v * s;
        }
        ifft.process(&mut buf);
        let mut d0 = Complex64::default();
        let mut dk = Complex64::default();
        for j in 0..lay.total {
            let t = lay.time(j);
            let e = chi[j] * buf[j];
            if j < lay.pre {
                d0 += e;
            } else if j <= lay.pre + lay.k {
                out[j - lay.pre][i] += e * Complex64::from_polar(1.0, -t * b);
            } else {
                dk += e * Complex64::from_polar(1.0, -t_end * b);
            }
        }
        out[0][i] += d0;
        out[lay.k][i] += dk;
    }
    out.into_iter().map(|c| FourierField::from_coeffs(lat, c)).collect()
}

/// ũ(n,λ_m) per mode, in FFT order.
#[derive(Clone, Debug)]
pub struct TwistedSpectrum {
    pub lattice: Arc<ModeLattice>,
    pub lambdas: Vec<f64>,
    pub dlambda: f64,
    pub coeffs: Vec<Vec<Complex64>>,
    pub window: Window,
    /// Share of Σ|ũ|² carried by |λ| > ¾ max|λ|.
    pub tail: f64,
}

pub fn twisted_transform(traj: &Trajectory, window: &Window) -> Result<TwistedSpectrum> {
    let lay = layout_of(traj, window)?;
    let (fft, _) = planner_pair(lay.p);
    let coeffs = transform_fields(&lay, window, &traj.snapshots, &fft);
    let lambdas: Vec<f64> = (0..lay.p).map(|m| lay.lambda(m)).collect();
    let lmax = lambdas.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let (mut tot, mut tail) = (0.0, 0.0);
    for row in &coeffs {
        for (c, l) in row.iter().zip(&lambdas) {
            tot += c.norm_sqr();
            if l.abs() > 0.75 * lmax {
                tail += c.norm_sqr();
            }
        }
    }
    Ok(TwistedSpectrum {
        lattice: traj.lattice().clone(),
        lambdas,
        dlambda: lay.dlambda(),
        coeffs,
        window: *window,
        tail: if tot > 0.0 { tail / tot } else { 0.0 },
    })
}

/// ‖⟨n⟩^s⟨λ⟩^b ũ‖_{ℓ²_n L²_λ} by the λ-grid Riemann sum.
pub fn xsb_norm(spec: &TwistedSpectrum, s: f64, b: f64) -> f64 {
    let wl: Vec<f64> = spec.lambdas.iter().map(|l| (1.0 + l * l).powf(b)).collect();
    let mut tot = 0.0;
    for (i, row) in spec.coeffs.iter().enumerate() {
        let ws = spec.lattice.bsq(i).powf(s);
        tot += ws * row.iter().zip(&wl).map(|(c, w)| w * c.norm_sqr()).sum::<f64>();
    }
    (tot * spec.dlambda / (2.0 * PI)).sqrt()
}

/// ‖χ e^{it(Δ−1)}φ‖_{X^{s,b}} / ‖φ‖_{H^s} on the same grid: the window's ⟨λ⟩^b-weighted L² norm.
fn free_factor(lay: &Layout, window: &Window, b: f64, fft: &Arc<dyn Fft<f64>>) -> f64 {
    let mut buf = vec![Complex64::default(); lay.p];
    for (j, x) in buf.iter_mut().enumerate().take(lay.total) {
        *x = Complex64::new(window.eval(lay.time(j)), 0.0);
    }
    fft.process(&mut buf);
    let s: f64 = buf.iter().enumerate().map(|(m, c)| (1.0 + lay.lambda(m).powi(2)).powf(b) * (lay.h * lay.h) * c.norm_sqr()).sum();
    (s * lay.dlambda() / (2.0 * PI)).sqrt()
}

// ---------------------------------------------------------------- Duhamel kernel

/// φ ≡ 1 on [−1,1], supported in [−2,2].
pub fn kernel_cutoff(t: f64) -> f64 {
    smooth_step(2.0 - t.abs())
}

/// φ₁(x) = (eˣ − 1)/x.
fn phi1(x: Complex64) -> Complex64 {
    if x.norm() < 0.5 {
        let mut term = Complex64::new(1.0, 0.0);
        let mut s = term;
        for k in 2..30 {
            term = term * x / k as f64;
            s += term;
            if term.norm() < 1e-17 {
                break;
            }
        }
        s
    } else {
        (x.exp() - 1.0) / x
    }
}

/// (e^{γ(t−|t|)⟨n⟩²+itμ} − e^{−γ|t|⟨n⟩²})/(γ⟨n⟩² + iμ) with a = γ⟨n⟩².
fn kernel_factor(a: f64, mu: f64, t: f64) -> Complex64 {
    let z = Complex64::new(a, mu);
    if (z * t).norm() < 0.5 {
        return (-a * t.abs()).exp() * t * phi1(z * t);
    }
    if t >= 0.0 {
        (Complex64::from_polar(1.0, mu * t) - (-a * t).exp()) / z
    } else {
        ((Complex64::new(2.0 * a, mu) * t).exp() - (a * t).exp()) / z
    }
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(16, -1.0, 1.0))
}

/// K_γ(n,λ,μ) = ∫φ(t)e^{−itλ}(e^{γ(t−|t|)⟨n⟩²+itμ} − e^{−γ|t|⟨n⟩²})/(γ⟨n⟩²+iμ)dt
/// by composite Gauss–Legendre, graded toward t = 0 when γ⟨n⟩² is large.
pub fn duhamel_kernel(gamma: f64, bsq: f64, lambda: f64, mu: f64) -> Complex64 {
    let a = gamma * bsq;
    let omega = lambda.abs() + mu.abs() + 1.0;
    let mut cuts = vec![0.0];
    if a > 1.0 {
        let mut x = 0.25 / a;
        while x < 1.0 {
            cuts.push(x);
            x *= 2.0;
        }
    }
    cuts.extend([1.0, 1.25, 1.5, 1.75, 2.0]);
    let (xs, ws) = gl16();
    let mut total = Complex64::default();
    for side in [-1.0, 1.0] {
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let sub = ((hi - lo) * omega / 4.0).ceil().max(1.0) as usize;
            let width = (hi - lo) / sub as f64;
            for q in 0..sub {
                let c = lo + (q as f64 + 0.5) * width;
                for (x, wt) in xs.iter().zip(ws) {
                    let t = side * (c + 0.5 * width * x);
                    let f = kernel_cutoff(t) * Complex64::from_polar(1.0, -t * lambda) * kernel_factor(a, mu, t);
                    total += 0.5 * width * wt * f;
                }
            }
        }
    }
    total
}

fn jb(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// ⟨a+iμ⟩⁻¹ min(⟨λ⟩⁻¹ + ⟨λ−μ⟩⁻¹, ⟨a⟩⟨λ⟩⁻² + ⟨a⟩⟨λ−μ⟩⁻²), a = γ⟨n⟩².
pub fn d4_bound(gamma: f64, bsq: f64, lambda: f64, mu: f64) -> f64 {
    let a = gamma * bsq;
    let za = (1.0 + a * a + mu * mu).sqrt();
    let first = 1.0 / jb(lambda) + 1.0 / jb(lambda - mu);
    let second = jb(a) / jb(lambda).powi(2) + jb(a) / jb(lambda - mu).powi(2);
    first.min(second) / za
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelSweep {
    pub bound: &'static str,
    pub calibration_points: usize,
    pub points: usize,
    /// max |K|/bound over the calibration sweep.
    pub c_cal: f64,
    /// max |K|/bound over the validation sweep.
    pub c_val: f64,
    /// Validation points with ratio above 2·c_cal.
    pub violations: usize,
}

#[derive(Clone, Copy, Debug)]
struct KernelPoint {
    g1: f64,
    g2: f64,
    bsq: f64,
    lambda: f64,
    mu: f64,
}

fn kernel_points(count: usize, seed: u64, member: u64, n_box: i32) -> Vec<KernelPoint> {
    let mut rng = stream_rng(seed, tag::PROBE, member);
    let signed_log = |rng: &mut rand_chacha::ChaCha8Rng| {
        let m = 10f64.powf(rng.gen_range(-2.0..3.0));
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    };
    (0..count)
        .map(|_| {
            let g1 = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..1.0) };
            let g2 = rng.gen_range(0.0..1.0);
            // box radius log-uniform so that low modes are sampled as often as high ones
            let r = ((n_box as f64 + 1.0).powf(rng.gen_range(0.0..1.0)) - 1.0).round() as i32;
            let n = [rng.gen_range(-r..=r), rng.gen_range(-r..=r)];
            let bsq = 1.0 + (n[0] * n[0] + n[1] * n[1]) as f64;
            let lambda = signed_log(&mut rng);
            let mu = if rng.gen_bool(0.2) { lambda + signed_log(&mut rng) * 0.01 } else { signed_log(&mut rng) };
            KernelPoint { g1, g2, bsq, lambda, mu }
        })
        .collect()
}

fn sweep_ratio(points: &[KernelPoint], f: &(dyn Fn(&KernelPoint) -> f64 + Sync)) -> Vec<f64> {
    use rayon::prelude::*;
    points.par_iter().map(f).collect()
}

/// Calibrate C on one random sweep, then count validation points above 2C.
pub fn kernel_bound_sweeps(calibration: usize, points: usize, seed: u64) -> (KernelSweep, KernelSweep) {
    let d4 = |p: &KernelPoint| duhamel_kernel(p.g1, p.bsq, p.lambda, p.mu).norm() / d4_bound(p.g1, p.bsq, p.lambda, p.mu);
    let d5 = |p: &KernelPoint| {
        let dk = (duhamel_kernel(p.g2, p.bsq, p.lambda, p.mu) - duhamel_kernel(p.g1, p.bsq, p.lambda, p.mu)).norm();
        let dg = (p.g2 - p.g1).abs().max(1e-300);
        dk / (dg * p.bsq)
    };
    let cal = kernel_points(calibration, seed, 0, 32);
    let val = kernel_points(points, seed, 1, 32);
    let build = |name: &'static str, f: &(dyn Fn(&KernelPoint) -> f64 + Sync)| {
        let c_cal = sweep_ratio(&cal, f).into_iter().fold(0.0, f64::max);
        let r = sweep_ratio(&val, f);
        let c_val = r.iter().cloned().fold(0.0, f64::max);
        let violations = r.iter().filter(|&&x| x > 2.0 * c_cal || !x.is_finite()).count();
        KernelSweep { bound: name, calibration_points: calibration, points, c_cal, c_val, violations }
    };
    (build("D4", &d4), build("D5", &d5))
}

// ---------------------------------------------------------------- Strichartz / trilinear

/// L⁴(𝕋²×[0,T]) norm by the trapezoid rule in t and the grid mean in x.
pub fn l4_norm(traj: &Trajectory) -> Result<f64> {
    let h = traj.dt()?;
    let vals: Vec<f64> = traj.snapshots.iter().map(|u| to_physical(u).average(|z| z.norm_sqr().powi(2))).collect();
    let n = vals.len();
    let s: f64 = vals.iter().enumerate().map(|(k, v)| if k == 0 || k == n - 1 { 0.5 * v } else { *v }).sum();
    Ok((h * s).powf(0.25))
}

/// Free-flow-like random field on {|n| ≤ r}: û(n,t) = c_n e^{−it(⟨n⟩²+τ_n)}, τ_n ∈ [−8,8].
pub fn random_ball_field(lattice: &Arc<ModeLattice>, radius: f64, t: f64, h: f64, seed: u64, member: u64) -> Result<Trajectory> {
    let steps = (t / h).round() as usize;
    let mut rng = stream_rng(seed, tag::PROBE, member);
    let lat = lattice.clone();
    let data: Vec<(Complex64, f64)> = lat
        .modes()
        .iter()
        .map(|n| {
            let c = complex_normal(&mut rng, 1.0);
            let tau = rng.gen_range(-8.0..8.0);
            let inside = ((n[0] * n[0] + n[1] * n[1]) as f64) <= radius * radius;
            (if inside { c } else { Complex64::default() }, tau)
        })
        .collect();
    let mut times = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let tk = k as f64 * h;
        times.push(tk);
        let coeffs = data.iter().enumerate().map(|(i, (c, tau))| c * Complex64::from_polar(1.0, -tk * (lat.bsq(i) + tau))).collect();
        snapshots.push(FourierField::from_coeffs(&lat, coeffs)?);
    }
    Ok(Trajectory { times, snapshots, gamma: 0.0, config: None, provenance: None })
}

#[derive(Clone, Debug, Serialize)]
pub struct StrichartzRow {
    pub radius: f64,
    pub q_size: usize,
    pub sup_ratio: f64,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StrichartzReport {
    pub rows: Vec<StrichartzRow>,
    /// Fitted exponent of sup ratio against |Q|.
    pub exponent: f64,
}

/// ‖𝐏_Q u‖_{L⁴(𝕋²×[0,1])}/‖χu‖_{X^{0,1/2}} over random fields on centred balls.
pub fn strichartz_check(radii: &[f64], ensemble: usize, h: f64, seed: u64) -> Result<StrichartzReport> {
    let rmax = radii.iter().cloned().fold(0.0, f64::max);
    let lat = ModeLattice::new(rmax.ceil() as u32 + 1)?;
    let window = Window::new(1.0)?;
    let mut rows = Vec::new();
    for (ri, &r) in radii.iter().enumerate() {
        let q_size = lat.modes().iter().filter(|n| ((n[0] * n[0] + n[1] * n[1]) as f64) <= r * r).count();
        let mut ratios = Vec::with_capacity(ensemble);
        for m in 0..ensemble {
            let traj = random_ball_field(&lat, r, 1.0, h, seed, (ri * ensemble + m) as u64)?;
            let x = xsb_norm(&twisted_transform(&traj, &window)?, 0.0, 0.5);
            ratios.push(l4_norm(&traj)? / x);
        }
        let sup = ratios.iter().cloned().fold(0.0, f64::max);
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        rows.push(StrichartzRow { radius: r, q_size, sup_ratio: sup, mean_ratio: mean });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.q_size as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.sup_ratio).collect();
    Ok(StrichartzReport { exponent: loglog_slope(&xs, &ys), rows })
}

/// ‖𝒩(u₁,u₂,u₃)‖_{X^{s,−½+ε}} over max_σ ‖u_σ1‖_{X^{s,½−ε}}‖u_σ2‖_{X^{10ε,½−ε}}‖u_σ3‖_{X^{0,½−ε}}.
pub fn trilinear_ratio(u: [&Trajectory; 3], s: f64, eps: f64) -> Result<f64> {
    let t = *u[0].times.last().unwrap();
    let window = Window::new(t)?;
    let n = u[0].snapshots.iter().zip(&u[1].snapshots).zip(&u[2].snapshots).map(|((a, b), c)| cal_n(a, b, c)).collect::<Result<Vec<_>>>()?;
    let nt = Trajectory { times: u[0].times.clone(), snapshots: n, gamma: 0.0, config: None, provenance: None };
    let lhs = xsb_norm(&twisted_transform(&nt, &window)?, s, -0.5 + eps);
    let specs = u.iter().map(|x| twisted_transform(x, &window)).collect::<Result<Vec<_>>>()?;
    let b = 0.5 - eps;
    let norms: Vec<[f64; 3]> = specs.iter().map(|sp| [xsb_norm(sp, s, b), xsb_norm(sp, 10.0 * eps, b), xsb_norm(sp, 0.0, b)]).collect();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let rhs = perms.iter().map(|p| norms[p[0]][0] * norms[p[1]][1] * norms[p[2]][2]).fold(0.0, f64::max);
    Ok(if rhs > 0.0 { lhs / rhs } else { 0.0 })
}

// ---------------------------------------------------------------- random operators

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RandomOperator {
    /// v ↦ 𝓘_γ𝒩(v, z, z)
    M1,
    /// v ↦ 𝓘_γ𝒩(z, v, z)
    M2,
    /// (u, v) ↦ 𝓘_γ𝒩(z, u, v)
    T1,
    /// (u, v) ↦ 𝓘_γ𝒩(u, z, v)
    T2,
}

#[derive(Clone, Debug)]
pub struct OperatorNormConfig {
    pub s: f64,
    pub b_in: f64,
    pub b_out: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub probes: usize,
    pub seed: u64,
}

impl Default for OperatorNormConfig {
    fn default() -> Self {
        Self { s: 0.2, b_in: 0.5, b_out: 0.5, max_iter: 40, tol: 1e-6, probes: 4, seed: 1 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorNormEstimate {
    /// Power-iteration value (a lower bound that converges to the norm).
    pub power: f64,
    /// Largest ratio over random probes.
    pub probe_sup: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Linear map y ↦ weighted twisted transform of χ𝓘_γ𝒩(…) with the free solution
/// of data ⟨n⟩^{−s}y/c_in in slot `free` and fixed trajectories elsewhere.
struct Chain<'a> {
    lay: Layout,
    window: Window,
    lat: Arc<ModeLattice>,
    fixed: [Option<&'a [FourierField]>; 3],
    free: usize,
    gamma: f64,
    in_w: Vec<f64>,
    out_n: Vec<f64>,
    out_l: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl<'a> Chain<'a> {
    fn new(z: &'a Trajectory, fixed: [Option<&'a [FourierField]>; 3], free: usize, cfg: &OperatorNormConfig) -> Result<Self> {
        let t = *z.times.last().unwrap();
        let window = Window::new(t)?;
        let lay = layout_of(z, &window)?;
        let (fft, ifft) = planner_pair(lay.p);
        let lat = z.lattice().clone();
        let c_in = free_factor(&lay, &window, cfg.b_in, &fft);
        let in_w = lat.bsq_all().iter().map(|b| b.powf(-0.5 * cfg.s) / c_in).collect();
        let out_n = lat.bsq_all().iter().map(|b| b.powf(0.5 * cfg.s)).collect();
        let scale = (lay.dlambda() / (2.0 * PI)).sqrt();
        let out_l = (0..lay.p).map(|m| (1.0 + lay.lambda(m).powi(2)).powf(0.5 * cfg.b_out) * scale).collect();
        Ok(Self { lay, window, lat, fixed, free, gamma: z.gamma, in_w, out_n, out_l, fft, ifft })
    }

    fn time(&self, k: usize) -> f64 {
        k as f64 * self.lay.h
    }

    /// Free solution in the free slot; slot 2 enters conjugated, so its linear variable is ξ = x̄.
    fn input_field(&self, y: &[Complex64], k: usize) -> Result<FourierField> {
        let t = self.time(k);
        let c: Vec<Complex64> = y
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = v * self.in_w[i];
                let x = if self.free == 1 { x.conj() } else { x };
                x * Complex64::from_polar(1.0, -t * self.lat.bsq(i))
            })
            .collect();
        FourierField::from_coeffs(&self.lat, c)
    }

    fn slot_apply(&self, v: &FourierField, k: usize) -> Result<FourierField> {
        let get = |j: usize| self.fixed[j].map(|f| &f[k]);
        match self.free {
            0 => cal_n(v, get(1).unwrap(), get(2).unwrap()),
            1 => cal_n(get(0).unwrap(), v, get(2).unwrap()),
            _ => cal_n(get(0).unwrap(), get(1).unwrap(), v),
        }
    }

    fn slot_adjoint(&self, w: &FourierField, k: usize) -> Result<FourierField> {
        let get = |j: usize| self.fixed[j].map(|f| &f[k]);
        match self.free {
            0 => cal_n(w, get(2).unwrap(), get(1).unwrap()),
            1 => Ok(cal_n(get(0).unwrap(), w, get(2).unwrap())?.conj()),
            _ => cal_n(w, get(0).unwrap(), get(1).unwrap()),
        }
    }

    fn decay(&self) -> Vec<Complex64> {
        self.lat.bsq_all().iter().map(|&b| (Complex64::new(-self.gamma, -1.0) * (self.lay.h * b)).exp()).collect()
    }

    fn forward(&self, y: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
        let h = self.lay.h;
        let d = self.decay();
        let mut acc = vec![Complex64::default(); self.lat.len()];
        let mut duh = vec![FourierField::zeros(&self.lat)];
        let mut prev = self.slot_apply(&self.input_field(y, 0)?, 0)?;
        for k in 0..self.lay.k {
            let next = self.slot_apply(&self.input_field(y, k + 1)?, k + 1)?;
            for i in 0..acc.len() {
                acc[i] = d[i] * (acc[i] + 0.5 * h * prev.coeffs()[i]) + 0.5 * h * next.coeffs()[i];
            }
            duh.push(FourierField::from_coeffs(&self.lat, acc.clone())?);
            prev = next;
        }
        let mut spec = transform_fields(&self.lay, &self.window, &duh, &self.fft);
        for (i, row) in spec.iter_mut().enumerate() {
            for (c, w) in row.iter_mut().zip(&self.out_l) {
                *c *= w * self.out_n[i];
            }
        }
        Ok(spec)
    }

    fn adjoint(&self, yv: &[Vec<Complex64>]) -> Result<Vec<Complex64>> {
        let h = self.lay.h;
        let weighted: Vec<Vec<Complex64>> =
            yv.iter().enumerate().map(|(i, row)| row.iter().zip(&self.out_l).map(|(c, w)| c * w * self.out_n[i]).collect()).collect();
        let dstar = transform_adjoint(&self.lay, &self.window, &self.lat, &weighted, &self.ifft)?;
        // adjoint of the exponential trapezoid recursion
        let dc: Vec<Complex64> = self.decay().iter().map(|x| x.conj()).collect();
        let kk = self.lay.k;
        let n = self.lat.len();
        let mut r = vec![Complex64::default(); n];
        let mut fstar = vec![FourierField::zeros(&self.lat); kk + 1];
        for i in (0..=kk).rev() {
            let ds = dstar[i].coeffs();
            let mut c = vec![Complex64::default(); n];
            for m in 0..n {
                r[m] = ds[m] + if i < kk { dc[m] * r[m] } else { Complex64::default() };
                c[m] = 0.5 * h * (r[m] - ds[m]) + if i >= 1 { 0.5 * h * r[m] } else { Complex64::default() };
            }
            fstar[i] = FourierField::from_coeffs(&self.lat, c)?;
        }
        let mut out = vec![Complex64::default(); n];
        for (k, f) in fstar.iter().enumerate() {
            let v = self.slot_adjoint(f, k)?;
            let t = self.time(k);
            for i in 0..n {
                let ph = if self.free == 1 { -t } else { t };
                out[i] += v.coeffs()[i] * Complex64::from_polar(1.0, ph * self.lat.bsq(i));
            }
        }
        Ok(out.iter().zip(&self.in_w).map(|(c, w)| c * w).collect())
    }
}

fn vnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn spec_norm(v: &[Vec<Complex64>]) -> f64 {
    v.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn random_unit(n: usize, seed: u64, member: u64) -> Vec<Complex64> {
    let mut rng = stream_rng(seed, tag::PROBE, member);
    let v: Vec<Complex64> = (0..n).map(|_| complex_normal(&mut rng, 1.0)).collect();
    let s = vnorm(&v);
    v.into_iter().map(|c| c / s).collect()
}

fn power_iterate(chain: &Chain, start: Vec<Complex64>, cfg: &OperatorNormConfig) -> Result<(f64, Vec<Complex64>, usize, bool)> {
    let mut y = start;
    let mut sigma = 0.0;
    for it in 1..=cfg.max_iter {
        let fy = chain.forward(&y)?;
        let new_sigma = spec_norm(&fy);
        let back = chain.adjoint(&fy)?;
        let nb = vnorm(&back);
        if nb == 0.0 {
            return Ok((0.0, y, it, true));
        }
        y = back.into_iter().map(|c| c / nb).collect();
        if (new_sigma - sigma).abs() <= cfg.tol * new_sigma {
            return Ok((new_sigma, y, it, true));
        }
        sigma = new_sigma;
    }
    Ok((sigma, y, cfg.max_iter, false))
}

fn free_snapshots(lat: &Arc<ModeLattice>, y: &[Complex64], in_w: &[f64], h: f64, k: usize) -> Result<Vec<FourierField>> {
    (0..=k)
        .map(|j| {
            let t = j as f64 * h;
            let c = y.iter().enumerate().map(|(i, v)| v * in_w[i] * Complex64::from_polar(1.0, -t * lat.bsq(i))).collect();
            FourierField::from_coeffs(lat, c)
        })
        .collect()
}

/// X^{s,b_in} → X^{s,b_out} norm of the operator built from z = ⟨1⟩ (inputs are free
/// solutions, outputs windowed), by power iteration and random probes. Bilinear
/// operators alternate between their two slots.
pub fn operator_norm_estimate(op: RandomOperator, z: &Trajectory, cfg: &OperatorNormConfig) -> Result<OperatorNormEstimate> {
    let zs: &[FourierField] = &z.snapshots;
    let n = z.lattice().len();
    match op {
        RandomOperator::M1 | RandomOperator::M2 => {
            let (fixed, free) = if op == RandomOperator::M1 { ([None, Some(zs), Some(zs)], 0) } else { ([Some(zs), None, Some(zs)], 1) };
            let chain = Chain::new(z, fixed, free, cfg)?;
            let (power, _, iterations, converged) = power_iterate(&chain, random_unit(n, cfg.seed, 0), cfg)?;
            let mut probe_sup: f64 = 0.0;
            for p in 0..cfg.probes {
                probe_sup = probe_sup.max(spec_norm(&chain.forward(&random_unit(n, cfg.seed, 1 + p as u64))?));
            }
            Ok(OperatorNormEstimate { power, probe_sup, iterations, converged })
        }
        RandomOperator::T1 | RandomOperator::T2 => {
            // slots of (u, v) and of the fixed z
            let (su, sv, sz) = if op == RandomOperator::T1 { (1, 2, 0) } else { (0, 2, 1) };
            let probe_chain = Chain::new(z, [Some(zs), Some(zs), Some(zs)], 0, cfg)?;
            let in_w = probe_chain.in_w.clone();
            let (h, k) = (probe_chain.lay.h, probe_chain.lay.k);
            let lat = z.lattice().clone();
            let mut yu = random_unit(n, cfg.seed, 0);
            let mut yv = random_unit(n, cfg.seed, 1);
            let mut value = 0.0;
            let mut iterations = 0;
            let mut converged = false;
            let mut probe_sup: f64 = 0.0;
            let uf = |y: &[Complex64]| free_snapshots(&lat, y, &in_w, h, k);
            for round in 0..8 {
                let ufields = uf(&yu)?;
                let mut fixed: [Option<&[FourierField]>; 3] = [None, None, None];
                fixed[sz] = Some(zs);
                fixed[su] = Some(&ufields);
                let chain_v = Chain::new(z, fixed, sv, cfg)?;
                let (sv_val, new_v, itv, _) = power_iterate(&chain_v, yv.clone(), cfg)?;
                yv = new_v;
                if round == 0 {
                    for p in 0..cfg.probes {
                        let pv = random_unit(n, cfg.seed, 10 + p as u64);
                        probe_sup = probe_sup.max(spec_norm(&chain_v.forward(&pv)?));
                    }
                }
                let vfields = uf(&yv)?;
                let mut fixed: [Option<&[FourierField]>; 3] = [None, None, None];
                fixed[sz] = Some(zs);
                fixed[sv] = Some(&vfields);
                let chain_u = Chain::new(z, fixed, su, cfg)?;
                // slot 2 is antilinear in u: its chain works with ū
                let start = if su == 1 { yu.iter().map(|c| c.conj()).collect() } else { yu.clone() };
                let (su_val, new_u, itu, _) = power_iterate(&chain_u, start, cfg)?;
                yu = if su == 1 { new_u.iter().map(|c| c.conj()).collect() } else { new_u };
                iterations += itv + itu;
                let best = sv_val.max(su_val);
                if (best - value).abs() <= cfg.tol * best {
                    value = best;
                    converged = true;
                    break;
                }
                value = best;
            }
            Ok(OperatorNormEstimate { power: value, probe_sup, iterations, converged })
        }
    }
}

// ---------------------------------------------------------------- output

#[derive(Clone, Debug, Serialize)]
pub struct Measurement {
    pub quantity: String,
    pub params: String,
    pub value: f64,
    pub stderr: f64,
}

pub fn measurements_csv(rows: &[Measurement]) -> String {
    let mut out = String::from("quantity,parameters,value,stderr\n");
    for r in rows {
        let _ = writeln!(out, "{},\"{}\",{:.10e},{:.4e}", r.quantity, r.params, r.value, r.stderr);
    }
    out
}
