//! Fourier analysis in angle variables, resonance zones, Melnikov functions,
//! resonant forcing and the nondegeneracy check on its potential.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{closed_orbit, find_saddle, trace_separatrix, OrbitChart, SaddlePoint, SeparatrixTrace, ORBIT_RTOL};
use crate::geometry::fmt_f64;
use crate::numerics::{gcd, line_fit};
use crate::systems::{Domain, SystemSpec, MAX_Z_DIM};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Free constants of the zone construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneConstants {
    /// Inner zone half-width in units of `delta_s`.
    pub c_z: f64,
    /// Outer zone half-width in units of `delta_s`.
    pub c_z_outer: f64,
    pub d_p0: f64,
    /// Numerator splitting low and high resonances.
    pub s2_split: u32,
    /// Exponent in the lower edge `2 eps |ln eps|^gamma` of the admissible region.
    pub gamma: f64,
    pub m1: usize,
    pub m2: usize,
}

impl Default for ZoneConstants {
    fn default() -> Self {
        Self { c_z: 8.0, c_z_outer: 32.0, d_p0: 4.0, s2_split: 10, gamma: 5.0, m1: 128, m2: 32 }
    }
}

/// Lower edge of the admissible region in `h`.
pub fn pi_floor(eps: f64, gamma: f64) -> f64 {
    2.0 * eps * eps.ln().abs().powf(gamma)
}

/// Fourier coefficients of `(f_I, f_phi, f_z)` over `(phi, lambda)` at a B3 orbit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FourierTable {
    pub h: f64,
    pub z: Vec<f64>,
    pub period: f64,
    pub m1_max: usize,
    pub m2_max: usize,
    pub n_phi: usize,
    pub n_lambda: usize,
    pub components: Vec<String>,
    /// `coeffs[c][(m1 + M1) * (2 M2 + 1) + (m2 + M2)]`
    pub coeffs: Vec<Vec<Complex64>>,
    /// Decay constant in `|m2|`.
    pub c_f: f64,
    /// Decay rate in `|m1|`, and the same rate times `T`.
    pub rate_m1: f64,
    pub c_f1: f64,
    /// Prefactor of the fitted envelope.
    pub prefactor: f64,
    /// Mean square of the components over the sampling grid.
    pub grid_mean_square: f64,
    /// Sum of squared moduli over the table.
    pub table_square: f64,
    /// Largest coefficient norm on the table edge relative to the largest overall.
    pub edge_ratio: f64,
}

impl FourierTable {
    fn idx(&self, m1: i64, m2: i64) -> usize {
        ((m1 + self.m1_max as i64) as usize) * (2 * self.m2_max + 1) + (m2 + self.m2_max as i64) as usize
    }
    pub fn coeff(&self, comp: usize, m1: i64, m2: i64) -> Complex64 {
        self.coeffs[comp][self.idx(m1, m2)]
    }
    /// Euclidean norm over components.
    pub fn norm(&self, m1: i64, m2: i64) -> f64 {
        let k = self.idx(m1, m2);
        self.coeffs.iter().map(|c| c[k].norm_sqr()).sum::<f64>().sqrt()
    }
    /// Largest `|f_m|` over `m1` for each `|m2|`.
    pub fn row_max(&self) -> Vec<f64> {
        let (a, b) = (self.m1_max as i64, self.m2_max as i64);
        (0..=b).map(|m2| (-a..=a).flat_map(|m1| [self.norm(m1, m2), self.norm(m1, -m2)]).fold(0.0, f64::max)).collect()
    }
    /// Largest `|f_m|` over `m2` for each `|m1|`.
    pub fn col_max(&self) -> Vec<f64> {
        let (a, b) = (self.m1_max as i64, self.m2_max as i64);
        (0..=a).map(|m1| (-b..=b).flat_map(|m2| [self.norm(m1, m2), self.norm(-m1, m2)]).fold(0.0, f64::max)).collect()
    }
    /// Fraction of coefficients above the noise floor exceeding the envelope by more than `slack`.
    pub fn envelope_violations(&self, slack: f64) -> f64 {
        let (a, b) = (self.m1_max as i64, self.m2_max as i64);
        let top = self.norm_max();
        let mut total = 0usize;
        let mut bad = 0usize;
        for m1 in -a..=a {
            for m2 in -b..=b {
                let v = self.norm(m1, m2);
                if v <= 1e-12 * top {
                    continue;
                }
                total += 1;
                let env = self.prefactor * (-self.c_f * m2.abs() as f64 - self.rate_m1 * m1.abs() as f64).exp();
                if v > env * (1.0 + slack) {
                    bad += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            bad as f64 / total as f64
        }
    }
    pub fn norm_max(&self) -> f64 {
        let (a, b) = (self.m1_max as i64, self.m2_max as i64);
        let mut m = 0.0f64;
        for m1 in -a..=a {
            for m2 in -b..=b {
                m = m.max(self.norm(m1, m2));
            }
        }
        m
    }
}

/// Gradients of `(I, phi)` with respect to `(p, q)` and `z` along the orbit,
/// at `n` equal-time points starting from the section.
struct AngleFrame {
    x: Vec<(f64, f64)>,
    grad_i: Vec<(f64, f64)>,
    grad_phi: Vec<(f64, f64)>,
    di_dz: Vec<Vec<f64>>,
    dphi_dz: Vec<Vec<f64>>,
    period: f64,
}

fn orbit_at_action(sys: &SystemSpec, domain: Domain, action: f64, h_guess: f64, z: &[f64]) -> Result<crate::geometry::ClosedOrbit> {
    let ham = sys.hamiltonian.as_ref();
    let s = find_saddle(ham, z, None)?;
    let mut h = h_guess;
    let mut o = closed_orbit(ham, &s, domain, h, z, ORBIT_RTOL)?;
    for _ in 0..20 {
        let d = o.action - action;
        if d.abs() <= 1e-14 * action.abs().max(1e-3) {
            break;
        }
        h -= d * TWO_PI / o.period;
        o = closed_orbit(ham, &s, domain, h, z, ORBIT_RTOL)?;
    }
    Ok(o)
}

fn angle_frame(sys: &SystemSpec, domain: Domain, h: f64, z: &[f64], n: usize) -> Result<AngleFrame> {
    let ham = sys.hamiltonian.as_ref();
    let saddle = find_saddle(ham, z, None)?;
    let o = closed_orbit(ham, &saddle, domain, h, z, ORBIT_RTOL)?;
    let omega = TWO_PI / o.period;
    let x = o.sample(ham, n)?;
    let dh = 1e-5 * h.abs();
    let op = closed_orbit(ham, &saddle, domain, h + dh, z, ORBIT_RTOL)?;
    let om = closed_orbit(ham, &saddle, domain, h - dh, z, ORBIT_RTOL)?;
    let xp = op.sample(ham, n)?;
    let xm = om.sample(ham, n)?;
    let di = op.action - om.action;
    let nz = z.len();
    let mut grad_i = Vec::with_capacity(n);
    let mut grad_phi = Vec::with_capacity(n);
    for k in 0..n {
        let (p, q) = x[k];
        let (hp, hq) = ham.grad(p, q, z);
        let (p_i, q_i) = ((xp[k].0 - xm[k].0) / di, (xp[k].1 - xm[k].1) / di);
        let (p_f, q_f) = (-hq / omega, hp / omega);
        let det = p_i * q_f - p_f * q_i;
        grad_i.push((q_f / det, -p_f / det));
        grad_phi.push((-q_i / det, p_i / det));
    }
    let mut di_dz = vec![vec![0.0; nz]; n];
    let mut dphi_dz = vec![vec![0.0; nz]; n];
    if sys.perturbation.drives_slow() {
        for j in 0..nz {
            let dz = 1e-5 * z[j].abs().max(1.0);
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[j] += dz;
            zm[j] -= dz;
            let a = orbit_at_action(sys, domain, o.action, h, &zp)?.sample(ham, n)?;
            let b = orbit_at_action(sys, domain, o.action, h, &zm)?.sample(ham, n)?;
            for k in 0..n {
                let dxp = (a[k].0 - b[k].0) / (2.0 * dz);
                let dxq = (a[k].1 - b[k].1) / (2.0 * dz);
                di_dz[k][j] = -(grad_i[k].0 * dxp + grad_i[k].1 * dxq);
                dphi_dz[k][j] = -(grad_phi[k].0 * dxp + grad_phi[k].1 * dxq);
            }
        }
    }
    Ok(AngleFrame { x, grad_i, grad_phi, di_dz, dphi_dz, period: o.period })
}

/// Fourier table of the perturbation at the B3 orbit `(h, z)`.
pub fn fourier_table(sys: &SystemSpec, h: f64, z: &[f64], m1: usize, m2: usize, eps: f64) -> Result<FourierTable> {
    let n_phi = (4 * m1).max(8).next_power_of_two();
    let n_lam = (4 * m2).max(8).next_power_of_two();
    let nz = z.len();
    let fr = angle_frame(sys, Domain::B3, h, z, n_phi)?;
    let ncomp = 2 + nz;
    let mut names = vec!["f_I".to_string(), "f_phi".to_string()];
    names.extend((0..nz).map(|k| format!("f_z{k}")));
    // grid[c][j * n_lam + k]
    let mut grid = vec![vec![Complex64::new(0.0, 0.0); n_phi * n_lam]; ncomp];
    let mut fz = [0.0; MAX_Z_DIM];
    for j in 0..n_phi {
        let (p, q) = fr.x[j];
        for k in 0..n_lam {
            let lam = TWO_PI * k as f64 / n_lam as f64;
            let (fp, fq) = sys.perturbation.eval(p, q, z, lam, eps, &mut fz[..nz]);
            let mut f_i = fr.grad_i[j].0 * fp + fr.grad_i[j].1 * fq;
            let mut f_phi = fr.grad_phi[j].0 * fp + fr.grad_phi[j].1 * fq;
            for c in 0..nz {
                f_i += fr.di_dz[j][c] * fz[c];
                f_phi += fr.dphi_dz[j][c] * fz[c];
            }
            grid[0][j * n_lam + k] = Complex64::new(f_i, 0.0);
            grid[1][j * n_lam + k] = Complex64::new(f_phi, 0.0);
            for c in 0..nz {
                grid[2 + c][j * n_lam + k] = Complex64::new(fz[c], 0.0);
            }
        }
    }
    let total = (n_phi * n_lam) as f64;
    let grid_mean_square = grid.iter().map(|g| g.iter().map(|v| v.norm_sqr()).sum::<f64>()).sum::<f64>() / total;
    let mut planner = FftPlanner::<f64>::new();
    let f_lam = planner.plan_fft_forward(n_lam);
    let f_phi = planner.plan_fft_forward(n_phi);
    let mut col = vec![Complex64::new(0.0, 0.0); n_phi];
    for g in grid.iter_mut() {
        for row in g.chunks_mut(n_lam) {
            f_lam.process(row);
        }
        for k in 0..n_lam {
            for j in 0..n_phi {
                col[j] = g[j * n_lam + k];
            }
            f_phi.process(&mut col);
            for j in 0..n_phi {
                g[j * n_lam + k] = col[j] / total;
            }
        }
    }
    let w2 = 2 * m2 + 1;
    let mut coeffs = vec![vec![Complex64::new(0.0, 0.0); (2 * m1 + 1) * w2]; ncomp];
    for c in 0..ncomp {
        for a in -(m1 as i64)..=(m1 as i64) {
            for b in -(m2 as i64)..=(m2 as i64) {
                let j = a.rem_euclid(n_phi as i64) as usize;
                let k = b.rem_euclid(n_lam as i64) as usize;
                coeffs[c][((a + m1 as i64) as usize) * w2 + (b + m2 as i64) as usize] = grid[c][j * n_lam + k];
            }
        }
    }
    let table_square = coeffs.iter().map(|c| c.iter().map(|v| v.norm_sqr()).sum::<f64>()).sum::<f64>();
    let mut t = FourierTable {
        h,
        z: z.to_vec(),
        period: fr.period,
        m1_max: m1,
        m2_max: m2,
        n_phi,
        n_lambda: n_lam,
        components: names,
        coeffs,
        c_f: 0.0,
        rate_m1: 0.0,
        c_f1: 0.0,
        prefactor: 0.0,
        grid_mean_square,
        table_square,
        edge_ratio: 0.0,
    };
    let top = t.norm_max();
    let rows = t.row_max();
    let cols = t.col_max();
    let edge = rows[m2].max(cols[m1]);
    t.edge_ratio = if top > 0.0 { edge / top } else { 0.0 };
    if t.edge_ratio > 1e-3 {
        return Err(Error::Aliasing(format!("edge coefficient {:.3e} of the maximum at h = {h:e}", t.edge_ratio)));
    }
    let noise = 1e-12 * top;
    t.c_f = decay_rate(&rows, noise, top, false);
    t.rate_m1 = decay_rate(&cols, noise, top, true);
    t.c_f1 = t.rate_m1 * t.period;
    // envelope through the largest coefficient
    let (a, b) = (m1 as i64, m2 as i64);
    let mut pre = 0.0f64;
    for i in -a..=a {
        for j in -b..=b {
            let v = t.norm(i, j);
            if v > noise {
                pre = pre.max(v * (t.c_f * j.abs() as f64 + t.rate_m1 * i.abs() as f64).exp());
            }
        }
    }
    t.prefactor = pre;
    Ok(t)
}

// Log-linear decay rate of an envelope sequence. If `skip_head` the fit
// starts where the sequence has dropped below 1e-2 of the maximum.
fn decay_rate(seq: &[f64], noise: f64, top: f64, skip_head: bool) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (m, &v) in seq.iter().enumerate() {
        if v <= noise * 10.0 {
            break;
        }
        if skip_head && (m == 0 || v > 1e-2 * top) {
            continue;
        }
        xs.push(m as f64);
        ys.push(v.ln());
    }
    if xs.len() < 2 {
        // decays below the noise floor within one step
        return (top / noise).ln();
    }
    -line_fit(&xs, &ys).map(|f| f.slope).unwrap_or(0.0)
}

/// A resonance `omega = s2 / s1` with its energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub s1: u32,
    pub s2: u32,
    pub xi: f64,
    pub h_hat: f64,
}

/// Coprime `s2 / s1` with `s1 + s2 <= n` inside the open interval `omega_range`,
/// sorted by decreasing frequency, each with the B3 energy where it is attained.
pub fn enumerate_resonances(chart: &OrbitChart, z: &[f64], omega_range: (f64, f64), n: u32) -> Result<Vec<Resonance>> {
    if n < 2 {
        return Err(Error::InvalidArgument("resonance order bound must be at least 2".into()));
    }
    let mut out = Vec::new();
    for s1 in 1..n {
        for s2 in 1..=(n - s1) {
            if gcd(s1, s2) != 1 {
                continue;
            }
            let xi = s2 as f64 / s1 as f64;
            if xi <= omega_range.0 || xi >= omega_range.1 {
                continue;
            }
            match chart.h_for_omega(Domain::B3, xi, z) {
                Ok(h_hat) => out.push(Resonance { s1, s2, xi, h_hat }),
                Err(Error::OutsideChart(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    out.sort_by(|a, b| b.xi.total_cmp(&a.xi));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResonanceClass {
    LowNumerator,
    HighNumerator,
}

impl std::fmt::Display for ResonanceClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ResonanceClass::LowNumerator => "LOW_NUMERATOR",
            ResonanceClass::HighNumerator => "HIGH_NUMERATOR",
        })
    }
}

/// Inner, middle and outer zones of one resonance at fixed `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceZone {
    pub s1: u32,
    pub s2: u32,
    pub xi: f64,
    pub domain: Domain,
    pub z: Vec<f64>,
    pub eps: f64,
    pub h_hat: f64,
    pub i_hat: f64,
    /// `d omega / d I` at the resonance.
    pub omega_i: f64,
    pub b_s: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub class: ResonanceClass,
    /// Energy intervals `(lo, hi)` of the three zones.
    pub inner_h: (f64, f64),
    pub middle_h: (f64, f64),
    pub outer_h: (f64, f64),
    /// Half-widths in the scaled action `D`.
    pub d_inner: f64,
    pub d_middle: f64,
    pub d_outer: f64,
    /// `D_p0 d'(s)` with `d' = 1` for low numerators.
    pub d_literal: f64,
}

impl ResonanceZone {
    /// Scaled action `D` at `h`.
    pub fn d_of(&self, chart: &OrbitChart, h: f64) -> Result<f64> {
        Ok((chart.action(self.domain, h, &self.z)? - self.i_hat) / (self.alpha * self.xi.sqrt()))
    }
    /// Frequency interval `(xi - C delta, xi + C delta)`.
    pub fn omega_interval(&self, c: f64) -> (f64, f64) {
        (self.xi - c * self.delta, self.xi + c * self.delta)
    }
}

/// `delta_s` for given `eps, b_s, h_hat`.
pub fn zone_delta(eps: f64, b_s: f64, h_hat: f64) -> f64 {
    let lh = h_hat.ln().abs();
    (eps * b_s / (h_hat * lh.powi(4))).sqrt() + eps / (h_hat * lh.powi(3)) * eps.ln().powi(2)
}

/// Zone geometry of `res` at `z` for `eps`.
pub fn zone_geometry(
    res: &Resonance,
    chart: &OrbitChart,
    z: &[f64],
    eps: f64,
    c_f: f64,
    k: &ZoneConstants,
) -> Result<ResonanceZone> {
    zone_geometry_with(res, chart, z, eps, c_f, k, true)
}

/// As [`zone_geometry`], optionally without the admissible-region check.
pub fn zone_geometry_with(
    res: &Resonance,
    chart: &OrbitChart,
    z: &[f64],
    eps: f64,
    c_f: f64,
    k: &ZoneConstants,
    enforce_pi: bool,
) -> Result<ResonanceZone> {
    let floor = pi_floor(eps, k.gamma);
    if enforce_pi && res.h_hat < floor {
        return Err(Error::OutsidePi(format!("h_hat = {:e} below {floor:e} for {}/{}", res.h_hat, res.s2, res.s1)));
    }
    let d = Domain::B3;
    let h = res.h_hat;
    let omega = chart.omega(d, h, z)?;
    let omega_i = omega * chart.domega_dh(d, h, z)?;
    if !(omega_i > 0.0) {
        return Err(Error::InvalidArgument(format!("d omega / dI = {omega_i} at the resonance")));
    }
    let b_s = (-c_f * res.s2 as f64).exp();
    let delta = zone_delta(eps, b_s, h);
    let alpha = (eps / omega_i).sqrt();
    let beta = (eps * omega_i).sqrt();
    let i_hat = chart.action(d, h, z)?;
    let class = if res.s2 <= k.s2_split { ResonanceClass::LowNumerator } else { ResonanceClass::HighNumerator };
    let h_of = |w: f64| chart.h_for_omega(d, w, z);
    let band = |c: f64| -> Result<(f64, f64)> { Ok((h_of(res.xi - c * delta)?, h_of(res.xi + c * delta)?)) };
    let inner_h = band(k.c_z)?;
    let outer_h = band(k.c_z_outer)?;
    let scale = alpha * res.xi.sqrt();
    let d_at = |hh: f64| -> Result<f64> { Ok((chart.action(d, hh, z)? - i_hat) / scale) };
    let d_inner = d_at(inner_h.0)?.abs().max(d_at(inner_h.1)?.abs());
    let d_outer = d_at(outer_h.0)?.abs().min(d_at(outer_h.1)?.abs());
    let d_middle = (d_inner * d_outer).sqrt();
    let tilde = (eps / (h * h.ln().powi(4))).sqrt();
    let d_prime = if class == ResonanceClass::LowNumerator { 1.0 } else { (delta / tilde).min(1.0) };
    let h_of_i = |target: f64| chart.h_for_action(d, target, z);
    let middle_h = (h_of_i(i_hat - d_middle * scale)?, h_of_i(i_hat + d_middle * scale)?);
    Ok(ResonanceZone {
        s1: res.s1,
        s2: res.s2,
        xi: res.xi,
        domain: d,
        z: z.to_vec(),
        eps,
        h_hat: h,
        i_hat,
        omega_i,
        b_s,
        delta,
        alpha,
        beta,
        class,
        inner_h,
        middle_h,
        outer_h,
        d_inner,
        d_middle,
        d_outer,
        d_literal: k.d_p0 * d_prime,
    })
}

/// Zones for every enumerated resonance inside the admissible region.
pub fn build_zones(
    resonances: &[Resonance],
    chart: &OrbitChart,
    z: &[f64],
    eps: f64,
    c_f: f64,
    k: &ZoneConstants,
) -> Vec<Result<ResonanceZone>> {
    resonances.par_iter().map(|r| zone_geometry(r, chart, z, eps, c_f, k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub a: (u32, u32),
    pub b: (u32, u32),
    /// Overlapping frequency interval.
    pub omega: (f64, f64),
    /// Energy at the upper end of the overlap, where it begins when descending.
    pub h_begin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisjointReport {
    pub zones: usize,
    pub overlaps: Vec<Overlap>,
}

impl DisjointReport {
    pub fn disjoint(&self) -> bool {
        self.overlaps.is_empty()
    }
}

/// Pairwise overlap test on the inner-zone frequency intervals.
pub fn check_disjoint(zones: &[ResonanceZone], c_z: f64, chart: Option<&OrbitChart>) -> DisjointReport {
    let mut iv: Vec<(f64, f64, usize)> = zones
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let (a, b) = z.omega_interval(c_z);
            (a, b, i)
        })
        .collect();
    iv.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut overlaps = Vec::new();
    for i in 0..iv.len() {
        for j in i + 1..iv.len() {
            if iv[j].0 > iv[i].1 {
                break;
            }
            let (za, zb) = (&zones[iv[i].2], &zones[iv[j].2]);
            let w = (iv[j].0, iv[i].1.min(iv[j].1));
            let h_begin = chart.and_then(|c| c.h_for_omega(Domain::B3, w.1, &za.z).ok());
            overlaps.push(Overlap { a: (za.s1, za.s2), b: (zb.s1, zb.s2), omega: w, h_begin });
        }
    }
    DisjointReport { zones: zones.len(), overlaps }
}

/// `M_i(Q)` on a uniform grid over `[0, 2 pi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelnikovFunction {
    pub domain: Domain,
    pub z: Vec<f64>,
    pub q: Vec<f64>,
    pub values: Vec<f64>,
    pub t_cut: f64,
    /// Largest change when the cutoff is doubled.
    pub tail_change: f64,
}

impl MelnikovFunction {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

fn melnikov_on(sys: &SystemSpec, saddle: &SaddlePoint, tr: &SeparatrixTrace, q: &[f64]) -> Vec<f64> {
    q.par_iter()
        .map(|&qq| tr.integrate(|t, p, x| sys.f_h(p, x, &tr.z, t - qq, 0.0, &saddle.hz)))
        .collect()
}

/// Uniform grid of `n` points on `[0, 2 pi)`.
pub fn q_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| TWO_PI * k as f64 / n as f64).collect()
}

/// `M_i(Q) = int f_h(h = 0, z, t, lambda = t - Q, eps = 0) dt` along the loop
/// bounding `domain`, time measured from the loop's turning point on its section.
pub fn melnikov(sys: &SystemSpec, saddle: &SaddlePoint, trace: &SeparatrixTrace, q: &[f64]) -> Result<MelnikovFunction> {
    let t_cut = trace.t_cut();
    if t_cut < 40.0 / saddle.lambda * (1.0 - 1e-9) {
        return Err(Error::InvalidArgument(format!("trace cutoff {t_cut} shorter than 40 / lambda")));
    }
    let values = melnikov_on(sys, saddle, trace, q);
    let long = trace_separatrix(sys, saddle, trace.domain, Some(2.0 * t_cut), 1e-12)?;
    let check = melnikov_on(sys, saddle, &long, q);
    let tail_change = values.iter().zip(&check).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if tail_change > 1e-7 {
        return Err(Error::TailNotConverged(format!("M changes by {tail_change:e} when the cutoff is doubled")));
    }
    Ok(MelnikovFunction { domain: trace.domain, z: trace.z.clone(), q: q.to_vec(), values, t_cut, tail_change })
}

/// Both Melnikov functions at `z` on an `n`-point grid.
pub fn melnikov_pair(sys: &SystemSpec, z: &[f64], n: usize) -> Result<[MelnikovFunction; 2]> {
    let saddle = find_saddle(sys.hamiltonian.as_ref(), z, None)?;
    let q = q_grid(n);
    let l1 = trace_separatrix(sys, &saddle, Domain::B1, None, 1e-12)?;
    let l2 = trace_separatrix(sys, &saddle, Domain::B2, None, 1e-12)?;
    Ok([melnikov(sys, &saddle, &l1, &q)?, melnikov(sys, &saddle, &l2, &q)?])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExtremumKind {
    Max,
    Min,
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub q: f64,
    pub v: f64,
    /// `V'' = F'` at the extremum.
    pub curvature: f64,
    pub kind: ExtremumKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BprimeReport {
    pub verdict: Verdict,
    pub extrema: Vec<Extremum>,
    /// Degenerate extrema and maxima with coinciding potential values.
    pub offending: Vec<Extremum>,
    pub tol_nd: f64,
    pub tol_sep: f64,
}

/// `F*_{s,i}` and their potentials on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingFunction {
    pub s1: u32,
    pub s2: u32,
    pub q: Vec<f64>,
    /// `F*_{s,1}, F*_{s,2}, F*_{s,3}`.
    pub f: [Vec<f64>; 3],
    /// `V_F(Q) = int_0^Q F`.
    pub v: [Vec<f64>; 3],
    pub reports: [BprimeReport; 3],
}

impl ForcingFunction {
    pub fn verdict(&self) -> Verdict {
        if self.reports.iter().all(|r| r.verdict == Verdict::Pass) {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Spectral representation of a periodic grid function.
struct Spectral {
    c: Vec<Complex64>,
    n: usize,
}

impl Spectral {
    fn new(values: &[f64]) -> Self {
        let n = values.len();
        let mut c: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut c);
        for v in c.iter_mut() {
            *v /= n as f64;
        }
        Self { c, n }
    }
    fn freq(&self, j: usize) -> f64 {
        let j = j as i64;
        let n = self.n as i64;
        (if j <= n / 2 { j } else { j - n }) as f64
    }
    // F, F' and V = int_0^Q F at Q
    fn eval(&self, q: f64) -> (f64, f64, f64) {
        let mut f = 0.0;
        let mut df = 0.0;
        let mut v = self.c[0].re * q;
        for j in 1..self.n {
            let k = self.freq(j);
            // drop the unpaired Nyquist term from derivatives and integrals
            let nyq = self.n % 2 == 0 && j == self.n / 2;
            let e = Complex64::from_polar(1.0, k * q);
            let cj = self.c[j];
            f += (cj * e).re;
            if !nyq {
                df += (cj * e * Complex64::new(0.0, k)).re;
                v += (cj * (e - 1.0) / Complex64::new(0.0, k)).re;
            }
        }
        (f + self.c[0].re, df, v)
    }
}

/// Check condition B' on `V = int F` over one period `2 pi / s2` of `f`,
/// tabulated on a uniform grid over `[0, 2 pi)`.
pub fn condition_bprime(f: &[f64], s2: u32) -> Result<BprimeReport> {
    let n = f.len();
    if s2 == 0 || n % s2 as usize != 0 || n / (s2 as usize) < 256 {
        return Err(Error::GridMismatch(format!("{n} points do not give 256 per period 2pi/{s2}")));
    }
    let sp = Spectral::new(f);
    let np = n / s2 as usize;
    let dq = TWO_PI / n as f64;
    let fmax = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let v_grid: Vec<f64> = (0..=np).map(|k| sp.eval(k as f64 * dq).2).collect();
    let vr = v_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol_nd = 1e-6 * fmax;
    let tol_sep = 1e-6 * vr;
    let mut extrema = Vec::new();
    let mut offending = Vec::new();
    if fmax == 0.0 {
        let e = Extremum { q: 0.0, v: 0.0, curvature: 0.0, kind: ExtremumKind::Degenerate };
        return Ok(BprimeReport { verdict: Verdict::Fail, extrema: vec![e], offending: vec![e], tol_nd, tol_sep });
    }
    let touch = 1e-10 * fmax;
    for k in 0..np {
        let (a, b) = (f[k], f[(k + 1) % n]);
        let qa = k as f64 * dq;
        let root = if a == 0.0 {
            Some(qa)
        } else if (a < 0.0) != (b < 0.0) && b != 0.0 {
            // Newton on the spectral interpolant, safeguarded by the bracket
            let (mut lo, mut hi) = (qa, qa + dq);
            let mut x = qa + dq * a / (a - b);
            for _ in 0..60 {
                let (fx, dfx, _) = sp.eval(x);
                if (fx < 0.0) == (a < 0.0) {
                    lo = x;
                } else {
                    hi = x;
                }
                let nx = if dfx != 0.0 { x - fx / dfx } else { f64::NAN };
                let nx = if nx.is_finite() && nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) };
                if (nx - x).abs() < 1e-15 * TWO_PI {
                    x = nx;
                    break;
                }
                x = nx;
            }
            Some(x)
        } else {
            // grid minimum of |F| touching zero without a sign change
            let prev = f[(k + n - 1) % n].abs();
            if a.abs() < touch && a.abs() <= prev && a.abs() <= b.abs() {
                Some(qa)
            } else {
                None
            }
        };
        if let Some(q) = root {
            let (_, df, v) = sp.eval(q);
            let kind = if df.abs() <= tol_nd {
                ExtremumKind::Degenerate
            } else if df < 0.0 {
                ExtremumKind::Max
            } else {
                ExtremumKind::Min
            };
            let e = Extremum { q, v, curvature: df, kind };
            if kind == ExtremumKind::Degenerate {
                offending.push(e);
            }
            extrema.push(e);
        }
    }
    let maxima: Vec<&Extremum> = extrema.iter().filter(|e| e.kind == ExtremumKind::Max).collect();
    for i in 0..maxima.len() {
        for j in i + 1..maxima.len() {
            if (maxima[i].v - maxima[j].v).abs() <= tol_sep {
                offending.push(*maxima[i]);
                offending.push(*maxima[j]);
            }
        }
    }
    let verdict = if offending.is_empty() { Verdict::Pass } else { Verdict::Fail };
    Ok(BprimeReport { verdict, extrema, offending, tol_nd, tol_sep })
}

/// `F*_{s,i}(Q) = -(2 pi)^-1 <M_i(Q - 2 pi j / s2)>_j` and
/// `F*_{s,3}(Q) = F*_{s,1}(Q) + F*_{s,2}(Q + 2 pi {s1/2} / s2)`.
pub fn resonant_forcing(m1: &MelnikovFunction, m2: &MelnikovFunction, s1: u32, s2: u32) -> Result<ForcingFunction> {
    let n = m1.values.len();
    if m2.values.len() != n || s2 == 0 || n % s2 as usize != 0 {
        return Err(Error::GridMismatch(format!("grid of {n} points not divisible by s2 = {s2}")));
    }
    let odd = s1 % 2 == 1;
    if odd && n % (2 * s2 as usize) != 0 {
        return Err(Error::GridMismatch(format!("grid of {n} points cannot shift by pi/{s2}")));
    }
    let step = n / s2 as usize;
    let avg = |m: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|k| {
                let s: f64 = (0..s2 as usize).map(|j| m[(k + n - (j * step) % n) % n]).sum();
                -s / (s2 as f64 * TWO_PI)
            })
            .collect()
    };
    let f1 = avg(&m1.values);
    let f2 = avg(&m2.values);
    let shift = if odd { n / (2 * s2 as usize) } else { 0 };
    let f3: Vec<f64> = (0..n).map(|k| f1[k] + f2[(k + shift) % n]).collect();
    let pot = |f: &[f64]| -> Vec<f64> {
        let sp = Spectral::new(f);
        m1.q.iter().map(|&q| sp.eval(q).2).collect()
    };
    let reports = [condition_bprime(&f1, s2)?, condition_bprime(&f2, s2)?, condition_bprime(&f3, s2)?];
    let v = [pot(&f1), pot(&f2), pot(&f3)];
    Ok(ForcingFunction { s1, s2, q: m1.q.clone(), f: [f1, f2, f3], v, reports })
}

/// Grid size giving at least 256 points per period and room for the half shift.
pub fn forcing_grid_size(s2: u32) -> usize {
    512 * s2 as usize
}

/// CSV `Q,F1,F2,F3`.
pub fn write_forcing_csv<W: Write>(ff: &ForcingFunction, mut w: W) -> Result<()> {
    writeln!(w, "Q,F1,F2,F3")?;
    for k in 0..ff.q.len() {
        writeln!(w, "{},{},{},{}", fmt_f64(ff.q[k]), fmt_f64(ff.f[0][k]), fmt_f64(ff.f[1][k]), fmt_f64(ff.f[2][k]))?;
    }
    Ok(())
}

/// One catalog row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogRow {
    pub zone: ResonanceZone,
    pub bprime: Option<Verdict>,
}

/// CSV `s1,s2,xi,h_hat,b_s,delta,alpha,beta,class,Bprime_verdict`.
pub fn write_catalog_csv<W: Write>(rows: &[CatalogRow], mut w: W) -> Result<()> {
    writeln!(w, "s1,s2,xi,h_hat,b_s,delta,alpha,beta,class,Bprime_verdict")?;
    for r in rows {
        let z = &r.zone;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            z.s1,
            z.s2,
            fmt_f64(z.xi),
            fmt_f64(z.h_hat),
            fmt_f64(z.b_s),
            fmt_f64(z.delta),
            fmt_f64(z.alpha),
            fmt_f64(z.beta),
            z.class,
            r.bprime.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_chart, log_grid};
    use crate::systems::{Preset, PresetParams};

    fn chart() -> OrbitChart {
        let sys = SystemSpec::duffing(Preset::Friction, PresetParams::default());
        build_chart(sys.hamiltonian.as_ref(), &[Domain::B3], &log_grid(1e-6, 2.0, 60), &[vec![1.0]]).unwrap()
    }

    #[test]
    fn enumerates_by_hand_example() {
        let c = chart();
        let r = enumerate_resonances(&c, &[1.0], (0.2, 0.6), 5).unwrap();
        let xi: Vec<f64> = r.iter().map(|r| r.xi).collect();
        assert_eq!(xi, vec![0.5, 1.0 / 3.0, 0.25]);
        for x in &r {
            assert!((c.omega(Domain::B3, x.h_hat, &[1.0]).unwrap() - x.xi).abs() < 1e-10);
        }
        let r2 = enumerate_resonances(&c, &[1.0], (0.01, 10.0), 2).unwrap();
        assert!(r2.iter().all(|r| r.s1 == 1 && r.s2 == 1));
    }

    #[test]
    fn zone_identities_and_nesting() {
        let c = chart();
        let k = ZoneConstants::default();
        let r = enumerate_resonances(&c, &[1.0], (0.2, 0.6), 5).unwrap();
        for res in &r {
            let z = zone_geometry(res, &c, &[1.0], 1e-12, 1.0, &k).unwrap();
            assert!(((z.alpha * z.beta - 1e-12) / 1e-12).abs() < 1e-12);
            assert!(z.b_s > 0.0 && z.b_s < 1.0);
            assert!(z.outer_h.0 <= z.middle_h.0 && z.middle_h.0 <= z.inner_h.0);
            assert!(z.inner_h.1 <= z.middle_h.1 && z.middle_h.1 <= z.outer_h.1);
            assert!(z.inner_h.0 < z.h_hat && z.h_hat < z.inner_h.1);
        }
        // sqrt scaling of the first term
        let (d1, d4) = (zone_delta(1e-12, 1.0, 1e-2), zone_delta(4e-12, 1.0, 1e-2));
        assert!((d4 / d1 - 2.0).abs() < 0.1);
        assert!(zone_delta(2e-9, 0.5, 1e-2) > zone_delta(1e-9, 0.5, 1e-2));
    }

    #[test]
    fn outside_pi_is_rejected() {
        let c = chart();
        let res = Resonance { s1: 4, s2: 1, xi: 0.25, h_hat: 1e-3 };
        let e = zone_geometry(&res, &c, &[1.0], 1e-3, 1.0, &ZoneConstants::default()).unwrap_err();
        assert!(matches!(e, Error::OutsidePi(_)));
    }

    #[test]
    fn bprime_examples() {
        let n = 1024;
        let q = q_grid(n);
        let c: Vec<f64> = q.iter().map(|_| 0.3).collect();
        let r = condition_bprime(&c, 1).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.extrema.is_empty());
        let s: Vec<f64> = q.iter().map(|q| q.sin()).collect();
        let r = condition_bprime(&s, 1).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.extrema.len(), 2);
        assert!(r.extrema.iter().any(|e| e.kind == ExtremumKind::Max && (e.q - std::f64::consts::PI).abs() < 1e-12));
        let d: Vec<f64> = q.iter().map(|q| q.sin().powi(2) - 1e-14).collect();
        let r = condition_bprime(&d, 1).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(!r.offending.is_empty());
        assert!(condition_bprime(&s[..200], 1).is_err());
    }

    #[test]
    fn melnikov_friction_is_flat() {
        let sys = SystemSpec::duffing(Preset::Friction, PresetParams::default());
        let [m1, m2] = melnikov_pair(&sys, &[1.0], 64).unwrap();
        for m in [&m1, &m2] {
            let spread = m.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - m.values.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(spread < 1e-14);
            assert!((m.mean() + 0.1 * 4.0 / 3.0).abs() < 1e-8);
        }
        let ff = resonant_forcing(&m1, &m2, 1, 1).unwrap_err();
        assert!(matches!(ff, Error::GridMismatch(_)));
    }

    #[test]
    fn forced_forcing_structure() {
        let sys = SystemSpec::duffing(Preset::ForcedFriction, PresetParams::default());
        let s2 = 3;
        let [m1, m2] = melnikov_pair(&sys, &[1.0], forcing_grid_size(s2)).unwrap();
        let ff = resonant_forcing(&m1, &m2, 2, s2).unwrap();
        let n = ff.q.len();
        let step = n / s2 as usize;
        for i in 0..3 {
            for k in 0..n {
                assert!((ff.f[i][k] - ff.f[i][(k + step) % n]).abs() < 1e-10);
            }
        }
        // s2 = 1 reduces to -M / 2pi
        let [a, b] = melnikov_pair(&sys, &[1.0], 512).unwrap();
        let f1 = resonant_forcing(&a, &b, 2, 1).unwrap();
        for k in 0..512 {
            assert!((f1.f[0][k] + a.values[k] / TWO_PI).abs() < 1e-14);
        }
    }

    #[test]
    fn fourier_rows_follow_the_forcing() {
        let forced = SystemSpec::duffing(Preset::ForcedFriction, PresetParams::default());
        let t = fourier_table(&forced, 0.1, &[1.0], 32, 8, 1e-3).unwrap();
        let rows = t.row_max();
        assert!(rows[0] > 1e-3 && rows[1] > 1e-3);
        assert!(rows[2..].iter().all(|&r| r < 1e-12));
        assert!(((t.table_square - t.grid_mean_square) / t.grid_mean_square).abs() < 1e-6);
        let c = t.coeff(0, 3, 1);
        let d = t.coeff(0, -3, -1);
        assert!((c - d.conj()).norm() < 1e-14);
        let fr = SystemSpec::duffing(Preset::Friction, PresetParams::default());
        let t = fourier_table(&fr, 0.1, &[1.0], 32, 8, 1e-3).unwrap();
        assert!(t.row_max()[1..].iter().all(|&r| r < 1e-12));
    }
}
