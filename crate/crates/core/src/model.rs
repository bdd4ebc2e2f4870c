//! Rescaled resonance model: a pendulum with torque `V(q) = V_c q + V_per(q)`
//! driven by a small Hamiltonian correction and a small drift.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::ensemble::trajectory_rng;
use crate::error::{Error, Result};
use crate::geometry::fmt_f64;
use crate::numerics::{line_fit, LineFit};
use crate::ode::{Dop853, Options};
use crate::resonance::{condition_bprime, q_grid, ExtremumKind, ForcingFunction, Verdict};
use crate::stats::wilson;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const PI: f64 = std::f64::consts::PI;

/// Constant in the sub-threshold flag `dh0 <= 2 C eps2`.
pub const THRESHOLD_C: f64 = 10.0;

/// Model domain `|p| <= c_p`, `|q| <= c_q`, `|w| <= c_z`, and the window
/// `[d_p1, d_p2]` for initial momenta.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBox {
    pub c_p: f64,
    /// Derived from the potential when absent.
    pub c_q: Option<f64>,
    pub c_z: f64,
    pub d_p1: f64,
    pub d_p2: f64,
}

impl Default for ModelBox {
    fn default() -> Self {
        Self { c_p: 10.0, c_q: None, c_z: 0.5, d_p1: 2.0, d_p2: 6.0 }
    }
}

/// Drift fields, all multiplied by `eps2`:
/// `v_p = torque - damping p / c_p`, `v_q = v_q`, `v_w = v_w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Drift {
    pub torque: f64,
    pub damping: f64,
    pub v_q: f64,
    pub v_w: f64,
}

impl Default for Drift {
    fn default() -> Self {
        Self { torque: 1.0, damping: 0.0, v_q: 0.0, v_w: 0.0 }
    }
}

impl Drift {
    pub fn friction() -> Self {
        Self { torque: 0.0, damping: 1.0, v_q: 0.0, v_w: 0.0 }
    }
}

/// `H = p^2/2 + V(q) + eps1 (1 + w) cos q` with drift of size `eps2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSystem {
    pub v_c: f64,
    /// `V'(q) = v_c + sum_k a_k cos kq + b_k sin kq`, `k = 1..`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub drift: Drift,
    pub bounds: ModelBox,
    /// Resolved `c_q`.
    pub c_q: f64,
    /// Local maxima of `V` in `[0, 2 pi)`.
    pub maxima: Vec<f64>,
    pub bprime: Verdict,
}

/// Build the model from one period of a force `F(Q)` sampled on a uniform grid.
/// The period is rescaled to `2 pi`, so `q = (2 pi / period) Q`.
pub fn build_model(f: &[f64], period: f64, eps1: f64, eps2: f64, drift: Drift, bounds: ModelBox) -> Result<ModelSystem> {
    let n = f.len();
    if n < 8 {
        return Err(Error::GridMismatch(format!("{n} samples are too few for a force")));
    }
    if !(period > 0.0) {
        return Err(Error::InvalidArgument(format!("period = {period}")));
    }
    let k = TWO_PI / period;
    let mut c: Vec<Complex64> = f.iter().map(|&v| Complex64::new(k * v, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut c);
    let v_c = c[0].re / n as f64;
    if !(v_c > 0.0) {
        return Err(Error::NonpositiveMean(v_c));
    }
    let kmax = (n - 1) / 2;
    let mut a: Vec<f64> = (1..=kmax).map(|j| 2.0 * c[j].re / n as f64).collect();
    let mut b: Vec<f64> = (1..=kmax).map(|j| -2.0 * c[j].im / n as f64).collect();
    let top = a.iter().chain(&b).map(|v| v.abs()).fold(v_c, f64::max);
    while a.len() > 0 && a.last().unwrap().abs().max(b.last().unwrap().abs()) < 1e-14 * top {
        a.pop();
        b.pop();
    }
    let mut m = ModelSystem {
        v_c,
        a,
        b,
        eps1,
        eps2,
        drift,
        bounds,
        c_q: 0.0,
        maxima: Vec::new(),
        bprime: Verdict::Pass,
    };
    let g = q_grid(512);
    let fg: Vec<f64> = g.iter().map(|&q| m.force(q)).collect();
    let rep = condition_bprime(&fg, 1)?;
    m.bprime = rep.verdict;
    m.maxima = rep.extrema.iter().filter(|e| e.kind == ExtremumKind::Max).map(|e| e.q.rem_euclid(TWO_PI)).collect();
    m.c_q = match bounds.c_q {
        Some(c) => c,
        None => m.derived_c_q(),
    };
    Ok(m)
}

/// Build from component `which` (0, 1, 2) of a resonant forcing, over one period `2 pi / s2`.
pub fn model_from_forcing(
    ff: &ForcingFunction,
    which: usize,
    eps1: f64,
    eps2: f64,
    drift: Drift,
    bounds: ModelBox,
) -> Result<ModelSystem> {
    let n = ff.q.len() / ff.s2 as usize;
    build_model(&ff.f[which][..n], TWO_PI / ff.s2 as f64, eps1, eps2, drift, bounds)
}

/// Outcome of one passage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Passage {
    PassThrough,
    Captured,
    LeftBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassageOutcome {
    pub outcome: Passage,
    /// `tau_1 - tau_0`.
    pub exit_time: f64,
    pub final_state: [f64; 3],
    pub delta_h0: f64,
    pub energy_drift: f64,
    pub w_drift: f64,
    /// Consecutive right turning points inside one well.
    pub librations: usize,
    pub tau_max: f64,
    /// `delta_h0 <= 2 THRESHOLD_C eps2`
    pub sub_threshold: bool,
}

impl ModelSystem {
    pub fn with_eps2(&self, eps2: f64) -> Self {
        Self { eps2, ..self.clone() }
    }

    /// Mean force `<F>` is `v_c`; this is `V'(q)`.
    #[inline]
    pub fn force(&self, q: f64) -> f64 {
        let mut s = self.v_c;
        for (j, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let (sn, cs) = ((j + 1) as f64 * q).sin_cos();
            s += a * cs + b * sn;
        }
        s
    }

    pub fn v_per(&self, q: f64) -> f64 {
        let mut s = 0.0;
        for (j, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let k = (j + 1) as f64;
            let (sn, cs) = (k * q).sin_cos();
            s += (a * sn - b * cs) / k;
        }
        s
    }

    pub fn potential(&self, q: f64) -> f64 {
        self.v_c * q + self.v_per(q)
    }

    pub fn h0(&self, p: f64, q: f64) -> f64 {
        0.5 * p * p + self.potential(q)
    }

    pub fn hamiltonian(&self, p: f64, q: f64, w: f64) -> f64 {
        self.h0(p, q) + self.eps1 * (1.0 + w) * q.cos()
    }

    fn dh_dq(&self, q: f64, w: f64) -> f64 {
        self.force(q) - self.eps1 * (1.0 + w) * q.sin()
    }

    /// Saddles of the intermediate system in `[0, 2 pi)` at `w`, as `(q, H)`.
    pub fn saddles(&self, w: f64) -> Vec<(f64, f64)> {
        self.maxima
            .iter()
            .map(|&q0| {
                let mut q = q0;
                for _ in 0..30 {
                    let d = 1e-6;
                    let g = self.dh_dq(q, w);
                    let dg = (self.dh_dq(q + d, w) - self.dh_dq(q - d, w)) / (2.0 * d);
                    let step = g / dg;
                    q -= step;
                    if step.abs() < 1e-15 {
                        break;
                    }
                }
                (q, self.hamiltonian(0.0, q, w))
            })
            .collect()
    }

    /// Distance in energy to the nearest saddle; 1 without saddles.
    pub fn delta_h0(&self, p: f64, q: f64, w: f64) -> f64 {
        let h = self.hamiltonian(p, q, w);
        let shift = TWO_PI * self.v_c;
        self.saddles(w)
            .iter()
            .map(|&(_, hs)| {
                let k = ((h - hs) / shift).round();
                (h - hs - k * shift).abs().min((h - hs - (k + 1.0) * shift).abs()).min((h - hs - (k - 1.0) * shift).abs())
            })
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
            .unwrap_or(1.0)
    }

    // |q| bound from energy contours: right turning points of the fastest
    // initial data and the left exit at p = -c_p, with a period of margin.
    fn derived_c_q(&self) -> f64 {
        let amp: f64 = self.a.iter().zip(&self.b).enumerate().map(|(j, (a, b))| a.hypot(*b) / (j + 1) as f64).sum::<f64>()
            + self.eps1.abs() * (1.0 + self.bounds.c_z);
        let vmax = self.v_c * PI + amp;
        let vmin = -self.v_c * PI - amp;
        let h_hi = 0.5 * self.bounds.d_p2 * self.bounds.d_p2 + vmax;
        let h_lo = 0.5 * self.bounds.d_p1 * self.bounds.d_p1 + vmin;
        let q_right = (h_hi + amp) / self.v_c;
        let q_left = (h_lo - 0.5 * self.bounds.c_p * self.bounds.c_p - amp) / self.v_c;
        q_right.abs().max(q_left.abs()) + TWO_PI
    }

    pub fn tau_max(delta_h0: f64) -> f64 {
        50.0 * (1.0 + delta_h0.ln().abs())
    }

    /// Integrate from `x0 = (p, q, w, tau)` until `p = -c_p`, capture or box exit.
    pub fn classify_passage(&self, x0: [f64; 4], tau_max: Option<f64>) -> Result<PassageOutcome> {
        let [p0, q0, w0, tau0] = x0;
        if !(-PI..=PI).contains(&q0) || w0.abs() >= 0.5 * self.bounds.c_z || p0 <= 0.0 {
            return Err(Error::InvalidArgument(format!("initial point ({p0}, {q0}, {w0}) outside the admissible set")));
        }
        let dh0 = self.delta_h0(p0, q0, w0);
        let tau_max = tau_max.unwrap_or_else(|| Self::tau_max(dh0));
        let e2 = self.eps2;
        let d = self.drift;
        let c_p = self.bounds.c_p;
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let (p, q, w) = (y[0], y[1], y[2]);
            dy[0] = -self.dh_dq(q, w) + e2 * (d.torque - d.damping * p / c_p);
            dy[1] = p + e2 * d.v_q;
            dy[2] = e2 * d.v_w;
        };
        let opts = Options::tol(1e-11, 1e-13).with_h_max(0.5).with_max_steps(5_000_000);
        let mut ig = Dop853::new(rhs, tau0, &[p0, q0, w0], 1.0, opts);
        let h_start = self.hamiltonian(p0, q0, w0);
        let mut energy_drift = 0.0f64;
        let mut w_drift = 0.0f64;
        let mut run = 0usize;
        let mut last_turn: Option<f64> = None;
        let mut prev = [p0, q0, w0];
        let mut out = [0.0; 3];
        let hard_cap = tau0 + 20.0 * tau_max;
        let finish = |outcome, t: f64, y: [f64; 3], ed: f64, wd: f64, run| PassageOutcome {
            outcome,
            exit_time: t - tau0,
            final_state: y,
            delta_h0: dh0,
            energy_drift: ed,
            w_drift: wd,
            librations: run,
            tau_max,
            sub_threshold: dh0 <= 2.0 * THRESHOLD_C * e2,
        };
        loop {
            ig.step(Some(hard_cap))?;
            let t = ig.t();
            let y = [ig.y()[0], ig.y()[1], ig.y()[2]];
            if prev[0] + c_p > 0.0 && y[0] + c_p <= 0.0 {
                let te = ig.locate(|_, s| s[0] + c_p, prev[0] + c_p, y[0] + c_p, 1e-12 * t.abs().max(1.0), &mut out);
                energy_drift = energy_drift.max((self.hamiltonian(out[0], out[1], out[2]) - h_start).abs());
                w_drift = w_drift.max((out[2] - w0).abs());
                return Ok(finish(Passage::PassThrough, te, out, energy_drift, w_drift, run));
            }
            energy_drift = energy_drift.max((self.hamiltonian(y[0], y[1], y[2]) - h_start).abs());
            w_drift = w_drift.max((y[2] - w0).abs());
            if y[0] > c_p || y[1].abs() > self.c_q || y[2].abs() > self.bounds.c_z || !y.iter().all(|v| v.is_finite()) {
                return Ok(finish(Passage::LeftBox, t, y, energy_drift, w_drift, run));
            }
            if prev[0] > 0.0 && y[0] <= 0.0 {
                let q = y[1];
                run = match last_turn {
                    Some(ql) if (q - ql).abs() < TWO_PI => run + 1,
                    _ => 1,
                };
                last_turn = Some(q);
            }
            if t - tau0 > tau_max && run >= 3 {
                return Ok(finish(Passage::Captured, t, y, energy_drift, w_drift, run));
            }
            if t >= hard_cap {
                return Err(Error::NoConvergence(format!(
                    "passage neither exited nor librated by tau = {t} (delta_h0 = {dh0:e})"
                )));
            }
            prev = y;
        }
    }

    /// Largest `|H0 - H0(0)|` over `[0, span]` with the model integrated as is.
    pub fn h0_drift(&self, x0: [f64; 3], span: f64) -> Result<f64> {
        let e2 = self.eps2;
        let d = self.drift;
        let c_p = self.bounds.c_p;
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -self.dh_dq(y[1], y[2]) + e2 * (d.torque - d.damping * y[0] / c_p);
            dy[1] = y[0] + e2 * d.v_q;
            dy[2] = e2 * d.v_w;
        };
        let mut ig = Dop853::new(rhs, 0.0, &x0, 1.0, Options::tol(1e-13, 1e-15).with_h_max(0.25));
        let h = self.h0(x0[0], x0[1]);
        let mut worst = 0.0f64;
        while ig.t() < span {
            ig.step(Some(span))?;
            worst = worst.max((self.h0(ig.y()[0], ig.y()[1]) - h).abs());
        }
        Ok(worst)
    }

    /// Energy of the `k`-th lift of the highest saddle, with the smallest `k`
    /// giving `p >= d_p1` everywhere on `q in [-pi, pi]`.
    pub fn target_saddle(&self, w: f64) -> Option<f64> {
        let hs = self.saddles(w).iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        if !hs.is_finite() {
            return None;
        }
        let vmax = q_grid(1024)
            .iter()
            .map(|&s| {
                let q = s - PI;
                self.hamiltonian(0.0, q, w)
            })
            .fold(f64::NEG_INFINITY, f64::max)
            .max(self.hamiltonian(0.0, PI, w));
        let need = vmax + 0.5 * self.bounds.d_p1 * self.bounds.d_p1;
        let k = ((need - hs) / (TWO_PI * self.v_c)).ceil();
        Some(hs + k * TWO_PI * self.v_c)
    }
}

/// Random initial data: `q0` uniform in `[-pi, pi]`, energy uniform within
/// `window` above the target saddle, `w0` fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelEnsemble {
    pub n: usize,
    pub seed: u64,
    pub window: f64,
    /// Offset of the window's lower edge from the saddle energy.
    pub offset: f64,
    pub w0: f64,
}

impl Default for ModelEnsemble {
    fn default() -> Self {
        Self { n: 10_000, seed: 1, window: 0.015, offset: 0.0, w0: 0.0 }
    }
}

pub fn sample_model_initial(model: &ModelSystem, ens: &ModelEnsemble, index: u64) -> Result<[f64; 4]> {
    let hs = model
        .target_saddle(ens.w0)
        .ok_or_else(|| Error::InvalidArgument("the potential has no saddles to sample around".into()))?;
    let mut rng = trajectory_rng(ens.seed, index);
    let q0: f64 = rng.random_range(-PI..=PI);
    let dh: f64 = ens.offset + ens.window * rng.random::<f64>();
    let rest = hs + dh - model.hamiltonian(0.0, q0, ens.w0);
    let p0 = (2.0 * rest).sqrt();
    if !(p0 >= model.bounds.d_p1 && p0 <= model.bounds.d_p2) {
        return Err(Error::InvalidArgument(format!(
            "initial momentum {p0} outside [{}, {}]",
            model.bounds.d_p1, model.bounds.d_p2
        )));
    }
    Ok([p0, q0, ens.w0, 0.0])
}

/// One row of the capture table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureRow {
    pub eps2: f64,
    pub n: usize,
    pub captured: usize,
    pub passed: usize,
    pub left_box: usize,
    pub sub_threshold: usize,
    pub fraction: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Captured fractions for each `eps2`, with common random initial data.
pub fn capture_fraction(model: &ModelSystem, ens: &ModelEnsemble, eps2: &[f64]) -> Result<Vec<CaptureRow>> {
    if ens.n == 0 {
        return Err(Error::ConfigInvalid("ensemble size N must be positive".into()));
    }
    let x0: Vec<[f64; 4]> = (0..ens.n as u64).map(|i| sample_model_initial(model, ens, i)).collect::<Result<_>>()?;
    eps2.iter()
        .map(|&e| {
            let m = model.with_eps2(e);
            let res: Vec<Result<PassageOutcome>> = x0.par_iter().map(|x| m.classify_passage(*x, None)).collect();
            let mut row = CaptureRow {
                eps2: e,
                n: ens.n,
                captured: 0,
                passed: 0,
                left_box: 0,
                sub_threshold: 0,
                fraction: 0.0,
                ci_lo: 0.0,
                ci_hi: 0.0,
            };
            for r in res {
                let o = r?;
                match o.outcome {
                    Passage::Captured => row.captured += 1,
                    Passage::PassThrough => row.passed += 1,
                    Passage::LeftBox => row.left_box += 1,
                }
                if o.sub_threshold {
                    row.sub_threshold += 1;
                }
            }
            row.fraction = row.captured as f64 / ens.n as f64;
            (row.ci_lo, row.ci_hi) = wilson(row.captured, ens.n, 1.96);
            Ok(row)
        })
        .collect()
}

/// CSV `eps2,n,captured,fraction,ci_lo,ci_hi`.
pub fn write_capture_csv<W: Write>(rows: &[CaptureRow], mut w: W) -> Result<()> {
    writeln!(w, "eps2,n,captured,fraction,ci_lo,ci_hi")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(r.eps2),
            r.n,
            r.captured,
            fmt_f64(r.fraction),
            fmt_f64(r.ci_lo),
            fmt_f64(r.ci_hi)
        )?;
    }
    Ok(())
}

/// Exit time against `ln(1 / dh0)` for starts at `q0` above the target saddle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeScan {
    pub delta_h: Vec<f64>,
    pub exit_time: Vec<f64>,
    pub fit: LineFit,
}

pub fn exit_time_scan(model: &ModelSystem, q0: f64, w0: f64, delta_h: &[f64]) -> Result<ExitTimeScan> {
    let hs = model
        .target_saddle(w0)
        .ok_or_else(|| Error::InvalidArgument("the potential has no saddles".into()))?;
    let mut times = Vec::with_capacity(delta_h.len());
    for &dh in delta_h {
        let p0 = (2.0 * (hs + dh - model.hamiltonian(0.0, q0, w0))).sqrt();
        let o = model.classify_passage([p0, q0, w0, 0.0], None)?;
        if o.outcome != Passage::PassThrough {
            return Err(Error::InvalidArgument(format!("start with dh0 = {dh:e} did not pass through: {:?}", o.outcome)));
        }
        times.push(o.exit_time);
    }
    let x: Vec<f64> = delta_h.iter().map(|d| (1.0 / d).ln()).collect();
    let fit = line_fit(&x, &times)?;
    Ok(ExitTimeScan { delta_h: delta_h.to_vec(), exit_time: times, fit })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub eps2: f64,
    pub n_pass: usize,
    pub energy_drift: f64,
    /// `max energy_drift / eps2`
    pub c_energy: f64,
    /// `max w_drift / (eps2 (1 + |ln dh0|))`
    pub c_w: f64,
}

/// Energy and `w` drifts of pass-through trajectories at each `eps2`.
pub fn drift_scan(model: &ModelSystem, ens: &ModelEnsemble, eps2: &[f64]) -> Result<Vec<DriftRow>> {
    let x0: Vec<[f64; 4]> = (0..ens.n as u64).map(|i| sample_model_initial(model, ens, i)).collect::<Result<_>>()?;
    eps2.iter()
        .map(|&e| {
            let m = model.with_eps2(e);
            let res: Vec<PassageOutcome> = x0.par_iter().map(|x| m.classify_passage(*x, None)).collect::<Result<_>>()?;
            let pass: Vec<&PassageOutcome> = res.iter().filter(|o| o.outcome == Passage::PassThrough).collect();
            let ed = pass.iter().map(|o| o.energy_drift).fold(0.0, f64::max);
            let cw = pass.iter().map(|o| o.w_drift / (e * (1.0 + o.delta_h0.ln().abs()))).fold(0.0, f64::max);
            Ok(DriftRow { eps2: e, n_pass: pass.len(), energy_drift: ed, c_energy: ed / e, c_w: cw })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(eps2: f64, drift: Drift) -> ModelSystem {
        let f: Vec<f64> = q_grid(256).iter().map(|q| 1.0 + 2.0 * q.sin()).collect();
        build_model(&f, TWO_PI, 0.0, eps2, drift, ModelBox::default()).unwrap()
    }

    #[test]
    fn potential_from_force() {
        let m = fixture(0.0, Drift::default());
        assert!((m.v_c - 1.0).abs() < 1e-14);
        for q in [-2.0, 0.3, 4.0] {
            let exact = q - 2.0 * f64::cos(q);
            assert!((m.potential(q) - exact).abs() < 1e-13);
            assert!((m.v_per(q + TWO_PI) - m.v_per(q)).abs() < 1e-12);
        }
        // saddles where F = 0, F' < 0
        assert_eq!(m.maxima.len(), 1);
        assert!((m.maxima[0] - 7.0 * PI / 6.0).abs() < 1e-10);
        let neg: Vec<f64> = q_grid(64).iter().map(|q| -0.5 + q.sin()).collect();
        let e = build_model(&neg, TWO_PI, 0.0, 0.0, Drift::default(), ModelBox::default()).unwrap_err();
        assert!(matches!(e, Error::NonpositiveMean(_)));
    }

    #[test]
    fn monotone_torque_always_passes() {
        let f = vec![1.0; 64];
        let m = build_model(&f, TWO_PI, 0.0, 0.0, Drift::default(), ModelBox::default()).unwrap();
        assert!(m.maxima.is_empty());
        let o = m.classify_passage([3.0, 0.5, 0.0, 0.0], None).unwrap();
        assert_eq!(o.outcome, Passage::PassThrough);
        assert_eq!(o.delta_h0, 1.0);
        assert!((o.final_state[0] + 10.0).abs() < 1e-9);
        // p(tau) = 3 - tau exactly
        assert!((o.exit_time - 13.0).abs() < 1e-9);
    }

    #[test]
    fn hamiltonian_passage_conserves_energy() {
        let m = fixture(0.0, Drift::default());
        let hs = m.target_saddle(0.0).unwrap();
        let p0 = (2.0 * (hs + 1e-3 - m.hamiltonian(0.0, 0.0, 0.0))).sqrt();
        let o = m.classify_passage([p0, 0.0, 0.0, 0.0], None).unwrap();
        assert_eq!(o.outcome, Passage::PassThrough);
        assert!(o.energy_drift < 1e-8, "{}", o.energy_drift);
        assert!((o.delta_h0 - 1e-3).abs() < 1e-9);
        assert!(m.h0_drift([1.0, 0.2, 0.0], 1e3).unwrap() < 1e-9);
    }

    #[test]
    fn strong_friction_captures_everything() {
        let m = fixture(0.3, Drift::friction());
        let ens = ModelEnsemble { n: 40, window: 0.5, ..ModelEnsemble::default() };
        let rows = capture_fraction(&m, &ens, &[10.0]).unwrap();
        assert_eq!(rows[0].captured, 40);
        assert_eq!(rows[0].fraction, 1.0);
    }
}
