//! Averaged slow dynamics, separatrix integrals and capture probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    closed_orbit, find_saddle, period_log_fit, trace_separatrix, LogFit, SaddlePoint, SeparatrixTrace, H_FLOOR,
    ORBIT_RTOL,
};
use crate::numerics::hermite;
use crate::ode::{Dop853, Options};
use crate::systems::{Domain, SystemSpec, MAX_Z_DIM};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Node counts for the double average over `(t, lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub t_nodes: usize,
    pub lambda_nodes: usize,
    pub orbit_rtol: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { t_nodes: 512, lambda_nodes: 64, orbit_rtol: ORBIT_RTOL }
    }
}

/// Averaged field `(f_h0, f_z0)` at `(h, z)` in `domain`.
pub fn averaged_rhs(sys: &SystemSpec, h: f64, z: &[f64], domain: Domain, eps: f64, quad: &Quadrature) -> Result<(f64, Vec<f64>)> {
    let ham = sys.hamiltonian.as_ref();
    let saddle = find_saddle(ham, z, None)?;
    averaged_rhs_at(sys, &saddle, h, z, domain, eps, quad)
}

pub(crate) fn averaged_rhs_at(
    sys: &SystemSpec,
    saddle: &SaddlePoint,
    h: f64,
    z: &[f64],
    domain: Domain,
    eps: f64,
    quad: &Quadrature,
) -> Result<(f64, Vec<f64>)> {
    let ham = sys.hamiltonian.as_ref();
    let orbit = closed_orbit(ham, saddle, domain, h, z, quad.orbit_rtol)?;
    let pts = orbit.sample(ham, quad.t_nodes)?;
    let nl = if sys.perturbation.lambda_dependent() { quad.lambda_nodes } else { 1 };
    let nz = z.len();
    let drives = sys.perturbation.drives_slow();
    let mut fh = 0.0;
    let mut fz = vec![0.0; nz];
    let mut buf = [0.0; MAX_Z_DIM];
    for j in 0..nl {
        let lam = TWO_PI * j as f64 / nl as f64;
        for &(p, q) in &pts {
            fh += sys.f_h(p, q, z, lam, eps, &saddle.hz);
            if drives {
                sys.perturbation.eval(p, q, z, lam, eps, &mut buf[..nz]);
                for k in 0..nz {
                    fz[k] += buf[k];
                }
            }
        }
    }
    let norm = 1.0 / (nl * pts.len()) as f64;
    fh *= norm;
    for v in fz.iter_mut() {
        *v *= norm;
    }
    if !fh.is_finite() || fz.iter().any(|v| !v.is_finite()) {
        return Err(Error::FieldBlowup(format!("at h = {h:e}")));
    }
    Ok((fh, fz))
}

/// Separatrix integrals of `-f_h` over each loop, averaged over `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaValues {
    pub theta: [f64; 3],
    /// Estimated absolute quadrature error.
    pub error: f64,
}

/// Trace both loops at `z` and integrate.
pub fn theta(sys: &SystemSpec, z: &[f64], eps: f64, lambda_nodes: usize) -> Result<ThetaValues> {
    let saddle = find_saddle(sys.hamiltonian.as_ref(), z, None)?;
    let l1 = trace_separatrix(sys, &saddle, Domain::B1, None, 1e-12)?;
    let l2 = trace_separatrix(sys, &saddle, Domain::B2, None, 1e-12)?;
    theta_from_traces(sys, &saddle, &l1, &l2, eps, lambda_nodes)
}

/// `-(1/2pi) int int f_h dt dlambda` over one loop, with an error estimate.
pub fn loop_integral(sys: &SystemSpec, saddle: &SaddlePoint, tr: &SeparatrixTrace, eps: f64, lambda_nodes: usize) -> (f64, f64) {
    let nl = if sys.perturbation.lambda_dependent() { lambda_nodes } else { 1 };
    let n = tr.len();
    let mut vals = vec![0.0; n];
    for j in 0..nl {
        let lam = TWO_PI * j as f64 / nl as f64;
        for k in 0..n {
            vals[k] += sys.f_h(tr.p[k], tr.q[k], &tr.z, lam, eps, &saddle.hz);
        }
    }
    for v in vals.iter_mut() {
        *v /= nl as f64;
    }
    let trap = |stride: usize| {
        let mut s = 0.0;
        let idx: Vec<usize> = (0..n).step_by(stride).collect();
        for (i, &k) in idx.iter().enumerate() {
            let w = if i == 0 || i == idx.len() - 1 { 0.5 } else { 1.0 };
            s += w * vals[k];
        }
        s * tr.dt * stride as f64
    };
    let fine = trap(1);
    let coarse = trap(2);
    let tail = (vals[0].abs() + vals[n - 1].abs()) / tr.lambda;
    // integral over lambda divided by 2pi is the lambda mean
    (-fine, (fine - coarse).abs() + tail)
}

pub fn theta_from_traces(
    sys: &SystemSpec,
    saddle: &SaddlePoint,
    l1: &SeparatrixTrace,
    l2: &SeparatrixTrace,
    eps: f64,
    lambda_nodes: usize,
) -> Result<ThetaValues> {
    let (t1, e1) = loop_integral(sys, saddle, l1, eps, lambda_nodes);
    let (t2, e2) = loop_integral(sys, saddle, l2, eps, lambda_nodes);
    if t1 <= 0.0 || t2 <= 0.0 {
        return Err(Error::NonpositiveTheta { theta1: t1, theta2: t2 });
    }
    Ok(ThetaValues { theta: [t1, t2, t1 + t2], error: e1 + e2 })
}

/// `P_i = Theta_i / Theta_3` for the two inner domains.
pub fn capture_prediction(th: &ThetaValues) -> Result<(f64, f64)> {
    let [t1, t2, t3] = th.theta;
    if t1 < 0.0 || t2 < 0.0 || t3 <= 0.0 {
        return Err(Error::NonpositiveTheta { theta1: t1, theta2: t2 });
    }
    Ok((t1 / t3, t2 / t3))
}

/// Options for averaged trajectories.
#[derive(Clone, Copy, Debug)]
pub struct AveragedOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Largest step in slow time `eps * lambda`.
    pub max_slow_step: f64,
    /// Stop once `h` drops to this value (after crossing).
    pub stop_h: Option<f64>,
    pub quad: Quadrature,
}

impl Default for AveragedOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-14, max_slow_step: 0.05, stop_h: None, quad: Quadrature::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AvgNode {
    pub lambda: f64,
    pub h: f64,
    pub z: Vec<f64>,
    pub dh: f64,
    pub dz: Vec<f64>,
}

/// Analytic passage through `|h| < H_FLOOR` under `dh/dlambda = -eps Theta_d / T_d(h)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Crossing {
    pub lambda_floor: f64,
    pub lambda_star: f64,
    pub lambda_exit: f64,
    pub z_star: Vec<f64>,
    pub branch: Option<Domain>,
    pub theta: ThetaValues,
    pub fit_outer: LogFit,
    pub fit_inner: Option<LogFit>,
    pub eps: f64,
}

// int_0^x (A ln s + B) ds
fn g_int(fit: &LogFit, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        fit.a * (x * x.ln() - x) + fit.b * x
    }
}

impl Crossing {
    fn h_at(&self, lam: f64) -> f64 {
        let [t1, t2, t3] = self.theta.theta;
        if lam <= self.lambda_star {
            // lambda - lambda_floor = (G(h_f) - G(h)) / (eps Theta_3)
            let target = g_int(&self.fit_outer, H_FLOOR) - (lam - self.lambda_floor) * self.eps * t3;
            invert_g(&self.fit_outer, target)
        } else {
            let th = match self.branch {
                Some(Domain::B1) => t1,
                _ => t2,
            };
            let fit = self.fit_inner.as_ref().unwrap_or(&self.fit_outer);
            -invert_g(fit, (lam - self.lambda_star) * self.eps * th)
        }
    }
}

fn invert_g(fit: &LogFit, target: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, H_FLOOR);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g_int(fit, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solution of the averaged system, possibly glued across the separatrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AveragedTrajectory {
    pub start_domain: Domain,
    /// Nodes before the crossing (or all nodes if none).
    pub outer: Vec<AvgNode>,
    pub crossing: Option<Crossing>,
    /// Nodes after the crossing, in the branch domain.
    pub inner: Vec<AvgNode>,
    pub eps: f64,
}

impl AveragedTrajectory {
    pub fn lambda_end(&self) -> f64 {
        self.inner.last().or(self.outer.last()).map(|n| n.lambda).unwrap_or(0.0)
    }

    fn seg_at(nodes: &[AvgNode], lam: f64) -> Option<(f64, Vec<f64>)> {
        if nodes.is_empty() || lam < nodes[0].lambda || lam > nodes[nodes.len() - 1].lambda {
            return None;
        }
        let k = nodes.partition_point(|n| n.lambda <= lam).clamp(1, nodes.len().max(2) - 1);
        if nodes.len() == 1 {
            return Some((nodes[0].h, nodes[0].z.clone()));
        }
        let (a, b) = (&nodes[k - 1], &nodes[k]);
        let h = hermite(a.lambda, b.lambda, a.h, b.h, a.dh, b.dh, lam);
        let z = (0..a.z.len()).map(|i| hermite(a.lambda, b.lambda, a.z[i], b.z[i], a.dz[i], b.dz[i], lam)).collect();
        Some((h, z))
    }

    /// `(h, z)` at `lambda` by cubic Hermite interpolation.
    pub fn state_at(&self, lam: f64) -> Result<(f64, Vec<f64>)> {
        if let Some(s) = Self::seg_at(&self.outer, lam) {
            return Ok(s);
        }
        if let Some(c) = &self.crossing {
            if lam >= c.lambda_floor && lam <= c.lambda_exit {
                let z = c.z_star.clone();
                return Ok((c.h_at(lam), z));
            }
        }
        if let Some(s) = Self::seg_at(&self.inner, lam) {
            return Ok(s);
        }
        Err(Error::InvalidArgument(format!("lambda = {lam} outside the averaged trajectory")))
    }

    pub fn h_at(&self, lam: f64) -> Result<f64> {
        Ok(self.state_at(lam)?.0)
    }
}

/// Integrate the averaged system from `(h0, z0)` at `lambda0` up to
/// `lambda_end`. On reaching the separatrix the solution is glued into
/// `branch`; with `branch = None` it stops at the crossing.
#[allow(clippy::too_many_arguments)]
pub fn integrate_averaged(
    sys: &SystemSpec,
    h0: f64,
    z0: &[f64],
    lambda0: f64,
    lambda_end: f64,
    eps: f64,
    branch: Option<Domain>,
    opts: &AveragedOptions,
) -> Result<AveragedTrajectory> {
    let ham = sys.hamiltonian.as_ref();
    let nz = z0.len();
    find_saddle(ham, z0, None)?;
    let start_domain = if h0 > 0.0 {
        Domain::B3
    } else {
        branch.ok_or_else(|| Error::InvalidArgument("inner start needs a domain".into()))?
    };
    let mut traj = AveragedTrajectory { start_domain, outer: Vec::new(), crossing: None, inner: Vec::new(), eps };
    let h_max_step = opts.max_slow_step / eps;

    if start_domain == Domain::B3 {
        let seg = integrate_segment(sys, Domain::B3, h0, z0, lambda0, lambda_end, eps, opts, h_max_step, true)?;
        traj.outer = seg.nodes;
        let Some((lam_f, z_f)) = seg.floor_hit else {
            return Ok(traj);
        };
        // bridge
        let saddle = find_saddle(ham, &z_f, None)?;
        let th = theta(sys, &z_f, eps, opts.quad.lambda_nodes)?;
        let fit_outer = period_log_fit(ham, &saddle, Domain::B3, &z_f)?;
        let d_out = g_int(&fit_outer, H_FLOOR) / (eps * th.theta[2]);
        let lambda_star = lam_f + d_out;
        let last = traj.outer.last().unwrap();
        let z_star: Vec<f64> = (0..nz).map(|k| z_f[k] + last.dz[k] * d_out).collect();
        let mut crossing = Crossing {
            lambda_floor: lam_f,
            lambda_star,
            lambda_exit: lambda_star,
            z_star: z_star.clone(),
            branch,
            theta: th,
            fit_outer,
            fit_inner: None,
            eps,
        };
        let Some(b) = branch else {
            traj.crossing = Some(crossing);
            return Ok(traj);
        };
        let fit_inner = period_log_fit(ham, &saddle, b, &z_f)?;
        let th_b = th.theta[b.index()];
        let d_in = g_int(&fit_inner, H_FLOOR) / (eps * th_b);
        crossing.lambda_exit = lambda_star + d_in;
        crossing.fit_inner = Some(fit_inner);
        let z_exit: Vec<f64> = (0..nz).map(|k| z_star[k] + last.dz[k] * d_in).collect();
        let lam_exit = crossing.lambda_exit;
        traj.crossing = Some(crossing);
        if lam_exit >= lambda_end {
            return Ok(traj);
        }
        let seg = integrate_segment(sys, b, -H_FLOOR, &z_exit, lam_exit, lambda_end, eps, opts, h_max_step, false)?;
        traj.inner = seg.nodes;
        return Ok(traj);
    }
    let seg = integrate_segment(sys, start_domain, h0, z0, lambda0, lambda_end, eps, opts, h_max_step, false)?;
    traj.inner = seg.nodes;
    Ok(traj)
}

struct Segment {
    nodes: Vec<AvgNode>,
    floor_hit: Option<(f64, Vec<f64>)>,
}

#[allow(clippy::too_many_arguments)]
fn integrate_segment(
    sys: &SystemSpec,
    domain: Domain,
    h0: f64,
    z0: &[f64],
    lambda0: f64,
    lambda_end: f64,
    eps: f64,
    opts: &AveragedOptions,
    h_max_step: f64,
    watch_floor: bool,
) -> Result<Segment> {
    let ham = sys.hamiltonian.as_ref();
    let nz = z0.len();
    let quad = opts.quad;
    let failure = std::cell::RefCell::new(None::<Error>);
    let f = |_lam: f64, y: &[f64], dy: &mut [f64]| {
        let h = y[0];
        let z = &y[1..];
        let r = (|| -> Result<(f64, Vec<f64>)> {
            let inside = match domain {
                Domain::B3 => h >= H_FLOOR,
                _ => h <= -H_FLOOR && h > ham.energy_floor(domain, z),
            };
            if !inside {
                // past the floor inside a trial stage: continue with the local model
                return Err(Error::LeftDomain(format!("h = {h:e} outside {domain}")));
            }
            let saddle = find_saddle(ham, z, None)?;
            averaged_rhs_at(sys, &saddle, h, z, domain, eps, &quad)
        })();
        match r {
            Ok((fh, fz)) => {
                dy[0] = eps * fh;
                for k in 0..nz {
                    dy[1 + k] = eps * fz[k];
                }
            }
            Err(e) => {
                for v in dy.iter_mut() {
                    *v = f64::NAN;
                }
                let mut slot = failure.borrow_mut();
                if slot.is_none() {
                    *slot = Some(e);
                }
            }
        }
    };
    let mut y0 = vec![h0];
    y0.extend_from_slice(z0);
    let dir = if lambda_end >= lambda0 { 1.0 } else { -1.0 };
    let o = Options { rtol: opts.rtol, atol: opts.atol, h_max: h_max_step, h0: None, max_steps: 2_000_000 };
    let mut ig = Dop853::new(f, lambda0, &y0, dir, o);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let mut nodes = Vec::new();
    let push = |ig: &Dop853<_>, nodes: &mut Vec<AvgNode>| {
        let y = ig.y();
        let d = ig.dy();
        nodes.push(AvgNode { lambda: ig.t(), h: y[0], z: y[1..].to_vec(), dh: d[0], dz: d[1..].to_vec() });
    };
    push(&ig, &mut nodes);
    loop {
        if ig.t() == lambda_end {
            return Ok(Segment { nodes, floor_hit: None });
        }
        let r = ig.step(Some(lambda_end));
        // NaN stages from trial points past the floor are rejected by the step
        // controller; other failures are fatal
        let fail = failure.borrow_mut().take();
        if let Err(e) = r {
            return Err(fail.unwrap_or(e));
        }
        if let Some(e) = fail {
            if !matches!(e, Error::LeftDomain(_)) {
                return Err(e);
            }
        }
        let h = ig.y()[0];
        if watch_floor && h <= 2.0 * H_FLOOR {
            // locate h = 2 H_FLOOR by re-stepping, then march the last bit linearly
            let g_prev = nodes.last().unwrap().h - 2.0 * H_FLOOR;
            let g_now = h - 2.0 * H_FLOOR;
            let mut out = vec![0.0; 1 + nz];
            let t_tol = 1e-12 * ig.t().abs().max(1.0);
            let t_ev = ig.locate(|_, y| y[0] - 2.0 * H_FLOOR, g_prev, g_now, t_tol, &mut out);
            let _ = failure.borrow_mut().take();
            let mut d = vec![0.0; 1 + nz];
            ig.rhs(t_ev, &out, &mut d);
            let _ = failure.borrow_mut().take();
            if !d[0].is_finite() || d[0] >= 0.0 {
                return Err(Error::FieldBlowup("averaged field at the separatrix floor".into()));
            }
            nodes.push(AvgNode { lambda: t_ev, h: out[0], z: out[1..].to_vec(), dh: d[0], dz: d[1..].to_vec() });
            // from 2 H_FLOOR to H_FLOOR with the field frozen at the event
            let dl = -H_FLOOR / d[0];
            let lam_f = t_ev + dl;
            let zf: Vec<f64> = (0..nz).map(|k| out[1 + k] + d[1 + k] * dl).collect();
            nodes.push(AvgNode { lambda: lam_f, h: H_FLOOR, z: zf.clone(), dh: d[0], dz: d[1..].to_vec() });
            return Ok(Segment { nodes, floor_hit: Some((lam_f, zf)) });
        }
        if !watch_floor && domain.is_inner() && h >= -0.5 * H_FLOOR {
            return Err(Error::LeftDomain(format!("h = {h:e} left {domain}")));
        }
        push(&ig, &mut nodes);
        if let Some(hs) = opts.stop_h {
            if domain.is_inner() && h <= hs {
                return Ok(Segment { nodes, floor_hit: None });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{Preset, PresetParams};

    #[test]
    fn friction_theta_closed_form() {
        // Theta_i = gamma * (loop area) for f_p = -gamma p
        let sys = SystemSpec::duffing(Preset::Friction, PresetParams::default());
        let th = theta(&sys, &[1.0], 1e-3, 64).unwrap();
        let expect = 0.1 * 4.0 / 3.0;
        assert!((th.theta[0] - expect).abs() < 1e-9, "{:?}", th);
        assert!((th.theta[1] - expect).abs() < 1e-9);
        assert_eq!(th.theta[2], th.theta[0] + th.theta[1]);
        let (p1, p2) = capture_prediction(&th).unwrap();
        assert!((p1 - 0.5).abs() < 1e-12 && (p1 + p2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn averaged_field_matches_area_formula() {
        // friction: f_h0 = -gamma * area(h) / T(h)
        let sys = SystemSpec::duffing(Preset::Friction, PresetParams::default());
        let s = find_saddle(sys.hamiltonian.as_ref(), &[1.0], None).unwrap();
        let o = closed_orbit(sys.hamiltonian.as_ref(), &s, Domain::B3, 0.3, &[1.0], ORBIT_RTOL).unwrap();
        let (fh, _) = averaged_rhs(&sys, 0.3, &[1.0], Domain::B3, 1e-3, &Quadrature::default()).unwrap();
        let expect = -0.1 * TWO_PI * o.action / o.period;
        assert!((fh - expect).abs() < 1e-10 * expect.abs(), "{fh} vs {expect}");
    }

    #[test]
    fn averaged_trajectory_crosses_and_glues() {
        let sys = SystemSpec::duffing(Preset::Friction, PresetParams::default());
        let eps = 1e-2;
        let opts = AveragedOptions { stop_h: Some(-0.05), ..Default::default() };
        let tr = integrate_averaged(&sys, 0.2, &[1.0], 0.0, 1e6, eps, Some(Domain::B2), &opts).unwrap();
        let c = tr.crossing.as_ref().unwrap();
        assert!(c.lambda_star > 0.0 && c.lambda_exit >= c.lambda_star);
        let (h, _) = tr.state_at(c.lambda_star).unwrap();
        assert!(h.abs() <= H_FLOOR);
        assert!(tr.inner.last().unwrap().h <= -0.05);
        // monotone decrease
        let mut prev = f64::INFINITY;
        for n in tr.outer.iter().chain(tr.inner.iter()) {
            assert!(n.h <= prev);
            prev = n.h;
        }
    }
}
