//! Saddle, closed orbits, the separatrix and charts of orbit scalars.

mod chart;
mod separatrix;

pub use chart::{build_chart, fmt_f64, ChartCell, OrbitChart};
pub use separatrix::{trace_separatrix, SeparatrixTrace, SEED_OFFSET};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{brent, line_fit};
use crate::ode::{Dop853, Options};
use crate::systems::{Domain, Hamiltonian, MAX_Z_DIM};

/// Orbits closer than this to the separatrix are refused.
pub const H_FLOOR: f64 = 1e-9;

/// Default relative tolerance for orbit integrations.
pub const ORBIT_RTOL: f64 = 1e-12;

/// A hyperbolic equilibrium of the unperturbed flow at fixed `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub p: f64,
    pub q: f64,
    pub z: Vec<f64>,
    /// `H_C(z)`.
    pub energy: f64,
    /// Positive eigenvalue of the linearization.
    pub lambda: f64,
    /// Unit unstable and stable eigenvectors in `(p, q)`.
    pub unstable: (f64, f64),
    pub stable: (f64, f64),
    /// `dH/dz` at the saddle (equals `dH_C/dz`).
    pub hz: Vec<f64>,
}

/// Newton iteration on `grad H = 0`.
pub fn find_saddle(ham: &dyn Hamiltonian, z: &[f64], guess: Option<(f64, f64)>) -> Result<SaddlePoint> {
    let (mut p, mut q) = guess.unwrap_or_else(|| ham.saddle_guess(z));
    let mut converged = false;
    for _ in 0..100 {
        let (gp, gq) = ham.grad(p, q, z);
        let hs = ham.hessian(p, q, z);
        let det = hs[0][0] * hs[1][1] - hs[0][1] * hs[0][1];
        if gp == 0.0 && gq == 0.0 {
            converged = true;
            break;
        }
        if det == 0.0 || !det.is_finite() {
            return Err(Error::NoConvergence("singular hessian in saddle search".into()));
        }
        let dp = -(hs[1][1] * gp - hs[0][1] * gq) / det;
        let dq = -(-hs[0][1] * gp + hs[0][0] * gq) / det;
        p += dp;
        q += dq;
        if dp.abs() + dq.abs() <= 4.0 * f64::EPSILON * (1.0 + p.abs() + q.abs()) {
            converged = true;
            break;
        }
    }
    let (gp, gq) = ham.grad(p, q, z);
    if !converged && gp.abs() + gq.abs() > 1e-10 {
        return Err(Error::NoConvergence(format!("saddle search ended at |grad| = {:e}", gp.abs() + gq.abs())));
    }
    let hs = ham.hessian(p, q, z);
    let det = hs[0][0] * hs[1][1] - hs[0][1] * hs[0][1];
    if det >= 0.0 {
        return Err(Error::NotASaddle { det });
    }
    let lambda = (-det).sqrt();
    let unstable = eigvec(&hs, lambda);
    let stable = eigvec(&hs, -lambda);
    let mut hz = vec![0.0; z.len()];
    ham.grad_z(p, q, z, &mut hz);
    Ok(SaddlePoint { p, q, z: z.to_vec(), energy: ham.energy(p, q, z), lambda, unstable, stable, hz })
}

// Eigenvector of the linearized flow d(p,q)/dt = (-H_q, H_p) for eigenvalue mu.
fn eigvec(hs: &[[f64; 2]; 2], mu: f64) -> (f64, f64) {
    let (hpp, hpq, hqq) = (hs[0][0], hs[0][1], hs[1][1]);
    // rows of A - mu I with A = [[-hpq, -hqq], [hpp, hpq]]
    let r1 = (-hpq - mu, -hqq);
    let r2 = (hpp, hpq - mu);
    let r = if r1.0.hypot(r1.1) >= r2.0.hypot(r2.1) { r1 } else { r2 };
    let v = (-r.1, r.0);
    let n = v.0.hypot(v.1);
    (v.0 / n, v.1 / n)
}

/// `h = H(p, q, z) - H_C(z)`.
pub fn energy_offset(ham: &dyn Hamiltonian, saddle: &SaddlePoint, p: f64, q: f64, z: &[f64]) -> f64 {
    ham.energy(p, q, z) - saddle.energy
}

/// Period, frequency and action of a closed unperturbed orbit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitScalars {
    pub period: f64,
    pub omega: f64,
    pub action: f64,
}

/// A closed orbit with its section point; can be re-sampled in time.
#[derive(Clone, Debug)]
pub struct ClosedOrbit {
    pub domain: Domain,
    pub h: f64,
    pub z: Vec<f64>,
    /// Point on the section where the phase is zero.
    pub start: (f64, f64),
    pub period: f64,
    pub action: f64,
    rtol: f64,
}

impl ClosedOrbit {
    pub fn scalars(&self) -> OrbitScalars {
        OrbitScalars { period: self.period, omega: 2.0 * std::f64::consts::PI / self.period, action: self.action }
    }

    /// `n` points at equal time spacing `T/n`, starting at the section.
    pub fn sample(&self, ham: &dyn Hamiltonian, n: usize) -> Result<Vec<(f64, f64)>> {
        let z = self.z.clone();
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let (hp, hq) = ham.grad(y[0], y[1], &z);
            dy[0] = -hq;
            dy[1] = hp;
        };
        let mut ig = Dop853::new(f, 0.0, &[self.start.0, self.start.1], 1.0, Options::tol(self.rtol, self.rtol * 1e-2));
        let mut out = Vec::with_capacity(n);
        out.push(self.start);
        let mut buf = [0.0; 2];
        let dt = self.period / n as f64;
        for k in 1..n {
            let tk = k as f64 * dt;
            while ig.t() < tk {
                ig.step(Some(self.period))?;
            }
            ig.dense(tk, &mut buf);
            out.push((buf[0], buf[1]));
        }
        Ok(out)
    }

    /// State at time `t` after the section point.
    pub fn point_at(&self, ham: &dyn Hamiltonian, t: f64) -> Result<(f64, f64)> {
        let t = t.rem_euclid(self.period);
        if t == 0.0 {
            return Ok(self.start);
        }
        let z = self.z.clone();
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let (hp, hq) = ham.grad(y[0], y[1], &z);
            dy[0] = -hq;
            dy[1] = hp;
        };
        let mut ig = Dop853::new(f, 0.0, &[self.start.0, self.start.1], 1.0, Options::tol(self.rtol, self.rtol * 1e-2));
        ig.advance_to(t)?;
        Ok((ig.y()[0], ig.y()[1]))
    }
}

/// Section crossing point of the orbit at energy offset `h`.
pub fn section_point(ham: &dyn Hamiltonian, saddle: &SaddlePoint, domain: Domain, h: f64, z: &[f64]) -> Result<(f64, f64)> {
    let (pc, qc) = ham
        .loop_center(domain, z)
        .ok_or_else(|| Error::OutsideChart(format!("no closed orbits in {domain}")))?;
    let side = ham.section_side(domain);
    let g = |s: f64| ham.energy(pc, qc + side * s, z) - saddle.energy - h;
    if g(0.0) >= 0.0 {
        return Err(Error::OutsideChart(format!("h = {h:e} is below the floor of {domain}")));
    }
    let scale = 1.0 + qc.abs() + (saddle.q - qc).abs();
    // a saddle on the ray bounds the root; marching could step over the thin
    // window next to it when h is close to zero
    let s_sad = side * (saddle.q - qc);
    if (saddle.p - pc).abs() < 1e-12 && s_sad > 0.0 && g(s_sad) >= 0.0 {
        let s = brent(g, 0.0, s_sad, 1e-16 * scale, 200)?;
        return Ok((pc, qc + side * s));
    }
    let mut ds = 1e-3 * scale;
    let mut s0 = 0.0;
    let mut g0;
    let s_max = 1e3 * scale;
    loop {
        let s1 = s0 + ds;
        let g1 = g(s1);
        if !g1.is_finite() {
            return Err(Error::Escape("energy not finite along the section".into()));
        }
        if g1 >= 0.0 {
            let s = brent(g, s0, s1, 1e-16 * scale, 200)?;
            return Ok((pc, qc + side * s));
        }
        s0 = s1;
        g0 = g1;
        if s0 > s_max {
            return Err(Error::Escape(format!("no turning point along the section (last g = {g0:e})")));
        }
        ds *= 1.05;
    }
}

/// Closed orbit at `h` in `domain`, with period and action.
pub fn closed_orbit(
    ham: &dyn Hamiltonian,
    saddle: &SaddlePoint,
    domain: Domain,
    h: f64,
    z: &[f64],
    rtol: f64,
) -> Result<ClosedOrbit> {
    if h.abs() < H_FLOOR {
        return Err(Error::TooCloseToSeparatrix { h, floor: H_FLOOR });
    }
    match domain {
        Domain::B3 if h <= 0.0 => return Err(Error::InvalidArgument(format!("h = {h} does not lie in B3"))),
        Domain::B1 | Domain::B2 if h >= 0.0 => {
            return Err(Error::InvalidArgument(format!("h = {h} does not lie in {domain}")))
        }
        Domain::Separatrix => return Err(Error::InvalidArgument("separatrix has no period".into())),
        _ => {}
    }
    let start = section_point(ham, saddle, domain, h, z)?;
    let (pc, qc) = ham.loop_center(domain, z).unwrap();
    let side = ham.section_side(domain);
    let (_, hq0) = ham.grad(start.0, start.1, z);
    let d0 = if -hq0 >= 0.0 { 1.0 } else { -1.0 };
    let mut zz = [0.0; MAX_Z_DIM];
    zz[..z.len()].copy_from_slice(z);
    let nz = z.len();
    let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (hp, hq) = ham.grad(y[0], y[1], &zz[..nz]);
        dy[0] = -hq;
        dy[1] = hp;
        dy[2] = y[0] * hp;
    };
    let mut ig = Dop853::new(f, 0.0, &[start.0, start.1, 0.0], 1.0, Options::tol(rtol, rtol * 1e-2));
    let t_limit = 1e4;
    let mut out = [0.0; 3];
    loop {
        let g_prev = d0 * (ig.y()[0] - pc);
        ig.step(Some(t_limit))?;
        let y = ig.y();
        if !crate::geometry::finite(y) || y[0].abs() > 1e6 || y[1].abs() > 1e6 {
            return Err(Error::Escape("orbit left every bounded region".into()));
        }
        let g_now = d0 * (y[0] - pc);
        if g_prev < 0.0 && g_now >= 0.0 && side * (y[1] - qc) > 0.0 {
            let t_ev = ig.locate(|_, y| d0 * (y[0] - pc), g_prev, g_now, 1e-15 * ig.t(), &mut out);
            // one Newton correction on p - pc using dp/dt
            let (_, hq) = ham.grad(out[0], out[1], z);
            let dpdt = -hq;
            let mut period = t_ev;
            let mut area = out[2];
            if dpdt != 0.0 {
                let dt = -(out[0] - pc) / dpdt;
                period += dt;
                area += dt * out[0] * ham.grad(out[0], out[1], z).0;
            }
            return Ok(ClosedOrbit {
                domain,
                h,
                z: z.to_vec(),
                start,
                period,
                action: area.abs() / (2.0 * std::f64::consts::PI),
                rtol,
            });
        }
        if ig.t() >= t_limit {
            return Err(Error::Escape("no return to the section".into()));
        }
    }
}

/// `(T, omega, I)` of the closed orbit at `h` in `domain`.
pub fn orbit_scalars(ham: &dyn Hamiltonian, saddle: &SaddlePoint, domain: Domain, h: f64, z: &[f64]) -> Result<OrbitScalars> {
    Ok(closed_orbit(ham, saddle, domain, h, z, ORBIT_RTOL)?.scalars())
}

pub(crate) fn finite(y: &[f64]) -> bool {
    y.iter().all(|v| v.is_finite())
}

/// `T(h) ~ A ln|h| + B`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub a: f64,
    pub b: f64,
    /// Root mean square residual of the fit.
    pub residual: f64,
    pub r2: f64,
}

/// Least-squares fit of `T = A ln|h| + B`. Needs 8+ points over 2+ decades.
pub fn fit_log_asymptotics(points: &[(f64, f64)]) -> Result<LogFit> {
    if points.len() < 8 {
        return Err(Error::InsufficientRange(format!("{} points, need 8", points.len())));
    }
    let hmin = points.iter().map(|p| p.0.abs()).fold(f64::INFINITY, f64::min);
    let hmax = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if hmin <= 0.0 || (hmax / hmin).log10() < 2.0 - 1e-9 {
        return Err(Error::InsufficientRange(format!("|h| spans [{hmin:e}, {hmax:e}]")));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.abs().ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let f = line_fit(&x, &y)?;
    Ok(LogFit { a: f.slope, b: f.intercept, residual: f.rms, r2: f.r2 })
}

/// Log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Log fit of the period near the separatrix on `|h| in [1e-7, 1e-3]`.
pub fn period_log_fit(ham: &dyn Hamiltonian, saddle: &SaddlePoint, domain: Domain, z: &[f64]) -> Result<LogFit> {
    let sign = if domain == Domain::B3 { 1.0 } else { -1.0 };
    let mut pts = Vec::new();
    for m in log_grid(1e-7, 1e-3, 9) {
        let s = orbit_scalars(ham, saddle, domain, sign * m, z)?;
        pts.push((sign * m, s.period));
    }
    fit_log_asymptotics(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{Duffing, Pendulum};

    #[test]
    fn duffing_saddle() {
        let s = find_saddle(&Duffing, &[1.0], Some((0.1, 0.2))).unwrap();
        assert!(s.p.abs() < 1e-14 && s.q.abs() < 1e-14);
        assert!((s.lambda - 1.0).abs() < 1e-12);
        assert!((s.energy).abs() < 1e-14);
        // eigenvectors along the diagonals
        assert!((s.unstable.0.abs() - s.unstable.1.abs()).abs() < 1e-12);
        assert!(s.unstable.0 * s.unstable.1 > 0.0);
        assert!(s.stable.0 * s.stable.1 < 0.0);
    }

    #[test]
    fn well_bottom_is_not_a_saddle() {
        let e = find_saddle(&Duffing, &[1.0], Some((0.0, 0.9))).unwrap_err();
        assert!(matches!(e, Error::NotASaddle { .. }));
    }

    #[test]
    fn pendulum_saddle() {
        let s = find_saddle(&Pendulum, &[], Some((0.1, 3.0))).unwrap();
        assert!((s.q - std::f64::consts::PI).abs() < 1e-13);
        assert!((s.energy - 1.0).abs() < 1e-14);
        assert!((s.lambda - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_limit_near_well_bottom() {
        let s = find_saddle(&Duffing, &[1.0], None).unwrap();
        let h = -0.25 + 1e-8;
        let o = orbit_scalars(&Duffing, &s, Domain::B2, h, &[1.0]).unwrap();
        let t0 = 2.0 * std::f64::consts::PI / 2f64.sqrt();
        assert!((o.period - t0).abs() / t0 < 1e-4, "{}", o.period);
    }

    #[test]
    fn orbit_rejects_separatrix_floor() {
        let s = find_saddle(&Duffing, &[1.0], None).unwrap();
        let e = orbit_scalars(&Duffing, &s, Domain::B3, 1e-10, &[1.0]).unwrap_err();
        assert!(matches!(e, Error::TooCloseToSeparatrix { .. }));
        let e = orbit_scalars(&Duffing, &s, Domain::B2, -0.3, &[1.0]).unwrap_err();
        assert!(matches!(e, Error::OutsideChart(_)));
    }

    #[test]
    fn sampled_orbit_conserves_energy() {
        let s = find_saddle(&Duffing, &[1.0], None).unwrap();
        let o = closed_orbit(&Duffing, &s, Domain::B3, 0.2, &[1.0], ORBIT_RTOL).unwrap();
        let pts = o.sample(&Duffing, 64).unwrap();
        for (p, q) in pts {
            assert!((Duffing.energy(p, q, &[1.0]) - 0.2).abs() < 1e-11);
        }
    }

    #[test]
    fn log_fit_needs_range() {
        let pts: Vec<(f64, f64)> = (0..8).map(|i| (1e-4 * (1.0 + i as f64 * 0.1), 1.0)).collect();
        assert!(matches!(fit_log_asymptotics(&pts), Err(Error::InsufficientRange(_))));
        let pts: Vec<(f64, f64)> = (0..4).map(|i| (10f64.powi(-i - 2), 1.0)).collect();
        assert!(matches!(fit_log_asymptotics(&pts), Err(Error::InsufficientRange(_))));
    }
}
