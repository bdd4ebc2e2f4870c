use serde::Serialize;

use super::SaddlePoint;
use crate::error::{Error, Result};
use crate::ode::{Dop853, Options};
use crate::systems::{Domain, SystemSpec, Topology, MAX_Z_DIM};

/// Distance from the saddle at which the two halves of a loop are seeded.
pub const SEED_OFFSET: f64 = 1e-8;

/// One homoclinic loop sampled on a uniform time grid, `t = 0` at the
/// turning point on the section. Samples beyond the integrated range follow
/// the linearized flow at the saddle.
#[derive(Clone, Debug, Serialize)]
pub struct SeparatrixTrace {
    pub domain: Domain,
    pub z: Vec<f64>,
    pub lambda: f64,
    pub dt: f64,
    pub t0: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Mismatch between the outgoing and incoming halves at `t = 0`.
    pub anchor_gap: f64,
    /// Time from the seed to the anchor along the outgoing / incoming halves.
    pub t_out: f64,
    pub t_in: f64,
}

impl SeparatrixTrace {
    pub fn len(&self) -> usize {
        self.p.len()
    }
    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
    pub fn t_cut(&self) -> f64 {
        -self.t0
    }

    /// Trapezoid rule for `int g(t, p, q) dt` over the trace.
    pub fn integrate<G: FnMut(f64, f64, f64) -> f64>(&self, mut g: G) -> f64 {
        let n = self.len();
        let mut s = 0.0;
        for k in 0..n {
            let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            s += w * g(self.time(k), self.p[k], self.q[k]);
        }
        s * self.dt
    }

    /// Area enclosed by the loop.
    pub fn area(&self, sys: &SystemSpec) -> f64 {
        let z = self.z.clone();
        self.integrate(|_, p, q| p * sys.hamiltonian.grad(p, q, &z).0).abs()
    }

    /// Largest `|H - H_C|` over the samples.
    pub fn max_energy_error(&self, sys: &SystemSpec, saddle: &SaddlePoint) -> f64 {
        (0..self.len())
            .map(|k| (sys.hamiltonian.energy(self.p[k], self.q[k], &self.z) - saddle.energy).abs())
            .fold(0.0, f64::max)
    }
}

/// Trace the loop bounding `domain` (B1 or B2) with cutoff `|t| <= t_cut`.
pub fn trace_separatrix(
    sys: &SystemSpec,
    saddle: &SaddlePoint,
    domain: Domain,
    t_cut: Option<f64>,
    rtol: f64,
) -> Result<SeparatrixTrace> {
    let ham = sys.hamiltonian.as_ref();
    if ham.topology() != Topology::FigureEight {
        return Err(Error::NotFigureEight);
    }
    if !domain.is_inner() {
        return Err(Error::InvalidArgument(format!("{domain} is not bounded by a single loop")));
    }
    let z = saddle.z.as_slice();
    let nz = z.len();
    let mut zz = [0.0; MAX_Z_DIM];
    zz[..nz].copy_from_slice(z);
    let lam = saddle.lambda;
    let t_cut = t_cut.unwrap_or(40.0 / lam);
    let dt = 1.0 / (20.0 * lam);
    let (pc, qc) = ham.loop_center(domain, z).unwrap();
    let side = ham.section_side(domain);
    let toward = (pc - saddle.p, qc - saddle.q);
    let orient = |v: (f64, f64)| {
        if v.0 * toward.0 + v.1 * toward.1 >= 0.0 {
            v
        } else {
            (-v.0, -v.1)
        }
    };
    let vu = orient(saddle.unstable);
    let vs = orient(saddle.stable);
    let bx = &sys.domain_box;

    // integrate one half from the seed to the anchor; returns time to anchor
    let half = |v: (f64, f64), dir: f64| -> Result<f64> {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let (hp, hq) = ham.grad(y[0], y[1], &zz[..nz]);
            dy[0] = -hq;
            dy[1] = hp;
        };
        let y0 = [saddle.p + SEED_OFFSET * v.0, saddle.q + SEED_OFFSET * v.1];
        let mut ig = Dop853::new(f, 0.0, &y0, dir, Options::tol(rtol, rtol * 1e-3));
        let t_lim = dir * 20.0 * t_cut.max(40.0 / lam);
        let mut out = [0.0; 2];
        let mut g_prev = ig.y()[0] - pc;
        loop {
            ig.step(Some(t_lim))?;
            let y = ig.y();
            if !bx.contains(y[0], y[1], z) {
                return Err(Error::Escape(format!("loop of {domain} left the domain box")));
            }
            let g_now = y[0] - pc;
            if g_prev != 0.0 && g_prev.signum() != g_now.signum() && side * (y[1] - qc) > 0.0 {
                let t = ig.locate(|_, y| y[0] - pc, g_prev, g_now, 1e-15 * ig.t().abs(), &mut out);
                return Ok(t.abs());
            }
            g_prev = g_now;
            if ig.t() == t_lim {
                return Err(Error::Escape(format!("loop of {domain} did not reach the section")));
            }
        }
    };
    let t_out = half(vu, 1.0)?;
    let t_in = half(vs, -1.0)?;

    let kmax = (t_cut / dt).ceil() as i64;
    let n = (2 * kmax + 1) as usize;
    let t0 = -(kmax as f64) * dt;
    let mut ps = vec![0.0; n];
    let mut qs = vec![0.0; n];

    // sample one half on its node times (in anchor time) via dense output
    let mut fill = |v: (f64, f64), dir: f64, t_anchor: f64, idx: &mut dyn Iterator<Item = usize>| -> Result<(f64, f64)> {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let (hp, hq) = ham.grad(y[0], y[1], &zz[..nz]);
            dy[0] = -hq;
            dy[1] = hp;
        };
        let y0 = [saddle.p + SEED_OFFSET * v.0, saddle.q + SEED_OFFSET * v.1];
        // local time runs from 0 at the seed; anchor time = local - t_anchor * dir
        let mut ig = Dop853::new(f, 0.0, &y0, dir, Options::tol(rtol, rtol * 1e-3));
        let mut buf = [0.0; 2];
        for k in idx {
            let ta = t0 + k as f64 * dt;
            let local = ta + dir * t_anchor;
            if local * dir < 0.0 {
                let e = (-lam * local.abs()).exp() * SEED_OFFSET;
                ps[k] = saddle.p + e * v.0;
                qs[k] = saddle.q + e * v.1;
                continue;
            }
            while (ig.t() - local) * dir < 0.0 {
                ig.step(Some(dir * t_anchor))?;
            }
            ig.dense(local, &mut buf);
            ps[k] = buf[0];
            qs[k] = buf[1];
        }
        ig.advance_to(dir * t_anchor)?;
        Ok((ig.y()[0], ig.y()[1]))
    };
    let mid = kmax as usize;
    let a_out = fill(vu, 1.0, t_out, &mut (0..mid))?;
    let a_in = fill(vs, -1.0, t_in, &mut (mid + 1..n).rev())?;
    ps[mid] = a_out.0;
    qs[mid] = a_out.1;
    let anchor_gap = (a_out.0 - a_in.0).hypot(a_out.1 - a_in.1);
    Ok(SeparatrixTrace {
        domain,
        z: z.to_vec(),
        lambda: lam,
        dt,
        t0,
        p: ps,
        q: qs,
        anchor_gap,
        t_out,
        t_in,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::find_saddle;
    use crate::systems::{Preset, PresetParams};

    #[test]
    fn duffing_loop_matches_closed_form() {
        let sys = SystemSpec::duffing(Preset::Friction, PresetParams::default());
        let s = find_saddle(sys.hamiltonian.as_ref(), &[1.0], None).unwrap();
        let tr = trace_separatrix(&sys, &s, Domain::B2, None, 1e-12).unwrap();
        // q(t) = sqrt(2) sech(t) on the right loop
        let mut worst: f64 = 0.0;
        for k in 0..tr.len() {
            let t = tr.time(k);
            let q = 2f64.sqrt() / t.cosh();
            worst = worst.max((tr.q[k] - q).abs());
        }
        assert!(worst < 1e-8, "{worst}");
        assert!(tr.anchor_gap < 1e-8);
        let area = tr.area(&sys);
        assert!((area - 4.0 / 3.0).abs() < 1e-9, "{area}");
    }

    #[test]
    fn pendulum_has_no_figure_eight() {
        let sys = SystemSpec::pendulum(std::sync::Arc::new(crate::systems::PresetPerturbation {
            preset: Preset::Friction,
            params: PresetParams::default(),
        }));
        let s = find_saddle(sys.hamiltonian.as_ref(), &[], None).unwrap();
        assert_eq!(trace_separatrix(&sys, &s, Domain::B1, None, 1e-10).unwrap_err(), Error::NotFigureEight);
    }
}
