//! Integration of the full perturbed system and Monte Carlo experiments over
//! sets of initial data.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{integrate_averaged, AveragedOptions, AveragedTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{closed_orbit, find_saddle, section_point, trace_separatrix, OrbitChart, SaddlePoint, ORBIT_RTOL};
use crate::numerics::{brent, line_fit, LineFit};
use crate::ode::{Dop853, Options};
use crate::resonance::ResonanceZone;
use crate::stats::{median, wilson, Summary};
use crate::systems::{Domain, SystemSpec, MAX_Z_DIM};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Kinds of events recorded along a perturbed trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    HZeroCross,
    DomainEnter(Domain),
    ResonanceEnter(usize),
    ResonanceExit(usize),
    /// Downward crossing of a registered energy level.
    Level(usize),
    /// Crossing of the zero-phase section of B3.
    Section,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub lambda: f64,
    pub kind: EventKind,
    /// `(p, q, z...)` at the event.
    pub state: Vec<f64>,
    /// `h` at the event.
    pub h: f64,
}

/// A resonance zone watched through `omega(h, z)` in `domain`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneWatch {
    pub id: usize,
    pub domain: Domain,
    /// Frequency at the boundary met first.
    pub omega_enter: f64,
    pub omega_exit: f64,
}

/// Event and stopping configuration for [`integrate_perturbed`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Classification depth: stop once `h <= -h_stop` in B1 or B2.
    pub h_stop: f64,
    /// Slow-time horizon `Lambda`; runs stop after `lambda - lambda0 > Lambda / eps`.
    pub horizon: f64,
    /// Half-width of the near-saddle box.
    pub saddle_box: f64,
    /// Dwell (in units of `|ln eps|`) that flags a run as near-saddle.
    pub saddle_dwell: f64,
    pub zones: Vec<ZoneWatch>,
    /// Energy levels whose first downward crossing is recorded.
    pub levels: Vec<f64>,
    /// Record B3 section crossings.
    pub sections: bool,
    /// Keep every k-th accepted step in the track (0 disables the track).
    pub record_every: usize,
    /// Stop once every registered zone has been exited.
    pub stop_after_zones: bool,
    /// Stop when the last registered level has been crossed.
    pub stop_after_levels: bool,
    pub max_steps: usize,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_stop: 0.05,
            horizon: 40.0,
            saddle_box: 0.05,
            saddle_dwell: 100.0,
            zones: Vec::new(),
            levels: Vec::new(),
            sections: false,
            record_every: 1,
            stop_after_zones: false,
            stop_after_levels: false,
            max_steps: 50_000_000,
        }
    }
}

/// Columns of the recorded `(lambda, h, z, I)` track.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub lambda: Vec<f64>,
    pub h: Vec<f64>,
    /// Flattened, `z_dim` entries per point.
    pub z: Vec<f64>,
    /// Chart action (NaN where the chart does not cover the point).
    pub action: Vec<f64>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }
    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    /// Reached `h <= -h_stop` in an inner domain.
    Classified,
    /// Hit the slow-time horizon first.
    Horizon,
    /// Stopped on a requested event.
    Stopped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub x0: Vec<f64>,
    pub lambda0: f64,
    pub eps: f64,
    pub events: Vec<Event>,
    pub final_domain: Domain,
    pub final_state: Vec<f64>,
    pub lambda_end: f64,
    pub outcome: Outcome,
    pub near_saddle: bool,
    pub track: Track,
    pub steps: usize,
    pub seed_id: u64,
}

impl TrajectoryRecord {
    pub fn classified(&self) -> bool {
        self.outcome == Outcome::Classified
    }
    pub fn first(&self, kind: EventKind) -> Option<&Event> {
        self.events.iter().find(|e| e.kind == kind)
    }
}

struct SaddleCache {
    z: [f64; MAX_Z_DIM],
    nz: usize,
    saddle: SaddlePoint,
    fixed: bool,
}

impl SaddleCache {
    fn new(sys: &SystemSpec, z: &[f64]) -> Result<Self> {
        let saddle = find_saddle(sys.hamiltonian.as_ref(), z, None)?;
        let mut zz = [0.0; MAX_Z_DIM];
        zz[..z.len()].copy_from_slice(z);
        Ok(Self { z: zz, nz: z.len(), saddle, fixed: !sys.perturbation.drives_slow() })
    }

    fn update(&mut self, sys: &SystemSpec, z: &[f64]) -> Result<()> {
        if self.fixed || z == &self.z[..self.nz] {
            return Ok(());
        }
        let guess = (self.saddle.p, self.saddle.q);
        self.saddle = find_saddle(sys.hamiltonian.as_ref(), z, Some(guess))?;
        self.z[..self.nz].copy_from_slice(z);
        Ok(())
    }

    /// Critical energy at `z`, reusing the cached saddle when `z` is frozen.
    fn energy_at(&self, sys: &SystemSpec, z: &[f64]) -> f64 {
        if self.fixed || z == &self.z[..self.nz] {
            return self.saddle.energy;
        }
        find_saddle(sys.hamiltonian.as_ref(), z, Some((self.saddle.p, self.saddle.q)))
            .map(|s| s.energy)
            .unwrap_or(f64::NAN)
    }
}

fn dwell_limit(cfg: &EventConfig, eps: f64) -> f64 {
    cfg.saddle_dwell * eps.ln().abs()
}

/// Integrate `dp = -H_q + eps f_p`, `dq = H_p + eps f_q`, `dz = eps f_z`
/// with `dlambda = 1` from `x0 = (p0, q0, z0...)` at `lambda0`.
pub fn integrate_perturbed(
    sys: &SystemSpec,
    x0: &[f64],
    lambda0: f64,
    eps: f64,
    cfg: &EventConfig,
    chart: Option<&OrbitChart>,
) -> Result<TrajectoryRecord> {
    let ham = sys.hamiltonian.as_ref();
    let pert = sys.perturbation.as_ref();
    let nz = sys.z_dim();
    if x0.len() != 2 + nz {
        return Err(Error::InvalidArgument(format!("state needs {} entries, got {}", 2 + nz, x0.len())));
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps}")));
    }
    sys.check_state(x0[0], x0[1], &x0[2..]).map_err(|e| match e {
        Error::OutOfDomain(m) => Error::LeftDomainBox(m),
        e => e,
    })?;
    if !cfg.zones.is_empty() && chart.is_none() {
        return Err(Error::MissingDependency("zone events need an orbit chart".into()));
    }
    let rhs = |lam: f64, y: &[f64], dy: &mut [f64]| {
        let (p, q) = (y[0], y[1]);
        let z = &y[2..];
        let (hp, hq) = ham.grad(p, q, z);
        let mut fz = [0.0; MAX_Z_DIM];
        let (fp, fq) = if eps != 0.0 { pert.eval(p, q, z, lam, eps, &mut fz[..nz]) } else { (0.0, 0.0) };
        dy[0] = -hq + eps * fp;
        dy[1] = hp + eps * fq;
        for k in 0..nz {
            dy[2 + k] = eps * fz[k];
        }
    };
    let lambda_end = if eps > 0.0 { lambda0 + cfg.horizon / eps } else { lambda0 + cfg.horizon };
    let opts = Options { rtol: cfg.rtol, atol: cfg.atol, h_max: f64::INFINITY, h0: None, max_steps: cfg.max_steps };
    let mut ig = Dop853::new(rhs, lambda0, x0, 1.0, opts);
    let mut cache = SaddleCache::new(sys, &x0[2..])?;
    let hval = |cache: &SaddleCache, y: &[f64]| ham.energy(y[0], y[1], &y[2..]) - cache.energy_at(sys, &y[2..]);

    let mut rec = TrajectoryRecord {
        x0: x0.to_vec(),
        lambda0,
        eps,
        events: Vec::new(),
        final_domain: Domain::B3,
        final_state: x0.to_vec(),
        lambda_end: lambda0,
        outcome: Outcome::Horizon,
        near_saddle: false,
        track: Track::default(),
        steps: 0,
        seed_id: 0,
    };
    let action_of = |dom: Domain, h: f64, z: &[f64]| match (chart, dom) {
        (Some(c), d) if d != Domain::Separatrix => c.action(d, h, z).unwrap_or(f64::NAN),
        _ => f64::NAN,
    };
    let omega_of = |dom: Domain, h: f64, z: &[f64]| match chart {
        Some(c) if dom != Domain::Separatrix => c.omega(dom, h, z).unwrap_or(f64::NAN),
        _ => f64::NAN,
    };
    let push_track = |rec: &mut TrajectoryRecord, lam: f64, h: f64, y: &[f64], dom: Domain| {
        rec.track.lambda.push(lam);
        rec.track.h.push(h);
        rec.track.z.extend_from_slice(&y[2..]);
        rec.track.action.push(action_of(dom, h, &y[2..]));
    };

    let mut h_prev = hval(&cache, x0);
    let side_domain = |y: &[f64], h: f64| ham.classify(y[0], y[1], &y[2..], h);
    let mut dom = side_domain(x0, h_prev);
    if dom == Domain::Separatrix {
        return Err(Error::TooCloseToSeparatrix { h: h_prev, floor: 0.0 });
    }
    // zone state: 0 = before, 1 = inside, 2 = exited
    let mut zone_state = vec![0u8; cfg.zones.len()];
    let mut zone_g_prev: Vec<f64> = cfg
        .zones
        .iter()
        .map(|zw| if zw.domain == dom { omega_of(dom, h_prev, &x0[2..]) } else { f64::NAN })
        .collect();
    let mut level_done = vec![false; cfg.levels.len()];
    // B3 section geometry
    let section = if cfg.sections {
        ham.loop_center(Domain::B3, &x0[2..]).map(|(pc, qc)| {
            let side = ham.section_side(Domain::B3);
            let d0 = section_point(ham, &cache.saddle, Domain::B3, h_prev.max(1e-6), &x0[2..])
                .map(|(p, q)| if -ham.grad(p, q, &x0[2..]).1 >= 0.0 { 1.0 } else { -1.0 })
                .unwrap_or(1.0);
            (pc, qc, side, d0)
        })
    } else {
        None
    };
    let dwell_max = dwell_limit(cfg, eps);
    let mut dwell_start: Option<f64> = None;
    let in_saddle_box = |cache: &SaddleCache, y: &[f64]| {
        (y[0] - cache.saddle.p).abs() < cfg.saddle_box && (y[1] - cache.saddle.q).abs() < cfg.saddle_box
    };
    if in_saddle_box(&cache, x0) {
        dwell_start = Some(lambda0);
    }
    if cfg.record_every > 0 {
        push_track(&mut rec, lambda0, h_prev, x0, dom);
    }
    let mut y_prev = x0.to_vec();
    let mut out = vec![0.0; 2 + nz];
    let t_tol = |t: f64| 1e-13 * t.abs().max(1.0);

    loop {
        ig.step(Some(lambda_end))?;
        let lam = ig.t();
        let y = ig.y().to_vec();
        if !sys.domain_box.contains(y[0], y[1], &y[2..]) || y.iter().any(|v| !v.is_finite()) {
            rec.final_state = y.clone();
            rec.lambda_end = lam;
            return Err(Error::LeftDomainBox(format!("at lambda = {lam}: p={}, q={}", y[0], y[1])));
        }
        cache.update(sys, &y[2..])?;
        let h = hval(&cache, &y);
        // section crossings (B3 only)
        if let Some((pc, qc, side, d0)) = section {
            let g0 = d0 * (y_prev[0] - pc);
            let g1 = d0 * (y[0] - pc);
            if dom == Domain::B3 && g0 < 0.0 && g1 >= 0.0 && side * (y[1] - qc) > 0.0 {
                let te = ig.locate(|_, s| d0 * (s[0] - pc), g0, g1, t_tol(lam), &mut out);
                let he = hval(&cache, &out);
                rec.events.push(Event { lambda: te, kind: EventKind::Section, state: out.clone(), h: he });
            }
        }
        // separatrix crossing
        if (h_prev > 0.0) != (h > 0.0) {
            let te = ig.locate(|_, s| hval(&cache, s), h_prev, h, t_tol(lam), &mut out);
            let he = hval(&cache, &out);
            rec.events.push(Event { lambda: te, kind: EventKind::HZeroCross, state: out.clone(), h: he });
        }
        let new_dom = side_domain(&y, h);
        if new_dom != Domain::Separatrix && new_dom != dom {
            rec.events.push(Event { lambda: lam, kind: EventKind::DomainEnter(new_dom), state: y.clone(), h });
            dom = new_dom;
            for (k, zw) in cfg.zones.iter().enumerate() {
                zone_g_prev[k] = if zw.domain == dom { omega_of(dom, h, &y[2..]) } else { f64::NAN };
            }
        }
        // energy levels, first downward crossing each
        for (k, &lv) in cfg.levels.iter().enumerate() {
            if !level_done[k] && h_prev > lv && h <= lv {
                let te = ig.locate(|_, s| hval(&cache, s) - lv, h_prev - lv, h - lv, t_tol(lam), &mut out);
                let he = hval(&cache, &out);
                rec.events.push(Event { lambda: te, kind: EventKind::Level(k), state: out.clone(), h: he });
                level_done[k] = true;
            }
        }
        // resonance zones
        for (k, zw) in cfg.zones.iter().enumerate() {
            if zw.domain != dom || zone_state[k] == 2 {
                continue;
            }
            let w = omega_of(dom, h, &y[2..]);
            let w_prev = zone_g_prev[k];
            zone_g_prev[k] = w;
            if !w.is_finite() || !w_prev.is_finite() {
                continue;
            }
            let (target, kind) = if zone_state[k] == 0 {
                (zw.omega_enter, EventKind::ResonanceEnter(zw.id))
            } else {
                (zw.omega_exit, EventKind::ResonanceExit(zw.id))
            };
            let crossed = (w_prev - target).signum() != (w - target).signum() && w_prev != target;
            if crossed {
                let c = chart.unwrap();
                let te = ig.locate(
                    |_, s| {
                        let hs = hval(&cache, s);
                        c.omega(dom, hs, &s[2..]).unwrap_or(f64::NAN) - target
                    },
                    w_prev - target,
                    w - target,
                    t_tol(lam),
                    &mut out,
                );
                let he = hval(&cache, &out);
                rec.events.push(Event { lambda: te, kind, state: out.clone(), h: he });
                zone_state[k] += 1;
                // a zone may be crossed entirely within one step
                if zone_state[k] == 1 && (w - zw.omega_exit).signum() != (w_prev - zw.omega_exit).signum() {
                    rec.events.push(Event {
                        lambda: lam,
                        kind: EventKind::ResonanceExit(zw.id),
                        state: y.clone(),
                        h,
                    });
                    zone_state[k] = 2;
                }
            }
        }
        // near-saddle dwell
        if in_saddle_box(&cache, &y) {
            let start = *dwell_start.get_or_insert(ig.t_prev());
            if lam - start > dwell_max {
                rec.near_saddle = true;
            }
        } else {
            dwell_start = None;
        }
        if cfg.record_every > 0 && ig.steps() % cfg.record_every == 0 {
            push_track(&mut rec, lam, h, &y, dom);
        }
        h_prev = h;
        y_prev.copy_from_slice(&y);
        let classified = dom.is_inner() && h <= -cfg.h_stop;
        let zones_done = cfg.stop_after_zones && !zone_state.is_empty() && zone_state.iter().all(|&s| s == 2);
        let levels_done = cfg.stop_after_levels && level_done.last().copied().unwrap_or(false);
        if classified || zones_done || levels_done || lam >= lambda_end {
            rec.outcome = if classified {
                Outcome::Classified
            } else if zones_done || levels_done {
                Outcome::Stopped
            } else {
                Outcome::Horizon
            };
            rec.final_domain = if dom == Domain::Separatrix { Domain::B3 } else { dom };
            rec.final_state = y;
            rec.lambda_end = lam;
            rec.steps = ig.steps();
            rec.events.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
            return Ok(rec);
        }
    }
}

/// Which half of the `lambda` window to sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    Both,
    Lower,
    Upper,
}

/// Box `U` in `(I, z, phi, lambda)` around a center in B3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSet {
    pub domain: Domain,
    pub action: f64,
    pub z: Vec<f64>,
    pub phase: f64,
    pub lambda: f64,
    pub delta_action: f64,
    pub delta_z: f64,
    pub delta_phase: f64,
    pub delta_lambda: f64,
    pub lambda_half: Half,
}

impl InitialSet {
    /// Box of half-width `delta` in every coordinate around `(I, z, 0, 0)` in B3.
    pub fn centered(action: f64, z: Vec<f64>, delta: f64) -> Self {
        Self {
            domain: Domain::B3,
            action,
            z,
            phase: 0.0,
            lambda: 0.0,
            delta_action: delta,
            delta_z: delta,
            delta_phase: delta,
            delta_lambda: delta,
            lambda_half: Half::Both,
        }
    }

    /// Center at energy offset `h` instead of action.
    pub fn at_energy(sys: &SystemSpec, h: f64, z: Vec<f64>, delta: f64) -> Result<Self> {
        let saddle = find_saddle(sys.hamiltonian.as_ref(), &z, None)?;
        let o = closed_orbit(sys.hamiltonian.as_ref(), &saddle, Domain::B3, h, &z, ORBIT_RTOL)?;
        Ok(Self::centered(o.action, z, delta))
    }
}

/// Energy offset of the orbit with action `action` in `domain`.
pub fn h_for_action(sys: &SystemSpec, chart: &OrbitChart, domain: Domain, action: f64, z: &[f64]) -> Result<f64> {
    let ham = sys.hamiltonian.as_ref();
    let saddle = find_saddle(ham, z, None)?;
    let mut h = chart.h_for_action(domain, action, z)?;
    for _ in 0..8 {
        let o = closed_orbit(ham, &saddle, domain, h, z, ORBIT_RTOL)?;
        let d = o.action - action;
        if d.abs() <= 1e-14 * action.abs().max(1e-3) {
            break;
        }
        h -= d * TWO_PI / o.period;
    }
    Ok(h)
}

/// Point `(p, q)` with action `I` and phase `phi` (time from the section times `omega`).
pub fn point_from_action_angle(
    sys: &SystemSpec,
    chart: &OrbitChart,
    domain: Domain,
    action: f64,
    phase: f64,
    z: &[f64],
) -> Result<(f64, f64)> {
    let ham = sys.hamiltonian.as_ref();
    let h = h_for_action(sys, chart, domain, action, z)?;
    let saddle = find_saddle(ham, z, None)?;
    let o = closed_orbit(ham, &saddle, domain, h, z, ORBIT_RTOL)?;
    o.point_at(ham, phase.rem_euclid(TWO_PI) / TWO_PI * o.period)
}

/// Per-trajectory generator from `(seed, index)`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw `(I, z, phi, lambda)` uniformly in the set and map to `(p, q, z)`.
pub fn sample_initial<R: Rng>(sys: &SystemSpec, chart: &OrbitChart, set: &InitialSet, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    let mut u = |c: f64, d: f64| if d > 0.0 { c + d * (2.0 * rng.random::<f64>() - 1.0) } else { c };
    let action = u(set.action, set.delta_action);
    let z: Vec<f64> = set.z.iter().map(|&v| u(v, set.delta_z)).collect();
    let phase = u(set.phase, set.delta_phase);
    let w = set.delta_lambda;
    let lambda = match set.lambda_half {
        Half::Both => u(set.lambda, w),
        Half::Lower => u(set.lambda - 0.5 * w, 0.5 * w),
        Half::Upper => u(set.lambda + 0.5 * w, 0.5 * w),
    };
    let (p, q) = point_from_action_angle(sys, chart, set.domain, action, phase, &z)?;
    let mut x = vec![p, q];
    x.extend_from_slice(&z);
    Ok((x, lambda))
}

/// Compact per-run result kept by the experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: u64,
    pub x0: Vec<f64>,
    pub lambda0: f64,
    pub final_domain: Domain,
    pub classified: bool,
    pub near_saddle: bool,
    pub lambda_end: f64,
    pub steps: usize,
    pub error: Option<String>,
    /// `sup |h - hbar|` and `sup |z - zbar|` on the track, when paired.
    pub sup_dh: Option<f64>,
    pub sup_dz: Option<f64>,
    /// Realized branch differs from the set majority.
    pub minority_branch: bool,
}

impl RunSummary {
    pub fn excluded(&self) -> bool {
        !self.classified || self.near_saddle
    }
}

/// Ensemble-level capture statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureStats {
    pub eps: f64,
    pub n: usize,
    /// Classified counts in `[B1, B2]`.
    pub counts: [usize; 2],
    pub unclassified: usize,
    pub fractions: [f64; 2],
    pub unclassified_fraction: f64,
    /// 95% Wilson intervals for the two fractions.
    pub intervals: [(f64, f64); 2],
    pub near_saddle: usize,
    pub excluded: usize,
    /// `Theta_i(z*) / Theta_3(z*)`.
    pub predicted: [f64; 2],
    pub z_star: Vec<f64>,
    pub theta: [f64; 3],
    pub minority_branch: usize,
    pub sup_dh: Option<Summary>,
    pub sup_dz: Option<Summary>,
    pub runs: Vec<RunSummary>,
}

impl CaptureStats {
    /// `|P1_hat - P1| / sigma` with the binomial sigma of the prediction.
    pub fn z_score(&self, i: usize) -> f64 {
        let p = self.predicted[i];
        let sigma = (p * (1.0 - p) / self.n as f64).sqrt();
        (self.fractions[i] - p).abs() / sigma
    }
}

fn set_center(sys: &SystemSpec, chart: &OrbitChart, set: &InitialSet) -> Result<f64> {
    h_for_action(sys, chart, set.domain, set.action, &set.z)
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::ConfigInvalid("ensemble size N must be positive".into()));
    }
    if n < 100 {
        warn!("ensemble size {n} is below 100");
    }
    Ok(())
}

fn precondition_h0(h0: f64, eps: f64) {
    let need = 10.0 * eps * eps.ln().abs().powi(5);
    if h0 < need {
        debug!("initial offset h0 = {h0} below 10 eps |ln eps|^5 = {need:.3e}");
    }
}

fn run_one(
    sys: &SystemSpec,
    chart: &OrbitChart,
    set: &InitialSet,
    eps: f64,
    seed: u64,
    index: u64,
    cfg: &EventConfig,
) -> (RunSummary, Option<TrajectoryRecord>) {
    let mut rng = trajectory_rng(seed, index);
    let mut summary = RunSummary {
        index,
        x0: Vec::new(),
        lambda0: 0.0,
        final_domain: Domain::B3,
        classified: false,
        near_saddle: false,
        lambda_end: 0.0,
        steps: 0,
        error: None,
        sup_dh: None,
        sup_dz: None,
        minority_branch: false,
    };
    let (x0, lam0) = match sample_initial(sys, chart, set, &mut rng) {
        Ok(v) => v,
        Err(e) => {
            summary.error = Some(e.to_string());
            return (summary, None);
        }
    };
    summary.x0 = x0.clone();
    summary.lambda0 = lam0;
    match integrate_perturbed(sys, &x0, lam0, eps, cfg, Some(chart)) {
        Ok(mut rec) => {
            rec.seed_id = index;
            summary.final_domain = rec.final_domain;
            summary.classified = rec.classified();
            summary.near_saddle = rec.near_saddle;
            summary.lambda_end = rec.lambda_end;
            summary.steps = rec.steps;
            (summary, Some(rec))
        }
        Err(e) => {
            summary.error = Some(e.to_string());
            (summary, None)
        }
    }
}

fn tally(eps: f64, runs: Vec<RunSummary>, predicted: [f64; 2], z_star: Vec<f64>, theta: [f64; 3]) -> Result<CaptureStats> {
    let n = runs.len();
    let mut counts = [0usize; 2];
    let mut near = 0;
    let mut excluded = 0;
    for r in &runs {
        if r.classified {
            match r.final_domain {
                Domain::B1 => counts[0] += 1,
                Domain::B2 => counts[1] += 1,
                _ => {}
            }
        }
        near += r.near_saddle as usize;
        excluded += r.excluded() as usize;
    }
    let unclassified = n - counts[0] - counts[1];
    let majority = if counts[0] >= counts[1] { Domain::B1 } else { Domain::B2 };
    let mut runs = runs;
    let mut minority = 0;
    for r in runs.iter_mut() {
        r.minority_branch = r.classified && r.final_domain != majority;
        minority += r.minority_branch as usize;
    }
    let nf = n as f64;
    let sups = |f: fn(&RunSummary) -> Option<f64>| {
        let v: Vec<f64> = runs.iter().filter(|r| !r.excluded()).filter_map(f).collect();
        if v.is_empty() {
            None
        } else {
            Some(Summary::of(&v))
        }
    };
    let stats = CaptureStats {
        eps,
        n,
        counts,
        unclassified,
        fractions: [counts[0] as f64 / nf, counts[1] as f64 / nf],
        unclassified_fraction: unclassified as f64 / nf,
        intervals: [wilson(counts[0], n, 1.96), wilson(counts[1], n, 1.96)],
        near_saddle: near,
        excluded,
        predicted,
        z_star,
        theta,
        minority_branch: minority,
        sup_dh: sups(|r| r.sup_dh),
        sup_dz: sups(|r| r.sup_dz),
        runs,
    };
    Ok(stats)
}

fn check_unclassified(stats: CaptureStats) -> Result<CaptureStats> {
    if stats.unclassified * 20 > stats.n {
        return Err(Error::TooManyUnclassified { unclassified: stats.unclassified, n: stats.n });
    }
    Ok(stats)
}

/// Monte Carlo estimate of the capture fractions for initial data in `set`,
/// compared against `Theta_i(z*) / Theta_3(z*)` with `z*` taken from the
/// averaged trajectory of the set center.
pub fn run_capture_experiment(
    sys: &SystemSpec,
    chart: &OrbitChart,
    set: &InitialSet,
    eps: f64,
    n: usize,
    seed: u64,
    cfg: &EventConfig,
) -> Result<CaptureStats> {
    check_n(n)?;
    let h0 = set_center(sys, chart, set)?;
    precondition_h0(h0, eps);
    let lam_end = set.lambda + cfg.horizon / eps;
    let avg = integrate_averaged(sys, h0, &set.z, set.lambda, lam_end, eps, None, &AveragedOptions::default())?;
    let crossing = avg
        .crossing
        .ok_or_else(|| Error::ZoneNotCrossed("averaged trajectory of the set center does not reach the separatrix".into()))?;
    let [t1, t2, t3] = crossing.theta.theta;
    let cfg_run = EventConfig { record_every: 0, ..cfg.clone() };
    let runs: Vec<RunSummary> =
        (0..n as u64).into_par_iter().map(|i| run_one(sys, chart, set, eps, seed, i, &cfg_run).0).collect();
    check_unclassified(tally(eps, runs, [t1 / t3, t2 / t3], crossing.z_star, crossing.theta.theta)?)
}

/// Averaged solutions for runs with frozen slow variables, obtained by
/// shifting one master solution per branch in `lambda`.
struct MasterPair {
    branches: [AveragedTrajectory; 2],
}

impl MasterPair {
    fn build(sys: &SystemSpec, h_top: f64, z: &[f64], eps: f64, h_stop: f64) -> Result<Self> {
        let opts = AveragedOptions { stop_h: Some(-1.5 * h_stop), ..AveragedOptions::default() };
        let far = 1e3 / eps;
        let b1 = integrate_averaged(sys, h_top, z, 0.0, far, eps, Some(Domain::B1), &opts)?;
        let b2 = integrate_averaged(sys, h_top, z, 0.0, far, eps, Some(Domain::B2), &opts)?;
        for b in [&b1, &b2] {
            if b.crossing.is_none() || b.outer.windows(2).any(|w| w[1].h > w[0].h) {
                return Err(Error::ZoneNotCrossed("averaged energy is not decreasing to the separatrix".into()));
            }
        }
        Ok(Self { branches: [b1, b2] })
    }

    /// Master time at which the averaged energy equals `h0 > 0`.
    fn lambda_of(&self, h0: f64) -> Result<f64> {
        let m = &self.branches[0];
        let nodes = &m.outer;
        if h0 > nodes[0].h || h0 < nodes[nodes.len() - 1].h {
            return Err(Error::InvalidArgument(format!("h0 = {h0} outside the master trajectory")));
        }
        brent(|l| m.h_at(l).map(|h| h - h0).unwrap_or(f64::NAN), nodes[0].lambda, nodes[nodes.len() - 1].lambda, 1e-12, 200)
    }

    fn get(&self, d: Domain) -> &AveragedTrajectory {
        &self.branches[if d == Domain::B1 { 0 } else { 1 }]
    }
}

/// `sup |h - hbar|` and `sup |z - zbar|` over the track, with `hbar, zbar` given by `avg`
/// evaluated at `lambda + shift`.
fn track_deviation(rec: &TrajectoryRecord, avg: &AveragedTrajectory, shift: f64) -> (f64, f64) {
    let nz = if rec.track.is_empty() { 0 } else { rec.track.z.len() / rec.track.len() };
    let end = avg.lambda_end();
    let mut sh = 0.0f64;
    let mut sz = 0.0f64;
    for k in 0..rec.track.len() {
        let l = rec.track.lambda[k] + shift;
        if l > end {
            break;
        }
        if let Ok((hb, zb)) = avg.state_at(l) {
            sh = sh.max((rec.track.h[k] - hb).abs());
            let dz: f64 = (0..nz).map(|i| (rec.track.z[k * nz + i] - zb[i]).powi(2)).sum::<f64>().sqrt();
            sz = sz.max(dz);
        }
    }
    (sh, sz)
}

/// One row of an accuracy-scaling study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub eps: f64,
    pub n: usize,
    pub used: usize,
    pub excluded: usize,
    pub median_sup_dh: f64,
    pub median_sup_dz: f64,
    pub summary_dh: Option<Summary>,
    pub fractions: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Fit of `ln median sup |h - hbar|` against `ln eps`.
    pub fit: LineFit,
}

/// Paired deviations between perturbed runs and the averaged solutions from
/// their own initial slow points, following each run's realized branch.
pub fn paired_deviations(
    sys: &SystemSpec,
    chart: &OrbitChart,
    set: &InitialSet,
    eps: f64,
    n: usize,
    seed: u64,
    cfg: &EventConfig,
) -> Result<CaptureStats> {
    check_n(n)?;
    let ham = sys.hamiltonian.as_ref();
    let cfg_run = EventConfig { record_every: cfg.record_every.max(1), ..cfg.clone() };
    let hc = set_center(sys, chart, set)?;
    precondition_h0(hc, eps);
    let frozen = !sys.perturbation.drives_slow();
    // initial points first, so that the master covers all of them
    let inits: Vec<Result<(Vec<f64>, f64)>> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_initial(sys, chart, set, &mut trajectory_rng(seed, i)))
        .collect();
    let h_of = |x: &[f64]| -> Result<f64> { Ok(ham.energy(x[0], x[1], &x[2..]) - find_saddle(ham, &x[2..], None)?.energy) };
    let master = if frozen {
        let mut h_top = hc;
        for (x, _) in inits.iter().flatten() {
            h_top = h_top.max(h_of(x)?);
        }
        Some(MasterPair::build(sys, h_top * (1.0 + 1e-9), &set.z, eps, cfg.h_stop)?)
    } else {
        None
    };
    let center =
        integrate_averaged(sys, hc, &set.z, set.lambda, set.lambda + cfg.horizon / eps, eps, None, &AveragedOptions::default())?;
    let crossing = center.crossing.ok_or_else(|| Error::ZoneNotCrossed("set center does not reach the separatrix".into()))?;
    let [t1, t2, t3] = crossing.theta.theta;

    let runs: Vec<RunSummary> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (mut s, rec) = run_one(sys, chart, set, eps, seed, i, &cfg_run);
            let Some(rec) = rec else { return s };
            if !rec.classified() {
                return s;
            }
            let x0 = &rec.x0;
            let dev = (|| -> Result<(f64, f64)> {
                let h0 = h_of(x0)?;
                match &master {
                    Some(m) => {
                        let shift = m.lambda_of(h0)? - rec.lambda0;
                        Ok(track_deviation(&rec, m.get(rec.final_domain), shift))
                    }
                    None => {
                        let opts = AveragedOptions { stop_h: Some(-1.5 * cfg.h_stop), ..AveragedOptions::default() };
                        let avg = integrate_averaged(
                            sys,
                            h0,
                            &x0[2..],
                            rec.lambda0,
                            rec.lambda0 + 1e3 / eps,
                            eps,
                            Some(rec.final_domain),
                            &opts,
                        )?;
                        Ok(track_deviation(&rec, &avg, 0.0))
                    }
                }
            })();
            match dev {
                Ok((dh, dz)) => {
                    s.sup_dh = Some(dh);
                    s.sup_dz = Some(dz);
                }
                Err(e) => s.error = Some(e.to_string()),
            }
            s
        })
        .collect();
    let _ = inits;
    tally(eps, runs, [t1 / t3, t2 / t3], crossing.z_star, crossing.theta.theta)
}

/// Median `sup |h - hbar|` over non-excluded runs for each `eps`, with a
/// log-log regression.
pub fn accuracy_scaling(
    sys: &SystemSpec,
    chart: &OrbitChart,
    set: &InitialSet,
    eps_list: &[f64],
    n: usize,
    seed: u64,
    cfg: &EventConfig,
) -> Result<ScalingReport> {
    if eps_list.len() < 2 {
        return Err(Error::InvalidArgument("accuracy scaling needs at least two eps values".into()));
    }
    let lo = eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eps_list.iter().cloned().fold(0.0, f64::max);
    if hi / lo < 99.0 {
        warn!("eps list spans less than two decades");
    }
    let mut points = Vec::new();
    for (j, &eps) in eps_list.iter().enumerate() {
        let st = paired_deviations(sys, chart, set, eps, n, seed.wrapping_add(j as u64), cfg)?;
        let dh: Vec<f64> = st.runs.iter().filter(|r| !r.excluded()).filter_map(|r| r.sup_dh).collect();
        let dz: Vec<f64> = st.runs.iter().filter(|r| !r.excluded()).filter_map(|r| r.sup_dz).collect();
        points.push(ScalingPoint {
            eps,
            n,
            used: dh.len(),
            excluded: st.excluded,
            median_sup_dh: median(&dh),
            median_sup_dz: median(&dz),
            summary_dh: st.sup_dh,
            fractions: st.fractions,
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.eps.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.median_sup_dh.ln()).collect();
    Ok(ScalingReport { fit: line_fit(&x, &y)?, points })
}

/// Loop areas `(S_1, S_2)` enclosed by the separatrix at `z`.
pub fn loop_areas(sys: &SystemSpec, z: &[f64]) -> Result<(f64, f64)> {
    let saddle = find_saddle(sys.hamiltonian.as_ref(), z, None)?;
    let a1 = trace_separatrix(sys, &saddle, Domain::B1, None, 1e-12)?.area(sys);
    let a2 = trace_separatrix(sys, &saddle, Domain::B2, None, 1e-12)?.area(sys);
    Ok((a1, a2))
}

/// Adiabatic prediction of the action after crossing into `branch`: the
/// outer action `i_plus` measured at `z_plus` is conserved until the
/// separatrix area reaches `2 pi i_plus` along the drive, and the inner action
/// is the area of the captured loop at that moment.
pub fn adiabatic_action_after(sys: &SystemSpec, z_plus: &[f64], i_plus: f64, branch: Domain) -> Result<(f64, Vec<f64>)> {
    let pert = sys.perturbation.as_ref();
    let nz = z_plus.len();
    let mut fz = vec![0.0; nz];
    pert.eval(0.0, 0.0, z_plus, 0.0, 1.0, &mut fz);
    let norm = fz.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("adiabatic jump needs a slow drive".into()));
    }
    let zs = |s: f64| -> Vec<f64> { (0..nz).map(|k| z_plus[k] + s * fz[k] / norm).collect() };
    let g = |s: f64| loop_areas(sys, &zs(s)).map(|(a, b)| a + b - TWO_PI * i_plus).unwrap_or(f64::NAN);
    let g0 = g(0.0);
    if !(g0 < 0.0) {
        return Err(Error::InvalidArgument("outer orbit already inside the separatrix area".into()));
    }
    let mut hi = 0.1;
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::ZoneNotCrossed("separatrix area never reaches the outer action".into()));
        }
    }
    let s = brent(g, 0.0, hi, 1e-13, 200)?;
    let z_star = zs(s);
    let (a1, a2) = loop_areas(sys, &z_star)?;
    let area = if branch == Domain::B1 { a1 } else { a2 };
    Ok((area / TWO_PI, z_star))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpPoint {
    pub eps: f64,
    pub n: usize,
    pub used: usize,
    pub median_abs: f64,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpReport {
    pub h_ref: f64,
    pub points: Vec<JumpPoint>,
    /// Fit of `ln median |dI|` against `ln eps`.
    pub fit: LineFit,
}

/// `dI = I_after - I_pred` for one ensemble at `eps`. `I` is measured where
/// the run first crosses `h = +h_ref` and `h = -h_ref`.
pub fn action_jumps(
    sys: &SystemSpec,
    chart: &OrbitChart,
    set: &InitialSet,
    eps: f64,
    n: usize,
    seed: u64,
    h_ref: f64,
    cfg: &EventConfig,
) -> Result<Vec<f64>> {
    check_n(n)?;
    if !sys.perturbation.drives_slow() {
        return Err(Error::InvalidArgument("adiabatic jumps need a slow drive".into()));
    }
    let ham = sys.hamiltonian.as_ref();
    let cfg_run = EventConfig {
        levels: vec![h_ref, -h_ref],
        stop_after_levels: true,
        h_stop: cfg.h_stop.max(1.2 * h_ref),
        record_every: 0,
        ..cfg.clone()
    };
    let out: Vec<Option<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (_, rec) = run_one(sys, chart, set, eps, seed, i, &cfg_run);
            let rec = rec?;
            let before = rec.first(EventKind::Level(0))?;
            let after = rec.first(EventKind::Level(1))?;
            let branch = ham.classify(after.state[0], after.state[1], &after.state[2..], after.h);
            if !branch.is_inner() || rec.near_saddle {
                return None;
            }
            let act = |d: Domain, e: &Event| -> Result<f64> {
                let z = &e.state[2..];
                let s = find_saddle(ham, z, None)?;
                Ok(closed_orbit(ham, &s, d, e.h, z, ORBIT_RTOL)?.action)
            };
            let i_plus = act(Domain::B3, before).ok()?;
            let i_after = act(branch, after).ok()?;
            // predicted inner action, carried from z* to the measurement point unchanged
            let (i_pred, _) = adiabatic_action_after(sys, &before.state[2..], i_plus, branch).ok()?;
            Some(i_after - i_pred)
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Distribution of action jumps across the separatrix for each `eps`.
#[allow(clippy::too_many_arguments)]
pub fn adiabatic_jump(
    sys: &SystemSpec,
    chart: &OrbitChart,
    set: &InitialSet,
    eps_list: &[f64],
    n: usize,
    seed: u64,
    h_ref: f64,
    cfg: &EventConfig,
) -> Result<JumpReport> {
    let mut points = Vec::new();
    for (j, &eps) in eps_list.iter().enumerate() {
        let d = action_jumps(sys, chart, set, eps, n, seed.wrapping_add(j as u64), h_ref, cfg)?;
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        if abs.is_empty() {
            return Err(Error::TooManyUnclassified { unclassified: n, n });
        }
        points.push(JumpPoint { eps, n, used: abs.len(), median_abs: median(&abs), summary: Summary::of(&d) });
    }
    let x: Vec<f64> = points.iter().map(|p| p.eps.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.median_abs.ln()).collect();
    Ok(JumpReport { h_ref, fit: line_fit(&x, &y)?, points })
}

/// Action changes across one resonance zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterStats {
    pub eps: f64,
    pub n: usize,
    pub zone: ResonanceZone,
    /// `dI` between the first section crossings after entry and after exit,
    /// relative to the averaged prediction.
    pub jumps: Vec<f64>,
    pub median_abs: f64,
    pub iqr: f64,
    pub std: f64,
    pub captured: usize,
    pub failed: usize,
}

/// Seed runs just above `zone` and measure the action change across it.
pub fn resonance_scattering(
    sys: &SystemSpec,
    chart: &OrbitChart,
    zone: &ResonanceZone,
    eps: f64,
    n: usize,
    seed: u64,
    cfg: &EventConfig,
) -> Result<ScatterStats> {
    check_n(n)?;
    let ham = sys.hamiltonian.as_ref();
    let z = zone.z.clone();
    let dom = zone.domain;
    if dom != Domain::B3 {
        return Err(Error::InvalidArgument("scattering is measured on B3 zones".into()));
    }
    let (h_exit, h_enter) = zone.outer_h;
    if h_exit <= 0.0 {
        return Err(Error::ZoneNotCrossed("zone touches the separatrix".into()));
    }
    let w_enter = chart.omega(dom, h_enter, &z)?;
    let w_exit = chart.omega(dom, h_exit, &z)?;
    // start a little above the outer edge
    let h_seed = h_enter + 0.25 * (h_enter - h_exit);
    let saddle = find_saddle(ham, &z, None)?;
    let i_seed = closed_orbit(ham, &saddle, dom, h_seed, &z, ORBIT_RTOL)?.action;
    // averaged drift through the zone
    let opts = AveragedOptions { stop_h: None, ..AveragedOptions::default() };
    let master = integrate_averaged(sys, h_seed * (1.0 + 1e-6), &z, 0.0, 1e3 / eps, eps, None, &opts)?;
    let nodes = &master.outer;
    if nodes.last().map(|n| n.h).unwrap_or(f64::INFINITY) > h_exit || nodes.windows(2).any(|w| w[1].h > w[0].h) {
        return Err(Error::ZoneNotCrossed(format!("averaged drift does not traverse the zone at h = {}", zone.h_hat)));
    }
    let lam_at = |h0: f64| {
        brent(|l| master.h_at(l).map(|h| h - h0).unwrap_or(f64::NAN), nodes[0].lambda, nodes[nodes.len() - 1].lambda, 1e-12, 200)
    };
    let traverse = lam_at(h_exit)? - lam_at(h_enter)?;
    let act_at = |h: f64| closed_orbit(ham, &saddle, dom, h, &z, ORBIT_RTOL).map(|o| o.action);
    let set = InitialSet {
        domain: dom,
        action: i_seed,
        z: z.clone(),
        phase: std::f64::consts::PI,
        lambda: std::f64::consts::PI,
        delta_action: 0.0,
        delta_z: 0.0,
        delta_phase: std::f64::consts::PI,
        delta_lambda: std::f64::consts::PI,
        lambda_half: Half::Both,
    };
    let cfg_run = EventConfig {
        zones: vec![ZoneWatch { id: 0, domain: dom, omega_enter: w_enter, omega_exit: w_exit }],
        sections: true,
        stop_after_zones: false,
        record_every: 0,
        horizon: eps * (10.0 * traverse + (lam_at(h_enter)? - nodes[0].lambda) + 2e3),
        ..cfg.clone()
    };
    let results: Vec<std::result::Result<f64, bool>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut run_cfg = cfg_run.clone();
            run_cfg.stop_after_zones = false;
            let (_, rec) = run_one(sys, chart, &set, eps, seed, i, &run_cfg);
            let rec = rec.ok_or(false)?;
            let enter = rec.first(EventKind::ResonanceEnter(0)).ok_or(false)?.lambda;
            let Some(exit) = rec.first(EventKind::ResonanceExit(0)).map(|e| e.lambda) else {
                return Err(true);
            };
            let sec_after = |l: f64| rec.events.iter().find(|e| e.kind == EventKind::Section && e.lambda > l);
            let (a, b) = (sec_after(enter).ok_or(false)?, sec_after(exit).ok_or(false)?);
            let ia = act_at(a.h).map_err(|_| false)?;
            let ib = act_at(b.h).map_err(|_| false)?;
            // averaged prediction over the same lambda span
            let la = lam_at(a.h).map_err(|_| false)?;
            let hb = master.h_at(la + (b.lambda - a.lambda)).map_err(|_| false)?;
            let ib_pred = act_at(hb).map_err(|_| false)?;
            Ok((ib - ia) - (ib_pred - ia))
        })
        .collect();
    let mut jumps = Vec::new();
    let mut captured = 0;
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => jumps.push(v),
            Err(true) => captured += 1,
            Err(false) => failed += 1,
        }
    }
    let abs: Vec<f64> = jumps.iter().map(|v| v.abs()).collect();
    let s = Summary::of(&jumps);
    Ok(ScatterStats {
        eps,
        n,
        zone: zone.clone(),
        median_abs: median(&abs),
        iqr: s.iqr,
        std: s.std,
        jumps,
        captured,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{Preset, PresetParams};

    #[test]
    fn unperturbed_energy_is_conserved() {
        let sys = SystemSpec::duffing(Preset::Friction, PresetParams::default());
        let cfg = EventConfig { horizon: 1e3, rtol: 1e-11, atol: 1e-13, ..EventConfig::default() };
        let rec = integrate_perturbed(&sys, &[0.3, 1.7, 1.0], 0.0, 0.0, &cfg, None).unwrap();
        let h0 = rec.track.h[0];
        let worst = rec.track.h.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max);
        assert!(rec.lambda_end >= 1e3);
        assert!(worst < 1e-8, "drift {worst:e}");
    }

    #[test]
    fn friction_run_crosses_and_is_classified() {
        let sys = SystemSpec::duffing(Preset::Friction, PresetParams::default());
        let cfg = EventConfig { horizon: 40.0, record_every: 0, ..EventConfig::default() };
        let rec = integrate_perturbed(&sys, &[0.0, 1.7, 1.0], 0.0, 1e-2, &cfg, None).unwrap();
        assert!(rec.classified());
        assert!(rec.final_domain.is_inner());
        let ev = rec.first(EventKind::HZeroCross).unwrap();
        let h = sys.hamiltonian.energy(ev.state[0], ev.state[1], &ev.state[2..]);
        assert!(h.abs() < 1e-9, "h at event {h:e}");
        assert!(rec.events.windows(2).all(|w| w[0].lambda <= w[1].lambda));
        let d = sys.hamiltonian.classify(rec.final_state[0], rec.final_state[1], &rec.final_state[2..], -1.0);
        assert_eq!(d, rec.final_domain);
    }

    #[test]
    fn rng_streams_are_independent_of_order() {
        let a: f64 = trajectory_rng(7, 3).random();
        let _: f64 = trajectory_rng(7, 2).random();
        let b: f64 = trajectory_rng(7, 3).random();
        assert_eq!(a, b);
        let c: f64 = trajectory_rng(7, 4).random();
        assert_ne!(a, c);
    }

    #[test]
    fn symmetric_duffing_areas() {
        let sys = SystemSpec::duffing(Preset::SlowDrive, PresetParams { a: 0.0, ..PresetParams::default() });
        let (a1, a2) = loop_areas(&sys, &[2.0]).unwrap();
        let exact = 4.0 / 3.0 * 2f64.powf(1.5);
        assert!((a1 - exact).abs() < 1e-8 && (a2 - exact).abs() < 1e-8);
    }
}
