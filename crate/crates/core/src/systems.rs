//! Hamiltonians with a figure-eight separatrix, perturbation presets and
//! consistency checks on user-supplied systems.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of slow variables.
pub const MAX_Z_DIM: usize = 8;

/// Domains of the phase plane cut by the separatrix. `B1` and `B2` lie inside
/// the two loops, `B3` outside the figure eight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Domain {
    B1,
    B2,
    B3,
    Separatrix,
}

impl Domain {
    pub fn index(self) -> usize {
        match self {
            Domain::B1 => 0,
            Domain::B2 => 1,
            Domain::B3 => 2,
            Domain::Separatrix => 3,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B1" => Ok(Domain::B1),
            "B2" => Ok(Domain::B2),
            "B3" => Ok(Domain::B3),
            other => Err(Error::InvalidArgument(format!("unknown domain {other}"))),
        }
    }

    /// True for the two inner domains.
    pub fn is_inner(self) -> bool {
        matches!(self, Domain::B1 | Domain::B2)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Domain::B1 => "B1",
            Domain::B2 => "B2",
            Domain::B3 => "B3",
            Domain::Separatrix => "SEP",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    /// Two homoclinic loops meeting at one saddle.
    FigureEight,
    /// One loop; used for oracle checks only.
    SingleLoop,
}

/// An unperturbed one-degree-of-freedom Hamiltonian `H(p, q, z)`.
///
/// The saddle energy is always subtracted by the caller: `classify` receives
/// `h = H - H_C(z)`.
pub trait Hamiltonian: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn z_dim(&self) -> usize;
    fn energy(&self, p: f64, q: f64, z: &[f64]) -> f64;
    /// `(dH/dp, dH/dq)`.
    fn grad(&self, p: f64, q: f64, z: &[f64]) -> (f64, f64);
    fn grad_z(&self, p: f64, q: f64, z: &[f64], out: &mut [f64]);
    /// `[[H_pp, H_pq], [H_pq, H_qq]]`.
    fn hessian(&self, p: f64, q: f64, z: &[f64]) -> [[f64; 2]; 2];
    fn saddle_guess(&self, z: &[f64]) -> (f64, f64);
    fn topology(&self) -> Topology;
    /// Point inside the domain through which the Poincare section passes.
    fn loop_center(&self, domain: Domain, z: &[f64]) -> Option<(f64, f64)>;
    /// Sign of `q - q_center` on the section half-line.
    fn section_side(&self, domain: Domain) -> f64;
    /// Lowest `h` with closed orbits in `domain`.
    fn energy_floor(&self, domain: Domain, z: &[f64]) -> f64;
    fn classify(&self, p: f64, q: f64, z: &[f64], h: f64) -> Domain;
}

/// `H = p^2/2 - z1 q^2/2 + q^4/4`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Duffing;

impl Hamiltonian for Duffing {
    fn name(&self) -> &str {
        "duffing"
    }
    fn z_dim(&self) -> usize {
        1
    }
    #[inline]
    fn energy(&self, p: f64, q: f64, z: &[f64]) -> f64 {
        let q2 = q * q;
        0.5 * p * p - 0.5 * z[0] * q2 + 0.25 * q2 * q2
    }
    #[inline]
    fn grad(&self, p: f64, q: f64, z: &[f64]) -> (f64, f64) {
        (p, q * (q * q - z[0]))
    }
    fn grad_z(&self, _p: f64, q: f64, _z: &[f64], out: &mut [f64]) {
        out[0] = -0.5 * q * q;
    }
    fn hessian(&self, _p: f64, q: f64, z: &[f64]) -> [[f64; 2]; 2] {
        [[1.0, 0.0], [0.0, 3.0 * q * q - z[0]]]
    }
    fn saddle_guess(&self, _z: &[f64]) -> (f64, f64) {
        (0.0, 0.0)
    }
    fn topology(&self) -> Topology {
        Topology::FigureEight
    }
    fn loop_center(&self, domain: Domain, z: &[f64]) -> Option<(f64, f64)> {
        let r = z[0].max(0.0).sqrt();
        match domain {
            Domain::B1 => Some((0.0, -r)),
            Domain::B2 => Some((0.0, r)),
            Domain::B3 => Some((0.0, 0.0)),
            Domain::Separatrix => None,
        }
    }
    fn section_side(&self, domain: Domain) -> f64 {
        if domain == Domain::B1 {
            -1.0
        } else {
            1.0
        }
    }
    fn energy_floor(&self, domain: Domain, z: &[f64]) -> f64 {
        match domain {
            Domain::B3 => 0.0,
            _ => -0.25 * z[0] * z[0],
        }
    }
    fn classify(&self, _p: f64, q: f64, _z: &[f64], h: f64) -> Domain {
        if h.abs() < 1e-12 {
            Domain::Separatrix
        } else if h > 0.0 {
            Domain::B3
        } else if q < 0.0 {
            Domain::B1
        } else {
            Domain::B2
        }
    }
}

/// `H = p^2/2 - cos q` with its single libration loop.
#[derive(Clone, Copy, Debug, Default)]
pub struct Pendulum;

impl Hamiltonian for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn z_dim(&self) -> usize {
        0
    }
    fn energy(&self, p: f64, q: f64, _z: &[f64]) -> f64 {
        0.5 * p * p - q.cos()
    }
    fn grad(&self, p: f64, q: f64, _z: &[f64]) -> (f64, f64) {
        (p, q.sin())
    }
    fn grad_z(&self, _p: f64, _q: f64, _z: &[f64], _out: &mut [f64]) {}
    fn hessian(&self, _p: f64, q: f64, _z: &[f64]) -> [[f64; 2]; 2] {
        [[1.0, 0.0], [0.0, q.cos()]]
    }
    fn saddle_guess(&self, _z: &[f64]) -> (f64, f64) {
        (0.0, std::f64::consts::PI)
    }
    fn topology(&self) -> Topology {
        Topology::SingleLoop
    }
    fn loop_center(&self, domain: Domain, _z: &[f64]) -> Option<(f64, f64)> {
        match domain {
            Domain::B1 => Some((0.0, 0.0)),
            _ => None,
        }
    }
    fn section_side(&self, _domain: Domain) -> f64 {
        1.0
    }
    fn energy_floor(&self, domain: Domain, _z: &[f64]) -> f64 {
        match domain {
            Domain::B1 => -2.0,
            _ => 0.0,
        }
    }
    fn classify(&self, _p: f64, _q: f64, _z: &[f64], h: f64) -> Domain {
        if h.abs() < 1e-12 {
            Domain::Separatrix
        } else if h > 0.0 {
            Domain::B3
        } else {
            Domain::B1
        }
    }
}

/// A perturbation `eps * (f_p, f_q, f_z)`, 2pi-periodic in the fast phase `lambda`.
pub trait Perturbation: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    /// Returns `(f_p, f_q)` and writes `f_z` into `fz`.
    fn eval(&self, p: f64, q: f64, z: &[f64], lambda: f64, eps: f64, fz: &mut [f64]) -> (f64, f64);
    fn lambda_dependent(&self) -> bool;
    /// True if `f_z` can be nonzero.
    fn drives_slow(&self) -> bool {
        false
    }
}

/// Built-in perturbation families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `f_p = -gamma p`
    Friction,
    /// `f_p = -gamma p + a cos(lambda)`
    ForcedFriction,
    /// `f_p = -gamma (1 + c q) p`
    TiltedFriction,
    /// `f_z = (rate, 0, ...)`, optionally `f_p = a cos(lambda)`
    SlowDrive,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "friction" => Ok(Preset::Friction),
            "forced_friction" => Ok(Preset::ForcedFriction),
            "tilted_friction" => Ok(Preset::TiltedFriction),
            "slow_drive" => Ok(Preset::SlowDrive),
            other => Err(Error::ConfigInvalid(format!("unknown preset {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PresetParams {
    pub gamma: f64,
    pub a: f64,
    pub c: f64,
    pub rate: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self { gamma: 0.1, a: 0.2, c: 0.3, rate: 1.0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PresetPerturbation {
    pub preset: Preset,
    pub params: PresetParams,
}

impl Perturbation for PresetPerturbation {
    fn name(&self) -> &str {
        match self.preset {
            Preset::Friction => "friction",
            Preset::ForcedFriction => "forced_friction",
            Preset::TiltedFriction => "tilted_friction",
            Preset::SlowDrive => "slow_drive",
        }
    }
    #[inline]
    fn eval(&self, p: f64, q: f64, _z: &[f64], lambda: f64, _eps: f64, fz: &mut [f64]) -> (f64, f64) {
        let k = &self.params;
        for v in fz.iter_mut() {
            *v = 0.0;
        }
        match self.preset {
            Preset::Friction => (-k.gamma * p, 0.0),
            Preset::ForcedFriction => (-k.gamma * p + k.a * lambda.cos(), 0.0),
            Preset::TiltedFriction => (-k.gamma * (1.0 + k.c * q) * p, 0.0),
            Preset::SlowDrive => {
                if let Some(v) = fz.first_mut() {
                    *v = k.rate;
                }
                if k.a != 0.0 {
                    (k.a * lambda.cos(), 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
    fn lambda_dependent(&self) -> bool {
        match self.preset {
            Preset::ForcedFriction => self.params.a != 0.0,
            Preset::SlowDrive => self.params.a != 0.0,
            _ => false,
        }
    }
    fn drives_slow(&self) -> bool {
        self.preset == Preset::SlowDrive && self.params.rate != 0.0
    }
}

type PertFn = dyn Fn(f64, f64, &[f64], f64, f64, &mut [f64]) -> (f64, f64) + Send + Sync;

/// Perturbation given by a closure.
pub struct FnPerturbation {
    name: String,
    lambda_dependent: bool,
    drives_slow: bool,
    f: Box<PertFn>,
}

impl FnPerturbation {
    pub fn new<F>(name: &str, lambda_dependent: bool, drives_slow: bool, f: F) -> Self
    where
        F: Fn(f64, f64, &[f64], f64, f64, &mut [f64]) -> (f64, f64) + Send + Sync + 'static,
    {
        Self { name: name.to_string(), lambda_dependent, drives_slow, f: Box::new(f) }
    }
}

impl fmt::Debug for FnPerturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnPerturbation({})", self.name)
    }
}

impl Perturbation for FnPerturbation {
    fn name(&self) -> &str {
        &self.name
    }
    fn eval(&self, p: f64, q: f64, z: &[f64], lambda: f64, eps: f64, fz: &mut [f64]) -> (f64, f64) {
        (self.f)(p, q, z, lambda, eps, fz)
    }
    fn lambda_dependent(&self) -> bool {
        self.lambda_dependent
    }
    fn drives_slow(&self) -> bool {
        self.drives_slow
    }
}

/// Axis-aligned box bounding admissible states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub p: (f64, f64),
    pub q: (f64, f64),
    pub z: Vec<(f64, f64)>,
}

impl DomainBox {
    pub fn contains(&self, p: f64, q: f64, z: &[f64]) -> bool {
        p >= self.p.0
            && p <= self.p.1
            && q >= self.q.0
            && q <= self.q.1
            && z.iter().zip(&self.z).all(|(v, b)| *v >= b.0 && *v <= b.1)
    }
}

/// A Hamiltonian with its perturbation and admissible box.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub perturbation: Arc<dyn Perturbation>,
    pub domain_box: DomainBox,
}

impl SystemSpec {
    pub fn new(hamiltonian: Arc<dyn Hamiltonian>, perturbation: Arc<dyn Perturbation>, domain_box: DomainBox) -> Self {
        Self { hamiltonian, perturbation, domain_box }
    }

    /// Duffing system with a preset perturbation and the default box.
    pub fn duffing(preset: Preset, params: PresetParams) -> Self {
        Self::duffing_with(Arc::new(PresetPerturbation { preset, params }))
    }

    pub fn duffing_with(perturbation: Arc<dyn Perturbation>) -> Self {
        Self {
            hamiltonian: Arc::new(Duffing),
            perturbation,
            domain_box: DomainBox { p: (-6.0, 6.0), q: (-4.0, 4.0), z: vec![(0.05, 16.0)] },
        }
    }

    pub fn pendulum(perturbation: Arc<dyn Perturbation>) -> Self {
        Self {
            hamiltonian: Arc::new(Pendulum),
            perturbation,
            domain_box: DomainBox { p: (-6.0, 6.0), q: (-7.0, 7.0), z: vec![] },
        }
    }

    pub fn z_dim(&self) -> usize {
        self.hamiltonian.z_dim()
    }

    pub fn check_state(&self, p: f64, q: f64, z: &[f64]) -> Result<()> {
        if z.len() != self.z_dim() {
            return Err(Error::InvalidArgument(format!("expected {} slow variables, got {}", self.z_dim(), z.len())));
        }
        if !self.domain_box.contains(p, q, z) {
            return Err(Error::OutOfDomain(format!("p={p}, q={q}, z={z:?}")));
        }
        Ok(())
    }

    /// Rate of change of `h = H - H_C(z)` along the perturbation, divided by eps.
    /// `hz_c` is `dH/dz` at the saddle for this `z`.
    #[inline]
    pub fn f_h(&self, p: f64, q: f64, z: &[f64], lambda: f64, eps: f64, hz_c: &[f64]) -> f64 {
        let mut fz = [0.0; MAX_Z_DIM];
        let nz = z.len();
        let (fp, fq) = self.perturbation.eval(p, q, z, lambda, eps, &mut fz[..nz]);
        let (hp, hq) = self.hamiltonian.grad(p, q, z);
        let mut out = hp * fp + hq * fq;
        if nz > 0 && self.perturbation.drives_slow() {
            let mut hz = [0.0; MAX_Z_DIM];
            self.hamiltonian.grad_z(p, q, z, &mut hz[..nz]);
            for k in 0..nz {
                out += (hz[k] - hz_c[k]) * fz[k];
            }
        }
        out
    }
}

/// Outcome of a single validation check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Sample-based checks of periodicity in lambda, derivative consistency and
/// agreement of the domain classifier with the sign of `h`.
pub fn validate_system(sys: &SystemSpec, seed: u64) -> Result<ValidationReport> {
    let ham = &sys.hamiltonian;
    let nz = sys.z_dim();
    let bx = &sys.domain_box;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| {
        let p = rng.random_range(bx.p.0..bx.p.1) * 0.5;
        let q = rng.random_range(bx.q.0..bx.q.1) * 0.5;
        let z: Vec<f64> = bx.z.iter().map(|b| rng.random_range(b.0..b.1)).collect();
        (p, q, z)
    };
    let mut checks = Vec::new();

    // periodicity
    let mut worst: f64 = 0.0;
    let mut fz1 = [0.0; MAX_Z_DIM];
    let mut fz2 = [0.0; MAX_Z_DIM];
    for _ in 0..100 {
        let (p, q, z) = sample(&mut rng);
        for j in 0..64 {
            let lam = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
            let a = sys.perturbation.eval(p, q, &z, lam, 1e-3, &mut fz1[..nz]);
            let b = sys.perturbation.eval(p, q, &z, lam + 2.0 * std::f64::consts::PI, 1e-3, &mut fz2[..nz]);
            let mut d = (a.0 - b.0).abs().max((a.1 - b.1).abs());
            for k in 0..nz {
                d = d.max((fz1[k] - fz2[k]).abs());
            }
            worst = worst.max(d);
        }
    }
    checks.push(CheckResult {
        name: "periodicity".into(),
        passed: worst < 1e-12,
        worst,
        detail: "max |f(lambda+2pi) - f(lambda)| over 100 points x 64 phases".into(),
    });

    // derivative consistency
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    for _ in 0..100 {
        let (p, q, z) = sample(&mut rng);
        let d = 1e-5;
        let (hp, hq) = ham.grad(p, q, &z);
        let fp = (ham.energy(p + d, q, &z) - ham.energy(p - d, q, &z)) / (2.0 * d);
        let fq = (ham.energy(p, q + d, &z) - ham.energy(p, q - d, &z)) / (2.0 * d);
        worst_g = worst_g.max(rel_err(hp, fp)).max(rel_err(hq, fq));
        let hs = ham.hessian(p, q, &z);
        let gpp = (ham.grad(p + d, q, &z).0 - ham.grad(p - d, q, &z).0) / (2.0 * d);
        let gpq = (ham.grad(p, q + d, &z).0 - ham.grad(p, q - d, &z).0) / (2.0 * d);
        let gqq = (ham.grad(p, q + d, &z).1 - ham.grad(p, q - d, &z).1) / (2.0 * d);
        worst_h = worst_h.max(rel_err(hs[0][0], gpp)).max(rel_err(hs[0][1], gpq)).max(rel_err(hs[1][1], gqq));
        if nz > 0 {
            let mut gz = vec![0.0; nz];
            ham.grad_z(p, q, &z, &mut gz);
            for k in 0..nz {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += d;
                zm[k] -= d;
                let fd = (ham.energy(p, q, &zp) - ham.energy(p, q, &zm)) / (2.0 * d);
                worst_z = worst_z.max(rel_err(gz[k], fd));
            }
        }
    }
    let worst_d = worst_g.max(worst_h).max(worst_z);
    checks.push(CheckResult {
        name: "derivatives".into(),
        passed: worst_d < 1e-6,
        worst: worst_d,
        detail: format!("grad {worst_g:e}, hessian {worst_h:e}, grad_z {worst_z:e}"),
    });

    // classifier consistency
    let mut bad = 0usize;
    let mut total = 0usize;
    for _ in 0..200 {
        let (p, q, z) = sample(&mut rng);
        let sp = match crate::geometry::find_saddle(ham.as_ref(), &z, None) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let h = ham.energy(p, q, &z) - sp.energy;
        let d = ham.classify(p, q, &z, h);
        total += 1;
        let ok = match d {
            Domain::B3 => h > 0.0,
            Domain::B1 | Domain::B2 => h < 0.0,
            Domain::Separatrix => h.abs() < 1e-12,
        };
        if !ok {
            bad += 1;
        }
    }
    checks.push(CheckResult {
        name: "classifier".into(),
        passed: bad == 0 && total > 0,
        worst: bad as f64,
        detail: format!("{bad} of {total} samples disagree with sign(h)"),
    });
    Ok(ValidationReport { checks })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slow_drive_f_h_example() {
        let sys = SystemSpec::duffing(Preset::SlowDrive, PresetParams { a: 0.0, ..Default::default() });
        let v = sys.f_h(0.0, 1.0, &[1.0], 0.0, 1e-3, &[0.0]);
        assert!((v + 0.5).abs() < 1e-15);
    }

    #[test]
    fn classifier_examples() {
        let d = Duffing;
        let z = [1.0];
        let h = |p: f64, q: f64| d.energy(p, q, &z);
        assert_eq!(d.classify(0.0, 1.0, &z, h(0.0, 1.0)), Domain::B2);
        assert_eq!(d.classify(0.0, -1.0, &z, h(0.0, -1.0)), Domain::B1);
        assert_eq!(d.classify(1.0, 0.0, &z, h(1.0, 0.0)), Domain::B3);
        assert_eq!(d.classify(0.0, 0.0, &z, 0.0), Domain::Separatrix);
    }

    #[test]
    fn builtins_validate() {
        for preset in [Preset::Friction, Preset::ForcedFriction, Preset::TiltedFriction, Preset::SlowDrive] {
            let sys = SystemSpec::duffing(preset, PresetParams::default());
            let r = validate_system(&sys, 7).unwrap();
            assert!(r.passed(), "{preset:?}: {r:?}");
        }
    }

    #[test]
    fn wrong_period_is_flagged() {
        let pert = FnPerturbation::new("bad", true, false, |_p, _q, _z, lam, _e, _fz| ((2.0 * lam / 3.0).cos(), 0.0));
        let sys = SystemSpec::duffing_with(Arc::new(pert));
        let r = validate_system(&sys, 1).unwrap();
        assert!(!r.check("periodicity").unwrap().passed);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        #[derive(Debug)]
        struct Bad;
        impl Hamiltonian for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn z_dim(&self) -> usize {
                1
            }
            fn energy(&self, p: f64, q: f64, z: &[f64]) -> f64 {
                Duffing.energy(p, q, z)
            }
            fn grad(&self, p: f64, q: f64, z: &[f64]) -> (f64, f64) {
                let (a, b) = Duffing.grad(p, q, z);
                (a, 1.01 * b)
            }
            fn grad_z(&self, p: f64, q: f64, z: &[f64], out: &mut [f64]) {
                Duffing.grad_z(p, q, z, out)
            }
            fn hessian(&self, p: f64, q: f64, z: &[f64]) -> [[f64; 2]; 2] {
                Duffing.hessian(p, q, z)
            }
            fn saddle_guess(&self, z: &[f64]) -> (f64, f64) {
                Duffing.saddle_guess(z)
            }
            fn topology(&self) -> Topology {
                Topology::FigureEight
            }
            fn loop_center(&self, d: Domain, z: &[f64]) -> Option<(f64, f64)> {
                Duffing.loop_center(d, z)
            }
            fn section_side(&self, d: Domain) -> f64 {
                Duffing.section_side(d)
            }
            fn energy_floor(&self, d: Domain, z: &[f64]) -> f64 {
                Duffing.energy_floor(d, z)
            }
            fn classify(&self, p: f64, q: f64, z: &[f64], h: f64) -> Domain {
                Duffing.classify(p, q, z, h)
            }
        }
        let sys = SystemSpec {
            hamiltonian: Arc::new(Bad),
            perturbation: Arc::new(PresetPerturbation { preset: Preset::Friction, params: PresetParams::default() }),
            domain_box: SystemSpec::duffing(Preset::Friction, PresetParams::default()).domain_box,
        };
        let r = validate_system(&sys, 3).unwrap();
        assert!(!r.check("derivatives").unwrap().passed);
    }
}
