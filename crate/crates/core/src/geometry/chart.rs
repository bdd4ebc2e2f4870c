use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{closed_orbit, find_saddle, fit_log_asymptotics, LogFit, OrbitScalars, ORBIT_RTOL};
use crate::error::{Error, Result};
use crate::numerics::CubicSpline;
use crate::systems::{Domain, Hamiltonian};

/// One chart cell: orbit scalars and their derivatives at `(h, z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartCell {
    pub domain: Domain,
    pub h: f64,
    pub z: Vec<f64>,
    pub period: f64,
    pub omega: f64,
    pub action: f64,
    /// `dI/dh` by centered differences.
    pub di_dh: f64,
    pub domega_dh: f64,
    /// `dI/dz` at fixed `h`.
    pub di_dz: Vec<f64>,
}

struct Row {
    domain: Domain,
    z: Vec<f64>,
    // splines in u = ln|h|
    period: CubicSpline,
    action: CubicSpline,
    h_domega: CubicSpline,
    di_dz: Vec<CubicSpline>,
    u_range: (f64, f64),
}

/// Tabulated `T, omega, I` over `(h, z)` for each domain, with interpolation
/// in `ln|h|` (cubic) and `z[0]` (linear).
pub struct OrbitChart {
    pub cells: Vec<ChartCell>,
    pub fits: Vec<(Domain, Vec<f64>, Option<LogFit>)>,
    rows: Vec<Row>,
}

impl std::fmt::Debug for OrbitChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "OrbitChart({} cells)", self.cells.len())
    }
}

fn cell_at(ham: &dyn Hamiltonian, domain: Domain, h: f64, z: &[f64]) -> Result<ChartCell> {
    let s = find_saddle(ham, z, None)?;
    let o = closed_orbit(ham, &s, domain, h, z, ORBIT_RTOL)?.scalars();
    // five-point stencil; a wider step keeps integration noise out of the derivative
    let dh = 1e-2 * h.abs();
    let at = |k: f64| closed_orbit(ham, &s, domain, h + k * dh, z, ORBIT_RTOL).map(|o| o.scalars());
    let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
    let d5 = |f: fn(&OrbitScalars) -> f64| (-f(&p2) + 8.0 * f(&p1) - 8.0 * f(&m1) + f(&m2)) / (12.0 * dh);
    let di_dh = d5(|o| o.action);
    let domega_dh = d5(|o| o.omega);
    let mut di_dz = vec![0.0; z.len()];
    for k in 0..z.len() {
        let dz = 1e-5 * z[k].abs().max(1.0);
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[k] += dz;
        zm[k] -= dz;
        let sp = find_saddle(ham, &zp, None)?;
        let sm = find_saddle(ham, &zm, None)?;
        let ip = closed_orbit(ham, &sp, domain, h, &zp, ORBIT_RTOL)?.action;
        let im = closed_orbit(ham, &sm, domain, h, &zm, ORBIT_RTOL)?.action;
        di_dz[k] = (ip - im) / (2.0 * dz);
    }
    Ok(ChartCell {
        domain,
        h,
        z: z.to_vec(),
        period: o.period,
        omega: o.omega,
        action: o.action,
        di_dh,
        domega_dh,
        di_dz,
    })
}

/// Build a chart over `|h|` magnitudes and `z` values for each domain.
/// Cells whose orbit does not exist are skipped.
pub fn build_chart(ham: &dyn Hamiltonian, domains: &[Domain], h_mags: &[f64], z_grid: &[Vec<f64>]) -> Result<OrbitChart> {
    let mut jobs = Vec::new();
    for &d in domains {
        for z in z_grid {
            for &m in h_mags {
                let h = if d == Domain::B3 { m } else { -m };
                if h < ham.energy_floor(d, z) {
                    continue;
                }
                jobs.push((d, h, z.clone()));
            }
        }
    }
    let results: Vec<Result<ChartCell>> = jobs.par_iter().map(|(d, h, z)| cell_at(ham, *d, *h, z)).collect();
    let mut cells = Vec::new();
    for r in results {
        match r {
            Ok(c) => cells.push(c),
            Err(Error::OutsideChart(_)) | Err(Error::TooCloseToSeparatrix { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    OrbitChart::from_cells(cells)
}

impl OrbitChart {
    pub fn from_cells(mut cells: Vec<ChartCell>) -> Result<Self> {
        cells.sort_by(|a, b| {
            (a.domain, zkey(&a.z))
                .partial_cmp(&(b.domain, zkey(&b.z)))
                .unwrap()
                .then(a.h.abs().partial_cmp(&b.h.abs()).unwrap())
        });
        let mut rows = Vec::new();
        let mut fits = Vec::new();
        let mut i = 0;
        while i < cells.len() {
            let mut j = i;
            while j < cells.len() && cells[j].domain == cells[i].domain && cells[j].z == cells[i].z {
                j += 1;
            }
            let grp = &cells[i..j];
            let pts: Vec<(f64, f64)> =
                grp.iter().filter(|c| c.h.abs() <= 1e-3 + 1e-15).map(|c| (c.h, c.period)).collect();
            fits.push((grp[0].domain, grp[0].z.clone(), fit_log_asymptotics(&pts).ok()));
            if grp.len() >= 2 {
                let u: Vec<f64> = grp.iter().map(|c| c.h.abs().ln()).collect();
                let sp = |f: &dyn Fn(&ChartCell) -> f64| CubicSpline::new(u.clone(), grp.iter().map(f).collect());
                let nz = grp[0].z.len();
                let mut di_dz = Vec::new();
                for k in 0..nz {
                    di_dz.push(sp(&|c: &ChartCell| c.di_dz[k])?);
                }
                rows.push(Row {
                    domain: grp[0].domain,
                    z: grp[0].z.clone(),
                    period: sp(&|c: &ChartCell| c.period)?,
                    action: sp(&|c: &ChartCell| c.action)?,
                    h_domega: sp(&|c: &ChartCell| c.h * c.domega_dh)?,
                    di_dz,
                    u_range: (u[0], *u.last().unwrap()),
                });
            }
            i = j;
        }
        Ok(Self { cells, fits, rows })
    }

    /// Blend weights over rows of `domain` bracketing `z[0]`.
    fn rows_for(&self, domain: Domain, z: &[f64]) -> Result<Vec<(usize, f64)>> {
        let idx: Vec<usize> = (0..self.rows.len()).filter(|&i| self.rows[i].domain == domain).collect();
        if idx.is_empty() {
            return Err(Error::OutsideChart(format!("chart has no rows for {domain}")));
        }
        if z.is_empty() || idx.len() == 1 {
            return Ok(vec![(idx[0], 1.0)]);
        }
        let zs: Vec<f64> = idx.iter().map(|&i| self.rows[i].z[0]).collect();
        let x = z[0];
        if x < zs[0] - 1e-12 || x > zs[zs.len() - 1] + 1e-12 {
            return Err(Error::OutsideChart(format!("z = {x} outside chart range")));
        }
        let k = zs.partition_point(|&v| v <= x).clamp(1, zs.len() - 1);
        let w = ((x - zs[k - 1]) / (zs[k] - zs[k - 1])).clamp(0.0, 1.0);
        Ok(vec![(idx[k - 1], 1.0 - w), (idx[k], w)])
    }

    fn interp(&self, domain: Domain, h: f64, z: &[f64], f: impl Fn(&Row, f64) -> f64) -> Result<f64> {
        let u = h.abs().ln();
        let mut acc = 0.0;
        for (i, w) in self.rows_for(domain, z)? {
            let r = &self.rows[i];
            if u < r.u_range.0 - 1e-9 || u > r.u_range.1 + 1e-9 {
                return Err(Error::OutsideChart(format!("|h| = {:e} outside chart range", h.abs())));
            }
            if w != 0.0 {
                acc += w * f(r, u);
            }
        }
        Ok(acc)
    }

    pub fn period(&self, domain: Domain, h: f64, z: &[f64]) -> Result<f64> {
        self.interp(domain, h, z, |r, u| r.period.eval(u))
    }
    pub fn omega(&self, domain: Domain, h: f64, z: &[f64]) -> Result<f64> {
        Ok(2.0 * std::f64::consts::PI / self.period(domain, h, z)?)
    }
    pub fn action(&self, domain: Domain, h: f64, z: &[f64]) -> Result<f64> {
        self.interp(domain, h, z, |r, u| r.action.eval(u))
    }
    pub fn domega_dh(&self, domain: Domain, h: f64, z: &[f64]) -> Result<f64> {
        Ok(self.interp(domain, h, z, |r, u| r.h_domega.eval(u))? / h)
    }
    pub fn di_dz(&self, domain: Domain, h: f64, z: &[f64], k: usize) -> Result<f64> {
        self.interp(domain, h, z, |r, u| r.di_dz[k].eval(u))
    }

    /// Range of `|h|` covered for `domain` at `z`.
    pub fn h_range(&self, domain: Domain, z: &[f64]) -> Result<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (i, _) in self.rows_for(domain, z)? {
            lo = lo.max(self.rows[i].u_range.0);
            hi = hi.min(self.rows[i].u_range.1);
        }
        Ok((lo.exp(), hi.exp()))
    }

    /// Solve `omega(h) = target` within the chart (omega is monotone in `h`).
    pub fn h_for_omega(&self, domain: Domain, target: f64, z: &[f64]) -> Result<f64> {
        let sign = if domain == Domain::B3 { 1.0 } else { -1.0 };
        let (lo, hi) = self.h_range(domain, z)?;
        let g = |u: f64| self.omega(domain, sign * u.exp(), z).map(|w| w - target);
        let (a, b) = (lo.ln(), hi.ln());
        let (ga, gb) = (g(a)?, g(b)?);
        if ga.signum() == gb.signum() {
            return Err(Error::OutsideChart(format!("omega = {target} not attained in the chart")));
        }
        let u = crate::numerics::brent(|u| g(u).unwrap_or(f64::NAN), a, b, 1e-14, 200)?;
        Ok(sign * u.exp())
    }

    /// Solve `I(h) = target` within the chart.
    pub fn h_for_action(&self, domain: Domain, target: f64, z: &[f64]) -> Result<f64> {
        let sign = if domain == Domain::B3 { 1.0 } else { -1.0 };
        let (lo, hi) = self.h_range(domain, z)?;
        let g = |m: f64| self.action(domain, sign * m, z).map(|v| v - target);
        let (ga, gb) = (g(lo)?, g(hi)?);
        if ga.signum() == gb.signum() {
            return Err(Error::OutsideChart(format!("I = {target} not attained in the chart")));
        }
        let m = crate::numerics::brent(|m| g(m).unwrap_or(f64::NAN), lo, hi, 1e-15, 200)?;
        Ok(sign * m)
    }

    /// CSV with a header row; floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let nz = self.cells.first().map(|c| c.z.len()).unwrap_or(0);
        let mut head = vec!["domain".to_string(), "h".to_string()];
        for k in 0..nz {
            head.push(format!("z{k}"));
        }
        head.extend(["T", "omega", "I", "dI_dh", "domega_dh"].iter().map(|s| s.to_string()));
        for k in 0..nz {
            head.push(format!("dI_dz{k}"));
        }
        writeln!(w, "{}", head.join(","))?;
        for c in &self.cells {
            let mut f = vec![c.domain.to_string(), fmt_f64(c.h)];
            f.extend(c.z.iter().map(|v| fmt_f64(*v)));
            f.extend([c.period, c.omega, c.action, c.di_dh, c.domega_dh].iter().map(|v| fmt_f64(*v)));
            f.extend(c.di_dz.iter().map(|v| fmt_f64(*v)));
            writeln!(w, "{}", f.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let head = lines.next().ok_or_else(|| Error::Io("empty chart file".into()))??;
        let cols: Vec<&str> = head.split(',').collect();
        let nz = cols.iter().filter(|c| c.starts_with('z')).count();
        if cols.len() != 7 + 2 * nz {
            return Err(Error::Io("malformed chart header".into()));
        }
        let mut cells = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Io(format!("malformed chart row: {line}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Io(format!("{e}: {s}")));
            let v: Vec<f64> = f[1..].iter().map(|s| num(s)).collect::<Result<_>>()?;
            cells.push(ChartCell {
                domain: Domain::parse(f[0])?,
                h: v[0],
                z: v[1..1 + nz].to_vec(),
                period: v[1 + nz],
                omega: v[2 + nz],
                action: v[3 + nz],
                di_dh: v[4 + nz],
                domega_dh: v[5 + nz],
                di_dz: v[6 + nz..].to_vec(),
            });
        }
        Self::from_cells(cells)
    }
}

fn zkey(z: &[f64]) -> f64 {
    z.first().copied().unwrap_or(0.0)
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::log_grid;
    use crate::systems::Duffing;

    #[test]
    fn chart_round_trip_and_identities() {
        let hs = log_grid(1e-4, 0.5, 16);
        let chart = build_chart(&Duffing, &[Domain::B3, Domain::B2], &hs, &[vec![1.0]]).unwrap();
        for c in &chart.cells {
            assert!((c.omega * c.di_dh - 1.0).abs() < 1e-6, "{c:?}");
        }
        let h = 0.0123;
        let s = find_saddle(&Duffing, &[1.0], None).unwrap();
        let exact = closed_orbit(&Duffing, &s, Domain::B3, h, &[1.0], ORBIT_RTOL).unwrap().scalars();
        let w = chart.omega(Domain::B3, h, &[1.0]).unwrap();
        assert!((w - exact.omega).abs() / exact.omega < 1e-4);
        let mut buf = Vec::new();
        chart.write_csv(&mut buf).unwrap();
        let back = OrbitChart::read_csv(&buf[..]).unwrap();
        assert_eq!(back.cells, chart.cells);
        let hw = chart.h_for_omega(Domain::B3, w, &[1.0]).unwrap();
        assert!((hw - h).abs() / h < 1e-6);
    }
}
