//! Gaussian-filtered local density of states from an echo series.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::echo::{spectral_weights, EchoSeries, Provenance, TimeGrid};
use crate::error::{Error, Result};
use crate::fock::{FockVector, C64};
use crate::hamiltonian::SectorOperator;
use crate::io::{self, fmt_f64, Header};

pub const OVERLAP_FLOOR: f64 = 1e-6;
pub const PEAK_PROMINENCE: f64 = 0.05;
pub const DEFAULT_ENERGY_POINTS: usize = 400;
const TRUNCATION_WARNING: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub delta: f64,
    pub grid: TimeGrid,
    /// `c_m = Δτ δ/√(2π) exp(-τ_m² δ²/2)` for `m = 0 … R`.
    pub coefficients: Vec<f64>,
}

impl FilterSpec {
    pub fn new(delta: f64, grid: TimeGrid) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!("filter width must be positive, got {delta}")));
        }
        let c0 = grid.dt * delta / (2.0 * PI).sqrt();
        let coefficients = grid.times().iter().map(|t| c0 * (-0.5 * t * t * delta * delta).exp()).collect();
        Ok(Self { delta, grid, coefficients })
    }

    /// `c_R / c_0`.
    pub fn tail_ratio(&self) -> f64 {
        self.coefficients[self.grid.n] / self.coefficients[0]
    }

    /// The window cuts the Gaussian off early enough to leave ringing.
    pub fn truncated(&self) -> bool {
        self.tail_ratio() > TRUNCATION_WARNING
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdosCurve {
    pub energies: Vec<f64>,
    pub density: Vec<f64>,
    /// Spread across seeds, when the curve is an ensemble mean.
    pub sigma: Option<Vec<f64>>,
    pub delta: f64,
    pub tau_max: f64,
    pub provenance: Provenance,
    pub imag_residue: f64,
}

impl LdosCurve {
    pub fn to_text(&self, extra: &Header) -> String {
        let mut h = Header::new();
        h.push("kind", "ldos_curve");
        h.push("units", io::UNITS_NOTE);
        h.push("delta", fmt_f64(self.delta));
        h.push("tau_max", fmt_f64(self.tau_max));
        h.push("provenance", &self.provenance);
        h.push("imag_residue", fmt_f64(self.imag_residue));
        for (k, v) in extra.entries() {
            h.push(k, v);
        }
        let mut cols = vec!["energy", "density"];
        if self.sigma.is_some() {
            cols.push("sigma");
        }
        let rows: Vec<Vec<String>> = (0..self.energies.len())
            .map(|i| {
                let mut row = vec![fmt_f64(self.energies[i]), fmt_f64(self.density[i])];
                if let Some(s) = &self.sigma {
                    row.push(fmt_f64(s[i]));
                }
                row
            })
            .collect();
        io::write_table(&h, &cols, &rows)
    }
}

/// `[E_min − 2, E_max/4]` with `n` points.
pub fn default_energy_grid(e_min: f64, e_max: f64, n: usize) -> Result<Vec<f64>> {
    linear_grid(e_min - 2.0, 0.25 * e_max, n)
}

pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) {
        return Err(Error::InvalidArgument(format!("empty energy window [{lo}, {hi}]")));
    }
    Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
}

/// `D(E) = Σ_{|m| ≤ R} c_m e^{iEτ_m} G(τ_m)`, negative times from
/// `G(-τ) = conj G(τ)`.
pub fn reconstruct_ldos(series: &EchoSeries, filter: &FilterSpec, energies: &[f64]) -> Result<LdosCurve> {
    let grid = series.grid.truncated(filter.grid.tau_max())?;
    if (grid.dt - filter.grid.dt).abs() > 1e-12 * grid.dt || grid.n != filter.grid.n {
        return Err(Error::GridMismatch(format!(
            "series grid (dt {}, {} points) does not match filter grid (dt {}, {} points)",
            series.grid.dt,
            series.grid.len(),
            filter.grid.dt,
            filter.grid.len()
        )));
    }
    let g = &series.g;
    let values: Vec<C64> = energies
        .par_iter()
        .map(|&e| {
            let mut acc = C64::new(filter.coefficients[0], 0.0) * g[0];
            for m in 1..=grid.n {
                let rot = C64::new(0.0, e * grid.time(m)).exp();
                acc += filter.coefficients[m] * (rot * g[m] + rot.conj() * g[m].conj());
            }
            acc
        })
        .collect();
    Ok(LdosCurve {
        energies: energies.to_vec(),
        density: values.iter().map(|z| z.re).collect(),
        sigma: None,
        delta: filter.delta,
        tau_max: grid.tau_max(),
        provenance: series.provenance.clone(),
        imag_residue: values.iter().map(|z| z.im.abs()).fold(0.0, f64::max),
    })
}

/// `Σ_n p_n exp(-(E - E_n)²/(2δ²))`, the continuum limit of the filter.
pub fn gaussian_ldos(overlaps: &[(f64, f64)], delta: f64, energies: &[f64]) -> Vec<f64> {
    energies
        .iter()
        .map(|e| overlaps.iter().map(|(en, p)| p * (-(e - en).powi(2) / (2.0 * delta * delta)).exp()).sum())
        .collect()
}

/// `(E_n, |⟨ψ|E_n⟩|²)` above [`OVERLAP_FLOOR`], sorted by energy. Degenerate
/// levels are merged. Uses the dense spectrum when `h` has one cached.
pub fn exact_overlaps(h: &SectorOperator, psi: &FockVector) -> Result<Vec<(f64, f64)>> {
    let mut raw = spectral_weights(h, psi)?;
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (e, p) in raw {
        match merged.last_mut() {
            Some(last) if (e - last.0).abs() < 1e-9 => last.1 += p,
            _ => merged.push((e, p)),
        }
    }
    merged.retain(|(_, p)| *p > OVERLAP_FLOOR);
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakEstimate {
    pub energy: f64,
    pub uncertainty: f64,
    pub height: f64,
}

/// Lowest-energy local maximum above 5% of the curve maximum, refined by a
/// parabola through its neighbours.
pub fn peak_estimate(curve: &LdosCurve) -> Result<PeakEstimate> {
    let (e, d) = (&curve.energies, &curve.density);
    if e.len() < 3 || d.len() != e.len() {
        return Err(Error::InvalidArgument("peak search needs at least three points".into()));
    }
    let top = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = PEAK_PROMINENCE * top;
    let k = (1..e.len() - 1).find(|&k| d[k] > floor && d[k] >= d[k - 1] && d[k] > d[k + 1]).ok_or(Error::NoPeak)?;
    let (y0, y1, y2) = (d[k - 1], d[k], d[k + 1]);
    let h = e[k + 1] - e[k];
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom.abs() > 0.0 { 0.5 * h * (y0 - y2) / denom } else { 0.0 };
    let shift = shift.clamp(-h, h);
    let band = curve.sigma.as_ref().map_or(0.0, |s| s[k]);
    Ok(PeakEstimate { energy: e[k] + shift, uncertainty: (curve.delta * curve.delta + band * band).sqrt(), height: y1 })
}

/// Depth of the most negative excursion, `max(0, -min D)`.
pub fn ringing_amplitude(curve: &LdosCurve) -> f64 {
    curve.density.iter().cloned().fold(0.0, |m: f64, v| m.max(-v))
}

/// Pointwise mean and sample standard deviation of curves sharing a grid.
pub fn ensemble(curves: &[LdosCurve]) -> Result<LdosCurve> {
    let first = curves.first().ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?;
    let n = first.energies.len();
    if curves.iter().any(|c| c.energies != first.energies) {
        return Err(Error::GridMismatch("ensemble curves use different energy grids".into()));
    }
    let k = curves.len() as f64;
    let mean: Vec<f64> = (0..n).map(|i| curves.iter().map(|c| c.density[i]).sum::<f64>() / k).collect();
    let sigma: Vec<f64> = (0..n)
        .map(|i| {
            if curves.len() < 2 {
                return 0.0;
            }
            let ss: f64 = curves.iter().map(|c| (c.density[i] - mean[i]).powi(2)).sum();
            (ss / (k - 1.0)).sqrt()
        })
        .collect();
    Ok(LdosCurve {
        energies: first.energies.clone(),
        density: mean,
        sigma: Some(sigma),
        delta: first.delta,
        tau_max: first.tau_max,
        provenance: first.provenance.clone(),
        imag_residue: curves.iter().map(|c| c.imag_residue).fold(0.0, f64::max),
    })
}
