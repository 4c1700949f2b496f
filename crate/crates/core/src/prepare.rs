//! Adiabatic preparation of single-plaquette ground states.
//!
//! Paths start from two decoupled horizontal double wells (`t_y = 0`,
//! `U = 0`) with a tilt `Δμ_x` on the right column, delocalize along x, then
//! ramp `t_y → t` and `U → 8t` together. Doped plaquettes additionally carry a
//! spin-independent potential that is released in a final segment.
//!
//! Local sites are numbered row-major, `k = x + 2y`, and the gradient
//! `μ_k = k t` uses that index directly.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{Config, FockBasis, FockVector, NumberSector};
use crate::hamiltonian::{build_hubbard_on, full_spectrum, HubbardParams, SectorOperator, TermFilter};
use crate::io::{fmt_f64, write_table, Header, UNITS_NOTE};
use crate::lattice::{BondClass, LatticeGeometry, PlaquetteLabel};
use crate::propagate::evolve_schedule;

pub const GAP_SCAN_POINTS: usize = 101;
pub const TARGET_U: f64 = 8.0;
pub const DEFAULT_DT: f64 = 0.01;

/// Energies closer than this to the lowest level count as ground manifold.
const MANIFOLD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GradientVariant {
    None,
    /// `μ_k = k t`.
    Linear,
    /// `μ_k = δ_{k,0} t`.
    LocalOffset,
}

impl GradientVariant {
    pub fn potential(self) -> [f64; 4] {
        match self {
            GradientVariant::None => [0.0; 4],
            GradientVariant::Linear => [0.0, 1.0, 2.0, 3.0],
            GradientVariant::LocalOffset => [1.0, 0.0, 0.0, 0.0],
        }
    }
}

impl fmt::Display for GradientVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientVariant::None => "none",
            GradientVariant::Linear => "linear",
            GradientVariant::LocalOffset => "local_offset",
        })
    }
}

impl FromStr for GradientVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GradientVariant::None),
            "linear" => Ok(GradientVariant::Linear),
            "local_offset" => Ok(GradientVariant::LocalOffset),
            _ => Err(Error::InvalidArgument(format!("unknown gradient variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    Fock(Config),
    /// Ground state of `H(0)` (used by reversed schedules).
    GroundOfStart,
}

/// Piecewise-linear path `H(s)`, `s ∈ [0, 1]`, on one 2×2 plaquette sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub name: String,
    pub label: PlaquetteLabel,
    pub breakpoints: Vec<(f64, HubbardParams)>,
    pub tau_total: f64,
    pub initial: InitialState,
    /// Start of the potential-release segment, if any.
    pub release_start: Option<f64>,
}

fn plaquette_params(t_x: f64, t_y: f64, u: f64, mu: [f64; 4]) -> HubbardParams {
    let mut p = HubbardParams::uniform(0.0, u);
    p.set_t(BondClass::IntraX, t_x);
    p.set_t(BondClass::IntraY, t_y);
    p.mu = mu.to_vec();
    p
}

fn add(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

/// `Δμ_x = t` on the right column.
const TILT: [f64; 4] = [0.0, 1.0, 0.0, 1.0];

/// Starting Fock states on the two horizontal double wells (bottom row
/// sites 0-1, top row sites 2-3): a doublon on the left site of each well
/// for `A`; for the doped labels a doublon at site 0 plus, for `C`/`D`, a
/// single ↑/↓ at site 2. The local offset raises site 0, so there the two
/// wells swap roles.
fn initial_config(label: PlaquetteLabel, gradient: GradientVariant) -> Config {
    let c = match label {
        PlaquetteLabel::A => (0b0101, 0b0101),
        PlaquetteLabel::B => (0b0001, 0b0001),
        PlaquetteLabel::C => (0b0101, 0b0001),
        PlaquetteLabel::D => (0b0001, 0b0101),
    };
    let swap = |m: u32| ((m & 0b0011) << 2) | ((m & 0b1100) >> 2);
    match gradient {
        GradientVariant::LocalOffset => (swap(c.0), swap(c.1)),
        _ => c,
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let s: Vec<f64> = self.breakpoints.iter().map(|b| b.0).collect();
        if s.len() < 2 || s[0] != 0.0 || *s.last().unwrap() != 1.0 || s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!("breakpoints {s:?} do not cover [0, 1] increasingly")));
        }
        if self.breakpoints.iter().any(|b| b.1.mu.len() != 4) {
            return Err(Error::InvalidArgument("schedule potentials must list 4 sites".into()));
        }
        if !(self.tau_total >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative sweep time {}", self.tau_total)));
        }
        Ok(())
    }

    pub fn with_tau_total(&self, tau_total: f64) -> Self {
        Self { tau_total, ..self.clone() }
    }

    pub fn sector(&self) -> NumberSector {
        let (nu, nd) = self.label.particles();
        NumberSector::new(nu, nd, 4).unwrap()
    }

    pub fn params_at(&self, s: f64) -> HubbardParams {
        let s = s.clamp(0.0, 1.0);
        let k = self.breakpoints.windows(2).position(|w| s <= w[1].0).unwrap_or(self.breakpoints.len() - 2);
        let (s0, p0) = &self.breakpoints[k];
        let (s1, p1) = &self.breakpoints[k + 1];
        let w = (s - s0) / (s1 - s0);
        let lerp = |a: f64, b: f64| a + w * (b - a);
        let mut t = [0.0; 4];
        for (i, ti) in t.iter_mut().enumerate() {
            *ti = lerp(p0.t_by_class[i], p1.t_by_class[i]);
        }
        HubbardParams {
            t_by_class: t,
            u: lerp(p0.u, p1.u),
            mu: p0.mu.iter().zip(&p1.mu).map(|(a, b)| lerp(*a, *b)).collect(),
        }
    }

    pub fn hamiltonian_at(&self, s: f64, basis: &Arc<FockBasis>) -> Result<SectorOperator> {
        let geom = LatticeGeometry::new(2, 2)?;
        build_hubbard_on(&geom, None, &self.params_at(s), Arc::clone(basis), TermFilter::All)
    }

    pub fn basis(&self) -> Result<Arc<FockBasis>> {
        Ok(Arc::new(FockBasis::new(self.sector())?))
    }

    pub fn initial_state(&self, basis: &Arc<FockBasis>) -> Result<FockVector> {
        match &self.initial {
            InitialState::Fock(c) => FockVector::basis_state(Arc::clone(basis), *c),
            InitialState::GroundOfStart => {
                Ok(crate::hamiltonian::ground_state(&self.hamiltonian_at(0.0, basis)?)?.vector)
            }
        }
    }
}

pub fn schedule_halffilled_a() -> Schedule {
    let h0 = plaquette_params(0.0, 0.0, 0.0, TILT);
    let hi = plaquette_params(1.0, 0.0, 0.0, [0.0; 4]);
    let h1 = plaquette_params(1.0, 1.0, TARGET_U, [0.0; 4]);
    Schedule {
        name: "A".into(),
        label: PlaquetteLabel::A,
        breakpoints: vec![(0.0, h0), (0.5, hi), (1.0, h1)],
        tau_total: 20.0,
        initial: InitialState::Fock(initial_config(PlaquetteLabel::A, GradientVariant::None)),
        release_start: None,
    }
}

fn doped_schedule(label: PlaquetteLabel, gradient: GradientVariant) -> Schedule {
    let g = gradient.potential();
    let h0 = plaquette_params(0.0, 0.0, 0.0, add(TILT, g));
    let hi = plaquette_params(1.0, 0.0, 0.0, g);
    let hg = plaquette_params(1.0, 1.0, TARGET_U, g);
    let h1 = plaquette_params(1.0, 1.0, TARGET_U, [0.0; 4]);
    let (breakpoints, release_start) = if gradient == GradientVariant::None {
        (vec![(0.0, h0), (0.5, hi), (1.0, h1)], None)
    } else {
        let third = 1.0 / 3.0;
        (vec![(0.0, h0), (third, hi), (2.0 * third, hg), (1.0, h1)], Some(2.0 * third))
    };
    Schedule {
        name: format!("{label}-{gradient}"),
        label,
        breakpoints,
        tau_total: 20.0,
        initial: InitialState::Fock(initial_config(label, gradient)),
        release_start,
    }
}

pub fn schedule_doped_b(gradient: GradientVariant) -> Schedule {
    doped_schedule(PlaquetteLabel::B, gradient)
}

/// `label` must be `C` (missing ↓) or `D` (missing ↑).
pub fn schedule_doped_cd(label: PlaquetteLabel, gradient: GradientVariant) -> Result<Schedule> {
    match label {
        PlaquetteLabel::C | PlaquetteLabel::D => Ok(doped_schedule(label, gradient)),
        _ => Err(Error::InvalidArgument(format!("{label} is not a C/D plaquette"))),
    }
}

/// Same path traversed from `s = 1` back to `s = 0`, starting in the ground
/// state of the original final Hamiltonian.
pub fn reverse_sweep(sched: &Schedule) -> Schedule {
    let mut bp: Vec<(f64, HubbardParams)> = sched.breakpoints.iter().rev().map(|(s, p)| (1.0 - s, p.clone())).collect();
    bp[0].0 = 0.0;
    let last = bp.len() - 1;
    bp[last].0 = 1.0;
    Schedule {
        name: format!("{}-reverse", sched.name),
        label: sched.label,
        breakpoints: bp,
        tau_total: sched.tau_total,
        initial: InitialState::GroundOfStart,
        release_start: sched.release_start.map(|r| 1.0 - r),
    }
}

#[derive(Debug, Clone)]
pub struct GapPoint {
    pub s: f64,
    pub e0: f64,
    pub e1: f64,
}

#[derive(Debug, Clone)]
pub struct PreparationReport {
    pub schedule: String,
    pub final_state: FockVector,
    /// Weight of the final state in the ground manifold of `H(1)`.
    pub fidelity: f64,
    pub ground_degeneracy: usize,
    pub min_gap: f64,
    /// Minimum gap over the part of the path before the potential release.
    pub min_gap_before_release: f64,
    /// Fidelity just before the release segment, against `H(s_release)`.
    pub pre_release_fidelity: Option<f64>,
    pub gap_trace: Vec<GapPoint>,
    pub sweep_time: f64,
    pub dt: f64,
}

impl PreparationReport {
    pub fn degenerate_somewhere(&self) -> bool {
        self.min_gap < crate::hamiltonian::DEGENERACY_GAP
    }

    /// Release lowered the fidelity by more than `1e-6`.
    pub fn release_costs_fidelity(&self) -> bool {
        self.pre_release_fidelity.is_some_and(|f| f - self.fidelity > 1e-6)
    }

    pub fn gap_table(&self) -> String {
        let mut h = Header::new();
        h.push("kind", "gap_trace");
        h.push("schedule", &self.schedule);
        h.push("units", UNITS_NOTE);
        h.push("min_gap", fmt_f64(self.min_gap));
        let rows: Vec<Vec<String>> = self
            .gap_trace
            .iter()
            .map(|g| vec![fmt_f64(g.s), fmt_f64(g.e0), fmt_f64(g.e1), fmt_f64(g.e1 - g.e0)])
            .collect();
        write_table(&h, &["s", "e0", "e1", "gap"], &rows)
    }
}

/// Weight of `psi` in the lowest eigenspace of `h` and that space's dimension.
fn manifold_weight(h: &SectorOperator, psi: &FockVector) -> Result<(f64, usize)> {
    let spec = full_spectrum(h)?;
    let e0 = spec.energies[0];
    let overlaps = spec.overlaps(psi.amplitudes());
    let members: Vec<&(f64, f64)> = overlaps.iter().filter(|(e, _)| *e - e0 < MANIFOLD_TOL).collect();
    Ok((members.iter().map(|p| p.1).sum(), members.len()))
}

pub fn gap_scan(sched: &Schedule, basis: &Arc<FockBasis>) -> Result<Vec<GapPoint>> {
    (0..GAP_SCAN_POINTS)
        .map(|k| {
            let s = k as f64 / (GAP_SCAN_POINTS - 1) as f64;
            let spec = full_spectrum(&sched.hamiltonian_at(s, basis)?)?;
            Ok(GapPoint { s, e0: spec.energies[0], e1: spec.energies.get(1).copied().unwrap_or(f64::INFINITY) })
        })
        .collect()
}

pub fn run_preparation(sched: &Schedule, dt: f64) -> Result<PreparationReport> {
    sched.validate()?;
    let basis = sched.basis()?;
    let psi0 = sched.initial_state(&basis)?;
    let gap_trace = gap_scan(sched, &basis)?;
    let min_gap = gap_trace.iter().map(|g| g.e1 - g.e0).fold(f64::INFINITY, f64::min);
    let cut = sched.release_start.unwrap_or(1.0);
    let min_gap_before_release =
        gap_trace.iter().filter(|g| g.s <= cut + 1e-12).map(|g| g.e1 - g.e0).fold(f64::INFINITY, f64::min);

    let (final_state, pre_release_fidelity) = match sched.release_start {
        Some(r) if sched.tau_total > 0.0 => {
            // Evolve in two legs so the state at the release point can be scored.
            let tau_a = sched.tau_total * r;
            let leg_a = |s: f64| sched.hamiltonian_at(s * r, &basis);
            let mid = crate::propagate::evolve_piecewise(leg_a, &psi0, tau_a, dt.min(tau_a))?;
            let (f_mid, _) = manifold_weight(&sched.hamiltonian_at(r, &basis)?, &mid)?;
            let tau_b = sched.tau_total - tau_a;
            let leg_b = |s: f64| sched.hamiltonian_at(r + s * (1.0 - r), &basis);
            let end = crate::propagate::evolve_piecewise(leg_b, &mid, tau_b, dt.min(tau_b))?;
            (end, Some(f_mid))
        }
        _ => {
            let step = if sched.tau_total > 0.0 { dt.min(sched.tau_total) } else { dt };
            (evolve_schedule(sched, &basis, &psi0, sched.tau_total, step)?, None)
        }
    };
    let (fidelity, ground_degeneracy) = manifold_weight(&sched.hamiltonian_at(1.0, &basis)?, &final_state)?;
    Ok(PreparationReport {
        schedule: sched.name.clone(),
        final_state,
        fidelity: fidelity.min(1.0),
        ground_degeneracy,
        min_gap,
        min_gap_before_release,
        pre_release_fidelity,
        gap_trace,
        sweep_time: sched.tau_total,
        dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub tau_total: f64,
    pub fidelity: f64,
}

/// Final fidelity over a list of sweep times, evaluated in parallel.
pub fn sweep_scan(sched: &Schedule, taus: &[f64], dt: f64) -> Result<Vec<SweepPoint>> {
    taus.par_iter()
        .map(|&tau| {
            let r = run_preparation(&sched.with_tau_total(tau), dt)?;
            Ok(SweepPoint { tau_total: tau, fidelity: r.fidelity })
        })
        .collect()
}

/// Shortest scanned sweep time with infidelity below `target`, after which
/// the curve stays below it.
pub fn sweep_knee(points: &[SweepPoint], target: f64) -> Option<f64> {
    match points.iter().rposition(|p| 1.0 - p.fidelity >= target) {
        None => points.first().map(|p| p.tau_total),
        Some(i) => points.get(i + 1).map(|p| p.tau_total),
    }
}

pub fn sweep_table(name: &str, points: &[SweepPoint]) -> String {
    let mut h = Header::new();
    h.push("kind", "sweep_curve");
    h.push("schedule", name);
    h.push("units", UNITS_NOTE);
    let rows: Vec<Vec<String>> = points.iter().map(|p| vec![fmt_f64(p.tau_total), fmt_f64(1.0 - p.fidelity)]).collect();
    write_table(&h, &["tau_total", "infidelity"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_follows_site_index() {
        assert_eq!(GradientVariant::Linear.potential(), [0.0, 1.0, 2.0, 3.0]);
        assert_eq!(GradientVariant::LocalOffset.potential(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn a_starts_from_left_column_doublons() {
        let s = schedule_halffilled_a();
        assert_eq!(s.initial, InitialState::Fock((0b0101, 0b0101)));
        s.validate().unwrap();
    }

    #[test]
    fn doped_starting_states() {
        let b = schedule_doped_b(GradientVariant::Linear);
        assert_eq!(b.initial, InitialState::Fock((0b0001, 0b0001)));
        let c = schedule_doped_cd(PlaquetteLabel::C, GradientVariant::Linear).unwrap();
        assert_eq!(c.initial, InitialState::Fock((0b0101, 0b0001)));
        let d = schedule_doped_cd(PlaquetteLabel::D, GradientVariant::Linear).unwrap();
        assert_eq!(d.initial, InitialState::Fock((0b0001, 0b0101)));
        assert!(schedule_doped_cd(PlaquetteLabel::A, GradientVariant::Linear).is_err());
    }

    #[test]
    fn interpolation_hits_breakpoints() {
        let s = schedule_halffilled_a();
        assert_eq!(s.params_at(0.5), s.breakpoints[1].1);
        let q = s.params_at(0.75);
        assert!((q.u - 4.0).abs() < 1e-12);
        assert!((q.t(BondClass::IntraY) - 0.5).abs() < 1e-12);
        assert!((q.t(BondClass::IntraX) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reverse_twice_restores_breakpoints() {
        let s = schedule_doped_b(GradientVariant::Linear);
        let rr = reverse_sweep(&reverse_sweep(&s));
        for (a, b) in s.breakpoints.iter().zip(&rr.breakpoints) {
            assert!((a.0 - b.0).abs() < 1e-15);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn sudden_limit_is_initial_overlap() {
        let s = schedule_halffilled_a().with_tau_total(0.0);
        let r = run_preparation(&s, DEFAULT_DT).unwrap();
        let basis = s.basis().unwrap();
        let psi0 = s.initial_state(&basis).unwrap();
        let (w, _) = manifold_weight(&s.hamiltonian_at(1.0, &basis).unwrap(), &psi0).unwrap();
        assert!((r.fidelity - w).abs() < 1e-12);
    }
}
