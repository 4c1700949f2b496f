//! Optimal-control synthesis of local normalized-ITE unitaries and their
//! tiling over a plaquette lattice.
//!
//! A pair system is two 2×2 plaquettes side by side on a 4×2 patch. Local
//! sites are row-major, `l = x + 4y`; the left plaquette holds `x ∈ {0, 1}`.
//! The three controls multiply the hopping on intra-plaquette bonds parallel
//! to the coupling (`t_x`), the coupling bonds themselves (`t_x'`) and the
//! intra-plaquette bonds perpendicular to it (`t_y`). `U` stays fixed.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    block_keys, embed_blocks, embed_product, gather_mask, reorder_sign, Config, FockBasis, FockVector, NumberSector,
    C64,
};
use crate::hamiltonian::{assemble, plaquette_ground_state, HubbardParams, SectorOperator};
use crate::io::{self, fmt_f64, Header};
use crate::lattice::{BondClass, LatticeGeometry, LayerAssignment, PairKind, PlaquetteLabel, PlaquetteTiling};
use crate::linalg::{self, CsrMatrix};
use crate::optim::{self, LbfgsOptions};
use crate::propagate::{Propagator, Sign};
use crate::symmetry::{self, OrbitBasis, SymOp};

pub const DEFAULT_DT: f64 = 0.05;
pub const DEFAULT_U: f64 = 8.0;
pub const CONTROL_BOUNDS: (f64, f64) = (0.0, 10.0);
pub const FIDELITY_FLOOR: f64 = 0.999;
pub const POPULATION_FLOOR: f64 = 0.005;
pub const DEFAULT_RESTARTS: usize = 8;
pub const N_CONTROLS: usize = 3;
pub const CONTROL_NAMES: [&str; N_CONTROLS] = ["t_x", "t_xp", "t_y"];

const TAYLOR_TOL: f64 = 1e-13;

/// Pair-local sites of the left and right plaquettes, each row-major.
pub const LEFT_SITES: [usize; 4] = [0, 1, 4, 5];
pub const RIGHT_SITES: [usize; 4] = [2, 3, 6, 7];

/// Durations tried in order, in units of 1/t.
pub fn duration_grid() -> Vec<f64> {
    (1..=10).map(|k| 0.5 * k as f64).collect()
}

/// Drift plus linearly weighted Hermitian controls on one shared sparsity
/// pattern, so `h(p)` costs one pass over the nonzeros.
#[derive(Debug, Clone)]
pub struct ControlSet {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    drift: Vec<f64>,
    controls: Vec<Vec<f64>>,
    drift_shift: f64,
    drift_radius: f64,
    control_radius: Vec<f64>,
}

impl ControlSet {
    pub fn new(drift: &CsrMatrix, controls: &[CsrMatrix]) -> Result<Self> {
        let n = drift.dim();
        if controls.iter().any(|c| c.dim() != n) {
            return Err(Error::DimensionMismatch("controls and drift differ in dimension".into()));
        }
        let n_terms = 1 + controls.len();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals: Vec<Vec<f64>> = vec![Vec::new(); n_terms];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in 0..n {
            let mut row: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (t, m) in std::iter::once(drift).chain(controls).enumerate() {
                for (c, v) in m.row(r) {
                    row.entry(c).or_insert_with(|| vec![0.0; n_terms])[t] += v;
                }
            }
            let (mut d, mut off) = (0.0, 0.0);
            for (c, v) in row {
                if c == r {
                    d = v[0];
                } else {
                    off += v[0].abs();
                }
                cols.push(c as u32);
                for (t, x) in v.into_iter().enumerate() {
                    vals[t].push(x);
                }
            }
            lo = lo.min(d - off);
            hi = hi.max(d + off);
            row_ptr.push(cols.len());
        }
        if n == 0 {
            lo = 0.0;
            hi = 0.0;
        }
        let drift_vals = vals.remove(0);
        Ok(Self {
            n,
            row_ptr,
            cols,
            drift: drift_vals,
            controls: vals,
            drift_shift: 0.5 * (lo + hi),
            drift_radius: 0.5 * (hi - lo),
            control_radius: controls.iter().map(|c| c.norm_bound()).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    fn values(&self, p: &[f64]) -> Vec<f64> {
        let mut v = self.drift.clone();
        for (w, c) in p.iter().zip(&self.controls) {
            if *w != 0.0 {
                for (a, b) in v.iter_mut().zip(c) {
                    *a += w * b;
                }
            }
        }
        v
    }

    fn matvec(&self, vals: &[f64], x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += vals[k] * x[self.cols[k] as usize];
            }
            *yr = acc;
        }
    }

    /// `exp(-i h(p) τ) v`; negative `τ` runs backward.
    pub fn propagate(&self, p: &[f64], tau: f64, v: &[C64]) -> Result<Vec<C64>> {
        if tau == 0.0 {
            return Ok(v.to_vec());
        }
        let vals = self.values(p);
        let radius = self.radius(p);
        let apply = |x: &[C64], y: &mut [C64]| self.matvec(&vals, x, y);
        linalg::taylor_expm(&apply, v, C64::new(0.0, -tau), self.drift_shift, radius, TAYLOR_TOL)
    }

    fn radius(&self, p: &[f64]) -> f64 {
        self.drift_radius + p.iter().zip(&self.control_radius).map(|(w, r)| w.abs() * r).sum::<f64>()
    }

    fn check_controls(&self, x: &[f64]) -> Result<usize> {
        let m = self.n_controls();
        if m == 0 || x.len() % m != 0 {
            return Err(Error::DimensionMismatch(format!("{} control values for {m} controls", x.len())));
        }
        Ok(x.len() / m)
    }

    /// Applies the step product `U_ℓ ⋯ U_1` to `psi`, where step `k` uses
    /// `x[k·m .. (k+1)·m]`.
    pub fn evolve(&self, x: &[f64], dt: f64, psi: &[C64]) -> Result<Vec<C64>> {
        let n_steps = self.check_controls(x)?;
        let m = self.n_controls();
        let mut v = psi.to_vec();
        for k in 0..n_steps {
            v = self.propagate(&x[k * m..(k + 1) * m], dt, &v)?;
        }
        Ok(v)
    }

    pub fn fidelity(&self, x: &[f64], dt: f64, psi: &[C64], target: &[C64]) -> Result<f64> {
        Ok(linalg::dot(target, &self.evolve(x, dt, psi)?).norm_sqr())
    }

    /// Taylor terms `P_m = (z (h - σ))^m v / m!` of `exp(z h) v` along a
    /// segment, so that `exp(u z h) v = exp(u z σ) Σ_m u^m P_m` for `u ∈ [0, 1]`.
    fn taylor_terms(&self, vals: &[f64], v: &[C64], z: C64) -> Result<Vec<Vec<C64>>> {
        const MAX_TERMS: usize = 80;
        let scale = linalg::norm(v).max(1e-300);
        let mut terms = vec![v.to_vec()];
        let mut next = vec![C64::new(0.0, 0.0); self.n];
        for m in 1..=MAX_TERMS {
            let prev = &terms[m - 1];
            self.matvec(vals, prev, &mut next);
            let c = z / m as f64;
            let t: Vec<C64> = next.iter().zip(prev).map(|(a, b)| c * (a - self.drift_shift * b)).collect();
            let small = linalg::norm(&t) <= TAYLOR_TOL * scale;
            terms.push(t);
            if small && m > 2 {
                return Ok(terms);
            }
        }
        Err(Error::KrylovNonConvergence { residual: linalg::norm(&terms[MAX_TERMS]) / scale })
    }

    fn taylor_eval(&self, terms: &[Vec<C64>], z: C64, u: f64) -> Vec<C64> {
        let mut acc = terms[terms.len() - 1].clone();
        for t in terms[..terms.len() - 1].iter().rev() {
            for (a, b) in acc.iter_mut().zip(t) {
                *a = *a * u + b;
            }
        }
        let phase = (z * u * self.drift_shift).exp();
        acc.iter_mut().for_each(|a| *a *= phase);
        acc
    }

    /// Fidelity and its exact gradient by adjoint back-propagation.
    ///
    /// Within a step the derivative of `exp(-i h Δ)` along control `c` is
    /// `-i ∫_0^Δ exp(-i h (Δ-s)) H_c exp(-i h s) ds`. The step is cut into
    /// segments short enough for a stable Taylor series, and the integral
    /// over each segment is done by Gauss–Legendre quadrature, evaluating
    /// the forward and backward states at the nodes from one set of series
    /// terms per segment.
    pub fn fidelity_gradient(&self, x: &[f64], dt: f64, psi: &[C64], target: &[C64]) -> Result<(f64, Vec<f64>)> {
        const NODES: usize = 8;
        let n_steps = self.check_controls(x)?;
        let m = self.n_controls();
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(psi.to_vec());
        for k in 0..n_steps {
            let next = self.propagate(&x[k * m..(k + 1) * m], dt, &states[k])?;
            states.push(next);
        }
        let amp = linalg::dot(target, &states[n_steps]);
        let mut grad = vec![0.0; x.len()];
        let mut lambda = target.to_vec();
        let mut hc = vec![C64::new(0.0, 0.0); self.n];
        let (nodes, weights) = gauss_legendre(NODES);
        for k in (0..n_steps).rev() {
            let p = &x[k * m..(k + 1) * m];
            let vals = self.values(p);
            let segments = (self.radius(p) * dt.abs() / 2.0).ceil().max(1.0) as usize;
            let len = dt / segments as f64;
            let (zf, zb) = (C64::new(0.0, -len), C64::new(0.0, len));
            let mut fwd = Vec::with_capacity(segments * NODES);
            let mut y = states[k].clone();
            for seg in 0..segments {
                let terms = self.taylor_terms(&vals, &y, zf)?;
                fwd.extend(nodes.iter().map(|&u| self.taylor_eval(&terms, zf, u)));
                if seg + 1 < segments {
                    y = self.taylor_eval(&terms, zf, 1.0);
                }
            }
            let mut bwd = vec![Vec::new(); segments * NODES];
            let mut z = lambda;
            for seg in (0..segments).rev() {
                let terms = self.taylor_terms(&vals, &z, zb)?;
                for (j, &u) in nodes.iter().enumerate() {
                    bwd[seg * NODES + j] = self.taylor_eval(&terms, zb, 1.0 - u);
                }
                z = self.taylor_eval(&terms, zb, 1.0);
            }
            lambda = z;
            for c in 0..m {
                let mut integral = C64::new(0.0, 0.0);
                for (i, (f, b)) in fwd.iter().zip(&bwd).enumerate() {
                    self.matvec(&self.controls[c], f, &mut hc);
                    integral += weights[i % NODES] * linalg::dot(b, &hc);
                }
                let d_amp = C64::new(0.0, -len) * integral;
                grad[k * m + c] = 2.0 * (amp.conj() * d_amp).re;
            }
        }
        Ok((amp.norm_sqr(), grad))
    }
}

/// Nodes on `[0, 1]` and weights summing to one.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Pair-local hopping bonds by control role.
fn pair_bonds() -> Result<[Vec<(usize, usize, f64)>; N_CONTROLS]> {
    let geom = LatticeGeometry::new(4, 2)?;
    let mut out: [Vec<(usize, usize, f64)>; N_CONTROLS] = Default::default();
    for b in geom.bonds() {
        let role = match b.class {
            BondClass::IntraX => 0,
            BondClass::InterX => 1,
            BondClass::IntraY => 2,
            BondClass::InterY => unreachable!("a 4x2 patch has no inter-plaquette vertical bonds"),
        };
        out[role].push((b.i, b.j, 1.0));
    }
    Ok(out)
}

/// Pair controls on one local number sector, plus the coupling term `h_μν`.
fn pair_controls(basis: &FockBasis, u: f64) -> Result<(ControlSet, CsrMatrix)> {
    let bonds = pair_bonds()?;
    let controls: Vec<CsrMatrix> = bonds.iter().map(|b| assemble(basis, b, 0.0, &[])).collect();
    let drift = assemble(basis, &[], u, &[]);
    let coupling = controls[1].clone();
    Ok((ControlSet::new(&drift, &controls)?, coupling))
}

fn plaquette_vector(label: PlaquetteLabel, u: f64) -> Result<FockVector> {
    Ok(plaquette_ground_state(label, &HubbardParams::uniform(1.0, u))?.vector)
}

/// Two plaquettes in the canonical pair frame with their ground states.
pub struct PairSystem {
    kind: PairKind,
    u: f64,
    psi: FockVector,
    coupling: SectorOperator,
    controls: ControlSet,
    orbit: OrbitBasis,
    reduced: ControlSet,
}

/// Pair symmetries that commute with every control: the mirror across the
/// coupling axis, the mirror swapping the plaquettes when both carry the
/// same label, and spin flip at equal spin populations.
fn pair_symmetries(kind: PairKind, sector: NumberSector) -> Vec<SymOp> {
    let mirror_y = SymOp { perm: (0..8).map(|l| l % 4 + 4 * (1 - l / 4)).collect(), flip: false };
    let mirror_x = SymOp { perm: (0..8).map(|l| 3 - l % 4 + 4 * (l / 4)).collect(), flip: false };
    let flip = SymOp { perm: (0..8).collect(), flip: true };
    let mut out = vec![mirror_y];
    if kind.0 == kind.1 {
        out.push(mirror_x);
    }
    if sector.n_up == sector.n_down {
        out.push(flip);
    }
    out
}

impl PairSystem {
    pub fn new(kind: PairKind, u: f64) -> Result<Self> {
        let left = plaquette_vector(kind.0, u)?;
        let right = plaquette_vector(kind.1, u)?;
        let psi = embed_product(&left, &LEFT_SITES, &right, &RIGHT_SITES, 8)?;
        let basis = Arc::clone(psi.basis());
        let bonds = pair_bonds()?;
        let ops: Vec<CsrMatrix> = bonds.iter().map(|b| assemble(&basis, b, 0.0, &[])).collect();
        let drift = assemble(&basis, &[], u, &[]);
        let controls = ControlSet::new(&drift, &ops)?;
        let coupling = SectorOperator::from_matrix(Arc::clone(&basis), ops[1].clone(), &format!("h_{kind}"))?;

        // Optimization runs in the symmetry sector of Ψ_p, which every
        // control preserves. Symmetries Ψ_p does not respect are dropped.
        let kept: Vec<SymOp> = pair_symmetries(kind, basis.sector())
            .into_iter()
            .filter(|g| (symmetry::expectation(&basis, psi.amplitudes(), g).norm() - 1.0).abs() < 1e-9)
            .collect();
        let group = symmetry::generate_group(&kept, 8);
        let character: Vec<f64> =
            group.iter().map(|g| symmetry::expectation(&basis, psi.amplitudes(), g).re.round()).collect();
        let orbit = OrbitBasis::new(&basis, &group, &character)?;
        let reduced_ops: Vec<CsrMatrix> = ops.iter().map(|o| orbit.reduce_operator(o)).collect();
        let reduced = ControlSet::new(&orbit.reduce_operator(&drift), &reduced_ops)?;
        Ok(Self { kind, u, psi, coupling, controls, orbit, reduced })
    }

    /// Dimension of the symmetry sector used by the optimizer.
    pub fn reduced_dim(&self) -> usize {
        self.orbit.dim()
    }

    pub fn kind(&self) -> PairKind {
        self.kind
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn psi(&self) -> &FockVector {
        &self.psi
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    /// Coupling Hamiltonian `h_μν` between the two plaquettes.
    pub fn coupling(&self) -> &SectorOperator {
        &self.coupling
    }

    /// `Φ = exp(±h_μν θ)Ψ_p / N` and `N`.
    pub fn ite_target(&self, theta: f64, sign: Sign) -> Result<(FockVector, f64)> {
        Propagator::auto(&self.coupling)?.evolve_imag(&self.psi, theta, sign)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub pair_kind: PairKind,
    pub sign: Sign,
    pub theta: f64,
    pub u_fixed: f64,
    pub dt: f64,
    /// `(t_x, t_x', t_y)` per step.
    pub steps: Vec<[f64; N_CONTROLS]>,
}

impl PulseSequence {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.theta.is_finite() || !self.u_fixed.is_finite() {
            return Err(Error::InvalidArgument("pulse needs dt > 0 and finite θ, U".into()));
        }
        if self.steps.is_empty() && self.theta != 0.0 {
            return Err(Error::InvalidArgument("pulse without steps".into()));
        }
        let (lo, hi) = CONTROL_BOUNDS;
        if let Some(v) = self.steps.iter().flatten().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::InvalidArgument(format!("control {v} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.steps.len() as f64
    }

    pub fn flat(&self) -> Vec<f64> {
        self.steps.iter().flatten().copied().collect()
    }

    pub fn to_text(&self, extra: &Header) -> String {
        let mut h = Header::new();
        h.push("kind", "pulse_sequence");
        h.push("units", io::UNITS_NOTE);
        h.push("pair_kind", self.pair_kind);
        h.push("sign", self.sign);
        h.push("theta", fmt_f64(self.theta));
        h.push("u_fixed", fmt_f64(self.u_fixed));
        h.push("dt", fmt_f64(self.dt));
        h.push("n_steps", self.steps.len());
        for (k, v) in extra.entries() {
            h.push(k, v);
        }
        let rows: Vec<Vec<String>> = self
            .steps
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let mut r = vec![k.to_string(), fmt_f64(k as f64 * self.dt)];
                r.extend(s.iter().map(|v| fmt_f64(*v)));
                r
            })
            .collect();
        io::write_table(&h, &["step", "time", "t_x", "t_xp", "t_y"], &rows)
    }

    /// Parses a pulse file, returning the pulse and its full header.
    pub fn from_text(text: &str) -> Result<(Self, Header)> {
        let table = io::parse_table(text)?;
        let h = &table.header;
        if h.get("kind") != Some("pulse_sequence") {
            return Err(Error::Parse { line: 0, msg: "not a pulse_sequence file".into() });
        }
        let field = |k: &str| h.get(k).ok_or_else(|| Error::Parse { line: 0, msg: format!("missing `{k}`") });
        let cols: Vec<Vec<f64>> = CONTROL_NAMES.iter().map(|c| table.column_f64(c)).collect::<Result<_>>()?;
        let steps = (0..table.rows.len()).map(|k| [cols[0][k], cols[1][k], cols[2][k]]).collect();
        let pulse = Self {
            pair_kind: field("pair_kind")?.parse()?,
            sign: field("sign")?.parse()?,
            theta: h.get_f64("theta")?,
            u_fixed: h.get_f64("u_fixed")?,
            dt: h.get_f64("dt")?,
            steps,
        };
        pulse.validate()?;
        Ok((pulse, table.header))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRow {
    pub step: usize,
    pub time: f64,
    pub state: String,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseResult {
    pub pulse: PulseSequence,
    pub fidelity: f64,
    pub iterations: usize,
    pub population_trace: Option<Vec<PopulationRow>>,
}

impl PulseResult {
    pub fn to_text(&self, extra: &Header) -> String {
        let mut h = Header::new();
        h.push("fidelity", fmt_f64(self.fidelity));
        h.push("iterations", self.iterations);
        for (k, v) in extra.entries() {
            h.push(k, v);
        }
        self.pulse.to_text(&h)
    }
}

pub fn pulse_fidelity(system: &PairSystem, pulse: &PulseSequence, target: &FockVector) -> Result<f64> {
    pulse.validate()?;
    system.psi.check_same_basis(target)?;
    system.controls.fidelity(&pulse.flat(), pulse.dt, system.psi.amplitudes(), target.amplitudes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseConfig {
    pub pair_kind: PairKind,
    pub theta: f64,
    pub sign: Sign,
    pub u: f64,
    pub dt: f64,
    /// Candidate durations in 1/t, tried in ascending order.
    pub durations: Vec<f64>,
    pub bounds: (f64, f64),
    /// Range of the uniform random initial controls.
    pub init: (f64, f64),
    pub seed: u64,
    pub max_iters: usize,
    pub restarts: usize,
    pub fidelity_floor: f64,
    /// A restart stops as soon as it reaches this fidelity.
    pub stop_fidelity: f64,
}

impl PulseConfig {
    pub fn new(pair_kind: PairKind, theta: f64, sign: Sign) -> Self {
        Self {
            pair_kind,
            theta,
            sign,
            u: DEFAULT_U,
            dt: DEFAULT_DT,
            durations: duration_grid(),
            bounds: CONTROL_BOUNDS,
            init: (0.5, 1.5),
            seed: 0,
            max_iters: 400,
            restarts: DEFAULT_RESTARTS,
            fidelity_floor: FIDELITY_FLOOR,
            stop_fidelity: 0.9995,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(lo >= CONTROL_BOUNDS.0 && hi <= CONTROL_BOUNDS.1 && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bounds ({lo}, {hi}) outside {CONTROL_BOUNDS:?}")));
        }
        if !(self.dt > 0.0) || self.restarts == 0 || self.durations.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidArgument("pulse search needs dt > 0, restarts ≥ 1, positive durations".into()));
        }
        Ok(())
    }
}

struct Attempt {
    x: Vec<f64>,
    fidelity: f64,
    iterations: usize,
}

fn run_restart(
    system: &PairSystem,
    target: &FockVector,
    cfg: &PulseConfig,
    n_steps: usize,
    restart: usize,
) -> Result<Attempt> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((n_steps as u64) << 32 | restart as u64);
    let n = n_steps * N_CONTROLS;
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(cfg.init.0..=cfg.init.1)).collect();
    let lo = vec![cfg.bounds.0; n];
    let hi = vec![cfg.bounds.1; n];
    let psi = system.orbit.reduce(system.psi.amplitudes());
    let phi = system.orbit.reduce(target.amplitudes());
    let controls = &system.reduced;
    let mut failure = None;
    let eval = |x: &[f64]| match controls.fidelity_gradient(x, cfg.dt, &psi, &phi) {
        Ok((f, g)) => (1.0 - f, g.into_iter().map(|v| -v).collect()),
        Err(e) => {
            failure.get_or_insert(e);
            (f64::INFINITY, vec![0.0; x.len()])
        }
    };
    let opts = LbfgsOptions { max_iters: cfg.max_iters, f_target: Some(1.0 - cfg.stop_fidelity), ..Default::default() };
    let out = optim::minimize(eval, &x0, &lo, &hi, &opts);
    if let Some(e) = failure {
        return Err(e);
    }
    let fidelity = system.controls.fidelity(&out.x, cfg.dt, system.psi.amplitudes(), target.amplitudes())?;
    Ok(Attempt { x: out.x, fidelity, iterations: out.iterations })
}

/// Bounded quasi-Newton pulse search over the duration grid; the shortest
/// duration whose best restart reaches the fidelity floor wins.
pub fn optimize_pulse(cfg: &PulseConfig) -> Result<PulseResult> {
    cfg.validate()?;
    let system = PairSystem::new(cfg.pair_kind, cfg.u)?;
    optimize_pulse_on(&system, cfg)
}

pub fn optimize_pulse_on(system: &PairSystem, cfg: &PulseConfig) -> Result<PulseResult> {
    cfg.validate()?;
    if system.kind != cfg.pair_kind || system.u != cfg.u {
        return Err(Error::InvalidArgument("pair system does not match the pulse config".into()));
    }
    let make = |steps: Vec<[f64; N_CONTROLS]>| PulseSequence {
        pair_kind: cfg.pair_kind,
        sign: cfg.sign,
        theta: cfg.theta,
        u_fixed: cfg.u,
        dt: cfg.dt,
        steps,
    };
    if cfg.theta == 0.0 {
        return Ok(PulseResult { pulse: make(Vec::new()), fidelity: 1.0, iterations: 0, population_trace: None });
    }
    let (target, _) = system.ite_target(cfg.theta, cfg.sign)?;
    let mut durations = cfg.durations.clone();
    durations.sort_by(f64::total_cmp);
    let mut best: Option<PulseResult> = None;
    for d in durations {
        let n_steps = ((d / cfg.dt).round() as usize).max(1);
        let attempts: Vec<Attempt> = (0..cfg.restarts)
            .into_par_iter()
            .map(|r| run_restart(system, &target, cfg, n_steps, r))
            .collect::<Result<_>>()?;
        let top = attempts
            .into_iter()
            .reduce(|a, b| if b.fidelity > a.fidelity { b } else { a })
            .expect("at least one restart");
        let steps = top.x.chunks(N_CONTROLS).map(|c| [c[0], c[1], c[2]]).collect();
        let result = PulseResult {
            pulse: make(steps),
            fidelity: top.fidelity,
            iterations: top.iterations,
            population_trace: None,
        };
        if result.fidelity >= cfg.fidelity_floor {
            return Ok(result);
        }
        if best.as_ref().map_or(true, |b| result.fidelity > b.fidelity) {
            best = Some(result);
        }
    }
    let best = best.expect("duration grid is never empty after validation");
    Err(Error::FidelityFloor { best: best.fidelity, floor: cfg.fidelity_floor, result: Box::new(best) })
}

/// Occupation string of a pair-local configuration: rows `y = 0` then
/// `y = 1` separated by `/`, each site one of `0 u d 2`.
pub fn config_label(cfg: Config, n_x: usize, n_y: usize) -> String {
    let mut out = String::new();
    for y in 0..n_y {
        if y > 0 {
            out.push('/');
        }
        for x in 0..n_x {
            let s = x + n_x * y;
            let (u, d) = (cfg.0 >> s & 1, cfg.1 >> s & 1);
            out.push(match (u, d) {
                (0, 0) => '0',
                (1, 0) => 'u',
                (0, 1) => 'd',
                _ => '2',
            });
        }
    }
    out
}

/// Fock populations above `floor` after every step, starting from `Ψ_p`.
pub fn population_trace(system: &PairSystem, pulse: &PulseSequence, floor: f64) -> Result<Vec<PopulationRow>> {
    pulse.validate()?;
    let basis = system.psi.basis();
    let mut rows = Vec::new();
    let mut v = system.psi.amplitudes().to_vec();
    for k in 0..=pulse.steps.len() {
        if k > 0 {
            v = system.controls.propagate(&pulse.steps[k - 1], pulse.dt, &v)?;
        }
        let mut here: Vec<(Config, f64)> =
            v.iter().enumerate().map(|(i, a)| (basis.state(i), a.norm_sqr())).filter(|(_, p)| *p >= floor).collect();
        here.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (cfg, p) in here {
            rows.push(PopulationRow {
                step: k,
                time: k as f64 * pulse.dt,
                state: config_label(cfg, 4, 2),
                population: p,
            });
        }
    }
    Ok(rows)
}

pub fn population_table(rows: &[PopulationRow], extra: &Header) -> String {
    let mut h = Header::new();
    h.push("kind", "population_trace");
    h.push("units", io::UNITS_NOTE);
    h.push("state_format", "row y=0 / row y=1, sites 0 u d 2");
    for (k, v) in extra.entries() {
        h.push(k, v);
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.step.to_string(), fmt_f64(r.time), r.state.clone(), fmt_f64(r.population)])
        .collect();
    io::write_table(&h, &["step", "time", "state", "population"], &body)
}

/// Synthesized pulses keyed by pair kind and ITE sign.
#[derive(Debug, Clone, Default)]
pub struct PulseLibrary {
    pulses: BTreeMap<(PairKind, Sign), PulseSequence>,
}

impl PulseLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pulse: PulseSequence) {
        self.pulses.insert((pulse.pair_kind, pulse.sign), pulse);
    }

    pub fn get(&self, kind: PairKind, sign: Sign) -> Option<&PulseSequence> {
        self.pulses.get(&(kind, sign))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PulseSequence> {
        self.pulses.values()
    }
}

/// Plaquette product state on a tiled lattice.
#[derive(Debug, Clone)]
pub struct ProductState {
    pub geom: LatticeGeometry,
    pub tiling: PlaquetteTiling,
    pub u: f64,
    pub psi: FockVector,
    /// `λ_p`, the sum of plaquette ground energies.
    pub lambda_p: f64,
    plaquette_vectors: Vec<FockVector>,
}

impl ProductState {
    pub fn new(geom: &LatticeGeometry, tiling: &PlaquetteTiling, u: f64) -> Result<Self> {
        let mut by_label: BTreeMap<PlaquetteLabel, (FockVector, f64)> = BTreeMap::new();
        for p in &tiling.plaquettes {
            if !by_label.contains_key(&p.label) {
                let g = plaquette_ground_state(p.label, &HubbardParams::uniform(1.0, u))?;
                by_label.insert(p.label, (g.vector, g.energy));
            }
        }
        let plaquette_vectors: Vec<FockVector> =
            tiling.plaquettes.iter().map(|p| by_label[&p.label].0.clone()).collect();
        let lambda_p = tiling.plaquettes.iter().map(|p| by_label[&p.label].1).sum();
        let parts: Vec<(&FockVector, &[usize])> =
            plaquette_vectors.iter().zip(&tiling.plaquettes).map(|(v, p)| (v, &p.sites[..])).collect();
        let psi = embed_blocks(&parts, geom.n_sites())?;
        Ok(Self { geom: geom.clone(), tiling: tiling.clone(), u, psi, lambda_p, plaquette_vectors })
    }

    /// Restriction of the product state to one coupling, in its pair frame.
    pub fn pair_state(&self, frame: &PairFrame) -> Result<FockVector> {
        let local = |plaquette: usize| -> Vec<usize> {
            self.tiling.plaquettes[plaquette]
                .sites
                .iter()
                .map(|s| frame.sites.iter().position(|g| g == s).expect("plaquette lies in its coupling"))
                .collect()
        };
        embed_product(
            &self.plaquette_vectors[frame.left],
            &local(frame.left),
            &self.plaquette_vectors[frame.right],
            &local(frame.right),
            8,
        )
    }
}

/// Placement of the canonical 4×2 pair patch on one coupling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairFrame {
    pub coupling: usize,
    pub kind: PairKind,
    /// Plaquette playing the canonical left role (label `kind.0`).
    pub left: usize,
    pub right: usize,
    /// Global site of every pair-local site.
    pub sites: [usize; 8],
}

/// The local `x` axis runs from the left-role plaquette towards the other
/// one, so parallel, coupling and perpendicular bonds keep their roles on
/// vertical and mirrored couplings.
pub fn pair_frame(geom: &LatticeGeometry, tiling: &PlaquetteTiling, coupling: usize) -> PairFrame {
    let c = &tiling.couplings[coupling];
    let kind = c.pair_kind(tiling);
    let (left, right) = if tiling.plaquettes[c.mu].label == kind.0 { (c.mu, c.nu) } else { (c.nu, c.mu) };
    let (lx, ly) = tiling.plaquettes[left].anchor;
    let (rx, ry) = tiling.plaquettes[right].anchor;
    let (lx, ly, rx, ry) = (lx as isize, ly as isize, rx as isize, ry as isize);
    let mut sites = [0usize; 8];
    for (l, s) in sites.iter_mut().enumerate() {
        let (x, y) = ((l % 4) as isize, (l / 4) as isize);
        let (gx, gy) = match (rx - lx, ry - ly) {
            (2, 0) => (lx + x, ly + y),
            (-2, 0) => (lx + 1 - x, ly + y),
            (0, 2) => (lx + y, ly + x),
            (0, -2) => (lx + y, ly + 1 - x),
            d => unreachable!("coupled plaquettes at offset {d:?}"),
        };
        *s = geom.site(gx as usize, gy as usize);
    }
    PairFrame { coupling, kind, left, right, sites }
}

/// Applies a local operation on the pair sites of `psi`.
///
/// The global vector is regrouped as columns `a_R(L)` over local
/// configurations `L`, one column per configuration `R` of the remaining
/// sites, with the fermionic sign of moving the pair modes in front. `act`
/// receives the columns of each local number sector.
fn apply_local<F>(psi: &FockVector, sites: &[usize; 8], mut act: F) -> Result<FockVector>
where
    F: FnMut(&Arc<FockBasis>, &mut [Vec<C64>]) -> Result<()>,
{
    struct Group {
        basis: Arc<FockBasis>,
        columns: Vec<Vec<C64>>,
        rest_index: HashMap<Config, usize>,
    }
    let basis = psi.basis();
    let n = basis.n_sites();
    let mask = sites.iter().fold(0u32, |m, s| m | 1 << s);
    let rest: Vec<usize> = (0..n).filter(|s| mask & (1 << s) == 0).collect();
    let mut groups: BTreeMap<(usize, usize), Group> = BTreeMap::new();
    let mut placement = Vec::with_capacity(basis.dim());
    let mut keys = Vec::with_capacity(2 * n);
    for (a, amp) in psi.amplitudes().iter().enumerate() {
        let cfg = basis.state(a);
        let local = (gather_mask(cfg.0, sites), gather_mask(cfg.1, sites));
        let other = (gather_mask(cfg.0, &rest), gather_mask(cfg.1, &rest));
        keys.clear();
        block_keys(local, sites, n, &mut keys);
        block_keys(other, &rest, n, &mut keys);
        let sign = reorder_sign(&keys);
        let key = (local.0.count_ones() as usize, local.1.count_ones() as usize);
        let group = match groups.entry(key) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(Group {
                basis: Arc::new(FockBasis::new(NumberSector::new(key.0, key.1, 8)?)?),
                columns: Vec::new(),
                rest_index: HashMap::new(),
            }),
        };
        let dim = group.basis.dim();
        let next = group.columns.len();
        let col = *group.rest_index.entry(other).or_insert(next);
        if col == next {
            group.columns.push(vec![C64::new(0.0, 0.0); dim]);
        }
        let row = group.basis.index(local).expect("local configuration lies in its sector");
        group.columns[col][row] = sign * amp;
        placement.push((key, col, row, sign));
    }
    for g in groups.values_mut() {
        act(&g.basis, &mut g.columns)?;
    }
    let out = placement.into_iter().map(|(key, col, row, sign)| sign * groups[&key].columns[col][row]).collect();
    Ok(psi.with_amplitudes(out))
}

/// Unitary on one sector sending unit `psi` to unit `phi`: a rotation in
/// their plane, identity on the orthogonal complement.
struct PlaneRotation {
    sector: NumberSector,
    e1: Vec<C64>,
    e2: Vec<C64>,
    c: C64,
    s: f64,
}

impl PlaneRotation {
    fn new(psi: &FockVector, phi: &FockVector) -> Result<Self> {
        psi.check_same_basis(phi)?;
        let e1 = psi.amplitudes().to_vec();
        let c = linalg::dot(&e1, phi.amplitudes());
        let mut e2 = phi.amplitudes().to_vec();
        linalg::axpy(-c, &e1, &mut e2);
        let s = linalg::norm(&e2);
        if s > 1e-300 {
            linalg::scale(C64::new(1.0 / s, 0.0), &mut e2);
        }
        Ok(Self { sector: psi.basis().sector(), e1, e2, c, s })
    }

    fn apply(&self, v: &mut [C64]) {
        if self.s <= 1e-15 {
            return;
        }
        let x1 = linalg::dot(&self.e1, v);
        let x2 = linalg::dot(&self.e2, v);
        let y1 = self.c * x1 - self.s * x2;
        let y2 = self.s * x1 + self.c.conj() * x2;
        linalg::axpy(y1 - x1, &self.e1, v);
        linalg::axpy(y2 - x2, &self.e2, v);
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TiledMode<'a> {
    ExactLocalIte,
    Pulse(&'a PulseLibrary),
}

/// Normalized product of local ITE unitaries, layer by layer in layer-index
/// order and coupling order inside a layer, applied to the product state.
///
/// Returns the state and `exp(±λ_p θ) ∏ N_μν`, with `N_μν` the norm of the
/// local ITE image of the coupling's pair state.
pub fn apply_tiled_ite(
    product: &ProductState,
    layers: &LayerAssignment,
    theta: f64,
    sign: Sign,
    mode: TiledMode<'_>,
) -> Result<(FockVector, f64)> {
    let tiling = &product.tiling;
    if layers.layer_of.len() != tiling.couplings.len() {
        return Err(Error::DimensionMismatch("layer assignment does not match the tiling".into()));
    }
    let mut psi = product.psi.clone();
    let mut log_norm = sign.value() * product.lambda_p * theta;
    let mut sector_controls: HashMap<(usize, usize), ControlSet> = HashMap::new();
    for layer in layers.layers() {
        for c in layer {
            let frame = pair_frame(&product.geom, tiling, c);
            let pair = product.pair_state(&frame)?;
            let (_, coupling) = pair_controls(pair.basis(), product.u)?;
            let h = SectorOperator::from_matrix(Arc::clone(pair.basis()), coupling, "h_pair")?;
            let (phi, n) = Propagator::auto(&h)?.evolve_imag(&pair, theta, sign)?;
            log_norm += n.ln();
            match mode {
                TiledMode::ExactLocalIte => {
                    let rot = PlaneRotation::new(&pair, &phi)?;
                    psi = apply_local(&psi, &frame.sites, |basis, cols| {
                        if basis.sector() == rot.sector {
                            cols.iter_mut().for_each(|v| rot.apply(v));
                        }
                        Ok(())
                    })?;
                }
                TiledMode::Pulse(lib) => {
                    let pulse = lib
                        .get(frame.kind, sign)
                        .filter(|p| (p.theta - theta).abs() < 1e-12 && p.u_fixed == product.u)
                        .ok_or_else(|| {
                            Error::MissingPulse(format!("{} ({sign}, θ = {theta}, U = {})", frame.kind, product.u))
                        })?;
                    let left = plaquette_vector(frame.kind.0, product.u)?;
                    let right = plaquette_vector(frame.kind.1, product.u)?;
                    let canonical = embed_product(&left, &LEFT_SITES, &right, &RIGHT_SITES, 8)?;
                    if canonical.fidelity(&pair)? < 1.0 - 1e-9 {
                        return Err(Error::MissingPulse(format!(
                            "{} pulse does not match the pair state on coupling {c}",
                            frame.kind
                        )));
                    }
                    let x = pulse.flat();
                    psi = apply_local(&psi, &frame.sites, |basis, cols| {
                        let s = basis.sector();
                        let key = (s.n_up, s.n_down);
                        if !sector_controls.contains_key(&key) {
                            sector_controls.insert(key, pair_controls(basis, product.u)?.0);
                        }
                        let set = &sector_controls[&key];
                        for v in cols.iter_mut() {
                            if linalg::norm(v) > 0.0 {
                                *v = set.evolve(&x, pulse.dt, v)?;
                            }
                        }
                        Ok(())
                    })?;
                }
            }
        }
    }
    Ok((psi, log_norm.exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1, 3, 8, 20] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            let deg = 2 * n - 1;
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((got - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n = {n}");
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn pair_roles() {
        let b = pair_bonds().unwrap();
        assert_eq!(b[0].iter().map(|h| (h.0, h.1)).collect::<Vec<_>>(), vec![(0, 1), (2, 3), (4, 5), (6, 7)]);
        assert_eq!(b[1].iter().map(|h| (h.0, h.1)).collect::<Vec<_>>(), vec![(1, 2), (5, 6)]);
        assert_eq!(b[2].len(), 4);
    }

    #[test]
    fn config_labels() {
        assert_eq!(config_label((0b1010_0101, 0b0101_1010), 4, 2), "udud/dudu");
        assert_eq!(config_label((0b1, 0b11), 4, 2), "2d00/0000");
    }

    #[test]
    fn plane_rotation_maps_psi_to_phi() {
        let b = Arc::new(FockBasis::new(NumberSector::new(1, 0, 3).unwrap()).unwrap());
        let psi = FockVector::from_real(Arc::clone(&b), &[1.0, 0.0, 0.0]).unwrap();
        let phi = FockVector::from_real(Arc::clone(&b), &[0.6, 0.8, 0.0]).unwrap();
        let rot = PlaneRotation::new(&psi, &phi).unwrap();
        let mut v = psi.amplitudes().to_vec();
        rot.apply(&mut v);
        assert!(v.iter().zip(phi.amplitudes()).all(|(a, b)| (a - b).norm() < 1e-15));
        let mut w = vec![C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
        rot.apply(&mut w);
        assert_eq!(w[2], C64::new(1.0, 0.0));
    }

    #[test]
    fn pulse_text_round_trip() {
        let p = PulseSequence {
            pair_kind: "AB".parse().unwrap(),
            sign: Sign::Minus,
            theta: 0.1,
            u_fixed: 8.0,
            dt: 0.05,
            steps: vec![[0.5, 1.25, 10.0], [0.0, 3.0, 1.0 / 3.0]],
        };
        let mut extra = Header::new();
        extra.push("fidelity", 0.9991);
        let (q, h) = PulseSequence::from_text(&p.to_text(&extra)).unwrap();
        assert_eq!(p, q);
        assert_eq!(h.get("fidelity"), Some("0.9991"));
    }

    #[test]
    fn out_of_bounds_controls_are_rejected() {
        let p = PulseSequence {
            pair_kind: "AA".parse().unwrap(),
            sign: Sign::Plus,
            theta: 0.1,
            u_fixed: 8.0,
            dt: 0.05,
            steps: vec![[10.5, 1.0, 1.0]],
        };
        assert!(p.validate().is_err());
    }
}
