//! Loschmidt echoes `G(τ) = ⟨ψ|exp(-iHτ)|ψ⟩`, their imaginary-time shifted
//! amplitudes, binomial shot noise and phase reconstruction from the
//! amplitude asymmetry between the two shifts.

use std::f64::consts::PI;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockVector, C64};
use crate::hamiltonian::SectorOperator;
use crate::io::{self, fmt_f64, Header};
use crate::lattice::LayerAssignment;
use crate::linalg;
use crate::propagate::Sign;
use crate::pulse::{apply_tiled_ite, ProductState, PulseLibrary, TiledMode};

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_THETA: f64 = 0.1;
pub const DEFAULT_SAMPLES: usize = 100;

const PROPAGATION_TOL: f64 = 1e-11;
const BREAKDOWN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    /// Index of the last point, so the grid holds `n + 1` times.
    pub n: usize,
}

impl TimeGrid {
    /// Points `m·dt` for `m = 0 … ⌊τ_max/dt⌋`.
    pub fn new(dt: f64, tau_max: f64) -> Result<Self> {
        if !(dt > 0.0) || !(tau_max >= 0.0) || !tau_max.is_finite() {
            return Err(Error::InvalidArgument(format!("bad time grid dt = {dt}, tau_max = {tau_max}")));
        }
        Ok(Self { dt, n: (tau_max / dt + 1e-9).floor() as usize })
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tau_max(&self) -> f64 {
        self.dt * self.n as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.dt * m as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|m| self.time(m)).collect()
    }

    /// Same spacing, truncated to `tau_max`.
    pub fn truncated(&self, tau_max: f64) -> Result<Self> {
        let g = Self::new(self.dt, tau_max)?;
        if g.n > self.n {
            return Err(Error::GridMismatch(format!("{tau_max} exceeds the grid end {}", self.tau_max())));
        }
        Ok(g)
    }

    pub fn matches(&self, other: &TimeGrid) -> bool {
        self.n == other.n && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Exact => f.write_str("exact"),
            Provenance::Sampled { samples, seed } => write!(f, "sampled(M={samples},seed={seed})"),
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(Provenance::Exact);
        }
        let bad = || Error::Parse { line: 0, msg: format!("bad provenance `{s}`") };
        let inner = s.strip_prefix("sampled(M=").and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
        let (m, seed) = inner.split_once(",seed=").ok_or_else(bad)?;
        Ok(Provenance::Sampled { samples: m.parse().map_err(|_| bad())?, seed: seed.parse().map_err(|_| bad())? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSeries {
    pub grid: TimeGrid,
    pub r: Vec<f64>,
    /// Amplitudes with the `exp(+Hθ)` and `exp(-Hθ)` shifts.
    pub r_plus: Vec<f64>,
    pub r_minus: Vec<f64>,
    pub theta: f64,
    /// Unwrapped phase; `φ(0) = 0`.
    pub phi: Vec<f64>,
    pub g: Vec<C64>,
    pub provenance: Provenance,
    /// Display-only energy `E_p`: the reported phase is `φ + E_p τ`.
    pub phase_shift: Option<f64>,
    /// Amplitude estimates that hit the sampling floor.
    pub floored: usize,
    /// Total simulated shots behind the series, zero when exact.
    pub shots: usize,
}

impl EchoSeries {
    pub fn reported_phi(&self) -> Vec<f64> {
        let e = self.phase_shift.unwrap_or(0.0);
        self.phi.iter().enumerate().map(|(m, p)| p + e * self.grid.time(m)).collect()
    }

    pub fn to_text(&self, extra: &Header) -> String {
        let mut h = Header::new();
        h.push("kind", "echo_series");
        h.push("units", io::UNITS_NOTE);
        h.push("dt", fmt_f64(self.grid.dt));
        h.push("tau_max", fmt_f64(self.grid.tau_max()));
        h.push("theta", fmt_f64(self.theta));
        h.push("provenance", &self.provenance);
        h.push("phase_shift", self.phase_shift.map_or("none".to_string(), fmt_f64));
        h.push("floored", self.floored);
        h.push("shots", self.shots);
        for (k, v) in extra.entries() {
            h.push(k, v);
        }
        let phi = self.reported_phi();
        let prov = self.provenance.to_string();
        let rows: Vec<Vec<String>> = (0..self.grid.len())
            .map(|m| {
                vec![
                    fmt_f64(self.grid.time(m)),
                    fmt_f64(self.r[m]),
                    fmt_f64(self.r_plus[m]),
                    fmt_f64(self.r_minus[m]),
                    fmt_f64(phi[m]),
                    fmt_f64(self.g[m].re),
                    fmt_f64(self.g[m].im),
                    prov.clone(),
                ]
            })
            .collect();
        io::write_table(&h, &["tau", "r", "r_plus", "r_minus", "phi", "re_g", "im_g", "provenance"], &rows)
    }

    pub fn from_text(text: &str) -> Result<(Self, Header)> {
        let t = io::parse_table(text)?;
        if t.header.get("kind") != Some("echo_series") {
            return Err(Error::Parse { line: 0, msg: "not an echo_series file".into() });
        }
        let tau = t.column_f64("tau")?;
        let dt = t.header.get_f64("dt")?;
        let grid = TimeGrid { dt, n: tau.len().saturating_sub(1) };
        if tau.iter().enumerate().any(|(m, x)| (x - grid.time(m)).abs() > 1e-9 * (1.0 + x.abs())) {
            return Err(Error::GridMismatch("tau column is not m·dt".into()));
        }
        let phase_shift = match t.header.get("phase_shift") {
            None | Some("none") => None,
            Some(_) => Some(t.header.get_f64("phase_shift")?),
        };
        let e = phase_shift.unwrap_or(0.0);
        let phi = t.column_f64("phi")?.iter().zip(&tau).map(|(p, x)| p - e * x).collect();
        let (re, im) = (t.column_f64("re_g")?, t.column_f64("im_g")?);
        let provenance = t
            .header
            .get("provenance")
            .ok_or_else(|| Error::Parse { line: 0, msg: "missing provenance".into() })?
            .parse()?;
        let count = |k: &str| -> Result<usize> { Ok(t.header.get_f64(k)? as usize) };
        let series = Self {
            grid,
            r: t.column_f64("r")?,
            r_plus: t.column_f64("r_plus")?,
            r_minus: t.column_f64("r_minus")?,
            theta: t.header.get_f64("theta")?,
            phi,
            g: re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)).collect(),
            provenance,
            phase_shift,
            floored: count("floored")?,
            shots: count("shots")?,
        };
        Ok((series, t.header))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotConfig {
    pub samples: usize,
    pub seed: u64,
    pub r_floor: f64,
}

impl ShotConfig {
    /// Floor defaults to `1/(2√M)`, below the resolution of `M` shots.
    pub fn new(samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidArgument("at least one sample per amplitude".into()));
        }
        Ok(Self { samples, seed, r_floor: 0.5 / (samples as f64).sqrt() })
    }
}

/// `(E_n, |⟨n|ψ⟩|²)` of `psi`. Uses the dense spectrum (computed once, cached
/// on `h`) up to the dense cap, the Lanczos measure of the cyclic subspace
/// beyond it.
pub fn spectral_weights(h: &SectorOperator, psi: &FockVector) -> Result<Vec<(f64, f64)>> {
    h.check(psi)?;
    if h.has_cached_spectrum() || h.dim() <= h.dense_cap() {
        return Ok(h.spectrum()?.overlaps(psi.amplitudes()));
    }
    let apply = |x: &[C64], y: &mut [C64]| h.apply(x, y);
    linalg::spectral_measure(&apply, psi.amplitudes(), BREAKDOWN)
}

/// Picks the branch of each phase closest to its predecessor.
pub fn unwrap_phase(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut offset = 0.0;
    for (k, &p) in raw.iter().enumerate() {
        if k > 0 {
            let prev = raw[k - 1] + offset;
            offset += (2.0 * PI) * ((prev - (p + offset)) / (2.0 * PI)).round();
        }
        out.push(p + offset);
    }
    out
}

fn echo_from_weights(weights: &[(f64, f64)], tau: f64) -> C64 {
    weights.iter().map(|(e, w)| w * C64::new(0.0, -e * tau).exp()).sum()
}

/// Exact echo on the grid. `r_plus`, `r_minus` repeat `r` (the `θ → 0`
/// limit) and `theta` is zero.
pub fn exact_echo(h: &SectorOperator, psi: &FockVector, grid: &TimeGrid) -> Result<EchoSeries> {
    let weights = spectral_weights(h, psi)?;
    Ok(echo_from_weights_series(&weights, grid))
}

pub fn echo_from_weights_series(weights: &[(f64, f64)], grid: &TimeGrid) -> EchoSeries {
    let g: Vec<C64> = grid.times().iter().map(|&t| echo_from_weights(weights, t)).collect();
    let r: Vec<f64> = g.iter().map(|z| z.norm()).collect();
    let phi = unwrap_phase(&g.iter().map(|z| z.arg()).collect::<Vec<_>>());
    EchoSeries {
        grid: *grid,
        r_plus: r.clone(),
        r_minus: r.clone(),
        r,
        theta: 0.0,
        phi,
        g,
        provenance: Provenance::Exact,
        phase_shift: None,
        floored: 0,
        shots: 0,
    }
}

/// Exact `dφ/dτ = Im(G'/G)` on the grid.
pub fn exact_phase_gradient(weights: &[(f64, f64)], grid: &TimeGrid) -> Vec<f64> {
    grid.times()
        .iter()
        .map(|&t| {
            let (mut g, mut dg) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for (e, w) in weights {
                let z = w * C64::new(0.0, -e * t).exp();
                g += z;
                dg += z * C64::new(0.0, -e);
            }
            (dg / g).im
        })
        .collect()
}

/// How `exp(±Hθ)` is realized before the quench.
#[derive(Debug, Clone, Copy)]
pub enum IteMode<'a> {
    ExactGlobal,
    ExactLocalTiled(&'a ProductState),
    PulseTiled(&'a ProductState, &'a PulseLibrary),
}

impl IteMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            IteMode::ExactGlobal => "exact_global",
            IteMode::ExactLocalTiled(_) => "exact_local_tiled",
            IteMode::PulseTiled(..) => "pulse_tiled",
        }
    }
}

/// Device-level amplitudes `|⟨ψ|exp(-iHτ)|v±⟩|` for the normalized shifted
/// states `v±`, and the classically known norms that reinflate them.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedAmplitudes {
    pub device_plus: Vec<f64>,
    pub device_minus: Vec<f64>,
    pub norm_plus: f64,
    pub norm_minus: f64,
}

impl ShiftedAmplitudes {
    pub fn r_plus(&self) -> Vec<f64> {
        self.device_plus.iter().map(|r| r * self.norm_plus).collect()
    }

    pub fn r_minus(&self) -> Vec<f64> {
        self.device_minus.iter().map(|r| r * self.norm_minus).collect()
    }
}

/// `|⟨ψ|exp(-iHτ_m)|v⟩|` on the grid by Krylov stepping of `v`.
fn overlap_trace(h: &SectorOperator, psi: &FockVector, v: &FockVector, grid: &TimeGrid) -> Result<Vec<f64>> {
    let apply = |x: &[C64], y: &mut [C64]| h.apply(x, y);
    let mut w = v.amplitudes().to_vec();
    let mut out = Vec::with_capacity(grid.len());
    for m in 0..grid.len() {
        if m > 0 {
            w = linalg::krylov_expm(&apply, &w, C64::new(0.0, -grid.dt), PROPAGATION_TOL)?;
        }
        out.push(linalg::dot(psi.amplitudes(), &w).norm());
    }
    Ok(out)
}

pub fn shifted_amplitudes(
    h: &SectorOperator,
    psi: &FockVector,
    grid: &TimeGrid,
    theta: f64,
    mode: IteMode<'_>,
) -> Result<ShiftedAmplitudes> {
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!("θ must be positive, got {theta}")));
    }
    h.check(psi)?;
    match mode {
        IteMode::ExactGlobal => {
            let weights = spectral_weights(h, psi)?;
            let branch = |s: f64| {
                let shifted: Vec<(f64, f64)> = weights.iter().map(|(e, w)| (*e, w * (s * e * theta).exp())).collect();
                let norm = weights.iter().map(|(e, w)| w * (2.0 * s * e * theta).exp()).sum::<f64>().sqrt();
                let amps: Vec<f64> =
                    grid.times().iter().map(|&t| echo_from_weights(&shifted, t).norm() / norm).collect();
                (amps, norm)
            };
            let (device_plus, norm_plus) = branch(1.0);
            let (device_minus, norm_minus) = branch(-1.0);
            Ok(ShiftedAmplitudes { device_plus, device_minus, norm_plus, norm_minus })
        }
        IteMode::ExactLocalTiled(product) | IteMode::PulseTiled(product, _) => {
            let tiled = match mode {
                IteMode::PulseTiled(_, lib) => TiledMode::Pulse(lib),
                _ => TiledMode::ExactLocalIte,
            };
            if product.psi.basis().fingerprint() != psi.basis().fingerprint() {
                return Err(Error::SectorMismatch("product state and echo state live in different sectors".into()));
            }
            let layers = LayerAssignment::new(&product.tiling);
            let mut out = Vec::with_capacity(2);
            for sign in [Sign::Plus, Sign::Minus] {
                let (v, norm) = apply_tiled_ite(product, &layers, theta, sign, tiled)?;
                out.push((overlap_trace(h, psi, &v, grid)?, norm));
            }
            let (device_minus, norm_minus) = out.pop().expect("two branches");
            let (device_plus, norm_plus) = out.pop().expect("two branches");
            Ok(ShiftedAmplitudes { device_plus, device_minus, norm_plus, norm_minus })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAmplitude {
    pub value: f64,
    /// Zero successes: the value is the floor, not an estimate.
    pub floored: bool,
}

/// `√(k/M)` with `k ~ Binomial(M, r²)`.
pub fn sample_amplitude(true_r: f64, shots: &ShotConfig, rng: &mut ChaCha8Rng) -> Result<SampledAmplitude> {
    if !(0.0..=1.0 + 1e-12).contains(&true_r) {
        return Err(Error::InvalidArgument(format!("amplitude {true_r} outside [0, 1]")));
    }
    let p = (true_r * true_r).min(1.0);
    let k = Binomial::new(shots.samples as u64, p).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng);
    if k == 0 {
        return Ok(SampledAmplitude { value: shots.r_floor, floored: true });
    }
    Ok(SampledAmplitude { value: (k as f64 / shots.samples as f64).sqrt(), floored: false })
}

/// Independent stream for series `series` at grid point `m`.
pub fn point_rng(seed: u64, series: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(series << 40 | m as u64);
    rng
}

fn sample_series(values: &[f64], shots: &ShotConfig, series: u64) -> Result<Vec<SampledAmplitude>> {
    values
        .par_iter()
        .enumerate()
        .map(|(m, &r)| sample_amplitude(r.min(1.0), shots, &mut point_rng(shots.seed, series, m)))
        .collect()
}

/// `dφ/dτ ≈ [ln r_- − ln r_+] / (2θ)`, where `r_+` is the amplitude with the
/// `exp(+Hθ)` shift, i.e. `r(τ + iθ)` in the analytic continuation of
/// `G(τ) = Σ p_n exp(-i E_n τ)`. An eigenstate gives exactly `-E_n`.
pub fn phase_gradient(r_plus: f64, r_minus: f64, theta: f64) -> Result<f64> {
    for r in [r_plus, r_minus] {
        if !(r > 0.0) {
            return Err(Error::NonPositiveAmplitude(r));
        }
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!("θ must be positive, got {theta}")));
    }
    Ok((r_minus.ln() - r_plus.ln()) / (2.0 * theta))
}

/// Cumulative trapezoid rule from `φ(0) = 0`.
pub fn integrate_phase(gradients: &[f64], grid: &TimeGrid) -> Result<Vec<f64>> {
    if gradients.len() != grid.len() {
        return Err(Error::GridMismatch(format!("{} gradients for {} grid points", gradients.len(), grid.len())));
    }
    let mut phi = Vec::with_capacity(gradients.len());
    let mut acc = 0.0;
    for (m, g) in gradients.iter().enumerate() {
        if m > 0 {
            acc += 0.5 * grid.dt * (gradients[m - 1] + g);
        }
        phi.push(acc);
    }
    Ok(phi)
}

/// `g = r e^{iφ}`. `phase_shift` only changes the reported phase.
pub fn assemble_echo(r: &[f64], phi: &[f64], grid: &TimeGrid, phase_shift: Option<f64>) -> Result<EchoSeries> {
    if r.len() != grid.len() || phi.len() != grid.len() {
        return Err(Error::GridMismatch("amplitude, phase and grid lengths differ".into()));
    }
    let g = r.iter().zip(phi).map(|(a, p)| C64::from_polar(*a, *p)).collect();
    Ok(EchoSeries {
        grid: *grid,
        r: r.to_vec(),
        r_plus: r.to_vec(),
        r_minus: r.to_vec(),
        theta: 0.0,
        phi: phi.to_vec(),
        g,
        provenance: Provenance::Exact,
        phase_shift,
        floored: 0,
        shots: 0,
    })
}

/// Order-of-magnitude shot count `N τ³ / (ε³ r_min²)` for a target phase
/// error `ε`, constant factor one.
pub fn sample_budget(n_sites: usize, tau: f64, epsilon: f64, r_min: f64) -> Result<f64> {
    if n_sites == 0 || !(tau > 0.0) || !(epsilon > 0.0) || !(r_min > 0.0) {
        return Err(Error::InvalidArgument("sample budget needs positive inputs".into()));
    }
    Ok(n_sites as f64 * tau.powi(3) / (epsilon.powi(3) * r_min * r_min))
}

/// Noise-free inputs of the protocol: the unshifted amplitude and the two
/// shifted ones. Computed once and reused across shot-noise seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolAmplitudes {
    pub grid: TimeGrid,
    pub theta: f64,
    pub r: Vec<f64>,
    pub shifted: ShiftedAmplitudes,
}

pub fn protocol_amplitudes(
    h: &SectorOperator,
    psi: &FockVector,
    grid: &TimeGrid,
    theta: f64,
    mode: IteMode<'_>,
) -> Result<ProtocolAmplitudes> {
    let r = exact_echo(h, psi, grid)?.r;
    let shifted = shifted_amplitudes(h, psi, grid, theta, mode)?;
    Ok(ProtocolAmplitudes { grid: *grid, theta, r, shifted })
}

/// Optional shot noise on `r`, `r_+`, `r_-` (three independent runs per
/// grid point), phase-gradient rule, trapezoid integration and assembly.
pub fn reconstruct_from(
    amps: &ProtocolAmplitudes,
    shots: Option<&ShotConfig>,
    phase_shift: Option<f64>,
) -> Result<EchoSeries> {
    let grid = &amps.grid;
    let shifted = &amps.shifted;
    let (r, dev_plus, dev_minus, floored, provenance, total) = match shots {
        None => (amps.r.clone(), shifted.device_plus.clone(), shifted.device_minus.clone(), 0, Provenance::Exact, 0),
        Some(s) => {
            let r = sample_series(&amps.r, s, 0)?;
            let p = sample_series(&shifted.device_plus, s, 1)?;
            let q = sample_series(&shifted.device_minus, s, 2)?;
            let floored = [&r, &p, &q].iter().flat_map(|v| v.iter()).filter(|a| a.floored).count();
            let values = |v: &[SampledAmplitude]| v.iter().map(|a| a.value).collect::<Vec<f64>>();
            (
                values(&r),
                values(&p),
                values(&q),
                floored,
                Provenance::Sampled { samples: s.samples, seed: s.seed },
                3 * grid.len() * s.samples,
            )
        }
    };
    let r_plus: Vec<f64> = dev_plus.iter().map(|v| v * shifted.norm_plus).collect();
    let r_minus: Vec<f64> = dev_minus.iter().map(|v| v * shifted.norm_minus).collect();
    let gradients: Vec<f64> =
        r_plus.iter().zip(&r_minus).map(|(p, m)| phase_gradient(*p, *m, amps.theta)).collect::<Result<_>>()?;
    let phi = integrate_phase(&gradients, grid)?;
    let mut series = assemble_echo(&r, &phi, grid, phase_shift)?;
    series.r_plus = r_plus;
    series.r_minus = r_minus;
    series.theta = amps.theta;
    series.provenance = provenance;
    series.floored = floored;
    series.shots = total;
    Ok(series)
}

pub fn reconstruct_echo(
    h: &SectorOperator,
    psi: &FockVector,
    grid: &TimeGrid,
    theta: f64,
    mode: IteMode<'_>,
    shots: Option<&ShotConfig>,
    phase_shift: Option<f64>,
) -> Result<EchoSeries> {
    reconstruct_from(&protocol_amplitudes(h, psi, grid, theta, mode)?, shots, phase_shift)
}
