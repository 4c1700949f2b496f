//! Fermi–Hubbard operators restricted to one number sector.
//!
//! `H = -Σ_⟨ij⟩σ t_ij (c†_iσ c_jσ + h.c.) + U Σ_i n_i↑ n_i↓ + Σ_iσ μ_i n_iσ`

use std::fmt;
use std::sync::{Arc, OnceLock};

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{double_occupancy, hop, occupation, FockBasis, FockVector, NumberSector, Spin, C64};
use crate::lattice::{BondClass, LatticeGeometry, PlaquetteLabel, PlaquetteTiling};
use crate::linalg::{self, CsrMatrix};

pub const DEFAULT_DENSE_CAP: usize = 6000;

/// Gap below which a ground state is flagged as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubbardParams {
    /// Hopping per bond class, indexed in `BondClass::ALL` order.
    pub t_by_class: [f64; 4],
    pub u: f64,
    /// Spin-independent site potentials; empty means zero everywhere.
    pub mu: Vec<f64>,
}

impl HubbardParams {
    pub fn uniform(t: f64, u: f64) -> Self {
        Self { t_by_class: [t; 4], u, mu: Vec::new() }
    }

    pub fn t(&self, class: BondClass) -> f64 {
        self.t_by_class[BondClass::ALL.iter().position(|&c| c == class).unwrap()]
    }

    pub fn set_t(&mut self, class: BondClass, t: f64) {
        let k = BondClass::ALL.iter().position(|&c| c == class).unwrap();
        self.t_by_class[k] = t;
    }

    pub fn mu_at(&self, site: usize) -> f64 {
        self.mu.get(site).copied().unwrap_or(0.0)
    }

    fn validate(&self, n_sites: usize) -> Result<()> {
        let finite = self.t_by_class.iter().chain(&self.mu).all(|x| x.is_finite()) && self.u.is_finite();
        if !finite {
            return Err(Error::InvalidArgument("non-finite Hubbard parameter".into()));
        }
        if !self.mu.is_empty() && self.mu.len() != n_sites {
            return Err(Error::DimensionMismatch(format!("{} site potentials for {n_sites} sites", self.mu.len())));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!("t={:?} u={} mu={:?}", self.t_by_class, self.u, self.mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermFilter {
    All,
    /// Intra-plaquette hops plus interaction and potentials (`H_□`).
    IntraOnly,
    /// Inter-plaquette hops (`H_Λ`).
    InterOnly,
    /// Hops across one coupling, `h_μν`.
    Coupling(usize, usize),
    KineticOnly,
}

impl fmt::Display for TermFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermFilter::All => f.write_str("all"),
            TermFilter::IntraOnly => f.write_str("intra_only"),
            TermFilter::InterOnly => f.write_str("inter_only"),
            TermFilter::Coupling(m, n) => write!(f, "coupling({m},{n})"),
            TermFilter::KineticOnly => f.write_str("kinetic_only"),
        }
    }
}

/// A Hermitian operator on one sector, stored sparse. The dense
/// eigendecomposition is computed on first use and cached.
pub struct SectorOperator {
    basis: Arc<FockBasis>,
    matrix: CsrMatrix,
    fingerprint: String,
    dense_cap: usize,
    spectrum: OnceLock<Arc<Spectrum>>,
}

impl fmt::Debug for SectorOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SectorOperator")
            .field("basis", &self.basis.fingerprint())
            .field("nnz", &self.matrix.nnz())
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

impl SectorOperator {
    pub fn from_matrix(basis: Arc<FockBasis>, matrix: CsrMatrix, label: &str) -> Result<Self> {
        if matrix.dim() != basis.dim() {
            return Err(Error::DimensionMismatch(format!(
                "matrix of dimension {} for basis of dimension {}",
                matrix.dim(),
                basis.dim()
            )));
        }
        if !matrix.is_symmetric(1e-12) {
            return Err(Error::InvalidArgument("operator is not Hermitian".into()));
        }
        let fingerprint = crate::io::short_hash(format!("{}|{label}", basis.fingerprint()));
        Ok(Self { basis, matrix, fingerprint, dense_cap: DEFAULT_DENSE_CAP, spectrum: OnceLock::new() })
    }

    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn dense_cap(&self) -> usize {
        self.dense_cap
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.matrix.matvec(x, y)
    }

    pub fn apply_vector(&self, v: &FockVector) -> Result<FockVector> {
        self.check(v)?;
        Ok(v.with_amplitudes(self.matrix.apply(v.amplitudes())))
    }

    pub fn expectation(&self, v: &FockVector) -> Result<f64> {
        self.check(v)?;
        Ok(self.matrix.expectation(v.amplitudes()))
    }

    pub fn check(&self, v: &FockVector) -> Result<()> {
        if v.basis().sector() != self.basis.sector() {
            return Err(Error::SectorMismatch(format!(
                "vector in {} applied to operator on {}",
                v.basis().fingerprint(),
                self.basis.fingerprint()
            )));
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Result<Mat<f64>> {
        if self.dim() > self.dense_cap {
            return Err(Error::DenseCapExceeded { dim: self.dim(), cap: self.dense_cap });
        }
        Ok(self.matrix.to_dense())
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().sum()
    }

    /// `Σ_k c_k O_k` over operators on the same sector.
    pub fn combine(terms: &[(f64, &SectorOperator)], label: &str) -> Result<SectorOperator> {
        let first = terms.first().ok_or_else(|| Error::InvalidArgument("empty operator combination".into()))?;
        for (_, o) in terms {
            if o.basis.sector() != first.1.basis.sector() {
                return Err(Error::SectorMismatch("combining operators on different sectors".into()));
            }
        }
        let m = CsrMatrix::linear_combination(&terms.iter().map(|(c, o)| (*c, &o.matrix)).collect::<Vec<_>>())?;
        SectorOperator::from_matrix(Arc::clone(&first.1.basis), m, label)
    }

    /// Cached dense eigendecomposition.
    pub fn spectrum(&self) -> Result<Arc<Spectrum>> {
        if let Some(s) = self.spectrum.get() {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(full_spectrum(self)?);
        let _ = self.spectrum.set(Arc::clone(&s));
        Ok(s)
    }

    pub fn has_cached_spectrum(&self) -> bool {
        self.spectrum.get().is_some()
    }
}

/// Hop list `(i, j, t)` and diagonal parameters selected by a filter.
fn selected_terms(
    geom: &LatticeGeometry,
    tiling: Option<&PlaquetteTiling>,
    params: &HubbardParams,
    filter: TermFilter,
) -> Result<(Vec<(usize, usize, f64)>, bool)> {
    let needs_tiling = matches!(filter, TermFilter::InterOnly | TermFilter::Coupling(..));
    if needs_tiling && tiling.is_none() {
        return Err(Error::MissingTiling(filter.to_string()));
    }
    let is_inter = |i: usize, j: usize, class: BondClass| match tiling {
        Some(t) => t.site_owner[i] != t.site_owner[j],
        None => !class.is_intra(),
    };
    let mut hops = Vec::new();
    for b in geom.bonds() {
        let keep = match filter {
            TermFilter::All | TermFilter::KineticOnly => true,
            TermFilter::IntraOnly => !is_inter(b.i, b.j, b.class),
            TermFilter::InterOnly => is_inter(b.i, b.j, b.class),
            TermFilter::Coupling(mu, nu) => {
                let t = tiling.unwrap();
                let (a, c) = (t.site_owner[b.i], t.site_owner[b.j]);
                (a == mu && c == nu) || (a == nu && c == mu)
            }
        };
        if keep {
            hops.push((b.i, b.j, params.t(b.class)));
        }
    }
    if let (TermFilter::Coupling(mu, nu), Some(t)) = (filter, tiling) {
        if t.find_coupling(mu, nu).is_none() {
            return Err(Error::InvalidArgument(format!("plaquettes {mu} and {nu} are not coupled")));
        }
    }
    let diagonal = matches!(filter, TermFilter::All | TermFilter::IntraOnly);
    Ok((hops, diagonal))
}

/// Assembles `-Σ t (c†_i c_j + h.c.) + U Σ n↑n↓ + Σ μ n` on a basis.
pub fn assemble(basis: &FockBasis, hops: &[(usize, usize, f64)], u: f64, mu: &[f64]) -> CsrMatrix {
    let n = basis.dim();
    let ns = basis.n_sites();
    let mut trip: Vec<(u32, u32, f64)> = Vec::with_capacity(n * (1 + 4 * hops.len() / 2));
    for a in 0..n {
        let cfg = basis.state(a);
        let mut diag = 0.0;
        if u != 0.0 {
            diag += u * (0..ns).map(|i| double_occupancy(cfg, i)).sum::<u32>() as f64;
        }
        for (i, &m) in mu.iter().enumerate() {
            diag += m * occupation(cfg, i) as f64;
        }
        if diag != 0.0 {
            trip.push((a as u32, a as u32, diag));
        }
        for &(i, j, t) in hops {
            if t == 0.0 {
                continue;
            }
            for spin in Spin::BOTH {
                for (p, q) in [(i, j), (j, i)] {
                    if let Some((new, sign)) = hop(cfg, p, q, spin) {
                        let b = basis.index(new).expect("hopping conserves the sector");
                        trip.push((b as u32, a as u32, -t * sign));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(n, trip)
}

pub fn build_hubbard(
    geom: &LatticeGeometry,
    tiling: Option<&PlaquetteTiling>,
    params: &HubbardParams,
    sector: NumberSector,
    filter: TermFilter,
) -> Result<SectorOperator> {
    build_hubbard_on(geom, tiling, params, Arc::new(FockBasis::new(sector)?), filter)
}

pub fn build_hubbard_on(
    geom: &LatticeGeometry,
    tiling: Option<&PlaquetteTiling>,
    params: &HubbardParams,
    basis: Arc<FockBasis>,
    filter: TermFilter,
) -> Result<SectorOperator> {
    if basis.n_sites() != geom.n_sites() {
        return Err(Error::SectorMismatch(format!(
            "{}-site sector on a {}-site lattice",
            basis.n_sites(),
            geom.n_sites()
        )));
    }
    params.validate(geom.n_sites())?;
    let (hops, diagonal) = selected_terms(geom, tiling, params, filter)?;
    let (u, mu): (f64, &[f64]) = if diagonal { (params.u, &params.mu) } else { (0.0, &[]) };
    let m = assemble(&basis, &hops, u, mu);
    let label = format!(
        "{}|{}|{}|{}",
        geom.fingerprint(),
        tiling.map(|t| crate::io::short_hash(t.to_text())).unwrap_or_default(),
        params.describe(),
        filter
    );
    SectorOperator::from_matrix(basis, m, &label)
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub energy: f64,
    pub vector: FockVector,
    /// Distance to the next eigenvalue.
    pub gap: f64,
    pub degenerate: bool,
}

fn start_vector(n: usize) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..n).map(|_| C64::new(rng.gen::<f64>() - 0.5, 0.0)).collect()
}

/// Lowest eigenpair with a degeneracy flag; dense below 400 states,
/// Lanczos (with a deflated second run for the gap) above.
pub fn ground_state(op: &SectorOperator) -> Result<GroundState> {
    let n = op.dim();
    let (energy, amps, next) = if n <= 400 || op.has_cached_spectrum() {
        let s = op.spectrum()?;
        let amps: Vec<C64> = (0..n).map(|i| C64::new(s.vectors.read(i, 0), 0.0)).collect();
        (s.energies[0], amps, s.energies.get(1).copied().unwrap_or(f64::INFINITY))
    } else {
        let apply = |x: &[C64], y: &mut [C64]| op.apply(x, y);
        let g = linalg::lanczos_ground(&apply, &start_vector(n), 1e-10, 2000)?;
        // Deflate the ground state; the shift lifts it above the spectrum.
        let shift = 2.0 * op.matrix().norm_bound() + 1.0;
        let v0 = g.vector.clone();
        let deflated = |x: &[C64], y: &mut [C64]| {
            op.apply(x, y);
            let c = linalg::dot(&v0, x) * shift;
            linalg::axpy(c, &v0, y);
        };
        let g2 = linalg::lanczos_ground(&deflated, &start_vector(n), 1e-10, 2000)?;
        (g.energy, g.vector, g2.energy)
    };
    let mut vector = FockVector::new(Arc::clone(op.basis()), amps)?.normalized()?;
    vector.fix_phase(1e-8);
    let gap = next - energy;
    Ok(GroundState { energy, vector, gap, degenerate: gap < DEGENERACY_GAP })
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub energies: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub vectors: Mat<f64>,
    /// `‖H V − V Λ‖_F`, an upper bound on `‖H − V Λ V†‖_max`.
    pub residual: f64,
}

impl Spectrum {
    /// `(E_n, |⟨n|ψ⟩|²)` for all `n`.
    pub fn overlaps(&self, psi: &[C64]) -> Vec<(f64, f64)> {
        let n = self.energies.len();
        (0..n)
            .map(|k| {
                let c = (0..n).fold(C64::new(0.0, 0.0), |acc, i| acc + psi[i] * self.vectors.read(i, k));
                (self.energies[k], c.norm_sqr())
            })
            .collect()
    }

    /// Eigenbasis coefficients `⟨n|ψ⟩`.
    pub fn coefficients(&self, psi: &[C64]) -> Vec<C64> {
        let n = self.energies.len();
        let re = Mat::<f64>::from_fn(n, 1, |i, _| psi[i].re);
        let im = Mat::<f64>::from_fn(n, 1, |i, _| psi[i].im);
        let cr = self.vectors.transpose() * &re;
        let ci = self.vectors.transpose() * &im;
        (0..n).map(|k| C64::new(cr.read(k, 0), ci.read(k, 0))).collect()
    }

    /// `Σ_n c_n |n⟩`.
    pub fn synthesize(&self, coeffs: &[C64]) -> Vec<C64> {
        let n = self.energies.len();
        let re = Mat::<f64>::from_fn(n, 1, |i, _| coeffs[i].re);
        let im = Mat::<f64>::from_fn(n, 1, |i, _| coeffs[i].im);
        let vr = &self.vectors * &re;
        let vi = &self.vectors * &im;
        (0..n).map(|i| C64::new(vr.read(i, 0), vi.read(i, 0))).collect()
    }
}

pub fn full_spectrum(op: &SectorOperator) -> Result<Spectrum> {
    let dense = op.to_dense()?;
    let (energies, vectors) = linalg::sym_eigen(&dense);
    let hv = &dense * &vectors;
    let n = energies.len();
    let mut r2 = 0.0;
    for k in 0..n {
        for i in 0..n {
            r2 += (hv.read(i, k) - vectors.read(i, k) * energies[k]).powi(2);
        }
    }
    let residual = r2.sqrt();
    if residual >= 1e-9 * (1.0 + op.matrix().norm_bound()) {
        return Err(Error::InvalidArgument(format!("eigendecomposition residual {residual:.3e} above tolerance")));
    }
    Ok(Spectrum { energies, vectors, residual })
}

pub fn mean_energy_density(state: &FockVector, h_full: &SectorOperator, n_sites: usize) -> Result<f64> {
    Ok(h_full.expectation(state)? / n_sites as f64)
}

/// Canonical energy density from a list of eigenvalues (`k_B = 1`).
pub fn thermal_energy_density_from(energies: &[f64], temperature: f64, n_sites: usize) -> Result<f64> {
    if temperature <= 0.0 || !temperature.is_finite() && temperature != f64::INFINITY {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let e0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut z, mut ez) = (0.0, 0.0);
    for &e in energies {
        let w = (-(e - e0) / temperature).exp();
        z += w;
        ez += w * e;
    }
    Ok(ez / z / n_sites as f64)
}

pub fn thermal_energy_density(op: &SectorOperator, temperature: f64, n_sites: usize) -> Result<f64> {
    let s = op.spectrum()?;
    thermal_energy_density_from(&s.energies, temperature, n_sites)
}

/// Ground state of an isolated 2×2 plaquette with the label's filling.
pub fn plaquette_ground_state(label: PlaquetteLabel, params: &HubbardParams) -> Result<GroundState> {
    let geom = LatticeGeometry::new(2, 2)?;
    let (nu, nd) = label.particles();
    let op = build_hubbard(&geom, None, params, NumberSector::new(nu, nd, 4)?, TermFilter::All)?;
    ground_state(&op)
}

/// `λ_p`: sum of isolated plaquette ground energies over a tiling.
pub fn plaquette_energy_sum(tiling: &PlaquetteTiling, u: f64) -> Result<f64> {
    let params = HubbardParams::uniform(1.0, u);
    let mut total = 0.0;
    for p in &tiling.plaquettes {
        total += plaquette_ground_state(p.label, &params)?.energy;
    }
    Ok(total)
}
