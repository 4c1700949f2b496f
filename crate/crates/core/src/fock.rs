//! Fixed-(N↑, N↓) Fock bases over occupation bitmasks.
//!
//! Mode ordering is all ↑ modes by site index followed by all ↓ modes.
//! Hubbard terms never mix spin species inside a bilinear, so hopping
//! signs only count same-spin occupations between the two sites.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const DEFAULT_DIMENSION_CAP: usize = 10_000_000;

/// Largest supported site count (bit masks and rank tables).
pub const MAX_SITES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub const BOTH: [Spin; 2] = [Spin::Up, Spin::Down];

    pub fn flip(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct NumberSector {
    pub n_up: usize,
    pub n_down: usize,
    pub n_sites: usize,
}

impl NumberSector {
    pub fn new(n_up: usize, n_down: usize, n_sites: usize) -> Result<Self> {
        if n_sites == 0 || n_sites > MAX_SITES {
            return Err(Error::InvalidArgument(format!("site count {n_sites} outside 1..={MAX_SITES}")));
        }
        if n_up > n_sites || n_down > n_sites {
            return Err(Error::InvalidArgument(format!("({n_up}↑, {n_down}↓) does not fit on {n_sites} sites")));
        }
        Ok(Self { n_up, n_down, n_sites })
    }

    pub fn dimension(&self) -> u128 {
        binomial(self.n_sites, self.n_up) * binomial(self.n_sites, self.n_down)
    }

    pub fn spin_flipped(&self) -> Self {
        Self { n_up: self.n_down, n_down: self.n_up, n_sites: self.n_sites }
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Configuration as (↑ mask, ↓ mask); bit `i` is site `i`.
pub type Config = (u32, u32);

fn masks_with_popcount(n_sites: usize, k: usize) -> Vec<u32> {
    if k == 0 {
        return vec![0];
    }
    let limit: u64 = 1u64 << n_sites;
    let mut out = Vec::with_capacity(binomial(n_sites, k) as usize);
    let mut v: u64 = (1u64 << k) - 1;
    while v < limit {
        out.push(v as u32);
        // Gosper's hack: next integer with the same popcount.
        let c = v & v.wrapping_neg();
        let r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
    out
}

/// Ordered basis of one number sector. States are sorted by ↑ mask, then
/// ↓ mask, so `index = rank(up) * n_down_states + rank(down)`.
#[derive(Debug, Clone)]
pub struct FockBasis {
    sector: NumberSector,
    up_states: Vec<u32>,
    down_states: Vec<u32>,
    up_rank: Vec<u32>,
    down_rank: Vec<u32>,
}

impl PartialEq for FockBasis {
    fn eq(&self, other: &Self) -> bool {
        self.sector == other.sector
    }
}

impl FockBasis {
    pub fn new(sector: NumberSector) -> Result<Self> {
        Self::with_cap(sector, DEFAULT_DIMENSION_CAP)
    }

    pub fn with_cap(sector: NumberSector, cap: usize) -> Result<Self> {
        let dim = sector.dimension();
        if dim > cap as u128 {
            return Err(Error::CapExceeded { dim: dim.min(usize::MAX as u128) as usize, cap });
        }
        let up_states = masks_with_popcount(sector.n_sites, sector.n_up);
        let down_states = masks_with_popcount(sector.n_sites, sector.n_down);
        let table = |states: &[u32]| {
            let mut rank = vec![u32::MAX; 1usize << sector.n_sites];
            for (r, &m) in states.iter().enumerate() {
                rank[m as usize] = r as u32;
            }
            rank
        };
        let up_rank = table(&up_states);
        let down_rank = table(&down_states);
        Ok(Self { sector, up_states, down_states, up_rank, down_rank })
    }

    pub fn sector(&self) -> NumberSector {
        self.sector
    }

    pub fn n_sites(&self) -> usize {
        self.sector.n_sites
    }

    pub fn dim(&self) -> usize {
        self.up_states.len() * self.down_states.len()
    }

    pub fn state(&self, index: usize) -> Config {
        let nd = self.down_states.len();
        (self.up_states[index / nd], self.down_states[index % nd])
    }

    pub fn index(&self, config: Config) -> Option<usize> {
        let (u, d) = config;
        let ru = *self.up_rank.get(u as usize)?;
        let rd = *self.down_rank.get(d as usize)?;
        if ru == u32::MAX || rd == u32::MAX {
            return None;
        }
        Some(ru as usize * self.down_states.len() + rd as usize)
    }

    pub fn states(&self) -> impl Iterator<Item = Config> + '_ {
        self.up_states.iter().flat_map(move |&u| self.down_states.iter().map(move |&d| (u, d)))
    }

    /// Sector plus ordering tag; guards against mixing vectors across bases.
    pub fn fingerprint(&self) -> String {
        let s = self.sector;
        format!("fock-{}s-{}u-{}d-upmajor-lex", s.n_sites, s.n_up, s.n_down)
    }
}

/// Moves a particle of `spin` from site `i` to site `j` (`c†_j c_i`).
///
/// Returns `None` when site `i` is empty or site `j` is occupied; otherwise
/// the new configuration and the sign `(-1)^(occupied same-spin sites
/// strictly between i and j)`.
pub fn hop(config: Config, i: usize, j: usize, spin: Spin) -> Option<(Config, f64)> {
    debug_assert_ne!(i, j);
    let (u, d) = config;
    let m = match spin {
        Spin::Up => u,
        Spin::Down => d,
    };
    if m & (1 << i) == 0 || m & (1 << j) != 0 {
        return None;
    }
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    let between = ((1u32 << hi) - 1) & !((1u32 << (lo + 1)) - 1);
    let sign = if (m & between).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
    let moved = m ^ (1 << i) ^ (1 << j);
    let new = match spin {
        Spin::Up => (moved, d),
        Spin::Down => (u, moved),
    };
    Some((new, sign))
}

pub fn double_occupancy(config: Config, i: usize) -> u32 {
    (config.0 >> i) & (config.1 >> i) & 1
}

pub fn occupation(config: Config, i: usize) -> u32 {
    ((config.0 >> i) & 1) + ((config.1 >> i) & 1)
}

/// Sign of the permutation that reorders the canonical global mode string
/// into the given block order. `keys` lists the occupied modes in block
/// order, each keyed by its canonical position (`site` for ↑,
/// `n_sites + site` for ↓).
pub fn reorder_sign(keys: &[usize]) -> f64 {
    let mut inversions = 0usize;
    for a in 0..keys.len() {
        for b in a + 1..keys.len() {
            if keys[a] > keys[b] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Canonical keys of the occupied modes of a local configuration placed on
/// `sites` (local site `k` sits at `sites[k]`), ↑ block first.
pub fn block_keys(local: Config, sites: &[usize], n_sites: usize, out: &mut Vec<usize>) {
    for (k, &s) in sites.iter().enumerate() {
        if local.0 & (1 << k) != 0 {
            out.push(s);
        }
    }
    for (k, &s) in sites.iter().enumerate() {
        if local.1 & (1 << k) != 0 {
            out.push(n_sites + s);
        }
    }
}

/// Maps a local mask on `sites` into a global mask.
pub fn scatter_mask(local: u32, sites: &[usize]) -> u32 {
    sites.iter().enumerate().filter(|(k, _)| local & (1 << k) != 0).fold(0u32, |acc, (_, &s)| acc | (1 << s))
}

/// Restricts a global mask to `sites`, returning the local mask.
pub fn gather_mask(global: u32, sites: &[usize]) -> u32 {
    sites.iter().enumerate().filter(|(_, &s)| global & (1 << s) != 0).fold(0u32, |acc, (k, _)| acc | (1 << k))
}

#[derive(Debug, Clone)]
pub struct FockVector {
    basis: Arc<FockBasis>,
    amps: Vec<C64>,
}

impl FockVector {
    pub fn new(basis: Arc<FockBasis>, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != basis.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for a basis of dimension {}",
                amps.len(),
                basis.dim()
            )));
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite amplitude".into()));
        }
        Ok(Self { basis, amps })
    }

    pub fn zeros(basis: Arc<FockBasis>) -> Self {
        let n = basis.dim();
        Self { basis, amps: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn basis_state(basis: Arc<FockBasis>, config: Config) -> Result<Self> {
        let idx = basis
            .index(config)
            .ok_or_else(|| Error::SectorMismatch(format!("configuration {config:?} not in {}", basis.fingerprint())))?;
        let mut v = Self::zeros(basis);
        v.amps[idx] = C64::new(1.0, 0.0);
        Ok(v)
    }

    pub fn from_real(basis: Arc<FockBasis>, amps: &[f64]) -> Result<Self> {
        Self::new(basis, amps.iter().map(|&a| C64::new(a, 0.0)).collect())
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn with_amplitudes(&self, amps: Vec<C64>) -> Self {
        debug_assert_eq!(amps.len(), self.amps.len());
        Self { basis: Arc::clone(&self.basis), amps }
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.amps)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n < 1e-300 {
            return Err(Error::NormUnderflow);
        }
        Ok(self.with_amplitudes(self.amps.iter().map(|a| a / n).collect()))
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &FockVector) -> Result<C64> {
        self.check_same_basis(other)?;
        Ok(crate::linalg::dot(&self.amps, &other.amps))
    }

    pub fn fidelity(&self, other: &FockVector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    pub fn check_same_basis(&self, other: &FockVector) -> Result<()> {
        if self.basis.sector() != other.basis.sector() {
            return Err(Error::SectorMismatch(format!(
                "{} vs {}",
                self.basis.fingerprint(),
                other.basis.fingerprint()
            )));
        }
        Ok(())
    }

    /// Fixes the global phase so the first amplitude above `tol` is real positive.
    pub fn fix_phase(&mut self, tol: f64) {
        if let Some(a) = self.amps.iter().find(|a| a.norm() > tol).copied() {
            let phase = a.conj() / a.norm();
            for x in &mut self.amps {
                *x *= phase;
            }
        }
    }

    /// Populations `|amplitude|²` above `floor`, largest first.
    pub fn populations(&self, floor: f64) -> Vec<(Config, f64)> {
        let mut out: Vec<(Config, f64)> = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| (self.basis.state(i), a.norm_sqr()))
            .filter(|(_, p)| *p > floor)
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Structured text: header with basis fingerprint, then one `re im` row per state.
    pub fn to_text(&self) -> String {
        let mut header = crate::io::Header::new();
        header.push("kind", "fock_vector");
        header.push("basis", self.basis.fingerprint());
        header.push("n_sites", self.basis.n_sites());
        header.push("n_up", self.basis.sector().n_up);
        header.push("n_down", self.basis.sector().n_down);
        header.push("dim", self.basis.dim());
        let rows: Vec<Vec<String>> =
            self.amps.iter().map(|a| vec![crate::io::fmt_f64(a.re), crate::io::fmt_f64(a.im)]).collect();
        crate::io::write_table(&header, &["re", "im"], &rows)
    }

    pub fn from_text(text: &str, basis: Arc<FockBasis>) -> Result<Self> {
        let table = crate::io::parse_table(text)?;
        let fp = table.header.get("basis").unwrap_or_default();
        if fp != basis.fingerprint() {
            return Err(Error::SectorMismatch(format!("file basis `{fp}` does not match `{}`", basis.fingerprint())));
        }
        let re = table.column_f64("re")?;
        let im = table.column_f64("im")?;
        Self::new(basis, re.into_iter().zip(im).map(|(r, i)| C64::new(r, i)).collect())
    }
}

/// Product state of subsystem vectors placed on disjoint site sets.
///
/// The joint state is `C†_1 C†_2 ... |0⟩` where `C†_b` creates block `b`'s
/// configuration (↑ modes then ↓ modes, local site order); amplitudes pick up
/// the sign of reordering that string into canonical order.
pub fn embed_blocks(parts: &[(&FockVector, &[usize])], n_sites: usize) -> Result<FockVector> {
    let mut seen = 0u32;
    let (mut n_up, mut n_down) = (0, 0);
    for (v, sites) in parts {
        if sites.len() != v.basis().n_sites() {
            return Err(Error::DimensionMismatch(format!(
                "site map of length {} for a {}-site vector",
                sites.len(),
                v.basis().n_sites()
            )));
        }
        for &s in sites.iter() {
            if s >= n_sites || seen & (1 << s) != 0 {
                return Err(Error::InvalidArgument(format!("site map is not injective into {n_sites} sites")));
            }
            seen |= 1 << s;
        }
        n_up += v.basis().sector().n_up;
        n_down += v.basis().sector().n_down;
    }
    let sector = NumberSector::new(n_up, n_down, n_sites)?;
    let basis = Arc::new(FockBasis::new(sector)?);
    let mut out = FockVector::zeros(Arc::clone(&basis));

    let nonzero: Vec<Vec<(Config, C64)>> = parts
        .iter()
        .map(|(v, _)| {
            v.amplitudes()
                .iter()
                .enumerate()
                .filter(|(_, a)| a.norm_sqr() > 0.0)
                .map(|(i, a)| (v.basis().state(i), *a))
                .collect()
        })
        .collect();

    let mut choice = vec![0usize; parts.len()];
    let mut keys = Vec::with_capacity(n_up + n_down);
    if nonzero.iter().any(|n| n.is_empty()) {
        return Ok(out);
    }
    loop {
        let mut amp = C64::new(1.0, 0.0);
        let (mut gu, mut gd) = (0u32, 0u32);
        keys.clear();
        for (b, (_, sites)) in parts.iter().enumerate() {
            let (cfg, a) = nonzero[b][choice[b]];
            amp *= a;
            gu |= scatter_mask(cfg.0, sites);
            gd |= scatter_mask(cfg.1, sites);
            block_keys(cfg, sites, n_sites, &mut keys);
        }
        let idx = basis.index((gu, gd)).expect("composed configuration lies in the summed sector");
        out.amps[idx] += amp * reorder_sign(&keys);

        let mut b = 0;
        loop {
            if b == parts.len() {
                return Ok(out);
            }
            choice[b] += 1;
            if choice[b] < nonzero[b].len() {
                break;
            }
            choice[b] = 0;
            b += 1;
        }
    }
}

/// Two-block convenience wrapper around [`embed_blocks`].
pub fn embed_product(
    left: &FockVector,
    left_sites: &[usize],
    right: &FockVector,
    right_sites: &[usize],
    n_sites: usize,
) -> Result<FockVector> {
    embed_blocks(&[(left, left_sites), (right, right_sites)], n_sites)
}
