//! Site-permutation and spin-flip symmetries of a number sector, and the
//! orbit basis of a one-dimensional real representation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fock::{reorder_sign, Config, FockBasis, C64};
use crate::linalg::CsrMatrix;

/// `c†_{s,σ} ↦ c†_{π(s), σ'}` with `σ' = σ` or flipped.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymOp {
    pub perm: Vec<usize>,
    pub flip: bool,
}

impl SymOp {
    pub fn identity(n_sites: usize) -> Self {
        Self { perm: (0..n_sites).collect(), flip: false }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &SymOp) -> SymOp {
        SymOp { perm: other.perm.iter().map(|&s| self.perm[s]).collect(), flip: self.flip != other.flip }
    }

    /// Image configuration and the fermionic sign of reordering the image
    /// modes into canonical order.
    pub fn apply(&self, cfg: Config) -> (Config, f64) {
        let n = self.perm.len();
        let mut keys = Vec::with_capacity((cfg.0.count_ones() + cfg.1.count_ones()) as usize);
        let (mut up, mut down) = (0u32, 0u32);
        for (mask, is_up) in [(cfg.0, true), (cfg.1, false)] {
            for s in 0..n {
                if mask & (1 << s) != 0 {
                    let t = self.perm[s];
                    if is_up != self.flip {
                        keys.push(t);
                        up |= 1 << t;
                    } else {
                        keys.push(n + t);
                        down |= 1 << t;
                    }
                }
            }
        }
        ((up, down), reorder_sign(&keys))
    }
}

/// Closure of `generators` under composition.
pub fn generate_group(generators: &[SymOp], n_sites: usize) -> Vec<SymOp> {
    let mut group = vec![SymOp::identity(n_sites)];
    let mut k = 0;
    while k < group.len() {
        for g in generators {
            let h = g.compose(&group[k]);
            if !group.contains(&h) {
                group.push(h);
            }
        }
        k += 1;
    }
    group
}

/// `⟨v|g v⟩` for a vector on `basis`.
pub fn expectation(basis: &FockBasis, v: &[C64], g: &SymOp) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (i, a) in v.iter().enumerate() {
        if a.norm_sqr() == 0.0 {
            continue;
        }
        let (img, sign) = g.apply(basis.state(i));
        if let Some(j) = basis.index(img) {
            acc += v[j].conj() * a * sign;
        }
    }
    acc
}

/// Orthonormal basis of the subspace where every group element `g` acts
/// as the scalar `χ(g) = ±1`. Column `j` is supported on one orbit.
#[derive(Debug, Clone)]
pub struct OrbitBasis {
    full_dim: usize,
    /// Per full-basis index: reduced column and coefficient, if any.
    entry: Vec<Option<(usize, f64)>>,
    columns: Vec<Vec<(usize, f64)>>,
}

impl OrbitBasis {
    pub fn new(basis: &FockBasis, group: &[SymOp], character: &[f64]) -> Result<Self> {
        if group.len() != character.len() {
            return Err(Error::DimensionMismatch("one character per group element".into()));
        }
        let n = basis.dim();
        let mut entry = vec![None; n];
        let mut seen = vec![false; n];
        let mut columns = Vec::new();
        for i in 0..n {
            if seen[i] {
                continue;
            }
            let cfg = basis.state(i);
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for (g, chi) in group.iter().zip(character) {
                let (img, sign) = g.apply(cfg);
                let j = basis
                    .index(img)
                    .ok_or_else(|| Error::SectorMismatch("symmetry leaves the number sector".into()))?;
                seen[j] = true;
                *acc.entry(j).or_insert(0.0) += chi * sign;
            }
            let norm = acc.values().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            let col: Vec<(usize, f64)> =
                acc.into_iter().filter(|(_, x)| x.abs() > 1e-12).map(|(j, x)| (j, x / norm)).collect();
            for &(j, x) in &col {
                entry[j] = Some((columns.len(), x));
            }
            columns.push(col);
        }
        Ok(Self { full_dim: n, entry, columns })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// `Vᵀ v`.
    pub fn reduce(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        for (i, a) in v.iter().enumerate() {
            if let Some((c, x)) = self.entry[i] {
                out[c] += x * a;
            }
        }
        out
    }

    /// `V w`.
    pub fn expand(&self, w: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.full_dim];
        for (col, a) in self.columns.iter().zip(w) {
            for &(j, x) in col {
                out[j] += x * a;
            }
        }
        out
    }

    /// `Vᵀ M V` for a symmetric `M` commuting with the group.
    pub fn reduce_operator(&self, m: &CsrMatrix) -> CsrMatrix {
        let mut trip = Vec::new();
        for (c, col) in self.columns.iter().enumerate() {
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for &(j, x) in col {
                for (r, h) in m.row(j) {
                    if let Some((rc, y)) = self.entry[r] {
                        *acc.entry(rc).or_insert(0.0) += y * h * x;
                    }
                }
            }
            trip.extend(acc.into_iter().map(|(r, v)| (r as u32, c as u32, v)));
        }
        CsrMatrix::from_triplets(self.dim(), trip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::NumberSector;
    use crate::hamiltonian::assemble;

    fn basis(nu: usize, nd: usize, n: usize) -> FockBasis {
        FockBasis::new(NumberSector::new(nu, nd, n).unwrap()).unwrap()
    }

    #[test]
    fn reflection_sign_of_two_fermions() {
        // c†_0 c†_1 |0⟩ under 0 ↔ 1 becomes c†_1 c†_0 |0⟩ = -c†_0 c†_1 |0⟩.
        let g = SymOp { perm: vec![1, 0], flip: false };
        assert_eq!(g.apply((0b11, 0)), ((0b11, 0), -1.0));
        assert_eq!(g.apply((0b01, 0b10)), ((0b10, 0b01), 1.0));
        let f = SymOp { perm: vec![0, 1], flip: true };
        // c†_0↑ c†_0↓ ↦ c†_0↓ c†_0↑ = -c†_0↑ c†_0↓.
        assert_eq!(f.apply((0b01, 0b01)), ((0b01, 0b01), -1.0));
    }

    #[test]
    fn group_closure() {
        let m = SymOp { perm: vec![3, 2, 1, 0], flip: false };
        let f = SymOp { perm: vec![0, 1, 2, 3], flip: true };
        assert_eq!(generate_group(&[m, f], 4).len(), 4);
    }

    #[test]
    fn reduced_operator_preserves_symmetric_dynamics() {
        let b = basis(2, 2, 4);
        let hops = [(0, 1, 1.0), (1, 2, 0.7), (2, 3, 1.0)];
        let h = assemble(&b, &hops, 3.0, &[]);
        let mirror = SymOp { perm: vec![3, 2, 1, 0], flip: false };
        let group = generate_group(&[mirror], 4);
        for chi in [[1.0, 1.0], [1.0, -1.0]] {
            let ob = OrbitBasis::new(&b, &group, &chi).unwrap();
            let hr = ob.reduce_operator(&h);
            assert!(hr.is_symmetric(1e-14));
            // V Hr Vᵀ agrees with H on the symmetric subspace.
            for c in 0..ob.dim() {
                let mut e = vec![C64::new(0.0, 0.0); ob.dim()];
                e[c] = C64::new(1.0, 0.0);
                let v = ob.expand(&e);
                let hv = h.apply(&v);
                let back = ob.expand(&ob.reduce(&hv));
                let err: f64 = hv.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(err < 1e-12, "H leaves the subspace: {err}");
                let direct = hr.apply(&e);
                let err: f64 = direct.iter().zip(ob.reduce(&hv)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(err < 1e-12);
            }
        }
        let even = OrbitBasis::new(&b, &group, &[1.0, 1.0]).unwrap().dim();
        let odd = OrbitBasis::new(&b, &group, &[1.0, -1.0]).unwrap().dim();
        assert_eq!(even + odd, b.dim());
    }
}
