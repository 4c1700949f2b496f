//! Rectangular open-boundary lattices, 2×2 plaquette tilings and the
//! layer schedule used to apply inter-plaquette unitaries in parallel.
//!
//! Sites are indexed row-major from the lower-left corner:
//! `site = x + n_x * y`. Bonds along x between columns `x` and `x + 1`
//! are intra-plaquette when `x` is even and inter-plaquette otherwise
//! (likewise along y), which is the 2×2 superlattice alignment.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondClass {
    IntraX,
    IntraY,
    InterX,
    InterY,
}

impl BondClass {
    pub const ALL: [BondClass; 4] = [BondClass::IntraX, BondClass::IntraY, BondClass::InterX, BondClass::InterY];

    pub fn is_intra(self) -> bool {
        matches!(self, BondClass::IntraX | BondClass::IntraY)
    }

    pub fn name(self) -> &'static str {
        match self {
            BondClass::IntraX => "intra_x",
            BondClass::IntraY => "intra_y",
            BondClass::InterX => "inter_x",
            BondClass::InterY => "inter_y",
        }
    }
}

impl FromStr for BondClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BondClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bond class `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub class: BondClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    n_x: usize,
    n_y: usize,
    bonds: Vec<Bond>,
}

impl LatticeGeometry {
    pub fn new(n_x: usize, n_y: usize) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(Error::InvalidArgument(format!("lattice dimensions must be positive, got {n_x}x{n_y}")));
        }
        let mut bonds = Vec::new();
        for y in 0..n_y {
            for x in 0..n_x {
                let s = x + n_x * y;
                if x + 1 < n_x {
                    let class = if x % 2 == 0 { BondClass::IntraX } else { BondClass::InterX };
                    bonds.push(Bond { i: s, j: s + 1, class });
                }
                if y + 1 < n_y {
                    let class = if y % 2 == 0 { BondClass::IntraY } else { BondClass::InterY };
                    bonds.push(Bond { i: s, j: s + n_x, class });
                }
            }
        }
        Ok(Self { n_x, n_y, bonds })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_sites(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn site(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.n_x && y < self.n_y);
        x + self.n_x * y
    }

    pub fn coords(&self, site: usize) -> (usize, usize) {
        (site % self.n_x, site / self.n_x)
    }

    pub fn count_class(&self, class: BondClass) -> usize {
        self.bonds.iter().filter(|b| b.class == class).count()
    }

    /// Stable identifier used in result-file headers.
    pub fn fingerprint(&self) -> String {
        crate::io::short_hash(&self.to_text())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_x: {}", self.n_x);
        let _ = writeln!(out, "n_y: {}", self.n_y);
        let _ = writeln!(out, "boundary: open");
        let _ = writeln!(out, "bonds: {}", self.bonds.len());
        for b in &self.bonds {
            let _ = writeln!(out, "bond {} {} {}", b.i, b.j, b.class.name());
        }
        out
    }
}

/// Particle content of a 2×2 plaquette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlaquetteLabel {
    /// Half filled, (2↑, 2↓).
    A,
    /// Doped, (1↑, 1↓).
    B,
    /// Missing one ↓, (2↑, 1↓).
    C,
    /// Missing one ↑, (1↑, 2↓).
    D,
}

impl PlaquetteLabel {
    pub fn particles(self) -> (usize, usize) {
        match self {
            PlaquetteLabel::A => (2, 2),
            PlaquetteLabel::B => (1, 1),
            PlaquetteLabel::C => (2, 1),
            PlaquetteLabel::D => (1, 2),
        }
    }

    pub fn as_char(self) -> char {
        match self {
            PlaquetteLabel::A => 'A',
            PlaquetteLabel::B => 'B',
            PlaquetteLabel::C => 'C',
            PlaquetteLabel::D => 'D',
        }
    }

    pub fn from_char(c: char) -> Result<Self> {
        match c {
            'A' => Ok(PlaquetteLabel::A),
            'B' => Ok(PlaquetteLabel::B),
            'C' => Ok(PlaquetteLabel::C),
            'D' => Ok(PlaquetteLabel::D),
            _ => Err(Error::InvalidArgument(format!("unknown plaquette label `{c}`"))),
        }
    }
}

impl fmt::Display for PlaquetteLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Arrangement of plaquette labels over the plaquette grid.
///
/// `Aaab` and `Acad` repeat over a 2×2 block of plaquettes (4×4 sites):
///
/// ```text
/// AAAB:  A B      ACAD:  D A
///        A A             A C
/// ```
///
/// (rows drawn top to bottom, plaquette `(0, 0)` at the lower left). In
/// `Acad` every coupling joins an `A` to a `C` or a `D`. `Pair(X)`
/// alternates `A` and `X` along x and only needs a period of two plaquettes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellPattern {
    Aaaa,
    Aaab,
    Acad,
    Pair(PlaquetteLabel),
}

impl CellPattern {
    fn period(self) -> (usize, usize) {
        match self {
            CellPattern::Aaaa => (1, 1),
            CellPattern::Aaab | CellPattern::Acad => (2, 2),
            CellPattern::Pair(_) => (2, 1),
        }
    }

    fn label_at(self, px: usize, py: usize) -> PlaquetteLabel {
        match self {
            CellPattern::Aaaa => PlaquetteLabel::A,
            CellPattern::Aaab => {
                if px % 2 == 1 && py % 2 == 1 {
                    PlaquetteLabel::B
                } else {
                    PlaquetteLabel::A
                }
            }
            CellPattern::Acad => match (px % 2, py % 2) {
                (0, 0) | (1, 1) => PlaquetteLabel::A,
                (1, 0) => PlaquetteLabel::C,
                _ => PlaquetteLabel::D,
            },
            CellPattern::Pair(other) => {
                if px % 2 == 0 {
                    PlaquetteLabel::A
                } else {
                    other
                }
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            CellPattern::Aaaa => "AAAA".into(),
            CellPattern::Aaab => "AAAB".into(),
            CellPattern::Acad => "ACAD".into(),
            CellPattern::Pair(l) => format!("A{l}"),
        }
    }
}

impl FromStr for CellPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AAAA" => Ok(CellPattern::Aaaa),
            "AAAB" => Ok(CellPattern::Aaab),
            "ACAD" => Ok(CellPattern::Acad),
            "AA" => Ok(CellPattern::Aaaa),
            "AB" => Ok(CellPattern::Pair(PlaquetteLabel::B)),
            "AC" => Ok(CellPattern::Pair(PlaquetteLabel::C)),
            "AD" => Ok(CellPattern::Pair(PlaquetteLabel::D)),
            _ => Err(Error::InvalidArgument(format!("unknown unit cell `{s}`"))),
        }
    }
}

impl fmt::Display for CellPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plaquette {
    pub label: PlaquetteLabel,
    /// Lower-left site coordinates.
    pub anchor: (usize, usize),
    /// Sites in ascending global order, which is row-major inside the plaquette.
    pub sites: [usize; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// Inter-plaquette hopping edges between two neighbouring plaquettes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coupling {
    pub mu: usize,
    pub nu: usize,
    pub orientation: Orientation,
    pub edges: Vec<Bond>,
}

impl Coupling {
    /// Sites of both plaquettes in ascending order.
    pub fn sites(&self, tiling: &PlaquetteTiling) -> Vec<usize> {
        let mut s: Vec<usize> =
            tiling.plaquettes[self.mu].sites.iter().chain(tiling.plaquettes[self.nu].sites.iter()).copied().collect();
        s.sort_unstable();
        s
    }

    /// Pair kind such as "AA" or "AB", with `A` first whenever present.
    pub fn pair_kind(&self, tiling: &PlaquetteTiling) -> PairKind {
        PairKind::new(tiling.plaquettes[self.mu].label, tiling.plaquettes[self.nu].label)
    }
}

/// Unordered pair of plaquette labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKind(pub PlaquetteLabel, pub PlaquetteLabel);

impl PairKind {
    pub fn new(a: PlaquetteLabel, b: PlaquetteLabel) -> Self {
        if a <= b {
            PairKind(a, b)
        } else {
            PairKind(b, a)
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.0, self.1)
    }
}

impl FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 2 {
            return Err(Error::InvalidArgument(format!("pair kind `{s}` must have two labels")));
        }
        Ok(PairKind::new(PlaquetteLabel::from_char(chars[0])?, PlaquetteLabel::from_char(chars[1])?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaquetteTiling {
    pub pattern: CellPattern,
    pub plaquettes: Vec<Plaquette>,
    pub couplings: Vec<Coupling>,
    /// Owning plaquette of every site.
    pub site_owner: Vec<usize>,
}

impl PlaquetteTiling {
    pub fn new(geom: &LatticeGeometry, pattern: CellPattern) -> Result<Self> {
        let (nx, ny) = (geom.n_x(), geom.n_y());
        if nx % 2 != 0 || ny % 2 != 0 {
            return Err(Error::DimensionMismatch(format!("{nx}x{ny} lattice is not divisible into 2x2 plaquettes")));
        }
        let (ppx, ppy) = pattern.period();
        let (npx, npy) = (nx / 2, ny / 2);
        if npx % ppx != 0 || npy % ppy != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{nx}x{ny} lattice is not a multiple of the {pattern} unit-cell period ({}x{} sites)",
                2 * ppx,
                2 * ppy
            )));
        }
        let mut plaquettes = Vec::with_capacity(npx * npy);
        let mut site_owner = vec![usize::MAX; geom.n_sites()];
        for py in 0..npy {
            for px in 0..npx {
                let (x0, y0) = (2 * px, 2 * py);
                let sites =
                    [geom.site(x0, y0), geom.site(x0 + 1, y0), geom.site(x0, y0 + 1), geom.site(x0 + 1, y0 + 1)];
                for &s in &sites {
                    site_owner[s] = plaquettes.len();
                }
                plaquettes.push(Plaquette { label: pattern.label_at(px, py), anchor: (x0, y0), sites });
            }
        }
        let mut grouped: BTreeMap<(usize, usize), Vec<Bond>> = BTreeMap::new();
        for b in geom.bonds() {
            let (pi, pj) = (site_owner[b.i], site_owner[b.j]);
            if pi != pj {
                grouped.entry((pi.min(pj), pi.max(pj))).or_default().push(*b);
            }
        }
        let couplings = grouped
            .into_iter()
            .map(|((mu, nu), edges)| {
                let orientation =
                    if edges[0].class == BondClass::InterX { Orientation::Horizontal } else { Orientation::Vertical };
                Coupling { mu, nu, orientation, edges }
            })
            .collect();
        Ok(Self { pattern, plaquettes, couplings, site_owner })
    }

    pub fn labels(&self) -> Vec<PlaquetteLabel> {
        self.plaquettes.iter().map(|p| p.label).collect()
    }

    /// Distinct pair kinds over all couplings, sorted.
    pub fn pair_kinds(&self) -> Vec<PairKind> {
        let mut kinds: Vec<PairKind> = self.couplings.iter().map(|c| c.pair_kind(self)).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    pub fn find_coupling(&self, mu: usize, nu: usize) -> Option<usize> {
        let key = (mu.min(nu), mu.max(nu));
        self.couplings.iter().position(|c| (c.mu, c.nu) == key)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "unit_cell: {}", self.pattern);
        let _ = writeln!(out, "plaquettes: {}", self.plaquettes.len());
        for (k, p) in self.plaquettes.iter().enumerate() {
            let _ = writeln!(out, "plaquette {k} {} {} {}", p.label, p.anchor.0, p.anchor.1);
        }
        let _ = writeln!(out, "couplings: {}", self.couplings.len());
        for c in &self.couplings {
            let edges: Vec<String> = c.edges.iter().map(|e| format!("{}-{}", e.i, e.j)).collect();
            let _ = writeln!(out, "coupling {} {} {}", c.mu, c.nu, edges.join(" "));
        }
        out
    }
}

/// Partition of the couplings into layers whose couplings touch pairwise
/// distinct plaquettes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerAssignment {
    /// Layer index per coupling, in the tiling's coupling order.
    pub layer_of: Vec<usize>,
    pub n_layers: usize,
}

impl LayerAssignment {
    /// Layers are filled in the fixed order horizontal/even, horizontal/odd,
    /// vertical/even, vertical/odd (parity of the lower-left plaquette's
    /// grid coordinate along the coupling direction). Empty layers are dropped.
    pub fn new(tiling: &PlaquetteTiling) -> Self {
        let raw: Vec<usize> = tiling
            .couplings
            .iter()
            .map(|c| {
                let (ax, ay) = tiling.plaquettes[c.mu].anchor;
                match c.orientation {
                    Orientation::Horizontal => (ax / 2) % 2,
                    Orientation::Vertical => 2 + (ay / 2) % 2,
                }
            })
            .collect();
        let mut used: Vec<usize> = raw.clone();
        used.sort_unstable();
        used.dedup();
        let layer_of = raw.iter().map(|r| used.iter().position(|u| u == r).unwrap()).collect();
        Self { layer_of, n_layers: used.len() }
    }

    /// Coupling indices per layer.
    pub fn layers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_layers];
        for (c, &l) in self.layer_of.iter().enumerate() {
            out[l].push(c);
        }
        out
    }

    /// Same assignment applied in a different layer order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.n_layers).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!("{order:?} is not a permutation of {} layers", self.n_layers)));
        }
        let layer_of = self.layer_of.iter().map(|&l| order.iter().position(|&o| o == l).unwrap()).collect();
        Ok(Self { layer_of, n_layers: self.n_layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_double_well() {
        let g = LatticeGeometry::new(2, 1).unwrap();
        assert_eq!(g.bonds().len(), 1);
        assert_eq!(g.bonds()[0].class, BondClass::IntraX);
    }

    #[test]
    fn four_by_two_bond_counts() {
        let g = LatticeGeometry::new(4, 2).unwrap();
        assert_eq!(g.bonds().len(), 10);
        let x = g.count_class(BondClass::IntraX) + g.count_class(BondClass::InterX);
        let y = g.count_class(BondClass::IntraY) + g.count_class(BondClass::InterY);
        assert_eq!((x, y), (6, 4));
        assert_eq!(g.count_class(BondClass::InterX), 2);
    }

    #[test]
    fn plaquette_has_only_intra_bonds() {
        let g = LatticeGeometry::new(2, 2).unwrap();
        assert_eq!(g.bonds().len(), 4);
        assert!(g.bonds().iter().all(|b| b.class.is_intra()));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(LatticeGeometry::new(0, 2).is_err());
    }

    #[test]
    fn tiling_four_by_two() {
        let g = LatticeGeometry::new(4, 2).unwrap();
        let t = PlaquetteTiling::new(&g, CellPattern::Aaaa).unwrap();
        assert_eq!(t.plaquettes.len(), 2);
        assert_eq!(t.couplings.len(), 1);
        assert_eq!(t.couplings[0].edges.len(), 2);
        assert_eq!(t.couplings[0].orientation, Orientation::Horizontal);
    }

    #[test]
    fn tiling_single_plaquette() {
        let g = LatticeGeometry::new(2, 2).unwrap();
        let t = PlaquetteTiling::new(&g, CellPattern::Aaaa).unwrap();
        assert_eq!(t.plaquettes.len(), 1);
        assert!(t.couplings.is_empty());
    }

    #[test]
    fn aaab_has_one_b() {
        let g = LatticeGeometry::new(4, 4).unwrap();
        let t = PlaquetteTiling::new(&g, CellPattern::Aaab).unwrap();
        assert_eq!(t.plaquettes.len(), 4);
        let b = t.labels().iter().filter(|&&l| l == PlaquetteLabel::B).count();
        assert_eq!(b, 1);
        let kinds: Vec<String> = t.pair_kinds().iter().map(|k| k.to_string()).collect();
        assert_eq!(kinds, ["AA", "AB"]);
    }

    #[test]
    fn acad_couples_a_to_doped_only() {
        let g = LatticeGeometry::new(4, 4).unwrap();
        let t = PlaquetteTiling::new(&g, CellPattern::Acad).unwrap();
        let kinds: Vec<String> = t.pair_kinds().iter().map(|k| k.to_string()).collect();
        assert_eq!(kinds, ["AC", "AD"]);
    }

    #[test]
    fn odd_or_misaligned_lattices_rejected() {
        let g = LatticeGeometry::new(3, 2).unwrap();
        assert!(matches!(PlaquetteTiling::new(&g, CellPattern::Aaaa), Err(Error::DimensionMismatch(_))));
        let g = LatticeGeometry::new(4, 2).unwrap();
        assert!(matches!(PlaquetteTiling::new(&g, CellPattern::Aaab), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn layers_for_row_and_square() {
        let g = LatticeGeometry::new(4, 2).unwrap();
        let t = PlaquetteTiling::new(&g, CellPattern::Aaaa).unwrap();
        assert_eq!(LayerAssignment::new(&t).n_layers, 1);

        let g = LatticeGeometry::new(6, 2).unwrap();
        let t = PlaquetteTiling::new(&g, CellPattern::Aaaa).unwrap();
        let l = LayerAssignment::new(&t);
        assert_eq!(l.n_layers, 2);
        assert_eq!(l.layer_of, vec![0, 1]);

        let g = LatticeGeometry::new(4, 4).unwrap();
        let t = PlaquetteTiling::new(&g, CellPattern::Aaaa).unwrap();
        let l = LayerAssignment::new(&t);
        assert!(l.n_layers <= 4);
        for layer in l.layers() {
            let o = t.couplings[layer[0]].orientation;
            assert!(layer.iter().all(|&c| t.couplings[c].orientation == o));
        }
    }

    #[test]
    fn permuted_layers_validate_input() {
        let g = LatticeGeometry::new(6, 2).unwrap();
        let t = PlaquetteTiling::new(&g, CellPattern::Aaaa).unwrap();
        let l = LayerAssignment::new(&t);
        assert_eq!(l.permuted(&[1, 0]).unwrap().layer_of, vec![1, 0]);
        assert!(l.permuted(&[0, 0]).is_err());
    }
}
