#![allow(dead_code)]

use fermi_echo::hamiltonian::{build_hubbard_on, HubbardParams, SectorOperator, TermFilter};
use fermi_echo::lattice::{CellPattern, LatticeGeometry, PlaquetteTiling};
use fermi_echo::pulse::ProductState;

/// Reference values from an independent dense diagonalization, U = 8, t = 1.
pub mod oracle {
    pub const E_A: f64 = -1.3202349582719235;
    pub const E_B: f64 = -3.207750943219349;
    pub const E_C: f64 = -2.324555320336763;
    pub const GAP_A: f64 = 0.3323165434020645;
    pub const AAAB_DENSITY: f64 = -0.448028488627195;
    pub const ACAD_DENSITY: f64 = -0.4555987848260855;
    /// Half-filled 4×2 with the two-plaquette product state.
    pub const E0_4X2: f64 = -3.0259228056906786;
    pub const GS_WEIGHT_4X2: f64 = 0.7442514613878703;
    pub const MEAN_ENERGY_4X2: f64 = -2.640469916544155;
    /// `(τ, Re G, Im G)`.
    pub const ECHO_4X2: [(f64, f64, f64); 4] = [
        (1.0, -0.8870032142545438, 0.26656596993605935),
        (2.5, 0.3886227867930285, 0.5963386031700916),
        (5.0, -0.5316464186940053, 0.2152115142258127),
        (10.0, 0.18617330830580817, -0.85309628712715),
    ];
    /// `‖exp(±Hθ) Ψ‖` at θ = 0.1.
    pub const NORM_PLUS_4X2: f64 = 0.7958122302637496;
    pub const NORM_MINUS_4X2: f64 = 1.3172382029869296;
    /// `(τ, |⟨Ψ|e^{-iHτ}e^{+Hθ}|Ψ⟩|, |⟨Ψ|e^{-iHτ}e^{-Hθ}|Ψ⟩|)` at θ = 0.1.
    pub const SHIFTED_4X2: [(f64, f64, f64); 2] =
        [(1.0, 0.6948326921233496, 1.2341484862987957), (5.0, 0.4147351481922445, 0.7915953440242754)];
}

pub struct FourByTwo {
    pub geom: LatticeGeometry,
    pub tiling: PlaquetteTiling,
    pub product: ProductState,
    pub h: SectorOperator,
}

/// Shared across the tests of one binary so the dense spectrum is computed once.
pub fn four_by_two() -> &'static FourByTwo {
    static CELL: std::sync::OnceLock<FourByTwo> = std::sync::OnceLock::new();
    CELL.get_or_init(build_four_by_two)
}

fn build_four_by_two() -> FourByTwo {
    let geom = LatticeGeometry::new(4, 2).unwrap();
    let tiling = PlaquetteTiling::new(&geom, CellPattern::Aaaa).unwrap();
    let product = ProductState::new(&geom, &tiling, 8.0).unwrap();
    let h = build_hubbard_on(
        &geom,
        Some(&tiling),
        &HubbardParams::uniform(1.0, 8.0),
        product.psi.basis().clone(),
        TermFilter::All,
    )
    .unwrap();
    FourByTwo { geom, tiling, product, h }
}
