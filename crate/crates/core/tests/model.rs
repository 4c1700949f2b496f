mod common;

use common::oracle;
use fermi_echo::fock::{hop, FockBasis, NumberSector, Spin};
use fermi_echo::hamiltonian::{
    build_hubbard, plaquette_energy_sum, plaquette_ground_state, HubbardParams, SectorOperator, TermFilter,
};
use fermi_echo::lattice::{CellPattern, LatticeGeometry, PlaquetteLabel, PlaquetteTiling};
use fermi_echo::prepare::{self, GradientVariant};
use proptest::prelude::*;
use std::sync::Arc;

#[test]
fn plaquette_energies_match_reference() {
    let p = HubbardParams::uniform(1.0, 8.0);
    let a = plaquette_ground_state(PlaquetteLabel::A, &p).unwrap();
    assert!((a.energy - oracle::E_A).abs() < 1e-10);
    assert!((a.gap - oracle::GAP_A).abs() < 1e-10);
    assert!((plaquette_ground_state(PlaquetteLabel::B, &p).unwrap().energy - oracle::E_B).abs() < 1e-10);
    let c = plaquette_ground_state(PlaquetteLabel::C, &p).unwrap();
    let d = plaquette_ground_state(PlaquetteLabel::D, &p).unwrap();
    assert!((c.energy - oracle::E_C).abs() < 1e-10 && (d.energy - oracle::E_C).abs() < 1e-10);
    assert!(c.degenerate);
}

#[test]
fn doped_cell_energy_densities() {
    let geom = LatticeGeometry::new(4, 4).unwrap();
    for (pattern, want) in [(CellPattern::Aaab, oracle::AAAB_DENSITY), (CellPattern::Acad, oracle::ACAD_DENSITY)] {
        let tiling = PlaquetteTiling::new(&geom, pattern).unwrap();
        let e = plaquette_energy_sum(&tiling, 8.0).unwrap() / 16.0;
        assert!((e - want).abs() < 1e-10, "{pattern:?}: {e}");
    }
}

#[test]
fn halffilled_sweep_converges() {
    let sched = prepare::schedule_halffilled_a();
    let pts = prepare::sweep_scan(&sched, &[5.0, 40.0, 160.0], prepare::DEFAULT_DT).unwrap();
    assert!(pts[0].fidelity < pts[2].fidelity);
    assert!(1.0 - pts[2].fidelity < 1e-3, "{pts:?}");
    assert_eq!(prepare::sweep_knee(&pts, 1e-3), Some(pts.iter().find(|p| 1.0 - p.fidelity < 1e-3).unwrap().tau_total));
}

#[test]
fn reverse_sweep_reproduces_forward_fidelity() {
    for sched in [prepare::schedule_halffilled_a(), prepare::schedule_doped_b(GradientVariant::LocalOffset)] {
        let s = sched.with_tau_total(12.0);
        let f = prepare::run_preparation(&s, 0.02).unwrap().fidelity;
        let r = prepare::run_preparation(&prepare::reverse_sweep(&s), 0.02).unwrap().fidelity;
        assert!((f - r).abs() < 1e-9, "{}: {f} vs {r}", s.name);
    }
}

fn strip_operator(t: [f64; 4], u: f64) -> SectorOperator {
    let geom = LatticeGeometry::new(4, 2).unwrap();
    let tiling = PlaquetteTiling::new(&geom, CellPattern::Aaaa).unwrap();
    let mut p = HubbardParams::uniform(1.0, u);
    for (class, v) in fermi_echo::lattice::BondClass::ALL.into_iter().zip(t) {
        p.set_t(class, v);
    }
    build_hubbard(&geom, Some(&tiling), &p, NumberSector::new(2, 2, 8).unwrap(), TermFilter::All).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hopping_back_restores_config_and_sign(up in 0u32..256, down in 0u32..256, i in 0usize..8, j in 0usize..8, spin_up: bool) {
        prop_assume!(i != j);
        let spin = if spin_up { Spin::Up } else { Spin::Down };
        if let Some((moved, s)) = hop((up, down), i, j, spin) {
            prop_assert_eq!(hop(moved, j, i, spin), Some(((up, down), s)));
            prop_assert_eq!(moved.0.count_ones() + moved.1.count_ones(), up.count_ones() + down.count_ones());
        }
    }

    #[test]
    fn hamiltonian_is_symmetric(t in prop::array::uniform4(-2.0f64..2.0), u in 0.0f64..10.0) {
        let h = strip_operator(t, u).to_dense().unwrap();
        for r in 0..h.nrows() {
            for c in 0..r {
                prop_assert_eq!(h.read(r, c), h.read(c, r));
            }
        }
    }
}

#[test]
fn sector_dimensions() {
    let basis = Arc::new(FockBasis::new(NumberSector::new(3, 3, 12).unwrap()).unwrap());
    assert_eq!(basis.dim(), 220 * 220);
    assert_eq!(FockBasis::new(NumberSector::new(4, 4, 8).unwrap()).unwrap().dim(), 4900);
}
