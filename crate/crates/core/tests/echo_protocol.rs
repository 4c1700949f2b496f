mod common;

use common::{four_by_two, oracle};
use fermi_echo::echo::{self, IteMode, ShotConfig, TimeGrid};
use fermi_echo::fock::C64;
use fermi_echo::hamiltonian::ground_state;

#[test]
fn exact_echo_matches_reference_values() {
    let s = four_by_two();
    let grid = TimeGrid::new(0.1, 10.0).unwrap();
    let series = echo::exact_echo(&s.h, &s.product.psi, &grid).unwrap();
    assert!((series.g[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
    for (tau, re, im) in oracle::ECHO_4X2 {
        let m = (tau / grid.dt).round() as usize;
        assert!((series.g[m] - C64::new(re, im)).norm() < 1e-9, "τ = {tau}: {}", series.g[m]);
    }
    let weights = echo::spectral_weights(&s.h, &s.product.psi).unwrap();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    assert!((total - 1.0).abs() < 1e-10);
    let mean: f64 = weights.iter().map(|(e, w)| e * w).sum();
    assert!((mean - oracle::MEAN_ENERGY_4X2).abs() < 1e-9);
}

#[test]
fn eigenstate_echo_is_a_pure_phase() {
    let s = four_by_two();
    let gs = ground_state(&s.h).unwrap();
    let grid = TimeGrid::new(0.1, 5.0).unwrap();
    let series = echo::exact_echo(&s.h, &gs.vector, &grid).unwrap();
    for (m, (r, phi)) in series.r.iter().zip(&series.phi).enumerate() {
        assert!((r - 1.0).abs() < 1e-9);
        assert!((phi + gs.energy * grid.time(m)).abs() < 1e-7);
    }
    // The shifted amplitudes of an eigenstate give the energy back exactly.
    let rec =
        echo::reconstruct_echo(&s.h, &gs.vector, &grid, 0.3, IteMode::ExactGlobal, None, Some(gs.energy)).unwrap();
    assert!(rec.reported_phi().iter().all(|p| p.abs() < 1e-6));
}

#[test]
fn shifted_amplitudes_match_reference_values() {
    let s = four_by_two();
    let grid = TimeGrid::new(0.1, 5.0).unwrap();
    let amps = echo::shifted_amplitudes(&s.h, &s.product.psi, &grid, 0.1, IteMode::ExactGlobal).unwrap();
    assert!((amps.norm_plus - oracle::NORM_PLUS_4X2).abs() < 1e-9);
    assert!((amps.norm_minus - oracle::NORM_MINUS_4X2).abs() < 1e-9);
    let (rp, rm) = (amps.r_plus(), amps.r_minus());
    // τ = 0: the reinflated overlap is ⟨ψ|exp(±θH)|ψ⟩.
    let weights = echo::spectral_weights(&s.h, &s.product.psi).unwrap();
    let moment = |sign: f64| weights.iter().map(|(e, w)| w * (sign * 0.1 * e).exp()).sum::<f64>();
    assert!((rp[0] - moment(1.0)).abs() < 1e-12 && (rm[0] - moment(-1.0)).abs() < 1e-12);
    for (tau, want_p, want_m) in oracle::SHIFTED_4X2 {
        let m = (tau / grid.dt).round() as usize;
        assert!((rp[m] - want_p).abs() < 1e-9, "r+ at {tau}: {}", rp[m]);
        assert!((rm[m] - want_m).abs() < 1e-9, "r- at {tau}: {}", rm[m]);
    }
}

#[test]
fn small_theta_recovers_plain_amplitude() {
    let s = four_by_two();
    let grid = TimeGrid::new(0.5, 5.0).unwrap();
    let exact = echo::exact_echo(&s.h, &s.product.psi, &grid).unwrap();
    let amps = echo::shifted_amplitudes(&s.h, &s.product.psi, &grid, 1e-6, IteMode::ExactGlobal).unwrap();
    for ((p, m), r) in amps.r_plus().iter().zip(amps.r_minus()).zip(&exact.r) {
        assert!((p - r).abs() < 1e-4 && (m - r).abs() < 1e-4);
    }
}

#[test]
fn log_convexity_of_shifted_amplitudes() {
    let s = four_by_two();
    let grid = TimeGrid::new(0.1, 10.0).unwrap();
    let exact = echo::exact_echo(&s.h, &s.product.psi, &grid).unwrap();
    let amps = echo::shifted_amplitudes(&s.h, &s.product.psi, &grid, 0.1, IteMode::ExactGlobal).unwrap();
    // Scan: the worst shortfall of r+ r- below r² stays within 5θ².
    let worst = amps
        .r_plus()
        .iter()
        .zip(amps.r_minus())
        .zip(&exact.r)
        .map(|((p, m), r)| r * r - p * m)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(worst < 5.0 * 0.1 * 0.1, "shortfall {worst}");
}

#[test]
fn local_tiling_agrees_with_global_to_second_order() {
    let s = four_by_two();
    let grid = TimeGrid::new(0.1, 5.0).unwrap();
    let mut devs = Vec::new();
    for theta in [0.1, 0.05] {
        let global = echo::shifted_amplitudes(&s.h, &s.product.psi, &grid, theta, IteMode::ExactGlobal).unwrap();
        let local =
            echo::shifted_amplitudes(&s.h, &s.product.psi, &grid, theta, IteMode::ExactLocalTiled(&s.product)).unwrap();
        let dev = global
            .r_plus()
            .iter()
            .zip(local.r_plus())
            .chain(global.r_minus().iter().zip(local.r_minus()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        devs.push(dev);
    }
    // exp(Hθ) and exp(λθ) exp(H_Λ θ) differ through [H_□, H_Λ] at order θ².
    let ratio = devs[0] / devs[1];
    assert!(devs[0] < 0.05 && (3.0..5.0).contains(&ratio), "{devs:?}");
}

#[test]
fn noise_free_reconstruction_closes_on_the_exact_echo() {
    let s = four_by_two();
    let grid = TimeGrid::new(0.1, 10.0).unwrap();
    let exact = echo::exact_echo(&s.h, &s.product.psi, &grid).unwrap();
    let rec = echo::reconstruct_echo(&s.h, &s.product.psi, &grid, 0.05, IteMode::ExactGlobal, None, None).unwrap();
    let err = rec.g.iter().zip(&exact.g).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    // θ² and Δτ² terms at this resolution.
    assert!(err < 5e-3, "{err}");
}

#[test]
fn phase_shift_is_display_only() {
    let s = four_by_two();
    let grid = TimeGrid::new(0.1, 3.0).unwrap();
    let amps = echo::protocol_amplitudes(&s.h, &s.product.psi, &grid, 0.1, IteMode::ExactGlobal).unwrap();
    let plain = echo::reconstruct_from(&amps, None, None).unwrap();
    let shifted = echo::reconstruct_from(&amps, None, Some(oracle::MEAN_ENERGY_4X2)).unwrap();
    assert_eq!(plain.g, shifted.g);
    assert_eq!(plain.phi, shifted.phi);
    let reported = shifted.reported_phi();
    assert!((reported[10] - plain.phi[10] - oracle::MEAN_ENERGY_4X2 * 1.0).abs() < 1e-12);
}

#[test]
fn sampled_series_is_deterministic_and_counts_shots() {
    let s = four_by_two();
    let grid = TimeGrid::new(0.1, 10.0 / 3.0).unwrap();
    let amps = echo::protocol_amplitudes(&s.h, &s.product.psi, &grid, 0.1, IteMode::ExactGlobal).unwrap();
    let shots = ShotConfig::new(100, 11).unwrap();
    let a = echo::reconstruct_from(&amps, Some(&shots), None).unwrap();
    let b = echo::reconstruct_from(&amps, Some(&shots), None).unwrap();
    assert_eq!(a.to_text(&Default::default()), b.to_text(&Default::default()));
    assert_eq!(a.shots, 3 * 34 * 100);
    let other = echo::reconstruct_from(&amps, Some(&ShotConfig::new(100, 12).unwrap()), None).unwrap();
    assert_ne!(a.g, other.g);
}

#[test]
fn series_text_round_trip() {
    let s = four_by_two();
    let grid = TimeGrid::new(0.1, 2.0).unwrap();
    let amps = echo::protocol_amplitudes(&s.h, &s.product.psi, &grid, 0.1, IteMode::ExactGlobal).unwrap();
    let series =
        echo::reconstruct_from(&amps, Some(&ShotConfig::new(50, 3).unwrap()), Some(oracle::MEAN_ENERGY_4X2)).unwrap();
    let text = series.to_text(&Default::default());
    let (back, _) = echo::EchoSeries::from_text(&text).unwrap();
    assert_eq!(back.provenance, series.provenance);
    assert_eq!(back.grid, series.grid);
    for (a, b) in back.g.iter().zip(&series.g) {
        assert!((a - b).norm() < 1e-14);
    }
    for (a, b) in back.phi.iter().zip(&series.phi) {
        assert!((a - b).abs() < 1e-12);
    }
}
