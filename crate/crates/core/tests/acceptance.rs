//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the test log. Failing criteria are
//! reported, not fatal, so the rest of `cargo test` still runs; set
//! `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use common::four_by_two;
use fermi_echo::echo::{self, IteMode, ShotConfig, TimeGrid};
use fermi_echo::fock::{FockBasis, NumberSector, C64};
use fermi_echo::hamiltonian::{
    assemble, build_hubbard_on, ground_state, plaquette_energy_sum, HubbardParams, TermFilter,
};
use fermi_echo::lattice::{CellPattern, LatticeGeometry, LayerAssignment, PairKind, PlaquetteLabel, PlaquetteTiling};
use fermi_echo::ldos::{self, FilterSpec, LdosCurve};
use fermi_echo::prepare::{self, GradientVariant};
use fermi_echo::propagate::{Propagator, Sign};
use fermi_echo::pulse::{self, apply_tiled_ite, ControlSet, PairSystem, ProductState, PulseConfig, TiledMode};
use fermi_echo::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), Error>;

struct Suite {
    results: Vec<(String, bool)>,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
        self.results.push((name.into(), pass));
    }
}

fn energy_identity() -> Outcome {
    let s = four_by_two();
    let mut worst = 0.0f64;
    for c in &s.tiling.couplings {
        let h = build_hubbard_on(
            &s.geom,
            Some(&s.tiling),
            &HubbardParams::uniform(1.0, 8.0),
            Arc::clone(s.product.psi.basis()),
            TermFilter::Coupling(c.mu, c.nu),
        )?;
        worst = worst.max(h.expectation(&s.product.psi)?.abs());
    }
    Ok((worst < 1e-12, format!("max |<h_uv>| = {worst:.2e}")))
}

fn doped_densities() -> Outcome {
    let density = |pattern: &str| -> Result<f64, Error> {
        let geom = LatticeGeometry::new(4, 4)?;
        let tiling = PlaquetteTiling::new(&geom, pattern.parse::<CellPattern>()?)?;
        Ok(plaquette_energy_sum(&tiling, 8.0)? / 16.0)
    };
    let (aaab, acad) = (density("AAAB")?, density("ACAD")?);
    let pass = (aaab + 0.57).abs() <= 0.01 && (acad + 0.46).abs() <= 0.01;
    Ok((pass, format!("AAAB e = {aaab:.4} (want -0.57), ACAD e = {acad:.4} (want -0.46)")))
}

fn adiabatic_preparation() -> Outcome {
    let dt = prepare::DEFAULT_DT;
    let a = prepare::schedule_halffilled_a();
    let taus = [5.0, 10.0, 20.0, 40.0, 80.0, 120.0, 160.0, 240.0];
    let pts = prepare::sweep_scan(&a, &taus, dt)?;
    let knee = prepare::sweep_knee(&pts, 1e-3);
    let after: Vec<f64> =
        pts.iter().filter(|p| knee.is_some_and(|k| p.tau_total >= k)).map(|p| 1.0 - p.fidelity).collect();
    let a_ok = knee.is_some() && after.iter().all(|&i| i < 1e-3) && after.last() <= after.first();
    // Five periods 2π/t at most.
    let b = prepare::schedule_doped_b(GradientVariant::Linear);
    let b_taus = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0];
    let b_pts = prepare::sweep_scan(&b, &b_taus, dt)?;
    let best = b_pts.iter().max_by(|x, y| x.fidelity.total_cmp(&y.fidelity)).unwrap();
    let b_ok = best.fidelity > 0.999;
    Ok((
        a_ok && b_ok,
        format!(
            "A knee {knee:?}, infidelity past knee {:?}; B linear best fidelity {:.6} at tau {} (want > 0.999 for tau <= 30)",
            after.iter().map(|i| format!("{i:.1e}")).collect::<Vec<_>>(),
            best.fidelity,
            best.tau_total
        ),
    ))
}

fn reverse_sweep() -> Outcome {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (sched, tau) in
        [(prepare::schedule_halffilled_a(), 40.0), (prepare::schedule_doped_b(GradientVariant::Linear), 20.0)]
    {
        let fwd = prepare::run_preparation(&sched.with_tau_total(tau), prepare::DEFAULT_DT)?;
        let rev = prepare::run_preparation(&prepare::reverse_sweep(&sched.with_tau_total(tau)), prepare::DEFAULT_DT)?;
        let d = (fwd.fidelity - rev.fidelity).abs();
        worst = worst.max(d);
        detail.push(format!("{} |dF| = {d:.1e}", sched.name));
    }
    Ok((worst < 1e-6, detail.join(", ")))
}

fn pulse_run(kind: &str, sign: Sign, durations: &[f64]) -> Result<(f64, Option<pulse::PulseResult>), Error> {
    let mut cfg = PulseConfig::new(kind.parse::<PairKind>()?, 0.1, sign);
    cfg.durations = durations.to_vec();
    match pulse::optimize_pulse(&cfg) {
        Ok(r) => Ok((r.fidelity, Some(r))),
        Err(Error::FidelityFloor { best, .. }) => Ok((best, None)),
        Err(e) => Err(e),
    }
}

const NEEL: [&str; 4] = ["udud/dudu", "uddu/duud", "duud/uddu", "dudu/udud"];

fn pulse_synthesis() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut aa_pulse = None;
    for sign in [Sign::Minus, Sign::Plus] {
        let (f, r) = pulse_run("AA", sign, &[1.0])?;
        pass &= f >= 0.999;
        lines.push(format!("AA {sign} F = {f:.5}"));
        if sign == Sign::Minus {
            aa_pulse = r;
        }
    }
    for sign in [Sign::Minus, Sign::Plus] {
        let (f, _) = pulse_run("AB", sign, &[2.0])?;
        pass &= f >= 0.999;
        lines.push(format!("AB {sign} F = {f:.5}"));
    }
    match aa_pulse {
        Some(r) => {
            let sys = PairSystem::new("AA".parse()?, 8.0)?;
            let rows = pulse::population_trace(&sys, &r.pulse, 0.0)?;
            let n_steps = r.pulse.steps.len() + 1;
            let mut avg: BTreeMap<String, f64> = BTreeMap::new();
            for row in &rows {
                *avg.entry(row.state.clone()).or_default() += row.population / n_steps as f64;
            }
            let dominant: Vec<(&String, &f64)> = avg.iter().filter(|(_, p)| **p > 0.05).collect();
            let ok = dominant.len() == 4
                && dominant.iter().all(|(s, p)| NEEL.contains(&s.as_str()) && (**p - 0.08).abs() <= 0.02);
            pass &= ok;
            lines.push(format!(
                "AA populations above 5%: {}",
                dominant.iter().map(|(s, p)| format!("{s} {:.3}", p)).collect::<Vec<_>>().join(", ")
            ));
        }
        None => {
            pass = false;
            lines.push("no AA pulse above the floor for the population check".into());
        }
    }
    Ok((pass, lines.join("; ")))
}

fn gradient_check() -> Outcome {
    let basis = FockBasis::new(NumberSector::new(2, 2, 4)?)?;
    let drift = assemble(&basis, &[], 8.0, &[]);
    let x = assemble(&basis, &[(0, 1, 1.0), (2, 3, 1.0)], 0.0, &[]);
    let y = assemble(&basis, &[(0, 2, 1.0), (1, 3, 1.0)], 0.0, &[]);
    let cs = ControlSet::new(&drift, &[x, y])?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let random_state = |rng: &mut ChaCha8Rng| {
        let v: Vec<C64> = (0..cs.dim()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.into_iter().map(|z| z / n).collect::<Vec<_>>()
    };
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let psi = random_state(&mut rng);
        let target = random_state(&mut rng);
        let p: Vec<f64> = (0..3 * cs.n_controls()).map(|_| rng.gen_range(0.0..3.0)).collect();
        let (_, grad) = cs.fidelity_gradient(&p, 0.3, &psi, &target)?;
        let h = 1e-6;
        let mut fd = Vec::with_capacity(p.len());
        for k in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[k] += h;
            b[k] -= h;
            fd.push((cs.fidelity(&a, 0.3, &psi, &target)? - cs.fidelity(&b, 0.3, &psi, &target)?) / (2.0 * h));
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = grad.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    Ok((worst < 1e-5, format!("max relative error {worst:.2e} over 10 random 3-step pulses")))
}

fn tiling_slope() -> Outcome {
    let geom = LatticeGeometry::new(6, 2)?;
    let mut tiling = PlaquetteTiling::new(&geom, CellPattern::Aaaa)?;
    for p in &mut tiling.plaquettes {
        p.label = PlaquetteLabel::B;
    }
    let product = ProductState::new(&geom, &tiling, 8.0)?;
    let h_inter = build_hubbard_on(
        &geom,
        Some(&tiling),
        &HubbardParams::uniform(1.0, 8.0),
        Arc::clone(product.psi.basis()),
        TermFilter::InterOnly,
    )?;
    let prop = Propagator::auto(&h_inter)?;
    let layers = LayerAssignment::new(&tiling);
    let thetas = [0.4, 0.2, 0.1, 0.05];
    let mut errs = Vec::new();
    for &theta in &thetas {
        let mut worst = 0.0f64;
        for sign in [Sign::Plus, Sign::Minus] {
            let (exact, n) = prop.evolve_imag(&product.psi, theta, sign)?;
            let (tiled, combined) = apply_tiled_ite(&product, &layers, theta, sign, TiledMode::ExactLocalIte)?;
            let local = combined / (sign.value() * product.lambda_p * theta).exp();
            let diff: f64 = exact
                .amplitudes()
                .iter()
                .zip(tiled.amplitudes())
                .map(|(a, b)| (a * n - b * local).norm_sqr())
                .sum::<f64>()
                .sqrt();
            worst = worst.max(diff);
        }
        errs.push(worst);
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = thetas.iter().zip(&errs).map(|(t, e)| (t.ln(), e.ln())).unzip();
    let slope = fit_slope(&lx, &ly);
    Ok((
        (1.8..=2.2).contains(&slope),
        format!(
            "slope {slope:.3}, errors {:?} (dim {})",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            h_inter.dim()
        ),
    ))
}

fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn phase_convergence() -> Outcome {
    let s = four_by_two();
    let grid = TimeGrid::new(0.1, 10.0)?;
    let weights = echo::spectral_weights(&s.h, &s.product.psi)?;
    let exact = echo::exact_echo(&s.h, &s.product.psi, &grid)?;
    // Same quadrature applied to the exact gradient isolates the θ error.
    let reference = echo::integrate_phase(&echo::exact_phase_gradient(&weights, &grid), &grid)?;
    let mut errs = Vec::new();
    let mut raw = Vec::new();
    for theta in [0.1, 0.05] {
        let rec = echo::reconstruct_echo(&s.h, &s.product.psi, &grid, theta, IteMode::ExactGlobal, None, None)?;
        errs.push(max_abs_diff(&rec.phi, &reference));
        raw.push(max_abs_diff(&rec.phi, &exact.phi));
    }
    let ratio = errs[0] / errs[1];
    Ok((
        (ratio - 4.0).abs() <= 0.5,
        format!(
            "ratio {ratio:.3} (errors {:.2e}, {:.2e}); against the unwrapped exact phase {:.2e}, {:.2e}, ratio {:.3}",
            errs[0],
            errs[1],
            raw[0],
            raw[1],
            raw[0] / raw[1]
        ),
    ))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const FILTERS: [(f64, f64); 3] = [(0.6, 10.0 / 3.0), (0.4, 20.0 / 3.0), (0.2, 10.0)];

fn ldos_reproduction() -> Outcome {
    let s = four_by_two();
    let e0 = ground_state(&s.h)?.energy;
    let ov = ldos::exact_overlaps(&s.h, &s.product.psi)?;
    let energies = ldos::default_energy_grid(ov[0].0, ov.last().unwrap().0, ldos::DEFAULT_ENERGY_POINTS)?;
    let mut pass = true;
    let mut lines = Vec::new();
    for (delta, tau_max) in FILTERS {
        let grid = TimeGrid::new(echo::DEFAULT_DT, tau_max)?;
        let filter = FilterSpec::new(delta, grid)?;
        let exact = ldos::reconstruct_ldos(&echo::exact_echo(&s.h, &s.product.psi, &grid)?, &filter, &energies)?;
        let amps = echo::protocol_amplitudes(&s.h, &s.product.psi, &grid, echo::DEFAULT_THETA, IteMode::ExactGlobal)?;
        let mut curves: Vec<LdosCurve> = Vec::new();
        let mut shots = 0;
        for seed in 0..50 {
            let series = echo::reconstruct_from(&amps, Some(&ShotConfig::new(100, seed)?), None)?;
            shots = series.shots;
            curves.push(ldos::reconstruct_ldos(&series, &filter, &energies)?);
        }
        let mean = ldos::ensemble(&curves)?;
        let sigma = mean.sigma.as_ref().unwrap();
        let outside = (0..energies.len()).filter(|&i| (mean.density[i] - exact.density[i]).abs() > sigma[i]).count();
        let want_shots = (tau_max / (10.0 / 3.0)).round() * 10_000.0;
        let shots_ok = (shots as f64 / want_shots - 1.0).abs() < 0.05;
        let mut line = format!("delta {delta}: shots {shots}, {outside}/{} points outside 1 sigma", energies.len());
        pass &= shots_ok && outside == 0;
        if delta == 0.2 {
            let p = ldos::peak_estimate(&mean)?;
            pass &= (p.energy - e0).abs() < delta;
            line += &format!(", peak {:.4} vs E_GS {e0:.4}", p.energy);
        }
        lines.push(line);
    }
    Ok((pass, lines.join("; ")))
}

fn truncation_study() -> Outcome {
    let s = four_by_two();
    let ov = ldos::exact_overlaps(&s.h, &s.product.psi)?;
    let energies = ldos::default_energy_grid(ov[0].0, ov.last().unwrap().0, ldos::DEFAULT_ENERGY_POINTS)?;
    let long = TimeGrid::new(echo::DEFAULT_DT, 10.0)?;
    let series = echo::exact_echo(&s.h, &s.product.psi, &long)?;
    let mut ringing = Vec::new();
    let mut peaks = Vec::new();
    for tau_max in [10.0 / 3.0, 20.0 / 3.0, 10.0] {
        let filter = FilterSpec::new(0.3, TimeGrid::new(echo::DEFAULT_DT, tau_max)?)?;
        let curve = ldos::reconstruct_ldos(&series, &filter, &energies)?;
        ringing.push(ldos::ringing_amplitude(&curve));
        peaks.push(ldos::peak_estimate(&curve)?.energy);
    }
    let decreasing = ringing.windows(2).all(|w| w[1] < w[0]);
    // Stable: the last two peaks agree to a tenth of the filter width.
    let stable = (peaks[2] - peaks[1]).abs() < 0.03;
    Ok((
        decreasing && stable,
        format!(
            "ringing {:?}, peaks {:?}",
            ringing.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>(),
            peaks.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>()
        ),
    ))
}

fn sampling_statistics() -> Outcome {
    let (r, m, n) = (0.6f64, 100usize, 10_000u64);
    let mut r2 = Vec::with_capacity(n as usize);
    let mut rs = Vec::with_capacity(n as usize);
    for seed in 0..n {
        let cfg = ShotConfig::new(m, seed)?;
        let a = echo::sample_amplitude(r, &cfg, &mut echo::point_rng(seed, 0, 0))?;
        rs.push(a.value);
        r2.push(a.value * a.value);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m2, mr) = (mean(&r2), mean(&rs));
    let sd_r = (rs.iter().map(|x| (x - mr).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let sigma_mean = (r * r * (1.0 - r * r) / m as f64).sqrt() / (n as f64).sqrt();
    let bias_ok = (m2 - r * r).abs() < 3.0 * sigma_mean;
    let delta_sd = (1.0 - r * r).sqrt() / (2.0 * (m as f64).sqrt());
    let sd_ok = (sd_r / delta_sd - 1.0).abs() < 0.1;
    Ok((
        bias_ok && sd_ok,
        format!(
            "mean r^2 {m2:.5} vs {:.5} (3 sigma = {:.1e}); std r {sd_r:.5} vs delta method {delta_sd:.5}",
            r * r,
            3.0 * sigma_mean
        ),
    ))
}

fn main() -> ExitCode {
    let mut suite = Suite { results: Vec::new() };
    suite.run("plaquette energy identity", energy_identity);
    suite.run("doped energy densities", doped_densities);
    suite.run("adiabatic preparation", adiabatic_preparation);
    suite.run("reverse-sweep projection", reverse_sweep);
    suite.run("gradient check", gradient_check);
    suite.run("sampling statistics", sampling_statistics);
    suite.run("phase reconstruction convergence", phase_convergence);
    suite.run("LDOS reproduction", ldos_reproduction);
    suite.run("fixed-delta truncation study", truncation_study);
    suite.run("tiling error", tiling_slope);
    suite.run("pulse synthesis", pulse_synthesis);
    let failed: Vec<&str> = suite.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("acceptance: {}/{} passed", suite.results.len() - failed.len(), suite.results.len());
    if failed.is_empty() {
        return ExitCode::SUCCESS;
    }
    println!("failed: {}", failed.join(", "));
    if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
