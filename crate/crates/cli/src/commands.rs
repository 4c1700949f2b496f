use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fermi_echo::echo::{self, EchoSeries, IteMode, ProtocolAmplitudes, ShotConfig, TimeGrid};
use fermi_echo::hamiltonian::{build_hubbard_on, ground_state, HubbardParams, SectorOperator, TermFilter};
use fermi_echo::io::{self, fmt_f64, short_hash, Header};
use fermi_echo::lattice::{PairKind, PlaquetteLabel};
use fermi_echo::ldos::{self, FilterSpec, LdosCurve};
use fermi_echo::prepare::{self, Schedule};
use fermi_echo::propagate::Sign;
use fermi_echo::pulse::{self, PairSystem, ProductState, PulseConfig, PulseLibrary, PulseSequence};
use fermi_echo::Error;

use crate::config::{EchoMode, IteChoice, RunConfig};

/// What a command did, for the summary line.
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub reused: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { written: Vec::new(), reused: Vec::new(), warnings: Vec::new() }
    }

    fn absorb(&mut self, other: Outcome) {
        self.written.extend(other.written);
        self.reused.extend(other.reused);
        self.warnings.extend(other.warnings);
    }
}

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub reuse: bool,
}

impl Context<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn header(&self, basis: Option<&str>) -> Header {
        let mut h = Header::new();
        h.push("config_hash", self.cfg.hash());
        if let Some(b) = basis {
            h.push("basis", b);
        }
        h.push("units", io::UNITS_NOTE);
        h
    }

    /// `path` exists and records `stage_hash`.
    fn fresh(&self, path: &Path, stage_hash: &str) -> bool {
        self.reuse && io::read_table(path).is_ok_and(|t| t.header.get("stage_hash") == Some(stage_hash))
    }
}

/// Puts `extra` in front of a table that was written without it.
fn stamp(text: &str, extra: &Header) -> String {
    let mut out = String::new();
    for (k, v) in extra.entries() {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    out + text
}

fn write(path: PathBuf, text: &str, outcome: &mut Outcome) -> fermi_echo::Result<()> {
    io::write_file(&path, text)?;
    outcome.written.push(path);
    Ok(())
}

fn schedule_for(label: PlaquetteLabel, cfg: &RunConfig) -> anyhow::Result<Schedule> {
    let gradient = cfg.gradient()?;
    Ok(match label {
        PlaquetteLabel::A => prepare::schedule_halffilled_a(),
        PlaquetteLabel::B => prepare::schedule_doped_b(gradient),
        PlaquetteLabel::C | PlaquetteLabel::D => prepare::schedule_doped_cd(label, gradient)?,
    })
}

pub fn cmd_prepare(ctx: &Context<'_>) -> anyhow::Result<Outcome> {
    let cfg = ctx.cfg;
    let (_, tiling) = cfg.tiling()?;
    let labels: BTreeSet<PlaquetteLabel> = tiling.labels().into_iter().collect();
    let mut outcome = Outcome::new();
    for label in labels {
        let sched = schedule_for(label, cfg)?;
        let points = prepare::sweep_scan(&sched, &cfg.prepare.sweep_times, cfg.prepare.dt)?;
        let knee = prepare::sweep_knee(&points, cfg.prepare.infidelity_target);
        let tau = knee.unwrap_or_else(|| cfg.prepare.sweep_times.iter().cloned().fold(0.0, f64::max));
        let report = prepare::run_preparation(&sched.with_tau_total(tau), cfg.prepare.dt)?;
        let basis = report.final_state.basis().fingerprint();
        let mut h = ctx.header(Some(&basis));
        h.push("knee", knee.map_or("none".to_string(), fmt_f64));
        h.push("report_tau", fmt_f64(tau));
        h.push("report_fidelity", fmt_f64(report.fidelity));
        h.push("min_gap", fmt_f64(report.min_gap));
        h.push("ground_degeneracy", report.ground_degeneracy);
        if knee.is_none() {
            outcome
                .warnings
                .push(format!("{label}: no scanned sweep time reaches infidelity {}", cfg.prepare.infidelity_target));
        }
        write(
            ctx.out(&format!("prepare_{label}.txt")),
            &stamp(&prepare::sweep_table(&sched.name, &points), &h),
            &mut outcome,
        )?;
        write(
            ctx.out(&format!("gap_{label}.txt")),
            &stamp(&report.gap_table(), &ctx.header(Some(&basis))),
            &mut outcome,
        )?;
    }
    Ok(outcome)
}

fn pulse_path(ctx: &Context<'_>, kind: PairKind, sign: Sign) -> PathBuf {
    ctx.out(&format!("pulse_{kind}_{sign}.txt"))
}

fn pulse_config(cfg: &RunConfig, kind: PairKind, sign: Sign) -> PulseConfig {
    let mut p = PulseConfig::new(kind, cfg.pulse.theta, sign);
    p.u = cfg.model.u;
    p.dt = cfg.pulse.dt;
    p.durations = cfg.pulse.durations.clone();
    p.seed = cfg.seed;
    p.max_iters = cfg.pulse.max_iters;
    p.restarts = cfg.pulse.restarts;
    p.fidelity_floor = cfg.pulse.fidelity_floor;
    p.stop_fidelity = cfg.pulse.stop_fidelity;
    p
}

fn pulse_stage_hash(p: &PulseConfig) -> String {
    short_hash(format!("{p:?}"))
}

/// Pulses that reached the floor and pulses that did not.
pub struct PulseRun {
    pub outcome: Outcome,
    pub library: PulseLibrary,
    pub below_floor: Vec<(PairKind, Sign, f64)>,
}

pub fn cmd_optimize_pulse(ctx: &Context<'_>) -> anyhow::Result<PulseRun> {
    let cfg = ctx.cfg;
    let (_, tiling) = cfg.tiling()?;
    let mut run = PulseRun { outcome: Outcome::new(), library: PulseLibrary::new(), below_floor: Vec::new() };
    for kind in tiling.pair_kinds() {
        let mut system = None;
        for sign in [Sign::Plus, Sign::Minus] {
            let pcfg = pulse_config(cfg, kind, sign);
            let stage = pulse_stage_hash(&pcfg);
            let path = pulse_path(ctx, kind, sign);
            if ctx.fresh(&path, &stage) {
                let (pulse, header) = PulseSequence::from_text(&std::fs::read_to_string(&path)?)?;
                let fidelity = header.get_f64("fidelity")?;
                if fidelity < pcfg.fidelity_floor {
                    run.below_floor.push((kind, sign, fidelity));
                } else {
                    run.library.insert(pulse);
                }
                run.outcome.reused.push(path);
                continue;
            }
            if system.is_none() {
                system = Some(PairSystem::new(kind, cfg.model.u)?);
            }
            let sys = system.as_ref().expect("built above");
            let result = match pulse::optimize_pulse_on(sys, &pcfg) {
                Ok(r) => r,
                Err(Error::FidelityFloor { best, result, .. }) => {
                    run.below_floor.push((kind, sign, best));
                    *result
                }
                Err(e) => return Err(e.into()),
            };
            let basis = sys.psi().basis().fingerprint();
            let mut h = ctx.header(Some(&basis));
            h.push("stage_hash", &stage);
            h.push("restarts", pcfg.restarts);
            h.push("seed", pcfg.seed);
            write(path, &result.to_text(&h), &mut run.outcome)?;
            let rows = pulse::population_trace(sys, &result.pulse, pulse::POPULATION_FLOOR)?;
            let mut ph = ctx.header(Some(&basis));
            ph.push("pair_kind", kind);
            ph.push("sign", sign);
            write(
                ctx.out(&format!("populations_{kind}_{sign}.txt")),
                &pulse::population_table(&rows, &ph),
                &mut run.outcome,
            )?;
            if result.fidelity >= pcfg.fidelity_floor {
                run.library.insert(result.pulse);
            }
        }
    }
    Ok(run)
}

/// Loads every pulse the tiling needs from the output directory.
fn load_library(ctx: &Context<'_>, kinds: &[PairKind]) -> anyhow::Result<PulseLibrary> {
    let mut lib = PulseLibrary::new();
    for &kind in kinds {
        for sign in [Sign::Plus, Sign::Minus] {
            let path = pulse_path(ctx, kind, sign);
            let text = std::fs::read_to_string(&path)
                .map_err(|_| Error::MissingPulse(format!("{} (run optimize-pulse first)", path.display())))?;
            let (pulse, header) = PulseSequence::from_text(&text)?;
            let floor = ctx.cfg.pulse.fidelity_floor;
            if header.get_f64("fidelity")? < floor {
                return Err(
                    Error::MissingPulse(format!("{} is below the fidelity floor {floor}", path.display())).into()
                );
            }
            lib.insert(pulse);
        }
    }
    Ok(lib)
}

struct EchoSystem {
    h: SectorOperator,
    product: ProductState,
    mean_energy: f64,
    kinds: Vec<PairKind>,
}

fn echo_system(cfg: &RunConfig) -> anyhow::Result<EchoSystem> {
    let (geom, tiling) = cfg.tiling()?;
    let product = ProductState::new(&geom, &tiling, cfg.model.u)?;
    let h = build_hubbard_on(
        &geom,
        Some(&tiling),
        &HubbardParams::uniform(1.0, cfg.model.u),
        product.psi.basis().clone(),
        TermFilter::All,
    )?;
    let mean_energy = h.expectation(&product.psi)?;
    Ok(EchoSystem { h, product, mean_energy, kinds: tiling.pair_kinds() })
}

fn echo_path(ctx: &Context<'_>, mode: EchoMode, k: usize) -> PathBuf {
    let name = match mode {
        EchoMode::Exact => "exact",
        EchoMode::Sampled => "sampled",
        EchoMode::Pulse => "pulse",
    };
    ctx.out(&format!("echo_{name}_{k}.txt"))
}

pub fn cmd_echo(ctx: &Context<'_>, library: Option<&PulseLibrary>) -> anyhow::Result<Outcome> {
    let cfg = ctx.cfg;
    let e = &cfg.echo;
    let sys = echo_system(cfg)?;
    let grid = TimeGrid::new(e.dt, e.tau_max)?;
    let basis = sys.h.basis().fingerprint();
    let shift = e.subtract_mean_energy.then_some(sys.mean_energy);
    let mut outcome = Outcome::new();

    let mut reference = echo::exact_echo(&sys.h, &sys.product.psi, &grid)?;
    reference.phase_shift = shift;
    let mut h = ctx.header(Some(&basis));
    h.push("mean_energy", fmt_f64(sys.mean_energy));
    write(ctx.out("echo_reference.txt"), &reference.to_text(&h), &mut outcome)?;

    let loaded;
    let mode = match (e.mode, e.ite) {
        (EchoMode::Pulse, _) => {
            let lib = match library {
                Some(l) => l,
                None => {
                    loaded = load_library(ctx, &sys.kinds)?;
                    &loaded
                }
            };
            IteMode::PulseTiled(&sys.product, lib)
        }
        (_, IteChoice::ExactGlobal) => IteMode::ExactGlobal,
        (_, IteChoice::ExactLocalTiled) => IteMode::ExactLocalTiled(&sys.product),
    };
    let amps: ProtocolAmplitudes = echo::protocol_amplitudes(&sys.h, &sys.product.psi, &grid, e.theta, mode)?;
    let n_series = if e.mode == EchoMode::Exact { 1 } else { e.ensemble };
    for k in 0..n_series {
        let shots = match e.mode {
            EchoMode::Exact => None,
            _ => Some(ShotConfig::new(e.samples, cfg.seed + k as u64)?),
        };
        let series = echo::reconstruct_from(&amps, shots.as_ref(), shift)?;
        if series.floored > 0 {
            outcome.warnings.push(format!("series {k}: {} amplitude estimates hit the sampling floor", series.floored));
        }
        let mut h = ctx.header(Some(&basis));
        h.push("ite", mode.name());
        h.push("mean_energy", fmt_f64(sys.mean_energy));
        h.push("norm_plus", fmt_f64(amps.shifted.norm_plus));
        h.push("norm_minus", fmt_f64(amps.shifted.norm_minus));
        write(echo_path(ctx, e.mode, k), &series.to_text(&h), &mut outcome)?;
    }
    Ok(outcome)
}

fn read_series(path: &Path) -> anyhow::Result<EchoSeries> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| anyhow::anyhow!("cannot read {} (run the echo stage first): {err}", path.display()))?;
    Ok(EchoSeries::from_text(&text)?.0)
}

fn tag(delta: f64, tau_max: f64) -> String {
    format!("d{delta:.3}_t{tau_max:.3}")
}

pub fn cmd_ldos(ctx: &Context<'_>) -> anyhow::Result<Outcome> {
    let cfg = ctx.cfg;
    let sys = echo_system(cfg)?;
    let basis = sys.h.basis().fingerprint();
    let mut outcome = Outcome::new();
    let reference = read_series(&ctx.out("echo_reference.txt"))?;
    let n_series = if cfg.echo.mode == EchoMode::Exact { 1 } else { cfg.echo.ensemble };
    let sampled: Vec<EchoSeries> =
        (0..n_series).map(|k| read_series(&echo_path(ctx, cfg.echo.mode, k))).collect::<anyhow::Result<_>>()?;

    let gs = ground_state(&sys.h)?;
    let overlaps = ldos::exact_overlaps(&sys.h, &sys.product.psi)?;
    let e_max = overlaps.last().map_or(0.0, |o| o.0);
    let energies = ldos::default_energy_grid(gs.energy, e_max, cfg.ldos.energy_points)?;
    let rows: Vec<Vec<String>> = overlaps.iter().map(|(e, p)| vec![fmt_f64(*e), fmt_f64(*p)]).collect();
    let mut h = ctx.header(Some(&basis));
    h.push("kind", "overlaps");
    h.push("ground_energy", fmt_f64(gs.energy));
    write(ctx.out("overlaps.txt"), &io::write_table(&h, &["energy", "weight"], &rows), &mut outcome)?;

    let mut peaks = Vec::new();
    for f in &cfg.ldos.filters {
        let grid = reference.grid.truncated(f.tau_max)?;
        let filter = FilterSpec::new(f.delta, grid)?;
        if filter.truncated() {
            outcome.warnings.push(format!(
                "filter δ = {} truncated at τ = {} (c_R/c_0 = {:.2e}); expect ringing",
                f.delta,
                grid.tau_max(),
                filter.tail_ratio()
            ));
        }
        let exact = ldos::reconstruct_ldos(&reference, &filter, &energies)?;
        let curves: Vec<LdosCurve> =
            sampled.iter().map(|s| ldos::reconstruct_ldos(s, &filter, &energies)).collect::<Result<_, _>>()?;
        let mean = ldos::ensemble(&curves)?;
        let mut h = ctx.header(Some(&basis));
        h.push("tail_ratio", fmt_f64(filter.tail_ratio()));
        h.push("series", n_series);
        let t = tag(f.delta, grid.tau_max());
        write(ctx.out(&format!("ldos_{t}_reference.txt")), &exact.to_text(&h), &mut outcome)?;
        write(ctx.out(&format!("ldos_{t}_protocol.txt")), &mean.to_text(&h), &mut outcome)?;
        for (name, curve) in [("reference", &exact), ("protocol", &mean)] {
            let row = match ldos::peak_estimate(curve) {
                Ok(p) => vec![
                    fmt_f64(f.delta),
                    fmt_f64(grid.tau_max()),
                    name.to_string(),
                    fmt_f64(p.energy),
                    fmt_f64(p.uncertainty),
                    fmt_f64(p.energy - gs.energy),
                    fmt_f64(ldos::ringing_amplitude(curve)),
                ],
                Err(Error::NoPeak) => {
                    outcome.warnings.push(format!("no peak in the {name} curve at δ = {}", f.delta));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            peaks.push(row);
        }
    }
    let mut h = ctx.header(Some(&basis));
    h.push("kind", "ldos_peaks");
    h.push("ground_energy", fmt_f64(gs.energy));
    let cols = ["delta", "tau_max", "curve", "peak", "uncertainty", "peak_minus_ground", "ringing"];
    write(ctx.out("ldos_peaks.txt"), &io::write_table(&h, &cols, &peaks), &mut outcome)?;
    Ok(outcome)
}

/// Stops after the pulse stage when a pulse misses the fidelity floor.
pub fn cmd_pipeline(ctx: &Context<'_>) -> anyhow::Result<(Outcome, Vec<(PairKind, Sign, f64)>)> {
    let mut outcome = cmd_prepare(ctx).map_err(|e| e.context("prepare stage"))?;
    let pulses = cmd_optimize_pulse(ctx).map_err(|e| e.context("optimize-pulse stage"))?;
    outcome.absorb(pulses.outcome);
    if !pulses.below_floor.is_empty() {
        return Ok((outcome, pulses.below_floor));
    }
    outcome.absorb(cmd_echo(ctx, Some(&pulses.library)).map_err(|e| e.context("echo stage"))?);
    outcome.absorb(cmd_ldos(ctx).map_err(|e| e.context("ldos stage"))?);
    Ok((outcome, pulses.below_floor))
}
