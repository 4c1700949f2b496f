//! Real- and imaginary-time propagation of sector vectors.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockBasis, FockVector, C64};
use crate::hamiltonian::{SectorOperator, Spectrum};
use crate::linalg;
use crate::prepare::Schedule;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Largest tolerated `|‖ψ‖ - 1|` after a unitary step.
pub const NORM_DRIFT_LIMIT: f64 = 1e-8;

/// Sign of the imaginary-time exponent, `exp(±Hθ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "plus",
            Sign::Minus => "minus",
        })
    }
}

impl FromStr for Sign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" | "+" => Ok(Sign::Plus),
            "minus" | "-" => Ok(Sign::Minus),
            _ => Err(Error::InvalidArgument(format!("unknown sign `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropagatorMode {
    ExactDense,
    Krylov,
}

pub struct Propagator<'a> {
    op: &'a SectorOperator,
    mode: PropagatorMode,
    tolerance: f64,
    spectrum: Option<Arc<Spectrum>>,
}

impl<'a> Propagator<'a> {
    pub fn new(op: &'a SectorOperator, mode: PropagatorMode) -> Result<Self> {
        let spectrum = match mode {
            PropagatorMode::ExactDense => Some(op.spectrum()?),
            PropagatorMode::Krylov => None,
        };
        Ok(Self { op, mode, tolerance: DEFAULT_TOLERANCE, spectrum })
    }

    /// Dense when the spectrum is cheap or already cached, Krylov otherwise.
    pub fn auto(op: &'a SectorOperator) -> Result<Self> {
        if op.dim() <= 400 || op.has_cached_spectrum() {
            Self::new(op, PropagatorMode::ExactDense)
        } else {
            Self::new(op, PropagatorMode::Krylov)
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn mode(&self) -> PropagatorMode {
        self.mode
    }

    pub fn operator(&self) -> &SectorOperator {
        self.op
    }

    /// `exp(z H) ψ` without normalization.
    pub fn exp_action(&self, psi: &[C64], z: C64) -> Result<Vec<C64>> {
        match &self.spectrum {
            Some(s) => {
                let mut c = s.coefficients(psi);
                for (ck, e) in c.iter_mut().zip(&s.energies) {
                    *ck *= (z * e).exp();
                }
                Ok(s.synthesize(&c))
            }
            None => {
                let apply = |x: &[C64], y: &mut [C64]| self.op.apply(x, y);
                linalg::krylov_expm(&apply, psi, z, self.tolerance)
            }
        }
    }

    pub fn evolve_real(&self, psi: &FockVector, tau: f64) -> Result<FockVector> {
        self.op.check(psi)?;
        if tau == 0.0 {
            return Ok(psi.clone());
        }
        let out = self.exp_action(psi.amplitudes(), C64::new(0.0, -tau))?;
        Ok(psi.with_amplitudes(out))
    }

    /// `(exp(±Hθ)ψ / N, N)` with `N = ‖exp(±Hθ)ψ‖`.
    pub fn evolve_imag(&self, psi: &FockVector, theta: f64, sign: Sign) -> Result<(FockVector, f64)> {
        self.op.check(psi)?;
        if theta == 0.0 {
            return Ok((psi.clone(), psi.norm()));
        }
        let out = self.exp_action(psi.amplitudes(), C64::new(sign.value() * theta, 0.0))?;
        let n = linalg::norm(&out);
        if !(n >= 1e-300) || !n.is_finite() {
            return Err(Error::NormUnderflow);
        }
        let v = psi.with_amplitudes(out.into_iter().map(|a| a / n).collect());
        Ok((v, n))
    }
}

fn step_count(tau_total: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(tau_total >= 0.0) || !tau_total.is_finite() {
        return Err(Error::InvalidArgument(format!("bad sweep time {tau_total} or step {dt}")));
    }
    if tau_total == 0.0 {
        return Ok(0);
    }
    if dt > tau_total {
        return Err(Error::InvalidArgument(format!("step {dt} exceeds sweep time {tau_total}")));
    }
    Ok((tau_total / dt - 1e-9).ceil().max(1.0) as usize)
}

/// Piecewise-constant midpoint stepping of `exp(-i H(s) δ)` with
/// `s_k = (k + 1/2)/n` and `δ = τ_total / n`, `n = ⌈τ_total/dt⌉`.
pub fn evolve_piecewise<F>(h_of_s: F, psi: &FockVector, tau_total: f64, dt: f64) -> Result<FockVector>
where
    F: Fn(f64) -> Result<SectorOperator>,
{
    let n = step_count(tau_total, dt)?;
    let delta = if n == 0 { 0.0 } else { tau_total / n as f64 };
    let mut v = psi.clone();
    for k in 0..n {
        let s = (k as f64 + 0.5) / n as f64;
        let h = h_of_s(s)?;
        let p = Propagator::auto(&h)?;
        let before = v.norm();
        v = p.evolve_real(&v, delta)?;
        let drift = (v.norm() - before).abs();
        if drift > NORM_DRIFT_LIMIT {
            return Err(Error::NormDrift { drift });
        }
    }
    Ok(v)
}

/// Runs `psi` through a preparation schedule over `tau_total`.
pub fn evolve_schedule(
    schedule: &Schedule,
    basis: &Arc<FockBasis>,
    psi: &FockVector,
    tau_total: f64,
    dt: f64,
) -> Result<FockVector> {
    evolve_piecewise(|s| schedule.hamiltonian_at(s, basis), psi, tau_total, dt)
}
