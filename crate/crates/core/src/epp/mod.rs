//! The purification engines: the two-step Bell protocol and its GHZ
//! generalization, each available twice over — as an exact circuit
//! simulation on [`crate::statevec::Ensemble`]s and as closed-form
//! recurrences on the mixture parameters. The acceptance suite holds the
//! two routes against each other.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math::{abs, sqrt};
use crate::statevec::StateError;

pub mod bell;
pub mod ghz;

pub use bell::{
    bell_first_step, bell_input_ensemble, bell_second_step, BellCase, CaseOutcome, TransferDof,
};
pub use ghz::{ghz_first_step, ghz_input_ensemble, ghz_second_step, GhzCaseOutcome, GhzClass};

#[derive(Clone, Debug, PartialEq)]
pub enum EppError {
    State(StateError),
    MalformedEnsemble(String),
    BadMixture(String),
    IncompatibleCases,
}

impl From<StateError> for EppError {
    fn from(e: StateError) -> Self {
        EppError::State(e)
    }
}

impl fmt::Display for EppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EppError::State(e) => write!(f, "{e}"),
            EppError::MalformedEnsemble(m) => write!(f, "malformed ensemble: {m}"),
            EppError::BadMixture(m) => write!(f, "invalid mixture parameters: {m}"),
            EppError::IncompatibleCases => {
                write!(f, "second step needs one polarization-good and one spatial-good group")
            }
        }
    }
}

impl core::error::Error for EppError {}

/// Options shared by the Bell and GHZ circuit engines.
#[derive(Clone, Copy, Debug)]
pub struct EppOptions {
    pub scattering: crate::primitives::Scattering,
    /// Detect the sacrificial photons of the transfer cases already in the
    /// first step. The alternative defers detection to the second step;
    /// both orderings give identical outcomes.
    pub detect_early: bool,
}

impl Default for EppOptions {
    fn default() -> Self {
        EppOptions { scattering: crate::primitives::Scattering::Ideal, detect_early: true }
    }
}

/// Two-photon mixture descriptor: probability `f1` of the error-free
/// polarization class and `f2` of the error-free spatial class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BellMixture {
    pub f1: f64,
    pub f2: f64,
}

impl BellMixture {
    pub fn new(f1: f64, f2: f64) -> Result<Self, EppError> {
        for (name, v) in [("F1", f1), ("F2", f2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EppError::BadMixture(format!("{name} = {v} outside [0,1]")));
            }
        }
        Ok(BellMixture { f1, f2 })
    }
}

/// Three-photon GHZ mixture descriptor: polarization class weights
/// F₀..F₃ (sum 1) and spatial weights P₀, P₁ (sum 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GhzMixture {
    pub f: [f64; 4],
    pub p: [f64; 2],
}

impl GhzMixture {
    pub fn new(f: [f64; 4], p: [f64; 2]) -> Result<Self, EppError> {
        if f.iter().chain(p.iter()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EppError::BadMixture(String::from("weights outside [0,1]")));
        }
        let fs: f64 = f.iter().sum();
        let ps: f64 = p.iter().sum();
        if abs(fs - 1.0) > 1e-12 {
            return Err(EppError::BadMixture(format!("F weights sum to {fs}")));
        }
        if abs(ps - 1.0) > 1e-12 {
            return Err(EppError::BadMixture(format!("P weights sum to {ps}")));
        }
        Ok(GhzMixture { f, p })
    }
}

/// One purification round on the Bell mixture parameters:
/// F′ᵢ = Fᵢ² / [Fᵢ² + (1−Fᵢ)²].
pub fn bell_recurrence(m: &BellMixture) -> BellMixture {
    let step = |f: f64| f * f / (f * f + (1.0 - f) * (1.0 - f));
    BellMixture { f1: step(m.f1), f2: step(m.f2) }
}

/// First-round efficiency of the Bell protocol. Without the QSJM only the
/// both-DOFs-agree case survives, Y₀ = [F₁²+(1−F₁)²][F₂²+(1−F₂)²]; with it
/// the single-DOF cases pair up and Y = min of the two factors.
pub fn bell_efficiency(m: &BellMixture, with_qsjm: bool) -> f64 {
    let s1 = m.f1 * m.f1 + (1.0 - m.f1) * (1.0 - m.f1);
    let s2 = m.f2 * m.f2 + (1.0 - m.f2) * (1.0 - m.f2);
    if with_qsjm {
        s1.min(s2)
    } else {
        s1 * s2
    }
}

/// One purification round on the GHZ mixture parameters:
/// F′ᵢ = Fᵢ²/ΣF², P′ⱼ = Pⱼ²/(P₀²+P₁²).
pub fn ghz_recurrence(m: &GhzMixture) -> GhzMixture {
    let fs: f64 = m.f.iter().map(|x| x * x).sum();
    let ps: f64 = m.p.iter().map(|x| x * x).sum();
    GhzMixture {
        f: [m.f[0] * m.f[0] / fs, m.f[1] * m.f[1] / fs, m.f[2] * m.f[2] / fs, m.f[3] * m.f[3] / fs],
        p: [m.p[0] * m.p[0] / ps, m.p[1] * m.p[1] / ps],
    }
}

/// The F₀ value above which one GHZ round improves F₀, as a closed form in
/// F₁ and F₂ (F₃ is fixed by normalization):
/// (1/4)[3 − 2F₁ − 2F₂ − √(1 + 4(F₁+F₂) − 12(F₁²+F₂²) − 8F₁F₂)].
/// `None` when the discriminant is negative (no threshold).
pub fn ghz_improvement_threshold(f1: f64, f2: f64) -> Option<f64> {
    let disc = 1.0 + 4.0 * (f1 + f2) - 12.0 * (f1 * f1 + f2 * f2) - 8.0 * f1 * f2;
    if disc < 0.0 {
        return None;
    }
    Some(0.25 * (3.0 - 2.0 * f1 - 2.0 * f2 - sqrt(disc)))
}

/// First-round efficiency of the GHZ protocol: Y₀ = ΣF²·(P₀²+P₁²) without
/// the QSJM, Y = min(ΣF², P₀²+P₁²) with it.
pub fn ghz_efficiency(m: &GhzMixture, with_qsjm: bool) -> f64 {
    let fs: f64 = m.f.iter().map(|x| x * x).sum();
    let ps: f64 = m.p.iter().map(|x| x * x).sum();
    if with_qsjm {
        fs.min(ps)
    } else {
        fs * ps
    }
}

/// Mixture parameters that support round iteration.
pub trait MixtureParams: Sized + Clone {
    fn step(&self) -> Self;
    /// Weight of the fully error-free component.
    fn joint_fidelity(&self) -> f64;
    fn efficiency(&self, with_qsjm: bool) -> f64;
}

impl MixtureParams for BellMixture {
    fn step(&self) -> Self {
        bell_recurrence(self)
    }

    fn joint_fidelity(&self) -> f64 {
        self.f1 * self.f2
    }

    fn efficiency(&self, with_qsjm: bool) -> f64 {
        bell_efficiency(self, with_qsjm)
    }
}

impl MixtureParams for GhzMixture {
    fn step(&self) -> Self {
        ghz_recurrence(self)
    }

    fn joint_fidelity(&self) -> f64 {
        self.f[0] * self.p[0]
    }

    fn efficiency(&self, with_qsjm: bool) -> f64 {
        ghz_efficiency(self, with_qsjm)
    }
}

/// Iterates a recurrence for `rounds` rounds; index 0 is the input.
pub fn iterate<M: MixtureParams>(m: &M, rounds: usize) -> Vec<M> {
    let mut out = Vec::with_capacity(rounds + 1);
    out.push(m.clone());
    for _ in 0..rounds {
        let next = out.last().unwrap().step();
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_recurrence_fixed_points_and_example() {
        for f in [0.0, 0.5, 1.0] {
            let m = BellMixture { f1: f, f2: f };
            let next = bell_recurrence(&m);
            assert!(abs(next.f1 - f) < 1e-15);
        }
        let next = bell_recurrence(&BellMixture { f1: 0.8, f2: 0.8 });
        assert!(abs(next.f1 - 0.64 / 0.68) < 1e-15);
        assert!(abs(next.joint_fidelity() - (0.64 / 0.68) * (0.64 / 0.68)) < 1e-15);
        // strictly increasing on (1/2, 1)
        let mut f = 0.51;
        while f < 0.999 {
            let n = bell_recurrence(&BellMixture { f1: f, f2: f }).f1;
            assert!(n > f);
            f += 0.02;
        }
    }

    #[test]
    fn bell_efficiency_examples() {
        let m = BellMixture { f1: 1.0, f2: 1.0 };
        assert!(abs(bell_efficiency(&m, false) - 1.0) < 1e-15);
        assert!(abs(bell_efficiency(&m, true) - 1.0) < 1e-15);
        let m = BellMixture { f1: 0.8, f2: 0.8 };
        assert!(abs(bell_efficiency(&m, false) - 0.4624) < 1e-15);
        assert!(abs(bell_efficiency(&m, true) - 0.68) < 1e-15);
        let m = BellMixture { f1: 0.9, f2: 0.7 };
        assert!(abs(bell_efficiency(&m, true) - 0.58) < 1e-15);
    }

    #[test]
    fn ghz_recurrence_examples() {
        let m = GhzMixture::new([1.0, 0.0, 0.0, 0.0], [0.5, 0.5]).unwrap();
        let n = ghz_recurrence(&m);
        assert!(abs(n.f[0] - 1.0) < 1e-15);
        assert!(abs(n.p[0] - 0.5) < 1e-15);
        let m = GhzMixture::new([0.7, 0.1, 0.1, 0.1], [0.7, 0.3]).unwrap();
        let n = ghz_recurrence(&m);
        assert!(abs(n.f[0] - 0.49 / 0.52) < 1e-15);
        assert!(abs(n.p[0] - 0.49 / 0.58) < 1e-15);
        // normalization after every round
        let traj = iterate(&m, 6);
        for pt in &traj {
            let fs: f64 = pt.f.iter().sum();
            let ps: f64 = pt.p.iter().sum();
            assert!(abs(fs - 1.0) < 1e-12);
            assert!(abs(ps - 1.0) < 1e-12);
        }
    }

    #[test]
    fn ghz_threshold_examples_and_bracketing() {
        assert!(abs(ghz_improvement_threshold(0.0, 0.0).unwrap() - 0.5) < 1e-15);
        let thr = ghz_improvement_threshold(0.1, 0.1).unwrap();
        let expect = 0.25 * (3.0 - 0.4 - sqrt(1.48));
        assert!(abs(thr - expect) < 1e-15);
        // bracketing: F0 just above improves, just below does not
        for eps in [1e-3, 1e-4] {
            for f0 in [thr + eps, thr - eps] {
                let f3 = 1.0 - f0 - 0.2;
                let m = GhzMixture::new([f0, 0.1, 0.1, f3], [0.7, 0.3]).unwrap();
                let n = ghz_recurrence(&m);
                if f0 > thr {
                    assert!(n.f[0] > f0);
                } else {
                    assert!(n.f[0] <= f0);
                }
            }
        }
    }

    #[test]
    fn ghz_efficiency_examples() {
        let m = GhzMixture::new([1.0, 0.0, 0.0, 0.0], [1.0, 0.0]).unwrap();
        assert!(abs(ghz_efficiency(&m, false) - 1.0) < 1e-15);
        let m = GhzMixture::new([0.7, 0.1, 0.1, 0.1], [0.7, 0.3]).unwrap();
        assert!(abs(ghz_efficiency(&m, false) - 0.3016) < 1e-12);
        assert!(abs(ghz_efficiency(&m, true) - 0.52) < 1e-12);
        // Y >= Y0 on a grid, equality iff a factor is 1
        let mut f0 = 0.25;
        while f0 <= 1.0 {
            let rest = (1.0 - f0) / 3.0;
            let mut p0 = 0.5;
            while p0 <= 1.0 {
                let m = GhzMixture::new([f0, rest, rest, rest], [p0, 1.0 - p0]).unwrap();
                let y = ghz_efficiency(&m, true);
                let y0 = ghz_efficiency(&m, false);
                assert!(y >= y0 - 1e-15);
                let fs: f64 = m.f.iter().map(|x| x * x).sum();
                let ps: f64 = m.p.iter().map(|x| x * x).sum();
                if abs(y - y0) < 1e-15 {
                    assert!(abs(fs - 1.0) < 1e-12 || abs(ps - 1.0) < 1e-12);
                }
                p0 += 0.125;
            }
            f0 += 0.25;
        }
    }

    #[test]
    fn iterate_round_zero_is_input() {
        let m = BellMixture { f1: 0.8, f2: 0.8 };
        let traj = iterate(&m, 0);
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0], m);
        // monotone trajectory dominance: 0.9 start dominates 0.6 start
        let lo = iterate(&BellMixture { f1: 0.6, f2: 0.6 }, 4);
        let hi = iterate(&BellMixture { f1: 0.9, f2: 0.9 }, 4);
        for (l, h) in lo.iter().zip(&hi) {
            assert!(h.joint_fidelity() >= l.joint_fidelity());
        }
    }

    #[test]
    fn mixture_validation() {
        assert!(BellMixture::new(1.2, 0.5).is_err());
        assert!(GhzMixture::new([0.5, 0.5, 0.5, 0.5], [0.5, 0.5]).is_err());
        assert!(GhzMixture::new([0.7, 0.1, 0.1, 0.1], [0.6, 0.3]).is_err());
    }
}
