//! Input-output coefficients of the double-sided QD-cavity system and the
//! spin-dependent scattering transformation they generate.
//!
//! All rates are expressed in units of the cavity decay rate κ and all
//! frequencies as detunings from a common reference, so exact resonance is
//! `omega_c == omega_x == omega`.

use alloc::string::String;
use alloc::vec;
use core::fmt;
use num_complex::Complex64 as C64;

use crate::statevec::{Op, QuantumState, Sel, StateError};

/// Physical parameters of one double-sided QD-cavity unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CavityParams {
    /// X⁻–cavity coupling strength, units of κ.
    pub g: f64,
    /// Cavity decay rate; the reference unit (normally 1).
    pub kappa: f64,
    /// Side-leakage rate κ_s, units of κ.
    pub kappa_s: f64,
    /// Exciton decay rate γ, units of κ.
    pub gamma: f64,
    /// Cavity-mode frequency as a detuning from the reference.
    pub omega_c: f64,
    /// X⁻ transition frequency as a detuning from the reference.
    pub omega_x: f64,
    /// Input-photon frequency as a detuning from the reference.
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CavityError {
    InvalidParams(String),
    DegenerateDenominator,
    Passivity { sum: f64 },
}

impl fmt::Display for CavityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CavityError::InvalidParams(m) => write!(f, "invalid cavity parameters: {m}"),
            CavityError::DegenerateDenominator => {
                write!(f, "scattering denominator vanishes; non-physical parameter set")
            }
            CavityError::Passivity { sum } => {
                write!(f, "coefficients violate passivity (|r|²+|t|² = {sum})")
            }
        }
    }
}

impl core::error::Error for CavityError {}

impl CavityParams {
    /// Resonant operating point from the two experimental ratios
    /// g/(κ+κ_s) and κ_s/κ, plus γ/κ.
    pub fn resonant(g_ratio: f64, ks_ratio: f64, gamma_ratio: f64) -> Self {
        CavityParams {
            g: g_ratio * (1.0 + ks_ratio),
            kappa: 1.0,
            kappa_s: ks_ratio,
            gamma: gamma_ratio,
            omega_c: 0.0,
            omega_x: 0.0,
            omega: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        if self.kappa <= 0.0 {
            return Err(CavityError::InvalidParams(String::from("kappa must be positive")));
        }
        if self.kappa_s < 0.0 || self.gamma < 0.0 || self.g < 0.0 {
            return Err(CavityError::InvalidParams(String::from(
                "g, kappa_s, gamma must be non-negative",
            )));
        }
        Ok(())
    }
}

/// Coefficients with the QD coupled (r, t) and decoupled (r₀, t₀).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatteringCoefficients {
    pub r: C64,
    pub t: C64,
    pub r0: C64,
    pub t0: C64,
}

/// Coefficient magnitudes, the inputs of every closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoeffModuli {
    pub r: f64,
    pub t: f64,
    pub r0: f64,
    pub t0: f64,
}

impl CoeffModuli {
    /// Lossless strong-coupling limit (|r|, |t|, |r₀|, |t₀|) = (1, 0, 0, 1).
    pub fn ideal() -> Self {
        CoeffModuli { r: 1.0, t: 0.0, r0: 0.0, t0: 1.0 }
    }

    /// |r|² + |t|² + |r₀|² + |t₀|², the bookkeeping sum of the η formulas.
    pub fn norm_sum(&self) -> f64 {
        self.r * self.r + self.t * self.t + self.r0 * self.r0 + self.t0 * self.t0
    }

    pub fn check_passivity(&self) -> Result<(), CavityError> {
        let coupled = self.r * self.r + self.t * self.t;
        let uncoupled = self.r0 * self.r0 + self.t0 * self.t0;
        if coupled > 1.0 + 1e-9 {
            return Err(CavityError::Passivity { sum: coupled });
        }
        if uncoupled > 1.0 + 1e-9 {
            return Err(CavityError::Passivity { sum: uncoupled });
        }
        Ok(())
    }
}

/// Reflection/transmission with the QD coupled to the cavity:
/// t = −κ(iδ_X + γ/2) / [(iδ_X + γ/2)(iδ_c + κ + κ_s/2) + g²], r = 1 + t,
/// with δ_X = ω_X − ω and δ_c = ω_c − ω.
pub fn coupled_coefficients(p: &CavityParams) -> Result<(C64, C64), CavityError> {
    p.validate()?;
    let dx = C64::new(p.gamma / 2.0, p.omega_x - p.omega);
    let dc = C64::new(p.kappa + p.kappa_s / 2.0, p.omega_c - p.omega);
    let den = dx * dc + C64::new(p.g * p.g, 0.0);
    if den.norm() < 1e-15 {
        return Err(CavityError::DegenerateDenominator);
    }
    let t = -C64::new(p.kappa, 0.0) * dx / den;
    let r = C64::new(1.0, 0.0) + t;
    Ok((r, t))
}

/// Reflection/transmission with the QD decoupled (g = 0):
/// r₀ = (iδ₀ + κ_s/2) / (iδ₀ + κ + κ_s/2), t₀ = −κ / (iδ₀ + κ + κ_s/2),
/// with δ₀ = ω₀ − ω taken from the cavity detuning.
pub fn uncoupled_coefficients(p: &CavityParams) -> Result<(C64, C64), CavityError> {
    p.validate()?;
    let num = C64::new(p.kappa_s / 2.0, p.omega_c - p.omega);
    let den = C64::new(p.kappa + p.kappa_s / 2.0, p.omega_c - p.omega);
    if den.norm() < 1e-15 {
        return Err(CavityError::DegenerateDenominator);
    }
    Ok((num / den, -C64::new(p.kappa, 0.0) / den))
}

impl ScatteringCoefficients {
    pub fn from_params(p: &CavityParams) -> Result<Self, CavityError> {
        let (r, t) = coupled_coefficients(p)?;
        let (r0, t0) = uncoupled_coefficients(p)?;
        Ok(ScatteringCoefficients { r, t, r0, t0 })
    }

    pub fn moduli(&self) -> CoeffModuli {
        CoeffModuli { r: self.r.norm(), t: self.t.norm(), r0: self.r0.norm(), t0: self.t0.norm() }
    }
}

/// Slot layout of the scattering transformation: (polarization, spatial
/// port, spin), so index = pol·4 + port·2 + spin with R/i₁/↑ = 0.
const R1U: usize = 0;
const R1D: usize = 1;
const R2U: usize = 2;
const R2D: usize = 3;
const L1U: usize = 4;
const L1D: usize = 5;
const L2U: usize = 6;
const L2D: usize = 7;

/// The spin-dependent photon scattering as an 8×8 map on
/// (polarization ⊗ port ⊗ spin), built from coefficient magnitudes with
/// the explicit sign pattern of the reduced resonant rule:
///
/// |R,i₂,↑⟩ → |r||L,i₂,↑⟩ − |t||R,i₁,↑⟩   (and its three coupled partners)
/// |R,i₁,↑⟩ → −|t₀||R,i₂,↑⟩ + |r₀||L,i₁,↑⟩ (and its three uncoupled partners)
///
/// At (1, 0, 0, 1) the map is exactly the unitary ideal rule table.
pub fn scatter_op(c: &CoeffModuli) -> Op {
    let mut m = vec![0.0; 64];
    let mut put = |out: usize, inp: usize, val: f64| m[out * 8 + inp] = val;
    // coupled combos: reflect with |r| (port kept, letter flipped),
    // transmit with -|t| (port flipped, letter kept)
    put(L2U, R2U, c.r);
    put(R1U, R2U, -c.t);
    put(R1U, L1U, c.r);
    put(L2U, L1U, -c.t);
    put(L1D, R1D, c.r);
    put(R2D, R1D, -c.t);
    put(R2D, L2D, c.r);
    put(L1D, L2D, -c.t);
    // uncoupled combos: transmit with -|t₀|, reflect with |r₀|
    put(R2U, R1U, -c.t0);
    put(L1U, R1U, c.r0);
    put(L1U, L2U, -c.t0);
    put(R2U, L2U, c.r0);
    put(R1D, R2D, -c.t0);
    put(L2D, R2D, c.r0);
    put(L2D, L1D, -c.t0);
    put(R1D, L1D, c.r0);
    Op::from_real(8, &m).expect("8x8 literal")
}

/// The ideal rule table (unitary limit of [`scatter_op`]).
pub fn ideal_scatter_op() -> Op {
    scatter_op(&CoeffModuli::ideal())
}

/// Applies the ideal spin-dependent scattering to one photon (both DOFs,
/// the spatial slot acting as the cavity port) and one spin.
pub fn apply_ideal_scattering(
    state: &QuantumState,
    photon: &str,
    spin: &str,
) -> Result<QuantumState, StateError> {
    state.applied(&[Sel::Photon(photon), Sel::Spin(spin)], &ideal_scatter_op())
}

/// Applies the non-ideal scattering; the state comes back unnormalized and
/// its squared norm is returned as the success probability.
pub fn apply_nonideal_scattering(
    state: &QuantumState,
    photon: &str,
    spin: &str,
    coeffs: &CoeffModuli,
) -> Result<(QuantumState, f64), StateError> {
    coeffs
        .check_passivity()
        .map_err(|e| StateError::Precondition(alloc::format!("{e}")))?;
    let out = state.applied(&[Sel::Photon(photon), Sel::Spin(spin)], &scatter_op(coeffs))?;
    let p = out.norm_sqr();
    Ok((out, p))
}
