//! Dense state-vector engine for small registers of photons and spins.
//!
//! A photon carries two binary degrees of freedom: circular polarization
//! {|R⟩, |L⟩} and a dual-rail spatial mode {|i₁⟩, |i₂⟩}. An electron spin
//! carries one: {|↑⟩, |↓⟩}. Internally a register is flattened into a list
//! of two-level *slots* (photons occupy two, spins one) and amplitudes are
//! stored densely, first registered subsystem in the most significant
//! position. Basis value 0 maps to |R⟩ / |i₁⟩ / |↑⟩ and 1 to |L⟩ / |i₂⟩ /
//! |↓⟩.
//!
//! Measurement never samples: [`QuantumState::measure_enumerate`] returns
//! one branch per outcome with its exact Born weight. Non-unitary maps
//! (cavity scattering losses) leave states unnormalized; the squared norm
//! is the surviving probability and renormalization is the caller's call.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use num_complex::Complex64 as C64;

use crate::math::{abs, sqrt, FRAC_1_SQRT_2};

/// Absolute tolerance for amplitude and probability comparisons.
pub const AMP_TOL: f64 = 1e-12;

/// Branch weights below this are treated as exactly zero when pruning.
pub const PRUNE_TOL: f64 = 1e-14;

/// What a subsystem is, which fixes its dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubsystemKind {
    /// 4-dimensional: polarization ⊗ spatial mode.
    Photon,
    /// 2-dimensional electron spin.
    ElectronSpin,
}

impl SubsystemKind {
    pub fn dimension(self) -> usize {
        match self {
            SubsystemKind::Photon => 4,
            SubsystemKind::ElectronSpin => 2,
        }
    }

    fn slots(self) -> usize {
        match self {
            SubsystemKind::Photon => 2,
            SubsystemKind::ElectronSpin => 1,
        }
    }
}

/// A labelled subsystem. Labels are unique within one register.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsystemId {
    label: String,
    kind: SubsystemKind,
}

impl SubsystemId {
    pub fn photon(label: &str) -> Self {
        SubsystemId { label: label.to_string(), kind: SubsystemKind::Photon }
    }

    pub fn spin(label: &str) -> Self {
        SubsystemId { label: label.to_string(), kind: SubsystemKind::ElectronSpin }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> SubsystemKind {
        self.kind
    }
}

/// The two binary degrees of freedom of a photon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhotonDof {
    Polarization,
    Spatial,
}

/// Selects slots of a register for gates and measurements.
#[derive(Clone, Copy, Debug)]
pub enum Sel<'a> {
    /// Polarization slot of a photon.
    Pol(&'a str),
    /// Spatial-mode slot of a photon.
    Spat(&'a str),
    /// Both slots of a photon, polarization first.
    Photon(&'a str),
    /// An electron spin.
    Spin(&'a str),
}

impl Sel<'_> {
    fn describe(&self) -> String {
        match self {
            Sel::Pol(l) => alloc::format!("{l}.pol"),
            Sel::Spat(l) => alloc::format!("{l}.spat"),
            Sel::Photon(l) => alloc::format!("{l}"),
            Sel::Spin(l) => alloc::format!("{l}"),
        }
    }
}

/// Errors from register construction and state manipulation.
#[derive(Clone, Debug, PartialEq)]
pub enum StateError {
    DuplicateLabel(String),
    UnknownSubsystem(String),
    WrongKind(String),
    DimensionMismatch { expected: usize, got: usize },
    NotNormalized(f64),
    NonOrthonormalBasis,
    RegisterMismatch,
    NotAProduct(String),
    BadWeights(f64),
    EmptyEnsemble,
    Precondition(String),
}

impl fmt::Display for StateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateError::DuplicateLabel(l) => write!(f, "duplicate subsystem label `{l}`"),
            StateError::UnknownSubsystem(l) => write!(f, "no subsystem labelled `{l}`"),
            StateError::WrongKind(l) => write!(f, "subsystem `{l}` has the wrong kind for this selector"),
            StateError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            StateError::NotNormalized(n) => write!(f, "state not normalized (squared norm {n})"),
            StateError::NonOrthonormalBasis => write!(f, "measurement basis is not orthonormal"),
            StateError::RegisterMismatch => write!(f, "states are defined on different registers"),
            StateError::NotAProduct(l) => {
                write!(f, "subsystems {l} are entangled with the rest; cannot discard")
            }
            StateError::BadWeights(s) => write!(f, "ensemble weights invalid (sum {s})"),
            StateError::EmptyEnsemble => write!(f, "ensemble has no components"),
            StateError::Precondition(m) => write!(f, "precondition violated: {m}"),
        }
    }
}

impl core::error::Error for StateError {}

/// An ordered set of subsystems; fixes the amplitude layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Register {
    subs: Vec<SubsystemId>,
    /// First slot index of each subsystem.
    offsets: Vec<usize>,
    n_slots: usize,
}

impl Register {
    pub fn new(subs: Vec<SubsystemId>) -> Result<Self, StateError> {
        let mut offsets = Vec::with_capacity(subs.len());
        let mut n_slots = 0;
        for (i, s) in subs.iter().enumerate() {
            if subs[..i].iter().any(|t| t.label == s.label) {
                return Err(StateError::DuplicateLabel(s.label.clone()));
            }
            offsets.push(n_slots);
            n_slots += s.kind.slots();
        }
        Ok(Register { subs, offsets, n_slots })
    }

    pub fn subsystems(&self) -> &[SubsystemId] {
        &self.subs
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn dim(&self) -> usize {
        1 << self.n_slots
    }

    fn position(&self, label: &str) -> Result<usize, StateError> {
        self.subs
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| StateError::UnknownSubsystem(label.to_string()))
    }

    /// Flattens selectors into slot indices, in selector order.
    pub fn resolve(&self, sels: &[Sel<'_>]) -> Result<Vec<usize>, StateError> {
        let mut slots = Vec::new();
        for sel in sels {
            match sel {
                Sel::Pol(l) | Sel::Spat(l) => {
                    let i = self.position(l)?;
                    if self.subs[i].kind != SubsystemKind::Photon {
                        return Err(StateError::WrongKind((*l).to_string()));
                    }
                    let off = self.offsets[i];
                    slots.push(if matches!(sel, Sel::Pol(_)) { off } else { off + 1 });
                }
                Sel::Photon(l) => {
                    let i = self.position(l)?;
                    if self.subs[i].kind != SubsystemKind::Photon {
                        return Err(StateError::WrongKind((*l).to_string()));
                    }
                    slots.push(self.offsets[i]);
                    slots.push(self.offsets[i] + 1);
                }
                Sel::Spin(l) => {
                    let i = self.position(l)?;
                    if self.subs[i].kind != SubsystemKind::ElectronSpin {
                        return Err(StateError::WrongKind((*l).to_string()));
                    }
                    slots.push(self.offsets[i]);
                }
            }
        }
        Ok(slots)
    }
}

/// A small dense linear map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Op {
    dim: usize,
    elems: Vec<C64>,
}

impl Op {
    pub fn new(dim: usize, elems: Vec<C64>) -> Result<Self, StateError> {
        if elems.len() != dim * dim {
            return Err(StateError::DimensionMismatch { expected: dim * dim, got: elems.len() });
        }
        Ok(Op { dim, elems })
    }

    /// Builds from real entries, row-major.
    pub fn from_real(dim: usize, elems: &[f64]) -> Result<Self, StateError> {
        Op::new(dim, elems.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn identity(dim: usize) -> Self {
        let mut elems = vec![C64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            elems[i * dim + i] = C64::new(1.0, 0.0);
        }
        Op { dim, elems }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elem(&self, row: usize, col: usize) -> C64 {
        self.elems[row * self.dim + col]
    }

    /// Matrix product `self · other`.
    pub fn mul(&self, other: &Op) -> Result<Op, StateError> {
        if self.dim != other.dim {
            return Err(StateError::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let d = self.dim;
        let mut elems = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..d {
                    acc += self.elems[i * d + k] * other.elems[k * d + j];
                }
                elems[i * d + j] = acc;
            }
        }
        Ok(Op { dim: d, elems })
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Op {
        let d = self.dim;
        let mut elems = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                elems[j * d + i] = self.elems[i * d + j].conj();
            }
        }
        Op { dim: d, elems }
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let p = match self.dagger().mul(self) {
            Ok(p) => p,
            Err(_) => return false,
        };
        let d = self.dim;
        (0..d).all(|i| {
            (0..d).all(|j| {
                let want = if i == j { 1.0 } else { 0.0 };
                (p.elems[i * d + j] - C64::new(want, 0.0)).norm_sqr() < tol * tol
            })
        })
    }
}

/// One measurement outcome over a complete enumeration: the outcome
/// labels, its exact probability (Born weight relative to the incoming
/// state's normalization), any conditional corrections applied afterwards,
/// and the renormalized surviving state.
#[derive(Clone, Debug)]
pub struct BranchRecord {
    pub outcomes: Vec<(String, String)>,
    pub probability: f64,
    pub corrections: Vec<String>,
    pub survivor: QuantumState,
}

/// An orthonormal measurement basis on one or more slots.
#[derive(Clone, Debug)]
pub struct MeasBasis {
    labels: Vec<String>,
    vectors: Vec<Vec<C64>>,
}

impl MeasBasis {
    pub fn new(labels: Vec<String>, vectors: Vec<Vec<C64>>) -> Result<Self, StateError> {
        let dim = vectors.len();
        if dim == 0 || labels.len() != dim || vectors.iter().any(|v| v.len() != dim) {
            return Err(StateError::DimensionMismatch { expected: dim, got: labels.len() });
        }
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..dim {
                    acc += vectors[i][k].conj() * vectors[j][k];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                if (acc - C64::new(want, 0.0)).norm() > 1e-9 {
                    return Err(StateError::NonOrthonormalBasis);
                }
            }
        }
        Ok(MeasBasis { labels, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn two(l0: &str, l1: &str) -> Self {
        MeasBasis {
            labels: vec![l0.to_string(), l1.to_string()],
            vectors: vec![
                vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
                vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            ],
        }
    }

    /// {|R⟩, |L⟩} on a polarization slot.
    pub fn pol() -> Self {
        Self::two("R", "L")
    }

    /// {|i₁⟩, |i₂⟩} on a spatial slot.
    pub fn spatial() -> Self {
        Self::two("1", "2")
    }

    /// {|↑⟩, |↓⟩} on a spin.
    pub fn spin_z() -> Self {
        Self::two("up", "down")
    }

    /// {|+⟩, |−⟩} on a spin.
    pub fn spin_x() -> Self {
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        MeasBasis {
            labels: vec!["+".to_string(), "-".to_string()],
            vectors: vec![vec![h, h], vec![h, -h]],
        }
    }

    /// Computational basis {|R,i₁⟩..|L,i₂⟩} on a whole photon.
    pub fn photon() -> Self {
        let mut labels = Vec::new();
        let mut vectors = Vec::new();
        for (p, pl) in ["R", "L"].iter().enumerate() {
            for (s, sl) in ["1", "2"].iter().enumerate() {
                labels.push(alloc::format!("{pl}{sl}"));
                let mut v = vec![C64::new(0.0, 0.0); 4];
                v[p * 2 + s] = C64::new(1.0, 0.0);
                vectors.push(v);
            }
        }
        MeasBasis { labels, vectors }
    }
}

/// A pure state: a register plus one complex amplitude per basis vector.
#[derive(Clone, Debug)]
pub struct QuantumState {
    register: Register,
    amps: Vec<C64>,
}

impl QuantumState {
    /// Tensor product of per-subsystem pure states, in registration order.
    ///
    /// Each initial vector must be normalized and match its subsystem's
    /// dimension (photon amplitudes ordered |R,i₁⟩, |R,i₂⟩, |L,i₁⟩, |L,i₂⟩).
    pub fn register(parts: &[(SubsystemId, &[C64])]) -> Result<Self, StateError> {
        let reg = Register::new(parts.iter().map(|(s, _)| s.clone()).collect())?;
        let mut amps = vec![C64::new(1.0, 0.0)];
        for (sub, init) in parts {
            if init.len() != sub.kind.dimension() {
                return Err(StateError::DimensionMismatch {
                    expected: sub.kind.dimension(),
                    got: init.len(),
                });
            }
            let n: f64 = init.iter().map(|a| a.norm_sqr()).sum();
            if abs(n - 1.0) > 1e-9 {
                return Err(StateError::NotNormalized(n));
            }
            let mut next = Vec::with_capacity(amps.len() * init.len());
            for a in &amps {
                for b in *init {
                    next.push(a * b);
                }
            }
            amps = next;
        }
        Ok(QuantumState { register: reg, amps })
    }

    /// Wraps raw amplitudes over an explicit register.
    pub fn from_amps(register: Register, amps: Vec<C64>) -> Result<Self, StateError> {
        if amps.len() != register.dim() {
            return Err(StateError::DimensionMismatch { expected: register.dim(), got: amps.len() });
        }
        Ok(QuantumState { register, amps })
    }

    /// Joins two states on disjoint registers.
    pub fn product(a: &QuantumState, b: &QuantumState) -> Result<Self, StateError> {
        let mut subs = a.register.subs.clone();
        subs.extend(b.register.subs.iter().cloned());
        let reg = Register::new(subs)?;
        let mut amps = Vec::with_capacity(a.amps.len() * b.amps.len());
        for x in &a.amps {
            for y in &b.amps {
                amps.push(x * y);
            }
        }
        Ok(QuantumState { register: reg, amps })
    }

    pub fn register_ref(&self) -> &Register {
        &self.register
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn renormalized(&self) -> QuantumState {
        let n = sqrt(self.norm_sqr());
        let amps = self.amps.iter().map(|a| a / n).collect();
        QuantumState { register: self.register.clone(), amps }
    }

    /// ⟨self|other⟩. Registers must match exactly (same labels, same order).
    pub fn inner(&self, other: &QuantumState) -> Result<C64, StateError> {
        if self.register != other.register {
            return Err(StateError::RegisterMismatch);
        }
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in self.amps.iter().zip(&other.amps) {
            acc += a.conj() * b;
        }
        Ok(acc)
    }

    /// |⟨reference|state⟩|²; global phase drops out. Symmetric.
    pub fn fidelity(&self, reference: &QuantumState) -> Result<f64, StateError> {
        Ok(self.inner(reference)?.norm_sqr())
    }

    /// Applies `op` to the selected slots (identity elsewhere), in place.
    /// The norm is preserved iff `op` is unitary.
    pub fn apply(&mut self, sels: &[Sel<'_>], op: &Op) -> Result<(), StateError> {
        let slots = self.register.resolve(sels)?;
        let k = slots.len();
        if op.dim != (1 << k) {
            return Err(StateError::DimensionMismatch { expected: 1 << k, got: op.dim });
        }
        let n = self.register.n_slots();
        let bits: Vec<usize> = slots.iter().map(|&p| 1usize << (n - 1 - p)).collect();
        let mask: usize = bits.iter().fold(0, |m, b| m | b);
        let kd = 1usize << k;
        let offs: Vec<usize> = (0..kd)
            .map(|t| {
                let mut o = 0;
                for (j, b) in bits.iter().enumerate() {
                    if t & (1 << (k - 1 - j)) != 0 {
                        o |= b;
                    }
                }
                o
            })
            .collect();
        let mut gathered = vec![C64::new(0.0, 0.0); kd];
        for base in 0..self.amps.len() {
            if base & mask != 0 {
                continue;
            }
            for t in 0..kd {
                gathered[t] = self.amps[base | offs[t]];
            }
            for tp in 0..kd {
                let mut acc = C64::new(0.0, 0.0);
                for t in 0..kd {
                    acc += op.elems[tp * kd + t] * gathered[t];
                }
                self.amps[base | offs[tp]] = acc;
            }
        }
        Ok(())
    }

    /// Non-destructive [`QuantumState::apply`].
    pub fn applied(&self, sels: &[Sel<'_>], op: &Op) -> Result<QuantumState, StateError> {
        let mut out = self.clone();
        out.apply(sels, op)?;
        Ok(out)
    }

    /// Projective measurement with full branch enumeration.
    ///
    /// One [`BranchRecord`] per outcome, with the exact Born weight
    /// relative to the incoming normalization (weights over a complete
    /// basis sum to the incoming squared norm). Survivors are renormalized
    /// and keep the measured slots collapsed onto the outcome vector.
    /// Zero-weight branches are omitted unless `include_zero`.
    pub fn measure_enumerate(
        &self,
        sels: &[Sel<'_>],
        basis: &MeasBasis,
        include_zero: bool,
    ) -> Result<Vec<BranchRecord>, StateError> {
        let slots = self.register.resolve(sels)?;
        let k = slots.len();
        if basis.dim() != (1 << k) {
            return Err(StateError::DimensionMismatch { expected: 1 << k, got: basis.dim() });
        }
        let n = self.register.n_slots();
        let bits: Vec<usize> = slots.iter().map(|&p| 1usize << (n - 1 - p)).collect();
        let mask: usize = bits.iter().fold(0, |m, b| m | b);
        let kd = 1usize << k;
        let offs: Vec<usize> = (0..kd)
            .map(|t| {
                let mut o = 0;
                for (j, b) in bits.iter().enumerate() {
                    if t & (1 << (k - 1 - j)) != 0 {
                        o |= b;
                    }
                }
                o
            })
            .collect();
        let what: String = sels
            .iter()
            .map(|s| s.describe())
            .collect::<Vec<_>>()
            .join("&");

        let mut branches = Vec::with_capacity(kd);
        for (o, bvec) in basis.vectors.iter().enumerate() {
            let mut amps = vec![C64::new(0.0, 0.0); self.amps.len()];
            let mut prob = 0.0;
            for base in 0..self.amps.len() {
                if base & mask != 0 {
                    continue;
                }
                let mut proj = C64::new(0.0, 0.0);
                for t in 0..kd {
                    proj += bvec[t].conj() * self.amps[base | offs[t]];
                }
                prob += proj.norm_sqr();
                if proj.norm_sqr() > 0.0 {
                    for t in 0..kd {
                        amps[base | offs[t]] = bvec[t] * proj;
                    }
                }
            }
            if prob <= PRUNE_TOL && !include_zero {
                continue;
            }
            let survivor = if prob > PRUNE_TOL {
                QuantumState { register: self.register.clone(), amps }.renormalized()
            } else {
                QuantumState { register: self.register.clone(), amps }
            };
            branches.push(BranchRecord {
                outcomes: vec![(what.clone(), basis.labels[o].clone())],
                probability: prob,
                corrections: Vec::new(),
                survivor,
            });
        }
        Ok(branches)
    }

    /// Removes subsystems that factor out of the rest of the state.
    ///
    /// Errors with [`StateError::NotAProduct`] when they are still
    /// entangled. The surviving factor is renormalized.
    pub fn discard_product(&self, labels: &[&str]) -> Result<QuantumState, StateError> {
        let n = self.register.n_slots();
        let mut drop_slots = Vec::new();
        let mut keep_subs = Vec::new();
        for (i, sub) in self.register.subs.iter().enumerate() {
            if labels.contains(&sub.label.as_str()) {
                for s in 0..sub.kind.slots() {
                    drop_slots.push(self.register.offsets[i] + s);
                }
            } else {
                keep_subs.push(sub.clone());
            }
        }
        if drop_slots.len() != labels.iter().map(|l| {
            self.register.position(l).map(|i| self.register.subs[i].kind.slots()).unwrap_or(0)
        }).sum::<usize>() || keep_subs.len() + labels.len() != self.register.subs.len()
        {
            // Some label was missing.
            for l in labels {
                self.register.position(l)?;
            }
        }
        let keep_slots: Vec<usize> = (0..n).filter(|s| !drop_slots.contains(s)).collect();
        let dd = 1usize << drop_slots.len();
        let kd = 1usize << keep_slots.len();
        let scatter = |slots: &[usize], v: usize| -> usize {
            let mut idx = 0;
            for (j, &slot) in slots.iter().enumerate() {
                if v & (1 << (slots.len() - 1 - j)) != 0 {
                    idx |= 1 << (n - 1 - slot);
                }
            }
            idx
        };
        let drop_offs: Vec<usize> = (0..dd).map(|d| scatter(&drop_slots, d)).collect();
        let keep_offs: Vec<usize> = (0..kd).map(|r| scatter(&keep_slots, r)).collect();
        let idx_of = |d: usize, r: usize| -> usize { drop_offs[d] | keep_offs[r] };
        // Rank-1 factorization M[d][r] = u[d]·v[r] around the largest pivot.
        let mut pivot = (0usize, 0usize);
        let mut pmax = 0.0;
        for d in 0..dd {
            for r in 0..kd {
                let m = self.amps[idx_of(d, r)].norm_sqr();
                if m > pmax {
                    pmax = m;
                    pivot = (d, r);
                }
            }
        }
        if pmax == 0.0 {
            return Err(StateError::NotNormalized(0.0));
        }
        let (d0, r0) = pivot;
        let piv = self.amps[idx_of(d0, r0)];
        let u: Vec<C64> = (0..dd).map(|d| self.amps[idx_of(d, r0)]).collect();
        let v: Vec<C64> = (0..kd).map(|r| self.amps[idx_of(d0, r)] / piv).collect();
        let scale = sqrt(self.norm_sqr());
        for d in 0..dd {
            for r in 0..kd {
                let err = (self.amps[idx_of(d, r)] - u[d] * v[r]).norm();
                if err > AMP_TOL.max(1e-10 * scale) {
                    return Err(StateError::NotAProduct(labels.join(",")));
                }
            }
        }
        let reg = Register::new(keep_subs)?;
        QuantumState::from_amps(reg, v).map(|s| s.renormalized())
    }

    /// Rebuilds the state with subsystems registered in `order`.
    /// Protocol-level observables must not depend on this.
    pub fn permuted(&self, order: &[&str]) -> Result<QuantumState, StateError> {
        if order.len() != self.register.subs.len() {
            return Err(StateError::DimensionMismatch {
                expected: self.register.subs.len(),
                got: order.len(),
            });
        }
        let mut subs = Vec::with_capacity(order.len());
        for l in order {
            let i = self.register.position(l)?;
            subs.push(self.register.subs[i].clone());
        }
        let new_reg = Register::new(subs)?;
        let n = self.register.n_slots();
        // old slot index -> new slot index
        let mut slot_map = vec![0usize; n];
        for (new_i, l) in order.iter().enumerate() {
            let old_i = self.register.position(l)?;
            for s in 0..self.register.subs[old_i].kind.slots() {
                slot_map[self.register.offsets[old_i] + s] = new_reg.offsets[new_i] + s;
            }
        }
        let mut amps = vec![C64::new(0.0, 0.0); self.amps.len()];
        for (old_idx, a) in self.amps.iter().enumerate() {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            let mut new_idx = 0;
            for old_slot in 0..n {
                if old_idx & (1 << (n - 1 - old_slot)) != 0 {
                    new_idx |= 1 << (n - 1 - slot_map[old_slot]);
                }
            }
            amps[new_idx] = *a;
        }
        Ok(QuantumState { register: new_reg, amps })
    }

    /// Renames subsystems; kinds and order are untouched.
    pub fn relabeled(&self, renames: &[(&str, &str)]) -> Result<QuantumState, StateError> {
        let mut subs = self.register.subs.clone();
        for (from, to) in renames {
            let i = self.register.position(from)?;
            subs[i].label = (*to).to_string();
        }
        let register = Register::new(subs)?;
        Ok(QuantumState { register, amps: self.amps.clone() })
    }

    /// Extracts the pure state of `labels` when it factors from the rest.
    pub fn extract_factor(&self, labels: &[&str]) -> Result<QuantumState, StateError> {
        let others: Vec<&str> = self
            .register
            .subs
            .iter()
            .map(|s| s.label.as_str())
            .filter(|l| !labels.contains(l))
            .collect();
        let factor = self.discard_product(&others)?;
        // Reorder to the requested label order.
        factor.permuted(labels)
    }
}

/// A classical mixture of pure states on one shared register.
#[derive(Clone, Debug)]
pub struct Ensemble {
    components: Vec<(f64, QuantumState)>,
}

impl Ensemble {
    pub fn new(components: Vec<(f64, QuantumState)>) -> Result<Self, StateError> {
        if components.is_empty() {
            return Err(StateError::EmptyEnsemble);
        }
        let sum: f64 = components.iter().map(|(w, _)| *w).sum();
        if components.iter().any(|(w, _)| *w < -AMP_TOL) || abs(sum - 1.0) > 1e-9 {
            return Err(StateError::BadWeights(sum));
        }
        let reg = components[0].1.register.clone();
        if components.iter().any(|(_, s)| s.register != reg) {
            return Err(StateError::RegisterMismatch);
        }
        Ok(Ensemble { components })
    }

    /// A single pure state with weight 1.
    pub fn pure(state: QuantumState) -> Self {
        Ensemble { components: vec![(1.0, state)] }
    }

    pub fn components(&self) -> &[(f64, QuantumState)] {
        &self.components
    }

    /// Applies a pure-state protocol componentwise. Branch weights multiply
    /// into component weights; the result is renormalized over surviving
    /// branches and the total survival probability is returned alongside.
    pub fn mix_map<F>(&self, mut f: F) -> Result<(Ensemble, f64), StateError>
    where
        F: FnMut(&QuantumState) -> Result<Vec<(f64, QuantumState)>, StateError>,
    {
        let mut out: Vec<(f64, QuantumState)> = Vec::new();
        for (w, state) in &self.components {
            for (p, s) in f(state)? {
                let wp = w * p;
                if wp > PRUNE_TOL {
                    out.push((wp, s));
                }
            }
        }
        let survival: f64 = out.iter().map(|(w, _)| *w).sum();
        if out.is_empty() || survival <= PRUNE_TOL {
            return Err(StateError::EmptyEnsemble);
        }
        for (w, _) in &mut out {
            *w /= survival;
        }
        Ok((Ensemble { components: out }, survival))
    }

    /// Merges components that are equal up to global phase.
    pub fn coalesced(&self) -> Ensemble {
        let mut reps: Vec<(f64, QuantumState)> = Vec::new();
        for (w, s) in &self.components {
            let mut merged = false;
            for (rw, rs) in reps.iter_mut() {
                if let Ok(f) = s.fidelity(rs) {
                    if f > 1.0 - 1e-9 {
                        *rw += w;
                        merged = true;
                        break;
                    }
                }
            }
            if !merged {
                reps.push((*w, s.clone()));
            }
        }
        Ensemble { components: reps }
    }

    /// The weight carried by components matching `reference` up to phase.
    pub fn weight_on(&self, reference: &QuantumState) -> Result<f64, StateError> {
        let mut acc = 0.0;
        for (w, s) in &self.components {
            let f = s.fidelity(reference)?;
            if f > 1.0 - 1e-9 {
                acc += w;
            }
        }
        Ok(acc)
    }
}
