//! Circuit-level building blocks: single-photon gates, the hyperentangled
//! Bell basis, the polarization↔spatial swap, the quantum-state-joining
//! method (QSJM), and the phase- and parity-check QNDs.
//!
//! Every block that touches a QD-cavity goes through one *pass*: the net
//! linear map picked up by a photon routed (CPBS₁, U₁, QD, U₂, CPBS₂, X)
//! through the cavity. The pass matrix is composed here from the raw
//! scattering rule of [`crate::cavity`], so the ideal and non-ideal
//! variants share one derivation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64 as C64;

use crate::cavity::{scatter_op, CoeffModuli};
use crate::math::FRAC_1_SQRT_2;
use crate::statevec::{
    BranchRecord, MeasBasis, Op, QuantumState, Sel, StateError, SubsystemId, AMP_TOL, PRUNE_TOL,
};

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Whether cavity interactions are taken as perfect or with the finite
/// reflection/transmission magnitudes of a real device.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scattering {
    Ideal,
    NonIdeal(CoeffModuli),
}

impl Scattering {
    pub fn moduli(&self) -> CoeffModuli {
        match self {
            Scattering::Ideal => CoeffModuli::ideal(),
            Scattering::NonIdeal(m) => *m,
        }
    }
}

/// Named single-qubit gates on one photon DOF or one spin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    /// Hadamard on polarization: |R⟩→(|R⟩+|L⟩)/√2, |L⟩→(|R⟩−|L⟩)/√2.
    HPol,
    /// 50:50 beam splitter on the spatial mode, same matrix as `HPol`.
    HSpat,
    /// Hadamard on an electron spin.
    HSpin,
    /// σ_x on polarization (half-wave plate X).
    SigmaXPol,
    /// σ_z on polarization.
    SigmaZPol,
    /// σ_x on the spatial mode.
    SigmaXSpat,
    /// σ_z on the spatial mode.
    SigmaZSpat,
    /// σ_z on an electron spin.
    SigmaZSpin,
    /// The U wave plate, −|R⟩⟨R|−|L⟩⟨L|.
    UPhase,
}

pub(crate) fn h2() -> Op {
    Op::from_real(2, &[FRAC_1_SQRT_2, FRAC_1_SQRT_2, FRAC_1_SQRT_2, -FRAC_1_SQRT_2]).unwrap()
}

pub(crate) fn sigma_x() -> Op {
    Op::from_real(2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
}

pub(crate) fn sigma_z() -> Op {
    Op::from_real(2, &[1.0, 0.0, 0.0, -1.0]).unwrap()
}

impl Gate {
    pub fn op(&self) -> Op {
        match self {
            Gate::HPol | Gate::HSpat | Gate::HSpin => h2(),
            Gate::SigmaXPol | Gate::SigmaXSpat => sigma_x(),
            Gate::SigmaZPol | Gate::SigmaZSpat | Gate::SigmaZSpin => sigma_z(),
            Gate::UPhase => Op::from_real(2, &[-1.0, 0.0, 0.0, -1.0]).unwrap(),
        }
    }

    pub fn sel<'a>(&self, label: &'a str) -> Sel<'a> {
        match self {
            Gate::HPol | Gate::SigmaXPol | Gate::SigmaZPol | Gate::UPhase => Sel::Pol(label),
            Gate::HSpat | Gate::SigmaXSpat | Gate::SigmaZSpat => Sel::Spat(label),
            Gate::HSpin | Gate::SigmaZSpin => Sel::Spin(label),
        }
    }
}

/// Applies a named gate to the labelled subsystem, in place.
pub fn apply_gate(state: &mut QuantumState, gate: Gate, label: &str) -> Result<(), StateError> {
    state.apply(&[gate.sel(label)], &gate.op())
}

/// Assembles an n-photon state from one amplitude vector over the
/// polarization slots and one over the spatial slots (label order, first
/// photon most significant in each vector).
pub fn photons_state(
    labels: &[&str],
    pol: &[C64],
    spat: &[C64],
) -> Result<QuantumState, StateError> {
    let n = labels.len();
    let d = 1usize << n;
    if pol.len() != d || spat.len() != d {
        return Err(StateError::DimensionMismatch { expected: d, got: pol.len().max(spat.len()) });
    }
    let mut parts = Vec::with_capacity(n);
    let placeholder = [c(1.0), c(0.0), c(0.0), c(0.0)];
    for l in labels {
        parts.push((SubsystemId::photon(l), &placeholder[..]));
    }
    let mut st = QuantumState::register(&parts)?;
    let total = st.amplitudes().len();
    let mut amps = vec![c(0.0); total];
    for p in 0..d {
        for s in 0..d {
            let mut idx = 0usize;
            for i in 0..n {
                let pb = (p >> (n - 1 - i)) & 1;
                let sb = (s >> (n - 1 - i)) & 1;
                idx = (idx << 2) | (pb << 1) | sb;
            }
            amps[idx] = pol[p] * spat[s];
        }
    }
    st = QuantumState::from_amps(st.register_ref().clone(), amps)?;
    Ok(st)
}

/// Two-photon Bell vector k ∈ 1..=4 over one binary DOF:
/// (|00⟩+|11⟩)/√2, (|00⟩−|11⟩)/√2, (|01⟩+|10⟩)/√2, (|01⟩−|10⟩)/√2.
pub fn bell_vec(k: usize) -> Result<[C64; 4], StateError> {
    let h = FRAC_1_SQRT_2;
    match k {
        1 => Ok([c(h), c(0.0), c(0.0), c(h)]),
        2 => Ok([c(h), c(0.0), c(0.0), c(-h)]),
        3 => Ok([c(0.0), c(h), c(h), c(0.0)]),
        4 => Ok([c(0.0), c(h), c(-h), c(0.0)]),
        _ => Err(StateError::Precondition(format!("Bell index {k} out of range 1..=4"))),
    }
}

/// |φ_k⟩ᴾ ⊗ |φ_l⟩ˢ on two labelled photons.
pub fn hyperentangled_bell(
    k: usize,
    l: usize,
    a: &str,
    b: &str,
) -> Result<QuantumState, StateError> {
    let pol = bell_vec(k)?;
    let spat = bell_vec(l)?;
    photons_state(&[a, b], &pol, &spat)
}

/// Three-photon GHZ vector over one binary DOF: class 0..=3 marks which
/// position (none, third, second, first) is flipped; `plus` picks the
/// relative sign.
pub fn ghz_vec(class: usize, plus: bool) -> Result<[C64; 8], StateError> {
    let h = FRAC_1_SQRT_2;
    let (i, j) = match class {
        0 => (0b000, 0b111),
        1 => (0b001, 0b110),
        2 => (0b010, 0b101),
        3 => (0b100, 0b011),
        _ => return Err(StateError::Precondition(format!("GHZ class {class} out of range 0..=3"))),
    };
    let mut v = [c(0.0); 8];
    v[i] = c(h);
    v[j] = if plus { c(h) } else { c(-h) };
    Ok(v)
}

/// The even- and odd-weight uniform three-mode vectors reached from the
/// GHZ-class-0 vectors by a Hadamard on every mode.
pub fn ghz_hadamard_vec(plus: bool) -> [C64; 8] {
    let mut v = [c(0.0); 8];
    for i in 0..8usize {
        let even = (i.count_ones() % 2) == 0;
        if even == plus {
            v[i] = c(0.5);
        }
    }
    v
}

/// Exchanges the polarization and spatial-mode states of one photon:
/// (α₁|R⟩+α₂|L⟩)(γ₁|i₁⟩+γ₂|i₂⟩) → (γ₁|R⟩+γ₂|L⟩)(α₁|i₁⟩+α₂|i₂⟩)
/// and its linear extension.
pub fn swap_pol_spatial(state: &mut QuantumState, photon: &str) -> Result<(), StateError> {
    let swap = Op::from_real(
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    )
    .unwrap();
    state.apply(&[Sel::Photon(photon)], &swap)
}

/// The net map one photon DOF and one spin pick up in a single trip
/// through the cavity circuit, on the ordered pair (DOF, spin).
///
/// Composed from the raw scattering rule: route |R⟩ into port i₂ and |L⟩
/// (with the U₁ sign) into port i₁, scatter, apply U₂ on port i₁, merge
/// the ports on the second CPBS, and finish with the half-wave plate X.
/// In the ideal limit this is exactly "flip the DOF iff the spin is |↓⟩".
pub fn pass_op(sc: &Scattering) -> Op {
    let m = sc.moduli();
    let scat = scatter_op(&m);
    let mut cols = [[c(0.0); 4]; 4];
    for d in 0..2usize {
        for s in 0..2usize {
            // embed (dof,spin) into (pol, port, spin)
            let mut v8 = [c(0.0); 8];
            if d == 0 {
                v8[0 * 4 + 1 * 2 + s] = c(1.0); // |R,i₂,s⟩
            } else {
                v8[1 * 4 + 0 * 2 + s] = c(-1.0); // −|L,i₁,s⟩ (U₁)
            }
            // scatter
            let mut w8 = [c(0.0); 8];
            for row in 0..8 {
                let mut acc = c(0.0);
                for col in 0..8 {
                    acc += scat.elem(row, col) * v8[col];
                }
                w8[row] = acc;
            }
            // U₂: sign flip on port i₁
            for pol in 0..2 {
                for spin in 0..2 {
                    w8[pol * 4 + spin] = -w8[pol * 4 + spin];
                }
            }
            // merge: |R,i₁,s⟩ → |R,s⟩ and |L,i₂,s⟩ → |L,s⟩; anything else
            // would miss the output port and must carry no amplitude
            for spin in 0..2 {
                debug_assert!(w8[0 * 4 + 1 * 2 + spin].norm() < AMP_TOL);
                debug_assert!(w8[1 * 4 + 0 * 2 + spin].norm() < AMP_TOL);
            }
            for spin in 0..2 {
                let out_r = w8[0 * 4 + spin];
                let out_l = w8[1 * 4 + 2 + spin];
                // X flips the letters on the way out
                cols[1 * 2 + spin][d * 2 + s] = out_r;
                cols[0 * 2 + spin][d * 2 + s] = out_l;
            }
        }
    }
    let mut elems = Vec::with_capacity(16);
    for row in 0..4 {
        for col in 0..4 {
            elems.push(cols[row][col]);
        }
    }
    Op::new(4, elems).unwrap()
}

/// Runs one cavity pass on (photon DOF, spin). With non-ideal scattering
/// the state comes back unnormalized; the squared-norm ratio is the pass's
/// survival probability.
pub fn apply_pass(
    state: &mut QuantumState,
    dof: Sel<'_>,
    spin: &str,
    sc: &Scattering,
) -> Result<(), StateError> {
    match dof {
        Sel::Pol(_) | Sel::Spat(_) => {}
        _ => {
            return Err(StateError::Precondition(
                "a cavity pass addresses a single photon DOF".to_string(),
            ))
        }
    }
    state.apply(&[dof, Sel::Spin(spin)], &pass_op(sc))
}

/// Internal branch bookkeeping for multi-measurement protocol runs.
#[derive(Clone, Debug)]
pub(crate) struct ProtoBranch {
    pub weight: f64,
    pub state: QuantumState,
    pub outcomes: Vec<(String, String)>,
    pub corrections: Vec<String>,
}

impl ProtoBranch {
    pub fn root(state: QuantumState) -> Self {
        ProtoBranch { weight: 1.0, state, outcomes: Vec::new(), corrections: Vec::new() }
    }

    pub fn outcome(&self, what: &str) -> Option<&str> {
        self.outcomes
            .iter()
            .rev()
            .find(|(w, _)| w == what)
            .map(|(_, l)| l.as_str())
    }

    pub fn into_record(self, survivor: QuantumState) -> BranchRecord {
        BranchRecord {
            outcomes: self.outcomes,
            probability: self.weight,
            corrections: self.corrections,
            survivor,
        }
    }
}

/// Measures every branch, expanding each into its outcome children.
pub(crate) fn measure_branches(
    branches: Vec<ProtoBranch>,
    sels: &[Sel<'_>],
    basis: &MeasBasis,
) -> Result<Vec<ProtoBranch>, StateError> {
    let mut out = Vec::new();
    for b in branches {
        for rec in b.state.measure_enumerate(sels, basis, false)? {
            let w = b.weight * rec.probability;
            if w <= PRUNE_TOL {
                continue;
            }
            let mut outcomes = b.outcomes.clone();
            outcomes.extend(rec.outcomes);
            out.push(ProtoBranch {
                weight: w,
                state: rec.survivor,
                outcomes,
                corrections: b.corrections.clone(),
            });
        }
    }
    Ok(out)
}

pub(crate) fn apply_all(
    branches: &mut [ProtoBranch],
    f: impl Fn(&mut QuantumState) -> Result<(), StateError>,
) -> Result<(), StateError> {
    for b in branches {
        f(&mut b.state)?;
    }
    Ok(())
}

/// Adjoins fresh electron spins in |+⟩.
pub fn with_fresh_spins(state: &QuantumState, labels: &[&str]) -> Result<QuantumState, StateError> {
    let plus = [c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2)];
    let mut parts = Vec::new();
    for l in labels {
        parts.push((SubsystemId::spin(l), &plus[..]));
    }
    let spins = QuantumState::register(&parts)?;
    QuantumState::product(state, &spins)
}

fn require_plus_spin(state: &QuantumState, spin: &str) -> Result<(), StateError> {
    // the spin factors out in |+⟩ exactly when its |−⟩ projection carries
    // no weight
    let branches = state.measure_enumerate(&[Sel::Spin(spin)], &MeasBasis::spin_x(), true)?;
    let minus = branches
        .iter()
        .find(|b| b.outcomes[0].1 == "-")
        .map(|b| b.probability)
        .unwrap_or(0.0);
    if minus > 1e-9 * state.norm_sqr().max(1.0) {
        return Err(StateError::Precondition(format!("spin {spin} is not in |+⟩")));
    }
    Ok(())
}

/// Transfers photon `a`'s polarization onto photon `b` without disturbing
/// `b`'s spatial mode.
///
/// The full sequence: `a` through the cavity circuit and measured in
/// {|R⟩, |L⟩}; Hadamard on the spin; `b` through the circuit; Hadamards on
/// `b`'s polarization and the spin; `b` through the circuit again;
/// Hadamard on the spin; spin measured in {|↑⟩, |↓⟩}. A bit-flip σ_x on
/// `b` repairs the |L⟩ outcome of `a` and a phase-flip σ_z the |↓⟩ outcome
/// of the spin, so ideally every one of the four branches carries the same
/// final state of `b`.
///
/// `state` must contain photons `a`, `b` and spin `e` prepared in |+⟩.
/// Each returned branch's survivor is the state of photon `b` alone.
pub fn qsjm_join(
    state: &QuantumState,
    a: &str,
    b: &str,
    e: &str,
    sc: &Scattering,
) -> Result<Vec<BranchRecord>, StateError> {
    require_plus_spin(state, e)?;
    let mut root = state.clone();
    apply_pass(&mut root, Sel::Pol(a), e, sc)?;
    let mut branches = measure_branches(vec![ProtoBranch::root(root)], &[Sel::Pol(a)], &MeasBasis::pol())?;
    for br in &mut branches {
        br.state = br.state.discard_product(&[a])?;
        apply_gate(&mut br.state, Gate::HSpin, e)?;
        apply_pass(&mut br.state, Sel::Pol(b), e, sc)?;
        apply_gate(&mut br.state, Gate::HPol, b)?;
        apply_gate(&mut br.state, Gate::HSpin, e)?;
        apply_pass(&mut br.state, Sel::Pol(b), e, sc)?;
        apply_gate(&mut br.state, Gate::HSpin, e)?;
    }
    let mut branches = measure_branches(branches, &[Sel::Spin(e)], &MeasBasis::spin_z())?;
    let a_pol = format!("{a}.pol");
    let mut records = Vec::new();
    for mut br in branches.drain(..) {
        if br.outcome(&a_pol) == Some("L") {
            apply_gate(&mut br.state, Gate::SigmaXPol, b)?;
            br.corrections.push(format!("sigma_x_pol({b})"));
        }
        if br.outcome(e) == Some("down") {
            apply_gate(&mut br.state, Gate::SigmaZPol, b)?;
            br.corrections.push(format!("sigma_z_pol({b})"));
        }
        let survivor = br.state.discard_product(&[e])?;
        records.push(br.into_record(survivor));
    }
    Ok(records)
}

/// [`qsjm_join`] preceded by the polarization↔spatial swap on `a`, so that
/// `a`'s *spatial* state lands on `b`'s polarization.
pub fn qsjm_join_spatial(
    state: &QuantumState,
    a: &str,
    b: &str,
    e: &str,
    sc: &Scattering,
) -> Result<Vec<BranchRecord>, StateError> {
    let mut st = state.clone();
    swap_pol_spatial(&mut st, a)?;
    qsjm_join(&st, a, b, e, sc)
}

/// Reads the polarization Bell/GHZ class of `sources` onto `spins`, writes
/// it onto `targets`, and applies the outcome-conditioned corrections.
///
/// Generic over the party count (2 for Bell pairs, 3 for GHZ triples).
/// `state` must contain targets, sources and fresh |+⟩ spins; sources and
/// spins are consumed. Branch survivors keep everything else (the targets'
/// spatial modes ride along untouched).
pub(crate) fn join_pol_classes(
    state: QuantumState,
    targets: &[&str],
    sources: &[&str],
    spins: &[&str],
    sc: &Scattering,
) -> Result<Vec<ProtoBranch>, StateError> {
    debug_assert!(targets.len() == sources.len() && sources.len() == spins.len());
    let mut root = state;
    // read phase: Hadamard each source, pass it through its party's cavity
    for (src, spin) in sources.iter().zip(spins) {
        apply_gate(&mut root, Gate::HPol, src)?;
        apply_pass(&mut root, Sel::Pol(src), spin, sc)?;
    }
    for spin in spins {
        apply_gate(&mut root, Gate::HSpin, spin)?;
    }
    let mut branches = vec![ProtoBranch::root(root)];
    for src in sources {
        branches = measure_branches(branches, &[Sel::Pol(src)], &MeasBasis::pol())?;
    }
    for br in &mut branches {
        let n_l = sources
            .iter()
            .filter(|src| br.outcome(&format!("{src}.pol")) == Some("L"))
            .count();
        if n_l % 2 == 1 {
            apply_gate(&mut br.state, Gate::SigmaZSpin, spins[0])?;
            br.corrections.push(format!("sigma_z_spin({})", spins[0]));
        }
        br.state = br.state.discard_product(sources)?;
    }
    // write phase: two passes per target with Hadamards in between
    for br in &mut branches {
        for (tgt, spin) in targets.iter().zip(spins) {
            apply_pass(&mut br.state, Sel::Pol(tgt), spin, sc)?;
            apply_gate(&mut br.state, Gate::HPol, tgt)?;
            apply_gate(&mut br.state, Gate::HSpin, spin)?;
            apply_pass(&mut br.state, Sel::Pol(tgt), spin, sc)?;
        }
        for spin in spins {
            apply_gate(&mut br.state, Gate::HSpin, spin)?;
        }
    }
    for spin in spins {
        branches = measure_branches(branches, &[Sel::Spin(spin)], &MeasBasis::spin_z())?;
    }
    for br in &mut branches {
        for (tgt, spin) in targets.iter().zip(spins) {
            if br.outcome(spin) == Some("down") {
                apply_gate(&mut br.state, Gate::SigmaZPol, tgt)?;
                br.corrections.push(format!("sigma_z_pol({tgt})"));
            }
        }
        for tgt in targets {
            apply_gate(&mut br.state, Gate::HPol, tgt)?;
        }
        br.state = br.state.discard_product(spins)?;
    }
    Ok(branches)
}

/// The QSJM for photon pairs: transfers the polarization Bell class of
/// pair `(a_src, b_src)` onto pair `(a_tgt, b_tgt)` through two electron
/// spins, leaving the target pair's spatial state untouched. Ideally every
/// branch ends in the same target state.
///
/// Branch survivors are the target pair alone.
pub fn qsjm_join_fourphoton(
    target_pair: &QuantumState,
    source_pair: &QuantumState,
    sc: &Scattering,
) -> Result<Vec<BranchRecord>, StateError> {
    let tgt: Vec<&str> =
        target_pair.register_ref().subsystems().iter().map(|s| s.label()).collect();
    let src: Vec<&str> =
        source_pair.register_ref().subsystems().iter().map(|s| s.label()).collect();
    if tgt.len() != 2 || src.len() != 2 {
        return Err(StateError::Precondition("expected two photon pairs".to_string()));
    }
    let joint = QuantumState::product(target_pair, source_pair)?;
    let joint = with_fresh_spins(&joint, &["e_a", "e_b"])?;
    let branches = join_pol_classes(joint, &tgt, &src, &["e_a", "e_b"], sc)?;
    let mut records = Vec::new();
    for br in branches {
        let survivor = br.state.extract_factor(&tgt)?;
        records.push(br.into_record(survivor));
    }
    Ok(records)
}

/// Relative phase of a two-photon state in one DOF.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelPhase {
    Zero,
    Pi,
}

/// Occupation parity of a two-photon state in one DOF.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Outcome of the phase-check QND: the relative phase in each DOF.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseOutcome {
    pub pol: RelPhase,
    pub spat: RelPhase,
}

/// Outcome of the parity-check QND: the parity in each DOF.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParityOutcome {
    pub pol: Parity,
    pub spat: Parity,
}

/// One classified branch of a QND check.
#[derive(Clone, Debug)]
pub struct QndBranch<O> {
    pub outcome: O,
    pub probability: f64,
    /// Post-measurement state with the spins measured out; ideally the
    /// photonic part is untouched.
    pub state: QuantumState,
    pub spin_outcomes: (String, String),
}

fn psqnd_raw(
    state: &QuantumState,
    a: &str,
    b: &str,
    e1: &str,
    e2: &str,
    sc: &Scattering,
) -> Result<Vec<QndBranch<PhaseOutcome>>, StateError> {
    require_plus_spin(state, e1)?;
    require_plus_spin(state, e2)?;
    let mut root = state.clone();
    apply_pass(&mut root, Sel::Pol(a), e1, sc)?;
    apply_pass(&mut root, Sel::Spat(a), e2, sc)?;
    apply_pass(&mut root, Sel::Pol(b), e1, sc)?;
    apply_pass(&mut root, Sel::Spat(b), e2, sc)?;
    apply_gate(&mut root, Gate::SigmaZSpin, e2)?;
    let branches = measure_branches(vec![ProtoBranch::root(root)], &[Sel::Spin(e1)], &MeasBasis::spin_x())?;
    let branches = measure_branches(branches, &[Sel::Spin(e2)], &MeasBasis::spin_x())?;
    let mut out = Vec::new();
    for br in branches {
        let o1 = br.outcome(e1).unwrap_or("?").to_string();
        let o2 = br.outcome(e2).unwrap_or("?").to_string();
        let outcome = PhaseOutcome {
            pol: if o1 == "+" { RelPhase::Zero } else { RelPhase::Pi },
            spat: if o2 == "-" { RelPhase::Zero } else { RelPhase::Pi },
        };
        let state = br.state.discard_product(&[e1, e2])?;
        out.push(QndBranch { outcome, probability: br.weight, state, spin_outcomes: (o1, o2) });
    }
    Ok(out)
}

/// The polarization-spatial phase-check QND on a photon pair.
///
/// Spin `e1` ends in |+⟩ iff the pair's polarization relative phase is 0;
/// spin `e2` ends in |−⟩ iff the spatial relative phase is 0. Ideally the
/// photonic state is undisturbed. `state` must hold both photons and two
/// spins prepared in |+⟩⊗|+⟩; survivors have the spins measured out.
pub fn psqnd_phase_check(
    state: &QuantumState,
    a: &str,
    b: &str,
    e1: &str,
    e2: &str,
    sc: &Scattering,
) -> Result<Vec<QndBranch<PhaseOutcome>>, StateError> {
    psqnd_raw(state, a, b, e1, e2, sc)
}

/// The parity-check QND: the phase check conjugated by Hadamards on both
/// DOFs of both photons, distinguishing even {φ₁, φ₂} from odd {φ₃, φ₄}
/// in each DOF.
pub fn psqnd_parity_check(
    state: &QuantumState,
    a: &str,
    b: &str,
    e1: &str,
    e2: &str,
    sc: &Scattering,
) -> Result<Vec<QndBranch<ParityOutcome>>, StateError> {
    let mut st = state.clone();
    for ph in [a, b] {
        apply_gate(&mut st, Gate::HPol, ph)?;
        apply_gate(&mut st, Gate::HSpat, ph)?;
    }
    let raw = psqnd_raw(&st, a, b, e1, e2, sc)?;
    let mut out = Vec::new();
    for mut br in raw {
        for ph in [a, b] {
            apply_gate(&mut br.state, Gate::HPol, ph)?;
            apply_gate(&mut br.state, Gate::HSpat, ph)?;
        }
        let outcome = ParityOutcome {
            pol: if br.outcome.pol == RelPhase::Zero { Parity::Even } else { Parity::Odd },
            spat: if br.outcome.spat == RelPhase::Zero { Parity::Even } else { Parity::Odd },
        };
        out.push(QndBranch {
            outcome,
            probability: br.probability,
            state: br.state,
            spin_outcomes: br.spin_outcomes,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::abs;
    use crate::statevec::AMP_TOL;

    fn photon(label: &str, pol: [f64; 2], spat: [f64; 2]) -> QuantumState {
        let amps = [
            c(pol[0] * spat[0]),
            c(pol[0] * spat[1]),
            c(pol[1] * spat[0]),
            c(pol[1] * spat[1]),
        ];
        QuantumState::register(&[(SubsystemId::photon(label), &amps[..])]).unwrap()
    }

    #[test]
    fn gates_are_unitary() {
        for g in [
            Gate::HPol,
            Gate::HSpat,
            Gate::HSpin,
            Gate::SigmaXPol,
            Gate::SigmaZPol,
            Gate::SigmaXSpat,
            Gate::SigmaZSpat,
            Gate::SigmaZSpin,
            Gate::UPhase,
        ] {
            assert!(g.op().is_unitary(1e-12), "{g:?}");
        }
    }

    #[test]
    fn bell_states_orthonormal() {
        let mut states = Vec::new();
        for k in 1..=4 {
            for l in 1..=4 {
                states.push(hyperentangled_bell(k, l, "A", "B").unwrap());
            }
        }
        for (i, s) in states.iter().enumerate() {
            assert!(abs(s.norm_sqr() - 1.0) < AMP_TOL);
            for (j, t) in states.iter().enumerate() {
                if i != j {
                    assert!(s.fidelity(t).unwrap() < AMP_TOL);
                }
            }
        }
    }

    #[test]
    fn bell_11_amplitudes() {
        // (|RR⟩+|LL⟩)(|a₁b₁⟩+|a₂b₂⟩)/2: four amplitudes of 1/2
        let st = hyperentangled_bell(1, 1, "A", "B").unwrap();
        let nonzero: Vec<f64> =
            st.amplitudes().iter().map(|a| a.norm()).filter(|n| *n > AMP_TOL).collect();
        assert_eq!(nonzero.len(), 4);
        assert!(nonzero.iter().all(|n| abs(n - 0.5) < AMP_TOL));
    }

    #[test]
    fn swap_examples_and_involution() {
        // |R⟩|i₂⟩ -> |L⟩|i₁⟩
        let mut st = photon("A", [1.0, 0.0], [0.0, 1.0]);
        swap_pol_spatial(&mut st, "A").unwrap();
        let want = photon("A", [0.0, 1.0], [1.0, 0.0]);
        assert!(st.fidelity(&want).unwrap() > 1.0 - AMP_TOL);
        // (|R⟩+|L⟩)/√2 ⊗ |i₁⟩ -> |R⟩ ⊗ (|i₁⟩+|i₂⟩)/√2
        let mut st = photon("A", [FRAC_1_SQRT_2, FRAC_1_SQRT_2], [1.0, 0.0]);
        swap_pol_spatial(&mut st, "A").unwrap();
        let want = photon("A", [1.0, 0.0], [FRAC_1_SQRT_2, FRAC_1_SQRT_2]);
        assert!(st.fidelity(&want).unwrap() > 1.0 - AMP_TOL);
        // twice = identity on a generic state
        let orig = photon("A", [0.6, 0.8], [0.28, 0.96]);
        let mut st = orig.clone();
        swap_pol_spatial(&mut st, "A").unwrap();
        swap_pol_spatial(&mut st, "A").unwrap();
        assert!(st.fidelity(&orig).unwrap() > 1.0 - AMP_TOL);
    }

    #[test]
    fn ideal_pass_is_spin_controlled_flip() {
        let op = pass_op(&Scattering::Ideal);
        assert!(op.is_unitary(1e-12));
        // basis (dof, spin): R↑, R↓, L↑, L↓
        let want = Op::from_real(
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((op.elem(i, j) - want.elem(i, j)).norm() < AMP_TOL);
            }
        }
    }

    #[test]
    fn single_pass_reproduces_spin_transfer_form() {
        // (α₁|R⟩+α₂|L⟩)_A ⊗ |+⟩_e passes once; the joint state becomes
        // (1/√2)[|R⟩(α₁|↑⟩+α₂|↓⟩) + |L⟩(α₂|↑⟩+α₁|↓⟩)].
        let (a1, a2) = (0.6, 0.8);
        let st = photon("A", [a1, a2], [1.0, 0.0]);
        let mut st = with_fresh_spins(&st, &["e"]).unwrap();
        apply_pass(&mut st, Sel::Pol("A"), "e", &Scattering::Ideal).unwrap();
        // check the four (pol, spin) amplitudes at spatial = i₁
        // register layout: A.pol, A.spat, e -> index = pol·4 + spat·2 + spin
        let amps = st.amplitudes();
        let h = FRAC_1_SQRT_2;
        assert!((amps[0] - c(h * a1)).norm() < AMP_TOL); // R↑
        assert!((amps[1] - c(h * a2)).norm() < AMP_TOL); // R↓
        assert!((amps[4] - c(h * a2)).norm() < AMP_TOL); // L↑
        assert!((amps[5] - c(h * a1)).norm() < AMP_TOL); // L↓
    }

    #[test]
    fn qsjm_transfers_r_state() {
        // α = (1, 0): final B polarization |R⟩ with B's spatial untouched
        let a = photon("A", [1.0, 0.0], [0.28, 0.96]);
        let b = photon("B", [0.6, 0.8], [0.8, 0.6]);
        let st = with_fresh_spins(&QuantumState::product(&a, &b).unwrap(), &["e"]).unwrap();
        let recs = qsjm_join(&st, "A", "B", "e", &Scattering::Ideal).unwrap();
        let want = photon("B", [1.0, 0.0], [0.8, 0.6]);
        let mut total = 0.0;
        for r in &recs {
            assert!(r.survivor.fidelity(&want).unwrap() > 1.0 - AMP_TOL);
            total += r.probability;
        }
        assert!(abs(total - 1.0) < AMP_TOL);
    }

    #[test]
    fn qsjm_four_branches_quarter_probability() {
        // α = (1/√2, 1/√2), B polarization also balanced, B spatial (1,0):
        // all four branches carry (|R⟩+|L⟩)/√2 ⊗ |b₁⟩ with probability 1/4
        let a = photon("A", [FRAC_1_SQRT_2, FRAC_1_SQRT_2], [0.6, 0.8]);
        let b = photon("B", [FRAC_1_SQRT_2, FRAC_1_SQRT_2], [1.0, 0.0]);
        let st = with_fresh_spins(&QuantumState::product(&a, &b).unwrap(), &["e"]).unwrap();
        let recs = qsjm_join(&st, "A", "B", "e", &Scattering::Ideal).unwrap();
        assert_eq!(recs.len(), 4);
        let want = photon("B", [FRAC_1_SQRT_2, FRAC_1_SQRT_2], [1.0, 0.0]);
        for r in &recs {
            assert!(abs(r.probability - 0.25) < AMP_TOL);
            assert!(r.survivor.fidelity(&want).unwrap() > 1.0 - AMP_TOL);
        }
    }

    #[test]
    fn qsjm_branch_independence_random_inputs() {
        // branch-independent output for generic product inputs, with the
        // two a-outcomes at probability 1/2 each
        let cases = [
            ([0.6, 0.8], [0.96, 0.28], [0.8, 0.6], [0.28, 0.96]),
            ([0.96, -0.28], [0.6, -0.8], [1.0, 0.0], [0.6, 0.8]),
        ];
        for (al, ga, be, de) in cases {
            let a = photon("A", al, ga);
            let b = photon("B", be, de);
            let st = with_fresh_spins(&QuantumState::product(&a, &b).unwrap(), &["e"]).unwrap();
            let recs = qsjm_join(&st, "A", "B", "e", &Scattering::Ideal).unwrap();
            let want = photon("B", al, de);
            let mut p_r = 0.0;
            for r in &recs {
                assert!(
                    r.survivor.fidelity(&want).unwrap() > 1.0 - AMP_TOL,
                    "branch {:?}",
                    r.outcomes
                );
                if r.outcomes[0].1 == "R" {
                    p_r += r.probability;
                }
            }
            assert!(abs(p_r - 0.5) < AMP_TOL);
        }
    }

    #[test]
    fn qsjm_spatial_variant_moves_spatial_state() {
        // A spatial (γ₁,γ₂) random -> B polarization (γ₁,γ₂)
        let ga = [0.28, 0.96];
        let a = photon("A", [0.6, 0.8], ga);
        let b = photon("B", [0.96, 0.28], [0.8, 0.6]);
        let st = with_fresh_spins(&QuantumState::product(&a, &b).unwrap(), &["e"]).unwrap();
        let recs = qsjm_join_spatial(&st, "A", "B", "e", &Scattering::Ideal).unwrap();
        let want = photon("B", ga, [0.8, 0.6]);
        let mut total = 0.0;
        for r in &recs {
            assert!(r.survivor.fidelity(&want).unwrap() > 1.0 - AMP_TOL);
            total += r.probability;
        }
        assert!(abs(total - 1.0) < AMP_TOL);
    }

    #[test]
    fn qsjm_rejects_spin_not_in_plus() {
        let a = photon("A", [1.0, 0.0], [1.0, 0.0]);
        let b = photon("B", [1.0, 0.0], [1.0, 0.0]);
        let joint = QuantumState::product(&a, &b).unwrap();
        let up = [c(1.0), c(0.0)];
        let spin = QuantumState::register(&[(SubsystemId::spin("e"), &up[..])]).unwrap();
        let st = QuantumState::product(&joint, &spin).unwrap();
        assert!(matches!(
            qsjm_join(&st, "A", "B", "e", &Scattering::Ideal),
            Err(StateError::Precondition(_))
        ));
    }

    /// The four-photon QSJM on the four polarization class combinations:
    /// the target pair always ends in the source pair's class, identically
    /// on every branch, with its own spatial state untouched.
    #[test]
    fn fourphoton_join_transfers_class() {
        for (tgt_k, src_k) in [(3, 1), (1, 1), (1, 3), (3, 3)] {
            let target = hyperentangled_bell(tgt_k, 1, "A", "B").unwrap();
            let source = hyperentangled_bell(src_k, 3, "Ap", "Bp").unwrap();
            let recs = qsjm_join_fourphoton(&target, &source, &Scattering::Ideal).unwrap();
            let want = hyperentangled_bell(src_k, 1, "A", "B").unwrap();
            let mut total = 0.0;
            for r in &recs {
                assert!(
                    r.survivor.fidelity(&want).unwrap() > 1.0 - 1e-9,
                    "target φ{tgt_k}, source φ{src_k}, branch {:?}",
                    r.outcomes
                );
                total += r.probability;
            }
            assert!(abs(total - 1.0) < 1e-9);
        }
    }

    /// Odd-parity target with even-parity source: the electron spins come
    /// out odd and the recorded correction is the conditional σ_z.
    #[test]
    fn fourphoton_join_odd_target_needs_sigma_z() {
        let target = hyperentangled_bell(3, 1, "A", "B").unwrap();
        let source = hyperentangled_bell(1, 3, "Ap", "Bp").unwrap();
        let recs = qsjm_join_fourphoton(&target, &source, &Scattering::Ideal).unwrap();
        for r in &recs {
            let spins: Vec<&str> = r
                .outcomes
                .iter()
                .filter(|(w, _)| w == "e_a" || w == "e_b")
                .map(|(_, l)| l.as_str())
                .collect();
            let odd = spins.iter().filter(|s| **s == "down").count() % 2 == 1;
            assert!(odd, "spins {:?}", spins);
            assert!(r.corrections.iter().any(|c| c.starts_with("sigma_z_pol")));
        }
    }

    #[test]
    fn phase_check_matches_table_and_is_qnd() {
        // e₁ = |+⟩ iff polarization phase 0; e₂ = |−⟩ iff spatial phase 0;
        // photons untouched on all 16 basis states
        for k in 1..=4usize {
            for l in 1..=4usize {
                let st = hyperentangled_bell(k, l, "A", "B").unwrap();
                let st = with_fresh_spins(&st, &["e1", "e2"]).unwrap();
                let branches =
                    psqnd_phase_check(&st, "A", "B", "e1", "e2", &Scattering::Ideal).unwrap();
                assert_eq!(branches.len(), 1, "deterministic outcome for basis states");
                let br = &branches[0];
                assert!(abs(br.probability - 1.0) < AMP_TOL);
                // phase 0 classes are k ∈ {1,3}; π classes k ∈ {2,4}
                let want_pol = if k % 2 == 1 { RelPhase::Zero } else { RelPhase::Pi };
                let want_spat = if l % 2 == 1 { RelPhase::Zero } else { RelPhase::Pi };
                assert_eq!(br.outcome.pol, want_pol, "k={k}");
                assert_eq!(br.outcome.spat, want_spat, "l={l}");
                let photons = hyperentangled_bell(k, l, "A", "B").unwrap();
                assert!(br.state.fidelity(&photons).unwrap() > 1.0 - AMP_TOL);
            }
        }
    }

    #[test]
    fn parity_check_partitions_eight_eight() {
        let mut even_pol = 0;
        let mut even_spat = 0;
        for k in 1..=4usize {
            for l in 1..=4usize {
                let st = hyperentangled_bell(k, l, "A", "B").unwrap();
                let st = with_fresh_spins(&st, &["e1", "e2"]).unwrap();
                let branches =
                    psqnd_parity_check(&st, "A", "B", "e1", "e2", &Scattering::Ideal).unwrap();
                assert_eq!(branches.len(), 1);
                let br = &branches[0];
                let want_pol = if k <= 2 { Parity::Even } else { Parity::Odd };
                let want_spat = if l <= 2 { Parity::Even } else { Parity::Odd };
                assert_eq!(br.outcome.pol, want_pol);
                assert_eq!(br.outcome.spat, want_spat);
                if br.outcome.pol == Parity::Even {
                    even_pol += 1;
                }
                if br.outcome.spat == Parity::Even {
                    even_spat += 1;
                }
                // QND also in the conjugated variant
                let photons = hyperentangled_bell(k, l, "A", "B").unwrap();
                assert!(br.state.fidelity(&photons).unwrap() > 1.0 - AMP_TOL);
            }
        }
        assert_eq!(even_pol, 8);
        assert_eq!(even_spat, 8);
    }

    #[test]
    fn register_order_does_not_change_protocol_observables() {
        let a = photon("A", [0.6, 0.8], [0.28, 0.96]);
        let b = photon("B", [0.96, 0.28], [0.8, 0.6]);
        let st = with_fresh_spins(&QuantumState::product(&a, &b).unwrap(), &["e"]).unwrap();
        let recs = qsjm_join(&st, "A", "B", "e", &Scattering::Ideal).unwrap();
        let permuted = st.permuted(&["e", "B", "A"]).unwrap();
        let recs_p = qsjm_join(&permuted, "A", "B", "e", &Scattering::Ideal).unwrap();
        assert_eq!(recs.len(), recs_p.len());
        for (x, y) in recs.iter().zip(&recs_p) {
            assert!(abs(x.probability - y.probability) < AMP_TOL);
            assert!(x.survivor.fidelity(&y.survivor).unwrap() > 1.0 - AMP_TOL);
        }
    }
}
