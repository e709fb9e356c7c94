//! The GHZ generalization of the two-step purification, on six-photon
//! ensembles ABCA′B′C′.
//!
//! Polarization errors are the three bit-flip GHZ classes, the spatial
//! error a phase flip. The spatial DOF is handled in its Hadamard frame
//! throughout (where the phase flip looks like a parity defect), so the
//! input builder already applies the spatial Hadamards and the second
//! step undoes them at the very end. A group is kept when all three pairs
//! agree in polarization parity and an odd number of pairs is spatially
//! even; groups good in exactly one DOF are welded pairwise by the QSJM.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C64;

use crate::primitives::{
    apply_gate, ghz_hadamard_vec, ghz_vec, join_pol_classes, measure_branches,
    photons_state, psqnd_parity_check, with_fresh_spins, Gate, Parity, ProtoBranch,
};
use crate::statevec::{
    BranchRecord, Ensemble, MeasBasis, QuantumState, Sel, StateError, PRUNE_TOL,
};

use super::{EppError, EppOptions, GhzMixture};

const KEPT: [&str; 3] = ["A", "B", "C"];
const PRIMES: [&str; 3] = ["Ap", "Bp", "Cp"];
const ALL: [&str; 6] = ["A", "B", "C", "Ap", "Bp", "Cp"];

/// First-step classification of one six-photon group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GhzClass {
    Keep,
    /// All pairs agree in polarization parity but the spatial pattern
    /// fails; the polarization survives via the QSJM.
    PolGood,
    /// Spatial pattern good, polarization parities mixed.
    SpatGood,
    Discard,
}

/// Aggregate over all branches that landed in one class.
#[derive(Clone, Debug)]
pub struct GhzCaseOutcome {
    pub class: GhzClass,
    pub probability: f64,
    /// Three-photon survivors (six-photon when detection is deferred on
    /// the transfer classes); `None` for `Discard`.
    pub ensemble: Option<Ensemble>,
    pub branches: Vec<BranchRecord>,
}

fn kron64(a: &[C64; 8], b: &[C64; 8]) -> Vec<C64> {
    let mut out = Vec::with_capacity(64);
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

/// Builds ρ ⊗ ρ on photons A, B, C, A′, B′, C′ from the mixture
/// parameters, with the spatial DOF already in its Hadamard frame.
pub fn ghz_input_ensemble(m: &GhzMixture) -> Result<Ensemble, EppError> {
    let mut comps = Vec::new();
    let pol_classes: Vec<(usize, f64)> = (0..4).map(|i| (i, m.f[i])).collect();
    let spat_classes = [(true, m.p[0]), (false, m.p[1])];
    for (i, wi) in &pol_classes {
        for (j, wj) in &pol_classes {
            for (s, ws) in &spat_classes {
                for (sp, wsp) in &spat_classes {
                    let w = wi * wj * ws * wsp;
                    if w <= PRUNE_TOL {
                        continue;
                    }
                    let pol = kron64(&ghz_vec(*i, true)?, &ghz_vec(*j, true)?);
                    let spat = kron64(&ghz_hadamard_vec(*s), &ghz_hadamard_vec(*sp));
                    comps.push((w, photons_state(&ALL, &pol, &spat)?));
                }
            }
        }
    }
    Ensemble::new(comps).map_err(EppError::from)
}

fn validate_input(ensemble: &Ensemble) -> Result<(), EppError> {
    let mut canon = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            for s in [true, false] {
                for sp in [true, false] {
                    let pol = kron64(&ghz_vec(i, true)?, &ghz_vec(j, true)?);
                    let spat = kron64(&ghz_hadamard_vec(s), &ghz_hadamard_vec(sp));
                    canon.push(photons_state(&ALL, &pol, &spat)?);
                }
            }
        }
    }
    for (_, comp) in ensemble.components() {
        if !canon
            .iter()
            .any(|r| comp.fidelity(r).map(|f| f > 1.0 - 1e-9).unwrap_or(false))
        {
            return Err(EppError::MalformedEnsemble(
                "component outside the GHZ bit-flip/phase-flip error model".to_string(),
            ));
        }
    }
    Ok(())
}

fn parity_of(br: &ProtoBranch, tag: &str) -> Result<Parity, StateError> {
    match br.outcome(tag) {
        Some("even") => Ok(Parity::Even),
        Some("odd") => Ok(Parity::Odd),
        _ => Err(StateError::Precondition(format!("missing parity outcome {tag}"))),
    }
}

fn classify(br: &ProtoBranch) -> Result<GhzClass, StateError> {
    let mut pol = [Parity::Even; 3];
    let mut spat = [Parity::Even; 3];
    for (i, pair) in ["AAp", "BBp", "CCp"].iter().enumerate() {
        pol[i] = parity_of(br, &format!("{pair}.pol"))?;
        spat[i] = parity_of(br, &format!("{pair}.spat"))?;
    }
    let pol_keep = pol.iter().all(|p| *p == pol[0]);
    let even_count = spat.iter().filter(|p| **p == Parity::Even).count();
    let spat_keep = even_count % 2 == 1;
    Ok(match (pol_keep, spat_keep) {
        (true, true) => GhzClass::Keep,
        (true, false) => GhzClass::PolGood,
        (false, true) => GhzClass::SpatGood,
        (false, false) => GhzClass::Discard,
    })
}

/// Bit-flip repairs on the primes: all-odd polarization flips every
/// prime's polarization; a lone spatially-even pair flips the spatial
/// mode of the two primes in the odd pairs.
fn class_corrections(br: &mut ProtoBranch, class: GhzClass) -> Result<(), StateError> {
    let mut pol = [Parity::Even; 3];
    let mut spat = [Parity::Even; 3];
    for (i, pair) in ["AAp", "BBp", "CCp"].iter().enumerate() {
        pol[i] = parity_of(br, &format!("{pair}.pol"))?;
        spat[i] = parity_of(br, &format!("{pair}.spat"))?;
    }
    if matches!(class, GhzClass::Keep | GhzClass::PolGood)
        && pol.iter().all(|p| *p == Parity::Odd)
    {
        for ph in PRIMES {
            apply_gate(&mut br.state, Gate::SigmaXPol, ph)?;
        }
        br.corrections.push("sigma_x_pol(Ap,Bp,Cp)".to_string());
    }
    if matches!(class, GhzClass::Keep | GhzClass::SpatGood) {
        let even_count = spat.iter().filter(|p| **p == Parity::Even).count();
        if even_count == 1 {
            for (i, ph) in PRIMES.iter().enumerate() {
                if spat[i] == Parity::Odd {
                    apply_gate(&mut br.state, Gate::SigmaXSpat, ph)?;
                    br.corrections.push(format!("sigma_x_spat({ph})"));
                }
            }
        }
    }
    Ok(())
}

/// Hadamards and computational detection of the three primes, with the
/// conditional phase repairs on the kept photons: a σ_z on photon A's
/// polarization for an odd number of L outcomes, and a σ_z on the spatial
/// mode of the kept photon sitting at the minority position of the
/// spatial outcome pattern.
fn detect_primes(branches: Vec<ProtoBranch>) -> Result<Vec<ProtoBranch>, StateError> {
    let mut branches = branches;
    for br in &mut branches {
        for ph in PRIMES {
            apply_gate(&mut br.state, Gate::HPol, ph)?;
            apply_gate(&mut br.state, Gate::HSpat, ph)?;
        }
    }
    for ph in PRIMES {
        branches = measure_branches(branches, &[Sel::Photon(ph)], &MeasBasis::photon())?;
    }
    for br in &mut branches {
        let outs: Vec<alloc::string::String> =
            PRIMES.iter().map(|ph| br.outcome(ph).unwrap_or("??").to_string()).collect();
        let l_count = outs.iter().filter(|o| o.starts_with('L')).count();
        if l_count % 2 == 1 {
            apply_gate(&mut br.state, Gate::SigmaZPol, "A")?;
            br.corrections.push("sigma_z_pol(A)".to_string());
        }
        let twos: Vec<bool> = outs.iter().map(|o| o.ends_with('2')).collect();
        let two_count = twos.iter().filter(|t| **t).count();
        if two_count == 1 || two_count == 2 {
            let minority = if two_count == 1 {
                twos.iter().position(|t| *t).unwrap()
            } else {
                twos.iter().position(|t| !*t).unwrap()
            };
            apply_gate(&mut br.state, Gate::SigmaZSpat, KEPT[minority])?;
            br.corrections.push(format!("sigma_z_spat({})", KEPT[minority]));
        }
        br.state = br.state.discard_product(&PRIMES)?;
    }
    Ok(branches)
}

/// The first purification step on a six-photon ensemble: three two-DOF
/// parity-check QNDs (pairs AA′, BB′, CC′), classification, conditional
/// repairs, and detection of the primes.
pub fn ghz_first_step(
    ensemble: &Ensemble,
    opts: &EppOptions,
) -> Result<Vec<GhzCaseOutcome>, EppError> {
    validate_input(ensemble)?;
    let mut pools: [Vec<ProtoBranch>; 4] = [vec![], vec![], vec![], vec![]];
    for (w, comp) in ensemble.components() {
        let mut branches = vec![ProtoBranch {
            weight: *w,
            state: comp.clone(),
            outcomes: vec![],
            corrections: vec![],
        }];
        for (kept, prime, tag) in
            [("A", "Ap", "AAp"), ("B", "Bp", "BBp"), ("C", "Cp", "CCp")]
        {
            let mut next = Vec::new();
            for br in branches {
                let with_spins = with_fresh_spins(&br.state, &["q1", "q2"])?;
                for qnd in
                    psqnd_parity_check(&with_spins, kept, prime, "q1", "q2", &opts.scattering)?
                {
                    let weight = br.weight * qnd.probability;
                    if weight <= PRUNE_TOL {
                        continue;
                    }
                    let mut outcomes = br.outcomes.clone();
                    let lbl = |p: Parity| if p == Parity::Even { "even" } else { "odd" };
                    outcomes.push((format!("{tag}.pol"), lbl(qnd.outcome.pol).to_string()));
                    outcomes.push((format!("{tag}.spat"), lbl(qnd.outcome.spat).to_string()));
                    next.push(ProtoBranch {
                        weight,
                        state: qnd.state,
                        outcomes,
                        corrections: br.corrections.clone(),
                    });
                }
            }
            branches = next;
        }
        for mut br in branches {
            let class = classify(&br)?;
            class_corrections(&mut br, class)?;
            let idx = match class {
                GhzClass::Keep => 0,
                GhzClass::Discard => 1,
                GhzClass::PolGood => 2,
                GhzClass::SpatGood => 3,
            };
            pools[idx].push(br);
        }
    }
    let [keep, discard, pol_good, spat_good] = pools;
    let keep = detect_primes(keep)?;
    let (pol_good, spat_good) = if opts.detect_early {
        (detect_primes(pol_good)?, detect_primes(spat_good)?)
    } else {
        (pol_good, spat_good)
    };
    let mut out = Vec::with_capacity(4);
    for (class, pool) in [
        (GhzClass::Keep, keep),
        (GhzClass::Discard, discard),
        (GhzClass::PolGood, pol_good),
        (GhzClass::SpatGood, spat_good),
    ] {
        let probability: f64 = pool.iter().map(|b| b.weight).sum();
        let ensemble = if class == GhzClass::Discard || probability <= PRUNE_TOL {
            None
        } else {
            let comps: Vec<(f64, QuantumState)> =
                pool.iter().map(|b| (b.weight / probability, b.state.clone())).collect();
            Some(Ensemble::new(comps).map_err(EppError::from)?.coalesced())
        };
        let branches = pool
            .into_iter()
            .map(|b| {
                let survivor = b.state.clone();
                b.into_record(survivor)
            })
            .collect();
        out.push(GhzCaseOutcome { class, probability: probability.max(0.0), ensemble, branches });
    }
    Ok(out)
}

/// Looks up one class in a first-step result.
pub fn ghz_case_outcome<'a>(
    outcomes: &'a [GhzCaseOutcome],
    class: GhzClass,
) -> Option<&'a GhzCaseOutcome> {
    outcomes.iter().find(|o| o.class == class)
}

fn triple_ensemble(outcome: &GhzCaseOutcome) -> Result<Ensemble, EppError> {
    let ens = outcome.ensemble.as_ref().ok_or(EppError::IncompatibleCases)?;
    if ens.components()[0].1.register_ref().subsystems().len() == 3 {
        return Ok(ens.clone());
    }
    let mut pool = Vec::new();
    for (w, comp) in ens.components() {
        let branches = vec![ProtoBranch {
            weight: *w,
            state: comp.clone(),
            outcomes: vec![],
            corrections: vec![],
        }];
        pool.extend(detect_primes(branches)?);
    }
    let total: f64 = pool.iter().map(|b| b.weight).sum();
    Ensemble::new(pool.into_iter().map(|b| (b.weight / total, b.state)).collect())
        .map(|e| e.coalesced())
        .map_err(EppError::from)
}

/// The second purification step: reads the polarization GHZ class of the
/// PolGood group into three electron spins and writes it onto the
/// SpatGood group's photons, then undoes the spatial Hadamard frame.
/// The surviving triple's mixture and the branch log are returned.
pub fn ghz_second_step(
    group_a: &GhzCaseOutcome,
    group_b: &GhzCaseOutcome,
    opts: &EppOptions,
) -> Result<(Ensemble, Vec<BranchRecord>), EppError> {
    let (pol_good, spat_good) = match (group_a.class, group_b.class) {
        (GhzClass::PolGood, GhzClass::SpatGood) => (group_a, group_b),
        (GhzClass::SpatGood, GhzClass::PolGood) => (group_b, group_a),
        _ => return Err(EppError::IncompatibleCases),
    };
    let sources = triple_ensemble(pol_good)?;
    let targets = triple_ensemble(spat_good)?;
    let spins = ["e_a", "e_b", "e_c"];
    let mut comps: Vec<(f64, QuantumState)> = Vec::new();
    let mut records: Vec<BranchRecord> = Vec::new();
    for (w_s, src) in sources.components() {
        for (w_t, tgt) in targets.components() {
            let weight = w_s * w_t;
            if weight <= PRUNE_TOL {
                continue;
            }
            let source = src.relabeled(&[("A", "Ap"), ("B", "Bp"), ("C", "Cp")])?;
            let joint = QuantumState::product(tgt, &source)?;
            let joint = with_fresh_spins(&joint, &spins)?;
            let branches = join_pol_classes(joint, &KEPT, &PRIMES, &spins, &opts.scattering)?;
            for mut br in branches {
                for ph in KEPT {
                    apply_gate(&mut br.state, Gate::HSpat, ph)?;
                }
                let p = weight * br.weight;
                if p <= PRUNE_TOL {
                    continue;
                }
                let survivor = br.state.extract_factor(&KEPT)?;
                comps.push((p, survivor.clone()));
                let mut rec = br.into_record(survivor);
                rec.probability = p;
                records.push(rec);
            }
        }
    }
    let total: f64 = comps.iter().map(|(w, _)| *w).sum();
    for (w, _) in &mut comps {
        *w /= total;
    }
    let ensemble = Ensemble::new(comps).map_err(EppError::from)?.coalesced();
    Ok((ensemble, records))
}

/// Reference survivor states for weight classification: polarization GHZ
/// class `i` with the spatial DOF in the Hadamard frame (`hadamard_frame`)
/// or in GHZ form after the final spatial Hadamards.
pub fn ghz_reference(
    pol_class: usize,
    spat_plus: bool,
    hadamard_frame: bool,
) -> Result<QuantumState, EppError> {
    let pol = ghz_vec(pol_class, true)?;
    let spat: [C64; 8] = if hadamard_frame {
        ghz_hadamard_vec(spat_plus)
    } else {
        ghz_vec(0, spat_plus)?
    };
    photons_state(&KEPT, &pol, &spat).map_err(EppError::from)
}
