//! First and second step of the two-step Bell purification, as an exact
//! circuit simulation over four-photon ensembles.
//!
//! The input mixture carries polarization bit-flip errors and spatial
//! phase-flip errors on pairs AB and CD. The first step compares the two
//! pairs with phase-check QNDs on AC and BD (polarization conjugated by
//! Hadamards so its bit errors become visible; spatial checked in phase
//! directly, then moved to the Hadamard frame where its errors look like
//! bit flips too) and sorts each run into one of four cases: keep both
//! DOFs, discard, polarization good, or spatial good. The second step
//! welds one polarization-good group to one spatial-good group with the
//! four-photon QSJM so that neither is wasted.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::primitives::{
    apply_gate, hyperentangled_bell, measure_branches, psqnd_phase_check, qsjm_join_fourphoton,
    swap_pol_spatial, with_fresh_spins, Gate, ProtoBranch, RelPhase,
};
use crate::statevec::{
    BranchRecord, Ensemble, MeasBasis, QuantumState, Sel, StateError, PRUNE_TOL,
};

use super::{BellMixture, EppError, EppOptions};

const PHOTONS: [&str; 4] = ["A", "B", "C", "D"];

/// First-step classification of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BellCase {
    /// Same parity in both DOFs: purified pair kept directly.
    Keep,
    /// Parities differ in both DOFs: unrecoverable, discarded.
    Discard,
    /// Same polarization parity only; salvaged by the second step.
    PolGood,
    /// Same spatial parity only; salvaged by the second step.
    SpatGood,
}

/// Aggregate over all measurement branches that landed in one case.
#[derive(Clone, Debug)]
pub struct CaseOutcome {
    pub case: BellCase,
    pub probability: f64,
    /// Surviving mixture: the photon pair AB, or the whole four-photon
    /// system when detection of C and D is deferred. `None` for
    /// [`BellCase::Discard`].
    pub ensemble: Option<Ensemble>,
    pub branches: Vec<BranchRecord>,
}

/// Builds the four-photon input ρ_AB ⊗ ρ_CD on photons A, B, C, D from
/// the mixture parameters: polarization classes φ₁ (weight F₁) and φ₃,
/// spatial classes φ₁ (weight F₂) and φ₂, independently per pair.
pub fn bell_input_ensemble(m: &BellMixture) -> Result<Ensemble, EppError> {
    let mut comps = Vec::with_capacity(16);
    for (kp_ab, w_pab) in [(1usize, m.f1), (3, 1.0 - m.f1)] {
        for (kp_cd, w_pcd) in [(1usize, m.f1), (3, 1.0 - m.f1)] {
            for (ks_ab, w_sab) in [(1usize, m.f2), (2, 1.0 - m.f2)] {
                for (ks_cd, w_scd) in [(1usize, m.f2), (2, 1.0 - m.f2)] {
                    let w = w_pab * w_pcd * w_sab * w_scd;
                    if w <= PRUNE_TOL {
                        continue;
                    }
                    let ab = hyperentangled_bell(kp_ab, ks_ab, "A", "B")?;
                    let cd = hyperentangled_bell(kp_cd, ks_cd, "C", "D")?;
                    comps.push((w, QuantumState::product(&ab, &cd)?));
                }
            }
        }
    }
    Ensemble::new(comps).map_err(EppError::from)
}

fn canonical_components() -> Result<Vec<QuantumState>, EppError> {
    let mut out = Vec::with_capacity(16);
    for kp_ab in [1usize, 3] {
        for kp_cd in [1usize, 3] {
            for ks_ab in [1usize, 2] {
                for ks_cd in [1usize, 2] {
                    let ab = hyperentangled_bell(kp_ab, ks_ab, "A", "B")?;
                    let cd = hyperentangled_bell(kp_cd, ks_cd, "C", "D")?;
                    out.push(QuantumState::product(&ab, &cd)?);
                }
            }
        }
    }
    Ok(out)
}

/// Rejects inputs outside the protocol's error model (anything that is
/// not a mixture of the sixteen bit-flip/phase-flip products).
fn validate_input(ensemble: &Ensemble) -> Result<(), EppError> {
    let canon = canonical_components()?;
    for (_, comp) in ensemble.components() {
        let mut matched = false;
        for reference in &canon {
            if comp.fidelity(reference).map_err(EppError::from)? > 1.0 - 1e-9 {
                matched = true;
                break;
            }
        }
        if !matched {
            return Err(EppError::MalformedEnsemble(
                "component outside the bit-flip/phase-flip error model".to_string(),
            ));
        }
    }
    Ok(())
}

/// Runs one phase-check QND on `(x, y)` inside a branch set, logging the
/// two phase outcomes under `tag`.
fn qnd_on_pairs(
    branches: Vec<ProtoBranch>,
    x: &str,
    y: &str,
    tag: &str,
    opts: &EppOptions,
) -> Result<Vec<ProtoBranch>, StateError> {
    let mut out = Vec::new();
    for br in branches {
        let with_spins = with_fresh_spins(&br.state, &["q1", "q2"])?;
        for qnd in psqnd_phase_check(&with_spins, x, y, "q1", "q2", &opts.scattering)? {
            let w = br.weight * qnd.probability;
            if w <= PRUNE_TOL {
                continue;
            }
            let mut outcomes = br.outcomes.clone();
            let phase_label = |p: RelPhase| if p == RelPhase::Zero { "0" } else { "pi" };
            outcomes.push((format!("{tag}.pol"), phase_label(qnd.outcome.pol).to_string()));
            outcomes.push((format!("{tag}.spat"), phase_label(qnd.outcome.spat).to_string()));
            out.push(ProtoBranch {
                weight: w,
                state: qnd.state,
                outcomes,
                corrections: br.corrections.clone(),
            });
        }
    }
    Ok(out)
}

/// Hadamards, computational detection of photons `x` and `y` in both
/// DOFs, and the conditional phase fixes on photon B.
fn detect_pair(
    branches: Vec<ProtoBranch>,
    x: &str,
    y: &str,
) -> Result<Vec<ProtoBranch>, StateError> {
    let mut branches = branches;
    for br in &mut branches {
        for ph in [x, y] {
            apply_gate(&mut br.state, Gate::HPol, ph)?;
            apply_gate(&mut br.state, Gate::HSpat, ph)?;
        }
    }
    let mut branches = measure_branches(branches, &[Sel::Photon(x)], &MeasBasis::photon())?;
    branches = measure_branches(branches, &[Sel::Photon(y)], &MeasBasis::photon())?;
    for br in &mut branches {
        let ox = br.outcome(x).unwrap_or("??").to_string();
        let oy = br.outcome(y).unwrap_or("??").to_string();
        let l_count = [&ox, &oy].iter().filter(|o| o.starts_with('L')).count();
        let two_count = [&ox, &oy].iter().filter(|o| o.ends_with('2')).count();
        if l_count % 2 == 1 {
            apply_gate(&mut br.state, Gate::SigmaZPol, "B")?;
            br.corrections.push("sigma_z_pol(B)".to_string());
        }
        if two_count % 2 == 1 {
            apply_gate(&mut br.state, Gate::SigmaZSpat, "B")?;
            br.corrections.push("sigma_z_spat(B)".to_string());
        }
        br.state = br.state.discard_product(&[x, y])?;
    }
    Ok(branches)
}

fn classify(br: &ProtoBranch) -> Result<BellCase, StateError> {
    let get = |what: &str| {
        br.outcome(what)
            .map(|s| s.to_string())
            .ok_or_else(|| StateError::Precondition(format!("missing outcome {what}")))
    };
    let pol_same = get("AC.pol")? == get("BD.pol")?;
    let spat_same = get("AC.spat")? == get("BD.spat")?;
    Ok(match (pol_same, spat_same) {
        (true, true) => BellCase::Keep,
        (false, false) => BellCase::Discard,
        (true, false) => BellCase::PolGood,
        (false, true) => BellCase::SpatGood,
    })
}

/// Applies the outcome-conditioned bit-flip repairs on photons C and D.
/// Both-π polarization outcomes flag the flipped four-photon family, and
/// likewise for the spatial DOF in its Hadamard frame.
fn case_corrections(br: &mut ProtoBranch, case: BellCase) -> Result<(), StateError> {
    let pol_both_pi = br.outcome("AC.pol") == Some("pi") && br.outcome("BD.pol") == Some("pi");
    let spat_both_pi = br.outcome("AC.spat") == Some("pi") && br.outcome("BD.spat") == Some("pi");
    if matches!(case, BellCase::Keep | BellCase::PolGood) && pol_both_pi {
        for ph in ["C", "D"] {
            apply_gate(&mut br.state, Gate::SigmaXPol, ph)?;
        }
        br.corrections.push("sigma_x_pol(C,D)".to_string());
    }
    if matches!(case, BellCase::Keep | BellCase::SpatGood) && spat_both_pi {
        for ph in ["C", "D"] {
            apply_gate(&mut br.state, Gate::SigmaXSpat, ph)?;
        }
        br.corrections.push("sigma_x_spat(C,D)".to_string());
    }
    Ok(())
}

/// The first purification step on a four-photon ensemble.
///
/// Every mixture component is pushed through the comparison circuit with
/// exhaustive branch enumeration; branches are pooled by case. Keep
/// branches finish with detection of C and D and the conditional phase
/// fixes on B, leaving a two-photon ensemble. The transfer cases keep the
/// four-photon system intact unless `opts.detect_early` (the default)
/// already detects C and D here.
pub fn bell_first_step(
    ensemble: &Ensemble,
    opts: &EppOptions,
) -> Result<Vec<CaseOutcome>, EppError> {
    validate_input(ensemble)?;
    let mut pools: [Vec<ProtoBranch>; 4] = [vec![], vec![], vec![], vec![]];
    for (w, comp) in ensemble.components() {
        let mut root = comp.clone();
        for ph in PHOTONS {
            apply_gate(&mut root, Gate::HPol, ph)?;
        }
        let branches = vec![ProtoBranch {
            weight: *w,
            state: root,
            outcomes: vec![],
            corrections: vec![],
        }];
        let branches = qnd_on_pairs(branches, "A", "C", "AC", opts)?;
        let branches = qnd_on_pairs(branches, "B", "D", "BD", opts)?;
        for mut br in branches {
            for ph in PHOTONS {
                apply_gate(&mut br.state, Gate::HPol, ph)?;
                apply_gate(&mut br.state, Gate::HSpat, ph)?;
            }
            let case = classify(&br)?;
            case_corrections(&mut br, case)?;
            let idx = match case {
                BellCase::Keep => 0,
                BellCase::Discard => 1,
                BellCase::PolGood => 2,
                BellCase::SpatGood => 3,
            };
            pools[idx].push(br);
        }
    }
    let [keep, discard, pol_good, spat_good] = pools;
    let keep = detect_pair(keep, "C", "D")?;
    let (pol_good, spat_good) = if opts.detect_early {
        (detect_pair(pol_good, "C", "D")?, detect_pair(spat_good, "C", "D")?)
    } else {
        (pol_good, spat_good)
    };
    let mut out = Vec::with_capacity(4);
    for (case, pool) in [
        (BellCase::Keep, keep),
        (BellCase::Discard, discard),
        (BellCase::PolGood, pol_good),
        (BellCase::SpatGood, spat_good),
    ] {
        out.push(pool_to_outcome(case, pool)?);
    }
    Ok(out)
}

fn pool_to_outcome(case: BellCase, pool: Vec<ProtoBranch>) -> Result<CaseOutcome, EppError> {
    let probability: f64 = pool.iter().map(|b| b.weight).sum();
    if probability <= PRUNE_TOL {
        return Ok(CaseOutcome { case, probability: 0.0, ensemble: None, branches: vec![] });
    }
    let ensemble = if case == BellCase::Discard {
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
    Ok(CaseOutcome { case, probability, ensemble, branches })
}

/// Looks up one case in a first-step result.
pub fn case_outcome<'a>(outcomes: &'a [CaseOutcome], case: BellCase) -> Option<&'a CaseOutcome> {
    outcomes.iter().find(|o| o.case == case)
}

/// Which degree of freedom the QSJM carries across in the second step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferDof {
    /// Move the polarization of the PolGood group onto the SpatGood
    /// group's pair; the SpatGood pair survives.
    Polarization,
    /// Move the spatial state of the SpatGood group onto the PolGood
    /// group's pair (swap-conjugated joining); the PolGood pair survives.
    Spatial,
}

fn pair_ensemble(outcome: &CaseOutcome) -> Result<Ensemble, EppError> {
    let ens = outcome
        .ensemble
        .as_ref()
        .ok_or(EppError::IncompatibleCases)?;
    if ens.components()[0].1.register_ref().subsystems().len() == 2 {
        return Ok(ens.clone());
    }
    // Detection was deferred: finish it now, per component.
    let mut pool = Vec::new();
    for (w, comp) in ens.components() {
        let branches = vec![ProtoBranch {
            weight: *w,
            state: comp.clone(),
            outcomes: vec![],
            corrections: vec![],
        }];
        pool.extend(detect_pair(branches, "C", "D")?);
    }
    let total: f64 = pool.iter().map(|b| b.weight).sum();
    Ensemble::new(pool.into_iter().map(|b| (b.weight / total, b.state)).collect())
        .map(|e| e.coalesced())
        .map_err(EppError::from)
}

/// The second purification step: welds one polarization-good group to one
/// spatial-good group with the four-photon QSJM, reaching the keep
/// condition of the first step. The groups may be passed in either order;
/// the surviving pair's mixture and the branch log are returned.
pub fn bell_second_step(
    group_a: &CaseOutcome,
    group_b: &CaseOutcome,
    opts: &EppOptions,
    direction: TransferDof,
) -> Result<(Ensemble, Vec<BranchRecord>), EppError> {
    let (pol_good, spat_good) = match (group_a.case, group_b.case) {
        (BellCase::PolGood, BellCase::SpatGood) => (group_a, group_b),
        (BellCase::SpatGood, BellCase::PolGood) => (group_b, group_a),
        _ => return Err(EppError::IncompatibleCases),
    };
    let pol_pairs = pair_ensemble(pol_good)?;
    let spat_pairs = pair_ensemble(spat_good)?;
    let mut comps: Vec<(f64, QuantumState)> = Vec::new();
    let mut records: Vec<BranchRecord> = Vec::new();
    for (w_s, src) in pol_pairs.components() {
        for (w_t, tgt) in spat_pairs.components() {
            let weight = w_s * w_t;
            if weight <= PRUNE_TOL {
                continue;
            }
            let branches = match direction {
                TransferDof::Polarization => {
                    let source = src.relabeled(&[("A", "Ap"), ("B", "Bp")])?;
                    qsjm_join_fourphoton(tgt, &source, &opts.scattering)?
                }
                TransferDof::Spatial => {
                    // keep the PolGood pair; bring the good spatial state
                    // over by swapping both pairs into the polarization
                    // slots, joining there, and swapping back
                    let mut target = src.clone();
                    swap_pol_spatial(&mut target, "A")?;
                    swap_pol_spatial(&mut target, "B")?;
                    let mut source = tgt.relabeled(&[("A", "Ap"), ("B", "Bp")])?;
                    swap_pol_spatial(&mut source, "Ap")?;
                    swap_pol_spatial(&mut source, "Bp")?;
                    let mut recs = qsjm_join_fourphoton(&target, &source, &opts.scattering)?;
                    for r in &mut recs {
                        swap_pol_spatial(&mut r.survivor, "A")?;
                        swap_pol_spatial(&mut r.survivor, "B")?;
                    }
                    recs
                }
            };
            for rec in branches {
                let p = weight * rec.probability;
                if p <= PRUNE_TOL {
                    continue;
                }
                comps.push((p, rec.survivor.clone()));
                records.push(BranchRecord { probability: p, ..rec });
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::abs;

    fn reference_pair(kp: usize, ks: usize) -> QuantumState {
        hyperentangled_bell(kp, ks, "A", "B").unwrap()
    }

    fn case_probability(outcomes: &[CaseOutcome], case: BellCase) -> f64 {
        case_outcome(outcomes, case).map(|o| o.probability).unwrap_or(0.0)
    }

    #[test]
    fn error_free_input_keeps_with_probability_one() {
        let ens = bell_input_ensemble(&BellMixture { f1: 1.0, f2: 1.0 }).unwrap();
        let out = bell_first_step(&ens, &EppOptions::default()).unwrap();
        assert!(abs(case_probability(&out, BellCase::Keep) - 1.0) < 1e-12);
        let keep = case_outcome(&out, BellCase::Keep).unwrap();
        let ens = keep.ensemble.as_ref().unwrap();
        assert!(abs(ens.weight_on(&reference_pair(1, 1)).unwrap() - 1.0) < 1e-12);
    }

    #[test]
    fn case_probabilities_at_eight_tenths() {
        let ens = bell_input_ensemble(&BellMixture { f1: 0.8, f2: 0.8 }).unwrap();
        let out = bell_first_step(&ens, &EppOptions::default()).unwrap();
        assert!(abs(case_probability(&out, BellCase::Keep) - 0.4624) < 1e-12);
        assert!(abs(case_probability(&out, BellCase::Discard) - 0.1024) < 1e-12);
        assert!(abs(case_probability(&out, BellCase::PolGood) - 0.2176) < 1e-12);
        assert!(abs(case_probability(&out, BellCase::SpatGood) - 0.2176) < 1e-12);
    }

    #[test]
    fn keep_weights_follow_recurrence() {
        let m = BellMixture { f1: 0.85, f2: 0.7 };
        let ens = bell_input_ensemble(&m).unwrap();
        let out = bell_first_step(&ens, &EppOptions::default()).unwrap();
        let keep = case_outcome(&out, BellCase::Keep).unwrap().ensemble.as_ref().unwrap();
        let next = super::super::bell_recurrence(&m);
        for (kp, ks, want) in [
            (1, 1, next.f1 * next.f2),
            (1, 3, next.f1 * (1.0 - next.f2)),
            (3, 1, (1.0 - next.f1) * next.f2),
            (3, 3, (1.0 - next.f1) * (1.0 - next.f2)),
        ] {
            let got = keep.weight_on(&reference_pair(kp, ks)).unwrap();
            assert!(abs(got - want) < 1e-12, "phi{kp}xphi{ks}: got {got}, want {want}");
        }
    }

    #[test]
    fn second_step_reaches_keep_condition() {
        let m = BellMixture { f1: 0.8, f2: 0.8 };
        let ens = bell_input_ensemble(&m).unwrap();
        let out = bell_first_step(&ens, &EppOptions::default()).unwrap();
        let pol = case_outcome(&out, BellCase::PolGood).unwrap();
        let spat = case_outcome(&out, BellCase::SpatGood).unwrap();
        let (joined, _) =
            bell_second_step(pol, spat, &EppOptions::default(), TransferDof::Polarization)
                .unwrap();
        let next = super::super::bell_recurrence(&m);
        for (kp, ks, want) in [
            (1, 1, next.f1 * next.f2),
            (1, 3, next.f1 * (1.0 - next.f2)),
            (3, 1, (1.0 - next.f1) * next.f2),
            (3, 3, (1.0 - next.f1) * (1.0 - next.f2)),
        ] {
            let got = joined.weight_on(&reference_pair(kp, ks)).unwrap();
            assert!(abs(got - want) < 1e-9, "phi{kp}xphi{ks}: got {got}, want {want}");
        }
    }

    #[test]
    fn second_step_directions_agree() {
        let m = BellMixture { f1: 0.75, f2: 0.65 };
        let ens = bell_input_ensemble(&m).unwrap();
        let out = bell_first_step(&ens, &EppOptions::default()).unwrap();
        let pol = case_outcome(&out, BellCase::PolGood).unwrap();
        let spat = case_outcome(&out, BellCase::SpatGood).unwrap();
        let (via_pol, _) =
            bell_second_step(pol, spat, &EppOptions::default(), TransferDof::Polarization)
                .unwrap();
        let (via_spat, _) =
            bell_second_step(spat, pol, &EppOptions::default(), TransferDof::Spatial).unwrap();
        for kp in [1usize, 3] {
            for ks in [1usize, 3] {
                let r = reference_pair(kp, ks);
                let a = via_pol.weight_on(&r).unwrap();
                let b = via_spat.weight_on(&r).unwrap();
                assert!(abs(a - b) < 1e-9, "phi{kp}xphi{ks}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn deferred_detection_matches_early() {
        let m = BellMixture { f1: 0.8, f2: 0.7 };
        let ens = bell_input_ensemble(&m).unwrap();
        let early = bell_first_step(&ens, &EppOptions::default()).unwrap();
        let late_opts = EppOptions { detect_early: false, ..EppOptions::default() };
        let late = bell_first_step(&ens, &late_opts).unwrap();
        for case in [BellCase::Keep, BellCase::Discard, BellCase::PolGood, BellCase::SpatGood] {
            assert!(
                abs(case_probability(&early, case) - case_probability(&late, case)) < 1e-12,
                "{case:?}"
            );
        }
        let (a, _) = bell_second_step(
            case_outcome(&early, BellCase::PolGood).unwrap(),
            case_outcome(&early, BellCase::SpatGood).unwrap(),
            &EppOptions::default(),
            TransferDof::Polarization,
        )
        .unwrap();
        let (b, _) = bell_second_step(
            case_outcome(&late, BellCase::PolGood).unwrap(),
            case_outcome(&late, BellCase::SpatGood).unwrap(),
            &late_opts,
            TransferDof::Polarization,
        )
        .unwrap();
        for kp in [1usize, 3] {
            for ks in [1usize, 3] {
                let r = reference_pair(kp, ks);
                assert!(abs(a.weight_on(&r).unwrap() - b.weight_on(&r).unwrap()) < 1e-9);
            }
        }
    }

    #[test]
    fn second_step_rejects_same_case() {
        let m = BellMixture { f1: 0.8, f2: 0.8 };
        let ens = bell_input_ensemble(&m).unwrap();
        let out = bell_first_step(&ens, &EppOptions::default()).unwrap();
        let pol = case_outcome(&out, BellCase::PolGood).unwrap();
        assert!(matches!(
            bell_second_step(pol, pol, &EppOptions::default(), TransferDof::Polarization),
            Err(EppError::IncompatibleCases)
        ));
    }

    #[test]
    fn malformed_input_rejected() {
        // a component outside the error model: |φ₂⟩ᴾ on AB
        let ab = hyperentangled_bell(2, 1, "A", "B").unwrap();
        let cd = hyperentangled_bell(1, 1, "C", "D").unwrap();
        let state = QuantumState::product(&ab, &cd).unwrap();
        let ens = Ensemble::pure(state);
        assert!(matches!(
            bell_first_step(&ens, &EppOptions::default()),
            Err(EppError::MalformedEnsemble(_))
        ));
    }
}
