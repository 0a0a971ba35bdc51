//! Observability-blocking designs: a closed-loop eigenvector is steered into
//! the kernel of `C` while every other open-loop eigenpair is kept, except
//! for the few that must move to restore independence.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigassign::{complete_target, gain_from_target, GainMatrix, ModalEntry, ModalTarget, Slot};
use crate::error::{Error, Result};
use crate::netmodel::SystemMatrices;
use crate::spectral::{
    self, eig, independence_score, kernel_basis, kernel_vector, null_basis, pbh_controllable,
    CVector, Eigenstructure, Tolerances,
};

/// Whether the blocking vector fit straight into the open-loop modal set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignCase {
    Direct,
    Fallback,
}

#[derive(Debug, Clone)]
pub struct BlockingDesign {
    pub f: GainMatrix,
    /// Eigenvalue of `L + B F` whose eigenvector is hidden; the unobservable
    /// mode of `-(L + B F)` is `-lambda_p`.
    pub lambda_p: Complex64,
    /// Index of `lambda_p` in the ordered open-loop spectrum.
    pub p: usize,
    /// Indices (into the ordered spectrum) whose eigenvectors changed.
    pub modified: BTreeSet<usize>,
    /// Closed-loop eigenvector at `lambda_p`, zero at every measurement node.
    pub vhat_p: CVector,
    pub case: DesignCase,
    /// Every mode hidden so far, with its eigenvector (one entry per stage).
    pub blocked: Vec<(Complex64, CVector)>,
    /// Final-stage modal target.
    pub target: ModalTarget,
}

/// How a caller names the eigenvalue to block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeChoice {
    /// 0-based position in the ordered spectrum.
    Index(usize),
    /// Eigenvalue closest to this value.
    Value(Complex64),
}

impl ModeChoice {
    /// Index into `es`. Values must lie within `1e-3 * max(1, |value|)` of
    /// an eigenvalue, enough for figures quoted to four decimals.
    pub fn resolve(&self, es: &Eigenstructure) -> Result<usize> {
        match *self {
            ModeChoice::Index(i) => {
                check_index(es, i)?;
                Ok(i)
            }
            ModeChoice::Value(value) => {
                let i = es.nearest(value);
                let dist = (es.eigenvalues[i] - value).norm();
                if dist > 1e-3 * value.norm().max(1.0) {
                    return Err(Error::Validation {
                        path: "mode".into(),
                        msg: format!("no eigenvalue near {value} (closest {})", es.eigenvalues[i]),
                    });
                }
                Ok(i)
            }
        }
    }
}

/// Measurement node of each row of an indicator output matrix.
pub fn measurement_indices(c: &DMatrix<f64>) -> Vec<usize> {
    c.row_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, _)| j)
                .unwrap_or(0)
        })
        .collect()
}

fn checked_eig(a: &DMatrix<f64>, tol: &Tolerances) -> Result<Eigenstructure> {
    let es = eig(a, tol)?;
    if !es.distinct {
        return Err(Error::RepeatedEigenvalues {
            values: es.clusters(tol.distinct_gap(a.norm())),
        });
    }
    Ok(es)
}

fn check_index(es: &Eigenstructure, p: usize) -> Result<()> {
    if p >= es.n() {
        return Err(Error::ModeOutOfRange { index: p, n: es.n() });
    }
    Ok(())
}

/// Indices covered by the mode at `p` (itself plus its conjugate).
fn mode_indices(es: &Eigenstructure, p: usize) -> Vec<usize> {
    match es.partner(p) {
        Some(j) => vec![p.min(j), p.max(j)],
        None => vec![p],
    }
}

/// Removal units: a real eigenvalue alone or a conjugate pair together.
fn removal_units(es: &Eigenstructure, excluded: &BTreeSet<usize>) -> Vec<Vec<usize>> {
    let mut units = Vec::new();
    let mut i = 0;
    while i < es.n() {
        let unit = mode_indices(es, i);
        i = unit.last().copied().unwrap_or(i) + 1;
        if unit.iter().any(|k| excluded.contains(k)) {
            continue;
        }
        units.push(unit);
    }
    units
}

fn combinations(len: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, len: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..len {
            cur.push(i);
            rec(i + 1, len, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, len, k, &mut Vec::new(), &mut out);
    out
}

/// Assigns the dictated entries at `p` (and its partner) and keeps every
/// other open-loop pair, removing as few eigenvectors as needed (total cost
/// at most `max_cost`) to regain independence.
#[allow(clippy::too_many_arguments)]
fn assign_around(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    es: &Eigenstructure,
    p: usize,
    dictated: Vec<ModalEntry>,
    protected: &BTreeSet<usize>,
    max_cost: usize,
    tol: &Tolerances,
) -> Result<(ModalTarget, BTreeSet<usize>, DesignCase)> {
    let q = b.ncols();
    let own = mode_indices(es, p);
    let entry_for = |i: usize| -> Slot {
        match own.iter().position(|&k| k == i) {
            Some(pos) => Slot::Fixed(dictated[pos].clone()),
            None => Slot::Fixed(ModalEntry::preserved(es.eigenvalues[i], es.vector(i), q)),
        }
    };

    let mut base: Vec<CVector> = dictated.iter().map(|e| e.v.clone()).collect();
    let rest: Vec<usize> = (0..es.n()).filter(|i| !own.contains(i)).collect();
    base.extend(rest.iter().map(|&i| es.vector(i)));
    if spectral::is_independent(&base, tol)? {
        let slots = (0..es.n()).map(entry_for).collect();
        let target = complete_target(a, b, slots, tol)?;
        return Ok((target, own.iter().copied().collect(), DesignCase::Direct));
    }

    let mut excluded: BTreeSet<usize> = protected.clone();
    excluded.extend(own.iter().copied());
    let units = removal_units(es, &excluded);

    for cost in 1..=max_cost {
        let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
        for k in 1..=cost.min(units.len()) {
            for combo in combinations(units.len(), k) {
                let removed: Vec<usize> = combo.iter().flat_map(|&u| units[u].clone()).collect();
                if removed.len() != cost {
                    continue;
                }
                let mut partial: Vec<CVector> = dictated.iter().map(|e| e.v.clone()).collect();
                partial.extend(
                    rest.iter()
                        .filter(|i| !removed.contains(i))
                        .map(|&i| es.vector(i)),
                );
                let score = independence_score(&partial);
                if score > tol.rank_rtol {
                    candidates.push((score, removed));
                }
            }
        }
        // Fastest modes first among well-conditioned choices: a perturbed
        // fast eigenvector decays quickest.
        let best = candidates.iter().map(|c| c.0).fold(0.0, f64::max);
        let speed = |removed: &[usize]| -> Vec<f64> {
            let mut re: Vec<f64> = removed.iter().map(|&i| es.eigenvalues[i].re).collect();
            re.sort_by(|a, b| b.total_cmp(a));
            re
        };
        candidates.sort_by(|x, y| {
            let gx = x.0 >= 1e-2 * best;
            let gy = y.0 >= 1e-2 * best;
            gy.cmp(&gx)
                .then_with(|| {
                    let (sx, sy) = (speed(&x.1), speed(&y.1));
                    sy.iter()
                        .zip(&sx)
                        .map(|(b, a)| b.total_cmp(a))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .then_with(|| y.0.total_cmp(&x.0))
        });
        let mut last_err = None;
        for (_, removed) in candidates {
            let slots = (0..es.n())
                .map(|i| {
                    if removed.contains(&i) {
                        Slot::Free(es.eigenvalues[i])
                    } else {
                        entry_for(i)
                    }
                })
                .collect();
            match complete_target(a, b, slots, tol) {
                Ok(target) => {
                    let mut modified: BTreeSet<usize> = own.iter().copied().collect();
                    modified.extend(removed);
                    return Ok((target, modified, DesignCase::Fallback));
                }
                Err(e @ Error::CompletionFailed(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = last_err {
            return Err(e);
        }
    }
    Err(Error::CompletionFailed(format!(
        "no removal of at most {max_cost} eigenvectors restores independence"
    )))
}

fn unit_h(nb_n1: &spectral::CMatrix, h: CVector) -> Option<CVector> {
    let nv = (nb_n1 * &h).norm();
    (nv > 1e-12).then(|| h / Complex64::new(nv, 0.0))
}

/// Blocking entries at `lambda_p`: the chosen `v = N1 h` with `C v = 0`, and
/// its conjugate when `lambda_p` is complex.
fn blocking_entries(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    measurement: &[usize],
    es: &Eigenstructure,
    p: usize,
    tol: &Tolerances,
) -> Result<Vec<ModalEntry>> {
    let lambda = es.eigenvalues[p];
    let nb = null_basis(a, b, lambda, tol)?;
    let n4 = nb.n4(measurement);
    let make = |h: CVector| ModalEntry {
        lambda,
        v: &nb.n1 * &h,
        z: &nb.n2 * &h,
        h: Some(h),
        modified: true,
    };

    if lambda.im == 0.0 {
        let h = kernel_vector(&n4, tol).ok_or(Error::KernelInfeasible { lambda })?;
        let h = unit_h(&nb.n1, h).ok_or(Error::KernelInfeasible { lambda })?;
        return Ok(vec![make(h)]);
    }

    let kb = kernel_basis(&n4, tol.rank_rtol);
    if kb.ncols() == 0 {
        return Err(Error::KernelInfeasible { lambda });
    }
    let k0 = kb.column(0).into_owned();
    let mut candidates = vec![k0.clone()];
    if kb.ncols() >= 2 {
        let k1 = kb.column(1).into_owned();
        candidates.push(k1.clone());
        candidates.push(&k0 + &k1);
        candidates.push(&k0 + &k1 * Complex64::new(0.0, 1.0));
    }
    let mut best: Option<(f64, CVector)> = None;
    for h in candidates {
        let Some(h) = unit_h(&nb.n1, h) else { continue };
        let v = &nb.n1 * &h;
        let score = independence_score(&[v.clone(), v.map(|c| c.conj())]);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, h));
        }
    }
    let Some((score, h)) = best else {
        return Err(Error::KernelInfeasible { lambda });
    };
    if score <= tol.rank_rtol {
        return Err(Error::ConjugateDegenerate { lambda });
    }
    let entry = make(h);
    let mut conj = entry.conj();
    conj.lambda = lambda.conj();
    // keep the order of the spectrum: negative imaginary part first
    Ok(if lambda.im < 0.0 { vec![entry, conj] } else { vec![conj, entry] })
}

struct StageInput<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    measurement: &'a [usize],
    es: Eigenstructure,
    p: usize,
    protected: BTreeSet<usize>,
}

fn block_stage(input: StageInput<'_>, max_cost_real: usize, max_cost_complex: usize, tol: &Tolerances) -> Result<BlockingDesign> {
    let StageInput { a, b, measurement, es, p, protected } = input;
    let lambda_p = es.eigenvalues[p];
    let dictated = blocking_entries(a, b, measurement, &es, p, tol)?;
    let max_cost = if lambda_p.im == 0.0 { max_cost_real } else { max_cost_complex };
    let (target, modified, case) = assign_around(a, b, &es, p, dictated, &protected, max_cost, tol)?;
    let f = gain_from_target(a, b, &target, tol)?;
    let vhat_p = target.entries[p].v.clone();
    Ok(BlockingDesign {
        f,
        lambda_p,
        p,
        modified,
        vhat_p: vhat_p.clone(),
        case,
        blocked: vec![(lambda_p, vhat_p)],
        target,
    })
}

fn prepare(mats: &SystemMatrices, tol: &Tolerances) -> Result<Eigenstructure> {
    mats.check_dims()?;
    tol.validate()?;
    let es = checked_eig(&mats.l, tol)?;
    if !pbh_controllable(&mats.l, &mats.b, tol)? {
        return Err(Error::Uncontrollable);
    }
    Ok(es)
}

/// Single-mode blocking for a spectrum of distinct real eigenvalues. At most
/// one extra eigenvector is modified.
pub fn algorithm1(mats: &SystemMatrices, p: usize, tol: &Tolerances) -> Result<BlockingDesign> {
    let es = eig(&mats.l, tol)?;
    if !es.all_real || !es.distinct {
        return Err(Error::NotDistinctReal);
    }
    let es = prepare(mats, tol)?;
    check_index(&es, p)?;
    let measurement = measurement_indices(&mats.c);
    let mut d = block_stage(
        StageInput {
            a: &mats.l,
            b: &mats.b,
            measurement: &measurement,
            es,
            p,
            protected: BTreeSet::new(),
        },
        1,
        0,
        tol,
    )?;
    d.f.provenance = "algorithm 1".into();
    Ok(d)
}

/// Single-mode blocking for any distinct spectrum. Real modes modify at most
/// three eigenvectors, complex pairs at most six.
pub fn algorithm2(mats: &SystemMatrices, p: usize, tol: &Tolerances) -> Result<BlockingDesign> {
    let es = prepare(mats, tol)?;
    check_index(&es, p)?;
    let measurement = measurement_indices(&mats.c);
    let mut d = block_stage(
        StageInput {
            a: &mats.l,
            b: &mats.b,
            measurement: &measurement,
            es,
            p,
            protected: BTreeSet::new(),
        },
        2,
        4,
        tol,
    )?;
    d.f.provenance = if d.lambda_p.im == 0.0 {
        "algorithm 2 (real mode)".into()
    } else {
        "algorithm 2 (complex pair)".into()
    };
    Ok(d)
}

/// Blocks several modes in sequence. Each stage treats the current closed
/// loop as its open loop, keeps the eigenvectors hidden by earlier stages,
/// and adds its gain to the running total.
pub fn block_modes(mats: &SystemMatrices, indices: &[usize], tol: &Tolerances) -> Result<BlockingDesign> {
    let es0 = prepare(mats, tol)?;
    let n = mats.n();
    let m = mats.m();
    for &p in indices {
        check_index(&es0, p)?;
    }
    let mut modes: Vec<usize> = Vec::new();
    for &p in indices {
        let canon = mode_indices(&es0, p)[0];
        if modes.iter().any(|&k| mode_indices(&es0, k)[0] == canon) {
            return Err(Error::Validation {
                path: "modes".into(),
                msg: format!("mode {} requested twice", p + 1),
            });
        }
        modes.push(p);
    }
    let hidden: usize = modes.iter().map(|&p| mode_indices(&es0, p).len()).sum();
    if hidden > n.saturating_sub(m) {
        return Err(Error::TooManyModes {
            requested: hidden,
            max: n.saturating_sub(m),
        });
    }

    let q = mats.q();
    let mut f_total = DMatrix::<f64>::zeros(q, n);
    if modes.is_empty() {
        let target = ModalTarget {
            entries: (0..n)
                .map(|i| ModalEntry::preserved(es0.eigenvalues[i], es0.vector(i), q))
                .collect(),
        };
        return Ok(BlockingDesign {
            f: GainMatrix {
                f: f_total,
                provenance: "no modes requested".into(),
                imag_residue: 0.0,
            },
            lambda_p: Complex64::new(0.0, 0.0),
            p: 0,
            modified: BTreeSet::new(),
            vhat_p: CVector::zeros(n),
            case: DesignCase::Direct,
            blocked: Vec::new(),
            target,
        });
    }

    let measurement = measurement_indices(&mats.c);
    let mut modified = BTreeSet::new();
    let mut blocked: Vec<(Complex64, CVector)> = Vec::new();
    let mut last: Option<BlockingDesign> = None;
    let mut imag_residue: f64 = 0.0;
    let mut any_fallback = false;
    for (stage, &p0) in modes.iter().enumerate() {
        let run = || -> Result<BlockingDesign> {
            let a = mats.closed_loop(&f_total)?;
            let es = checked_eig(&a, tol)?;
            let p = es.nearest(es0.eigenvalues[p0]);
            let mut protected = BTreeSet::new();
            for (lam, _) in &blocked {
                let k = es.nearest(*lam);
                protected.extend(mode_indices(&es, k));
            }
            block_stage(
                StageInput {
                    a: &a,
                    b: &mats.b,
                    measurement: &measurement,
                    es,
                    p,
                    protected,
                },
                2,
                4,
                tol,
            )
        };
        let d = run().map_err(|e| e.stage(stage + 1))?;
        f_total += &d.f.f;
        imag_residue = imag_residue.max(d.f.imag_residue);
        any_fallback |= d.case == DesignCase::Fallback;
        modified.extend(d.modified.iter().copied());
        blocked.extend(d.blocked.iter().cloned());
        last = Some(d);
    }
    let last = last.expect("at least one stage");
    Ok(BlockingDesign {
        f: GainMatrix {
            f: f_total,
            provenance: format!("sequential blocking of {} modes", modes.len()),
            imag_residue,
        },
        lambda_p: last.lambda_p,
        p: last.p,
        modified,
        vhat_p: last.vhat_p,
        case: if any_fallback { DesignCase::Fallback } else { DesignCase::Direct },
        blocked,
        target: last.target,
    })
}

/// Makes a mode that is hidden in open loop visible at the measurement
/// nodes, keeping the spectrum. The new eigenvector maximizes its
/// measurement footprint.
pub fn enable_mode(mats: &SystemMatrices, p: usize, tol: &Tolerances) -> Result<BlockingDesign> {
    let es = prepare(mats, tol)?;
    check_index(&es, p)?;
    let lambda = es.eigenvalues[p];
    if spectral::pbh_observable(&mats.l, &mats.c, lambda, tol) {
        return Err(Error::AlreadyObservable { mode: -lambda });
    }
    let measurement = measurement_indices(&mats.c);
    let nb = null_basis(&mats.l, &mats.b, lambda, tol)?;
    let n4 = nb.n4(&measurement);
    let (sv, vr) = spectral::svd_full(&n4);
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax <= tol.rank_rtol {
        return Err(Error::EnableInfeasible { lambda });
    }
    let mut h = vr.column(0).into_owned();
    spectral::fix_phase_first(&mut h);
    if lambda.im == 0.0 {
        h.iter_mut().for_each(|z| z.im = 0.0);
    }
    let h = unit_h(&nb.n1, h).ok_or(Error::EnableInfeasible { lambda })?;
    let entry = ModalEntry {
        lambda,
        v: &nb.n1 * &h,
        z: &nb.n2 * &h,
        h: Some(h),
        modified: true,
    };
    let dictated = if lambda.im == 0.0 {
        vec![entry]
    } else {
        let v = &entry.v;
        if independence_score(&[v.clone(), v.map(|c| c.conj())]) <= tol.rank_rtol {
            return Err(Error::ConjugateDegenerate { lambda });
        }
        let mut conj = entry.conj();
        conj.lambda = lambda.conj();
        if lambda.im < 0.0 { vec![entry, conj] } else { vec![conj, entry] }
    };
    let (target, modified, case) =
        assign_around(&mats.l, &mats.b, &es, p, dictated, &BTreeSet::new(), 4, tol)?;
    let mut f = gain_from_target(&mats.l, &mats.b, &target, tol)?;
    f.provenance = "observability enabling".into();
    let vhat_p = target.entries[p].v.clone();
    Ok(BlockingDesign {
        f,
        lambda_p: lambda,
        p,
        modified,
        vhat_p: vhat_p.clone(),
        case,
        blocked: Vec::new(),
        target,
    })
}

/// Default mode choice: the real eigenvalue whose `N4` kernel is best
/// separated (largest m-th singular value of `N4`), skipping the consensus
/// eigenvalue unless nothing else is available.
pub fn select_mode(mats: &SystemMatrices, tol: &Tolerances) -> Result<usize> {
    let es = eig(&mats.l, tol)?;
    let measurement = measurement_indices(&mats.c);
    let zero_tol = tol.eig_match_atol;
    let score = |i: usize| -> Option<f64> {
        let nb = null_basis(&mats.l, &mats.b, es.eigenvalues[i], tol).ok()?;
        let n4 = nb.n4(&measurement);
        let sv = spectral::singular_values(&n4);
        kernel_vector(&n4, tol)?;
        Some(sv.get(measurement.len().saturating_sub(1)).copied().unwrap_or(0.0))
    };
    let pick = |filter: &dyn Fn(usize) -> bool| -> Option<usize> {
        (0..es.n())
            .filter(|&i| filter(i))
            .filter_map(|i| score(i).map(|s| (i, s)))
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
            .map(|(i, _)| i)
    };
    pick(&|i| es.is_real(i) && es.eigenvalues[i].norm() > zero_tol)
        .or_else(|| pick(&|i| es.is_real(i)))
        .or_else(|| pick(&|i| es.eigenvalues[i].im < 0.0))
        .ok_or(Error::NoAdmissibleMode)
}
