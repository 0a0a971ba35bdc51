//! Surgical eigenstructure assignment: closed-loop eigenvectors are taken
//! from the column spaces of `N1(lambda)`, the matching `z = N2(lambda) h`
//! fix the gain through `F V = Z`, and every eigenpair not explicitly
//! modified is carried over untouched.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{
    self, eig, independence_score, is_independent, null_basis, pbh_controllable, CMatrix,
    CVector, Tolerances,
};

/// One closed-loop eigenpair request: `(A + B F) v = lambda v` with `F v = z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalEntry {
    pub lambda: Complex64,
    pub v: CVector,
    pub z: CVector,
    /// Coordinates in the kernel basis at `lambda`, when the entry was
    /// built from one.
    pub h: Option<CVector>,
    pub modified: bool,
}

impl ModalEntry {
    /// An open-loop eigenpair kept as is (`z = 0`).
    pub fn preserved(lambda: Complex64, v: CVector, q: usize) -> Self {
        ModalEntry {
            lambda,
            v,
            z: CVector::zeros(q),
            h: None,
            modified: false,
        }
    }

    pub fn conj(&self) -> Self {
        ModalEntry {
            lambda: self.lambda.conj(),
            v: self.v.map(|c| c.conj()),
            z: self.z.map(|c| c.conj()),
            h: self.h.as_ref().map(|h| h.map(|c| c.conj())),
            modified: self.modified,
        }
    }
}

/// Complete closed-loop modal target, one entry per eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalTarget {
    pub entries: Vec<ModalEntry>,
}

impl ModalTarget {
    pub fn v(&self) -> CMatrix {
        let cols: Vec<CVector> = self.entries.iter().map(|e| e.v.clone()).collect();
        CMatrix::from_columns(&cols)
    }

    pub fn z(&self) -> CMatrix {
        let cols: Vec<CVector> = self.entries.iter().map(|e| e.z.clone()).collect();
        CMatrix::from_columns(&cols)
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.entries.iter().map(|e| e.lambda).collect()
    }

    pub fn modified(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.modified)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A slot of a partial target: either dictated or left to the completion.
#[derive(Debug, Clone)]
pub enum Slot {
    Fixed(ModalEntry),
    Free(Complex64),
}

impl Slot {
    fn lambda(&self) -> Complex64 {
        match self {
            Slot::Fixed(e) => e.lambda,
            Slot::Free(l) => *l,
        }
    }
}

/// Real state-feedback gain.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub f: DMatrix<f64>,
    pub provenance: String,
    /// Relative imaginary residue of the complex-arithmetic gain.
    pub imag_residue: f64,
}

fn normalized(v: &CVector) -> CVector {
    v / Complex64::new(v.norm(), 0.0)
}

/// Orthonormal basis of the span of `cols`. With `real_span`, the span of
/// their real and imaginary parts is used instead so the basis is real.
fn span_basis(cols: &[CVector], n: usize, real_span: bool, rtol: f64) -> CMatrix {
    let mut gen: Vec<CVector> = Vec::new();
    for c in cols {
        if real_span {
            gen.push(c.map(|z| Complex64::new(z.re, 0.0)));
            gen.push(c.map(|z| Complex64::new(z.im, 0.0)));
        } else {
            gen.push(c.clone());
        }
    }
    gen.retain(|g| g.norm() > 0.0);
    if gen.is_empty() {
        return CMatrix::zeros(n, 0);
    }
    let m = CMatrix::from_columns(&gen);
    let svd = m.svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rtol * smax)
        .collect();
    let mut out = CMatrix::zeros(n, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &u.column(src));
    }
    out
}

fn find_partner(lambdas: &[Complex64], i: usize, atol: f64) -> Option<usize> {
    let target = lambdas[i].conj();
    (0..lambdas.len())
        .filter(|&j| j != i)
        .filter(|&j| (lambdas[j] - target).norm() <= atol)
        .min_by(|&a, &b| {
            (lambdas[a] - target)
                .norm()
                .total_cmp(&(lambdas[b] - target).norm())
        })
}

/// Fills every free slot with an eigenvector from the column space of
/// `N1(lambda)` so that the full set is independent.
///
/// Slots are processed in order. Each candidate (the columns of `N1` plus
/// the direction of `N1`'s column space farthest from the vectors already
/// chosen) is scored by the conditioning of the partial stack, and the best
/// one wins. Conjugate free slots receive conjugate vectors. Fixed slots are
/// passed through unchanged.
pub fn complete_target(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    slots: Vec<Slot>,
    tol: &Tolerances,
) -> Result<ModalTarget> {
    let n = a.nrows();
    let q = b.ncols();
    if slots.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} slots for a state of dimension {n}",
            slots.len()
        )));
    }
    let lambdas: Vec<Complex64> = slots.iter().map(Slot::lambda).collect();
    let mut done: Vec<Option<ModalEntry>> = slots
        .iter()
        .map(|s| match s {
            Slot::Fixed(e) => Some(e.clone()),
            Slot::Free(_) => None,
        })
        .collect();

    for i in 0..n {
        if done[i].is_some() {
            continue;
        }
        let lambda = lambdas[i];
        let partner = if lambda.im != 0.0 {
            let Some(j) = find_partner(&lambdas, i, tol.eig_match_atol) else {
                return Err(Error::CompletionFailed(format!(
                    "eigenvalue {lambda} has no conjugate in the target set"
                )));
            };
            if let Some(fixed) = &done[j] {
                // conjugate already dictated
                let mut e = fixed.conj();
                e.lambda = lambda;
                done[i] = Some(e);
                continue;
            }
            Some(j)
        } else {
            None
        };

        let current: Vec<CVector> = done.iter().flatten().map(|e| normalized(&e.v)).collect();
        let nb = null_basis(a, b, lambda, tol)?;
        let mut candidates: Vec<CVector> = (0..q)
            .map(|j| {
                let mut h = CVector::zeros(q);
                h[j] = Complex64::new(1.0, 0.0);
                h
            })
            .collect();
        let basis = span_basis(&current, n, lambda.im == 0.0, tol.rank_rtol);
        let residual = &nb.n1 - &basis * (basis.adjoint() * &nb.n1);
        let (sv, vr) = spectral::svd_full(&residual);
        if sv.first().is_some_and(|&s| s > 0.0) {
            let mut g = vr.column(0).into_owned();
            if lambda.im == 0.0 {
                // the residual is real here; drop rounding noise in the phase
                spectral::fix_phase_first(&mut g);
                g.iter_mut().for_each(|z| z.im = 0.0);
            }
            candidates.push(g);
        }

        let mut best: Option<(f64, ModalEntry)> = None;
        for h in candidates {
            let v = &nb.n1 * &h;
            let nv = v.norm();
            if nv <= 1e-12 {
                continue;
            }
            let scale = Complex64::new(1.0 / nv, 0.0);
            let h = h * scale;
            let v = v * scale;
            let z = &nb.n2 * &h;
            let mut stack = current.clone();
            stack.push(v.clone());
            if partner.is_some() {
                stack.push(v.map(|c| c.conj()));
            }
            let score = independence_score(&stack);
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((
                    score,
                    ModalEntry {
                        lambda,
                        v,
                        z,
                        h: Some(h),
                        modified: true,
                    },
                ));
            }
        }
        let Some((score, entry)) = best else {
            return Err(Error::CompletionFailed(format!(
                "N1({lambda}) has no usable direction"
            )));
        };
        if score <= tol.rank_rtol {
            return Err(Error::CompletionFailed(format!(
                "no candidate at {lambda} keeps the modal set independent"
            )));
        }
        if let Some(j) = partner {
            let mut c = entry.conj();
            c.lambda = lambdas[j];
            done[j] = Some(c);
        }
        done[i] = Some(entry);
    }

    let entries: Vec<ModalEntry> = done.into_iter().map(|e| e.expect("all slots filled")).collect();
    let cols: Vec<CVector> = entries.iter().map(|e| e.v.clone()).collect();
    if !is_independent(&cols, tol)? {
        return Err(Error::CompletionFailed(
            "completed modal matrix is singular".into(),
        ));
    }
    Ok(ModalTarget { entries })
}

/// Real gain with `F v_i = z_i` for every target entry.
///
/// Conjugate column pairs are replaced by their real and imaginary parts so
/// the solve runs in real arithmetic; the complex solve is kept as a
/// cross-check on the imaginary residue. The result is checked against
/// `(A + B F) v_i = lambda_i v_i`.
pub fn gain_from_target(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    target: &ModalTarget,
    tol: &Tolerances,
) -> Result<GainMatrix> {
    let n = a.nrows();
    let q = b.ncols();
    if target.entries.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} target entries for dimension {n}",
            target.entries.len()
        )));
    }
    let v = target.v();
    let z = target.z();
    let cols: Vec<CVector> = target.entries.iter().map(|e| e.v.clone()).collect();
    if !is_independent(&cols, tol)? {
        return Err(Error::SingularModalMatrix);
    }

    let lambdas = target.eigenvalues();
    let mut vmod = DMatrix::<f64>::zeros(n, n);
    let mut zmod = DMatrix::<f64>::zeros(q, n);
    let mut used = vec![false; n];
    let mut col = 0;
    for i in 0..n {
        if used[i] {
            continue;
        }
        let e = &target.entries[i];
        if e.lambda.im == 0.0 {
            vmod.set_column(col, &e.v.map(|c| c.re));
            zmod.set_column(col, &e.z.map(|c| c.re));
            used[i] = true;
            col += 1;
        } else {
            let Some(j) = find_partner(&lambdas, i, tol.eig_match_atol).filter(|&j| !used[j]) else {
                return Err(Error::CompletionFailed(format!(
                    "target eigenvalue {} has no conjugate partner",
                    e.lambda
                )));
            };
            vmod.set_column(col, &e.v.map(|c| c.re));
            vmod.set_column(col + 1, &e.v.map(|c| c.im));
            zmod.set_column(col, &e.z.map(|c| c.re));
            zmod.set_column(col + 1, &e.z.map(|c| c.im));
            used[i] = true;
            used[j] = true;
            col += 2;
        }
    }
    let ft = vmod
        .transpose()
        .lu()
        .solve(&zmod.transpose())
        .ok_or(Error::SingularModalMatrix)?;
    let f = ft.transpose();
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularModalMatrix);
    }

    let fct = v
        .transpose()
        .lu()
        .solve(&z.transpose())
        .ok_or(Error::SingularModalMatrix)?;
    let fc_norm = fct.norm();
    let imag_residue = if fc_norm > 0.0 {
        fct.map(|c| c.im).norm() / fc_norm
    } else {
        0.0
    };
    if imag_residue > tol.residual_rtol {
        return Err(Error::ResidualTooLarge(format!(
            "complex gain has relative imaginary residue {imag_residue:e}"
        )));
    }

    let closed = spectral::to_complex(&(a + b * &f));
    let bound = tol.residual_rtol * a.norm().max(1.0);
    for e in &target.entries {
        let r = (&closed * &e.v - &e.v * e.lambda).norm() / e.v.norm();
        if r > bound {
            return Err(Error::ResidualTooLarge(format!(
                "eigenpair at {} has residual {r:e} (bound {bound:e})",
                e.lambda
            )));
        }
    }
    Ok(GainMatrix {
        f,
        provenance: "eigenstructure assignment F = Z V^-1".into(),
        imag_residue,
    })
}

fn check_self_conjugate(targets: &[Complex64], atol: f64) -> Result<()> {
    for (i, t) in targets.iter().enumerate() {
        if t.im != 0.0 && find_partner(targets, i, atol).is_none() {
            return Err(Error::Validation {
                path: format!("targets[{i}]"),
                msg: format!("{t} has no conjugate in the target list"),
            });
        }
    }
    Ok(())
}

/// Gain placing the spectrum of `A + B F` at `targets`.
///
/// Targets that coincide with an open-loop eigenvalue keep its eigenvector
/// (and contribute nothing to the gain); the rest receive eigenvectors from
/// [`complete_target`].
pub fn place_eigenvalues(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    targets: &[Complex64],
    tol: &Tolerances,
) -> Result<GainMatrix> {
    let n = a.nrows();
    let q = b.ncols();
    if targets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for dimension {n}",
            targets.len()
        )));
    }
    check_self_conjugate(targets, tol.eig_match_atol)?;
    let gap = tol.distinct_gap(a.norm());
    for i in 0..n {
        for j in (i + 1)..n {
            if (targets[i] - targets[j]).norm() <= gap {
                return Err(Error::NotDistinct);
            }
        }
    }
    if !pbh_controllable(a, b, tol)? {
        return Err(Error::Uncontrollable);
    }

    let open = eig(a, tol)?;
    let mut slots = Vec::with_capacity(n);
    let mut reused = false;
    let mut taken = vec![false; n];
    for &t in targets {
        let hit = open.distinct.then(|| {
            (0..n)
                .filter(|&i| !taken[i])
                .find(|&i| (open.eigenvalues[i] - t).norm() <= tol.eig_match_atol)
        });
        match hit.flatten() {
            Some(i) => {
                taken[i] = true;
                reused = true;
                slots.push(Slot::Fixed(ModalEntry::preserved(
                    open.eigenvalues[i],
                    open.vector(i),
                    q,
                )));
            }
            None => slots.push(Slot::Free(t)),
        }
    }

    let target = match complete_target(a, b, slots, tol) {
        Ok(t) => t,
        Err(Error::CompletionFailed(_)) if reused => {
            let free = targets.iter().map(|&t| Slot::Free(t)).collect();
            complete_target(a, b, free, tol)?
        }
        Err(e) => return Err(e),
    };
    let mut gain = gain_from_target(a, b, &target, tol)?;
    gain.provenance = "eigenvalue placement".into();

    let achieved = spectral::eigenvalues(&(a + b * &gain.f))?;
    let dist = spectral::spectrum_distance(targets, &achieved);
    // eigenpair residuals are already bounded; eigenvalues of a placed,
    // strongly non-normal closed loop are only accurate relative to their size
    let scale = targets.iter().map(|t| t.norm()).fold(1.0, f64::max);
    if dist > tol.eig_match_atol * scale {
        return Err(Error::ResidualTooLarge(format!(
            "placed spectrum misses targets by {dist:e}"
        )));
    }
    Ok(gain)
}
