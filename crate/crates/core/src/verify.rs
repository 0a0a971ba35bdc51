//! Independent checks of a finished design against what it claims.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::blocker::BlockingDesign;
use crate::error::{Error, Result};
use crate::netmodel::SystemMatrices;
use crate::spectral::{self, CVector, Eigenstructure, Tolerances};

/// Stability of `x' = -(L + B F) x`. Unstable modes are listed as
/// eigenvalues of `-(L + B F)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "modes", rename_all = "snake_case")]
pub enum Stability {
    Strict,
    Marginal,
    Unstable(Vec<Complex64>),
}

/// Properties a design promises.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Claims {
    /// Modes of `-(L + B F)` that must be hidden from the measurements.
    pub unobservable: Vec<Complex64>,
    /// Modes of `-(L + B F)` that must be visible.
    pub observable: Vec<Complex64>,
    /// Expected spectrum of `L + B F`.
    pub spectrum: Option<Vec<Complex64>>,
    /// Vectors the gain must annihilate, keyed by 0-based eigenvalue index.
    pub preserved: Vec<(usize, Vec<Complex64>)>,
    /// 0-based indices whose eigenvectors the design changed.
    pub modified: Vec<usize>,
    /// Require strict or marginal stability.
    pub stable: bool,
    /// Require strict stability.
    pub strict: bool,
    /// 0-based state columns of `F` that must be exactly zero.
    pub zero_columns: Vec<usize>,
}

impl Claims {
    /// Claims of a blocking design on the open loop described by `open`:
    /// hidden modes, unchanged spectrum, and every eigenvector outside
    /// `modified` annihilated by the gain.
    pub fn blocking(design: &BlockingDesign, open: &Eigenstructure) -> Self {
        let mut unobservable = Vec::new();
        for (lambda, _) in &design.blocked {
            unobservable.push(-lambda);
            if lambda.im != 0.0 {
                unobservable.push(-lambda.conj());
            }
        }
        let preserved = (0..open.n())
            .filter(|i| !design.modified.contains(i))
            .map(|i| (i, open.vector(i).iter().copied().collect()))
            .collect();
        Claims {
            unobservable,
            spectrum: Some(open.eigenvalues.clone()),
            preserved,
            modified: design.modified.iter().copied().collect(),
            ..Claims::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tolerances: Tolerances,
    /// Eigenvalues of `-(L + B F)` at which the PBH test fails.
    pub unobservable_modes: Vec<Complex64>,
    pub obs_matrix_rank: usize,
    pub n: usize,
    /// (expected, achieved, distance) triples for the eigenvalues of `L + B F`.
    pub open_vs_closed_eigs: Vec<(Complex64, Complex64, f64)>,
    pub preserved_count: usize,
    pub preserved_max_residual: f64,
    /// 1-based.
    pub modified_vectors: Vec<usize>,
    pub stability: Stability,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Orthonormal basis of the observable subspace of `(C, A)`, built from
/// `C^T` by repeated multiplication with `A^T`, re-orthogonalizing every
/// block.
fn observable_basis(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: &Tolerances) -> DMatrix<f64> {
    let n = a.nrows();
    let at = a.transpose();
    let thresh = tol.rank_rtol * a.norm().max(1.0);
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut block: Vec<nalgebra::DVector<f64>> = c.row_iter().map(|r| r.transpose()).collect();
    let mut first = true;
    while !block.is_empty() && basis.len() < n {
        let mut next = Vec::new();
        for mut v in block {
            // rows of C are unit indicators; later blocks are images of unit vectors
            let scale = if first { v.norm().max(1.0) } else { 1.0 };
            for _ in 0..2 {
                for b in &basis {
                    let d = b.dot(&v);
                    v -= b * d;
                }
            }
            let nv = v.norm();
            if nv > thresh * scale {
                let u = v / nv;
                basis.push(u.clone());
                next.push(&at * &u);
                if basis.len() == n {
                    break;
                }
            }
        }
        block = next;
        first = false;
    }
    if basis.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&basis)
    }
}

/// Rank of the observability matrix of `(C, -(L + B F))`.
pub fn observability_rank(mats: &SystemMatrices, f: &DMatrix<f64>, tol: &Tolerances) -> Result<usize> {
    let a = mats.closed_loop(f)?;
    Ok(observable_basis(&a, &mats.c, tol).ncols())
}

/// Orthonormal basis (columns) of the unobservable subspace of
/// `(C, -(L + B F))`.
pub fn unobservable_subspace(mats: &SystemMatrices, f: &DMatrix<f64>, tol: &Tolerances) -> Result<DMatrix<f64>> {
    let a = mats.closed_loop(f)?;
    let n = a.nrows();
    let obs = observable_basis(&a, &mats.c, tol);
    let k = obs.ncols();
    if k == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    if k == n {
        return Ok(DMatrix::zeros(n, 0));
    }
    let (_, v) = spectral::svd_full_real(&obs.transpose());
    Ok(v.columns(k, n - k).into_owned())
}

pub(crate) fn classify(closed: &[Complex64], gap: f64) -> Stability {
    let bad: Vec<Complex64> = closed.iter().filter(|z| z.re <= gap).copied().collect();
    if bad.is_empty() {
        Stability::Strict
    } else if bad.len() == 1 && bad[0].norm() <= gap {
        Stability::Marginal
    } else {
        Stability::Unstable(bad.iter().map(|z| -z).collect())
    }
}

/// Checks `F` on `mats` against `claims`.
pub fn verify_design(
    mats: &SystemMatrices,
    f: &DMatrix<f64>,
    claims: &Claims,
    tol: &Tolerances,
) -> Result<VerificationReport> {
    mats.check_dims()?;
    let a = mats.closed_loop(f)?;
    let n = a.nrows();
    let closed = spectral::eigenvalues(&a)?;
    let gap = tol.distinct_gap(a.norm());

    let mut unobservable_modes = Vec::new();
    for mu in &closed {
        if unobservable_modes.iter().any(|u: &Complex64| (u + mu).norm() <= gap) {
            continue;
        }
        if !spectral::pbh_observable(&a, &mats.c, *mu, tol) {
            unobservable_modes.push(-mu);
        }
    }
    let obs_matrix_rank = observable_basis(&a, &mats.c, tol).ncols();

    let mut checks = Vec::new();
    let mut check = |name: &str, pass: bool, detail: String| {
        checks.push(Check {
            name: name.into(),
            pass,
            detail,
        })
    };

    if !claims.unobservable.is_empty() {
        for mode in &claims.unobservable {
            let hit = unobservable_modes
                .iter()
                .any(|u| (u - mode).norm() <= tol.eig_match_atol);
            check(
                "pbh_unobservable",
                hit,
                format!("PBH at {}{:+}i", mode.re, mode.im),
            );
        }
        let bound = n.saturating_sub(claims.unobservable.len());
        check(
            "obs_matrix_rank",
            obs_matrix_rank <= bound,
            format!("rank {obs_matrix_rank}, at most {bound} claimed"),
        );
    }

    for mode in &claims.observable {
        let ok = spectral::pbh_observable(&a, &mats.c, -mode, tol);
        check("pbh_observable", ok, format!("PBH at {}{:+}i", mode.re, mode.im));
    }

    let open_vs_closed_eigs = match &claims.spectrum {
        Some(expected) => {
            let dist = spectral::spectrum_distance(expected, &closed);
            check(
                "spectrum",
                dist <= tol.eig_match_atol,
                format!("max eigenvalue distance {dist:e}"),
            );
            spectral::match_spectra(expected, &closed)
        }
        None => Vec::new(),
    };

    let f_norm = f.norm();
    let mut preserved_max_residual: f64 = 0.0;
    for (i, v) in &claims.preserved {
        if v.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "preserved vector {} has length {}",
                i + 1,
                v.len()
            )));
        }
        let v = CVector::from_vec(v.clone());
        let r = (spectral::to_complex(f) * &v).norm() / v.norm();
        preserved_max_residual = preserved_max_residual.max(r);
    }
    if !claims.preserved.is_empty() {
        let bound = tol.residual_rtol * f_norm.max(1.0);
        check(
            "preserved_vectors",
            preserved_max_residual <= bound,
            format!("max |F v| = {preserved_max_residual:e} (bound {bound:e})"),
        );
    }

    let stability = classify(&closed, tol.distinct_gap(mats.l.norm()));
    if claims.strict {
        check("strict_stability", stability == Stability::Strict, format!("{stability:?}"));
    } else if claims.stable {
        check(
            "stability",
            !matches!(stability, Stability::Unstable(_)),
            format!("{stability:?}"),
        );
    }

    for &col in &claims.zero_columns {
        if col >= n {
            return Err(Error::DimensionMismatch(format!("zero column {} of {n}", col + 1)));
        }
        let max = f.column(col).amax();
        check("zero_column", max == 0.0, format!("column {} max |F| = {max:e}", col + 1));
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerificationReport {
        tolerances: *tol,
        unobservable_modes,
        obs_matrix_rank,
        n,
        open_vs_closed_eigs,
        preserved_count: claims.preserved.len(),
        preserved_max_residual,
        modified_vectors: claims.modified.iter().map(|i| i + 1).collect(),
        stability,
        checks,
        pass,
    })
}

impl VerificationReport {
    /// One-line summary of the failed checks.
    pub fn failure_summary(&self) -> String {
        if self.unobservable_modes.is_empty() && self.checks.iter().any(|c| c.name == "pbh_unobservable") {
            return "observable at all modes".into();
        }
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}
