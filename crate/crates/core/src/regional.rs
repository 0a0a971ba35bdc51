//! Sparse and regional designs: blocking at a vertex cutset instead of the
//! measurement nodes, feedback restricted to an accessible region, and the
//! eigenvalue shift that keeps the regional closed loop stable.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::blocker::{algorithm2, BlockingDesign, ModeChoice};
use crate::eigassign::place_eigenvalues;
use crate::error::{Error, Result};
use crate::netmodel::{build_matrices, NetworkModel, SystemMatrices};
use crate::spectral::{self, eig, pbh_controllable, CVector, Tolerances};
use crate::topology::{
    grounded_spectrum_gap, induced_subgraph, min_vertex_cut_within, partition_blocks, submatrix,
    CutPartition, Part,
};
use crate::verify::{classify, Stability};

/// Default number of shift doublings.
pub const MAX_ESCALATIONS: usize = 20;

#[derive(Debug, Clone)]
pub struct CutsetDesign {
    pub blocking: BlockingDesign,
    pub cut: CutPartition,
}

#[derive(Debug, Clone)]
pub struct RegionalDesign {
    /// Full-coordinate gain; inaccessible columns are zero.
    pub f: DMatrix<f64>,
    /// Gain on the accessible model, `ftilde1 + ftilde2`.
    pub ftilde: DMatrix<f64>,
    /// Eigenvalue-shift part (zero without a shift).
    pub ftilde1: DMatrix<f64>,
    /// Blocking part.
    pub ftilde2: DMatrix<f64>,
    /// Shift threshold (0 without a shift).
    pub d: f64,
    pub cut: CutPartition,
    pub lambda_p: Complex64,
    /// Blocking vector in full coordinates (zero outside the region).
    pub vhat_p: CVector,
    /// Accessible-model design that produced `ftilde2`.
    pub blocking: BlockingDesign,
    /// Original vertex id of each accessible-model vertex.
    pub accessible: Vec<usize>,
    pub stability: Stability,
    pub stable: bool,
    /// Shift rounds used (1 for the unshifted design).
    pub iterations: usize,
}

/// Picks the index to block: the explicit choice, or the admissible
/// eigenvalues in order of decreasing real part, first design that works.
fn block_admissible(
    mats: &SystemMatrices,
    choice: Option<ModeChoice>,
    admissible: &dyn Fn(Complex64) -> Result<bool>,
    tol: &Tolerances,
) -> Result<BlockingDesign> {
    let es = eig(&mats.l, tol)?;
    if let Some(choice) = choice {
        let p = choice.resolve(&es)?;
        if !admissible(es.eigenvalues[p])? {
            return Err(Error::Validation {
                path: "mode".into(),
                msg: format!(
                    "eigenvalue {} is shared with the grounded block behind the cut",
                    es.eigenvalues[p]
                ),
            });
        }
        return algorithm2(mats, p, tol);
    }
    let mut order: Vec<usize> = Vec::new();
    for i in 0..es.n() {
        if es.eigenvalues[i].im <= 0.0 && admissible(es.eigenvalues[i])? {
            order.push(i);
        }
    }
    if order.is_empty() {
        return Err(Error::NoAdmissibleMode);
    }
    order.sort_by(|&a, &b| {
        es.eigenvalues[b]
            .re
            .total_cmp(&es.eigenvalues[a].re)
            .then(a.cmp(&b))
    });
    let mut first_err = None;
    for p in order {
        match algorithm2(mats, p, tol) {
            Ok(d) => return Ok(d),
            Err(e @ (Error::Uncontrollable | Error::RepeatedEigenvalues { .. })) => return Err(e),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or(Error::NoAdmissibleMode))
}

/// Blocks observability at a minimum vertex cut between actuation and
/// measurement vertices, which hides the mode from every measurement node
/// behind the cut as well.
pub fn cutset_design(model: &NetworkModel, choice: Option<ModeChoice>, tol: &Tolerances) -> Result<CutsetDesign> {
    tol.validate()?;
    let mats = build_matrices(model)?;
    if !pbh_controllable(&mats.l, &mats.b, tol)? {
        return Err(Error::Uncontrollable);
    }
    let cut = min_vertex_cut_within(&model.graph, &model.actuation, &model.measurement, None);
    let blocks = partition_blocks(&mats.l, &cut)?;
    let l22 = blocks.block(Part::V2, Part::V2);
    let cut_mats = SystemMatrices::from_indices(mats.l.clone(), &model.actuation, &cut.vcut);
    let admissible = |lambda: Complex64| grounded_spectrum_gap(&l22, lambda, tol);
    let mut blocking = block_admissible(&cut_mats, choice, &admissible, tol)?;
    blocking.f.provenance = format!("cutset blocking ({})", blocking.f.provenance);
    Ok(CutsetDesign { blocking, cut })
}

struct Region {
    mats: SystemMatrices,
    cut: CutPartition,
    /// new id -> original id
    map: Vec<usize>,
    accessible_mats: SystemMatrices,
    /// `L~` restricted to the accessible part of `v2`.
    l33: DMatrix<f64>,
}

fn region(model: &NetworkModel, tol: &Tolerances) -> Result<Region> {
    tol.validate()?;
    let mats = build_matrices(model)?;
    let accessible: Vec<usize> = match &model.accessible {
        Some(acc) => acc.clone(),
        None => (0..model.n()).collect(),
    };
    let cut = min_vertex_cut_within(&model.graph, &model.actuation, &model.measurement, Some(&accessible));
    partition_blocks(&mats.l, &cut)?;
    let (sub, map) = induced_subgraph(&model.graph, &accessible)?;
    if !cut.v3.is_empty() && !sub.is_strongly_connected() {
        return Err(Error::AccessibleNotStronglyConnected);
    }
    let local = |ids: &[usize]| -> Vec<usize> {
        ids.iter()
            .map(|v| map.binary_search(v).expect("vertex is accessible"))
            .collect()
    };
    let lt = sub.laplacian();
    let accessible_mats = SystemMatrices::from_indices(lt.clone(), &local(&model.actuation), &local(&cut.vcut));
    if !pbh_controllable(&accessible_mats.l, &accessible_mats.b, tol)? {
        return Err(Error::Uncontrollable);
    }
    let v3 = local(&cut.v3);
    let l33 = submatrix(&lt, &v3, &v3);
    Ok(Region {
        mats,
        cut,
        map,
        accessible_mats,
        l33,
    })
}

impl Region {
    fn pad(&self, ftilde: &DMatrix<f64>) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(ftilde.nrows(), self.mats.n());
        for (j, &v) in self.map.iter().enumerate() {
            f.set_column(v, &ftilde.column(j));
        }
        f
    }

    fn pad_vector(&self, v: &CVector) -> CVector {
        let mut out = CVector::zeros(self.mats.n());
        for (j, &k) in self.map.iter().enumerate() {
            out[k] = v[j];
        }
        out
    }

    fn admissible(&self, tol: &Tolerances) -> impl Fn(Complex64) -> Result<bool> + '_ {
        let tol = *tol;
        move |lambda| grounded_spectrum_gap(&self.l33, lambda, &tol)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        ftilde1: DMatrix<f64>,
        blocking: BlockingDesign,
        d: f64,
        iterations: usize,
        tol: &Tolerances,
    ) -> Result<RegionalDesign> {
        let ftilde2 = blocking.f.f.clone();
        let ftilde = &ftilde1 + &ftilde2;
        let f = self.pad(&ftilde);
        let closed = self.mats.closed_loop(&f)?;
        let lambda_p = blocking.lambda_p;
        let vhat_p = self.pad_vector(&blocking.vhat_p);

        // the padded blocking vector must stay an eigenvector of the full loop
        let scale = tol.residual_rtol * self.mats.l.norm().max(1.0) * vhat_p.norm();
        let residual = (spectral::to_complex(&closed) * &vhat_p - &vhat_p * lambda_p).norm();
        let seen = (spectral::to_complex(&self.mats.c) * &vhat_p).norm();
        if residual > scale || seen > tol.residual_rtol * vhat_p.norm() {
            return Err(Error::ResidualTooLarge(format!(
                "padded blocking vector: eigen-residual {residual:e}, measured part {seen:e}"
            )));
        }

        let spectrum = spectral::eigenvalues(&closed)?;
        // margin is set by the network, not by the size of the gain
        let stability = classify(&spectrum, tol.distinct_gap(self.mats.l.norm()));
        let stable = !matches!(stability, Stability::Unstable(_));
        Ok(RegionalDesign {
            f,
            ftilde,
            ftilde1,
            ftilde2,
            d,
            cut: self.cut.clone(),
            lambda_p,
            vhat_p,
            blocking,
            accessible: self.map.clone(),
            stability,
            stable,
            iterations,
        })
    }
}

/// Regional feedback without an eigenvalue shift: block at the cut inside
/// the accessible subgraph and pad the gain with zeros. The result may be
/// unstable; `stable` reports it.
pub fn regional_design(model: &NetworkModel, choice: Option<ModeChoice>, tol: &Tolerances) -> Result<RegionalDesign> {
    let reg = region(model, tol)?;
    let admissible = reg.admissible(tol);
    let mut blocking = block_admissible(&reg.accessible_mats, choice, &admissible, tol)?;
    blocking.f.provenance = format!("regional blocking ({})", blocking.f.provenance);
    let zero = DMatrix::zeros(reg.accessible_mats.q(), reg.accessible_mats.n());
    reg.finish(zero, blocking, 0.0, 1, tol)
}

/// Targets for the shift: eigenvalues with real part at most `d` move to
/// `d + 1, d + 2, ...`, nudged clear of the kept eigenvalues and of
/// `avoid`.
pub fn shift_targets(spectrum: &[Complex64], d: f64, avoid: &[Complex64]) -> Vec<Complex64> {
    const NUDGE: f64 = 0.5;
    let kept: Vec<Complex64> = spectrum.iter().filter(|z| z.re > d).copied().collect();
    let mut out = kept.clone();
    let mut next = d + 1.0;
    for _ in spectrum.iter().filter(|z| z.re <= d) {
        loop {
            let t = Complex64::new(next, 0.0);
            let clash = kept
                .iter()
                .chain(avoid)
                .chain(out.iter())
                .any(|z| (z - t).norm() < NUDGE);
            if !clash {
                break;
            }
            next += NUDGE;
        }
        out.push(Complex64::new(next, 0.0));
        next += 1.0;
    }
    out
}

/// Default shift threshold: one more than the largest diagonal entry of `L`.
pub fn default_shift(l: &DMatrix<f64>) -> f64 {
    1.0 + (0..l.nrows()).map(|i| l[(i, i)]).fold(0.0, f64::max)
}

/// Regional feedback that first pushes the accessible spectrum past `d`,
/// then blocks. `d` doubles until the full closed loop is strictly stable.
pub fn regional_stable_design(
    model: &NetworkModel,
    d0: Option<f64>,
    choice: Option<ModeChoice>,
    tol: &Tolerances,
) -> Result<RegionalDesign> {
    regional_stable_design_with(model, d0, choice, MAX_ESCALATIONS, tol)
}

/// [`regional_stable_design`] with an explicit doubling budget.
pub fn regional_stable_design_with(
    model: &NetworkModel,
    d0: Option<f64>,
    choice: Option<ModeChoice>,
    max_iters: usize,
    tol: &Tolerances,
) -> Result<RegionalDesign> {
    let reg = region(model, tol)?;
    let mut d = match d0 {
        Some(d) if d.is_finite() && d >= 0.0 => d,
        Some(d) => {
            return Err(Error::Validation {
                path: "d0".into(),
                msg: format!("shift must be finite and nonnegative, got {d}"),
            })
        }
        None => default_shift(&reg.mats.l),
    };
    let lt = reg.accessible_mats.l.clone();
    let bt = reg.accessible_mats.b.clone();
    let avoid = spectral::eigenvalues(&reg.l33)?;
    let open = spectral::eigenvalues(&lt)?;
    let admissible = reg.admissible(tol);
    let mut last_spectrum = Vec::new();
    for iter in 0..=max_iters {
        let targets = shift_targets(&open, d, &avoid);
        let shift = place_eigenvalues(&lt, &bt, &targets, tol)?;
        let shifted = reg.accessible_mats.with_state_matrix(&lt + &bt * &shift.f);
        let mut blocking = block_admissible(&shifted, choice, &admissible, tol)?;
        blocking.f.provenance = format!("regional blocking after shift past {d} ({})", blocking.f.provenance);
        let design = reg.finish(shift.f, blocking, d, iter + 1, tol)?;
        if design.stability == Stability::Strict {
            return Ok(design);
        }
        last_spectrum = spectral::eigenvalues(&reg.mats.closed_loop(&design.f)?)?;
        if iter < max_iters {
            d *= 2.0;
        }
    }
    Err(Error::EscalationExhausted {
        iters: max_iters,
        d,
        spectrum: last_spectrum,
    })
}
