//! Numerical substrate: eigendecomposition with conjugate repair, kernels of
//! `S(lambda) = [(L - lambda I) B]`, rank and independence tests, and the
//! PBH controllability / observability tests.
//!
//! Every rank decision goes through singular values with the single relative
//! cutoff [`Tolerances::rank_rtol`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Numeric knobs shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative singular-value cutoff for rank decisions.
    pub rank_rtol: f64,
    /// Absolute tolerance when comparing eigenvalues.
    pub eig_match_atol: f64,
    /// Relative tolerance on equation residuals.
    pub residual_rtol: f64,
    /// Minimum eigenvalue gap, relative to the Frobenius norm of the matrix
    /// being classified (never below an absolute scale of 1).
    pub distinct_sep: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_rtol: 1e-9,
            eig_match_atol: 1e-6,
            residual_rtol: 1e-8,
            distinct_sep: 1e-7,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rank_rtol", self.rank_rtol),
            ("eig_match_atol", self.eig_match_atol),
            ("residual_rtol", self.residual_rtol),
            ("distinct_sep", self.distinct_sep),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Validation {
                    path: format!("tolerances.{name}"),
                    msg: format!("must be strictly positive, got {value}"),
                });
            }
        }
        Ok(())
    }

    /// Absolute eigenvalue gap for a matrix of the given norm.
    pub fn distinct_gap(&self, norm: f64) -> f64 {
        self.distinct_sep * norm.max(1.0)
    }
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn cvec_from_real(v: &DVector<f64>) -> CVector {
    v.map(|x| Complex64::new(x, 0.0))
}

pub fn is_real_matrix(m: &CMatrix) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

pub(crate) fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}

/// Singular values (descending) and the full set of right singular vectors.
/// Wide matrices are padded with zero rows so the kernel directions are
/// returned as well.
pub(crate) fn svd_full(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return (Vec::new(), CMatrix::identity(c, c));
    }
    let padded = if r < c {
        let mut p = CMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v = svd.v_t.expect("v requested").adjoint();
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| sv[i]).collect();
    let mut vs = CMatrix::zeros(c, order.len());
    for (dst, &src) in order.iter().enumerate() {
        vs.set_column(dst, &v.column(src));
    }
    (sorted, vs)
}

/// Real-arithmetic counterpart of [`svd_full`].
pub(crate) fn svd_full_real(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return (Vec::new(), DMatrix::identity(c, c));
    }
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v = svd.v_t.expect("v requested").transpose();
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| sv[i]).collect();
    let mut vs = DMatrix::zeros(c, order.len());
    for (dst, &src) in order.iter().enumerate() {
        vs.set_column(dst, &v.column(src));
    }
    (sorted, vs)
}

/// Singular values only, descending.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn rank_of(sv: &[f64], rtol: f64) -> usize {
    match sv.first() {
        Some(&max) if max > 0.0 => sv.iter().filter(|&&s| s > rtol * max).count(),
        _ => 0,
    }
}

/// Numerical rank under the relative cutoff `rtol`.
pub fn rank(m: &CMatrix, rtol: f64) -> usize {
    rank_of(&singular_values(m), rtol)
}

pub fn rank_real(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    rank_of(&sv, rtol)
}

/// Rotates `v` so that its first non-negligible component is real and
/// positive.
pub(crate) fn fix_phase_first(v: &mut CVector) {
    let scale = v.norm();
    if scale == 0.0 {
        return;
    }
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-10 * scale).copied() {
        let phase = z.conj() / z.norm();
        *v *= phase;
    }
}

/// Rotates `v` so that its largest-magnitude component is real and positive.
pub(crate) fn fix_phase_largest(v: &mut CVector) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // strict comparison with a small slack keeps the first of near ties
        if z.norm() > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = z.norm();
        }
    }
    if best_mag > 0.0 {
        let z = v[best];
        let phase = z.conj() / z.norm();
        *v *= phase;
    }
}

/// Eigenvalues and eigenvectors of a real square matrix.
#[derive(Debug, Clone)]
pub struct Eigenstructure {
    /// Ordered by real part, then imaginary part; conjugate pairs adjacent
    /// with the negative imaginary part first.
    pub eigenvalues: Vec<Complex64>,
    /// Column `i` is the unit-norm eigenvector of `eigenvalues[i]`.
    pub v0: CMatrix,
    pub all_real: bool,
    pub distinct: bool,
}

impl Eigenstructure {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_real(&self, i: usize) -> bool {
        self.eigenvalues[i].im == 0.0
    }

    /// Index of the conjugate partner of a complex eigenvalue.
    pub fn partner(&self, i: usize) -> Option<usize> {
        let lam = self.eigenvalues[i];
        if lam.im == 0.0 {
            return None;
        }
        if lam.im < 0.0 {
            Some(i + 1)
        } else {
            Some(i - 1)
        }
    }

    pub fn vector(&self, i: usize) -> CVector {
        self.v0.column(i).into_owned()
    }

    /// Index of the eigenvalue closest to `value`.
    pub fn nearest(&self, value: Complex64) -> usize {
        let mut best = 0;
        for (i, lam) in self.eigenvalues.iter().enumerate() {
            if (lam - value).norm() < (self.eigenvalues[best] - value).norm() {
                best = i;
            }
        }
        best
    }

    /// Clusters of eigenvalues closer than `gap`.
    pub fn clusters(&self, gap: f64) -> Vec<Complex64> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                if (self.eigenvalues[i] - self.eigenvalues[j]).norm() <= gap {
                    out.push(self.eigenvalues[i]);
                    out.push(self.eigenvalues[j]);
                }
            }
        }
        out.dedup();
        out
    }
}

/// Eigenvalues only, via real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 100_000)
        .ok_or(Error::EigFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Full eigendecomposition of a real matrix.
pub fn eig(l: &DMatrix<f64>, tol: &Tolerances) -> Result<Eigenstructure> {
    let raw = eigenvalues(l)?;
    let n = raw.len();
    let scale = l.norm().max(1.0);
    let imag_tol = 1e-10 * scale;

    let mut reals: Vec<f64> = Vec::new();
    let mut upper: Vec<Complex64> = Vec::new();
    let mut lower: Vec<Complex64> = Vec::new();
    for z in raw {
        if z.im.abs() <= imag_tol {
            reals.push(z.re);
        } else if z.im > 0.0 {
            upper.push(z);
        } else {
            lower.push(z);
        }
    }
    // pair each upper-half eigenvalue with the nearest conjugate below
    let mut pairs: Vec<Complex64> = Vec::new();
    for z in upper {
        let target = z.conj();
        let pick = lower
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).norm().total_cmp(&(b.1 - target).norm()))
            .map(|(i, _)| i);
        let mate = match pick {
            Some(i) => lower.swap_remove(i),
            None => target,
        };
        pairs.push((z + mate.conj()) * 0.5);
    }
    // leftovers without a partner (should not happen for real input)
    for z in lower {
        pairs.push(z.conj());
    }

    enum Item {
        Real(f64),
        Pair(Complex64),
    }
    let mut items: Vec<Item> = reals.into_iter().map(Item::Real).collect();
    items.extend(pairs.into_iter().map(Item::Pair));
    let key = |it: &Item| match it {
        Item::Real(x) => (*x, 0.0),
        Item::Pair(z) => (z.re, z.im.abs()),
    };
    items.sort_by(|a, b| {
        let (ar, ai) = key(a);
        let (br, bi) = key(b);
        ar.total_cmp(&br).then(ai.total_cmp(&bi))
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut v0 = CMatrix::zeros(n, n);
    let mut col = 0;
    for it in items {
        match it {
            Item::Real(x) => {
                let shifted = l - DMatrix::identity(n, n) * x;
                let (_, v) = svd_full_real(&shifted);
                let mut vec = cvec_from_real(&v.column(n - 1).into_owned());
                fix_phase_largest(&mut vec);
                // fix_phase_largest on a real vector only flips sign; clear
                // the imaginary residue of the rotation
                vec.iter_mut().for_each(|z| z.im = 0.0);
                let nrm = vec.norm();
                vec /= Complex64::new(nrm, 0.0);
                eigenvalues.push(Complex64::new(x, 0.0));
                v0.set_column(col, &vec);
                col += 1;
            }
            Item::Pair(z) => {
                let shifted = to_complex(l) - CMatrix::identity(n, n) * z;
                let (_, v) = svd_full(&shifted);
                let mut vec = v.column(n - 1).into_owned();
                fix_phase_largest(&mut vec);
                let nrm = vec.norm();
                vec /= Complex64::new(nrm, 0.0);
                eigenvalues.push(z.conj());
                v0.set_column(col, &vec.map(|c| c.conj()));
                eigenvalues.push(z);
                v0.set_column(col + 1, &vec);
                col += 2;
            }
        }
    }

    let all_real = eigenvalues.iter().all(|z| z.im == 0.0);
    let gap = tol.distinct_gap(l.norm());
    let mut distinct = true;
    for i in 0..n {
        for j in (i + 1)..n {
            if (eigenvalues[i] - eigenvalues[j]).norm() <= gap {
                distinct = false;
            }
        }
    }
    Ok(Eigenstructure {
        eigenvalues,
        v0,
        all_real,
        distinct,
    })
}

/// Kernel basis of `S(lambda) = [(L - lambda I) B]`, split as `[N1; N2]`.
#[derive(Debug, Clone)]
pub struct NullBasis {
    pub lambda: Complex64,
    /// n x q, spans every admissible closed-loop eigenvector at `lambda`.
    pub n1: CMatrix,
    /// q x q, the matching input directions.
    pub n2: CMatrix,
}

impl NullBasis {
    pub fn q(&self) -> usize {
        self.n1.ncols()
    }

    /// Rows of `N1` at the measurement indices (equal to `C N1`).
    pub fn n4(&self, measurement: &[usize]) -> CMatrix {
        select_rows(&self.n1, measurement)
    }

    /// Rows of `N1` at the non-measurement indices.
    pub fn n3(&self, measurement: &[usize]) -> CMatrix {
        let keep: Vec<usize> = (0..self.n1.nrows())
            .filter(|i| !measurement.contains(i))
            .collect();
        select_rows(&self.n1, &keep)
    }

    /// Stacked `[N1; N2]`.
    pub fn stacked(&self) -> CMatrix {
        let (n, q) = self.n1.shape();
        let mut out = CMatrix::zeros(n + q, q);
        out.view_mut((0, 0), (n, q)).copy_from(&self.n1);
        out.view_mut((n, 0), (q, q)).copy_from(&self.n2);
        out
    }
}

pub(crate) fn select_rows(m: &CMatrix, rows: &[usize]) -> CMatrix {
    let mut out = CMatrix::zeros(rows.len(), m.ncols());
    for (dst, &src) in rows.iter().enumerate() {
        out.set_row(dst, &m.row(src));
    }
    out
}

/// `[(A - lambda I) B]` as a complex matrix.
pub fn s_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: Complex64) -> CMatrix {
    let n = a.nrows();
    let q = b.ncols();
    let mut s = CMatrix::zeros(n, n + q);
    s.view_mut((0, 0), (n, n))
        .copy_from(&(to_complex(a) - CMatrix::identity(n, n) * lambda));
    s.view_mut((0, n), (n, q)).copy_from(&to_complex(b));
    s
}

/// Factor bringing `B` to the norm of `A`.
fn input_scale(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let b_norm = b.norm();
    if b_norm > 0.0 {
        a.norm().max(1.0) / b_norm
    } else {
        1.0
    }
}

/// Orthonormal kernel basis of `S(lambda)` computed by SVD. Real `lambda`
/// is handled in real arithmetic so the basis is real. The rank decision is
/// made on `[(A - lambda I) sB]` with `s` from [`input_scale`].
pub fn null_basis(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lambda: Complex64,
    tol: &Tolerances,
) -> Result<NullBasis> {
    let n = a.nrows();
    let q = b.ncols();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let scale = input_scale(a, b);
    let bs = b * scale;
    let (sv, v) = if lambda.im == 0.0 {
        let mut s = DMatrix::zeros(n, n + q);
        s.view_mut((0, 0), (n, n))
            .copy_from(&(a - DMatrix::identity(n, n) * lambda.re));
        s.view_mut((0, n), (n, q)).copy_from(&bs);
        let (sv, v) = svd_full_real(&s);
        (sv, to_complex(&v))
    } else {
        svd_full(&s_matrix(a, &bs, lambda))
    };
    let r = rank_of(&sv, tol.rank_rtol);
    let dim = n + q - r;
    if dim != q {
        return Err(Error::KernelDimensionUnexpected {
            lambda,
            found: dim,
            expected: q,
        });
    }
    let mut kernel = v.columns(r, dim).into_owned();
    if scale != 1.0 {
        // undo the input scaling, then restore orthonormal columns
        kernel
            .rows_mut(n, q)
            .iter_mut()
            .for_each(|z| *z *= scale);
        kernel = if lambda.im == 0.0 {
            to_complex(&real_part(&kernel).qr().q())
        } else {
            kernel.qr().q()
        };
    }
    Ok(NullBasis {
        lambda,
        n1: kernel.rows(0, n).into_owned(),
        n2: kernel.rows(n, q).into_owned(),
    })
}

/// Orthonormal basis (as columns) of the numerical kernel of `m`. A zero
/// matrix has the whole space as kernel.
pub fn kernel_basis(m: &CMatrix, rtol: f64) -> CMatrix {
    let c = m.ncols();
    if is_real_matrix(m) {
        let (sv, v) = svd_full_real(&real_part(m));
        let r = rank_of(&sv, rtol);
        to_complex(&v.columns(r, c - r).into_owned())
    } else {
        let (sv, v) = svd_full(m);
        let r = rank_of(&sv, rtol);
        v.columns(r, c - r).into_owned()
    }
}

/// Unit vector `h` with `M h ~ 0`: the right singular vector of the smallest
/// singular value, phase-normalized. `None` when `M` has full column rank.
pub fn kernel_vector(m: &CMatrix, tol: &Tolerances) -> Option<CVector> {
    let c = m.ncols();
    if c == 0 {
        return None;
    }
    let (sv, v) = if is_real_matrix(m) {
        let (sv, v) = svd_full_real(&real_part(m));
        (sv, to_complex(&v))
    } else {
        svd_full(m)
    };
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = if m.nrows() < c { 0.0 } else { sv[c - 1] };
    if smax > 0.0 && smin > tol.rank_rtol * smax {
        return None;
    }
    let mut h = v.column(c - 1).into_owned();
    fix_phase_first(&mut h);
    Some(h)
}

/// Ratio of smallest to largest singular value of the column-normalized
/// stack; 0 for an empty or degenerate stack.
pub fn independence_score(columns: &[CVector]) -> f64 {
    if columns.is_empty() {
        return 0.0;
    }
    let n = columns[0].len();
    if columns.len() > n {
        return 0.0;
    }
    let mut m = CMatrix::zeros(n, columns.len());
    for (j, c) in columns.iter().enumerate() {
        let nrm = c.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        m.set_column(j, &(c / Complex64::new(nrm, 0.0)));
    }
    let sv = singular_values(&m);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) if max > 0.0 => min / max,
        _ => 0.0,
    }
}

/// True iff the columns are linearly independent under `rank_rtol`.
pub fn is_independent(columns: &[CVector], tol: &Tolerances) -> Result<bool> {
    let Some(first) = columns.first() else {
        return Err(Error::DimensionMismatch("empty column list".into()));
    };
    let n = first.len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch(
            "columns have different lengths".into(),
        ));
    }
    if columns.len() > n {
        return Ok(false);
    }
    let m = CMatrix::from_columns(columns);
    let sv = singular_values(&m);
    let max = sv[0];
    let min = *sv.last().unwrap();
    Ok(max > 0.0 && min > tol.rank_rtol * max)
}

/// PBH observability test at a single `lambda`: rank `[A - lambda I; C] = n`.
pub fn pbh_observable(a: &DMatrix<f64>, c: &DMatrix<f64>, lambda: Complex64, tol: &Tolerances) -> bool {
    let n = a.nrows();
    let m = c.nrows();
    let mut stacked = CMatrix::zeros(n + m, n);
    stacked
        .view_mut((0, 0), (n, n))
        .copy_from(&(to_complex(a) - CMatrix::identity(n, n) * lambda));
    stacked.view_mut((n, 0), (m, n)).copy_from(&to_complex(c));
    rank(&stacked, tol.rank_rtol) == n
}

/// PBH controllability: rank `[A - lambda I, B] = n` at every eigenvalue of `A`.
/// `B` is rescaled to the norm of `A` first, which leaves the rank unchanged
/// but keeps a large feedback term in `A` from swamping the test.
pub fn pbh_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: &Tolerances) -> Result<bool> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {n}x{n}, B has {} rows",
            b.nrows()
        )));
    }
    let b = b * input_scale(a, b);
    for lambda in eigenvalues(a)? {
        if rank(&s_matrix(a, &b, lambda), tol.rank_rtol) < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Greedy nearest-neighbour pairing of two spectra: each reference value,
/// in (re, im) order, takes the closest unused value of `other`.
pub fn match_spectra(reference: &[Complex64], other: &[Complex64]) -> Vec<(Complex64, Complex64, f64)> {
    let mut refs = reference.to_vec();
    refs.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mut used = vec![false; other.len()];
    let mut out = Vec::with_capacity(refs.len());
    for r in refs {
        let best = other
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .min_by(|a, b| (a.1 - r).norm().total_cmp(&(b.1 - r).norm()));
        if let Some((j, z)) = best {
            used[j] = true;
            out.push((r, *z, (z - r).norm()));
        }
    }
    out
}

/// Largest pairwise distance after [`match_spectra`]; infinite when the
/// lengths differ.
pub fn spectrum_distance(reference: &[Complex64], other: &[Complex64]) -> f64 {
    if reference.len() != other.len() {
        return f64::INFINITY;
    }
    match_spectra(reference, other)
        .iter()
        .map(|m| m.2)
        .fold(0.0, f64::max)
}
