//! K-SVD: alternate OMP coding with per-atom rank-1 dictionary updates.

mod dictionary;

pub use dictionary::Dictionary;

use std::collections::HashSet;

use log::debug;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, leading_left_singular, normalize};
use crate::rng::{stage_rng, Stage};
use crate::sparse_coding::{batch_encode, SparseCodeMatrix};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct KsvdConfig {
    pub num_atoms: usize,
    pub sparsity: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Atoms used by fewer codes than this are replaced after a sweep.
    pub unused_atom_threshold: usize,
    /// Early stop on relative objective change between iterations.
    pub convergence_tol: f64,
}

impl Default for KsvdConfig {
    fn default() -> Self {
        Self {
            num_atoms: 512,
            sparsity: 5,
            iterations: 50,
            seed: 0,
            unused_atom_threshold: 1,
            convergence_tol: 1e-5,
        }
    }
}

impl KsvdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_atoms == 0 {
            return Err(Error::Config("num_atoms must be at least 1".into()));
        }
        if self.sparsity == 0 || self.sparsity > self.num_atoms {
            return Err(Error::Config(format!(
                "sparsity must be in 1..={}, got {}",
                self.num_atoms, self.sparsity
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Objective around one dictionary-update sweep (supports fixed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    /// `‖Y − D·X‖²_F` at the end of each iteration.
    pub objective_per_iteration: Vec<f64>,
    pub sweeps: Vec<SweepRecord>,
    pub iterations_run: usize,
    pub atoms_replaced: usize,
}

impl FitReport {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective_per_iteration.last().copied()
    }
}

/// Picks `num_atoms` distinct signal columns at random and normalizes them.
/// Repeated or zero columns get a small perturbation first; if there are fewer
/// signals than atoms the rest are random Gaussian atoms.
pub fn init_dictionary<T: Scalar>(
    signals: &FeatureMatrix<T>,
    num_atoms: usize,
    seed: u64,
) -> Result<Dictionary<T>> {
    if num_atoms == 0 {
        return Err(Error::Config("num_atoms must be at least 1".into()));
    }
    let mut rng = stage_rng(seed, Stage::DictionaryInit, 0);
    let d = signals.dim();
    let take = num_atoms.min(signals.count());
    let mut atoms = Array2::<T>::zeros((d, num_atoms));
    let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(take);

    for (k, j) in sample(&mut rng, signals.count(), take)
        .into_iter()
        .enumerate()
    {
        let mut col = signals.column(j).to_owned();
        let key: Vec<u64> = col.iter().map(|v| v.as_f64().to_bits()).collect();
        let zero = col.iter().all(|v| *v == T::zero());
        if !seen.insert(key) || zero {
            let scale = if zero {
                T::one()
            } else {
                crate::linalg::norm2(col.view())
            };
            for v in col.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += T::lit(1e-6 * n) * scale;
            }
        }
        atoms.column_mut(k).assign(&col);
    }
    for k in take..num_atoms {
        for v in atoms.column_mut(k).iter_mut() {
            *v = T::lit(StandardNormal.sample(&mut rng));
        }
    }
    Dictionary::from_columns_normalized(atoms)
}

/// New atom `k`, the signals using it and their new coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomUpdate<T> {
    pub atom: Array1<T>,
    pub users: Vec<usize>,
    pub coeffs: Array1<T>,
}

/// Best rank-1 fit `atom ⊗ coeffs` of the restricted residual, warm-started at
/// `current`. The entry of largest magnitude in the atom is made non-negative.
fn rank1_fit<T: Scalar>(
    e: ArrayView2<'_, T>,
    current: ArrayView1<'_, T>,
) -> (Array1<T>, Array1<T>) {
    match leading_left_singular(e, current) {
        Some((mut u, _)) => {
            let lead = u
                .iter()
                .enumerate()
                .fold((0, T::zero()), |acc, (i, &v)| {
                    if v.abs() > acc.1 {
                        (i, v.abs())
                    } else {
                        acc
                    }
                })
                .0;
            if u[lead] < T::zero() {
                u.mapv_inplace(|v| -v);
            }
            let coeffs = e.t().dot(&u);
            (u, coeffs)
        }
        None => (current.to_owned(), Array1::zeros(e.ncols())),
    }
}

fn users_of<T: Scalar>(codes: &SparseCodeMatrix<T>) -> Vec<Vec<usize>> {
    let mut users = vec![Vec::new(); codes.num_atoms()];
    for (j, code) in codes.columns().iter().enumerate() {
        for &k in code.support() {
            users[k].push(j);
        }
    }
    users
}

fn check_shapes<T: Scalar>(
    dictionary: &Dictionary<T>,
    codes: &SparseCodeMatrix<T>,
    signals: &FeatureMatrix<T>,
) -> Result<()> {
    if dictionary.dim() != signals.dim()
        || dictionary.num_atoms() != codes.num_atoms()
        || codes.len() != signals.count()
    {
        return Err(Error::shape(format!(
            "dictionary {}x{}, codes over {} atoms for {} signals, signals {}x{}",
            dictionary.dim(),
            dictionary.num_atoms(),
            codes.num_atoms(),
            codes.len(),
            signals.dim(),
            signals.count()
        )));
    }
    Ok(())
}

/// Rank-1 update of atom `k` over the signals whose code uses it.
///
/// Returns `None` when no code uses the atom; [`replace_unused_atoms`] handles those.
pub fn update_atom<T: Scalar>(
    dictionary: &Dictionary<T>,
    codes: &SparseCodeMatrix<T>,
    signals: &FeatureMatrix<T>,
    atom_index: usize,
) -> Result<Option<AtomUpdate<T>>> {
    check_shapes(dictionary, codes, signals)?;
    if atom_index >= dictionary.num_atoms() {
        return Err(Error::shape(format!("atom {atom_index} out of range")));
    }
    let users: Vec<usize> = codes
        .columns()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.get(atom_index).is_some())
        .map(|(j, _)| j)
        .collect();
    if users.is_empty() {
        return Ok(None);
    }
    let atoms = dictionary.atoms();
    let mut e = signals.values().select(Axis(1), &users);
    for (mut col, &j) in e.axis_iter_mut(Axis(1)).zip(&users) {
        for (k, v) in codes.column(j).iter() {
            if k != atom_index {
                col.scaled_add(-v, &atoms.column(k));
            }
        }
    }
    let (atom, coeffs) = rank1_fit(e.view(), dictionary.atom(atom_index));
    Ok(Some(AtomUpdate {
        atom,
        users,
        coeffs,
    }))
}

/// Full dictionary-update sweep in ascending atom order, supports fixed.
/// `residual` must equal `Y − D·X` on entry and is kept current.
fn sweep<T: Scalar>(
    dictionary: &mut Dictionary<T>,
    codes: &mut SparseCodeMatrix<T>,
    residual: &mut Array2<T>,
) {
    let users = users_of(codes);
    for (k, users) in users.iter().enumerate() {
        if users.is_empty() {
            continue;
        }
        let old_atom = dictionary.atom(k).to_owned();
        let mut e = residual.select(Axis(1), users);
        for (mut col, &j) in e.axis_iter_mut(Axis(1)).zip(users) {
            let x = codes.column(j).get(k).expect("user holds atom");
            col.scaled_add(x, &old_atom);
        }
        let (atom, coeffs) = rank1_fit(e.view(), old_atom.view());
        for ((mut col, &j), &x) in e.axis_iter_mut(Axis(1)).zip(users).zip(coeffs.iter()) {
            col.scaled_add(-x, &atom);
            residual.column_mut(j).assign(&col);
            codes.columns_mut()[j].set(k, x);
        }
        dictionary.set_atom(k, &atom);
    }
}

/// Replaces every atom used by fewer than `threshold` codes with the normalized
/// signal of largest reconstruction error (each signal used at most once).
///
/// Codes that referenced a replaced atom become stale; callers re-encode.
pub fn replace_unused_atoms<T: Scalar>(
    dictionary: &Dictionary<T>,
    codes: &SparseCodeMatrix<T>,
    signals: &FeatureMatrix<T>,
    threshold: usize,
) -> Result<(Dictionary<T>, usize)> {
    check_shapes(dictionary, codes, signals)?;
    let usage = codes.usage();
    let dead: Vec<usize> = (0..usage.len()).filter(|&k| usage[k] < threshold).collect();
    let mut out = dictionary.clone();
    if dead.is_empty() {
        return Ok((out, 0));
    }
    let residual = codes.residual(signals.values(), dictionary.atoms())?;
    let errors: Vec<T> = residual.columns().into_iter().map(|c| c.dot(&c)).collect();
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| {
        errors[b]
            .partial_cmp(&errors[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut candidates = order.into_iter().filter_map(|j| {
        let mut v = signals.column(j).to_owned();
        normalize(v.view_mut()).map(|_| v)
    });
    let mut replaced = 0;
    for k in dead {
        let Some(atom) = candidates.next() else { break };
        out.set_atom(k, &atom);
        replaced += 1;
    }
    Ok((out, replaced))
}

/// Runs K-SVD from a seeded random selection of signal columns.
pub fn ksvd_fit<T: Scalar>(
    signals: &FeatureMatrix<T>,
    config: &KsvdConfig,
) -> Result<(Dictionary<T>, SparseCodeMatrix<T>, FitReport)> {
    config.validate()?;
    let init = init_dictionary(signals, config.num_atoms, config.seed)?;
    ksvd_fit_from(signals, init, config)
}

/// Runs K-SVD from a given initial dictionary.
///
/// Each iteration: encode all signals, sweep every atom, record the objective,
/// then replace unused atoms (skipped after the final iteration so the returned
/// codes stay consistent with the returned dictionary).
pub fn ksvd_fit_from<T: Scalar>(
    signals: &FeatureMatrix<T>,
    initial: Dictionary<T>,
    config: &KsvdConfig,
) -> Result<(Dictionary<T>, SparseCodeMatrix<T>, FitReport)> {
    config.validate()?;
    if initial.dim() != signals.dim() {
        return Err(Error::shape(format!(
            "initial dictionary has dimension {}, signals {}",
            initial.dim(),
            signals.dim()
        )));
    }
    if initial.num_atoms() != config.num_atoms {
        return Err(Error::Config(format!(
            "initial dictionary has {} atoms, config asks for {}",
            initial.num_atoms(),
            config.num_atoms
        )));
    }
    let mut dictionary = initial;
    let mut report = FitReport::default();
    let mut codes;
    let mut iteration = 0;
    loop {
        codes = batch_encode(signals, &dictionary, config.sparsity)?;
        let mut residual = codes.residual(signals.values(), dictionary.atoms())?;
        let before = frobenius_sq(residual.view());
        sweep(&mut dictionary, &mut codes, &mut residual);
        let after = codes.objective(signals.values(), dictionary.atoms())?;
        if !after.is_finite() {
            return Err(Error::Numeric(format!(
                "objective became {after} at iteration {iteration}"
            )));
        }
        let (before, after) = (before.as_f64(), after.as_f64());
        debug!("ksvd iteration {iteration}: coded {before:.6e} -> swept {after:.6e}");

        let converged = report.objective_per_iteration.last().is_some_and(|&prev| {
            prev == 0.0 || (prev - after).abs() / prev < config.convergence_tol
        });
        report.sweeps.push(SweepRecord { before, after });
        report.objective_per_iteration.push(after);
        iteration += 1;
        if converged || iteration == config.iterations {
            break;
        }
        let (next, replaced) =
            replace_unused_atoms(&dictionary, &codes, signals, config.unused_atom_threshold)?;
        dictionary = next;
        report.atoms_replaced += replaced;
    }
    report.iterations_run = iteration;
    Ok((dictionary, codes, report))
}
