//! Joint source/target dictionaries through one stacked K-SVD problem.
//!
//! Each target feature is coupled with its nearest source feature; the pair is
//! stacked as one `2d`-dimensional signal `[Y_s·P; Y_t]` and a single K-SVD fit
//! yields a stacked dictionary `[D_s; D_t]` with codes shared by both halves.

use log::warn;
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::coupling::{apply_coupling, build_coupling, CouplingMatrix};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::ksvd::{ksvd_fit, Dictionary, FitReport, KsvdConfig};
use crate::linalg::{frobenius_sq, norm2};
use crate::rng::{stage_rng, Stage};
use crate::sparse_coding::SparseCodeMatrix;
use crate::Scalar;

/// Split atoms with a smaller norm than this are replaced by random unit atoms.
pub const DEGENERATE_ATOM_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StackedProblem<T> {
    stacked_signals: FeatureMatrix<T>,
    source_dim: usize,
}

impl<T: Scalar> StackedProblem<T> {
    pub fn stacked_signals(&self) -> &FeatureMatrix<T> {
        &self.stacked_signals
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    /// Inverse of stacking: `(Y_s·P, Y_t)`.
    pub fn unstack(&self) -> (FeatureMatrix<T>, FeatureMatrix<T>) {
        let v = self.stacked_signals.values();
        let d = self.source_dim;
        let top = v.slice(s![..d, ..]).to_owned();
        let bottom = v.slice(s![d.., ..]).to_owned();
        (
            FeatureMatrix::new(top).expect("slice of a valid matrix"),
            FeatureMatrix::new(bottom).expect("slice of a valid matrix"),
        )
    }
}

pub fn stack_problem<T: Scalar>(
    source: &FeatureMatrix<T>,
    target: &FeatureMatrix<T>,
    coupling: &CouplingMatrix,
) -> Result<StackedProblem<T>> {
    if source.dim() != target.dim() {
        return Err(Error::shape(format!(
            "source dimension {} differs from target dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    if coupling.cols() != target.count() {
        return Err(Error::shape(format!(
            "coupling has {} columns for {} target features",
            coupling.cols(),
            target.count()
        )));
    }
    let coupled = apply_coupling(source, coupling)?;
    Ok(StackedProblem {
        stacked_signals: FeatureMatrix::vstack(&coupled, target)?,
        source_dim: source.dim(),
    })
}

/// Per-domain dictionaries split from a stacked fit.
///
/// Each half-atom is re-normalized for encoding; `*_scales[k]` is its norm inside
/// the jointly normalized stacked atom, so `atom · scale` gives the raw half back.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedDictionaries<T> {
    pub source_dict: Dictionary<T>,
    pub target_dict: Dictionary<T>,
    pub source_scales: Vec<T>,
    pub target_scales: Vec<T>,
    pub stacked_dict_atoms_unit_norm: bool,
    /// Atoms whose source half was degenerate and got replaced.
    pub repaired_source: Vec<usize>,
    /// Same for the target half.
    pub repaired_target: Vec<usize>,
}

fn split_half<T: Scalar>(
    half: ArrayView2<'_, T>,
    seed: u64,
    stream: u64,
) -> Result<(Dictionary<T>, Vec<T>, Vec<usize>)> {
    let mut atoms = half.to_owned();
    let mut scales = Vec::with_capacity(atoms.ncols());
    let mut repaired = Vec::new();
    for (k, mut col) in atoms.axis_iter_mut(Axis(1)).enumerate() {
        let n = norm2(col.view());
        if n < T::lit(DEGENERATE_ATOM_NORM) {
            let mut rng = stage_rng(seed, Stage::AdaptRepair, stream + k as u64);
            let mut fresh =
                Array1::from_shape_simple_fn(col.len(), || T::lit(StandardNormal.sample(&mut rng)));
            let fnorm = norm2(fresh.view());
            fresh.mapv_inplace(|v| v / fnorm);
            col.assign(&fresh);
            scales.push(T::zero());
            repaired.push(k);
        } else {
            col.mapv_inplace(|v| v / n);
            scales.push(n);
        }
    }
    Ok((
        Dictionary::from_columns_normalized(atoms)?,
        scales,
        repaired,
    ))
}

impl<T: Scalar> AdaptedDictionaries<T> {
    /// Splits a `2d × K` stacked dictionary into its source (top) and target (bottom) halves.
    pub fn from_stacked(stacked: &Dictionary<T>, source_dim: usize, seed: u64) -> Result<Self> {
        if stacked.dim() != 2 * source_dim {
            return Err(Error::shape(format!(
                "stacked dictionary has dimension {}, expected {}",
                stacked.dim(),
                2 * source_dim
            )));
        }
        let atoms = stacked.atoms();
        let (source_dict, source_scales, repaired_source) =
            split_half(atoms.slice(s![..source_dim, ..]), seed, 0)?;
        let (target_dict, target_scales, repaired_target) =
            split_half(atoms.slice(s![source_dim.., ..]), seed, 1 << 32)?;
        for k in &repaired_source {
            warn!("source half of stacked atom {k} is degenerate; replaced by a random unit atom");
        }
        for k in &repaired_target {
            warn!("target half of stacked atom {k} is degenerate; replaced by a random unit atom");
        }
        Ok(Self {
            source_dict,
            target_dict,
            source_scales,
            target_scales,
            stacked_dict_atoms_unit_norm: true,
            repaired_source,
            repaired_target,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.source_dict.num_atoms()
    }

    pub fn dim(&self) -> usize {
        self.source_dict.dim()
    }

    fn scaled(dict: &Dictionary<T>, scales: &[T]) -> Array2<T> {
        let mut raw = dict.atoms().to_owned();
        for (mut col, &s) in raw.axis_iter_mut(Axis(1)).zip(scales) {
            col.mapv_inplace(|v| v * s);
        }
        raw
    }

    /// `D_s` before per-domain normalization.
    pub fn raw_source(&self) -> Array2<T> {
        Self::scaled(&self.source_dict, &self.source_scales)
    }

    /// `D_t` before per-domain normalization.
    pub fn raw_target(&self) -> Array2<T> {
        Self::scaled(&self.target_dict, &self.target_scales)
    }

    /// `[D_s; D_t]` with raw halves.
    pub fn raw_stacked(&self) -> Array2<T> {
        concatenate(
            Axis(0),
            &[self.raw_source().view(), self.raw_target().view()],
        )
        .expect("same atom count")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptOptions {
    pub ksvd: KsvdConfig,
    /// Compute the coupling on z-scored features (pooled statistics). The
    /// dictionaries are always learned on the features as given.
    pub standardize_coupling: bool,
}

#[derive(Debug, Clone)]
pub struct AdaptFit<T> {
    pub dictionaries: AdaptedDictionaries<T>,
    /// Shared codes `X̃ = X_t`, one per target feature.
    pub codes: SparseCodeMatrix<T>,
    pub report: FitReport,
    pub coupling: CouplingMatrix,
    pub stacked_dictionary: Dictionary<T>,
    /// `‖Ỹ − D̃·X̃‖²_F` for the returned dictionary and codes.
    pub stacked_objective: T,
}

/// Z-scores both domains with per-dimension mean and standard deviation pooled
/// over all source and target features. Constant dimensions are only centered.
pub fn standardize_pooled<T: Scalar>(
    source: &FeatureMatrix<T>,
    target: &FeatureMatrix<T>,
) -> Result<(FeatureMatrix<T>, FeatureMatrix<T>)> {
    let all = FeatureMatrix::hstack(&[source, target])?;
    let n = T::lit(all.count() as f64);
    let mean = all.values().sum_axis(Axis(1)) / n;
    let centered = &all.values() - &mean.view().insert_axis(Axis(1));
    let std = (centered.mapv(|v| v * v).sum_axis(Axis(1)) / n).mapv(|v| v.sqrt());
    let apply = |m: &FeatureMatrix<T>| {
        let mut v = &m.values() - &mean.view().insert_axis(Axis(1));
        for (mut row, &s) in v.axis_iter_mut(Axis(0)).zip(std.iter()) {
            if s > T::zero() {
                row.mapv_inplace(|x| x / s);
            }
        }
        FeatureMatrix::new(v)
    };
    Ok((apply(source)?, apply(target)?))
}

pub fn adapt_fit<T: Scalar>(
    source: &FeatureMatrix<T>,
    target: &FeatureMatrix<T>,
    config: &KsvdConfig,
) -> Result<AdaptFit<T>> {
    adapt_fit_with(
        source,
        target,
        &AdaptOptions {
            ksvd: config.clone(),
            standardize_coupling: false,
        },
    )
}

pub fn adapt_fit_with<T: Scalar>(
    source: &FeatureMatrix<T>,
    target: &FeatureMatrix<T>,
    options: &AdaptOptions,
) -> Result<AdaptFit<T>> {
    options.ksvd.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::shape(format!(
            "source dimension {} differs from target dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    if options.ksvd.num_atoms > target.count() {
        warn!(
            "num_atoms {} exceeds the {} target features; some atoms start random",
            options.ksvd.num_atoms,
            target.count()
        );
    }
    let coupling = if options.standardize_coupling {
        let (s, t) = standardize_pooled(source, target)?;
        build_coupling(&s, &t)?
    } else {
        build_coupling(source, target)?
    };
    let problem = stack_problem(source, target, &coupling)?;
    let (stacked_dictionary, codes, report) = ksvd_fit(problem.stacked_signals(), &options.ksvd)?;
    let stacked_objective = codes.objective(
        problem.stacked_signals().values(),
        stacked_dictionary.atoms(),
    )?;
    let dictionaries =
        AdaptedDictionaries::from_stacked(&stacked_dictionary, source.dim(), options.ksvd.seed)?;
    Ok(AdaptFit {
        dictionaries,
        codes,
        report,
        coupling,
        stacked_dictionary,
        stacked_objective,
    })
}

/// `(‖Y_s·P − D_s·X‖²_F, ‖Y_t − D_t·X‖²_F)` for raw (unnormalized) split dictionaries.
pub fn joint_objective_raw<T: Scalar>(
    source: &FeatureMatrix<T>,
    target: &FeatureMatrix<T>,
    coupling: &CouplingMatrix,
    raw_source: ArrayView2<'_, T>,
    raw_target: ArrayView2<'_, T>,
    codes: &SparseCodeMatrix<T>,
) -> Result<(T, T)> {
    let coupled = apply_coupling(source, coupling)?;
    if coupled.count() != target.count() {
        return Err(Error::shape(format!(
            "coupling yields {} columns for {} target features",
            coupled.count(),
            target.count()
        )));
    }
    let term_source = frobenius_sq(codes.residual(coupled.values(), raw_source)?.view());
    let term_target = frobenius_sq(codes.residual(target.values(), raw_target)?.view());
    Ok((term_source, term_target))
}

pub fn joint_objective<T: Scalar>(
    source: &FeatureMatrix<T>,
    target: &FeatureMatrix<T>,
    coupling: &CouplingMatrix,
    dicts: &AdaptedDictionaries<T>,
    codes: &SparseCodeMatrix<T>,
) -> Result<(T, T)> {
    joint_objective_raw(
        source,
        target,
        coupling,
        dicts.raw_source().view(),
        dicts.raw_target().view(),
        codes,
    )
}
