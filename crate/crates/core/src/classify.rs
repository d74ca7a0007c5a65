//! One-vs-rest linear SVM trained by stochastic subgradient descent (Pegasos).

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::ImageDescriptor;
use crate::rng::{stage_rng, Stage};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub reg_lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            reg_lambda: 1e-4,
            epochs: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel<T> {
    /// `classes × features`.
    pub weights: Array2<T>,
    pub biases: Array1<T>,
    pub reg_lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl<T: Scalar> LinearSvmModel<T> {
    pub fn new(weights: Array2<T>, biases: Array1<T>, params: SvmParams) -> Result<Self> {
        if weights.nrows() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                weights.nrows()
            )));
        }
        if biases.len() != weights.nrows() {
            return Err(Error::shape(format!(
                "{} biases for {} classes",
                biases.len(),
                weights.nrows()
            )));
        }
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite SVM parameter".into()));
        }
        Ok(Self {
            weights,
            biases,
            reg_lambda: params.reg_lambda,
            epochs: params.epochs,
            seed: params.seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn scores(&self, x: ArrayView1<'_, T>) -> Array1<T> {
        self.weights.dot(&x) + &self.biases
    }

    /// `λ/2·(‖w_c‖² + b_c²) + mean hinge` of the binary problem for `class`,
    /// the quantity each binary learner minimizes.
    pub fn binary_objective(&self, class: usize, descriptors: &[ImageDescriptor<T>]) -> f64 {
        let w = augmented(self.weights.row(class), self.biases[class]);
        binary_objective(w.view(), class, descriptors, self.reg_lambda)
    }
}

fn augmented<T: Scalar>(w: ArrayView1<'_, T>, b: T) -> Array1<T> {
    let mut out = Array1::zeros(w.len() + 1);
    out.slice_mut(s![..w.len()]).assign(&w);
    out[w.len()] = b;
    out
}

fn margin<T: Scalar>(w: ArrayView1<'_, T>, x: ArrayView1<'_, T>) -> T {
    let f = x.len();
    w.slice(s![..f]).dot(&x) + w[f]
}

fn binary_objective<T: Scalar>(
    w: ArrayView1<'_, T>,
    class: usize,
    data: &[ImageDescriptor<T>],
    lambda: f64,
) -> f64 {
    let reg = 0.5 * lambda * w.dot(&w).as_f64();
    let hinge: f64 = data
        .iter()
        .map(|d| {
            let y = if d.label == Some(class) { 1.0 } else { -1.0 };
            (1.0 - y * margin(w, d.vector.view()).as_f64()).max(0.0)
        })
        .sum();
    reg + hinge / data.len() as f64
}

/// One binary Pegasos run; the bias is the weight of a constant 1 feature.
/// Returns the best of (average of the last 10% of iterates, last iterate, zero)
/// under the binary objective.
fn train_binary<T: Scalar>(
    data: &[ImageDescriptor<T>],
    class: usize,
    params: &SvmParams,
) -> Array1<T> {
    let n = data.len();
    let f = data[0].vector.len();
    let lambda = params.reg_lambda;
    let steps = params.epochs.max(1) * n;
    let avg_from = steps - (steps / 10).max(1);
    let radius = 1.0 / lambda.sqrt();

    let mut rng = stage_rng(params.seed, Stage::Svm, class as u64);
    let mut w = Array1::<T>::zeros(f + 1);
    let mut avg = Array1::<T>::zeros(f + 1);
    for t in 1..=steps {
        let i = rng.random_range(0..n);
        let x = data[i].vector.view();
        let y = if data[i].label == Some(class) {
            T::one()
        } else {
            -T::one()
        };
        let eta = 1.0 / (lambda * t as f64);
        let violated = y * margin(w.view(), x) < T::one();
        w.mapv_inplace(|v| v * T::lit(1.0 - eta * lambda));
        if violated {
            let step = T::lit(eta) * y;
            w.slice_mut(s![..f]).scaled_add(step, &x);
            w[f] += step;
        }
        let norm = w.dot(&w).as_f64().sqrt();
        if norm > radius {
            w.mapv_inplace(|v| v * T::lit(radius / norm));
        }
        if t > avg_from {
            avg += &w;
        }
    }
    avg.mapv_inplace(|v| v / T::lit((steps - avg_from) as f64));

    let zero = Array1::<T>::zeros(f + 1);
    [avg, w, zero]
        .into_iter()
        .map(|cand| (binary_objective(cand.view(), class, data, lambda), cand))
        .fold(None::<(f64, Array1<T>)>, |best, (obj, cand)| match best {
            Some((b, _)) if b <= obj => best,
            _ => Some((obj, cand)),
        })
        .expect("three candidates")
        .1
}

pub fn svm_train<T: Scalar>(
    descriptors: &[ImageDescriptor<T>],
    num_classes: usize,
    params: SvmParams,
) -> Result<LinearSvmModel<T>> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if !(params.reg_lambda > 0.0 && params.reg_lambda.is_finite()) {
        return Err(Error::Config("reg_lambda must be positive".into()));
    }
    let Some(first) = descriptors.first() else {
        return Err(Error::Training { class: 0 });
    };
    let f = first.vector.len();
    let mut seen = vec![false; num_classes];
    for d in descriptors {
        if d.vector.len() != f {
            return Err(Error::shape(format!(
                "descriptor lengths {f} and {} differ",
                d.vector.len()
            )));
        }
        match d.label {
            Some(c) if c < num_classes => seen[c] = true,
            Some(c) => {
                return Err(Error::Input(format!(
                    "label {c} out of range for {num_classes} classes"
                )))
            }
            None => {
                return Err(Error::Input(format!(
                    "training image {} is unlabeled",
                    d.image_id
                )))
            }
        }
    }
    if let Some(class) = seen.iter().position(|s| !s) {
        return Err(Error::Training { class });
    }

    let rows: Vec<Array1<T>> = (0..num_classes)
        .into_par_iter()
        .map(|c| train_binary(descriptors, c, &params))
        .collect();
    let mut weights = Array2::zeros((num_classes, f));
    let mut biases = Array1::zeros(num_classes);
    for (c, w) in rows.iter().enumerate() {
        weights.row_mut(c).assign(&w.slice(s![..f]));
        biases[c] = w[f];
    }
    LinearSvmModel::new(weights, biases, params)
}

/// Argmax of class scores; ties go to the lowest class id.
pub fn svm_predict<T: Scalar>(
    model: &LinearSvmModel<T>,
    descriptors: &[ImageDescriptor<T>],
) -> Result<Vec<usize>> {
    descriptors
        .iter()
        .map(|d| {
            if d.vector.len() != model.num_features() {
                return Err(Error::shape(format!(
                    "descriptor of length {} for a model over {} features",
                    d.vector.len(),
                    model.num_features()
                )));
            }
            let scores = model.scores(d.vector.view());
            Ok(scores
                .iter()
                .enumerate()
                .fold(
                    (0, T::neg_infinity()),
                    |acc, (c, &s)| if s > acc.1 { (c, s) } else { acc },
                )
                .0)
        })
        .collect()
}

pub fn evaluate_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn desc(v: Array1<f64>, label: usize) -> ImageDescriptor<f64> {
        ImageDescriptor {
            vector: v,
            image_id: 0,
            label: Some(label),
        }
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(evaluate_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(evaluate_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(
            evaluate_accuracy(&[1, 2, 3, 4, 5], &[1, 2, 3, 0, 0]).unwrap(),
            0.6
        );
        assert!(evaluate_accuracy(&[1], &[1, 2]).is_err());
        assert!(evaluate_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = LinearSvmModel::new(
            Array2::<f64>::zeros((3, 2)),
            Array1::zeros(3),
            SvmParams::default(),
        )
        .unwrap();
        let p = svm_predict(&m, &[desc(array![1.0, -1.0], 2), desc(array![0.0, 5.0], 1)]).unwrap();
        assert_eq!(p, vec![0, 0]);
    }

    #[test]
    fn one_hot_weights_pick_max_coordinate() {
        let m = LinearSvmModel::new(
            Array2::<f64>::eye(3),
            Array1::zeros(3),
            SvmParams::default(),
        )
        .unwrap();
        let p = svm_predict(
            &m,
            &[
                desc(array![0.1, 0.2, 0.9], 0),
                desc(array![0.7, 0.2, 0.1], 0),
            ],
        )
        .unwrap();
        assert_eq!(p, vec![2, 0]);
        assert!(matches!(
            svm_predict(&m, &[desc(array![1.0], 0)]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn repeated_points_are_separated() {
        let mut data = vec![desc(array![1.0, 0.2], 0); 5];
        data.extend(vec![desc(array![0.1, 1.0], 1); 5]);
        let m = svm_train(&data, 2, SvmParams::default()).unwrap();
        assert_eq!(
            svm_predict(&m, &data).unwrap(),
            [vec![0; 5], vec![1; 5]].concat()
        );
    }

    #[test]
    fn missing_class_is_named() {
        let data = vec![desc(array![1.0], 0), desc(array![2.0], 2)];
        assert!(matches!(
            svm_train(&data, 3, SvmParams::default()),
            Err(Error::Training { class: 1 })
        ));
        assert!(matches!(
            svm_train(&data, 1, SvmParams::default()),
            Err(Error::Config(_))
        ));
    }
}
