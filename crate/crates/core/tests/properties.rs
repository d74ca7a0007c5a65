mod common;

use common::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use uddl::data::{read_dmat, write_dmat};
use uddl::{
    encode_image_set, omp_encode, pool_max, sample_protocol, svm_predict, Dictionary,
    FeatureMatrix, ImageDescriptor, ImageSet, LinearSvmModel, PoolMode, PoolOptions, SparseCode,
    SvmParams,
};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-1e3..1e3f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dmat_round_trip(
        (m, sizes) in (1usize..6, 1usize..5).prop_flat_map(|(r, n)| {
            (proptest::collection::vec(1usize..4, n)).prop_flat_map(move |sizes| {
                let c: usize = sizes.iter().sum();
                (matrix(r, c), Just(sizes))
            })
        }),
        labelled in any::<bool>(),
    ) {
        let labels: Vec<Option<usize>> = (0..sizes.len()).map(|i| if labelled && i % 2 == 0 { Some(i) } else { None }).collect();
        let images = ImageSet::from_sizes(&sizes, &labels).unwrap();
        let fm = FeatureMatrix::new(m).unwrap();
        let mut buf = Vec::new();
        write_dmat(&mut buf, &fm, Some(&images)).unwrap();
        let (back, back_images) = read_dmat::<f64>(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        fm.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back_images, Some(images));
    }

    #[test]
    fn omp_never_worse_than_empty_code(y in proptest::collection::vec(-10.0..10.0f64, 6), seed in 0u64..1000, t0 in 1usize..6) {
        let dict = Dictionary::from_columns_normalized(gaussian(6, 9, &mut rng(seed))).unwrap();
        let y = Array1::from(y);
        let code = omp_encode(y.view(), &dict, t0, 0.0).unwrap();
        let r = &y - &code.reconstruct(dict.atoms());
        prop_assert!(r.dot(&r).sqrt() <= y.dot(&y).sqrt() * (1.0 + 1e-12));
        prop_assert!(code.nnz() <= t0);
    }

    #[test]
    fn pooling_ignores_feature_order(seed in 0u64..1000, signed in any::<bool>()) {
        let mut r = rng(seed);
        let v = gaussian(2, 8, &mut r);
        let codes: Vec<SparseCode<f64>> = (0..8)
            .map(|j| SparseCode::new(vec![(j % 5, v[[0, j]]), ((j + 2) % 5, v[[1, j]])], 5).unwrap())
            .collect();
        let mut shuffled = codes.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut r);
        let opts = PoolOptions { mode: if signed { PoolMode::Signed } else { PoolMode::Abs }, l2_normalize: true };
        prop_assert_eq!(pool_max(&codes, 5, opts).unwrap(), pool_max(&shuffled, 5, opts).unwrap());
    }

    #[test]
    fn duplicated_features_leave_descriptor_unchanged(seed in 0u64..500) {
        let mut r = rng(seed);
        let dict = Dictionary::from_columns_normalized(gaussian(5, 8, &mut r)).unwrap();
        let f = gaussian(5, 4, &mut r);
        let doubled = ndarray::concatenate(ndarray::Axis(1), &[f.view(), f.view()]).unwrap();
        let once = encode_image_set(&ImageSet::from_sizes(&[4], &[Some(0)]).unwrap(), &features(f), &dict, 2, PoolOptions::default()).unwrap();
        let twice = encode_image_set(&ImageSet::from_sizes(&[8], &[Some(0)]).unwrap(), &features(doubled), &dict, 2, PoolOptions::default()).unwrap();
        prop_assert_eq!(&once[0].vector, &twice[0].vector);
    }

    #[test]
    fn prediction_invariant_to_positive_scaling(seed in 0u64..1000, exp in -8i32..8) {
        let mut r = rng(seed);
        let w = gaussian(4, 6, &mut r);
        let b = Array1::from(gaussian(4, 1, &mut r).into_raw_vec_and_offset().0);
        let c = 2f64.powi(exp);
        let m1 = LinearSvmModel::new(w.clone(), b.clone(), SvmParams::default()).unwrap();
        let m2 = LinearSvmModel::new(w * c, b * c, SvmParams::default()).unwrap();
        let data: Vec<ImageDescriptor<f64>> = (0..20)
            .map(|i| ImageDescriptor { vector: Array1::from(gaussian(6, 1, &mut r).into_raw_vec_and_offset().0), image_id: i, label: None })
            .collect();
        prop_assert_eq!(svm_predict(&m1, &data).unwrap(), svm_predict(&m2, &data).unwrap());
    }

    #[test]
    fn protocol_splits_are_disjoint_and_cover_target(seed in any::<u64>(), labeled in 0usize..4) {
        let labels: Vec<Option<usize>> = (0..40).map(|i| if i % 9 == 8 { None } else { Some(i % 4) }).collect();
        let sizes = vec![1; 40];
        let set = ImageSet::from_sizes(&sizes, &labels).unwrap();
        let split = sample_protocol(&set, &set, 5, labeled, seed).unwrap();
        prop_assert_eq!(split.source_train.len(), 20);
        prop_assert_eq!(split.target_train.len(), 4 * labeled);
        prop_assert!(split.target_train.iter().all(|i| !split.target_test.contains(i)));
        let eligible = labels.iter().filter(|l| l.is_some()).count();
        prop_assert_eq!(split.target_train.len() + split.target_test.len(), eligible);
    }
}
