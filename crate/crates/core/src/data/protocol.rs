//! Per-class sampling of labeled training images for one trial.

use rand::seq::index::sample;

use super::ImageSet;
use crate::error::{Error, Result};
use crate::rng::{stage_rng, Stage};

const TARGET_STREAM_OFFSET: u64 = 1 << 32;

/// Image ids (indices into the respective `ImageSet`) for one trial, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSplit {
    pub source_train: Vec<usize>,
    /// Labeled target images added to training (semi-supervised setting).
    pub target_train: Vec<usize>,
    /// Every other labeled target image.
    pub target_test: Vec<usize>,
}

fn draw(set: &ImageSet, per_class: usize, seed: u64, stream_offset: u64) -> Result<Vec<usize>> {
    let mut picked = Vec::new();
    if per_class == 0 {
        return Ok(picked);
    }
    for (class, ids) in set.ids_by_class().into_iter().enumerate() {
        if ids.len() < per_class {
            return Err(Error::Sampling {
                class,
                available: ids.len(),
                required: per_class,
            });
        }
        let mut rng = stage_rng(seed, Stage::Protocol, stream_offset + class as u64);
        picked.extend(
            sample(&mut rng, ids.len(), per_class)
                .into_iter()
                .map(|i| ids[i]),
        );
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Draws `per_class` labeled source images per class and, optionally,
/// `labeled_target_per_class` labeled target images per class. The remaining
/// labeled target images form the test set. Deterministic in `seed`; unlabeled
/// target images are never eligible since they cannot be scored.
pub fn sample_protocol(
    source: &ImageSet,
    target: &ImageSet,
    per_class: usize,
    labeled_target_per_class: usize,
    seed: u64,
) -> Result<ProtocolSplit> {
    let source_train = draw(source, per_class, seed, 0)?;
    let target_train = draw(target, labeled_target_per_class, seed, TARGET_STREAM_OFFSET)?;
    let target_test = target
        .images()
        .iter()
        .enumerate()
        .filter(|(id, img)| img.label.is_some() && target_train.binary_search(id).is_err())
        .map(|(id, _)| id)
        .collect();
    Ok(ProtocolSplit {
        source_train,
        target_train,
        target_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(classes: usize, per: usize) -> ImageSet {
        let labels: Vec<_> = (0..classes * per).map(|i| Some(i % classes)).collect();
        ImageSet::from_sizes(&vec![1; labels.len()], &labels).unwrap()
    }

    #[test]
    fn counts_follow_protocol() {
        let src = balanced(10, 30);
        let tgt = balanced(10, 15);
        let split = sample_protocol(&src, &tgt, 20, 0, 1).unwrap();
        assert_eq!(split.source_train.len(), 200);
        assert!(split.target_train.is_empty());
        assert_eq!(split.target_test.len(), 150);

        let split = sample_protocol(&src, &tgt, 8, 3, 1).unwrap();
        assert_eq!(split.source_train.len(), 80);
        assert_eq!(split.target_train.len(), 30);
        assert_eq!(split.target_test.len(), 120);
    }

    #[test]
    fn short_class_is_named() {
        let labels: Vec<_> = (0..25).map(|i| Some(if i < 5 { 1 } else { 0 })).collect();
        let src = ImageSet::from_sizes(&[1; 25], &labels).unwrap();
        match sample_protocol(&src, &src, 8, 0, 0) {
            Err(Error::Sampling {
                class: 1,
                available: 5,
                required: 8,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unlabeled_targets_excluded() {
        let src = balanced(2, 4);
        let tgt = ImageSet::from_sizes(&[1, 1, 1], &[Some(0), None, Some(1)]).unwrap();
        let split = sample_protocol(&src, &tgt, 2, 0, 0).unwrap();
        assert_eq!(split.target_test, vec![0, 2]);
    }
}
