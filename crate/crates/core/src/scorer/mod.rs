//! The black-box model contract.
//!
//! A [`Scorer`] maps a batch of images to one pre-softmax class score per
//! image. It is the only information the optimizer and the metrics ever
//! get about the model.

pub mod bridge;
pub mod oracle;
pub mod protocol;
pub mod serve;

use thiserror::Error;

use crate::tensor::ImageTensor;

pub use bridge::{BridgeScorer, DEFAULT_BRIDGE_TIMEOUT};
pub use oracle::{
    make_disc_oracle, make_two_blob_oracle, Disc, OracleError, RegionOracle, TwoClassAdapter,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
    #[error("shape mismatch: scorer expects {expected:?} (HxWxC), got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("scorer returned non-finite value {value} for batch element {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("scorer returned {got} values for a batch of {expected}")]
    CountMismatch { expected: usize, got: usize },
    #[error("class index {class_index} out of range for {num_classes} classes")]
    ClassOutOfRange {
        class_index: usize,
        num_classes: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("scorer does not provide full logit vectors")]
    Unsupported,
    #[error("model reported error: {0}")]
    Remote(String),
}

/// Anything that can score masked images for a class.
///
/// Implementations must be deterministic: identical inputs yield identical
/// outputs.
pub trait Scorer: Send + Sync {
    /// Human-readable identity, recorded in run manifests.
    fn identity(&self) -> String;

    /// Expected `(H, W, C)`, when the scorer has one.
    fn input_shape(&self) -> Option<(usize, usize, usize)>;

    /// Raw per-image logits for `class_index`. Callers go through
    /// [`score_batch`] / [`score_images`], which validate input and output.
    fn logits(&self, batch: &[ImageTensor], class_index: usize) -> Result<Vec<f64>, ScorerError>;

    /// Number of classes when full logit vectors are available.
    fn num_classes(&self) -> Option<usize> {
        None
    }

    /// Full logit vector per image, `num_classes` entries each.
    fn all_logits(&self, _batch: &[ImageTensor]) -> Result<Vec<Vec<f64>>, ScorerError> {
        Err(ScorerError::Unsupported)
    }

    /// Whether `logits` may be called from several threads at once.
    fn concurrent(&self) -> bool;
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn input_shape(&self) -> Option<(usize, usize, usize)> {
        (**self).input_shape()
    }
    fn logits(&self, batch: &[ImageTensor], class_index: usize) -> Result<Vec<f64>, ScorerError> {
        (**self).logits(batch, class_index)
    }
    fn num_classes(&self) -> Option<usize> {
        (**self).num_classes()
    }
    fn all_logits(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f64>>, ScorerError> {
        (**self).all_logits(batch)
    }
    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub batch: Vec<ImageTensor>,
    pub class_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResponse {
    pub logits: Vec<f64>,
}

fn check_batch<S: Scorer + ?Sized>(scorer: &S, batch: &[ImageTensor]) -> Result<(), ScorerError> {
    let first = batch.first().ok_or(ScorerError::EmptyBatch)?;
    let expected = scorer.input_shape().unwrap_or_else(|| first.shape());
    for img in batch {
        if img.shape() != expected {
            return Err(ScorerError::ShapeMismatch {
                expected,
                got: img.shape(),
            });
        }
    }
    Ok(())
}

fn check_values(values: &[f64], expected: usize) -> Result<(), ScorerError> {
    if values.len() != expected {
        return Err(ScorerError::CountMismatch {
            expected,
            got: values.len(),
        });
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(ScorerError::NonFinite { index, value });
    }
    Ok(())
}

/// Validated scoring of a slice of images.
pub fn score_images<S: Scorer + ?Sized>(
    scorer: &S,
    batch: &[ImageTensor],
    class_index: usize,
) -> Result<Vec<f64>, ScorerError> {
    check_batch(scorer, batch)?;
    if let Some(n) = scorer.num_classes() {
        if class_index >= n {
            return Err(ScorerError::ClassOutOfRange {
                class_index,
                num_classes: n,
            });
        }
    }
    let logits = scorer.logits(batch, class_index)?;
    check_values(&logits, batch.len())?;
    Ok(logits)
}

/// Validated full-logit scoring; one vector of `num_classes` per image.
pub fn score_all_classes<S: Scorer + ?Sized>(
    scorer: &S,
    batch: &[ImageTensor],
) -> Result<Vec<Vec<f64>>, ScorerError> {
    check_batch(scorer, batch)?;
    let n = scorer.num_classes().ok_or(ScorerError::Unsupported)?;
    let rows = scorer.all_logits(batch)?;
    if rows.len() != batch.len() {
        return Err(ScorerError::CountMismatch {
            expected: batch.len(),
            got: rows.len(),
        });
    }
    for row in &rows {
        check_values(row, n)?;
    }
    Ok(rows)
}

/// Score a request, surfacing shape problems and non-finite outputs.
pub fn score_batch<S: Scorer + ?Sized>(
    scorer: &S,
    req: &ScoreRequest,
) -> Result<ScoreResponse, ScorerError> {
    score_images(scorer, &req.batch, req.class_index).map(|logits| ScoreResponse { logits })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(f64);

    impl Scorer for Fixed {
        fn identity(&self) -> String {
            "fixed".into()
        }
        fn input_shape(&self) -> Option<(usize, usize, usize)> {
            Some((20, 20, 1))
        }
        fn logits(&self, batch: &[ImageTensor], _: usize) -> Result<Vec<f64>, ScorerError> {
            Ok(vec![self.0; batch.len()])
        }
        fn concurrent(&self) -> bool {
            true
        }
    }

    #[test]
    fn validates_requests_and_responses() {
        let img = ImageTensor::filled(20, 20, 1, 0.5).unwrap();
        let ok = score_batch(
            &Fixed(1.5),
            &ScoreRequest {
                batch: vec![img.clone(); 3],
                class_index: 0,
            },
        )
        .unwrap();
        assert_eq!(ok.logits, vec![1.5; 3]);

        assert_eq!(
            score_images(&Fixed(1.0), &[], 0),
            Err(ScorerError::EmptyBatch)
        );
        let wrong = ImageTensor::filled(21, 20, 1, 0.5).unwrap();
        assert!(matches!(
            score_images(&Fixed(1.0), &[wrong], 0),
            Err(ScorerError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            score_images(&Fixed(f64::NAN), std::slice::from_ref(&img), 0),
            Err(ScorerError::NonFinite { index: 0, .. })
        ));
        assert_eq!(
            score_all_classes(&Fixed(1.0), &[img]),
            Err(ScorerError::Unsupported)
        );
    }
}
