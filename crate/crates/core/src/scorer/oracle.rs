//! Synthetic scorers with a planted salient region.
//!
//! For a reference image `X`, each region `k` contributes
//! `s_k = Σ_{p∈k} brightness(X'_p) / Σ_{p∈k} brightness(X_p)` and the
//! background contributes `s_out` the same way. The logit of `X'` is
//! `mean_k(s_k) - s_out`, which peaks at 1 exactly when the regions are
//! kept and everything else is zeroed.

use thiserror::Error;

use super::{Scorer, ScorerError};
use crate::tensor::ImageTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("disc {0:?} does not lie inside the {1}x{2} image")]
    OutOfBounds(Disc, usize, usize),
    #[error("discs overlap")]
    Overlap,
    #[error("reference image has zero brightness {0}")]
    Degenerate(&'static str),
}

/// A disc in pixel coordinates. Pixel `(i, j)` belongs to it when its
/// center `(i + 0.5, j + 0.5)` is within `radius` of `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
}

impl Disc {
    pub fn new(row: f64, col: f64, radius: f64) -> Self {
        Disc { row, col, radius }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let dy = i as f64 + 0.5 - self.row;
        let dx = j as f64 + 0.5 - self.col;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    fn fits(&self, height: usize, width: usize) -> bool {
        self.radius > 0.0
            && self.row - self.radius >= 0.0
            && self.col - self.radius >= 0.0
            && self.row + self.radius <= height as f64
            && self.col + self.radius <= width as f64
    }

    /// Row-major membership grid.
    pub fn indicator(&self, height: usize, width: usize) -> Vec<bool> {
        (0..height * width)
            .map(|p| self.contains(p / width, p % width))
            .collect()
    }
}

/// Oracle over labelled pixel regions (label 0 is background).
#[derive(Debug, Clone)]
pub struct RegionOracle {
    name: String,
    shape: (usize, usize, usize),
    labels: Vec<u8>,
    regions: usize,
    /// Reference brightness per label, background first.
    reference: Vec<f64>,
}

impl RegionOracle {
    fn build(
        reference_image: &ImageTensor,
        discs: &[Disc],
        name: String,
    ) -> Result<Self, OracleError> {
        let (h, w, _) = reference_image.shape();
        for d in discs {
            if !d.fits(h, w) {
                return Err(OracleError::OutOfBounds(*d, h, w));
            }
        }
        let mut labels = vec![0u8; h * w];
        for (k, d) in discs.iter().enumerate() {
            for (p, inside) in d.indicator(h, w).into_iter().enumerate() {
                if inside {
                    if labels[p] != 0 {
                        return Err(OracleError::Overlap);
                    }
                    labels[p] = k as u8 + 1;
                }
            }
        }
        let reference = region_sums(reference_image, &labels, discs.len());
        if reference[0] <= 0.0 {
            return Err(OracleError::Degenerate("outside the planted region"));
        }
        if reference[1..].iter().any(|&s| s <= 0.0) {
            return Err(OracleError::Degenerate("inside the planted region"));
        }
        Ok(RegionOracle {
            name,
            shape: reference_image.shape(),
            labels,
            regions: discs.len(),
            reference,
        })
    }

    /// Ground-truth salient pixels (all regions), row-major.
    pub fn ground_truth(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }

    /// Pixels of region `k` (0-based).
    pub fn region(&self, k: usize) -> Vec<bool> {
        self.labels.iter().map(|&l| l as usize == k + 1).collect()
    }

    pub fn region_count(&self) -> usize {
        self.regions
    }

    fn logit(&self, img: &ImageTensor) -> f64 {
        let sums = region_sums(img, &self.labels, self.regions);
        let s_out = sums[0] / self.reference[0];
        let s_in: f64 = sums[1..]
            .iter()
            .zip(&self.reference[1..])
            .map(|(s, r)| s / r)
            .sum::<f64>()
            / self.regions as f64;
        s_in - s_out
    }
}

fn region_sums(img: &ImageTensor, labels: &[u8], regions: usize) -> Vec<f64> {
    let mut sums = vec![0.0; regions + 1];
    for (p, &l) in labels.iter().enumerate() {
        sums[l as usize] += img.brightness(p);
    }
    sums
}

impl Scorer for RegionOracle {
    fn identity(&self) -> String {
        self.name.clone()
    }

    fn input_shape(&self) -> Option<(usize, usize, usize)> {
        Some(self.shape)
    }

    fn logits(&self, batch: &[ImageTensor], _class_index: usize) -> Result<Vec<f64>, ScorerError> {
        Ok(batch.iter().map(|img| self.logit(img)).collect())
    }

    fn concurrent(&self) -> bool {
        true
    }
}

/// Oracle whose salient region is a single disc of `reference`.
pub fn make_disc_oracle(reference: &ImageTensor, disc: Disc) -> Result<RegionOracle, OracleError> {
    let name = format!("disc:{},{},{}", disc.row, disc.col, disc.radius);
    RegionOracle::build(reference, &[disc], name)
}

/// Oracle with two disjoint discs; the logit averages their recovery.
pub fn make_two_blob_oracle(
    reference: &ImageTensor,
    first: Disc,
    second: Disc,
) -> Result<RegionOracle, OracleError> {
    let name = format!(
        "blobs:{},{},{},{},{},{}",
        first.row, first.col, first.radius, second.row, second.col, second.radius
    );
    RegionOracle::build(reference, &[first, second], name)
}

/// Exposes a single-logit scorer as a two-class model: class 0 is the
/// wrapped logit and class 1 its negation.
#[derive(Debug, Clone)]
pub struct TwoClassAdapter<S>(pub S);

impl<S: Scorer> Scorer for TwoClassAdapter<S> {
    fn identity(&self) -> String {
        format!("two-class({})", self.0.identity())
    }

    fn input_shape(&self) -> Option<(usize, usize, usize)> {
        self.0.input_shape()
    }

    fn logits(&self, batch: &[ImageTensor], class_index: usize) -> Result<Vec<f64>, ScorerError> {
        let base = self.0.logits(batch, 0)?;
        match class_index {
            0 => Ok(base),
            1 => Ok(base.into_iter().map(|v| -v).collect()),
            _ => Err(ScorerError::ClassOutOfRange {
                class_index,
                num_classes: 2,
            }),
        }
    }

    fn num_classes(&self) -> Option<usize> {
        Some(2)
    }

    fn all_logits(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f64>>, ScorerError> {
        Ok(self
            .0
            .logits(batch, 0)?
            .into_iter()
            .map(|v| vec![v, -v])
            .collect())
    }

    fn concurrent(&self) -> bool {
        self.0.concurrent()
    }
}
