//! Insertion / deletion curves and their area difference.
//!
//! Pixels are ranked by saliency (descending, ties by row-major index).
//! Deletion zeroes the top-ranked pixels of the original image step by
//! step; insertion restores them, in the same order, onto a blurred copy.
//! `DiffAUC = 100 * (AUC_insertion - AUC_deletion)`.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::aggregation::SaliencyMap;
use crate::scorer::{score_all_classes, score_images, Scorer, ScorerError};
use crate::tensor::ImageTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least 2 steps, got {0}")]
    Steps(usize),
    #[error("blur kernel side must be odd and positive, got {0}")]
    Kernel(usize),
    #[error("blur sigma must be positive, got {0}")]
    Sigma(f64),
    #[error("saliency map is {sm:?} but image is {image:?}")]
    Shape {
        sm: (usize, usize),
        image: (usize, usize),
    },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Insertion,
    Deletion,
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveKind::Insertion => "insertion",
            CurveKind::Deletion => "deletion",
        })
    }
}

/// How a curve's y values are derived from the model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Logistic of the single class logit.
    Sigmoid,
    /// Softmax probability of the class over the full logit vector.
    Softmax,
}

impl ScoreKind {
    pub fn for_scorer<S: Scorer + ?Sized>(scorer: &S) -> Self {
        if scorer.num_classes().is_some() {
            ScoreKind::Softmax
        } else {
            ScoreKind::Sigmoid
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Sigmoid => "sigmoid",
            ScoreKind::Softmax => "softmax",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurve {
    pub kind: CurveKind,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    pub steps: usize,
    pub blur_sigma: f64,
    pub blur_kernel: usize,
    pub batch_size: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            steps: 100,
            blur_sigma: 5.0,
            blur_kernel: 11,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auc_insertion: f64,
    pub auc_deletion: f64,
    /// Percentage points.
    pub diff_auc: f64,
    pub score_kind: ScoreKind,
    pub steps: usize,
    pub insertion: MetricCurve,
    pub deletion: MetricCurve,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax probability of entry `k`.
pub fn softmax_at(logits: &[f64], k: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
    (logits[k] - m).exp() / z
}

/// Pixel indices by descending saliency; equal values keep row-major order.
pub fn saliency_order(sm: &SaliencyMap) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sm.values().len()).collect();
    let v = sm.values();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order
}

/// Number of ranked pixels affected at step `t` of `steps`.
fn pixels_at(t: usize, steps: usize, total: usize) -> usize {
    t * total / steps
}

/// Normalized Gaussian taps of side `kernel`.
pub fn gaussian_kernel(sigma: f64, kernel: usize) -> Vec<f64> {
    let r = (kernel / 2) as f64;
    let taps: Vec<f64> = (0..kernel)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with edge replication, per channel.
pub fn gaussian_blur(
    image: &ImageTensor,
    sigma: f64,
    kernel: usize,
) -> Result<ImageTensor, MetricsError> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(MetricsError::Kernel(kernel));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MetricsError::Sigma(sigma));
    }
    let taps = gaussian_kernel(sigma, kernel);
    let r = (kernel / 2) as isize;
    let (h, w, c) = image.shape();
    let src = image.data();
    let at = |i: usize, j: usize, ch: usize| (i * w + j) * c + ch;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                horiz[at(i, j, ch)] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * src[at(i, clampi(j as isize + k as isize - r, w), ch)])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let v: f64 = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * horiz[at(clampi(i as isize + k as isize - r, h), j, ch)])
                    .sum();
                out[at(i, j, ch)] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(ImageTensor::new(h, w, c, out).expect("blur preserves shape and range"))
}

fn check_shapes(image: &ImageTensor, sm: &SaliencyMap, steps: usize) -> Result<(), MetricsError> {
    if steps < 2 {
        return Err(MetricsError::Steps(steps));
    }
    if (sm.height(), sm.width()) != (image.height(), image.width()) {
        return Err(MetricsError::Shape {
            sm: (sm.height(), sm.width()),
            image: (image.height(), image.width()),
        });
    }
    Ok(())
}

/// Scores of a batch as curve values.
fn curve_scores<S: Scorer + ?Sized>(
    scorer: &S,
    batch: &[ImageTensor],
    class_index: usize,
    kind: ScoreKind,
) -> Result<Vec<f64>, ScorerError> {
    match kind {
        ScoreKind::Sigmoid => Ok(score_images(scorer, batch, class_index)?
            .into_iter()
            .map(logistic)
            .collect()),
        ScoreKind::Softmax => {
            let rows = score_all_classes(scorer, batch)?;
            if let Some(row) = rows.first() {
                if class_index >= row.len() {
                    return Err(ScorerError::ClassOutOfRange {
                        class_index,
                        num_classes: row.len(),
                    });
                }
            }
            Ok(rows.iter().map(|r| softmax_at(r, class_index)).collect())
        }
    }
}

/// Score `steps + 1` images where step `t` takes the first
/// `t * N / steps` ranked pixels from `fill` and the rest from `base`.
#[allow(clippy::too_many_arguments)]
fn sweep<S: Scorer + ?Sized>(
    kind: CurveKind,
    base: &ImageTensor,
    fill: &ImageTensor,
    order: &[usize],
    scorer: &S,
    class_index: usize,
    steps: usize,
    batch_size: usize,
) -> Result<MetricCurve, ScorerError> {
    let score_kind = ScoreKind::for_scorer(scorer);
    let total = order.len();
    let build = |t: usize| {
        let mut img = base.clone();
        for &p in &order[..pixels_at(t, steps, total)] {
            img.pixel_mut(p).copy_from_slice(fill.pixel(p));
        }
        img
    };
    let mut ys = Vec::with_capacity(steps + 1);
    let ts: Vec<usize> = (0..=steps).collect();
    for chunk in ts.chunks(batch_size.max(1)) {
        let batch: Vec<ImageTensor> = chunk.par_iter().map(|&t| build(t)).collect();
        ys.extend(curve_scores(scorer, &batch, class_index, score_kind)?);
    }
    Ok(MetricCurve {
        kind,
        xs: ts.iter().map(|&t| t as f64 / steps as f64).collect(),
        ys,
    })
}

pub fn deletion_curve<S: Scorer + ?Sized>(
    image: &ImageTensor,
    sm: &SaliencyMap,
    scorer: &S,
    class_index: usize,
    steps: usize,
    batch_size: usize,
) -> Result<MetricCurve, MetricsError> {
    check_shapes(image, sm, steps)?;
    let (h, w, c) = image.shape();
    let black = ImageTensor::new(h, w, c, vec![0.0; h * w * c]).expect("valid shape");
    let order = saliency_order(sm);
    Ok(sweep(
        CurveKind::Deletion,
        image,
        &black,
        &order,
        scorer,
        class_index,
        steps,
        batch_size,
    )?)
}

#[allow(clippy::too_many_arguments)]
pub fn insertion_curve<S: Scorer + ?Sized>(
    image: &ImageTensor,
    sm: &SaliencyMap,
    scorer: &S,
    class_index: usize,
    steps: usize,
    blur_sigma: f64,
    blur_kernel: usize,
    batch_size: usize,
) -> Result<MetricCurve, MetricsError> {
    check_shapes(image, sm, steps)?;
    let blurred = gaussian_blur(image, blur_sigma, blur_kernel)?;
    let order = saliency_order(sm);
    Ok(sweep(
        CurveKind::Insertion,
        &blurred,
        image,
        &order,
        scorer,
        class_index,
        steps,
        batch_size,
    )?)
}

/// Trapezoidal area under `ys` over `xs`.
///
/// Evaluated as `½(Σ (x[k+1]·y[k] − x[k]·y[k+1]) + x[n]·y[n] − x[0]·y[0])`,
/// which equals the trapezoid sum but is exact for `y = x`: every cross
/// term cancels bit-for-bit and the end term telescopes.
pub fn auc(curve: &MetricCurve) -> f64 {
    let (xs, ys) = (&curve.xs, &curve.ys);
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let cross: f64 = xs[..n]
        .windows(2)
        .zip(ys[..n].windows(2))
        .map(|(x, y)| x[1] * y[0] - x[0] * y[1])
        .sum();
    0.5 * (cross + (xs[n - 1] * ys[n - 1] - xs[0] * ys[0]))
}

pub fn diff_auc<S: Scorer + ?Sized>(
    image: &ImageTensor,
    sm: &SaliencyMap,
    scorer: &S,
    class_index: usize,
    cfg: &MetricsConfig,
) -> Result<EvalReport, MetricsError> {
    let insertion = insertion_curve(
        image,
        sm,
        scorer,
        class_index,
        cfg.steps,
        cfg.blur_sigma,
        cfg.blur_kernel,
        cfg.batch_size,
    )?;
    let deletion = deletion_curve(image, sm, scorer, class_index, cfg.steps, cfg.batch_size)?;
    let auc_insertion = auc(&insertion);
    let auc_deletion = auc(&deletion);
    Ok(EvalReport {
        auc_insertion,
        auc_deletion,
        diff_auc: 100.0 * (auc_insertion - auc_deletion),
        score_kind: ScoreKind::for_scorer(scorer),
        steps: cfg.steps,
        insertion,
        deletion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::oracle::{make_disc_oracle, Disc, TwoClassAdapter};

    fn curve(xs: Vec<f64>, ys: Vec<f64>) -> MetricCurve {
        MetricCurve {
            kind: CurveKind::Deletion,
            xs,
            ys,
        }
    }

    #[test]
    fn auc_of_simple_curves() {
        let xs: Vec<f64> = (0..=10).map(|t| t as f64 / 10.0).collect();
        assert!((auc(&curve(xs.clone(), vec![0.25; 11])) - 0.25).abs() < 1e-12);
        for n in [2, 3, 7, 64, 100, 999] {
            let lin = (0..=n).map(|t| t as f64 / n as f64).collect::<Vec<_>>();
            assert_eq!(auc(&curve(lin.clone(), lin)), 0.5);
        }
        // step down at 0.3: segments sum by hand
        let ys = vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut expected = 0.0;
        for k in 0..10 {
            expected += 0.1 * (ys[k] + ys[k + 1]) * 0.5;
        }
        assert!((auc(&curve(xs, ys)) - expected).abs() < 1e-15);
        assert!((expected - 0.25).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn auc_is_the_trapezoid_sum(
            ys in proptest::collection::vec(-3.0f64..3.0, 3..60),
        ) {
            let n = ys.len() - 1;
            let xs: Vec<f64> = (0..=n).map(|t| t as f64 / n as f64).collect();
            let naive: f64 = (0..n).map(|k| (xs[k + 1] - xs[k]) * (ys[k] + ys[k + 1]) / 2.0).sum();
            let got = auc(&curve(xs.clone(), ys.clone()));
            proptest::prop_assert!((got - naive).abs() < 1e-12);
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
            proptest::prop_assert_eq!(auc(&curve(xs.clone(), xs)), 0.5);
        }
    }

    #[test]
    fn ordering_breaks_ties_by_index() {
        let sm = SaliencyMap::new(1, 5, vec![0.5, 1.0, 0.5, 0.0, 1.0]).unwrap();
        assert_eq!(saliency_order(&sm), vec![1, 4, 0, 2, 3]);
    }

    #[test]
    fn blur_matches_direct_convolution() {
        let img = ImageTensor::new(
            20,
            22,
            3,
            (0..20 * 22 * 3)
                .map(|k| ((k * 37) % 101) as f64 / 100.0)
                .collect(),
        )
        .unwrap();
        let (sigma, side) = (1.7, 5usize);
        let out = gaussian_blur(&img, sigma, side).unwrap();
        let r = (side / 2) as isize;
        let g = |d: isize| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-r..=r)
            .flat_map(|a| (-r..=r).map(move |b| g(a) * g(b)))
            .sum();
        for i in 0..20isize {
            for j in 0..22isize {
                for ch in 0..3 {
                    let mut acc = 0.0;
                    for a in -r..=r {
                        for b in -r..=r {
                            let ii = (i + a).clamp(0, 19) as usize;
                            let jj = (j + b).clamp(0, 21) as usize;
                            acc += g(a) * g(b) * img.data()[(ii * 22 + jj) * 3 + ch];
                        }
                    }
                    let got = out.data()[((i * 22 + j) * 3) as usize + ch];
                    assert!((got - acc / norm).abs() < 1e-12);
                }
            }
        }
        let flat = ImageTensor::filled(20, 20, 1, 0.4).unwrap();
        for v in gaussian_blur(&flat, 5.0, 11).unwrap().data() {
            assert!((v - 0.4).abs() < 1e-12);
        }
        assert!(gaussian_blur(&flat, 5.0, 4).is_err());
        assert!(gaussian_blur(&flat, 0.0, 5).is_err());
    }

    #[test]
    fn curve_endpoints() {
        let img =
            ImageTensor::from_fn(24, 24, |i, j| 0.3 + 0.02 * ((i + 2 * j) % 11) as f64).unwrap();
        let oracle = make_disc_oracle(&img, Disc::new(12.0, 12.0, 6.0)).unwrap();
        let sm =
            SaliencyMap::new(24, 24, (0..576).map(|p| (p % 7) as f64 / 6.0).collect()).unwrap();
        let del = deletion_curve(&img, &sm, &oracle, 0, 10, 4).unwrap();
        assert_eq!(del.xs.len(), 11);
        assert_eq!(del.ys[0], logistic(0.0));
        let black = ImageTensor::filled(24, 24, 1, 0.0).unwrap();
        assert_eq!(
            del.ys[10],
            logistic(score_images(&oracle, &[black], 0).unwrap()[0])
        );

        let ins = insertion_curve(&img, &sm, &oracle, 0, 10, 5.0, 11, 3).unwrap();
        let blurred = gaussian_blur(&img, 5.0, 11).unwrap();
        assert_eq!(
            ins.ys[0],
            logistic(score_images(&oracle, &[blurred], 0).unwrap()[0])
        );
        assert_eq!(ins.ys[10], logistic(0.0));
    }

    #[test]
    fn softmax_curves_when_full_logits_exist() {
        let img = ImageTensor::filled(24, 24, 1, 0.5).unwrap();
        let oracle = TwoClassAdapter(make_disc_oracle(&img, Disc::new(12.0, 12.0, 6.0)).unwrap());
        let sm = SaliencyMap::new(24, 24, vec![1.0; 576]).unwrap();
        let report = diff_auc(
            &img,
            &sm,
            &oracle,
            0,
            &MetricsConfig {
                steps: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.score_kind, ScoreKind::Softmax);
        assert!(report.diff_auc.is_finite());
        // softmax over [s, -s] is the logistic of 2s
        assert!((softmax_at(&[0.3, -0.3], 0) - logistic(0.6)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let img = ImageTensor::filled(24, 24, 1, 0.5).unwrap();
        let oracle = make_disc_oracle(&img, Disc::new(12.0, 12.0, 6.0)).unwrap();
        let sm = SaliencyMap::new(24, 24, vec![1.0; 576]).unwrap();
        assert_eq!(
            deletion_curve(&img, &sm, &oracle, 0, 1, 8),
            Err(MetricsError::Steps(1))
        );
        let small = SaliencyMap::new(20, 20, vec![1.0; 400]).unwrap();
        assert!(matches!(
            deletion_curve(&img, &small, &oracle, 0, 5, 8),
            Err(MetricsError::Shape { .. })
        ));
    }
}
