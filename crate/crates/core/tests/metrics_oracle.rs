use decam::metrics::{
    auc, deletion_curve, diff_auc, gaussian_blur, insertion_curve, logistic, MetricsConfig,
};
use decam::scorer::oracle::{make_disc_oracle, Disc};
use decam::tensor::ImageTensor;
use decam::SaliencyMap;

const SIDE: usize = 24;

fn textured() -> ImageTensor {
    ImageTensor::from_fn(SIDE, SIDE, |i, j| {
        0.3 + 0.5 * ((i * 7 + j * 13) % 17) as f64 / 16.0
    })
    .unwrap()
}

fn disc() -> Disc {
    Disc::new(12.0, 12.0, 6.0)
}

fn ground_truth_map() -> SaliencyMap {
    let inside = disc().indicator(SIDE, SIDE);
    SaliencyMap::new(
        SIDE,
        SIDE,
        inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )
    .unwrap()
}

/// Direct evaluation of the disc oracle's logit from per-pixel values.
fn oracle_logit(reference: &[f64], current: &[f64], inside: &[bool]) -> f64 {
    let sum = |v: &[f64], want: bool| -> f64 {
        v.iter()
            .zip(inside)
            .filter(|(_, &b)| b == want)
            .map(|(x, _)| x)
            .sum()
    };
    sum(current, true) / sum(reference, true) - sum(current, false) / sum(reference, false)
}

/// Pixels sorted by saliency, descending, ties in row-major order.
fn order(sm: &SaliencyMap) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sm.values().len()).collect();
    idx.sort_by(|&a, &b| sm.values()[b].partial_cmp(&sm.values()[a]).unwrap());
    idx
}

fn expected_curve(
    from: &[f64],
    to: &[f64],
    reference: &[f64],
    sm: &SaliencyMap,
    steps: usize,
) -> Vec<f64> {
    let inside = disc().indicator(SIDE, SIDE);
    let ord = order(sm);
    (0..=steps)
        .map(|t| {
            let n = t * ord.len() / steps;
            let mut cur = from.to_vec();
            for &p in &ord[..n] {
                cur[p] = to[p];
            }
            logistic(oracle_logit(reference, &cur, &inside))
        })
        .collect()
}

#[test]
fn deletion_curve_matches_closed_form() {
    let img = textured();
    let oracle = make_disc_oracle(&img, disc()).unwrap();
    let sm = ground_truth_map();
    for steps in [2, 7, 100, 576] {
        let curve = deletion_curve(&img, &sm, &oracle, 0, steps, 16).unwrap();
        let expect = expected_curve(img.data(), &vec![0.0; SIDE * SIDE], img.data(), &sm, steps);
        assert_eq!(curve.xs.len(), steps + 1);
        for (t, (y, e)) in curve.ys.iter().zip(&expect).enumerate() {
            assert!((y - e).abs() < 1e-12, "steps {steps} t {t}: {y} vs {e}");
            assert_eq!(curve.xs[t], t as f64 / steps as f64);
        }
    }
}

#[test]
fn insertion_curve_matches_closed_form() {
    let img = textured();
    let oracle = make_disc_oracle(&img, disc()).unwrap();
    let sm = ground_truth_map();
    let blurred = gaussian_blur(&img, 5.0, 11).unwrap();
    let curve = insertion_curve(&img, &sm, &oracle, 0, 50, 5.0, 11, 64).unwrap();
    let expect = expected_curve(blurred.data(), img.data(), img.data(), &sm, 50);
    for (y, e) in curve.ys.iter().zip(&expect) {
        assert!((y - e).abs() < 1e-12);
    }
    assert!((curve.ys[50] - 0.5).abs() < 1e-12);
}

#[test]
fn deletion_bottoms_out_once_the_disc_is_gone() {
    let img = ImageTensor::filled(SIDE, SIDE, 1, 0.8).unwrap();
    let oracle = make_disc_oracle(&img, disc()).unwrap();
    let sm = ground_truth_map();
    let steps = 100;
    let curve = deletion_curve(&img, &sm, &oracle, 0, steps, 64).unwrap();
    let frac = sm.values().iter().filter(|&&v| v > 0.0).count() as f64 / (SIDE * SIDE) as f64;
    let (argmin, min) =
        curve.ys.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (t, &y)| if y < acc.1 { (t, y) } else { acc },
        );
    assert!(curve.xs[argmin] <= frac + 1.0 / steps as f64);
    // first step at which all 112 disc pixels are deleted
    let t_star = (0..=steps)
        .find(|t| t * SIDE * SIDE / steps >= 112)
        .unwrap();
    assert_eq!(argmin, t_star);
    let extra = (t_star * SIDE * SIDE / steps - 112) as f64;
    assert!((min - logistic(-1.0 + extra / 464.0)).abs() < 1e-12);
    // strictly decreasing while disc pixels are removed
    for t in 1..=argmin {
        assert!(curve.ys[t] < curve.ys[t - 1]);
    }
}

#[test]
fn ground_truth_beats_its_inverse() {
    let img = textured();
    let oracle = make_disc_oracle(&img, disc()).unwrap();
    let gt = ground_truth_map();
    let inv = SaliencyMap::new(SIDE, SIDE, gt.values().iter().map(|v| 1.0 - v).collect()).unwrap();
    let cfg = MetricsConfig::default();
    let good = diff_auc(&img, &gt, &oracle, 0, &cfg).unwrap();
    let bad = diff_auc(&img, &inv, &oracle, 0, &cfg).unwrap();
    assert!(good.diff_auc > 0.0);
    assert!(
        good.diff_auc > bad.diff_auc + 5.0,
        "{} vs {}",
        good.diff_auc,
        bad.diff_auc
    );
    assert_eq!(good.auc_insertion, auc(&good.insertion));
    assert_eq!(
        good.diff_auc,
        100.0 * (good.auc_insertion - good.auc_deletion)
    );
}
