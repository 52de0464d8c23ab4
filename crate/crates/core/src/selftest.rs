//! Quick end-to-end sanity checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{aggregate, select_candidates};
use crate::de::{evolve, DeConfig};
use crate::genome::{clip_genes, rasterize, BinaryMask, EllipseGene, SpanLimits};
use crate::metrics::{auc, CurveKind, MetricCurve};
use crate::scorer::oracle::{make_disc_oracle, make_two_blob_oracle, Disc};
use crate::scorer::{score_all_classes, score_images, Scorer};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check {
            name,
            passed,
            detail,
        }
    }
}

/// Per-pixel evaluation of the rotated-ellipse inequality, no culling.
fn brute_force_mask(genes: &[EllipseGene], h: usize, w: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |i, j| {
        let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
        genes.iter().any(|g| {
            let (cx, cy) = ((g.x0 + g.x1) / 2.0, (g.y0 + g.y1) / 2.0);
            let (a, b) = ((g.x1 - g.x0).abs() / 2.0, (g.y1 - g.y0).abs() / 2.0);
            let (s, c) = g.r.sin_cos();
            let u = c * (px - cx) + s * (py - cy);
            let v = -s * (px - cx) + c * (py - cy);
            (u / a) * (u / a) + (v / b) * (v / b) <= 1.0
        })
    })
}

fn random_raw(rng: &mut ChaCha8Rng, k: usize, side: usize) -> Vec<f64> {
    (0..k * 5)
        .map(|i| {
            if i % 5 == 4 {
                rng.gen_range(-7.0..7.0)
            } else {
                rng.gen_range(-(side as f64)..2.0 * side as f64)
            }
        })
        .collect()
}

fn rasterization(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut differing = 0usize;
    for _ in 0..300 {
        let ind = clip_genes(&random_raw(&mut rng, 1, 64), 64, 64).expect("valid geometry");
        let fast = rasterize(&ind, 64, 64);
        let slow = brute_force_mask(ind.genes(), 64, 64);
        differing += fast
            .bits()
            .iter()
            .zip(slow.bits())
            .filter(|(a, b)| a != b)
            .count();
    }
    Check::new(
        "rasterization matches brute force",
        differing == 0,
        format!("300 genes on 64x64, {differing} differing pixels"),
    )
}

fn clipping(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let lim = SpanLimits::for_image(64, 64).expect("valid geometry");
    let mut bad = 0;
    for _ in 0..2000 {
        let once = clip_genes(&random_raw(&mut rng, 2, 64), 64, 64).expect("valid geometry");
        let twice = clip_genes(&once.to_vec(), 64, 64).expect("valid geometry");
        let spans_ok = once.genes().iter().all(|g| {
            [(g.x0, g.x1), (g.y0, g.y1)].iter().all(|&(lo, hi)| {
                lo >= 0.0 && hi <= 63.0 && hi - lo >= lim.min && hi - lo <= lim.max
            })
        });
        if once != twice || !spans_ok {
            bad += 1;
        }
    }
    Check::new(
        "clipping is closed and idempotent",
        bad == 0,
        format!("2000 random vectors, {bad} violations"),
    )
}

fn oracles() -> Check {
    let img = ImageTensor::filled(24, 24, 1, 0.6).expect("valid image");
    let disc = Disc::new(12.0, 12.0, 6.0);
    let oracle = make_disc_oracle(&img, disc).expect("disc fits");
    let score =
        |m: &BinaryMask| score_images(&oracle, &[img.masked(m)], 0).expect("oracle scores")[0];
    let exact = BinaryMask::from_fn(24, 24, |i, j| disc.contains(i, j));
    let (ones, zeros, best) = (
        score(&BinaryMask::ones(24, 24)),
        score(&BinaryMask::zeros(24, 24)),
        score(&exact),
    );

    let a = Disc::new(7.0, 7.0, 4.0);
    let b = Disc::new(16.0, 16.0, 4.0);
    let blobs = make_two_blob_oracle(&img, a, b).expect("discs fit");
    let both = BinaryMask::from_fn(24, 24, |i, j| a.contains(i, j) || b.contains(i, j));
    let one = BinaryMask::from_fn(24, 24, |i, j| a.contains(i, j));
    let s2 =
        score_images(&blobs, &[img.masked(&both), img.masked(&one)], 0).expect("oracle scores");

    let passed = ones == 0.0
        && zeros == 0.0
        && (best - 1.0).abs() < 1e-12
        && (s2[0] - 1.0).abs() < 1e-12
        && (s2[1] - 0.5).abs() < 1e-12;
    Check::new(
        "oracle closed forms",
        passed,
        format!(
            "disc ones={ones} zeros={zeros} exact={best}; blobs union={} one={}",
            s2[0], s2[1]
        ),
    )
}

fn auc_sanity() -> Check {
    let xs: Vec<f64> = (0..=20).map(|t| t as f64 / 20.0).collect();
    let c = auc(&MetricCurve {
        kind: CurveKind::Deletion,
        xs: xs.clone(),
        ys: vec![0.3; 21],
    });
    let l = auc(&MetricCurve {
        kind: CurveKind::Insertion,
        xs: xs.clone(),
        ys: xs,
    });
    Check::new(
        "trapezoidal AUC",
        (c - 0.3).abs() < 1e-12 && l == 0.5,
        format!("constant 0.3 -> {c}, identity -> {l}"),
    )
}

fn planted_disc(seed: u64) -> Check {
    let img = ImageTensor::filled(24, 24, 1, 0.8).expect("valid image");
    let disc = Disc::new(12.0, 12.0, 6.0);
    let oracle = make_disc_oracle(&img, disc).expect("disc fits");
    let cfg = DeConfig {
        population: 50,
        max_iter: 80,
        alpha: 1.0,
        seed,
        ..DeConfig::default()
    };
    let outcome = evolve(&img, &oracle, 0, &cfg)
        .map_err(|e| e.to_string())
        .and_then(|(pop, _)| {
            let cands = select_candidates(&pop).map_err(|e| e.to_string())?;
            let sm = aggregate(&cands, 24, 24).map_err(|e| e.to_string())?;
            Ok(sm.mass_fraction(&disc.indicator(24, 24)))
        });
    match outcome {
        Ok(frac) => Check::new(
            "planted disc recovery",
            frac >= 0.6,
            format!("saliency mass inside disc {:.3} (need >= 0.6)", frac),
        ),
        Err(e) => Check::new("planted disc recovery", false, e),
    }
}

/// SCORE values must equal the class column of LOGITS_ALL.
pub fn bridge_consistency<S: Scorer + ?Sized>(scorer: &S, class_index: usize, seed: u64) -> Check {
    let name = "bridge SCORE/LOGITS_ALL agree";
    let Some((h, w, c)) = scorer.input_shape() else {
        return Check::new(name, false, "scorer has no input shape".into());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch: Vec<ImageTensor> = (0..3)
        .map(|_| {
            let data = (0..h * w * c).map(|_| rng.gen::<f64>()).collect();
            ImageTensor::new(h, w, c, data).expect("valid random image")
        })
        .collect();
    let result = score_images(scorer, &batch, class_index).and_then(|single| {
        let all = score_all_classes(scorer, &batch)?;
        Ok(single
            .iter()
            .zip(&all)
            .all(|(s, row)| row.get(class_index) == Some(s)))
    });
    match result {
        Ok(ok) => Check::new(
            name,
            ok,
            format!("3 random {h}x{w}x{c} images, class {class_index}"),
        ),
        Err(e) => Check::new(name, false, e.to_string()),
    }
}

/// Built-in checks, independent of any external model.
pub fn run_builtin(seed: u64) -> Vec<Check> {
    vec![
        rasterization(seed),
        clipping(seed),
        oracles(),
        auc_sanity(),
        planted_disc(seed),
    ]
}
