//! Ellipse-union mask genome.
//!
//! An individual is `K` rotated ellipses, each encoded as five reals
//! `[x0, y0, x1, y1, r]`: the corners of the axis-aligned box the ellipse is
//! inscribed in (columns for `x`, rows for `y`) and a rotation about the box
//! center. The union of the ellipses is the binary mask that keeps pixels.

use std::f64::consts::PI;

use thiserror::Error;

/// Number of reals per ellipse.
pub const GENES_PER_ELLIPSE: usize = 5;

/// Images smaller than this on either side make the minimum span degenerate.
pub const MIN_IMAGE_SIDE: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenomeError {
    #[error("gene vector has length {got}, expected {expected} (5 per ellipse)")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("image of {height}x{width} is too small for ellipse constraints (minimum side {MIN_IMAGE_SIDE})")]
    InvalidGeometry { height: usize, width: usize },
}

/// One rotated ellipse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseGene {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    /// Rotation in radians, kept in `[0, π)`.
    pub r: f64,
}

impl EllipseGene {
    pub fn from_slice(g: &[f64]) -> Self {
        EllipseGene {
            x0: g[0],
            y0: g[1],
            x1: g[2],
            y1: g[3],
            r: g[4],
        }
    }

    pub fn to_array(self) -> [f64; GENES_PER_ELLIPSE] {
        [self.x0, self.y0, self.x1, self.y1, self.r]
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Semi-axes along the (unrotated) x and y directions.
    pub fn semi_axes(&self) -> (f64, f64) {
        (
            (self.x1 - self.x0).abs() / 2.0,
            (self.y1 - self.y0).abs() / 2.0,
        )
    }

    /// Closed point-in-ellipse test for a point given in (x = column, y = row).
    #[inline]
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (cx, cy) = self.center();
        let (a, b) = self.semi_axes();
        let (sin, cos) = self.r.sin_cos();
        let dx = px - cx;
        let dy = py - cy;
        // rotate the offset by -r into the ellipse frame
        let u = cos * dx + sin * dy;
        let v = -sin * dx + cos * dy;
        let t = (u / a) * (u / a) + (v / b) * (v / b);
        t <= 1.0
    }
}

/// Span limits for a given image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanLimits {
    pub min: f64,
    pub max: f64,
}

impl SpanLimits {
    /// `side/20 ..= side/4` where `side = min(H, W)`.
    pub fn for_image(height: usize, width: usize) -> Result<Self, GenomeError> {
        let side = height.min(width);
        if side < MIN_IMAGE_SIDE {
            return Err(GenomeError::InvalidGeometry { height, width });
        }
        let side = side as f64;
        Ok(SpanLimits {
            min: side / 20.0,
            max: side / 4.0,
        })
    }
}

/// A candidate mask: exactly `K` ellipses plus a cached fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    genes: Vec<EllipseGene>,
    fitness: Option<f64>,
}

impl Individual {
    pub fn genes(&self) -> &[EllipseGene] {
        &self.genes
    }

    pub fn k(&self) -> usize {
        self.genes.len()
    }

    /// Cached fitness, `None` until evaluated.
    pub fn fitness(&self) -> Option<f64> {
        self.fitness
    }

    pub fn set_fitness(&mut self, fitness: f64) {
        self.fitness = Some(fitness);
    }

    /// Flat `5K` vector in ellipse-major, field-minor order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.genes.iter().flat_map(|g| g.to_array()).collect()
    }
}

/// Clamp `v` into `[lo, hi]`, mapping NaN to `lo`.
fn clamp_coord(v: f64, hi: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, hi)
    }
}

/// Canonicalize and constrain one axis of a box so that
/// `0 <= lo <= hi <= extent` and `limits.min <= hi - lo <= limits.max`
/// hold exactly in floating point.
fn clip_axis(a: f64, b: f64, extent: f64, limits: SpanLimits) -> (f64, f64) {
    let a = clamp_coord(a, extent);
    let b = clamp_coord(b, extent);
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };

    if hi - lo < limits.min {
        hi = lo + limits.min;
        while hi - lo < limits.min {
            hi = hi.next_up();
        }
        if hi > extent {
            hi = extent;
            lo = extent - limits.min;
            while hi - lo < limits.min && lo > 0.0 {
                lo = lo.next_down();
            }
            lo = lo.max(0.0);
        }
    } else if hi - lo > limits.max {
        hi = lo + limits.max;
        while hi - lo > limits.max {
            hi = hi.next_down();
        }
    }
    (lo, hi)
}

/// Wrap an angle into `[0, π)`; non-finite angles map to 0.
pub fn wrap_angle(r: f64) -> f64 {
    if !r.is_finite() {
        return 0.0;
    }
    let w = r.rem_euclid(PI);
    if w >= PI {
        0.0
    } else {
        w
    }
}

/// Turn a raw `5K` vector into a valid individual for an `H x W` image.
///
/// Box corners are ordered per axis, clamped into the image, and the side
/// lengths forced into `[min(H,W)/20, min(H,W)/4]` by moving the far corner
/// (or the near corner when the far one would leave the image). Valid
/// input passes through bit-identically.
pub fn clip_genes(raw: &[f64], height: usize, width: usize) -> Result<Individual, GenomeError> {
    if raw.is_empty() || !raw.len().is_multiple_of(GENES_PER_ELLIPSE) {
        return Err(GenomeError::DimensionMismatch {
            expected: (raw.len() / GENES_PER_ELLIPSE).max(1) * GENES_PER_ELLIPSE,
            got: raw.len(),
        });
    }
    let limits = SpanLimits::for_image(height, width)?;
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;

    let genes = raw
        .chunks_exact(GENES_PER_ELLIPSE)
        .map(|g| {
            let (x0, x1) = clip_axis(g[0], g[2], max_x, limits);
            let (y0, y1) = clip_axis(g[1], g[3], max_y, limits);
            EllipseGene {
                x0,
                y0,
                x1,
                y1,
                r: wrap_angle(g[4]),
            }
        })
        .collect();
    Ok(Individual {
        genes,
        fitness: None,
    })
}

/// [`clip_genes`] with an explicit expected ellipse count.
pub fn clip_genes_k(
    raw: &[f64],
    k: usize,
    height: usize,
    width: usize,
) -> Result<Individual, GenomeError> {
    if raw.len() != k * GENES_PER_ELLIPSE {
        return Err(GenomeError::DimensionMismatch {
            expected: k * GENES_PER_ELLIPSE,
            got: raw.len(),
        });
    }
    clip_genes(raw, height, width)
}

/// H x W grid of kept (`true`) / eliminated (`false`) pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                bits.push(f(i, j));
            }
        }
        BinaryMask {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pixel-wise OR; panics on shape mismatch.
    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.height, self.width), (other.height, other.width));
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }
}

/// Paint one ellipse into `mask`, visiting only rows and columns that can
/// intersect its rotated bounding box.
fn paint_ellipse(mask: &mut BinaryMask, gene: &EllipseGene) {
    let (cx, cy) = gene.center();
    let (a, b) = gene.semi_axes();
    let (sin, cos) = gene.r.sin_cos();
    let ex = ((a * cos).powi(2) + (b * sin).powi(2)).sqrt();
    let ey = ((a * sin).powi(2) + (b * cos).powi(2)).sqrt();

    // pixel j has center j + 0.5; pad by one pixel against rounding
    let range = |c: f64, e: f64, n: usize| -> (usize, usize) {
        let lo = (c - e - 1.5).floor().max(0.0) as usize;
        let hi = ((c + e + 0.5).ceil().max(0.0) as usize).min(n);
        (lo.min(n), hi)
    };
    let (j0, j1) = range(cx, ex, mask.width);
    let (i0, i1) = range(cy, ey, mask.height);

    for i in i0..i1 {
        let py = i as f64 + 0.5;
        for j in j0..j1 {
            let idx = i * mask.width + j;
            if !mask.bits[idx] && gene.contains(j as f64 + 0.5, py) {
                mask.bits[idx] = true;
            }
        }
    }
}

/// Union of an individual's ellipses, sampled at pixel centers.
pub fn rasterize(ind: &Individual, height: usize, width: usize) -> BinaryMask {
    rasterize_genes(ind.genes(), height, width)
}

pub fn rasterize_genes(genes: &[EllipseGene], height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(height, width);
    for gene in genes {
        paint_ellipse(&mut mask, gene);
    }
    mask
}

/// Fraction of kept pixels.
pub fn mask_fraction(mask: &BinaryMask) -> f64 {
    if mask.bits.is_empty() {
        return 0.0;
    }
    mask.count() as f64 / mask.bits.len() as f64
}
