//! Monte Carlo saliency: sum the masks of the good part of the final
//! population and normalize by the busiest pixel.

use thiserror::Error;

use crate::de::Population;
use crate::genome::{rasterize, BinaryMask, Individual};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("no candidates to aggregate")]
    NoCandidates,
    #[error("all candidate masks are empty; saliency cannot be normalized")]
    Degenerate,
    #[error("saliency map needs {expected} values, got {got}")]
    Size { expected: usize, got: usize },
    #[error("saliency value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
}

/// H x W grayscale importance map with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, AggregationError> {
        if values.len() != height * width {
            return Err(AggregationError::Size {
                expected: height * width,
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(AggregationError::OutOfRange { index, value });
        }
        Ok(SaliencyMap {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Share of total mass that falls on `region` pixels.
    pub fn mass_fraction(&self, region: &[bool]) -> f64 {
        let total: f64 = self.values.iter().sum();
        let inside: f64 = self
            .values
            .iter()
            .zip(region)
            .filter(|(_, &r)| r)
            .map(|(v, _)| v)
            .sum();
        if total > 0.0 {
            inside / total
        } else {
            0.0
        }
    }
}

/// Individuals above `2/3` of the mean fitness.
///
/// When the mean is not positive that threshold no longer separates the
/// better part of the population, so `fitness >= mean` is used instead.
/// The best individual always qualifies.
pub fn select_candidates(pop: &Population) -> Result<Vec<Individual>, AggregationError> {
    select_by_fitness(&pop.individuals)
}

pub fn select_by_fitness(individuals: &[Individual]) -> Result<Vec<Individual>, AggregationError> {
    if individuals.is_empty() {
        return Err(AggregationError::EmptyPopulation);
    }
    let fit: Vec<f64> = individuals
        .iter()
        .map(|i| i.fitness().expect("candidate without fitness"))
        .collect();
    let keep = candidate_filter(&fit);
    Ok(individuals
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(i, _)| i.clone())
        .collect())
}

/// Selection decision per fitness value.
pub fn candidate_filter(fitness: &[f64]) -> Vec<bool> {
    let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
    let max = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mean > 0.0 {
        let threshold = 2.0 * mean / 3.0;
        fitness.iter().map(|&f| f > threshold).collect()
    } else {
        // rounding can put the computed mean above every member of a
        // constant population
        let threshold = mean.min(max);
        fitness.iter().map(|&f| f >= threshold).collect()
    }
}

/// Coverage count of each pixel divided by the largest count.
pub fn aggregate(
    candidates: &[Individual],
    height: usize,
    width: usize,
) -> Result<SaliencyMap, AggregationError> {
    let masks: Vec<BinaryMask> = candidates
        .iter()
        .map(|c| rasterize(c, height, width))
        .collect();
    aggregate_masks(&masks, height, width)
}

pub fn aggregate_masks(
    masks: &[BinaryMask],
    height: usize,
    width: usize,
) -> Result<SaliencyMap, AggregationError> {
    if masks.is_empty() {
        return Err(AggregationError::NoCandidates);
    }
    let mut counts = vec![0u32; height * width];
    for m in masks {
        assert_eq!((m.height(), m.width()), (height, width), "mask shape");
        for (c, &b) in counts.iter_mut().zip(m.bits()) {
            *c += u32::from(b);
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(AggregationError::Degenerate);
    }
    let max = f64::from(max);
    Ok(SaliencyMap {
        height,
        width,
        values: counts.into_iter().map(|c| f64::from(c) / max).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::clip_genes;

    fn with_fitness(values: &[f64]) -> Vec<Individual> {
        values
            .iter()
            .map(|&f| {
                let mut ind = clip_genes(&[0.0, 0.0, 5.0, 5.0, 0.0], 24, 24).unwrap();
                ind.set_fitness(f);
                ind
            })
            .collect()
    }

    fn selected(values: &[f64]) -> Vec<f64> {
        select_by_fitness(&with_fitness(values))
            .unwrap()
            .iter()
            .map(|i| i.fitness().unwrap())
            .collect()
    }

    #[test]
    fn two_thirds_rule() {
        assert_eq!(selected(&[3.0, 3.0, 3.0]), vec![3.0, 3.0, 3.0]);
        assert_eq!(selected(&[0.9, 0.6, 0.3]), vec![0.9, 0.6]);
    }

    #[test]
    fn negative_mean_fallback() {
        assert_eq!(selected(&[-1.0, -2.0, -3.0]), vec![-1.0, -2.0]);
        assert_eq!(selected(&[-0.1, -0.1, -0.1]).len(), 3);
        assert_eq!(selected(&[0.0, 0.0]).len(), 2);
    }

    #[test]
    fn constant_positive_population_is_kept() {
        assert_eq!(selected(&[0.1, 0.1, 0.1]).len(), 3);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(
            select_by_fitness(&[]),
            Err(AggregationError::EmptyPopulation)
        );
        assert_eq!(aggregate(&[], 24, 24), Err(AggregationError::NoCandidates));
        assert_eq!(
            aggregate_masks(&[BinaryMask::zeros(24, 24)], 24, 24),
            Err(AggregationError::Degenerate)
        );
    }

    #[test]
    fn single_and_duplicate_candidates() {
        let ind = clip_genes(&[3.0, 4.0, 9.0, 8.0, 0.3], 24, 24).unwrap();
        let mask = rasterize(&ind, 24, 24);
        for cands in [vec![ind.clone()], vec![ind.clone(), ind.clone()]] {
            let sm = aggregate(&cands, 24, 24).unwrap();
            let expected: Vec<f64> = mask
                .bits()
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect();
            assert_eq!(sm.values(), &expected[..]);
        }
    }

    #[test]
    fn saliency_map_validation() {
        assert!(SaliencyMap::new(2, 2, vec![0.0; 3]).is_err());
        assert!(SaliencyMap::new(2, 2, vec![0.0, 0.5, 1.0, 1.1]).is_err());
        let sm = SaliencyMap::new(2, 2, vec![0.0, 0.5, 1.0, 0.5]).unwrap();
        assert_eq!(sm.mass_fraction(&[false, false, true, false]), 0.5);
    }
}
