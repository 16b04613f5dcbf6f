//! Expansion and post-stratification.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Estimate, Target};
use crate::error::{Error, Result};
use crate::popgen::NonProbSample;

/// `N * ybar_B`.
pub fn expansion(b: &NonProbSample, population_size: usize) -> Result<Estimate> {
    if population_size < b.len() {
        return Err(Error::InconsistentInputs(format!(
            "N = {population_size} is smaller than n_B = {}",
            b.len()
        )));
    }
    let n = population_size as f64;
    Ok(Estimate::new("expansion", Target::Total, n * b.mean_y())
        .with_population_size(n)
        .assuming("constant mean (SP) or constant inclusion probability (QR)")
        .diag("n_b", b.len() as f64))
}

/// Per-cell `(n_xB, sum y, sum y^2)` after checking coverage of every
/// populated cell.
pub(crate) fn cell_moments(b: &NonProbSample, sizes: &[usize]) -> Result<Vec<(usize, f64, f64)>> {
    let mut cells = vec![(0usize, 0.0, 0.0); sizes.len()];
    for (&c, &y) in b.x.iter().zip(&b.y) {
        let cell = cells.get_mut(c).ok_or(Error::UnknownCell(c))?;
        cell.0 += 1;
        cell.1 += y;
        cell.2 += y * y;
    }
    for (c, (&nx, cell)) in sizes.iter().zip(&cells).enumerate() {
        if nx > 0 && cell.0 == 0 {
            return Err(Error::EmptyCell { cell: c, population_size: nx as f64 });
        }
        if cell.0 > nx {
            return Err(Error::InconsistentInputs(format!(
                "cell {c}: n_xB = {} exceeds N_x = {nx}",
                cell.0
            )));
        }
    }
    Ok(cells)
}

/// `sum_x N_x * ybar_xB`.
pub fn post_stratified(b: &NonProbSample, stratum_sizes: &[usize]) -> Result<Estimate> {
    let cells = cell_moments(b, stratum_sizes)?;
    let value: f64 = cells
        .iter()
        .zip(stratum_sizes)
        .filter(|(c, _)| c.0 > 0)
        .map(|(c, &nx)| nx as f64 * c.1 / c.0 as f64)
        .sum();
    let n: usize = stratum_sizes.iter().sum();
    Ok(Estimate::new("post_stratified", Target::Total, value)
        .with_population_size(n as f64)
        .assuming("non-informative selection within each post-stratum")
        .diag("cells", stratum_sizes.iter().filter(|&&s| s > 0).count() as f64))
}

/// Merges post-strata: `mapping[old] = new`. Returns the relabelled sample
/// and the merged stratum sizes.
pub fn collapse_cells(
    b: &NonProbSample,
    stratum_sizes: &[usize],
    mapping: &[usize],
) -> Result<(NonProbSample, Vec<usize>)> {
    if mapping.len() != stratum_sizes.len() {
        return Err(Error::LengthMismatch { expected: stratum_sizes.len(), found: mapping.len() });
    }
    let k = mapping.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for (old, &new) in mapping.iter().enumerate() {
        sizes[new] += stratum_sizes[old];
    }
    let x = b
        .x
        .iter()
        .map(|&c| mapping.get(c).copied().ok_or(Error::UnknownCell(c)))
        .collect::<Result<Vec<_>>>()?;
    let merged = NonProbSample::new(b.members.clone(), b.y.clone(), x, b.z.clone())?;
    Ok((merged, sizes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(y: &[f64], x: &[usize]) -> NonProbSample {
        NonProbSample::new((0..y.len()).collect(), y.to_vec(), x.to_vec(), None).unwrap()
    }

    #[test]
    fn expansion_arithmetic() {
        let b = sample(&[2.0, 4.0], &[0, 0]);
        assert_eq!(expansion(&b, 10).unwrap().value, 30.0);
        assert!(matches!(expansion(&b, 1), Err(Error::InconsistentInputs(_))));
    }

    #[test]
    fn constant_outcome_expands_exactly() {
        let b = sample(&[3.5; 7], &[0; 7]);
        assert_eq!(expansion(&b, 40).unwrap().value, 140.0);
    }

    #[test]
    fn post_stratified_arithmetic() {
        let b = sample(&[4.0, 6.0, 10.0], &[0, 0, 1]);
        let e = post_stratified(&b, &[6, 4]).unwrap();
        assert_eq!(e.value, 70.0);
        assert_eq!(e.mean(), Some(7.0));
    }

    #[test]
    fn single_stratum_matches_expansion() {
        let b = sample(&[1.0, 2.0, 6.0], &[0, 0, 0]);
        assert_eq!(post_stratified(&b, &[12]).unwrap().value, expansion(&b, 12).unwrap().value);
    }

    #[test]
    fn empty_cell_is_named() {
        let b = sample(&[1.0, 2.0], &[0, 0]);
        match post_stratified(&b, &[5, 3]) {
            Err(Error::EmptyCell { cell, .. }) => assert_eq!(cell, 1),
            other => panic!("{other:?}"),
        }
        let (merged, sizes) = collapse_cells(&b, &[5, 3], &[0, 0]).unwrap();
        assert_eq!(sizes, vec![8]);
        assert_eq!(post_stratified(&merged, &sizes).unwrap().value, 12.0);
    }
}
