//! Dörfler marking.

use serde::{Deserialize, Serialize};

use crate::error::{AfemError, Result};
use crate::estimator::Indicators;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarkingStrategy {
    /// Minimal cardinality through a full sort.
    Minimal,
    /// Linear-time binning, at most twice the minimal cardinality.
    #[default]
    Binned,
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(AfemError::Parameter(format!(
            "marking parameter {theta} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Element ids by decreasing indicator, ties by increasing id.
fn sorted_desc(values: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..values.len()).collect();
    ids.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    ids
}

/// Smallest set `M` with `theta * eta^2 <= eta(M)^2`, largest indicators first.
pub fn doerfler_min(ind: &Indicators, theta: f64) -> Result<Vec<usize>> {
    check_theta(theta)?;
    let v = &ind.values;
    let order = sorted_desc(v);
    // summing in sorted order makes theta = 1 select exactly the non-zero indicators
    let total: f64 = order.iter().map(|&i| v[i]).sum();
    if total == 0.0 {
        return Ok(Vec::new());
    }
    let target = theta * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        if acc >= target || v[i] == 0.0 {
            break;
        }
        acc += v[i];
        out.push(i);
    }
    Ok(out)
}

/// Dörfler marking in linear time: indicators are grouped into dyadic bins
/// below the maximum, whole bins are taken until the last one, which is
/// filled element by element.
pub fn doerfler_binned(ind: &Indicators, theta: f64) -> Result<Vec<usize>> {
    check_theta(theta)?;
    let v = &ind.values;
    let max = v.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(Vec::new());
    }
    let total: f64 = v.iter().sum();
    if theta >= 1.0 {
        return Ok((0..v.len()).filter(|&i| v[i] > 0.0).collect());
    }
    let target = theta * total;
    // indicators below this bound are never needed: together they carry less
    // than (1 - theta) of the total
    let floor = (1.0 - theta) * total / v.len() as f64;
    let nbins = ((max / floor).log2().ceil().max(0.0) as usize + 1).min(1100);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); nbins];
    for (i, &x) in v.iter().enumerate() {
        if x > floor || (x > 0.0 && nbins == 1) {
            let b = ((max / x).log2().floor() as usize).min(nbins - 1);
            bins[b].push(i);
        }
    }
    let mut acc = 0.0;
    let mut out = Vec::new();
    for bin in bins {
        let sum: f64 = bin.iter().map(|&i| v[i]).sum();
        if acc + sum < target {
            acc += sum;
            out.extend(bin);
            continue;
        }
        for i in bin {
            if acc >= target {
                break;
            }
            acc += v[i];
            out.push(i);
        }
        break;
    }
    if acc < target {
        // rounding left the criterion short; fall back to the exact minimal set
        return doerfler_min(ind, theta);
    }
    out.sort_unstable();
    Ok(out)
}

pub fn mark(ind: &Indicators, theta: f64, strategy: MarkingStrategy) -> Result<Vec<usize>> {
    match strategy {
        MarkingStrategy::Minimal => doerfler_min(ind, theta),
        MarkingStrategy::Binned => doerfler_binned(ind, theta),
    }
}

/// Goal-oriented marking: the primal and dual Dörfler sets are cut to the
/// smaller cardinality and joined. When one of them is empty the union of the
/// full sets is used instead.
pub fn combined_mark(primal: &Indicators, dual: &Indicators, theta: f64) -> Result<Vec<usize>> {
    if primal.len() != dual.len() {
        return Err(AfemError::Parameter(
            "primal and dual indicators differ in length".into(),
        ));
    }
    let mu = doerfler_min(primal, theta)?;
    let mz = doerfler_min(dual, theta)?;
    let n = mu.len().min(mz.len());
    let mut out: Vec<usize> = if n == 0 {
        if !mu.is_empty() || !mz.is_empty() {
            log::warn!("one Dörfler set is empty; marking the union of both full sets");
        }
        mu.into_iter().chain(mz).collect()
    } else {
        mu[..n].iter().chain(&mz[..n]).copied().collect()
    };
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ind(v: &[f64]) -> Indicators {
        Indicators { values: v.to_vec() }
    }

    #[test]
    fn minimal_set_by_hand() {
        let i = ind(&[1.0, 5.0, 2.0, 2.0]);
        assert_eq!(doerfler_min(&i, 0.5).unwrap(), vec![1]);
        assert_eq!(doerfler_min(&i, 0.6).unwrap(), vec![1, 2]);
        assert_eq!(doerfler_min(&i, 1.0).unwrap().len(), 4);
    }

    #[test]
    fn theta_one_skips_zeros() {
        let i = ind(&[0.0, 1.0, 0.0, 3.0]);
        let mut m = doerfler_min(&i, 1.0).unwrap();
        m.sort();
        assert_eq!(m, vec![1, 3]);
        assert_eq!(doerfler_binned(&i, 1.0).unwrap(), vec![1, 3]);
    }

    #[test]
    fn zero_indicators_mark_nothing() {
        let i = ind(&[0.0; 5]);
        assert!(doerfler_min(&i, 0.5).unwrap().is_empty());
        assert!(doerfler_binned(&i, 0.5).unwrap().is_empty());
        assert!(combined_mark(&i, &i, 0.5).unwrap().is_empty());
    }

    #[test]
    fn invalid_theta() {
        assert!(doerfler_min(&ind(&[1.0]), 0.0).is_err());
        assert!(doerfler_binned(&ind(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn combined_uses_smaller_cardinality() {
        let u = ind(&[10.0, 1.0, 1.0, 1.0, 1.0]);
        let z = ind(&[1.0, 1.0, 1.0, 1.0, 10.0]);
        assert_eq!(combined_mark(&u, &z, 0.5).unwrap(), vec![0, 4]);
        let empty = ind(&[0.0; 5]);
        assert_eq!(combined_mark(&u, &empty, 0.5).unwrap(), vec![0]);
    }
}
