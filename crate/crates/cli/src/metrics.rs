use std::collections::HashSet;

use detlsh::{Neighbor, PointId};

use crate::{CliError, Result};

/// `|R ∩ R*| / k`.
pub fn recall(result: &[PointId], truth: &[PointId]) -> Result<f64> {
    if result.len() != truth.len() || truth.is_empty() {
        return Err(CliError::Parameter(format!(
            "recall needs two non-empty lists of equal size, got {} and {}",
            result.len(),
            truth.len()
        )));
    }
    let truth: HashSet<_> = truth.iter().collect();
    let hits = result
        .iter()
        .collect::<HashSet<_>>()
        .intersection(&truth)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean of per-rank distance ratios. A zero true distance counts as ratio 1
/// when the result distance is also zero and as infinity otherwise.
pub fn overall_ratio(result: &[Neighbor], truth: &[Neighbor]) -> Result<f64> {
    if result.len() != truth.len() || truth.is_empty() {
        return Err(CliError::Parameter(format!(
            "overall ratio needs two non-empty lists of equal size, got {} and {}",
            result.len(),
            truth.len()
        )));
    }
    let sum: f64 = result
        .iter()
        .zip(truth)
        .map(|(r, t)| {
            if t.distance > 0.0 {
                r.distance / t.distance
            } else if r.distance == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        })
        .sum();
    Ok(sum / truth.len() as f64)
}

/// `S_p = T_1 / T_p`.
pub fn speedup(t1: f64, tp: f64) -> Result<f64> {
    if !(tp > 0.0) {
        return Err(CliError::Parameter(format!(
            "parallel time must be positive, got {tp}"
        )));
    }
    Ok(t1 / tp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(ds: &[f64]) -> Vec<Neighbor> {
        ds.iter()
            .enumerate()
            .map(|(i, &d)| Neighbor::new(i as PointId, d))
            .collect()
    }

    #[test]
    fn recall_examples() {
        let truth: Vec<PointId> = (0..50).collect();
        assert_eq!(recall(&truth, &truth).unwrap(), 1.0);
        let disjoint: Vec<PointId> = (100..150).collect();
        assert_eq!(recall(&disjoint, &truth).unwrap(), 0.0);
        let half: Vec<PointId> = (25..75).collect();
        assert_eq!(recall(&half, &truth).unwrap(), 0.5);
        assert!(recall(&truth[..3], &truth).is_err());
    }

    #[test]
    fn ratio_examples() {
        let truth = ns(&[1.0, 2.0, 3.0]);
        assert_eq!(overall_ratio(&truth, &truth).unwrap(), 1.0);
        assert_eq!(overall_ratio(&ns(&[2.0, 4.0, 6.0]), &truth).unwrap(), 2.0);
        assert_eq!(
            overall_ratio(&ns(&[1.0, 3.0]), &ns(&[1.0, 2.0])).unwrap(),
            1.25
        );
        assert_eq!(
            overall_ratio(&ns(&[0.0, 1.0]), &ns(&[0.0, 1.0])).unwrap(),
            1.0
        );
        assert!(overall_ratio(&ns(&[0.5]), &ns(&[0.0]))
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn speedup_examples() {
        assert_eq!(speedup(10.0, 5.0).unwrap(), 2.0);
        assert_eq!(speedup(3.5, 3.5).unwrap(), 1.0);
        assert!(speedup(1.0, 0.0).is_err());
        assert!(speedup(1.0, -2.0).is_err());
    }
}
