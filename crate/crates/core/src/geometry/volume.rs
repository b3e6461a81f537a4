use crate::estimation::ConfidenceRegion;
use crate::nlp::Bounds;
use crate::prelude::*;
use crate::{Error, Result};

pub const DEFAULT_NODE_BUDGET: u64 = 50_000_000;

/// Gridded volume: `count * epsilon^n_p` over member nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVolume {
    pub epsilon: f64,
    pub count: u64,
    pub phi_d_hat: f64,
    pub region: Bounds,
    pub nodes: u64,
}

/// Node coordinates along one axis: `lo, lo + eps, ...` below `hi`, then `hi`.
fn axis_nodes(lo: f64, hi: f64, eps: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut k = 0u64;
    loop {
        let x = lo + k as f64 * eps;
        if x >= hi - 1e-12 * eps {
            break;
        }
        v.push(x);
        k += 1;
    }
    v.push(hi);
    v
}

pub fn grid_volume(cr: &ConfidenceRegion, region: &Bounds, epsilon: f64) -> Result<GridVolume> {
    grid_volume_with_budget(cr, region, epsilon, DEFAULT_NODE_BUDGET)
}

/// Counts member nodes of the grid anchored at `region.lower` with spacing
/// `epsilon`; the last node per axis is clamped to `region.upper`.
pub fn grid_volume_with_budget(
    cr: &ConfidenceRegion,
    region: &Bounds,
    epsilon: f64,
    budget: u64,
) -> Result<GridVolume> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument("epsilon must be positive".to_string()));
    }
    let n = cr.num_params();
    if region.len() != n || !region.is_finite() {
        return Err(Error::InvalidArgument("volume box must be finite".to_string()));
    }
    let mut nodes = 1u64;
    for j in 0..n {
        let per = ((region.upper[j] - region.lower[j]) / epsilon).floor() as u64 + 2;
        nodes = nodes.saturating_mul(per);
    }
    if nodes > budget {
        return Err(Error::GridBudget { nodes, budget });
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|j| axis_nodes(region.lower[j], region.upper[j], epsilon))
        .collect();
    let total: u64 = axes.iter().map(|a| a.len() as u64).product();
    let tol = cr.tolerance();
    let mut idx = vec![0usize; n];
    let mut p: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut count = 0u64;
    for _ in 0..total {
        for j in 0..n {
            p[j] = axes[j][idx[j]];
        }
        if cr.excess(&p) <= tol {
            count += 1;
        }
        for j in 0..n {
            idx[j] += 1;
            if idx[j] < axes[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(GridVolume {
        epsilon,
        count,
        phi_d_hat: count as f64 * epsilon.powi(n as i32),
        region: region.clone(),
        nodes: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_nodes_clamp_last() {
        let v = axis_nodes(0.0, 1.0, 0.3);
        assert_eq!(v.len(), 5);
        assert_eq!(*v.last().unwrap(), 1.0);
        let v = axis_nodes(0.0, 1.0, 0.25);
        assert_eq!(v, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
