use alloc::collections::BTreeMap;

use super::ray_root;
use crate::estimation::ConfidenceRegion;
use crate::nlp::Bounds;
use crate::prelude::*;
use crate::{Error, Result};

/// One connected piece of the level set `excess = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub id: usize,
    pub points: Vec<[f64; 2]>,
    /// Closed curves do not repeat their first vertex.
    pub closed: bool,
}

/// Grid edge: horizontal `(0, i, j)` joins nodes `(i, j)` and `(i+1, j)`,
/// vertical `(1, i, j)` joins `(i, j)` and `(i, j+1)`.
type EdgeKey = (u8, usize, usize);

/// Marching squares over `region` with `resolution` nodes per axis. Edge
/// crossings start from linear interpolation and are refined on the edge.
pub fn boundary_trace(cr: &ConfidenceRegion, region: &Bounds, resolution: usize) -> Result<Vec<Polyline>> {
    if cr.num_params() != 2 {
        return Err(Error::InvalidArgument(
            "boundary tracing needs two parameters".to_string(),
        ));
    }
    if resolution < 2 || !region.is_finite() {
        return Err(Error::InvalidArgument(
            "trace needs a finite box and resolution >= 2".to_string(),
        ));
    }
    let r = resolution;
    let hx = (region.upper[0] - region.lower[0]) / (r - 1) as f64;
    let hy = (region.upper[1] - region.lower[1]) / (r - 1) as f64;
    let xy = |i: usize, j: usize| [region.lower[0] + i as f64 * hx, region.lower[1] + j as f64 * hy];
    let mut v = vec![0.0; r * r];
    for j in 0..r {
        for i in 0..r {
            v[j * r + i] = cr.excess(&xy(i, j));
        }
    }
    let val = |i: usize, j: usize| v[j * r + i];
    let inside = |e: f64| e <= 0.0;

    let mut vertex: BTreeMap<EdgeKey, [f64; 2]> = BTreeMap::new();
    let mut links: BTreeMap<EdgeKey, Vec<EdgeKey>> = BTreeMap::new();
    let mut crossing = |key: EdgeKey| -> [f64; 2] {
        *vertex.entry(key).or_insert_with(|| {
            let (a, b) = match key {
                (0, i, j) => ((i, j), (i + 1, j)),
                (_, i, j) => ((i, j), (i, j + 1)),
            };
            let (pa, pb) = (xy(a.0, a.1), xy(b.0, b.1));
            let (ea, eb) = (val(a.0, a.1), val(b.0, b.1));
            // Walk from the inside node towards the outside one.
            let (pi, po) = if inside(ea) { (pa, pb) } else { (pb, pa) };
            let dir = [po[0] - pi[0], po[1] - pi[1]];
            let t = ray_root(|p| cr.excess(p), &pi, &dir, 1.0).unwrap_or_else(|| {
                let (ei, eo) = if inside(ea) { (ea, eb) } else { (eb, ea) };
                if eo.is_finite() {
                    ei / (ei - eo)
                } else {
                    0.5
                }
            });
            [pi[0] + t * dir[0], pi[1] + t * dir[1]]
        })
    };

    for j in 0..r - 1 {
        for i in 0..r - 1 {
            let c = [
                inside(val(i, j)),
                inside(val(i + 1, j)),
                inside(val(i + 1, j + 1)),
                inside(val(i, j + 1)),
            ];
            let bottom = (0u8, i, j);
            let right = (1u8, i + 1, j);
            let top = (0u8, i, j + 1);
            let left = (1u8, i, j);
            // Edges adjacent to each corner, in corner order.
            let corner_edges = [(left, bottom), (bottom, right), (right, top), (top, left)];
            let crossings = [c[0] != c[1], c[1] != c[2], c[2] != c[3], c[3] != c[0]];
            let count = crossings.iter().filter(|x| **x).count();
            let mut segs: Vec<(EdgeKey, EdgeKey)> = Vec::new();
            if count == 2 {
                let edges = [bottom, right, top, left];
                let hit: Vec<EdgeKey> = (0..4).filter(|k| crossings[*k]).map(|k| edges[k]).collect();
                segs.push((hit[0], hit[1]));
            } else if count == 4 {
                let mid = [
                    region.lower[0] + (i as f64 + 0.5) * hx,
                    region.lower[1] + (j as f64 + 0.5) * hy,
                ];
                let center_in = inside(cr.excess(&mid));
                for k in 0..4 {
                    if c[k] != center_in {
                        segs.push(corner_edges[k]);
                    }
                }
            }
            for (a, b) in segs {
                crossing(a);
                crossing(b);
                links.entry(a).or_default().push(b);
                links.entry(b).or_default().push(a);
            }
        }
    }

    let mut visited: BTreeMap<EdgeKey, bool> = links.keys().map(|k| (*k, false)).collect();
    let mut lines = Vec::new();
    // Open chains (ending on the box boundary) first, then cycles.
    let mut order: Vec<EdgeKey> = links.iter().filter(|(_, n)| n.len() == 1).map(|(k, _)| *k).collect();
    order.extend(links.iter().filter(|(_, n)| n.len() != 1).map(|(k, _)| *k));
    for start in order {
        if visited[&start] {
            continue;
        }
        let mut pts = vec![vertex[&start]];
        visited.insert(start, true);
        let mut prev = start;
        let mut cur = start;
        let closed;
        loop {
            let next = links[&cur].iter().copied().find(|k| !visited[k]);
            match next {
                Some(k) => {
                    visited.insert(k, true);
                    pts.push(vertex[&k]);
                    prev = cur;
                    cur = k;
                }
                None => {
                    closed = links[&cur].len() == 2 && links[&cur].contains(&start) && cur != start && prev != start;
                    break;
                }
            }
        }
        lines.push(Polyline {
            id: lines.len(),
            points: pts,
            closed,
        });
    }
    Ok(lines)
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut s = 0.0;
    for k in 0..n {
        let a = points[k];
        let b = points[(k + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s.abs()
}
