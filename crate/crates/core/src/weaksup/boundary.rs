//! Cubic boundary fitting and road-edge extraction.

use nalgebra::{Matrix4, Vector4};

use crate::grid::{LabelGrid, SemanticClass};
use crate::weaksup::{LaneBoundary, WeaksupError};

/// Least-squares cubic fit lateral = poly(forward) over a marker cluster.
///
/// The system is solved in a normalized forward basis for conditioning; a
/// ridge term (relative weight `ridge`) is added only if the plain normal
/// equations are singular.
pub fn fit_boundary(
    cluster: &[(f64, f64)],
    cluster_id: usize,
    min_span: f64,
    ridge: f64,
) -> Result<LaneBoundary, WeaksupError> {
    if cluster.len() < 4 {
        return Err(WeaksupError::RankDeficient(format!(
            "{} points, need at least 4",
            cluster.len()
        )));
    }
    let (z_lo, z_hi) = cluster
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, z)| {
            (lo.min(z), hi.max(z))
        });
    let span = z_hi - z_lo;
    if span < min_span {
        return Err(WeaksupError::SpanTooShort { span, min: min_span });
    }

    // Normalize forward to s in [-1, 1].
    let mid = 0.5 * (z_lo + z_hi);
    let half = 0.5 * span;
    let mut gram = Matrix4::<f64>::zeros();
    let mut rhs = Vector4::<f64>::zeros();
    for &(lat, z) in cluster {
        let s = (z - mid) / half;
        let basis = Vector4::new(1.0, s, s * s, s * s * s);
        gram += basis * basis.transpose();
        rhs += basis * lat;
    }
    let solve = |g: Matrix4<f64>| g.lu().solve(&rhs);
    let normalized = match solve(gram) {
        Some(x) => x,
        None => {
            let reg = ridge * gram.trace() / 4.0;
            solve(gram + Matrix4::identity() * reg).ok_or_else(|| {
                WeaksupError::RankDeficient("normal equations singular".into())
            })?
        }
    };

    // Expand b0 + b1 s + b2 s^2 + b3 s^3 with s = (z - mid)/half into the
    // raw-z basis.
    let (b0, b1, b2, b3) = (normalized[0], normalized[1], normalized[2], normalized[3]);
    let (h1, h2, h3) = (half, half * half, half * half * half);
    let (m1, m2, m3) = (mid, mid * mid, mid * mid * mid);
    let coefficients = [
        b0 - b1 * m1 / h1 + b2 * m2 / h2 - b3 * m3 / h3,
        b1 / h1 - 2.0 * b2 * m1 / h2 + 3.0 * b3 * m2 / h3,
        b2 / h2 - 3.0 * b3 * m1 / h3,
        b3 / h3,
    ];

    let boundary = LaneBoundary {
        coefficients,
        z_range: (z_lo, z_hi),
        cluster_id,
        rms_residual: 0.0,
    };
    let sse: f64 = cluster
        .iter()
        .map(|&(lat, z)| {
            let e = boundary.lateral_at(z) - lat;
            e * e
        })
        .sum();
    Ok(LaneBoundary {
        rms_residual: (sse / cluster.len() as f64).sqrt(),
        ..boundary
    })
}

/// Left and right road-edge polylines: per grid row, the leftmost and
/// rightmost drivable (Road or Lane) cell centers, lateral-smoothed by a
/// moving median over 5 rows. Points are ordered by increasing forward.
pub fn road_boundary(
    grid: &LabelGrid,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>), WeaksupError> {
    let spec = grid.spec();
    let drivable = |r: usize, c: usize| {
        matches!(
            grid.class_at(r, c),
            SemanticClass::Road | SemanticClass::Lane
        )
    };
    // Rows scanned bottom-up so output is ordered by forward.
    let mut left = Vec::new();
    let mut right = Vec::new();
    for row in (0..spec.rows).rev() {
        let first = (0..spec.cols).find(|&c| drivable(row, c));
        let Some(first) = first else { continue };
        let last = (0..spec.cols).rev().find(|&c| drivable(row, c)).unwrap();
        left.push(spec.cell_center(row, first));
        right.push(spec.cell_center(row, last));
    }
    if left.is_empty() {
        return Err(WeaksupError::NoRoad);
    }
    Ok((median_smooth(&left, 5), median_smooth(&right, 5)))
}

/// Moving median of the lateral coordinate over a centered window; the
/// window truncates at the ends.
fn median_smooth(poly: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    let half = window / 2;
    poly.iter()
        .enumerate()
        .map(|(i, &(_, fwd))| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(poly.len());
            let mut laterals: Vec<f64> = poly[lo..hi].iter().map(|p| p.0).collect();
            laterals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = laterals.len();
            let median = if n % 2 == 1 {
                laterals[n / 2]
            } else {
                0.5 * (laterals[n / 2 - 1] + laterals[n / 2])
            };
            (median, fwd)
        })
        .collect()
}
