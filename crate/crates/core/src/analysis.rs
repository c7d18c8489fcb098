//! Distribution-gap diagnostics: PCA projections, cross-dataset nearest-neighbor
//! distances and nearest-neighbor training subsets.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::types::{Dataset, DistanceClass, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `dim`.
    pub components: Vec<Vec<f64>>,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// Trace of the covariance matrix.
    pub total_variance: f64,
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Completes `basis` with unit vectors orthogonal to it (Gram-Schmidt over the standard basis).
fn complete_basis(basis: &mut Vec<Vec<f64>>, dim: usize, want: usize) {
    for e in 0..dim {
        if basis.len() >= want {
            break;
        }
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        for _ in 0..2 {
            for b in basis.iter() {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
}

/// Top-`k` principal components of the sample covariance (divisor `n - 1`).
///
/// With fewer samples than dimensions the decomposition runs on the `n x n`
/// Gram matrix instead of the `dim x dim` covariance.
pub fn pca_fit(rows: &[&[f64]], k: usize) -> Result<PcaModel> {
    let n = rows.len();
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    if k == 0 || k > dim {
        return Err(Error::Config(format!("PCA needs 1 <= k <= {dim} components, got {k}")));
    }
    if n < k + 1 {
        return Err(Error::Config(format!("PCA with k = {k} needs at least {} samples, got {n}", k + 1)));
    }
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("PCA rows differ in length".into()));
    }
    let mut mean = vec![0.0; dim];
    for r in rows {
        mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let scale = 1.0 / (n - 1) as f64;
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() * scale;

    let (mut pairs, dual) = if n < dim {
        let gram = (&centered * centered.transpose()) * scale;
        (eigen_pairs(gram), true)
    } else {
        let cov = (centered.transpose() * &centered) * scale;
        (eigen_pairs(cov), false)
    };
    pairs.truncate(k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let tiny = 1e-12 * total_variance.max(f64::MIN_POSITIVE);
    for (lambda, u) in pairs {
        let v: Vec<f64> = if dual {
            if lambda <= tiny {
                break;
            }
            // v = Xc^T u / sqrt((n - 1) lambda)
            let norm = ((n - 1) as f64 * lambda).sqrt();
            (0..dim)
                .map(|j| (0..n).map(|i| centered[(i, j)] * u[i]).sum::<f64>() / norm)
                .collect()
        } else {
            u
        };
        eigenvalues.push(lambda);
        components.push(v);
    }
    let have = components.len();
    complete_basis(&mut components, dim, k);
    eigenvalues.resize(components.len(), 0.0);
    debug_assert_eq!(components.len(), k, "{have} computed");
    for c in &mut components {
        canonical_sign(c);
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        total_variance,
    })
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending and clamped at zero.
fn eigen_pairs(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l.max(0.0), eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

impl PcaModel {
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Shape(format!("PCA fitted on width {}, got {}", self.mean.len(), x.len())));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, v), m)| c * (v - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, w) in self.components.iter().zip(z) {
            x.iter_mut().zip(c).for_each(|(x, c)| *x += w * c);
        }
        x
    }
}

pub fn pca_project(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    model.project(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnGapReport {
    pub pairs: usize,
    /// Mean distance from each `b` sample to its nearest `a` sample.
    pub mean_l2: f64,
    /// Same, restricted to pairs whose classes differ; 0 when there are none.
    pub mismatched_mean_l2: f64,
    /// Same, restricted to pairs with equal classes; 0 when there are none.
    pub matched_mean_l2: f64,
    pub mismatch_fraction: f64,
}

impl NnGapReport {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat struct serializes")
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_widths<S: Sample>(a: &[S], b: &[S]) -> Result<usize> {
    let w = a
        .first()
        .or(b.first())
        .map(|s| s.features().len())
        .ok_or_else(|| Error::Config("nearest-neighbor search on empty datasets".into()))?;
    if let Some(s) = a.iter().chain(b).find(|s| s.features().len() != w) {
        return Err(Error::Shape(format!("feature width {} != {w}", s.features().len())));
    }
    Ok(w)
}

/// Index of the nearest `a` sample to `x` (lowest index on ties) and its distance.
pub fn nearest<S: Sample>(a: &[S], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, s) in a.iter().enumerate() {
        let d = l2(s.features(), x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// For every sample of `b`, its nearest neighbor in `a` by exhaustive search.
pub fn nn_gap<S: Sample>(a: &[S], b: &[S]) -> Result<NnGapReport> {
    check_widths(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("nn-gap needs two non-empty datasets".into()));
    }
    let (mut sum, mut mis_sum, mut mis) = (0.0, 0.0, 0usize);
    for s in b {
        let (i, d) = nearest(a, s.features());
        sum += d;
        if a[i].label() != s.label() {
            mis_sum += d;
            mis += 1;
        }
    }
    let n = b.len();
    let mean = |s: f64, k: usize| if k > 0 { s / k as f64 } else { 0.0 };
    Ok(NnGapReport {
        pairs: n,
        mean_l2: sum / n as f64,
        mismatched_mean_l2: mean(mis_sum, mis),
        matched_mean_l2: mean(sum - mis_sum, n - mis),
        mismatch_fraction: mis as f64 / n as f64,
    })
}

/// Sorted indices of the union over `b` of the `m` nearest `a` samples.
pub fn optimal_subset_indices<S: Sample>(a: &[S], b: &[S], m: usize) -> Result<Vec<usize>> {
    if a.len() < m {
        return Err(Error::Config(format!("optimal subset needs at least {m} samples, got {}", a.len())));
    }
    if b.is_empty() || m == 0 {
        return Ok(Vec::new());
    }
    check_widths(a, b)?;
    let mut keep = vec![false; a.len()];
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(a.len());
    for s in b {
        dist.clear();
        dist.extend(a.iter().enumerate().map(|(i, x)| (l2(x.features(), s.features()), i)));
        let cmp = |p: &(f64, usize), q: &(f64, usize)| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1));
        if m < dist.len() {
            dist.select_nth_unstable_by(m - 1, cmp);
        }
        for &(_, i) in &dist[..m] {
            keep[i] = true;
        }
    }
    Ok((0..a.len()).filter(|&i| keep[i]).collect())
}

pub fn optimal_subset<S: Sample + Clone>(a: &Dataset<S>, b: &Dataset<S>, m: usize) -> Result<Dataset<S>> {
    let idx = optimal_subset_indices(&a.samples, &b.samples, m)?;
    Ok(Dataset {
        samples: idx.into_iter().map(|i| a.samples[i].clone()).collect(),
        vocab: a.vocab.clone(),
        normalizer: a.normalizer.clone(),
        split: a.split,
    })
}

/// Fill color per distance class.
pub const CLASS_COLORS: [&str; 4] = ["#d62728", "#ff7f0e", "#2ca02c", "#1f77b4"];

/// Renders a class-colored PC1/PC2 scatter.
pub fn scatter_svg(points: &[(f64, f64, DistanceClass)], title: &str) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Config("scatter plot needs at least one point".into()));
    }
    let (w, h, pad) = (640.0, 480.0, 50.0);
    let span = |f: fn(&(f64, f64, DistanceClass)) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) }
    };
    let (x0, x1) = span(|p| p.0);
    let (y0, y1) = span(|p| p.1);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let escaped = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{escaped}</text>"#, w / 2.0).unwrap();
    writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad).unwrap();
    writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">PC1</text>"#, w / 2.0, h - 15.0).unwrap();
    writeln!(s, r#"<text x="15" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {})">PC2</text>"#, h / 2.0, h / 2.0).unwrap();
    for (x, y, c) in points {
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            sx(*x),
            sy(*y),
            CLASS_COLORS[c.index()]
        )
        .unwrap();
    }
    for (i, c) in DistanceClass::ALL.iter().enumerate() {
        let y = pad + 16.0 * i as f64;
        writeln!(s, r#"<circle cx="{}" cy="{y}" r="4" fill="{}"/>"#, w - pad - 60.0, CLASS_COLORS[i]).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{c} m</text>"#, w - pad - 50.0, y + 4.0).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn scatter_csv(points: &[(f64, f64, DistanceClass)]) -> String {
    let mut s = String::from("pc1,pc2,distance_m\n");
    for (x, y, c) in points {
        writeln!(s, "{x},{y},{}", c.meters()).unwrap();
    }
    s
}

/// Writes `<stem>.svg` and `<stem>.csv`; nothing is written for empty input.
pub fn emit_scatter(points: &[(f64, f64, DistanceClass)], dir: &Path, stem: &str, title: &str) -> Result<()> {
    let svg = scatter_svg(points, title)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(format!("{stem}.svg")), svg.as_bytes())?;
    write_atomic(&dir.join(format!("{stem}.csv")), scatter_csv(points).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FlatSample;
    use rand::Rng;

    fn fs(v: Vec<f64>, c: DistanceClass) -> FlatSample {
        FlatSample {
            vector: v,
            label: c,
            site: "s".into(),
        }
    }

    fn views(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(|r| r.as_slice()).collect()
    }

    #[test]
    fn line_y_equals_x() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, i as f64]).collect();
        let m = pca_fit(&views(&rows), 2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components[0][0] - h).abs() < 1e-12 && (m.components[0][1] - h).abs() < 1e-12);
        assert!(m.eigenvalues[1].abs() < 1e-12);
        assert!(m.project(&m.mean).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn orthonormal_reconstruction_and_trace() {
        let mut rng = crate::rng::stream(4, &[]);
        for (n, d) in [(30, 6), (6, 12)] {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|j| rng.gen_range(-1.0..1.0) * (j + 1) as f64).collect())
                .collect();
            let k = d.min(n - 1);
            let m = pca_fit(&views(&rows), k).unwrap();
            for a in 0..k {
                for b in 0..k {
                    let dot: f64 = m.components[a].iter().zip(&m.components[b]).map(|(x, y)| x * y).sum();
                    assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() <= 1e-9);
                }
            }
            assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]) && m.eigenvalues.iter().all(|l| *l >= 0.0));
            assert!((m.eigenvalues.iter().sum::<f64>() - m.total_variance).abs() <= 1e-8 || k < d);
            if k == d {
                for r in &rows {
                    let back = m.reconstruct(&m.project(r).unwrap());
                    assert!(back.iter().zip(r).all(|(a, b)| (a - b).abs() <= 1e-9));
                }
            }
        }
    }

    #[test]
    fn dual_route_matches_primal() {
        let mut rng = crate::rng::stream(5, &[]);
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let primal = pca_fit(&views(&rows), 3).unwrap();
        let wide: Vec<Vec<f64>> = rows.iter().map(|r| [r.clone(), vec![0.0; 5]].concat()).collect();
        let dual = pca_fit(&views(&wide), 3).unwrap();
        for c in 0..3 {
            assert!((primal.eigenvalues[c] - dual.eigenvalues[c]).abs() < 1e-10);
            for j in 0..7 {
                assert!((primal.components[c][j] - dual.components[c][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pca_preconditions() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert!(pca_fit(&views(&rows), 3).is_err());
        assert!(pca_fit(&views(&rows), 2).is_err());
        assert!(pca_fit(&views(&rows), 0).is_err());
    }

    #[test]
    fn nn_gap_examples() {
        let a = vec![fs(vec![0.0], DistanceClass::D1_2)];
        let b = vec![fs(vec![3.0], DistanceClass::D3_0)];
        let r = nn_gap(&a, &b).unwrap();
        assert_eq!((r.mean_l2, r.mismatched_mean_l2, r.mismatch_fraction), (3.0, 3.0, 1.0));
        let a: Vec<FlatSample> = (0..6).map(|i| fs(vec![i as f64, 1.0], DistanceClass::ALL[i % 4])).collect();
        let r = nn_gap(&a, &a[1..4]).unwrap();
        assert_eq!((r.mean_l2, r.mismatch_fraction), (0.0, 0.0));
        let bad = vec![fs(vec![1.0, 2.0, 3.0], DistanceClass::D1_2)];
        assert!(nn_gap(&a, &bad).is_err());
    }

    #[test]
    fn optimal_subset_properties() {
        let mut rng = crate::rng::stream(6, &[]);
        let a: Vec<FlatSample> = (0..20)
            .map(|i| fs(vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)], DistanceClass::ALL[i % 4]))
            .collect();
        let b: Vec<FlatSample> = (0..4)
            .map(|_| fs(vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)], DistanceClass::D1_2))
            .collect();
        assert_eq!(optimal_subset_indices(&a, &b, 20).unwrap(), (0..20).collect::<Vec<_>>());
        let idx = optimal_subset_indices(&a, &b, 2).unwrap();
        assert!(idx.len() <= 8);
        let single = optimal_subset_indices(&a, &b[..1], 3).unwrap();
        let mut by_dist: Vec<(f64, usize)> = a.iter().enumerate().map(|(i, s)| (l2(&s.vector, &b[0].vector), i)).collect();
        by_dist.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        let mut want: Vec<usize> = by_dist[..3].iter().map(|p| p.1).collect();
        want.sort();
        assert_eq!(single, want);
        let sub: Vec<FlatSample> = idx.iter().map(|&i| a[i].clone()).collect();
        let again = optimal_subset_indices(&sub, &b, 2).unwrap();
        assert_eq!(again, (0..sub.len()).collect::<Vec<_>>());
        assert!(optimal_subset_indices(&a, &b, 21).is_err());
    }

    #[test]
    fn scatter_outputs() {
        let pts: Vec<(f64, f64, DistanceClass)> =
            DistanceClass::ALL.iter().enumerate().map(|(i, c)| (i as f64, -(i as f64), *c)).collect();
        let svg = scatter_svg(&pts, "a < b").unwrap();
        for color in CLASS_COLORS {
            assert!(svg.contains(&format!(r#"r="2.5" fill="{color}""#)));
        }
        assert!(svg.contains("a &lt; b"));
        assert_eq!(scatter_csv(&pts).lines().count(), 5);
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_scatter(&[], dir.path(), "x", "t").is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        emit_scatter(&pts, dir.path(), "x", "t").unwrap();
        assert!(dir.path().join("x.svg").exists() && dir.path().join("x.csv").exists());
    }
}
