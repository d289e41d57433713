//! Density-aware sampling of user profiles: embed the profile text, reduce
//! it linearly, estimate a Gaussian KDE and draw a weighted sample that
//! blends density-proportional and inverse-density mass.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{Gateway, GatewayError};
use crate::profiling::Profile;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("need at least {need} profiles, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("target dimension {d} exceeds embedding dimension {dim}")]
    BadDimension { d: usize, dim: usize },
    #[error("rows have different lengths")]
    Ragged,
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("cannot sample {m} of {n}")]
    TooMany { m: usize, n: usize },
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub coords: Vec<Vec<f64>>,
    /// The covariance had no usable spread; coordinates are the first d
    /// centered input columns.
    pub degenerate: bool,
}

/// Canonical profile text for embedding.
pub fn serialize_profile(p: &Profile) -> String {
    p.to_text()
}

pub fn embed_profiles(gateway: &Gateway, profiles: &[Profile]) -> Result<Vec<Vec<f64>>, SamplingError> {
    let mut out = Vec::with_capacity(profiles.len());
    for chunk in profiles.chunks(256) {
        let texts: Vec<String> = chunk.iter().map(serialize_profile).collect();
        out.extend(gateway.embed(&texts)?.into_iter().map(|e| e.values));
    }
    Ok(out)
}

/// Projects centered rows onto the top `d` principal components. Component
/// signs are fixed so each axis' largest-magnitude loading is positive.
pub fn reduce(rows: &[Vec<f64>], d: usize) -> Result<Reduction, SamplingError> {
    let n = rows.len();
    if n < d + 1 {
        return Err(SamplingError::TooFew { need: d + 1, got: n });
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(SamplingError::Ragged);
    }
    if d > dim || d == 0 {
        return Err(SamplingError::BadDimension { d, dim });
    }
    let x = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0).max(1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let top = eig.eigenvalues[order[0]];
    if !(top > 1e-12) {
        let coords = (0..n).map(|i| (0..d).map(|j| centered[(i, j)]).collect()).collect();
        return Ok(Reduction { coords, degenerate: true });
    }
    let mut basis = DMatrix::zeros(dim, d);
    for (k, &c) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(c).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.neg_mut();
        }
        basis.set_column(k, &v);
    }
    let proj = centered * basis;
    let coords = (0..n).map(|i| proj.row(i).iter().copied().collect()).collect();
    Ok(Reduction { coords, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub coords: Vec<Vec<f64>>,
    pub bandwidth: f64,
    /// Natural log of each point's density.
    pub log_densities: Vec<f64>,
}

impl DensityModel {
    pub fn densities(&self) -> Vec<f64> {
        self.log_densities.iter().map(|l| l.exp()).collect()
    }

    /// A model over precomputed log densities (no coordinates).
    pub fn from_log_densities(log_densities: Vec<f64>) -> Self {
        DensityModel {
            coords: Vec::new(),
            bandwidth: 1.0,
            log_densities,
        }
    }
}

/// Scott's rule: n^(-1/(d+4)) times the mean per-axis standard deviation;
/// 1.0 when the points have no spread.
pub fn scott_bandwidth(coords: &[Vec<f64>]) -> f64 {
    let n = coords.len() as f64;
    let d = coords.first().map(Vec::len).unwrap_or(1);
    let sd: f64 = (0..d)
        .map(|j| {
            let mu = coords.iter().map(|r| r[j]).sum::<f64>() / n;
            (coords.iter().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
        })
        .sum::<f64>()
        / d as f64;
    if sd > 0.0 && sd.is_finite() {
        sd * n.powf(-1.0 / (d as f64 + 4.0))
    } else {
        1.0
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Isotropic Gaussian KDE evaluated at every input point, self included.
pub fn estimate_density(coords: &[Vec<f64>], bandwidth: Option<f64>) -> Result<DensityModel, SamplingError> {
    let n = coords.len();
    if n < 2 {
        return Err(SamplingError::TooFew { need: 2, got: n });
    }
    let d = coords[0].len();
    if coords.iter().any(|r| r.len() != d) {
        return Err(SamplingError::Ragged);
    }
    let h = bandwidth.unwrap_or_else(|| scott_bandwidth(coords));
    if !(h > 0.0 && h.is_finite()) {
        return Err(SamplingError::Bandwidth(h));
    }
    let log_norm = -(d as f64) / 2.0 * (2.0 * std::f64::consts::PI * h * h).ln() - (n as f64).ln();
    let inv = 1.0 / (2.0 * h * h);
    let row = |i: usize| {
        let terms: Vec<f64> = coords
            .iter()
            .map(|c| -coords[i].iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * inv)
            .collect();
        log_norm + log_sum_exp(&terms)
    };
    let workers = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1).min(n);
    let chunk = n.div_ceil(workers);
    let log_densities = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(row).collect::<Vec<f64>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("density worker")).collect()
    });
    Ok(DensityModel {
        coords: coords.to_vec(),
        bandwidth: h,
        log_densities,
    })
}

/// Sampling weights: alpha of the mass proportional to density and
/// 1 - alpha proportional to inverse density.
pub fn blend_weights(log_densities: &[f64], alpha: f64) -> Vec<f64> {
    let max = log_densities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = log_densities.iter().copied().fold(f64::INFINITY, f64::min);
    let dens: Vec<f64> = log_densities.iter().map(|l| (l - max).exp()).collect();
    let inv: Vec<f64> = log_densities.iter().map(|l| (min - l).exp()).collect();
    let (sd, si): (f64, f64) = (dens.iter().sum(), inv.iter().sum());
    dens.iter().zip(&inv).map(|(p, q)| alpha * p / sd + (1.0 - alpha) * q / si).collect()
}

/// Weighted sampling without replacement (exponential keys), `m` distinct
/// indices in draw order.
pub fn weighted_sample(weights: &[f64], m: usize, seed: u64) -> Result<Vec<usize>, SamplingError> {
    let n = weights.len();
    if m > n {
        return Err(SamplingError::TooMany { m, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let key = if *w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keys.into_iter().take(m).map(|(_, i)| i).collect())
}

pub fn density_aware_sample(model: &DensityModel, m: usize, alpha: f64, seed: u64) -> Result<Vec<usize>, SamplingError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SamplingError::Alpha(alpha));
    }
    weighted_sample(&blend_weights(&model.log_densities, alpha), m, seed)
}

pub fn coords_to_csv(coords: &[Vec<f64>]) -> String {
    let d = coords.first().map(Vec::len).unwrap_or(0);
    let mut out = String::from("index");
    for j in 0..d {
        out.push_str(&format!(",c{j}"));
    }
    out.push('\n');
    for (i, r) in coords.iter().enumerate() {
        out.push_str(&i.to_string());
        for x in r {
            out.push_str(&format!(",{x:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn coords_from_csv(raw: &str) -> Result<Vec<Vec<f64>>, SamplingError> {
    let bad = |n: usize, m: &str| SamplingError::Io(format!("line {}: {m}", n + 1));
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (n, line) in raw.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let mut cols = line.split(',');
        let idx = cols.next().and_then(|c| c.trim().parse().ok()).ok_or_else(|| bad(n, "bad index"))?;
        let vals = cols.map(|c| c.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad(n, "bad value"))?;
        rows.push((idx, vals));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(SamplingError::Io("indices must be 0..n".into()));
    }
    let out: Vec<Vec<f64>> = rows.into_iter().map(|r| r.1).collect();
    if out.iter().any(|r| r.len() != out[0].len()) {
        return Err(SamplingError::Ragged);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    pub alpha: f64,
    pub dims: usize,
    pub bandwidth: f64,
    pub population: usize,
    pub degenerate_reduction: bool,
    pub user_ids: Vec<u64>,
}

impl SampleManifest {
    pub fn save(&self, path: &Path) -> Result<(), SamplingError> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))
            .map_err(|e| SamplingError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SamplingError> {
        let raw = std::fs::read_to_string(path).map_err(|e| SamplingError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| SamplingError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub dims: usize,
    pub m: usize,
    pub alpha: f64,
    pub bandwidth: Option<f64>,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            dims: 5,
            m: 977,
            alpha: 0.5,
            bandwidth: None,
            seed: 42,
        }
    }
}

/// Reduce, estimate and sample in one go over precomputed embeddings.
pub fn sample_users(user_ids: &[u64], embeddings: &[Vec<f64>], params: &SamplingParams) -> Result<SampleManifest, SamplingError> {
    let red = reduce(embeddings, params.dims)?;
    let model = estimate_density(&red.coords, params.bandwidth)?;
    let picked = density_aware_sample(&model, params.m.min(user_ids.len()), params.alpha, params.seed)?;
    Ok(SampleManifest {
        seed: params.seed,
        alpha: params.alpha,
        dims: params.dims,
        bandwidth: model.bandwidth,
        population: user_ids.len(),
        degenerate_reduction: red.degenerate,
        user_ids: picked.into_iter().map(|i| user_ids[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn full_rank_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let r = reduce(&rows, 4).unwrap();
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                assert!((dist(&rows[i], &rows[j]) - dist(&r.coords[i], &r.coords[j])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_rows() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 3];
        let r = reduce(&rows, 2).unwrap();
        assert!(r.degenerate);
        assert!(r.coords.windows(2).all(|w| w[0] == w[1]));
        assert!(reduce(&rows[..2], 2).is_err());
    }

    #[test]
    fn clusters_stay_separable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = Vec::new();
        for k in 0..40 {
            let c = if k < 20 { 5.0 } else { -5.0 };
            rows.push((0..8).map(|j| if j == 3 { c } else { 0.0 } + rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>());
        }
        let r = reduce(&rows, 2).unwrap();
        for i in 0..40 {
            let nn = (0..40)
                .filter(|j| *j != i)
                .min_by(|a, b| dist(&r.coords[i], &r.coords[*a]).total_cmp(&dist(&r.coords[i], &r.coords[*b])))
                .unwrap();
            assert_eq!(nn < 20, i < 20);
        }
    }

    #[test]
    fn density_cases() {
        let m = estimate_density(&[vec![0.0], vec![0.0]], Some(1.0)).unwrap();
        assert_eq!(m.log_densities[0], m.log_densities[1]);
        // tight pair plus an outlier: K(0) + K(0.1) vs K(0) + 2 K(~10)
        let pts = vec![vec![0.0], vec![0.1], vec![10.0]];
        let m = estimate_density(&pts, Some(1.0)).unwrap();
        let k = |u: f64| (-(u * u) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() / 3.0;
        let want0 = k(0.0) + k(0.1) + k(10.0);
        assert!((m.densities()[0] - want0).abs() < 1e-12);
        assert!(m.log_densities[2] < m.log_densities[0] && m.log_densities[2] < m.log_densities[1]);
        let shifted: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] + 100.0]).collect();
        let s = estimate_density(&shifted, Some(1.0)).unwrap();
        for (a, b) in m.log_densities.iter().zip(&s.log_densities) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(estimate_density(&pts, Some(0.0)).is_err());
    }

    #[test]
    fn sample_sizes() {
        let model = DensityModel::from_log_densities(vec![0.0; 10]);
        let mut all = density_aware_sample(&model, 10, 0.5, 3).unwrap();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(density_aware_sample(&model, 11, 0.5, 3).is_err());
    }

    #[test]
    fn uniform_reduces_to_uniform() {
        // 5 items, pick 1, 5000 seeds: chi-square with 4 dof stays far below 18.47 (p = 0.001)
        let model = DensityModel::from_log_densities(vec![-1.3; 5]);
        let mut counts = [0f64; 5];
        for seed in 0..5000 {
            counts[density_aware_sample(&model, 1, 0.5, seed).unwrap()[0]] += 1.0;
        }
        let chi: f64 = counts.iter().map(|c| (c - 1000.0).powi(2) / 1000.0).sum();
        assert!(chi < 18.47, "{chi}");
    }

    #[test]
    fn large_population() {
        let logs: Vec<f64> = (0..34_330).map(|i| -((i % 97) as f64) / 10.0).collect();
        let model = DensityModel::from_log_densities(logs);
        let a = density_aware_sample(&model, 977, 0.5, 42).unwrap();
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 977);
        assert_eq!(a, density_aware_sample(&model, 977, 0.5, 42).unwrap());
        assert_ne!(a, density_aware_sample(&model, 977, 0.5, 43).unwrap());
    }

    #[test]
    fn blending_lifts_minority() {
        // 90/10 two-cluster population: mixing in inverse density picks more minority points
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let c = if i < 180 { 0.0 } else { 8.0 };
                vec![c + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
            })
            .collect();
        let model = estimate_density(&pts, None).unwrap();
        let share = |alpha: f64| {
            (0..100u64)
                .map(|seed| density_aware_sample(&model, 20, alpha, seed).unwrap().iter().filter(|i| **i >= 180).count())
                .sum::<usize>()
        };
        assert!(share(0.5) > share(1.0));
    }

    #[test]
    fn csv_round_trip() {
        let c = vec![vec![0.5, -1.25], vec![3.0, 1e-7]];
        assert_eq!(coords_from_csv(&coords_to_csv(&c)).unwrap(), c);
    }

    proptest! {
        #[test]
        fn distinct_and_deterministic(n in 1usize..200, frac in 0.0f64..1.0, seed in any::<u64>(), alpha in 0.0f64..=1.0) {
            let logs: Vec<f64> = (0..n).map(|i| -((i * 37 % 11) as f64)).collect();
            let model = DensityModel::from_log_densities(logs);
            let m = ((n as f64) * frac) as usize;
            let a = density_aware_sample(&model, m, alpha, seed).unwrap();
            let mut s = a.clone();
            s.sort();
            s.dedup();
            prop_assert_eq!(s.len(), m);
            prop_assert_eq!(a, density_aware_sample(&model, m, alpha, seed).unwrap());
        }
    }
}
