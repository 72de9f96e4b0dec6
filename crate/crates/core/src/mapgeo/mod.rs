//! Geometric comparison of contribution maps.
//!
//! A map becomes a point cloud of `(azimuth, radial, score)` triples, one per
//! channel, with uniform mass. Two clouds are compared by projecting both onto
//! random directions of the unit sphere and averaging the 1-D Wasserstein
//! distances of the projections.

mod groupings;
mod stats;

pub use groupings::{
    grouping_distances, grouping_tests, write_tests_csv, Condition, GroupingDistances, GroupingRow,
    GroupingTest, MapKey, Stage, GROUPINGS,
};
pub use stats::{mann_whitney_u, wilcoxon_signed_rank, TestMethod, TestResult};

use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use thiserror::Error;

use crate::explain::ContributionMap;

#[derive(Debug, Error, PartialEq)]
pub enum MapGeoError {
    #[error("channel `{0}` sits on the vertical axis; azimuth undefined")]
    AtOrigin(String),
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("need at least {0}")]
    TooFew(&'static str),
    #[error("maps `{0}` and `{1}` use different layouts")]
    LayoutMismatch(String, String),
    #[error("empty sample")]
    EmptySample,
    #[error("{0}")]
    Grouping(String),
}

/// Uniform-mass 3-D points, one per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPointCloud {
    pub points: Vec<[f64; 3]>,
}

impl MapPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Multiplies each coordinate axis by a factor.
    pub fn scaled(&self, factors: [f64; 3]) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] * factors[0], p[1] * factors[1], p[2] * factors[2]])
                .collect(),
        }
    }
}

/// `(atan2(y, x), planar norm / head radius, score)` per channel, azimuth in `(-π, π]`.
pub fn to_polar_cloud(map: &ContributionMap) -> Result<MapPointCloud, MapGeoError> {
    let r = map.layout.head_radius();
    let points = map
        .layout
        .channels()
        .iter()
        .zip(&map.scores)
        .map(|(ch, &s)| {
            let [x, y, _] = ch.pos;
            if x == 0.0 && y == 0.0 {
                return Err(MapGeoError::AtOrigin(ch.name.clone()));
            }
            // y = -0.0 on the negative x axis would give -π; keep azimuths in (-π, π]
            let azimuth = y.atan2(x);
            let azimuth = if azimuth <= -PI { PI } else { azimuth };
            Ok([azimuth, x.hypot(y) / r, s])
        })
        .collect::<Result<_, _>>()?;
    Ok(MapPointCloud { points })
}

/// W1 between two equal-size uniform empirical distributions (sorted coupling).
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, MapGeoError> {
    if a.len() != b.len() {
        return Err(MapGeoError::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MapGeoError::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(pairwise_sum(
        &a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .collect::<Vec<_>>(),
    ) / a.len() as f64)
}

/// Cost of one projected pair. The default is [`wasserstein_1d`]; other slice costs
/// (for instance Gromov-style intra-cloud costs) can be plugged in through [`sgw_with_cost`].
pub type SliceCost = fn(&[f64], &[f64]) -> f64;

fn w1_cost(a: &[f64], b: &[f64]) -> f64 {
    wasserstein_1d(a, b).expect("equal nonempty slices")
}

/// Summation by recursive halving; the result depends only on the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (l, r) = v.split_at(v.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

/// `n` directions uniform on the unit sphere. Direction `i` comes from its own
/// stream of the seeded generator, so any prefix is stable.
pub fn sample_directions(n: usize, seed: u64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            UnitSphere.sample(&mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgwEstimate {
    pub mean: f64,
    /// Standard error of the Monte Carlo mean.
    pub std_error: f64,
    pub n_projections: usize,
}

fn project(cloud: &MapPointCloud, d: &[f64; 3]) -> Vec<f64> {
    cloud
        .points
        .iter()
        .map(|p| p[0] * d[0] + p[1] * d[1] + p[2] * d[2])
        .collect()
}

pub fn sgw_with_cost(
    g1: &MapPointCloud,
    g2: &MapPointCloud,
    directions: &[[f64; 3]],
    cost: SliceCost,
) -> Result<SgwEstimate, MapGeoError> {
    if g1.len() != g2.len() {
        return Err(MapGeoError::SizeMismatch(g1.len(), g2.len()));
    }
    if g1.is_empty() {
        return Err(MapGeoError::EmptySample);
    }
    if directions.is_empty() {
        return Err(MapGeoError::TooFew("one projection"));
    }
    let values: Vec<f64> = directions
        .par_iter()
        .map(|d| cost(&project(g1, d), &project(g2, d)))
        .collect();
    let n = values.len() as f64;
    let mean = pairwise_sum(&values) / n;
    let std_error = if values.len() > 1 {
        let ss = pairwise_sum(
            &values
                .iter()
                .map(|v| (v - mean).powi(2))
                .collect::<Vec<_>>(),
        );
        (ss / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(SgwEstimate {
        mean,
        std_error,
        n_projections: values.len(),
    })
}

/// Sliced distance over a given direction set.
pub fn sgw_with_directions(
    g1: &MapPointCloud,
    g2: &MapPointCloud,
    directions: &[[f64; 3]],
) -> Result<SgwEstimate, MapGeoError> {
    sgw_with_cost(g1, g2, directions, w1_cost)
}

/// Monte Carlo sliced distance with `n_projections` seeded directions.
pub fn sgw_distance(
    g1: &MapPointCloud,
    g2: &MapPointCloud,
    n_projections: usize,
    seed: u64,
) -> Result<SgwEstimate, MapGeoError> {
    sgw_with_directions(g1, g2, &sample_directions(n_projections, seed))
}

pub const DEFAULT_PROJECTIONS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.values[self.index_of(a)?][self.index_of(b)?])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "map")?;
        for l in &self.labels {
            write!(w, ",{l}")?;
        }
        writeln!(w)?;
        for (l, row) in self.labels.iter().zip(&self.values) {
            write!(w, "{l}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Pairwise sliced distances between labelled maps, every pair using the same directions.
pub fn distance_matrix(
    maps: &[(String, ContributionMap)],
    n_projections: usize,
    seed: u64,
) -> Result<DistanceMatrix, MapGeoError> {
    distance_matrix_scaled(maps, n_projections, seed, [1.0; 3])
}

/// [`distance_matrix`] with per-axis factors on `(azimuth, radial, score)`.
pub fn distance_matrix_scaled(
    maps: &[(String, ContributionMap)],
    n_projections: usize,
    seed: u64,
    scale: [f64; 3],
) -> Result<DistanceMatrix, MapGeoError> {
    if maps.len() < 2 {
        return Err(MapGeoError::TooFew("two maps"));
    }
    let (first_label, first) = &maps[0];
    for (label, m) in &maps[1..] {
        if m.layout != first.layout {
            return Err(MapGeoError::LayoutMismatch(first_label.clone(), label.clone()));
        }
    }
    let clouds: Vec<MapPointCloud> = maps
        .iter()
        .map(|(_, m)| to_polar_cloud(m).map(|c| c.scaled(scale)))
        .collect::<Result<_, _>>()?;
    let dirs = sample_directions(n_projections, seed);
    let n = maps.len();
    let mut values = vec![vec![0.0; n]; n];
    let mut std_errors = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let e = sgw_with_directions(&clouds[i], &clouds[j], &dirs)?;
            values[i][j] = e.mean;
            values[j][i] = e.mean;
            std_errors[i][j] = e.std_error;
            std_errors[j][i] = e.std_error;
        }
    }
    Ok(DistanceMatrix {
        labels: maps.iter().map(|(l, _)| l.clone()).collect(),
        values,
        std_errors,
    })
}
