//! Channel graph construction and spectral quantities.
//!
//! Electrodes become nodes; every pair closer than a fraction of the head
//! radius is joined by an edge weighted by the inverse squared distance.
//! The Chebyshev layer consumes the rescaled Laplacian `2L/λmax - I`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use thiserror::Error;

/// Above this many nodes `λmax` comes from power iteration instead of a dense eigensolve.
pub const DENSE_EIGEN_LIMIT: usize = 64;
const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("a channel graph needs at least 2 channels, got {0}")]
    TooFewChannels(usize),
    #[error("duplicate channel name `{0}`")]
    DuplicateChannel(String),
    #[error("head radius must be positive and finite, got {0}")]
    BadHeadRadius(f64),
    #[error("radius fraction must lie in (0, 1], got {0}")]
    BadRadiusFraction(f64),
    #[error("edge dropout probability must lie in [0, 1), got {0}")]
    BadDropout(f64),
    #[error("graph has no edges: largest Laplacian eigenvalue is zero")]
    Disconnected,
    #[error("unknown channel `{0}` (not in the built-in 10-20 table)")]
    UnknownChannel(String),
    #[error("layout line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub pos: [f64; 3],
}

/// Named electrode positions. Distances are measured from the coordinate
/// origin of the layout, which is also the reference for the head radius.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLayout {
    channels: Vec<Channel>,
    head_radius: f64,
}

impl ChannelLayout {
    /// Builds a layout; `head_radius` defaults to the largest position norm.
    pub fn new(channels: Vec<Channel>, head_radius: Option<f64>) -> Result<Self, GraphError> {
        if channels.len() < 2 {
            return Err(GraphError::TooFewChannels(channels.len()));
        }
        let mut seen = HashSet::new();
        for ch in &channels {
            if !seen.insert(ch.name.to_ascii_lowercase()) {
                return Err(GraphError::DuplicateChannel(ch.name.clone()));
            }
        }
        let radius = head_radius
            .unwrap_or_else(|| channels.iter().map(|c| norm3(c.pos)).fold(0.0, f64::max));
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GraphError::BadHeadRadius(radius));
        }
        Ok(Self {
            channels,
            head_radius: radius,
        })
    }

    /// Resolves channel names against the built-in spherical 10-20 table (unit head radius).
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, GraphError> {
        let channels = names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                standard_position(n)
                    .map(|pos| Channel {
                        name: n.to_string(),
                        pos,
                    })
                    .ok_or_else(|| GraphError::UnknownChannel(n.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(channels, Some(1.0))
    }

    /// The 12-channel montage left after dropping AF3/AF4 from a 14-channel consumer headset.
    pub fn standard_12() -> Self {
        Self::from_names(&STANDARD_12).expect("built-in montage is valid")
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn head_radius(&self) -> f64 {
        self.head_radius
    }

    pub fn names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channels
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.channels[i].pos, self.channels[j].pos);
        norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
    }

    /// Returns the layout with channels reordered so that new channel `k` is old channel `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            channels: order.iter().map(|&i| self.channels[i].clone()).collect(),
            head_radius: self.head_radius,
        }
    }

    /// Parses `name x y z` lines with an optional `# head_radius <value>` header.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut radius = None;
        let mut channels = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                if let (Some(key), Some(value)) = (parts.next(), parts.next()) {
                    if key.eq_ignore_ascii_case("head_radius") {
                        radius = Some(value.parse::<f64>().map_err(|e| GraphError::Parse {
                            line: lineno + 1,
                            msg: format!("bad head radius `{value}`: {e}"),
                        })?);
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(GraphError::Parse {
                    line: lineno + 1,
                    msg: format!("expected `name x y z`, got {} fields", fields.len()),
                });
            }
            let mut pos = [0.0; 3];
            for (slot, field) in pos.iter_mut().zip(&fields[1..]) {
                *slot = field.parse().map_err(|e| GraphError::Parse {
                    line: lineno + 1,
                    msg: format!("bad coordinate `{field}`: {e}"),
                })?;
            }
            channels.push(Channel {
                name: fields[0].to_string(),
                pos,
            });
        }
        Self::new(channels, radius)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# head_radius {:?}\n", self.head_radius);
        for ch in &self.channels {
            let _ = writeln!(
                out,
                "{} {:?} {:?} {:?}",
                ch.name, ch.pos[0], ch.pos[1], ch.pos[2]
            );
        }
        out
    }
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub const STANDARD_12: [&str; 12] = [
    "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8",
];

// Spherical (inclination, azimuth) in degrees on a unit head; negative
// inclination mirrors to the left hemisphere. x points to the right ear,
// y to the nasion, z to the vertex.
const TEN_TWENTY: &[(&str, f64, f64)] = &[
    ("Fp1", -92.0, -72.0),
    ("Fpz", 92.0, 90.0),
    ("Fp2", 92.0, 72.0),
    ("AF3", -74.0, -65.0),
    ("AF4", 74.0, 65.0),
    ("F7", -92.0, -36.0),
    ("F3", -60.0, -51.0),
    ("Fz", 46.0, 90.0),
    ("F4", 60.0, 51.0),
    ("F8", 92.0, 36.0),
    ("FC5", -72.0, -21.0),
    ("FC1", -32.0, -45.0),
    ("FC2", 32.0, 45.0),
    ("FC6", 72.0, 21.0),
    ("T7", -92.0, 0.0),
    ("C3", -46.0, 0.0),
    ("Cz", 0.0, 0.0),
    ("C4", 46.0, 0.0),
    ("T8", 92.0, 0.0),
    ("CP5", -72.0, 21.0),
    ("CP1", -32.0, 45.0),
    ("CP2", 32.0, -45.0),
    ("CP6", 72.0, -21.0),
    ("P7", -92.0, 36.0),
    ("P3", -60.0, 51.0),
    ("Pz", 46.0, -90.0),
    ("P4", 60.0, -51.0),
    ("P8", 92.0, -36.0),
    ("O1", -92.0, 72.0),
    ("Oz", 92.0, -90.0),
    ("O2", 92.0, -72.0),
];

/// Unit-sphere position of a 10-20 electrode, matched case-insensitively.
pub fn standard_position(name: &str) -> Option<[f64; 3]> {
    TEN_TWENTY
        .iter()
        .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
        .map(|&(_, theta, phi)| {
            let (t, p) = (theta.to_radians(), phi.to_radians());
            [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
        })
}

/// Symmetric, nonnegative, zero-diagonal adjacency over a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adjacency: DMatrix<f64>,
    layout: ChannelLayout,
}

impl WeightedGraph {
    /// Wraps an explicit adjacency. The matrix must be square, symmetric and nonnegative;
    /// the diagonal is zeroed.
    pub fn from_adjacency(layout: ChannelLayout, mut adjacency: DMatrix<f64>) -> Self {
        assert_eq!(adjacency.nrows(), layout.len());
        assert_eq!(adjacency.ncols(), layout.len());
        for i in 0..layout.len() {
            adjacency[(i, i)] = 0.0;
        }
        Self { adjacency, layout }
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    pub fn n_nodes(&self) -> usize {
        self.layout.len()
    }

    /// Undirected edges `(i, j)` with `i < j` in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_nodes();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[(i, j)] > 0.0 {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    /// Same graph under a node relabeling (`order[k]` is the old index of new node `k`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = order.len();
        let adjacency = DMatrix::from_fn(n, n, |i, j| self.adjacency[(order[i], order[j])]);
        Self {
            adjacency,
            layout: self.layout.permuted(order),
        }
    }
}

/// Radius-limited inverse-square-distance graph. Pairs with `0 < d <= fraction * head_radius`
/// get weight `1/d²`; coincident channels get weight 0.
pub fn build_adjacency(
    layout: &ChannelLayout,
    radius_fraction: f64,
) -> Result<WeightedGraph, GraphError> {
    if !(radius_fraction > 0.0 && radius_fraction <= 1.0) {
        return Err(GraphError::BadRadiusFraction(radius_fraction));
    }
    let n = layout.len();
    if n < 2 {
        return Err(GraphError::TooFewChannels(n));
    }
    let cutoff = radius_fraction * layout.head_radius();
    let mut adjacency = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = layout.distance(i, j);
            if d == 0.0 {
                log::warn!(
                    "channels `{}` and `{}` coincide; edge weight set to 0",
                    layout.channels[i].name,
                    layout.channels[j].name
                );
                continue;
            }
            if d <= cutoff {
                let w = 1.0 / (d * d);
                adjacency[(i, j)] = w;
                adjacency[(j, i)] = w;
            }
        }
    }
    Ok(WeightedGraph {
        adjacency,
        layout: layout.clone(),
    })
}

/// Laplacian `L = D - A`, its largest eigenvalue, and `2L/λmax - I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBundle {
    pub laplacian: DMatrix<f64>,
    pub lambda_max: f64,
    pub rescaled: DMatrix<f64>,
}

pub fn laplacian(adjacency: &DMatrix<f64>) -> DMatrix<f64> {
    let n = adjacency.nrows();
    let mut l = -adjacency.clone();
    for i in 0..n {
        l[(i, i)] = adjacency.row(i).sum() - adjacency[(i, i)];
    }
    l
}

/// `2L/λmax - I` for a given Laplacian and a fixed `λmax`.
pub fn rescale_laplacian(laplacian: &DMatrix<f64>, lambda_max: f64) -> DMatrix<f64> {
    let n = laplacian.nrows();
    laplacian * (2.0 / lambda_max) - DMatrix::identity(n, n)
}

pub fn largest_eigenvalue(symmetric: &DMatrix<f64>) -> f64 {
    if symmetric.nrows() <= DENSE_EIGEN_LIMIT {
        SymmetricEigen::new(symmetric.clone()).eigenvalues.max()
    } else {
        power_iteration(symmetric)
    }
}

/// Power iteration for the dominant eigenvalue of a positive semidefinite matrix.
pub fn power_iteration(psd: &DMatrix<f64>) -> f64 {
    let n = psd.nrows();
    // deterministic start vector with no special alignment to the all-ones null space
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = psd * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE) {
            return next;
        }
        lambda = next;
    }
    lambda
}

pub fn spectral_bundle(graph: &WeightedGraph) -> Result<SpectralBundle, GraphError> {
    let laplacian = laplacian(&graph.adjacency);
    let lambda_max = largest_eigenvalue(&laplacian);
    if !(lambda_max > 0.0) {
        return Err(GraphError::Disconnected);
    }
    let rescaled = rescale_laplacian(&laplacian, lambda_max);
    Ok(SpectralBundle {
        laplacian,
        lambda_max,
        rescaled,
    })
}

/// Drops each undirected edge independently with probability `p`, symmetrically.
/// Exactly one uniform draw is consumed per existing edge, in row-major edge order.
pub fn edge_dropout<R: Rng + ?Sized>(
    graph: &WeightedGraph,
    p: f64,
    rng: &mut R,
) -> Result<WeightedGraph, GraphError> {
    if !(0.0..1.0).contains(&p) {
        return Err(GraphError::BadDropout(p));
    }
    let mut out = graph.clone();
    if p == 0.0 {
        return Ok(out);
    }
    for (i, j) in graph.edges() {
        if rng.random::<f64>() < p {
            out.adjacency[(i, j)] = 0.0;
            out.adjacency[(j, i)] = 0.0;
        }
    }
    Ok(out)
}
