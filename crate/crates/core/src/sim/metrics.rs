//! Trajectory metrics over node sequences with geodesic distances.

use serde::{Deserialize, Serialize};

use super::graph::{DistanceTable, NavGraph};
use super::SimError;

/// Per-episode metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: String,
    pub tl: f64,
    pub ne: f64,
    pub success: bool,
    pub spl: f64,
    pub cls: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_episodes: usize,
    pub tl: f64,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub cls: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    pub episodes: Vec<EpisodeMetrics>,
}

impl MetricsReport {
    /// Means over `episodes`; an empty list gives all-zero means.
    pub fn from_episodes(episodes: Vec<EpisodeMetrics>) -> Self {
        let n = episodes.len();
        let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                episodes.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            n_episodes: n,
            tl: mean(&|e| e.tl),
            ne: mean(&|e| e.ne),
            sr: mean(&|e| if e.success { 1.0 } else { 0.0 }),
            spl: mean(&|e| e.spl),
            cls: mean(&|e| e.cls),
            ndtw: mean(&|e| e.ndtw),
            sdtw: mean(&|e| e.sdtw),
            episodes,
        }
    }
}

/// Dynamic time warping cost between `reference` and `query` using
/// geodesic node distances.
pub fn dtw(dist: &DistanceTable, reference: &[usize], query: &[usize]) -> f64 {
    let n = reference.len();
    let m = query.len();
    let mut dp = vec![vec![f64::INFINITY; m + 1]; n + 1];
    dp[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let c = dist.get(reference[i - 1], query[j - 1]);
            dp[i][j] = c + dp[i - 1][j].min(dp[i][j - 1]).min(dp[i - 1][j - 1]);
        }
    }
    dp[n][m]
}

/// `exp(-DTW / (theta · |reference|))`.
pub fn ndtw(dist: &DistanceTable, reference: &[usize], query: &[usize], theta: f64) -> f64 {
    (-dtw(dist, reference, query) / (theta * reference.len() as f64)).exp()
}

/// Coverage weighted by length score of `query` against `reference`.
pub fn cls(
    graph: &NavGraph,
    dist: &DistanceTable,
    reference: &[usize],
    query: &[usize],
    theta: f64,
) -> Result<f64, SimError> {
    let pc = reference
        .iter()
        .map(|&r| {
            let d = query.iter().map(|&q| dist.get(r, q)).fold(f64::INFINITY, f64::min);
            (-d / theta).exp()
        })
        .sum::<f64>()
        / reference.len() as f64;
    let epl = pc * graph.path_length(reference)?;
    let pl = graph.path_length(query)?;
    let denom = epl + (epl - pl).abs();
    let ls = if denom == 0.0 { 1.0 } else { epl / denom };
    Ok(pc * ls)
}

/// Metrics of one trajectory. `radius` is both the success radius and the
/// DTW/coverage distance scale.
pub fn episode_metrics(
    episode_id: &str,
    graph: &NavGraph,
    dist: &DistanceTable,
    reference: &[usize],
    trajectory: &[usize],
    radius: f64,
) -> Result<EpisodeMetrics, SimError> {
    let (Some(&start), Some(&goal), Some(&end)) = (reference.first(), reference.last(), trajectory.last()) else {
        return Err(SimError::LengthMismatch(reference.len(), trajectory.len()));
    };
    let tl = graph.path_length(trajectory)?;
    let ne = dist.get(end, goal);
    let success = ne <= radius;
    let shortest = dist.get(start, goal);
    let spl = if !success {
        0.0
    } else if shortest.max(tl) == 0.0 {
        1.0
    } else {
        shortest / shortest.max(tl)
    };
    let nd = ndtw(dist, reference, trajectory, radius);
    Ok(EpisodeMetrics {
        episode_id: episode_id.to_string(),
        tl,
        ne,
        success,
        spl,
        cls: cls(graph, dist, reference, trajectory, radius)?,
        ndtw: nd,
        sdtw: if success { nd } else { 0.0 },
    })
}
