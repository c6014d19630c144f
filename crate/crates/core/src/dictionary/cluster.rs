//! k-medoids by alternating (Voronoi) updates with seeded k-medoids++
//! restarts. Distances are Euclidean between columns; the full matrix is
//! stored only up to [`MATERIALIZE_LIMIT`] columns and computed on demand beyond.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Column index of each medoid.
    pub medoids: Vec<usize>,
    /// Cluster of each column.
    pub assignment: Vec<usize>,
    /// Sum of distances from each column to its medoid.
    pub cost: f64,
    /// Cost after every assignment step of the winning run.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.medoids.len()
    }

    pub fn members(&self, i: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&j| self.assignment[j] == i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterOptions {
    pub restarts: usize,
    pub max_sweeps: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions { restarts: 4, max_sweeps: 100 }
    }
}

pub const MATERIALIZE_LIMIT: usize = 4096;

pub fn distance(data: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    data.column(i).iter().zip(data.column(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

struct Metric<'a> {
    data: &'a DMatrix<f64>,
    table: Option<Vec<f64>>,
}

impl<'a> Metric<'a> {
    fn new(data: &'a DMatrix<f64>) -> Self {
        let p = data.ncols();
        let table = (p <= MATERIALIZE_LIMIT).then(|| {
            let rows: Vec<Vec<f64>> = (0..p).into_par_iter().map(|i| (0..p).map(|j| distance(data, i, j)).collect()).collect();
            rows.concat()
        });
        Metric { data, table }
    }

    fn p(&self) -> usize {
        self.data.ncols()
    }

    #[inline]
    fn d(&self, i: usize, j: usize) -> f64 {
        match &self.table {
            Some(t) => t[i * self.p() + j],
            None => distance(self.data, i, j),
        }
    }
}

fn check(data: &DMatrix<f64>, k: usize) -> Result<()> {
    let p = data.ncols();
    if k == 0 || k > p {
        return Err(Error::config(format!("need 1 <= k <= {p}, got k = {k}")));
    }
    Ok(())
}

/// Best of `opts.restarts` seeded runs.
pub fn cluster(data: &DMatrix<f64>, k: usize, seed: u64, opts: &ClusterOptions) -> Result<Clustering> {
    check(data, k)?;
    run_restarts(&Metric::new(data), k, seed, opts)
}

fn run_restarts(metric: &Metric, k: usize, seed: u64, opts: &ClusterOptions) -> Result<Clustering> {
    let mut best: Option<Clustering> = None;
    for r in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let init = extend_medoids(metric, Vec::new(), k, &mut rng);
        let c = voronoi(metric, init, opts.max_sweeps);
        if best.as_ref().map_or(true, |b| c.cost < b.cost) {
            best = Some(c);
        }
    }
    Ok(best.unwrap())
}

/// Total cost for each `k`. Each `k` also tries a warm start from the
/// previous solution plus new medoids, so the costs are non-increasing.
pub fn elbow_scan(data: &DMatrix<f64>, ks: &[usize], seed: u64, opts: &ClusterOptions) -> Result<Vec<(usize, f64)>> {
    if ks.is_empty() {
        return Err(Error::config("elbow scan needs at least one k"));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    for &k in &ks {
        check(data, k)?;
    }
    let metric = Metric::new(data);
    let mut out = Vec::with_capacity(ks.len());
    let mut prev: Option<Clustering> = None;
    for &k in &ks {
        let mut best = run_restarts(&metric, k, seed, opts)?;
        if let Some(pc) = &prev {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            rng.set_stream(k as u64);
            let init = extend_medoids(&metric, pc.medoids.clone(), k, &mut rng);
            let warm = voronoi(&metric, init, opts.max_sweeps);
            if warm.cost < best.cost {
                best = warm;
            }
        }
        out.push((k, best.cost));
        prev = Some(best);
    }
    Ok(out)
}

/// k-medoids++ seeding: adds medoids to `medoids` by `D²` sampling until there are `k`.
fn extend_medoids(metric: &Metric, mut medoids: Vec<usize>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let p = metric.p();
    if medoids.is_empty() {
        medoids.push(rng.gen_range(0..p));
    }
    let mut nearest: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|j| medoids.iter().map(|&c| metric.d(j, c)).fold(f64::INFINITY, f64::min))
        .collect();
    while medoids.len() < k {
        let w: Vec<f64> = (0..p).map(|j| if medoids.contains(&j) { 0.0 } else { nearest[j] * nearest[j] }).collect();
        let total: f64 = w.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = None;
            for (j, &wj) in w.iter().enumerate() {
                if wj > 0.0 {
                    pick = Some(j);
                    if u < wj {
                        break;
                    }
                    u -= wj;
                }
            }
            pick.unwrap()
        } else {
            let free: Vec<usize> = (0..p).filter(|j| !medoids.contains(j)).collect();
            free[rng.gen_range(0..free.len())]
        };
        medoids.push(next);
        nearest.par_iter_mut().enumerate().for_each(|(j, d)| *d = d.min(metric.d(j, next)));
    }
    medoids
}

/// Nearest medoid for each column; a medoid always belongs to its own
/// cluster, so no cluster is ever empty. Distance ties go to the lowest cluster index.
fn assign(metric: &Metric, medoids: &[usize]) -> (Vec<usize>, Vec<f64>) {
    (0..metric.p())
        .into_par_iter()
        .map(|j| {
            if let Some(i) = medoids.iter().position(|&c| c == j) {
                return (i, 0.0);
            }
            let mut best = (0, f64::INFINITY);
            for (i, &c) in medoids.iter().enumerate() {
                let d = metric.d(j, c);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best
        })
        .unzip()
}

fn voronoi(metric: &Metric, mut medoids: Vec<usize>, max_sweeps: usize) -> Clustering {
    let mut history = Vec::new();
    let (mut assignment, mut dist) = assign(metric, &medoids);
    history.push(dist.iter().sum::<f64>());
    for _ in 0..max_sweeps {
        let mut changed = false;
        for i in 0..medoids.len() {
            let members: Vec<usize> = (0..assignment.len()).filter(|&j| assignment[j] == i).collect();
            let current: f64 = members.iter().map(|&j| dist[j]).sum();
            let (cand, cost) = members
                .par_iter()
                .map(|&c| (c, members.iter().map(|&j| metric.d(c, j)).sum::<f64>()))
                .reduce(|| (usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
            if cost < current && cand != medoids[i] {
                medoids[i] = cand;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let (a, d) = assign(metric, &medoids);
        assignment = a;
        dist = d;
        history.push(dist.iter().sum::<f64>());
    }
    let cost = *history.last().unwrap();
    Clustering { medoids, assignment, cost, history }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(2, centers.len() * per, |r, c| centers[c / per][r] + spread * rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn separates_two_blobs() {
        let d = blobs(&[[0.0, 0.0], [10.0, 10.0]], 20, 0.5, 1);
        let c = cluster(&d, 2, 7, &ClusterOptions::default()).unwrap();
        let first = c.assignment[0];
        assert!(c.assignment[..20].iter().all(|&a| a == first));
        assert!(c.assignment[20..].iter().all(|&a| a != first));
        for w in c.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn k_equals_p_costs_nothing() {
        let d = blobs(&[[0.0, 0.0]], 6, 1.0, 2);
        let c = cluster(&d, 6, 0, &ClusterOptions::default()).unwrap();
        assert_eq!(c.cost, 0.0);
        assert_eq!(c.sizes(), vec![1; 6]);
    }

    #[test]
    fn elbow_costs_non_increasing_with_drop_at_three() {
        let d = blobs(&[[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]], 15, 1.0, 3);
        let e = elbow_scan(&d, &[1, 2, 3, 4, 5, 6], 11, &ClusterOptions::default()).unwrap();
        for w in e.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
        let drop23 = e[1].1 - e[2].1;
        let drop34 = e[2].1 - e[3].1;
        assert!(drop23 > 10.0 * drop34);
    }

    #[test]
    fn duplicated_atoms_cost_zero() {
        let d = DMatrix::from_fn(4, 10, |r, _| r as f64);
        for (_, cost) in elbow_scan(&d, &[1, 2, 3], 5, &ClusterOptions::default()).unwrap() {
            assert_eq!(cost, 0.0);
        }
        let c = cluster(&d, 3, 5, &ClusterOptions::default()).unwrap();
        assert!(c.sizes().iter().all(|&s| s >= 1));
        assert_eq!(c.sizes().iter().sum::<usize>(), 10);
    }

    #[test]
    fn deterministic_given_seed() {
        let d = blobs(&[[0.0, 0.0], [5.0, 1.0], [2.0, 7.0]], 10, 2.0, 4);
        let a = cluster(&d, 3, 99, &ClusterOptions::default()).unwrap();
        let b = cluster(&d, 3, 99, &ClusterOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_k() {
        let d = DMatrix::from_element(2, 3, 1.0);
        assert!(cluster(&d, 0, 0, &ClusterOptions::default()).is_err());
        assert!(cluster(&d, 4, 0, &ClusterOptions::default()).is_err());
    }
}
