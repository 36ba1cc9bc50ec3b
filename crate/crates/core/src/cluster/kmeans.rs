//! Plain two-dimensional K-Means: k-means++ or uniform seeding, Lloyd
//! iterations, and a single-point-move refinement pass.

use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Point = [f64; 2];

/// Centroid movement (in normalized units) below which Lloyd stops.
pub const TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansRun {
    pub centroids: Vec<Point>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub objective: f64,
    /// Objective after every assignment step, in order. Never increases.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

#[inline]
pub fn sq_dist(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Index of the closest centroid; ties go to the lowest index.
pub fn nearest(point: &Point, centroids: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn objective(points: &[Point], centroids: &[Point], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &j)| sq_dist(p, &centroids[j]))
        .sum()
}

/// k-means++ seeding: the first centre uniformly, each further centre with
/// probability proportional to squared distance from the closest chosen one.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> Vec<Point> {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= n");
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // Every remaining point coincides with a centre: take any unused index.
            Err(_) => (0..points.len())
                .find(|i| !chosen.contains(i))
                .expect("k <= n"),
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

/// `k` distinct points chosen uniformly. Unlike k-means++ this does not
/// favour outliers, so restarts that use it reach partitions where a far
/// point shares a cluster.
pub fn uniform_seeds<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> Vec<Point> {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= n");
    rand::seq::index::sample(rng, points.len(), k)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

fn assign_all(points: &[Point], centroids: &[Point]) -> Vec<usize> {
    points.iter().map(|p| nearest(p, centroids)).collect()
}

fn update(points: &[Point], assignments: &[usize], previous: &[Point]) -> Vec<Point> {
    let k = previous.len();
    let mut sums = vec![[0.0f64; 2]; k];
    let mut counts = vec![0usize; k];
    for (p, &j) in points.iter().zip(assignments) {
        sums[j][0] += p[0];
        sums[j][1] += p[1];
        counts[j] += 1;
    }
    (0..k)
        .map(|j| match counts[j] {
            // An empty cluster keeps its centre rather than jumping somewhere arbitrary.
            0 => previous[j],
            n => [sums[j][0] / n as f64, sums[j][1] / n as f64],
        })
        .collect()
}

/// Lloyd's algorithm from the given initial centroids.
///
/// Stops when no centroid moves more than [`TOLERANCE`], after
/// [`MAX_ITERATIONS`], or if rounding would make the objective grow; in the
/// last case the previous state is kept so the history stays monotone.
pub fn lloyd(points: &[Point], init: Vec<Point>) -> KMeansRun {
    let mut centroids = init;
    let mut assignments = assign_all(points, &centroids);
    let mut current = objective(points, &centroids, &assignments);
    let mut history = vec![current];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let next = update(points, &assignments, &centroids);
        let movement = next
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        let next_assignments = assign_all(points, &next);
        let next_objective = objective(points, &next, &next_assignments);
        if next_objective > current {
            break;
        }
        centroids = next;
        assignments = next_assignments;
        current = next_objective;
        history.push(current);
        if movement < TOLERANCE {
            break;
        }
    }
    KMeansRun {
        centroids,
        assignments,
        objective: current,
        objective_history: history,
        iterations,
    }
}

/// Moves single points between clusters while doing so strictly lowers the
/// objective, accounting for the centroid shift each move causes. Lloyd's
/// fixed points are not always stable under such moves; this escapes them.
pub fn refine(points: &[Point], run: &mut KMeansRun) {
    let k = run.centroids.len();
    let mut counts = vec![0usize; k];
    for &j in &run.assignments {
        counts[j] += 1;
    }
    let mut improved = true;
    let mut passes = 0;
    while improved && passes < MAX_ITERATIONS {
        improved = false;
        passes += 1;
        for i in 0..points.len() {
            let from = run.assignments[i];
            let n_from = counts[from];
            if n_from <= 1 {
                continue;
            }
            let removal_gain =
                n_from as f64 / (n_from as f64 - 1.0) * sq_dist(&points[i], &run.centroids[from]);
            let mut best: Option<(usize, f64)> = None;
            for to in 0..k {
                if to == from {
                    continue;
                }
                let n_to = counts[to] as f64;
                let cost = n_to / (n_to + 1.0) * sq_dist(&points[i], &run.centroids[to]);
                if cost < removal_gain * (1.0 - 1e-12) && best.is_none_or(|(_, c)| cost < c) {
                    best = Some((to, cost));
                }
            }
            if let Some((to, _)) = best {
                run.assignments[i] = to;
                counts[from] -= 1;
                counts[to] += 1;
                run.centroids = update(points, &run.assignments, &run.centroids);
                improved = true;
            }
        }
    }
    let refined = objective(points, &run.centroids, &run.assignments);
    if refined < run.objective {
        run.objective = refined;
        run.objective_history.push(refined);
    }
}

/// One seeded k-means++ / Lloyd / refinement run.
pub fn fit_kmeans<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> KMeansRun {
    let init = kmeans_plus_plus(points, k, rng);
    let mut run = lloyd(points, init);
    refine(points, &mut run);
    run
}

/// Lloyd plus refinement from uniformly chosen seeds.
pub fn fit_uniform<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> KMeansRun {
    let init = uniform_seeds(points, k, rng);
    let mut run = lloyd(points, init);
    refine(points, &mut run);
    run
}

/// Best of `restarts` runs drawn from one RNG seeded with `seed`. Even
/// restarts use k-means++ seeding, odd ones uniform seeding; ties keep the
/// earliest run so results are reproducible.
pub fn fit_best(points: &[Point], k: usize, seed: u64, restarts: usize) -> KMeansRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansRun> = None;
    for r in 0..restarts.max(1) {
        let run = if r % 2 == 0 {
            fit_kmeans(points, k, &mut rng)
        } else {
            fit_uniform(points, k, &mut rng)
        };
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

/// Continues from a fitted solution with one extra centre placed on the point
/// that is currently worst served. The starting objective can be no larger
/// than `previous.objective`, so neither can the result.
pub fn grow(points: &[Point], previous: &KMeansRun) -> KMeansRun {
    let far = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, sq_dist(p, &previous.centroids[previous.assignments[i]])))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
        .0;
    let mut init = previous.centroids.clone();
    init.push(points[far]);
    let mut run = lloyd(points, init);
    refine(points, &mut run);
    run
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_restarts_escape_an_outlier_singleton() {
        // k-means++ nearly always seeds the outlier at x = 3.46, and the
        // singleton it forms is stable under single-point moves.
        let pts = vec![
            [0.534, -0.713],
            [0.158, -0.825],
            [3.455, -0.147],
            [-2.271, 0.743],
            [-2.124, 0.721],
            [-1.425, -0.796],
        ];
        let run = fit_best(&pts, 2, 42, 10);
        let a = &run.assignments;
        assert!(a[0] == a[1] && a[1] == a[2] && a[3] == a[4] && a[4] == a[5] && a[0] != a[3], "{a:?}");
    }

    #[test]
    fn nearest_ties_go_to_lowest_index() {
        let cs = [[0.0, 0.0], [-1.0, 0.0], [5.0, 5.0], [1.0, 0.0]];
        assert_eq!(nearest(&[0.0, 0.0], &cs[1..]), 0);
        assert_eq!(nearest(&[0.0, 3.0], &[[1.0, 0.0], [-1.0, 0.0]]), 0);
    }

    #[test]
    fn seeding_picks_distinct_points_when_possible() {
        let pts = vec![[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cs = kmeans_plus_plus(&pts, 3, &mut rng);
        assert_eq!(cs.len(), 3);
        assert!(cs.contains(&[1.0, 1.0]));
    }

    #[test]
    fn lloyd_history_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..300)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let run = fit_kmeans(&pts, 6, &mut rng);
        for w in run.objective_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(run.objective, *run.objective_history.last().unwrap());
        assert!((objective(&pts, &run.centroids, &run.assignments) - run.objective).abs() < 1e-9);
    }

    #[test]
    fn empty_cluster_keeps_its_centre() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0]];
        let run = lloyd(&pts, vec![[0.5, 0.0], [100.0, 100.0]]);
        assert_eq!(run.centroids[1], [100.0, 100.0]);
    }

    #[test]
    fn grow_never_raises_the_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point> = (0..80)
            .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let mut prev = fit_best(&pts, 1, 42, 3);
        for _ in 2..8 {
            let next = grow(&pts, &prev);
            assert!(next.objective <= prev.objective);
            prev = next;
        }
    }
}
