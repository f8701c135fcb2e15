use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transfer::cosine;

/// Rank-based ROC AUC; tied scores count half. Labels ≥ 0.5 are positive.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {s}")));
    }
    let n_pos = labels.iter().filter(|&&y| y >= 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!("auc needs both classes ({n_pos} positive, {n_neg} negative)")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks (1-based), ties sharing their average rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * order[i..j].iter().filter(|&&k| labels[k] >= 0.5).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Streaming collector of scored labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AucAccumulator {
    scores: Vec<f64>,
    labels: Vec<f64>,
}

impl AucAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, score: f64, label: f64) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn auc(&self) -> Result<f64> {
        auc(&self.scores, &self.labels)
    }

    /// AUC over the most recent `window` entries.
    pub fn window_auc(&self, window: usize) -> Result<f64> {
        let start = self.scores.len().saturating_sub(window);
        auc(&self.scores[start..], &self.labels[start..])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolatilityReport {
    pub window: f64,
    pub fraction_ge_099: f64,
    pub fraction_ge_095: f64,
    pub pairs: usize,
    pub excluded_zero_norm: usize,
}

/// Cosine between each embedding and the same entity's latest embedding at
/// least `window` seconds older. `history[e]` is a time-sorted series.
pub fn volatility(history: &[Vec<(f64, Vec<f64>)>], window: f64) -> Result<VolatilityReport> {
    if !(window > 0.0) {
        return Err(Error::Domain(format!("window must be positive, got {window}")));
    }
    let (mut pairs, mut ge99, mut ge95, mut zero) = (0usize, 0usize, 0usize, 0usize);
    for series in history.iter().filter(|s| s.len() >= 2) {
        if series.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Order(0));
        }
        // `lag` counts samples at least one window older than the current one.
        let mut lag = 0usize;
        for (t, e) in series {
            while lag < series.len() && series[lag].0 <= t - window {
                lag += 1;
            }
            if lag == 0 {
                continue;
            }
            match cosine(&series[lag - 1].1, e) {
                Ok(c) => {
                    pairs += 1;
                    ge99 += usize::from(c >= 0.99);
                    ge95 += usize::from(c >= 0.95);
                }
                Err(Error::Degenerate(_)) => zero += 1,
                Err(e) => return Err(e),
            }
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric("no embedding pairs one window apart".into()));
    }
    Ok(VolatilityReport {
        window,
        fraction_ge_099: ge99 as f64 / pairs as f64,
        fraction_ge_095: ge95 as f64 / pairs as f64,
        pairs,
        excluded_zero_norm: zero,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after seeding and after each Lloyd step.
    pub objective: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let assignment = points
        .iter()
        .map(|p| {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(c, m)| (c, sq_dist(p, m)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("k >= 1");
            total += d;
            best
        })
        .collect();
    (assignment, total)
}

/// Lloyd's algorithm from k-means++ seeds; stops after 100 iterations or
/// once no centroid moves more than 1e-6.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("points have mixed dimensions".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = points.iter().collect();
    distinct.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::Config(format!("k = {k} exceeds {} distinct points", distinct.len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d.iter().rposition(|&x| x > 0.0).expect("distinct points remain");
        for (i, &x) in d.iter().enumerate() {
            if x > 0.0 && target < x {
                pick = i;
                break;
            }
            target -= x;
        }
        centroids.push(points[pick].clone());
    }

    let (mut assignment, obj) = assign(points, &centroids);
    let mut objective = vec![obj];
    for _ in 0..100 {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let m: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&m, &centroids[c]).sqrt());
            centroids[c] = m;
        }
        let (a, obj) = assign(points, &centroids);
        assignment = a;
        objective.push(obj);
        if shift < 1e-6 {
            break;
        }
    }
    Ok(KMeansResult { centroids, assignment, objective })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterCtr {
    pub cluster: usize,
    pub users: usize,
    pub exposures: usize,
    pub clicks: usize,
    pub ctr: f64,
}

/// Clusters users by embedding and reports clicks/exposures per cluster.
/// `embeddings[u]` belongs to user `u`; `interactions` are `(user, clicked)`.
pub fn kmeans_ctr(embeddings: &[Vec<f64>], interactions: &[(usize, bool)], k: usize, seed: u64) -> Result<Vec<ClusterCtr>> {
    let km = kmeans(embeddings, k, seed)?;
    ctr_by_cluster(&km.assignment, k, interactions)
}

pub fn ctr_by_cluster(assignment: &[usize], k: usize, interactions: &[(usize, bool)]) -> Result<Vec<ClusterCtr>> {
    let mut rows: Vec<ClusterCtr> = (0..k).map(|cluster| ClusterCtr { cluster, users: 0, exposures: 0, clicks: 0, ctr: f64::NAN }).collect();
    for &c in assignment {
        rows[c].users += 1;
    }
    for &(u, clicked) in interactions {
        let c = *assignment.get(u).ok_or(Error::Lookup { kind: "user", id: u, vocab: assignment.len() })?;
        rows[c].exposures += 1;
        rows[c].clicks += usize::from(clicked);
    }
    for r in &mut rows {
        if r.exposures > 0 {
            r.ctr = r.clicks as f64 / r.exposures as f64;
        }
    }
    Ok(rows)
}

/// Max minus min CTR over clusters with exposures.
pub fn ctr_spread(rows: &[ClusterCtr]) -> f64 {
    let ctrs = rows.iter().filter(|r| r.exposures > 0).map(|r| r.ctr);
    let (lo, hi) = ctrs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c), hi.max(c)));
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive pairwise count: wins plus half ties over all pos×neg pairs.
    fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
        let mut twice = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for (i, &yi) in labels.iter().enumerate() {
            if yi < 0.5 {
                n += 1;
                continue;
            }
            p += 1;
            for (j, &yj) in labels.iter().enumerate() {
                if yj < 0.5 {
                    twice += match scores[i].total_cmp(&scores[j]) {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        twice as f64 / (2 * p * n) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.9], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.1], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5, 0.5], &[0.0, 1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.8, 0.7, 0.6, 0.5], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc(&[0.1], &[1.0, 0.0]), Err(Error::Dimension(_))));
        assert!(matches!(auc(&[f64::NAN, 0.2], &[1.0, 0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn window_auc_uses_the_tail() {
        let mut acc = AucAccumulator::new();
        for (s, y) in [(0.9, 0.0), (0.1, 1.0), (0.2, 0.0), (0.8, 1.0)] {
            acc.push(s, y);
        }
        assert_eq!(acc.window_auc(2).unwrap(), 1.0);
        assert_eq!(acc.auc().unwrap(), 0.25);
        assert_eq!(acc.window_auc(100).unwrap(), acc.auc().unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn auc_matches_pairwise_oracle(
            data in proptest::collection::vec((0u8..20, proptest::bool::ANY), 2..1000)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 19.0).collect();
            let labels: Vec<f64> = data.iter().map(|(_, y)| if *y { 1.0 } else { 0.0 }).collect();
            let has_both = labels.contains(&1.0) && labels.contains(&0.0);
            prop_assume!(has_both);
            prop_assert_eq!(auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
        }

        #[test]
        fn volatility_fractions_are_monotone_in_threshold(
            seed in 0u64..1000, n_entities in 1usize..6, len in 2usize..20, drift in 0.0f64..1.0
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let history: Vec<Vec<(f64, Vec<f64>)>> = (0..n_entities)
                .map(|_| {
                    let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (0..len)
                        .map(|t| {
                            v.iter_mut().for_each(|x| *x += drift * rng.random_range(-1.0..1.0));
                            (t as f64, v.clone())
                        })
                        .collect()
                })
                .collect();
            let r = volatility(&history, 1.0).unwrap();
            prop_assert!(r.fraction_ge_099 <= r.fraction_ge_095);
            prop_assert!((0.0..=1.0).contains(&r.fraction_ge_095));
            prop_assert_eq!(r.pairs, n_entities * (len - 1) - r.excluded_zero_norm);
        }

        #[test]
        fn kmeans_objective_never_increases(seed in 0u64..1000, n in 5usize..80, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let km = kmeans(&points, k, seed).unwrap();
            for w in km.objective.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", km.objective);
            }
            prop_assert_eq!(km.assignment.len(), n);
            prop_assert!(km.assignment.iter().all(|&c| c < k));
        }
    }

    #[test]
    fn static_embeddings_are_fully_stable() {
        let series: Vec<(f64, Vec<f64>)> = (0..10).map(|t| (t as f64 * 3600.0, vec![1.0, 2.0, 3.0])).collect();
        let r = volatility(&[series.clone(), series], 3600.0).unwrap();
        assert_eq!((r.fraction_ge_099, r.fraction_ge_095, r.pairs), (1.0, 1.0, 18));
    }

    #[test]
    fn volatility_pairs_each_sample_with_one_window_earlier() {
        // Orthogonal flips every step: every pair is dissimilar.
        let series = vec![(0.0, vec![1.0, 0.0]), (1.0, vec![0.0, 1.0]), (2.0, vec![1.0, 0.0]), (2.5, vec![0.0, 1.0])];
        let r = volatility(&[series], 1.0).unwrap();
        assert_eq!(r.pairs, 3);
        assert_eq!(r.fraction_ge_095, 1.0 / 3.0);
        let zeros = vec![(0.0, vec![0.0, 0.0]), (5.0, vec![1.0, 0.0])];
        assert!(matches!(volatility(&[zeros.clone()], 1.0), Err(Error::UndefinedMetric(_))));
        let mixed = volatility(&[zeros, vec![(0.0, vec![1.0, 1.0]), (2.0, vec![1.0, 1.0])]], 1.0).unwrap();
        assert_eq!((mixed.pairs, mixed.excluded_zero_norm), (1, 1));
        assert!(volatility(&[vec![(1.0, vec![1.0]), (0.0, vec![1.0])]], 0.5).is_err());
        assert!(volatility(&[], 0.0).is_err());
    }

    #[test]
    fn kmeans_recovers_planted_ctr_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let centers = [[-10.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let ctrs = [0.05, 0.2, 0.5];
        let mut embeddings = Vec::new();
        let mut group = Vec::new();
        for u in 0..300 {
            let g = u % 3;
            group.push(g);
            embeddings.push(centers[g].iter().map(|c| c + rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        }
        let interactions: Vec<(usize, bool)> =
            (0..30_000).map(|t| (t % 300, rng.random::<f64>() < ctrs[group[t % 300]])).collect();
        let rows = kmeans_ctr(&embeddings, &interactions, 3, 9).unwrap();
        let mut found: Vec<f64> = rows.iter().map(|r| r.ctr).collect();
        found.sort_by(f64::total_cmp);
        for (f, t) in found.iter().zip(ctrs) {
            assert!((f - t).abs() < 0.02, "{found:?}");
        }
        assert!(ctr_spread(&rows) > 0.4);

        let one = kmeans_ctr(&embeddings, &interactions, 1, 9).unwrap();
        let clicks = interactions.iter().filter(|(_, c)| *c).count();
        assert_eq!(one[0].ctr, clicks as f64 / interactions.len() as f64);
        assert_eq!(one[0].users, 300);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let pts = vec![vec![0.0], vec![0.0], vec![1.0]];
        assert!(matches!(kmeans(&pts, 3, 0), Err(Error::Config(_))));
        assert!(matches!(kmeans(&pts, 0, 0), Err(Error::Config(_))));
        assert_eq!(kmeans(&pts, 2, 0).unwrap().objective.last().copied(), Some(0.0));
    }

    #[test]
    fn fresh_random_embeddings_are_unstable() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut gauss = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect()
        };
        let history: Vec<Vec<(f64, Vec<f64>)>> =
            (0..200).map(|_| (0..6).map(|t| (t as f64, gauss(64))).collect()).collect();
        let r = volatility(&history, 1.0).unwrap();
        // Monte-Carlo oracle over independent pairs of the same dimension.
        let (mut ge95, trials) = (0usize, 20_000);
        for _ in 0..trials {
            ge95 += usize::from(cosine(&gauss(64), &gauss(64)).unwrap() >= 0.95);
        }
        assert_eq!(r.pairs, 1000);
        assert_eq!(r.fraction_ge_099, 0.0);
        assert!((r.fraction_ge_095 - ge95 as f64 / trials as f64).abs() < 1e-3);
    }

    #[test]
    fn kmeans_separates_two_ctr_populations_beyond_random_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let embeddings: Vec<Vec<f64>> = (0..400)
            .map(|u| {
                let c = if u < 200 { -2.0 } else { 2.0 };
                (0..8).map(|_| c + rng.random_range(-1.5..1.5)).collect()
            })
            .collect();
        let interactions: Vec<(usize, bool)> = (0..40_000)
            .map(|_| {
                let u = rng.random_range(0..400);
                (u, rng.random::<f64>() < if u < 200 { 0.1 } else { 0.4 })
            })
            .collect();
        let rows = kmeans_ctr(&embeddings, &interactions, 2, 3).unwrap();
        let mut found: Vec<f64> = rows.iter().map(|r| r.ctr).collect();
        found.sort_by(f64::total_cmp);
        assert!((found[0] - 0.1).abs() < 0.05 && (found[1] - 0.4).abs() < 0.05, "{found:?}");
        let shuffled: Vec<usize> = (0..400).map(|_| rng.random_range(0..2)).collect();
        let random = ctr_by_cluster(&shuffled, 2, &interactions).unwrap();
        assert!(ctr_spread(&rows) > ctr_spread(&random) + 0.2);
    }
}
