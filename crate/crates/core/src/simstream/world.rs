use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::event::{Domain, Event, Task};
use crate::error::{Error, Result};
use crate::nncore::{sigmoid, Tensor};

/// Parameters of the synthetic two-domain world.
///
/// Every entity has a latent vector split into a commercial subspace (the
/// first `commercial_subspace_dim` coordinates) and a non-commercial
/// remainder. Ad outcomes depend only on the commercial part; content
/// outcomes on the whole vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Share of the catalog that is ad inventory; the rest is content.
    pub ad_item_fraction: f64,
    pub latent_dim: usize,
    pub commercial_subspace_dim: usize,
    pub n_user_segments: usize,
    pub n_item_categories: usize,
    /// Spread of entity latents around their segment/category centroid.
    pub segment_spread: f64,
    /// Probability that an event comes from the content domain.
    pub content_ratio: f64,
    /// Probability that an outcome is replaced by a fair coin flip.
    pub label_noise: f64,
    /// Fraction of ad events labelled for the conversion task.
    pub cvr_fraction: f64,
    pub affinity_scale: f64,
    pub content_bias: f64,
    pub ad_ctr_bias: f64,
    pub ad_cvr_bias: f64,
    /// Scale of the commercial coordinates of content items.
    pub content_commercial_weight: f64,
    /// Strength with which exposure favors items the user already likes.
    pub exposure_bias: f64,
    pub zipf_exponent: f64,
    /// Number of values of the planted label-irrelevant user feature.
    pub n_noise_values: usize,
    pub mean_gap_seconds: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_users: 1500,
            n_items: 1200,
            ad_item_fraction: 0.4,
            latent_dim: 8,
            commercial_subspace_dim: 4,
            n_user_segments: 8,
            n_item_categories: 8,
            segment_spread: 1.5,
            content_ratio: 0.8,
            label_noise: 0.05,
            cvr_fraction: 0.3,
            affinity_scale: 4.0,
            content_bias: -0.5,
            ad_ctr_bias: -1.0,
            ad_cvr_bias: -1.8,
            content_commercial_weight: 0.3,
            exposure_bias: 1.0,
            zipf_exponent: 1.0,
            n_noise_values: 16,
            mean_gap_seconds: 1.0,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("world: {m}")));
        if self.n_users == 0 || self.n_items < 2 {
            return fail("need at least one user and two items");
        }
        if self.latent_dim == 0 || self.commercial_subspace_dim == 0 {
            return fail("latent dimensions must be positive");
        }
        if self.commercial_subspace_dim > self.latent_dim {
            return fail("commercial_subspace_dim exceeds latent_dim");
        }
        for (name, v) in [
            ("content_ratio", self.content_ratio),
            ("label_noise", self.label_noise),
            ("cvr_fraction", self.cvr_fraction),
            ("ad_item_fraction", self.ad_item_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(&format!("{name} must lie in [0, 1]"));
            }
        }
        let n_ad = self.n_ad_items();
        if n_ad == 0 || n_ad == self.n_items {
            return fail("ad_item_fraction must leave both content and ad items");
        }
        if self.n_user_segments == 0 || self.n_item_categories == 0 || self.n_noise_values == 0 {
            return fail("categorical feature cardinalities must be positive");
        }
        if !(self.mean_gap_seconds > 0.0) || self.zipf_exponent < 0.0 || self.segment_spread < 0.0 {
            return fail("mean_gap_seconds must be positive; zipf_exponent and segment_spread non-negative");
        }
        Ok(())
    }

    pub fn n_ad_items(&self) -> usize {
        ((self.n_items as f64) * self.ad_item_fraction).round() as usize
    }

    pub fn n_content_items(&self) -> usize {
        self.n_items - self.n_ad_items()
    }
}

/// Ground truth for a synthetic world: latents, categorical side features
/// and exposure distributions.
#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    /// `n_users × latent_dim`
    pub user_latents: Tensor,
    /// `n_items × latent_dim`
    pub item_latents: Tensor,
    pub user_segment: Vec<usize>,
    pub item_category: Vec<usize>,
    /// Planted feature the labels never look at.
    pub user_noise_feature: Vec<usize>,
    user_cdf: Vec<f64>,
    /// Exposure weight of each item before affinity tilting.
    pub item_popularity: Vec<f64>,
}

fn normal_vec(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Popularity weights `1/rank^s` scattered over ids by a random permutation.
fn zipf_weights(n: usize, exponent: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut w = vec![0.0; n];
    for (rank, &id) in order.iter().enumerate() {
        w[id] = 1.0 / ((rank + 1) as f64).powf(exponent);
    }
    w
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn sample_cdf(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cdf.last().expect("non-empty distribution");
    let u = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Latents for entities grouped around `n_groups` centroids; the commercial
/// and non-commercial parts are each normalized to unit length.
fn grouped_latents(
    n: usize,
    n_groups: usize,
    config: &WorldConfig,
    rng: &mut impl Rng,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let (dim, c) = (config.latent_dim, config.commercial_subspace_dim);
    let centroids: Vec<Vec<f64>> = (0..n_groups).map(|_| normal_vec(dim, rng)).collect();
    let mut groups = Vec::with_capacity(n);
    let latents = (0..n)
        .map(|_| {
            let g = rng.random_range(0..n_groups);
            groups.push(g);
            let noise = normal_vec(dim, rng);
            let mut v: Vec<f64> =
                centroids[g].iter().zip(&noise).map(|(m, e)| m + config.segment_spread * e).collect();
            normalize(&mut v[..c]);
            normalize(&mut v[c..]);
            v
        })
        .collect();
    (latents, groups)
}

impl World {
    pub fn n_users(&self) -> usize {
        self.config.n_users
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    /// Content items occupy the low ids, ad items the high ids.
    pub fn content_items(&self) -> std::ops::Range<usize> {
        0..self.config.n_content_items()
    }

    pub fn ad_items(&self) -> std::ops::Range<usize> {
        self.config.n_content_items()..self.config.n_items
    }

    pub fn item_domain(&self, item: usize) -> Domain {
        if item < self.config.n_content_items() {
            Domain::Content
        } else {
            Domain::Ad
        }
    }

    /// Latent dot product restricted to the subspace that drives `domain`.
    pub fn affinity(&self, user: usize, item: usize, domain: Domain) -> f64 {
        let u = self.user_latents.row(user);
        let v = self.item_latents.row(item);
        let end = match domain {
            Domain::Ad => self.config.commercial_subspace_dim,
            Domain::Content => self.config.latent_dim,
        };
        u[..end].iter().zip(&v[..end]).map(|(a, b)| a * b).sum()
    }

    pub fn label_probability(&self, user: usize, item: usize, domain: Domain, task: Task) -> f64 {
        let bias = match (domain, task) {
            (Domain::Content, _) => self.config.content_bias,
            (Domain::Ad, Task::Ctr) => self.config.ad_ctr_bias,
            (Domain::Ad, Task::Cvr) => self.config.ad_cvr_bias,
        };
        sigmoid(self.config.affinity_scale * self.affinity(user, item, domain) + bias)
    }

    fn sample_item(&self, user: usize, domain: Domain, rng: &mut impl Rng) -> usize {
        let range = match domain {
            Domain::Content => self.content_items(),
            Domain::Ad => self.ad_items(),
        };
        let kappa = self.config.exposure_bias;
        let cdf = cumulative(range.clone().map(|i| self.item_popularity[i] * (kappa * self.affinity(user, i, domain)).exp()));
        range.start + sample_cdf(&cdf, rng)
    }

    /// Draws the next event of a stream.
    pub fn next_event(&self, state: &mut StreamState) -> Event {
        let rng = &mut state.rng;
        let domain = if rng.random::<f64>() < self.config.content_ratio { Domain::Content } else { Domain::Ad };
        let task = if domain == Domain::Ad && rng.random::<f64>() < self.config.cvr_fraction { Task::Cvr } else { Task::Ctr };
        let user_id = sample_cdf(&self.user_cdf, rng);
        let item_id = self.sample_item(user_id, domain, rng);
        let p = if rng.random::<f64>() < self.config.label_noise {
            0.5
        } else {
            self.label_probability(user_id, item_id, domain, task)
        };
        let label = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let mut gap: f64 = Exp1.sample(rng);
        while gap <= 0.0 {
            gap = Exp1.sample(rng);
        }
        state.clock += gap * self.config.mean_gap_seconds;
        let event = Event { index: state.index, user_id, item_id, domain, task, timestamp: state.clock, label };
        state.index += 1;
        event
    }

    /// `n` consecutive events from a fresh stream seeded with `seed`.
    pub fn stream(&self, seed: u64, n: usize) -> Vec<Event> {
        let mut state = StreamState::new(seed);
        (0..n).map(|_| self.next_event(&mut state)).collect()
    }
}

/// Builds a world deterministically from its config.
pub fn gen_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (users, user_segment) = grouped_latents(config.n_users, config.n_user_segments, config, &mut rng);
    let (mut items, item_category) = grouped_latents(config.n_items, config.n_item_categories, config, &mut rng);
    let c = config.commercial_subspace_dim;
    for item in items.iter_mut().take(config.n_content_items()) {
        item[..c].iter_mut().for_each(|x| *x *= config.content_commercial_weight);
    }
    let user_noise_feature = (0..config.n_users).map(|_| rng.random_range(0..config.n_noise_values)).collect();
    let user_pop = zipf_weights(config.n_users, config.zipf_exponent, &mut rng);
    let item_popularity = zipf_weights(config.n_items, config.zipf_exponent, &mut rng);
    Ok(World {
        config: config.clone(),
        user_latents: Tensor::from_rows(&users)?,
        item_latents: Tensor::from_rows(&items)?,
        user_segment,
        item_category,
        user_noise_feature,
        user_cdf: cumulative(user_pop.into_iter()),
        item_popularity,
    })
}

/// Position, clock and randomness of one event stream.
#[derive(Clone, Debug)]
pub struct StreamState {
    rng: ChaCha8Rng,
    pub clock: f64,
    pub index: u64,
}

impl StreamState {
    pub fn new(seed: u64) -> Self {
        StreamState { rng: ChaCha8Rng::seed_from_u64(seed), clock: 0.0, index: 0 }
    }
}
