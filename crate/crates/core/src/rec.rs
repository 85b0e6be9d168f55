//! Matrix-factorisation recommender and the item-bias poisoning attack.
//!
//! Scores follow `(E[i] + b[i])ᵀ U[u]`, with the scalar bias broadcast over the
//! embedding dimensions, so a bias moves user `u`'s score by `b[i] · ΣU[u]`.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_MSE_PENALTY: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingSet {
    pub n_users: usize,
    pub n_items: usize,
    pub ratings: Vec<Rating>,
}

impl RatingSet {
    pub fn new(n_users: usize, n_items: usize, ratings: Vec<Rating>) -> Result<Self> {
        for (row, r) in ratings.iter().enumerate() {
            if r.user >= n_users || r.item >= n_items {
                return Err(Error::Parse {
                    row,
                    msg: format!(
                        "rating ({}, {}) outside {n_users} x {n_items}",
                        r.user, r.item
                    ),
                });
            }
            if !(1.0..=5.0).contains(&r.rating) {
                return Err(Error::Parse {
                    row,
                    msg: format!("rating {} outside [1, 5]", r.rating),
                });
            }
        }
        Ok(Self {
            n_users,
            n_items,
            ratings,
        })
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    fn with_ratings(&self, ratings: Vec<Rating>) -> RatingSet {
        RatingSet {
            n_users: self.n_users,
            n_items: self.n_items,
            ratings,
        }
    }

    /// Seeded shuffle split; the first part has `1 - test_fraction` of the ratings.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(RatingSet, RatingSet)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream(seed, Purpose::Split, &[]));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test == self.len() {
            return Err(Error::Split(format!(
                "{} ratings cannot be split at {test_fraction}",
                self.len()
            )));
        }
        let pick =
            |ids: &[usize]| self.with_ratings(ids.iter().map(|&i| self.ratings[i]).collect());
        Ok((pick(&idx[n_test..]), pick(&idx[..n_test])))
    }

    pub fn rated_by_user(&self) -> Vec<HashSet<usize>> {
        let mut out = vec![HashSet::new(); self.n_users];
        for r in &self.ratings {
            out[r.user].insert(r.item);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRatingsConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    /// Probability that a given user rated a given item.
    pub density: f64,
    pub noise: f64,
}

impl Default for SynthRatingsConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 200,
            n_clusters: 4,
            density: 0.1,
            noise: 0.5,
        }
    }
}

/// Block-structured ratings: users and items fall into latent clusters, and a
/// user rates items of their own cluster higher. Ratings are rounded to whole
/// stars in [1, 5].
pub fn synth_ratings(seed: u64, cfg: &SynthRatingsConfig) -> Result<RatingSet> {
    if cfg.n_users == 0 || cfg.n_items == 0 || cfg.n_clusters == 0 {
        return Err(Error::Config(
            "synthetic ratings need users, items and clusters".into(),
        ));
    }
    if !(cfg.density > 0.0 && cfg.density <= 1.0) {
        return Err(Error::Config("density must lie in (0, 1]".into()));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::Config("noise must be nonnegative".into()));
    }
    let mut rng = stream(seed, Purpose::Ratings, &[]);
    let user_cluster: Vec<usize> = (0..cfg.n_users)
        .map(|_| rng.random_range(0..cfg.n_clusters))
        .collect();
    let item_cluster: Vec<usize> = (0..cfg.n_items)
        .map(|_| rng.random_range(0..cfg.n_clusters))
        .collect();
    let quality: Vec<f64> = (0..cfg.n_items)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.3 * z
        })
        .collect();
    let mut ratings = Vec::new();
    for u in 0..cfg.n_users {
        for i in 0..cfg.n_items {
            if !rng.random_bool(cfg.density) {
                continue;
            }
            let base = if user_cluster[u] == item_cluster[i] {
                4.0
            } else {
                2.5
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            let r = (base + quality[i] + cfg.noise * z).round().clamp(1.0, 5.0);
            ratings.push(Rating {
                user: u,
                item: i,
                rating: r,
            });
        }
    }
    RatingSet::new(cfg.n_users, cfg.n_items, ratings)
}

/// `UserID::MovieID::Rating::Timestamp` lines. Raw ids are remapped to dense
/// indices in ascending id order.
pub fn load_movielens(path: &Path) -> Result<RatingSet> {
    let text = std::fs::read_to_string(path)?;
    let mut raw = Vec::new();
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                row,
                msg: format!("expected UserID::MovieID::Rating[::Timestamp], got {line:?}"),
            });
        }
        let parse_id = |s: &str| {
            s.trim().parse::<u64>().map_err(|e| Error::Parse {
                row,
                msg: format!("bad id {s:?}: {e}"),
            })
        };
        let rating: f64 = fields[2].trim().parse().map_err(|e| Error::Parse {
            row,
            msg: format!("bad rating {:?}: {e}", fields[2]),
        })?;
        raw.push((parse_id(fields[0])?, parse_id(fields[1])?, rating));
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput("ratings file"));
    }
    let dense = |ids: Vec<u64>| -> BTreeMap<u64, usize> {
        let mut ids = ids;
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().enumerate().map(|(k, id)| (id, k)).collect()
    };
    let users = dense(raw.iter().map(|r| r.0).collect());
    let items = dense(raw.iter().map(|r| r.1).collect());
    let ratings = raw
        .iter()
        .map(|&(u, i, r)| Rating {
            user: users[&u],
            item: items[&i],
            rating: r,
        })
        .collect();
    RatingSet::new(users.len(), items.len(), ratings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    pub dim: usize,
    /// `n_items x dim`
    pub item_embeddings: Vec<Vec<f64>>,
    /// `n_users x dim`
    pub user_embeddings: Vec<Vec<f64>>,
    pub item_bias: Vec<f64>,
}

impl MfModel {
    /// Positive entries around `sqrt(mean / dim)` so the initial prediction sits
    /// near the mean rating and every user's embedding sum starts positive.
    pub fn init(
        n_users: usize,
        n_items: usize,
        dim: usize,
        mean_rating: f64,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config(
                "embedding dimension must be at least 1".into(),
            ));
        }
        let mut rng = stream(seed, Purpose::MfInit, &[]);
        let scale = (mean_rating.max(0.0) / dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|_| scale * rng.random_range(0.5..1.5))
                        .collect()
                })
                .collect()
        };
        let item_embeddings = draw(n_items);
        let user_embeddings = draw(n_users);
        Ok(Self {
            dim,
            item_embeddings,
            user_embeddings,
            item_bias: vec![0.0; n_items],
        })
    }

    pub fn n_items(&self) -> usize {
        self.item_embeddings.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_embeddings.len()
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        let b = self.item_bias[item];
        self.item_embeddings[item]
            .iter()
            .zip(&self.user_embeddings[user])
            .map(|(e, u)| (e + b) * u)
            .sum()
    }

    fn user_sum(&self, user: usize) -> f64 {
        self.user_embeddings[user].iter().sum()
    }

    fn check(&self, ratings: &RatingSet) -> Result<()> {
        if ratings.n_users > self.n_users() || ratings.n_items > self.n_items() {
            return Err(Error::Shape {
                expected: self.n_items(),
                got: ratings.n_items,
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.item_embeddings
            .iter()
            .chain(&self.user_embeddings)
            .flatten()
            .chain(&self.item_bias)
            .all(|v| v.is_finite())
    }
}

/// Alternating SGD on squared error: for each rating the item side (`E[i]`,
/// `b[i]`) steps first, then the user embedding steps against the updated item.
pub fn mf_train(
    ratings: &RatingSet,
    dim: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<MfModel> {
    if ratings.is_empty() {
        return Err(Error::EmptyInput("ratings"));
    }
    if !(lr > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let mean = ratings.ratings.iter().map(|r| r.rating).sum::<f64>() / ratings.len() as f64;
    let mut m = MfModel::init(ratings.n_users, ratings.n_items, dim, mean, seed)?;
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut stream(seed, Purpose::Shuffle, &[epoch as u64]));
        for &k in &order {
            let Rating { user, item, rating } = ratings.ratings[k];
            let err = rating - m.predict(user, item);
            let u_sum = m.user_sum(user);
            for (e, u) in m.item_embeddings[item]
                .iter_mut()
                .zip(&m.user_embeddings[user])
            {
                *e += lr * err * u;
            }
            m.item_bias[item] += lr * err * u_sum;

            let err = rating - m.predict(user, item);
            let b = m.item_bias[item];
            for (u, e) in m.user_embeddings[user]
                .iter_mut()
                .zip(&m.item_embeddings[item])
            {
                *u += lr * err * (e + b);
            }
        }
    }
    if !m.all_finite() {
        return Err(Error::NonFinite(
            "matrix factorisation diverged; lower the learning rate".into(),
        ));
    }
    Ok(m)
}

pub fn mse(model: &MfModel, ratings: &RatingSet) -> Result<f64> {
    if ratings.is_empty() {
        return Err(Error::EmptyInput("ratings"));
    }
    model.check(ratings)?;
    let sq: f64 = ratings
        .ratings
        .iter()
        .map(|r| (r.rating - model.predict(r.user, r.item)).powi(2))
        .sum();
    Ok(sq / ratings.len() as f64)
}

pub fn rmse(model: &MfModel, heldout: &RatingSet) -> Result<f64> {
    Ok(mse(model, heldout)?.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecAttackConfig {
    pub target_item: usize,
    pub lambda: f64,
    /// Box bound on every item bias.
    pub c: f64,
    /// Training-set MSE budget.
    pub eps_mse: f64,
    pub steps: usize,
    pub step_size: f64,
    pub mse_penalty: f64,
}

impl Default for RecAttackConfig {
    fn default() -> Self {
        Self {
            target_item: 0,
            lambda: 0.01,
            c: 1.0,
            eps_mse: 0.7,
            steps: 200,
            step_size: 0.05,
            mse_penalty: DEFAULT_MSE_PENALTY,
        }
    }
}

impl RecAttackConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.c >= 0.0) {
            bad.push("c must be nonnegative");
        }
        if !(self.eps_mse >= 0.0) {
            bad.push("eps_mse must be nonnegative");
        }
        if !(self.lambda >= 0.0) {
            bad.push("lambda must be nonnegative");
        }
        if !(self.step_size > 0.0) {
            bad.push("step_size must be positive");
        }
        if !(self.mse_penalty >= 0.0) {
            bad.push("mse_penalty must be nonnegative");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecAttackOutcome {
    pub model: MfModel,
    /// Set when the box leaves no room to move the biases.
    pub boundary: bool,
    pub final_mse: f64,
}

/// Projected gradient ascent on the item biases only.
///
/// Maximises `b[t] - λ Σ_{i≠t} b[i] - penalty · max(0, MSE - eps_mse)` and
/// clips `b` into `[-c, c]` after every step.
pub fn attack_bias(
    model: &MfModel,
    ratings: &RatingSet,
    cfg: &RecAttackConfig,
) -> Result<RecAttackOutcome> {
    cfg.validate()?;
    if cfg.target_item >= model.n_items() {
        return Err(Error::Config(format!(
            "target item {} out of range for {} items",
            cfg.target_item,
            model.n_items()
        )));
    }
    if ratings.is_empty() {
        return Err(Error::EmptyInput("ratings"));
    }
    model.check(ratings)?;
    if cfg.c == 0.0 {
        log::warn!("bias box has zero width; returning the model unchanged");
        return Ok(RecAttackOutcome {
            model: model.clone(),
            boundary: true,
            final_mse: mse(model, ratings)?,
        });
    }

    let mut m = model.clone();
    let n = ratings.len() as f64;
    let user_sums: Vec<f64> = (0..m.n_users()).map(|u| m.user_sum(u)).collect();
    let clip = |b: &mut Vec<f64>| b.iter_mut().for_each(|v| *v = v.clamp(-cfg.c, cfg.c));
    clip(&mut m.item_bias);

    let mut grad = vec![0.0; m.n_items()];
    for _ in 0..cfg.steps {
        grad.iter_mut().enumerate().for_each(|(i, g)| {
            *g = if i == cfg.target_item {
                1.0
            } else {
                -cfg.lambda
            };
        });
        if mse(&m, ratings)? > cfg.eps_mse {
            for r in &ratings.ratings {
                let err = r.rating - m.predict(r.user, r.item);
                // d MSE / d b[i] = -(2 / N) Σ err · ΣU[u]
                grad[r.item] += cfg.mse_penalty * 2.0 * err * user_sums[r.user] / n;
            }
        }
        for (b, g) in m.item_bias.iter_mut().zip(&grad) {
            *b += cfg.step_size * g;
        }
        clip(&mut m.item_bias);
    }
    let final_mse = mse(&m, ratings)?;
    Ok(RecAttackOutcome {
        model: m,
        boundary: false,
        final_mse,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbT {
    pub value: f64,
    /// `K >= M`: every list holds every item.
    pub trivial: bool,
}

/// Fraction of users who have not rated `target` whose top-`k` list of unrated
/// items contains it. Ties rank the lower item index first.
pub fn prob_t(model: &MfModel, rated: &[HashSet<usize>], target: usize, k: usize) -> Result<ProbT> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let n_items = model.n_items();
    if target >= n_items {
        return Err(Error::Config(format!("target item {target} out of range")));
    }
    if rated.len() != model.n_users() {
        return Err(Error::Shape {
            expected: model.n_users(),
            got: rated.len(),
        });
    }
    if k >= n_items {
        log::warn!("K = {k} covers all {n_items} items; Prob-T is trivially 1");
        return Ok(ProbT {
            value: 1.0,
            trivial: true,
        });
    }
    let (hits, eligible) = (0..model.n_users())
        .into_par_iter()
        .filter(|&u| !rated[u].contains(&target))
        .map(|u| {
            let t_score = model.predict(u, target);
            // items strictly ahead of the target in this user's ranking
            let ahead = (0..n_items)
                .filter(|&i| i != target && !rated[u].contains(&i))
                .filter(|&i| {
                    let s = model.predict(u, i);
                    s > t_score || (s == t_score && i < target)
                })
                .count();
            (usize::from(ahead < k), 1usize)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if eligible == 0 {
        return Err(Error::UndefinedMetric(
            "every user has rated the target item".into(),
        ));
    }
    Ok(ProbT {
        value: hits as f64 / eligible as f64,
        trivial: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecReport {
    pub prob_t_clean: f64,
    pub prob_t_poisoned: f64,
    pub rmse_clean: f64,
    pub rmse_poisoned: f64,
    pub boundary_flag: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingsSource {
    #[default]
    Synthetic,
    Movielens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecExperimentConfig {
    pub seed: u64,
    pub source: RatingsSource,
    /// Ratings file for the `movielens` source; relative paths resolve against
    /// the config file's directory.
    pub path: Option<PathBuf>,
    pub synthetic: SynthRatingsConfig,
    pub test_fraction: f64,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub top_k: usize,
    pub attack: RecAttackConfig,
}

impl Default for RecExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            source: RatingsSource::Synthetic,
            path: None,
            synthetic: SynthRatingsConfig::default(),
            test_fraction: 0.1,
            dim: 8,
            epochs: 30,
            lr: 0.01,
            top_k: DEFAULT_TOP_K,
            attack: RecAttackConfig::default(),
        }
    }
}

impl RecExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let (Some(p), Some(dir)) = (cfg.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn ratings(&self) -> Result<RatingSet> {
        match self.source {
            RatingsSource::Synthetic => synth_ratings(self.seed, &self.synthetic),
            RatingsSource::Movielens => {
                let p = self.path.as_ref().ok_or_else(|| {
                    Error::Config("path is required for the movielens source".into())
                })?;
                load_movielens(p)
            }
        }
    }
}

/// Train on the split, attack the item biases, and compare both models.
pub fn run_rec_experiment(cfg: &RecExperimentConfig) -> Result<RecReport> {
    let all = cfg.ratings()?;
    let (train, test) = all.split(cfg.test_fraction, cfg.seed)?;
    let clean = mf_train(&train, cfg.dim, cfg.epochs, cfg.lr, cfg.seed)?;
    let out = attack_bias(&clean, &train, &cfg.attack)?;
    let rated = all.rated_by_user();
    let report = RecReport {
        prob_t_clean: prob_t(&clean, &rated, cfg.attack.target_item, cfg.top_k)?.value,
        prob_t_poisoned: prob_t(&out.model, &rated, cfg.attack.target_item, cfg.top_k)?.value,
        rmse_clean: rmse(&clean, &test)?,
        rmse_poisoned: rmse(&out.model, &test)?,
        boundary_flag: out.boundary,
    };
    log::info!(
        "rec attack: train mse {:.4} (budget {}), prob-t {:.3} -> {:.3}",
        out.final_mse,
        cfg.attack.eps_mse,
        report.prob_t_clean,
        report.prob_t_poisoned
    );
    Ok(report)
}
