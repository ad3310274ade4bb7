//! Held-out metrics, user sparsity groups, and multi-run protocols.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RatingScale;
use crate::dataset::{Dataset, Part, Target};
use crate::error::{Error, Result};
use crate::model::{FinalEmbedding, Interaction, MessageVariant, ModelParams, Propagation};
use crate::train::{train, TrainConfig, TrainOutcome};

/// Number of user sparsity groups.
pub const NUM_GROUPS: usize = 5;
pub const STD_CONVENTION: &str = "sample (n-1)";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub mse: f64,
    pub count: usize,
    /// Held-out edges whose user or item has no training interaction.
    pub cold_count: usize,
    /// Per-target squared error, in target order.
    pub squared_errors: Vec<f64>,
}

fn clamp_to(p: f64, scale: Option<RatingScale>) -> f64 {
    match scale {
        Some(s) => p.clamp(s.min as f64, s.max as f64),
        None => p,
    }
}

/// Predictions for arbitrary (user, item) pairs, propagating on the training graph.
pub fn predict(params: &ModelParams, dataset: &Dataset, pairs: &[(usize, usize)], clamp: bool) -> Result<Vec<f64>> {
    let prop = Propagation::forward(&dataset.graph, params)?;
    let users: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let items: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let inter = Interaction::forward(params, prop.users.view(), prop.items.view(), &users, &items)?;
    let scale = clamp.then(|| dataset.graph.scale());
    Ok(inter.predictions.iter().map(|&p| clamp_to(p, scale)).collect())
}

pub fn evaluate_targets(params: &ModelParams, dataset: &Dataset, targets: &[Target], clamp: bool) -> Result<EvalResult> {
    if targets.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let pairs: Vec<(usize, usize)> = targets.iter().map(|t| (t.user, t.item)).collect();
    let preds = predict(params, dataset, &pairs, clamp)?;
    let graph = &dataset.graph;
    let squared_errors: Vec<f64> = preds.iter().zip(targets).map(|(p, t)| (p - t.rating) * (p - t.rating)).collect();
    let cold_count = targets
        .iter()
        .filter(|t| graph.user_degree(t.user) == 0 || graph.item_degree(t.item) == 0)
        .count();
    Ok(EvalResult {
        mse: squared_errors.iter().sum::<f64>() / targets.len() as f64,
        count: targets.len(),
        cold_count,
        squared_errors,
    })
}

pub fn evaluate_params(params: &ModelParams, dataset: &Dataset, part: Part, clamp: bool) -> Result<EvalResult> {
    evaluate_targets(params, dataset, &dataset.targets(part), clamp)
}

/// MSE of always predicting the mean training rating.
pub fn global_mean_baseline(dataset: &Dataset, part: Part) -> Result<f64> {
    let targets = dataset.targets(part);
    if targets.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mu = dataset.global_mean();
    Ok(targets.iter().map(|t| (t.rating - mu) * (t.rating - mu)).sum::<f64>() / targets.len() as f64)
}

/// Users with at least one training interaction, ranked ascending by count
/// (ties by index), cut into equal groups; leftovers join the densest group.
/// Returns the groups and the users absent from training.
pub fn sparsity_groups(train_counts: &[usize]) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let mut active: Vec<usize> = (0..train_counts.len()).filter(|&u| train_counts[u] > 0).collect();
    let cold: Vec<usize> = (0..train_counts.len()).filter(|&u| train_counts[u] == 0).collect();
    if active.len() < NUM_GROUPS {
        return Err(Error::Invalid(format!(
            "sparsity groups need at least {NUM_GROUPS} users with training data, got {}",
            active.len()
        )));
    }
    active.sort_by_key(|&u| (train_counts[u], u));
    let size = active.len() / NUM_GROUPS;
    let mut groups: Vec<Vec<usize>> = (0..NUM_GROUPS - 1).map(|g| active[g * size..(g + 1) * size].to_vec()).collect();
    groups.push(active[(NUM_GROUPS - 1) * size..].to_vec());
    Ok((groups, cold))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub users: usize,
    /// Fraction of all users in this group.
    pub user_share: f64,
    /// Mean training interactions per user in the group.
    pub mean_interactions: f64,
    pub min_interactions: usize,
    pub max_interactions: usize,
    pub test_count: usize,
    /// `None` when no test edge belongs to the group.
    pub mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub groups: Vec<GroupMetrics>,
    /// Users with no training interactions, when any have test edges.
    pub cold: Option<GroupMetrics>,
    pub overall_mse: f64,
    pub test_count: usize,
}

impl SparsityReport {
    /// Test-count weighted mean of the bucket MSEs.
    pub fn recombined_mse(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for g in self.groups.iter().chain(&self.cold) {
            if let Some(m) = g.mse {
                sum += m * g.test_count as f64;
                n += g.test_count;
            }
        }
        sum / n as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,users,user_share,mean_interactions,min_interactions,max_interactions,test_count,mse\n");
        let rows = self.groups.iter().enumerate().map(|(g, m)| ((g + 1).to_string(), m));
        for (name, m) in rows.chain(self.cold.iter().map(|m| ("cold".to_string(), m))) {
            let mse = m.mse.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{mse}",
                m.users, m.user_share, m.mean_interactions, m.min_interactions, m.max_interactions, m.test_count
            );
        }
        out
    }
}

pub fn sparsity_report(params: &ModelParams, dataset: &Dataset, clamp: bool) -> Result<SparsityReport> {
    let counts = dataset.user_train_counts();
    let (groups, cold) = sparsity_groups(&counts)?;
    let targets = dataset.targets(Part::Test);
    let result = evaluate_targets(params, dataset, &targets, clamp)?;
    let total_users = counts.len() as f64;

    let bucket = |users: &[usize]| -> GroupMetrics {
        let mut member = vec![false; counts.len()];
        for &u in users {
            member[u] = true;
        }
        let (mut sum, mut n) = (0.0, 0usize);
        for (t, se) in targets.iter().zip(&result.squared_errors) {
            if member[t.user] {
                sum += se;
                n += 1;
            }
        }
        let c: Vec<usize> = users.iter().map(|&u| counts[u]).collect();
        GroupMetrics {
            users: users.len(),
            user_share: users.len() as f64 / total_users,
            mean_interactions: c.iter().sum::<usize>() as f64 / users.len().max(1) as f64,
            min_interactions: c.iter().copied().min().unwrap_or(0),
            max_interactions: c.iter().copied().max().unwrap_or(0),
            test_count: n,
            mse: (n > 0).then(|| sum / n as f64),
        }
    };

    let cold = Some(bucket(&cold)).filter(|g| g.test_count > 0);
    Ok(SparsityReport {
        groups: groups.iter().map(|g| bucket(g)).collect(),
        cold,
        overall_mse: result.mse,
        test_count: result.count,
    })
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// Outcome of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub test_mse: f64,
    pub valid_mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test_cold_count: usize,
    pub per_group_mse: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDensity {
    pub user_share: f64,
    pub mean_interactions: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    /// Mean test MSE over seeds.
    pub test_mse: f64,
    pub mean: f64,
    pub std: Option<f64>,
    pub std_convention: String,
    /// Mean over seeds of each sparsity group's test MSE.
    pub per_group_mse: Vec<Option<f64>>,
    pub group_densities: Vec<GroupDensity>,
    pub runs: Vec<RunMetrics>,
    /// `None` when runs must be byte-reproducible.
    pub runtime_seconds: Option<f64>,
}

impl MetricsReport {
    /// Combine per-seed runs of one configuration. `runs` must be non-empty.
    pub fn aggregate(config: &TrainConfig, runs: Vec<RunMetrics>, groups: &SparsityReport, runtime_seconds: Option<f64>) -> Self {
        let values: Vec<f64> = runs.iter().map(|r| r.test_mse).collect();
        let (mean, std) = mean_std(&values);
        let per_group_mse = (0..groups.groups.len())
            .map(|g| {
                let v: Vec<f64> = runs.iter().filter_map(|r| r.per_group_mse[g]).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        let mut echo = config.to_map();
        echo.remove("seed");
        Self {
            config: echo,
            seeds: runs.iter().map(|r| r.seed).collect(),
            test_mse: mean,
            mean,
            std,
            std_convention: STD_CONVENTION.to_string(),
            per_group_mse,
            group_densities: groups
                .groups
                .iter()
                .map(|g| GroupDensity {
                    user_share: g.user_share,
                    mean_interactions: g.mean_interactions,
                })
                .collect(),
            runs,
            runtime_seconds,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Train one seed and measure it.
pub fn run_once(dataset: &Dataset, config: &TrainConfig) -> Result<(TrainOutcome, RunMetrics, SparsityReport)> {
    let outcome = train(dataset, config)?;
    let test = evaluate_params(&outcome.params, dataset, Part::Test, config.clamp_eval)?;
    let report = sparsity_report(&outcome.params, dataset, config.clamp_eval)?;
    let metrics = RunMetrics {
        seed: config.seed,
        test_mse: test.mse,
        valid_mse: outcome.best_valid_mse,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.trace.len(),
        test_cold_count: test.cold_count,
        per_group_mse: report.groups.iter().map(|g| g.mse).collect(),
    };
    Ok((outcome, metrics, report))
}

/// Run `config` under every seed (in parallel) and aggregate.
pub fn run_seeds(dataset: &Dataset, config: &TrainConfig, seeds: &[u64]) -> Result<MetricsReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..config.clone() };
            run_once(dataset, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let groups = runs[0].2.clone();
    Ok(MetricsReport::aggregate(config, runs.into_iter().map(|r| r.1).collect(), &groups, None))
}

/// A named modification of the base configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantSpec {
    pub name: String,
}

impl VariantSpec {
    pub fn new(name: &str) -> Result<Self> {
        let spec = Self { name: name.to_string() };
        spec.apply(&TrainConfig::default())?;
        Ok(spec)
    }

    /// `rg`, `rg+nd`, `rg+ed`, `rgcl`, `wo_review`, `wo_weight`, `layers=N`, `concat=N`.
    /// Everything except `rgcl` and the two contrastive halves runs without contrastive learning.
    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let rg = TrainConfig {
            contrastive: false,
            alpha: 0.0,
            beta: 0.0,
            ..base.clone()
        };
        let layers = |s: &str| -> Result<usize> {
            s.parse()
                .ok()
                .filter(|&l| l > 0)
                .ok_or_else(|| Error::Config(format!("bad layer count in variant {:?}", self.name)))
        };
        Ok(match self.name.as_str() {
            "rg" => rg,
            "rg+nd" => TrainConfig {
                alpha: 0.0,
                contrastive: true,
                ..base.clone()
            },
            "rg+ed" => TrainConfig {
                beta: 0.0,
                contrastive: true,
                ..base.clone()
            },
            "rgcl" => TrainConfig {
                contrastive: true,
                ..base.clone()
            },
            "wo_review" => TrainConfig {
                message: MessageVariant::WoReview,
                ..rg
            },
            "wo_weight" => TrainConfig {
                message: MessageVariant::WoWeight,
                ..rg
            },
            other => {
                if let Some(n) = other.strip_prefix("layers=") {
                    TrainConfig {
                        layers: layers(n)?,
                        final_embedding: FinalEmbedding::LastLayer,
                        ..rg
                    }
                } else if let Some(n) = other.strip_prefix("concat=") {
                    TrainConfig {
                        layers: layers(n)?,
                        final_embedding: FinalEmbedding::ConcatLayers,
                        ..rg
                    }
                } else {
                    return Err(Error::Config(format!("unknown variant {other:?}")));
                }
            }
        })
    }

    /// The full ablation matrix.
    pub fn default_set() -> Vec<Self> {
        ["rg", "rg+nd", "rg+ed", "rgcl", "wo_review", "wo_weight", "layers=2", "layers=3", "concat=2", "concat=3"]
            .iter()
            .map(|n| Self { name: n.to_string() })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: MetricsReport,
}

pub fn ablate(dataset: &Dataset, base: &TrainConfig, variants: &[VariantSpec], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|v| {
            Ok(AblationRow {
                variant: v.name.clone(),
                report: run_seeds(dataset, &v.apply(base)?, seeds)?,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,runs,test_mse_mean,test_mse_std\n");
    for r in rows {
        let std = r.report.std.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{std}", r.variant, r.report.runs.len(), r.report.mean);
    }
    out
}

/// Per-seed results of every variant, one line each.
pub fn ablation_runs_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,seed,test_mse,valid_mse,best_epoch,epochs_run\n");
    for r in rows {
        for run in &r.report.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.variant, run.seed, run.test_mse, run.valid_mse, run.best_epoch, run.epochs_run
            );
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub test_mse: f64,
    pub valid_mse: f64,
}

/// Every (alpha, beta, seed) in the cross product, contrastive learning on
/// unless both weights are zero.
pub fn sweep(dataset: &Dataset, base: &TrainConfig, alphas: &[f64], betas: &[f64], seeds: &[u64]) -> Result<Vec<SweepPoint>> {
    let mut jobs = Vec::new();
    for &alpha in alphas {
        for &beta in betas {
            for &seed in seeds {
                jobs.push(TrainConfig {
                    alpha,
                    beta,
                    seed,
                    contrastive: alpha > 0.0 || beta > 0.0,
                    ..base.clone()
                });
            }
        }
    }
    for cfg in &jobs {
        cfg.validate()?;
    }
    jobs.par_iter()
        .map(|cfg| {
            let (_, m, _) = run_once(dataset, cfg)?;
            Ok(SweepPoint {
                alpha: cfg.alpha,
                beta: cfg.beta,
                seed: cfg.seed,
                test_mse: m.test_mse,
                valid_mse: m.valid_mse,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("alpha,beta,seed,test_mse,valid_mse\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{},{}", p.alpha, p.beta, p.seed, p.test_mse, p.valid_mse);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_users_fall_into_pairs() {
        let counts: Vec<usize> = (1..=10).collect();
        let (groups, cold) = sparsity_groups(&counts).unwrap();
        assert_eq!(groups, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]);
        assert!(cold.is_empty());
    }

    #[test]
    fn ties_break_by_index_and_remainder_goes_dense() {
        let counts = vec![3; 12];
        let (groups, _) = sparsity_groups(&counts).unwrap();
        assert_eq!(groups[0], vec![0, 1]);
        assert_eq!(groups[4], vec![8, 9, 10, 11]);
        let counts = vec![5, 1, 0, 4, 2, 3, 9];
        let (groups, cold) = sparsity_groups(&counts).unwrap();
        assert_eq!(cold, vec![2]);
        assert_eq!(groups, vec![vec![1], vec![4], vec![5], vec![3], vec![0, 6]]);
    }

    #[test]
    fn too_few_users() {
        assert!(sparsity_groups(&[1, 2, 3, 4, 0, 0]).is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, None));
    }

    #[test]
    fn variant_presets() {
        let base = TrainConfig::default();
        let rg = VariantSpec::new("rg").unwrap().apply(&base).unwrap();
        assert!(!rg.contrastive);
        assert_eq!((rg.alpha, rg.beta), (0.0, 0.0));
        let nd = VariantSpec::new("rg+nd").unwrap().apply(&base).unwrap();
        assert_eq!((nd.alpha, nd.beta), (0.0, base.beta));
        let c = VariantSpec::new("concat=3").unwrap().apply(&base).unwrap();
        assert_eq!((c.layers, c.final_embedding), (3, FinalEmbedding::ConcatLayers));
        assert!(VariantSpec::new("layers=0").is_err());
        assert!(VariantSpec::new("nope").is_err());
        assert_eq!(VariantSpec::default_set().len(), 10);
    }

    #[test]
    fn clamping() {
        let s = Some(RatingScale::default());
        assert_eq!(clamp_to(7.2, s), 5.0);
        assert_eq!(clamp_to(-1.0, s), 1.0);
        assert_eq!(clamp_to(7.2, None), 7.2);
    }
}
