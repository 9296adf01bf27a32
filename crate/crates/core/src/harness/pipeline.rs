//! The staged experiment: train victim → fit robust value → select → attack
//! → evaluate, plus the correlation study. Every stage persists its
//! artifacts under the output directory and appends its ledger rows in one
//! write; a stage whose rows and artifacts already exist is skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::analysis::{correlate_prediction_vs_attack, export_heatmap, write_scatter, HeatmapMode};
use super::config::{fnv1a, ExperimentConfig};
use super::ledger::{Ledger, LedgerRow};
use crate::adversary::{evaluate_attack, train_adversary_best_of, AdversaryConfig};
use crate::envs::{build_env, Env, EnvSnapshot, TaxiConfig, VicsekConfig, VicsekEnv, VicsekRulePolicy};
use crate::error::{Result, VaiError};
use crate::learn::checkpoint::{q_checkpoint, q_from_checkpoint, Checkpoint};
use crate::learn::rollout::{collect_cooperative, read_trajectories, write_trajectories};
use crate::learn::victim::mean_return;
use crate::learn::{derive_seed, train_victim_best_of, Backend, BoltzmannPolicy, Corpus, MeanFieldCoder, UniformPolicy, VictimPolicy, VictimTrainingConfig};
use crate::mf::NormOrder;
use crate::robust::{fit_cooperative_q, fit_robust_value, BudgetSampling, QFitConfig, RegularizerSpec, RobustFitConfig, RobustValueModel};
use crate::select::{select_degree_centrality, select_greedy, select_random, select_rl, step_rewards, predicted_drop, AttackSet, RlSelectConfig};

const TAG_VICTIM: u64 = 1;
const TAG_CORPUS: u64 = 2;
const TAG_VALUE: u64 = 3;
const TAG_SCENARIO: u64 = 10;
const TAG_SELECT: u64 = 11;
const TAG_ADVERSARY: u64 = 12;
const TAG_EVAL: u64 = 13;
const TAG_CORRELATE: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TrainVictim,
    FitValue,
    Select,
    Attack,
    Evaluate,
    Correlate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::TrainVictim,
        Stage::FitValue,
        Stage::Select,
        Stage::Attack,
        Stage::Evaluate,
        Stage::Correlate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainVictim => "train-victim",
            Stage::FitValue => "fit-value",
            Stage::Select => "select",
            Stage::Attack => "attack",
            Stage::Evaluate => "evaluate",
            Stage::Correlate => "correlate",
        }
    }
}

/// One saved selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEntry {
    pub seed: u64,
    pub k: usize,
    /// Method tag, with `.d` appended for the d-th random draw.
    pub label: String,
    pub file: String,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    id: String,
    env: Box<dyn Env>,
}

/// Order-free key of an attack set.
fn set_key(ids: &[usize]) -> u64 {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    let bytes: Vec<u8> = sorted.iter().flat_map(|i| (*i as u64).to_le_bytes()).collect();
    fnv1a(&bytes)
}

fn metric(name: &str, k: usize) -> String {
    format!("{name}@k{k}")
}

impl Pipeline {
    /// Validates the config and prepares the output directory. `out`
    /// overrides `experiment.out_dir`, which defaults to `results/<name>`.
    pub fn new(cfg: ExperimentConfig, out: Option<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let out = out
            .or_else(|| cfg.experiment.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("results").join(&cfg.experiment.name));
        std::fs::create_dir_all(out.join("selections"))?;
        let env = build_env(&cfg.env)?;
        let id = cfg.experiment_id();
        Ok(Self { cfg, out, id, env })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn experiment_id(&self) -> &str {
        &self.id
    }

    pub fn env(&self) -> &dyn Env {
        self.env.as_ref()
    }

    pub fn ledger(&self) -> Ledger {
        Ledger::new(self.out.join("ledger.csv"))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, stage: Stage, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(VaiError::StageDependency {
                stage: stage.name().into(),
                path: p,
            })
        }
    }

    fn artifacts(stage: Stage) -> &'static [&'static str] {
        match stage {
            Stage::TrainVictim => &["victim.ckpt"],
            Stage::FitValue => &["trajectories.csv", "q.ckpt", "value.ckpt"],
            Stage::Select => &["selections/index.csv"],
            Stage::Attack | Stage::Evaluate => &[],
            Stage::Correlate => &["correlation.csv"],
        }
    }

    pub fn is_done(&self, stage: Stage) -> Result<bool> {
        Ok(self.ledger().has_stage(&self.id, stage.name())? && Self::artifacts(stage).iter().all(|a| self.path(a).exists()))
    }

    /// Runs `stage` unless it is already complete. Returns whether it ran.
    pub fn run_stage(&self, stage: Stage) -> Result<bool> {
        if self.is_done(stage)? {
            log::info!("stage {} already complete, skipping", stage.name());
            return Ok(false);
        }
        let rows = match stage {
            Stage::TrainVictim => self.train_victim_stage()?,
            Stage::FitValue => self.fit_value_stage()?,
            Stage::Select => self.select_stage()?,
            Stage::Attack => self.attack_stage()?,
            Stage::Evaluate => self.evaluate_stage()?,
            Stage::Correlate => self.correlate_stage()?,
        };
        self.ledger().append(&rows)?;
        Ok(true)
    }

    /// Every stage in order; correlation only when subsets are configured.
    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            if stage == Stage::Correlate && self.cfg.correlation.subsets == 0 {
                continue;
            }
            self.run_stage(stage)?;
        }
        Ok(())
    }

    fn row(&self, stage: Stage, method: &str, seed: Option<u64>, metric: &str, value: f64) -> LedgerRow {
        LedgerRow::new(&self.id, stage.name(), method, seed, metric, value)
    }

    /// The fixed start state evaluated under `seed`.
    pub fn scenario(&self, seed: u64) -> Result<EnvSnapshot> {
        self.env.reset(derive_seed(seed, TAG_SCENARIO))
    }

    // ---- victim

    fn victim_config(&self) -> Result<VictimTrainingConfig> {
        let v = &self.cfg.victim;
        Ok(VictimTrainingConfig {
            backend: Backend::parse(&v.backend)?,
            episodes: v.episodes,
            gamma: v.gamma,
            lr: v.lr,
            temperature: v.temperature,
            replay_capacity: v.replay_capacity,
            batch_size: v.batch_size,
            eps_start: v.eps_start,
            eps_end: v.eps_end,
            margin: v.margin,
            eval_episodes: v.eval_episodes,
            eval_gamma: self.cfg.evaluation.gamma,
            mu_coder: MeanFieldCoder::new(v.mf_levels, v.mu_buckets)?,
            nu_coder: MeanFieldCoder::new(v.mf_levels, v.nu_buckets)?,
        })
    }

    fn rule_victim(&self) -> Result<VicsekRulePolicy> {
        Ok(VicsekRulePolicy::new(&VicsekEnv::new(VicsekConfig::from_section(&self.cfg.env)?)?))
    }

    fn train_victim_stage(&self) -> Result<Vec<LedgerRow>> {
        let seed = self.cfg.experiment.seed;
        let kind = self.cfg.victim.kind.as_str();
        let (ckpt, trained, random) = if kind == "rule" {
            let policy = self.rule_victim()?;
            let eval_seed = derive_seed(derive_seed(seed, TAG_VICTIM), 7);
            let n = self.cfg.victim.eval_episodes;
            let g = self.cfg.evaluation.gamma;
            let trained = mean_return(self.env(), &policy, n, g, eval_seed)?;
            let random = mean_return(self.env(), &UniformPolicy { n_actions: self.env.n_actions() }, n, g, eval_seed)?;
            (Checkpoint::new("rule-victim"), trained, random)
        } else {
            let (policy, report) = train_victim_best_of(self.env(), &self.victim_config()?, derive_seed(seed, TAG_VICTIM), self.cfg.victim.restarts)?;
            let ckpt = q_checkpoint(&policy.q).with("temperature", policy.temperature);
            (ckpt, report.trained_return, report.random_return)
        };
        ckpt.save(&self.path("victim.ckpt"))?;
        Ok(vec![
            self.row(Stage::TrainVictim, kind, Some(seed), "trained_return", trained),
            self.row(Stage::TrainVictim, "uniform", Some(seed), "random_return", random),
        ])
    }

    pub fn load_victim(&self, stage: Stage) -> Result<VictimPolicy> {
        let c = Checkpoint::load(&self.require(stage, "victim.ckpt")?)?;
        if c.kind == "rule-victim" {
            return Ok(VictimPolicy::Rule(self.rule_victim()?));
        }
        let q = q_from_checkpoint(&c)?;
        Ok(VictimPolicy::Boltzmann(BoltzmannPolicy::new(q, c.parse("temperature")?)?))
    }

    // ---- robust value

    fn regularizer_spec(&self) -> Result<RegularizerSpec> {
        let v = &self.cfg.value;
        Ok(RegularizerSpec {
            order: NormOrder::new(v.p)?,
            joint_action: v.joint_action,
            centered: v.centered_norm,
        })
    }

    fn fit_value_stage(&self) -> Result<Vec<LedgerRow>> {
        let victim = self.load_victim(Stage::FitValue)?;
        let v = &self.cfg.value;
        let seed = self.cfg.experiment.seed;
        let (ns, na) = (self.env.n_states(), self.env.n_actions());
        let trajs = collect_cooperative(self.env(), &victim, v.corpus_episodes, derive_seed(seed, TAG_CORPUS))?;
        let traj_path = self.path("trajectories.csv");
        write_trajectories(&traj_path, &trajs, ns, na)?;
        // fit from what was persisted so a resumed run sees the same data
        let trajs = read_trajectories(&traj_path, ns, na)?;
        let corpus = Corpus::from_trajectories(&trajs, ns, na)?;
        let backend = Backend::parse(&v.backend)?;
        let mu_coder = MeanFieldCoder::new(v.mf_levels, v.mu_buckets)?;
        let q = fit_cooperative_q(
            &corpus,
            &QFitConfig {
                backend,
                gamma: v.gamma,
                mu_coder,
                nu_coder: MeanFieldCoder::ignore(),
                max_sweeps: v.max_sweeps,
                tol: v.tol,
                ridge: v.ridge,
            },
        )?;
        q_checkpoint(&q).save(&self.path("q.ckpt"))?;
        let model = fit_robust_value(
            &corpus,
            &q,
            &self.regularizer_spec()?,
            &RobustFitConfig {
                backend,
                gamma: v.gamma,
                mu_coder,
                sampling: BudgetSampling::parse(&v.sampling)?,
                draws_per_sample: v.draws_per_sample,
                shared_draws: v.shared_draws,
                max_sweeps: v.max_sweeps,
                tol: v.tol,
                ridge: v.ridge,
                seed: derive_seed(seed, TAG_VALUE),
            },
        )?;
        model.to_checkpoint().save(&self.path("value.ckpt"))?;
        let g = self.cfg.evaluation.gamma;
        let coop = trajs.iter().map(|t| t.discounted_return(g)).sum::<f64>() / trajs.len() as f64;
        Ok(vec![
            self.row(Stage::FitValue, "corpus", Some(seed), "transitions", corpus.transitions.len() as f64),
            self.row(Stage::FitValue, "corpus", Some(seed), "cooperative_return", coop),
        ])
    }

    pub fn load_value(&self, stage: Stage) -> Result<RobustValueModel> {
        RobustValueModel::from_checkpoint(&Checkpoint::load(&self.require(stage, "value.ckpt")?)?)
    }

    // ---- selection

    fn dc_radius(&self) -> Result<f64> {
        if let Some(r) = self.cfg.selection.dc_radius {
            return Ok(r);
        }
        Ok(match self.cfg.env.name.as_str() {
            "vicsek" => VicsekConfig::from_section(&self.cfg.env)?.comm_radius,
            _ => TaxiConfig::from_section(&self.cfg.env)?.zone_size as f64,
        })
    }

    fn rl_config(&self) -> RlSelectConfig {
        let s = &self.cfg.selection;
        RlSelectConfig {
            episodes: s.rl_episodes,
            lr: s.rl_lr,
            gamma: s.rl_gamma,
            batch_size: s.rl_batch,
            ..Default::default()
        }
    }

    /// Runs every configured method on the scenario of `seed`.
    pub fn select_for(&self, v: &RobustValueModel, seed: u64, k: usize) -> Result<Vec<(String, AttackSet, bool)>> {
        let sel = &self.cfg.selection;
        let snap = self.scenario(seed)?;
        let n = self.env.n_agents();
        let base = derive_seed(derive_seed(seed, TAG_SELECT), k as u64);
        let mut out = Vec::new();
        for m in &sel.methods {
            match m.as_str() {
                "greedy" => out.push(("greedy".to_string(), select_greedy(v, &snap, k, sel.eps)?, true)),
                "rl" => {
                    let r = select_rl(v, &snap, k, sel.eps, &self.rl_config(), derive_seed(base, 1))?;
                    out.push(("rl".to_string(), r.set, r.converged));
                }
                "random" => {
                    for d in 0..sel.random_draws {
                        out.push((format!("random.{d}"), select_random(n, k, derive_seed(base, 100 + d as u64))?, true));
                    }
                }
                "dc" => {
                    let graph = self.env.observation_graph(&snap, self.dc_radius()?)?;
                    out.push(("dc".to_string(), select_degree_centrality(&graph, k)?, true));
                }
                other => return Err(VaiError::InvalidConfig(format!("selection.methods: unknown method `{other}`"))),
            }
        }
        Ok(out)
    }

    fn select_stage(&self) -> Result<Vec<LedgerRow>> {
        let v = self.load_value(Stage::Select)?;
        let eps = self.cfg.selection.eps;
        let mut rows = Vec::new();
        let mut index = csv::Writer::from_path(self.path("selections/index.csv"))?;
        index.write_record(["seed", "k", "method", "file"])?;
        for &seed in &self.cfg.experiment.seeds {
            let snap = self.scenario(seed)?;
            for &k in &self.cfg.selection.k {
                for (label, set, converged) in self.select_for(&v, seed, k)? {
                    let file = format!("seed{seed}_k{k}_{label}.txt");
                    set.save(&self.path("selections").join(&file))?;
                    index.write_record([seed.to_string(), k.to_string(), label.clone(), file])?;
                    let drop = predicted_drop(&v, &snap, &set.ids, eps)?;
                    let rewards = if set.rewards.len() == set.len() {
                        set.rewards.clone()
                    } else {
                        step_rewards(&v, &snap, &set.ids, eps)?
                    };
                    let telescoping = (rewards.iter().sum::<f64>() - drop).abs();
                    rows.push(self.row(Stage::Select, &label, Some(seed), &metric("predicted_drop", k), drop));
                    rows.push(self.row(Stage::Select, &label, Some(seed), &metric("telescoping_error", k), telescoping));
                    if label == "rl" {
                        rows.push(self.row(Stage::Select, &label, Some(seed), &metric("converged", k), converged as u8 as f64));
                    }
                }
            }
        }
        index.flush()?;
        Ok(rows)
    }

    pub fn selections(&self, stage: Stage) -> Result<Vec<SelectionEntry>> {
        let path = self.require(stage, "selections/index.csv")?;
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<u64> {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| VaiError::InvalidInput(format!("selections/index.csv: bad field {i}")))
            };
            out.push(SelectionEntry {
                seed: parse(0)?,
                k: parse(1)? as usize,
                label: rec.get(2).unwrap_or_default().to_string(),
                file: rec.get(3).unwrap_or_default().to_string(),
            });
        }
        Ok(out)
    }

    // ---- attack

    fn adversary_config(&self) -> Result<AdversaryConfig> {
        let a = &self.cfg.adversary;
        Ok(AdversaryConfig {
            episodes: a.episodes,
            lr: a.lr,
            gamma: a.gamma,
            eps_start: a.eps_start,
            eps_end: a.eps_end,
            temperature: a.temperature,
            mu_coder: MeanFieldCoder::new(a.mf_levels, a.mu_buckets)?,
            nu_coder: MeanFieldCoder::ignore(),
        })
    }

    /// Trains an adversary for `ids` from `snap` and evaluates it there.
    /// Returns (attacked mean, attacked std, baseline mean, baseline std).
    /// The adversary seed depends on the set, not on which method chose it,
    /// so equal sets get equal adversaries.
    fn realize(&self, victim: &VictimPolicy, snap: &EnvSnapshot, ids: &[usize], base_seed: u64, eval_seed: u64) -> Result<[f64; 4]> {
        let eps = self.cfg.selection.eps;
        let a = &self.cfg.adversary;
        let adv_seed = derive_seed(base_seed, set_key(ids));
        let adv = train_adversary_best_of(self.env(), victim, ids, eps, Some(snap), &self.adversary_config()?, adv_seed, a.restarts, a.validation_episodes)?;
        let ev = &self.cfg.evaluation;
        let rep = evaluate_attack(self.env(), victim, Some(&adv), ids, eps, ev.episodes, Some(snap), &[eval_seed], ev.gamma)?;
        Ok([rep.mean, rep.std, rep.baseline_mean, rep.baseline_std])
    }

    fn attack_stage(&self) -> Result<Vec<LedgerRow>> {
        let victim = self.load_victim(Stage::Attack)?;
        if !self.ledger().has_stage(&self.id, Stage::Select.name())? {
            return Err(VaiError::StageDependency {
                stage: Stage::Attack.name().into(),
                path: self.path("selections/index.csv"),
            });
        }
        let entries = self.selections(Stage::Attack)?;
        let results: Vec<[f64; 4]> = entries
            .par_iter()
            .map(|e| {
                let set = AttackSet::load(&self.require(Stage::Attack, &format!("selections/{}", e.file))?)?;
                let snap = self.scenario(e.seed)?;
                self.realize(&victim, &snap, &set.ids, derive_seed(e.seed, TAG_ADVERSARY), derive_seed(e.seed, TAG_EVAL))
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for (e, r) in entries.iter().zip(results) {
            for (name, value) in ["attacked_return", "attacked_std", "baseline_return", "baseline_std"].iter().zip(r) {
                rows.push(self.row(Stage::Attack, &e.label, Some(e.seed), &metric(name, e.k), value));
            }
        }
        Ok(rows)
    }

    // ---- evaluate

    fn evaluate_stage(&self) -> Result<Vec<LedgerRow>> {
        let all = self.ledger().rows()?;
        let attack: Vec<&LedgerRow> = all.iter().filter(|r| r.experiment_id == self.id && r.stage == Stage::Attack.name()).collect();
        if attack.is_empty() {
            return Err(VaiError::StageDependency {
                stage: Stage::Evaluate.name().into(),
                path: self.ledger().path().to_path_buf(),
            });
        }
        // (k, method family, seed) -> [attacked, attacked std, baseline, baseline std] per draw
        let mut table: BTreeMap<(usize, String, u64), Vec<[f64; 4]>> = BTreeMap::new();
        let mut draws: BTreeMap<(usize, String, u64), [f64; 4]> = BTreeMap::new();
        for r in &attack {
            let (name, k) = r.metric.split_once("@k").ok_or_else(|| VaiError::InvalidInput(format!("ledger metric `{}`", r.metric)))?;
            let k: usize = k.parse().map_err(|_| VaiError::InvalidInput(format!("ledger metric `{}`", r.metric)))?;
            let seed: u64 = r.seed.parse().map_err(|_| VaiError::InvalidInput(format!("ledger seed `{}`", r.seed)))?;
            let slot = match name {
                "attacked_return" => 0,
                "attacked_std" => 1,
                "baseline_return" => 2,
                "baseline_std" => 3,
                _ => continue,
            };
            draws.entry((k, r.method.clone(), seed)).or_insert([f64::NAN; 4])[slot] = r.value_f64();
        }
        for ((k, label, seed), v) in draws {
            let family = label.split('.').next().unwrap_or(&label).to_string();
            table.entry((k, family, seed)).or_default().push(v);
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let mut rows = Vec::new();
        let ks: Vec<usize> = table.keys().map(|(k, _, _)| *k).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        for k in ks {
            let families: Vec<String> = table
                .keys()
                .filter(|(kk, _, _)| *kk == k)
                .map(|(_, f, _)| f.clone())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let per_seed = |family: &str| -> BTreeMap<u64, (f64, f64)> {
                table
                    .iter()
                    .filter(|((kk, f, _), _)| *kk == k && f == family)
                    .map(|((_, _, s), v)| {
                        let att = mean(&v.iter().map(|x| x[0]).collect::<Vec<_>>());
                        // worst draw in pooled-std units above the baseline
                        let excess = v
                            .iter()
                            .map(|x| (x[0] - x[2]) / ((x[1] * x[1] + x[3] * x[3]) / 2.0).sqrt().max(1e-12))
                            .fold(f64::NEG_INFINITY, f64::max);
                        (*s, (att, excess))
                    })
                    .collect()
            };
            let random = per_seed("random");
            let baseline: Vec<f64> = table.iter().filter(|((kk, _, _), _)| *kk == k).map(|(_, v)| v[0][2]).collect();
            rows.push(self.row(Stage::Evaluate, "cooperative", None, &metric("mean_return", k), mean(&baseline)));
            for fam in families {
                let ps = per_seed(&fam);
                let atts: Vec<f64> = ps.values().map(|p| p.0).collect();
                rows.push(self.row(Stage::Evaluate, &fam, None, &metric("mean_return", k), mean(&atts)));
                let excess = ps.values().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                rows.push(self.row(Stage::Evaluate, &fam, None, &metric("max_excess_pooled_std", k), excess));
                if fam != "random" && !random.is_empty() {
                    let wins = ps.iter().filter(|(s, p)| random.get(s).is_some_and(|r| p.0 < r.0)).count();
                    rows.push(self.row(Stage::Evaluate, &fam, None, &metric("seeds_below_random", k), wins as f64));
                }
            }
        }
        Ok(rows)
    }

    // ---- correlation

    /// The random subsets of the correlation study; K cycles through
    /// min_k..=max_k so the predicted drops spread out.
    pub fn correlation_subsets(&self) -> Result<Vec<AttackSet>> {
        let c = &self.cfg.correlation;
        let span = c.max_k - c.min_k + 1;
        (0..c.subsets)
            .map(|i| select_random(self.env.n_agents(), c.min_k + i % span, derive_seed(derive_seed(c.seed, TAG_CORRELATE), i as u64)))
            .collect()
    }

    fn correlate_stage(&self) -> Result<Vec<LedgerRow>> {
        let victim = self.load_victim(Stage::Correlate)?;
        let v = self.load_value(Stage::Correlate)?;
        let c = &self.cfg.correlation;
        let snap = self.scenario(c.seed)?;
        let subsets = self.correlation_subsets()?;
        let realized: Vec<f64> = subsets
            .par_iter()
            .map(|set| {
                Ok(self.realize(&victim, &snap, &set.ids, derive_seed(c.seed, TAG_ADVERSARY), derive_seed(c.seed, TAG_EVAL))?[0])
            })
            .collect::<Result<_>>()?;
        let (r, samples) = correlate_prediction_vs_attack(&v, &snap, &subsets, self.cfg.selection.eps, |i, _| Ok(realized[i]))?;
        write_scatter(&self.path("correlation.csv"), &samples)?;
        Ok(vec![
            self.row(Stage::Correlate, "random", Some(c.seed), "pearson_r", r),
            self.row(Stage::Correlate, "random", Some(c.seed), "subsets", samples.len() as f64),
        ])
    }

    // ---- heatmap

    /// Writes `heatmap_<mode>_seed<seed>.csv` for the scenario of `seed`.
    pub fn heatmap(&self, mode: HeatmapMode, seed: u64) -> Result<(PathBuf, Vec<Vec<f64>>)> {
        let v = self.load_value(Stage::FitValue)?;
        let snap = self.scenario(seed)?;
        let path = self.path(&format!("heatmap_{}_seed{seed}.csv", mode.tag()));
        let grid = export_heatmap(&v, self.env(), &snap, mode, &path)?;
        Ok((path, grid))
    }
}

/// Loads the config at `path` and runs every stage. Returns the output
/// directory.
pub fn run_pipeline(path: &Path, out: Option<PathBuf>) -> Result<PathBuf> {
    let p = Pipeline::new(ExperimentConfig::load(path)?, out)?;
    p.run_all()?;
    Ok(p.out_dir().to_path_buf())
}
