//! Epoch loops: plain BPR pretraining, the two reweighted baselines and the
//! adversarial debiasing run, all with validation-driven early stopping.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::community::{ilfbi_init, CommunityAssignment};
use crate::config::TrainingConfig;
use crate::dataset::InteractionDataset;
use crate::debias::{apply_gradients, compute_eta, grl_gradients, AdvSettings, CdCgcnModel, FusedScorer, Graphs, LossParts, RecTerms};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::eval::{ilfbi_at_k, precision_recall_ndcg, rank_topk, truth_by_user, EmbeddingScorer, Scorer};
use crate::loss::{ips_weights, Triplet};
use crate::model::EmbeddingModel;
use crate::optim::Adam;
use crate::rng::{self, stream, Rng};
use crate::sampling::NegativeSampler;
use crate::scalar::Scalar;

/// Cutoff used for validation and early stopping.
pub const VALIDATION_K: usize = 20;

/// One row of the per-epoch training log. Validation columns are NaN on
/// epochs without an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean BPR loss per triplet.
    pub l_rec: f64,
    /// Mean summed cross-entropy per triplet (three nodes).
    pub l_adv: f64,
    pub disc_acc: f64,
    pub val_recall20: f64,
    pub val_ilfbi20: f64,
}

pub const LOG_HEADER: &str = "epoch\tl_rec\tl_adv\tdisc_acc\tval_recall20\tval_ilfbi20";

impl EpochRecord {
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.l_rec, self.l_adv, self.disc_acc, self.val_recall20, self.val_ilfbi20
        )
    }
}

pub fn log_text(records: &[EpochRecord]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.tsv_row());
    }
    s
}

pub fn write_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, log_text(records)).map_err(|e| Error::io(path, e))
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 if no validation ran).
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub stopped_early: bool,
}

/// Positives in shuffled order, each paired with a sampled negative.
pub fn epoch_triplets(ds: &InteractionDataset, sampler: &NegativeSampler, alpha: f64, rng: &mut Rng) -> Result<Vec<Triplet>> {
    let mut pos = ds.train.clone();
    pos.shuffle(rng);
    pos.iter()
        .map(|e| Ok(Triplet::new(e.user, e.item, sampler.sample(e.user, ds, alpha, rng)?)))
        .collect()
}

/// Recommendation objective of a base-model run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseObjective {
    Bpr,
    /// BPR minus the signed item-distance regularizer with strength gamma.
    Fairness { gamma: f64 },
    /// BPR with cross-community positives weighted by 1 / delta.
    Ips { delta: f64 },
}

impl BaseObjective {
    pub fn name(&self) -> &'static str {
        match self {
            BaseObjective::Bpr => "bpr",
            BaseObjective::Fairness { .. } => "fairness",
            BaseObjective::Ips { .. } => "ips",
        }
    }
}

/// What the shared epoch loop needs from a concrete run.
trait Trainable {
    fn step(&mut self, batch: &[Triplet]) -> Result<LossParts<f64>>;
    /// Validation (Recall@20, ILFBI@20).
    fn validate(&self) -> (f64, f64);
    fn snapshot(&mut self);
    fn restore_best(&mut self);
}

fn parts_f64<T: Scalar>(p: LossParts<T>) -> LossParts<f64> {
    LossParts {
        rec: p.rec.to_f64_lossy(),
        fairness: p.fairness.to_f64_lossy(),
        adv: p.adv.to_f64_lossy(),
        l2_base: p.l2_base.to_f64_lossy(),
        l2_disc: p.l2_disc.to_f64_lossy(),
        correct: p.correct,
        rows: p.rows,
    }
}

fn check_step<T: Scalar>(parts: &LossParts<f64>, model: &EmbeddingModel<T>, disc: Option<&Discriminator<T>>) -> Result<()> {
    let total = parts.rec + parts.fairness + parts.adv + parts.l2_base + parts.l2_disc;
    let disc_ok = disc.is_none_or(|d| d.all_finite());
    if !total.is_finite() || !model.tables.all_finite() || !disc_ok {
        return Err(Error::NonFinite(format!(
            "loss {total} (rec {}, adv {}); |theta_b|^2 = {}, |theta_d|^2 = {}",
            parts.rec,
            parts.adv,
            model.tables.sq_norm(),
            disc.map_or(0.0, |d| d.sq_norm().to_f64_lossy())
        )));
    }
    Ok(())
}

fn validate_scorer<S: Scorer>(
    scorer: &S,
    ds: &InteractionDataset,
    truth: &[Vec<usize>],
    assignment: Option<&CommunityAssignment>,
) -> (f64, f64) {
    let lists = rank_topk(scorer, ds, VALIDATION_K);
    let recall = precision_recall_ndcg(&lists, truth, VALIDATION_K).recall;
    let ilfbi = assignment.map_or(f64::NAN, |a| ilfbi_at_k(&lists, a, VALIDATION_K));
    (recall, ilfbi)
}

fn run_epochs(
    ds: &InteractionDataset,
    cfg: &TrainingConfig,
    sampler: &NegativeSampler,
    alpha: f64,
    job: &mut dyn Trainable,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    let mut rng = rng::rng_for(cfg.seed, stream::SAMPLING);
    let has_val = !ds.val.is_empty();
    let mut report = TrainReport {
        log: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_recall: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut bad_evals = 0;
    for epoch in 1..=cfg.epochs {
        let triplets = epoch_triplets(ds, sampler, alpha, &mut rng)?;
        let mut sum = LossParts::<f64>::default();
        for batch in triplets.chunks(cfg.batch_size.max(1)) {
            let p = job.step(batch)?;
            sum.rec += p.rec;
            sum.adv += p.adv;
            sum.correct += p.correct;
            sum.rows += p.rows;
        }
        let n = triplets.len().max(1) as f64;
        let mut record = EpochRecord {
            epoch,
            l_rec: sum.rec / n,
            l_adv: sum.adv / n,
            disc_acc: if sum.rows > 0 { sum.correct as f64 / sum.rows as f64 } else { f64::NAN },
            val_recall20: f64::NAN,
            val_ilfbi20: f64::NAN,
        };
        let evaluate = has_val && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let mut stop = false;
        if evaluate {
            let (recall, ilfbi) = job.validate();
            record.val_recall20 = recall;
            record.val_ilfbi20 = ilfbi;
            if recall > report.best_val_recall {
                report.best_val_recall = recall;
                report.best_epoch = epoch;
                bad_evals = 0;
                job.snapshot();
            } else {
                bad_evals += 1;
                stop = bad_evals >= cfg.patience;
            }
        }
        on_epoch(&record);
        report.log.push(record);
        if stop {
            report.stopped_early = true;
            break;
        }
    }
    if report.best_epoch > 0 {
        job.restore_best();
    } else {
        report.best_val_recall = f64::NAN;
    }
    Ok(report)
}

struct BaseJob<'a, T: Scalar> {
    ds: &'a InteractionDataset,
    graphs: Graphs<T>,
    model: EmbeddingModel<T>,
    best: Option<EmbeddingModel<T>>,
    adam: Adam<T>,
    settings: AdvSettings<T>,
    objective: BaseObjective,
    assignment: Option<&'a CommunityAssignment>,
    truth: Vec<Vec<usize>>,
}

impl<T: Scalar> Trainable for BaseJob<'_, T> {
    fn step(&mut self, batch: &[Triplet]) -> Result<LossParts<f64>> {
        let terms = match self.objective {
            BaseObjective::Bpr => RecTerms::default(),
            BaseObjective::Fairness { gamma } => RecTerms {
                weights: None,
                fairness: Some((T::of(gamma), self.assignment.expect("checked at setup"))),
            },
            BaseObjective::Ips { delta } => RecTerms {
                weights: Some(ips_weights(batch, self.assignment.expect("checked at setup"), delta)),
                fairness: None,
            },
        };
        let (parts, grads) = grl_gradients(&self.graphs, &self.model, None, batch, None, &self.settings, &terms);
        apply_gradients(&mut self.adam, &mut self.model, None, &grads);
        let parts = parts_f64(parts);
        check_step(&parts, &self.model, None)?;
        Ok(parts)
    }

    fn validate(&self) -> (f64, f64) {
        let scorer = EmbeddingScorer::new(self.model.base_embeddings(&self.graphs.base));
        validate_scorer(&scorer, self.ds, &self.truth, self.assignment)
    }

    fn snapshot(&mut self) {
        self.best = Some(self.model.clone());
    }

    fn restore_best(&mut self) {
        if let Some(b) = self.best.take() {
            self.model = b;
        }
    }
}

fn settings<T: Scalar>(cfg: &TrainingConfig) -> AdvSettings<T> {
    AdvSettings {
        beta: T::of(cfg.beta),
        l2_base: T::of(cfg.l2_base),
        l2_disc: T::of(cfg.l2_disc),
        cgcn_layers: cfg.cgcn_layers,
        combine: cfg.cgcn_combine,
        ablation: cfg.ablation,
    }
}

/// Trains a base model (or a reweighted baseline) with uniform negatives.
/// `assignment` is required by the baselines and, when given, adds
/// validation ILFBI@20 to the log.
pub fn train_base<T: Scalar>(
    ds: &InteractionDataset,
    cfg: &TrainingConfig,
    objective: BaseObjective,
    assignment: Option<&CommunityAssignment>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(EmbeddingModel<T>, TrainReport)> {
    use crate::config::KeyValues;
    cfg.validate()?;
    if objective != BaseObjective::Bpr && assignment.is_none() {
        return Err(Error::Config(format!("{} training needs community labels", objective.name())));
    }
    let mut job = BaseJob {
        ds,
        graphs: Graphs::base_only(ds),
        model: EmbeddingModel::init(ds.num_users, ds.num_items, cfg.dim, cfg.base, cfg.layers, cfg.seed),
        best: None,
        adam: Adam::new(T::of(cfg.learning_rate)),
        settings: settings(cfg),
        objective,
        assignment,
        truth: truth_by_user(ds.num_users, &ds.val),
    };
    let sampler = NegativeSampler::uniform(ds);
    let report = run_epochs(ds, cfg, &sampler, 0.0, &mut job, on_epoch)?;
    Ok((job.model, report))
}

/// Plain BPR pretraining of the base model.
pub fn pretrain<T: Scalar>(
    ds: &InteractionDataset,
    cfg: &TrainingConfig,
    assignment: Option<&CommunityAssignment>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(EmbeddingModel<T>, TrainReport)> {
    train_base(ds, cfg, BaseObjective::Bpr, assignment, on_epoch)
}

struct DebiasJob<'a, T: Scalar> {
    ds: &'a InteractionDataset,
    assignment: &'a CommunityAssignment,
    graphs: Graphs<T>,
    model: CdCgcnModel<T>,
    best: Option<CdCgcnModel<T>>,
    adam: Adam<T>,
    settings: AdvSettings<T>,
    pretrained: Option<EmbeddingScorer<T>>,
    truth: Vec<Vec<usize>>,
}

impl<T: Scalar> DebiasJob<'_, T> {
    fn scorer(&self) -> FusedScorer<'_, T> {
        FusedScorer {
            debiased: EmbeddingScorer::new(self.model.base.base_embeddings(&self.graphs.base)),
            pretrained: self.pretrained.as_ref(),
            eta: self.model.eta_f64(),
        }
    }
}

impl<T: Scalar> Trainable for DebiasJob<'_, T> {
    fn step(&mut self, batch: &[Triplet]) -> Result<LossParts<f64>> {
        let m = &mut self.model;
        let (parts, grads) = grl_gradients(
            &self.graphs,
            &m.base,
            m.disc.as_ref(),
            batch,
            Some(self.assignment),
            &self.settings,
            &RecTerms::default(),
        );
        apply_gradients(&mut self.adam, &mut m.base, m.disc.as_mut(), &grads);
        let parts = parts_f64(parts);
        check_step(&parts, &m.base, m.disc.as_ref())?;
        Ok(parts)
    }

    fn validate(&self) -> (f64, f64) {
        validate_scorer(&self.scorer(), self.ds, &self.truth, Some(self.assignment))
    }

    fn snapshot(&mut self) {
        self.best = Some(self.model.clone());
    }

    fn restore_best(&mut self) {
        if let Some(b) = self.best.take() {
            self.model = b;
        }
    }
}

/// Fusion weights for a run: all ones without a pretrained model or with
/// the user-adaptive step ablated.
pub fn fusion_weights(
    ds: &InteractionDataset,
    assignment: &CommunityAssignment,
    cfg: &TrainingConfig,
    has_pretrained: bool,
) -> Vec<f64> {
    if cfg.ablation.no_uis || !has_pretrained {
        vec![1.0; ds.num_users]
    } else {
        compute_eta(&ilfbi_init(ds, assignment))
    }
}

/// Adversarial debiasing from freshly initialized base parameters. The
/// pretrained model only enters through the fused validation scorer and the
/// stored fusion weights.
pub fn train_cdcgcn<T: Scalar>(
    ds: &InteractionDataset,
    assignment: &CommunityAssignment,
    pretrained: Option<&EmbeddingModel<T>>,
    cfg: &TrainingConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(CdCgcnModel<T>, TrainReport)> {
    use crate::config::KeyValues;
    cfg.validate()?;
    let graphs = Graphs::new(ds, assignment)?;
    if let Some(p) = pretrained {
        if (p.num_users(), p.num_items()) != (ds.num_users, ds.num_items) {
            return Err(Error::Contract("pretrained model does not match the dataset".into()));
        }
    }
    let base = EmbeddingModel::init(ds.num_users, ds.num_items, cfg.dim, cfg.base, cfg.layers, cfg.seed);
    let disc = (!cfg.ablation.no_cd).then(|| {
        Discriminator::init(cfg.dim, cfg.global_dim, cfg.hidden, assignment.num_communities.max(1), cfg.seed)
    });
    let eta = fusion_weights(ds, assignment, cfg, pretrained.is_some());
    let mut job = DebiasJob {
        ds,
        assignment,
        pretrained: pretrained.map(|p| EmbeddingScorer::new(p.base_embeddings(&graphs.base))),
        graphs,
        model: CdCgcnModel {
            base,
            disc,
            eta: eta.iter().map(|&e| T::of(e)).collect(),
        },
        best: None,
        adam: Adam::new(T::of(cfg.learning_rate)),
        settings: settings(cfg),
        truth: truth_by_user(ds.num_users, &ds.val),
    };
    let sampler = NegativeSampler::new(ds, assignment);
    let report = run_epochs(ds, cfg, &sampler, cfg.effective_alpha(), &mut job, on_epoch)?;
    Ok((job.model, report))
}
