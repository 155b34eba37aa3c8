//! End-to-end comparisons shared by the command line and the acceptance
//! checks: base versus debiased evaluation on the original and debiased
//! test sets, and hyper-parameter sweeps.

use crate::community::CommunityAssignment;
use crate::config::TrainingConfig;
use crate::dataset::InteractionDataset;
use crate::debias::{CdCgcnModel, FusedScorer, Graphs};
use crate::error::Result;
use crate::eval::{build_debiased_test, evaluate, truth_by_user, EmbeddingScorer, MetricsReport, Scorer};
use crate::model::EmbeddingModel;
use crate::scalar::Scalar;
use crate::train::train_cdcgcn;

/// Metrics of one model on the original and the debiased test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub original: MetricsReport,
    pub debiased: MetricsReport,
}

/// Ground truth of both test sets.
#[derive(Debug, Clone)]
pub struct TestSets {
    pub original: Vec<Vec<usize>>,
    pub debiased: Vec<Vec<usize>>,
    pub original_size: usize,
    pub debiased_size: usize,
}

impl TestSets {
    pub fn new(ds: &InteractionDataset, assignment: &CommunityAssignment, seed: u64) -> Self {
        let debiased = build_debiased_test(ds, assignment, seed);
        Self {
            original: truth_by_user(ds.num_users, &ds.test),
            debiased: truth_by_user(ds.num_users, &debiased),
            original_size: ds.test.len(),
            debiased_size: debiased.len(),
        }
    }

    pub fn evaluate<S: Scorer + ?Sized>(
        &self,
        scorer: &S,
        ds: &InteractionDataset,
        assignment: &CommunityAssignment,
        ks: &[usize],
    ) -> Evaluation {
        Evaluation {
            original: evaluate(scorer, ds, &self.original, assignment, ks),
            debiased: evaluate(scorer, ds, &self.debiased, assignment, ks),
        }
    }
}

pub fn base_scorer<T: Scalar>(model: &EmbeddingModel<T>, ds: &InteractionDataset) -> EmbeddingScorer<T> {
    EmbeddingScorer::new(model.base_embeddings(&Graphs::<T>::base_only(ds).base))
}

/// Evaluates a trained debiased model, fused with `pretrained` when given.
pub fn evaluate_cdcgcn<T: Scalar>(
    model: &CdCgcnModel<T>,
    pretrained: Option<&EmbeddingModel<T>>,
    ds: &InteractionDataset,
    assignment: &CommunityAssignment,
    tests: &TestSets,
    ks: &[usize],
) -> Evaluation {
    let bm = pretrained.map(|p| base_scorer(p, ds));
    let scorer = FusedScorer {
        debiased: base_scorer(&model.base, ds),
        pretrained: bm.as_ref(),
        eta: model.eta_f64(),
    };
    tests.evaluate(&scorer, ds, assignment, ks)
}

/// `(new - old) / old`; infinite when `old` is zero and `new` is not.
pub fn relative_change(new: f64, old: f64) -> f64 {
    if old == 0.0 {
        if new == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(new)
        }
    } else {
        (new - old) / old
    }
}

/// One trained configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub beta: f64,
    pub precision20: f64,
    pub ilfbi20: f64,
    pub report: MetricsReport,
}

pub const SWEEP_HEADER: &str = "alpha\tbeta\tprecision20\tilfbi20";

impl SweepPoint {
    pub fn tsv_row(&self) -> String {
        format!("{}\t{}\t{:.6}\t{:.6}", self.alpha, self.beta, self.precision20, self.ilfbi20)
    }
}

/// Trains one debiased model per `(alpha, beta)` pair (alphas outer) and
/// reports test metrics at k = 20 and the other `ks`.
pub fn sweep<T: Scalar>(
    ds: &InteractionDataset,
    assignment: &CommunityAssignment,
    pretrained: Option<&EmbeddingModel<T>>,
    cfg: &TrainingConfig,
    grid: &[(f64, f64)],
    ks: &[usize],
    on_point: &mut dyn FnMut(&SweepPoint),
) -> Result<Vec<SweepPoint>> {
    let tests = TestSets::new(ds, assignment, cfg.seed);
    let mut ks = ks.to_vec();
    if !ks.contains(&20) {
        ks.push(20);
    }
    let mut out = Vec::with_capacity(grid.len());
    for &(alpha, beta) in grid {
        let c = TrainingConfig { alpha, beta, ..cfg.clone() };
        let (model, _) = train_cdcgcn(ds, assignment, pretrained, &c, &mut |_| {})?;
        let report = evaluate_cdcgcn(&model, pretrained, ds, assignment, &tests, &ks).original;
        let at20 = report.at(20).copied().unwrap_or_default();
        let point = SweepPoint {
            alpha,
            beta,
            precision20: at20.precision,
            ilfbi20: at20.ilfbi,
            report,
        };
        on_point(&point);
        out.push(point);
    }
    Ok(out)
}
