//! Property checks shared by the focused test files and the acceptance
//! runner. Each returns measurements; callers decide on thresholds.

use cdcgcn::community::{louvain_graph, CommunityAssignment, WeightedGraph};
use cdcgcn::config::{Ablation, TrainingConfig};
use cdcgcn::conv::LayerCombine;
use cdcgcn::dataset::InteractionDataset;
use cdcgcn::debias::{
    adv_loss, adv_loss_grad, alternating_gradients, grl_gradients, update_base, update_disc, AdvSettings, Graphs,
    RecTerms,
};
use cdcgcn::discriminator::Discriminator;
use cdcgcn::loss::{bpr_loss, fairness_loss_grad, l2_rows_loss, Triplet};
use cdcgcn::model::{EmbeddingModel, ModelKind};
use cdcgcn::optim::{Optimizer, Sgd};
use cdcgcn::train::{pretrain, train_base, train_cdcgcn, BaseObjective};

use super::*;

pub struct Toy {
    pub labels: CommunityAssignment,
    pub graphs: Graphs<f64>,
    pub model: EmbeddingModel<f64>,
    pub disc: Discriminator<f64>,
    pub triplets: Vec<Triplet>,
}

/// At most 6 users and 6 items, d = 8.
pub fn toy(seed: u64, kind: ModelKind) -> Toy {
    let users = 3 + (seed % 4) as usize;
    let items = 3 + ((seed / 4) % 4) as usize;
    let ds = random_toy(seed, users, items, 0.5);
    let labels = random_labels(&ds, 3, seed);
    Toy {
        graphs: Graphs::new(&ds, &labels).unwrap(),
        model: EmbeddingModel::init(users, items, 8, kind, 2, seed),
        disc: Discriminator::init(8, 4, 6, labels.num_communities, seed),
        triplets: random_triplets(&ds, 7, seed),
        labels,
    }
}

pub fn settings(beta: f64, ablation: Ablation) -> AdvSettings<f64> {
    AdvSettings {
        beta,
        l2_base: 1e-3,
        l2_disc: 1e-2,
        cgcn_layers: 2,
        combine: LayerCombine::Sum,
        ablation,
    }
}

fn rec_objective(t: &Toy, m: &EmbeddingModel<f64>, s: &AdvSettings<f64>) -> f64 {
    let base = m.base_embeddings(&t.graphs.base);
    bpr_loss(&base, &t.triplets, None) + l2_rows_loss(&m.tables, &t.triplets, s.l2_base)
}

pub fn adv_objective(t: &Toy, m: &EmbeddingModel<f64>, d: &Discriminator<f64>, s: &AdvSettings<f64>) -> f64 {
    let base = m.base_embeddings(&t.graphs.base);
    let comm = if s.ablation.no_cgcn {
        base
    } else {
        t.graphs.community.as_ref().unwrap().forward(&base, s.cgcn_layers, s.combine)
    };
    adv_loss(d, &comm, &t.triplets, &t.labels)
}

fn with_tables(m: &EmbeddingModel<f64>, flat: &[f64]) -> EmbeddingModel<f64> {
    let mut out = m.clone();
    set_tables(&mut out.tables, flat);
    out
}

const DISC_NAMES: [&str; 6] = ["W1", "b1", "W2", "b2", "global_user", "global_item"];

/// Relative error against central differences for every objective and
/// parameter tensor of one toy instance.
pub fn gradient_errors(seed: u64, kind: ModelKind) -> Vec<(String, f64)> {
    let t = toy(seed, kind);
    let theta = flat_tables(&t.model.tables);
    let mut out = Vec::new();

    let s = settings(0.0, Ablation::default());
    let (_, g) = grl_gradients(&t.graphs, &t.model, None, &t.triplets, None, &s, &RecTerms::default());
    let fd = central_differences(&theta, |x| rec_objective(&t, &with_tables(&t.model, x), &s));
    out.push(("L_rec theta_b".to_string(), rel_err(&flat_tables(&g.base), &fd)));

    for no_cgcn in [false, true] {
        let s = settings(1.0, Ablation { no_cgcn, ..Default::default() });
        let tag = if no_cgcn { " (no cgcn)" } else { "" };
        let (_, gb, gd) = adv_loss_grad(&t.graphs, &t.model, &t.disc, &t.triplets, &t.labels, &s);
        let fd = central_differences(&theta, |x| adv_objective(&t, &with_tables(&t.model, x), &t.disc, &s));
        out.push((format!("L_adv theta_b{tag}"), rel_err(&flat_tables(&gb), &fd)));
        let fd_d = disc_differences(&t.disc, |d| adv_objective(&t, &t.model, d, &s));
        for (k, (a, n)) in gd.tensors().iter().zip(&fd_d).enumerate() {
            out.push((format!("L_adv {}{tag}", DISC_NAMES[k]), rel_err(a, n)));
        }
    }

    let gamma = 0.3;
    let terms = RecTerms {
        weights: None,
        fairness: Some((gamma, &t.labels)),
    };
    let (_, g) = grl_gradients(&t.graphs, &t.model, None, &t.triplets, None, &s, &terms);
    let fd = central_differences(&theta, |x| {
        let m = with_tables(&t.model, x);
        let base = m.base_embeddings(&t.graphs.base);
        rec_objective(&t, &m, &s) + fairness_loss_grad(&base, &t.triplets, &t.labels, gamma, None)
    });
    out.push(("fairness theta_b".to_string(), rel_err(&flat_tables(&g.base), &fd)));

    let beta = 0.5;
    let s = settings(beta, Ablation::default());
    let (_, g) = grl_gradients(&t.graphs, &t.model, Some(&t.disc), &t.triplets, Some(&t.labels), &s, &RecTerms::default());
    // theta_b sees L_rec - beta L_adv, theta_d sees L_adv plus its regularizer
    let fd = central_differences(&theta, |x| {
        let m = with_tables(&t.model, x);
        rec_objective(&t, &m, &s) - beta * adv_objective(&t, &m, &t.disc, &s)
    });
    out.push(("L_R theta_b".to_string(), rel_err(&flat_tables(&g.base), &fd)));
    let fd_d = disc_differences(&t.disc, |d| adv_objective(&t, &t.model, d, &s) + s.l2_disc * d.sq_norm());
    for (k, (a, n)) in g.disc.unwrap().tensors().iter().zip(&fd_d).enumerate() {
        out.push((format!("L_R {}", DISC_NAMES[k]), rel_err(a, n)));
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest parameter deviation between SGD through the reversal layer at
/// rate `lr` and the two-player updates at `(lr, lr / beta)`, over `steps`
/// steps: (theta_b, theta_d).
pub fn grl_deviation(seed: u64, beta: f64, steps: u64) -> (f64, f64) {
    let lr = 0.05;
    let ds = random_toy(seed, 6, 7, 0.4);
    let labels = random_labels(&ds, 3, seed);
    let graphs = Graphs::new(&ds, &labels).unwrap();
    let s = settings(beta, Ablation::default());
    let model0 = EmbeddingModel::<f64>::init(6, 7, 8, ModelKind::LightGcn, 2, seed);
    let disc0 = Discriminator::<f64>::init(8, 4, 6, labels.num_communities, seed);
    let (mut m_grl, mut d_grl) = (model0.clone(), disc0.clone());
    let (mut m_alt, mut d_alt) = (model0, disc0);
    let mut sgd = Sgd { learning_rate: lr };
    let mut sgd_b = Sgd { learning_rate: lr };
    let mut sgd_d = Sgd { learning_rate: lr / beta };
    let (mut worst_b, mut worst_d) = (0.0f64, 0.0f64);
    for step in 0..steps {
        let triplets = random_triplets(&ds, 10, seed * 100 + step);
        let (_, g) = grl_gradients(&graphs, &m_grl, Some(&d_grl), &triplets, Some(&labels), &s, &RecTerms::default());
        sgd.begin_step();
        update_base(&mut sgd, &mut m_grl, &g.base);
        update_disc(&mut sgd, &mut d_grl, g.disc.as_ref().unwrap());

        let (_, g) = alternating_gradients(&graphs, &m_alt, &d_alt, &triplets, &labels, &s);
        update_base(&mut sgd_b, &mut m_alt, &g.base);
        update_disc(&mut sgd_d, &mut d_alt, g.disc.as_ref().unwrap());

        worst_b = worst_b.max(max_abs_diff(&flat_tables(&m_grl.tables), &flat_tables(&m_alt.tables)));
        for (a, b) in d_grl.tensors().iter().zip(d_alt.tensors()) {
            worst_d = worst_d.max(max_abs_diff(a, b));
        }
    }
    (worst_b, worst_d)
}

/// Fixtures where Louvain at `seed` stays below the exhaustive optimum,
/// with (found, best).
pub fn louvain_misses(fixtures: &[BipartiteFixture], seed: u64) -> Vec<(String, f64, f64)> {
    fixtures
        .iter()
        .filter_map(|f| {
            let graph = WeightedGraph::from_edges(f.nodes(), f.edges.iter().copied());
            let best = brute_force_modularity(f.nodes(), &f.edges);
            let (labels, _) = louvain_graph(&graph, seed, 1.0);
            let q = dense_modularity(f.nodes(), &f.edges, &labels);
            ((q - best).abs() > 1e-10).then(|| (f.name.clone(), q, best))
        })
        .collect()
}

pub fn ablation_config(base: ModelKind) -> TrainingConfig {
    TrainingConfig {
        base,
        dim: 8,
        layers: 2,
        hidden: 8,
        global_dim: 4,
        learning_rate: 5e-3,
        batch_size: 64,
        epochs: 6,
        eval_every: 2,
        patience: 100,
        seed: 13,
        ..Default::default()
    }
}

fn same_log(a: &[cdcgcn::train::EpochRecord], b: &[cdcgcn::train::EpochRecord]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.l_rec.to_bits() == y.l_rec.to_bits() && x.val_recall20.to_bits() == y.val_recall20.to_bits()
        })
}

/// Runs every ablation identity on `ds`; returns the ones that broke.
pub fn ablation_identity_failures(ds: &InteractionDataset, a: &CommunityAssignment) -> Vec<String> {
    let mut broken = Vec::new();
    for base in [ModelKind::Mf, ModelKind::LightGcn] {
        let plain = ablation_config(base);
        let (bpr, bpr_report) = pretrain::<f32>(ds, &plain, None, &mut |_| {}).unwrap();
        let no_cd = TrainingConfig {
            ablation: Ablation {
                no_cd: true,
                no_cns: true,
                ..Default::default()
            },
            ..plain.clone()
        };
        let (m, report) = train_cdcgcn::<f32>(ds, a, None, &no_cd, &mut |_| {}).unwrap();
        if !same_bits(&m.base.tables, &bpr.tables) || !same_log(&report.log, &bpr_report.log) {
            broken.push(format!("{base}: no_cd with uniform negatives"));
        }
        for objective in [BaseObjective::Fairness { gamma: 0.0 }, BaseObjective::Ips { delta: 1.0 }] {
            let (m, report) = train_base::<f32>(ds, &plain, objective, Some(a), &mut |_| {}).unwrap();
            if !same_bits(&m.tables, &bpr.tables) || !same_log(&report.log, &bpr_report.log) {
                broken.push(format!("{base}: neutral {}", objective.name()));
            }
        }
    }
    broken
}
