//! Adversarial community debiasing.
//!
//! Base embeddings are propagated through the community-reweighted
//! convolution; a conditional discriminator tries to recover each node's
//! community from the result, and a gradient reversal on that path pushes
//! the base embeddings to hide it. At inference the debiased scorer is
//! blended per user with a frozen pretrained scorer.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::community::{CommunityAssignment, CompatibilityWeights, UserBubbleProfile};
use crate::config::Ablation;
use crate::conv::{row, row_mut, BipartiteConv, LayerCombine, Tables};
use crate::dataset::InteractionDataset;
use crate::discriminator::{grl_backward, DiscBackward, Discriminator, NodeKind};
use crate::error::{Error, Result};
use crate::eval::{EmbeddingScorer, Scorer};
use crate::loss::{bpr_loss_grad, fairness_loss_grad, l2_rows_grad, Triplet};
use crate::model::{ck, read_f32s, write_f32s, EmbeddingModel, Header, FLAG_DISCRIMINATOR, FLAG_ETA};
use crate::optim::Optimizer;
use crate::scalar::Scalar;

/// Per-layer community embeddings and their sum.
#[derive(Debug, Clone)]
pub struct CommunityEmbeddings<T> {
    pub layers: Vec<Tables<T>>,
    pub e_comm: Tables<T>,
}

/// Community-reweighted propagation of `e_base` over `layers` hops.
pub fn cgcn_propagate<T: Scalar>(
    conv: &BipartiteConv<T>,
    e_base: &Tables<T>,
    layers: usize,
    combine: LayerCombine,
) -> CommunityEmbeddings<T> {
    let all = conv.layers(e_base, layers);
    CommunityEmbeddings {
        e_comm: conv.forward(e_base, layers, combine),
        layers: all,
    }
}

/// Graph operators shared by every step of a run.
#[derive(Debug, Clone)]
pub struct Graphs<T> {
    /// LightGCN normalization, used for the base model.
    pub base: BipartiteConv<T>,
    /// Compatibility-weighted operator for the community path; absent for
    /// plain recommenders.
    pub community: Option<BipartiteConv<T>>,
}

impl<T: Scalar> Graphs<T> {
    pub fn new(ds: &InteractionDataset, assignment: &CommunityAssignment) -> Result<Self> {
        let h: CompatibilityWeights<T> = crate::community::compatibility(ds, assignment)?;
        Ok(Self {
            base: BipartiteConv::lightgcn(ds),
            community: Some(BipartiteConv::community(ds, &h)?),
        })
    }

    pub fn base_only(ds: &InteractionDataset) -> Self {
        Self {
            base: BipartiteConv::lightgcn(ds),
            community: None,
        }
    }

    fn community(&self) -> &BipartiteConv<T> {
        self.community.as_ref().expect("community operator required for the adversarial path")
    }
}

/// Extra terms of the recommendation objective used by the baselines.
#[derive(Debug, Clone, Default)]
pub struct RecTerms<'a, T> {
    /// Per-triplet BPR weights.
    pub weights: Option<Vec<T>>,
    /// Fairness regularizer strength and the labels it reads.
    pub fairness: Option<(T, &'a CommunityAssignment)>,
}

/// Settings of one adversarial objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct AdvSettings<T> {
    pub beta: T,
    pub l2_base: T,
    pub l2_disc: T,
    pub cgcn_layers: usize,
    pub combine: LayerCombine,
    pub ablation: Ablation,
}

/// Batch losses (sums over the batch).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts<T> {
    pub rec: T,
    /// Fairness regularizer value (zero when unused).
    pub fairness: T,
    pub adv: T,
    pub l2_base: T,
    pub l2_disc: T,
    /// Discriminator rows predicted correctly, out of `rows`.
    pub correct: usize,
    pub rows: usize,
}

/// Gradients on the layer-0 tables and on the discriminator.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub base: Tables<T>,
    pub disc: Option<Discriminator<T>>,
}

/// Node rows fed to the discriminator for a batch: user, positive,
/// negative per triplet.
pub fn adversarial_rows(triplets: &[Triplet], assignment: &CommunityAssignment) -> (Vec<(NodeKind, usize)>, Vec<usize>) {
    let mut rows = Vec::with_capacity(3 * triplets.len());
    let mut labels = Vec::with_capacity(3 * triplets.len());
    for t in triplets {
        rows.push((NodeKind::User, t.user));
        labels.push(assignment.user(t.user));
        for i in [t.pos, t.neg] {
            rows.push((NodeKind::Item, i));
            labels.push(assignment.item(i));
        }
    }
    (rows, labels)
}

fn gather<T: Scalar>(tables: &Tables<T>, rows: &[(NodeKind, usize)]) -> Array2<T> {
    let d = tables.dim();
    let mut out = Array2::zeros((rows.len(), d));
    for (r, &(kind, ix)) in rows.iter().enumerate() {
        let src = match kind {
            NodeKind::User => tables.user(ix),
            NodeKind::Item => tables.item(ix),
        };
        row_mut(&mut out, r).copy_from_slice(src);
    }
    out
}

fn scatter_add<T: Scalar>(grad: &Array2<T>, rows: &[(NodeKind, usize)], into: &mut Tables<T>) {
    for (r, &(kind, ix)) in rows.iter().enumerate() {
        let dst = match kind {
            NodeKind::User => row_mut(&mut into.users, ix),
            NodeKind::Item => row_mut(&mut into.items, ix),
        };
        for (o, &g) in dst.iter_mut().zip(row(grad, r)) {
            *o += g;
        }
    }
}

/// Summed cross-entropy of the discriminator on the batch's nodes.
pub fn adv_loss<T: Scalar>(
    disc: &Discriminator<T>,
    e_comm: &Tables<T>,
    triplets: &[Triplet],
    assignment: &CommunityAssignment,
) -> T {
    let (rows, labels) = adversarial_rows(triplets, assignment);
    let kinds: Vec<NodeKind> = rows.iter().map(|r| r.0).collect();
    let fwd = disc.forward(gather(e_comm, &rows).view(), &kinds);
    Discriminator::loss(&fwd, &labels)
}

/// Forward pieces shared by the two update formulations.
struct Pass<T> {
    grad_base_rec: Tables<T>,
    rec: T,
    fairness: T,
    adv: Option<(DiscBackward<T>, Vec<(NodeKind, usize)>)>,
}

fn forward_pass<T: Scalar>(
    graphs: &Graphs<T>,
    model: &EmbeddingModel<T>,
    disc: Option<&Discriminator<T>>,
    triplets: &[Triplet],
    assignment: Option<&CommunityAssignment>,
    settings: &AdvSettings<T>,
    terms: &RecTerms<'_, T>,
) -> Pass<T> {
    let e_base = model.base_embeddings(&graphs.base);
    let mut grad = Tables::zeros_like(&e_base);
    let rec = bpr_loss_grad(&e_base, triplets, terms.weights.as_deref(), &mut grad);
    let fairness = match terms.fairness {
        Some((gamma, a)) => fairness_loss_grad(&e_base, triplets, a, gamma, Some(&mut grad)),
        None => T::zero(),
    };
    let adv = match (disc, assignment) {
        (Some(disc), Some(a)) if !settings.ablation.no_cd => {
            let e_comm = if settings.ablation.no_cgcn {
                e_base
            } else {
                graphs.community().forward(&e_base, settings.cgcn_layers, settings.combine)
            };
            let (rows, labels) = adversarial_rows(triplets, a);
            let kinds: Vec<NodeKind> = rows.iter().map(|r| r.0).collect();
            let fwd = disc.forward(gather(&e_comm, &rows).view(), &kinds);
            Some((disc.backward(&fwd, &kinds, &labels), rows))
        }
        _ => None,
    };
    Pass {
        grad_base_rec: grad,
        rec,
        fairness,
        adv,
    }
}

/// Gradient of the adversarial loss w.r.t. `e^base` given the gradient on
/// the discriminator input rows.
fn comm_to_base<T: Scalar>(
    graphs: &Graphs<T>,
    grad_rows: &Array2<T>,
    rows: &[(NodeKind, usize)],
    like: &Tables<T>,
    settings: &AdvSettings<T>,
) -> Tables<T> {
    let mut g_comm = Tables::zeros_like(like);
    scatter_add(grad_rows, rows, &mut g_comm);
    if settings.ablation.no_cgcn {
        g_comm
    } else {
        graphs.community().backward(&g_comm, settings.cgcn_layers, settings.combine)
    }
}

/// Single-objective gradients: `L_rec + L_adv(R_beta(theta_b), theta_d)`
/// plus regularizers. The reversal sits on the community embeddings, so
/// `theta_b` sees `-beta dL_adv` while the discriminator (globals included)
/// sees `+dL_adv`.
pub fn grl_gradients<T: Scalar>(
    graphs: &Graphs<T>,
    model: &EmbeddingModel<T>,
    disc: Option<&Discriminator<T>>,
    triplets: &[Triplet],
    assignment: Option<&CommunityAssignment>,
    settings: &AdvSettings<T>,
    terms: &RecTerms<'_, T>,
) -> (LossParts<T>, Gradients<T>) {
    let pass = forward_pass(graphs, model, disc, triplets, assignment, settings, terms);
    let mut grad_base = pass.grad_base_rec;
    let mut parts = LossParts {
        rec: pass.rec,
        fairness: pass.fairness,
        ..Default::default()
    };
    let mut disc_grad = None;
    if let (Some((bwd, rows)), Some(d)) = (pass.adv, disc) {
        let reversed = grl_backward(bwd.grad_input, settings.beta);
        let g = comm_to_base(graphs, &reversed, &rows, &grad_base, settings);
        grad_base.add_assign(&g);
        let mut gd = bwd.grads;
        parts.l2_disc = d.add_l2(settings.l2_disc, &mut gd);
        parts.adv = bwd.loss;
        parts.correct = bwd.correct;
        parts.rows = rows.len();
        disc_grad = Some(gd);
    }
    let mut base = model.backprop_base(&graphs.base, grad_base);
    parts.l2_base = l2_rows_grad(&model.tables, triplets, settings.l2_base, &mut base);
    (parts, Gradients { base, disc: disc_grad })
}

/// `L_adv` alone with its unreversed gradients w.r.t. the layer-0 tables
/// and the discriminator (no regularizers).
pub fn adv_loss_grad<T: Scalar>(
    graphs: &Graphs<T>,
    model: &EmbeddingModel<T>,
    disc: &Discriminator<T>,
    triplets: &[Triplet],
    assignment: &CommunityAssignment,
    settings: &AdvSettings<T>,
) -> (T, Tables<T>, Discriminator<T>) {
    let pass = forward_pass(graphs, model, Some(disc), triplets, Some(assignment), settings, &RecTerms::default());
    match pass.adv {
        Some((bwd, rows)) => {
            let g = comm_to_base(graphs, &bwd.grad_input, &rows, &pass.grad_base_rec, settings);
            (bwd.loss, model.backprop_base(&graphs.base, g), bwd.grads)
        }
        None => (
            T::zero(),
            Tables::zeros_like(&model.tables),
            Discriminator::zeros_like(disc),
        ),
    }
}

/// The two-player formulation's gradients at the current point:
/// `theta_b` descends `L_rec - beta L_adv`, the discriminator descends
/// `beta L_adv` (its regularizer included in the adversarial term).
pub fn alternating_gradients<T: Scalar>(
    graphs: &Graphs<T>,
    model: &EmbeddingModel<T>,
    disc: &Discriminator<T>,
    triplets: &[Triplet],
    assignment: &CommunityAssignment,
    settings: &AdvSettings<T>,
) -> (LossParts<T>, Gradients<T>) {
    let terms = RecTerms::default();
    let pass = forward_pass(graphs, model, Some(disc), triplets, Some(assignment), settings, &terms);
    let mut parts = LossParts {
        rec: pass.rec,
        ..Default::default()
    };
    let mut base = model.backprop_base(&graphs.base, pass.grad_base_rec.clone());
    parts.l2_base = l2_rows_grad(&model.tables, triplets, settings.l2_base, &mut base);
    let mut disc_grad = None;
    if let Some((bwd, rows)) = pass.adv {
        let g = comm_to_base(graphs, &bwd.grad_input, &rows, &pass.grad_base_rec, settings);
        let adv_base = model.backprop_base(&graphs.base, g);
        base.scaled_add(-settings.beta, &adv_base);
        let mut gd = bwd.grads;
        parts.l2_disc = disc.add_l2(settings.l2_disc, &mut gd);
        for t in gd.tensors_mut() {
            for v in t.iter_mut() {
                *v *= settings.beta;
            }
        }
        parts.adv = bwd.loss;
        parts.correct = bwd.correct;
        parts.rows = rows.len();
        disc_grad = Some(gd);
    }
    (parts, Gradients { base, disc: disc_grad })
}

/// Optimizer slots: 0 and 1 for the user and item tables, 2.. for the
/// discriminator tensors.
pub const DISC_SLOT_BASE: usize = 2;

/// Applies one optimizer step to the base tables and, if present, the
/// discriminator.
pub fn apply_gradients<T: Scalar, O: Optimizer<T>>(
    opt: &mut O,
    model: &mut EmbeddingModel<T>,
    disc: Option<&mut Discriminator<T>>,
    grads: &Gradients<T>,
) {
    opt.begin_step();
    update_base(opt, model, &grads.base);
    if let (Some(d), Some(g)) = (disc, grads.disc.as_ref()) {
        update_disc(opt, d, g);
    }
}

pub fn update_base<T: Scalar, O: Optimizer<T>>(opt: &mut O, model: &mut EmbeddingModel<T>, g: &Tables<T>) {
    let flat = |a: &Array2<T>| a.as_slice().expect("standard layout").to_vec();
    opt.update(0, model.tables.users.as_slice_mut().expect("standard layout"), &flat(&g.users));
    opt.update(1, model.tables.items.as_slice_mut().expect("standard layout"), &flat(&g.items));
}

pub fn update_disc<T: Scalar, O: Optimizer<T>>(opt: &mut O, disc: &mut Discriminator<T>, g: &Discriminator<T>) {
    for (k, (p, gv)) in disc.tensors_mut().into_iter().zip(g.tensors()).enumerate() {
        opt.update(DISC_SLOT_BASE + k, p, gv);
    }
}

/// Fusion weight `eta_u = ILFBI_init(u) / (2 mean)`, clamped to [0, 1];
/// all zero when the mean is zero.
pub fn compute_eta(profile: &UserBubbleProfile) -> Vec<f64> {
    let mean = profile.mean_ilfbi_init;
    if !(mean > 0.0) {
        return vec![0.0; profile.ilfbi_init.len()];
    }
    profile.ilfbi_init.iter().map(|&x| (x / (2.0 * mean)).clamp(0.0, 1.0)).collect()
}

/// `eta Y_cd + (1 - eta) Y_bm` for one user's candidates.
pub fn fuse_scores(cd: &[f64], bm: &[f64], eta: f64) -> Vec<f64> {
    cd.iter().zip(bm).map(|(&c, &b)| eta * c + (1.0 - eta) * b).collect()
}

/// Per-user blend of the debiased scorer with a frozen pretrained scorer.
pub struct FusedScorer<'a, T> {
    pub debiased: EmbeddingScorer<T>,
    pub pretrained: Option<&'a EmbeddingScorer<T>>,
    pub eta: Vec<f64>,
}

impl<T: Scalar> Scorer for FusedScorer<'_, T> {
    fn num_items(&self) -> usize {
        self.debiased.num_items()
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        self.debiased.score_user(user, out);
        let Some(bm) = self.pretrained else { return };
        let eta = self.eta[user];
        if eta >= 1.0 {
            return;
        }
        let mut other = vec![0.0; out.len()];
        bm.score_user(user, &mut other);
        for (o, b) in out.iter_mut().zip(other) {
            *o = eta * *o + (1.0 - eta) * b;
        }
    }
}

/// A trained debiased model: base parameters, discriminator (absent when
/// the adversary was ablated) and the per-user fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CdCgcnModel<T> {
    pub base: EmbeddingModel<T>,
    pub disc: Option<Discriminator<T>>,
    pub eta: Vec<T>,
}

impl<T: Scalar> CdCgcnModel<T> {
    pub fn eta_f64(&self) -> Vec<f64> {
        self.eta.iter().map(|e| e.to_f64_lossy()).collect()
    }

    /// Base checkpoint extended with a discriminator section (`g`, `h`,
    /// `n_comm` as u32, then W1, b1, W2, b2, global user, global item) and
    /// the per-user `eta` vector.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let flags = FLAG_ETA | if self.disc.is_some() { FLAG_DISCRIMINATOR } else { 0 };
        let put = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
            self.base.header(flags).write(w)?;
            self.base.write_tables(w)?;
            if let Some(d) = &self.disc {
                w.write_u32::<LittleEndian>(d.global_dim() as u32)?;
                w.write_u32::<LittleEndian>(d.hidden() as u32)?;
                w.write_u32::<LittleEndian>(d.num_communities() as u32)?;
                for t in d.tensors() {
                    write_f32s(w, t.iter().copied())?;
                }
            }
            write_f32s(w, self.eta.iter().copied())?;
            w.flush()
        };
        put(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let h = Header::read(&mut r)?;
        if h.flags & FLAG_ETA == 0 {
            return Err(Error::Checkpoint(format!("{} holds a plain base model", path.display())));
        }
        let base = EmbeddingModel::read_body(&h, &mut r)?;
        let disc = if h.flags & FLAG_DISCRIMINATOR != 0 {
            Some(read_disc(&mut r, base.dim())?)
        } else {
            None
        };
        let eta = read_f32s(&mut r, base.num_users())?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(ck)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after eta section".into()));
        }
        Ok(Self { base, disc, eta })
    }
}

fn read_mat<T: Scalar>(r: &mut impl Read, rows: usize, cols: usize) -> Result<Array2<T>> {
    Ok(Array2::from_shape_vec((rows, cols), read_f32s(r, rows * cols)?).expect("shape"))
}

fn read_disc<T: Scalar>(r: &mut impl Read, dim: usize) -> Result<Discriminator<T>> {
    let g = r.read_u32::<LittleEndian>().map_err(ck)? as usize;
    let h = r.read_u32::<LittleEndian>().map_err(ck)? as usize;
    let c = r.read_u32::<LittleEndian>().map_err(ck)? as usize;
    let w1 = read_mat(r, dim + g, h)?;
    let b1 = Array1::from(read_f32s(r, h)?);
    let w2 = read_mat(r, h, c)?;
    let b2 = Array1::from(read_f32s(r, c)?);
    let global_user = Array1::from(read_f32s(r, g)?);
    let global_item = Array1::from(read_f32s(r, g)?);
    Ok(Discriminator {
        w1,
        b1,
        w2,
        b2,
        global_user,
        global_item,
    })
}
