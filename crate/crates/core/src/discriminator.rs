//! Conditional community discriminator: a two-layer perceptron that reads a
//! node's community embedding concatenated with a shared global embedding
//! for its node type and predicts a distribution over communities.
//!
//! `softmax(W2ᵀ relu(W1ᵀ [x ; g_kind] + b1) + b2)`

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal, Uniform};

use crate::loss::{ce_loss, CE_FLOOR};
use crate::rng::{self, stream};
use crate::scalar::Scalar;

pub const DEFAULT_GLOBAL_DIM: usize = 16;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    User,
    Item,
}

/// Parameters `θ_d`. The same struct doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    /// `(d + g) × h`
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    /// `h × n_comm`
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    pub global_user: Array1<T>,
    pub global_item: Array1<T>,
}

/// Cached activations of one batched forward pass.
#[derive(Debug, Clone)]
pub struct DiscForward<T> {
    pub input: Array2<T>,
    pub hidden_pre: Array2<T>,
    pub hidden: Array2<T>,
    pub probs: Array2<T>,
}

/// Result of a backward pass through the discriminator.
#[derive(Debug, Clone)]
pub struct DiscBackward<T> {
    /// Summed cross-entropy over the batch.
    pub loss: T,
    /// Gradient w.r.t. the community-embedding part of each input row.
    pub grad_input: Array2<T>,
    pub grads: Discriminator<T>,
    /// Rows whose argmax matches the label.
    pub correct: usize,
}

impl<T: Scalar> Discriminator<T> {
    /// Dense layers use the U(-1/sqrt(fan_in), 1/sqrt(fan_in)) scheme for
    /// weights and biases; global embeddings are N(0, 0.1^2).
    pub fn init(dim: usize, global_dim: usize, hidden: usize, num_communities: usize, seed: u64) -> Self {
        let mut rng = rng::rng_for(seed, stream::INIT_DISC);
        let mut uniform = |fan_in: usize, shape: (usize, usize)| {
            let b = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-b, b).expect("valid bounds");
            Array2::from_shape_simple_fn(shape, || T::of(dist.sample(&mut rng)))
        };
        let w1 = uniform(dim + global_dim, (dim + global_dim, hidden));
        let b1 = uniform(dim + global_dim, (1, hidden)).remove_axis(Axis(0));
        let w2 = uniform(hidden, (hidden, num_communities));
        let b2 = uniform(hidden, (1, num_communities)).remove_axis(Axis(0));
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let global_user = Array1::from_shape_simple_fn(global_dim, || T::of(normal.sample(&mut rng)));
        let global_item = Array1::from_shape_simple_fn(global_dim, || T::of(normal.sample(&mut rng)));
        Self {
            w1,
            b1,
            w2,
            b2,
            global_user,
            global_item,
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            w1: Array2::zeros(other.w1.raw_dim()),
            b1: Array1::zeros(other.b1.raw_dim()),
            w2: Array2::zeros(other.w2.raw_dim()),
            b2: Array1::zeros(other.b2.raw_dim()),
            global_user: Array1::zeros(other.global_user.raw_dim()),
            global_item: Array1::zeros(other.global_item.raw_dim()),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.w1.nrows() - self.global_dim()
    }

    pub fn global_dim(&self) -> usize {
        self.global_user.len()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn num_communities(&self) -> usize {
        self.w2.ncols()
    }

    /// Parameter tensors in a fixed order (W1, b1, W2, b2, global user,
    /// global item).
    pub fn tensors(&self) -> [&[T]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.global_user.as_slice().expect("standard layout"),
            self.global_item.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.global_user.as_slice_mut().expect("standard layout"),
            self.global_item.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn sq_norm(&self) -> T {
        self.tensors().iter().flat_map(|t| t.iter()).map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().flat_map(|t| t.iter()).all(|x| x.is_finite())
    }

    fn global(&self, kind: NodeKind) -> &Array1<T> {
        match kind {
            NodeKind::User => &self.global_user,
            NodeKind::Item => &self.global_item,
        }
    }

    /// Batched forward pass over rows of `x` (`B × d`).
    pub fn forward(&self, x: ArrayView2<T>, kinds: &[NodeKind]) -> DiscForward<T> {
        let (b, d) = x.dim();
        assert_eq!(d, self.embed_dim(), "embedding width mismatch");
        assert_eq!(kinds.len(), b);
        let g = self.global_dim();
        let mut input = Array2::zeros((b, d + g));
        input.slice_mut(s![.., ..d]).assign(&x);
        for (r, kind) in kinds.iter().enumerate() {
            input.slice_mut(s![r, d..]).assign(self.global(*kind));
        }
        let hidden_pre = input.dot(&self.w1) + &self.b1;
        let hidden = hidden_pre.mapv(|v| v.max(T::zero()));
        let mut probs = hidden.dot(&self.w2) + &self.b2;
        for mut row in probs.rows_mut() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|v| (v - max).exp());
            let z: T = row.iter().copied().sum();
            row.mapv_inplace(|v| v / z);
        }
        DiscForward {
            input,
            hidden_pre,
            hidden,
            probs,
        }
    }

    /// Probability vector for a single embedding.
    pub fn discriminate(&self, e_comm: &[T], kind: NodeKind) -> Vec<T> {
        let x = ArrayView2::from_shape((1, e_comm.len()), e_comm).expect("row");
        self.forward(x, &[kind]).probs.row(0).to_vec()
    }

    /// Summed cross-entropy of a forward pass.
    pub fn loss(fwd: &DiscForward<T>, labels: &[usize]) -> T {
        fwd.probs
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(p, &y)| ce_loss(p.as_slice().expect("row"), y))
            .sum()
    }

    /// Cross-entropy gradients of a forward pass. The softmax/CE gradient
    /// `p - onehot(y)` ignores the 1e-12 floor, which only binds when a
    /// probability underflows.
    pub fn backward(&self, fwd: &DiscForward<T>, kinds: &[NodeKind], labels: &[usize]) -> DiscBackward<T> {
        let d = self.embed_dim();
        let mut dlogits = fwd.probs.clone();
        let mut loss = T::zero();
        let mut correct = 0;
        for ((mut row, p), &y) in dlogits.rows_mut().into_iter().zip(fwd.probs.rows()).zip(labels) {
            loss += -p[y].max(T::of(CE_FLOOR)).ln();
            let argmax = p
                .iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0;
            if argmax == y {
                correct += 1;
            }
            row[y] -= T::one();
        }
        let w2 = fwd.hidden.t().dot(&dlogits);
        let b2 = dlogits.sum_axis(Axis(0));
        let mut dz1 = dlogits.dot(&self.w2.t());
        ndarray::Zip::from(&mut dz1).and(&fwd.hidden_pre).for_each(|g, &z| {
            if z <= T::zero() {
                *g = T::zero();
            }
        });
        let w1 = fwd.input.t().dot(&dz1);
        let b1 = dz1.sum_axis(Axis(0));
        let dinput = dz1.dot(&self.w1.t());
        let mut global_user = Array1::zeros(self.global_dim());
        let mut global_item = Array1::zeros(self.global_dim());
        for (row, kind) in dinput.rows().into_iter().zip(kinds) {
            let tail = row.slice(s![d..]);
            match kind {
                NodeKind::User => global_user += &tail,
                NodeKind::Item => global_item += &tail,
            }
        }
        DiscBackward {
            loss,
            grad_input: dinput.slice(s![.., ..d]).to_owned(),
            grads: Discriminator {
                w1,
                b1,
                w2,
                b2,
                global_user,
                global_item,
            },
            correct,
        }
    }

    /// Adds `coef * ||θ_d||^2` gradient into `grads` and returns the penalty.
    pub fn add_l2(&self, coef: T, grads: &mut Self) -> T {
        if coef == T::zero() {
            return T::zero();
        }
        let two = coef + coef;
        for (g, p) in grads.tensors_mut().into_iter().zip(self.tensors()) {
            for (gv, &pv) in g.iter_mut().zip(p) {
                *gv += two * pv;
            }
        }
        coef * self.sq_norm()
    }
}

/// Gradient reversal: identity on the forward pass, `-beta` times the
/// incoming gradient on the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal<T> {
    pub beta: T,
}

impl<T: Scalar> GradientReversal<T> {
    pub fn new(beta: T) -> Self {
        Self { beta }
    }

    #[inline]
    pub fn forward<'a>(&self, x: &'a Array2<T>) -> &'a Array2<T> {
        x
    }

    pub fn backward(&self, mut upstream: Array2<T>) -> Array2<T> {
        let scale = -self.beta;
        upstream.mapv_inplace(|g| scale * g);
        upstream
    }
}

/// Free-function form of [`GradientReversal::backward`].
pub fn grl_backward<T: Scalar>(upstream: Array2<T>, beta: T) -> Array2<T> {
    GradientReversal::new(beta).backward(upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn zeroed(d: usize, g: usize, h: usize, c: usize) -> Discriminator<f64> {
        let proto = Discriminator::<f64>::init(d, g, h, c, 0);
        Discriminator::zeros_like(&proto)
    }

    #[test]
    fn zero_parameters_give_uniform() {
        let disc = zeroed(4, 2, 3, 5);
        let p = disc.discriminate(&[0.3, -1.0, 2.0, 0.1], NodeKind::User);
        for v in p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn forced_logit_closed_form() {
        // hidden unit 0 fires with value 1 through b1; W2 routes it to class 0
        let mut disc = zeroed(2, 1, 2, 4);
        disc.b1[0] = 1.0;
        disc.w2[[0, 0]] = 1.0;
        let p = disc.discriminate(&[0.0, 0.0], NodeKind::Item);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 3.0)).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grl_scales_gradient() {
        let g = array![[1.0, -2.0], [0.5, 0.0]];
        assert!(grl_backward(g.clone(), 0.0).iter().all(|&v| v == 0.0));
        assert_eq!(grl_backward(g.clone(), 1.0), -g.clone());
        let x = array![[f64::MIN_POSITIVE, 3.0]];
        let grl = GradientReversal::new(0.7);
        assert!(std::ptr::eq(grl.forward(&x), &x));
    }
}
