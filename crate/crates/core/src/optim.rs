//! First-order optimizers over flat parameter tensors.
//!
//! Every tensor is addressed by a stable slot id so moment buffers survive
//! across steps. A step is `begin_step` followed by one `update` per slot.

use crate::scalar::Scalar;

pub trait Optimizer<T: Scalar> {
    fn begin_step(&mut self);
    fn update(&mut self, slot: usize, params: &mut [T], grads: &[T]);
}

/// Plain gradient descent, `p -= lr * g`.
#[derive(Debug, Clone, Copy)]
pub struct Sgd<T> {
    pub learning_rate: T,
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn begin_step(&mut self) {}

    fn update(&mut self, _slot: usize, params: &mut [T], grads: &[T]) {
        for (p, &g) in params.iter_mut().zip(grads) {
            *p -= self.learning_rate * g;
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    slots: Vec<Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn begin_step(&mut self) {
        self.step += 1;
    }

    fn update(&mut self, slot: usize, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), grads.len(), "gradient shape mismatch in slot {slot}");
        assert!(self.step > 0, "begin_step must precede update");
        if self.slots.len() <= slot {
            self.slots.resize_with(slot + 1, Moments::default);
        }
        let state = &mut self.slots[slot];
        if state.first.is_empty() {
            state.first = vec![T::zero(); params.len()];
            state.second = vec![T::zero(); params.len()];
        }
        assert_eq!(state.first.len(), params.len(), "slot {slot} changed shape");

        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);
        let step_size = self.learning_rate / bias1;
        let one = T::one();
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(state.first.iter_mut())
            .zip(state.second.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step_size * *m / ((*v / bias2).sqrt() + self.eps);
        }
    }
}
