use super::matrix::Scalar;
use super::NnError;

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every tensor in `params` using `grads`
    /// (same order and lengths). Moments are allocated on the first call.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::ShapeMismatch {
                op: "adamw_step",
                lhs: (params.len(), 1),
                rhs: (grads.len(), 1),
            });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::ZERO; p.len()]).collect();
            self.second = self.first.clone();
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(NnError::ShapeMismatch {
                    op: "adamw_step",
                    lhs: (p.len(), 1),
                    rhs: (g.len(), 1),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = T::of(self.learning_rate);
        let decay = T::of(1.0 - self.learning_rate * self.weight_decay);
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one_b1 = T::of(1.0 - self.beta1);
        let one_b2 = T::of(1.0 - self.beta2);
        let c1 = T::of(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = T::of(1.0 / (1.0 - self.beta2.powi(t)));
        let eps = T::of(self.eps);
        let decays = self.weight_decay != 0.0;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j];
                if decays {
                    p[j] *= decay;
                }
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let mhat = m[j] * c1;
                let vhat = v[j] * c2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
