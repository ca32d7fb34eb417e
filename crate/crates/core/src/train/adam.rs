use crate::tensor::{Real, Tensor};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Real> Adam<S> {
    /// beta = (0.9, 0.98), eps = 1e-9.
    pub fn new(lr: f64, shapes: &[Tensor<S>]) -> Self {
        let zeros = || shapes.iter().map(|t| vec![S::zero(); t.numel()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Returns the updated parameters.
    pub fn update(&mut self, params: &[Tensor<S>], grads: &[Tensor<S>]) -> Vec<Tensor<S>> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let (one_b1, one_b2) = (S::lit(1.0 - self.beta1), S::lit(1.0 - self.beta2));
        params
            .iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|((p, g), (m, v))| {
                let data = p
                    .data()
                    .iter()
                    .zip(g.data())
                    .zip(m.iter_mut().zip(v.iter_mut()))
                    .map(|((&w, &g), (m, v))| {
                        *m = b1 * *m + one_b1 * g;
                        *v = b2 * *v + one_b2 * g * g;
                        let mhat = m.f64() / c1;
                        let vhat = v.f64() / c2;
                        w - S::lit(self.lr * mhat / (vhat.sqrt() + self.eps))
                    })
                    .collect();
                Tensor::new(p.shape().to_vec(), data).expect("same shape")
            })
            .collect()
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<S: Real>(grads: &[Tensor<S>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x.f64() * x.f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<S: Real>(grads: &mut [Tensor<S>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let c = S::lit(max_norm / norm);
        for g in grads.iter_mut() {
            let data = g.data().iter().map(|&x| x * c).collect();
            *g = Tensor::new(g.shape().to_vec(), data).expect("same shape");
        }
    }
    norm
}
