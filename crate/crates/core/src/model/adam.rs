/// Adaptive-moment optimizer over a list of flat parameter buffers.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update; `params[i]` pairs with `grads[i]`.
    pub fn update(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]]) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let lr_t = (self.lr * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step))) as f32;
        let (b1, b2, eps) = (b1 as f32, b2 as f32, self.epsilon as f32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                p[j] -= lr_t * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}
