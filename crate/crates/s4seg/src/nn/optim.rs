use num_traits::Float;

/// SGD with momentum and L2 weight decay:
/// `g = grad + wd*w; v = mu*v + g; w -= lr*v`.
///
/// Generic over the float type so the update rule itself can be verified in
/// double precision while training runs in f32.
pub struct Sgd<F: Float> {
    pub lr: F,
    pub momentum: F,
    pub weight_decay: F,
    velocity: Vec<Vec<F>>,
}

impl<F: Float> Sgd<F> {
    pub fn new(lr: F, momentum: F, weight_decay: F) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Updates one parameter tensor. `idx` identifies the tensor in the
    /// network's fixed visitation order.
    pub fn step_param(&mut self, idx: usize, value: &mut [F], grad: &[F]) {
        while self.velocity.len() <= idx {
            self.velocity.push(Vec::new());
        }
        let vel = &mut self.velocity[idx];
        if vel.len() != value.len() {
            vel.clear();
            vel.resize(value.len(), F::zero());
        }
        for i in 0..value.len() {
            let g = grad[i] + self.weight_decay * value[i];
            vel[i] = self.momentum * vel[i] + g;
            value[i] = value[i] - self.lr * vel[i];
        }
    }

    pub fn state(&self) -> &Vec<Vec<F>> {
        &self.velocity
    }

    pub fn restore(&mut self, velocity: Vec<Vec<F>>) {
        self.velocity = velocity;
    }
}

/// Adam with bias correction (Kingma & Ba defaults unless configured).
pub struct Adam<F: Float> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(lr: F, beta1: F, beta2: F) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: F::from(1e-8).expect("representable"),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Advances the shared timestep; call once per optimizer step, before
    /// the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn step_param(&mut self, idx: usize, value: &mut [F], grad: &[F]) {
        while self.m.len() <= idx {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[idx].len() != value.len() {
            self.m[idx].clear();
            self.m[idx].resize(value.len(), F::zero());
            self.v[idx].clear();
            self.v[idx].resize(value.len(), F::zero());
        }
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            value[i] = value[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn state(&self) -> (&Vec<Vec<F>>, &Vec<Vec<F>>) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Vec<F>>, v: Vec<Vec<F>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
