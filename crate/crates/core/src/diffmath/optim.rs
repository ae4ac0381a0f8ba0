use super::{ParamSet, Real, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and step counter of one Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place.
///
/// Moment arithmetic is carried out in `f64` and rounded once per element.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        let m = state.m.get_mut(name).expect("adam state missing moment");
        let v = state.v.get_mut(name).expect("adam state missing moment");
        let (pd, gd) = (p.data_mut(), g.data());
        for (i, x) in pd.iter_mut().enumerate() {
            let gi = gd[i].as_f64();
            let mi = cfg.beta1 * m.data()[i].as_f64() + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i].as_f64() + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = T::from_f64(mi);
            v.data_mut()[i] = T::from_f64(vi);
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *x = T::from_f64(x.as_f64() - cfg.lr * mhat / (vhat.sqrt() + cfg.eps));
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}

/// Elementwise `a + b` over matching parameter sets.
pub fn add_sets<T: Real>(a: &ParamSet<T>, b: &ParamSet<T>) -> ParamSet<T> {
    a.iter()
        .map(|(k, x)| {
            let y = b.get(k).expect("parameter sets differ");
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
            (k.to_string(), Tensor::new(x.shape().to_vec(), data).expect("same shape"))
        })
        .collect()
}
