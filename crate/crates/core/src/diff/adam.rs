use super::{DiffError, Gradients, ParamStore, Real, Tensor};

/// Adam moments and hyperparameters, one moment pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub first_moment: Vec<Tensor<F>>,
    pub second_moment: Vec<Tensor<F>>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamStore<F>, lr: f64) -> Self {
        let zeros: Vec<Tensor<F>> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts before any
/// parameter or moment is touched.
pub fn adam_step<F: Real>(
    params: &mut ParamStore<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
) -> Result<(), DiffError> {
    if grads.tensors().len() != params.len() || state.first_moment.len() != params.len() {
        return Err(DiffError::Shape("adam: parameter count mismatch".into()));
    }
    for ((_, p), g) in params.iter().zip(grads.tensors()) {
        if p.value.shape() != g.shape() {
            return Err(DiffError::Shape(format!("adam: gradient shape for {}", p.name)));
        }
    }
    if let Some((_, p)) = params
        .iter()
        .zip(grads.tensors())
        .find(|(_, g)| !g.all_finite())
        .map(|(p, g)| (g, p.1))
    {
        return Err(DiffError::NonFiniteGradient(p.name.clone()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (F::lit(state.beta1), F::lit(state.beta2));
    let bc1 = F::lit(1.0 - state.beta1.powi(t));
    let bc2 = F::lit(1.0 - state.beta2.powi(t));
    let lr = F::lit(state.lr);
    let eps = F::lit(state.epsilon);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.tensors())
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        let pv = p.value.data_mut();
        for (((w, &gv), mv), vv) in pv
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (F::one() - b1) * gv;
            *vv = b2 * *vv + (F::one() - b2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
