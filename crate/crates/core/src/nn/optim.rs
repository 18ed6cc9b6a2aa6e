use super::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// RMSprop: `acc ← decay·acc + (1−decay)·g²`, `p ← p − lr·g/√(acc + eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp { learning_rate: 1e-4, decay: 0.9, eps: 1e-8 }
    }
}

impl RmsProp {
    /// Applies one update and consumes the gradients.
    pub fn update<T: Scalar>(&self, params: &mut ParamSet<T>) -> Result<()> {
        if let Some((_, p)) = params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        let lr = T::from_f64_lossy(self.learning_rate);
        let decay = T::from_f64_lossy(self.decay);
        let keep = T::one() - decay;
        let eps = T::from_f64_lossy(self.eps);
        for p in params.iter_mut() {
            let grad = p.grad.take().expect("checked above");
            for ((w, a), &g) in p.value.data_mut().iter_mut().zip(p.accumulator.data_mut()).zip(grad.data()) {
                *a = decay * *a + keep * g * g;
                *w = *w - lr * g / (*a + eps).sqrt();
            }
        }
        Ok(())
    }
}
