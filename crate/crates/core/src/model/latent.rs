use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A point in latent space, with the posterior it was drawn from when known.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T> {
    pub z: Vec<T>,
    pub mu: Option<Vec<T>>,
    pub sigma: Option<Vec<T>>,
}

impl<T: Scalar> LatentCode<T> {
    pub fn new(z: Vec<T>) -> Self {
        LatentCode { z, mu: None, sigma: None }
    }

    /// The posterior mean used as a deterministic code.
    pub fn from_mean(mu: Vec<T>, sigma: Option<Vec<T>>) -> Self {
        LatentCode { z: mu.clone(), mu: Some(mu), sigma }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// Reparameterized draw `z = μ + σ ⊙ ε`.
pub fn sample_latent<T: Scalar>(mu: &[T], sigma: &[T], eps: &[T]) -> Result<LatentCode<T>> {
    if mu.len() != sigma.len() || mu.len() != eps.len() {
        return Err(Error::shape("sample_latent", format!("μ {}, σ {}, ε {}", mu.len(), sigma.len(), eps.len())));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > T::zero())) {
        return Err(Error::Degenerate(format!("σ component {s} is not positive")));
    }
    let z = mu.iter().zip(sigma).zip(eps).map(|((&m, &s), &e)| m + s * e).collect();
    Ok(LatentCode { z, mu: Some(mu.to_vec()), sigma: Some(sigma.to_vec()) })
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − 2 ln σ)`.
pub fn kl_to_standard_normal<T: Scalar>(mu: &[T], sigma: &[T]) -> T {
    let half = T::from_f64_lossy(0.5);
    let two = T::from_f64_lossy(2.0);
    mu.iter()
        .zip(sigma)
        .fold(T::zero(), |acc, (&m, &s)| acc + m * m + s * s - T::one() - two * s.ln())
        * half
}
