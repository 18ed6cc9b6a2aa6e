use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigen-decomposition of a symmetric `n × n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the matching
/// unit eigenvectors.
pub fn symmetric_eigen<T: Scalar>(matrix: &[T], n: usize) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    if matrix.len() != n * n {
        return Err(Error::shape("symmetric_eigen", format!("{} entries for a {n}×{n} matrix", matrix.len())));
    }
    let mut a = matrix.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let frob = a.iter().fold(T::zero(), |s, &x| s + x * x);
    let tol = T::epsilon() * T::epsilon() * frob;
    for _ in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off = off + a[p * n + q] * a[p * n + q];
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (apq + apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    Ok((values, vectors))
}

/// Latent codes projected onto their leading principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCloud<T> {
    /// Projected coordinates, one row per input point.
    pub points: Vec<Vec<T>>,
    pub labels: Vec<String>,
    /// Unit principal directions, largest variance first.
    pub components: Vec<Vec<T>>,
    pub explained_variance_ratio: Vec<T>,
    pub mean: Vec<T>,
}

impl<T: Scalar> ProjectedCloud<T> {
    /// `x,y,…,label` with one column per component.
    pub fn to_csv(&self) -> String {
        let dims = self.components.len();
        let names = ["x", "y", "z"];
        let mut out: Vec<String> = (0..dims).map(|d| names.get(d).map_or(format!("pc{}", d + 1), |n| n.to_string())).collect();
        out.push("label".into());
        let mut text = out.join(",") + "\n";
        for (p, label) in self.points.iter().zip(&self.labels) {
            for v in p {
                write!(text, "{v},").expect("string write");
            }
            writeln!(text, "{label}").expect("string write");
        }
        text
    }
}

/// Centers the codes and projects them onto the top `dims` eigenvectors of
/// their covariance. Each component's largest-magnitude entry is positive.
pub fn pca_project<T: Scalar>(latents: &[(Vec<T>, String)], dims: usize) -> Result<ProjectedCloud<T>> {
    if latents.len() < 3 {
        return Err(Error::Degenerate(format!("PCA needs at least 3 points, got {}", latents.len())));
    }
    let k = latents[0].0.len();
    if k < 2 || dims == 0 || dims > k {
        return Err(Error::Config(format!("cannot project {k}-dimensional codes onto {dims} components")));
    }
    if let Some((v, _)) = latents.iter().find(|(v, _)| v.len() != k) {
        return Err(Error::shape("pca_project", format!("code of length {} among length {k}", v.len())));
    }
    let n = T::from_usize(latents.len()).expect("count fits");
    let mut mean = vec![T::zero(); k];
    for (v, _) in latents {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m = *m + x;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let centered: Vec<Vec<T>> = latents.iter().map(|(v, _)| v.iter().zip(&mean).map(|(&x, &m)| x - m).collect()).collect();
    let mut cov = vec![T::zero(); k * k];
    for c in &centered {
        for i in 0..k {
            for j in i..k {
                cov[i * k + j] = cov[i * k + j] + c[i] * c[j];
            }
        }
    }
    let denom = n - T::one();
    for i in 0..k {
        for j in i..k {
            cov[i * k + j] = cov[i * k + j] / denom;
            cov[j * k + i] = cov[i * k + j];
        }
    }
    let trace = (0..k).fold(T::zero(), |s, i| s + cov[i * k + i]);
    if !(trace > T::zero()) {
        return Err(Error::Degenerate("all latent codes are identical".into()));
    }
    let (values, vectors) = symmetric_eigen(&cov, k)?;
    let total = values.iter().fold(T::zero(), |s, &v| s + v.max(T::zero()));
    let mut components: Vec<Vec<T>> = vectors.into_iter().take(dims).collect();
    for c in &mut components {
        let mut lead = 0;
        for (i, x) in c.iter().enumerate() {
            if x.abs() > c[lead].abs() {
                lead = i;
            }
        }
        if c[lead] < T::zero() {
            c.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let points = centered
        .iter()
        .map(|c| components.iter().map(|u| u.iter().zip(c).fold(T::zero(), |s, (&a, &b)| s + a * b)).collect())
        .collect();
    Ok(ProjectedCloud {
        points,
        labels: latents.iter().map(|(_, l)| l.clone()).collect(),
        components,
        explained_variance_ratio: values.iter().take(dims).map(|&v| v.max(T::zero()) / total).collect(),
        mean,
    })
}
