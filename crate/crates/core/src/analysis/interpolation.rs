use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stats::spearman;
use crate::error::{Error, Result};
use crate::model::{Decoding, LatentCode, MusicVae};
use crate::nn::Tensor;
use crate::notes::{Attribute, IndexedSequence};
use crate::scalar::Scalar;

/// Number of position-attribute index mismatches.
pub fn hamming_distance(a: &IndexedSequence, b: &IndexedSequence) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(Attribute::ALL
        .iter()
        .map(|&attr| a.stream(attr).iter().zip(b.stream(attr)).filter(|(x, y)| x != y).count())
        .sum())
}

/// `steps` evenly spaced codes on the segment from `a` to `b`, endpoints
/// included exactly.
pub fn interpolate<T: Scalar>(a: &LatentCode<T>, b: &LatentCode<T>, steps: usize) -> Result<Vec<LatentCode<T>>> {
    if steps < 2 {
        return Err(Error::Config(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    if a.dim() != b.dim() {
        return Err(Error::shape("interpolate", format!("dimensions {} and {}", a.dim(), b.dim())));
    }
    Ok(alphas(steps)
        .into_iter()
        .map(|alpha| {
            let t = T::from_f64_lossy(alpha);
            let s = T::one() - t;
            LatentCode::new(a.z.iter().zip(&b.z).map(|(&x, &y)| s * x + t * y).collect())
        })
        .collect())
}

fn alphas(steps: usize) -> Vec<f64> {
    (0..steps).map(|i| i as f64 / (steps - 1) as f64).collect()
}

/// Distances from each interpolation point's generation to the endpoint generations.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationCurve {
    pub alphas: Vec<f64>,
    pub distances_to_a: Vec<usize>,
    pub distances_to_b: Vec<usize>,
    /// Generation length; distances lie in `0..=3·length`.
    pub length: usize,
    pub generations: Vec<IndexedSequence>,
}

fn encode_pair<T: Scalar>(model: &MusicVae<T>, a: &IndexedSequence, b: &IndexedSequence) -> Result<(LatentCode<T>, LatentCode<T>)> {
    let mut enc = model.encode_many(&[a.clone(), b.clone()])?;
    let (mb, sb) = enc.pop().expect("two outputs");
    let (ma, sa) = enc.pop().expect("two outputs");
    Ok((LatentCode::from_mean(ma, Some(sa)), LatentCode::from_mean(mb, Some(sb))))
}

fn generate_paths<T: Scalar>(
    model: &MusicVae<T>,
    paths: &[Vec<LatentCode<T>>],
    length: usize,
) -> Result<Vec<Vec<IndexedSequence>>> {
    let steps = paths.first().map_or(0, Vec::len);
    let k = model.config().latent;
    let mut data = Vec::with_capacity(paths.len() * steps * k);
    for code in paths.iter().flatten() {
        data.extend_from_slice(&code.z);
    }
    let z = Tensor::from_vec(&[paths.len() * steps, k], data)?;
    // Greedy decoding never touches the random stream.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut gens = model.generate_batch(&z, length, Decoding::Greedy, &mut rng)?.into_iter();
    Ok(paths.iter().map(|_| gens.by_ref().take(steps).collect()).collect())
}

fn distances(gens: &[IndexedSequence]) -> Result<(Vec<usize>, Vec<usize>)> {
    let (first, last) = (&gens[0], &gens[gens.len() - 1]);
    let to_a = gens.iter().map(|g| hamming_distance(g, first)).collect::<Result<_>>()?;
    let to_b = gens.iter().map(|g| hamming_distance(g, last)).collect::<Result<_>>()?;
    Ok((to_a, to_b))
}

/// Encodes both sequences to their means, interpolates, decodes every point
/// greedily and measures distances to the endpoint decodes.
pub fn interpolation_curve<T: Scalar>(
    model: &MusicVae<T>,
    a: &IndexedSequence,
    b: &IndexedSequence,
    steps: usize,
    length: usize,
) -> Result<InterpolationCurve> {
    let (za, zb) = encode_pair(model, a, b)?;
    let path = interpolate(&za, &zb, steps)?;
    let generations = generate_paths(model, &[path], length)?.remove(0);
    let (distances_to_a, distances_to_b) = distances(&generations)?;
    Ok(InterpolationCurve { alphas: alphas(steps), distances_to_a, distances_to_b, length, generations })
}

/// Interpolation curves averaged over random pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub alphas: Vec<f64>,
    pub mean_to_a: Vec<f64>,
    pub mean_to_b: Vec<f64>,
    pub pairs: usize,
    pub length: usize,
}

impl AggregateCurve {
    /// Spearman correlation between α and the distance to A.
    pub fn rising_correlation(&self) -> Result<f64> {
        spearman(&self.alphas, &self.mean_to_a)
    }

    /// Largest gap between the A curve and the mirrored B curve, relative to
    /// the range of the A curve.
    pub fn asymmetry(&self) -> f64 {
        let n = self.alphas.len();
        let gap = (0..n).map(|i| (self.mean_to_a[i] - self.mean_to_b[n - 1 - i]).abs()).fold(0.0, f64::max);
        let max = self.mean_to_a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.mean_to_a.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > min {
            gap / (max - min)
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Mean absolute second difference of both curves.
    pub fn roughness(&self) -> f64 {
        let second = |c: &[f64]| c.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).collect::<Vec<_>>();
        let all: Vec<f64> = second(&self.mean_to_a).into_iter().chain(second(&self.mean_to_b)).collect();
        if all.is_empty() {
            0.0
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        }
    }

    /// `alpha,to_a,to_b,to_a_norm,to_b_norm`; normalized columns divide by `3·length`.
    pub fn to_csv(&self) -> String {
        let scale = 3.0 * self.length as f64;
        let mut out = String::from("alpha,to_a,to_b,to_a_norm,to_b_norm\n");
        for i in 0..self.alphas.len() {
            let (a, b) = (self.mean_to_a[i], self.mean_to_b[i]);
            writeln!(out, "{},{},{},{},{}", self.alphas[i], a, b, a / scale, b / scale).expect("string write");
        }
        out
    }
}

impl InterpolationCurve {
    pub fn to_csv(&self) -> String {
        AggregateCurve::from(self).to_csv()
    }
}

impl From<&InterpolationCurve> for AggregateCurve {
    fn from(c: &InterpolationCurve) -> Self {
        AggregateCurve {
            alphas: c.alphas.clone(),
            mean_to_a: c.distances_to_a.iter().map(|&d| d as f64).collect(),
            mean_to_b: c.distances_to_b.iter().map(|&d| d as f64).collect(),
            pairs: 1,
            length: c.length,
        }
    }
}

/// Averages [`interpolation_curve`] over `pairs` random pairs of distinct
/// sequences, spreading the work over `threads` workers.
pub fn aggregate_curve<T: Scalar>(
    model: &MusicVae<T>,
    sequences: &[IndexedSequence],
    pairs: usize,
    steps: usize,
    length: usize,
    seed: u64,
    threads: usize,
) -> Result<AggregateCurve> {
    if sequences.len() < 2 {
        return Err(Error::EmptyInput("at least two sequences for interpolation"));
    }
    if pairs == 0 {
        return Err(Error::EmptyInput("interpolation pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(usize, usize)> = (0..pairs)
        .map(|_| {
            let a = rng.random_range(0..sequences.len());
            let mut b = rng.random_range(0..sequences.len() - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        })
        .collect();

    let encoded = model.encode_many(sequences)?;
    let code = |i: usize| LatentCode::from_mean(encoded[i].0.clone(), Some(encoded[i].1.clone()));
    let paths = picks.iter().map(|&(a, b)| interpolate(&code(a), &code(b), steps)).collect::<Result<Vec<_>>>()?;

    let threads = threads.clamp(1, paths.len());
    let chunk = paths.len().div_ceil(threads);
    let generated: Vec<Vec<IndexedSequence>> = std::thread::scope(|scope| {
        let handles: Vec<_> = paths.chunks(chunk).map(|c| scope.spawn(move || generate_paths(model, c, length))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generation worker panicked"))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;

    let mut mean_to_a = vec![0.0; steps];
    let mut mean_to_b = vec![0.0; steps];
    for gens in &generated {
        let (to_a, to_b) = distances(gens)?;
        for i in 0..steps {
            mean_to_a[i] += to_a[i] as f64 / pairs as f64;
            mean_to_b[i] += to_b[i] as f64 / pairs as f64;
        }
    }
    Ok(AggregateCurve { alphas: alphas(steps), mean_to_a, mean_to_b, pairs, length })
}
