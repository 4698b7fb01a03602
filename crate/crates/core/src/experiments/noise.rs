use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};

use super::NoiseKind;
use crate::error::{Error, Result};

/// Node count of a graph whose off-diagonal cells number `len = n (n - 1)`.
fn graph_nodes(len: usize) -> Option<usize> {
    let n = ((1.0 + (1.0 + 4.0 * len as f64).sqrt()) / 2.0).round() as usize;
    (n * (n - 1) == len).then_some(n)
}

/// `Y = theta* + W`. The graph kind draws the upper triangle, mirrors it and
/// returns the adjacency cells in row-major off-diagonal order.
pub fn generate_noise<R: Rng + ?Sized>(kind: NoiseKind, theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    match kind {
        NoiseKind::Gaussian => Ok(theta.iter().map(|t| { let w: f64 = StandardNormal.sample(rng); t + w }).collect()),
        NoiseKind::Rademacher => Ok(theta.iter().map(|t| if rng.random::<bool>() { t + 1.0 } else { t - 1.0 }).collect()),
        NoiseKind::BernoulliGraph => {
            let n = graph_nodes(theta.len())
                .ok_or_else(|| Error::domain(format!("{} cells is not n(n-1) for any n", theta.len())))?;
            if let Some(bad) = theta.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(Error::domain(format!("edge probability {bad} outside [0, 1]")));
            }
            let cell = |i: usize, j: usize| i * (n - 1) + if j < i { j } else { j - 1 };
            let mut a = vec![0.0; theta.len()];
            for i in 0..n {
                for j in (i + 1)..n {
                    let p = theta[cell(i, j)];
                    let edge = Bernoulli::new(p).expect("probability checked").sample(rng);
                    let v = if edge { 1.0 } else { 0.0 };
                    a[cell(i, j)] = v;
                    a[cell(j, i)] = v;
                }
            }
            Ok(a)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_probability_graph_is_empty() {
        let y = generate_noise(NoiseKind::BernoulliGraph, &vec![0.0; 20], &mut stream(1)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(generate_noise(NoiseKind::BernoulliGraph, &vec![0.0; 7], &mut stream(1)).is_err());
        assert!(generate_noise(NoiseKind::BernoulliGraph, &vec![1.5; 6], &mut stream(1)).is_err());
    }

    #[test]
    fn graph_is_symmetric() {
        let n = 6;
        let y = generate_noise(NoiseKind::BernoulliGraph, &vec![0.5; n * (n - 1)], &mut stream(2)).unwrap();
        let cell = |i: usize, j: usize| i * (n - 1) + if j < i { j } else { j - 1 };
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert_eq!(y[cell(i, j)], y[cell(j, i)]);
                }
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let t = vec![0.2; 12];
        for kind in [NoiseKind::Gaussian, NoiseKind::Rademacher, NoiseKind::BernoulliGraph] {
            let a = generate_noise(kind, &t, &mut stream(3)).unwrap();
            let b = generate_noise(kind, &t, &mut stream(3)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rademacher_moments() {
        let n = 1_000_000;
        let y = generate_noise(NoiseKind::Rademacher, &vec![0.0; n], &mut stream(4)).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.004);
        assert!((var - 1.0).abs() < 0.01);
    }
}
