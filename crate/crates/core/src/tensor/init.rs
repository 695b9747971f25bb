use super::Tensor;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Glorot-uniform tensor: i.i.d. `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(fan_in: usize, fan_out: usize, shape: Vec<usize>, seed: u64) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Argument("xavier fans must be positive".into()));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_for_three_three() {
        let t = xavier_init(3, 3, vec![1000], 1).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        assert!(t.data().iter().any(|v| v.abs() > 0.99));
    }

    #[test]
    fn variance_matches_uniform() {
        // Var(U(-a, a)) = a^2 / 3 = (6 / 600) / 3 = 2 / 600.
        let t = xavier_init(300, 300, vec![100_000], 42).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want = 2.0 / 600.0;
        assert!((var - want).abs() / want < 0.1, "{var} vs {want}");
    }

    #[test]
    fn seeded() {
        let a = xavier_init(4, 5, vec![4, 5], 9).unwrap();
        assert_eq!(a, xavier_init(4, 5, vec![4, 5], 9).unwrap());
        assert_ne!(a, xavier_init(4, 5, vec![4, 5], 10).unwrap());
    }
}
