//! Distances in feature and latent space.

use serde::{Deserialize, Serialize};

use crate::encoder::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Metric {
    #[default]
    #[serde(rename = "sqeuclid")]
    SquaredEuclidean,
    /// `1 - cosine similarity`
    #[serde(rename = "cosine")]
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sqeuclid" => Ok(Metric::SquaredEuclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric {other:?} (expected sqeuclid|cosine)")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::SquaredEuclidean => "sqeuclid",
            Metric::Cosine => "cosine",
        })
    }
}

fn norm_floor<T: Scalar>() -> T {
    T::from_f64(1e-12).unwrap()
}

impl Metric {
    pub fn distance<T: Scalar>(self, a: &[T], b: &[T]) -> T {
        match self {
            Metric::SquaredEuclidean => a
                .iter()
                .zip(b)
                .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y)),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
                for (&x, &y) in a.iter().zip(b) {
                    dot = dot + x * y;
                    na = na + x * x;
                    nb = nb + y * y;
                }
                let denom = na.sqrt().max(norm_floor()) * nb.sqrt().max(norm_floor());
                T::one() - dot / denom
            }
        }
    }

    /// Adds `scale * dD/da` to `grad_a` and `scale * dD/db` to `grad_b`.
    pub fn accumulate_gradient<T: Scalar>(
        self,
        a: &[T],
        b: &[T],
        scale: T,
        grad_a: &mut [T],
        grad_b: &mut [T],
    ) {
        match self {
            Metric::SquaredEuclidean => {
                let two = T::from_f64(2.0).unwrap();
                for i in 0..a.len() {
                    let g = two * (a[i] - b[i]) * scale;
                    grad_a[i] = grad_a[i] + g;
                    grad_b[i] = grad_b[i] - g;
                }
            }
            Metric::Cosine => {
                let (mut dot, mut na2, mut nb2) = (T::zero(), T::zero(), T::zero());
                for (&x, &y) in a.iter().zip(b) {
                    dot = dot + x * y;
                    na2 = na2 + x * x;
                    nb2 = nb2 + y * y;
                }
                let na = na2.sqrt().max(norm_floor());
                let nb = nb2.sqrt().max(norm_floor());
                let cos = dot / (na * nb);
                for i in 0..a.len() {
                    // D = 1 - cos, so dD/da = -(b / (|a||b|) - cos * a / |a|^2)
                    let da = -(b[i] / (na * nb) - cos * a[i] / (na * na));
                    let db = -(a[i] / (na * nb) - cos * b[i] / (nb * nb));
                    grad_a[i] = grad_a[i] + scale * da;
                    grad_b[i] = grad_b[i] + scale * db;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances() {
        let a = [1.0f64, 0.0];
        let b = [0.0f64, 2.0];
        assert_eq!(Metric::SquaredEuclidean.distance(&a, &b), 5.0);
        assert!((Metric::Cosine.distance(&a, &b) - 1.0).abs() < 1e-12);
        assert!(Metric::Cosine.distance(&a, &[3.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let a = [0.3f64, -1.2, 0.8];
        let b = [1.1f64, 0.4, -0.5];
        for metric in [Metric::SquaredEuclidean, Metric::Cosine] {
            let mut ga = [0.0; 3];
            let mut gb = [0.0; 3];
            metric.accumulate_gradient(&a, &b, 1.0, &mut ga, &mut gb);
            for i in 0..3 {
                let h = 1e-6;
                let mut ap = a;
                ap[i] += h;
                let mut am = a;
                am[i] -= h;
                let fd = (metric.distance(&ap, &b) - metric.distance(&am, &b)) / (2.0 * h);
                assert!((fd - ga[i]).abs() < 1e-7, "{metric} a[{i}]");
                let mut bp = b;
                bp[i] += h;
                let mut bm = b;
                bm[i] -= h;
                let fd = (metric.distance(&a, &bp) - metric.distance(&a, &bm)) / (2.0 * h);
                assert!((fd - gb[i]).abs() < 1e-7, "{metric} b[{i}]");
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for m in [Metric::SquaredEuclidean, Metric::Cosine] {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
        assert!("l1".parse::<Metric>().is_err());
    }
}
