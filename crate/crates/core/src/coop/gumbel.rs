use ndarray::{Array2, Axis};
use rand::distributions::Open01;
use rand::Rng as _;

use crate::nn::softmax;
use crate::rng::Rng;

/// `A + I`: lets every pedestrian select itself.
pub fn with_self_loops(a: &Array2<f64>) -> Array2<f64> {
    a + &Array2::<f64>::eye(a.nrows())
}

/// Row-wise Gumbel-softmax over logits `log(A + ε)` at `temperature`. With
/// `rng = None` no noise is added and the plain tempered softmax is returned.
pub fn gumbel_select(a: &Array2<f64>, temperature: f64, eps: f64, mut rng: Option<&mut Rng>) -> Array2<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    let mut out = Array2::zeros(a.raw_dim());
    for (row, mut dst) in a.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let logits: Vec<f64> = row
            .iter()
            .map(|&v| {
                let noise = match rng.as_deref_mut() {
                    Some(r) => {
                        let u: f64 = r.sample(Open01);
                        -(-u.ln()).ln()
                    }
                    None => 0.0,
                };
                ((v + eps).ln() + noise) / temperature
            })
            .collect();
        for (d, p) in dst.iter_mut().zip(softmax(&logits)) {
            *d = p;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use ndarray::array;

    #[test]
    fn low_temperature_is_one_hot() {
        // log-gap of ln 10 between the top two entries.
        let a = array![[1.0, 0.1, 0.1]];
        let e = gumbel_select(&a, 0.01, 1e-6, None);
        assert!(e[[0, 0]] >= 1.0 - 1e-6);
    }

    #[test]
    fn uniform_row_stays_uniform() {
        let a = array![[0.3, 0.3, 0.3, 0.3]];
        let e = gumbel_select(&a, 0.7, 1e-6, None);
        for &v in e.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one_with_noise() {
        let a = with_self_loops(&array![[0.0, 0.5, 0.2], [0.5, 0.0, 0.9], [0.2, 0.9, 0.0]]);
        let mut rng = stream(3, Stream::Gumbel);
        let e = gumbel_select(&a, 1.0, 1e-6, Some(&mut rng));
        for row in e.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_frequencies_follow_softmax() {
        // Gumbel-max: the winning entry of the noisy row is distributed as
        // softmax(log(A + ε)), whatever the temperature.
        let a = array![[1.0, 0.5, 0.2, 0.05]];
        let mut rng = stream(9, Stream::Gumbel);
        let n = 20_000;
        let mut counts = [0.0; 4];
        for _ in 0..n {
            let e = gumbel_select(&a, 0.5, 1e-6, Some(&mut rng));
            let k = (0..4).max_by(|&x, &y| e[[0, x]].total_cmp(&e[[0, y]])).unwrap();
            counts[k] += 1.0 / n as f64;
        }
        let expect = softmax(&a.row(0).iter().map(|v| (v + 1e-6_f64).ln()).collect::<Vec<_>>());
        for (c, e) in counts.iter().zip(&expect) {
            assert!((c - e).abs() < 0.02, "{counts:?} vs {expect:?}");
        }
    }
}
