use super::DenseNet;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Worst relative error between the analytical gradient returned by `loss`
/// and central finite differences, over every parameter.
///
/// `loss` returns the scalar loss and its gradient in the flat parameter
/// layout of `net`. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(net: &DenseNet, loss: F) -> f64
where
    F: Fn(&DenseNet) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(net);
    assert_eq!(analytic.len(), net.num_params(), "gradient layout mismatch");
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..net.num_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + FD_STEP;
        let plus = loss(&probe).0;
        probe.params_mut()[i] = orig - FD_STEP;
        let minus = loss(&probe).0;
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn squared_error(net: &DenseNet, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let mut grads = net.zero_grads();
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let out = net.forward(x).unwrap();
            let diff: Vec<f64> = out.iter().zip(y).map(|(o, t)| o - t).collect();
            total += diff.iter().map(|d| d * d).sum::<f64>();
            let up: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
            let (g, _) = net.backward(x, &up).unwrap();
            for (acc, gi) in grads.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        (total, grads)
    }

    #[test]
    fn quadratic_loss_on_linear_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[3, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let xs = vec![vec![0.5, -1.0, 2.0], vec![0.1, 0.2, 0.3]];
        let ys = vec![vec![1.0, 0.0], vec![-0.5, 0.25]];
        let err = grad_check(&net, |n| squared_error(n, &xs, &ys));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn tanh_two_layer_squared_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(&[2, 8, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let xs = vec![vec![0.3, -0.7], vec![1.2, 0.4], vec![-0.9, -0.1]];
        let ys = vec![vec![0.2], vec![-1.0], vec![0.5]];
        let err = grad_check(&net, |n| squared_error(n, &xs, &ys));
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn all_zero_net_has_zero_error() {
        let net = DenseNet::zeros(&[2, 4, 1], Activation::Tanh, Activation::Identity).unwrap();
        let xs = vec![vec![0.3, -0.7]];
        let ys = vec![vec![0.0]];
        assert_eq!(grad_check(&net, |n| squared_error(n, &xs, &ys)), 0.0);
    }
}
