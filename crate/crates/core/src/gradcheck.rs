//! Central-difference verification of tape gradients.

use crate::graph::{Graph, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Per-parameter outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error for each parameter tensor, in input order.
    pub per_param: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().copied().fold(0.0, f64::max)
    }
}

/// Configurable checker. `corrupt` adds a constant to the first analytic
/// gradient entry, which must make the check fail.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    pub corrupt: Option<f64>,
}

impl GradCheck {
    pub fn new(eps: f64) -> Self {
        Self { eps, corrupt: None }
    }

    pub fn corrupted(mut self, offset: f64) -> Self {
        self.corrupt = Some(offset);
        self
    }

    pub fn run<F>(&self, f: F, params: &[Tensor]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(TensorError::Numeric(format!(
                "eps must be > 0, got {}",
                self.eps
            )));
        }
        let eval = |ps: &[Tensor]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone())).collect();
            let out = f(&mut g, &vars)?;
            Ok(g.value(out).data()[0])
        };

        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        let grads = g.backward(out)?;
        let mut analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
        if let Some(offset) = self.corrupt {
            if let Some(first) = analytic.iter_mut().find(|t| !t.is_empty()) {
                first.data_mut()[0] += offset;
            }
        }

        let mut work = params.to_vec();
        let mut per_param = Vec::with_capacity(params.len());
        for (pi, an) in analytic.iter().enumerate() {
            let mut worst: f64 = 0.0;
            for k in 0..params[pi].len() {
                let orig = params[pi].data()[k];
                work[pi].data_mut()[k] = orig + self.eps;
                let plus = eval(&work)?;
                work[pi].data_mut()[k] = orig - self.eps;
                let minus = eval(&work)?;
                work[pi].data_mut()[k] = orig;
                let numeric = (plus - minus) / (2.0 * self.eps);
                let a = an.data()[k];
                let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
                worst = worst.max(err);
            }
            per_param.push(worst);
        }
        Ok(GradCheckReport { per_param })
    }
}

/// Max relative error of the tape gradient of scalar `f` against central
/// differences, over every entry of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    GradCheck::new(eps).run(f, params).map(|r| r.max_error())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn sum_of_squares(g: &mut Graph, p: &[Var]) -> Result<Var> {
        let sq = g.mul(p[0], p[0])?;
        g.sum(sq)
    }

    #[test]
    fn quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[1, 10]);
        let err = grad_check(sum_of_squares, &[x], 1e-5).unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[1, 10]);
        let r = GradCheck::new(1e-5)
            .corrupted(0.1)
            .run(sum_of_squares, &[x])
            .unwrap();
        assert!(r.max_error() > 1e-2);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::ones(&[1, 2]);
        assert!(grad_check(sum_of_squares, &[x], 0.0).is_err());
    }

    #[test]
    fn non_finite_intermediate_is_reported() {
        let x = Tensor::row(vec![1e200, 1.0]);
        let err = grad_check(sum_of_squares, &[x], 1e-5).unwrap_err();
        assert!(
            matches!(err, TensorError::NonFinite { node: 1, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn every_op_passes_at_small_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        let err = grad_check(
            |g, p| {
                let c = g.matmul(p[0], p[1])?;
                g.sum(c)
            },
            &[a.clone(), b.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "matmul {err}");

        let u = random(&mut rng, &[1, 8]);
        let v = random(&mut rng, &[1, 8]);
        let w = random(&mut rng, &[1, 8]);
        // Weighted sums keep the softmax gradient from vanishing by symmetry.
        let err = grad_check(
            |g, p| {
                let m = g.mul(p[0], p[1])?;
                let t = g.tanh(m)?;
                let s = g.sigmoid(p[1])?;
                let sm = g.softmax(p[0])?;
                let x = g.add(t, s)?;
                let x = g.mul(x, sm)?;
                let x = g.mul(x, p[2])?;
                let x = g.scale(x, 1.7)?;
                g.sum(x)
            },
            &[u, v, w],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "pointwise {err}");

        let table = random(&mut rng, &[5, 3]);
        let proj = random(&mut rng, &[3, 6]);
        let err = grad_check(
            |g, p| {
                let r = g.select_row(p[0], 2)?;
                let l = g.matmul(r, p[1])?;
                g.cross_entropy(l, 4)
            },
            &[table, proj],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "embedding/ce {err}");
    }
}
