use super::{ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Adam {
        let zeros = || {
            store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Applies one update. Leaves everything untouched if any gradient is non-finite.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.tensor(id).shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: store.tensor(id).shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.tensor_mut(id).data_mut();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (j, &gj) in grads[k].data().iter().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Graph;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::row_vector(vec![1.0, -2.0, 0.5]));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store();
        let before = s.clone();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.update(&mut s, &[Tensor::zeros(1, 3)]).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_magnitude() {
        let mut s = store();
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &s);
        let g = [0.5, -3.0, 1e-9];
        adam.update(&mut s, &[Tensor::row_vector(g.to_vec())])
            .unwrap();
        let start = [1.0, -2.0, 0.5];
        for j in 0..3 {
            let expected = start[j] - 0.1 * g[j] / (g[j].abs() + 1e-8);
            assert!((s.tensors()[0].data()[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = store();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let err = adam.update(&mut s, &[Tensor::row_vector(vec![0.0, f64::NAN, 0.0])]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut s = store();
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.01,
                ..Default::default()
            },
            &s,
        );
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let mut g = Graph::with_params(&s);
            let p = g.param(crate::neural::ParamId(0));
            let sq = g.mul(p, p).unwrap();
            let l = g.sum_all(sq);
            let loss = g.value(l).item();
            assert!(loss < last);
            last = loss;
            let grads = g.param_gradients(&g.backward_scalar(l).unwrap());
            drop(g);
            adam.update(&mut s, &grads).unwrap();
        }
    }
}
