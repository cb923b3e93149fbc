use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam over every parameter of one [`ParamStore`].
///
/// A parameter whose gradient is identically zero is left untouched (moments
/// included), the same as a parameter that received no gradient at all.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub hyper: AdamHyper,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, hyper: AdamHyper) -> Self {
        let zeros = || store.params().iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Adam { hyper, t: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::config("optimizer state does not match the parameter store"));
        }
        for p in store.params() {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {} is not finite", p.name)));
            }
        }
        self.t += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let c1 = T::lit(1.0 - beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(lr), T::lit(eps));
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if p.grad.data().iter().all(|g| *g == T::zero()) {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop_but_counts() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()).unwrap();
        let mut opt = Adam::new(&s, AdamHyper::default());
        opt.m[0] = Tensor::new(vec![2], vec![0.3, 0.3]).unwrap();
        opt.step(&mut s, 0.1).unwrap();
        assert_eq!(s.params()[0].value.data(), &[1.0, -2.0]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("layer.w", Tensor::zeros(vec![1])).unwrap();
        s.get_mut(id).grad = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
        let mut opt = Adam::new(&s, AdamHyper::default());
        let err = opt.step(&mut s, 0.1).unwrap_err().to_string();
        assert!(err.contains("layer.w"), "{err}");
    }
}
