use super::ParamStore;
use crate::error::{Error, Result};

/// Plain SGD: `p <- p - lr * grad` on unfrozen parameters, then clears all grads.
pub fn sgd_step(store: &mut ParamStore, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Domain(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    for (name, t) in store.iter() {
        if t.requires_grad() && t.grad().is_none() {
            return Err(Error::Contract(format!("parameter {name} has no gradient")));
        }
    }
    for (_, t) in store.iter_mut() {
        if t.requires_grad() {
            if let Some(g) = &t.grad {
                for (p, gv) in t.data.iter_mut().zip(g) {
                    *p -= lr * gv;
                }
            }
        }
        t.clear_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn scalar_update() {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(1.0), false).unwrap();
        s.get_mut("p").unwrap().accumulate_grad(&[2.0], 1.0).unwrap();
        sgd_step(&mut s, 0.5).unwrap();
        assert_eq!(s.get("p").unwrap().data(), &[0.0]);
        assert!(s.get("p").unwrap().grad().is_none());
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![0.1, -0.3]), false).unwrap();
        let before = s.clone();
        s.get_mut("a").unwrap().accumulate_grad(&[5.0, 7.0], 1.0).unwrap();
        sgd_step(&mut s, 0.0).unwrap();
        assert!(s.bit_eq(&before));
    }

    #[test]
    fn missing_grad_names_param() {
        let mut s = ParamStore::new();
        s.insert("qacnn.fc2.weight", Tensor::scalar(1.0), false).unwrap();
        let err = sgd_step(&mut s, 0.1).unwrap_err();
        assert!(err.to_string().contains("qacnn.fc2.weight"));
    }

    #[test]
    fn frozen_untouched() {
        let mut s = ParamStore::new();
        s.insert("qacnn.embed", Tensor::vector(vec![0.25, 0.5]), true).unwrap();
        s.insert("w", Tensor::scalar(0.0), false).unwrap();
        let before = s.get("qacnn.embed").unwrap().clone();
        for i in 0..100 {
            s.get_mut("w").unwrap().accumulate_grad(&[i as f64], 1.0).unwrap();
            sgd_step(&mut s, 0.1).unwrap();
        }
        assert!(s.get("qacnn.embed").unwrap().bit_eq(&before));
    }
}
