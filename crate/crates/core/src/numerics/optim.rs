//! Named parameter store and Adam optimizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::array::Array;

/// Named parameter set. BTreeMap keeps iteration (and therefore update and
/// serialization order) deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    entries: BTreeMap<String, Array>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: &str, value: Array) {
        self.entries.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {:?}", name)))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {:?}", name)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.entries.values().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|a| a.all_finite())
    }

    /// SHA-256 over the canonical JSON serialization; used for teacher
    /// immutability checks and checkpoint identity.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("params serialize");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{:02x}", b)).collect()
    }
}

/// Adam state for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<String, Array>,
    v: BTreeMap<String, Array>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update over all parameters that received a gradient.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Array>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, grad) in grads {
            let p = params.get_mut(name)?;
            if !p.same_shape(grad) {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(grad.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(grad.shape()));
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let g = grad.data()[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g * g;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (x - 3)^2
        let mut params = Params::new();
        params.insert("x", Array::scalar(0.0));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let x = params.get("x").unwrap().item();
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), Array::scalar(2.0 * (x - 3.0)));
            opt.step(&mut params, &grads).unwrap();
        }
        assert!((params.get("x").unwrap().item() - 3.0).abs() < 1e-3);
    }

    #[test]
    fn content_hash_tracks_values() {
        let mut a = Params::new();
        a.insert("w", Array::vector(vec![1.0, 2.0]));
        let h1 = a.content_hash();
        assert_eq!(h1, a.content_hash());
        a.get_mut("w").unwrap().data_mut()[0] = 1.5;
        assert_ne!(h1, a.content_hash());
    }
}
