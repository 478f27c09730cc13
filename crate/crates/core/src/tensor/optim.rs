use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Graph, Result, Tensor, TensorError};

/// Adam moment accumulators for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Named parameters and their optimizer state, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Tensor>,
    state: BTreeMap<String, AdamState>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        self.state.insert(name.clone(), AdamState::new(t.len()));
        self.params.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn state(&self, name: &str) -> Option<&AdamState> {
        self.state.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    /// Adds every named-leaf gradient of `graph` into the matching buffer.
    pub fn accumulate_grads(&mut self, graph: &Graph) -> Result<()> {
        for (name, g) in graph.param_grads() {
            let t = self
                .params
                .get_mut(name)
                .ok_or_else(|| TensorError::Usage(format!("graph references unknown parameter {name}")))?;
            let buf = t
                .grad_mut()
                .ok_or_else(|| TensorError::Usage(format!("gradient buffer for {name} not initialised; call zero_grad")))?;
            buf.iter_mut().zip(g).for_each(|(b, v)| *b += v);
        }
        Ok(())
    }

    /// Copies values from `other`, leaving optimizer state and grads alone.
    pub fn load_values_from(&mut self, other: &ParameterSet) -> Result<()> {
        for (name, t) in &mut self.params {
            let src = other
                .get(name)
                .ok_or_else(|| TensorError::Usage(format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(TensorError::Shape(format!("{name}: {:?} vs {:?}", src.shape(), t.shape())));
            }
            t.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }

    /// Copy with fresh optimizer state and no gradients.
    pub fn fresh_copy(&self) -> ParameterSet {
        let mut out = ParameterSet::new();
        for (name, t) in &self.params {
            out.insert(name.clone(), Tensor::from_parts(t.shape().to_vec(), t.values().to_vec()));
        }
        out
    }

    pub(crate) fn set_state(&mut self, name: &str, st: AdamState) -> Result<()> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| TensorError::Usage(format!("unknown parameter {name}")))?;
        if st.m.len() != t.len() || st.v.len() != t.len() {
            return Err(TensorError::Shape(format!("optimizer state for {name} has wrong length")));
        }
        self.state.insert(name.to_string(), st);
        Ok(())
    }

    /// True when every value in both sets is bitwise identical.
    pub fn bitwise_eq(&self, other: &ParameterSet) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().all(|(k, t)| {
                other.params.get(k).is_some_and(|o| {
                    o.shape() == t.shape()
                        && o.values().iter().zip(t.values()).all(|(a, b)| a.to_bits() == b.to_bits())
                })
            })
    }
}

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One AdamW step over every parameter. Gradients are read, not reset.
pub fn adamw_step(params: &mut ParameterSet, opt: &AdamW) -> Result<()> {
    if let Some(name) = params.params.iter().find(|(_, t)| t.grad().is_none()).map(|(k, _)| k.clone()) {
        return Err(TensorError::Usage(format!("adamw_step: no gradient for {name}")));
    }
    for (name, t) in params.params.iter_mut() {
        let st = params
            .state
            .get_mut(name)
            .expect("optimizer state exists for every parameter");
        st.step += 1;
        let bc1 = 1.0 - opt.beta1.powi(st.step as i32);
        let bc2 = 1.0 - opt.beta2.powi(st.step as i32);
        let decay = 1.0 - opt.lr * opt.weight_decay;
        let grad = t.grad().expect("checked above").to_vec();
        for (i, (p, g)) in t.values_mut().iter_mut().zip(grad).enumerate() {
            st.m[i] = opt.beta1 * st.m[i] + (1.0 - opt.beta1) * g;
            st.v[i] = opt.beta2 * st.v[i] + (1.0 - opt.beta2) * g * g;
            let m_hat = st.m[i] / bc1;
            let v_hat = st.v[i] / bc2;
            *p = *p * decay - opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
        if t.values().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("adamw_step"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(vals: Vec<f64>) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(vals).unwrap());
        p
    }

    #[test]
    fn missing_grad_is_usage_error() {
        let mut p = set(vec![1.0]);
        assert!(matches!(adamw_step(&mut p, &AdamW::default()), Err(TensorError::Usage(_))));
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut p = set(vec![1.5, -2.0]);
        p.zero_grad();
        adamw_step(&mut p, &AdamW::default()).unwrap();
        assert_eq!(p.get("w").unwrap().values(), &[1.5, -2.0]);
        assert_eq!(p.state("w").unwrap().step, 1);
    }

    #[test]
    fn zero_grad_with_decay_scales() {
        let mut p = set(vec![1.5, -2.0]);
        p.zero_grad();
        let opt = AdamW {
            lr: 0.1,
            weight_decay: 0.01,
            ..AdamW::default()
        };
        adamw_step(&mut p, &opt).unwrap();
        let f = 1.0 - 0.1 * 0.01;
        assert_eq!(p.get("w").unwrap().values(), &[1.5 * f, -2.0 * f]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = set(vec![0.0]);
        p.zero_grad();
        p.get_mut("w").unwrap().grad_mut().unwrap()[0] = 1.0;
        let opt = AdamW::with_lr(0.01);
        adamw_step(&mut p, &opt).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let moved = -p.get("w").unwrap().values()[0];
        assert!((moved - 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        // grads are left for the caller
        assert_eq!(p.get("w").unwrap().grad().unwrap(), &[1.0]);
    }
}
