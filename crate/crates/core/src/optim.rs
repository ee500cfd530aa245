//! Adam with bias correction and a cosine learning-rate schedule.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::ParameterSet;
use crate::{Error, Result};

/// `lr_min + (lr0 - lr_min) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: u64, total: u64, lr0: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidConfig("cosine schedule needs total >= 1".into()));
    }
    if step > total {
        return Err(Error::InvalidConfig(format!("step {step} is past the schedule end {total}")));
    }
    let t = step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math::cos(math::PI * t)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig(format!(
                "adam betas must be in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("adam_eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the update counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros = |_: ()| -> BTreeMap<String, Vec<f64>> {
            params.iter().map(|(n, p)| (n.to_string(), vec![0.0; p.len()])).collect()
        };
        Self { step: 0, m: zeros(()), v: zeros(()) }
    }

    /// Moments must cover exactly the parameters, with matching sizes.
    pub fn ensure_matches(&self, params: &ParameterSet) -> Result<()> {
        for moments in [&self.m, &self.v] {
            if moments.len() != params.len() {
                return Err(Error::InvalidConfig(format!(
                    "optimizer tracks {} tensors, model has {}",
                    moments.len(),
                    params.len()
                )));
            }
            for (name, p) in params.iter() {
                let m = moments.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
                if m.len() != p.len() {
                    return Err(Error::ShapeMismatch { name: name.to_string(), expected: p.shape().to_vec(), found: vec![m.len()] });
                }
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient map.
pub fn global_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
    math::sqrt(grads.values().flat_map(|g| g.iter()).map(|g| g * g).sum())
}

/// Rescales `grads` so its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        grads.values_mut().flat_map(|g| g.iter_mut()).for_each(|g| *g *= s);
    }
    n
}

/// One Adam update. Parameters without an entry in `grads` are treated as
/// having zero gradient. New values and moments are rounded to each
/// parameter's storage precision.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    state.ensure_matches(params)?;
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - math::powi(cfg.beta1, t);
    let bc2 = 1.0 - math::powi(cfg.beta2, t);
    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    for name in names {
        let p = params.get(&name).expect("listed parameter");
        let dtype = p.dtype();
        let mut values = p.values().to_vec();
        let m = state.m.get_mut(&name).expect("checked above");
        let v = state.v.get_mut(&name).expect("checked above");
        let g = grads.get(&name);
        if let Some(g) = g {
            if g.len() != values.len() {
                return Err(Error::ShapeMismatch { name, expected: p.shape().to_vec(), found: vec![g.len()] });
            }
        }
        for i in 0..values.len() {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = dtype.round(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi);
            v[i] = dtype.round(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi);
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            values[i] -= lr * mhat / (math::sqrt(vhat) + cfg.eps);
        }
        params.set_values(&name, &values)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Dtype, Param};

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 2e-4, 1e-6).unwrap(), 2e-4);
        assert!((cosine_lr(100, 100, 2e-4, 1e-6).unwrap() - 1e-6).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 2e-4, 1e-6).unwrap() - (2e-4 + 1e-6) / 2.0).abs() < 1e-18);
        assert!(cosine_lr(0, 0, 2e-4, 1e-6).is_err());
        assert!(cosine_lr(101, 100, 2e-4, 1e-6).is_err());
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = ParameterSet::new();
        p.insert("w", Param::new(vec![2], Dtype::F64, vec![1.0, -1.0]).unwrap()).unwrap();
        let mut st = OptimizerState::new(&p);
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), vec![0.5, -3.0]);
        adam_step(&mut p, &g, &mut st, 0.1, &AdamConfig::default()).unwrap();
        let v = p.get("w").unwrap().values();
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 0.9).abs() < 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = ParameterSet::new();
        p.insert("x", Param::new(vec![1], Dtype::F64, vec![3.0]).unwrap()).unwrap();
        let mut st = OptimizerState::new(&p);
        for _ in 0..500 {
            let x = p.get("x").unwrap().values()[0];
            let mut g = BTreeMap::new();
            g.insert("x".to_string(), vec![2.0 * (x - 1.0)]);
            adam_step(&mut p, &g, &mut st, 0.05, &AdamConfig::default()).unwrap();
        }
        assert!((p.get("x").unwrap().values()[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn clipping() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), vec![3.0]);
        g.insert("b".to_string(), vec![4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }
}
