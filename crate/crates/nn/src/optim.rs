use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::{ParamStore, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(shape_err(
            "adam_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[k] / c1;
        let vh = state.v[k] / c2;
        params[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<OptimState>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let states = store
            .iter()
            .map(|(_, p)| OptimState::new(p.value.len()))
            .collect();
        Self { config, states }
    }

    /// Updates every parameter that has a gradient; parameters with `None`
    /// (unused or frozen) keep their values and moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != store.len() || self.states.len() != store.len() {
            return Err(shape_err(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), store.len()),
            ));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            if let Some(g) = g {
                adam_step(
                    store.get_mut(id).data_mut(),
                    g,
                    &mut self.states[id.index()],
                    &self.config,
                )?;
            }
        }
        Ok(())
    }

    pub fn states(&self) -> &[OptimState] {
        &self.states
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.5, -2.0];
        let mut st = OptimState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_is_lr() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = vec![0.0];
        let mut st = OptimState::new(1);
        adam_step(&mut p, &[1.0], &mut st, &cfg).unwrap();
        // m̂ = v̂ = 1 → Δ = -lr / (1 + ε)
        assert_relative_eq!(p[0], -0.1 / (1.0 + 1e-8), epsilon = 1e-15);
        adam_step(&mut p, &[1.0], &mut st, &cfg).unwrap();
        assert_relative_eq!(p[0], -0.2, epsilon = 1e-8);
    }

    #[test]
    fn minimizes_a_quadratic_deterministically() {
        let run = || {
            let cfg = AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            };
            let mut p = vec![3.0, -4.0];
            let mut st = OptimState::new(2);
            let mut traj = Vec::new();
            for _ in 0..500 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
                adam_step(&mut p, &g, &mut st, &cfg).unwrap();
                traj.push(p.clone());
            }
            traj
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.last().unwrap().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn shape_mismatch() {
        let mut st = OptimState::new(1);
        assert!(adam_step(&mut [0.0, 1.0], &[1.0], &mut st, &AdamConfig::default()).is_err());
    }
}
