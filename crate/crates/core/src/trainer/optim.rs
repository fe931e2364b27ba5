use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Gradients, ModelBundle, ParamId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Adam with bias correction and a constant learning rate.
///
/// Only parameter groups present in the gradients are touched; a group's
/// moments and step count advance only when it receives a gradient, so a
/// head that did not take part in a step stays bitwise unchanged.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    config: AdamConfig,
    state: BTreeMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(lr: f64, config: AdamConfig) -> Self {
        Self {
            lr,
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut ModelBundle, grads: &Gradients) {
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        for (id, g) in &grads.groups {
            let params = model.param_mut(*id).expect("gradient for a parameter the model owns");
            debug_assert_eq!(params.len(), g.len());
            let st = self.state.entry(*id).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            for i in 0..g.len() {
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                params[i] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Granularity;
    use crate::model::{EncoderSpec, HeadSet};

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        // with bias correction the first update is lr * g / (|g| + eps)
        let mut model = ModelBundle::new(&EncoderSpec::toy(4), HeadSet::SingleTask, 0.0, 1, None).unwrap();
        let before = model.param(ParamId::HeadBias(Granularity::Document)).unwrap().to_vec();
        let mut groups = BTreeMap::new();
        groups.insert(ParamId::HeadBias(Granularity::Document), vec![0.5, -2.0, 0.0]);
        let grads = Gradients {
            task: Granularity::Document,
            groups,
        };
        let mut adam = Adam::new(0.01, AdamConfig::default());
        adam.step(&mut model, &grads);
        let after = model.param(ParamId::HeadBias(Granularity::Document)).unwrap();
        assert!((before[0] - after[0] - 0.01).abs() < 1e-9);
        assert!((after[1] - before[1] - 0.01).abs() < 1e-9);
        assert_eq!(after[2], before[2]);
        assert_eq!(
            model.param(ParamId::HeadWeight(Granularity::Document)),
            ModelBundle::new(&EncoderSpec::toy(4), HeadSet::SingleTask, 0.0, 1, None)
                .unwrap()
                .param(ParamId::HeadWeight(Granularity::Document))
        );
    }
}
