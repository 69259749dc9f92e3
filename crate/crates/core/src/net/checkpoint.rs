//! JSON checkpoints. Parameters are stored as named tensors with their
//! shapes; floats round-trip exactly, so a reloaded model reproduces every
//! prediction bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::baseline::BaselineModel;
use super::encoder::{CoefficientEncoder, ConditionScaler, Modality};
use super::layers::{Activation, Params};
use super::train::TrainConfig;
use super::NetError;
use crate::basis::BasisConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Checkpoint {
    Encoder {
        modality: Modality,
        activation: Activation,
        scaler: ConditionScaler,
        target_scale: f64,
        basis: BasisConfig,
        train: TrainConfig,
        layers: Vec<TensorRecord>,
    },
    Baseline {
        hidden: usize,
        value_scale: f64,
        train: TrainConfig,
        layers: Vec<TensorRecord>,
    },
}

fn records_of(model: &dyn Params) -> Vec<TensorRecord> {
    let mut out = Vec::new();
    model.visit(&mut |name, shape, values| {
        out.push(TensorRecord {
            name: name.to_string(),
            shape: shape.to_vec(),
            values: values.to_vec(),
        })
    });
    out
}

fn restore(model: &mut dyn Params, layers: &[TensorRecord]) -> Result<(), NetError> {
    let mut expected = Vec::new();
    model.visit(&mut |name, shape, values| expected.push((name.to_string(), shape.to_vec(), values.len())));
    let by_name: BTreeMap<&str, &TensorRecord> = layers.iter().map(|l| (l.name.as_str(), l)).collect();
    if by_name.len() != layers.len() {
        return Err(NetError::Checkpoint("duplicate tensor names".into()));
    }
    for (name, shape, len) in &expected {
        let rec = by_name
            .get(name.as_str())
            .ok_or_else(|| NetError::Checkpoint(format!("missing tensor {name}")))?;
        if &rec.shape != shape || rec.values.len() != *len {
            return Err(NetError::Checkpoint(format!(
                "tensor {name}: expected shape {shape:?}, found {:?} with {} values",
                rec.shape,
                rec.values.len()
            )));
        }
        if rec.values.iter().any(|v| !v.is_finite()) {
            return Err(NetError::Checkpoint(format!("tensor {name} holds non-finite values")));
        }
    }
    if layers.len() != expected.len() {
        let known: Vec<&str> = expected.iter().map(|e| e.0.as_str()).collect();
        let extra: Vec<&str> = layers
            .iter()
            .map(|l| l.name.as_str())
            .filter(|n| !known.contains(n))
            .collect();
        return Err(NetError::Checkpoint(format!("unexpected tensors {extra:?}")));
    }
    model.visit_mut(&mut |name, dst| dst.copy_from_slice(&by_name[name].values));
    Ok(())
}

impl Checkpoint {
    pub fn from_encoder(model: &CoefficientEncoder, basis: &BasisConfig, train: &TrainConfig) -> Self {
        Checkpoint::Encoder {
            modality: model.modality,
            activation: model.activation,
            scaler: model.scaler,
            target_scale: model.target_scale,
            basis: *basis,
            train: train.clone(),
            layers: records_of(model),
        }
    }

    pub fn from_baseline(model: &BaselineModel, train: &TrainConfig) -> Self {
        Checkpoint::Baseline {
            hidden: model.hidden(),
            value_scale: model.value_scale,
            train: train.clone(),
            layers: records_of(model),
        }
    }

    pub fn encoder(&self) -> Result<CoefficientEncoder, NetError> {
        match self {
            Checkpoint::Encoder {
                modality,
                activation,
                scaler,
                target_scale,
                layers,
                ..
            } => {
                let mut m = CoefficientEncoder::zeros(*modality);
                m.activation = *activation;
                m.scaler = *scaler;
                m.target_scale = *target_scale;
                restore(&mut m, layers)?;
                Ok(m)
            }
            Checkpoint::Baseline { .. } => Err(NetError::Checkpoint(
                "checkpoint holds a baseline, not an encoder".into(),
            )),
        }
    }

    pub fn baseline(&self) -> Result<BaselineModel, NetError> {
        match self {
            Checkpoint::Baseline {
                hidden,
                value_scale,
                layers,
                ..
            } => {
                if *hidden == 0 {
                    return Err(NetError::Checkpoint("hidden width must be positive".into()));
                }
                let mut m = BaselineModel::zeros(*hidden);
                m.value_scale = *value_scale;
                restore(&mut m, layers)?;
                Ok(m)
            }
            Checkpoint::Encoder { .. } => Err(NetError::Checkpoint(
                "checkpoint holds an encoder, not a baseline".into(),
            )),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        serde_json::from_str(text).map_err(|e| NetError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_json()).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ProcessCondition, Raster};
    use crate::net::layers::Dense;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_encoder(modality: Modality, seed: u64) -> CoefficientEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = CoefficientEncoder::init(modality, &mut rng);
        m.head = Dense::glorot(&mut rng, m.head.inputs, 9);
        m.scaler = ConditionScaler {
            temperature_min: 300.0,
            temperature_max: 400.0,
            velocity_min: 500.0,
            velocity_max: 1500.0,
        };
        m.target_scale = 37.123456789;
        m
    }

    #[test]
    fn encoder_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for modality in [Modality::TabularOnly, Modality::MultiModal] {
            let m = random_encoder(modality, 5);
            let ck = Checkpoint::from_encoder(&m, &BasisConfig::default(), &TrainConfig::default());
            let back = Checkpoint::from_json(&ck.to_json()).unwrap().encoder().unwrap();
            assert_eq!(back, m);
            let img = Raster::new(32, 32, (0..1024).map(|_| rng.random()).collect());
            let image = (modality == Modality::MultiModal).then_some(&img);
            let c = ProcessCondition::fahrenheit_rpm(350.0, 1000.0);
            let a = m.predict_coefficients(&c, image).unwrap();
            let b = back.predict_coefficients(&c, image).unwrap();
            for (x, y) in a.0.iter().zip(b.0) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn baseline_round_trip_through_file() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = BaselineModel::init(8, &mut rng);
        m.readout = Dense::glorot(&mut rng, 8, 1);
        m.value_scale = 12.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("baseline.json");
        Checkpoint::from_baseline(&m, &TrainConfig::default())
            .save(&path)
            .unwrap();
        let back = Checkpoint::load(&path).unwrap().baseline().unwrap();
        let w = [0.0, 1.0, 2.5, 3.0, 4.0];
        assert_eq!(m.rollout(&w, 30).unwrap(), back.rollout(&w, 30).unwrap());
    }

    #[test]
    fn mismatches_are_reported() {
        let m = random_encoder(Modality::TabularOnly, 1);
        let ck = Checkpoint::from_encoder(&m, &BasisConfig::default(), &TrainConfig::default());
        assert!(matches!(ck.baseline(), Err(NetError::Checkpoint(_))));

        let Checkpoint::Encoder { mut layers, .. } = ck.clone() else {
            unreachable!()
        };
        layers.pop();
        let truncated = match ck.clone() {
            Checkpoint::Encoder {
                modality,
                activation,
                scaler,
                target_scale,
                basis,
                train,
                ..
            } => Checkpoint::Encoder {
                modality,
                activation,
                scaler,
                target_scale,
                basis,
                train,
                layers,
            },
            _ => unreachable!(),
        };
        let err = truncated.encoder().unwrap_err().to_string();
        assert!(err.contains("missing tensor"), "{err}");

        let json = ck
            .to_json()
            .replacen("\"modality\":\"tabular_only\"", "\"modality\":\"multi_modal\"", 1);
        assert!(Checkpoint::from_json(&json).unwrap().encoder().is_err());
        assert!(Checkpoint::from_json("{\"kind\":\"other\"}").is_err());
    }
}
