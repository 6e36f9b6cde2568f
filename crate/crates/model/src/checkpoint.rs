//! Weights and optimizer state in the IPDW container.
//!
//! A weight file holds every parameter under its model name plus
//! `meta/config` (the model configuration as JSON text) and
//! `meta/output_layout`, which documents the head's channel order.

use std::path::Path;

use ipdnet_autodiff::{Adam, ParamStore, Scalar, Tensor};
use ipdnet_core::container::{write_atomic, NamedTensor, WeightContainer};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Variant};
use crate::error::{ModelError, Result};
use crate::net::IpdNet;

fn layout_text(config: &ModelConfig) -> &'static str {
    match config.variant {
        Variant::Fixed => "fixed: channel o = ((pair * tracks) + track) * 2 + (0 real | 1 imag)",
        Variant::Variable => "variable: per-pair channel o = track * 2 + (0 real | 1 imag)",
    }
}

fn store_tensors<T: Scalar>(store: &ParamStore<T>, prefix: &str, values: impl Fn(usize) -> Tensor<T>) -> Result<Vec<NamedTensor>> {
    store
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let t = values(i);
            Ok(NamedTensor::new(
                format!("{prefix}{}", p.name),
                t.shape().to_vec(),
                t.data().iter().map(|v| v.as_f64() as f32).collect(),
            )?)
        })
        .collect()
}

pub fn to_container<T: Scalar>(net: &IpdNet<T>) -> Result<WeightContainer> {
    to_container_with(net, &[])
}

/// Like [`to_container`] with extra `meta/<key>` text entries.
pub fn to_container_with<T: Scalar>(net: &IpdNet<T>, meta: &[(String, String)]) -> Result<WeightContainer> {
    let mut c = WeightContainer::new();
    c.push(NamedTensor::text("meta/config", &net.config.to_json()))?;
    c.push(NamedTensor::text("meta/output_layout", layout_text(&net.config)))?;
    for (k, v) in meta {
        c.push(NamedTensor::text(format!("meta/{k}"), v))?;
    }
    for t in store_tensors(&net.params, "", |i| net.params.iter().nth(i).unwrap().value.clone())? {
        c.push(t)?;
    }
    Ok(c)
}

pub fn from_container<T: Scalar>(c: &WeightContainer) -> Result<IpdNet<T>> {
    let config: ModelConfig = serde_json::from_str(&c.require("meta/config")?.as_text()?)?;
    let mut net = IpdNet::<T>::new(config, 0)?;
    let weights = c.tensors.iter().filter(|t| !t.name.starts_with("meta/")).count();
    if weights != net.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "{weights} weight tensors in file, model has {} parameters",
            net.params.len()
        )));
    }
    let names: Vec<String> = net.params.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let t = c.require(&name)?;
        let data: Vec<f64> = t.data.iter().map(|&v| v as f64).collect();
        net.params.set_value(&name, Tensor::from_f64(&t.dims, &data)?)?;
    }
    Ok(net)
}

pub fn save_weights<T: Scalar>(net: &IpdNet<T>, path: &Path) -> Result<()> {
    save_weights_with(net, path, &[])
}

pub fn save_weights_with<T: Scalar>(net: &IpdNet<T>, path: &Path, meta: &[(String, String)]) -> Result<()> {
    Ok(to_container_with(net, meta)?.save(path)?)
}

/// Text of a `meta/<key>` entry.
pub fn meta_text(c: &WeightContainer, key: &str) -> Result<Option<String>> {
    match c.get(&format!("meta/{key}")) {
        Some(t) => Ok(Some(t.as_text()?)),
        None => Ok(None),
    }
}

pub fn load_weights<T: Scalar>(path: &Path) -> Result<IpdNet<T>> {
    from_container(&WeightContainer::load(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub lr: f64,
    pub step: u64,
    pub best_epoch: usize,
    pub best_valid: f64,
    pub seed: u64,
}

/// Optimizer moments as `adam/m/<name>` and `adam/v/<name>`; state as JSON.
pub fn save_training_state<T: Scalar>(dir: &Path, store: &ParamStore<T>, adam: &Adam<T>, state: &TrainState) -> Result<()> {
    let mut c = WeightContainer::new();
    for t in store_tensors(store, "adam/m/", |i| adam.first_moments()[i].clone())? {
        c.push(t)?;
    }
    for t in store_tensors(store, "adam/v/", |i| adam.second_moments()[i].clone())? {
        c.push(t)?;
    }
    c.save(&dir.join("optimizer.ipdw"))?;
    write_atomic(&dir.join("train_state.json"), serde_json::to_string_pretty(state)?.as_bytes())?;
    Ok(())
}

pub fn load_training_state<T: Scalar>(dir: &Path, store: &ParamStore<T>) -> Result<(Adam<T>, TrainState)> {
    let state: TrainState = serde_json::from_slice(&std::fs::read(dir.join("train_state.json"))?)?;
    let c = WeightContainer::load(&dir.join("optimizer.ipdw"))?;
    let read = |prefix: &str| -> Result<Vec<Tensor<T>>> {
        store
            .iter()
            .map(|p| {
                let t = c.require(&format!("{prefix}{}", p.name))?;
                let data: Vec<f64> = t.data.iter().map(|&v| v as f64).collect();
                Ok(Tensor::from_f64(&t.dims, &data)?)
            })
            .collect()
    };
    let adam = Adam::from_state(store, state.lr, state.step, read("adam/m/")?, read("adam/v/")?)?;
    Ok((adam, state))
}
