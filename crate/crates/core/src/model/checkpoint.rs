//! JSON checkpoints with 17-significant-digit weight literals.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{ModelParams, SnapshotTag};
use crate::error::{HclError, Result};
use crate::numcore::{Layer, LayerSpec, ParamTensors, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub tag: SnapshotTag,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format_version: u32,
    layers: &'a [LayerSpec],
    weights: BTreeMap<String, Box<RawValue>>,
    meta: CheckpointMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    format_version: u32,
    layers: Vec<LayerSpec>,
    weights: BTreeMap<String, Vec<f64>>,
    meta: CheckpointMeta,
}

fn number_array(values: &[f64]) -> Box<RawValue> {
    let body: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    RawValue::from_string(format!("[{}]", body.join(","))).expect("formatted floats are valid JSON")
}

pub fn checkpoint_to_string(params: &ModelParams, meta: CheckpointMeta) -> Result<String> {
    if !params.is_finite() {
        return Err(HclError::Numeric("model weights".into()));
    }
    let layers = params.layer_specs();
    let weights = params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| (name, number_array(t.data())))
        .collect();
    let doc = CheckpointOut {
        format_version: FORMAT_VERSION,
        layers: &layers,
        weights,
        meta,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| HclError::format("document", e.to_string()))
}

pub fn checkpoint_from_str(text: &str) -> Result<(ModelParams, CheckpointMeta)> {
    let probe: serde_json::Value =
        serde_json::from_str(text).map_err(|e| HclError::format("document", e.to_string()))?;
    match probe.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(HclError::format(
                "format_version",
                format!("unsupported version {v}, expected {FORMAT_VERSION}"),
            ))
        }
        None => return Err(HclError::format("format_version", "missing")),
    }
    let doc: CheckpointIn =
        serde_json::from_value(probe).map_err(|e| HclError::format("document", e.to_string()))?;
    debug_assert_eq!(doc.format_version, FORMAT_VERSION);

    let mut weights = doc.weights;
    let n = doc.layers.len();
    if n < 2 {
        return Err(HclError::format("layers", "need at least two layers"));
    }
    let mut layers = Vec::with_capacity(n);
    for (i, spec) in doc.layers.into_iter().enumerate() {
        let spec = LayerSpec::new(spec.in_dim, spec.out_dim, spec.activation)
            .map_err(|e| HclError::format(format!("layers[{i}]"), e.to_string()))?;
        let prefix = if i + 1 == n {
            "classifier".to_string()
        } else {
            format!("encoder.{i}")
        };
        let mut take = |suffix: &str, shape: Vec<usize>| -> Result<Tensor> {
            let name = format!("{prefix}.{suffix}");
            let data = weights
                .remove(&name)
                .ok_or_else(|| HclError::format(&name, "missing"))?;
            Tensor::new(shape, data).map_err(|e| HclError::format(&name, e.to_string()))
        };
        let w = take("weight", vec![spec.in_dim, spec.out_dim])?;
        let b = take("bias", vec![spec.out_dim])?;
        layers.push(Layer::from_parts(spec, w, b)?);
    }
    if let Some(extra) = weights.keys().next() {
        return Err(HclError::format(extra.clone(), "unexpected weight entry"));
    }
    let params = ModelParams::from_layers(layers, doc.meta.seed)
        .map_err(|e| HclError::format("layers", e.to_string()))?;
    if !params.is_finite() {
        return Err(HclError::format("weights", "non-finite value"));
    }
    Ok((params, doc.meta))
}

pub fn save_checkpoint(params: &ModelParams, meta: CheckpointMeta, path: &Path) -> Result<()> {
    let text = checkpoint_to_string(params, meta)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    checkpoint_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelSpec};

    fn model() -> ModelParams {
        init_model(
            &ModelSpec {
                input_dim: 2,
                hidden_dims: vec![16, 16],
                embed_dim: 8,
                num_classes: 2,
            },
            42,
        )
        .unwrap()
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            seed: 42,
            epoch: 3,
            tag: SnapshotTag::Lagged,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = model();
        m.classifier.bias.data_mut()[0] = 0.1 + 0.2;
        m.encoder[0].bias.data_mut()[1] = -0.0;
        m.encoder[1].bias.data_mut()[2] = 1e-300;
        let text = checkpoint_to_string(&m, meta()).unwrap();
        let (back, meta_back) = checkpoint_from_str(&text).unwrap();
        assert_eq!(back.weight_hash(), m.weight_hash());
        assert_eq!(meta_back, meta());
        assert_eq!(back.seed, 42);
    }

    #[test]
    fn document_layout() {
        let text = checkpoint_to_string(&model(), meta()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["layers"].as_array().unwrap().len(), 4);
        assert_eq!(v["layers"][0]["activation"], "relu");
        assert_eq!(v["meta"]["tag"], "lagged");
        assert_eq!(v["weights"]["classifier.bias"].as_array().unwrap().len(), 2);
        // 17 significant digits per literal
        assert!(text.contains("0.0000000000000000e0"));
    }

    #[test]
    fn truncated_document_is_rejected() {
        let text = checkpoint_to_string(&model(), meta()).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            checkpoint_from_str(cut),
            Err(HclError::Format { ref field, .. }) if field == "document"
        ));
    }

    #[test]
    fn version_mismatch_names_field() {
        let text = checkpoint_to_string(&model(), meta()).unwrap().replacen(
            "\"format_version\": 1",
            "\"format_version\": 2",
            1,
        );
        assert!(matches!(
            checkpoint_from_str(&text),
            Err(HclError::Format { ref field, .. }) if field == "format_version"
        ));
    }

    #[test]
    fn shape_mismatch_names_weight() {
        let m = model();
        let text = checkpoint_to_string(&m, meta()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["weights"]["classifier.bias"] = serde_json::json!([0.0, 0.0, 0.0]);
        let err = checkpoint_from_str(&v.to_string()).unwrap_err();
        assert!(
            matches!(err, HclError::Format { ref field, .. } if field == "classifier.bias"),
            "{err}"
        );
    }
}
