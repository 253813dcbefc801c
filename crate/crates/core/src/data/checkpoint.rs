//! Model checkpoints in the shared binary container format.

use crate::data::container::{find, read_container, write_container, NamedTensor};
use crate::error::{Error, Result};
use crate::model::{Affine, InitVariant, ModelDims, PrismModel};
use crate::numerics::Matrix;
use std::path::Path;

fn affine_tensors(prefix: &str, layer: &Affine, out: &mut Vec<NamedTensor>) {
    out.push(NamedTensor::new(
        &format!("{prefix}.w"),
        vec![layer.out_dim() as u32, layer.in_dim() as u32],
        layer.weight.as_slice().to_vec(),
    ));
    out.push(NamedTensor::new(
        &format!("{prefix}.b"),
        vec![layer.out_dim() as u32],
        layer.bias.clone(),
    ));
}

fn affine_from(tensors: &[NamedTensor], prefix: &str) -> Result<Affine> {
    let w = find(tensors, &format!("{prefix}.w"))?;
    let b = find(tensors, &format!("{prefix}.b"))?;
    if w.dims.len() != 2 {
        return Err(Error::Format(format!("{prefix}.w must be rank 2")));
    }
    let (out_dim, in_dim) = (w.dims[0] as usize, w.dims[1] as usize);
    if b.data.len() != out_dim {
        return Err(Error::Format(format!("{prefix}.b length mismatch")));
    }
    Ok(Affine {
        weight: Matrix::from_vec(out_dim, in_dim, w.data.clone())?,
        bias: b.data.clone(),
    })
}

/// Serializes the full model state.
pub fn save_checkpoint(path: &Path, model: &PrismModel) -> Result<()> {
    write_container(path, &checkpoint_tensors(model))
}

/// Tensor list for a checkpoint; exposed for byte-level tests.
pub fn checkpoint_tensors(model: &PrismModel) -> Vec<NamedTensor> {
    let dims = model.dims();
    let mut tensors = Vec::new();
    tensors.push(NamedTensor::new(
        "meta",
        vec![7],
        vec![
            dims.input as f64,
            dims.penultimate as f64,
            dims.pseudo_labels as f64,
            dims.classes as f64,
            dims.hidden.len() as f64,
            model.variant().code() as f64,
            if model.d_trainable { 1.0 } else { 0.0 },
        ],
    ));
    tensors.push(NamedTensor::new(
        "hidden",
        vec![dims.hidden.len() as u32],
        dims.hidden.iter().map(|&h| h as f64).collect(),
    ));
    for (i, layer) in model.encoder.iter().enumerate() {
        affine_tensors(&format!("enc.{i}"), layer, &mut tensors);
    }
    affine_tensors("head", &model.head, &mut tensors);
    for (m, theta) in model.confusion_logits.iter().enumerate() {
        tensors.push(NamedTensor::new(
            &format!("conf.{m}"),
            vec![dims.classes as u32, dims.classes as u32],
            theta.as_slice().to_vec(),
        ));
    }
    tensors.push(NamedTensor::new(
        "mixture",
        vec![dims.pseudo_labels as u32],
        model.mixture_logits.clone(),
    ));
    if let Some(d_head) = &model.d_head {
        affine_tensors("dhead", d_head, &mut tensors);
    }
    tensors
}

/// Restores a model from a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<PrismModel> {
    let tensors = read_container(path)?;
    let meta = find(&tensors, "meta")?;
    if meta.data.len() != 7 {
        return Err(Error::Format("meta tensor must have 7 entries".to_string()));
    }
    let input = meta.data[0] as usize;
    let penultimate = meta.data[1] as usize;
    let pseudo_labels = meta.data[2] as usize;
    let classes = meta.data[3] as usize;
    let n_hidden = meta.data[4] as usize;
    let variant = InitVariant::from_code(meta.data[5] as u8)
        .ok_or_else(|| Error::Format("unknown init variant code".to_string()))?;
    let d_trainable = meta.data[6] != 0.0;

    let hidden_tensor = find(&tensors, "hidden")?;
    if hidden_tensor.data.len() != n_hidden {
        return Err(Error::Format("hidden tensor length mismatch".to_string()));
    }
    let hidden: Vec<usize> = hidden_tensor.data.iter().map(|&h| h as usize).collect();

    let mut encoder = Vec::with_capacity(n_hidden + 1);
    for i in 0..=n_hidden {
        encoder.push(affine_from(&tensors, &format!("enc.{i}"))?);
    }
    let head = affine_from(&tensors, "head")?;
    let mut confusion_logits = Vec::with_capacity(pseudo_labels);
    for m in 0..pseudo_labels {
        let t = find(&tensors, &format!("conf.{m}"))?;
        confusion_logits.push(Matrix::from_vec(classes, classes, t.data.clone())?);
    }
    let mixture_logits = find(&tensors, "mixture")?.data.clone();
    if mixture_logits.len() != pseudo_labels {
        return Err(Error::Format("mixture tensor length mismatch".to_string()));
    }
    let d_head = if variant == InitVariant::LinearD {
        Some(affine_from(&tensors, "dhead")?)
    } else {
        None
    };

    let dims = ModelDims {
        input,
        hidden,
        penultimate,
        pseudo_labels,
        classes,
    };
    Ok(PrismModel::from_parts(
        dims,
        encoder,
        head,
        confusion_logits,
        mixture_logits,
        d_head,
        d_trainable,
        variant,
    ))
}
