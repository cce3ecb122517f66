//! Initialize a factorized model from a dense one: each `d×d×C` kernel of a
//! source convolution layer is decomposed into rank-R Kruskal factors (in
//! double precision), biases and batch-norm state pass through unchanged.

use std::collections::BTreeMap;

use super::checkpoint::Checkpoint;
use super::config::{LayerSpec, ModelConfig};
use super::DataError;
use crate::tensor::{cp_als, CpAlsOptions, Tensor};

/// Per-layer decomposition quality.
#[derive(Debug, Clone)]
pub struct LayerFit {
    pub layer: usize,
    pub rank: usize,
    pub mean_fit: f64,
    pub min_fit: f64,
}

/// Convert a dense-convolution checkpoint into one matching `target`, where
/// some layers are declared `mlconv`. `rank_override` replaces every target
/// rank when given. Fails if the target has no factorized layers or the
/// source tensors do not line up with the target architecture.
pub fn convert_cnn_to_mlconv(
    source: &Checkpoint,
    target: &ModelConfig,
    rank_override: Option<usize>,
) -> Result<(Checkpoint, Vec<LayerFit>), DataError> {
    let placed = target.walk()?;
    if !placed
        .iter()
        .any(|p| matches!(p.spec, LayerSpec::MLconv { .. }))
    {
        return Err(DataError::Convert(
            "target config declares no mlconv layers; nothing to convert".into(),
        ));
    }

    let mut tensors: Vec<(String, Tensor<f32>)> = Vec::new();
    let mut fits = Vec::new();

    for p in &placed {
        let name = |field: &str| format!("layer{}.{field}", p.index);
        let src = |field: &str| -> Result<Tensor<f32>, DataError> {
            source
                .tensor(&name(field))
                .cloned()
                .ok_or_else(|| {
                    DataError::Convert(format!(
                        "source checkpoint lacks `{}`; topology mismatch",
                        name(field)
                    ))
                })
        };
        match &p.spec {
            LayerSpec::MLconv { d, n, rank, .. } => {
                let rank = rank_override.unwrap_or(*rank);
                if rank == 0 {
                    return Err(DataError::Convert("rank must be at least 1".into()));
                }
                let weight = src("weight")?;
                let want = [*d, *d, p.in_channels, *n];
                if weight.shape() != want {
                    return Err(DataError::Convert(format!(
                        "`{}` has shape {:?}, target layer expects {:?}",
                        name("weight"),
                        weight.shape(),
                        want
                    )));
                }
                let c = p.in_channels;
                let mut w1 = Tensor::zeros(&[*n, *d, rank]);
                let mut w2 = Tensor::zeros(&[*n, *d, rank]);
                let mut w3 = Tensor::zeros(&[*n, c, rank]);
                let mut fit_sum = 0.0;
                let mut fit_min = f64::INFINITY;
                for fi in 0..*n {
                    let kernel = Tensor::from_fn(&[*d, *d, c], |idx| {
                        weight
                            .at(&[idx[0], idx[1], idx[2], fi])
                            .expect("kernel slice")
                            as f64
                    });
                    let opts = CpAlsOptions {
                        seed: (p.index as u64) << 32 | fi as u64,
                        ..CpAlsOptions::default()
                    };
                    let (factors, report) = cp_als(&kernel, rank, &opts)
                        .map_err(|e| DataError::Convert(e.to_string()))?;
                    fit_sum += report.final_fit;
                    fit_min = fit_min.min(report.final_fit);
                    for (mode, dst) in [(0, &mut w1), (1, &mut w2), (2, &mut w3)] {
                        let f = factors.factor(mode);
                        let ik = f.shape()[0];
                        for i in 0..ik {
                            for rr in 0..rank {
                                dst.data_mut()[(fi * ik + i) * rank + rr] =
                                    f.data()[i * rank + rr] as f32;
                            }
                        }
                    }
                }
                tensors.push((name("w1"), w1));
                tensors.push((name("w2"), w2));
                tensors.push((name("w3"), w3));
                tensors.push((name("bias"), src("bias")?));
                fits.push(LayerFit {
                    layer: p.index,
                    rank,
                    mean_fit: fit_sum / *n as f64,
                    min_fit: fit_min,
                });
            }
            LayerSpec::Conv { .. } => {
                tensors.push((name("weight"), src("weight")?));
                tensors.push((name("bias"), src("bias")?));
            }
            LayerSpec::BatchNorm => {
                for field in ["gamma", "beta", "running_mean", "running_var"] {
                    tensors.push((name(field), src(field)?));
                }
            }
            LayerSpec::LRConv { .. } => {
                return Err(DataError::Convert(
                    "low-rank layers cannot be initialized from a dense model".into(),
                ));
            }
            _ => {}
        }
    }

    let mut meta = BTreeMap::new();
    meta.insert(
        "config_hash".into(),
        format!("{:016x}", target.content_hash()),
    );
    if let Some(src_hash) = source.meta.get("config_hash") {
        meta.insert("converted_from".into(), src_hash.clone());
    }
    if let Some(r) = rank_override {
        meta.insert("rank_override".into(), r.to_string());
    }
    Ok((Checkpoint { meta, tensors }, fits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::checkpoint::{checkpoint_from_network, network_from_checkpoint};
    use crate::data::config::parse_model_config;
    use crate::layers::Layer;
    use crate::oracles::max_rel_err;
    use crate::tensor::KruskalFactors;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn configs(scheme_line: &str, conv_line: &str) -> (ModelConfig, ModelConfig) {
        let body = |layer: &str| {
            format!("input 6 6 3\n{layer}\nbn\nlrelu 0.2\nconv 1 2\ngap\nsoftmax\nclasses 2\n")
        };
        (
            parse_model_config(&body(conv_line)).unwrap(),
            parse_model_config(&body(scheme_line)).unwrap(),
        )
    }

    #[test]
    fn rank1_source_converts_exactly_and_networks_agree() {
        let (cnn_cfg, ml_cfg) = configs("mlconv 3 4 rank=1 scheme=2", "conv 3 4");
        let mut cnn = cnn_cfg.build_seeded_network::<f32>(5).unwrap();
        // Force the dense kernels to be exactly rank one.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        if let Layer::Conv(bank) = &mut cnn.layers[0] {
            let mut w = Tensor::zeros(&[3, 3, 3, 4]);
            for fi in 0..4 {
                let f = KruskalFactors::new([
                    Tensor::from_fn(&[3, 1], |_| rng.gen_range(-1.0f64..1.0) as f32),
                    Tensor::from_fn(&[3, 1], |_| rng.gen_range(-1.0f64..1.0) as f32),
                    Tensor::from_fn(&[3, 1], |_| rng.gen_range(-1.0f64..1.0) as f32),
                ])
                .unwrap();
                let dense = f.reconstruct();
                for (idx, &v) in dense.data().iter().enumerate() {
                    w.data_mut()[idx * 4 + fi] = v;
                }
            }
            bank.weights = w;
        }
        let src = checkpoint_from_network(&cnn, Default::default());
        let (converted, fits) = convert_cnn_to_mlconv(&src, &ml_cfg, None).unwrap();
        assert_eq!(fits.len(), 1);
        assert!(fits[0].min_fit >= 1.0 - 1e-6, "fit {}", fits[0].min_fit);

        let ml = network_from_checkpoint(&converted, &ml_cfg).unwrap();
        let x = Tensor::from_fn(&[2, 6, 6, 3], |_| rng.gen_range(-1.0f64..1.0) as f32);
        let ya = cnn.forward_eval(&x);
        let yb = ml.forward_eval(&x);
        assert!(max_rel_err(&ya, &yb) <= 1e-4, "{}", max_rel_err(&ya, &yb));
    }

    #[test]
    fn full_rank_conversion_is_near_exact_and_bn_passes_through() {
        // d·min(d,C) = 9 for 3×3×3 kernels.
        let (cnn_cfg, ml_cfg) = configs("mlconv 3 4 rank=9 scheme=2", "conv 3 4");
        let cnn = cnn_cfg.build_seeded_network::<f32>(7).unwrap();
        let src = checkpoint_from_network(&cnn, Default::default());
        let (converted, fits) = convert_cnn_to_mlconv(&src, &ml_cfg, None).unwrap();
        assert!(fits[0].mean_fit >= 1.0 - 1e-4, "fit {}", fits[0].mean_fit);
        // Batch-norm tensors are copied verbatim.
        for field in ["gamma", "beta", "running_mean", "running_var"] {
            let name = format!("layer1.{field}");
            assert_eq!(converted.tensor(&name), src.tensor(&name));
        }
    }

    #[test]
    fn dense_only_target_is_rejected() {
        let (cnn_cfg, _) = configs("mlconv 3 4 rank=1", "conv 3 4");
        let cnn = cnn_cfg.build_seeded_network::<f32>(8).unwrap();
        let src = checkpoint_from_network(&cnn, Default::default());
        assert!(matches!(
            convert_cnn_to_mlconv(&src, &cnn_cfg, None),
            Err(DataError::Convert(_))
        ));
    }

    #[test]
    fn rank_override_wins_over_config_ranks() {
        let (cnn_cfg, ml_cfg) = configs("mlconv 3 4 rank=1 scheme=1", "conv 3 4");
        let cnn = cnn_cfg.build_seeded_network::<f32>(9).unwrap();
        let src = checkpoint_from_network(&cnn, Default::default());
        let (converted, fits) = convert_cnn_to_mlconv(&src, &ml_cfg, Some(3)).unwrap();
        assert_eq!(fits[0].rank, 3);
        assert_eq!(converted.tensor("layer0.w1").unwrap().shape(), &[4, 3, 3]);
    }
}
