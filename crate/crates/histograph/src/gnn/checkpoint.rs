//! Versioned binary model checkpoints: a magic tag, a JSON manifest of the
//! architecture and tensor shapes, then raw little-endian f32 tensor data in
//! a fixed order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GatLayer, GatModel, Mat, Mlp, Readout};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HGMODEL1";

#[derive(Debug, Serialize, Deserialize)]
struct LayerSpec {
    in_dim: usize,
    out_dim: usize,
    heads: usize,
    concat: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    input_dim: usize,
    readout: Readout,
    dropout: f64,
    layers: Vec<LayerSpec>,
    /// (name, element count) per tensor, in serialization order.
    tensors: Vec<(String, usize)>,
}

impl GatModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        // Tensor order mirrors for_each_param: per layer all W heads, then
        // all a_self heads, then all a_neigh heads; finally the MLP tensors.
        let mut flat: Vec<Vec<f32>> = Vec::new();
        self.for_each_param(|v| flat.push(v.iter().map(|&x| x as f32).collect()));
        let mut names = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            for h in 0..layer.heads {
                names.push(format!("layer{li}.head{h}.w"));
            }
            for h in 0..layer.heads {
                names.push(format!("layer{li}.head{h}.a_self"));
            }
            for h in 0..layer.heads {
                names.push(format!("layer{li}.head{h}.a_neigh"));
            }
        }
        names.push("mlp.w1".to_string());
        names.push("mlp.b1".to_string());
        names.push("mlp.w2".to_string());
        names.push("mlp.b2".to_string());
        let tensors: Vec<(String, usize)> = names
            .into_iter()
            .zip(&flat)
            .map(|(name, data)| (name, data.len()))
            .collect();

        let manifest = Manifest {
            version: 1,
            input_dim: self.input_dim,
            readout: self.readout,
            dropout: self.dropout,
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    heads: l.heads,
                    concat: l.concat,
                })
                .collect(),
            tensors,
        };
        let manifest_bytes =
            serde_json::to_vec(&manifest).map_err(|e| Error::format(path, e.to_string()))?;

        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
        w.write_all(&(manifest_bytes.len() as u32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.write_all(&manifest_bytes).map_err(|e| Error::io(path, e))?;
        for data in &flat {
            for &v in data {
                w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = std::io::BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(Error::format(path, "not a model checkpoint"));
        }
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
        let mut manifest_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
        r.read_exact(&mut manifest_bytes).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if manifest.version != 1 {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {}", manifest.version),
            ));
        }

        let layers: Vec<GatLayer> = manifest
            .layers
            .iter()
            .map(|s| GatLayer {
                in_dim: s.in_dim,
                out_dim: s.out_dim,
                heads: s.heads,
                concat: s.concat,
                w: (0..s.heads).map(|_| Mat::zeros(s.in_dim, s.out_dim)).collect(),
                a_self: vec![vec![0.0; s.out_dim]; s.heads],
                a_neigh: vec![vec![0.0; s.out_dim]; s.heads],
            })
            .collect();
        let last = manifest
            .layers
            .last()
            .ok_or_else(|| Error::format(path, "checkpoint has no layers"))?;
        let hidden = last.out_dim;
        let mut model = GatModel {
            layers,
            mlp: Mlp {
                w1: Mat::zeros(hidden, hidden),
                b1: vec![0.0; hidden],
                w2: Mat::zeros(hidden, super::CLASSES),
                b2: vec![0.0; super::CLASSES],
            },
            readout: manifest.readout,
            dropout: manifest.dropout,
            input_dim: manifest.input_dim,
        };

        let mut expected = Vec::new();
        model.for_each_param(|v| expected.push(v.len()));
        let declared: Vec<usize> = manifest.tensors.iter().map(|(_, n)| *n).collect();
        if expected != declared {
            return Err(Error::format(path, "tensor shapes do not match manifest"));
        }
        let mut io_err = None;
        model.for_each_param_mut(|v| {
            if io_err.is_some() {
                return;
            }
            for slot in v.iter_mut() {
                let mut buf = [0u8; 4];
                if let Err(e) = r.read_exact(&mut buf) {
                    io_err = Some(e);
                    return;
                }
                *slot = f32::from_le_bytes(buf) as f64;
            }
        });
        if let Some(e) = io_err {
            return Err(Error::io(path, e));
        }
        Ok(model)
    }
}
