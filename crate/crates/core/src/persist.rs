//! Model files.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, the tensors as little-endian `f64` in the header's declared
//! order, then a SHA-256 of everything before it. Files hold only released
//! model parameters; no training rows are written.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ColumnSchema;
use crate::error::{Error, Result};
use crate::mog::{DiagGaussian, MoG};
use crate::neural::{Activation, Layer, LatentNorm, Mlp, Networks};
use crate::pca::PcaModel;
use crate::pipeline::{GenerativeModel, HyperParams, NoiseScales};
use crate::privacy::{BudgetReport, PrivacySpec};

pub const MAGIC: &[u8; 8] = b"DPSYNTH\0";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

/// Top-level keys of the JSON header, in the order written.
pub const HEADER_FIELDS: &[&str] = &[
    "format_version",
    "schema",
    "privacy",
    "budget",
    "noise",
    "hyper",
    "master_seed",
    "d",
    "d_prime",
    "components",
    "encoder_layers",
    "decoder_layers",
    "tensors",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerSpec {
    inputs: usize,
    outputs: usize,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

impl TensorSpec {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    schema: ColumnSchema,
    privacy: PrivacySpec,
    budget: BudgetReport,
    noise: NoiseScales,
    hyper: HyperParams,
    master_seed: u64,
    d: usize,
    d_prime: usize,
    components: usize,
    encoder_layers: Vec<LayerSpec>,
    decoder_layers: Vec<LayerSpec>,
    tensors: Vec<TensorSpec>,
}

fn layer_specs(m: &Mlp) -> Vec<LayerSpec> {
    m.layers()
        .iter()
        .map(|l| LayerSpec {
            inputs: l.inputs,
            outputs: l.outputs,
            activation: l.activation,
        })
        .collect()
}

fn push_mlp(prefix: &str, m: &Mlp, specs: &mut Vec<TensorSpec>, data: &mut Vec<f64>) {
    for (i, l) in m.layers().iter().enumerate() {
        specs.push(TensorSpec {
            name: format!("{prefix}.{i}.weight"),
            shape: vec![l.outputs, l.inputs],
        });
        data.extend_from_slice(&l.weights);
        specs.push(TensorSpec {
            name: format!("{prefix}.{i}.bias"),
            shape: vec![l.outputs],
        });
        data.extend_from_slice(&l.bias);
    }
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &GenerativeModel) -> Result<Vec<u8>> {
    let pca = &model.pca;
    let prior = &model.prior;
    let (d, dp, k) = (pca.d, pca.d_prime, prior.k());
    let mut specs = Vec::new();
    let mut data = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, v: &[f64]| {
        specs.push(TensorSpec {
            name: name.to_string(),
            shape,
        });
        data.extend_from_slice(v);
    };
    push("pca.mean", vec![d], &pca.mean);
    push("pca.components", vec![dp, d], &pca.components);
    push("pca.eigenvalues", vec![dp], &pca.eigenvalues);
    push("prior.weights", vec![k], &prior.weights);
    let means: Vec<f64> = prior.components.iter().flat_map(|c| c.mean.clone()).collect();
    let vars: Vec<f64> = prior.components.iter().flat_map(|c| c.variance.clone()).collect();
    push("prior.means", vec![k, dp], &means);
    push("prior.variances", vec![k, dp], &vars);
    push_mlp("encoder_var", &model.networks.encoder_var, &mut specs, &mut data);
    let norm = &model.networks.latent_norm;
    specs.push(TensorSpec {
        name: "latent_norm.center".into(),
        shape: vec![dp],
    });
    data.extend_from_slice(&norm.center);
    specs.push(TensorSpec {
        name: "latent_norm.scale".into(),
        shape: vec![dp],
    });
    data.extend_from_slice(&norm.scale);
    push_mlp("decoder", &model.networks.decoder, &mut specs, &mut data);

    let header = Header {
        format_version: FORMAT_VERSION,
        schema: model.schema.clone(),
        privacy: model.privacy.clone(),
        budget: model.budget.clone(),
        noise: model.noise,
        hyper: model.hyper.clone(),
        master_seed: model.master_seed,
        d,
        d_prime: dp,
        components: k,
        encoder_layers: layer_specs(&model.networks.encoder_var),
        decoder_layers: layer_specs(&model.networks.decoder),
        tensors: specs,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + 8 * data.len() + DIGEST);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct TensorReader<'a> {
    specs: &'a [TensorSpec],
    values: &'a [f64],
    next: usize,
    at: usize,
}

impl TensorReader<'_> {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let spec = self
            .specs
            .get(self.next)
            .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))?;
        if spec.name != name || spec.shape != shape {
            return Err(Error::Corrupt(format!(
                "expected tensor {name} {shape:?}, found {} {:?}",
                spec.name, spec.shape
            )));
        }
        let v = self.values[self.at..self.at + spec.len()].to_vec();
        self.next += 1;
        self.at += spec.len();
        Ok(v)
    }

    fn mlp(&mut self, prefix: &str, specs: &[LayerSpec]) -> Result<Mlp> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            layers.push(Layer {
                inputs: s.inputs,
                outputs: s.outputs,
                weights: self.take(&format!("{prefix}.{i}.weight"), &[s.outputs, s.inputs])?,
                bias: self.take(&format!("{prefix}.{i}.bias"), &[s.outputs])?,
                activation: s.activation,
            });
        }
        Mlp::from_layers(layers)
    }
}

/// Parses a model from bytes, verifying version and checksum.
pub fn from_bytes(bytes: &[u8]) -> Result<GenerativeModel> {
    if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < PREAMBLE + DIGEST {
        return Err(Error::Corrupt("checksum missing".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREAMBLE
        .checked_add(hlen)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::Corrupt("header length out of range".into()))?;
    let header: Header = serde_json::from_slice(&body[PREAMBLE..header_end])?;
    let raw = &body[header_end..];
    let total: usize = header.tensors.iter().map(TensorSpec::len).sum();
    if raw.len() != 8 * total {
        return Err(Error::Corrupt(format!(
            "tensor section holds {} bytes, header declares {}",
            raw.len(),
            8 * total
        )));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut r = TensorReader {
        specs: &header.tensors,
        values: &values,
        next: 0,
        at: 0,
    };
    let (d, dp, k) = (header.d, header.d_prime, header.components);
    let pca = PcaModel {
        mean: r.take("pca.mean", &[d])?,
        components: r.take("pca.components", &[dp, d])?,
        eigenvalues: r.take("pca.eigenvalues", &[dp])?,
        d,
        d_prime: dp,
    };
    let weights = r.take("prior.weights", &[k])?;
    let means = r.take("prior.means", &[k, dp])?;
    let vars = r.take("prior.variances", &[k, dp])?;
    let comps = (0..k)
        .map(|j| DiagGaussian::new(means[j * dp..(j + 1) * dp].to_vec(), vars[j * dp..(j + 1) * dp].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let prior = MoG::new(weights, comps)?;

    let encoder_var = r.mlp("encoder_var", &header.encoder_layers)?;
    let latent_norm = LatentNorm {
        center: r.take("latent_norm.center", &[dp])?,
        scale: r.take("latent_norm.scale", &[dp])?,
    };
    let decoder = r.mlp("decoder", &header.decoder_layers)?;
    if header.schema.width() != d {
        return Err(Error::Corrupt("schema width disagrees with the model".into()));
    }
    Ok(GenerativeModel {
        schema: header.schema,
        pca,
        prior,
        networks: Networks {
            encoder_var,
            decoder,
            latent_norm,
            head: header.hyper.head,
            variance_mode: header.hyper.variance_mode,
        },
        privacy: header.privacy,
        budget: header.budget,
        noise: header.noise,
        hyper: header.hyper,
        master_seed: header.master_seed,
    })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save(model: &GenerativeModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Domain(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<GenerativeModel> {
    from_bytes(&fs::read(path)?)
}

/// Top-level header keys of a serialized model, for auditing.
pub fn header_keys(bytes: &[u8]) -> Result<Vec<String>> {
    if bytes.len() < PREAMBLE {
        return Err(Error::Corrupt("not a model file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = PREAMBLE
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupt("header length out of range".into()))?;
    let v: serde_json::Value = serde_json::from_slice(&bytes[PREAMBLE..end])?;
    Ok(v.as_object()
        .map(|o| o.keys().cloned().collect())
        .unwrap_or_default())
}
