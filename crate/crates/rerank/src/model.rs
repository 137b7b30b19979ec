//! Portable model container: named flat-weight records with dimension
//! metadata, hyperparameter config, vocabulary, stopwords, and idf table.
//!
//! Training is out of scope; [`init_model`] produces deterministic synthetic
//! weights from a seed so any implementation can reproduce the same bundle.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::IdfTable;

/// Version gate for the on-disk format.
pub const FORMAT_VERSION: u64 = 1;

/// Reserved vocabulary entry for out-of-vocabulary tokens, always index 0.
pub const UNK_TOKEN: &str = "<unk>";

/// One named parameter: flat row-major weights plus the dimension metadata
/// needed to restore the original shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub weights: Vec<f64>,
}

impl ParamRecord {
    /// product(dims) == len(weights): the reshape contract.
    pub fn check_reshape(&self) -> Result<()> {
        let expected: usize = self.dims.iter().product();
        if self.dims.is_empty()
            || self.dims.iter().any(|&d| d == 0)
            || expected != self.weights.len()
        {
            return Err(Error::Reshape {
                name: self.name.clone(),
                dims: self.dims.clone(),
                expected,
                found: self.weights.len(),
            });
        }
        Ok(())
    }
}

/// Model hyperparameters and the frozen text-side state (vocabulary,
/// stopwords, idf snapshot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub filter_width: usize,
    pub num_filters: usize,
    pub hidden_size: usize,
    pub vocab: Vec<String>,
    pub stopwords: Vec<String>,
    pub idf: IdfTable,
}

pub const DEFAULT_EMBED_DIM: usize = 50;
pub const DEFAULT_FILTER_WIDTH: usize = 5;
pub const DEFAULT_NUM_FILTERS: usize = 100;
/// Default hidden size, matching the join width 2k+4 for the default k.
pub const DEFAULT_HIDDEN_SIZE: usize = 204;

impl ModelConfig {
    /// Config with the default hyperparameters (d=50, w=5, k=100, hdim=204).
    /// `<unk>` is prepended to the vocabulary if absent.
    pub fn with_defaults(vocab: Vec<String>, stopwords: Vec<String>, idf: IdfTable) -> Self {
        let mut full = Vec::with_capacity(vocab.len() + 1);
        if vocab.first().map(String::as_str) != Some(UNK_TOKEN) {
            full.push(UNK_TOKEN.to_string());
        }
        full.extend(vocab);
        Self {
            embed_dim: DEFAULT_EMBED_DIM,
            filter_width: DEFAULT_FILTER_WIDTH,
            num_filters: DEFAULT_NUM_FILTERS,
            hidden_size: DEFAULT_HIDDEN_SIZE,
            vocab: full,
            stopwords,
            idf,
        }
    }

    /// Width of the join layer: one slot per filter and arm plus the four
    /// overlap features.
    pub fn join_len(&self) -> usize {
        2 * self.num_filters + 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 1
            || self.filter_width < 1
            || self.num_filters < 1
            || self.hidden_size < 1
        {
            return Err(Error::Validation(
                "embed_dim, filter_width, num_filters and hidden_size must all be >= 1".into(),
            ));
        }
        if self.vocab.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Validation(format!(
                "vocab must start with the reserved {UNK_TOKEN:?} entry"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for term in &self.vocab {
            if !seen.insert(term) {
                return Err(Error::Validation(format!(
                    "vocab entry {term:?} appears more than once"
                )));
            }
        }
        self.idf.validate()?;
        Ok(())
    }
}

/// Name, shape, and init scaling of one canonical parameter record.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub dims: Vec<usize>,
    scale: InitScale,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InitScale {
    Embedding,
    Glorot { fan_in: usize, fan_out: usize },
    Bias,
}

impl InitScale {
    fn value(self) -> f64 {
        match self {
            InitScale::Embedding => 0.25,
            InitScale::Glorot { fan_in, fan_out } => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            InitScale::Bias => 0.0,
        }
    }
}

/// The nine canonical parameter records, in serialization order.
///
/// Filters use fan_in = d·w and fan_out = k; matrices [out, in] use
/// fan_in = in and fan_out = out.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let (d, w, k, hdim) = (
        config.embed_dim,
        config.filter_width,
        config.num_filters,
        config.hidden_size,
    );
    let join = config.join_len();
    let conv = InitScale::Glorot {
        fan_in: d * w,
        fan_out: k,
    };
    vec![
        ParamSpec {
            name: "embeddings",
            dims: vec![config.vocab.len(), d],
            scale: InitScale::Embedding,
        },
        ParamSpec {
            name: "conv_q.filters",
            dims: vec![k, d, w],
            scale: conv,
        },
        ParamSpec {
            name: "conv_q.bias",
            dims: vec![k],
            scale: InitScale::Bias,
        },
        ParamSpec {
            name: "conv_a.filters",
            dims: vec![k, d, w],
            scale: conv,
        },
        ParamSpec {
            name: "conv_a.bias",
            dims: vec![k],
            scale: InitScale::Bias,
        },
        ParamSpec {
            name: "fc1.weight",
            dims: vec![hdim, join],
            scale: InitScale::Glorot {
                fan_in: join,
                fan_out: hdim,
            },
        },
        ParamSpec {
            name: "fc1.bias",
            dims: vec![hdim],
            scale: InitScale::Bias,
        },
        ParamSpec {
            name: "fc2.weight",
            dims: vec![2, hdim],
            scale: InitScale::Glorot {
                fan_in: hdim,
                fan_out: 2,
            },
        },
        ParamSpec {
            name: "fc2.bias",
            dims: vec![2],
            scale: InitScale::Bias,
        },
    ]
}

/// Complete model: config plus exactly the nine canonical parameter records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: Vec<ParamRecord>,
}

impl ModelBundle {
    pub fn param(&self, name: &str) -> Option<&ParamRecord> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Check config invariants, record completeness, the reshape contract,
    /// and that every record carries exactly its canonical dims with finite
    /// weights.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = param_specs(&self.config);
        for spec in &specs {
            let record = self
                .param(spec.name)
                .ok_or_else(|| Error::MissingParameter(spec.name.to_string()))?;
            record.check_reshape()?;
            if record.dims != spec.dims {
                return Err(Error::Validation(format!(
                    "parameter {} has dims {:?}, expected {:?}",
                    spec.name, record.dims, spec.dims
                )));
            }
            if record.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Validation(format!(
                    "parameter {} contains a non-finite weight",
                    spec.name
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for record in &self.params {
            if !seen.insert(record.name.as_str()) {
                return Err(Error::Validation(format!(
                    "parameter {:?} appears more than once",
                    record.name
                )));
            }
            if !specs.iter().any(|s| s.name == record.name) {
                return Err(Error::Validation(format!(
                    "unexpected parameter {:?}",
                    record.name
                )));
            }
        }
        Ok(())
    }
}

/// splitmix64: tiny, seedable, trivially re-implementable in any language.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1) using the top 53 bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }
}

/// Deterministic synthetic weights for a config: records are filled in
/// canonical order, each weight drawn as `(2u−1)·s` from one splitmix64 step.
/// Bias scales are zero but still consume a draw each.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelBundle> {
    config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let params = param_specs(config)
        .into_iter()
        .map(|spec| {
            let s = spec.scale.value();
            let len: usize = spec.dims.iter().product();
            let weights = (0..len)
                .map(|_| (2.0 * rng.next_unit() - 1.0) * s)
                .collect();
            ParamRecord {
                name: spec.name.to_string(),
                dims: spec.dims,
                weights,
            }
        })
        .collect();
    Ok(ModelBundle {
        config: config.clone(),
        params,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    config: ModelConfig,
    params: Vec<ParamRecord>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u64>,
}

/// Serialize a bundle to its canonical JSON text: fixed key order, weights as
/// shortest decimals that parse back to the identical 64-bit value.
pub fn model_to_string(bundle: &ModelBundle) -> Result<String> {
    bundle.validate()?;
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        config: bundle.config.clone(),
        params: bundle.params.clone(),
    };
    serde_json::to_string(&file).map_err(|e| Error::ModelFormat(e.to_string()))
}

pub fn save_model(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let text = model_to_string(bundle)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn model_from_string(text: &str) -> Result<ModelBundle> {
    let probe: VersionProbe =
        serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    match probe.format_version {
        None => return Err(Error::ModelFormat("missing format_version field".into())),
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(Error::UnsupportedVersion(v)),
    }
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let bundle = ModelBundle {
        config: file.config,
        params: file.params,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    model_from_string(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::builtin_stopwords;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 2,
            filter_width: 2,
            num_filters: 1,
            hidden_size: 2,
            vocab: vec![UNK_TOKEN.into(), "a".into(), "b".into()],
            stopwords: builtin_stopwords().into_iter().collect(),
            idf: IdfTable::empty(),
        }
    }

    #[test]
    fn init_is_deterministic() {
        let config = tiny_config();
        let one = init_model(&config, 7).unwrap();
        let two = init_model(&config, 7).unwrap();
        assert_eq!(one, two);
        let other = init_model(&config, 8).unwrap();
        assert_ne!(one, other);
    }

    #[test]
    fn biases_are_exactly_zero() {
        let bundle = init_model(&tiny_config(), 123).unwrap();
        for name in ["conv_q.bias", "conv_a.bias", "fc1.bias", "fc2.bias"] {
            assert!(bundle
                .param(name)
                .unwrap()
                .weights
                .iter()
                .all(|&w| w == 0.0));
        }
    }

    #[test]
    fn embeddings_match_independent_splitmix_reference() {
        // Frozen from an independent splitmix64 implementation, seed 42:
        // u = (z >> 11) * 2^-53, weight = (2u - 1) * 0.25.
        let bundle = init_model(&tiny_config(), 42).unwrap();
        let emb = &bundle.param("embeddings").unwrap().weights;
        assert_eq!(emb[0], 0.12078243938591166);
        assert_eq!(emb[1], -0.17004480356153995);
        assert_eq!(emb[2], -0.11069943487243067);
    }

    #[test]
    fn splitmix_matches_reference_stream() {
        // Canonical splitmix64 test vector for seed 0.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);
        assert_eq!(rng.next_u64(), 0x06c45d188009454f);
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let bundle = init_model(&tiny_config(), 5).unwrap();
        let text = model_to_string(&bundle).unwrap();
        let back = model_from_string(&text).unwrap();
        assert_eq!(bundle, back);
    }

    #[test]
    fn save_refuses_reshape_violation() {
        let mut bundle = init_model(&tiny_config(), 5).unwrap();
        bundle.params[1].weights.pop();
        assert!(matches!(
            model_to_string(&bundle),
            Err(Error::Reshape { .. })
        ));
    }

    #[test]
    fn missing_record_is_named() {
        let mut bundle = init_model(&tiny_config(), 5).unwrap();
        bundle.params.retain(|p| p.name != "conv_q.bias");
        let text = serde_json::to_string(&ModelFile {
            format_version: FORMAT_VERSION,
            config: bundle.config.clone(),
            params: bundle.params.clone(),
        })
        .unwrap();
        let err = model_from_string(&text).unwrap_err();
        assert_eq!(err.to_string(), "missing parameter conv_q.bias");
    }

    #[test]
    fn dims_weights_mismatch_is_reshape_error() {
        let text = r#"{"format_version":1,"config":{"embed_dim":2,"filter_width":2,"num_filters":1,"hidden_size":2,"vocab":["<unk>"],"stopwords":[],"idf":{"n_docs":1,"df":{}}},"params":[{"name":"embeddings","dims":[2,3],"weights":[1.0,2.0,3.0,4.0,5.0]}]}"#;
        let err = model_from_string(text).unwrap_err();
        match err {
            Error::Reshape {
                name,
                expected,
                found,
                ..
            } => {
                assert_eq!(name, "embeddings");
                assert_eq!(expected, 6);
                assert_eq!(found, 5);
            }
            other => panic!("expected reshape error, got {other}"),
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let bundle = init_model(&tiny_config(), 5).unwrap();
        let text = model_to_string(&bundle).unwrap().replacen(
            "\"format_version\":1",
            "\"format_version\":2",
            1,
        );
        assert!(matches!(
            model_from_string(&text),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn extra_record_rejected() {
        let mut bundle = init_model(&tiny_config(), 5).unwrap();
        bundle.params.push(ParamRecord {
            name: "mystery".into(),
            dims: vec![1],
            weights: vec![0.0],
        });
        assert!(matches!(bundle.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn config_requires_unk_at_index_zero() {
        let mut config = tiny_config();
        config.vocab = vec!["a".into(), UNK_TOKEN.into()];
        assert!(config.validate().is_err());
        config.vocab = vec![UNK_TOKEN.into(), "a".into(), "a".into()];
        assert!(config.validate().is_err());
    }

    #[test]
    fn canonical_dims_cover_join_width() {
        let config = tiny_config();
        let specs = param_specs(&config);
        let fc1 = specs.iter().find(|s| s.name == "fc1.weight").unwrap();
        assert_eq!(fc1.dims, vec![2, 2 * 1 + 4]);
    }
}
