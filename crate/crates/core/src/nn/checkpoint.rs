use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Head, Mlp, NnError};

const FORMAT: &str = "retract-mlp";
const FORMAT_VERSION: u32 = 1;

/// On-disk JSON form of an [`Mlp`]. Parameters are stored flat, layer by
/// layer, weights row-major before biases; floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub widths: Vec<usize>,
    pub head: Head,
    pub params: Vec<f64>,
}

impl From<&Mlp> for MlpCheckpoint {
    fn from(net: &Mlp) -> Self {
        Self { format: FORMAT.to_string(), version: FORMAT_VERSION, widths: net.widths().to_vec(), head: net.head(), params: net.params() }
    }
}

impl MlpCheckpoint {
    pub fn into_mlp(self) -> Result<Mlp, NnError> {
        if self.format != FORMAT || self.version != FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported format {} v{}", self.format, self.version)));
        }
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(NnError::Checkpoint(format!("bad widths {:?}", self.widths)));
        }
        if let Head::Softmax { branches } = self.head {
            if branches == 0 || !self.widths[self.widths.len() - 1].is_multiple_of(branches) {
                return Err(NnError::Checkpoint("softmax branches do not divide output width".into()));
            }
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(NnError::Checkpoint("non-finite parameter".into()));
        }
        let mut net = Mlp::zeros(&self.widths, self.head);
        net.set_params(&self.params).map_err(|e| NnError::Checkpoint(format!("parameter count: {e}")))?;
        Ok(net)
    }
}

impl Mlp {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&MlpCheckpoint::from(self)).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        serde_json::from_str::<MlpCheckpoint>(text).map_err(|e| NnError::Checkpoint(e.to_string()))?.into_mlp()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        Ok(Self::from_json(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Mlp::new(&[12, 16, 16, 9], Head::Softmax { branches: 3 }, 1.0, 0.01, 77);
        let back = Mlp::from_json(&net.to_json()).unwrap();
        let a: Vec<u64> = net.params().iter().map(|p| p.to_bits()).collect();
        let b: Vec<u64> = back.params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.head(), net.head());
        assert_eq!(back.widths(), net.widths());
    }

    #[test]
    fn rejects_wrong_parameter_count() {
        let net = Mlp::zeros(&[2, 2], Head::Linear);
        let mut ck = MlpCheckpoint::from(&net);
        ck.params.pop();
        assert!(matches!(ck.into_mlp(), Err(NnError::Checkpoint(_))));
    }

    #[test]
    fn rejects_foreign_format() {
        let text = r#"{"format":"other","version":1,"widths":[1,1],"head":{"kind":"linear"},"params":[0.0,0.0]}"#;
        assert!(matches!(Mlp::from_json(text), Err(NnError::Checkpoint(_))));
    }
}
