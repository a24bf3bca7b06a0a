//! One JSON file per trained step. Floats round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::NetParams;
use crate::error::{Error, Result};

pub const FORMAT: &str = "lfis-step-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCheckpoint {
    pub format: String,
    pub step: usize,
    pub params: NetParams,
}

impl StepCheckpoint {
    pub fn new(step: usize, params: NetParams) -> Self {
        Self { format: FORMAT.to_string(), step, params }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        if ck.format != FORMAT {
            return Err(Error::Schema(format!("unknown checkpoint format `{}`", ck.format)));
        }
        ck.params.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng;

    #[test]
    fn bit_exact_round_trip() {
        let mut r = rng::seeded(5);
        let mut p = NetParams::init(3, [8, 6], Activation::Tanh, &mut r);
        p.b3[1] = 1.0 / 3.0;
        p.b3[2] = f64::MIN_POSITIVE;
        let ck = StepCheckpoint::new(7, p);
        let back = StepCheckpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(ck, back);
        for (a, b) in ck.params.to_flat().iter().zip(back.params.to_flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_shapes_and_format() {
        let p = NetParams::zeros(2, [3, 3], Activation::Tanh);
        let mut ck = StepCheckpoint::new(0, p);
        ck.params.dim = 5;
        assert!(matches!(StepCheckpoint::from_json(&ck.to_json().unwrap()), Err(Error::Schema(_))));
        ck.params.dim = 2;
        ck.format = "other".into();
        assert!(matches!(StepCheckpoint::from_json(&ck.to_json().unwrap()), Err(Error::Schema(_))));
        assert!(matches!(StepCheckpoint::from_json("{"), Err(Error::Json(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("step_0000.json");
        let ck = StepCheckpoint::new(0, NetParams::zeros(1, [2, 2], Activation::Silu));
        ck.save(&path).unwrap();
        assert_eq!(StepCheckpoint::load(&path).unwrap(), ck);
        assert!(matches!(StepCheckpoint::load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
