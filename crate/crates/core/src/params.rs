//! Parameter store shared by network builders, the optimizer and the model file.
//!
//! `params.bin` layout (little endian):
//!
//! ```text
//! offset 0   8 bytes  magic "PBNPARAM"
//! offset 8   u32      format version (1)
//! offset 12  u32      number of f64 values that follow
//! offset 16  f64 × count
//! ```
//!
//! Values are the store's parameters concatenated in ascending id order; the
//! run manifest records the `(id, kind, len)` layout.

use crate::error::{Error, Result};
use crate::layers::{ParamId, ParamKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

pub const PARAMS_MAGIC: &[u8; 8] = b"PBNPARAM";
pub const PARAMS_VERSION: u32 = 1;

/// Ids used by the built-in network templates.
pub mod ids {
    use crate::layers::ParamId;
    pub const MEASUREMENT_MATRIX: ParamId = ParamId(0);
    pub const STEP_SIZE: ParamId = ParamId(1);
    pub const THRESHOLD: ParamId = ParamId(2);
    pub const PENALTY: ParamId = ParamId(3);
    pub const MOMENTUM: ParamId = ParamId(4);
    pub const MEASUREMENT: ParamId = ParamId(5);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub kind: ParamKind,
    pub values: Vec<f64>,
    pub learnable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<ParamId, Param>,
}

/// One entry of the `params.bin` layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub id: ParamId,
    pub kind: ParamKind,
    pub len: usize,
    pub learnable: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        id: ParamId,
        kind: ParamKind,
        values: Vec<f64>,
        learnable: bool,
    ) -> Result<()> {
        validate(kind, &values)?;
        self.params.insert(
            id,
            Param {
                kind,
                values,
                learnable,
            },
        );
        Ok(())
    }

    pub fn get(&self, id: ParamId) -> Option<&Param> {
        self.params.get(&id)
    }

    pub fn values(&self, id: ParamId) -> Result<&[f64]> {
        self.params
            .get(&id)
            .map(|p| p.values.as_slice())
            .ok_or_else(|| Error::Config(format!("parameter {id} missing from store")))
    }

    pub fn scalar(&self, id: ParamId) -> Result<f64> {
        match self.values(id)? {
            [v] => Ok(*v),
            other => Err(Error::Config(format!(
                "parameter {id} has {} values, expected a scalar",
                other.len()
            ))),
        }
    }

    pub fn set_values(&mut self, id: ParamId, values: Vec<f64>) -> Result<()> {
        let p = self
            .params
            .get_mut(&id)
            .ok_or_else(|| Error::Config(format!("parameter {id} missing from store")))?;
        if values.len() != p.values.len() {
            return Err(Error::dim("parameter update", p.values.len(), values.len()));
        }
        validate(p.kind, &values)?;
        p.values = values;
        Ok(())
    }

    pub fn is_learnable(&self, id: ParamId) -> bool {
        self.params.get(&id).is_some_and(|p| p.learnable)
    }

    pub fn learnable_ids(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, p)| p.learnable)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().map(|(id, p)| (*id, p))
    }

    pub fn layout(&self) -> Vec<ParamLayout> {
        self.iter()
            .map(|(id, p)| ParamLayout {
                id,
                kind: p.kind,
                len: p.values.len(),
                learnable: p.learnable,
            })
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .values()
            .flat_map(|p| p.values.iter().copied())
            .collect()
    }

    pub fn write_bin<W: Write>(&self, mut w: W) -> Result<()> {
        let flat = self.flatten();
        let count = u32::try_from(flat.len())
            .map_err(|_| Error::Argument("too many parameter values for params.bin".into()))?;
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
        for v in flat {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads values written by [`ParamStore::write_bin`] back into a store
    /// with the same layout.
    pub fn read_bin_into<R: Read>(&mut self, r: R) -> Result<()> {
        let flat = read_params_bin(r)?;
        let expected: usize = self.params.values().map(|p| p.values.len()).sum();
        if flat.len() != expected {
            return Err(Error::dim("params.bin value count", expected, flat.len()));
        }
        let mut offset = 0;
        let ids: Vec<ParamId> = self.params.keys().copied().collect();
        for id in ids {
            let len = self.params[&id].values.len();
            self.set_values(id, flat[offset..offset + len].to_vec())?;
            offset += len;
        }
        Ok(())
    }
}

/// Parses a `params.bin` stream into its raw values.
pub fn read_params_bin<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != PARAMS_MAGIC {
        return Err(Error::Argument("params.bin: bad magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    if version != PARAMS_VERSION {
        return Err(Error::Argument(format!(
            "params.bin: unsupported version {version}"
        )));
    }
    let count = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes")) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != count * 8 {
        return Err(Error::Argument(format!(
            "params.bin: header announces {count} values but body holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn validate(kind: ParamKind, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument(format!(
            "{kind:?} parameter has non-finite values"
        )));
    }
    let scalar_ok = |pred: fn(f64) -> bool, what: &str| {
        if values.len() == 1 && pred(values[0]) {
            Ok(())
        } else {
            Err(Error::Argument(format!("{kind:?} must be a scalar {what}")))
        }
    };
    match kind {
        ParamKind::StepSize | ParamKind::Penalty => scalar_ok(|v| v > 0.0, "> 0"),
        ParamKind::Threshold => scalar_ok(|v| v >= 0.0, ">= 0"),
        ParamKind::Momentum => scalar_ok(|_| true, ""),
        ParamKind::MeasurementMatrix | ParamKind::Measurement => Ok(()),
    }
}
