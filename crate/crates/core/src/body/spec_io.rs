use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BodySpec, NUM_BETAS};
use crate::error::{Result, VmpError};

pub const BODY_SPEC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BodySpecFile {
    version: u32,
    /// `-1` marks the root.
    parent: Vec<i64>,
    rest_offsets: Vec<[f64; 3]>,
    shape_basis: Vec<[[f64; NUM_BETAS]; 3]>,
    vertex_template: Vec<[f64; 3]>,
    skin_weights: Vec<Vec<f64>>,
    limb_indices: [usize; 4],
}

impl BodySpec {
    pub fn to_json(&self) -> Result<String> {
        let file = BodySpecFile {
            version: BODY_SPEC_VERSION,
            parent: self
                .parent
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            rest_offsets: self.rest_offsets.clone(),
            shape_basis: self.shape_basis.clone(),
            vertex_template: self.vertex_template.clone(),
            skin_weights: self.skin_weights.clone(),
            limb_indices: self.limb_indices,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<BodySpec> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| VmpError::Parse {
            path: "<body spec>".into(),
            msg: e.to_string(),
        })?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(BODY_SPEC_VERSION as u64) {
            return Err(VmpError::Version {
                found: value.get("version").map_or("none".into(), |v| v.to_string()),
                expected: BODY_SPEC_VERSION.to_string(),
            });
        }
        let file: BodySpecFile = serde_json::from_value(value).map_err(|e| VmpError::Parse {
            path: "<body spec>".into(),
            msg: e.to_string(),
        })?;
        let parent = file
            .parent
            .iter()
            .map(|p| match *p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(VmpError::Invalid(format!("bad parent index {p}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = BodySpec {
            parent,
            rest_offsets: file.rest_offsets,
            shape_basis: file.shape_basis,
            vertex_template: file.vertex_template,
            skin_weights: file.skin_weights,
            limb_indices: file.limb_indices,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn write_body_spec(spec: &BodySpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, spec.to_json()?).map_err(|e| VmpError::io(path, e))
}

pub fn read_body_spec(path: impl AsRef<Path>) -> Result<BodySpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| VmpError::io(path, e))?;
    BodySpec::from_json(&text).map_err(|e| match e {
        VmpError::Parse { msg, .. } => VmpError::Parse {
            path: path.display().to_string(),
            msg,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_bit_exact() {
        let spec = BodySpec::default();
        let back = BodySpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(back, spec);
        let bits = |s: &BodySpec| -> Vec<u64> {
            s.vertex_template.iter().flatten().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&back), bits(&spec));
    }

    #[test]
    fn rejects_other_versions() {
        let text = BodySpec::default().to_json().unwrap().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(BodySpec::from_json(&text), Err(VmpError::Version { .. })));
    }
}
