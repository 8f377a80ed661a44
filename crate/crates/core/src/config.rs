//! JSON-facing value types and config merging.
//!
//! Matrices are `{"rows": r, "cols": c, "data": [...]}` in row-major order.
//! Bounds accept numbers or the strings `"inf"` / `"-inf"`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self::from_dmatrix(&DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn to_dmatrix(&self, what: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::InvalidConfig(format!(
                "{what}: {}×{} matrix needs {} entries, got {}",
                self.rows,
                self.cols,
                self.rows * self.cols,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("{what}: entries must be finite")));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// A bound that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound(pub f64);

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bound(v)),
            Raw::Text(t) => match t.trim() {
                "inf" | "+inf" => Ok(Bound(f64::INFINITY)),
                "-inf" => Ok(Bound(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!("expected a number, \"inf\" or \"-inf\", got {other:?}"))),
            },
        }
    }
}

pub fn bounds_to_vector(b: &[Bound]) -> DVector<f64> {
    DVector::from_iterator(b.len(), b.iter().map(|v| v.0))
}

/// Recursively overlays `overlay` onto `base`. Objects merge key by key; any other
/// value replaces the base value.
pub fn merge_json(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Serializes `base`, overlays `overlay` and deserializes the result.
pub fn apply_overlay<T>(base: &T, overlay: &Value) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut v = serde_json::to_value(base)?;
    merge_json(&mut v, overlay);
    Ok(serde_json::from_value(v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn matrix_is_row_major() {
        let m: MatrixSpec = serde_json::from_value(json!({"rows": 2, "cols": 2, "data": [1.0, -3.0, -8.0, 10.0]})).unwrap();
        let d = m.to_dmatrix("a").unwrap();
        assert_eq!(d[(0, 1)], -3.0);
        assert_eq!(d[(1, 0)], -8.0);
        assert_eq!(MatrixSpec::from_dmatrix(&d), m);
        let short = MatrixSpec { rows: 2, cols: 2, data: vec![1.0] };
        assert!(short.to_dmatrix("a").is_err());
    }

    #[test]
    fn infinite_bounds_round_trip() {
        let b: Vec<Bound> = serde_json::from_value(json!(["-inf", 1.5, "inf"])).unwrap();
        assert_eq!(b, vec![Bound(f64::NEG_INFINITY), Bound(1.5), Bound(f64::INFINITY)]);
        assert_eq!(serde_json::to_value(&b).unwrap(), json!(["-inf", 1.5, "inf"]));
        assert!(serde_json::from_value::<Bound>(json!("infinity")).is_err());
    }

    #[test]
    fn overlay_merges_nested_objects() {
        let mut base = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge_json(&mut base, &json!({"b": {"d": 4}, "e": 5}));
        assert_eq!(base, json!({"a": 1, "b": {"c": 2, "d": 4}, "e": 5}));
    }
}
