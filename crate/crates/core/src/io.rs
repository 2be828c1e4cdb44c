//! Output formatting shared by the exporters.

/// Real number with 17 significant digits, lossless for `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reads a JSON document from a string.
pub fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> crate::Result<T> {
    serde_json::from_str(text).map_err(|e| crate::Error::InvalidInput(e.to_string()))
}
