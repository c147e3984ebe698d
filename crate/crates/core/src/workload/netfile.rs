//! Network description files.
//!
//! A network is declared in TOML, one record per layer. Byte footprints
//! can either be written out explicitly or derived from tensor
//! dimensions using the per-network element width (default 1 byte,
//! matching int8 inference). See `docs/formats.md` for the schema.
//!
//! ```toml
//! name = "example"
//! element_bytes = 1
//!
//! [[layers]]
//! name = "conv1"
//! kind = "compute"
//! out = [112, 112, 64]     # H, W, C
//! kernel = [7, 7, 3]       # Kh, Kw, Cin
//! in_hw = [224, 224]       # optional, defaults to out H/W
//! tiling_factor = 12       # optional, default 1
//! tile_bytes = 130000      # optional, default working set / tiling_factor
//!
//! [[layers]]
//! name = "add1"
//! kind = "mem"
//! input_bytes = 802816
//! input_b_bytes = 802816
//! output_bytes = 802816
//! ```

use std::path::Path;

use serde::Deserialize;

use super::{LayerDesc, LayerKind, NetworkDesc};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    name: String,
    #[serde(default = "default_element_bytes")]
    element_bytes: u64,
    #[serde(default)]
    layers: Vec<LayerRecord>,
}

fn default_element_bytes() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    name: String,
    kind: LayerKind,
    /// Output tensor [H, W, C].
    out: Option<[u64; 3]>,
    /// Kernel [Kh, Kw, Cin].
    kernel: Option<[u64; 3]>,
    /// Input activation spatial size [H, W]; channel count comes from the
    /// kernel. Defaults to the output spatial size.
    in_hw: Option<[u64; 2]>,
    total_mac: Option<u64>,
    weight_bytes: Option<u64>,
    input_bytes: Option<u64>,
    input_b_bytes: Option<u64>,
    output_bytes: Option<u64>,
    bias_bytes: Option<u64>,
    tile_bytes: Option<u64>,
    tiling_factor: Option<u64>,
}

impl LayerRecord {
    fn into_layer(self, elem: u64, net: &str) -> Result<LayerDesc> {
        let ctx = || format!("network `{net}`, layer `{}`", self.name);

        let dims = match (self.out, self.kernel) {
            (Some(out), Some(kernel)) => Some((out, kernel)),
            (None, None) => None,
            _ => {
                return Err(Error::validation(
                    ctx(),
                    "dims require both `out` and `kernel`",
                ));
            }
        };

        let total_mac = match (self.total_mac, dims, self.kind) {
            (Some(mac), _, _) => mac,
            (None, Some(([oh, ow, oc], [kh, kw, cin])), LayerKind::Compute) => {
                oh * ow * oc * kh * kw * cin
            }
            (None, _, LayerKind::Mem) => 0,
            (None, None, LayerKind::Compute) => {
                return Err(Error::validation(
                    ctx(),
                    "compute layers need `total_mac` or dims",
                ));
            }
        };

        let weight_bytes = self.weight_bytes.unwrap_or_else(|| match dims {
            Some(([_, _, oc], [kh, kw, cin])) if self.kind == LayerKind::Compute => {
                kh * kw * cin * oc * elem
            }
            _ => 0,
        });
        let output_bytes = self.output_bytes.unwrap_or_else(|| match dims {
            Some(([oh, ow, oc], _)) => oh * ow * oc * elem,
            None => 0,
        });
        let input_bytes = self.input_bytes.unwrap_or_else(|| match dims {
            Some(([oh, ow, _], [_, _, cin])) => {
                let [ih, iw] = self.in_hw.unwrap_or([oh, ow]);
                ih * iw * cin * elem
            }
            None => 0,
        });
        let bias_bytes = self.bias_bytes.unwrap_or_else(|| match dims {
            Some(([_, _, oc], _)) if self.kind == LayerKind::Compute => oc * elem,
            _ => 0,
        });
        let input_b_bytes = self.input_b_bytes.unwrap_or(0);

        let tiling_factor = self.tiling_factor.unwrap_or(1);
        let tile_bytes = self.tile_bytes.unwrap_or_else(|| {
            let working_set = weight_bytes + input_bytes + output_bytes + bias_bytes;
            working_set.div_ceil(tiling_factor.max(1))
        });

        let layer = LayerDesc {
            name: self.name,
            kind: self.kind,
            total_mac,
            weight_bytes,
            input_bytes,
            input_b_bytes,
            output_bytes,
            bias_bytes,
            tile_bytes,
            tiling_factor,
        };
        layer.validate()?;
        Ok(layer)
    }
}

/// Loads and validates a network description file.
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkDesc> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_network(&text, &path.display().to_string())
}

/// Parses a network description from TOML text; `origin` is used in
/// error messages.
pub fn parse_network(text: &str, origin: &str) -> Result<NetworkDesc> {
    let file: NetworkFile = toml::from_str(text).map_err(|err| {
        let line = err
            .span()
            .map(|span| line_of_offset(text, span.start))
            .unwrap_or(0);
        Error::Parse {
            path: origin.to_string(),
            line,
            message: err.message().to_string(),
        }
    })?;

    if file.element_bytes == 0 {
        return Err(Error::validation(
            format!("network `{}`", file.name),
            "element_bytes must be > 0",
        ));
    }

    let name = file.name.clone();
    let layers = file
        .layers
        .into_iter()
        .map(|record| record.into_layer(file.element_bytes, &name))
        .collect::<Result<Vec<_>>>()?;

    let net = NetworkDesc { name, layers };
    net.validate()?;
    Ok(net)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_dims_derive_mac_count() {
        // 112*112*64 outputs, each from a 7*7*3 dot product.
        let toml = r#"
            name = "t"
            [[layers]]
            name = "conv1"
            kind = "compute"
            out = [112, 112, 64]
            kernel = [7, 7, 3]
            in_hw = [224, 224]
        "#;
        let net = parse_network(toml, "inline").unwrap();
        let l = &net.layers[0];
        assert_eq!(l.total_mac, 118_013_952);
        assert_eq!(l.weight_bytes, 7 * 7 * 3 * 64);
        assert_eq!(l.output_bytes, 112 * 112 * 64);
        assert_eq!(l.input_bytes, 224 * 224 * 3);
        assert_eq!(l.bias_bytes, 64);
    }

    #[test]
    fn zero_layers_is_a_validation_error() {
        let toml = r#"name = "t""#;
        let err = parse_network(toml, "inline").unwrap_err();
        assert!(err.to_string().contains("at least one layer"));
    }

    #[test]
    fn residual_add_carries_no_macs() {
        let toml = r#"
            name = "t"
            [[layers]]
            name = "add"
            kind = "mem"
            input_bytes = 802816
            input_b_bytes = 802816
            output_bytes = 802816
        "#;
        let net = parse_network(toml, "inline").unwrap();
        let l = &net.layers[0];
        assert_eq!(l.total_mac, 0);
        assert_eq!(l.input_bytes, 802_816);
        assert_eq!(l.input_b_bytes, 802_816);
        assert_eq!(l.output_bytes, 802_816);
    }

    #[test]
    fn parse_error_reports_line() {
        let toml = "name = \"t\"\n\n[[layers]]\nname = \"x\"\nkind = \"bogus\"\n";
        let err = parse_network(toml, "inline").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn compute_layer_rejects_second_operand() {
        let toml = r#"
            name = "t"
            [[layers]]
            name = "conv"
            kind = "compute"
            out = [4, 4, 4]
            kernel = [1, 1, 4]
            input_b_bytes = 16
        "#;
        let err = parse_network(toml, "inline").unwrap_err();
        assert!(err.to_string().contains("input_b_bytes"));
    }

    #[test]
    fn element_width_scales_byte_fields() {
        let toml = r#"
            name = "t"
            element_bytes = 2
            [[layers]]
            name = "conv"
            kind = "compute"
            out = [4, 4, 8]
            kernel = [1, 1, 4]
        "#;
        let net = parse_network(toml, "inline").unwrap();
        let l = &net.layers[0];
        assert_eq!(l.weight_bytes, 4 * 8 * 2);
        assert_eq!(l.output_bytes, 4 * 4 * 8 * 2);
    }
}
