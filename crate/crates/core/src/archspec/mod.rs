//! Architecture descriptions: the linear channel parameterization, family
//! builders (ReXNet, its plain and lite variants), budget calibration and the
//! versioned JSON spec format.

mod builders;
mod calibrate;
mod linear;
mod model;

use std::path::PathBuf;

pub use builders::{
    build_rexnet, build_rexnet_lite, build_rexnet_plain, default_linear, padded_shortcut, scale_channels,
    stage_strides, BuildOptions, Family, Layout, CALIBRATION_RESOLUTION, DEFAULT_PENULTIMATE, IMAGENET_CLASSES,
    MAX_WIDTH_MULTIPLIER, MIN_WIDTH_MULTIPLIER, PLAIN_DEPTH, PLAIN_STRIDED_BLOCKS, PLAIN_TARGET, REXNET_DEPTH,
    REXNET_REPEATS, REXNET_STRIDED_STAGES, REXNET_TARGET,
};
pub use calibrate::{calibrate_linear, calibrate_linear_with, Calibration, CALIBRATION_BAND};
pub use linear::{channels_from_linear, fit_linear, fit_linear_in, LinearFit, LinearParam};
pub use model::{
    export_spec, import_spec, BlockKind, BlockSpec, HeadSpec, ModelSpec, PenultimateSpec, Shortcut, StemSpec,
    SCHEMA_VERSION,
};

use crate::costmodel::CostError;

#[derive(Debug, thiserror::Error)]
pub enum ArchError {
    #[error("spec field `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    InvalidParam(String),
    #[error(
        "budget of {target_params} params / {target_macs} macs is infeasible; nearest achievable is {params} params / {macs} macs"
    )]
    Infeasible {
        params: u64,
        macs: u64,
        target_params: u64,
        target_macs: u64,
    },
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let spec = build_rexnet(1.0).unwrap();
        let back = ModelSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.json");
        let spec = build_rexnet_lite(1.5).unwrap();
        export_spec(&spec, &path).unwrap();
        assert_eq!(import_spec(&path).unwrap(), spec);
        assert!(matches!(import_spec(&dir.path().join("missing.json")), Err(ArchError::Io { .. })));
    }

    #[test]
    fn missing_blocks_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(&build_rexnet(1.0).unwrap().to_json()).unwrap();
        v.as_object_mut().unwrap().remove("blocks");
        let e = ModelSpec::from_json(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("blocks"), "{e}");
    }

    #[test]
    fn nested_errors_carry_paths() {
        let mut v: serde_json::Value = serde_json::from_str(&build_rexnet(1.0).unwrap().to_json()).unwrap();
        v["blocks"][3]["stride"] = serde_json::json!("two");
        let e = ModelSpec::from_json(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("blocks[3].stride"), "{e}");

        let mut v: serde_json::Value = serde_json::from_str(&build_rexnet(1.0).unwrap().to_json()).unwrap();
        v["blocks"][5]["out_channels"] = serde_json::json!(9);
        let e = ModelSpec::from_json(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("blocks[5].out_channels"), "{e}");
    }
}
