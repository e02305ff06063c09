use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{BenchmarkDef, BenchmarkId, Hyper};
use crate::data::{CollocationMode, MAX_NOISE_LEVEL};
use crate::error::{Error, Result};
use crate::network::CoefficientTransform;
use crate::training::TrainConfig;

/// Fully resolved settings of one run. Built from benchmark defaults with
/// a JSON overlay; every artifact records [`RunConfig::hash`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: BenchmarkId,
    pub eps: f64,
    pub noise: f64,
    pub n_data: usize,
    pub n_colloc: usize,
    pub colloc_mode: CollocationMode,
    /// Seed of random collocation points.
    pub data_seed: u64,
    pub noise_seed: u64,
    /// Realization of the ergodic benchmark.
    pub omega: [f64; 2],
    /// Data (multiscale) mesh spacing.
    pub mesh_h: f64,
    /// Mesh spacing of the reference homogenized solve.
    pub reference_h: f64,
    pub eval_h: f64,
    pub full_scale: bool,
    /// Table size of sampled reference G-limits.
    pub reference_points: usize,
    pub mc_samples: usize,
    pub mc_seed: u64,
    /// Fine scale at which the patch reference is computed.
    pub patch_eps: f64,
    pub patch_delta: f64,
    pub patch_resolution: usize,
    pub network: Hyper,
    pub transform: CoefficientTransform,
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
}

/// Parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Eps,
    Noise,
    Ndata,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(SweepAxis::Eps),
            "noise" => Ok(SweepAxis::Noise),
            "ndata" => Ok(SweepAxis::Ndata),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?} (eps, noise, ndata)"))),
        }
    }
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Eps => "eps",
            SweepAxis::Noise => "noise",
            SweepAxis::Ndata => "ndata",
        }
    }
}

pub(crate) fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

impl RunConfig {
    /// Desk-scale defaults; `full_scale` switches to the large meshes.
    pub fn defaults(id: BenchmarkId, full_scale: bool) -> Self {
        let def = BenchmarkDef::get(id);
        let h = &def.hyper;
        let dim = def.dim();
        let (eps, mesh_h) = if full_scale {
            (def.full_scale_eps, def.full_scale_h)
        } else {
            (def.default_eps, def.data_h)
        };
        RunConfig {
            benchmark: id,
            eps,
            noise: 0.0,
            n_data: def.default_n_data,
            n_colloc: def.default_n_data + def.extra_colloc,
            colloc_mode: CollocationMode::Grid,
            data_seed: 0,
            noise_seed: 1,
            omega: [0.5, 0.5],
            mesh_h,
            reference_h: def.reference_h,
            eval_h: def.eval_h,
            full_scale,
            reference_points: if dim == 2 { 33 } else { 201 },
            mc_samples: 200_000,
            mc_seed: 0,
            patch_eps: 1.0 / 128.0,
            patch_delta: 1.0 / 16.0,
            patch_resolution: 512,
            network: def.hyper.clone(),
            transform: CoefficientTransform::default(),
            train: TrainConfig {
                epochs: h.epochs,
                lr: h.lr,
                batch_size: h.batch_size,
                ..TrainConfig::default()
            },
            output_dir: None,
        }
    }

    /// Benchmark defaults overlaid with `overlay`, which must name the
    /// benchmark unless `id` is given. Nested objects merge field by field.
    pub fn resolve(id: Option<BenchmarkId>, overlay: &Value) -> Result<Self> {
        if !overlay.is_object() {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
        let named = match overlay.get("benchmark") {
            Some(Value::String(s)) => Some(s.parse::<BenchmarkId>()?),
            Some(other) => return Err(Error::Config(format!("bad benchmark field {other}"))),
            None => None,
        };
        let id = match (id, named) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("benchmark given as both {a} and {b}")))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::Config("no benchmark given".into())),
        };
        let full_scale = overlay.get("full_scale").and_then(Value::as_bool).unwrap_or(false);
        let mut base = serde_json::to_value(Self::defaults(id, full_scale))?;
        merge(&mut base, overlay);
        base["benchmark"] = Value::String(id.as_str().into());
        let cfg: RunConfig =
            serde_json::from_value(base).map_err(|e| Error::Config(format!("configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("configuration: {e}")))?;
        Self::resolve(None, &v)
    }

    pub fn def(&self) -> BenchmarkDef {
        BenchmarkDef::get(self.benchmark)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let def = self.def();
        let positive = [
            ("eps", self.eps),
            ("mesh_h", self.mesh_h),
            ("reference_h", self.reference_h),
            ("eval_h", self.eval_h),
            ("patch_eps", self.patch_eps),
            ("patch_delta", self.patch_delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(0.0..=MAX_NOISE_LEVEL).contains(&self.noise) {
            return bad(format!("noise level {} outside [0, {MAX_NOISE_LEVEL}]", self.noise));
        }
        if self.n_data == 0 || self.n_colloc == 0 {
            return bad("need at least one data and one residual point".into());
        }
        if def.dim() == 2 {
            for (name, n) in [("n_data", self.n_data), ("n_colloc", self.n_colloc)] {
                let r = (n as f64).sqrt().round() as usize;
                if r * r != n {
                    return bad(format!("{name} = {n} must be a perfect square in 2D"));
                }
            }
        }
        if self.reference_points < 2 {
            return bad("reference_points must be at least 2".into());
        }
        let n = &self.network;
        if n.solution_depth == 0 || n.solution_width == 0 || n.coefficient_depth == 0 || n.coefficient_width == 0 {
            return bad("network depths and widths must be positive".into());
        }
        if self.omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return bad(format!("omega {:?} must lie in [0, 1]^2", self.omega));
        }
        if !self.full_scale && def.dim() == 2 && self.mesh_h < 1.0 / 2048.0 {
            return bad(format!(
                "2D data mesh h = {} is beyond desk scale; pass --full-scale",
                self.mesh_h
            ));
        }
        self.train.validate()
    }

    /// Identifying hash: SHA-256 of the canonical JSON with the output
    /// directory and thread count removed, first 16 hex digits.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
            if let Some(Value::Object(t)) = m.get_mut("train") {
                t.remove("threads");
            }
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Copy with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match axis {
            SweepAxis::Eps => c.eps = value,
            SweepAxis::Noise => c.noise = value,
            SweepAxis::Ndata => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("|T_d| = {value} must be a positive integer")));
                }
                let extra = self.n_colloc as i64 - self.n_data as i64;
                c.n_data = value as usize;
                c.n_colloc = (c.n_data as i64 + extra).max(1) as usize;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_follow_the_registry() {
        let c = RunConfig::defaults(BenchmarkId::Locper1d, false);
        assert_eq!((c.n_data, c.n_colloc), (160, 190));
        assert_eq!(c.train.epochs, 40_000);
        let c = RunConfig::defaults(BenchmarkId::Nonper2d, false);
        assert_eq!((c.n_data, c.n_colloc), (1600, 1600));
        assert_eq!(c.eps, 1.0 / 16.0);
        let c = RunConfig::defaults(BenchmarkId::Nonper2d, true);
        assert_eq!((c.eps, c.mesh_h), (1.0 / 128.0, 1.0 / 8000.0));
        let c = RunConfig::defaults(BenchmarkId::Ergodic1d, false);
        assert_eq!((c.n_colloc, c.omega), (180, [0.5, 0.5]));
    }

    #[test]
    fn overlay_merges_nested_fields() {
        let c = RunConfig::resolve(None, &json!({"benchmark": "oscil1d", "noise": 0.05, "train": {"restarts": 2}}))
            .unwrap();
        assert_eq!(c.noise, 0.05);
        assert_eq!(c.train.restarts, 2);
        assert_eq!(c.train.lr, 1e-4);
        assert!(RunConfig::resolve(None, &json!({"noise": 0.0})).is_err());
        assert!(RunConfig::resolve(None, &json!({"benchmark": "locper1d", "nosie": 0.1})).is_err());
        assert!(RunConfig::resolve(Some(BenchmarkId::Oscil1d), &json!({"benchmark": "locper1d"})).is_err());
    }

    #[test]
    fn validation() {
        let bad = |v: Value| RunConfig::resolve(Some(BenchmarkId::Nonper2d), &v).is_err();
        assert!(bad(json!({"noise": 0.3})));
        assert!(bad(json!({"n_data": 1500})));
        assert!(bad(json!({"mesh_h": 1.0 / 8000.0})));
        assert!(!bad(json!({"mesh_h": 1.0 / 8000.0, "full_scale": true})));
        assert!(bad(json!({"eps": -1.0})));
    }

    #[test]
    fn hash_ignores_location_and_threads() {
        let a = RunConfig::defaults(BenchmarkId::Locper1d, false);
        let mut b = a.clone();
        b.output_dir = Some("/tmp/x".into());
        b.train.threads = 4;
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.noise = 0.01;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn json_roundtrip_and_axes() {
        let a = RunConfig::defaults(BenchmarkId::Ergodic1d, false);
        assert_eq!(RunConfig::from_json_str(&a.to_json().unwrap()).unwrap(), a);
        let b = a.with_axis(SweepAxis::Ndata, 80.0).unwrap();
        assert_eq!((b.n_data, b.n_colloc), (80, 100));
        assert!(a.with_axis(SweepAxis::Ndata, 2.5).is_err());
        assert!(a.with_axis(SweepAxis::Noise, 0.5).is_err());
        assert_eq!("ndata".parse::<SweepAxis>().unwrap(), SweepAxis::Ndata);
    }
}
