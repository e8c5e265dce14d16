//! Run configuration: profile defaults, overlaid by an optional JSON file,
//! overlaid by command-line flags.

use std::path::{Path, PathBuf};

use heterodiff::profile::{Profile, ProfileName};
use heterodiff::transition::TransitionKinds;
use heterodiff::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub profile: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Seed of the 90/5/5 shuffle, kept apart from the run seed so that
    /// reseeding a run does not move layouts between splits.
    #[serde(default)]
    pub split_seed: u64,
    /// Transition-matrix families, for ablations.
    #[serde(default)]
    pub transitions: TransitionKinds,
}

impl RunConfig {
    pub fn from_profile(name: ProfileName) -> Self {
        RunConfig {
            profile: Profile::get(name),
            corpus: None,
            output_dir: None,
            split_seed: 0,
            transitions: TransitionKinds::default(),
        }
    }

    /// Resolve the configuration. The profile comes from the flag, else the
    /// file's `"profile"` key, else desk.
    pub fn load(profile_flag: Option<ProfileName>, file: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let overlay = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| {
                    Error::Config(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
                })?;
                if !v.is_object() {
                    return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
                }
                Some(v)
            }
            None => None,
        };
        let file_profile = match overlay.as_ref().and_then(|v| v.get("profile")) {
            Some(p) => Some(
                p.as_str()
                    .ok_or_else(|| Error::Config("\"profile\" must be a string".into()))?
                    .parse::<ProfileName>()?,
            ),
            None => None,
        };
        let name = profile_flag.or(file_profile).unwrap_or(ProfileName::Desk);
        let mut merged = serde_json::to_value(Self::from_profile(name))?;
        if let Some(mut v) = overlay {
            v.as_object_mut().expect("checked above").remove("profile");
            merge(&mut merged, v);
        }
        let mut cfg: RunConfig =
            serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.profile.name = name;
        if let Some(seed) = seed {
            cfg.set_seed(seed);
        }
        cfg.profile.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.profile.train.seed = seed;
        self.profile.generation.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()
    }
}

/// Recursive object merge; anything else in `top` replaces `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_come_from_the_profile() {
        let c = RunConfig::load(Some(ProfileName::Paper), None, None).unwrap();
        assert_eq!(c.profile.k, 128);
        let c = RunConfig::load(None, None, Some(9)).unwrap();
        assert_eq!(c.profile.k, 32);
        assert_eq!((c.profile.train.seed, c.profile.generation.seed), (9, 9));
    }

    #[test]
    fn file_overrides_nested_fields_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"profile": "paper", "train": {"lr": 0.5}, "generation": {"T_refine": 30}}"#).unwrap();
        let c = RunConfig::load(None, Some(&path), None).unwrap();
        assert_eq!(c.profile.name, ProfileName::Paper);
        assert_eq!(c.profile.train.lr, 0.5);
        assert_eq!(c.profile.train.batch_size, Profile::paper().train.batch_size);
        assert_eq!(c.profile.generation.t_refine, 30);
        // The flag wins over the file.
        let c = RunConfig::load(Some(ProfileName::Desk), Some(&path), None).unwrap();
        assert_eq!(c.profile.k, 32);
        assert_eq!(c.profile.train.lr, 0.5);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"generation": {"T_ugen": 500}}"#).unwrap();
        assert!(matches!(RunConfig::load(None, Some(&path), None), Err(Error::Config(_))));
        std::fs::write(&path, "{ nope").unwrap();
        assert!(RunConfig::load(None, Some(&path), None).is_err());
    }
}
