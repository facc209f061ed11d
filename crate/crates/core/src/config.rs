//! Flat `key = value` run configuration.
//!
//! Files hold one `key = value` pair per line; `#` starts a comment. Keys are
//! `<module>.<parameter>`. Values given on the command line override file
//! values, which override built-in defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::cluster4d::ClusterParams;
use crate::error::{Error, Result};
use crate::ground::GroundParams;
use crate::stitch::StitchParams;
use crate::synth::SceneSpec;
use crate::tracker::TrackerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Flag,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn p(key: &'static str, default: &'static str, help: &'static str) -> ParamSpec {
    ParamSpec { key, default, help }
}

pub const GROUND_KEYS: &[ParamSpec] = &[
    p(
        "ground.sensor_height",
        "1.84",
        "sensor height above ground (m)",
    ),
    p(
        "ground.seed_threshold",
        "0.5",
        "seed band above the lowest point (m)",
    ),
    p(
        "ground.distance_threshold",
        "0.25",
        "max distance to the patch plane (m)",
    ),
    p(
        "ground.min_range",
        "2.0",
        "points closer than this are never ground (m)",
    ),
    p(
        "ground.max_range",
        "80.0",
        "outer radius of the ring model (m)",
    ),
    p(
        "ground.seed_margin",
        "1.0",
        "seeds lie below -sensor_height + margin (m)",
    ),
    p("ground.num_rings", "4", "concentric rings"),
    p("ground.num_sectors", "32", "angular sectors per ring"),
    p("ground.iterations", "3", "plane fits per patch"),
];

pub const CLUSTER_KEYS: &[ParamSpec] = &[
    p("cluster.window_scans", "40", "scans per clustering window"),
    p("cluster.voxel_size", "0.05", "spatial voxel edge (m)"),
    p("cluster.time_bucket", "5", "temporal voxel length (scans)"),
    p(
        "cluster.time_scale",
        "0.03",
        "multiplier on the time coordinate",
    ),
    p("cluster.z_scale", "1.0", "multiplier on z"),
    p("cluster.min_samples", "1", "HDBSCAN min_samples"),
    p(
        "cluster.min_cluster_size",
        "300",
        "HDBSCAN min_cluster_size",
    ),
    p(
        "cluster.ego_exclusion_radius",
        "2.5",
        "points closer than this are dropped (m)",
    ),
];

pub const TRACKER_KEYS: &[ParamSpec] = &[
    p("tracker.num_queries", "300", "number of queries"),
    p(
        "tracker.recycle_distance",
        "10.0",
        "max barycenter jump keeping an id (m)",
    ),
    p(
        "tracker.feature_dim",
        "16",
        "feature width of the toy provider",
    ),
    p(
        "tracker.seed",
        "0",
        "seed of the initial queries and toy weights",
    ),
];

pub const STITCH_KEYS: &[ParamSpec] = &[
    p(
        "stitch.window_scans",
        "40",
        "window length of the input labels",
    ),
    p(
        "stitch.iou_threshold",
        "0.5",
        "hull IoU needed to inherit an id",
    ),
    p("stitch.mc_samples", "1000", "Monte-Carlo samples per IoU"),
    p(
        "stitch.decimation_limit",
        "200",
        "max points per instance hull",
    ),
    p("stitch.seed", "0", "base seed of the IoU estimates"),
];

pub const SYNTH_KEYS: &[ParamSpec] = &[
    p("synth.num_scans", "100", "scans to generate"),
    p("synth.hz", "10.0", "scan rate"),
    p("synth.seed", "0", "random seed"),
    p("synth.noise_sigma", "0.02", "Gaussian point noise (m)"),
    p(
        "synth.points_per_object",
        "500",
        "surface points per object per scan",
    ),
    p("synth.ground_points", "20000", "ground points per scan"),
    p("synth.ground_radius", "40.0", "ground disc radius (m)"),
];

pub const EVAL_KEYS: &[ParamSpec] = &[p(
    "eval.min_points",
    "0",
    "drop per-scan ground-truth parts smaller than this (0 = no filter)",
)];

#[derive(Debug, Clone)]
pub struct RunConfig {
    specs: Vec<ParamSpec>,
    values: BTreeMap<&'static str, (String, Provenance)>,
}

impl RunConfig {
    /// Configuration accepting exactly the keys of `sections`, at defaults.
    pub fn new(sections: &[&[ParamSpec]]) -> Self {
        let specs: Vec<ParamSpec> = sections.iter().flat_map(|s| s.iter().copied()).collect();
        let values = specs
            .iter()
            .map(|s| (s.key, (s.default.to_string(), Provenance::Default)))
            .collect();
        Self { specs, values }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn set(&mut self, key: &str, value: &str, from: Provenance) -> Result<()> {
        let spec = self
            .specs
            .iter()
            .find(|s| s.key == key)
            .ok_or_else(|| Error::InvalidParam(format!("unknown config key `{key}`")))?;
        self.values
            .insert(spec.key, (value.trim().to_string(), from));
        Ok(())
    }

    /// Applies a `key=value` command-line override.
    pub fn set_flag(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            Error::InvalidParam(format!("expected key=value, got `{assignment}`"))
        })?;
        self.set(k.trim(), v, Provenance::Flag)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParam(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(k.trim(), v, Provenance::File)?;
        }
        Ok(())
    }

    /// File values never replace command-line values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let flags: Vec<(&'static str, String)> = self
            .values
            .iter()
            .filter(|(_, (_, from))| *from == Provenance::Flag)
            .map(|(k, (v, _))| (*k, v.clone()))
            .collect();
        self.apply_text(&text)?;
        for (k, v) in flags {
            self.set(k, &v, Provenance::Flag)?;
        }
        Ok(())
    }

    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        self.values.get(key).map(|(_, from)| *from)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::InvalidParam(format!("unknown config key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::InvalidParam(format!("bad value `{raw}` for `{key}`")))
    }

    /// Effective configuration in file syntax, annotated with provenance.
    pub fn render(&self) -> String {
        self.specs
            .iter()
            .map(|s| {
                let (v, from) = &self.values[s.key];
                format!("{} = {v}  # {from}\n", s.key)
            })
            .collect()
    }

    pub fn ground(&self) -> Result<GroundParams> {
        let params = GroundParams {
            sensor_height: self.get("ground.sensor_height")?,
            seed_threshold: self.get("ground.seed_threshold")?,
            distance_threshold: self.get("ground.distance_threshold")?,
            min_range: self.get("ground.min_range")?,
            max_range: self.get("ground.max_range")?,
            seed_margin: self.get("ground.seed_margin")?,
            num_rings: self.get("ground.num_rings")?,
            num_sectors: self.get("ground.num_sectors")?,
            iterations: self.get("ground.iterations")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn cluster(&self) -> Result<ClusterParams> {
        let params = ClusterParams {
            window_scans: self.get("cluster.window_scans")?,
            voxel_size: self.get("cluster.voxel_size")?,
            time_bucket: self.get("cluster.time_bucket")?,
            time_scale: self.get("cluster.time_scale")?,
            z_scale: self.get("cluster.z_scale")?,
            min_samples: self.get("cluster.min_samples")?,
            min_cluster_size: self.get("cluster.min_cluster_size")?,
            ego_exclusion_radius: self.get("cluster.ego_exclusion_radius")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn tracker(&self) -> Result<TrackerParams> {
        let params = TrackerParams {
            num_queries: self.get("tracker.num_queries")?,
            recycle_distance: self.get("tracker.recycle_distance")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn stitch(&self) -> Result<StitchParams> {
        let params = StitchParams {
            iou_threshold: self.get("stitch.iou_threshold")?,
            mc_samples: self.get("stitch.mc_samples")?,
            decimation_limit: self.get("stitch.decimation_limit")?,
            seed: self.get("stitch.seed")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn scene(&self) -> Result<SceneSpec> {
        let scene = SceneSpec {
            seed: self.get("synth.seed")?,
            noise_sigma: self.get("synth.noise_sigma")?,
            points_per_object: self.get("synth.points_per_object")?,
            ground_points: self.get("synth.ground_points")?,
            ground_radius: self.get("synth.ground_radius")?,
            ..SceneSpec::default()
        };
        scene.validate()?;
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> RunConfig {
        RunConfig::new(&[
            GROUND_KEYS,
            CLUSTER_KEYS,
            TRACKER_KEYS,
            STITCH_KEYS,
            SYNTH_KEYS,
            EVAL_KEYS,
        ])
    }

    #[test]
    fn defaults_match_library_defaults() {
        let c = all();
        assert_eq!(c.ground().unwrap(), GroundParams::default());
        assert_eq!(c.cluster().unwrap(), ClusterParams::default());
        assert_eq!(c.tracker().unwrap(), TrackerParams::default());
        assert_eq!(c.stitch().unwrap(), StitchParams::default());
        assert_eq!(c.scene().unwrap(), SceneSpec::default());
        assert_eq!(c.get::<usize>("stitch.window_scans").unwrap(), 40);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\ncluster.window_scans = 20\ncluster.voxel_size = 0.1 # inline\n",
        )
        .unwrap();
        let mut c = all();
        c.set_flag("cluster.window_scans=7").unwrap();
        c.apply_file(&path).unwrap();
        let p = c.cluster().unwrap();
        assert_eq!(p.window_scans, 7);
        assert_eq!(p.voxel_size, 0.1);
        assert_eq!(c.provenance("cluster.window_scans"), Some(Provenance::Flag));
        assert_eq!(c.provenance("cluster.voxel_size"), Some(Provenance::File));
        assert_eq!(c.provenance("cluster.z_scale"), Some(Provenance::Default));
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let mut c = RunConfig::new(&[GROUND_KEYS]);
        let err = c.apply_text("cluster.voxel_size = 1").unwrap_err();
        assert!(err.to_string().contains("cluster.voxel_size"));
        assert!(c.set_flag("nope=1").is_err());
        assert!(c.set_flag("ground.min_range").is_err());
    }

    #[test]
    fn bad_values() {
        let mut c = all();
        c.set_flag("cluster.min_samples=abc").unwrap();
        assert!(matches!(c.cluster(), Err(Error::InvalidParam(_))));
        let mut c = all();
        c.set_flag("ground.num_rings=0").unwrap();
        assert!(c.ground().is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut c = all();
        c.set_flag("tracker.seed=9").unwrap();
        let text = c.render();
        let mut d = all();
        d.apply_text(&text).unwrap();
        assert_eq!(d.tracker().unwrap(), c.tracker().unwrap());
        assert_eq!(d.get::<u64>("tracker.seed").unwrap(), 9);
    }
}
