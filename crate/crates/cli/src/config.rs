//! Flat `key = value` run configuration; command-line flags override the file.

use std::path::Path;

use hjb_core::hj::{CharMinConfig, HopfConfig};
use hjb_core::marching::{Extension, MarchSettings};
use hjb_core::net::TrainConfig;
use hjb_core::pipeline::{Recording, RoundPlan};
use hjb_core::problem::{Lqr, Problem, RigidBody, RigidBodyParams};
use hjb_core::spectral::PsConfig;
use hjb_core::{HjbError, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: String,
    pub lqr_tf: f64,
    pub rigid_body: RigidBodyParams,
    pub seed: u64,
    pub workers: Option<usize>,
    pub march: MarchSettings,
    pub recording: Recording,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub plan: RoundPlan,
    pub validation_count: usize,
    pub fallback: bool,
    pub ps: PsConfig,
    pub charmin: CharMinConfig,
    pub hopf: HopfConfig,
    pub hopf_problem: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: "lqr".into(),
            lqr_tf: 1.0,
            rigid_body: RigidBodyParams::default(),
            seed: 0,
            workers: None,
            march: MarchSettings::default(),
            recording: Recording::default(),
            hidden: vec![64, 64, 64],
            train: TrainConfig::default(),
            plan: RoundPlan::default(),
            validation_count: 200,
            fallback: true,
            ps: PsConfig::default(),
            charmin: CharMinConfig::default(),
            hopf: HopfConfig::default(),
            hopf_problem: "quadratic".into(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| HjbError::InvalidInput(format!("{key}: cannot parse '{value}'")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|s| num(key, s)).collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if let Some(sub) = key.strip_prefix("rigid_body.") {
            return self.rigid_body.set(sub, value);
        }
        match key {
            "problem" => self.problem = value.to_string(),
            "lqr.tf" => self.lqr_tf = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = Some(num(key, value)?),
            "march_initial_frac" => self.march.schedule.initial_frac = num(key, value)?,
            "march_factor" => self.march.schedule.factor = num(key, value)?,
            "march_retries" => self.march.schedule.max_retries = num(key, value)?,
            "march_times" => self.march.schedule.times = Some(list(key, value)?),
            "extension" => self.march.extension = value.parse::<Extension>()?,
            "bvp_tol" => self.march.bvp.tol = num(key, value)?,
            "bvp_mesh_tol" => self.march.bvp.mesh_tol = num(key, value)?,
            "bvp_max_points" => self.march.bvp.max_points = num(key, value)?,
            "decimation" => self.recording.decimation = num(key, value)?,
            "max_interior" => self.recording.max_interior = Some(num(key, value)?),
            "hidden" => self.hidden = list(key, value)?,
            "mu" => self.train.mu = num(key, value)?,
            "learning_rate" => self.train.adam.learning_rate = num(key, value)?,
            "adam_steps" => self.train.adam.steps = num(key, value)?,
            "lbfgs_memory" => self.train.lbfgs.memory = num(key, value)?,
            "lbfgs_iter" => self.train.lbfgs.max_iter = num(key, value)?,
            "lbfgs_gtol" => self.train.lbfgs.gtol = num(key, value)?,
            "sizes" => self.plan.sizes = list(key, value)?,
            "pool_multiplier" => self.plan.pool_multiplier = num(key, value)?,
            "fraction" => self.plan.fraction = num(key, value)?,
            "validation_count" => self.validation_count = num(key, value)?,
            "fallback" => self.fallback = num(key, value)?,
            "order" => self.ps.order = num(key, value)?,
            "eps" => self.ps.eps = num(key, value)?,
            "ps_stages" => self.ps.stages = num(key, value)?,
            "charmin_starts" => self.charmin.starts = num(key, value)?,
            "charmin_box" => self.charmin.box_half_width = num(key, value)?,
            "hopf_starts" => self.hopf.starts = num(key, value)?,
            "hopf_problem" => self.hopf_problem = value.to_string(),
            other => return Err(HjbError::InvalidInput(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a flat file: one `key = value` per line, `#` comments.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HjbError::InvalidInput(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        match self.problem.as_str() {
            "lqr" => Ok(Problem::Lqr(Lqr::new(self.lqr_tf))),
            "rigid_body" => Ok(Problem::RigidBody(RigidBody::new(self.rigid_body.clone())?)),
            other => Problem::by_name(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::default().set("march_facter", "2").unwrap_err();
        assert!(err.to_string().contains("march_facter"));
    }

    #[test]
    fn file_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nproblem = rigid_body\nrigid_body.w3 = 0.25\nsizes = 8,16\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.load(&path).unwrap();
        assert_eq!(cfg.plan.sizes, vec![8, 16]);
        match cfg.problem().unwrap() {
            Problem::RigidBody(rb) => assert_eq!(rb.params.weights[2], 0.25),
            other => panic!("{other:?}"),
        }
    }
}
