//! Flat `section.key = value` run configuration.

use std::path::Path;

use crate::bench::protocol::{exp_grid, Grids};
use crate::error::{Error, Result};
use crate::metric::{MmcConfig, PairCaps, TmlNnConfig};
use crate::optim::OptConfig;
use crate::tml_svm::TmlSvmConfig;
use crate::tps::{AnchorMethod, KernelSpec, SideConditionMode};

/// Every tunable of a run. Each field has a default; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub tml_nn: TmlNnConfig,
    pub tml_svm: TmlSvmConfig,
    pub mmc: MmcConfig,
    /// Kernel width for a single kernel TML-SVM fit; `None` uses `d_min`.
    pub kpca_sigma: Option<f64>,
    /// KPCA size; `None` uses `min(n − 1, 100)`.
    pub kpca_components: Option<usize>,
    pub bench_runs: usize,
    pub bench_folds: usize,
    pub grid_points: usize,
    pub sigma_points: usize,
    /// `desk` (7 points per axis unless overridden) or `full`.
    pub grid_preset: String,
    pub out_table: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            tml_nn: TmlNnConfig::default(),
            tml_svm: TmlSvmConfig::default(),
            mmc: MmcConfig::default(),
            kpca_sigma: None,
            kpca_components: None,
            bench_runs: 10,
            bench_folds: 3,
            grid_points: 7,
            sigma_points: 7,
            grid_preset: "desk".to_string(),
            out_table: None,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".to_string(), T::to_string)
}

fn kernel(key: &str, value: &str) -> Result<Option<KernelSpec>> {
    if value == "auto" {
        return Ok(None);
    }
    KernelSpec::from_name(value).map(Some).ok_or_else(|| bad(key, value))
}

fn set_optimizer(o: &mut OptConfig, field: &str, key: &str, value: &str) -> Result<bool> {
    match field {
        "max_outer" => o.max_outer = num(key, value)?,
        "max_inner" => o.max_inner = num(key, value)?,
        "tol" => o.tol = num(key, value)?,
        "penalty_growth" => o.penalty_growth = num(key, value)?,
        "initial_penalty" => o.initial_penalty = num(key, value)?,
        "max_total_steps" => o.max_total_steps = optional(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        let known = match (section, field) {
            ("", "seed") => {
                self.seed = num(key, value)?;
                true
            }
            ("", "threads") => {
                self.threads = num(key, value)?;
                true
            }
            ("tml_nn", f) => {
                let c = &mut self.tml_nn;
                match f {
                    "lambda" => c.lambda = num(key, value)?,
                    "anchor_fraction" => c.anchor_fraction = num(key, value)?,
                    "anchor_method" => {
                        c.anchor_method = AnchorMethod::from_name(value).ok_or_else(|| bad(key, value))?
                    }
                    "kernel" => c.kernel = kernel(key, value)?,
                    "side_conditions" => {
                        c.side_conditions = SideConditionMode::from_name(value).ok_or_else(|| bad(key, value))?
                    }
                    "similar_cap" => c.pair_caps.max_similar = num(key, value)?,
                    "dissimilar_cap" => c.pair_caps.max_dissimilar = num(key, value)?,
                    "freeze_psi" => c.freeze_psi = flag(key, value)?,
                    other => {
                        let other = other.strip_prefix("opt_").unwrap_or("");
                        return if set_optimizer(&mut c.optimizer, other, key, value)? {
                            Ok(())
                        } else {
                            Err(Error::Config(format!("unknown key {key:?}")))
                        };
                    }
                }
                true
            }
            ("tml_svm", f) => {
                let c = &mut self.tml_svm;
                match f {
                    "c1" => c.c1 = num(key, value)?,
                    "c2" => c.c2 = num(key, value)?,
                    "anchor_fraction" => c.anchor_fraction = num(key, value)?,
                    "anchor_method" => {
                        c.anchor_method = AnchorMethod::from_name(value).ok_or_else(|| bad(key, value))?
                    }
                    "kernel" => c.kernel = kernel(key, value)?,
                    "side_conditions" => {
                        c.side_conditions = SideConditionMode::from_name(value).ok_or_else(|| bad(key, value))?
                    }
                    "max_outer" => c.max_outer = num(key, value)?,
                    "outer_tol" => c.outer_tol = num(key, value)?,
                    "inner_steps" => c.inner_steps = num(key, value)?,
                    "freeze_linear" => c.freeze_linear = flag(key, value)?,
                    "freeze_psi" => c.freeze_psi = flag(key, value)?,
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                true
            }
            ("mmc", "step") => {
                self.mmc.step = num(key, value)?;
                true
            }
            ("mmc", "max_iter") => {
                self.mmc.max_iter = num(key, value)?;
                true
            }
            ("kpca", "sigma") => {
                self.kpca_sigma = optional(key, value)?;
                true
            }
            ("kpca", "components") => {
                self.kpca_components = optional(key, value)?;
                true
            }
            ("bench", "runs") => {
                self.bench_runs = num(key, value)?;
                true
            }
            ("bench", "folds") => {
                self.bench_folds = num(key, value)?;
                true
            }
            ("bench", "grid_points") => {
                self.grid_points = num(key, value)?;
                true
            }
            ("bench", "sigma_points") => {
                self.sigma_points = num(key, value)?;
                true
            }
            ("bench", "grid_preset") => {
                if value != "desk" && value != "full" {
                    return Err(bad(key, value));
                }
                self.grid_preset = value.to_string();
                true
            }
            ("output", "table") => {
                self.out_table = Some(value.to_string()).filter(|v| !v.is_empty());
                true
            }
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown key {key:?}")))
        }
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(source, i + 1, 1, format!("expected key = value, found {line:?}"))
            })?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(msg) => Error::parse(source, i + 1, 1, msg),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(&std::fs::read_to_string(path)?, &path.display().to_string())?;
        Ok(c)
    }

    /// Every key with its current value, in a form `apply_text` accepts.
    pub fn to_text(&self) -> String {
        let n = &self.tml_nn;
        let s = &self.tml_svm;
        let o = &n.optimizer;
        let kernel = |k: Option<KernelSpec>| k.map_or("auto", KernelSpec::name).to_string();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("tml_nn.lambda", n.lambda.to_string()),
            ("tml_nn.anchor_fraction", n.anchor_fraction.to_string()),
            ("tml_nn.anchor_method", n.anchor_method.name().to_string()),
            ("tml_nn.kernel", kernel(n.kernel)),
            ("tml_nn.side_conditions", n.side_conditions.name().to_string()),
            ("tml_nn.similar_cap", n.pair_caps.max_similar.to_string()),
            ("tml_nn.dissimilar_cap", n.pair_caps.max_dissimilar.to_string()),
            ("tml_nn.freeze_psi", n.freeze_psi.to_string()),
            ("tml_nn.opt_max_outer", o.max_outer.to_string()),
            ("tml_nn.opt_max_inner", o.max_inner.to_string()),
            ("tml_nn.opt_tol", o.tol.to_string()),
            ("tml_nn.opt_penalty_growth", o.penalty_growth.to_string()),
            ("tml_nn.opt_initial_penalty", o.initial_penalty.to_string()),
            ("tml_nn.opt_max_total_steps", show_opt(&o.max_total_steps)),
            ("tml_svm.c1", s.c1.to_string()),
            ("tml_svm.c2", s.c2.to_string()),
            ("tml_svm.anchor_fraction", s.anchor_fraction.to_string()),
            ("tml_svm.anchor_method", s.anchor_method.name().to_string()),
            ("tml_svm.kernel", kernel(s.kernel)),
            ("tml_svm.side_conditions", s.side_conditions.name().to_string()),
            ("tml_svm.max_outer", s.max_outer.to_string()),
            ("tml_svm.outer_tol", s.outer_tol.to_string()),
            ("tml_svm.inner_steps", s.inner_steps.to_string()),
            ("tml_svm.freeze_linear", s.freeze_linear.to_string()),
            ("tml_svm.freeze_psi", s.freeze_psi.to_string()),
            ("mmc.step", self.mmc.step.to_string()),
            ("mmc.max_iter", self.mmc.max_iter.to_string()),
            ("kpca.sigma", show_opt(&self.kpca_sigma)),
            ("kpca.components", show_opt(&self.kpca_components)),
            ("bench.runs", self.bench_runs.to_string()),
            ("bench.folds", self.bench_folds.to_string()),
            ("bench.grid_points", self.grid_points.to_string()),
            ("bench.sigma_points", self.sigma_points.to_string()),
            ("bench.grid_preset", self.grid_preset.clone()),
            ("output.table", self.out_table.clone().unwrap_or_default()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn grids(&self) -> Grids {
        let mut g = if self.grid_preset == "full" {
            Grids::full()
        } else {
            Grids {
                lambda: exp_grid(5.0, -5.0, 25.0, self.grid_points),
                c1: exp_grid(2.0, -5.0, 15.0, self.grid_points),
                c2: exp_grid(5.0, -5.0, 25.0, self.grid_points),
                sigma_points: self.sigma_points,
                inner_folds: 3,
            }
        };
        g.inner_folds = self.bench_folds;
        g
    }

    pub fn pair_caps(&self) -> PairCaps {
        self.tml_nn.pair_caps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let mut c = RunConfig::default();
        c.set("tml_svm.c1", "8").unwrap();
        c.set("kpca.sigma", "0.5").unwrap();
        c.set("tml_nn.opt_max_total_steps", "40").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), "cfg").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tml_svm.c1, 8.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("tml_svm.c3", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("nope", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("seed", "x"), Err(Error::Config(_))));
        match c.apply_text("# comment\n\nseed = 3\nbogus = 1\n", "f.cfg") {
            Err(Error::Parse(p)) => assert_eq!(p.line, 4),
            other => panic!("{other:?}"),
        }
    }
}
