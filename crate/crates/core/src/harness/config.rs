//! Key-value experiment files.
//!
//! One `key = value` per line, `#` starts a comment, list-valued keys take
//! comma-separated values. Relative paths resolve against the directory of
//! the file.
//!
//! ```text
//! data = ../data/adult_5k.csv
//! schema = ../data/adult.schema
//! notion = demographic_parity
//! lambda = 0, 0.5, 1, 2
//! epsilon = 1, 3, 9
//! h = 0, 0.75
//! N = 3
//! trials = 15
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataio::DEFAULT_PARTITION_ATTRIBUTE;
use crate::error::{Error, Result};
use crate::fairness::FairnessNotion;
use crate::federation::{IterateSelection, SamplingScheme, TopologyMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Steffle,
    NonPrivateSteffle,
    CentralDp,
    NonPrivateCentral,
    NoFairnessFl,
    NoFairnessCentral,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Steffle => "steffle",
            Mode::NonPrivateSteffle => "non_private_steffle",
            Mode::CentralDp => "central_dp",
            Mode::NonPrivateCentral => "non_private_central",
            Mode::NoFairnessFl => "no_fairness_fl",
            Mode::NoFairnessCentral => "no_fairness_central",
        }
    }

    pub fn is_central(self) -> bool {
        matches!(self, Mode::CentralDp | Mode::NonPrivateCentral | Mode::NoFairnessCentral)
    }

    pub fn is_non_private(self) -> bool {
        matches!(self, Mode::NonPrivateSteffle | Mode::NonPrivateCentral)
    }

    pub fn is_unfair(self) -> bool {
        matches!(self, Mode::NoFairnessFl | Mode::NoFairnessCentral)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "steffle" => Mode::Steffle,
            "non_private_steffle" => Mode::NonPrivateSteffle,
            "central_dp" => Mode::CentralDp,
            "non_private_central" => Mode::NonPrivateCentral,
            "no_fairness_fl" => Mode::NoFairnessFl,
            "no_fairness_central" => Mode::NoFairnessCentral,
            other => return Err(Error::Config(format!("unknown mode `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub notion: FairnessNotion,
    pub mode: Mode,
    pub lambdas: Vec<f64>,
    /// `inf` runs without noise.
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub heterogeneity: Vec<f64>,
    pub silos: Vec<usize>,
    pub trials: usize,
    pub seed_base: u64,
    pub epochs: usize,
    pub batch: usize,
    pub eta_theta: f64,
    pub eta_w: f64,
    /// `(factor, every_epochs)`.
    pub lr_decay: Option<(f64, usize)>,
    pub diameter: f64,
    /// `inf` disables loss-gradient clipping.
    pub clip: f64,
    /// Defaults to the clipping threshold.
    pub l_theta: Option<f64>,
    /// Overrides the training-split minimum class frequency as `ρ`.
    pub rho: Option<f64>,
    pub train_ratio: f64,
    pub selection: IterateSelection,
    pub sampling: Option<SamplingScheme>,
    pub topology: TopologyMode,
    pub dummy_noise: bool,
    /// When false the `seconds` column is written as 0 so tables are
    /// reproducible byte for byte.
    pub timing: bool,
    pub output: PathBuf,
    pub partition_attribute: String,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    pub allow_lambda_outside: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data/adult.csv"),
            schema: PathBuf::from("data/adult.schema"),
            notion: FairnessNotion::DemographicParity,
            mode: Mode::Steffle,
            lambdas: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            epsilons: vec![1.0, 3.0, 9.0],
            delta: 1e-5,
            heterogeneity: vec![0.0, 0.75],
            silos: vec![3],
            trials: 15,
            seed_base: 0,
            epochs: 40,
            batch: 256,
            eta_theta: 0.25,
            eta_w: 1e-5,
            lr_decay: Some((0.8, 10)),
            diameter: 2.0,
            clip: 2.0,
            l_theta: None,
            rho: None,
            train_ratio: 0.75,
            selection: IterateSelection::Final,
            sampling: None,
            topology: TopologyMode::Federated,
            dummy_noise: false,
            timing: true,
            output: PathBuf::from("results/tradeoff.csv"),
            partition_attribute: DEFAULT_PARTITION_ATTRIBUTE.to_string(),
            jobs: 0,
            allow_lambda_outside: false,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let v = v.trim();
    match v {
        "inf" | "infinity" | "∞" => Ok(f64::INFINITY),
        _ => v.parse().map_err(|_| Error::Config(format!("{key}: `{v}` is not a number"))),
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: `{}` is not a non-negative integer", v.trim())))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(Error::Config(format!("{key}: `{other}` is not a boolean"))),
    }
}

fn parse_list<U>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<U>) -> Result<Vec<U>> {
    let out = v.split(',').map(|s| item(key, s)).collect::<Result<Vec<U>>>()?;
    if out.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut decay_factor = cfg.lr_decay.map(|d| d.0);
        let mut decay_epochs = cfg.lr_decay.map(|d| d.1);
        let (mut decay_set, mut decay_off) = (false, false);
        let resolve = |p: &str| {
            let p = PathBuf::from(p.trim());
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        cfg.data = resolve(&cfg.data.to_string_lossy());
        cfg.schema = resolve(&cfg.schema.to_string_lossy());
        cfg.output = resolve(&cfg.output.to_string_lossy());

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data" => cfg.data = resolve(value),
                "schema" => cfg.schema = resolve(value),
                "output" => cfg.output = resolve(value),
                "notion" => cfg.notion = value.parse()?,
                "mode" => cfg.mode = value.parse()?,
                "lambda" => cfg.lambdas = parse_list(key, value, parse_f64)?,
                "epsilon" => cfg.epsilons = parse_list(key, value, parse_f64)?,
                "delta" => cfg.delta = parse_f64(key, value)?,
                "h" => cfg.heterogeneity = parse_list(key, value, parse_f64)?,
                "N" => cfg.silos = parse_list(key, value, parse_usize)?,
                "trials" => cfg.trials = parse_usize(key, value)?,
                "seed_base" => {
                    cfg.seed_base = value.parse().map_err(|_| Error::Config(format!("seed_base: `{value}`")))?
                }
                "epochs" => cfg.epochs = parse_usize(key, value)?,
                "batch" => cfg.batch = parse_usize(key, value)?,
                "eta_theta" => cfg.eta_theta = parse_f64(key, value)?,
                "eta_w" => cfg.eta_w = parse_f64(key, value)?,
                "lr_decay_factor" => {
                    decay_factor = Some(parse_f64(key, value)?);
                    decay_set = true;
                }
                "lr_decay_epochs" => {
                    decay_epochs = Some(parse_usize(key, value)?);
                    decay_set = true;
                }
                "lr_decay" => decay_off = !parse_bool(key, value)?,
                "diameter" => cfg.diameter = parse_f64(key, value)?,
                "clip" => cfg.clip = parse_f64(key, value)?,
                "l_theta" => cfg.l_theta = Some(parse_f64(key, value)?),
                "rho" => cfg.rho = Some(parse_f64(key, value)?),
                "train_ratio" => cfg.train_ratio = parse_f64(key, value)?,
                "selection" => {
                    cfg.selection = match value {
                        "final" => IterateSelection::Final,
                        "random" => IterateSelection::Random,
                        other => return Err(Error::Config(format!("selection: unknown `{other}`"))),
                    }
                }
                "sampling" => {
                    cfg.sampling = match value {
                        "default" => None,
                        "without_replacement" => Some(SamplingScheme::WithoutReplacement),
                        "with_replacement" => Some(SamplingScheme::WithReplacement),
                        other => return Err(Error::Config(format!("sampling: unknown `{other}`"))),
                    }
                }
                "topology" => cfg.topology = value.parse()?,
                "dummy_noise" => cfg.dummy_noise = parse_bool(key, value)?,
                "timing" => cfg.timing = parse_bool(key, value)?,
                "partition_attribute" => cfg.partition_attribute = value.to_string(),
                "jobs" => cfg.jobs = parse_usize(key, value)?,
                "allow_lambda_outside" => cfg.allow_lambda_outside = parse_bool(key, value)?,
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        if decay_off {
            if decay_set {
                return Err(Error::Config("lr_decay = false conflicts with lr_decay_factor/lr_decay_epochs".into()));
            }
            (decay_factor, decay_epochs) = (None, None);
        }
        cfg.lr_decay = match (decay_factor, decay_epochs) {
            (Some(f), Some(e)) => Some((f, e)),
            (None, None) => None,
            _ => return Err(Error::Config("lr_decay_factor and lr_decay_epochs go together".into())),
        };
        cfg.check_static()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// λ grid after the mode is applied.
    pub fn effective_lambdas(&self) -> Vec<f64> {
        if self.mode.is_unfair() {
            vec![0.0]
        } else {
            self.lambdas.clone()
        }
    }

    pub fn effective_epsilons(&self) -> Vec<f64> {
        if self.mode.is_non_private() {
            vec![f64::INFINITY]
        } else {
            self.epsilons.clone()
        }
    }

    /// Central modes run one silo, where heterogeneity has no meaning.
    pub fn effective_heterogeneity(&self) -> Vec<f64> {
        if self.mode.is_central() {
            vec![0.0]
        } else {
            self.heterogeneity.clone()
        }
    }

    pub fn effective_silos(&self) -> Vec<usize> {
        if self.mode.is_central() {
            vec![1]
        } else {
            self.silos.clone()
        }
    }

    /// Checks that need no data.
    pub fn check_static(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be ≥ 1".into());
        }
        if self.lambdas.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return bad("λ must be finite and ≥ 0".into());
        }
        if !self.allow_lambda_outside && self.lambdas.iter().any(|&l| l > 2.0) {
            return bad("λ outside [0, 2]; set allow_lambda_outside = true to sweep further".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} not in (0, 1)", self.delta));
        }
        let cap = 2.0 * (1.0 / self.delta).ln();
        for &eps in &self.epsilons {
            if !(eps > 0.0) {
                return bad(format!("epsilon {eps} must be > 0"));
            }
            if eps.is_finite() && eps > cap {
                return bad(format!("epsilon {eps} exceeds 2·ln(1/delta) = {cap:.4}"));
            }
        }
        if self.heterogeneity.iter().any(|h| !(0.0..=1.0).contains(h)) {
            return bad("h must lie in [0, 1]".into());
        }
        if self.silos.contains(&0) {
            return bad("N must be ≥ 1".into());
        }
        if self.batch == 0 || self.epochs == 0 {
            return bad("batch and epochs must be ≥ 1".into());
        }
        if !(self.eta_theta > 0.0) || !(self.eta_w >= 0.0) {
            return bad("η_θ must be > 0 and η_w ≥ 0".into());
        }
        if !(self.diameter > 0.0) || !(self.clip > 0.0) || self.l_theta.is_some_and(|l| !(l > 0.0)) {
            return bad("diameter, clip and l_theta must be > 0".into());
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho < 1.0) {
                return bad(format!("rho {rho} not in (0, 1)"));
            }
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio must lie in (0, 1)".into());
        }
        if let Some((f, e)) = self.lr_decay {
            if !(f > 0.0) || e == 0 {
                return bad("lr decay needs factor > 0 and epochs ≥ 1".into());
            }
        }
        if !matches!(self.topology, TopologyMode::Federated | TopologyMode::CentralSensitive) {
            return bad("topology must be `federated` or `central_sensitive`".into());
        }
        Ok(())
    }

    /// Rendered back as a config file with every value in effect.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("data", self.data.display().to_string());
        put("schema", self.schema.display().to_string());
        put("notion", match self.notion {
            FairnessNotion::DemographicParity => "demographic_parity".into(),
            FairnessNotion::EqualizedOdds => "equalized_odds".into(),
        });
        put("mode", self.mode.name().into());
        put("lambda", list(&self.lambdas));
        put("epsilon", list(&self.epsilons));
        put("delta", self.delta.to_string());
        put("h", list(&self.heterogeneity));
        put("N", self.silos.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "));
        put("trials", self.trials.to_string());
        put("seed_base", self.seed_base.to_string());
        put("epochs", self.epochs.to_string());
        put("batch", self.batch.to_string());
        put("eta_theta", self.eta_theta.to_string());
        put("eta_w", self.eta_w.to_string());
        match self.lr_decay {
            Some((f, e)) => {
                put("lr_decay_factor", f.to_string());
                put("lr_decay_epochs", e.to_string());
            }
            None => put("lr_decay", "false".into()),
        }
        put("diameter", self.diameter.to_string());
        put("clip", self.clip.to_string());
        if let Some(l) = self.l_theta {
            put("l_theta", l.to_string());
        }
        if let Some(r) = self.rho {
            put("rho", r.to_string());
        }
        put("train_ratio", self.train_ratio.to_string());
        put("selection", match self.selection {
            IterateSelection::Final => "final".into(),
            IterateSelection::Random => "random".into(),
        });
        put("sampling", match self.sampling {
            None => "default".into(),
            Some(SamplingScheme::WithoutReplacement) => "without_replacement".into(),
            Some(SamplingScheme::WithReplacement) => "with_replacement".into(),
        });
        put("topology", match self.topology {
            TopologyMode::CentralSensitive => "central_sensitive".into(),
            _ => "federated".into(),
        });
        put("dummy_noise", self.dummy_noise.to_string());
        put("timing", self.timing.to_string());
        put("output", self.output.display().to_string());
        put("partition_attribute", self.partition_attribute.clone());
        put("jobs", self.jobs.to_string());
        put("allow_lambda_outside", self.allow_lambda_outside.to_string());
        s
    }
}
