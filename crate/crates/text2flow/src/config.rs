//! Operator configuration with layered precedence.
//!
//! Every setting resolves as: command-line flag > environment variable >
//! config file > built-in default. The file is TOML; unknown keys are
//! rejected with an error naming the key. Environment variables use the
//! `TEXT2FLOW_` prefix (`TEXT2FLOW_SEED`, `TEXT2FLOW_TRIALS`, ...); the API
//! key itself always stays in the environment, under the variable named by
//! `backend.api_key_env`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::agents::HttpBackendConfig;
use crate::orchestrator::RunConfig;
use crate::prioritizer::PrioritizerConfig;
use crate::simulator::SimulationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => Err(ConfigError::Invalid {
                key: "backend".to_string(),
                message: format!("expected `mock` or `http`, got `{other}`"),
            }),
        }
    }
}

/// On-disk config file shape.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<FileBackend>,
    pub run: Option<FileRun>,
    pub simulation: Option<FileSimulation>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileBackend {
    pub kind: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRun {
    pub rounds: Option<usize>,
    pub budget: Option<usize>,
    pub max_feedback_items: Option<usize>,
    pub stop_when_no_feedback: Option<bool>,
    /// In-context examples for the builder and refiner prompts (0..=3).
    pub shots: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSimulation {
    pub trials: Option<u64>,
    pub max_steps: Option<u32>,
    pub seed: Option<u64>,
}

/// Flag-level overrides collected from the command line.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub rounds: Option<usize>,
    pub budget: Option<usize>,
    pub backend: Option<BackendKind>,
    pub out: Option<PathBuf>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub backend_kind: BackendKind,
    pub http: HttpBackendConfig,
    pub run: RunConfig,
    pub out_dir: PathBuf,
    /// In-context example count for the builder/refiner prompts.
    pub shots: usize,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

pub fn load_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let body = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&body).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn env_parsed<T: std::str::FromStr>(
    env: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, ConfigError> {
    match env.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| ConfigError::Invalid {
            key: key.to_string(),
            message: format!("cannot parse `{raw}`"),
        }),
    }
}

/// Applies the precedence chain. `env` is passed explicitly so the logic is
/// testable without touching the process environment.
pub fn resolve(
    cli: &CliOverrides,
    env: &HashMap<String, String>,
    file: Option<&FileConfig>,
) -> Result<CliConfig, ConfigError> {
    let file_backend = file.and_then(|f| f.backend.as_ref());
    let file_run = file.and_then(|f| f.run.as_ref());
    let file_sim = file.and_then(|f| f.simulation.as_ref());

    let backend_kind = match (&cli.backend, env.get("TEXT2FLOW_BACKEND")) {
        (Some(kind), _) => *kind,
        (None, Some(raw)) => raw.parse()?,
        (None, None) => match file_backend.and_then(|b| b.kind.as_deref()) {
            Some(raw) => raw.parse()?,
            None => BackendKind::default(),
        },
    };

    let defaults = HttpBackendConfig::default();
    let http = HttpBackendConfig {
        endpoint: env
            .get("TEXT2FLOW_ENDPOINT")
            .cloned()
            .or_else(|| file_backend.and_then(|b| b.endpoint.clone()))
            .unwrap_or(defaults.endpoint),
        model: env
            .get("TEXT2FLOW_MODEL")
            .cloned()
            .or_else(|| file_backend.and_then(|b| b.model.clone()))
            .unwrap_or(defaults.model),
        api_key_env: file_backend
            .and_then(|b| b.api_key_env.clone())
            .unwrap_or(defaults.api_key_env),
        timeout_secs: file_backend
            .and_then(|b| b.timeout_secs)
            .unwrap_or(defaults.timeout_secs),
        max_retries: file_backend
            .and_then(|b| b.max_retries)
            .unwrap_or(defaults.max_retries),
        initial_backoff_ms: defaults.initial_backoff_ms,
    };

    let run_defaults = RunConfig::default();
    let max_rounds = match (cli.rounds, env_parsed(env, "TEXT2FLOW_ROUNDS")?) {
        (Some(v), _) => v,
        (None, Some(v)) => v,
        (None, None) => file_run
            .and_then(|r| r.rounds)
            .unwrap_or(run_defaults.max_rounds),
    };
    if max_rounds == 0 {
        return Err(ConfigError::Invalid {
            key: "rounds".to_string(),
            message: "must be at least 1".to_string(),
        });
    }
    let budget = match (cli.budget, env_parsed(env, "TEXT2FLOW_BUDGET")?) {
        (Some(v), _) => v,
        (None, Some(v)) => v,
        (None, None) => file_run
            .and_then(|r| r.budget)
            .unwrap_or(run_defaults.prioritizer.token_budget),
    };
    let trials = match (cli.trials, env_parsed(env, "TEXT2FLOW_TRIALS")?) {
        (Some(v), _) => v,
        (None, Some(v)) => v,
        (None, None) => file_sim
            .and_then(|s| s.trials)
            .unwrap_or(run_defaults.simulation.trials),
    };
    if trials == 0 {
        return Err(ConfigError::Invalid {
            key: "trials".to_string(),
            message: "must be at least 1".to_string(),
        });
    }
    let seed = match (cli.seed, env_parsed(env, "TEXT2FLOW_SEED")?) {
        (Some(v), _) => v,
        (None, Some(v)) => v,
        (None, None) => file_sim
            .and_then(|s| s.seed)
            .unwrap_or(run_defaults.simulation.seed),
    };

    let run = RunConfig {
        max_rounds,
        simulation: SimulationConfig {
            trials,
            seed,
            max_steps: file_sim
                .and_then(|s| s.max_steps)
                .unwrap_or(run_defaults.simulation.max_steps),
            ..run_defaults.simulation
        },
        prioritizer: PrioritizerConfig {
            token_budget: budget,
            max_items: file_run
                .and_then(|r| r.max_feedback_items)
                .unwrap_or(run_defaults.prioritizer.max_items),
        },
        stop_when_no_feedback: file_run
            .and_then(|r| r.stop_when_no_feedback)
            .unwrap_or(run_defaults.stop_when_no_feedback),
        min_feedback_weight: run_defaults.min_feedback_weight,
    };

    let out_dir = cli
        .out
        .clone()
        .or_else(|| env.get("TEXT2FLOW_OUT").map(PathBuf::from))
        .or_else(|| file.and_then(|f| f.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("text2flow-out"));

    let shots = match env_parsed(env, "TEXT2FLOW_SHOTS")? {
        Some(v) => v,
        None => file_run.and_then(|r| r.shots).unwrap_or(3),
    };

    Ok(CliConfig {
        backend_kind,
        http,
        run,
        out_dir,
        shots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn file(body: &str) -> FileConfig {
        toml::from_str(body).unwrap()
    }

    #[test]
    fn defaults_without_any_source() {
        let resolved = resolve(&CliOverrides::default(), &HashMap::new(), None).unwrap();
        assert_eq!(resolved.backend_kind, BackendKind::Mock);
        assert_eq!(resolved.run.max_rounds, 2);
        assert_eq!(resolved.run.simulation.trials, 10_000);
        assert_eq!(resolved.run.prioritizer.token_budget, 400);
        assert_eq!(resolved.run.prioritizer.max_items, 3);
        assert_eq!(resolved.shots, 3);
    }

    #[test]
    fn shots_resolve_from_file_and_env() {
        let parsed = file("[run]\nshots = 1\n");
        let resolved = resolve(&CliOverrides::default(), &HashMap::new(), Some(&parsed)).unwrap();
        assert_eq!(resolved.shots, 1);
        let env = env(&[("TEXT2FLOW_SHOTS", "2")]);
        let resolved = resolve(&CliOverrides::default(), &env, Some(&parsed)).unwrap();
        assert_eq!(resolved.shots, 2, "env beats file");
    }

    #[test]
    fn precedence_flag_over_env_over_file_per_key() {
        let file = file("[simulation]\nseed = 1\ntrials = 100\n\n[run]\nrounds = 5\nbudget = 50\n");
        let env = env(&[
            ("TEXT2FLOW_SEED", "2"),
            ("TEXT2FLOW_TRIALS", "200"),
            ("TEXT2FLOW_BUDGET", "60"),
        ]);
        let cli = CliOverrides {
            seed: Some(3),
            ..CliOverrides::default()
        };
        let resolved = resolve(&cli, &env, Some(&file)).unwrap();
        assert_eq!(resolved.run.simulation.seed, 3, "flag beats env and file");
        assert_eq!(resolved.run.simulation.trials, 200, "env beats file");
        assert_eq!(resolved.run.prioritizer.token_budget, 60, "env beats file");
        assert_eq!(resolved.run.max_rounds, 5, "file beats default");
    }

    #[test]
    fn backend_resolution_chain() {
        let file = file("[backend]\nkind = \"http\"\nendpoint = \"http://file\"\nmodel = \"m\"\n");
        let resolved = resolve(&CliOverrides::default(), &HashMap::new(), Some(&file)).unwrap();
        assert_eq!(resolved.backend_kind, BackendKind::Http);
        assert_eq!(resolved.http.endpoint, "http://file");

        let env = env(&[("TEXT2FLOW_BACKEND", "mock"), ("TEXT2FLOW_ENDPOINT", "http://env")]);
        let resolved = resolve(&CliOverrides::default(), &env, Some(&file)).unwrap();
        assert_eq!(resolved.backend_kind, BackendKind::Mock, "env beats file");
        assert_eq!(resolved.http.endpoint, "http://env");

        let cli = CliOverrides {
            backend: Some(BackendKind::Http),
            ..CliOverrides::default()
        };
        let resolved = resolve(&cli, &env, Some(&file)).unwrap();
        assert_eq!(resolved.backend_kind, BackendKind::Http, "flag beats env");
    }

    #[test]
    fn output_dir_precedence_chain() {
        let parsed = file("output_dir = \"from-file\"\n");
        let resolved = resolve(&CliOverrides::default(), &HashMap::new(), Some(&parsed)).unwrap();
        assert_eq!(resolved.out_dir, PathBuf::from("from-file"));
        let env = env(&[("TEXT2FLOW_OUT", "from-env")]);
        let resolved = resolve(&CliOverrides::default(), &env, Some(&parsed)).unwrap();
        assert_eq!(resolved.out_dir, PathBuf::from("from-env"), "env beats file");
        let cli = CliOverrides {
            out: Some(PathBuf::from("from-flag")),
            ..CliOverrides::default()
        };
        let resolved = resolve(&cli, &env, Some(&parsed)).unwrap();
        assert_eq!(resolved.out_dir, PathBuf::from("from-flag"), "flag beats env");
        let resolved = resolve(&CliOverrides::default(), &HashMap::new(), None).unwrap();
        assert_eq!(resolved.out_dir, PathBuf::from("text2flow-out"), "default");
    }

    #[test]
    fn unknown_file_key_is_rejected_by_name() {
        let err = toml::from_str::<FileConfig>("[run]\nroundz = 3\n").unwrap_err();
        assert!(err.to_string().contains("roundz"), "{err}");
    }

    #[test]
    fn zero_trials_and_zero_rounds_are_invalid() {
        let cli = CliOverrides {
            trials: Some(0),
            ..CliOverrides::default()
        };
        assert!(resolve(&cli, &HashMap::new(), None).is_err());
        let cli = CliOverrides {
            rounds: Some(0),
            ..CliOverrides::default()
        };
        assert!(resolve(&cli, &HashMap::new(), None).is_err());
    }

    #[test]
    fn bad_env_value_names_the_key() {
        let env = env(&[("TEXT2FLOW_TRIALS", "lots")]);
        let err = resolve(&CliOverrides::default(), &env, None).unwrap_err();
        assert!(err.to_string().contains("TEXT2FLOW_TRIALS"));
    }
}
