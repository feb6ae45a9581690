//! Operator commands: `extract`, `simulate`, `eval`.
//!
//! Exit codes: 0 success, 1 error (unreadable input, empty graph, no
//! pairs), 2 partial success (backend failed mid-run and the fallback
//! graph was emitted).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use crate::agents::{AgentBackend, HttpBackend, MockBackend};
use crate::config::{self, BackendKind, CliConfig, CliOverrides};
use crate::dsl;
use crate::evaluator::{self, Category, CategoryScore};
use crate::orchestrator::Orchestrator;
use crate::simulator::{self, SimulationConfig};

#[derive(Debug, Parser)]
#[command(
    name = "text2flow",
    about = "Extract, diagnose, and score procedural graphs from natural-language documents"
)]
pub struct Cli {
    /// TOML config file (flags and env vars take precedence).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master random seed; all randomness derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Simulation trials per graph.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Maximum refinement rounds (round 0 is the initial build).
    #[arg(long, global = true)]
    pub rounds: Option<usize>,
    /// Feedback token budget per round.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Agent backend: `mock` or `http`.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the extraction pipeline on a document (or every *.txt in a
    /// directory).
    Extract {
        document: PathBuf,
        /// Parallel workers for directory mode; documents are independent.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Simulate a flow-text graph and report structural issues and branch
    /// frequencies.
    Simulate {
        graph: PathBuf,
        /// Also dump every trace as JSON lines.
        #[arg(long)]
        traces_out: Option<PathBuf>,
    },
    /// Score predicted graphs against gold graphs (directories paired by
    /// file name).
    Eval {
        pred: PathBuf,
        gold: PathBuf,
        /// Also dump the per-document match ledger.
        #[arg(long)]
        ledger: bool,
    },
}

pub fn run(cli: Cli) -> i32 {
    let overrides = CliOverrides {
        seed: cli.seed,
        trials: cli.trials,
        rounds: cli.rounds,
        budget: cli.budget,
        backend: match cli.backend.as_deref().map(str::parse) {
            Some(Ok(kind)) => Some(kind),
            Some(Err(err)) => {
                eprintln!("error: {err}");
                return 1;
            }
            None => None,
        },
        out: cli.out,
    };
    let file = match &cli.config {
        Some(path) => match config::load_file(path) {
            Ok(parsed) => Some(parsed),
            Err(err) => {
                eprintln!("error: {err}");
                return 1;
            }
        },
        None => None,
    };
    let env: HashMap<String, String> = std::env::vars().collect();
    let resolved = match config::resolve(&overrides, &env, file.as_ref()) {
        Ok(resolved) => resolved,
        Err(err) => {
            eprintln!("error: {err}");
            return 1;
        }
    };

    match cli.command {
        Command::Extract { document, workers } => cmd_extract(&document, &resolved, workers),
        Command::Simulate { graph, traces_out } => {
            cmd_simulate(&graph, &resolved, traces_out.as_deref())
        }
        Command::Eval { pred, gold, ledger } => cmd_eval(&pred, &gold, &resolved, ledger),
    }
}

fn make_backend(config: &CliConfig) -> Result<Box<dyn AgentBackend>, String> {
    match config.backend_kind {
        BackendKind::Mock => Ok(Box::new(MockBackend::new())),
        BackendKind::Http => HttpBackend::new(config.http.clone())
            .map(|b| Box::new(b) as Box<dyn AgentBackend>)
            .map_err(|e| e.to_string()),
    }
}

/// Extract one document or a whole directory of `*.txt` documents.
pub fn cmd_extract(document: &Path, config: &CliConfig, workers: usize) -> i32 {
    let backend = match make_backend(config) {
        Ok(backend) => backend,
        Err(message) => {
            eprintln!("error: {message}");
            return 1;
        }
    };
    if document.is_dir() {
        let mut docs: Vec<PathBuf> = match fs::read_dir(document) {
            Ok(entries) => entries
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
                .collect(),
            Err(err) => {
                eprintln!("error: cannot read directory {}: {err}", document.display());
                return 1;
            }
        };
        docs.sort();
        if docs.is_empty() {
            eprintln!("error: no *.txt documents in {}", document.display());
            return 1;
        }
        let queue = Mutex::new(docs.into_iter());
        let worst = Mutex::new(0i32);
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1) {
                scope.spawn(|| loop {
                    let Some(doc) = queue.lock().expect("queue lock").next() else {
                        break;
                    };
                    let code = extract_one(&doc, config, backend.as_ref());
                    let mut worst = worst.lock().expect("code lock");
                    *worst = (*worst).max(code);
                });
            }
        });
        worst.into_inner().expect("code lock")
    } else {
        extract_one(document, config, backend.as_ref())
    }
}

fn extract_one(document: &Path, config: &CliConfig, backend: &dyn AgentBackend) -> i32 {
    let text = match fs::read_to_string(document) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", document.display());
            return 1;
        }
    };
    let stem = document
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "document".to_string());
    let journal = config.out_dir.join(&stem);
    let mut orchestrator = Orchestrator::new(config.run.clone()).with_journal(&journal);
    orchestrator.shots = crate::agents::FewShotSet::standard_n(config.shots);
    match orchestrator.run(&text, backend) {
        Ok(outcome) => {
            println!(
                "{}: {} round(s), final graph {} node(s) / {} edge(s), journal at {}",
                stem,
                outcome.records.len(),
                outcome.graph.node_count(),
                outcome.graph.edge_count(),
                journal.display()
            );
            match outcome.error {
                Some(message) => {
                    eprintln!("warning: partial result for {stem}: {message}");
                    2
                }
                None => 0,
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

/// Simulate a graph file and print the diagnosis.
pub fn cmd_simulate(graph_path: &Path, config: &CliConfig, traces_out: Option<&Path>) -> i32 {
    let text = match fs::read_to_string(graph_path) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", graph_path.display());
            return 1;
        }
    };
    let (graph, diagnostics) = dsl::parse(&text);
    for diagnostic in &diagnostics {
        eprintln!("parse: {diagnostic}");
    }
    if graph.edge_count() == 0 {
        eprintln!("error: graph is empty");
        return 1;
    }

    let sim_config = SimulationConfig {
        trials: config.run.simulation.trials,
        seed: config.run.simulation.seed,
        ..config.run.simulation.clone()
    };
    let traces = simulator::simulate(&graph, &sim_config);
    let failing = traces.iter().filter(|t| t.issue.is_some()).count();
    println!(
        "trials: {}   successful: {}   failing: {}",
        traces.len(),
        traces.len() - failing,
        failing
    );

    let static_issues = simulator::detect_static_issues(&graph);
    if !static_issues.is_empty() {
        println!("\nstatic issues:");
        for issue in &static_issues {
            println!("  {}", issue.detail);
        }
    }

    let counts = simulator::aggregate_issue_counts(&traces);
    if !counts.is_empty() {
        println!("\ntrace issues (signature -> count):");
        for (signature, count) in &counts {
            println!("  {count:>8}  {}", simulator::describe_signature(&graph, signature));
        }
    }

    // per-branch frequencies: how often each gateway picked each target set
    let mut fires: BTreeMap<crate::graph::NodeId, BTreeMap<Vec<crate::graph::NodeId>, u64>> =
        BTreeMap::new();
    for trace in &traces {
        for choice in &trace.choices {
            let mut chosen = choice.chosen.clone();
            chosen.sort();
            *fires
                .entry(choice.gateway)
                .or_default()
                .entry(chosen)
                .or_insert(0) += 1;
        }
    }
    if !fires.is_empty() {
        println!("\nbranch frequencies:");
        for (gateway, sets) in &fires {
            let total: u64 = sets.values().sum();
            for (set, count) in sets {
                let names: Vec<String> = set.iter().map(|n| graph.node_label(*n)).collect();
                println!(
                    "  {:<8} -> {{{}}}  {:.4}",
                    graph.node_label(*gateway),
                    names.join(", "),
                    *count as f64 / total as f64
                );
            }
        }
    }

    if let Some(path) = traces_out {
        let mut body = String::new();
        for trace in &traces {
            body.push_str(&trace.to_json_value().to_string());
            body.push('\n');
        }
        if let Err(err) = fs::write(path, body) {
            eprintln!("error: cannot write {}: {err}", path.display());
            return 1;
        }
        println!("\ntraces written to {}", path.display());
    }
    0
}

/// Score a directory of predicted graphs against gold graphs.
pub fn cmd_eval(pred_dir: &Path, gold_dir: &Path, config: &CliConfig, dump_ledger: bool) -> i32 {
    let list = |dir: &Path| -> Result<BTreeMap<String, PathBuf>, String> {
        let entries = fs::read_dir(dir).map_err(|e| format!("cannot read {}: {e}", dir.display()))?;
        Ok(entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .filter_map(|p| {
                p.file_name()
                    .map(|n| (n.to_string_lossy().to_string(), p.clone()))
            })
            .collect())
    };
    let (pred_files, gold_files) = match (list(pred_dir), list(gold_dir)) {
        (Ok(p), Ok(g)) => (p, g),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    for name in pred_files.keys() {
        if !gold_files.contains_key(name) {
            eprintln!("warning: no gold file for {name}");
        }
    }
    for name in gold_files.keys() {
        if !pred_files.contains_key(name) {
            eprintln!("warning: no prediction for {name}");
        }
    }
    let paired: Vec<(&String, &PathBuf, &PathBuf)> = pred_files
        .iter()
        .filter_map(|(name, pred)| gold_files.get(name).map(|gold| (name, pred, gold)))
        .collect();
    if paired.is_empty() {
        eprintln!("error: no paired files between {} and {}", pred_dir.display(), gold_dir.display());
        return 1;
    }

    let mut per_doc: Vec<(String, BTreeMap<Category, CategoryScore>)> = Vec::new();
    let mut aggregate: BTreeMap<Category, (usize, usize, usize)> = BTreeMap::new();
    for (name, pred_path, gold_path) in paired {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()));
        let (pred_text, gold_text) = match (read(pred_path), read(gold_path)) {
            (Ok(p), Ok(g)) => (p, g),
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("warning: skipping {name}: {e}");
                continue;
            }
        };
        let (pred_graph, _) = dsl::parse(&pred_text);
        let (gold_graph, gold_diags) = dsl::parse(&gold_text);
        for d in &gold_diags {
            eprintln!("warning: gold {name}: {d}");
        }
        let report = evaluator::evaluate(&pred_graph, &gold_graph);
        for (category, score) in &report.scores {
            let entry = aggregate.entry(*category).or_insert((0, 0, 0));
            entry.0 += score.matched;
            entry.1 += score.predicted;
            entry.2 += score.gold;
        }
        if dump_ledger {
            let path = config.out_dir.join(format!("{name}.ledger.json"));
            if fs::create_dir_all(&config.out_dir).is_ok() {
                let _ = fs::write(&path, serde_json::to_string_pretty(&report.ledger).unwrap());
            }
        }
        per_doc.push((name.clone(), report.scores));
    }

    let aggregate_scores: BTreeMap<Category, CategoryScore> = aggregate
        .iter()
        .map(|(category, (m, p, g))| (*category, CategoryScore::from_counts(*m, *p, *g)))
        .collect();

    for (name, scores) in &per_doc {
        println!("\n# {name}");
        print_table(scores);
    }
    println!("\n# corpus aggregate ({} document(s))", per_doc.len());
    print_table(&aggregate_scores);

    if fs::create_dir_all(&config.out_dir).is_err() {
        eprintln!("error: cannot create {}", config.out_dir.display());
        return 1;
    }
    let csv_path = config.out_dir.join("report.csv");
    if let Err(err) = write_csv(&csv_path, &per_doc, &aggregate_scores) {
        eprintln!("error: {err}");
        return 1;
    }
    let json_path = config.out_dir.join("report.json");
    let json = serde_json::json!({
        "documents": per_doc
            .iter()
            .map(|(name, scores)| {
                serde_json::json!({
                    "document": name,
                    "scores": scores
                        .iter()
                        .map(|(c, s)| (c.name().to_string(), serde_json::to_value(s).unwrap()))
                        .collect::<serde_json::Map<String, serde_json::Value>>(),
                })
            })
            .collect::<Vec<_>>(),
        "aggregate": aggregate_scores
            .iter()
            .map(|(c, s)| (c.name().to_string(), serde_json::to_value(s).unwrap()))
            .collect::<serde_json::Map<String, serde_json::Value>>(),
    });
    if let Err(err) = fs::write(&json_path, serde_json::to_string_pretty(&json).unwrap()) {
        eprintln!("error: cannot write {}: {err}", json_path.display());
        return 1;
    }
    println!(
        "\nreports written to {} and {}",
        csv_path.display(),
        json_path.display()
    );
    0
}

fn print_table(scores: &BTreeMap<Category, CategoryScore>) {
    println!(
        "  {:<18} {:>7} {:>7} {:>7} {:>9} {:>9} {:>6}",
        "category", "P", "R", "F1", "matched", "predicted", "gold"
    );
    for category in Category::ALL {
        let Some(score) = scores.get(&category) else {
            continue;
        };
        if score.no_instances {
            println!("  {:<18} {:>7} {:>7} {:>7} {:>9} {:>9} {:>6}", category.name(), "-", "-", "-", 0, 0, 0);
        } else {
            println!(
                "  {:<18} {:>7.3} {:>7.3} {:>7.3} {:>9} {:>9} {:>6}",
                category.name(),
                score.precision,
                score.recall,
                score.f1,
                score.matched,
                score.predicted,
                score.gold
            );
        }
    }
}

fn write_csv(
    path: &Path,
    per_doc: &[(String, BTreeMap<Category, CategoryScore>)],
    aggregate: &BTreeMap<Category, CategoryScore>,
) -> Result<(), String> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| e.to_string());
    let writer = writer.as_mut().map_err(|e| e.clone())?;
    writer
        .write_record([
            "document",
            "category",
            "precision",
            "recall",
            "f1",
            "matched",
            "predicted",
            "gold",
        ])
        .map_err(|e| e.to_string())?;
    let mut write_rows = |doc: &str, scores: &BTreeMap<Category, CategoryScore>| -> Result<(), String> {
        for category in Category::ALL {
            let Some(score) = scores.get(&category) else {
                continue;
            };
            writer
                .write_record([
                    doc,
                    category.name(),
                    &format!("{:.6}", score.precision),
                    &format!("{:.6}", score.recall),
                    &format!("{:.6}", score.f1),
                    &score.matched.to_string(),
                    &score.predicted.to_string(),
                    &score.gold.to_string(),
                ])
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    };
    for (name, scores) in per_doc {
        write_rows(name, scores)?;
    }
    write_rows("__aggregate__", aggregate)?;
    writer.flush().map_err(|e| e.to_string())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_with_out(dir: &Path) -> CliConfig {
        let overrides = CliOverrides {
            out: Some(dir.to_path_buf()),
            trials: Some(300),
            seed: Some(5),
            ..CliOverrides::default()
        };
        config::resolve(&overrides, &HashMap::new(), None).unwrap()
    }

    #[test]
    fn extract_unreadable_path_is_exit_1() {
        let out = tempfile::tempdir().unwrap();
        let config = config_with_out(out.path());
        assert_eq!(cmd_extract(Path::new("/nonexistent/doc.txt"), &config, 1), 1);
    }

    #[test]
    fn extract_with_mock_writes_journal_and_exits_0() {
        let out = tempfile::tempdir().unwrap();
        let config = config_with_out(out.path());
        let doc = out.path().join("sample.txt");
        fs::write(&doc, "Receive the form. Check the signature. File the form.").unwrap();
        let code = cmd_extract(&doc, &config, 1);
        assert_eq!(code, 0);
        let journal = out.path().join("sample");
        assert!(journal.join("round_0.json").exists());
        assert!(journal.join("final.flow.txt").exists());
        let flow = fs::read_to_string(journal.join("final.flow.txt")).unwrap();
        let (graph, diags) = dsl::parse(&flow);
        assert!(diags.is_empty());
        assert!(graph.edge_count() > 0);
    }

    #[test]
    fn extract_directory_batch() {
        let out = tempfile::tempdir().unwrap();
        let config = config_with_out(out.path());
        let docs = tempfile::tempdir().unwrap();
        fs::write(docs.path().join("a.txt"), "Step one. Step two.").unwrap();
        fs::write(docs.path().join("b.txt"), "Alpha. Beta. Gamma.").unwrap();
        let code = cmd_extract(docs.path(), &config, 2);
        assert_eq!(code, 0);
        assert!(out.path().join("a").join("final.flow.txt").exists());
        assert!(out.path().join("b").join("final.flow.txt").exists());
    }

    #[test]
    fn simulate_empty_graph_is_exit_1() {
        let out = tempfile::tempdir().unwrap();
        let config = config_with_out(out.path());
        let path = out.path().join("empty.flow.txt");
        fs::write(&path, "just prose, no flows\n").unwrap();
        assert_eq!(cmd_simulate(&path, &config, None), 1);
    }

    #[test]
    fn simulate_writes_traces_and_exits_0_even_with_issues() {
        let out = tempfile::tempdir().unwrap();
        let config = config_with_out(out.path());
        let path = out.path().join("dead.flow.txt");
        fs::write(&path, "Start -> a\n").unwrap();
        let traces = out.path().join("traces.jsonl");
        assert_eq!(cmd_simulate(&path, &config, Some(&traces)), 0);
        let body = fs::read_to_string(&traces).unwrap();
        assert_eq!(body.lines().count(), 300);
        assert!(body.lines().next().unwrap().contains("dead_end"));
    }

    #[test]
    fn eval_identical_dirs_score_ones_and_write_reports() {
        let out = tempfile::tempdir().unwrap();
        let config = config_with_out(out.path());
        let pred = tempfile::tempdir().unwrap();
        let gold = tempfile::tempdir().unwrap();
        let flow = "For the clerk:\nStart -> receive the form\nreceive the form -> check the data\ncheck the data -> End\n";
        fs::write(pred.path().join("doc1.flow.txt"), flow).unwrap();
        fs::write(gold.path().join("doc1.flow.txt"), flow).unwrap();
        // unpaired file: warned, not fatal
        fs::write(pred.path().join("orphan.flow.txt"), flow).unwrap();
        let code = cmd_eval(pred.path(), gold.path(), &config, false);
        assert_eq!(code, 0);
        let report = fs::read_to_string(out.path().join("report.json")).unwrap();
        let value: serde_json::Value = serde_json::from_str(&report).unwrap();
        assert_eq!(value["aggregate"]["Action"]["f1"], 1.0);
        assert!(out.path().join("report.csv").exists());
    }

    #[test]
    fn eval_empty_dirs_exit_1() {
        let out = tempfile::tempdir().unwrap();
        let config = config_with_out(out.path());
        let pred = tempfile::tempdir().unwrap();
        let gold = tempfile::tempdir().unwrap();
        assert_eq!(cmd_eval(pred.path(), gold.path(), &config, false), 1);
    }
}
