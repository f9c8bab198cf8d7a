//! Command-line front end: compile automata to transformer specs, run and
//! verify them.
//!
//! Exit codes: 0 success, 1 verification failure, 2 bad input, 3 conflicting
//! flags, 4 input over the length or depth budget.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use automata2attn::automata::{
    bool_ta_to_wta, hmm_to_wfa, parse_tree, pfa_to_wfa, split_word, tree_to_str, wfa_states, BoolTreeAutomaton, Hmm,
    Pfa, Wfa, Wta,
};
use automata2attn::harness::{gen_trees, gen_words, parse_pautomac, verify_wfa, verify_wta, PautomacModel, TreeFamily};
use automata2attn::linalg::Matrix;
use automata2attn::scan::{prefix_scan_trace, sequential_fold, MatrixProduct};
use automata2attn::transformer::{AttentionMode, InputKind, TransformerSpec};
use automata2attn::wfa_compiler::{
    calibrate_saturation_with, compile_approx, compile_exact, random_words, simulate_word, PROBE_WORDS,
};
use automata2attn::wta_compiler::{compile_wta_with, simulate_tree, WtaOptions};
use automata2attn::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "automata2attn", version, about = "Compile weighted automata into transformer weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Approx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Seed for probes and generated datasets; echoed in every output.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile a WFA/HMM/PFA (words) or WTA/tree automaton (trees).
    Compile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "T")]
        t: usize,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long = "auto-C")]
        auto_c: bool,
        #[arg(long)]
        eps: Option<f64>,
        /// Parsing layers for tree models (default: deepest tree that fits T).
        #[arg(long)]
        depth: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a compiled spec on one word or tree.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        word: Option<String>,
        #[arg(long)]
        tree: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Check a compiled spec against its automaton on generated inputs.
    Verify {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        /// Tree family: balanced, comb or uniform.
        #[arg(long, default_value = "uniform")]
        family: String,
        /// Token length of generated inputs (default: the spec's budget).
        #[arg(long)]
        length: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Prefix-scan the transition matrices of a word.
    Scan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        word: String,
        #[command(flatten)]
        common: Common,
    },
    /// Compile and verify a word model over a ladder of lengths; emits CSV.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        ladder: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
    fn conflict(message: impl Into<String>) -> Self {
        Failure::new(3, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BudgetExceeded { .. } | Error::DepthExceeded { .. } => 4,
            _ => 2,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

enum Model {
    Words(Wfa),
    Trees(Wta),
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<Model> {
    let text = read(path)?;
    let Ok(v) = serde_json::from_str::<Value>(&text) else {
        return Ok(match parse_pautomac(&text)? {
            PautomacModel::Hmm(h) => Model::Words(hmm_to_wfa(&h)?),
            PautomacModel::Pfa(p) => Model::Words(pfa_to_wfa(&p)?),
        });
    };
    let has = |k: &str| v.get(k).is_some();
    let parse = |what: &str| Failure::new(2, format!("{}: not a valid {what} model", path.display()));
    let model = if has("tensor") {
        let a: Wta = serde_json::from_value(v.clone()).map_err(|_| parse("WTA"))?;
        a.validate()?;
        Model::Trees(a)
    } else if has("leaf_map") {
        let ta: BoolTreeAutomaton = serde_json::from_value(v.clone()).map_err(|_| parse("tree automaton"))?;
        Model::Trees(bool_ta_to_wta(&ta)?)
    } else if has("observation") {
        let h: Hmm = serde_json::from_value(v.clone()).map_err(|_| parse("HMM"))?;
        Model::Words(hmm_to_wfa(&h)?)
    } else if has("final") {
        let p: Pfa = serde_json::from_value(v.clone()).map_err(|_| parse("PFA"))?;
        Model::Words(pfa_to_wfa(&p)?)
    } else {
        let a: Wfa = serde_json::from_value(v.clone()).map_err(|_| parse("WFA"))?;
        a.validate()?;
        Model::Words(a)
    };
    Ok(model)
}

fn load_spec(path: &Path) -> CliResult<TransformerSpec> {
    let spec: TransformerSpec =
        serde_json::from_str(&read(path)?).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

fn write_out(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))
}

/// Prints `text` or writes it to `--out`.
fn emit(common: &Common, text: &str) -> CliResult {
    match &common.out {
        Some(p) => write_out(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("values serialize") + "\n"
}

fn flat_csv(v: &Value) -> String {
    let mut out = String::from("key,value\n");
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, x, out);
                }
            }
            Value::Array(a) => {
                let items: Vec<String> = a.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(out, "{prefix},\"{}\"", items.join(" ").replace('"', ""));
            }
            Value::String(s) => {
                let _ = writeln!(out, "{prefix},{s}");
            }
            _ => {
                let _ = writeln!(out, "{prefix},{v}");
            }
        }
    }
    walk("", v, &mut out);
    out
}

fn cmd_compile(
    model: &Path,
    t: usize,
    mode: Option<Mode>,
    c: Option<f64>,
    auto_c: bool,
    eps: Option<f64>,
    depth: Option<usize>,
    common: &Common,
) -> CliResult {
    if c.is_some() && auto_c {
        return Err(Failure::conflict("--C and --auto-C are mutually exclusive"));
    }
    let mode = match (mode, c.is_some() || auto_c) {
        (Some(Mode::Exact), true) => return Err(Failure::conflict("--C/--auto-C only apply to --mode approx")),
        (Some(m), _) => m,
        (None, true) => Mode::Approx,
        (None, false) => Mode::Exact,
    };
    if mode == Mode::Exact && eps.is_some() {
        return Err(Failure::conflict("--eps is the calibration target of --mode approx"));
    }
    let seed = common.seed;
    let (spec, report) = match load_model(model)? {
        Model::Words(a) => {
            if depth.is_some() {
                return Err(Failure::conflict("--depth applies to tree models only"));
            }
            match mode {
                Mode::Exact => {
                    let comp = compile_exact(&a, t)?;
                    (comp.spec, serde_json::to_value(&comp.report).expect("serializable"))
                }
                Mode::Approx => {
                    let (c, cal) = match c {
                        Some(c) => (c, None),
                        None => {
                            let probes = random_words(&a.alphabet, t, PROBE_WORDS, seed);
                            let cal = calibrate_saturation_with(&a, t, eps.unwrap_or(1e-3), &probes)?;
                            (cal.c, Some(cal))
                        }
                    };
                    let comp = compile_approx(&a, t, c)?;
                    let mut r = serde_json::to_value(&comp.report).expect("serializable");
                    if let Some(cal) = cal {
                        r["calibration"] = serde_json::to_value(cal).expect("serializable");
                    }
                    (comp.spec, r)
                }
            }
        }
        Model::Trees(a) => {
            let depth = depth.unwrap_or(t.div_ceil(3).saturating_sub(1).max(1));
            let opts = WtaOptions {
                attention: if mode == Mode::Exact { AttentionMode::Hard } else { AttentionMode::Soft },
                c,
                eps: eps.unwrap_or(1e-9),
                probe_seed: seed,
                ..Default::default()
            };
            let comp = compile_wta_with(&a, t, depth, &opts)?;
            let mut r = serde_json::to_value(&comp).expect("serializable");
            r.as_object_mut().expect("struct").remove("spec");
            r["kind"] = "wta".into();
            r["layers"] = comp.total_layers().into();
            (comp.spec, r)
        }
    };
    let mut report = report;
    report["seed"] = seed.into();
    let spec_json = serde_json::to_string(&spec).expect("serializable") + "\n";
    let rendered = match common.format {
        Format::Json => pretty(&report),
        Format::Csv => flat_csv(&report),
        Format::Text => {
            let mut s = String::new();
            for (k, v) in report.as_object().expect("object") {
                let _ = writeln!(s, "{k:<20} {}", if let Value::String(x) = v { x.clone() } else { v.to_string() });
            }
            s
        }
    };
    // without --out the spec goes to stdout and the report to stderr
    match &common.out {
        Some(p) => {
            write_out(p, &spec_json)?;
            print!("{rendered}");
        }
        None => {
            print!("{spec_json}");
            eprint!("{rendered}");
        }
    }
    Ok(())
}

fn rows_output(common: &Common, label: &str, rows: &[(usize, Vec<f64>)]) -> String {
    match common.format {
        Format::Csv => {
            let n = rows.first().map_or(0, |r| r.1.len());
            let mut s = format!("# seed={}\n{label}", common.seed);
            for k in 0..n {
                let _ = write!(s, ",s{k}");
            }
            s.push('\n');
            for (p, r) in rows {
                let cells: Vec<String> = r.iter().map(|x| format!("{x}")).collect();
                let _ = writeln!(s, "{p},{}", cells.join(","));
            }
            s
        }
        Format::Json | Format::Text => {
            let rows: Vec<Value> = rows.iter().map(|(p, r)| json!({ label: p, "state": r })).collect();
            pretty(&json!({ "seed": common.seed, "rows": rows }))
        }
    }
}

fn cmd_simulate(spec: &Path, word: Option<&str>, tree: Option<&str>, common: &Common) -> CliResult {
    let spec = load_spec(spec)?;
    let rows = match (word, tree, spec.input) {
        (Some(_), Some(_), _) => return Err(Failure::conflict("give either --word or --tree")),
        (None, None, _) => return Err(Failure::new(2, "give --word or --tree")),
        (Some(_), None, InputKind::Tree) => return Err(Failure::conflict("this spec reads trees; use --tree")),
        (None, Some(_), InputKind::Word) => return Err(Failure::conflict("this spec reads words; use --word")),
        (Some(w), None, InputKind::Word) => {
            let alphabet: Vec<String> = spec.embedding.tokens.keys().cloned().collect();
            let word = split_word(&alphabet, w);
            let s = simulate_word(&spec, &word)?;
            s.rows.into_iter().enumerate().collect::<Vec<_>>()
        }
        (None, Some(t), InputKind::Tree) => {
            let tree = parse_tree(t)?;
            let enc = tree_to_str(&tree);
            let out = simulate_tree(&spec, &enc)?;
            enc.index_set.iter().map(|&p| (p, out[p - 1].clone())).collect()
        }
    };
    emit(common, &rows_output(common, "position", &rows))
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    spec_path: &Path,
    model: &Path,
    count: usize,
    eps: f64,
    family: &str,
    length: Option<usize>,
    common: &Common,
) -> CliResult<bool> {
    let spec = load_spec(spec_path)?;
    let len = length.unwrap_or(spec.t_budget);
    let report = match (load_model(model)?, spec.input) {
        (Model::Words(a), InputKind::Word) => {
            let words = gen_words(&a.alphabet, len, count, common.seed)?.words();
            verify_wfa(&a, &spec, &words, eps)?
        }
        (Model::Trees(a), InputKind::Tree) => {
            let family: TreeFamily = family.parse()?;
            let trees = gen_trees(&a.alphabet, len, family, count, common.seed)?.trees()?;
            verify_wta(&a, &spec, &trees, eps)?
        }
        _ => return Err(Failure::new(2, "model and spec disagree on words versus trees")),
    };
    let text = match common.format {
        Format::Json => {
            let mut v = serde_json::to_value(&report).expect("serializable");
            v["seed"] = common.seed.into();
            pretty(&v)
        }
        Format::Csv => {
            let mut s = format!("# seed={}\nindex,input,error,max_abs\n", common.seed);
            for r in &report.inputs {
                let _ = writeln!(s, "{},{},{:e},{:e}", r.index, r.input, r.error, r.max_abs);
            }
            s
        }
        Format::Text => format!("seed {}\n{report}", common.seed),
    };
    emit(common, &text)?;
    Ok(report.passed)
}

fn cmd_scan(model: &Path, word: &str, common: &Common) -> CliResult {
    let Model::Words(a) = load_model(model)? else {
        return Err(Failure::new(2, "scan needs a word model"));
    };
    let word = split_word(&a.alphabet, word);
    let mats: Vec<Matrix> = a.word_matrices(&word)?.into_iter().cloned().collect();
    let monoid = MatrixProduct { n: a.n };
    let trace = prefix_scan_trace(&monoid, &mats);
    let fold = sequential_fold(&monoid, &mats);
    let diff = trace
        .output
        .iter()
        .zip(&fold)
        .map(|(x, y)| x.sub(y).map(|d| d.max_abs()).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let states = wfa_states(&a, &word)?;
    let v = json!({
        "seed": common.seed,
        "length": word.len(),
        "rounds": trace.rounds,
        "max_diff_vs_sequential": diff,
        "states": states.rows,
    });
    let text = match common.format {
        Format::Csv => {
            let rows: Vec<(usize, Vec<f64>)> = states.rows.into_iter().enumerate().collect();
            format!("# rounds={}\n{}", trace.rounds, rows_output(common, "position", &rows))
        }
        _ => pretty(&v),
    };
    emit(common, &text)
}

fn cmd_bench(model: &Path, ladder: &[usize], mode: Mode, eps: Option<f64>, count: usize, common: &Common) -> CliResult {
    let Model::Words(a) = load_model(model)? else {
        return Err(Failure::new(2, "bench runs on word models"));
    };
    if mode == Mode::Exact && eps.is_some() {
        return Err(Failure::conflict("--eps is the calibration target of --mode approx"));
    }
    let mut csv = format!(
        "# seed={}\nT,L,d,heads,attention_width,mlp_width,C,compile_ms,verify_ms,max_error\n",
        common.seed
    );
    for &t in ladder {
        let start = Instant::now();
        let (spec, report) = match mode {
            Mode::Exact => {
                let c = compile_exact(&a, t)?;
                (c.spec, c.report)
            }
            Mode::Approx => {
                let probes = random_words(&a.alphabet, t, PROBE_WORDS, common.seed);
                let cal = calibrate_saturation_with(&a, t, eps.unwrap_or(1e-3), &probes)?;
                let c = compile_approx(&a, t, cal.c)?;
                (c.spec, c.report)
            }
        };
        let compile_ms = start.elapsed().as_secs_f64() * 1e3;
        let words = gen_words(&a.alphabet, t, count, common.seed)?.words();
        let start = Instant::now();
        let r = verify_wfa(&a, &spec, &words, f64::INFINITY)?;
        let verify_ms = start.elapsed().as_secs_f64() * 1e3;
        let _ = writeln!(
            csv,
            "{t},{},{},{},{},{},{},{compile_ms:.3},{verify_ms:.3},{:e}",
            report.layers,
            report.d,
            report.heads_per_layer,
            report.attention_width,
            report.mlp_width,
            report.c.map_or(String::new(), |c| c.to_string()),
            r.max_error
        );
    }
    emit(common, &csv)
}

fn configure_threads() -> CliResult {
    if let Ok(v) = std::env::var("AUTOMATA2ATTN_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::new(2, format!("AUTOMATA2ATTN_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(2, e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<bool> {
    configure_threads()?;
    match &cli.command {
        Command::Compile { model, t, mode, c, auto_c, eps, depth, common } => {
            cmd_compile(model, *t, *mode, *c, *auto_c, *eps, *depth, common)?
        }
        Command::Simulate { spec, word, tree, common } => cmd_simulate(spec, word.as_deref(), tree.as_deref(), common)?,
        Command::Verify { spec, model, count, eps, family, length, common } => {
            return cmd_verify(spec, model, *count, *eps, family, *length, common)
        }
        Command::Scan { model, word, common } => cmd_scan(model, word, common)?,
        Command::Bench { model, ladder, mode, eps, count, common } => {
            cmd_bench(model, ladder, *mode, *eps, *count, common)?
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
