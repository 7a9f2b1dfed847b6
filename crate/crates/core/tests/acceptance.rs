//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `BOOKTREE_BLESS=1` rewrites the golden prompt files.
//! `BOOKTREE_LIVE_BOOK=<path>` together with `BOOKTREE_BACKEND_URL` runs the
//! live-endpoint check.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use booktree_core::backend::{BackendConfig, BackendKind, ExtractiveStub, RemoteBackend};
use booktree_core::curriculum::{draw_episodes, draw_nodes, Stage};
use booktree_core::engine::{trace_provenance, Checkpoint, Executor, RunParams, RunState};
use booktree_core::eval::{
    bootstrap_sem, length_adjusted_score, likert_aggregate, rouge_l, rouge_n, rouge_tokens, ScoredSummary,
};
use booktree_core::feedback::TimeModel;
use booktree_core::segment::{filter_front_back_matter, plan_tree};
use booktree_core::{
    default_tokenizer, BookDocument, BookId, FixedClock, NodeId, SummaryId, TaskTree, Timestamp, TokenBudget,
    Tokenizer,
};
use common::{chi_square, lcs_exhaustive, synthetic_book, synthetic_text, Recording};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn clock() -> FixedClock {
    FixedClock(Timestamp::from_unix(1_700_000_000))
}

fn tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests")
}

fn tree_shape() -> Outcome {
    let tok = default_tokenizer();
    let budget = TokenBudget::default();
    let mut ok = 0;
    let mut slowest = 0.0f64;
    let mut shapes = Vec::new();
    for i in 0..20u64 {
        let text = synthetic_text(1000 + i, 120_000, tok.as_ref(), i % 2 == 0);
        let book = BookDocument::new(format!("shape-{i}"), "Shape", &text, BTreeMap::new());
        let start = Instant::now();
        let tree = plan_tree(&book, &budget, tok.as_ref(), i).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let leaves = tree.leaves().len();
        let h1 = tree.nodes.values().filter(|n| n.height == 1).count();
        let height = tree.height();
        if (180..=220).contains(&leaves) && (15..=25).contains(&h1) && height == 3 {
            ok += 1;
        }
        shapes.push(format!("{leaves}/{h1}/{height}"));
    }
    ensure(ok >= 18, || format!("only {ok}/20 books in range; leaves/h1/height: {}", shapes.join(" ")))?;
    ensure(slowest < 5.0, || format!("slowest plan took {slowest:.2} s"))?;
    Ok(format!("{ok}/20 books with 180-220 leaves, 15-25 height-1 nodes, height 3; slowest plan {slowest:.2} s"))
}

fn partition() -> Outcome {
    let tok = default_tokenizer();
    let budget = TokenBudget::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = Vec::new();
    let mut pairs = 0;
    for b in 0..50u64 {
        let size = rng.random_range(300..30_000);
        let text = synthetic_text(5000 + b, size, tok.as_ref(), b % 3 == 0);
        let book = BookDocument::new(format!("part-{b}"), "Part", &text, BTreeMap::new());
        let filtered = filter_front_back_matter(&book.text);
        for _ in 0..20 {
            let seed = rng.random::<u64>();
            pairs += 1;
            let tree = plan_tree(&book, &budget, tok.as_ref(), seed).map_err(|e| e.to_string())?;
            let mut spans: Vec<[usize; 2]> = tree.leaves().iter().map(|n| n.char_span.unwrap()).collect();
            spans.sort();
            let mut at = filtered.body.start;
            let mut bad = None;
            for [s, e] in &spans {
                if *s != at || e <= s {
                    bad = Some(format!("book {b} seed {seed}: span {s}..{e} where {at} was expected"));
                    break;
                }
                at = *e;
            }
            if bad.is_none() && at != filtered.body.end {
                bad = Some(format!("book {b} seed {seed}: coverage ends at {at}, body ends at {}", filtered.body.end));
            }
            let joined: String = spans.iter().map(|[s, e]| &book.text[*s..*e]).collect();
            if bad.is_none() && joined != filtered.text {
                bad = Some(format!("book {b} seed {seed}: leaf texts do not concatenate to the body"));
            }
            violations.extend(bad);
        }
    }
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    Ok(format!("{pairs} (book, seed) pairs, 0 violations"))
}

fn blessing() -> bool {
    std::env::var("BOOKTREE_BLESS").is_ok_and(|v| v == "1")
}

fn golden_book() -> Result<BookDocument, String> {
    let path = tests_dir().join("fixtures/golden_book.txt");
    if blessing() && !path.exists() {
        let t = synthetic_text(2024, 15_000, default_tokenizer().as_ref(), true);
        std::fs::write(&path, t).map_err(|e| e.to_string())?;
    }
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(BookDocument::new("golden", "Golden", &text, BTreeMap::new()))
}

fn recorded_run(book: &BookDocument, tree: &TaskTree) -> Result<(RunState, Vec<booktree_core::backend::CompletionRequest>), String> {
    let tok = default_tokenizer();
    let backend = Recording::new(ExtractiveStub::new(tok.clone()));
    let clock = clock();
    let exec = Executor::new(tree, book, &backend, tok.as_ref(), &clock).map_err(|e| e.to_string())?;
    let mut state = RunState::new(tree.id.clone(), RunParams::default());
    exec.run(&mut state, |_| ControlFlow::Continue(())).map_err(|e| e.to_string())?;
    let requests = backend.requests.into_inner();
    Ok((state, requests))
}

fn budget_violations(tree: &TaskTree, requests: &[booktree_core::backend::CompletionRequest], tok: &dyn Tokenizer) -> Vec<String> {
    let order = tree.postorder();
    requests
        .iter()
        .zip(order)
        .filter_map(|(r, n)| {
            let prompt = tok.count(&r.prompt);
            let limit = tree.budget.summary_limit(n.height);
            (r.max_tokens != limit || prompt + limit > tree.budget.context_window)
                .then(|| format!("{}: prompt {prompt} + limit {} (height limit {limit})", n.id, r.max_tokens))
        })
        .collect()
}

fn goldens() -> Outcome {
    let tok = default_tokenizer();
    let book = golden_book()?;
    let tree = plan_tree(&book, &TokenBudget::default(), tok.as_ref(), 3).map_err(|e| e.to_string())?;
    let (_, requests) = recorded_run(&book, &tree)?;
    let order = tree.postorder();
    ensure(requests.len() == order.len(), || "not every node was executed".into())?;

    let internal: Vec<usize> = (0..order.len()).filter(|&i| !order[i].is_leaf()).take(3).collect();
    let leaves: Vec<usize> = (0..order.len()).filter(|&i| order[i].is_leaf()).collect();
    let wanted_leaves = 10 - internal.len();
    let mut picks: Vec<usize> = (0..wanted_leaves)
        .map(|k| leaves[k * (leaves.len() - 1) / (wanted_leaves - 1)])
        .chain(internal)
        .collect();
    picks.sort();
    picks.dedup();
    ensure(picks.len() == 10, || format!("only {} distinct fixture nodes", picks.len()))?;

    let dir = tests_dir().join("golden");
    let bless = blessing();
    let mut mismatched = Vec::new();
    let mut grammar = [false; 3];
    for (k, &i) in picks.iter().enumerate() {
        let prompt = &requests[i].prompt;
        grammar[0] |= prompt.contains("\n----\n");
        grammar[1] |= prompt.contains("\n====\n");
        grammar[2] |= prompt.ends_with("\nTL;DR:");
        let path = dir.join(format!("prompt-{k:02}-h{}.txt", order[i].height));
        if bless {
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            std::fs::write(&path, prompt).map_err(|e| e.to_string())?;
        }
        match std::fs::read(&path) {
            Ok(expected) if expected == prompt.as_bytes() => {}
            Ok(_) => mismatched.push(path.file_name().unwrap().to_string_lossy().into_owned()),
            Err(e) => mismatched.push(format!("{}: {e}", path.display())),
        }
    }
    ensure(mismatched.is_empty(), || format!("golden mismatch: {}", mismatched.join(", ")))?;
    ensure(grammar.iter().all(|&g| g), || format!("grammar markers missing: {grammar:?}"))?;

    let mut checked = requests.len();
    let mut violations = budget_violations(&tree, &requests, tok.as_ref());
    let big = synthetic_book(31, 120_000, tok.as_ref());
    let big_tree = plan_tree(&big, &TokenBudget::default(), tok.as_ref(), 0).map_err(|e| e.to_string())?;
    let (_, big_requests) = recorded_run(&big, &big_tree)?;
    checked += big_requests.len();
    violations.extend(budget_violations(&big_tree, &big_requests, tok.as_ref()));
    ensure(violations.is_empty(), || format!("budget violations: {}", violations.join("; ")))?;
    Ok(format!("10 goldens byte-exact; prompt + limit <= 2048 on all {checked} executed nodes"))
}

fn determinism() -> Outcome {
    let tok = default_tokenizer();
    let book = synthetic_book(41, 40_000, tok.as_ref());
    let tree = plan_tree(&book, &TokenBudget::default(), tok.as_ref(), 5).map_err(|e| e.to_string())?;
    let stub = ExtractiveStub::new(tok.clone());
    let clock = clock();
    let exec = Executor::new(&tree, &book, &stub, tok.as_ref(), &clock).map_err(|e| e.to_string())?;
    let params = RunParams {
        temperature: 0.6,
        sample_seed: 99,
        question: None,
    };
    let full = |state: &mut RunState| exec.run(state, |_| ControlFlow::Continue(())).map_err(|e| e.to_string());
    let mut a = RunState::new(tree.id.clone(), params.clone());
    let mut b = RunState::new(tree.id.clone(), params.clone());
    full(&mut a)?;
    full(&mut b)?;
    let bytes = |s: &RunState| serde_json::to_vec(&s.records().collect::<Vec<_>>()).unwrap();
    ensure(bytes(&a) == bytes(&b), || "two runs with one seed differ".into())?;

    // interrupted run: stop halfway, tear the last checkpoint line, resume from disk
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let checkpoint = Checkpoint::new(dir.path().join("run.jsonl"));
    let mut partial = RunState::new(tree.id.clone(), params.clone());
    checkpoint.write_all(&partial).map_err(|e| e.to_string())?;
    let stop_after = tree.nodes.len() / 2;
    exec.run(&mut partial, |s| {
        checkpoint.append_last(s).expect("checkpoint append");
        if s.entries.len() == stop_after {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .map_err(|e| e.to_string())?;
    let mut raw = std::fs::read_to_string(checkpoint.path()).map_err(|e| e.to_string())?;
    raw.push_str("{\"node_id\":\"half-writ");
    std::fs::write(checkpoint.path(), raw).map_err(|e| e.to_string())?;
    let mut resumed = checkpoint.load().map_err(|e| e.to_string())?;
    ensure(resumed.entries.len() == stop_after, || {
        format!("checkpoint held {} entries, expected {stop_after}", resumed.entries.len())
    })?;
    let exec2 = Executor::new(&tree, &book, &stub, tok.as_ref(), &clock).map_err(|e| e.to_string())?;
    exec2.run(&mut resumed, |_| ControlFlow::Continue(())).map_err(|e| e.to_string())?;
    let state_bytes = |s: &RunState| serde_json::to_vec(s).unwrap();
    ensure(state_bytes(&resumed) == state_bytes(&a), || "resumed run differs from an uninterrupted one".into())?;
    Ok(format!(
        "{} summaries byte-identical across reruns; resume after {stop_after} nodes and a torn line matches",
        a.entries.len()
    ))
}

fn rouge() -> Outcome {
    let start = Instant::now();
    let vocab = ["a", "b", "c", "d", "e"];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seq = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(0..=10);
        (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
    };
    for i in 0..10_000 {
        let c = seq(&mut rng);
        let r = seq(&mut rng);
        let (ct, rt) = (rouge_tokens(&c), rouge_tokens(&r));
        let lcs = lcs_exhaustive(&ct, &rt);
        let got = rouge_l(&c, &r);
        let (p, rc) = if lcs == 0 {
            (0.0, 0.0)
        } else {
            (lcs as f64 / ct.len() as f64, lcs as f64 / rt.len() as f64)
        };
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        ensure(
            (got.precision - p).abs() < 1e-12 && (got.recall - rc).abs() < 1e-12 && (got.f1 - f).abs() < 1e-12,
            || format!("pair {i} ({c:?}, {r:?}): got {got:?}, oracle lcs {lcs}"),
        )?;
    }
    // hand-counted: candidate "the cat sat on the mat", reference "the cat lay on the mat"
    // unigrams: 5 of 6 match; bigrams: the cat, on the, the mat = 3 of 5
    let c = "The cat sat on the mat.";
    let r = "the cat lay on the mat";
    let r1 = rouge_n(c, r, 1).map_err(|e| e.to_string())?;
    let r2 = rouge_n(c, r, 2).map_err(|e| e.to_string())?;
    ensure((r1.precision - 5.0 / 6.0).abs() < 1e-12 && (r1.recall - 5.0 / 6.0).abs() < 1e-12, || format!("{r1:?}"))?;
    ensure((r2.precision - 0.6).abs() < 1e-12 && (r2.recall - 0.6).abs() < 1e-12, || format!("{r2:?}"))?;
    // clipping: "the the the" vs "the cat" -> 1 of 3 unigrams, recall 1 of 2
    let clip = rouge_n("the the the", "the cat", 1).map_err(|e| e.to_string())?;
    ensure((clip.precision - 1.0 / 3.0).abs() < 1e-12 && (clip.recall - 0.5).abs() < 1e-12, || format!("{clip:?}"))?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 30.0, || format!("took {elapsed:.1} s"))?;
    Ok(format!("10000 random pairs match the exhaustive LCS oracle; n-gram fixtures exact; {elapsed:.2} s"))
}

/// Probability of each node under "uniform depth, then uniform node".
fn depth_then_node(tree: &TaskTree, keep: impl Fn(&booktree_core::TaskNode) -> bool) -> HashMap<NodeId, f64> {
    let levels: Vec<Vec<&NodeId>> = (0..=tree.max_depth())
        .map(|d| tree.nodes_at_depth(d).into_iter().filter(|n| keep(n)).map(|n| &n.id).collect::<Vec<_>>())
        .filter(|l| !l.is_empty())
        .collect();
    let mut p = HashMap::new();
    for level in &levels {
        for id in level {
            p.insert((*id).clone(), 1.0 / levels.len() as f64 / level.len() as f64);
        }
    }
    p
}

fn fit(draws: impl IntoIterator<Item = NodeId>, expected: &HashMap<NodeId, f64>) -> Result<f64, String> {
    let mut counts: HashMap<NodeId, u64> = HashMap::new();
    for d in draws {
        ensure(expected.contains_key(&d), || format!("drew {d}, which has probability 0"))?;
        *counts.entry(d).or_default() += 1;
    }
    let ids: Vec<&NodeId> = expected.keys().collect();
    let observed: Vec<u64> = ids.iter().map(|id| counts.get(*id).copied().unwrap_or(0)).collect();
    let probs: Vec<f64> = ids.iter().map(|id| expected[*id]).collect();
    Ok(chi_square(&observed, &probs).1)
}

fn sampling() -> Outcome {
    let tok = default_tokenizer();
    let mut worst = 1.0f64;
    let mut report = Vec::new();
    for (i, size) in [(0u64, 8_000usize), (1, 40_000), (2, 120_000)] {
        let book = synthetic_book(60 + i, size, tok.as_ref());
        let tree = plan_tree(&book, &TokenBudget::default(), tok.as_ref(), i).map_err(|e| e.to_string())?;
        let nodes = fit(draw_nodes(&tree, Stage::FullTree, 10 + i, 30_000), &depth_then_node(&tree, |_| true))?;
        let episodes = draw_episodes(&tree, Stage::FullTree, 20 + i, 30_000).map_err(|e| e.to_string())?;
        let tails = episodes.into_iter().map(|e| e.composition_tail.expect("variant 3 has a tail"));
        let eps = fit(tails, &depth_then_node(&tree, |n| !n.is_leaf()))?;
        worst = worst.min(nodes).min(eps);
        report.push(format!("{} nodes: p={nodes:.3}/{eps:.3}", tree.nodes.len()));
    }
    ensure(worst > 0.01, || format!("chi-square rejects: {}", report.join(", ")))?;
    Ok(format!("30000 draws per tree, node/episode p-values {}", report.join(", ")))
}

fn statistics() -> Outcome {
    let book = |s: &str| BookId::new(s);
    let ratings = [
        (book("a"), 5.0),
        (book("a"), 6.0),
        (book("a"), 7.0),
        (book("b"), 3.0),
        (book("b"), 5.0),
        (book("c"), 4.0),
    ];
    let agg = likert_aggregate(&ratings).map_err(|e| e.to_string())?;
    // book means 6, 4, 4: mean 14/3, sample sd sqrt(4/3), SEM 2/3
    ensure((agg.mean - 14.0 / 3.0).abs() < 1e-12, || format!("likert mean {}", agg.mean))?;
    ensure(agg.sem.is_some_and(|s| (s - 2.0 / 3.0).abs() < 1e-12), || format!("likert sem {:?}", agg.sem))?;

    let values: Vec<f64> = (0..400).map(|i| if i % 10 < 3 { 1.0 } else { 0.0 }).collect();
    let analytic = (0.3f64 * 0.7 / 400.0).sqrt();
    let boot = bootstrap_sem(&values, 2000, 11).map_err(|e| e.to_string())?;
    let rel = (boot - analytic).abs() / analytic;
    ensure(rel < 0.10, || format!("bootstrap {boot:.5} vs analytic {analytic:.5}"))?;

    let item = |i: usize, len: usize, score: f64| ScoredSummary {
        summary_id: SummaryId::new(format!("s{i}")),
        length_tokens: len,
        score,
        book_id: book("x"),
    };
    let planted: Vec<ScoredSummary> = (0..50)
        .map(|i| {
            let len = 300 + 17 * i + (i * i) % 23;
            item(i, len, 0.25 + 3.5e-4 * len as f64)
        })
        .collect();
    let fit = length_adjusted_score(&planted, 1000.0).map_err(|e| e.to_string())?;
    ensure((fit.slope - 3.5e-4).abs() < 1e-8, || format!("slope {}", fit.slope))?;
    let at_mean = length_adjusted_score(&planted, fit.mean_length).map_err(|e| e.to_string())?;
    ensure((at_mean.adjusted_mean - at_mean.raw_mean).abs() < 1e-12, || "target = mean length moved the mean".into())?;

    let model = TimeModel::default();
    let demo = model.demonstration_total();
    let speedup = model.comparison_speedup();
    ensure((demo - 6.5).abs() < 1e-12, || format!("demonstration {demo} min"))?;
    ensure((2.5..=3.5).contains(&speedup), || format!("speedup {speedup}"))?;
    Ok(format!(
        "likert 14/3 ± 2/3; bootstrap {boot:.4} vs {analytic:.4}; slope {:.3e}; demo {demo} min, speedup {speedup:.2}x",
        fit.slope
    ))
}

fn live_endpoint() -> Option<Outcome> {
    let path = std::env::var("BOOKTREE_LIVE_BOOK").ok()?;
    let run = || -> Outcome {
        let tok = default_tokenizer();
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
        let book = BookDocument::new("live", "Live", &text, BTreeMap::new());
        let tree = plan_tree(&book, &TokenBudget::default(), tok.as_ref(), 0).map_err(|e| e.to_string())?;
        ensure(tree.height() >= 2, || format!("tree height {} < 2; use a longer text", tree.height()))?;
        let config = BackendConfig {
            kind: BackendKind::Remote,
            ..BackendConfig::default()
        };
        let remote = RemoteBackend::new(config, tok.clone()).map_err(|e| e.to_string())?;
        let backend = Recording::new(remote);
        let clock = booktree_core::SystemClock;
        let exec = Executor::new(&tree, &book, &backend, tok.as_ref(), &clock).map_err(|e| e.to_string())?;
        let mut state = RunState::new(tree.id.clone(), RunParams::default());
        exec.run(&mut state, |_| ControlFlow::Continue(())).map_err(|e| e.to_string())?;
        let violations = budget_violations(&tree, &backend.requests.lock(), tok.as_ref());
        ensure(violations.is_empty(), || violations.join("; "))?;
        let summaries = state.summaries();
        for id in tree.nodes.keys() {
            let p = trace_provenance(&tree, &summaries, id).map_err(|e| e.to_string())?;
            ensure(p.chain.iter().chain(&p.ancestors).all(|s| s.summary.is_some()), || {
                format!("{id} has an untraceable step")
            })?;
        }
        Ok(format!("{} nodes, height {}, all traceable", tree.nodes.len(), tree.height()))
    };
    Some(run())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("tree-shape", tree_shape),
        ("partition", partition),
        ("prompt-goldens-and-budget", goldens),
        ("determinism-and-resume", determinism),
        ("rouge-oracle", rouge),
        ("sampling-law", sampling),
        ("statistics-fixtures", statistics),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {why}");
            }
        }
    }
    match live_endpoint() {
        None => println!("SKIP live-endpoint: set BOOKTREE_LIVE_BOOK and BOOKTREE_BACKEND_URL to run"),
        Some(Ok(detail)) => println!("PASS live-endpoint: {detail}"),
        Some(Err(why)) => {
            failed += 1;
            println!("FAIL live-endpoint: {why}");
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
