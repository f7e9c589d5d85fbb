//! Helpers shared by the integration tests: random fact sets, reference oracles, a stub
//! scorer server and the desk-scale training run.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xf2t_core::exec::ExecMode;
use xf2t_core::facts::{CorpusInstance, FactTriple, PropertyKind};
use xf2t_core::generate::generate_batch;
use xf2t_core::linearize::{build_vocab, LinearizedInput, RoleId};
use xf2t_core::metrics::bleu;
use xf2t_core::model::{init_model, loss_and_grads, Batch, BeamConfig, ModelConfig, ModelParams, StepScorer};
use xf2t_core::synth::{split_by_entity, synth_corpus, SynthSpec};
use xf2t_core::train::{build_view, train_with, Setup, TrainConfig};

// ---------------------------------------------------------------------------------------
// Random fact sets

const WORDS: [&str; 16] = [
    "alpha", "Beta", "gamma", "1901", "x", "Chief", "Minister", "of", "Gujarat", "São", "Paulo", "ümlaut",
    "generate", "held", "q-7", "3.5",
];

pub fn random_field(rng: &mut ChaCha8Rng, allow_empty: bool) -> String {
    let lo = usize::from(!allow_empty);
    let n = rng.gen_range(lo..=4);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// 1..=10 facts, each with 0..=4 qualifiers.
pub fn random_facts(rng: &mut ChaCha8Rng) -> Vec<FactTriple> {
    let n = rng.gen_range(1..=10);
    (0..n)
        .map(|_| {
            let kind = if rng.gen_bool(0.5) { PropertyKind::WikibaseItem } else { PropertyKind::Time };
            let mut f = FactTriple::new(random_field(rng, false), random_field(rng, false), random_field(rng, false), kind);
            for _ in 0..rng.gen_range(0..=4) {
                f = f.with_qualifier(&random_field(rng, false), &random_field(rng, false));
            }
            f
        })
        .collect()
}

/// Tokens and roles built from the structure directly: each token's role is the role of
/// the field it was emitted for.
pub fn structural_roles(facts: &[FactTriple], lang: &str, title: &str) -> (Vec<String>, Vec<RoleId>) {
    let mut toks = Vec::new();
    let mut roles = Vec::new();
    let push = |marker: &str, text: &str, role: RoleId, toks: &mut Vec<String>, roles: &mut Vec<RoleId>| {
        toks.push(marker.to_string());
        roles.push(role);
        for w in text.split_whitespace() {
            toks.push(w.to_string());
            roles.push(role);
        }
    };
    toks.extend(["generate".to_string(), lang.to_string()]);
    roles.extend([RoleId::Other, RoleId::Other]);
    for f in facts {
        push("⟨S⟩", &f.subject, RoleId::Subject, &mut toks, &mut roles);
        push("⟨R⟩", &f.relation, RoleId::Relation, &mut toks, &mut roles);
        push("⟨O⟩", &f.object, RoleId::Object, &mut toks, &mut roles);
        for q in &f.qualifiers {
            push("⟨R⟩", &q.qual_relation, RoleId::Relation, &mut toks, &mut roles);
            push("⟨O⟩", &q.qual_value, RoleId::Object, &mut toks, &mut roles);
        }
    }
    push("⟨T⟩", title, RoleId::Other, &mut toks, &mut roles);
    (toks, roles)
}

// ---------------------------------------------------------------------------------------
// Brute-force metric oracles. These deliberately avoid hashing: n-grams are materialized
// as owned vectors and counted by linear scans.

fn grams<T: Clone + PartialEq>(xs: &[T], n: usize) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= xs.len() {
        out.push(xs[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn count_in<T: PartialEq>(g: &T, pool: &[T]) -> usize {
    pool.iter().filter(|x| *x == g).count()
}

/// Clipped matches, hypothesis total, reference total.
fn clipped<T: Clone + PartialEq>(h: &[T], r: &[T], n: usize) -> (f64, f64, f64) {
    let hg = grams(h, n);
    let rg = grams(r, n);
    let mut seen: Vec<Vec<T>> = Vec::new();
    let mut m = 0;
    for g in &hg {
        if seen.contains(g) {
            continue;
        }
        seen.push(g.clone());
        m += count_in(g, &hg).min(count_in(g, &rg));
    }
    (m as f64, hg.len() as f64, rg.len() as f64)
}

pub fn oracle_bleu(hyps: &[String], refs: &[String]) -> f64 {
    let mut num = [0.0; 4];
    let mut den = [0.0; 4];
    let (mut c, mut r) = (0.0, 0.0);
    for (h, rf) in hyps.iter().zip(refs) {
        let hw: Vec<&str> = h.split_whitespace().collect();
        let rw: Vec<&str> = rf.split_whitespace().collect();
        c += hw.len() as f64;
        r += rw.len() as f64;
        for n in 0..4 {
            let (m, t, _) = clipped(&hw, &rw, n + 1);
            num[n] += m;
            den[n] += t;
        }
    }
    if c == 0.0 {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 0..4 {
        if den[n] == 0.0 {
            continue;
        }
        if num[n] == 0.0 {
            return 0.0;
        }
        logs.push((num[n] / den[n]).ln());
    }
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

pub fn oracle_chrf(hyps: &[String], refs: &[String]) -> f64 {
    let mut stats = vec![(0.0, 0.0, 0.0); 8];
    for (h, rf) in hyps.iter().zip(refs) {
        let hc: Vec<char> = h.chars().filter(|c| !c.is_whitespace()).collect();
        let rc: Vec<char> = rf.chars().filter(|c| !c.is_whitespace()).collect();
        let hw: Vec<&str> = h.split_whitespace().collect();
        let rw: Vec<&str> = rf.split_whitespace().collect();
        for n in 1..=6 {
            let (m, a, b) = clipped(&hc, &rc, n);
            let s: &mut (f64, f64, f64) = &mut stats[n - 1];
            s.0 += m;
            s.1 += a;
            s.2 += b;
        }
        for n in 1..=2 {
            let (m, a, b) = clipped(&hw, &rw, n);
            let s = &mut stats[5 + n];
            s.0 += m;
            s.1 += a;
            s.2 += b;
        }
    }
    let mut f = Vec::new();
    for (m, a, b) in stats {
        if a == 0.0 || b == 0.0 {
            continue;
        }
        let p = m / a;
        let rc = m / b;
        f.push(if m == 0.0 { 0.0 } else { 5.0 * p * rc / (4.0 * p + rc) });
    }
    if f.is_empty() {
        0.0
    } else {
        100.0 * f.iter().sum::<f64>() / f.len() as f64
    }
}

/// The k-th occurrence of a word in the hypothesis aligns to the k-th occurrence of the
/// same word in the reference (if any).
pub fn oracle_meteor_sentence(h: &str, r: &str) -> f64 {
    let hw: Vec<&str> = h.split_whitespace().collect();
    let rw: Vec<&str> = r.split_whitespace().collect();
    let mut pairs = Vec::new();
    for (i, w) in hw.iter().enumerate() {
        let k = hw[..i].iter().filter(|x| *x == w).count();
        if let Some((j, _)) = rw.iter().enumerate().filter(|(_, x)| *x == w).nth(k) {
            pairs.push((i, j));
        }
    }
    let m = pairs.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let mut chunks = 1.0;
    for w in pairs.windows(2) {
        if w[1] != (w[0].0 + 1, w[0].1 + 1) {
            chunks += 1.0;
        }
    }
    let p = m / hw.len() as f64;
    let rc = m / rw.len() as f64;
    let fmean = 10.0 * p * rc / (rc + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks / m).powi(3))
}

pub fn oracle_meteor(hyps: &[String], refs: &[String]) -> f64 {
    100.0 * hyps.iter().zip(refs).map(|(h, r)| oracle_meteor_sentence(h, r)).sum::<f64>() / hyps.len() as f64
}

/// Fixture pairs: a shuffled, partly edited copy of a random reference, so every kind of
/// overlap (none, partial, reordered, exact, shorter, longer) shows up.
pub fn metric_fixtures(seed: u64, count: usize) -> (Vec<String>, Vec<String>) {
    let vocab = ["the", "cat", "sat", "on", "mat", "a", "dog", "ran", "to", "park", "é", "über", "x1"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for i in 0..count {
        let rlen = rng.gen_range(1..=12);
        let r: Vec<&str> = (0..rlen).map(|_| *vocab.choose(&mut rng).unwrap()).collect();
        let mut h: Vec<&str> = match i % 5 {
            0 => r.clone(),
            1 => (0..rng.gen_range(1..=12)).map(|_| *vocab.choose(&mut rng).unwrap()).collect(),
            2 => {
                let mut h = r.clone();
                h.shuffle(&mut rng);
                h
            }
            3 => r[..rng.gen_range(1..=r.len())].to_vec(),
            _ => r.iter().chain(r.iter().take(3)).copied().collect(),
        };
        if rng.gen_bool(0.3) && !h.is_empty() {
            let k = rng.gen_range(0..h.len());
            h[k] = "zzz";
        }
        hyps.push(h.join(" "));
        refs.push(r.join(" "));
    }
    (hyps, refs)
}

// ---------------------------------------------------------------------------------------
// Stub scorer server

pub enum StubMode {
    /// `entail_prob` = 1 if the hypothesis starts with a planted prefix, else 0.
    Prefix(&'static str),
    /// Returns a body that is not the wire schema.
    Malformed,
    /// Drops the first connection without answering, then behaves like `Prefix`.
    DropFirst(&'static str),
}

pub struct StubServer {
    pub addr: SocketAddr,
    pub hits: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn read_request(stream: &mut TcpStream) -> Option<(String, String)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some((path, String::from_utf8(body).ok()?))
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

pub fn spawn_stub(mode: StubMode) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let Some((path, body)) = read_request(&mut stream) else { continue };
            if path != "/score" {
                respond(&mut stream, "404 Not Found", "{}");
                continue;
            }
            let prefix = match mode {
                StubMode::Malformed => {
                    respond(&mut stream, "200 OK", r#"{"probability": "high"}"#);
                    continue;
                }
                StubMode::DropFirst(_) if n == 0 => {
                    drop(stream);
                    continue;
                }
                StubMode::Prefix(p) | StubMode::DropFirst(p) => p,
            };
            let Ok(req) = serde_json::from_str::<serde_json::Value>(&body) else {
                respond(&mut stream, "400 Bad Request", r#"{"error":"bad json"}"#);
                continue;
            };
            let (Some(_), Some(h)) = (req["premise"].as_str(), req["hypothesis"].as_str()) else {
                respond(&mut stream, "400 Bad Request", r#"{"error":"missing field"}"#);
                continue;
            };
            let yes = h.starts_with(prefix);
            let out = serde_json::json!({
                "entail_prob": if yes { 1.0 } else { 0.0 },
                "label": if yes { "entail" } else { "neutral" },
            });
            respond(&mut stream, "200 OK", &out.to_string());
        }
    });
    StubServer { addr, hits }
}

// ---------------------------------------------------------------------------------------
// Desk-scale training run

pub const DESK_HELD_OUT: f64 = 0.2;
pub const DESK_SPLIT_SEED: u64 = 11;

pub struct DeskOutcome {
    pub held_in_bleu: Option<f64>,
    pub held_out_bleu: f64,
    pub seconds: f64,
    pub final_loss: f64,
}

/// Multilingual training on the default synthetic corpus with a 2-layer, d_model = 64
/// model, then beam-4 corpus BLEU on the held-in and held-out entities.
pub fn desk_run(seed: u64, use_roles: bool, epochs: usize, score_held_in: bool) -> DeskOutcome {
    let start = Instant::now();
    let corpus = synth_corpus(&SynthSpec::default()).unwrap();
    let (train, held): (Vec<CorpusInstance>, Vec<CorpusInstance>) =
        split_by_entity(&corpus, DESK_HELD_OUT, DESK_SPLIT_SEED);
    let vocab = build_vocab(&train, 8000).unwrap();
    let train_view = build_view(&train, &Setup::Multilingual, None, &vocab, "en-toy").unwrap();
    let held_view = build_view(&held, &Setup::Multilingual, None, &vocab, "en-toy").unwrap();

    let mut mc = ModelConfig::desk(vocab.len(), 64);
    mc.seed = seed;
    mc.use_role_embeddings = use_roles;
    let params = init_model(&mc).unwrap();
    let tc = TrainConfig { learning_rate: 1e-3, batch_size: 4, epochs_finetune: epochs, seed, ..Default::default() };
    let mut final_loss = f64::NAN;
    let (params, _) =
        train_with(params, &[], &train_view, &tc, ExecMode::Parallel, &mut |h| final_loss = h.mean_loss).unwrap();

    let beam = BeamConfig { width: 4, max_len: 64, ..Default::default() };
    let score = |view: &[xf2t_core::train::Example]| {
        let sources: Vec<_> = view.iter().map(|e| e.source.clone()).collect();
        let refs: Vec<String> = view.iter().map(|e| e.target_text.clone()).collect();
        let hyps = generate_batch(&params, &vocab, &sources, &beam, ExecMode::Parallel).unwrap();
        bleu(&hyps, &refs, 4).unwrap()
    };
    let held_in_bleu = score_held_in.then(|| score(&train_view));
    let held_out_bleu = score(&held_view);
    DeskOutcome { held_in_bleu, held_out_bleu, seconds: start.elapsed().as_secs_f64(), final_loss }
}

/// Languages present per view, for partition checks.
pub fn per_language(view: &[xf2t_core::train::Example]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for e in view {
        *m.entry(e.language.clone()).or_insert(0) += 1;
    }
    m
}

// ---------------------------------------------------------------------------------------
// Gradient check

pub fn toy_batch() -> Batch {
    let roles = |n: usize| -> Vec<RoleId> { (0..n).map(|i| RoleId::from_index(i % 4).unwrap()).collect() };
    let a = LinearizedInput { surface: String::new(), tokens: vec![9, 11, 4, 12, 5, 13, 6, 14], roles: roles(8) };
    let b = LinearizedInput { surface: String::new(), tokens: vec![9, 11, 4, 15, 16], roles: roles(5) };
    let ta = [12u32, 13, 14];
    let tb = [15u32, 16, 17, 12, 13];
    Batch::from_pairs([(&a, &ta[..]), (&b, &tb[..])])
}

pub fn loss(p: &ModelParams, batch: &Batch) -> f64 {
    loss_and_grads(p, batch).unwrap().0
}

/// Max over tensors of ‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖).
pub fn max_relative_error(p: &mut ModelParams, batch: &Batch) -> (f64, String) {
    let (_, grads) = loss_and_grads(p, batch).unwrap();
    let eps = 1e-4;
    let mut worst = (0.0, String::new());
    for t in 0..p.tensors.len() {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        for i in 0..p.tensors[t].data.len() {
            let orig = p.tensors[t].data[i];
            p.tensors[t].data[i] = orig + eps;
            let up = loss(p, batch);
            p.tensors[t].data[i] = orig - eps;
            let down = loss(p, batch);
            p.tensors[t].data[i] = orig;
            let num = (up - down) / (2.0 * eps);
            let ana = grads.tensors[t].data[i];
            diff += (ana - num).powi(2);
            na += ana * ana;
            nn += num * num;
        }
        let name = &p.names()[t];
        if name.ends_with(".bk") {
            // Softmax is shift invariant, so a key bias gets no gradient; the finite
            // difference is pure rounding noise and a ratio of the two means nothing.
            assert!(na.sqrt() < 1e-12 && nn.sqrt() < 1e-8, "{name}: {} vs {}", na.sqrt(), nn.sqrt());
            continue;
        }
        let denom = na.sqrt() + nn.sqrt();
        let rel = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    worst
}

pub fn perturbed_model(seed: u64) -> ModelParams {
    let mut cfg = ModelConfig::desk(20, 16);
    cfg.seed = seed;
    cfg.dropout_rate = 0.0;
    let mut p = init_model(&cfg).unwrap();
    // Zero-initialized tensors would make some gradients trivially zero; break the symmetry.
    let mut x = seed as f64 + 0.5;
    for t in &mut p.tensors {
        for v in &mut t.data {
            x = (x * 9301.0 + 49297.0) % 233280.0;
            *v += 0.05 * (x / 233280.0 - 0.5);
        }
    }
    p
}


// ---------------------------------------------------------------------------------------
// Beam search fixtures

/// Three tokens (a = 0, b = 1, EOS = 2) over at most two content steps; greedy takes `a`
/// first, but `b EOS` is the most probable complete sequence.
pub struct Trap;

pub const TRAP_EOS: u32 = 2;

impl StepScorer for Trap {
    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        let p: [f64; 3] = match prefix {
            [] => [0.6, 0.4, 0.0],
            [0] => [0.4, 0.3, 0.3],
            [1] => [0.0, 0.1, 0.9],
            _ => [0.0, 0.0, 1.0],
        };
        p.iter().map(|x| x.ln()).collect()
    }
}

/// Every sequence of at most `max_len` content tokens followed by `eos`, with its log-prob.
pub fn enumerate<S: StepScorer>(s: &S, vocab: u32, eos: u32, max_len: usize) -> Vec<(Vec<u32>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        let lps = s.next_log_probs(&prefix);
        if lps[eos as usize] > f64::NEG_INFINITY {
            out.push((prefix.clone(), lp + lps[eos as usize]));
        }
        if prefix.len() < max_len {
            for t in 0..vocab {
                if t != eos && lps[t as usize] > f64::NEG_INFINITY {
                    let mut next = prefix.clone();
                    next.push(t);
                    stack.push((next, lp + lps[t as usize]));
                }
            }
        }
    }
    out
}

pub fn random_source(rng: &mut ChaCha8Rng, vocab: u32, len: usize) -> LinearizedInput {
    LinearizedInput {
        surface: String::new(),
        tokens: (0..len).map(|_| rng.gen_range(4..vocab)).collect(),
        roles: (0..len).map(|_| RoleId::from_index(rng.gen_range(0..4)).unwrap()).collect(),
    }
}


