//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use permprompt::domain::{
    assemble_sequence, validate_permutation, Dataset, DatasetFormat, Example, ExampleRef, Permutation,
    PromptTemplate, TaskKind, TemplateSpec,
};
use permprompt::genetic::{crossover, random_permutation, run_search, select_and_breed, GaConfig};
use permprompt::harness::{self, Mode, OracleConfig, RunConfig, SplitConfig, ToyConfig};
use permprompt::oneshot::{expand_all, grow_greedy, BalanceRule, GrowableSequence, Pool};
use permprompt::scoring::{
    Candidates, LabeledPrompt, Oracle, Separator, SeparatorEmbedding, ToyParams, ToyScorer,
};
use permprompt::separator::{train_separator, AdamW, SepTrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn labelled_dataset(n_train: usize, n_val: usize, n_test: usize) -> (Dataset, PromptTemplate) {
    let t = PromptTemplate::builtin("sentiment").unwrap();
    let label = |i: usize| if i.is_multiple_of(2) { "positive" } else { "negative" };
    let make = |prefix: &str, n: usize| -> Vec<Example> {
        (0..n)
            .map(|i| Example::single(i, format!("{prefix} {i}"), label(i)).unwrap())
            .collect()
    };
    let d = Dataset::new(
        &DatasetFormat::for_template(&t),
        make("train", n_train),
        make("val", n_val),
        make("test", n_test),
    )
    .unwrap();
    (d, t)
}

fn closure() -> Outcome {
    let mut failures = 0usize;
    let mut checked = 0usize;
    for &n_train in &[10usize, 50] {
        let mut rng = ChaCha8Rng::seed_from_u64(n_train as u64);
        let cfg = GaConfig::default();
        let mut pop: Vec<Permutation> = (0..cfg.population)
            .map(|_| random_permutation(n_train, cfg.prompt_size, &mut rng))
            .collect();
        for _ in 0..5_000 {
            let fitness: Vec<f64> = (0..pop.len()).map(|_| rng.gen::<f64>()).collect();
            pop = select_and_breed(&pop, &fitness, &cfg, n_train, &mut rng).unwrap();
            for c in &pop {
                checked += 1;
                if validate_permutation(c.as_slice(), n_train).is_err() || c.len() != cfg.prompt_size {
                    failures += 1;
                }
            }
        }
    }
    outcome(failures == 0, format!("10^4 breed steps, {checked} individuals, {failures} invalid"))
}

fn crossover_fixture() -> Outcome {
    let p = |v: &[usize]| Permutation::new(v.to_vec(), 5).unwrap();
    let got = crossover(&p(&[1, 2, 3, 4]), &p(&[4, 3, 2, 1]), 2).unwrap();
    let want: [&[usize]; 4] = [&[1, 2, 4, 3], &[4, 3, 1, 2], &[2, 1, 3, 4], &[3, 4, 2, 1]];
    let fixture = got.iter().zip(want).all(|(g, w)| g.as_slice() == w);

    fn perms(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n, k - 1) {
            for x in 0..n {
                if !p.contains(&x) {
                    let mut q = p.clone();
                    q.push(x);
                    out.push(q);
                }
            }
        }
        out
    }
    let mut cases = 0usize;
    let mut bad = 0usize;
    for n in 1..=5 {
        for k in 1..=n.min(4) {
            let all = perms(n, k);
            for a in &all {
                for b in &all {
                    for j in 1..=k {
                        let ca = Permutation::new(a.clone(), n).unwrap();
                        let cb = Permutation::new(b.clone(), n).unwrap();
                        for d in crossover(&ca, &cb, j).unwrap() {
                            cases += 1;
                            if d.check(n, k).is_err() {
                                bad += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    outcome(
        fixture && bad == 0,
        format!("fixture {}, {cases} exhaustive children, {bad} invalid", if fixture { "exact" } else { "MISMATCH" }),
    )
}

fn planted_recovery() -> Outcome {
    let (d, t) = labelled_dataset(10, 10, 0);
    let mut hits = 0;
    let mut beats = 0;
    let mut ga_tau = Vec::new();
    let mut rs_tau = Vec::new();
    let mut per_seed = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let toy = ToyScorer::new(ToyParams::random(10, 8, 4.0, &mut rng), &d, |_| 0.0).unwrap();
        let cfg = GaConfig { seed, ..GaConfig::default() };
        let out = run_search(&d, &t, &toy, &cfg, None, |_| {}).unwrap();
        let tau = toy.tau(&out.best.permutation).unwrap();
        let (rs, _) = harness::random_search(&d, &t, &toy, 10, out.evaluations, seed).unwrap();
        let rs = toy.tau(&rs).unwrap();
        ga_tau.push(tau);
        rs_tau.push(rs);
        per_seed.push((tau, rs));
    }
    let rs_mean = rs_tau.iter().sum::<f64>() / rs_tau.len() as f64;
    for &(tau, rs) in &per_seed {
        if tau >= 0.95 {
            hits += 1;
        }
        if tau > rs && tau > rs_mean {
            beats += 1;
        }
    }
    let min_ga = ga_tau.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        hits >= 9 && beats == 10,
        format!(
            "tau>=0.95 in {hits}/10 (min {min_ga:.3}), beats equal-budget random search in {beats}/10 (random mean tau {rs_mean:.3})"
        ),
    )
}

fn inverse_direction() -> Outcome {
    let mut ok = 0;
    let mut pairs = Vec::new();
    for seed in 0..10u64 {
        let mut c = RunConfig::new("sentiment", None).unwrap();
        c.seed = seed;
        c.splits = SplitConfig { count: 1, size: 10 };
        c.oracle = OracleConfig::Toy(ToyConfig::default());
        c.mode = Mode::PeroNoSep;
        let normal = harness::run(&c).unwrap().test.unwrap();
        c.mode = Mode::Inverse;
        let inverted = harness::run(&c).unwrap().test.unwrap();
        if inverted <= normal {
            ok += 1;
        }
        pairs.push(format!("{inverted:.2}<={normal:.2}"));
    }
    outcome(ok == 10, format!("inverted <= default test accuracy in {ok}/10 [{}]", pairs.join(" ")))
}

fn gradient_check() -> Outcome {
    let (d, t) = labelled_dataset(10, 0, 0);
    let mut worst = 0.0f64;
    let mut points = 0;
    for &dim in &[8usize, 64] {
        let mut rng = ChaCha8Rng::seed_from_u64(dim as u64);
        let params = ToyParams::random(10, dim, 1.5, &mut rng);
        let biases: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let toy = ToyScorer::new(params, &d, |r| if r.index < 10 { biases[r.index] } else { 0.0 }).unwrap();
        let candidates = Candidates::for_dataset(&d);
        for _ in 0..50 {
            let batch: Vec<LabeledPrompt> = (0..6)
                .map(|_| {
                    let mut ctx: Vec<usize> = (0..10).collect();
                    ctx.shuffle(&mut rng);
                    ctx.truncate(5);
                    let q = rng.gen_range(0..10);
                    let prompt = assemble_sequence(&ctx, ExampleRef::train(q), &t, &d, true).unwrap();
                    LabeledPrompt {
                        prompt,
                        gold: d.gold_text(&d.train[q]).unwrap().to_string(),
                        candidates: candidates.clone(),
                    }
                })
                .collect();
            let s: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, grad) = toy
                .loss_and_grad_sep(&batch, &SeparatorEmbedding::new(s.clone()).unwrap())
                .unwrap();
            let h = 1e-5;
            let fd: Vec<f64> = (0..dim)
                .map(|j| {
                    let mut plus = s.clone();
                    let mut minus = s.clone();
                    plus[j] += h;
                    minus[j] -= h;
                    let lp = toy.loss_and_grad_sep(&batch, &SeparatorEmbedding::new(plus).unwrap()).unwrap().0;
                    let lm = toy.loss_and_grad_sep(&batch, &SeparatorEmbedding::new(minus).unwrap()).unwrap().0;
                    (lp - lm) / (2.0 * h)
                })
                .collect();
            let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = grad
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(fd.iter().map(|a| a * a).sum::<f64>().sqrt())
                .max(1e-12);
            worst = worst.max(diff / scale);
            points += 1;
        }
    }
    outcome(worst < 1e-5, format!("{points} points, d in {{8, 64}}, worst relative error {worst:.2e}"))
}

fn separator_efficacy() -> Outcome {
    let (d, t) = labelled_dataset(10, 0, 0);
    let mut notes = Vec::new();
    let mut pass = true;
    for &dim in &[8usize, 64] {
        let mut rng = ChaCha8Rng::seed_from_u64(42 + dim as u64);
        let params = ToyParams::random(10, dim, 0.0, &mut rng);
        let toy = ToyScorer::new(params, &d, |_| 0.0).unwrap();
        let candidates = Candidates::for_dataset(&d);
        let batch: Vec<LabeledPrompt> = (0..16)
            .map(|i| {
                let q = i % 10;
                let mut ctx: Vec<usize> = (0..10).collect();
                ctx.shuffle(&mut rng);
                LabeledPrompt {
                    prompt: assemble_sequence(&ctx, ExampleRef::train(q), &t, &d, true).unwrap(),
                    gold: d.gold_text(&d.train[q]).unwrap().to_string(),
                    candidates: candidates.clone(),
                }
            })
            .collect();
        let cfg = SepTrainConfig {
            max_epochs: 50,
            learning_rate: 1e-2,
            batch_size: 16,
            ..SepTrainConfig::classification()
        };
        let mut sep = SeparatorEmbedding::zeros(dim);
        let initial = toy.loss_and_grad_sep(&batch, &sep).unwrap().0;
        let mut opt = AdamW::new(dim, &cfg);
        let trace = train_separator(&mut sep, &batch, &toy, &mut opt, &cfg, &mut rng).unwrap();
        let fin = toy.loss_and_grad_sep(&batch, &sep).unwrap().0;
        let monotone = trace.steps[5..].windows(2).all(|w| w[1] <= w[0]);
        let ratio = fin / initial;
        pass &= trace.steps.len() == 50 && ratio <= 0.5 && monotone;
        notes.push(format!(
            "d={dim}: {} steps, loss {initial:.4} -> {fin:.4} ({:.0}%), non-increasing after step 5: {monotone}",
            trace.steps.len(),
            100.0 * ratio
        ));
    }
    outcome(pass, notes.join("; "))
}

/// Independent re-statement of the toy min-CE fitness for a pool.
struct Reference {
    ranks: Vec<usize>,
    alpha: f64,
    gamma: f64,
    bias: Vec<f64>,
    n_labels: usize,
}

impl Reference {
    fn tau(&self, ctx: &[usize]) -> f64 {
        let n = ctx.len();
        if n < 2 {
            return 0.0;
        }
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (self.ranks[ctx[i]], self.ranks[ctx[j]]);
                s += (b as i64 - a as i64).signum();
            }
        }
        s as f64 / (n * (n - 1) / 2) as f64
    }

    fn alt(ctx: &[usize]) -> f64 {
        if ctx.len() < 2 {
            return 0.0;
        }
        ctx.windows(2).filter(|w| w[0] != w[1]).count() as f64 / (ctx.len() - 1) as f64
    }

    fn min_ce(&self, ctx: &[usize], pool: &[usize]) -> f64 {
        pool.iter()
            .map(|&q| {
                let z = self.alpha * self.tau(ctx) + self.gamma * Self::alt(ctx) + self.bias[q];
                (1.0 + (self.n_labels as f64 - 1.0) * (-z).exp()).ln()
            })
            .fold(0.0, f64::max)
    }

    /// Exhaustive argmin over insertions; ties to earliest position, then label.
    fn best_step(&self, labels: &[usize], pool_by_label: &[usize]) -> (usize, usize) {
        let mut best: Option<(f64, usize, usize)> = None;
        for pos in 0..=labels.len() {
            for lab in 0..self.n_labels {
                let mut cand = labels.to_vec();
                cand.insert(pos, lab);
                let mut counts = vec![0usize; self.n_labels];
                cand.iter().for_each(|&l| counts[l] += 1);
                if counts.iter().max().unwrap() - counts.iter().min().unwrap() > 1 {
                    continue;
                }
                let ctx: Vec<usize> = cand.iter().map(|&l| pool_by_label[l]).collect();
                let f = self.min_ce(&ctx, pool_by_label);
                if best.is_none_or(|b| f < b.0) {
                    best = Some((f, pos, lab));
                }
            }
        }
        let b = best.unwrap();
        (b.1, b.2)
    }
}

fn greedy_vs_brute_force() -> Outcome {
    let mut runs = 0;
    let mut steps = 0;
    let mut mismatches = 0;
    let mut count_errors = 0;

    // `by_label[l]` is the pool member carrying label ordinal `l`
    let mut check = |d: &Dataset, t: &PromptTemplate, by_label: &[usize], rng: &mut ChaCha8Rng| {
        let n = d.train.len();
        let mut sigma: Vec<usize> = (0..n).collect();
        sigma.shuffle(rng);
        let alpha = rng.gen_range(0.5..3.0);
        let gamma = rng.gen_range(0.0..1.5);
        let bias: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = ToyParams { sigma_star: sigma.clone(), alpha, w: vec![], alternation: gamma };
        let toy = ToyScorer::new(params, d, |r| bias[r.index]).unwrap();
        let mut ranks = vec![0; n];
        for (r, &i) in sigma.iter().enumerate() {
            ranks[i] = r;
        }
        let n_labels = d.labels().unwrap().len();
        let reference = Reference { ranks, alpha, gamma, bias: bias.clone(), n_labels };
        let mut shuffled = by_label.to_vec();
        shuffled.shuffle(rng);
        let pool = Pool::new(d, &shuffled).unwrap();
        for l_max in 1..=6 {
            runs += 1;
            let out = grow_greedy(&pool, d, t, &toy, Separator::Literal("</s>"), l_max, BalanceRule::Balanced).unwrap();
            let mut seq = GrowableSequence::new(l_max);
            for step in &out.trace {
                steps += 1;
                if expand_all(&seq, n_labels).unwrap().len() != (seq.len() + 1) * n_labels {
                    count_errors += 1;
                }
                let want = reference.best_step(seq.labels(), by_label);
                if want != (step.position, step.label) {
                    mismatches += 1;
                }
                let mut labels = seq.labels().to_vec();
                labels.insert(step.position, step.label);
                seq = GrowableSequence::from_labels(labels, l_max).unwrap();
            }
        }
    };

    // every ordering of a four-label, four-example pool
    let spec = TemplateSpec {
        kind: TaskKind::Sentiment,
        pattern: "{text} Answer: {label}".into(),
        mask: None,
        separator: None,
        labels: ["a", "b", "c", "d"].iter().map(|l| [l.to_string(), format!("L{l}")]).collect(),
    };
    let t4 = PromptTemplate::new("four", spec).unwrap();
    let mut orders: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..4 {
        let mut next = Vec::new();
        for o in &orders {
            for x in (0..4).filter(|x| !o.contains(x)) {
                next.push([o.clone(), vec![x]].concat());
            }
        }
        orders = next;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for order in &orders {
        let names = ["a", "b", "c", "d"];
        let train = order
            .iter()
            .enumerate()
            .map(|(i, &l)| Example::single(i, format!("ex {l}"), names[l]).unwrap())
            .collect();
        let d = Dataset::new(&DatasetFormat::for_template(&t4), train, vec![], vec![]).unwrap();
        let by_label: Vec<usize> = (0..4).map(|l| order.iter().position(|&x| x == l).unwrap()).collect();
        check(&d, &t4, &by_label, &mut rng);
    }
    let n_orders = orders.len();

    // the 24 cross-label pairs of ten binary examples, four positive and six negative
    let t2 = PromptTemplate::builtin("sentiment").unwrap();
    let labels = ["positive", "negative", "negative", "positive", "negative", "negative", "positive", "negative", "positive", "negative"];
    let train: Vec<Example> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| Example::single(i, format!("s{i}"), *l).unwrap())
        .collect();
    let d = Dataset::new(&DatasetFormat::for_template(&t2), train, vec![], vec![]).unwrap();
    let sentiment = t2.labels().unwrap();
    let (pos, neg) = (sentiment.ordinal("positive").unwrap(), sentiment.ordinal("negative").unwrap());
    let mut pairs = Vec::new();
    for p in (0..10).filter(|&i| labels[i] == "positive") {
        for n in (0..10).filter(|&i| labels[i] == "negative") {
            let mut by_label = vec![0; 2];
            by_label[pos] = p;
            by_label[neg] = n;
            pairs.push(by_label);
        }
    }
    let mut listed = harness::all_pools(&d).unwrap();
    let mut mine = pairs.clone();
    listed.sort();
    mine.sort();
    let pools_agree = listed == mine;
    for p in &pairs {
        check(&d, &t2, p, &mut rng);
    }

    outcome(
        mismatches == 0 && count_errors == 0 && n_orders == 24 && pairs.len() == 24 && pools_agree,
        format!(
            "{n_orders} pool orderings + {} pairs (pool listing agrees: {pools_agree}), {runs} runs, {steps} steps, {mismatches} argmin mismatches, {count_errors} count errors",
            pairs.len()
        ),
    )
}

fn determinism() -> Outcome {
    let mut checked = Vec::new();
    let mut pass = true;
    let modes = [
        (Mode::Pero, None, None, None),
        (Mode::PeroNoSep, None, None, None),
        (Mode::Inverse, None, None, None),
        (Mode::RandomBaseline, None, None, None),
        (Mode::Oneshot, Some(vec![2, 5]), None, None),
        (Mode::LabelPattern, Some(vec![2, 5]), Some("----++++--".to_string()), None),
        (Mode::Evaluate, None, None, Some(vec![4, 0, 7, 1])),
    ];
    for (mode, pair, pattern, context) in modes {
        let mut c = RunConfig::new("sentiment", None).unwrap();
        c.mode = mode;
        c.seed = 11;
        c.ga.epochs = 20;
        c.separator.max_epochs = 2;
        c.pair = pair;
        c.pattern = pattern;
        c.context = context;
        let a = serde_json::to_vec(&harness::run(&c).unwrap()).unwrap();
        let b = serde_json::to_vec(&harness::run(&c).unwrap()).unwrap();
        pass &= a == b;
        checked.push(format!("{}:{}", mode.name(), if a == b { "same" } else { "DIFFERS" }));
    }
    outcome(pass, format!("replayed twice: {}", checked.join(" ")))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("permutation closure", closure, Duration::from_secs(10)),
        ("crossover fixture and exhaustive uniqueness", crossover_fixture, Duration::from_secs(60)),
        ("planted-optimum recovery", planted_recovery, Duration::from_secs(60)),
        ("inverse-fitness direction", inverse_direction, Duration::from_secs(300)),
        ("separator gradient vs finite differences", gradient_check, Duration::from_secs(60)),
        ("separator learning efficacy", separator_efficacy, Duration::from_secs(60)),
        ("greedy one-shot vs brute force", greedy_vs_brute_force, Duration::from_secs(120)),
        ("replay determinism", determinism, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.2}s, limit {}s{}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", exceeded" }
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
