use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use entrodrop_core::importance::report::{
    parse_profile_csv, plan_from_json, plan_table, plan_to_json, profile_to_csv,
};
use entrodrop_core::model::{
    bench_inference, capture_trace, perplexity, read_checkpoint, read_corpus, train_briefly,
    write_checkpoint, CorpusGenerator, TrainConfig,
};
use entrodrop_core::trace::SamplePolicy;
use entrodrop_core::{
    build_profile, cosine_importance, make_plan, read_trace, write_trace, ActivationTrace,
    BlockMask, EstimatorConfig, Granularity, PlanInput, PruningPlan, Rng, SyntheticCorpus,
    ToyModelConfig, ToyTransformer,
};

use crate::args::{
    AnalyzeArgs, BenchArgs, CorpusArgs, CorpusKind, CriterionName, EstimatorArgs, EstimatorName,
    EvaluateArgs, GranularityName, ModelArgs, PlanArgs, TraceArgs,
};
use crate::failure::Failure;
use crate::manifest::{with_suffix, RunManifest};
use crate::svg::{line_chart, Series};

type Outcome = Result<(), Failure>;

impl From<GranularityName> for Granularity {
    fn from(g: GranularityName) -> Self {
        match g {
            GranularityName::Layer => Granularity::FullLayer,
            GranularityName::Attention => Granularity::AttentionBlock,
            GranularityName::Mlp => Granularity::MlpBlock,
        }
    }
}

fn write_file(path: &Path, contents: &[u8], manifest: &mut RunManifest) -> Outcome {
    std::fs::write(path, contents).map_err(|e| Failure::io(path, e))?;
    manifest.output(path)
}

fn load_model(args: &ModelArgs, seed: u64, manifest: &mut RunManifest) -> Result<ToyTransformer, Failure> {
    if let Some(path) = &args.checkpoint {
        let file = File::open(path).map_err(|e| Failure::io(path, e))?;
        let model = read_checkpoint(BufReader::new(file)).map_err(|e| Failure::from(e).context(path.display()))?;
        manifest.input(path)?;
        return Ok(model);
    }
    let config = model_config(args, seed);
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(ToyTransformer::init(config)?)
}

fn model_config(args: &ModelArgs, seed: u64) -> ToyModelConfig {
    ToyModelConfig {
        layers: args.layers,
        hidden_dim: args.hidden_dim,
        heads: args.heads,
        ffn_dim: args.ffn_dim,
        vocab: args.vocab,
        max_seq: args.max_seq,
        seed,
    }
}

fn generator(args: &CorpusArgs, seed: u64) -> CorpusGenerator {
    match args.corpus {
        CorpusKind::Markov => CorpusGenerator::Markov {
            order: args.order,
            seed,
        },
        CorpusKind::Repetition => CorpusGenerator::Repetition {
            period: args.period,
            noise: args.noise,
            seed,
        },
    }
}

fn load_corpus(
    args: &CorpusArgs,
    vocab: usize,
    manifest: &mut RunManifest,
) -> Result<SyntheticCorpus, Failure> {
    if let Some(path) = &args.tokens {
        let file = File::open(path).map_err(|e| Failure::io(path, e))?;
        let corpus = read_corpus(BufReader::new(file), vocab)
            .map_err(|e| Failure::from(e).context(path.display()))?;
        manifest.input(path)?;
        return Ok(corpus);
    }
    Ok(SyntheticCorpus::generate(
        generator(args, args.corpus_seed),
        vocab,
        args.sequences,
        args.seq_len,
    )?)
}

fn load_trace(path: &Path, manifest: &mut RunManifest) -> Result<ActivationTrace, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    let trace = read_trace(BufReader::new(file)).map_err(|e| Failure::from(e).context(path.display()))?;
    manifest.input(path)?;
    Ok(trace)
}

fn load_plan(path: &Path, manifest: &mut RunManifest) -> Result<PruningPlan, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let plan = plan_from_json(&text).map_err(|e| Failure::from(e).context(path.display()))?;
    manifest.input(path)?;
    Ok(plan)
}

fn estimator_config(args: &EstimatorArgs, seed: u64) -> Result<EstimatorConfig, Failure> {
    let base = match args.estimator {
        EstimatorName::Bucket => EstimatorConfig::bucket(args.bins),
        EstimatorName::Knn => EstimatorConfig::knn(args.neighbors),
        EstimatorName::Renyi => EstimatorConfig::renyi(args.alpha, args.bins),
    };
    let policy = SamplePolicy::new(args.max_tokens, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let config = base.with_policy(policy);
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

pub fn trace(args: &TraceArgs, seed: u64, out: &Path) -> Outcome {
    let mut manifest = RunManifest::start("trace", seed, args);
    let mut model = load_model(&args.model, seed, &mut manifest)?;
    let vocab = model.config().vocab;
    if args.train_steps > 0 {
        let corpus = SyntheticCorpus::generate(
            generator(&args.corpus, args.train_corpus_seed),
            vocab,
            args.train_sequences,
            args.corpus.seq_len,
        )?;
        let config = TrainConfig {
            steps: args.train_steps,
            lr: args.lr,
            batch_size: args.batch_size,
            seed,
        };
        let outcome = train_briefly(&model, &corpus, &config)?;
        eprintln!(
            "trained {} steps: loss {:.4} -> {:.4}",
            args.train_steps,
            outcome.losses.first().copied().unwrap_or(f64::NAN),
            outcome.losses.last().copied().unwrap_or(f64::NAN)
        );
        model = outcome.model;
    }
    if let Some(block) = args.plant {
        if block == 0 || block > model.config().layers {
            return Err(Failure::Usage(format!(
                "--plant {block} is not a block of a {}-layer model",
                model.config().layers
            )));
        }
        model.scale_attention_output(block - 1, args.plant_scale)?;
    }
    if let Some(path) = &args.save_checkpoint {
        let file = File::create(path).map_err(|e| Failure::io(path, e))?;
        write_checkpoint(&model, BufWriter::new(file)).map_err(|e| Failure::from(e).context(path.display()))?;
        manifest.output(path)?;
    }
    let corpus = load_corpus(&args.corpus, vocab, &mut manifest)?;
    let trace = capture_trace(&model, &corpus, &BlockMask::none(model.config().layers))?;
    let file = File::create(out).map_err(|e| Failure::io(out, e))?;
    let bytes = write_trace(&trace, BufWriter::new(file)).map_err(|e| Failure::from(e).context(out.display()))?;
    manifest.output(out)?;
    manifest.finish(out)?;
    eprintln!(
        "wrote {} ({bytes} bytes, {} snapshots x {} tokens)",
        out.display(),
        trace.snapshots().len(),
        trace.token_count()
    );
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs, seed: u64, out: &Path) -> Outcome {
    let mut manifest = RunManifest::start("analyze", seed, args);
    let trace = load_trace(&args.trace, &mut manifest)?;
    let config = estimator_config(&args.estimator, seed)?;
    let granularity = Granularity::from(args.granularity);
    let profile = build_profile(&trace, &config, granularity)
        .map_err(|e| Failure::from(e).context(format!("{granularity} profile")))?;

    let csv_path = with_suffix(out, ".csv");
    write_file(&csv_path, profile_to_csv(&profile, None).as_bytes(), &mut manifest)?;
    let boundary = Series {
        name: "H (boundary)".into(),
        points: profile
            .h_values
            .iter()
            .enumerate()
            .map(|(i, &h)| (i as f64, h))
            .collect(),
    };
    let delta = Series {
        name: "delta H".into(),
        points: profile
            .delta_h
            .iter()
            .enumerate()
            .map(|(i, &d)| ((i + 1) as f64, d))
            .collect(),
    };
    let title = format!("Entropy by {granularity} block ({})", config.kind);
    let svg = line_chart(&title, "block index", "nats", &[boundary, delta]);
    let svg_path = with_suffix(out, ".svg");
    write_file(&svg_path, svg.as_bytes(), &mut manifest)?;
    manifest.finish(out)?;
    eprintln!(
        "stage start {} of {} blocks; wrote {} and {}",
        profile.stage_start(),
        profile.block_count,
        csv_path.display(),
        svg_path.display()
    );
    Ok(())
}

pub fn plan(args: &PlanArgs, seed: u64, out: &Path) -> Outcome {
    let mut manifest = RunManifest::start("plan", seed, args);
    let plan = match (&args.trace, &args.profile) {
        (Some(path), _) => {
            let trace = load_trace(path, &mut manifest)?;
            let granularity = Granularity::from(args.granularity);
            match args.criterion {
                CriterionName::Entropy => {
                    let config = estimator_config(&args.estimator, seed)?;
                    let profile = build_profile(&trace, &config, granularity)?;
                    make_plan(PlanInput::Profile(&profile), args.k, args.s_start)?
                }
                CriterionName::Cosine => {
                    let scores = cosine_importance(&trace, granularity)?;
                    make_plan(PlanInput::Cosine(&scores), args.k, args.s_start)?
                }
            }
        }
        (None, Some(path)) => {
            if args.criterion != CriterionName::Entropy {
                return Err(Failure::Usage(
                    "a profile holds entropy values; cosine plans need --trace".into(),
                ));
            }
            let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            let profile = parse_profile_csv(&text).map_err(|e| Failure::from(e).context(path.display()))?;
            manifest.input(path)?;
            make_plan(PlanInput::Profile(&profile), args.k, args.s_start)?
        }
        (None, None) => return Err(Failure::Usage("one of --trace or --profile is required".into())),
    };
    write_file(out, (plan_to_json(&plan) + "\n").as_bytes(), &mut manifest)?;
    manifest.finish(out)?;
    print!("{}", plan_table(&plan));
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs, seed: u64, out: &Path) -> Outcome {
    let mut manifest = RunManifest::start("evaluate", seed, args);
    let model = load_model(&args.model, seed, &mut manifest)?;
    let plan = load_plan(&args.plan, &mut manifest)?;
    let corpus = load_corpus(&args.corpus, model.config().vocab, &mut manifest)?;
    let layers = model.config().layers;
    let before = perplexity(&model, &corpus, &BlockMask::none(layers))?;
    let eligible: Vec<usize> = plan.ranked.iter().map(|r| r.block).collect();

    let mut csv = String::from("k,pruned_blocks,ppl_before,ppl_after,rel_change");
    if args.random_seeds > 0 {
        csv.push_str(",random_mean_rel_change,random_plans,no_worse_than_random");
    }
    csv.push('\n');
    for k in 0..=plan.k {
        let mask = BlockMask::from_plan_prefix(&plan, layers, k)?;
        let after = perplexity(&model, &corpus, &mask)?;
        let rel = after / before - 1.0;
        let blocks: Vec<String> = plan.prefix(k)?.iter().map(|b| b.to_string()).collect();
        let _ = write!(csv, "{k},{},{before},{after},{rel}", blocks.join(";"));
        if args.random_seeds > 0 {
            let mut total = 0.0;
            let mut no_worse = 0;
            for s in 0..args.random_seeds {
                let picks: Vec<usize> = Rng::new(s)
                    .sample_indices(eligible.len(), k)
                    .into_iter()
                    .map(|i| eligible[i])
                    .collect();
                let mask = BlockMask::from_blocks(layers, plan.granularity, &picks)?;
                let r = perplexity(&model, &corpus, &mask)? / before - 1.0;
                total += r;
                if rel <= r {
                    no_worse += 1;
                }
            }
            let _ = write!(
                csv,
                ",{},{},{no_worse}",
                total / args.random_seeds as f64,
                args.random_seeds
            );
        }
        csv.push('\n');
        eprintln!("k={k}: perplexity {before:.4} -> {after:.4} ({:+.4}%)", rel * 100.0);
    }
    write_file(out, csv.as_bytes(), &mut manifest)?;
    manifest.finish(out)?;
    Ok(())
}

pub fn bench(args: &BenchArgs, seed: u64, out: &Path) -> Outcome {
    let mut manifest = RunManifest::start("bench", seed, args);
    let model = if args.model.checkpoint.is_some() {
        load_model(&args.model, seed, &mut manifest)?
    } else {
        // The position table must cover prompt plus generated tokens.
        let mut config = model_config(&args.model, seed);
        config.max_seq = config.max_seq.max(args.seq_len + args.gen_len);
        config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        ToyTransformer::init(config)?
    };
    let plan = load_plan(&args.plan, &mut manifest)?;
    let mut ks = args
        .ks
        .clone()
        .unwrap_or_else(|| (0..=plan.eligible_count()).collect());
    ks.sort_unstable();
    ks.dedup();
    let layers = model.config().layers;
    let masks = ks
        .iter()
        .map(|&k| BlockMask::from_plan_prefix(&plan, layers, k))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Failure::Domain(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        bench_inference(&model, &masks, args.seq_len, args.gen_len, args.repeats, seed)
    })?;

    let mut csv = String::from("k,mean_ms,std_ms\n");
    for (k, row) in ks.iter().zip(&rows) {
        let _ = writeln!(csv, "{k},{},{}", row.mean_ms, row.std_ms);
        eprintln!("k={k}: {:.2} ms +/- {:.2}", row.mean_ms, row.std_ms);
    }
    let csv_path = with_suffix(out, ".csv");
    write_file(&csv_path, csv.as_bytes(), &mut manifest)?;
    let series = Series {
        name: "mean time".into(),
        points: ks.iter().zip(&rows).map(|(&k, r)| (k as f64, r.mean_ms)).collect(),
    };
    let title = format!(
        "Generation time, {} prompt + {} new tokens",
        args.seq_len, args.gen_len
    );
    let svg = line_chart(&title, &format!("pruned {} blocks", plan.granularity), "ms", &[series]);
    let svg_path: PathBuf = with_suffix(out, ".svg");
    write_file(&svg_path, svg.as_bytes(), &mut manifest)?;
    manifest.finish(out)?;
    Ok(())
}
