use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};

use deepembed::datastore::{
    read_dataset, read_ground_truth, read_ground_truth_checked, write_dataset, write_ground_truth,
};
use deepembed::encode::{EncodedContexts, EncodedImage};
use deepembed::eval::{evaluate, Metric};
use deepembed::index::memstats;
use deepembed::normalize::{root_sift_f32, srn_f32};
use deepembed::scoring::{LevelMask, MatchParams, RegionalRule};
use deepembed::search::{score_encoded, ScoreNorm};
use deepembed::simfit::{
    empirical_match_probability, fit_curve, read_samples, write_bins_csv, write_samples, LabeledDistanceSample,
};
use deepembed::sketch::{hamming128, DEFAULT_BITS};
use deepembed::synth::{generate, SynthConfig};
use deepembed::vocab::{train_kmeans, KMeansConfig};
use deepembed::{
    ContextMode, DeepIndex, Encoder, Error, GroundTruth, HeModel, ImageRecord, IndexConfig, LshBank, QueryConfig,
    RankedList, SrnConfig, Vocabulary,
};
use log::info;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(command: &str, cfg: &RunConfig) -> Result<()> {
    match command {
        "gen-synthetic" => gen_synthetic(cfg),
        "build-vocab" => build_vocab(cfg),
        "build-index" => build_index(cfg),
        "query" => query(cfg),
        "evaluate" => evaluate_cmd(cfg),
        "fit-curves" => fit_curves(cfg),
        "memstats" => memstats_cmd(cfg),
        "sample-distances" => sample_distances(cfg),
        other => Err(CliError::Usage(format!("unknown command {other}"))),
    }
}

/// Configuration values rejected by the library are usage errors.
fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn create(path: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes to `out` when given, else to stdout.
fn with_output(out: Option<&str>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn gen_synthetic(cfg: &RunConfig) -> Result<()> {
    let out = cfg.required("out")?;
    let synth = SynthConfig {
        n_groups: cfg.get("groups")?,
        group_size: cfg.get("group_size")?,
        keypoints: cfg.get("keypoints")?,
        context_dim: cfg.get("context_dim")?,
        descriptor_noise: cfg.get("descriptor_noise")?,
        context_noise: cfg.get("context_noise")?,
        distractors: cfg.get("distractors")?,
        prototypes: cfg.get("prototypes")?,
        word_spread: cfg.get("word_spread")?,
        burst: cfg.get("burst")?,
        width: cfg.get("width")?,
        height: cfg.get("height")?,
        seed: cfg.get("seed")?,
    };
    synth.validate().map_err(usage)?;
    info!("synthetic seed {}", synth.seed);
    let (records, truth) = generate(&synth)?;
    write_dataset(&records, out)?;
    if let Some(path) = cfg.optional("truth") {
        write_ground_truth(&truth, path)?;
    }
    info!("wrote {} images, {} queries", records.len(), truth.len());
    Ok(())
}

fn build_vocab(cfg: &RunConfig) -> Result<()> {
    let data = cfg.required("data")?;
    let out = cfg.required("out")?;
    let lsh_path = cfg.required("lsh")?;
    let stride: usize = cfg.get("train_stride")?;
    if stride == 0 {
        return Err(CliError::Usage("--train-stride must be at least 1".into()));
    }
    let kmeans = KMeansConfig {
        k: cfg.get("k")?,
        seed: cfg.get("seed")?,
        max_iters: cfg.get("kmeans_iters")?,
        tol: cfg.get("kmeans_tol")?,
    };
    let (he_seed, lsh_seed): (u64, u64) = (cfg.get("he_seed")?, cfg.get("lsh_seed")?);

    let records = read_dataset(data)?;
    let first = records.first().ok_or(Error::NoTrainingData)?;
    let descriptors: Vec<[f32; 128]> = records
        .iter()
        .flat_map(|r| &r.keypoints)
        .map(|k| root_sift_f32(&k.descriptor))
        .collect::<deepembed::Result<_>>()?;
    let training: Vec<[f32; 128]> = descriptors.iter().step_by(stride).copied().collect();
    info!("k-means seed {}, HE seed {he_seed}, LSH seed {lsh_seed}", kmeans.seed);
    let (mut vocab, report) = train_kmeans(&training, &kmeans)?;
    info!(
        "k-means: {} words, {} iterations, final WCSS {}, {} re-seeded",
        vocab.len(),
        report.iterations,
        report.wcss.last().copied().unwrap_or(0.0),
        report.reseeded
    );
    let he = HeModel::train(&vocab, &training, DEFAULT_BITS, he_seed)?;

    let words: Vec<Vec<u32>> = records
        .par_iter()
        .map(|r| r.keypoints.iter().map(|k| vocab.nearest(&root_sift_f32(&k.descriptor).expect("checked")).0).collect())
        .collect();
    vocab.count_statistics(words.iter().map(Vec::as_slice))?;
    vocab.save(&he, out)?;
    LshBank::new(first.context_dim, DEFAULT_BITS, lsh_seed)?.save(lsh_path)?;
    Ok(())
}

fn load_encoder(cfg: &RunConfig) -> Result<Encoder> {
    let (vocab, he): (Vocabulary, HeModel) = Vocabulary::load(cfg.required("vocab")?)?;
    let lsh = LshBank::load(cfg.required("lsh")?)?;
    let srn = SrnConfig::new(cfg.get("alpha")?).map_err(usage)?;
    Ok(Encoder::new(vocab, he, lsh, srn)?)
}

fn build_index(cfg: &RunConfig) -> Result<()> {
    let data = cfg.required("data")?;
    let out = cfg.required("out")?;
    let mode = ContextMode::parse(cfg.raw("mode")).map_err(usage)?;
    let encoder = load_encoder(cfg)?;
    let records = read_dataset(data)?;
    let encoded: Vec<EncodedImage> =
        records.par_iter().map(|r| encoder.encode(r, 1, mode)).collect::<deepembed::Result<_>>()?;
    let mut index = DeepIndex::new(encoder.vocab.len(), IndexConfig { mode });
    for e in encoded {
        index.insert_encoded(e)?;
    }
    index.finalize()?;
    index.save(out)?;
    info!("indexed {} images, {} postings, {} contexts", index.n_images(), index.total_postings(), mode.name());
    Ok(())
}

fn query_config(cfg: &RunConfig) -> Result<QueryConfig> {
    let params = MatchParams {
        sigma: cfg.get("sigma")?,
        kappa: cfg.get("kappa")?,
        gamma: cfg.get("gamma")?,
        theta: cfg.get("theta")?,
        levels: LevelMask::parse(cfg.raw("levels")).map_err(usage)?,
        regional_rule: RegionalRule::parse(cfg.raw("regional_rule")).map_err(usage)?,
    };
    let qc = QueryConfig {
        ma: cfg.get("ma")?,
        burstiness: cfg.flag_bool("burstiness")?,
        idf: cfg.flag_bool("idf")?,
        norm: ScoreNorm::parse(cfg.raw("norm")).map_err(usage)?,
        params,
        top_k: cfg.get("top_k")?,
    };
    qc.validate().map_err(usage)?;
    Ok(qc)
}

struct Searcher {
    index: DeepIndex,
    encoder: Encoder,
    queries: Vec<ImageRecord>,
}

impl Searcher {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let encoder = load_encoder(cfg)?;
        let index = DeepIndex::load(cfg.required("index")?)?;
        let queries = read_dataset(cfg.required("queries")?)?;
        Ok(Self { index, encoder, queries })
    }

    /// Encodes each query once with `ma` words per keypoint.
    fn encode_all(&self, ma: usize) -> Result<HashMap<u32, EncodedImage>> {
        let encoded: Vec<EncodedImage> = self
            .queries
            .par_iter()
            .map(|q| self.encoder.encode(q, ma, self.index.mode()))
            .collect::<deepembed::Result<_>>()?;
        Ok(encoded.into_iter().map(|e| (e.img_id, e)).collect())
    }
}

fn query(cfg: &RunConfig) -> Result<()> {
    let qc = query_config(cfg)?;
    let csv = match cfg.raw("format") {
        "text" => false,
        "csv" => true,
        other => return Err(CliError::Usage(format!("--format: expected text or csv, got {other:?}"))),
    };
    let s = Searcher::load(cfg)?;
    let ids: Vec<u32> = match cfg.optional("id") {
        Some(_) => {
            let id: u32 = cfg.get("id")?;
            if !s.queries.iter().any(|q| q.img_id == id) {
                return Err(Error::UnknownId(id).into());
            }
            vec![id]
        }
        None => s.queries.iter().map(|q| q.img_id).collect(),
    };
    let encoded = s.encode_all(qc.ma)?;
    let ranked: Vec<(u32, RankedList)> = ids
        .par_iter()
        .map(|id| score_encoded(&encoded[id], &s.index, &qc).map(|r| (*id, r)))
        .collect::<deepembed::Result<_>>()?;
    with_output(cfg.optional("out"), |w| {
        if csv {
            writeln!(w, "query,rank,img_id,score")?;
        }
        for (id, list) in &ranked {
            if csv {
                list.write_csv(*id, w)?;
            } else {
                if ranked.len() > 1 {
                    writeln!(w, "# query {id}")?;
                }
                list.write_text(w)?;
            }
        }
        Ok(())
    })
}

fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let qc = query_config(cfg)?;
    let metric = Metric::parse(cfg.raw("metric")).map_err(usage)?;
    let exclude_self = match cfg.raw("exclude_self") {
        "auto" => metric == Metric::MeanAveragePrecision,
        _ => cfg.flag_bool("exclude_self")?,
    };
    let s = Searcher::load(cfg)?;
    let truth = read_ground_truth_checked(cfg.required("truth")?, &s.queries)?;
    let encoded = s.encode_all(qc.ma)?;

    let run = |qc: &QueryConfig| -> Result<deepembed::eval::EvalReport> {
        let lists: HashMap<u32, Vec<u32>> = truth
            .queries
            .par_iter()
            .map(|(q, _)| score_encoded(&encoded[q], &s.index, qc).map(|r| (*q, r.ids())))
            .collect::<deepembed::Result<_>>()?;
        Ok(evaluate(&truth, metric, exclude_self, |q| Ok(lists[&q].clone()))?)
    };

    let report = run(&qc)?;
    println!("{} {} ({} queries, levels {})", metric.name(), report.mean, report.len(), qc.params.levels.label());
    if let Some(path) = cfg.optional("report") {
        let mut w = create(path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = cfg.optional("sweep") {
        let mut w = create(path)?;
        writeln!(w, "levels,mode,metric,value")?;
        for levels in LevelMask::combinations() {
            let swept = QueryConfig { params: qc.params.with_levels(levels), ..qc };
            let r = run(&swept)?;
            writeln!(w, "{},{},{},{}", levels.label(), s.index.mode().name(), metric.name(), r.mean)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn exponent_of(level: &str) -> Result<i32> {
    match level {
        "local" => Ok(2),
        "regional" => Ok(3),
        "global" => Ok(5),
        other => Err(CliError::Usage(format!("--level: expected local, regional or global, got {other:?}"))),
    }
}

fn fit_curves(cfg: &RunConfig) -> Result<()> {
    let level = cfg.raw("level");
    let exponent = exponent_of(level)?;
    let bins_n: usize = cfg.get("bins")?;
    let samples = read_samples(BufReader::new(File::open(cfg.required("samples")?)?))?;
    let bins = empirical_match_probability(&samples, bins_n)?;
    let curve = fit_curve(&bins, exponent)?;
    println!("{level}: exp(-(d / {})^{exponent}) from {} samples", curve.scale, samples.len());
    if let Some(path) = cfg.optional("out") {
        let mut w = create(path)?;
        write_bins_csv(&bins, &curve, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn memstats_cmd(cfg: &RunConfig) -> Result<()> {
    let report = memstats(cfg.get("images")?, cfg.get("avg_keypoints")?, ContextMode::Binary).map_err(usage)?;
    println!("{report}");
    Ok(())
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt()
}

fn float_context(e: &EncodedImage, slot: usize) -> &[f32] {
    match &e.contexts {
        EncodedContexts::Float { dim, values } => &values[slot * dim..(slot + 1) * dim],
        EncodedContexts::Binary(_) => unreachable!("encoded with float contexts"),
    }
}

/// Distances between two images at one level: the global context distance,
/// or one value per same-word keypoint pair.
fn pair_distances(
    level: &str,
    a: &EncodedImage,
    b: &EncodedImage,
    srn: &SrnConfig,
    qa: &ImageRecord,
    qb: &ImageRecord,
) -> Result<Vec<f64>> {
    if level == "global" {
        let (ga, gb) = (srn_f32(qa.context(0), srn)?, srn_f32(qb.context(0), srn)?);
        return Ok(vec![euclidean(&ga, &gb)]);
    }
    let mut out = Vec::new();
    for ka in &a.keypoints {
        let (wa, sa) = ka.assignments[0];
        for kb in b.keypoints.iter().filter(|k| k.assignments[0].0 == wa) {
            let d = match level {
                "local" => hamming128(&sa, &kb.assignments[0].1) as f64,
                _ => euclidean(float_context(a, ka.region.coarse_slot()), float_context(b, kb.region.coarse_slot())),
            };
            out.push(d);
        }
    }
    Ok(out)
}

fn sample_distances(cfg: &RunConfig) -> Result<()> {
    let level = cfg.raw("level");
    exponent_of(level)?;
    let out = cfg.required("out")?;
    let negatives: usize = cfg.get("negatives")?;
    let seed: u64 = cfg.get("seed")?;
    let encoder = load_encoder(cfg)?;
    let records = read_dataset(cfg.required("data")?)?;
    let truth: GroundTruth = read_ground_truth(cfg.required("truth")?)?;
    truth.validate(&records)?;
    let by_id: HashMap<u32, &ImageRecord> = records.iter().map(|r| (r.img_id, r)).collect();
    let encoded: HashMap<u32, EncodedImage> = records
        .par_iter()
        .map(|r| encoder.encode(r, 1, ContextMode::Float).map(|e| (r.img_id, e)))
        .collect::<deepembed::Result<_>>()?;
    let all_ids: Vec<u32> = records.iter().map(|r| r.img_id).collect();

    info!("pair sampling seed {seed}");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (q, relevant) in &truth.queries {
        let mut pairs: Vec<(u32, bool)> = relevant.iter().filter(|r| *r != q).map(|r| (*r, true)).collect();
        let pool: Vec<u32> = all_ids.iter().copied().filter(|id| !relevant.contains(id) && id != q).collect();
        let picked: BTreeSet<u32> = pool.choose_multiple(&mut rng, negatives).copied().collect();
        pairs.extend(picked.into_iter().map(|id| (id, false)));
        for (other, is_match) in pairs {
            for distance in pair_distances(level, &encoded[q], &encoded[&other], &encoder.srn, by_id[q], by_id[&other])?
            {
                samples.push(LabeledDistanceSample { distance, is_match });
            }
        }
    }
    let mut w = create(out)?;
    write_samples(&samples, &mut w)?;
    w.flush()?;
    info!("wrote {} samples", samples.len());
    Ok(())
}
