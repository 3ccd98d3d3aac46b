// scratch diagnostic: per-engine peak placement on the planted geometry
use opdrift::corpus::{generate_synthetic, EvolutionPoint, Month, SynthSpec};
use opdrift::hmm::HmmTrainConfig;
use opdrift::timeline::{build_series, detect_spikes, EngineConfig, SeriesOptions};
use opdrift::word2vec::SgnsParams;

fn half_split(v: usize) -> (Vec<f64>, Vec<f64>) {
    let half = v / 2;
    let zipf: Vec<f64> = (1..=half).map(|r| 1.0 / r as f64).collect();
    let zt: f64 = zipf.iter().sum();
    let mut base = vec![0.2 / v as f64; v];
    for (i, z) in zipf.iter().enumerate() {
        base[i] += 0.8 * z / zt;
    }
    let mut replacement = vec![0.2 / v as f64; v];
    for (i, z) in zipf.iter().enumerate() {
        replacement[v - 1 - i] += 0.8 * z / zt;
    }
    let norm = |d: &mut Vec<f64>| {
        let s: f64 = d.iter().sum();
        d.iter_mut().for_each(|x| *x /= s);
    };
    norm(&mut base);
    norm(&mut replacement);
    (base, replacement)
}

fn spec(seed: u64, v: usize, per_month: u32, beta: f64, len: (usize, usize)) -> SynthSpec {
    let vocab: Vec<String> = (0..v).map(|i| format!("op{i:02}")).collect();
    let (base, replacement) = half_split(v);
    SynthSpec {
        family: "synthetic".into(),
        months: 24,
        samples_per_month: per_month,
        vocab,
        base_distribution: base,
        evolution_points: vec![EvolutionPoint { month: 12, replacement, blend: beta }],
        sequence_length_range: len,
        start_year: 2015,
        start_month: 1,
        rng_seed: seed,
    }
}

fn main() {
    let engines: Vec<(&str, EngineConfig)> = vec![
        (
            "word2vec(2)",
            EngineConfig::word2vec(SgnsParams { dim: 2, rng_seed: 2, ..Default::default() }),
        ),
        (
            "hmm2vec(2)",
            EngineConfig::hmm2vec(HmmTrainConfig { n_states: 2, rng_seed: 3, ..Default::default() }),
        ),
    ];
    for (name, engine) in engines {
        for lambda in [0.01, 0.02, 0.03, 0.05, 0.1, 0.001, 0.002, 0.005] {
        let mut hits = 0;
        let mut spike_ok = 0;
        let mut worst = String::new();
        for seed in 0..10u64 {
            let corpus = generate_synthetic(&spec(seed, 20, 30, 1.0, (60, 120))).unwrap();
            let mut opts = SeriesOptions { vocabulary_size: 20, ..Default::default() };
            opts.svm.lambda = lambda;
            let outcome = build_series(&corpus, &engine, &opts).unwrap();
            let pts: Vec<(i32, f64)> = outcome
                .series
                .points
                .iter()
                .map(|p| (p.month.since(Month::new(2015, 1)), p.chi2))
                .collect();
            let peak = pts.iter().cloned().max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap();
            if (12..=14).contains(&peak.0) {
                hits += 1;
            } else {
                let spike13 = pts.iter().find(|(m, _)| *m == 13).map(|(_, c)| *c).unwrap_or(0.0);
                worst = format!("seed {seed} peak@{} {:.2} (13 has {:.2})", peak.0, peak.1, spike13);
            }
            let spikes = detect_spikes(&outcome.series.points, 2.0).unwrap();
            if let Some(top) = spikes.iter().max_by(|a, b| a.chi2.partial_cmp(&b.chi2).unwrap()) {
                if (12..=14).contains(&top.month.since(Month::new(2015, 1))) {
                    spike_ok += 1;
                }
            }
        }
        println!("{name} lambda={lambda}: peak {hits}/10, top-detected-spike {spike_ok}/10  {worst}");
        }
    }
}
