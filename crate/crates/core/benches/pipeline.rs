use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use webcorp_core::par;
use webcorp_core::{
    build_corpus, load_questions, BuildConfig, CandidateText, CorpusStore, Domain, ExecMode, Pipeline, ProviderConfig,
    Question, Source,
};

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn miniweb() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/miniweb")
}

fn fixture_build(c: &mut Criterion) {
    let tmp = tempfile::tempdir().unwrap();
    let mut group = c.benchmark_group("fixture_build");
    for mode in MODES {
        let mut cfg = BuildConfig::new(
            miniweb().join("questions.jsonl"),
            tmp.path().join("corpus"),
            ProviderConfig::fixture(miniweb()),
        );
        cfg.cache_dir = tmp.path().join(format!("cache-{mode:?}"));
        cfg.fixed_clock = true;
        cfg.mode = mode;
        let questions = load_questions(&cfg.questions_path).unwrap();
        let pipeline = Pipeline::from_config(&cfg).unwrap();
        group.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |b| {
            b.iter(|| {
                let mut store = CorpusStore::in_memory();
                build_corpus(&questions, &pipeline, &mut store).unwrap();
                store.len()
            })
        });
    }
    group.finish();
}

fn batch_scoring(c: &mut Criterion) {
    let q = Question::new(
        "b1",
        "من صمم برج ايفل في باريس؟",
        Domain::HistoryIslam,
        Source::Forum,
        Some("غوستاف إيفل".into()),
    )
    .unwrap();
    let filler = ["المدينة", "الحديد", "عام", "كبير", "زار", "السياح", "البرج", "مهندس", "فرنسي", "1889"];
    let texts: Vec<String> = (0..500)
        .map(|i| {
            let mut words: Vec<&str> = (0..400).map(|j| filler[(i * 7 + j * 3) % filler.len()]).collect();
            if i % 3 == 0 {
                words.insert(200, "غُوستاف إيفل.");
            }
            if i % 5 == 0 {
                words.insert(100, "برج ايفل.");
            }
            words.join(" ")
        })
        .collect();
    let mut group = c.benchmark_group("batch_scoring");
    for mode in MODES {
        group.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |b| {
            b.iter(|| {
                par::map(mode, &texts, |t| CandidateText::score("https://x.example/", 1, t.as_str(), &q))
                    .iter()
                    .filter(|c| c.qualifies())
                    .count()
            })
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = fixture_build, batch_scoring
}
criterion_main!(benches);
