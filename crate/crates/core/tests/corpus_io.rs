mod common;

use aspect_core::corpus::{
    load_corpus, read_corpus, split_stats, write_corpus, write_corpus_to, AspectTerm, Comment, Corpus, CorpusError,
    Language, Polarity, Split,
};
use proptest::prelude::*;

fn term() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9][a-zA-Z0-9 ]{0,10}[a-zA-Z0-9]|[a-z]"
        .prop_filter("sentinel", |s| s != "NA")
}

fn terms(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set(term(), 0..=max).prop_map(|s| s.into_iter().collect())
}

fn comment(i: usize) -> impl Strategy<Value = Comment> {
    (
        prop::sample::select(Language::ALL.to_vec()),
        "\\PC{1,40}".prop_filter("blank", |s| !s.trim().is_empty()),
        terms(5),
        prop::option::of(terms(7)),
        prop::option::of(prop::sample::select(vec![Polarity::N, Polarity::P, Polarity::C])),
        prop::option::of("[a-z]{1,4}"),
        prop::option::of("[a-z]{1,4}"),
    )
        .prop_map(move |(language, text, gold, pred, polarity, article, cluster)| {
            let mut c = Comment::new(format!("id-{i}"), language, text, &gold).unwrap();
            if let Some(p) = pred {
                c = c.with_pred(&p).unwrap();
            }
            c.polarity = polarity;
            c.article_cluster = article;
            c.comment_cluster = cluster;
            c
        })
}

fn corpus() -> impl Strategy<Value = Vec<Comment>> {
    (0usize..12).prop_flat_map(|n| (0..n).map(comment).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn write_then_read_round_trips(comments in corpus()) {
        let c = Corpus::new("rt", Split::Test, comments).unwrap();
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &c).unwrap();
        let back = read_corpus(buf.as_slice(), "rt", Split::Test).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn stats_partition_the_corpus(comments in corpus()) {
        let c = Corpus::new("s", Split::Unsplit, comments).unwrap();
        let stats = split_stats(&c);
        prop_assert_eq!(stats.counts.len(), 4);
        prop_assert_eq!(stats.counts.values().sum::<usize>(), stats.total);
        prop_assert_eq!(stats.total, c.len());
        for l in Language::ALL {
            prop_assert_eq!(stats.count(l), c.comments.iter().filter(|x| x.language == l).count());
        }
    }
}

#[test]
fn file_round_trip_and_name_from_stem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("test.jsonl");
    let c = Corpus::new(
        "test",
        Split::Unsplit,
        vec![
            Comment::new("a", Language::Id, "harga BBM naik", &["harga BBM"]).unwrap(),
            Comment::new("b", Language::Cn, "没意思", &[] as &[&str]).unwrap().with_pred(&["新闻"]).unwrap(),
        ],
    )
    .unwrap();
    write_corpus(&path, &c).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), c);
}

#[test]
fn na_sentinel_loads_as_empty() {
    let line = r#"{"id":"x","lang":"MS","text":"ok","gold_cats":"NA","pred_cats":"NA","polarity":"C","article_cluster":null,"comment_cluster":null}"#;
    let c = read_corpus(line.as_bytes(), "n", Split::Test).unwrap();
    assert!(c.comments[0].gold_cats.is_empty());
    assert_eq!(c.comments[0].pred_cats, Some(Vec::new()));
}

#[test]
fn errors_carry_line_numbers() {
    let good = r#"{"id":"a","lang":"EN","text":"t","gold_cats":[],"pred_cats":null,"polarity":null,"article_cluster":null,"comment_cluster":null}"#;
    let cases = [
        (r#"{"id":"a","lang":"EN","text":"t","gold_cats":[],"pred_cats":null,"polarity":null,"article_cluster":null,"comment_cluster":null}"#, "duplicate"),
        (r#"{"id":"b","lang":"FR","text":"t","gold_cats":[],"pred_cats":null,"polarity":null,"article_cluster":null,"comment_cluster":null}"#, "language"),
        (r#"{"id":"b","lang":"EN","text":"t","gold_cats":["1","2","3","4","5","6"],"pred_cats":null,"polarity":null,"article_cluster":null,"comment_cluster":null}"#, "many"),
        ("{not json", "malformed"),
    ];
    for (bad, what) in cases {
        let input = format!("{good}\n\n{bad}\n");
        let err = read_corpus(input.as_bytes(), "e", Split::Test).unwrap_err();
        assert_eq!(err.line(), Some(3), "{what}: {err}");
        match what {
            "duplicate" => assert!(matches!(err, CorpusError::DuplicateId { .. })),
            "language" => assert!(matches!(err, CorpusError::UnknownLanguage { .. })),
            "many" => assert!(matches!(err, CorpusError::TooManyAspectTerms { count: 6, .. })),
            _ => assert!(matches!(err, CorpusError::Malformed { .. })),
        }
    }
}

#[test]
fn aspect_terms_are_trimmed_and_checked() {
    assert_eq!(AspectTerm::new("  bus fares ").unwrap().as_str(), "bus fares");
    assert!(AspectTerm::new("   ").is_err());
    assert!(AspectTerm::new("NA").is_err());
}
