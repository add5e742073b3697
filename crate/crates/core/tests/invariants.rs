use std::collections::BTreeSet;

use proptest::prelude::*;
use vulndistill::evaluation::compute_metrics;
use vulndistill::graphs::build_token_graph;
use vulndistill::tokenizer::{assemble, decode, encode, train_bpe, CLS, DIA, DIB, PAD, SEP};

const CORPUS: [&str; 4] = [
    "int f(int a) { return a + 1; }",
    "void g(char *p, int n) { memset(p, 0, n); }",
    "for (i = 0; i < n; i++) { buf[i] = src[i]; }",
    "if (ptr == NULL)\n  return -1;",
];

proptest! {
    #[test]
    fn bpe_round_trips_text_over_its_alphabet(words in prop::collection::vec(prop::sample::select(vec!["int", "f", "(", ")", " ", "{", "}", "buf[i]", ";", "\n", "NULL", "=="]), 0..30)) {
        let vocab = train_bpe(&CORPUS, 80).unwrap();
        let text = words.concat();
        prop_assert_eq!(decode(&vocab, &encode(&vocab, &text)), text);
    }

    #[test]
    fn assembled_layout(body in prop::collection::vec(6u32..50, 0..40), l in 5usize..30) {
        let s = assemble(&body, l).unwrap();
        let ids = &s.ids;
        prop_assert_eq!(ids.len(), l);
        let k = body.len().min(l - 4);
        prop_assert_eq!(ids[0], CLS);
        prop_assert_eq!(&ids[1..1 + k], &body[..k]);
        prop_assert_eq!(&ids[1 + k..4 + k], &[DIA, DIB, SEP][..]);
        prop_assert!(ids[4 + k..].iter().all(|&t| t == PAD));
    }

    #[test]
    fn graph_matches_window_enumeration(ids in prop::collection::vec(0u32..12, 0..40), window in 2usize..8) {
        let g = build_token_graph(&ids, window).unwrap();
        let mut want = BTreeSet::new();
        for i in 0..ids.len() {
            for j in i + 1..ids.len().min(i + window) {
                if ids[i] != ids[j] {
                    want.insert((ids[i].min(ids[j]), ids[i].max(ids[j])));
                }
            }
        }
        let got: BTreeSet<_> = g.edges.iter().map(|&(u, v)| {
            let (a, b) = (g.node_ids[u], g.node_ids[v]);
            (a.min(b), a.max(b))
        }).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(g.node_ids.iter().collect::<BTreeSet<_>>(), ids.iter().collect::<BTreeSet<_>>());
    }

    #[test]
    fn metrics_count_every_prediction_once(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..100)) {
        let (preds, labels): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let r = compute_metrics(&preds, &labels).unwrap();
        prop_assert_eq!(r.tp + r.fp + r.fn_ + r.tn, preds.len());
        prop_assert!((0.0..=1.0).contains(&r.f1));
        prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-15 && r.f1 >= r.precision.min(r.recall) - 1e-15);
    }
}
