//! Per-bucket inverted indexes with exact term-at-a-time search.

mod inverted;
mod io;
mod stats;

pub use inverted::{
    build_index, BucketIndex, Hit, IndexBuilder, InvertedIndex, PostingList, SearchResult,
};
pub use io::{index_bytes, parse_index, read_index, write_index, UHDI_MAGIC, UHDI_VERSION};
pub use stats::{index_stats, BucketStats, IndexStats};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::sparse::{relevance, BucketDescriptor, BucketedRepresentation, SparseVector};
    use proptest::prelude::*;

    fn rep(buckets: &[&[(u32, f32)]]) -> BucketedRepresentation {
        BucketedRepresentation::new(
            buckets
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    (
                        BucketDescriptor::new(i as u32 + 1, 1, 16),
                        SparseVector::from_pairs(16, p.to_vec()).unwrap(),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn brute_force(
        docs: &[(String, BucketedRepresentation)],
        q: &BucketedRepresentation,
        k: usize,
    ) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64)> = docs
            .iter()
            .enumerate()
            .filter(|(_, (_, d))| {
                q.buckets()
                    .iter()
                    .zip(d.buckets())
                    .any(|((qd, qv), (_, dv))| {
                        qd.weight != 0.0 && qv.indices().iter().any(|i| dv.get(*i).is_some())
                    })
            })
            .map(|(i, (_, d))| (i as u32, relevance(q, d).unwrap()))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.truncate(k);
        out
    }

    #[test]
    fn empty_index() {
        let idx = build_index(Vec::<(String, BucketedRepresentation)>::new()).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert_eq!(idx.total_postings(), 0);
        let q = rep(&[&[(1, 1.0)]]);
        assert!(idx.search(&q, 5).unwrap().hits.is_empty());
        let back = parse_index(&index_bytes(&idx)).unwrap();
        assert_eq!(back, idx);
        let s = index_stats(&idx);
        assert_eq!((s.docs, s.postings, s.buckets.len()), (0, 0, 0));
    }

    #[test]
    fn single_document_postings() {
        let d = rep(&[&[(0, 0.1), (3, 0.2), (5, 0.3), (9, 0.4), (15, 0.5)]]);
        let idx = build_index([("d0", d)]).unwrap();
        let b = &idx.buckets()[0];
        assert_eq!(b.dims(), &[0, 3, 5, 9, 15]);
        assert!(b.postings().all(|(_, l)| l.len() == 1));
        let s = index_stats(&idx);
        assert_eq!(s.buckets[0].activation.len(), 5);
        assert!(s.buckets[0].activation.values().all(|&f| f == 1));
        assert_eq!(s.buckets[0].nnz_histogram.get(&5), Some(&1));
    }

    #[test]
    fn shared_dimension_in_ordinal_order() {
        let idx = build_index([
            ("a", rep(&[&[(2, 1.0)]])),
            ("b", rep(&[&[(1, 1.0), (2, 0.5)]])),
        ])
        .unwrap();
        let list = idx.buckets()[0].posting(2).unwrap();
        assert_eq!(list.iter().collect::<Vec<_>>(), vec![(0, 1.0), (1, 0.5)]);
    }

    #[test]
    fn build_errors() {
        let mut b = IndexBuilder::new();
        b.add("x", &rep(&[&[(1, 1.0)]])).unwrap();
        assert!(matches!(
            b.add("x", &rep(&[&[(2, 1.0)]])),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            b.add("y", &rep(&[&[(1, 1.0)], &[(1, 1.0)]])),
            Err(Error::InvalidInput(_))
        ));
        let idx = b.finish();
        assert!(matches!(
            idx.search(&rep(&[&[(1, 1.0)], &[]]), 3),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn search_edge_cases() {
        let idx = build_index([
            ("a", rep(&[&[(2, 1.0)]])),
            ("b", rep(&[&[(1, 1.0), (2, 0.5)]])),
            ("c", rep(&[&[(7, 1.0)]])),
        ])
        .unwrap();
        assert!(matches!(
            idx.search(&rep(&[&[(2, 1.0)]]), 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(idx
            .search(&rep(&[&[(9, 1.0)]]), 10)
            .unwrap()
            .hits
            .is_empty());
        let r = idx.search(&rep(&[&[(2, 1.0)]]), 10).unwrap();
        let ids: Vec<&str> = r.hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(r.hits[1].score, 0.5);
    }

    #[test]
    fn ties_break_by_ordinal() {
        let idx = build_index([
            ("z", rep(&[&[(4, 0.5)]])),
            ("a", rep(&[&[(4, 0.5)]])),
            ("m", rep(&[&[(4, 0.5)]])),
        ])
        .unwrap();
        let r = idx.search(&rep(&[&[(4, 1.0)]]), 2).unwrap();
        assert_eq!(
            r.hits.iter().map(|h| h.ordinal).collect::<Vec<_>>(),
            vec![0, 1]
        );
    }

    #[test]
    fn crc_matches_reference_check_value() {
        let crc = crc::Crc::<u64>::new(&crc::CRC_64_XZ);
        assert_eq!(crc.checksum(b"123456789"), 0x995D_C9BB_DF19_39FA);
    }

    fn sample_index() -> InvertedIndex {
        build_index([
            ("a", rep(&[&[(2, 1.0), (5, -0.25)], &[(0, 0.5)]])),
            ("b", rep(&[&[(1, 1.0), (2, 0.5)], &[]])),
            ("c", rep(&[&[], &[(0, 0.3), (15, 2.0)]])),
        ])
        .unwrap()
    }

    #[test]
    fn file_round_trip() {
        let idx = sample_index();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.uhdi");
        write_index(&idx, &p).unwrap();
        let back = read_index(&p).unwrap();
        assert_eq!(back, idx);
        let q = rep(&[&[(2, 0.7)], &[(0, 1.0), (15, 0.1)]]);
        assert_eq!(back.search(&q, 10).unwrap(), idx.search(&q, 10).unwrap());
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = index_bytes(&sample_index());
        for cut in 0..bytes.len() {
            let r = parse_index(&bytes[..cut]);
            assert!(matches!(r, Err(Error::CorruptIndex(_))), "cut {cut}: {r:?}");
        }
        for pos in 12..bytes.len() {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x10;
            assert!(
                matches!(parse_index(&bad), Err(Error::CorruptIndex(_))),
                "flip {pos}"
            );
        }
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(parse_index(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[1] = b'X';
        assert!(matches!(parse_index(&bad), Err(Error::Format(_))));
    }

    fn arb_vec() -> impl Strategy<Value = Vec<(u32, f32)>> {
        prop::collection::btree_map(0u32..16, 0.01f32..1.0, 0..5)
            .prop_map(|m| m.into_iter().collect())
    }

    fn arb_rep() -> impl Strategy<Value = BucketedRepresentation> {
        (arb_vec(), arb_vec()).prop_map(|(a, b)| rep(&[&a, &b]))
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            docs in prop::collection::vec(arb_rep(), 0..40),
            q in arb_rep(),
            w in (0u8..3, 0u8..3),
            k in 1usize..50,
        ) {
            let q = q.with_weights(&[f32::from(w.0) / 2.0, f32::from(w.1) / 2.0]).unwrap();
            let docs: Vec<(String, BucketedRepresentation)> =
                docs.into_iter().enumerate().map(|(i, d)| (format!("d{i}"), d)).collect();
            let idx = build_index(docs.clone()).unwrap();
            let got: Vec<(u32, f64)> =
                idx.search(&q, k).unwrap().hits.iter().map(|h| (h.ordinal, h.score)).collect();
            prop_assert_eq!(got, brute_force(&docs, &q, k));
        }

        #[test]
        fn zero_weight_bucket_equals_dropping_it(
            docs in prop::collection::vec(arb_rep(), 1..30),
            q in arb_rep(),
        ) {
            let named: Vec<(String, BucketedRepresentation)> =
                docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), d.clone())).collect();
            let full = build_index(named.clone()).unwrap();
            let reduced = build_index(
                named.iter().map(|(id, d)| (id.clone(), d.select(&[0]).unwrap())),
            )
            .unwrap();
            let a = full.search(&q.clone().with_weights(&[1.0, 0.0]).unwrap(), 100).unwrap();
            let b = reduced.search(&q.select(&[0]).unwrap(), 100).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn round_trip_and_stats_accounting(docs in prop::collection::vec(arb_rep(), 0..30)) {
            let idx = build_index(
                docs.into_iter().enumerate().map(|(i, d)| (format!("d{i}"), d)),
            )
            .unwrap();
            prop_assert_eq!(&parse_index(&index_bytes(&idx)).unwrap(), &idx);
            let s = index_stats(&idx);
            for b in &s.buckets {
                prop_assert_eq!(b.activation.values().sum::<usize>(), b.postings);
                prop_assert_eq!(b.nnz_histogram.values().sum::<usize>(), s.docs);
                prop_assert_eq!(
                    b.nnz_histogram.iter().map(|(n, c)| n * c).sum::<usize>(),
                    b.postings
                );
            }
        }
    }
}
