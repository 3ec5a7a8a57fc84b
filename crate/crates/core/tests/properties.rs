use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;

use tiny_lm::committee::combine_logits;
use tiny_lm::corpus::{build_custom_subset, overlap_of, sample_random_subset, Corpus, TokenSet};
use tiny_lm::model::{Batch, ConvLayerSpec, ModelConfig, ParamKind, ParamStore};
use tiny_lm::numerics::kernels::{conv2d_same, masked_softmax_rows, same_padding, softmax};
use tiny_lm::numerics::Tensor;
use tiny_lm::rng::seeded;
use tiny_lm::tokenizer::{encode, TokenId, Vocab, BERT_VOCAB_SIZE, CLS, MASK, PAD, SEP, UNK};
use tiny_lm::train::{lr_schedule, mask_batch, AdamW, TrainConfig};

fn bert_vocab() -> &'static Vocab {
    static V: OnceLock<Vocab> = OnceLock::new();
    V.get_or_init(|| {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/bert-base-uncased-vocab.txt");
        Vocab::load(path).unwrap()
    })
}

/// Specials followed by `w0 .. w{n-1}`.
fn word_vocab(n: usize) -> Vocab {
    let mut t: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    t.extend((0..n).map(|i| format!("w{i}")));
    Vocab::from_tokens(t, None).unwrap()
}

const WORDS: usize = 30;

/// Paragraphs as lists of word indices below `WORDS`.
fn paragraphs() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(0..WORDS, 1..8), 0..25)
}

fn corpus_of(paras: &[Vec<usize>], vocab: &Vocab) -> Corpus {
    let texts: Vec<String> =
        paras.iter().map(|p| p.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ")).collect();
    Corpus::from_texts(texts.iter().map(String::as_str), vocab)
}

fn word_ids(words: &BTreeSet<usize>, vocab: &Vocab) -> TokenSet {
    TokenSet::from_ids(words.iter().map(|w| vocab.id(&format!("w{w}")).unwrap()))
}

fn naive_conv(input: &[f64], shape: [usize; 3], filters: &[f64], fshape: [usize; 4], bias: &[f64]) -> Vec<f64> {
    let [c, r, w] = shape;
    let [o, _, kh, kw] = fshape;
    let (pt, _) = same_padding(kh);
    let (pl, _) = same_padding(kw);
    let mut out = vec![0.0; o * r * w];
    for oc in 0..o {
        for y in 0..r {
            for x in 0..w {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let (iy, ix) = (y + dy, x + dx);
                            if iy < pt || ix < pl || iy - pt >= r || ix - pl >= w {
                                continue;
                            }
                            acc += input[(ic * r + iy - pt) * w + ix - pl] * filters[((oc * c + ic) * kh + dy) * kw + dx];
                        }
                    }
                }
                out[(oc * r + y) * w + x] = acc;
            }
        }
    }
    out
}

/// Logits on a 1/64 grid, so sums in any order are exact.
fn dyadic_logits(members: usize, labels: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec((-512i32..512).prop_map(|k| k as f64 / 64.0), labels), members)
}

fn predict(members: &[Vec<f64>]) -> usize {
    let refs: Vec<&[f64]> = members.iter().map(Vec::as_slice).collect();
    combine_logits(&refs).0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, data in prop::collection::vec(-1e4f64..1e4, 1..40)) {
        let cols = data.len();
        let x = Tensor::new(vec![rows, cols], data.repeat(rows)).unwrap();
        let y = softmax(&x, 1).unwrap();
        for row in y.data().chunks(cols) {
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        let y32 = softmax(&x.cast::<f32>(), 1).unwrap();
        for row in y32.data().chunks(cols) {
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn masked_rows_ignore_pad_keys(
        keys in 1usize..9,
        raw in prop::collection::vec(-20.0f64..20.0, 24),
        keep_bits in prop::collection::vec(any::<bool>(), 8),
    ) {
        let mut keep = keep_bits[..keys].to_vec();
        keep[0] = true;
        let scores = &raw[..3 * keys];
        let p = masked_softmax_rows(scores, &keep, 1, 3, keys);
        for row in p.chunks(keys) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            for (v, k) in row.iter().zip(&keep) {
                if !k {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn conv_matches_naive_loops(
        c in 1usize..3, r in 1usize..7, w in 1usize..5, o in 1usize..3,
        kh in 1usize..5, kw in 1usize..4, seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = seeded(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (input, filters, bias) = (draw(c * r * w), draw(o * c * kh * kw), draw(o));
        let expect = naive_conv(&input, [c, r, w], &filters, [o, c, kh, kw], &bias);
        let got = conv2d_same(
            &Tensor::new(vec![c, r, w], input.clone()).unwrap(),
            &Tensor::new(vec![o, c, kh, kw], filters.clone()).unwrap(),
            &Tensor::new(vec![o], bias.clone()).unwrap(),
        ).unwrap();
        prop_assert_eq!(got.shape(), &[o, r, w]);
        prop_assert_eq!(got.data(), &expect[..]);
        let got32 = conv2d_same(
            &Tensor::new(vec![c, r, w], input).unwrap().cast::<f32>(),
            &Tensor::new(vec![o, c, kh, kw], filters).unwrap().cast::<f32>(),
            &Tensor::new(vec![o], bias).unwrap().cast::<f32>(),
        ).unwrap();
        for (a, b) in got32.data().iter().zip(&expect) {
            prop_assert!((*a as f64 - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn encoding_layout(text in "\\PC{0,400}") {
        let v = bert_vocab();
        let sp = v.specials();
        let e = encode(&text, v);
        prop_assert_eq!(e.ids.len(), 128);
        prop_assert!(e.ids.iter().all(|&id| (id as usize) < BERT_VOCAB_SIZE));
        prop_assert_eq!(e.ids[0], sp.cls);
        prop_assert!(!e.ids.contains(&sp.mask));
        let seps: Vec<usize> = (0..128).filter(|&i| e.ids[i] == sp.sep).collect();
        prop_assert_eq!(seps, vec![e.real_len - 1]);
        for i in 0..128 {
            prop_assert_eq!(e.attention_mask[i], i < e.real_len);
            prop_assert_eq!(e.ids[i] == sp.pad, i >= e.real_len);
        }
        prop_assert_eq!(encode(&text, v), e);
    }

    #[test]
    fn subset_token_union_and_filtering(paras in paragraphs(), allowed in prop::collection::btree_set(0..WORDS, 1..WORDS)) {
        let vocab = word_vocab(WORDS);
        let corpus = corpus_of(&paras, &vocab);
        let allowed_ids = word_ids(&allowed, &vocab);
        let s = build_custom_subset(&corpus, &allowed_ids, &vocab).unwrap();
        prop_assert_eq!(s.len(), s.paragraphs.len());
        let mut union = BTreeSet::new();
        for p in &s.paragraphs {
            for t in p.content_tokens(&vocab) {
                prop_assert!(allowed_ids.contains(t));
                union.insert(t);
            }
        }
        prop_assert_eq!(s.tw.ids(), &union);
        // Every paragraph outside the subset uses a forbidden word.
        for (i, p) in paras.iter().enumerate() {
            let inside = s.indices.contains(&i);
            prop_assert_eq!(inside, p.iter().all(|w| allowed.contains(w)));
        }
    }

    #[test]
    fn custom_subsets_grow_with_the_allowed_set(
        paras in paragraphs(),
        small in prop::collection::btree_set(0..WORDS, 1..WORDS),
        extra in prop::collection::btree_set(0..WORDS, 0..WORDS),
    ) {
        let vocab = word_vocab(WORDS);
        let corpus = corpus_of(&paras, &vocab);
        let big: BTreeSet<usize> = small.union(&extra).copied().collect();
        let a = build_custom_subset(&corpus, &word_ids(&small, &vocab), &vocab).unwrap();
        let b = build_custom_subset(&corpus, &word_ids(&big, &vocab), &vocab).unwrap();
        let b_idx: BTreeSet<usize> = b.indices.iter().copied().collect();
        prop_assert!(a.indices.iter().all(|i| b_idx.contains(i)));
    }

    #[test]
    fn missing_tokens_never_grow_with_more_paragraphs(
        paras in paragraphs(),
        task in prop::collection::vec(0..WORDS, 1..60),
        cut in any::<prop::sample::Index>(),
        seed in any::<u64>(),
    ) {
        let vocab = word_vocab(WORDS);
        let corpus = corpus_of(&paras, &vocab);
        let tc = TokenSet::counted(task.iter().map(|w| vocab.id(&format!("w{w}")).unwrap()));
        let all = sample_random_subset(&corpus, corpus.len(), seed, &vocab);
        let k = if corpus.is_empty() { 0 } else { cut.index(corpus.len() + 1) };
        let prefix = TokenSet::counted(all.paragraphs[..k].iter().flat_map(|p| p.content_tokens(&vocab)));
        let fewer = overlap_of(k, &prefix, &tc);
        let more = overlap_of(all.len(), &all.tw, &tc);
        prop_assert!(more.tm <= fewer.tm);
        prop_assert!(more.weighted_overlap >= fewer.weighted_overlap);
        // Brute-force T_M and the weighted overlap.
        let missing: Vec<TokenId> = tc.iter().filter(|t| !prefix.contains(*t)).collect();
        prop_assert_eq!(&fewer.missing, &missing);
        let covered = task.iter().filter(|w| prefix.contains(vocab.id(&format!("w{w}")).unwrap())).count();
        prop_assert!((fewer.weighted_overlap - covered as f64 / task.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn random_sampling_is_reproducible(paras in paragraphs(), size in 0usize..30, seed in any::<u64>()) {
        let vocab = word_vocab(WORDS);
        let corpus = corpus_of(&paras, &vocab);
        let a = sample_random_subset(&corpus, size, seed, &vocab);
        let b = sample_random_subset(&corpus, size, seed, &vocab);
        prop_assert_eq!(&a.indices, &b.indices);
        prop_assert_eq!(a.len(), size.min(corpus.len()));
        prop_assert_eq!(a.indices.iter().collect::<BTreeSet<_>>().len(), a.len());
    }

    #[test]
    fn masking_leaves_specials_alone(
        lens in prop::collection::vec(0usize..14, 1..6),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let vocab = word_vocab(WORDS);
        let sp = vocab.specials();
        let seq = 16;
        let mut rng = seeded(seed);
        let (mut ids, mut keep) = (Vec::new(), Vec::new());
        for &len in &lens {
            ids.push(sp.cls);
            ids.extend((0..len).map(|_| rng.random_range(0..vocab.len() as TokenId)));
            ids.push(sp.sep);
            ids.extend(std::iter::repeat_n(sp.pad, seq - len - 2));
            keep.extend((0..seq).map(|i| i < len + 2));
        }
        let batch = Batch::new(ids.clone(), keep, lens.len(), seq).unwrap();
        let m = mask_batch(&batch, sp, vocab.len(), &mut rng);
        for (i, &orig) in ids.iter().enumerate() {
            match m.labels[i] {
                Some(t) => {
                    prop_assert!(!sp.contains(orig));
                    prop_assert_eq!(t, orig);
                    prop_assert!(!sp.contains(m.batch.ids[i]) || m.batch.ids[i] == sp.mask);
                }
                None => prop_assert_eq!(m.batch.ids[i], orig),
            }
            prop_assert_eq!(m.labels[i].is_some(), m.actions[i].is_some());
        }
    }

    #[test]
    fn schedule_decays_then_freezes(epochs in 1usize..120, freeze in 1usize..80, spe in 1usize..20, lr in 1e-6f64..1e-2) {
        let cfg = TrainConfig { learning_rate: lr, epochs, schedule_epochs: freeze, ..TrainConfig::pretrain_default(0) };
        prop_assert_eq!(lr_schedule(0, spe, &cfg), lr);
        let steps = spe * epochs;
        let mut prev = f64::INFINITY;
        for t in 0..=steps {
            let eta = lr_schedule(t, spe, &cfg);
            prop_assert!(eta <= prev && eta >= 0.0);
            prev = eta;
            if t >= spe * freeze {
                prop_assert_eq!(eta, lr_schedule(spe * freeze.min(epochs), spe, &cfg));
            }
        }
    }

    #[test]
    fn adamw_without_decay_is_adam(
        init in prop::collection::vec(-1.0f64..1.0, 1..12),
        grads in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 12), 1..6),
        lr in 1e-5f64..1e-1,
        decay in 0.0f64..0.5,
    ) {
        let n = init.len();
        let mut store = ParamStore::new();
        store.insert("w", ParamKind::Weight, Tensor::new(vec![n], init.clone()).unwrap());
        store.insert("b", ParamKind::Bias, Tensor::new(vec![n], init.clone()).unwrap());
        let mut opt = AdamW::new(&store);
        let (mut w, mut m, mut v) = (init.clone(), vec![0.0; n], vec![0.0; n]);
        for (t, g) in grads.iter().enumerate() {
            let g = &g[..n];
            let gt = vec![Tensor::new(vec![n], g.to_vec()).unwrap(), Tensor::new(vec![n], g.to_vec()).unwrap()];
            // The weight sees zero decay, the bias is exempt from any decay.
            let mut no_decay = store.clone();
            opt.clone().step(&mut no_decay, &gt, lr, 0.0).unwrap();
            opt.step(&mut store, &gt, lr, decay).unwrap();
            let t = t as i32 + 1;
            let (c1, c2) = (1.0 - 0.9f64.powi(t), 1.0 - 0.999f64.powi(t));
            for j in 0..n {
                m[j] = 0.9 * m[j] + (1.0 - 0.9) * g[j];
                v[j] = 0.999 * v[j] + (1.0 - 0.999) * g[j] * g[j];
                w[j] -= lr * ((m[j] / c1) / ((v[j] / c2).sqrt() + 1e-8));
            }
            prop_assert_eq!(no_decay.tensor("w").data(), &w[..]);
            prop_assert_eq!(store.tensor("b").data(), &w[..]);
            // Keep the decayed weight in step with the reference for the next round.
            store.get_mut("w").unwrap().value = Tensor::new(vec![n], w.clone()).unwrap();
        }
    }

    #[test]
    fn committee_ignores_member_order(members in dyadic_logits(4, 5), perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| members[i].clone()).collect();
        prop_assert_eq!(predict(&members), predict(&shuffled));
    }

    #[test]
    fn constant_member_changes_nothing(members in dyadic_logits(3, 6), k in (-512i32..512).prop_map(|k| k as f64 / 64.0)) {
        let mut more = members.clone();
        more.push(vec![k; 6]);
        prop_assert_eq!(predict(&members), predict(&more));
    }

    #[test]
    fn common_scaling_changes_nothing(members in dyadic_logits(3, 6), e in -10i32..10) {
        // Powers of two scale exactly, so ties stay ties.
        let c = 2f64.powi(e);
        let scaled: Vec<Vec<f64>> = members.iter().map(|m| m.iter().map(|x| x * c).collect()).collect();
        prop_assert_eq!(predict(&members), predict(&scaled));
    }

    #[test]
    fn committee_of_one_is_the_member(logits in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let (label, sum) = combine_logits(&[logits.as_slice()]);
        prop_assert_eq!(&sum, &logits);
        let first_max = (0..logits.len()).find(|&i| logits.iter().all(|&x| x <= logits[i])).unwrap();
        prop_assert_eq!(label, first_max);
    }

    #[test]
    fn latency_is_four_per_block_plus_convs(blocks in 1usize..13, convs in 0usize..5, heads in 1usize..13) {
        let c = ModelConfig::bert(blocks, heads).with_conv(vec![ConvLayerSpec::new(2, 3, 3); convs]);
        prop_assert_eq!(c.latency(), 4 * blocks + convs + 1);
        prop_assert_eq!(c.hidden(), heads * c.head_dim);
    }
}
