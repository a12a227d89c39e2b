mod support;

use std::sync::Arc;

use packmp::msgbuf::MsgBuf;
use packmp::transport::run_in_process;
use packmp::{DynValue, Encoding, TypeRegistry};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::random::random_case;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() }
}

fn encoding(portable: bool) -> Encoding {
    if portable {
        Encoding::Portable
    } else {
        Encoding::Native
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn send_get_duality(seeds in prop::collection::vec(any::<u64>(), 1..5), portable: bool) {
        let cases: Vec<_> = seeds.iter().map(|s| random_case(&mut ChaCha8Rng::seed_from_u64(*s))).collect();
        let out = run_in_process(2, encoding(portable), |ctx| {
            let mut mb = MsgBuf::new(&ctx);
            if ctx.rank() == 0 {
                for c in &cases {
                    mb.set_registry(Arc::new(c.registry.clone()));
                    mb.put_value(&c.kind, &c.value).unwrap();
                }
                mb.send(1).unwrap();
                assert_eq!((mb.size(), mb.buffer().cursor()), (0, 0));
                Vec::new()
            } else {
                mb.get(0usize).unwrap();
                let vs: Vec<DynValue> = cases
                    .iter()
                    .map(|c| {
                        mb.set_registry(Arc::new(c.registry.clone()));
                        mb.take_value(&c.kind).unwrap()
                    })
                    .collect();
                assert_eq!(mb.buffer().remaining(), 0);
                vs
            }
        });
        prop_assert_eq!(&out[1], &cases.iter().map(|c| c.value.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn bcast_agreement(n in 1usize..=5, root_seed: usize, bytes: Vec<u8>, portable: bool) {
        let root = root_seed % n;
        let out = run_in_process(n, encoding(portable), |ctx| {
            let mut mb = MsgBuf::new(&ctx);
            if ctx.rank() == root {
                mb.buffer_mut().put_raw(&bytes);
            } else {
                mb.buffer_mut().put_raw(b"stale");
            }
            mb.bcast(root).unwrap();
            mb.data().to_vec()
        });
        for got in out {
            prop_assert_eq!(&got, &bytes);
        }
    }

    #[test]
    fn gather_order_and_hygiene(parts in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..20), 1..=5), root_seed: usize) {
        let n = parts.len();
        let root = root_seed % n;
        let out = run_in_process(n, Encoding::Native, |ctx| {
            let mut mb = MsgBuf::new(&ctx);
            mb.buffer_mut().put_raw(&parts[ctx.rank()]);
            mb.gather(root).unwrap();
            (mb.data().to_vec(), mb.buffer().cursor())
        });
        for (r, (bytes, cursor)) in out.into_iter().enumerate() {
            prop_assert_eq!(cursor, 0);
            if r == root {
                prop_assert_eq!(bytes, parts.concat());
            } else {
                prop_assert!(bytes.is_empty());
            }
        }
    }

    #[test]
    fn scatter_then_gather_is_identity(parts in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..20), 1..=5), root_seed: usize) {
        let n = parts.len();
        let root = root_seed % n;
        let out = run_in_process(n, Encoding::Native, |ctx| {
            let mut mb = MsgBuf::new(&ctx);
            if ctx.rank() == root {
                for p in &parts {
                    mb.put_segment(p).unwrap();
                }
            }
            mb.scatter(root).unwrap();
            let mine = mb.data().to_vec();
            mb.gather(root).unwrap();
            (mine, mb.data().to_vec())
        });
        for (r, (mine, gathered)) in out.into_iter().enumerate() {
            prop_assert_eq!(&mine, &parts[r]);
            if r == root {
                prop_assert_eq!(gathered, parts.concat());
            }
        }
    }
}

#[test]
fn mixed_types_idiom() {
    let reg = Arc::new(TypeRegistry::new());
    let out = run_in_process(3, Encoding::Portable, |ctx| {
        let mut mb = MsgBuf::new(&ctx).with_registry(reg.clone());
        let (a, b, c) = (7i32, 2.5f64, String::from("seven"));
        let mut seen = Vec::new();
        if ctx.rank() == 0 {
            mb.put(&a).unwrap().put(&b).unwrap().put(&c).unwrap().send(1).unwrap();
        } else if ctx.rank() == 1 {
            mb.get(0usize).unwrap();
            seen.push((mb.take::<i32>().unwrap(), mb.take::<f64>().unwrap(), mb.take::<String>().unwrap()));
        }
        mb.reset();
        if ctx.rank() == 0 {
            mb.put(&a).unwrap().put(&b).unwrap().put(&c).unwrap();
        }
        mb.bcast(0).unwrap();
        seen.push((mb.take::<i32>().unwrap(), mb.take::<f64>().unwrap(), mb.take::<String>().unwrap()));
        seen
    });
    let expect = (7, 2.5, "seven".to_string());
    assert_eq!(out[0], vec![expect.clone()]);
    assert_eq!(out[1], vec![expect.clone(), expect.clone()]);
    assert_eq!(out[2], vec![expect]);
}
