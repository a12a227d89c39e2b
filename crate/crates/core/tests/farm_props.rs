use std::time::Duration;

use packmp::slave::{slave_loop, HandlerTable, MasterPool};
use packmp::spmd::SpmdContext;
use packmp::transport::run_in_process;
use packmp::{Buffer, Encoding, Error};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() }
}

/// A pure handler: the reply is a function of the job alone.
fn transform(job: i64) -> i64 {
    job.wrapping_mul(31).wrapping_add(7) ^ (job >> 3)
}

fn table() -> HandlerTable<Vec<i64>> {
    HandlerTable::new()
        .with("work", |receipts: &mut Vec<i64>, args| {
            let (job, micros): (i64, u32) = (args.take()?, args.take()?);
            std::thread::sleep(Duration::from_micros(micros as u64));
            receipts.push(job);
            args.reset().put(&transform(job))?;
            Ok(())
        })
        .unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn joblist_exactly_once_and_equivalent(
        slaves in 1usize..=4,
        jobs in prop::collection::vec((any::<i64>(), 0u32..500), 0..30),
    ) {
        let table = table();
        let out = run_in_process(slaves + 1, Encoding::Portable, |ctx| {
            let spmd = SpmdContext::attach(ctx).unwrap();
            if spmd.myid() == 0 {
                let mut pool = MasterPool::new(&spmd, &table).unwrap();
                let packed: Vec<Vec<u8>> = jobs
                    .iter()
                    .map(|j| {
                        let mut b = Buffer::new(Encoding::Portable);
                        b.put(j).unwrap();
                        b.into_bytes()
                    })
                    .collect();
                let replies = pool.run_joblist("work", &packed).unwrap();
                // pool conservation after the run
                let all: Vec<usize> = pool.idle().iter().chain(pool.busy()).copied().collect();
                assert_eq!(all, (1..=slaves).collect::<Vec<_>>());
                assert!(pool.idle().is_disjoint(pool.busy()));
                let values: Vec<i64> = replies.into_iter().map(|mut r| r.take::<i64>().unwrap()).collect();
                (values, Vec::new())
            } else {
                let mut receipts = Vec::new();
                slave_loop(&spmd, &table, &mut receipts).unwrap();
                (Vec::new(), receipts)
            }
        });
        let serial: Vec<i64> = jobs.iter().map(|(j, _)| transform(*j)).collect();
        prop_assert_eq!(&out[0].0, &serial);
        let mut received: Vec<i64> = out[1..].iter().flat_map(|(_, r)| r.clone()).collect();
        let mut sent: Vec<i64> = jobs.iter().map(|(j, _)| *j).collect();
        received.sort();
        sent.sort();
        prop_assert_eq!(received, sent);
    }

    /// idle and busy partition the slaves after every pool operation.
    #[test]
    fn pool_conservation(ops in prop::collection::vec(any::<bool>(), 0..30)) {
        let table = table();
        run_in_process(4, Encoding::Native, |ctx| {
            let spmd = SpmdContext::attach(ctx).unwrap();
            if spmd.myid() != 0 {
                return slave_loop(&spmd, &table, &mut Vec::new()).unwrap();
            }
            let mut pool = MasterPool::new(&spmd, &table).unwrap();
            let check = |pool: &MasterPool| {
                assert!(pool.idle().is_disjoint(pool.busy()));
                let mut all: Vec<usize> = pool.idle().iter().chain(pool.busy()).copied().collect();
                all.sort();
                assert_eq!(all, vec![1, 2, 3]);
            };
            for &dispatch in &ops {
                if dispatch {
                    let mut req = pool.request("work").unwrap();
                    req.put(&1i64).unwrap().put(&0u32).unwrap();
                    match pool.exec(req) {
                        Ok(_) => {}
                        Err(Error::NoIdleSlave) => assert!(pool.idle().is_empty()),
                        Err(e) => panic!("{e}"),
                    }
                } else {
                    match pool.get_returnv() {
                        Ok(_) => {}
                        Err(Error::NoOutstanding) => assert!(pool.busy().is_empty()),
                        Err(e) => panic!("{e}"),
                    }
                }
                check(&pool);
            }
            pool.shutdown().unwrap();
            check(&pool);
        });
    }
}
