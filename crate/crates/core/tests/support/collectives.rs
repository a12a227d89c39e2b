//! A single-process reference for broadcast, gather and scatter.

use packmp::transport::run_in_process;
use packmp::Encoding;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct PayloadSet {
    pub root: usize,
    pub bcast: Vec<u8>,
    pub contributions: Vec<Vec<u8>>,
    pub segments: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankOutcome {
    pub bcast: Vec<u8>,
    pub gathered: Option<Vec<Vec<u8>>>,
    pub scattered: Vec<u8>,
}

fn bytes<R: Rng>(rng: &mut R) -> Vec<u8> {
    let n = if rng.gen_bool(0.1) { 0 } else { rng.gen_range(1..200) };
    (0..n).map(|_| rng.gen()).collect()
}

pub fn random_set<R: Rng>(rng: &mut R, n: usize) -> PayloadSet {
    PayloadSet {
        root: rng.gen_range(0..n),
        bcast: bytes(rng),
        contributions: (0..n).map(|_| bytes(rng)).collect(),
        segments: (0..n).map(|_| bytes(rng)).collect(),
    }
}

pub fn reference(set: &PayloadSet) -> Vec<RankOutcome> {
    let n = set.contributions.len();
    (0..n)
        .map(|r| RankOutcome {
            bcast: set.bcast.clone(),
            gathered: (r == set.root).then(|| set.contributions.clone()),
            scattered: set.segments[r].clone(),
        })
        .collect()
}

pub fn in_process(set: &PayloadSet, encoding: Encoding) -> Vec<RankOutcome> {
    let n = set.contributions.len();
    run_in_process(n, encoding, |ctx| {
        let w = ctx.world();
        let r = ctx.rank();
        let is_root = r == set.root;
        let bcast = ctx.broadcast(&w, set.root, if is_root { set.bcast.clone() } else { Vec::new() }).unwrap();
        let gathered = ctx.gather(&w, set.root, set.contributions[r].clone()).unwrap();
        let scattered = ctx.scatter(&w, set.root, if is_root { set.segments.clone() } else { Vec::new() }).unwrap();
        RankOutcome { bcast, gathered, scattered }
    })
}
