//! Pack throughput against a plain byte copy.

use std::hint::black_box;
use std::time::{Duration, Instant};

use packmp::pack::pack;
use packmp::typedesc::{FieldKind, PrimTag};
use packmp::{Buffer, DynValue, Encoding, TypeRegistry};

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub size: usize,
    pub reps: usize,
    pub encoding: Encoding,
    /// Median time of one raw copy of `size` bytes.
    pub copy: Duration,
    /// Median time of packing `size` bytes as a `seq<u8>`.
    pub pack: Duration,
    /// Same value packed through the descriptor-driven route.
    pub dyn_pack: Duration,
    /// Portable `seq<f64>` of `size / 8` elements, and a copy of as many bytes.
    pub f64_portable: Duration,
    pub f64_copy: Duration,
}

fn ratio(a: Duration, b: Duration) -> f64 {
    a.as_secs_f64() / b.as_secs_f64().max(1e-9)
}

impl BenchReport {
    /// Pack time over copy time; throughput ratio inverted.
    pub fn ratio(&self) -> f64 {
        ratio(self.pack, self.copy)
    }

    pub fn dyn_ratio(&self) -> f64 {
        ratio(self.dyn_pack, self.copy)
    }

    pub fn f64_portable_ratio(&self) -> f64 {
        ratio(self.f64_portable, self.f64_copy)
    }

    pub fn throughput(&self, d: Duration) -> f64 {
        self.size as f64 / d.as_secs_f64().max(1e-9) / 1e6
    }
}

fn median(mut reps: Vec<Duration>) -> Duration {
    reps.sort();
    reps[reps.len() / 2]
}

fn time(reps: usize, mut f: impl FnMut()) -> Duration {
    f();
    median(
        (0..reps)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed()
            })
            .collect(),
    )
}

fn copy_of(src: &[u8]) -> Vec<u8> {
    let mut dst = Vec::with_capacity(src.len());
    dst.extend_from_slice(src);
    dst
}

pub fn bench_pack(size: usize, reps: usize, encoding: Encoding) -> BenchReport {
    let size = size.max(1);
    let reps = reps.max(1);
    let src: Vec<u8> = (0..size).map(|i| (i * 31 % 251) as u8).collect();
    let wire = match encoding {
        Encoding::Native => size + 4,
        Encoding::Portable => 4 * size + 4,
    };

    let copy = time(reps, || {
        black_box(copy_of(black_box(&src)));
    });
    let pack_time = time(reps, || {
        let mut b = Buffer::with_capacity(encoding, wire);
        b.put(black_box(&src)).expect("within length limit");
        black_box(b);
    });

    let registry = TypeRegistry::new();
    let kind = FieldKind::seq(PrimTag::U8.into());
    let value = DynValue::Seq(src.iter().map(|&b| b.into()).collect());
    let dyn_pack = time(reps.min(20), || {
        let mut b = Buffer::with_capacity(encoding, wire);
        pack(&mut b, &registry, &kind, black_box(&value)).expect("conforming value");
        black_box(b);
    });

    let floats: Vec<f64> = (0..(size / 8).max(1)).map(|i| i as f64 * 0.5).collect();
    let float_bytes: Vec<u8> = floats.iter().flat_map(|f| f.to_ne_bytes()).collect();
    let f64_copy = time(reps, || {
        black_box(copy_of(black_box(&float_bytes)));
    });
    let f64_portable = time(reps, || {
        let mut b = Buffer::with_capacity(Encoding::Portable, float_bytes.len() + 4);
        b.put(black_box(&floats)).expect("within length limit");
        black_box(b);
    });

    BenchReport { size, reps, encoding, copy, pack: pack_time, dyn_pack, f64_portable, f64_copy }
}
