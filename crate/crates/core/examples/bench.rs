//! Time fused multi-class training on a synthetic archive of configurable size.
//!
//! cargo run --release --example bench [-- n_images k_regions feature_dim n_classes]
//!
//! The paper-sized run (5011 x 300 x 2048, 20 classes) needs about 12.3 GB of disk and is
//! better started with `mimax bench --paper-scale --stream`.

fn main() -> mimax::Result<()> {
    let arg = |i: usize, default: &str| std::env::args().nth(i).unwrap_or_else(|| default.to_owned());
    let (n, k, m, c) = (arg(1, "1000"), arg(2, "50"), arg(3, "256"), arg(4, "5"));
    mimax::cli::run([
        "mimax", "bench", "--n-images", &n, "--k-regions", &k, "--feature-dim", &m, "--n-classes", &c,
    ])
}
