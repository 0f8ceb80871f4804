//! Dense, double-precision views of bags as consumed by the SGD loop.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{l2_norm, FeatureBag, Label};

/// One bag's features as a `K x M` matrix plus its objectness scores.
#[derive(Debug, Clone, Copy)]
pub struct BagView<'a> {
    pub features: ArrayView2<'a, f64>,
    pub objectness: &'a [f64],
}

/// Random-access provider of training bags.
///
/// Implementations may hold everything in memory or decode bags on demand from disk;
/// `visit` hands out one bag at a time so a streaming source keeps at most one
/// decoded bag alive.
pub trait BagSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn feature_dim(&self) -> usize;

    fn image_id(&self, index: usize) -> &str;

    fn label(&self, index: usize, class: &str) -> Result<Label>;

    /// Whether features were scaled to unit L2 norm while packing.
    fn l2_normalized(&self) -> bool;

    /// Calls `f(index, view)` for each requested index, in the given order.
    fn visit(&self, indices: &[usize], f: &mut dyn FnMut(usize, BagView<'_>)) -> Result<()>;
}

/// Converts one bag's regions into a dense `f64` matrix, optionally normalizing rows.
pub(crate) fn pack_features<'a>(
    rows: impl ExactSizeIterator<Item = &'a [f32]>,
    dim: usize,
    normalize: bool,
    out: &mut Array2<f64>,
) {
    let k = rows.len();
    if out.dim() != (k, dim) {
        *out = Array2::zeros((k, dim));
    }
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        let scale = if normalize {
            let n = l2_norm(src);
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        } else {
            1.0
        };
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = f64::from(s) * scale;
        }
    }
}

struct PackedBag {
    features: Array2<f64>,
    objectness: Vec<f64>,
}

/// In-memory source built from a slice of bags.
pub struct MemorySource<'a> {
    bags: &'a [FeatureBag],
    packed: Vec<PackedBag>,
    dim: usize,
    normalize: bool,
}

impl<'a> MemorySource<'a> {
    pub fn new(bags: &'a [FeatureBag], normalize: bool) -> Result<Self> {
        let dim = bags.first().map_or(0, FeatureBag::feature_dim);
        let mut packed = Vec::with_capacity(bags.len());
        for bag in bags {
            if bag.feature_dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: bag.feature_dim(),
                });
            }
            let mut features = Array2::zeros((0, 0));
            pack_features(
                bag.regions().iter().map(|r| r.feature()),
                dim,
                normalize,
                &mut features,
            );
            let objectness = bag.regions().iter().map(|r| f64::from(r.objectness())).collect();
            packed.push(PackedBag {
                features,
                objectness,
            });
        }
        Ok(Self {
            bags,
            packed,
            dim,
            normalize,
        })
    }

    pub fn bags(&self) -> &'a [FeatureBag] {
        self.bags
    }
}

impl BagSource for MemorySource<'_> {
    fn len(&self) -> usize {
        self.bags.len()
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn image_id(&self, index: usize) -> &str {
        self.bags[index].image_id()
    }

    fn label(&self, index: usize, class: &str) -> Result<Label> {
        super::loss::label_of(&self.bags[index], class)
    }

    fn l2_normalized(&self) -> bool {
        self.normalize
    }

    fn visit(&self, indices: &[usize], f: &mut dyn FnMut(usize, BagView<'_>)) -> Result<()> {
        for &i in indices {
            let p = &self.packed[i];
            f(
                i,
                BagView {
                    features: p.features.view(),
                    objectness: &p.objectness,
                },
            );
        }
        Ok(())
    }
}
