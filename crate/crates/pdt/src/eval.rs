//! Cross-domain evaluation: embed the eval gallery and probes (target
//! domain through the PDT block when one is supplied), then compute the
//! verification and identification metrics.

use crate::backbone::Backbone;
use crate::block::PdtBlock;
use crate::data::{Domain, Manifest, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, verification_scores, IdentificationSet, MetricsReport, ScoreSet};
use crate::tensor::{self, Tensor};
use crate::trainer::ImageStore;

/// Which domain enrolls the gallery. `SourceGallery` is the default
/// protocol (source gallery, target probes); `TargetGallery` swaps them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    SourceGallery,
    TargetGallery,
}

impl Direction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "st" => Ok(Direction::SourceGallery),
            "ts" => Ok(Direction::TargetGallery),
            _ => Err(Error::Config(format!(
                "unknown direction '{s}' (expected st or ts)"
            ))),
        }
    }
}

fn replicate_if_needed(x: &Tensor) -> Result<Tensor> {
    if x.shape()[1] == 1 {
        tensor::concat_channels(&[x.clone(), x.clone(), x.clone()])
    } else {
        Ok(x.clone())
    }
}

/// Embed manifest rows without gradients. Target-domain images pass
/// through the PDT block when one is given; source images go straight to
/// the backbone.
fn embed_rows(
    store: &ImageStore,
    rows: &[&ManifestRow],
    backbone: &Backbone,
    pdt: Option<&PdtBlock>,
) -> Result<Vec<(u32, Vec<f64>)>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(16) {
        let e = tensor::no_grad(|| -> Result<Tensor> {
            let x = store.batch(chunk)?;
            let x = match (chunk[0].domain, pdt) {
                (Domain::Target, Some(block)) => block.forward(&replicate_if_needed(&x)?)?,
                _ => x,
            };
            backbone.embed(&x)
        })?;
        let d = backbone.embed_dim;
        let data = e.to_vec();
        for (row, emb) in chunk.iter().zip(data.chunks(d)) {
            out.push((row.id, emb.to_vec()));
        }
    }
    Ok(out)
}

/// Full cross-domain evaluation over the manifest's eval splits.
/// Returns the metrics and the raw score set (for ROC output).
pub fn evaluate_manifest(
    manifest: &Manifest,
    backbone: &Backbone,
    pdt: Option<&PdtBlock>,
    direction: Direction,
) -> Result<(MetricsReport, ScoreSet)> {
    let store = ImageStore::new(manifest);
    let mut gallery_rows: Vec<&ManifestRow> = manifest.rows_in(Split::EvalGallery).collect();
    let mut probe_rows: Vec<&ManifestRow> = manifest.rows_in(Split::EvalProbe).collect();
    if direction == Direction::TargetGallery {
        std::mem::swap(&mut gallery_rows, &mut probe_rows);
    }
    if gallery_rows.is_empty() || probe_rows.is_empty() {
        return Err(Error::Data(
            "manifest has no eval gallery or no eval probe rows".into(),
        ));
    }
    // rows must be domain-uniform per side so batching is well-shaped
    gallery_rows.sort_by_key(|r| (r.domain == Domain::Target, r.id, r.path.clone()));
    probe_rows.sort_by_key(|r| (r.domain == Domain::Target, r.id, r.path.clone()));

    let embed_side = |rows: &[&'_ ManifestRow]| -> Result<Vec<(u32, Vec<f64>)>> {
        let (src, tgt): (Vec<&ManifestRow>, Vec<&ManifestRow>) =
            rows.iter().partition(|r| r.domain == Domain::Source);
        let mut embs = Vec::new();
        if !src.is_empty() {
            embs.extend(embed_rows(&store, &src, backbone, pdt)?);
        }
        if !tgt.is_empty() {
            embs.extend(embed_rows(&store, &tgt, backbone, pdt)?);
        }
        Ok(embs)
    };

    let idset = IdentificationSet {
        gallery: embed_side(&gallery_rows)?,
        probes: embed_side(&probe_rows)?,
    };
    let report = evaluate(&idset)?;
    let scores = verification_scores(&idset)?;
    Ok((report, scores))
}
