//! Image metrics and bucketed evaluation reports.

mod metrics;

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

pub use metrics::{psnr, psnr_from_mse, ssim, ssim_taps, PSNR_CAP, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

use crate::camera::{overlap_probe_depth, view_overlap};
use crate::error::{Error, Result};
use crate::network::H3rModel;
use crate::raster::render;
use crate::tensor::{Real, Tape, Tensor};
use crate::train::TrainSample;

/// How scenes are grouped in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Bucket {
    #[default]
    None,
    /// Mean pairwise context overlap in quarters.
    Overlap,
    /// Number of context views.
    Views,
}

impl std::str::FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Bucket::None),
            "overlap" => Ok(Bucket::Overlap),
            "views" => Ok(Bucket::Views),
            other => Err(Error::Config(format!("unknown bucket {other:?} (expected none, overlap or views)"))),
        }
    }
}

/// Mean of `view_overlap` over ordered context pairs.
pub fn context_overlap<T: Real>(sample: &TrainSample<T>) -> f64 {
    let cams = &sample.input.cameras;
    let depth = overlap_probe_depth(sample.input.near, sample.input.far);
    let mut sum = 0.0;
    let mut n = 0;
    for (i, a) in cams.iter().enumerate() {
        for (j, b) in cams.iter().enumerate() {
            if i != j {
                sum += view_overlap(a, b, depth);
                n += 1;
            }
        }
    }
    sum / n.max(1) as f64
}

fn bucket_key<T: Real>(bucket: Bucket, sample: &TrainSample<T>) -> Option<String> {
    match bucket {
        Bucket::None => None,
        Bucket::Views => Some(format!("{} views", sample.input.cameras.len())),
        Bucket::Overlap => {
            let q = (context_overlap(sample) * 4.0).floor().min(3.0) as usize;
            Some(format!("overlap {:.2}-{:.2}", q as f64 / 4.0, (q + 1) as f64 / 4.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneScore {
    pub scene: String,
    pub bucket: Option<String>,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub scenes: Vec<SceneScore>,
}

impl EvalReport {
    /// Arithmetic means `(psnr, ssim)` over all scenes.
    pub fn mean(&self) -> (f64, f64) {
        mean_scores(self.scenes.iter())
    }

    /// Means per bucket key, in key order.
    pub fn by_bucket(&self) -> BTreeMap<String, (usize, f64, f64)> {
        let mut groups: BTreeMap<String, Vec<&SceneScore>> = BTreeMap::new();
        for s in &self.scenes {
            groups.entry(s.bucket.clone().unwrap_or_else(|| "all".into())).or_default().push(s);
        }
        groups
            .into_iter()
            .map(|(k, v)| {
                let (p, s) = mean_scores(v.iter().copied());
                (k, (v.len(), p, s))
            })
            .collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let err = |e: csv::Error| Error::Data(format!("report: {e}"));
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["scene", "bucket", "psnr", "ssim"]).map_err(err)?;
        for s in &self.scenes {
            out.write_record([
                s.scene.clone(),
                s.bucket.clone().unwrap_or_default(),
                format!("{:.6}", s.psnr),
                format!("{:.6}", s.ssim),
            ])
            .map_err(err)?;
        }
        for (k, (n, p, s)) in self.by_bucket() {
            out.write_record([format!("mean ({n})"), k, format!("{p:.6}"), format!("{s:.6}")]).map_err(err)?;
        }
        out.flush().map_err(|e| Error::Data(format!("report: {e}")))
    }
}

fn mean_scores<'a>(it: impl Iterator<Item = &'a SceneScore>) -> (f64, f64) {
    let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
    for x in it {
        p += x.psnr;
        s += x.ssim;
        n += 1;
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    (p / n as f64, s / n as f64)
}

/// Renders every target view of `sample` from the context views only.
pub fn render_targets<T: Real>(model: &H3rModel<T>, sample: &TrainSample<T>, background: [f64; 3]) -> Result<Vec<Tensor<f64>>> {
    let tape = Tape::new();
    let mut input = sample.input.clone();
    input.targets.clear();
    let out = model.forward(&tape, &input)?;
    let splats = out.gaussians.to_gaussians();
    Ok(sample.target_cameras.iter().map(|cam| render(&splats, cam, background).color).collect())
}

/// Mean PSNR and SSIM over the targets of one scene.
pub fn score_views(renders: &[Tensor<f64>], targets: &Tensor<f64>) -> Result<(f64, f64)> {
    let s = targets.shape();
    if s.len() != 4 || s[0] != renders.len() {
        return Err(Error::Data(format!("ground truth {s:?} does not cover {} rendered views", renders.len())));
    }
    let (h, w) = (s[1], s[2]);
    let per = h * w * 3;
    let (mut p, mut q) = (0.0, 0.0);
    for (i, r) in renders.iter().enumerate() {
        let gt = &targets.data()[i * per..(i + 1) * per];
        p += psnr(r.data(), gt, 1.0)?;
        q += ssim(r.data(), gt, h, w, 3)?;
    }
    Ok((p / renders.len() as f64, q / renders.len() as f64))
}

/// Scores `model` on named scenes.
pub fn evaluate<T: Real>(
    model: &H3rModel<T>,
    scenes: &[(String, TrainSample<T>)],
    bucket: Bucket,
    background: [f64; 3],
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for (name, sample) in scenes {
        if sample.target_cameras.is_empty() {
            return Err(Error::Data(format!("scene {name} has no ground-truth target views")));
        }
        let renders = render_targets(model, sample, background)?;
        let (psnr, ssim) = score_views(&renders, &sample.target_images.cast())?;
        report.scenes.push(SceneScore { scene: name.clone(), bucket: bucket_key(bucket, sample), psnr, ssim });
    }
    Ok(report)
}
