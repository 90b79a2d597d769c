//! Synthetic cohorts with planted structure.
//!
//! ROIs fall into equal contiguous blocks. Every gene loads one latent
//! factor per block, so ROIs of a block co-express and the transcriptomic
//! graph recovers the blocks. Each modality shifts a set of informative
//! ROIs with the class label and adds per-sample noise whose level varies
//! between samples and modalities.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Provenance};
use crate::autodiff::Array;
use crate::error::{Result, TmmError};
use crate::rri::{ExpressionMatrix, FeatureMatrix};

/// Idiosyncratic expression noise relative to the unit block factor.
const EXPRESSION_NOISE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub n_genes: usize,
    pub modalities: usize,
    pub classes: usize,
    pub n_blocks: usize,
    /// Informative ROIs per modality.
    pub informative_rois: usize,
    pub class_effect: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub class_sizes: Option<Vec<usize>>,
    /// Multiplier of the class effect per modality; missing entries are 1.
    pub modality_scale: Vec<f64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 400,
            d: 32,
            n_genes: 200,
            modalities: 3,
            classes: 2,
            n_blocks: 4,
            informative_rois: 8,
            class_effect: 2.0,
            sigma_lo: 0.5,
            sigma_hi: 2.0,
            class_sizes: None,
            modality_scale: vec![1.0, 0.85, 0.7],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TmmError::Config(m));
        if self.d < 2 || self.n_genes < 2 || self.modalities == 0 || self.classes < 2 {
            return fail(format!(
                "need d ≥ 2, n_genes ≥ 2, at least one modality and two classes (d={}, n_genes={}, M={}, C={})",
                self.d, self.n_genes, self.modalities, self.classes
            ));
        }
        if self.informative_rois > self.d {
            return fail(format!("{} informative ROIs exceed d = {}", self.informative_rois, self.d));
        }
        if self.n_blocks == 0 || self.d % self.n_blocks != 0 {
            return fail(format!("{} blocks do not divide d = {}", self.n_blocks, self.d));
        }
        if !(0.0 <= self.sigma_lo && self.sigma_lo <= self.sigma_hi) || !self.sigma_hi.is_finite() {
            return fail(format!("noise range [{}, {}] is invalid", self.sigma_lo, self.sigma_hi));
        }
        if !self.class_effect.is_finite() || self.modality_scale.iter().any(|s| !s.is_finite()) {
            return fail("class effect and modality scales must be finite".into());
        }
        match &self.class_sizes {
            Some(sizes) if sizes.len() != self.classes || sizes.iter().sum::<usize>() != self.n => {
                fail(format!("class sizes {sizes:?} do not split {} samples into {} classes", self.n, self.classes))
            }
            None if self.n < self.classes => fail(format!("{} samples for {} classes", self.n, self.classes)),
            _ => Ok(()),
        }
    }

    pub fn modality_names(&self) -> Vec<String> {
        const NAMES: [&str; 3] = ["av45", "fdg", "vbm"];
        if self.modalities <= NAMES.len() {
            NAMES[..self.modalities].iter().map(|s| s.to_string()).collect()
        } else {
            (1..=self.modalities).map(|m| format!("m{m:02}")).collect()
        }
    }

    pub fn roi_ids(&self) -> Vec<String> {
        (1..=self.d).map(|r| format!("roi{r:02}")).collect()
    }

    fn scale(&self, m: usize) -> f64 {
        self.modality_scale.get(m).copied().unwrap_or(1.0)
    }

    /// Modality `m`'s informative ROIs start at block `m` (mod blocks) and
    /// run over consecutive indices.
    fn informative(&self, m: usize) -> Vec<usize> {
        let block = self.d / self.n_blocks;
        let start = (m % self.n_blocks) * block;
        (0..self.informative_rois).map(|k| (start + k) % self.d).collect()
    }
}

/// What the generator planted.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Informative ROI indices per modality.
    pub informative: Vec<Vec<usize>>,
    /// Block index of every ROI.
    pub blocks: Vec<usize>,
    /// Per-modality, per-sample noise level.
    pub sigma: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn to_text(&self, roi_ids: &[String], modalities: &[String]) -> String {
        let mut s = String::from("# planted structure of a synthetic dataset\n");
        let _ = writeln!(s, "n_blocks = {}", self.blocks.iter().max().map_or(0, |b| b + 1));
        for (r, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(s, "block.{} = {b}", roi_ids[r]);
        }
        for (m, name) in modalities.iter().enumerate() {
            let rois: Vec<&str> = self.informative[m].iter().map(|&r| roi_ids[r].as_str()).collect();
            let _ = writeln!(s, "informative.{name} = {}", rois.join(","));
        }
        for (m, name) in modalities.iter().enumerate() {
            let sig: Vec<String> = self.sigma[m].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "sigma.{name} = {}", sig.join(","));
        }
        s
    }

    pub fn save(&self, path: &Path, roi_ids: &[String], modalities: &[String]) -> Result<()> {
        std::fs::write(path, self.to_text(roi_ids, modalities)).map_err(|e| TmmError::io(path, e))
    }

    pub fn load(path: &Path, roi_ids: &[String], modalities: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TmmError::io(path, e))?;
        let err = |line: usize, message: String| TmmError::Parse {
            path: path.display().to_string(),
            line: line as u64,
            message,
        };
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(i + 1, "expected key = value".into()))?;
            kv.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let roi_index = |line: usize, id: &str| {
            roi_ids
                .iter()
                .position(|r| r == id)
                .ok_or_else(|| err(line, format!("unknown ROI {id:?}")))
        };
        let get = |key: String| kv.get(&key).cloned().ok_or_else(|| err(0, format!("missing key {key}")));
        let mut blocks = Vec::with_capacity(roi_ids.len());
        for r in roi_ids {
            let (line, v) = get(format!("block.{r}"))?;
            blocks.push(v.parse().map_err(|_| err(line, format!("bad block index {v:?}")))?);
        }
        let mut informative = Vec::new();
        let mut sigma = Vec::new();
        for m in modalities {
            let (line, v) = get(format!("informative.{m}"))?;
            informative.push(v.split(',').filter(|s| !s.is_empty()).map(|id| roi_index(line, id.trim())).collect::<Result<Vec<_>>>()?);
            let (line, v) = get(format!("sigma.{m}"))?;
            sigma.push(
                v.split(',')
                    .map(|x| x.trim().parse().map_err(|_| err(line, format!("bad sigma {x:?}"))))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        Ok(Self {
            informative,
            blocks,
            sigma,
        })
    }
}

/// Draws a dataset and the structure it was planted with. Identical
/// `(spec, seed)` pairs give identical output.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (spec.n, spec.d);
    let block_len = d / spec.n_blocks;
    let blocks: Vec<usize> = (0..d).map(|r| r / block_len).collect();

    let mut labels: Vec<usize> = match &spec.class_sizes {
        Some(sizes) => sizes.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect(),
        None => (0..n).map(|i| i * spec.classes / n).collect(),
    };
    labels.shuffle(&mut rng);

    let mut expr = Vec::with_capacity(spec.n_genes * d);
    for _ in 0..spec.n_genes {
        let factors: Vec<f64> = (0..spec.n_blocks).map(|_| rng.sample(StandardNormal)).collect();
        for &b in &blocks {
            let noise: f64 = rng.sample(StandardNormal);
            expr.push(factors[b] + EXPRESSION_NOISE * noise);
        }
    }
    let roi_ids = spec.roi_ids();
    let expression = ExpressionMatrix::new(
        Array::new(&[spec.n_genes, d], expr)?,
        (1..=spec.n_genes).map(|g| format!("g{g:04}")).collect(),
        roi_ids.clone(),
    )?;

    let names = spec.modality_names();
    let mut modalities = Vec::with_capacity(spec.modalities);
    let mut informative = Vec::with_capacity(spec.modalities);
    let mut sigma = Vec::with_capacity(spec.modalities);
    for (m, name) in names.iter().enumerate() {
        let info = spec.informative(m);
        let mut is_info = vec![false; d];
        for &r in &info {
            is_info[r] = true;
        }
        let baseline: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let effect = spec.class_effect * spec.scale(m);
        let sig: Vec<f64> = (0..n)
            .map(|_| if spec.sigma_hi > spec.sigma_lo { rng.random_range(spec.sigma_lo..spec.sigma_hi) } else { spec.sigma_lo })
            .collect();
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            for r in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                let shift = if is_info[r] { effect * labels[i] as f64 } else { 0.0 };
                values.push(baseline[r] + shift + sig[i] * noise);
            }
        }
        modalities.push(FeatureMatrix::new(Array::new(&[n, d], values)?, roi_ids.clone(), name.clone())?);
        informative.push(info);
        sigma.push(sig);
    }
    let sample_ids = (1..=n).map(|i| format!("s{i:04}")).collect();
    let dataset = Dataset::new(expression, modalities, labels, sample_ids, Provenance::Synthetic { seed })?;
    Ok((
        dataset,
        GroundTruth {
            informative,
            blocks,
            sigma,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rri::{build_edge_matrix, EdgeSource};

    #[test]
    fn deterministic_for_seed() {
        let spec = SyntheticSpec { n: 30, ..SyntheticSpec::default() };
        let (a, ga) = generate_synthetic(&spec, 5).unwrap();
        let (b, gb) = generate_synthetic(&spec, 5).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.expression.values, b.expression.values);
        for (x, y) in a.modalities.iter().zip(&b.modalities) {
            assert_eq!(x.values, y.values);
        }
        assert_eq!(ga, gb);
        let (c, _) = generate_synthetic(&spec, 6).unwrap();
        assert_ne!(a.modalities[0].values, c.modalities[0].values);
    }

    #[test]
    fn infeasible_specs_rejected() {
        for spec in [
            SyntheticSpec { informative_rois: 40, ..SyntheticSpec::default() },
            SyntheticSpec { n_blocks: 5, ..SyntheticSpec::default() },
            SyntheticSpec { sigma_lo: 3.0, ..SyntheticSpec::default() },
            SyntheticSpec { class_sizes: Some(vec![10, 10]), ..SyntheticSpec::default() },
        ] {
            assert!(matches!(generate_synthetic(&spec, 0), Err(TmmError::Config(_))));
        }
    }

    #[test]
    fn class_sizes_respected() {
        let spec = SyntheticSpec { n: 50, class_sizes: Some(vec![20, 30]), ..SyntheticSpec::default() };
        let (ds, _) = generate_synthetic(&spec, 2).unwrap();
        assert_eq!(ds.labels.iter().filter(|&&y| y == 1).count(), 30);
    }

    #[test]
    fn transcriptomic_graph_recovers_blocks() {
        let spec = SyntheticSpec::default();
        let mut within = 0.0;
        let mut across = 0.0;
        for seed in 0..5 {
            let (ds, gt) = generate_synthetic(&spec, seed).unwrap();
            let e = build_edge_matrix(&ds.expression.values, 0.2, EdgeSource::Transcriptomic).unwrap();
            let (mut wi, mut wn, mut ai, mut an) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..spec.d {
                for j in 0..i {
                    let edge = f64::from(u8::from(e.has_edge(i, j)));
                    if gt.blocks[i] == gt.blocks[j] {
                        wi += edge;
                        wn += 1.0;
                    } else {
                        ai += edge;
                        an += 1.0;
                    }
                }
            }
            within += wi / wn / 5.0;
            across += ai / an / 5.0;
        }
        assert!(within >= 0.9, "within-block density {within}");
        assert!(across <= 0.1, "cross-block density {across}");
    }

    #[test]
    fn informative_sets_are_disjoint_blocks_by_default() {
        let (_, gt) = generate_synthetic(&SyntheticSpec { n: 10, ..SyntheticSpec::default() }, 0).unwrap();
        for (m, set) in gt.informative.iter().enumerate() {
            assert_eq!(set.len(), 8);
            assert!(set.iter().all(|&r| gt.blocks[r] == m));
        }
        assert_eq!(gt.sigma[0].len(), 10);
        assert!(gt.sigma.iter().flatten().all(|&s| (0.5..2.0).contains(&s)));
    }

    /// Least-squares probe on the informative ROIs of a noiseless draw.
    #[test]
    fn noiseless_signal_is_linearly_separable() {
        let spec = SyntheticSpec { n: 60, sigma_lo: 0.0, sigma_hi: 0.0, class_effect: 3.0, ..SyntheticSpec::default() };
        let (ds, gt) = generate_synthetic(&spec, 4).unwrap();
        let x = &ds.modalities[0].values;
        let info = &gt.informative[0];
        // with no noise every informative column takes two values; fit
        // y ≈ a + b·x on the first one in closed form
        let col: Vec<f64> = (0..spec.n).map(|i| x.get2(i, info[0])).collect();
        let y: Vec<f64> = ds.labels.iter().map(|&l| l as f64).collect();
        let (mx, my) = (col.iter().sum::<f64>() / 60.0, y.iter().sum::<f64>() / 60.0);
        let b = col.iter().zip(&y).map(|(a, c)| (a - mx) * (c - my)).sum::<f64>() / col.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
        let a = my - b * mx;
        let acc = col.iter().zip(&ds.labels).filter(|(v, &l)| usize::from(a + b * **v > 0.5) == l).count();
        assert_eq!(acc, 60);
    }

    #[test]
    fn no_effect_means_no_class_difference() {
        let spec = SyntheticSpec { n: 2000, class_effect: 0.0, ..SyntheticSpec::default() };
        let (ds, _) = generate_synthetic(&spec, 9).unwrap();
        // class-conditional means of every ROI agree within sampling error
        let x = &ds.modalities[0].values;
        for r in 0..spec.d {
            let (mut s, mut c) = ([0.0; 2], [0.0; 2]);
            for i in 0..spec.n {
                s[ds.labels[i]] += x.get2(i, r);
                c[ds.labels[i]] += 1.0;
            }
            assert!((s[0] / c[0] - s[1] / c[1]).abs() < 0.25);
        }
    }

    #[test]
    fn ground_truth_round_trip() {
        let spec = SyntheticSpec { n: 12, ..SyntheticSpec::default() };
        let (ds, gt) = generate_synthetic(&spec, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.txt");
        gt.save(&p, ds.roi_ids(), &ds.modality_names()).unwrap();
        assert_eq!(GroundTruth::load(&p, ds.roi_ids(), &ds.modality_names()).unwrap(), gt);
    }
}
