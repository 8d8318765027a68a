use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use mvhash::fusion::{FusionMethod, FusionVector};
use mvhash::hashcore::{TrainConfig, ViewSubset};
use mvhash::viewrel::Denominator;
use mvhash::{Error, RelationSource, Result};

/// Everything a training run depends on. Written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Directory holding CIFAR-10 binary batches.
    pub data: Option<PathBuf>,
    /// Generate this many procedural images instead of reading `data`.
    pub synthetic: Option<usize>,
    pub n_train: usize,
    pub n_query: usize,
    /// Gallery size; `None` puts every remaining image in the gallery.
    pub n_gallery: Option<usize>,
    pub relation: RelationSource,
    pub views: Vec<usize>,
    pub use_relation: bool,
    pub out: PathBuf,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 1;
        Self {
            data: None,
            synthetic: None,
            n_train: 5000,
            n_query: 1000,
            n_gallery: Some(10_000),
            relation: RelationSource::Exact,
            views: vec![0, 1, 2, 3],
            use_relation: true,
            out: PathBuf::from("run"),
            seed,
            train: TrainConfig::default().with_seed(seed),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn subset(&self) -> ViewSubset {
        ViewSubset {
            views: self.views.clone(),
            use_relation: self.use_relation && !self.views.is_empty(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::Io { path: path.into(), source: e })
    }
}

/// Flags shared by `train` and `ablate`; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CIFAR-10 binary directory (data_batch_*.bin, test_batch.bin).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use N procedurally generated images instead of --data.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_query: Option<usize>,
    /// Gallery size, or 0 for every remaining image.
    #[arg(long)]
    pub n_gallery: Option<usize>,
    /// Final code length in bits.
    #[arg(long)]
    pub bits: Option<usize>,
    #[arg(long)]
    pub q_basic: Option<usize>,
    #[arg(long)]
    pub q_view: Option<usize>,
    /// Fusion method: r (replication), c (view-code), p (pooling).
    #[arg(long)]
    pub fusion: Option<FusionMethod>,
    /// Replication vector, e.g. 1,4,8,16.
    #[arg(long, value_delimiter = ',')]
    pub fusion_vector: Option<Vec<usize>>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub pool_k: Option<usize>,
    #[arg(long)]
    pub pool_w: Option<usize>,
    /// Views to use, e.g. 0,2 (rgb=0 hsv=1 lbp=2 hog=3).
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<usize>>,
    /// Train without relation weighting.
    #[arg(long)]
    pub no_relation: bool,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub classifier_epochs: Option<usize>,
    #[arg(long)]
    pub batch_pairs: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Sum the stability statistic over views instead of taking each view's max.
    #[arg(long)]
    pub stability_sum: bool,
    /// Divide the stability mean by the class count instead of the image count.
    #[arg(long)]
    pub stability_per_class: bool,
    /// Relation source used when evaluating inside this command.
    #[arg(long)]
    pub relation: Option<RelationSource>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
            c.train = c.train.with_seed(seed);
        }
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        if self.data.is_some() {
            c.data = self.data.clone();
            c.synthetic = None;
        }
        if self.synthetic.is_some() {
            c.synthetic = self.synthetic;
        }
        set!(c.out, self.out);
        set!(c.n_train, self.n_train);
        set!(c.n_query, self.n_query);
        if let Some(g) = self.n_gallery {
            c.n_gallery = (g > 0).then_some(g);
        }
        set!(c.train.q, self.bits);
        set!(c.train.q_basic, self.q_basic);
        set!(c.train.q_view, self.q_view);
        set!(c.train.fusion.method, self.fusion);
        if let Some(v) = &self.fusion_vector {
            c.train.fusion.v = FusionVector::new(v.clone())?;
        }
        set!(c.train.fusion.budget, self.budget);
        set!(c.train.fusion.k, self.pool_k);
        set!(c.train.fusion.w, self.pool_w);
        set!(c.views, self.views);
        if self.no_relation {
            c.use_relation = false;
        }
        set!(c.train.loss.a, self.margin);
        set!(c.train.loss.alpha, self.alpha);
        set!(c.train.lr, self.lr);
        set!(c.train.momentum, self.momentum);
        set!(c.train.stage1_epochs, self.stage1_epochs);
        set!(c.train.stage2_epochs, self.stage2_epochs);
        set!(c.train.classifier.epochs, self.classifier_epochs);
        set!(c.train.batch_pairs, self.batch_pairs);
        set!(c.train.hidden_layers, self.hidden_layers);
        set!(c.train.noise_sigma, self.noise_sigma);
        if self.stability_sum {
            c.train.stability.per_view_max = false;
        }
        if self.stability_per_class {
            c.train.stability.denominator = Denominator::Classes;
        }
        set!(c.relation, self.relation);
        if c.views.iter().any(|&m| m >= mvhash::features::NUM_VIEWS) {
            return Err(Error::InvalidArgument("view indices are 0..=3".into()));
        }
        c.views.sort_unstable();
        c.views.dedup();
        c.train.validate()?;
        if c.data.is_none() && c.synthetic.is_none() {
            return Err(Error::InvalidArgument("no dataset: pass --data DIR or --synthetic N".into()));
        }
        Ok(c)
    }
}
