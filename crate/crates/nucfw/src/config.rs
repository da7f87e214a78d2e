//! Flat `key = value` config files and the resolved experiment spec.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use nucfw_core::dataset::SyntheticSpec;
use nucfw_core::Variant;

use crate::movielens::Format;

pub const KEYS: &[&str] = &[
    "dataset",
    "format",
    "variant",
    "delta",
    "mu_index",
    "mu",
    "max_iters",
    "rel_gap",
    "rank_threshold",
    "seeds",
    "jobs",
    "out",
    "raw_rmse",
];

/// `key = value` lines; `#` starts a comment, dashes in keys read as
/// underscores, values may be quoted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", k + 1))?;
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key `{key}`", k + 1);
            }
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            if values.insert(key.clone(), value.to_string()).is_some() {
                bail!("line {}: `{key}` set twice", k + 1);
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config `{key}`: {e}")))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    MovieLens {
        path: PathBuf,
        format: Format,
    },
    /// `seed: None` draws the problem with each run's seed.
    Synthetic {
        spec: SyntheticSpec,
        seed: Option<u64>,
    },
}

impl DataSource {
    /// A file path, or `synthetic:m=..,n=..,rank=..,obs=..,noise=..[,seed=..]`.
    pub fn parse(text: &str, format: Format) -> Result<Self> {
        let Some(params) = text
            .strip_prefix("synthetic:")
            .or_else(|| (text == "synthetic").then_some(""))
        else {
            return Ok(DataSource::MovieLens {
                path: PathBuf::from(text),
                format,
            });
        };
        let mut spec = SyntheticSpec {
            nrows: 50,
            ncols: 40,
            rank: 5,
            obs_fraction: 0.5,
            noise_std: 0.0,
            seed: 0,
        };
        let mut seed = None;
        for pair in params.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("synthetic parameter `{pair}` is not `key=value`"))?;
            let v = v.trim();
            let bad = |e: &dyn std::fmt::Display| anyhow!("synthetic parameter `{pair}`: {e}");
            match k.trim() {
                "m" => spec.nrows = v.parse().map_err(|e| bad(&e))?,
                "n" => spec.ncols = v.parse().map_err(|e| bad(&e))?,
                "rank" => spec.rank = v.parse().map_err(|e| bad(&e))?,
                "obs" => spec.obs_fraction = v.parse().map_err(|e| bad(&e))?,
                "noise" => spec.noise_std = v.parse().map_err(|e| bad(&e))?,
                "seed" => seed = Some(v.parse().map_err(|e| bad(&e))?),
                other => bail!("unknown synthetic parameter `{other}` (m, n, rank, obs, noise, seed)"),
            }
        }
        Ok(DataSource::Synthetic { spec, seed })
    }
}

/// How the nuclear-ball radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Delta(f64),
    /// Grid point `j`: `δ = (2 + 0.2 j) ||Y||_F`.
    MuIndex(usize),
    /// `δ = μ ||Y||_F` for an arbitrary `μ`.
    Mu(f64),
}

/// Comma-separated seeds, each either `k` or an inclusive range `a..=b` /
/// half-open `a..b`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..=") {
            out.extend(a.trim().parse::<u64>()?..=b.trim().parse::<u64>()?);
        } else if let Some((a, b)) = part.split_once("..") {
            out.extend(a.trim().parse::<u64>()?..b.trim().parse::<u64>()?);
        } else {
            out.push(part.parse::<u64>().with_context(|| format!("bad seed `{part}`"))?);
        }
    }
    if out.is_empty() {
        bail!("no seeds given");
    }
    Ok(out)
}

/// Comma-separated variant names, or `all`.
pub fn parse_variants(text: &str) -> Result<Vec<Variant>> {
    if text.trim() == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let v = Variant::parse(name).ok_or_else(|| anyhow!("unknown variant `{name}` (fw, afw, inface, rdfw, all)"))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        bail!("no variant given");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub source: DataSource,
    pub variants: Vec<Variant>,
    pub radius: Radius,
    pub max_iters: usize,
    pub rel_gap: f64,
    pub rank_threshold: f64,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub out: PathBuf,
    pub raw_rmse: bool,
}

impl RunSpec {
    pub fn synthetic(spec: SyntheticSpec, radius: Radius) -> Self {
        Self {
            source: DataSource::Synthetic {
                seed: Some(spec.seed),
                spec,
            },
            variants: vec![Variant::Rdfw],
            radius,
            max_iters: 1000,
            rel_gap: 1e-2,
            rank_threshold: nucfw_core::DEFAULT_RANK_THRESHOLD,
            seeds: vec![0],
            jobs: 1,
            out: PathBuf::from("nucfw-out"),
            raw_rmse: false,
        }
    }

    pub fn trials(&self) -> usize {
        self.seeds.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let c =
            ConfigFile::parse("# run\ndataset = data/u.data\nmax-iters=50 # short\nvariant = \"fw,rdfw\"\n").unwrap();
        assert_eq!(c.get("dataset"), Some("data/u.data"));
        assert_eq!(c.parsed::<usize>("max_iters").unwrap(), Some(50));
        assert_eq!(c.get("variant"), Some("fw,rdfw"));
        assert_eq!(c.get("delta"), None);
        assert!(ConfigFile::parse("colour = red\n").is_err());
        assert!(ConfigFile::parse("delta\n").is_err());
        assert!(ConfigFile::parse("delta = 1\ndelta = 2\n").is_err());
        assert!(ConfigFile::parse("delta = x\n")
            .unwrap()
            .parsed::<f64>("delta")
            .is_err());
    }

    #[test]
    fn dataset_sources() {
        let s = DataSource::parse("synthetic:m=20,n=10,rank=2,obs=0.3,noise=0.1,seed=4", Format::Ml100k).unwrap();
        match s {
            DataSource::Synthetic { spec, seed } => {
                assert_eq!((spec.nrows, spec.ncols, spec.rank), (20, 10, 2));
                assert_eq!((spec.obs_fraction, spec.noise_std, seed), (0.3, 0.1, Some(4)));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            DataSource::parse("synthetic", Format::Ml100k).unwrap(),
            DataSource::Synthetic { seed: None, .. }
        ));
        assert!(DataSource::parse("synthetic:k=1", Format::Ml100k).is_err());
        assert!(DataSource::parse("synthetic:m=x", Format::Ml100k).is_err());
        assert_eq!(
            DataSource::parse("ratings.dat", Format::Ml1m).unwrap(),
            DataSource::MovieLens {
                path: PathBuf::from("ratings.dat"),
                format: Format::Ml1m
            }
        );
    }

    #[test]
    fn seeds_and_variants() {
        assert_eq!(parse_seeds("0..5").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("7, 1..=2").unwrap(), vec![7, 1, 2]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("a").is_err());
        assert_eq!(
            parse_variants("rdfw,fw,rdfw").unwrap(),
            vec![Variant::Rdfw, Variant::Fw]
        );
        assert_eq!(parse_variants("all").unwrap().len(), 4);
        assert!(parse_variants("pfw").is_err());
    }
}
