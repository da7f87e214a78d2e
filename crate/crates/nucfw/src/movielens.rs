//! MovieLens rating files: `user\titem\trating\ttimestamp` (100k `u.data`)
//! and `user::item::rating::timestamp` (1M `ratings.dat`).

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nucfw_core::{Entry, Observations};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Format {
    Ml100k,
    Ml1m,
}

impl Format {
    pub fn separator(self) -> &'static str {
        match self {
            Format::Ml100k => "\t",
            Format::Ml1m => "::",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Format::Ml100k => "ml100k",
            Format::Ml1m => "ml1m",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ml100k" => Ok(Format::Ml100k),
            "ml1m" => Ok(Format::Ml1m),
            _ => Err(format!("unknown MovieLens format `{s}` (expected ml100k or ml1m)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error(transparent)]
    Observations(#[from] nucfw_core::Error),
}

/// Parsed ratings plus bookkeeping about the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Ratings {
    pub observations: Observations,
    pub distinct_users: usize,
    pub distinct_items: usize,
    /// Lines that overwrote an earlier rating of the same (user, item).
    pub duplicates: usize,
}

/// Reads a rating file. User and item ids are 1-based; id `k` becomes row or
/// column `k - 1` and the matrix is `max user id x max item id`.
pub fn parse_movielens(path: &Path, format: Format) -> Result<Observations, ParseError> {
    Ok(read_ratings(path, format)?.observations)
}

pub fn read_ratings(path: &Path, format: Format) -> Result<Ratings, ParseError> {
    let io = |source| ParseError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    parse_reader(BufReader::new(file), format).map_err(|e| match e {
        ParseError::Io { source, .. } => io(source),
        other => other,
    })
}

pub fn parse_str(text: &str, format: Format) -> Result<Ratings, ParseError> {
    parse_reader(text.as_bytes(), format)
}

pub fn parse_reader(reader: impl BufRead, format: Format) -> Result<Ratings, ParseError> {
    let sep = format.separator();
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut entries: Vec<Entry> = Vec::new();
    let mut duplicates = 0;
    let (mut nrows, mut ncols) = (0, 0);
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|source| ParseError::Io {
            path: PathBuf::new(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() != 4 {
            return Err(ParseError::Malformed {
                line: line_no,
                reason: format!(
                    "expected 4 `{}`-separated fields, found {}",
                    sep.escape_default(),
                    fields.len()
                ),
            });
        }
        let id = |field: &str, what: &str| -> Result<usize, ParseError> {
            match field.trim().parse::<usize>() {
                Ok(0) | Err(_) => Err(ParseError::Malformed {
                    line: line_no,
                    reason: format!("{what} id `{field}` is not a positive integer"),
                }),
                Ok(v) => Ok(v),
            }
        };
        let user = id(fields[0], "user")?;
        let item = id(fields[1], "item")?;
        let rating: f64 = fields[2].trim().parse().map_err(|_| ParseError::Malformed {
            line: line_no,
            reason: format!("rating `{}` is not a number", fields[2]),
        })?;
        if !rating.is_finite() {
            return Err(ParseError::Malformed {
                line: line_no,
                reason: format!("rating `{}` is not finite", fields[2]),
            });
        }
        nrows = nrows.max(user);
        ncols = ncols.max(item);
        let entry = Entry::new(user - 1, item - 1, rating);
        match index.get(&(user, item)) {
            Some(&at) => {
                log::warn!("line {line_no}: duplicate rating for user {user}, item {item}; keeping the later one");
                entries[at] = entry;
                duplicates += 1;
            }
            None => {
                index.insert((user, item), entries.len());
                entries.push(entry);
            }
        }
    }
    let distinct_users = count_distinct(entries.iter().map(|e| e.row));
    let distinct_items = count_distinct(entries.iter().map(|e| e.col));
    Ok(Ratings {
        observations: Observations::new(nrows, ncols, entries)?,
        distinct_users,
        distinct_items,
        duplicates,
    })
}

fn count_distinct(ids: impl Iterator<Item = usize>) -> usize {
    let mut v: Vec<usize> = ids.collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}
