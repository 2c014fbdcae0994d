use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::{DatasetSplit, InteractionSet, RawInteractions, RawRecord, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Csv,
}

impl Format {
    pub fn delimiter(self) -> u8 {
        match self {
            Format::Tsv => b'\t',
            Format::Csv => b',',
        }
    }

    /// `.csv` files are comma separated; everything else is treated as tab separated.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Tsv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" | "tab" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            other => Err(Error::invalid(format!("unknown format {other:?}"))),
        }
    }
}

/// Reads a delimited interaction log.
///
/// Fields are `user, item[, rating[, timestamp]]`; extra fields are ignored.
/// Blank lines and lines starting with `#` are skipped.
pub fn load_interactions(path: &Path, format: Format) -> Result<RawInteractions> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .delimiter(format.delimiter())
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    let mut raw = csv::ByteRecord::new();
    loop {
        let more = reader.read_byte_record(&mut raw).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = raw.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| -> Result<Option<&str>> {
            match raw.get(idx) {
                None => Ok(None),
                Some(bytes) => std::str::from_utf8(bytes)
                    .map(Some)
                    .map_err(|_| parse_err(line, format!("field {} is not valid UTF-8", idx + 1))),
            }
        };
        if raw.len() < 2 {
            return Err(parse_err(
                line,
                format!("expected at least 2 fields, found {}", raw.len()),
            ));
        }
        let user_key = field(0)?.unwrap_or_default();
        let item_key = field(1)?.unwrap_or_default();
        if user_key.is_empty() || item_key.is_empty() {
            return Err(parse_err(line, "empty user or item key".into()));
        }
        let rating = match field(2)? {
            None | Some("") => None,
            Some(text) => {
                let value: f64 = text
                    .parse()
                    .map_err(|_| parse_err(line, format!("rating {text:?} is not a number")))?;
                if !value.is_finite() {
                    return Err(parse_err(line, format!("rating {text:?} is not finite")));
                }
                Some(value)
            }
        };
        let timestamp = match field(3)? {
            None | Some("") => None,
            Some(text) => Some(
                text.parse::<i64>()
                    .map_err(|_| parse_err(line, format!("timestamp {text:?} is not an integer")))?,
            ),
        };
        records.push(RawRecord {
            user_key: user_key.to_owned(),
            item_key: item_key.to_owned(),
            rating,
            timestamp,
        });
    }
    Ok(RawInteractions { records })
}

/// Writes one `user_key<TAB>item_key` line per interaction.
pub fn write_interactions(
    path: &Path,
    set: &InteractionSet,
    users: &Vocab,
    items: &Vocab,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (u, i) in set.pairs() {
        writeln!(out, "{}\t{}", users.key(u), items.key(i)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (id, key) in vocab.keys().iter().enumerate() {
        writeln!(out, "{key}\t{id}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vocab = Vocab::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            message,
        };
        let (key, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| bad("expected key<TAB>id".into()))?;
        let id: u32 = id.parse().map_err(|_| bad(format!("bad id {id:?}")))?;
        if id as usize != vocab.len() || vocab.get(key).is_some() {
            return Err(bad(format!("ids must be contiguous and keys unique (got {id})")));
        }
        vocab.intern(key);
    }
    Ok(vocab)
}

fn read_split_file(path: &Path, users: &Vocab, items: &Vocab) -> Result<InteractionSet> {
    let raw = load_interactions(path, Format::Tsv)?;
    let mut pairs = Vec::with_capacity(raw.len());
    for (n, rec) in raw.records.iter().enumerate() {
        let lookup = |vocab: &Vocab, key: &str, what: &str| {
            vocab.get(key).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: n as u64 + 1,
                message: format!("unknown {what} key {key:?}"),
            })
        };
        pairs.push((
            lookup(users, &rec.user_key, "user")?,
            lookup(items, &rec.item_key, "item")?,
        ));
    }
    InteractionSet::from_pairs(users.len(), items.len(), pairs)
}

pub const TRAIN_FILE: &str = "train.tsv";
pub const VALIDATION_FILE: &str = "validation.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const USER_VOCAB_FILE: &str = "users.vocab";
pub const ITEM_VOCAB_FILE: &str = "items.vocab";

/// Writes the three split files and both vocabularies into an existing directory.
pub fn save_split(dir: &Path, split: &DatasetSplit) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_vocab(&dir.join(USER_VOCAB_FILE), &split.users)?;
    write_vocab(&dir.join(ITEM_VOCAB_FILE), &split.items)?;
    write_interactions(&dir.join(TRAIN_FILE), &split.train, &split.users, &split.items)?;
    write_interactions(
        &dir.join(VALIDATION_FILE),
        &split.validation,
        &split.users,
        &split.items,
    )?;
    write_interactions(&dir.join(TEST_FILE), &split.test, &split.users, &split.items)
}

pub fn load_split(dir: &Path) -> Result<DatasetSplit> {
    let users = read_vocab(&dir.join(USER_VOCAB_FILE))?;
    let items = read_vocab(&dir.join(ITEM_VOCAB_FILE))?;
    let train = read_split_file(&dir.join(TRAIN_FILE), &users, &items)?;
    let validation = read_split_file(&dir.join(VALIDATION_FILE), &users, &items)?;
    let test = read_split_file(&dir.join(TEST_FILE), &users, &items)?;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        users,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents).unwrap();
        f
    }

    #[test]
    fn parses_ratings_and_timestamps() {
        let f = write_tmp(b"u1\ti1\t5\t100\nu2\ti1\t2\t101\n");
        let raw = load_interactions(f.path(), Format::Tsv).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.records[0].rating, Some(5.0));
        assert_eq!(raw.records[1].rating, Some(2.0));
        assert_eq!(raw.records[1].timestamp, Some(101));
    }

    #[test]
    fn empty_file_is_empty() {
        let f = write_tmp(b"");
        assert!(load_interactions(f.path(), Format::Tsv).unwrap().is_empty());
    }

    #[test]
    fn single_field_line_names_line_one() {
        let f = write_tmp(b"u1\n");
        match load_interactions(f.path(), Format::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn skips_comments_and_blank_lines() {
        let f = write_tmp(b"# header\nu1,i1\n\nu2,i2,4.5\n");
        let raw = load_interactions(f.path(), Format::Csv).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.records[0].rating, None);
        assert_eq!(raw.records[1].rating, Some(4.5));
    }

    #[test]
    fn bad_line_reports_its_number() {
        let f = write_tmp(b"u1\ti1\nu2\ti2\nu3\n");
        match load_interactions(f.path(), Format::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_rating_and_bad_utf8() {
        let f = write_tmp(b"u1\ti1\tNaN\n");
        assert!(matches!(
            load_interactions(f.path(), Format::Tsv),
            Err(Error::Parse { line: 1, .. })
        ));
        let f = write_tmp(b"u1\t\xff\xfe\n");
        assert!(matches!(
            load_interactions(f.path(), Format::Tsv),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_interactions(Path::new("/nonexistent/x.tsv"), Format::Tsv).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
