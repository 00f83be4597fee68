//! Reading and writing tab-separated dependency corpora (CoNLL-U layout).
//!
//! Only the columns this toolkit consumes are interpreted: surface form
//! (column 2), POS tag (column 5 by default, column 4 on request), head
//! (column 7) and relation (column 8). `_` marks an absent value. Multiword
//! range lines (`1-2`) and empty-node lines (`1.1`) are skipped with a
//! warning; comment lines are skipped, except `# sent_id = …` which names
//! the sentence. Blank lines separate sentences.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::{Sentence, Token};
use crate::{Error, Result};

/// Which column carries the POS tag used for candidate pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum TagColumn {
    /// Column 5, the language-specific tag (Penn-Treebank style). Default.
    #[default]
    Xpos,
    /// Column 4, the coarse universal tag.
    Upos,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConlluConfig {
    pub tag_column: TagColumn,
}

/// Reads a corpus. An empty input yields an empty corpus. Malformed lines
/// raise [`Error::Parse`] with the 1-based line number; sentences whose head
/// columns do not form a tree raise [`Error::Structure`] with the sentence id.
pub fn read_conllu<R: Read>(reader: R, config: &ConlluConfig) -> Result<Vec<Sentence>> {
    let tag_idx = match config.tag_column {
        TagColumn::Xpos => 4,
        TagColumn::Upos => 3,
    };
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut sent_id: Option<String> = None;

    let mut flush = |tokens: &mut Vec<Token>, sent_id: &mut Option<String>| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let id = sent_id.take().unwrap_or_else(|| format!("{}", sentences.len() + 1));
        let sentence = Sentence::new(id, std::mem::take(tokens));
        sentence.validate()?;
        sentences.push(sentence);
        Ok(())
    };

    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            flush(&mut tokens, &mut sent_id)?;
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        // Strict files are tab-separated; accept runs of whitespace as a
        // fallback so hand-written fixtures read the same way.
        let cols: Vec<&str> = if trimmed.contains('\t') {
            trimmed.split('\t').collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 10 columns, found {}", cols.len()),
            });
        }
        let id_col = cols[0];
        if id_col.contains('-') {
            log::warn!("line {lineno}: skipping multiword range line {id_col}");
            continue;
        }
        if id_col.contains('.') {
            log::warn!("line {lineno}: skipping empty-node line {id_col}");
            continue;
        }
        let id: usize = id_col.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("token id {id_col:?} is not an integer"),
        })?;
        if id != tokens.len() + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("token id {id} out of sequence, expected {}", tokens.len() + 1),
            });
        }
        let form = cols[1];
        if form == "_" || form.is_empty() {
            return Err(Error::Parse { line: lineno, msg: "missing surface form".into() });
        }
        let tag = cols[tag_idx];
        if tag == "_" || tag.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("missing POS tag in column {}", tag_idx + 1),
            });
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("head {h:?} is not a non-negative integer"),
            })?),
        };
        let deprel = match cols[7] {
            "_" => None,
            d => Some(d.to_string()),
        };
        tokens.push(Token { form: form.to_string(), tag: tag.to_string(), head, deprel });
    }
    flush(&mut tokens, &mut sent_id)?;
    Ok(sentences)
}

pub fn read_conllu_file(path: impl AsRef<Path>, config: &ConlluConfig) -> Result<Vec<Sentence>> {
    let file = File::open(path.as_ref())?;
    read_conllu(file, config)
}

/// Writes a corpus in the same layout `read_conllu` accepts: reading the
/// output back reproduces forms, tags, heads, relations and sentence ids
/// exactly. The tag is emitted in both tag columns so either [`TagColumn`]
/// choice round-trips.
pub fn write_conllu<W: Write>(writer: &mut W, corpus: &[Sentence]) -> Result<()> {
    for sentence in corpus {
        writeln!(writer, "# sent_id = {}", sentence.id)?;
        for (i, tok) in sentence.tokens.iter().enumerate() {
            let head = tok.head.map(|h| h.to_string()).unwrap_or_else(|| "_".to_string());
            let deprel = tok.deprel.as_deref().unwrap_or("_");
            writeln!(
                writer,
                "{}\t{}\t_\t{}\t{}\t_\t{}\t{}\t_\t_",
                i + 1,
                tok.form,
                tok.tag,
                tok.tag,
                head,
                deprel
            )?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

pub fn write_conllu_file(path: impl AsRef<Path>, corpus: &[Sentence]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write_conllu(&mut out, corpus)?;
    out.flush()?;
    Ok(())
}
