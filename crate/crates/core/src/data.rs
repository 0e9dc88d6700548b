//! Dataset ingestion, prompt templating and the canonical sample formats.
//!
//! Two input formats are accepted: Alpaca-style JSON (a single array of
//! `{instruction, input, output}` objects) and JSONL (one object per line).
//! Either may carry an explicit `id`; absent ids are assigned from the
//! zero-padded position of the record in the file. `output` and `response`
//! are both accepted as the response field.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Width of positional ids assigned at ingest ("000000", "000001", ...).
pub const ID_WIDTH: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub id: String,
    pub instruction: String,
    pub input: Option<String>,
    pub response: String,
}

impl InstructionSample {
    pub fn new(
        id: impl Into<String>,
        instruction: impl Into<String>,
        input: Option<String>,
        response: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            instruction: instruction.into(),
            input: input.filter(|s| !s.is_empty()),
            response: response.into(),
        }
    }

    /// Input text, treating an empty string as absent.
    pub fn input(&self) -> Option<&str> {
        self.input.as_deref().filter(|s| !s.is_empty())
    }
}

pub fn positional_id(index: usize) -> String {
    format!("{index:0width$}", width = ID_WIDTH)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    AlpacaJson,
    Jsonl,
}

impl DatasetFormat {
    /// `.jsonl` files are line-delimited, anything else is treated as an Alpaca array.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") => DatasetFormat::Jsonl,
            _ => DatasetFormat::AlpacaJson,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpaca-json" | "alpaca" | "json" => Ok(DatasetFormat::AlpacaJson),
            "jsonl" => Ok(DatasetFormat::Jsonl),
            other => Err(Error::Config(format!(
                "unknown dataset format {other:?} (expected alpaca-json or jsonl)"
            ))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::AlpacaJson => "alpaca-json",
            DatasetFormat::Jsonl => "jsonl",
        })
    }
}

/// An ordered collection of samples. Position in `samples` is the
/// tie-break key for every downstream ranking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub samples: Vec<InstructionSample>,
    pub source_path: String,
}

impl Dataset {
    /// Builds a dataset, enforcing non-empty responses and unique ids.
    pub fn new(samples: Vec<InstructionSample>, source_path: impl Into<String>) -> Result<Self> {
        validate_samples(&samples)?;
        Ok(Self {
            samples,
            source_path: source_path.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&InstructionSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Writes the canonical JSONL form: `{id, instruction, input, response}` per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for sample in &self.samples {
            let line = serde_json::to_string(&CanonicalRecord::from(sample))
                .expect("sample serialization cannot fail");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes an Alpaca-format JSON array (`instruction`, `input`, `output`, plus `id`).
    pub fn write_alpaca_json(&self, path: &Path) -> Result<()> {
        let records: Vec<AlpacaRecord<'_>> = self.samples.iter().map(AlpacaRecord::from).collect();
        let mut text =
            serde_json::to_string_pretty(&records).expect("sample serialization cannot fail");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write(&self, path: &Path, format: DatasetFormat) -> Result<()> {
        match format {
            DatasetFormat::AlpacaJson => self.write_alpaca_json(path),
            DatasetFormat::Jsonl => self.write_jsonl(path),
        }
    }
}

#[derive(Serialize)]
struct CanonicalRecord<'a> {
    id: &'a str,
    instruction: &'a str,
    input: &'a str,
    response: &'a str,
}

impl<'a> From<&'a InstructionSample> for CanonicalRecord<'a> {
    fn from(s: &'a InstructionSample) -> Self {
        Self {
            id: &s.id,
            instruction: &s.instruction,
            input: s.input().unwrap_or(""),
            response: &s.response,
        }
    }
}

#[derive(Serialize)]
struct AlpacaRecord<'a> {
    id: &'a str,
    instruction: &'a str,
    input: &'a str,
    output: &'a str,
}

impl<'a> From<&'a InstructionSample> for AlpacaRecord<'a> {
    fn from(s: &'a InstructionSample) -> Self {
        Self {
            id: &s.id,
            instruction: &s.instruction,
            input: s.input().unwrap_or(""),
            output: &s.response,
        }
    }
}

fn validate_samples(samples: &[InstructionSample]) -> Result<()> {
    let empty: Vec<&str> = samples
        .iter()
        .filter(|s| s.response.trim().is_empty())
        .map(|s| s.id.as_str())
        .collect();
    if !empty.is_empty() {
        return Err(Error::Validation(format!(
            "empty response in sample(s): {}",
            empty.join(", ")
        )));
    }

    let mut seen = HashSet::with_capacity(samples.len());
    let duplicates: Vec<&str> = samples
        .iter()
        .filter(|s| !seen.insert(s.id.as_str()))
        .map(|s| s.id.as_str())
        .collect();
    if !duplicates.is_empty() {
        return Err(Error::Validation(format!(
            "duplicate sample id(s): {}",
            duplicates.join(", ")
        )));
    }
    Ok(())
}

/// Loads a dataset, preserving file order.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let samples = match format {
        DatasetFormat::AlpacaJson => parse_alpaca(path, &text)?,
        DatasetFormat::Jsonl => parse_jsonl(path, &text)?,
    };
    Dataset::new(samples, path.display().to_string())
}

fn parse_alpaca(path: &Path, text: &str) -> Result<Vec<InstructionSample>> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Format {
        path: path.to_owned(),
        index: 0,
        message: format!("not valid JSON: {e}"),
    })?;
    let Value::Array(records) = value else {
        return Err(Error::Format {
            path: path.to_owned(),
            index: 0,
            message: "expected a top-level JSON array of records".into(),
        });
    };
    records
        .into_iter()
        .enumerate()
        .map(|(index, record)| parse_record(path, index, record))
        .collect()
}

fn parse_jsonl(path: &Path, text: &str) -> Result<Vec<InstructionSample>> {
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .enumerate()
        .map(|(index, line)| {
            let record = serde_json::from_str(line).map_err(|e| Error::Format {
                path: path.to_owned(),
                index,
                message: format!("not valid JSON: {e}"),
            })?;
            parse_record(path, index, record)
        })
        .collect()
}

fn parse_record(path: &Path, index: usize, record: Value) -> Result<InstructionSample> {
    let format_err = |message: String| Error::Format {
        path: path.to_owned(),
        index,
        message,
    };
    let Value::Object(map) = record else {
        return Err(format_err("record is not a JSON object".into()));
    };
    let text_field = |name: &str| -> Result<Option<String>> {
        match map.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(format_err(format!(
                "field {name:?} must be a string, found {other}"
            ))),
        }
    };

    let instruction =
        text_field("instruction")?.ok_or_else(|| format_err("missing field \"instruction\"".into()))?;
    let response = match text_field("output")? {
        Some(r) => r,
        None => text_field("response")?
            .ok_or_else(|| format_err("missing field \"output\" (or \"response\")".into()))?,
    };
    let input = text_field("input")?;
    let id = match map.get("id") {
        None | Some(Value::Null) => positional_id(index),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(other) => return Err(format_err(format!("field \"id\" has unsupported type: {other}"))),
    };
    Ok(InstructionSample::new(id, instruction, input, response))
}

const INSTRUCTION_SLOT: &str = "{instruction}";
const INPUT_SLOT: &str = "{input}";

/// Maps (instruction, optional input) onto the prompt text a scorer sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub with_input_pattern: String,
    pub without_input_pattern: String,
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        with_input_pattern: impl Into<String>,
        without_input_pattern: impl Into<String>,
    ) -> Result<Self> {
        let template = Self {
            name: name.into(),
            with_input_pattern: with_input_pattern.into(),
            without_input_pattern: without_input_pattern.into(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<()> {
        let count = |pattern: &str, slot: &str| pattern.matches(slot).count();
        if count(&self.with_input_pattern, INSTRUCTION_SLOT) != 1
            || count(&self.with_input_pattern, INPUT_SLOT) != 1
        {
            return Err(Error::Config(format!(
                "template {:?}: with-input pattern must contain {INSTRUCTION_SLOT} and {INPUT_SLOT} exactly once each",
                self.name
            )));
        }
        if count(&self.without_input_pattern, INSTRUCTION_SLOT) != 1 {
            return Err(Error::Config(format!(
                "template {:?}: without-input pattern must contain {INSTRUCTION_SLOT} exactly once",
                self.name
            )));
        }
        if count(&self.without_input_pattern, INPUT_SLOT) != 0 {
            return Err(Error::Config(format!(
                "template {:?}: without-input pattern must not contain {INPUT_SLOT}",
                self.name
            )));
        }
        Ok(())
    }

    /// Vicuna v1.1 conversational format.
    pub fn vicuna_v1() -> Self {
        const SYSTEM: &str = "A chat between a curious user and an artificial intelligence assistant. \
The assistant gives helpful, detailed, and polite answers to the user's questions.";
        Self {
            name: "vicuna-v1".into(),
            with_input_pattern: format!("{SYSTEM} USER: {{instruction}}\n{{input}} ASSISTANT:"),
            without_input_pattern: format!("{SYSTEM} USER: {{instruction}} ASSISTANT:"),
        }
    }

    /// Stanford Alpaca format.
    pub fn alpaca() -> Self {
        Self {
            name: "alpaca".into(),
            with_input_pattern: "Below is an instruction that describes a task, paired with an input that provides further context. \
Write a response that appropriately completes the request.\n\n\
### Instruction:\n{instruction}\n\n### Input:\n{input}\n\n### Response:"
                .into(),
            without_input_pattern: "Below is an instruction that describes a task. \
Write a response that appropriately completes the request.\n\n\
### Instruction:\n{instruction}\n\n### Response:"
                .into(),
        }
    }

    /// Instruction and input joined by a newline, no control text.
    pub fn plain() -> Self {
        Self {
            name: "plain".into(),
            with_input_pattern: "{instruction}\n{input}".into(),
            without_input_pattern: "{instruction}".into(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "vicuna-v1" | "vicuna" => Some(Self::vicuna_v1()),
            "alpaca" => Some(Self::alpaca()),
            "plain" => Some(Self::plain()),
            _ => None,
        }
    }

    pub const BUILTIN_NAMES: [&'static str; 3] = ["vicuna-v1", "alpaca", "plain"];

    /// Reads a template from a JSON file with `name`, `with_input_pattern`
    /// and `without_input_pattern` keys.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let template: PromptTemplate = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: invalid template: {e}", path.display())))?;
        template.validate()?;
        Ok(template)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::vicuna_v1()
    }
}

/// Substitutes slots in one left-to-right pass, so slot markers that occur
/// inside sample text are never expanded a second time.
fn substitute(pattern: &str, instruction: &str, input: &str) -> String {
    let mut out = String::with_capacity(pattern.len() + instruction.len() + input.len());
    let mut rest = pattern;
    loop {
        let next_instr = rest.find(INSTRUCTION_SLOT);
        let next_input = rest.find(INPUT_SLOT);
        let (pos, slot, value) = match (next_instr, next_input) {
            (Some(a), Some(b)) if b < a => (b, INPUT_SLOT, input),
            (Some(a), _) => (a, INSTRUCTION_SLOT, instruction),
            (None, Some(b)) => (b, INPUT_SLOT, input),
            (None, None) => break,
        };
        out.push_str(&rest[..pos]);
        out.push_str(value);
        rest = &rest[pos + slot.len()..];
    }
    out.push_str(rest);
    out
}

pub fn render_prompt(sample: &InstructionSample, template: &PromptTemplate) -> String {
    match sample.input() {
        Some(input) => substitute(&template.with_input_pattern, &sample.instruction, input),
        None => substitute(&template.without_input_pattern, &sample.instruction, ""),
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}
