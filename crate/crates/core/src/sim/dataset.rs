//! Buffer initializers: repeated sections of a `name kind extent` header
//! followed by `extent` whitespace-separated values. `//` starts a comment.

use std::fmt::Write;

use super::memory::Data;
use super::SimError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub buffers: Vec<(String, Data)>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_i32(mut self, name: &str, values: Vec<i32>) -> Self {
        self.set(name, Data::I32(values));
        self
    }

    pub fn set(&mut self, name: &str, data: Data) {
        match self.buffers.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = data,
            None => self.buffers.push((name.to_string(), data)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Data> {
        self.buffers.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn parse(text: &str) -> Result<Dataset, SimError> {
        let stripped: String = text
            .lines()
            .map(|l| l.split("//").next().unwrap_or(""))
            .collect::<Vec<_>>()
            .join("\n");
        let mut toks = stripped.split_whitespace();
        let mut ds = Dataset::new();
        let err = |m: String| SimError::Dataset(m);
        while let Some(name) = toks.next() {
            let kind = toks.next().ok_or_else(|| err(format!("`{name}`: missing kind")))?;
            let extent: usize = toks
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(format!("`{name}`: missing or bad extent")))?;
            let mut vals = Vec::with_capacity(extent);
            for _ in 0..extent {
                vals.push(toks.next().ok_or_else(|| err(format!("`{name}`: expected {extent} values")))?);
            }
            let bad = |v: &str| err(format!("`{name}`: bad {kind} value `{v}`"));
            let data = match kind {
                "int" => Data::I32(vals.iter().map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_, _>>()?),
                "long" => Data::I64(vals.iter().map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_, _>>()?),
                "float" => Data::F32(vals.iter().map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_, _>>()?),
                other => return Err(err(format!("`{name}`: unknown kind `{other}`"))),
            };
            ds.set(name, data);
        }
        Ok(ds)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, d) in &self.buffers {
            let (kind, vals): (&str, Vec<String>) = match d {
                Data::I32(v) => ("int", v.iter().map(|x| x.to_string()).collect()),
                Data::I64(v) => ("long", v.iter().map(|x| x.to_string()).collect()),
                Data::F32(v) => ("float", v.iter().map(|x| format!("{x:?}")).collect()),
                Data::Ptr(_) => continue,
            };
            let _ = writeln!(s, "{name} {kind} {}", vals.len());
            for chunk in vals.chunks(16) {
                let _ = writeln!(s, "{}", chunk.join(" "));
            }
        }
        s
    }
}
