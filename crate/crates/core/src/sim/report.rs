use std::fmt::Write;

use sha2::{Digest, Sha256};

use super::memory::Data;
use super::value::Value;
use crate::lang::Phase;

/// One device launch request as issued by a thread.
#[derive(Debug, Clone, PartialEq)]
pub struct LaunchRecord {
    pub site: String,
    pub callee: String,
    pub grid: [u32; 3],
    pub block: [u32; 3],
    pub args: Vec<Value>,
    /// Sequence number of the issuing grid.
    pub parent_grid: u64,
    /// Linear index of the issuing block and thread.
    pub parent_block: u32,
    pub parent_thread: u32,
    pub probe: Option<Value>,
}

impl LaunchRecord {
    pub fn grid_size(&self) -> u64 {
        self.grid.iter().map(|&d| d as u64).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferDump {
    pub name: String,
    pub data: Data,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub buffers: Vec<BufferDump>,
    /// Device-initiated, non-empty launches.
    pub num_launches: u64,
    pub host_launches: u64,
    pub blocks_scheduled: u64,
    pub instructions: u64,
    pub makespan: u64,
    pub max_pending_depth: usize,
    /// Busy time attributed to each phase, summed over blocks.
    pub phase_time: [u64; 5],
    /// Total SM-slot occupancy (equals the phase sum).
    pub busy_time: u64,
    pub launch_log: Vec<LaunchRecord>,
}

fn hash_data(h: &mut Sha256, d: &Data) {
    match d {
        Data::I32(v) => {
            h.update(b"i32");
            v.iter().for_each(|x| h.update(x.to_le_bytes()));
        }
        Data::I64(v) => {
            h.update(b"i64");
            v.iter().for_each(|x| h.update(x.to_le_bytes()));
        }
        Data::F32(v) => {
            h.update(b"f32");
            v.iter().for_each(|x| h.update(x.to_bits().to_le_bytes()));
        }
        Data::Ptr(v) => {
            h.update(b"ptr");
            for x in v {
                let code = match x {
                    Value::Buf(id) => *id as i64,
                    _ => -1,
                };
                h.update(code.to_le_bytes());
            }
        }
    }
}

/// Internal buffers (names starting with `_`) are generated by passes and
/// do not take part in program output.
pub fn is_output_buffer(name: &str) -> bool {
    !name.starts_with('_')
}

impl SimReport {
    pub fn buffer(&self, name: &str) -> Option<&Data> {
        self.buffers.iter().find(|b| b.name == name).map(|b| &b.data)
    }

    pub fn i32_buffer(&self, name: &str) -> Option<&[i32]> {
        match self.buffer(name)? {
            Data::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn i64_buffer(&self, name: &str) -> Option<&[i64]> {
        match self.buffer(name)? {
            Data::I64(v) => Some(v),
            _ => None,
        }
    }

    /// SHA-256 over every output buffer in declaration order.
    pub fn memory_digest(&self) -> String {
        let mut h = Sha256::new();
        for b in self.buffers.iter().filter(|b| is_output_buffer(&b.name)) {
            h.update(b.name.as_bytes());
            h.update([0]);
            hash_data(&mut h, &b.data);
        }
        hex::encode(h.finalize())
    }

    pub fn buffer_digest(d: &Data) -> String {
        let mut h = Sha256::new();
        hash_data(&mut h, d);
        hex::encode(&h.finalize()[..8])
    }

    pub fn phase(&self, p: Phase) -> u64 {
        self.phase_time[super::interp::phase_index(p)]
    }

    /// `key=value` lines, byte-stable for identical runs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "final_memory_digest={}", self.memory_digest());
        let _ = writeln!(s, "num_launches={}", self.num_launches);
        let _ = writeln!(s, "host_launches={}", self.host_launches);
        let _ = writeln!(s, "blocks_scheduled={}", self.blocks_scheduled);
        let _ = writeln!(s, "instructions={}", self.instructions);
        let _ = writeln!(s, "makespan={}", self.makespan);
        let _ = writeln!(s, "max_pending_depth={}", self.max_pending_depth);
        for p in Phase::ALL {
            let _ = writeln!(s, "t_{}={}", p.keyword(), self.phase(p));
        }
        let _ = writeln!(s, "busy_time={}", self.busy_time);
        for b in self.buffers.iter().filter(|b| is_output_buffer(&b.name)) {
            let _ = writeln!(
                s,
                "buffer.{}=len:{} sha:{} head:{}",
                b.name,
                b.data.len(),
                Self::buffer_digest(&b.data),
                head(&b.data, 8)
            );
        }
        s
    }
}

fn head(d: &Data, n: usize) -> String {
    let items: Vec<String> = match d {
        Data::I32(v) => v.iter().take(n).map(|x| x.to_string()).collect(),
        Data::I64(v) => v.iter().take(n).map(|x| x.to_string()).collect(),
        Data::F32(v) => v.iter().take(n).map(|x| format!("{x:?}")).collect(),
        Data::Ptr(v) => v
            .iter()
            .take(n)
            .map(|x| match x {
                Value::Buf(id) => format!("&{id}"),
                _ => "null".into(),
            })
            .collect(),
    };
    format!("[{}]", items.join(","))
}
