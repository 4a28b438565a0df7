use std::collections::HashMap;

use super::value::{BufId, Value};
use crate::lang::{AtomicOp, ScalarType, Type};

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    I32(Vec<i32>),
    I64(Vec<i64>),
    F32(Vec<f32>),
    Ptr(Vec<Value>),
}

impl Data {
    fn zeroed(elem: Type, n: usize) -> Data {
        match elem {
            Type::Scalar(ScalarType::Int) => Data::I32(vec![0; n]),
            Type::Scalar(ScalarType::Long) => Data::I64(vec![0; n]),
            Type::Scalar(ScalarType::Float) => Data::F32(vec![0.0; n]),
            Type::Ptr(_) => Data::Ptr(vec![Value::Null; n]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Data::I32(v) => v.len(),
            Data::I64(v) => v.len(),
            Data::F32(v) => v.len(),
            Data::Ptr(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Buffer {
    pub name: String,
    pub elem: Type,
    pub data: Data,
    /// Fence checking: block uid of the last unpublished writer, 0 if
    /// published. Empty when checking is off.
    owner: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MemError {
    OutOfBounds { buf: String, index: i64, extent: usize },
    Type { buf: String, message: &'static str },
    Unpublished { buf: String, index: usize, writer: u32 },
    BadHandle,
}

impl std::fmt::Display for MemError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MemError::OutOfBounds { buf, index, extent } => {
                write!(f, "out-of-bounds access {buf}[{index}] (extent {extent})")
            }
            MemError::Type { buf, message } => write!(f, "{message} on buffer {buf}"),
            MemError::Unpublished { buf, index, writer } => {
                write!(f, "read of unpublished data {buf}[{index}] written by block #{writer}")
            }
            MemError::BadHandle => f.write_str("access through a null buffer handle"),
        }
    }
}

/// Address of one element, for fence bookkeeping.
pub type Cell = (BufId, u32);

#[derive(Debug, Clone, Default)]
pub struct Memory {
    bufs: Vec<Buffer>,
    by_name: HashMap<String, BufId>,
    global_count: usize,
    pub fence_check: bool,
}

impl Memory {
    pub fn new(fence_check: bool) -> Self {
        Memory {
            fence_check,
            ..Default::default()
        }
    }

    /// Global buffers must all be declared before any shared allocation.
    pub fn declare_global(&mut self, name: &str, elem: Type, extent: usize) -> BufId {
        debug_assert_eq!(self.global_count, self.bufs.len());
        let id = self.bufs.len() as BufId;
        self.bufs.push(self.make(name, elem, extent));
        self.by_name.insert(name.to_string(), id);
        self.global_count += 1;
        id
    }

    fn make(&self, name: &str, elem: Type, extent: usize) -> Buffer {
        Buffer {
            name: name.to_string(),
            elem,
            data: Data::zeroed(elem, extent),
            owner: if self.fence_check { vec![0; extent] } else { Vec::new() },
        }
    }

    pub fn lookup(&self, name: &str) -> Option<BufId> {
        self.by_name.get(name).copied()
    }

    pub fn buffer(&self, id: BufId) -> &Buffer {
        &self.bufs[id as usize]
    }

    pub fn globals(&self) -> &[Buffer] {
        &self.bufs[..self.global_count]
    }

    pub fn set_data(&mut self, id: BufId, data: Data) -> Result<(), MemError> {
        let b = &mut self.bufs[id as usize];
        if std::mem::discriminant(&b.data) != std::mem::discriminant(&data) {
            return Err(MemError::Type {
                buf: b.name.clone(),
                message: "initializer kind mismatch",
            });
        }
        if self.fence_check {
            b.owner = vec![0; data.len()];
        }
        b.data = data;
        Ok(())
    }

    /// Reallocate a buffer, zero-filled.
    pub fn reset(&mut self, id: BufId, extent: usize) {
        let b = &self.bufs[id as usize];
        let fresh = self.make(&b.name.clone(), b.elem, extent);
        self.bufs[id as usize] = fresh;
    }

    pub fn alloc_shared(&mut self, name: &str, elem: ScalarType, extent: usize) -> BufId {
        let id = self.bufs.len() as BufId;
        let mut b = self.make(name, Type::Scalar(elem), extent);
        // Shared memory is block-private; fences do not apply to it.
        b.owner.clear();
        self.bufs.push(b);
        id
    }

    pub fn shared_mark(&self) -> usize {
        self.bufs.len()
    }

    pub fn free_shared(&mut self, mark: usize) {
        self.bufs.truncate(mark.max(self.global_count));
    }

    fn slot(&self, id: BufId, index: i64) -> Result<usize, MemError> {
        let b = self.bufs.get(id as usize).ok_or(MemError::BadHandle)?;
        let n = b.data.len();
        if index < 0 || index as usize >= n {
            return Err(MemError::OutOfBounds {
                buf: b.name.clone(),
                index,
                extent: n,
            });
        }
        Ok(index as usize)
    }

    /// `reader` is the block uid for fence checking (0 for the host).
    pub fn load(&self, id: BufId, index: i64, reader: u32) -> Result<Value, MemError> {
        let i = self.slot(id, index)?;
        let b = &self.bufs[id as usize];
        if let Some(&w) = b.owner.get(i) {
            if w != 0 && w != reader {
                return Err(MemError::Unpublished {
                    buf: b.name.clone(),
                    index: i,
                    writer: w,
                });
            }
        }
        Ok(match &b.data {
            Data::I32(v) => Value::I32(v[i]),
            Data::I64(v) => Value::I64(v[i]),
            Data::F32(v) => Value::F32(v[i]),
            Data::Ptr(v) => v[i],
        })
    }

    /// Plain store. Returns whether the cell is now an unpublished write that
    /// the caller must track.
    pub fn store(&mut self, id: BufId, index: i64, v: Value, writer: u32) -> Result<bool, MemError> {
        let i = self.slot(id, index)?;
        let b = &mut self.bufs[id as usize];
        let v = v.coerce(b.elem).map_err(|_| MemError::Type {
            buf: b.name.clone(),
            message: "store of incompatible value",
        })?;
        match (&mut b.data, v) {
            (Data::I32(d), Value::I32(x)) => d[i] = x,
            (Data::I64(d), Value::I64(x)) => d[i] = x,
            (Data::F32(d), Value::F32(x)) => d[i] = x,
            (Data::Ptr(d), x) => d[i] = x,
            _ => unreachable!("coerced to element type"),
        }
        if let Some(o) = b.owner.get_mut(i) {
            *o = writer;
            return Ok(writer != 0);
        }
        Ok(false)
    }

    /// Indivisible read-modify-write. Atomic results are always published.
    pub fn atomic(&mut self, id: BufId, index: i64, op: AtomicOp, operands: &[Value]) -> Result<Value, MemError> {
        let i = self.slot(id, index)?;
        let b = &mut self.bufs[id as usize];
        let name = &b.name;
        let ty_err = |message| MemError::Type {
            buf: name.clone(),
            message,
        };
        let int = |v: Value| v.as_i64().map_err(|_| ty_err("atomic operand must be a number"));
        let old = match (&mut b.data, op) {
            (Data::I32(d), AtomicOp::Add) => {
                let old = d[i];
                d[i] = old.wrapping_add(int(operands[0])? as i32);
                Value::I32(old)
            }
            (Data::I64(d), AtomicOp::Add | AtomicOp::Add64) => {
                let old = d[i];
                d[i] = old.wrapping_add(int(operands[0])?);
                Value::I64(old)
            }
            (Data::F32(d), AtomicOp::Add) => {
                let old = d[i];
                let x = operands[0]
                    .cast(ScalarType::Float)
                    .map_err(|_| ty_err("atomic operand must be a number"))?;
                if let Value::F32(x) = x {
                    d[i] = old + x;
                }
                Value::F32(old)
            }
            (Data::I32(d), AtomicOp::Max) => {
                let old = d[i];
                d[i] = old.max(int(operands[0])? as i32);
                Value::I32(old)
            }
            (Data::I64(d), AtomicOp::Max) => {
                let old = d[i];
                d[i] = old.max(int(operands[0])?);
                Value::I64(old)
            }
            (Data::I32(d), AtomicOp::Cas) => {
                let old = d[i];
                if old == int(operands[0])? as i32 {
                    d[i] = int(operands[1])? as i32;
                }
                Value::I32(old)
            }
            (Data::I64(d), AtomicOp::Cas) => {
                let old = d[i];
                if old == int(operands[0])? {
                    d[i] = int(operands[1])?;
                }
                Value::I64(old)
            }
            (Data::I32(_), AtomicOp::Add64) => return Err(ty_err("atomicAdd64 needs a long buffer")),
            _ => return Err(ty_err("unsupported atomic for element kind")),
        };
        if let Some(o) = b.owner.get_mut(i) {
            *o = 0;
        }
        Ok(old)
    }

    /// Publish the given cells if `writer` still owns them.
    pub fn publish(&mut self, cells: &[Cell], writer: u32) {
        for &(id, i) in cells {
            if let Some(b) = self.bufs.get_mut(id as usize) {
                if let Some(o) = b.owner.get_mut(i as usize) {
                    if *o == writer {
                        *o = 0;
                    }
                }
            }
        }
    }
}
