use crate::lang::{BinOp, ScalarType, Type, UnOp};

/// Index into [`super::memory::Memory`].
pub type BufId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    I32(i32),
    I64(i64),
    F32(f32),
    Buf(BufId),
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueError {
    DivisionByZero,
    NotANumber(&'static str),
    Pointer(&'static str),
}

impl Value {
    pub fn zero(ty: Type) -> Value {
        match ty {
            Type::Scalar(ScalarType::Int) => Value::I32(0),
            Type::Scalar(ScalarType::Long) => Value::I64(0),
            Type::Scalar(ScalarType::Float) => Value::F32(0.0),
            Type::Ptr(_) => Value::Null,
        }
    }

    pub fn truthy(self) -> Result<bool, ValueError> {
        Ok(match self {
            Value::I32(v) => v != 0,
            Value::I64(v) => v != 0,
            Value::F32(v) => v != 0.0,
            Value::Buf(_) => true,
            Value::Null => false,
        })
    }

    pub fn as_i64(self) -> Result<i64, ValueError> {
        match self {
            Value::I32(v) => Ok(v as i64),
            Value::I64(v) => Ok(v),
            Value::F32(v) => Ok(v as i64),
            _ => Err(ValueError::NotANumber("integer expected, found a buffer handle")),
        }
    }

    pub fn cast(self, to: ScalarType) -> Result<Value, ValueError> {
        let v = match (self, to) {
            (Value::Buf(_) | Value::Null, _) => return Err(ValueError::Pointer("cannot cast a buffer handle")),
            (Value::I32(v), ScalarType::Int) => Value::I32(v),
            (Value::I64(v), ScalarType::Int) => Value::I32(v as i32),
            (Value::F32(v), ScalarType::Int) => Value::I32(v as i32),
            (Value::I32(v), ScalarType::Long) => Value::I64(v as i64),
            (Value::I64(v), ScalarType::Long) => Value::I64(v),
            (Value::F32(v), ScalarType::Long) => Value::I64(v as i64),
            (Value::I32(v), ScalarType::Float) => Value::F32(v as f32),
            (Value::I64(v), ScalarType::Float) => Value::F32(v as f32),
            (Value::F32(v), ScalarType::Float) => Value::F32(v),
        };
        Ok(v)
    }

    /// Convert for storage into a slot of type `ty`.
    pub fn coerce(self, ty: Type) -> Result<Value, ValueError> {
        match ty {
            Type::Scalar(s) => self.cast(s),
            Type::Ptr(_) => match self {
                Value::Buf(_) | Value::Null => Ok(self),
                // `int* p = 0;` style null.
                Value::I32(0) | Value::I64(0) => Ok(Value::Null),
                _ => Err(ValueError::Pointer("number stored into a buffer handle")),
            },
        }
    }
}

enum Promoted {
    I32(i32, i32),
    I64(i64, i64),
    F32(f32, f32),
}

fn promote(a: Value, b: Value) -> Result<Promoted, ValueError> {
    Ok(match (a, b) {
        (Value::I32(x), Value::I32(y)) => Promoted::I32(x, y),
        (Value::F32(_), _) | (_, Value::F32(_)) => {
            Promoted::F32(a.cast(ScalarType::Float)?.as_f32(), b.cast(ScalarType::Float)?.as_f32())
        }
        _ => Promoted::I64(a.as_i64()?, b.as_i64()?),
    })
}

impl Value {
    fn as_f32(self) -> f32 {
        match self {
            Value::F32(v) => v,
            _ => unreachable!("promoted to float"),
        }
    }
}

fn bool_val(b: bool) -> Value {
    Value::I32(b as i32)
}

/// Arithmetic with C-like promotion and 32-bit wrapping. `&&`/`||` are
/// handled by the caller for short-circuiting.
pub fn binary(op: BinOp, a: Value, b: Value) -> Result<Value, ValueError> {
    if let (Value::Buf(_) | Value::Null, _) | (_, Value::Buf(_) | Value::Null) = (a, b) {
        return match op {
            BinOp::Eq => Ok(bool_val(a == b)),
            BinOp::Ne => Ok(bool_val(a != b)),
            _ => Err(ValueError::Pointer("arithmetic on a buffer handle")),
        };
    }
    use BinOp::*;
    let p = promote(a, b)?;
    Ok(match p {
        Promoted::I32(x, y) => match op {
            Add => Value::I32(x.wrapping_add(y)),
            Sub => Value::I32(x.wrapping_sub(y)),
            Mul => Value::I32(x.wrapping_mul(y)),
            Div => Value::I32(if y == 0 { return Err(ValueError::DivisionByZero) } else { x.wrapping_div(y) }),
            Rem => Value::I32(if y == 0 { return Err(ValueError::DivisionByZero) } else { x.wrapping_rem(y) }),
            Shl => Value::I32(x.wrapping_shl(y as u32)),
            Shr => Value::I32(x.wrapping_shr(y as u32)),
            BitAnd => Value::I32(x & y),
            BitOr => Value::I32(x | y),
            Lt => bool_val(x < y),
            Le => bool_val(x <= y),
            Gt => bool_val(x > y),
            Ge => bool_val(x >= y),
            Eq => bool_val(x == y),
            Ne => bool_val(x != y),
            And => bool_val(x != 0 && y != 0),
            Or => bool_val(x != 0 || y != 0),
        },
        Promoted::I64(x, y) => match op {
            Add => Value::I64(x.wrapping_add(y)),
            Sub => Value::I64(x.wrapping_sub(y)),
            Mul => Value::I64(x.wrapping_mul(y)),
            Div => Value::I64(if y == 0 { return Err(ValueError::DivisionByZero) } else { x.wrapping_div(y) }),
            Rem => Value::I64(if y == 0 { return Err(ValueError::DivisionByZero) } else { x.wrapping_rem(y) }),
            Shl => Value::I64(x.wrapping_shl(y as u32)),
            Shr => Value::I64(x.wrapping_shr(y as u32)),
            BitAnd => Value::I64(x & y),
            BitOr => Value::I64(x | y),
            Lt => bool_val(x < y),
            Le => bool_val(x <= y),
            Gt => bool_val(x > y),
            Ge => bool_val(x >= y),
            Eq => bool_val(x == y),
            Ne => bool_val(x != y),
            And => bool_val(x != 0 && y != 0),
            Or => bool_val(x != 0 || y != 0),
        },
        Promoted::F32(x, y) => match op {
            Add => Value::F32(x + y),
            Sub => Value::F32(x - y),
            Mul => Value::F32(x * y),
            Div => Value::F32(x / y),
            Rem => Value::F32(x % y),
            Shl | Shr | BitAnd | BitOr => return Err(ValueError::NotANumber("bitwise operator on a float")),
            Lt => bool_val(x < y),
            Le => bool_val(x <= y),
            Gt => bool_val(x > y),
            Ge => bool_val(x >= y),
            Eq => bool_val(x == y),
            Ne => bool_val(x != y),
            And => bool_val(x != 0.0 && y != 0.0),
            Or => bool_val(x != 0.0 || y != 0.0),
        },
    })
}

pub fn unary(op: UnOp, a: Value) -> Result<Value, ValueError> {
    Ok(match (op, a) {
        (UnOp::Not, v) => bool_val(!v.truthy()?),
        (UnOp::Neg, Value::I32(v)) => Value::I32(v.wrapping_neg()),
        (UnOp::Neg, Value::I64(v)) => Value::I64(v.wrapping_neg()),
        (UnOp::Neg, Value::F32(v)) => Value::F32(-v),
        (UnOp::Neg, _) => return Err(ValueError::Pointer("negating a buffer handle")),
    })
}

pub fn min_max(is_max: bool, a: Value, b: Value) -> Result<Value, ValueError> {
    let pick_b = match binary(BinOp::Lt, a, b)? {
        Value::I32(lt) => (lt != 0) == is_max,
        _ => unreachable!(),
    };
    let r = if pick_b { b } else { a };
    // Result carries the promoted type.
    Ok(match promote(a, b)? {
        Promoted::I32(..) => r,
        Promoted::I64(..) => Value::I64(r.as_i64()?),
        Promoted::F32(..) => r.cast(ScalarType::Float)?,
    })
}
