//! Tagged runtime values and the array heap.

use std::fmt;

use crate::error::ErrorKind;

/// Identity of a method inside a [`crate::bytecode::Program`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodId(pub u32);

impl MethodId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Handle to an integer array living in the [`Heap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArrayRef(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Nil,
    Array(ArrayRef),
    Method(MethodId),
}

impl Default for Value {
    fn default() -> Self {
        Value::Nil
    }
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "Int",
            Value::Bool(_) => "Bool",
            Value::Nil => "Nil",
            Value::Array(_) => "Array",
            Value::Method(_) => "Method",
        }
    }

    #[inline]
    pub fn as_int(self) -> Result<i64, ErrorKind> {
        match self {
            Value::Int(v) => Ok(v),
            other => Err(ErrorKind::Type {
                expected: "Int",
                found: other.type_name(),
            }),
        }
    }

    #[inline]
    pub fn as_array(self) -> Result<ArrayRef, ErrorKind> {
        match self {
            Value::Array(a) => Ok(a),
            other => Err(ErrorKind::Type {
                expected: "Array",
                found: other.type_name(),
            }),
        }
    }

    #[inline]
    pub fn as_method(self) -> Result<MethodId, ErrorKind> {
        match self {
            Value::Method(m) => Ok(m),
            other => Err(ErrorKind::Type {
                expected: "Method",
                found: other.type_name(),
            }),
        }
    }

    /// Branch condition: `Bool(true)` or a non-zero `Int`. Anything else is a
    /// type error.
    #[inline]
    pub fn truthy(self) -> Result<bool, ErrorKind> {
        match self {
            Value::Bool(b) => Ok(b),
            Value::Int(v) => Ok(v != 0),
            other => Err(ErrorKind::Type {
                expected: "Bool or Int",
                found: other.type_name(),
            }),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Nil => f.write_str("nil"),
            Value::Array(a) => write!(f, "array#{}", a.0),
            Value::Method(m) => write!(f, "method#{}", m.0),
        }
    }
}

/// Upper bound on a single allocation, in elements.
pub const MAX_ARRAY_LEN: i64 = 1 << 22;

/// Arrays live for the whole run; handles never dangle.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Heap {
    arrays: Vec<Vec<i64>>,
}

impl Heap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, len: i64) -> Result<ArrayRef, ErrorKind> {
        if len < 0 {
            return Err(ErrorKind::NegativeArraySize(len));
        }
        if len > MAX_ARRAY_LEN {
            return Err(ErrorKind::ArrayTooLarge(len));
        }
        let id = ArrayRef(self.arrays.len() as u32);
        self.arrays.push(vec![0; len as usize]);
        Ok(id)
    }

    #[inline]
    fn slot(&self, arr: ArrayRef, index: i64) -> Result<usize, ErrorKind> {
        let len = self.arrays[arr.0 as usize].len();
        if index < 1 || index > len as i64 {
            return Err(ErrorKind::IndexOutOfBounds { index, len });
        }
        Ok((index - 1) as usize)
    }

    /// 1-based read.
    #[inline]
    pub fn get(&self, arr: ArrayRef, index: i64) -> Result<i64, ErrorKind> {
        let i = self.slot(arr, index)?;
        Ok(self.arrays[arr.0 as usize][i])
    }

    /// 1-based write.
    #[inline]
    pub fn set(&mut self, arr: ArrayRef, index: i64, value: i64) -> Result<(), ErrorKind> {
        let i = self.slot(arr, index)?;
        self.arrays[arr.0 as usize][i] = value;
        Ok(())
    }

    #[inline]
    pub fn len(&self, arr: ArrayRef) -> usize {
        self.arrays[arr.0 as usize].len()
    }

    pub fn fill(&mut self, arr: ArrayRef, value: i64) {
        self.arrays[arr.0 as usize].fill(value);
    }

    pub fn clear(&mut self, arr: ArrayRef) {
        self.fill(arr, 0);
    }

    pub fn array(&self, arr: ArrayRef) -> &[i64] {
        &self.arrays[arr.0 as usize]
    }

    pub fn array_count(&self) -> usize {
        self.arrays.len()
    }

    pub fn snapshot(&self) -> Vec<Vec<i64>> {
        self.arrays.clone()
    }
}

/// Checked integer arithmetic shared by every tier.
pub mod arith {
    use crate::error::ErrorKind;

    #[inline]
    pub fn add(a: i64, b: i64) -> Result<i64, ErrorKind> {
        a.checked_add(b).ok_or(ErrorKind::Overflow)
    }

    #[inline]
    pub fn sub(a: i64, b: i64) -> Result<i64, ErrorKind> {
        a.checked_sub(b).ok_or(ErrorKind::Overflow)
    }

    #[inline]
    pub fn mul(a: i64, b: i64) -> Result<i64, ErrorKind> {
        a.checked_mul(b).ok_or(ErrorKind::Overflow)
    }

    /// Floored modulo: the result takes the sign of the divisor.
    #[inline]
    pub fn modulo(a: i64, b: i64) -> Result<i64, ErrorKind> {
        if b == 0 {
            return Err(ErrorKind::DivisionByZero);
        }
        let r = a.checked_rem(b).ok_or(ErrorKind::Overflow)?;
        if r != 0 && ((r < 0) != (b < 0)) {
            Ok(r + b)
        } else {
            Ok(r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floored_modulo() {
        assert_eq!(arith::modulo(84, 42), Ok(0));
        assert_eq!(arith::modulo(-1, 42), Ok(41));
        assert_eq!(arith::modulo(1, -42), Ok(-41));
        assert_eq!(arith::modulo(7, 0), Err(ErrorKind::DivisionByZero));
        assert_eq!(arith::modulo(i64::MIN, -1), Err(ErrorKind::Overflow));
    }

    #[test]
    fn heap_is_one_based() {
        let mut heap = Heap::new();
        let a = heap.alloc(3).unwrap();
        assert!(matches!(
            heap.get(a, 0),
            Err(ErrorKind::IndexOutOfBounds { index: 0, len: 3 })
        ));
        heap.set(a, 3, 9).unwrap();
        assert_eq!(heap.get(a, 3), Ok(9));
        assert!(heap.get(a, 4).is_err());
    }

    #[test]
    fn truthiness() {
        assert_eq!(Value::Int(0).truthy(), Ok(false));
        assert_eq!(Value::Int(-3).truthy(), Ok(true));
        assert_eq!(Value::Bool(true).truthy(), Ok(true));
        assert!(Value::Nil.truthy().is_err());
    }
}
