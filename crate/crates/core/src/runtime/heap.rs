//! Runtime values, objects and the heap.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use sha2::{Digest, Sha256};

use crate::ownership::{Loc, OwnerMap, RtCtx};

/// Reason a transaction aborted or a thread stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FailCode {
    PreFail,
    PostFail,
    Require,
    Null,
    DivZero,
}

impl FailCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FailCode::PreFail => "R-PRE-FAIL",
            FailCode::PostFail => "R-POST-FAIL",
            FailCode::Require => "R-REQUIRE",
            FailCode::Null => "R-NULL",
            FailCode::DivZero => "R-DIV-ZERO",
        }
    }

    pub fn message(self) -> &'static str {
        match self {
            FailCode::PreFail => "Validity fails pre-check",
            FailCode::PostFail => "Validity fails post-check",
            FailCode::Require => "requirement failed",
            FailCode::Null => "null dereference",
            FailCode::DivZero => "division by zero",
        }
    }

    pub fn is_validity(self) -> bool {
        matches!(self, FailCode::PreFail | FailCode::PostFail)
    }
}

impl fmt::Display for FailCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Val {
    Int(BigInt),
    Bool(bool),
    Null,
    Ref(Loc),
    Unit,
    /// The result of an aborted transaction or constructor. Using it in any
    /// operation fails again with the same code.
    Fail(FailCode),
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Int(i) => write!(f, "{i}"),
            Val::Bool(b) => write!(f, "{b}"),
            Val::Null => f.write_str("null"),
            Val::Ref(l) => write!(f, "l{l}"),
            Val::Unit => f.write_str("unit"),
            Val::Fail(c) => write!(f, "fail({c})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObjectRec<'p> {
    pub class: &'p str,
    /// Context arguments of the creation type; the first is the owner.
    pub ctx_args: Vec<RtCtx>,
    /// Field values in layout order (superclass fields first).
    pub fields: Vec<Val>,
}

impl ObjectRec<'_> {
    pub fn owner(&self) -> RtCtx {
        self.ctx_args.first().copied().unwrap_or(RtCtx::Top)
    }
}

/// Locations are dense: `0..len`. Allocation appends; an aborted
/// allocation is always the most recent one and is popped.
#[derive(Debug, Clone, Default)]
pub struct Heap<'p> {
    pub objects: Vec<ObjectRec<'p>>,
}

impl<'p> Heap<'p> {
    pub fn get(&self, l: Loc) -> Option<&ObjectRec<'p>> {
        self.objects.get(l)
    }

    pub fn get_mut(&mut self, l: Loc) -> Option<&mut ObjectRec<'p>> {
        self.objects.get_mut(l)
    }

    pub fn alloc(&mut self, o: ObjectRec<'p>) -> Loc {
        self.objects.push(o);
        self.objects.len() - 1
    }

    pub fn pop(&mut self, l: Loc) {
        debug_assert_eq!(l + 1, self.objects.len(), "only the newest object can be freed");
        self.objects.pop();
    }
}

impl OwnerMap for Heap<'_> {
    fn len(&self) -> usize {
        self.objects.len()
    }
    fn owner(&self, l: Loc) -> RtCtx {
        self.objects[l].owner()
    }
}

/// Canonical text of a heap and valid set, as hashed by [`state_hash`].
pub fn canonical_state(heap: &Heap, names: &dyn Fn(&str) -> Vec<String>, valid: &BTreeSet<Loc>) -> String {
    let mut s = String::new();
    for (i, o) in heap.objects.iter().enumerate() {
        s.push_str(&format!("l{i}={}{{", o.class));
        let names = names(o.class);
        for (k, v) in o.fields.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let n = names.get(k).map(String::as_str).unwrap_or("?");
            s.push_str(&format!("{n}={v}"));
        }
        s.push_str("};");
    }
    s.push_str("|valid=");
    let idx: Vec<String> = valid.iter().map(|l| l.to_string()).collect();
    s.push_str(&idx.join(","));
    s
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_shape() {
        let mut h = Heap::default();
        let a = h.alloc(ObjectRec {
            class: "Account",
            ctx_args: vec![RtCtx::Top],
            fields: vec![Val::Int(5.into())],
        });
        h.alloc(ObjectRec {
            class: "Customer",
            ctx_args: vec![RtCtx::Top],
            fields: vec![Val::Ref(a), Val::Null, Val::Bool(true)],
        });
        let names = |c: &str| -> Vec<String> {
            match c {
                "Account" => vec!["amount".into()],
                _ => vec!["a".into(), "b".into(), "ok".into()],
            }
        };
        let text = canonical_state(&h, &names, &BTreeSet::from([1, 0]));
        assert_eq!(
            text,
            "l0=Account{amount=5};l1=Customer{a=l0,b=null,ok=true};|valid=0,1"
        );
        assert_eq!(sha256_hex("").len(), 64);
    }
}
